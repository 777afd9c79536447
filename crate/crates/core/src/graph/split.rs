//! Train/validation/test partitions over nodes or edges.
//!
//! Validation and test each get `floor(ratio · M)` entities; training keeps
//! the remainder. Link splits attach one uniformly drawn non-edge of the same
//! relation to every positive edge.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HeteroGraph;
use crate::error::{Error, Result};

const NEGATIVE_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Node,
    Link,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Node => "node",
            Task::Link => "link",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatio {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatio {
    /// `(train, val, test)` counts for `m` entities.
    pub fn counts(&self, m: usize) -> Result<(usize, usize, usize)> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p))
            || ((self.train + self.val + self.test) - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(format!(
                "split ratios {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        // The epsilon absorbs representation error, e.g. 0.15 * 20.
        let val = (self.val * m as f64 + 1e-9).floor() as usize;
        let test = (self.test * m as f64 + 1e-9).floor() as usize;
        Ok((m - val - test, val, test))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LinkEdge {
    pub relation: usize,
    pub src: usize,
    pub dst: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSet {
    pub positives: Vec<LinkEdge>,
    /// Same length as `positives`; entry `k` was drawn for `positives[k]`.
    pub negatives: Vec<(usize, usize)>,
}

impl LinkSet {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Positive pairs then negative pairs, with 1/0 labels.
    pub fn pairs_and_labels(&self) -> (Vec<(usize, usize)>, Vec<f64>) {
        let mut pairs: Vec<(usize, usize)> =
            self.positives.iter().map(|e| (e.src, e.dst)).collect();
        pairs.extend_from_slice(&self.negatives);
        let mut labels = vec![1.0; self.positives.len()];
        labels.resize(pairs.len(), 0.0);
        (pairs, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSplit {
    pub seed: u64,
    pub train: LinkSet,
    pub val: LinkSet,
    pub test: LinkSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitAssignment {
    Node(NodeSplit),
    Link(LinkSplit),
}

pub fn make_splits(
    g: &HeteroGraph,
    ratio: SplitRatio,
    seed: u64,
    task: Task,
) -> Result<SplitAssignment> {
    Ok(match task {
        Task::Node => SplitAssignment::Node(make_node_splits(g, ratio, seed)?),
        Task::Link => SplitAssignment::Link(make_link_splits(g, ratio, seed)?),
    })
}

fn partition<T: Clone>(
    items: &mut [T],
    ratio: SplitRatio,
    rng: &mut ChaCha8Rng,
) -> Result<[Vec<T>; 3]> {
    if items.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 entities to split, got {}",
            items.len()
        )));
    }
    let (_, val, test) = ratio.counts(items.len())?;
    items.shuffle(rng);
    let test_set = items[..test].to_vec();
    let val_set = items[test..test + val].to_vec();
    let train_set = items[test + val..].to_vec();
    Ok([train_set, val_set, test_set])
}

/// Partitions the labeled nodes.
pub fn make_node_splits(g: &HeteroGraph, ratio: SplitRatio, seed: u64) -> Result<NodeSplit> {
    if g.labels().is_none() {
        return Err(Error::invalid("node split requires a labeled graph"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<usize> = (0..g.node_count()).collect();
    let [mut train, mut val, mut test] = partition(&mut nodes, ratio, &mut rng)?;
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(NodeSplit {
        seed,
        train,
        val,
        test,
    })
}

/// Partitions the edges of every relation and draws matching negatives.
pub fn make_link_splits(g: &HeteroGraph, ratio: SplitRatio, seed: u64) -> Result<LinkSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<LinkEdge> = g
        .relations()
        .iter()
        .enumerate()
        .flat_map(|(r, rel)| {
            rel.edges.iter().map(move |&(src, dst)| LinkEdge {
                relation: r,
                src,
                dst,
            })
        })
        .collect();
    let [train, val, test] = partition(&mut edges, ratio, &mut rng)?;

    let present: Vec<HashSet<(usize, usize)>> = g
        .relations()
        .iter()
        .map(|r| r.edges.iter().copied().collect())
        .collect();
    let by_type = g.nodes_by_type();
    let mut sample_set = |positives: Vec<LinkEdge>| -> Result<LinkSet> {
        let mut negatives = Vec::with_capacity(positives.len());
        for e in &positives {
            let rel = &g.relations()[e.relation];
            let (srcs, dsts) = (&by_type[rel.src_type], &by_type[rel.dst_type]);
            let mut found = None;
            for _ in 0..NEGATIVE_ATTEMPTS {
                let s = srcs[rng.random_range(0..srcs.len())];
                let d = dsts[rng.random_range(0..dsts.len())];
                if s != d && !present[e.relation].contains(&(s, d)) {
                    found = Some((s, d));
                    break;
                }
            }
            negatives.push(found.ok_or_else(|| {
                Error::invalid(format!("relation {} has no non-edges to sample", rel.name))
            })?);
        }
        Ok(LinkSet {
            positives,
            negatives,
        })
    };
    Ok(LinkSplit {
        seed,
        train: sample_set(train)?,
        val: sample_set(val)?,
        test: sample_set(test)?,
    })
}
