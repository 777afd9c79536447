//! Planted-partition generator for heterogeneous graphs.
//!
//! Every node type is cut into `communities` contiguous blocks and the node's
//! label is its block. Each relation draws its edges independently with
//! probability `p_intra` inside a community and `p_inter` across. A relation
//! whose source and destination types coincide is undirected: each unordered
//! pair is drawn once and stored in both directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{HeteroGraph, Relation};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Community one-hot plus Gaussian noise on informative types, pure
    /// noise elsewhere.
    #[default]
    Informative,
    /// Every row is all ones; only structure carries signal.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTypeSpec {
    pub name: String,
    pub count: usize,
    #[serde(default = "default_true")]
    pub informative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationSpec {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    pub p_intra: f64,
    pub p_inter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub node_types: Vec<NodeTypeSpec>,
    pub relations: Vec<RelationSpec>,
    pub communities: usize,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_noise")]
    pub feature_noise: f64,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

fn default_feature_dim() -> usize {
    8
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    /// Single node type split into `communities` blocks of `block` nodes,
    /// one undirected relation.
    pub fn planted_partition(
        communities: usize,
        block: usize,
        p_intra: f64,
        p_inter: f64,
        feature_mode: FeatureMode,
        seed: u64,
    ) -> Self {
        Self {
            node_types: vec![NodeTypeSpec {
                name: "node".into(),
                count: communities * block,
                informative: true,
            }],
            relations: vec![RelationSpec {
                name: "link".into(),
                src_type: 0,
                dst_type: 0,
                p_intra,
                p_inter,
            }],
            communities,
            feature_mode,
            feature_dim: default_feature_dim(),
            feature_noise: default_noise(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.communities < 2 {
            return Err(Error::invalid(format!(
                "communities = {} must be at least 2",
                self.communities
            )));
        }
        if self.node_types.is_empty() {
            return Err(Error::invalid("node_types must not be empty"));
        }
        for (r, rel) in self.relations.iter().enumerate() {
            for (field, p) in [("p_intra", rel.p_intra), ("p_inter", rel.p_inter)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid(format!(
                        "relations[{r}].{field} = {p} is outside [0, 1]"
                    )));
                }
            }
            for (field, t) in [("src_type", rel.src_type), ("dst_type", rel.dst_type)] {
                if t >= self.node_types.len() {
                    return Err(Error::invalid(format!(
                        "relations[{r}].{field} = {t} names no node type"
                    )));
                }
            }
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::invalid(
                "feature_noise must be finite and non-negative",
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        Ok(())
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<HeteroGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut node_types = Vec::new();
    let mut labels = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (t, ts) in spec.node_types.iter().enumerate() {
        let start = node_types.len();
        for local in 0..ts.count {
            node_types.push(t);
            labels.push(local * spec.communities / ts.count);
        }
        members.push((start..start + ts.count).collect());
    }
    let n = node_types.len();

    let mut relations = Vec::with_capacity(spec.relations.len());
    for rel in &spec.relations {
        let p = |a: usize, b: usize| {
            if labels[a] == labels[b] {
                rel.p_intra
            } else {
                rel.p_inter
            }
        };
        let mut edges = Vec::new();
        if rel.src_type == rel.dst_type {
            let nodes = &members[rel.src_type];
            for (i, &a) in nodes.iter().enumerate() {
                for &b in &nodes[i + 1..] {
                    if rng.random::<f64>() < p(a, b) {
                        edges.push((a, b));
                        edges.push((b, a));
                    }
                }
            }
        } else {
            for &s in &members[rel.src_type] {
                for &d in &members[rel.dst_type] {
                    if rng.random::<f64>() < p(s, d) {
                        edges.push((s, d));
                    }
                }
            }
        }
        relations.push(Relation {
            name: rel.name.clone(),
            src_type: rel.src_type,
            dst_type: rel.dst_type,
            edges,
        });
    }

    let dim = spec.feature_dim;
    let mut features = Matrix::zeros(n, dim);
    for i in 0..n {
        let row = features.row_mut(i);
        match spec.feature_mode {
            FeatureMode::Constant => row.iter_mut().for_each(|v| *v = 1.0),
            FeatureMode::Informative => {
                for v in row.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = spec.feature_noise * z;
                }
                if spec.node_types[node_types[i]].informative {
                    row[labels[i] % dim] += 1.0;
                }
            }
        }
    }

    HeteroGraph::new(
        spec.node_types.iter().map(|t| t.name.clone()).collect(),
        node_types,
        relations,
        features,
        Some(labels),
    )
}
