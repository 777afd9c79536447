//! Heterogeneous graph model and the dense matrices derived from it.
//!
//! Adjacency matrices use destination-row orientation: `A[i][j] = 1` means a
//! message flows from `j` to `i`, so `A·H` aggregates in-neighbours.

mod io;
mod split;
mod synth;

pub use io::{load_graph, parse_graph, save_graph, to_json};
pub use split::{
    make_link_splits, make_node_splits, make_splits, LinkEdge, LinkSet, LinkSplit, NodeSplit,
    SplitAssignment, SplitRatio, Task,
};
pub use synth::{gen_synthetic, FeatureMode, NodeTypeSpec, RelationSpec, SyntheticSpec};

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
    /// `(src, dst)` pairs sorted by `(dst, src)`.
    pub edges: Vec<(usize, usize)>,
}

impl Relation {
    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn destinations(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }
}

/// Typed nodes, typed edges and one shared feature matrix. Immutable once
/// built; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    type_names: Vec<String>,
    node_types: Vec<usize>,
    relations: Vec<Relation>,
    features: Matrix,
    labels: Option<Vec<usize>>,
}

impl HeteroGraph {
    pub fn new(
        type_names: Vec<String>,
        node_types: Vec<usize>,
        mut relations: Vec<Relation>,
        features: Matrix,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = node_types.len();
        for (i, &t) in node_types.iter().enumerate() {
            if t >= type_names.len() {
                return Err(Error::format(
                    format!("nodes[{i}].type"),
                    format!("type {t} out of range ({} node types)", type_names.len()),
                ));
            }
        }
        if features.rows() != n {
            return Err(Error::format(
                "features",
                format!("{} rows for {n} nodes", features.rows()),
            ));
        }
        if !features.is_finite() {
            return Err(Error::format("features", "non-finite feature value"));
        }
        for (r, rel) in relations.iter_mut().enumerate() {
            for (field, t) in [("src_type", rel.src_type), ("dst_type", rel.dst_type)] {
                if t >= type_names.len() {
                    return Err(Error::format(
                        format!("relations[{r}].{field}"),
                        format!("type {t} out of range"),
                    ));
                }
            }
            for (k, &(s, d)) in rel.edges.iter().enumerate() {
                if s >= n || d >= n {
                    return Err(Error::format(
                        format!("relations[{r}].edges[{k}]"),
                        format!("edge ({s}, {d}) references a node index >= {n}"),
                    ));
                }
                if node_types[s] != rel.src_type || node_types[d] != rel.dst_type {
                    return Err(Error::format(
                        format!("relations[{r}].edges[{k}]"),
                        format!("edge ({s}, {d}) does not match the relation's node types"),
                    ));
                }
            }
            rel.edges.sort_by_key(|&(s, d)| (d, s));
            if let Some(w) = rel.edges.windows(2).find(|w| w[0] == w[1]) {
                return Err(Error::format(
                    format!("relations[{r}].edges"),
                    format!("duplicate edge ({}, {})", w[0].0, w[0].1),
                ));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::format(
                    "labels",
                    format!("{} labels for {n} nodes", labels.len()),
                ));
            }
        }
        Ok(Self {
            type_names,
            node_types,
            relations,
            features,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_count(&self) -> usize {
        self.type_names.len()
    }

    pub fn node_types(&self) -> &[usize] {
        &self.node_types
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// `1 + max label`, or 0 for an unlabeled graph.
    pub fn label_count(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn edge_count(&self) -> usize {
        self.relations.iter().map(|r| r.edges.len()).sum()
    }

    /// Node indices of each type, in ascending order.
    pub fn nodes_by_type(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.type_names.len()];
        for (i, &t) in self.node_types.iter().enumerate() {
            out[t].push(i);
        }
        out
    }

    /// Dense `N×N` adjacency of one relation, destination rows.
    pub fn relation_adjacency(&self, r: usize) -> Result<Matrix> {
        let rel = self
            .relations
            .get(r)
            .ok_or_else(|| Error::invalid(format!("unknown relation {r}")))?;
        let n = self.node_count();
        let mut a = Matrix::zeros(n, n);
        for &(s, d) in &rel.edges {
            a[(d, s)] = 1.0;
        }
        Ok(a)
    }

    pub fn relation_adjacencies(&self) -> Vec<Matrix> {
        (0..self.relations.len())
            .map(|r| self.relation_adjacency(r).expect("relation in range"))
            .collect()
    }

    /// Symmetric binary union of all relations with a zero diagonal.
    pub fn homogenize(&self) -> Matrix {
        let n = self.node_count();
        let mut a = Matrix::zeros(n, n);
        for rel in &self.relations {
            for &(s, d) in &rel.edges {
                if s != d {
                    a[(s, d)] = 1.0;
                    a[(d, s)] = 1.0;
                }
            }
        }
        a
    }

    /// Copy with one extra self-loop relation per node type, named
    /// `self:<type>`.
    pub fn with_self_relations(&self) -> HeteroGraph {
        let mut relations = self.relations.clone();
        for (t, idx) in self.nodes_by_type().into_iter().enumerate() {
            relations.push(Relation {
                name: format!("self:{}", self.type_names[t]),
                src_type: t,
                dst_type: t,
                edges: idx.into_iter().map(|i| (i, i)).collect(),
            });
        }
        HeteroGraph::new(
            self.type_names.clone(),
            self.node_types.clone(),
            relations,
            self.features.clone(),
            self.labels.clone(),
        )
        .expect("self relations preserve validity")
    }

    /// Copy keeping only the listed edges, as `(relation, src, dst)`.
    pub fn with_edges(&self, keep: &[LinkEdge]) -> Result<HeteroGraph> {
        let mut relations: Vec<Relation> = self
            .relations
            .iter()
            .map(|r| Relation {
                edges: Vec::new(),
                ..r.clone()
            })
            .collect();
        for e in keep {
            relations
                .get_mut(e.relation)
                .ok_or_else(|| Error::invalid(format!("unknown relation {}", e.relation)))?
                .edges
                .push((e.src, e.dst));
        }
        HeteroGraph::new(
            self.type_names.clone(),
            self.node_types.clone(),
            relations,
            self.features.clone(),
            self.labels.clone(),
        )
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<HeteroGraph> {
        let n = self.node_count();
        let mut seen = HashSet::with_capacity(n);
        if perm.len() != n || !perm.iter().all(|&p| p < n && seen.insert(p)) {
            return Err(Error::invalid("not a permutation of the node set"));
        }
        let mut node_types = vec![0; n];
        let mut features = Matrix::zeros(n, self.features.cols());
        for i in 0..n {
            node_types[perm[i]] = self.node_types[i];
            features
                .row_mut(perm[i])
                .copy_from_slice(self.features.row(i));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0; n];
            for i in 0..n {
                out[perm[i]] = l[i];
            }
            out
        });
        let relations = self
            .relations
            .iter()
            .map(|r| Relation {
                edges: r.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect(),
                ..r.clone()
            })
            .collect();
        HeteroGraph::new(
            self.type_names.clone(),
            node_types,
            relations,
            features,
            labels,
        )
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
pub fn normalized_adjacency_with_self_loops(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::invalid("adjacency must be square"));
    }
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[(i, i)] += 1.0;
    }
    let inv_sqrt: Vec<f64> = tilde.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        tilde[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn single_type(n: usize, rels: Vec<Vec<(usize, usize)>>) -> HeteroGraph {
        let relations = rels
            .into_iter()
            .enumerate()
            .map(|(i, edges)| Relation {
                name: format!("r{i}"),
                src_type: 0,
                dst_type: 0,
                edges,
            })
            .collect();
        HeteroGraph::new(
            vec!["v".into()],
            vec![0; n],
            relations,
            Matrix::zeros(n, 1),
            None,
        )
        .unwrap()
    }

    #[test]
    fn relation_adjacency_examples() {
        let g = single_type(2, vec![vec![(0, 1)], vec![]]);
        let a = g.relation_adjacency(0).unwrap();
        assert_eq!(a.data().iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(a[(1, 0)], 1.0);
        assert_eq!(g.relation_adjacency(1).unwrap(), Matrix::zeros(2, 2));
        assert!(matches!(
            g.relation_adjacency(2),
            Err(Error::InvalidInput(_))
        ));

        let g = single_type(3, vec![vec![(0, 1), (1, 2)]]);
        assert_eq!(
            g.relation_adjacency(0).unwrap().row_sums(),
            vec![0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn homogenize_examples() {
        let g = single_type(2, vec![vec![(0, 1)]]);
        let a = g.homogenize();
        assert_eq!(a, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));

        let g = single_type(2, vec![vec![(0, 1)], vec![(0, 1)]]);
        assert_eq!(g.homogenize()[(0, 1)], 1.0);

        let g = single_type(3, vec![vec![(1, 1)]]);
        assert_eq!(g.homogenize(), Matrix::zeros(3, 3));
    }

    #[test]
    fn normalized_adjacency_examples() {
        let one = normalized_adjacency_with_self_loops(&Matrix::zeros(1, 1)).unwrap();
        assert_eq!(one.data(), &[1.0]);

        let k2 = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let n = normalized_adjacency_with_self_loops(&k2).unwrap();
        assert!(n.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));

        let p3 = single_type(3, vec![vec![(0, 1), (1, 2)]]).homogenize();
        let n = normalized_adjacency_with_self_loops(&p3).unwrap();
        assert!((n[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((n[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((n[(0, 1)] - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!(n.is_symmetric(0.0));
    }

    #[test]
    fn construction_rejects_bad_graphs() {
        let rel = |edges| Relation {
            name: "r".into(),
            src_type: 0,
            dst_type: 0,
            edges,
        };
        let bad_index = HeteroGraph::new(
            vec!["v".into()],
            vec![0; 2],
            vec![rel(vec![(0, 2)])],
            Matrix::zeros(2, 1),
            None,
        );
        assert!(matches!(bad_index, Err(Error::Format { .. })));
        let dup = HeteroGraph::new(
            vec!["v".into()],
            vec![0; 2],
            vec![rel(vec![(0, 1), (0, 1)])],
            Matrix::zeros(2, 1),
            None,
        );
        assert!(matches!(dup, Err(Error::Format { .. })));
        let rows = HeteroGraph::new(
            vec!["v".into()],
            vec![0; 2],
            vec![],
            Matrix::zeros(3, 1),
            None,
        );
        assert!(rows.is_err());
    }

    #[test]
    fn permutation_round_trip() {
        let g = single_type(3, vec![vec![(0, 1), (1, 2)]]);
        let p = g.permuted(&[2, 0, 1]).unwrap();
        // Sorted by destination: (0 -> 1) then (2 -> 0) becomes (2 -> 0), (0 -> 1).
        assert_eq!(p.relations()[0].edges, vec![(2, 0), (0, 1)]);
        let back = p.permuted(&[1, 2, 0]).unwrap();
        assert_eq!(back, g);
        assert!(g.permuted(&[0, 0, 1]).is_err());
    }
}
