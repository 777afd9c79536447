//! Graph transformer network: soft meta-path adjacencies followed by a
//! degree-normalised graph convolution.
//!
//! Each channel holds a `steps × (R+1)` table of selection logits; column
//! `R` selects the identity. Step `i` mixes the relation adjacencies with
//! `softmax(row i)`, the mixtures are multiplied with step 1 applied first
//! (`M_l ⋯ M_1`), and the product is row-normalised. Channels share the
//! convolution weight and are concatenated, then projected back to `F'`.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{normalized_adjacency_with_self_loops, HeteroGraph};
use crate::nn::{layer_input, Activation, GraphContext, Positional};
use crate::numcore::{glorot, Bound, Matrix, ParamId, ParamStore, Tape, Var};

/// One factor of a meta-path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaStep {
    Relation(usize),
    Identity,
}

/// `A_{t_l} ⋯ A_{t_1}` for `path = [t_1, …, t_l]`.
pub fn metapath_adjacency(adjacency: &[Matrix], path: &[MetaStep]) -> Result<Matrix> {
    let n = adjacency
        .first()
        .map(|a| a.rows())
        .ok_or_else(|| Error::invalid("meta-path over a graph without relations"))?;
    if path.is_empty() {
        return Err(Error::invalid("meta-path must have at least one step"));
    }
    let mut acc = Matrix::identity(n);
    for step in path {
        match *step {
            MetaStep::Identity => {}
            MetaStep::Relation(r) => {
                let a = adjacency
                    .get(r)
                    .ok_or_else(|| Error::invalid(format!("unknown relation {r} in meta-path")))?;
                acc = a.matmul(&acc)?;
            }
        }
    }
    Ok(acc)
}

/// Records the soft adjacency for one channel. `selection` is
/// `steps × mats.len()`; `mats` ends with the identity.
fn soft_adjacency_var(tape: &mut Tape, selection: Var, mats: &Rc<Vec<Matrix>>) -> Var {
    let steps = tape.value(selection).rows();
    let probs = tape.softmax_rows(selection);
    let mut product: Option<Var> = None;
    for i in 0..steps {
        let w = tape.slice_rows(probs, i, i + 1);
        let mix = tape.weighted_sum(w, mats.clone());
        product = Some(match product {
            None => mix,
            Some(p) => tape.matmul(mix, p),
        });
    }
    let product = product.expect("at least one step");
    let sums = tape.row_sum(product);
    let inv = tape.recip_or_zero(sums);
    tape.mul_col(product, inv)
}

/// `D^{-1} Π_i (Σ_t softmax(α^(i))_t A_t)` with `A_{R} = I`. `adjacency`
/// holds the `R` relation matrices only; `selection` is `steps × (R+1)`.
/// Zero rows of the product stay zero.
pub fn soft_adjacency(adjacency: &[Matrix], selection: &Matrix) -> Result<Matrix> {
    let n = adjacency
        .first()
        .map(|a| a.rows())
        .ok_or_else(|| Error::invalid("soft adjacency needs at least one relation"))?;
    if selection.rows() == 0 {
        return Err(Error::invalid("soft adjacency needs at least one step"));
    }
    if selection.cols() != adjacency.len() + 1 {
        return Err(Error::invalid(format!(
            "selection has {} columns for {} relations plus identity",
            selection.cols(),
            adjacency.len()
        )));
    }
    let mut mats = adjacency.to_vec();
    mats.push(Matrix::identity(n));
    let mats = Rc::new(mats);
    let mut tape = Tape::new();
    let sel = tape.constant(selection.clone());
    let out = soft_adjacency_var(&mut tape, sel, &mats);
    Ok(tape.value(out).clone())
}

/// `σ(D̃^{-1/2} (A+I) D̃^{-1/2} H W)` on the tape. Degrees are row sums of
/// `A + I`, so they are at least one for non-negative `A`.
fn gcn_var(tape: &mut Tape, a: Var, h: Var, w: Var, act: Activation) -> Var {
    let n = tape.value(a).rows();
    let eye = tape.constant(Matrix::identity(n));
    let tilde = tape.add(a, eye);
    let deg = tape.row_sum(tilde);
    let d = tape.powf(deg, -0.5);
    let left = tape.mul_col(tilde, d);
    let d_row = tape.transpose(d);
    let norm = tape.mul_row(left, d_row);
    let hw = tape.matmul(h, w);
    let z = tape.matmul(norm, hw);
    act.apply(tape, z)
}

pub fn gcn_forward(a: &Matrix, h: &Matrix, w: &Matrix, act: Activation) -> Result<Matrix> {
    if a.rows() != a.cols() || a.rows() != h.rows() || h.cols() != w.rows() {
        return Err(Error::invalid(format!(
            "GCN shapes do not fit: A {:?}, H {:?}, W {:?}",
            a.shape(),
            h.shape(),
            w.shape()
        )));
    }
    let norm = normalized_adjacency_with_self_loops(a)?;
    let z = norm.matmul(&h.matmul(w)?)?;
    Ok(z.map(|x| act.eval(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtnConfig {
    pub in_width: usize,
    pub out_width: usize,
    pub channels: usize,
    pub steps: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtnLayerParams {
    pub config: GtnConfig,
    /// Per channel, `steps × (R+1)` selection logits; last column is the
    /// identity.
    pub selection: Vec<ParamId>,
    /// Convolution weight shared by all channels, `F × F'`.
    pub weight: ParamId,
    /// `(channels·F') × F'`.
    pub proj: ParamId,
}

impl GtnLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: GtnConfig,
        relations: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.channels == 0 || config.steps == 0 {
            return Err(Error::invalid(
                "GTN needs at least one channel and one step",
            ));
        }
        // Equal logits: every step starts as the uniform mixture.
        let selection = (0..config.channels)
            .map(|c| {
                store.add(
                    format!("{prefix}.sel{c}"),
                    Matrix::zeros(config.steps, relations + 1),
                )
            })
            .collect();
        let weight = store.add(
            format!("{prefix}.w"),
            glorot(config.in_width, config.out_width, rng),
        );
        let proj = store.add(
            format!("{prefix}.proj"),
            glorot(config.channels * config.out_width, config.out_width, rng),
        );
        Ok(Self {
            config,
            selection,
            weight,
            proj,
        })
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, ctx: &GraphContext, h: Var) -> Result<Var> {
        let width = tape.value(h).cols();
        if width != self.config.in_width {
            return Err(Error::invalid(format!(
                "GTN expects input width {}, got {width}",
                self.config.in_width
            )));
        }
        let mats = ctx.adjacency_with_identity();
        for &s in &self.selection {
            if tape.value(p[s]).cols() != mats.len() {
                return Err(Error::invalid(format!(
                    "GTN built for {} relations, graph has {}",
                    tape.value(p[s]).cols() - 1,
                    mats.len() - 1
                )));
            }
        }
        let outs: Vec<Var> = self
            .selection
            .iter()
            .map(|&s| {
                let a = soft_adjacency_var(tape, p[s], &mats);
                gcn_var(tape, a, h, p[self.weight], self.config.activation)
            })
            .collect();
        let cat = tape.concat_cols(&outs);
        Ok(tape.matmul(cat, p[self.proj]))
    }
}

/// One GTN layer on plain matrices, with the positional encoding added to
/// the input when `lpe` is given.
pub fn gtn_forward(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &GtnLayerParams,
    lpe: Option<Positional<'_>>,
) -> Result<Matrix> {
    let ctx = GraphContext::new(g);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let input = layer_input(&mut tape, &p, h, lpe)?;
    let out = params.forward(&mut tape, &p, &ctx, input)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Relation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn adj(n: usize, edges: &[(usize, usize)]) -> Matrix {
        let mut a = Matrix::zeros(n, n);
        for &(s, d) in edges {
            a[(d, s)] = 1.0;
        }
        a
    }

    #[test]
    fn metapath_examples() {
        let a1 = adj(3, &[(0, 1)]);
        let a2 = adj(3, &[(1, 2)]);
        let list = [a1.clone(), a2];
        assert_eq!(
            metapath_adjacency(&list, &[MetaStep::Relation(0)]).unwrap(),
            a1
        );
        assert_eq!(
            metapath_adjacency(&list, &[MetaStep::Identity, MetaStep::Identity]).unwrap(),
            Matrix::identity(3)
        );
        let p = metapath_adjacency(&list, &[MetaStep::Relation(0), MetaStep::Relation(1)]).unwrap();
        let mut expected = Matrix::zeros(3, 3);
        expected[(2, 0)] = 1.0;
        assert_eq!(p, expected);
        assert!(metapath_adjacency(&list, &[MetaStep::Relation(5)]).is_err());
        assert!(metapath_adjacency(&list, &[]).is_err());
    }

    #[test]
    fn soft_adjacency_single_relation() {
        // Node 2 receives from 0 and 1, node 1 from 0, node 0 from nothing.
        let a = adj(3, &[(0, 1), (0, 2), (1, 2)]);
        // A huge logit gap puts all mass on the relation.
        let sel = Matrix::from_rows(&[vec![800.0, 0.0]]);
        let s = soft_adjacency(&[a], &sel).unwrap();
        let expected = Matrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.5, 0.0],
        ]);
        assert!(s.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn soft_adjacency_identity_only() {
        let a = adj(3, &[(0, 1)]);
        let sel = Matrix::from_rows(&[vec![-800.0, 0.0], vec![-800.0, 0.0]]);
        let s = soft_adjacency(&[a], &sel).unwrap();
        assert!(s.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn soft_adjacency_rows_stochastic_or_zero() {
        let a1 = adj(4, &[(0, 1), (1, 2), (3, 2)]);
        let a2 = adj(4, &[(2, 0), (2, 3)]);
        let sel = Matrix::from_rows(&[vec![0.3, -1.0, 0.2], vec![1.5, 0.4, -0.7]]);
        let s = soft_adjacency(&[a1, a2], &sel).unwrap();
        for i in 0..4 {
            let t: f64 = s.row(i).iter().sum();
            assert!(t == 0.0 || (t - 1.0).abs() < 1e-9);
        }
        assert!(soft_adjacency(&[Matrix::zeros(2, 2)], &Matrix::zeros(0, 2)).is_err());
        assert!(soft_adjacency(&[Matrix::zeros(2, 2)], &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn gcn_examples() {
        let h = Matrix::from_rows(&[vec![2.5, -1.0]]);
        let out = gcn_forward(
            &Matrix::zeros(1, 1),
            &h,
            &Matrix::identity(2),
            Activation::Identity,
        )
        .unwrap();
        assert!(out.max_abs_diff(&h) < 1e-15);

        let k2 = adj(2, &[(0, 1), (1, 0)]);
        let c = Matrix::from_rows(&[vec![0.7, 3.0], vec![0.7, 3.0]]);
        let out = gcn_forward(&k2, &c, &Matrix::identity(2), Activation::Identity).unwrap();
        assert!(out.max_abs_diff(&c) < 1e-15);

        assert!(gcn_forward(&k2, &c, &Matrix::identity(3), Activation::Identity).is_err());
    }

    #[test]
    fn gcn_tape_matches_plain() {
        let a = adj(4, &[(0, 1), (1, 2), (3, 2), (2, 0)]);
        let h = Matrix::from_fn(4, 3, |i, j| (i as f64 - j as f64) * 0.4);
        let w = Matrix::from_fn(3, 2, |i, j| 0.1 * (i + 2 * j) as f64 - 0.2);
        let plain = gcn_forward(&a, &h, &w, Activation::Elu).unwrap();
        let mut tape = Tape::new();
        let (av, hv, wv) = (tape.constant(a), tape.constant(h), tape.constant(w));
        let out = gcn_var(&mut tape, av, hv, wv, Activation::Elu);
        assert!(tape.value(out).max_abs_diff(&plain) < 1e-14);
    }

    #[test]
    fn identity_selection_reduces_to_gcn_on_identity() {
        let g = HeteroGraph::new(
            vec!["v".into()],
            vec![0; 3],
            vec![Relation {
                name: "r".into(),
                src_type: 0,
                dst_type: 0,
                edges: vec![(0, 1), (1, 2)],
            }],
            Matrix::zeros(3, 2),
            None,
        )
        .unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = GtnConfig {
            in_width: 2,
            out_width: 2,
            channels: 1,
            steps: 2,
            activation: Activation::Identity,
        };
        let p = GtnLayerParams::init(&mut store, "gtn", cfg, 1, &mut rng).unwrap();
        store
            .set(
                p.selection[0],
                Matrix::from_rows(&[vec![-800.0, 0.0], vec![-800.0, 0.0]]),
            )
            .unwrap();
        store.set(p.proj, Matrix::identity(2)).unwrap();
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 0.0]]);
        let out = gtn_forward(&g, &h, &store, &p, None).unwrap();
        let expected = gcn_forward(
            &Matrix::identity(3),
            &h,
            store.get(p.weight),
            Activation::Identity,
        )
        .unwrap();
        assert!(out.max_abs_diff(&expected) < 1e-14);
    }
}
