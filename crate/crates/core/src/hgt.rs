//! Heterogeneous graph transformer layer.
//!
//! Queries, keys and values come from per-node-type projections. For an edge
//! `s → t` of relation `e` and head `i`:
//!
//! * logit `= Q_i(t) · W^ATT_{e,i} · K_i(s)ᵀ / √d_k`
//! * message `= V_i(s) · W^MSG_{e,i}`
//!
//! One softmax per target and head runs over all in-neighbours regardless of
//! relation. Heads are concatenated, mapped back to `F` by the target type's
//! output projection and added to the input.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::nn::{layer_input, rowdot, typed_linear, GraphContext, Positional};
use crate::numcore::{glorot, Bound, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HgtConfig {
    /// Input and output width `F`.
    pub width: usize,
    /// Attention width `d`.
    pub d: usize,
    pub heads: usize,
}

impl HgtConfig {
    pub fn head_width(&self) -> usize {
        self.d / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HgtLayerParams {
    pub config: HgtConfig,
    /// Per node type, `F × d`.
    pub query: Vec<ParamId>,
    pub key: Vec<ParamId>,
    pub value: Vec<ParamId>,
    /// `[relation][head]`, each `d_k × d_k`.
    pub att: Vec<Vec<ParamId>>,
    pub msg: Vec<Vec<ParamId>>,
    /// Per node type, `d × F`.
    pub out: Vec<ParamId>,
}

impl HgtLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: HgtConfig,
        node_types: usize,
        relations: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.heads == 0 || config.d == 0 || !config.d.is_multiple_of(config.heads) {
            return Err(Error::invalid(format!(
                "HGT heads {} must divide attention width {}",
                config.heads, config.d
            )));
        }
        let (f, d, dk) = (config.width, config.d, config.head_width());
        let per_type = |store: &mut ParamStore, tag: &str, r: usize, c: usize, rng: &mut _| {
            (0..node_types)
                .map(|t| store.add(format!("{prefix}.{tag}{t}"), glorot(r, c, rng)))
                .collect::<Vec<_>>()
        };
        let query = per_type(store, "q", f, d, rng);
        let key = per_type(store, "k", f, d, rng);
        let value = per_type(store, "v", f, d, rng);
        let per_rel = |tag: &str, store: &mut ParamStore, rng: &mut _| {
            (0..relations)
                .map(|r| {
                    (0..config.heads)
                        .map(|h| store.add(format!("{prefix}.{tag}{r}.{h}"), glorot(dk, dk, rng)))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        let att = per_rel("att", store, rng);
        let msg = per_rel("msg", store, rng);
        let out = per_type(store, "o", d, f, rng);
        Ok(Self {
            config,
            query,
            key,
            value,
            att,
            msg,
            out,
        })
    }

    fn check(&self, ctx: &GraphContext, width: usize) -> Result<()> {
        if width != self.config.width {
            return Err(Error::invalid(format!(
                "HGT expects input width {}, got {width}",
                self.config.width
            )));
        }
        if ctx.edges.len() != self.att.len() || ctx.by_type.len() != self.query.len() {
            return Err(Error::invalid(format!(
                "HGT built for {} node types and {} relations, graph has {} and {}",
                self.query.len(),
                self.att.len(),
                ctx.by_type.len(),
                ctx.edges.len()
            )));
        }
        Ok(())
    }

    fn vars(&self, p: &Bound, ids: &[ParamId]) -> Vec<Var> {
        ids.iter().map(|&i| p[i]).collect()
    }

    /// Per head: pooled attention over all edges (relations concatenated in
    /// order), the matching messages, and the concatenated destinations.
    fn edge_terms(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &GraphContext,
        h: Var,
    ) -> Vec<(Var, Var, Rc<[usize]>)> {
        let n = ctx.n;
        let q_w = self.vars(p, &self.query);
        let k_w = self.vars(p, &self.key);
        let v_w = self.vars(p, &self.value);
        let q = typed_linear(tape, h, &ctx.by_type, &q_w, n);
        let k = typed_linear(tape, h, &ctx.by_type, &k_w, n);
        let v = typed_linear(tape, h, &ctx.by_type, &v_w, n);
        let dk = self.config.head_width();
        let scale = 1.0 / (dk as f64).sqrt();

        let dst_all: Rc<[usize]> = ctx
            .edges
            .iter()
            .flat_map(|e| e.dst.iter().copied())
            .collect();
        let mut terms = Vec::with_capacity(self.config.heads);
        for head in 0..self.config.heads {
            let (lo, hi) = (head * dk, (head + 1) * dk);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let mut logits = Vec::new();
            let mut msgs = Vec::new();
            for (r, e) in ctx.edges.iter().enumerate() {
                if e.len() == 0 {
                    continue;
                }
                let qa = tape.matmul(qh, p[self.att[r][head]]);
                let qe = tape.gather(qa, e.dst.clone());
                let ke = tape.gather(kh, e.src.clone());
                logits.push(rowdot(tape, qe, ke));
                let vm = tape.matmul(vh, p[self.msg[r][head]]);
                msgs.push(tape.gather(vm, e.src.clone()));
            }
            let logits = tape.concat_rows(&logits);
            let logits = tape.scale(logits, scale);
            let alpha = tape.segment_softmax(logits, dst_all.clone(), n);
            let msgs = tape.concat_rows(&msgs);
            terms.push((alpha, msgs, dst_all.clone()));
        }
        terms
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.check(ctx, tape.value(h).cols())?;
        if ctx.edges.iter().all(|e| e.len() == 0) {
            return Ok(h);
        }
        let heads: Vec<Var> = self
            .edge_terms(tape, p, ctx, h)
            .into_iter()
            .map(|(alpha, msgs, dst)| {
                let weighted = tape.mul_col(msgs, alpha);
                tape.scatter_add(weighted, dst, ctx.n)
            })
            .collect();
        let agg = tape.concat_cols(&heads);
        let o_w = self.vars(p, &self.out);
        let out = typed_linear(tape, agg, &ctx.by_type, &o_w, ctx.n);
        Ok(tape.add(h, out))
    }
}

/// Splits rows of an all-edges matrix back into one block per relation.
fn per_relation(g: &HeteroGraph, all: &Matrix) -> Vec<Matrix> {
    let mut start = 0;
    g.relations()
        .iter()
        .map(|r| {
            let idx: Vec<usize> = (start..start + r.edges.len()).collect();
            start += r.edges.len();
            all.select_rows(&idx)
        })
        .collect()
}

fn evaluate_terms(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &HgtLayerParams,
    pick: impl Fn(&Tape, Var, Var) -> Matrix,
) -> Result<Vec<Vec<Matrix>>> {
    let ctx = GraphContext::new(g);
    params.check(&ctx, h.cols())?;
    if g.edge_count() == 0 {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let hv = tape.constant(h.clone());
    let heads: Vec<Matrix> = params
        .edge_terms(&mut tape, &p, &ctx, hv)
        .into_iter()
        .map(|(alpha, msgs, _)| pick(&tape, alpha, msgs))
        .collect();
    Ok(heads.iter().map(|m| per_relation(g, m)).collect())
}

/// Attention weights per relation, `E_r × heads`, rows in edge order.
pub fn hgt_attention(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &HgtLayerParams,
) -> Result<Vec<Matrix>> {
    let by_head = evaluate_terms(g, h, store, params, |t, a, _| t.value(a).clone())?;
    Ok((0..g.relation_count())
        .map(|r| {
            if by_head.is_empty() {
                return Matrix::zeros(0, params.config.heads);
            }
            let cols: Vec<&Matrix> = by_head.iter().map(|hd| &hd[r]).collect();
            Matrix::hcat(&cols).expect("equal row counts")
        })
        .collect())
}

/// Messages per relation, `E_r × d` with heads concatenated.
pub fn hgt_message(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &HgtLayerParams,
) -> Result<Vec<Matrix>> {
    let by_head = evaluate_terms(g, h, store, params, |t, _, m| t.value(m).clone())?;
    Ok((0..g.relation_count())
        .map(|r| {
            if by_head.is_empty() {
                return Matrix::zeros(0, params.config.d);
            }
            let cols: Vec<&Matrix> = by_head.iter().map(|hd| &hd[r]).collect();
            Matrix::hcat(&cols).expect("equal row counts")
        })
        .collect())
}

/// One HGT layer on plain matrices, with the positional encoding added to
/// the input when `lpe` is given.
pub fn hgt_forward(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &HgtLayerParams,
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

    fn toy() -> HeteroGraph {
        // Types: 0 = a (nodes 0, 1), 1 = b (node 2).
        HeteroGraph::new(
            vec!["a".into(), "b".into()],
            vec![0, 0, 1],
            vec![
                Relation {
                    name: "ab".into(),
                    src_type: 0,
                    dst_type: 1,
                    edges: vec![(0, 2), (1, 2)],
                },
                Relation {
                    name: "ba".into(),
                    src_type: 1,
                    dst_type: 0,
                    edges: vec![(2, 0)],
                },
            ],
            Matrix::zeros(3, 2),
            None,
        )
        .unwrap()
    }

    fn params(store: &mut ParamStore, heads: usize, d: usize) -> HgtLayerParams {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = HgtConfig { width: 2, d, heads };
        HgtLayerParams::init(store, "hgt", cfg, 2, 2, &mut rng).unwrap()
    }

    fn h() -> Matrix {
        Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25], vec![-0.3, 0.8]])
    }

    #[test]
    fn single_neighbour_gets_full_weight() {
        let g = toy();
        let mut store = ParamStore::new();
        let p = params(&mut store, 2, 2);
        let att = hgt_attention(&g, &h(), &store, &p).unwrap();
        assert_eq!(att[1].row(0), &[1.0, 1.0]);
        for head in 0..2 {
            assert!((att[0][(0, head)] + att[0][(1, head)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_projections_give_uniform_attention() {
        let g = toy();
        let mut store = ParamStore::new();
        let p = params(&mut store, 1, 2);
        for &id in p.query.iter().chain(&p.key) {
            store.set(id, Matrix::zeros(2, 2)).unwrap();
        }
        let att = hgt_attention(&g, &h(), &store, &p).unwrap();
        assert_eq!(att[0].data(), &[0.5, 0.5]);
    }

    #[test]
    fn messages() {
        let g = toy();
        let mut store = ParamStore::new();
        let p = params(&mut store, 1, 2);
        for &id in &p.value {
            store.set(id, Matrix::identity(2)).unwrap();
        }
        for row in &p.msg {
            store.set(row[0], Matrix::identity(2)).unwrap();
        }
        let m = hgt_message(&g, &h(), &store, &p).unwrap();
        assert_eq!(m[0].row(0), h().row(0));
        assert_eq!(m[0].row(1), h().row(1));
        assert_eq!(m[1].row(0), h().row(2));

        for &id in &p.value {
            store.set(id, Matrix::zeros(2, 2)).unwrap();
        }
        let m = hgt_message(&g, &h(), &store, &p).unwrap();
        assert!(m.iter().all(|x| x.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn two_head_messages_by_hand() {
        let g = toy();
        let mut store = ParamStore::new();
        let p = params(&mut store, 2, 2);
        let v = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
        store.set(p.value[0], v.clone()).unwrap();
        store.set(p.msg[0][0], Matrix::filled(1, 1, 2.0)).unwrap();
        store.set(p.msg[0][1], Matrix::filled(1, 1, -0.5)).unwrap();
        let m = hgt_message(&g, &h(), &store, &p).unwrap();
        // Edge 0 has source 0: h_0 V = [0.5 − 3, 1 + 1] = [−2.5, 2].
        assert!((m[0][(0, 0)] - (-5.0)).abs() < 1e-12);
        assert!((m[0][(0, 1)] - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn no_in_neighbours_returns_input() {
        let g = toy();
        let mut store = ParamStore::new();
        let p = params(&mut store, 2, 4);
        let out = hgt_forward(&g, &h(), &store, &p, None).unwrap();
        // Node 1 has no in-edges.
        assert_eq!(out.row(1), h().row(1));
        assert_ne!(out.row(0), h().row(0));
    }

    #[test]
    fn heads_must_divide_d() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = HgtConfig {
            width: 4,
            d: 6,
            heads: 4,
        };
        assert!(HgtLayerParams::init(&mut store, "x", cfg, 1, 1, &mut rng).is_err());
    }
}
