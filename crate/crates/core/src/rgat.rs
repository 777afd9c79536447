//! Relational graph attention.
//!
//! Each relation `r` has its own transform `G^(r) = H W^(r)` and additive
//! attention `e_ij = LeakyReLU(a_dst·G_i + a_src·G_j)`, normalised over the
//! in-neighbours of `i` under `r`. Relations are summed after their own
//! softmax:
//!
//! `h'_i = σ( Σ_r Σ_{j ∈ N_r(i)} α^(r)_ij G^(r)_j )`
//!
//! Heads split the `F'` output columns evenly and are concatenated. No
//! self-loops are added; a node without in-neighbours outputs `σ(0)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::nn::{layer_input, Activation, GraphContext, Positional, LEAKY_SLOPE};
use crate::numcore::{glorot, Bound, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgatConfig {
    pub in_width: usize,
    pub out_width: usize,
    pub heads: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgatLayerParams {
    pub config: RgatConfig,
    /// `W^(r)`, one per relation.
    pub transform: Vec<ParamId>,
    /// `[relation][head]`, each `(F'/heads) × 1`.
    pub att_dst: Vec<Vec<ParamId>>,
    pub att_src: Vec<Vec<ParamId>>,
}

impl RgatLayerParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: RgatConfig,
        relations: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.heads == 0 || !config.out_width.is_multiple_of(config.heads) {
            return Err(Error::invalid(format!(
                "RGAT heads {} must divide output width {}",
                config.heads, config.out_width
            )));
        }
        let dh = config.out_width / config.heads;
        let mut transform = Vec::new();
        let mut att_dst = Vec::new();
        let mut att_src = Vec::new();
        for r in 0..relations {
            transform.push(store.add(
                format!("{prefix}.rel{r}.w"),
                glorot(config.in_width, config.out_width, rng),
            ));
            att_dst.push(
                (0..config.heads)
                    .map(|h| store.add(format!("{prefix}.rel{r}.a_dst{h}"), glorot(dh, 1, rng)))
                    .collect(),
            );
            att_src.push(
                (0..config.heads)
                    .map(|h| store.add(format!("{prefix}.rel{r}.a_src{h}"), glorot(dh, 1, rng)))
                    .collect(),
            );
        }
        Ok(Self {
            config,
            transform,
            att_dst,
            att_src,
        })
    }

    fn head_width(&self) -> usize {
        self.config.out_width / self.config.heads
    }

    fn check(&self, ctx: &GraphContext, width: usize) -> Result<()> {
        if width != self.config.in_width {
            return Err(Error::invalid(format!(
                "RGAT expects input width {}, got {width}",
                self.config.in_width
            )));
        }
        if ctx.edges.len() != self.transform.len() {
            return Err(Error::invalid(format!(
                "RGAT built for {} relations, graph has {}",
                self.transform.len(),
                ctx.edges.len()
            )));
        }
        Ok(())
    }

    /// Per-edge attention for relation `r`, head `h`, given `G^(r)`.
    fn attention_var(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &GraphContext,
        g_r: Var,
        r: usize,
        h: usize,
    ) -> Var {
        let dh = self.head_width();
        let e = &ctx.edges[r];
        let gh = tape.slice_cols(g_r, h * dh, (h + 1) * dh);
        let s_dst = tape.matmul(gh, p[self.att_dst[r][h]]);
        let s_src = tape.matmul(gh, p[self.att_src[r][h]]);
        let l_dst = tape.gather(s_dst, e.dst.clone());
        let l_src = tape.gather(s_src, e.src.clone());
        let logits = tape.add(l_dst, l_src);
        let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
        tape.segment_softmax(logits, e.dst.clone(), ctx.n)
    }

    /// Records the layer on `tape` for input features `h` (already `H'`).
    pub fn forward(&self, tape: &mut Tape, p: &Bound, ctx: &GraphContext, h: Var) -> Result<Var> {
        self.check(ctx, tape.value(h).cols())?;
        let dh = self.head_width();
        let mut total: Option<Var> = None;
        for r in 0..self.transform.len() {
            let e = &ctx.edges[r];
            if e.len() == 0 {
                continue;
            }
            let g_r = tape.matmul(h, p[self.transform[r]]);
            let mut heads = Vec::with_capacity(self.config.heads);
            for head in 0..self.config.heads {
                let alpha = self.attention_var(tape, p, ctx, g_r, r, head);
                let gh = tape.slice_cols(g_r, head * dh, (head + 1) * dh);
                let msg = tape.gather(gh, e.src.clone());
                let weighted = tape.mul_col(msg, alpha);
                heads.push(tape.scatter_add(weighted, e.dst.clone(), ctx.n));
            }
            let agg = tape.concat_cols(&heads);
            total = Some(match total {
                Some(t) => tape.add(t, agg),
                None => agg,
            });
        }
        let total = match total {
            Some(t) => t,
            None => tape.constant(Matrix::zeros(ctx.n, self.config.out_width)),
        };
        Ok(self.config.activation.apply(tape, total))
    }
}

/// `G^(r) = H W^(r)`.
pub fn relation_transform(
    h: &Matrix,
    store: &ParamStore,
    params: &RgatLayerParams,
    r: usize,
) -> Result<Matrix> {
    let w = params
        .transform
        .get(r)
        .ok_or_else(|| Error::invalid(format!("unknown relation {r}")))?;
    h.matmul(store.get(*w))
}

/// Attention weights of relation `r` as an `E_r × heads` matrix, rows in
/// the relation's edge order.
pub fn attention_coefficients(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &RgatLayerParams,
    r: usize,
) -> Result<Matrix> {
    let ctx = GraphContext::new(g);
    params.check(&ctx, h.cols())?;
    if r >= params.transform.len() {
        return Err(Error::invalid(format!("unknown relation {r}")));
    }
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let hv = tape.constant(h.clone());
    let g_r = tape.matmul(hv, p[params.transform[r]]);
    let cols: Vec<Matrix> = (0..params.config.heads)
        .map(|head| {
            let a = params.attention_var(&mut tape, &p, &ctx, g_r, r, head);
            tape.value(a).clone()
        })
        .collect();
    Matrix::hcat(&cols.iter().collect::<Vec<_>>())
}

/// One RGAT layer on plain matrices, with the positional encoding added to
/// the input when `lpe` is given.
pub fn rgat_forward(
    g: &HeteroGraph,
    h: &Matrix,
    store: &ParamStore,
    params: &RgatLayerParams,
    lpe: Option<Positional<'_>>,
) -> Result<Matrix> {
    let ctx = GraphContext::new(g);
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let input = layer_input(&mut tape, &p, h, lpe)?;
    let out = params.forward(&mut tape, &p, &ctx, input)?;
    Ok(tape.value(out).clone())
}
