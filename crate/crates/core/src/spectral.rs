//! Laplacian spectrum and learned positional encodings.
//!
//! The heterogeneous graph is collapsed to one symmetric binary adjacency
//! (see [`HeteroGraph::homogenize`]) and its symmetric normalised Laplacian
//! `L = I − D^{-1/2} A D^{-1/2}` is diagonalised densely. Rows and columns of
//! isolated nodes are zero, so each isolated node contributes a `λ = 0`
//! direction.
//!
//! The encoder turns, for every node `j`, the sequence of `m` pairs
//! `(λ_i, φ_i[j])` into a vector: a linear embedding `2 → k`, self-attention
//! layers across the `m` positions (padded positions masked out), a sum over
//! real positions and a final projection. Eigenpairs are constants; only the
//! encoder weights train.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numcore::{eigh_symmetric, glorot, Bound, Matrix, ParamId, ParamStore, Tape, Var};

const EIGEN_TOL: f64 = 1e-13;
/// Entries below this magnitude do not decide an eigenvector's sign.
const SIGN_EPS: f64 = 1e-10;

/// `m` smallest Laplacian eigenpairs, padded with zeros when `m > N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBasis {
    pub m: usize,
    pub eigenvalues: Vec<f64>,
    /// `N×m`; column `i` is `φ_i`.
    pub eigenvectors: Matrix,
    /// `false` marks a padding column.
    pub mask: Vec<bool>,
}

impl SpectralBasis {
    pub fn node_count(&self) -> usize {
        self.eigenvectors.rows()
    }

    pub fn real_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Rows reordered so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SpectralBasis {
        let mut vecs = Matrix::zeros(self.node_count(), self.m);
        for (i, &p) in perm.iter().enumerate() {
            vecs.row_mut(p).copy_from_slice(self.eigenvectors.row(i));
        }
        SpectralBasis {
            eigenvectors: vecs,
            ..self.clone()
        }
    }
}

/// Symmetric normalised Laplacian of the homogenised graph.
pub fn build_laplacian(g: &HeteroGraph) -> Matrix {
    let a = g.homogenize();
    let n = a.rows();
    let inv_sqrt: Vec<f64> = a
        .row_sums()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    Matrix::from_fn(n, n, |i, j| {
        let diag = if i == j && inv_sqrt[i] > 0.0 {
            1.0
        } else {
            0.0
        };
        diag - a[(i, j)] * inv_sqrt[i] * inv_sqrt[j]
    })
}

/// The `m` smallest eigenpairs of [`build_laplacian`], ascending, each
/// eigenvector signed so its first non-negligible entry is positive.
pub fn compute_basis(g: &HeteroGraph, m: usize) -> Result<SpectralBasis> {
    if m == 0 {
        return Err(Error::invalid("spectral basis needs m >= 1"));
    }
    let l = build_laplacian(g);
    let n = l.rows();
    let eig = eigh_symmetric(&l, EIGEN_TOL)?;
    let real = m.min(n);

    let mut eigenvectors = Matrix::zeros(n, m);
    let mut eigenvalues = vec![0.0; m];
    for c in 0..real {
        let col = eig.eigenvectors.col(c);
        let sign = col
            .iter()
            .find(|v| v.abs() > SIGN_EPS)
            .map_or(1.0, |v| v.signum());
        for (r, v) in col.iter().enumerate() {
            eigenvectors[(r, c)] = sign * v;
        }
        eigenvalues[c] = eig.eigenvalues[c];
    }
    let mut mask = vec![false; m];
    mask[..real].iter_mut().for_each(|b| *b = true);
    Ok(SpectralBasis {
        m,
        eigenvalues,
        eigenvectors,
        mask,
    })
}

/// Multiplies each real column by `signs[i]` (±1). Padding stays untouched.
pub fn apply_signs(basis: &SpectralBasis, signs: &[f64]) -> SpectralBasis {
    assert_eq!(signs.len(), basis.m);
    let mut out = basis.clone();
    for c in 0..basis.m {
        if !basis.mask[c] || signs[c] == 1.0 {
            continue;
        }
        for r in 0..basis.node_count() {
            out.eigenvectors[(r, c)] *= signs[c];
        }
    }
    out
}

/// Random independent sign flip of every real eigenvector, each with
/// probability 1/2.
pub fn sign_augment(basis: &SpectralBasis, rng: &mut impl Rng) -> SpectralBasis {
    let signs: Vec<f64> = (0..basis.m)
        .map(|_| if rng.random::<bool>() { -1.0 } else { 1.0 })
        .collect();
    apply_signs(basis, &signs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpeConfig {
    /// Eigenpairs consumed per node.
    pub m: usize,
    /// Embedding width.
    pub k: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    pub d_pe: usize,
    /// Adds a `d_pe → width` map so the encoding can be summed with
    /// features of that width.
    pub out_width: Option<usize>,
}

impl LpeConfig {
    pub fn with_defaults(width: usize) -> Self {
        Self {
            m: 16,
            k: 16,
            heads: 4,
            layers: 1,
            ff: 32,
            d_pe: width,
            out_width: Some(width),
        }
    }

    pub fn output_width(&self) -> usize {
        self.out_width.unwrap_or(self.d_pe)
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.heads == 0 || self.d_pe == 0 || self.ff == 0 {
            return Err(Error::invalid("LPE dimensions must be positive"));
        }
        if !self.k.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "LPE heads {} must divide width {}",
                self.heads, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayerParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ff1: ParamId,
    pub ff1_bias: ParamId,
    pub ff2: ParamId,
    pub ff2_bias: ParamId,
}

/// Handles to the encoder weights inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpeEncoderParams {
    pub config: LpeConfig,
    pub embed: ParamId,
    pub embed_bias: ParamId,
    pub layers: Vec<EncoderLayerParams>,
    pub proj: ParamId,
    pub to_width: Option<ParamId>,
}

impl LpeEncoderParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        config: LpeConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        let embed = store.add(format!("{prefix}.embed"), glorot(2, k, rng));
        let embed_bias = store.add(format!("{prefix}.embed_bias"), Matrix::zeros(1, k));
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                EncoderLayerParams {
                    wq: store.add(format!("{p}.wq"), glorot(k, k, rng)),
                    wk: store.add(format!("{p}.wk"), glorot(k, k, rng)),
                    wv: store.add(format!("{p}.wv"), glorot(k, k, rng)),
                    wo: store.add(format!("{p}.wo"), glorot(k, k, rng)),
                    ff1: store.add(format!("{p}.ff1"), glorot(k, config.ff, rng)),
                    ff1_bias: store.add(format!("{p}.ff1_bias"), Matrix::zeros(1, config.ff)),
                    ff2: store.add(format!("{p}.ff2"), glorot(config.ff, k, rng)),
                    ff2_bias: store.add(format!("{p}.ff2_bias"), Matrix::zeros(1, k)),
                }
            })
            .collect();
        let proj = store.add(format!("{prefix}.proj"), glorot(k, config.d_pe, rng));
        let to_width = config
            .out_width
            .map(|w| store.add(format!("{prefix}.to_width"), glorot(config.d_pe, w, rng)));
        Ok(Self {
            config,
            embed,
            embed_bias,
            layers,
            proj,
            to_width,
        })
    }

    /// Records the encoder on `tape`, returning the `N × output_width`
    /// encoding.
    pub fn forward(&self, tape: &mut Tape, params: &Bound, basis: &SpectralBasis) -> Result<Var> {
        let cfg = &self.config;
        if basis.m != cfg.m {
            return Err(Error::invalid(format!(
                "basis has m = {} but the encoder expects {}",
                basis.m, cfg.m
            )));
        }
        let n = basis.node_count();
        let m = cfg.m;

        // Row j·m + i holds (λ_i, φ_i[j]).
        let mut seq = Matrix::zeros(n * m, 2);
        for j in 0..n {
            for i in 0..m {
                seq[(j * m + i, 0)] = basis.eigenvalues[i];
                seq[(j * m + i, 1)] = basis.eigenvectors[(j, i)];
            }
        }
        let real: Vec<usize> = (0..m).filter(|&i| basis.mask[i]).collect();
        let mut att_src = Vec::with_capacity(n * real.len() * real.len());
        let mut att_dst = Vec::with_capacity(att_src.capacity());
        let mut pool_rows = Vec::with_capacity(n * real.len());
        let mut pool_node = Vec::with_capacity(n * real.len());
        for j in 0..n {
            for &a in &real {
                pool_rows.push(j * m + a);
                pool_node.push(j);
                for &b in &real {
                    att_dst.push(j * m + a);
                    att_src.push(j * m + b);
                }
            }
        }
        let att_src: Rc<[usize]> = Rc::from(att_src);
        let att_dst: Rc<[usize]> = Rc::from(att_dst);

        let seq = tape.constant(seq);
        let x = tape.matmul(seq, params[self.embed]);
        let mut x = tape.add_row(x, params[self.embed_bias]);

        let dh = cfg.k / cfg.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for layer in &self.layers {
            let q = tape.matmul(x, params[layer.wq]);
            let kk = tape.matmul(x, params[layer.wk]);
            let v = tape.matmul(x, params[layer.wv]);
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi);
                let kh = tape.slice_cols(kk, lo, hi);
                let vh = tape.slice_cols(v, lo, hi);
                let qe = tape.gather(qh, att_dst.clone());
                let ke = tape.gather(kh, att_src.clone());
                let logits = crate::nn::rowdot(tape, qe, ke);
                let logits = tape.scale(logits, scale);
                let alpha = tape.segment_softmax(logits, att_dst.clone(), n * m);
                let ve = tape.gather(vh, att_src.clone());
                let weighted = tape.mul_col(ve, alpha);
                heads.push(tape.scatter_add(weighted, att_dst.clone(), n * m));
            }
            let attn = tape.concat_cols(&heads);
            let attn = tape.matmul(attn, params[layer.wo]);
            x = tape.add(x, attn);

            let hidden = tape.matmul(x, params[layer.ff1]);
            let hidden = tape.add_row(hidden, params[layer.ff1_bias]);
            let hidden = tape.relu(hidden);
            let out = tape.matmul(hidden, params[layer.ff2]);
            let out = tape.add_row(out, params[layer.ff2_bias]);
            x = tape.add(x, out);
        }

        let rows = tape.gather(x, Rc::from(pool_rows));
        let pooled = tape.scatter_add(rows, Rc::from(pool_node), n);
        let mut pe = tape.matmul(pooled, params[self.proj]);
        if let Some(w) = self.to_width {
            pe = tape.matmul(pe, params[w]);
        }
        Ok(pe)
    }
}

/// Evaluates the encoder outside of training.
pub fn lpe_forward(
    basis: &SpectralBasis,
    encoder: &LpeEncoderParams,
    store: &ParamStore,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = encoder.forward(&mut tape, &bound, basis)?;
    Ok(tape.value(out).clone())
}
