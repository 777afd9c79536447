use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, Task};
use crate::gtn::{GtnConfig, GtnLayerParams};
use crate::hgt::{HgtConfig, HgtLayerParams};
use crate::nn::{apply_pe_var, rowdot, typed_linear, Activation, GraphContext, PeMode};
use crate::numcore::{glorot, AdamConfig, Bound, Matrix, ParamId, ParamStore, Tape, Var};
use crate::rgat::{RgatConfig, RgatLayerParams};
use crate::spectral::{LpeConfig, LpeEncoderParams, SpectralBasis};

use super::metrics::argmax_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Rgat,
    Gtn,
    Hgt,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Rgat => "rgat",
            Architecture::Gtn => "gtn",
            Architecture::Hgt => "hgt",
        })
    }
}

/// Positional encoder settings. `d_pe` defaults to the hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub m: usize,
    pub k: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_pe: Option<usize>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            m: 16,
            k: 16,
            heads: 4,
            layers: 1,
            ff: 32,
            d_pe: None,
        }
    }
}

fn default_layers() -> usize {
    2
}
fn default_hidden() -> usize {
    16
}
fn default_heads() -> usize {
    4
}
fn default_two() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub use_lpe: bool,
    #[serde(default)]
    pub pe_mode: PeMode,
    /// Message-passing layers; 0 leaves only the input map and the head.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Hidden width `F`.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Attention heads for RGAT and HGT.
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_two")]
    pub channels: usize,
    /// Meta-path length for GTN.
    #[serde(default = "default_two")]
    pub steps: usize,
    #[serde(default)]
    pub spectral: SpectralConfig,
    /// Adds one self-loop relation per node type.
    #[serde(default = "default_true")]
    pub self_loops: bool,
    /// Random eigenvector sign flips at every training step.
    #[serde(default)]
    pub sign_flip: bool,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            use_lpe: false,
            pe_mode: PeMode::Add,
            layers: default_layers(),
            hidden: default_hidden(),
            heads: default_heads(),
            channels: 2,
            steps: 2,
            spectral: SpectralConfig::default(),
            self_loops: true,
            sign_flip: false,
            optimizer: AdamConfig::default(),
            epochs: default_epochs(),
            patience: default_patience(),
            seed: 0,
        }
    }

    pub fn d_pe(&self) -> usize {
        self.spectral.d_pe.unwrap_or(self.hidden)
    }

    pub fn lpe_config(&self) -> LpeConfig {
        let s = &self.spectral;
        LpeConfig {
            m: s.m,
            k: s.k,
            heads: s.heads,
            layers: s.layers,
            ff: s.ff,
            d_pe: self.d_pe(),
            out_width: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("channels", self.channels),
            ("steps", self.steps),
            ("epochs", self.epochs),
            ("spectral.m", self.spectral.m),
            ("spectral.k", self.spectral.k),
            ("spectral.heads", self.spectral.heads),
            ("spectral.ff", self.spectral.ff),
            ("spectral.d_pe", self.d_pe()),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.architecture == Architecture::Rgat && !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "heads = {} must divide hidden = {}",
                self.heads, self.hidden
            )));
        }
        if !self.spectral.k.is_multiple_of(self.spectral.heads) {
            return Err(Error::invalid(format!(
                "spectral.heads = {} must divide spectral.k = {}",
                self.spectral.heads, self.spectral.k
            )));
        }
        if self.use_lpe && self.pe_mode == PeMode::Add && self.d_pe() != self.hidden {
            return Err(Error::invalid(format!(
                "pe_mode add needs spectral.d_pe = hidden ({}), got {}",
                self.hidden,
                self.d_pe()
            )));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "optimizer.lr = {} must be finite and non-negative",
                o.lr
            )));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::invalid("optimizer betas must lie in [0, 1)"));
        }
        if !(o.eps > 0.0) {
            return Err(Error::invalid("optimizer.eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    Rgat(RgatLayerParams),
    Gtn(GtnLayerParams),
    Hgt(HgtLayerParams),
}

impl Layer {
    fn forward(&self, tape: &mut Tape, p: &Bound, ctx: &GraphContext, h: Var) -> Result<Var> {
        match self {
            Layer::Rgat(l) => l.forward(tape, p, ctx, h),
            Layer::Gtn(l) => l.forward(tape, p, ctx, h),
            Layer::Hgt(l) => l.forward(tape, p, ctx, h),
        }
    }
}

/// Encoder plus task head. Weights live in `store`; the rest are handles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub task: Task,
    pub store: ParamStore,
    /// Per node type, raw feature width → `F`.
    pub input: Vec<ParamId>,
    pub encoder: Option<LpeEncoderParams>,
    pub layers: Vec<Layer>,
    /// Node classification only: weight and bias.
    pub head: Option<(ParamId, ParamId)>,
}

impl Model {
    /// Builds a model for message passing over `g`, which must already
    /// contain any self relations.
    pub fn new(
        config: &ModelConfig,
        task: Task,
        g: &HeteroGraph,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let f = config.hidden;
        let raw = g.features().cols();
        let input = (0..g.type_count())
            .map(|t| store.add(format!("input{t}"), glorot(raw, f, rng)))
            .collect();
        let encoder = if config.use_lpe {
            Some(LpeEncoderParams::init(
                &mut store,
                "lpe",
                config.lpe_config(),
                rng,
            )?)
        } else {
            None
        };

        let mut width = f;
        if config.use_lpe && config.pe_mode == PeMode::Concat {
            width += config.d_pe();
        }
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let prefix = format!("layer{l}");
            let layer = match config.architecture {
                Architecture::Rgat => {
                    let cfg = RgatConfig {
                        in_width: width,
                        out_width: f,
                        heads: config.heads,
                        activation: Activation::Elu,
                    };
                    width = f;
                    Layer::Rgat(RgatLayerParams::init(
                        &mut store,
                        &prefix,
                        cfg,
                        g.relation_count(),
                        rng,
                    )?)
                }
                Architecture::Gtn => {
                    let cfg = GtnConfig {
                        in_width: width,
                        out_width: f,
                        channels: config.channels,
                        steps: config.steps,
                        activation: Activation::Elu,
                    };
                    width = f;
                    Layer::Gtn(GtnLayerParams::init(
                        &mut store,
                        &prefix,
                        cfg,
                        g.relation_count(),
                        rng,
                    )?)
                }
                Architecture::Hgt => {
                    let cfg = HgtConfig {
                        width,
                        d: width,
                        heads: config.heads,
                    };
                    Layer::Hgt(HgtLayerParams::init(
                        &mut store,
                        &prefix,
                        cfg,
                        g.type_count(),
                        g.relation_count(),
                        rng,
                    )?)
                }
            };
            layers.push(layer);
        }

        let head = match task {
            Task::Node => {
                let classes = g.label_count();
                if classes == 0 {
                    return Err(Error::invalid("node classification needs labels"));
                }
                let w = store.add("head.w", glorot(width, classes, rng));
                let b = store.add("head.b", Matrix::zeros(1, classes));
                Some((w, b))
            }
            Task::Link => None,
        };
        Ok(Self {
            config: config.clone(),
            task,
            store,
            input,
            encoder,
            layers,
            head,
        })
    }

    /// Node embeddings `Z` on the tape.
    pub fn embed(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ctx: &GraphContext,
        basis: Option<&SpectralBasis>,
    ) -> Result<Var> {
        let g = ctx.graph();
        let x = tape.constant(g.features().clone());
        let weights: Vec<Var> = self.input.iter().map(|&id| p[id]).collect();
        let mut h = typed_linear(tape, x, &ctx.by_type, &weights, ctx.n);
        let pe = match (&self.encoder, basis) {
            (Some(enc), Some(b)) => Some(enc.forward(tape, p, b)?),
            (Some(_), None) => return Err(Error::invalid("model uses LPE but no basis was given")),
            (None, _) => None,
        };
        let mode = self.config.pe_mode;
        if self.layers.is_empty() {
            return apply_pe_var(tape, h, pe, mode);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let input = match mode {
                PeMode::Add => apply_pe_var(tape, h, pe, mode)?,
                PeMode::Concat if l == 0 => apply_pe_var(tape, h, pe, mode)?,
                PeMode::Concat => h,
            };
            h = layer.forward(tape, p, ctx, input)?;
        }
        Ok(h)
    }
}

/// Mean cross-entropy of `z W + b` over the rows in `idx`, plus the full
/// logit matrix.
pub fn node_head_loss(
    tape: &mut Tape,
    z: Var,
    w: Var,
    b: Var,
    labels: Rc<[usize]>,
    idx: Rc<[usize]>,
) -> (Var, Var) {
    let logits = tape.matmul(z, w);
    let logits = tape.add_row(logits, b);
    let picked = tape.gather(logits, idx);
    (tape.cross_entropy(picked, labels), logits)
}

/// Mean binary cross-entropy of `logistic(z_u · z_v)`, plus the raw dot
/// products.
pub fn link_head_loss(
    tape: &mut Tape,
    z: Var,
    src: Rc<[usize]>,
    dst: Rc<[usize]>,
    labels: Rc<[f64]>,
) -> (Var, Var) {
    let zu = tape.gather(z, src);
    let zv = tape.gather(z, dst);
    let scores = rowdot(tape, zu, zv);
    (tape.bce_with_logits(scores, labels), scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeHeadOutput {
    pub loss: f64,
    /// Argmax class of every row in `idx`, in order.
    pub predictions: Vec<usize>,
}

/// Node classification head on plain matrices. `labels[k]` is the class of
/// node `idx[k]`.
pub fn node_head(
    z: &Matrix,
    w: &Matrix,
    b: &Matrix,
    labels: &[usize],
    idx: &[usize],
) -> Result<NodeHeadOutput> {
    let classes = w.cols();
    if z.cols() != w.rows() || b.shape() != (1, classes) {
        return Err(Error::invalid("node head shapes do not fit"));
    }
    if labels.len() != idx.len() || idx.is_empty() {
        return Err(Error::invalid(
            "node head needs one label per selected node",
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::invalid(format!(
            "class id {bad} is not below {classes}"
        )));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= z.rows()) {
        return Err(Error::invalid(format!("node {bad} is out of range")));
    }
    let mut tape = Tape::new();
    let (zv, wv, bv) = (
        tape.constant(z.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let (loss, logits) = node_head_loss(&mut tape, zv, wv, bv, Rc::from(labels), Rc::from(idx));
    let logits = tape.value(logits).select_rows(idx);
    Ok(NodeHeadOutput {
        loss: tape.value(loss)[(0, 0)],
        predictions: argmax_rows(&logits),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkHeadOutput {
    pub loss: f64,
    /// `logistic(z_u · z_v)` per pair.
    pub scores: Vec<f64>,
    /// 1 where the score exceeds 0.5.
    pub predictions: Vec<usize>,
}

pub fn link_head(z: &Matrix, pairs: &[(usize, usize)], labels: &[f64]) -> Result<LinkHeadOutput> {
    if pairs.len() != labels.len() || pairs.is_empty() {
        return Err(Error::invalid("link head needs one label per pair"));
    }
    if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= z.rows() || v >= z.rows()) {
        return Err(Error::invalid(format!("pair ({u}, {v}) is out of range")));
    }
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let src: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
    let dst: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
    let (loss, scores) = link_head_loss(&mut tape, zv, src, dst, Rc::from(labels));
    let dots = tape.value(scores).data();
    Ok(LinkHeadOutput {
        loss: tape.value(loss)[(0, 0)],
        scores: dots.iter().map(|&s| crate::numcore::sigmoid(s)).collect(),
        predictions: dots.iter().map(|&s| usize::from(s > 0.0)).collect(),
    })
}
