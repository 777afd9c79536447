//! Tape-level building blocks shared by the layers.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::numcore::{Bound, Matrix, Tape, Var};
use crate::spectral::{LpeEncoderParams, SpectralBasis};

pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// How positional encodings meet node features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PeMode {
    /// `H + PE`; widths must agree.
    #[default]
    Add,
    /// `[H ‖ PE]`.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    #[default]
    Elu,
}

impl Activation {
    pub(crate) fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Elu => tape.elu(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => crate::numcore::elu(x),
        }
    }
}

/// Combines node features with positional encodings.
pub fn apply_pe(h: &Matrix, pe: &Matrix, mode: PeMode) -> Result<Matrix> {
    if h.rows() != pe.rows() {
        return Err(Error::invalid(format!(
            "positional encoding has {} rows for {} nodes",
            pe.rows(),
            h.rows()
        )));
    }
    match mode {
        PeMode::Add => {
            if h.cols() != pe.cols() {
                return Err(Error::invalid(format!(
                    "add mode needs equal widths, got {} and {}",
                    h.cols(),
                    pe.cols()
                )));
            }
            h.add(pe)
        }
        PeMode::Concat => Matrix::hcat(&[h, pe]),
    }
}

pub(crate) fn apply_pe_var(tape: &mut Tape, h: Var, pe: Option<Var>, mode: PeMode) -> Result<Var> {
    let Some(pe) = pe else { return Ok(h) };
    // Validate through the plain path so the tape op never panics.
    let (hs, ps) = (tape.value(h).shape(), tape.value(pe).shape());
    if hs.0 != ps.0 || (mode == PeMode::Add && hs.1 != ps.1) {
        return Err(Error::invalid(format!(
            "cannot combine features {hs:?} with positional encoding {ps:?} in {mode:?} mode"
        )));
    }
    Ok(match mode {
        PeMode::Add => tape.add(h, pe),
        PeMode::Concat => tape.concat_cols(&[h, pe]),
    })
}

/// Row-wise dot product of two equally shaped matrices, as an `r×1` column.
pub(crate) fn rowdot(tape: &mut Tape, a: Var, b: Var) -> Var {
    let p = tape.mul(a, b);
    tape.row_sum(p)
}

/// Edge endpoint arrays for one relation.
#[derive(Debug, Clone)]
pub(crate) struct EdgeIndex {
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn of_graph(g: &HeteroGraph) -> Vec<EdgeIndex> {
        g.relations()
            .iter()
            .map(|r| EdgeIndex {
                src: Rc::from(r.sources()),
                dst: Rc::from(r.destinations()),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }
}

/// Per-node-type linear map: row `i` of the output is `h_i · W_{τ(i)}`.
/// Types without nodes are skipped.
pub(crate) fn typed_linear(
    tape: &mut Tape,
    h: Var,
    by_type: &[Rc<[usize]>],
    weights: &[Var],
    n: usize,
) -> Var {
    let mut parts = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    for (idx, &w) in by_type.iter().zip(weights) {
        if idx.is_empty() {
            continue;
        }
        let rows = tape.gather(h, idx.clone());
        parts.push(tape.matmul(rows, w));
        order.extend_from_slice(idx);
    }
    let stacked = tape.concat_rows(&parts);
    tape.scatter_add(stacked, Rc::from(order), n)
}

pub(crate) fn type_index(g: &HeteroGraph) -> Vec<Rc<[usize]>> {
    g.nodes_by_type().into_iter().map(Rc::from).collect()
}

/// Index structures derived once per graph and reused across epochs.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub(crate) n: usize,
    pub(crate) edges: Vec<EdgeIndex>,
    pub(crate) by_type: Vec<Rc<[usize]>>,
    /// Relation adjacencies followed by the identity, built on first use.
    adjacency: std::cell::OnceCell<Rc<Vec<Matrix>>>,
    graph: HeteroGraph,
}

impl GraphContext {
    pub fn new(g: &HeteroGraph) -> Self {
        Self {
            n: g.node_count(),
            edges: EdgeIndex::of_graph(g),
            by_type: type_index(g),
            adjacency: std::cell::OnceCell::new(),
            graph: g.clone(),
        }
    }

    pub fn graph(&self) -> &HeteroGraph {
        &self.graph
    }

    pub(crate) fn adjacency_with_identity(&self) -> Rc<Vec<Matrix>> {
        self.adjacency
            .get_or_init(|| {
                let mut mats = self.graph.relation_adjacencies();
                mats.push(Matrix::identity(self.n));
                Rc::new(mats)
            })
            .clone()
    }
}

/// Optional positional input for a layer: encoder weights and the basis
/// they read.
#[derive(Debug, Clone, Copy)]
pub struct Positional<'a> {
    pub encoder: &'a LpeEncoderParams,
    pub basis: &'a SpectralBasis,
}

/// Evaluates `H' = H + LPE` (when `lpe` is given) for a single layer.
pub(crate) fn layer_input(
    tape: &mut Tape,
    p: &Bound,
    h: &Matrix,
    lpe: Option<Positional<'_>>,
) -> Result<Var> {
    let hv = tape.constant(h.clone());
    match lpe {
        None => Ok(hv),
        Some(pos) => {
            let pe = pos.encoder.forward(tape, p, pos.basis)?;
            apply_pe_var(tape, hv, Some(pe), PeMode::Add)
        }
    }
}
