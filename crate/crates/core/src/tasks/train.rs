use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{make_link_splits, make_node_splits, HeteroGraph, LinkSet, SplitRatio, Task};
use crate::nn::GraphContext;
use crate::numcore::{adam_step, AdamState, Matrix, Tape};
use crate::spectral::{compute_basis, sign_augment, SpectralBasis};

use super::metrics::{argmax_rows, f1_score, Averaging};
use super::model::{link_head_loss, node_head_loss, Model, ModelConfig};

const INIT_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub train_f1: f64,
    pub val_f1: f64,
    /// Headline F1 (see [`TrainReport::f1_averaging`]).
    pub test_f1: f64,
    pub test_f1_macro: f64,
    pub test_f1_micro: f64,
    /// Optimizer steps taken.
    pub epochs: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub task: Task,
    pub f1_averaging: Averaging,
    pub trials: Vec<TrialReport>,
    /// Mean of `test_f1` over trials.
    pub mean: f64,
    /// Population variance of `test_f1` over trials.
    pub variance: f64,
}

impl TrainReport {
    /// Assembles a report, computing mean and variance from `trials` in
    /// order.
    pub fn aggregate(config_hash: String, task: Task, trials: Vec<TrialReport>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::invalid("a report needs at least one trial"));
        }
        let scores: Vec<f64> = trials.iter().map(|t| t.test_f1).collect();
        let (mean, variance) = mean_variance(&scores);
        Ok(Self {
            config_hash,
            task,
            f1_averaging: headline_averaging(task),
            trials,
            mean,
            variance,
        })
    }
}

/// Mean and population variance, summed in order.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn headline_averaging(task: Task) -> Averaging {
    match task {
        Task::Node => Averaging::Macro,
        Task::Link => Averaging::Binary,
    }
}

/// SHA-256 of the canonical JSON of everything that determines a run.
pub fn config_hash(task: Task, config: &ModelConfig, trials: usize) -> String {
    let canonical = serde_json::json!({ "task": task, "trials": trials, "model": config });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

enum Targets {
    Node {
        labels: Vec<usize>,
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Link {
        train: LinkSet,
        val: LinkSet,
        test: LinkSet,
    },
}

/// Everything one trial needs besides the parameters.
struct Setup {
    ctx: GraphContext,
    basis: Option<SpectralBasis>,
    targets: Targets,
}

fn setup(
    g: &HeteroGraph,
    task: Task,
    config: &ModelConfig,
    node_basis: Option<&SpectralBasis>,
) -> Result<Setup> {
    let ratio = SplitRatio::default();
    let with_loops = |h: &HeteroGraph| {
        if config.self_loops {
            h.with_self_relations()
        } else {
            h.clone()
        }
    };
    match task {
        Task::Node => {
            let labels = g
                .labels()
                .ok_or_else(|| Error::invalid("node classification needs a labeled graph"))?
                .to_vec();
            let split = make_node_splits(g, ratio, config.seed)?;
            let basis = match (config.use_lpe, node_basis) {
                (false, _) => None,
                (true, Some(b)) => Some(b.clone()),
                (true, None) => Some(compute_basis(g, config.spectral.m)?),
            };
            Ok(Setup {
                ctx: GraphContext::new(&with_loops(g)),
                basis,
                targets: Targets::Node {
                    labels,
                    train: split.train,
                    val: split.val,
                    test: split.test,
                },
            })
        }
        Task::Link => {
            if g.edge_count() == 0 {
                return Err(Error::invalid("link prediction needs at least one edge"));
            }
            let split = make_link_splits(g, ratio, config.seed)?;
            // Held-out edges must not carry messages.
            let visible = g.with_edges(&split.train.positives)?;
            let basis = if config.use_lpe {
                Some(compute_basis(&visible, config.spectral.m)?)
            } else {
                None
            };
            Ok(Setup {
                ctx: GraphContext::new(&with_loops(&visible)),
                basis,
                targets: Targets::Link {
                    train: split.train,
                    val: split.val,
                    test: split.test,
                },
            })
        }
    }
}

fn pair_index(set: &LinkSet) -> (Rc<[usize]>, Rc<[usize]>, Vec<usize>) {
    let (pairs, labels) = set.pairs_and_labels();
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
        labels.iter().map(|&l| usize::from(l > 0.5)).collect(),
    )
}

fn link_predictions(z: &Matrix, set: &LinkSet) -> (Vec<usize>, Vec<usize>) {
    let (src, dst, truth) = pair_index(set);
    let preds = src
        .iter()
        .zip(dst.iter())
        .map(|(&u, &v)| {
            let dot: f64 = z.row(u).iter().zip(z.row(v)).map(|(a, b)| a * b).sum();
            usize::from(dot > 0.0)
        })
        .collect();
    (preds, truth)
}

/// Predictions and truth on train, validation and test, from embeddings `z`
/// (or logits for node classification).
fn predictions(setup: &Setup, out: &Matrix) -> [(Vec<usize>, Vec<usize>); 3] {
    match &setup.targets {
        Targets::Node {
            labels,
            train,
            val,
            test,
        } => {
            let preds = argmax_rows(out);
            let pick = |idx: &[usize]| {
                (
                    idx.iter().map(|&i| preds[i]).collect(),
                    idx.iter().map(|&i| labels[i]).collect(),
                )
            };
            [pick(train), pick(val), pick(test)]
        }
        Targets::Link { train, val, test } => [
            link_predictions(out, train),
            link_predictions(out, val),
            link_predictions(out, test),
        ],
    }
}

/// Held-out loss on the validation set, from the same matrix predictions
/// are read from.
fn validation_loss(setup: &Setup, out: &Matrix) -> f64 {
    match &setup.targets {
        Targets::Node { labels, val, .. } => {
            let total: f64 = val
                .iter()
                .map(|&i| {
                    let row = out.row(i);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                    lse - row[labels[i]]
                })
                .sum();
            total / val.len() as f64
        }
        Targets::Link { val, .. } => {
            let (src, dst, truth) = pair_index(val);
            let total: f64 = src
                .iter()
                .zip(dst.iter())
                .zip(&truth)
                .map(|((&u, &v), &y)| {
                    let s: f64 = out.row(u).iter().zip(out.row(v)).map(|(a, b)| a * b).sum();
                    // −log σ(s) for positives, −log σ(−s) for negatives.
                    let s = if y == 1 { s } else { -s };
                    (-s).max(0.0) + (-s.abs()).exp().ln_1p()
                })
                .sum();
            total / truth.len() as f64
        }
    }
}

/// Forward pass; returns the loss and the matrix predictions are read
/// from (logits or embeddings).
fn forward(
    model: &Model,
    setup: &Setup,
    basis: Option<&SpectralBasis>,
    with_grads: bool,
) -> Result<(f64, Matrix, Option<Vec<Matrix>>)> {
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let z = model.embed(&mut tape, &p, &setup.ctx, basis)?;
    let (loss, out) = match &setup.targets {
        Targets::Node { labels, train, .. } => {
            let (w, b) = model.head.expect("node model has a head");
            let y: Rc<[usize]> = train.iter().map(|&i| labels[i]).collect();
            node_head_loss(&mut tape, z, p[w], p[b], y, Rc::from(train.as_slice()))
        }
        Targets::Link { train, .. } => {
            let (src, dst, _) = pair_index(train);
            let (_, labels) = train.pairs_and_labels();
            let (loss, _) = link_head_loss(&mut tape, z, src, dst, Rc::from(labels));
            (loss, z)
        }
    };
    let value = tape.value(loss)[(0, 0)];
    let out_m = tape.value(out).clone();
    let grads = with_grads.then(|| {
        let mut g = tape.backward(loss);
        p.vars().iter().map(|&v| g.take(v)).collect()
    });
    Ok((value, out_m, grads))
}

fn run_trial(
    g: &HeteroGraph,
    task: Task,
    config: &ModelConfig,
    node_basis: Option<&SpectralBasis>,
) -> Result<TrialReport> {
    config.validate()?;
    let setup = setup(g, task, config, node_basis)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed);
    aug_rng.set_stream(AUGMENT_STREAM);

    let mut model = Model::new(config, task, setup.ctx.graph(), &mut init_rng)?;
    let mut adam = AdamState::new(&model.store);
    let averaging = headline_averaging(task);

    // Ranked by validation F1, ties broken by lower validation loss.
    let mut best_val = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_params = model.store.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut loss_curve = Vec::new();

    for epoch in 0..config.epochs {
        let flipped = match (&setup.basis, config.sign_flip) {
            (Some(b), true) => Some(sign_augment(b, &mut aug_rng)),
            _ => None,
        };
        let train_basis = flipped.as_ref().or(setup.basis.as_ref());
        let (loss, out, grads) = forward(&model, &setup, train_basis, true)?;
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "loss is {loss} at epoch {epoch}"
            )));
        }
        // Validation always sees the unflipped basis.
        let out = if flipped.is_some() {
            forward(&model, &setup, setup.basis.as_ref(), false)?.1
        } else {
            out
        };
        let [_, (vp, vt), _] = predictions(&setup, &out);
        let val = (
            f1_score(&vp, &vt, averaging)?,
            validation_loss(&setup, &out),
        );
        if val.0 > best_val.0 || (val.0 == best_val.0 && val.1 < best_val.1) {
            best_val = val;
            best_params = model.store.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > config.patience {
                break;
            }
        }
        loss_curve.push(loss);
        let grads = grads.expect("requested");
        adam_step(
            &mut model.store,
            &grads,
            &mut adam,
            &config.optimizer,
            epoch as u64 + 1,
        )?;
    }

    model.store = best_params;
    let (_, out, _) = forward(&model, &setup, setup.basis.as_ref(), false)?;
    let [(trp, trt), (vp, vt), (tp, tt)] = predictions(&setup, &out);
    Ok(TrialReport {
        seed: config.seed,
        train_f1: f1_score(&trp, &trt, averaging)?,
        val_f1: f1_score(&vp, &vt, averaging)?,
        test_f1: f1_score(&tp, &tt, averaging)?,
        test_f1_macro: f1_score(&tp, &tt, Averaging::Macro)?,
        test_f1_micro: f1_score(&tp, &tt, Averaging::Micro)?,
        epochs: loss_curve.len(),
        best_epoch,
        loss_curve,
    })
}

/// One training run with `config.seed`.
pub fn train(g: &HeteroGraph, task: Task, config: &ModelConfig) -> Result<TrainReport> {
    run_trials(g, task, config, 1)
}

/// `n_trials` independent runs with seeds `config.seed + i`; each seed
/// drives its own split, initialisation and augmentation.
pub fn run_trials(
    g: &HeteroGraph,
    task: Task,
    config: &ModelConfig,
    n_trials: usize,
) -> Result<TrainReport> {
    if n_trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    config.validate()?;
    // The node-task graph is the same in every trial, so its basis is too.
    let node_basis = match (task, config.use_lpe) {
        (Task::Node, true) => Some(compute_basis(g, config.spectral.m)?),
        _ => None,
    };
    let trials = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let cfg = ModelConfig {
                seed: config.seed.wrapping_add(i),
                ..config.clone()
            };
            run_trial(g, task, &cfg, node_basis.as_ref())
        })
        .collect::<Result<Vec<_>>>()?;
    TrainReport::aggregate(config_hash(task, config, n_trials), task, trials)
}
