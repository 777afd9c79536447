//! Scalar-loop reference implementations and random instances shared by the
//! integration tests and the acceptance suite.
//!
//! The oracles read weights out of a `ParamStore` but otherwise use only
//! nested loops over `Vec<Vec<f64>>`; nothing here goes through the tape.

#![allow(dead_code)]

use hetgat::graph::Relation;
use hetgat::gtn::{GtnConfig, GtnLayerParams};
use hetgat::hgt::{HgtConfig, HgtLayerParams};
use hetgat::numcore::{grad_check, Tape, Var};
use hetgat::rgat::{RgatConfig, RgatLayerParams};
use hetgat::{Activation, GraphContext, HeteroGraph, Matrix, ParamStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn dense(m: &Matrix) -> Dense {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn to_matrix(d: &Dense) -> Matrix {
    Matrix::from_rows(d)
}

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn mm(a: &Dense, b: &Dense) -> Dense {
    let (n, k, m) = (a.len(), b.len(), b.first().map_or(0, Vec::len));
    let mut out = zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn eye(n: usize) -> Dense {
    let mut d = zeros(n, n);
    for i in 0..n {
        d[i][i] = 1.0;
    }
    d
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn max_abs_diff(a: &Dense, b: &Matrix) -> f64 {
    assert_eq!((a.len(), a.first().map_or(0, Vec::len)), b.shape());
    let mut worst = 0.0_f64;
    for i in 0..a.len() {
        for j in 0..a[i].len() {
            worst = worst.max((a[i][j] - b[(i, j)]).abs());
        }
    }
    worst
}

/// Dense `A[dst][src]` from an edge list.
pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Dense {
    let mut a = zeros(n, n);
    for &(s, d) in edges {
        a[d][s] = 1.0;
    }
    a
}

/// Symmetric normalised Laplacian of the homogenised graph, isolated nodes
/// giving zero rows and columns.
pub fn laplacian(g: &HeteroGraph) -> Dense {
    let n = g.node_count();
    let mut a = zeros(n, n);
    for r in g.relations() {
        for &(s, d) in &r.edges {
            if s != d {
                a[s][d] = 1.0;
                a[d][s] = 1.0;
            }
        }
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut l = zeros(n, n);
    for i in 0..n {
        if deg[i] == 0.0 {
            continue;
        }
        l[i][i] = 1.0;
        for j in 0..n {
            if deg[j] > 0.0 && a[i][j] != 0.0 {
                l[i][j] -= a[i][j] / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    l
}

/// RGAT layer written out per destination, relation and head.
pub fn rgat_oracle(g: &HeteroGraph, h: &Matrix, store: &ParamStore, p: &RgatLayerParams) -> Dense {
    let n = g.node_count();
    let f_out = p.config.out_width;
    let heads = p.config.heads;
    let dh = f_out / heads;
    let hd = dense(h);
    let mut out = zeros(n, f_out);
    for (r, rel) in g.relations().iter().enumerate() {
        let gr = mm(&hd, &dense(store.get(p.transform[r])));
        for i in 0..n {
            let nbrs: Vec<usize> = rel.edges.iter().filter(|e| e.1 == i).map(|e| e.0).collect();
            if nbrs.is_empty() {
                continue;
            }
            for head in 0..heads {
                let a_dst = store.get(p.att_dst[r][head]);
                let a_src = store.get(p.att_src[r][head]);
                let logits: Vec<f64> = nbrs
                    .iter()
                    .map(|&j| {
                        let mut e = 0.0;
                        for k in 0..dh {
                            e += a_dst[(k, 0)] * gr[i][head * dh + k]
                                + a_src[(k, 0)] * gr[j][head * dh + k];
                        }
                        leaky(e)
                    })
                    .collect();
                let alpha = softmax(&logits);
                for (w, &j) in alpha.iter().zip(&nbrs) {
                    for k in 0..dh {
                        out[i][head * dh + k] += w * gr[j][head * dh + k];
                    }
                }
            }
        }
    }
    let act = p.config.activation;
    out.iter()
        .map(|row| row.iter().map(|&x| apply(act, x)).collect())
        .collect()
}

pub fn apply(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Identity => x,
        Activation::Elu => elu(x),
    }
}

/// `σ(D̃^{-1/2}(A+I)D̃^{-1/2} H W)` entry by entry.
pub fn gcn_oracle(a: &Dense, h: &Dense, w: &Dense, act: Activation) -> Dense {
    let n = a.len();
    let mut t = a.clone();
    for i in 0..n {
        t[i][i] += 1.0;
    }
    let deg: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let mut norm = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            norm[i][j] = t[i][j] / (deg[i] * deg[j]).sqrt();
        }
    }
    mm(&mm(&norm, h), w)
        .into_iter()
        .map(|r| r.into_iter().map(|x| apply(act, x)).collect())
        .collect()
}

/// Soft meta-path adjacency as the explicit sum over every tuple of edge
/// types `(t_1, …, t_l)`, each term `Π_i w_i[t_i] · A_{t_l} ⋯ A_{t_1}`,
/// then row-normalised. `mats` ends with the identity.
pub fn soft_adjacency_tuples(mats: &[Dense], selection: &Dense) -> Dense {
    let n = mats[0].len();
    let k = mats.len();
    let steps = selection.len();
    let weights: Vec<Vec<f64>> = selection.iter().map(|row| softmax(row)).collect();
    let mut total = zeros(n, n);
    let count = k.pow(steps as u32);
    for code in 0..count {
        let mut tuple = Vec::with_capacity(steps);
        let mut c = code;
        for _ in 0..steps {
            tuple.push(c % k);
            c /= k;
        }
        let mut coeff = 1.0;
        let mut prod = eye(n);
        for (i, &t) in tuple.iter().enumerate() {
            coeff *= weights[i][t];
            prod = mm(&mats[t], &prod);
        }
        for a in 0..n {
            for b in 0..n {
                total[a][b] += coeff * prod[a][b];
            }
        }
    }
    for row in &mut total {
        let s: f64 = row.iter().sum();
        if s != 0.0 {
            row.iter_mut().for_each(|x| *x /= s);
        }
    }
    total
}

pub fn relation_mats_with_identity(g: &HeteroGraph) -> Vec<Dense> {
    let n = g.node_count();
    let mut mats: Vec<Dense> = g
        .relations()
        .iter()
        .map(|r| adjacency(n, &r.edges))
        .collect();
    mats.push(eye(n));
    mats
}

pub fn gtn_oracle(g: &HeteroGraph, h: &Matrix, store: &ParamStore, p: &GtnLayerParams) -> Dense {
    let mats = relation_mats_with_identity(g);
    let hd = dense(h);
    let w = dense(store.get(p.weight));
    let mut cat: Dense = vec![Vec::new(); g.node_count()];
    for &sel in &p.selection {
        let a = soft_adjacency_tuples(&mats, &dense(store.get(sel)));
        let out = gcn_oracle(&a, &hd, &w, p.config.activation);
        for (row, o) in cat.iter_mut().zip(out) {
            row.extend(o);
        }
    }
    mm(&cat, &dense(store.get(p.proj)))
}

/// HGT layer with one softmax per target and head over all incoming edges.
pub fn hgt_oracle(g: &HeteroGraph, h: &Matrix, store: &ParamStore, p: &HgtLayerParams) -> Dense {
    let n = g.node_count();
    let d = p.config.d;
    let heads = p.config.heads;
    let dk = d / heads;
    let types = g.node_types();
    let hd = dense(h);
    let project = |ids: &[hetgat::numcore::ParamId]| -> Dense {
        (0..n)
            .map(|i| mm(&vec![hd[i].clone()], &dense(store.get(ids[types[i]])))[0].clone())
            .collect()
    };
    let (q, k, v) = (project(&p.query), project(&p.key), project(&p.value));
    let mut out = hd.clone();
    for t in 0..n {
        let incoming: Vec<(usize, usize)> = g
            .relations()
            .iter()
            .enumerate()
            .flat_map(|(r, rel)| rel.edges.iter().filter(|e| e.1 == t).map(move |e| (r, e.0)))
            .collect();
        if incoming.is_empty() {
            continue;
        }
        let mut agg = vec![0.0; d];
        for head in 0..heads {
            let off = head * dk;
            let logits: Vec<f64> = incoming
                .iter()
                .map(|&(r, s)| {
                    let w = store.get(p.att[r][head]);
                    let mut x = 0.0;
                    for a in 0..dk {
                        for b in 0..dk {
                            x += q[t][off + a] * w[(a, b)] * k[s][off + b];
                        }
                    }
                    x / (dk as f64).sqrt()
                })
                .collect();
            let alpha = softmax(&logits);
            for (&(r, s), w_a) in incoming.iter().zip(&alpha) {
                let w = store.get(p.msg[r][head]);
                for b in 0..dk {
                    let mut m = 0.0;
                    for a in 0..dk {
                        m += v[s][off + a] * w[(a, b)];
                    }
                    agg[off + b] += w_a * m;
                }
            }
        }
        let o = store.get(p.out[types[t]]);
        for c in 0..h.cols() {
            let mut x = 0.0;
            for a in 0..d {
                x += agg[a] * o[(a, c)];
            }
            out[t][c] += x;
        }
    }
    out
}

/// Random typed graph: every type-compatible ordered pair becomes an edge
/// with probability `p`. Self-loops are allowed.
pub fn random_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    types: usize,
    relations: usize,
    width: usize,
    p: f64,
) -> HeteroGraph {
    let node_types: Vec<usize> = (0..n)
        .map(|i| {
            if i < types {
                i
            } else {
                rng.random_range(0..types)
            }
        })
        .collect();
    let rels = (0..relations)
        .map(|r| {
            let (st, dt) = (rng.random_range(0..types), rng.random_range(0..types));
            let mut edges = Vec::new();
            for s in 0..n {
                for d in 0..n {
                    if node_types[s] == st && node_types[d] == dt && rng.random::<f64>() < p {
                        edges.push((s, d));
                    }
                }
            }
            Relation {
                name: format!("r{r}"),
                src_type: st,
                dst_type: dt,
                edges,
            }
        })
        .collect();
    let type_names = (0..types).map(|t| format!("t{t}")).collect();
    let features = Matrix::from_fn(n, width, |_, _| rng.random_range(-1.0..1.0));
    HeteroGraph::new(type_names, node_types, rels, features, None).unwrap()
}

/// Replaces every parameter with a draw from `U(-scale, scale)`.
pub fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    for m in store.values_mut() {
        m.data_mut()
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-scale..scale));
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rgat_layer(
    store: &mut ParamStore,
    g: &HeteroGraph,
    f_in: usize,
    f_out: usize,
    heads: usize,
    rng: &mut ChaCha8Rng,
) -> RgatLayerParams {
    let cfg = RgatConfig {
        in_width: f_in,
        out_width: f_out,
        heads,
        activation: Activation::Elu,
    };
    RgatLayerParams::init(store, "rgat", cfg, g.relation_count(), rng).unwrap()
}

pub fn gtn_layer(
    store: &mut ParamStore,
    g: &HeteroGraph,
    f_in: usize,
    f_out: usize,
    channels: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> GtnLayerParams {
    let cfg = GtnConfig {
        in_width: f_in,
        out_width: f_out,
        channels,
        steps,
        activation: Activation::Elu,
    };
    GtnLayerParams::init(store, "gtn", cfg, g.relation_count(), rng).unwrap()
}

pub fn hgt_layer(
    store: &mut ParamStore,
    g: &HeteroGraph,
    width: usize,
    d: usize,
    heads: usize,
    rng: &mut ChaCha8Rng,
) -> HgtLayerParams {
    let cfg = HgtConfig { width, d, heads };
    HgtLayerParams::init(store, "hgt", cfg, g.type_count(), g.relation_count(), rng).unwrap()
}

/// Central-difference check of `Σ (out ⊙ R)` with respect to every
/// parameter in `store` and the input `h`. `build` records the layer.
pub fn grad_check_layer(
    store: &ParamStore,
    h: &Matrix,
    seed: u64,
    build: impl Fn(&mut Tape, &hetgat::numcore::Bound, Var) -> Var,
) -> f64 {
    let k = store.num_scalars();
    let mut theta = store.flatten();
    theta.extend_from_slice(h.data());
    let probe = {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let out = build(&mut tape, &p, hv);
        let shape = tape.value(out).shape();
        let mut r = rng(seed);
        Matrix::from_fn(shape.0, shape.1, |_, _| r.random_range(-1.0..1.0))
    };
    let f = |x: &[f64]| {
        let mut s = store.clone();
        s.assign_flat(&x[..k]).unwrap();
        let hm = Matrix::from_vec(h.rows(), h.cols(), x[k..].to_vec()).unwrap();
        let mut tape = Tape::new();
        let p = s.bind(&mut tape);
        let hv = tape.param(hm);
        let out = build(&mut tape, &p, hv);
        let rv = tape.constant(probe.clone());
        let prod = tape.mul(out, rv);
        let loss = tape.sum(prod);
        let value = tape.value(loss)[(0, 0)];
        let mut grads = tape.backward(loss);
        let mut g: Vec<f64> = p
            .vars()
            .iter()
            .flat_map(|&v| grads.take(v).into_vec())
            .collect();
        g.extend(grads.take(hv).into_vec());
        (value, g)
    };
    grad_check(f, &theta, 1e-5).unwrap()
}

pub fn context(g: &HeteroGraph) -> GraphContext {
    GraphContext::new(g)
}
