//! Central-difference checks of every trainable path.

mod common;

use std::rc::Rc;

use common::*;
use hetgat::numcore::{grad_check, Tape};
use hetgat::spectral::{compute_basis, LpeConfig, LpeEncoderParams};
use hetgat::tasks::{link_head_loss, node_head_loss};
use hetgat::{Matrix, ParamStore};
use rand::Rng;

const TOL: f64 = 1e-4;

fn five_node(seed: u64) -> (hetgat::HeteroGraph, rand_chacha::ChaCha8Rng) {
    let mut r = rng(seed);
    let g = random_graph(&mut r, 5, 2, 2, 4, 0.5);
    (g, r)
}

#[test]
fn rgat_gradients() {
    let (g, mut r) = five_node(1);
    let mut store = ParamStore::new();
    let p = rgat_layer(&mut store, &g, 4, 4, 2, &mut r);
    randomize(&mut store, &mut r, 0.8);
    let ctx = context(&g);
    let err = grad_check_layer(&store, g.features(), 11, |t, b, h| {
        p.forward(t, b, &ctx, h).unwrap()
    });
    assert!(err <= TOL, "{err}");
}

#[test]
fn gtn_gradients() {
    let (g, mut r) = five_node(2);
    let mut store = ParamStore::new();
    let p = gtn_layer(&mut store, &g, 4, 3, 2, 2, &mut r);
    randomize(&mut store, &mut r, 0.8);
    let ctx = context(&g);
    let err = grad_check_layer(&store, g.features(), 12, |t, b, h| {
        p.forward(t, b, &ctx, h).unwrap()
    });
    assert!(err <= TOL, "{err}");
}

#[test]
fn hgt_gradients() {
    let (g, mut r) = five_node(3);
    let mut store = ParamStore::new();
    let p = hgt_layer(&mut store, &g, 4, 4, 2, &mut r);
    randomize(&mut store, &mut r, 0.8);
    let ctx = context(&g);
    let err = grad_check_layer(&store, g.features(), 13, |t, b, h| {
        p.forward(t, b, &ctx, h).unwrap()
    });
    assert!(err <= TOL, "{err}");
}

#[test]
fn lpe_gradients() {
    let (g, mut r) = five_node(4);
    let basis = compute_basis(&g, 4).unwrap();
    let mut store = ParamStore::new();
    let cfg = LpeConfig {
        m: 4,
        k: 4,
        heads: 2,
        layers: 1,
        ff: 6,
        d_pe: 3,
        out_width: Some(4),
    };
    let enc = LpeEncoderParams::init(&mut store, "lpe", cfg, &mut r).unwrap();
    randomize(&mut store, &mut r, 0.8);
    // The encoder ignores `h`; its gradient there is zero.
    let err = grad_check_layer(&store, &Matrix::zeros(1, 1), 14, |t, b, _| {
        enc.forward(t, b, &basis).unwrap()
    });
    assert!(err <= TOL, "{err}");
}

#[test]
fn layer_with_positional_input_gradients() {
    let (g, mut r) = five_node(5);
    let basis = compute_basis(&g, 6).unwrap();
    let mut store = ParamStore::new();
    let mut cfg = LpeConfig::with_defaults(4);
    cfg.m = 6;
    cfg.k = 4;
    cfg.ff = 4;
    let enc = LpeEncoderParams::init(&mut store, "lpe", cfg, &mut r).unwrap();
    let p = hgt_layer(&mut store, &g, 4, 4, 2, &mut r);
    randomize(&mut store, &mut r, 0.6);
    let ctx = context(&g);
    let err = grad_check_layer(&store, g.features(), 15, |t, b, h| {
        let pe = enc.forward(t, b, &basis).unwrap();
        let x = t.add(h, pe);
        p.forward(t, b, &ctx, x).unwrap()
    });
    assert!(err <= TOL, "{err}");
}

#[test]
fn node_head_gradients() {
    let mut r = rng(6);
    let z = Matrix::from_fn(5, 4, |_, _| r.random_range(-1.0..1.0));
    let w = Matrix::from_fn(4, 3, |_, _| r.random_range(-1.0..1.0));
    let b = Matrix::from_fn(1, 3, |_, _| r.random_range(-1.0..1.0));
    let labels: Rc<[usize]> = Rc::from(vec![2, 0, 1]);
    let idx: Rc<[usize]> = Rc::from(vec![0, 3, 4]);
    let mut theta = z.data().to_vec();
    theta.extend_from_slice(w.data());
    theta.extend_from_slice(b.data());
    let f = |x: &[f64]| {
        let mut t = Tape::new();
        let zv = t.param(Matrix::from_vec(5, 4, x[..20].to_vec()).unwrap());
        let wv = t.param(Matrix::from_vec(4, 3, x[20..32].to_vec()).unwrap());
        let bv = t.param(Matrix::from_vec(1, 3, x[32..].to_vec()).unwrap());
        let (loss, _) = node_head_loss(&mut t, zv, wv, bv, labels.clone(), idx.clone());
        let mut g = t.backward(loss);
        let mut grad = g.take(zv).into_vec();
        grad.extend(g.take(wv).into_vec());
        grad.extend(g.take(bv).into_vec());
        (t.value(loss)[(0, 0)], grad)
    };
    let err = grad_check(f, &theta, 1e-5).unwrap();
    assert!(err <= TOL, "{err}");
}

#[test]
fn link_head_gradients() {
    let mut r = rng(7);
    let z = Matrix::from_fn(5, 3, |_, _| r.random_range(-1.0..1.0));
    let src: Rc<[usize]> = Rc::from(vec![0, 1, 2, 4]);
    let dst: Rc<[usize]> = Rc::from(vec![1, 1, 3, 0]);
    let labels: Rc<[f64]> = Rc::from(vec![1.0, 0.0, 1.0, 0.0]);
    let f = |x: &[f64]| {
        let mut t = Tape::new();
        let zv = t.param(Matrix::from_vec(5, 3, x.to_vec()).unwrap());
        let (loss, _) = link_head_loss(&mut t, zv, src.clone(), dst.clone(), labels.clone());
        let mut g = t.backward(loss);
        (t.value(loss)[(0, 0)], g.take(zv).into_vec())
    };
    let err = grad_check(f, z.data(), 1e-5).unwrap();
    assert!(err <= TOL, "{err}");
}
