//! Shared fixtures for the benchmarks.

use hetgat::graph::{gen_synthetic, FeatureMode, NodeTypeSpec, RelationSpec, SyntheticSpec};
use hetgat::gtn::{GtnConfig, GtnLayerParams};
use hetgat::hgt::{HgtConfig, HgtLayerParams};
use hetgat::numcore::{Tape, Var};
use hetgat::rgat::{RgatConfig, RgatLayerParams};
use hetgat::spectral::{LpeConfig, LpeEncoderParams};
use hetgat::{Activation, Architecture, GraphContext, HeteroGraph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const WIDTH: usize = 16;

/// Three node types of `per_type` nodes each, three relations, features of
/// width [`WIDTH`].
pub fn typed_graph(per_type: usize) -> HeteroGraph {
    let t = |name: &str| NodeTypeSpec {
        name: name.into(),
        count: per_type,
        informative: true,
    };
    let r = |name: &str, src_type, dst_type| RelationSpec {
        name: name.into(),
        src_type,
        dst_type,
        p_intra: 8.0 / per_type as f64,
        p_inter: 0.5 / per_type as f64,
    };
    gen_synthetic(&SyntheticSpec {
        node_types: vec![t("a"), t("b"), t("c")],
        relations: vec![r("ab", 0, 1), r("bc", 1, 2), r("ca", 2, 0)],
        communities: 4,
        feature_mode: FeatureMode::Informative,
        feature_dim: WIDTH,
        feature_noise: 1.0,
        seed: 1,
    })
    .expect("valid spec")
}

/// One initialised layer of the given architecture, width in = width out.
pub enum Layer {
    Rgat(RgatLayerParams),
    Gtn(GtnLayerParams),
    Hgt(HgtLayerParams),
}

pub struct Setup {
    pub graph: HeteroGraph,
    pub ctx: GraphContext,
    pub store: ParamStore,
    pub layer: Layer,
}

impl Setup {
    pub fn new(arch: Architecture, per_type: usize) -> Self {
        let graph = typed_graph(per_type);
        let ctx = GraphContext::new(&graph);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (types, rels) = (graph.type_count(), graph.relation_count());
        let layer = match arch {
            Architecture::Rgat => Layer::Rgat(
                RgatLayerParams::init(
                    &mut store,
                    "l",
                    RgatConfig {
                        in_width: WIDTH,
                        out_width: WIDTH,
                        heads: 4,
                        activation: Activation::Elu,
                    },
                    rels,
                    &mut rng,
                )
                .unwrap(),
            ),
            Architecture::Gtn => Layer::Gtn(
                GtnLayerParams::init(
                    &mut store,
                    "l",
                    GtnConfig {
                        in_width: WIDTH,
                        out_width: WIDTH,
                        channels: 2,
                        steps: 2,
                        activation: Activation::Elu,
                    },
                    rels,
                    &mut rng,
                )
                .unwrap(),
            ),
            Architecture::Hgt => Layer::Hgt(
                HgtLayerParams::init(
                    &mut store,
                    "l",
                    HgtConfig {
                        width: WIDTH,
                        d: WIDTH,
                        heads: 4,
                    },
                    types,
                    rels,
                    &mut rng,
                )
                .unwrap(),
            ),
        };
        Self {
            graph,
            ctx,
            store,
            layer,
        }
    }

    /// Records the layer on `tape` and returns the sum of its outputs.
    pub fn record(&self, tape: &mut Tape) -> Var {
        let p = self.store.bind(tape);
        let h = tape.constant(self.graph.features().clone());
        let out = match &self.layer {
            Layer::Rgat(l) => l.forward(tape, &p, &self.ctx, h),
            Layer::Gtn(l) => l.forward(tape, &p, &self.ctx, h),
            Layer::Hgt(l) => l.forward(tape, &p, &self.ctx, h),
        }
        .unwrap();
        tape.sum(out)
    }
}

/// A positional encoder with the default shape for `m` eigenpairs.
pub fn encoder(m: usize) -> (ParamStore, LpeEncoderParams) {
    let mut store = ParamStore::new();
    let mut cfg = LpeConfig::with_defaults(WIDTH);
    cfg.m = m;
    cfg.out_width = None;
    let enc =
        LpeEncoderParams::init(&mut store, "lpe", cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (store, enc)
}
