//! Learned entropy models.
//!
//! Attribute channels are coded under a conditional Gaussian with an
//! adaptive quantization step: per level, a small MLP maps a context vector
//! to `(mu, sigma_raw, delta_raw)` for every channel. The context is the
//! anchor's quantized hyperprior vector, the already-decoded feature and
//! scaling of its coarser-level parent (when one exists), and the anchor
//! position normalized into the scene bounding box. Hyperprior vectors are
//! integers coded under the learned factorized density in [`factorized`].
//!
//! Bit-exactness rules worth knowing before touching anything here:
//! * parameters are snapped to `f32` before coding, and every forward pass
//!   runs in `f64` built from those exact `f32` values;
//! * transcendental calls route through [`crate::math`] (pure-Rust libm);
//! * contexts in code mode may only read data the decoder already has —
//!   dequantized parent attributes, raw positions, decoded hyperpriors.

pub mod factorized;
pub mod gaussian;
pub mod mlp;

pub use factorized::{FactorizedChannel, FactorizedDensity, PreparedChannel};
pub use mlp::{Mlp, MlpCache};

use crate::error::{Error, Result};
use crate::math;
use crate::partition::LevelPartition;
use crate::scene::AnchorScene;

/// Probability floor: one part in 2^15, aligned with the 16-bit coder so a
/// floored symbol always keeps at least two frequency counts.
pub const P_MIN: f64 = 1.0 / 32768.0;
/// Lower bound on predicted sigma.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper bound on predicted sigma.
pub const SIGMA_MAX: f64 = 1e3;
/// Hard symbol alphabet bound: |s| beyond this is a coding error.
pub const SYMBOL_MAX: i64 = 32767;
/// Initial scale of the factorized density.
pub const FACTORIZED_INIT_SCALE: f64 = 10.0;

/// Attribute groups, in channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Feature,
    Scaling,
    Offsets,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Feature, Group::Scaling, Group::Offsets];

    pub fn name(self) -> &'static str {
        match self {
            Group::Feature => "feature",
            Group::Scaling => "scaling",
            Group::Offsets => "offsets",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Group::Feature => 0,
            Group::Scaling => 1,
            Group::Offsets => 2,
        }
    }
}

/// Shape and hyper-parameters of the entropy models for one scene.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub scaling_dim: usize,
    pub offset_count: usize,
    /// Hyperprior channels per anchor; 0 disables the hyperprior entirely.
    pub hyper_dim: usize,
    /// Width of the two hidden layers.
    pub hidden: usize,
    /// Base quantization steps per group (feature, scaling, offsets). The
    /// predicted step is confined to `[delta0/2, 2*delta0]`.
    pub delta0: [f64; 3],
    /// Number of partition levels the nets are built for.
    pub levels: usize,
    /// When set, a single net serves every level and the context carries no
    /// parent attributes (the top-level context form everywhere). Used by
    /// the context-model ablation.
    pub shared_position_only: bool,
}

impl ModelConfig {
    pub fn for_scene(scene: &AnchorScene, levels: usize) -> ModelConfig {
        ModelConfig {
            feature_dim: scene.config.feature_dim,
            scaling_dim: scene.config.scaling_dim,
            offset_count: scene.config.offset_count,
            hyper_dim: scene.config.feature_dim / 4,
            hidden: 128,
            delta0: [1.0, 0.01, 0.01],
            levels,
            shared_position_only: false,
        }
    }

    /// Channels across all groups.
    pub fn group_channels(&self) -> usize {
        self.feature_dim + self.scaling_dim + 3 * self.offset_count
    }

    /// Channel range of a group.
    pub fn group_range(&self, g: Group) -> std::ops::Range<usize> {
        match g {
            Group::Feature => 0..self.feature_dim,
            Group::Scaling => self.feature_dim..self.feature_dim + self.scaling_dim,
            Group::Offsets => self.feature_dim + self.scaling_dim..self.group_channels(),
        }
    }

    pub fn group_of(&self, channel: usize) -> Group {
        if channel < self.feature_dim {
            Group::Feature
        } else if channel < self.feature_dim + self.scaling_dim {
            Group::Scaling
        } else {
            Group::Offsets
        }
    }

    pub fn delta0_of(&self, g: Group) -> f64 {
        self.delta0[g.index()]
    }

    /// Number of distinct nets.
    pub fn net_count(&self) -> usize {
        if self.shared_position_only {
            1
        } else {
            self.levels
        }
    }

    pub fn net_index(&self, level: usize) -> usize {
        if self.shared_position_only {
            0
        } else {
            level
        }
    }

    /// Whether the context at `level` carries parent attributes.
    pub fn context_has_parent(&self, level: usize) -> bool {
        !self.shared_position_only && level + 1 < self.levels
    }

    /// Context vector length at `level`.
    pub fn context_len(&self, level: usize) -> usize {
        let mut n = self.hyper_dim + 3;
        if self.context_has_parent(level) {
            n += self.feature_dim + self.scaling_dim;
        }
        n
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("model needs at least one level".into()));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden width must be positive".into()));
        }
        if self.delta0.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidConfig("delta0 entries must be positive".into()));
        }
        Ok(())
    }
}

/// Per-anchor learned hyperprior vectors plus the factorized density that
/// codes them.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperpriorTable {
    /// Flat `anchors x hyper_dim` latent matrix.
    pub z: Vec<f64>,
    pub theta: FactorizedDensity,
}

/// The trainable model bundle for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub config: ModelConfig,
    /// One net per level (or a single shared net), index = level.
    pub nets: Vec<Mlp>,
    pub hyper: HyperpriorTable,
}

impl Models {
    /// Seeded initialization. Net draws happen in net order so the stream
    /// of random numbers is reproducible; `z` starts at zero and the
    /// factorized density at its symmetric initializer.
    pub fn init(config: ModelConfig, anchors: usize, rng: &mut impl rand::Rng) -> Models {
        let out_dim = 3 * config.group_channels();
        let nets = (0..config.net_count())
            .map(|k| {
                let level = k; // net k serves level k
                Mlp::init(config.context_len(level), config.hidden, out_dim, rng)
            })
            .collect();
        Models {
            hyper: HyperpriorTable {
                z: vec![0.0; anchors * config.hyper_dim],
                theta: FactorizedDensity::init(config.hyper_dim, FACTORIZED_INIT_SCALE),
            },
            nets,
            config,
        }
    }

    /// Rounds every parameter (including `z` and the configured base
    /// steps) to its nearest `f32`. Run before coding or serialization so
    /// that the decoder, which reads `f32` weights, reproduces the
    /// encoder's arithmetic exactly.
    pub fn snap_to_f32(&mut self) {
        let snap = &mut |v: &mut f64| *v = *v as f32 as f64;
        for net in &mut self.nets {
            net.for_each_param_mut(snap);
        }
        for ch in &mut self.hyper.theta.channels {
            ch.for_each_param_mut(snap);
        }
        for v in &mut self.hyper.z {
            snap(v);
        }
        for d in &mut self.config.delta0 {
            snap(d);
        }
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let nets: usize = self.nets.iter().map(|n| n.param_count()).sum();
        nets + self.hyper.theta.channels.len() * FactorizedChannel::PARAM_COUNT + self.hyper.z.len()
    }

    /// Canonical flat parameter order: nets (level 0 upward; w1, b1, w2,
    /// b2, w3, b3), then factorized channels, then `z` anchor-major.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(self.param_count());
        for net in &self.nets {
            net.for_each_param(&mut |v| out.push(v));
        }
        for ch in &self.hyper.theta.channels {
            ch.for_each_param(&mut |v| out.push(v));
        }
        out.extend_from_slice(&self.hyper.z);
    }

    pub fn read_flat(&mut self, src: &[f64]) {
        let mut it = src.iter().copied();
        for net in &mut self.nets {
            net.for_each_param_mut(&mut |v| *v = it.next().expect("flat params too short"));
        }
        for ch in &mut self.hyper.theta.channels {
            ch.for_each_param_mut(&mut |v| *v = it.next().expect("flat params too short"));
        }
        for v in &mut self.hyper.z {
            *v = it.next().expect("flat params too short");
        }
        assert!(it.next().is_none(), "flat params too long");
    }

    pub fn zeros_like_grads(&self) -> ModelGrads {
        ModelGrads {
            nets: self.nets.iter().map(|n| n.zeros_like()).collect(),
            theta: vec![FactorizedChannel::zeros(); self.hyper.theta.channels.len()],
            z: vec![0.0; self.hyper.z.len()],
        }
    }
}

/// Gradient accumulator shaped like [`Models`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub nets: Vec<Mlp>,
    pub theta: Vec<FactorizedChannel>,
    pub z: Vec<f64>,
}

impl ModelGrads {
    /// Same canonical order as [`Models::write_flat`].
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.clear();
        for net in &self.nets {
            net.for_each_param(&mut |v| out.push(v));
        }
        for ch in &self.theta {
            ch.for_each_param(&mut |v| out.push(v));
        }
        out.extend_from_slice(&self.z);
    }

    pub fn scale(&mut self, s: f64) {
        for net in &mut self.nets {
            net.for_each_param_mut(&mut |v| *v *= s);
        }
        for ch in &mut self.theta {
            ch.for_each_param_mut(&mut |v| *v *= s);
        }
        for v in &mut self.z {
            *v *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// Entropy parameters per attribute group
// ---------------------------------------------------------------------------

/// Per-channel `(mu, sigma, delta)` for every channel of an anchor, plus
/// the raw head outputs needed for the backward pass.
#[derive(Debug, Clone)]
pub struct EntropyParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub sigma_raw: Vec<f64>,
    pub delta_raw: Vec<f64>,
}

/// Applies the head parameterizations to the raw net output:
/// `sigma = clamp(sigma_min + softplus(raw), sigma_min, sigma_max)` and
/// `delta = delta0 * exp(tanh(raw) * ln 2)` (so `delta` spans
/// `[delta0/2, 2*delta0]`), with `mu` unconstrained.
pub fn activate_params(cfg: &ModelConfig, out: &[f64]) -> EntropyParams {
    let g = cfg.group_channels();
    assert_eq!(out.len(), 3 * g);
    let mut p = EntropyParams {
        mu: Vec::with_capacity(g),
        sigma: Vec::with_capacity(g),
        delta: Vec::with_capacity(g),
        sigma_raw: Vec::with_capacity(g),
        delta_raw: Vec::with_capacity(g),
    };
    for c in 0..g {
        let mu = out[c];
        let sraw = out[g + c];
        let draw = out[2 * g + c];
        let sigma = (SIGMA_MIN + math::softplus(sraw)).min(SIGMA_MAX);
        let delta0 = cfg.delta0_of(cfg.group_of(c));
        let delta = delta0 * math::exp(math::tanh(draw) * std::f64::consts::LN_2);
        p.mu.push(mu);
        p.sigma.push(sigma);
        p.delta.push(delta);
        p.sigma_raw.push(sraw);
        p.delta_raw.push(draw);
    }
    p
}

/// Runs the net for one context and activates the heads.
pub fn predict_params(cfg: &ModelConfig, net: &Mlp, ctx: &[f64]) -> Result<(EntropyParams, MlpCache)> {
    if ctx.len() != net.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "context has {} entries, net expects {}",
            ctx.len(),
            net.input_dim
        )));
    }
    let cache = net.forward(ctx);
    Ok((activate_params(cfg, &cache.out), cache))
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

/// Code-mode quantization: symbol and mean-anchored reconstruction.
/// Returns an error value when the symbol exceeds the alphabet bound.
#[inline]
pub fn code_symbol(value: f64, mu: f64, delta: f64) -> (i64, f64) {
    let s = math::round_half_away((value - mu) / delta) as i64;
    (s, mu + s as f64 * delta)
}

/// Train-mode quantization surrogate: the value plus scaled uniform noise.
#[inline]
pub fn train_surrogate(value: f64, noise: f64, delta: f64) -> f64 {
    value + noise * delta
}

// ---------------------------------------------------------------------------
// Context construction
// ---------------------------------------------------------------------------

/// Decoded-side attribute store, filled in coding order. Children read
/// their parent's entry; an entry must exist before any child needs it.
#[derive(Debug, Clone)]
pub struct DecodedStore {
    feature_dim: usize,
    scaling_dim: usize,
    offset_dim: usize,
    hyper_dim: usize,
    feature: Vec<f32>,
    scaling: Vec<f32>,
    offsets: Vec<f32>,
    zhat: Vec<i32>,
    present: Vec<bool>,
}

impl DecodedStore {
    pub fn new(anchors: usize, cfg: &ModelConfig) -> DecodedStore {
        DecodedStore {
            feature_dim: cfg.feature_dim,
            scaling_dim: cfg.scaling_dim,
            offset_dim: 3 * cfg.offset_count,
            hyper_dim: cfg.hyper_dim,
            feature: vec![0.0; anchors * cfg.feature_dim],
            scaling: vec![0.0; anchors * cfg.scaling_dim],
            offsets: vec![0.0; anchors * 3 * cfg.offset_count],
            zhat: vec![0; anchors * cfg.hyper_dim],
            present: vec![false; anchors],
        }
    }

    pub fn set_zhat(&mut self, anchor: usize, z: &[i32]) {
        debug_assert_eq!(z.len(), self.hyper_dim);
        self.zhat[anchor * self.hyper_dim..(anchor + 1) * self.hyper_dim].copy_from_slice(z);
    }

    pub fn zhat(&self, anchor: usize) -> &[i32] {
        &self.zhat[anchor * self.hyper_dim..(anchor + 1) * self.hyper_dim]
    }

    pub fn insert(&mut self, anchor: usize, feature: &[f32], scaling: &[f32], offsets: &[f32]) {
        debug_assert_eq!(feature.len(), self.feature_dim);
        debug_assert_eq!(scaling.len(), self.scaling_dim);
        debug_assert_eq!(offsets.len(), self.offset_dim);
        self.feature[anchor * self.feature_dim..(anchor + 1) * self.feature_dim]
            .copy_from_slice(feature);
        self.scaling[anchor * self.scaling_dim..(anchor + 1) * self.scaling_dim]
            .copy_from_slice(scaling);
        self.offsets[anchor * self.offset_dim..(anchor + 1) * self.offset_dim]
            .copy_from_slice(offsets);
        self.present[anchor] = true;
    }

    pub fn contains(&self, anchor: usize) -> bool {
        self.present[anchor]
    }

    pub fn feature(&self, anchor: usize) -> &[f32] {
        &self.feature[anchor * self.feature_dim..(anchor + 1) * self.feature_dim]
    }

    pub fn scaling(&self, anchor: usize) -> &[f32] {
        &self.scaling[anchor * self.scaling_dim..(anchor + 1) * self.scaling_dim]
    }

    pub fn offsets(&self, anchor: usize) -> &[f32] {
        &self.offsets[anchor * self.offset_dim..(anchor + 1) * self.offset_dim]
    }
}

/// Affine map of a position into the bounding box, one coordinate at a
/// time: `2 (x - min) / (max - min) - 1`, with degenerate extents mapping
/// to zero. All arithmetic in f64 over exact f32 inputs.
pub fn normalized_position(pos: [f32; 3], bbox_min: [f32; 3], bbox_max: [f32; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for d in 0..3 {
        let lo = bbox_min[d] as f64;
        let hi = bbox_max[d] as f64;
        out[d] = if hi > lo {
            2.0 * (pos[d] as f64 - lo) / (hi - lo) - 1.0
        } else {
            0.0
        };
    }
    out
}

/// Which values feed the context.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    /// Training: noisy hyperprior, raw parent attributes from the scene.
    Train,
    /// Coding: rounded hyperprior and dequantized parent attributes from
    /// the decoded store — exactly what the decoder has.
    Code,
}

/// Builds the context vector for `anchor` into `out`.
///
/// Layout: `[hyper (hyper_dim) | parent feature | parent scaling | x_norm]`,
/// where the parent block is present only when the level has one. In train
/// mode `hyper` is the caller-provided noisy vector; in code mode it is the
/// rounded integers from the store.
#[allow(clippy::too_many_arguments)]
pub fn build_context(
    anchor: usize,
    cfg: &ModelConfig,
    partition: &LevelPartition,
    scene: &AnchorScene,
    noisy_z: Option<&[f64]>,
    store: &DecodedStore,
    mode: ContextMode,
    out: &mut Vec<f64>,
) -> Result<()> {
    let level = partition.level_of[anchor] as usize;
    out.clear();
    match mode {
        ContextMode::Train => {
            let z = noisy_z.expect("train mode context needs the noisy hyperprior");
            debug_assert_eq!(z.len(), cfg.hyper_dim);
            out.extend_from_slice(z);
        }
        ContextMode::Code => {
            out.extend(store.zhat(anchor).iter().map(|&v| v as f64));
        }
    }
    if cfg.context_has_parent(level) {
        let parent = partition.parent_of[anchor].ok_or_else(|| {
            Error::Sequencing(format!("anchor {anchor} at level {level} has no parent"))
        })? as usize;
        match mode {
            ContextMode::Train => {
                let pa = &scene.anchors[parent];
                out.extend(pa.feature.iter().map(|&v| v as f64));
                out.extend(pa.scaling.iter().map(|&v| v as f64));
            }
            ContextMode::Code => {
                if !store.contains(parent) {
                    return Err(Error::Sequencing(format!(
                        "anchor {anchor} coded before its parent {parent}"
                    )));
                }
                out.extend(store.feature(parent).iter().map(|&v| v as f64));
                out.extend(store.scaling(parent).iter().map(|&v| v as f64));
            }
        }
    }
    let xn = normalized_position(
        scene.anchors[anchor].position,
        scene.bbox_min,
        scene.bbox_max,
    );
    out.extend_from_slice(&xn);
    debug_assert_eq!(out.len(), cfg.context_len(level));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{partition, PartitionConfig};
    use crate::scene::{Anchor, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn tiny_scene() -> AnchorScene {
        let cfg = SceneConfig {
            feature_dim: 50,
            scaling_dim: 3,
            offset_count: 10,
            has_masks: false,
        };
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let anchors = (0..40)
            .map(|_| Anchor {
                position: [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                feature: (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                scaling: vec![0.1, 0.2, 0.3],
                offsets: vec![[0.0; 3]; 10],
                mask: None,
            })
            .collect();
        AnchorScene::from_anchors(anchors, cfg).unwrap()
    }

    #[test]
    fn context_lengths_match_config_arithmetic() {
        let scene = tiny_scene();
        let cfg = ModelConfig::for_scene(&scene, 3);
        assert_eq!(cfg.hyper_dim, 12);
        // Top level: hyper + position.
        assert_eq!(cfg.context_len(2), 15);
        // Lower levels: hyper + parent feature + parent scaling + position.
        assert_eq!(cfg.context_len(0), 68);
        assert_eq!(cfg.context_len(1), 68);
    }

    #[test]
    fn context_at_bbox_center_has_zero_position_segment() {
        let scfg = SceneConfig {
            feature_dim: 2,
            scaling_dim: 1,
            offset_count: 1,
            has_masks: false,
        };
        let mk = |p: [f32; 3]| Anchor {
            position: p,
            feature: vec![0.0, 0.0],
            scaling: vec![0.0],
            offsets: vec![[0.0; 3]],
            mask: None,
        };
        let scene = AnchorScene::from_anchors(
            vec![mk([-1.0, -2.0, -4.0]), mk([0.0, 0.0, 0.0]), mk([1.0, 2.0, 4.0])],
            scfg,
        )
        .unwrap();
        let xn = normalized_position(scene.anchors[1].position, scene.bbox_min, scene.bbox_max);
        assert_eq!(xn, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn code_mode_context_requires_decoded_parent() {
        let scene = tiny_scene();
        let pcfg = PartitionConfig {
            eps0: 0.05,
            ..PartitionConfig::default()
        };
        let part = partition(&scene, &pcfg).unwrap();
        let cfg = ModelConfig::for_scene(&scene, part.levels());
        let store = DecodedStore::new(scene.len(), &cfg);
        // Find an anchor with a parent.
        let child = (0..scene.len())
            .find(|&i| part.parent_of[i].is_some())
            .expect("partition of 40 anchors should have children");
        let mut out = Vec::new();
        let err = build_context(
            child,
            &cfg,
            &part,
            &scene,
            None,
            &store,
            ContextMode::Code,
            &mut out,
        );
        assert!(matches!(err, Err(Error::Sequencing(_))));
    }

    #[test]
    fn zero_net_gives_baseline_params() {
        let scene = tiny_scene();
        let cfg = ModelConfig::for_scene(&scene, 3);
        let net = Mlp::zeros(cfg.context_len(2), 8, 3 * cfg.group_channels());
        let ctx = vec![0.25; cfg.context_len(2)];
        let (p, _) = predict_params(&cfg, &net, &ctx).unwrap();
        let g = cfg.group_channels();
        for c in 0..g {
            assert_eq!(p.mu[c], 0.0);
            assert!((p.sigma[c] - (SIGMA_MIN + math::softplus(0.0))).abs() < 1e-15);
            assert!((p.delta[c] - cfg.delta0_of(cfg.group_of(c))).abs() < 1e-15);
        }
    }

    #[test]
    fn delta_saturates_at_twice_and_half_delta0() {
        let scene = tiny_scene();
        let cfg = ModelConfig::for_scene(&scene, 3);
        let g = cfg.group_channels();
        let mut out = vec![0.0; 3 * g];
        out[2 * g] = 1e9; // delta_raw -> +inf for channel 0
        out[2 * g + 1] = -1e9; // channel 1
        let p = activate_params(&cfg, &out);
        assert!((p.delta[0] - 2.0 * cfg.delta0[0]).abs() < 1e-12);
        assert!((p.delta[1] - 0.5 * cfg.delta0[0]).abs() < 1e-12);
    }

    #[test]
    fn random_nets_produce_finite_boxed_params() {
        let scene = tiny_scene();
        let cfg = ModelConfig::for_scene(&scene, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        // 10^4 random draws across fresh nets and contexts.
        for _ in 0..100 {
            let net = Mlp::init(cfg.context_len(0), 16, 3 * cfg.group_channels(), &mut rng);
            for _ in 0..100 {
                let ctx: Vec<f64> = (0..cfg.context_len(0))
                    .map(|_| rng.gen_range(-3.0..3.0))
                    .collect();
                let (p, _) = predict_params(&cfg, &net, &ctx).unwrap();
                for c in 0..cfg.group_channels() {
                    assert!(p.mu[c].is_finite());
                    assert!(p.sigma[c] >= SIGMA_MIN && p.sigma[c] <= SIGMA_MAX);
                    let d0 = cfg.delta0_of(cfg.group_of(c));
                    assert!(p.delta[c] >= 0.5 * d0 - 1e-12 && p.delta[c] <= 2.0 * d0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn quantize_attr_examples() {
        // Value at the predicted mean: symbol 0, surrogate = mu.
        let (s, v) = code_symbol(3.25, 3.25, 0.1);
        assert_eq!(s, 0);
        assert_eq!(v, 3.25);
        // Scalar oracle: (mu + 0.26 - mu) / 0.1 rounds to 3.
        let (s, v) = code_symbol(1.0 + 0.26, 1.0, 0.1);
        assert_eq!(s, 3);
        assert!((v - 1.3).abs() < 1e-12);
        // Train mode with zero noise is the identity.
        assert_eq!(train_surrogate(0.77, 0.0, 0.1), 0.77);
    }

    #[test]
    fn flat_params_round_trip() {
        let scene = tiny_scene();
        let cfg = ModelConfig::for_scene(&scene, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut models = Models::init(cfg, scene.len(), &mut rng);
        for v in &mut models.hyper.z {
            *v = rng.gen_range(-2.0..2.0);
        }
        let mut flat = Vec::new();
        models.write_flat(&mut flat);
        assert_eq!(flat.len(), models.param_count());
        let mut other = models.clone();
        for v in &mut flat {
            *v += 1.0;
        }
        other.read_flat(&flat);
        let mut flat2 = Vec::new();
        other.write_flat(&mut flat2);
        assert_eq!(flat, flat2);
    }
}
