//! Rate-optimizing trainer.
//!
//! Anchor attributes are fixed inputs here; training fits the entropy
//! models — per-level nets, the factorized density and the per-anchor
//! hyperprior vectors — to minimize the expected coded size, with uniform
//! noise standing in for quantization. Gradients are analytic and exact
//! for the loss as written; Adam does the stepping. Everything is
//! deterministic for a fixed seed: noise is drawn in canonical anchor
//! order and gradient accumulation follows the same order.
//!
//! Train-time contexts read the *raw* parent attributes from the scene
//! (the quantization error they would carry is a fraction of a bin width),
//! which keeps each anchor's loss term independent; coding always uses
//! dequantized values.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::codec::{estimate_rate, RateReport};
use crate::entropy::{
    self, gaussian, normalized_position, ModelConfig, ModelGrads, Models, PreparedChannel, Group,
    P_MIN, SIGMA_MAX,
};
use crate::error::{Error, Result};
use crate::math;
use crate::partition::{partition, LevelPartition, PartitionConfig};
use crate::scene::AnchorScene;

/// Training hyper-parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Rate weight.
    pub lambda_e: f64,
    /// Optional distortion weight on the squared quantization error.
    pub lambda_d: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Anchors per iteration; `None` trains full-batch.
    pub batch_size: Option<usize>,
    /// Additionally divide the rate term by the feature dimension.
    pub normalize_by_feature_dim: bool,
    /// Hidden width of the context nets.
    pub hidden: usize,
    /// Hyperprior length is `feature_dim / hyper_divisor` (floored).
    pub hyper_divisor: usize,
    /// Base quantization steps (feature, scaling, offsets).
    pub delta0: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_e: 1.0,
            lambda_d: 0.0,
            iterations: 30000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            batch_size: None,
            normalize_by_feature_dim: false,
            hidden: 128,
            hyper_divisor: 4,
            delta0: [1.0, 0.01, 0.01],
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, scene: &AnchorScene, levels: usize, variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::for_scene(scene, levels);
        cfg.hidden = self.hidden;
        cfg.hyper_dim = if self.hyper_divisor == 0 {
            0
        } else {
            scene.config.feature_dim / self.hyper_divisor
        };
        cfg.delta0 = self.delta0;
        match variant {
            Variant::NoHyperprior => cfg.hyper_dim = 0,
            Variant::NoContext => cfg.shared_position_only = true,
            _ => {}
        }
        cfg
    }
}

/// Model variants for the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Drop the hyperprior from the context and the stream.
    NoHyperprior,
    /// Force the top-level (position-only) context everywhere, served by a
    /// single shared net.
    NoContext,
    /// Code every candidate-set appearance of an anchor instead of reusing
    /// coarse anchors at finer levels.
    NoAnchorForward,
    /// Single-level partition (which also degenerates the context to
    /// position-only).
    SingleLevel,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoHyperprior,
        Variant::NoContext,
        Variant::NoAnchorForward,
        Variant::SingleLevel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHyperprior => "no-hyperprior",
            Variant::NoContext => "no-context",
            Variant::NoAnchorForward => "no-anchor-forward",
            Variant::SingleLevel => "single-level",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }
}

// ---------------------------------------------------------------------------
// Coding plans
// ---------------------------------------------------------------------------

/// What gets a loss term: `(anchor, context level)` pairs. The standard
/// plan has one instance per anchor at its own level; the anchor-forward
/// ablation instantiates every candidate-set appearance.
#[derive(Debug, Clone)]
pub struct Plan {
    pub instances: Vec<(u32, u8)>,
    /// Distinct anchors covered (rate normalization denominator).
    pub anchor_count: usize,
}

impl Plan {
    /// One instance per batch anchor, in canonical order.
    pub fn canonical(partition: &LevelPartition, batch: &[u32]) -> Plan {
        Plan {
            instances: batch
                .iter()
                .map(|&a| (a, partition.level_of[a as usize]))
                .collect(),
            anchor_count: batch.len(),
        }
    }

    /// Every anchor at every level of every candidate set it belongs to,
    /// in canonical order (instances of one anchor are adjacent, coarse
    /// copies first).
    pub fn anchor_forward_ablation(partition: &LevelPartition) -> Plan {
        let mut instances = Vec::new();
        for (a, &l) in partition.level_of.iter().enumerate() {
            for k in (0..=l).rev() {
                instances.push((a as u32, k));
            }
        }
        Plan {
            instances,
            anchor_count: partition.level_of.len(),
        }
    }
}

/// Context parent for an instance `(anchor, level)`: an anchor whose final
/// level is above `level` reads its own coarser copy, everything else reads
/// its partition parent.
fn instance_parent(partition: &LevelPartition, anchor: usize, level: usize) -> Option<usize> {
    if (partition.level_of[anchor] as usize) > level {
        Some(anchor)
    } else {
        partition.parent_of[anchor].map(|p| p as usize)
    }
}

// ---------------------------------------------------------------------------
// Noise
// ---------------------------------------------------------------------------

/// Per-iteration uniform noise in `[-1/2, 1/2)`, one draw per hyperprior
/// channel and attribute channel of every batch anchor, drawn in canonical
/// anchor order (masked channels included so the stream of draws does not
/// depend on masks).
#[derive(Debug, Clone)]
pub struct Noise {
    pub z: Vec<f64>,
    pub attr: Vec<f64>,
    hyper_dim: usize,
    channels: usize,
}

impl Noise {
    pub fn draw(rng: &mut ChaCha20Rng, batch: usize, cfg: &ModelConfig) -> Noise {
        let channels = cfg.group_channels();
        let mut z = Vec::with_capacity(batch * cfg.hyper_dim);
        let mut attr = Vec::with_capacity(batch * channels);
        for _ in 0..batch {
            for _ in 0..cfg.hyper_dim {
                z.push(rng.gen::<f64>() - 0.5);
            }
            for _ in 0..channels {
                attr.push(rng.gen::<f64>() - 0.5);
            }
        }
        Noise {
            z,
            attr,
            hyper_dim: cfg.hyper_dim,
            channels,
        }
    }

    pub fn zeros(batch: usize, cfg: &ModelConfig) -> Noise {
        Noise {
            z: vec![0.0; batch * cfg.hyper_dim],
            attr: vec![0.0; batch * cfg.group_channels()],
            hyper_dim: cfg.hyper_dim,
            channels: cfg.group_channels(),
        }
    }

    fn z_of(&self, slot: usize) -> &[f64] {
        &self.z[slot * self.hyper_dim..(slot + 1) * self.hyper_dim]
    }

    fn attr_of(&self, slot: usize) -> &[f64] {
        &self.attr[slot * self.channels..(slot + 1) * self.channels]
    }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Rate/distortion breakdown of one loss evaluation (raw bit counts,
/// before the lambda weights).
#[derive(Debug, Clone, Default)]
pub struct LossBreakdown {
    pub hyper_bits: f64,
    pub feature_bits: f64,
    pub scaling_bits: f64,
    pub offset_bits: f64,
    pub mse: f64,
    pub coded_channels: usize,
}

impl LossBreakdown {
    pub fn total_bits(&self) -> f64 {
        self.hyper_bits + self.feature_bits + self.scaling_bits + self.offset_bits
    }
}

pub struct LossOutput {
    pub loss: f64,
    pub breakdown: LossBreakdown,
    pub grads: ModelGrads,
}

/// `batch` must list the distinct anchors of `plan.instances` in ascending
/// order; noise slots are positions in `batch`.
pub fn loss_and_grads(
    scene: &AnchorScene,
    part: &LevelPartition,
    models: &Models,
    plan: &Plan,
    batch: &[u32],
    noise: &Noise,
    cfg: &TrainConfig,
) -> Result<LossOutput> {
    let mcfg = &models.config;
    let dz = mcfg.hyper_dim;
    let channels = mcfg.group_channels();
    let mut grads = models.zeros_like_grads();
    let mut breakdown = LossBreakdown::default();
    let prepared: Vec<PreparedChannel> = models.hyper.theta.prepare();

    // Normalizations.
    let mut rate_norm = plan.anchor_count.max(1) as f64;
    if cfg.normalize_by_feature_dim {
        rate_norm *= mcfg.feature_dim as f64;
    }
    let we = cfg.lambda_e / rate_norm;
    // Count coded channels first: the MSE term is a mean.
    let mut coded_channels = 0usize;
    for &(a, _) in &plan.instances {
        let anchor = &scene.anchors[a as usize];
        coded_channels += mcfg.feature_dim + mcfg.scaling_dim;
        for row in 0..mcfg.offset_count {
            if anchor.mask.as_ref().map_or(true, |m| m[row]) {
                coded_channels += 3;
            }
        }
    }
    breakdown.coded_channels = coded_channels;
    let wd = if coded_channels > 0 {
        cfg.lambda_d / coded_channels as f64
    } else {
        0.0
    };

    let slot_of = |a: u32| -> usize {
        batch.binary_search(&a).expect("instance anchor not in batch")
    };

    let ln2 = std::f64::consts::LN_2;
    let mut ctx: Vec<f64> = Vec::new();
    let mut ztilde: Vec<f64> = Vec::with_capacity(dz);
    let mut dout: Vec<f64> = Vec::new();
    let mut dctx: Vec<f64> = Vec::new();

    for &(a, k) in &plan.instances {
        let ai = a as usize;
        let slot = slot_of(a);
        let k = k as usize;
        let anchor = &scene.anchors[ai];

        // Hyperprior bits under noisy quantization.
        ztilde.clear();
        let zn = noise.z_of(slot);
        for j in 0..dz {
            let zt = models.hyper.z[ai * dz + j] + zn[j];
            ztilde.push(zt);
            let hi = prepared[j].cdf_cached(zt + 0.5);
            let lo = prepared[j].cdf_cached(zt - 0.5);
            let mass = hi.cdf - lo.cdf;
            let p = mass.max(P_MIN);
            breakdown.hyper_bits += -math::log2(p);
            if mass > P_MIN {
                let dmass = -we / (mass * ln2);
                let dxt_hi = prepared[j].backward(&hi, dmass, &mut grads.theta[j]);
                let dxt_lo = prepared[j].backward(&lo, -dmass, &mut grads.theta[j]);
                grads.z[ai * dz + j] += dxt_hi + dxt_lo;
            }
        }

        // Context: noisy hyperprior, raw parent attributes, position.
        let has_parent = mcfg.context_has_parent(k);
        ctx.clear();
        ctx.extend_from_slice(&ztilde);
        if has_parent {
            let parent = instance_parent(part, ai, k).ok_or_else(|| {
                Error::Sequencing(format!("instance ({ai}, {k}) lacks a parent"))
            })?;
            let pa = &scene.anchors[parent];
            ctx.extend(pa.feature.iter().map(|&v| v as f64));
            ctx.extend(pa.scaling.iter().map(|&v| v as f64));
        }
        let xn = normalized_position(anchor.position, scene.bbox_min, scene.bbox_max);
        ctx.extend_from_slice(&xn);

        let net_idx = mcfg.net_index(k);
        let net = &models.nets[net_idx];
        if ctx.len() != net.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "context ({}) does not match net input ({})",
                ctx.len(),
                net.input_dim
            )));
        }
        let cache = net.forward(&ctx);
        let params = entropy::activate_params(mcfg, &cache.out);

        dout.clear();
        dout.resize(3 * channels, 0.0);
        let an = noise.attr_of(slot);
        for group in Group::ALL {
            let range = mcfg.group_range(group);
            for c in range.clone() {
                if group == Group::Offsets {
                    let row = (c - range.start) / 3;
                    if !anchor.mask.as_ref().map_or(true, |m| m[row]) {
                        continue;
                    }
                }
                let value = channel_value(anchor, mcfg, c);
                let u = an[c];
                let delta = params.delta[c];
                let sigma = params.sigma[c];
                let surrogate = value + u * delta;
                let vm = surrogate - params.mu[c];
                let (mass, d_vm, d_sigma, d_delta) = gaussian::bin_mass_grads(vm, sigma, delta);
                let p = mass.max(P_MIN);
                let bits = -math::log2(p);
                match group {
                    Group::Feature => breakdown.feature_bits += bits,
                    Group::Scaling => breakdown.scaling_bits += bits,
                    Group::Offsets => breakdown.offset_bits += bits,
                }
                breakdown.mse += (u * delta) * (u * delta);

                let mut dmu = 0.0;
                let mut dsigma = 0.0;
                let mut ddelta = 0.0;
                if mass > P_MIN {
                    let dmass = -we / (mass * ln2);
                    dmu += dmass * -d_vm;
                    dsigma += dmass * d_sigma;
                    // The surrogate moves with delta: d vm / d delta = u.
                    ddelta += dmass * (d_delta + d_vm * u);
                }
                ddelta += wd * 2.0 * (u * delta) * u;

                // Head parameterizations.
                let g = channels;
                dout[c] += dmu;
                if sigma < SIGMA_MAX {
                    dout[g + c] += dsigma * math::sigmoid(params.sigma_raw[c]);
                }
                let t = math::tanh(params.delta_raw[c]);
                dout[2 * g + c] += ddelta * delta * ln2 * (1.0 - t * t);
            }
        }

        dctx.clear();
        dctx.resize(ctx.len(), 0.0);
        net.backward(&cache, &dout, &mut grads.nets[net_idx], Some(&mut dctx));
        for j in 0..dz {
            grads.z[ai * dz + j] += dctx[j];
        }
    }

    let rate_loss = we * breakdown.total_bits();
    let mse_loss = wd * breakdown.mse;
    Ok(LossOutput {
        loss: rate_loss + mse_loss,
        breakdown,
        grads,
    })
}

fn channel_value(anchor: &crate::scene::Anchor, cfg: &ModelConfig, c: usize) -> f64 {
    let df = cfg.feature_dim;
    let dl = cfg.scaling_dim;
    if c < df {
        anchor.feature[c] as f64
    } else if c < df + dl {
        anchor.scaling[c - df] as f64
    } else {
        let oc = c - df - dl;
        anchor.offsets[oc / 3][oc % 3] as f64
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainReport {
    /// Mean coded bits per anchor (rate term only) at every iteration.
    pub loss_curve: Vec<f64>,
    pub initial_estimate: RateReport,
    pub final_estimate: RateReport,
    pub wall_secs: f64,
    pub iterations: usize,
}

/// Initializes models for a scene. Draw order: nets by level, then nothing
/// (the density initializer and `z = 0` are deterministic).
pub fn init_models(
    scene: &AnchorScene,
    part: &LevelPartition,
    cfg: &TrainConfig,
    variant: Variant,
    rng: &mut ChaCha20Rng,
) -> Models {
    let mcfg = cfg.model_config(scene, part.levels(), variant);
    Models::init(mcfg, scene.len(), rng)
}

/// Trains the full model on a scene.
pub fn train(
    scene: &AnchorScene,
    part: &LevelPartition,
    cfg: &TrainConfig,
) -> Result<(Models, TrainReport)> {
    train_variant(scene, part, cfg, Variant::Full)
}

/// Trains one ablation variant. The `SingleLevel` variant rebuilds a
/// one-level partition internally; the returned models match the partition
/// returned by [`variant_partition`].
pub fn train_variant(
    scene: &AnchorScene,
    part: &LevelPartition,
    cfg: &TrainConfig,
    variant: Variant,
) -> Result<(Models, TrainReport)> {
    let start = Instant::now();
    let owned_part;
    let part = if variant == Variant::SingleLevel {
        owned_part = single_level_partition(scene, part)?;
        &owned_part
    } else {
        part
    };
    let n = scene.len();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut models = init_models(scene, part, cfg, variant, &mut rng);
    let initial_estimate = variant_estimate(scene, part, &models, variant)?;

    let mut pvec = Vec::new();
    models.write_flat(&mut pvec);
    let mut m1 = vec![0.0f64; pvec.len()];
    let mut m2 = vec![0.0f64; pvec.len()];
    let mut gvec = Vec::with_capacity(pvec.len());
    let mut curve = Vec::with_capacity(cfg.iterations);

    let all: Vec<u32> = (0..n as u32).collect();
    let full_plan = match variant {
        Variant::NoAnchorForward => Plan::anchor_forward_ablation(part),
        _ => Plan::canonical(part, &all),
    };

    for iter in 0..cfg.iterations {
        // Batch selection (canonical ascending), then noise in that order.
        let (batch, plan): (Vec<u32>, Plan) = match cfg.batch_size {
            Some(b) if b < n && variant != Variant::NoAnchorForward => {
                let mut picked = rand::seq::index::sample(&mut rng, n, b)
                    .into_iter()
                    .map(|i| i as u32)
                    .collect::<Vec<_>>();
                picked.sort_unstable();
                let plan = Plan::canonical(part, &picked);
                (picked, plan)
            }
            _ => (all.clone(), full_plan.clone()),
        };
        let noise = Noise::draw(&mut rng, batch.len(), &models.config);
        let out = loss_and_grads(scene, part, &models, &plan, &batch, &noise, cfg)?;
        if !out.loss.is_finite() {
            return Err(Error::Diverged { iteration: iter });
        }
        curve.push(out.breakdown.total_bits() / plan.anchor_count.max(1) as f64);

        out.grads.write_flat(&mut gvec);
        let t = (iter + 1) as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for i in 0..pvec.len() {
            let g = gvec[i];
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g;
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g * g;
            let mhat = m1[i] / bc1;
            let vhat = m2[i] / bc2;
            pvec[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
        }
        models.read_flat(&pvec);
    }

    let final_estimate = variant_estimate(scene, part, &models, variant)?;
    let report = TrainReport {
        loss_curve: curve,
        initial_estimate,
        final_estimate,
        wall_secs: start.elapsed().as_secs_f64(),
        iterations: cfg.iterations,
    };
    Ok((models, report))
}

/// The partition a variant actually codes against.
pub fn variant_partition(
    scene: &AnchorScene,
    part: &LevelPartition,
    variant: Variant,
) -> Result<LevelPartition> {
    if variant == Variant::SingleLevel {
        single_level_partition(scene, part)
    } else {
        Ok(part.clone())
    }
}

fn single_level_partition(scene: &AnchorScene, part: &LevelPartition) -> Result<LevelPartition> {
    partition(
        scene,
        &PartitionConfig {
            levels: 1,
            eps0: part.eps[0],
            ..PartitionConfig::default()
        },
    )
}

/// Code-mode rate estimate for a variant.
pub fn variant_estimate(
    scene: &AnchorScene,
    part: &LevelPartition,
    models: &Models,
    variant: Variant,
) -> Result<RateReport> {
    match variant {
        Variant::NoAnchorForward => anchor_forward_ablation_estimate(scene, part, models),
        _ => estimate_rate(scene, part, models),
    }
}

/// Rate of the no-anchor-forward coding plan: every candidate-set copy is
/// coded at its level, contexts read the coarser copy of the same anchor
/// (or the partition parent for final-level instances).
fn anchor_forward_ablation_estimate(
    scene: &AnchorScene,
    part: &LevelPartition,
    models: &Models,
) -> Result<RateReport> {
    let n = scene.len();
    let mut models = models.clone();
    models.snap_to_f32();
    let cfg = models.config.clone();
    let dz = cfg.hyper_dim;
    let prepared = models.hyper.theta.prepare();
    let mut report = RateReport::default();

    // Rounded hyperprior, coded once per instance.
    let mut zhat = vec![0i32; n * dz];
    for a in 0..n {
        for j in 0..dz {
            let s = math::round_half_away(models.hyper.z[a * dz + j]) as i64;
            if s.abs() > entropy::SYMBOL_MAX {
                return Err(Error::SymbolOverflow {
                    anchor: a,
                    group: "hyper",
                    channel: j,
                    symbol: s,
                });
            }
            zhat[a * dz + j] = s as i32;
        }
    }

    // store[a] holds the dequantized copy from the coarsest not-yet-refined
    // level of `a`.
    let mut store: Vec<Option<Vec<f64>>> = vec![None; n];
    let levels = part.levels();
    let mut ctx = Vec::new();
    for k in (0..levels).rev() {
        let members = part.hat_members(k);
        let mut new_values: Vec<(usize, Vec<f64>)> = Vec::with_capacity(members.len());
        for &a in &members {
            let ai = a as usize;
            let anchor = &scene.anchors[ai];
            for j in 0..dz {
                let p = prepared[j].bin_prob(zhat[ai * dz + j] as f64).max(P_MIN);
                report.hyper_bits += -math::log2(p);
                report.coded_symbols += 1;
            }
            ctx.clear();
            ctx.extend(zhat[ai * dz..(ai + 1) * dz].iter().map(|&v| v as f64));
            if cfg.context_has_parent(k) {
                let parent = instance_parent(part, ai, k)
                    .ok_or_else(|| Error::Sequencing(format!("instance ({ai}, {k}) lacks a parent")))?;
                let stored = store[parent].as_ref().ok_or_else(|| {
                    Error::Sequencing(format!("parent {parent} not coded before level {k}"))
                })?;
                ctx.extend_from_slice(&stored[..cfg.feature_dim + cfg.scaling_dim]);
            }
            let xn = normalized_position(anchor.position, scene.bbox_min, scene.bbox_max);
            ctx.extend_from_slice(&xn);
            let (params, _) =
                entropy::predict_params(&cfg, &models.nets[cfg.net_index(k)], &ctx)?;
            let mut recon = vec![0.0f64; cfg.group_channels()];
            for group in Group::ALL {
                let range = cfg.group_range(group);
                for c in range.clone() {
                    if group == Group::Offsets {
                        let row = (c - range.start) / 3;
                        if !anchor.mask.as_ref().map_or(true, |m| m[row]) {
                            continue;
                        }
                    }
                    let value = channel_value(anchor, &cfg, c);
                    let (s, surrogate) = entropy::code_symbol(value, params.mu[c], params.delta[c]);
                    if s.abs() > entropy::SYMBOL_MAX {
                        return Err(Error::SymbolOverflow {
                            anchor: ai,
                            group: group.name(),
                            channel: c - range.start,
                            symbol: s,
                        });
                    }
                    let mass = gaussian::bin_mass(
                        s as f64 * params.delta[c],
                        params.sigma[c],
                        params.delta[c],
                    )
                    .max(P_MIN);
                    report.add_group(group, -math::log2(mass));
                    report.coded_symbols += 1;
                    recon[c] = surrogate as f32 as f64;
                }
            }
            new_values.push((ai, recon));
        }
        // Two-phase: contexts at this level must see the previous copies.
        for (ai, recon) in new_values {
            store[ai] = Some(recon);
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Ablation driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub bits_per_anchor: f64,
    pub hyper_bits: f64,
    pub feature_bits: f64,
    pub scaling_bits: f64,
    pub offset_bits: f64,
    pub total_bits: f64,
}

/// Trains each variant with identical seeds and reports code-mode rates.
pub fn ablation_run(
    scene: &AnchorScene,
    part: &LevelPartition,
    cfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    let n = scene.len().max(1) as f64;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let (_, report) = train_variant(scene, part, cfg, v)?;
        let est = report.final_estimate;
        rows.push(AblationRow {
            variant: v.name().to_string(),
            bits_per_anchor: est.total_bits() / n,
            hyper_bits: est.hyper_bits,
            feature_bits: est.feature_bits,
            scaling_bits: est.scaling_bits,
            offset_bits: est.offset_bits,
            total_bits: est.total_bits(),
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "variant,bits_per_anchor,hyper_bits,feature_bits,scaling_bits,offset_bits,total_bits\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{:.3},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
            r.variant,
            r.bits_per_anchor,
            r.hyper_bits,
            r.feature_bits,
            r.scaling_bits,
            r.offset_bits,
            r.total_bits
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::SIGMA_MIN;
    use crate::synth;

    fn small_scene() -> (AnchorScene, LevelPartition) {
        let scene = synth::grid_scene(3, true);
        let part = partition(
            &scene,
            &PartitionConfig {
                eps0: 1.0,
                ..PartitionConfig::default()
            },
        )
        .unwrap();
        (scene, part)
    }

    #[test]
    fn null_objective_gives_zero_loss_and_gradients() {
        let (scene, part) = small_scene();
        let cfg = TrainConfig {
            lambda_e: 0.0,
            lambda_d: 0.0,
            hidden: 8,
            ..Default::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let models = init_models(&scene, &part, &cfg, Variant::Full, &mut rng);
        let all: Vec<u32> = (0..scene.len() as u32).collect();
        let plan = Plan::canonical(&part, &all);
        let noise = Noise::zeros(all.len(), &models.config);
        let out = loss_and_grads(&scene, &part, &models, &plan, &all, &noise, &cfg).unwrap();
        assert_eq!(out.loss, 0.0);
        let mut flat = Vec::new();
        out.grads.write_flat(&mut flat);
        assert!(flat.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_anchor_loss_matches_scalar_oracle() {
        // One anchor, zero nets, zero noise: the loss is the sum of
        // -log2 masses with mu=0, sigma = sigma_min + softplus(0),
        // delta = delta0, plus the hyperprior bits at z=0.
        let scene = synth::grid_scene(1, false);
        let part = partition(
            &scene,
            &PartitionConfig {
                eps0: 1.0,
                ..PartitionConfig::default()
            },
        )
        .unwrap();
        let cfg = TrainConfig {
            hidden: 4,
            ..Default::default()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut models = init_models(&scene, &part, &cfg, Variant::Full, &mut rng);
        for net in &mut models.nets {
            net.for_each_param_mut(&mut |v| *v = 0.0);
        }
        let all: Vec<u32> = vec![0];
        let plan = Plan::canonical(&part, &all);
        let noise = Noise::zeros(1, &models.config);
        let out = loss_and_grads(&scene, &part, &models, &plan, &all, &noise, &cfg).unwrap();

        let mcfg = &models.config;
        let sigma = SIGMA_MIN + math::softplus(0.0);
        let mut expect = 0.0;
        for c in 0..mcfg.group_channels() {
            let v = channel_value(&scene.anchors[0], mcfg, c);
            let delta = mcfg.delta0_of(mcfg.group_of(c));
            let mass = gaussian::bin_mass(v, sigma, delta).max(P_MIN);
            expect += -math::log2(mass);
        }
        let prep = models.hyper.theta.prepare();
        for p in prep.iter() {
            expect += -math::log2(p.bin_prob(0.0).max(P_MIN));
        }
        assert!(
            (out.breakdown.total_bits() - expect).abs() < 1e-9,
            "got {} expected {expect}",
            out.breakdown.total_bits()
        );
        assert!((out.loss - expect / scene.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn zero_iterations_returns_initialized_models() {
        let (scene, part) = small_scene();
        let cfg = TrainConfig {
            iterations: 0,
            hidden: 8,
            ..Default::default()
        };
        let (models, report) = train(&scene, &part, &cfg).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let fresh = init_models(&scene, &part, &cfg, Variant::Full, &mut rng);
        assert_eq!(models, fresh);
        assert!(report.loss_curve.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_improves_rate() {
        let (scene, part) = small_scene();
        let cfg = TrainConfig {
            iterations: 40,
            hidden: 8,
            seed: 5,
            ..Default::default()
        };
        let (a, ra) = train(&scene, &part, &cfg).unwrap();
        let (b, rb) = train(&scene, &part, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.loss_curve, rb.loss_curve);
        assert!(
            ra.final_estimate.total_bits() <= ra.initial_estimate.total_bits(),
            "rate went up: {} -> {}",
            ra.initial_estimate.total_bits(),
            ra.final_estimate.total_bits()
        );
    }

    #[test]
    fn single_level_bits_equal_no_context_bits() {
        let (scene, part) = small_scene();
        let cfg = TrainConfig {
            iterations: 30,
            hidden: 8,
            seed: 7,
            ..Default::default()
        };
        let rows = ablation_run(
            &scene,
            &part,
            &cfg,
            &[Variant::NoContext, Variant::SingleLevel],
        )
        .unwrap();
        assert_eq!(rows[0].total_bits, rows[1].total_bits);
    }

    #[test]
    fn anchor_forward_ablation_codes_strictly_more() {
        let (scene, part) = small_scene();
        let cfg = TrainConfig {
            iterations: 10,
            hidden: 8,
            seed: 3,
            ..Default::default()
        };
        let rows = ablation_run(
            &scene,
            &part,
            &cfg,
            &[Variant::Full, Variant::NoAnchorForward],
        )
        .unwrap();
        assert!(rows[1].total_bits > rows[0].total_bits);
        // More coded symbols too: every candidate-set copy costs at least
        // its hyperprior.
        let full_plan = Plan::canonical(&part, &(0..scene.len() as u32).collect::<Vec<_>>());
        let naf_plan = Plan::anchor_forward_ablation(&part);
        assert!(naf_plan.instances.len() > full_plan.instances.len());
    }
}
