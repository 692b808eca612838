//! End-to-end scene codec.
//!
//! The bitstream is a versioned container: header, raw positions grouped by
//! level (coarse to fine), the offset-mask bitmap, the embedded model
//! weights, one range-coded hyperprior payload, one attribute payload per
//! level (three sub-streams: feature, scaling, offsets), and a trailing
//! CRC-32. Byte-exact layout in `docs/bitstream.md`.
//!
//! Coding is autoregressive across levels: an anchor's context reads its
//! parent's *dequantized* attributes out of the decoded store, so the
//! encoder must reconstruct exactly what the decoder will see. Coarse-level
//! anchors are coded once and their reconstructions are reused directly at
//! finer levels (and at rendering) — nothing is recoded.

pub mod weights;

use std::collections::HashMap;

use crate::coder::{CdfTable, RangeDecoder, RangeEncoder};
use crate::entropy::{
    self, build_context, code_symbol, gaussian, predict_params, ContextMode, DecodedStore,
    EntropyParams, Models, PreparedChannel, Group, P_MIN, SYMBOL_MAX,
};
use crate::error::{Error, Result};
use crate::math;
use crate::partition::{coding_order, voxel_key, LevelPartition};
use crate::scene::{Anchor, AnchorScene, SceneConfig};

pub const STREAM_MAGIC: &[u8; 4] = b"CGSC";
pub const STREAM_VERSION: u16 = 1;

const FLAG_HAS_MASKS: u32 = 1;
const FLAG_EXTERNAL_WEIGHTS: u32 = 2;

/// Half-width of the Gaussian symbol window in sigmas. Mass outside the
/// window routes through the escape symbol.
const WINDOW_SIGMAS: f64 = 6.0;
/// Window half-width bounds; `2W + 2 <= 65536` must hold for the coder.
const WINDOW_MIN: i64 = 2;
const WINDOW_MAX: i64 = 32766;
/// Hyperprior alphabet is extended until the density tail drops below this.
const HYPER_TAIL: f64 = 1.0 / (1 << 17) as f64;
/// Hard cap on the density-driven hyperprior alphabet extension.
const HYPER_SPAN_CAP: i32 = 4096;

// ---------------------------------------------------------------------------
// Gaussian symbol tables
// ---------------------------------------------------------------------------

/// Symbol window for a channel: symbols `-w..=w` plus one escape slot.
#[inline]
pub fn gaussian_window(sigma: f64, delta: f64) -> i64 {
    let w = (WINDOW_SIGMAS * sigma / delta).ceil() as i64 + 2;
    w.clamp(WINDOW_MIN, WINDOW_MAX)
}

/// Builds the coding table for one channel. The escape slot absorbs
/// whatever window-external mass the model has (floored at `P_MIN`).
fn gaussian_table(sigma: f64, delta: f64) -> Result<(CdfTable, i64)> {
    let w = gaussian_window(sigma, delta);
    let n = (2 * w + 1) as usize;
    let mut probs = Vec::with_capacity(n + 1);
    let mut sum = 0.0;
    for s in -w..=w {
        let p = gaussian::bin_mass(s as f64 * delta, sigma, delta);
        sum += p;
        probs.push(p);
    }
    probs.push((1.0 - sum).max(P_MIN));
    let table = CdfTable::from_probabilities(&probs)?;
    Ok((table, w))
}

fn uniform256_table() -> CdfTable {
    CdfTable::from_frequencies(&[256u32; 256]).expect("static uniform table")
}

/// Codes one attribute symbol, escaping to two raw bytes when it falls
/// outside the window.
fn encode_attr_symbol(
    enc: &mut RangeEncoder,
    table: &CdfTable,
    w: i64,
    raw256: &CdfTable,
    s: i64,
) -> Result<()> {
    if s.abs() <= w {
        enc.encode((s + w) as usize, table)
    } else {
        enc.encode((2 * w + 1) as usize, table)?;
        let u = (s + 32768) as u16;
        enc.encode((u >> 8) as usize, raw256)?;
        enc.encode((u & 0xff) as usize, raw256)
    }
}

fn decode_attr_symbol(
    dec: &mut RangeDecoder,
    table: &CdfTable,
    w: i64,
    raw256: &CdfTable,
) -> Result<i64> {
    let sym = dec.decode(table)? as i64;
    if sym < 2 * w + 1 {
        Ok(sym - w)
    } else {
        let hi = dec.decode(raw256)? as u16;
        let lo = dec.decode(raw256)? as u16;
        Ok(((hi << 8) | lo) as i64 - 32768)
    }
}

// ---------------------------------------------------------------------------
// Hyperprior tables
// ---------------------------------------------------------------------------

/// Per-channel alphabet `[lo, hi]` covering both the actual symbols and
/// essentially all of the density's mass, so quantized table probabilities
/// track the model and the rate estimate stays honest.
fn hyper_range(prep: &PreparedChannel, data_lo: i32, data_hi: i32) -> (i32, i32) {
    let mut lo = 0i32;
    while lo > -HYPER_SPAN_CAP && prep.cdf(lo as f64 - 0.5) > HYPER_TAIL {
        lo -= 1;
    }
    let mut hi = 0i32;
    while hi < HYPER_SPAN_CAP && prep.cdf(hi as f64 + 0.5) < 1.0 - HYPER_TAIL {
        hi += 1;
    }
    (lo.min(data_lo), hi.max(data_hi))
}

fn hyper_table(prep: &PreparedChannel, lo: i32, hi: i32) -> Result<CdfTable> {
    let n = (hi - lo + 1) as usize;
    let mut probs = Vec::with_capacity(n);
    let mut sum = 0.0;
    for s in lo..=hi {
        let p = prep.bin_prob(s as f64).max(0.0);
        sum += p;
        probs.push(p);
    }
    if sum < 1.0 - 1e-3 {
        // A pathologically wide density got clipped at the span cap;
        // renormalize so the table is still valid.
        for p in &mut probs {
            *p /= sum;
        }
    }
    CdfTable::from_probabilities(&probs)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Ideal coded bits per component under the learned models (the entropy
/// objective evaluated with code-mode rounding).
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct RateReport {
    pub hyper_bits: f64,
    pub feature_bits: f64,
    pub scaling_bits: f64,
    pub offset_bits: f64,
    /// Logical coded symbols (hyper + unmasked attribute channels).
    pub coded_symbols: u64,
}

impl RateReport {
    pub fn total_bits(&self) -> f64 {
        self.hyper_bits + self.feature_bits + self.scaling_bits + self.offset_bits
    }

    pub fn add_group(&mut self, g: Group, bits: f64) {
        match g {
            Group::Feature => self.feature_bits += bits,
            Group::Scaling => self.scaling_bits += bits,
            Group::Offsets => self.offset_bits += bits,
        }
    }
}

/// Byte counts per stream section.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct StorageReport {
    pub total: u64,
    pub header: u64,
    pub positions: u64,
    pub masks: u64,
    pub weights: u64,
    pub hyper: u64,
    /// Per level (coarse to fine): feature, scaling, offsets payload bytes.
    pub levels: Vec<LevelBytes>,
    /// Section framing (length prefixes) plus the CRC trailer.
    pub framing: u64,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct LevelBytes {
    pub feature: u64,
    pub scaling: u64,
    pub offsets: u64,
}

impl StorageReport {
    pub fn feature_total(&self) -> u64 {
        self.levels.iter().map(|l| l.feature).sum()
    }

    pub fn scaling_total(&self) -> u64 {
        self.levels.iter().map(|l| l.scaling).sum()
    }

    pub fn offsets_total(&self) -> u64 {
        self.levels.iter().map(|l| l.offsets).sum()
    }

    /// Coded payload bytes (hyper + attribute streams), the quantity the
    /// rate estimate predicts.
    pub fn coded_payload(&self) -> u64 {
        self.hyper + self.feature_total() + self.scaling_total() + self.offsets_total()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "section,bytes\nheader,{h}\npositions,{p}\nmasks,{m}\nweights,{w}\nhyper,{y}\n",
        );
        s = s
            .replace("{h}", &self.header.to_string())
            .replace("{p}", &self.positions.to_string())
            .replace("{m}", &self.masks.to_string())
            .replace("{w}", &self.weights.to_string())
            .replace("{y}", &self.hyper.to_string());
        s.push_str(&format!("feature,{}\n", self.feature_total()));
        s.push_str(&format!("scaling,{}\n", self.scaling_total()));
        s.push_str(&format!("offsets,{}\n", self.offsets_total()));
        s.push_str(&format!("framing,{}\n", self.framing));
        s.push_str(&format!("total,{}\n", self.total));
        s
    }
}

/// Encoder-side byproducts useful for verification and stats.
#[derive(Debug, Clone)]
pub struct EncodeResult {
    pub bytes: Vec<u8>,
    /// The quantized reconstruction the decoder will produce, in the same
    /// canonical order as the input scene.
    pub dequantized: AnchorScene,
    pub estimate: RateReport,
    /// Out-of-window escapes taken while coding attributes.
    pub escapes: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    /// Leave the weights section empty; decoding then requires the same
    /// models to be supplied out of band.
    pub external_weights: bool,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions {
            external_weights: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Binary plumbing
// ---------------------------------------------------------------------------

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_section(out: &mut Vec<u8>, payload: &[u8]) {
    push_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &'static str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn section(&mut self, what: &'static str) -> Result<&'a [u8]> {
        let len = self.u64(what)? as usize;
        self.take(len, what)
    }
}

// ---------------------------------------------------------------------------
// Shared walk helpers
// ---------------------------------------------------------------------------

fn round_z(models: &Models, anchors: usize) -> Result<Vec<i32>> {
    let dz = models.config.hyper_dim;
    let mut zhat = Vec::with_capacity(anchors * dz);
    for a in 0..anchors {
        for j in 0..dz {
            let s = math::round_half_away(models.hyper.z[a * dz + j]) as i64;
            if s.abs() > SYMBOL_MAX {
                return Err(Error::SymbolOverflow {
                    anchor: a,
                    group: "hyper",
                    channel: j,
                    symbol: s,
                });
            }
            zhat.push(s as i32);
        }
    }
    Ok(zhat)
}

/// Per-anchor channel values in group order, with masked offsets skipped by
/// the callers.
fn channel_value(anchor: &Anchor, cfg: &entropy::ModelConfig, c: usize) -> f64 {
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

fn offset_active(anchor: &Anchor, row: usize) -> bool {
    anchor.mask.as_ref().map_or(true, |m| m[row])
}

// ---------------------------------------------------------------------------
// Encode
// ---------------------------------------------------------------------------

/// Encodes a scene under trained (or freshly initialized) models.
///
/// The models are snapped to f32 internally; the encoder's reconstruction
/// (returned in [`EncodeResult::dequantized`]) is bit-identical to what
/// [`decode_scene`] produces from the returned bytes.
pub fn encode_scene(
    scene: &AnchorScene,
    partition: &LevelPartition,
    models: &Models,
    opts: &EncodeOptions,
) -> Result<EncodeResult> {
    let n = scene.len();
    let mut models = models.clone();
    models.snap_to_f32();
    let cfg = models.config.clone();
    cfg.validate()?;
    if partition.level_of.len() != n {
        return Err(Error::DimensionMismatch(
            "partition was built for a different scene".into(),
        ));
    }
    if cfg.levels != partition.levels() {
        return Err(Error::DimensionMismatch(format!(
            "models built for {} levels, partition has {}",
            cfg.levels,
            partition.levels()
        )));
    }
    if cfg.feature_dim != scene.config.feature_dim
        || cfg.scaling_dim != scene.config.scaling_dim
        || cfg.offset_count != scene.config.offset_count
    {
        return Err(Error::DimensionMismatch(
            "model dimensions do not match the scene".into(),
        ));
    }
    if models.hyper.z.len() != n * cfg.hyper_dim {
        return Err(Error::DimensionMismatch(format!(
            "hyperprior table has {} rows, scene has {n}",
            if cfg.hyper_dim == 0 {
                0
            } else {
                models.hyper.z.len() / cfg.hyper_dim
            }
        )));
    }

    let order = coding_order(partition);
    let levels = partition.levels();
    let raw256 = uniform256_table();

    // --- header -----------------------------------------------------------
    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    let mut flags = 0u32;
    if scene.config.has_masks {
        flags |= FLAG_HAS_MASKS;
    }
    if opts.external_weights {
        flags |= FLAG_EXTERNAL_WEIGHTS;
    }
    out.extend_from_slice(&flags.to_le_bytes());
    push_u64(&mut out, n as u64);
    out.push(levels as u8);
    out.extend_from_slice(&(cfg.feature_dim as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.scaling_dim as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.offset_count as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.hyper_dim as u16).to_le_bytes());
    for d in 0..3 {
        out.extend_from_slice(&scene.bbox_min[d].to_le_bytes());
    }
    for d in 0..3 {
        out.extend_from_slice(&scene.bbox_max[d].to_le_bytes());
    }
    for &d in &cfg.delta0 {
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    for &e in &partition.eps {
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &c in &partition.level_counts {
        push_u64(&mut out, c as u64);
    }

    // --- positions (coarse to fine) ----------------------------------------
    let mut positions = Vec::with_capacity(n * 12);
    for level in &order {
        for &a in level {
            for d in 0..3 {
                positions.extend_from_slice(&scene.anchors[a as usize].position[d].to_le_bytes());
            }
        }
    }
    push_section(&mut out, &positions);

    // --- masks --------------------------------------------------------------
    let mut masks = Vec::new();
    if scene.config.has_masks {
        let mut bit = 0u32;
        let mut acc = 0u8;
        for level in &order {
            for &a in level {
                let m = scene.anchors[a as usize].mask.as_ref().expect("validated");
                for &b in m {
                    if b {
                        acc |= 1 << bit;
                    }
                    bit += 1;
                    if bit == 8 {
                        masks.push(acc);
                        acc = 0;
                        bit = 0;
                    }
                }
            }
        }
        if bit > 0 {
            masks.push(acc);
        }
    }
    push_section(&mut out, &masks);

    // --- weights -------------------------------------------------------------
    let weight_blob = if opts.external_weights {
        Vec::new()
    } else {
        weights::write_models(&models, false)
    };
    push_section(&mut out, &weight_blob);

    // --- hyperprior -----------------------------------------------------------
    let zhat = round_z(&models, n)?;
    let dz = cfg.hyper_dim;
    let prepared = models.hyper.theta.prepare();
    let mut estimate = RateReport::default();
    let mut hyper_sec = Vec::new();
    {
        let mut ranges = Vec::with_capacity(dz);
        for j in 0..dz {
            let (mut lo, mut hi) = (0i32, 0i32);
            for a in 0..n {
                let v = zhat[a * dz + j];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let (rlo, rhi) = hyper_range(&prepared[j], lo, hi);
            ranges.push((rlo, rhi));
            hyper_sec.extend_from_slice(&rlo.to_le_bytes());
            hyper_sec.extend_from_slice(&rhi.to_le_bytes());
        }
        let tables: Vec<CdfTable> = (0..dz)
            .map(|j| hyper_table(&prepared[j], ranges[j].0, ranges[j].1))
            .collect::<Result<_>>()?;
        let mut payload = Vec::new();
        if n > 0 && dz > 0 {
            let mut enc = RangeEncoder::new();
            for level in &order {
                for &a in level {
                    for j in 0..dz {
                        let s = zhat[a as usize * dz + j];
                        enc.encode((s - ranges[j].0) as usize, &tables[j])?;
                        let p = prepared[j].bin_prob(s as f64).max(P_MIN);
                        estimate.hyper_bits += -math::log2(p);
                        estimate.coded_symbols += 1;
                    }
                }
            }
            payload = enc.finish().bytes;
        }
        push_u64(&mut hyper_sec, payload.len() as u64);
        hyper_sec.extend_from_slice(&payload);
    }
    push_section(&mut out, &hyper_sec);

    // --- attributes, level by level -------------------------------------------
    let mut store = DecodedStore::new(n, &cfg);
    for a in 0..n {
        store.set_zhat(a, &zhat[a * dz..(a + 1) * dz]);
    }
    let mut dequant = scene.clone();
    let mut escapes = 0u64;
    let mut ctx = Vec::new();
    for level in &order {
        // Predict parameters for the whole level first; contexts only refer
        // to coarser levels, which are already in the store.
        let mut params: Vec<EntropyParams> = Vec::with_capacity(level.len());
        for &a in level {
            let a = a as usize;
            let k = partition.level_of[a] as usize;
            build_context(
                a,
                &cfg,
                partition,
                scene,
                None,
                &store,
                ContextMode::Code,
                &mut ctx,
            )?;
            let (p, _) = predict_params(&cfg, &models.nets[cfg.net_index(k)], &ctx)?;
            params.push(p);
        }
        // Three streams: feature, scaling, offsets.
        let mut level_sec = Vec::new();
        let mut recon: Vec<Vec<f64>> =
            vec![vec![0.0; cfg.group_channels()]; level.len()];
        for group in Group::ALL {
            let range = cfg.group_range(group);
            let mut enc = RangeEncoder::new();
            let mut coded_any = false;
            for (i, &a) in level.iter().enumerate() {
                let anchor = &scene.anchors[a as usize];
                for c in range.clone() {
                    if group == Group::Offsets && !offset_active(anchor, (c - range.start) / 3) {
                        continue;
                    }
                    let p = &params[i];
                    let value = channel_value(anchor, &cfg, c);
                    let (s, surrogate) = code_symbol(value, p.mu[c], p.delta[c]);
                    if s.abs() > SYMBOL_MAX {
                        return Err(Error::SymbolOverflow {
                            anchor: a as usize,
                            group: group.name(),
                            channel: c - range.start,
                            symbol: s,
                        });
                    }
                    let (table, w) = gaussian_table(p.sigma[c], p.delta[c])?;
                    if s.abs() > w {
                        escapes += 1;
                    }
                    encode_attr_symbol(&mut enc, &table, w, &raw256, s)?;
                    coded_any = true;
                    let mass = gaussian::bin_mass(s as f64 * p.delta[c], p.sigma[c], p.delta[c])
                        .max(P_MIN);
                    estimate.add_group(group, -math::log2(mass));
                    estimate.coded_symbols += 1;
                    // The reconstruction is snapped to f32 like everything
                    // the decoder sees.
                    recon[i][c] = surrogate as f32 as f64;
                }
            }
            let payload = if coded_any {
                enc.finish().bytes
            } else {
                Vec::new()
            };
            push_u64(&mut level_sec, payload.len() as u64);
            level_sec.extend_from_slice(&payload);
        }
        // Fill the store and the dequantized scene.
        for (i, &a) in level.iter().enumerate() {
            let a = a as usize;
            let df = cfg.feature_dim;
            let dl = cfg.scaling_dim;
            let feature: Vec<f32> = (0..df).map(|c| recon[i][c] as f32).collect();
            let scaling: Vec<f32> = (0..dl).map(|c| recon[i][df + c] as f32).collect();
            let offsets: Vec<f32> = (0..3 * cfg.offset_count)
                .map(|c| recon[i][df + dl + c] as f32)
                .collect();
            store.insert(a, &feature, &scaling, &offsets);
            let da = &mut dequant.anchors[a];
            da.feature = feature;
            da.scaling = scaling;
            for (r, row) in da.offsets.iter_mut().enumerate() {
                for d in 0..3 {
                    row[d] = offsets[3 * r + d];
                }
            }
        }
        push_section(&mut out, &level_sec);
    }

    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(EncodeResult {
        bytes: out,
        dequantized: dequant,
        estimate,
        escapes,
    })
}

// ---------------------------------------------------------------------------
// Decode
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DecodeResult {
    pub scene: AnchorScene,
    pub partition: LevelPartition,
    /// The models carried by the stream, with `z` replaced by the decoded
    /// integer hyperpriors (so re-encoding is idempotent).
    pub models: Models,
}

/// Decodes a self-contained stream.
pub fn decode_scene(bytes: &[u8]) -> Result<DecodeResult> {
    decode_scene_impl(bytes, None)
}

/// Decodes a stream that was written with `external_weights`, using the
/// caller-provided models.
pub fn decode_scene_with_models(bytes: &[u8], models: &Models) -> Result<DecodeResult> {
    decode_scene_impl(bytes, Some(models))
}

fn decode_scene_impl(bytes: &[u8], external: Option<&Models>) -> Result<DecodeResult> {
    if bytes.len() < 8 {
        return Err(Error::Truncated("stream header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != STREAM_MAGIC {
        return Err(Error::BadHeader("not a CGSC stream".into()));
    }
    let version = r.u16("version")?;
    if version != STREAM_VERSION {
        return Err(Error::BadHeader(format!("unsupported version {version}")));
    }
    let flags = r.u32("flags")?;
    let has_masks = flags & FLAG_HAS_MASKS != 0;
    let external_weights = flags & FLAG_EXTERNAL_WEIGHTS != 0;
    let n = r.u64("anchor count")? as usize;
    let levels = r.take(1, "levels")?[0] as usize;
    if levels == 0 {
        return Err(Error::BadHeader("zero levels".into()));
    }
    let feature_dim = r.u16("feature dim")? as usize;
    let scaling_dim = r.u16("scaling dim")? as usize;
    let offset_count = r.u16("offset count")? as usize;
    let hyper_dim = r.u16("hyper dim")? as usize;
    let mut bbox_min = [0f32; 3];
    let mut bbox_max = [0f32; 3];
    for d in 0..3 {
        bbox_min[d] = r.f32("bbox")?;
    }
    for d in 0..3 {
        bbox_max[d] = r.f32("bbox")?;
    }
    let mut delta0 = [0f64; 3];
    for d in &mut delta0 {
        *d = r.f32("delta0")? as f64;
    }
    let mut eps = Vec::with_capacity(levels);
    for _ in 0..levels {
        eps.push(r.f32("eps")?);
    }
    for k in 1..levels {
        if !(eps[k] > eps[k - 1]) {
            return Err(Error::BadHeader(format!(
                "voxel sizes not strictly increasing at level {k}"
            )));
        }
    }
    let mut level_counts = Vec::with_capacity(levels);
    for _ in 0..levels {
        level_counts.push(r.u64("level counts")? as usize);
    }
    if level_counts.iter().sum::<usize>() != n {
        return Err(Error::BadHeader("level counts do not sum to anchor count".into()));
    }

    // --- positions -----------------------------------------------------------
    let pos_sec = r.section("positions")?;
    if pos_sec.len() != n * 12 {
        return Err(Error::Truncated("positions section"));
    }
    // Stream order: coarse to fine.
    let mut stream_pos = Vec::with_capacity(n);
    for i in 0..n {
        let p = &pos_sec[i * 12..(i + 1) * 12];
        stream_pos.push([
            f32::from_le_bytes(p[0..4].try_into().unwrap()),
            f32::from_le_bytes(p[4..8].try_into().unwrap()),
            f32::from_le_bytes(p[8..12].try_into().unwrap()),
        ]);
        if stream_pos[i].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index: i,
                field: "position",
            });
        }
    }
    let mut stream_level = Vec::with_capacity(n);
    for k in (0..levels).rev() {
        for _ in 0..level_counts[k] {
            stream_level.push(k as u8);
        }
    }

    // Canonical order: stable sort by position. Within identical positions
    // the stream order (coarser first, then canonical within level) is
    // already the canonical order, so a stable sort reproduces the
    // encoder's indices exactly.
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        let pa = stream_pos[a as usize];
        let pb = stream_pos[b as usize];
        pa[0]
            .total_cmp(&pb[0])
            .then_with(|| pa[1].total_cmp(&pb[1]))
            .then_with(|| pa[2].total_cmp(&pb[2]))
    });
    let mut canon_of_stream = vec![0u32; n];
    for (canon, &stream) in order.iter().enumerate() {
        canon_of_stream[stream as usize] = canon as u32;
    }
    let positions: Vec<[f32; 3]> = order.iter().map(|&s| stream_pos[s as usize]).collect();
    let mut level_of = vec![0u8; n];
    for (stream, &canon) in canon_of_stream.iter().enumerate() {
        level_of[canon as usize] = stream_level[stream];
    }

    // --- masks -----------------------------------------------------------------
    let mask_sec = r.section("masks")?;
    let mut masks_canon: Vec<Option<Vec<bool>>> = vec![None; n];
    if has_masks {
        let total_bits = n * offset_count;
        if mask_sec.len() != (total_bits + 7) / 8 {
            return Err(Error::Truncated("mask section"));
        }
        for stream in 0..n {
            let mut m = Vec::with_capacity(offset_count);
            for row in 0..offset_count {
                let bit = stream * offset_count + row;
                m.push(mask_sec[bit / 8] >> (bit % 8) & 1 == 1);
            }
            masks_canon[canon_of_stream[stream] as usize] = Some(m);
        }
    } else if !mask_sec.is_empty() {
        return Err(Error::BadHeader("mask section present without mask flag".into()));
    }

    // --- weights ----------------------------------------------------------------
    let weight_sec = r.section("weights")?;
    let mut models = if external_weights {
        external
            .ok_or_else(|| {
                Error::BadHeader("stream uses external weights; models required".into())
            })?
            .clone()
    } else {
        weights::read_models(weight_sec)?
    };
    models.snap_to_f32();
    let cfg = models.config.clone();
    if cfg.feature_dim != feature_dim
        || cfg.scaling_dim != scaling_dim
        || cfg.offset_count != offset_count
        || cfg.hyper_dim != hyper_dim
        || cfg.levels != levels
    {
        return Err(Error::BadHeader(
            "model dimensions disagree with stream header".into(),
        ));
    }

    // --- hyperprior ---------------------------------------------------------------
    let hyper_sec = r.section("hyper")?;
    let mut hr = Reader {
        buf: hyper_sec,
        pos: 0,
    };
    let dz = hyper_dim;
    let mut ranges = Vec::with_capacity(dz);
    for _ in 0..dz {
        let lo = hr.i32("hyper range")?;
        let hi = hr.i32("hyper range")?;
        if hi < lo {
            return Err(Error::BadHeader("inverted hyper range".into()));
        }
        ranges.push((lo, hi));
    }
    let hyper_payload = hr.section("hyper payload")?;
    let prepared = models.hyper.theta.prepare();
    let tables: Vec<CdfTable> = (0..dz)
        .map(|j| hyper_table(&prepared[j], ranges[j].0, ranges[j].1))
        .collect::<Result<_>>()?;
    // Coding order on the decode side: canonical indices grouped by level,
    // coarse to fine — identical to the encoder's traversal.
    let mut order_by_level: Vec<Vec<u32>> = vec![Vec::new(); levels];
    for (canon, &l) in level_of.iter().enumerate() {
        order_by_level[l as usize].push(canon as u32);
    }
    order_by_level.reverse();
    let mut zhat = vec![0i32; n * dz];
    if n > 0 && dz > 0 {
        let mut dec = RangeDecoder::new(hyper_payload)?;
        for level in &order_by_level {
            for &a in level {
                for j in 0..dz {
                    let sym = dec.decode(&tables[j])? as i32;
                    zhat[a as usize * dz + j] = sym + ranges[j].0;
                }
            }
        }
    }
    models.hyper.z = zhat.iter().map(|&v| v as f64).collect();

    // --- partition reconstruction ----------------------------------------------
    let mut parent_of: Vec<Option<u32>> = vec![None; n];
    for k in 0..levels.saturating_sub(1) {
        // Unique representative per voxel among anchors of level > k.
        let mut rep_map: HashMap<[i64; 3], u32> = HashMap::new();
        for (i, &l) in level_of.iter().enumerate() {
            if (l as usize) > k {
                let key = voxel_key(positions[i], eps[k + 1]);
                if rep_map.insert(key, i as u32).is_some() {
                    return Err(Error::Sequencing(format!(
                        "two coarse anchors share a voxel at level {}",
                        k + 1
                    )));
                }
            }
        }
        for (i, &l) in level_of.iter().enumerate() {
            if l as usize == k {
                let key = voxel_key(positions[i], eps[k + 1]);
                let rep = rep_map.get(&key).ok_or_else(|| {
                    Error::Sequencing(format!("anchor {i} has no representative at level {}", k + 1))
                })?;
                parent_of[i] = Some(*rep);
            }
        }
    }
    let partition = LevelPartition {
        kappa: eps.iter().map(|&e| e as f64 / eps[0] as f64).collect(),
        eps,
        level_of,
        parent_of,
        level_counts,
        warnings: Vec::new(),
    };

    // --- attributes ---------------------------------------------------------------
    let scene_cfg = SceneConfig {
        feature_dim,
        scaling_dim,
        offset_count,
        has_masks,
    };
    let anchors: Vec<Anchor> = (0..n)
        .map(|i| Anchor {
            position: positions[i],
            feature: vec![0.0; feature_dim],
            scaling: vec![0.0; scaling_dim],
            offsets: vec![[0.0; 3]; offset_count],
            mask: masks_canon[i].take(),
        })
        .collect();
    let mut scene = AnchorScene {
        anchors,
        bbox_min,
        bbox_max,
        config: scene_cfg,
    };

    let raw256 = uniform256_table();
    let mut store = DecodedStore::new(n, &cfg);
    for a in 0..n {
        store.set_zhat(a, &zhat[a * dz..(a + 1) * dz]);
    }
    let mut ctx = Vec::new();
    for level in &order_by_level {
        let level_sec = r.section("attribute payload")?;
        let mut lr = Reader {
            buf: level_sec,
            pos: 0,
        };
        let mut params: Vec<EntropyParams> = Vec::with_capacity(level.len());
        for &a in level {
            let a = a as usize;
            let k = partition.level_of[a] as usize;
            build_context(
                a,
                &cfg,
                &partition,
                &scene,
                None,
                &store,
                ContextMode::Code,
                &mut ctx,
            )?;
            let (p, _) = predict_params(&cfg, &models.nets[cfg.net_index(k)], &ctx)?;
            params.push(p);
        }
        let mut recon: Vec<Vec<f64>> = vec![vec![0.0; cfg.group_channels()]; level.len()];
        for group in Group::ALL {
            let range = cfg.group_range(group);
            let payload = lr.section("attribute stream")?;
            let mut symbols_expected = 0usize;
            for &a in level.iter() {
                let anchor = &scene.anchors[a as usize];
                for c in range.clone() {
                    if group == Group::Offsets && !offset_active(anchor, (c - range.start) / 3) {
                        continue;
                    }
                    symbols_expected += 1;
                    let _ = c;
                }
            }
            let mut dec = if symbols_expected > 0 {
                Some(RangeDecoder::new(payload)?)
            } else {
                if !payload.is_empty() {
                    return Err(Error::BadHeader("non-empty stream with no symbols".into()));
                }
                None
            };
            for (i, &a) in level.iter().enumerate() {
                let has_mask = scene.anchors[a as usize].mask.clone();
                for c in range.clone() {
                    if group == Group::Offsets {
                        let row = (c - range.start) / 3;
                        if let Some(m) = &has_mask {
                            if !m[row] {
                                recon[i][c] = 0.0;
                                continue;
                            }
                        }
                    }
                    let p = &params[i];
                    let (table, w) = gaussian_table(p.sigma[c], p.delta[c])?;
                    let dec = dec.as_mut().expect("symbols expected");
                    let s = decode_attr_symbol(dec, &table, w, &raw256)?;
                    recon[i][c] = (p.mu[c] + s as f64 * p.delta[c]) as f32 as f64;
                }
            }
        }
        for (i, &a) in level.iter().enumerate() {
            let a = a as usize;
            let df = cfg.feature_dim;
            let dl = cfg.scaling_dim;
            let feature: Vec<f32> = (0..df).map(|c| recon[i][c] as f32).collect();
            let scaling: Vec<f32> = (0..dl).map(|c| recon[i][df + c] as f32).collect();
            let offsets: Vec<f32> = (0..3 * cfg.offset_count)
                .map(|c| recon[i][df + dl + c] as f32)
                .collect();
            store.insert(a, &feature, &scaling, &offsets);
            let da = &mut scene.anchors[a];
            da.feature = feature;
            da.scaling = scaling;
            for (row, out_row) in da.offsets.iter_mut().enumerate() {
                for d in 0..3 {
                    out_row[d] = offsets[3 * row + d];
                }
            }
        }
    }
    if r.pos != body.len() {
        return Err(Error::BadHeader(format!(
            "{} trailing bytes after the last section",
            body.len() - r.pos
        )));
    }

    Ok(DecodeResult {
        scene,
        partition,
        models,
    })
}

// ---------------------------------------------------------------------------
// Rate estimation
// ---------------------------------------------------------------------------

/// Evaluates the entropy objective in code mode: the sum of
/// `-log2 p(symbol)` over the hyperprior and every unmasked attribute
/// channel, with probabilities floored at `P_MIN`. This mirrors the coding
/// walk exactly, so the actual payload tracks it to within the CDF
/// quantization and framing overhead.
pub fn estimate_rate(
    scene: &AnchorScene,
    partition: &LevelPartition,
    models: &Models,
) -> Result<RateReport> {
    let n = scene.len();
    let mut models = models.clone();
    models.snap_to_f32();
    let cfg = models.config.clone();
    let zhat = round_z(&models, n)?;
    let dz = cfg.hyper_dim;
    let prepared = models.hyper.theta.prepare();
    let mut report = RateReport::default();
    // Bits are accumulated per anchor and summed in canonical order at the
    // end, so the total does not depend on the level traversal.
    let mut per_anchor = vec![[0.0f64; 4]; n];
    for a in 0..n {
        for j in 0..dz {
            let p = prepared[j].bin_prob(zhat[a * dz + j] as f64).max(P_MIN);
            per_anchor[a][0] += -math::log2(p);
            report.coded_symbols += 1;
        }
    }
    let mut store = DecodedStore::new(n, &cfg);
    for a in 0..n {
        store.set_zhat(a, &zhat[a * dz..(a + 1) * dz]);
    }
    let order = coding_order(partition);
    let mut ctx = Vec::new();
    for level in &order {
        let mut recon: Vec<(u32, Vec<f32>, Vec<f32>, Vec<f32>)> = Vec::with_capacity(level.len());
        for &a in level {
            let ai = a as usize;
            let k = partition.level_of[ai] as usize;
            build_context(
                ai,
                &cfg,
                partition,
                scene,
                None,
                &store,
                ContextMode::Code,
                &mut ctx,
            )?;
            let (p, _) = predict_params(&cfg, &models.nets[cfg.net_index(k)], &ctx)?;
            let anchor = &scene.anchors[ai];
            let df = cfg.feature_dim;
            let dl = cfg.scaling_dim;
            let mut feature = vec![0f32; df];
            let mut scaling = vec![0f32; dl];
            let mut offsets = vec![0f32; 3 * cfg.offset_count];
            for group in Group::ALL {
                let range = cfg.group_range(group);
                for c in range.clone() {
                    if group == Group::Offsets && !offset_active(anchor, (c - range.start) / 3) {
                        continue;
                    }
                    let value = channel_value(anchor, &cfg, c);
                    let (s, surrogate) = code_symbol(value, p.mu[c], p.delta[c]);
                    if s.abs() > SYMBOL_MAX {
                        return Err(Error::SymbolOverflow {
                            anchor: ai,
                            group: group.name(),
                            channel: c - range.start,
                            symbol: s,
                        });
                    }
                    let mass =
                        gaussian::bin_mass(s as f64 * p.delta[c], p.sigma[c], p.delta[c]).max(P_MIN);
                    per_anchor[ai][1 + group.index()] += -math::log2(mass);
                    report.coded_symbols += 1;
                    let sv = surrogate as f32;
                    if c < df {
                        feature[c] = sv;
                    } else if c < df + dl {
                        scaling[c - df] = sv;
                    } else {
                        offsets[c - df - dl] = sv;
                    }
                }
            }
            recon.push((a, feature, scaling, offsets));
        }
        for (a, f, s, o) in recon {
            store.insert(a as usize, &f, &s, &o);
        }
    }
    for bits in &per_anchor {
        report.hyper_bits += bits[0];
        report.feature_bits += bits[1];
        report.scaling_bits += bits[2];
        report.offset_bits += bits[3];
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Storage report
// ---------------------------------------------------------------------------

/// Re-parses a stream's section framing into per-component byte counts.
pub fn storage_report(bytes: &[u8]) -> Result<StorageReport> {
    if bytes.len() < 8 {
        return Err(Error::Truncated("stream header"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4, "magic")? != STREAM_MAGIC {
        return Err(Error::BadHeader("not a CGSC stream".into()));
    }
    let _version = r.u16("version")?;
    let _flags = r.u32("flags")?;
    let _n = r.u64("anchor count")?;
    let levels = r.take(1, "levels")?[0] as usize;
    let _ = r.u16("feature dim")?;
    let _ = r.u16("scaling dim")?;
    let _ = r.u16("offset count")?;
    let dz = r.u16("hyper dim")? as usize;
    for _ in 0..6 {
        r.f32("bbox")?;
    }
    for _ in 0..3 {
        r.f32("delta0")?;
    }
    for _ in 0..levels {
        r.f32("eps")?;
    }
    for _ in 0..levels {
        r.u64("level counts")?;
    }
    let header_end = r.pos;

    let mut report = StorageReport {
        total: bytes.len() as u64,
        header: header_end as u64,
        ..Default::default()
    };
    let mut framing = 4u64; // CRC trailer
    let positions = r.section("positions")?;
    report.positions = positions.len() as u64;
    framing += 8;
    let masks = r.section("masks")?;
    report.masks = masks.len() as u64;
    framing += 8;
    let weights = r.section("weights")?;
    report.weights = weights.len() as u64;
    framing += 8;
    let hyper = r.section("hyper")?;
    // Ranges are framing; the payload is the hyper cost.
    let ranges_len = 8 * dz as u64;
    if (hyper.len() as u64) < ranges_len + 8 {
        return Err(Error::Truncated("hyper section"));
    }
    report.hyper = hyper.len() as u64 - ranges_len - 8;
    framing += 8 + ranges_len + 8;
    for _ in 0..levels {
        let level_sec = r.section("attribute payload")?;
        let mut lr = Reader {
            buf: level_sec,
            pos: 0,
        };
        let f = lr.section("feature stream")?.len() as u64;
        let s = lr.section("scaling stream")?.len() as u64;
        let o = lr.section("offset stream")?.len() as u64;
        report.levels.push(LevelBytes {
            feature: f,
            scaling: s,
            offsets: o,
        });
        framing += 8 + 24;
    }
    report.framing = framing;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::ModelConfig;
    use crate::partition::{partition, PartitionConfig};
    use crate::synth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn models_for(scene: &AnchorScene, part: &LevelPartition, seed: u64) -> Models {
        let mut cfg = ModelConfig::for_scene(scene, part.levels());
        cfg.hidden = 16;
        cfg.hyper_dim = scene.config.feature_dim.div_euclid(4).max(1);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Models::init(cfg, scene.len(), &mut rng)
    }

    fn roundtrip(scene: &AnchorScene, pcfg: &PartitionConfig, seed: u64) {
        let part = partition(scene, pcfg).unwrap();
        let models = models_for(scene, &part, seed);
        let enc = encode_scene(scene, &part, &models, &EncodeOptions::default()).unwrap();
        let dec = decode_scene(&enc.bytes).unwrap();
        assert_eq!(dec.scene, enc.dequantized);
        assert_eq!(dec.partition, part);
    }

    #[test]
    fn single_anchor_round_trips() {
        let scene = synth::grid_scene(1, true);
        roundtrip(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }, 3);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = synth::grid_scene(0, false);
        roundtrip(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }, 4);
    }

    #[test]
    fn corrupting_a_byte_fails_crc() {
        let scene = synth::grid_scene(3, false);
        let part = partition(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }).unwrap();
        let models = models_for(&scene, &part, 5);
        let mut enc = encode_scene(&scene, &part, &models, &EncodeOptions::default()).unwrap();
        let mid = enc.bytes.len() / 2;
        enc.bytes[mid] ^= 0x40;
        assert!(matches!(
            decode_scene(&enc.bytes),
            Err(Error::CrcMismatch { .. })
        ));
    }

    #[test]
    fn all_masked_offsets_cost_no_payload() {
        let mut scene = synth::grid_scene(3, true);
        for a in &mut scene.anchors {
            a.mask = Some(vec![false; scene.config.offset_count]);
        }
        let part = partition(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }).unwrap();
        let models = models_for(&scene, &part, 6);
        let enc = encode_scene(&scene, &part, &models, &EncodeOptions::default()).unwrap();
        let report = storage_report(&enc.bytes).unwrap();
        assert_eq!(report.offsets_total(), 0);
        let dec = decode_scene(&enc.bytes).unwrap();
        assert_eq!(dec.scene, enc.dequantized);
        for a in &dec.scene.anchors {
            for row in &a.offsets {
                assert_eq!(*row, [0.0f32; 3]);
            }
        }
    }

    #[test]
    fn storage_report_sections_sum_to_file_size() {
        let scene = synth::grid_scene(4, true);
        let part = partition(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }).unwrap();
        let models = models_for(&scene, &part, 7);
        let enc = encode_scene(&scene, &part, &models, &EncodeOptions::default()).unwrap();
        let rep = storage_report(&enc.bytes).unwrap();
        let sum = rep.header
            + rep.positions
            + rep.masks
            + rep.weights
            + rep.hyper
            + rep.feature_total()
            + rep.scaling_total()
            + rep.offsets_total()
            + rep.framing;
        assert_eq!(sum, rep.total);
        // One anchor stores 12 raw position bytes.
        assert_eq!(rep.positions, 64 * 12);
    }

    #[test]
    fn external_weights_round_trip() {
        let scene = synth::grid_scene(3, false);
        let part = partition(&scene, &PartitionConfig { eps0: 1.0, ..Default::default() }).unwrap();
        let models = models_for(&scene, &part, 8);
        let enc = encode_scene(
            &scene,
            &part,
            &models,
            &EncodeOptions {
                external_weights: true,
            },
        )
        .unwrap();
        assert!(matches!(decode_scene(&enc.bytes), Err(Error::BadHeader(_))));
        let dec = decode_scene_with_models(&enc.bytes, &models).unwrap();
        assert_eq!(dec.scene, enc.dequantized);
    }
}
