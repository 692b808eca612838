//! Anchor scene data model and file I/O.
//!
//! A scene is an ordered list of anchors. Each anchor carries a position,
//! a context feature vector, a scaling vector, `k` offset rows and an
//! optional per-offset activity mask. Scenes are kept in a canonical order
//! (lexicographic by position with a bit-pattern tie-break) so that every
//! index-based decision downstream — most importantly the minimum-index
//! voxel representative selection — is identical on every platform.
//!
//! Scene files are binary little-endian PLY; the exact layout and the
//! default property names are documented in `docs/scene-format.md`.

use std::cmp::Ordering;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::partition::LevelPartition;

/// Scene-wide attribute dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SceneConfig {
    /// Feature vector length per anchor.
    pub feature_dim: usize,
    /// Scaling vector length per anchor.
    pub scaling_dim: usize,
    /// Number of offset rows per anchor (each row is a 3-vector).
    pub offset_count: usize,
    /// Whether anchors carry offset masks.
    pub has_masks: bool,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            feature_dim: 50,
            scaling_dim: 3,
            offset_count: 10,
            has_masks: false,
        }
    }
}

/// One anchor point.
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub position: [f32; 3],
    pub feature: Vec<f32>,
    pub scaling: Vec<f32>,
    /// `offset_count` rows of 3 world-space offsets.
    pub offsets: Vec<[f32; 3]>,
    /// Per-offset activity bits; `None` when the scene has no masks.
    pub mask: Option<Vec<bool>>,
}

/// A full anchor scene in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorScene {
    pub anchors: Vec<Anchor>,
    pub bbox_min: [f32; 3],
    pub bbox_max: [f32; 3],
    pub config: SceneConfig,
}

/// Canonical anchor comparison: lexicographic by position using the IEEE
/// total order per component (which is numeric order plus a bit-pattern
/// tie-break for -0.0 vs +0.0), then by the bit patterns of the remaining
/// attributes so the order is total even for coincident positions.
pub fn canonical_cmp(a: &Anchor, b: &Anchor) -> Ordering {
    for d in 0..3 {
        match a.position[d].total_cmp(&b.position[d]) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    bits(&a.feature)
        .cmp(&bits(&b.feature))
        .then_with(|| bits(&a.scaling).cmp(&bits(&b.scaling)))
        .then_with(|| {
            let fa: Vec<u32> = a.offsets.iter().flatten().map(|x| x.to_bits()).collect();
            let fb: Vec<u32> = b.offsets.iter().flatten().map(|x| x.to_bits()).collect();
            fa.cmp(&fb)
        })
        .then_with(|| a.mask.cmp(&b.mask))
}

impl AnchorScene {
    /// Validates, sorts into canonical order and computes the bounding box.
    pub fn from_anchors(anchors: Vec<Anchor>, config: SceneConfig) -> Result<AnchorScene> {
        let mut scene = AnchorScene {
            anchors,
            bbox_min: [0.0; 3],
            bbox_max: [0.0; 3],
            config,
        };
        scene.validate()?;
        scene.anchors.sort_by(canonical_cmp);
        scene.recompute_bbox();
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn recompute_bbox(&mut self) {
        if self.anchors.is_empty() {
            self.bbox_min = [0.0; 3];
            self.bbox_max = [0.0; 3];
            return;
        }
        let mut min = [f32::INFINITY; 3];
        let mut max = [f32::NEG_INFINITY; 3];
        for a in &self.anchors {
            for d in 0..3 {
                min[d] = min[d].min(a.position[d]);
                max[d] = max[d].max(a.position[d]);
            }
        }
        self.bbox_min = min;
        self.bbox_max = max;
    }

    /// Checks dimensions and finiteness of every anchor.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        for (i, a) in self.anchors.iter().enumerate() {
            if a.feature.len() != c.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {i}: feature has {} entries, config says {}",
                    a.feature.len(),
                    c.feature_dim
                )));
            }
            if a.scaling.len() != c.scaling_dim {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {i}: scaling has {} entries, config says {}",
                    a.scaling.len(),
                    c.scaling_dim
                )));
            }
            if a.offsets.len() != c.offset_count {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {i}: {} offset rows, config says {}",
                    a.offsets.len(),
                    c.offset_count
                )));
            }
            match (&a.mask, c.has_masks) {
                (Some(m), true) => {
                    if m.len() != c.offset_count {
                        return Err(Error::DimensionMismatch(format!(
                            "anchor {i}: mask has {} bits, config says {}",
                            m.len(),
                            c.offset_count
                        )));
                    }
                }
                (None, false) => {}
                _ => {
                    return Err(Error::DimensionMismatch(format!(
                        "anchor {i}: mask presence disagrees with scene config"
                    )))
                }
            }
            if a.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i, field: "position" });
            }
            if a.feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i, field: "feature" });
            }
            if a.scaling.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i, field: "scaling" });
            }
            if a.offsets.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i, field: "offsets" });
            }
        }
        Ok(())
    }

    /// Positions of all anchors, in order.
    pub fn positions(&self) -> Vec<[f32; 3]> {
        self.anchors.iter().map(|a| a.position).collect()
    }
}

/// World-space positions spawned by one anchor: `x + O_i * l` elementwise,
/// one per offset row. Requires a 3-dimensional scaling vector.
pub fn spawn_positions(anchor: &Anchor) -> Result<Vec<[f32; 3]>> {
    if anchor.scaling.len() != 3 {
        return Err(Error::DimensionMismatch(format!(
            "spawn_positions needs a 3-vector scaling, got {}",
            anchor.scaling.len()
        )));
    }
    Ok(anchor
        .offsets
        .iter()
        .map(|o| {
            [
                anchor.position[0] + o[0] * anchor.scaling[0],
                anchor.position[1] + o[1] * anchor.scaling[1],
                anchor.position[2] + o[2] * anchor.scaling[2],
            ]
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Inter-level feature similarity
// ---------------------------------------------------------------------------

pub const SIMILARITY_BINS: usize = 20;

/// Histogram of child-parent feature cosine similarities for one
/// (child level, parent level) pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimilarityHistogram {
    pub child_level: usize,
    pub parent_level: usize,
    /// Counts over `SIMILARITY_BINS` equal bins spanning [-1, 1].
    pub bins: Vec<u64>,
    pub count: u64,
    pub sum: f64,
}

impl SimilarityHistogram {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Cosine-similarity report between anchors and their partition parents.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SimilarityReport {
    pub pairs: Vec<SimilarityHistogram>,
    /// Pairs skipped because one of the feature vectors had zero norm.
    pub skipped_zero_norm: u64,
}

impl SimilarityReport {
    /// Mean cosine over all (child, parent) pairs in the report.
    pub fn overall_mean(&self) -> f64 {
        let count: u64 = self.pairs.iter().map(|h| h.count).sum();
        if count == 0 {
            return 0.0;
        }
        self.pairs.iter().map(|h| h.sum).sum::<f64>() / count as f64
    }
}

fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Accumulates the cosine similarity between every anchor's feature and its
/// parent's feature, bucketed by (child level, parent level).
pub fn similarity_report(scene: &AnchorScene, partition: &LevelPartition) -> SimilarityReport {
    let mut pairs: Vec<SimilarityHistogram> = Vec::new();
    let mut skipped = 0u64;
    for (i, parent) in partition.parent_of.iter().enumerate() {
        let Some(p) = parent else { continue };
        let child_level = partition.level_of[i] as usize;
        let parent_level = partition.level_of[*p as usize] as usize;
        let Some(cos) = cosine(
            &scene.anchors[i].feature,
            &scene.anchors[*p as usize].feature,
        ) else {
            skipped += 1;
            continue;
        };
        let hist = match pairs
            .iter_mut()
            .find(|h| h.child_level == child_level && h.parent_level == parent_level)
        {
            Some(h) => h,
            None => {
                pairs.push(SimilarityHistogram {
                    child_level,
                    parent_level,
                    bins: vec![0; SIMILARITY_BINS],
                    count: 0,
                    sum: 0.0,
                });
                pairs.last_mut().unwrap()
            }
        };
        let bin = (((cos + 1.0) / 2.0 * SIMILARITY_BINS as f64) as usize).min(SIMILARITY_BINS - 1);
        hist.bins[bin] += 1;
        hist.count += 1;
        hist.sum += cos;
    }
    pairs.sort_by_key(|h| (h.child_level, h.parent_level));
    SimilarityReport {
        pairs,
        skipped_zero_norm: skipped,
    }
}

// ---------------------------------------------------------------------------
// PLY I/O
// ---------------------------------------------------------------------------

/// Maps attribute roles to scene-file property names. Indexed properties are
/// `<prefix><i>` counted contiguously from zero; the attribute dimensions
/// are inferred from how many such properties the file declares.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PropertyMap {
    pub position: [String; 3],
    pub feature_prefix: String,
    pub scaling_prefix: String,
    pub offset_prefix: String,
    pub mask_prefix: String,
}

impl Default for PropertyMap {
    fn default() -> Self {
        PropertyMap {
            position: ["x".into(), "y".into(), "z".into()],
            feature_prefix: "f_anchor_feat_".into(),
            scaling_prefix: "scale_".into(),
            offset_prefix: "f_offset_".into(),
            mask_prefix: "mask_".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PropType {
    F32,
    U8,
}

impl PropType {
    fn size(self) -> usize {
        match self {
            PropType::F32 => 4,
            PropType::U8 => 1,
        }
    }
}

fn parse_header(text: &str) -> Result<(usize, Vec<(String, PropType)>)> {
    let mut lines = text.lines();
    if lines.next().map(|l| l.trim_end_matches('\r')) != Some("ply") {
        return Err(Error::InvalidScene("missing `ply` magic".into()));
    }
    let mut count: Option<usize> = None;
    let mut props: Vec<(String, PropType)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let Some(line) = lines.next() else {
            return Err(Error::InvalidScene("header has no end_header".into()));
        };
        let line = line.trim_end_matches('\r').trim();
        if line == "end_header" {
            break;
        }
        if line.is_empty() || line.starts_with("comment") || line.starts_with("obj_info") {
            continue;
        }
        if let Some(fmt) = line.strip_prefix("format ") {
            if !fmt.starts_with("binary_little_endian") {
                return Err(Error::InvalidScene(format!(
                    "unsupported format `{fmt}`; expected binary_little_endian"
                )));
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let name = it.next().unwrap_or("");
            if name != "vertex" {
                return Err(Error::InvalidScene(format!(
                    "unsupported element `{name}`; only vertex scenes are readable"
                )));
            }
            in_vertex = true;
            count = Some(
                it.next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::InvalidScene("bad element count".into()))?,
            );
            continue;
        }
        if let Some(rest) = line.strip_prefix("property ") {
            if !in_vertex {
                return Err(Error::InvalidScene("property before element".into()));
            }
            let mut it = rest.split_whitespace();
            let ty = it.next().unwrap_or("");
            let name = it
                .next()
                .ok_or_else(|| Error::InvalidScene("property without name".into()))?;
            let ty = match ty {
                "float" | "float32" => PropType::F32,
                "uchar" | "uint8" => PropType::U8,
                other => {
                    return Err(Error::InvalidScene(format!(
                        "unsupported property type `{other}` for `{name}`"
                    )))
                }
            };
            props.push((name.to_string(), ty));
            continue;
        }
        return Err(Error::InvalidScene(format!(
            "unrecognized header line `{line}`"
        )));
    }
    let count = count.ok_or_else(|| Error::InvalidScene("no vertex element".into()))?;
    Ok((count, props))
}

/// Finds contiguous indexed properties `<prefix>0..` and returns their byte
/// offsets within a row.
fn indexed_offsets(
    props: &[(String, PropType, usize)],
    prefix: &str,
    want: PropType,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    loop {
        let name = format!("{prefix}{}", out.len());
        match props.iter().find(|(n, _, _)| *n == name) {
            Some((_, ty, off)) => {
                if *ty != want {
                    return Err(Error::InvalidScene(format!(
                        "property `{name}` has the wrong type"
                    )));
                }
                out.push(*off);
            }
            None => break,
        }
    }
    Ok(out)
}

/// Loads a scene file. Attribute dimensions are inferred from the declared
/// properties; anchors come back in canonical order with a freshly computed
/// bounding box.
pub fn load_scene(path: &Path, map: &PropertyMap) -> Result<AnchorScene> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    load_scene_bytes(&bytes, map)
}

pub fn load_scene_bytes(bytes: &[u8], map: &PropertyMap) -> Result<AnchorScene> {
    // The header is ASCII; locate end_header before attempting UTF-8.
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or_else(|| Error::InvalidScene("header has no end_header".into()))?;
    let header_text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::InvalidScene("header is not ASCII".into()))?;
    let (count, props) = parse_header(header_text)?;

    let mut offset = 0usize;
    let mut laid: Vec<(String, PropType, usize)> = Vec::with_capacity(props.len());
    for (name, ty) in props {
        laid.push((name, ty, offset));
        offset += ty.size();
    }
    let stride = offset;

    let find = |name: &str| -> Result<(PropType, usize)> {
        laid.iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, t, o)| (*t, *o))
            .ok_or_else(|| Error::MissingProperty { name: name.into() })
    };
    let mut pos_off = [0usize; 3];
    for d in 0..3 {
        let (ty, off) = find(&map.position[d])?;
        if ty != PropType::F32 {
            return Err(Error::InvalidScene(format!(
                "position property `{}` must be float",
                map.position[d]
            )));
        }
        pos_off[d] = off;
    }
    let feat_off = indexed_offsets(&laid, &map.feature_prefix, PropType::F32)?;
    if feat_off.is_empty() {
        return Err(Error::MissingProperty {
            name: format!("{}0", map.feature_prefix),
        });
    }
    let scale_off = indexed_offsets(&laid, &map.scaling_prefix, PropType::F32)?;
    if scale_off.is_empty() {
        return Err(Error::MissingProperty {
            name: format!("{}0", map.scaling_prefix),
        });
    }
    let off_off = indexed_offsets(&laid, &map.offset_prefix, PropType::F32)?;
    if off_off.is_empty() || off_off.len() % 3 != 0 {
        return Err(Error::MissingProperty {
            name: format!("{}{}", map.offset_prefix, off_off.len()),
        });
    }
    let mask_off = indexed_offsets(&laid, &map.mask_prefix, PropType::U8)?;
    let k_off = off_off.len() / 3;
    if !mask_off.is_empty() && mask_off.len() != k_off {
        return Err(Error::InvalidScene(format!(
            "{} mask properties for {} offsets",
            mask_off.len(),
            k_off
        )));
    }

    let body = &bytes[header_end..];
    let need = count
        .checked_mul(stride)
        .ok_or_else(|| Error::InvalidScene("vertex count overflow".into()))?;
    if body.len() < need {
        return Err(Error::Truncated("scene file body"));
    }

    let read_f32 =
        |row: &[u8], off: usize| -> f32 { f32::from_le_bytes(row[off..off + 4].try_into().unwrap()) };

    let config = SceneConfig {
        feature_dim: feat_off.len(),
        scaling_dim: scale_off.len(),
        offset_count: k_off,
        has_masks: !mask_off.is_empty(),
    };
    let mut anchors = Vec::with_capacity(count);
    for i in 0..count {
        let row = &body[i * stride..(i + 1) * stride];
        let position = [
            read_f32(row, pos_off[0]),
            read_f32(row, pos_off[1]),
            read_f32(row, pos_off[2]),
        ];
        let feature: Vec<f32> = feat_off.iter().map(|&o| read_f32(row, o)).collect();
        let scaling: Vec<f32> = scale_off.iter().map(|&o| read_f32(row, o)).collect();
        let offsets: Vec<[f32; 3]> = (0..k_off)
            .map(|k| {
                [
                    read_f32(row, off_off[3 * k]),
                    read_f32(row, off_off[3 * k + 1]),
                    read_f32(row, off_off[3 * k + 2]),
                ]
            })
            .collect();
        let mask = if config.has_masks {
            let mut bits = Vec::with_capacity(k_off);
            for &o in &mask_off {
                match row[o] {
                    0 => bits.push(false),
                    1 => bits.push(true),
                    v => {
                        return Err(Error::InvalidScene(format!(
                            "anchor {i}: mask byte {v} is not 0/1"
                        )))
                    }
                }
            }
            Some(bits)
        } else {
            None
        };
        anchors.push(Anchor {
            position,
            feature,
            scaling,
            offsets,
            mask,
        });
    }
    AnchorScene::from_anchors(anchors, config)
}

/// Writes a scene with the default property names. `load_scene` of the
/// result reproduces the scene bit-exactly.
pub fn save_scene(scene: &AnchorScene, path: &Path) -> Result<()> {
    let bytes = save_scene_bytes(scene);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn save_scene_bytes(scene: &AnchorScene) -> Vec<u8> {
    let c = &scene.config;
    let map = PropertyMap::default();
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.anchors.len()));
    for name in &map.position {
        header.push_str(&format!("property float {name}\n"));
    }
    for i in 0..c.feature_dim {
        header.push_str(&format!("property float {}{}\n", map.feature_prefix, i));
    }
    for i in 0..c.scaling_dim {
        header.push_str(&format!("property float {}{}\n", map.scaling_prefix, i));
    }
    for i in 0..c.offset_count * 3 {
        header.push_str(&format!("property float {}{}\n", map.offset_prefix, i));
    }
    if c.has_masks {
        for i in 0..c.offset_count {
            header.push_str(&format!("property uchar {}{}\n", map.mask_prefix, i));
        }
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    for a in &scene.anchors {
        for d in 0..3 {
            out.extend_from_slice(&a.position[d].to_le_bytes());
        }
        for &v in &a.feature {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in &a.scaling {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for row in &a.offsets {
            for &v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(mask) = &a.mask {
            for &b in mask {
                out.push(b as u8);
            }
        }
    }
    out
}
