//! Hierarchical anchor partitioning.
//!
//! Anchors are divided into `K` disjoint levels bottom-up. Level sets are
//! built by voxel quantization: at scale `eps_k` every occupied voxel keeps
//! one representative (the member with the minimum canonical index), the
//! survivors form the next coarser candidate set, and an anchor's final
//! level is the last candidate set that contains it. The scale multiplier
//! `kappa_k` for each level is found with a binary search so that each
//! candidate set shrinks by a target ratio `tau`.
//!
//! Everything here must be bit-reproducible: the decoder re-derives the
//! parent map from raw positions and the voxel sizes stored in the stream
//! header. Quantization is therefore specified as plain IEEE-754 double
//! operations (one divide, one round, one multiply — never fused), and the
//! per-level voxel sizes are rounded to `f32` *before* they are used, so
//! the encoder computes with exactly the values the header will carry.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scene::AnchorScene;

/// Partition parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct PartitionConfig {
    /// Number of levels `K`.
    pub levels: usize,
    /// Target count ratio between adjacent candidate sets.
    pub tau: f64,
    /// Base voxel size (level 0).
    pub eps0: f32,
    /// Relative width at which the kappa bisection bracket is considered
    /// collapsed.
    pub search_tol: f64,
    /// Iteration cap for the bisection.
    pub search_max_iters: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            levels: 3,
            tau: 0.2,
            eps0: 0.001,
            search_tol: 1e-6,
            search_max_iters: 64,
        }
    }
}

impl PartitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 255 {
            return Err(Error::InvalidConfig(format!(
                "level count {} out of range [1, 255]",
                self.levels
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau {} must lie in (0, 1)",
                self.tau
            )));
        }
        if !(self.eps0 > 0.0) || !self.eps0.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps0 {} must be a positive finite number",
                self.eps0
            )));
        }
        Ok(())
    }
}

/// Result of partitioning a scene.
#[derive(Debug, Clone)]
pub struct LevelPartition {
    /// Voxel size per level, strictly increasing. `eps[0]` is the base size.
    pub eps: Vec<f32>,
    /// Scale multipliers `eps[k] / eps[0]` (exact quotients of the stored
    /// `f32` sizes, so encode and decode agree bit for bit).
    pub kappa: Vec<f64>,
    /// Level id per anchor, indexed by canonical anchor order.
    pub level_of: Vec<u8>,
    /// Parent anchor per anchor; `None` exactly for top-level anchors.
    pub parent_of: Vec<Option<u32>>,
    /// Anchors per level.
    pub level_counts: Vec<usize>,
    /// Non-fatal anomalies (unreachable ratio targets and the like).
    pub warnings: Vec<String>,
}

/// Structural equality: warnings are advisory and do not participate.
impl PartialEq for LevelPartition {
    fn eq(&self, other: &Self) -> bool {
        self.eps == other.eps
            && self.kappa == other.kappa
            && self.level_of == other.level_of
            && self.parent_of == other.parent_of
            && self.level_counts == other.level_counts
    }
}

impl LevelPartition {
    pub fn levels(&self) -> usize {
        self.eps.len()
    }

    /// Members of the candidate set at level `k`, i.e. all anchors whose
    /// final level is `>= k`, in canonical order.
    pub fn hat_members(&self, k: usize) -> Vec<u32> {
        self.level_of
            .iter()
            .enumerate()
            .filter(|(_, &l)| l as usize >= k)
            .map(|(i, _)| i as u32)
            .collect()
    }

    /// Anchor indices per level, in canonical order within each level.
    pub fn level_members(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.levels()];
        for (i, &l) in self.level_of.iter().enumerate() {
            out[l as usize].push(i as u32);
        }
        out
    }
}

/// Quantizes a point to its voxel center: `round(x / eps) * eps` per
/// component, rounding halves away from zero.
pub fn quantize_position(x: [f64; 3], eps: f64) -> [f64; 3] {
    [
        (x[0] / eps).round() * eps,
        (x[1] / eps).round() * eps,
        (x[2] / eps).round() * eps,
    ]
}

/// Integer voxel coordinates of a position at scale `eps`. All hashing and
/// equality go through these exact integers, never through float keys.
#[inline]
pub fn voxel_key(pos: [f32; 3], eps: f32) -> [i64; 3] {
    let e = eps as f64;
    [
        (pos[0] as f64 / e).round() as i64,
        (pos[1] as f64 / e).round() as i64,
        (pos[2] as f64 / e).round() as i64,
    ]
}

/// Groups `members` (canonical anchor indices, ascending) into voxels at
/// scale `eps_next` and picks the minimum-index member of each voxel as its
/// representative. Returns the representatives in ascending order and the
/// voxel-to-representative map.
pub fn build_level(
    members: &[u32],
    positions: &[[f32; 3]],
    eps_next: f32,
) -> (Vec<u32>, HashMap<[i64; 3], u32>) {
    let mut rep_of: HashMap<[i64; 3], u32> = HashMap::with_capacity(members.len());
    let mut reps = Vec::new();
    for &m in members {
        let key = voxel_key(positions[m as usize], eps_next);
        // Members arrive in ascending canonical order, so the first member
        // seen in a voxel is the minimum-index one.
        rep_of.entry(key).or_insert_with(|| {
            reps.push(m);
            m
        });
    }
    (reps, rep_of)
}

fn rep_count(members: &[u32], positions: &[[f32; 3]], eps_next: f32) -> usize {
    let mut seen: std::collections::HashSet<[i64; 3]> =
        std::collections::HashSet::with_capacity(members.len());
    for &m in members {
        seen.insert(voxel_key(positions[m as usize], eps_next));
    }
    seen.len()
}

/// Outcome of a kappa search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSearch {
    pub kappa: f64,
    /// Representative count at `kappa`.
    pub count: usize,
    /// Set when no kappa can reach the target count.
    pub unreachable: bool,
}

/// Finds `kappa > lower` such that the representative count of `members` at
/// voxel size `kappa * eps0` is the achievable count closest to
/// `target_count` (ties go to the smaller kappa).
///
/// The count is a non-increasing step function of kappa in practice, so the
/// search brackets the target by doubling and then bisects; it stops when
/// the bracket collapses below `search_tol` relative width or after
/// `search_max_iters` iterations. If even the smallest admissible kappa
/// already produces a count at or below the target (coincident points, a
/// singleton set, or a tiny target), the search returns `lower * (1 +
/// search_tol)` and flags `unreachable` when the target is strictly missed.
pub fn search_kappa(
    members: &[u32],
    positions: &[[f32; 3]],
    eps0: f32,
    target_count: usize,
    lower: f64,
    cfg: &PartitionConfig,
) -> KappaSearch {
    assert!(!members.is_empty(), "kappa search over an empty set");
    assert!(target_count >= 1);
    let eps_at = |kappa: f64| -> f32 { (kappa * eps0 as f64) as f32 };
    let count_at = |kappa: f64| -> usize { rep_count(members, positions, eps_at(kappa)) };

    let nudged = lower * (1.0 + cfg.search_tol);
    let count_lower = count_at(nudged);
    if count_lower <= target_count {
        return KappaSearch {
            kappa: nudged,
            count: count_lower,
            unreachable: count_lower < target_count,
        };
    }

    // Bracket: double until the count drops to or below the target.
    let mut lo = nudged;
    let mut count_lo = count_lower;
    let mut hi = lower * 2.0;
    let mut count_hi = count_at(hi);
    let mut doublings = 0;
    while count_hi > target_count {
        lo = hi;
        count_lo = count_hi;
        hi *= 2.0;
        count_hi = count_at(hi);
        doublings += 1;
        if doublings > 64 {
            // Cannot happen for finite scenes (everything collapses into
            // one voxel eventually), but never loop forever.
            return KappaSearch {
                kappa: hi,
                count: count_hi,
                unreachable: true,
            };
        }
    }

    // Bisect with the invariant count(lo) > target >= count(hi).
    for _ in 0..cfg.search_max_iters {
        if hi - lo <= cfg.search_tol * lo {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // f64 resolution exhausted
        }
        let c = count_at(mid);
        if c > target_count {
            lo = mid;
            count_lo = c;
        } else {
            hi = mid;
            count_hi = c;
        }
    }

    let d_lo = count_lo.abs_diff(target_count);
    let d_hi = count_hi.abs_diff(target_count);
    if d_lo < d_hi || (d_lo == d_hi && lo < hi) {
        KappaSearch {
            kappa: lo,
            count: count_lo,
            unreachable: false,
        }
    } else {
        KappaSearch {
            kappa: hi,
            count: count_hi,
            unreachable: false,
        }
    }
}

fn next_up_f32(x: f32) -> f32 {
    // Only used on positive finite values.
    f32::from_bits(x.to_bits() + 1)
}

/// Partitions a scene into `cfg.levels` disjoint levels with parent links.
///
/// Deterministic: the same scene and config produce a bit-identical
/// partition on every platform and run.
pub fn partition(scene: &AnchorScene, cfg: &PartitionConfig) -> Result<LevelPartition> {
    cfg.validate()?;
    let n = scene.len();
    let positions = scene.positions();
    let levels = cfg.levels;

    let mut eps = vec![cfg.eps0];
    let mut kappa = vec![1.0f64];
    let mut level_of = vec![0u8; n];
    let mut parent_of: Vec<Option<u32>> = vec![None; n];
    let mut warnings = Vec::new();

    let mut survivors: Vec<u32> = (0..n as u32).collect();
    for k in 1..levels {
        if survivors.is_empty() {
            // Empty scene: keep the size ladder strictly increasing anyway.
            let e = next_up_f32(eps[k - 1]);
            eps.push(e);
            kappa.push(e as f64 / cfg.eps0 as f64);
            continue;
        }
        let target = ((cfg.tau * survivors.len() as f64).round() as usize).max(1);
        let found = search_kappa(&survivors, &positions, cfg.eps0, target, kappa[k - 1], cfg);
        if found.unreachable {
            warnings.push(format!(
                "level {k}: target count {target} unreachable, best achievable is {}",
                found.count
            ));
        }
        let mut eps_k = (found.kappa * cfg.eps0 as f64) as f32;
        if eps_k <= eps[k - 1] {
            eps_k = next_up_f32(eps[k - 1]);
        }
        let (reps, rep_of) = build_level(&survivors, &positions, eps_k);
        // Anchors that did not survive to level k settle at level k-1 and
        // take their voxel's representative as parent.
        let mut rep_iter = reps.iter().peekable();
        for &m in &survivors {
            if rep_iter.peek() == Some(&&m) {
                rep_iter.next();
                level_of[m as usize] = k as u8;
            } else {
                let key = voxel_key(positions[m as usize], eps_k);
                parent_of[m as usize] = Some(rep_of[&key]);
            }
        }
        eps.push(eps_k);
        kappa.push(eps_k as f64 / cfg.eps0 as f64);
        survivors = reps;
    }

    let mut level_counts = vec![0usize; levels];
    for &l in &level_of {
        level_counts[l as usize] += 1;
    }
    if n > 0 && level_counts[levels - 1] == 0 {
        // Cannot happen: the last candidate set is never empty.
        return Err(Error::Sequencing("top level ended up empty".into()));
    }
    Ok(LevelPartition {
        eps,
        kappa,
        level_of,
        parent_of,
        level_counts,
        warnings,
    })
}

/// Coding order: one list of anchor indices per level, coarsest first,
/// canonical order within each level. The concatenation is a permutation of
/// all anchors.
pub fn coding_order(partition: &LevelPartition) -> Vec<Vec<u32>> {
    let mut members = partition.level_members();
    members.reverse();
    members
}
