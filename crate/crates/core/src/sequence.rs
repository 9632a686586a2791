//! Ordered k-point training sequences and their normalized samples.
//!
//! For every center point, `m` sequences are drawn: `k - 1` predecessors
//! are sampled uniformly from the center's support among points whose
//! ordering key is strictly below the center's, re-sorted by that key, and
//! the center is appended last.
//!
//! When the support holds fewer than `k - 1` eligible predecessors the
//! support is widened to the smallest ball around the center that does
//! (bounded by the whole cloud). If the whole cloud is still short, sampling
//! falls back to drawing with replacement; centers with no eligible
//! predecessor at all are skipped and reported.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::exec::{map_slice, Execution};
use crate::morton::{order_points, ranks, OrderingScheme, QuantSpec};
use crate::neighborhood::SpatialIndex;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceGenConfig {
    pub k: usize,
    pub m: usize,
    pub scheme: OrderingScheme,
    pub seed: u64,
}

impl Default for SequenceGenConfig {
    fn default() -> Self {
        Self {
            k: 100,
            m: 5,
            scheme: OrderingScheme::Morton,
            seed: 0,
        }
    }
}

impl SequenceGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(Error::InvalidConfig(format!("k must be >= 3, got {}", self.k)));
        }
        if self.m < 1 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        Ok(())
    }
}

/// How a sequence deviated from plain sampling within the support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SequenceFlags {
    /// Support was widened beyond the adaptive radius.
    pub enlarged: bool,
    /// Predecessors were drawn with replacement.
    pub with_replacement: bool,
    /// Exactly `k - 1` eligible predecessors: all `m` slots are identical.
    pub forced: bool,
}

impl SequenceFlags {
    pub fn bits(&self) -> i64 {
        self.enlarged as i64 | (self.with_replacement as i64) << 1 | (self.forced as i64) << 2
    }

    pub fn from_bits(b: i64) -> Self {
        Self {
            enlarged: b & 1 != 0,
            with_replacement: b & 2 != 0,
            forced: b & 4 != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZSequence {
    /// `k` point indices; the last one is the center.
    pub point_indices: Vec<usize>,
    pub ordering: OrderingScheme,
    pub flags: SequenceFlags,
}

impl ZSequence {
    pub fn center(&self) -> usize {
        *self.point_indices.last().expect("sequence is never empty")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// `k - 1` positions relative to the first sequence point.
    pub inputs: Vec<[f64; 3]>,
    /// Raw displacement from the second-to-last point to the center.
    pub target: [f64; 3],
    pub center_index: usize,
}

/// Sequences ordered by `(center, slot)` plus the centers that produced none.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceSet {
    pub sequences: Vec<ZSequence>,
    pub skipped: Vec<usize>,
}

/// Per-point ordering rank for the scheme; `rank[i] < rank[j]` is the strict
/// `(key, index)` total order.
pub fn order_ranks(cloud: &PointCloud, scheme: OrderingScheme, spec: &QuantSpec) -> Result<Vec<usize>> {
    Ok(ranks(&order_points(cloud, scheme, spec)?))
}

/// Generates `m` sequences for every point of the cloud.
pub fn generate_sequences(
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    spec: &QuantSpec,
) -> Result<SequenceSet> {
    let centers: Vec<usize> = (0..cloud.len()).collect();
    generate_for_centers(cloud, cfg, index, spec, &centers, Execution::Parallel)
}

/// Generates sequences for the given centers only. Output is ordered by the
/// position of each center in `centers`, then by slot; it does not depend on
/// `exec`.
pub fn generate_for_centers(
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    spec: &QuantSpec,
    centers: &[usize],
    exec: Execution,
) -> Result<SequenceSet> {
    cfg.validate()?;
    cloud.validate()?;
    if cloud.len() < 2 {
        return Err(Error::CloudTooSmall {
            needed: 2,
            have: cloud.len(),
        });
    }
    if index.cloud().len() != cloud.len() {
        return Err(Error::ShapeMismatch("index was built over a different cloud".into()));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= cloud.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: cloud.len(),
        });
    }
    let rank = order_ranks(cloud, cfg.scheme, spec)?;
    generate_ranked(cloud, cfg, index, &rank, centers, exec)
}

/// [`generate_for_centers`] with precomputed ordering ranks (see
/// [`order_ranks`]), for callers that generate in several passes.
pub fn generate_ranked(
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    rank: &[usize],
    centers: &[usize],
    exec: Execution,
) -> Result<SequenceSet> {
    if rank.len() != cloud.len() {
        return Err(Error::ShapeMismatch("rank vector does not match the cloud".into()));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= cloud.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: cloud.len(),
        });
    }
    let per_center = map_slice(exec, centers, |&c| sequences_for_center(cloud, cfg, index, rank, c));
    let mut out = SequenceSet::default();
    for (c, r) in centers.iter().zip(per_center) {
        match r? {
            Some(seqs) => out.sequences.extend(seqs),
            None => out.skipped.push(*c),
        }
    }
    Ok(out)
}

/// Eligible predecessor pool for one center and whether it was widened.
pub fn predecessor_pool(
    cloud: &PointCloud,
    k: usize,
    index: &SpatialIndex<'_>,
    rank: &[usize],
    center: usize,
) -> Result<(Vec<usize>, bool)> {
    let n = cloud.len();
    let need = k - 1;
    let below = |i: usize| i != center && rank[i] < rank[center];
    let support: Vec<usize> = if n > 2 * k {
        index.adaptive_support(center, k)?.member_indices
    } else {
        (0..n).filter(|&i| i != center).collect()
    };
    let pool: Vec<usize> = support.into_iter().filter(|&i| below(i)).collect();
    if pool.len() >= need {
        return Ok((pool, false));
    }
    let c = cloud.points[center];
    let nearest = index.nearest_filtered(&c, need, below);
    let Some(&(radius, _)) = nearest.last() else {
        return Ok((Vec::new(), true));
    };
    let mut widened = index.radius_query(&c, radius)?;
    widened.retain(|&i| below(i));
    Ok((widened, true))
}

fn sequences_for_center(
    cloud: &PointCloud,
    cfg: &SequenceGenConfig,
    index: &SpatialIndex<'_>,
    rank: &[usize],
    center: usize,
) -> Result<Option<Vec<ZSequence>>> {
    let need = cfg.k - 1;
    let (pool, enlarged) = predecessor_pool(cloud, cfg.k, index, rank, center)?;
    if pool.is_empty() {
        return Ok(None);
    }
    let flags = SequenceFlags {
        enlarged,
        with_replacement: pool.len() < need,
        forced: pool.len() == need,
    };
    let seqs = (0..cfg.m)
        .map(|slot| {
            let mut r = rng::stream(cfg.seed, &[center as u64, slot as u64]);
            let mut picked: Vec<usize> = if flags.with_replacement {
                (0..need).map(|_| pool[r.random_range(0..pool.len())]).collect()
            } else {
                sample(&mut r, pool.len(), need).into_iter().map(|j| pool[j]).collect()
            };
            picked.sort_unstable_by_key(|&i| rank[i]);
            picked.push(center);
            ZSequence {
                point_indices: picked,
                ordering: cfg.scheme,
                flags,
            }
        })
        .collect();
    Ok(Some(seqs))
}

/// Translates a sequence so its first point is the origin and attaches the
/// raw final displacement as the regression target.
pub fn normalize_sequence(cloud: &PointCloud, seq: &ZSequence) -> Result<TrainingSample> {
    let idx = &seq.point_indices;
    if idx.len() < 2 {
        return Err(Error::ShapeMismatch("sequence needs at least two points".into()));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= cloud.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: cloud.len(),
        });
    }
    let pts = &cloud.points;
    let first = pts[idx[0]];
    let k = idx.len();
    let inputs = idx[..k - 1]
        .iter()
        .map(|&i| pts[i].sub(&first).to_array())
        .collect();
    let target = pts[idx[k - 1]].sub(&pts[idx[k - 2]]).to_array();
    Ok(TrainingSample {
        inputs,
        target,
        center_index: seq.center(),
    })
}

/// Normalizes every sequence of a set, preserving order.
pub fn normalize_all(cloud: &PointCloud, set: &SequenceSet) -> Result<Vec<TrainingSample>> {
    set.sequences.iter().map(|s| normalize_sequence(cloud, s)).collect()
}
