//! Lattice quantization, Morton (Z-order) keys, and the point orderings
//! used to build training sequences.
//!
//! Bit convention: bit `i` of the x lattice coordinate lands at code bit
//! `3i`, y at `3i + 1`, z at `3i + 2`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};

pub const MAX_BITS: u32 = 21;
pub const DEFAULT_BITS: u32 = 16;

/// Relative padding applied to zero-extent axes.
const DEGENERATE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn extent(&self) -> Point3 {
        self.max.sub(&self.min)
    }

    pub fn longest_extent(&self) -> f64 {
        let e = self.extent();
        e.x.max(e.y).max(e.z)
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| p.axis(a) >= self.min.axis(a) && p.axis(a) <= self.max.axis(a))
    }
}

/// Tight bounding box; zero-extent axes are widened upward by
/// `1e-9 * max(1, largest extent)`.
pub fn compute_bbox(cloud: &PointCloud) -> Result<Aabb> {
    cloud.validate()?;
    let first = cloud.points[0];
    let (mut lo, mut hi) = (first.to_array(), first.to_array());
    for p in &cloud.points[1..] {
        for (a, v) in p.to_array().into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let largest = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    let eps = DEGENERATE_EPS * largest.max(1.0);
    for a in 0..3 {
        if hi[a] - lo[a] <= 0.0 {
            hi[a] = lo[a] + eps;
        }
    }
    Ok(Aabb {
        min: lo.into(),
        max: hi.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits_per_axis: u32,
    pub bbox: Aabb,
}

impl QuantSpec {
    pub fn new(bits_per_axis: u32, bbox: Aabb) -> Result<Self> {
        check_bits(bits_per_axis)?;
        if (0..3).any(|a| bbox.max.axis(a) < bbox.min.axis(a)) || bbox.longest_extent() <= 0.0 {
            return Err(Error::InvalidConfig("degenerate bounding box".into()));
        }
        Ok(Self {
            bits_per_axis,
            bbox,
        })
    }

    /// Spec covering a whole cloud.
    pub fn for_cloud(cloud: &PointCloud, bits_per_axis: u32) -> Result<Self> {
        Self::new(bits_per_axis, compute_bbox(cloud)?)
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBits(bits))
    }
}

/// Maps a point to its lattice cell. Points on the upper face are clamped
/// into the last cell; points outside the box are rejected.
pub fn quantize(p: &Point3, spec: &QuantSpec) -> Result<[u32; 3]> {
    if !p.is_finite() || !spec.bbox.contains(p) {
        return Err(Error::PointOutsideBox(*p));
    }
    Ok(quantize_unchecked(p, spec))
}

#[inline]
fn quantize_unchecked(p: &Point3, spec: &QuantSpec) -> [u32; 3] {
    let cells = (1u64 << spec.bits_per_axis) as f64;
    let top = (1u64 << spec.bits_per_axis) - 1;
    let mut q = [0u32; 3];
    for (a, slot) in q.iter_mut().enumerate() {
        let lo = spec.bbox.min.axis(a);
        let extent = spec.bbox.max.axis(a) - lo;
        let v = ((p.axis(a) - lo) / extent * cells).floor();
        *slot = if v <= 0.0 { 0 } else { (v as u64).min(top) as u32 };
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MortonCode(pub u64);

impl fmt::Display for MortonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Spreads the low 21 bits of `v` so that bit `i` moves to bit `3i`.
#[inline]
fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact_bits(code: u64) -> u32 {
    let mut x = code & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

pub fn morton_encode(qx: u32, qy: u32, qz: u32, bits: u32) -> Result<MortonCode> {
    check_bits(bits)?;
    for q in [qx, qy, qz] {
        if (q as u64) >> bits != 0 {
            return Err(Error::LatticeOutOfRange {
                value: q as u64,
                bits,
            });
        }
    }
    Ok(MortonCode(
        spread_bits(qx) | (spread_bits(qy) << 1) | (spread_bits(qz) << 2),
    ))
}

pub fn morton_decode(code: MortonCode, bits: u32) -> Result<[u32; 3]> {
    check_bits(bits)?;
    if code.0 >> (3 * bits) != 0 {
        return Err(Error::CodeOutOfRange { code: code.0, bits });
    }
    Ok([
        compact_bits(code.0),
        compact_bits(code.0 >> 1),
        compact_bits(code.0 >> 2),
    ])
}

/// Morton code of every point in `cloud`.
pub fn morton_codes(cloud: &PointCloud, spec: &QuantSpec) -> Result<Vec<MortonCode>> {
    cloud
        .points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if !p.is_finite() {
                return Err(Error::NonFinite { index });
            }
            if !spec.bbox.contains(p) {
                return Err(Error::OutsideBox { index });
            }
            let [x, y, z] = quantize_unchecked(p, spec);
            Ok(MortonCode(
                spread_bits(x) | (spread_bits(y) << 1) | (spread_bits(z) << 2),
            ))
        })
        .collect()
}

/// Serialized as its display string, e.g. `"morton"` or `"random:7"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum OrderingScheme {
    Morton,
    CoordX,
    CoordY,
    CoordZ,
    Random { seed: u64 },
}

impl OrderingScheme {
    pub fn name(&self) -> &'static str {
        match self {
            OrderingScheme::Morton => "morton",
            OrderingScheme::CoordX => "x",
            OrderingScheme::CoordY => "y",
            OrderingScheme::CoordZ => "z",
            OrderingScheme::Random { .. } => "random",
        }
    }
}

impl fmt::Display for OrderingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingScheme::Random { seed } => write!(f, "random:{seed}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for OrderingScheme {
    type Err = Error;

    /// Accepts `morton`, `x`, `y`, `z`, `random` and `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "morton" | "z-order" | "zorder" => Ok(OrderingScheme::Morton),
            "x" | "coord-x" | "coordx" => Ok(OrderingScheme::CoordX),
            "y" | "coord-y" | "coordy" => Ok(OrderingScheme::CoordY),
            "z" | "coord-z" | "coordz" => Ok(OrderingScheme::CoordZ),
            "random" => Ok(OrderingScheme::Random { seed: 0 }),
            other => match other.strip_prefix("random:").map(str::parse::<u64>) {
                Some(Ok(seed)) => Ok(OrderingScheme::Random { seed }),
                _ => Err(Error::UnknownScheme(s.to_string())),
            },
        }
    }
}

impl From<OrderingScheme> for String {
    fn from(s: OrderingScheme) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for OrderingScheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Permutation of point indices sorted by the scheme's key, ties broken by
/// original index. `Random` is a seeded uniform shuffle.
pub fn order_points(
    cloud: &PointCloud,
    scheme: OrderingScheme,
    spec: &QuantSpec,
) -> Result<Vec<usize>> {
    cloud.validate()?;
    let n = cloud.len();
    let mut perm: Vec<usize> = (0..n).collect();
    match scheme {
        OrderingScheme::Morton => {
            let codes = morton_codes(cloud, spec)?;
            perm.sort_unstable_by_key(|&i| (codes[i], i));
        }
        OrderingScheme::CoordX | OrderingScheme::CoordY | OrderingScheme::CoordZ => {
            let axis = match scheme {
                OrderingScheme::CoordX => 0,
                OrderingScheme::CoordY => 1,
                _ => 2,
            };
            let pts = &cloud.points;
            perm.sort_unstable_by(|&a, &b| {
                pts[a]
                    .axis(axis)
                    .total_cmp(&pts[b].axis(axis))
                    .then(a.cmp(&b))
            });
        }
        OrderingScheme::Random { seed } => {
            let mut rng = crate::rng::stream(seed, &[0x6f72_6465_u64]);
            perm.shuffle(&mut rng);
        }
    }
    Ok(perm)
}

/// Inverse of a permutation: `rank[perm[i]] = i`.
pub fn ranks(perm: &[usize]) -> Vec<usize> {
    let mut rank = vec![0; perm.len()];
    for (r, &i) in perm.iter().enumerate() {
        rank[i] = r;
    }
    rank
}
