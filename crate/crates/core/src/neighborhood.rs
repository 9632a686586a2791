//! Uniform-grid spatial index with exact radius and nearest-neighbour
//! queries, plus the adaptive support rule used for sequence generation.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::morton::compute_bbox;

type Cell = [i64; 3];

/// Immutable grid over a borrowed cloud. Cells are half-open:
/// `[origin + i * cell_size, origin + (i + 1) * cell_size)`.
#[derive(Debug, Clone)]
pub struct SpatialIndex<'a> {
    cloud: &'a PointCloud,
    origin: Point3,
    cell_size: f64,
    buckets: HashMap<Cell, Vec<usize>>,
    lo: Cell,
    hi: Cell,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub center_index: usize,
    pub radius: f64,
    /// Ascending point indices, center excluded.
    pub member_indices: Vec<usize>,
}

/// Heuristic cell size: longest bbox extent over the cube root of `n`.
pub fn default_cell_size(cloud: &PointCloud) -> Result<f64> {
    let bbox = compute_bbox(cloud)?;
    let longest = bbox.longest_extent();
    let cs = longest / (cloud.len() as f64).cbrt();
    Ok(if cs > 0.0 && cs.is_finite() { cs } else { 1.0 })
}

pub fn build_index(cloud: &PointCloud, cell_size: f64) -> Result<SpatialIndex<'_>> {
    cloud.validate()?;
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidCellSize(cell_size));
    }
    let bbox = compute_bbox(cloud)?;
    let origin = bbox.min;
    let mut buckets: HashMap<Cell, Vec<usize>> = HashMap::new();
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for (i, p) in cloud.points.iter().enumerate() {
        let c = cell_of(p, &origin, cell_size);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
        buckets.entry(c).or_default().push(i);
    }
    Ok(SpatialIndex {
        cloud,
        origin,
        cell_size,
        buckets,
        lo,
        hi,
    })
}

/// Builds an index with [`default_cell_size`].
pub fn build_default_index(cloud: &PointCloud) -> Result<SpatialIndex<'_>> {
    build_index(cloud, default_cell_size(cloud)?)
}

#[inline]
fn cell_of(p: &Point3, origin: &Point3, cs: f64) -> Cell {
    let d = p.sub(origin);
    [
        (d.x / cs).floor() as i64,
        (d.y / cs).floor() as i64,
        (d.z / cs).floor() as i64,
    ]
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> SpatialIndex<'a> {
    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn occupied_cells(&self) -> usize {
        self.buckets.len()
    }

    /// Total number of indexed points over all buckets.
    pub fn population(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    /// Bucket holding point `i`'s cell.
    pub fn cell_of_point(&self, i: usize) -> [i64; 3] {
        cell_of(&self.cloud.points[i], &self.origin, self.cell_size)
    }

    /// All indices within Euclidean distance `r` (inclusive), ascending.
    pub fn radius_query(&self, center: &Point3, r: f64) -> Result<Vec<usize>> {
        if r < 0.0 || r.is_nan() {
            return Err(Error::NegativeRadius(r));
        }
        let pts = &self.cloud.points;
        let cs = self.cell_size;
        let lo_p = Point3::new(center.x - r, center.y - r, center.z - r);
        let hi_p = Point3::new(center.x + r, center.y + r, center.z + r);
        let a = cell_of(&lo_p, &self.origin, cs);
        let b = cell_of(&hi_p, &self.origin, cs);
        let mut out = Vec::new();
        let range = |ax: usize| (a[ax] - 1).max(self.lo[ax])..=(b[ax] + 1).min(self.hi[ax]);
        for cx in range(0) {
            for cy in range(1) {
                for cz in range(2) {
                    if let Some(bucket) = self.buckets.get(&[cx, cy, cz]) {
                        out.extend(bucket.iter().copied().filter(|&i| pts[i].dist(center) <= r));
                    }
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    /// The `count` nearest points accepted by `keep`, sorted by
    /// `(distance, index)`. Returns fewer when the cloud runs out.
    pub fn nearest_filtered<F>(&self, center: &Point3, count: usize, keep: F) -> Vec<(f64, usize)>
    where
        F: Fn(usize) -> bool,
    {
        if count == 0 {
            return Vec::new();
        }
        let pts = &self.cloud.points;
        let cs = self.cell_size;
        let c = cell_of(center, &self.origin, cs);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(count + 1);
        let visit = |cell: Cell, heap: &mut BinaryHeap<Candidate>| {
            if let Some(bucket) = self.buckets.get(&cell) {
                for &i in bucket {
                    if !keep(i) {
                        continue;
                    }
                    let cand = Candidate(pts[i].dist(center), i);
                    if heap.len() < count {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
        };
        let mut ring = 0i64;
        loop {
            self.for_ring(c, ring, |cell| visit(cell, &mut heap));
            // every unvisited point is at least `ring * cs` away
            let settled = heap.len() == count
                && heap.peek().unwrap().0 < ring as f64 * cs * (1.0 - 1e-12);
            if settled || ring >= max_ring {
                break;
            }
            ring += 1;
        }
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|c| (c.0, c.1)).collect();
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Calls `f` on every occupied-range cell at Chebyshev distance `ring`.
    fn for_ring<F: FnMut(Cell)>(&self, c: Cell, ring: i64, mut f: F) {
        let clip = |ax: usize, d: i64| {
            let v = c[ax] + d;
            (self.lo[ax]..=self.hi[ax]).contains(&v)
        };
        for dx in -ring..=ring {
            if !clip(0, dx) {
                continue;
            }
            for dy in -ring..=ring {
                if !clip(1, dy) {
                    continue;
                }
                if dx.abs() == ring || dy.abs() == ring {
                    for dz in -ring..=ring {
                        if clip(2, dz) {
                            f([c[0] + dx, c[1] + dy, c[2] + dz]);
                        }
                    }
                } else {
                    for dz in [-ring, ring] {
                        if clip(2, dz) {
                            f([c[0] + dx, c[1] + dy, c[2] + dz]);
                        }
                    }
                }
            }
        }
    }

    /// Smallest ball around point `center_index` holding at least `2k`
    /// other points. Points tied at the boundary distance are all members.
    pub fn adaptive_support(&self, center_index: usize, k: usize) -> Result<SupportSet> {
        let n = self.cloud.len();
        if k < 2 {
            return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
        }
        if center_index >= n {
            return Err(Error::IndexOutOfRange {
                index: center_index,
                len: n,
            });
        }
        if n < 2 * k + 1 {
            return Err(Error::CloudTooSmall {
                needed: 2 * k + 1,
                have: n,
            });
        }
        let center = self.cloud.points[center_index];
        let nn = self.nearest_filtered(&center, 2 * k, |i| i != center_index);
        let radius = nn.last().map(|x| x.0).unwrap_or(0.0);
        let mut member_indices = self.radius_query(&center, radius)?;
        member_indices.retain(|&i| i != center_index);
        Ok(SupportSet {
            center_index,
            radius,
            member_indices,
        })
    }
}
