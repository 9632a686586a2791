//! Seeded synthetic surfaces with part labels, standing in for scanned
//! scenes and CAD part datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// `z = 0` over `[-1, 1]²`; one part.
    Plane,
    /// Unit sphere; parts: upper and lower hemisphere.
    Sphere,
    /// Radius 1, height 2; parts: side, top cap, bottom cap.
    Cylinder,
    /// `2 × 1.5 × 1` box; parts: faces +x, −x, +y, −y, +z, −z.
    Box,
    /// Major radius 1, minor 0.35; parts: outer and inner half.
    Torus,
    /// Box base, cylindrical stem and spherical head with seed-dependent
    /// proportions; parts: base, stem, head.
    Composite,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Plane,
        ShapeKind::Sphere,
        ShapeKind::Cylinder,
        ShapeKind::Box,
        ShapeKind::Torus,
        ShapeKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Plane => "plane",
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Box => "box",
            ShapeKind::Torus => "torus",
            ShapeKind::Composite => "composite",
        }
    }

    pub fn num_parts(self) -> usize {
        match self {
            ShapeKind::Plane => 1,
            ShapeKind::Sphere | ShapeKind::Torus => 2,
            ShapeKind::Cylinder | ShapeKind::Composite => 3,
            ShapeKind::Box => 6,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shape kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub n_points: usize,
    /// Standard deviation of the offset along the surface normal, in units
    /// of the shape's nominal size (about 1) before normalization.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 {
            return Err(Error::InvalidConfig("n_points must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// `normalized = (raw − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, p: &Point3) -> Point3 {
        p.sub(&self.center).scale(1.0 / self.scale)
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        p.scale(self.scale).add(&self.center)
    }
}

/// Uniform scaling about the bounding-box center so the longest extent
/// spans `[-1, 1]`.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, Normalization)> {
    let bbox = crate::morton::compute_bbox(cloud)?;
    let center = bbox.min.add(&bbox.max).scale(0.5);
    let half = bbox.longest_extent() / 2.0;
    let scale = if half > 0.0 { half } else { 1.0 };
    let n = Normalization { center, scale };
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let q = n.apply(p);
            // Division can overshoot the unit bound by an ulp.
            Point3::new(q.x.clamp(-1.0, 1.0), q.y.clamp(-1.0, 1.0), q.z.clamp(-1.0, 1.0))
        })
        .collect();
    Ok((
        PointCloud {
            points,
            labels: cloud.labels.clone(),
        },
        n,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedShape {
    /// Normalized, labeled cloud.
    pub cloud: PointCloud,
    pub normalization: Normalization,
}

/// A surface patch that can be sampled uniformly by area.
#[derive(Debug, Clone, Copy)]
enum Patch {
    /// Axis-aligned rectangle at `coord` along `axis`, outward `sign`.
    Rect {
        axis: usize,
        coord: f64,
        sign: f64,
        lo: [f64; 2],
        hi: [f64; 2],
    },
    Sphere { center: Point3, radius: f64 },
    /// Lateral surface of a z-aligned cylinder.
    Tube { center: Point3, radius: f64, z0: f64, z1: f64 },
    /// z-aligned disk with outward `sign`.
    Disk { center: Point3, radius: f64, sign: f64 },
    Torus { major: f64, minor: f64 },
}

impl Patch {
    fn area(&self) -> f64 {
        match *self {
            Patch::Rect { lo, hi, .. } => (hi[0] - lo[0]) * (hi[1] - lo[1]),
            Patch::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Patch::Tube { radius, z0, z1, .. } => 2.0 * PI * radius * (z1 - z0),
            Patch::Disk { radius, .. } => PI * radius * radius,
            Patch::Torus { major, minor } => 4.0 * PI * PI * major * minor,
        }
    }

    /// A uniform surface point and its unit normal.
    fn sample(&self, rng: &mut ChaCha8Rng) -> (Point3, Point3) {
        match *self {
            Patch::Rect { axis, coord, sign, lo, hi } => {
                let u = rng.random_range(lo[0]..=hi[0]);
                let v = rng.random_range(lo[1]..=hi[1]);
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut p = [0.0; 3];
                p[axis] = coord;
                p[a] = u;
                p[b] = v;
                let mut n = [0.0; 3];
                n[axis] = sign;
                (p.into(), n.into())
            }
            Patch::Sphere { center, radius } => {
                let n = unit_vector(rng);
                (center.add(&n.scale(radius)), n)
            }
            Patch::Tube { center, radius, z0, z1 } => {
                let t = rng.random_range(0.0..2.0 * PI);
                let z = rng.random_range(z0..=z1);
                let n = Point3::new(t.cos(), t.sin(), 0.0);
                (Point3::new(center.x + radius * n.x, center.y + radius * n.y, z), n)
            }
            Patch::Disk { center, radius, sign } => {
                let r = radius * rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..2.0 * PI);
                (
                    Point3::new(center.x + r * t.cos(), center.y + r * t.sin(), center.z),
                    Point3::new(0.0, 0.0, sign),
                )
            }
            Patch::Torus { major, minor } => {
                // Rejection on the tube angle makes the density uniform by area.
                let phi = loop {
                    let phi = rng.random_range(0.0..2.0 * PI);
                    if rng.random::<f64>() * (major + minor) <= major + minor * phi.cos() {
                        break phi;
                    }
                };
                let theta = rng.random_range(0.0..2.0 * PI);
                let n = Point3::new(phi.cos() * theta.cos(), phi.cos() * theta.sin(), phi.sin());
                let ring = major + minor * phi.cos();
                (Point3::new(ring * theta.cos(), ring * theta.sin(), minor * phi.sin()), n)
            }
        }
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v = Point3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v.scale(1.0 / n);
        }
    }
}

fn rect(axis: usize, coord: f64, sign: f64, lo: [f64; 2], hi: [f64; 2]) -> Patch {
    Patch::Rect { axis, coord, sign, lo, hi }
}

/// Six faces of an axis-aligned box with opposite corners `a` and `b`,
/// ordered +x, −x, +y, −y, +z, −z.
fn box_faces(a: [f64; 3], b: [f64; 3]) -> Vec<Patch> {
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let lo = [a[u], a[v]];
        let hi = [b[u], b[v]];
        faces.push(rect(axis, b[axis], 1.0, lo, hi));
        faces.push(rect(axis, a[axis], -1.0, lo, hi));
    }
    faces
}

/// Patches with their part labels.
fn layout(spec: &ShapeSpec) -> Vec<(Patch, i64)> {
    let o = Point3::new(0.0, 0.0, 0.0);
    match spec.kind {
        ShapeKind::Plane => vec![(rect(2, 0.0, 1.0, [-1.0, -1.0], [1.0, 1.0]), 0)],
        // Split into hemispheres after sampling.
        ShapeKind::Sphere => vec![(Patch::Sphere { center: o, radius: 1.0 }, 0)],
        ShapeKind::Cylinder => vec![
            (Patch::Tube { center: o, radius: 1.0, z0: -1.0, z1: 1.0 }, 0),
            (Patch::Disk { center: Point3::new(0.0, 0.0, 1.0), radius: 1.0, sign: 1.0 }, 1),
            (Patch::Disk { center: Point3::new(0.0, 0.0, -1.0), radius: 1.0, sign: -1.0 }, 2),
        ],
        ShapeKind::Box => box_faces([-1.0, -0.75, -0.5], [1.0, 0.75, 0.5])
            .into_iter()
            .zip(0..)
            .collect(),
        ShapeKind::Torus => vec![(Patch::Torus { major: 1.0, minor: 0.35 }, 0)],
        ShapeKind::Composite => {
            let mut g = rng::stream(spec.seed, &[0x6e0]);
            let base_w = g.random_range(1.4..1.8);
            let base_h = g.random_range(0.3..0.5);
            let stem_r = g.random_range(0.15..0.25);
            let stem_h = g.random_range(0.8..1.2);
            let head_r = g.random_range(0.35..0.5);
            let mut parts: Vec<(Patch, i64)> = box_faces(
                [-base_w / 2.0, -base_w / 2.0, 0.0],
                [base_w / 2.0, base_w / 2.0, base_h],
            )
            .into_iter()
            .map(|f| (f, 0))
            .collect();
            parts.push((
                Patch::Tube {
                    center: o,
                    radius: stem_r,
                    z0: base_h,
                    z1: base_h + stem_h,
                },
                1,
            ));
            parts.push((
                Patch::Sphere {
                    center: Point3::new(0.0, 0.0, base_h + stem_h + head_r),
                    radius: head_r,
                },
                2,
            ));
            parts
        }
    }
}

/// Samples `spec.n_points` surface points, labels them by part, perturbs
/// them along the normal and normalizes into `[-1, 1]³`.
pub fn generate_shape(spec: &ShapeSpec) -> Result<GeneratedShape> {
    spec.validate()?;
    let patches = layout(spec);
    let areas: Vec<f64> = patches.iter().map(|(p, _)| p.area()).collect();
    let total: f64 = areas.iter().sum();
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidConfig(format!("noise: {e}")))?;
    let mut rng = rng::stream(spec.seed, &[0x5a3e]);
    let mut points = Vec::with_capacity(spec.n_points);
    let mut labels = Vec::with_capacity(spec.n_points);
    for _ in 0..spec.n_points {
        let mut u = rng.random::<f64>() * total;
        let mut which = patches.len() - 1;
        for (i, a) in areas.iter().enumerate() {
            if u < *a {
                which = i;
                break;
            }
            u -= a;
        }
        let (patch, part) = patches[which];
        let (p, n) = patch.sample(&mut rng);
        let label = match spec.kind {
            ShapeKind::Sphere => i64::from(p.z < 0.0),
            ShapeKind::Torus => i64::from(p.x * p.x + p.y * p.y < 1.0),
            _ => part,
        };
        let p = if spec.noise_sigma > 0.0 {
            p.add(&n.scale(noise.sample(&mut rng)))
        } else {
            p
        };
        points.push(p);
        labels.push(label);
    }
    let raw = PointCloud::with_labels(points, labels)?;
    let (cloud, normalization) = normalize_cloud(&raw)?;
    Ok(GeneratedShape { cloud, normalization })
}

/// Maps a `[-1, 1]³`-normalized cloud affinely onto the unit cube `[0, 1]³`,
/// the frame in which ρ is quoted as a fraction of extent.
pub fn to_unit_cube(cloud: &PointCloud) -> PointCloud {
    let f = |v: f64| ((v + 1.0) * 0.5).clamp(0.0, 1.0);
    PointCloud {
        points: cloud.points.iter().map(|p| Point3::new(f(p.x), f(p.y), f(p.z))).collect(),
        labels: cloud.labels.clone(),
    }
}

/// Rotates a cloud by a uniformly random rotation (seeded) and normalizes
/// it back into `[-1, 1]³`. Labels are kept.
pub fn random_pose(cloud: &PointCloud, seed: u64) -> Result<PointCloud> {
    let mut g = rng::stream(seed, &[0x2075e]);
    // A normalized 4D Gaussian is a uniform unit quaternion.
    let q: [f64; 4] = loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut g));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break v.map(|x| x / n);
        }
    };
    let [w, x, y, z] = q;
    let r = [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ];
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let a = p.to_array();
            Point3::new(
                r[0][0] * a[0] + r[0][1] * a[1] + r[0][2] * a[2],
                r[1][0] * a[0] + r[1][1] * a[1] + r[1][2] * a[2],
                r[2][0] * a[0] + r[2][1] * a[1] + r[2][2] * a[2],
            )
        })
        .collect();
    let rotated = PointCloud {
        points,
        labels: cloud.labels.clone(),
    };
    Ok(normalize_cloud(&rotated)?.0)
}
