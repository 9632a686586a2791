mod common;

use common::msb_compare;
use mortonnet::morton::{
    compute_bbox, morton_codes, morton_decode, morton_encode, order_points, quantize, MortonCode,
    OrderingScheme, QuantSpec,
};
use mortonnet::{Point3, PointCloud};
use proptest::prelude::*;

fn encode(q: [u32; 3], bits: u32) -> MortonCode {
    morton_encode(q[0], q[1], q[2], bits).unwrap()
}

#[test]
fn exhaustive_small_lattices_round_trip() {
    for bits in 1..=2u32 {
        let side = 1u32 << bits;
        let mut seen = std::collections::HashSet::new();
        for x in 0..side {
            for y in 0..side {
                for z in 0..side {
                    let c = encode([x, y, z], bits);
                    assert!(c.0 < 1 << (3 * bits));
                    assert!(seen.insert(c));
                    assert_eq!(morton_decode(c, bits).unwrap(), [x, y, z]);
                }
            }
        }
    }
}

#[test]
fn exhaustive_pairwise_oracle_at_two_bits() {
    let cells: Vec<[u32; 3]> = (0..64u32).map(|i| [i & 3, (i >> 2) & 3, i >> 4]).collect();
    for &a in &cells {
        for &b in &cells {
            assert_eq!(encode(a, 2).cmp(&encode(b, 2)), msb_compare(a, b, 2), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn out_of_range_inputs_rejected() {
    assert!(morton_encode(4, 0, 0, 2).is_err());
    assert!(morton_encode(0, 0, 0, 0).is_err());
    assert!(morton_encode(0, 0, 0, 22).is_err());
    assert!(morton_decode(MortonCode(1 << 6), 2).is_err());
}

fn lattice(bits: u32) -> impl Strategy<Value = [u32; 3]> {
    let top = (1u32 << bits) - 1;
    [0..=top, 0..=top, 0..=top]
}

fn bits_and_triple() -> impl Strategy<Value = (u32, [u32; 3])> {
    (1u32..=21).prop_flat_map(|b| (Just(b), lattice(b)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip((bits, q) in bits_and_triple()) {
        prop_assert_eq!(morton_decode(encode(q, bits), bits).unwrap(), q);
    }

    #[test]
    fn per_axis_monotone((bits, q) in bits_and_triple(), axis in 0usize..3) {
        let top = (1u32 << bits) - 1;
        prop_assume!(q[axis] < top);
        let mut r = q;
        r[axis] += 1;
        prop_assert!(encode(r, bits) > encode(q, bits));
    }

    #[test]
    fn code_order_matches_msb_oracle(a in lattice(16), b in lattice(16)) {
        prop_assert_eq!(encode(a, 16).cmp(&encode(b, 16)), msb_compare(a, b, 16));
    }

    #[test]
    fn ordering_is_sorted_by_key_then_index(
        pts in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..80),
        dup in 0usize..10,
        bits in 1u32..=16,
    ) {
        let mut points: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect();
        for i in 0..dup.min(points.len()) {
            let p = points[i];
            points.push(p);
        }
        let cloud = PointCloud::new(points);
        let spec = QuantSpec::for_cloud(&cloud, bits).unwrap();
        let codes = morton_codes(&cloud, &spec).unwrap();
        let perm = order_points(&cloud, OrderingScheme::Morton, &spec).unwrap();
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..cloud.len()).collect::<Vec<_>>());
        for w in perm.windows(2) {
            prop_assert!((codes[w[0]], w[0]) < (codes[w[1]], w[1]));
        }
        prop_assert_eq!(&perm, &order_points(&cloud, OrderingScheme::Morton, &spec).unwrap());
    }

    #[test]
    fn quantized_cells_stay_on_the_lattice(
        pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3, -1e3f64..1e3), 1..50),
        bits in 1u32..=21,
    ) {
        let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
        let spec = QuantSpec::for_cloud(&cloud, bits).unwrap();
        let bbox = compute_bbox(&cloud).unwrap();
        for p in &cloud.points {
            prop_assert!(bbox.contains(p));
            let q = quantize(p, &spec).unwrap();
            prop_assert!(q.iter().all(|&v| v < 1 << bits));
        }
    }

    #[test]
    fn coordinate_orders_sort_by_axis(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..60),
    ) {
        let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point3::new(x, y, z)).collect());
        let spec = QuantSpec::for_cloud(&cloud, 16).unwrap();
        for (axis, scheme) in [OrderingScheme::CoordX, OrderingScheme::CoordY, OrderingScheme::CoordZ].into_iter().enumerate() {
            let perm = order_points(&cloud, scheme, &spec).unwrap();
            for w in perm.windows(2) {
                let (a, b) = (cloud.points[w[0]].axis(axis), cloud.points[w[1]].axis(axis));
                prop_assert!(a < b || (a == b && w[0] < w[1]));
            }
        }
    }
}
