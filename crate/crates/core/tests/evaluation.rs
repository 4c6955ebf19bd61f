use proptest::prelude::*;
use treecrop_core::castc::Points;
use treecrop_core::evaluation::{draw_design, separability_index, DesignParams};
use treecrop_core::raster::LabelMask;

fn transform(p: &Points, angle: f32, scale: f32, shift: (f32, f32)) -> Points {
    let (s, c) = angle.sin_cos();
    let v = p
        .values
        .chunks(2)
        .flat_map(|xy| {
            let (x, y) = (xy[0], xy[1]);
            [scale * (c * x - s * y) + shift.0, scale * (s * x + c * y) + shift.1]
        })
        .collect();
    Points::new(2, v).unwrap()
}

proptest! {
    #[test]
    fn separability_ignores_rotation_scale_and_shift(
        a in proptest::collection::vec(-5.0f32..5.0, 2 * 8),
        b in proptest::collection::vec(-5.0f32..5.0, 2 * 8),
        angle in 0.0f32..std::f32::consts::TAU,
        scale in 0.2f32..5.0,
        dx in -10.0f32..10.0,
        dy in -10.0f32..10.0,
    ) {
        let (pa, pb) = (Points::new(2, a).unwrap(), Points::new(2, b).unwrap());
        let base = separability_index(&pa, &pb).unwrap();
        let moved = separability_index(
            &transform(&pa, angle, scale, (dx, dy)),
            &transform(&pb, angle, scale, (dx, dy)),
        )
        .unwrap();
        prop_assert!((base - moved).abs() <= 1e-3 * base.max(1.0), "{} vs {}", base, moved);
    }
}

#[test]
fn inclusion_frequency_matches_allocation() {
    // Row r belongs to stratum r % 7; the frame covers the whole map.
    let pairs = [(0u8, 0u8), (1, 1), (3, 3), (0, 1), (3, 1), (0, 3), (3, 0)];
    let (h, w) = (20, 20);
    let first: Vec<u8> = (0..h * w).map(|i| pairs[(i / w) % 7].0).collect();
    let last: Vec<u8> = (0..h * w).map(|i| pairs[(i / w) % 7].1).collect();
    let maps = [LabelMask::new(h, w, first).unwrap(), LabelMask::new(h, w, last).unwrap()];
    let params = DesignParams { cluster_size: 10, n_clusters: 4, allocation: [6, 6, 6, 6, 6, 6, 4] };
    let draws = 2000;
    let mut hits = vec![0u32; h * w];
    for s in 0..draws {
        let (d, pts) = draw_design(&maps, &params, s).unwrap();
        assert_eq!(d.stratum_pixels, [60, 60, 60, 60, 60, 60, 40]);
        for p in pts {
            hits[p.row * w + p.col] += 1;
        }
    }
    // Every pixel has inclusion probability 0.1.
    let expected = 0.1 * draws as f64;
    let sd = (draws as f64 * 0.1 * 0.9).sqrt();
    for (i, &n) in hits.iter().enumerate() {
        assert!((f64::from(n) - expected).abs() <= 5.0 * sd, "pixel {i}: {n} draws");
    }
    let mean = hits.iter().map(|&n| f64::from(n)).sum::<f64>() / hits.len() as f64;
    assert!((mean - expected).abs() < 1e-9);
}
