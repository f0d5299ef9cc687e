use proptest::prelude::*;

use wsireg_core::deform::{optimize_deformation, warp, DeformConfig, DisplacementField};
use wsireg_core::landmarks::map_fixed_to_moving;
use wsireg_core::raster::{bilinear_sample, downsample, GrayImage};
use wsireg_core::rigid::{apply_rigid, RigidEstimate};
use wsireg_core::synth::{make_pair, SmoothFieldModel, SynthSpec};

fn smooth_fn(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (x / 7.0).sin() * (y / 9.0).cos() + 0.15 * ((x + 2.0 * y) / 13.0).cos()
}

/// Warping at half resolution and upsampling agrees with warping the full
/// resolution image through the upsampled, doubled field.
#[test]
fn coarse_warp_matches_fine_warp() {
    let fine = GrayImage::from_fn(64, 64, 1.0, |x, y| smooth_fn(x as f64, y as f64)).unwrap();
    let coarse = downsample(&fine, 2);
    let coarse_field = SmoothFieldModel::new(32, 32, 1.5, 16.0, 9).sample_grid();
    let fine_field = coarse_field.upsample2(64, 64);

    let warped_fine = warp(&fine, &fine_field).unwrap();
    let warped_coarse = warp(&coarse, &coarse_field).unwrap();
    let mut worst = 0.0f64;
    for y in 4..60 {
        for x in 4..60 {
            let up = bilinear_sample(
                &warped_coarse,
                (x as f64 - 0.5) / 2.0,
                (y as f64 - 0.5) / 2.0,
            );
            worst = worst.max((up - warped_fine.get(x, y)).abs());
        }
    }
    assert!(worst <= 1e-2, "max difference {worst}");
}

fn blob(w: usize, h: usize, c: [f64; 2]) -> GrayImage {
    GrayImage::from_fn(w, h, 1.0, |x, y| {
        let d2 = (x as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2);
        (-d2 / (2.0 * 1.5 * 1.5)).exp()
    })
    .unwrap()
}

fn argmax(img: &GrayImage) -> (usize, usize) {
    let i = img
        .data()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0;
    (i % img.width(), i / img.width())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// A bright spot placed where the point map sends fixed point p shows up
    /// at p after apply_rigid and warp.
    #[test]
    fn impulse_lands_where_the_point_map_says(
        rotated in any::<bool>(),
        dx in -6i64..6,
        dy in -6i64..6,
        seed in 0u64..1000,
        px in 16usize..40,
        py in 16usize..40,
    ) {
        let (fw, fh) = (56, 56);
        let (mw, mh) = (60, 52);
        let est = RigidEstimate { rotated_180: rotated, dx, dy, score: 1.0 };
        let field = SmoothFieldModel::new(fw, fh, 2.5, 24.0, seed).sample_grid();
        let p = [px as f64, py as f64];
        let q = map_fixed_to_moving(p, &est, &field, (mw, mh)).unwrap();
        prop_assume!(q[0] > 4.0 && q[1] > 4.0 && q[0] < mw as f64 - 5.0 && q[1] < mh as f64 - 5.0);
        let moving = blob(mw, mh, q);
        let warped = warp(&apply_rigid(&moving, &est, fw, fh), &field).unwrap();
        let (ax, ay) = argmax(&warped);
        let d = (ax as f64 - p[0]).hypot(ay as f64 - p[1]);
        prop_assert!(d <= 1.0, "peak at ({ax}, {ay}), expected {p:?}");
    }

    /// The returned objective never exceeds the zero-field objective.
    #[test]
    fn optimization_never_regresses(
        seed in 0u64..500,
        lr0 in 1e-4f64..0.05,
        lambda_smooth in 0.0f64..1.0,
        levels in 1usize..4,
        iterations in 1usize..40,
        amplitude in 0.0f64..4.0,
    ) {
        let pair = make_pair(&SynthSpec {
            seed,
            width: 32,
            height: 32,
            field_amplitude: amplitude,
            field_wavelength: 12.0,
            ..SynthSpec::default()
        }).unwrap();
        let cfg = DeformConfig { lr0, lambda_smooth, levels, iterations, ..DeformConfig::default() };
        let res = optimize_deformation(&pair.fixed, &pair.moving, &cfg).unwrap();
        prop_assert!(res.final_total <= res.initial_total);
        prop_assert_eq!(res.trace.records.len(), iterations);
    }
}

#[test]
fn zero_field_round_trip_is_exact() {
    let est = RigidEstimate {
        rotated_180: true,
        dx: 3,
        dy: -2,
        score: 1.0,
    };
    let field = DisplacementField::zeros(20, 20);
    let q = map_fixed_to_moving([5.0, 7.0], &est, &field, (24, 18)).unwrap();
    assert_eq!(q, [23.0 - 2.0, 17.0 - 9.0]);
}
