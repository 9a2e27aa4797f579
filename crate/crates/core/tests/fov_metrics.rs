use depthbins::fov::*;
use depthbins::maps::{DepthMap, RgbImage};
use depthbins::metrics::*;
use proptest::prelude::*;

fn matched(w: usize, h: usize, fov: &FovSpec) -> CameraIntrinsics {
    let fx = w as f64 / 2.0 / (fov.omega_x / 2.0).tan();
    let fy = h as f64 / 2.0 / (fov.omega_y / 2.0).tan();
    CameraIntrinsics::centered(fx, fy, w, h).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matched_fov_round_trip(w in 8usize..48, h in 8usize..48, seed in 0u32..1000) {
        let fov = FovSpec::from_degrees(58.0, 45.0, w, h).unwrap();
        let intr = matched(w, h, &fov);
        let depth = DepthMap::from_depths(w, h, (0..w * h).map(|i| 0.5 + ((i as u32 * 7919 + seed) % 997) as f32 * 0.05).collect()).unwrap();
        let img = RgbImage::filled(w, h, 30.0);
        let a = align_fov(&img, Some(&depth), &intr, &fov).unwrap();
        let back = inverse_align(a.depth.as_ref().unwrap(), &a, &intr).unwrap();
        for i in 0..w * h {
            prop_assert!(back.valid[i]);
            prop_assert!(((back.depth[i] - depth.depth[i]) / depth.depth[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn pad_pixels_are_white_and_invalid(
        w in 8usize..60, h in 8usize..60,
        fx in 3.0f64..200.0, aspect in 0.5f64..2.0,
        dx in -3.0f64..3.0, dy in -3.0f64..3.0,
        tw in 4usize..40, th in 4usize..40,
    ) {
        let intr = CameraIntrinsics::new(fx, fx * aspect, w as f64 / 2.0 + dx, h as f64 / 2.0 + dy, w, h).unwrap();
        let fov = FovSpec::from_degrees(58.0, 45.0, tw, th).unwrap();
        let img = RgbImage::new(w, h, (0..w * h * 3).map(|v| (v % 200) as f32).collect()).unwrap();
        let depth = DepthMap::constant(w, h, 4.0);
        let a = match align_fov(&img, Some(&depth), &intr, &fov) {
            Ok(a) => a,
            Err(_) => return Ok(()),
        };
        let d = a.depth.as_ref().unwrap();
        for (i, pad) in a.pad_mask.iter().enumerate() {
            if *pad {
                prop_assert_eq!(a.image.pixel(i % tw, i / tw), [PAD_VALUE; 3]);
                prop_assert!(!d.valid[i]);
            }
        }
        let (cx, cy) = a.crop_rect.center();
        prop_assert!((cx - intr.cx).abs() <= 1.0 && (cy - intr.cy).abs() <= 1.0);
        let size = target_crop_size(&intr, &fov);
        prop_assert_eq!((a.crop_rect.width, a.crop_rect.height), (size.width, size.height));
    }

    #[test]
    fn metrics_match_pixel_loop(
        pred in prop::collection::vec(0.0f32..12.0, 64),
        gt in prop::collection::vec(0.0f32..12.0, 64),
    ) {
        let p = DepthMap::from_depths(8, 8, pred.clone()).unwrap();
        let g = DepthMap::from_depths(8, 8, gt.clone()).unwrap();
        let cap = 10.0;
        let (mut n, mut d, mut rel, mut sq, mut lg) = (0.0, [0.0; 3], 0.0, 0.0, 0.0);
        for i in 0..64 {
            if !(gt[i] > 0.0 && pred[i] > 0.0 && (gt[i] as f64) <= cap) {
                continue;
            }
            let (pp, gg) = ((pred[i] as f64).max(1e-3), gt[i] as f64);
            let r = if pp / gg > gg / pp { pp / gg } else { gg / pp };
            for k in 0..3 {
                if r < 1.25f64.powi(k as i32 + 1) {
                    d[k] += 1.0;
                }
            }
            rel += (pp - gg).abs() / gg;
            sq += (pp - gg).powi(2);
            lg += (pp.log10() - gg.log10()).abs();
            n += 1.0;
        }
        match compute_metrics(&p, &g, cap) {
            Ok(r) => {
                prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
                prop_assert!((r.delta1 - d[0] / n).abs() <= 1e-9);
                prop_assert!((r.delta2 - d[1] / n).abs() <= 1e-9);
                prop_assert!((r.delta3 - d[2] / n).abs() <= 1e-9);
                prop_assert!((r.rel - rel / n).abs() <= 1e-9);
                prop_assert!((r.rmse - (sq / n).sqrt()).abs() <= 1e-9);
                prop_assert!((r.log10 - lg / n).abs() <= 1e-9);
                prop_assert_eq!(r.n_pixels as f64, n);
            }
            Err(_) => prop_assert_eq!(n, 0.0),
        }
    }
}

#[test]
fn paper_camera_crop() {
    let intr = CameraIntrinsics::centered(1091.517, 1091.517, 1920, 1080).unwrap();
    let s = target_crop_size(&intr, &FovSpec::from_degrees(58.0, 45.0, 564, 424).unwrap());
    assert!((s.width as i64 - 1210).abs() <= 1, "{s:?}");
    assert!((s.height as i64 - 904).abs() <= 1, "{s:?}");
}

#[test]
fn inverse_never_uses_padding() {
    let intr = CameraIntrinsics::centered(60.0, 60.0, 40, 30).unwrap();
    let fov = FovSpec::from_degrees(58.0, 45.0, 32, 24).unwrap();
    let a = align_fov(&RgbImage::filled(40, 30, 0.0), None, &intr, &fov).unwrap();
    assert!(a.pad_mask.iter().any(|p| *p));
    let mut pred = DepthMap::constant(32, 24, 2.0);
    for (i, pad) in a.pad_mask.iter().enumerate() {
        if *pad {
            pred.depth[i] = 999.0;
        }
    }
    let back = inverse_align(&pred, &a, &intr).unwrap();
    assert!(back.depth.iter().zip(&back.valid).all(|(d, v)| !v || *d == 2.0));
}
