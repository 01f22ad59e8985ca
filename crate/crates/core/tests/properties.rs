use patchkit_core::attack::{patch_step, tv_loss, Patch, PatchOptimizer, StepMode};
use patchkit_core::image::{BoxFilter, Image};
use patchkit_core::BoundingBox;
use proptest::prelude::*;

fn image_strategy(max_side: usize) -> impl Strategy<Value = Image> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(0.0f64..=1.0, w * h * 3).prop_map(move |data| Image::from_vec(w, h, data).unwrap())
    })
}

/// Neighbor differences summed pixel by pixel, channel by channel.
fn tv_naive(img: &Image) -> f64 {
    let (w, h) = img.dims();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y);
            for c in 0..3 {
                if x + 1 < w {
                    total += (img.get(x + 1, y)[c] - p[c]).abs();
                }
                if y + 1 < h {
                    total += (img.get(x, y + 1)[c] - p[c]).abs();
                }
            }
        }
    }
    total
}

proptest! {
    #[test]
    fn tv_matches_naive_sum(img in image_strategy(16)) {
        let a = tv_loss(&img);
        let b = tv_naive(&img);
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn patch_step_keeps_texels_in_range(
        img in image_strategy(8),
        grad_seed in any::<u64>(),
        sign in any::<bool>(),
        step in 0.001f64..0.5,
    ) {
        let mut patch = Patch::from_image(img, 0).unwrap();
        let n = patch.texels.data().len();
        let mode = if sign { StepMode::Sign } else { StepMode::Adaptive };
        let mut opt = PatchOptimizer::new(mode, step, n).unwrap();
        for round in 0..3u64 {
            let grad: Vec<f64> = (0..n as u64)
                .map(|i| ((grad_seed ^ (i * 0x9E37_79B9) ^ round).wrapping_mul(0x2545_F491) % 2001) as f64 / 1000.0 - 1.0)
                .collect();
            patch_step(&mut patch, &grad, &mut opt).unwrap();
            prop_assert!(patch.texels.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn box_filter_preserves_the_mean_of_full_blocks(img in image_strategy(12), f in 1usize..4) {
        let (w, h) = img.dims();
        let filter = BoxFilter::for_scale(w, h, 1.0 / f as f64);
        let out = filter.apply(&img);
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        if w % filter.factor == 0 && h % filter.factor == 0 {
            prop_assert!((out.mean() - img.mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..40.0, 1.0f64..40.0),
        b in (0.0f64..50.0, 0.0f64..50.0, 1.0f64..40.0, 1.0f64..40.0),
    ) {
        let a = BoundingBox::new(a.0, a.1, a.0 + a.2, a.1 + a.3).unwrap();
        let b = BoundingBox::new(b.0, b.1, b.0 + b.2, b.1 + b.3).unwrap();
        let (ab, ba) = (a.iou(&b), b.iou(&a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((a.iou(&a) - 1.0).abs() < 1e-12);
    }
}
