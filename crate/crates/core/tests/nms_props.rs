mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtmdet::postproc::{nms, nms_class_agnostic, postprocess, Detection, PostprocConfig};
use rtmdet::{AABox, BoxGeometry, RBox};

fn random_axis<R: Rng>(rng: &mut R, n: usize) -> Vec<Detection<AABox>> {
    (0..n)
        .map(|_| {
            let b = AABox::from_xywh(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(4.0..20.0), rng.random_range(4.0..20.0));
            // coarse scores so ties occur
            Detection::new(b, rng.random_range(0..3), (rng.random_range(0..20) as f64) / 20.0)
        })
        .collect()
}

fn random_rotated<R: Rng>(rng: &mut R, n: usize) -> Vec<Detection<RBox>> {
    (0..n)
        .map(|_| {
            let b = RBox::new(rng.random_range(0.0..40.0), rng.random_range(0.0..40.0), rng.random_range(4.0..20.0), rng.random_range(2.0..10.0), rng.random_range(-1.5..1.5));
            Detection::new(b, rng.random_range(0..3), (rng.random_range(0..20) as f64) / 20.0)
        })
        .collect()
}

#[test]
fn matches_reference_both_kinds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let n = rng.random_range(0..30);
        let thr = [0.3, 0.5, 0.65, 0.8][trial % 4];
        let ax = random_axis(&mut rng, n);
        assert_eq!(nms(&ax, thr), common::nms_reference(&ax, thr, true, AABox::iou));
        assert_eq!(nms_class_agnostic(&ax, thr), common::nms_reference(&ax, thr, false, AABox::iou));
        let rot = random_rotated(&mut rng, n);
        assert_eq!(nms(&rot, thr), common::nms_reference(&rot, thr, true, RBox::iou));
    }
}

proptest! {
    #[test]
    fn input_order_does_not_matter(seed in any::<u64>(), shift in 0usize..50) {
        // with distinct scores the kept set is independent of input order
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..25);
        let mut dets = random_axis(&mut rng, n);
        for (i, d) in dets.iter_mut().enumerate() {
            d.score = (i as f64 + 1.0) / (n as f64 + 1.0);
        }
        let k = shift % n;
        let mut rotated = dets.clone();
        rotated.rotate_left(k);
        let a: Vec<usize> = nms(&dets, 0.5);
        let b: Vec<usize> = nms(&rotated, 0.5).into_iter().map(|i| (i + k) % n).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn postprocess_respects_limits(seed in any::<u64>(), max_dets in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets = random_axis(&mut rng, 30);
        let cfg = PostprocConfig { score_thr: 0.2, iou_thr: 0.6, max_dets, class_agnostic: false };
        let out = postprocess(dets, &cfg);
        prop_assert!(out.len() <= max_dets);
        prop_assert!(out.iter().all(|d| d.score >= 0.2));
        prop_assert!(out.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
