use proptest::prelude::*;
use xaas_core::metrics::{self, SsimParams};
use xaas_core::refmodel;
use xaas_core::rng::{seeded_rng, uniform01};
use xaas_core::synthetic;
use xaas_core::types::{softmax, GrayImage, PredictionRecord, TensorImage};

fn gray(h: usize, w: usize, v: Vec<f64>) -> GrayImage {
    GrayImage::new(h, w, v).unwrap()
}

proptest! {
    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
        let a = softmax(&logits).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn prediction_record_probs_are_softmax(logits in prop::collection::vec(-30.0f64..30.0, 2..12)) {
        let r = PredictionRecord::from_logits(logits.clone()).unwrap();
        prop_assert!((r.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(r.top1_prob, r.probs.iter().cloned().fold(f64::MIN, f64::max));
        // swapping the largest and smallest probability breaks the softmax link
        let lo = (0..r.probs.len()).min_by(|&a, &b| r.probs[a].total_cmp(&r.probs[b])).unwrap();
        if r.probs[r.top1_index] - r.probs[lo] > 1e-6 {
            let mut swapped = r.probs.clone();
            swapped.swap(r.top1_index, lo);
            prop_assert!(PredictionRecord::new(logits, swapped).is_err());
        }
    }

    #[test]
    fn deviation_is_affine_in_masked_score(p in 0.0f64..1.0, q in 0.0f64..1.0, d in -0.5f64..0.5) {
        let step = metrics::explanation_deviation(p, q + d) - metrics::explanation_deviation(p, q);
        prop_assert!((step - d).abs() <= 1e-12);
    }

    #[test]
    fn resilience_is_zero_on_the_diagonal_and_antisymmetric(a in -2.0f64..2.0, b in -2.0f64..2.0) {
        prop_assert_eq!(metrics::explanation_resilience(a, a), 0.0);
        prop_assert_eq!(metrics::explanation_resilience(a, b), -metrics::explanation_resilience(b, a));
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_on_equal(raw_p in prop::collection::vec(0.01f64..1.0, 2..10), seed in any::<u64>()) {
        let s: f64 = raw_p.iter().sum();
        let p: Vec<f64> = raw_p.iter().map(|v| v / s).collect();
        let mut rng = seeded_rng(seed);
        let raw_q: Vec<f64> = p.iter().map(|_| 0.01 + uniform01(&mut rng)).collect();
        let s: f64 = raw_q.iter().sum();
        let q: Vec<f64> = raw_q.iter().map(|v| v / s).collect();
        prop_assert_eq!(metrics::kl_normalized(&p, &p).unwrap(), 0.0);
        let kl = metrics::kl_normalized(&p, &q).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert!(p == q || kl > 0.0);
    }

    #[test]
    fn mae_and_ssim_are_symmetric(a in prop::collection::vec(0.0f64..1.0, 64), b in prop::collection::vec(0.0f64..1.0, 64)) {
        prop_assert_eq!(metrics::mae(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(metrics::mae(&a, &b).unwrap(), metrics::mae(&b, &a).unwrap());
        let p = SsimParams::default();
        let (x, y) = (gray(8, 8, a.clone()), gray(8, 8, b));
        prop_assert!((metrics::ssim(&x, &x, &p).unwrap() - 1.0).abs() <= 1e-9);
        let (s, t) = (metrics::ssim(&x, &y, &p).unwrap(), metrics::ssim(&y, &x, &p).unwrap());
        prop_assert!((s - t).abs() <= 1e-12, "{s} vs {t}");
    }

    #[test]
    fn refmodel_predict_is_pure(pixels in prop::collection::vec(0.0f32..1.0, 8 * 8 * 3)) {
        let img = TensorImage::new(8, 8, pixels).unwrap();
        let m = refmodel::vision();
        prop_assert_eq!(m.predict_image(&img).unwrap(), m.predict_image(&img).unwrap());
    }
}

fn blank(img: &TensorImage, pixels: &[usize]) -> TensorImage {
    let mut data = img.data().to_vec();
    for &p in pixels {
        data[p * 3..p * 3 + 3].fill(0.0);
    }
    TensorImage::new(img.height(), img.width(), data).unwrap()
}

#[test]
fn blanking_salient_pixels_hurts_more_than_random_ones() {
    let m = refmodel::vision();
    let ds = synthetic::image_dataset(64, 7);
    let mut rng = seeded_rng(11);
    let (mut salient, mut random) = (0.0, 0.0);
    for img in ds.as_images().unwrap() {
        let pred = m.predict_image(img).unwrap();
        let mask = m.explain_image(img, pred.top1_index).unwrap();
        let n = mask.values.len();
        let k = n / 4;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| mask.values[b].abs().total_cmp(&mask.values[a].abs()));
        // a partial Fisher-Yates shuffle picks k distinct random pixels
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + (uniform01(&mut rng) * (n - i) as f64) as usize;
            pool.swap(i, j);
        }
        let drop = |px: &[usize]| (pred.top1_prob - m.predict_image(&blank(img, px)).unwrap().probs[pred.top1_index]).abs();
        salient += drop(&order[..k]);
        random += drop(&pool[..k]);
    }
    assert!(salient > random, "salient {salient} random {random}");
}
