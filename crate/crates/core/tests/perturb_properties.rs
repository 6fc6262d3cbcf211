use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use simexplain::eval::miou;
use simexplain::image::{Image, Mask, MID_GRAY};
use simexplain::perturb::{censor_count, censor_top_fraction, AttentionMap};
use simexplain::transport::{joint_marginals, normalize_joint, DenseInteraction, RegionKind};

fn attention(w: usize, h: usize) -> impl Strategy<Value = AttentionMap> {
    prop::collection::vec(-1.0f64..1.0, w * h).prop_map(move |v| AttentionMap::new(w, h, v).unwrap())
}

fn mask(w: usize, h: usize) -> impl Strategy<Value = Mask> {
    prop::collection::vec(any::<bool>(), w * h).prop_map(move |b| Mask::from_bits(w, h, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn censor_count_is_ceiling(pixels in 1usize..5000, fraction in 0.001f64..=1.0) {
        let k = censor_count(pixels, fraction).unwrap();
        prop_assert!(k <= pixels);
        prop_assert!(k as f64 + 1e-6 >= fraction * pixels as f64);
        prop_assert!((k as f64) < fraction * pixels as f64 + 1.0);
    }

    #[test]
    fn top_mask_keeps_the_largest(att in attention(12, 9), k in 0usize..=108) {
        let m = att.top_mask(k);
        prop_assert_eq!(m.count(), k);
        let kept = (0..108).filter(|&p| m.get(p)).map(|p| att.values()[p]).fold(f64::INFINITY, f64::min);
        let dropped = (0..108).filter(|&p| !m.get(p)).map(|p| att.values()[p]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(k == 0 || k == 108 || kept >= dropped);
    }

    #[test]
    fn censoring_touches_only_the_top(att in attention(10, 10), fraction in 0.01f64..=1.0) {
        let img = Image::filled(10, 10, [0.1, 0.2, 0.9]).unwrap();
        let out = censor_top_fraction(&img, &att, fraction, MID_GRAY).unwrap();
        let top = att.top_mask(censor_count(100, fraction).unwrap());
        for p in 0..100 {
            let expect = if top.get(p) { MID_GRAY } else { [0.1, 0.2, 0.9] };
            prop_assert_eq!(out.pixel_at(p), expect);
        }
    }

    #[test]
    fn joint_marginals_are_distributions(rows in 1usize..6, cols in 1usize..6, seed in prop::collection::vec(-1.0f64..1.0, 36)) {
        let mut values = seed[..rows * cols].to_vec();
        values[0] = values[0].abs() + 0.1;
        let jd = normalize_joint(&DenseInteraction::new(rows, cols, values).unwrap(), RegionKind::Superpixel).unwrap();
        prop_assert!(jd.values.iter().all(|&v| v >= 0.0));
        let (q, r) = joint_marginals(&jd);
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn miou_bounded_and_maximal_on_truth(pred in mask(8, 8), truth in mask(8, 8)) {
        let (score, _) = miou(&pred, &truth).unwrap();
        prop_assert!((0.0..=1.0).contains(&score));
        let (same, _) = miou(&truth, &truth).unwrap();
        assert_abs_diff_eq!(same, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn nonpositive_joint_is_rejected() {
    let raw = DenseInteraction::new(2, 2, vec![-1.0, 0.0, -0.5, 0.0]).unwrap();
    assert!(normalize_joint(&raw, RegionKind::Superpixel).is_err());
}
