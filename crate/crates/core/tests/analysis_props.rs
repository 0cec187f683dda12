mod common;

use common::oracles::{masked_mean_logit, random_binary_mask};
use freecond::analysis::{
    channel_influence, ci_report, delta_ci, extract_attention_map, mask_placement_classify,
    run_shift_experiment, write_ci_csv, CiLayer, CiRequest, MaskPlacement, Region,
    ShiftExperiment,
};
use freecond::conditioning::mask_image;
use freecond::fixtures::test_cases;
use freecond::grid::{shift, MaskGrid};
use freecond::rng::SplitMix64;
use freecond::toynet::{cross_attention, gen_weights, input_conv, text_encode, NetConfig};
use freecond::{Error, FreeCondParams};
use proptest::prelude::*;

fn random_instance(rng: &mut SplitMix64, positions: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let q = (0..positions * d).map(|_| rng.next_normal()).collect();
    let mut m: Vec<f64> = (0..positions).map(|_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 }).collect();
    m[0] = 1.0;
    let k = (0..d).map(|_| rng.next_normal()).collect();
    (q, m, k)
}

#[test]
fn channel_sum_equals_masked_mean_logit() {
    let mut rng = SplitMix64::new(500);
    for _ in 0..100 {
        let (q, m, k) = random_instance(&mut rng, 64, 16);
        let ci = channel_influence(&q, &m, &k).unwrap();
        let total: f64 = ci.iter().sum();
        assert!((total - masked_mean_logit(&q, &m, &k)).abs() <= 1e-9);
    }
}

#[test]
fn empty_region_is_an_error() {
    let err = channel_influence(&[1.0, 2.0], &[0.0], &[1.0, 1.0]).unwrap_err();
    assert!(matches!(err, Error::Domain(ref m) if m.contains("empty region")));
}

#[test]
fn hand_evaluated_delta() {
    // Two positions, two channels, only position 0 in the region.
    let q_l = [1.0, 2.0, 5.0, 5.0];
    let q_n = [0.5, -1.0, 9.0, 9.0];
    let k = [2.0, 3.0];
    let region = [1.0, 0.0];
    assert_eq!(channel_influence(&q_l, &region, &k).unwrap(), vec![2.0, 6.0]);
    assert_eq!(delta_ci(&q_l, &q_n, &region, &k).unwrap(), vec![1.0, 9.0]);
}

#[test]
fn identical_conditions_give_zero_delta() {
    let weights = gen_weights(&NetConfig::default()).unwrap();
    let case = test_cases().remove(0);
    let req = CiRequest {
        image: &case.image,
        mask: &case.mask,
        companion: Some(&case.mask),
        prompt: case.prompt,
        noise_seed: 42,
        steps: 50,
        layer: CiLayer::InputConv,
        tokens: None,
    };
    let reports = ci_report(&req, &weights).unwrap();
    assert_eq!(reports.len(), 77 * 2);
    assert!(reports.iter().all(|r| r.delta_ci.iter().all(|&v| v == 0.0)));
    assert!(reports.iter().all(|r| r.ci.len() == 64));

    let mut csv = Vec::new();
    write_ci_csv(&reports, &mut csv).unwrap();
    let lines = String::from_utf8(csv).unwrap().lines().count();
    assert_eq!(lines, 1 + 77 * 64 * 2);
}

#[test]
fn zero_companion_moves_the_query() {
    let weights = gen_weights(&NetConfig::default()).unwrap();
    let case = test_cases().remove(0);
    for layer in [CiLayer::InputConv, CiLayer::CrossAttention] {
        let req = CiRequest {
            image: &case.image,
            mask: &case.mask,
            companion: None,
            prompt: case.prompt,
            noise_seed: 42,
            steps: 50,
            layer,
            tokens: Some(vec![0, 1, 6]),
        };
        let reports = ci_report(&req, &weights).unwrap();
        assert_eq!(reports.len(), 6);
        assert_eq!(reports[0].region, Region::InsideMask);
        assert_eq!(reports[1].region, Region::OutsideMask);
        assert!(reports.iter().any(|r| r.delta_ci.iter().any(|&v| v != 0.0)));
    }
    let bad = CiRequest {
        image: &case.image,
        mask: &case.mask,
        companion: None,
        prompt: "",
        noise_seed: 42,
        steps: 50,
        layer: CiLayer::InputConv,
        tokens: Some(vec![77]),
    };
    assert!(ci_report(&bad, &weights).is_err());
}

#[test]
fn attention_map_rows_and_range() {
    let weights = gen_weights(&NetConfig::default()).unwrap();
    let mut rng = SplitMix64::new(9);
    let shape = weights.config.latent_shape();
    let z = common::oracles::random_latent(shape, &mut rng);
    let zc = common::oracles::random_latent(shape, &mut rng);
    let m = random_binary_mask(shape.1, shape.2, 0.3, &mut rng);
    let h0 = input_conv(&z, &m, &zc, &weights).unwrap();
    let (_, record) = cross_attention(&h0, &text_encode("a lamp", &weights), &weights).unwrap();
    let maps: Vec<MaskGrid> = (0..77).map(|t| extract_attention_map(&record, t).unwrap()).collect();
    for pos in 0..shape.1 * shape.2 {
        let total: f64 = maps.iter().map(|m| m.values()[pos]).sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }
    assert!(maps.iter().all(|m| m.values().iter().all(|v| (0.0..=1.0).contains(v))));
    assert!(extract_attention_map(&record, 77).is_err());
}

#[test]
fn bundled_cases_cover_every_placement() {
    let placements: Vec<MaskPlacement> = test_cases()
        .iter()
        .map(|c| mask_placement_classify(&c.object, &c.mask).unwrap())
        .collect();
    assert_eq!(
        placements,
        vec![MaskPlacement::FullyMasked, MaskPlacement::PartiallyMasked, MaskPlacement::NotMasked]
    );
    assert!(mask_placement_classify(&MaskGrid::zeros(64, 64), &test_cases()[0].mask).is_err());
}

#[test]
fn shift_experiment_pairs_runs() {
    let weights = gen_weights(&NetConfig::default()).unwrap();
    let case = test_cases().remove(0);
    let params = FreeCondParams { steps: 8, ..FreeCondParams::default() };
    let still = run_shift_experiment(&case.image, &case.mask, Some(&case.object), case.prompt, (0, 0), &params, &weights, 3).unwrap();
    assert_eq!(still.original.image.values(), still.shifted.image.values());
    let record_json = |r| serde_json::to_string(r).unwrap();
    assert_eq!(record_json(&still.experiment.original), record_json(&still.experiment.shifted));

    let moved = run_shift_experiment(&case.image, &case.mask, Some(&case.object), case.prompt, (25, 0), &params, &weights, 3).unwrap();
    assert_ne!(moved.shifted_mask.values(), case.mask.values());
    let support = |m: &MaskGrid| {
        let masked = mask_image(&case.image, m).unwrap();
        (0..64 * 64).filter(|&p| (0..3).any(|c| masked.values()[c * 64 * 64 + p] != 0.0)).collect::<Vec<_>>()
    };
    assert_ne!(support(&case.mask), support(&moved.shifted_mask));
    assert_ne!(moved.original.image.values(), moved.shifted.image.values());
    assert_eq!(moved.experiment.placement_original, Some(MaskPlacement::FullyMasked));
    assert_ne!(moved.experiment.placement_shifted, Some(MaskPlacement::FullyMasked));

    let json = serde_json::to_string(&moved.experiment).unwrap();
    let back: ShiftExperiment = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), json);

    assert!(run_shift_experiment(&case.image, &case.mask, None, case.prompt, (64, 0), &params, &weights, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ci_is_linear_in_key(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = SplitMix64::new(seed);
        let (q, m, k1) = random_instance(&mut rng, 20, 8);
        let k2: Vec<f64> = (0..8).map(|_| rng.next_normal()).collect();
        let mix: Vec<f64> = k1.iter().zip(&k2).map(|(x, y)| a * x + b * y).collect();
        let (c1, c2) = (channel_influence(&q, &m, &k1).unwrap(), channel_influence(&q, &m, &k2).unwrap());
        let c = channel_influence(&q, &m, &mix).unwrap();
        for i in 0..8 {
            prop_assert!((c[i] - (a * c1[i] + b * c2[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn ci_is_linear_in_queries(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = SplitMix64::new(seed);
        let (q1, m, k) = random_instance(&mut rng, 20, 8);
        let q2: Vec<f64> = (0..20 * 8).map(|_| rng.next_normal()).collect();
        let mix: Vec<f64> = q1.iter().zip(&q2).map(|(x, y)| a * x + b * y).collect();
        let (c1, c2) = (channel_influence(&q1, &m, &k).unwrap(), channel_influence(&q2, &m, &k).unwrap());
        let c = channel_influence(&mix, &m, &k).unwrap();
        for i in 0..8 {
            prop_assert!((c[i] - (a * c1[i] + b * c2[i])).abs() <= 1e-9);
        }
    }

    #[test]
    fn ci_ignores_mask_scale(seed in any::<u64>(), s in 0.01f64..100.0) {
        let mut rng = SplitMix64::new(seed);
        let (q, m, k) = random_instance(&mut rng, 20, 8);
        let scaled: Vec<f64> = m.iter().map(|v| v * s).collect();
        let (a, b) = (channel_influence(&q, &m, &k).unwrap(), channel_influence(&q, &scaled, &k).unwrap());
        for i in 0..8 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-9 * (1.0 + a[i].abs()));
        }
    }

    #[test]
    fn placement_is_translation_invariant(seed in any::<u64>(), dx in -2i64..=2, dy in -2i64..=2) {
        let mut rng = SplitMix64::new(seed);
        // Keep everything two pixels away from the border so nothing falls off.
        let inner = |rng: &mut SplitMix64, p: f64| MaskGrid::from_fn(12, 12, |i, j| {
            (2..10).contains(&i) && (2..10).contains(&j) && rng.next_f64() < p
        });
        let mut object = inner(&mut rng, 0.3);
        if object.count_ones() == 0 {
            object = MaskGrid::from_fn(12, 12, |i, j| i == 5 && j == 5);
        }
        let mask = inner(&mut rng, 0.5);
        let before = mask_placement_classify(&object, &mask).unwrap();
        let after = mask_placement_classify(&shift(&object, dx, dy).unwrap(), &shift(&mask, dx, dy).unwrap()).unwrap();
        prop_assert_eq!(before, after);
    }
}
