mod common;

use std::f64::consts::PI;

use common::oracles::{baseline_guided_loop, random_latent};
use freecond::fixtures::test_cases;
use freecond::grid::MaskGrid;
use freecond::rng::SplitMix64;
use freecond::sampler::{cfg_combine, inpaint, InpaintOptions};
use freecond::toynet::{gen_weights, NetConfig, NetWeights};
use freecond::FreeCondParams;
use proptest::prelude::*;

fn weights() -> NetWeights {
    gen_weights(&NetConfig::default()).unwrap()
}

fn traced() -> InpaintOptions {
    InpaintOptions {
        capture_trajectory: true,
        capture_attention: false,
    }
}

#[test]
fn identity_parameters_reproduce_plain_guidance() {
    let weights = weights();
    let params = FreeCondParams::default();
    assert!(params.is_identity());
    for case in test_cases() {
        let out = inpaint(&case.image, &case.mask, case.prompt, &params, &weights, 42, &traced()).unwrap();
        let (image, trajectory) =
            baseline_guided_loop(&case.image, &case.mask, case.prompt, params.w, params.steps, &weights, 42);
        assert_eq!(out.trajectory.len(), trajectory.len());
        for (a, b) in out.trajectory.iter().zip(&trajectory) {
            assert_eq!(a.values(), b.values(), "{}: trajectories diverge", case.name);
        }
        assert_eq!(out.image.values(), image.values(), "{}", case.name);
    }
}

#[test]
fn identity_holds_with_late_filter_start() {
    // γ = π leaves the image condition untouched whatever t_fc is.
    let weights = weights();
    let case = test_cases().remove(1);
    let params = FreeCondParams { t_fc: 6, steps: 10, ..FreeCondParams::default() };
    let out = inpaint(&case.image, &case.mask, case.prompt, &params, &weights, 9, &traced()).unwrap();
    let (image, _) = baseline_guided_loop(&case.image, &case.mask, case.prompt, 15.0, 10, &weights, 9);
    assert_eq!(out.image.values(), image.values());
}

#[test]
fn each_parameter_moves_the_trajectory() {
    let weights = weights();
    let case = test_cases().remove(0);
    let base = FreeCondParams { steps: 10, ..FreeCondParams::default() };
    let run = |p: &FreeCondParams| {
        inpaint(&case.image, &case.mask, case.prompt, p, &weights, 42, &traced()).unwrap()
    };
    let reference = run(&base);
    let variants = [
        FreeCondParams { alpha: 2.0, ..base },
        FreeCondParams { beta: 0.5, ..base },
        FreeCondParams { gamma: PI / 4.0, ..base },
        // Filtering switched off for every step but the first.
        FreeCondParams { gamma: PI / 4.0, t_fc: 10, ..base },
    ];
    let filtered_all = run(&variants[2]);
    for params in &variants {
        let other = run(params);
        let moved = other
            .trajectory
            .iter()
            .zip(&reference.trajectory)
            .any(|(a, b)| a.values() != b.values());
        assert!(moved, "{params:?} left the trajectory unchanged");
    }
    // Changing only t_fc under a real filter also changes the run.
    let late = run(&variants[3]);
    assert_ne!(late.final_latent.values(), filtered_all.final_latent.values());
}

#[test]
fn output_matches_input_dimensions_and_is_deterministic() {
    let weights = weights();
    let case = test_cases().remove(2);
    let params = FreeCondParams { steps: 5, alpha: 3.0, gamma: 1.0, ..FreeCondParams::default() };
    let a = inpaint(&case.image, &case.mask, case.prompt, &params, &weights, 1, &InpaintOptions::default()).unwrap();
    let b = inpaint(&case.image, &case.mask, case.prompt, &params, &weights, 1, &InpaintOptions::default()).unwrap();
    assert_eq!(a.image.shape(), case.image.shape());
    assert_eq!(a.image.values(), b.image.values());
    assert_eq!(
        serde_json::to_string(&a.record).unwrap(),
        serde_json::to_string(&b.record).unwrap()
    );
    assert!(a.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn empty_mask_is_flagged_not_rejected() {
    let weights = weights();
    let case = test_cases().remove(0);
    let (h, w) = case.mask.shape();
    let params = FreeCondParams { steps: 3, ..FreeCondParams::default() };
    let out = inpaint(&case.image, &MaskGrid::zeros(h, w), case.prompt, &params, &weights, 1, &InpaintOptions::default()).unwrap();
    assert!(out.record.degenerate_mask);
}

#[test]
fn invalid_inputs_are_rejected() {
    let weights = weights();
    let case = test_cases().remove(0);
    let bad_gamma = FreeCondParams { gamma: 4.0, ..FreeCondParams::default() };
    let err = inpaint(&case.image, &case.mask, "", &bad_gamma, &weights, 1, &InpaintOptions::default()).unwrap_err();
    assert!(err.to_string().contains("gamma outside [0, π]"), "{err}");
    let soft = MaskGrid::new(64, 64, vec![0.5; 64 * 64]).unwrap();
    assert!(inpaint(&case.image, &soft, "", &FreeCondParams::default(), &weights, 1, &InpaintOptions::default()).is_err());
    let too_many = FreeCondParams { steps: 60, ..FreeCondParams::default() };
    assert!(inpaint(&case.image, &case.mask, "", &too_many, &weights, 1, &InpaintOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn guidance_is_affine_in_scale(seed in any::<u64>(), w1 in -20.0f64..20.0, w2 in -20.0f64..20.0) {
        let mut rng = SplitMix64::new(seed);
        let u = random_latent((2, 3, 3), &mut rng);
        let c = random_latent((2, 3, 3), &mut rng);
        let a = cfg_combine(&u, &c, w1).unwrap();
        let b = cfg_combine(&u, &c, w2).unwrap();
        let s = cfg_combine(&u, &c, w1 + w2).unwrap();
        for k in 0..u.values().len() {
            let lhs = a.values()[k] + b.values()[k] - u.values()[k];
            prop_assert!((lhs - s.values()[k]).abs() <= 1e-9);
        }
        prop_assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c.clone());
        prop_assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u.clone());
    }
}
