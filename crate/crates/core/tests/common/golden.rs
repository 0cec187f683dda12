//! Pinned regression values. A key missing from the store fails the test
//! unless `FREECOND_BLESS=1` is set, in which case the value is recorded.
//! Existing keys are never overwritten.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use freecond::conditioning::{make_mask_condition, mask_image, FreeCondParams};
use freecond::fixtures::test_cases;
use freecond::sampler::{inpaint, sample_initial_noise, InpaintOptions};
use freecond::toynet::{
    denoise_trunk, encode_image, gen_weights, input_conv, predict_noise, text_encode, NetConfig,
    NetWeights,
};
use freecond::analysis::extract_attention_map;
use freecond::toynet::cross_attention;

static STORE_LOCK: Mutex<()> = Mutex::new(());

pub fn check_golden(store: &Path, key: &str, actual: &str) {
    let _guard = STORE_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let mut entries: BTreeMap<String, String> = match std::fs::read_to_string(store) {
        Ok(text) => serde_json::from_str(&text).expect("golden store is valid JSON"),
        Err(_) => BTreeMap::new(),
    };
    match entries.get(key) {
        Some(expected) => assert_eq!(actual, expected, "golden value `{key}` changed"),
        None if std::env::var("FREECOND_BLESS").as_deref() == Ok("1") => {
            entries.insert(key.to_string(), actual.to_string());
            let text = serde_json::to_string_pretty(&entries).unwrap() + "\n";
            std::fs::write(store, text).expect("write golden store");
        }
        None => panic!("no golden value for `{key}` (actual {actual}); rerun with FREECOND_BLESS=1 to record it"),
    }
}

pub fn core_store() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/goldens.json")
}

pub fn sha256_f64(values: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in values {
        hasher.update(v.to_le_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn seed42_weights() -> NetWeights {
    gen_weights(&NetConfig::default()).unwrap()
}

/// Every seed-42 regression value derived from the first bundled case.
pub fn core_goldens(weights: &NetWeights) -> Vec<(&'static str, String)> {
    let case = test_cases().remove(0);
    let cfg = &weights.config;
    let zc = encode_image(&mask_image(&case.image, &case.mask).unwrap(), weights).unwrap();
    let mc = make_mask_condition(&case.mask, cfg.latent_factor).unwrap();
    let z_t = sample_initial_noise(cfg.latent_shape(), 42);
    let h0 = input_conv(&z_t, &mc, &zc, weights).unwrap();
    let trunk = denoise_trunk(&z_t, &zc, &mc, cfg.timesteps, weights).unwrap();
    let (_, record) =
        cross_attention(trunk.features(), &text_encode(case.prompt, weights), weights).unwrap();
    let eps = predict_noise(&z_t, &zc, &mc, cfg.timesteps, case.prompt, weights).unwrap();
    let heatmap = extract_attention_map(&record, 1).unwrap();
    let run = inpaint(
        &case.image,
        &case.mask,
        case.prompt,
        &FreeCondParams::default(),
        weights,
        42,
        &InpaintOptions::default(),
    )
    .unwrap();
    vec![
        ("weights", weights.checksum()),
        ("encode_image", zc.checksum()),
        ("input_conv", sha256_f64(&h0.data)),
        ("attention", sha256_f64(&record.probs)),
        ("predict_noise_norm", format!("{:?}", eps.sum_of_squares().sqrt())),
        ("heatmap", sha256_f64(heatmap.values())),
        ("inpaint_output", run.record.output_checksum.clone()),
    ]
}
