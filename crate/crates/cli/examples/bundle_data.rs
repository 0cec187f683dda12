//! Regenerate the bundled `data/` directory from the in-code fixtures.
//!
//! cargo run -p freecond-cli --example bundle_data -- [DIR]

use std::path::PathBuf;

use freecond::fixtures::{test_cases, CASE_SIZE};
use freecond::io::{atomic_write, save_image, save_mask};
use freecond::MaskGrid;
use freecond_cli::RunConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));

    for case in test_cases() {
        let dir = root.join("cases").join(case.name);
        std::fs::create_dir_all(&dir)?;
        save_image(&dir.join("image.png"), &case.image)?;
        save_mask(&dir.join("mask.png"), &case.mask)?;
        save_mask(&dir.join("object.png"), &case.object)?;
        atomic_write(&dir.join("prompt.txt"), format!("{}\n", case.prompt).as_bytes())?;

        let config = RunConfig {
            image: Some(format!("cases/{}/image.png", case.name).into()),
            mask: Some(format!("cases/{}/mask.png", case.name).into()),
            prompt: case.prompt.to_string(),
            output_dir: format!("../out/{}", case.name).into(),
            ..RunConfig::default()
        };
        let mut json = serde_json::to_vec_pretty(&config)?;
        json.push(b'\n');
        atomic_write(&root.join(format!("{}.json", case.name)), &json)?;
        if case.name == "disc" {
            atomic_write(&root.join("default.json"), &json)?;
        }
    }

    let masks = root.join("masks");
    std::fs::create_dir_all(&masks)?;
    let n = CASE_SIZE;
    save_mask(&masks.join("disjoint_a.png"), &MaskGrid::from_fn(n, n, |i, j| i < n / 2 && j < n / 2))?;
    save_mask(&masks.join("disjoint_b.png"), &MaskGrid::from_fn(n, n, |i, j| i >= n / 2 && j >= n / 2))?;

    let scores = root.join("scores");
    std::fs::create_dir_all(&scores)?;
    let csv = "sample,method,metric,value\n\
               disc,baseline,clip,0.2125\n\
               disc,freecond,clip,0.2375\n\
               stripes,baseline,clip,0.1980\n\
               stripes,freecond,clip,0.2210\n\
               disc,baseline,lpips,0.1820\n\
               disc,freecond,lpips,0.1905\n";
    atomic_write(&scores.join("external.csv"), csv.as_bytes())?;
    println!("wrote {}", root.display());
    Ok(())
}
