use std::path::{Path, PathBuf};

use rayon::prelude::*;

use freecond::analysis::{ci_report, write_ci_csv, CiLayer, CiRequest};
use freecond::io::{atomic_write, encode_tensor, load_image, load_mask, load_weights, save_image, save_mask, save_weights, WeightManifest};
use freecond::metrics::{change_mask, format_aggregate_table, iou, masked_region_metrics, psnr, Provenance, ScoreTable};
use freecond::sampler::{inpaint, InpaintOptions};
use freecond::toynet::{gen_weights, text_encode, EOT_LABEL};
use freecond::{Error, InpaintOutput, LatentGrid, MaskGrid, NetWeights};

use crate::config::RunConfig;
use crate::exit::CliError;

pub const SWEEP_CSV_HEADER: [&str; 6] = ["value", "iou", "psnr_outside", "changed_fraction", "run", "error"];

/// Weights named by the config, or freshly generated from its `net` section.
pub fn resolve_weights(config: &RunConfig) -> Result<NetWeights, CliError> {
    match &config.weights {
        Some(dir) => {
            let weights = load_weights(dir)?;
            if weights.config != config.net {
                return Err(Error::Conflict(format!(
                    "weights in {} were generated for a different net config",
                    dir.display()
                ))
                .into());
            }
            Ok(weights)
        }
        None => Ok(gen_weights(&config.net)?),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("records serialize");
    bytes.push(b'\n');
    Ok(atomic_write(path, &bytes)?)
}

struct Inputs {
    image: LatentGrid,
    mask: MaskGrid,
}

fn load_inputs(config: &RunConfig) -> Result<Inputs, CliError> {
    Ok(Inputs {
        image: load_image(config.image_path()?)?,
        mask: load_mask(config.mask_path()?)?,
    })
}

/// One inpaint run written to `run_dir` as `output.png` and `run.json`, plus
/// the optional attention and CI captures.
fn execute_run(config: &RunConfig, weights: &NetWeights, inputs: &Inputs, run_dir: &Path) -> Result<InpaintOutput, CliError> {
    let options = InpaintOptions {
        capture_trajectory: false,
        capture_attention: config.capture_attention,
    };
    let mut out = inpaint(
        &inputs.image,
        &inputs.mask,
        &config.prompt,
        &config.params,
        weights,
        config.noise_seed,
        &options,
    )?;
    out.record.image_path = config.image.as_ref().map(|p| p.display().to_string());
    out.record.mask_path = config.mask.as_ref().map(|p| p.display().to_string());
    out.record.output_path = Some("output.png".into());

    create_dir(run_dir)?;
    save_image(&run_dir.join("output.png"), &out.image)?;
    write_json(&run_dir.join("run.json"), &out.record)?;
    if config.capture_attention {
        write_attention(run_dir, &out)?;
    }
    if config.capture_ci {
        write_ci(config, weights, inputs, None, &run_dir.join("ci.csv"))?;
    }
    Ok(out)
}

/// `attention.tensor` holds every step as `[steps, positions, text_len]`;
/// `heatmap.png` shows the first prompt word at `t = T`, scaled to its peak.
fn write_attention(run_dir: &Path, out: &InpaintOutput) -> Result<(), CliError> {
    let Some((_, first)) = out.attention.first() else {
        return Ok(());
    };
    let steps: Vec<usize> = out.attention.iter().map(|(t, _)| *t).collect();
    let values: Vec<f64> = out.attention.iter().flat_map(|(_, r)| r.probs.iter().copied()).collect();
    let shape = [steps.len(), first.height * first.width, first.text_len];
    let meta = serde_json::json!({ "timesteps": steps, "height": first.height, "width": first.width });
    atomic_write(&run_dir.join("attention.tensor"), &encode_tensor(&shape, &values, Some(meta))?)?;

    let map = freecond::analysis::extract_attention_map(first, 1)?;
    let peak = map.values().iter().cloned().fold(0.0, f64::max);
    let scaled = map.values().iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect();
    save_mask(&run_dir.join("heatmap.png"), &MaskGrid::new(first.height, first.width, scaled)?)?;
    Ok(())
}

pub fn cmd_inpaint(config: &RunConfig) -> Result<InpaintOutput, CliError> {
    config.validate()?;
    let weights = resolve_weights(config)?;
    let inputs = load_inputs(config)?;
    execute_run(config, &weights, &inputs, &config.output_dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    W,
    Alpha,
    Beta,
    Gamma,
    #[value(name = "t_fc")]
    TFc,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::W => "w",
            Axis::Alpha => "alpha",
            Axis::Beta => "beta",
            Axis::Gamma => "gamma",
            Axis::TFc => "t_fc",
        }
    }

    /// Config with this axis set to `raw`, and the canonical label for it.
    fn apply(self, base: &RunConfig, raw: &str) -> Result<(RunConfig, String), CliError> {
        let mut config = base.clone();
        let bad = |e: &dyn std::fmt::Display| CliError::config(format!("bad {} value {raw:?}: {e}", self.name()));
        let label = if self == Axis::TFc {
            let v: usize = raw.trim().parse().map_err(|e| bad(&e))?;
            config.params.t_fc = v;
            v.to_string()
        } else {
            let v: f64 = raw.trim().parse().map_err(|e| bad(&e))?;
            let p = &mut config.params;
            match self {
                Axis::W => p.w = v,
                Axis::Alpha => p.alpha = v,
                Axis::Beta => p.beta = v,
                Axis::Gamma => p.gamma = v,
                Axis::TFc => unreachable!(),
            }
            v.to_string()
        };
        config.params.validate()?;
        Ok((config, label))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub run: String,
    pub iou: Option<f64>,
    pub psnr_outside: Option<f64>,
    pub changed_fraction: Option<f64>,
    pub error: Option<String>,
}

/// Worker count: explicit flag, then `FREECOND_THREADS`, then every core.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::config("--threads must be at least 1")) } else { Ok(n) };
    }
    match std::env::var("FREECOND_THREADS") {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config(format!("FREECOND_THREADS must be a positive integer, got {raw:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn score_run(config: &RunConfig, inputs: &Inputs, output: &LatentGrid) -> freecond::Result<(f64, f64, f64)> {
    let changed = change_mask(output, &inputs.image, config.change_threshold)?;
    let overlap = iou(&changed, &inputs.mask)?;
    let region = masked_region_metrics(output, &inputs.image, &inputs.mask, 1.0, config.change_threshold)?;
    Ok((overlap, region.psnr_outside, region.changed_fraction_inside))
}

/// One run per value, all sharing seeds; rows come back in value order
/// whatever the worker count.
pub fn cmd_sweep(config: &RunConfig, axis: Axis, values: &[String], threads: usize) -> Result<Vec<SweepRow>, CliError> {
    config.validate()?;
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    let runs: Vec<(RunConfig, String)> = values.iter().map(|v| axis.apply(config, v)).collect::<Result<_, _>>()?;
    let weights = resolve_weights(config)?;
    let inputs = load_inputs(config)?;
    create_dir(&config.output_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {threads} workers: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        runs.par_iter()
            .map(|(run_config, label)| {
                let run = format!("runs/{}={label}", axis.name());
                let mut row = SweepRow {
                    value: label.clone(),
                    run: run.clone(),
                    iou: None,
                    psnr_outside: None,
                    changed_fraction: None,
                    error: None,
                };
                let scored = execute_run(run_config, &weights, &inputs, &config.output_dir.join(&run))
                    .and_then(|out| score_run(run_config, &inputs, &out.image).map_err(CliError::from));
                match scored {
                    Ok((i, p, c)) => {
                        row.iou = Some(i);
                        row.psnr_outside = Some(p);
                        row.changed_fraction = Some(c);
                    }
                    Err(e) => row.error = Some(e.message),
                }
                row
            })
            .collect()
    });

    let mut writer = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::io(format!("cannot format sweep.csv: {e}"));
    writer.write_record(SWEEP_CSV_HEADER).map_err(wrap)?;
    for r in &rows {
        writer
            .write_record([
                r.value.clone(),
                fmt_cell(r.iou),
                fmt_cell(r.psnr_outside),
                fmt_cell(r.changed_fraction),
                r.run.clone(),
                r.error.clone().unwrap_or_default(),
            ])
            .map_err(wrap)?;
    }
    let bytes = writer.into_inner().map_err(|e| CliError::io(format!("cannot format sweep.csv: {e}")))?;
    atomic_write(&config.output_dir.join("sweep.csv"), &bytes)?;
    Ok(rows)
}

/// Which prompt tokens a CI report covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenSelector {
    All,
    /// Start token, prompt words and the end token.
    Prompt,
    Indices(Vec<usize>),
}

impl std::str::FromStr for TokenSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(TokenSelector::All),
            "prompt" => Ok(TokenSelector::Prompt),
            list => list
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|e| format!("bad token index {t:?}: {e}")))
                .collect::<Result<_, _>>()
                .map(TokenSelector::Indices),
        }
    }
}

fn write_ci(config: &RunConfig, weights: &NetWeights, inputs: &Inputs, tokens: Option<&TokenSelector>, path: &Path) -> Result<(), CliError> {
    let companion = config.companion_mask.as_deref().map(load_mask).transpose()?;
    let indices = match tokens.unwrap_or(&TokenSelector::All) {
        TokenSelector::All => None,
        TokenSelector::Prompt => {
            let labels = text_encode(&config.prompt, weights).token_labels;
            let eot = labels.iter().position(|l| l == EOT_LABEL).unwrap_or(0);
            Some((0..=eot).collect())
        }
        TokenSelector::Indices(list) => Some(list.clone()),
    };
    let req = CiRequest {
        image: &inputs.image,
        mask: &inputs.mask,
        companion: companion.as_ref(),
        prompt: &config.prompt,
        noise_seed: config.noise_seed,
        steps: config.params.steps,
        layer: config.ci_layer,
        tokens: indices,
    };
    let reports = ci_report(&req, weights)?;
    let mut bytes = Vec::new();
    write_ci_csv(&reports, &mut bytes)?;
    Ok(atomic_write(path, &bytes)?)
}

pub fn cmd_ci_report(config: &RunConfig, tokens: &TokenSelector, layer: Option<CiLayer>) -> Result<PathBuf, CliError> {
    let mut config = config.clone();
    if let Some(layer) = layer {
        config.ci_layer = layer;
    }
    config.validate()?;
    let weights = resolve_weights(&config)?;
    let inputs = load_inputs(&config)?;
    create_dir(&config.output_dir)?;
    let path = config.output_dir.join("ci.csv");
    write_ci(&config, &weights, &inputs, Some(tokens), &path)?;
    Ok(path)
}

#[derive(Debug, Clone, Default)]
pub struct MetricsRequest {
    /// `(predicted, reference)` mask pairs.
    pub iou_pairs: Vec<(PathBuf, PathBuf)>,
    /// `(image, reference)` pairs.
    pub psnr_pairs: Vec<(PathBuf, PathBuf)>,
    pub external: Vec<PathBuf>,
    pub method: String,
    pub max_value: f64,
    pub out_dir: PathBuf,
}

/// Returns the table text that is printed.
pub fn cmd_metrics(req: &MetricsRequest) -> Result<String, CliError> {
    if !(req.max_value > 0.0 && req.max_value.is_finite()) {
        return Err(CliError::config(format!("--max-value must be positive, got {}", req.max_value)));
    }
    let mut table = ScoreTable::new();
    let mut lines = String::new();
    for (pred, reference) in &req.iou_pairs {
        let v = iou(&load_mask(pred)?, &load_mask(reference)?)?;
        let sample = pred.display().to_string();
        lines += &format!("iou  {sample}  {v}\n");
        table.insert(&sample, &req.method, "iou", v, Provenance::Internal)?;
    }
    for (image, reference) in &req.psnr_pairs {
        let v = psnr(&load_image(image)?, &load_image(reference)?, req.max_value)?;
        let sample = image.display().to_string();
        lines += &format!("psnr  {sample}  {v}\n");
        table.insert(&sample, &req.method, "psnr", v, Provenance::Internal)?;
    }
    for path in &req.external {
        table.ingest_external_scores(path)?;
    }
    if table.is_empty() {
        return Err(CliError::config("no scores: give --iou, --psnr or --external"));
    }
    let mut csv = Vec::new();
    table.export_csv(&mut csv)?;
    create_dir(&req.out_dir)?;
    atomic_write(&req.out_dir.join("metrics.csv"), &csv)?;
    Ok(lines + "\n" + &format_aggregate_table(&table.aggregate()))
}

pub fn cmd_gen_weights(config: &RunConfig, out_dir: &Path) -> Result<WeightManifest, CliError> {
    config.net.validate()?;
    let weights = gen_weights(&config.net)?;
    create_dir(out_dir)?;
    Ok(save_weights(out_dir, &weights)?)
}
