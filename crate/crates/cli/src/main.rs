use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use freecond::analysis::CiLayer;
use freecond_cli::{
    cmd_ci_report, cmd_gen_weights, cmd_inpaint, cmd_metrics, cmd_sweep, resolve_threads, Axis,
    CliError, MetricsRequest, Overrides, RunConfig, TokenSelector, EXIT_CONFIG,
};

#[derive(Parser)]
#[command(name = "freecond", version, about = "Training-free inpainting conditioning lab on a toy latent-diffusion denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inpaint one image; writes output.png and run.json.
    Inpaint {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Vary one parameter; writes one run per value plus sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Worker count; defaults to FREECOND_THREADS, then all cores.
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Per-channel influence report of mask vs. companion mask; writes ci.csv.
    CiReport {
        #[arg(long)]
        config: PathBuf,
        /// `all`, `prompt`, or comma-separated token indices.
        #[arg(long, default_value = "all")]
        tokens: TokenSelector,
        #[arg(long)]
        layer: Option<CiLayer>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// IoU / PSNR plus merged external scores; writes metrics.csv.
    Metrics {
        #[arg(long, num_args = 2, value_names = ["PRED", "REF"], action = ArgAction::Append)]
        iou: Vec<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["IMAGE", "REF"], action = ArgAction::Append)]
        psnr: Vec<PathBuf>,
        /// CSV with columns sample,method,metric,value.
        #[arg(long)]
        external: Vec<PathBuf>,
        #[arg(long, default_value = "freecond")]
        method: String,
        /// Peak pixel value; images load into [0, 1].
        #[arg(long, default_value_t = 1.0)]
        max_value: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write the seeded weight tensors and manifest.
    GenWeights {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/weights`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Path, overrides: Option<&Overrides>) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::load(config)?;
    if let Some(o) = overrides {
        c.apply(o);
    }
    Ok(c)
}

fn pairs(flat: Vec<PathBuf>) -> Vec<(PathBuf, PathBuf)> {
    flat.chunks_exact(2).map(|p| (p[0].clone(), p[1].clone())).collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Inpaint { config, overrides } => {
            let c = load(&config, Some(&overrides))?;
            let out = cmd_inpaint(&c)?;
            println!("{}", c.output_dir.join("output.png").display());
            println!("output checksum {}", out.record.output_checksum);
        }
        Command::Sweep { config, axis, values, threads, overrides } => {
            let c = load(&config, Some(&overrides))?;
            let rows = cmd_sweep(&c, axis, &values, resolve_threads(threads)?)?;
            for r in &rows {
                match &r.error {
                    Some(e) => println!("{}={}  failed: {e}", axis.name(), r.value),
                    None => println!("{}={}  {}", axis.name(), r.value, r.run),
                }
            }
            println!("{}", c.output_dir.join("sweep.csv").display());
        }
        Command::CiReport { config, tokens, layer, overrides } => {
            let c = load(&config, Some(&overrides))?;
            println!("{}", cmd_ci_report(&c, &tokens, layer)?.display());
        }
        Command::Metrics { iou, psnr, external, method, max_value, out } => {
            let req = MetricsRequest {
                iou_pairs: pairs(iou),
                psnr_pairs: pairs(psnr),
                external,
                method,
                max_value,
                out_dir: out,
            };
            print!("{}", cmd_metrics(&req)?);
        }
        Command::GenWeights { config, out } => {
            let c = load(&config, None)?;
            let dir = out.unwrap_or_else(|| c.output_dir.join("weights"));
            let manifest = cmd_gen_weights(&c, &dir)?;
            println!("{} tensors in {}", manifest.tensors.len(), dir.display());
            println!("weights checksum {}", manifest.weights_checksum);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
