//! The single JSON document describing a run, plus flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use freecond::analysis::CiLayer;
use freecond::{FreeCondParams, NetConfig};

use crate::exit::CliError;

fn default_noise_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_change_threshold() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: FreeCondParams,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default = "default_noise_seed")]
    pub noise_seed: u64,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub prompt: String,
    /// Companion mask for the ΔCI report; the zero mask when absent.
    #[serde(default)]
    pub companion_mask: Option<PathBuf>,
    /// Directory written by `gen-weights`; weights are generated from `net`
    /// when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub capture_attention: bool,
    #[serde(default)]
    pub capture_ci: bool,
    #[serde(default)]
    pub ci_layer: CiLayer,
    /// Per-channel change (in [0, 1] pixel units) that counts as edited.
    #[serde(default = "default_change_threshold")]
    pub change_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Values given on the command line win over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub t_fc: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
}

impl RunConfig {
    /// Read a config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.image, &mut self.mask, &mut self.companion_mask, &mut self.weights]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.image {
            self.image = Some(v.clone());
        }
        if let Some(v) = &o.mask {
            self.mask = Some(v.clone());
        }
        if let Some(v) = &o.prompt {
            self.prompt = v.clone();
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = &o.weights {
            self.weights = Some(v.clone());
        }
        if let Some(v) = o.noise_seed {
            self.noise_seed = v;
        }
        let p = &mut self.params;
        if let Some(v) = o.w {
            p.w = v;
        }
        if let Some(v) = o.alpha {
            p.alpha = v;
        }
        if let Some(v) = o.beta {
            p.beta = v;
        }
        if let Some(v) = o.gamma {
            p.gamma = v;
        }
        if let Some(v) = o.t_fc {
            p.t_fc = v;
        }
        if let Some(v) = o.steps {
            p.steps = v;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.params.validate()?;
        self.net.validate()?;
        if !(self.change_threshold >= 0.0 && self.change_threshold.is_finite()) {
            return Err(CliError::config(format!(
                "change_threshold must be a finite non-negative number, got {}",
                self.change_threshold
            )));
        }
        Ok(())
    }

    pub fn image_path(&self) -> Result<&Path, CliError> {
        self.image
            .as_deref()
            .ok_or_else(|| CliError::config("config names no input image"))
    }

    pub fn mask_path(&self) -> Result<&Path, CliError> {
        self.mask
            .as_deref()
            .ok_or_else(|| CliError::config("config names no mask"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.params, FreeCondParams::default());
        assert_eq!(c.noise_seed, 42);
        assert_eq!(c.output_dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"promt": "cat"}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"params": {"alpah": 2}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"net": {"sed": 1}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig {
            prompt: "a cat".into(),
            image: Some("img.png".into()),
            ..RunConfig::default()
        };
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn flags_win() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            alpha: Some(3.0),
            prompt: Some("dog".into()),
            ..Overrides::default()
        });
        assert_eq!(c.params.alpha, 3.0);
        assert_eq!(c.prompt, "dog");
        assert_eq!(c.params.w, 15.0);
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let mut c = RunConfig {
            image: Some("a.png".into()),
            weights: Some("/abs/w".into()),
            ..RunConfig::default()
        };
        c.rebase(Path::new("cfg"));
        assert_eq!(c.image, Some(PathBuf::from("cfg/a.png")));
        assert_eq!(c.weights, Some(PathBuf::from("/abs/w")));
        assert_eq!(c.output_dir, PathBuf::from("cfg/out"));
    }
}
