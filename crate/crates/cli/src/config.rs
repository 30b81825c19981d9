//! Flat key=value experiment configuration with embedded presets.
//!
//! Precedence, lowest to highest: built-in defaults, `--preset`, `--config`
//! file, individual command-line flags. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anicemc::targets::{
    analytic_target, load_uci_csv, BlrPosterior, DatasetSpec, EnergyTarget, LabelColumn,
};
use anicemc::training::{LipschitzMode, TrainConfig};
use anicemc::{Error, Result};

/// Initial-distribution scale: a fixed value or a maximum-likelihood fit on a
/// pilot rejection sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaSpec {
    Fixed(f64),
    Fit,
}

impl SigmaSpec {
    fn parse(s: &str) -> Result<Self> {
        if s == "fit" {
            return Ok(SigmaSpec::Fit);
        }
        s.parse::<f64>()
            .map(SigmaSpec::Fixed)
            .map_err(|_| Error::Config(format!("init_sigma must be a number or \"fit\", got {s:?}")))
    }

    fn emit(&self) -> String {
        match self {
            SigmaSpec::Fixed(v) => format!("{v}"),
            SigmaSpec::Fit => "fit".into(),
        }
    }
}

/// Everything a run needs, resolvable from presets, files and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    // target
    pub target: String,
    pub mog_literal: bool,
    pub dataset: Option<PathBuf>,
    pub dataset_preset: Option<String>,
    pub prior_variance: f64,
    // kernel + run sizes
    pub kernel: String,
    pub checkpoint: Option<PathBuf>,
    pub chains: usize,
    pub burn_in: usize,
    pub steps: usize,
    pub seed: u64,
    pub init_sigma: SigmaSpec,
    pub hmc_step_size: f64,
    pub hmc_leapfrog: usize,
    // training
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub b_max: usize,
    pub m_max: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub disc_steps: usize,
    pub disc_hidden: usize,
    pub disc_layers: usize,
    pub mnet_hidden: usize,
    pub mnet_init_scale: f64,
    pub middle_two_layer: bool,
    pub v_dim: usize,
    pub pairwise: bool,
    pub lipschitz: LipschitzMode,
    pub penalty_coef: f64,
    pub clip_value: f64,
    pub buffer_capacity: usize,
    pub buffer_init: String,
    pub bootstrap_refresh_interval: usize,
    pub refresh_chain_steps: usize,
    pub init_buffer_steps: usize,
    pub snapshot_interval: usize,
    pub eval_chains: usize,
    pub eval_burn_in: usize,
    pub eval_steps: usize,
    pub reference_draws: usize,
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    // diagnostics
    pub reference_seed: u64,
    pub raster_grid: usize,
    pub raster_halfwidth: f64,
    // process
    pub threads: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::energies();
        ExperimentConfig {
            target: "ring".into(),
            mog_literal: false,
            dataset: None,
            dataset_preset: None,
            prior_variance: 100.0,
            kernel: "hmc".into(),
            checkpoint: None,
            chains: 2000,
            burn_in: 1000,
            steps: 1000,
            seed: 0,
            init_sigma: SigmaSpec::Fixed(1.0),
            hmc_step_size: 0.1,
            hmc_leapfrog: 40,
            iterations: t.total_iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            b_max: t.b_max,
            m_max: t.m_max,
            lambda: t.lambda,
            gamma: t.gamma,
            disc_steps: t.disc_steps_per_gen_step,
            disc_hidden: t.disc_hidden,
            disc_layers: t.disc_layers,
            mnet_hidden: t.mnet_hidden,
            mnet_init_scale: t.mnet_init_scale,
            middle_two_layer: t.middle_two_layer,
            v_dim: t.v_dim,
            pairwise: t.pairwise,
            lipschitz: t.lipschitz_mode,
            penalty_coef: t.penalty_coef,
            clip_value: t.clip_value,
            buffer_capacity: t.buffer_capacity,
            buffer_init: "untrained".into(),
            bootstrap_refresh_interval: t.bootstrap_refresh_interval,
            refresh_chain_steps: t.refresh_chain_steps,
            init_buffer_steps: t.init_buffer_steps,
            snapshot_interval: t.snapshot_interval,
            eval_chains: t.eval_chains,
            eval_burn_in: t.eval_burn_in,
            eval_steps: t.eval_steps,
            reference_draws: t.reference_draws,
            checkpoint_interval: t.checkpoint_interval,
            log_interval: t.log_interval,
            reference_seed: 99,
            raster_grid: 200,
            raster_halfwidth: 6.0,
            threads: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Text of the preset checked into the repository under `presets/`.
pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "ring" => Ok(include_str!("../presets/ring.conf")),
        "mog2" => Ok(include_str!("../presets/mog2.conf")),
        "mog6" => Ok(include_str!("../presets/mog6.conf")),
        "ring5" => Ok(include_str!("../presets/ring5.conf")),
        "german" => Ok(include_str!("../presets/german.conf")),
        "heart" => Ok(include_str!("../presets/heart.conf")),
        "australian" => Ok(include_str!("../presets/australian.conf")),
        other => Err(Error::Config(format!(
            "unknown preset {other:?} (have ring, mog2, mog6, ring5, german, heart, australian)"
        ))),
    }
}

fn parse_kv(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{source}:{}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

macro_rules! parse_as {
    ($val:expr, $key:expr, $ty:ty) => {
        $val.parse::<$ty>().map_err(|_| {
            Error::Config(format!(
                "key {}: cannot parse {:?} as {}",
                $key,
                $val,
                stringify!($ty)
            ))
        })?
    };
}

impl ExperimentConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "target" => self.target = value.to_string(),
            "mog_literal" => self.mog_literal = parse_as!(value, key, bool),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "dataset_preset" => self.dataset_preset = Some(value.to_string()),
            "prior_variance" => self.prior_variance = parse_as!(value, key, f64),
            "kernel" => self.kernel = value.to_string(),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "chains" => self.chains = parse_as!(value, key, usize),
            "burn_in" => self.burn_in = parse_as!(value, key, usize),
            "steps" => self.steps = parse_as!(value, key, usize),
            "seed" => self.seed = parse_as!(value, key, u64),
            "init_sigma" => self.init_sigma = SigmaSpec::parse(value)?,
            "hmc_step_size" => self.hmc_step_size = parse_as!(value, key, f64),
            "hmc_leapfrog" => self.hmc_leapfrog = parse_as!(value, key, usize),
            "iterations" => self.iterations = parse_as!(value, key, usize),
            "batch_size" => self.batch_size = parse_as!(value, key, usize),
            "learning_rate" => self.learning_rate = parse_as!(value, key, f64),
            "b_max" => self.b_max = parse_as!(value, key, usize),
            "m_max" => self.m_max = parse_as!(value, key, usize),
            "lambda" => self.lambda = parse_as!(value, key, f64),
            "gamma" => self.gamma = parse_as!(value, key, f64),
            "disc_steps" => self.disc_steps = parse_as!(value, key, usize),
            "disc_hidden" => self.disc_hidden = parse_as!(value, key, usize),
            "disc_layers" => self.disc_layers = parse_as!(value, key, usize),
            "mnet_hidden" => self.mnet_hidden = parse_as!(value, key, usize),
            "mnet_init_scale" => self.mnet_init_scale = parse_as!(value, key, f64),
            "middle_two_layer" => self.middle_two_layer = parse_as!(value, key, bool),
            "v_dim" => self.v_dim = parse_as!(value, key, usize),
            "pairwise" => self.pairwise = parse_as!(value, key, bool),
            "lipschitz" => self.lipschitz = value.parse()?,
            "penalty_coef" => self.penalty_coef = parse_as!(value, key, f64),
            "clip_value" => self.clip_value = parse_as!(value, key, f64),
            "buffer_capacity" => self.buffer_capacity = parse_as!(value, key, usize),
            "buffer_init" => {
                if value != "untrained" && value != "hmc" {
                    return Err(Error::Config(format!(
                        "buffer_init must be untrained or hmc, got {value:?}"
                    )));
                }
                self.buffer_init = value.to_string();
            }
            "bootstrap_refresh_interval" => {
                self.bootstrap_refresh_interval = parse_as!(value, key, usize)
            }
            "refresh_chain_steps" => self.refresh_chain_steps = parse_as!(value, key, usize),
            "init_buffer_steps" => self.init_buffer_steps = parse_as!(value, key, usize),
            "snapshot_interval" => self.snapshot_interval = parse_as!(value, key, usize),
            "eval_chains" => self.eval_chains = parse_as!(value, key, usize),
            "eval_burn_in" => self.eval_burn_in = parse_as!(value, key, usize),
            "eval_steps" => self.eval_steps = parse_as!(value, key, usize),
            "reference_draws" => self.reference_draws = parse_as!(value, key, usize),
            "checkpoint_interval" => self.checkpoint_interval = parse_as!(value, key, usize),
            "log_interval" => self.log_interval = parse_as!(value, key, usize),
            "reference_seed" => self.reference_seed = parse_as!(value, key, u64),
            "raster_grid" => self.raster_grid = parse_as!(value, key, usize),
            "raster_halfwidth" => self.raster_halfwidth = parse_as!(value, key, f64),
            "threads" => self.threads = parse_as!(value, key, usize),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (k, v) in parse_kv(text, source)? {
            self.apply(&k, &v)?;
        }
        Ok(())
    }

    /// Resolve the layered configuration.
    pub fn resolve(
        preset: Option<&str>,
        config_file: Option<&Path>,
        overrides: &[(&str, String)],
    ) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(name) = preset {
            cfg.apply_text(preset_text(name)?, &format!("preset {name}"))?;
        }
        if let Some(path) = config_file {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} not found", path.display())));
            }
            let text = std::fs::read_to_string(path)?;
            cfg.apply_text(&text, &path.display().to_string())?;
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    /// Canonical key=value emission; `resolve`-then-`emit` is idempotent.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("target", self.target.clone());
        kv("mog_literal", self.mog_literal.to_string());
        if let Some(d) = &self.dataset {
            kv("dataset", d.display().to_string());
        }
        if let Some(p) = &self.dataset_preset {
            kv("dataset_preset", p.clone());
        }
        kv("prior_variance", format!("{}", self.prior_variance));
        kv("kernel", self.kernel.clone());
        if let Some(c) = &self.checkpoint {
            kv("checkpoint", c.display().to_string());
        }
        kv("chains", self.chains.to_string());
        kv("burn_in", self.burn_in.to_string());
        kv("steps", self.steps.to_string());
        kv("seed", self.seed.to_string());
        kv("init_sigma", self.init_sigma.emit());
        kv("hmc_step_size", format!("{}", self.hmc_step_size));
        kv("hmc_leapfrog", self.hmc_leapfrog.to_string());
        kv("iterations", self.iterations.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", format!("{}", self.learning_rate));
        kv("b_max", self.b_max.to_string());
        kv("m_max", self.m_max.to_string());
        kv("lambda", format!("{}", self.lambda));
        kv("gamma", format!("{}", self.gamma));
        kv("disc_steps", self.disc_steps.to_string());
        kv("disc_hidden", self.disc_hidden.to_string());
        kv("disc_layers", self.disc_layers.to_string());
        kv("mnet_hidden", self.mnet_hidden.to_string());
        kv("mnet_init_scale", format!("{}", self.mnet_init_scale));
        kv("middle_two_layer", self.middle_two_layer.to_string());
        kv("v_dim", self.v_dim.to_string());
        kv("pairwise", self.pairwise.to_string());
        kv(
            "lipschitz",
            match self.lipschitz {
                LipschitzMode::FiniteDiffPenalty => "finite_diff_penalty".into(),
                LipschitzMode::WeightClip => "weight_clip".into(),
            },
        );
        kv("penalty_coef", format!("{}", self.penalty_coef));
        kv("clip_value", format!("{}", self.clip_value));
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("buffer_init", self.buffer_init.clone());
        kv("bootstrap_refresh_interval", self.bootstrap_refresh_interval.to_string());
        kv("refresh_chain_steps", self.refresh_chain_steps.to_string());
        kv("init_buffer_steps", self.init_buffer_steps.to_string());
        kv("snapshot_interval", self.snapshot_interval.to_string());
        kv("eval_chains", self.eval_chains.to_string());
        kv("eval_burn_in", self.eval_burn_in.to_string());
        kv("eval_steps", self.eval_steps.to_string());
        kv("reference_draws", self.reference_draws.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("log_interval", self.log_interval.to_string());
        kv("reference_seed", self.reference_seed.to_string());
        kv("raster_grid", self.raster_grid.to_string());
        kv("raster_halfwidth", format!("{}", self.raster_halfwidth));
        kv("threads", self.threads.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        s
    }

    /// Construct the target distribution this config names.
    pub fn build_target(&self) -> Result<Box<dyn EnergyTarget>> {
        match self.target.as_str() {
            "blr" => {
                let path = self.dataset.as_ref().ok_or_else(|| {
                    Error::Config("target blr needs a dataset = <path> entry".into())
                })?;
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "dataset file {} not found",
                        path.display()
                    )));
                }
                let spec = match &self.dataset_preset {
                    Some(name) => DatasetSpec::preset(name)?,
                    None => {
                        let stem = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_else(|| "dataset".into());
                        DatasetSpec::new(&stem, LabelColumn::Last)
                    }
                };
                let data = load_uci_csv(path, &spec)?;
                Ok(Box::new(BlrPosterior::with_prior_variance(data, self.prior_variance)))
            }
            name => analytic_target(name, self.mog_literal),
        }
    }

    /// Map onto the library training configuration.
    pub fn train_config(&self, out_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            b_max: self.b_max,
            m_max: self.m_max,
            lambda: self.lambda,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            total_iterations: self.iterations,
            bootstrap_refresh_interval: self.bootstrap_refresh_interval,
            disc_steps_per_gen_step: self.disc_steps,
            lipschitz_mode: self.lipschitz,
            penalty_coef: self.penalty_coef,
            clip_value: self.clip_value,
            pairwise: self.pairwise,
            buffer_capacity: self.buffer_capacity,
            buffer_init: if self.buffer_init == "hmc" {
                anicemc::training::BufferInit::Hmc {
                    step_size: self.hmc_step_size,
                    leapfrog_steps: self.hmc_leapfrog,
                    chains: 128,
                    burn_in: 300,
                    thin: 25,
                }
            } else {
                anicemc::training::BufferInit::UntrainedKernel
            },
            v_dim: self.v_dim,
            mnet_hidden: self.mnet_hidden,
            mnet_init_scale: self.mnet_init_scale,
            middle_two_layer: self.middle_two_layer,
            disc_hidden: self.disc_hidden,
            disc_layers: self.disc_layers,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            init_buffer_steps: self.init_buffer_steps,
            refresh_chain_steps: self.refresh_chain_steps,
            snapshot_interval: self.snapshot_interval,
            eval_chains: self.eval_chains,
            eval_burn_in: self.eval_burn_in,
            eval_steps: self.eval_steps,
            reference_draws: self.reference_draws,
            checkpoint_interval: self.checkpoint_interval,
            log_interval: self.log_interval,
            init_sigma: match self.init_sigma {
                SigmaSpec::Fixed(v) => v,
                SigmaSpec::Fit => 1.0, // replaced after the pilot fit
            },
            out_dir,
        }
    }
}
