//! Run configuration: defaults, flat `key = value` files and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lino::data::SynthSpec;
use lino::model::{Ablation, LiNoConfig, Variant};
use lino::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Ablate,
    Noise,
    Decompose,
    Probe,
    Synth,
}

impl Command {
    fn needs_data(self) -> bool {
        !matches!(self, Command::Probe | Command::Synth)
    }

    fn trains(self) -> bool {
        matches!(self, Command::Train | Command::Ablate | Command::Noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    /// Generated in memory from the `synth_*` keys.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitChoice {
    /// ETT calendar counts for files named `ETTh*` / `ETTm*`, ratios otherwise.
    Auto,
    EttHourly,
    EttMinutely,
    Ratios,
}

pub const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub out: PathBuf,
    pub dataset: Option<DataSource>,
    pub split: SplitChoice,
    pub univariate: bool,
    pub lookback: usize,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub dim: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub variant: Variant,
    pub ablation: Ablation,
    /// `seed` and `noise_alpha` are filled per run.
    pub train: TrainConfig,
    /// Unset means `0` for `train` and the full sweep for `noise`.
    pub alphas: Option<Vec<f64>>,
    pub checkpoint: Option<PathBuf>,
    /// Test-window index exported by `decompose`.
    pub window: usize,
    pub synth: SynthSpec,
    pub unsafe_grid: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthSpec::new(2, 3, 2000, 1);
        RunConfig {
            name: "run".into(),
            out: PathBuf::from("runs"),
            dataset: None,
            split: SplitChoice::Auto,
            univariate: false,
            lookback: 96,
            horizons: vec![96],
            seeds: vec![1],
            dim: 256,
            blocks: 2,
            dropout: 0.0,
            variant: Variant::LiNo,
            ablation: Ablation::default(),
            train: TrainConfig::default(),
            alphas: None,
            checkpoint: None,
            window: 0,
            synth,
            unsafe_grid: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{value}`"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(format!("`{key}`: empty list"));
    }
    Ok(items)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}`: expected true or false, got `{value}`")),
    }
}

impl RunConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "name" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(format!("`name` must be a plain directory name, got `{v}`"));
                }
                self.name = v.to_string();
            }
            "out" => self.out = PathBuf::from(v),
            "dataset" => {
                self.dataset = Some(if v.eq_ignore_ascii_case("synth") {
                    DataSource::Synth
                } else {
                    DataSource::Csv(PathBuf::from(v))
                })
            }
            "split" => {
                self.split = match v {
                    "auto" => SplitChoice::Auto,
                    "ett_hourly" => SplitChoice::EttHourly,
                    "ett_minutely" => SplitChoice::EttMinutely,
                    "ratios" => SplitChoice::Ratios,
                    _ => return Err(format!("`split`: unknown split `{v}`")),
                }
            }
            "univariate" => self.univariate = parse_bool(key, v)?,
            "lookback" => self.lookback = parse(key, v)?,
            "horizon" => self.horizons = parse_list(key, v)?,
            "seed" => self.seeds = parse_list(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "blocks" => self.blocks = parse(key, v)?,
            "dropout" => self.dropout = parse(key, v)?,
            "variant" => self.variant = v.parse().map_err(|e| format!("`variant`: {e}"))?,
            "ablate" => self.ablation = Ablation::parse(v).map_err(|e| format!("`ablate`: {e}"))?,
            "lr" => self.train.lr = parse(key, v)?,
            "batch" => self.train.batch_size = parse(key, v)?,
            "epochs" => self.train.max_epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "min_delta" => self.train.min_delta = parse(key, v)?,
            "alpha" => self.alphas = Some(parse_list(key, v)?),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "window" => self.window = parse(key, v)?,
            "synth_levels" => self.synth.levels = parse(key, v)?,
            "synth_channels" => self.synth.channels = parse(key, v)?,
            "synth_length" => self.synth.length = parse(key, v)?,
            "synth_seed" => self.synth.seed = parse(key, v)?,
            "synth_noise" => self.synth.noise_sigma = parse(key, v)?,
            "synth_linear" => self.synth.linear_amplitude = parse(key, v)?,
            "synth_nonlinear" => self.synth.nonlinear_amplitude = parse(key, v)?,
            "synth_lag" => self.synth.lead_lag = parse(key, v)?,
            "unsafe_grid" => self.unsafe_grid = parse_bool(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies a config file; errors carry `path:line`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        let mut seen: Vec<(String, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{origin}:{line_no}: expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
                return Err(CliError::Config(format!(
                    "{origin}:{line_no}: `{key}` already set on line {first}"
                )));
            }
            seen.push((key.to_string(), line_no));
            self.set(key, value)
                .map_err(|e| CliError::Config(format!("{origin}:{line_no}: {e}")))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies command-line overrides, which take precedence over the file.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, String)>) -> Result<(), CliError> {
        for (k, v) in pairs {
            self.set(k, &v).map_err(|e| CliError::Config(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
        Ok(())
    }

    /// Defaults, then `file`, then `overrides`.
    pub fn resolve<'a>(
        file: Option<&Path>,
        overrides: impl IntoIterator<Item = (&'a str, String)>,
    ) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(&self.name)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run_dir().join("checkpoint"))
    }

    /// Model configuration for one run; channel count comes from the data.
    pub fn model_config(&self, channels: usize, horizon: usize, variant: Variant, ablation: Ablation) -> LiNoConfig {
        LiNoConfig::new(channels, self.lookback, horizon)
            .with_dim(self.dim)
            .with_blocks(self.blocks)
            .with_dropout(self.dropout)
            .with_variant(variant)
            .with_ablation(ablation)
    }

    pub fn train_config(&self, seed: u64, alpha: f64) -> TrainConfig {
        TrainConfig {
            seed,
            noise_alpha: alpha,
            ..self.train.clone()
        }
    }

    /// Noise levels swept by `command`.
    pub fn alphas_for(&self, command: Command) -> Vec<f64> {
        match (&self.alphas, command) {
            (Some(a), _) => a.clone(),
            (None, Command::Noise) => DEFAULT_ALPHAS.to_vec(),
            (None, _) => vec![0.0],
        }
    }

    /// Everything that can be checked before any data is read or model is built.
    pub fn validate(&self, command: Command) -> Result<(), CliError> {
        let err = |m: String| Err(CliError::Config(m));
        if self.horizons.iter().any(|h| *h == 0) {
            return err("horizons must be positive".into());
        }
        if self.lookback == 0 {
            return err("lookback must be positive".into());
        }
        if command.needs_data() {
            match &self.dataset {
                None => return err("no dataset given (use --dataset <csv> or --dataset synth)".into()),
                Some(DataSource::Csv(p)) if !p.is_file() => {
                    return err(format!("dataset {} does not exist", p.display()));
                }
                _ => {}
            }
        }
        if matches!(command, Command::Decompose | Command::Probe) && !self.checkpoint_path().is_file() {
            return err(format!("checkpoint {} does not exist", self.checkpoint_path().display()));
        }
        if command.trains() {
            for h in &self.horizons {
                self.model_config(1, *h, self.variant, self.ablation)
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            let alphas = self.alphas_for(command);
            if command == Command::Train && alphas.len() != 1 {
                return err(format!("train takes a single --alpha, got {alphas:?}"));
            }
            for a in alphas {
                self.train_config(1, a)
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            if !self.unsafe_grid {
                self.check_grid()?;
            }
        }
        Ok(())
    }

    /// Rejects hyperparameters outside the published search grid.
    pub fn check_grid(&self) -> Result<(), CliError> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        let mut bad = Vec::new();
        if ![256, 512].contains(&self.dim) {
            bad.push(format!("dim {} not in {{256, 512}}", self.dim));
        }
        if !(1..=4).contains(&self.blocks) {
            bad.push(format!("blocks {} not in {{1, 2, 3, 4}}", self.blocks));
        }
        if ![0.0, 0.2, 0.5].iter().any(|d| close(self.dropout, *d)) {
            bad.push(format!("dropout {} not in {{0, 0.2, 0.5}}", self.dropout));
        }
        if ![1e-3, 1e-4, 1e-5].iter().any(|l| close(self.train.lr, *l)) {
            bad.push(format!("lr {} not in {{1e-3, 1e-4, 1e-5}}", self.train.lr));
        }
        if ![32, 64, 128, 256].contains(&self.train.batch_size) {
            bad.push(format!("batch {} not in {{32, 64, 128, 256}}", self.train.batch_size));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "outside the supported grid: {} (pass --unsafe-grid to override)",
                bad.join("; ")
            )))
        }
    }
}
