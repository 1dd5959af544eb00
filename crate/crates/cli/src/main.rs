use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lino_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "lino", version, about = "Train, ablate and inspect LiNo forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model per horizon and seed, then evaluate on the test split.
    Train(Opts),
    /// Train the full model and each single-component removal.
    Ablate(Opts),
    /// Train LiNo, Mu and Raw under increasing input noise.
    Noise(Opts),
    /// Export per-level predictions of one test window from a checkpoint.
    Decompose(Opts),
    /// Recover affine maps of every block of a checkpoint.
    Probe(Opts),
    /// Write a synthetic series and its components.
    Synth(Opts),
}

/// Flags override the config file, which overrides the defaults.
#[derive(Args)]
struct Opts {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file, or `synth` for a generated series.
    #[arg(long)]
    dataset: Option<String>,
    /// Forecast horizons, comma separated.
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    blocks: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    /// Seeds, comma separated.
    #[arg(long)]
    seed: Option<String>,
    /// lino, mu, raw or ln.
    #[arg(long)]
    variant: Option<String>,
    /// Removed components, e.g. `no_te+no_fe`.
    #[arg(long)]
    ablate: Option<String>,
    /// Training-input noise levels, comma separated.
    #[arg(long)]
    alpha: Option<String>,
    /// Root of the run directories.
    #[arg(long)]
    out: Option<String>,
    /// Run directory name under `--out`.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    /// Allow hyperparameters outside the supported grid.
    #[arg(long)]
    unsafe_grid: bool,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Opts {
    fn overrides(&self) -> Result<Vec<(&str, String)>, CliError> {
        let named = [
            ("dataset", &self.dataset),
            ("horizon", &self.horizon),
            ("blocks", &self.blocks),
            ("dim", &self.dim),
            ("dropout", &self.dropout),
            ("lr", &self.lr),
            ("batch", &self.batch),
            ("seed", &self.seed),
            ("variant", &self.variant),
            ("ablate", &self.ablate),
            ("alpha", &self.alpha),
            ("out", &self.out),
            ("name", &self.name),
            ("epochs", &self.epochs),
            ("checkpoint", &self.checkpoint),
        ];
        let mut pairs: Vec<(&str, String)> = Vec::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{kv}`")))?;
            pairs.push((k.trim(), v.to_string()));
        }
        pairs.extend(named.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k, v))));
        if self.unsafe_grid {
            pairs.push(("unsafe_grid", "true".into()));
        }
        Ok(pairs)
    }
}

fn execute(command: Command, opts: &Opts) -> Result<(), CliError> {
    let cfg = RunConfig::resolve(opts.config.as_deref(), opts.overrides()?)?;
    let outcome = run(command, &cfg)?;
    print!("{}", outcome.summary);
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, opts) = match &cli.command {
        Cmd::Train(o) => (Command::Train, o),
        Cmd::Ablate(o) => (Command::Ablate, o),
        Cmd::Noise(o) => (Command::Noise, o),
        Cmd::Decompose(o) => (Command::Decompose, o),
        Cmd::Probe(o) => (Command::Probe, o),
        Cmd::Synth(o) => (Command::Synth, o),
    };
    match execute(command, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
