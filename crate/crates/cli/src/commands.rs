//! The six workflows. Each returns the files it wrote and a short text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lino::data::{load_csv, synth_generate, write_synth, RawSeries, SplitSpec, WindowedDataset};
use lino::eval::{evaluate, export_decomposition, param_count, probe_levels, probe_model, EvalReport, ReportRow};
use lino::model::{Ablation, LiNoModel, Variant};
use lino::rng::{RunSeed, Stream};
use lino::training::{load_checkpoint, save_checkpoint, train, History};

use crate::config::{Command, DataSource, RunConfig, SplitChoice};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        fs::write(&path, contents).map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Validates `cfg` for `command` and runs it.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    cfg.validate(command)?;
    match command {
        Command::Train => cmd_train(cfg),
        Command::Ablate => cmd_ablate(cfg),
        Command::Noise => cmd_noise(cfg),
        Command::Decompose => cmd_decompose(cfg),
        Command::Probe => cmd_probe(cfg),
        Command::Synth => cmd_synth(cfg),
    }
}

/// Dataset label and series.
fn load_series(cfg: &RunConfig) -> Result<(String, RawSeries), CliError> {
    match cfg.dataset.as_ref() {
        Some(DataSource::Csv(path)) => {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("data")
                .to_string();
            Ok((name, load_csv(path)?))
        }
        Some(DataSource::Synth) => Ok(("synth".into(), synth_generate(&cfg.synth)?.series)),
        None => Err(CliError::Config("no dataset given".into())),
    }
}

fn split_spec(choice: SplitChoice, dataset: &str) -> SplitSpec {
    match choice {
        SplitChoice::EttHourly => SplitSpec::ett_hourly(),
        SplitChoice::EttMinutely => SplitSpec::ett_minutely(),
        SplitChoice::Ratios => SplitSpec::default_ratios(),
        SplitChoice::Auto if dataset.starts_with("ETTh") => SplitSpec::ett_hourly(),
        SplitChoice::Auto if dataset.starts_with("ETTm") => SplitSpec::ett_minutely(),
        SplitChoice::Auto => SplitSpec::default_ratios(),
    }
}

fn windowed(cfg: &RunConfig, dataset: &str, series: &RawSeries, lookback: usize, horizon: usize) -> Result<WindowedDataset, CliError> {
    Ok(WindowedDataset::new(
        series,
        &split_spec(cfg.split, dataset),
        lookback,
        horizon,
        cfg.univariate,
    )?)
}

/// Report label of a single-model run.
fn run_label(variant: Variant, ablation: Ablation) -> String {
    match variant {
        Variant::LiNo if !ablation.is_none() => ablation.label(),
        v => v.to_string(),
    }
}

struct Trained {
    model: LiNoModel,
    history: History,
}

fn fit(
    cfg: &RunConfig,
    data: &WindowedDataset,
    horizon: usize,
    seed: u64,
    variant: Variant,
    ablation: Ablation,
    alpha: f64,
) -> Result<Trained, CliError> {
    let mc = cfg.model_config(data.channels(), horizon, variant, ablation);
    let mut model = LiNoModel::init(mc, RunSeed(seed))?;
    let history = train(&mut model, &data.train, &data.val, &cfg.train_config(seed, alpha))?;
    Ok(Trained { model, history })
}

fn test_row(dataset: &str, horizon: usize, label: &str, seed: u64, model: &LiNoModel, data: &WindowedDataset) -> Result<ReportRow, CliError> {
    let e = evaluate(model, &data.test)?;
    Ok(ReportRow::run(dataset, horizon, label, seed, e.mse, e.mae, e.windows.len()))
}

fn val_row(dataset: &str, horizon: usize, label: &str, seed: u64, model: &LiNoModel, data: &WindowedDataset) -> Result<ReportRow, CliError> {
    let e = evaluate(model, &data.val)?;
    Ok(ReportRow::run(dataset, horizon, label, seed, e.mse, e.mae, e.windows.len()))
}

fn promote_csv(report: &EvalReport, baseline: &str) -> String {
    let mut s = String::from("label,mse,mae,promote_mse,promote_mae\n");
    for (label, mse, mae, pm, pa) in report.promote_table(baseline).unwrap_or_default() {
        let _ = writeln!(s, "{label},{mse:?},{mae:?},{pm:?},{pa:?}");
    }
    s
}

fn cmd_train(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (dataset, series) = load_series(cfg)?;
    let dir = cfg.run_dir();
    let alpha = cfg.alphas_for(Command::Train)[0];
    let label = run_label(cfg.variant, cfg.ablation);
    let single = cfg.horizons.len() == 1 && cfg.seeds.len() == 1;
    let mut out = Outcome::default();
    let mut report = EvalReport::default();
    for &horizon in &cfg.horizons {
        let data = windowed(cfg, &dataset, &series, cfg.lookback, horizon)?;
        for &seed in &cfg.seeds {
            let t = fit(cfg, &data, horizon, seed, cfg.variant, cfg.ablation, alpha)?;
            let run_dir = if single { dir.clone() } else { dir.join(format!("h{horizon}_s{seed}")) };
            create_dir(&run_dir)?;
            let ckpt = run_dir.join("checkpoint");
            save_checkpoint(&ckpt, &t.model)?;
            out.files.push(ckpt);
            out.write(run_dir.join("history.csv"), t.history.to_csv())?;
            let row = test_row(&dataset, horizon, &label, seed, &t.model, &data)?;
            let _ = writeln!(
                out.summary,
                "{dataset} F={horizon} seed={seed} {label}: test mse {:.6} mae {:.6} (best epoch {}, {} params)",
                row.mse,
                row.mae,
                t.history.best_epoch,
                param_count(&t.model.params).total
            );
            report.push(row);
        }
    }
    out.write(dir.join("report.csv"), report.to_csv())?;
    Ok(out)
}

fn cmd_ablate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (dataset, series) = load_series(cfg)?;
    let dir = cfg.run_dir();
    let mut out = Outcome::default();
    let mut test = EvalReport::default();
    let mut val = EvalReport::default();
    for &horizon in &cfg.horizons {
        let data = windowed(cfg, &dataset, &series, cfg.lookback, horizon)?;
        for &seed in &cfg.seeds {
            for (label, ablation) in Ablation::study() {
                let t = fit(cfg, &data, horizon, seed, Variant::LiNo, ablation, 0.0)?;
                out.write(dir.join("history").join(format!("{label}_h{horizon}_s{seed}.csv")), t.history.to_csv())?;
                test.push(test_row(&dataset, horizon, label, seed, &t.model, &data)?);
                val.push(val_row(&dataset, horizon, label, seed, &t.model, &data)?);
            }
        }
    }
    out.write(dir.join("report.csv"), test.to_csv())?;
    out.write(dir.join("val_report.csv"), val.to_csv())?;
    let promote = promote_csv(&test, "full");
    out.write(dir.join("promote.csv"), &promote)?;
    out.write(dir.join("val_promote.csv"), promote_csv(&val, "full"))?;
    out.summary.push_str("test split, averaged over horizons and seeds\n");
    out.summary.push_str(&promote);
    Ok(out)
}

/// Labels `lino@0.25` etc.
fn noise_label(variant: Variant, alpha: f64) -> String {
    format!("{variant}@{alpha}")
}

pub const NOISE_VARIANTS: [Variant; 3] = [Variant::LiNo, Variant::Mu, Variant::Raw];

fn cmd_noise(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (dataset, series) = load_series(cfg)?;
    let dir = cfg.run_dir();
    let alphas = cfg.alphas_for(Command::Noise);
    let mut out = Outcome::default();
    let mut report = EvalReport::default();
    for &horizon in &cfg.horizons {
        let data = windowed(cfg, &dataset, &series, cfg.lookback, horizon)?;
        for &seed in &cfg.seeds {
            for variant in NOISE_VARIANTS {
                for &alpha in &alphas {
                    let t = fit(cfg, &data, horizon, seed, variant, Ablation::default(), alpha)?;
                    let label = noise_label(variant, alpha);
                    report.push(test_row(&dataset, horizon, &label, seed, &t.model, &data)?);
                }
            }
        }
    }
    out.write(dir.join("report.csv"), report.to_csv())?;

    let means = report.label_means();
    let lookup = |v: Variant, a: f64| {
        let l = noise_label(v, a);
        means.iter().find(|(m, _, _)| *m == l).map(|(_, mse, mae)| (*mse, *mae)).expect("every cell trained")
    };
    let mut table = String::from("variant,alpha,mse,mae\n");
    let mut summary = String::new();
    for variant in NOISE_VARIANTS {
        let curve: Vec<f64> = alphas.iter().map(|a| lookup(variant, *a).0).collect();
        for (&a, _) in alphas.iter().zip(&curve) {
            let (mse, mae) = lookup(variant, a);
            let _ = writeln!(table, "{variant},{a:?},{mse:?},{mae:?}");
        }
        let monotone = curve.windows(2).all(|w| w[1] >= w[0]);
        let _ = writeln!(
            summary,
            "{variant}: mse {} (monotone degradation: {})",
            curve.iter().map(|m| format!("{m:.6}")).collect::<Vec<_>>().join(" "),
            if monotone { "yes" } else { "no" }
        );
    }
    if let Some(&top) = alphas.iter().max_by(|a, b| a.total_cmp(b)) {
        let gap = lookup(Variant::LiNo, top).0 - lookup(Variant::Raw, top).0;
        let _ = writeln!(
            summary,
            "alpha {top}: lino - raw = {gap:+.6} ({})",
            if gap <= 0.0 { "lino not worse" } else { "lino worse" }
        );
    }
    out.write(dir.join("noise.csv"), table)?;
    out.write(dir.join("noise_summary.txt"), &summary)?;
    out.summary = summary;
    Ok(out)
}

fn cmd_decompose(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = load_checkpoint(cfg.checkpoint_path())?;
    let (dataset, series) = load_series(cfg)?;
    let mc = &model.config;
    let data = windowed(cfg, &dataset, &series, mc.lookback, mc.horizon)?;
    if data.channels() != mc.channels {
        return Err(CliError::Config(format!(
            "checkpoint expects {} channels, dataset has {}",
            mc.channels,
            data.channels()
        )));
    }
    if cfg.window >= data.test.len() {
        return Err(CliError::Config(format!(
            "window {} out of range, test split has {} windows",
            cfg.window,
            data.test.len()
        )));
    }
    let (x, _) = data.test.window(cfg.window);
    let mut dec = export_decomposition(&model, &x)?;
    // Back to the units of the input file: every component is scaled, the mean rides on li_1.
    let f = mc.horizon;
    let stats = &data.stats;
    let unscale = |t: &mut lino::Tensor, shift: bool| {
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            let ch = i / f;
            *v = *v * stats.std[ch] + if shift { stats.mean[ch] } else { 0.0 };
        }
    };
    unscale(&mut dec.yhat, true);
    for (i, (_, t)) in dec.components.iter_mut().enumerate() {
        unscale(t, i == 0);
    }
    let mut out = Outcome::default();
    out.write(cfg.run_dir().join("decomposition.csv"), dec.to_csv(&data.names))?;
    out.summary = format!(
        "{} series for test window {}; nonlinear energy share {:.4}\n",
        dec.components.len() + 1,
        cfg.window,
        dec.nonlinear_energy
    );
    Ok(out)
}

fn cmd_probe(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = load_checkpoint(cfg.checkpoint_path())?;
    let mut rng = RunSeed(cfg.seeds[0]).stream(Stream::Probe);
    let dir = cfg.run_dir().join("weights");
    let mut out = Outcome::default();
    let mut residuals = String::from("block,residual\n");
    for probe in probe_levels(&model, &mut rng)? {
        let level = probe.level + 1;
        for (kind, map) in [("li", &probe.li), ("no", &probe.no)] {
            if let Some(map) = map {
                let stem = format!("level{level}_{kind}");
                out.write(dir.join(format!("{stem}_A.csv")), map.a_csv())?;
                out.write(dir.join(format!("{stem}_b.csv")), map.b_csv())?;
                let _ = writeln!(residuals, "{stem},{:?}", map.residual);
            }
        }
    }
    let whole = probe_model(&model, &mut rng)?;
    out.write(dir.join("model_A.csv"), whole.a_csv())?;
    out.write(dir.join("model_b.csv"), whole.b_csv())?;
    let _ = writeln!(residuals, "model,{:?}", whole.residual);
    out.write(dir.join("residuals.csv"), &residuals)?;
    out.summary = residuals;
    Ok(out)
}

fn cmd_synth(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let synth = synth_generate(&cfg.synth)?;
    let path = cfg.run_dir().join("synth.csv");
    create_dir(&cfg.run_dir())?;
    let sidecar = write_synth(&path, &synth)?;
    let mut out = Outcome::default();
    out.summary = format!(
        "{} rows x {} channels, {} levels\n",
        synth.series.len(),
        synth.series.channels(),
        cfg.synth.levels
    );
    out.files = vec![path, sidecar];
    Ok(out)
}
