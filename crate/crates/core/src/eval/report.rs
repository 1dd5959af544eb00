use std::fmt::Write;

/// Origin of a report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// One trained model on one horizon.
    Run,
    /// Mean over horizons for one (dataset, label, seed).
    HorizonMean,
    /// Mean and standard deviation over seeds for one (dataset, label, horizon).
    SeedMean,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Run => "run",
            RowKind::HorizonMean => "horizon_mean",
            RowKind::SeedMean => "seed_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub kind: RowKind,
    pub dataset: String,
    /// `None` on horizon means.
    pub horizon: Option<usize>,
    /// Variant or ablation label.
    pub label: String,
    /// `None` on seed means.
    pub seed: Option<u64>,
    pub mse: f64,
    pub mae: f64,
    /// Sample standard deviations across seeds; zero elsewhere.
    pub mse_std: f64,
    pub mae_std: f64,
    pub windows: usize,
}

impl ReportRow {
    pub fn run(dataset: &str, horizon: usize, label: &str, seed: u64, mse: f64, mae: f64, windows: usize) -> Self {
        ReportRow {
            kind: RowKind::Run,
            dataset: dataset.to_string(),
            horizon: Some(horizon),
            label: label.to_string(),
            seed: Some(seed),
            mse,
            mae,
            mse_std: 0.0,
            mae_std: 0.0,
            windows,
        }
    }
}

/// Relative change of `variant` against `full`, in percent. Negative means `variant` is worse.
pub fn promote(full: f64, variant: f64) -> f64 {
    (full - variant) / full * 100.0
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for a single value.
fn std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Groups rows by key, keeping the order in which keys first appear.
fn group<'a, K: PartialEq>(rows: impl Iterator<Item = &'a ReportRow>, key: impl Fn(&ReportRow) -> K) -> Vec<(K, Vec<&'a ReportRow>)> {
    let mut out: Vec<(K, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => out.push((k, vec![r])),
        }
    }
    out
}

/// Raw run rows plus aggregations derived from them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub runs: Vec<ReportRow>,
}

impl EvalReport {
    pub fn push(&mut self, row: ReportRow) {
        debug_assert_eq!(row.kind, RowKind::Run);
        self.runs.push(row);
    }

    pub fn horizon_means(&self) -> Vec<ReportRow> {
        group(self.runs.iter(), |r| (r.dataset.clone(), r.label.clone(), r.seed))
            .into_iter()
            .map(|((dataset, label, seed), rows)| {
                let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
                let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
                ReportRow {
                    kind: RowKind::HorizonMean,
                    dataset,
                    horizon: None,
                    label,
                    seed,
                    mse: mean(&mses),
                    mae: mean(&maes),
                    mse_std: 0.0,
                    mae_std: 0.0,
                    windows: rows.iter().map(|r| r.windows).sum(),
                }
            })
            .collect()
    }

    pub fn seed_means(&self) -> Vec<ReportRow> {
        group(self.runs.iter(), |r| (r.dataset.clone(), r.label.clone(), r.horizon))
            .into_iter()
            .map(|((dataset, label, horizon), rows)| {
                let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
                let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
                ReportRow {
                    kind: RowKind::SeedMean,
                    dataset,
                    horizon,
                    label,
                    seed: None,
                    mse: mean(&mses),
                    mae: mean(&maes),
                    mse_std: std(&mses),
                    mae_std: std(&maes),
                    windows: rows.iter().map(|r| r.windows).sum(),
                }
            })
            .collect()
    }

    /// Mean MSE and MAE per label over every horizon and seed, in first-seen order.
    pub fn label_means(&self) -> Vec<(String, f64, f64)> {
        group(self.runs.iter(), |r| r.label.clone())
            .into_iter()
            .map(|(label, rows)| {
                let mses: Vec<f64> = rows.iter().map(|r| r.mse).collect();
                let maes: Vec<f64> = rows.iter().map(|r| r.mae).collect();
                (label, mean(&mses), mean(&maes))
            })
            .collect()
    }

    /// Per-label means with the change against `baseline`, in percent.
    pub fn promote_table(&self, baseline: &str) -> Option<Vec<(String, f64, f64, f64, f64)>> {
        let means = self.label_means();
        let (_, bm, ba) = means.iter().find(|(l, _, _)| l == baseline)?.clone();
        Some(
            means
                .into_iter()
                .map(|(l, m, a)| (l, m, a, promote(bm, m), promote(ba, a)))
                .collect(),
        )
    }

    /// Runs followed by both aggregations.
    pub fn all_rows(&self) -> Vec<ReportRow> {
        let mut rows = self.runs.clone();
        rows.extend(self.horizon_means());
        rows.extend(self.seed_means());
        rows
    }

    /// CSV of [`EvalReport::all_rows`]; metrics are on the standardised scale.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,dataset,horizon,label,seed,mse,mae,mse_std,mae_std,windows\n");
        for r in self.all_rows() {
            let horizon = r.horizon.map_or("avg".to_string(), |h| h.to_string());
            let seed = r.seed.map_or("all".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:?},{:?},{:?},{:?},{}",
                r.kind.as_str(),
                r.dataset,
                horizon,
                r.label,
                seed,
                r.mse,
                r.mae,
                r.mse_std,
                r.mae_std,
                r.windows
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_recompute_from_runs() {
        let mut rep = EvalReport::default();
        for (h, seed, m) in [(96, 1, 0.4), (192, 1, 0.6), (96, 2, 0.5), (192, 2, 0.8)] {
            rep.push(ReportRow::run("synth", h, "full", seed, m, m / 2.0, 10));
        }
        let hm = rep.horizon_means();
        assert_eq!(hm.len(), 2);
        assert!((hm[0].mse - 0.5).abs() < 1e-12 && (hm[1].mse - 0.65).abs() < 1e-12);
        let sm = rep.seed_means();
        assert!((sm[0].mse - 0.45).abs() < 1e-12);
        assert!((sm[0].mse_std - (0.005f64).sqrt()).abs() < 1e-12);
        assert_eq!(rep.all_rows().len(), 8);
        assert!((promote(0.5, 0.75) + 50.0).abs() < 1e-12);
    }
}
