//! Multi-run drivers: Fisher-versus-depth sweeps and the preset table.

use std::fmt::Write as _;
use std::path::PathBuf;

use log::info;

use crate::checkpoint::write_atomic;
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::fisher::FisherReport;
use crate::harness::config::RunConfig;
use crate::harness::train::{load_dataset, train_on, RunLog};
use crate::model::{Preset, SkipMode};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub depth: usize,
    pub skip_mode: SkipMode,
    pub report: FisherReport,
    pub nll: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
}

impl Sweep {
    /// `(depth, overall mean FI)` for one skip mode, in sweep order.
    pub fn curve(&self, mode: SkipMode) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.skip_mode == mode)
            .map(|r| (r.depth as f64, r.report.overall_mean))
            .collect()
    }

    pub fn get(&self, depth: usize, mode: SkipMode) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.depth == depth && r.skip_mode == mode)
    }
}

pub const SWEEP_HEADER: &str = "depth,skip_mode,encoder_fi,decoder_fi,overall_fi,nll,accuracy";

fn mode_tag(mode: SkipMode) -> String {
    match mode {
        SkipMode::None => "none".into(),
        SkipMode::EveryLayer => "every".into(),
        SkipMode::Long { from, to } => format!("long{from}-{to}"),
    }
}

/// Trains one network per `(depth, skip_mode)` with both sides at `depth`
/// and the same seed, epochs and data; writes `sweep.csv`.
pub fn run_depth_sweep(base: &RunConfig, depths: &[usize], skip_modes: &[SkipMode]) -> Result<Sweep> {
    if depths.is_empty() || skip_modes.is_empty() {
        return Err(Error::Config("a sweep needs at least one depth and one skip mode".into()));
    }
    let split = load_dataset(&base.dataset)?;
    run_depth_sweep_on(base, &split, depths, skip_modes)
}

pub fn run_depth_sweep_on(
    base: &RunConfig,
    split: &DatasetSplit,
    depths: &[usize],
    skip_modes: &[SkipMode],
) -> Result<Sweep> {
    if depths.is_empty() || skip_modes.is_empty() {
        return Err(Error::Config("a sweep needs at least one depth and one skip mode".into()));
    }
    let mut rows = Vec::new();
    let mut csv = format!("{SWEEP_HEADER}\n");
    for &depth in depths {
        for &mode in skip_modes {
            let mut cfg = base.clone();
            cfg.preset = None;
            cfg.network.encoder_depth = depth;
            cfg.network.decoder_depth = depth;
            cfg.network.encoder_skip = mode;
            cfg.network.decoder_skip = mode;
            cfg.run_id = Some(format!("sweep_d{depth}_{}_s{}", mode_tag(mode), base.seed));
            info!("sweep: depth {depth}, skip {mode}");
            let log = train_on(&cfg, split)?;
            let report = log.final_report().clone();
            let _ = writeln!(
                csv,
                "{depth},{mode},{},{},{},{},{}",
                report.encoder_mean, report.decoder_mean, report.overall_mean, log.metrics.nll, log.metrics.accuracy
            );
            rows.push(SweepRow {
                depth,
                skip_mode: mode,
                report,
                nll: log.metrics.nll,
                accuracy: log.metrics.accuracy,
            });
        }
    }
    let path = base.output_dir.join("sweep.csv");
    write_atomic(&path, csv.as_bytes())?;
    Ok(Sweep { rows, csv: path })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub preset: Preset,
    pub nll: f64,
    pub accuracy: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    /// One entry per `(preset, seed)`, preset-major.
    pub runs: Vec<(Preset, u64, RunLog)>,
    pub rows: Vec<Table1Row>,
    pub csv: PathBuf,
    pub text: PathBuf,
}

impl Table1 {
    pub fn run(&self, preset: Preset, seed: u64) -> Option<&RunLog> {
        self.runs.iter().find(|(p, s, _)| *p == preset && *s == seed).map(|(_, _, l)| l)
    }

    pub fn row(&self, preset: Preset) -> Option<&Table1Row> {
        self.rows.iter().find(|r| r.preset == preset)
    }
}

pub fn render_table1(rows: &[Table1Row]) -> String {
    let mut s = format!("{:<10} {:>10} {:>10} {:>6}\n", "Model", "NLL", "Acc", "Seeds");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>10.2} {:>10.4} {:>6}",
            r.preset.display_name(),
            r.nll,
            r.accuracy,
            r.seeds
        );
    }
    s
}

/// Trains every preset for every seed; writes `table1.csv` (per-preset
/// means), `table1_runs.csv` and the rendered `table1.txt`.
pub fn run_table1(base: &RunConfig, presets: &[Preset], seeds: &[u64]) -> Result<Table1> {
    let split = load_dataset(&base.dataset)?;
    run_table1_on(base, &split, presets, seeds)
}

pub fn run_table1_on(base: &RunConfig, split: &DatasetSplit, presets: &[Preset], seeds: &[u64]) -> Result<Table1> {
    if presets.is_empty() || seeds.is_empty() {
        return Err(Error::Config("table1 needs at least one preset and one seed".into()));
    }
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut per_run = String::from("preset,seed,nll,accuracy\n");
    for &preset in presets {
        let (mut nll, mut acc) = (0.0, 0.0);
        for &seed in seeds {
            let mut cfg = base.with_preset(preset);
            cfg.seed = seed;
            cfg.run_id = None;
            info!("table1: {} seed {seed}", preset.display_name());
            let log = train_on(&cfg, split)?;
            nll += log.metrics.nll;
            acc += log.metrics.accuracy;
            let _ = writeln!(per_run, "{preset},{seed},{},{}", log.metrics.nll, log.metrics.accuracy);
            runs.push((preset, seed, log));
        }
        let k = seeds.len() as f64;
        rows.push(Table1Row {
            preset,
            nll: nll / k,
            accuracy: acc / k,
            seeds: seeds.len(),
        });
    }
    let mut csv = String::from("preset,nll,accuracy,seeds\n");
    for r in &rows {
        let _ = writeln!(csv, "{},{},{},{}", r.preset, r.nll, r.accuracy, r.seeds);
    }
    let dir = &base.output_dir;
    let csv_path = dir.join("table1.csv");
    let text_path = dir.join("table1.txt");
    write_atomic(&csv_path, csv.as_bytes())?;
    write_atomic(&dir.join("table1_runs.csv"), per_run.as_bytes())?;
    write_atomic(&text_path, render_table1(&rows).as_bytes())?;
    Ok(Table1 {
        runs,
        rows,
        csv: csv_path,
        text: text_path,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank correlation with average ranks for ties; 0 for constant inputs.
pub fn spearman(points: &[(f64, f64)]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    pearson(&ranks(&x), &ranks(&y))
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
