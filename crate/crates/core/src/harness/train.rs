//! The training loop and its on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::checkpoint;
use crate::data::{load_mnist, synth_dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::{estimate_nll, latent_classify, latent_means, EvalMetrics};
use crate::fisher::{self, layer_fisher_with, FisherReport, ProbeOptions};
use crate::harness::config::{DatasetSpec, RunConfig};
use crate::model::{build_network, forward, Wiring};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// ChaCha stream ids; epochs use their own number as the stream.
const PROBE_STREAM: u64 = 1 << 40;
const VAL_STREAM: u64 = PROBE_STREAM + 1;
const EVAL_STREAM: u64 = PROBE_STREAM + 2;

const RUNLOG_HEADER: &str = "epoch,train_elbo,val_elbo";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample ELBO over the epoch's minibatches.
    pub train_elbo: f64,
    /// Mean per-sample ELBO on the validation set with fixed noise.
    pub val_elbo: f64,
    /// Not persisted, so artifacts stay byte-for-byte reproducible.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    /// Parameters of the epoch with the best validation ELBO.
    pub checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub optimizer: PathBuf,
    pub runlog: PathBuf,
    pub fisher: PathBuf,
    pub metrics: PathBuf,
}

impl RunArtifacts {
    pub fn new(dir: &Path, run_id: &str) -> Self {
        RunArtifacts {
            checkpoint: dir.join(format!("{run_id}.ckpt")),
            last_checkpoint: dir.join(format!("{run_id}_last.ckpt")),
            optimizer: dir.join(format!("{run_id}_last.opt")),
            runlog: dir.join(format!("runlog_{run_id}.csv")),
            fisher: dir.join(format!("fisher_{run_id}.csv")),
            metrics: dir.join(format!("metrics_{run_id}.json")),
        }
    }

    pub fn all(&self) -> [&Path; 6] {
        [
            &self.checkpoint,
            &self.last_checkpoint,
            &self.optimizer,
            &self.runlog,
            &self.fisher,
            &self.metrics,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run_id: String,
    pub records: Vec<EpochRecord>,
    /// Probe reports in epoch order; epoch 0 is the initialization.
    pub reports: Vec<FisherReport>,
    pub best_epoch: usize,
    pub metrics: EvalMetrics,
    pub nll_std_err: f64,
    pub artifacts: RunArtifacts,
}

impl RunLog {
    /// Report of the last probe.
    pub fn final_report(&self) -> &FisherReport {
        self.reports.last().expect("training always probes after the final epoch")
    }
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    run_id: &'a str,
    preset: &'a str,
    seed: u64,
    epochs: usize,
    #[serde(rename = "S")]
    s: usize,
    nll: f64,
    nll_std_err: f64,
    accuracy: f64,
    best_epoch: usize,
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<DatasetSplit> {
    match spec {
        DatasetSpec::Mnist(dir) => load_mnist(dir),
        DatasetSpec::Synth(p) => synth_dataset(*p),
    }
}

/// Frozen probe batch: the first `probe_size` validation rows with noise
/// drawn once from the run seed.
pub fn probe_inputs(cfg: &RunConfig, split: &DatasetSplit) -> Result<(Tensor, Tensor)> {
    let n = cfg.probe_size.min(split.val.len());
    if n < fisher::MIN_PROBE_BATCH {
        return Err(Error::Config(format!(
            "probe batch would hold {n} validation rows; at least {} are needed",
            fisher::MIN_PROBE_BATCH
        )));
    }
    let x = split.val.head(n).images;
    let eps = normal_tensor(&mut stream_rng(cfg.seed, PROBE_STREAM), n, cfg.network.latent_dim);
    Ok((x, eps))
}

pub fn probe(
    cfg: &RunConfig,
    params: &ParamStore,
    wiring: &Wiring,
    inputs: &(Tensor, Tensor),
    epoch: usize,
) -> Result<FisherReport> {
    let opts = ProbeOptions {
        run_id: cfg.run_id(),
        epoch,
        ..ProbeOptions::default()
    };
    layer_fisher_with(params, wiring, &inputs.0, &inputs.1, &opts)
}

/// Mean ELBO over `data`, evaluated in chunks with noise from `rng`.
pub fn mean_elbo(params: &ParamStore, wiring: &Wiring, data: &Tensor, rng: &mut ChaCha8Rng) -> Result<f64> {
    let rows: Vec<usize> = (0..data.rows()).collect();
    let mut total = 0.0;
    for chunk in rows.chunks(500) {
        let x = data.select_rows(chunk);
        let eps = normal_tensor(rng, chunk.len(), wiring.config.latent_dim);
        let pass = forward(params, wiring, &x, &eps)?;
        total -= pass.per_sample_loss().iter().sum::<f64>();
    }
    Ok(total / data.rows() as f64)
}

/// Test NLL, its standard error and latent classification accuracy.
pub fn evaluate(cfg: &RunConfig, params: &ParamStore, wiring: &Wiring, split: &DatasetSplit) -> Result<(EvalMetrics, f64)> {
    let nll = estimate_nll(params, wiring, &split.test.images, cfg.eval_samples, stream_seed(cfg.seed, EVAL_STREAM))?;
    let train_mu = latent_means(params, wiring, &split.train.images)?.mu;
    let test_mu = latent_means(params, wiring, &split.test.images)?.mu;
    let accuracy = latent_classify(
        &train_mu,
        &split.train.labels,
        &test_mu,
        &split.test.labels,
        cfg.classifier_epochs,
        cfg.seed,
    )?;
    Ok((
        EvalMetrics {
            nll: nll.mean,
            accuracy,
            n_importance_samples: cfg.eval_samples,
            classifier_epochs: cfg.classifier_epochs,
        },
        nll.std_err,
    ))
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    stream_rng(seed, stream).next_u64()
}

/// Builds the configured architecture and loads parameters from `path`.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<(ParamStore, Wiring)> {
    let (template, wiring) = build_network(&cfg.network, cfg.seed)?;
    let params = checkpoint::load(path)?;
    checkpoint::check_layout(&template, &params)?;
    Ok((params, wiring))
}

fn runlog_csv(records: &[EpochRecord]) -> String {
    let mut s = String::from(RUNLOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_elbo, r.val_elbo);
    }
    s
}

fn parse_runlog(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(RUNLOG_HEADER) {
        return Err(Error::Format("run log has an unexpected header".into()));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::Format(format!("malformed run log row {}", i + 2));
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_elbo: f[1].parse().map_err(|_| bad())?,
                val_elbo: f[2].parse().map_err(|_| bad())?,
                wall_secs: 0.0,
            })
        })
        .collect()
}

struct State {
    params: ParamStore,
    opt: OptimizerState,
    records: Vec<EpochRecord>,
    reports: Vec<FisherReport>,
}

fn best_of(records: &[EpochRecord]) -> Option<&EpochRecord> {
    records.iter().fold(None, |best: Option<&EpochRecord>, r| match best {
        Some(b) if b.val_elbo >= r.val_elbo => Some(b),
        _ => Some(r),
    })
}

fn try_resume(cfg: &RunConfig, art: &RunArtifacts, template: &ParamStore) -> Result<Option<State>> {
    if !cfg.resume || !art.last_checkpoint.is_file() {
        return Ok(None);
    }
    let params = checkpoint::load(&art.last_checkpoint)?;
    checkpoint::check_layout(template, &params)?;
    let opt = checkpoint::decode_optimizer(&fs::read(&art.optimizer)?, &params)?;
    let records = parse_runlog(&fs::read_to_string(&art.runlog)?)?;
    let reports = fisher::parse_csv(&fs::read_to_string(&art.fisher)?)?;
    let done = records.last().map_or(0, |r| r.epoch);
    if done > cfg.epochs {
        return Err(Error::Config(format!(
            "cannot resume: {done} epochs already done but epochs = {}",
            cfg.epochs
        )));
    }
    // A final-epoch probe from a shorter earlier run is superseded by the
    // schedule of this one.
    let reports = reports
        .into_iter()
        .filter(|r| r.epoch == 0 || (cfg.fisher_probe_interval > 0 && r.epoch % cfg.fisher_probe_interval == 0))
        .collect();
    info!("resuming {} after epoch {done}", cfg.run_id());
    Ok(Some(State {
        params,
        opt,
        records,
        reports,
    }))
}

fn save_progress(art: &RunArtifacts, st: &State) -> Result<()> {
    checkpoint::save(&art.last_checkpoint, &st.params)?;
    checkpoint::write_atomic(&art.optimizer, &checkpoint::encode_optimizer(&st.opt))?;
    checkpoint::write_atomic(&art.runlog, runlog_csv(&st.records).as_bytes())?;
    checkpoint::write_atomic(&art.fisher, fisher::to_csv(&st.reports).as_bytes())
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &RunConfig) -> Result<RunLog> {
    cfg.validate()?;
    let split = load_dataset(&cfg.dataset)?;
    train_on(cfg, &split)
}

/// Trains on an already loaded split; see [`train`].
pub fn train_on(cfg: &RunConfig, split: &DatasetSplit) -> Result<RunLog> {
    cfg.validate()?;
    if split.train.dim() != cfg.network.input_dim {
        return Err(Error::Config(format!(
            "dataset dimension {} does not match input_dim {}",
            split.train.dim(),
            cfg.network.input_dim
        )));
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let run_id = cfg.run_id();
    let art = RunArtifacts::new(&cfg.output_dir, &run_id);
    let (init, wiring) = build_network(&cfg.network, cfg.seed)?;
    let probe_in = probe_inputs(cfg, split)?;
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };

    let mut st = match try_resume(cfg, &art, &init)? {
        Some(st) => st,
        None => {
            let mut reports = Vec::new();
            if cfg.fisher_probe_interval > 0 {
                reports.push(probe(cfg, &init, &wiring, &probe_in, 0)?);
            }
            State {
                opt: OptimizerState::new(&init, adam),
                params: init,
                records: Vec::new(),
                reports,
            }
        }
    };
    if st.records.is_empty() {
        // The untrained network is the fallback "best" checkpoint.
        checkpoint::save(&art.checkpoint, &st.params)?;
    }
    let start = st.records.last().map_or(1, |r| r.epoch + 1);
    let n = split.train.len();
    let s = cfg.network.latent_dim;

    for epoch in start..=cfg.epochs {
        let t0 = Instant::now();
        let mut rng = stream_rng(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut elbo_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = split.train.images.select_rows(idx);
            let eps = normal_tensor(&mut rng, idx.len(), s);
            let numeric = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            };
            let mut pass = forward(&st.params, &wiring, &x, &eps).map_err(numeric)?;
            let loss = pass.backward_mean(&mut st.params).map_err(numeric)?;
            adam_step(&mut st.params, &mut st.opt)?;
            if !st.params.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, batch {b}: parameters became non-finite"
                )));
            }
            elbo_sum -= loss * idx.len() as f64;
        }
        let train_elbo = elbo_sum / n as f64;
        let val_elbo = mean_elbo(&st.params, &wiring, &split.val.images, &mut stream_rng(cfg.seed, VAL_STREAM))?;
        if !val_elbo.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: non-finite validation ELBO")));
        }
        let probe_now = epoch == cfg.epochs
            || (cfg.fisher_probe_interval > 0 && epoch % cfg.fisher_probe_interval == 0);
        if probe_now {
            st.reports.push(probe(cfg, &st.params, &wiring, &probe_in, epoch)?);
        }
        let improved = best_of(&st.records).is_none_or(|b| val_elbo > b.val_elbo);
        st.records.push(EpochRecord {
            epoch,
            train_elbo,
            val_elbo,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        if improved {
            checkpoint::save(&art.checkpoint, &st.params)?;
        }
        save_progress(&art, &st)?;
        info!(
            "{run_id} epoch {epoch}/{}: train elbo {train_elbo:.4}, val elbo {val_elbo:.4} ({:.1}s)",
            cfg.epochs,
            t0.elapsed().as_secs_f64()
        );
    }
    if start > cfg.epochs {
        warn!("{run_id}: all {} epochs were already done", cfg.epochs);
        save_progress(&art, &st)?;
    }

    let best_epoch = best_of(&st.records).map_or(0, |r| r.epoch);
    let best = checkpoint::load(&art.checkpoint)?;
    let (metrics, nll_std_err) = evaluate(cfg, &best, &wiring, split)?;
    let file = MetricsFile {
        run_id: &run_id,
        preset: cfg.preset.map_or("custom", |p| p.key()),
        seed: cfg.seed,
        epochs: cfg.epochs,
        s: cfg.eval_samples,
        nll: metrics.nll,
        nll_std_err,
        accuracy: metrics.accuracy,
        best_epoch,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::Format(e.to_string()))?;
    checkpoint::write_atomic(&art.metrics, format!("{json}\n").as_bytes())?;
    info!(
        "{run_id}: nll {:.3} ± {:.3}, accuracy {:.4} (best epoch {best_epoch})",
        metrics.nll, nll_std_err, metrics.accuracy
    );
    Ok(RunLog {
        run_id,
        records: st.records,
        reports: st.reports,
        best_epoch,
        metrics,
        nll_std_err,
        artifacts: art,
    })
}
