//! Flat `key = value` run configuration.

use std::collections::HashMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::autodiff::Activation;
use crate::data::SynthParams;
use crate::error::{Error, Result};
use crate::model::{NetworkConfig, Preset, SkipMode};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Directory holding the four official IDX files.
    Mnist(PathBuf),
    Synth(SynthParams),
}

impl DatasetSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            DatasetSpec::Mnist(_) => 784,
            DatasetSpec::Synth(p) => p.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `None` for a custom architecture.
    pub preset: Option<Preset>,
    /// Hidden-layer count of the deepened sides of a preset.
    pub preset_depth: usize,
    /// Fully resolved architecture, including the dataset's input size.
    pub network: NetworkConfig,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    /// The last minibatch of an epoch is truncated when this does not divide
    /// the training set.
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub output_dir: PathBuf,
    /// Probe every this many epochs (and at initialization); 0 probes only
    /// after the final epoch.
    pub fisher_probe_interval: usize,
    /// Importance samples per test image.
    pub eval_samples: usize,
    /// Validation rows in the frozen probe batch.
    pub probe_size: usize,
    pub classifier_epochs: usize,
    pub run_id: Option<String>,
    pub resume: bool,
    pub sweep_depths: Vec<usize>,
    pub sweep_skip_modes: Vec<SkipMode>,
    pub table1_presets: Vec<Preset>,
    pub table1_seeds: Vec<u64>,
}

impl RunConfig {
    /// Desk-scale defaults around a dataset.
    pub fn new(dataset: DatasetSpec) -> Self {
        let network = NetworkConfig {
            input_dim: dataset.input_dim(),
            ..NetworkConfig::default()
        };
        RunConfig {
            preset: None,
            preset_depth: 11,
            network,
            dataset,
            epochs: 20,
            batch_size: 100,
            seed: 0,
            learning_rate: 1e-3,
            output_dir: PathBuf::from("runs"),
            fisher_probe_interval: 1,
            eval_samples: 100,
            probe_size: 1024,
            classifier_epochs: 20,
            run_id: None,
            resume: false,
            sweep_depths: vec![1, 3, 5, 7],
            sweep_skip_modes: vec![SkipMode::None, SkipMode::EveryLayer],
            table1_presets: Preset::ALL.to_vec(),
            table1_seeds: vec![0, 1, 2],
        }
    }

    /// Run identifier used in artifact names.
    pub fn run_id(&self) -> String {
        match &self.run_id {
            Some(id) => id.clone(),
            None => format!(
                "{}_s{}",
                self.preset.map_or("custom", Preset::key),
                self.seed
            ),
        }
    }

    /// Rebuilds `network` for a preset, keeping width, latent size,
    /// activation, likelihood and input size.
    pub fn with_preset(&self, preset: Preset) -> RunConfig {
        let mut network = NetworkConfig::preset(preset, self.preset_depth);
        network.input_dim = self.network.input_dim;
        network.hidden_width = self.network.hidden_width;
        network.latent_dim = self.network.latent_dim;
        network.activation = self.network.activation;
        network.likelihood = self.network.likelihood;
        RunConfig {
            preset: Some(preset),
            network,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_samples", self.eval_samples),
            ("probe_size", self.probe_size),
            ("classifier_epochs", self.classifier_epochs),
            ("preset_depth", self.preset_depth),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be at least 1")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.network.input_dim != self.dataset.input_dim() {
            return Err(Error::Config(format!(
                "network input_dim {} does not match the dataset dimension {}",
                self.network.input_dim,
                self.dataset.input_dim()
            )));
        }
        self.network.validate()
    }
}

/// Splits on commas that are not inside parentheses.
fn split_list(v: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, c) in v.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(v[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(v[start..].trim());
    out.retain(|s| !s.is_empty());
    out
}

struct Entry {
    line: usize,
    value: String,
}

struct Entries(HashMap<String, Entry>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<Entry> {
        self.0.remove(key)
    }

    fn parsed<T>(&mut self, key: &str, what: &str, f: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => f(&e.value).map(Some).ok_or_else(|| Error::ConfigLine {
                line: e.line,
                message: format!("{key}: expected {what}, got '{}'", e.value),
            }),
        }
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a positive integer", |v| v.parse::<usize>().ok().filter(|&n| n > 0))
    }

    fn natural(&mut self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer", |v| v.parse().ok())
    }

    fn value<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        self.parsed(key, what, |v| v.parse().ok())
    }

    fn list<T: FromStr>(&mut self, key: &str, what: &str) -> Result<Option<Vec<T>>> {
        self.parsed(key, what, |v| {
            let items: Option<Vec<T>> = split_list(v).into_iter().map(|s| s.parse().ok()).collect();
            items.filter(|l| !l.is_empty())
        })
    }
}

const KEYS: &[&str] = &[
    "preset",
    "preset_depth",
    "dataset",
    "data_dir",
    "synth_seed",
    "synth_n_per_class",
    "synth_classes",
    "synth_dim",
    "encoder_depth",
    "decoder_depth",
    "hidden_width",
    "latent_dim",
    "encoder_skip",
    "decoder_skip",
    "activation",
    "likelihood",
    "epochs",
    "batch_size",
    "seed",
    "learning_rate",
    "output_dir",
    "fisher_probe_interval",
    "eval_samples",
    "probe_size",
    "classifier_epochs",
    "run_id",
    "resume",
    "sweep_depths",
    "sweep_skip_modes",
    "table1_presets",
    "table1_seeds",
];

fn line_error(line: usize, message: impl Into<String>) -> Error {
    Error::ConfigLine {
        line,
        message: message.into(),
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map = HashMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| line_error(line, format!("expected 'key = value', got '{content}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(line_error(line, format!("unknown key '{k}'")));
        }
        if v.is_empty() {
            return Err(line_error(line, format!("{k}: missing value")));
        }
        if map.insert(k.to_string(), Entry { line, value: v.to_string() }).is_some() {
            return Err(line_error(line, format!("duplicate key '{k}'")));
        }
    }
    let mut e = Entries(map);

    let data_line = e.0.get("dataset").map(|d| d.line);
    let dataset = match e.take("dataset") {
        None => return Err(Error::Config("dataset is required (mnist or synth)".into())),
        Some(d) if d.value == "synth" => {
            let mut p = SynthParams::default();
            if let Some(v) = e.value("synth_seed", "an unsigned integer")? {
                p.seed = v;
            }
            if let Some(v) = e.count("synth_n_per_class")? {
                p.n_per_class = v;
            }
            if let Some(v) = e.count("synth_classes")? {
                p.n_classes = v;
            }
            if let Some(v) = e.count("synth_dim")? {
                p.dim = v;
            }
            DatasetSpec::Synth(p)
        }
        Some(d) => {
            let inline = d
                .value
                .strip_prefix("mnist(")
                .and_then(|r| r.strip_suffix(')'))
                .map(|p| p.trim().to_string());
            let dir = match (d.value.as_str(), inline, e.take("data_dir")) {
                (_, Some(p), None) => PathBuf::from(p),
                ("mnist", None, Some(dd)) => PathBuf::from(dd.value),
                ("mnist", None, None) => return Err(line_error(d.line, "dataset mnist needs data_dir")),
                (_, Some(_), Some(dd)) => {
                    return Err(line_error(dd.line, "data_dir given twice (also inside mnist(...))"))
                }
                _ => {
                    return Err(line_error(
                        d.line,
                        format!("dataset: expected synth, mnist or mnist(<dir>), got '{}'", d.value),
                    ))
                }
            };
            DatasetSpec::Mnist(dir)
        }
    };
    for k in ["synth_seed", "synth_n_per_class", "synth_classes", "synth_dim", "data_dir"] {
        if let Some(x) = e.take(k) {
            return Err(line_error(x.line, format!("{k} does not apply to this dataset")));
        }
    }

    let mut cfg = RunConfig::new(dataset);
    if let Some(d) = e.count("preset_depth")? {
        cfg.preset_depth = d;
    }
    if let Some(p) = e.value::<Preset>("preset", "one of vae1l, vae11l, vae-qpp, vae-ppp, scvae, scvae-l")? {
        cfg = cfg.with_preset(p);
    }
    let net = &mut cfg.network;
    if let Some(v) = e.count("hidden_width")? {
        net.hidden_width = v;
    }
    if let Some(v) = e.count("latent_dim")? {
        net.latent_dim = v;
    }
    if let Some(v) = e.count("encoder_depth")? {
        net.encoder_depth = v;
    }
    if let Some(v) = e.count("decoder_depth")? {
        net.decoder_depth = v;
    }
    let skip_what = "none, every_layer or long(from,to)";
    if let Some(v) = e.value("encoder_skip", skip_what)? {
        net.encoder_skip = v;
    }
    if let Some(v) = e.value("decoder_skip", skip_what)? {
        net.decoder_skip = v;
    }
    if let Some(v) = e.value::<Activation>("activation", "tanh, relu, sigmoid or identity")? {
        net.activation = v;
    }
    if let Some(v) = e.value("likelihood", "bernoulli or diagonal_gaussian")? {
        net.likelihood = v;
    }
    if let Some(v) = e.count("epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = e.count("batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = e.value("seed", "an unsigned integer")? {
        cfg.seed = v;
    }
    if let Some(v) = e.parsed("learning_rate", "a positive number", |v| {
        v.parse::<f64>().ok().filter(|x| x.is_finite() && *x > 0.0)
    })? {
        cfg.learning_rate = v;
    }
    if let Some(v) = e.take("output_dir") {
        cfg.output_dir = PathBuf::from(v.value);
    }
    if let Some(v) = e.natural("fisher_probe_interval")? {
        cfg.fisher_probe_interval = v;
    }
    if let Some(v) = e.count("eval_samples")? {
        cfg.eval_samples = v;
    }
    if let Some(v) = e.count("probe_size")? {
        cfg.probe_size = v;
    }
    if let Some(v) = e.count("classifier_epochs")? {
        cfg.classifier_epochs = v;
    }
    if let Some(v) = e.parsed("run_id", "letters, digits, '-', '_' or '.'", |v| {
        v.chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
            .then(|| v.to_string())
    })? {
        cfg.run_id = Some(v);
    }
    if let Some(v) = e.value("resume", "true or false")? {
        cfg.resume = v;
    }
    if let Some(v) = e.parsed("sweep_depths", "a comma-separated list of positive integers", |v| {
        let l: Option<Vec<usize>> = split_list(v).into_iter().map(|s| s.parse().ok().filter(|&d| d > 0)).collect();
        l.filter(|l| !l.is_empty())
    })? {
        cfg.sweep_depths = v;
    }
    if let Some(v) = e.list("sweep_skip_modes", "a comma-separated list of skip modes")? {
        cfg.sweep_skip_modes = v;
    }
    if let Some(v) = e.list("table1_presets", "a comma-separated list of presets")? {
        cfg.table1_presets = v;
    }
    if let Some(v) = e.list("table1_seeds", "a comma-separated list of unsigned integers")? {
        cfg.table1_seeds = v;
    }
    debug_assert!(e.0.is_empty(), "unhandled keys {:?}", e.0.keys().collect::<Vec<_>>());

    cfg.validate().map_err(|err| match (err, data_line) {
        (Error::Config(m), Some(line)) if m.contains("input_dim") => line_error(line, m),
        (err, _) => err,
    })?;
    Ok(cfg)
}
