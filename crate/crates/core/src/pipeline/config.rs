//! Run configuration: a flat `dotted.key = value` file (TOML syntax) with
//! command-line `key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{Attitude, SynthConfig, AUDIO_DIMS};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::fam::FamConfig;
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub eval: EvalSection,
    pub gradcheck: GradCheckSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    pub split: String,
    pub n_per_attitude: usize,
    pub expr_dims: usize,
    pub id_dims: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub listeners: usize,
    pub energy_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub time_additive: bool,
    pub attitude_additive: bool,
    pub positional: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub data: PathBuf,
    pub out: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub window: usize,
    pub stride: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub cosine: bool,
    /// Checkpoint to continue from; empty starts fresh.
    pub resume: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub checkpoint: PathBuf,
    /// A `.lseq` file or a dataset directory supplying speaker tracks and identities.
    pub source: PathBuf,
    pub n: usize,
    /// Empty keeps each source pair's own attitude.
    pub attitude: String,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub generated: PathBuf,
    pub reference: PathBuf,
    pub out: PathBuf,
    pub permutations: usize,
    pub plot: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub window: usize,
    pub coeff_dim: usize,
    pub id_dim: usize,
    pub audio_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub steps: usize,
    pub h: f64,
    pub tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataSection::default(),
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sample: SampleSection::default(),
            eval: EvalSection::default(),
            gradcheck: GradCheckSection::default(),
        }
    }
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            dir: "data".into(),
            split: "train".into(),
            n_per_attitude: 67,
            expr_dims: s.expr_dims,
            id_dims: s.id_dims,
            min_len: s.min_len,
            max_len: s.max_len,
            listeners: s.listeners,
            energy_scale: s.energy_scale,
        }
    }
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-3,
            beta_end: 0.05,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let f = FamConfig::default();
        Self {
            layers: f.layers,
            heads: f.heads,
            width: f.width,
            time_additive: f.time_additive,
            attitude_additive: f.attitude_additive,
            positional: f.positional,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            data: "data".into(),
            out: "run".into(),
            epochs: 20,
            batch: 16,
            window: 40,
            stride: 20,
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            adam_eps: a.eps,
            cosine: false,
            resume: PathBuf::new(),
        }
    }
}

impl Default for SampleSection {
    fn default() -> Self {
        Self {
            checkpoint: "run/model.ldif".into(),
            source: "data-test".into(),
            n: 1,
            attitude: String::new(),
            out: "samples".into(),
        }
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            generated: "samples".into(),
            reference: "data-test".into(),
            out: "eval".into(),
            permutations: 10_000,
            plot: true,
        }
    }
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            window: 4,
            coeff_dim: 3,
            id_dim: 4,
            audio_dim: 5,
            width: 16,
            heads: 2,
            layers: 2,
            steps: 10,
            h: 1e-5,
            tolerance: 1e-3,
        }
    }
}

/// Every config key with a one-line description, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; every component derives its own stream from it"),
    ("data.dir", "dataset directory written by gen-data"),
    ("data.split", "split name mixed into the pair seed (train, test, ...)"),
    ("data.n_per_attitude", "pairs generated per attitude"),
    ("data.expr_dims", "expression channels per frame"),
    ("data.id_dims", "listener identity vector length"),
    ("data.min_len", "shortest pair in frames"),
    ("data.max_len", "longest pair in frames"),
    ("data.listeners", "size of the listener identity pool"),
    ("data.energy_scale", "multiplier on the periodic speaker energy"),
    ("schedule.steps", "diffusion steps T"),
    ("schedule.beta_start", "first noise variance"),
    ("schedule.beta_end", "last noise variance"),
    ("model.layers", "noise predictor layers"),
    ("model.heads", "attention heads (must divide model.width)"),
    ("model.width", "model width (even)"),
    ("model.time_additive", "add the step embedding to the latent as well"),
    ("model.attitude_additive", "add the attitude token to the latent as well"),
    ("model.positional", "add frame-index codes to latent and speaker tokens"),
    ("train.data", "dataset directory to train on"),
    ("train.out", "run directory for checkpoints and the loss curve"),
    ("train.epochs", "training epochs"),
    ("train.batch", "windows per optimizer step"),
    ("train.window", "window length in frames"),
    ("train.stride", "window stride in frames"),
    ("train.lr", "Adam learning rate"),
    ("train.beta1", "Adam first-moment decay"),
    ("train.beta2", "Adam second-moment decay"),
    ("train.adam_eps", "Adam denominator epsilon"),
    ("train.cosine", "cosine-decay the learning rate to 0 over the run"),
    ("train.resume", "checkpoint epoch_NNN.ldif to continue from (empty: fresh start)"),
    ("sample.checkpoint", "model weights to sample from"),
    ("sample.source", "a .lseq pair or dataset directory providing speaker tracks"),
    ("sample.n", "independent samples per source pair"),
    ("sample.attitude", "positive|neutral|negative; empty keeps each pair's label"),
    ("sample.out", "output directory for generated sequences"),
    ("eval.generated", "directory of generated sequences"),
    ("eval.reference", "dataset directory with ground truth"),
    ("eval.out", "output directory for metrics.tsv and plots"),
    ("eval.permutations", "permutation-test resamples"),
    ("eval.plot", "write an SVG trace plot"),
    ("gradcheck.window", "frames in the checked window"),
    ("gradcheck.coeff_dim", "coefficient channels"),
    ("gradcheck.id_dim", "identity vector length"),
    ("gradcheck.audio_dim", "acoustic feature width"),
    ("gradcheck.width", "model width"),
    ("gradcheck.heads", "attention heads"),
    ("gradcheck.layers", "layers"),
    ("gradcheck.steps", "diffusion steps"),
    ("gradcheck.h", "central-difference step"),
    ("gradcheck.tolerance", "pass threshold on max relative error"),
];

/// Help text listing every config key with its default.
pub fn keys_help() -> String {
    let defaults = RunConfig::default().flatten();
    let mut s = String::from("Config keys (set in --config FILE or as key=value):\n");
    for (key, doc) in CONFIG_KEYS {
        let default = defaults
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or("");
        s.push_str(&format!("  {key:<22} {doc} [default: {default}]\n"));
    }
    s
}

fn insert_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap();
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses one `key=value` override. The value is read as a TOML literal and
/// falls back to a bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() || !k.split('.').all(|p| !p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{k}`")));
    }
    let value = format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn flatten_into(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten_into(&key, v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

impl RunConfig {
    /// Parses config text; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::resolve(text, &[])
    }

    /// File text, then overrides, then validation.
    pub fn resolve(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(format!("config syntax: {}", e.message()))
        })?;
        for (k, v) in overrides {
            insert_dotted(&mut table, k, v.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::resolve(&text, overrides)
    }

    /// `(key, value)` pairs in dotted form, values in TOML syntax.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        flatten_into("", &value, &mut out);
        out
    }

    /// The resolved config as a loadable dotted-key file.
    pub fn to_text(&self) -> String {
        self.flatten()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.stride == 0 || t.stride > t.window {
            return Err(Error::Config(format!(
                "need 0 < train.stride <= train.window, got {} and {}",
                t.stride, t.window
            )));
        }
        if t.batch == 0 {
            return Err(Error::Config("train.batch must be positive".into()));
        }
        if !(t.lr > 0.0 && t.adam_eps > 0.0) || !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return Err(Error::Config("Adam hyperparameters out of range".into()));
        }
        self.synth().validate(t.window)?;
        self.fam_config().validate()?;
        self.schedule()?;
        self.sample_attitude()?;
        if self.eval.permutations == 0 {
            return Err(Error::Config("eval.permutations must be positive".into()));
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        let d = &self.data;
        SynthConfig {
            expr_dims: d.expr_dims,
            id_dims: d.id_dims,
            min_len: d.min_len,
            max_len: d.max_len,
            listeners: d.listeners,
            energy_scale: d.energy_scale,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        let s = &self.schedule;
        NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end)
    }

    pub fn fam_config(&self) -> FamConfig {
        let m = &self.model;
        FamConfig {
            layers: m.layers,
            heads: m.heads,
            width: m.width,
            coeff_dim: self.synth().layout().coeff_dims(),
            id_dim: self.data.id_dims,
            audio_dim: AUDIO_DIMS,
            steps: self.schedule.steps,
            time_additive: m.time_additive,
            attitude_additive: m.attitude_additive,
            positional: m.positional,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            eps: self.train.adam_eps,
        }
    }

    pub fn sample_attitude(&self) -> Result<Option<Attitude>> {
        match self.sample.attitude.as_str() {
            "" => Ok(None),
            s => s.parse().map(Some),
        }
    }

    pub fn gradcheck_fam(&self) -> FamConfig {
        let g = &self.gradcheck;
        FamConfig {
            layers: g.layers,
            heads: g.heads,
            width: g.width,
            coeff_dim: g.coeff_dim,
            id_dim: g.id_dim,
            audio_dim: g.audio_dim,
            steps: g.steps,
            time_additive: true,
            attitude_additive: true,
            positional: true,
        }
    }
}

/// Derives an independent seed for a named component: a 64-bit FNV-1a hash
/// of `component` is xored into `master` and passed through SplitMix64.
pub fn split_seed(master: u64, component: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = (master ^ h).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 stream for a named component.
pub fn component_rng(master: u64, component: &str) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(split_seed(master, component))
}
