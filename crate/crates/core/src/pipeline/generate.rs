use std::path::Path;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{component_rng, split_seed, RunConfig};
use super::windows::stitch_windows;
use crate::dataio::{window_starts, write_sequence, Attitude, DialoguePair};
use crate::diffusion::{denoise_from, sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::fam::{Conditioning, Fam};
use crate::nn::{NumArray, ParamSet};

/// How each window's reverse chain is run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// `x_T ~ N(0, I)` and fresh noise at every step.
    Ancestral,
    /// `x_T = 0` and no injected noise: a deterministic regression of the
    /// trained network, used as the zero-diversity baseline.
    Deterministic,
}

/// One generated listener sequence and what produced it.
#[derive(Clone, Debug)]
pub struct SampleRun {
    /// `[n, D]`, same length as the speaker track.
    pub listener: NumArray,
    pub attitude: Attitude,
    pub seed: u64,
    pub index: usize,
    pub checkpoint: String,
    pub source: String,
    pub duration: Duration,
}

/// Sidecar metadata written next to each generated `.lseq`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SampleMeta {
    pub seed: u64,
    pub index: usize,
    pub checkpoint_sha256: String,
    pub attitude: String,
    pub source: String,
    pub frames: usize,
    pub duration_ms: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A loaded model ready to generate clip by clip.
pub struct Generator {
    pub model: Fam,
    pub schedule: NoiseSchedule,
    pub window: usize,
    pub stride: usize,
    pub mode: SampleMode,
    /// Checkpoint content hash, or a label for in-memory models.
    pub checkpoint: String,
}

impl Generator {
    /// Loads weights from `path`, checking them against the model section of `cfg`.
    pub fn load(path: &Path, cfg: &RunConfig) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing {
                path: path.to_path_buf(),
                hint: "train a model first (`listendiff train`) or set sample.checkpoint".into(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let model = Fam::from_params(cfg.fam_config(), ParamSet::from_bytes(&bytes)?)?;
        Ok(Self {
            model,
            schedule: cfg.schedule()?,
            window: cfg.train.window,
            stride: cfg.train.stride,
            mode: SampleMode::Ancestral,
            checkpoint: sha256_hex(&bytes),
        })
    }

    pub fn new(model: Fam, schedule: NoiseSchedule, window: usize, stride: usize) -> Self {
        let checkpoint = sha256_hex(&model.params.to_bytes());
        Self {
            model,
            schedule,
            window,
            stride,
            mode: SampleMode::Ancestral,
            checkpoint,
        }
    }

    /// One listener sequence for the speaker track and identity of `pair`.
    /// Windows are sampled in order from one stream seeded with `seed`.
    pub fn generate_one(&self, pair: &DialoguePair, attitude: Attitude, seed: u64) -> Result<NumArray> {
        let starts = window_starts(pair.len(), self.window, self.stride)?;
        let shape = [self.window, self.model.config.coeff_dim];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut clips = Vec::with_capacity(starts.len());
        for &s in &starts {
            let cond = Conditioning {
                speaker_visual: pair.speaker.slice_rows(s, s + self.window),
                speaker_audio: pair.audio.slice_rows(s, s + self.window),
                identity: pair.identity.clone(),
                attitude,
            };
            let clip = match self.mode {
                SampleMode::Ancestral => sample(&self.model, &cond, &self.schedule, &shape, &mut rng)?,
                SampleMode::Deterministic => denoise_from::<_, _, rand_chacha::ChaCha8Rng>(
                    &self.model,
                    &cond,
                    &self.schedule,
                    NumArray::zeros(&shape),
                    None,
                )?,
            };
            clips.push(clip);
        }
        stitch_windows(&clips, &starts, pair.len())
    }

    /// `n` independent sequences; sample `i` uses the sub-seed
    /// `split_seed(seed, "sample.i")`.
    pub fn generate(
        &self,
        pair: &DialoguePair,
        attitude: Attitude,
        n: usize,
        seed: u64,
        source: &str,
    ) -> Result<Vec<SampleRun>> {
        if n == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        (0..n)
            .map(|i| {
                let started = Instant::now();
                let sub = split_seed(seed, &format!("sample.{i}"));
                let listener = self.generate_one(pair, attitude, sub)?;
                Ok(SampleRun {
                    listener,
                    attitude,
                    seed: sub,
                    index: i,
                    checkpoint: self.checkpoint.clone(),
                    source: source.to_string(),
                    duration: started.elapsed(),
                })
            })
            .collect()
    }
}

/// Writes `stem.lseq` (the source pair with the generated listener track and
/// the requested attitude) and `stem.json` metadata.
pub fn write_sample_run(dir: &Path, stem: &str, run: &SampleRun, source: &DialoguePair) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pair = source.clone();
    pair.listener = run.listener.clone();
    pair.attitude = run.attitude;
    write_sequence(&dir.join(format!("{stem}.lseq")), &pair)?;
    let meta = SampleMeta {
        seed: run.seed,
        index: run.index,
        checkpoint_sha256: run.checkpoint.clone(),
        attitude: run.attitude.to_string(),
        source: run.source.clone(),
        frames: run.listener.rows(),
        duration_ms: run.duration.as_secs_f64() * 1e3,
    };
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    let path = dir.join(format!("{stem}.json"));
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

/// Fresh random-init model for `cfg`, seeded like a training run's initialization.
pub fn untrained_model(cfg: &RunConfig) -> Result<Fam> {
    Fam::init(cfg.fam_config(), &mut component_rng(cfg.seed, "model.init"))
}
