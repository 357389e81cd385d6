//! Synthetic dialogue generator.
//!
//! Speaker:
//! - energy `a(k) = s·|sin(2πf·k/30)| + 0.1·n(k)`, `f ~ U(0.5, 2.0)` Hz, `s` = `energy_scale`;
//! - the other 44 acoustic channels are `w_j·a(k) + 0.3·n_j(k)` with `w_j ~ U(−1, 1)` per pair;
//! - head angles are a clamped (±0.5 rad) random walk with N(0, 0.01²) steps, smoothed;
//! - expression channels follow `0.2·w_e·ā(k) + 0.02·n`, translation a small clamped walk.
//!
//! Listener, with `ā = smooth(a)` (centered 5-frame mean):
//! - positive: `pitch(k) = 0.15·ā(k)·sin(2π·1.5·k/30)`, expression channel 0 mean +0.3;
//! - negative: `yaw(k) = 0.12·sin(2π·1.0·k/30)·ā(k)`, expression channel 1 mean −0.3 and
//!   channel 0 mean −0.3;
//! - neutral: angles are 0.02·(9-frame mean of unit white noise);
//! - every channel gets N(0, 0.02²) residual noise, and expression channel `e` gets the
//!   fixed per-listener offset `0.05·id[e mod I]`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use super::{lseq, Attitude, DialoguePair, Layout, AUDIO_DIMS, FPS};
use crate::error::{Error, Result};
use crate::nn::NumArray;

pub const MANIFEST: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub expr_dims: usize,
    pub id_dims: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Number of distinct listeners in the identity pool.
    pub listeners: usize,
    /// Multiplier on the periodic part of the speaker energy (0 disables it).
    pub energy_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            expr_dims: 8,
            id_dims: 32,
            min_len: 100,
            max_len: 300,
            listeners: 8,
            energy_scale: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn layout(&self) -> Layout {
        Layout {
            expr_dims: self.expr_dims,
        }
    }

    pub fn validate(&self, window: usize) -> Result<()> {
        if self.expr_dims < 2 {
            return Err(Error::Config("data.expr_dims must be at least 2".into()));
        }
        if self.id_dims == 0 || self.listeners == 0 {
            return Err(Error::Config("data.id_dims and data.listeners must be positive".into()));
        }
        if self.min_len < window || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "need window {window} <= data.min_len {} <= data.max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ListenerIdentity {
    pub id: u32,
    pub vector: NumArray,
}

/// Standard-normal identity vector (norm > 0 almost surely; resampled otherwise).
pub fn draw_identity(rng: &mut impl Rng, id: u32, dims: usize) -> ListenerIdentity {
    loop {
        let v: Vec<f64> = (0..dims).map(|_| normal(rng)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return ListenerIdentity {
                id,
                vector: NumArray::vector(v),
            };
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Centered moving average with the window truncated at the edges.
pub fn smooth(x: &[f64], radius: usize) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius + 1).min(n);
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Generates one pair of `length` frames for the given listener and attitude.
pub fn gen_pair(
    rng: &mut impl Rng,
    length: usize,
    attitude: Attitude,
    listener: &ListenerIdentity,
    cfg: &SynthConfig,
    window: usize,
) -> Result<DialoguePair> {
    if length < window {
        return Err(Error::Data(format!("pair length {length} shorter than window {window}")));
    }
    let layout = cfg.layout();
    let d = layout.coeff_dims();
    let fps = FPS as f64;

    let f = rng.random_range(0.5..2.0);
    let energy: Vec<f64> = (0..length)
        .map(|k| cfg.energy_scale * (2.0 * PI * f * k as f64 / fps).sin().abs() + 0.1 * normal(rng))
        .collect();
    let sa = smooth(&energy, 2);

    let mut audio = NumArray::zeros(&[length, AUDIO_DIMS]);
    let mix: Vec<f64> = (1..AUDIO_DIMS).map(|_| rng.random_range(-1.0..1.0)).collect();
    for k in 0..length {
        let row = audio.row_mut(k);
        row[0] = energy[k];
        for j in 1..AUDIO_DIMS {
            row[j] = mix[j - 1] * energy[k] + 0.3 * normal(rng);
        }
    }

    let mut speaker = NumArray::zeros(&[length, d]);
    for c in layout.angle() {
        let mut walk = Vec::with_capacity(length);
        let mut x = 0.0f64;
        for _ in 0..length {
            x = (x + 0.01 * normal(rng)).clamp(-0.5, 0.5);
            walk.push(x);
        }
        for (k, v) in smooth(&walk, 2).into_iter().enumerate() {
            speaker.set(k, c, v);
        }
    }
    let expr_mix: Vec<f64> = (0..cfg.expr_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
    for k in 0..length {
        for (e, w) in expr_mix.iter().enumerate() {
            speaker.set(k, layout.expr(e), 0.2 * w * sa[k] + 0.02 * normal(rng));
        }
    }
    for c in layout.translation() {
        let mut x = 0.0f64;
        for k in 0..length {
            x = (x + 0.002 * normal(rng)).clamp(-0.1, 0.1);
            speaker.set(k, c, x);
        }
    }

    let mut listener_seq = NumArray::zeros(&[length, d]);
    let (smile, frown) = (layout.expr(0), layout.expr(1));
    match attitude {
        Attitude::Positive => {
            for k in 0..length {
                let nod = 0.15 * sa[k] * (2.0 * PI * 1.5 * k as f64 / fps).sin();
                listener_seq.set(k, 0, nod);
                listener_seq.set(k, smile, 0.3);
            }
        }
        Attitude::Negative => {
            for k in 0..length {
                let shake = 0.12 * (2.0 * PI * 1.0 * k as f64 / fps).sin() * sa[k];
                listener_seq.set(k, 1, shake);
                listener_seq.set(k, smile, -0.3);
                listener_seq.set(k, frown, -0.3);
            }
        }
        Attitude::Neutral => {
            for c in layout.angle() {
                let white: Vec<f64> = (0..length).map(|_| normal(rng)).collect();
                for (k, v) in smooth(&white, 4).into_iter().enumerate() {
                    listener_seq.set(k, c, 0.02 * v);
                }
            }
        }
    }
    let id = listener.vector.data();
    for k in 0..length {
        let row = listener_seq.row_mut(k);
        for e in 0..cfg.expr_dims {
            row[super::ANGLE_DIMS + e] += 0.05 * id[e % id.len()];
        }
        for v in row.iter_mut() {
            *v += 0.02 * normal(rng);
        }
    }

    Ok(DialoguePair {
        speaker,
        audio,
        listener: listener_seq,
        identity: listener.vector.clone(),
        attitude,
        listener_id: listener.id,
        fps: FPS,
    })
}

/// Draws the listener identity pool.
pub fn identity_pool(cfg: &SynthConfig, id_rng: &mut impl Rng) -> Vec<ListenerIdentity> {
    (0..cfg.listeners as u32)
        .map(|id| draw_identity(id_rng, id, cfg.id_dims))
        .collect()
}

/// Generates `count` pairs in memory, cycling positive, neutral, negative,
/// with a random listener from `pool` and a random length per pair.
pub fn gen_pairs(
    cfg: &SynthConfig,
    count: usize,
    window: usize,
    pool: &[ListenerIdentity],
    rng: &mut impl Rng,
) -> Result<Vec<DialoguePair>> {
    if count == 0 {
        return Err(Error::Data("empty dataset requested".into()));
    }
    cfg.validate(window)?;
    if pool.is_empty() {
        return Err(Error::Config("listener pool is empty".into()));
    }
    (0..count)
        .map(|i| {
            let attitude = super::ATTITUDES[i % super::ATTITUDES.len()];
            let listener = &pool[rng.random_range(0..pool.len())];
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            gen_pair(rng, len, attitude, listener, cfg, window)
        })
        .collect()
}

/// Writes `pairs` to `dir/pairs/NNNN.lseq` plus `dir/manifest.tsv`.
pub fn write_dataset(dir: &Path, pairs: &[DialoguePair]) -> Result<()> {
    let pairs_dir = dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
    let mut manifest = String::from("id\tattitude\tlength\tlistener_id\n");
    for (idx, pair) in pairs.iter().enumerate() {
        let id = format!("{idx:04}");
        lseq::write_sequence(&pairs_dir.join(format!("{id}.lseq")), pair)?;
        writeln!(manifest, "{id}\t{}\t{}\t{}", pair.attitude, pair.len(), pair.listener_id).unwrap();
    }
    let mpath = dir.join(MANIFEST);
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
}

/// Writes `n_per_attitude` pairs of each attitude. Identities come from
/// `id_rng`, everything else from `rng`, so splits drawn with different
/// `rng`s share listeners.
pub fn generate_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    n_per_attitude: usize,
    window: usize,
    id_rng: &mut impl Rng,
    rng: &mut impl Rng,
) -> Result<Vec<DialoguePair>> {
    let pool = identity_pool(cfg, id_rng);
    let pairs = gen_pairs(cfg, 3 * n_per_attitude, window, &pool, rng)?;
    write_dataset(dir, &pairs)?;
    Ok(pairs)
}
