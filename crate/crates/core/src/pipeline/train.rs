use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::{component_rng, RunConfig};
use crate::dataio::{Dataset, TrainingWindow};
use crate::diffusion::{noise_loss, NoiseSchedule};
use crate::error::{Error, Result};
use crate::fam::{Conditioning, Fam};
use crate::nn::{adam_step, AdamState, ParamSet};

pub const LOSS_FILE: &str = "loss.tsv";
pub const FINAL_CHECKPOINT: &str = "model.ldif";
pub const RUN_CONFIG: &str = "run.toml";

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ldif")
}

/// Optimizer state stored next to a checkpoint: `epoch_NNN.ldif` → `epoch_NNN.adam.ldif`.
pub fn adam_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint.file_stem().map(|s| s.to_string_lossy()).unwrap_or_default();
    checkpoint.with_file_name(format!("{stem}.adam.ldif"))
}

fn epoch_of(checkpoint: &Path) -> Result<usize> {
    checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.strip_prefix("epoch_"))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            Error::Config(format!(
                "resume checkpoint {} is not named epoch_NNN.ldif",
                checkpoint.display()
            ))
        })
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub final_checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    /// `(epoch, mean loss)` for the epochs run by this call.
    pub epoch_means: Vec<(usize, f64)>,
    pub steps: u64,
}

pub fn conditioning(w: &TrainingWindow) -> Conditioning {
    Conditioning {
        speaker_visual: w.speaker.clone(),
        speaker_audio: w.audio.clone(),
        identity: w.identity.clone(),
        attitude: w.attitude,
    }
}

/// Learning rate for optimizer step `step` (0-based) out of `total`.
pub fn learning_rate(base: f64, cosine: bool, step: u64, total: u64) -> f64 {
    if !cosine || total == 0 {
        return base;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// One optimizer step on a batch: per-window losses in batch order,
/// gradients averaged in the same fixed order.
fn batch_step(
    model: &mut Fam,
    sched: &NoiseSchedule,
    batch: &[TrainingWindow],
    state: &mut AdamState,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for w in batch {
        let r = noise_loss(model, &w.listener, &conditioning(w), sched, rng)?;
        loss += scale * r.loss;
        grads.add_scaled(&r.grads, scale)?;
    }
    if !loss.is_finite() {
        return Ok(loss);
    }
    adam_step(&mut model.params, &grads, state)?;
    Ok(loss)
}

fn check_dataset(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    let fam = cfg.fam_config();
    let p = &data.pairs[0];
    if p.speaker.cols() != fam.coeff_dim || p.identity.len() != fam.id_dim || p.audio.cols() != fam.audio_dim {
        return Err(Error::Config(format!(
            "dataset has {} coefficient, {} identity, {} audio channels; config implies {}, {}, {}",
            p.speaker.cols(),
            p.identity.len(),
            p.audio.cols(),
            fam.coeff_dim,
            fam.id_dim,
            fam.audio_dim
        )));
    }
    Ok(())
}

fn save_state(dir: &Path, epoch: usize, params: &ParamSet, state: &AdamState) -> Result<PathBuf> {
    let path = dir.join(checkpoint_name(epoch));
    params.save(&path)?;
    state.to_param_set().save(&adam_path(&path))?;
    Ok(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains the noise predictor on `data`, writing into `run_dir`:
/// `epoch_NNN.ldif` (+ `.adam.ldif`) after every epoch with `epoch_000`
/// the initialization, `model.ldif` for the last epoch, `loss.tsv`
/// (`step`, `epoch`, `loss` per optimizer step) and `run.toml`.
///
/// Every epoch draws its shuffle, steps and noise from its own seed stream,
/// so a resumed run reproduces an unbroken one bit for bit.
pub fn train(cfg: &RunConfig, data: &Dataset, run_dir: &Path, log: &mut dyn FnMut(&str)) -> Result<TrainReport> {
    cfg.validate()?;
    check_dataset(cfg, data)?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let t = &cfg.train;
    let sched = cfg.schedule()?;
    let loss_path = run_dir.join(LOSS_FILE);

    let (mut model, mut state, first_epoch, mut curve) = if t.resume.as_os_str().is_empty() {
        let model = Fam::init(cfg.fam_config(), &mut component_rng(cfg.seed, "model.init"))?;
        let state = AdamState::new(&model.params, cfg.adam())?;
        save_state(run_dir, 0, &model.params, &state)?;
        (model, state, 1, String::from("step\tepoch\tloss\n"))
    } else {
        let done = epoch_of(&t.resume)?;
        let model = Fam::from_params(cfg.fam_config(), ParamSet::load(&t.resume)?)?;
        let packed = ParamSet::load(&adam_path(&t.resume))?;
        let state = AdamState::from_param_set(&packed, &model.params, cfg.adam())?;
        let mut curve = String::from("step\tepoch\tloss\n");
        if let Ok(old) = std::fs::read_to_string(&loss_path) {
            for line in old.lines().skip(1) {
                let epoch = line.split('\t').nth(1).and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e <= done) {
                    curve.push_str(line);
                    curve.push('\n');
                }
            }
        }
        log(&format!("resuming after epoch {done} at step {}", state.step));
        (model, state, done + 1, curve)
    };

    let windows_per_epoch = data.windows(t.window, t.stride)?.len() as u64;
    let total_steps = t.epochs as u64 * windows_per_epoch.div_ceil(t.batch as u64);
    let mut epoch_means = Vec::new();
    for epoch in first_epoch..=t.epochs {
        let mut rng = component_rng(cfg.seed, &format!("train.epoch.{epoch}"));
        let batches: Vec<_> = data.batches(t.window, t.stride, t.batch, &mut rng)?.collect();
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in &batches {
            let lr = learning_rate(t.lr, t.cosine, state.step, total_steps);
            state.config.lr = lr;
            let loss = batch_step(&mut model, &sched, batch, &mut state, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss is {loss} at step {} (epoch {epoch}, learning rate {lr})",
                    state.step + 1
                )));
            }
            writeln!(curve, "{}\t{epoch}\t{loss}", state.step).unwrap();
            sum += loss * batch.len() as f64;
            count += batch.len();
        }
        let mean = sum / count as f64;
        save_state(run_dir, epoch, &model.params, &state)?;
        write_text(&loss_path, &curve)?;
        log(&format!("epoch {epoch}/{}: mean loss {mean:.6} over {count} windows", t.epochs));
        epoch_means.push((epoch, mean));
    }
    write_text(&loss_path, &curve)?;
    let final_checkpoint = run_dir.join(FINAL_CHECKPOINT);
    model.params.save(&final_checkpoint)?;
    write_text(&run_dir.join(RUN_CONFIG), &cfg.to_text())?;
    Ok(TrainReport {
        final_checkpoint,
        loss_curve: loss_path,
        epoch_means,
        steps: state.step,
    })
}
