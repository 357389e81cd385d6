//! WebAssembly bindings for the static demo page in `www/`.

use listendiff::dataio::{gen_pair, identity_pool, smooth, Attitude, SynthConfig};
use listendiff::diffusion::{forward_sample, gaussian, NoiseSchedule};
use listendiff::eval::smoothness;
use listendiff::nn::NumArray;
use listendiff::pipeline::{concat_windows, stitch_windows};
use listendiff::dataio::window_starts;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn column(seq: &NumArray, c: usize) -> Vec<f64> {
    (0..seq.rows()).map(|k| seq.get(k, c)).collect()
}

/// Named traces of equal length, handed to JS one at a time.
#[wasm_bindgen]
pub struct Traces {
    names: Vec<String>,
    values: Vec<Vec<f64>>,
    note: String,
}

#[wasm_bindgen]
impl Traces {
    pub fn count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, i: usize) -> String {
        self.names[i].clone()
    }

    pub fn values(&self, i: usize) -> Vec<f64> {
        self.values[i].clone()
    }

    /// One-line summary for display under the plot.
    pub fn note(&self) -> String {
        self.note.clone()
    }
}

fn synth_listener(attitude: Attitude, seed: u64, frames: usize) -> Result<listendiff::dataio::DialoguePair, JsError> {
    let cfg = SynthConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = identity_pool(&cfg, &mut rng);
    gen_pair(&mut rng, frames.max(40), attitude, &pool[0], &cfg, 40).map_err(js_err)
}

/// Synthetic dialogue for `attitude` ("positive", "neutral", "negative"):
/// smoothed speaker energy, listener pitch and yaw, smile and frown channels.
#[wasm_bindgen]
pub fn synthetic_listener(attitude: &str, seed: u64, frames: usize) -> Result<Traces, JsError> {
    let att: Attitude = attitude.parse().map_err(js_err)?;
    let pair = synth_listener(att, seed, frames)?;
    let layout = pair.layout().map_err(js_err)?;
    let energy = smooth(&column(&pair.audio, 0), 2);
    let smile = column(&pair.listener, layout.expr(0));
    let mean_smile = smile.iter().sum::<f64>() / smile.len() as f64;
    Ok(Traces {
        names: ["speaker energy", "listener pitch", "listener yaw", "smile", "frown"].map(String::from).to_vec(),
        values: vec![
            energy,
            column(&pair.listener, 0),
            column(&pair.listener, 1),
            smile,
            column(&pair.listener, layout.expr(1)),
        ],
        note: format!("{} frames, {att} listener, mean smile {mean_smile:+.3}", pair.len()),
    })
}

/// Noises the listener pitch of a positive synthetic pair to step `t` of a
/// linear schedule; the last trace is the cumulative signal level over steps.
#[wasm_bindgen]
pub fn forward_noising(steps: usize, beta_start: f64, beta_end: f64, t: usize, seed: u64) -> Result<Traces, JsError> {
    let sched = NoiseSchedule::linear(steps, beta_start, beta_end).map_err(js_err)?;
    let pair = synth_listener(Attitude::Positive, seed, 200)?;
    let clean = NumArray::new(vec![pair.len(), 1], column(&pair.listener, 0)).map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eps = gaussian(clean.shape(), &mut rng);
    let noisy = forward_sample(&clean, t, &eps, &sched).map_err(js_err)?;
    let ab = sched.alpha_bar(t).map_err(js_err)?;
    Ok(Traces {
        names: ["clean pitch", "noised pitch", "signal level per step"].map(String::from).to_vec(),
        values: vec![
            clean.into_data(),
            noisy.into_data(),
            sched.alpha_bars().iter().map(|a| a.sqrt()).collect(),
        ],
        note: format!("t = {t}/{steps}: signal scale {:.3}, noise scale {:.3}", ab.sqrt(), (1.0 - ab).sqrt()),
    })
}

/// Random smooth clips placed on the window grid, merged by crossfade and by hard cuts.
#[wasm_bindgen]
pub fn stitching(len: usize, window: usize, stride: usize, seed: u64) -> Result<Traces, JsError> {
    let starts = window_starts(len, window, stride).map_err(js_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clips: Vec<NumArray> = starts
        .iter()
        .map(|_| {
            let mut x: f64 = rng.random_range(-0.5..0.5);
            let rows: Vec<Vec<f64>> = (0..window)
                .map(|_| {
                    x += rng.random_range(-0.03..0.03);
                    vec![x, 0.0, 0.0]
                })
                .collect();
            NumArray::from_rows(&rows).expect("rectangular rows")
        })
        .collect();
    let soft = stitch_windows(&clips, &starts, len).map_err(js_err)?;
    let hard = concat_windows(&clips, &starts, len).map_err(js_err)?;
    let (js, jh) = (smoothness(&soft).map_err(js_err)?, smoothness(&hard).map_err(js_err)?);
    Ok(Traces {
        names: ["crossfade", "hard cuts"].map(String::from).to_vec(),
        values: vec![column(&soft, 0), column(&hard, 0)],
        note: format!("{} windows; largest jump {js:.4} crossfaded vs {jh:.4} with hard cuts", starts.len()),
    })
}
