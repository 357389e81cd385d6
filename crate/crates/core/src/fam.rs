//! Feature aggregation noise predictor.
//!
//! Per layer the latent tokens go through identity modulation (scale/shift of
//! the normalized latent computed from the listener identity vector) followed
//! by multi-head self-attention, then cross-attention into a memory built from
//! speaker frames, the attitude label and the diffusion step, then a
//! position-wise feed-forward block. Each sub-block is wrapped as
//! `LN(x + sublayer(x))`.
//!
//! Parameter paths:
//!
//! | path                                  | shape          |
//! |---------------------------------------|----------------|
//! | `input/{w,b}`                         | `[D,W]`, `[W]` |
//! | `time/{w,b}`                          | `[W,W]`, `[W]` |
//! | `cond/frame/{w,b}`                    | `[D+A,W]`, `[W]` |
//! | `cond/attitude/{w,b}`                 | `[3,W]`, `[W]` |
//! | `layerN/id/{gamma,delta}/{w,b}`       | `[I,W]`, `[W]` |
//! | `layerN/{self,cross}/{wq,wk,wv,wo}`   | `[W,W]`        |
//! | `layerN/{self,cross}/bo`              | `[W]`          |
//! | `layerN/ffn/{w1,b1,w2,b2}`            | `[W,4W]`, `[4W]`, `[4W,W]`, `[W]` |
//! | `layerN/{self,cross,ffn}_norm/{scale,shift}` | `[W]`   |
//! | `output/{w,b}`                        | `[W,D]`, `[D]` |
//!
//! so the scalar count is
//! `(D+1)W + (W+1)W + (D+A+1)W + 4W + layers·(2(I+1)W + 2(4W²+W) + 8W²+5W + 6W) + (W+1)D`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use crate::dataio::{Attitude, ATTITUDES};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::nn::{
    glorot, linear, multi_head, residual_norm, MultiHeadVars, NumArray, ParamSet, Tape, Var, LN_EPS,
};

pub const FFN_MULT: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FamConfig {
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    /// Coefficient channels per frame (angle 3 + expression E + translation 3).
    pub coeff_dim: usize,
    pub id_dim: usize,
    pub audio_dim: usize,
    /// Largest diffusion step the model is asked about.
    pub steps: usize,
    /// Also add the projected step embedding to the latent after the input projection.
    pub time_additive: bool,
    /// Also add the attitude token to every latent row after the input projection.
    pub attitude_additive: bool,
    /// Add a sinusoidal frame-index code to latent tokens and speaker frame tokens.
    pub positional: bool,
}

impl Default for FamConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 8,
            width: 64,
            coeff_dim: 14,
            id_dim: 32,
            audio_dim: 45,
            steps: 50,
            time_additive: true,
            attitude_additive: true,
            positional: true,
        }
    }
}

impl FamConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("width", self.width),
            ("coeff_dim", self.coeff_dim),
            ("id_dim", self.id_dim),
            ("audio_dim", self.audio_dim),
            ("steps", self.steps),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "model.width {} not divisible by model.heads {}",
                self.width, self.heads
            )));
        }
        if self.width % 2 != 0 {
            return Err(Error::Config("model.width must be even for the step embedding".into()));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count (see module docs).
    pub fn param_count(&self) -> usize {
        let (d, w, a, i) = (self.coeff_dim, self.width, self.audio_dim, self.id_dim);
        let per_layer = 2 * (i + 1) * w + 2 * (4 * w * w + w) + (2 * FFN_MULT * w * w + FFN_MULT * w + w) + 6 * w;
        (d + 1) * w + (w + 1) * w + (d + a + 1) * w + (ATTITUDES.len() + 1) * w + self.layers * per_layer + (w + 1) * d
    }
}

/// Conditioning for one window of `L` frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    /// `[L, D]` speaker coefficients.
    pub speaker_visual: NumArray,
    /// `[L, A]` acoustic features.
    pub speaker_audio: NumArray,
    /// `[I]` listener identity embedding.
    pub identity: NumArray,
    pub attitude: Attitude,
}

impl Conditioning {
    pub fn window_len(&self) -> usize {
        self.speaker_visual.rows()
    }

    pub fn validate(&self, cfg: &FamConfig) -> Result<()> {
        let (lv, dv) = self.speaker_visual.dims2()?;
        let (la, da) = self.speaker_audio.dims2()?;
        if lv != la {
            return Err(Error::Data(format!(
                "speaker visual stream has {lv} frames but audio has {la}"
            )));
        }
        if dv != cfg.coeff_dim || da != cfg.audio_dim {
            return Err(Error::dims(
                "conditioning",
                &[dv, da],
                &[cfg.coeff_dim, cfg.audio_dim],
            ));
        }
        if self.identity.len() == 0 {
            return Err(Error::Config("identity embedding has zero dimension".into()));
        }
        if self.identity.len() != cfg.id_dim {
            return Err(Error::dims("identity", self.identity.shape(), &[cfg.id_dim]));
        }
        if self.identity.data().iter().map(|v| v * v).sum::<f64>() <= 0.0 {
            return Err(Error::Data("identity embedding has zero norm".into()));
        }
        Ok(())
    }
}

/// Sinusoidal step embedding: interleaved `(sin(t/10000^{2i/W}), cos(·))` pairs.
pub fn embed_time(t: usize, width: usize) -> Result<NumArray> {
    if width == 0 || width % 2 != 0 {
        return Err(Error::Config(format!("step embedding width {width} must be even")));
    }
    let mut out = Vec::with_capacity(width);
    for i in 0..width / 2 {
        let freq = 10000f64.powf(2.0 * i as f64 / width as f64);
        let arg = t as f64 / freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(NumArray::vector(out))
}

/// The noise-prediction network: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Fam {
    pub config: FamConfig,
    pub params: ParamSet,
}

fn attn_params(p: &mut ParamSet, prefix: &str, w: usize, rng: &mut impl Rng) {
    for name in ["wq", "wk", "wv", "wo"] {
        p.insert(format!("{prefix}/{name}"), glorot(rng, w, w));
    }
    p.insert(format!("{prefix}/bo"), NumArray::zeros(&[w]));
}

fn norm_params(p: &mut ParamSet, prefix: &str, w: usize) {
    p.insert(format!("{prefix}/scale"), NumArray::full(&[w], 1.0));
    p.insert(format!("{prefix}/shift"), NumArray::zeros(&[w]));
}

fn dense(p: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    p.insert(format!("{prefix}/w"), glorot(rng, fan_in, fan_out));
    p.insert(format!("{prefix}/b"), NumArray::zeros(&[fan_out]));
}

impl Fam {
    /// Glorot-uniform weights, zero biases, unit norm scales. The identity
    /// scale head starts with bias 1 so modulation begins near the identity map.
    pub fn init(config: FamConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, w) = (config.coeff_dim, config.width);
        let mut p = ParamSet::new();
        dense(&mut p, "input", d, w, rng);
        dense(&mut p, "time", w, w, rng);
        dense(&mut p, "cond/frame", d + config.audio_dim, w, rng);
        dense(&mut p, "cond/attitude", ATTITUDES.len(), w, rng);
        for l in 0..config.layers {
            dense(&mut p, &format!("layer{l}/id/gamma"), config.id_dim, w, rng);
            p.insert(format!("layer{l}/id/gamma/b"), NumArray::full(&[w], 1.0));
            dense(&mut p, &format!("layer{l}/id/delta"), config.id_dim, w, rng);
            attn_params(&mut p, &format!("layer{l}/self"), w, rng);
            norm_params(&mut p, &format!("layer{l}/self_norm"), w);
            attn_params(&mut p, &format!("layer{l}/cross"), w, rng);
            norm_params(&mut p, &format!("layer{l}/cross_norm"), w);
            p.insert(format!("layer{l}/ffn/w1"), glorot(rng, w, FFN_MULT * w));
            p.insert(format!("layer{l}/ffn/b1"), NumArray::zeros(&[FFN_MULT * w]));
            p.insert(format!("layer{l}/ffn/w2"), glorot(rng, FFN_MULT * w, w));
            p.insert(format!("layer{l}/ffn/b2"), NumArray::zeros(&[w]));
            norm_params(&mut p, &format!("layer{l}/ffn_norm"), w);
        }
        dense(&mut p, "output", w, d, rng);
        debug_assert_eq!(p.num_scalars(), config.param_count());
        Ok(Self { config, params: p })
    }

    /// Wraps loaded weights, checking every name and shape against `config`.
    pub fn from_params(config: FamConfig, params: ParamSet) -> Result<Self> {
        let reference = Self::init(config.clone(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))?;
        reference.params.check_layout(&params)?;
        Ok(Self { config, params })
    }

    /// Registers all weights on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: tape.params_from(&self.params),
        }
    }

    /// `ε̂ = ε_θ(x_t, t, cond)` for a `[L, D]` latent window.
    pub fn predict_noise(&self, x_t: &NumArray, t: usize, cond: &Conditioning) -> Result<NumArray> {
        self.predict(x_t, t, cond)
    }

    /// Forward pass that also returns every attention-weight matrix
    /// (self and cross, all heads, all layers) for inspection.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        x_t: Var,
        t: usize,
        cond: &Conditioning,
    ) -> Result<(Var, Vec<Var>)> {
        let mut trace = Vec::new();
        let out = self.forward(tape, x_t, t, cond, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x_t: Var,
        t: usize,
        cond: &Conditioning,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        cond.validate(cfg)?;
        if t > cfg.steps {
            return Err(Error::Index(format!("step {t} beyond model.steps {}", cfg.steps)));
        }
        let (l, d) = tape.value(x_t).dims2()?;
        if d != cfg.coeff_dim || l != cond.window_len() {
            return Err(Error::dims(
                "predict_noise",
                tape.value(x_t).shape(),
                &[cond.window_len(), cfg.coeff_dim],
            ));
        }
        let b = self.bind(tape);

        let time = time_token(tape, &b, t, cfg.width)?;
        let mut h = linear(tape, x_t, b.v("input/w"), b.v("input/b"))?;
        if cfg.time_additive {
            h = tape.add_row(h, time)?;
        }
        let att = attitude_token(tape, &b, cond)?;
        if cfg.attitude_additive {
            h = tape.add_row(h, att)?;
        }
        if cfg.positional {
            let pos = tape.constant(positions(l, cfg.width)?);
            h = tape.add(h, pos)?;
        }
        let memory = encode_memory(tape, &b, cfg, cond, att, time)?;

        for layer in 0..cfg.layers {
            let wrap = |e| Error::Layer {
                layer,
                source: Box::new(e),
            };
            h = fam_layer(tape, &b, cfg, layer, h, memory, &cond.identity, trace.as_deref_mut())
                .map_err(wrap)?;
        }
        linear(tape, h, b.v("output/w"), b.v("output/b"))
    }
}

/// Weight handles registered on one tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn v(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("parameter `{name}` not bound"),
        }
    }

    fn mh(&self, prefix: &str) -> MultiHeadVars {
        MultiHeadVars {
            wq: self.v(&format!("{prefix}/wq")),
            wk: self.v(&format!("{prefix}/wk")),
            wv: self.v(&format!("{prefix}/wv")),
            wo: self.v(&format!("{prefix}/wo")),
            bo: self.v(&format!("{prefix}/bo")),
        }
    }
}

fn time_token(tape: &mut Tape, b: &Bound, t: usize, width: usize) -> Result<Var> {
    let e = embed_time(t, width)?.reshape(vec![1, width])?;
    let e = tape.constant(e);
    linear(tape, e, b.v("time/w"), b.v("time/b"))
}

/// Cross-attention memory `[L + 2, W]`: one token per speaker frame
/// (visual ‖ audio projected), then the attitude token, then the step token.
pub fn condition_encode(fam: &Fam, tape: &mut Tape, cond: &Conditioning, t: usize) -> Result<Var> {
    cond.validate(&fam.config)?;
    let b = fam.bind(tape);
    let time = time_token(tape, &b, t, fam.config.width)?;
    let att = attitude_token(tape, &b, cond)?;
    encode_memory(tape, &b, &fam.config, cond, att, time)
}

/// Frame-index codes `[L, W]`, row `k` = `embed_time(k, W)`.
pub fn positions(len: usize, width: usize) -> Result<NumArray> {
    let mut data = Vec::with_capacity(len * width);
    for k in 0..len {
        data.extend_from_slice(embed_time(k, width)?.data());
    }
    NumArray::new(vec![len, width], data)
}

fn attitude_token(tape: &mut Tape, b: &Bound, cond: &Conditioning) -> Result<Var> {
    let one_hot = tape.constant(NumArray::new(vec![1, ATTITUDES.len()], cond.attitude.one_hot().to_vec())?);
    linear(tape, one_hot, b.v("cond/attitude/w"), b.v("cond/attitude/b"))
}

fn encode_memory(
    tape: &mut Tape,
    b: &Bound,
    cfg: &FamConfig,
    cond: &Conditioning,
    att_token: Var,
    time: Var,
) -> Result<Var> {
    let vis = tape.constant(cond.speaker_visual.clone());
    let aud = tape.constant(cond.speaker_audio.clone());
    let frames = tape.concat_cols(&[vis, aud])?;
    let mut frame_tokens = linear(tape, frames, b.v("cond/frame/w"), b.v("cond/frame/b"))?;
    if cfg.positional {
        let pos = tape.constant(positions(cond.window_len(), cfg.width)?);
        frame_tokens = tape.add(frame_tokens, pos)?;
    }
    tape.concat_rows(&[frame_tokens, att_token, time])
}

/// `γ(id) ⊙ norm(h) + δ(id)` followed by self-attention with a post-norm residual.
pub fn identity_enhance(
    tape: &mut Tape,
    b: &Bound,
    heads: usize,
    layer: usize,
    latent: Var,
    identity: &NumArray,
    trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    if identity.len() == 0 {
        return Err(Error::Config("identity embedding has zero dimension".into()));
    }
    let id = tape.constant(identity.clone().reshape(vec![1, identity.len()])?);
    let p = |s: &str| format!("layer{layer}/{s}");
    let gamma = linear(tape, id, b.v(&p("id/gamma/w")), b.v(&p("id/gamma/b")))?;
    let delta = linear(tape, id, b.v(&p("id/delta/w")), b.v(&p("id/delta/b")))?;
    let normed = tape.normalize(latent, LN_EPS)?;
    let modulated = tape.mul_row(normed, gamma)?;
    let modulated = tape.add_row(modulated, delta)?;
    let (attn, weights) = multi_head(tape, modulated, modulated, modulated, heads, &b.mh(&p("self")))?;
    if let Some(tr) = trace {
        tr.extend(weights);
    }
    residual_norm(
        tape,
        modulated,
        attn,
        b.v(&p("self_norm/scale")),
        b.v(&p("self_norm/shift")),
    )
}

#[allow(clippy::too_many_arguments)]
fn fam_layer(
    tape: &mut Tape,
    b: &Bound,
    cfg: &FamConfig,
    layer: usize,
    h: Var,
    memory: Var,
    identity: &NumArray,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let p = |s: &str| format!("layer{layer}/{s}");
    let h = identity_enhance(tape, b, cfg.heads, layer, h, identity, trace.as_deref_mut())?;

    let (cross, weights) = multi_head(tape, h, memory, memory, cfg.heads, &b.mh(&p("cross")))?;
    if let Some(tr) = trace {
        tr.extend(weights);
    }
    let h = residual_norm(tape, h, cross, b.v(&p("cross_norm/scale")), b.v(&p("cross_norm/shift")))?;

    let f = linear(tape, h, b.v(&p("ffn/w1")), b.v(&p("ffn/b1")))?;
    let f = tape.gelu(f);
    let f = linear(tape, f, b.v(&p("ffn/w2")), b.v(&p("ffn/b2")))?;
    residual_norm(tape, h, f, b.v(&p("ffn_norm/scale")), b.v(&p("ffn_norm/shift")))
}

impl NoisePredictor<Conditioning> for Fam {
    fn predict_on_tape(&self, tape: &mut Tape, x_t: Var, t: usize, cond: &Conditioning) -> Result<Var> {
        self.forward(tape, x_t, t, cond, None)
    }
}
