//! Gaussian diffusion: variance schedules, closed-form forward noising,
//! the noise-prediction training loss, and ancestral sampling.
//!
//! Step indices are 1-based: `t = 1..=T`. `t = 0` denotes clean data.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{NumArray, ParamSet, Tape, Var};

/// β/α/ᾱ/σ tables for `T` diffusion steps.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// β linearly interpolated from `beta_start` to `beta_end` inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = beta_end - beta_start;
            (0..steps)
                .map(|i| beta_start + span * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sigmas = betas.iter().map(|b| b.sqrt()).collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            sigmas,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.idx(t)?])
    }

    /// Reverse-step standard deviation, `√β_t`.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok(self.sigmas[self.idx(t)?])
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Standard-normal array of the given shape.
pub fn gaussian(shape: &[usize], rng: &mut impl Rng) -> NumArray {
    let mut a = NumArray::zeros(shape);
    for v in a.data_mut() {
        *v = StandardNormal.sample(rng);
    }
    a
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`
pub fn forward_sample(x0: &NumArray, t: usize, eps: &NumArray, sched: &NoiseSchedule) -> Result<NumArray> {
    if x0.shape() != eps.shape() {
        return Err(Error::dims("forward_sample", x0.shape(), eps.shape()));
    }
    let ab = sched.alpha_bar(t)?;
    let (cx, ce) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x0.clone();
    out.data_mut()
        .iter_mut()
        .zip(eps.data())
        .for_each(|(x, e)| *x = cx * *x + ce * e);
    Ok(out)
}

/// One ancestral step: `μ_θ(x_t) + σ_t·z` with
/// `μ_θ = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂) / √α_t`.
pub fn reverse_step(
    x_t: &NumArray,
    t: usize,
    eps_hat: &NumArray,
    sched: &NoiseSchedule,
    z: &NumArray,
) -> Result<NumArray> {
    if x_t.shape() != eps_hat.shape() {
        return Err(Error::dims("reverse_step", x_t.shape(), eps_hat.shape()));
    }
    if x_t.shape() != z.shape() {
        return Err(Error::dims("reverse_step", x_t.shape(), z.shape()));
    }
    let alpha = sched.alpha(t)?;
    let ab = sched.alpha_bar(t)?;
    let sigma = sched.sigma(t)?;
    let coef = (1.0 - alpha) / (1.0 - ab).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let mut out = x_t.clone();
    for ((x, e), zv) in out.data_mut().iter_mut().zip(eps_hat.data()).zip(z.data()) {
        *x = inv_sqrt_alpha * (*x - coef * e) + sigma * zv;
    }
    Ok(out)
}

/// A conditional noise predictor `ε_θ(x_t, t, cond)`.
pub trait NoisePredictor<C: ?Sized> {
    /// Records the prediction on `tape`; trainable weights must be registered
    /// with [`Tape::param`] so their gradients can be collected.
    fn predict_on_tape(&self, tape: &mut Tape, x_t: Var, t: usize, cond: &C) -> Result<Var>;

    /// Forward-only prediction.
    fn predict(&self, x_t: &NumArray, t: usize, cond: &C) -> Result<NumArray> {
        let mut tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let out = self.predict_on_tape(&mut tape, x, t, cond)?;
        Ok(tape.value(out).clone())
    }
}

/// One draw of the noise-prediction objective.
#[derive(Clone, Debug)]
pub struct NoiseLoss {
    pub loss: f64,
    pub grads: ParamSet,
    pub t: usize,
}

/// Samples `t ~ U{1..T}` and `ε ~ N(0, I)`, noises `x0` in closed form, and
/// returns the mean squared error of the predicted noise plus parameter gradients.
pub fn noise_loss<C: ?Sized, P: NoisePredictor<C> + ?Sized>(
    predictor: &P,
    x0: &NumArray,
    cond: &C,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<NoiseLoss> {
    let t = rng.random_range(1..=sched.steps());
    let eps = gaussian(x0.shape(), rng);
    noise_loss_at(predictor, x0, cond, sched, t, &eps)
}

/// Deterministic core of [`noise_loss`] for a given step and noise draw.
pub fn noise_loss_at<C: ?Sized, P: NoisePredictor<C> + ?Sized>(
    predictor: &P,
    x0: &NumArray,
    cond: &C,
    sched: &NoiseSchedule,
    t: usize,
    eps: &NumArray,
) -> Result<NoiseLoss> {
    let x_t = forward_sample(x0, t, eps, sched)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x_t);
    let pred = predictor.predict_on_tape(&mut tape, xv, t, cond)?;
    let target = tape.constant(eps.clone());
    let loss = tape.mse(pred, target)?;
    let grads = tape.backward(loss)?.params();
    Ok(NoiseLoss {
        loss: tape.value(loss).data()[0],
        grads,
        t,
    })
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample<C: ?Sized, P: NoisePredictor<C> + ?Sized>(
    predictor: &P,
    cond: &C,
    sched: &NoiseSchedule,
    shape: &[usize],
    rng: &mut impl Rng,
) -> Result<NumArray> {
    let x_t = gaussian(shape, rng);
    denoise_from(predictor, cond, sched, x_t, Some(rng))
}

/// Runs the reverse chain from a given `x_T`. With `rng = None` every `z` is
/// zero, which makes the chain a deterministic map of `x_T`.
pub fn denoise_from<C: ?Sized, P: NoisePredictor<C> + ?Sized, R: Rng>(
    predictor: &P,
    cond: &C,
    sched: &NoiseSchedule,
    mut x: NumArray,
    mut rng: Option<&mut R>,
) -> Result<NumArray> {
    let zero = NumArray::zeros(x.shape());
    for t in (1..=sched.steps()).rev() {
        let eps_hat = predictor.predict(&x, t, cond)?;
        let z = match rng.as_deref_mut() {
            Some(r) if t > 1 => gaussian(x.shape(), r),
            _ => zero.clone(),
        };
        x = reverse_step(&x, t, &eps_hat, sched, &z)?;
    }
    if !x.all_finite() {
        return Err(Error::Numerical("sampler produced non-finite values".into()));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn definitional_tables() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2, 0.3]).unwrap();
        let want_a = [0.9, 0.8, 0.7];
        let want_ab = [0.9, 0.72, 0.504];
        for t in 1..=3 {
            assert!((s.alpha(t).unwrap() - want_a[t - 1]).abs() < 1e-15);
            assert!((s.alpha_bar(t).unwrap() - want_ab[t - 1]).abs() < 1e-15);
            assert!((s.sigma(t).unwrap() - s.beta(t).unwrap().sqrt()).abs() < 1e-15);
        }
        let one = NoiseSchedule::linear(1, 0.25, 0.25).unwrap();
        assert_eq!(one.alpha_bar(1).unwrap(), 0.75);
    }

    #[test]
    fn linear_endpoints_inclusive() {
        let s = NoiseSchedule::linear(50, 1e-3, 0.05).unwrap();
        assert_eq!(s.beta(1).unwrap(), 1e-3);
        assert!((s.beta(50).unwrap() - 0.05).abs() < 1e-16);
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(NoiseSchedule::linear(0, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn step_index_is_checked() {
        let s = NoiseSchedule::linear(5, 0.01, 0.1).unwrap();
        let x = NumArray::zeros(&[2, 2]);
        assert!(matches!(forward_sample(&x, 0, &x, &s), Err(Error::Index(_))));
        assert!(matches!(forward_sample(&x, 6, &x, &s), Err(Error::Index(_))));
        assert!(matches!(reverse_step(&x, 0, &x, &s, &x), Err(Error::Index(_))));
    }

    #[test]
    fn noiseless_forward_scales_x0() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let x0 = NumArray::new(vec![1, 3], vec![1.0, -2.0, 0.5]).unwrap();
        let xt = forward_sample(&x0, 7, &NumArray::zeros(&[1, 3]), &s).unwrap();
        let c = s.alpha_bar(7).unwrap().sqrt();
        for (a, b) in xt.data().iter().zip(x0.data()) {
            assert_eq!(*a, c * b);
        }
    }

    #[test]
    fn long_schedule_forgets_x0() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let ab = s.alpha_bar(1000).unwrap();
        assert!(ab < 1e-4 && ab.sqrt() < 0.01);
        let x0 = NumArray::full(&[1, 4], 3.0);
        let eps = NumArray::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let xt = forward_sample(&x0, 1000, &eps, &s).unwrap();
        assert!(xt.max_abs_diff(&eps) < 0.03);
    }

    #[test]
    fn zero_prediction_reverse_step() {
        let s = NoiseSchedule::linear(10, 0.01, 0.2).unwrap();
        let x = NumArray::new(vec![1, 2], vec![0.4, -1.1]).unwrap();
        let z = NumArray::zeros(&[1, 2]);
        let out = reverse_step(&x, 4, &z, &s, &z).unwrap();
        let a = s.alpha(4).unwrap().sqrt();
        assert!((out.data()[0] - 0.4 / a).abs() < 1e-15);
        assert!((out.data()[1] + 1.1 / a).abs() < 1e-15);
    }

    #[test]
    fn one_step_inversion() {
        let s = NoiseSchedule::linear(20, 1e-3, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = gaussian(&[4, 5], &mut rng);
        let eps = gaussian(&[4, 5], &mut rng);
        let x1 = forward_sample(&x0, 1, &eps, &s).unwrap();
        let back = reverse_step(&x1, 1, &eps, &s, &NumArray::zeros(&[4, 5])).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-10);
    }
}
