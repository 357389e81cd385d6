use super::params::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ParamSet,
    pub v: ParamSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Result<Self> {
        let ok = config.lr > 0.0
            && config.eps > 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2);
        if !ok {
            return Err(Error::Config(format!("invalid Adam hyperparameters {config:?}")));
        }
        Ok(Self {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        })
    }

    /// Packs moments and step counter into one set (`m/…`, `v/…`, `step`) for checkpointing.
    pub fn to_param_set(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, v) in self.m.iter() {
            out.insert(format!("m/{k}"), v.clone());
        }
        for (k, v) in self.v.iter() {
            out.insert(format!("v/{k}"), v.clone());
        }
        out.insert("step", super::NumArray::scalar(self.step as f64));
        out
    }

    pub fn from_param_set(packed: &ParamSet, params: &ParamSet, config: AdamConfig) -> Result<Self> {
        let mut state = Self::new(params, config)?;
        for name in params.names() {
            state.m.insert(name.clone(), packed.require(&format!("m/{name}"))?.clone());
            state.v.insert(name.clone(), packed.require(&format!("v/{name}"))?.clone());
        }
        params.check_layout(&state.m)?;
        params.check_layout(&state.v)?;
        state.step = packed.require("step")?.data()[0] as u64;
        Ok(state)
    }
}

/// One Adam update of `params` in place using `lr` from `state.config`.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<()> {
    for name in params.names() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let p = params.get(name).expect("name from params");
        if g.shape() != p.shape() {
            return Err(Error::dims("adam_step", p.shape(), g.shape()));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let g = grads.get(&name).expect("checked above").data();
        let m = state.m.get_mut(&name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        m.data_mut()
            .iter_mut()
            .zip(g)
            .for_each(|(m, &g)| *m = beta1 * *m + (1.0 - beta1) * g);
        let v = state.v.get_mut(&name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
        v.data_mut()
            .iter_mut()
            .zip(g)
            .for_each(|(v, &g)| *v = beta2 * *v + (1.0 - beta2) * g * g);

        let m = state.m.get(&name).unwrap().data();
        let v = state.v.get(&name).unwrap().data();
        let p = params.get_mut(&name).unwrap();
        for ((p, &m), &v) in p.data_mut().iter_mut().zip(m).zip(v) {
            let mhat = m / bc1;
            let vhat = v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
