//! Central-difference verification of tape gradients.

use rand::RngExt;

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Parameters with more coordinates than this are spot-checked.
pub const FULL_CHECK_LIMIT: usize = 200;
/// Coordinates sampled per spot-checked parameter.
pub const SAMPLED_COORDS: usize = 64;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

/// Compares analytic gradients from `f` with central differences
/// `(f(p+h) − f(p−h)) / 2h`.
///
/// `f` returns the loss and its gradient for every parameter. The relative
/// error per coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &ParamSet, h: f64, rng: &mut impl rand::Rng) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!("step h={h} outside [1e-6, 1e-4]")));
    }
    let (f0, grads) = f(params)?;
    let (f1, _) = f(params)?;
    if f0.to_bits() != f1.to_bits() {
        return Err(Error::Numerical(format!(
            "function is not deterministic: {f0} then {f1}"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.clone()))?;
        let n = value.len();
        let coords: Vec<usize> = if n > FULL_CHECK_LIMIT {
            (0..SAMPLED_COORDS).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        for i in coords {
            let orig = value.data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let (fp, _) = f(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let (fm, _) = f(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;

            let numeric = (fp - fm) / (2.0 * h);
            let analytic = g.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((name.clone(), i));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
