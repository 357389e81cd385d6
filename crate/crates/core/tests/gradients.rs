mod common;

use common::*;
use listendiff::nn::{
    grad_check, linear, multi_head, residual_norm, scaled_attention, MultiHeadVars, NumArray, ParamSet, Tape, Var,
};
use listendiff::Result;
use proptest::prelude::*;

/// Checks `loss = mse(op(params), target)` against central differences.
fn check_op(
    name: &str,
    inputs: &[(&str, NumArray)],
    tol: f64,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let mut r = rng(name.len() as u64);
    let mut params = ParamSet::new();
    for (n, v) in inputs {
        params.insert(*n, v.clone());
    }
    let target = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|(n, v)| tape.param(n, v)).collect();
        let out = op(&mut tape, &vars).unwrap();
        uniform(tape.value(out).shape(), -1.0, 1.0, &mut r)
    };
    let f = |p: &ParamSet| -> Result<(f64, ParamSet)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|(n, _)| tape.param(n, p.require(n).unwrap())).collect();
        let out = op(&mut tape, &vars)?;
        let t = tape.constant(target.clone());
        let loss = tape.mse(out, t)?;
        Ok((tape.value(loss).data()[0], tape.backward(loss)?.params()))
    };
    let report = grad_check(f, &params, 1e-5, &mut r).unwrap();
    assert!(
        report.max_rel_error < tol,
        "{name}: max relative error {:.3e} at {:?}",
        report.max_rel_error,
        report.worst
    );
}

fn u(shape: &[usize], seed: u64) -> NumArray {
    uniform(shape, -1.0, 1.0, &mut rng(seed))
}

#[test]
fn elementary_ops() {
    check_op("matmul", &[("a", u(&[3, 4], 1)), ("b", u(&[4, 2], 2))], 1e-5, |t, v| t.matmul(v[0], v[1]));
    check_op("matmul_nt", &[("a", u(&[3, 4], 3)), ("b", u(&[5, 4], 4))], 1e-5, |t, v| t.matmul_nt(v[0], v[1]));
    check_op("add_row", &[("x", u(&[3, 4], 5)), ("b", u(&[4], 6))], 1e-5, |t, v| t.add_row(v[0], v[1]));
    check_op("mul_row", &[("x", u(&[3, 4], 7)), ("g", u(&[1, 4], 8))], 1e-5, |t, v| t.mul_row(v[0], v[1]));
    check_op("add", &[("a", u(&[2, 3], 9)), ("b", u(&[2, 3], 10))], 1e-5, |t, v| t.add(v[0], v[1]));
    check_op("sub", &[("a", u(&[2, 3], 11)), ("b", u(&[2, 3], 12))], 1e-5, |t, v| t.sub(v[0], v[1]));
    check_op("scale", &[("a", u(&[2, 3], 13))], 1e-5, |t, v| Ok(t.scale(v[0], -2.5)));
    check_op("gelu", &[("a", u(&[3, 5], 14))], 1e-5, |t, v| Ok(t.gelu(v[0])));
    check_op("slice_cols", &[("a", u(&[3, 6], 15))], 1e-5, |t, v| t.slice_cols(v[0], 1, 4));
    check_op("concat_cols", &[("a", u(&[3, 2], 16)), ("b", u(&[3, 4], 17))], 1e-5, |t, v| {
        t.concat_cols(&[v[0], v[1]])
    });
    check_op("concat_rows", &[("a", u(&[2, 3], 18)), ("b", u(&[1, 3], 19))], 1e-5, |t, v| {
        t.concat_rows(&[v[0], v[1]])
    });
    check_op("sum", &[("a", u(&[2, 3], 20))], 1e-5, |t, v| {
        let s = t.sum(v[0]);
        Ok(s)
    });
}

#[test]
fn normalization_ops() {
    check_op("normalize", &[("x", u(&[4, 5], 21))], 1e-5, |t, v| t.normalize(v[0], 1e-5));
    check_op(
        "layer_norm",
        &[("x", u(&[4, 5], 22)), ("s", u(&[5], 23)), ("b", u(&[5], 24))],
        1e-5,
        |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
    );
    check_op(
        "residual_norm",
        &[("x", u(&[3, 4], 25)), ("y", u(&[3, 4], 26)), ("s", u(&[4], 27)), ("b", u(&[4], 28))],
        1e-5,
        |t, v| residual_norm(t, v[0], v[1], v[2], v[3]),
    );
}

#[test]
fn softmax_ops() {
    check_op("softmax", &[("x", u(&[3, 5], 29))], 1e-5, |t, v| t.softmax_rows(v[0]));
    // near saturation
    let hot = u(&[2, 4], 30).map(|x| 8.0 * x);
    check_op("softmax_saturated", &[("x", hot)], 1e-4, |t, v| t.softmax_rows(v[0]));
}

#[test]
fn layer_ops() {
    check_op("linear", &[("x", u(&[3, 4], 31)), ("w", u(&[4, 2], 32)), ("b", u(&[2], 33))], 1e-5, |t, v| {
        linear(t, v[0], v[1], v[2])
    });
    check_op(
        "scaled_attention",
        &[
            ("q", u(&[3, 4], 34)),
            ("k", u(&[5, 4], 35)),
            ("wq", u(&[4, 3], 36)),
            ("wk", u(&[4, 3], 37)),
            ("wv", u(&[4, 3], 38)),
        ],
        1e-5,
        |t, v| Ok(scaled_attention(t, v[0], v[1], v[1], v[2], v[3], v[4])?.0),
    );
    check_op(
        "multi_head",
        &[
            ("x", u(&[4, 6], 39)),
            ("m", u(&[5, 6], 40)),
            ("wq", u(&[6, 6], 41)),
            ("wk", u(&[6, 6], 42)),
            ("wv", u(&[6, 6], 43)),
            ("wo", u(&[6, 6], 44)),
            ("bo", u(&[6], 45)),
        ],
        1e-5,
        |t, v| {
            let p = MultiHeadVars {
                wq: v[2],
                wk: v[3],
                wv: v[4],
                wo: v[5],
                bo: v[6],
            };
            Ok(multi_head(t, v[0], v[1], v[1], 3, &p)?.0)
        },
    );
}

#[test]
fn unused_parameters_get_exact_zero() {
    let mut tape = Tape::new();
    let a = tape.param("used", &u(&[2, 2], 50));
    let _ = tape.param("unused", &u(&[3], 51));
    let s = tape.sum(a);
    let g = tape.backward(s).unwrap().params();
    assert!(g.require("unused").unwrap().data().iter().all(|&x| x == 0.0));
    assert!(g.require("used").unwrap().data().iter().all(|&x| x == 1.0));
}

#[test]
fn forward_passes_are_bitwise_deterministic() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.input(u(&[5, 8], 60));
        let w = tape.input(u(&[8, 8], 61));
        let (out, _) = scaled_attention(&mut tape, x, x, x, w, w, w).unwrap();
        tape.value(out).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 1..8), 1..5),
        shift in -500.0f64..500.0,
    ) {
        let width = rows[0].len();
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
        let x = NumArray::from_rows(&rows).unwrap();
        let shifted = x.map(|v| v + shift);
        let mut tape = Tape::new();
        let (a, b) = (tape.input(x), tape.input(shifted));
        let (sa, sb) = (tape.softmax_rows(a).unwrap(), tape.softmax_rows(b).unwrap());
        let (sa, sb) = (tape.value(sa), tape.value(sb));
        for r in 0..sa.rows() {
            let total: f64 = sa.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(sa.row(r).iter().all(|&p| p >= 0.0));
        }
        prop_assert!(sa.max_abs_diff(sb) <= 1e-12);
    }

    #[test]
    fn layer_norm_rows_are_standardized(row in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        let spread = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - row.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 0.5);
        let d = row.len();
        let mut tape = Tape::new();
        let x = tape.input(NumArray::from_rows(&[row]).unwrap());
        let s = tape.input(NumArray::full(&[d], 1.0));
        let b = tape.input(NumArray::zeros(&[d]));
        let y = tape.layer_norm(x, s, b, 1e-5).unwrap();
        let y = tape.value(y).row(0).to_vec();
        let mean = y.iter().sum::<f64>() / d as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-4);
    }
}
