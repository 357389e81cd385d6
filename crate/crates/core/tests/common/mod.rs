#![allow(dead_code)]

use listendiff::dataio::Attitude;
use listendiff::diffusion::gaussian;
use listendiff::fam::{Conditioning, FamConfig};
use listendiff::nn::NumArray;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> NumArray {
    let n = shape.iter().product();
    NumArray::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn to_rows(a: &NumArray) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|r| a.row(r).to_vec()).collect()
}

pub fn matmul_loops(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i][p] * b[p][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Literal evaluation of `Softmax(Q·Wq·(K·Wk)ᵀ/√C)·V·Wv` with explicit loops.
pub fn attention_loops(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let qp = matmul_loops(q, wq);
    let kp = matmul_loops(k, wk);
    let vp = matmul_loops(v, wv);
    let c = qp[0].len() as f64;
    let mut weights = Vec::new();
    for qi in &qp {
        let logits: Vec<f64> = kp
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / c.sqrt())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        weights.push(e.iter().map(|x| x / z).collect::<Vec<f64>>());
    }
    let out = matmul_loops(&weights, &vp);
    (out, weights)
}

pub fn cols(m: &[Vec<f64>], a: usize, b: usize) -> Vec<Vec<f64>> {
    m.iter().map(|r| r[a..b].to_vec()).collect()
}

/// Head-by-head oracle: slice each projection matrix by columns, attend,
/// concatenate, then apply the output projection.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_loops(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    wo: &[Vec<f64>],
    bo: &[f64],
    heads: usize,
) -> Vec<Vec<f64>> {
    let width = wq[0].len();
    let hd = width / heads;
    let mut cat = vec![Vec::new(); q.len()];
    for h in 0..heads {
        let (a, b) = (h * hd, (h + 1) * hd);
        let (o, _) = attention_loops(q, k, v, &cols(wq, a, b), &cols(wk, a, b), &cols(wv, a, b));
        for (row, part) in cat.iter_mut().zip(o) {
            row.extend(part);
        }
    }
    let mut out = matmul_loops(&cat, wo);
    for row in &mut out {
        for (x, b) in row.iter_mut().zip(bo) {
            *x += b;
        }
    }
    out
}

pub fn layer_norm_loops(x: &[Vec<f64>], scale: &[f64], shift: &[f64], eps: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * scale[i] + shift[i])
                .collect()
        })
        .collect()
}

pub fn max_diff(a: &[Vec<f64>], b: &NumArray) -> f64 {
    assert_eq!(a.len(), b.rows());
    a.iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (v - b.get(i, j)).abs()))
        .fold(0.0, f64::max)
}

pub fn tiny_config() -> FamConfig {
    FamConfig {
        layers: 2,
        heads: 2,
        width: 16,
        coeff_dim: 3,
        id_dim: 4,
        audio_dim: 5,
        steps: 10,
        time_additive: true,
        attitude_additive: true,
        positional: true,
    }
}

pub fn random_conditioning(cfg: &FamConfig, len: usize, rng: &mut impl Rng) -> Conditioning {
    Conditioning {
        speaker_visual: gaussian(&[len, cfg.coeff_dim], rng),
        speaker_audio: gaussian(&[len, cfg.audio_dim], rng),
        identity: gaussian(&[cfg.id_dim], rng),
        attitude: Attitude::Neutral,
    }
}
