//! Feature-level metrics for generated listener sequences.
//!
//! * Feature distance: mean absolute difference per channel group
//!   (angle / expression / translation), times 100.
//! * Diversity: per frame and angle channel, the population standard
//!   deviation across samples, averaged over frames and channels.
//! * Attitude separability: two-sided permutation tests on per-sequence
//!   channel means (smile channel: positive vs rest; frown channel:
//!   negative vs rest).
//! * Smoothness: largest frame-to-frame jump over the angle channels.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::dataio::{Attitude, Layout, ANGLE_DIMS};
use crate::error::{Error, Result};
use crate::nn::NumArray;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureDistance {
    pub angle: f64,
    pub exp: f64,
    pub trans: f64,
}

fn group_l1(gen: &NumArray, gt: &NumArray, cols: std::ops::Range<usize>) -> f64 {
    let n = gen.rows() * cols.len();
    let mut s = 0.0;
    for k in 0..gen.rows() {
        let (a, b) = (gen.row(k), gt.row(k));
        for c in cols.clone() {
            s += (a[c] - b[c]).abs();
        }
    }
    100.0 * s / n as f64
}

pub fn feature_distance(gen: &NumArray, gt: &NumArray) -> Result<FeatureDistance> {
    if gen.shape() != gt.shape() || gen.rank() != 2 {
        return Err(Error::Data(format!(
            "feature distance needs equal [n, D] shapes, got {:?} and {:?}",
            gen.shape(),
            gt.shape()
        )));
    }
    let layout = Layout::from_coeff_dims(gen.cols())?;
    Ok(FeatureDistance {
        angle: group_l1(gen, gt, layout.angle()),
        exp: group_l1(gen, gt, layout.expression()),
        trans: group_l1(gen, gt, layout.translation()),
    })
}

pub fn diversity(samples: &[NumArray]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Data(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    let shape = samples[0].shape();
    if samples.iter().any(|s| s.shape() != shape) || samples[0].rank() != 2 || shape[1] < ANGLE_DIMS {
        return Err(Error::Data("diversity needs equal-shape [n, D] samples".into()));
    }
    let n = samples.len() as f64;
    let rows = shape[0];
    let mut total = 0.0;
    for k in 0..rows {
        for c in 0..ANGLE_DIMS {
            // shifted by the first sample so identical samples give exactly 0
            let first = samples[0].get(k, c);
            let mean = samples.iter().map(|s| s.get(k, c) - first).sum::<f64>() / n;
            let var = samples.iter().map(|s| (s.get(k, c) - first - mean).powi(2)).sum::<f64>() / n;
            total += var.sqrt();
        }
    }
    Ok(total / (rows * ANGLE_DIMS) as f64)
}

pub fn smoothness(seq: &NumArray) -> Result<f64> {
    if seq.rank() != 2 || seq.rows() < 2 || seq.cols() < ANGLE_DIMS {
        return Err(Error::Data(format!("smoothness needs at least 2 frames, got {:?}", seq.shape())));
    }
    let mut worst = 0.0f64;
    for k in 1..seq.rows() {
        let (a, b) = (seq.row(k - 1), seq.row(k));
        for c in 0..ANGLE_DIMS {
            worst = worst.max((b[c] - a[c]).abs());
        }
    }
    Ok(worst)
}

/// Outcome of a two-sample permutation test on the difference of means.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationTest {
    /// `mean(a) − mean(b)`.
    pub gap: f64,
    pub p_value: f64,
}

/// Two-sided permutation test with `p = (#{|perm gap| ≥ |observed gap|} + 1) / (n_perm + 1)`.
pub fn permutation_test(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> Result<PermutationTest> {
    if a.is_empty() || b.is_empty() || n_perm == 0 {
        return Err(Error::Data("permutation test needs two non-empty groups".into()));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let gap = mean(a) - mean(b);
    let mut pool: Vec<f64> = a.iter().chain(b).copied().collect();
    // guard against ties that differ only by summation order
    let threshold = gap.abs() * (1.0 - 1e-12);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        pool.shuffle(&mut rng);
        let g = mean(&pool[..a.len()]) - mean(&pool[a.len()..]);
        if g.abs() >= threshold {
            hits += 1;
        }
    }
    Ok(PermutationTest {
        gap,
        p_value: (hits + 1) as f64 / (n_perm + 1) as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Separability {
    /// Smile channel, positive vs the other attitudes.
    pub smile: PermutationTest,
    /// Frown channel, negative vs the other attitudes.
    pub frown: PermutationTest,
}

impl Separability {
    pub fn min_p(&self) -> f64 {
        self.smile.p_value.min(self.frown.p_value)
    }
}

pub const MIN_PER_ATTITUDE: usize = 10;

fn channel_means(seqs: &[&NumArray], col: usize) -> Vec<f64> {
    seqs.iter()
        .map(|s| (0..s.rows()).map(|k| s.get(k, col)).sum::<f64>() / s.rows() as f64)
        .collect()
}

/// Tests whether generated sequences respond to the attitude label. Every
/// attitude present needs at least [`MIN_PER_ATTITUDE`] sequences, and both
/// positive and negative must be present.
pub fn attitude_separability(
    samples: &[(Attitude, NumArray)],
    n_perm: usize,
    seed: u64,
) -> Result<Separability> {
    for att in [Attitude::Positive, Attitude::Neutral, Attitude::Negative] {
        let n = samples.iter().filter(|(a, _)| *a == att).count();
        let required = att != Attitude::Neutral;
        if (required || n > 0) && n < MIN_PER_ATTITUDE {
            return Err(Error::Data(format!(
                "separability needs at least {MIN_PER_ATTITUDE} {att} sequences, got {n}"
            )));
        }
    }
    let layout = Layout::from_coeff_dims(samples[0].1.cols())?;
    let test = |target: Attitude, col: usize, seed: u64| {
        let (inside, rest): (Vec<_>, Vec<_>) = samples.iter().partition(|(a, _)| *a == target);
        let inside: Vec<&NumArray> = inside.into_iter().map(|(_, s)| s).collect();
        let rest: Vec<&NumArray> = rest.into_iter().map(|(_, s)| s).collect();
        permutation_test(&channel_means(&inside, col), &channel_means(&rest, col), n_perm, seed)
    };
    Ok(Separability {
        smile: test(Attitude::Positive, layout.expr(0), seed)?,
        frown: test(Attitude::Negative, layout.expr(1), seed.wrapping_add(1))?,
    })
}

/// Summary metrics; fields that need more samples than were given are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub fd_angle: f64,
    pub fd_exp: f64,
    pub fd_trans: f64,
    pub diversity: Option<f64>,
    pub separability_p: Option<f64>,
    pub smoothness: f64,
    pub n_sequences: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl MetricReport {
    pub const TSV_HEADER: &'static str = "fd_angle\tfd_exp\tfd_trans\tdiversity\tseparability_p\tsmoothness\tn_sequences";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\n{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            Self::TSV_HEADER,
            self.fd_angle,
            self.fd_exp,
            self.fd_trans,
            opt(self.diversity),
            opt(self.separability_p),
            self.smoothness,
            self.n_sequences
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "sequences:            {}", self.n_sequences).unwrap();
        writeln!(
            s,
            "feature distance x100: angle {:.3}  exp {:.3}  trans {:.3}",
            self.fd_angle, self.fd_exp, self.fd_trans
        )
        .unwrap();
        writeln!(s, "diversity:            {}", opt(self.diversity)).unwrap();
        writeln!(s, "attitude p (min):     {}", opt(self.separability_p)).unwrap();
        writeln!(s, "max angle jump:       {:.5}", self.smoothness).unwrap();
        s
    }
}

/// Line plot of selected channels of `seq` as a standalone SVG document.
pub fn svg_traces(seq: &NumArray, channels: &[(usize, &str)], title: &str) -> Result<String> {
    const W: f64 = 800.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    if seq.rank() != 2 || seq.rows() < 2 {
        return Err(Error::Data("plot needs at least 2 frames".into()));
    }
    if let Some((c, _)) = channels.iter().find(|(c, _)| *c >= seq.cols()) {
        return Err(Error::Index(format!("channel {c} of {}", seq.cols())));
    }
    let values = || channels.iter().flat_map(|&(c, _)| (0..seq.rows()).map(move |k| seq.get(k, c)));
    let lo = values().fold(f64::INFINITY, f64::min);
    let hi = values().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |k: usize| PAD + (W - 2.0 * PAD) * k as f64 / (seq.rows() - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title)).unwrap();
    writeln!(
        s,
        r##"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="#888"/>"##,
        H - PAD,
        W - PAD,
        H - PAD
    )
    .unwrap();
    writeln!(s, r##"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="#888"/>"##, H - PAD).unwrap();
    writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{lo:.3}</text>"#, H - PAD).unwrap();
    writeln!(s, r#"<text x="4" y="{}" font-family="sans-serif" font-size="10">{hi:.3}</text>"#, PAD + 4.0).unwrap();
    for (i, &(c, label)) in channels.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = (0..seq.rows()).map(|k| format!("{:.2},{:.2}", x(k), y(seq.get(k, c)))).collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 14.0 * i as f64,
            escape(label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
