mod common;

use common::*;
use listendiff::dataio::Attitude;
use listendiff::diffusion::gaussian;
use listendiff::eval::{
    attitude_separability, diversity, feature_distance, permutation_test, smoothness, svg_traces, MetricReport,
};
use listendiff::nn::NumArray;
use listendiff::pipeline::{concat_windows, stitch_windows};
use proptest::prelude::*;

fn normals(n: usize, shift: f64, r: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    gaussian(&[n], r).data().iter().map(|v| v + shift).collect()
}

#[test]
fn permutation_test_is_calibrated_under_the_null() {
    let mut r = rng(1);
    let reps = 100;
    let rejections = (0..reps)
        .filter(|&i| {
            let a = normals(20, 0.0, &mut r);
            let b = normals(20, 0.0, &mut r);
            permutation_test(&a, &b, 1000, i).unwrap().p_value < 0.05
        })
        .count();
    let rate = rejections as f64 / reps as f64;
    assert!((0.01..=0.12).contains(&rate), "null rejection rate {rate}");
}

#[test]
fn permutation_test_detects_a_shift() {
    let mut r = rng(2);
    let a = normals(20, 0.6, &mut r);
    let b = normals(20, -0.6, &mut r);
    let t = permutation_test(&a, &b, 10_000, 3).unwrap();
    assert!(t.p_value < 1e-3, "{t:?}");
    assert!(t.gap > 0.0);
    // the floor is 1/(n+1)
    assert!(t.p_value >= 1.0 / 10_001.0);
}

#[test]
fn permutation_p_is_exact_for_tiny_groups() {
    // {0} vs {1}: both orderings give |gap| = 1, so every permutation hits
    assert_eq!(permutation_test(&[0.0], &[1.0], 99, 0).unwrap().p_value, 1.0);
    assert!(permutation_test(&[], &[1.0], 10, 0).is_err());
}

fn seq(rows: usize, cols: usize, seed: u64) -> NumArray {
    uniform(&[rows, cols], -1.0, 1.0, &mut rng(seed))
}

#[test]
fn feature_distance_known_values() {
    let a = NumArray::zeros(&[4, 10]);
    let mut b = NumArray::zeros(&[4, 10]);
    for k in 0..4 {
        b.set(k, 0, 0.03);
        b.set(k, 5, -0.5);
    }
    let fd = feature_distance(&a, &b).unwrap();
    assert!((fd.angle - 1.0).abs() < 1e-12);
    assert!((fd.exp - 12.5).abs() < 1e-12);
    assert_eq!(fd.trans, 0.0);
    assert!(feature_distance(&a, &NumArray::zeros(&[5, 10])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_distance_is_a_metric(s in any::<u64>(), rows in 1usize..20) {
        let (a, b, c) = (seq(rows, 12, s), seq(rows, 12, s ^ 1), seq(rows, 12, s ^ 2));
        let ab = feature_distance(&a, &b).unwrap();
        let ba = feature_distance(&b, &a).unwrap();
        let bc = feature_distance(&b, &c).unwrap();
        let ac = feature_distance(&a, &c).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(feature_distance(&a, &a).unwrap().exp, 0.0);
        prop_assert!(ac.angle <= ab.angle + bc.angle + 1e-12);
        prop_assert!(ac.exp <= ab.exp + bc.exp + 1e-12);
        prop_assert!(ac.trans <= ab.trans + bc.trans + 1e-12);
    }

    #[test]
    fn diversity_ignores_sample_order(s in any::<u64>(), n in 2usize..7) {
        let samples: Vec<NumArray> = (0..n as u64).map(|i| seq(8, 10, s.wrapping_add(i))).collect();
        let mut shuffled = samples.clone();
        shuffled.reverse();
        shuffled.rotate_left(1);
        let (d1, d2) = (diversity(&samples).unwrap(), diversity(&shuffled).unwrap());
        prop_assert!((d1 - d2).abs() < 1e-12);
        prop_assert!(d1 > 0.0);
    }

    #[test]
    fn stitched_is_no_rougher_than_hard_cuts(s in any::<u64>()) {
        let mut r = rng(s);
        let starts = vec![0, 20, 40, 60];
        let clips: Vec<NumArray> = starts.iter().map(|_| {
            let base = uniform(&[1, 9], -1.0, 1.0, &mut r);
            let mut c = NumArray::zeros(&[40, 9]);
            for k in 0..40 {
                for ch in 0..9 {
                    c.set(k, ch, base.get(0, ch) + 0.01 * k as f64);
                }
            }
            c
        }).collect();
        let soft = stitch_windows(&clips, &starts, 100).unwrap();
        let hard = concat_windows(&clips, &starts, 100).unwrap();
        prop_assert!(smoothness(&soft).unwrap() <= smoothness(&hard).unwrap() + 1e-12);
    }
}

#[test]
fn diversity_of_identical_and_known_samples() {
    let a = seq(6, 9, 4);
    assert_eq!(diversity(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
    // two samples at ±1 in every angle channel: population std 1
    let plus = NumArray::full(&[3, 9], 1.0);
    let minus = NumArray::full(&[3, 9], -1.0);
    assert!((diversity(&[plus, minus]).unwrap() - 1.0).abs() < 1e-15);
    assert!(diversity(&[a]).is_err());
}

#[test]
fn smoothness_reads_angle_channels_only() {
    let mut s = NumArray::zeros(&[3, 9]);
    s.set(1, 2, 0.25);
    s.set(2, 5, 9.0);
    assert_eq!(smoothness(&s).unwrap(), 0.25);
    assert!(smoothness(&NumArray::zeros(&[1, 9])).is_err());
}

#[test]
fn separability_on_labelled_shifts() {
    let mut r = rng(5);
    let mut samples = Vec::new();
    for att in [Attitude::Positive, Attitude::Neutral, Attitude::Negative] {
        for _ in 0..10 {
            let mut s = uniform(&[20, 10], -0.1, 0.1, &mut r);
            let (smile, frown) = match att {
                Attitude::Positive => (0.3, 0.0),
                Attitude::Negative => (-0.3, -0.3),
                Attitude::Neutral => (0.0, 0.0),
            };
            for k in 0..20 {
                s.set(k, 3, s.get(k, 3) + smile);
                s.set(k, 4, s.get(k, 4) + frown);
            }
            samples.push((att, s));
        }
    }
    let sep = attitude_separability(&samples, 2000, 6).unwrap();
    assert!(sep.smile.p_value < 0.01 && sep.frown.p_value < 0.01, "{sep:?}");
    assert!(sep.smile.gap > 0.0 && sep.frown.gap < 0.0);

    assert!(attitude_separability(&samples[..15], 100, 0).is_err());
}

#[test]
fn report_writes_na_for_missing_metrics() {
    let r = MetricReport {
        fd_angle: 1.0,
        fd_exp: 2.0,
        fd_trans: 3.0,
        diversity: None,
        separability_p: Some(0.5),
        smoothness: 0.1,
        n_sequences: 4,
    };
    let tsv = r.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], MetricReport::TSV_HEADER);
    assert_eq!(lines[1], "1\t2\t3\tNA\t0.5\t0.1\t4");
    let svg = svg_traces(&seq(30, 9, 8), &[(0, "pitch"), (3, "smile")], "demo").unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(svg.contains("pitch") && svg.trim_end().ends_with("</svg>"));
}
