mod common;

use common::*;
use listendiff::dataio::{gen_pairs, identity_pool, window_starts, Attitude, Dataset};
use listendiff::diffusion::noise_loss;
use listendiff::eval::diversity;
use listendiff::nn::{adam_step, AdamState, NumArray, ParamSet};
use listendiff::pipeline::{
    blend_weights, checkpoint_name, concat_windows, conditioning, split_windows, stitch_windows, train,
    untrained_model, Generator, RunConfig, SampleMode, FINAL_CHECKPOINT, LOSS_FILE,
};
use listendiff::Error;
use proptest::prelude::*;

#[test]
fn window_examples() {
    assert_eq!(window_starts(100, 40, 20).unwrap(), vec![0, 20, 40, 60]);
    assert_eq!(window_starts(105, 40, 20).unwrap(), vec![0, 20, 40, 60, 65]);
    assert_eq!(window_starts(40, 40, 20).unwrap(), vec![0]);
    assert_eq!(window_starts(41, 40, 40).unwrap(), vec![0, 1]);
    assert!(window_starts(39, 40, 20).is_err());
    assert!(window_starts(100, 40, 41).is_err());
    let seq = NumArray::new(vec![105, 2], (0..210).map(|v| v as f64).collect()).unwrap();
    let (clips, starts) = split_windows(&seq, 40, 20).unwrap();
    for (c, &s) in clips.iter().zip(&starts) {
        assert_eq!(c.shape(), &[40, 2]);
        assert_eq!(c.row(0), seq.row(s));
    }
}

#[test]
fn gaps_are_reported() {
    let clip = NumArray::zeros(&[10, 2]);
    match stitch_windows(&[clip.clone(), clip.clone()], &[0, 12], 22) {
        Err(Error::StitchGap { start: 10, end: 12 }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(stitch_windows(&[clip.clone()], &[0], 12), Err(Error::StitchGap { start: 10, end: 12 })));
}

fn clip_set(seed: u64, len: usize, window: usize, stride: usize, channels: usize) -> (Vec<NumArray>, Vec<usize>) {
    let mut r = rng(seed);
    let starts = window_starts(len, window, stride).unwrap();
    let clips = starts.iter().map(|_| uniform(&[window, channels], -1.0, 1.0, &mut r)).collect();
    (clips, starts)
}

fn max_jump(seq: &NumArray) -> f64 {
    (1..seq.rows())
        .flat_map(|k| (0..seq.cols()).map(move |c| (seq.get(k, c) - seq.get(k - 1, c)).abs()))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn stitching_is_a_partition_of_unity(
        seed in any::<u64>(), window in 2usize..30, frac in 0.05f64..1.0, extra in 0usize..80,
    ) {
        let stride = ((window as f64 * frac).ceil() as usize).clamp(1, window);
        let len = window + extra;
        let (clips, starts) = clip_set(seed, len, window, stride, 3);
        let out = stitch_windows(&clips, &starts, len).unwrap();
        prop_assert_eq!(out.shape(), &[len, 3]);
        let lens = vec![window; starts.len()];
        let weights = blend_weights(&lens, &starts, len).unwrap();
        for (k, frame) in weights.iter().enumerate() {
            let total: f64 = frame.iter().map(|(_, w)| w).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12, "frame {} sums to {}", k, total);
            prop_assert!(frame.iter().all(|&(_, w)| w > 0.0 && w <= 1.0));
            for c in 0..3 {
                let vals: Vec<f64> = frame.iter().map(|&(i, _)| clips[i].get(k - starts[i], c)).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.get(k, c) >= lo - 1e-12 && out.get(k, c) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn clips_of_one_sequence_stitch_back_to_it(
        seed in any::<u64>(), window in 2usize..30, frac in 0.05f64..1.0, extra in 0usize..80,
    ) {
        let stride = ((window as f64 * frac).ceil() as usize).clamp(1, window);
        let seq = uniform(&[window + extra, 2], -5.0, 5.0, &mut rng(seed));
        let (clips, starts) = split_windows(&seq, window, stride).unwrap();
        let out = stitch_windows(&clips, &starts, seq.rows()).unwrap();
        prop_assert!(out.max_abs_diff(&seq) <= 1e-12);
    }

    #[test]
    fn crossfade_jump_bound(seed in any::<u64>(), half in 2usize..15, count in 2usize..6) {
        // stride >= window/2 and no tail: every frame is covered at most twice
        let window = 2 * half;
        let stride = half + (seed % half as u64) as usize;
        // where two overlaps touch, one frame carries residue of both gaps
        let touching = if stride == half { 2.0 } else { 1.0 };
        let len = window + (count - 1) * stride;
        let mut r = rng(seed);
        let starts: Vec<usize> = (0..count).map(|i| i * stride).collect();
        // smooth clips with a per-clip offset
        let clips: Vec<NumArray> = (0..count)
            .map(|_| {
                let offset = uniform(&[1], -1.0, 1.0, &mut r).data()[0];
                let steps = uniform(&[window, 2], -0.05, 0.05, &mut r);
                let mut acc = vec![offset; 2];
                let rows: Vec<Vec<f64>> = (0..window)
                    .map(|k| {
                        for c in 0..2 { acc[c] += steps.get(k, c); }
                        acc.clone()
                    })
                    .collect();
                NumArray::from_rows(&rows).unwrap()
            })
            .collect();
        let out = stitch_windows(&clips, &starts, len).unwrap();
        let intra = clips.iter().map(max_jump).fold(0.0, f64::max);
        let m = window - stride;
        let mut gap: f64 = 0.0;
        for i in 1..count {
            for j in 0..m {
                for c in 0..2 {
                    gap = gap.max((clips[i - 1].get(stride + j, c) - clips[i].get(j, c)).abs());
                }
            }
        }
        prop_assert!(max_jump(&out) <= intra + touching * gap / (m + 1) as f64 + 1e-12);
        let hard = concat_windows(&clips, &starts, len).unwrap();
        prop_assert!(max_jump(&out) <= max_jump(&hard) + 1e-12);
    }
}

fn tiny_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 11;
    cfg.data.expr_dims = 2;
    cfg.data.id_dims = 4;
    cfg.data.min_len = 16;
    cfg.data.max_len = 24;
    cfg.data.listeners = 3;
    cfg.schedule.steps = 10;
    cfg.model.layers = 1;
    cfg.model.heads = 2;
    cfg.model.width = 8;
    cfg.train.window = 8;
    cfg.train.stride = 4;
    cfg.train.batch = 4;
    cfg.train.epochs = 3;
    cfg.train.lr = 3e-3;
    cfg
}

fn tiny_data(cfg: &RunConfig, count: usize) -> Dataset {
    let synth = cfg.synth();
    let pool = identity_pool(&synth, &mut rng(1));
    Dataset::from_pairs(gen_pairs(&synth, count, cfg.train.window, &pool, &mut rng(2)).unwrap()).unwrap()
}

fn bytes(path: &std::path::Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn zero_epochs_keeps_the_initialization() {
    let mut cfg = tiny_run();
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    let report = train(&cfg, &tiny_data(&cfg, 6), dir.path(), &mut |_| {}).unwrap();
    assert_eq!(report.steps, 0);
    let saved = ParamSet::load(&report.final_checkpoint).unwrap();
    assert_eq!(saved, untrained_model(&cfg).unwrap().params);
    assert_eq!(bytes(&report.final_checkpoint), bytes(&dir.path().join(checkpoint_name(0))));
}

#[test]
fn same_seed_same_bits_and_resume_matches() {
    let cfg = tiny_run();
    let data = tiny_data(&cfg, 6);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = train(&cfg, &data, a.path(), &mut |_| {}).unwrap();
    train(&cfg, &data, b.path(), &mut |_| {}).unwrap();
    for e in 0..=3 {
        assert_eq!(bytes(&a.path().join(checkpoint_name(e))), bytes(&b.path().join(checkpoint_name(e))));
    }
    assert_eq!(bytes(&a.path().join(LOSS_FILE)), bytes(&b.path().join(LOSS_FILE)));

    let mut short = cfg.clone();
    short.train.epochs = 2;
    train(&short, &data, c.path(), &mut |_| {}).unwrap();
    let mut resumed = cfg.clone();
    resumed.train.resume = c.path().join(checkpoint_name(2));
    let rc = train(&resumed, &data, c.path(), &mut |_| {}).unwrap();
    assert_eq!(rc.steps, ra.steps);
    assert_eq!(bytes(&a.path().join(FINAL_CHECKPOINT)), bytes(&c.path().join(FINAL_CHECKPOINT)));
    assert_eq!(bytes(&a.path().join(LOSS_FILE)), bytes(&c.path().join(LOSS_FILE)));

    let mut other = cfg.clone();
    other.seed = 12;
    let d = tempfile::tempdir().unwrap();
    train(&other, &data, d.path(), &mut |_| {}).unwrap();
    assert_ne!(bytes(&a.path().join(FINAL_CHECKPOINT)), bytes(&d.path().join(FINAL_CHECKPOINT)));
}

#[test]
fn non_finite_loss_stops_training() {
    let cfg = tiny_run();
    let mut data = tiny_data(&cfg, 6);
    for pair in &mut data.pairs {
        pair.listener.set(3, 0, f64::NAN);
    }
    let dir = tempfile::tempdir().unwrap();
    match train(&cfg, &data, dir.path(), &mut |_| {}) {
        Err(Error::Numerical(msg)) => {
            assert!(msg.contains("at step 1"), "{msg}");
            assert!(msg.contains("learning rate 0.003"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn untrained_loss_is_near_one_and_falls() {
    let cfg = tiny_run();
    let data = tiny_data(&cfg, 12);
    let sched = cfg.schedule().unwrap();
    let mut model = untrained_model(&cfg).unwrap();
    let mut state = AdamState::new(&model.params, cfg.adam()).unwrap();
    let refs = data.windows(cfg.train.window, cfg.train.stride).unwrap();
    let windows: Vec<_> = refs.iter().map(|&w| data.window(w, cfg.train.window)).collect();
    let mut r = rng(3);
    let mut losses = Vec::new();
    for step in 0..200 {
        let w = &windows[step % windows.len()];
        let l = noise_loss(&model, &w.listener, &conditioning(w), &sched, &mut r).unwrap();
        adam_step(&mut model.params, &l.grads, &mut state).unwrap();
        losses.push(l.loss);
    }
    let head = losses[..20].iter().sum::<f64>() / 20.0;
    let tail = losses[180..].iter().sum::<f64>() / 20.0;
    assert!((0.5..=2.0).contains(&head), "initial loss {head}");
    assert!(tail < head, "loss went from {head} to {tail}");
}

fn tiny_generator(cfg: &RunConfig) -> Generator {
    Generator::new(
        untrained_model(cfg).unwrap(),
        cfg.schedule().unwrap(),
        cfg.train.window,
        cfg.train.stride,
    )
}

#[test]
fn generation_is_seeded_and_covers_the_speaker() {
    let cfg = tiny_run();
    let data = tiny_data(&cfg, 3);
    let gen = tiny_generator(&cfg);
    let pair = &data.pairs[0];
    let a = gen.generate_one(pair, Attitude::Positive, 5).unwrap();
    let b = gen.generate_one(pair, Attitude::Positive, 5).unwrap();
    assert_eq!(a.shape(), pair.listener.shape());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let runs = gen.generate(pair, Attitude::Positive, 5, 9, "x").unwrap();
    assert_eq!(runs.len(), 5);
    for i in 0..5 {
        assert_eq!(runs[i].listener.rows(), pair.len());
        for j in i + 1..5 {
            assert!(runs[i].listener.max_abs_diff(&runs[j].listener) > 0.0);
        }
    }
    assert!(gen.generate(pair, Attitude::Positive, 0, 9, "x").is_err());
}

#[test]
fn deterministic_mode_has_no_diversity() {
    let cfg = tiny_run();
    let data = tiny_data(&cfg, 3);
    let mut gen = tiny_generator(&cfg);
    gen.mode = SampleMode::Deterministic;
    let runs = gen.generate(&data.pairs[1], Attitude::Negative, 4, 9, "x").unwrap();
    let seqs: Vec<NumArray> = runs.into_iter().map(|r| r.listener).collect();
    assert_eq!(diversity(&seqs).unwrap(), 0.0);
    gen.mode = SampleMode::Ancestral;
    let runs = gen.generate(&data.pairs[1], Attitude::Negative, 4, 9, "x").unwrap();
    let seqs: Vec<NumArray> = runs.into_iter().map(|r| r.listener).collect();
    assert!(diversity(&seqs).unwrap() > 0.0);
}

#[test]
fn crossfade_ramps_between_constant_clips() {
    let (a, b) = (NumArray::zeros(&[40, 1]), NumArray::full(&[40, 1], 1.0));
    let out = stitch_windows(&[a, b], &[0, 20], 60).unwrap();
    for j in 0..20 {
        assert!((out.get(20 + j, 0) - (j + 1) as f64 / 21.0).abs() < 1e-15);
    }
    assert_eq!(out.get(19, 0), 0.0);
    assert_eq!(out.get(40, 0), 1.0);
    let same = uniform(&[40, 3], -1.0, 1.0, &mut rng(4));
    let shifted = NumArray::from_rows(&(0..40).map(|k| same.row((k + 20).min(39)).to_vec()).collect::<Vec<_>>()).unwrap();
    let out = stitch_windows(&[same.clone(), shifted], &[0, 20], 60).unwrap();
    for k in 20..40 {
        for c in 0..3 {
            assert!((out.get(k, c) - same.get(k, c)).abs() < 1e-15);
        }
    }
}
