//! Command-line front end.
//!
//! Every command resolves one [`RunConfig`] (file, then `key=value`
//! overrides, then dedicated flags), logs it to stderr, and maps failures to
//! a single `error kind=... code=... message="..."` line with exit code
//! 2 (config), 3 (data) or 4 (numerical).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataio::{
    gen_pairs, identity_pool, read_sequence, write_dataset, Attitude, Dataset, DialoguePair, ATTITUDES,
};
use crate::diffusion::{gaussian, noise_loss_at, NoiseSchedule};
use crate::error::{Error, Result};
use crate::eval::{attitude_separability, diversity, feature_distance, smoothness, svg_traces, MetricReport};
use crate::fam::{Conditioning, Fam};
use crate::nn::{grad_check, GradCheckReport, NumArray};
use crate::pipeline::{component_rng, keys_help, parse_override, split_seed, train, Generator, RunConfig, SampleMeta};

#[derive(Parser, Debug)]
#[command(name = "listendiff", version, about = "Diffusion-based listener head motion generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset: N pairs per attitude plus manifest.tsv
    #[command(after_help = keys_help())]
    GenData(Common),
    /// Train the noise predictor; writes per-epoch checkpoints and loss.tsv
    #[command(after_help = keys_help())]
    Train(Common),
    /// Generate listener sequences from a checkpoint (one .lseq + .json per sample)
    #[command(after_help = keys_help())]
    Sample(Common),
    /// Compare generated sequences with ground truth; writes metrics.tsv
    #[command(after_help = keys_help())]
    Eval(Common),
    /// Finite-difference check of the full network's gradients on a tiny config
    #[command(after_help = keys_help())]
    GradCheck(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file of `dotted.key = value` lines
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed`)
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Overwrite a non-empty output directory
    #[arg(long)]
    force: bool,
    /// Pairs per attitude (gen-data) or samples per source pair (sample)
    #[arg(long, value_name = "N")]
    n: Option<usize>,
    /// Attitude label for sampling
    #[arg(long, value_parser = ["positive", "neutral", "negative"])]
    attitude: Option<String>,
    /// Output path of the command
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Config overrides as key=value
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.to_string_lossy().into_owned())
}

impl Common {
    fn resolve(&self, out_key: &str, n_key: Option<&str>) -> Result<RunConfig> {
        let mut ov = self.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(seed) = self.seed {
            let seed = i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} exceeds 2^63-1")))?;
            ov.push(("seed".into(), toml::Value::Integer(seed)));
        }
        if let (Some(n), Some(key)) = (self.n, n_key) {
            ov.push((key.into(), toml::Value::Integer(n as i64)));
        }
        if let Some(a) = &self.attitude {
            ov.push(("sample.attitude".into(), toml::Value::String(a.clone())));
        }
        if let Some(out) = &self.out {
            ov.push((out_key.into(), path_value(out)));
        }
        RunConfig::load(self.config.as_deref(), &ov)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
                let _ = writeln!(stderr, "{}", error_line("config", 2, first));
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let text = e.to_string();
            let msg = ["config error: ", "data error: ", "numerical failure: "]
                .iter()
                .find_map(|p| text.strip_prefix(p))
                .unwrap_or(&text);
            let _ = writeln!(stderr, "{}", error_line(e.kind(), e.exit_code() as i32, msg));
            e.exit_code() as i32
        }
    }
}

fn error_line(kind: &str, code: i32, msg: &str) -> String {
    let msg = serde_json::to_string(&msg.replace('\n', " ")).expect("string serializes");
    format!("error kind={kind} code={code} message={msg}")
}

fn log_config(cfg: &RunConfig, stderr: &mut dyn Write) {
    for (k, v) in cfg.flatten() {
        let _ = writeln!(stderr, "config {k} = {v}");
    }
}

fn dispatch(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let (cfg, common) = match &cmd {
        Command::GenData(c) => (c.resolve("data.dir", Some("data.n_per_attitude"))?, c),
        Command::Train(c) => (c.resolve("train.out", None)?, c),
        Command::Sample(c) => (c.resolve("sample.out", Some("sample.n"))?, c),
        Command::Eval(c) => (c.resolve("eval.out", None)?, c),
        Command::GradCheck(c) => (c.resolve("eval.out", None)?, c),
    };
    log_config(&cfg, stderr);
    let mut say = |s: &str| {
        let _ = writeln!(stdout, "{s}");
    };
    match cmd {
        Command::GenData(_) => gen_data(&cfg, common.force, &mut say),
        Command::Train(_) => train_cmd(&cfg, common.force, &mut say),
        Command::Sample(_) => sample_cmd(&cfg, &mut say),
        Command::Eval(_) => eval_cmd(&cfg, &mut say),
        Command::GradCheck(_) => {
            let r = run_grad_check(&cfg)?;
            let worst = r.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
            say(&format!(
                "max relative error {:.3e} over {} coordinates (worst {worst}: analytic {:.6e}, numeric {:.6e})",
                r.max_rel_error, r.coords_checked, r.analytic, r.numeric
            ));
            if r.max_rel_error < cfg.gradcheck.tolerance {
                say("grad-check passed");
                Ok(())
            } else {
                Err(Error::Numerical(format!(
                    "grad-check max relative error {:.3e} exceeds tolerance {:.1e}",
                    r.max_rel_error, cfg.gradcheck.tolerance
                )))
            }
        }
    }
}

fn is_nonempty_dir(p: &Path) -> bool {
    std::fs::read_dir(p).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn gen_data(cfg: &RunConfig, force: bool, say: &mut dyn FnMut(&str)) -> Result<()> {
    let dir = &cfg.data.dir;
    if is_nonempty_dir(dir) {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                dir.display()
            )));
        }
        let pairs = dir.join("pairs");
        if pairs.exists() {
            std::fs::remove_dir_all(&pairs).map_err(|e| Error::io(&pairs, e))?;
        }
    }
    let synth = cfg.synth();
    let pool = identity_pool(&synth, &mut component_rng(cfg.seed, "data.identity"));
    let mut rng = component_rng(cfg.seed, &format!("data.pairs.{}", cfg.data.split));
    let pairs = gen_pairs(&synth, 3 * cfg.data.n_per_attitude, cfg.train.window, &pool, &mut rng)?;
    write_dataset(dir, &pairs)?;
    let frames: usize = pairs.iter().map(|p| p.len()).sum();
    let per: Vec<String> = ATTITUDES
        .iter()
        .map(|a| format!("{} {a}", pairs.iter().filter(|p| p.attitude == *a).count()))
        .collect();
    say(&format!(
        "wrote {} pairs ({}) with {frames} frames to {}",
        pairs.len(),
        per.join(", "),
        dir.display()
    ));
    Ok(())
}

fn require_dataset(dir: &Path, what: &str) -> Result<Dataset> {
    if !dir.join("pairs").is_dir() {
        return Err(Error::Missing {
            path: dir.to_path_buf(),
            hint: format!("no dataset for {what}; create one with `listendiff gen-data --out {}`", dir.display()),
        });
    }
    Dataset::load(dir)
}

fn train_cmd(cfg: &RunConfig, force: bool, say: &mut dyn FnMut(&str)) -> Result<()> {
    let data = require_dataset(&cfg.train.data, "training")?;
    let out = &cfg.train.out;
    if cfg.train.resume.as_os_str().is_empty() && out.join(crate::pipeline::FINAL_CHECKPOINT).exists() && !force {
        return Err(Error::Config(format!(
            "run directory {} already holds a trained model (pass --force to overwrite)",
            out.display()
        )));
    }
    let report = train(cfg, &data, out, &mut |s| say(s))?;
    if let (Some(first), Some(last)) = (report.epoch_means.first(), report.epoch_means.last()) {
        say(&format!(
            "trained {} steps; epoch-mean loss {:.6} (epoch {}) -> {:.6} (epoch {})",
            report.steps, first.1, first.0, last.1, last.0
        ));
    }
    say(&format!("checkpoint {}", report.final_checkpoint.display()));
    say(&format!("loss curve {}", report.loss_curve.display()));
    Ok(())
}

fn stem_of(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sample_sources(source: &Path) -> Result<Vec<(PathBuf, DialoguePair)>> {
    if source.is_file() {
        return Ok(vec![(source.to_path_buf(), read_sequence(source)?)]);
    }
    let data = require_dataset(source, "sampling")?;
    Ok(data.paths.into_iter().zip(data.pairs).collect())
}

fn sample_cmd(cfg: &RunConfig, say: &mut dyn FnMut(&str)) -> Result<()> {
    let generator = Generator::load(&cfg.sample.checkpoint, cfg)?;
    let attitude = cfg.sample_attitude()?;
    let mut written = 0;
    for (path, pair) in sample_sources(&cfg.sample.source)? {
        let stem = stem_of(&path);
        let att = attitude.unwrap_or(pair.attitude);
        let seed = split_seed(cfg.seed, &format!("sample.{stem}"));
        let runs = generator.generate(&pair, att, cfg.sample.n, seed, &path.to_string_lossy())?;
        for run in &runs {
            crate::pipeline::write_sample_run(&cfg.sample.out, &format!("{stem}_s{}", run.index), run, &pair)?;
            written += 1;
        }
    }
    say(&format!(
        "wrote {written} sequences to {} (checkpoint sha256 {})",
        cfg.sample.out.display(),
        generator.checkpoint
    ));
    Ok(())
}

fn eval_cmd(cfg: &RunConfig, say: &mut dyn FnMut(&str)) -> Result<()> {
    let gen_dir = &cfg.eval.generated;
    let mut files: Vec<PathBuf> = std::fs::read_dir(gen_dir)
        .map_err(|_| Error::Missing {
            path: gen_dir.clone(),
            hint: "generate sequences first with `listendiff sample`".into(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lseq"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no generated .lseq files in {}", gen_dir.display())));
    }

    let mut groups: BTreeMap<String, Vec<NumArray>> = BTreeMap::new();
    let mut labelled = Vec::new();
    let (mut fd_sum, mut frames, mut smooth_max) = ([0.0; 3], 0usize, 0.0f64);
    let mut first_plot = None;
    for f in &files {
        let meta_path = f.with_extension("json");
        let meta: SampleMeta = std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(&meta_path, e))
            .and_then(|s| serde_json::from_str(&s).map_err(|e| Error::Data(format!("{}: {e}", meta_path.display()))))?;
        let gen = read_sequence(f)?;
        let source = Path::new(&meta.source);
        let ref_path = cfg.eval.reference.join("pairs").join(source.file_name().unwrap_or_default());
        if !ref_path.exists() {
            return Err(Error::Missing {
                path: ref_path,
                hint: "set eval.reference to the dataset the samples were drawn from".into(),
            });
        }
        let gt = read_sequence(&ref_path)?;
        let fd = feature_distance(&gen.listener, &gt.listener)?;
        let n = gen.len();
        for (acc, v) in fd_sum.iter_mut().zip([fd.angle, fd.exp, fd.trans]) {
            *acc += v * n as f64;
        }
        frames += n;
        smooth_max = smooth_max.max(smoothness(&gen.listener)?);
        if first_plot.is_none() {
            first_plot = Some((gen.listener.clone(), gt.listener.clone(), stem_of(f)));
        }
        groups.entry(meta.source.clone()).or_default().push(gen.listener.clone());
        labelled.push((gen.attitude, gen.listener));
    }

    let divs: Vec<f64> = groups
        .values()
        .filter(|g| g.len() >= 2 && g.iter().all(|s| s.shape() == g[0].shape()))
        .map(|g| diversity(g))
        .collect::<Result<_>>()?;
    let diversity = (!divs.is_empty()).then(|| divs.iter().sum::<f64>() / divs.len() as f64);
    let separability = match attitude_separability(&labelled, cfg.eval.permutations, split_seed(cfg.seed, "eval.permutation")) {
        Ok(s) => Some(s.min_p()),
        Err(e) => {
            say(&format!("separability skipped: {e}"));
            None
        }
    };
    let report = MetricReport {
        fd_angle: fd_sum[0] / frames as f64,
        fd_exp: fd_sum[1] / frames as f64,
        fd_trans: fd_sum[2] / frames as f64,
        diversity,
        separability_p: separability,
        smoothness: smooth_max,
        n_sequences: files.len(),
    };
    let out = &cfg.eval.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let tsv = out.join("metrics.tsv");
    std::fs::write(&tsv, report.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
    if cfg.eval.plot {
        if let Some((gen, gt, name)) = first_plot {
            let smile = crate::dataio::Layout::from_coeff_dims(gen.cols())?.expr(0);
            let mut data = Vec::with_capacity(gen.rows() * 4);
            for k in 0..gen.rows() {
                data.extend([gen.get(k, 0), gt.get(k, 0), gen.get(k, smile), gt.get(k, smile)]);
            }
            let traces = NumArray::new(vec![gen.rows(), 4], data)?;
            let svg = svg_traces(
                &traces,
                &[(0, "pitch (generated)"), (1, "pitch (truth)"), (2, "smile (generated)"), (3, "smile (truth)")],
                &name,
            )?;
            let svg_path = out.join("traces.svg");
            std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
        }
    }
    for line in report.summary().lines() {
        say(line);
    }
    say(&format!("metrics {}", tsv.display()));
    Ok(())
}

/// Central-difference check of the full noise-prediction loss on the
/// `gradcheck.*` model with random conditioning, step and noise.
pub fn run_grad_check(cfg: &RunConfig) -> Result<GradCheckReport> {
    let g = &cfg.gradcheck;
    let fam_cfg = cfg.gradcheck_fam();
    let mut rng = component_rng(cfg.seed, "gradcheck");
    let fam = Fam::init(fam_cfg.clone(), &mut rng)?;
    let sched = NoiseSchedule::linear(g.steps, cfg.schedule.beta_start, cfg.schedule.beta_end)?;
    let cond = Conditioning {
        speaker_visual: gaussian(&[g.window, g.coeff_dim], &mut rng),
        speaker_audio: gaussian(&[g.window, g.audio_dim], &mut rng),
        identity: gaussian(&[g.id_dim], &mut rng),
        attitude: Attitude::Positive,
    };
    let x0 = gaussian(&[g.window, g.coeff_dim], &mut rng);
    let eps = gaussian(&[g.window, g.coeff_dim], &mut rng);
    let t = 1 + g.steps / 2;
    let f = |p: &crate::nn::ParamSet| {
        let model = Fam {
            config: fam_cfg.clone(),
            params: p.clone(),
        };
        let r = noise_loss_at(&model, &x0, &cond, &sched, t, &eps)?;
        Ok((r.loss, r.grads))
    };
    grad_check(f, &fam.params, g.h, &mut rng)
}
