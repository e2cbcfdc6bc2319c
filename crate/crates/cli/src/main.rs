mod plot;

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fourbar::datagen::{sidecar_path, DatasetHeader, DatasetWriter, GenConfig, PointCount, SampleStream, MAX_POINTS};
use fourbar::metrics::simulation_metric;
use fourbar::moe::{synthesize_multi, synthesize_relative, synthesize_single, ExpertRegistry, MoeError, SynthesisResult};
use fourbar::neural::{default_gen_config, score_samples, Checkpoint, ExpertHyperParams, Trainer};
use fourbar::points::{PointsFile, PrecisionPointSequence, RelativePointSequence};
use fourbar::{Inversion, LinkageType, TypeConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_MISSING: u8 = 4;

#[derive(Parser)]
#[command(name = "fourbar", version, about = "Data-driven synthesis of four-bar function generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled dataset for one configuration.
    Gen(GenArgs),
    /// Train (or resume) one expert, or all sixteen.
    Train(TrainArgs),
    /// Synthesize linkages for a points file.
    Synth(SynthArgs),
    /// Score experts on freshly generated held-out samples.
    Eval(EvalArgs),
}

#[derive(Args, Clone, Copy)]
struct ConfigArgs {
    /// Linkage type, 1 to 8.
    #[arg(long = "type", value_parser = clap::value_parser!(u8).range(1..=8))]
    linkage_type: Option<u8>,
    /// Geometric inversion: + or -.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_inversion)]
    inversion: Option<Inversion>,
}

impl ConfigArgs {
    fn required(&self) -> Result<TypeConfig> {
        match (self.linkage_type, self.inversion) {
            (Some(t), Some(inv)) => Ok(TypeConfig::new(LinkageType::from_id(t).expect("range-checked by clap"), inv)),
            _ => Err(UsageError("--type and --inversion are required".into()).into()),
        }
    }

    fn optional(&self) -> Result<Option<TypeConfig>> {
        match (self.linkage_type, self.inversion) {
            (None, None) => Ok(None),
            _ => self.required().map(Some),
        }
    }
}

fn parse_inversion(s: &str) -> Result<Inversion, String> {
    Inversion::parse(s).ok_or_else(|| format!("expected + or -, got {s:?}"))
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let lo = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

/// Comma-separated epoch list; empty for no milestones.
#[derive(Clone)]
struct EpochList(Vec<usize>);

fn parse_list(s: &str) -> Result<EpochList, String> {
    if s.trim().is_empty() {
        return Ok(EpochList(Vec::new()));
    }
    s.split(',').map(|x| x.trim().parse().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>().map(EpochList)
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    count: usize,
    /// Fixed number of points per sample.
    #[arg(long, conflicts_with = "n_range")]
    n: Option<usize>,
    /// Inclusive range LO,HI of points per sample.
    #[arg(long, value_parser = parse_range)]
    n_range: Option<(usize, usize)>,
    /// Upper bound for the generated T parameters.
    #[arg(long, default_value_t = fourbar::datagen::DEFAULT_M)]
    m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Full-scale defaults.
    Full,
    /// Reduced desk-scale settings used by the acceptance suite.
    Smoke,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Train all sixteen configurations one after another.
    #[arg(long, conflicts_with_all = ["linkage_type", "inversion"])]
    all: bool,
    #[arg(long, value_enum, default_value_t = Preset::Full)]
    preset: Preset,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Comma-separated epochs at which the learning rate is multiplied by --gamma.
    #[arg(long, value_parser = parse_list)]
    milestones: Option<EpochList>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    probe_size: Option<usize>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long, value_parser = parse_range)]
    n_range: Option<(usize, usize)>,
    #[arg(long)]
    seed: Option<u64>,
    /// Registry directory receiving checkpoints, reports and the manifest.
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Continue from the checkpoint in --ckpt-dir; --epochs sets the new total.
    #[arg(long)]
    resume: bool,
    /// Save a checkpoint every this many epochs (0: only at the end).
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Single,
    Multi,
    Relative,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    points: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Multi)]
    mode: Mode,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Rank every configuration instead of the best per linkage type.
    #[arg(long)]
    all_configs: bool,
    #[arg(long)]
    registry: PathBuf,
    /// Write a displacement plot of the best result (SVG, plus a CSV of the curve).
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Variants per relative task.
    #[arg(long, default_value_t = fourbar::moe::DEFAULT_VARIANTS)]
    variants: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    registry: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(MoeError::MissingExpert(_)) = cause.downcast_ref::<MoeError>() {
            return EXIT_MISSING;
        }
    }
    EXIT_DATA
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let cfg = args.cfg.required()?;
    let n_points = match (args.n, args.n_range) {
        (Some(n), None) => PointCount::Fixed(n),
        (None, Some((lo, hi))) => PointCount::Range(lo, hi),
        (None, None) => PointCount::Range(3, MAX_POINTS),
        (Some(_), Some(_)) => unreachable!("clap rejects --n with --n-range"),
    };
    let mut gen = GenConfig::new(cfg, args.seed).with_points(n_points);
    gen.m = args.m;
    gen.validate().map_err(|e| UsageError(e.to_string()))?;

    let start = Instant::now();
    let mut stream = SampleStream::new(gen.clone())?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut writer = DatasetWriter::new(BufWriter::new(file));
    for _ in 0..args.count {
        writer.write(&stream.next_sample()?)?;
    }
    writer.finish()?;
    let elapsed = start.elapsed().as_secs_f64();
    DatasetHeader::new(gen, args.count).write_path(sidecar_path(&args.out))?;
    println!(
        "generated {} {cfg} samples in {:.3} s ({:.4} ms/sample)",
        args.count,
        elapsed,
        1e3 * elapsed / args.count.max(1) as f64
    );
    Ok(())
}

impl TrainArgs {
    fn hyper(&self) -> ExpertHyperParams {
        let mut h = match self.preset {
            Preset::Full => ExpertHyperParams::default(),
            Preset::Smoke => ExpertHyperParams::smoke(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = self.$arg.clone() { h.$field = v; })*};
        }
        set!(epochs <- epochs, layers <- layers, hidden <- hidden, dropout_p <- dropout, lr <- lr,
             weight_decay <- weight_decay, gamma <- gamma,
             samples_per_epoch <- samples_per_epoch, batch_size <- batch_size, probe_size <- probe_size,
             m <- m, n_range <- n_range, seed <- seed);
        if let Some(list) = &self.milestones {
            h.schedule_milestones = list.0.clone();
        }
        h
    }
}

fn report_path(dir: &Path, cfg: TypeConfig) -> PathBuf {
    dir.join(format!("train_{}.csv", cfg.tag()))
}

fn save_progress(dir: &Path, trainer: &Trainer) -> Result<()> {
    let cfg = trainer.model.cfg;
    Checkpoint { model: trainer.model.clone(), train: Some(trainer.state()) }
        .save(ExpertRegistry::checkpoint_path(dir, cfg))?;
    let file = File::create(report_path(dir, cfg))?;
    trainer.report().write_csv(BufWriter::new(file))?;
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfgs: Vec<TypeConfig> = if args.all { TypeConfig::all().collect() } else { vec![args.cfg.required()?] };
    let hyper = args.hyper();
    hyper.validate().map_err(|e| UsageError(e.to_string()))?;
    std::fs::create_dir_all(&args.ckpt_dir)?;
    ExpertRegistry::write_manifest(&args.ckpt_dir)?;

    for cfg in cfgs {
        let path = ExpertRegistry::checkpoint_path(&args.ckpt_dir, cfg);
        let mut trainer = if args.resume {
            let ckpt = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let state = ckpt.train.context("checkpoint carries no training state")?;
            let mut model = ckpt.model;
            if let Some(epochs) = args.epochs {
                model.hyper.epochs = epochs;
            }
            Trainer::from_state(model, state)?
        } else {
            Trainer::new(cfg, hyper.clone())?
        };
        let start = Instant::now();
        let every = args.checkpoint_every;
        let dir = args.ckpt_dir.clone();
        let quiet = args.quiet;
        trainer.run(|t| {
            let e = t.epoch();
            if !quiet {
                let r = t.report();
                eprintln!(
                    "{cfg} epoch {e}/{} loss {:.6} probe S {:.6} lr {:.3e} ({:.1} s)",
                    t.model.hyper.epochs,
                    r.epoch_loss[e - 1],
                    r.probe_s_simul[e - 1],
                    r.lr[e - 1],
                    start.elapsed().as_secs_f64()
                );
            }
            if every > 0 && e % every == 0 {
                save_progress(&dir, t).map_err(|err| fourbar::neural::NeuralError::Checkpoint(format!("{err:#}")))?;
            }
            Ok(())
        })?;
        save_progress(&args.ckpt_dir, &trainer)?;
        println!("{cfg}: trained to epoch {} -> {}", trainer.epoch(), path.display());
    }
    Ok(())
}

fn deg(x: f64) -> String {
    if x.is_finite() {
        format!("{:>11.5}", x.to_degrees())
    } else {
        format!("{:>11}", "n/a")
    }
}

fn print_dims(res: &SynthesisResult) {
    let r = res.r_pred;
    println!(
        "  r1 = {:.5}  r2 = {:.5}  r3 = {:.5}  r4 = {:.5}   S_simul = {:.6}",
        r.r1, r.r2, r.r3, r.r4, res.s_simul
    );
}

fn print_absolute_table(rank: usize, res: &SynthesisResult, points: &PrecisionPointSequence) {
    println!("#{rank} {} (type {}{})", res.cfg, res.cfg.type_id(), res.cfg.inversion);
    print_dims(res);
    println!("  {:>3} {:>11} {:>11} {:>11} {:>10}", "i", "theta_in", "theta_out", "pred_out", "abs_err");
    for (i, p) in points.points.iter().enumerate() {
        println!(
            "  {:>3} {} {} {} {:>10.5}{}",
            i + 1,
            deg(p.theta_in),
            deg(p.theta_out),
            deg(res.eval.per_point_pred[i]),
            res.eval.per_point_abs_err_deg[i],
            if res.eval.reachable_flags[i] { "" } else { "  (unreachable)" }
        );
    }
    println!("  max abs error {:.5} deg", res.eval.max_abs_err_deg());
}

fn print_relative_table(rank: usize, res: &SynthesisResult, rel: &RelativePointSequence) {
    let (in0, out0) = res.initial_angles.unwrap_or((f64::NAN, f64::NAN));
    println!("#{rank} {} (type {}{})", res.cfg, res.cfg.type_id(), res.cfg.inversion);
    print_dims(res);
    println!("  initial angles: theta_in0 = {} theta_out0 = {}", deg(in0).trim(), deg(out0).trim());
    println!("  {:>3} {:>11} {:>11} {:>11} {:>10}", "i", "d_theta_in", "d_theta_out", "pred_d_out", "abs_err");
    let pred0 = res.eval.per_point_pred[0];
    for (i, d) in rel.deltas().iter().enumerate() {
        let pred = fourbar::kinematics::normalize_angle(res.eval.per_point_pred[i] - pred0);
        let err = fourbar::metrics::absolute_error_deg(d.theta_out, pred);
        println!("  {:>3} {} {} {} {:>10.5}", i + 1, deg(d.theta_in), deg(d.theta_out), deg(pred), err);
    }
}

fn emit_plot(path: &Path, res: &SynthesisResult, points: &PrecisionPointSequence) -> Result<()> {
    let curve = plot::displacement_curve(res, points)?;
    let title = format!("{}  S = {:.6}", res.cfg, res.s_simul);
    plot::write_svg(&curve, &title, path)?;
    let csv = path.with_extension("csv");
    plot::write_csv(&curve, &csv)?;
    println!("plot written to {} (curve data {})", path.display(), csv.display());
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let file = PointsFile::read_path(&args.points).with_context(|| format!("reading {}", args.points.display()))?;
    let registry = ExpertRegistry::load(&args.registry)?;
    let distinct = !args.all_configs;
    match (args.mode, file) {
        (Mode::Single, PointsFile::Absolute(points)) => {
            let cfg = args.cfg.required()?;
            let res = synthesize_single(&registry, cfg, &points)?;
            print_absolute_table(1, &res, &points);
            if let Some(plot) = &args.plot {
                emit_plot(plot, &res, &points)?;
            }
        }
        (Mode::Multi, PointsFile::Absolute(points)) => {
            let ranked = synthesize_multi(&registry, &points, args.top_k, distinct)?;
            for (i, res) in ranked.iter().enumerate() {
                print_absolute_table(i + 1, res, &points);
            }
            if let (Some(plot), Some(best)) = (&args.plot, ranked.first()) {
                emit_plot(plot, best, &points)?;
            }
        }
        (Mode::Relative, PointsFile::Relative(rel)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let start = Instant::now();
            let ranked = synthesize_relative(&registry, &rel, args.variants, usize::MAX, false, &mut rng)?;
            let elapsed = start.elapsed().as_secs_f64();
            println!("{} candidates scored in {elapsed:.3} s", ranked.len());
            let shown = fourbar::moe::rank(ranked, args.top_k, distinct);
            for (i, res) in shown.iter().enumerate() {
                print_relative_table(i + 1, res, &rel);
            }
            if let (Some(plot), Some(best)) = (&args.plot, shown.first()) {
                let (in0, out0) = best.initial_angles.expect("relative results carry initial angles");
                emit_plot(plot, best, &rel.anchor(in0, out0))?;
            }
        }
        (Mode::Relative, PointsFile::Absolute(_)) => {
            return Err(UsageError("relative mode needs a d_theta_in_deg,d_theta_out_deg file".into()).into())
        }
        (_, PointsFile::Relative(_)) => {
            return Err(UsageError("relative points need --mode relative".into()).into())
        }
    }
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let registry = ExpertRegistry::load(&args.registry)?;
    let cfgs: Vec<TypeConfig> = match args.cfg.optional()? {
        Some(cfg) => vec![cfg],
        None => TypeConfig::all().collect(),
    };
    println!("{:<22} {:>12} {:>12} {:>14}", "configuration", "mean S", "median S", "ground truth");
    for cfg in cfgs {
        let model = registry.expert(cfg)?;
        let mut gen = default_gen_config(cfg, &model.hyper);
        gen.seed = args.seed ^ (cfg.index() as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let mut stream = SampleStream::new(gen)?;
        let samples = (0..args.samples).map(|_| stream.next_sample()).collect::<Result<Vec<_>, _>>()?;
        let mut scores = score_samples(model, &samples)?;
        let mut control: f64 = 0.0;
        for s in &samples {
            control = control.max(simulation_metric(&s.r, cfg, &s.points)?.s_simul);
        }
        let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        scores.sort_by(f64::total_cmp);
        println!("{:<22} {:>12.6} {:>12.6} {:>14.2e}", cfg.to_string(), mean, median(&scores), control);
    }
    Ok(())
}
