//! `pat`: pattern planning, validation, rendering, oracles, benchmarks,
//! parameter counting, training and bias dumps.
//!
//! Exit codes: 0 ok, 1 validation or check failure, 2 usage error, 3 I/O error.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pat_core::attention::{
    flop_count, instance_flops, matrix_csv, qkva_oracle, AttentionFlags, AttentionLayerParams, AttentionPlan,
    BiasMode, BiasSharing,
};
use pat_core::model::{count_params, Model, ModelConfig};
use pat_core::pattern::{
    parse_layout, plan_octagon_pattern, plan_square_pattern, render_layout, serialize_layout, PatternLayout,
};
use pat_core::training::{gradcheck, load_checkpoint, save_checkpoint, GradcheckOptions, Trainer, TrainSpec};
use pat_core::{tensor, Error, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "pat", version, about = "Doughnut-kernel pattern attention toolkit")]
struct Cli {
    /// Emit a single JSON document on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan, validate and render kernel patterns.
    #[command(subcommand)]
    Pattern(PatternCmd),
    /// Brute-force oracles.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Finite-difference audit of every parameter group.
    Gradcheck(GradcheckArgs),
    /// Time one attention layer and report exact multiply-adds.
    Bench(BenchArgs),
    /// Count model parameters from a config file.
    CountParams(ConfigArg),
    /// Train on the synthetic dataset.
    Train(TrainArgs),
    /// Write one layer's kernel bias as CSV.
    DumpBias(DumpBiasArgs),
}

#[derive(Subcommand)]
enum PatternCmd {
    /// Plan a layout and write it as JSON.
    Gen(GenArgs),
    /// Check a layout file; prints the violation report on failure.
    Validate(InArg),
    /// Render a layout as a binary PPM.
    Render(RenderArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kernel {
    Octagon,
    Square,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, value_enum, default_value = "octagon")]
    kernel: Kernel,
    /// Square kernels: side of the update core.
    #[arg(long, default_value_t = 4)]
    core_side: usize,
    /// Square kernels: Chebyshev radius of the sensor ring.
    #[arg(long, default_value_t = 1)]
    sensor_radius: usize,
    /// Octagon lattice offset as `row,col`.
    #[arg(long, default_value = "0,0", value_parser = parse_phase)]
    phase: (i32, i32),
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InArg {
    #[arg(long = "in")]
    input: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Pixels per grid cell.
    #[arg(long, default_value_t = 8)]
    cell_px: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum OracleCmd {
    /// Triple-sum QKVA evaluation against the matrix product.
    Qkva(QkvaArgs),
}

#[derive(Args)]
struct QkvaArgs {
    #[arg(long)]
    h: usize,
    #[arg(long)]
    w: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Args)]
struct ConfigArg {
    /// Model config JSON.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Model config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of probed coordinates.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Comma-separated parameter groups to skip.
    #[arg(long, value_delimiter = ',')]
    freeze: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct BenchArgs {
    /// Layout JSON.
    #[arg(long)]
    layout: PathBuf,
    #[arg(long, default_value_t = 96)]
    channels: usize,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, value_enum, default_value = "on")]
    winnow: OnOff,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Model config JSON.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 300)]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for metrics and the final checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.05)]
    weight_decay: f64,
    /// Noise standard deviation of the synthetic images.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Number of distinct training samples.
    #[arg(long, default_value_t = 512)]
    train_size: usize,
    /// Continue from a checkpoint instead of starting fresh; the config
    /// must match the checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct DumpBiasArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Global block index across all stages.
    #[arg(long)]
    layer: usize,
    #[arg(long)]
    head: usize,
    /// Shape class id; defaults to the most frequent class of the layer.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// A failed command and its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 3,
            Error::InvalidArgument(_) | Error::GridTooSmall { .. } => 2,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 3, message: format!("{}: {e}", path.display()) }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

/// Outcome of a command: the report, and whether checks passed.
struct Report {
    ok: bool,
    json: Value,
    text: String,
}

fn parse_phase(s: &str) -> Result<(i32, i32), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    let p = |v: &str| v.trim().parse::<i32>().map_err(|e| format!("{v}: {e}"));
    Ok((p(r)?, p(c)?))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| io_fail(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_fail(path, e))
}

fn read_config(path: &Path) -> Result<ModelConfig, Failure> {
    let text = String::from_utf8(read(path)?).map_err(|_| Failure { code: 1, message: "config is not UTF-8".into() })?;
    Ok(ModelConfig::from_json(&text)?)
}

fn read_layout(path: &Path) -> Result<PatternLayout, Failure> {
    Ok(parse_layout(&read(path)?)?)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool, Failure> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| usage(e.to_string()))
}

fn pattern_gen(a: &GenArgs) -> Result<Report, Failure> {
    let layout = match a.kernel {
        Kernel::Octagon => plan_octagon_pattern(a.height, a.width, a.phase)?,
        Kernel::Square => plan_square_pattern(a.height, a.width, a.core_side, a.sensor_radius)?,
    };
    let bytes = serialize_layout(&layout);
    let summary = json!({
        "height": layout.height,
        "width": layout.width,
        "instances": layout.instances.len(),
        "shape_classes": layout.shapes.len(),
        "out": a.out.as_ref().map(|p| p.display().to_string()),
    });
    match &a.out {
        Some(p) => write(p, &bytes)?,
        None => {
            // the layout itself is the stdout document
            return Ok(Report {
                ok: true,
                json: serde_json::from_slice(&bytes).expect("layout is JSON"),
                text: String::from_utf8(bytes).expect("layout is UTF-8").trim_end().to_string(),
            });
        }
    }
    let text = format!(
        "{}x{} layout: {} instances, {} shape classes",
        layout.height,
        layout.width,
        layout.instances.len(),
        layout.shapes.len()
    );
    Ok(Report { ok: true, json: summary, text })
}

fn pattern_validate(a: &InArg) -> Result<Report, Failure> {
    let bytes = read(&a.input)?;
    match parse_layout(&bytes) {
        Ok(layout) => Ok(Report {
            ok: true,
            json: json!({"valid": true, "instances": layout.instances.len(), "shape_classes": layout.shapes.len()}),
            text: format!("valid: {} instances, {} shape classes", layout.instances.len(), layout.shapes.len()),
        }),
        Err(Error::InvalidLayout(report)) => Ok(Report {
            ok: false,
            json: json!({"valid": false, "counts": report.counts(), "violations": report.violations}),
            text: format!("invalid layout\n{report}"),
        }),
        Err(e) => Ok(Report {
            ok: false,
            json: json!({"valid": false, "error": e.to_string()}),
            text: format!("invalid layout file: {e}"),
        }),
    }
}

fn pattern_render(a: &RenderArgs) -> Result<Report, Failure> {
    let layout = read_layout(&a.input)?;
    let ppm = render_layout(&layout, a.cell_px)?;
    write(&a.out, &ppm)?;
    let (w, h) = (layout.width * a.cell_px, layout.height * a.cell_px);
    Ok(Report {
        ok: true,
        json: json!({"out": a.out.display().to_string(), "width_px": w, "height_px": h}),
        text: format!("wrote {}x{} image to {}", w, h, a.out.display()),
    })
}

fn oracle_qkva(a: &QkvaArgs) -> Result<Report, Failure> {
    if a.h == 0 || a.w == 0 {
        return Err(usage("--h and --w must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst = 0.0f64;
    for _ in 0..a.trials {
        let mut m = || Tensor::<f64>::from_fn(&[a.h, a.w], |_| rng.random_range(-1.0..1.0));
        let (q, k, v) = (m(), m(), m());
        let oracle = qkva_oracle(&q, &k, &v)?;
        let fast = tensor::matmul(&tensor::matmul(&q, &k.transpose()?)?, &v)?;
        let scale = fast.max_abs().max(f64::MIN_POSITIVE);
        worst = worst.max(oracle.max_abs_diff(&fast) / scale);
    }
    let ok = worst <= a.tol;
    Ok(Report {
        ok,
        json: json!({"h": a.h, "w": a.w, "trials": a.trials, "seed": a.seed, "max_rel_error": worst, "tol": a.tol, "passed": ok}),
        text: format!("qkva {}x{} over {} trials: max relative error {worst:.3e} ({})", a.h, a.w, a.trials, verdict(ok)),
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<Report, Failure> {
    let cfg = read_config(&a.config)?;
    let opts = GradcheckOptions { tol: a.tol, samples: a.samples, frozen: a.freeze.clone(), ..Default::default() };
    let r = gradcheck(&cfg, a.seed, &opts)?;
    let mut text = format!(
        "gradcheck: {} samples, max relative error {:.3e} (tol {:.1e}) {}\n",
        r.samples,
        r.max_rel_error,
        r.tol,
        verdict(r.passed)
    );
    for (g, rep) in &r.groups {
        text.push_str(&format!("  {g:<24} {:<8} {:>4} {:.3e}\n", rep.status, rep.samples, rep.max_rel_error));
    }
    Ok(Report { ok: r.passed, json: serde_json::to_value(&r).expect("serializable"), text: text.trim_end().into() })
}

fn bench(a: &BenchArgs) -> Result<Report, Failure> {
    let layout = read_layout(&a.layout)?;
    if a.iters == 0 {
        return Err(usage("--iters must be at least 1"));
    }
    let winnow = a.winnow == OnOff::On;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let bias = Some((BiasMode::Absolute, BiasSharing::PerHead));
    let mut params = AttentionLayerParams::<f32>::init(&layout, a.channels, a.heads, bias, false, 0.02, &mut rng)?;
    params.randomize_biases(&mut rng, 0.02);
    let plan = AttentionPlan::for_params(&layout, &params)?;
    let x = Tensor::<f32>::from_fn(&[layout.cell_count(), a.channels], |_| rng.random_range(-1.0..1.0));
    let flags = AttentionFlags { winnow, block_bias: false };
    let flops = flop_count(&layout, a.channels, a.heads, flags);
    let dom = layout.dominant_shape().expect("validated layout is non-empty");
    let on = instance_flops(dom.core_len(), dom.sensor_len(), a.channels, a.heads, true);
    let off = instance_flops(dom.core_len(), dom.sensor_len(), a.channels, a.heads, false);
    let ratio = on.p_stage_madds as f64 / off.p_stage_madds as f64;

    let pool = pool(a.threads)?;
    let mut checksum = 0.0f64;
    let start = Instant::now();
    for _ in 0..a.iters {
        let out = pool.install(|| plan.infer(&x, &params, winnow))?;
        checksum = out.data().iter().map(|&v| v as f64).sum();
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / a.iters as f64;
    let json = json!({
        "height": layout.height,
        "width": layout.width,
        "instances": layout.instances.len(),
        "channels": a.channels,
        "heads": a.heads,
        "winnow": winnow,
        "threads": a.threads,
        "iters": a.iters,
        "madds": flops,
        "dominant_shape": dom.id(),
        "dominant_p_stage_ratio": ratio,
        "output_checksum": checksum,
        "wall_ms_per_forward": ms,
    });
    let text = format!(
        "{}x{} layout, {} instances, C={} heads={} winnow={}\n  p-stage {}  av-stage {}  proj {}  total {} madds\n  \
         p-stage ratio winnow/full for {}: {ratio}\n  {ms:.3} ms per forward ({} threads)",
        layout.height,
        layout.width,
        layout.instances.len(),
        a.channels,
        a.heads,
        if winnow { "on" } else { "off" },
        flops.p_stage_madds,
        flops.av_stage_madds,
        flops.proj_madds,
        flops.total,
        dom.id(),
        a.threads
    );
    Ok(Report { ok: true, json, text })
}

fn count(a: &ConfigArg) -> Result<Report, Failure> {
    let cfg = read_config(&a.config)?;
    let c = count_params(&cfg)?;
    Ok(Report { ok: true, json: serde_json::to_value(c).expect("serializable"), text: c.to_string() })
}

fn train(a: &TrainArgs, as_json: bool) -> Result<Report, Failure> {
    let cfg = read_config(&a.config)?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config != cfg {
                return Err(Failure { code: 1, message: "checkpoint config differs from --config".into() });
            }
            Trainer::<f32>::from_checkpoint(&ck)?
        }
        None => {
            let mut spec = TrainSpec::desk(&cfg, a.steps, a.seed);
            spec.batch_size = a.batch_size;
            spec.optimizer.lr = a.lr;
            spec.optimizer.weight_decay = a.weight_decay;
            spec.dataset.noise = a.noise;
            spec.dataset.size = a.train_size;
            Trainer::new(cfg, spec)?
        }
    };
    fs::create_dir_all(&a.out).map_err(|e| io_fail(&a.out, e))?;
    let metrics_path = a.out.join("metrics.jsonl");
    let mut metrics = fs::File::create(&metrics_path).map_err(|e| io_fail(&metrics_path, e))?;
    let pool = pool(a.threads)?;
    let mut io_err = None;
    let log = pool.install(|| {
        trainer.run(|m| {
            let line = serde_json::to_string(m).expect("serializable");
            if let Err(e) = writeln!(metrics, "{line}") {
                io_err.get_or_insert(e);
            }
            if !as_json && (m.step % 10 == 0 || m.step + 1 == a.steps) {
                eprintln!("step {:>4}  loss {:.4}  acc {:.3}  lr {:.2e}", m.step, m.loss, m.accuracy, m.lr);
            }
        })
    })?;
    if let Some(e) = io_err {
        return Err(io_fail(&metrics_path, e));
    }
    let acc = pool.install(|| trainer.train_accuracy())?;
    let ck_path = a.out.join("checkpoint.patc");
    save_checkpoint(&ck_path, &trainer.checkpoint()).map_err(|e| match e {
        Error::Io(io) => io_fail(&ck_path, io),
        other => other.into(),
    })?;
    let last = log.last().copied();
    let json = json!({
        "steps": trainer.step_count(),
        "final_loss": last.map(|m| m.loss),
        "final_batch_accuracy": last.map(|m| m.accuracy),
        "train_accuracy": acc,
        "checkpoint": ck_path.display().to_string(),
        "metrics": metrics_path.display().to_string(),
    });
    let text = format!(
        "trained to step {}: train accuracy {acc:.4}, final loss {}\ncheckpoint {}",
        trainer.step_count(),
        last.map_or("n/a".into(), |m| format!("{:.5}", m.loss)),
        ck_path.display()
    );
    Ok(Report { ok: true, json, text })
}

fn dump_bias(a: &DumpBiasArgs) -> Result<Report, Failure> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = Model::from_params(ck.config, ck.params)?;
    let m = model.bias_matrix(a.layer, a.head, a.shape.as_deref()).map_err(|e| match e {
        Error::MissingBiasTable(_) | Error::InvalidArgument(_) => usage(e.to_string()),
        other => other.into(),
    })?;
    write(&a.out, matrix_csv(&m)?.as_bytes())?;
    Ok(Report {
        ok: true,
        json: json!({"out": a.out.display().to_string(), "rows": m.rows(), "cols": m.cols()}),
        text: format!("wrote {}x{} bias to {}", m.rows(), m.cols(), a.out.display()),
    })
}

fn dispatch(cli: &Cli) -> Result<Report, Failure> {
    match &cli.command {
        Command::Pattern(PatternCmd::Gen(a)) => pattern_gen(a),
        Command::Pattern(PatternCmd::Validate(a)) => pattern_validate(a),
        Command::Pattern(PatternCmd::Render(a)) => pattern_render(a),
        Command::Oracle(OracleCmd::Qkva(a)) => oracle_qkva(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Bench(a) => bench(a),
        Command::CountParams(a) => count(a),
        Command::Train(a) => train(a, cli.json),
        Command::DumpBias(a) => dump_bias(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(r) => {
            if cli.json {
                println!("{}", r.json);
            } else {
                println!("{}", r.text);
            }
            ExitCode::from(if r.ok { 0 } else { 1 })
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
