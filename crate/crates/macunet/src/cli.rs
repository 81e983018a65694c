//! Subcommand definitions and dispatch.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use macunet_core::data::{
    colorize, split_dataset, synth_generate, tile_grid, tile_sample, LabeledSample, Mask, Palette, Split,
    DEFAULT_FRACTIONS,
};
use macunet_core::train::{compute_metrics, evaluate, fit};
use macunet_core::verify::{gradient_suite, BLOCK_TOL, END_TO_END_TOL};
use macunet_core::{Network, Scalar};

use crate::checkpoint;
use crate::config::{Precision, RunConfig};
use crate::dataset;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "macunet",
    version,
    about = "Semantic segmentation of RGB imagery with multi-scale asymmetric-convolution networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labelled synthetic dataset of random rectangles and ellipses
    Synth(SynthArgs),
    /// Cut every image and mask of a dataset into non-overlapping square patches
    Tile(TileArgs),
    /// Assign every stem of a dataset to train, val or test
    Split(SplitArgs),
    /// Train a network and save a checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on one subset
    Eval(EvalArgs),
    /// Predict a class map for one image
    Infer(InferArgs),
    /// Collapse the multi-branch blocks of a checkpoint into single convolutions
    Fuse(FuseArgs),
    /// Print the parameter count per module
    Params(ParamsArgs),
    /// Compare analytic gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Time inference and report convolution cost before and after fusion
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub patch: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "test")]
    pub subset: Split,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Also write the report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Class-index mask (PGM)
    #[arg(long)]
    pub out: PathBuf,
    /// Palette-coloured prediction (PPM)
    #[arg(long)]
    pub color: Option<PathBuf>,
    /// Predict with the fused network and count agreement with the unfused one
    #[arg(long)]
    pub fused: bool,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Input side used for the cost report
    #[arg(long, default_value_t = 256)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    /// Run config; defaults apply without one
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = BLOCK_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = END_TO_END_TOL)]
    pub e2e_tol: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
}

/// Parses `args` (program name first) and runs the command, returning the exit status.
pub fn run<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

pub fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a, out),
        Command::Tile(a) => tile(a, out),
        Command::Split(a) => split(a, out),
        Command::Train(a) => train(a, out, err),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Fuse(a) => fuse(a, out),
        Command::Params(a) => params(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<()> {
    if a.count == 0 || a.size == 0 {
        return Err(Error::Usage("--count and --size must be positive".into()));
    }
    if !(2..=256).contains(&a.classes) {
        return Err(Error::Usage(format!("--classes must be in 2..=256, got {}", a.classes)));
    }
    let samples = synth_generate(a.count, a.size, a.classes, a.seed);
    for s in &samples {
        dataset::write_sample(&a.out, s)?;
    }
    writeln!(out, "samples={}", samples.len()).map_err(io_out)
}

fn tile(a: TileArgs, out: &mut dyn Write) -> Result<()> {
    if a.patch == 0 {
        return Err(Error::Usage("--patch must be positive".into()));
    }
    let stems = dataset::list_stems(&a.input)?;
    let mut patches = 0usize;
    for stem in &stems {
        let sample = dataset::load_sample(&a.input, stem, None)?;
        let (rows, cols) = tile_grid(sample.image.width, sample.image.height, a.patch);
        if rows * cols == 0 {
            continue;
        }
        for p in tile_sample(&sample, a.patch) {
            dataset::write_sample(&a.out, &p)?;
            patches += 1;
        }
    }
    writeln!(out, "images={}", stems.len()).map_err(io_out)?;
    writeln!(out, "patches={patches}").map_err(io_out)
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let stems = dataset::list_stems(&a.data)?;
    let index = split_dataset(&stems, DEFAULT_FRACTIONS, a.seed)?;
    dataset::write_split(&a.out, &index)?;
    let (train, val, test) = index.counts();
    writeln!(out, "train={train} val={val} test={test}").map_err(io_out)
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text)
}

fn train(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let cfg = read_config(&a.config)?;
    let _ = write!(err, "{}", cfg.echo());
    let index = dataset::read_split(&a.split)?;
    let train = dataset::load_subset(&a.data, &index, Split::Train, cfg.classes)?;
    let val = dataset::load_subset(&a.data, &index, Split::Val, cfg.classes)?;
    let _ = writeln!(err, "train samples {}, val samples {}", train.len(), val.len());
    match cfg.precision {
        Precision::F32 => train_as::<f32>(&cfg, &train, &val, &a, out, err),
        Precision::F64 => train_as::<f64>(&cfg, &train, &val, &a, out, err),
    }
}

fn train_as<T: Scalar>(
    cfg: &RunConfig,
    train: &[LabeledSample],
    val: &[LabeledSample],
    a: &TrainArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let mut net = Network::<T>::build(cfg.network(), cfg.seed)?;
    let log = fit(&mut net, train, val, &cfg.training(), &mut |e| {
        let val = e.val_miou.map(|v| format!(" val_miou {v:.4}")).unwrap_or_default();
        let _ = writeln!(err, "epoch {} step {} lr {:.3e} loss {:.5}{val}", e.epoch, e.step, e.lr, e.train_loss);
    })?;
    checkpoint::save(&net, &a.out)?;
    if let Some(path) = &a.log {
        dataset::write_bytes(path, log.to_csv().as_bytes())?;
    }
    let last = log.epochs.last();
    writeln!(out, "epochs={}", log.epochs.len()).map_err(io_out)?;
    if let Some(e) = last {
        writeln!(out, "final_loss={:.6}", e.train_loss).map_err(io_out)?;
    }
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let net: Network<f32> = checkpoint::load(&a.ckpt, None)?;
    let index = dataset::read_split(&a.split)?;
    let samples = dataset::load_subset(&a.data, &index, a.subset, net.config().classes)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("the {} subset is empty", a.subset)));
    }
    let cm = evaluate(&net, &samples, a.batch_size)?;
    let report = format!("samples={}\n{}", samples.len(), compute_metrics(&cm)?.report());
    if let Some(path) = &a.report {
        dataset::write_bytes(path, report.as_bytes())?;
    }
    write!(out, "{report}").map_err(io_out)
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let net: Network<f32> = checkpoint::load(&a.ckpt, None)?;
    let image = dataset::read_image(&a.image)?;
    let x = image.to_tensor::<f32>();
    let to_mask = |pred: &[usize]| Mask::from_classes(image.width, image.height, pred);
    let pred = if a.fused && !net.is_fused() {
        let plain = net.predict(&x)?;
        let fused = net.fuse()?.predict(&x)?;
        let agree = plain.iter().zip(&fused).filter(|(p, f)| p == f).count();
        writeln!(out, "agree={agree}/{}", plain.len()).map_err(io_out)?;
        fused
    } else {
        net.predict(&x)?
    };
    let mask = to_mask(&pred)?;
    dataset::write_mask(&a.out, &mask, Some(net.config().classes))?;
    if let Some(path) = &a.color {
        let palette = Palette::for_classes(net.config().classes);
        dataset::write_image(path, &colorize(&mask, &palette)?)?;
    }
    writeln!(out, "pixels={}", pred.len()).map_err(io_out)
}

/// Sum of branched and fused cost over the multi-branch blocks.
fn block_macs<T: Scalar>(net: &Network<T>, size: usize) -> Result<(u64, u64, Vec<String>)> {
    let mut lines = Vec::new();
    let (mut branched, mut fused) = (0u64, 0u64);
    for e in net.mac_report(size, size)? {
        if e.block {
            branched += e.branched;
            fused += e.fused;
            let exact = if e.fused * 15 == e.branched * 9 { "9/15" } else { "other" };
            lines.push(format!("{}\tunfused={}\tfused={}\tratio={exact}", e.name, e.branched, e.fused));
        }
    }
    Ok((branched, fused, lines))
}

fn fuse(a: FuseArgs, out: &mut dyn Write) -> Result<()> {
    let net: Network<f32> = checkpoint::load(&a.ckpt, None)?;
    if net.is_fused() {
        return Err(Error::Data(format!("{} is already fused", a.ckpt.display())));
    }
    let (branched, fused_macs, _) = block_macs(&net, a.size)?;
    let fused = net.fuse()?;
    checkpoint::save(&fused, &a.out)?;
    writeln!(out, "params_before={}", net.count_params()).map_err(io_out)?;
    writeln!(out, "params_after={}", fused.count_params()).map_err(io_out)?;
    if branched > 0 {
        writeln!(out, "block_mac_ratio={:.6}", fused_macs as f64 / branched as f64).map_err(io_out)?;
    }
    Ok(())
}

fn optional_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map(read_config).unwrap_or_else(|| Ok(RunConfig::default()))
}

fn params(a: ParamsArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = optional_config(a.config.as_deref())?;
    let net = Network::<f32>::build(cfg.network(), cfg.seed)?;
    writeln!(out, "module,params").map_err(io_out)?;
    for (module, n) in net.param_table() {
        writeln!(out, "{module},{n}").map_err(io_out)?;
    }
    writeln!(out, "total={}", net.count_params()).map_err(io_out)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let results = gradient_suite(a.tol, a.e2e_tol)?;
    let mut failed = 0;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!r.passed());
        writeln!(
            out,
            "{status} {:<28} max_rel_error={:.3e} tol={:.0e} checked={}",
            r.name, r.report.max_rel_error, r.tol, r.report.checked
        )
        .map_err(io_out)?;
    }
    writeln!(out, "passed={}/{}", results.len() - failed, results.len()).map_err(io_out)?;
    if failed > 0 {
        return Err(Error::Verification(format!("{failed} gradient checks failed")));
    }
    Ok(())
}

fn median_ms(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.reps == 0 {
        return Err(Error::Usage("--reps must be positive".into()));
    }
    let cfg = optional_config(a.config.as_deref())?;
    let net = Network::<f32>::build(cfg.network(), cfg.seed)?;
    cfg.network().check_input(a.size, a.size)?;
    let fused = net.fuse()?;
    let x = synth_generate(1, a.size, cfg.classes, cfg.seed)[0].image.to_tensor::<f32>();

    let (branched, fused_macs, lines) = block_macs(&net, a.size)?;
    for line in &lines {
        writeln!(out, "{line}").map_err(io_out)?;
    }
    let total = |n: &Network<f32>| -> Result<u64> { Ok(n.mac_report(a.size, a.size)?.iter().map(|e| e.fused).sum()) };
    let all_branched: u64 = net.mac_report(a.size, a.size)?.iter().map(|e| e.branched).sum();
    writeln!(out, "blocks={}", lines.len()).map_err(io_out)?;
    if branched > 0 {
        writeln!(out, "block_mac_ratio={:.6}", fused_macs as f64 / branched as f64).map_err(io_out)?;
    }
    writeln!(out, "macs_unfused={all_branched}").map_err(io_out)?;
    writeln!(out, "macs_fused={}", total(&fused)?).map_err(io_out)?;

    for (label, n) in [("unfused", &net), ("fused", &fused)] {
        let mut times = Vec::with_capacity(a.reps);
        for _ in 0..a.reps {
            let t = Instant::now();
            n.forward_logits(&x, false, false)?;
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        writeln!(out, "{label}_median_ms={:.3}", median_ms(times)).map_err(io_out)?;
    }
    Ok(())
}
