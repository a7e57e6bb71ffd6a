//! The `vanlka` command line.
//!
//! [`run`] takes the argument list and output sinks explicitly so the whole
//! surface can be exercised in-process by tests. Exit codes: 0 on success,
//! 1 on usage or runtime errors, 2 when a gradient check fails.

use std::ffi::OsString;
use std::io::{self, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checks::{run_check, CHECK_NAMES};
use crate::cost::{dilation_objective, model_cost, optimal_dilation, params_comparison_table};
use crate::error::Error;
use crate::io::{center_crop, load_checkpoint, read_image, resolve_variant, save_checkpoint};
use crate::van::{
    build_van, model_forward, train_demo, VanVariant, DEMO_BATCH, DEMO_EXTENT, DEMO_LR,
    IMAGE_CHANNELS, TOTAL_STRIDE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vanlka",
    version,
    about = "Large kernel attention and VAN model toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct InputExtent {
    /// Input height and width.
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [224, 224])]
    input: Vec<usize>,
}

impl InputExtent {
    fn hw(&self) -> (usize, usize) {
        (self.input[0], self.input[1])
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Architecture overview of a variant.
    Summarize {
        /// Preset name (b0..b6, micro) or path to a JSON variant config.
        variant: String,
    },
    /// Per-layer parameter and MAC counts.
    Costs {
        variant: String,
        #[command(flatten)]
        input: InputExtent,
        /// Count conv and classifier biases.
        #[arg(long)]
        bias: bool,
    },
    /// Parameter counts of a KxK conv and its decompositions.
    Table {
        #[arg(long, default_value_t = 21)]
        kernel: u64,
        #[arg(long, value_delimiter = ',', default_value = "32,64,128,256,512")]
        channels: Vec<u64>,
    },
    /// Decomposition of a KxK kernel into dw, dilated dw and pointwise convs.
    Decompose {
        #[arg(long)]
        kernel: u64,
        /// Largest dilation considered (defaults to the kernel size).
        #[arg(long)]
        dmax: Option<u64>,
    },
    /// Tensor shapes through the network.
    Shapes {
        variant: String,
        #[command(flatten)]
        input: InputExtent,
    },
    /// Classify an image (binary PPM or raw f32 tensor).
    Infer {
        variant: String,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Crop the image centrally to extents divisible by 32.
        #[arg(long)]
        center_crop: bool,
    },
    /// Finite-difference checks of the backward passes.
    Gradcheck {
        #[arg(long, conflicts_with = "all")]
        op: Option<String>,
        /// Run every check (the default).
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Corrupt every backward pass; the checks are expected to fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Train VAN-micro on a fixed synthetic batch.
    TrainDemo {
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEMO_LR)]
        lr: f64,
    },
    /// Write a freshly initialised checkpoint.
    Init {
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Lib(Error),
    Io(io::Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(Failure::Lib(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Io(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Checks(n)) => {
            let _ = writeln!(err, "{n} gradient check(s) failed");
            EXIT_CHECK_FAILED
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Summarize { variant } => summarize(&resolve_variant(&variant)?, out),
        Command::Costs {
            variant,
            input,
            bias,
        } => costs(&resolve_variant(&variant)?, input.hw(), bias, out),
        Command::Table { kernel, channels } => table(kernel, &channels, out),
        Command::Decompose { kernel, dmax } => decompose(kernel, dmax.unwrap_or(kernel), out),
        Command::Shapes { variant, input } => shapes(&resolve_variant(&variant)?, input.hw(), out),
        Command::Infer {
            variant,
            weights,
            image,
            center_crop,
        } => infer(
            &resolve_variant(&variant)?,
            &weights,
            &image,
            center_crop,
            out,
        ),
        Command::Gradcheck {
            op,
            all: _,
            seed,
            seeds,
            inject_fault,
        } => gradcheck(op.as_deref(), seed, seeds, inject_fault, out),
        Command::TrainDemo { steps, seed, lr } => train(steps, seed, lr, out),
        Command::Init {
            variant,
            seed,
            out: path,
        } => init(&resolve_variant(&variant)?, seed, &path, out),
    }
}

fn summarize(v: &VanVariant, out: &mut dyn Write) -> Outcome {
    let report = model_cost(v, 224, 224, true)?;
    let k = v.lka_nominal_kernel;
    let d = v.lka_dilation;
    let dwd = k.div_ceil(d);
    writeln!(out, "variant      {}", v.name)?;
    writeln!(
        out,
        "lka          kernel {k} dilation {d}: dw {0}x{0}, dwd {dwd}x{dwd} dilation {d}, pw 1x1",
        2 * d - 1
    )?;
    writeln!(out, "classes      {}", v.num_classes)?;
    writeln!(out, "layerscale   {}", v.layerscale_init)?;
    writeln!(out)?;
    writeln!(
        out,
        "{:<6} {:>8} {:>6} {:>5} {:>8} {:>12}",
        "stage", "channels", "depth", "e.r.", "hidden", "downsample"
    )?;
    for (i, s) in v.stages.iter().enumerate() {
        let ds = format!("{0}x{0}/{1}", s.downsample_kernel, s.downsample_stride);
        writeln!(
            out,
            "{:<6} {:>8} {:>6} {:>5} {:>8} {:>12}",
            i + 1,
            s.channels,
            s.depth,
            s.expansion_ratio,
            s.hidden_channels(),
            ds
        )?;
    }
    writeln!(out)?;
    writeln!(out, "params       {}", report.total_params)?;
    writeln!(out, "macs@224     {}", report.total_macs)?;
    Ok(())
}

fn costs(v: &VanVariant, (h, w): (usize, usize), bias: bool, out: &mut dyn Write) -> Outcome {
    let report = model_cost(v, h, w, bias)?;
    let width = report
        .rows
        .iter()
        .map(|r| r.name.len())
        .max()
        .unwrap_or(0)
        .max("total".len());
    writeln!(out, "{:<width$} {:>12} {:>14}", "layer", "params", "macs")?;
    for r in &report.rows {
        writeln!(out, "{:<width$} {:>12} {:>14}", r.name, r.params, r.macs)?;
    }
    writeln!(
        out,
        "{:<width$} {:>12} {:>14}",
        "total", report.total_params, report.total_macs
    )?;
    writeln!(out)?;
    writeln!(out, "input        {h}x{w}")?;
    writeln!(out, "bias         {}", if bias { "on" } else { "off" })?;
    writeln!(out, "params       {}", report.total_params)?;
    writeln!(out, "macs         {}", report.total_macs)?;
    writeln!(out, "flops (2x)   {}", report.total_flops())?;
    Ok(())
}

fn table(kernel: u64, channels: &[u64], out: &mut dyn Write) -> Outcome {
    let rows = params_comparison_table(kernel, channels)?;
    let d = optimal_dilation(kernel, kernel);
    writeln!(out, "kernel {kernel} dilation {d}")?;
    writeln!(
        out,
        "{:>8} {:>14} {:>14} {:>14} {:>8}",
        "channels", "standard", "mobilenet", "ours", "ratio"
    )?;
    for r in rows {
        writeln!(
            out,
            "{:>8} {:>14} {:>14} {:>14} {:>8}",
            r.channels,
            r.standard,
            r.mobilenet,
            r.lka,
            r.standard / r.lka
        )?;
    }
    Ok(())
}

fn decompose(kernel: u64, dmax: u64, out: &mut dyn Write) -> Outcome {
    if kernel == 0 || dmax == 0 {
        return Err(Error::param("kernel and dmax must be at least 1").into());
    }
    let d = optimal_dilation(kernel, dmax);
    let dw = 2 * d - 1;
    let dwd = kernel.div_ceil(d);
    let span = dw + d * (dwd - 1);
    writeln!(out, "kernel       {kernel}")?;
    writeln!(out, "dilation     {d}")?;
    writeln!(out, "dw           {dw}x{dw}")?;
    writeln!(out, "dwd          {dwd}x{dwd} dilation {d}")?;
    writeln!(out, "pw           1x1")?;
    writeln!(out, "span         {span}")?;
    writeln!(
        out,
        "weights/ch   {} (dense {})",
        dilation_objective(kernel, d),
        kernel * kernel
    )?;
    Ok(())
}

fn shapes(v: &VanVariant, (h, w): (usize, usize), out: &mut dyn Write) -> Outcome {
    v.validate()?;
    let res = v.stage_resolutions(h, w)?;
    let shape = |c: usize, (y, x): (usize, usize)| format!("1x{c}x{y}x{x}");
    writeln!(out, "{:<10} {:>20}", "tensor", "shape")?;
    writeln!(out, "{:<10} {:>20}", "input", shape(IMAGE_CHANNELS, (h, w)))?;
    for (i, (s, &r)) in v.stages.iter().zip(&res).enumerate() {
        writeln!(
            out,
            "{:<10} {:>20}",
            format!("stage{}", i + 1),
            shape(s.channels, r)
        )?;
    }
    let last = v.stages[3].channels;
    writeln!(out, "{:<10} {:>20}", "pooled", format!("1x{last}"))?;
    writeln!(
        out,
        "{:<10} {:>20}",
        "logits",
        format!("1x{}", v.num_classes)
    )?;
    writeln!(out)?;
    writeln!(out, "total stride {TOTAL_STRIDE}")?;
    Ok(())
}

fn infer(
    v: &VanVariant,
    weights: &std::path::Path,
    image: &std::path::Path,
    crop: bool,
    out: &mut dyn Write,
) -> Outcome {
    let model = load_checkpoint::<f32>(weights, v)?;
    let mut x = read_image(image)?;
    if crop {
        x = center_crop(&x, TOTAL_STRIDE)?;
    }
    let logits = model_forward(&x, &model)?.logits;
    let classes = logits.shape()[1];
    for (i, row) in logits.data().chunks(classes).enumerate() {
        let mut best = 0;
        for (j, &z) in row.iter().enumerate() {
            if z > row[best] {
                best = j;
            }
        }
        writeln!(out, "image {i} class {best}")?;
        for (j, z) in row.iter().enumerate() {
            writeln!(out, "{j:>8} {z:>14.6}")?;
        }
    }
    Ok(())
}

fn gradcheck(
    op: Option<&str>,
    seed: u64,
    seeds: u64,
    inject_fault: bool,
    out: &mut dyn Write,
) -> Outcome {
    let names: Vec<&str> = match op {
        Some(name) if !CHECK_NAMES.contains(&name) => {
            return Err(Error::param(format!(
                "unknown gradient check `{name}` (expected one of: {})",
                CHECK_NAMES.join(", ")
            ))
            .into());
        }
        Some(name) => vec![name],
        None => CHECK_NAMES.to_vec(),
    };
    writeln!(
        out,
        "{:<24} {:>6} {:>10} {:>10} {:>7}  result",
        "op", "seed", "max_err", "tolerance", "coords"
    )?;
    let mut failed = 0;
    for name in names {
        for s in seed..seed + seeds.max(1) {
            let c = run_check(name, s, inject_fault)?;
            let verdict = if c.report.passed { "pass" } else { "FAIL" };
            if !c.report.passed {
                failed += 1;
            }
            writeln!(
                out,
                "{:<24} {:>6} {:>10.3e} {:>10.1e} {:>7}  {verdict}",
                c.name, c.seed, c.report.max_rel_error, c.tolerance, c.report.coords_checked
            )?;
        }
    }
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}

fn train(steps: usize, seed: u64, lr: f64, out: &mut dyn Write) -> Outcome {
    let demo = train_demo(steps, seed, lr)?;
    writeln!(
        out,
        "VAN-micro, {DEMO_BATCH} images {DEMO_EXTENT}x{DEMO_EXTENT}, 2 classes, lr {lr}"
    )?;
    writeln!(out, "{:>6} {:>12}", "step", "loss")?;
    for (i, l) in demo.losses.iter().enumerate() {
        writeln!(out, "{i:>6} {l:>12.6}")?;
    }
    let first = demo.losses[0];
    let last = demo.losses[demo.losses.len() - 1];
    writeln!(out)?;
    writeln!(out, "initial      {first:.6}")?;
    writeln!(out, "final        {last:.6}")?;
    writeln!(out, "ratio        {:.6}", last / first)?;
    Ok(())
}

fn init(v: &VanVariant, seed: u64, path: &std::path::Path, out: &mut dyn Write) -> Outcome {
    let model = build_van::<f32>(v, seed)?;
    save_checkpoint(&model, path)?;
    writeln!(
        out,
        "wrote {} tensors, {} parameters to {}",
        model.tensor_count(),
        model.parameter_count(),
        path.display()
    )?;
    Ok(())
}
