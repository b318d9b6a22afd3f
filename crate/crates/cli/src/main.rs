//! `wlquant` command-line tool.
//!
//! Exit status: 0 on success, 1 when `verify` finds a failing check, 2 on
//! usage, parse or I/O errors.

mod masters;
mod verify;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use wlquant::bench::{bench_kernels, write_csv, BenchConfig};
use wlquant::kernels::{
    dense_apply, lut_infer_layer_with, mf_infer_layer_with, ActivationVector, LutLayer, ScaleOrder,
    StageExecutor,
};
use wlquant::packing::{
    code_payload_bits, read_container, read_layer, read_real_checkpoint, write_container, write_layer,
    write_real_checkpoint, TensorEntry, LAYER_HEADER_LEN,
};
use wlquant::qat::{write_trace_csv, ToyTrainConfig};
use wlquant::residual::{residual_quantize, stage_error_report, QuantizedLayer};
use wlquant::schedule::Preset;
use wlquant::synth;
use wlquant::toy::{LayerKind, ToyBlockConfig};
use wlquant::widely_linear::{pair_real_vector, real_to_widely_linear, stack_complex_vector};

#[derive(Parser, Debug)]
#[command(name = "wlquant", version, about = "Widely-linear conversion and 2-bit phase quantization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert a real checkpoint into widely-linear master weights.
    Convert {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Probe vectors per layer for the equivalence report.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Quantize master weights into one `.fwl` file per layer.
    Quantize {
        #[arg(short, long)]
        input: PathBuf,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        /// Residual stages.
        #[arg(short = 't', long, default_value_t = 2, value_parser = clap::value_parser!(u16).range(1..))]
        stages: u16,
    },
    /// Check a real checkpoint against its quantized layers.
    Verify {
        /// Real checkpoint the layers were converted from.
        #[arg(long)]
        real: PathBuf,
        /// Directory of `.fwl` files.
        #[arg(long)]
        fwl: PathBuf,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Absolute tolerance of the equivalence check.
        #[arg(long, default_value_t = 1e-10)]
        tolerance: f64,
        /// Relative tolerance of the conversion roundtrip.
        #[arg(long, default_value_t = 1e-15)]
        roundtrip_tolerance: f64,
        /// Relative tolerance of the kernel-vs-dense check.
        #[arg(long, default_value_t = 1e-9)]
        kernel_tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Print a JSON summary instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Apply a quantized layer to every vector in a container.
    Infer {
        #[arg(long)]
        fwl: PathBuf,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Kernel::Mf)]
        kernel: Kernel,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Time and count operations of the matvec paths; writes CSV.
    Bench {
        /// Complex layer shapes, e.g. `256x256,1024x1024`.
        #[arg(long, value_delimiter = ',', default_value = "256x256")]
        sizes: Vec<String>,
        #[arg(short = 't', long, value_delimiter = ',', default_value = "1,2,3")]
        stages: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train the toy block under the LR1, LR2 and LR3 schedules.
    TrainToy {
        /// Key-value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for `LR1.csv`, `LR2.csv`, `LR3.csv`.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(short = 't', long)]
        stages: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a random seven-projection toy checkpoint.
    ToyCheckpoint {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 16)]
        model_dim: usize,
        #[arg(long, default_value_t = 8)]
        head_dim: usize,
        #[arg(long, default_value_t = 2)]
        n_heads: usize,
        #[arg(long, default_value_t = 32)]
        ffn_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kernel {
    Dense,
    Mf,
    Lut,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => bail!("no such input: {}", path.display()),
        Err(e) => Err(e).with_context(|| format!("opening {}", path.display())),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (n, m) = s.split_once('x').with_context(|| format!("size {s:?} is not NxM"))?;
    Ok((n.trim().parse()?, m.trim().parse()?))
}

pub(crate) fn fwl_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.fwl"))
}

pub(crate) fn probe(rng: &mut synth::SynthRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| synth::gaussian(rng)).collect()
}

fn cmd_convert(input: &Path, output: &Path, samples: usize, seed: u64) -> Result<()> {
    let tensors = read_real_checkpoint(open(input)?).context("reading checkpoint")?;
    let mut rng = synth::rng(seed);
    let mut entries = Vec::new();
    println!("{:<24} {:>11} {:>11} {:>8} {:>12}", "layer", "real", "complex", "padded", "max_err");
    for (name, r) in &tensors {
        let layer = real_to_widely_linear(r);
        let mut err: f64 = 0.0;
        for _ in 0..samples {
            let x = probe(&mut rng, r.cols());
            let want = r.matvec(&x)?;
            let got = layer.apply_real(&x)?;
            err = want.iter().zip(&got).map(|(a, b)| (a - b).abs()).fold(err, f64::max);
        }
        let (n, m) = layer.shape();
        let pads = match (layer.padded_out, layer.padded_in) {
            (false, false) => "-",
            (true, false) => "out",
            (false, true) => "in",
            (true, true) => "out,in",
        };
        println!(
            "{name:<24} {:>11} {:>11} {pads:>8} {err:>12.3e}",
            format!("{}x{}", r.rows(), r.cols()),
            format!("{n}x{m}"),
        );
        entries.extend(masters::to_entries(name, &layer)?);
    }
    let mut out = create(output)?;
    write_container(&entries, &mut out)?;
    out.flush()?;
    println!("wrote {} layers to {}", tensors.len(), output.display());
    Ok(())
}

fn cmd_quantize(input: &Path, output: &Path, stages: usize) -> Result<()> {
    let layers = masters::from_entries(&read_container(open(input)?).context("reading masters")?)?;
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let (mut code_bits, mut params, mut file_bytes) = (0usize, 0usize, 0usize);
    for (name, layer) in &layers {
        let q = residual_quantize(layer, stages)?;
        let path = fwl_path(output, name);
        let mut f = create(&path)?;
        file_bytes += write_layer(&q, &mut f)?;
        f.flush()?;
        let (n, m) = q.shape();
        code_bits += code_payload_bits(n, m, stages);
        params += q.real_param_count();

        println!("{name}  ({n}x{m} complex, T={stages})");
        println!("  {:>5} {:>12} {:>12} {:>12}", "stage", "|R_U|", "|R_W|", "total");
        for e in stage_error_report(layer, stages)? {
            println!("  {:>5} {:>12.5e} {:>12.5e} {:>12.5e}", e.stage, e.u_error, e.w_error, e.total);
        }
    }
    let header_bits = LAYER_HEADER_LEN * 8 * layers.len();
    let scale_bits = file_bytes * 8 - code_bits - header_bits;
    println!(
        "bits per real parameter: {:.2} codes + metadata {header_bits} header bits, {scale_bits} scale bits",
        code_bits as f64 / params as f64,
    );
    Ok(())
}

fn read_fwl(path: &Path) -> Result<QuantizedLayer> {
    read_layer(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn cmd_infer(fwl: &Path, input: &Path, output: &Path, kernel: Kernel, threads: usize) -> Result<()> {
    let q = read_fwl(fwl)?;
    let (n, m) = q.shape();
    let exec = StageExecutor::new(threads)?;
    let lut = (kernel == Kernel::Lut).then(|| LutLayer::from_layer(&q));
    let dense = (kernel == Kernel::Dense).then(|| q.reconstruct());
    let mut out = Vec::new();
    for e in read_container(open(input)?).context("reading activations")? {
        // [2, m] is a complex vector as planes; [real_in] is a real vector.
        let (x, real) = match e.shape.as_slice() {
            [2, len] if *len == m => {
                let v: Vec<f64> = e.data.iter().map(|&v| f64::from(v)).collect();
                (ActivationVector::new(v[..m].to_vec(), v[m..].to_vec())?, false)
            }
            [len] if *len == q.real_in_dim => {
                let v: Vec<f64> = e.data.iter().map(|&v| f64::from(v)).collect();
                (ActivationVector::from_column(&pair_real_vector(&v))?, true)
            }
            other => bail!(
                "activation {} has shape {other:?}; expected [2, {m}] or [{}]",
                e.name,
                q.real_in_dim
            ),
        };
        let y = match kernel {
            Kernel::Mf => mf_infer_layer_with(&q, &x, &exec, ScaleOrder::PerStage)?,
            Kernel::Lut => lut_infer_layer_with(lut.as_ref().expect("built for lut"), &x, &exec)?,
            Kernel::Dense => dense_apply(dense.as_ref().expect("built for dense"), &x)?,
        };
        let entry = if real {
            let mut v = stack_complex_vector(&y.to_column());
            v.truncate(q.real_out_dim);
            TensorEntry::new(&e.name, vec![v.len()], v.iter().map(|&v| v as f32).collect())?
        } else {
            let data = y.re.iter().chain(&y.im).map(|&v| v as f32).collect();
            TensorEntry::new(&e.name, vec![2, n], data)?
        };
        out.push(entry);
    }
    let mut f = create(output)?;
    write_container(&out, &mut f)?;
    f.flush()?;
    Ok(())
}

fn cmd_bench(
    sizes: &[String],
    stages: &[usize],
    repeats: usize,
    threads: usize,
    seed: u64,
    output: Option<&Path>,
) -> Result<()> {
    if stages.contains(&0) {
        bail!("stage counts must be >= 1");
    }
    let cfg = BenchConfig {
        sizes: sizes.iter().map(|s| parse_size(s)).collect::<Result<_>>()?,
        stages: stages.to_vec(),
        repeats,
        threads,
        seed,
    };
    let rows = bench_kernels(&cfg)?;
    match output {
        Some(p) => {
            let mut f = create(p)?;
            write_csv(&rows, &mut f)?;
            f.flush()?;
        }
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_train_toy(
    config: Option<&Path>,
    output: &Path,
    steps: Option<usize>,
    stages: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => anyhow::anyhow!("no such input: {}", p.display()),
                _ => anyhow::Error::new(e),
            })?;
            ToyTrainConfig::parse(&text)?
        }
        None => ToyTrainConfig::default(),
    };
    if let Some(s) = steps {
        cfg.qat.steps = s;
    }
    if let Some(t) = stages {
        cfg.qat.stages = (t > 0).then_some(t);
    }
    if let Some(s) = seed {
        cfg.qat.seed = s;
        cfg.block.seed = s.wrapping_add(1);
        cfg.task_seed = s.wrapping_add(2);
    }
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    for preset in Preset::ALL {
        let report = cfg.run_preset(preset)?;
        let path = output.join(format!("{}.csv", preset.name()));
        let mut f = create(&path)?;
        write_trace_csv(&report.trace, &mut f)?;
        f.flush()?;
        println!(
            "{}: eval loss {:.5} -> {:.5}  ({})",
            preset.name(),
            report.initial_eval,
            report.final_eval,
            path.display()
        );
    }
    Ok(())
}

fn cmd_toy_checkpoint(output: &Path, cfg: ToyBlockConfig) -> Result<()> {
    cfg.validate()?;
    let tensors: Vec<_> = LayerKind::ALL
        .iter()
        .zip(cfg.random_weights(1.0))
        .map(|(k, w)| (k.name().to_string(), w))
        .collect();
    let mut f = create(output)?;
    write_real_checkpoint(&tensors, &mut f)?;
    f.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Convert {
            input,
            output,
            samples,
            seed,
        } => cmd_convert(&input, &output, samples, seed)?,
        Command::Quantize { input, output, stages } => cmd_quantize(&input, &output, stages.into())?,
        Command::Verify {
            real,
            fwl,
            samples,
            tolerance,
            roundtrip_tolerance,
            kernel_tolerance,
            seed,
            threads,
            json,
        } => {
            let tol = verify::Tolerances {
                equivalence: tolerance,
                roundtrip: roundtrip_tolerance,
                kernel: kernel_tolerance,
            };
            return verify::cmd_verify(&real, &fwl, samples, tol, seed, threads, json);
        }
        Command::Infer {
            fwl,
            input,
            output,
            kernel,
            threads,
        } => cmd_infer(&fwl, &input, &output, kernel, threads)?,
        Command::Bench {
            sizes,
            stages,
            repeats,
            threads,
            seed,
            output,
        } => cmd_bench(&sizes, &stages, repeats, threads, seed, output.as_deref())?,
        Command::TrainToy {
            config,
            output,
            steps,
            stages,
            seed,
        } => cmd_train_toy(config.as_deref(), &output, steps, stages, seed)?,
        Command::ToyCheckpoint {
            output,
            model_dim,
            head_dim,
            n_heads,
            ffn_dim,
            seed,
        } => cmd_toy_checkpoint(
            &output,
            ToyBlockConfig {
                model_dim,
                head_dim,
                n_heads,
                ffn_dim,
                seed,
            },
        )?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("256x128").unwrap(), (256, 128));
        assert!(parse_size("256").is_err());
        assert!(parse_size("ax2").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
