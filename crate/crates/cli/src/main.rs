use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvusim_core::codegen::{compile, CompiledProgram, Mode};
use mvusim_core::controller::{assemble, disassemble};
use mvusim_core::exec::ExecPolicy;
use mvusim_core::ir::{Model, ModelIR};
use mvusim_core::perf::estimate_model;
use mvusim_core::sim::simulate_traced;
use mvusim_core::tensor_io::TensorFile;
use mvusim_core::verify::{trial_input, verify, VerifyOptions};
use mvusim_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mvusim", version, about = "Compiler and cycle-level simulator for a bit-serial MVU array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a model into a program directory.
    Compile {
        model: PathBuf,
        #[arg(long, default_value = "pipelined")]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Override activation/weight widths, e.g. `4/4`.
        #[arg(long)]
        precision: Option<String>,
    },
    /// Run a compiled program on an input tensor.
    Simulate {
        dir: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Write one line per retired controller instruction.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Output tensor path [default: <dir>/output.bin]
        #[arg(long)]
        output: Option<PathBuf>,
        /// Cycle report path [default: <dir>/report.json]
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print the estimated cycle table of a model.
    Estimate {
        model: PathBuf,
        #[arg(long)]
        clock_mhz: Option<f64>,
        #[arg(long)]
        precision: Option<String>,
        /// Print JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Compare the simulator with the reference on random inputs.
    Verify {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value = "pipelined")]
        mode: Mode,
        #[arg(long)]
        precision: Option<String>,
        /// Run trials one after another.
        #[arg(long)]
        sequential: bool,
    },
    /// Write the random input `verify` uses for one trial.
    Input {
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        precision: Option<String>,
    },
    /// Assemble a controller program.
    Asm {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also print a disassembly listing.
        #[arg(long)]
        list: bool,
    },
}

fn parse_precision(s: &str) -> Result<(u32, u32)> {
    let bad = || Error::InvalidModel(format!("precision `{s}` is not of the form A/W"));
    let (a, w) = s.split_once('/').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn load_model(path: &Path, precision: Option<&str>) -> Result<Model> {
    let mut ir = ModelIR::load(path)?;
    if let Some(p) = precision {
        let (a, w) = parse_precision(p)?;
        ir = ir.with_precision(a, w)?;
    }
    ir.materialize()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Compile { model, mode, out, precision } => {
            let m = load_model(&model, precision.as_deref())?;
            let p = compile(&m, mode)?;
            p.write_dir(&out)?;
            println!(
                "compiled {} ({mode}): {} layers, {} segments, {} jobs -> {}",
                m.name,
                m.layers.len(),
                p.manifest.segments.len(),
                p.schedule.len(),
                out.display()
            );
        }
        Command::Simulate { dir, input, trace, output, report } => {
            let p = CompiledProgram::read_dir(&dir)?;
            let x = TensorFile::read(&input)?;
            if x.meta.shape != p.manifest.input_shape {
                return Err(Error::ShapeMismatch(format!(
                    "input shape {:?}, program expects {:?}",
                    x.meta.shape, p.manifest.input_shape
                )));
            }
            let r = match trace {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    let r = simulate_traced(&p, &x.values, Some(&mut w))?;
                    w.flush()?;
                    r
                }
                None => simulate_traced(&p, &x.values, None)?,
            };
            let out = TensorFile::new(p.manifest.output_shape.clone(), p.manifest.output_precision, r.output)?;
            out.write(&output.unwrap_or_else(|| dir.join("output.bin")))?;
            let report_path = report.unwrap_or_else(|| dir.join("report.json"));
            std::fs::write(report_path, serde_json::to_string_pretty(&r.report)? + "\n")?;
            println!("{}", r.report.table());
        }
        Command::Estimate { model, clock_mhz, precision, json } => {
            let m = load_model(&model, precision.as_deref())?;
            let clock = clock_mhz.map_or(m.clock_hz, |c| c * 1e6);
            let r = estimate_model(&m, clock)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("{}", r.table());
            }
        }
        Command::Verify { model, seed, trials, mode, precision, sequential } => {
            let m = load_model(&model, precision.as_deref())?;
            let policy = if sequential { ExecPolicy::Sequential } else { ExecPolicy::Parallel };
            let r = verify(&m, &VerifyOptions { seed, trials, mode, policy })?;
            println!("{}", r.summary());
            if !r.all_passed() {
                eprintln!(
                    "ERROR Mismatch: {} of {} trials differ from the reference",
                    r.trials.len() - r.passed(),
                    r.trials.len()
                );
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Input { model, seed, trial, out, precision } => {
            let m = load_model(&model, precision.as_deref())?;
            let first = m.layers.first().ok_or_else(|| Error::InvalidModel("model has no layers".into()))?;
            TensorFile::new(m.input_shape.clone(), first.prec_a, trial_input(&m, seed, trial))?.write(&out)?;
        }
        Command::Asm { file, out, list } => {
            let prog = assemble(&std::fs::read_to_string(&file)?)?;
            std::fs::write(&out, prog.to_bytes())?;
            if list {
                for (s, seg) in prog.segments.iter().enumerate() {
                    for (i, &w) in seg.iter().enumerate().filter(|(_, &w)| w != 0) {
                        println!("{s}:{:04x}  {w:08x}  {}", i * 4, disassemble(w));
                    }
                }
            }
            println!("{} segments -> {}", prog.segments.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::FAILURE
        }
    }
}
