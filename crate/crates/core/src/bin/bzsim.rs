use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bloch_zener::acceptance::{run_battery, tb_relative_error, AcceptanceOptions};
use bloch_zener::experiments::{run_experiment, ExperimentConfig, ExperimentKind, RunManifest};
use bloch_zener::parallel::Execution;
use bloch_zener::tight_binding::{TBGaussian, TBModel};
use bloch_zener::{solve_bands, BlochProblem, Error, Preset, ScaledParams};

#[derive(Parser)]
#[command(name = "bzsim", version, about = "Bloch-Zener matter-wave simulations")]
struct Cli {
    /// Evaluate sweeps and band meshes on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Check the new outputs against the checksums of the previous
        /// manifest in the output directory.
        #[arg(long)]
        verify: bool,
    },
    /// Write the band structure as CSV.
    Bands {
        #[arg(long, allow_hyphen_values = true)]
        eps: f64,
        #[arg(long, default_value_t = 2.828)]
        hbar: f64,
        #[arg(long, default_value_t = 4)]
        n_bands: usize,
        #[arg(long, default_value_t = BlochProblem::DEFAULT_CUTOFF)]
        cutoff: usize,
        #[arg(long, default_value_t = BlochProblem::DEFAULT_MESH)]
        mesh: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the closed-form tight-binding moments with the direct oracle.
    TbCheck,
    /// Run the acceptance battery.
    Accept {
        #[arg(long)]
        quick: bool,
    },
    /// List control presets and experiments.
    Presets,
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let execution = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match cli.command {
        Command::Run { config, verify } => run_config(config, verify, execution),
        Command::Bands { eps, hbar, n_bands, cutoff, mesh, out } => {
            bands(eps, hbar, n_bands, cutoff, mesh, out, execution)
        }
        Command::TbCheck => tb_check(),
        Command::Accept { quick } => {
            let results = run_battery(&AcceptanceOptions { quick, execution }, |r| println!("{}", r.line()));
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::Presets => {
            println!("control presets:");
            for p in Preset::ALL {
                println!("  {:<14} {}", p.name(), p.description());
            }
            println!("experiments:");
            for k in ExperimentKind::ALL {
                let sweep = k.default_sweep().map_or(String::new(), |s| {
                    format!(" (sweeps {} from {} to {}, {} points)", s.variable.name(), s.start, s.stop, s.n)
                });
                println!("  {}{sweep}", k.name());
            }
            Ok(ExitCode::SUCCESS)
        }
    };
    result.unwrap_or_else(|e| exit_for(&e))
}

fn run_config(path: PathBuf, verify: bool, execution: Execution) -> bloch_zener::Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_file(&path).map_err(|e| match e {
        Error::Io(io) => Error::InvalidParameter(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    cfg.execution = execution;
    let previous = if verify { RunManifest::read(&cfg.output_dir).ok() } else { None };
    let manifest = run_experiment(&cfg)?;
    println!(
        "{}: {} files in {} ({:.1}s)",
        cfg.kind,
        manifest.files.len(),
        cfg.output_dir.display(),
        manifest.wall_time
    );
    if verify {
        let mut bad = manifest.verify(&cfg.output_dir)?;
        match previous {
            Some(prev) => {
                for (name, sum) in &prev.files {
                    let now = manifest.files.iter().find(|f| &f.0 == name).map(|f| &f.1);
                    if now != Some(sum) {
                        bad.push(name.clone());
                    }
                }
                println!("verify: compared {} files against the previous manifest", prev.files.len());
            }
            None => println!("verify: no previous manifest, checked the new one"),
        }
        if !bad.is_empty() {
            eprintln!("verify: checksum mismatch in {}", bad.join(", "));
            return Ok(ExitCode::from(2));
        }
        println!("verify: ok");
    }
    Ok(ExitCode::SUCCESS)
}

fn bands(
    eps: f64,
    hbar: f64,
    n_bands: usize,
    cutoff: usize,
    mesh: usize,
    out: PathBuf,
    execution: Execution,
) -> bloch_zener::Result<ExitCode> {
    let params = ScaledParams { hbar, eps, ..ScaledParams::default() };
    params.validate()?;
    let problem = BlochProblem::new(params).with_cutoff(cutoff).with_mesh_size(mesh).with_execution(execution);
    let table = solve_bands(&problem, n_bands)?;
    let file = fs::File::create(&out)
        .map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", out.display())))?;
    table.write_csv(BufWriter::new(file))?;
    println!(
        "{} bands on {} κ points -> {}; zone-edge gap 0-1 = {:.3e}",
        n_bands,
        mesh,
        out.display(),
        table.edge_gap_01()
    );
    Ok(ExitCode::SUCCESS)
}

fn tb_check() -> bloch_zener::Result<ExitCode> {
    let p = ScaledParams::default();
    let delta = solve_bands(&BlochProblem::new(p), 2)?.ground_band_span();
    let tb = p.bloch_time()?;
    let models = [
        ("constant", TBModel::constant(delta, p.hbar, p.force, 3.0 * tb)?),
        ("single-flip", TBModel::single_flip(delta, p.hbar, p.force, 0.5 * tb, 3.0 * tb)?),
        ("shuttle", TBModel::shuttle(delta, p.hbar, p.force, 3)?),
    ];
    let mut worst: f64 = 0.0;
    println!("{:<12} {:>8} {:>8} {:>12}", "profile", "sigma_n", "t/T_B", "rel error");
    for sigma in [4.0, 10.0] {
        let state = TBGaussian::new(sigma)?;
        for (name, model) in &models {
            for frac in [0.5, 1.0, 3.0] {
                let err = tb_relative_error(model, &state, frac * tb)?;
                worst = worst.max(err);
                println!("{name:<12} {sigma:>8} {frac:>8} {err:>12.3e}");
            }
        }
    }
    println!("worst relative error {worst:.3e} (tolerance 1e-8)");
    Ok(if worst <= 1e-8 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
