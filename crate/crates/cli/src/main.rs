use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pvcurtail::sweep::{sweep, GridAxis};
use pvcurtail::{run, RunConfig};
use pvcurtail_core::mprt::Method;
use pvcurtail_core::scenario::{Fidelity, ReferenceSeries};

#[derive(Parser)]
#[command(
    name = "pvcurtail",
    version,
    about = "PV power-curtailment controller simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods.
    Run(Common),
    /// Run methods 1-3 side by side (a single configured method is expanded
    /// to all three).
    Compare(Common),
    /// Sweep controller fields, e.g. `--grid k_base=3e-5,6e-5`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        grid: Vec<GridAxis>,
    },
    /// Validate a config and print the resolved form.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write the scenario's irradiance and reference series as CSV.
    GenProfile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FidelityArg {
    Full,
    Reduced,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    fidelity: Option<FidelityArg>,
    /// Run only this method (1 = fixed, 2 = adaptive, 3 = proposed).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    method: Option<u8>,
}

impl Common {
    fn load(&self) -> Result<(RunConfig, PathBuf), String> {
        let mut cfg = RunConfig::load(&self.config).map_err(|e| e.to_string())?;
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(f) = self.fidelity {
            cfg.scenario.fidelity = match f {
                FidelityArg::Full => Fidelity::Full,
                FidelityArg::Reduced => Fidelity::Reduced,
            };
        }
        if let Some(n) = self.method {
            cfg.select_method(Method::from_number(n).expect("range checked by clap"));
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate().map_err(|e| e.to_string())?;
        let out = cfg.output.dir.clone();
        Ok((cfg, out))
    }
}

fn print_summary(runs: &[pvcurtail::MethodRun]) {
    println!(
        "{:<12} {:>10} {:>12} {:>10} {:>12} {:>12}",
        "label", "e_sum", "overshoot_kW", "duration_s", "osc_total_V", "energy_res"
    );
    for r in runs {
        let s = &r.summary;
        println!(
            "{:<12} {:>10.5} {:>12.2} {:>10.1} {:>12.1} {:>12.2e}",
            r.label,
            s.e_sum,
            s.max_overshoot / 1e3,
            s.overshoot_duration,
            s.total_oscillation(),
            r.energy_residual
        );
    }
}

fn write_reference(path: &Path, r: &ReferenceSeries) -> Result<(), String> {
    let mut w = csv::Writer::from_path(path).map_err(|e| e.to_string())?;
    w.write_record(["t_s", "p_ref_w"])
        .map_err(|e| e.to_string())?;
    for (t, p) in r.t.iter().zip(&r.p_ref) {
        w.write_record([t.to_string(), p.to_string()])
            .map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(common) => {
            let (cfg, out) = common.load()?;
            let result = run(&cfg, &out).map_err(|e| e.to_string())?;
            print_summary(&result.runs);
            println!("artifacts in {}", out.display());
        }
        Command::Compare(common) => {
            let (mut cfg, out) = common.load()?;
            if cfg.methods.len() == 1 && common.method.is_none() {
                cfg.expand_to_all_methods();
            }
            let result = run(&cfg, &out).map_err(|e| e.to_string())?;
            print_summary(&result.runs);
            println!("artifacts in {}", out.display());
        }
        Command::Sweep { common, grid } => {
            let (cfg, out) = common.load()?;
            let points = sweep(&cfg, &grid, &out).map_err(|e| e.to_string())?;
            for p in &points {
                let values: Vec<String> =
                    p.values.iter().map(|(f, v)| format!("{f}={v}")).collect();
                println!("point {} ({}):", p.index, values.join(", "));
                print_summary(&p.runs);
            }
            println!("sweep table in {}", out.join("sweep.csv").display());
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            print!("{}", cfg.to_toml());
        }
        Command::GenProfile { config, seed, out } => {
            let mut cfg = RunConfig::load(&config).map_err(|e| e.to_string())?;
            if let Some(seed) = seed {
                cfg.scenario.seed = seed;
            }
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let array = cfg.array.build().map_err(|e| e.to_string())?;
            let inputs = cfg.scenario.build(&array).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| format!("{}: {e}", out.display()))?;
            inputs
                .irradiance
                .write_csv(&out.join("irradiance.csv"))
                .map_err(|e| e.to_string())?;
            write_reference(&out.join("reference.csv"), &inputs.reference)?;
            println!(
                "wrote {} irradiance and {} reference samples to {}",
                inputs.irradiance.len(),
                inputs.reference.t.len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
