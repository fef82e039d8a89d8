//! `vvca`: sample valuations, train and evaluate VVCA mechanisms, and run
//! the case-study surfaces and verification suite.
//!
//! Exit status: 0 on success, 1 when a check or run fails, 2 on usage or
//! configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vvca_core::baselines::item_myerson_revenue_stream;
use vvca_core::config::{print_config_defaults, RunConfig};
use vvca_core::harness::{
    self, case_study_grid, smoothing_sweep, surface_csv, verify_suite, LambdaCoordinate, Method, Mutation, Scale,
};
use vvca_core::mechanism::{evaluate_stream, VvcaParams};
use vvca_core::optimizer::eval_seed_for;
use vvca_core::{sample_batch, AuctionSize, BundleMask, Error, SettingId};

#[derive(Parser)]
#[command(name = "vvca", version, about = "Virtual valuations combinatorial auctions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self, extra: &[String]) -> Result<RunConfig, Error> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        match &self.config {
            Some(path) => RunConfig::load(path, &overrides),
            None => RunConfig::from_overrides(&overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw a valuation batch and write it in the binary batch format.
    Sample {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of profiles.
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the configured experiment and write run directories.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a mechanism on a held-out sample.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Mechanism to evaluate; overrides the configured method.
        #[arg(long)]
        method: Option<String>,
        /// Saved parameters to evaluate instead of running the method.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Case-study surface over singleton and grand-bundle boosts (2x2 only).
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 81)]
        grid_n: usize,
        #[arg(long, value_parser = parse_range, default_value = "-1,1")]
        x_range: (f64, f64),
        #[arg(long, value_parser = parse_range, default_value = "-1,1")]
        y_range: (f64, f64),
        #[arg(long)]
        out: PathBuf,
    },
    /// Smoothing sweep along one boost coordinate, VCG elsewhere.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        bidder: usize,
        /// Bundle as a bitmask over items.
        #[arg(long, default_value_t = 3)]
        bundle: u32,
        #[arg(long, value_parser = parse_range, default_value = "-1,1")]
        range: (f64, f64),
        #[arg(long, default_value_t = 201)]
        points: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.003,0.01")]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        directions: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-module property suite.
    Verify {
        #[arg(long, default_value = "quick")]
        scale: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the tabulated defaults for a setting and size as a config file.
    Defaults {
        #[arg(long)]
        setting: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
    },
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(Error),
    Run(Error),
    Check,
}

impl Failure {
    fn from_core(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidSize(_)
            | Error::UnknownSetting(_)
            | Error::UnknownMethod(_)
            | Error::UnsupportedSetting { .. } => Failure::Usage(e),
            other => Failure::Run(other),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from_core(e)
    }
}

fn write_output(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Run(e.into()))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Run(e.into()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Sample { config, count, out } => {
            let c = config.load(&[])?;
            let batch = sample_batch(c.setting, c.size, count, c.seed)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Failure::Run(e.into()))?;
            }
            batch.save(&out)?;
            println!(
                "wrote {count} profiles ({} {}, seed {}) to {}",
                c.setting,
                c.size,
                c.seed,
                out.display()
            );
        }
        Command::Train { config } => {
            let c = config.load(&[])?;
            let report = harness::run_experiment(&c.experiment())?;
            for r in &report.runs {
                println!("run {} seed {} revenue {:.6}", r.run, r.seed, r.revenue);
            }
            println!(
                "{} {} {}: mean {:.6} std {:.6} over {} runs -> {}",
                c.method,
                c.setting,
                c.size,
                report.mean,
                report.std,
                report.runs.len(),
                c.output_dir.join(&c.name).display()
            );
        }
        Command::Evaluate { config, method, params } => {
            let extra: Vec<String> = method.iter().map(|m| format!("method={m}")).collect();
            let c = config.load(&extra)?;
            let eval_seed = eval_seed_for(c.seed);
            match params {
                Some(path) => {
                    let (p, _) = VvcaParams::load(&path)?;
                    let e = evaluate_stream(c.setting, &p, c.eval_size, eval_seed)?;
                    let b = e.breakdown;
                    println!(
                        "params {} {} {}: mean {:.6} (se {:.6}) Z {:.6} F {:.6}",
                        path.display(),
                        c.setting,
                        c.size,
                        b.r_mean,
                        e.revenue_std_error,
                        b.z_mean,
                        b.f_mean
                    );
                }
                None if c.method == Method::Vcg => {
                    let p = VvcaParams::zeros(c.size);
                    let e = evaluate_stream(c.setting, &p, c.eval_size, eval_seed)?;
                    println!(
                        "vcg {} {}: mean {:.6} (se {:.6}) over {} profiles",
                        c.setting, c.size, e.breakdown.r_mean, e.revenue_std_error, c.eval_size
                    );
                }
                None if c.method == Method::ItemMyerson => {
                    let r = item_myerson_revenue_stream(c.setting, c.size, c.eval_size, eval_seed)?;
                    println!(
                        "item_myerson {} {}: mean {r:.6} over {} profiles",
                        c.setting, c.size, c.eval_size
                    );
                }
                None => {
                    return Err(Failure::Usage(Error::Config(format!(
                        "evaluate needs --params for trained method {}",
                        c.method
                    ))))
                }
            }
        }
        Command::Grid {
            config,
            batch_size,
            grid_n,
            x_range,
            y_range,
            out,
        } => {
            let c = config.load(&[])?;
            let size = AuctionSize::new(2, 2)?;
            if c.size != size {
                return Err(Failure::Usage(Error::Config(format!(
                    "grid needs n=2, m=2, got {}",
                    c.size
                ))));
            }
            let batch = sample_batch(c.setting, size, batch_size, c.seed)?;
            let rows = case_study_grid(x_range, y_range, grid_n, &batch)?;
            write_output(&out, &surface_csv(&rows))?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Sweep {
            config,
            bidder,
            bundle,
            range,
            points,
            sigmas,
            directions,
            batch_size,
            out,
        } => {
            let c = config.load(&[])?;
            let batch = sample_batch(c.setting, c.size, batch_size, c.seed)?;
            let coordinate = LambdaCoordinate {
                bidder,
                bundle: BundleMask(bundle),
            };
            let values = harness::linspace(range.0, range.1, points);
            let table = smoothing_sweep(
                &VvcaParams::zeros(c.size),
                coordinate,
                &values,
                &sigmas,
                &batch,
                directions,
                c.seed,
            )
            .map_err(|e| match e {
                Error::OutOfRange { .. } => Failure::Usage(e),
                other => Failure::from_core(other),
            })?;
            write_output(&out, &table.to_csv())?;
            let dev = table.max_deviation();
            println!(
                "wrote {} rows to {}; max |Zs - Z| per sigma {dev:?}",
                table.rows.len(),
                out.display()
            );
        }
        Command::Verify { scale, seed } => {
            let scale: Scale = scale.parse()?;
            let report = verify_suite(scale, Mutation::None, seed)?;
            print!("{report}");
            if !report.passed() {
                return Err(Failure::Check);
            }
        }
        Command::Defaults { setting, n, m } => {
            let setting: SettingId = setting.parse()?;
            print!("{}", print_config_defaults(setting, AuctionSize::new(n, m)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
