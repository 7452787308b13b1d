use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use desorb::control::FeedbackSource;
use desorb::harness::{execute, replay, write_manifest, GainRange, Invocation};
use desorb::scenario::{
    load_scenario, parse_gain_pair, parse_gain_schedule, parse_quantity, Dimension, Scenario,
};
use desorb::simulate::SensorKind;
use desorb::{Error, Result};

/// Secondary-drying simulation, state estimation and observer design.
#[derive(Parser)]
#[command(name = "desorb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file or preset name.
    #[arg(long, default_value = "default")]
    scenario: String,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling period, e.g. `10` or `10 s`.
    #[arg(long)]
    sampling_period: Option<String>,
    /// 3σ of the temperature noise, e.g. `5` or `5 K`.
    #[arg(long = "noise-3sigma")]
    noise_three_sigma: Option<String>,
    /// Observer gains `LT,LC`.
    #[arg(long, allow_hyphen_values = true)]
    gains: Option<String>,
    /// `LT1,LC1:LT2,LC2@switch` with switch like `4tau` or `1.5 h`.
    #[arg(long, allow_hyphen_values = true)]
    gain_schedule: Option<String>,
    #[arg(long, value_parser = ["full", "bottom"])]
    sensor: Option<String>,
    /// Stop once the average concentration reaches this value.
    #[arg(long)]
    until_dry: Option<f64>,
    /// Initial concentration guess of the observer.
    #[arg(long)]
    init_cs: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Plant simulation with sampled measurements.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Observer run against a simulated plant or a measurement file.
    Observe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Eigen-analysis of the linearized error dynamics.
    Design {
        #[command(flatten)]
        common: Common,
    },
    /// Convergence-time map over a gain grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `from:to:points`, log-spaced.
        #[arg(long, allow_hyphen_values = true, default_value = "-1e-8:-1e-4:9")]
        lt_range: String,
        #[arg(long, allow_hyphen_values = true, default_value = "1e-8:1e-6:9")]
        lc_range: String,
        #[arg(long, value_parser = ["eigen", "simulation", "both"], default_value = "eigen")]
        method: String,
    },
    /// Closed-loop volumetric heating.
    Control {
        #[command(flatten)]
        common: Common,
        /// Proportional gain, W/(m³·K).
        #[arg(long)]
        controller_gain: Option<String>,
        /// Product temperature limit, e.g. `313.15` or `40 C`.
        #[arg(long)]
        upper_limit: Option<String>,
        #[arg(long, value_parser = ["estimate", "measurement"])]
        feedback: Option<String>,
    },
    /// Fit parameters to data files.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV (`t_s,<channel>`); repeat for joint fits.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Comma-separated parameters: h, Ea, A.
        #[arg(long, default_value = "h", value_delimiter = ',')]
        fit: Vec<String>,
        #[arg(long, default_value_t = 200)]
        budget: usize,
    },
    /// Re-run a recorded manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run(cli, &args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli, args: &[String]) -> Result<()> {
    let (common, inv) = match cli.command {
        Command::Replay { manifest, out_dir } => {
            let report = replay(&manifest, &out_dir, args)?;
            return summarize(&out_dir, &report.results);
        }
        Command::Simulate { common } => (common, Invocation::Simulate),
        Command::Observe {
            common,
            measurements,
        } => (
            common,
            Invocation::Observe {
                measurements: measurements.map(|p| absolute(&p)).transpose()?,
            },
        ),
        Command::Design { common } => (common, Invocation::Design),
        Command::Sweep {
            common,
            lt_range,
            lc_range,
            method,
        } => (
            common,
            Invocation::Sweep {
                temperature_gains: lt_range.parse::<GainRange>()?,
                concentration_gains: lc_range.parse::<GainRange>()?,
                methods: match method.as_str() {
                    "both" => vec!["eigen".into(), "simulation".into()],
                    m => vec![m.into()],
                },
            },
        ),
        Command::Control {
            common,
            controller_gain,
            upper_limit,
            feedback,
        } => {
            let mut scenario = resolve(&common)?;
            let mut cfg = scenario.controller.unwrap_or_default();
            if let Some(k) = controller_gain {
                cfg.controller.gain =
                    parse_quantity(&k, Dimension::ControllerGain, "--controller-gain")?;
            }
            if let Some(t) = upper_limit {
                cfg.controller.upper_limit =
                    parse_quantity(&t, Dimension::Temperature, "--upper-limit")?;
            }
            if let Some(f) = feedback {
                cfg.feedback = f.parse::<FeedbackSource>()?;
            }
            scenario.controller = Some(cfg);
            return finish(&scenario, &Invocation::Control, &common.out_dir, args);
        }
        Command::Calibrate {
            common,
            data,
            fit,
            budget,
        } => (
            common,
            Invocation::Calibrate {
                data: data.iter().map(|p| absolute(p)).collect::<Result<_>>()?,
                fit,
                budget,
            },
        ),
    };
    let scenario = resolve(&common)?;
    finish(&scenario, &inv, &common.out_dir, args)
}

fn finish(scenario: &Scenario, inv: &Invocation, out_dir: &Path, args: &[String]) -> Result<()> {
    let report = execute(scenario, inv, out_dir)?;
    write_manifest(out_dir, scenario, inv, &report, args)?;
    summarize(out_dir, &report.results)
}

fn summarize(out_dir: &Path, results: &toml::Table) -> Result<()> {
    for (k, v) in results {
        println!("{k} = {v}");
    }
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

/// Scenario with command-line overrides applied. The sensor goes first so
/// that explicit gains are not reset by a sensor change.
fn resolve(c: &Common) -> Result<Scenario> {
    let mut s = load_scenario(&c.scenario)?;
    if let Some(sensor) = &c.sensor {
        s.set_sensor(sensor.parse::<SensorKind>()?);
    }
    if let Some(seed) = c.seed {
        s.seed = seed;
    }
    if let Some(p) = &c.sampling_period {
        s.measurement.sampling_period = parse_quantity(p, Dimension::Time, "--sampling-period")?;
    }
    if let Some(n) = &c.noise_three_sigma {
        s.measurement.noise_three_sigma =
            parse_quantity(n, Dimension::TemperatureDifference, "--noise-3sigma")?;
    }
    if let Some(g) = &c.gains {
        let (lt, lc) = parse_gain_pair(g)?;
        s.observer.temperature_gain = lt;
        s.observer.concentration_gain = lc;
        s.observer.schedule = None;
    }
    if let Some(g) = &c.gain_schedule {
        let ((lt, lc), schedule) = parse_gain_schedule(g)?;
        s.observer.temperature_gain = lt;
        s.observer.concentration_gain = lc;
        s.observer.schedule = Some(schedule);
    }
    if let Some(th) = c.until_dry {
        s.run.dry_threshold = Some(th);
    }
    if let Some(c0) = c.init_cs {
        s.observer.initial_concentration = c0;
    }
    s.validate()?;
    Ok(s)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(Error::from)
}
