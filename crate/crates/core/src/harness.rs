//! Command execution behind the `desorb` binary. Each command reads a
//! resolved [`Scenario`], writes CSV outputs into a directory and returns
//! headline results. A run manifest records the tool version, the scenario,
//! the command options and the results, which is enough to replay the run.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::calibration::{fit, Dataset, FitParameter, FitProblem, FreeParameter};
use crate::control::{run_closed_loop, ClosedLoopConfig, LoopObserver, MicrowaveController};
use crate::design::{
    design_space_sweep, error_dynamics, log_space, modal_contributions, nominal_linearization,
    time_constant, write_sweep_csv, SweepConfig, SweepMethod, DEFAULT_REFERENCE_HORIZON,
};
use crate::error::{Error, Result};
use crate::observer::{estimation_errors, initial_estimate, run_observer};
use crate::ode::IntegratorSettings;
use crate::scenario::Scenario;
use crate::simulate::{
    integrate, run_until_dry, sample_measurements, MeasurementSeries, Trajectory,
};

pub const MANIFEST_FILE: &str = "run_manifest.toml";

/// Log-spaced gain axis `from..to` with `points` values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl GainRange {
    pub fn values(&self) -> Vec<f64> {
        log_space(self.from, self.to, self.points)
    }
}

impl std::str::FromStr for GainRange {
    type Err = Error;

    /// `from:to:points`, e.g. `-1e-8:-1e-4:9`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::parse("gain range", format!("expected from:to:points, got '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let [a, b, n] = parts[..] else {
            return Err(bad());
        };
        let r = GainRange {
            from: a.trim().parse().map_err(|_| bad())?,
            to: b.trim().parse().map_err(|_| bad())?,
            points: n.trim().parse().map_err(|_| bad())?,
        };
        let same_sign = r.from != 0.0 && r.to != 0.0 && (r.from > 0.0) == (r.to > 0.0);
        if !(r.points >= 1 && same_sign && r.from.is_finite() && r.to.is_finite()) {
            return Err(Error::parse(
                "gain range",
                format!("'{s}' needs nonzero finite bounds of one sign and at least one point"),
            ));
        }
        Ok(r)
    }
}

/// A command and its options beyond the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Simulate,
    Observe {
        /// Measurement CSV to assimilate instead of a simulated plant.
        measurements: Option<PathBuf>,
    },
    Design,
    Sweep {
        temperature_gains: GainRange,
        concentration_gains: GainRange,
        /// `eigen`, `simulation` or both.
        methods: Vec<String>,
    },
    Control,
    Calibrate {
        data: Vec<PathBuf>,
        /// Parameter keys: `h`, `Ea`, `A`.
        fit: Vec<String>,
        budget: usize,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Simulate => "simulate",
            Invocation::Observe { .. } => "observe",
            Invocation::Design => "design",
            Invocation::Sweep { .. } => "sweep",
            Invocation::Control => "control",
            Invocation::Calibrate { .. } => "calibrate",
        }
    }
}

/// Headline results and the files written.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub results: Table,
    pub files: Vec<String>,
}

impl Report {
    fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.into(), value.into());
    }

    fn set_opt(&mut self, key: &str, value: Option<f64>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    fn create(&mut self, dir: &Path, name: &str) -> Result<BufWriter<File>> {
        self.files.push(name.into());
        Ok(BufWriter::new(File::create(dir.join(name))?))
    }
}

/// Runs `inv` on `scenario`, writing outputs into `out_dir` (created if
/// missing). The manifest is written separately by [`write_manifest`].
pub fn execute(scenario: &Scenario, inv: &Invocation, out_dir: &Path) -> Result<Report> {
    scenario.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let settings = IntegratorSettings::default();
    let mut report = Report::default();
    match inv {
        Invocation::Simulate => simulate(scenario, &settings, out_dir, &mut report)?,
        Invocation::Observe { measurements } => observe(
            scenario,
            measurements.as_deref(),
            &settings,
            out_dir,
            &mut report,
        )?,
        Invocation::Design => design(scenario, &settings, out_dir, &mut report)?,
        Invocation::Sweep {
            temperature_gains,
            concentration_gains,
            methods,
        } => {
            let methods = methods
                .iter()
                .map(|m| match m.as_str() {
                    "eigen" => Ok(SweepMethod::Eigen),
                    "simulation" => Ok(SweepMethod::Simulation),
                    _ => Err(Error::InvalidParameter(format!(
                        "unknown sweep method '{m}' (eigen or simulation)"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            let config = SweepConfig {
                temperature_gains: temperature_gains.values(),
                concentration_gains: concentration_gains.values(),
                sensor: scenario.observer.sensor,
                methods,
                initial_concentration: scenario.observer.initial_concentration,
                settings,
                ..SweepConfig::default()
            };
            let cells = design_space_sweep(&scenario.model, &scenario.shelf, &config)?;
            write_sweep_csv(&cells, report.create(out_dir, "sweep.csv")?)?;
            let times: Vec<f64> = cells.iter().filter_map(|c| c.convergence_time).collect();
            report.set("cells", cells.len() as i64);
            report.set(
                "stable_cells",
                cells.iter().filter(|c| c.stable).count() as i64,
            );
            report.set("converged_cells", times.len() as i64);
            if !times.is_empty() {
                report.set(
                    "min_convergence_time_s",
                    times.iter().copied().fold(f64::MAX, f64::min),
                );
                report.set(
                    "max_convergence_time_s",
                    times.iter().copied().fold(0.0, f64::max),
                );
            }
        }
        Invocation::Control => control(scenario, &settings, out_dir, &mut report)?,
        Invocation::Calibrate { data, fit, budget } => calibrate(
            scenario,
            data,
            fit,
            *budget,
            &settings,
            out_dir,
            &mut report,
        )?,
    }
    Ok(report)
}

/// Plant run: to the dry threshold when one is set, else for the fixed
/// duration. Returns the trajectory and the drying time.
fn plant_run(
    scenario: &Scenario,
    settings: &IntegratorSettings,
) -> Result<(Trajectory, Option<f64>)> {
    match scenario.run.dry_threshold {
        Some(th) => {
            let (traj, t_dry) = run_until_dry(
                &scenario.model,
                &scenario.shelf,
                th,
                settings,
                scenario.run.max_duration,
            )?;
            Ok((traj, Some(t_dry)))
        }
        None => Ok((
            integrate(
                &scenario.model,
                &scenario.shelf,
                (0.0, scenario.run.duration),
                settings,
            )?,
            None,
        )),
    }
}

fn simulate(
    s: &Scenario,
    settings: &IntegratorSettings,
    dir: &Path,
    rep: &mut Report,
) -> Result<()> {
    let (traj, t_dry) = plant_run(s, settings)?;
    traj.write_csv(rep.create(dir, "trajectory.csv")?)?;
    let meas = sample_measurements(
        &traj,
        s.measurement.sampling_period,
        s.observer.sensor,
        s.noise(),
    )?;
    meas.write_csv(rep.create(dir, "measurements.csv")?)?;
    let times = &meas.times;
    for channel in [
        crate::calibration::Channel::ConcentrationAvg,
        crate::calibration::Channel::TemperatureAvg,
        crate::calibration::Channel::TemperatureBottom,
    ] {
        let name = format!("data_{}.csv", channel.tag());
        Dataset::from_trajectory(&traj, channel, times).write_csv(rep.create(dir, &name)?)?;
    }
    let (t_end, c_end) = *traj.averages.last().expect("nonempty trajectory");
    rep.set_opt("drying_time_s", t_dry);
    rep.set("end_time_s", traj.end());
    rep.set("final_temperature_avg_K", t_end);
    rep.set("final_concentration_avg", c_end);
    rep.set("max_temperature_K", traj.max_temperature());
    Ok(())
}

fn observe(
    s: &Scenario,
    measurements: Option<&Path>,
    settings: &IntegratorSettings,
    dir: &Path,
    rep: &mut Report,
) -> Result<()> {
    let (truth, meas) = match measurements {
        Some(path) => {
            let meas = MeasurementSeries::read_csv(File::open(path)?)?;
            if meas.sensor != s.observer.sensor {
                return Err(Error::InvalidParameter(format!(
                    "measurement file is {} sensing but the scenario observer is {}",
                    meas.sensor, s.observer.sensor
                )));
            }
            (None, meas)
        }
        None => {
            let (truth, _) = plant_run(s, settings)?;
            let meas = sample_measurements(
                &truth,
                s.measurement.sampling_period,
                s.observer.sensor,
                s.noise(),
            )?;
            truth.write_csv(rep.create(dir, "truth.csv")?)?;
            meas.write_csv(rep.create(dir, "measurements.csv")?)?;
            (Some(truth), meas)
        }
    };
    let (plan, tau) = s.gain_plan(settings)?;
    rep.set_opt("time_constant_s", tau);
    rep.set_opt("switch_time_s", plan.switch_time());
    let params = s.observer_params();
    let init = initial_estimate(&meas, params.cells, s.observer.initial_concentration)?;
    let est = run_observer(&meas, plan, &init, &params, &s.shelf, settings)?;
    let errors = truth
        .as_ref()
        .map(|t| estimation_errors(&est, t))
        .transpose()?;
    est.write_csv(rep.create(dir, "estimates.csv")?, errors.as_ref())?;
    let (t_hat, c_hat) = *est.averages().last().expect("nonempty estimates");
    rep.set("final_temperature_estimate_K", t_hat);
    rep.set("final_concentration_estimate", c_hat);
    if let Some(e) = &errors {
        rep.set_opt("convergence_time_s", e.convergence_time());
        rep.set(
            "final_concentration_error",
            *e.concentration_avg.last().unwrap(),
        );
        rep.set("converged", e.convergence_time().is_some());
    }
    Ok(())
}

fn design(s: &Scenario, settings: &IntegratorSettings, dir: &Path, rep: &mut Report) -> Result<()> {
    let gains = s.observer.gains();
    let lin = nominal_linearization(
        &s.observer_params(),
        &s.shelf,
        DEFAULT_REFERENCE_HORIZON,
        gains.sensor,
        settings,
    )?;
    let ed = error_dynamics(&lin, &gains)?;
    let m = ed.cells();
    let e0: Vec<f64> = (0..2 * m)
        .map(|i| {
            if i < m {
                0.0
            } else {
                s.observer.initial_concentration - s.model.initial_concentration
            }
        })
        .collect();
    let modal = ed
        .eigenvectors
        .as_ref()
        .map(|_| modal_contributions(&ed, &e0))
        .transpose()?;
    let mut w = csv::Writer::from_writer(rep.create(dir, "eigenvalues.csv")?);
    w.write_record(["index", "re", "im", "modal_avg"])?;
    for (p, l) in ed.eigenvalues.iter().enumerate() {
        let nu = modal
            .as_ref()
            .map_or(String::new(), |mc| format!("{:.16e}", mc.average[p]));
        w.write_record([
            (p + 1).to_string(),
            format!("{:.16e}", l.re),
            format!("{:.16e}", l.im),
            nu,
        ])?;
    }
    w.flush()?;
    let (lm, lm1) = ed.dominant_pair();
    rep.set("reference_temperature_K", lin.x_ref.averages().0);
    rep.set("reference_concentration", lin.x_ref.averages().1);
    rep.set("stable", ed.stable);
    rep.set("oscillatory", ed.oscillatory);
    rep.set("defective", ed.eigenvectors.is_none());
    rep.set("dominant_re", lm1.re);
    rep.set("dominant_im", lm1.im);
    rep.set("second_re", lm.re);
    rep.set("second_im", lm.im);
    if let Ok(tau) = time_constant(&ed) {
        rep.set("time_constant_s", tau);
        if ed.stable {
            rep.set("convergence_estimate_s", 4.0 * tau);
        }
    }
    if let Some(mc) = &modal {
        rep.set("modal_reconstruction_error", mc.reconstruction_error);
    }
    Ok(())
}

fn control(
    s: &Scenario,
    settings: &IntegratorSettings,
    dir: &Path,
    rep: &mut Report,
) -> Result<()> {
    let ctl = s.controller.unwrap_or_default();
    let (plan, _) = s.gain_plan(settings)?;
    let threshold = s.run.dry_threshold.unwrap_or(0.01);
    let config = ClosedLoopConfig {
        controller: ctl.controller,
        observer: Some(LoopObserver {
            plan,
            params: s.observer_params(),
            initial_concentration: s.observer.initial_concentration,
        }),
        source: ctl.feedback,
        sensor: s.observer.sensor,
        sampling_period: s.measurement.sampling_period,
        noise: s.noise(),
        dry_threshold: Some(threshold),
        horizon: s.run.max_duration,
        settings: settings.clone(),
    };
    let run = run_closed_loop(&s.model, &s.shelf, &config)?;
    run.write_csv(rep.create(dir, "closed_loop.csv")?)?;
    if let Some(est) = &run.estimates {
        let errors = estimation_errors(est, &run.truth).ok();
        est.write_csv(rep.create(dir, "estimates.csv")?, errors.as_ref())?;
    }
    let baseline = run_closed_loop(
        &s.model,
        &s.shelf,
        &ClosedLoopConfig {
            controller: MicrowaveController {
                gain: 0.0,
                ..ctl.controller
            },
            observer: None,
            source: crate::control::FeedbackSource::Measurement,
            ..config
        },
    )?;
    rep.set("feedback", ctl.feedback.to_string());
    rep.set("max_temperature_K", run.max_temperature);
    rep.set_opt("drying_time_s", run.drying_time);
    rep.set_opt("conventional_drying_time_s", baseline.drying_time);
    if let (Some(a), Some(b)) = (run.drying_time, baseline.drying_time) {
        rep.set("drying_time_reduction_s", b - a);
    }
    Ok(())
}

fn calibrate(
    s: &Scenario,
    data: &[PathBuf],
    keys: &[String],
    budget: usize,
    settings: &IntegratorSettings,
    dir: &Path,
    rep: &mut Report,
) -> Result<()> {
    let datasets = data
        .iter()
        .map(|p| Dataset::read_csv(File::open(p)?))
        .collect::<Result<Vec<_>>>()?;
    let free = keys
        .iter()
        .map(|k| k.parse::<FitParameter>().map(FreeParameter::new))
        .collect::<Result<Vec<_>>>()?;
    let problem = FitProblem {
        datasets,
        free,
        base: s.model.clone(),
        schedule: s.shelf,
        settings: settings.clone(),
    };
    let result = fit(&problem, budget)?;
    result.write_report(rep.create(dir, "fit_report.txt")?)?;
    let mut w = csv::Writer::from_writer(rep.create(dir, "fit_history.csv")?);
    w.write_record(["evaluation", "best_loss"])?;
    for (k, l) in result.history.iter().enumerate() {
        w.write_record([(k + 1).to_string(), format!("{l:.16e}")])?;
    }
    w.flush()?;
    let fitted = Scenario {
        model: result.params.clone(),
        ..s.clone()
    };
    fitted.write(&dir.join("fitted_scenario.toml"))?;
    rep.files.push("fitted_scenario.toml".into());
    for (p, v) in &result.values {
        rep.set(p.key(), *v);
    }
    rep.set("loss", result.loss);
    rep.set("initial_loss", result.initial_loss);
    rep.set("evaluations", result.evaluations as i64);
    rep.set("budget_exhausted", result.budget_exhausted);
    Ok(())
}

/// Parsed run manifest.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub invocation: Invocation,
    pub scenario: Scenario,
    pub results: Table,
}

/// Writes the manifest into `out_dir`. Data paths in `inv` should be
/// absolute so the manifest can be replayed from anywhere.
pub fn write_manifest(
    out_dir: &Path,
    scenario: &Scenario,
    inv: &Invocation,
    report: &Report,
    args: &[String],
) -> Result<PathBuf> {
    let scenario_table: Table =
        toml::from_str(&scenario.to_toml()).map_err(|e| Error::parse("scenario", e.to_string()))?;
    let inv_table: Table =
        Table::try_from(inv).map_err(|e| Error::parse("invocation", e.to_string()))?;
    let mut root = Table::new();
    root.insert("tool".into(), env!("CARGO_PKG_NAME").into());
    root.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    root.insert("command".into(), inv.name().into());
    root.insert("seed".into(), Value::Integer(scenario.seed as i64));
    root.insert(
        "args".into(),
        Value::Array(args.iter().map(|a| Value::from(a.as_str())).collect()),
    );
    root.insert(
        "outputs".into(),
        Value::Array(
            report
                .files
                .iter()
                .map(|f| Value::from(f.as_str()))
                .collect(),
        ),
    );
    root.insert("invocation".into(), inv_table.into());
    root.insert("scenario".into(), scenario_table.into());
    root.insert("results".into(), report.results.clone().into());
    let text = toml::to_string(&root).map_err(|e| Error::parse("manifest", e.to_string()))?;
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, text)?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut root: Table =
        toml::from_str(&text).map_err(|e| Error::parse(&origin, e.to_string()))?;
    let mut take = |key: &str| {
        root.remove(key)
            .ok_or_else(|| Error::parse(&origin, format!("missing '{key}'")))
    };
    let version = take("version")?.as_str().unwrap_or_default().to_string();
    let scenario_value = take("scenario")?;
    let invocation: Invocation = take("invocation")?
        .try_into()
        .map_err(|e: toml::de::Error| {
            Error::parse(format!("{origin}: invocation"), e.to_string())
        })?;
    let results = take("results")?.as_table().cloned().unwrap_or_default();
    let scenario_text =
        toml::to_string(&scenario_value).map_err(|e| Error::parse(&origin, e.to_string()))?;
    let scenario = Scenario::from_toml_str(&scenario_text, &format!("{origin}: scenario"))?;
    Ok(Manifest {
        version,
        seed: scenario.seed,
        invocation,
        scenario,
        results,
    })
}

/// Re-executes the run recorded in a manifest into `out_dir`.
pub fn replay(manifest: &Path, out_dir: &Path, args: &[String]) -> Result<Report> {
    let m = read_manifest(manifest)?;
    if m.version != env!("CARGO_PKG_VERSION") {
        log::warn!(
            "manifest was written by version {} (this is {})",
            m.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let report = execute(&m.scenario, &m.invocation, out_dir)?;
    write_manifest(out_dir, &m.scenario, &m.invocation, &report, args)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gain_range_parsing() {
        let r: GainRange = "-1e-8:-1e-4:9".parse().unwrap();
        assert_eq!(r.points, 9);
        assert_eq!(r.values().len(), 9);
        assert!("1e-8:-1e-4:9".parse::<GainRange>().is_err());
        assert!("1e-8:1e-4".parse::<GainRange>().is_err());
        assert!("0:1e-4:3".parse::<GainRange>().is_err());
    }

    #[test]
    fn invocation_survives_manifest_encoding() {
        let inv = Invocation::Sweep {
            temperature_gains: "-1e-8:-1e-4:3".parse().unwrap(),
            concentration_gains: "1e-8:1e-6:2".parse().unwrap(),
            methods: vec!["eigen".into()],
        };
        let t = Table::try_from(&inv).unwrap();
        let back: Invocation = Value::Table(t).try_into().unwrap();
        assert_eq!(back, inv);
        let inv = Invocation::Observe { measurements: None };
        let back: Invocation = Value::Table(Table::try_from(&inv).unwrap())
            .try_into()
            .unwrap();
        assert_eq!(back, inv);
    }
}
