//! Proportional microwave heating with the observer in the loop.

use std::io::Write;
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::model::{ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use crate::observer::{EstimateTrajectory, GainPlan, Observer};
use crate::ode::{IntegratorSettings, OdeSystem, Solver};
use crate::simulate::{fmt_num, DryingSystem, NoiseSource, NoiseSpec, SensorKind, Trajectory};

/// `Q_v = max(0, K (T_up - T_max))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MicrowaveController {
    /// Gain `K`, W/(m³·K).
    pub gain: f64,
    /// Upper temperature limit `T_up`, K.
    pub upper_limit: f64,
}

impl Default for MicrowaveController {
    fn default() -> Self {
        Self {
            gain: 1000.0,
            upper_limit: 313.15,
        }
    }
}

impl MicrowaveController {
    pub fn new(gain: f64, upper_limit: f64) -> Result<Self> {
        let c = Self { gain, upper_limit };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain >= 0.0 && self.gain.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "K must be >= 0 (got {})",
                self.gain
            )));
        }
        if !(self.upper_limit > 0.0 && self.upper_limit.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "T_up must be > 0 (got {})",
                self.upper_limit
            )));
        }
        Ok(())
    }

    pub fn power(&self, temperatures: &[f64]) -> f64 {
        microwave_power(temperatures, self)
    }
}

/// Power for a temperature field; zero when the hottest node is at or above
/// the limit, since the actuator cannot cool.
pub fn microwave_power(temperatures: &[f64], ctl: &MicrowaveController) -> f64 {
    let t_max = temperatures
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (ctl.gain * (ctl.upper_limit - t_max)).max(0.0)
}

/// Which temperature field feeds the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeedbackSource {
    #[default]
    Estimate,
    Measurement,
}

impl std::str::FromStr for FeedbackSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Self::Estimate),
            "measurement" => Ok(Self::Measurement),
            _ => Err(Error::InvalidParameter(format!(
                "unknown feedback source '{s}' (expected estimate or measurement)"
            ))),
        }
    }
}

impl std::fmt::Display for FeedbackSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Estimate => "estimate",
            Self::Measurement => "measurement",
        })
    }
}

/// Observer running alongside the plant.
#[derive(Debug, Clone)]
pub struct LoopObserver {
    pub plan: GainPlan,
    /// Model used by the observer; usually the plant parameters.
    pub params: ModelParameters,
    pub initial_concentration: f64,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    pub controller: MicrowaveController,
    pub observer: Option<LoopObserver>,
    pub source: FeedbackSource,
    pub sensor: SensorKind,
    pub sampling_period: f64,
    pub noise: Option<NoiseSpec>,
    /// Stop once the true average concentration reaches this value.
    pub dry_threshold: Option<f64>,
    pub horizon: f64,
    pub settings: IntegratorSettings,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            controller: MicrowaveController::default(),
            observer: None,
            source: FeedbackSource::Estimate,
            sensor: SensorKind::FullField,
            sampling_period: 10.0,
            noise: None,
            dry_threshold: Some(0.01),
            horizon: crate::simulate::DEFAULT_HORIZON,
            settings: IntegratorSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Plant trajectory with dense output.
    pub truth: Trajectory,
    pub estimates: Option<EstimateTrajectory>,
    pub sample_times: Vec<f64>,
    /// Power held over `[t_k, t_{k+1})`, W/m³.
    pub power: Vec<f64>,
    /// True hottest-node temperature at each sample, K.
    pub sample_max_temperature: Vec<f64>,
    /// Hottest temperature over every accepted plant step, K.
    pub max_temperature: f64,
    pub drying_time: Option<f64>,
}

impl ClosedLoopRun {
    /// Plant state at the samples plus `Qv_Wm3, Tmax_K`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.truth.cells();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_s".to_string()];
        header.extend((1..=m).map(|i| format!("T_{i}")));
        header.extend((1..=m).map(|i| format!("cs_{i}")));
        header.push("Qv_Wm3".into());
        header.push("Tmax_K".into());
        w.write_record(&header)?;
        for (k, &t) in self.sample_times.iter().enumerate() {
            let s = self.truth.interpolate(t);
            let mut row = vec![fmt_num(t)];
            row.extend(s.temperature.iter().map(|v| fmt_num(*v)));
            row.extend(s.concentration.iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(self.power[k]));
            row.push(fmt_num(self.sample_max_temperature[k]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Sampled feedback loop: at each sample the controller picks `Q_v` from the
/// estimated (or measured) field and holds it until the next sample.
pub fn run_closed_loop(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    config: &ClosedLoopConfig,
) -> Result<ClosedLoopRun> {
    config.controller.validate()?;
    schedule.validate()?;
    let dt = config.sampling_period;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be > 0 (got {dt})"
        )));
    }
    if config.source == FeedbackSource::Estimate && config.observer.is_none() {
        return Err(Error::InvalidParameter(
            "estimate feedback requires an observer".into(),
        ));
    }
    let model = Model::new(params.clone())?;
    let m = model.cells();
    let mut solver = Solver::new(
        config.settings.clone(),
        config.settings.abs_tol_vector(m, 1),
    )?;
    let mut noise = NoiseSource::new(config.noise);
    let cap = schedule.cap_time();

    let mut truth = Trajectory::dense();
    let mut x = model.initial_state().to_vec();
    let mut t = 0.0;
    {
        let u = ControlInput::shelf(schedule.temperature(0.0));
        let inputs = move |_: f64| u;
        let sys = DryingSystem {
            model: &model,
            inputs: &inputs,
        };
        let mut dx = vec![0.0; x.len()];
        sys.rhs(t, &x, &mut dx);
        truth.push(t, &x, &dx);
    }

    let mut observer = None;
    let mut est = None;
    if let Some(cfg) = &config.observer {
        if cfg.plan.sensor() != config.sensor {
            return Err(Error::InvalidParameter(
                "observer gains and sensor disagree".into(),
            ));
        }
        let mut y0 = config.sensor.measure(&ProductState::from_slice(&x));
        noise.corrupt(&mut y0);
        let init = ProductState {
            temperature: match config.sensor {
                SensorKind::FullField => y0.clone(),
                SensorKind::BottomPoint => vec![y0[0]; m],
            },
            concentration: vec![cfg.initial_concentration; m],
        };
        observer = Some(Observer::new(
            &cfg.params,
            schedule,
            cfg.plan,
            &init,
            0.0,
            &config.settings,
        )?);
        est = Some(EstimateTrajectory {
            times: Vec::new(),
            states: Vec::new(),
            innovations: Vec::new(),
        });
        // The first sample is reused below so the noise stream stays aligned.
        noise = NoiseSource::new(config.noise);
    }

    let mut run = ClosedLoopRun {
        truth: Trajectory::dense(),
        estimates: None,
        sample_times: Vec::new(),
        power: Vec::new(),
        sample_max_temperature: Vec::new(),
        max_temperature: crate::model::ProductState::from_slice(&x).max_temperature(),
        drying_time: None,
    };

    let mut k = 0usize;
    loop {
        let state = ProductState::from_slice(&x);
        let mut y = config.sensor.measure(&state);
        noise.corrupt(&mut y);
        let field = match config.source {
            FeedbackSource::Measurement => y.clone(),
            FeedbackSource::Estimate => {
                observer.as_ref().map(|o| o.estimate().temperature).unwrap()
            }
        };
        let q = config.controller.power(&field);
        run.sample_times.push(t);
        run.power.push(q);
        run.sample_max_temperature.push(state.max_temperature());

        let dry = config
            .dry_threshold
            .is_some_and(|th| state.averages().1 <= th);
        let t_next = (k + 1) as f64 * dt;
        if dry || t_next > config.horizon + 1e-9 * config.horizon {
            if let (Some(o), Some(e)) = (observer.as_ref(), est.as_mut()) {
                e.times.push(t);
                e.states.push(o.estimate());
                e.innovations.push(crate::observer::innovation(
                    &o.estimate(),
                    &y,
                    config.sensor,
                )?);
            }
            break;
        }

        if let (Some(o), Some(e)) = (observer.as_mut(), est.as_mut()) {
            e.times.push(t);
            e.states.push(o.estimate());
            e.innovations.push(o.assimilate(&y, q, t_next)?);
        }

        let inputs = |s: f64| ControlInput {
            shelf_temperature: schedule.temperature(s),
            power_density: q,
        };
        let sys = DryingSystem {
            model: &model,
            inputs: &inputs,
        };
        let stops: Vec<f64> = cap
            .filter(|&c| c > t && c < t_next)
            .into_iter()
            .chain(std::iter::once(t_next))
            .collect();
        for stop in stops {
            let seg = solver.advance(&sys, t, &x, stop, |ts, ys, fs| {
                truth.push(ts, ys, fs);
                ControlFlow::Continue(())
            })?;
            t = seg.t;
            x = seg.y;
        }
        t = t_next;
        k += 1;
    }

    run.max_temperature = truth.max_temperature();
    if let Some(th) = config.dry_threshold {
        run.drying_time = truth.first_crossing(th);
    }
    run.truth = truth;
    run.estimates = est;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::run_until_dry;
    use approx::assert_relative_eq;

    #[test]
    fn proportional_law() {
        let ctl = MicrowaveController::default();
        assert_eq!(microwave_power(&[313.15, 300.0], &ctl), 0.0);
        assert_relative_eq!(
            microwave_power(&[300.0, 311.15], &ctl),
            2000.0,
            max_relative = 1e-9
        );
        assert_eq!(microwave_power(&[320.0], &ctl), 0.0);
    }

    #[test]
    fn invalid_controller() {
        assert!(MicrowaveController::new(-1.0, 300.0).is_err());
        assert!(MicrowaveController::new(1.0, 0.0).is_err());
    }

    #[test]
    fn zero_gain_matches_conventional() {
        let p = ModelParameters::default();
        let s = ShelfSchedule::default();
        let cfg = ClosedLoopConfig {
            controller: MicrowaveController::new(0.0, 313.15).unwrap(),
            source: FeedbackSource::Measurement,
            ..Default::default()
        };
        let run = run_closed_loop(&p, &s, &cfg).unwrap();
        let (_, t_dry) = run_until_dry(&p, &s, 0.01, &Default::default(), 1e6).unwrap();
        assert!(run.power.iter().all(|q| *q == 0.0));
        assert_relative_eq!(run.drying_time.unwrap(), t_dry, max_relative = 1e-4);
    }

    #[test]
    fn estimate_feedback_needs_observer() {
        let cfg = ClosedLoopConfig::default();
        assert!(
            run_closed_loop(&ModelParameters::default(), &ShelfSchedule::default(), &cfg).is_err()
        );
    }
}
