//! Luenberger observers reconstructing bound-water concentration from
//! temperature measurements.
//!
//! The gain matrices are parameterized by two scalars: every temperature
//! equation receives `L_T · Σ(ŷ - y)` and every concentration equation
//! receives `L_c · Σ(ŷ - y)`, where the sum runs over all measured channels
//! (the full temperature field, or the single bottom node).

use std::io::Write;
use std::ops::ControlFlow;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{mean, ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use crate::ode::{IntegratorSettings, OdeSystem, Solver};
use crate::simulate::{fmt_num, MeasurementSeries, SensorKind, Trajectory};

/// Lowest concentration reported in the literature; the default
/// initial guess for the estimated concentration, kg/kg.
pub const DEFAULT_INITIAL_CONCENTRATION: f64 = 0.0314;

/// Fraction of the initial error below which the estimate counts as converged.
pub const CONVERGENCE_FRACTION: f64 = 0.02;

/// Concentration error treated as numerically zero, kg/kg. Keeps the 2% rule
/// meaningful when the initial estimate is already exact.
pub const CONVERGENCE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverGains {
    /// Temperature gain `L_T`, 1/s.
    pub temperature: f64,
    /// Concentration gain `L_c`, kg water/(kg solid·K·s).
    pub concentration: f64,
    pub sensor: SensorKind,
}

impl ObserverGains {
    pub fn new(temperature: f64, concentration: f64, sensor: SensorKind) -> Self {
        Self {
            temperature,
            concentration,
            sensor,
        }
    }

    /// `L_T = -1e-6`, `L_c = 5e-7` for full-field sensing.
    pub fn full_field_default() -> Self {
        Self::new(-1e-6, 5e-7, SensorKind::FullField)
    }

    /// `L_T = -5e-3`, `L_c = 1e-4` for bottom-point sensing.
    pub fn bottom_point_default() -> Self {
        Self::new(-5e-3, 1e-4, SensorKind::BottomPoint)
    }

    pub fn default_for(sensor: SensorKind) -> Self {
        match sensor {
            SensorKind::FullField => Self::full_field_default(),
            SensorKind::BottomPoint => Self::bottom_point_default(),
        }
    }

    pub fn zero(sensor: SensorKind) -> Self {
        Self::new(0.0, 0.0, sensor)
    }

    /// Sign conventions: a too-warm estimate should be cooled (`L_T <= 0`)
    /// and its concentration raised (`L_c >= 0`).
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.temperature > 0.0 {
            w.push(format!(
                "L_T = {} > 0 gives positive feedback",
                self.temperature
            ));
        }
        if self.concentration < 0.0 {
            w.push(format!(
                "L_c = {} < 0 has the wrong sign",
                self.concentration
            ));
        }
        w
    }
}

/// High gains until `switch_time`, reduced gains afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    pub initial: ObserverGains,
    pub reduced: ObserverGains,
    pub switch_time: f64,
}

impl GainSchedule {
    pub fn new(initial: ObserverGains, reduced: ObserverGains, switch_time: f64) -> Result<Self> {
        if !(switch_time > 0.0 && switch_time.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "switch time must be > 0 (got {switch_time})"
            )));
        }
        if initial.sensor != reduced.sensor {
            return Err(Error::InvalidParameter(
                "scheduled gains must use one sensor kind".into(),
            ));
        }
        Ok(Self {
            initial,
            reduced,
            switch_time,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainPlan {
    Fixed(ObserverGains),
    Scheduled(GainSchedule),
}

impl From<ObserverGains> for GainPlan {
    fn from(g: ObserverGains) -> Self {
        GainPlan::Fixed(g)
    }
}

impl From<GainSchedule> for GainPlan {
    fn from(s: GainSchedule) -> Self {
        GainPlan::Scheduled(s)
    }
}

impl GainPlan {
    pub fn gains_at(&self, t: f64) -> ObserverGains {
        match self {
            GainPlan::Fixed(g) => *g,
            GainPlan::Scheduled(s) if t < s.switch_time => s.initial,
            GainPlan::Scheduled(s) => s.reduced,
        }
    }

    pub fn sensor(&self) -> SensorKind {
        self.gains_at(0.0).sensor
    }

    pub fn switch_time(&self) -> Option<f64> {
        match self {
            GainPlan::Fixed(_) => None,
            GainPlan::Scheduled(s) => Some(s.switch_time),
        }
    }
}

/// Per-channel innovation `ŷ - y`.
pub fn innovation(estimate: &ProductState, y: &[f64], sensor: SensorKind) -> Result<Vec<f64>> {
    let expected = sensor.channels(estimate.cells());
    if y.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            got: y.len(),
        });
    }
    Ok(sensor
        .measure(estimate)
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .collect())
}

/// Observer right-hand side: model dynamics plus output-injection terms.
pub fn observer_rhs(
    model: &Model,
    estimate: &ProductState,
    y: &[f64],
    gains: &ObserverGains,
    u: ControlInput,
) -> Result<ProductState> {
    let total: f64 = innovation(estimate, y, gains.sensor)?.iter().sum();
    let mut d = model.rhs(estimate, u)?;
    for v in &mut d.temperature {
        *v += gains.temperature * total;
    }
    for v in &mut d.concentration {
        *v += gains.concentration * total;
    }
    Ok(d)
}

/// Observer dynamics between samples, with the injection held constant.
struct HeldInjection<'a> {
    model: &'a Model,
    inputs: &'a dyn Fn(f64) -> ControlInput,
    temperature: f64,
    concentration: f64,
}

impl OdeSystem for HeldInjection<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let m = self.model.cells();
        self.model.rhs_into(y, (self.inputs)(t), dy);
        dy[..m].iter_mut().for_each(|v| *v += self.temperature);
        dy[m..].iter_mut().for_each(|v| *v += self.concentration);
    }

    fn jacobian(&self, _t: f64, y: &[f64], jac: &mut DMatrix<f64>) {
        self.model.jacobian_into(y, jac);
    }
}

/// Estimated states at the sample instants plus the innovation record.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<ProductState>,
    /// `ŷ - y` per sample.
    pub innovations: Vec<Vec<f64>>,
}

impl EstimateTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn averages(&self) -> Vec<(f64, f64)> {
        self.states.iter().map(ProductState::averages).collect()
    }

    /// Writes `t_s, That_*, cshat_*` and, when `errors` is given,
    /// `ec_avg, eT_avg`.
    pub fn write_csv<W: Write>(&self, out: W, errors: Option<&ErrorSeries>) -> Result<()> {
        if let Some(e) = errors {
            if e.times.len() != self.times.len() {
                return Err(Error::Misaligned("error series length differs".into()));
            }
        }
        let m = self.states.first().map_or(0, ProductState::cells);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_s".to_string()];
        header.extend((1..=m).map(|i| format!("That_{i}")));
        header.extend((1..=m).map(|i| format!("cshat_{i}")));
        if errors.is_some() {
            header.push("ec_avg".into());
            header.push("eT_avg".into());
        }
        w.write_record(&header)?;
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let mut row = vec![fmt_num(*t)];
            row.extend(s.temperature.iter().map(|v| fmt_num(*v)));
            row.extend(s.concentration.iter().map(|v| fmt_num(*v)));
            if let Some(e) = errors {
                row.push(fmt_num(e.concentration_avg[i]));
                row.push(fmt_num(e.temperature_avg[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Streaming observer: feed samples strictly in time order.
pub struct Observer {
    model: Model,
    schedule: ShelfSchedule,
    plan: GainPlan,
    solver: Solver,
    t: f64,
    state: Vec<f64>,
}

impl Observer {
    pub fn new(
        params: &ModelParameters,
        schedule: &ShelfSchedule,
        plan: GainPlan,
        initial: &ProductState,
        t0: f64,
        settings: &IntegratorSettings,
    ) -> Result<Self> {
        let model = Model::new(params.clone())?;
        if initial.cells() != model.cells() {
            return Err(Error::ShapeMismatch {
                expected: model.cells(),
                got: initial.cells(),
            });
        }
        initial.validate()?;
        for w in plan.gains_at(0.0).warnings() {
            log::warn!("{w}");
        }
        let solver = Solver::new(settings.clone(), settings.abs_tol_vector(model.cells(), 1))?;
        Ok(Self {
            model,
            schedule: *schedule,
            plan,
            solver,
            t: t0,
            state: initial.to_vec(),
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn estimate(&self) -> ProductState {
        ProductState::from_slice(&self.state)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Uses the sample `y` taken at the current observer time, holds the
    /// resulting injection and integrates to `t_next` with volumetric
    /// heating `power` (W/m³). Returns the innovation `ŷ - y`.
    pub fn assimilate(&mut self, y: &[f64], power: f64, t_next: f64) -> Result<Vec<f64>> {
        if !(t_next >= self.t) {
            return Err(Error::Misaligned(format!(
                "samples must arrive in time order ({} after {})",
                t_next, self.t
            )));
        }
        let innov = innovation(&self.estimate(), y, self.plan.sensor())?;
        let total: f64 = innov.iter().sum();
        let schedule = self.schedule;
        let inputs = move |t: f64| ControlInput {
            shelf_temperature: schedule.temperature(t),
            power_density: power,
        };

        let mut stops: Vec<f64> = schedule
            .cap_time()
            .into_iter()
            .chain(self.plan.switch_time())
            .filter(|&b| b > self.t && b < t_next)
            .collect();
        stops.sort_by(f64::total_cmp);
        stops.push(t_next);

        for stop in stops {
            let gains = self.plan.gains_at(self.t);
            let sys = HeldInjection {
                model: &self.model,
                inputs: &inputs,
                temperature: gains.temperature * total,
                concentration: gains.concentration * total,
            };
            let seg = self
                .solver
                .advance(&sys, self.t, &self.state, stop, |_, _, _| {
                    ControlFlow::Continue(())
                })?;
            self.t = seg.t;
            self.state = seg.y;
        }
        let m = self.model.cells();
        for c in &mut self.state[m..] {
            *c = c.max(0.0);
        }
        Ok(innov)
    }
}

/// Initial estimate: temperatures from the first measurement (the bottom
/// reading replicated for point sensing), uniform concentration guess.
pub fn initial_estimate(
    meas: &MeasurementSeries,
    cells: usize,
    concentration: f64,
) -> Result<ProductState> {
    let first = meas
        .values
        .first()
        .ok_or_else(|| Error::InvalidState("empty measurement series".into()))?;
    let temperature = match meas.sensor {
        SensorKind::FullField => {
            if first.len() != cells {
                return Err(Error::ShapeMismatch {
                    expected: cells,
                    got: first.len(),
                });
            }
            first.clone()
        }
        SensorKind::BottomPoint => vec![first[0]; cells],
    };
    Ok(ProductState {
        temperature,
        concentration: vec![concentration; cells],
    })
}

/// Runs the observer over a measurement series with zero-order hold on the
/// innovation between samples. Estimates are reported at every sample.
pub fn run_observer(
    meas: &MeasurementSeries,
    plan: GainPlan,
    initial: &ProductState,
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    settings: &IntegratorSettings,
) -> Result<EstimateTrajectory> {
    run_observer_with_heating(meas, plan, initial, params, schedule, &|_| 0.0, settings)
}

/// [`run_observer`] with a known volumetric heating input `power(t)`,
/// applied as a zero-order hold at the sample instants.
pub fn run_observer_with_heating(
    meas: &MeasurementSeries,
    plan: GainPlan,
    initial: &ProductState,
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    power: &dyn Fn(f64) -> f64,
    settings: &IntegratorSettings,
) -> Result<EstimateTrajectory> {
    meas.validate()?;
    if meas.is_empty() {
        return Err(Error::InvalidState("empty measurement series".into()));
    }
    if meas.sensor != plan.sensor() {
        return Err(Error::InvalidParameter(format!(
            "measurements are {} but gains are for {}",
            meas.sensor,
            plan.sensor()
        )));
    }
    let mut obs = Observer::new(params, schedule, plan, initial, meas.times[0], settings)?;
    let n = meas.len();
    let mut out = EstimateTrajectory {
        times: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = meas.times[k];
        let est = obs.estimate();
        let next = if k + 1 < n { meas.times[k + 1] } else { t };
        let innov = obs.assimilate(&meas.values[k], power(t), next)?;
        out.times.push(t);
        out.states.push(est);
        out.innovations.push(innov);
    }
    Ok(out)
}

/// Absolute estimation errors against a truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    /// `|T̂ - T|` per node.
    pub temperature: Vec<Vec<f64>>,
    /// `|ĉ - c|` per node.
    pub concentration: Vec<Vec<f64>>,
    pub temperature_avg: Vec<f64>,
    pub concentration_avg: Vec<f64>,
}

impl ErrorSeries {
    /// First time after which the average concentration error stays below
    /// 2% of its initial value (or [`CONVERGENCE_FLOOR`], if larger).
    pub fn convergence_time(&self) -> Option<f64> {
        convergence_time(
            &self.times,
            &self.concentration_avg,
            CONVERGENCE_FRACTION,
            CONVERGENCE_FLOOR,
        )
    }
}

/// First time after which `errors` stays at or below `fraction` of its
/// initial value, never below `floor`; `None` if still above at the end.
pub fn convergence_time(times: &[f64], errors: &[f64], fraction: f64, floor: f64) -> Option<f64> {
    let threshold = (fraction * *errors.first()?).max(floor);
    match errors.iter().rposition(|e| *e > threshold) {
        None => Some(times[0]),
        Some(i) if i + 1 < times.len() => Some(times[i + 1]),
        Some(_) => None,
    }
}

/// Elementwise absolute errors with the truth resampled onto the estimate
/// times: through its dense output when it has one (steps can be far longer
/// than the sample period), linearly otherwise.
pub fn estimation_errors(est: &EstimateTrajectory, truth: &Trajectory) -> Result<ErrorSeries> {
    if est.is_empty() || truth.is_empty() {
        return Err(Error::Misaligned("empty trajectory".into()));
    }
    let tol = 1e-9 * truth.end().abs().max(1.0);
    if est.times[0] < truth.start() - tol || *est.times.last().unwrap() > truth.end() + tol {
        return Err(Error::Misaligned(format!(
            "estimates span [{}, {}] s but truth spans [{}, {}] s",
            est.times[0],
            est.times.last().unwrap(),
            truth.start(),
            truth.end()
        )));
    }
    if est.states[0].cells() != truth.cells() {
        return Err(Error::ShapeMismatch {
            expected: truth.cells(),
            got: est.states[0].cells(),
        });
    }
    let n = est.len();
    let mut out = ErrorSeries {
        times: est.times.clone(),
        temperature: Vec::with_capacity(n),
        concentration: Vec::with_capacity(n),
        temperature_avg: Vec::with_capacity(n),
        concentration_avg: Vec::with_capacity(n),
    };
    for (t, s) in est.times.iter().zip(&est.states) {
        let x = truth.interpolate(*t);
        let et: Vec<f64> = s
            .temperature
            .iter()
            .zip(&x.temperature)
            .map(|(a, b)| (a - b).abs())
            .collect();
        let ec: Vec<f64> = s
            .concentration
            .iter()
            .zip(&x.concentration)
            .map(|(a, b)| (a - b).abs())
            .collect();
        out.temperature_avg.push(mean(&et));
        out.concentration_avg.push(mean(&ec));
        out.temperature.push(et);
        out.concentration.push(ec);
    }
    Ok(out)
}

/// Truth and observer integrated together with continuous, noise-free
/// measurement. State is `[x; x̂]`.
pub struct CoupledSystem<'a> {
    pub truth: &'a Model,
    pub observer: &'a Model,
    pub schedule: ShelfSchedule,
    pub gains: ObserverGains,
}

impl CoupledSystem<'_> {
    fn output_sum(&self, y: &[f64]) -> f64 {
        let m = self.truth.cells();
        let (x, xh) = y.split_at(2 * m);
        match self.gains.sensor {
            SensorKind::FullField => (0..m).map(|i| xh[i] - x[i]).sum(),
            SensorKind::BottomPoint => xh[m - 1] - x[m - 1],
        }
    }
}

impl OdeSystem for CoupledSystem<'_> {
    fn dim(&self) -> usize {
        4 * self.truth.cells()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let m = self.truth.cells();
        let u = ControlInput::shelf(self.schedule.temperature(t));
        let (x, xh) = y.split_at(2 * m);
        let (dx, dxh) = dy.split_at_mut(2 * m);
        self.truth.rhs_into(x, u, dx);
        self.observer.rhs_into(xh, u, dxh);
        let s = self.output_sum(y);
        dxh[..m]
            .iter_mut()
            .for_each(|v| *v += self.gains.temperature * s);
        dxh[m..]
            .iter_mut()
            .for_each(|v| *v += self.gains.concentration * s);
    }

    fn jacobian(&self, _t: f64, y: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.truth.cells();
        let n = 2 * m;
        jac.fill(0.0);
        let mut block = DMatrix::zeros(n, n);
        self.truth.jacobian_into(&y[..n], &mut block);
        jac.view_mut((0, 0), (n, n)).copy_from(&block);
        self.observer.jacobian_into(&y[n..], &mut block);
        jac.view_mut((n, n), (n, n)).copy_from(&block);
        let measured: Vec<usize> = match self.gains.sensor {
            SensorKind::FullField => (0..m).collect(),
            SensorKind::BottomPoint => vec![m - 1],
        };
        for row in 0..n {
            let g = if row < m {
                self.gains.temperature
            } else {
                self.gains.concentration
            };
            for &j in &measured {
                jac[(n + row, n + j)] += g;
                jac[(n + row, j)] -= g;
            }
        }
    }
}

/// Noise-free continuous-measurement run of truth and observer side by side.
/// Returns both trajectories resampled at `output_times`.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    truth_params: &ModelParameters,
    observer_params: &ModelParameters,
    schedule: &ShelfSchedule,
    plan: GainPlan,
    initial_estimate: &ProductState,
    output_times: &[f64],
    settings: &IntegratorSettings,
) -> Result<(Trajectory, EstimateTrajectory)> {
    let truth_model = Model::new(truth_params.clone())?;
    let obs_model = Model::new(observer_params.clone())?;
    let m = truth_model.cells();
    if obs_model.cells() != m || initial_estimate.cells() != m {
        return Err(Error::ShapeMismatch {
            expected: m,
            got: initial_estimate.cells(),
        });
    }
    let (Some(&t0), Some(&t_end)) = (output_times.first(), output_times.last()) else {
        return Err(Error::InvalidParameter("no output times".into()));
    };
    let mut y = truth_model.initial_state().to_vec();
    y.extend(initial_estimate.to_vec());
    let mut solver = Solver::new(settings.clone(), settings.abs_tol_vector(m, 2))?;

    let mut stops: Vec<f64> = schedule
        .cap_time()
        .into_iter()
        .chain(plan.switch_time())
        .filter(|&b| b > t0 && b < t_end)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t_end);

    let mut times = vec![t0];
    let mut states = vec![y.clone()];
    let mut derivs = Vec::new();
    let mut t = t0;
    let mut dy0 = vec![0.0; y.len()];
    for stop in stops {
        let sys = CoupledSystem {
            truth: &truth_model,
            observer: &obs_model,
            schedule: *schedule,
            gains: plan.gains_at(t),
        };
        if derivs.is_empty() {
            sys.rhs(t, &y, &mut dy0);
            derivs.push(dy0.clone());
        }
        let seg = solver.advance(&sys, t, &y, stop, |ts, ys, fs| {
            times.push(ts);
            states.push(ys.to_vec());
            derivs.push(fs.to_vec());
            ControlFlow::Continue(())
        })?;
        t = seg.t;
        y = seg.y;
    }

    let interp = |tq: f64| -> Vec<f64> {
        let i = times
            .partition_point(|&x| x <= tq)
            .clamp(1, times.len().max(2) - 1)
            - 1;
        if times.len() == 1 {
            return states[0].clone();
        }
        let (ta, tb) = (times[i], times[i + 1]);
        (0..states[i].len())
            .map(|r| {
                crate::ode::hermite(
                    ta,
                    states[i][r],
                    derivs[i][r],
                    tb,
                    states[i + 1][r],
                    derivs[i + 1][r],
                    tq.clamp(ta, tb),
                )
            })
            .collect()
    };
    let mut truth_states = Vec::with_capacity(output_times.len());
    let mut est_states = Vec::with_capacity(output_times.len());
    let mut innovations = Vec::with_capacity(output_times.len());
    for &tq in output_times {
        let v = interp(tq);
        let x = ProductState::from_slice(&v[..2 * m]);
        let xh = ProductState::from_slice(&v[2 * m..]);
        let sensor = plan.sensor();
        innovations.push(innovation(&xh, &sensor.measure(&x), sensor)?);
        truth_states.push(x);
        est_states.push(xh);
    }
    Ok((
        Trajectory::new(output_times.to_vec(), truth_states)?,
        EstimateTrajectory {
            times: output_times.to_vec(),
            states: est_states,
            innovations,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{integrate, sample_measurements};
    use approx::assert_relative_eq;

    #[test]
    fn zero_gains_reduce_to_model() {
        let model = Model::new(ModelParameters::default()).unwrap();
        let est = ProductState::uniform(20, 250.0, 0.1);
        let y = vec![245.0; 20];
        let u = ControlInput::shelf(260.0);
        let d = observer_rhs(
            &model,
            &est,
            &y,
            &ObserverGains::zero(SensorKind::FullField),
            u,
        )
        .unwrap();
        assert_eq!(d, model.rhs(&est, u).unwrap());
    }

    #[test]
    fn perfect_estimate_has_no_correction() {
        let model = Model::new(ModelParameters::default()).unwrap();
        let est = ProductState::uniform(20, 250.0, 0.1);
        let u = ControlInput::shelf(260.0);
        let d = observer_rhs(
            &model,
            &est,
            &est.temperature,
            &ObserverGains::full_field_default(),
            u,
        )
        .unwrap();
        assert_eq!(d, model.rhs(&est, u).unwrap());
    }

    #[test]
    fn ones_matrix_injection() {
        let p = ModelParameters {
            cells: 2,
            ..Default::default()
        };
        let model = Model::new(p).unwrap();
        let est = ProductState::uniform(2, 250.0, 0.1);
        let y = vec![249.0, 249.0];
        let u = ControlInput::shelf(250.0);
        let gains = ObserverGains::new(0.0, 5e-7, SensorKind::FullField);
        let d = observer_rhs(&model, &est, &y, &gains, u).unwrap();
        let base = model.rhs(&est, u).unwrap();
        for i in 0..2 {
            assert_relative_eq!(
                d.concentration[i] - base.concentration[i],
                1e-6,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn bottom_point_uses_last_node() {
        let model = Model::new(ModelParameters::default()).unwrap();
        let mut est = ProductState::uniform(20, 250.0, 0.1);
        est.temperature[19] = 252.0;
        let gains = ObserverGains::new(-1e-3, 1e-4, SensorKind::BottomPoint);
        let u = ControlInput::shelf(250.0);
        let d = observer_rhs(&model, &est, &[251.0], &gains, u).unwrap();
        let base = model.rhs(&est, u).unwrap();
        assert_relative_eq!(
            d.temperature[0] - base.temperature[0],
            -1e-3,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            d.concentration[7] - base.concentration[7],
            1e-4,
            max_relative = 1e-9
        );
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let model = Model::new(ModelParameters::default()).unwrap();
        let est = ProductState::uniform(20, 250.0, 0.1);
        let err = observer_rhs(
            &model,
            &est,
            &[1.0, 2.0],
            &ObserverGains::bottom_point_default(),
            ControlInput::shelf(250.0),
        );
        assert!(matches!(
            err,
            Err(Error::ShapeMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn convergence_time_rule() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(
            convergence_time(&t, &[1.0, 0.5, 0.01, 0.03, 0.01], 0.02, 0.0),
            Some(4.0)
        );
        assert_eq!(
            convergence_time(&t, &[1.0, 0.5, 0.01, 0.01, 0.01], 0.02, 0.0),
            Some(2.0)
        );
        assert_eq!(convergence_time(&t, &[0.0; 5], 0.02, 0.0), Some(0.0));
        assert_eq!(
            convergence_time(&t, &[1.0, 0.5, 0.4, 0.3, 0.2], 0.02, 0.0),
            None
        );
        assert_eq!(
            convergence_time(&t, &[0.0, 1e-9, 2e-9, 0.0, 1e-9], 0.02, 1e-5),
            Some(0.0)
        );
    }

    #[test]
    fn identical_estimate_gives_zero_errors() {
        let p = ModelParameters::default();
        let truth = integrate(
            &p,
            &ShelfSchedule::default(),
            (0.0, 600.0),
            &Default::default(),
        )
        .unwrap();
        let est = EstimateTrajectory {
            times: truth.times.clone(),
            states: truth.states.clone(),
            innovations: vec![vec![]; truth.len()],
        };
        let e = estimation_errors(&est, &truth).unwrap();
        assert!(e.concentration_avg.iter().all(|v| *v == 0.0));
        assert_eq!(e.convergence_time(), Some(0.0));

        let mut shifted = est.clone();
        for s in &mut shifted.states {
            s.concentration.iter_mut().for_each(|c| *c += 0.01);
        }
        let e = estimation_errors(&shifted, &truth).unwrap();
        for v in &e.concentration_avg {
            assert_relative_eq!(*v, 0.01, max_relative = 1e-9);
        }

        let mut late = est;
        late.times.iter_mut().for_each(|t| *t += 1000.0);
        assert!(matches!(
            estimation_errors(&late, &truth),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn exact_initialization_stays_exact() {
        let p = ModelParameters::default();
        let sched = ShelfSchedule::default();
        let settings = IntegratorSettings {
            rel_tol: 1e-9,
            abs_tol_temperature: 1e-9,
            abs_tol_concentration: 1e-12,
            ..Default::default()
        };
        let truth = integrate(&p, &sched, (0.0, 3.0 * 3600.0), &settings).unwrap();
        let meas = sample_measurements(&truth, 10.0, SensorKind::FullField, None).unwrap();
        let init = ProductState::initial(&p);
        let est = run_observer(
            &meas,
            ObserverGains::full_field_default().into(),
            &init,
            &p,
            &sched,
            &settings,
        )
        .unwrap();
        let e = estimation_errors(&est, &truth.resample(&meas.times).unwrap()).unwrap();
        let worst = e.concentration_avg.iter().fold(0.0_f64, |a, b| a.max(*b));
        assert!(worst < 1e-8, "worst concentration error {worst}");
    }
}
