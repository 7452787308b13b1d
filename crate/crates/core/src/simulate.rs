//! Method-of-lines time integration of the drying model and synthetic
//! temperature measurements.

use std::io::{Read, Write};
use std::ops::ControlFlow;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use crate::ode::{hermite, IntegratorSettings, OdeSystem, Solver};

/// Default horizon for drying runs, s.
pub const DEFAULT_HORIZON: f64 = 200.0 * 3600.0;

/// The drying model driven by a time-dependent input.
pub struct DryingSystem<'a> {
    pub model: &'a Model,
    pub inputs: &'a dyn Fn(f64) -> ControlInput,
}

impl OdeSystem for DryingSystem<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        self.model.rhs_into(y, (self.inputs)(t), dy);
    }

    fn jacobian(&self, _t: f64, y: &[f64], jac: &mut DMatrix<f64>) {
        self.model.jacobian_into(y, jac);
    }
}

/// Time-ordered model states with the derivatives needed for dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ProductState>,
    /// `(T_avg, c_avg)` per stored state.
    pub averages: Vec<(f64, f64)>,
    derivatives: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<ProductState>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::ShapeMismatch {
                expected: times.len(),
                got: states.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidState(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        let averages = states.iter().map(ProductState::averages).collect();
        Ok(Self {
            times,
            states,
            averages,
            derivatives: None,
        })
    }

    pub(crate) fn dense() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
            averages: Vec::new(),
            derivatives: Some(Vec::new()),
        }
    }

    pub(crate) fn push(&mut self, t: f64, y: &[f64], dy: &[f64]) {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return;
            }
        }
        let s = ProductState::from_slice(y);
        self.averages.push(s.averages());
        self.states.push(s);
        self.times.push(t);
        if let Some(d) = self.derivatives.as_mut() {
            d.push(dy.to_vec());
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.states.first().map_or(0, ProductState::cells)
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("empty trajectory")
    }

    pub fn last_state(&self) -> &ProductState {
        self.states.last().expect("empty trajectory")
    }

    /// Whether Hermite dense output is available.
    pub fn has_dense_output(&self) -> bool {
        self.derivatives.is_some()
    }

    fn bracket(&self, t: f64) -> usize {
        let idx = self.times.partition_point(|&x| x <= t);
        idx.clamp(1, self.times.len() - 1) - 1
    }

    /// State at time `t`: cubic Hermite between stored steps when dense
    /// output is available, linear otherwise. Clamped to the stored range.
    pub fn interpolate(&self, t: f64) -> ProductState {
        if self.times.len() == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.end() {
            return self.last_state().clone();
        }
        let i = self.bracket(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let x0 = self.states[i].to_vec();
        let x1 = self.states[i + 1].to_vec();
        let v: Vec<f64> = match &self.derivatives {
            Some(d) => (0..x0.len())
                .map(|r| hermite(t0, x0[r], d[i][r], t1, x1[r], d[i + 1][r], t))
                .collect(),
            None => {
                let s = (t - t0) / (t1 - t0);
                x0.iter().zip(&x1).map(|(a, b)| a + s * (b - a)).collect()
            }
        };
        ProductState::from_slice(&v)
    }

    /// Linear-in-time interpolation regardless of dense output.
    pub fn interpolate_linear(&self, t: f64) -> ProductState {
        if self.times.len() == 1 || t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.end() {
            return self.last_state().clone();
        }
        let i = self.bracket(t);
        let s = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        let x0 = self.states[i].to_vec();
        let x1 = self.states[i + 1].to_vec();
        let v: Vec<f64> = x0.iter().zip(&x1).map(|(a, b)| a + s * (b - a)).collect();
        ProductState::from_slice(&v)
    }

    /// Dense-output resampling at the given (increasing) times.
    pub fn resample(&self, times: &[f64]) -> Result<Trajectory> {
        let states = times.iter().map(|&t| self.interpolate(t)).collect();
        Trajectory::new(times.to_vec(), states)
    }

    pub fn max_temperature(&self) -> f64 {
        self.states
            .iter()
            .map(ProductState::max_temperature)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// First time the average concentration is at or below `threshold`,
    /// located by bisection on the dense output.
    pub fn first_crossing(&self, threshold: f64) -> Option<f64> {
        if self.averages[0].1 <= threshold {
            return Some(self.times[0]);
        }
        let i = self.averages.iter().position(|a| a.1 <= threshold)?;
        Some(self.bisect_crossing(self.times[i - 1], self.times[i], threshold))
    }

    fn bisect_crossing(&self, mut lo: f64, mut hi: f64, threshold: f64) -> f64 {
        while hi - lo > 1e-3 {
            let mid = 0.5 * (lo + hi);
            if self.interpolate(mid).averages().1 <= threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.cells();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_s".to_string()];
        header.extend((1..=m).map(|i| format!("T_{i}")));
        header.extend((1..=m).map(|i| format!("cs_{i}")));
        w.write_record(&header)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![fmt_num(*t)];
            row.extend(s.temperature.iter().map(|v| fmt_num(*v)));
            row.extend(s.concentration.iter().map(|v| fmt_num(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let n = header.len();
        if n < 3 || (n - 1) % 2 != 0 || &header[0] != "t_s" {
            return Err(Error::parse("header", "expected t_s,T_1..T_m,cs_1..cs_m"));
        }
        let m = (n - 1) / 2;
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = parse_row(&rec, line + 2)?;
            times.push(vals[0]);
            states.push(ProductState {
                temperature: vals[1..=m].to_vec(),
                concentration: vals[m + 1..].to_vec(),
            });
        }
        Trajectory::new(times, states)
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    rec.iter()
        .enumerate()
        .map(|(col, s)| {
            s.trim().parse::<f64>().map_err(|e| {
                Error::parse(format!("line {line}, column {}", col + 1), e.to_string())
            })
        })
        .collect()
}

/// Integrates `model` from `state0` over `t_span` under `inputs`. Steps never
/// cross `breakpoints` (input kinks). If `stop_below` is given, integration
/// halts at the first step whose average concentration is at or below it.
pub fn integrate_model(
    model: &Model,
    state0: &ProductState,
    inputs: &dyn Fn(f64) -> ControlInput,
    breakpoints: &[f64],
    t_span: (f64, f64),
    settings: &IntegratorSettings,
    stop_below: Option<f64>,
) -> Result<Trajectory> {
    if state0.cells() != model.cells() {
        return Err(Error::ShapeMismatch {
            expected: model.cells(),
            got: state0.cells(),
        });
    }
    state0.validate()?;
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 >= t0) {
        return Err(Error::InvalidParameter(format!("bad time span {t_span:?}")));
    }
    let sys = DryingSystem { model, inputs };
    let m = model.cells();
    let mut solver = Solver::new(settings.clone(), settings.abs_tol_vector(m, 1))?;
    let mut traj = Trajectory::dense();

    let mut y = state0.to_vec();
    let mut dy = vec![0.0; y.len()];
    sys.rhs(t0, &y, &mut dy);
    traj.push(t0, &y, &dy);
    if let Some(th) = stop_below {
        if state0.averages().1 <= th {
            return Ok(traj);
        }
    }

    let mut stops: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > t0 && b < t1)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t1);

    let mut t = t0;
    for stop in stops {
        let seg = solver.advance(&sys, t, &y, stop, |ts, ys, fs| {
            traj.push(ts, ys, fs);
            match stop_below {
                Some(th) if crate::model::mean(&ys[m..]) <= th => ControlFlow::Break(()),
                _ => ControlFlow::Continue(()),
            }
        })?;
        t = seg.t;
        y = seg.y;
        if seg.stopped {
            break;
        }
    }
    Ok(traj)
}

/// Conventional run (no volumetric heating) from the uniform initial state.
pub fn integrate(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    integrate_with_heating(params, schedule, &|_| 0.0, t_span, settings)
}

/// Run with an open-loop volumetric heating profile `power(t)` in W/m³.
pub fn integrate_with_heating(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    power: &dyn Fn(f64) -> f64,
    t_span: (f64, f64),
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    schedule.validate()?;
    let model = Model::new(params.clone())?;
    let inputs = |t: f64| ControlInput {
        shelf_temperature: schedule.temperature(t),
        power_density: power(t),
    };
    let breaks: Vec<f64> = schedule.cap_time().into_iter().collect();
    integrate_model(
        &model,
        &model.initial_state(),
        &inputs,
        &breaks,
        t_span,
        settings,
        None,
    )
}

/// Integrates until the average concentration reaches `threshold`. Returns
/// the trajectory (ending at the step that crossed) and the crossing time.
pub fn run_until_dry(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    threshold: f64,
    settings: &IntegratorSettings,
    horizon: f64,
) -> Result<(Trajectory, f64)> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be > 0 (got {threshold})"
        )));
    }
    schedule.validate()?;
    let model = Model::new(params.clone())?;
    let inputs = |t: f64| ControlInput::shelf(schedule.temperature(t));
    let breaks: Vec<f64> = schedule.cap_time().into_iter().collect();
    let traj = integrate_model(
        &model,
        &model.initial_state(),
        &inputs,
        &breaks,
        (0.0, horizon),
        settings,
        Some(threshold),
    )?;
    let t_dry = traj
        .first_crossing(threshold)
        .ok_or(Error::NotReached { threshold, horizon })?;
    Ok((traj, t_dry))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensorKind {
    /// Temperature at every grid node.
    #[default]
    FullField,
    /// Temperature at the bottom node only.
    BottomPoint,
}

impl SensorKind {
    pub fn channels(self, cells: usize) -> usize {
        match self {
            SensorKind::FullField => cells,
            SensorKind::BottomPoint => 1,
        }
    }

    pub fn measure(self, state: &ProductState) -> Vec<f64> {
        match self {
            SensorKind::FullField => state.temperature.clone(),
            SensorKind::BottomPoint => vec![*state.temperature.last().expect("empty state")],
        }
    }
}

impl std::str::FromStr for SensorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full-field" => Ok(SensorKind::FullField),
            "bottom" | "bottom-point" => Ok(SensorKind::BottomPoint),
            _ => Err(Error::parse("sensor", format!("unknown sensor kind '{s}'"))),
        }
    }
}

impl std::fmt::Display for SensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SensorKind::FullField => "full",
            SensorKind::BottomPoint => "bottom",
        })
    }
}

/// Additive Gaussian measurement noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation per channel, K.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn from_three_sigma(three_sigma: f64, seed: u64) -> Self {
        Self {
            sigma: three_sigma / 3.0,
            seed,
        }
    }
}

/// Truncation of the noise distribution, in standard deviations.
pub const NOISE_TRUNCATION: f64 = 6.0;

/// Deterministic truncated Gaussian noise stream.
pub struct NoiseSource {
    rng: ChaCha8Rng,
    normal: Option<Normal<f64>>,
}

impl NoiseSource {
    pub fn new(noise: Option<NoiseSpec>) -> Self {
        let (seed, normal) = match noise {
            Some(n) if n.sigma > 0.0 => (n.seed, Some(Normal::new(0.0, n.sigma).expect("sigma"))),
            Some(n) => (n.seed, None),
            None => (0, None),
        };
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
        }
    }

    pub fn sample(&mut self) -> f64 {
        let Some(normal) = self.normal else {
            return 0.0;
        };
        let bound = NOISE_TRUNCATION * normal.std_dev();
        loop {
            let v = normal.sample(&mut self.rng);
            if v.abs() <= bound {
                return v;
            }
        }
    }

    pub fn corrupt(&mut self, values: &mut [f64]) {
        for v in values {
            *v += self.sample();
        }
    }
}

/// Uniformly sampled temperature measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub times: Vec<f64>,
    /// One vector per sample: `m` values (full field) or one (bottom point).
    pub values: Vec<Vec<f64>>,
    pub sensor: SensorKind,
    /// Noise that was added, when known.
    pub noise: Option<NoiseSpec>,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn period(&self) -> Option<f64> {
        (self.times.len() > 1).then(|| self.times[1] - self.times[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: self.times.len(),
                got: self.values.len(),
            });
        }
        if let Some(first) = self.values.first() {
            let width = first.len();
            if self.sensor == SensorKind::BottomPoint && width != 1 {
                return Err(Error::ShapeMismatch {
                    expected: 1,
                    got: width,
                });
            }
            if let Some(v) = self.values.iter().find(|v| v.len() != width) {
                return Err(Error::ShapeMismatch {
                    expected: width,
                    got: v.len(),
                });
            }
        }
        if let Some(p) = self.period() {
            for (i, w) in self.times.windows(2).enumerate() {
                let expected = self.times[0] + (i + 1) as f64 * p;
                if (w[1] - expected).abs() > 1e-9 * expected.abs().max(1.0) {
                    return Err(Error::Misaligned(format!(
                        "sample {} at {} s breaks uniform spacing {p} s",
                        i + 1,
                        w[1]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = self.values.first().map_or(0, Vec::len);
        let mut header = vec!["t_s".to_string()];
        match self.sensor {
            SensorKind::FullField => header.extend((1..=width).map(|i| format!("T_{i}"))),
            SensorKind::BottomPoint => header.push("T_p".into()),
        }
        w.write_record(&header)?;
        for (t, v) in self.times.iter().zip(&self.values) {
            let mut row = vec![fmt_num(*t)];
            row.extend(v.iter().map(|x| fmt_num(*x)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "t_s" {
            return Err(Error::parse(
                "header",
                "expected t_s followed by T_p or T_1..T_m",
            ));
        }
        let sensor = if header.len() == 2 && &header[1] == "T_p" {
            SensorKind::BottomPoint
        } else if header
            .iter()
            .skip(1)
            .enumerate()
            .all(|(i, h)| h == format!("T_{}", i + 1))
        {
            SensorKind::FullField
        } else {
            return Err(Error::parse("header", "expected T_p or T_1..T_m columns"));
        };
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let vals = parse_row(&rec?, line + 2)?;
            times.push(vals[0]);
            values.push(vals[1..].to_vec());
        }
        let series = Self {
            times,
            values,
            sensor,
            noise: None,
        };
        series.validate()?;
        Ok(series)
    }
}

/// Sample times `t0, t0 + period, ...` up to `t_end` inclusive.
pub fn sample_times(t0: f64, t_end: f64, period: f64) -> Vec<f64> {
    let n = ((t_end - t0) / period + 1e-9).floor() as usize;
    (0..=n).map(|k| t0 + k as f64 * period).collect()
}

/// Samples `traj` every `period` seconds through its dense output and adds
/// truncated Gaussian noise. Deterministic for a fixed seed.
pub fn sample_measurements(
    traj: &Trajectory,
    period: f64,
    sensor: SensorKind,
    noise: Option<NoiseSpec>,
) -> Result<MeasurementSeries> {
    if !(period > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling period must be > 0 (got {period})"
        )));
    }
    if traj.is_empty() {
        return Err(Error::InvalidState("empty trajectory".into()));
    }
    let times = sample_times(traj.start(), traj.end(), period);
    let mut source = NoiseSource::new(noise);
    let values = times
        .iter()
        .map(|&t| {
            let mut v = sensor.measure(&traj.interpolate(t));
            source.corrupt(&mut v);
            v
        })
        .collect();
    Ok(MeasurementSeries {
        times,
        values,
        sensor,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_span_keeps_initial_state() {
        let p = ModelParameters::default();
        let traj = integrate(
            &p,
            &ShelfSchedule::default(),
            (0.0, 0.0),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.states[0], ProductState::initial(&p));
    }

    #[test]
    fn isothermal_matches_exponential() {
        let p = ModelParameters {
            desorption_enthalpy: 0.0,
            initial_temperature: 300.0,
            ..Default::default()
        };
        let sched = ShelfSchedule::constant(300.0);
        let settings = IntegratorSettings::default();
        let traj = integrate(&p, &sched, (0.0, 36000.0), &settings).unwrap();
        let k = p.rate_constant(300.0);
        for (t, (_, c)) in traj.times.iter().zip(&traj.averages) {
            let exact = p.initial_concentration * (-k * t).exp();
            assert!(
                ((c - exact) / exact).abs() <= 10.0 * settings.rel_tol,
                "t = {t}: {c} vs {exact}"
            );
        }
    }

    #[test]
    fn threshold_at_initial_concentration_is_immediate() {
        let p = ModelParameters::default();
        let (traj, t) = run_until_dry(
            &p,
            &ShelfSchedule::default(),
            p.initial_concentration,
            &Default::default(),
            DEFAULT_HORIZON,
        )
        .unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(traj.len(), 1);
    }

    #[test]
    fn unreachable_threshold_is_reported() {
        let p = ModelParameters::default();
        let err = run_until_dry(
            &p,
            &ShelfSchedule::default(),
            1e-3,
            &Default::default(),
            3600.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotReached { .. }));
    }

    #[test]
    fn noise_free_samples_equal_interpolated_truth() {
        let p = ModelParameters::default();
        let traj = integrate(
            &p,
            &ShelfSchedule::default(),
            (0.0, 3600.0),
            &Default::default(),
        )
        .unwrap();
        let series = sample_measurements(&traj, 10.0, SensorKind::FullField, None).unwrap();
        assert_eq!(series.len(), 361);
        for (t, v) in series.times.iter().zip(&series.values) {
            assert_eq!(v, &traj.interpolate(*t).temperature);
        }
        let bottom = sample_measurements(&traj, 10.0, SensorKind::BottomPoint, None).unwrap();
        for (t, v) in bottom.times.iter().zip(&bottom.values) {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0], traj.interpolate(*t).temperature[19]);
        }
    }

    #[test]
    fn noise_variance_matches_sigma() {
        let sigma = 5.0 / 3.0;
        let mut src = NoiseSource::new(Some(NoiseSpec { sigma, seed: 7 }));
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| src.sample()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert_relative_eq!(var, sigma * sigma, max_relative = 0.05);
        assert!(xs.iter().all(|x| x.abs() <= NOISE_TRUNCATION * sigma));
    }

    #[test]
    fn series_validation_catches_bad_shapes() {
        let s = MeasurementSeries {
            times: vec![0.0, 10.0, 21.0],
            values: vec![vec![1.0]; 3],
            sensor: SensorKind::BottomPoint,
            noise: None,
        };
        assert!(matches!(s.validate(), Err(Error::Misaligned(_))));
        let s = MeasurementSeries {
            times: vec![0.0, 10.0],
            values: vec![vec![1.0, 2.0]; 2],
            sensor: SensorKind::BottomPoint,
            noise: None,
        };
        assert!(matches!(s.validate(), Err(Error::ShapeMismatch { .. })));
    }
}
