//! Bounded least-squares estimation of heat-transfer and desorption-kinetics
//! parameters from measured time series.
//!
//! The optimizer is a deterministic coarse grid over log-scaled bounds
//! followed by a compass pattern search. Simulation failures are penalized
//! with an infinite loss.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ModelParameters, ShelfSchedule};
use crate::ode::IntegratorSettings;
use crate::simulate::{fmt_num, integrate, parse_row, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FitParameter {
    HeatTransferCoeff,
    ActivationEnergy,
    FrequencyFactor,
}

impl FitParameter {
    pub fn key(self) -> &'static str {
        match self {
            Self::HeatTransferCoeff => "h",
            Self::ActivationEnergy => "Ea",
            Self::FrequencyFactor => "A",
        }
    }

    /// Default search interval.
    pub fn default_bounds(self) -> (f64, f64) {
        match self {
            Self::HeatTransferCoeff => (1.0, 100.0),
            Self::ActivationEnergy => (5e3, 5e4),
            Self::FrequencyFactor => (1e-6, 1e4),
        }
    }

    pub fn get(self, p: &ModelParameters) -> f64 {
        match self {
            Self::HeatTransferCoeff => p.heat_transfer_coeff,
            Self::ActivationEnergy => p.activation_energy,
            Self::FrequencyFactor => p.frequency_factor,
        }
    }

    pub fn set(self, p: &mut ModelParameters, v: f64) {
        match self {
            Self::HeatTransferCoeff => p.heat_transfer_coeff = v,
            Self::ActivationEnergy => p.activation_energy = v,
            Self::FrequencyFactor => p.frequency_factor = v,
        }
    }
}

impl std::str::FromStr for FitParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(Self::HeatTransferCoeff),
            "Ea" => Ok(Self::ActivationEnergy),
            "A" => Ok(Self::FrequencyFactor),
            _ => Err(Error::InvalidParameter(format!(
                "unknown fit parameter '{s}' (expected h, Ea or A)"
            ))),
        }
    }
}

/// A free parameter searched on a log scale within `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParameter {
    pub parameter: FitParameter,
    pub lower: f64,
    pub upper: f64,
}

impl FreeParameter {
    pub fn new(parameter: FitParameter) -> Self {
        let (lower, upper) = parameter.default_bounds();
        Self {
            parameter,
            lower,
            upper,
        }
    }

    pub fn with_bounds(parameter: FitParameter, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && upper > lower && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bounds for {} must satisfy 0 < lower < upper (got [{lower}, {upper}])",
                parameter.key()
            )));
        }
        Ok(Self {
            parameter,
            lower,
            upper,
        })
    }

    fn encode(&self, v: f64) -> f64 {
        let v = v.clamp(self.lower, self.upper);
        (v / self.lower).ln() / (self.upper / self.lower).ln()
    }

    fn decode(&self, u: f64) -> f64 {
        let v = self.lower * ((self.upper / self.lower).ln() * u.clamp(0.0, 1.0)).exp();
        v.clamp(self.lower, self.upper)
    }
}

/// Observed quantity of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    ConcentrationAvg,
    TemperatureAvg,
    TemperatureBottom,
}

impl Channel {
    pub fn tag(self) -> &'static str {
        match self {
            Self::ConcentrationAvg => "cs_avg",
            Self::TemperatureAvg => "T_avg",
            Self::TemperatureBottom => "T_bottom",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "cs_avg" => Some(Self::ConcentrationAvg),
            "T_avg" => Some(Self::TemperatureAvg),
            "T_bottom" => Some(Self::TemperatureBottom),
            _ => None,
        }
    }

    fn observe(self, traj: &Trajectory, t: f64) -> f64 {
        let s = traj.interpolate(t);
        match self {
            Self::ConcentrationAvg => s.averages().1,
            Self::TemperatureAvg => s.averages().0,
            Self::TemperatureBottom => *s.temperature.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channel: Channel,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Dataset {
    /// Samples `channel` of a simulated trajectory; the usual way to build
    /// synthetic fitting data.
    pub fn from_trajectory(traj: &Trajectory, channel: Channel, times: &[f64]) -> Self {
        Self {
            channel,
            times: times.to_vec(),
            values: times.iter().map(|&t| channel.observe(traj, t)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidState("empty dataset".into()));
        }
        if self.times.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: self.times.len(),
                got: self.values.len(),
            });
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) || self.times[0] < 0.0 {
            return Err(Error::InvalidState(
                "dataset times must be nonnegative and increasing".into(),
            ));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    fn variance(&self) -> f64 {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }

    /// Columns `t_s,<channel tag>`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", self.channel.tag()])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([fmt_num(*t), fmt_num(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() != 2 || &header[0] != "t_s" {
            return Err(Error::parse("line 1", "expected header 't_s,<channel>'"));
        }
        let channel = Channel::from_tag(&header[1]).ok_or_else(|| {
            Error::parse(
                "line 1",
                format!(
                    "unknown channel '{}' (expected cs_avg, T_avg or T_bottom)",
                    &header[1]
                ),
            )
        })?;
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let row = parse_row(&rec?, i + 2)?;
            if row.len() != 2 {
                return Err(Error::parse(format!("line {}", i + 2), "expected 2 fields"));
            }
            times.push(row[0]);
            values.push(row[1]);
        }
        let d = Self {
            channel,
            times,
            values,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    pub datasets: Vec<Dataset>,
    pub free: Vec<FreeParameter>,
    /// Fixed parameters and the initial guess for the free ones.
    pub base: ModelParameters,
    pub schedule: ShelfSchedule,
    pub settings: IntegratorSettings,
}

impl FitProblem {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidParameter("no datasets".into()));
        }
        if self.free.is_empty() {
            return Err(Error::InvalidParameter("no free parameters".into()));
        }
        for d in &self.datasets {
            d.validate()?;
        }
        for (i, f) in self.free.iter().enumerate() {
            if self.free[..i].iter().any(|g| g.parameter == f.parameter) {
                return Err(Error::InvalidParameter(format!(
                    "{} listed twice",
                    f.parameter.key()
                )));
            }
            FreeParameter::with_bounds(f.parameter, f.lower, f.upper)?;
            let v = f.parameter.get(&self.base);
            if !(f.lower..=f.upper).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "initial {} = {v} outside [{}, {}]",
                    f.parameter.key(),
                    f.lower,
                    f.upper
                )));
            }
        }
        self.schedule.validate()?;
        self.base.validate()?;
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.datasets
            .iter()
            .filter_map(|d| d.times.last())
            .fold(0.0, |a, b| a.max(*b))
    }

    fn weights(&self) -> Vec<f64> {
        if self.datasets.len() == 1 {
            return vec![1.0];
        }
        self.datasets
            .iter()
            .map(|d| {
                let v = d.variance();
                if v > 0.0 {
                    1.0 / v
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Parameters at a point of the unit cube.
    fn params_at(&self, u: &[f64]) -> ModelParameters {
        let mut p = self.base.clone();
        for (f, &x) in self.free.iter().zip(u) {
            f.parameter.set(&mut p, f.decode(x));
        }
        p
    }

    /// Residuals `model - data` per dataset.
    pub fn residuals(&self, params: &ModelParameters) -> Result<Vec<Vec<f64>>> {
        let traj = integrate(
            params,
            &self.schedule,
            (0.0, self.horizon()),
            &self.settings,
        )?;
        Ok(self
            .datasets
            .iter()
            .map(|d| {
                d.times
                    .iter()
                    .zip(&d.values)
                    .map(|(&t, &y)| d.channel.observe(&traj, t) - y)
                    .collect()
            })
            .collect())
    }

    /// Weighted sum of squared residuals; infinite if the simulation fails.
    pub fn loss(&self, params: &ModelParameters) -> f64 {
        match self.residuals(params) {
            Ok(res) => res
                .iter()
                .zip(self.weights())
                .map(|(r, w)| w * r.iter().map(|x| x * x).sum::<f64>())
                .sum(),
            Err(e) => {
                log::debug!("penalized evaluation: {e}");
                f64::INFINITY
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParameters,
    pub values: Vec<(FitParameter, f64)>,
    pub loss: f64,
    pub initial_loss: f64,
    pub evaluations: usize,
    /// Best loss after each evaluation; nonincreasing.
    pub history: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
    pub budget_exhausted: bool,
}

impl FitResult {
    /// `key = value` lines.
    pub fn write_report<W: Write>(&self, mut out: W) -> Result<()> {
        for (p, v) in &self.values {
            writeln!(out, "{} = {:?}", p.key(), v)?;
        }
        writeln!(out, "loss = {:?}", self.loss)?;
        writeln!(out, "initial_loss = {:?}", self.initial_loss)?;
        writeln!(out, "evaluations = {}", self.evaluations)?;
        writeln!(out, "budget_exhausted = {}", self.budget_exhausted)?;
        for (i, r) in self.residuals.iter().enumerate() {
            let rms = (r.iter().map(|x| x * x).sum::<f64>() / r.len().max(1) as f64).sqrt();
            writeln!(out, "rms_residual_{i} = {rms:?}")?;
        }
        Ok(())
    }
}

struct Search<'a> {
    problem: &'a FitProblem,
    budget: usize,
    evals: usize,
    history: Vec<f64>,
    best: (Vec<f64>, f64),
}

impl Search<'_> {
    fn eval(&mut self, u: &[f64]) -> f64 {
        if self.evals >= self.budget {
            return f64::INFINITY;
        }
        let l = self.problem.loss(&self.problem.params_at(u));
        self.evals += 1;
        if l < self.best.1 {
            self.best = (u.to_vec(), l);
        }
        self.history.push(self.best.1);
        l
    }

    /// Coordinate moves of size `step` around `x`, keeping improvements.
    fn explore(&mut self, x: &[f64], fx: f64, step: f64) -> (Vec<f64>, f64) {
        let mut x = x.to_vec();
        let mut fx = fx;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut u = x.clone();
                u[i] = (u[i] + dir * step).clamp(0.0, 1.0);
                if u[i] == x[i] {
                    continue;
                }
                let l = self.eval(&u);
                if l < fx {
                    x = u;
                    fx = l;
                    break;
                }
            }
        }
        (x, fx)
    }
}

/// Step below which the pattern search stops, in unit-cube coordinates.
const MIN_STEP: f64 = 1e-7;

/// Minimizes the loss within the bounds using at most `budget` model
/// evaluations. The initial guess is taken from `problem.base`.
pub fn fit(problem: &FitProblem, budget: usize) -> Result<FitResult> {
    problem.validate()?;
    let d = problem.free.len();
    if budget < 2 * d + 1 {
        return Err(Error::InvalidParameter(format!(
            "budget {budget} too small for {d} parameters"
        )));
    }
    let start: Vec<f64> = problem
        .free
        .iter()
        .map(|f| f.encode(f.parameter.get(&problem.base)))
        .collect();

    let mut evals = 0usize;
    let mut history = Vec::new();
    let initial_loss = problem.loss(&problem.base);
    evals += 1;
    history.push(initial_loss);
    let mut best = (start.clone(), initial_loss);

    if initial_loss > 0.0 {
        // Coarse grid using up to half the budget.
        let per_dim = ((budget / 2) as f64).powf(1.0 / d as f64).floor() as usize;
        let per_dim = per_dim.clamp(0, 11);
        if per_dim >= 2 {
            let points: Vec<Vec<f64>> = (0..per_dim.pow(d as u32))
                .map(|mut idx| {
                    (0..d)
                        .map(|_| {
                            let k = idx % per_dim;
                            idx /= per_dim;
                            (k as f64 + 0.5) / per_dim as f64
                        })
                        .collect()
                })
                .collect();
            let losses: Vec<f64> = points
                .par_iter()
                .map(|u| problem.loss(&problem.params_at(u)))
                .collect();
            for (u, l) in points.into_iter().zip(losses) {
                evals += 1;
                if l < best.1 {
                    best = (u, l);
                }
                history.push(best.1);
            }
        }

        // Hooke-Jeeves pattern search.
        let mut search = Search {
            problem,
            budget,
            evals,
            history,
            best,
        };
        let mut step = if per_dim >= 2 {
            0.5 / per_dim as f64
        } else {
            0.25
        };
        let (mut base, mut f_base) = search.best.clone();
        while step >= MIN_STEP && search.best.1 > 0.0 && search.evals < budget {
            let (mut x, mut fx) = search.explore(&base, f_base, step);
            if fx < f_base {
                while fx < f_base && search.evals < budget {
                    let pattern: Vec<f64> = x
                        .iter()
                        .zip(&base)
                        .map(|(a, b)| (2.0 * a - b).clamp(0.0, 1.0))
                        .collect();
                    base = x;
                    f_base = fx;
                    let fp = search.eval(&pattern);
                    (x, fx) = search.explore(&pattern, fp, step);
                }
            } else {
                step *= 0.5;
            }
        }
        evals = search.evals;
        history = search.history;
        best = search.best;
    }

    let budget_exhausted = evals >= budget;
    if budget_exhausted {
        log::warn!("fit budget of {budget} evaluations exhausted; returning best found");
    }
    let params = if best.0 == start {
        problem.base.clone()
    } else {
        problem.params_at(&best.0)
    };
    let values = problem
        .free
        .iter()
        .map(|f| (f.parameter, f.parameter.get(&params)))
        .collect();
    let residuals = problem.residuals(&params).unwrap_or_default();
    Ok(FitResult {
        params,
        values,
        loss: best.1,
        initial_loss,
        evaluations: evals,
        history,
        residuals,
        budget_exhausted,
    })
}

/// Largest relative deviation between two rate-constant curves over
/// `[t_lo, t_hi]`, used to judge kinetic fits where `A` and `E_a` trade off.
pub fn rate_constant_mismatch(
    a: &ModelParameters,
    b: &ModelParameters,
    t_lo: f64,
    t_hi: f64,
) -> f64 {
    (0..=100)
        .map(|i| t_lo + (t_hi - t_lo) * i as f64 / 100.0)
        .map(|t| {
            let ka = a.rate_constant(t);
            ((b.rate_constant(t) - ka) / ka).abs()
        })
        .fold(0.0, f64::max)
}
