//! Linearized error dynamics of the observer and the tools built on them:
//! eigen-analysis, time-constant estimates, modal contributions and
//! gain design-space sweeps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use crate::observer::{estimation_errors, run_coupled, ObserverGains};
use crate::ode::IntegratorSettings;
use crate::simulate::{fmt_num, integrate, sample_times, SensorKind, Trajectory};

/// Model linearized about a reference state, with the output map of a sensor.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub f_ref: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub x_ref: ProductState,
    /// `m × 2m` for full-field sensing, `1 × 2m` for bottom-point sensing.
    pub output: DMatrix<f64>,
    pub sensor: SensorKind,
}

/// Analytic state Jacobian of the model right-hand side at `x_ref`.
/// The input enters affinely, so `u_ref` does not affect it.
pub fn jacobian(params: &ModelParameters, x_ref: &ProductState) -> Result<DMatrix<f64>> {
    let model = Model::new(params.clone())?;
    check_state(&model, x_ref)?;
    Ok(model.jacobian(x_ref))
}

/// Central finite-difference Jacobian, used to cross-check [`jacobian`].
pub fn finite_difference_jacobian(
    model: &Model,
    x_ref: &ProductState,
    u_ref: ControlInput,
) -> DMatrix<f64> {
    let x = x_ref.to_vec();
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    let mut xp = x.clone();
    for j in 0..n {
        let h = 1e-6 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        model.rhs_into(&xp, u_ref, &mut fp);
        xp[j] = x[j] - h;
        model.rhs_into(&xp, u_ref, &mut fm);
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

fn check_state(model: &Model, x: &ProductState) -> Result<()> {
    if x.cells() != model.cells() {
        return Err(Error::ShapeMismatch {
            expected: model.cells(),
            got: x.cells(),
        });
    }
    x.validate()
}

/// Output map: `[I 0]` for the full field, a single unit entry at the
/// bottom temperature otherwise.
pub fn output_matrix(cells: usize, sensor: SensorKind) -> DMatrix<f64> {
    match sensor {
        SensorKind::FullField => {
            let mut c = DMatrix::zeros(cells, 2 * cells);
            c.view_mut((0, 0), (cells, cells)).fill_with_identity();
            c
        }
        SensorKind::BottomPoint => {
            let mut c = DMatrix::zeros(1, 2 * cells);
            c[(0, cells - 1)] = 1.0;
            c
        }
    }
}

pub fn linearize(
    params: &ModelParameters,
    x_ref: &ProductState,
    u_ref: ControlInput,
    sensor: SensorKind,
) -> Result<LinearizedSystem> {
    let model = Model::new(params.clone())?;
    check_state(&model, x_ref)?;
    let x = x_ref.to_vec();
    let mut f_ref = vec![0.0; x.len()];
    model.rhs_into(&x, u_ref, &mut f_ref);
    let jacobian = model.jacobian(x_ref);
    if jacobian.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidState("non-finite Jacobian".into()));
    }
    Ok(LinearizedSystem {
        f_ref,
        jacobian,
        x_ref: x_ref.clone(),
        output: output_matrix(model.cells(), sensor),
        sensor,
    })
}

/// Default span of the nominal run that defines the linearization point.
pub const DEFAULT_REFERENCE_HORIZON: f64 = 10.0 * 3600.0;

/// Linearization about the time-averaged state of a nominal run over
/// `[0, reference_horizon]`, with the shelf input taken at mid-span.
pub fn nominal_linearization(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    reference_horizon: f64,
    sensor: SensorKind,
    settings: &IntegratorSettings,
) -> Result<LinearizedSystem> {
    if !(reference_horizon.is_finite() && reference_horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference horizon must be > 0 (got {reference_horizon})"
        )));
    }
    let nominal = integrate(params, schedule, (0.0, reference_horizon), settings)?;
    let x_ref = reference_state(&nominal)?;
    let u_ref = ControlInput::shelf(schedule.temperature(0.5 * reference_horizon));
    linearize(params, &x_ref, u_ref, sensor)
}

/// Time constant of the linearized error dynamics for one gain pair at the
/// nominal operating point.
pub fn nominal_time_constant(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    gains: &ObserverGains,
    settings: &IntegratorSettings,
) -> Result<f64> {
    let lin = nominal_linearization(
        params,
        schedule,
        DEFAULT_REFERENCE_HORIZON,
        gains.sensor,
        settings,
    )?;
    time_constant(&error_dynamics(&lin, gains)?)
}

/// Spatially uniform state at the time-and-space mean of a trajectory
/// (trapezoidal rule in time).
pub fn reference_state(traj: &Trajectory) -> Result<ProductState> {
    if traj.is_empty() {
        return Err(Error::InvalidState("empty trajectory".into()));
    }
    let m = traj.cells();
    let (t_mean, c_mean) = if traj.len() == 1 {
        traj.averages[0]
    } else {
        let span = traj.end() - traj.start();
        let (mut ts, mut cs) = (0.0, 0.0);
        for k in 1..traj.len() {
            let dt = traj.times[k] - traj.times[k - 1];
            ts += 0.5 * dt * (traj.averages[k].0 + traj.averages[k - 1].0);
            cs += 0.5 * dt * (traj.averages[k].1 + traj.averages[k - 1].1);
        }
        (ts / span, cs / span)
    };
    Ok(ProductState::uniform(m, t_mean, c_mean))
}

/// Eigen-decomposition `M = U Λ U⁻¹` with eigenvalues sorted from fastest
/// to slowest.
#[derive(Debug, Clone)]
pub struct ErrorDynamics {
    pub matrix: DMatrix<f64>,
    /// Sorted by descending `|Re|`, ties by descending `|Im|`.
    pub eigenvalues: Vec<Complex64>,
    /// Columns are unit eigenvectors; `None` for (numerically) defective `M`.
    pub eigenvectors: Option<DMatrix<Complex64>>,
    pub inverse: Option<DMatrix<Complex64>>,
    pub stable: bool,
    pub oscillatory: bool,
}

impl ErrorDynamics {
    pub fn cells(&self) -> usize {
        self.matrix.nrows() / 2
    }

    /// `λ_m` and `λ_{m+1}` (1-based), the pair that governs convergence.
    pub fn dominant_pair(&self) -> (Complex64, Complex64) {
        let m = self.cells();
        (self.eigenvalues[m - 1], self.eigenvalues[m])
    }
}

/// Assembles `M = F' + L C` with ones-structured gains and decomposes it.
pub fn error_dynamics(lin: &LinearizedSystem, gains: &ObserverGains) -> Result<ErrorDynamics> {
    if gains.sensor != lin.sensor {
        return Err(Error::InvalidParameter(format!(
            "gains are for {} but the linearization is for {}",
            gains.sensor, lin.sensor
        )));
    }
    let n = lin.jacobian.nrows();
    let m = n / 2;
    let p = lin.output.nrows();
    let mut gain = DMatrix::zeros(n, p);
    gain.rows_mut(0, m).fill(gains.temperature);
    gain.rows_mut(m, m).fill(gains.concentration);
    let matrix = &lin.jacobian + gain * &lin.output;
    decompose(matrix)
}

/// Eigen-decomposition of a real square matrix of even order.
pub fn decompose(matrix: DMatrix<f64>) -> Result<ErrorDynamics> {
    let n = matrix.nrows();
    if n < 2 || !n.is_multiple_of(2) || matrix.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "expected a 2m × 2m matrix, got {} × {}",
            n,
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decomposition("matrix has non-finite entries".into()));
    }
    let (values, vectors) = eigen(&matrix)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (values[a], values[b]);
        y.re.abs()
            .total_cmp(&x.re.abs())
            .then(y.im.abs().total_cmp(&x.im.abs()))
            .then(y.im.total_cmp(&x.im))
    });
    let eigenvalues: Vec<Complex64> = order.iter().map(|&k| values[k]).collect();
    let eigenvectors = vectors.map(|u| DMatrix::from_fn(n, n, |i, j| u[(i, order[j])]));
    let inverse = eigenvectors.as_ref().and_then(|u| {
        let v = u.clone().lu().try_inverse()?;
        let resid = (&v * u - DMatrix::<Complex64>::identity(n, n)).camax();
        (resid < 1e-6).then_some(v)
    });
    let eigenvectors = inverse.as_ref().and(eigenvectors);
    let m = n / 2;
    let stable = eigenvalues.iter().all(|l| l.re < 0.0);
    let oscillatory = [eigenvalues[m - 1], eigenvalues[m]]
        .iter()
        .any(|l| l.im.abs() > l.re.abs());
    Ok(ErrorDynamics {
        matrix,
        eigenvalues,
        eigenvectors,
        inverse,
        stable,
        oscillatory,
    })
}

/// Eigenvalues from the complex Schur form `M = Q T Q*`, eigenvectors by
/// back-substitution on `T`. Vectors are `None` if back-substitution breaks
/// down.
fn eigen(matrix: &DMatrix<f64>) -> Result<(Vec<Complex64>, Option<DMatrix<Complex64>>)> {
    let n = matrix.nrows();
    let (balanced, d) = balance(matrix);
    let scale = balanced.amax().max(f64::MIN_POSITIVE);
    let mc: DMatrix<Complex64> = balanced.map(|v| Complex64::new(v, 0.0));
    // Deflation at exactly one ulp can stall; relax it a few times.
    let schur = [4.0, 64.0, 1024.0]
        .iter()
        .find_map(|f| nalgebra::Schur::try_new(mc.clone(), f * f64::EPSILON, 10_000))
        .ok_or_else(|| Error::Decomposition("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();

    let tiny = f64::EPSILON * scale;
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for j in (0..k).rev() {
            let mut s = Complex64::new(0.0, 0.0);
            for l in j + 1..=k {
                s += t[(j, l)] * y[(l, k)];
            }
            let mut d = t[(j, j)] - lambda;
            if d.norm() < tiny {
                d = Complex64::new(tiny, 0.0);
            }
            y[(j, k)] = -s / d;
        }
    }
    let mut u = q * y;
    for (i, mut row) in u.row_iter_mut().enumerate() {
        row *= Complex64::new(d[i], 0.0);
    }
    for mut col in u.column_iter_mut() {
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Ok((values, None));
        }
        col /= Complex64::new(norm, 0.0);
    }
    Ok((values, Some(u)))
}

/// Diagonal similarity `D⁻¹ M D` with power-of-two entries that equalizes
/// row and column norms. Temperature and concentration blocks differ by
/// orders of magnitude, which otherwise stalls the Schur iteration.
fn balance(matrix: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = matrix.nrows();
    let mut b = matrix.clone();
    let mut d = vec![1.0; n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let (mut f, mut cs, mut rs) = (1.0, c, r);
            while cs < rs / 2.0 {
                cs *= 2.0;
                rs /= 2.0;
                f *= 2.0;
            }
            while cs > rs * 2.0 {
                cs /= 2.0;
                rs *= 2.0;
                f /= 2.0;
            }
            if cs + rs < 0.95 * (c + r) {
                changed = true;
                d[i] *= f;
                b.column_mut(i).scale_mut(f);
                b.row_mut(i).scale_mut(1.0 / f);
            }
        }
    }
    (b, d)
}

/// `τ = 1 / |Re(λ_{m+1})|`.
pub fn time_constant(ed: &ErrorDynamics) -> Result<f64> {
    let re = ed.dominant_pair().1.re;
    if re == 0.0 {
        return Err(Error::Decomposition(
            "degenerate time constant: Re(λ_(m+1)) = 0".into(),
        ));
    }
    Ok(1.0 / re.abs())
}

/// Modal decomposition of an initial error.
#[derive(Debug, Clone)]
pub struct ModalContributions {
    /// `ν_{i,p} = u_{i,p} (V e0)_p`.
    pub per_state: DMatrix<Complex64>,
    /// Real part of the concentration-row average of `ν_{i,p}`.
    pub average: Vec<f64>,
    /// Largest relative mismatch of `Σ_p ν_{i,p}` against `e0_i`.
    pub reconstruction_error: f64,
}

pub fn modal_contributions(ed: &ErrorDynamics, e0: &[f64]) -> Result<ModalContributions> {
    let n = ed.matrix.nrows();
    if e0.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: e0.len(),
        });
    }
    let (Some(u), Some(v)) = (&ed.eigenvectors, &ed.inverse) else {
        return Err(Error::Decomposition(
            "matrix is defective; only eigenvalues are available".into(),
        ));
    };
    let e = DVector::from_iterator(n, e0.iter().map(|x| Complex64::new(*x, 0.0)));
    let weights = v * e;
    let per_state = DMatrix::from_fn(n, n, |i, p| u[(i, p)] * weights[p]);
    let m = n / 2;
    let average = (0..n)
        .map(|p| (m..n).map(|i| per_state[(i, p)].re).sum::<f64>() / m as f64)
        .collect();
    let scale = e0
        .iter()
        .fold(0.0_f64, |a, x| a.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let reconstruction_error = (0..n)
        .map(|i| (per_state.row(i).sum() - Complex64::new(e0[i], 0.0)).norm() / scale)
        .fold(0.0, f64::max);
    Ok(ModalContributions {
        per_state,
        average,
        reconstruction_error,
    })
}

/// Pairs each eigenvalue in `a` with its nearest unused neighbour in `b`
/// and returns the largest pairing distance.
pub fn pair_by_proximity(a: &[Complex64], b: &[Complex64]) -> f64 {
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let best = (0..b.len())
            .filter(|&j| !used[j])
            .min_by(|&i, &j| (b[i] - x).norm().total_cmp(&(b[j] - x).norm()));
        match best {
            Some(j) => {
                used[j] = true;
                worst = worst.max((b[j] - x).norm());
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

/// `n` logarithmically spaced values from `a` to `b` (same sign).
pub fn log_space(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let sign = a.signum();
    let (la, lb) = (a.abs().log10(), b.abs().log10());
    (0..n)
        .map(|k| match k {
            0 => a,
            k if k == n - 1 => b,
            k => sign * 10f64.powf(la + (lb - la) * k as f64 / (n - 1) as f64),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMethod {
    /// `4τ` from the linearized error dynamics.
    Eigen,
    /// Noise-free truth/observer simulation with the 2% rule.
    Simulation,
}

impl std::fmt::Display for SweepMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepMethod::Eigen => "eigen",
            SweepMethod::Simulation => "simulation",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub temperature_gains: Vec<f64>,
    pub concentration_gains: Vec<f64>,
    pub sensor: SensorKind,
    pub methods: Vec<SweepMethod>,
    /// Length of the nominal run that defines the reference state, s.
    pub reference_horizon: f64,
    /// Simulation horizon per cell, s.
    pub horizon: f64,
    /// Spacing of the error samples in simulated cells, s.
    pub output_period: f64,
    pub initial_concentration: f64,
    pub settings: IntegratorSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            temperature_gains: log_space(-1e-8, -1e-4, 9),
            concentration_gains: log_space(1e-8, 1e-6, 9),
            sensor: SensorKind::FullField,
            methods: vec![SweepMethod::Eigen],
            reference_horizon: DEFAULT_REFERENCE_HORIZON,
            horizon: 16.0 * 3600.0,
            output_period: 60.0,
            initial_concentration: crate::observer::DEFAULT_INITIAL_CONCENTRATION,
            settings: IntegratorSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub temperature_gain: f64,
    pub concentration_gain: f64,
    /// `None` when unstable or not converged within the horizon.
    pub convergence_time: Option<f64>,
    pub stable: bool,
    pub oscillatory: bool,
    pub method: SweepMethod,
}

/// Convergence-time map over the gain grid. Cells are evaluated in parallel
/// and returned in grid order (`L_T` outer, `L_c` inner, then method).
pub fn design_space_sweep(
    params: &ModelParameters,
    schedule: &ShelfSchedule,
    config: &SweepConfig,
) -> Result<Vec<SweepCell>> {
    if config
        .temperature_gains
        .iter()
        .chain(&config.concentration_gains)
        .any(|g| !g.is_finite())
    {
        return Err(Error::InvalidParameter("gain ranges must be finite".into()));
    }
    let lin = nominal_linearization(
        params,
        schedule,
        config.reference_horizon,
        config.sensor,
        &config.settings,
    )?;
    let times = sample_times(0.0, config.horizon, config.output_period);
    let init = ProductState {
        temperature: vec![params.initial_temperature; params.cells],
        concentration: vec![config.initial_concentration; params.cells],
    };

    let jobs: Vec<(f64, f64, SweepMethod)> = config
        .temperature_gains
        .iter()
        .flat_map(|&lt| {
            config
                .concentration_gains
                .iter()
                .flat_map(move |&lc| config.methods.iter().map(move |&method| (lt, lc, method)))
        })
        .collect();

    Ok(jobs
        .into_par_iter()
        .map(|(lt, lc, method)| {
            let gains = ObserverGains::new(lt, lc, config.sensor);
            let (stable, oscillatory, tau) = match error_dynamics(&lin, &gains) {
                Ok(ed) => (ed.stable, ed.oscillatory, time_constant(&ed).ok()),
                Err(e) => {
                    log::warn!("cell L_T = {lt:e}, L_c = {lc:e}: {e}");
                    (false, false, None)
                }
            };
            let convergence_time = match method {
                SweepMethod::Eigen => tau.filter(|_| stable).map(|t| 4.0 * t),
                SweepMethod::Simulation => run_coupled(
                    params,
                    params,
                    schedule,
                    gains.into(),
                    &init,
                    &times,
                    &config.settings,
                )
                .and_then(|(truth, est)| estimation_errors(&est, &truth))
                .map_err(|e| log::warn!("cell L_T = {lt:e}, L_c = {lc:e}: {e}"))
                .ok()
                .and_then(|e| e.convergence_time()),
            };
            SweepCell {
                temperature_gain: lt,
                concentration_gain: lc,
                convergence_time,
                stable,
                oscillatory,
                method,
            }
        })
        .collect())
}

/// Writes `L_T, L_c, conv_time_s, stable, oscillatory, method`; cells
/// without a convergence time get an empty field.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "L_T",
        "L_c",
        "conv_time_s",
        "stable",
        "oscillatory",
        "method",
    ])?;
    for c in cells {
        w.write_record([
            fmt_num(c.temperature_gain),
            fmt_num(c.concentration_gain),
            c.convergence_time.map(fmt_num).unwrap_or_default(),
            c.stable.to_string(),
            c.oscillatory.to_string(),
            c.method.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
