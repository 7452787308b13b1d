//! Adaptive L-stable SDIRK integrator for stiff ODE systems.
//!
//! Five-stage, fourth-order, stiffly accurate singly diagonally implicit
//! Runge-Kutta pair (Hairer & Wanner, *Solving ODEs II*, Table IV.6.5) with an
//! embedded third-order solution for step-size control. Stage equations are
//! solved by simplified Newton iteration with one LU factorization of
//! `I - h γ J` per step. The local error estimate is filtered through the same
//! factorization so stiff components do not force tiny steps.

use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const GAMMA: f64 = 0.25;
const C: [f64; 5] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
const A: [[f64; 5]; 5] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.25, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
];
const B_HAT: [f64; 5] = [59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0];

/// Butcher tableau, exposed for order-condition tests.
pub fn tableau() -> ([f64; 5], [[f64; 5]; 5], [f64; 5], [f64; 5]) {
    (C, A, A[4], B_HAT)
}

/// A first-order system `y' = f(t, y)` with an available Jacobian.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
    /// Writes `∂f/∂y` into `jac` (all entries).
    fn jacobian(&self, t: f64, y: &[f64], jac: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// L-stable SDIRK 4(3).
    #[default]
    Sdirk43,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    /// Absolute tolerance on temperature components, K.
    pub abs_tol_temperature: f64,
    /// Absolute tolerance on concentration components, kg/kg.
    pub abs_tol_concentration: f64,
    /// Largest step the integrator may take, s.
    pub max_step: f64,
    /// Steps below this size abort the integration, s.
    pub min_step: f64,
    pub method: Method,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol_temperature: 1e-6,
            abs_tol_concentration: 1e-9,
            max_step: 1800.0,
            min_step: 1e-9,
            method: Method::Sdirk43,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rel_tol > 0.0
            && self.abs_tol_temperature > 0.0
            && self.abs_tol_concentration > 0.0
            && self.max_step > 0.0
            && self.min_step > 0.0
            && self.min_step < self.max_step;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "integrator tolerances and step bounds must be positive: {self:?}"
            )))
        }
    }

    /// Absolute tolerance vector for `blocks` stacked `[T; c]` states of
    /// `cells` nodes each.
    pub fn abs_tol_vector(&self, cells: usize, blocks: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * cells * blocks);
        for _ in 0..blocks {
            v.extend(std::iter::repeat_n(self.abs_tol_temperature, cells));
            v.extend(std::iter::repeat_n(self.abs_tol_concentration, cells));
        }
        v
    }
}

/// Outcome of one [`Solver::advance`] call.
#[derive(Debug, Clone)]
pub struct Segment {
    pub t: f64,
    pub y: Vec<f64>,
    pub dy: Vec<f64>,
    /// True if the step callback asked to stop before `t_end`.
    pub stopped: bool,
    pub accepted: usize,
    pub rejected: usize,
}

/// Stateful stepper. Keeps the last accepted step size across segments so
/// that piecewise integrations (sampled observers, ZOH control) do not
/// restart from a cold step-size guess.
#[derive(Debug, Clone)]
pub struct Solver {
    settings: IntegratorSettings,
    abs_tol: Vec<f64>,
    h: Option<f64>,
}

impl Solver {
    pub fn new(settings: IntegratorSettings, abs_tol: Vec<f64>) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            settings,
            abs_tol,
            h: None,
        })
    }

    pub fn settings(&self) -> &IntegratorSettings {
        &self.settings
    }

    fn error_norm(&self, err: &[f64], y0: &[f64], y1: &[f64]) -> f64 {
        let rtol = self.settings.rel_tol;
        let sum: f64 = err
            .iter()
            .zip(y0.iter().zip(y1))
            .zip(&self.abs_tol)
            .map(|((e, (a, b)), atol)| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (sum / err.len() as f64).sqrt()
    }

    fn initial_step(&self, y0: &[f64], f0: &[f64], span: f64) -> f64 {
        let rtol = self.settings.rel_tol;
        let (mut d0, mut d1) = (0.0, 0.0);
        for ((y, f), atol) in y0.iter().zip(f0).zip(&self.abs_tol) {
            let sc = atol + rtol * y.abs();
            d0 += (y / sc).powi(2);
            d1 += (f / sc).powi(2);
        }
        let n = y0.len() as f64;
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 {
            1e-3
        } else {
            0.01 * d0 / d1
        };
        h.min(self.settings.max_step)
            .min(span)
            .max(self.settings.min_step)
    }

    /// Integrates from `(t0, y0)` to `t_end`, calling `on_step(t, y, f)` after
    /// every accepted step. Returning `ControlFlow::Break` from the callback
    /// stops the integration at that step.
    pub fn advance<S, F>(
        &mut self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        mut on_step: F,
    ) -> Result<Segment>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64], &[f64]) -> ControlFlow<()>,
    {
        let n = sys.dim();
        if y0.len() != n || self.abs_tol.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: y0.len().min(self.abs_tol.len()),
            });
        }
        let mut t = t0;
        let mut y = y0.to_vec();
        let mut f = vec![0.0; n];
        sys.rhs(t, &y, &mut f);
        let mut seg = Segment {
            t,
            y: y.clone(),
            dy: f.clone(),
            stopped: false,
            accepted: 0,
            rejected: 0,
        };
        if t_end <= t0 {
            return Ok(seg);
        }

        let mut h = self
            .h
            .unwrap_or_else(|| self.initial_step(&y, &f, t_end - t0))
            .min(self.settings.max_step);

        let mut jac = DMatrix::zeros(n, n);
        let mut k = vec![vec![0.0; n]; 5];
        let mut stage = vec![0.0; n];
        let mut known = vec![0.0; n];
        let mut fz = vec![0.0; n];
        let mut y_new = vec![0.0; n];
        let mut f_new = vec![0.0; n];
        let mut jac_fresh = false;

        while t < t_end {
            let remaining = t_end - t;
            let last = h >= remaining * (1.0 - 1e-12);
            if last {
                h = remaining;
            }
            if !jac_fresh {
                sys.jacobian(t, &y, &mut jac);
                jac_fresh = true;
            }
            let mut w = DMatrix::<f64>::identity(n, n);
            w -= &jac * (h * GAMMA);
            let lu = w.lu();

            let mut converged = true;
            for i in 0..5 {
                for r in 0..n {
                    let mut acc = y[r];
                    for (j, kj) in k.iter().enumerate().take(i) {
                        acc += h * A[i][j] * kj[r];
                    }
                    known[r] = acc;
                    stage[r] = if i == 0 {
                        acc + h * GAMMA * f[r]
                    } else {
                        acc + h * GAMMA * k[i - 1][r]
                    };
                }
                let ti = t + C[i] * h;
                let mut prev_norm = f64::INFINITY;
                let mut ok = false;
                for _iter in 0..10 {
                    sys.rhs(ti, &stage, &mut fz);
                    let residual = DVector::from_iterator(
                        n,
                        (0..n).map(|r| -(stage[r] - known[r] - h * GAMMA * fz[r])),
                    );
                    let Some(delta) = lu.solve(&residual) else {
                        break;
                    };
                    for r in 0..n {
                        stage[r] += delta[r];
                    }
                    let norm = self.error_norm(delta.as_slice(), &stage, &stage);
                    if !norm.is_finite() || norm > 2.0 * prev_norm {
                        break;
                    }
                    if norm < 1e-3 {
                        ok = true;
                        break;
                    }
                    prev_norm = norm;
                }
                if !ok {
                    converged = false;
                    break;
                }
                for r in 0..n {
                    k[i][r] = (stage[r] - known[r]) / (h * GAMMA);
                }
            }

            if !converged {
                seg.rejected += 1;
                h *= 0.25;
                if h < self.settings.min_step {
                    return Err(Error::StepFailure { t, step: h });
                }
                continue;
            }

            y_new.copy_from_slice(&stage);
            let b = A[4];
            let raw = DVector::from_iterator(
                n,
                (0..n).map(|r| h * (0..5).map(|j| (b[j] - B_HAT[j]) * k[j][r]).sum::<f64>()),
            );
            let filtered = lu.solve(&raw).unwrap_or(raw);
            let err = self.error_norm(filtered.as_slice(), &y, &y_new);

            if err <= 1.0 && y_new.iter().all(|v| v.is_finite()) {
                sys.rhs(t + h, &y_new, &mut f_new);
                t = if last { t_end } else { t + h };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut f, &mut f_new);
                jac_fresh = false;
                seg.accepted += 1;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.25)).clamp(0.2, 5.0)
                };
                let h_next = (h * factor).min(self.settings.max_step);
                // A clipped final step says nothing about the natural size.
                if !last || factor < 1.0 {
                    self.h = Some(h_next);
                }
                h = h_next;
                if on_step(t, &y, &f).is_break() {
                    seg.stopped = true;
                    break;
                }
            } else {
                seg.rejected += 1;
                let factor = if err.is_finite() {
                    (0.9 * err.powf(-0.25)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h *= factor;
                if h < self.settings.min_step {
                    return Err(Error::StepFailure { t, step: h });
                }
            }
        }
        seg.t = t;
        seg.y = y;
        seg.dy = f;
        Ok(seg)
    }
}

/// Cubic Hermite interpolation of one component on `[t0, t1]`.
pub fn hermite(t0: f64, y0: f64, f0: f64, t1: f64, y1: f64, f1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    if h == 0.0 {
        return y0;
    }
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn order_conditions() {
        let (c, a, b, bh) = tableau();
        let dot = |x: &[f64; 5], y: &[f64; 5]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let ac = |v: &[f64; 5]| {
            let mut out = [0.0; 5];
            for i in 0..5 {
                out[i] = (0..5).map(|j| a[i][j] * v[j]).sum();
            }
            out
        };
        for i in 0..5 {
            assert_relative_eq!(a[i].iter().sum::<f64>(), c[i], epsilon = 1e-14);
        }
        let ones = [1.0; 5];
        let c2 = c.map(|x| x * x);
        let c3 = c.map(|x| x * x * x);
        let acv = ac(&c);
        let ac2 = ac(&c2);
        let aac = ac(&acv);
        let cac: [f64; 5] = std::array::from_fn(|i| c[i] * acv[i]);
        // order 4
        assert_relative_eq!(dot(&b, &ones), 1.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &c), 0.5, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &c2), 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &acv), 1.0 / 6.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &c3), 0.25, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &cac), 1.0 / 8.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &ac2), 1.0 / 12.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&b, &aac), 1.0 / 24.0, epsilon = 1e-14);
        // embedded order 3
        assert_relative_eq!(dot(&bh, &ones), 1.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&bh, &c), 0.5, epsilon = 1e-14);
        assert_relative_eq!(dot(&bh, &c2), 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(dot(&bh, &acv), 1.0 / 6.0, epsilon = 1e-14);
    }

    struct Linear {
        lambda: Vec<f64>,
    }

    impl OdeSystem for Linear {
        fn dim(&self) -> usize {
            self.lambda.len()
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            for i in 0..y.len() {
                dy[i] = self.lambda[i] * y[i];
            }
        }
        fn jacobian(&self, _t: f64, _y: &[f64], jac: &mut DMatrix<f64>) {
            jac.fill(0.0);
            for i in 0..self.lambda.len() {
                jac[(i, i)] = self.lambda[i];
            }
        }
    }

    #[test]
    fn stiff_linear_decay() {
        let sys = Linear {
            lambda: vec![-1.0, -1e4],
        };
        let settings = IntegratorSettings {
            max_step: 10.0,
            ..Default::default()
        };
        let mut solver = Solver::new(settings, vec![1e-10; 2]).unwrap();
        let seg = solver
            .advance(&sys, 0.0, &[1.0, 1.0], 5.0, |_, _, _| {
                ControlFlow::Continue(())
            })
            .unwrap();
        assert_eq!(seg.t, 5.0);
        assert_relative_eq!(seg.y[0], (-5.0_f64).exp(), max_relative = 1e-5);
        assert!(seg.y[1].abs() < 1e-9);
        // L-stability keeps the step count independent of the stiff mode
        assert!(seg.accepted < 200, "{} steps", seg.accepted);
    }

    #[test]
    fn callback_can_stop() {
        let sys = Linear { lambda: vec![-1.0] };
        let mut solver = Solver::new(IntegratorSettings::default(), vec![1e-10]).unwrap();
        let seg = solver
            .advance(&sys, 0.0, &[1.0], 100.0, |_, y, _| {
                if y[0] < 0.5 {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .unwrap();
        assert!(seg.stopped);
        assert!(seg.t < 100.0 && seg.y[0] < 0.5);
    }

    #[test]
    fn hermite_is_exact_for_cubics() {
        let p = |t: f64| 2.0 * t.powi(3) - t * t + 3.0;
        let dp = |t: f64| 6.0 * t * t - 2.0 * t;
        let (t0, t1) = (0.5, 2.0);
        for t in [0.5, 0.7, 1.3, 2.0] {
            let v = hermite(t0, p(t0), dp(t0), t1, p(t1), dp(t1), t);
            assert_relative_eq!(v, p(t), epsilon = 1e-12);
        }
    }
}
