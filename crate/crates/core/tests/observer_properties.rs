//! Behavioural properties of the observer and of the linearized error
//! dynamics used to design it.

use desorb::design::{
    error_dynamics, linearize, nominal_linearization, pair_by_proximity, time_constant,
    DEFAULT_REFERENCE_HORIZON,
};
use desorb::model::{ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use desorb::observer::{estimation_errors, initial_estimate, run_observer, ObserverGains};
use desorb::ode::IntegratorSettings;
use desorb::simulate::{integrate, integrate_model, sample_measurements, SensorKind};
use proptest::prelude::*;

const HOUR: f64 = 3600.0;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn tight() -> IntegratorSettings {
    IntegratorSettings {
        rel_tol: 1e-10,
        abs_tol_temperature: 1e-10,
        abs_tol_concentration: 1e-13,
        ..IntegratorSettings::default()
    }
}

#[test]
fn innovation_decays_after_the_first_hour() {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let truth = integrate(&params, &schedule, (0.0, 10.0 * HOUR), &settings).unwrap();
    let meas = sample_measurements(&truth, 10.0, SensorKind::FullField, None).unwrap();
    let init = initial_estimate(&meas, params.cells, 0.0314).unwrap();
    let gains = ObserverGains::full_field_default();
    let est = run_observer(&meas, gains.into(), &init, &params, &schedule, &settings).unwrap();
    let norms: Vec<f64> = est.innovations.iter().map(|v| norm(v)).collect();
    let first_hour = est.times.iter().position(|&t| t >= HOUR).unwrap();

    // Half-hour peaks fall strictly from one window to the next.
    let peaks: Vec<f64> = norms[first_hour..]
        .chunks(180)
        .map(|c| c.iter().copied().fold(0.0, f64::max))
        .collect();
    for w in peaks.windows(2) {
        assert!(
            w[1] < w[0],
            "window peak rose from {:e} to {:e}",
            w[0],
            w[1]
        );
    }
    // Sample to sample, the norm is nonincreasing from some point on.
    let last_rise = (first_hour + 1..norms.len())
        .filter(|&k| norms[k] > norms[k - 1])
        .map(|k| est.times[k])
        .fold(0.0, f64::max);
    assert!(
        last_rise < 6.0 * HOUR,
        "innovation still rising at {last_rise} s"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn zero_gains_reproduce_open_loop(
        c0 in 0.01f64..0.3,
        offset in -5.0f64..5.0,
        sensor in prop_oneof![Just(SensorKind::FullField), Just(SensorKind::BottomPoint)],
    ) {
        let params = ModelParameters { cells: 10, ..ModelParameters::default() };
        let schedule = ShelfSchedule::default();
        let settings = tight();
        let truth = integrate(&params, &schedule, (0.0, 4.0 * HOUR), &settings).unwrap();
        let meas = sample_measurements(&truth, 10.0, sensor, None).unwrap();
        let mut init = initial_estimate(&meas, params.cells, c0).unwrap();
        init.temperature.iter_mut().for_each(|t| *t += offset);
        let est = run_observer(
            &meas,
            ObserverGains::zero(sensor).into(),
            &init,
            &params,
            &schedule,
            &settings,
        )
        .unwrap();

        let model = Model::new(params.clone()).unwrap();
        let inputs = |t: f64| ControlInput::shelf(schedule.temperature(t));
        let breaks: Vec<f64> = schedule.cap_time().into_iter().collect();
        let open = integrate_model(&model, &init, &inputs, &breaks, (0.0, 4.0 * HOUR), &settings, None)
            .unwrap();
        for (t, s) in est.times.iter().zip(&est.states) {
            let x = open.interpolate(*t);
            for (a, b) in s.temperature.iter().zip(&x.temperature) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs(), "T at {t}: {a} vs {b}");
            }
            for (a, b) in s.concentration.iter().zip(&x.concentration) {
                prop_assert!((a - b).abs() <= 1e-6 * b.abs() + 1e-12, "c at {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eigenvalues_move_continuously_with_gains(
        lt_exp in -8.0f64..-4.0,
        lc_exp in -8.0f64..-5.5,
        scale in prop_oneof![Just(1.01), Just(0.99)],
    ) {
        let lin = nominal_linearization(
            &ModelParameters::default(),
            &ShelfSchedule::default(),
            DEFAULT_REFERENCE_HORIZON,
            SensorKind::FullField,
            &IntegratorSettings::default(),
        )
        .unwrap();
        let (lt, lc) = (-(10f64.powf(lt_exp)), 10f64.powf(lc_exp));
        let a = error_dynamics(&lin, &ObserverGains::new(lt, lc, SensorKind::FullField)).unwrap();
        let b = error_dynamics(
            &lin,
            &ObserverGains::new(lt * scale, lc * scale, SensorKind::FullField),
        )
        .unwrap();
        let shift = pair_by_proximity(&a.eigenvalues, &b.eigenvalues);
        let slow = a.dominant_pair().1.norm();
        prop_assert!(shift <= 0.1 * slow, "shift {shift:e} against slow mode {slow:e}");
        let (ta, tb) = (time_constant(&a).unwrap(), time_constant(&b).unwrap());
        prop_assert!((ta - tb).abs() <= 0.1 * ta, "tau {ta} -> {tb}");
    }

    #[test]
    fn small_errors_decay_at_the_linear_rate(
        shelf in 280.0f64..320.0,
        equilibrium in 0.02f64..0.1,
        lt_exp in -6.0f64..-4.5,
        lc_exp in -8.0f64..-7.0,
    ) {
        // A fixed point is its own reference state, so the linearization is
        // exact there and only the nonlinearity of the error can differ.
        let params = ModelParameters {
            cells: 10,
            initial_temperature: shelf,
            initial_concentration: equilibrium,
            equilibrium_concentration: equilibrium,
            ..ModelParameters::default()
        };
        let schedule = ShelfSchedule::constant(shelf);
        let x_ref = ProductState::initial(&params);
        let lin = linearize(&params, &x_ref, ControlInput::shelf(shelf), SensorKind::FullField).unwrap();
        let gains = ObserverGains::new(-(10f64.powf(lt_exp)), 10f64.powf(lc_exp), SensorKind::FullField);
        let ed = error_dynamics(&lin, &gains).unwrap();
        prop_assume!(ed.stable && ed.dominant_pair().1.im == 0.0);
        let tau = time_constant(&ed).unwrap();
        let rate = ed.dominant_pair().1.re;

        // Initial error along the slowest mode, largest entry 1% of the state.
        let m = params.cells;
        let mode: Vec<f64> = ed.eigenvectors.as_ref().unwrap().column(m).iter().map(|z| z.re).collect();
        let x = x_ref.to_vec();
        let factor = (0..2 * m)
            .map(|i| 0.01 * x[i].abs() / mode[i].abs().max(f64::MIN_POSITIVE))
            .fold(f64::INFINITY, f64::min);
        let start: Vec<f64> = x.iter().zip(&mode).map(|(a, d)| a + factor * d).collect();
        let e0 = factor * norm(&mode);

        let settings = tight();
        let truth = integrate(&params, &schedule, (0.0, 2.0 * tau), &settings).unwrap();
        let meas = sample_measurements(&truth, 10.0, SensorKind::FullField, None).unwrap();
        let est = run_observer(
            &meas,
            gains.into(),
            &ProductState::from_slice(&start),
            &params,
            &schedule,
            &settings,
        )
        .unwrap();
        let errors = estimation_errors(&est, &truth).unwrap();
        for (k, &t) in errors.times.iter().enumerate() {
            let mut e = errors.temperature[k].clone();
            e.extend(&errors.concentration[k]);
            let observed = norm(&e) / e0;
            let predicted = (rate * t).exp();
            prop_assert!(
                (observed - predicted).abs() <= 0.2 * predicted,
                "t = {t:.0} s (tau {tau:.0} s): decay {observed:.4} vs {predicted:.4}"
            );
        }
    }
}
