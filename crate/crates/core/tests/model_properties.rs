//! Physical invariants of the drying model and its numerical solution.

use desorb::model::{ControlInput, Model, ModelParameters, ProductState, ShelfSchedule};
use desorb::ode::IntegratorSettings;
use desorb::simulate::{
    integrate, run_until_dry, sample_measurements, NoiseSpec, SensorKind, DEFAULT_HORIZON,
};
use proptest::prelude::*;

const HOUR: f64 = 3600.0;

fn params_strategy() -> impl Strategy<Value = ModelParameters> {
    (
        4usize..16,
        0.05f64..0.5,
        1.0f64..60.0,
        4000.0f64..12000.0,
        -5.0f64..-2.0,
        230.0f64..260.0,
        0.05f64..0.3,
        0.005f64..0.03,
    )
        .prop_map(|(cells, k, h, ea, log_a, t0, c0, height)| ModelParameters {
            cells,
            conductivity: k,
            heat_transfer_coeff: h,
            activation_energy: ea,
            frequency_factor: 10f64.powf(log_a),
            initial_temperature: t0,
            initial_concentration: c0,
            height,
            ..ModelParameters::default()
        })
}

fn schedule_strategy() -> impl Strategy<Value = ShelfSchedule> {
    (235.0f64..265.0, 0.1f64..1.0, 290.0f64..320.0)
        .prop_map(|(start, rate, max)| ShelfSchedule::new(start, rate / 60.0, max).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn equilibrium_at_shelf_temperature_is_a_fixed_point(
        params in params_strategy(),
        shelf in 250.0f64..330.0,
        equilibrium in 0.0f64..0.1,
    ) {
        let params = ModelParameters { equilibrium_concentration: equilibrium, ..params };
        let model = Model::new(params.clone()).unwrap();
        let x = ProductState::uniform(params.cells, shelf, equilibrium);
        let dx = model.rhs(&x, ControlInput::shelf(shelf)).unwrap();
        prop_assert!(dx.temperature.iter().chain(&dx.concentration).all(|v| *v == 0.0), "{dx:?}");
    }

    #[test]
    fn concentration_falls_and_stays_nonnegative(
        params in params_strategy(),
        schedule in schedule_strategy(),
    ) {
        let traj = integrate(&params, &schedule, (0.0, 12.0 * HOUR), &IntegratorSettings::default())
            .unwrap();
        for w in traj.states.windows(2) {
            for (a, b) in w[0].concentration.iter().zip(&w[1].concentration) {
                prop_assert!(*b >= 0.0 && *b <= *a + 1e-14, "{a} -> {b}");
            }
        }
    }

    #[test]
    fn conduction_only_temperatures_stay_in_range(
        params in params_strategy(),
        schedule in schedule_strategy(),
    ) {
        let params = ModelParameters { desorption_enthalpy: 0.0, ..params };
        let traj = integrate(&params, &schedule, (0.0, 12.0 * HOUR), &IntegratorSettings::default())
            .unwrap();
        let lo = params.initial_temperature.min(schedule.initial) - 1e-6;
        let hi = params.initial_temperature.max(schedule.max) + 1e-6;
        for s in &traj.states {
            for t in &s.temperature {
                prop_assert!(*t >= lo && *t <= hi, "{t} outside [{lo}, {hi}]");
            }
        }
    }

    #[test]
    fn insulated_uniform_product_stays_uniform(
        params in params_strategy(),
        schedule in schedule_strategy(),
    ) {
        let params = ModelParameters { heat_transfer_coeff: 0.0, ..params };
        let traj = integrate(&params, &schedule, (0.0, 12.0 * HOUR), &IntegratorSettings::default())
            .unwrap();
        for s in &traj.states {
            let spread = |v: &[f64]| {
                v.iter().copied().fold(f64::MIN, f64::max) - v.iter().copied().fold(f64::MAX, f64::min)
            };
            prop_assert!(spread(&s.temperature) <= 1e-9, "{:?}", s.temperature);
            prop_assert!(spread(&s.concentration) <= 1e-12, "{:?}", s.concentration);
        }
    }

    #[test]
    fn isothermal_concentration_decays_exponentially(
        temperature in 270.0f64..330.0,
        equilibrium in 0.0f64..0.05,
        cells in 2usize..12,
    ) {
        let params = ModelParameters {
            cells,
            desorption_enthalpy: 0.0,
            initial_temperature: temperature,
            equilibrium_concentration: equilibrium,
            ..ModelParameters::default()
        };
        let schedule = ShelfSchedule::constant(temperature);
        let traj = integrate(&params, &schedule, (0.0, 10.0 * HOUR), &IntegratorSettings::default())
            .unwrap();
        let k = params.rate_constant(temperature);
        let c0 = params.initial_concentration;
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let exact = equilibrium + (c0 - equilibrium) * (-k * t).exp();
            for c in &s.concentration {
                prop_assert!(((c - exact) / exact).abs() <= 1e-5, "t {t}: {c} vs {exact}");
            }
        }
    }

    #[test]
    fn noisy_measurements_are_reproducible(seed in any::<u64>(), three_sigma in 0.1f64..5.0) {
        let params = ModelParameters { cells: 6, ..ModelParameters::default() };
        let traj = integrate(&params, &ShelfSchedule::default(), (0.0, HOUR), &IntegratorSettings::default())
            .unwrap();
        let noise = Some(NoiseSpec::from_three_sigma(three_sigma, seed));
        let a = sample_measurements(&traj, 10.0, SensorKind::FullField, noise).unwrap();
        let b = sample_measurements(&traj, 10.0, SensorKind::FullField, noise).unwrap();
        prop_assert_eq!(&a, &b);
        let other = Some(NoiseSpec::from_three_sigma(three_sigma, seed.wrapping_add(1)));
        let c = sample_measurements(&traj, 10.0, SensorKind::FullField, other).unwrap();
        prop_assert_ne!(&a, &c);
    }
}

#[test]
fn grid_refinement_changes_average_concentration_by_under_one_percent() {
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let coarse = integrate(
        &ModelParameters::default(),
        &schedule,
        (0.0, 12.0 * HOUR),
        &settings,
    )
    .unwrap();
    let fine_params = ModelParameters {
        cells: 80,
        ..ModelParameters::default()
    };
    let fine = integrate(&fine_params, &schedule, (0.0, 12.0 * HOUR), &settings).unwrap();
    for k in 0..=144 {
        let t = k as f64 * 300.0;
        let a = coarse.interpolate(t).averages().1;
        let b = fine.interpolate(t).averages().1;
        assert!(((a - b) / b).abs() <= 0.01, "t {t}: {a} vs {b}");
    }
}

#[test]
fn halving_the_tolerance_barely_moves_the_drying_time() {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let base = IntegratorSettings::default();
    let half = IntegratorSettings {
        rel_tol: 0.5 * base.rel_tol,
        ..base.clone()
    };
    let (_, a) = run_until_dry(&params, &schedule, 0.01, &base, DEFAULT_HORIZON).unwrap();
    let (_, b) = run_until_dry(&params, &schedule, 0.01, &half, DEFAULT_HORIZON).unwrap();
    assert!(((a - b) / b).abs() < 1e-3, "{a} vs {b}");
}
