//! Closed-loop heating and parameter-fitting properties.

use desorb::calibration::{
    fit, rate_constant_mismatch, Channel, Dataset, FitParameter, FitProblem, FreeParameter,
};
use desorb::control::{
    run_closed_loop, ClosedLoopConfig, FeedbackSource, LoopObserver, MicrowaveController,
};
use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::observer::{ObserverGains, DEFAULT_INITIAL_CONCENTRATION};
use desorb::ode::IntegratorSettings;
use desorb::simulate::integrate;
use proptest::prelude::*;

const HOUR: f64 = 3600.0;
const LIMIT: f64 = 313.15;

fn closed_loop(gain: f64, period: f64, source: FeedbackSource) -> desorb::control::ClosedLoopRun {
    let params = ModelParameters::default();
    let config = ClosedLoopConfig {
        controller: MicrowaveController::new(gain, LIMIT).unwrap(),
        observer: Some(LoopObserver {
            plan: ObserverGains::full_field_default().into(),
            params: params.clone(),
            initial_concentration: DEFAULT_INITIAL_CONCENTRATION,
        }),
        source,
        sampling_period: period,
        ..ClosedLoopConfig::default()
    };
    run_closed_loop(&params, &ShelfSchedule::default(), &config).unwrap()
}

#[test]
fn more_heating_never_slows_drying() {
    let times: Vec<f64> = [0.0, 500.0, 1000.0]
        .iter()
        .map(|&k| {
            closed_loop(k, 10.0, FeedbackSource::Estimate)
                .drying_time
                .unwrap()
        })
        .collect();
    assert!(times[1] <= times[0] && times[2] <= times[1], "{times:?}");
}

fn fit_problem(free: Vec<FreeParameter>, base: ModelParameters, channel: Channel) -> FitProblem {
    let truth = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let traj = integrate(&truth, &schedule, (0.0, 8.0 * HOUR), &settings).unwrap();
    let times: Vec<f64> = (0..=48).map(|k| k as f64 * 600.0).collect();
    FitProblem {
        datasets: vec![Dataset::from_trajectory(&traj, channel, &times)],
        free,
        base,
        schedule,
        settings,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn hottest_node_respects_the_limit(
        period in 1.0f64..=10.0,
        source in prop_oneof![Just(FeedbackSource::Estimate), Just(FeedbackSource::Measurement)],
    ) {
        let run = closed_loop(1000.0, period, source);
        prop_assert!(run.max_temperature <= LIMIT + 0.5, "max {}", run.max_temperature);
    }

    #[test]
    fn best_loss_never_increases(
        start in 5.0f64..100.0,
        channel in prop_oneof![
            Just(Channel::TemperatureBottom),
            Just(Channel::TemperatureAvg),
            Just(Channel::ConcentrationAvg),
        ],
    ) {
        let base = ModelParameters { heat_transfer_coeff: start, ..ModelParameters::default() };
        let problem = fit_problem(vec![FreeParameter::new(FitParameter::HeatTransferCoeff)], base, channel);
        let result = fit(&problem, 40).unwrap();
        prop_assert!(result.history.windows(2).all(|w| w[1] <= w[0]), "{:?}", result.history);
        prop_assert!(result.loss <= result.initial_loss);
    }

    #[test]
    fn fitted_rate_constant_tracks_the_generating_curve(
        log_a in -3.5f64..-1.5,
        ea in 5000.0f64..12000.0,
    ) {
        let base = ModelParameters {
            frequency_factor: 10f64.powf(log_a),
            activation_energy: ea,
            ..ModelParameters::default()
        };
        let free = vec![
            FreeParameter::new(FitParameter::FrequencyFactor),
            FreeParameter::new(FitParameter::ActivationEnergy),
        ];
        let problem = fit_problem(free, base, Channel::ConcentrationAvg);
        let result = fit(&problem, 600).unwrap();
        let truth = ModelParameters::default();
        let traj = integrate(&truth, &ShelfSchedule::default(), (0.0, 8.0 * HOUR), &IntegratorSettings::default())
            .unwrap();
        let lo = traj.states.iter().map(|s| s.averages().0).fold(f64::MAX, f64::min);
        let hi = traj.states.iter().map(|s| s.averages().0).fold(f64::MIN, f64::max);
        let mismatch = rate_constant_mismatch(&truth, &result.params, lo, hi);
        prop_assert!(mismatch <= 0.05, "k_s mismatch {mismatch} over [{lo}, {hi}] K");
    }
}
