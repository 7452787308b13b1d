//! Scenario files written to disk load back unchanged.

use desorb::control::{FeedbackSource, MicrowaveController};
use desorb::scenario::{load_scenario, ControllerConfig, Scenario, ScheduleConfig, SwitchTime};
use desorb::simulate::SensorKind;
use proptest::prelude::*;

fn scenario_strategy() -> impl Strategy<Value = Scenario> {
    let model = (
        prop::sample::select(vec!["default", "case1", "case2", "case3", "caseB", "caseC"]),
        0.05f64..0.5,
        1.0f64..80.0,
        1000.0f64..40000.0,
        1e-5f64..1e3,
        0.005f64..0.05,
        2usize..60,
    );
    let observer = (
        any::<bool>(),
        -1e-3f64..-1e-9,
        1e-9f64..1e-4,
        0.0f64..0.3,
        prop::option::of(1.0f64..80.0),
        prop::option::of((-1e-3f64..-1e-9, 1e-9f64..1e-4, any::<bool>(), 0.5f64..8.0)),
    );
    let run = (
        any::<u64>(),
        1.0f64..60.0,
        0.0f64..5.0,
        prop::option::of(1e-4f64..0.1),
        prop::option::of((0.0f64..5e3, 300.0f64..330.0, any::<bool>())),
        "[a-zA-Z0-9 _\"\\\\-]{0,16}",
    );
    (model, observer, run).prop_map(|(m, o, r)| {
        let mut s = Scenario::preset(m.0).unwrap();
        s.model.conductivity = m.1;
        s.model.heat_transfer_coeff = m.2;
        s.model.activation_energy = m.3;
        s.model.frequency_factor = m.4;
        s.model.height = m.5;
        s.model.cells = m.6;
        s.set_sensor(if o.0 {
            SensorKind::FullField
        } else {
            SensorKind::BottomPoint
        });
        s.observer.temperature_gain = o.1;
        s.observer.concentration_gain = o.2;
        s.observer.initial_concentration = o.3;
        s.observer.heat_transfer_coeff = o.4;
        s.observer.schedule = o.5.map(|(lt, lc, in_tau, k)| ScheduleConfig {
            temperature_gain: lt,
            concentration_gain: lc,
            switch: if in_tau {
                SwitchTime::TimeConstants(k)
            } else {
                SwitchTime::Seconds(k * 3600.0)
            },
        });
        s.seed = r.0;
        s.measurement.sampling_period = r.1;
        s.measurement.noise_three_sigma = r.2;
        s.run.dry_threshold = r.3;
        s.controller = r.4.map(|(gain, limit, measured)| ControllerConfig {
            controller: MicrowaveController::new(gain, limit).unwrap(),
            feedback: if measured {
                FeedbackSource::Measurement
            } else {
                FeedbackSource::Estimate
            },
        });
        s.name = r.5;
        s
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn written_scenarios_load_back_identically(s in scenario_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.toml");
        s.write(&path).unwrap();
        let back = load_scenario(path.to_str().unwrap()).unwrap();
        prop_assert_eq!(back, s);
    }
}

#[test]
fn file_with_units_resolves_against_its_base() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("warm.toml");
    std::fs::write(
        &path,
        r#"
base = "case2"
name = "warm start"

[model]
initial_temperature = "-20 C"
height = "15 mm"
desorption_enthalpy = "2680 kJ/kg"

[shelf]
max = "45 C"
ramp_rate = "30 K/h"

[measurement]
sampling_period = "0.5 min"
noise_three_sigma = "5 K"

[run]
duration = "12 h"
"#,
    )
    .unwrap();
    let s = load_scenario(path.to_str().unwrap()).unwrap();
    let base = Scenario::preset("case2").unwrap();
    assert_eq!(s.name, "warm start");
    assert_eq!(s.model.activation_energy, base.model.activation_energy);
    assert!((s.model.initial_temperature - 253.15).abs() < 1e-12);
    assert!((s.model.height - 0.015).abs() < 1e-15);
    assert_eq!(s.model.desorption_enthalpy, 2.68e6);
    assert!((s.shelf.max - 318.15).abs() < 1e-12);
    assert!((s.shelf.ramp_rate - 30.0 / 3600.0).abs() < 1e-15);
    assert_eq!(s.measurement.sampling_period, 30.0);
    assert_eq!(s.measurement.noise_three_sigma, 5.0);
    assert_eq!(s.run.duration, 12.0 * 3600.0);
}

#[test]
fn missing_file_and_unknown_preset_are_reported() {
    let err = load_scenario("/nonexistent/scenario.toml").unwrap_err();
    assert_eq!(err.category(), "io");
    assert!(load_scenario("no-such-preset").is_err());
}
