//! Volumetric (microwave) heating driven by the observer's temperature
//! estimate, capped at a product temperature limit.
//!
//! cargo run --release --example microwave_control

use desorb::control::{run_closed_loop, ClosedLoopConfig, LoopObserver, MicrowaveController};
use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::observer::{ObserverGains, DEFAULT_INITIAL_CONCENTRATION};

fn main() -> desorb::Result<()> {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let observer = LoopObserver {
        plan: ObserverGains::full_field_default().into(),
        params: params.clone(),
        initial_concentration: DEFAULT_INITIAL_CONCENTRATION,
    };
    for gain in [0.0, 500.0, 1000.0, 5000.0] {
        let run = run_closed_loop(
            &params,
            &schedule,
            &ClosedLoopConfig {
                controller: MicrowaveController::new(gain, 313.15)?,
                observer: Some(observer.clone()),
                ..ClosedLoopConfig::default()
            },
        )?;
        let energy: f64 = run
            .power
            .iter()
            .zip(run.sample_times.windows(2))
            .map(|(q, w)| q * (w[1] - w[0]))
            .sum();
        println!(
            "K = {gain:>6}: dry after {}, hottest {:.2} K, delivered {:.1} MJ/m³",
            run.drying_time
                .map_or("never".into(), |t| format!("{:.3} h", t / 3600.0)),
            run.max_temperature,
            energy / 1e6
        );
    }
    Ok(())
}
