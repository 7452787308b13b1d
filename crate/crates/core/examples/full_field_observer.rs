//! State estimation from temperatures measured at every grid node. The
//! observer starts with a poor moisture guess and recovers the true field.
//!
//! cargo run --release --example full_field_observer

use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::observer::{estimation_errors, initial_estimate, run_observer, ObserverGains};
use desorb::ode::IntegratorSettings;
use desorb::simulate::{integrate, sample_measurements, NoiseSpec, SensorKind};

fn main() -> desorb::Result<()> {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let truth = integrate(&params, &schedule, (0.0, 10.0 * 3600.0), &settings)?;

    for noise in [None, Some(NoiseSpec::from_three_sigma(5.0, 1))] {
        let meas = sample_measurements(&truth, 10.0, SensorKind::FullField, noise)?;
        let init = initial_estimate(&meas, params.cells, 0.0314)?;
        let gains = ObserverGains::full_field_default();
        let est = run_observer(&meas, gains.into(), &init, &params, &schedule, &settings)?;
        let errors = estimation_errors(&est, &truth)?;
        let label = if noise.is_some() {
            "3σ = 5 K noise"
        } else {
            "noise-free"
        };
        println!(
            "{label}: gains L_T = {:e}, L_c = {:e}",
            gains.temperature, gains.concentration
        );
        for k in (0..est.len()).step_by(1800) {
            let (_, c_hat) = est.states[k].averages();
            let (_, c) = truth.interpolate(est.times[k]).averages();
            println!(
                "  {:>5.1} h  c_avg {c:.4}  estimate {c_hat:.4}",
                est.times[k] / 3600.0
            );
        }
        match errors.convergence_time() {
            Some(t) => println!("  converged (2% rule) after {:.3} h", t / 3600.0),
            None => println!("  did not meet the 2% rule within the run"),
        }
    }
    Ok(())
}
