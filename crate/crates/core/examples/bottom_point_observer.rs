//! Estimation from a single temperature probe at the vial bottom, with the
//! observer started from a range of moisture guesses.
//!
//! cargo run --release --example bottom_point_observer

use desorb::observer::{estimation_errors, initial_estimate, run_observer};
use desorb::ode::IntegratorSettings;
use desorb::scenario::Scenario;
use desorb::simulate::{integrate, sample_measurements};

fn main() -> desorb::Result<()> {
    let scenario = Scenario::preset("caseC").expect("built-in preset");
    let params = &scenario.model;
    let settings = IntegratorSettings::default();
    let truth = integrate(params, &scenario.shelf, (0.0, 10.0 * 3600.0), &settings)?;
    let (plan, _) = scenario.gain_plan(&settings)?;
    let meas = sample_measurements(&truth, 10.0, plan.sensor(), None)?;
    println!(
        "one probe, gains L_T = {:e}, L_c = {:e}",
        scenario.observer.temperature_gain, scenario.observer.concentration_gain
    );
    for factor in [0.0, 0.5, 1.5, 2.0] {
        let guess = factor * params.initial_concentration;
        let init = initial_estimate(&meas, params.cells, guess)?;
        let est = run_observer(&meas, plan, &init, params, &scenario.shelf, &settings)?;
        let t = estimation_errors(&est, &truth)?.convergence_time();
        println!(
            "  initial guess {guess:.4} ({factor}x truth): converged after {}",
            t.map_or("never".into(), |t| format!("{:.3} h", t / 3600.0))
        );
    }
    Ok(())
}
