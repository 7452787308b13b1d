//! High observer gains converge fast but amplify measurement noise. Switching
//! to low gains after four time constants keeps the fast start and the quiet
//! tail.
//!
//! cargo run --release --example gain_scheduling

use desorb::design::nominal_time_constant;
use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::observer::{
    estimation_errors, initial_estimate, run_observer, GainPlan, GainSchedule, ObserverGains,
};
use desorb::ode::IntegratorSettings;
use desorb::simulate::{integrate, sample_measurements, NoiseSpec, SensorKind};

fn main() -> desorb::Result<()> {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let truth = integrate(&params, &schedule, (0.0, 10.0 * 3600.0), &settings)?;
    let high = ObserverGains::new(-1e-6, 5e-7, SensorKind::FullField);
    let low = ObserverGains::new(-1e-6, 1e-7, SensorKind::FullField);
    let switch = 4.0 * nominal_time_constant(&params, &schedule, &high, &settings)?;
    println!("switch after 4τ = {:.2} h", switch / 3600.0);

    let plans: [(&str, GainPlan); 3] = [
        ("high", high.into()),
        ("low", low.into()),
        ("scheduled", GainSchedule::new(high, low, switch)?.into()),
    ];
    let noise = Some(NoiseSpec::from_three_sigma(5.0, 42));
    let clean_meas = sample_measurements(&truth, 10.0, SensorKind::FullField, None)?;
    let noisy_meas = sample_measurements(&truth, 10.0, SensorKind::FullField, noise)?;
    for (name, plan) in plans {
        let init = initial_estimate(&clean_meas, params.cells, 0.0314)?;
        let clean = run_observer(&clean_meas, plan, &init, &params, &schedule, &settings)?;
        let t_conv = estimation_errors(&clean, &truth)?.convergence_time();
        let init = initial_estimate(&noisy_meas, params.cells, 0.0314)?;
        let noisy = run_observer(&noisy_meas, plan, &init, &params, &schedule, &settings)?;
        // Spread of the noisy moisture estimate around the clean one late in the run.
        let late: Vec<f64> = noisy
            .states
            .iter()
            .zip(&clean.states)
            .zip(&noisy.times)
            .filter(|(_, t)| **t >= 6.0 * 3600.0)
            .map(|((a, b), _)| a.averages().1 - b.averages().1)
            .collect();
        let mean = late.iter().sum::<f64>() / late.len() as f64;
        let std = (late.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / late.len() as f64).sqrt();
        println!(
            "{name:>9}: converged {}, late noise std(c_avg) {std:.2e}",
            t_conv.map_or("never".into(), |t| format!("{:.2} h", t / 3600.0))
        );
    }
    Ok(())
}
