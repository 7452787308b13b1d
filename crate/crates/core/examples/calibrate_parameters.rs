//! Recovering the heat transfer coefficient and the desorption kinetics from
//! synthetic measurements.
//!
//! cargo run --release --example calibrate_parameters

use desorb::calibration::{
    fit, rate_constant_mismatch, Channel, Dataset, FitParameter, FitProblem, FreeParameter,
};
use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::ode::IntegratorSettings;
use desorb::simulate::integrate;

fn main() -> desorb::Result<()> {
    let truth = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let settings = IntegratorSettings::default();
    let traj = integrate(&truth, &schedule, (0.0, 8.0 * 3600.0), &settings)?;
    let times: Vec<f64> = (0..=96).map(|k| k as f64 * 300.0).collect();

    let h_fit = fit(
        &FitProblem {
            datasets: vec![Dataset::from_trajectory(
                &traj,
                Channel::TemperatureBottom,
                &times,
            )],
            free: vec![FreeParameter::new(FitParameter::HeatTransferCoeff)],
            base: ModelParameters {
                heat_transfer_coeff: 12.0,
                ..truth.clone()
            },
            schedule,
            settings: settings.clone(),
        },
        60,
    )?;
    println!(
        "bottom temperature -> h = {:.3} W/(m² K) (truth 30) in {} evaluations",
        h_fit.params.heat_transfer_coeff, h_fit.evaluations
    );

    let k_fit = fit(
        &FitProblem {
            datasets: vec![Dataset::from_trajectory(
                &traj,
                Channel::ConcentrationAvg,
                &times,
            )],
            free: vec![
                FreeParameter::new(FitParameter::FrequencyFactor),
                FreeParameter::new(FitParameter::ActivationEnergy),
            ],
            base: ModelParameters {
                frequency_factor: 1e-2,
                activation_energy: 12000.0,
                ..truth.clone()
            },
            schedule,
            settings,
        },
        600,
    )?;
    let p = &k_fit.params;
    println!(
        "average moisture -> A = {:.3e} 1/s, Ea = {:.0} J/mol (truth 3.34e-3, 8316)",
        p.frequency_factor, p.activation_energy
    );
    println!(
        "A and Ea trade off; the rate constant itself differs by at most {:.2}% over 241-313 K",
        100.0 * rate_constant_mismatch(&truth, p, 241.15, 313.15)
    );
    println!("loss {:.2e} -> {:.2e}", k_fit.initial_loss, k_fit.loss);
    Ok(())
}
