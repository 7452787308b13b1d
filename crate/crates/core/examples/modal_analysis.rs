//! Eigen-analysis of the observer error dynamics: the slow eigenvalues, the
//! resulting time constant and how an initial moisture error splits over
//! the modes.
//!
//! cargo run --release --example modal_analysis

use desorb::design::{
    error_dynamics, modal_contributions, nominal_linearization, time_constant,
    DEFAULT_REFERENCE_HORIZON,
};
use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::observer::ObserverGains;
use desorb::ode::IntegratorSettings;
use desorb::simulate::SensorKind;

fn main() -> desorb::Result<()> {
    let params = ModelParameters::default();
    let lin = nominal_linearization(
        &params,
        &ShelfSchedule::default(),
        DEFAULT_REFERENCE_HORIZON,
        SensorKind::FullField,
        &IntegratorSettings::default(),
    )?;
    let (t_ref, c_ref) = lin.x_ref.averages();
    println!("reference state: T = {t_ref:.2} K, c = {c_ref:.4}");

    let ed = error_dynamics(&lin, &ObserverGains::full_field_default())?;
    let m = params.cells;
    let (lm, lm1) = ed.dominant_pair();
    println!(
        "dominant pair (1/s): {:+.4e} {:+.4e}i and {:+.4e} {:+.4e}i",
        lm.re, lm.im, lm1.re, lm1.im
    );
    let slowest = ed.eigenvalues[2 * m - 1];
    println!("slowest mode overall: {:+.4e} 1/s", slowest.re);
    let tau = time_constant(&ed)?;
    println!(
        "time constant {:.0} s, predicted convergence 4τ = {:.2} h",
        tau,
        4.0 * tau / 3600.0
    );

    // A uniform moisture error with no temperature error.
    let mut e0 = vec![0.0; 2 * m];
    e0[m..].fill(0.2059 - 0.0314);
    let mc = modal_contributions(&ed, &e0)?;
    let mut ranked: Vec<(usize, f64)> = mc.average.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    println!("largest contributions to the average moisture error:");
    for (p, v) in ranked.iter().take(3) {
        println!(
            "  mode {:>2} (λ = {:+.3e}): {v:+.4e}",
            p + 1,
            ed.eigenvalues[*p].re
        );
    }
    println!("reconstruction error {:.1e}", mc.reconstruction_error);
    Ok(())
}
