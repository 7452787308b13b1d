//! Convergence time over a grid of observer gains, predicted from the
//! linearized error dynamics and checked by simulation on a coarse grid.
//!
//! cargo run --release --example design_space

use desorb::design::{design_space_sweep, log_space, SweepConfig, SweepMethod};
use desorb::model::{ModelParameters, ShelfSchedule};

fn main() -> desorb::Result<()> {
    let config = SweepConfig {
        temperature_gains: log_space(-1e-8, -1e-4, 5),
        concentration_gains: log_space(1e-8, 1e-6, 5),
        methods: vec![SweepMethod::Eigen, SweepMethod::Simulation],
        ..SweepConfig::default()
    };
    let cells = design_space_sweep(
        &ModelParameters::default(),
        &ShelfSchedule::default(),
        &config,
    )?;
    println!(
        "{:>10} {:>10} {:>12} {:>12}",
        "L_T", "L_c", "eigen [h]", "sim [h]"
    );
    for pair in cells.chunks(2) {
        let show = |c: &desorb::design::SweepCell| match (c.stable, c.convergence_time) {
            (false, _) => "unstable".to_string(),
            (true, None) => "n/c".to_string(),
            (true, Some(t)) => format!("{:.2}{}", t / 3600.0, if c.oscillatory { "~" } else { "" }),
        };
        println!(
            "{:>10.1e} {:>10.1e} {:>12} {:>12}",
            pair[0].temperature_gain,
            pair[0].concentration_gain,
            show(&pair[0]),
            show(&pair[1])
        );
    }
    println!("~ marks oscillatory error dynamics; n/c = not converged within the horizon");
    Ok(())
}
