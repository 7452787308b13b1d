//! Conventional secondary drying: shelf ramp, temperature and moisture
//! profiles, and the time to reach 1% residual moisture.
//!
//! cargo run --release --example simulate_drying

use desorb::model::{ModelParameters, ShelfSchedule};
use desorb::ode::IntegratorSettings;
use desorb::simulate::{run_until_dry, DEFAULT_HORIZON};

fn main() -> desorb::Result<()> {
    let params = ModelParameters::default();
    let schedule = ShelfSchedule::default();
    let (traj, t_dry) = run_until_dry(
        &params,
        &schedule,
        0.01,
        &IntegratorSettings::default(),
        DEFAULT_HORIZON,
    )?;

    println!(
        "{:>6} {:>9} {:>9} {:>9} {:>9}",
        "t [h]", "shelf [K]", "T_top", "T_bottom", "c_avg"
    );
    let mut t = 0.0;
    while t <= t_dry {
        let s = traj.interpolate(t);
        println!(
            "{:>6.1} {:>9.2} {:>9.2} {:>9.2} {:>9.4}",
            t / 3600.0,
            schedule.temperature(t),
            s.temperature[0],
            s.temperature[params.cells - 1],
            s.averages().1
        );
        t += 3600.0;
    }
    println!(
        "dry (c_avg = 0.01) after {:.3} h, {} accepted steps",
        t_dry / 3600.0,
        traj.len()
    );
    Ok(())
}
