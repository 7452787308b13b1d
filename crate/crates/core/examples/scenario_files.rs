//! Scenario files: unit-suffixed values on top of a preset, validation that
//! reports every problem at once, and lossless round trips.
//!
//! cargo run --release --example scenario_files

use desorb::scenario::Scenario;

const FILE: &str = r#"
base = "case3"
name = "thin cake"

[model]
height = "8 mm"
initial_temperature = "-15 C"

[shelf]
ramp_rate = "0.25 K/min"
max = "40 C"

[observer]
sensor = "bottom"

[measurement]
sampling_period = "30 s"
noise_three_sigma = "0.5 K"
"#;

fn main() -> desorb::Result<()> {
    let s = Scenario::from_toml_str(FILE, "inline")?;
    println!(
        "{}: H = {} m, T0 = {:.2} K, ramp {:.5} K/s to {:.2} K, sensor {}",
        s.name,
        s.model.height,
        s.model.initial_temperature,
        s.shelf.ramp_rate,
        s.shelf.max,
        s.observer.sensor
    );

    let written = s.to_toml();
    assert_eq!(Scenario::from_toml_str(&written, "written")?, s);
    println!("written form (bare SI numbers) loads back identically:\n{written}");

    let broken = "[model]\nheight = -0.02\ncells = 1\n[measurement]\nsampling_period = 0\n";
    match Scenario::from_toml_str(broken, "broken.toml") {
        Ok(_) => unreachable!("invalid scenario accepted"),
        Err(e) => println!("error[{}]: {e}", e.category()),
    }
    Ok(())
}
