//! Runnable scenarios: named presets and a TOML format with unit-suffixed
//! quantities (`ramp_rate = "0.2 K/min"`, `height = "2 cm"`). Everything is
//! converted to SI at load time; [`Scenario::to_toml`] writes bare SI numbers
//! so that loading the written text reproduces every field exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::control::{FeedbackSource, MicrowaveController};
use crate::design::nominal_time_constant;
use crate::error::{Error, Result};
use crate::model::{ModelParameters, ShelfSchedule};
use crate::observer::{GainPlan, GainSchedule, ObserverGains, DEFAULT_INITIAL_CONCENTRATION};
use crate::ode::IntegratorSettings;
use crate::simulate::{NoiseSpec, SensorKind, DEFAULT_HORIZON};

/// Preset names accepted by [`Scenario::preset`] and [`load_scenario`].
pub const PRESETS: [&str; 8] = [
    "default", "case1", "case2", "case3", "caseA", "caseB", "caseC", "caseD",
];

/// When a gain schedule switches to its reduced gains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SwitchTime {
    /// Absolute time in seconds.
    Seconds(f64),
    /// Multiple of the time constant of the initial gains at the nominal
    /// operating point.
    TimeConstants(f64),
}

impl SwitchTime {
    fn parse(text: &str, location: &str) -> Result<Self> {
        let t = text.trim();
        if let Some(k) = t.strip_suffix("tau") {
            let k = k.trim();
            let k = if k.is_empty() {
                1.0
            } else {
                k.parse::<f64>()
                    .map_err(|_| Error::parse(location, format!("bad multiple in '{text}'")))?
            };
            Ok(SwitchTime::TimeConstants(k))
        } else {
            Ok(SwitchTime::Seconds(parse_quantity(
                t,
                Dimension::Time,
                location,
            )?))
        }
    }

    fn positive(&self) -> bool {
        match *self {
            SwitchTime::Seconds(v) | SwitchTime::TimeConstants(v) => v.is_finite() && v > 0.0,
        }
    }
}

impl std::fmt::Display for SwitchTime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SwitchTime::Seconds(s) => write!(f, "{s:?} s"),
            SwitchTime::TimeConstants(k) => write!(f, "{k:?}tau"),
        }
    }
}

/// Reduced gains applied after the switch time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub temperature_gain: f64,
    pub concentration_gain: f64,
    pub switch: SwitchTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverConfig {
    pub sensor: SensorKind,
    pub temperature_gain: f64,
    pub concentration_gain: f64,
    pub schedule: Option<ScheduleConfig>,
    /// Uniform initial concentration guess, kg/kg.
    pub initial_concentration: f64,
    /// Heat transfer coefficient assumed by the observer's model when it
    /// differs from the plant, W/(m²·K).
    pub heat_transfer_coeff: Option<f64>,
}

impl ObserverConfig {
    /// Default gains for `sensor`, no schedule.
    pub fn for_sensor(sensor: SensorKind) -> Self {
        let g = ObserverGains::default_for(sensor);
        Self {
            sensor,
            temperature_gain: g.temperature,
            concentration_gain: g.concentration,
            schedule: None,
            initial_concentration: DEFAULT_INITIAL_CONCENTRATION,
            heat_transfer_coeff: None,
        }
    }

    pub fn gains(&self) -> ObserverGains {
        ObserverGains::new(self.temperature_gain, self.concentration_gain, self.sensor)
    }
}

impl Default for ObserverConfig {
    fn default() -> Self {
        Self::for_sensor(SensorKind::FullField)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementConfig {
    /// Sampling period, s.
    pub sampling_period: f64,
    /// 3σ of the additive temperature noise, K. Zero means noise-free.
    pub noise_three_sigma: f64,
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            sampling_period: 10.0,
            noise_three_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    /// Stop once the average concentration reaches this value, kg/kg.
    pub dry_threshold: Option<f64>,
    /// Run length when no threshold is set, s.
    pub duration: f64,
    /// Upper bound on the run length when a threshold is set, s.
    pub max_duration: f64,
}

impl RunConfig {
    /// End time to integrate to: the cap when stopping on dryness, the fixed
    /// duration otherwise.
    pub fn horizon(&self) -> f64 {
        if self.dry_threshold.is_some() {
            self.max_duration
        } else {
            self.duration
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dry_threshold: None,
            duration: 16.0 * 3600.0,
            max_duration: DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    pub controller: MicrowaveController,
    pub feedback: FeedbackSource,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            controller: MicrowaveController::default(),
            feedback: FeedbackSource::Estimate,
        }
    }
}

/// A complete, runnable configuration in SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelParameters,
    pub shelf: ShelfSchedule,
    pub observer: ObserverConfig,
    pub measurement: MeasurementConfig,
    pub run: RunConfig,
    pub controller: Option<ControllerConfig>,
    /// Root seed for every random draw in a run.
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            model: ModelParameters::default(),
            shelf: ShelfSchedule::default(),
            observer: ObserverConfig::default(),
            measurement: MeasurementConfig::default(),
            run: RunConfig::default(),
            controller: None,
            seed: 0,
        }
    }
}

impl Scenario {
    /// Built-in scenario by name. `case1` and `caseA` are the same system.
    pub fn preset(name: &str) -> Option<Scenario> {
        let mut s = Scenario {
            name: name.to_string(),
            ..Scenario::default()
        };
        let p = &mut s.model;
        match name {
            "default" => {}
            "case1" | "caseA" => {
                p.activation_energy = 5000.0;
                p.frequency_factor = 7.1e-4;
                p.initial_concentration = 0.6415;
            }
            "case2" => {
                p.activation_energy = 5700.0;
                p.frequency_factor = 1e-3;
                p.initial_concentration = 0.6415;
            }
            "case3" | "caseD" => {
                p.activation_energy = 5920.0;
                p.frequency_factor = 1.2e-3;
                p.heat_transfer_coeff = 7.0;
                p.initial_temperature = 264.09;
                p.initial_concentration = 0.0603;
                p.height = 0.0102;
                s.shelf = ShelfSchedule {
                    initial: 264.09,
                    ramp_rate: 0.5 / 60.0,
                    max: 312.0,
                };
                if name == "caseD" {
                    s.observer = ObserverConfig::for_sensor(SensorKind::BottomPoint);
                }
            }
            "caseB" => {
                p.conductivity = 0.028;
                p.activation_energy = 5300.0;
                p.frequency_factor = 4.5e-4;
                p.initial_concentration = 0.1940;
            }
            "caseC" => {
                p.activation_energy = 37714.0;
                p.frequency_factor = 277.0;
                p.heat_transfer_coeff = 7.0;
                p.initial_temperature = 270.38;
                p.initial_concentration = 0.0314;
                s.shelf = ShelfSchedule {
                    initial: 270.38,
                    ramp_rate: 0.6 / 60.0,
                    max: ShelfSchedule::default().max,
                };
                s.observer = ObserverConfig::for_sensor(SensorKind::BottomPoint);
            }
            _ => return None,
        }
        Some(s)
    }

    /// Parses scenario text. `origin` names the source in error messages.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Scenario> {
        let raw: RawScenario =
            toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string().trim_end()))?;
        let s = raw.resolve()?;
        s.validate()?;
        Ok(s)
    }

    /// Serializes every field as a bare SI number (or string for enums).
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        let _ = writeln!(w, "name = {}", quote(&self.name));
        let _ = writeln!(w, "seed = {}", self.seed);
        let p = &self.model;
        let _ = writeln!(w, "\n[model]");
        for (key, v) in [
            ("density", p.rho),
            ("dried_density", p.rho_dried),
            ("conductivity", p.conductivity),
            ("heat_capacity", p.heat_capacity),
            ("gas_heat_capacity", p.gas_heat_capacity),
            ("desorption_enthalpy", p.desorption_enthalpy),
            ("activation_energy", p.activation_energy),
            ("frequency_factor", p.frequency_factor),
            ("heat_transfer_coeff", p.heat_transfer_coeff),
            ("initial_temperature", p.initial_temperature),
            ("initial_concentration", p.initial_concentration),
            ("equilibrium_concentration", p.equilibrium_concentration),
            ("height", p.height),
            ("gas_constant", p.gas_constant),
        ] {
            let _ = writeln!(w, "{key} = {v:?}");
        }
        let _ = writeln!(w, "cells = {}", p.cells);
        let _ = writeln!(w, "\n[shelf]");
        let _ = writeln!(w, "initial = {:?}", self.shelf.initial);
        let _ = writeln!(w, "ramp_rate = {:?}", self.shelf.ramp_rate);
        let _ = writeln!(w, "max = {:?}", self.shelf.max);
        let o = &self.observer;
        let _ = writeln!(w, "\n[observer]");
        let _ = writeln!(w, "sensor = \"{}\"", o.sensor);
        let _ = writeln!(w, "temperature_gain = {:?}", o.temperature_gain);
        let _ = writeln!(w, "concentration_gain = {:?}", o.concentration_gain);
        let _ = writeln!(w, "initial_concentration = {:?}", o.initial_concentration);
        if let Some(h) = o.heat_transfer_coeff {
            let _ = writeln!(w, "heat_transfer_coeff = {h:?}");
        }
        if let Some(sc) = &o.schedule {
            let _ = writeln!(w, "\n[observer.schedule]");
            let _ = writeln!(w, "temperature_gain = {:?}", sc.temperature_gain);
            let _ = writeln!(w, "concentration_gain = {:?}", sc.concentration_gain);
            let _ = writeln!(w, "switch = \"{}\"", sc.switch);
        }
        let _ = writeln!(w, "\n[measurement]");
        let _ = writeln!(
            w,
            "sampling_period = {:?}",
            self.measurement.sampling_period
        );
        let _ = writeln!(
            w,
            "noise_three_sigma = {:?}",
            self.measurement.noise_three_sigma
        );
        let _ = writeln!(w, "\n[run]");
        if let Some(th) = self.run.dry_threshold {
            let _ = writeln!(w, "dry_threshold = {th:?}");
        }
        let _ = writeln!(w, "duration = {:?}", self.run.duration);
        let _ = writeln!(w, "max_duration = {:?}", self.run.max_duration);
        if let Some(c) = &self.controller {
            let _ = writeln!(w, "\n[controller]");
            let _ = writeln!(w, "gain = {:?}", c.controller.gain);
            let _ = writeln!(w, "upper_limit = {:?}", c.controller.upper_limit);
            let _ = writeln!(w, "feedback = \"{}\"", c.feedback);
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Checks every invariant and reports all violations at once. Soft
    /// warnings from the model are logged.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        match self.model.validate() {
            Ok(warnings) => warnings.iter().for_each(|w| log::warn!("{w}")),
            Err(Error::Validation(v)) => errors.extend(v),
            Err(e) => errors.push(e.to_string()),
        }
        match self.shelf.validate() {
            Ok(()) => {}
            Err(Error::Validation(v)) => errors.extend(v),
            Err(e) => errors.push(e.to_string()),
        }
        let o = &self.observer;
        if !(o.temperature_gain.is_finite() && o.concentration_gain.is_finite()) {
            errors.push("observer gains must be finite".into());
        }
        if !(o.initial_concentration.is_finite() && o.initial_concentration >= 0.0) {
            errors.push(format!(
                "observer initial concentration must be >= 0 (got {})",
                o.initial_concentration
            ));
        }
        if let Some(h) = o.heat_transfer_coeff {
            if !(h.is_finite() && h >= 0.0) {
                errors.push(format!(
                    "observer heat transfer coefficient must be >= 0 (got {h})"
                ));
            }
        }
        if let Some(sc) = &o.schedule {
            if !(sc.temperature_gain.is_finite() && sc.concentration_gain.is_finite()) {
                errors.push("scheduled gains must be finite".into());
            }
            if !sc.switch.positive() {
                errors.push(format!("switch time must be > 0 (got {})", sc.switch));
            }
        }
        let m = &self.measurement;
        if !(m.sampling_period.is_finite() && m.sampling_period > 0.0) {
            errors.push(format!(
                "sampling period must be > 0 (got {})",
                m.sampling_period
            ));
        }
        if !(m.noise_three_sigma.is_finite() && m.noise_three_sigma >= 0.0) {
            errors.push(format!(
                "noise 3-sigma must be >= 0 (got {})",
                m.noise_three_sigma
            ));
        }
        if let Some(th) = self.run.dry_threshold {
            if !(th.is_finite() && th > 0.0) {
                errors.push(format!("dry threshold must be > 0 (got {th})"));
            }
        }
        for (what, v) in [
            ("duration", self.run.duration),
            ("max duration", self.run.max_duration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("run {what} must be > 0 (got {v})"));
            }
        }
        if let Some(c) = &self.controller {
            if let Err(e) = c.controller.validate() {
                errors.push(e.to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    /// Switches the sensor. Gains are reset to that sensor's defaults and
    /// any schedule is dropped, since gains do not transfer between sensors.
    pub fn set_sensor(&mut self, sensor: SensorKind) {
        if sensor != self.observer.sensor {
            let keep = self.observer;
            self.observer = ObserverConfig {
                initial_concentration: keep.initial_concentration,
                heat_transfer_coeff: keep.heat_transfer_coeff,
                ..ObserverConfig::for_sensor(sensor)
            };
        }
    }

    /// Parameters of the observer's internal model.
    pub fn observer_params(&self) -> ModelParameters {
        let mut p = self.model.clone();
        if let Some(h) = self.observer.heat_transfer_coeff {
            p.heat_transfer_coeff = h;
        }
        p
    }

    /// Resolved gain plan. For a switch given in time constants, also
    /// returns the time constant of the initial gains.
    pub fn gain_plan(&self, settings: &IntegratorSettings) -> Result<(GainPlan, Option<f64>)> {
        let initial = self.observer.gains();
        let Some(sc) = self.observer.schedule else {
            return Ok((GainPlan::Fixed(initial), None));
        };
        let reduced =
            ObserverGains::new(sc.temperature_gain, sc.concentration_gain, initial.sensor);
        let (switch, tau) = match sc.switch {
            SwitchTime::Seconds(s) => (s, None),
            SwitchTime::TimeConstants(k) => {
                let tau = nominal_time_constant(
                    &self.observer_params(),
                    &self.shelf,
                    &initial,
                    settings,
                )?;
                (k * tau, Some(tau))
            }
        };
        Ok((GainSchedule::new(initial, reduced, switch)?.into(), tau))
    }

    pub fn noise(&self) -> Option<NoiseSpec> {
        (self.measurement.noise_three_sigma > 0.0)
            .then(|| NoiseSpec::from_three_sigma(self.measurement.noise_three_sigma, self.seed))
    }
}

/// Loads a scenario from a file path, or a preset when `source` names one
/// and no such file exists.
pub fn load_scenario(source: &str) -> Result<Scenario> {
    let path = Path::new(source);
    if !path.exists() {
        if let Some(s) = Scenario::preset(source) {
            return Ok(s);
        }
        let looks_like_path =
            source.contains(std::path::MAIN_SEPARATOR) || source.ends_with(".toml");
        if looks_like_path {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("scenario file {source} not found"),
            )));
        }
        return Err(Error::parse(
            source,
            format!("no such file or preset (presets: {})", PRESETS.join(", ")),
        ));
    }
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml_str(&text, source)
}

/// Parses `LT,LC`.
pub fn parse_gain_pair(text: &str) -> Result<(f64, f64)> {
    let bad = || Error::parse("gains", format!("expected LT,LC, got '{text}'"));
    let (a, b) = text.split_once(',').ok_or_else(bad)?;
    let lt: f64 = a.trim().parse().map_err(|_| bad())?;
    let lc: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lt.is_finite() && lc.is_finite()) {
        return Err(bad());
    }
    Ok((lt, lc))
}

/// Parses `LT1,LC1:LT2,LC2@switch`, where `switch` is a time (`5400`,
/// `1.5 h`) or a multiple of the time constant (`4tau`). Returns the initial
/// gain pair and the schedule to the reduced pair.
pub fn parse_gain_schedule(text: &str) -> Result<((f64, f64), ScheduleConfig)> {
    let bad = || {
        Error::parse(
            "gain schedule",
            format!("expected LT1,LC1:LT2,LC2@switch, got '{text}'"),
        )
    };
    let (pairs, switch) = text.split_once('@').ok_or_else(bad)?;
    let (first, second) = pairs.split_once(':').ok_or_else(bad)?;
    let initial = parse_gain_pair(first)?;
    let (lt, lc) = parse_gain_pair(second)?;
    let switch = SwitchTime::parse(switch, "gain schedule")?;
    if !switch.positive() {
        return Err(bad());
    }
    Ok((
        initial,
        ScheduleConfig {
            temperature_gain: lt,
            concentration_gain: lc,
            switch,
        },
    ))
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Physical dimension of a configurable quantity; selects the accepted units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Temperature,
    TemperatureDifference,
    Length,
    Time,
    RampRate,
    Density,
    Conductivity,
    HeatCapacity,
    SpecificEnergy,
    MolarEnergy,
    Frequency,
    HeatTransfer,
    PowerDensity,
    ControllerGain,
    GasConstant,
    Concentration,
    Dimensionless,
}

impl Dimension {
    /// `(unit, scale, offset)`: SI value = scale · value + offset.
    fn units(self) -> &'static [(&'static str, f64, f64)] {
        match self {
            Dimension::Temperature => &[("K", 1.0, 0.0), ("C", 1.0, 273.15), ("degC", 1.0, 273.15)],
            Dimension::TemperatureDifference => {
                &[("K", 1.0, 0.0), ("C", 1.0, 0.0), ("degC", 1.0, 0.0)]
            }
            Dimension::Length => &[("m", 1.0, 0.0), ("cm", 1e-2, 0.0), ("mm", 1e-3, 0.0)],
            Dimension::Time => &[("s", 1.0, 0.0), ("min", 60.0, 0.0), ("h", 3600.0, 0.0)],
            Dimension::RampRate => &[
                ("K/s", 1.0, 0.0),
                ("K/min", 1.0 / 60.0, 0.0),
                ("K/h", 1.0 / 3600.0, 0.0),
                ("C/min", 1.0 / 60.0, 0.0),
            ],
            Dimension::Density => &[("kg/m3", 1.0, 0.0), ("g/cm3", 1e3, 0.0)],
            Dimension::Conductivity => &[("W/m/K", 1.0, 0.0), ("W/(m*K)", 1.0, 0.0)],
            Dimension::HeatCapacity => &[
                ("J/kg/K", 1.0, 0.0),
                ("J/(kg*K)", 1.0, 0.0),
                ("kJ/kg/K", 1e3, 0.0),
            ],
            Dimension::SpecificEnergy => {
                &[("J/kg", 1.0, 0.0), ("kJ/kg", 1e3, 0.0), ("MJ/kg", 1e6, 0.0)]
            }
            Dimension::MolarEnergy => &[("J/mol", 1.0, 0.0), ("kJ/mol", 1e3, 0.0)],
            Dimension::Frequency => &[
                ("1/s", 1.0, 0.0),
                ("1/min", 1.0 / 60.0, 0.0),
                ("1/h", 1.0 / 3600.0, 0.0),
            ],
            Dimension::HeatTransfer => &[("W/m2/K", 1.0, 0.0), ("W/(m2*K)", 1.0, 0.0)],
            Dimension::PowerDensity => &[("W/m3", 1.0, 0.0), ("kW/m3", 1e3, 0.0)],
            Dimension::ControllerGain => &[("W/m3/K", 1.0, 0.0), ("W/(m3*K)", 1.0, 0.0)],
            Dimension::GasConstant => &[("J/mol/K", 1.0, 0.0), ("J/(mol*K)", 1.0, 0.0)],
            Dimension::Concentration => &[("kg/kg", 1.0, 0.0)],
            Dimension::Dimensionless => &[],
        }
    }
}

/// Parses `"<number> [unit]"` into SI. A bare number is taken as SI.
pub fn parse_quantity(text: &str, dim: Dimension, location: &str) -> Result<f64> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|&(i, c)| {
            c.is_whitespace()
                || (c.is_ascii_alphabetic() && !is_exponent(t, i))
                || (c == '/' && i > 0)
        })
        .map_or(t.len(), |(i, _)| i);
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| Error::parse(location, format!("cannot read a number from '{text}'")))?;
    let unit: String = unit
        .chars()
        .filter(|c| !c.is_whitespace() && *c != '^')
        .collect();
    if unit.is_empty() {
        return Ok(value);
    }
    dim.units()
        .iter()
        .find(|(u, _, _)| *u == unit)
        .map(|&(_, scale, offset)| scale * value + offset)
        .ok_or_else(|| {
            let known: Vec<&str> = dim.units().iter().map(|u| u.0).collect();
            Error::parse(
                location,
                format!(
                    "unknown unit '{unit}' for {dim:?} (accepted: {})",
                    known.join(", ")
                ),
            )
        })
}

/// `e`/`E` inside a float literal such as `1e-3`.
fn is_exponent(t: &str, i: usize) -> bool {
    let b = t.as_bytes();
    matches!(b[i], b'e' | b'E')
        && i > 0
        && (b[i - 1].is_ascii_digit() || b[i - 1] == b'.')
        && b.get(i + 1)
            .is_some_and(|c| c.is_ascii_digit() || *c == b'-' || *c == b'+')
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum Quantity {
    Number(f64),
    Text(String),
}

impl Quantity {
    fn si(&self, dim: Dimension, location: &str) -> Result<f64> {
        match self {
            Quantity::Number(v) => Ok(*v),
            Quantity::Text(t) => parse_quantity(t, dim, location),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    base: Option<String>,
    seed: Option<u64>,
    model: Option<RawModel>,
    shelf: Option<RawShelf>,
    observer: Option<RawObserver>,
    measurement: Option<RawMeasurement>,
    run: Option<RawRun>,
    controller: Option<RawController>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    density: Option<Quantity>,
    dried_density: Option<Quantity>,
    conductivity: Option<Quantity>,
    heat_capacity: Option<Quantity>,
    gas_heat_capacity: Option<Quantity>,
    desorption_enthalpy: Option<Quantity>,
    activation_energy: Option<Quantity>,
    frequency_factor: Option<Quantity>,
    heat_transfer_coeff: Option<Quantity>,
    initial_temperature: Option<Quantity>,
    initial_concentration: Option<Quantity>,
    equilibrium_concentration: Option<Quantity>,
    #[serde(alias = "H")]
    height: Option<Quantity>,
    gas_constant: Option<Quantity>,
    cells: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShelf {
    initial: Option<Quantity>,
    #[serde(alias = "r")]
    ramp_rate: Option<Quantity>,
    max: Option<Quantity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObserver {
    sensor: Option<String>,
    temperature_gain: Option<f64>,
    concentration_gain: Option<f64>,
    initial_concentration: Option<Quantity>,
    heat_transfer_coeff: Option<Quantity>,
    schedule: Option<RawSchedule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    temperature_gain: f64,
    concentration_gain: f64,
    switch: Quantity,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    sampling_period: Option<Quantity>,
    noise_three_sigma: Option<Quantity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    dry_threshold: Option<Quantity>,
    duration: Option<Quantity>,
    max_duration: Option<Quantity>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawController {
    gain: Option<Quantity>,
    upper_limit: Option<Quantity>,
    feedback: Option<String>,
}

fn apply(target: &mut f64, q: &Option<Quantity>, dim: Dimension, location: &str) -> Result<()> {
    if let Some(q) = q {
        *target = q.si(dim, location)?;
    }
    Ok(())
}

impl RawScenario {
    fn resolve(self) -> Result<Scenario> {
        use Dimension as D;
        let mut s = match &self.base {
            Some(b) => Scenario::preset(b)
                .ok_or_else(|| Error::parse("base", format!("unknown preset '{b}'")))?,
            None => Scenario::default(),
        };
        if let Some(n) = self.name {
            s.name = n;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(m) = &self.model {
            let p = &mut s.model;
            apply(&mut p.rho, &m.density, D::Density, "model.density")?;
            apply(
                &mut p.rho_dried,
                &m.dried_density,
                D::Density,
                "model.dried_density",
            )?;
            apply(
                &mut p.conductivity,
                &m.conductivity,
                D::Conductivity,
                "model.conductivity",
            )?;
            apply(
                &mut p.heat_capacity,
                &m.heat_capacity,
                D::HeatCapacity,
                "model.heat_capacity",
            )?;
            apply(
                &mut p.gas_heat_capacity,
                &m.gas_heat_capacity,
                D::HeatCapacity,
                "model.gas_heat_capacity",
            )?;
            apply(
                &mut p.desorption_enthalpy,
                &m.desorption_enthalpy,
                D::SpecificEnergy,
                "model.desorption_enthalpy",
            )?;
            apply(
                &mut p.activation_energy,
                &m.activation_energy,
                D::MolarEnergy,
                "model.activation_energy",
            )?;
            apply(
                &mut p.frequency_factor,
                &m.frequency_factor,
                D::Frequency,
                "model.frequency_factor",
            )?;
            apply(
                &mut p.heat_transfer_coeff,
                &m.heat_transfer_coeff,
                D::HeatTransfer,
                "model.heat_transfer_coeff",
            )?;
            apply(
                &mut p.initial_temperature,
                &m.initial_temperature,
                D::Temperature,
                "model.initial_temperature",
            )?;
            apply(
                &mut p.initial_concentration,
                &m.initial_concentration,
                D::Concentration,
                "model.initial_concentration",
            )?;
            apply(
                &mut p.equilibrium_concentration,
                &m.equilibrium_concentration,
                D::Concentration,
                "model.equilibrium_concentration",
            )?;
            apply(&mut p.height, &m.height, D::Length, "model.height")?;
            apply(
                &mut p.gas_constant,
                &m.gas_constant,
                D::GasConstant,
                "model.gas_constant",
            )?;
            if let Some(c) = m.cells {
                p.cells = c;
            }
        }
        if let Some(sh) = &self.shelf {
            apply(
                &mut s.shelf.initial,
                &sh.initial,
                D::Temperature,
                "shelf.initial",
            )?;
            apply(
                &mut s.shelf.ramp_rate,
                &sh.ramp_rate,
                D::RampRate,
                "shelf.ramp_rate",
            )?;
            apply(&mut s.shelf.max, &sh.max, D::Temperature, "shelf.max")?;
        }
        if let Some(o) = self.observer {
            if let Some(sensor) = &o.sensor {
                s.set_sensor(sensor.parse().map_err(|_| {
                    Error::parse(
                        "observer.sensor",
                        format!("unknown sensor '{sensor}' (full or bottom)"),
                    )
                })?);
            }
            let ob = &mut s.observer;
            if let Some(g) = o.temperature_gain {
                ob.temperature_gain = g;
            }
            if let Some(g) = o.concentration_gain {
                ob.concentration_gain = g;
            }
            apply(
                &mut ob.initial_concentration,
                &o.initial_concentration,
                D::Concentration,
                "observer.initial_concentration",
            )?;
            if let Some(q) = &o.heat_transfer_coeff {
                ob.heat_transfer_coeff =
                    Some(q.si(D::HeatTransfer, "observer.heat_transfer_coeff")?);
            }
            if let Some(sc) = o.schedule {
                let switch = match &sc.switch {
                    Quantity::Number(v) => SwitchTime::Seconds(*v),
                    Quantity::Text(t) => SwitchTime::parse(t, "observer.schedule.switch")?,
                };
                ob.schedule = Some(ScheduleConfig {
                    temperature_gain: sc.temperature_gain,
                    concentration_gain: sc.concentration_gain,
                    switch,
                });
            }
        }
        if let Some(m) = &self.measurement {
            apply(
                &mut s.measurement.sampling_period,
                &m.sampling_period,
                D::Time,
                "measurement.sampling_period",
            )?;
            apply(
                &mut s.measurement.noise_three_sigma,
                &m.noise_three_sigma,
                D::TemperatureDifference,
                "measurement.noise_three_sigma",
            )?;
        }
        if let Some(r) = &self.run {
            if let Some(q) = &r.dry_threshold {
                s.run.dry_threshold = Some(q.si(D::Concentration, "run.dry_threshold")?);
            }
            apply(&mut s.run.duration, &r.duration, D::Time, "run.duration")?;
            apply(
                &mut s.run.max_duration,
                &r.max_duration,
                D::Time,
                "run.max_duration",
            )?;
        }
        if let Some(c) = &self.controller {
            let mut cfg = s.controller.unwrap_or_default();
            apply(
                &mut cfg.controller.gain,
                &c.gain,
                D::ControllerGain,
                "controller.gain",
            )?;
            apply(
                &mut cfg.controller.upper_limit,
                &c.upper_limit,
                D::Temperature,
                "controller.upper_limit",
            )?;
            if let Some(f) = &c.feedback {
                cfg.feedback = f
                    .parse()
                    .map_err(|e: Error| Error::parse("controller.feedback", e.to_string()))?;
            }
            s.controller = Some(cfg);
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_carry_table_values() {
        let d = Scenario::preset("default").unwrap();
        assert_eq!(d.model.initial_concentration, 0.2059);
        assert_eq!(d.model.activation_energy, 8316.0);
        assert_eq!(d.model.cells, 20);
        let c = Scenario::preset("caseC").unwrap();
        assert_eq!(c.model.activation_energy, 37714.0);
        assert_eq!(c.model.frequency_factor, 277.0);
        assert_eq!(c.model.initial_concentration, 0.0314);
        assert_eq!(c.observer.sensor, SensorKind::BottomPoint);
        assert_eq!(c.observer.temperature_gain, -5e-3);
        let a = Scenario::preset("caseA").unwrap();
        let one = Scenario::preset("case1").unwrap();
        assert_eq!(a.model, one.model);
        assert!(Scenario::preset("case9").is_none());
        for name in PRESETS {
            Scenario::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn unit_suffixes_convert_to_si() {
        let q = |t, d| parse_quantity(t, d, "x").unwrap();
        assert_eq!(q("2 cm", Dimension::Length), 0.02);
        assert_eq!(q("0.2 K/min", Dimension::RampRate), 0.2 / 60.0);
        assert_eq!(q("40 C", Dimension::Temperature), 313.15);
        assert_eq!(q("5 C", Dimension::TemperatureDifference), 5.0);
        assert_eq!(q("1.5 h", Dimension::Time), 5400.0);
        assert_eq!(q("1e-3", Dimension::Frequency), 1e-3);
        assert_eq!(q("3.34e-3 1/s", Dimension::Frequency), 3.34e-3);
        assert_eq!(q("30 W/m^2/K", Dimension::HeatTransfer), 30.0);
        assert!(parse_quantity("2 furlongs", Dimension::Length, "x").is_err());
        assert!(parse_quantity("abc", Dimension::Length, "x").is_err());
    }

    #[test]
    fn file_overrides_base_preset() {
        let text = r#"
            base = "default"
            name = "thin"
            [model]
            H = "1 cm"
            [shelf]
            r = "0.5 K/min"
            [observer]
            sensor = "bottom"
            [observer.schedule]
            temperature_gain = -1e-3
            concentration_gain = 2e-5
            switch = "4tau"
        "#;
        let s = Scenario::from_toml_str(text, "inline").unwrap();
        assert_eq!(s.model.height, 0.01);
        assert_eq!(s.shelf.ramp_rate, 0.5 / 60.0);
        assert_eq!(s.observer.sensor, SensorKind::BottomPoint);
        assert_eq!(s.observer.temperature_gain, -5e-3);
        assert_eq!(
            s.observer.schedule.unwrap().switch,
            SwitchTime::TimeConstants(4.0)
        );
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let err = Scenario::from_toml_str("[model]\nheigth = 0.02\n", "f.toml").unwrap_err();
        assert_eq!(err.category(), "parse");
        assert!(err.to_string().contains("heigth"), "{err}");
        let err = Scenario::from_toml_str("[model]\nheight = \"-2 cm\"\n", "f.toml").unwrap_err();
        assert_eq!(err.category(), "validation");
        let err =
            Scenario::from_toml_str("[shelf]\nramp_rate = \"2 parsecs\"\n", "f.toml").unwrap_err();
        assert!(err.to_string().contains("shelf.ramp_rate"), "{err}");
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut s = Scenario::default();
        s.model.height = -1.0;
        s.measurement.sampling_period = 0.0;
        match s.validate() {
            Err(Error::Validation(v)) => assert!(v.len() >= 2, "{v:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn gain_flag_formats() {
        assert_eq!(parse_gain_pair("-1e-6,5e-7").unwrap(), (-1e-6, 5e-7));
        assert!(parse_gain_pair("-1e-6").is_err());
        let (init, sc) = parse_gain_schedule("-1e-6,5e-7:-1e-6,1e-7@4tau").unwrap();
        assert_eq!(init, (-1e-6, 5e-7));
        assert_eq!(sc.concentration_gain, 1e-7);
        assert_eq!(sc.switch, SwitchTime::TimeConstants(4.0));
        let (_, sc) = parse_gain_schedule("-1e-6,5e-7:-1e-6,1e-7@1.5 h").unwrap();
        assert_eq!(sc.switch, SwitchTime::Seconds(5400.0));
        assert!(parse_gain_schedule("-1e-6,5e-7@4tau").is_err());
        assert!(parse_gain_schedule("-1e-6,5e-7:-1e-6,1e-7@0tau").is_err());
    }

    #[test]
    fn toml_round_trip_is_exact_for_presets() {
        for name in PRESETS {
            let mut s = Scenario::preset(name).unwrap();
            s.controller = Some(ControllerConfig::default());
            s.run.dry_threshold = Some(0.01);
            s.observer.heat_transfer_coeff = Some(33.0);
            let back = Scenario::from_toml_str(&s.to_toml(), "rt").unwrap();
            assert_eq!(back, s, "{name}");
        }
    }
}
