//! Reduced secondary-drying model: 1D heat conduction in the dried cake coupled
//! to first-order (linear driving force) desorption of bound water.
//!
//! The cake is discretized with a vertex-centred finite volume scheme on `m`
//! nodes, node 1 at the insulated top surface and node `m` at the heated
//! bottom in contact with the shelf. The end nodes own half cells. The state
//! vector is stacked as `[T_1..T_m, c_1..c_m]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Numerical slack allowed below zero for concentrations.
pub const CONCENTRATION_EPS: f64 = 1e-12;

/// Physical constants, kinetics and geometry of one product.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    /// Effective density, kg/m³.
    pub rho: f64,
    /// Dried-product density, kg/m³.
    pub rho_dried: f64,
    /// Effective thermal conductivity, W/(m·K).
    pub conductivity: f64,
    /// Effective heat capacity, J/(kg·K).
    pub heat_capacity: f64,
    /// Gas heat capacity, J/(kg·K). Not used by the reduced model.
    pub gas_heat_capacity: f64,
    /// Desorption enthalpy, J/kg.
    pub desorption_enthalpy: f64,
    /// Activation energy, J/mol.
    pub activation_energy: f64,
    /// Frequency factor, 1/s.
    pub frequency_factor: f64,
    /// Bottom heat transfer coefficient, W/(m²·K).
    pub heat_transfer_coeff: f64,
    /// Initial product temperature, K.
    pub initial_temperature: f64,
    /// Initial bound-water concentration, kg water / kg solid.
    pub initial_concentration: f64,
    /// Equilibrium bound-water concentration, kg water / kg solid.
    pub equilibrium_concentration: f64,
    /// Product height, m.
    pub height: f64,
    /// Gas constant, J/(mol·K).
    pub gas_constant: f64,
    /// Number of grid nodes.
    pub cells: usize,
}

impl Default for ModelParameters {
    fn default() -> Self {
        Self {
            rho: 215.0,
            rho_dried: 212.21,
            conductivity: 0.217,
            heat_capacity: 2590.0,
            gas_heat_capacity: 1617.0,
            desorption_enthalpy: 2.68e6,
            activation_energy: 8316.0,
            frequency_factor: 3.34e-3,
            heat_transfer_coeff: 30.0,
            initial_temperature: 241.15,
            initial_concentration: 0.2059,
            equilibrium_concentration: 0.0,
            height: 0.02,
            gas_constant: 8.314,
            cells: 20,
        }
    }
}

impl ModelParameters {
    /// Checks hard invariants and returns soft warnings (values outside the
    /// typical physical ranges) on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut errors = Vec::new();
        let positive = [
            ("density", self.rho),
            ("dried_density", self.rho_dried),
            ("conductivity", self.conductivity),
            ("heat_capacity", self.heat_capacity),
            ("gas_heat_capacity", self.gas_heat_capacity),
            ("height", self.height),
            ("gas_constant", self.gas_constant),
            ("initial_temperature", self.initial_temperature),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                errors.push(format!("{name} must be finite and > 0 (got {v})"));
            }
        }
        let non_negative = [
            ("desorption_enthalpy", self.desorption_enthalpy),
            ("activation_energy", self.activation_energy),
            ("frequency_factor", self.frequency_factor),
            ("heat_transfer_coeff", self.heat_transfer_coeff),
            ("initial_concentration", self.initial_concentration),
            ("equilibrium_concentration", self.equilibrium_concentration),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                errors.push(format!("{name} must be finite and >= 0 (got {v})"));
            }
        }
        if self.cells < 2 {
            errors.push(format!("cells must be >= 2 (got {})", self.cells));
        }
        if !errors.is_empty() {
            return Err(Error::Validation(errors));
        }

        let mut warnings = Vec::new();
        if !(1.0..=100.0).contains(&self.heat_transfer_coeff) {
            warnings.push(format!(
                "heat_transfer_coeff = {} W/(m^2 K) is outside the typical range [1, 100]",
                self.heat_transfer_coeff
            ));
        }
        if self.activation_energy != 0.0 && !(5e3..=5e4).contains(&self.activation_energy) {
            warnings.push(format!(
                "activation_energy = {} J/mol is outside the typical range [5e3, 5e4]",
                self.activation_energy
            ));
        }
        if self.cells < 3 {
            warnings.push("cells < 3: grid has no interior nodes".to_string());
        }
        Ok(warnings)
    }

    /// Arrhenius desorption rate constant `A exp(-Ea / (R T))`, 1/s.
    pub fn rate_constant(&self, temperature: f64) -> f64 {
        self.frequency_factor * (-self.activation_energy / (self.gas_constant * temperature)).exp()
    }

    /// Temperature derivative of [`rate_constant`](Self::rate_constant).
    pub fn rate_constant_slope(&self, temperature: f64) -> f64 {
        self.rate_constant(temperature) * self.activation_energy
            / (self.gas_constant * temperature * temperature)
    }
}

/// Linear shelf ramp from `initial` at rate `ramp_rate` up to a `max` hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShelfSchedule {
    /// Initial shelf temperature, K.
    pub initial: f64,
    /// Ramp rate, K/s.
    pub ramp_rate: f64,
    /// Hold temperature, K.
    pub max: f64,
}

impl Default for ShelfSchedule {
    fn default() -> Self {
        Self {
            initial: 253.15,
            ramp_rate: 0.2 / 60.0,
            max: 313.15,
        }
    }
}

impl ShelfSchedule {
    pub fn new(initial: f64, ramp_rate: f64, max: f64) -> Result<Self> {
        let s = Self {
            initial,
            ramp_rate,
            max,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant shelf temperature.
    pub fn constant(temperature: f64) -> Self {
        Self {
            initial: temperature,
            ramp_rate: 0.0,
            max: temperature,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.initial.is_finite() && self.initial > 0.0) {
            errors.push(format!("Tb0 must be > 0 K (got {})", self.initial));
        }
        if !(self.ramp_rate.is_finite() && self.ramp_rate >= 0.0) {
            errors.push(format!("r must be >= 0 (got {})", self.ramp_rate));
        }
        if !(self.max.is_finite() && self.max >= self.initial) {
            errors.push(format!(
                "Tb_max ({}) must be >= Tb0 ({})",
                self.max, self.initial
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn temperature(&self, t: f64) -> f64 {
        (self.initial + self.ramp_rate * t.max(0.0)).min(self.max)
    }

    /// Time at which the ramp reaches the hold temperature, if it ever does
    /// at a positive time.
    pub fn cap_time(&self) -> Option<f64> {
        if self.ramp_rate > 0.0 && self.max > self.initial {
            Some((self.max - self.initial) / self.ramp_rate)
        } else {
            None
        }
    }
}

/// Uniform spatial grid on `[0, H]` with nodes at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub cells: usize,
    pub dz: f64,
}

pub fn build_grid(params: &ModelParameters) -> Result<Grid> {
    if params.cells < 2 {
        return Err(Error::InvalidParameter(format!(
            "grid needs at least 2 nodes (got {})",
            params.cells
        )));
    }
    if !(params.height.is_finite() && params.height > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "height must be > 0 (got {})",
            params.height
        )));
    }
    Ok(Grid {
        cells: params.cells,
        dz: params.height / (params.cells - 1) as f64,
    })
}

pub fn shelf_temperature(t: f64, schedule: &ShelfSchedule) -> f64 {
    schedule.temperature(t)
}

pub fn desorption_rate_constant(temperature: f64, params: &ModelParameters) -> f64 {
    params.rate_constant(temperature)
}

/// Temperatures and bound-water concentrations at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    pub temperature: Vec<f64>,
    pub concentration: Vec<f64>,
}

impl ProductState {
    pub fn new(temperature: Vec<f64>, concentration: Vec<f64>) -> Result<Self> {
        if temperature.len() != concentration.len() {
            return Err(Error::ShapeMismatch {
                expected: temperature.len(),
                got: concentration.len(),
            });
        }
        Ok(Self {
            temperature,
            concentration,
        })
    }

    pub fn uniform(cells: usize, temperature: f64, concentration: f64) -> Self {
        Self {
            temperature: vec![temperature; cells],
            concentration: vec![concentration; cells],
        }
    }

    /// Initial condition of a drying run: uniform `T0` and `cs0`.
    pub fn initial(params: &ModelParameters) -> Self {
        Self::uniform(
            params.cells,
            params.initial_temperature,
            params.initial_concentration,
        )
    }

    pub fn cells(&self) -> usize {
        self.temperature.len()
    }

    /// Stacked `[T; c]` vector.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.cells());
        v.extend_from_slice(&self.temperature);
        v.extend_from_slice(&self.concentration);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let m = x.len() / 2;
        Self {
            temperature: x[..m].to_vec(),
            concentration: x[m..2 * m].to_vec(),
        }
    }

    pub fn averages(&self) -> (f64, f64) {
        (mean(&self.temperature), mean(&self.concentration))
    }

    pub fn max_temperature(&self) -> f64 {
        self.temperature
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.len() != self.concentration.len() {
            return Err(Error::ShapeMismatch {
                expected: self.temperature.len(),
                got: self.concentration.len(),
            });
        }
        if let Some(t) = self
            .temperature
            .iter()
            .find(|t| !(t.is_finite() && **t > 0.0))
        {
            return Err(Error::InvalidState(format!(
                "temperature must be finite and > 0 K (got {t})"
            )));
        }
        if let Some(c) = self
            .concentration
            .iter()
            .find(|c| !(c.is_finite() && **c >= -CONCENTRATION_EPS))
        {
            return Err(Error::InvalidState(format!(
                "concentration must be finite and >= 0 (got {c})"
            )));
        }
        Ok(())
    }
}

pub fn averages(state: &ProductState) -> (f64, f64) {
    state.averages()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    // Offset by the first element so constant vectors average exactly.
    let x0 = v[0];
    x0 + v.iter().map(|x| x - x0).sum::<f64>() / v.len() as f64
}

/// Manipulated inputs: shelf temperature and volumetric heating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    /// Shelf temperature, K.
    pub shelf_temperature: f64,
    /// Volumetric heat source, W/m³.
    pub power_density: f64,
}

impl ControlInput {
    pub fn shelf(shelf_temperature: f64) -> Self {
        Self {
            shelf_temperature,
            power_density: 0.0,
        }
    }
}

/// Discretized model with precomputed coefficients.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParameters,
    pub grid: Grid,
    /// k / (rho Cp dz²), 1/s.
    conduction: f64,
    /// 2 h / (rho Cp dz), 1/s.
    robin: f64,
    /// rho_d dHs / (rho Cp), K per (kg/kg).
    coupling: f64,
    /// 1 / (rho Cp), K m³/J.
    source: f64,
}

impl Model {
    pub fn new(params: ModelParameters) -> Result<Self> {
        params.validate()?;
        let grid = build_grid(&params)?;
        let rho_cp = params.rho * params.heat_capacity;
        Ok(Self {
            conduction: params.conductivity / (rho_cp * grid.dz * grid.dz),
            robin: 2.0 * params.heat_transfer_coeff / (rho_cp * grid.dz),
            coupling: params.rho_dried * params.desorption_enthalpy / rho_cp,
            source: 1.0 / rho_cp,
            params,
            grid,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid.cells
    }

    pub fn dim(&self) -> usize {
        2 * self.grid.cells
    }

    pub fn initial_state(&self) -> ProductState {
        ProductState::initial(&self.params)
    }

    /// Writes `dx/dt` for the stacked state `x` into `dx`. No validation.
    pub fn rhs_into(&self, x: &[f64], u: ControlInput, dx: &mut [f64]) {
        let m = self.grid.cells;
        let (temp, conc) = x.split_at(m);
        let (dtemp, dconc) = dx.split_at_mut(m);
        let c_eq = self.params.equilibrium_concentration;
        let heat = u.power_density * self.source;

        for i in 0..m {
            dconc[i] = -self.params.rate_constant(temp[i]) * (conc[i] - c_eq);
        }

        let a = self.conduction;
        dtemp[0] = 2.0 * a * (temp[1] - temp[0]);
        for i in 1..m - 1 {
            dtemp[i] = a * (temp[i + 1] - 2.0 * temp[i] + temp[i - 1]);
        }
        dtemp[m - 1] = -2.0 * a * (temp[m - 1] - temp[m - 2])
            - self.robin * (temp[m - 1] - u.shelf_temperature);

        for i in 0..m {
            dtemp[i] += self.coupling * dconc[i] + heat;
        }
    }

    /// Checked right-hand side on a [`ProductState`].
    pub fn rhs(&self, state: &ProductState, u: ControlInput) -> Result<ProductState> {
        if state.cells() != self.cells() {
            return Err(Error::ShapeMismatch {
                expected: self.cells(),
                got: state.cells(),
            });
        }
        state.validate()?;
        if !(u.shelf_temperature.is_finite() && u.power_density.is_finite()) {
            return Err(Error::InvalidState(format!(
                "non-finite control input {u:?}"
            )));
        }
        let x = state.to_vec();
        let mut dx = vec![0.0; x.len()];
        self.rhs_into(&x, u, &mut dx);
        Ok(ProductState::from_slice(&dx))
    }

    /// Analytic Jacobian `∂F/∂x` of [`rhs_into`](Self::rhs_into) with
    /// respect to the stacked state. Overwrites `jac`.
    pub fn jacobian_into(&self, x: &[f64], jac: &mut DMatrix<f64>) {
        let m = self.grid.cells;
        let (temp, conc) = x.split_at(m);
        let c_eq = self.params.equilibrium_concentration;
        let a = self.conduction;
        jac.fill(0.0);

        jac[(0, 0)] = -2.0 * a;
        jac[(0, 1)] = 2.0 * a;
        for i in 1..m - 1 {
            jac[(i, i - 1)] = a;
            jac[(i, i)] = -2.0 * a;
            jac[(i, i + 1)] = a;
        }
        jac[(m - 1, m - 2)] = 2.0 * a;
        jac[(m - 1, m - 1)] = -2.0 * a - self.robin;

        for i in 0..m {
            let k = self.params.rate_constant(temp[i]);
            let dk = self.params.rate_constant_slope(temp[i]);
            let dc_dt = -dk * (conc[i] - c_eq);
            let dc_dc = -k;
            jac[(m + i, i)] = dc_dt;
            jac[(m + i, m + i)] = dc_dc;
            jac[(i, i)] += self.coupling * dc_dt;
            jac[(i, m + i)] = self.coupling * dc_dc;
        }
    }

    pub fn jacobian(&self, state: &ProductState) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        self.jacobian_into(&state.to_vec(), &mut jac);
        jac
    }
}
