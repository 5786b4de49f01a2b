//! Sensor geometry, sample descriptions and physical constants shared by the
//! inductive, electrostatic and circuit solvers.
//!
//! All quantities are SI. Heights of the coil windings are measured from the
//! sensor face (the trace plane); a plate's top surface sits `liftoff` below it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Permeability of free space (H/m).
pub const MU_0: f64 = 4.0e-7 * PI;
/// Permittivity of free space (F/m).
pub const EPS_0: f64 = 8.854e-12;

/// Excitation/pickup spiral pair described as two uniformly wound annular
/// coils of rectangular cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilPairGeometry {
    pub r_e1: f64,
    pub r_e2: f64,
    pub r_p1: f64,
    pub r_p2: f64,
    pub l_e1: f64,
    pub l_e2: f64,
    pub l_p1: f64,
    pub l_p2: f64,
    pub n1: u32,
    pub n2: u32,
    /// Center-to-center spacing of the pair.
    pub w: f64,
}

impl Default for CoilPairGeometry {
    /// Four-turn spirals, 2.5 mm to 18 mm, 35 um copper, 41 mm apart. The turn
    /// count and radii are estimates; only the footprint is known.
    fn default() -> Self {
        Self {
            r_e1: 2.5e-3,
            r_e2: 18e-3,
            r_p1: 2.5e-3,
            r_p2: 18e-3,
            l_e1: 0.0,
            l_e2: 35e-6,
            l_p1: 0.0,
            l_p2: 35e-6,
            n1: 4,
            n2: 4,
            w: 41e-3,
        }
    }
}

impl CoilPairGeometry {
    /// Geometry with the roles of excitation and pickup exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            r_e1: self.r_p1,
            r_e2: self.r_p2,
            r_p1: self.r_e1,
            r_p2: self.r_e2,
            l_e1: self.l_p1,
            l_e2: self.l_p2,
            l_p1: self.l_e1,
            l_p2: self.l_e2,
            n1: self.n2,
            n2: self.n1,
            w: self.w,
        }
    }

    /// Edge-to-edge separation of the outermost windings.
    pub fn nearest_gap(&self) -> f64 {
        self.w - self.r_e2 - self.r_p2
    }

    pub fn validate(&self) -> ValidationReport {
        validate_geometry(self)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().into_result()
    }
}

/// Violated invariants, empty when the input is usable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn check(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.violations.push(msg.into());
        }
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::Geometry(self.violations))
        }
    }
}

pub fn validate_geometry(g: &CoilPairGeometry) -> ValidationReport {
    let mut r = ValidationReport::default();
    let all = [
        g.r_e1, g.r_e2, g.r_p1, g.r_p2, g.l_e1, g.l_e2, g.l_p1, g.l_p2, g.w,
    ];
    r.check(all.iter().all(|v| v.is_finite()), "non-finite dimension");
    r.check(g.r_e1 >= 0.0, "excitation inner radius is negative");
    r.check(g.r_p1 >= 0.0, "pickup inner radius is negative");
    r.check(g.r_e1 < g.r_e2, "excitation coil: degenerate radial extent");
    r.check(g.r_p1 < g.r_p2, "pickup coil: degenerate radial extent");
    r.check(g.l_e1 < g.l_e2, "excitation coil: degenerate height");
    r.check(g.l_p1 < g.l_p2, "pickup coil: degenerate height");
    r.check(
        g.l_e1 >= 0.0 && g.l_p1 >= 0.0,
        "coil extends below the sensor face",
    );
    r.check(g.n1 >= 1, "excitation turn count must be at least 1");
    r.check(g.n2 >= 1, "pickup turn count must be at least 1");
    r.check(g.w >= 0.0, "negative center spacing");
    r
}

/// Homogeneous plate below the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateSample {
    /// Conductivity (S/m).
    pub sigma: f64,
    /// Relative permeability.
    pub mu_r: f64,
    /// Thickness (m).
    pub thickness: f64,
    /// Distance from the sensor face to the plate's top surface (m).
    pub liftoff: f64,
}

impl PlateSample {
    pub const COPPER_SIGMA: f64 = 5.8e7;

    /// A plate with no electromagnetic contrast to air.
    pub fn air(liftoff: f64) -> Self {
        Self {
            sigma: 0.0,
            mu_r: 1.0,
            thickness: 1e-3,
            liftoff,
        }
    }

    pub fn copper(thickness: f64, liftoff: f64) -> Self {
        Self {
            sigma: Self::COPPER_SIGMA,
            mu_r: 1.0,
            thickness,
            liftoff,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let all = [self.sigma, self.mu_r, self.thickness, self.liftoff];
        r.check(
            all.iter().all(|v| v.is_finite()),
            "non-finite plate parameter",
        );
        r.check(self.sigma >= 0.0, "negative conductivity");
        r.check(self.mu_r > 0.0, "relative permeability must be positive");
        r.check(self.thickness > 0.0, "plate thickness must be positive");
        r.check(self.liftoff >= 0.0, "negative lift-off");
        r
    }
}

/// What drives a solve: a known coil current or a known source voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Current(Complex64),
    Voltage(Complex64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Excitation {
    /// Hz.
    pub frequency: f64,
    pub drive: Drive,
}

impl Excitation {
    pub fn current(frequency: f64, amps: Complex64) -> Self {
        Self {
            frequency,
            drive: Drive::Current(amps),
        }
    }

    pub fn voltage(frequency: f64, volts: Complex64) -> Self {
        Self {
            frequency,
            drive: Drive::Voltage(volts),
        }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    pub fn drive_current(&self) -> Result<Complex64> {
        match self.drive {
            Drive::Current(i) => Ok(i),
            Drive::Voltage(_) => Err(Error::Domain(
                "operation needs a current-driven excitation".into(),
            )),
        }
    }
}

/// Values measured on the built sensor. They are reference data only; the
/// self-inductance feeds the equivalent circuit, nothing here is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredBaseline {
    pub self_inductance: f64,
    pub mutual_inductance: f64,
    pub direct_capacitance: f64,
    pub frequency: f64,
}

impl Default for MeasuredBaseline {
    fn default() -> Self {
        Self {
            self_inductance: 320e-9,
            mutual_inductance: 20e-9,
            direct_capacitance: 1.56e-12,
            frequency: 100e3,
        }
    }
}
