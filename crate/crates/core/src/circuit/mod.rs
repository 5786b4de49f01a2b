//! Equivalent circuits of the sensor and the readouts taken from them.
//!
//! Differential mode reads the receiver terminal voltage `jωΔM·I`. Common
//! mode reads the receiver potential set by the transmitter–receiver
//! capacitance working against the instrument input impedance `Z_s`.
//! The simultaneous network carries both at once: a distributed receiver
//! with inductive sections and per-segment coupling capacitors, tapped at
//! `D_A` for the common channel.

mod mna;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::Excitation;

pub use mna::{
    mna_solve, ACNetwork, CircuitSolution, CouplingSpec, Element, ElementKind, ElementSpec,
    MutualCoupling, NetlistSpec, GROUND,
};

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Input side of the analyzer: `Z_s` as a parallel RC, plus the two
/// channel input resistances across the receiver terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentModel {
    pub zs_resistance: f64,
    pub zs_capacitance: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for InstrumentModel {
    fn default() -> Self {
        Self {
            zs_resistance: 1e6,
            zs_capacitance: 35e-12,
            r1: 1e6,
            r2: 1e6,
        }
    }
}

impl InstrumentModel {
    pub fn validate(&self) -> Result<()> {
        let all = [self.zs_resistance, self.zs_capacitance, self.r1, self.r2];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "instrument values must be positive: {self:?}"
            )))
        }
    }

    /// `Z_s(ω) = R / (1 + jωRC)`.
    pub fn zs(&self, omega: f64) -> Complex64 {
        let r = self.zs_resistance;
        r / (1.0 + J * omega * r * self.zs_capacitance)
    }
}

/// Both channel readings and the capacitance inferred from the common one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeReadout {
    pub v_diff: Complex64,
    pub v_common: Complex64,
    pub c_m: f64,
}

/// `ΔV = jωΔM·I` for a current-driven excitation.
pub fn differential_voltage(delta_m: impl Into<Complex64>, exc: &Excitation) -> Result<Complex64> {
    let i = exc.drive_current()?;
    Ok(J * exc.omega() * delta_m.into() * i)
}

/// Direct capacitance in parallel with the series chain through the sample.
/// A zero anywhere in the chain removes the series path.
pub fn measured_capacitance(c_d: f64, c_s1: f64, c_3: f64, c_s2: f64) -> Result<f64> {
    let all = [c_d, c_s1, c_3, c_s2];
    if all.iter().any(|c| c.is_nan() || *c < 0.0) || c_d.is_infinite() {
        return Err(Error::Domain(format!(
            "capacitances must be non-negative: {all:?}"
        )));
    }
    if c_s1 == 0.0 || c_3 == 0.0 || c_s2 == 0.0 {
        return Ok(c_d);
    }
    Ok(c_d + 1.0 / (1.0 / c_s1 + 1.0 / c_3 + 1.0 / c_s2))
}

/// Sum of the displacement currents `jωC_k·V_k` over every coupling.
pub fn common_mode_current(couplings: &[(f64, Complex64)], omega: f64) -> Complex64 {
    couplings.iter().map(|&(c, v)| J * omega * c * v).sum()
}

/// `V_A = I_C·Z_s(ω)`.
pub fn common_mode_voltage(i_c: Complex64, zs: &InstrumentModel, omega: f64) -> Complex64 {
    i_c * zs.zs(omega)
}

/// Voltage at the common-mode tap when `v_exc` drives `Z_s` through `c_m`.
pub fn common_mode_forward(
    c_m: f64,
    v_exc: Complex64,
    zs: &InstrumentModel,
    omega: f64,
) -> Complex64 {
    if c_m == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let z = zs.zs(omega);
    v_exc * z / (z + 1.0 / (J * omega * c_m))
}

/// Inverts the `C_m`/`Z_s` divider of [`common_mode_forward`].
pub fn extract_cm(
    v_a: Complex64,
    v_exc: Complex64,
    zs: &InstrumentModel,
    omega: f64,
) -> Result<f64> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!(
            "angular frequency must be positive, got {omega}"
        )));
    }
    if !(v_a.is_finite() && v_exc.is_finite()) {
        return Err(Error::Inversion("non-finite voltage".into()));
    }
    if v_a.norm() >= v_exc.norm() {
        return Err(Error::Inversion(format!(
            "|V_A| = {:e} V is not below |V_exc| = {:e} V",
            v_a.norm(),
            v_exc.norm()
        )));
    }
    // Taps at roundoff level relative to the drive read as no coupling.
    if v_a.norm() <= 1e-12 * v_exc.norm() {
        return Ok(0.0);
    }
    let z_c = zs.zs(omega) * (v_exc - v_a) / v_a;
    let c = (1.0 / (J * omega * z_c)).re;
    if c < 0.0 {
        return Err(Error::Inversion(format!(
            "tap voltage {v_a} implies a negative capacitance {c:e} F"
        )));
    }
    Ok(c)
}

/// Segment names along each coil, from the terminal nearest the other coil.
pub const TRANSMITTER_NODES: [&str; 6] = ["T_A", "T_B", "T_C", "T_D", "T_E", "T_F"];
pub const RECEIVER_NODES: [&str; 6] = ["D_A", "D_B", "D_C", "D_D", "D_E", "D_F"];

/// How the transmitter–receiver capacitance enters the network.
#[derive(Debug, Clone, PartialEq)]
pub enum CapacitiveCoupling {
    /// `C_A…C_F`: receiver node `D_k` coupled to transmitter node `T_k`.
    PerSegment([f64; 6]),
    /// Arbitrary `(transmitter index, receiver index, C)` pairs.
    Pairs(Vec<(usize, usize, f64)>),
}

impl CapacitiveCoupling {
    pub fn none() -> Self {
        Self::PerSegment([0.0; 6])
    }

    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        match self {
            Self::PerSegment(c) => c.iter().enumerate().map(|(k, &c)| (k, k, c)).collect(),
            Self::Pairs(p) => p.clone(),
        }
    }

    pub fn total(&self) -> f64 {
        self.pairs().iter().map(|p| p.2).sum()
    }

    pub fn scaled(&self, f: f64) -> Self {
        match self {
            Self::PerSegment(c) => Self::PerSegment(c.map(|c| c * f)),
            Self::Pairs(p) => Self::Pairs(p.iter().map(|&(i, j, c)| (i, j, c * f)).collect()),
        }
    }
}

/// Copper resistivity (Ω·m) used for track resistance.
pub const COPPER_RESISTIVITY: f64 = 1.72e-8;

/// Resistance of a copper track (Ω).
pub fn track_resistance(length: f64, width: f64, thickness: f64) -> f64 {
    COPPER_RESISTIVITY * length / (width * thickness)
}

/// Parameters of the simultaneous-mode network.
#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousParams {
    pub l1: f64,
    pub l2: f64,
    /// Coil-to-coil mutual inductance (H); complex when a conducting sample
    /// is present.
    pub m: Complex64,
    /// Whole-coil track resistances (Ω), split evenly over five sections.
    pub r_transmitter: f64,
    pub r_receiver: f64,
    pub coupling: CapacitiveCoupling,
    pub instrument: InstrumentModel,
    /// Generator phasor at `T_A`; `T_F` is the return.
    pub v_source: Complex64,
    /// Hz.
    pub frequency: f64,
}

impl Default for SimultaneousParams {
    fn default() -> Self {
        // Track length taken as one circumference at 33 mm radius.
        let r = track_resistance(2.0 * std::f64::consts::PI * 33e-3, 4e-3, 35e-6);
        Self {
            l1: 320e-9,
            l2: 320e-9,
            m: Complex64::new(20e-9, 0.0),
            r_transmitter: r,
            r_receiver: r,
            coupling: CapacitiveCoupling::none(),
            instrument: InstrumentModel::default(),
            v_source: Complex64::new(1.0, 0.0),
            frequency: 1e6,
        }
    }
}

impl SimultaneousParams {
    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }
}

/// Transmitter and receiver as five series R–L sections each, every
/// transmitter section coupled to every receiver section by `M/25`, coupling
/// capacitors between the coils, `Z_s` from `D_A` to ground and `R1 + R2`
/// across the receiver terminals.
pub fn build_simultaneous_network(p: &SimultaneousParams) -> Result<ACNetwork> {
    p.instrument.validate()?;
    if !(p.l1 > 0.0 && p.l2 > 0.0 && p.r_transmitter > 0.0 && p.r_receiver > 0.0) {
        return Err(Error::Domain(
            "coil inductances and resistances must be positive".into(),
        ));
    }
    let mut net = ACNetwork::new();
    net.voltage_source("V_exc", "T_A", GROUND, p.v_source)?;
    // Near-short return so `T_F` stays an addressable node.
    net.resistor("R_return", "T_F", GROUND, 1e-6)?;
    for k in 0..5 {
        let (t0, t1) = (TRANSMITTER_NODES[k], TRANSMITTER_NODES[k + 1]);
        let ti = format!("{t0}.{t1}");
        net.resistor(&format!("RT_{k}"), t0, &ti, p.r_transmitter / 5.0)?;
        net.inductor(&format!("L1_{k}"), &ti, t1, p.l1 / 5.0)?;
        let (d0, d1) = (RECEIVER_NODES[k], RECEIVER_NODES[k + 1]);
        let di = format!("{d0}.{d1}");
        net.resistor(&format!("RD_{k}"), d0, &di, p.r_receiver / 5.0)?;
        net.inductor(&format!("L2_{k}"), &di, d1, p.l2 / 5.0)?;
    }
    for a in 0..5 {
        for b in 0..5 {
            net.mutual(&format!("L1_{a}"), &format!("L2_{b}"), p.m / 25.0)?;
        }
    }
    for (i, j, c) in p.coupling.pairs() {
        if i > 5 || j > 5 {
            return Err(Error::Topology(format!(
                "coupling index ({i}, {j}) out of range"
            )));
        }
        net.capacitor(
            &format!("C_{}_{}", TRANSMITTER_NODES[i], RECEIVER_NODES[j]),
            TRANSMITTER_NODES[i],
            RECEIVER_NODES[j],
            c,
        )?;
    }
    let zs = p.instrument;
    net.resistor("Zs_R", "D_A", GROUND, zs.zs_resistance)?;
    net.capacitor("Zs_C", "D_A", GROUND, zs.zs_capacitance)?;
    net.resistor("R1", "D_A", "D_mid", zs.r1)?;
    net.resistor("R2", "D_mid", "D_F", zs.r2)?;
    Ok(net)
}

/// Solved simultaneous network with both channel readings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimultaneousSolution {
    pub readout: ModeReadout,
    /// Generator current into `T_A` (A).
    pub transmitter_current: Complex64,
    pub solution: CircuitSolution,
}

/// Solves the simultaneous network. `c_m` is extracted from the common
/// channel against the generator voltage.
pub fn solve_simultaneous(p: &SimultaneousParams) -> Result<SimultaneousSolution> {
    let net = build_simultaneous_network(p)?;
    let omega = p.omega();
    let s = net.solve(omega)?;
    let v_da = s.voltage("D_A")?;
    let v_df = s.voltage("D_F")?;
    let c_m = extract_cm(v_da, p.v_source, &p.instrument, omega)?;
    Ok(SimultaneousSolution {
        readout: ModeReadout {
            v_diff: v_df - v_da,
            v_common: v_da,
            c_m,
        },
        transmitter_current: -s.current("V_exc")?,
        solution: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zs_is_parallel_rc() {
        let m = InstrumentModel::default();
        let w = 2.0 * std::f64::consts::PI * 1e6;
        let y = 1.0 / m.zs_resistance + J * w * m.zs_capacitance;
        assert!((m.zs(w) - 1.0 / y).norm() < 1e-9 * m.zs(w).norm());
    }

    #[test]
    fn forward_and_extract_invert_each_other() {
        let m = InstrumentModel::default();
        let w = 2.0 * std::f64::consts::PI * 1e6;
        let v = Complex64::new(1.0, 0.0);
        let va = common_mode_forward(1.56e-12, v, &m, w);
        let c = extract_cm(va, v, &m, w).unwrap();
        assert!(((c - 1.56e-12) / 1.56e-12).abs() < 1e-9);
    }

    #[test]
    fn extract_rejects_impossible_taps() {
        let m = InstrumentModel::default();
        let v = Complex64::new(1.0, 0.0);
        assert!(matches!(
            extract_cm(v, v, &m, 1e6),
            Err(Error::Inversion(_))
        ));
        // A tap leading the source by the wrong phase implies negative C.
        let bad = Complex64::new(0.0, -0.1);
        assert!(matches!(
            extract_cm(bad, v, &m, 1e6),
            Err(Error::Inversion(_))
        ));
        assert_eq!(
            extract_cm(Complex64::new(0.0, 0.0), v, &m, 1e6).unwrap(),
            0.0
        );
    }

    #[test]
    fn negative_capacitance_is_rejected() {
        assert!(measured_capacitance(-1.0, 0.0, 0.0, 0.0).is_err());
        assert!(measured_capacitance(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn instrument_validation() {
        let mut m = InstrumentModel::default();
        assert!(m.validate().is_ok());
        m.r1 = 0.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn track_resistance_of_default_receiver() {
        let p = SimultaneousParams::default();
        assert!(
            p.r_receiver > 0.02 && p.r_receiver < 0.03,
            "{}",
            p.r_receiver
        );
    }
}
