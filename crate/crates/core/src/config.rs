//! Run configuration: one TOML file describing geometry, solver settings,
//! instrument and scenario parameters. Every field has a default, so an empty
//! file is a valid configuration.
//!
//! Overrides use dotted paths (`geometry.n1=6`) and must name a key that
//! already exists in the default tree.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{CapacitiveCoupling, InstrumentModel, NetlistSpec, SimultaneousParams};
use crate::electrostatic::{
    CrossSectionModel, GridSpec, SampleLayer, SolverSettings, TraceLayout, DEFAULT_EXTRUSION_LENGTH,
};
use crate::error::{Error, Result};
use crate::inductive::QuadratureSpec;
use crate::scenarios::ScenarioConfig;
use crate::sensor::{CoilPairGeometry, MeasuredBaseline, PlateSample};

/// Spectral quadrature settings with the α cutoff given relative to the
/// smallest outer coil radius, so it follows geometry overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureConfig {
    /// `α_max · min(r_e2, r_p2)`.
    pub alpha_max_scaled: f64,
    pub alpha_points: usize,
    pub theta_points: usize,
    pub rp_points: usize,
    pub rel_tol: f64,
    pub max_refinements: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureSpec::for_geometry(&CoilPairGeometry::default());
        Self {
            alpha_max_scaled: 40.0,
            alpha_points: q.alpha_points,
            theta_points: q.theta_points,
            rp_points: q.rp_points,
            rel_tol: q.rel_tol,
            max_refinements: q.max_refinements,
        }
    }
}

impl QuadratureConfig {
    pub fn spec(&self, g: &CoilPairGeometry) -> QuadratureSpec {
        QuadratureSpec {
            alpha_max: self.alpha_max_scaled / g.r_e2.min(g.r_p2),
            alpha_points: self.alpha_points,
            theta_points: self.theta_points,
            rp_points: self.rp_points,
            rel_tol: self.rel_tol,
            max_refinements: self.max_refinements,
        }
    }
}

/// Cross-section settings; trace segments are generated from `layout`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElectrostaticConfig {
    pub grid: GridSpec,
    pub layout: TraceLayout,
    pub substrate_thickness: f64,
    pub substrate_eps_r: f64,
    pub extrusion_length: f64,
    pub solver: SolverSettings,
}

impl Default for ElectrostaticConfig {
    fn default() -> Self {
        let m = CrossSectionModel::default();
        Self {
            grid: m.grid,
            layout: TraceLayout::default(),
            substrate_thickness: m.substrate_thickness,
            substrate_eps_r: m.substrate_eps_r,
            extrusion_length: DEFAULT_EXTRUSION_LENGTH,
            solver: m.solver,
        }
    }
}

impl ElectrostaticConfig {
    /// Bare-sensor model.
    pub fn model(&self) -> CrossSectionModel {
        CrossSectionModel {
            grid: self.grid,
            segments: self.layout.segments(),
            substrate_thickness: self.substrate_thickness,
            substrate_eps_r: self.substrate_eps_r,
            extrusion_length: self.extrusion_length,
            solver: self.solver,
            ..CrossSectionModel::default()
        }
    }
}

/// Equivalent-circuit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub instrument: InstrumentModel,
    pub l1: f64,
    pub l2: f64,
    pub r_transmitter: f64,
    pub r_receiver: f64,
    /// Generator amplitude (V).
    pub v_source: f64,
    /// Coil current for current-driven differential readings (A).
    pub drive_current: f64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        let p = SimultaneousParams::default();
        Self {
            instrument: p.instrument,
            l1: p.l1,
            l2: p.l2,
            r_transmitter: p.r_transmitter,
            r_receiver: p.r_receiver,
            v_source: p.v_source.re,
            drive_current: 10e-3,
        }
    }
}

impl CircuitConfig {
    pub fn simultaneous(
        &self,
        m: num_complex::Complex64,
        coupling: CapacitiveCoupling,
        frequency: f64,
    ) -> SimultaneousParams {
        SimultaneousParams {
            l1: self.l1,
            l2: self.l2,
            m,
            r_transmitter: self.r_transmitter,
            r_receiver: self.r_receiver,
            coupling,
            instrument: self.instrument,
            v_source: num_complex::Complex64::new(self.v_source, 0.0),
            frequency,
        }
    }
}

/// Plate and frequencies for the `inductive` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InductiveConfig {
    pub plate: PlateSample,
    pub frequencies: Vec<f64>,
}

impl Default for InductiveConfig {
    fn default() -> Self {
        Self {
            plate: PlateSample::copper(300e-6, 5e-3),
            frequencies: vec![10e3, 100e3, 1e6],
        }
    }
}

/// Sample stack for the `capacitive` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitiveConfig {
    pub liftoff: f64,
    pub layers: Vec<SampleLayer>,
}

impl Default for CapacitiveConfig {
    fn default() -> Self {
        Self {
            liftoff: 1.6e-3,
            layers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: CoilPairGeometry,
    pub quadrature: QuadratureConfig,
    pub electrostatic: ElectrostaticConfig,
    pub inductive: InductiveConfig,
    pub capacitive: CapacitiveConfig,
    pub circuit: CircuitConfig,
    pub baseline: MeasuredBaseline,
    pub scenarios: ScenarioConfig,
    /// Free-form netlist for the `circuit` command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub netlist: Option<NetlistSpec>,
}

impl RunConfig {
    /// Parses `text` and applies `overrides` (`dotted.key=value`).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut tree = toml::Table::try_from(RunConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut tree, file);
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.ensure_valid()?;
        self.quadrature.spec(&self.geometry).validate()?;
        self.electrostatic.model().ensure_valid()?;
        self.capacitive_model().ensure_valid()?;
        self.inductive.plate.validate().into_result()?;
        if self
            .inductive
            .frequencies
            .iter()
            .any(|f| !(f.is_finite() && *f > 0.0))
        {
            return Err(Error::Config(
                "inductive.frequencies must be positive".into(),
            ));
        }
        self.circuit.instrument.validate()?;
        self.scenarios.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    /// SHA-256 of the canonical serialized configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Model for the `capacitive` command.
    pub fn capacitive_model(&self) -> CrossSectionModel {
        self.electrostatic
            .model()
            .with_layers(self.capacitive.liftoff, self.capacitive.layers.clone())
    }

    pub fn quadrature_spec(&self) -> QuadratureSpec {
        self.quadrature.spec(&self.geometry)
    }

    /// Names of parameters still at their estimated defaults.
    pub fn estimate_flags(&self) -> Vec<String> {
        let d = RunConfig::default();
        let mut f = Vec::new();
        if self.geometry == d.geometry {
            f.push("geometry".to_string());
        }
        if self.electrostatic.layout == d.electrostatic.layout {
            f.push("trace_layout".to_string());
        }
        if self.electrostatic.extrusion_length == d.electrostatic.extrusion_length {
            f.push("extrusion_length".to_string());
        }
        if self.circuit.instrument == d.circuit.instrument {
            f.push("zs".to_string());
        }
        if self.circuit.r_transmitter == d.circuit.r_transmitter
            || self.circuit.r_receiver == d.circuit.r_receiver
        {
            f.push("track_resistance".to_string());
        }
        f
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(tree: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut node = tree;
    for p in path {
        node = match node.get_mut(*p) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown config key {key}"))),
        };
    }
    match node.get_mut(*last) {
        Some(slot) if !slot.is_table() => {
            *slot = coerce(value, slot);
            Ok(())
        }
        _ => Err(Error::Config(format!("unknown config key {key}"))),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Integers written where a float is expected become floats.
fn coerce(v: toml::Value, slot: &toml::Value) -> toml::Value {
    match (v, slot) {
        (toml::Value::Integer(i), toml::Value::Float(_)) => toml::Value::Float(i as f64),
        (v, _) => v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::from_toml("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn overrides_must_name_existing_keys() {
        let c =
            RunConfig::from_toml("", &["geometry.n1=6".into(), "geometry.w=42e-3".into()]).unwrap();
        assert_eq!(c.geometry.n1, 6);
        assert_eq!(c.geometry.w, 42e-3);
        assert!(RunConfig::from_toml("", &["geometry.turns=6".into()]).is_err());
        assert!(RunConfig::from_toml("", &["nonsense".into()]).is_err());
    }

    #[test]
    fn integer_override_of_float_key() {
        let c = RunConfig::from_toml("", &["circuit.v_source=2".into()]).unwrap();
        assert_eq!(c.circuit.v_source, 2.0);
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        assert!(RunConfig::from_toml("[geometry]\nradius = 1.0\n", &[]).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig::from_toml("", &["geometry.n1=5".into()]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn estimate_flags_clear_when_overridden() {
        let a = RunConfig::default();
        assert!(a.estimate_flags().contains(&"geometry".to_string()));
        let b = RunConfig::from_toml("", &["geometry.n1=5".into()]).unwrap();
        assert!(!b.estimate_flags().contains(&"geometry".to_string()));
    }
}
