//! Experiment sweeps built from the inductive, electrostatic and circuit
//! models: plastic plates, water immersion, copper foils, plastic under a
//! copper plate, and ferrite rings in water.
//!
//! Common-mode-only sweeps drive the transmitter as one 1 V conductor and
//! pass the aggregate coupling through the `Z_s` divider. Simultaneous
//! sweeps solve the distributed network with per-segment couplings and the
//! plate-modified mutual inductance.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    common_mode_forward, differential_voltage, extract_cm, solve_simultaneous, CapacitiveCoupling,
};
use crate::config::RunConfig;
use crate::electrostatic::{CrossSectionModel, ElectrostaticSolver, Inclusion, SampleLayer};
use crate::error::{Error, Result};
use crate::inductive::solve_pair;
use crate::sensor::{Excitation, PlateSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    PlasticStack,
    WaterImmersion,
    CopperStack,
    CopperPlusPlastic,
    WaterPlusFerrite,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        Self::PlasticStack,
        Self::WaterImmersion,
        Self::CopperStack,
        Self::CopperPlusPlastic,
        Self::WaterPlusFerrite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PlasticStack => "plastic_stack",
            Self::WaterImmersion => "water_immersion",
            Self::CopperStack => "copper_stack",
            Self::CopperPlusPlastic => "copper_plus_plastic",
            Self::WaterPlusFerrite => "water_plus_ferrite",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown scenario {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `|V_s − V_a| / |V_a|`.
    AbsDelta,
    /// `1 + (|V_s| − |V_a|) / |V_a|`.
    Shifted,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Self::AbsDelta => "abs_delta",
            Self::Shifted => "shifted",
        }
    }
}

pub fn normalize(v_sample: Complex64, v_air: Complex64, mode: Normalization) -> Result<f64> {
    let a = v_air.norm();
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!(
            "reference voltage {v_air} has no magnitude"
        )));
    }
    Ok(match mode {
        Normalization::AbsDelta => (v_sample - v_air).norm() / a,
        Normalization::Shifted => 1.0 + (v_sample.norm() - a) / a,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Differential,
    Common,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Self::Differential => "differential",
            Self::Common => "common",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReading {
    pub channel: Channel,
    pub v: Complex64,
    pub normalized: f64,
}

/// One sweep point with every channel read at it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPoint {
    pub sweep_value: f64,
    pub readings: Vec<ChannelReading>,
    /// Capacitance extracted from the common channel (F).
    pub c_m: Option<f64>,
    /// Estimate flags plus any point label.
    pub flags: Vec<String>,
}

impl ScenarioPoint {
    pub fn reading(&self, channel: Channel) -> Option<&ChannelReading> {
        self.readings.iter().find(|r| r.channel == channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMetadata {
    pub config_hash: String,
    pub solver_settings: Vec<(String, String)>,
    pub estimate_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub kind: ScenarioKind,
    pub sweep_label: String,
    pub normalization: Normalization,
    pub points: Vec<ScenarioPoint>,
    pub metadata: ScenarioMetadata,
}

impl ScenarioResult {
    /// Magnitudes of one channel along the sweep.
    pub fn magnitudes(&self, channel: Channel) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|p| p.reading(channel).map(|r| r.v.norm()))
            .collect()
    }

    pub fn capacitances(&self) -> Vec<f64> {
        self.points.iter().filter_map(|p| p.c_m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlasticStackSpec {
    pub layers: Vec<u32>,
    pub thickness: f64,
    pub eps_r: f64,
    /// Lateral extent along the cross-section (m).
    pub width: f64,
    pub liftoff: f64,
    pub frequency: f64,
}

impl Default for PlasticStackSpec {
    fn default() -> Self {
        Self {
            layers: (0..=4).collect(),
            thickness: 1.5e-3,
            eps_r: 3.0,
            width: 65e-3,
            liftoff: 1.6e-3,
            frequency: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaterImmersionSpec {
    pub volumes_ml: Vec<f64>,
    /// Water height per millilitre (m).
    pub height_per_ml: f64,
    pub eps_r: f64,
    /// Insulating coat over the traces; zero thickness removes it.
    pub coating_thickness: f64,
    pub coating_eps_r: f64,
    pub frequency: f64,
}

impl Default for WaterImmersionSpec {
    fn default() -> Self {
        Self {
            volumes_ml: (0..=6).map(|k| 10.0 * k as f64).collect(),
            height_per_ml: 0.1e-3,
            eps_r: 80.0,
            coating_thickness: 0.5e-3,
            coating_eps_r: 3.0,
            frequency: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopperStackSpec {
    pub layers: Vec<u32>,
    pub foil_thickness: f64,
    pub sigma: f64,
    pub liftoff: f64,
    pub frequency: f64,
}

impl Default for CopperStackSpec {
    fn default() -> Self {
        Self {
            layers: (0..=5).collect(),
            foil_thickness: 60e-6,
            sigma: PlateSample::COPPER_SIGMA,
            liftoff: 5e-3,
            frequency: 100e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopperPlusPlasticSpec {
    pub plastic: Vec<u32>,
    pub plastic_thickness: f64,
    pub plastic_eps_r: f64,
    pub plastic_width: f64,
    pub copper_thickness: f64,
    pub copper_sigma: f64,
    pub copper_liftoff: f64,
    /// Lateral extent of the copper plate in the cross-section (m).
    pub copper_width: f64,
    pub frequency: f64,
}

impl Default for CopperPlusPlasticSpec {
    fn default() -> Self {
        Self {
            plastic: (0..=3).collect(),
            plastic_thickness: 1.5e-3,
            plastic_eps_r: 3.0,
            plastic_width: 65e-3,
            copper_thickness: 300e-6,
            copper_sigma: PlateSample::COPPER_SIGMA,
            copper_liftoff: 5e-3,
            copper_width: 100e-3,
            frequency: 1e6,
        }
    }
}

/// Sweep steps: no sample, water alone, then water with 1…k rings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaterPlusFerriteSpec {
    pub max_rings: u32,
    pub water_ml: f64,
    pub height_per_ml: f64,
    pub water_eps_r: f64,
    /// Height of the container floor above the trace plane (m).
    pub liftoff: f64,
    pub ring_mu_r: f64,
    pub ring_sigma: f64,
    pub ring_eps_r: f64,
    pub ring_outer_diameter: f64,
    pub ring_height: f64,
    /// Share of the effective magnetic layer each ring fills.
    pub ring_fill: f64,
    pub frequency: f64,
}

impl Default for WaterPlusFerriteSpec {
    fn default() -> Self {
        Self {
            max_rings: 4,
            water_ml: 15.0,
            height_per_ml: 0.1e-3,
            water_eps_r: 80.0,
            liftoff: 1.6e-3,
            ring_mu_r: 600.0,
            ring_sigma: 0.0,
            ring_eps_r: 12.0,
            ring_outer_diameter: 10e-3,
            ring_height: 8e-3,
            ring_fill: 0.01,
            frequency: 1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub plastic_stack: PlasticStackSpec,
    pub water_immersion: WaterImmersionSpec,
    pub copper_stack: CopperStackSpec,
    pub copper_plus_plastic: CopperPlusPlasticSpec,
    pub water_plus_ferrite: WaterPlusFerriteSpec,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                bad.push(msg.to_string());
            }
        };
        let p = &self.plastic_stack;
        check(!p.layers.is_empty(), "plastic_stack.layers is empty");
        check(
            p.thickness > 0.0 && p.eps_r >= 1.0 && p.width > 0.0 && p.liftoff >= 0.0,
            "plastic_stack values out of range",
        );
        check(
            p.frequency > 0.0,
            "plastic_stack.frequency must be positive",
        );
        let w = &self.water_immersion;
        check(
            !w.volumes_ml.is_empty() && w.volumes_ml.iter().all(|v| *v >= 0.0),
            "water_immersion.volumes_ml must be non-empty and non-negative",
        );
        check(
            w.height_per_ml > 0.0
                && w.eps_r >= 1.0
                && w.coating_thickness >= 0.0
                && w.coating_eps_r >= 1.0,
            "water_immersion values out of range",
        );
        check(
            w.frequency > 0.0,
            "water_immersion.frequency must be positive",
        );
        let c = &self.copper_stack;
        check(!c.layers.is_empty(), "copper_stack.layers is empty");
        check(
            c.foil_thickness > 0.0 && c.sigma >= 0.0 && c.liftoff >= 0.0 && c.frequency > 0.0,
            "copper_stack values out of range",
        );
        let cp = &self.copper_plus_plastic;
        check(
            !cp.plastic.is_empty(),
            "copper_plus_plastic.plastic is empty",
        );
        let max_n = cp.plastic.iter().copied().max().unwrap_or(0) as f64;
        check(
            max_n * cp.plastic_thickness <= cp.copper_liftoff,
            "copper_plus_plastic: plastic stack taller than the copper lift-off",
        );
        check(
            cp.copper_thickness > 0.0
                && cp.copper_sigma >= 0.0
                && cp.copper_width > 0.0
                && cp.plastic_width > 0.0
                && cp.plastic_eps_r >= 1.0
                && cp.frequency > 0.0,
            "copper_plus_plastic values out of range",
        );
        let f = &self.water_plus_ferrite;
        check(
            f.water_ml > 0.0 && f.height_per_ml > 0.0 && f.water_eps_r >= 1.0 && f.liftoff >= 0.0,
            "water_plus_ferrite water values out of range",
        );
        check(
            f.ring_mu_r >= 1.0
                && f.ring_sigma >= 0.0
                && f.ring_eps_r >= 1.0
                && f.ring_outer_diameter > 0.0
                && f.ring_height > 0.0,
            "water_plus_ferrite ring values out of range",
        );
        check(
            f.ring_fill > 0.0 && f.ring_fill * f.max_rings as f64 <= 1.0,
            "water_plus_ferrite.ring_fill times max_rings must lie in (0, 1]",
        );
        check(
            f.frequency > 0.0,
            "water_plus_ferrite.frequency must be positive",
        );
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Flags for scenario parameters that are estimates rather than sample data.
    fn estimate_flags(&self, kind: ScenarioKind) -> Vec<String> {
        let d = ScenarioConfig::default();
        let mut f = Vec::new();
        match kind {
            ScenarioKind::WaterImmersion => {
                if self.water_immersion.coating_thickness == d.water_immersion.coating_thickness {
                    f.push("coating".to_string());
                }
            }
            ScenarioKind::CopperPlusPlastic => {
                if self.copper_plus_plastic.copper_width == d.copper_plus_plastic.copper_width {
                    f.push("copper_width".to_string());
                }
            }
            ScenarioKind::WaterPlusFerrite => {
                let (a, b) = (&self.water_plus_ferrite, &d.water_plus_ferrite);
                if a.ring_mu_r == b.ring_mu_r {
                    f.push("ferrite_mu_r".to_string());
                }
                if a.ring_fill == b.ring_fill {
                    f.push("ferrite_fill".to_string());
                }
                if a.ring_eps_r == b.ring_eps_r {
                    f.push("ferrite_eps_r".to_string());
                }
            }
            _ => {}
        }
        f
    }
}

fn metadata(cfg: &RunConfig, kind: ScenarioKind) -> ScenarioMetadata {
    let q = cfg.quadrature_spec();
    let e = &cfg.electrostatic;
    let solver_settings = vec![
        ("alpha_max".to_string(), format!("{:e}", q.alpha_max)),
        ("alpha_points".to_string(), q.alpha_points.to_string()),
        ("theta_points".to_string(), q.theta_points.to_string()),
        ("rp_points".to_string(), q.rp_points.to_string()),
        ("quadrature_rel_tol".to_string(), format!("{:e}", q.rel_tol)),
        ("max_refinements".to_string(), q.max_refinements.to_string()),
        ("grid_cell".to_string(), format!("{:e}", e.grid.cell)),
        ("cg_rel_tol".to_string(), format!("{:e}", e.solver.rel_tol)),
        (
            "cg_max_iterations".to_string(),
            e.solver.max_iterations.to_string(),
        ),
        (
            "extrusion_length".to_string(),
            format!("{:e}", e.extrusion_length),
        ),
    ];
    let mut estimate_flags = cfg.estimate_flags();
    estimate_flags.extend(cfg.scenarios.estimate_flags(kind));
    ScenarioMetadata {
        config_hash: cfg.hash(),
        solver_settings,
        estimate_flags,
    }
}

fn omega(f: f64) -> f64 {
    2.0 * std::f64::consts::PI * f
}

/// Common-mode reading with the whole transmitter at the generator voltage.
fn common_mode_point(
    cfg: &RunConfig,
    model: &CrossSectionModel,
    frequency: f64,
) -> Result<(Complex64, f64)> {
    let c_agg = ElectrostaticSolver::new(model)?.aggregate_coupling()?;
    let v_exc = Complex64::new(cfg.circuit.v_source, 0.0);
    let w = omega(frequency);
    let v_a = common_mode_forward(c_agg, v_exc, &cfg.circuit.instrument, w);
    let c_m = extract_cm(v_a, v_exc, &cfg.circuit.instrument, w)?;
    Ok((v_a, c_m))
}

fn per_segment_coupling(model: &CrossSectionModel) -> Result<CapacitiveCoupling> {
    let c = ElectrostaticSolver::new(model)?.receiver_segment_couplings()?;
    if c.len() != 6 {
        return Err(Error::Model(format!(
            "the simultaneous network needs six receiver segments, the layout has {}",
            c.len()
        )));
    }
    let mut out = [0.0; 6];
    for (k, (_, v)) in c.into_iter().enumerate() {
        out[k] = v;
    }
    Ok(CapacitiveCoupling::PerSegment(out))
}

/// Raw points in sweep order: (sweep value, channel voltages, C_m, label).
type RawPoint = (f64, Vec<(Channel, Complex64)>, Option<f64>, Option<String>);

fn assemble(
    cfg: &RunConfig,
    kind: ScenarioKind,
    sweep_label: &str,
    normalization: Normalization,
    reference: &RawPoint,
    raw: Vec<RawPoint>,
) -> Result<ScenarioResult> {
    let meta = metadata(cfg, kind);
    let mut points = Vec::with_capacity(raw.len());
    for (value, channels, c_m, label) in raw {
        let mut readings = Vec::new();
        for (ch, v) in channels {
            let v_ref = reference
                .1
                .iter()
                .find(|(c, _)| *c == ch)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    Error::Model(format!("reference lacks the {} channel", ch.name()))
                })?;
            readings.push(ChannelReading {
                channel: ch,
                v,
                normalized: normalize(v, v_ref, normalization)?,
            });
        }
        let mut flags = meta.estimate_flags.clone();
        if let Some(l) = label {
            flags.push(format!("sample={l}"));
        }
        points.push(ScenarioPoint {
            sweep_value: value,
            readings,
            c_m,
            flags,
        });
    }
    Ok(ScenarioResult {
        kind,
        sweep_label: sweep_label.to_string(),
        normalization,
        points,
        metadata: meta,
    })
}

/// Evaluates `f` at every value (in parallel) plus a reference value that is
/// reused when the sweep already contains it.
fn sweep<T, F>(values: &[T], reference: T, f: F) -> Result<(RawPoint, Vec<RawPoint>)>
where
    T: Copy + PartialEq + Send + Sync,
    F: Fn(T) -> Result<RawPoint> + Send + Sync,
{
    let raw = values
        .par_iter()
        .map(|&v| f(v))
        .collect::<Result<Vec<_>>>()?;
    let reference = match values.iter().position(|&v| v == reference) {
        Some(i) => raw[i].clone(),
        None => f(reference)?,
    };
    Ok((reference, raw))
}

pub fn run_plastic_stack(cfg: &RunConfig) -> Result<ScenarioResult> {
    let s = &cfg.scenarios.plastic_stack;
    let base = cfg.electrostatic.model();
    let (reference, raw) = sweep(&s.layers, 0, |n| {
        let layers = vec![SampleLayer::dielectric(s.eps_r, s.thickness, Some(s.width)); n as usize];
        let model = base.clone().with_layers(s.liftoff, layers);
        let (v, c) = common_mode_point(cfg, &model, s.frequency)?;
        Ok((n as f64, vec![(Channel::Common, v)], Some(c), None))
    })?;
    assemble(
        cfg,
        ScenarioKind::PlasticStack,
        "plastic_layers",
        Normalization::Shifted,
        &reference,
        raw,
    )
}

pub fn run_water_immersion(cfg: &RunConfig) -> Result<ScenarioResult> {
    let s = &cfg.scenarios.water_immersion;
    let base = cfg.electrostatic.model();
    let (reference, raw) = sweep(&s.volumes_ml, 0.0, |ml| {
        let mut layers = Vec::new();
        if s.coating_thickness > 0.0 {
            layers.push(SampleLayer::dielectric(
                s.coating_eps_r,
                s.coating_thickness,
                None,
            ));
        }
        if ml > 0.0 {
            layers.push(SampleLayer::dielectric(s.eps_r, ml * s.height_per_ml, None));
        }
        let model = base.clone().with_layers(0.0, layers);
        let (v, c) = common_mode_point(cfg, &model, s.frequency)?;
        Ok((ml, vec![(Channel::Common, v)], Some(c), None))
    })?;
    assemble(
        cfg,
        ScenarioKind::WaterImmersion,
        "water_ml",
        Normalization::Shifted,
        &reference,
        raw,
    )
}

pub fn run_copper_stack(cfg: &RunConfig) -> Result<ScenarioResult> {
    let s = &cfg.scenarios.copper_stack;
    let g = &cfg.geometry;
    let q = cfg.quadrature_spec();
    let exc = Excitation::current(s.frequency, Complex64::new(cfg.circuit.drive_current, 0.0));
    let m_free = solve_pair(g, None, 0.0, &q)?.free_space;
    let (reference, raw) = sweep(&s.layers, 0, |n| {
        let delta = if n == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            let plate = PlateSample {
                sigma: s.sigma,
                mu_r: 1.0,
                thickness: n as f64 * s.foil_thickness,
                liftoff: s.liftoff,
            };
            solve_pair(g, Some(&plate), exc.omega(), &q)?.delta
        };
        let v = differential_voltage(m_free + delta, &exc)?;
        Ok((n as f64, vec![(Channel::Differential, v)], None, None))
    })?;
    assemble(
        cfg,
        ScenarioKind::CopperStack,
        "copper_layers",
        Normalization::AbsDelta,
        &reference,
        raw,
    )
}

pub fn run_copper_plus_plastic(cfg: &RunConfig) -> Result<ScenarioResult> {
    let s = &cfg.scenarios.copper_plus_plastic;
    let g = &cfg.geometry;
    let q = cfg.quadrature_spec();
    let w = omega(s.frequency);
    let plate = PlateSample {
        sigma: s.copper_sigma,
        mu_r: 1.0,
        thickness: s.copper_thickness,
        liftoff: s.copper_liftoff,
    };
    // Plastic has no magnetic or conductive contrast, so one plate solve
    // serves every point.
    let m_total = solve_pair(g, Some(&plate), w, &q)?.total().value;
    let base = cfg.electrostatic.model();
    let (reference, raw) = sweep(&s.plastic, 0, |n| {
        let mut layers = vec![
            SampleLayer::dielectric(
                s.plastic_eps_r,
                s.plastic_thickness,
                Some(s.plastic_width)
            );
            n as usize
        ];
        layers.push(SampleLayer::floating_conductor(
            s.copper_thickness,
            Some(s.copper_width),
        ));
        let liftoff = s.copper_liftoff - n as f64 * s.plastic_thickness;
        let model = base.clone().with_layers(liftoff, layers);
        let coupling = per_segment_coupling(&model)?;
        let r = solve_simultaneous(&cfg.circuit.simultaneous(m_total, coupling, s.frequency))?;
        Ok((
            n as f64,
            vec![
                (Channel::Differential, r.readout.v_diff),
                (Channel::Common, r.readout.v_common),
            ],
            Some(r.readout.c_m),
            None,
        ))
    })?;
    assemble(
        cfg,
        ScenarioKind::CopperPlusPlastic,
        "plastic_layers",
        Normalization::Shifted,
        &reference,
        raw,
    )
}

/// Ferrite sweep step: `None` is the empty sensor, `Some(n)` water with `n` rings.
fn ferrite_step_label(step: Option<u32>) -> String {
    match step {
        None => "air".to_string(),
        Some(0) => "water".to_string(),
        Some(n) => format!("water+{n}_rings"),
    }
}

/// Cross-section for the ferrite sweep: the ring stack sits on the midline,
/// lined up along the out-of-plane axis, and its permittivity is averaged
/// over the extrusion length with whatever it displaces.
pub fn ferrite_model(cfg: &RunConfig, rings: Option<u32>) -> CrossSectionModel {
    let s = &cfg.scenarios.water_plus_ferrite;
    let base = cfg.electrostatic.model();
    let Some(n) = rings else {
        return base;
    };
    let h_water = s.water_ml * s.height_per_ml;
    let mut model = base.with_layers(
        s.liftoff,
        vec![SampleLayer::dielectric(s.water_eps_r, h_water, None)],
    );
    if n > 0 {
        let f = (n as f64 * s.ring_outer_diameter / model.extrusion_length).min(1.0);
        let mix = |bg: f64| (1.0 - f) * bg + f * s.ring_eps_r;
        let (x0, x1) = (-0.5 * s.ring_outer_diameter, 0.5 * s.ring_outer_diameter);
        let bottom = s.liftoff;
        let top = s.liftoff + s.ring_height;
        let water_top = s.liftoff + h_water;
        model.inclusions.push(Inclusion {
            x_min: x0,
            x_max: x1,
            y_min: bottom,
            y_max: top.min(water_top),
            eps_r: mix(s.water_eps_r),
        });
        if top > water_top {
            model.inclusions.push(Inclusion {
                x_min: x0,
                x_max: x1,
                y_min: water_top,
                y_max: top,
                eps_r: mix(1.0),
            });
        }
    }
    model
}

/// Effective magnetic plate standing in for `n` rings.
pub fn ferrite_plate(cfg: &RunConfig, n: u32) -> PlateSample {
    let s = &cfg.scenarios.water_plus_ferrite;
    PlateSample {
        sigma: s.ring_sigma,
        mu_r: 1.0 + n as f64 * s.ring_fill * (s.ring_mu_r - 1.0),
        thickness: s.ring_height,
        liftoff: s.liftoff,
    }
}

pub fn run_water_plus_ferrite(cfg: &RunConfig) -> Result<ScenarioResult> {
    let s = &cfg.scenarios.water_plus_ferrite;
    let g = &cfg.geometry;
    let q = cfg.quadrature_spec();
    let w = omega(s.frequency);
    let m_free = solve_pair(g, None, 0.0, &q)?.free_space;
    let steps: Vec<Option<u32>> = std::iter::once(None)
        .chain((0..=s.max_rings).map(Some))
        .collect();
    let (reference, raw) = sweep(&steps, None, |step| {
        let m = match step {
            Some(n) if n > 0 => m_free + solve_pair(g, Some(&ferrite_plate(cfg, n)), w, &q)?.delta,
            _ => Complex64::from(m_free),
        };
        let coupling = per_segment_coupling(&ferrite_model(cfg, step))?;
        let r = solve_simultaneous(&cfg.circuit.simultaneous(m, coupling, s.frequency))?;
        let index = step.map_or(0.0, |n| n as f64 + 1.0);
        Ok((
            index,
            vec![
                (Channel::Differential, r.readout.v_diff),
                (Channel::Common, r.readout.v_common),
            ],
            Some(r.readout.c_m),
            Some(ferrite_step_label(step)),
        ))
    })?;
    assemble(
        cfg,
        ScenarioKind::WaterPlusFerrite,
        "configuration_step",
        Normalization::Shifted,
        &reference,
        raw,
    )
}

pub fn run_scenario(kind: ScenarioKind, cfg: &RunConfig) -> Result<ScenarioResult> {
    match kind {
        ScenarioKind::PlasticStack => run_plastic_stack(cfg),
        ScenarioKind::WaterImmersion => run_water_immersion(cfg),
        ScenarioKind::CopperStack => run_copper_stack(cfg),
        ScenarioKind::CopperPlusPlastic => run_copper_plus_plastic(cfg),
        ScenarioKind::WaterPlusFerrite => run_water_plus_ferrite(cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_arithmetic() {
        let a = Complex64::new(1.0, 0.0);
        assert_eq!(normalize(a, a, Normalization::AbsDelta).unwrap(), 0.0);
        assert_eq!(normalize(a, a, Normalization::Shifted).unwrap(), 1.0);
        let s = Complex64::new(0.0, 1.1);
        assert!((normalize(s, a, Normalization::Shifted).unwrap() - 1.1).abs() < 1e-15);
        assert!(normalize(a, Complex64::new(0.0, 0.0), Normalization::AbsDelta).is_err());
    }

    #[test]
    fn kinds_parse_by_name() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.name().parse::<ScenarioKind>().unwrap(), k);
        }
        assert!("copper".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn default_specs_are_valid() {
        ScenarioConfig::default().validate().unwrap();
    }

    #[test]
    fn plastic_taller_than_gap_is_rejected() {
        let mut c = ScenarioConfig::default();
        c.copper_plus_plastic.plastic = vec![0, 4];
        assert!(c.validate().is_err());
    }

    #[test]
    fn ferrite_plate_scales_with_ring_count() {
        let cfg = RunConfig::default();
        assert_eq!(ferrite_plate(&cfg, 0).mu_r, 1.0);
        assert!((ferrite_plate(&cfg, 2).mu_r - (1.0 + 2.0 * 0.01 * 599.0)).abs() < 1e-12);
    }

    #[test]
    fn ferrite_model_splits_rings_at_the_water_line() {
        let cfg = RunConfig::default();
        let m = ferrite_model(&cfg, Some(1));
        assert_eq!(m.inclusions.len(), 2);
        assert!(m.inclusions[0].eps_r < 80.0 && m.inclusions[1].eps_r > 1.0);
        assert!(ferrite_model(&cfg, Some(0)).inclusions.is_empty());
        assert!(ferrite_model(&cfg, None).sample_layers.is_empty());
    }
}
