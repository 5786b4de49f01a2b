//! Two-dimensional electrostatic model of the sensor cross-section.
//!
//! The cut runs through both coil centers, so each coil shows up as six
//! trace segments: `T_A…T_F` for the transmitter and `D_A…D_F` for the
//! receiver, lettered in the order the spiral visits them (outer turn near
//! side, outer turn far side, then inward). The traces lie on the plane
//! `y = 0` with the FR-4 substrate below it; samples stack above it, starting
//! at the lift-off height.
//!
//! Everything is solved per unit length and converted to farads with a single
//! extrusion length.

mod grid;
mod oracle;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sensor::{ValidationReport, EPS_0};
use grid::{Operator, FREE};

pub use oracle::{analytic_capacitor_check, layered_capacitor_check, CapacitorCheck};

/// Cell size of the default grid (m).
pub const DEFAULT_CELL: f64 = 0.25e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentRole {
    Transmitter,
    Receiver,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSegment {
    pub name: String,
    pub role: SegmentRole,
    pub x_min: f64,
    pub x_max: f64,
    /// Position along the spiral, 0 at the driven end.
    pub path_index: usize,
}

/// Track layout used to generate the default segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceLayout {
    pub center_spacing: f64,
    pub track_width: f64,
    pub track_gap: f64,
    /// Gap between the two innermost facing traces of the pair.
    pub nearest_gap: f64,
    pub turns: usize,
}

impl Default for TraceLayout {
    fn default() -> Self {
        Self {
            center_spacing: 41e-3,
            track_width: 4e-3,
            track_gap: 1e-3,
            nearest_gap: 5e-3,
            turns: 3,
        }
    }
}

impl TraceLayout {
    pub fn segments(&self) -> Vec<TraceSegment> {
        const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
        let pitch = self.track_width + self.track_gap;
        let center = -0.5 * self.center_spacing;
        let mut tx = Vec::new();
        for t in 0..self.turns {
            let near_hi = -0.5 * self.nearest_gap - t as f64 * pitch;
            let near = (near_hi - self.track_width, near_hi);
            let far = (2.0 * center - near.1, 2.0 * center - near.0);
            for (k, (lo, hi)) in [near, far].into_iter().enumerate() {
                tx.push((2 * t + k, lo, hi));
            }
        }
        let mut out = Vec::with_capacity(4 * self.turns);
        for &(p, lo, hi) in &tx {
            out.push(TraceSegment {
                name: format!("T_{}", LETTERS[p] as char),
                role: SegmentRole::Transmitter,
                x_min: lo,
                x_max: hi,
                path_index: p,
            });
        }
        for &(p, lo, hi) in &tx {
            out.push(TraceSegment {
                name: format!("D_{}", LETTERS[p] as char),
                role: SegmentRole::Receiver,
                x_min: -hi,
                x_max: -lo,
                path_index: p,
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Dielectric,
    /// Equipotential body with zero net charge.
    FloatingConductor,
    GroundedConductor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLayer {
    pub eps_r: f64,
    pub thickness: f64,
    /// Lateral extent centered on the sensor midline; `None` spans the domain.
    #[serde(default)]
    pub width: Option<f64>,
    pub kind: LayerKind,
}

impl SampleLayer {
    pub fn dielectric(eps_r: f64, thickness: f64, width: Option<f64>) -> Self {
        Self {
            eps_r,
            thickness,
            width,
            kind: LayerKind::Dielectric,
        }
    }

    pub fn floating_conductor(thickness: f64, width: Option<f64>) -> Self {
        Self {
            eps_r: 1.0,
            thickness,
            width,
            kind: LayerKind::FloatingConductor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub cell: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for GridSpec {
    /// 120 mm × 60 mm, the trace plane 20 mm above the bottom edge.
    fn default() -> Self {
        Self {
            cell: DEFAULT_CELL,
            x_min: -60e-3,
            x_max: 60e-3,
            y_min: -20e-3,
            y_max: 40e-3,
        }
    }
}

impl GridSpec {
    fn steps(lo: f64, hi: f64, h: f64) -> Option<usize> {
        let n = (hi - lo) / h;
        let r = n.round();
        ((n - r).abs() < 1e-6 && r >= 2.0).then_some(r as usize)
    }

    pub fn nx(&self) -> usize {
        Self::steps(self.x_min, self.x_max, self.cell).unwrap_or(0) + 1
    }

    pub fn ny(&self) -> usize {
        Self::steps(self.y_min, self.y_max, self.cell).unwrap_or(0) + 1
    }

    /// Same domain with the cell size divided by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            cell: self.cell / factor as f64,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Relative residual at which conjugate gradients stops.
    pub rel_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSectionModel {
    pub grid: GridSpec,
    pub segments: Vec<TraceSegment>,
    pub substrate_thickness: f64,
    pub substrate_eps_r: f64,
    /// Height of the first sample layer above the trace plane.
    pub sample_liftoff: f64,
    /// Bottom to top, without gaps.
    pub sample_layers: Vec<SampleLayer>,
    /// Rectangular dielectric bodies placed over the layers (e.g. a ring
    /// cross-section inside a water layer).
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    /// Out-of-plane length that turns per-unit-length values into farads.
    pub extrusion_length: f64,
    pub solver: SolverSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub eps_r: f64,
}

/// Default out-of-plane length (m), chosen so the bare sensor's aggregate
/// coupling comes out near the 2-D simulated 1.34 pF.
pub const DEFAULT_EXTRUSION_LENGTH: f64 = 50e-3;

impl Default for CrossSectionModel {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            segments: TraceLayout::default().segments(),
            substrate_thickness: 1.6e-3,
            substrate_eps_r: 4.4,
            sample_liftoff: 1.6e-3,
            sample_layers: Vec::new(),
            inclusions: Vec::new(),
            extrusion_length: DEFAULT_EXTRUSION_LENGTH,
            solver: SolverSettings::default(),
        }
    }
}

impl CrossSectionModel {
    pub fn with_layers(mut self, liftoff: f64, layers: Vec<SampleLayer>) -> Self {
        self.sample_liftoff = liftoff;
        self.sample_layers = layers;
        self
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn transmitters(&self) -> Vec<usize> {
        self.role_indices(SegmentRole::Transmitter)
    }

    pub fn receivers(&self) -> Vec<usize> {
        self.role_indices(SegmentRole::Receiver)
    }

    fn role_indices(&self, role: SegmentRole) -> Vec<usize> {
        (0..self.segments.len())
            .filter(|&i| self.segments[i].role == role)
            .collect()
    }

    /// `(bottom, top)` of every sample layer.
    pub fn layer_bounds(&self) -> Vec<(f64, f64)> {
        let mut y = self.sample_liftoff;
        self.sample_layers
            .iter()
            .map(|l| {
                let b = (y, y + l.thickness);
                y += l.thickness;
                b
            })
            .collect()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let g = &self.grid;
        let mut bad = |ok: bool, msg: String| {
            if !ok {
                r.violations.push(msg);
            }
        };
        let h = g.cell;
        bad(
            h > 0.0 && h.is_finite(),
            "cell size must be positive".into(),
        );
        if !(h > 0.0 && h.is_finite()) {
            return r;
        }
        bad(
            GridSpec::steps(g.x_min, g.x_max, h).is_some()
                && GridSpec::steps(g.y_min, g.y_max, h).is_some(),
            "domain extents must be whole multiples of the cell size".into(),
        );
        bad(
            g.y_min < -self.substrate_thickness && g.y_max > 0.0,
            "domain must contain the substrate and the trace plane".into(),
        );
        let row = -g.y_min / h;
        bad(
            (row - row.round()).abs() < 1e-6,
            "trace plane y = 0 must fall on a grid row".into(),
        );
        bad(
            self.substrate_eps_r >= 1.0 && self.substrate_thickness > 0.0,
            "substrate needs eps_r >= 1 and positive thickness".into(),
        );
        bad(
            self.extrusion_length > 0.0 && self.extrusion_length.is_finite(),
            "extrusion length must be positive".into(),
        );
        bad(
            self.solver.rel_tol > 0.0
                && self.solver.rel_tol <= 1e-3
                && self.solver.max_iterations > 0,
            "solver tolerance must lie in (0, 1e-3] with a positive iteration cap".into(),
        );

        let mut segs: Vec<&TraceSegment> = self.segments.iter().collect();
        segs.sort_by(|a, b| a.x_min.total_cmp(&b.x_min));
        bad(
            segs.iter().any(|s| s.role == SegmentRole::Transmitter)
                && segs.iter().any(|s| s.role == SegmentRole::Receiver),
            "need at least one transmitter and one receiver segment".into(),
        );
        for s in &segs {
            bad(
                s.x_max > s.x_min && s.x_min >= g.x_min && s.x_max <= g.x_max,
                format!("segment {} has an empty or out-of-domain extent", s.name),
            );
            bad(
                s.x_max - s.x_min >= h * (1.0 - 1e-9),
                format!("segment {} is narrower than one cell", s.name),
            );
        }
        for pair in segs.windows(2) {
            let gap = pair[1].x_min - pair[0].x_max;
            if gap <= 0.0 {
                bad(
                    false,
                    format!("segments {} and {} overlap", pair[0].name, pair[1].name),
                );
            } else {
                bad(
                    gap >= 4.0 * h * (1.0 - 1e-9),
                    format!(
                        "gap between {} and {} is resolved by fewer than 4 cells",
                        pair[0].name, pair[1].name
                    ),
                );
            }
        }
        let mut names: Vec<&str> = self.segments.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        bad(
            names.len() == self.segments.len(),
            "segment names must be unique".into(),
        );

        bad(
            self.sample_liftoff >= 0.0,
            "negative sample lift-off".into(),
        );
        let bounds = self.layer_bounds();
        for (k, (l, &(lo, hi))) in self.sample_layers.iter().zip(&bounds).enumerate() {
            bad(l.eps_r >= 1.0, format!("layer {k}: eps_r below 1"));
            bad(
                l.thickness > 0.0,
                format!("layer {k}: thickness must be positive"),
            );
            bad(
                l.width.is_none_or(|w| w > 0.0),
                format!("layer {k}: width must be positive"),
            );
            bad(
                hi <= g.y_max,
                format!("layer {k} extends beyond the domain"),
            );
            if l.kind != LayerKind::Dielectric {
                bad(
                    lo >= h * (1.0 - 1e-9),
                    format!("layer {k}: conductor must sit at least one cell above the traces"),
                );
            }
        }
        for (k, inc) in self.inclusions.iter().enumerate() {
            bad(
                inc.eps_r >= 1.0 && inc.x_max > inc.x_min && inc.y_max > inc.y_min,
                format!("inclusion {k}: needs eps_r >= 1 and a non-empty extent"),
            );
            bad(
                inc.y_min >= 0.0,
                format!("inclusion {k} reaches below the trace plane"),
            );
        }
        r
    }

    pub fn ensure_valid(&self) -> Result<()> {
        self.validate().into_result()
    }
}

/// What a segment is held at during a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPotential {
    Fixed(f64),
    Floating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialAssignment {
    /// One entry per model segment, in model order.
    pub segments: Vec<SegmentPotential>,
}

/// How the receiver is driven alongside the transmitter ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReceiverDrive {
    Uniform(f64),
    /// The transmitter ramp scaled by a coupling factor.
    Scaled(f64),
}

impl PotentialAssignment {
    pub fn uniform(model: &CrossSectionModel, transmitter: f64, receiver: f64) -> Self {
        Self {
            segments: model
                .segments
                .iter()
                .map(|s| match s.role {
                    SegmentRole::Transmitter => SegmentPotential::Fixed(transmitter),
                    SegmentRole::Receiver => SegmentPotential::Fixed(receiver),
                })
                .collect(),
        }
    }

    /// Transmitter potentials falling linearly from 1 V at the driven end to
    /// 0 V at the grounded end.
    pub fn excitation_ramp(model: &CrossSectionModel, receiver: ReceiverDrive) -> Self {
        let last = model
            .segments
            .iter()
            .map(|s| s.path_index)
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let ramp = |p: usize| 1.0 - p as f64 / last;
        Self {
            segments: model
                .segments
                .iter()
                .map(|s| {
                    SegmentPotential::Fixed(match (s.role, receiver) {
                        (SegmentRole::Transmitter, _) => ramp(s.path_index),
                        (SegmentRole::Receiver, ReceiverDrive::Uniform(v)) => v,
                        (SegmentRole::Receiver, ReceiverDrive::Scaled(k)) => k * ramp(s.path_index),
                    })
                })
                .collect(),
        }
    }

    /// Segment `i` at 1 V, everything else grounded.
    pub fn unit(model: &CrossSectionModel, i: usize) -> Self {
        Self {
            segments: (0..model.segments.len())
                .map(|k| SegmentPotential::Fixed(if k == i { 1.0 } else { 0.0 }))
                .collect(),
        }
    }
}

/// Potential and field over the grid.
#[derive(Debug, Clone)]
pub struct FieldMap {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    pub x_min: f64,
    pub y_min: f64,
    /// Node potentials (V), row-major.
    pub potential: Vec<f64>,
    /// Cell-centered field components (V/m), `(nx-1)*(ny-1)` row-major.
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    /// Cell relative permittivity.
    pub eps_r: Vec<f64>,
    /// Charge per unit length (C/m) of each conductor: segments first, then
    /// sample conductor layers in stacking order.
    pub conductor_charge: Vec<f64>,
    pub conductor_potential: Vec<f64>,
    pub iterations: usize,
}

impl FieldMap {
    pub fn node_x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.cell
    }

    pub fn node_y(&self, j: usize) -> f64 {
        self.y_min + j as f64 * self.cell
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (i as f64 + 0.5) * self.cell,
            self.y_min + (j as f64 + 0.5) * self.cell,
        )
    }

    pub fn potential_at(&self, i: usize, j: usize) -> f64 {
        self.potential[j * self.nx + i]
    }

    /// Mean of the four corner potentials.
    pub fn cell_potential(&self, i: usize, j: usize) -> f64 {
        0.25 * (self.potential_at(i, j)
            + self.potential_at(i + 1, j)
            + self.potential_at(i, j + 1)
            + self.potential_at(i + 1, j + 1))
    }

    /// `½ ∫ ε |E|² dA` per unit length (J/m), from the cell fields.
    pub fn field_energy(&self) -> f64 {
        let a = self.cell * self.cell;
        0.5 * EPS_0
            * a
            * self
                .eps_r
                .iter()
                .zip(self.ex.iter().zip(&self.ey))
                .map(|(e, (x, y))| e * (x * x + y * y))
                .sum::<f64>()
    }

    /// `½ Σ Q_k V_k` per unit length (J/m).
    pub fn charge_energy(&self) -> f64 {
        0.5 * self
            .conductor_charge
            .iter()
            .zip(&self.conductor_potential)
            .map(|(q, v)| q * v)
            .sum::<f64>()
    }
}

/// Normalized `E·E` sensitivity per cell.
#[derive(Debug, Clone)]
pub struct SensitivityMap {
    pub nx_cells: usize,
    pub ny_cells: usize,
    pub cell: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub values: Vec<f64>,
}

impl SensitivityMap {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx_cells + i]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x_min + (i as f64 + 0.5) * self.cell,
            self.y_min + (j as f64 + 0.5) * self.cell,
        )
    }

    /// Sum over the cells above the trace plane of each column, with the
    /// column's center x.
    pub fn column_sums(&self) -> Vec<(f64, f64)> {
        (0..self.nx_cells)
            .map(|i| {
                let s = (0..self.ny_cells)
                    .filter(|&j| self.cell_center(i, j).1 > 0.0)
                    .map(|j| self.value(i, j))
                    .sum();
                (self.cell_center(i, 0).0, s)
            })
            .collect()
    }

    /// x of the column with the largest summed sensitivity.
    pub fn peak_column_x(&self) -> f64 {
        self.column_sums()
            .into_iter()
            .fold((0.0, f64::NEG_INFINITY), |best, c| {
                if c.1 > best.1 {
                    c
                } else {
                    best
                }
            })
            .0
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Segment-by-segment capacitances (F).
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitanceMatrix {
    pub names: Vec<String>,
    pub roles: Vec<SegmentRole>,
    /// Symmetrized Maxwell matrix: positive diagonal, non-positive off-diagonal.
    pub maxwell: Vec<Vec<f64>>,
    /// Largest relative mismatch between `C[i][j]` and `C[j][i]` before
    /// symmetrization, over entries above 10⁻⁶ of the largest coupling.
    pub raw_asymmetry: f64,
    pub warning: Option<String>,
}

impl CapacitanceMatrix {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Coupling magnitude between two distinct segments (F).
    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.maxwell[i][i]
        } else {
            -self.maxwell[i][j]
        }
    }

    pub fn coupling_by_name(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.coupling(self.index(a)?, self.index(b)?))
    }

    /// Coupling of segment `i` to every receiver segment combined.
    pub fn to_receiver(&self, i: usize) -> f64 {
        (0..self.len())
            .filter(|&j| self.roles[j] == SegmentRole::Receiver && j != i)
            .map(|j| self.coupling(i, j))
            .sum()
    }

    /// Sum of all transmitter–receiver pair couplings.
    pub fn block_sum(&self) -> f64 {
        (0..self.len())
            .filter(|&i| self.roles[i] == SegmentRole::Transmitter)
            .map(|i| self.to_receiver(i))
            .sum()
    }

    /// Transmitter–receiver pairs with their couplings, row-major.
    pub fn cross_pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            for j in 0..self.len() {
                if self.roles[i] == SegmentRole::Transmitter
                    && self.roles[j] == SegmentRole::Receiver
                {
                    out.push((i, j, self.coupling(i, j)));
                }
            }
        }
        out
    }

    /// The largest transmitter–receiver coupling and its indices.
    pub fn largest_cross_pair(&self) -> (usize, usize, f64) {
        self.cross_pairs()
            .into_iter()
            .fold((0, 0, f64::NEG_INFINITY), |best, p| {
                if p.2 > best.2 {
                    p
                } else {
                    best
                }
            })
    }

    /// The largest off-diagonal coupling and its indices.
    pub fn largest_pair(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let c = self.coupling(i, j);
                if c > best.2 {
                    best = (i, j, c);
                }
            }
        }
        best
    }
}

/// A discretized model ready for repeated solves.
pub struct ElectrostaticSolver {
    model: CrossSectionModel,
    op: Operator,
    eps_cell: Vec<f64>,
    /// Conductor index of each sample conductor layer, with its kind.
    layer_conductors: Vec<(usize, LayerKind)>,
    basis: Mutex<HashMap<usize, Arc<Basis>>>,
}

struct Basis {
    phi: Vec<f64>,
    flux: Vec<f64>,
    iterations: usize,
}

impl ElectrostaticSolver {
    pub fn new(model: &CrossSectionModel) -> Result<Self> {
        model.ensure_valid()?;
        let g = &model.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let h = g.cell;
        let tol = 1e-9 * h;
        let node_x = |i: usize| g.x_min + i as f64 * h;
        let node_y = |j: usize| g.y_min + j as f64 * h;

        // Cell permittivity, area-averaged over the regions it overlaps.
        let mut regions: Vec<([f64; 4], f64)> = vec![(
            [g.x_min, g.x_max, -model.substrate_thickness, 0.0],
            model.substrate_eps_r,
        )];
        for (l, &(lo, hi)) in model.sample_layers.iter().zip(&model.layer_bounds()) {
            let (x0, x1) = match l.width {
                Some(w) => (-0.5 * w, 0.5 * w),
                None => (g.x_min, g.x_max),
            };
            let eps = if l.kind == LayerKind::Dielectric {
                l.eps_r
            } else {
                1.0
            };
            regions.push(([x0, x1, lo, hi], eps));
        }
        let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| (a1.min(b1) - a0.max(b0)).max(0.0);
        let mut eps_cell = vec![1.0; (nx - 1) * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (cx0, cy0) = (node_x(i), node_y(j));
                let mut eps = 1.0;
                for ([x0, x1, y0, y1], e) in &regions {
                    let f =
                        overlap(cx0, cx0 + h, *x0, *x1) * overlap(cy0, cy0 + h, *y0, *y1) / (h * h);
                    if f > 0.0 {
                        eps += (e - 1.0) * f;
                    }
                }
                // Inclusions replace whatever they cover.
                for inc in &model.inclusions {
                    let f = overlap(cx0, cx0 + h, inc.x_min, inc.x_max)
                        * overlap(cy0, cy0 + h, inc.y_min, inc.y_max)
                        / (h * h);
                    if f > 0.0 {
                        eps = eps * (1.0 - f) + inc.eps_r * f;
                    }
                }
                eps_cell[j * (nx - 1) + i] = eps;
            }
        }

        let mut label = vec![FREE; nx * ny];
        let trace_row = (-g.y_min / h).round() as usize;
        for (c, s) in model.segments.iter().enumerate() {
            let mut count = 0;
            for (i, x) in (0..nx).map(|i| (i, node_x(i))) {
                if x >= s.x_min - tol && x <= s.x_max + tol {
                    label[trace_row * nx + i] = c as u32;
                    count += 1;
                }
            }
            if count == 0 {
                return Err(Error::Geometry(vec![format!(
                    "segment {} covers no grid node",
                    s.name
                )]));
            }
        }
        let mut layer_conductors = Vec::new();
        let mut next = model.segments.len();
        for (k, (l, &(lo, hi))) in model
            .sample_layers
            .iter()
            .zip(&model.layer_bounds())
            .enumerate()
        {
            if l.kind == LayerKind::Dielectric {
                continue;
            }
            let (x0, x1) = match l.width {
                Some(w) => (-0.5 * w, 0.5 * w),
                None => (g.x_min, g.x_max),
            };
            let mut rows: Vec<usize> = (0..ny)
                .filter(|&j| node_y(j) >= lo - tol && node_y(j) <= hi + tol)
                .collect();
            if rows.is_empty() {
                // Thinner than a cell: the nearest row stands in for it.
                rows.push((((lo + hi) * 0.5 - g.y_min) / h).round() as usize);
            }
            let mut count = 0;
            for &j in &rows {
                for i in 0..nx {
                    let x = node_x(i);
                    if x >= x0 - tol && x <= x1 + tol {
                        label[j * nx + i] = next as u32;
                        count += 1;
                    }
                }
            }
            if count == 0 {
                return Err(Error::Geometry(vec![format!(
                    "conductor layer {k} covers no grid node"
                )]));
            }
            layer_conductors.push((next, l.kind));
            next += 1;
        }
        let op = Operator::new(nx, ny, &eps_cell, label, next);
        Ok(Self {
            model: model.clone(),
            op,
            eps_cell,
            layer_conductors,
            basis: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &CrossSectionModel {
        &self.model
    }

    fn unit_solve(&self, c: usize) -> Result<Arc<Basis>> {
        if let Some(b) = self.basis.lock().expect("basis cache poisoned").get(&c) {
            return Ok(b.clone());
        }
        let mut v = vec![0.0; self.op.n_conductors];
        v[c] = 1.0;
        let s = self.op.solve(
            &v,
            self.model.solver.rel_tol,
            self.model.solver.max_iterations,
        )?;
        let flux = self.op.conductor_flux(&s.phi);
        let b = Arc::new(Basis {
            phi: s.phi,
            flux,
            iterations: s.iterations,
        });
        self.basis
            .lock()
            .expect("basis cache poisoned")
            .insert(c, b.clone());
        Ok(b)
    }

    /// Solves for the given conductor values; `None` marks a floating
    /// conductor whose potential is set by zero net charge.
    fn solve_conductors(
        &self,
        values: &[Option<f64>],
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
        let fixed: Vec<f64> = values.iter().map(|v| v.unwrap_or(0.0)).collect();
        let base = self.op.solve(
            &fixed,
            self.model.solver.rel_tol,
            self.model.solver.max_iterations,
        )?;
        let mut phi = base.phi;
        let mut flux = self.op.conductor_flux(&phi);
        let mut iterations = base.iterations;
        let mut potentials = fixed;
        let floats: Vec<usize> = (0..values.len()).filter(|&c| values[c].is_none()).collect();
        if !floats.is_empty() {
            let bases = floats
                .iter()
                .map(|&c| self.unit_solve(c))
                .collect::<Result<Vec<_>>>()?;
            let n = floats.len();
            let a = DMatrix::from_fn(n, n, |r, k| bases[k].flux[floats[r]]);
            let rhs = DVector::from_fn(n, |r, _| -flux[floats[r]]);
            let v = a.lu().solve(&rhs).ok_or_else(|| Error::Solver {
                iterations,
                residual: f64::NAN,
            })?;
            for (k, b) in bases.iter().enumerate() {
                let vk = v[k];
                for (p, bp) in phi.iter_mut().zip(&b.phi) {
                    *p += vk * bp;
                }
                for (q, bq) in flux.iter_mut().zip(&b.flux) {
                    *q += vk * bq;
                }
                potentials[floats[k]] = vk;
                iterations += b.iterations;
            }
        }
        Ok((phi, flux, potentials, iterations))
    }

    fn conductor_values(&self, segments: &[SegmentPotential]) -> Result<Vec<Option<f64>>> {
        if segments.len() != self.model.segments.len() {
            return Err(Error::Domain(format!(
                "assignment has {} entries for {} segments",
                segments.len(),
                self.model.segments.len()
            )));
        }
        let mut v: Vec<Option<f64>> = segments
            .iter()
            .map(|s| match s {
                SegmentPotential::Fixed(x) => Some(*x),
                SegmentPotential::Floating => None,
            })
            .collect();
        for &(_, kind) in &self.layer_conductors {
            v.push(match kind {
                LayerKind::GroundedConductor => Some(0.0),
                _ => None,
            });
        }
        Ok(v)
    }

    pub fn solve_potential(&self, p: &PotentialAssignment) -> Result<FieldMap> {
        let values = self.conductor_values(&p.segments)?;
        if values.iter().any(|v| v.is_some_and(|x| !x.is_finite())) {
            return Err(Error::Domain("segment potentials must be finite".into()));
        }
        let (phi, flux, potentials, iterations) = self.solve_conductors(&values)?;
        Ok(self.field_map(phi, &flux, potentials, iterations))
    }

    fn field_map(
        &self,
        phi: Vec<f64>,
        flux: &[f64],
        potentials: Vec<f64>,
        iterations: usize,
    ) -> FieldMap {
        let g = &self.model.grid;
        let (nx, ny, h) = (g.nx(), g.ny(), g.cell);
        let mut ex = vec![0.0; (nx - 1) * (ny - 1)];
        let mut ey = vec![0.0; (nx - 1) * (ny - 1)];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let p00 = phi[j * nx + i];
                let p10 = phi[j * nx + i + 1];
                let p01 = phi[(j + 1) * nx + i];
                let p11 = phi[(j + 1) * nx + i + 1];
                ex[j * (nx - 1) + i] = -((p10 + p11) - (p00 + p01)) / (2.0 * h);
                ey[j * (nx - 1) + i] = -((p01 + p11) - (p00 + p10)) / (2.0 * h);
            }
        }
        FieldMap {
            nx,
            ny,
            cell: h,
            x_min: g.x_min,
            y_min: g.y_min,
            potential: phi,
            ex,
            ey,
            eps_r: self.eps_cell.clone(),
            conductor_charge: flux.iter().map(|q| q * EPS_0).collect(),
            conductor_potential: potentials,
            iterations,
        }
    }

    /// Charge per unit length on every segment with segment `i` at 1 V.
    fn unit_row(&self, i: usize) -> Result<Vec<f64>> {
        let p = PotentialAssignment::unit(&self.model, i);
        let values = self.conductor_values(&p.segments)?;
        let (_, flux, _, _) = self.solve_conductors(&values)?;
        Ok(flux[..self.model.segments.len()]
            .iter()
            .map(|q| q * EPS_0)
            .collect())
    }

    pub fn capacitance_matrix(&self) -> Result<CapacitanceMatrix> {
        let n = self.model.segments.len();
        // Floating-layer bases are shared by every row; build them first.
        for &(c, kind) in &self.layer_conductors {
            if kind == LayerKind::FloatingConductor {
                self.unit_solve(c)?;
            }
        }
        let rows = (0..n)
            .into_par_iter()
            .map(|i| self.unit_row(i))
            .collect::<Result<Vec<_>>>()?;
        let len = self.model.extrusion_length;
        // rows[i][j] is the charge on j with i driven, i.e. C[j][i].
        let raw = |i: usize, j: usize| rows[j][i] * len;
        let largest = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| raw(i, j).abs())
            .fold(0.0, f64::max);
        let mut asym: f64 = 0.0;
        let mut maxwell = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (raw(i, j), raw(j, i));
                maxwell[i][j] = 0.5 * (a + b);
                if i != j && a.abs().max(b.abs()) > 1e-6 * largest {
                    asym = asym.max((a - b).abs() / (0.5 * (a.abs() + b.abs())));
                }
            }
        }
        let warning = (asym > 0.02).then(|| {
            format!(
                "capacitance matrix asymmetry {:.2}% exceeds 2% before symmetrization",
                asym * 100.0
            )
        });
        Ok(CapacitanceMatrix {
            names: self.model.segments.iter().map(|s| s.name.clone()).collect(),
            roles: self.model.segments.iter().map(|s| s.role).collect(),
            maxwell,
            raw_asymmetry: asym,
            warning,
        })
    }

    /// Transmitter→receiver capacitance with all transmitter segments at
    /// 1 V and the receiver held as one grounded conductor (F).
    pub fn aggregate_coupling(&self) -> Result<f64> {
        let p = PotentialAssignment::uniform(&self.model, 1.0, 0.0);
        let f = self.solve_potential(&p)?;
        let q: f64 = self
            .model
            .receivers()
            .iter()
            .map(|&j| f.conductor_charge[j])
            .sum();
        Ok(-q * self.model.extrusion_length)
    }

    /// Coupling of each receiver segment to the whole transmitter (F), in
    /// receiver order: transmitter at 1 V, receiver segments at 0 V.
    pub fn receiver_segment_couplings(&self) -> Result<Vec<(String, f64)>> {
        let p = PotentialAssignment::uniform(&self.model, 1.0, 0.0);
        let f = self.solve_potential(&p)?;
        Ok(self
            .model
            .receivers()
            .into_iter()
            .map(|j| {
                let c = -f.conductor_charge[j] * self.model.extrusion_length;
                (self.model.segments[j].name.clone(), c)
            })
            .collect())
    }

    /// `S = −E_exc·E_det`, positive where added permittivity raises the
    /// coupling, normalized so its maximum is 1.
    pub fn sensitivity_map(&self) -> Result<SensitivityMap> {
        let exc = self.solve_potential(&PotentialAssignment::uniform(&self.model, 1.0, 0.0))?;
        let det = self.solve_potential(&PotentialAssignment::uniform(&self.model, 0.0, 1.0))?;
        let mut values: Vec<f64> = (0..exc.ex.len())
            .map(|k| -(exc.ex[k] * det.ex[k] + exc.ey[k] * det.ey[k]))
            .collect();
        let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Model("sensitivity map has no positive cell".into()));
        }
        for v in &mut values {
            *v /= peak;
        }
        Ok(SensitivityMap {
            nx_cells: exc.nx - 1,
            ny_cells: exc.ny - 1,
            cell: exc.cell,
            x_min: exc.x_min,
            y_min: exc.y_min,
            values,
        })
    }
}

pub fn solve_potential(m: &CrossSectionModel, p: &PotentialAssignment) -> Result<FieldMap> {
    ElectrostaticSolver::new(m)?.solve_potential(p)
}

pub fn segment_capacitance_matrix(m: &CrossSectionModel) -> Result<CapacitanceMatrix> {
    ElectrostaticSolver::new(m)?.capacitance_matrix()
}

pub fn aggregate_coupling(m: &CrossSectionModel) -> Result<f64> {
    ElectrostaticSolver::new(m)?.aggregate_coupling()
}

pub fn sensitivity_map(m: &CrossSectionModel) -> Result<SensitivityMap> {
    ElectrostaticSolver::new(m)?.sensitivity_map()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse() -> CrossSectionModel {
        CrossSectionModel {
            grid: GridSpec {
                cell: 0.25e-3,
                x_min: -45e-3,
                x_max: 45e-3,
                y_min: -10e-3,
                y_max: 15e-3,
            },
            ..Default::default()
        }
    }

    #[test]
    fn default_layout_matches_trace_positions() {
        let s = TraceLayout::default().segments();
        let find = |n: &str| s.iter().find(|t| t.name == n).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(find("T_A").x_min, -6.5e-3) && close(find("T_A").x_max, -2.5e-3));
        assert!(close(find("T_B").x_min, -38.5e-3));
        assert!(close(find("T_F").x_min, -28.5e-3));
        assert!(close(find("D_A").x_min, 2.5e-3));
        assert!(close(find("D_E").x_max, 16.5e-3));
        assert_eq!(find("D_C").path_index, 2);
        assert_eq!(s.len(), 12);
    }

    #[test]
    fn default_model_is_valid() {
        assert!(CrossSectionModel::default().validate().is_valid());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let m = CrossSectionModel {
            grid: GridSpec {
                cell: 0.5e-3,
                ..GridSpec::default()
            },
            ..Default::default()
        };
        let r = m.validate();
        assert!(r
            .violations
            .iter()
            .any(|v| v.contains("fewer than 4 cells")));
        assert!(matches!(
            ElectrostaticSolver::new(&m),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn all_grounded_gives_zero_potential() {
        let m = coarse();
        let f = solve_potential(&m, &PotentialAssignment::uniform(&m, 0.0, 0.0)).unwrap();
        assert!(f.potential.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_assignment_spans_one_to_zero() {
        let m = CrossSectionModel::default();
        let p = PotentialAssignment::excitation_ramp(&m, ReceiverDrive::Scaled(1.0 / 16.0));
        let v = |n: &str| match p.segments[m.segment_index(n).unwrap()] {
            SegmentPotential::Fixed(x) => x,
            SegmentPotential::Floating => panic!(),
        };
        assert_eq!(v("T_A"), 1.0);
        assert_eq!(v("T_F"), 0.0);
        assert!((v("T_C") - 0.6).abs() < 1e-15);
        assert!((v("D_A") - 1.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn floating_plate_carries_no_charge() {
        let m = coarse().with_layers(
            2e-3,
            vec![SampleLayer::floating_conductor(0.5e-3, Some(40e-3))],
        );
        let s = ElectrostaticSolver::new(&m).unwrap();
        let f = s
            .solve_potential(&PotentialAssignment::uniform(&m, 1.0, 0.0))
            .unwrap();
        let q_plate = *f.conductor_charge.last().unwrap();
        let q_seg = f.conductor_charge[0].abs();
        assert!(q_plate.abs() < 1e-8 * q_seg, "{q_plate:e}");
        let v = *f.conductor_potential.last().unwrap();
        assert!(v > 0.0 && v < 1.0);
    }
}
