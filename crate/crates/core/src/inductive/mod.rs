//! Dodd–Deeds mutual inductance of an off-axis coil pair, in free space and
//! above a conductive and/or magnetic plate.
//!
//! The excitation coil's vector potential is expanded over spatial frequency
//! `α`; the pickup's flux linkage is the line integral of that potential
//! around each pickup turn, integrated over the pickup cross-section:
//!
//! ```text
//! M = μ0 n_e n_p / 2 ∫ I(α r_e1, α r_e2)/α² · T(α) · [D(α) + R(α) E_e(α) E_p(α)/α²] dα
//! T(α) = ∫_{r_p1}^{r_p2} ∫_0^{2π} cos φ · J1(α ρ(r_p, θ)) · r_p dθ dr_p
//! ```
//!
//! `n_e`, `n_p` are turn densities per unit cross-section area, `D` is the
//! double height integral of `exp(-α|z-h|)` over both windings, `E` the
//! height integral of `exp(-α h)` measured from the plate surface, and `R` the
//! plate reflection coefficient. Only the `R` term depends on the plate, so
//! the free-space part and the plate change come from one shared grid.
//!
//! Sign convention: the pickup is traversed in the sense that makes a
//! side-by-side pair positive, i.e. the two spirals are mirror images. A
//! coaxial pair therefore has negative mutual inductance.

mod bessel;
mod neumann;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, push_mapped};
use crate::sensor::{CoilPairGeometry, Excitation, PlateSample, MU_0};

pub use bessel::{bessel_j0, bessel_j1, kernel_i};
pub use neumann::{neumann_loop_pair, neumann_oracle};

/// Integration settings for the α, θ and r_p integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Truncation of the α integral (1/m).
    pub alpha_max: f64,
    pub alpha_points: usize,
    pub theta_points: usize,
    pub rp_points: usize,
    pub rel_tol: f64,
    /// How many times every node count may be doubled while chasing `rel_tol`.
    pub max_refinements: usize,
}

impl QuadratureSpec {
    pub fn for_geometry(g: &CoilPairGeometry) -> Self {
        Self {
            alpha_max: 40.0 / g.r_e2.min(g.r_p2),
            alpha_points: 256,
            theta_points: 64,
            rp_points: 32,
            rel_tol: 1e-4,
            max_refinements: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.alpha_max > 0.0 && self.alpha_max.is_finite()) {
            bad.push("alpha_max must be positive");
        }
        if self.alpha_points < 8 || self.theta_points < 8 || self.rp_points < 8 {
            bad.push("node counts must be at least 8");
        }
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            bad.push("rel_tol must lie in (0, 1e-2]");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(bad.join("; ")))
        }
    }

    /// Every node count multiplied by `2^level`.
    pub fn refined(&self, level: usize) -> Self {
        let k = 1usize << level;
        Self {
            alpha_points: self.alpha_points * k,
            theta_points: self.theta_points * k,
            rp_points: self.rp_points * k,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexInductance {
    /// H.
    pub value: Complex64,
    /// Hz; zero for free-space values.
    pub frequency: f64,
}

/// Free-space mutual inductance and the plate-induced change, from one grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSolution {
    pub free_space: f64,
    pub delta: Complex64,
    pub frequency: f64,
    /// The settings the accepted estimate was computed with.
    pub quadrature: QuadratureSpec,
}

impl PairSolution {
    pub fn free(&self) -> ComplexInductance {
        ComplexInductance {
            value: Complex64::new(self.free_space, 0.0),
            frequency: self.frequency,
        }
    }

    pub fn delta_l(&self) -> ComplexInductance {
        ComplexInductance {
            value: self.delta,
            frequency: self.frequency,
        }
    }

    pub fn total(&self) -> ComplexInductance {
        ComplexInductance {
            value: self.free_space + self.delta,
            frequency: self.frequency,
        }
    }
}

/// Plate factor `R(α, ω)`.
///
/// With `α1 = sqrt(α² + jωμ0μσ)`:
///
/// ```text
/// R = (α1² − μ²α²)(1 − e^{2α1c}) / ((α1 + μα)² e^{2α1c} − (α1 − μα)²)
/// ```
///
/// evaluated after dividing through by `e^{2α1c}` so thick plates don't
/// overflow.
pub fn reflection_coefficient(alpha: f64, omega: f64, plate: &PlateSample) -> Complex64 {
    let mu = plate.mu_r;
    let k2 = omega * MU_0 * mu * plate.sigma;
    let a1_sq = Complex64::new(alpha * alpha, k2);
    let mu_a = mu * alpha;
    // Formed from the squares so that σ = 0, μ = 1 cancels exactly.
    let diff_sq = a1_sq - mu * mu * alpha * alpha;
    if diff_sq == Complex64::new(0.0, 0.0) {
        return Complex64::new(0.0, 0.0);
    }
    let a1 = principal_sqrt(a1_sq);
    let decay = (-2.0 * a1 * plate.thickness).exp();
    let num = diff_sq * (decay - 1.0);
    let den = (a1 + mu_a) * (a1 + mu_a) - (a1 - mu_a) * (a1 - mu_a) * decay;
    num / den
}

fn principal_sqrt(z: Complex64) -> Complex64 {
    // Re >= 0 branch without going through polar form.
    let m = z.norm();
    let re = ((m + z.re) * 0.5).sqrt();
    let im = ((m - z.re) * 0.5).sqrt();
    Complex64::new(re, if z.im < 0.0 { -im } else { im })
}

pub fn mutual_inductance_free_space(
    g: &CoilPairGeometry,
    q: &QuadratureSpec,
) -> Result<ComplexInductance> {
    Ok(solve_pair(g, None, 0.0, q)?.free())
}

pub fn mutual_inductance_above_plate(
    g: &CoilPairGeometry,
    plate: &PlateSample,
    omega: f64,
    q: &QuadratureSpec,
) -> Result<ComplexInductance> {
    Ok(solve_pair(g, Some(plate), omega, q)?.total())
}

pub fn delta_l(
    g: &CoilPairGeometry,
    plate: &PlateSample,
    omega: f64,
    q: &QuadratureSpec,
) -> Result<ComplexInductance> {
    Ok(solve_pair(g, Some(plate), omega, q)?.delta_l())
}

/// `V = jωLI` for a current-driven excitation.
pub fn induced_voltage(l: &ComplexInductance, exc: &Excitation) -> Result<Complex64> {
    if !(exc.frequency.is_finite() && exc.frequency >= 0.0) {
        return Err(Error::Domain(format!(
            "induced voltage needs a non-negative frequency, got {}",
            exc.frequency
        )));
    }
    let i = exc.drive_current()?;
    Ok(Complex64::new(0.0, exc.omega()) * l.value * i)
}

/// Solves free-space and plate parts together, doubling node counts until
/// both settle to `rel_tol`, and widening the α range while the tail beyond
/// `alpha_max` is not negligible.
pub fn solve_pair(
    g: &CoilPairGeometry,
    plate: Option<&PlateSample>,
    omega: f64,
    q: &QuadratureSpec,
) -> Result<PairSolution> {
    g.ensure_valid()?;
    q.validate()?;
    if let Some(p) = plate {
        p.validate().into_result()?;
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Domain(format!(
                "plate response needs omega > 0, got {omega}"
            )));
        }
    }
    let liftoff = plate.map_or(0.0, |p| p.liftoff);

    let mut base = *q;
    let mut extensions = 0;
    let mut history: Vec<(f64, Complex64)> = Vec::new();
    let mut last_change = f64::INFINITY;
    let mut level = 0;
    while level <= q.max_refinements {
        let spec = base.refined(level);
        let factors = Factors::build(g, liftoff, &spec);
        let (free, delta) = factors.evaluate(plate, omega);
        let converged = match history.last() {
            Some(&(pf, pd)) if level > 0 => {
                let change_free = ((free - pf) / free).abs();
                let floor = (1e-6 * free.abs()).max(f64::MIN_POSITIVE);
                let change_delta = (delta - pd).norm() / delta.norm().max(floor);
                last_change = change_free.max(change_delta);
                last_change <= q.rel_tol
            }
            _ => false,
        };
        history.push((free, delta));
        if converged {
            let tail = factors.tail(g, liftoff, &spec, plate, omega);
            let scale = free.abs().max((free + delta).norm());
            if tail.norm() <= q.rel_tol * scale {
                return Ok(PairSolution {
                    free_space: free,
                    delta,
                    frequency: omega / (2.0 * PI),
                    quadrature: spec,
                });
            }
            if extensions == MAX_EXTENSIONS {
                break;
            }
            // Truncation dominates: widen the α range at the same node
            // density and check grid convergence again.
            extensions += 1;
            base.alpha_max *= 2.0;
            base.alpha_points *= 2;
            level = 0;
            continue;
        }
        level += 1;
    }
    let n = history.len();
    let total = |(f, d): (f64, Complex64)| (f + d).norm();
    Err(Error::Convergence {
        previous: if n >= 2 {
            total(history[n - 2])
        } else {
            f64::NAN
        },
        last: history.last().map_or(f64::NAN, |&h| total(h)),
        change: last_change,
        tolerance: q.rel_tol,
    })
}

/// How many times the α range may be doubled when the tail check fails.
const MAX_EXTENSIONS: usize = 3;

/// Per-node weights of the α integrand, with the plate factor left out.
struct Factors {
    alpha: Vec<f64>,
    /// Direct (free-space) contribution of each node.
    free: Vec<f64>,
    /// Contribution of each node per unit reflection coefficient.
    reflect: Vec<f64>,
}

impl Factors {
    fn build(g: &CoilPairGeometry, liftoff: f64, q: &QuadratureSpec) -> Self {
        let (alpha, weights) = alpha_grid(0.0, q.alpha_max, q.alpha_points, true);
        Self::on_nodes(g, liftoff, q, alpha, weights)
    }

    fn on_nodes(
        g: &CoilPairGeometry,
        liftoff: f64,
        q: &QuadratureSpec,
        alpha: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let ring = PickupRing::new(g, q.theta_points, q.rp_points);
        let n_e = g.n1 as f64 / ((g.r_e2 - g.r_e1) * (g.l_e2 - g.l_e1));
        let n_p = g.n2 as f64 / ((g.r_p2 - g.r_p1) * (g.l_p2 - g.l_p1));
        let prefactor = 0.5 * MU_0 * n_e * n_p;

        let per_node: Vec<(f64, f64)> = alpha
            .par_iter()
            .zip(weights.par_iter())
            .map(|(&a, &wt)| {
                let radial =
                    bessel::kernel_from_zero(a * g.r_e2) - bessel::kernel_from_zero(a * g.r_e1);
                let t = ring.linkage(a);
                let base = prefactor * wt * radial / (a * a) * t;
                let direct = height_overlap(a, (g.l_e1, g.l_e2), (g.l_p1, g.l_p2));
                let e_e = height_decay(a, liftoff + g.l_e1, g.l_e2 - g.l_e1);
                let e_p = height_decay(a, liftoff + g.l_p1, g.l_p2 - g.l_p1);
                (base * direct, base * e_e * e_p / (a * a))
            })
            .collect();
        let (free, reflect) = per_node.into_iter().unzip();
        Self {
            alpha,
            free,
            reflect,
        }
    }

    fn evaluate(&self, plate: Option<&PlateSample>, omega: f64) -> (f64, Complex64) {
        let free: f64 = self.free.iter().sum();
        let mut delta = Complex64::new(0.0, 0.0);
        if let Some(p) = plate {
            for (a, r) in self.alpha.iter().zip(&self.reflect) {
                delta += *r * reflection_coefficient(*a, omega, p);
            }
        }
        (free, delta)
    }

    /// Integral over `[α_max, 2α_max]` at the same node density.
    fn tail(
        &self,
        g: &CoilPairGeometry,
        liftoff: f64,
        q: &QuadratureSpec,
        plate: Option<&PlateSample>,
        omega: f64,
    ) -> Complex64 {
        let (alpha, weights) =
            alpha_grid(q.alpha_max, 2.0 * q.alpha_max, q.alpha_points / 2, false);
        let t = Factors::on_nodes(g, liftoff, q, alpha, weights);
        let (f, d) = t.evaluate(plate, omega);
        f + d
    }
}

/// Composite Gauss–Legendre nodes on `[lo, hi]`. With `graded`, the first
/// panels are geometrically spaced toward `lo = 0` before switching to
/// uniform panels.
fn alpha_grid(lo: f64, hi: f64, points: usize, graded: bool) -> (Vec<f64>, Vec<f64>) {
    let per_panel = if points >= 64 { 16 } else { 8 };
    let panels = (points / per_panel).max(3);
    let rule = gauss_legendre(per_panel);
    let mut breaks = vec![lo];
    if graded {
        let first = hi * 1e-3;
        let knee = hi / 8.0;
        let n_log = (panels / 4).max(1);
        breaks.push(first);
        let ratio = (knee / first).powf(1.0 / n_log as f64);
        for k in 1..=n_log {
            breaks.push(first * ratio.powi(k as i32));
        }
        let n_lin = panels - 1 - n_log;
        let step = (hi - knee) / n_lin as f64;
        for k in 1..=n_lin {
            breaks.push(knee + step * k as f64);
        }
    } else {
        let step = (hi - lo) / panels as f64;
        for k in 1..=panels {
            breaks.push(lo + step * k as f64);
        }
    }
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for pair in breaks.windows(2) {
        push_mapped(&rule, pair[0], pair[1], &mut nodes, &mut weights);
    }
    (nodes, weights)
}

/// Quadrature points over the pickup cross-section: distance from the
/// excitation axis and the weighted `r_p cos φ` factor of each point.
struct PickupRing {
    rho: Vec<f64>,
    weight: Vec<f64>,
}

impl PickupRing {
    fn new(g: &CoilPairGeometry, theta_points: usize, rp_points: usize) -> Self {
        let th_rule = gauss_legendre(theta_points);
        let rp_rule = gauss_legendre(rp_points);
        let (mut th, mut th_w) = (Vec::new(), Vec::new());
        push_mapped(&th_rule, 0.0, 2.0 * PI, &mut th, &mut th_w);
        let (mut rp, mut rp_w) = (Vec::new(), Vec::new());
        push_mapped(&rp_rule, g.r_p1, g.r_p2, &mut rp, &mut rp_w);

        let mut rho = Vec::with_capacity(th.len() * rp.len());
        let mut weight = Vec::with_capacity(th.len() * rp.len());
        for (r, rw) in rp.iter().zip(&rp_w) {
            for (t, tw) in th.iter().zip(&th_w) {
                let (s, c) = t.sin_cos();
                let x = g.w - r * c;
                let y = r * s;
                // Angle between A and the path element; atan2 keeps the
                // point x = 0 (pickup path crossing the excitation axis) finite.
                let phi = t + y.atan2(x);
                rho.push(x.hypot(y));
                weight.push(rw * tw * r * phi.cos());
            }
        }
        Self { rho, weight }
    }

    fn linkage(&self, alpha: f64) -> f64 {
        self.rho
            .iter()
            .zip(&self.weight)
            .map(|(r, w)| w * bessel::j1(alpha * r))
            .sum()
    }
}

/// `∫_{h1}^{h2} ∫_{z1}^{z2} exp(-α|z-h|) dz dh`.
fn height_overlap(alpha: f64, (h1, h2): (f64, f64), (z1, z2): (f64, f64)) -> f64 {
    // G'' = exp(-α|x|); G(x) = x² φ2(α|x|) up to a constant that cancels.
    let g = |x: f64| x * x * phi2(alpha * x.abs());
    g(z2 - h1) - g(z2 - h2) - g(z1 - h1) + g(z1 - h2)
}

/// `(e^{-u} - 1 + u) / u²`.
fn phi2(u: f64) -> f64 {
    if u < 0.1 {
        // Σ (-u)^k / (k+2)!
        let mut term = 0.5;
        let mut sum = term;
        for k in 1..10 {
            term *= -u / (k as f64 + 2.0);
            sum += term;
        }
        sum
    } else {
        (libm::expm1(-u) + u) / (u * u)
    }
}

/// `∫_{h}^{h+thickness} exp(-α z) dz · α = e^{-αh} - e^{-α(h+thickness)}`.
fn height_decay(alpha: f64, h: f64, thickness: f64) -> f64 {
    -(-alpha * h).exp() * libm::expm1(-alpha * thickness)
}
