//! Oracle cross-checks run by `dualem validate`. Each check compares a solver
//! against an independent result (closed form, limit, or a second method).

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::circuit::{
    common_mode_forward, differential_voltage, extract_cm, measured_capacitance, ACNetwork,
    InstrumentModel,
};
use crate::config::RunConfig;
use crate::electrostatic::{analytic_capacitor_check, ElectrostaticSolver, PotentialAssignment};
use crate::error::Result;
use crate::inductive::{neumann_oracle, reflection_coefficient, solve_pair};
use crate::sensor::{Excitation, PlateSample};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationTable {
    pub checks: Vec<Check>,
}

impl ValidationTable {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    /// Aligned text table, one line per check.
    pub fn render(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        self.checks
            .iter()
            .map(|c| {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                format!("{tag}  {:width$}  {}\n", c.name, c.detail)
            })
            .collect()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Deterministic spread of `n` values over `[lo, hi]` on a log scale.
fn log_points(lo: f64, hi: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let t = ((k as f64 + phase) / n as f64).fract();
            lo * (hi / lo).powf(t)
        })
        .collect()
}

pub fn run_oracle_suite(cfg: &RunConfig) -> Result<ValidationTable> {
    let mut t = ValidationTable::default();
    let g = &cfg.geometry;
    let q = cfg.quadrature_spec();

    let dd = solve_pair(g, None, 0.0, &q)?.free_space;
    let nm = neumann_oracle(g, 16, 128)?;
    t.push(
        "free-space M vs Neumann (5%)",
        rel(dd, nm) < 0.05,
        format!(
            "spectral {dd:.5e} H, Neumann {nm:.5e} H, diff {:.3}%",
            100.0 * rel(dd, nm)
        ),
    );

    let alphas = log_points(1.0, 1e5, 100, 0.0);
    let omegas = log_points(1e2, 1e8, 100, 0.37);
    let cs = log_points(1e-6, 1e-1, 100, 0.71);
    let worst = (0..100)
        .map(|k| {
            let p = PlateSample {
                sigma: 0.0,
                mu_r: 1.0,
                thickness: cs[k],
                liftoff: 1e-3,
            };
            reflection_coefficient(alphas[k], omegas[k], &p).norm()
        })
        .fold(0.0, f64::max);
    t.push(
        "R = 0 for air plates",
        worst <= 1e-12,
        format!("max |R| {worst:e} over 100 points"),
    );

    let mu = 100.0;
    let thick = PlateSample {
        sigma: 0.0,
        mu_r: mu,
        thickness: 10.0,
        liftoff: 0.0,
    };
    let r = reflection_coefficient(100.0, 1e3, &thick);
    let target = (mu - 1.0) / (mu + 1.0);
    t.push(
        "thick magnetic plate limit",
        (r - target).norm() < 1e-6,
        format!("R {r:.8}, limit {target:.8}"),
    );
    let skin = PlateSample::copper(1e-2, 0.0);
    let r = reflection_coefficient(10.0, 2.0 * PI * 1e7, &skin);
    t.push(
        "strong skin effect limit",
        (r + 1.0).norm() < 1e-3,
        format!("R {r:.6}"),
    );

    let w = 2.0 * PI * 1e5;
    let cu = solve_pair(g, Some(&PlateSample::copper(300e-6, 5e-3)), w, &q)?.delta;
    let fe = solve_pair(
        g,
        Some(&PlateSample {
            sigma: 0.0,
            mu_r: 100.0,
            thickness: 1e-3,
            liftoff: 5e-3,
        }),
        w,
        &q,
    )?
    .delta;
    let air = solve_pair(g, Some(&PlateSample::air(5e-3)), w, &q)?.delta;
    t.push(
        "dL sign: copper < 0, ferrite > 0, air = 0",
        cu.re < 0.0 && fe.re > 0.0 && air.norm() <= 1e-15 * dd.abs(),
        format!(
            "copper {:.4e}, mu_r 100 {:.4e}, air {:e}",
            cu.re,
            fe.re,
            air.norm()
        ),
    );

    let plate = analytic_capacitor_check(20e-3, 1e-3, 1.0)?;
    t.push(
        "parallel plate vs analytic (2%)",
        plate.rel_error < 0.02,
        format!("error {:.2e}", plate.rel_error),
    );

    let model = cfg.electrostatic.model();
    let solver = ElectrostaticSolver::new(&model)?;
    let f = solver.solve_potential(&PotentialAssignment::uniform(&model, 1.0, 0.0))?;
    let (we, wq) = (f.field_energy(), f.charge_energy());
    t.push(
        "field energy vs charge energy (3%)",
        rel(we, wq) < 0.03,
        format!("{:.3}%", 100.0 * rel(we, wq)),
    );
    let m = solver.capacitance_matrix()?;
    t.push(
        "capacitance matrix symmetry (2%)",
        m.raw_asymmetry < 0.02,
        format!("raw asymmetry {:.3}%", 100.0 * m.raw_asymmetry),
    );
    let agg = solver.aggregate_coupling()?;
    t.push(
        "aggregate equals transmitter-receiver block sum",
        rel(m.block_sum(), agg) < 1e-6,
        format!("aggregate {agg:.5e} F, block sum {:.5e} F", m.block_sum()),
    );

    let s = solver.sensitivity_map()?;
    let mut asym: f64 = 0.0;
    for j in 0..s.ny_cells {
        for i in 0..s.nx_cells {
            asym = asym.max((s.value(i, j) - s.value(s.nx_cells - 1 - i, j)).abs());
        }
    }
    let peak = s.peak_column_x();
    t.push(
        "sensitivity peak near midline, mirror symmetric",
        (s.max() - 1.0).abs() < 1e-15 && peak.abs() < 5e-3 && asym < 1e-8,
        format!("peak column at {:.2} mm, asymmetry {asym:.1e}", peak * 1e3),
    );

    let (r_ohm, c_f, omega) = (10e3, 1e-9, 2.0 * PI * 12e3);
    let mut net = ACNetwork::new();
    net.voltage_source("V", "in", "0", Complex64::new(1.0, 0.0))?;
    net.resistor("R", "in", "out", r_ohm)?;
    net.capacitor("C", "out", "0", c_f)?;
    let v = net.solve(omega)?.voltage("out")?;
    let zc = 1.0 / (Complex64::new(0.0, omega * c_f));
    let closed = zc / (r_ohm + zc);
    let err = (v - closed).norm() / closed.norm();
    t.push(
        "MNA vs RC divider (1e-10)",
        err < 1e-10,
        format!("error {err:.1e}"),
    );

    let exc = Excitation::current(1e5, Complex64::new(10e-3, 0.0));
    let dv = differential_voltage(20e-9, &exc)?;
    let expect = 2.0 * PI * 1e5 * 20e-9 * 10e-3;
    t.push(
        "differential voltage jw dM I",
        dv.re == 0.0 && (dv.im - expect).abs() <= 1e-15 * expect,
        format!("|dV| {:.4e} V", dv.norm()),
    );
    let cm_ok = measured_capacitance(1.56e-12, 0.0, 1e-12, 1e-12)? == 1.56e-12
        && (measured_capacitance(1.0, 3.0, 3.0, 3.0)? - 2.0).abs() < 1e-15
        && measured_capacitance(1.0, f64::INFINITY, 2.0, f64::INFINITY)? == 3.0;
    t.push(
        "measured capacitance limits",
        cm_ok,
        "absent, equal and infinite series cases".into(),
    );

    let zs = InstrumentModel::default();
    let w1 = 2.0 * PI * 1e6;
    let v_exc = Complex64::new(1.0, 0.0);
    let worst = [0.1e-12, 1.56e-12, 10e-12, 100e-12]
        .iter()
        .map(|&c| {
            rel(
                extract_cm(common_mode_forward(c, v_exc, &zs, w1), v_exc, &zs, w1)
                    .unwrap_or(f64::INFINITY),
                c,
            )
        })
        .fold(0.0, f64::max);
    t.push(
        "extract C_m round trip (1e-9)",
        worst < 1e-9,
        format!("worst error {worst:.1e}"),
    );
    Ok(t)
}
