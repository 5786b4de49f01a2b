//! Separation of the two channels in the simultaneous network: dielectric
//! samples move the common channel, magnetic and conducting samples move the
//! differential one.

use std::f64::consts::PI;

use dualem::circuit::{solve_simultaneous, CapacitiveCoupling, ModeReadout};
use dualem::electrostatic::{CrossSectionModel, ElectrostaticSolver, SampleLayer};
use dualem::inductive::solve_pair;
use dualem::scenarios::ferrite_plate;
use dualem::RunConfig;
use num_complex::Complex64;

const F: f64 = 1e6;

fn coupling(model: &CrossSectionModel) -> CapacitiveCoupling {
    let c = ElectrostaticSolver::new(model)
        .unwrap()
        .receiver_segment_couplings()
        .unwrap();
    let mut out = [0.0; 6];
    for (k, (_, v)) in c.into_iter().enumerate() {
        out[k] = v;
    }
    CapacitiveCoupling::PerSegment(out)
}

fn readout(cfg: &RunConfig, m: Complex64, c: CapacitiveCoupling) -> ModeReadout {
    solve_simultaneous(&cfg.circuit.simultaneous(m, c, F))
        .unwrap()
        .readout
}

struct Fixture {
    cfg: RunConfig,
    m_free: Complex64,
    m_ferrite: Complex64,
    c_air: CapacitiveCoupling,
    c_water: CapacitiveCoupling,
}

fn fixture() -> Fixture {
    let cfg = RunConfig::default();
    let q = cfg.quadrature_spec();
    let plate = ferrite_plate(&cfg, 4);
    let s = solve_pair(&cfg.geometry, Some(&plate), 2.0 * PI * F, &q).unwrap();
    let air = cfg.capacitive_model();
    let water = air
        .clone()
        .with_layers(1.6e-3, vec![SampleLayer::dielectric(80.0, 1.5e-3, None)]);
    Fixture {
        m_free: Complex64::new(s.free_space, 0.0),
        m_ferrite: s.free_space + s.delta,
        c_air: coupling(&air),
        c_water: coupling(&water),
        cfg,
    }
}

#[test]
fn dielectric_and_magnetic_samples_move_different_channels() {
    let f = fixture();
    let base = readout(&f.cfg, f.m_free, f.c_air.clone());
    let water = readout(&f.cfg, f.m_free, f.c_water.clone());
    let ferrite = readout(&f.cfg, f.m_ferrite, f.c_air.clone());

    let dv_water = ((water.v_diff - base.v_diff) / base.v_diff).norm();
    assert!(dv_water < 0.02, "water moves v_diff by {dv_water}");

    let dc_water = (water.c_m - base.c_m).abs();
    let dc_ferrite = (ferrite.c_m - base.c_m).abs();
    assert!(dc_water > 0.0);
    assert!(
        dc_ferrite < 0.1 * dc_water,
        "ferrite {dc_ferrite:e} F vs water {dc_water:e} F"
    );

    let dv_ferrite = ((ferrite.v_diff - base.v_diff) / base.v_diff).norm();
    assert!(
        dv_ferrite > 10.0 * dv_water,
        "ferrite moves v_diff by {dv_ferrite}"
    );
}

#[test]
fn half_and_double_couplings_leave_the_differential_channel() {
    let f = fixture();
    let base = readout(&f.cfg, f.m_free, f.c_air.clone());
    for k in [0.5, 1.5, 2.0] {
        let r = readout(&f.cfg, f.m_free, f.c_air.scaled(k));
        let d = ((r.v_diff - base.v_diff) / base.v_diff).norm();
        assert!(d < 0.01, "coupling x{k} moves v_diff by {d}");
    }
}

#[test]
fn scaling_the_mutual_leaves_the_common_channel() {
    let f = fixture();
    let base = readout(&f.cfg, f.m_free, f.c_air.clone());
    for k in [0.0, 0.5, 1.5, 3.0] {
        let r = readout(&f.cfg, f.m_free * k, f.c_air.clone());
        let d = ((r.v_common - base.v_common) / base.v_common).norm();
        assert!(d < 0.01, "M x{k} moves v_common by {d}");
    }
}
