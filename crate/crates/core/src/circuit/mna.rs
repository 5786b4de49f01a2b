//! Modified nodal analysis over complex phasors.
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per inductor and per voltage source. Inductors carry a branch current so
//! that mutual couplings enter as off-diagonal `jωM` terms in the branch rows.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the reference node.
pub const GROUND: &str = "0";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementKind {
    Resistor(f64),
    Capacitor(f64),
    Inductor(f64),
    /// Phasor voltage of the first node relative to the second.
    VoltageSource(Complex64),
    /// Phasor current leaving the first node through the source and
    /// entering the second.
    CurrentSource(Complex64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub a: usize,
    pub b: usize,
    pub kind: ElementKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualCoupling {
    /// Element indices of the two inductors.
    pub l1: usize,
    pub l2: usize,
    pub m: Complex64,
}

/// A linear AC circuit. Node 0 is ground.
#[derive(Debug, Clone, PartialEq)]
pub struct ACNetwork {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    elements: Vec<Element>,
    couplings: Vec<MutualCoupling>,
}

impl Default for ACNetwork {
    fn default() -> Self {
        Self::new()
    }
}

impl ACNetwork {
    pub fn new() -> Self {
        let mut index = HashMap::new();
        index.insert(GROUND.to_string(), 0);
        Self {
            nodes: vec![GROUND.to_string()],
            index,
            elements: Vec::new(),
            couplings: Vec::new(),
        }
    }

    /// Index of `name`, creating the node on first use.
    pub fn node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.nodes.push(name.to_string());
        self.index.insert(name.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    pub fn node_names(&self) -> &[String] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn couplings(&self) -> &[MutualCoupling] {
        &self.couplings
    }

    pub fn element_index(&self, name: &str) -> Option<usize> {
        self.elements.iter().position(|e| e.name == name)
    }

    /// Adds an element between nodes `a` and `b`, returning its index.
    pub fn add(&mut self, name: &str, a: &str, b: &str, kind: ElementKind) -> Result<usize> {
        if self.element_index(name).is_some() {
            return Err(Error::Topology(format!("duplicate element name {name}")));
        }
        let ok = match kind {
            ElementKind::Resistor(r) => r.is_finite() && r > 0.0,
            ElementKind::Capacitor(c) => c.is_finite() && c >= 0.0,
            ElementKind::Inductor(l) => l.is_finite() && l >= 0.0,
            ElementKind::VoltageSource(v) | ElementKind::CurrentSource(v) => v.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!(
                "element {name} has an invalid value {kind:?}"
            )));
        }
        if a == b {
            return Err(Error::Topology(format!(
                "element {name} connects node {a} to itself"
            )));
        }
        let (a, b) = (self.node(a), self.node(b));
        self.elements.push(Element {
            name: name.to_string(),
            a,
            b,
            kind,
        });
        Ok(self.elements.len() - 1)
    }

    pub fn resistor(&mut self, name: &str, a: &str, b: &str, ohms: f64) -> Result<usize> {
        self.add(name, a, b, ElementKind::Resistor(ohms))
    }

    pub fn capacitor(&mut self, name: &str, a: &str, b: &str, farads: f64) -> Result<usize> {
        self.add(name, a, b, ElementKind::Capacitor(farads))
    }

    pub fn inductor(&mut self, name: &str, a: &str, b: &str, henries: f64) -> Result<usize> {
        self.add(name, a, b, ElementKind::Inductor(henries))
    }

    pub fn voltage_source(
        &mut self,
        name: &str,
        pos: &str,
        neg: &str,
        volts: Complex64,
    ) -> Result<usize> {
        self.add(name, pos, neg, ElementKind::VoltageSource(volts))
    }

    pub fn current_source(
        &mut self,
        name: &str,
        from: &str,
        to: &str,
        amps: Complex64,
    ) -> Result<usize> {
        self.add(name, from, to, ElementKind::CurrentSource(amps))
    }

    /// Couples two existing inductors. The dot of each inductor is at its
    /// first node. Requires `|M| ≤ √(L₁L₂)`.
    pub fn mutual(&mut self, l1: &str, l2: &str, m: impl Into<Complex64>) -> Result<()> {
        let m = m.into();
        let find = |name: &str| -> Result<(usize, f64)> {
            let i = self
                .element_index(name)
                .ok_or_else(|| Error::Topology(format!("no element named {name}")))?;
            match self.elements[i].kind {
                ElementKind::Inductor(l) => Ok((i, l)),
                _ => Err(Error::Topology(format!("{name} is not an inductor"))),
            }
        };
        let (i1, v1) = find(l1)?;
        let (i2, v2) = find(l2)?;
        if i1 == i2 {
            return Err(Error::Topology(format!("{l1} cannot couple to itself")));
        }
        let limit = (v1 * v2).sqrt();
        if !m.is_finite() || m.norm() > limit * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "coupling {l1}–{l2}: |M| = {:e} H exceeds √(L1·L2) = {limit:e} H",
                m.norm()
            )));
        }
        self.couplings.push(MutualCoupling { l1: i1, l2: i2, m });
        Ok(())
    }

    /// Nodes with no path to ground through non-current-source elements.
    pub fn floating_nodes(&self) -> Vec<String> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn root(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in &self.elements {
            if matches!(e.kind, ElementKind::CurrentSource(_)) {
                continue;
            }
            let (ra, rb) = (root(&mut parent, e.a), root(&mut parent, e.b));
            parent[ra] = rb;
        }
        let g = root(&mut parent, 0);
        (1..self.nodes.len())
            .filter(|&i| root(&mut parent, i) != g)
            .map(|i| self.nodes[i].clone())
            .collect()
    }

    /// Solves the network at angular frequency `omega`.
    pub fn solve(&self, omega: f64) -> Result<CircuitSolution> {
        mna_solve(self, omega)
    }
}

/// Node voltages and branch currents of a solved network.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSolution {
    pub omega: f64,
    pub node_names: Vec<String>,
    /// Indexed like `node_names`; ground is exactly zero.
    pub voltages: Vec<Complex64>,
    /// Current through each element from its first node to its second,
    /// indexed like the network's elements.
    pub currents: Vec<Complex64>,
    pub element_names: Vec<String>,
    /// Largest nodal current imbalance relative to the largest branch current.
    /// Checked against 10⁻¹² on every solve.
    pub kcl_residual: f64,
}

impl CircuitSolution {
    pub fn voltage(&self, node: &str) -> Result<Complex64> {
        self.node_names
            .iter()
            .position(|n| n == node)
            .map(|i| self.voltages[i])
            .ok_or_else(|| Error::Topology(format!("no node named {node}")))
    }

    pub fn current(&self, element: &str) -> Result<Complex64> {
        self.element_names
            .iter()
            .position(|n| n == element)
            .map(|i| self.currents[i])
            .ok_or_else(|| Error::Topology(format!("no element named {element}")))
    }
}

const KCL_TOLERANCE: f64 = 1e-12;

pub fn mna_solve(net: &ACNetwork, omega: f64) -> Result<CircuitSolution> {
    if !(omega.is_finite() && omega > 0.0) {
        return Err(Error::Domain(format!(
            "angular frequency must be positive, got {omega}"
        )));
    }
    let floating = net.floating_nodes();
    if !floating.is_empty() {
        return Err(Error::Topology(format!(
            "nodes without a path to ground: {}",
            floating.join(", ")
        )));
    }
    let nv = net.nodes.len() - 1;
    // Branch-current unknown for each inductor and voltage source.
    let mut branch = vec![usize::MAX; net.elements.len()];
    let mut nb = 0;
    for (k, e) in net.elements.iter().enumerate() {
        if matches!(
            e.kind,
            ElementKind::Inductor(_) | ElementKind::VoltageSource(_)
        ) {
            branch[k] = nv + nb;
            nb += 1;
        }
    }
    let n = nv + nb;
    let j = Complex64::new(0.0, 1.0);
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    let mut rhs = DVector::<Complex64>::zeros(n);
    // Node k (k ≥ 1) maps to row k − 1.
    let row = |k: usize| (k > 0).then(|| k - 1);
    for (k, e) in net.elements.iter().enumerate() {
        let (ra, rb) = (row(e.a), row(e.b));
        let stamp_y = |a: &mut DMatrix<Complex64>, y: Complex64| {
            if let Some(p) = ra {
                a[(p, p)] += y;
            }
            if let Some(q) = rb {
                a[(q, q)] += y;
            }
            if let (Some(p), Some(q)) = (ra, rb) {
                a[(p, q)] -= y;
                a[(q, p)] -= y;
            }
        };
        match e.kind {
            ElementKind::Resistor(r) => stamp_y(&mut a, Complex64::new(1.0 / r, 0.0)),
            ElementKind::Capacitor(c) => stamp_y(&mut a, j * omega * c),
            ElementKind::Inductor(l) => {
                let b = branch[k];
                if let Some(p) = ra {
                    a[(p, b)] += 1.0;
                    a[(b, p)] += 1.0;
                }
                if let Some(q) = rb {
                    a[(q, b)] -= 1.0;
                    a[(b, q)] -= 1.0;
                }
                a[(b, b)] -= j * omega * l;
            }
            ElementKind::VoltageSource(v) => {
                let b = branch[k];
                if let Some(p) = ra {
                    a[(p, b)] += 1.0;
                    a[(b, p)] += 1.0;
                }
                if let Some(q) = rb {
                    a[(q, b)] -= 1.0;
                    a[(b, q)] -= 1.0;
                }
                rhs[b] += v;
            }
            ElementKind::CurrentSource(i) => {
                if let Some(p) = ra {
                    rhs[p] -= i;
                }
                if let Some(q) = rb {
                    rhs[q] += i;
                }
            }
        }
    }
    for c in &net.couplings {
        let (b1, b2) = (branch[c.l1], branch[c.l2]);
        a[(b1, b2)] -= j * omega * c.m;
        a[(b2, b1)] -= j * omega * c.m;
    }

    let lu = a.clone().lu();
    let mut x = lu.solve(&rhs).ok_or_else(|| {
        Error::Topology("singular system (source loop or undetermined branch)".into())
    })?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Topology(
            "singular system (source loop or undetermined branch)".into(),
        ));
    }
    // One step of iterative refinement.
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }

    let mut voltages = vec![Complex64::new(0.0, 0.0); net.nodes.len()];
    for k in 1..net.nodes.len() {
        voltages[k] = x[k - 1];
    }
    let currents: Vec<Complex64> = net
        .elements
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let dv = voltages[e.a] - voltages[e.b];
            match e.kind {
                ElementKind::Resistor(r) => dv / r,
                ElementKind::Capacitor(c) => j * omega * c * dv,
                ElementKind::Inductor(_) | ElementKind::VoltageSource(_) => x[branch[k]],
                ElementKind::CurrentSource(i) => i,
            }
        })
        .collect();
    let mut imbalance = vec![Complex64::new(0.0, 0.0); net.nodes.len()];
    for (e, i) in net.elements.iter().zip(&currents) {
        imbalance[e.a] -= i;
        imbalance[e.b] += i;
    }
    // When every branch current is roundoff-small (an unloaded source, say),
    // the largest admittance times the largest voltage sets the scale.
    let v_max = voltages.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let y_max = net
        .elements
        .iter()
        .map(|e| match e.kind {
            ElementKind::Resistor(r) => 1.0 / r,
            ElementKind::Capacitor(c) => omega * c,
            ElementKind::Inductor(l) if l > 0.0 => 1.0 / (omega * l),
            _ => 0.0,
        })
        .fold(0.0, f64::max);
    let largest = currents
        .iter()
        .map(|i| i.norm())
        .fold(y_max * v_max * 1e-3, f64::max);
    let worst = imbalance.iter().map(|i| i.norm()).fold(0.0, f64::max);
    let kcl_residual = if largest > 0.0 {
        worst / largest
    } else {
        worst
    };
    if kcl_residual > KCL_TOLERANCE {
        return Err(Error::Solver {
            iterations: 1,
            residual: kcl_residual,
        });
    }
    Ok(CircuitSolution {
        omega,
        node_names: net.nodes.clone(),
        voltages,
        currents,
        element_names: net.elements.iter().map(|e| e.name.clone()).collect(),
        kcl_residual,
    })
}

/// Element list as written in a config file. Values are SI; sources take an
/// optional imaginary part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistSpec {
    pub elements: Vec<ElementSpec>,
    #[serde(default)]
    pub couplings: Vec<CouplingSpec>,
    /// Hz.
    pub frequency: f64,
    /// Nodes reported by the `circuit` command.
    #[serde(default)]
    pub probes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementSpec {
    pub name: String,
    /// One of `R`, `C`, `L`, `V`, `I`.
    pub kind: String,
    pub a: String,
    pub b: String,
    pub value: f64,
    #[serde(default)]
    pub value_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    pub l1: String,
    pub l2: String,
    pub m: f64,
    #[serde(default)]
    pub m_im: f64,
}

impl NetlistSpec {
    pub fn build(&self) -> Result<ACNetwork> {
        let mut net = ACNetwork::new();
        for e in &self.elements {
            let v = Complex64::new(e.value, e.value_im);
            let real = || -> Result<f64> {
                if e.value_im != 0.0 {
                    return Err(Error::Config(format!(
                        "element {} must have a real value",
                        e.name
                    )));
                }
                Ok(e.value)
            };
            let kind = match e.kind.as_str() {
                "R" => ElementKind::Resistor(real()?),
                "C" => ElementKind::Capacitor(real()?),
                "L" => ElementKind::Inductor(real()?),
                "V" => ElementKind::VoltageSource(v),
                "I" => ElementKind::CurrentSource(v),
                other => {
                    return Err(Error::Config(format!(
                        "element {}: unknown kind {other:?} (expected R, C, L, V or I)",
                        e.name
                    )))
                }
            };
            net.add(&e.name, &e.a, &e.b, kind)?;
        }
        for c in &self.couplings {
            net.mutual(&c.l1, &c.l2, Complex64::new(c.m, c.m_im))?;
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn open_output_follows_source() {
        let mut net = ACNetwork::new();
        net.voltage_source("V1", "in", "0", c(2.5)).unwrap();
        net.resistor("R1", "in", "out", 1e3).unwrap();
        net.capacitor("C1", "out", "0", 0.0).unwrap();
        let s = net.solve(1e3).unwrap();
        assert!((s.voltage("out").unwrap() - c(2.5)).norm() < 1e-12);
    }

    #[test]
    fn floating_nodes_are_named() {
        let mut net = ACNetwork::new();
        net.voltage_source("V1", "a", "0", c(1.0)).unwrap();
        net.resistor("R1", "a", "b", 1.0).unwrap();
        net.resistor("R2", "x", "y", 1.0).unwrap();
        match net.solve(1.0) {
            Err(Error::Topology(msg)) => assert!(msg.contains('x') && msg.contains('y'), "{msg}"),
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn parallel_voltage_sources_are_singular() {
        let mut net = ACNetwork::new();
        net.voltage_source("V1", "a", "0", c(1.0)).unwrap();
        net.voltage_source("V2", "a", "0", c(2.0)).unwrap();
        assert!(matches!(net.solve(1.0), Err(Error::Topology(_))));
    }

    #[test]
    fn overcoupled_inductors_are_rejected() {
        let mut net = ACNetwork::new();
        net.inductor("L1", "a", "0", 1e-6).unwrap();
        net.inductor("L2", "b", "0", 4e-6).unwrap();
        assert!(net.mutual("L1", "L2", 2e-6).is_ok());
        assert!(matches!(
            net.mutual("L1", "L2", 2.1e-6),
            Err(Error::Domain(_))
        ));
        assert!(net.mutual("L1", "R9", 1e-9).is_err());
    }

    #[test]
    fn nonpositive_omega_is_rejected() {
        let mut net = ACNetwork::new();
        net.voltage_source("V1", "a", "0", c(1.0)).unwrap();
        net.resistor("R1", "a", "0", 1.0).unwrap();
        assert!(net.solve(0.0).is_err());
    }

    #[test]
    fn netlist_spec_builds_and_rejects_unknown_kinds() {
        let mut spec = NetlistSpec {
            elements: vec![
                ElementSpec {
                    name: "V1".into(),
                    kind: "V".into(),
                    a: "in".into(),
                    b: "0".into(),
                    value: 1.0,
                    value_im: 0.0,
                },
                ElementSpec {
                    name: "R1".into(),
                    kind: "R".into(),
                    a: "in".into(),
                    b: "0".into(),
                    value: 50.0,
                    value_im: 0.0,
                },
            ],
            couplings: vec![],
            frequency: 1e3,
            probes: vec![],
        };
        let s = spec.build().unwrap().solve(1.0).unwrap();
        assert!((s.current("R1").unwrap() - c(0.02)).norm() < 1e-15);
        spec.elements[1].kind = "Q".into();
        assert!(matches!(spec.build(), Err(Error::Config(_))));
    }
}
