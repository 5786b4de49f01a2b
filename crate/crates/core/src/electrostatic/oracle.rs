//! Parallel-plate cross-sections with a closed-form answer.
//!
//! The plates span the full domain width and the side walls carry zero
//! normal flux, so the field between them is exactly uniform: the cross
//! section is an ideal capacitor with no fringing.

use super::grid::{Operator, FREE};
use super::DEFAULT_CELL;
use crate::error::{Error, Result};
use crate::sensor::EPS_0;

/// Numerical and closed-form capacitance per unit length (F/m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorCheck {
    pub numeric: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

/// Uniform dielectric `eps_r` between plates `width` wide and `gap` apart,
/// on the default cell size.
pub fn analytic_capacitor_check(width: f64, gap: f64, eps_r: f64) -> Result<CapacitorCheck> {
    layered_capacitor_check(width, gap, (eps_r, eps_r), 0.5, DEFAULT_CELL)
}

/// Two dielectrics in series: `eps.0` below `interface * gap`, `eps.1`
/// above. The interface need not fall on a grid row.
pub fn layered_capacitor_check(
    width: f64,
    gap: f64,
    eps: (f64, f64),
    interface: f64,
    cell: f64,
) -> Result<CapacitorCheck> {
    if !(width > 0.0 && gap > 0.0 && cell > 0.0) {
        return Err(Error::Domain("width, gap and cell must be positive".into()));
    }
    if width / gap < 10.0 {
        return Err(Error::Domain(format!(
            "width/gap = {} is below 10",
            width / gap
        )));
    }
    if !(eps.0 >= 1.0 && eps.1 >= 1.0) || !(0.0..=1.0).contains(&interface) {
        return Err(Error::Domain(
            "need eps_r >= 1 and interface in [0, 1]".into(),
        ));
    }
    let cells = |len: f64| -> Result<usize> {
        let n = len / cell;
        if (n - n.round()).abs() > 1e-6 || n.round() < 1.0 {
            return Err(Error::Domain(format!(
                "{len} m is not a whole number of {cell} m cells"
            )));
        }
        Ok(n.round() as usize)
    };
    let nx = cells(width)? + 1;
    let ny = cells(gap)? + 1;
    let y_if = interface * gap;
    let mut eps_cell = vec![0.0; (nx - 1) * (ny - 1)];
    for j in 0..ny - 1 {
        let y0 = j as f64 * cell;
        let below = ((y_if - y0) / cell).clamp(0.0, 1.0);
        let e = below * eps.0 + (1.0 - below) * eps.1;
        for i in 0..nx - 1 {
            eps_cell[j * (nx - 1) + i] = e;
        }
    }
    let mut label = vec![FREE; nx * ny];
    for i in 0..nx {
        label[i] = 0;
        label[(ny - 1) * nx + i] = 1;
    }
    let op = Operator::new(nx, ny, &eps_cell, label, 2);
    let s = op.solve(&[0.0, 1.0], 1e-12, 100_000)?;
    let numeric = op.conductor_flux(&s.phi)[1] * EPS_0;
    let d0 = interface * gap;
    let d1 = gap - d0;
    let analytic = EPS_0 * width / (d0 / eps.0 + d1 / eps.1);
    Ok(CapacitorCheck {
        numeric,
        analytic,
        rel_error: ((numeric - analytic) / analytic).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ideal_plates_match_formula() {
        let c = analytic_capacitor_check(20e-3, 1e-3, 1.0).unwrap();
        assert!(c.rel_error < 1e-9, "{c:?}");
    }

    #[test]
    fn uniform_dielectric_scales_exactly() {
        let a = analytic_capacitor_check(20e-3, 1e-3, 1.0).unwrap();
        let b = analytic_capacitor_check(20e-3, 1e-3, 4.4).unwrap();
        assert!((b.numeric / a.numeric - 4.4).abs() < 1e-9);
    }

    #[test]
    fn narrow_plates_are_rejected() {
        assert!(analytic_capacitor_check(5e-3, 1e-3, 1.0).is_err());
    }

    #[test]
    fn off_grid_interface_error_shrinks_with_refinement() {
        let errs: Vec<f64> = [0.25e-3, 0.125e-3, 0.0625e-3]
            .iter()
            .map(|&h| {
                layered_capacitor_check(20e-3, 1e-3, (4.4, 1.0), 1.0 / 3.0, h)
                    .unwrap()
                    .rel_error
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }
}
