//! Brute-force Neumann double line integral over circular filaments. It shares
//! nothing with the spectral solver beyond the geometry description.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sensor::{CoilPairGeometry, MU_0};

const MIN_SEPARATION: f64 = 1e-9;

/// Mutual inductance of two circular loops, both traversed counter-clockwise:
/// radius `a` centered at the origin and radius `b` centered at `(offset, 0, dz)`.
pub fn neumann_loop_pair(a: f64, b: f64, offset: f64, dz: f64, segments: usize) -> Result<f64> {
    if segments < 16 {
        return Err(Error::Domain("need at least 16 segments per loop".into()));
    }
    let in_plane = if offset >= a + b {
        offset - a - b
    } else if offset <= (a - b).abs() {
        (a - b).abs() - offset
    } else {
        0.0
    };
    if in_plane.hypot(dz) < MIN_SEPARATION {
        return Err(Error::Geometry(vec![format!(
            "overlapping filaments (radii {a:e}, {b:e}, offset {offset:e}, dz {dz:e})"
        )]));
    }
    let dtheta = 2.0 * PI / segments as f64;
    let angles: Vec<(f64, f64)> = (0..segments)
        .map(|k| ((k as f64 + 0.5) * dtheta).sin_cos())
        .collect();
    let mut sum = 0.0;
    for &(si, ci) in &angles {
        let (x1, y1) = (a * ci, a * si);
        let mut row = 0.0;
        for &(sj, cj) in &angles {
            let dx = offset + b * cj - x1;
            let dy = b * sj - y1;
            let r = (dx * dx + dy * dy + dz * dz).sqrt();
            row += (ci * cj + si * sj) / r;
        }
        sum += row;
    }
    Ok(MU_0 / (4.0 * PI) * a * b * dtheta * dtheta * sum)
}

/// Coil-pair mutual inductance from concentric filaments.
///
/// Each coil is split into `filaments_per_coil` equal radial bins, each bin
/// a single loop at its mid radius and the winding's mid height carrying an
/// equal share of the turns. The pickup sense follows the spectral solver
/// (mirror-wound pair), hence the sign flip relative to `neumann_loop_pair`.
pub fn neumann_oracle(
    g: &CoilPairGeometry,
    filaments_per_coil: usize,
    segments_per_loop: usize,
) -> Result<f64> {
    g.ensure_valid()?;
    if filaments_per_coil < 16 || segments_per_loop < 16 {
        return Err(Error::Domain(
            "filament and segment counts must be at least 16".into(),
        ));
    }
    let nf = filaments_per_coil as f64;
    let radii = |r1: f64, r2: f64| -> Vec<f64> {
        (0..filaments_per_coil)
            .map(|k| r1 + (k as f64 + 0.5) * (r2 - r1) / nf)
            .collect()
    };
    let exc = radii(g.r_e1, g.r_e2);
    let pick = radii(g.r_p1, g.r_p2);
    let dz = 0.5 * (g.l_p1 + g.l_p2) - 0.5 * (g.l_e1 + g.l_e2);
    let pairs: Vec<(f64, f64)> = exc
        .iter()
        .flat_map(|&a| pick.iter().map(move |&b| (a, b)))
        .collect();
    let parts = pairs
        .par_iter()
        .map(|&(a, b)| neumann_loop_pair(a, b, g.w, dz, segments_per_loop))
        .collect::<Result<Vec<f64>>>()?;
    let share = (g.n1 as f64 / nf) * (g.n2 as f64 / nf);
    Ok(-share * parts.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn far_coaxial_loops_match_dipole_limit() {
        let a = 5e-3;
        let d = 30.0 * a;
        let m = neumann_loop_pair(a, a, 0.0, d, 64).unwrap();
        let dipole = MU_0 * PI * a.powi(4) / (2.0 * d.powi(3));
        assert!(((m - dipole) / dipole).abs() < 0.02);
    }

    #[test]
    fn loop_order_does_not_matter() {
        let m12 = neumann_loop_pair(4e-3, 9e-3, 20e-3, 1e-3, 128).unwrap();
        let m21 = neumann_loop_pair(9e-3, 4e-3, 20e-3, -1e-3, 128).unwrap();
        assert!(((m12 - m21) / m12).abs() < 1e-12);
    }

    #[test]
    fn side_by_side_loops_couple_negatively() {
        let m = neumann_loop_pair(10e-3, 10e-3, 25e-3, 0.0, 128).unwrap();
        assert!(m < 0.0);
    }

    #[test]
    fn overlapping_filaments_are_rejected() {
        assert!(matches!(
            neumann_loop_pair(5e-3, 5e-3, 0.0, 0.0, 64),
            Err(Error::Geometry(_))
        ));
        let g = CoilPairGeometry {
            w: 0.0,
            ..Default::default()
        };
        assert!(neumann_oracle(&g, 16, 64).is_err());
    }

    #[test]
    fn counts_below_sixteen_are_rejected() {
        let g = CoilPairGeometry::default();
        assert!(neumann_oracle(&g, 8, 64).is_err());
        assert!(neumann_oracle(&g, 16, 8).is_err());
    }

    #[test]
    fn converges_with_segment_count() {
        let g = CoilPairGeometry::default();
        let coarse = neumann_oracle(&g, 16, 64).unwrap();
        let fine = neumann_oracle(&g, 16, 256).unwrap();
        assert!(((coarse - fine) / fine).abs() < 1e-6);
    }
}
