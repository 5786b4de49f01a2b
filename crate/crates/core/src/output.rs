//! CSV and SVG emitters. Every file starts with `#` comment lines carrying
//! the configuration hash, solver settings and estimate flags; numbers are
//! written with 12 significant digits in exponent form.

use std::fmt::Write as _;
use std::path::Path;

use crate::electrostatic::{CapacitanceMatrix, FieldMap, SensitivityMap};
use crate::error::{Error, Result};
use crate::scenarios::{Channel, ScenarioResult};

/// Provenance written at the top of every file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Provenance {
    pub generator: String,
    pub config_hash: String,
    pub solver_settings: Vec<(String, String)>,
    pub estimate_flags: Vec<String>,
    pub extra: Vec<(String, String)>,
}

impl Provenance {
    pub fn header(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# generator: {}", self.generator);
        let _ = writeln!(s, "# config_sha256: {}", self.config_hash);
        let settings: Vec<String> = self
            .solver_settings
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let _ = writeln!(s, "# solver: {}", settings.join(" "));
        let flags = if self.estimate_flags.is_empty() {
            "none".to_string()
        } else {
            self.estimate_flags.join(",")
        };
        let _ = writeln!(s, "# estimates: {flags}");
        for (k, v) in &self.extra {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s
    }
}

/// Locale-independent number with 12 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn csv_body(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Header row of scenario files.
pub const SCENARIO_COLUMNS: [&str; 7] = [
    "sweep_value",
    "mode",
    "re_V",
    "im_V",
    "C_m_F",
    "V_normalized",
    "flags",
];

pub fn scenario_provenance(r: &ScenarioResult) -> Provenance {
    Provenance {
        generator: format!("dualem {} scenario {}", env!("CARGO_PKG_VERSION"), r.kind),
        config_hash: r.metadata.config_hash.clone(),
        solver_settings: r.metadata.solver_settings.clone(),
        estimate_flags: r.metadata.estimate_flags.clone(),
        extra: vec![
            ("sweep".to_string(), r.sweep_label.clone()),
            (
                "normalization".to_string(),
                r.normalization.name().to_string(),
            ),
        ],
    }
}

/// One row per sweep point and channel.
pub fn scenario_csv(r: &ScenarioResult) -> Result<String> {
    let mut rows = Vec::new();
    for p in &r.points {
        for reading in &p.readings {
            rows.push(vec![
                num(p.sweep_value),
                reading.channel.name().to_string(),
                num(reading.v.re),
                num(reading.v.im),
                p.c_m.map(num).unwrap_or_default(),
                num(reading.normalized),
                p.flags.join(";"),
            ]);
        }
    }
    Ok(scenario_provenance(r).header() + &csv_body(&SCENARIO_COLUMNS, &rows)?)
}

pub fn capacitance_matrix_csv(m: &CapacitanceMatrix, prov: &Provenance) -> Result<String> {
    let mut header = vec!["segment"];
    header.extend(m.names.iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..m.len())
        .map(|i| {
            let mut r = vec![m.names[i].clone()];
            r.extend(m.maxwell[i].iter().map(|&c| num(c)));
            r
        })
        .collect();
    Ok(prov.header() + &csv_body(&header, &rows)?)
}

pub fn field_csv(f: &FieldMap, prov: &Provenance) -> Result<String> {
    let mut rows = Vec::with_capacity(f.nx * f.ny);
    for j in 0..f.ny {
        for i in 0..f.nx {
            rows.push(vec![
                num(f.node_x(i)),
                num(f.node_y(j)),
                num(f.potential_at(i, j)),
            ]);
        }
    }
    Ok(prov.header() + &csv_body(&["x_m", "y_m", "potential_V"], &rows)?)
}

pub fn sensitivity_csv(s: &SensitivityMap, prov: &Provenance) -> Result<String> {
    let mut rows = Vec::with_capacity(s.nx_cells * s.ny_cells);
    for j in 0..s.ny_cells {
        for i in 0..s.nx_cells {
            let (x, y) = s.cell_center(i, j);
            rows.push(vec![num(x), num(y), num(s.value(i, j))]);
        }
    }
    Ok(prov.header() + &csv_body(&["x_m", "y_m", "sensitivity"], &rows)?)
}

/// Generic table with a provenance header.
pub fn table_csv(header: &[&str], rows: &[Vec<String>], prov: &Provenance) -> Result<String> {
    Ok(prov.header() + &csv_body(header, rows)?)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Normalized channel values against the sweep axis, one polyline per channel.
pub fn scenario_svg(r: &ScenarioResult) -> String {
    let series: Vec<(Channel, Vec<(f64, f64)>)> = [Channel::Differential, Channel::Common]
        .into_iter()
        .filter_map(|ch| {
            let pts: Vec<(f64, f64)> = r
                .points
                .iter()
                .filter_map(|p| p.reading(ch).map(|rd| (p.sweep_value, rd.normalized)))
                .collect();
            (!pts.is_empty()).then_some((ch, pts))
        })
        .collect();
    let title = format!("{} ({} normalization)", r.kind, r.normalization.name());
    line_plot(&title, &r.sweep_label, "V_normalized", &series)
}

fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(Channel, Vec<(f64, f64)>)],
) -> String {
    let (w, h, pad) = (640.0, 420.0, 60.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#,
        w / 2.0
    );
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">{y_label}</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (v, anchor, x, y) in [
        (x0, "middle", sx(x0), h - pad + 15.0),
        (x1, "middle", sx(x1), h - pad + 15.0),
        (y0, "end", pad - 5.0, sy(y0)),
        (y1, "end", pad - 5.0, sy(y1)),
    ] {
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.4}</text>"#
        );
    }
    for (k, (ch, pts)) in series.iter().enumerate() {
        let color = if k == 0 { "#1f77b4" } else { "#d62728" };
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            w - pad - 90.0,
            pad + 15.0 * k as f64,
            ch.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
