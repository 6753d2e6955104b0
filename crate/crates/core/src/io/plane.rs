//! Factor planes: two components plotted against each other, with both
//! variables' points, as an SVG and a CSV twin.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::classical_ca::CaDecomposition;
use crate::error::{contract, Error, Result};
use crate::whitening::PrincipalFunctions;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanePoint {
    pub label: String,
    pub coords: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPlane {
    pub axis_i: usize,
    pub axis_j: usize,
    pub x_points: Vec<PlanePoint>,
    pub y_points: Vec<PlanePoint>,
    pub score_ratios: [f64; 2],
    /// Optional polyline, e.g. an interpolation path.
    pub path: Vec<[f64; 2]>,
}

/// Principal coordinates (`σ_i · f_i`) of labelled points for every component.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSource {
    pub x: Vec<(String, Vec<f64>)>,
    pub y: Vec<(String, Vec<f64>)>,
    pub score_ratios: Vec<f64>,
}

impl PlaneSource {
    pub fn from_ca(ca: &CaDecomposition) -> Self {
        let scaled = |m: &crate::Matrix, labels: &[String]| {
            labels
                .iter()
                .enumerate()
                .map(|(r, l)| {
                    let coords = (0..ca.dim()).map(|k| m[(r, k)] * ca.sigmas[k]).collect();
                    (l.clone(), coords)
                })
                .collect()
        };
        Self {
            x: scaled(&ca.l_factors, &ca.x_labels),
            y: scaled(&ca.r_factors, &ca.y_labels),
            score_ratios: ca.score_ratios.clone(),
        }
    }

    /// Points from principal-function values. With `group_*` set, samples
    /// sharing a label collapse to their centroid (labels sorted).
    pub fn from_principal_functions(
        pf: &PrincipalFunctions,
        x_labels: &[String],
        y_labels: &[String],
        group_x: bool,
        group_y: bool,
    ) -> Result<Self> {
        let n = pf.f.cols();
        if x_labels.len() != n || y_labels.len() != n {
            return Err(contract(format!(
                "{n} samples but {} x labels and {} y labels",
                x_labels.len(),
                y_labels.len()
            )));
        }
        let sig = &pf.pic_diagonal;
        let points = |m: &crate::Matrix, labels: &[String], group: bool| -> Vec<(String, Vec<f64>)> {
            let value = |k: usize| -> Vec<f64> { (0..m.rows()).map(|i| m[(i, k)] * sig[i]).collect() };
            if !group {
                return (0..n).map(|k| (labels[k].clone(), value(k))).collect();
            }
            let mut acc: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
            for k in 0..n {
                let e = acc.entry(labels[k].as_str()).or_insert((vec![0.0; m.rows()], 0));
                for (s, v) in e.0.iter_mut().zip(value(k)) {
                    *s += v;
                }
                e.1 += 1;
            }
            acc.into_iter()
                .map(|(l, (s, c))| (l.to_string(), s.into_iter().map(|v| v / c as f64).collect()))
                .collect()
        };
        let inertia: Vec<f64> = sig.iter().map(|s| s * s).collect();
        let total: f64 = inertia.iter().sum();
        let score_ratios = inertia
            .iter()
            .map(|l| if total > 0.0 { l / total } else { 0.0 })
            .collect();
        Ok(Self {
            x: points(&pf.f, x_labels, group_x),
            y: points(&pf.g, y_labels, group_y),
            score_ratios,
        })
    }

    pub fn dim(&self) -> usize {
        self.score_ratios.len()
    }
}

pub fn export_factor_plane(src: &PlaneSource, i: usize, j: usize) -> Result<FactorPlane> {
    let d = src.dim();
    for idx in [i, j] {
        if idx >= d {
            return Err(Error::IndexOutOfRange {
                what: "component",
                index: idx,
                len: d,
            });
        }
    }
    if i == j {
        return Err(contract("a factor plane needs two different components"));
    }
    let project = |pts: &[(String, Vec<f64>)]| -> Result<Vec<PlanePoint>> {
        pts.iter()
            .map(|(l, c)| {
                let coords = [c[i], c[j]];
                if coords.iter().all(|v| v.is_finite()) {
                    Ok(PlanePoint {
                        label: l.clone(),
                        coords,
                    })
                } else {
                    Err(contract(format!("non-finite coordinate for {l:?}")))
                }
            })
            .collect()
    };
    Ok(FactorPlane {
        axis_i: i,
        axis_j: j,
        x_points: project(&src.x)?,
        y_points: project(&src.y)?,
        score_ratios: [src.score_ratios[i].clamp(0.0, 1.0), src.score_ratios[j].clamp(0.0, 1.0)],
        path: Vec::new(),
    })
}

const SIZE: f64 = 640.0;
const MARGIN: f64 = 60.0;
/// Above this many x points their labels are not drawn.
const MAX_LABELLED: usize = 60;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Deterministic SVG: dashed axes through the origin, x points as circles,
/// y points as labelled squares, optional path as a polyline.
pub fn render_svg(plane: &FactorPlane) -> String {
    let extent = plane
        .x_points
        .iter()
        .chain(&plane.y_points)
        .flat_map(|p| p.coords)
        .chain(plane.path.iter().flatten().copied())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let extent = if extent > 0.0 { extent * 1.1 } else { 1.0 };
    let half = (SIZE - 2.0 * MARGIN) / 2.0;
    let centre = SIZE / 2.0;
    let px = |v: f64| centre + v / extent * half;
    let py = |v: f64| centre - v / extent * half;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let (lo, hi) = (MARGIN, SIZE - MARGIN);
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{lo}" y1="{centre}" x2="{hi}" y2="{centre}" stroke="#555" stroke-dasharray="6 4"/>"##
    );
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{centre}" y1="{lo}" x2="{centre}" y2="{hi}" stroke="#555" stroke-dasharray="6 4"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">Component {} ({:.1}%)</text>"#,
        centre,
        SIZE - MARGIN / 3.0,
        plane.axis_i + 1,
        plane.score_ratios[0] * 100.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">Component {} ({:.1}%)</text>"#,
        MARGIN / 3.0,
        centre,
        MARGIN / 3.0,
        centre,
        plane.axis_j + 1,
        plane.score_ratios[1] * 100.0
    );
    let label_x = plane.x_points.len() <= MAX_LABELLED;
    for p in &plane.x_points {
        let (cx, cy) = (px(p.coords[0]), py(p.coords[1]));
        let _ = writeln!(
            s,
            r##"<circle class="x-point" cx="{cx:.3}" cy="{cy:.3}" r="3" fill="#1f77b4" fill-opacity="0.6"/>"##
        );
        if label_x {
            let _ = writeln!(
                s,
                r##"<text x="{:.3}" y="{:.3}" fill="#1f77b4">{}</text>"##,
                cx + 5.0,
                cy - 4.0,
                escape(&p.label)
            );
        }
    }
    for p in &plane.y_points {
        let (cx, cy) = (px(p.coords[0]), py(p.coords[1]));
        let _ = writeln!(
            s,
            r##"<rect class="y-point" x="{:.3}" y="{:.3}" width="8" height="8" fill="#d62728"/>"##,
            cx - 4.0,
            cy - 4.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.3}" y="{:.3}" fill="#d62728">{}</text>"##,
            cx + 6.0,
            cy + 12.0,
            escape(&p.label)
        );
    }
    if !plane.path.is_empty() {
        let pts: Vec<String> = plane
            .path
            .iter()
            .map(|c| format!("{:.3},{:.3}", px(c[0]), py(c[1])))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="path" points="{}" fill="none" stroke="#ff7f0e" stroke-width="2"/>"##,
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

/// CSV twin with rows `kind,label,first,second`; `kind` is one of
/// `axes`, `ratios`, `x`, `y`, `path`.
pub fn plane_to_csv(plane: &FactorPlane) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(["kind", "label", "first", "second"]).map_err(io)?;
    w.write_record(["axes", "", &plane.axis_i.to_string(), &plane.axis_j.to_string()])
        .map_err(io)?;
    w.write_record([
        "ratios",
        "",
        &plane.score_ratios[0].to_string(),
        &plane.score_ratios[1].to_string(),
    ])
    .map_err(io)?;
    for (kind, pts) in [("x", &plane.x_points), ("y", &plane.y_points)] {
        for p in pts {
            w.write_record([kind, &p.label, &p.coords[0].to_string(), &p.coords[1].to_string()])
                .map_err(io)?;
        }
    }
    for c in &plane.path {
        w.write_record(["path", "", &c[0].to_string(), &c[1].to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn plane_from_csv(text: &str) -> Result<FactorPlane> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |line: usize, m: String| Error::Parse {
        path: "factor plane".into(),
        line,
        message: m,
    };
    let mut plane = FactorPlane {
        axis_i: 0,
        axis_j: 0,
        x_points: Vec::new(),
        y_points: Vec::new(),
        score_ratios: [0.0; 2],
        path: Vec::new(),
    };
    let mut saw_axes = false;
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 4 {
            return Err(bad(line, format!("expected 4 fields, found {}", rec.len())));
        }
        let num = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(line, format!("{:?} is not a number", &rec[k])));
        match &rec[0] {
            "axes" => {
                let idx = |k: usize| rec[k].parse::<usize>().map_err(|_| bad(line, "bad axis index".into()));
                plane.axis_i = idx(2)?;
                plane.axis_j = idx(3)?;
                saw_axes = true;
            }
            "ratios" => plane.score_ratios = [num(2)?, num(3)?],
            "x" | "y" => {
                let p = PlanePoint {
                    label: rec[1].to_string(),
                    coords: [num(2)?, num(3)?],
                };
                if &rec[0] == "x" {
                    plane.x_points.push(p);
                } else {
                    plane.y_points.push(p);
                }
            }
            "path" => plane.path.push([num(2)?, num(3)?]),
            other => return Err(bad(line, format!("unknown row kind {other:?}"))),
        }
    }
    if !saw_axes {
        return Err(bad(1, "missing axes row".into()));
    }
    Ok(plane)
}

/// Mean coordinates per label and the pooled within-label standard
/// deviation (root mean squared distance to the own centroid).
pub fn label_centroids(points: &[PlanePoint]) -> (BTreeMap<String, [f64; 2]>, BTreeMap<String, f64>) {
    let mut sums: BTreeMap<String, ([f64; 2], usize)> = BTreeMap::new();
    for p in points {
        let e = sums.entry(p.label.clone()).or_insert(([0.0; 2], 0));
        e.0[0] += p.coords[0];
        e.0[1] += p.coords[1];
        e.1 += 1;
    }
    let centroids: BTreeMap<String, [f64; 2]> = sums
        .iter()
        .map(|(l, (s, c))| (l.clone(), [s[0] / *c as f64, s[1] / *c as f64]))
        .collect();
    let mut spread: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for p in points {
        let c = centroids[&p.label];
        let e = spread.entry(p.label.clone()).or_insert((0.0, 0));
        e.0 += (p.coords[0] - c[0]).powi(2) + (p.coords[1] - c[1]).powi(2);
        e.1 += 1;
    }
    let stds = spread
        .into_iter()
        .map(|(l, (s, c))| (l, (s / c as f64).sqrt()))
        .collect();
    (centroids, stds)
}
