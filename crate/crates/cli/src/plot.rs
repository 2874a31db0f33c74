//! Deterministic SVG rendering of 2-D ellipses.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use safeloop_core::ellipsoid::boundary_points;
use safeloop_core::Ellipsoid;

use crate::error::CliError;

/// Boundary points per ellipse.
pub const SAMPLES: usize = 360;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 70.0;
const COLORS: [&str; 6] = [
    "#000000", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e",
];

pub struct PlotSet {
    pub label: String,
    pub set: Ellipsoid,
}

/// Projection of `e` onto coordinates `(i, j)`.
pub fn project_pair(e: &Ellipsoid, i: usize, j: usize) -> Result<Ellipsoid, CliError> {
    let n = e.dim();
    if i >= n || j >= n || i == j {
        return Err(CliError::Usage(format!(
            "--coords {i},{j} is not a pair of distinct coordinates below {n}"
        )));
    }
    let order: Vec<usize> = [i, j]
        .into_iter()
        .chain((0..n).filter(|k| *k != i && *k != j))
        .collect();
    let perm = DMatrix::from_fn(n, n, |r, c| if order[r] == c { 1.0 } else { 0.0 });
    let shape = &perm * e.shape() * perm.transpose();
    let center = &perm * e.center();
    let (p, _) = Ellipsoid::new(shape, center)?.project(2)?;
    Ok(p)
}

fn prepare(sets: &[PlotSet], coords: Option<(usize, usize)>) -> Result<Vec<Ellipsoid>, CliError> {
    sets.iter()
        .map(|s| match (coords, s.set.dim()) {
            (Some((i, j)), _) => project_pair(&s.set, i, j),
            (None, 2) => Ok(s.set.clone()),
            (None, n) => Err(CliError::Usage(format!(
                "`{}` has dimension {n}; plotting needs 2-D zeta_1, pass --coords 0,1 to project onto a coordinate pair",
                s.label
            ))),
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Round-number tick spacing giving about five ticks over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

pub fn render_svg(sets: &[PlotSet], coords: Option<(usize, usize)>) -> Result<String, CliError> {
    let shapes = prepare(sets, coords)?;
    let curves: Vec<Vec<DVector<f64>>> = shapes
        .iter()
        .map(|e| boundary_points(e, SAMPLES))
        .collect::<Result<_, _>>()?;

    let all = curves.iter().flatten();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    // Equal scaling on both axes, square box with 5% padding.
    let half = (0..2)
        .map(|k| (hi[k] - lo[k]) / 2.0)
        .fold(0.0, f64::max)
        .max(1e-12)
        * 1.05;
    let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let scale = (SIZE - 2.0 * MARGIN) / (2.0 * half);
    let px = |x: f64| MARGIN + (x - (mid[0] - half)) * scale;
    let py = |y: f64| SIZE - MARGIN - (y - (mid[1] - half)) * scale;
    let (ci, cj) = coords.unwrap_or((0, 1));

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#
    );
    let (x0, x1, y0, y1) = (MARGIN, SIZE - MARGIN, MARGIN, SIZE - MARGIN);
    let _ = writeln!(
        s,
        r##"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="#888888"/>"##,
        x1 - x0,
        y1 - y0
    );

    let step = tick_step(2.0 * half);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    for (axis, centre) in mid.iter().enumerate() {
        let first = ((centre - half) / step).ceil() as i64;
        let last = ((centre + half) / step).floor() as i64;
        for k in first..=last {
            let v = k as f64 * step;
            let label = format!("{v:.decimals$}");
            let label = if label
                .trim_start_matches('-')
                .chars()
                .all(|c| c == '0' || c == '.')
            {
                "0".to_owned()
            } else {
                label
            };
            if axis == 0 {
                let x = px(v);
                let _ = writeln!(
                    s,
                    r##"<line x1="{x:.3}" y1="{y1}" x2="{x:.3}" y2="{:.3}" stroke="#888888"/>"##,
                    y1 + 5.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle">{label}</text>"#,
                    y1 + 20.0
                );
            } else {
                let y = py(v);
                let _ = writeln!(
                    s,
                    r##"<line x1="{:.3}" y1="{y:.3}" x2="{x0}" y2="{y:.3}" stroke="#888888"/>"##,
                    x0 - 5.0
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.3}" y="{:.3}" text-anchor="end">{label}</text>"#,
                    x0 - 8.0,
                    y + 4.0
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">zeta_1[{ci}]</text>"#,
        SIZE / 2.0,
        SIZE - 20.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{0:.3}" text-anchor="middle" transform="rotate(-90 20 {0:.3})">zeta_1[{cj}]</text>"#,
        SIZE / 2.0
    );

    for (k, (curve, set)) in curves.iter().zip(sets).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut pts = String::new();
        for p in curve.iter().chain(curve.first()) {
            let _ = write!(pts, "{:.3},{:.3} ", px(p[0]), py(p[1]));
        }
        let dash = if k == 0 {
            r#" stroke-dasharray="6 3""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<polyline data-label="{}" points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
            escape(&set.label),
            pts.trim_end()
        );
    }

    let _ = writeln!(s, r#"<g class="legend">"#);
    for (k, set) in sets.iter().enumerate() {
        let y = MARGIN + 16.0 + 18.0 * k as f64;
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="{color}" stroke-width="2"/>"#,
            x0 + 10.0,
            x0 + 34.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}">{}</text>"#,
            x0 + 40.0,
            y + 4.0,
            escape(&set.label)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "</svg>");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circles() -> Vec<PlotSet> {
        vec![
            PlotSet {
                label: "safe set".into(),
                set: Ellipsoid::ball(2, 2.0),
            },
            PlotSet {
                label: "invariant set".into(),
                set: Ellipsoid::ball(2, 1.0),
            },
        ]
    }

    #[test]
    fn two_closed_polylines_with_labels() {
        let svg = render_svg(&circles(), None).unwrap();
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        assert_eq!(lines.len(), 2);
        for l in &lines {
            let pts = l
                .split("points=\"")
                .nth(1)
                .unwrap()
                .split('"')
                .next()
                .unwrap();
            let pts: Vec<&str> = pts.split(' ').collect();
            assert!(pts.len() > SAMPLES);
            assert_eq!(pts.first(), pts.last());
        }
        assert!(svg.contains("zeta_1[0]") && svg.contains("zeta_1[1]"));
        assert!(svg.contains("class=\"legend\""));
    }

    #[test]
    fn concentric_circles_share_a_center() {
        let svg = render_svg(&circles(), None).unwrap();
        let centroid = |l: &str| {
            let pts = l
                .split("points=\"")
                .nth(1)
                .unwrap()
                .split('"')
                .next()
                .unwrap();
            let v: Vec<(f64, f64)> = pts
                .split(' ')
                .take(SAMPLES)
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect();
            let n = v.len() as f64;
            (
                v.iter().map(|p| p.0).sum::<f64>() / n,
                v.iter().map(|p| p.1).sum::<f64>() / n,
            )
        };
        let lines: Vec<&str> = svg.lines().filter(|l| l.starts_with("<polyline")).collect();
        let (a, b) = (centroid(lines[0]), centroid(lines[1]));
        assert!((a.0 - b.0).abs() < 1e-2 && (a.1 - b.1).abs() < 1e-2);
    }

    #[test]
    fn output_is_deterministic() {
        assert_eq!(
            render_svg(&circles(), None).unwrap(),
            render_svg(&circles(), None).unwrap()
        );
    }

    #[test]
    fn higher_dimension_needs_coords() {
        let sets = vec![PlotSet {
            label: "s".into(),
            set: Ellipsoid::ball(3, 1.0),
        }];
        let err = render_svg(&sets, None).unwrap_err().to_string();
        assert!(err.contains("--coords 0,1"), "{err}");
        assert!(render_svg(&sets, Some((0, 2))).is_ok());
    }

    #[test]
    fn pair_projection_picks_coordinates() {
        let shape = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0, 9.0]));
        let e = Ellipsoid::new(shape, DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let p = project_pair(&e, 2, 0).unwrap();
        assert_eq!(p.shape()[(0, 0)], 9.0);
        assert_eq!(p.shape()[(1, 1)], 1.0);
        assert_eq!(p.center().as_slice(), &[3.0, 1.0]);
        assert!(project_pair(&e, 1, 1).is_err());
    }
}
