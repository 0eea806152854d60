//! Unnormalized CDFs, histograms, and their CSV and SVG renderings.

use std::fmt::Write as _;

use relpose_core::{Error, Result};

/// `(value, count of errors <= value)` at every distinct value, ascending.
pub fn cdf(errors: &[f64]) -> Result<Vec<(f64, usize)>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput { what: "errors".into() });
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFiniteValue { op: "cdf".into() });
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut points: Vec<(f64, usize)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        match points.last_mut() {
            Some(last) if last.0 == v => last.1 = i + 1,
            _ => points.push((v, i + 1)),
        }
    }
    Ok(points)
}

/// Points at or below `cutoff`; the count reached there is the mass kept.
pub fn truncate(points: &[(f64, usize)], cutoff: f64) -> Vec<(f64, usize)> {
    points.iter().copied().take_while(|&(v, _)| v <= cutoff).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Bins `[k w, (k+1) w)` from zero up to the largest error (or `cutoff`).
pub fn histogram(errors: &[f64], bin_width: f64, cutoff: Option<f64>) -> Result<Vec<Bin>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput { what: "errors".into() });
    }
    if !(bin_width > 0.0) {
        return Err(Error::Config {
            key: "bin_width".into(),
            msg: "must be positive".into(),
        });
    }
    let max = errors.iter().cloned().fold(0.0, f64::max);
    let top = cutoff.map_or(max, |c| c.min(max));
    let n_bins = ((top / bin_width).floor() as usize + 1).min(100_000);
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|k| Bin {
            start: k as f64 * bin_width,
            end: (k + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for &e in errors {
        if cutoff.is_some_and(|c| e > c) || e < 0.0 {
            continue;
        }
        let k = ((e / bin_width).floor() as usize).min(n_bins - 1);
        bins[k].count += 1;
    }
    Ok(bins)
}

pub fn cdf_csv(points: &[(f64, usize)]) -> String {
    let mut out = String::from("error,count\n");
    for (v, c) in points {
        let _ = writeln!(out, "{v},{c}");
    }
    out
}

pub fn histogram_csv(bins: &[Bin]) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.start, b.end, b.count);
    }
    out
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn frame(title: &str, x_label: &str, x_max: f64, y_max: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 2.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="middle">0</text>"#, y0 + 14.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="end">{x_max:.3}</text>"#, y0 + 14.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, (x0 + x1) / 2.0, H - 8.0);
    let _ = writeln!(s, r#"<text x="{}" y="{y1}" text-anchor="end">{y_max}</text>"#, x0 - 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{y0}" text-anchor="end">0</text>"#, x0 - 4.0);
    s
}

fn to_px(x: f64, y: f64, x_max: f64, y_max: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD / 2.0, PAD / 2.0);
    let fx = if x_max > 0.0 { x / x_max } else { 0.0 };
    let fy = if y_max > 0.0 { y / y_max } else { 0.0 };
    (x0 + fx * (x1 - x0), y0 - fy * (y0 - y1))
}

/// Step-line chart of an unnormalized CDF.
pub fn cdf_svg(points: &[(f64, usize)], title: &str, x_label: &str, x_max: Option<f64>) -> String {
    let x_max = x_max.unwrap_or_else(|| points.last().map_or(1.0, |p| p.0)).max(f64::MIN_POSITIVE);
    let y_max = points.last().map_or(0, |p| p.1) as f64;
    let mut s = frame(title, x_label, x_max, y_max);
    let mut path = Vec::new();
    let mut prev = 0.0;
    path.push(to_px(0.0, 0.0, x_max, y_max));
    for &(v, c) in points {
        path.push(to_px(v, prev, x_max, y_max));
        path.push(to_px(v, c as f64, x_max, y_max));
        prev = c as f64;
    }
    path.push(to_px(x_max, prev, x_max, y_max));
    let coords: Vec<String> = path.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#,
        coords.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(bins: &[Bin], title: &str, x_label: &str) -> String {
    let x_max = bins.last().map_or(1.0, |b| b.end);
    let y_max = bins.iter().map(|b| b.count).max().unwrap_or(0).max(1) as f64;
    let mut s = frame(title, x_label, x_max, y_max);
    for b in bins {
        let (xa, ya) = to_px(b.start, b.count as f64, x_max, y_max);
        let (xb, yb) = to_px(b.end, 0.0, x_max, y_max);
        let _ = writeln!(
            s,
            r#"<rect x="{xa:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="steelblue" stroke="white"/>"#,
            xb - xa,
            yb - ya
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Reads one numeric column from a CSV with a header row.
pub fn read_column(text: &str, column: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::EmptyInput { what: "errors CSV".into() })?;
    let idx = header
        .split(',')
        .position(|h| h.trim() == column)
        .ok_or_else(|| Error::ParseError {
            line: 1,
            msg: format!("no `{column}` column"),
        })?;
    lines
        .map(|(i, l)| {
            let field = l.split(',').nth(idx).unwrap_or("").trim();
            field.parse().map_err(|_| Error::ParseError {
                line: i + 1,
                msg: format!("`{field}` is not a number"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_counts() {
        let c = cdf(&[1.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(c, vec![(1.0, 1), (2.0, 3), (5.0, 4)]);
        assert!(matches!(cdf(&[]), Err(Error::EmptyInput { .. })));
    }

    #[test]
    fn truncation_keeps_mass_below_cutoff() {
        let errs: Vec<f64> = (0..200).map(|i| i as f64 * 0.2).collect();
        let c = truncate(&cdf(&errs).unwrap(), 30.0);
        assert_eq!(c.last().unwrap().1, errs.iter().filter(|&&e| e <= 30.0).count());
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.0, 0.5, 1.0, 2.5], 1.0, None).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 1, 1]);
        let h = histogram(&[0.0, 0.5, 1.0, 2.5], 1.0, Some(1.5)).unwrap();
        assert_eq!(h.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn column_reader() {
        let text = "scene,pair_id,rotation_deg\ns,0,1.5\ns,1,2\n";
        assert_eq!(read_column(text, "rotation_deg").unwrap(), vec![1.5, 2.0]);
        assert!(read_column(text, "missing").is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let c = cdf(&[1.0, 2.0]).unwrap();
        let s = cdf_svg(&c, "t", "x", None);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("polyline"));
    }
}
