//! CSV tables and self-contained SVG line plots for evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::evaluate::BerCell;
use crate::error::Result;

pub const CSV_HEADER: &str = "method,tau,snr_db,ber,ci_low,ci_high,n_bits";

/// Render cells as CSV, one row per (method, tau, snr) in the given order.
/// Byte-stable for identical inputs.
pub fn cells_to_csv(cells: &[BerCell]) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for c in cells {
        let (lo, hi) = c.wilson();
        let _ = writeln!(
            out,
            "{},{},{},{:.6e},{:.6e},{:.6e},{}",
            c.method,
            c.tau,
            c.snr_db,
            c.ber(),
            lo,
            hi,
            c.bits
        );
    }
    out
}

pub fn write_csv(path: impl AsRef<Path>, cells: &[BerCell]) -> Result<()> {
    fs::write(path.as_ref(), cells_to_csv(cells))?;
    Ok(())
}

/// Minimal CSV reader for re-rendering plots from a written table.
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<PlotPoint>> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() < 7 {
            return Err(crate::error::Error::Config(format!(
                "{}: malformed CSV row {}",
                path.as_ref().display(),
                i + 1
            )));
        }
        out.push(PlotPoint {
            method: parts[0].to_string(),
            tau: parts[1].parse().map_err(|_| {
                crate::error::Error::Config(format!("bad tau in row {}", i + 1))
            })?,
            snr_db: parts[2].parse().map_err(|_| {
                crate::error::Error::Config(format!("bad snr in row {}", i + 1))
            })?,
            ber: parts[3].parse().map_err(|_| {
                crate::error::Error::Config(format!("bad ber in row {}", i + 1))
            })?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PlotPoint {
    pub method: String,
    pub tau: usize,
    pub snr_db: f64,
    pub ber: f64,
}

impl From<&BerCell> for PlotPoint {
    fn from(c: &BerCell) -> Self {
        PlotPoint {
            method: c.method.clone(),
            tau: c.tau,
            snr_db: c.snr_db,
            ber: c.ber(),
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// One log-y BER-vs-SNR line plot per tau, written as
/// `<prefix>_tau<tau>.svg`. Returns the written paths.
pub fn write_plots(
    dir: impl AsRef<Path>,
    prefix: &str,
    points: &[PlotPoint],
) -> Result<Vec<std::path::PathBuf>> {
    let mut taus: Vec<usize> = points.iter().map(|p| p.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    let mut written = Vec::new();
    for tau in taus {
        let subset: Vec<&PlotPoint> = points.iter().filter(|p| p.tau == tau).collect();
        let svg = render_svg(&subset, &format!("uncoded BER, tau = {tau}"));
        let path = dir.as_ref().join(format!("{prefix}_tau{tau}.svg"));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn render_svg(points: &[&PlotPoint], title: &str) -> String {
    let (w, h) = (560.0f64, 400.0f64);
    let (ml, mr, mt, mb) = (70.0f64, 20.0f64, 36.0f64, 48.0f64);
    let floor = 1e-6f64;

    let mut methods: Vec<String> = points.iter().map(|p| p.method.clone()).collect();
    methods.sort();
    methods.dedup();

    let snr_min = points.iter().map(|p| p.snr_db).fold(f64::INFINITY, f64::min);
    let snr_max = points
        .iter()
        .map(|p| p.snr_db)
        .fold(f64::NEG_INFINITY, f64::max);
    let (snr_min, snr_max) = if snr_min < snr_max {
        (snr_min, snr_max)
    } else {
        (snr_min - 1.0, snr_min + 1.0)
    };
    let log_min = floor.log10();
    let log_max = 0.0f64;

    let x = |snr: f64| ml + (snr - snr_min) / (snr_max - snr_min) * (w - ml - mr);
    let y = |ber: f64| {
        let v = ber.max(floor).log10().clamp(log_min, log_max);
        mt + (log_max - v) / (log_max - log_min) * (h - mt - mb)
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        w / 2.0
    );
    // grid and axes
    for dec in 0..=(-log_min as i64) {
        let v = 10f64.powi(-(dec as i32));
        let yy = y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{ml}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#dddddd"/>"##,
            w - mr
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">1e-{dec}</text>"#,
            ml - 6.0,
            yy + 4.0
        );
    }
    let n_ticks = 6usize;
    for i in 0..=n_ticks {
        let snr = snr_min + (snr_max - snr_min) * i as f64 / n_ticks as f64;
        let xx = x(snr);
        let _ = writeln!(
            svg,
            r##"<line x1="{xx:.1}" y1="{mt}" x2="{xx:.1}" y2="{:.1}" stroke="#eeeeee"/>"##,
            h - mb
        );
        let _ = writeln!(
            svg,
            r#"<text x="{xx:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{snr:.0}</text>"#,
            h - mb + 16.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        w - ml - mr,
        h - mt - mb
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">SNR (dB)</text>"#,
        (ml + w - mr) / 2.0,
        h - 10.0
    );

    for (mi, method) in methods.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| &p.method == method)
            .map(|p| (p.snr_db, p.ber))
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let path: Vec<String> = pts
            .iter()
            .map(|&(snr, ber)| format!("{:.1},{:.1}", x(snr), y(ber)))
            .collect();
        if path.len() > 1 {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                path.join(" ")
            );
        }
        for &(snr, ber) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x(snr),
                y(ber)
            );
        }
        let ly = mt + 16.0 + mi as f64 * 16.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - mr - 150.0,
            w - mr - 126.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{method}</text>"#,
            w - mr - 120.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(method: &str, tau: usize, snr: f64, errors: u64, bits: u64) -> BerCell {
        BerCell {
            method: method.into(),
            tau,
            snr_db: snr,
            errors,
            bits,
            skipped_slots: 0,
            slot_bers: vec![],
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(cells_to_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn row_counts_and_determinism() {
        let cells = vec![
            cell("zf_ul", 1, 10.0, 5, 100),
            cell("zf_ul", 1, 15.0, 2, 100),
            cell("zf_ul", 1, 20.0, 1, 100),
            cell("zf_genie", 1, 10.0, 0, 100),
            cell("zf_genie", 1, 15.0, 0, 100),
            cell("zf_genie", 1, 20.0, 0, 100),
        ];
        let a = cells_to_csv(&cells);
        let b = cells_to_csv(&cells);
        assert_eq!(a, b);
        assert_eq!(a.lines().count(), 7); // header + 6 data rows
    }

    #[test]
    fn csv_roundtrip_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let cells = vec![
            cell("zf_ul", 2, 10.0, 50, 1000),
            cell("zf_ul", 2, 20.0, 5, 1000),
            cell("zf_genie", 2, 10.0, 10, 1000),
            cell("zf_genie", 2, 20.0, 1, 1000),
        ];
        let csv_path = dir.path().join("ber.csv");
        write_csv(&csv_path, &cells).unwrap();
        let points = read_csv(&csv_path).unwrap();
        assert_eq!(points.len(), 4);
        assert!((points[0].ber - 0.05).abs() < 1e-12);
        let plots = write_plots(dir.path(), "ber", &points).unwrap();
        assert_eq!(plots.len(), 1);
        let svg = std::fs::read_to_string(&plots[0]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(svg.contains("zf_genie"));
    }

    #[test]
    fn wilson_sanity() {
        use super::super::evaluate::wilson_interval;
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi < 0.01);
        let (lo, hi) = wilson_interval(500, 1000);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(hi - lo < 0.07);
    }
}
