//! Output files: provenance lines, histograms, entropy tables, SVG figures.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::mi_sweep::{write_grid_csv, MiGrid, PlateauReport};
use crate::numeric::fmt_exact;

/// Config hash and seed, embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!("config_sha256={} seed={}", self.config_sha256, self.seed)
    }
}

pub fn write_file(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)
}

pub fn write_grid(path: &Path, grid: &MiGrid, prov: &Provenance) -> std::io::Result<()> {
    let mut buf = Vec::new();
    write_grid_csv(grid, &[prov.line()], &mut buf)?;
    write_file(path, &buf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub density: f64,
}

/// Equal-width bins over the value range; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = values.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| {
            let b_lo = lo + i as f64 * width;
            let b_hi = if i + 1 == bins {
                hi
            } else {
                lo + (i + 1) as f64 * width
            };
            Bin {
                lo: b_lo,
                hi: b_hi,
                count,
                density: count as f64 / (total * width),
            }
        })
        .collect()
}

pub fn write_histogram(path: &Path, bins: &[Bin], prov: &Provenance) -> std::io::Result<()> {
    let mut out = String::new();
    writeln!(out, "# {}", prov.line()).unwrap();
    out.push_str("bin_lo,bin_hi,count,density\n");
    for b in bins {
        writeln!(
            out,
            "{},{},{},{}",
            fmt_exact(b.lo),
            fmt_exact(b.hi),
            b.count,
            fmt_exact(b.density)
        )
        .unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn write_entropy_table(
    path: &Path,
    rows: &[(String, f64)],
    prov: &Provenance,
) -> std::io::Result<()> {
    let mut out = String::new();
    writeln!(out, "# {}", prov.line()).unwrap();
    out.push_str("feature,value\n");
    for (f, v) in rows {
        writeln!(out, "{f},{}", fmt_exact(*v)).unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn write_plateaus(
    path: &Path,
    reports: &[PlateauReport],
    prov: &Provenance,
) -> std::io::Result<()> {
    #[derive(serde::Serialize)]
    struct Doc<'a> {
        config_sha256: &'a str,
        seed: u64,
        plateau: &'a [PlateauReport],
    }
    let doc = Doc {
        config_sha256: &prov.config_sha256,
        seed: prov.seed,
        plateau: reports,
    };
    let text = toml::to_string(&doc).map_err(std::io::Error::other)?;
    let mut f = BufWriter::new(fs::File::create(path)?);
    writeln!(f, "# {}", prov.line())?;
    f.write_all(text.as_bytes())?;
    f.flush()
}

fn color(mi: f64, max: f64) -> String {
    if mi < 0.0 {
        return "#d9534f".into();
    }
    let t = if max > 0.0 {
        (mi / max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        lerp(247.0, 8.0),
        lerp(251.0, 48.0),
        lerp(255.0, 107.0)
    )
}

/// Heatmap with past context on the vertical axis and future context on
/// the horizontal one.
pub fn heatmap_svg(grid: &MiGrid, prov: &Provenance) -> String {
    let size = 44.0;
    let margin = 60.0;
    let max_n = grid.cells.keys().map(|k| k.0).max().unwrap_or(0);
    let max_m = grid.cells.keys().map(|k| k.1).max().unwrap_or(0);
    let max_mi = grid.cells.values().map(|c| c.mi).fold(0.0, f64::max);
    let w = margin * 2.0 + size * (max_m + 1) as f64;
    let h = margin * 2.0 + size * (max_n + 1) as f64;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, "<!-- {} -->", prov.line()).unwrap();
    writeln!(
        s,
        r#"<text x="{margin}" y="20" font-size="14">MI (nats): {}</text>"#,
        grid.label
    )
    .unwrap();
    for (&(n, m), c) in &grid.cells {
        let x = margin + m as f64 * size;
        let y = margin + n as f64 * size;
        writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{size}" height="{size}" fill="{}" stroke="white"/>"#,
            color(c.mi, max_mi)
        )
        .unwrap();
        let ink = if max_mi > 0.0 && c.mi / max_mi > 0.55 {
            "white"
        } else {
            "black"
        };
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{:.2}</text>"#,
            x + size / 2.0,
            y + size / 2.0 + 4.0,
            c.mi
        )
        .unwrap();
    }
    for m in 0..=max_m {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{m}</text>"#,
            margin + (m as f64 + 0.5) * size,
            margin - 6.0
        )
        .unwrap();
    }
    for n in 0..=max_n {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{n}</text>"#,
            margin - 6.0,
            margin + (n as f64 + 0.5) * size + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">future words (m)</text>"#,
        w / 2.0,
        margin - 22.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">past words (n)</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// MI along the past row and future column, with dashed lines at the value
/// reached with the longest context on each axis.
pub fn curves_svg(grid: &MiGrid, report: &PlateauReport, prov: &Provenance) -> String {
    let (w, h, margin) = (520.0, 320.0, 50.0);
    let past: Vec<(usize, f64)> = grid
        .cells
        .iter()
        .filter(|(k, _)| k.1 == 0)
        .map(|(k, c)| (k.0, c.mi))
        .collect();
    let future: Vec<(usize, f64)> = grid
        .cells
        .iter()
        .filter(|(k, _)| k.0 == 0)
        .map(|(k, c)| (k.1, c.mi))
        .collect();
    let kmax = past
        .iter()
        .chain(&future)
        .map(|p| p.0)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let lo = past.iter().chain(&future).map(|p| p.1).fold(0.0, f64::min);
    let hi = past
        .iter()
        .chain(&future)
        .map(|p| p.1)
        .fold(f64::MIN_POSITIVE, f64::max);
    let px = |k: f64| margin + k / kmax * (w - 2.0 * margin);
    let py = |v: f64| h - margin - (v - lo) / (hi - lo) * (h - 2.0 * margin);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, "<!-- {} -->", prov.line()).unwrap();
    writeln!(
        s,
        r#"<text x="{margin}" y="20" font-size="14">{}: past scale {}, future scale {}</text>"#,
        grid.label, report.past_scale, report.future_scale
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{margin}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - margin,
        w - margin,
        h - margin
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{}" stroke="black"/>"#,
        h - margin
    )
    .unwrap();
    for (pts, colour, reference) in [
        (&past, "#1f77b4", report.past_reference.mi),
        (&future, "#ff7f0e", report.future_reference.mi),
    ] {
        let poly: Vec<String> = pts
            .iter()
            .map(|&(k, v)| format!("{:.2},{:.2}", px(k as f64), py(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            poly.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<line x1="{margin}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="{colour}" stroke-dasharray="5,4"/>"#,
            w - margin,
            y = py(reference)
        )
        .unwrap();
    }
    writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#1f77b4">past (n)</text>"##,
        w - margin - 60.0,
        margin
    )
    .unwrap();
    writeln!(
        s,
        r##"<text x="{}" y="{}" fill="#ff7f0e">future (m)</text>"##,
        w - margin - 60.0,
        margin + 14.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">context words</text>"#,
        w / 2.0,
        h - 14.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#,
        margin - 4.0,
        py(hi) + 4.0,
        hi
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{:.2}</text>"#,
        margin - 4.0,
        py(lo) + 4.0,
        lo
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}
