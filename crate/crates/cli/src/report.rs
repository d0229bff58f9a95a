use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes `rows` as `<stem>.csv` / `<stem>.json` / `<stem>.svg` under `dir`.
/// `bars` supplies the plotted (label, value) pairs for SVG.
pub fn write_reports<T: Serialize>(
    rows: &[T],
    dir: &Path,
    stem: &str,
    formats: &[String],
    title: &str,
    bars: impl Fn(&T) -> (String, f64),
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for f in formats {
        let path = dir.join(format!("{stem}.{f}"));
        match f.as_str() {
            "csv" => {
                let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
                for r in rows {
                    w.serialize(r).map_err(|e| io_err(&path, e))?;
                }
                w.flush().map_err(|e| io_err(&path, e))?;
            }
            "json" => {
                let text = serde_json::to_string_pretty(rows).map_err(|e| io_err(&path, e))?;
                std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))?;
            }
            "svg" => {
                let data: Vec<(String, f64)> = rows.iter().map(&bars).collect();
                std::fs::write(&path, svg_bars(title, &data)).map_err(|e| io_err(&path, e))?;
            }
            other => return Err(CliError::Usage(format!("unknown format '{other}'"))),
        }
        written.push(path);
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Horizontal bars on a log10 axis; values must be positive to be drawn.
pub fn svg_bars(title: &str, data: &[(String, f64)]) -> String {
    const ROW: f64 = 22.0;
    const LEFT: f64 = 330.0;
    const WIDTH: f64 = 420.0;
    let top = 40.0;
    let height = top + ROW * data.len() as f64 + 30.0;
    let max = data
        .iter()
        .map(|d| d.1)
        .filter(|v| *v > 0.0)
        .fold(1.0f64, f64::max)
        .log10()
        .max(1.0)
        .ceil();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="12">"#,
        w = LEFT + WIDTH + 80.0
    );
    let _ = writeln!(
        s,
        r#"<text x="10" y="20" font-size="14">{}</text>"#,
        escape(title)
    );
    for decade in 0..=max as i32 {
        let x = LEFT + WIDTH * f64::from(decade) / max;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##,
            height - 30.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{decade}</text>"#,
            height - 12.0
        );
    }
    for (i, (label, v)) in data.iter().enumerate() {
        let y = top + ROW * i as f64;
        let len = if *v > 1.0 {
            WIDTH * v.log10() / max
        } else {
            0.0
        };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 15.0,
            escape(label)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{:.1}" width="{len:.1}" height="{:.1}" fill="#4c78a8"/>"##,
            y + 3.0,
            ROW - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{v:.3}</text>"#,
            LEFT + len + 4.0,
            y + 15.0
        );
    }
    s.push_str("</svg>\n");
    s
}
