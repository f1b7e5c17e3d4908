//! Point-list files and atomic output.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use qbnb_core::PointCloud;

/// Parses a whitespace-separated point list. Blank lines and lines starting
/// with `#` are skipped; the dimension is taken from the first point.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if rows.is_empty() && looks_like_header(line) {
            bail!(
                "line {line_no}: this looks like a mesh header ({line:?}); only plain point lists are supported"
            );
        }
        let row = line
            .split_whitespace()
            .map(|tok| match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => bail!("line {line_no}: non-finite coordinate {tok:?}"),
                Err(_) => bail!("line {line_no}: cannot parse {tok:?} as a number"),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                bail!(
                    "line {line_no}: expected {} coordinates, found {}",
                    first.len(),
                    row.len()
                );
            }
        } else if row.len() != 2 && row.len() != 3 {
            bail!("line {line_no}: points must have 2 or 3 coordinates, found {}", row.len());
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("no points found");
    }
    Ok(PointCloud::new(&rows)?)
}

fn looks_like_header(line: &str) -> bool {
    let first = line.split_whitespace().next().unwrap_or("");
    matches!(
        first.to_ascii_lowercase().as_str(),
        "ply" | "format" | "element" | "property" | "end_header" | "off" | "comment"
    )
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_xyz(&text).with_context(|| format!("in {}", path.display()))
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for row in cloud.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blank_lines() {
        let c = parse_xyz("# header\n1 2 3\n\n  4 5 6  \n# tail\n").unwrap();
        assert_eq!(c.dim(), 3);
        assert_eq!(c.rows(), vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(parse_xyz("1 2\n3 4\n").unwrap().dim(), 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = format!("{:#}", parse_xyz("1 2 3\n# c\n1 2\n").unwrap_err());
        assert!(e.contains("line 3"), "{e}");
        let e = format!("{:#}", parse_xyz("1 2 3\n1 x 3\n").unwrap_err());
        assert!(e.contains("line 2") && e.contains("\"x\""), "{e}");
        let e = format!("{:#}", parse_xyz("1 2 3 4\n").unwrap_err());
        assert!(e.contains("line 1"), "{e}");
        assert!(parse_xyz("1 nan 3\n").is_err());
        assert!(parse_xyz("# nothing\n").is_err());
    }

    #[test]
    fn rejects_mesh_headers() {
        let e = format!("{:#}", parse_xyz("ply\nformat ascii 1.0\nelement vertex 3\n").unwrap_err());
        assert!(e.contains("mesh header"), "{e}");
    }

    #[test]
    fn format_round_trips() {
        let c = PointCloud::new(&[vec![0.1, 1.0 / 3.0, -2e-20], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(parse_xyz(&format_xyz(&c)).unwrap(), c);
    }
}
