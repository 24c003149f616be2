use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

/// Reads whitespace-separated `x y z` lines. Blank lines and `#` comments
/// are skipped; columns past the third are ignored.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(path, &text)
}

pub(crate) fn parse_xyz(path: &Path, text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let vals = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() < 3 {
            return Err(err("expected three coordinates".into()));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite coordinate".into()));
        }
        points.push(Point::new(vals[0], vals[1], vals[2]));
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    PointCloud::new(id, points).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut s = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_extra_columns() {
        let c = parse_xyz(Path::new("a.xyz"), "# hdr\n1 2 3\n\n4 5 6 0.1 0.2\n").unwrap();
        assert_eq!(c.id(), "a");
        assert_eq!(c.points(), &[Point::new(1.0, 2.0, 3.0), Point::new(4.0, 5.0, 6.0)]);
    }

    #[test]
    fn malformed_lines() {
        for text in ["1 2\n", "1 2 x\n", "", "1 2 nan\n"] {
            assert!(matches!(
                parse_xyz(Path::new("a.xyz"), text),
                Err(Error::Parse { .. })
            ));
        }
        match parse_xyz(Path::new("a.xyz"), "1 2 3\n1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
