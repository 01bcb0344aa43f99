//! Plain-text formats: point and observation CSVs with `#` comment lines,
//! and flat `key = value` reports.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::PointSet;
use crate::likelihood::Observations;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Header columns and numeric rows of a comma-separated table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Source line of each row.
    pub lines: Vec<usize>,
    pub comments: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Read a numeric CSV: the first non-comment line is the header; empty
/// fields parse as NaN.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    parse_table(&text, path)
}

pub fn parse_table(text: &str, path: &Path) -> Result<Table> {
    let mut header: Option<Vec<String>> = None;
    let (mut rows, mut lines, mut comments) = (Vec::new(), Vec::new(), Vec::new());
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if let Some(c) = trimmed.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match &header {
            None => header = Some(fields.iter().map(|f| f.to_string()).collect()),
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(parse_err(path, line, format!("expected {} fields, found {}", h.len(), fields.len())));
                }
                let row = fields
                    .iter()
                    .map(|f| {
                        if f.is_empty() {
                            Ok(f64::NAN)
                        } else {
                            f.parse::<f64>().map_err(|_| parse_err(path, line, format!("not a number: {f:?}")))
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(row);
                lines.push(line);
            }
        }
    }
    let header = header.ok_or_else(|| parse_err(path, 1, "missing header"))?;
    Ok(Table {
        header,
        rows,
        lines,
        comments,
    })
}

fn require(table: &Table, name: &str, path: &Path) -> Result<Vec<f64>> {
    table
        .column(name)
        .ok_or_else(|| parse_err(path, 1, format!("missing column {name:?} (header: {})", table.header.join(","))))
}

fn finite_rows(table: &Table, cols: &[&str], path: &Path) -> Result<()> {
    for (k, row) in table.rows.iter().enumerate() {
        for name in cols {
            let j = table.header.iter().position(|h| h == name).expect("column checked");
            if !row[j].is_finite() {
                return Err(parse_err(path, table.lines[k], format!("{name} is not finite")));
            }
        }
    }
    Ok(())
}

/// Points from a CSV with columns `x,y` (other columns ignored).
pub fn read_points(path: &Path) -> Result<PointSet> {
    let table = read_table(path)?;
    let (x, y) = (require(&table, "x", path)?, require(&table, "y", path)?);
    finite_rows(&table, &["x", "y"], path)?;
    if x.is_empty() {
        return Err(parse_err(path, 1, "no data rows"));
    }
    PointSet::new(x.into_iter().zip(y).map(|(a, b)| [a, b]).collect())
}

/// Observations from a CSV with columns `x,y,z`.
pub fn read_observations(path: &Path) -> Result<Observations> {
    let table = read_table(path)?;
    let z = require(&table, "z", path)?;
    finite_rows(&table, &["z"], path)?;
    Observations::new(read_points(path)?, z)
}

/// CSV text with leading `# ` comment lines.
pub fn format_table(comments: &[String], header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    let _ = writeln!(out, "{}", header.join(","));
    for r in rows {
        let _ = writeln!(out, "{}", r.join(","));
    }
    out
}

pub fn format_observations(obs: &Observations, comments: &[String]) -> String {
    let rows: Vec<Vec<String>> = obs
        .points
        .coords()
        .iter()
        .zip(&obs.z)
        .map(|(p, z)| vec![p[0].to_string(), p[1].to_string(), z.to_string()])
        .collect();
    format_table(comments, &["x", "y", "z"], &rows)
}

/// Write `text` to `path`, or stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Ordered `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Report::default()
    }

    pub fn push(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    /// Comma-joined list value.
    pub fn push_list<T: Display>(&mut self, key: &str, values: &[T]) -> &mut Self {
        let joined = values.iter().map(T::to_string).collect::<Vec<_>>().join(",");
        self.push(key, joined)
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parse rendered text back into a map; `#` lines are skipped.
    pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Parse {
                path: "<report>".into(),
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(out)
    }
}

/// Comma-separated floats, e.g. a θ vector.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|_| Error::input(format!("not a number: {t:?} in {s:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn comments_and_header() {
        let t = parse_table("# seed = 3\nx,y,z\n1,2,3\n\n# mid\n4, 5 ,6\n", p()).unwrap();
        assert_eq!(t.header, ["x", "y", "z"]);
        assert_eq!(t.rows, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(t.comments, ["seed = 3", "mid"]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_table("# c\nx,y\n1,2\n1,oops\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err:?}");
        let err = parse_table("x,y\n1,2,3\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(parse_table("# only comments\n", p()).is_err());
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.csv");
        let pts = PointSet::new(vec![[0.1, 0.2], [1.0 / 3.0, 1e-17]]).unwrap();
        let obs = Observations::new(pts, vec![-0.5, std::f64::consts::PI]).unwrap();
        fs::write(&path, format_observations(&obs, &["kernel = matern32".into()])).unwrap();
        let back = read_observations(&path).unwrap();
        assert_eq!(back.points.coords(), obs.points.coords());
        assert_eq!(back.z, obs.z);
        assert_eq!(read_points(&path).unwrap().len(), 2);
    }

    #[test]
    fn missing_column_and_nonfinite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x,y\n1,2\n").unwrap();
        assert!(read_observations(&path).is_err());
        fs::write(&path, "x,y,z\n# gap\n1,2,\n").unwrap();
        assert!(matches!(read_observations(&path), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::new();
        r.push("loglik", -123.456789012345678f64).push_list("gradient", &[1e-300, -2.5]);
        let map = Report::parse(&r.render()).unwrap();
        assert_eq!(map["loglik"].parse::<f64>().unwrap(), -123.456789012345678);
        assert_eq!(parse_list(&map["gradient"]).unwrap(), vec![1e-300, -2.5]);
        assert!(Report::parse("nonsense").is_err());
        assert!(parse_list("1,x").is_err());
    }
}
