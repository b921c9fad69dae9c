//! Text formats for graphs and fields, and writers for run outputs.
//!
//! Graph files start with a header `vertices N r R` followed by one
//! `i j w` edge per line. Field files hold `i value` (two classes) or
//! `i v1 .. vK` per vertex. Lines starting with `#` are comments. Floats are
//! written with 17 significant digits so that parsing restores them exactly.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{Edge, Field, Graph};
use crate::multiclass::SimplexField;
use crate::trajectory::{LogEntry, McLogEntry};

/// Multi-class rows may deviate from one by this much before renormalising.
const ROW_SUM_TOL: f64 = 1e-8;

pub const LOG_HEADER: &str = "step,mass,H,H_tau,GL,max_change,multiplier";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, trimmed.split_whitespace().collect()))
        }
    })
}

fn parse_num<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{token}'")))
}

fn parse_float(token: &str, line: usize, what: &str) -> Result<f64> {
    let x: f64 = parse_num(token, line, what)?;
    if !x.is_finite() {
        return Err(parse_err(line, format!("non-finite {what} '{token}'")));
    }
    Ok(x)
}

pub fn parse_graph_str(text: &str) -> Result<Graph> {
    let mut lines = content_lines(text);
    let (line, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header 'vertices N r R'"))?;
    if header.len() != 4 || header[0] != "vertices" || header[2] != "r" {
        return Err(parse_err(line, "expected header 'vertices N r R'"));
    }
    let n: usize = parse_num(header[1], line, "vertex count")?;
    let r = parse_float(header[3], line, "exponent")?;

    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    for (line, tokens) in lines {
        if tokens.len() != 3 {
            return Err(parse_err(line, "expected 'i j w'"));
        }
        let i: usize = parse_num(tokens[0], line, "vertex index")?;
        let j: usize = parse_num(tokens[1], line, "vertex index")?;
        let w: f64 = parse_num(tokens[2], line, "weight")?;
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(Error::DuplicateEdge { i, j });
        }
        edges.push(Edge::new(i, j, w));
    }
    Graph::new(n, &edges, r)
}

pub fn parse_graph_file(path: impl AsRef<Path>) -> Result<Graph> {
    parse_graph_str(&fs::read_to_string(path)?)
}

/// Rows indexed by vertex, each with `width` values.
fn parse_rows(text: &str, n: usize, width: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut rows: Vec<Option<(usize, Vec<f64>)>> = vec![None; n];
    for (line, tokens) in content_lines(text) {
        if tokens.len() != width + 1 {
            return Err(parse_err(
                line,
                format!("expected a vertex index and {width} value(s)"),
            ));
        }
        let i: usize = parse_num(tokens[0], line, "vertex index")?;
        if i >= n {
            return Err(Error::IndexOutOfRange {
                index: i,
                num_vertices: n,
            });
        }
        if rows[i].is_some() {
            return Err(parse_err(line, format!("vertex {i} listed twice")));
        }
        let values = tokens[1..]
            .iter()
            .map(|t| parse_float(t, line, "value"))
            .collect::<Result<Vec<_>>>()?;
        rows[i] = Some((line, values));
    }
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or(Error::MissingVertex(i)))
        .collect()
}

pub fn parse_field_str(text: &str, g: &Graph) -> Result<Field> {
    let rows = parse_rows(text, g.num_vertices(), 1)?;
    let mut values = Vec::with_capacity(rows.len());
    for (i, (_, v)) in rows.into_iter().enumerate() {
        if !(0.0..=1.0).contains(&v[0]) {
            return Err(Error::DomainViolation {
                index: i,
                value: v[0],
            });
        }
        values.push(v[0]);
    }
    Ok(Field::new(values))
}

pub fn parse_field_file(path: impl AsRef<Path>, g: &Graph) -> Result<Field> {
    parse_field_str(&fs::read_to_string(path)?, g)
}

/// Rows must sum to one within `1e-8`; they are then rescaled.
pub fn parse_simplex_str(text: &str, g: &Graph, num_classes: usize) -> Result<SimplexField> {
    let rows = parse_rows(text, g.num_vertices(), num_classes)?;
    let mut m = DMatrix::zeros(rows.len(), num_classes);
    for (i, (line, v)) in rows.into_iter().enumerate() {
        if let Some(&x) = v.iter().find(|&&x| x < 0.0) {
            return Err(Error::DomainViolation { index: i, value: x });
        }
        let sum: f64 = v.iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOL) {
            return Err(parse_err(
                line,
                format!("row for vertex {i} sums to {sum}, expected 1"),
            ));
        }
        for (k, x) in v.into_iter().enumerate() {
            m[(i, k)] = x;
        }
    }
    SimplexField::normalized(m)
}

pub fn parse_simplex_file(
    path: impl AsRef<Path>,
    g: &Graph,
    num_classes: usize,
) -> Result<SimplexField> {
    parse_simplex_str(&fs::read_to_string(path)?, g, num_classes)
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_graph(g: &Graph) -> String {
    let mut out = format!("vertices {} r {}\n", g.num_vertices(), fmt_float(g.r()));
    for e in g.edges() {
        let _ = writeln!(out, "{} {} {}", e.i, e.j, fmt_float(e.weight));
    }
    out
}

pub fn format_field(u: &[f64]) -> String {
    let mut out = String::new();
    for (i, x) in u.iter().enumerate() {
        let _ = writeln!(out, "{i} {}", fmt_float(*x));
    }
    out
}

pub fn format_simplex(u: &SimplexField) -> String {
    let mut out = String::new();
    for (i, row) in u.values().row_iter().enumerate() {
        let _ = write!(out, "{i}");
        for x in row.iter() {
            let _ = write!(out, " {}", fmt_float(*x));
        }
        out.push('\n');
    }
    out
}

pub fn format_log_csv(log: &[LogEntry]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for e in log {
        let multiplier = e.multiplier.map(fmt_float).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.step,
            fmt_float(e.mass),
            fmt_float(e.h),
            fmt_float(e.h_tau),
            fmt_float(e.gl),
            fmt_float(e.max_change),
            multiplier
        );
    }
    out
}

pub fn format_multiclass_log_csv(log: &[McLogEntry]) -> String {
    let k = log.first().map_or(0, |e| e.class_masses.len());
    let mut out = String::from("step");
    for c in 0..k {
        let _ = write!(out, ",mass_{c}");
    }
    out.push_str(",W,GL,max_change,residual,iterations,converged\n");
    for e in log {
        let _ = write!(out, "{}", e.step);
        for m in &e.class_masses {
            let _ = write!(out, ",{}", fmt_float(*m));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{},{}",
            fmt_float(e.potential),
            fmt_float(e.gl),
            fmt_float(e.max_change),
            fmt_float(e.residual),
            e.iterations,
            e.converged
        );
    }
    out
}

/// `{"mode": .., "params": .., "rows": ..}`, pretty-printed with sorted keys.
pub fn format_report(mode: &str, params: &impl Serialize, rows: &impl Serialize) -> Result<String> {
    let value = json!({
        "mode": mode,
        "params": serde_json::to_value(params)?,
        "rows": serde_json::to_value(rows)?,
    });
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_text(dir: impl AsRef<Path>, name: &str, contents: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p2() -> Graph {
        parse_graph_str("vertices 2 r 0\n0 1 1.0").unwrap()
    }

    #[test]
    fn graph_files() {
        let g = p2();
        assert_eq!(g.num_vertices(), 2);
        assert_eq!(g.r(), 0.0);
        assert_eq!(g.degrees(), &[1.0, 1.0]);

        let g = parse_graph_str("# comment\n\nvertices 3 r 0.5\n0 1 2\n# x\n1 2 1\n").unwrap();
        assert_eq!(g.edges().len(), 2);

        assert!(matches!(
            parse_graph_str("vertices 2 r 0\n0 0 1.0"),
            Err(Error::SelfLoop(0))
        ));
        assert!(matches!(
            parse_graph_str("vertices 2 r 0\n0 1 -1"),
            Err(Error::NonPositiveWeight { .. })
        ));
        assert!(matches!(
            parse_graph_str("vertices 2 r 0\n0 1 1\n1 0 2"),
            Err(Error::DuplicateEdge { .. })
        ));
        assert!(matches!(
            parse_graph_str("0 1 1.0"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_graph_str("vertices 2 r 0\n0 1 x"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn field_files() {
        let g = p2();
        let u = parse_field_str("0 1.0\n1 0.0", &g).unwrap();
        assert_eq!(u.values(), &[1.0, 0.0]);
        assert!(matches!(
            parse_field_str("0 1.0", &g),
            Err(Error::MissingVertex(1))
        ));
        assert!(matches!(
            parse_field_str("0 1.5\n1 0", &g),
            Err(Error::DomainViolation { index: 0, .. })
        ));
        assert!(matches!(
            parse_field_str("0 1\n0 0", &g),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn simplex_files() {
        let g = p2();
        let u = parse_simplex_str("0 0.5 0.5\n1 1 0", &g, 2).unwrap();
        assert_eq!(u.values()[(0, 0)], 0.5);
        assert_eq!(u.values()[(1, 0)], 1.0);
        let err = parse_simplex_str("0 0.5 0.4\n1 1 0", &g, 2).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        assert!(err.to_string().contains("vertex 0"));
    }

    #[test]
    fn round_trip_is_exact() {
        let g = parse_graph_str("vertices 3 r 1\n0 1 0.1\n1 2 0.7\n").unwrap();
        let u = Field::new(vec![0.1 + 0.2, 1.0 / 3.0, 5e-324]);
        let back = parse_field_str(&format_field(&u), &g).unwrap();
        assert_eq!(back, u);

        let h = parse_graph_str(&format_graph(&g)).unwrap();
        assert_eq!(h.edges(), g.edges());

        let m = SimplexField::new(DMatrix::from_row_slice(
            3,
            3,
            &[
                0.1,
                0.2,
                0.7,
                1.0 / 3.0,
                1.0 / 3.0,
                1.0 / 3.0,
                0.0,
                0.0,
                1.0,
            ],
        ))
        .unwrap();
        let text = format_simplex(&m);
        let back = parse_simplex_str(&text, &g, 3).unwrap();
        assert_eq!(format_simplex(&back), text);
    }

    #[test]
    fn log_has_fixed_header() {
        let entry = LogEntry {
            step: 0,
            mass: 1.0,
            h: 0.5,
            h_tau: 0.25,
            gl: 0.1,
            max_change: 0.0,
            multiplier: None,
        };
        let csv = format_log_csv(&[entry]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(LOG_HEADER));
        assert!(lines.next().unwrap().ends_with(','));
    }
}
