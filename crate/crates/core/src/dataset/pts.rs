//! The `.pts` landmark format used by the 300-W family of corpora.
//!
//! ```text
//! version: 1
//! n_points: 68
//! {
//! 123.5 201.0
//! ...
//! }
//! ```

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub fn parse_pts(text: &str) -> Result<Vec<Point2>> {
    // (line number, trimmed content) with blank lines dropped
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (n, version) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing version header"))?;
    header_value(n, version, "version")?;

    let (n, count) = lines
        .next()
        .ok_or_else(|| Error::parse(n + 1, "missing n_points header"))?;
    let expected: usize = header_value(n, count, "n_points")?
        .parse()
        .map_err(|_| Error::parse(n, "n_points is not a non-negative integer"))?;

    let (n, open) = lines
        .next()
        .ok_or_else(|| Error::parse(n + 1, "missing '{'"))?;
    if open != "{" {
        return Err(Error::parse(n, format!("expected '{{', found {open:?}")));
    }

    let mut points = Vec::with_capacity(expected);
    let mut closed_at = None;
    let mut last_line = n;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if line == "}" {
            closed_at = Some(n);
            break;
        }
        let mut fields = line.split_whitespace();
        let x = parse_coord(n, fields.next())?;
        let y = parse_coord(n, fields.next())?;
        if fields.next().is_some() {
            return Err(Error::parse(n, "more than two values on a point line"));
        }
        points.push(Point2::new(x, y));
    }
    let closed_at = closed_at.ok_or_else(|| Error::parse(last_line, "missing closing '}'"))?;
    if points.len() != expected {
        return Err(Error::parse(
            closed_at,
            format!("n_points is {expected} but {} points were listed", points.len()),
        ));
    }
    if let Some((n, extra)) = lines.next() {
        return Err(Error::parse(n, format!("unexpected content after '}}': {extra:?}")));
    }
    Ok(points)
}

fn header_value<'a>(line_no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    let (k, v) = line
        .split_once(':')
        .ok_or_else(|| Error::parse(line_no, format!("expected '{key}: <value>'")))?;
    if k.trim() != key {
        return Err(Error::parse(
            line_no,
            format!("expected header '{key}', found {:?}", k.trim()),
        ));
    }
    Ok(v.trim())
}

fn parse_coord(line_no: usize, token: Option<&str>) -> Result<f64> {
    let token = token.ok_or_else(|| Error::parse(line_no, "expected two coordinates"))?;
    let v: f64 = token
        .parse()
        .map_err(|_| Error::parse(line_no, format!("non-numeric token {token:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line_no, format!("non-finite coordinate {token:?}")));
    }
    Ok(v)
}

/// Six-decimal rendering shared by every text writer in the crate.
pub fn format_coord(v: f64) -> String {
    let s = format!("{v:.6}");
    // avoid "-0.000000"
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn write_pts(points: &[Point2]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "version: 1");
    let _ = writeln!(out, "n_points: {}", points.len());
    out.push_str("{\n");
    for p in points {
        let _ = writeln!(out, "{} {}", format_coord(p.x), format_coord(p.y));
    }
    out.push_str("}\n");
    out
}
