//! libFM text format.
//!
//! One instance per line: `<target> <idx>:<val> ...` with 0-based indices.
//! Lines starting with `#` are comments, except three header directives:
//!
//! ```text
//! #n <N>                  feature dimension
//! #user <offset> <width>  one-hot user block
//! #item <offset> <width>  one-hot item block
//! ```
//!
//! When both blocks are declared, repeated (user, item) ratings are averaged.

use std::io::{BufRead, Write};

use dfm_core::{Dataset, FieldRange, SparseInstance, SparseVector};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
struct Header {
    n: Option<usize>,
    user: Option<FieldRange>,
    item: Option<FieldRange>,
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn directive(header: &mut Header, text: &str, line: usize) -> Result<()> {
    let mut words = text.split_whitespace();
    let Some(name) = words.next() else { return Ok(()) };
    let mut number = |what: &str| -> Result<usize> {
        words
            .next()
            .ok_or_else(|| parse_error(line, format!("#{name} needs {what}")))?
            .parse()
            .map_err(|_| parse_error(line, format!("#{name}: {what} must be a non-negative integer")))
    };
    match name {
        "n" => header.n = Some(number("a dimension")?),
        "user" | "item" => {
            let field = FieldRange::new(number("an offset")?, number("a width")?);
            if name == "user" {
                header.user = Some(field);
            } else {
                header.item = Some(field);
            }
        }
        _ => {}
    }
    Ok(())
}

fn parse_line(text: &str, line: usize) -> Result<SparseInstance> {
    let mut words = text.split_whitespace();
    let target: f64 = words
        .next()
        .expect("caller skips blank lines")
        .parse()
        .map_err(|_| parse_error(line, "target is not a number"))?;
    if !target.is_finite() {
        return Err(parse_error(line, "non-finite target"));
    }
    let mut pairs = Vec::new();
    for word in words {
        let (i, v) = word.split_once(':').ok_or_else(|| parse_error(line, format!("expected idx:val, got {word:?}")))?;
        let i: usize = i.parse().map_err(|_| parse_error(line, format!("bad index {i:?}")))?;
        let v: f64 = v.parse().map_err(|_| parse_error(line, format!("bad value {v:?}")))?;
        if !v.is_finite() {
            return Err(parse_error(line, format!("non-finite value at index {i}")));
        }
        pairs.push((i, v));
    }
    let features = SparseVector::from_pairs(pairs).map_err(|e| parse_error(line, e.to_string()))?;
    Ok(SparseInstance::new(features, target)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    /// Average repeated (user, item) ratings when both fields are declared.
    pub average_duplicates: bool,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { average_duplicates: true }
    }
}

/// Reads a dataset. `n_features` is `1 + max index` unless `#n` says otherwise.
pub fn parse_libfm<R: BufRead>(reader: R) -> Result<Dataset> {
    parse_libfm_with(reader, ParseOptions::default())
}

pub fn parse_libfm_with<R: BufRead>(reader: R, opts: ParseOptions) -> Result<Dataset> {
    let mut header = Header::default();
    let mut instances = Vec::new();
    let mut lines = Vec::new();
    for (no, text) in reader.lines().enumerate() {
        let line = no + 1;
        let text = text.map_err(|e| parse_error(line, e.to_string()))?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(rest) = text.strip_prefix('#') {
            directive(&mut header, rest, line)?;
            continue;
        }
        instances.push(parse_line(text, line)?);
        lines.push(line);
    }
    let max = instances.iter().filter_map(|i| i.features.max_index()).max();
    let n = match (header.n, max) {
        (Some(n), Some(m)) if m >= n => {
            let at = instances.iter().position(|i| i.features.max_index() == Some(m)).unwrap();
            return Err(parse_error(lines[at], format!("index {m} exceeds the declared dimension {n}")));
        }
        (Some(n), _) => n,
        (None, m) => {
            let fields = [header.user, header.item].into_iter().flatten().map(|f| f.end()).max();
            m.map_or(0, |m| m + 1).max(fields.unwrap_or(0))
        }
    };
    let dataset = Dataset::new(instances, n, header.user, header.item).map_err(|e| match e {
        dfm_core::Error::FieldViolation { instance, field, found } => parse_error(
            lines[instance],
            format!("expected exactly one {field} feature, found {found}"),
        ),
        e => e.into(),
    })?;
    Ok(if opts.average_duplicates { dataset.average_duplicate_ratings() } else { dataset })
}

pub fn parse_str(text: &str) -> Result<Dataset> {
    parse_libfm(text.as_bytes())
}

/// Shortest text that parses back to exactly `v`.
pub fn format_f64(v: f64) -> String {
    let plain = v.to_string();
    let sci = format!("{v:e}");
    if sci.len() < plain.len() { sci } else { plain }
}

/// Writes the headers and one line per instance. Floats use the shortest
/// representation that reads back exactly.
pub fn write_libfm<W: Write>(d: &Dataset, mut out: W) -> std::io::Result<()> {
    writeln!(out, "#n {}", d.n_features())?;
    if let Some(f) = d.user_field() {
        writeln!(out, "#user {} {}", f.offset, f.width)?;
    }
    if let Some(f) = d.item_field() {
        writeln!(out, "#item {} {}", f.offset, f.width)?;
    }
    for inst in d.instances() {
        write!(out, "{}", format_f64(inst.target))?;
        for (i, v) in inst.features.iter() {
            write!(out, " {i}:{}", format_f64(v))?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn to_string(d: &Dataset) -> String {
    let mut buf = Vec::new();
    write_libfm(d, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii")
}
