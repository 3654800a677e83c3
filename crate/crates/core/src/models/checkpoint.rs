//! Shared parsing for the plain-text model checkpoints.
//!
//! ```text
//! <Type> dim=<d> classes=<c> hidden=<h>
//! <row-major matrix rows, comma-separated decimals>
//! ```

use crate::error::{Error, Result};

pub(crate) struct Header {
    pub dim: usize,
    pub classes: usize,
    pub hidden: usize,
}

pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    pub fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    pub fn next_line(&mut self) -> Result<&'a str> {
        self.inner
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| Error::Checkpoint("unexpected end of checkpoint".into()))
    }

    pub fn finish(mut self) -> Result<()> {
        match self.inner.find(|(_, l)| !l.trim().is_empty()) {
            Some((i, _)) => Err(Error::Checkpoint(format!("trailing data at line {}", i + 1))),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_header(line: &str, expected_type: &str) -> Result<Header> {
    let mut fields = line.split_whitespace();
    let kind = fields.next().unwrap_or_default();
    if kind != expected_type {
        return Err(Error::Checkpoint(format!(
            "expected {expected_type} checkpoint, found `{kind}`"
        )));
    }
    let mut header = Header {
        dim: 0,
        classes: 0,
        hidden: 0,
    };
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad header field `{field}`")))?;
        let value: usize = value
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad header value `{field}`")))?;
        match key {
            "dim" => header.dim = value,
            "classes" => header.classes = value,
            "hidden" => header.hidden = value,
            _ => return Err(Error::Checkpoint(format!("unknown header key `{key}`"))),
        }
    }
    Ok(header)
}

pub(crate) fn parse_row(line: &str, expected: usize) -> Result<Vec<f64>> {
    if expected == 0 && line.trim().is_empty() {
        return Ok(Vec::new());
    }
    let row: Vec<f64> = line
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Checkpoint(format!("bad number `{t}`")))
        })
        .collect::<Result<_>>()?;
    if row.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} values, found {}",
            row.len()
        )));
    }
    Ok(row)
}
