//! Plain decimal text format for fitted models: `#` comment lines, a tagged
//! dimensions line, then tagged rows of numbers with 12 significant digits.

use std::io::Write;

use crate::error::{Error, Result};

pub fn write_row(w: &mut impl Write, tag: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    write!(w, "{tag}")?;
    for v in values {
        write!(w, " {v:.11e}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Line cursor over a model file that skips comments and blank lines.
pub struct Reader<'a> {
    lines: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
}

impl<'a> Reader<'a> {
    pub fn new(text: &'a str) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            lines: it.peekable(),
        }
    }

    /// Next line, which must start with `tag`; returns its numeric fields.
    pub fn row(&mut self, tag: &str) -> Result<(usize, Vec<f64>)> {
        let (line, text) = self.lines.next().ok_or(Error::ModelFormat {
            line: 0,
            reason: format!("unexpected end of file, wanted `{tag}`"),
        })?;
        let mut fields = text.split_whitespace();
        if fields.next() != Some(tag) {
            return Err(Error::ModelFormat {
                line,
                reason: format!("expected `{tag}` line"),
            });
        }
        let values = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::ModelFormat {
                line,
                reason: e.to_string(),
            })?;
        Ok((line, values))
    }

    /// A row that must hold exactly `n` values.
    pub fn row_of(&mut self, tag: &str, n: usize) -> Result<Vec<f64>> {
        let (line, v) = self.row(tag)?;
        if v.len() != n {
            return Err(Error::ModelFormat {
                line,
                reason: format!("`{tag}` row has {} values, expected {n}", v.len()),
            });
        }
        Ok(v)
    }

    /// Dimension line: `tag` followed by non-negative integers.
    pub fn dims(&mut self, tag: &str, n: usize) -> Result<Vec<usize>> {
        let (line, v) = self.row(tag)?;
        if v.len() != n || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(Error::ModelFormat {
                line,
                reason: format!("`{tag}` needs {n} non-negative integers"),
            });
        }
        Ok(v.into_iter().map(|x| x as usize).collect())
    }

    pub fn finish(mut self) -> Result<()> {
        match self.lines.next() {
            None => Ok(()),
            Some((line, _)) => Err(Error::ModelFormat {
                line,
                reason: "trailing content".into(),
            }),
        }
    }
}
