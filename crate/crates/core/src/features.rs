//! Labeled feature tables shared by every stage after extraction.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub values: Vec<f64>,
    /// Index into [`FeatureDataset::class_names`].
    pub label: usize,
}

/// One vector per image plus its class, in a fixed column layout.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDataset {
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDataset {
    pub fn new(
        feature_names: Vec<String>,
        class_names: Vec<String>,
        rows: Vec<FeatureRow>,
    ) -> Result<Self> {
        let dim = feature_names.len();
        for r in &rows {
            if r.values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: r.values.len(),
                }
                .context(format!("row `{}`", r.id)));
            }
            if r.label >= class_names.len() {
                return Err(Error::InvalidArgument(format!(
                    "row `{}` has label index {} but only {} classes exist",
                    r.id,
                    r.label,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            feature_names,
            class_names,
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.rows.iter().map(|r| r.values.as_slice()).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        FeatureDataset {
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Same rows and labels, new vectors.
    pub fn with_values(&self, feature_names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != self.rows.len() {
            return Err(Error::DimensionMismatch {
                expected: self.rows.len(),
                actual: values.len(),
            });
        }
        let rows = self
            .rows
            .iter()
            .zip(values)
            .map(|(r, v)| FeatureRow {
                id: r.id.clone(),
                values: v,
                label: r.label,
            })
            .collect();
        FeatureDataset::new(feature_names, self.class_names.clone(), rows)
    }
}

/// Format with `digits` significant digits, `%g` style.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "Infinity".into() } else { "-Infinity".into() };
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const CSV_DIGITS: usize = 9;

/// CSV: optional `#` comment lines, a header `id,<features...>,class`, then rows.
pub fn write_csv(mut w: impl Write, ds: &FeatureDataset, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    write!(w, "id")?;
    for name in &ds.feature_names {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",class")?;
    for r in &ds.rows {
        write!(w, "{}", r.id)?;
        for v in &r.values {
            write!(w, ",{}", format_significant(*v, CSV_DIGITS))?;
        }
        writeln!(w, ",{}", ds.class_names[r.label])?;
    }
    Ok(())
}

/// Read what [`write_csv`] wrote. `class_names` fixes the label order; when
/// `None`, classes are taken in order of first appearance.
pub fn read_csv(r: impl BufRead, class_names: Option<&[String]>) -> Result<FeatureDataset> {
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.starts_with('#') && !l.trim().is_empty()));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Empty("CSV has no header".into()))?;
    let header = header?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[0] != "id" || cols[cols.len() - 1] != "class" {
        return Err(Error::ModelFormat {
            line: 1,
            reason: "header must be `id,...,class`".into(),
        });
    }
    let feature_names: Vec<String> = cols[1..cols.len() - 1].iter().map(|s| s.to_string()).collect();
    let mut classes: Vec<String> = class_names.map(|c| c.to_vec()).unwrap_or_default();
    let fixed = class_names.is_some();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::ModelFormat {
                line: i + 1,
                reason: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        let values = fields[1..fields.len() - 1]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::ModelFormat {
                line: i + 1,
                reason: e.to_string(),
            })?;
        let class = fields[fields.len() - 1];
        let label = match classes.iter().position(|c| c == class) {
            Some(l) => l,
            None if !fixed => {
                classes.push(class.to_string());
                classes.len() - 1
            }
            None => {
                return Err(Error::ModelFormat {
                    line: i + 1,
                    reason: format!("unknown class `{class}`"),
                })
            }
        };
        rows.push(FeatureRow {
            id: fields[0].to_string(),
            values,
            label,
        });
    }
    FeatureDataset::new(feature_names, classes, rows)
}
