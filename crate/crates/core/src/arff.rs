//! Weka ARFF export of feature tables, plus a reader for the subset we write.

use std::io::Write;

use log::warn;

use crate::error::{Error, Result};
use crate::features::{format_significant, FeatureDataset, FeatureRow};

pub const ARFF_DIGITS: usize = 9;

fn needs_escape(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | '{' | '}' | '%' | '\'' | '"') || !c.is_ascii()
}

/// Replace characters that would break an ARFF header with `_`.
pub fn sanitize_name(name: &str) -> String {
    let s: String = name.chars().map(|c| if needs_escape(c) { '_' } else { c }).collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

fn sanitize_all(kind: &str, names: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(names.len());
    for n in names {
        let mut s = sanitize_name(n);
        if s != *n {
            warn!("{kind} name `{n}` written to ARFF as `{s}`");
        }
        let base = s.clone();
        let mut k = 2;
        while out.contains(&s) {
            s = format!("{base}_{k}");
            k += 1;
        }
        out.push(s);
    }
    out
}

pub fn export_arff(mut w: impl Write, ds: &FeatureDataset, relation: &str, comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "% {line}")?;
        }
    }
    writeln!(w, "@RELATION {}", sanitize_name(relation))?;
    writeln!(w)?;
    for name in sanitize_all("feature", &ds.feature_names) {
        writeln!(w, "@ATTRIBUTE {name} NUMERIC")?;
    }
    let classes = sanitize_all("class", &ds.class_names);
    writeln!(w, "@ATTRIBUTE class {{{}}}", classes.join(","))?;
    writeln!(w)?;
    writeln!(w, "@DATA")?;
    for r in &ds.rows {
        for v in &r.values {
            if v.is_nan() {
                write!(w, "?,")?;
            } else {
                write!(w, "{},", format_significant(*v, ARFF_DIGITS))?;
            }
        }
        writeln!(w, "{}", classes[r.label])?;
    }
    Ok(())
}

pub fn to_arff_string(ds: &FeatureDataset, relation: &str, comment: Option<&str>) -> Result<String> {
    let mut buf = Vec::new();
    export_arff(&mut buf, ds, relation, comment)?;
    Ok(String::from_utf8(buf).expect("ARFF output is ASCII"))
}

/// Parse numeric attributes followed by one nominal class attribute.
/// Rows get ids `row1`, `row2`, ... since ARFF carries none.
pub fn parse_arff(text: &str) -> Result<(String, FeatureDataset)> {
    let err = |line: usize, reason: &str| Error::ModelFormat {
        line,
        reason: reason.to_string(),
    };
    let mut relation = None;
    let mut features = Vec::new();
    let mut classes: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut in_data = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if in_data {
            let classes = classes.as_ref().ok_or_else(|| err(n, "no class attribute"))?;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != features.len() + 1 {
                return Err(err(n, &format!("expected {} fields", features.len() + 1)));
            }
            let values = fields[..features.len()]
                .iter()
                .map(|f| if *f == "?" { Ok(f64::NAN) } else { f.parse::<f64>() })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(n, &e.to_string()))?;
            let class = fields[features.len()];
            let label = classes
                .iter()
                .position(|c| c == class)
                .ok_or_else(|| err(n, &format!("unknown class `{class}`")))?;
            rows.push(FeatureRow {
                id: format!("row{}", rows.len() + 1),
                values,
                label,
            });
            continue;
        }
        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match keyword.to_ascii_uppercase().as_str() {
            "@RELATION" => relation = Some(rest.to_string()),
            "@ATTRIBUTE" => {
                if classes.is_some() {
                    return Err(err(n, "the class attribute must come last"));
                }
                let (name, kind) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| err(n, "attribute needs a name and a type"))?;
                let kind = kind.trim();
                if let Some(list) = kind.strip_prefix('{').and_then(|k| k.strip_suffix('}')) {
                    classes = Some(list.split(',').map(|c| c.trim().to_string()).collect());
                } else if kind.eq_ignore_ascii_case("NUMERIC") || kind.eq_ignore_ascii_case("REAL") {
                    features.push(name.to_string());
                } else {
                    return Err(err(n, &format!("unsupported attribute type `{kind}`")));
                }
            }
            "@DATA" => in_data = true,
            _ => return Err(err(n, &format!("unexpected line `{line}`"))),
        }
    }
    let relation = relation.ok_or_else(|| err(0, "missing @RELATION"))?;
    let classes = classes.ok_or_else(|| err(0, "missing class attribute"))?;
    Ok((relation, FeatureDataset::new(features, classes, rows)?))
}
