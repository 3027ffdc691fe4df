//! Image ingestion and preprocessing: netpbm gray images, the MIAS index
//! format, border cropping, histogram equalization and gray-level binning.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major gray image with pixel values in `[0, levels)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: u32,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, levels: u32, pixels: Vec<u16>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        if !(1..=65536).contains(&levels) {
            return Err(Error::InvalidArgument(format!(
                "levels must be in 1..=65536, got {levels}"
            )));
        }
        if let Some(&v) = pixels.iter().find(|&&v| u32::from(v) >= levels) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} out of range for {levels} levels"
            )));
        }
        Ok(Self {
            width,
            height,
            levels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, levels: u32, value: u16) -> Result<Self> {
        Self::new(width, height, levels, vec![value; width * height])
    }

    /// Build from a generator `f(x, y)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        levels: u32,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, levels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Copy the `w`×`h` window whose top-left corner is `(x0, y0)`.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> GrayImage {
        assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        GrayImage {
            width: w,
            height: h,
            levels: self.levels,
            pixels,
        }
    }

    /// Apply a per-level lookup table, producing an image with `levels` levels.
    fn remap(&self, lut: &[u16], levels: u32) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            levels,
            pixels: self.pixels.iter().map(|&v| lut[v as usize]).collect(),
        }
    }

    fn histogram(&self) -> Vec<u64> {
        let mut hist = vec![0u64; self.levels as usize];
        for &v in &self.pixels {
            hist[v as usize] += 1;
        }
        hist
    }
}

// ---------------------------------------------------------------------------
// PGM

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgmFormat {
    /// `P2`
    Ascii,
    /// `P5`
    Binary,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a [u8])> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Decode {
                offset: start,
                reason: format!("missing {what}"),
            });
        }
        Ok((start, &self.bytes[start..self.pos]))
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        let (start, tok) = self.token(what)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| Error::Decode {
                offset: start,
                reason: format!("invalid {what}"),
            })
    }
}

/// Decode a binary (`P5`) or ASCII (`P2`) graymap.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut rd = HeaderReader { bytes, pos: 0 };
    let format = match bytes.get(..2) {
        Some(b"P5") => PgmFormat::Binary,
        Some(b"P2") => PgmFormat::Ascii,
        _ => {
            return Err(Error::Decode {
                offset: 0,
                reason: "expected magic P2 or P5".into(),
            })
        }
    };
    rd.pos = 2;
    let width = rd.number("width")? as usize;
    let height = rd.number("height")? as usize;
    let maxval_offset = rd.pos;
    let maxval = rd.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Decode {
            offset: maxval_offset,
            reason: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    let n = width.checked_mul(height).ok_or(Error::Decode {
        offset: 0,
        reason: "image dimensions overflow".into(),
    })?;

    let mut pixels = Vec::with_capacity(n);
    match format {
        PgmFormat::Binary => {
            // exactly one whitespace byte separates the header from the raster
            let start = rd.pos + 1;
            let bpp = if maxval > 255 { 2 } else { 1 };
            let need = n * bpp;
            let body = bytes.get(start..).unwrap_or(&[]);
            if body.len() < need {
                return Err(Error::Decode {
                    offset: start + body.len(),
                    reason: format!(
                        "truncated raster: need {need} bytes, found {}",
                        body.len()
                    ),
                });
            }
            for i in 0..n {
                let v = if bpp == 2 {
                    u16::from_be_bytes([body[2 * i], body[2 * i + 1]])
                } else {
                    u16::from(body[i])
                };
                if u64::from(v) > maxval {
                    return Err(Error::Decode {
                        offset: start + i * bpp,
                        reason: format!("sample {v} exceeds maxval {maxval}"),
                    });
                }
                pixels.push(v);
            }
        }
        PgmFormat::Ascii => {
            for i in 0..n {
                let v = match rd.number("sample") {
                    Ok(v) => v,
                    Err(_) if rd.pos >= bytes.len() => {
                        return Err(Error::Decode {
                            offset: bytes.len(),
                            reason: format!("truncated raster: found {i} of {n} samples"),
                        })
                    }
                    Err(e) => return Err(e),
                };
                if v > maxval {
                    return Err(Error::Decode {
                        offset: rd.pos,
                        reason: format!("sample {v} exceeds maxval {maxval}"),
                    });
                }
                pixels.push(v as u16);
            }
        }
    }
    GrayImage::new(width, height, (maxval + 1) as u32, pixels)
}

/// Encode with maxval = levels − 1.
pub fn encode_pgm(img: &GrayImage, format: PgmFormat) -> Vec<u8> {
    let maxval = img.levels.saturating_sub(1).max(1);
    let mut out = Vec::new();
    match format {
        PgmFormat::Binary => {
            write!(out, "P5\n{} {}\n{}\n", img.width, img.height, maxval).unwrap();
            for &v in &img.pixels {
                if maxval > 255 {
                    out.extend_from_slice(&v.to_be_bytes());
                } else {
                    out.push(v as u8);
                }
            }
        }
        PgmFormat::Ascii => {
            write!(out, "P2\n{} {}\n{}\n", img.width, img.height, maxval).unwrap();
            for row in img.pixels.chunks(img.width.max(1)) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    decode_pgm(&bytes).map_err(|e| e.context(path.display().to_string()))
}

// ---------------------------------------------------------------------------
// MIAS index

/// Class of abnormality present (MIAS column 3).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClassLabel {
    Norm,
    Calc,
    Circ,
    Spic,
    Misc,
    Arch,
    Asym,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 7] = [
        ClassLabel::Norm,
        ClassLabel::Calc,
        ClassLabel::Circ,
        ClassLabel::Spic,
        ClassLabel::Misc,
        ClassLabel::Arch,
        ClassLabel::Asym,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Norm => "NORM",
            ClassLabel::Calc => "CALC",
            ClassLabel::Circ => "CIRC",
            ClassLabel::Spic => "SPIC",
            ClassLabel::Misc => "MISC",
            ClassLabel::Arch => "ARCH",
            ClassLabel::Asym => "ASYM",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown class `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Benign,
    Malignant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    /// Background tissue character: F, G or D.
    pub tissue: String,
    pub class_label: ClassLabel,
    pub severity: Option<Severity>,
    pub center: Option<(u32, u32)>,
    pub radius: Option<u32>,
}

/// Parse a MIAS `Info.txt` style index. Every abnormality line is kept, so an
/// id may appear more than once.
pub fn parse_mias_index(text: &str) -> Result<Vec<IndexEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::IndexParse {
                line: lineno,
                reason: format!("expected at least 3 fields, found {}", fields.len()),
            });
        }
        let class_label: ClassLabel = fields[2].parse().map_err(|reason| Error::IndexParse {
            line: lineno,
            reason,
        })?;
        let mut entry = IndexEntry {
            id: fields[0].to_string(),
            tissue: fields[1].to_string(),
            class_label,
            severity: None,
            center: None,
            radius: None,
        };
        if class_label != ClassLabel::Norm {
            entry.severity = match fields.get(3).copied() {
                Some("B") => Some(Severity::Benign),
                Some("M") => Some(Severity::Malignant),
                Some(other) => {
                    return Err(Error::IndexParse {
                        line: lineno,
                        reason: format!("unknown severity `{other}`"),
                    })
                }
                None => None,
            };
            // some official lines omit or annotate the geometry; keep what parses
            let num = |k: usize| fields.get(k).and_then(|s| s.parse::<u32>().ok());
            if let (Some(x), Some(y)) = (num(4), num(5)) {
                entry.center = Some((x, y));
            }
            entry.radius = num(6);
        }
        out.push(entry);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Minimal bounding sub-image of every pixel `>= threshold`. Unchanged when no
/// pixel qualifies.
pub fn crop_black_border(img: &GrayImage, threshold: u16) -> GrayImage {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..img.height {
        for x in 0..img.width {
            if img.get(x, y) >= threshold {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return img.clone();
    }
    img.sub_image(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// CDF-anchored histogram equalization. Images occupying a single level come
/// back unchanged.
pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    let hist = img.histogram();
    let total = img.pixels.len() as u64;
    let Some(first) = hist.iter().position(|&c| c > 0) else {
        return img.clone();
    };
    let cdf_min = hist[first];
    if cdf_min == total {
        return img.clone();
    }
    let top = f64::from(img.levels - 1);
    let denom = (total - cdf_min) as f64;
    let mut lut = vec![0u16; hist.len()];
    let mut cum = 0u64;
    for (v, &count) in hist.iter().enumerate() {
        cum += count;
        let num = cum.saturating_sub(cdf_min) as f64;
        lut[v] = (top * num / denom).round() as u16;
    }
    img.remap(&lut, img.levels)
}

/// Bin `levels` gray values into `g` equal-width bins: `floor(v·g/levels)`.
pub fn quantize_gray_levels(img: &GrayImage, g: u32) -> Result<GrayImage> {
    if g < 2 || g > img.levels {
        return Err(Error::InvalidArgument(format!(
            "level count {g} must lie in 2..={}",
            img.levels
        )));
    }
    let lut: Vec<u16> = (0..img.levels as u64)
        .map(|v| (v * u64::from(g) / u64::from(img.levels)) as u16)
        .collect();
    Ok(img.remap(&lut, g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Crop threshold on the 0..=255 scale; rescaled for deeper images.
    pub crop_threshold: u16,
    pub equalize: bool,
    /// Gray levels handed to the co-occurrence stage.
    pub levels: u32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            crop_threshold: 10,
            equalize: true,
            levels: 32,
        }
    }
}

/// crop → equalize → quantize.
pub fn preprocess(img: &GrayImage, cfg: &PreprocessConfig) -> Result<GrayImage> {
    let threshold = (u64::from(cfg.crop_threshold) * u64::from(img.levels) / 256) as u16;
    let cropped = crop_black_border(img, threshold);
    let enhanced = if cfg.equalize {
        equalize_histogram(&cropped)
    } else {
        cropped
    };
    if enhanced.levels == cfg.levels {
        return Ok(enhanced);
    }
    quantize_gray_levels(&enhanced, cfg.levels)
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub id: String,
    pub class_label: ClassLabel,
    pub severity: Option<Severity>,
    pub image: GrayImage,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub class_names: Vec<ClassLabel>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("manifest has no records".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate image id `{}`", r.id)));
            }
            if (r.class_label == ClassLabel::Norm) != r.severity.is_none() {
                return Err(Error::InvalidArgument(format!(
                    "`{}`: severity must be present exactly for abnormal classes",
                    r.id
                )));
            }
        }
        let class_names = class_names_of(records.iter().map(|r| r.class_label));
        Ok(Self {
            records,
            class_names,
        })
    }

    pub fn class_index(&self, label: ClassLabel) -> Option<usize> {
        self.class_names.iter().position(|&c| c == label)
    }

    /// Count per class, in `class_names` order.
    pub fn class_histogram(&self) -> Vec<(ClassLabel, usize)> {
        self.class_names
            .iter()
            .map(|&c| (c, self.records.iter().filter(|r| r.class_label == c).count()))
            .collect()
    }
}

/// Distinct labels present, in canonical order.
pub fn class_names_of(labels: impl Iterator<Item = ClassLabel>) -> Vec<ClassLabel> {
    let present: HashSet<ClassLabel> = labels.collect();
    ClassLabel::ALL
        .into_iter()
        .filter(|c| present.contains(c))
        .collect()
}

/// One line of the manifest cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub label: ClassLabel,
    pub severity: Option<Severity>,
    pub path: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestHeader {
    fingerprint: String,
    class_names: Vec<ClassLabel>,
}

/// Collapse index lines to one entry per id. The first listed abnormality
/// wins; the ids that carried more are returned for logging.
pub fn entries_from_index(
    index: &[IndexEntry],
    image_dir: &Path,
) -> (Vec<ManifestEntry>, Vec<String>) {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut multi = Vec::new();
    for e in index {
        if !seen.insert(e.id.clone()) {
            if !multi.contains(&e.id) {
                multi.push(e.id.clone());
            }
            continue;
        }
        out.push(ManifestEntry {
            id: e.id.clone(),
            label: e.class_label,
            severity: if e.class_label == ClassLabel::Norm {
                None
            } else {
                Some(e.severity.unwrap_or(Severity::Benign))
            },
            path: image_dir.join(format!("{}.pgm", e.id)),
        });
    }
    (out, multi)
}

/// JSON lines: a header object, then one entry per line.
pub fn write_manifest_cache(
    mut w: impl Write,
    entries: &[ManifestEntry],
    fingerprint: &str,
) -> Result<()> {
    let header = ManifestHeader {
        fingerprint: fingerprint.to_string(),
        class_names: class_names_of(entries.iter().map(|e| e.label)),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest_cache(r: impl BufRead) -> Result<(Vec<ManifestEntry>, String)> {
    let mut lines = r.lines();
    let header: ManifestHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::Empty("manifest cache is empty".into())),
    };
    let mut entries = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok((entries, header.fingerprint))
}

/// Load every entry's image; records that fail are returned with their error.
pub fn load_records(entries: &[ManifestEntry]) -> (Vec<ImageRecord>, Vec<(String, Error)>) {
    let loaded = crate::par::map(entries, |e| read_pgm(&e.path));
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (e, res) in entries.iter().zip(loaded) {
        match res {
            Ok(image) => records.push(ImageRecord {
                id: e.id.clone(),
                class_label: e.label,
                severity: e.severity,
                image,
            }),
            Err(err) => failures.push((e.id.clone(), err)),
        }
    }
    (records, failures)
}
