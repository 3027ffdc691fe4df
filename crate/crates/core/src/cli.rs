//! Pipeline stages driven by a [`RunConfig`]. Each stage reads the previous
//! stage's files from the output directory, so stages can be rerun alone.
//!
//! Output layout:
//! - `manifest.jsonl`
//! - `features_<mode>.csv` / `.arff`
//! - `fisher_<mode>.txt`, `reduced_<mode>.csv` / `.arff`
//! - `som_<mode>_<RxC>.txt`, `somfeat_<mode>_<RxC>.arff`, `somaug_<mode>_<RxC>.arff`
//! - `report.txt`, `report.json`

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arff::to_arff_string;
use crate::config::{RunConfig, SampleConfig};
use crate::dataset::{
    class_names_of, entries_from_index, load_records, parse_mias_index, preprocess,
    read_manifest_cache, write_manifest_cache, DatasetManifest, ImageRecord, ManifestEntry,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_classifiers, kfold_split, Classifier, EvalReport, PipelineSpec, SomMode};
use crate::features::{read_csv, write_csv, FeatureDataset};
use crate::fisherfaces::fit_fisherfaces;
use crate::roi::{assemble_dataset, RoiMode};
use crate::som::{augment, fit_som, quantize_replace};

/// Write to a temporary sibling, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_text(path: &Path, hint: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("{} ({hint})", path.display())))
}

pub fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("manifest.jsonl")
}

pub fn features_path(cfg: &RunConfig, mode: RoiMode, ext: &str) -> PathBuf {
    cfg.output_dir.join(format!("features_{}.{ext}", mode.key()))
}

pub fn reduced_path(cfg: &RunConfig, mode: RoiMode, ext: &str) -> PathBuf {
    cfg.output_dir.join(format!("reduced_{}.{ext}", mode.key()))
}

fn header(cfg: &RunConfig, what: &str) -> String {
    format!("somtex {what}\nfingerprint {}", cfg.fingerprint())
}

fn write_dataset(cfg: &RunConfig, csv: &Path, ds: &FeatureDataset, relation: &str, what: &str) -> Result<()> {
    let comment = header(cfg, what);
    let mut buf = Vec::new();
    write_csv(&mut buf, ds, Some(&comment))?;
    write_atomic(csv, &buf)?;
    let arff = to_arff_string(ds, relation, Some(&comment))?;
    write_atomic(&csv.with_extension("arff"), arff.as_bytes())
}

// ---------------------------------------------------------------------------
// ingest

#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub entries: Vec<ManifestEntry>,
    /// Ids that could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Draw `counts` images per class, seeded; the draw keeps index order.
fn sample_entries(entries: &[ManifestEntry], sample: &SampleConfig) -> Result<Vec<ManifestEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample.seed);
    let mut chosen = Vec::new();
    for (&label, &count) in &sample.counts {
        let mut members: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].label == label).collect();
        if members.len() < count {
            return Err(Error::InvalidArgument(format!(
                "sample asks for {count} {label} images but the index has {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..count]);
    }
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| entries[i].clone()).collect())
}

pub fn cmd_ingest(cfg: &RunConfig, strict: bool) -> Result<IngestSummary> {
    let index_path = cfg.index_path();
    let text = read_text(&index_path, "index file")?;
    let parsed = parse_mias_index(&text).map_err(|e| e.context(index_path.display().to_string()))?;
    let (mut entries, multi) = entries_from_index(&parsed, &cfg.image_dir());
    if !multi.is_empty() {
        info!("{} images list several abnormalities; the first is used: {}", multi.len(), multi.join(" "));
    }
    if let Some(sample) = &cfg.data.sample {
        entries = sample_entries(&entries, sample)?;
    }
    if entries.is_empty() {
        return Err(Error::Empty(format!("no images listed in {}", index_path.display())));
    }

    let (records, failures) = load_records(&entries);
    let mut skipped = Vec::new();
    for (id, err) in failures {
        if strict {
            return Err(err.context(format!("image `{id}`")));
        }
        warn!("skipping `{id}`: {err}");
        skipped.push((id, err.to_string()));
    }
    let kept: Vec<ManifestEntry> = entries
        .into_iter()
        .filter(|e| !skipped.iter().any(|(id, _)| *id == e.id))
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty("no readable images".into()));
    }

    let manifest = DatasetManifest::new(records)?;
    for (label, n) in manifest.class_histogram() {
        info!("class {label}: {n}");
    }
    let mut buf = Vec::new();
    write_manifest_cache(&mut buf, &kept, &cfg.fingerprint())?;
    write_atomic(&manifest_path(cfg), &buf)?;
    info!("manifest: {} images, {} skipped", kept.len(), skipped.len());
    Ok(IngestSummary {
        entries: kept,
        skipped,
    })
}

fn read_manifest(cfg: &RunConfig) -> Result<Vec<ManifestEntry>> {
    let path = manifest_path(cfg);
    let file = fs::File::open(&path)
        .map_err(|e| Error::from(e).context(format!("{} (run `ingest` first)", path.display())))?;
    let (entries, _) = read_manifest_cache(BufReader::new(file))?;
    Ok(entries)
}

fn class_names(entries: &[ManifestEntry]) -> Vec<String> {
    class_names_of(entries.iter().map(|e| e.label))
        .into_iter()
        .map(|c| c.to_string())
        .collect()
}

fn load_dataset(cfg: &RunConfig, path: &Path, hint: &str) -> Result<FeatureDataset> {
    let names = class_names(&read_manifest(cfg)?);
    let text = read_text(path, hint)?;
    read_csv(text.as_bytes(), Some(&names)).map_err(|e| e.context(path.display().to_string()))
}

pub fn load_features(cfg: &RunConfig, mode: RoiMode) -> Result<FeatureDataset> {
    load_dataset(cfg, &features_path(cfg, mode, "csv"), "run `extract` first")
}

// ---------------------------------------------------------------------------
// extract / reduce / som

pub fn cmd_extract(cfg: &RunConfig) -> Result<Vec<(RoiMode, FeatureDataset)>> {
    cfg.validate()?;
    let entries = read_manifest(cfg)?;
    let (records, failures) = load_records(&entries);
    if let Some((id, err)) = failures.into_iter().next() {
        return Err(err.context(format!("image `{id}`")));
    }
    let prepared = crate::par::map(&records, |r| {
        preprocess(&r.image, &cfg.preprocess)
            .map(|image| ImageRecord { image, ..r.clone() })
            .map_err(|e| e.context(format!("image `{}`", r.id)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(prepared)?;

    let mut out = Vec::new();
    for &mode in &cfg.modes {
        let (ds, report) = assemble_dataset(&manifest, &cfg.partition.with_mode(mode))?;
        if !report.degenerate.is_empty() {
            let regions: usize = report.degenerate.iter().map(|(_, n)| n).sum();
            warn!(
                "{mode}: {regions} empty regions (zero features) across {} images",
                report.degenerate.len()
            );
            for (id, n) in &report.degenerate {
                log::debug!("{mode}: `{id}` has {n} empty regions");
            }
        }
        info!("{mode}: {} images x {} features", ds.len(), ds.dim());
        write_dataset(
            cfg,
            &features_path(cfg, mode, "csv"),
            &ds,
            &format!("somtex_{}", mode.key()),
            &format!("features {}", mode.key()),
        )?;
        out.push((mode, ds));
    }
    Ok(out)
}

/// Fisherfaces fitted on every image, for export. Evaluation refits inside
/// each fold instead.
pub fn cmd_reduce(cfg: &RunConfig) -> Result<()> {
    if !cfg.fisher {
        info!("Fisherfaces disabled; nothing to reduce");
        return Ok(());
    }
    for &mode in &cfg.modes {
        let ds = load_features(cfg, mode)?;
        let (model, scores) =
            fit_fisherfaces(&ds.vectors(), &ds.labels()).map_err(|e| e.context(format!("{mode}")))?;
        if model.rank_deficient {
            warn!("{mode}: within-class scatter is rank deficient; used the floored inverse");
        }
        let what = format!("fisherfaces {} (fitted on all images)", mode.key());
        write_atomic(
            &cfg.output_dir.join(format!("fisher_{}.txt", mode.key())),
            model.to_text(Some(&header(cfg, &what))).as_bytes(),
        )?;
        let names = (1..=model.output_dim()).map(|i| format!("fld{i}")).collect();
        let reduced = ds.with_values(names, scores)?;
        write_dataset(
            cfg,
            &reduced_path(cfg, mode, "csv"),
            &reduced,
            &format!("somtex_{}_fisher", mode.key()),
            &what,
        )?;
    }
    Ok(())
}

/// SOMs fitted on every image, for export.
pub fn cmd_som(cfg: &RunConfig) -> Result<()> {
    let mut sizes: Vec<([usize; 2], bool, bool)> = Vec::new();
    if cfg.som.enabled(SomMode::Replace) {
        sizes.extend(cfg.som.sizes.iter().map(|&s| (s, true, false)));
    }
    if cfg.som.enabled(SomMode::Augment) {
        match sizes.iter_mut().find(|(s, _, _)| *s == cfg.som.augment_size) {
            Some(entry) => entry.2 = true,
            None => sizes.push((cfg.som.augment_size, false, true)),
        }
    }
    if sizes.is_empty() {
        info!("no SOM modes configured");
        return Ok(());
    }
    for &mode in &cfg.modes {
        let ds = if cfg.fisher {
            load_dataset(cfg, &reduced_path(cfg, mode, "csv"), "run `reduce` first")?
        } else {
            load_features(cfg, mode)?
        };
        for &(size, replace, aug) in &sizes {
            let som_cfg = cfg.som.map_config(size);
            let label = som_cfg.label();
            let map = fit_som(&som_cfg, &ds.vectors()).map_err(|e| e.context(format!("{mode} {label}")))?;
            let stem = format!("{}_{label}", mode.key());
            let what = format!("som {stem} (fitted on all images)");
            write_atomic(
                &cfg.output_dir.join(format!("som_{stem}.txt")),
                map.to_text(Some(&header(cfg, &what))).as_bytes(),
            )?;
            let replaced = quantize_replace(&map, &ds)?;
            let comment = header(cfg, &what);
            if replace {
                let arff = to_arff_string(&replaced, &format!("somtex_{stem}_som"), Some(&comment))?;
                write_atomic(&cfg.output_dir.join(format!("somfeat_{stem}.arff")), arff.as_bytes())?;
            }
            if aug {
                let joined = augment(&ds, &replaced)?;
                let arff = to_arff_string(&joined, &format!("somtex_{stem}_augmented"), Some(&comment))?;
                write_atomic(&cfg.output_dir.join(format!("somaug_{stem}.arff")), arff.as_bytes())?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

/// Which feature set a report column stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    Features,
    Replace { rows: usize, cols: usize },
    Augment { rows: usize, cols: usize },
}

impl Variant {
    fn som_mode(self) -> SomMode {
        match self {
            Variant::Features => SomMode::Off,
            Variant::Replace { .. } => SomMode::Replace,
            Variant::Augment { .. } => SomMode::Augment,
        }
    }

    fn size(self) -> Option<[usize; 2]> {
        match self {
            Variant::Features => None,
            Variant::Replace { rows, cols } | Variant::Augment { rows, cols } => Some([rows, cols]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mode: RoiMode,
    pub variant: Variant,
    pub classifier: Classifier,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub error: Option<String>,
    pub report: Option<EvalReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub class_counts: Vec<(String, usize)>,
    pub config: RunConfig,
    pub cells: Vec<Cell>,
}

impl RunReport {
    pub fn cell(&self, mode: RoiMode, variant: Variant, classifier: Classifier) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.mode == mode && c.variant == variant && c.classifier == classifier)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_text(&self) -> String {
        render_text(self)
    }
}

fn variants(cfg: &RunConfig) -> Vec<Variant> {
    let mut v = vec![Variant::Features];
    if cfg.som.enabled(SomMode::Replace) {
        v.extend(cfg.som.sizes.iter().map(|&[rows, cols]| Variant::Replace { rows, cols }));
    }
    if cfg.som.enabled(SomMode::Augment) {
        let [rows, cols] = cfg.som.augment_size;
        v.push(Variant::Augment { rows, cols });
    }
    v
}

pub fn evaluate_datasets(cfg: &RunConfig, datasets: &[(RoiMode, FeatureDataset)]) -> Result<RunReport> {
    let first = &datasets.first().ok_or_else(|| Error::Empty("no feature sets".into()))?.1;
    let plan = kfold_split(&first.labels(), cfg.eval.folds, cfg.eval.seed, cfg.eval.stratified)?;
    let jobs: Vec<(usize, Variant)> = (0..datasets.len())
        .flat_map(|d| variants(cfg).into_iter().map(move |v| (d, v)))
        .collect();
    let results = crate::par::map(&jobs, |&(d, variant)| {
        let (mode, ds) = &datasets[d];
        let spec = PipelineSpec {
            fisher: cfg.fisher,
            som_mode: variant.som_mode(),
            som: cfg.som.map_config(variant.size().unwrap_or([1, 1])),
            classifier: cfg.eval.classifiers[0],
        };
        let outcome = if ds.labels() != first.labels() {
            Err(Error::InvalidArgument(format!("{mode} rows do not match the first feature set")))
        } else {
            evaluate_classifiers(ds, &spec, &cfg.eval.classifiers, &plan, cfg.eval.leakage, None)
        };
        let per_classifier: Vec<std::result::Result<EvalReport, String>> = match outcome {
            Ok(v) => v.into_iter().map(|r| r.map_err(|e| e.to_string())).collect(),
            Err(e) => cfg.eval.classifiers.iter().map(|_| Err(e.to_string())).collect(),
        };
        cfg.eval
            .classifiers
            .iter()
            .zip(per_classifier)
            .map(|(&classifier, r)| {
                if let Err(e) = &r {
                    warn!("{mode} {variant:?} {classifier}: {e}");
                }
                Cell {
                    mode: *mode,
                    variant,
                    classifier,
                    accuracy: r.as_ref().ok().map(|r| r.overall_accuracy),
                    sensitivity: r.as_ref().ok().and_then(|r| r.sensitivity()),
                    specificity: r.as_ref().ok().and_then(|r| r.specificity()),
                    error: r.as_ref().err().cloned(),
                    report: r.ok(),
                }
            })
            .collect::<Vec<_>>()
    });
    let mut counts = vec![0; first.class_names.len()];
    for r in &first.rows {
        counts[r.label] += 1;
    }
    Ok(RunReport {
        fingerprint: cfg.fingerprint(),
        class_counts: first.class_names.iter().cloned().zip(counts).collect(),
        config: cfg.clone(),
        cells: results.into_iter().flatten().collect(),
    })
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let datasets = cfg
        .modes
        .iter()
        .map(|&m| load_features(cfg, m).map(|ds| (m, ds)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate_datasets(cfg, &datasets)?;
    write_atomic(&cfg.output_dir.join("report.txt"), report.render_text().as_bytes())?;
    write_atomic(&cfg.output_dir.join("report.json"), report.to_json().as_bytes())?;
    Ok(report)
}

pub fn cmd_run(cfg: &RunConfig, strict: bool) -> Result<RunReport> {
    cfg.validate()?;
    cmd_ingest(cfg, strict)?;
    cmd_extract(cfg)?;
    cmd_reduce(cfg)?;
    cmd_som(cfg)?;
    cmd_evaluate(cfg)
}

pub fn cmd_export_arff(csv: &Path, out: &Path, relation: &str, classes: Option<&[String]>) -> Result<()> {
    let text = read_text(csv, "feature CSV")?;
    let ds = read_csv(text.as_bytes(), classes).map_err(|e| e.context(csv.display().to_string()))?;
    let comments: Vec<&str> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim())
        .collect();
    let comment = (!comments.is_empty()).then(|| comments.join("\n"));
    write_atomic(out, to_arff_string(&ds, relation, comment.as_deref())?.as_bytes())
}

// ---------------------------------------------------------------------------
// rendering

fn percent(x: Option<f64>) -> String {
    x.map_or_else(|| "error".to_string(), |v| format!("{:.2}%", 100.0 * v))
}

fn table(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(String::len).max().unwrap_or(0))
        .collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        writeln!(out, "{}", line.join("  ").trim_end()).expect("string write");
    }
}

fn render_text(report: &RunReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "somtex evaluation report").unwrap();
    writeln!(w, "fingerprint {}", report.fingerprint).unwrap();
    let counts: Vec<String> = report.class_counts.iter().map(|(c, n)| format!("{c}={n}")).collect();
    let total: usize = report.class_counts.iter().map(|(_, n)| n).sum();
    writeln!(w, "images {total} ({})", counts.join(" ")).unwrap();
    writeln!(
        w,
        "protocol {}-fold CV, {}, seed {}, leakage {}, Fisherfaces {}",
        cfg.eval.folds,
        if cfg.eval.stratified { "stratified" } else { "unstratified" },
        cfg.eval.seed,
        serde_json::to_value(cfg.eval.leakage).unwrap().as_str().unwrap_or(""),
        if cfg.fisher { "on" } else { "off" }
    )
    .unwrap();

    let columns: Vec<Variant> = variants(cfg)
        .into_iter()
        .filter(|v| !matches!(v, Variant::Augment { .. }))
        .collect();
    let mut n = 0;
    for &mode in &cfg.modes {
        n += 1;
        writeln!(w, "\nTable {n}. Overall accuracy, {mode}").unwrap();
        let mut rows = vec![];
        let mut head = vec!["Classifier".to_string(), format!("{mode} Features")];
        head.extend(columns.iter().filter_map(|v| v.size()).map(|[r, c]| format!("{r}x{c}")));
        rows.push(head);
        for &clf in &cfg.eval.classifiers {
            let mut row = vec![clf.to_string()];
            for &v in &columns {
                row.push(percent(report.cell(mode, v, clf).and_then(|c| c.accuracy)));
            }
            rows.push(row);
        }
        table(w, &rows);
    }

    if cfg.som.enabled(SomMode::Augment) {
        let [r, c] = cfg.som.augment_size;
        let aug = Variant::Augment { rows: r, cols: c };
        n += 1;
        writeln!(w, "\nTable {n}. Overall accuracy, original vs SOM-augmented features ({r}x{c})").unwrap();
        let mut head = vec!["Feature set".to_string()];
        head.extend(cfg.eval.classifiers.iter().map(|c| c.to_string()));
        let mut rows = vec![head];
        for &mode in &cfg.modes {
            for (name, v) in [(mode.to_string(), Variant::Features), (format!("{mode}+SOMBased"), aug)] {
                let mut row = vec![name];
                for &clf in &cfg.eval.classifiers {
                    row.push(percent(report.cell(mode, v, clf).and_then(|c| c.accuracy)));
                }
                rows.push(row);
            }
        }
        table(w, &rows);
    }

    writeln!(w, "\nSensitivity / specificity (abnormal = positive)").unwrap();
    let mut rows = vec![vec![
        "Feature set".to_string(),
        "Classifier".to_string(),
        "Sensitivity".to_string(),
        "Specificity".to_string(),
    ]];
    let ratio = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    for c in report.cells.iter().filter(|c| c.error.is_none()) {
        let set = match c.variant {
            Variant::Features => format!("{}", c.mode),
            Variant::Replace { rows, cols } => format!("{} SOM {rows}x{cols}", c.mode),
            Variant::Augment { rows, cols } => format!("{}+SOMBased {rows}x{cols}", c.mode),
        };
        rows.push(vec![set, c.classifier.to_string(), ratio(c.sensitivity), ratio(c.specificity)]);
    }
    table(w, &rows);

    let failed: Vec<&Cell> = report.cells.iter().filter(|c| c.error.is_some()).collect();
    if !failed.is_empty() {
        writeln!(w, "\nFailed cells").unwrap();
        for c in failed {
            writeln!(w, "{} {:?} {}: {}", c.mode, c.variant, c.classifier, c.error.as_deref().unwrap_or("")).unwrap();
        }
    }
    out
}
