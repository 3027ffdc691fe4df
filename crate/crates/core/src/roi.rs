//! Region-of-interest selection. Each strategy turns one quantized image into
//! a fixed-length vector of texture statistics:
//!
//! * fixed blocs: a sub-image grid, each sub-image split into a bloc grid, one
//!   GLCM per bloc;
//! * pixel-wise: k-means on pixel intensity inside each sub-image, one masked
//!   GLCM per intensity cluster;
//! * bloc-wise: k-means on the bloc feature vectors inside each sub-image, one
//!   representative vector per cluster.
//!
//! Clusters are emitted in a canonical order so that a given position in the
//! vector means the same thing for every image.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, GrayImage};
use crate::error::{Error, Result};
use crate::features::{FeatureDataset, FeatureRow};
use crate::glcm::{region_features, STATS_PER_REGION, STAT_NAMES};
use crate::kmeans::{kmeans, kmeans_weighted};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiMode {
    FixedBloc,
    PixelWise,
    BlocWise,
}

impl RoiMode {
    pub const ALL: [RoiMode; 3] = [RoiMode::FixedBloc, RoiMode::PixelWise, RoiMode::BlocWise];

    /// Identifier used in file names and config.
    pub fn key(self) -> &'static str {
        match self {
            RoiMode::FixedBloc => "fixed_bloc",
            RoiMode::PixelWise => "pixel_wise",
            RoiMode::BlocWise => "bloc_wise",
        }
    }
}

impl fmt::Display for RoiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoiMode::FixedBloc => "FixedBloc",
            RoiMode::PixelWise => "PixelWise",
            RoiMode::BlocWise => "BlocWise",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub sub_rows: usize,
    pub sub_cols: usize,
    pub bloc_rows: usize,
    pub bloc_cols: usize,
    /// Clusters per sub-image (pixel-wise and bloc-wise).
    pub clusters: usize,
    pub mode: RoiMode,
    pub kmeans_seed: u64,
    /// Gray levels the input images carry.
    pub levels: u32,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            sub_rows: 3,
            sub_cols: 2,
            bloc_rows: 4,
            bloc_cols: 2,
            clusters: 3,
            mode: RoiMode::PixelWise,
            kmeans_seed: 0,
            levels: 32,
        }
    }
}

impl PartitionConfig {
    pub fn with_mode(&self, mode: RoiMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn sub_images(&self) -> usize {
        self.sub_rows * self.sub_cols
    }

    pub fn blocs(&self) -> usize {
        self.bloc_rows * self.bloc_cols
    }

    /// Regions per sub-image.
    pub fn regions(&self) -> usize {
        match self.mode {
            RoiMode::FixedBloc => self.blocs(),
            RoiMode::PixelWise | RoiMode::BlocWise => self.clusters,
        }
    }

    pub fn dim(&self) -> usize {
        self.sub_images() * self.regions() * STATS_PER_REGION
    }

    pub fn validate(&self) -> Result<()> {
        if self.sub_images() == 0 {
            return Err(Error::Config("sub-image grid must be at least 1x1".into()));
        }
        match self.mode {
            RoiMode::FixedBloc if self.blocs() == 0 => {
                Err(Error::Config("bloc grid must be at least 1x1".into()))
            }
            RoiMode::PixelWise if self.clusters == 0 => {
                Err(Error::Config("cluster count must be at least 1".into()))
            }
            RoiMode::BlocWise if self.clusters == 0 || self.blocs() == 0 => Err(Error::Config(
                "bloc-wise mode needs at least one bloc and one cluster".into(),
            )),
            RoiMode::BlocWise if self.clusters > self.blocs() => Err(Error::Config(format!(
                "cannot form {} clusters from {} blocs",
                self.clusters,
                self.blocs()
            ))),
            _ if self.levels < 2 => Err(Error::Config("levels must be at least 2".into())),
            _ => Ok(()),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let tag = match self.mode {
            RoiMode::FixedBloc => "b",
            _ => "c",
        };
        let mut names = Vec::with_capacity(self.dim());
        for s in 1..=self.sub_images() {
            for r in 1..=self.regions() {
                for stat in STAT_NAMES {
                    names.push(format!("s{s}_{tag}{r}_{stat}"));
                }
            }
        }
        names
    }
}

/// `rows`×`cols` non-overlapping tiles in row-major order. Tiles are
/// `floor(h/rows)`×`floor(w/cols)`; leftover pixels on the right and bottom are
/// dropped. A grid finer than the image yields empty tiles.
pub fn split_grid(img: &GrayImage, rows: usize, cols: usize) -> Result<Vec<GrayImage>> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("grid needs at least one row and column".into()));
    }
    let th = img.height() / rows;
    let tw = img.width() / cols;
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            tiles.push(img.sub_image(c * tw, r * th, tw, th));
        }
    }
    Ok(tiles)
}

/// Feature vector for one image plus the number of regions that had no
/// countable pixel pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionVector {
    pub values: Vec<f64>,
    pub degenerate: usize,
}

fn check_image(img: &GrayImage, cfg: &PartitionConfig, mode: RoiMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::InvalidArgument(format!(
            "config mode is {}, expected {}",
            cfg.mode, mode
        )));
    }
    cfg.validate()?;
    if img.levels() != cfg.levels {
        return Err(Error::InvalidArgument(format!(
            "image has {} gray levels, config expects {}",
            img.levels(),
            cfg.levels
        )));
    }
    Ok(())
}

pub fn extract_fixed_bloc(img: &GrayImage, cfg: &PartitionConfig) -> Result<RegionVector> {
    check_image(img, cfg, RoiMode::FixedBloc)?;
    let mut out = RegionVector {
        values: Vec::with_capacity(cfg.dim()),
        degenerate: 0,
    };
    for sub in split_grid(img, cfg.sub_rows, cfg.sub_cols)? {
        for bloc in split_grid(&sub, cfg.bloc_rows, cfg.bloc_cols)? {
            let f = region_features(&bloc, None);
            out.degenerate += usize::from(f.degenerate);
            out.values.extend(f.to_array());
        }
    }
    Ok(out)
}

pub fn extract_pixel_wise(img: &GrayImage, cfg: &PartitionConfig) -> Result<RegionVector> {
    check_image(img, cfg, RoiMode::PixelWise)?;
    let mut out = RegionVector {
        values: Vec::with_capacity(cfg.dim()),
        degenerate: 0,
    };
    for sub in split_grid(img, cfg.sub_rows, cfg.sub_cols)? {
        if sub.pixels().is_empty() {
            out.values.extend(std::iter::repeat_n(0.0, cfg.clusters * STATS_PER_REGION));
            out.degenerate += cfg.clusters;
            continue;
        }
        // cluster the intensity histogram: identical to clustering every pixel
        let mut hist = vec![0u64; sub.levels() as usize];
        for &v in sub.pixels() {
            hist[v as usize] += 1;
        }
        let present: Vec<usize> = (0..hist.len()).filter(|&v| hist[v] > 0).collect();
        let points: Vec<Vec<f64>> = present.iter().map(|&v| vec![v as f64]).collect();
        let weights: Vec<f64> = present.iter().map(|&v| hist[v] as f64).collect();
        let model = kmeans_weighted(&points, &weights, cfg.clusters, cfg.kmeans_seed)?;

        let mut order: Vec<usize> = (0..model.k).collect();
        order.sort_by(|&a, &b| {
            model.centroids[a][0]
                .total_cmp(&model.centroids[b][0])
                .then(a.cmp(&b))
        });
        let mut cluster_of_level = vec![usize::MAX; hist.len()];
        for (&v, &a) in present.iter().zip(&model.assignments) {
            cluster_of_level[v] = a;
        }
        for &cluster in &order {
            let mask: Vec<bool> = sub
                .pixels()
                .iter()
                .map(|&v| cluster_of_level[v as usize] == cluster)
                .collect();
            let f = region_features(&sub, Some(&mask));
            out.degenerate += usize::from(f.degenerate);
            out.values.extend(f.to_array());
        }
    }
    Ok(out)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub fn extract_bloc_wise(img: &GrayImage, cfg: &PartitionConfig) -> Result<RegionVector> {
    check_image(img, cfg, RoiMode::BlocWise)?;
    let mut out = RegionVector {
        values: Vec::with_capacity(cfg.dim()),
        degenerate: 0,
    };
    for sub in split_grid(img, cfg.sub_rows, cfg.sub_cols)? {
        let blocs: Vec<Vec<f64>> = split_grid(&sub, cfg.bloc_rows, cfg.bloc_cols)?
            .iter()
            .map(|b| {
                let f = region_features(b, None);
                out.degenerate += usize::from(f.degenerate);
                f.to_array().to_vec()
            })
            .collect();
        let model = kmeans(&blocs, cfg.clusters, cfg.kmeans_seed)?;

        let mut order: Vec<usize> = (0..model.k).collect();
        order.sort_by(|&a, &b| {
            lexicographic(&model.centroids[a], &model.centroids[b]).then(a.cmp(&b))
        });
        for &cluster in &order {
            let members: Vec<&Vec<f64>> = blocs
                .iter()
                .zip(&model.assignments)
                .filter(|(_, &a)| a == cluster)
                .map(|(b, _)| b)
                .collect();
            if members.is_empty() {
                out.values.extend(&model.centroids[cluster]);
                continue;
            }
            let n = members.len() as f64;
            for s in 0..STATS_PER_REGION {
                out.values.push(members.iter().map(|m| m[s]).sum::<f64>() / n);
            }
        }
    }
    Ok(out)
}

pub fn extract(img: &GrayImage, cfg: &PartitionConfig) -> Result<RegionVector> {
    match cfg.mode {
        RoiMode::FixedBloc => extract_fixed_bloc(img, cfg),
        RoiMode::PixelWise => extract_pixel_wise(img, cfg),
        RoiMode::BlocWise => extract_bloc_wise(img, cfg),
    }
}

/// Images with at least one degenerate region, and how many.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub mode: Option<RoiMode>,
    pub degenerate: Vec<(String, usize)>,
}

/// Extract every manifest image (already preprocessed to `cfg.levels`) into
/// one labeled row, in manifest order.
pub fn assemble_dataset(
    manifest: &DatasetManifest,
    cfg: &PartitionConfig,
) -> Result<(FeatureDataset, ExtractionReport)> {
    if manifest.records.is_empty() {
        return Err(Error::Empty("manifest has no records".into()));
    }
    cfg.validate()?;
    let vectors = crate::par::map(&manifest.records, |r| {
        extract(&r.image, cfg).map_err(|e| e.context(format!("image `{}`", r.id)))
    });
    let mut rows = Vec::with_capacity(vectors.len());
    let mut report = ExtractionReport {
        mode: Some(cfg.mode),
        degenerate: Vec::new(),
    };
    for (rec, v) in manifest.records.iter().zip(vectors) {
        let v = v?;
        if v.degenerate > 0 {
            report.degenerate.push((rec.id.clone(), v.degenerate));
        }
        let label = manifest
            .class_index(rec.class_label)
            .expect("manifest class names cover every record");
        rows.push(FeatureRow {
            id: rec.id.clone(),
            values: v.values,
            label,
        });
    }
    let class_names = manifest.class_names.iter().map(|c| c.to_string()).collect();
    let ds = FeatureDataset::new(cfg.feature_names(), class_names, rows)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ClassLabel, ImageRecord, Severity};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(mode: RoiMode) -> PartitionConfig {
        PartitionConfig {
            mode,
            levels: 8,
            ..Default::default()
        }
    }

    fn noise(w: usize, h: usize, levels: u32, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(w, h, levels, |_, _| rng.gen_range(0..levels) as u16).unwrap()
    }

    #[test]
    fn split_exact() {
        let im = GrayImage::from_fn(4, 6, 256, |x, y| (y * 4 + x) as u16).unwrap();
        let tiles = split_grid(&im, 3, 2).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|t| (t.width(), t.height()) == (2, 2)));
        assert_eq!(tiles[1].pixels(), &[2, 3, 6, 7]);
        assert_eq!(tiles[5].pixels(), &[18, 19, 22, 23]);
    }

    #[test]
    fn split_drops_remainder() {
        // 5 wide, 7 tall
        let im = GrayImage::from_fn(5, 7, 256, |x, y| (y * 5 + x) as u16).unwrap();
        let tiles = split_grid(&im, 3, 2).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|t| (t.width(), t.height()) == (2, 2)));
        let covered: usize = tiles.iter().map(|t| t.pixels().len()).sum();
        assert_eq!(covered, 24);
        assert!(tiles.iter().all(|t| t.pixels().iter().all(|&v| v % 5 < 4 && v / 5 < 6)));
    }

    #[test]
    fn split_identity() {
        let im = noise(5, 4, 8, 1);
        assert_eq!(split_grid(&im, 1, 1).unwrap(), vec![im]);
    }

    #[test]
    fn reported_dimensions() {
        let im = noise(64, 96, 8, 3);
        let fixed = extract_fixed_bloc(&im, &cfg(RoiMode::FixedBloc)).unwrap();
        assert_eq!(fixed.values.len(), 192);
        let pixel = extract_pixel_wise(&im, &cfg(RoiMode::PixelWise)).unwrap();
        assert_eq!(pixel.values.len(), 72);
        let bloc = extract_bloc_wise(&im, &cfg(RoiMode::BlocWise)).unwrap();
        assert_eq!(bloc.values.len(), 72);
    }

    #[test]
    fn single_region_constant_image() {
        let im = GrayImage::filled(8, 8, 8, 5).unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            bloc_rows: 1,
            bloc_cols: 1,
            clusters: 1,
            ..cfg(RoiMode::FixedBloc)
        };
        assert_eq!(extract_fixed_bloc(&im, &c).unwrap().values, vec![0.0, 1.0, 0.0, 0.0]);
        let c = c.with_mode(RoiMode::PixelWise);
        assert_eq!(extract_pixel_wise(&im, &c).unwrap().values, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn shift_invariance_of_fixed_blocs() {
        let im = noise(24, 24, 6, 9);
        let shifted =
            GrayImage::new(24, 24, 8, im.pixels().iter().map(|v| v + 2).collect()).unwrap();
        let c = cfg(RoiMode::FixedBloc);
        let widened = GrayImage::new(24, 24, 8, im.pixels().to_vec()).unwrap();
        let a = extract_fixed_bloc(&widened, &c).unwrap();
        let b = extract_fixed_bloc(&shifted, &c).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_bands_pixel_wise() {
        // top half level 6, bottom half level 1: clusters ordered low band first
        let im = GrayImage::from_fn(6, 4, 8, |_, y| if y < 2 { 6 } else { 1 }).unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            clusters: 2,
            ..cfg(RoiMode::PixelWise)
        };
        let v = extract_pixel_wise(&im, &c).unwrap();
        assert_eq!(v.values, vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(v.degenerate, 0);
    }

    #[test]
    fn pixel_wise_cluster_order_is_by_intensity() {
        // low band is a checkerboard (contrast > 0), high band is flat
        let im = GrayImage::from_fn(6, 4, 8, |x, y| {
            if y < 2 { 7 } else if (x + y) % 2 == 0 { 0 } else { 1 }
        })
        .unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            clusters: 2,
            ..cfg(RoiMode::PixelWise)
        };
        let v = extract_pixel_wise(&im, &c).unwrap().values;
        assert_eq!(&v[4..], &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(v[3], 1.0);
    }

    #[test]
    fn pixel_wise_is_seed_invariant_for_clear_partitions() {
        let im = GrayImage::from_fn(12, 12, 8, |x, _| [0, 1, 3, 4, 6, 7][x % 6]).unwrap();
        let base = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            ..cfg(RoiMode::PixelWise)
        };
        let a = extract_pixel_wise(&im, &base).unwrap();
        for seed in 1..10 {
            let b = extract_pixel_wise(&im, &PartitionConfig { kmeans_seed: seed, ..base.clone() })
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pixel_wise_surplus_clusters_are_degenerate() {
        let im = GrayImage::filled(4, 4, 8, 3).unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            clusters: 3,
            ..cfg(RoiMode::PixelWise)
        };
        let v = extract_pixel_wise(&im, &c).unwrap();
        assert_eq!(v.values.len(), 12);
        assert_eq!(&v.values[..4], &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(v.degenerate, 2);
    }

    #[test]
    fn bloc_wise_identical_blocs() {
        let im = GrayImage::from_fn(16, 16, 8, |x, _| (x % 2) as u16).unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            ..cfg(RoiMode::BlocWise)
        };
        let v = extract_bloc_wise(&im, &c).unwrap().values;
        let first = [1.0, 0.5, 1.0, 1.0];
        for chunk in v.chunks(4) {
            assert_eq!(chunk, first);
        }
    }

    #[test]
    fn bloc_wise_two_blocs_lexicographic() {
        // left bloc alternates 0/1 (f1), right bloc flat (f2 = (0,1,0,0))
        let im = GrayImage::from_fn(8, 4, 8, |x, _| if x < 4 { (x % 2) as u16 } else { 2 }).unwrap();
        let c = PartitionConfig {
            sub_rows: 1,
            sub_cols: 1,
            bloc_rows: 1,
            bloc_cols: 2,
            clusters: 2,
            ..cfg(RoiMode::BlocWise)
        };
        let v = extract_bloc_wise(&im, &c).unwrap().values;
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn bloc_wise_rejects_more_clusters_than_blocs() {
        let im = noise(16, 16, 8, 2);
        let c = PartitionConfig {
            bloc_rows: 1,
            bloc_cols: 2,
            clusters: 3,
            ..cfg(RoiMode::BlocWise)
        };
        assert!(extract_bloc_wise(&im, &c).is_err());
    }

    #[test]
    fn fixed_bloc_matches_bloc_wise_with_singleton_clusters() {
        let im = noise(32, 32, 8, 11);
        let fixed = PartitionConfig {
            sub_rows: 2,
            sub_cols: 1,
            bloc_rows: 2,
            bloc_cols: 2,
            ..cfg(RoiMode::FixedBloc)
        };
        let bloc = PartitionConfig {
            clusters: 4,
            ..fixed.with_mode(RoiMode::BlocWise)
        };
        let a = extract_fixed_bloc(&im, &fixed).unwrap().values;
        let b = extract_bloc_wise(&im, &bloc).unwrap().values;
        for (sa, sb) in a.chunks(16).zip(b.chunks(16)) {
            let mut blocs: Vec<&[f64]> = sa.chunks(4).collect();
            blocs.sort_by(|x, y| lexicographic(x, y));
            let sorted: Vec<f64> = blocs.concat();
            assert_eq!(sorted, sb);
        }
    }

    #[test]
    fn tiny_tiles_are_degenerate_not_short() {
        let im = noise(3, 3, 8, 5);
        let c = cfg(RoiMode::FixedBloc);
        let v = extract_fixed_bloc(&im, &c).unwrap();
        assert_eq!(v.values.len(), 192);
        assert_eq!(v.degenerate, 48);
    }

    #[test]
    fn mode_and_level_checks() {
        let im = noise(16, 16, 8, 2);
        assert!(extract_pixel_wise(&im, &cfg(RoiMode::FixedBloc)).is_err());
        let wrong_levels = PartitionConfig { levels: 32, ..cfg(RoiMode::FixedBloc) };
        assert!(extract_fixed_bloc(&im, &wrong_levels).is_err());
    }

    #[test]
    fn assemble_rows_follow_manifest() {
        let rec = |id: &str, label, seed| ImageRecord {
            id: id.into(),
            class_label: label,
            severity: if label == ClassLabel::Norm { None } else { Some(Severity::Benign) },
            image: noise(24, 24, 8, seed),
        };
        let m = DatasetManifest::new(vec![
            rec("b", ClassLabel::Calc, 1),
            rec("a", ClassLabel::Norm, 2),
            rec("c", ClassLabel::Calc, 3),
        ])
        .unwrap();
        let (ds, _) = assemble_dataset(&m, &cfg(RoiMode::PixelWise)).unwrap();
        assert_eq!(ds.dim(), 72);
        assert_eq!(ds.feature_names[0], "s1_c1_dissimilarity");
        let ids: Vec<&str> = ds.rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
        assert_eq!(ds.labels(), vec![1, 0, 1]);
        assert_eq!(ds.class_names, vec!["NORM".to_string(), "CALC".to_string()]);

        let single = DatasetManifest::new(vec![rec("z", ClassLabel::Norm, 4)]).unwrap();
        assert_eq!(assemble_dataset(&single, &cfg(RoiMode::BlocWise)).unwrap().0.len(), 1);
    }
}
