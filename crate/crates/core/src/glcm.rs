//! Gray-level co-occurrence matrices and the four texture statistics built on
//! them: dissimilarity, uniformity (angular second moment), entropy, contrast.

use serde::{Deserialize, Serialize};

use crate::dataset::GrayImage;
use crate::error::{Error, Result};

/// Number of statistics per region.
pub const STATS_PER_REGION: usize = 4;
pub const STAT_NAMES: [&str; STATS_PER_REGION] =
    ["dissimilarity", "uniformity", "entropy", "contrast"];

/// Pixel displacement `(dx, dy)`; `(1, 0)` is direction 0°, distance 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offset {
    pub dx: i32,
    pub dy: i32,
}

impl Offset {
    pub const HORIZONTAL: Offset = Offset { dx: 1, dy: 0 };
}

impl Default for Offset {
    fn default() -> Self {
        Offset::HORIZONTAL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlcmOptions {
    pub offset: Offset,
    /// Count each pair as both (i, j) and (j, i).
    pub symmetric: bool,
}

impl Default for GlcmOptions {
    fn default() -> Self {
        Self {
            offset: Offset::HORIZONTAL,
            symmetric: true,
        }
    }
}

/// Normalized `G`×`G` co-occurrence matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Glcm {
    levels: usize,
    p: Vec<f64>,
    pair_count: u64,
}

impl Glcm {
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Raw in-bounds pixel pairs that were counted.
    pub fn pair_count(&self) -> u64 {
        self.pair_count
    }

    pub fn is_degenerate(&self) -> bool {
        self.pair_count == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// Build directly from a probability table (row-major, `levels²` cells).
    pub fn from_probabilities(levels: usize, p: Vec<f64>, pair_count: u64) -> Result<Self> {
        if p.len() != levels * levels {
            return Err(Error::DimensionMismatch {
                expected: levels * levels,
                actual: p.len(),
            });
        }
        Ok(Self {
            levels,
            p,
            pair_count,
        })
    }
}

/// Count co-occurring pixel pairs at `opts.offset`. With a mask, a pair counts
/// only when both pixels are selected. A matrix with no countable pair comes
/// back all zero with `pair_count == 0`.
pub fn compute_glcm(img: &GrayImage, opts: &GlcmOptions, mask: Option<&[bool]>) -> Result<Glcm> {
    let Offset { dx, dy } = opts.offset;
    if dx == 0 && dy == 0 {
        return Err(Error::InvalidArgument("offset must be non-zero".into()));
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    if let Some(m) = mask {
        if m.len() != img.pixels().len() {
            return Err(Error::DimensionMismatch {
                expected: img.pixels().len(),
                actual: m.len(),
            });
        }
    }
    let g = img.levels() as usize;
    let mut counts = vec![0u64; g * g];
    let (dx, dy) = (i64::from(dx), i64::from(dy));
    let px = img.pixels();

    let x_range = (0.max(-dx), w.min(w - dx));
    let y_range = (0.max(-dy), h.min(h - dy));
    let mut pairs = 0u64;
    for y in y_range.0..y_range.1 {
        for x in x_range.0..x_range.1 {
            let a = (y * w + x) as usize;
            let b = ((y + dy) * w + x + dx) as usize;
            if let Some(m) = mask {
                if !(m[a] && m[b]) {
                    continue;
                }
            }
            let (i, j) = (px[a] as usize, px[b] as usize);
            counts[i * g + j] += 1;
            if opts.symmetric {
                counts[j * g + i] += 1;
            }
            pairs += 1;
        }
    }

    let total: u64 = counts.iter().sum();
    let p = if total == 0 {
        vec![0.0; g * g]
    } else {
        let t = total as f64;
        counts.iter().map(|&c| c as f64 / t).collect()
    };
    Ok(Glcm {
        levels: g,
        p,
        pair_count: pairs,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextureFeatures {
    pub dissimilarity: f64,
    pub uniformity: f64,
    /// Bits.
    pub entropy: f64,
    pub contrast: f64,
    /// Set when the source matrix had no counted pairs; all statistics are 0.
    #[serde(default)]
    pub degenerate: bool,
}

impl TextureFeatures {
    pub fn to_array(&self) -> [f64; STATS_PER_REGION] {
        [self.dissimilarity, self.uniformity, self.entropy, self.contrast]
    }
}

pub fn features_from_glcm(m: &Glcm) -> TextureFeatures {
    if m.is_degenerate() {
        return TextureFeatures {
            degenerate: true,
            ..Default::default()
        };
    }
    let mut f = TextureFeatures::default();
    let g = m.levels;
    for i in 0..g {
        for j in 0..g {
            let c = m.p[i * g + j];
            if c == 0.0 {
                continue;
            }
            let d = i.abs_diff(j) as f64;
            f.dissimilarity += c * d;
            f.uniformity += c * c;
            f.entropy -= c * c.log2();
            f.contrast += c * d * d;
        }
    }
    f
}

/// Convenience: GLCM at the default offset then its statistics.
pub fn region_features(img: &GrayImage, mask: Option<&[bool]>) -> TextureFeatures {
    // the default offset is non-zero and mask sizes are checked by callers
    let m = compute_glcm(img, &GlcmOptions::default(), mask).expect("valid default GLCM input");
    features_from_glcm(&m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: enumerate every ordered pixel pair and test the
    /// displacement directly.
    fn brute_force(img: &GrayImage, off: Offset, mask: Option<&[bool]>, sym: bool) -> Vec<f64> {
        let g = img.levels() as usize;
        let (w, h) = (img.width(), img.height());
        let mut c = vec![0f64; g * g];
        for ya in 0..h {
            for xa in 0..w {
                for yb in 0..h {
                    for xb in 0..w {
                        if xb as i64 - xa as i64 != off.dx as i64
                            || yb as i64 - ya as i64 != off.dy as i64
                        {
                            continue;
                        }
                        if let Some(m) = mask {
                            if !m[ya * w + xa] || !m[yb * w + xb] {
                                continue;
                            }
                        }
                        let (i, j) = (img.get(xa, ya) as usize, img.get(xb, yb) as usize);
                        c[i * g + j] += 1.0;
                        if sym {
                            c[j * g + i] += 1.0;
                        }
                    }
                }
            }
        }
        let t: f64 = c.iter().sum();
        if t > 0.0 {
            c.iter_mut().for_each(|v| *v /= t);
        }
        c
    }

    #[test]
    fn constant_image() {
        let im = GrayImage::filled(4, 4, 4, 2).unwrap();
        let m = compute_glcm(&im, &GlcmOptions::default(), None).unwrap();
        assert_eq!(m.get(2, 2), 1.0);
        assert_eq!(m.pair_count(), 12);
        let f = features_from_glcm(&m);
        assert_eq!(f.to_array(), [0.0, 1.0, 0.0, 0.0]);
        assert!(!f.degenerate);
    }

    #[test]
    fn two_column_image() {
        let im = GrayImage::new(2, 2, 2, vec![0, 1, 0, 1]).unwrap();
        let m = compute_glcm(&im, &GlcmOptions::default(), None).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.5, 0.5, 0.0]);
        let f = features_from_glcm(&m);
        assert_eq!(f.to_array(), [1.0, 0.5, 1.0, 1.0]);
    }

    #[test]
    fn uniform_two_level_matrix() {
        let m = Glcm::from_probabilities(2, vec![0.25; 4], 4).unwrap();
        let f = features_from_glcm(&m);
        assert_eq!(f.to_array(), [0.5, 0.25, 2.0, 0.5]);
    }

    #[test]
    fn all_false_mask_is_degenerate() {
        let im = GrayImage::filled(3, 3, 4, 1).unwrap();
        let mask = vec![false; 9];
        let m = compute_glcm(&im, &GlcmOptions::default(), Some(&mask)).unwrap();
        assert_eq!(m.pair_count(), 0);
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
        let f = features_from_glcm(&m);
        assert!(f.degenerate);
        assert_eq!(f.to_array(), [0.0; 4]);
    }

    #[test]
    fn rejects_bad_input() {
        let im = GrayImage::filled(3, 3, 4, 1).unwrap();
        let zero = GlcmOptions {
            offset: Offset { dx: 0, dy: 0 },
            symmetric: true,
        };
        assert!(compute_glcm(&im, &zero, None).is_err());
        assert!(compute_glcm(&im, &GlcmOptions::default(), Some(&[true; 4])).is_err());
    }

    #[test]
    fn single_column_has_no_horizontal_pairs() {
        let im = GrayImage::filled(1, 5, 4, 1).unwrap();
        assert!(region_features(&im, None).degenerate);
    }

    #[test]
    fn matches_brute_force_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let offsets = [
            Offset { dx: 1, dy: 0 },
            Offset { dx: 0, dy: 1 },
            Offset { dx: -1, dy: 1 },
            Offset { dx: 2, dy: -1 },
        ];
        for _ in 0..300 {
            let (w, h) = (rng.gen_range(1..=10), rng.gen_range(1..=10));
            let g = rng.gen_range(2..=8u32);
            let im = GrayImage::from_fn(w, h, g, |_, _| rng.gen_range(0..g) as u16).unwrap();
            let mask: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.6)).collect();
            let off = offsets[rng.gen_range(0..offsets.len())];
            for sym in [true, false] {
                for mk in [None, Some(&mask[..])] {
                    let opts = GlcmOptions {
                        offset: off,
                        symmetric: sym,
                    };
                    let m = compute_glcm(&im, &opts, mk).unwrap();
                    let oracle = brute_force(&im, off, mk, sym);
                    for (a, b) in m.as_slice().iter().zip(&oracle) {
                        assert!((a - b).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    fn arb_image(max_side: usize, max_g: u32) -> impl Strategy<Value = GrayImage> {
        (1..=max_side, 1..=max_side, 2..=max_g).prop_flat_map(|(w, h, g)| {
            proptest::collection::vec(0..g as u16, w * h)
                .prop_map(move |px| GrayImage::new(w, h, g, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_normalized(im in arb_image(12, 8)) {
            let m = compute_glcm(&im, &GlcmOptions::default(), None).unwrap();
            let g = m.levels();
            for i in 0..g {
                for j in 0..g {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
            if m.pair_count() > 0 {
                let s: f64 = m.as_slice().iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn statistic_bounds(im in arb_image(12, 8)) {
            let m = compute_glcm(&im, &GlcmOptions::default(), None).unwrap();
            prop_assume!(m.pair_count() > 0);
            let g = m.levels() as f64;
            let f = features_from_glcm(&m);
            prop_assert!(f.entropy <= 2.0 * g.log2() + 1e-12);
            prop_assert!(f.uniformity >= 1.0 / (g * g) - 1e-12);
            prop_assert!(f.uniformity <= 1.0 + 1e-12);
            prop_assert!(f.dissimilarity * f.dissimilarity <= f.contrast + 1e-12);
            prop_assert_eq!((f.uniformity - 1.0).abs() < 1e-12, f.entropy.abs() < 1e-12);
        }

        #[test]
        fn gray_shift_invariance(im in arb_image(10, 6), shift in 1u16..4) {
            let g = im.levels() + u32::from(shift);
            let shifted = GrayImage::new(
                im.width(), im.height(), g,
                im.pixels().iter().map(|v| v + shift).collect(),
            ).unwrap();
            let a = region_features(&im, None);
            let b = region_features(&shifted, None);
            for (x, y) in a.to_array().iter().zip(b.to_array()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
