//! Synthetic MIAS-shaped corpora: an `Info.txt` index plus one 8-bit PGM per
//! image. Each class gets its own stripe period so texture features can tell
//! them apart; a black border around every image exercises cropping.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{encode_pgm, ClassLabel, GrayImage, PgmFormat};
use crate::error::Result;

/// Per-class image counts of the 71-image evaluation sample.
pub const MIAS_SAMPLE_COUNTS: [(ClassLabel, usize); 7] = [
    (ClassLabel::Norm, 30),
    (ClassLabel::Calc, 10),
    (ClassLabel::Circ, 7),
    (ClassLabel::Spic, 8),
    (ClassLabel::Misc, 5),
    (ClassLabel::Arch, 7),
    (ClassLabel::Asym, 4),
];

const BORDER: usize = 6;

/// Vertical stripes whose period depends on the class, with random phase,
/// brightness and additive noise, framed by a black border.
pub fn class_texture(label: ClassLabel, size: usize, rng: &mut impl Rng) -> GrayImage {
    let class = ClassLabel::ALL.iter().position(|&c| c == label).unwrap_or(0);
    let period = class + 2;
    let phase = rng.gen_range(0..period);
    let base = rng.gen_range(60..100u16);
    let amplitude = 90u16;
    GrayImage::from_fn(size, size, 256, |x, y| {
        if x < BORDER || y < BORDER || x >= size - BORDER || y >= size - BORDER {
            return 0;
        }
        let on = ((x + phase) % period) < period.div_ceil(2);
        let v = base + if on { amplitude } else { 0 } + rng.gen_range(0..24u16);
        v.min(255)
    })
    .expect("synthetic image dimensions are valid")
}

/// Write `<id>.pgm` files and `Info.txt` into `dir`. Ids are `syn001`, ...
/// in class order. Returns the index text.
pub fn write_corpus(dir: &Path, counts: &[(ClassLabel, usize)], size: usize, seed: u64) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = String::new();
    let mut n = 0;
    for &(label, count) in counts {
        for _ in 0..count {
            n += 1;
            let id = format!("syn{n:03}");
            let img = class_texture(label, size.max(2 * BORDER + 8), &mut rng);
            std::fs::write(dir.join(format!("{id}.pgm")), encode_pgm(&img, PgmFormat::Binary))?;
            let tissue = ["F", "G", "D"][n % 3];
            if label == ClassLabel::Norm {
                writeln!(index, "{id} {tissue} NORM").expect("string write");
            } else {
                let severity = if n % 2 == 0 { "B" } else { "M" };
                let c = size / 2;
                writeln!(index, "{id} {tissue} {label} {severity} {c} {c} {}", size / 8).expect("string write");
            }
        }
    }
    std::fs::write(dir.join("Info.txt"), &index)?;
    Ok(index)
}
