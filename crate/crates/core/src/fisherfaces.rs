//! Two-stage PCA + Fisher linear discriminant ("Fisherfaces").
//!
//! Features are z-scored, projected by PCA onto at most `N - c` directions so
//! the within-class scatter becomes invertible, and then reduced to at most
//! `c - 1` discriminant directions. The generalized eigenproblem
//! `S_b w = λ S_w w` is solved by whitening `S_w` rather than inverting it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::textmodel;

/// Relative eigenvalue cut used for rank decisions and whitening floors.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ScatterSet {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
    pub total: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Distinct labels in ascending order, matching `class_means`.
    pub classes: Vec<usize>,
    pub class_means: Vec<DVector<f64>>,
    pub class_counts: Vec<usize>,
}

pub fn to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<DMatrix<f64>> {
    let n = rows.first().map_or(0, |r| r.as_ref().len());
    if let Some(r) = rows.iter().find(|r| r.as_ref().len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: r.as_ref().len(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i].as_ref()[j]))
}

fn distinct_labels(labels: &[usize]) -> Vec<usize> {
    let mut c = labels.to_vec();
    c.sort_unstable();
    c.dedup();
    c
}

/// Between-, within- and total-class scatter of the rows of `x`.
pub fn compute_scatter(x: &DMatrix<f64>, labels: &[usize]) -> Result<ScatterSet> {
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let classes = distinct_labels(labels);
    if classes.len() < 2 {
        return Err(Error::InvalidArgument(
            "scatter matrices need at least two classes".into(),
        ));
    }
    let n = x.ncols();
    let mean = x.row_mean().transpose();
    let mut class_means = Vec::with_capacity(classes.len());
    let mut class_counts = Vec::with_capacity(classes.len());
    let mut between = DMatrix::zeros(n, n);
    let mut within = DMatrix::zeros(n, n);
    for &c in &classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let mut mu = DVector::zeros(n);
        for &i in &members {
            mu += x.row(i).transpose();
        }
        mu /= members.len() as f64;
        let d = &mu - &mean;
        between.ger(members.len() as f64, &d, &d, 1.0);
        for &i in &members {
            let e = x.row(i).transpose() - &mu;
            within.ger(1.0, &e, &e, 1.0);
        }
        class_means.push(mu);
        class_counts.push(members.len());
    }
    let mut total = DMatrix::zeros(n, n);
    for i in 0..x.nrows() {
        let e = x.row(i).transpose() - &mean;
        total.ger(1.0, &e, &e, 1.0);
    }
    Ok(ScatterSet {
        between,
        within,
        total,
        mean,
        classes,
        class_means,
        class_counts,
    })
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Flip each column so its largest-magnitude component is positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = (0usize, 0.0f64);
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best.1 {
                best = (i, v.abs());
            }
        }
        if col[best.0] < 0.0 {
            col.neg_mut();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// `n`×`d`, orthonormal columns by descending variance.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn fit_pca(x: &DMatrix<f64>, target_dim: usize) -> Result<Pca> {
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument("PCA needs at least two samples".into()));
    }
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let (basis, eigenvalues) = pca_centered(&centered, target_dim)?;
    Ok(Pca {
        mean,
        basis,
        eigenvalues,
    })
}

fn pca_centered(centered: &DMatrix<f64>, target_dim: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let total = centered.transpose() * centered;
    let (values, vectors) = sorted_eigen(&total);
    let largest = values.first().copied().unwrap_or(0.0);
    if largest.is_nan() || largest <= 0.0 {
        return Err(Error::InvalidArgument("data has zero variance".into()));
    }
    let rank = values.iter().filter(|&&v| v > EIGEN_FLOOR * largest).count();
    let d = target_dim.min(rank);
    let mut basis = vectors.columns(0, d).into_owned();
    fix_signs(&mut basis);
    Ok((basis, values[..d].to_vec()))
}

/// Fitted Fisherfaces projection `y = W_fldᵀ W_pcaᵀ (s ∘ (x − μ))`, where `s`
/// holds the reciprocal column standard deviations (0 for constant columns).
#[derive(Clone, Debug, PartialEq)]
pub struct FisherModel {
    pub mean: DVector<f64>,
    pub scale: DVector<f64>,
    /// `n`×`d_pca`.
    pub w_pca: DMatrix<f64>,
    /// `d_pca`×`m`.
    pub w_fld: DMatrix<f64>,
    /// Discriminant eigenvalues of the kept directions.
    pub eigenvalues: Vec<f64>,
    /// Set when fewer than `c − 1` directions carried between-class scatter.
    pub rank_deficient: bool,
}

impl FisherModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.w_fld.ncols()
    }

    /// Composite input-space directions `diag(s) W_pca W_fld` (`n`×`m`).
    pub fn directions(&self) -> DMatrix<f64> {
        let mut w = &self.w_pca * &self.w_fld;
        for (mut row, s) in w.row_iter_mut().zip(self.scale.iter()) {
            row *= *s;
        }
        w
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let z = DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.mean.iter().zip(self.scale.iter()))
                .map(|(v, (m, s))| (v - m) * s),
        );
        let y = self.w_fld.tr_mul(&self.w_pca.tr_mul(&z));
        Ok(y.iter().copied().collect())
    }

    pub fn write_text(&self, w: &mut impl std::io::Write, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            for line in c.lines() {
                writeln!(w, "# {line}")?;
            }
        }
        writeln!(
            w,
            "fisherfaces {} {} {} {}",
            self.input_dim(),
            self.w_pca.ncols(),
            self.output_dim(),
            u8::from(self.rank_deficient)
        )?;
        textmodel::write_row(w, "mean", self.mean.iter().copied())?;
        textmodel::write_row(w, "scale", self.scale.iter().copied())?;
        textmodel::write_row(w, "eigenvalues", self.eigenvalues.iter().copied())?;
        for row in self.w_pca.row_iter() {
            textmodel::write_row(w, "pca", row.iter().copied())?;
        }
        for row in self.w_fld.row_iter() {
            textmodel::write_row(w, "fld", row.iter().copied())?;
        }
        Ok(())
    }

    pub fn to_text(&self, comment: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf, comment).expect("in-memory write");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = textmodel::Reader::new(text);
        let dims = r.dims("fisherfaces", 4)?;
        let (n, d, m) = (dims[0], dims[1], dims[2]);
        let mean = DVector::from_vec(r.row_of("mean", n)?);
        let scale = DVector::from_vec(r.row_of("scale", n)?);
        let eigenvalues = r.row_of("eigenvalues", m)?;
        let mut pca = Vec::with_capacity(n * d);
        for _ in 0..n {
            pca.extend(r.row_of("pca", d)?);
        }
        let mut fld = Vec::with_capacity(d * m);
        for _ in 0..d {
            fld.extend(r.row_of("fld", m)?);
        }
        r.finish()?;
        Ok(Self {
            mean,
            scale,
            w_pca: DMatrix::from_row_slice(n, d, &pca),
            w_fld: DMatrix::from_row_slice(d, m, &fld),
            eigenvalues,
            rank_deficient: dims[3] != 0,
        })
    }
}

/// Fit on `rows` (one sample each) with class `labels`. Returns the model and
/// the projected training scores.
pub fn fit_fisherfaces<R: AsRef<[f64]>>(
    rows: &[R],
    labels: &[usize],
) -> Result<(FisherModel, Vec<Vec<f64>>)> {
    let x = to_matrix(rows)?;
    if x.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: labels.len(),
        });
    }
    let n_samples = x.nrows();
    let c = distinct_labels(labels).len();
    if c < 2 {
        return Err(Error::InvalidArgument("Fisherfaces needs at least two classes".into()));
    }
    if n_samples <= c {
        return Err(Error::InvalidArgument(format!(
            "Fisherfaces needs more samples ({n_samples}) than classes ({c})"
        )));
    }

    // z-score columns
    let mean = x.row_mean().transpose();
    let scale = DVector::from_iterator(
        x.ncols(),
        x.column_iter().zip(mean.iter()).map(|(col, m)| {
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_samples as f64;
            if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 }
        }),
    );
    let mut z = x.clone();
    for mut row in z.row_iter_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean.iter()).zip(scale.iter()) {
            *v = (*v - m) * s;
        }
    }

    let (w_pca, _) = pca_centered(&z, n_samples - c)?;
    let y = &z * &w_pca;
    let scatter = compute_scatter(&y, labels)?;

    let (sw_values, sw_vectors) = sorted_eigen(&scatter.within);
    let sw_max = sw_values.first().copied().unwrap_or(0.0);
    if !sw_max.is_finite() || sw_max <= 0.0 {
        return Err(Error::SingularScatter {
            condition: f64::INFINITY,
        });
    }
    let sw_min = sw_values.last().copied().unwrap_or(0.0);
    // whitening transform P with Pᵀ S_w P = I (floored eigenvalues if needed)
    let whiten = match scatter.within.clone().cholesky() {
        Some(chol) if sw_min > EIGEN_FLOOR * sw_max => {
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(y.ncols(), y.ncols()))
                .ok_or(Error::SingularScatter {
                    condition: sw_max / sw_min,
                })?;
            l_inv.transpose()
        }
        _ => {
            let floor = EIGEN_FLOOR * sw_max;
            let mut p = sw_vectors.clone();
            for (mut col, &l) in p.column_iter_mut().zip(&sw_values) {
                col /= l.max(floor).sqrt();
            }
            p
        }
    };
    let reduced_between = whiten.transpose() * &scatter.between * &whiten;
    let (sb_values, sb_vectors) = sorted_eigen(&reduced_between);
    let sb_max = sb_values.first().copied().unwrap_or(0.0);
    if sb_max.is_nan() || sb_max <= 0.0 {
        return Err(Error::NoDiscriminant);
    }
    let rank_b = sb_values.iter().filter(|&&v| v > EIGEN_FLOOR * sb_max).count();
    let m = (c - 1).min(rank_b);
    let rank_deficient = m < c - 1;
    if rank_deficient {
        log::warn!("between-class scatter has rank {rank_b}; keeping {m} of {} directions", c - 1);
    }
    let mut w_fld = &whiten * sb_vectors.columns(0, m);
    fix_signs(&mut w_fld);

    let scores = &y * &w_fld;
    let scores = scores.row_iter().map(|r| r.iter().copied().collect()).collect();
    let model = FisherModel {
        mean,
        scale,
        w_pca,
        w_fld,
        eigenvalues: sb_values[..m].to_vec(),
        rank_deficient,
    };
    Ok((model, scores))
}
