//! The five decorrelating transforms and their application to datasets.
//!
//! Every fit works from first and second moments, so the same code serves
//! sample data (via [`Moments::from_data`]) and the analytic covariances of
//! the 2D theory checks. Covariance-type matrices are passed through
//! [`regularize_spd`] before any factorization.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{rescale_rows_max_abs, Dataset};
use crate::error::{shape_err, Error, Result};
use crate::io::{f64s_from_bytes, split_header, write_f64s};
use crate::linalg::{
    cholesky, covariance, inv_sqrt, invert_lower_triangular, regularize_spd, sym_eig,
    Matrix, SymMatrix,
};

pub const TRANSFORM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhiteningMethod {
    None,
    Sphering,
    SymOrth,
    Osp,
    Cholesky,
    PartialRegression,
}

impl WhiteningMethod {
    pub const ALL: [WhiteningMethod; 6] = [
        WhiteningMethod::None,
        WhiteningMethod::Sphering,
        WhiteningMethod::SymOrth,
        WhiteningMethod::Osp,
        WhiteningMethod::Cholesky,
        WhiteningMethod::PartialRegression,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WhiteningMethod::None => "none",
            WhiteningMethod::Sphering => "sphering",
            WhiteningMethod::SymOrth => "sym-orth",
            WhiteningMethod::Osp => "osp",
            WhiteningMethod::Cholesky => "cholesky",
            WhiteningMethod::PartialRegression => "partial-regression",
        }
    }
}

impl fmt::Display for WhiteningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WhiteningMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        WhiteningMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .or(match key.as_str() {
                "zca" => Some(WhiteningMethod::Sphering),
                "symorth" | "symmetric-orthogonalization" => Some(WhiteningMethod::SymOrth),
                "pr" => Some(WhiteningMethod::PartialRegression),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidInput(format!("unknown whitening method {s:?}")))
    }
}

/// Sample moments a transform is fitted from.
#[derive(Debug, Clone)]
pub struct Moments {
    pub cov: SymMatrix,
    pub mean: Vec<f64>,
    /// Sample count; only the symmetric-orthogonalization scatter uses it.
    pub n: usize,
}

impl Moments {
    pub fn from_data(data: &Matrix) -> Result<Self> {
        let (cov, mean) = covariance(data)?;
        Ok(Self {
            cov,
            mean,
            n: data.rows(),
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub method: WhiteningMethod,
    /// Centering vector subtracted before `matrix` is applied.
    pub mean: Vec<f64>,
    pub matrix: Matrix,
    /// Feature ordering used by Cholesky whitening (`ordering[k]` is the
    /// original index of the k-th feature in the elimination order).
    pub ordering: Option<Vec<usize>>,
}

impl WhiteningTransform {
    pub fn fit_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            method: WhiteningMethod::None,
            mean: vec![0.0; dim],
            matrix: Matrix::identity(dim),
            ordering: None,
        }
    }
}

/// Fits `method` on an `N × D` training matrix (rows are samples).
pub fn fit(method: WhiteningMethod, data: &Matrix, ordering: Option<&[usize]>) -> Result<WhiteningTransform> {
    if method == WhiteningMethod::None {
        if !data.is_finite() {
            return Err(Error::InvalidInput("data has non-finite entries".into()));
        }
        return Ok(WhiteningTransform::identity(data.cols()));
    }
    fit_from_moments(method, &Moments::from_data(data)?, ordering)
}

pub fn fit_from_moments(
    method: WhiteningMethod,
    moments: &Moments,
    ordering: Option<&[usize]>,
) -> Result<WhiteningTransform> {
    let matrix = match method {
        WhiteningMethod::None => Matrix::identity(moments.dim()),
        WhiteningMethod::Sphering => sphering_matrix(&moments.cov)?,
        WhiteningMethod::SymOrth => sym_orth_matrix(&moments.cov, moments.n)?,
        WhiteningMethod::Osp => osp_matrix(&moments.cov)?,
        WhiteningMethod::Cholesky => {
            let ord = match ordering {
                Some(o) => o.to_vec(),
                None => (0..moments.dim()).collect(),
            };
            let m = cholesky_matrix(&moments.cov, &ord)?;
            return Ok(WhiteningTransform {
                method,
                mean: moments.mean.clone(),
                matrix: m,
                ordering: Some(ord),
            });
        }
        WhiteningMethod::PartialRegression => partial_regression_matrix(&moments.cov)?,
    };
    let mean = if method == WhiteningMethod::None {
        vec![0.0; moments.dim()]
    } else {
        moments.mean.clone()
    };
    Ok(WhiteningTransform {
        method,
        mean,
        matrix,
        ordering: None,
    })
}

pub fn fit_sphering(data: &Matrix) -> Result<WhiteningTransform> {
    fit(WhiteningMethod::Sphering, data, None)
}

pub fn fit_sym_orth(data: &Matrix) -> Result<WhiteningTransform> {
    fit(WhiteningMethod::SymOrth, data, None)
}

pub fn fit_osp(data: &Matrix) -> Result<WhiteningTransform> {
    fit(WhiteningMethod::Osp, data, None)
}

pub fn fit_cholesky(data: &Matrix, ordering: Option<&[usize]>) -> Result<WhiteningTransform> {
    fit(WhiteningMethod::Cholesky, data, ordering)
}

pub fn fit_partial_regression(data: &Matrix) -> Result<WhiteningTransform> {
    fit(WhiteningMethod::PartialRegression, data, None)
}

/// `Σ^{-1/2}`.
pub fn sphering_matrix(cov: &SymMatrix) -> Result<Matrix> {
    Ok(inv_sqrt(&regularize_spd(cov)?)?.into_matrix())
}

/// Symmetric orthogonalization from the diagonally scaled scatter matrix.
///
/// With scatter `D = (N−1)Σ` and `Dₛ = diag(√D_ii)`, the scaled scatter
/// `S = Dₛ D Dₛ` gives `W₀ = Dₛ S^{-1/2} Dₛ`, whose outputs are uncorrelated
/// with variances `Σ_ii`. Rows are then divided by `√Σ_ii` so the outputs
/// have unit variance.
pub fn sym_orth_matrix(cov: &SymMatrix, n: usize) -> Result<Matrix> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("scatter needs N >= 2, got {n}")));
    }
    let cov = regularize_spd(cov)?;
    let scatter = cov.matrix().scale((n - 1) as f64);
    let dsc: Vec<f64> = scatter.diag().iter().map(|v| v.sqrt()).collect();
    let scaled = SymMatrix::symmetrize(&scatter.scale_rows(&dsc).scale_cols(&dsc))?;
    let s_inv_sqrt = inv_sqrt(&regularize_spd(&scaled)?)?;
    let w0 = s_inv_sqrt.matrix().scale_rows(&dsc).scale_cols(&dsc);
    let inv_std: Vec<f64> = cov.matrix().diag().iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(w0.scale_rows(&inv_std))
}

/// `Corr^{-1/2} V^{-1/2}`: correlation-matrix whitening composed with
/// standardization.
pub fn osp_matrix(cov: &SymMatrix) -> Result<Matrix> {
    let cov = regularize_spd(cov)?;
    let inv_std: Vec<f64> = cov.matrix().diag().iter().map(|v| 1.0 / v.sqrt()).collect();
    let corr = SymMatrix::symmetrize(&cov.matrix().scale_rows(&inv_std).scale_cols(&inv_std))?;
    let r = inv_sqrt(&regularize_spd(&corr)?)?;
    Ok(r.matrix().scale_cols(&inv_std))
}

fn validate_ordering(ordering: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if ordering.len() != dim {
        return Err(shape_err(dim, ordering.len()));
    }
    for &o in ordering {
        if o >= dim || std::mem::replace(&mut seen[o], true) {
            return Err(Error::InvalidInput(format!(
                "ordering {ordering:?} is not a permutation of 0..{dim}"
            )));
        }
    }
    Ok(())
}

/// `Pᵀ L⁻¹ P` where `L Lᵀ` is the Cholesky factorization of the covariance
/// of the reordered features.
pub fn cholesky_matrix(cov: &SymMatrix, ordering: &[usize]) -> Result<Matrix> {
    let d = cov.dim();
    validate_ordering(ordering, d)?;
    let permuted = SymMatrix::new(cov.matrix().select(ordering, ordering))?;
    let l = cholesky(&regularize_spd(&permuted)?)?;
    let linv = invert_lower_triangular(&l)?;
    let mut w = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            w[(ordering[a], ordering[b])] = linv[(a, b)];
        }
    }
    Ok(w)
}

/// Row `d` maps a sample to the unit-variance residual of feature `d`
/// regressed on all other features.
///
/// By block inversion the regression coefficients are `−P_dj / P_dd` and the
/// residual variance is `1 / P_dd` with `P = Σ⁻¹`, so row `d` is
/// `P_d· / √P_dd`. Every `P_dd > 0` once `Σ` is regularized to be SPD.
pub fn partial_regression_matrix(cov: &SymMatrix) -> Result<Matrix> {
    let cov = regularize_spd(cov)?;
    let eig = sym_eig(&cov)?;
    let min = eig.min_value();
    if min <= 0.0 {
        return Err(Error::NotSpd(min));
    }
    let prec = eig.reconstruct_with(|l| 1.0 / l);
    let d = cov.dim();
    let mut w = Matrix::zeros(d, d);
    for t in 0..d {
        let p_tt = prec[(t, t)];
        if !(p_tt > 0.0) {
            return Err(Error::NotSpd(p_tt));
        }
        let scale = 1.0 / p_tt.sqrt();
        for j in 0..d {
            w[(t, j)] = prec[(t, j)] * scale;
        }
    }
    Ok(w)
}

/// `z = W (x − mean)` for every row of `batch`, without rescaling.
pub fn apply_raw(transform: &WhiteningTransform, batch: &Matrix) -> Result<Matrix> {
    let d = transform.fit_dim();
    if batch.cols() != d {
        return Err(shape_err(d, batch.cols()));
    }
    if transform.method == WhiteningMethod::None {
        return Ok(batch.clone());
    }
    let mut out = Matrix::zeros(batch.rows(), d);
    let mut centered = vec![0.0; d];
    for i in 0..batch.rows() {
        for ((c, x), m) in centered.iter_mut().zip(batch.row(i)).zip(&transform.mean) {
            *c = x - m;
        }
        let z = transform.matrix.matvec(&centered)?;
        out.row_mut(i).copy_from_slice(&z);
    }
    Ok(out)
}

/// Dataset-pipeline application: transform then rescale each sample to `[−1, 1]`.
pub fn apply(transform: &WhiteningTransform, batch: &Matrix) -> Result<Matrix> {
    let mut out = apply_raw(transform, batch)?;
    rescale_rows_max_abs(&mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WhitenedDataset {
    pub method: WhiteningMethod,
    pub transform: WhiteningTransform,
    /// Same labels, masks and splits as the source; pixels transformed.
    pub data: Dataset,
}

/// Fits on the train split only and transforms every sample.
pub fn whiten_dataset(
    source: &Dataset,
    method: WhiteningMethod,
    ordering: Option<&[usize]>,
) -> Result<WhitenedDataset> {
    let train = source.pixel_matrix(&source.splits.train);
    let transform = fit(method, &train, ordering)?;
    let all: Vec<usize> = (0..source.len()).collect();
    let pixels = apply(&transform, &source.pixel_matrix(&all))?;
    let mut data = source.clone();
    for (i, s) in data.samples.iter_mut().enumerate() {
        s.pixels = pixels.row(i).to_vec();
    }
    Ok(WhitenedDataset {
        method,
        transform,
        data,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct TransformHeader {
    format_version: u32,
    method: WhiteningMethod,
    dim: usize,
    ordering: Option<Vec<usize>>,
}

impl WhiteningTransform {
    /// JSON header line, then little-endian f64 mean and row-major matrix.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = TransformHeader {
            format_version: TRANSFORM_FORMAT_VERSION,
            method: self.method,
            dim: self.fit_dim(),
            ordering: self.ordering.clone(),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        write_f64s(&mut out, &self.mean).expect("vec write");
        write_f64s(&mut out, self.matrix.as_slice()).expect("vec write");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = split_header(bytes)?;
        let header: TransformHeader = serde_json::from_value(header)?;
        if header.format_version != TRANSFORM_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported transform format version {}",
                header.format_version
            )));
        }
        let d = header.dim;
        let values = f64s_from_bytes(payload)?;
        if values.len() != d + d * d {
            return Err(Error::Format(format!(
                "expected {} floats, found {}",
                d + d * d,
                values.len()
            )));
        }
        Ok(Self {
            method: header.method,
            mean: values[..d].to_vec(),
            matrix: Matrix::from_vec(d, d, values[d..].to_vec())?,
            ordering: header.ordering,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Rows drawn from N(0, Σ) via a fixed mixing matrix; exactly centered and
    /// re-scaled so the sample covariance equals `target` to rounding.
    fn data_with_covariance(target: &SymMatrix, n: usize, seed: u64) -> Matrix {
        let d = target.dim();
        let mut rng = stream(seed, "whitening-test", 0);
        let raw = Matrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        // whiten the raw sample exactly, then colour it with chol(target)
        let (cov, mean) = covariance(&raw).unwrap();
        let l0 = cholesky(&cov).unwrap();
        let l0inv = invert_lower_triangular(&l0).unwrap();
        let l = cholesky(target).unwrap();
        let map = l.matmul(&l0inv).unwrap();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let c: Vec<f64> = raw.row(i).iter().zip(&mean).map(|(x, m)| x - m).collect();
            out.row_mut(i).copy_from_slice(&map.matvec(&c).unwrap());
        }
        out
    }

    fn transformed_cov(t: &WhiteningTransform, data: &Matrix) -> SymMatrix {
        covariance(&apply_raw(t, data).unwrap()).unwrap().0
    }

    fn suppressor_cov(s1: f64, s2: f64, c: f64) -> SymMatrix {
        SymMatrix::from_rows(&[[s1 * s1 + 1.0, c * s1 * s2], [c * s1 * s2, s2 * s2]]).unwrap()
    }

    #[test]
    fn identity_covariance_maps_to_identity_for_all_methods() {
        let data = data_with_covariance(&SymMatrix::identity(3), 500, 1);
        for method in WhiteningMethod::ALL {
            let t = fit(method, &data, None).unwrap();
            assert!(
                t.matrix.max_abs_diff(&Matrix::identity(3)) < 1e-6,
                "{method}: {:?}",
                t.matrix
            );
        }
    }

    #[test]
    fn sphering_diagonal_case() {
        let cov = SymMatrix::from_diag(&[2.0, 1.0]);
        let w = sphering_matrix(&cov).unwrap();
        let expected = Matrix::from_diag(&[1.0 / 2.0_f64.sqrt(), 1.0]);
        assert!(w.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn sphering_matches_closed_form_for_suppressor_covariance() {
        let (s1, s2, c): (f64, f64, f64) = (1.0, 1.0, 0.8);
        let alpha = (4.0 * s1 * s1 * s2 * s2 * c * c + (s1 * s1 - s2 * s2 + 1.0).powi(2)).sqrt();
        let beta = s1 * s1 + s2 * s2 + 1.0;
        let gamma = (8.0 * s1 * s1 * s2 * s2 * c * c + 2.0 * (s1 * s1 - s2 * s2 + 1.0).powi(2)).sqrt();
        let (dm, dp) = ((beta - alpha).sqrt(), (alpha + beta).sqrt());
        let diag1 = ((alpha + s1 * s1 - s2 * s2 + 1.0) / dp + (alpha - s1 * s1 + s2 * s2 - 1.0) / dm) / gamma;
        let diag2 = ((alpha + s1 * s1 - s2 * s2 + 1.0) / dm + (alpha - s1 * s1 + s2 * s2 - 1.0) / dp) / gamma;
        let off = s1 * c * (dm - dp)
            / (2.0_f64.sqrt() * (-((s1 * s1 * (c * c - 1.0) - 1.0) * alpha * alpha)).sqrt());
        let expected = Matrix::from_rows(&[[diag1, off], [off, diag2]]).unwrap();
        let data = data_with_covariance(&suppressor_cov(s1, s2, c), 2000, 3);
        let t = fit_sphering(&data).unwrap();
        assert!(t.matrix.max_abs_diff(&expected) < 1e-6, "{:?}", t.matrix);
        assert!(t.matrix.is_symmetric(1e-12));
    }

    #[test]
    fn sphering_satisfies_whitening_condition() {
        let cov = suppressor_cov(0.5, 2.0, -0.3);
        let data = data_with_covariance(&cov, 1000, 4);
        let t = fit_sphering(&data).unwrap();
        let (sample_cov, _) = covariance(&data).unwrap();
        let wtw_s = t
            .matrix
            .transpose()
            .matmul(&t.matrix)
            .unwrap()
            .matmul(sample_cov.matrix())
            .unwrap();
        assert!(wtw_s.max_abs_diff(&Matrix::identity(2)) < 1e-6);
    }

    #[test]
    fn decorrelating_methods_give_identity_covariance() {
        let cov = SymMatrix::from_rows(&[[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]]).unwrap();
        let data = data_with_covariance(&cov, 800, 5);
        for method in [
            WhiteningMethod::Sphering,
            WhiteningMethod::SymOrth,
            WhiteningMethod::Osp,
            WhiteningMethod::Cholesky,
        ] {
            let t = fit(method, &data, None).unwrap();
            let out = transformed_cov(&t, &data);
            assert!(
                out.matrix().max_abs_diff(&Matrix::identity(3)) < 1e-6,
                "{method}: {:?}",
                out
            );
        }
    }

    #[test]
    fn sym_orth_rows_are_standardized_scaled_scatter_transform() {
        // Unstandardized scaled-scatter transform has output variances Σ_ii;
        // dividing rows by √Σ_ii must give exactly the fitted matrix.
        let cov = suppressor_cov(1.0, 1.0, 0.8);
        for n in [100usize, 1000] {
            let scatter = cov.matrix().scale((n - 1) as f64);
            let dsc: Vec<f64> = scatter.diag().iter().map(|v| v.sqrt()).collect();
            let s = SymMatrix::symmetrize(&scatter.scale_rows(&dsc).scale_cols(&dsc)).unwrap();
            let w0 = inv_sqrt(&s).unwrap().matrix().scale_rows(&dsc).scale_cols(&dsc);
            let out0 = w0.matmul(cov.matrix()).unwrap().matmul(&w0.transpose()).unwrap();
            assert!((out0[(0, 1)]).abs() < 1e-9);
            assert!((out0[(0, 0)] - 2.0).abs() < 1e-9 && (out0[(1, 1)] - 1.0).abs() < 1e-9);
            let w = sym_orth_matrix(&cov, n).unwrap();
            let std = [2.0_f64.sqrt(), 1.0];
            assert!(w0.scale_rows(&[1.0 / std[0], 1.0 / std[1]]).max_abs_diff(&w) < 1e-12);
        }
    }

    #[test]
    fn sym_orth_and_overlap_variant_differ_by_a_rotation() {
        // Both whiten the same covariance, so W_sym · W_ovl⁻¹ is orthogonal.
        let cov = suppressor_cov(1.0, 1.0, 0.8);
        let data = data_with_covariance(&cov, 1000, 6);
        let t = fit_sym_orth(&data).unwrap();
        let (sample_cov, mean) = covariance(&data).unwrap();
        let overlap = Matrix::from_fn(2, 2, |i, j| sample_cov[(i, j)] + mean[i] * mean[j]);
        let w_ovl = inv_sqrt(&SymMatrix::symmetrize(&overlap).unwrap()).unwrap();
        let w_ovl_inv = w_ovl.matrix().matmul(&overlap).unwrap();
        let q = t.matrix.matmul(&w_ovl_inv).unwrap();
        let qqt = q.matmul(&q.transpose()).unwrap();
        assert!(qqt.max_abs_diff(&Matrix::identity(2)) < 1e-9);
        let out = transformed_cov(&t, &data);
        assert!(out[(0, 1)].abs() < 1e-6);
    }

    #[test]
    fn osp_matches_closed_form() {
        let (s1, s2, c): (f64, f64, f64) = (1.0, 1.0, 0.8);
        let a = (s1 * s1 + 1.0).sqrt();
        let b = a * s1 * c;
        let g = (1.0 - s1 * s1 * (c * c - 1.0)).sqrt();
        let (rm, rp) = ((-b + s1 * s1 + 1.0).sqrt(), (b + s1 * s1 + 1.0).sqrt());
        let expected = Matrix::from_rows(&[
            [(rm + rp) / (2.0 * a * g), (rm - rp) / (2.0 * s2 * g)],
            [
                ((1.0 - s1 * c / a).sqrt() - (s1 * c / a + 1.0).sqrt()) / (2.0 * g),
                (rm + rp) / (2.0 * s2 * g),
            ],
        ])
        .unwrap();
        let data = data_with_covariance(&suppressor_cov(s1, s2, c), 2000, 7);
        let t = fit_osp(&data).unwrap();
        assert!(t.matrix.max_abs_diff(&expected) < 1e-6, "{:?}", t.matrix);
    }

    #[test]
    fn osp_uncorrelated_case_is_standardization() {
        let (s1, s2) = (0.5, 2.0);
        let cov = suppressor_cov(s1, s2, 0.0);
        let w = osp_matrix(&cov).unwrap();
        let expected = Matrix::from_diag(&[1.0 / (s1 * s1 + 1.0_f64).sqrt(), 1.0 / s2]);
        assert!(w.max_abs_diff(&expected) < 1e-12);
    }

    #[test]
    fn osp_standardized_uncorrelated_data_is_identity() {
        let data = data_with_covariance(&SymMatrix::identity(4), 300, 8);
        assert!(fit_osp(&data).unwrap().matrix.max_abs_diff(&Matrix::identity(4)) < 1e-6);
    }

    #[test]
    fn cholesky_default_ordering_closed_form() {
        let data = data_with_covariance(&suppressor_cov(1.0, 1.0, 0.8), 2000, 9);
        let t = fit_cholesky(&data, None).unwrap();
        let expected =
            Matrix::from_rows(&[[1.0 / 2.0_f64.sqrt(), 0.0], [-0.4851, 1.2127]]).unwrap();
        assert!(t.matrix.max_abs_diff(&expected) < 1e-3, "{:?}", t.matrix);
        assert!(t.matrix.is_lower_triangular(0.0));
        assert_eq!(t.ordering.as_deref(), Some(&[0usize, 1][..]));
    }

    #[test]
    fn cholesky_first_feature_only_scaled() {
        let cov = SymMatrix::from_rows(&[[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]]).unwrap();
        for ordering in [[0usize, 1, 2], [2, 0, 1], [1, 2, 0]] {
            let w = cholesky_matrix(&cov, &ordering).unwrap();
            let first = ordering[0];
            for j in 0..3 {
                if j != first {
                    assert_eq!(w[(first, j)], 0.0);
                }
            }
            assert!((w[(first, first)] - 1.0 / cov[(first, first)].sqrt()).abs() < 1e-15);
            let out = w.matmul(cov.matrix()).unwrap().matmul(&w.transpose()).unwrap();
            assert!(out.max_abs_diff(&Matrix::identity(3)) < 1e-12);
            // lower triangular in the permuted basis
            let permuted = w.select(&ordering, &ordering);
            assert!(permuted.is_lower_triangular(0.0));
        }
    }

    #[test]
    fn cholesky_rejects_bad_ordering() {
        let cov = SymMatrix::identity(3);
        assert!(cholesky_matrix(&cov, &[0, 0, 1]).is_err());
        assert!(cholesky_matrix(&cov, &[0, 1]).is_err());
    }

    #[test]
    fn partial_regression_closed_form() {
        let (s1, s2, c): (f64, f64, f64) = (1.0, 1.0, 0.8);
        let cov = suppressor_cov(s1, s2, c);
        let beta1 = s1 * s2 * c / (s2 * s2);
        let var1 = (s1 * s1 + 1.0) - beta1 * beta1 * s2 * s2;
        let beta2 = s1 * s2 * c / (s1 * s1 + 1.0);
        let var2 = s2 * s2 - beta2 * beta2 * (s1 * s1 + 1.0);
        let expected = Matrix::from_rows(&[
            [1.0 / var1.sqrt(), -beta1 / var1.sqrt()],
            [-beta2 / var2.sqrt(), 1.0 / var2.sqrt()],
        ])
        .unwrap();
        let data = data_with_covariance(&cov, 2000, 10);
        let t = fit_partial_regression(&data).unwrap();
        assert!(t.matrix.max_abs_diff(&expected) < 1e-6, "{:?}", t.matrix);
    }

    #[test]
    fn partial_regression_rows_match_precision_matrix() {
        // independent route: row d of W is (Σ⁻¹)_d· / √(Σ⁻¹)_dd
        let cov = SymMatrix::from_rows(&[
            [2.0, 0.6, -0.3, 0.1],
            [0.6, 1.0, 0.2, 0.0],
            [-0.3, 0.2, 0.5, 0.1],
            [0.1, 0.0, 0.1, 0.8],
        ])
        .unwrap();
        let l = cholesky(&cov).unwrap();
        let linv = invert_lower_triangular(&l).unwrap();
        let prec = linv.transpose().matmul(&linv).unwrap();
        let w = partial_regression_matrix(&cov).unwrap();
        for d in 0..4 {
            for j in 0..4 {
                let expected = prec[(d, j)] / prec[(d, d)].sqrt();
                assert!((w[(d, j)] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn partial_regression_residual_orthogonality() {
        let cov = SymMatrix::from_rows(&[[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]]).unwrap();
        let data = data_with_covariance(&cov, 600, 11);
        let t = fit_partial_regression(&data).unwrap();
        let z = apply_raw(&t, &data).unwrap();
        let n = data.rows() as f64;
        let (_, zmean) = covariance(&z).unwrap();
        let (_, xmean) = covariance(&data).unwrap();
        for d in 0..3 {
            for j in 0..3 {
                let c: f64 = (0..data.rows())
                    .map(|i| (z[(i, d)] - zmean[d]) * (data[(i, j)] - xmean[j]))
                    .sum::<f64>()
                    / (n - 1.0);
                if j != d {
                    assert!(c.abs() < 1e-6, "out {d} vs in {j}: {c}");
                }
            }
            let var: f64 = (0..data.rows()).map(|i| (z[(i, d)] - zmean[d]).powi(2)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn partial_regression_on_rank_deficient_data() {
        // 8 features spanned by 3 latent factors
        let latent = data_with_covariance(&SymMatrix::identity(3), 500, 12);
        let data = Matrix::from_fn(500, 8, |i, j| {
            latent[(i, j % 3)] + 0.5 * latent[(i, (j + 1) % 3)] * (j / 3) as f64
        });
        let t = fit_partial_regression(&data).unwrap();
        assert!(t.matrix.is_finite());
        assert!(apply_raw(&t, &data).unwrap().is_finite());
    }

    #[test]
    fn apply_rules() {
        let data = Matrix::from_rows(&[[0.5, -1.0], [1.0, 0.25]]).unwrap();
        let t = fit(WhiteningMethod::None, &data, None).unwrap();
        assert_eq!(apply(&t, &data).unwrap(), data);

        let cov = suppressor_cov(1.0, 1.0, 0.8);
        let train = data_with_covariance(&cov, 300, 12);
        let t = fit_sphering(&train).unwrap();
        let at_mean = Matrix::from_rows(std::slice::from_ref(&t.mean)).unwrap();
        assert_eq!(apply_raw(&t, &at_mean).unwrap().row(0), &[0.0, 0.0]);
        assert!(transformed_cov(&t, &train).matrix().max_abs_diff(&Matrix::identity(2)) < 1e-6);

        let wrong = Matrix::zeros(1, 3);
        assert!(matches!(apply(&t, &wrong), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn fit_rejects_non_finite() {
        let data = Matrix::from_rows(&[[f64::NAN, 1.0], [0.0, 1.0], [1.0, 2.0]]).unwrap();
        for method in WhiteningMethod::ALL {
            assert!(fit(method, &data, None).is_err(), "{method}");
        }
    }

    #[test]
    fn zero_variance_feature_is_regularized() {
        let data = Matrix::from_rows(&[[1.0, 3.0], [2.0, 3.0], [4.0, 3.0], [0.5, 3.0]]).unwrap();
        for method in [WhiteningMethod::Osp, WhiteningMethod::Sphering, WhiteningMethod::Cholesky] {
            let t = fit(method, &data, None).unwrap();
            assert!(t.matrix.is_finite(), "{method}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let cov = SymMatrix::from_rows(&[[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]]).unwrap();
        let data = data_with_covariance(&cov, 200, 13);
        for method in WhiteningMethod::ALL {
            let a = fit(method, &data, None).unwrap();
            let b = fit(method, &data, None).unwrap();
            assert_eq!(a.to_bytes(), b.to_bytes());
        }
    }

    #[test]
    fn transform_file_round_trip() {
        let cov = SymMatrix::from_rows(&[[2.0, 0.6, -0.3], [0.6, 1.0, 0.2], [-0.3, 0.2, 0.5]]).unwrap();
        let data = data_with_covariance(&cov, 200, 14);
        let t = fit_cholesky(&data, Some(&[2, 0, 1])).unwrap();
        let back = WhiteningTransform::from_bytes(&t.to_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn method_names_parse() {
        for m in WhiteningMethod::ALL {
            assert_eq!(m.as_str().parse::<WhiteningMethod>().unwrap(), m);
        }
        assert_eq!("ZCA".parse::<WhiteningMethod>().unwrap(), WhiteningMethod::Sphering);
    }
}
