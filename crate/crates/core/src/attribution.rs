//! Per-sample importance maps.
//!
//! Gradient-type methods explain the logit margin of the predicted class;
//! LRP explains the predicted-class logit. Stochastic methods draw from a
//! stream keyed by `(seed, method, sample id)`, so a map does not depend on
//! which other samples are explained or in what order.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::reflect_index;
use crate::error::{shape_err, Error, Result};
use crate::io::{f64s_from_bytes, write_f64s, Section};
use crate::linalg::{solve_spd, Matrix, SymMatrix};
use crate::models::{Network, OutputTarget, ReluRule};
use crate::rng::{stream, StreamRng};

pub const ATTRIBUTION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Saliency,
    IntegratedGradients,
    GradientShap,
    LrpEpsilon,
    GuidedBackprop,
    Deconvolution,
    Lime,
    ShapleySampling,
    Pfi,
    Sobel,
    Laplace,
    Random,
    RectifiedInput,
}

impl Method {
    pub const ALL: [Method; 13] = [
        Method::Saliency,
        Method::IntegratedGradients,
        Method::GradientShap,
        Method::LrpEpsilon,
        Method::GuidedBackprop,
        Method::Deconvolution,
        Method::Lime,
        Method::ShapleySampling,
        Method::Pfi,
        Method::Sobel,
        Method::Laplace,
        Method::Random,
        Method::RectifiedInput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::IntegratedGradients => "integrated-gradients",
            Method::GradientShap => "gradient-shap",
            Method::LrpEpsilon => "lrp-epsilon",
            Method::GuidedBackprop => "guided-backprop",
            Method::Deconvolution => "deconvolution",
            Method::Lime => "lime",
            Method::ShapleySampling => "shapley-sampling",
            Method::Pfi => "pfi",
            Method::Sobel => "sobel",
            Method::Laplace => "laplace",
            Method::Random => "random",
            Method::RectifiedInput => "rectified-input",
        }
    }

    /// Ignores the model entirely.
    pub fn is_model_free(self) -> bool {
        matches!(
            self,
            Method::Sobel | Method::Laplace | Method::Random | Method::RectifiedInput
        )
    }

    /// Produces one map for a whole test set instead of one per sample.
    pub fn is_global(self) -> bool {
        self == Method::Pfi
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .or(match key.as_str() {
                "ig" => Some(Method::IntegratedGradients),
                "lrp" => Some(Method::LrpEpsilon),
                "shap" | "gradshap" => Some(Method::GradientShap),
                "shapley" => Some(Method::ShapleySampling),
                "deconv" => Some(Method::Deconvolution),
                "rectified" => Some(Method::RectifiedInput),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidInput(format!("unknown attribution method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    /// Number of trapezoid intervals along the straight path from the zero baseline.
    pub ig_steps: usize,
    pub shap_samples: usize,
    /// Standard deviation of the Gaussian noise added to the zero baseline.
    pub noise_std: f64,
    pub shapley_permutations: usize,
    pub lime_samples: usize,
    /// Kernel width on the Hamming distance; `None` means `0.25·√D`.
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: f64,
    pub pfi_repeats: usize,
    pub lrp_epsilon: f64,
    /// Rectified-input baseline uses `max(x, 0)` instead of `|x|`.
    pub rectify_relu: bool,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            ig_steps: 50,
            shap_samples: 50,
            noise_std: 0.1,
            shapley_permutations: 25,
            lime_samples: 1000,
            lime_kernel_width: None,
            lime_ridge: 1e-3,
            pfi_repeats: 5,
            lrp_epsilon: 1e-6,
            rectify_relu: false,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("ig_steps", self.ig_steps),
            ("shap_samples", self.shap_samples),
            ("shapley_permutations", self.shapley_permutations),
            ("lime_samples", self.lime_samples),
            ("pfi_repeats", self.pfi_repeats),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("{name} must be ≥ 1")));
            }
        }
        if !(self.lrp_epsilon > 0.0) {
            return Err(Error::InvalidInput(format!(
                "lrp_epsilon must be > 0, got {}",
                self.lrp_epsilon
            )));
        }
        if !(self.noise_std >= 0.0) || !(self.lime_ridge > 0.0) {
            return Err(Error::InvalidInput("noise_std must be ≥ 0 and lime_ridge > 0".into()));
        }
        if let Some(w) = self.lime_kernel_width {
            if !(w > 0.0) {
                return Err(Error::InvalidInput(format!("LIME kernel width must be > 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Row-major `height × width`, signed.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub method: Method,
    /// `None` for global maps.
    pub sample: Option<usize>,
    pub model: String,
}

impl Attribution {
    pub fn abs_max_normalized(&self) -> Vec<f64> {
        let m = self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if m == 0.0 {
            return vec![0.0; self.values.len()];
        }
        self.values.iter().map(|v| v.abs() / m).collect()
    }

    /// Binary 16-bit PGM of `|values| / max|values|`.
    pub fn to_pgm16(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for v in self.abs_max_normalized() {
            out.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
        }
        out
    }

    /// `height` lines of comma-separated `|values| / max|values|`.
    pub fn to_csv_grid(&self) -> String {
        let norm = self.abs_max_normalized();
        let mut s = String::new();
        for row in norm.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

fn check_finite(values: &[f64], method: Method) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{method} produced non-finite values")));
    }
    Ok(())
}

fn predicted_margin(model: &Network, x: &[f64]) -> Result<OutputTarget> {
    Ok(OutputTarget::Margin(model.predict(x)?))
}

pub fn saliency(model: &Network, x: &[f64]) -> Result<Vec<f64>> {
    model.grad_input(x, predicted_margin(model, x)?)
}

/// Gradient of the predicted-class margin under a modified ReLU backward rule.
pub fn modified_gradient(model: &Network, x: &[f64], rule: ReluRule) -> Result<Vec<f64>> {
    model.grad_input_with_rule(x, predicted_margin(model, x)?, rule)
}

/// `x ⊙ ∫₀¹ ∇f(t·x) dt` by the trapezoid rule on `steps` intervals.
pub fn integrated_gradients(model: &Network, x: &[f64], steps: usize) -> Result<Vec<f64>> {
    integrated_gradients_for(model, x, steps, predicted_margin(model, x)?)
}

pub fn integrated_gradients_for(
    model: &Network,
    x: &[f64],
    steps: usize,
    target: OutputTarget,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidInput("ig_steps must be ≥ 1".into()));
    }
    let mut avg = vec![0.0; x.len()];
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let weight = if k == 0 || k == steps { 0.5 } else { 1.0 } / steps as f64;
        let point: Vec<f64> = x.iter().map(|v| t * v).collect();
        let g = model.grad_input(&point, target)?;
        for (a, gi) in avg.iter_mut().zip(&g) {
            *a += weight * gi;
        }
    }
    Ok(avg.iter().zip(x).map(|(a, v)| a * v).collect())
}

/// Mean of `∇f(b + u(x − b)) ⊙ (x − b)` with `b ~ N(0, noise_std²)` and `u ~ U(0, 1)`.
pub fn gradient_shap(model: &Network, x: &[f64], samples: usize, noise_std: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let target = predicted_margin(model, x)?;
    let mut acc = vec![0.0; x.len()];
    for _ in 0..samples {
        let b: Vec<f64> = (0..x.len())
            .map(|_| noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let u: f64 = rng.random();
        let point: Vec<f64> = x.iter().zip(&b).map(|(xi, bi)| bi + u * (xi - bi)).collect();
        let g = model.grad_input(&point, target)?;
        for ((a, gi), (xi, bi)) in acc.iter_mut().zip(&g).zip(x.iter().zip(&b)) {
            *a += gi * (xi - bi);
        }
    }
    Ok(acc.into_iter().map(|a| a / samples as f64).collect())
}

pub fn lrp_epsilon(model: &Network, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    model.lrp_epsilon(x, OutputTarget::Logit(model.predict(x)?), eps)
}

/// Permutation-sampling Shapley estimate with absent features set to 0.
pub fn shapley_sampling(model: &Network, x: &[f64], permutations: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let target = predicted_margin(model, x)?;
    shapley_sampling_for(|z| target.evaluate(&model.logits(z)?), x, permutations, rng)
}

/// Shapley sampling for an arbitrary value function of the (partially
/// masked) input.
pub fn shapley_sampling_for(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    permutations: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let d = x.len();
    let mut acc = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let f_empty = f(&vec![0.0; d])?;
    for _ in 0..permutations {
        order.shuffle(rng);
        let mut z = vec![0.0; d];
        let mut prev = f_empty;
        for &j in &order {
            z[j] = x[j];
            let cur = f(&z)?;
            acc[j] += cur - prev;
            prev = cur;
        }
    }
    Ok(acc.into_iter().map(|a| a / permutations as f64).collect())
}

/// Weighted ridge regression of the predicted-class margin on random binary
/// masks (kept pixel = 1, pixel set to 0 otherwise). The intercept is fitted
/// but not penalized. Kernel weight of a mask is `exp(−h / width²)` with `h`
/// its Hamming distance to the all-ones mask.
pub fn lime(model: &Network, x: &[f64], config: &MethodConfig, rng: &mut StreamRng) -> Result<Vec<f64>> {
    let target = predicted_margin(model, x)?;
    lime_for(|z| target.evaluate(&model.logits(z)?), x, config, rng)
}

pub fn lime_for(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    config: &MethodConfig,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let d = x.len();
    let n = config.lime_samples;
    let width = config.lime_kernel_width.unwrap_or(0.25 * (d as f64).sqrt());
    let mut masks = Matrix::zeros(n, d);
    let mut ys = Vec::with_capacity(n);
    let mut ws = Vec::with_capacity(n);
    let mut idx: Vec<usize> = (0..d).collect();
    for i in 0..n {
        let row = masks.row_mut(i);
        row.fill(1.0);
        let off = if i == 0 { 0 } else { rng.random_range(1..=d) };
        idx.shuffle(rng);
        for &j in &idx[..off] {
            row[j] = 0.0;
        }
        let z: Vec<f64> = x.iter().zip(row.iter()).map(|(a, m)| a * m).collect();
        ys.push(f(&z)?);
        ws.push((-(off as f64) / (width * width)).exp());
    }

    let wsum: f64 = ws.iter().sum();
    let mbar: Vec<f64> = (0..d)
        .map(|j| (0..n).map(|i| ws[i] * masks[(i, j)]).sum::<f64>() / wsum)
        .collect();
    let ybar = ys.iter().zip(&ws).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    let mut centered = vec![0.0; d];
    for i in 0..n {
        for (c, (m, mb)) in centered.iter_mut().zip(masks.row(i).iter().zip(&mbar)) {
            *c = m - mb;
        }
        let yc = ys[i] - ybar;
        for a in 0..d {
            let wa = ws[i] * centered[a];
            if wa == 0.0 {
                continue;
            }
            rhs[a] += wa * yc;
            for b in a..d {
                gram[(a, b)] += wa * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let mut lambda = config.lime_ridge;
    for _ in 0..12 {
        let mut sys = gram.clone();
        for a in 0..d {
            sys[(a, a)] += lambda;
        }
        match solve_spd(&SymMatrix::new(sys)?, &rhs) {
            Ok(beta) if beta.iter().all(|b| b.is_finite()) => return Ok(beta),
            _ => {
                log::warn!("LIME ridge system singular at lambda={lambda:e}; increasing");
                lambda *= 10.0;
            }
        }
    }
    Err(Error::NotSpd(lambda))
}

/// Mean accuracy drop when each feature column is shuffled across the set.
pub fn pfi(model: &Network, data: &Matrix, labels: &[u8], repeats: usize, seed: u64) -> Result<Vec<f64>> {
    if data.rows() < 2 {
        return Err(Error::InvalidInput("permutation importance needs ≥ 2 samples".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidInput("pfi_repeats must be ≥ 1".into()));
    }
    let base = model.accuracy(data, labels)?;
    (0..data.cols())
        .into_par_iter()
        .map(|j| {
            let mut drop = 0.0;
            for r in 0..repeats {
                let mut rng = stream(seed, "pfi", (j * repeats + r) as u64);
                let mut col = data.column(j);
                col.shuffle(&mut rng);
                let mut shuffled = data.clone();
                for (i, v) in col.into_iter().enumerate() {
                    shuffled[(i, j)] = v;
                }
                drop += base - model.accuracy(&shuffled, labels)?;
            }
            Ok(drop / repeats as f64)
        })
        .collect()
}

/// 3×3 correlation with reflect padding.
fn filter3(img: &[f64], height: usize, width: usize, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (dy, krow) in k.iter().enumerate() {
                let iy = reflect_index(y as i64 + dy as i64 - 1, height);
                for (dx, kv) in krow.iter().enumerate() {
                    let ix = reflect_index(x as i64 + dx as i64 - 1, width);
                    acc += kv * img[iy * width + ix];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn sobel(img: &[f64], height: usize, width: usize) -> Vec<f64> {
    let gx = filter3(img, height, width, &[[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]);
    let gy = filter3(img, height, width, &[[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// Negative discrete Laplacian: positive at an isolated bright pixel.
pub fn laplace(img: &[f64], height: usize, width: usize) -> Vec<f64> {
    filter3(img, height, width, &[[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])
}

pub fn random_uniform(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

pub fn rectified_input(x: &[f64], relu: bool) -> Vec<f64> {
    if relu {
        x.iter().map(|v| v.max(0.0)).collect()
    } else {
        x.iter().map(|v| v.abs()).collect()
    }
}

/// The stream used by `method` for sample `sample_id`.
pub fn method_stream(config: &MethodConfig, method: Method, sample_id: usize) -> StreamRng {
    stream(config.seed, method.as_str(), sample_id as u64)
}

/// One per-sample map. Fails for global methods.
pub fn explain(
    model: &Network,
    method: Method,
    x: &[f64],
    height: usize,
    width: usize,
    sample_id: usize,
    config: &MethodConfig,
) -> Result<Vec<f64>> {
    if x.len() != height * width {
        return Err(shape_err(height * width, x.len()));
    }
    if !method.is_model_free() && x.len() != model.input_size() {
        return Err(shape_err(model.input_size(), x.len()));
    }
    let mut rng = method_stream(config, method, sample_id);
    let values = match method {
        Method::Saliency => saliency(model, x)?,
        Method::IntegratedGradients => integrated_gradients(model, x, config.ig_steps)?,
        Method::GradientShap => gradient_shap(model, x, config.shap_samples, config.noise_std, &mut rng)?,
        Method::LrpEpsilon => lrp_epsilon(model, x, config.lrp_epsilon)?,
        Method::GuidedBackprop => modified_gradient(model, x, ReluRule::GuidedBackprop)?,
        Method::Deconvolution => modified_gradient(model, x, ReluRule::Deconv)?,
        Method::Lime => lime(model, x, config, &mut rng)?,
        Method::ShapleySampling => shapley_sampling(model, x, config.shapley_permutations, &mut rng)?,
        Method::Pfi => {
            return Err(Error::InvalidInput(
                "permutation importance is global; use explain_global".into(),
            ))
        }
        Method::Sobel => sobel(x, height, width),
        Method::Laplace => laplace(x, height, width),
        Method::Random => random_uniform(x.len(), &mut rng),
        Method::RectifiedInput => rectified_input(x, config.rectify_relu),
    };
    check_finite(&values, method)?;
    Ok(values)
}

/// Per-sample maps for the rows `ids` of `data`, computed in parallel.
#[allow(clippy::too_many_arguments)]
pub fn explain_batch(
    model: &Network,
    model_tag: &str,
    method: Method,
    data: &Matrix,
    ids: &[usize],
    height: usize,
    width: usize,
    config: &MethodConfig,
) -> Result<AttributionBatch> {
    config.validate()?;
    let maps = ids
        .par_iter()
        .map(|&i| explain(model, method, data.row(i), height, width, i, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionBatch {
        method,
        model: model_tag.to_string(),
        height,
        width,
        sample_ids: ids.to_vec(),
        maps,
    })
}

/// Permutation importance over the whole set as a single map.
pub fn explain_global(
    model: &Network,
    model_tag: &str,
    data: &Matrix,
    labels: &[u8],
    height: usize,
    width: usize,
    config: &MethodConfig,
) -> Result<Attribution> {
    config.validate()?;
    let values = pfi(model, data, labels, config.pfi_repeats, config.seed)?;
    check_finite(&values, Method::Pfi)?;
    Ok(Attribution {
        values,
        height,
        width,
        method: Method::Pfi,
        sample: None,
        model: model_tag.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionBatch {
    pub method: Method,
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub sample_ids: Vec<usize>,
    pub maps: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionManifest {
    pub format_version: u32,
    pub method: Method,
    pub model: String,
    pub height: usize,
    pub width: usize,
    pub sample_ids: Vec<usize>,
    pub payload: String,
    pub maps: Section,
}

impl AttributionBatch {
    pub fn get(&self, k: usize) -> Attribution {
        Attribution {
            values: self.maps[k].clone(),
            height: self.height,
            width: self.width,
            method: self.method,
            sample: Some(self.sample_ids[k]),
            model: self.model.clone(),
        }
    }

    pub fn from_global(a: Attribution) -> Self {
        Self {
            method: a.method,
            model: a.model,
            height: a.height,
            width: a.width,
            sample_ids: Vec::new(),
            maps: vec![a.values],
        }
    }

    /// Writes `<stem>.json` (manifest) and `<stem>.bin` (maps, row-major,
    /// little-endian f64); returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let payload = format!("{stem}.bin");
        let mut bytes = Vec::with_capacity(self.maps.len() * self.height * self.width * 8);
        for m in &self.maps {
            write_f64s(&mut bytes, m)?;
        }
        let manifest = AttributionManifest {
            format_version: ATTRIBUTION_FORMAT_VERSION,
            method: self.method,
            model: self.model.clone(),
            height: self.height,
            width: self.width,
            sample_ids: self.sample_ids.clone(),
            payload: payload.clone(),
            maps: Section {
                offset: 0,
                len: bytes.len() as u64,
            },
        };
        fs::write(dir.join(&payload), &bytes)?;
        let path = dir.join(format!("{stem}.json"));
        let mut f = fs::File::create(&path)?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        f.write_all(b"\n")?;
        Ok(path)
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest: AttributionManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        if manifest.format_version != ATTRIBUTION_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported attribution format version {}",
                manifest.format_version
            )));
        }
        let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let bytes = fs::read(dir.join(&manifest.payload))?;
        let values = f64s_from_bytes(manifest.maps.slice(&bytes)?)?;
        let d = manifest.height * manifest.width;
        let expected_maps = manifest.sample_ids.len().max(1);
        if d == 0 || values.len() != expected_maps * d {
            return Err(Error::Format(format!(
                "expected {expected_maps} maps of {d} values, found {} values",
                values.len()
            )));
        }
        Ok(Self {
            method: manifest.method,
            model: manifest.model,
            height: manifest.height,
            width: manifest.width,
            sample_ids: manifest.sample_ids,
            maps: values.chunks(d).map(<[f64]>::to_vec).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Layer;

    fn llr(weights: &[f64], bias: &[f64]) -> Network {
        let d = weights.len() / 2;
        let mut net = Network::new(vec![Layer::Dense { inputs: d, outputs: 2 }, Layer::Softmax { size: 2 }]).unwrap();
        net.set_layer_params(0, weights, bias).unwrap();
        net
    }

    fn test_llr(d: usize) -> (Network, Vec<f64>) {
        let mut rng = stream(1, "attr-test-llr", 0);
        let w: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        (llr(&w, &[0.0, 0.0]), w)
    }

    fn small_mlp(d: usize, seed: u64) -> Network {
        let mut rng = stream(seed, "attr-test-mlp", 0);
        let mut net = Network::new(vec![
            Layer::Dense { inputs: d, outputs: 6 },
            Layer::ReLU { size: 6 },
            Layer::Dense { inputs: 6, outputs: 2 },
            Layer::Softmax { size: 2 },
        ])
        .unwrap();
        let params: Vec<f64> = (0..net.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        net.set_params(params).unwrap();
        net
    }

    fn margin_weights(net: &Network, x: &[f64], w: &[f64]) -> Vec<f64> {
        let d = x.len();
        let c = net.predict(x).unwrap();
        (0..d).map(|j| w[c * d + j] - w[(1 - c) * d + j]).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn saliency_of_llr_is_constant_weight_difference() {
        let (net, w) = test_llr(6);
        let x = [0.3, -0.1, 0.7, 0.2, -0.9, 0.4];
        let s = saliency(&net, &x).unwrap();
        assert_close(&s, &margin_weights(&net, &x, &w), 1e-15);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert_eq!(saliency(&net, &x2).unwrap(), s);
    }

    #[test]
    fn ig_of_llr_is_weighted_input() {
        let (net, w) = test_llr(6);
        let x = [0.3, -0.1, 0.7, 0.2, -0.9, 0.4];
        let mw = margin_weights(&net, &x, &w);
        let expected: Vec<f64> = mw.iter().zip(&x).map(|(a, b)| a * b).collect();
        assert_close(&integrated_gradients(&net, &x, 7).unwrap(), &expected, 1e-14);
        assert!(integrated_gradients(&net, &[0.0; 6], 50).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_completeness_improves_with_steps() {
        let net = small_mlp(5, 2);
        let mut rng = stream(3, "attr-test-x", 0);
        let mut residuals = [0.0; 3];
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = OutputTarget::Margin(net.predict(&x).unwrap());
            let delta = t.evaluate(&net.logits(&x).unwrap()).unwrap()
                - t.evaluate(&net.logits(&[0.0; 5]).unwrap()).unwrap();
            for (r, steps) in residuals.iter_mut().zip([8, 64, 512]) {
                let sum: f64 = integrated_gradients(&net, &x, steps).unwrap().iter().sum();
                *r += (sum - delta).abs();
            }
            let sum512: f64 = integrated_gradients(&net, &x, 512).unwrap().iter().sum();
            assert!((sum512 - delta).abs() < 1e-3 * delta.abs().max(1.0));
        }
        assert!(residuals[0] >= residuals[1] && residuals[1] >= residuals[2], "{residuals:?}");
    }

    #[test]
    fn gradient_shap_without_noise_on_llr() {
        let (net, w) = test_llr(6);
        let x = [0.3, -0.1, 0.7, 0.2, -0.9, 0.4];
        let mw = margin_weights(&net, &x, &w);
        let expected: Vec<f64> = mw.iter().zip(&x).map(|(a, b)| a * b).collect();
        for samples in [1, 7] {
            let a = gradient_shap(&net, &x, samples, 0.0, &mut stream(0, "t", 0)).unwrap();
            assert_close(&a, &expected, 1e-14);
        }
        let z = gradient_shap(&net, &[0.0; 6], 5, 0.0, &mut stream(0, "t", 0)).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_shap_sample_sizes_agree() {
        let net = small_mlp(4, 4);
        let x = [0.8, -0.5, 0.3, 0.9];
        let per_draw = |n: usize, seed: u64| {
            let mut rng = stream(seed, "gshap-se", 0);
            (0..n)
                .map(|_| gradient_shap(&net, &x, 1, 0.1, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = per_draw(2000, 1);
        let b = per_draw(4000, 2);
        for j in 0..4 {
            let stats = |draws: &[Vec<f64>]| {
                let n = draws.len() as f64;
                let m = draws.iter().map(|d| d[j]).sum::<f64>() / n;
                let v = draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / (n - 1.0);
                (m, v / n)
            };
            let (ma, va) = stats(&a);
            let (mb, vb) = stats(&b);
            assert!((ma - mb).abs() <= 3.0 * (va + vb).sqrt() + 1e-12, "feature {j}: {ma} vs {mb}");
        }
    }

    #[test]
    fn lrp_of_llr_is_predicted_weight_times_input() {
        let (net, w) = test_llr(6);
        let x = [0.3, -0.1, 0.7, 0.2, -0.9, 0.4];
        let c = net.predict(&x).unwrap();
        let expected: Vec<f64> = (0..6).map(|j| w[c * 6 + j] * x[j]).collect();
        assert_close(&lrp_epsilon(&net, &x, 1e-12).unwrap(), &expected, 1e-9);
        assert!(lrp_epsilon(&net, &[0.0; 6], 1e-6).unwrap().iter().all(|&v| v == 0.0));
    }

    /// Exact Shapley values of `f` by enumerating all `d!` orderings.
    fn exact_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let d = x.len();
        let all = perms((0..d).collect());
        let mut phi = vec![0.0; d];
        for p in &all {
            let mut z = vec![0.0; d];
            let mut prev = f(&z);
            for &j in p {
                z[j] = x[j];
                let cur = f(&z);
                phi[j] += cur - prev;
                prev = cur;
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    #[test]
    fn shapley_sampling_matches_enumeration() {
        for (d, seed) in [(3usize, 5u64), (5, 6), (6, 7)] {
            let net = small_mlp(d, seed);
            let x: Vec<f64> = (0..d).map(|j| 0.9 - 0.35 * j as f64).collect();
            let t = OutputTarget::Margin(net.predict(&x).unwrap());
            let f = |z: &[f64]| t.evaluate(&net.logits(z).unwrap()).unwrap();
            let exact = exact_shapley(&f, &x);
            let n = 3000;
            let mut rng = stream(seed, "shapley-se", 0);
            let draws: Vec<Vec<f64>> = (0..n)
                .map(|_| shapley_sampling_for(|z| Ok(f(z)), &x, 1, &mut rng).unwrap())
                .collect();
            for j in 0..d {
                let m = draws.iter().map(|v| v[j]).sum::<f64>() / n as f64;
                let var = draws.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                let se = (var / n as f64).sqrt();
                assert!((m - exact[j]).abs() <= 3.0 * se + 1e-12, "d={d} j={j}: {m} vs {}", exact[j]);
            }
        }
    }

    #[test]
    fn shapley_sampling_on_llr_is_exact_and_efficient() {
        let (net, w) = test_llr(6);
        let x = [0.3, -0.1, 0.7, 0.2, -0.9, 0.4];
        let mw = margin_weights(&net, &x, &w);
        let expected: Vec<f64> = mw.iter().zip(&x).map(|(a, b)| a * b).collect();
        let a = shapley_sampling(&net, &x, 3, &mut stream(0, "t", 1)).unwrap();
        assert_close(&a, &expected, 1e-12);
        assert!(shapley_sampling(&net, &[0.0; 6], 3, &mut stream(0, "t", 1)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lime_on_llr_ranks_like_weighted_input() {
        let d = 16;
        let (net, w) = test_llr(d);
        let x: Vec<f64> = (0..d).map(|j| ((j * 7 % 11) as f64 - 5.0) / 5.0).collect();
        let cfg = MethodConfig {
            lime_samples: 800,
            lime_ridge: 1e-9,
            ..MethodConfig::default()
        };
        let coef = lime(&net, &x, &cfg, &mut stream(0, "lime", 0)).unwrap();
        let mw = margin_weights(&net, &x, &w);
        let target: Vec<f64> = mw.iter().zip(&x).map(|(a, b)| a * b).collect();
        assert_close(&coef, &target, 1e-6);
        let top = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()));
            idx.truncate(8);
            idx
        };
        assert_eq!(top(&coef), top(&target));
    }

    #[test]
    fn lime_constant_model_and_determinism() {
        let net = llr(&[0.0; 8], &[0.3, -0.2]);
        let cfg = MethodConfig {
            lime_samples: 100,
            ..MethodConfig::default()
        };
        let x = [0.5, -0.5, 1.0, 0.25];
        let coef = lime(&net, &x, &cfg, &mut stream(0, "lime", 0)).unwrap();
        assert!(coef.iter().all(|v| v.abs() < 1e-12), "{coef:?}");
        let net = small_mlp(4, 8);
        let a = lime(&net, &x, &cfg, &mut stream(9, "lime", 2)).unwrap();
        let b = lime(&net, &x, &cfg, &mut stream(9, "lime", 2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pfi_unused_feature_and_duplicate_rows() {
        // logit margin depends on feature 0 only
        let net = llr(&[-1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &[0.0, 0.0]);
        let mut rng = stream(2, "pfi-test", 0);
        let rows: Vec<[f64; 3]> = (0..200)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let data = Matrix::from_rows(&rows).unwrap();
        let labels: Vec<u8> = rows.iter().map(|r| u8::from(r[0] > 0.0)).collect();
        let imp = pfi(&net, &data, &labels, 5, 0).unwrap();
        assert_eq!(imp[1], 0.0);
        assert_eq!(imp[2], 0.0);
        assert!(imp[0] > 0.3);

        let dup = Matrix::from_rows(&[[0.5, 0.1, 0.2], [0.5, 0.1, 0.2], [0.5, 0.1, 0.2]]).unwrap();
        let imp = pfi(&net, &dup, &[1, 1, 1], 3, 0).unwrap();
        assert!(imp.iter().all(|&v| v == 0.0));
        assert!(pfi(&net, &Matrix::from_rows(&[[0.0, 0.0, 0.0]]).unwrap(), &[0], 1, 0).is_err());
    }

    #[test]
    fn filters_on_constant_image_vanish() {
        let img = vec![0.7; 64];
        assert!(sobel(&img, 8, 8).iter().all(|v| v.abs() < 1e-12));
        assert!(laplace(&img, 8, 8).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn laplace_of_bright_pixel() {
        let mut img = vec![0.0; 25];
        img[12] = 1.0;
        let l = laplace(&img, 5, 5);
        assert_eq!(l[12], 4.0);
        for n in [7, 11, 13, 17] {
            assert_eq!(l[n], -1.0);
        }
        for n in [6, 8, 16, 18, 0, 24] {
            assert_eq!(l[n], 0.0);
        }
    }

    #[test]
    fn sobel_of_vertical_edge() {
        // left half 0, right half 1 on a 4×4 image: |Gx| = 4 on the two
        // columns adjacent to the edge, 0 elsewhere; Gy = 0.
        let img: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { 1.0 } else { 0.0 }).collect();
        let s = sobel(&img, 4, 4);
        for y in 0..4 {
            assert_eq!(&s[y * 4..y * 4 + 4], &[0.0, 4.0, 4.0, 0.0]);
        }
    }

    #[test]
    fn rectified_and_random_baselines() {
        let x = [-0.5, -1.0, 0.0, -0.25];
        assert_eq!(rectified_input(&x, false), vec![0.5, 1.0, 0.0, 0.25]);
        assert_eq!(rectified_input(&x, true), vec![0.0; 4]);
        let r = random_uniform(1000, &mut stream(0, "random", 0));
        assert!(r.iter().all(|&v| (0.0..1.0).contains(&v)));
        assert_eq!(r, random_uniform(1000, &mut stream(0, "random", 0)));
    }

    #[test]
    fn explain_dispatch_is_order_independent() {
        let net = small_mlp(4, 10);
        let data = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [-0.4, 0.3, -0.2, 0.1], [0.9, -0.9, 0.5, -0.5]]).unwrap();
        let cfg = MethodConfig {
            lime_samples: 50,
            ..MethodConfig::default()
        };
        for method in Method::ALL.into_iter().filter(|m| !m.is_global()) {
            let fwd = explain_batch(&net, "mlp", method, &data, &[0, 1, 2], 2, 2, &cfg).unwrap();
            let rev = explain_batch(&net, "mlp", method, &data, &[2, 1, 0], 2, 2, &cfg).unwrap();
            for k in 0..3 {
                assert_eq!(fwd.maps[k], rev.maps[2 - k], "{method}");
            }
        }
        assert!(explain(&net, Method::Pfi, data.row(0), 2, 2, 0, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(MethodConfig { ig_steps: 0, ..MethodConfig::default() }.validate().is_err());
        assert!(MethodConfig { lrp_epsilon: 0.0, ..MethodConfig::default() }.validate().is_err());
        assert!(MethodConfig::default().validate().is_ok());
    }

    #[test]
    fn batch_file_round_trip_and_exports() {
        let net = small_mlp(4, 11);
        let data = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [-0.4, 0.3, -0.2, 0.1]]).unwrap();
        let batch = explain_batch(&net, "mlp", Method::Saliency, &data, &[0, 1], 2, 2, &MethodConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = batch.save(dir.path(), "sal").unwrap();
        assert_eq!(AttributionBatch::load(&path).unwrap(), batch);

        let a = Attribution {
            values: vec![-2.0, 1.0, 0.0, 0.5],
            height: 2,
            width: 2,
            method: Method::Saliency,
            sample: Some(0),
            model: "m".into(),
        };
        assert_eq!(a.to_csv_grid(), "1,0.5\n0,0.25\n");
        let pgm = a.to_pgm16();
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[255, 255, 128, 0, 0, 0, 64, 0]);
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("IG".parse::<Method>().unwrap(), Method::IntegratedGradients);
    }
}
