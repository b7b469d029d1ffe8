//! Synthetic tetromino classification datasets with known ground truth.
//!
//! Four scenarios (LIN, MULT, RIGID, XOR) on a WHITE (i.i.d. normal) or CORR
//! (Gaussian-smoothed) background. Signal and background batches are
//! Frobenius-normalized over the whole dataset, mixed with weight `alpha`,
//! then each sample is scaled to `max |x| = 1`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::io::{f64s_from_bytes, write_f64s, Section};
use crate::linalg::Matrix;
use crate::rng::{stream, StreamRng};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "LIN")]
    Lin,
    #[serde(rename = "MULT")]
    Mult,
    #[serde(rename = "RIGID")]
    Rigid,
    #[serde(rename = "XOR")]
    Xor,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Lin, Scenario::Mult, Scenario::Rigid, Scenario::Xor];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Lin => "LIN",
            Scenario::Mult => "MULT",
            Scenario::Rigid => "RIGID",
            Scenario::Xor => "XOR",
        }
    }

    /// Signal weight used when no calibrated value is supplied.
    ///
    /// Values come from `whitebench calibrate-alpha` at N=2000, split
    /// 0.5/0.15/0.35, seed 0: the largest α any model needed across both
    /// backgrounds, ignoring cells that miss the gate even at α = 1.
    pub fn default_alpha(self) -> f64 {
        match self {
            Scenario::Lin => 0.1875,
            Scenario::Mult => 0.703125,
            Scenario::Rigid => 0.71875,
            Scenario::Xor => 0.359375,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LIN" => Ok(Scenario::Lin),
            "MULT" => Ok(Scenario::Mult),
            "RIGID" => Ok(Scenario::Rigid),
            "XOR" => Ok(Scenario::Xor),
            other => Err(Error::InvalidInput(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Background {
    #[serde(rename = "WHITE")]
    White,
    #[serde(rename = "CORR")]
    Corr,
}

impl Background {
    pub fn as_str(self) -> &'static str {
        match self {
            Background::White => "WHITE",
            Background::Corr => "CORR",
        }
    }
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "WHITE" => Ok(Background::White),
            "CORR" => Ok(Background::Corr),
            other => Err(Error::InvalidInput(format!("unknown background {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub background: Background,
    pub n_samples: usize,
    pub height: usize,
    pub width: usize,
    pub alpha: f64,
    pub smooth_sigma: f64,
    pub seed: u64,
    pub split: SplitFractions,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, background: Background) -> Self {
        Self {
            scenario,
            background,
            n_samples: 10_000,
            height: 8,
            width: 8,
            alpha: scenario.default_alpha(),
            smooth_sigma: 3.0,
            seed: 0,
            split: SplitFractions::default(),
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_split(mut self, train: f64, val: f64, test: f64) -> Self {
        self.split = SplitFractions { train, val, test };
        self
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.n_samples == 0 || self.height == 0 || self.width == 0 {
            return bad("n_samples, height and width must be positive".into());
        }
        if self.height < 4 || self.width < 4 {
            return bad(format!(
                "image {}x{} too small for two fixed tetromino sites",
                self.height, self.width
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.background == Background::Corr && !(self.smooth_sigma > 0.0) {
            return bad(format!("smooth_sigma {} must be > 0 for CORR", self.smooth_sigma));
        }
        let SplitFractions { train, val, test } = self.split;
        if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f))
            || (train + val + test - 1.0).abs() > 1e-9
        {
            return bad(format!("split fractions {train}/{val}/{test} must sum to 1"));
        }
        Ok(())
    }

    /// Contiguous train/val/test partition of `0..n_samples` (samples are i.i.d.).
    pub fn split_indices(&self) -> SplitIndices {
        let n = self.n_samples;
        let n_train = ((self.split.train * n as f64).round() as usize).min(n);
        let n_val = ((self.split.val * n as f64).round() as usize).min(n - n_train);
        SplitIndices {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major `H × W` pixels with `max |x| = 1` (unless all zero).
    pub pixels: Vec<f64>,
    pub label: u8,
    /// Ground-truth important pixels.
    pub gt_mask: Vec<bool>,
    /// Transformed signal pattern before mixing (signed for XOR).
    pub signal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub samples: Vec<Sample>,
    pub splits: SplitIndices,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    /// Pixels of the selected samples as an `n × D` matrix.
    pub fn pixel_matrix(&self, indices: &[usize]) -> Matrix {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.samples[i].pixels);
        }
        Matrix::from_vec(indices.len(), d, data).expect("consistent sample sizes")
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.samples[i].label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TetrominoKind {
    T,
    L,
}

/// Cells of a tetromino after `quarter_turns` clockwise 90° rotations,
/// shifted so the bounding box starts at `(0, 0)`.
pub fn tetromino_cells(kind: TetrominoKind, quarter_turns: u8) -> [(usize, usize); 4] {
    let base: [(i64, i64); 4] = match kind {
        TetrominoKind::T => [(0, 0), (0, 1), (0, 2), (1, 1)],
        TetrominoKind::L => [(0, 0), (1, 0), (2, 0), (2, 1)],
    };
    let mut cells = base;
    for _ in 0..(quarter_turns % 4) {
        for c in cells.iter_mut() {
            *c = (c.1, -c.0);
        }
    }
    let min_r = cells.iter().map(|c| c.0).min().unwrap_or(0);
    let min_c = cells.iter().map(|c| c.1).min().unwrap_or(0);
    cells.map(|(r, c)| ((r - min_r) as usize, (c - min_c) as usize))
}

/// Height and width of the rotated tetromino's bounding box.
pub fn tetromino_extent(kind: TetrominoKind, quarter_turns: u8) -> (usize, usize) {
    let cells = tetromino_cells(kind, quarter_turns);
    let h = cells.iter().map(|c| c.0).max().unwrap_or(0) + 1;
    let w = cells.iter().map(|c| c.1).max().unwrap_or(0) + 1;
    (h, w)
}

/// Binary `height × width` pattern with the tetromino's bounding box at `anchor`.
pub fn make_tetromino(
    kind: TetrominoKind,
    anchor: (usize, usize),
    quarter_turns: u8,
    height: usize,
    width: usize,
) -> Result<Vec<f64>> {
    let mut img = vec![0.0; height * width];
    for (r, c) in tetromino_cells(kind, quarter_turns) {
        let (rr, cc) = (anchor.0 + r, anchor.1 + c);
        if rr >= height || cc >= width {
            return Err(Error::Placement(format!(
                "{kind:?} rotated {} deg at {anchor:?} leaves the {height}x{width} image",
                90 * u32::from(quarter_turns % 4)
            )));
        }
        img[rr * width + cc] = 1.0;
    }
    Ok(img)
}

/// Fixed site of the T pattern in LIN/MULT/XOR: one pixel in from the top-left.
pub fn fixed_t_anchor(_height: usize, _width: usize) -> (usize, usize) {
    (1, 1)
}

/// Fixed site of the L pattern: its bounding box ends one pixel in from the
/// bottom-right corner.
pub fn fixed_l_anchor(height: usize, width: usize) -> (usize, usize) {
    let (h, w) = tetromino_extent(TetrominoKind::L, 0);
    (height - 1 - h, width - 1 - w)
}

fn fixed_patterns(height: usize, width: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok((
        make_tetromino(TetrominoKind::T, fixed_t_anchor(height, width), 0, height, width)?,
        make_tetromino(TetrominoKind::L, fixed_l_anchor(height, width), 0, height, width)?,
    ))
}

pub(crate) fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Normalized 1D Gaussian weights truncated at 4σ.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5) as i64;
    let w: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Separable Gaussian smoothing with reflect (half-sample symmetric) padding.
pub fn gaussian_smooth(img: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut rows = vec![0.0; img.len()];
    for r in 0..height {
        for c in 0..width {
            rows[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * img[r * width + reflect_index(c as i64 + k as i64 - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for r in 0..height {
        for c in 0..width {
            out[r * width + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| {
                    w * rows[reflect_index(r as i64 + k as i64 - radius, height) * width + c]
                })
                .sum();
        }
    }
    out
}

/// One background image: i.i.d. standard normal, smoothed for CORR.
pub fn make_background(config: &ScenarioConfig, rng: &mut StreamRng) -> Vec<f64> {
    let white: Vec<f64> = (0..config.dim()).map(|_| rng.sample(StandardNormal)).collect();
    match config.background {
        Background::White => white,
        Background::Corr => gaussian_smooth(&white, config.height, config.width, config.smooth_sigma),
    }
}

/// Divides the whole batch by its Frobenius norm (no-op for an all-zero batch).
pub fn frobenius_normalize(batch: &Matrix) -> Matrix {
    let norm = batch.frobenius_norm();
    if norm > 0.0 {
        batch.scale(1.0 / norm)
    } else {
        batch.clone()
    }
}

/// Scales each row so its largest absolute entry is 1.
pub fn rescale_rows_max_abs(batch: &mut Matrix) {
    for i in 0..batch.rows() {
        let row = batch.row_mut(i);
        let m = row.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if m > 0.0 {
            row.iter_mut().for_each(|x| *x /= m);
        }
    }
}

fn check_same_shape(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(shape_err(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

/// `x = α·signal + (1−α)·noise`, then per-sample max-abs scaling.
pub fn compose_additive(signal: &Matrix, noise: &Matrix, alpha: f64) -> Result<Matrix> {
    check_same_shape(signal, noise)?;
    let mut out = signal.scale(alpha).add(&noise.scale(1.0 - alpha))?;
    rescale_rows_max_abs(&mut out);
    Ok(out)
}

/// `x = (1 − α·signal) ⊙ noise`, then per-sample max-abs scaling.
pub fn compose_multiplicative(signal: &Matrix, noise: &Matrix, alpha: f64) -> Result<Matrix> {
    check_same_shape(signal, noise)?;
    let data = signal
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(s, e)| (1.0 - alpha * s) * e)
        .collect();
    let mut out = Matrix::from_vec(signal.rows(), signal.cols(), data)?;
    rescale_rows_max_abs(&mut out);
    Ok(out)
}

/// What is needed to recover the ground-truth set of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalPlacement {
    /// Both fixed tetromino sites (LIN, MULT, XOR).
    FixedSites,
    /// One rigidly moved tetromino (RIGID).
    Moved {
        kind: TetrominoKind,
        anchor: (usize, usize),
        quarter_turns: u8,
    },
}

pub fn ground_truth_mask(placement: SignalPlacement, height: usize, width: usize) -> Result<Vec<bool>> {
    match placement {
        SignalPlacement::FixedSites => {
            let (t, l) = fixed_patterns(height, width)?;
            Ok(t.iter().zip(&l).map(|(a, b)| *a != 0.0 || *b != 0.0).collect())
        }
        SignalPlacement::Moved {
            kind,
            anchor,
            quarter_turns,
        } => Ok(make_tetromino(kind, anchor, quarter_turns, height, width)?
            .iter()
            .map(|v| *v != 0.0)
            .collect()),
    }
}

/// XOR sign configuration: (sign of T, sign of L).
const XOR_CONFIGS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];

fn xor_label(config: usize) -> u8 {
    if config < 2 {
        0
    } else {
        1
    }
}

/// Balanced XOR configuration assignment, shuffled with a dataset-level stream.
fn xor_assignment(n: usize, seed: u64) -> Vec<usize> {
    let mut configs: Vec<usize> = (0..n).map(|i| i % 4).collect();
    configs.shuffle(&mut stream(seed, "xor-configs", 0));
    configs
}

/// Index of the XOR configuration a sample was drawn from, if any.
pub fn xor_configuration(sample: &Sample, height: usize, width: usize) -> Option<usize> {
    let (t, l) = fixed_patterns(height, width).ok()?;
    let t_idx = t.iter().position(|v| *v != 0.0)?;
    let l_idx = l.iter().position(|v| *v != 0.0)?;
    let key = (sample.signal[t_idx], sample.signal[l_idx]);
    XOR_CONFIGS.iter().position(|c| *c == key)
}

struct DrawnSample {
    label: u8,
    signal: Vec<f64>,
    placement: SignalPlacement,
    background: Vec<f64>,
}

fn draw_sample(
    config: &ScenarioConfig,
    index: usize,
    xor_config: Option<usize>,
    fixed: &(Vec<f64>, Vec<f64>),
) -> Result<DrawnSample> {
    let (h, w) = (config.height, config.width);
    let mut rng = stream(config.seed, "sample", index as u64);
    let (label, signal, placement) = match config.scenario {
        Scenario::Lin | Scenario::Mult => {
            let label = u8::from(rng.random_bool(0.5));
            let pattern = if label == 0 { fixed.0.clone() } else { fixed.1.clone() };
            (label, pattern, SignalPlacement::FixedSites)
        }
        Scenario::Xor => {
            let cfg = xor_config.expect("xor assignment present");
            let (st, sl) = XOR_CONFIGS[cfg];
            let pattern = fixed.0.iter().zip(&fixed.1).map(|(t, l)| st * t + sl * l).collect();
            (xor_label(cfg), pattern, SignalPlacement::FixedSites)
        }
        Scenario::Rigid => {
            let label = u8::from(rng.random_bool(0.5));
            let kind = if label == 0 { TetrominoKind::T } else { TetrominoKind::L };
            let quarter_turns = rng.random_range(0..4u8);
            let (eh, ew) = tetromino_extent(kind, quarter_turns);
            let anchor = (rng.random_range(0..=h - eh), rng.random_range(0..=w - ew));
            let pattern = make_tetromino(kind, anchor, quarter_turns, h, w)?;
            (
                label,
                pattern,
                SignalPlacement::Moved {
                    kind,
                    anchor,
                    quarter_turns,
                },
            )
        }
    };
    let background = make_background(config, &mut rng);
    Ok(DrawnSample {
        label,
        signal,
        placement,
        background,
    })
}

/// Generates a full dataset; a pure function of `config`.
pub fn generate_dataset(config: &ScenarioConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_samples;
    let d = config.dim();
    let fixed = fixed_patterns(config.height, config.width)?;
    let xor = (config.scenario == Scenario::Xor).then(|| xor_assignment(n, config.seed));

    let drawn = (0..n)
        .map(|i| draw_sample(config, i, xor.as_ref().map(|x| x[i]), &fixed))
        .collect::<Result<Vec<_>>>()?;

    let mut signal = Matrix::zeros(n, d);
    let mut noise = Matrix::zeros(n, d);
    for (i, s) in drawn.iter().enumerate() {
        signal.row_mut(i).copy_from_slice(&s.signal);
        noise.row_mut(i).copy_from_slice(&s.background);
    }
    let noise = frobenius_normalize(&noise);
    let pixels = match config.scenario {
        Scenario::Mult => compose_multiplicative(&signal, &noise, config.alpha)?,
        _ => compose_additive(&frobenius_normalize(&signal), &noise, config.alpha)?,
    };

    let samples = drawn
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(Sample {
                pixels: pixels.row(i).to_vec(),
                label: s.label,
                gt_mask: ground_truth_mask(s.placement, config.height, config.width)?,
                signal: s.signal,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Dataset {
        config: config.clone(),
        splits: config.split_indices(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: ScenarioConfig,
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub payload: String,
    pub pixels: Section,
    pub labels: Section,
    pub masks: Section,
    pub signal: Section,
}

fn payload_path(manifest_path: &Path, file: &str) -> PathBuf {
    manifest_path.parent().unwrap_or(Path::new(".")).join(file)
}

impl Dataset {
    /// Payload bytes: f64 pixels, u8 labels, u8 masks, f64 signal patterns.
    pub fn payload_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let d = self.dim();
        let mut buf = Vec::with_capacity(n * d * 17 + n);
        for s in &self.samples {
            write_f64s(&mut buf, &s.pixels).expect("vec write");
        }
        buf.extend(self.samples.iter().map(|s| s.label));
        for s in &self.samples {
            buf.extend(s.gt_mask.iter().map(|&b| u8::from(b)));
        }
        for s in &self.samples {
            write_f64s(&mut buf, &s.signal).expect("vec write");
        }
        buf
    }

    pub fn manifest(&self, payload_file: &str) -> DatasetManifest {
        let n = self.len() as u64;
        let d = self.dim() as u64;
        let pixels = Section { offset: 0, len: n * d * 8 };
        let labels = Section { offset: pixels.len, len: n };
        let masks = Section { offset: labels.offset + n, len: n * d };
        let signal = Section { offset: masks.offset + n * d, len: n * d * 8 };
        DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            config: self.config.clone(),
            n: self.len(),
            height: self.config.height,
            width: self.config.width,
            payload: payload_file.to_string(),
            pixels,
            labels,
            masks,
            signal,
        }
    }

    /// Writes `<stem>.json` and `<stem>.bin` into `dir`; returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let payload_file = format!("{stem}.bin");
        let manifest_path = dir.join(format!("{stem}.json"));
        fs::write(dir.join(&payload_file), self.payload_bytes())?;
        let json = serde_json::to_string_pretty(&self.manifest(&payload_file))?;
        fs::write(&manifest_path, json + "\n")?;
        Ok(manifest_path)
    }

    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset format version {}",
                manifest.format_version
            )));
        }
        let payload = fs::read(payload_path(manifest_path, &manifest.payload))?;
        let n = manifest.n;
        let d = manifest.height * manifest.width;
        let pixels = f64s_from_bytes(manifest.pixels.slice(&payload)?)?;
        let labels = manifest.labels.slice(&payload)?;
        let masks = manifest.masks.slice(&payload)?;
        let signal = f64s_from_bytes(manifest.signal.slice(&payload)?)?;
        if pixels.len() != n * d || labels.len() != n || masks.len() != n * d || signal.len() != n * d {
            return Err(Error::Format("section sizes disagree with n, height, width".into()));
        }
        let samples = (0..n)
            .map(|i| Sample {
                pixels: pixels[i * d..(i + 1) * d].to_vec(),
                label: labels[i],
                gt_mask: masks[i * d..(i + 1) * d].iter().map(|&b| b != 0).collect(),
                signal: signal[i * d..(i + 1) * d].to_vec(),
            })
            .collect();
        Ok(Dataset {
            splits: manifest.config.split_indices(),
            config: manifest.config,
            samples,
        })
    }
}
