//! Exact Gaussian-process regression of the two-dimensional residual
//! disturbance, with offline fitting and a sliding-window online update.
//!
//! Both output dimensions share inputs, kernel and the factorized Gram matrix,
//! so the predictive variance is the same for `u` and `v`.

use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix2, Matrix2x6, SVector, Vector2, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::vision::ImageFeature;

pub const INPUT_DIM: usize = 8;

/// GP input `[s; qdot]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpInput(pub SVector<f64, INPUT_DIM>);

impl GpInput {
    pub fn from_parts(s: &Vector2<f64>, qdot: &Vector6<f64>) -> Self {
        let mut z = SVector::<f64, INPUT_DIM>::zeros();
        z.fixed_rows_mut::<2>(0).copy_from(s);
        z.fixed_rows_mut::<6>(2).copy_from(qdot);
        GpInput(z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub signal_variance: f64,
    /// Diagonal of the length-scale matrix `L` (the kernel uses `L^{-1}` directly).
    pub length_scales: [f64; INPUT_DIM],
    pub noise_variance: f64,
}

impl Default for GpHyperparams {
    fn default() -> Self {
        Self { signal_variance: 0.1, length_scales: [0.5; INPUT_DIM], noise_variance: 1e-4 }
    }
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0) {
            return Err(invalid("signal variance must be positive"));
        }
        if !self.length_scales.iter().all(|&l| l > 0.0) {
            return Err(invalid("length scales must be positive"));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(invalid("noise variance must be nonnegative"));
        }
        Ok(())
    }
}

/// Squared-exponential kernel.
pub fn kernel(zi: &GpInput, zj: &GpInput, h: &GpHyperparams) -> f64 {
    let quad: f64 = zi.0.iter().zip(zj.0.iter()).zip(h.length_scales.iter()).map(|((a, b), l)| (a - b) * (a - b) / l).sum();
    h.signal_variance * (-0.5 * quad).exp()
}

/// Residual training target `B_d^+ (s_{k+1} - s_k - dt * J_s * qdot)`.
pub fn residual_target(
    s_k: &ImageFeature,
    s_k1: &ImageFeature,
    qdot: &Vector6<f64>,
    js: &Matrix2x6<f64>,
    dt: f64,
    b_d: &Matrix2<f64>,
) -> Result<Vector2<f64>> {
    if !(dt > 0.0) {
        return Err(invalid("dt must be positive"));
    }
    let innovation = s_k1.to_vector() - s_k.to_vector() - dt * js * qdot;
    let pinv = b_d.pseudo_inverse(1e-12).map_err(|e| invalid(e.to_string()))?;
    Ok(pinv * innovation)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GpDataset {
    pub inputs: Vec<GpInput>,
    pub targets: Vec<Vector2<f64>>,
}

impl GpDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, z: GpInput, y: Vector2<f64>) {
        self.inputs.push(z);
        self.targets.push(y);
    }

    /// Writes rows `z1..z8, y1, y2` with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=INPUT_DIM).map(|i| format!("z{i}")).collect();
        header.extend(["y1".to_string(), "y2".to_string()]);
        w.write_record(&header)?;
        for (z, y) in self.inputs.iter().zip(&self.targets) {
            let row: Vec<String> = z.0.iter().chain(y.iter()).map(|v| format!("{v:e}")).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut ds = GpDataset::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != INPUT_DIM + 2 {
                return Err(Error::Config(format!("dataset row {}: expected {} columns", line + 2, INPUT_DIM + 2)));
            }
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("dataset row {}: {e}", line + 2)))?;
            let z = GpInput(SVector::<f64, INPUT_DIM>::from_column_slice(&vals[..INPUT_DIM]));
            ds.push(z, Vector2::new(vals[INPUT_DIM], vals[INPUT_DIM + 1]));
        }
        Ok(ds)
    }
}

/// Posterior mean and (diagonal) covariance at one query point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPrediction {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl GpPrediction {
    pub fn variance(&self) -> f64 {
        self.cov[(0, 0)]
    }
}

/// A fitted GP posterior. Immutable; updates produce a new value.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: GpDataset,
    hyper: GpHyperparams,
    chol: Option<Cholesky<f64, Dyn>>,
    /// `Lambda^{-1} Y`, one column per output dimension.
    weights: DMatrix<f64>,
}

/// Factorizes `K_ZZ + sigma_n^2 I` and caches `Lambda^{-1} Y`.
pub fn fit(dataset: GpDataset, h: GpHyperparams) -> Result<GpModel> {
    h.validate()?;
    if dataset.inputs.len() != dataset.targets.len() {
        return Err(Error::Dimension("inputs and targets differ in length".into()));
    }
    let n = dataset.len();
    if n == 0 {
        return Ok(GpModel { dataset, hyper: h, chol: None, weights: DMatrix::zeros(0, 2) });
    }
    let z = &dataset.inputs;
    let mut gram = DMatrix::from_fn(n, n, |i, j| kernel(&z[i], &z[j], &h));
    for i in 0..n {
        gram[(i, i)] += h.noise_variance;
    }
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::IllConditioned(format!("Gram matrix of {n} points is not positive definite")))?;
    let y = DMatrix::from_fn(n, 2, |i, j| dataset.targets[i][j]);
    let weights = chol.solve(&y);
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("non-finite GP weights".into()));
    }
    Ok(GpModel { dataset, hyper: h, chol: Some(chol), weights })
}

impl GpModel {
    /// Model with no data; predictions return the prior.
    pub fn prior(h: GpHyperparams) -> Result<Self> {
        fit(GpDataset::new(), h)
    }

    pub fn dataset(&self) -> &GpDataset {
        &self.dataset
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    /// Cached `Lambda^{-1} Y` (n x 2).
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn predict(&self, z: &GpInput) -> GpPrediction {
        let sf2 = self.hyper.signal_variance;
        let Some(chol) = &self.chol else {
            return GpPrediction { mean: Vector2::zeros(), cov: Matrix2::identity() * sf2 };
        };
        let kstar = DVector::from_iterator(self.len(), self.dataset.inputs.iter().map(|zi| kernel(z, zi, &self.hyper)));
        let mean = Vector2::new(kstar.dot(&self.weights.column(0)), kstar.dot(&self.weights.column(1)));
        let v = chol.l().solve_lower_triangular(&kstar).unwrap_or_else(|| DVector::zeros(self.len()));
        let var = (sf2 - v.norm_squared()).clamp(0.0, sf2);
        GpPrediction { mean, cov: Matrix2::identity() * var }
    }

    /// Appends a pair, evicts the oldest beyond `window`, and refits.
    pub fn window_update(&self, z_new: GpInput, y_new: Vector2<f64>, window: usize) -> Result<GpModel> {
        if window == 0 {
            return Err(invalid("window must be at least 1"));
        }
        let mut ds = self.dataset.clone();
        ds.push(z_new, y_new);
        if ds.len() > window {
            let excess = ds.len() - window;
            ds.inputs.drain(..excess);
            ds.targets.drain(..excess);
        }
        fit(ds, self.hyper.clone())
    }
}
