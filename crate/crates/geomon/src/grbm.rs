//! Thermodynamic observer: a Gaussian-visible restricted Boltzmann machine.
//!
//! The model is trained on the full scaled feature width with one-step
//! contrastive divergence and is read through its **visible free energy**
//!
//! ```text
//! F(x) = 1/2 * sum_i (x_i - b_i)^2 / sigma_i^2
//! ```
//!
//! which stays informative even when the sigmoid hidden layer saturates on
//! extreme inputs. The hidden layer is exposed only as mean-field
//! probabilities `sigmoid(W' (x - b) / sigma^2 + b_h)` for the cross-observer
//! bridge, together with a saturation diagnostic.
//!
//! The population-level fragmentation signal is the coefficient of variation
//! of per-relay free energies within one window.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::population::WindowFrame;
use crate::schema::hex_string;

pub const DEFAULT_HIDDEN: usize = 32;
pub const SIGMA_FLOOR: f64 = 1e-3;
pub const SATURATION_TOL: f64 = 1e-6;
/// Cap on each hidden unit's incoming weight norm. Contrastive divergence on
/// heavy-tailed inputs can grow weights without bound once many correlated
/// tail columns reinforce one direction; projecting back onto this ball
/// keeps the hidden drive finite while leaving the direction free to learn.
/// Healthy training ends far below the cap.
pub const WEIGHT_MAX_NORM: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrbmConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GrbmConfig {
    fn default() -> Self {
        GrbmConfig {
            hidden: DEFAULT_HIDDEN,
            epochs: 15,
            batch_size: 256,
            // Robust-scaled relay features keep heavy tails by design; rates
            // above ~2e-3 drive the hidden layer into full saturation there.
            learning_rate: 1e-3,
            seed: 13,
        }
    }
}

impl GrbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::model("hidden width must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::model("epochs and batch size must be positive"));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::model("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Post-training health summary for the hidden layer and the variance floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub hidden_bias_mean: f64,
    pub hidden_bias_std: f64,
    /// Units with |bias| > 5 (a healthy model has none).
    pub large_bias_units: usize,
    /// Visible coordinates whose spread hit the variance floor.
    pub sigma_clamped: usize,
    /// Fraction of (row, unit) activations within 1e-6 of 0 or 1 on the
    /// training data.
    pub saturation_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct Grbm {
    pub visible_bias: DVector<f64>,
    pub visible_sigma: DVector<f64>,
    pub weights: DMatrix<f64>, // visible x hidden
    pub hidden_bias: DVector<f64>,
    pub frozen: bool,
    pub schema_hash: String,
    pub trained_from: NaiveDate,
    pub trained_to: NaiveDate,
    pub config: GrbmConfig,
    pub report: ConditioningReport,
}

/// Per-window population statistics of the visible free energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FragmentationSignal {
    pub date: NaiveDate,
    pub free_energies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub cv: f64,
    pub warning: Option<String>,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

impl Grbm {
    /// Trains on scaled full-width rows (one relay-day per row) with one-step
    /// contrastive divergence. The per-coordinate spread is fixed from the
    /// data and floored; updates touch the weights and both bias vectors.
    pub fn train(
        data: &DMatrix<f64>,
        config: &GrbmConfig,
        schema_hash: &str,
        trained_from: NaiveDate,
        trained_to: NaiveDate,
    ) -> Result<Self> {
        config.validate()?;
        if data.nrows() < 2 {
            return Err(Error::data("training requires at least two rows"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("training data contains non-finite values"));
        }
        let n = data.nrows();
        let d = data.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        // Moment initialization: bias at the data mean, spread at the data
        // std with a hard floor so the free energy stays defined.
        let mut b = DVector::zeros(d);
        for j in 0..d {
            b[j] = data.column(j).sum() / n as f64;
        }
        let mut sigma = DVector::zeros(d);
        let mut clamped = 0usize;
        // Columns whose spread sits at the floor carry no usable gradient:
        // their 1/sigma^2 factor (1e6 at the floor) would turn the first
        // bias update into a catastrophic kick away from the data constant.
        // They are anchored instead: bias frozen at the training mean,
        // weight row zero, so at runtime they contribute pure quadratic
        // surprise whenever a point departs from the training constant.
        let mut anchored = vec![false; d];
        for j in 0..d {
            let mut ss = 0.0;
            for i in 0..n {
                let dev = data[(i, j)] - b[j];
                ss += dev * dev;
            }
            let std = (ss / n as f64).sqrt();
            if std < SIGMA_FLOOR {
                sigma[j] = SIGMA_FLOOR;
                anchored[j] = true;
                clamped += 1;
            } else {
                sigma[j] = std;
            }
        }
        let mut w = DMatrix::from_fn(d, config.hidden, |_, _| {
            let e: f64 = rng.sample(StandardNormal);
            0.01 * e
        });
        for j in 0..d {
            if anchored[j] {
                w.row_mut(j).fill(0.0);
            }
        }
        let mut b_h = DVector::zeros(config.hidden);

        let inv_sig2: DVector<f64> = sigma.map(|s| 1.0 / (s * s));
        let batch = config.batch_size.min(n);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 0..config.epochs {
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for (batch_index, chunk) in order.chunks(batch).enumerate() {
                let bsz = chunk.len();
                let mut v0 = DMatrix::zeros(bsz, d);
                for (r, &i) in chunk.iter().enumerate() {
                    v0.row_mut(r).copy_from(&data.row(i));
                }
                let ones = DVector::from_element(bsz, 1.0);
                let mut x0 = &v0 - &ones * b.transpose();
                for j in 0..d {
                    x0.column_mut(j).scale_mut(inv_sig2[j]);
                }
                let h0 = (&x0 * &w + &ones * b_h.transpose()).map(sigmoid);
                let h0s = h0.map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
                // Mean-field reconstruction keeps the negative phase quiet.
                let v1 = &ones * b.transpose() + &h0s * w.transpose();
                let mut x1 = &h0s * w.transpose();
                for j in 0..d {
                    x1.column_mut(j).scale_mut(inv_sig2[j]);
                }
                let h1 = (&x1 * &w + &ones * b_h.transpose()).map(sigmoid);

                let lr = config.learning_rate / bsz as f64;
                let mut dw = (x0.transpose() * &h0 - x1.transpose() * &h1) * lr;
                let dbh = (h0.row_sum() - h1.row_sum()).transpose() * lr;
                let mut dv = (v0 - v1).row_sum().transpose() * lr;
                for j in 0..d {
                    if anchored[j] {
                        dw.row_mut(j).fill(0.0);
                        dv[j] = 0.0;
                    } else {
                        dv[j] *= inv_sig2[j];
                    }
                }
                w += &dw;
                for c in 0..w.ncols() {
                    let norm = w.column(c).norm();
                    if norm > WEIGHT_MAX_NORM {
                        w.column_mut(c).scale_mut(WEIGHT_MAX_NORM / norm);
                    }
                }
                b_h += &dbh;
                b += &dv;
                if w.iter().any(|v| !v.is_finite())
                    || b_h.iter().any(|v| !v.is_finite())
                    || b.iter().any(|v| !v.is_finite())
                {
                    return Err(Error::model(format!(
                        "training diverged: non-finite update at epoch {epoch}, batch {batch_index}"
                    )));
                }
            }
        }

        let bias_mean = b_h.sum() / b_h.len() as f64;
        let bias_var = b_h.iter().map(|v| (v - bias_mean).powi(2)).sum::<f64>() / b_h.len() as f64;
        let large = b_h.iter().filter(|v| v.abs() > 5.0).count();
        let mut model = Grbm {
            visible_bias: b,
            visible_sigma: sigma,
            weights: w,
            hidden_bias: b_h,
            frozen: false,
            schema_hash: schema_hash.to_string(),
            trained_from,
            trained_to,
            config: config.clone(),
            report: ConditioningReport {
                hidden_bias_mean: bias_mean,
                hidden_bias_std: bias_var.sqrt(),
                large_bias_units: large,
                sigma_clamped: clamped,
                saturation_fraction: 0.0,
            },
        };
        let (_, saturation) = model.hidden_rows(data)?;
        model.report.saturation_fraction = saturation;
        Ok(model)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn visible_dim(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Half the spread-normalized squared deviation from the learned
    /// baseline. Zero exactly at the baseline, nonnegative everywhere.
    pub fn visible_free_energy(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.visible_dim() {
            return Err(Error::data("free energy: dimension mismatch"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("free energy: non-finite input"));
        }
        let mut acc = 0.0;
        for i in 0..x.len() {
            let dev = (x[i] - self.visible_bias[i]) / self.visible_sigma[i];
            acc += dev * dev;
        }
        Ok(0.5 * acc)
    }

    /// Free energy of every row of a frame block.
    pub fn free_energies(&self, rows: &DMatrix<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.visible_dim() {
            return Err(Error::data("free energy: dimension mismatch"));
        }
        let mut out = Vec::with_capacity(rows.nrows());
        for i in 0..rows.nrows() {
            let mut acc = 0.0;
            for j in 0..rows.ncols() {
                let dev = (rows[(i, j)] - self.visible_bias[j]) / self.visible_sigma[j];
                acc += dev * dev;
            }
            if !acc.is_finite() {
                return Err(Error::data("free energy: non-finite input row"));
            }
            out.push(0.5 * acc);
        }
        Ok(out)
    }

    /// Mean-field hidden probabilities plus the fraction of saturated units.
    pub fn hidden_activations(&self, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        if x.len() != self.visible_dim() {
            return Err(Error::data("hidden activations: dimension mismatch"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("hidden activations: non-finite input"));
        }
        let mut a = self.hidden_bias.clone();
        for j in 0..self.hidden_dim() {
            let mut acc = 0.0;
            for i in 0..self.visible_dim() {
                let s2 = self.visible_sigma[i] * self.visible_sigma[i];
                acc += self.weights[(i, j)] * (x[i] - self.visible_bias[i]) / s2;
            }
            a[j] += acc;
        }
        let h = a.map(sigmoid);
        let saturated = h
            .iter()
            .filter(|&&p| p < SATURATION_TOL || p > 1.0 - SATURATION_TOL)
            .count();
        let frac = saturated as f64 / h.len() as f64;
        Ok((h, frac))
    }

    /// Hidden probabilities for every row; returns the overall saturation
    /// fraction across (row, unit) pairs.
    pub fn hidden_rows(&self, rows: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
        if rows.ncols() != self.visible_dim() {
            return Err(Error::data("hidden activations: dimension mismatch"));
        }
        let ones = DVector::from_element(rows.nrows(), 1.0);
        let mut x = rows - &ones * self.visible_bias.transpose();
        for j in 0..self.visible_dim() {
            let s2 = self.visible_sigma[j] * self.visible_sigma[j];
            x.column_mut(j).scale_mut(1.0 / s2);
        }
        let h = (x * &self.weights + ones * self.hidden_bias.transpose()).map(sigmoid);
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("hidden activations: non-finite input row"));
        }
        let saturated = h
            .iter()
            .filter(|&&p| p < SATURATION_TOL || p > 1.0 - SATURATION_TOL)
            .count();
        let frac = saturated as f64 / h.len().max(1) as f64;
        Ok((h, frac))
    }

    /// Coefficient of variation of per-relay free energies for one window.
    pub fn fragmentation_cv(&self, frame: &WindowFrame) -> Result<FragmentationSignal> {
        if frame.is_empty() {
            return Err(Error::data("fragmentation signal of an empty window"));
        }
        let fe = self.free_energies(&frame.scaled_full)?;
        cv_from_energies(frame.date, fe)
    }

    /// Content hash of the parameter tensors.
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.weights.iter() {
            hasher.update(v.to_le_bytes());
        }
        for vec in [&self.visible_bias, &self.visible_sigma, &self.hidden_bias] {
            for v in vec.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

/// Population CV (N convention) of a window's free energies.
pub fn cv_from_energies(date: NaiveDate, free_energies: Vec<f64>) -> Result<FragmentationSignal> {
    if free_energies.is_empty() {
        return Err(Error::data("fragmentation signal of an empty window"));
    }
    let n = free_energies.len() as f64;
    let mean = free_energies.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::data(
            "degenerate population: every relay sits exactly at baseline",
        ));
    }
    if mean < 0.0 || !mean.is_finite() {
        return Err(Error::data("free energies must be nonnegative and finite"));
    }
    let var = free_energies
        .iter()
        .map(|f| (f - mean) * (f - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let warning = if free_energies.len() == 1 {
        Some("single-relay window: spread is identically zero".to_string())
    } else {
        None
    };
    Ok(FragmentationSignal {
        date,
        free_energies,
        mean,
        std,
        cv: std / mean,
        warning,
    })
}
