//! Geometric observer: a contractive denoising autoencoder.
//!
//! The encoder maps the scaled clean features through one saturating hidden
//! layer (tanh) to a linear latent head; the decoder mirrors it. Training
//! minimizes
//!
//! ```text
//! L = mean ||x - x_hat(corrupt(x))||^2 + lambda_c * mean ||J(x)||_F^2
//! ```
//!
//! where `J(x)` is the encoder Jacobian at the clean input and corruption is
//! additive Gaussian noise. The Jacobian of the two-layer encoder has the
//! closed form `J = W2 diag(1 - h^2) W1`, which also yields an exact
//! expression for the penalty gradient: with `G = W2' W2`, `R = W1 W1'` and
//! `d = 1 - h^2`, the per-sample penalty is `d' (G .* R) d`.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::hex_string;

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_LATENT: usize = 32;
pub const DEFAULT_LAMBDA_C: f64 = 1e-3;
pub const DEFAULT_NOISE_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdaeConfig {
    pub hidden: usize,
    pub latent: usize,
    pub lambda_c: f64,
    pub noise_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for CdaeConfig {
    fn default() -> Self {
        CdaeConfig {
            hidden: DEFAULT_HIDDEN,
            latent: DEFAULT_LATENT,
            lambda_c: DEFAULT_LAMBDA_C,
            noise_std: DEFAULT_NOISE_STD,
            epochs: 30,
            batch_size: 128,
            learning_rate: 3e-3,
            seed: 7,
        }
    }
}

impl CdaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.latent == 0 {
            return Err(Error::model("layer widths must be positive"));
        }
        if self.lambda_c < 0.0 || !self.lambda_c.is_finite() {
            return Err(Error::model("contraction weight must be finite and >= 0"));
        }
        if self.noise_std < 0.0 || !self.noise_std.is_finite() {
            return Err(Error::model("corruption noise std must be finite and >= 0"));
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

/// Trained encoder/decoder parameters plus provenance metadata.
#[derive(Debug, Clone)]
pub struct Cdae {
    pub w1: DMatrix<f64>, // hidden x input
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>, // latent x hidden
    pub b2: DVector<f64>,
    pub w3: DMatrix<f64>, // hidden x latent
    pub b3: DVector<f64>,
    pub w4: DMatrix<f64>, // input x hidden
    pub b4: DVector<f64>,
    pub activation: String,
    pub frozen: bool,
    pub schema_hash: String,
    pub trained_from: NaiveDate,
    pub trained_to: NaiveDate,
    pub config: CdaeConfig,
    pub final_reconstruction_error: f64,
    pub final_jacobian_norm_sq: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i];
            for (k, pv) in p.iter_mut().enumerate() {
                let m = &mut self.m[i][k];
                let v = &mut self.v[i][k];
                *m = B1 * *m + (1.0 - B1) * g[k];
                *v = B2 * *v + (1.0 - B2) * g[k] * g[k];
                let mhat = *m / c1;
                let vhat = *v / c2;
                *pv -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }
}

impl Cdae {
    /// Trains a new model on scaled clean rows (one relay-day per row).
    pub fn train(
        data: &DMatrix<f64>,
        config: &CdaeConfig,
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
        let input = data.ncols();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let glorot = |rng: &mut ChaCha8Rng, rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
        };
        let mut model = Cdae {
            w1: glorot(&mut rng, config.hidden, input),
            b1: DVector::zeros(config.hidden),
            w2: glorot(&mut rng, config.latent, config.hidden),
            b2: DVector::zeros(config.latent),
            w3: glorot(&mut rng, config.hidden, config.latent),
            b3: DVector::zeros(config.hidden),
            w4: glorot(&mut rng, input, config.hidden),
            b4: DVector::zeros(input),
            activation: "tanh".to_string(),
            frozen: false,
            schema_hash: schema_hash.to_string(),
            trained_from,
            trained_to,
            config: config.clone(),
            final_reconstruction_error: f64::NAN,
            final_jacobian_norm_sq: f64::NAN,
        };
        model.run_training(data, config.epochs, &mut rng)?;
        model.final_reconstruction_error = model.mean_reconstruction_error(data)?;
        model.final_jacobian_norm_sq = model.mean_jacobian_norm_sq(data)?;
        Ok(model)
    }

    /// Additional training epochs on an unfrozen model.
    pub fn continue_training(&mut self, data: &DMatrix<f64>, epochs: usize) -> Result<()> {
        if self.frozen {
            return Err(Error::model("cannot train a frozen model"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(1));
        self.run_training(data, epochs, &mut rng)?;
        self.final_reconstruction_error = self.mean_reconstruction_error(data)?;
        self.final_jacobian_norm_sq = self.mean_jacobian_norm_sq(data)?;
        Ok(())
    }

    fn run_training(
        &mut self,
        data: &DMatrix<f64>,
        epochs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::model("cannot train a frozen model"));
        }
        if data.ncols() != self.w1.ncols() {
            return Err(Error::data(format!(
                "training data width {} does not match model input {}",
                data.ncols(),
                self.w1.ncols()
            )));
        }
        let n = data.nrows();
        let batch = self.config.batch_size.min(n);
        let lambda = self.config.lambda_c;
        let noise = self.config.noise_std;
        let sizes = [
            self.w1.len(),
            self.b1.len(),
            self.w2.len(),
            self.b2.len(),
            self.w3.len(),
            self.b3.len(),
            self.w4.len(),
            self.b4.len(),
        ];
        let mut adam = Adam::new(&sizes);
        let mut order: Vec<usize> = (0..n).collect();

        for epoch in 0..epochs {
            // Deterministic Fisher-Yates shuffle.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            for (batch_index, chunk) in order.chunks(batch).enumerate() {
                let b = chunk.len();
                let mut xb = DMatrix::zeros(b, data.ncols());
                for (r, &i) in chunk.iter().enumerate() {
                    xb.row_mut(r).copy_from(&data.row(i));
                }
                let mut xn = xb.clone();
                if noise > 0.0 {
                    for v in xn.iter_mut() {
                        let e: f64 = rng.sample(StandardNormal);
                        *v += noise * e;
                    }
                }
                let (loss, grads) = self.batch_gradients(&xb, &xn, lambda);
                if !loss.is_finite() {
                    return Err(Error::model(format!(
                        "training diverged: non-finite loss at epoch {epoch}, batch {batch_index}"
                    )));
                }
                let lr = self.config.learning_rate;
                let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
                let mut params: Vec<&mut [f64]> = vec![
                    self.w1.as_mut_slice(),
                    self.b1.as_mut_slice(),
                    self.w2.as_mut_slice(),
                    self.b2.as_mut_slice(),
                    self.w3.as_mut_slice(),
                    self.b3.as_mut_slice(),
                    self.w4.as_mut_slice(),
                    self.b4.as_mut_slice(),
                ];
                adam.step(&mut params, &grad_slices, lr);
            }
        }
        Ok(())
    }

    /// Loss and gradients for one batch: `xb` clean rows, `xn` corrupted rows.
    /// Gradient order: w1, b1, w2, b2, w3, b3, w4, b4 (biases as column matrices).
    fn batch_gradients(
        &self,
        xb: &DMatrix<f64>,
        xn: &DMatrix<f64>,
        lambda: f64,
    ) -> (f64, Vec<DMatrix<f64>>) {
        let b = xb.nrows() as f64;
        let ones = DVector::from_element(xb.nrows(), 1.0);

        // Reconstruction path on corrupted input.
        let a1 = xn * self.w1.transpose() + &ones * self.b1.transpose();
        let h1 = a1.map(f64::tanh);
        let z = &h1 * self.w2.transpose() + &ones * self.b2.transpose();
        let a3 = &z * self.w3.transpose() + &ones * self.b3.transpose();
        let h3 = a3.map(f64::tanh);
        let xhat = &h3 * self.w4.transpose() + &ones * self.b4.transpose();
        let res = &xhat - xb;
        let recon = res.iter().map(|v| v * v).sum::<f64>() / b;

        let g4 = &res * 2.0;
        let dw4 = g4.transpose() * &h3;
        let db4 = g4.row_sum().transpose();
        let dh3 = &g4 * &self.w4;
        let da3 = dh3.zip_map(&h3, |g, h| g * (1.0 - h * h));
        let dw3 = da3.transpose() * &z;
        let db3 = da3.row_sum().transpose();
        let dz = &da3 * &self.w3;
        let mut dw2 = dz.transpose() * &h1;
        let db2 = dz.row_sum().transpose();
        let dh1 = &dz * &self.w2;
        let da1 = dh1.zip_map(&h1, |g, h| g * (1.0 - h * h));
        let mut dw1 = da1.transpose() * xn;
        let mut db1 = da1.row_sum().transpose();

        // Contraction penalty on the clean input.
        let g_mat = self.w2.transpose() * &self.w2; // hidden x hidden
        let r_mat = &self.w1 * self.w1.transpose(); // hidden x hidden
        let h_mat = g_mat.component_mul(&r_mat);
        let a1c = xb * self.w1.transpose() + &ones * self.b1.transpose();
        let hc = a1c.map(f64::tanh);
        let d = hc.map(|h| 1.0 - h * h); // batch x hidden
        let dh = &d * &h_mat; // batch x hidden (rows: H d_s since H symmetric)
        let penalty = dh.component_mul(&d).sum() / b;
        if lambda > 0.0 {
            let dpen = &dh * 2.0;
            let da1c = dpen.zip_map(&hc, |g, h| g * (-2.0 * h)).component_mul(&d);
            let dcov = d.transpose() * &d; // hidden x hidden
            dw1 += (g_mat.component_mul(&dcov) * &self.w1 * 2.0 + da1c.transpose() * xb) * lambda;
            db1 += da1c.row_sum().transpose() * lambda;
            dw2 += &self.w2 * r_mat.component_mul(&dcov) * 2.0 * lambda;
        }

        let loss = recon + lambda * penalty;
        let scale = 1.0 / b;
        let grads = vec![
            dw1 * scale,
            DMatrix::from_column_slice(db1.nrows(), 1, db1.as_slice()) * scale,
            dw2 * scale,
            DMatrix::from_column_slice(db2.nrows(), 1, db2.as_slice()) * scale,
            dw3 * scale,
            DMatrix::from_column_slice(db3.nrows(), 1, db3.as_slice()) * scale,
            dw4 * scale,
            DMatrix::from_column_slice(db4.nrows(), 1, db4.as_slice()) * scale,
        ];
        (loss, grads)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn encode(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::data("encode: input dimension mismatch"));
        }
        let h = (&self.w1 * x + &self.b1).map(f64::tanh);
        Ok(&self.w2 * h + &self.b2)
    }

    pub fn decode(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::data("decode: latent dimension mismatch"));
        }
        let h = (&self.w3 * z + &self.b3).map(f64::tanh);
        Ok(&self.w4 * h + &self.b4)
    }

    pub fn reconstruct(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.decode(&self.encode(x)?)
    }

    /// Encodes every row of a frame block.
    pub fn encode_rows(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::data("encode_rows: input dimension mismatch"));
        }
        let ones = DVector::from_element(rows.nrows(), 1.0);
        let h = (rows * self.w1.transpose() + &ones * self.b1.transpose()).map(f64::tanh);
        Ok(h * self.w2.transpose() + ones * self.b2.transpose())
    }

    /// Analytic encoder Jacobian `J = W2 diag(1 - h^2) W1` at a point.
    pub fn encoder_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::data("jacobian: input dimension mismatch"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("jacobian: input contains non-finite values"));
        }
        let h = (&self.w1 * x + &self.b1).map(f64::tanh);
        let mut w1d = self.w1.clone();
        for (i, hv) in h.iter().enumerate() {
            let d = 1.0 - hv * hv;
            w1d.row_mut(i).scale_mut(d);
        }
        let j = &self.w2 * w1d;
        if j.iter().any(|v| !v.is_finite()) {
            return Err(Error::model("jacobian: non-finite entries"));
        }
        Ok(j)
    }

    /// Mean squared reconstruction error over rows.
    pub fn mean_reconstruction_error(&self, rows: &DMatrix<f64>) -> Result<f64> {
        if rows.nrows() == 0 {
            return Err(Error::data("mean reconstruction error of empty input"));
        }
        let ones = DVector::from_element(rows.nrows(), 1.0);
        let h1 = (rows * self.w1.transpose() + &ones * self.b1.transpose()).map(f64::tanh);
        let z = &h1 * self.w2.transpose() + &ones * self.b2.transpose();
        let h3 = (&z * self.w3.transpose() + &ones * self.b3.transpose()).map(f64::tanh);
        let xhat = &h3 * self.w4.transpose() + &ones * self.b4.transpose();
        let res = xhat - rows;
        Ok(res.iter().map(|v| v * v).sum::<f64>() / rows.nrows() as f64)
    }

    /// Mean squared Frobenius norm of the encoder Jacobian over rows.
    pub fn mean_jacobian_norm_sq(&self, rows: &DMatrix<f64>) -> Result<f64> {
        if rows.nrows() == 0 {
            return Err(Error::data("mean Jacobian norm of empty input"));
        }
        let ones = DVector::from_element(rows.nrows(), 1.0);
        let g_mat = self.w2.transpose() * &self.w2;
        let r_mat = &self.w1 * self.w1.transpose();
        let h_mat = g_mat.component_mul(&r_mat);
        let hc = (rows * self.w1.transpose() + &ones * self.b1.transpose()).map(f64::tanh);
        let d = hc.map(|h| 1.0 - h * h);
        let dh = &d * &h_mat;
        Ok(dh.component_mul(&d).sum() / rows.nrows() as f64)
    }

    /// Content hash of the parameter tensors (freeze-contract witness).
    pub fn params_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for m in [&self.w1, &self.w2, &self.w3, &self.w4] {
            for v in m.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        for v in [&self.b1, &self.b2, &self.b3, &self.b4] {
            for x in v.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn random_model(seed: u64, input: usize, hidden: usize, latent: usize) -> Cdae {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-0.8..0.8));
        Cdae {
            w1: mk(hidden, input),
            b1: DVector::from_fn(hidden, |i, _| 0.01 * i as f64),
            w2: mk(latent, hidden),
            b2: DVector::zeros(latent),
            w3: mk(hidden, latent),
            b3: DVector::zeros(hidden),
            w4: mk(input, hidden),
            b4: DVector::zeros(input),
            activation: "tanh".to_string(),
            frozen: false,
            schema_hash: "test".to_string(),
            trained_from: date(2026, 1, 1),
            trained_to: date(2026, 1, 2),
            config: CdaeConfig::default(),
            final_reconstruction_error: 0.0,
            final_jacobian_norm_sq: 0.0,
        }
    }

    /// Independent oracle: central finite differences of `encode`.
    fn numeric_jacobian(model: &Cdae, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(model.latent_dim(), model.input_dim());
        for col in 0..model.input_dim() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            let zp = model.encode(&xp).unwrap();
            let zm = model.encode(&xm).unwrap();
            for row in 0..model.latent_dim() {
                j[(row, col)] = (zp[row] - zm[row]) / (2.0 * h);
            }
        }
        j
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let model = random_model(11, 17, 64, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = DVector::from_fn(17, |_, _| rng.random_range(-2.0..2.0));
            let ja = model.encoder_jacobian(&x).unwrap();
            let jn = numeric_jacobian(&model, &x, 1e-5);
            let denom = jn.norm().max(1e-12);
            let rel = (ja - jn).norm() / denom;
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn penalty_closed_form_matches_explicit_jacobian_norm() {
        let model = random_model(3, 9, 14, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = DMatrix::from_fn(25, 9, |_, _| rng.random_range(-1.5..1.5));
        let fast = model.mean_jacobian_norm_sq(&rows).unwrap();
        let mut slow = 0.0;
        for i in 0..rows.nrows() {
            let x = rows.row(i).transpose();
            let j = model.encoder_jacobian(&x).unwrap();
            slow += j.iter().map(|v| v * v).sum::<f64>();
        }
        slow /= rows.nrows() as f64;
        assert!((fast - slow).abs() / slow.max(1e-12) < 1e-10);
    }

    #[test]
    fn batch_gradients_match_finite_differences() {
        // Noise-free corruption makes the loss deterministic, so every
        // parameter gradient can be checked numerically.
        let mut model = random_model(21, 5, 7, 4);
        model.config.lambda_c = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xb = DMatrix::from_fn(12, 5, |_, _| rng.random_range(-1.0..1.0));
        let lambda = model.config.lambda_c;
        let (_, grads) = model.batch_gradients(&xb, &xb, lambda);

        let eps = 1e-6;
        let loss_of = |m: &Cdae| -> f64 {
            let (loss, _) = m.batch_gradients(&xb, &xb, lambda);
            loss
        };
        // Check a scattering of entries in each tensor.
        let probes: Vec<(usize, usize, usize)> = vec![
            (0, 2, 3),
            (1, 4, 0),
            (2, 1, 5),
            (3, 2, 0),
            (4, 3, 2),
            (5, 6, 0),
            (6, 4, 6),
            (7, 1, 0),
        ];
        for (tensor, r, c) in probes {
            let mut mp = model.clone();
            let mut mm = model.clone();
            {
                let tp: &mut f64 = match tensor {
                    0 => &mut mp.w1[(r, c)],
                    1 => &mut mp.b1[r],
                    2 => &mut mp.w2[(r, c)],
                    3 => &mut mp.b2[r],
                    4 => &mut mp.w3[(r, c)],
                    5 => &mut mp.b3[r],
                    6 => &mut mp.w4[(r, c)],
                    _ => &mut mp.b4[r],
                };
                *tp += eps;
            }
            {
                let tm: &mut f64 = match tensor {
                    0 => &mut mm.w1[(r, c)],
                    1 => &mut mm.b1[r],
                    2 => &mut mm.w2[(r, c)],
                    3 => &mut mm.b2[r],
                    4 => &mut mm.w3[(r, c)],
                    5 => &mut mm.b3[r],
                    6 => &mut mm.w4[(r, c)],
                    _ => &mut mm.b4[r],
                };
                *tm -= eps;
            }
            let numeric = (loss_of(&mp) - loss_of(&mm)) / (2.0 * eps);
            let analytic = if tensor % 2 == 0 {
                grads[tensor][(r, c)]
            } else {
                grads[tensor][(r, 0)]
            };
            let denom = numeric.abs().max(1e-8);
            assert!(
                (numeric - analytic).abs() / denom < 1e-4,
                "tensor {tensor} ({r},{c}): numeric {numeric} analytic {analytic}"
            );
        }
    }

    fn toy_training_data(seed: u64, n: usize, dim: usize) -> DMatrix<f64> {
        // Low-rank structure plus noise so there is something to learn.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = DMatrix::from_fn(3, dim, |_, _| rng.random_range(-1.0..1.0));
        DMatrix::from_fn(n, dim, |_, _| 0.0).map_with_location(|i, j, _| {
            let mut v = 0.0;
            // Deterministic per-cell pseudo-factors derived from the row index.
            for f in 0..3 {
                let t = ((i * 31 + f * 17) % 97) as f64 / 97.0 - 0.5;
                v += t * basis[(f, j)];
            }
            v
        }) + DMatrix::from_fn(n, dim, |_, _| rng.random_range(-0.05..0.05))
    }

    #[test]
    fn contraction_penalty_shrinks_jacobian_monotonically() {
        let data = toy_training_data(4, 300, 17);
        let lambdas = [0.0, 1e-4, 1e-3, 1e-2];
        let mut norms = Vec::new();
        for &l in &lambdas {
            let config = CdaeConfig {
                lambda_c: l,
                epochs: 12,
                batch_size: 64,
                seed: 42,
                ..CdaeConfig::default()
            };
            let model =
                Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 14)).unwrap();
            norms.push(model.final_jacobian_norm_sq);
        }
        for w in norms.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "jacobian norms not non-increasing: {norms:?}"
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_training_data(8, 120, 17);
        let config = CdaeConfig {
            epochs: 4,
            batch_size: 32,
            seed: 99,
            ..CdaeConfig::default()
        };
        let a = Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 5)).unwrap();
        let b = Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 5)).unwrap();
        assert_eq!(a.params_hash(), b.params_hash());
    }

    #[test]
    fn freeze_contract_and_totality() {
        let data = toy_training_data(1, 80, 17);
        let config = CdaeConfig {
            epochs: 2,
            batch_size: 32,
            ..CdaeConfig::default()
        };
        let mut model =
            Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 3)).unwrap();
        model.freeze();
        let before = model.params_hash();
        let x = DVector::from_element(17, 0.3);
        let z = model.encode(&x).unwrap();
        let xr = model.reconstruct(&x).unwrap();
        let j = model.encoder_jacobian(&x).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
        assert!(xr.iter().all(|v| v.is_finite()));
        assert!(j.iter().all(|v| v.is_finite()));
        assert_eq!(model.params_hash(), before);
        assert!(model.continue_training(&data, 1).is_err());
    }

    #[test]
    fn jacobian_rejects_non_finite_input() {
        let model = random_model(2, 6, 8, 4);
        let mut x = DVector::zeros(6);
        x[2] = f64::NAN;
        assert!(model.encoder_jacobian(&x).is_err());
    }

    #[test]
    fn jacobian_reduces_to_weight_product_in_the_linear_regime() {
        // With zero hidden bias, tanh is exactly linear at the origin, so the
        // Jacobian there equals the plain weight product.
        let mut model = random_model(6, 9, 12, 5);
        model.b1 = DVector::zeros(12);
        let j = model.encoder_jacobian(&DVector::zeros(9)).unwrap();
        let product = &model.w2 * &model.w1;
        assert!((j - product).abs().max() < 1e-14);
    }

    #[test]
    fn batch_encode_equals_row_wise_encode() {
        let model = random_model(7, 8, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = DMatrix::from_fn(6, 8, |_, _| rng.random_range(-1.0..1.0));
        let batch = model.encode_rows(&rows).unwrap();
        for i in 0..6 {
            let z = model.encode(&rows.row(i).transpose()).unwrap();
            for l in 0..4 {
                assert!((batch[(i, l)] - z[l]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn training_on_constant_data_drives_losses_to_zero() {
        let data = DMatrix::from_element(64, 17, 0.4);
        let config = CdaeConfig {
            epochs: 500,
            batch_size: 64,
            noise_std: 0.0,
            learning_rate: 1e-2,
            lambda_c: 0.01,
            ..CdaeConfig::default()
        };
        let model = Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 2)).unwrap();
        assert!(
            model.final_reconstruction_error < 1e-6,
            "reconstruction {}",
            model.final_reconstruction_error
        );
        assert!(
            model.final_jacobian_norm_sq < 0.05,
            "jacobian norm {}",
            model.final_jacobian_norm_sq
        );
    }

    #[test]
    fn soft_perturbations_move_latents_less_than_stiff_ones() {
        // First-order consistency between the latent metric and the Jacobian:
        // equal-magnitude steps along the top and bottom eigenvectors of JᵀJ
        // must displace the latent by correspondingly different amounts.
        let data = toy_training_data(12, 300, 17);
        let config = CdaeConfig {
            epochs: 15,
            batch_size: 64,
            ..CdaeConfig::default()
        };
        let model = Cdae::train(&data, &config, "h", date(2026, 1, 1), date(2026, 1, 8)).unwrap();
        let x = data.row(0).transpose();
        let j = model.encoder_jacobian(&x).unwrap();
        let m = j.transpose() * &j;
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut idx: Vec<usize> = (0..17).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let stiff_dir = eig.eigenvectors.column(idx[0]).into_owned();
        let soft_dir = eig.eigenvectors.column(idx[16]).into_owned();
        let step = 1e-3;
        let z0 = model.encode(&x).unwrap();
        let dz_stiff = (model.encode(&(&x + &stiff_dir * step)).unwrap() - &z0).norm();
        let dz_soft = (model.encode(&(&x + &soft_dir * step)).unwrap() - &z0).norm();
        assert!(
            dz_stiff > dz_soft,
            "stiff step {dz_stiff} should exceed soft step {dz_soft}"
        );
        // The decoder output moves more under the stiff step as well.
        let x0 = model.reconstruct(&x).unwrap();
        let dx_stiff = (model.reconstruct(&(&x + &stiff_dir * step)).unwrap() - &x0).norm();
        let dx_soft = (model.reconstruct(&(&x + &soft_dir * step)).unwrap() - &x0).norm();
        assert!(dx_stiff > dx_soft);
    }
}
