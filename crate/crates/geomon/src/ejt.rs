//! Eigenspace tracking over the encoder's metric tensor.
//!
//! From an encoder Jacobian `J` the metric tensor `M = JᵀJ` describes how
//! sensitive the latent view is to each input direction. Its eigenspectrum is
//! split into a **stiff** span (top eigenvectors carrying at least the
//! trace-mass threshold, default 90%) and the complementary **soft** span.
//! A population displacement `Δx` is scored by its soft-alignment ratio
//!
//! ```text
//! α = ‖V_soft V_softᵀ Δx‖² / ‖Δx‖²   ∈ [0, 1]
//! ```
//!
//! α near 1 means the displacement is absorbed along directions the encoder
//! barely tracks (elastic); α near 0 means it rams the stiff axes. α values
//! are standardized against a frozen baseline fitted on stable windows.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRACE_MASS: f64 = 0.90;
/// Displacements shorter than this (scaled units) have no defined direction.
pub const DISPLACEMENT_FLOOR: f64 = 1e-6;
/// Relative tolerance for eigenvalue ties at the stiff/soft boundary.
pub const TIE_RELATIVE_TOL: f64 = 1e-12;
/// Frozen global baseline for the soft-alignment z-score.
pub const BASELINE_MEAN: f64 = 0.750;
pub const BASELINE_STD: f64 = 0.113;

/// Stiff/soft eigenspace split of a metric tensor.
#[derive(Debug, Clone)]
pub struct EjtSplit {
    /// Descending nonnegative eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `eigenvalues` order.
    pub eigenvectors: DMatrix<f64>,
    /// Number of stiff directions (leading columns).
    pub k: usize,
    pub trace_mass_threshold: f64,
    /// Point where the Jacobian was evaluated, with a label naming it.
    pub evaluation_point: Vec<f64>,
    pub evaluation_label: String,
}

impl EjtSplit {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn v_stiff(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.k).into_owned()
    }

    pub fn v_soft(&self) -> DMatrix<f64> {
        self.eigenvectors
            .columns(self.k, self.dim() - self.k)
            .into_owned()
    }
}

/// Frozen mean/std of stable-window soft-alignment ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EjtBaseline {
    pub mean: f64,
    pub std: f64,
    pub source_from: Option<NaiveDate>,
    pub source_to: Option<NaiveDate>,
    pub frozen: bool,
}

impl Default for EjtBaseline {
    fn default() -> Self {
        EjtBaseline {
            mean: BASELINE_MEAN,
            std: BASELINE_STD,
            source_from: None,
            source_to: None,
            frozen: true,
        }
    }
}

/// Soft-alignment ratio of one displacement against one split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub alpha: f64,
    pub displacement_norm: f64,
}

/// Symmetrized metric tensor `(JᵀJ + (JᵀJ)ᵀ)/2`.
pub fn metric_tensor(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("metric tensor: non-finite Jacobian"));
    }
    let m = j.transpose() * j;
    Ok((&m + m.transpose()) * 0.5)
}

/// Full eigendecomposition plus the trace-mass split.
///
/// `k` is the smallest count whose eigenvalue mass reaches the threshold;
/// eigenvalues tied with the boundary (relative gap ≤ 1e-12) are pulled into
/// the stiff span, but the soft span is never allowed to become empty.
pub fn eigen_split(
    m: &DMatrix<f64>,
    threshold: f64,
    evaluation_point: &[f64],
    evaluation_label: &str,
) -> Result<EjtSplit> {
    let n = m.nrows();
    if n == 0 || m.ncols() != n {
        return Err(Error::data("eigen split requires a square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("eigen split: non-finite entries"));
    }
    if !(0.0..=1.0).contains(&threshold) || threshold <= 0.0 {
        return Err(Error::data("trace-mass threshold must be in (0, 1]"));
    }
    let asym = (m - m.transpose()).abs().max();
    let scale = m.abs().max().max(1e-300);
    if asym / scale > 1e-9 {
        return Err(Error::data("eigen split expects a symmetric matrix"));
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let eigenvalues: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (pos, &i) in idx.iter().enumerate() {
        eigenvectors.column_mut(pos).copy_from(&eig.eigenvectors.column(i));
    }
    let trace: f64 = eigenvalues.iter().sum();
    if trace <= 0.0 {
        return Err(Error::data("degenerate metric: zero trace"));
    }

    let mut k = n;
    let mut cum = 0.0;
    for (i, lambda) in eigenvalues.iter().enumerate() {
        cum += lambda;
        if cum / trace >= threshold {
            k = i + 1;
            break;
        }
    }
    // Pull boundary ties into the stiff span, never emptying the soft span.
    while k < n - 1 {
        let boundary = eigenvalues[k - 1];
        let next = eigenvalues[k];
        if boundary - next <= TIE_RELATIVE_TOL * boundary.abs() {
            k += 1;
        } else {
            break;
        }
    }
    k = k.min(n - 1).max(1);

    Ok(EjtSplit {
        eigenvalues,
        eigenvectors,
        k,
        trace_mass_threshold: threshold,
        evaluation_point: evaluation_point.to_vec(),
        evaluation_label: evaluation_label.to_string(),
    })
}

/// Soft-alignment ratio of a displacement. Returns `None` when the
/// displacement is below the floor and has no meaningful direction.
pub fn soft_alignment(delta_x: &DVector<f64>, split: &EjtSplit) -> Result<Option<AlignmentResult>> {
    if delta_x.len() != split.dim() {
        return Err(Error::data("soft alignment: dimension mismatch"));
    }
    if delta_x.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("soft alignment: non-finite displacement"));
    }
    let norm = delta_x.norm();
    if norm < DISPLACEMENT_FLOOR {
        return Ok(None);
    }
    let v_soft = split.v_soft();
    let proj = &v_soft * (v_soft.transpose() * delta_x);
    let alpha = (proj.norm_squared() / delta_x.norm_squared()).clamp(0.0, 1.0);
    Ok(Some(AlignmentResult {
        alpha,
        displacement_norm: norm,
    }))
}

/// Standardizes an alignment ratio against a frozen baseline.
pub fn ejt_zscore(alpha: f64, baseline: &EjtBaseline) -> Result<f64> {
    if !baseline.frozen {
        return Err(Error::model("z-score requires a frozen baseline"));
    }
    if baseline.std <= 0.0 || !baseline.std.is_finite() {
        return Err(Error::model("baseline std must be positive"));
    }
    Ok((alpha - baseline.mean) / baseline.std)
}

/// Fits a frozen baseline from stable-window alphas (sample std, N−1).
pub fn fit_baseline(
    alphas: &[f64],
    source_from: Option<NaiveDate>,
    source_to: Option<NaiveDate>,
) -> Result<EjtBaseline> {
    if alphas.len() < 2 {
        return Err(Error::data("baseline needs at least two stable windows"));
    }
    if alphas.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("baseline alphas must be finite"));
    }
    let n = alphas.len() as f64;
    let mean = alphas.iter().sum::<f64>() / n;
    let var = alphas.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(Error::data(
            "baseline variance is zero: constant alphas cannot be standardized",
        ));
    }
    Ok(EjtBaseline {
        mean,
        std: var.sqrt(),
        source_from,
        source_to,
        frozen: true,
    })
}

/// Indices of the `n` features carrying the most stiff-subspace loading.
///
/// Loading of feature `j` is the eigenvalue-weighted squared component over
/// the stiff eigenvectors. Ties break toward the lower feature index.
pub fn top_loading_features(split: &EjtSplit, n: usize) -> Vec<usize> {
    let dim = split.dim();
    let mut loadings = vec![0.0f64; dim];
    for (col, lambda) in split.eigenvalues.iter().take(split.k).enumerate() {
        for j in 0..dim {
            let c = split.eigenvectors[(j, col)];
            loadings[j] += lambda * c * c;
        }
    }
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&a, &b| {
        loadings[b]
            .partial_cmp(&loadings[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(n.min(dim));
    idx
}

/// Overlap fraction |A ∩ B| / n between two equally sized index sets.
pub fn loading_similarity(set_a: &[usize], set_b: &[usize]) -> Result<f64> {
    if set_a.len() != set_b.len() {
        return Err(Error::data("loading sets must have equal size"));
    }
    if set_a.is_empty() {
        return Err(Error::data("loading sets must be nonempty"));
    }
    let b: std::collections::BTreeSet<usize> = set_b.iter().copied().collect();
    let shared = set_a.iter().filter(|i| b.contains(i)).count();
    Ok(shared as f64 / set_a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_j(seed: u64, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Independent oracle: naive triple-loop product for JᵀJ.
    fn metric_oracle(j: &DMatrix<f64>) -> DMatrix<f64> {
        let (r, c) = j.shape();
        let mut m = DMatrix::zeros(c, c);
        for a in 0..c {
            for b in 0..c {
                let mut acc = 0.0;
                for i in 0..r {
                    acc += j[(i, a)] * j[(i, b)];
                }
                m[(a, b)] = acc;
            }
        }
        m
    }

    #[test]
    fn metric_tensor_matches_triple_loop_oracle() {
        let j = random_j(1, 32, 17);
        let fast = metric_tensor(&j).unwrap();
        let slow = metric_oracle(&j);
        let denom = slow.abs().max();
        let err = (&fast - &slow).abs().max() / denom;
        assert!(err < 1e-12, "relative error {err}");
        // Exact symmetry after the explicit symmetrization.
        assert_eq!(fast, fast.transpose());
    }

    #[test]
    fn zero_jacobian_gives_zero_metric() {
        let j = DMatrix::zeros(32, 17);
        let m = metric_tensor(&j).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthonormal_rows_give_projector_spectrum() {
        // Five orthonormal rows in R^9 -> JᵀJ is a rank-5 projector.
        let q = nalgebra::QR::new(random_j(2, 9, 9)).q();
        let j = q.columns(0, 5).transpose().into_owned();
        let m = metric_tensor(&j).unwrap();
        let split = eigen_split(&m, 0.9, &vec![0.0; 9], "test").unwrap();
        for &l in &split.eigenvalues {
            assert!(
                l.abs() < 1e-10 || (l - 1.0).abs() < 1e-10,
                "eigenvalue {l} not in {{0,1}}"
            );
        }
        let rank = split.eigenvalues.iter().filter(|&&l| l > 0.5).count();
        assert_eq!(rank, 5);
    }

    #[test]
    fn metric_tensor_rejects_non_finite() {
        let mut j = random_j(3, 4, 3);
        j[(1, 1)] = f64::INFINITY;
        assert!(metric_tensor(&j).is_err());
    }

    #[test]
    fn eigen_split_reconstructs_the_matrix() {
        let j = random_j(4, 32, 17);
        let m = metric_tensor(&j).unwrap();
        let split = eigen_split(&m, 0.9, &vec![0.0; 17], "test").unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(split.eigenvalues.clone()));
        let rebuilt = &split.eigenvectors * lambda * split.eigenvectors.transpose();
        let rel = (&rebuilt - &m).norm() / m.norm();
        assert!(rel < 1e-8, "reconstruction error {rel}");
        // Orthonormality of both spans.
        let vs = split.v_stiff();
        let vf = split.v_soft();
        let id_k = DMatrix::<f64>::identity(split.k, split.k);
        let id_s = DMatrix::<f64>::identity(17 - split.k, 17 - split.k);
        assert!((vs.transpose() * &vs - id_k).abs().max() < 1e-10);
        assert!((vf.transpose() * &vf - id_s).abs().max() < 1e-10);
        assert!((vs.transpose() * &vf).abs().max() < 1e-10);
    }

    /// Independent oracle: cumulative-sum scan over a known spectrum.
    fn k_oracle(spectrum: &[f64], threshold: f64) -> usize {
        let total: f64 = spectrum.iter().sum();
        let mut cum = 0.0;
        for (i, l) in spectrum.iter().enumerate() {
            cum += l;
            if cum / total >= threshold {
                return i + 1;
            }
        }
        spectrum.len()
    }

    fn diag_split(spectrum: &[f64], threshold: f64) -> EjtSplit {
        let m = DMatrix::from_diagonal(&DVector::from_vec(spectrum.to_vec()));
        eigen_split(&m, threshold, &vec![0.0; spectrum.len()], "test").unwrap()
    }

    #[test]
    fn uniform_spectrum_takes_sixteen_of_seventeen() {
        let split = diag_split(&[1.0; 17], 0.90);
        assert_eq!(split.k, 16);
        assert_eq!(k_oracle(&[1.0; 17], 0.90), 16);
    }

    #[test]
    fn rank_one_takes_single_direction() {
        let mut spectrum = vec![0.0; 17];
        spectrum[0] = 4.2;
        let split = diag_split(&spectrum, 0.90);
        assert_eq!(split.k, 1);
        assert_eq!(split.v_soft().ncols(), 16);
    }

    #[test]
    fn exact_ninety_percent_takes_nine() {
        // Top nine eigenvalues carry exactly 90% of the trace.
        let mut spectrum = vec![10.0; 9];
        spectrum.extend(vec![1.25; 8]);
        let split = diag_split(&spectrum, 0.90);
        assert_eq!(split.k, 9);
        assert_eq!(k_oracle(&spectrum, 0.90), 9);
    }

    #[test]
    fn boundary_tie_is_pulled_into_stiff() {
        // Plain rule stops at k = 4 (16/17.5 = 0.914); the boundary value 1.0
        // is tied with the next eigenvalue, which joins the stiff span.
        let spectrum = vec![5.0, 5.0, 5.0, 1.0, 1.0, 0.5];
        assert_eq!(k_oracle(&spectrum, 0.90), 4);
        let split = diag_split(&spectrum, 0.90);
        assert_eq!(split.k, 5);
    }

    #[test]
    fn soft_span_never_empties() {
        // All-tied spectrum: tie extension stops one short of full width.
        let split = diag_split(&[2.0; 17], 0.999);
        assert!(split.k <= 16);
        assert!(split.v_soft().ncols() >= 1);
    }

    #[test]
    fn k_monotone_in_threshold() {
        let j = random_j(5, 32, 17);
        let m = metric_tensor(&j).unwrap();
        let mut last = 0;
        for t in [0.5, 0.7, 0.9, 0.99] {
            let split = eigen_split(&m, t, &vec![0.0; 17], "test").unwrap();
            assert!(split.k >= last, "k not monotone at {t}");
            last = split.k;
        }
    }

    #[test]
    fn zero_trace_is_degenerate() {
        let m = DMatrix::zeros(5, 5);
        let err = eigen_split(&m, 0.9, &vec![0.0; 5], "test").unwrap_err();
        assert!(err.to_string().contains("degenerate"));
    }

    fn toy_split() -> EjtSplit {
        // Diagonal metric: features 0..2 stiff, rest soft (dim 6).
        diag_split(&[10.0, 8.0, 6.0, 0.1, 0.05, 0.01], 0.90)
    }

    #[test]
    fn alpha_extremes_and_pythagorean_mix() {
        let split = toy_split();
        assert_eq!(split.k, 3);
        let stiff = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let soft = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let a_soft = soft_alignment(&soft, &split).unwrap().unwrap();
        assert!((a_soft.alpha - 1.0).abs() < 1e-12);
        let a_stiff = soft_alignment(&stiff, &split).unwrap().unwrap();
        assert!(a_stiff.alpha < 1e-12);
        let mix = (&stiff + &soft) / 2.0f64.sqrt();
        let a_mix = soft_alignment(&mix, &split).unwrap().unwrap();
        assert!((a_mix.alpha - 0.5).abs() < 1e-12);
        // alpha + stiff ratio = 1.
        let vs = split.v_stiff();
        let stiff_ratio = (&vs * (vs.transpose() * &mix)).norm_squared() / mix.norm_squared();
        assert!((a_mix.alpha + stiff_ratio - 1.0).abs() < 1e-10);
    }

    #[test]
    fn alpha_scale_invariant_and_floor_undefined() {
        let split = toy_split();
        let d = DVector::from_vec(vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.1]);
        let a1 = soft_alignment(&d, &split).unwrap().unwrap();
        let a2 = soft_alignment(&(&d * 1000.0), &split).unwrap().unwrap();
        assert!((a1.alpha - a2.alpha).abs() < 1e-12);
        let tiny = DVector::from_element(6, 1e-9);
        assert!(soft_alignment(&tiny, &split).unwrap().is_none());
    }

    #[test]
    fn alpha_invariant_to_rotations_inside_each_span() {
        let split = toy_split();
        let d = DVector::from_vec(vec![0.5, 0.1, -0.2, 0.7, 0.3, -0.6]);
        let base = soft_alignment(&d, &split).unwrap().unwrap().alpha;
        // Rotate within the stiff block (coords 0..3) and within the soft
        // block (coords 3..6) independently; alpha must not move.
        let theta: f64 = 0.7;
        let mut rot = DMatrix::identity(6, 6);
        rot[(0, 0)] = theta.cos();
        rot[(0, 1)] = -theta.sin();
        rot[(1, 0)] = theta.sin();
        rot[(1, 1)] = theta.cos();
        rot[(4, 4)] = theta.cos();
        rot[(4, 5)] = -theta.sin();
        rot[(5, 4)] = theta.sin();
        rot[(5, 5)] = theta.cos();
        let rotated = &rot * &d;
        let after = soft_alignment(&rotated, &split).unwrap().unwrap().alpha;
        assert!((base - after).abs() < 1e-12);
    }

    #[test]
    fn zscore_examples_and_affine_identity() {
        let baseline = EjtBaseline::default();
        assert_eq!(ejt_zscore(0.750, &baseline).unwrap(), 0.0);
        let z = ejt_zscore(0.524, &baseline).unwrap();
        assert!((z + 2.0).abs() < 1e-12, "z = {z}");
        let z = ejt_zscore(0.2551, &baseline).unwrap();
        assert!((z + 4.38).abs() < 0.01, "z = {z}");
        // Two (alpha, z) pairs pin the affine constants exactly.
        let a1 = 0.3;
        let a2 = 0.9;
        let z1 = ejt_zscore(a1, &baseline).unwrap();
        let z2 = ejt_zscore(a2, &baseline).unwrap();
        let std = (a2 - a1) / (z2 - z1);
        let mean = a1 - z1 * std;
        assert!((std - BASELINE_STD).abs() < 1e-12);
        assert!((mean - BASELINE_MEAN).abs() < 1e-12);
    }

    #[test]
    fn zscore_requires_frozen_positive_baseline() {
        let mut b = EjtBaseline::default();
        b.frozen = false;
        assert!(ejt_zscore(0.5, &b).is_err());
        let mut b = EjtBaseline::default();
        b.std = 0.0;
        assert!(ejt_zscore(0.5, &b).is_err());
    }

    #[test]
    fn baseline_two_point_fit() {
        let b = fit_baseline(&[0.6, 0.9], None, None).unwrap();
        assert!((b.mean - 0.75).abs() < 1e-12);
        assert!((b.std - 0.15_f64 * 2.0_f64.sqrt()).abs() < 1e-12);
        assert!(b.frozen);
    }

    #[test]
    fn baseline_rejects_degenerate_inputs() {
        assert!(fit_baseline(&[0.5], None, None).is_err());
        assert!(fit_baseline(&[0.5, 0.5, 0.5], None, None).is_err());
    }

    #[test]
    fn top_loadings_follow_the_spectrum() {
        // Rank-1 metric aligned with feature axis 4.
        let mut spectrum = vec![0.0; 8];
        spectrum[0] = 3.0;
        let mut m = DMatrix::zeros(8, 8);
        m[(4, 4)] = 3.0;
        let split = eigen_split(&m, 0.9, &vec![0.0; 8], "test").unwrap();
        let top = top_loading_features(&split, 1);
        assert_eq!(top, vec![4]);
        let _ = spectrum;

        // Diagonal metric: top-n are the largest diagonal entries.
        let diag = vec![5.0, 1.0, 9.0, 0.5, 7.0, 0.2, 0.1, 0.05];
        let split = diag_split(&diag, 0.90);
        let top = top_loading_features(&split, 3);
        assert_eq!(top, vec![2, 4, 0]);
    }

    #[test]
    fn loading_ties_break_toward_lower_index() {
        let split = diag_split(&[1.0, 1.0, 1.0, 0.0, 0.0], 0.90);
        let top = top_loading_features(&split, 2);
        assert_eq!(top, vec![0, 1]);
    }

    #[test]
    fn similarity_examples() {
        let a: Vec<usize> = (0..10).collect();
        assert_eq!(loading_similarity(&a, &a).unwrap(), 1.0);
        let b: Vec<usize> = (10..20).collect();
        assert_eq!(loading_similarity(&a, &b).unwrap(), 0.0);
        let mut c = a.clone();
        c[9] = 99;
        assert!((loading_similarity(&a, &c).unwrap() - 0.9).abs() < 1e-12);
        assert!(loading_similarity(&a, &b[..5]).is_err());
    }
}
