//! Relay population model.
//!
//! A snapshot is one day's relay population; a window frame is a snapshot
//! with the clean feature block scaled into robust units. Cluster centers
//! are consensus-weight-weighted medians per role cluster, plus a global
//! arithmetic mean and a global unweighted median. The distance between the
//! weight-bearing guard center and the unweighted median center is the
//! mass-gravity divergence.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::schema::{feat, FeatureKind, FeatureSchema, N_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Guard,
    Middle,
    Exit,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Guard, Role::Middle, Role::Exit];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Guard => "GUARD",
            Role::Middle => "MIDDLE",
            Role::Exit => "EXIT",
        }
    }
}

/// One relay's daily observation. `NaN` encodes a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayRecord {
    pub id: String,
    pub features: Vec<f64>,
    pub consensus_weight: f64,
    pub role_probs: [f64; 3], // guard, middle, exit
    pub days_since_restart: f64,
}

impl RelayRecord {
    /// Builds a record from a full feature vector, deriving the typed fields
    /// from their canonical positions. Missing (`NaN`) weight or role
    /// probabilities default to zero; infinite values are malformed.
    pub fn from_features(id: impl Into<String>, features: Vec<f64>) -> Result<Self> {
        if features.len() != N_FEATURES {
            return Err(Error::data(format!(
                "relay feature vector must have {} entries, got {}",
                N_FEATURES,
                features.len()
            )));
        }
        if features.iter().any(|v| v.is_infinite()) {
            return Err(Error::data("relay feature vector contains infinite values"));
        }
        let fill = |v: f64| if v.is_nan() { 0.0 } else { v };
        let consensus_weight = fill(features[feat::CONSENSUS_WEIGHT]);
        if consensus_weight < 0.0 {
            return Err(Error::data("consensus weight must be nonnegative"));
        }
        let role_probs = [
            fill(features[feat::GUARD_PROBABILITY]),
            fill(features[feat::MIDDLE_PROBABILITY]),
            fill(features[feat::EXIT_PROBABILITY]),
        ];
        for p in role_probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::data("role probabilities must lie in [0, 1]"));
            }
        }
        let days_since_restart = features[feat::DAYS_SINCE_RESTART];
        if days_since_restart.is_finite() && days_since_restart < 0.0 {
            return Err(Error::data("days since restart must be nonnegative"));
        }
        Ok(RelayRecord {
            id: id.into(),
            features,
            consensus_weight,
            role_probs,
            days_since_restart,
        })
    }

    pub fn clean_features(&self, schema: &FeatureSchema) -> Vec<f64> {
        schema
            .clean_indices
            .iter()
            .map(|&i| self.features[i])
            .collect()
    }
}

/// One day's raw population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub date: NaiveDate,
    pub relays: Vec<RelayRecord>,
}

/// Robust per-feature scaling: center at the median, spread by the IQR.
/// Fit once on a training window, then frozen; application is pure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub center: Vec<f64>,
    pub spread: Vec<f64>,
    pub frozen: bool,
}

/// Spread floor applied to constant features.
pub const SPREAD_FLOOR: f64 = 1e-9;

impl RobustScaler {
    /// Fits per-feature median and IQR over the finite entries of each
    /// column. Flag features (when `kinds` is given) pass through unscaled.
    /// A column with no finite entries is an error.
    pub fn fit(rows: &[Vec<f64>], kinds: Option<&[FeatureKind]>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::data("scaler fit requires at least one row"));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::data("scaler fit rows must have equal width"));
        }
        if let Some(k) = kinds {
            if k.len() != width {
                return Err(Error::data("kinds length must match row width"));
            }
        }
        let mut center = vec![0.0; width];
        let mut spread = vec![1.0; width];
        let mut column = Vec::with_capacity(n);
        for j in 0..width {
            if let Some(k) = kinds {
                if k[j] == FeatureKind::Flag {
                    continue; // identity scaling for flags
                }
            }
            column.clear();
            column.extend(rows.iter().map(|r| r[j]).filter(|v| v.is_finite()));
            if column.is_empty() {
                return Err(Error::data(format!(
                    "feature column {j} has no observed values in the fit window"
                )));
            }
            column.sort_by(|a, b| a.partial_cmp(b).unwrap());
            center[j] = quantile_sorted(&column, 0.5);
            let iqr = quantile_sorted(&column, 0.75) - quantile_sorted(&column, 0.25);
            spread[j] = iqr.max(SPREAD_FLOOR);
        }
        Ok(RobustScaler {
            center,
            spread,
            frozen: false,
        })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Refits in place. Rejected once frozen.
    pub fn refit(&mut self, rows: &[Vec<f64>], kinds: Option<&[FeatureKind]>) -> Result<()> {
        if self.frozen {
            return Err(Error::model("cannot refit a frozen scaler"));
        }
        *self = Self::fit(rows, kinds)?;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.center.len()
    }

    /// Scales one row. Missing entries are imputed at the center (scaled
    /// value 0) and counted.
    pub fn apply_row(&self, raw: &[f64]) -> Result<(Vec<f64>, usize)> {
        if raw.len() != self.width() {
            return Err(Error::data(format!(
                "scaler expects width {}, got {}",
                self.width(),
                raw.len()
            )));
        }
        let mut imputed = 0;
        let scaled = raw
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v.is_finite() {
                    (v - self.center[j]) / self.spread[j]
                } else {
                    imputed += 1;
                    0.0
                }
            })
            .collect();
        Ok((scaled, imputed))
    }
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// A snapshot with its feature blocks in scaled units: the clean subset for
/// the geometric observer and the full width for the thermodynamic observer.
#[derive(Debug, Clone)]
pub struct WindowFrame {
    pub date: NaiveDate,
    pub relays: Vec<RelayRecord>,
    pub scaled_clean: DMatrix<f64>,
    pub scaled_full: DMatrix<f64>,
    pub imputed: usize,
}

impl WindowFrame {
    pub fn from_snapshot(
        snapshot: &Snapshot,
        clean_scaler: &RobustScaler,
        full_scaler: &RobustScaler,
        schema: &FeatureSchema,
    ) -> Result<Self> {
        if clean_scaler.width() != schema.clean_indices.len() {
            return Err(Error::model(
                "clean scaler width does not match the schema's clean feature count",
            ));
        }
        if full_scaler.width() != schema.names.len() {
            return Err(Error::model(
                "full scaler width does not match the schema's feature count",
            ));
        }
        let n = snapshot.relays.len();
        let mut scaled = DMatrix::zeros(n, schema.clean_indices.len());
        let mut scaled_full = DMatrix::zeros(n, schema.names.len());
        let mut imputed = 0;
        for (i, relay) in snapshot.relays.iter().enumerate() {
            let clean = relay.clean_features(schema);
            let (row, count) = clean_scaler.apply_row(&clean)?;
            imputed += count;
            for (j, v) in row.into_iter().enumerate() {
                scaled[(i, j)] = v;
            }
            let (full_row, full_count) = full_scaler.apply_row(&relay.features)?;
            imputed += full_count;
            for (j, v) in full_row.into_iter().enumerate() {
                scaled_full[(i, j)] = v;
            }
        }
        Ok(WindowFrame {
            date: snapshot.date,
            relays: snapshot.relays.clone(),
            scaled_clean: scaled,
            scaled_full,
            imputed,
        })
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterDiagnostics {
    /// Relays whose role probabilities were all zero (assigned Middle).
    pub zero_probability_relays: usize,
    /// Roles with no members this window.
    pub empty_clusters: Vec<Role>,
    /// Roles whose members carry zero total consensus weight.
    pub zero_weight_clusters: Vec<Role>,
}

/// Hard cluster assignment: argmax of the role probabilities, ties broken
/// by role priority Guard > Exit > Middle. All-zero probabilities fall back
/// to Middle and are counted.
pub fn assign_clusters(relays: &[RelayRecord]) -> (Vec<Role>, usize) {
    let mut zero_count = 0;
    let roles = relays
        .iter()
        .map(|r| {
            let [g, m, e] = r.role_probs;
            if g == 0.0 && m == 0.0 && e == 0.0 {
                zero_count += 1;
                return Role::Middle;
            }
            // Priority order on exact ties: Guard, then Exit, then Middle.
            let mut best = (g, Role::Guard);
            if e > best.0 {
                best = (e, Role::Exit);
            }
            if m > best.0 {
                best = (m, Role::Middle);
            }
            best.1
        })
        .collect();
    (roles, zero_count)
}

/// Weighted median: the smallest value whose cumulative weight reaches half
/// of the total weight.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::data("weighted median of an empty set is undefined"));
    }
    if values.len() != weights.len() {
        return Err(Error::data("values and weights must have equal length"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::data("weighted median input contains NaN values"));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::data("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::data("weighted median requires positive total weight"));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let half = total / 2.0;
    let mut cum = 0.0;
    for &i in &order {
        cum += weights[i];
        if cum >= half {
            return Ok(values[i]);
        }
    }
    Ok(values[order[order.len() - 1]])
}

/// Per-coordinate weighted median over rows of a matrix.
pub fn weighted_median_rows(rows: &DMatrix<f64>, weights: &[f64]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(rows.ncols());
    let column: Vec<f64> = Vec::with_capacity(rows.nrows());
    let mut column = column;
    for j in 0..rows.ncols() {
        column.clear();
        column.extend((0..rows.nrows()).map(|i| rows[(i, j)]));
        out[j] = weighted_median(&column, weights)?;
    }
    Ok(out)
}

/// Cluster centers in scaled clean units.
#[derive(Debug, Clone)]
pub struct ClusterCenters {
    /// Consensus-weight-weighted median center per role; absent when the
    /// cluster is empty or carries no weight.
    pub weighted: BTreeMap<Role, DVector<f64>>,
    pub global_mean: DVector<f64>,
    pub global_median: DVector<f64>,
    pub diagnostics: ClusterDiagnostics,
}

pub fn cluster_centers(frame: &WindowFrame, roles: &[Role]) -> Result<ClusterCenters> {
    if frame.is_empty() {
        return Err(Error::data("cluster centers of an empty frame are undefined"));
    }
    if roles.len() != frame.len() {
        return Err(Error::data("role assignment length must match the frame"));
    }
    let width = frame.scaled_clean.ncols();
    let mut diagnostics = ClusterDiagnostics::default();
    let mut weighted = BTreeMap::new();

    for role in Role::ALL {
        let members: Vec<usize> = (0..frame.len()).filter(|&i| roles[i] == role).collect();
        if members.is_empty() {
            diagnostics.empty_clusters.push(role);
            continue;
        }
        let weights: Vec<f64> = members
            .iter()
            .map(|&i| frame.relays[i].consensus_weight)
            .collect();
        if weights.iter().sum::<f64>() <= 0.0 {
            diagnostics.zero_weight_clusters.push(role);
            continue;
        }
        let mut center = DVector::zeros(width);
        let mut column = Vec::with_capacity(members.len());
        for j in 0..width {
            column.clear();
            column.extend(members.iter().map(|&i| frame.scaled_clean[(i, j)]));
            center[j] = weighted_median(&column, &weights)?;
        }
        weighted.insert(role, center);
    }

    let n = frame.len() as f64;
    let mut global_mean = DVector::zeros(width);
    for i in 0..frame.len() {
        for j in 0..width {
            global_mean[j] += frame.scaled_clean[(i, j)];
        }
    }
    global_mean /= n;

    let unit_weights = vec![1.0; frame.len()];
    let global_median = weighted_median_rows(&frame.scaled_clean, &unit_weights)?;

    Ok(ClusterCenters {
        weighted,
        global_mean,
        global_median,
        diagnostics,
    })
}

/// Distance between the weight-bearing guard center (gravity) and the
/// unweighted global median center (mass).
pub fn mass_gravity_divergence(centers: &ClusterCenters) -> Result<f64> {
    let gravity = centers
        .weighted
        .get(&Role::Guard)
        .ok_or_else(|| Error::data("guard cluster center unavailable for divergence"))?;
    Ok((gravity - &centers.global_median).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_with(probs: [f64; 3], weight: f64) -> RelayRecord {
        let mut features = vec![0.0; N_FEATURES];
        features[feat::GUARD_PROBABILITY] = probs[0];
        features[feat::MIDDLE_PROBABILITY] = probs[1];
        features[feat::EXIT_PROBABILITY] = probs[2];
        features[feat::CONSENSUS_WEIGHT] = weight;
        RelayRecord::from_features("r", features).unwrap()
    }

    fn fit_full_scaler(snapshot: &Snapshot, schema: &FeatureSchema) -> RobustScaler {
        let rows: Vec<Vec<f64>> = snapshot.relays.iter().map(|r| r.features.clone()).collect();
        RobustScaler::fit(&rows, Some(&schema.kinds)).unwrap()
    }

    #[test]
    fn weighted_median_heavy_tail_example() {
        let v = [1.0, 2.0, 10.0];
        let w = [0.1, 0.1, 0.8];
        assert_eq!(weighted_median(&v, &w).unwrap(), 10.0);
    }

    #[test]
    fn weighted_median_single_element() {
        assert_eq!(weighted_median(&[7.5], &[0.3]).unwrap(), 7.5);
    }

    #[test]
    fn weighted_median_equal_weights_is_lower_median() {
        let v = [4.0, 1.0, 3.0, 2.0];
        let w = [1.0; 4];
        assert_eq!(weighted_median(&v, &w).unwrap(), 2.0);
        let odd = [5.0, 1.0, 3.0];
        assert_eq!(weighted_median(&odd, &[1.0; 3]).unwrap(), 3.0);
    }

    #[test]
    fn weighted_median_rejects_degenerate_input() {
        assert!(weighted_median(&[], &[]).is_err());
        assert!(weighted_median(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(weighted_median(&[1.0], &[-1.0]).is_err());
        assert!(weighted_median(&[f64::NAN], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn weighted_median_inside_range(
            pairs in prop::collection::vec(((-1e6f64..1e6), (1e-6f64..10.0)), 1..40)
        ) {
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = weighted_median(&values, &weights).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo && m <= hi);
        }

        #[test]
        fn weighted_median_weight_scale_invariant(
            pairs in prop::collection::vec(((-100f64..100.0), (1e-3f64..5.0)), 1..30),
            scale in 1e-3f64..1e3,
        ) {
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let scaled: Vec<f64> = weights.iter().map(|w| w * scale).collect();
            let a = weighted_median(&values, &weights).unwrap();
            let b = weighted_median(&values, &scaled).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn weighted_median_permutation_invariant(
            pairs in prop::collection::vec(((-100f64..100.0), (1e-3f64..5.0)), 2..20),
            seed in 0u64..1000,
        ) {
            let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mut order: Vec<usize> = (0..values.len()).collect();
            // Deterministic shuffle driven by the seed.
            for i in (1..order.len()).rev() {
                let j = ((seed as usize).wrapping_mul(31).wrapping_add(i * 17)) % (i + 1);
                order.swap(i, j);
            }
            let pv: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            let pw: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
            let a = weighted_median(&values, &weights).unwrap();
            let b = weighted_median(&pv, &pw).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn scaler_centers_at_median_and_floors_constant_spread() {
        let rows = vec![
            vec![1.0, 5.0],
            vec![2.0, 5.0],
            vec![3.0, 5.0],
            vec![4.0, 5.0],
            vec![100.0, 5.0],
        ];
        let scaler = RobustScaler::fit(&rows, None).unwrap();
        assert_eq!(scaler.center[0], 3.0);
        assert_eq!(scaler.center[1], 5.0);
        assert_eq!(scaler.spread[1], SPREAD_FLOOR);
        let (scaled, imputed) = scaler.apply_row(&[3.0, 5.0]).unwrap();
        assert_eq!(scaled, vec![0.0, 0.0]);
        assert_eq!(imputed, 0);
    }

    #[test]
    fn scaler_imputes_missing_at_center() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let scaler = RobustScaler::fit(&rows, None).unwrap();
        let (scaled, imputed) = scaler.apply_row(&[f64::NAN]).unwrap();
        assert_eq!(scaled, vec![0.0]);
        assert_eq!(imputed, 1);
    }

    #[test]
    fn scaler_skips_nan_during_fit_and_rejects_empty_column() {
        let rows = vec![vec![f64::NAN, 1.0], vec![2.0, 2.0], vec![4.0, 3.0]];
        let scaler = RobustScaler::fit(&rows, None).unwrap();
        assert_eq!(scaler.center[0], 3.0);
        let all_missing = vec![vec![f64::NAN], vec![f64::NAN]];
        assert!(RobustScaler::fit(&all_missing, None).is_err());
    }

    #[test]
    fn frozen_scaler_rejects_refit() {
        let rows = vec![vec![1.0], vec![2.0]];
        let mut scaler = RobustScaler::fit(&rows, None).unwrap();
        scaler.freeze();
        assert!(scaler.refit(&rows, None).is_err());
    }

    #[test]
    fn flag_features_pass_through() {
        let rows = vec![vec![0.0, 10.0], vec![1.0, 20.0], vec![1.0, 30.0]];
        let kinds = [FeatureKind::Flag, FeatureKind::Continuous];
        let scaler = RobustScaler::fit(&rows, Some(&kinds)).unwrap();
        let (scaled, _) = scaler.apply_row(&[1.0, 20.0]).unwrap();
        assert_eq!(scaled[0], 1.0);
        assert_eq!(scaled[1], 0.0);
    }

    #[test]
    fn cluster_assignment_priority() {
        let relays = vec![
            record_with([0.6, 0.3, 0.1], 1.0),
            record_with([0.2, 0.2, 0.6], 1.0),
            record_with([0.4, 0.2, 0.4], 1.0), // guard/exit tie -> Guard
            record_with([0.0, 0.5, 0.5], 1.0), // exit/middle tie -> Exit
            record_with([0.0, 0.0, 0.0], 1.0), // all zero -> Middle
        ];
        let (roles, zero_count) = assign_clusters(&relays);
        assert_eq!(
            roles,
            vec![Role::Guard, Role::Exit, Role::Guard, Role::Exit, Role::Middle]
        );
        assert_eq!(zero_count, 1);
    }

    #[test]
    fn centers_anchor_on_heavy_relays_and_divergence_sees_light_surge() {
        let schema = FeatureSchema::default_manifest();
        let date = NaiveDate::from_ymd_opt(2026, 1, 1).unwrap();

        let make = |bw: f64, weight: f64, probs: [f64; 3]| {
            let mut features = vec![0.0; N_FEATURES];
            features[feat::OBSERVED_BANDWIDTH] = bw;
            features[feat::GUARD_PROBABILITY] = probs[0];
            features[feat::MIDDLE_PROBABILITY] = probs[1];
            features[feat::EXIT_PROBABILITY] = probs[2];
            features[feat::CONSENSUS_WEIGHT] = weight;
            RelayRecord::from_features(format!("r{bw}-{weight}"), features).unwrap()
        };

        // Heavy guards at high bandwidth, a crowd of lightweights at low.
        let mut relays = vec![
            make(100.0, 50.0, [0.9, 0.1, 0.0]),
            make(110.0, 40.0, [0.9, 0.1, 0.0]),
            make(90.0, 45.0, [0.9, 0.1, 0.0]),
        ];
        for i in 0..20 {
            relays.push(make(1.0 + (i as f64) * 0.01, 0.1, [0.8, 0.2, 0.0]));
        }
        let snapshot = Snapshot { date, relays };
        let rows: Vec<Vec<f64>> = snapshot
            .relays
            .iter()
            .map(|r| r.clean_features(&schema))
            .collect();
        let mut scaler = RobustScaler::fit(&rows, None).unwrap();
        scaler.freeze();
        let full_scaler = fit_full_scaler(&snapshot, &schema);
        let frame = WindowFrame::from_snapshot(&snapshot, &scaler, &full_scaler, &schema).unwrap();
        let (roles, _) = assign_clusters(&frame.relays);
        let centers = cluster_centers(&frame, &roles).unwrap();

        let guard_center = centers.weighted.get(&Role::Guard).unwrap();
        let bw_pos = schema.clean_position(feat::OBSERVED_BANDWIDTH).unwrap();
        // The weighted guard center sits with the heavy relays even though
        // lightweights dominate the count; the unweighted median does not.
        assert!(guard_center[bw_pos] > centers.global_median[bw_pos]);
        let dmg = mass_gravity_divergence(&centers).unwrap();
        assert!(dmg > 1.0, "light crowd should pull mass away from gravity: {dmg}");
    }

    #[test]
    fn divergence_requires_guard_center() {
        let schema = FeatureSchema::default_manifest();
        let date = NaiveDate::from_ymd_opt(2026, 1, 1).unwrap();
        let relays = vec![record_with([0.0, 1.0, 0.0], 1.0)];
        let snapshot = Snapshot { date, relays };
        let rows: Vec<Vec<f64>> = snapshot
            .relays
            .iter()
            .map(|r| r.clean_features(&schema))
            .collect();
        let scaler = RobustScaler::fit(&rows, None).unwrap();
        let full_scaler = fit_full_scaler(&snapshot, &schema);
        let frame = WindowFrame::from_snapshot(&snapshot, &scaler, &full_scaler, &schema).unwrap();
        let (roles, _) = assign_clusters(&frame.relays);
        let centers = cluster_centers(&frame, &roles).unwrap();
        assert!(centers.diagnostics.empty_clusters.contains(&Role::Guard));
        assert!(mass_gravity_divergence(&centers).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(RelayRecord::from_features("x", vec![0.0; 10]).is_err());
        let mut features = vec![0.0; N_FEATURES];
        features[feat::CONSENSUS_WEIGHT] = -1.0;
        assert!(RelayRecord::from_features("x", features.clone()).is_err());
        features[feat::CONSENSUS_WEIGHT] = f64::NAN;
        let r = RelayRecord::from_features("x", features.clone()).unwrap();
        assert_eq!(r.consensus_weight, 0.0);
        features[feat::GUARD_PROBABILITY] = 1.5;
        assert!(RelayRecord::from_features("x", features).is_err());
    }
}
