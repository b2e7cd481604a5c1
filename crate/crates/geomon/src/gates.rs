//! Gate cascade and event taxonomy.
//!
//! Each observation window produces a [`ChannelVector`] of detection signals.
//! Five gates read it:
//!
//! * `CH5_CV` — population fragmentation: free-energy CV above threshold.
//! * `CH6_GLOBAL_EJT` — global stiff-axis collision: z(α_global) below −2.
//! * `CH6_GUARD_ELASTIC` — guard cluster moving fast along soft axes.
//! * `CH6_STIFF_FRACTURE` — guard cluster ramming stiff axes with a shift
//!   far above its baseline median.
//! * `CH1_ROTATION` — shared-structure rotation; **supporting signal only**,
//!   never drives a classification by itself.
//!
//! Windows are then classified by fixed precedence into the event taxonomy.
//! Gates with verified zero false-positive behavior dominate the order.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::Role;

/// Identifier for each channel slot in the per-window vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelId {
    ThetaDeg,
    DeltaRho,
    Epsilon,
    SigmaZ,
    Cv,
    AlphaGlobal,
    ZGlobal,
    AlphaGuard,
    ZGuard,
    AlphaExit,
    ZExit,
    ShiftGuard,
    ShiftExit,
    ShiftGlobal,
    DeltaMg,
}

impl ChannelId {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelId::ThetaDeg => "theta_deg",
            ChannelId::DeltaRho => "delta_rho",
            ChannelId::Epsilon => "epsilon",
            ChannelId::SigmaZ => "sigma_z",
            ChannelId::Cv => "cv",
            ChannelId::AlphaGlobal => "alpha_global",
            ChannelId::ZGlobal => "z_global",
            ChannelId::AlphaGuard => "alpha_guard",
            ChannelId::ZGuard => "z_guard",
            ChannelId::AlphaExit => "alpha_exit",
            ChannelId::ZExit => "z_exit",
            ChannelId::ShiftGuard => "shift_guard",
            ChannelId::ShiftExit => "shift_exit",
            ChannelId::ShiftGlobal => "shift_global",
            ChannelId::DeltaMg => "delta_mg",
        }
    }
}

/// Per-window detection signals. Absent values mean the channel could not be
/// evaluated for this window (first window of a sequence, date gap, empty
/// cluster, sub-floor displacement, …).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVector {
    pub date: NaiveDate,
    /// Rotation of the first canonical direction vs the previous window (deg,
    /// folded into [0, 90]).
    pub theta_deg: Option<f64>,
    /// Change in first canonical correlation vs the previous window.
    pub delta_rho: Option<f64>,
    /// Mean squared reconstruction error of the geometric observer.
    pub epsilon: Option<f64>,
    /// Mean per-dimension population std of the latent activations.
    pub sigma_z: Option<f64>,
    /// Coefficient of variation of visible free energy across the population.
    pub cv: Option<f64>,
    pub alpha_global: Option<f64>,
    pub z_global: Option<f64>,
    pub alpha_guard: Option<f64>,
    pub z_guard: Option<f64>,
    pub alpha_exit: Option<f64>,
    pub z_exit: Option<f64>,
    /// Displacement norms of the cluster / global centers (scaled units).
    pub shift_guard: Option<f64>,
    pub shift_exit: Option<f64>,
    pub shift_global: Option<f64>,
    /// Euclidean distance between weighted guard center and global median.
    pub delta_mg: Option<f64>,
    /// First canonical correlation of this window's fit.
    pub rho1: Option<f64>,
    pub degenerate_cca: bool,
}

impl ChannelVector {
    pub fn empty(date: NaiveDate) -> Self {
        ChannelVector {
            date,
            theta_deg: None,
            delta_rho: None,
            epsilon: None,
            sigma_z: None,
            cv: None,
            alpha_global: None,
            z_global: None,
            alpha_guard: None,
            z_guard: None,
            alpha_exit: None,
            z_exit: None,
            shift_guard: None,
            shift_exit: None,
            shift_global: None,
            delta_mg: None,
            rho1: None,
            degenerate_cca: false,
        }
    }

    pub fn get(&self, id: ChannelId) -> Option<f64> {
        match id {
            ChannelId::ThetaDeg => self.theta_deg,
            ChannelId::DeltaRho => self.delta_rho,
            ChannelId::Epsilon => self.epsilon,
            ChannelId::SigmaZ => self.sigma_z,
            ChannelId::Cv => self.cv,
            ChannelId::AlphaGlobal => self.alpha_global,
            ChannelId::ZGlobal => self.z_global,
            ChannelId::AlphaGuard => self.alpha_guard,
            ChannelId::ZGuard => self.z_guard,
            ChannelId::AlphaExit => self.alpha_exit,
            ChannelId::ZExit => self.z_exit,
            ChannelId::ShiftGuard => self.shift_guard,
            ChannelId::ShiftExit => self.shift_exit,
            ChannelId::ShiftGlobal => self.shift_global,
            ChannelId::DeltaMg => self.delta_mg,
        }
    }

    /// Channels absent from this window.
    pub fn missing(&self) -> BTreeSet<ChannelId> {
        use ChannelId::*;
        [
            ThetaDeg, DeltaRho, Epsilon, SigmaZ, Cv, AlphaGlobal, ZGlobal, AlphaGuard, ZGuard,
            AlphaExit, ZExit, ShiftGuard, ShiftExit, ShiftGlobal, DeltaMg,
        ]
        .into_iter()
        .filter(|&id| self.get(id).is_none())
        .collect()
    }

    /// Structural sanity checks on present values.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_global", self.alpha_global),
            ("alpha_guard", self.alpha_guard),
            ("alpha_exit", self.alpha_exit),
        ] {
            if let Some(a) = v {
                if !(0.0..=1.0).contains(&a) {
                    return Err(Error::data(format!("{name} out of [0,1]: {a}")));
                }
            }
        }
        for (name, v) in [
            ("shift_guard", self.shift_guard),
            ("shift_exit", self.shift_exit),
            ("shift_global", self.shift_global),
            ("cv", self.cv),
            ("delta_mg", self.delta_mg),
        ] {
            if let Some(s) = v {
                if s < 0.0 || !s.is_finite() {
                    return Err(Error::data(format!("{name} must be nonnegative: {s}")));
                }
            }
        }
        if let Some(t) = self.theta_deg {
            if !(0.0..=90.0).contains(&t) {
                return Err(Error::data(format!("theta_deg out of [0,90]: {t}")));
            }
        }
        Ok(())
    }
}

/// The five gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gate {
    #[serde(rename = "CH5_CV")]
    Ch5Cv,
    #[serde(rename = "CH6_GLOBAL_EJT")]
    Ch6GlobalEjt,
    #[serde(rename = "CH6_GUARD_ELASTIC")]
    Ch6GuardElastic,
    #[serde(rename = "CH6_STIFF_FRACTURE")]
    Ch6StiffFracture,
    #[serde(rename = "CH1_ROTATION")]
    Ch1Rotation,
}

pub const ALL_GATES: [Gate; 5] = [
    Gate::Ch5Cv,
    Gate::Ch6GlobalEjt,
    Gate::Ch6GuardElastic,
    Gate::Ch6StiffFracture,
    Gate::Ch1Rotation,
];

impl Gate {
    pub fn name(&self) -> &'static str {
        match self {
            Gate::Ch5Cv => "CH5_CV",
            Gate::Ch6GlobalEjt => "CH6_GLOBAL_EJT",
            Gate::Ch6GuardElastic => "CH6_GUARD_ELASTIC",
            Gate::Ch6StiffFracture => "CH6_STIFF_FRACTURE",
            Gate::Ch1Rotation => "CH1_ROTATION",
        }
    }
}

/// Gate thresholds and frozen shift baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub cv_threshold: f64,
    pub global_ejt_z: f64,
    pub elastic_z: f64,
    pub fracture_z: f64,
    pub theta_threshold_deg: f64,
    /// Frozen per-cluster baseline medians of center-shift magnitudes.
    pub shift_median: BTreeMap<Role, f64>,
    pub greatly_exceeds_factor: f64,
    pub dmg_threshold: f64,
    pub sustain_windows: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            cv_threshold: 3.0,
            global_ejt_z: -2.0,
            elastic_z: 2.0,
            fracture_z: -2.0,
            theta_threshold_deg: 60.0,
            shift_median: BTreeMap::new(),
            greatly_exceeds_factor: 2.0,
            dmg_threshold: 3.86,
            sustain_windows: 3,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_threshold < 0.0 || self.theta_threshold_deg < 0.0 {
            return Err(Error::data("thresholds must be nonnegative"));
        }
        if self.greatly_exceeds_factor < 1.0 {
            return Err(Error::data("greatly_exceeds_factor must be >= 1"));
        }
        if self.dmg_threshold <= 0.0 {
            return Err(Error::data("dmg_threshold must be positive"));
        }
        if self.sustain_windows == 0 {
            return Err(Error::data("sustain_windows must be positive"));
        }
        for (role, m) in &self.shift_median {
            if *m < 0.0 || !m.is_finite() {
                return Err(Error::data(format!(
                    "shift median for {} must be nonnegative",
                    role.name()
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of evaluating every gate on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub date: NaiveDate,
    pub fired: BTreeSet<Gate>,
    /// Gates whose referenced channels (or baselines) were absent.
    pub not_evaluable: BTreeSet<Gate>,
    pub notes: Vec<String>,
}

/// Evaluates the gate cascade on one channel vector. Pure: identical inputs
/// produce identical reports. A gate whose inputs are missing is recorded as
/// not evaluable and never fires.
pub fn evaluate_gates(cv: &ChannelVector, config: &GateConfig) -> Result<GateReport> {
    config.validate()?;
    cv.validate()?;
    let mut fired = BTreeSet::new();
    let mut not_evaluable = BTreeSet::new();
    let mut notes = Vec::new();

    match cv.cv {
        Some(v) if v > config.cv_threshold => {
            fired.insert(Gate::Ch5Cv);
        }
        Some(_) => {}
        None => {
            not_evaluable.insert(Gate::Ch5Cv);
        }
    }

    match cv.z_global {
        Some(z) if z < config.global_ejt_z => {
            fired.insert(Gate::Ch6GlobalEjt);
        }
        Some(_) => {}
        None => {
            not_evaluable.insert(Gate::Ch6GlobalEjt);
        }
    }

    let guard_median = config.shift_median.get(&Role::Guard).copied();
    match (cv.z_guard, cv.shift_guard, guard_median) {
        (Some(z), Some(shift), Some(median)) => {
            if z > config.elastic_z && shift > median {
                fired.insert(Gate::Ch6GuardElastic);
            }
            if z < config.fracture_z && shift > config.greatly_exceeds_factor * median {
                fired.insert(Gate::Ch6StiffFracture);
            }
        }
        (z, shift, median) => {
            not_evaluable.insert(Gate::Ch6GuardElastic);
            not_evaluable.insert(Gate::Ch6StiffFracture);
            if median.is_none() {
                notes.push("guard shift baseline missing from config".to_string());
            }
            if z.is_none() || shift.is_none() {
                notes.push("guard channels missing this window".to_string());
            }
        }
    }

    match cv.theta_deg {
        Some(t) if t > config.theta_threshold_deg => {
            fired.insert(Gate::Ch1Rotation);
        }
        Some(_) => {}
        None => {
            not_evaluable.insert(Gate::Ch1Rotation);
        }
    }

    Ok(GateReport {
        date: cv.date,
        fired,
        not_evaluable,
        notes,
    })
}

/// Event taxonomy labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventLabel {
    #[serde(rename = "PRECURSOR")]
    Precursor,
    #[serde(rename = "REGIME_S")]
    RegimeS,
    #[serde(rename = "REGIME_D")]
    RegimeD,
    #[serde(rename = "REGIME_E")]
    RegimeE,
    #[serde(rename = "REGIME_K_CANDIDATE")]
    RegimeKCandidate,
    #[serde(rename = "MODE_F")]
    ModeF,
    #[serde(rename = "NORMAL")]
    Normal,
}

impl EventLabel {
    pub fn name(&self) -> &'static str {
        match self {
            EventLabel::Precursor => "PRECURSOR",
            EventLabel::RegimeS => "REGIME_S",
            EventLabel::RegimeD => "REGIME_D",
            EventLabel::RegimeE => "REGIME_E",
            EventLabel::RegimeKCandidate => "REGIME_K_CANDIDATE",
            EventLabel::ModeF => "MODE_F",
            EventLabel::Normal => "NORMAL",
        }
    }
}

/// One classified window with the rule that produced the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventClass {
    pub date: NaiveDate,
    pub label: EventLabel,
    /// Fired gates plus the matching rule, for forensics.
    pub provenance: String,
}

fn gates_list(report: &GateReport) -> String {
    if report.fired.is_empty() {
        "no gates fired".to_string()
    } else {
        report
            .fired
            .iter()
            .map(|g| g.name())
            .collect::<Vec<_>>()
            .join("+")
    }
}

/// Classifies the latest window in an ordered history.
///
/// Precedence: the global stiff collision dominates (its gate has verified
/// zero false positives), then the guard stiff fracture, then sustained vs
/// isolated elastic motion, then the fragmentation precursor, then the
/// supporting rotation signal, then normal. Exactly one label is emitted.
pub fn classify_event(
    history: &[(ChannelVector, GateReport)],
    config: &GateConfig,
) -> Result<EventClass> {
    let (channels, report) = history
        .last()
        .ok_or_else(|| Error::data("classification requires at least one window"))?;
    let date = channels.date;
    let fired = &report.fired;
    let gates = gates_list(report);

    if fired.contains(&Gate::Ch6GlobalEjt) {
        return Ok(EventClass {
            date,
            label: EventLabel::RegimeE,
            provenance: format!("{gates}; rule: global stiff-axis collision dominates"),
        });
    }
    if fired.contains(&Gate::Ch6StiffFracture) {
        return Ok(EventClass {
            date,
            label: EventLabel::RegimeKCandidate,
            provenance: format!(
                "{gates}; rule: guard stiff fracture pending forensic checklist"
            ),
        });
    }
    if fired.contains(&Gate::Ch6GuardElastic) {
        // Length of the consecutive-window run (ending now) where the elastic
        // gate fired; a parallel run requiring the divergence condition too.
        let mut run = 0usize;
        let mut sustained = 0usize;
        let mut expected_date = Some(date);
        let mut counting_sustained = true;
        for (ch, rep) in history.iter().rev() {
            match expected_date {
                Some(d) if ch.date == d => {}
                _ => break,
            }
            if !rep.fired.contains(&Gate::Ch6GuardElastic) {
                break;
            }
            run += 1;
            if counting_sustained {
                match ch.delta_mg {
                    Some(dmg) if dmg > config.dmg_threshold => sustained += 1,
                    _ => counting_sustained = false,
                }
            }
            expected_date = ch.date.pred_opt();
        }
        if sustained >= config.sustain_windows {
            return Ok(EventClass {
                date,
                label: EventLabel::RegimeS,
                provenance: format!(
                    "{gates}; rule: elastic absorption with divergence above {} sustained {} windows",
                    config.dmg_threshold, sustained
                ),
            });
        }
        if run <= 2 {
            return Ok(EventClass {
                date,
                label: EventLabel::RegimeD,
                provenance: format!("{gates}; rule: isolated elastic reorganization (run {run})"),
            });
        }
        // Long elastic run without the divergence condition: no taxonomy
        // class claims it; fall through with the situation recorded.
        return Ok(EventClass {
            date,
            label: EventLabel::Normal,
            provenance: format!(
                "{gates}; rule: elastic run {run} without sustained divergence matches no class"
            ),
        });
    }
    if fired.contains(&Gate::Ch5Cv) {
        return Ok(EventClass {
            date,
            label: EventLabel::Precursor,
            provenance: format!("{gates}; rule: fragmentation without structural gates"),
        });
    }
    if fired.contains(&Gate::Ch1Rotation) {
        // Supporting-only: requires a quiet global geometry to mean anything.
        match channels.z_global {
            Some(z) if z > config.global_ejt_z => {
                return Ok(EventClass {
                    date,
                    label: EventLabel::ModeF,
                    provenance: format!(
                        "{gates}; rule: rotation with quiet global geometry (z_global {z:.3})"
                    ),
                });
            }
            Some(z) => {
                return Ok(EventClass {
                    date,
                    label: EventLabel::Normal,
                    provenance: format!(
                        "{gates}; rule: rotation alone is supporting-only and z_global {z:.3} is not quiet"
                    ),
                });
            }
            None => {
                return Ok(EventClass {
                    date,
                    label: EventLabel::Normal,
                    provenance: format!(
                        "{gates}; rule: rotation alone with z_global unavailable"
                    ),
                });
            }
        }
    }
    Ok(EventClass {
        date,
        label: EventLabel::Normal,
        provenance: format!("{gates}; rule: no driving gate"),
    })
}

/// Restart-age cohort comparison for the fleet-restart forensic step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BimodalityResult {
    pub returning_mean: f64,
    pub returning_std: f64,
    pub nonreturning_mean: f64,
    pub nonreturning_std: f64,
    pub ratio: f64,
    pub bimodal: bool,
}

/// Ratio threshold above which cohorts count as bimodal (given tight spreads).
pub const BIMODAL_RATIO_THRESHOLD: f64 = 10.0;

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Compares restart-age cohorts of relays that returned after an event versus
/// relays that left. A true fleet restart shows a young returning cohort
/// against an old departed cohort, with both spreads small next to the gap.
pub fn restart_age_bimodality(
    returning: &[f64],
    nonreturning: &[f64],
) -> Result<BimodalityResult> {
    if returning.is_empty() || nonreturning.is_empty() {
        return Err(Error::data(
            "restart-age comparison needs both cohorts nonempty",
        ));
    }
    if returning
        .iter()
        .chain(nonreturning.iter())
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::data("restart ages must be finite and nonnegative"));
    }
    let (rm, rs) = mean_std(returning);
    let (nm, ns) = mean_std(nonreturning);
    if rm <= 0.0 {
        return Err(Error::data("returning cohort mean must be positive"));
    }
    let ratio = nm / rm;
    let gap = (nm - rm).abs();
    let bimodal = ratio >= BIMODAL_RATIO_THRESHOLD && rs < gap / 2.0 && ns < gap / 2.0;
    Ok(BimodalityResult {
        returning_mean: rm,
        returning_std: rs,
        nonreturning_mean: nm,
        nonreturning_std: ns,
        ratio,
        bimodal,
    })
}

/// Per-gate false-positive rates over windows labeled stable.
///
/// The denominator is every supplied stable window; a gate that was not
/// evaluable on some window simply did not fire there.
pub fn fpr_evaluation(stable_reports: &[GateReport]) -> Result<BTreeMap<Gate, f64>> {
    if stable_reports.is_empty() {
        return Err(Error::data("FPR evaluation needs at least one stable window"));
    }
    let n = stable_reports.len() as f64;
    let mut out = BTreeMap::new();
    for gate in ALL_GATES {
        let fires = stable_reports
            .iter()
            .filter(|r| r.fired.contains(&gate))
            .count();
        out.insert(gate, fires as f64 / n);
    }
    Ok(out)
}
