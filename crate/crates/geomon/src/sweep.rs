//! Window-by-window sweep: drives the two frozen observers across a run of
//! daily population frames, extracts one channel vector per window, evaluates
//! the gate cascade, and classifies every window against the accumulated
//! history.
//!
//! A window is a pair of consecutive daily frames `(t, t+1)`. Channels that
//! need only one frame — free-energy dispersion, reconstruction error, latent
//! spread, mass/gravity divergence, the canonical-correlation fit — are
//! measured on the arrival frame `t+1`. Displacement channels (center shifts
//! and their stiff/soft alignment) and the rotation angle compare `t+1`
//! against `t`; they are suspended whenever the two frames are not calendar
//! neighbours, because a shift across a data gap conflates an unknown number
//! of days of drift.
//!
//! The module also owns pipeline assembly: fitting the robust scalers on a
//! training range, building frames, training and freezing the observer pair,
//! and calibrating alignment baselines plus shift medians from a stable run.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::cca::{fit_cca, rotation_angle, CcaFit, DEFAULT_REGULARIZATION};
use crate::cdae::{Cdae, CdaeConfig};
use crate::ejt::{
    eigen_split, ejt_zscore, fit_baseline, metric_tensor, soft_alignment, EjtBaseline,
    DEFAULT_TRACE_MASS,
};
use crate::error::{Error, Result};
use crate::gates::{classify_event, evaluate_gates, ChannelVector, GateConfig, GateReport};
use crate::grbm::{Grbm, GrbmConfig};
use crate::population::{
    assign_clusters, cluster_centers, mass_gravity_divergence, ClusterCenters, RobustScaler, Role,
    Snapshot, WindowFrame,
};
use crate::records::WindowRecord;
use crate::schema::FeatureSchema;

/// Fraction of saturated hidden units above which a window gets a warning
/// note: a mostly-saturated detector has stopped discriminating.
const SATURATION_WARNING: f64 = 0.5;

// ---------------------------------------------------------------------------
// Pipeline assembly: scalers, frames, observers
// ---------------------------------------------------------------------------

/// The frozen per-feature scalers fitted on a training range: one over the
/// clean continuous subset (geometric observer input), one over the full
/// manifest (energetic observer input).
#[derive(Debug, Clone, PartialEq)]
pub struct FittedScalers {
    pub clean: RobustScaler,
    pub full: RobustScaler,
}

/// Fits both robust scalers on every relay row across the given snapshots
/// and freezes them. Downstream frames must be built with these so that a
/// population shift moves the data, never the yardstick.
pub fn fit_scalers(snapshots: &[Snapshot], schema: &FeatureSchema) -> Result<FittedScalers> {
    if snapshots.is_empty() {
        return Err(Error::data("scaler fit requires at least one snapshot"));
    }
    let mut clean_rows = Vec::new();
    let mut full_rows = Vec::new();
    for snapshot in snapshots {
        for relay in &snapshot.relays {
            clean_rows.push(relay.clean_features(schema));
            full_rows.push(relay.features.clone());
        }
    }
    let mut clean = RobustScaler::fit(&clean_rows, None)?;
    clean.freeze();
    let mut full = RobustScaler::fit(&full_rows, Some(&schema.kinds))?;
    full.freeze();
    Ok(FittedScalers { clean, full })
}

/// Applies frozen scalers to every snapshot, yielding one frame per day.
pub fn build_frames(
    snapshots: &[Snapshot],
    scalers: &FittedScalers,
    schema: &FeatureSchema,
) -> Result<Vec<WindowFrame>> {
    snapshots
        .iter()
        .map(|s| WindowFrame::from_snapshot(s, &scalers.clean, &scalers.full, schema))
        .collect()
}

/// The frozen observer pair: the contractive geometric observer over the
/// clean features and the energetic observer over the full manifest.
#[derive(Debug, Clone)]
pub struct TrainedObservers {
    pub cdae: Cdae,
    pub grbm: Grbm,
}

/// Trains both observers on the stacked rows of the given frames and freezes
/// them. The training range recorded on each model spans the frame dates.
pub fn train_observers(
    frames: &[WindowFrame],
    cdae_config: &CdaeConfig,
    grbm_config: &GrbmConfig,
    schema_hash: &str,
) -> Result<TrainedObservers> {
    if frames.is_empty() {
        return Err(Error::data("observer training requires at least one frame"));
    }
    let clean = stack_rows(frames, |f| &f.scaled_clean);
    let full = stack_rows(frames, |f| &f.scaled_full);
    let from = frames[0].date;
    let to = frames[frames.len() - 1].date;
    let mut cdae = Cdae::train(&clean, cdae_config, schema_hash, from, to)?;
    cdae.freeze();
    let mut grbm = Grbm::train(&full, grbm_config, schema_hash, from, to)?;
    grbm.freeze();
    Ok(TrainedObservers { cdae, grbm })
}

fn stack_rows<'a, F>(frames: &'a [WindowFrame], pick: F) -> DMatrix<f64>
where
    F: Fn(&'a WindowFrame) -> &'a DMatrix<f64>,
{
    let rows: usize = frames.iter().map(|f| pick(f).nrows()).sum();
    let cols = pick(&frames[0]).ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for frame in frames {
        let m = pick(frame);
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    out
}

// ---------------------------------------------------------------------------
// Sweep configuration
// ---------------------------------------------------------------------------

/// Frozen alignment baselines, one per displacement scope.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSet {
    pub global: EjtBaseline,
    pub guard: EjtBaseline,
    pub exit: EjtBaseline,
}

impl Default for BaselineSet {
    fn default() -> Self {
        BaselineSet {
            global: EjtBaseline::default(),
            guard: EjtBaseline::default(),
            exit: EjtBaseline::default(),
        }
    }
}

/// Everything a sweep needs besides the observers and the frames.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Ridge regularization for the per-window canonical fit.
    pub regularization: f64,
    pub gate: GateConfig,
    pub baselines: BaselineSet,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            regularization: DEFAULT_REGULARIZATION,
            gate: GateConfig::default(),
            baselines: BaselineSet::default(),
        }
    }
}

/// One swept window: the channel vector plus sweep-level notes (gaps,
/// degenerate fits, sub-floor displacements) to be merged into the record.
#[derive(Debug, Clone)]
pub struct SweepWindow {
    pub channels: ChannelVector,
    pub notes: Vec<String>,
}

// ---------------------------------------------------------------------------
// The sweep proper
// ---------------------------------------------------------------------------

/// Per-frame precomputation shared by the two windows a frame touches.
struct FramePrep {
    centers: ClusterCenters,
    fit: Option<CcaFit>,
    degenerate: bool,
    saturation: f64,
    notes: Vec<String>,
}

fn prepare_frame(
    cdae: &Cdae,
    grbm: &Grbm,
    frame: &WindowFrame,
    regularization: f64,
) -> Result<FramePrep> {
    let (roles, _) = assign_clusters(&frame.relays);
    let centers = cluster_centers(frame, &roles)?;
    let mut notes = Vec::new();

    let zx = cdae.encode_rows(&frame.scaled_clean)?;
    let (zy, saturation) = grbm.hidden_rows(&frame.scaled_full)?;
    let (fit, degenerate) = match fit_cca(frame.date, &zx, &zy, regularization) {
        Ok(fit) => {
            let check = fit.degeneration_check();
            if check.degenerate {
                notes.push(format!(
                    "canonical correlation degenerate on {} (rho1 = {:.4}); rotation suspended",
                    frame.date,
                    fit.rho1()
                ));
            }
            (Some(fit), check.degenerate)
        }
        Err(e) => {
            notes.push(format!("canonical fit failed on {}: {e}", frame.date));
            (None, false)
        }
    };

    Ok(FramePrep {
        centers,
        fit,
        degenerate,
        saturation,
        notes,
    })
}

/// Mean per-dimension population standard deviation of latent activations.
fn latent_sigma(z: &DMatrix<f64>) -> f64 {
    if z.nrows() == 0 || z.ncols() == 0 {
        return 0.0;
    }
    let n = z.nrows() as f64;
    let mut acc = 0.0;
    for j in 0..z.ncols() {
        let col = z.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        acc += var.sqrt();
    }
    acc / z.ncols() as f64
}

/// Outcome of one displacement scope (global mean or one cluster center).
struct ScopeOutcome {
    alpha: Option<f64>,
    z: Option<f64>,
    shift: Option<f64>,
}

/// Measures one center displacement against the local stiff/soft split.
///
/// The split is taken at the origin (day `t`) center: that is the operating
/// point the displacement departs from. A displacement below the measurement
/// floor yields a shift of ~0 with no alignment, since direction is not
/// defined for a null move.
fn displacement_scope(
    cdae: &Cdae,
    origin: Option<&DVector<f64>>,
    target: Option<&DVector<f64>>,
    baseline: &EjtBaseline,
    label: &str,
    notes: &mut Vec<String>,
) -> Result<ScopeOutcome> {
    let (origin, target) = match (origin, target) {
        (Some(o), Some(t)) => (o, t),
        _ => {
            notes.push(format!(
                "{label} center unavailable; displacement channels skipped"
            ));
            return Ok(ScopeOutcome {
                alpha: None,
                z: None,
                shift: None,
            });
        }
    };
    let delta = target - origin;
    let shift = delta.norm();
    let jacobian = cdae.encoder_jacobian(origin)?;
    let metric = metric_tensor(&jacobian)?;
    let split = eigen_split(&metric, DEFAULT_TRACE_MASS, origin.as_slice(), label)?;
    match soft_alignment(&delta, &split)? {
        Some(alignment) => {
            let z = ejt_zscore(alignment.alpha, baseline)?;
            Ok(ScopeOutcome {
                alpha: Some(alignment.alpha),
                z: Some(z),
                shift: Some(shift),
            })
        }
        None => {
            notes.push(format!(
                "{label} displacement below the measurement floor; alignment skipped"
            ));
            Ok(ScopeOutcome {
                alpha: None,
                z: None,
                shift: Some(shift),
            })
        }
    }
}

/// Sweeps the observer pair across consecutive frame pairs, producing one
/// channel vector per window. Frames must be in strictly increasing date
/// order; fewer than two frames yield an empty sweep.
pub fn sweep_channels(
    cdae: &Cdae,
    grbm: &Grbm,
    frames: &[WindowFrame],
    config: &SweepConfig,
) -> Result<Vec<SweepWindow>> {
    for pair in frames.windows(2) {
        if pair[1].date <= pair[0].date {
            return Err(Error::data(format!(
                "frames out of order: {} does not precede {}",
                pair[0].date, pair[1].date
            )));
        }
    }
    if frames.len() < 2 {
        return Ok(Vec::new());
    }

    let preps: Vec<FramePrep> = frames
        .iter()
        .map(|f| prepare_frame(cdae, grbm, f, config.regularization))
        .collect::<Result<_>>()?;

    let mut windows = Vec::with_capacity(frames.len() - 1);
    for i in 0..frames.len() - 1 {
        let arrival = &frames[i + 1];
        let prev = &preps[i];
        let curr = &preps[i + 1];
        let adjacent = frames[i].date.succ_opt() == Some(arrival.date);

        let mut cv = ChannelVector::empty(arrival.date);
        let mut notes = curr.notes.clone();

        // Same-frame channels, measured on the arrival frame.
        let fragmentation = grbm.fragmentation_cv(arrival)?;
        cv.cv = Some(fragmentation.cv);
        if let Some(warning) = fragmentation.warning {
            notes.push(warning);
        }
        cv.epsilon = Some(cdae.mean_reconstruction_error(&arrival.scaled_clean)?);
        cv.sigma_z = Some(latent_sigma(&cdae.encode_rows(&arrival.scaled_clean)?));
        if curr.saturation > SATURATION_WARNING {
            notes.push(format!(
                "{:.0}% of hidden units saturated on {}",
                curr.saturation * 100.0,
                arrival.date
            ));
        }
        if curr.centers.weighted.contains_key(&Role::Guard) {
            cv.delta_mg = Some(mass_gravity_divergence(&curr.centers)?);
        } else {
            notes.push(format!(
                "guard cluster empty on {}; mass/gravity divergence unavailable",
                arrival.date
            ));
        }
        cv.rho1 = curr.fit.as_ref().map(|f| f.rho1());
        cv.degenerate_cca = curr.degenerate;

        if adjacent {
            // Displacement channels: day-over-day center moves measured
            // against the stiff/soft split at the departure point.
            let global = displacement_scope(
                cdae,
                Some(&prev.centers.global_mean),
                Some(&curr.centers.global_mean),
                &config.baselines.global,
                "global mean",
                &mut notes,
            )?;
            cv.alpha_global = global.alpha;
            cv.z_global = global.z;
            cv.shift_global = global.shift;

            let guard = displacement_scope(
                cdae,
                prev.centers.weighted.get(&Role::Guard),
                curr.centers.weighted.get(&Role::Guard),
                &config.baselines.guard,
                "guard cluster",
                &mut notes,
            )?;
            cv.alpha_guard = guard.alpha;
            cv.z_guard = guard.z;
            cv.shift_guard = guard.shift;

            let exit = displacement_scope(
                cdae,
                prev.centers.weighted.get(&Role::Exit),
                curr.centers.weighted.get(&Role::Exit),
                &config.baselines.exit,
                "exit cluster",
                &mut notes,
            )?;
            cv.alpha_exit = exit.alpha;
            cv.z_exit = exit.z;
            cv.shift_exit = exit.shift;

            match (&prev.fit, &curr.fit) {
                (Some(fit_prev), Some(fit_curr)) if !prev.degenerate && !curr.degenerate => {
                    let delta = rotation_angle(fit_curr, fit_prev)?;
                    cv.theta_deg = Some(delta.theta_deg);
                    cv.delta_rho = Some(delta.delta_rho);
                }
                _ => {
                    notes.push(format!(
                        "rotation unavailable on {}: canonical fit missing or degenerate",
                        arrival.date
                    ));
                }
            }
        } else {
            notes.push(format!(
                "calendar gap before {}: displacement and rotation channels suspended",
                arrival.date
            ));
        }

        windows.push(SweepWindow {
            channels: cv,
            notes,
        });
    }
    Ok(windows)
}

/// Full sweep: channels, gate cascade, and history-aware classification.
///
/// `truth` optionally attaches a ground-truth label per window (synthetic
/// runs); its length must match the window count.
pub fn run_sweep(
    cdae: &Cdae,
    grbm: &Grbm,
    frames: &[WindowFrame],
    config: &SweepConfig,
    truth: Option<&[String]>,
) -> Result<Vec<WindowRecord>> {
    let windows = sweep_channels(cdae, grbm, frames, config)?;
    if let Some(labels) = truth {
        if labels.len() != windows.len() {
            return Err(Error::data(format!(
                "truth labels ({}) do not match the window count ({})",
                labels.len(),
                windows.len()
            )));
        }
    }
    let mut history: Vec<(ChannelVector, GateReport)> = Vec::with_capacity(windows.len());
    let mut records = Vec::with_capacity(windows.len());
    for (w, window) in windows.into_iter().enumerate() {
        let mut report = evaluate_gates(&window.channels, &config.gate)?;
        report.notes.extend(window.notes);
        history.push((window.channels, report));
        let event = classify_event(&history, &config.gate)?;
        let (channels, report) = history.last().expect("window just pushed");
        records.push(WindowRecord::from_parts(
            channels,
            report,
            &event,
            truth.map(|labels| labels[w].clone()),
        ));
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Calibration from a stable run
// ---------------------------------------------------------------------------

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite medians"));
    let n = values.len();
    if n % 2 == 1 {
        Some(values[n / 2])
    } else {
        Some(0.5 * (values[n / 2 - 1] + values[n / 2]))
    }
}

/// Calibrates the frozen quantities from an event-free sweep: one alignment
/// baseline per scope (mean and sample std of the stable alphas) and the
/// per-cluster median center-shift magnitudes used by the "greatly exceeds"
/// comparisons. Returns the baselines plus a copy of `template` with its
/// shift medians replaced.
pub fn fit_stable_baselines(
    channels: &[ChannelVector],
    template: &GateConfig,
) -> Result<(BaselineSet, GateConfig)> {
    if channels.is_empty() {
        return Err(Error::data("calibration requires at least one window"));
    }
    let from = channels.first().map(|c| c.date);
    let to = channels.last().map(|c| c.date);

    let collect = |pick: fn(&ChannelVector) -> Option<f64>| -> Vec<f64> {
        channels.iter().filter_map(pick).collect()
    };
    let scope_baseline = |alphas: Vec<f64>, label: &str| -> Result<EjtBaseline> {
        fit_baseline(&alphas, from, to)
            .map_err(|e| Error::data(format!("{label} baseline: {e}")))
    };

    let baselines = BaselineSet {
        global: scope_baseline(collect(|c| c.alpha_global), "global")?,
        guard: scope_baseline(collect(|c| c.alpha_guard), "guard")?,
        exit: scope_baseline(collect(|c| c.alpha_exit), "exit")?,
    };

    let mut gate = template.clone();
    gate.shift_median = BTreeMap::new();
    let mut guard_shifts = collect(|c| c.shift_guard);
    let mut exit_shifts = collect(|c| c.shift_exit);
    if let Some(m) = median(&mut guard_shifts) {
        gate.shift_median.insert(Role::Guard, m);
    }
    if let Some(m) = median(&mut exit_shifts) {
        gate.shift_median.insert(Role::Exit, m);
    }
    if !gate.shift_median.contains_key(&Role::Guard) {
        return Err(Error::data(
            "calibration produced no guard shift median; stable run too sparse",
        ));
    }
    Ok((baselines, gate))
}
