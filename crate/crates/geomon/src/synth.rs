//! Synthetic relay population generator with scripted structural events.
//!
//! The generator builds a persistent population of relays and evolves it one
//! day at a time. Stable dynamics are engineered so the downstream monitor
//! sees a quiet baseline with structure in the right places. The design
//! follows one empirical fact about the trained observers: a bounded
//! (tanh) contractive encoder sets its input gain roughly inversely to each
//! scaled feature's spread, so the *tight* population invariants become the
//! metric's stiff directions while the heavy-tailed operational axes stay
//! soft. The population therefore separates into:
//!
//! * Soft operational axes: the bandwidth family is lognormal with a
//!   clipped tail and one relay planted exactly at the configured
//!   max/median ratio; restart ages mix a young guard band, an exponential
//!   churn body, and a sprinkle of never-restarted appliance relays that
//!   carries most of the age variance.
//! * Stiff structural invariants: the advertised-to-observed and
//!   burst-to-rate ratios, the role-probability profiles, and the
//!   geographic coordinates are all tight, so the encoder holds them
//!   rigid and any population-level motion along them reads as a
//!   stiff-subspace breach.
//! * Bounded center drift: a four-day cycle of alternating bandwidth
//!   multipliers (soft) plus a constant small geographic wobble (stiff).
//!   Day-pair displacements take one of two soft/stiff mixes, so the
//!   stable soft-alignment ratio is two-point distributed and its z-scores
//!   stay within roughly one deviation no matter how many windows are
//!   observed. The soft component is weaker for guards than for the rest
//!   of the population, which keeps elastic headroom above the guard
//!   cluster's stable motion.
//! * Weight concentration: consensus weight is linear in observed
//!   bandwidth, so the heaviest fifth of the guard cluster carries close
//!   to half the cluster's weight. Weighted cluster centers react strongly
//!   to anything that hits those few relays while unweighted population
//!   means barely move — the lever that lets a localized event fire the
//!   cluster channels without disturbing the global ones.
//!
//! Scripted events each disturb one detection-channel family: `SURGE`
//! floods the population with lightweight newcomers and lifts incumbent
//! guard load, `FRACTURE` shoves everyone along the tight invariant axes,
//! `FLEET_RESTART` reboots the heaviest guards (a shared-deployment-epoch
//! operator fleet), `FRAGMENTATION` pushes a small fraction of relays to
//! extreme values on non-clean features, and `REORGANIZATION` is a one-day
//! soft bandwidth shift of the guard cluster.

use chrono::NaiveDate;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{RelayRecord, Role, Snapshot};
use crate::schema::{feat, N_FEATURES};

/// Axes displaced by a fracture event: the tight invariants the trained
/// encoder holds stiff.
pub const DEFAULT_FRACTURE_AXES: [usize; 4] = [
    feat::BANDWIDTH_RATIO,
    feat::BURST_TO_RATE_RATIO,
    feat::LATITUDE,
    feat::LONGITUDE,
];

/// Median of the synthetic observed-bandwidth distribution (bytes/second).
pub const MEDIAN_BANDWIDTH: f64 = 5.0e6;

fn default_n_relays() -> usize {
    2000
}
fn default_n_windows() -> usize {
    30
}
fn default_seed() -> u64 {
    7
}
fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2026, 1, 1).unwrap()
}
fn default_role_mix() -> [f64; 3] {
    [0.25, 0.55, 0.20]
}
fn default_mean_median() -> f64 {
    1.4
}
fn default_max_median() -> f64 {
    14.0
}
fn default_fracture_axes() -> Vec<usize> {
    DEFAULT_FRACTURE_AXES.to_vec()
}
fn default_jitter() -> f64 {
    1.0
}
fn default_drift() -> f64 {
    1.0
}

/// Configuration of the synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default = "default_n_relays")]
    pub n_relays: usize,
    /// Number of observation windows; `n_windows + 1` daily frames are
    /// generated so consecutive frames pair into exactly this many windows.
    #[serde(default = "default_n_windows")]
    pub n_windows: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_start_date")]
    pub start_date: NaiveDate,
    /// (guard, middle, exit) fractions; must sum to 1.
    #[serde(default = "default_role_mix")]
    pub role_mix: [f64; 3],
    /// Target bandwidth mean/median ratio.
    #[serde(default = "default_mean_median")]
    pub mean_median_ratio: f64,
    /// Target bandwidth max/median ratio (one relay is planted exactly there).
    #[serde(default = "default_max_median")]
    pub max_median_ratio: f64,
    /// Feature indices displaced by fracture events.
    #[serde(default = "default_fracture_axes")]
    pub fracture_axes: Vec<usize>,
    /// Scale on day-to-day per-relay noise; 0 freezes the population.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Scale on the bounded common drift walk; 0 removes center motion.
    #[serde(default = "default_drift")]
    pub drift_scale: f64,
    /// When true, latitude and longitude become statistical twins (equal
    /// spread and equal daily wobble), leaving the observers' leading shared
    /// direction degenerate so it wanders window to window. Used to study
    /// rotation false positives; off by default.
    #[serde(default)]
    pub geo_twin_degeneracy: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_relays: default_n_relays(),
            n_windows: default_n_windows(),
            seed: default_seed(),
            start_date: default_start_date(),
            role_mix: default_role_mix(),
            mean_median_ratio: default_mean_median(),
            max_median_ratio: default_max_median(),
            fracture_axes: default_fracture_axes(),
            jitter: default_jitter(),
            drift_scale: default_drift(),
            geo_twin_degeneracy: false,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_relays < 10 {
            return Err(Error::data("population needs at least 10 relays"));
        }
        if self.n_windows == 0 {
            return Err(Error::data("at least one observation window required"));
        }
        let sum: f64 = self.role_mix.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.role_mix.iter().any(|f| *f < 0.0) {
            return Err(Error::data("role mix fractions must be nonnegative and sum to 1"));
        }
        if self.mean_median_ratio < 1.0 || self.max_median_ratio < 1.0 {
            return Err(Error::data("skew ratios must be at least 1"));
        }
        // The tail clip sits just under the max/median target; without
        // headroom above the body it would distort the mean/median ratio.
        if self.max_median_ratio < 2.0 * self.mean_median_ratio * self.mean_median_ratio {
            return Err(Error::data(
                "infeasible skew targets: max/median must exceed twice the squared mean/median",
            ));
        }
        if self.jitter < 0.0 || self.drift_scale < 0.0 {
            return Err(Error::data("jitter and drift scales must be nonnegative"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for &i in &self.fracture_axes {
            if i >= N_FEATURES {
                return Err(Error::data(format!("fracture axis {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::data(format!("fracture axis {i} listed twice")));
            }
        }
        Ok(())
    }
}

/// Structural event kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "SURGE")]
    Surge,
    #[serde(rename = "FRACTURE")]
    Fracture,
    #[serde(rename = "FLEET_RESTART")]
    FleetRestart,
    #[serde(rename = "FRAGMENTATION")]
    Fragmentation,
    #[serde(rename = "REORGANIZATION")]
    Reorganization,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Surge => "SURGE",
            EventKind::Fracture => "FRACTURE",
            EventKind::FleetRestart => "FLEET_RESTART",
            EventKind::Fragmentation => "FRAGMENTATION",
            EventKind::Reorganization => "REORGANIZATION",
        }
    }

    /// Documented default magnitude per kind; each lands the driving channel
    /// several baseline deviations beyond its stable range.
    pub fn default_magnitude(&self) -> f64 {
        match self {
            // Influx size as a fraction of the existing population.
            EventKind::Surge => 1.25,
            // Scale on the invariant-axis displacement.
            EventKind::Fracture => 1.0,
            // Count fraction of the guard cluster restarting, heaviest
            // first; at this size the restart covers the whole operator
            // fleet plus the next-heaviest guards, and the returning weight
            // holds a majority of the cluster so the weighted medians cross
            // into the fresh-restart bands.
            EventKind::FleetRestart => 0.35,
            // Fraction of relays pushed to extreme non-clean values.
            EventKind::Fragmentation => 0.02,
            // Relative one-day bandwidth bump of the guard cluster.
            EventKind::Reorganization => 0.35,
        }
    }
}

/// One scripted event over a window range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub kind: EventKind,
    /// First affected observation window.
    pub start: usize,
    /// Number of affected windows.
    pub duration: usize,
    /// Kind-specific magnitude; see [`EventKind::default_magnitude`].
    pub magnitude: f64,
}

impl ScenarioScript {
    pub fn with_defaults(kind: EventKind, start: usize, duration: usize) -> Self {
        ScenarioScript {
            kind,
            start,
            duration,
            magnitude: kind.default_magnitude(),
        }
    }
}

/// A generated run: daily snapshots plus per-window ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub config: SyntheticConfig,
    /// `n_windows + 1` consecutive daily frames.
    pub snapshots: Vec<Snapshot>,
    /// Ground-truth label per observation window (`NORMAL` or an event kind).
    pub truth: Vec<String>,
    pub events: Vec<ScenarioScript>,
}

impl SyntheticRun {
    pub fn window_count(&self) -> usize {
        self.snapshots.len().saturating_sub(1)
    }
}

/// Declarative scenario file: a population block plus any number of events.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default)]
    pub population: Option<SyntheticConfig>,
    #[serde(default, rename = "event")]
    pub events: Vec<ScenarioScript>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile> {
    let file: ScenarioFile =
        toml::from_str(text).map_err(|e| Error::data(format!("scenario file: {e}")))?;
    if let Some(cfg) = &file.population {
        cfg.validate()?;
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// Stable-population synthesis
// ---------------------------------------------------------------------------

/// Restart-age landscape. Ordinary guards sit in a young uniform band while
/// the other roles churn on an exponential clock; a sprinkle of
/// never-restarted appliance relays among them carries most of the age
/// variance, keeping the age axis soft for the encoder. The heaviest guards
/// form the operator fleet: a shared-deployment-epoch cohort whose restart
/// age is tight around [`FLEET_AGE_MEAN`], planted so a fleet-restart event
/// leaves a clean bimodal forensic signature (old epoch vs fresh restart).
const GUARD_AGE_RANGE: (f64, f64) = (25.0, 60.0);
const CHURN_AGE_MEAN: f64 = 90.0;
const APPLIANCE_DAYS: f64 = 1500.0;
const APPLIANCE_FRACTION: f64 = 0.08;
/// Count share of the guard cluster (heaviest first) in the operator fleet.
/// With linear weights and the default bandwidth skew this is just under
/// half the cluster's consensus weight, leaving the weighted median inside
/// the young guard band until the fleet actually restarts.
const FLEET_RANK_SHARE: f64 = 0.18;
const FLEET_AGE_MEAN: f64 = 600.0;
const FLEET_AGE_STD: f64 = 20.0;
/// Share of restarting relays that come back online.
const FLEET_RETURN_SHARE: f64 = 0.85;
/// Restarted relays come back with this age...
const RESTART_AGE_RANGE: (f64, f64) = (25.0, 31.0);
/// ...and with fresh traffic estimators: the burst bucket has not refilled,
/// so the burst ratio sits visibly below its population cluster until it
/// re-calibrates, and the advertised figure re-initializes to the live
/// observation (ratio exactly 1, difference exactly 0).
const RESTART_B2R_RANGE: (f64, f64) = (1.40, 1.50);

struct BaseRelay {
    id: String,
    role: Role,
    /// Raw feature vector at day 0.
    base: Vec<f64>,
}

fn role_of_index(i: usize, n: usize, mix: &[f64; 3]) -> Role {
    let guard_end = (mix[0] * n as f64).round() as usize;
    let exit_count = (mix[2] * n as f64).round() as usize;
    let exit_start = n.saturating_sub(exit_count);
    if i < guard_end {
        Role::Guard
    } else if i >= exit_start {
        Role::Exit
    } else {
        Role::Middle
    }
}

fn role_probs(role: Role, rng: &mut ChaCha8Rng) -> [f64; 3] {
    // (guard, middle, exit) profiles kept close together so the scaled
    // cluster offsets stay moderate; argmax still identifies the role.
    let base = match role {
        Role::Guard => [0.40, 0.33, 0.26],
        Role::Middle => [0.26, 0.46, 0.27],
        Role::Exit => [0.25, 0.33, 0.41],
    };
    let mut out = [0.0; 3];
    for (o, b) in out.iter_mut().zip(base.iter()) {
        *o = (b + rng.random_range(-0.06f64..0.06)).clamp(0.02, 0.95);
    }
    out
}

#[allow(clippy::needless_range_loop)]
fn sample_relay(
    i: usize,
    role: Role,
    config: &SyntheticConfig,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> BaseRelay {
    let mut f = vec![0.0; N_FEATURES];

    // Bandwidth body: lognormal around the median, tail clipped just below
    // the max/median target. Relay 0 is planted exactly at the target.
    let z: f64 = StandardNormal.sample(rng);
    let mut obs = MEDIAN_BANDWIDTH * (sigma * z).exp();
    let clip_hi = 0.96 * config.max_median_ratio * MEDIAN_BANDWIDTH;
    obs = obs.clamp(0.05 * MEDIAN_BANDWIDTH, clip_hi);
    if i == 0 {
        obs = config.max_median_ratio * MEDIAN_BANDWIDTH;
    }
    let advertised = obs * rng.random_range(0.97..1.08);
    let rate = obs * rng.random_range(0.85..1.15);
    let burst = rate * rng.random_range(1.8..2.2);
    f[feat::OBSERVED_BANDWIDTH] = obs;
    f[feat::ADVERTISED_BANDWIDTH] = advertised;
    f[feat::BANDWIDTH_RATE] = rate;
    f[feat::BANDWIDTH_BURST] = burst;
    f[feat::BANDWIDTH_DIFFERENCE] = advertised - obs;
    f[feat::BANDWIDTH_RATIO] = advertised / obs;
    f[feat::BURST_TO_RATE_RATIO] = burst / rate;

    let probs = role_probs(role, rng);
    f[feat::GUARD_PROBABILITY] = probs[0];
    f[feat::MIDDLE_PROBABILITY] = probs[1];
    f[feat::EXIT_PROBABILITY] = probs[2];

    // Restart age by role; the operator fleet overrides the heaviest guards
    // afterwards (see `assign_fleet_ages`).
    let days = if role == Role::Guard {
        rng.random_range(GUARD_AGE_RANGE.0..GUARD_AGE_RANGE.1)
    } else if rng.random::<f64>() < APPLIANCE_FRACTION {
        let z2: f64 = StandardNormal.sample(rng);
        (APPLIANCE_DAYS + 80.0 * z2).max(1000.0)
    } else {
        -CHURN_AGE_MEAN * (1.0 - rng.random::<f64>()).ln()
    };
    f[feat::DAYS_SINCE_RESTART] = days;
    f[feat::RELAY_LIFESPAN_DAYS] = days + 30.0 - 150.0 * (1.0 - rng.random::<f64>()).ln();
    f[feat::OVERLOAD_GENERAL_TIMESTAMP] = 0.0;

    // Geographic coordinates: tight clusters, optionally twinned to leave
    // the leading shared direction degenerate.
    let (lat_std, lon_std) = if config.geo_twin_degeneracy {
        (1.7, 1.7)
    } else {
        (1.3, 2.1)
    };
    let g1: f64 = StandardNormal.sample(rng);
    let g2: f64 = StandardNormal.sample(rng);
    f[feat::LATITUDE] = 46.0 + lat_std * g1;
    f[feat::LONGITUDE] = 8.0 + lon_std * g2;

    // Consensus weight tracks observed bandwidth linearly with a mild role
    // factor, so directory weight concentrates on the heavy tail: the top
    // fifth of a cluster holds close to half its weight.
    let role_factor = match role {
        Role::Guard => 1.15,
        Role::Middle => 1.0,
        Role::Exit => 1.05,
    };
    f[feat::CONSENSUS_WEIGHT] =
        100.0 * role_factor * (obs / MEDIAN_BANDWIDTH) * rng.random_range(0.9..1.1);

    // Static metadata.
    f[33] = 1.60e9 + rng.random_range(0.0..6.0e7); // first seen
    f[34] = 1.78e9; // last seen (snapshot epoch, static at desk scale)
    f[35] = f[33] + rng.random_range(0.0..1.0e7);
    f[36] = rng.random_range(1000.0f64..60000.0).round(); // AS number
    f[41] = 0.0;
    f[42] = rng.random_range(4.0f64..6.0).floor();
    f[43] = rng.random_range(0.0f64..10.0).floor();
    f[45] = match role {
        Role::Exit => rng.random_range(400.0f64..1000.0).round(),
        _ => rng.random_range(0.0f64..30.0).round(),
    };
    f[47] = if rng.random::<f64>() < 0.3 {
        443.0
    } else {
        9001.0
    };

    // Flags.
    let exit_role = role == Role::Exit;
    let mut flag = |idx: usize, p: f64| {
        f[idx] = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
    };
    flag(0, 1.0); // running
    flag(2, 0.9); // fast
    flag(12, 0.7); // stable
    flag(15, 1.0); // valid
    flag(16, if role == Role::Guard { 1.0 } else { 0.0 });
    flag(17, if exit_role { 1.0 } else { 0.0 });
    flag(18, 0.25);
    flag(19, 0.5);
    flag(20, 0.0);
    flag(21, 0.005);
    flag(22, if exit_role { 0.8 } else { 0.02 });
    flag(23, 0.4);
    flag(24, 0.03);
    flag(25, 0.01);
    flag(26, 0.0);
    flag(27, 0.0);
    flag(44, 0.9);
    flag(46, if exit_role { 0.9 } else { 0.05 });
    flag(48, 0.35);
    flag(49, 0.4);
    flag(37, 0.8);
    drop(flag);
    let country = 50 + rng.random_range(0..50usize);
    f[country] = 1.0;
    if f[37] == 0.0 {
        let alt = 38 + rng.random_range(0..3usize);
        f[alt] = 1.0;
    }

    // Traffic-history bins proportional to observed bandwidth.
    for j in 0..50 {
        f[100 + j] = obs * (-(j as f64) / 12.0).exp() * rng.random_range(0.7..1.3);
    }
    for j in 0..41 {
        f[150 + j] = obs * 0.8 * (-(j as f64) / 10.0).exp() * rng.random_range(0.7..1.3);
    }

    BaseRelay {
        id: format!("relay-{i:05}"),
        role,
        base: f,
    }
}

/// Reassigns the heaviest guards to the operator fleet's shared deployment
/// epoch: tight restart ages around [`FLEET_AGE_MEAN`]. Lifespans keep their
/// sampled tail beyond the restart age.
fn assign_fleet_ages(relays: &mut [BaseRelay], config: &SyntheticConfig) {
    let mut guards: Vec<usize> = relays
        .iter()
        .enumerate()
        .filter(|(_, r)| r.role == Role::Guard)
        .map(|(i, _)| i)
        .collect();
    if guards.is_empty() {
        return;
    }
    guards.sort_by(|&a, &b| {
        relays[b].base[feat::CONSENSUS_WEIGHT]
            .partial_cmp(&relays[a].base[feat::CONSENSUS_WEIGHT])
            .unwrap()
            .then(a.cmp(&b))
    });
    let n_fleet = ((FLEET_RANK_SHARE * guards.len() as f64).ceil() as usize).min(guards.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xA5A5_5A5A_1E57_F1EE);
    for &i in guards.iter().take(n_fleet) {
        let z: f64 = StandardNormal.sample(&mut rng);
        let days = (FLEET_AGE_MEAN + FLEET_AGE_STD * z).clamp(540.0, 660.0);
        let relay = &mut relays[i];
        let tail = relay.base[feat::RELAY_LIFESPAN_DAYS] - relay.base[feat::DAYS_SINCE_RESTART];
        relay.base[feat::DAYS_SINCE_RESTART] = days;
        relay.base[feat::RELAY_LIFESPAN_DAYS] = days + tail;
    }
}

/// Bounded four-day drift cycle. Returns (bandwidth multiplier offset,
/// latitude shift, longitude shift) of the *position* at day `t`; positions
/// return to zero every other day, so consecutive-day steps alternate in
/// sign and the walk never escapes. The geographic wobble is the same on
/// every excursion while the bandwidth component takes two distinct
/// magnitudes, so day-pair displacements mix soft and stiff motion in
/// exactly two ratios and the stable alignment statistics are two-point
/// distributed.
fn drift_position(t: usize, config: &SyntheticConfig) -> (f64, f64, f64) {
    // Soft steps (relative bandwidth) and stiff wobble (degrees).
    const SOFT: [f64; 2] = [0.061, 0.102];
    let scale = config.drift_scale;
    let (wob_lat, wob_lon) = if config.geo_twin_degeneracy {
        (0.23, 0.23)
    } else {
        (0.175, 0.28)
    };
    match t % 4 {
        1 => (SOFT[0] * scale, wob_lat * scale, wob_lon * scale),
        3 => (SOFT[1] * scale, wob_lat * scale, wob_lon * scale),
        _ => (0.0, 0.0, 0.0),
    }
}

/// Guards ride the common bandwidth drift at half strength while the rest
/// of the population over-reacts, keeping the population-mean step at the
/// nominal size. The guard cluster's stable soft motion is therefore small,
/// which leaves headroom for elastic events to stand out against it.
fn soft_drift_factor(role: Role) -> f64 {
    match role {
        Role::Guard => 0.5,
        _ => 7.0 / 6.0,
    }
}

const BW_FAMILY: [usize; 4] = [
    feat::OBSERVED_BANDWIDTH,
    feat::ADVERTISED_BANDWIDTH,
    feat::BANDWIDTH_RATE,
    feat::BANDWIDTH_BURST,
];

fn frame_features(
    relay: &BaseRelay,
    t: usize,
    config: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut f = relay.base.clone();
    let frozen = config.jitter == 0.0 && config.drift_scale == 0.0;
    if frozen {
        return f;
    }

    // Calendar aging.
    f[feat::DAYS_SINCE_RESTART] += t as f64;
    f[feat::RELAY_LIFESPAN_DAYS] += t as f64;

    // Common bounded drift.
    let (bw_off, lat_off, lon_off) = drift_position(t, config);
    let m = 1.0 + bw_off * soft_drift_factor(relay.role);
    for idx in BW_FAMILY {
        f[idx] *= m;
    }
    f[feat::BANDWIDTH_DIFFERENCE] = f[feat::ADVERTISED_BANDWIDTH] - f[feat::OBSERVED_BANDWIDTH];
    f[feat::LATITUDE] += lat_off;
    f[feat::LONGITUDE] += lon_off;

    // Per-relay jitter, kept tiny on the invariant axes so their population
    // centers stay put day to day.
    let j = config.jitter;
    let shared: f64 = StandardNormal.sample(rng);
    let bw_noise = 1.0 + 0.010 * j * shared;
    for idx in BW_FAMILY {
        let extra: f64 = StandardNormal.sample(rng);
        f[idx] = (f[idx] * bw_noise * (1.0 + 0.002 * j * extra)).max(1.0);
    }
    f[feat::BANDWIDTH_DIFFERENCE] = f[feat::ADVERTISED_BANDWIDTH] - f[feat::OBSERVED_BANDWIDTH];
    f[feat::BANDWIDTH_RATIO] = f[feat::ADVERTISED_BANDWIDTH] / f[feat::OBSERVED_BANDWIDTH];
    f[feat::BURST_TO_RATE_RATIO] = f[feat::BANDWIDTH_BURST] / f[feat::BANDWIDTH_RATE];

    let wj: f64 = StandardNormal.sample(rng);
    f[feat::CONSENSUS_WEIGHT] = (f[feat::CONSENSUS_WEIGHT] * (1.0 + 0.015 * j * wj)).max(1e-3);

    for idx in [
        feat::GUARD_PROBABILITY,
        feat::MIDDLE_PROBABILITY,
        feat::EXIT_PROBABILITY,
    ] {
        let pj: f64 = StandardNormal.sample(rng);
        f[idx] = (f[idx] + 0.004 * j * pj).clamp(0.01, 0.97);
    }

    let gj: f64 = StandardNormal.sample(rng);
    f[feat::LATITUDE] += 0.02 * j * gj;
    let gj2: f64 = StandardNormal.sample(rng);
    f[feat::LONGITUDE] += 0.02 * j * gj2;

    for idx in 100..191 {
        let bj: f64 = StandardNormal.sample(rng);
        f[idx] = (f[idx] * (1.0 + 0.02 * j * bj)).max(0.0);
    }
    f
}

fn build_snapshot(
    relays: &[BaseRelay],
    date: NaiveDate,
    t: usize,
    config: &SyntheticConfig,
) -> Result<Snapshot> {
    // The per-frame stream is derived from (seed, t) only, so frames are
    // reproducible independently of any injected events.
    let mut rng = ChaCha8Rng::seed_from_u64(
        config
            .seed
            .wrapping_mul(0x9E3779B97F4A7C15)
            .wrapping_add(t as u64),
    );
    let mut records = Vec::with_capacity(relays.len());
    for relay in relays {
        let features = frame_features(relay, t, config, &mut rng);
        records.push(RelayRecord::from_features(relay.id.clone(), features)?);
    }
    let mut snapshot = Snapshot {
        date,
        relays: records,
    };
    refresh_weight_fractions(&mut snapshot);
    Ok(snapshot)
}

fn refresh_weight_fractions(snapshot: &mut Snapshot) {
    let total: f64 = snapshot.relays.iter().map(|r| r.consensus_weight).sum();
    if total <= 0.0 {
        return;
    }
    for relay in &mut snapshot.relays {
        relay.features[feat::CONSENSUS_WEIGHT_FRACTION] = relay.consensus_weight / total;
    }
}

/// Generates a stable (event-free) run.
pub fn generate_population(config: &SyntheticConfig) -> Result<SyntheticRun> {
    config.validate()?;
    let sigma = (2.0 * config.mean_median_ratio.ln()).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut relays: Vec<BaseRelay> = (0..config.n_relays)
        .map(|i| {
            let role = role_of_index(i, config.n_relays, &config.role_mix);
            sample_relay(i, role, config, sigma, &mut rng)
        })
        .collect();
    assign_fleet_ages(&mut relays, config);

    let mut snapshots = Vec::with_capacity(config.n_windows + 1);
    for t in 0..=config.n_windows {
        let date = config
            .start_date
            .checked_add_days(chrono::Days::new(t as u64))
            .ok_or_else(|| Error::data("window range overflows the calendar"))?;
        snapshots.push(build_snapshot(&relays, date, t, config)?);
    }

    Ok(SyntheticRun {
        config: config.clone(),
        snapshots,
        truth: vec!["NORMAL".to_string(); config.n_windows],
        events: Vec::new(),
    })
}

// ---------------------------------------------------------------------------
// Event injection
// ---------------------------------------------------------------------------

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn feature_iqr(snapshot: &Snapshot, idx: usize) -> f64 {
    let mut values: Vec<f64> = snapshot.relays.iter().map(|r| r.features[idx]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (quantile(&values, 0.75) - quantile(&values, 0.25)).max(1e-9)
}

fn event_rng(run: &SyntheticRun, script: &ScenarioScript) -> ChaCha8Rng {
    let kind_tag = script.kind as u64;
    ChaCha8Rng::seed_from_u64(
        run.config
            .seed
            .wrapping_mul(0xD1B54A32D192ED03)
            .wrapping_add(script.start as u64)
            .wrapping_add(kind_tag << 32),
    )
}

fn mark_truth(truth: &mut [String], script: &ScenarioScript) {
    // Windows overlapping any modified frame, including the recovery pair.
    let last = (script.start + script.duration).min(truth.len().saturating_sub(1));
    for label in truth.iter_mut().take(last + 1).skip(script.start) {
        *label = script.kind.name().to_string();
    }
}

/// Newcomer relays activated by a surge: dormant machines with long process
/// uptimes but no network history, sitting at the bottom of the bandwidth
/// distribution. Their role mix and invariant-axis profiles match the
/// incumbents, so only the soft operational axes and the count medians
/// move.
const SURGE_RAMP_GROWTH: f64 = 0.35;
const SURGE_OBS_RANGE: (f64, f64) = (0.02, 0.06);
const SURGE_DORMANT_AGE_RANGE: (f64, f64) = (400.0, 800.0);
/// Per-window absolute increment of the incumbent guards' load multiplier
/// while a surge is in progress.
const SURGE_LIFT_STEP: f64 = 0.32;

fn surge_relay(
    i: usize,
    n_new: usize,
    frame: usize,
    config: &SyntheticConfig,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<RelayRecord> {
    let role = role_of_index(i, n_new, &config.role_mix);
    // Index 1+i avoids the planted max-bandwidth slot in the sampler.
    let mut proto = sample_relay(1 + i, role, config, sigma, rng);
    let f = &mut proto.base;
    let obs = MEDIAN_BANDWIDTH * rng.random_range(SURGE_OBS_RANGE.0..SURGE_OBS_RANGE.1);
    let advertised = obs * rng.random_range(0.97..1.08);
    let rate = obs * rng.random_range(0.85..1.15);
    let burst = rate * rng.random_range(1.8..2.2);
    f[feat::OBSERVED_BANDWIDTH] = obs;
    f[feat::ADVERTISED_BANDWIDTH] = advertised;
    f[feat::BANDWIDTH_RATE] = rate;
    f[feat::BANDWIDTH_BURST] = burst;
    f[feat::BANDWIDTH_DIFFERENCE] = advertised - obs;
    f[feat::BANDWIDTH_RATIO] = advertised / obs;
    f[feat::BURST_TO_RATE_RATIO] = burst / rate;
    let days = rng.random_range(SURGE_DORMANT_AGE_RANGE.0..SURGE_DORMANT_AGE_RANGE.1);
    f[feat::DAYS_SINCE_RESTART] = days;
    f[feat::RELAY_LIFESPAN_DAYS] = days + 30.0 - 150.0 * (1.0 - rng.random::<f64>()).ln();
    let role_factor = match role {
        Role::Guard => 1.15,
        Role::Middle => 1.0,
        Role::Exit => 1.05,
    };
    f[feat::CONSENSUS_WEIGHT] =
        100.0 * role_factor * (obs / MEDIAN_BANDWIDTH) * rng.random_range(0.9..1.1);
    for j in 0..50 {
        f[100 + j] = obs * (-(j as f64) / 12.0).exp() * rng.random_range(0.7..1.3);
    }
    for j in 0..41 {
        f[150 + j] = obs * 0.8 * (-(j as f64) / 10.0).exp() * rng.random_range(0.7..1.3);
    }
    // Newcomers ride the same common drift as the incumbents on this frame,
    // so the day's soft motion stays population-wide.
    let (bw_off, lat_off, lon_off) = drift_position(frame, config);
    let m = 1.0 + bw_off * soft_drift_factor(role);
    for idx in BW_FAMILY {
        f[idx] *= m;
    }
    f[feat::BANDWIDTH_DIFFERENCE] = f[feat::ADVERTISED_BANDWIDTH] - f[feat::OBSERVED_BANDWIDTH];
    f[feat::LATITUDE] += lat_off;
    f[feat::LONGITUDE] += lon_off;
    RelayRecord::from_features(format!("surge-{frame:03}-{i:05}"), proto.base)
}

fn is_guard_record(relay: &RelayRecord) -> bool {
    relay.role_probs[0] >= relay.role_probs[1] && relay.role_probs[0] >= relay.role_probs[2]
}

/// Applies one scripted event, returning the modified run and any warnings.
/// The input run is not mutated; injections compose by chaining.
pub fn inject_event(
    run: &SyntheticRun,
    script: &ScenarioScript,
) -> Result<(SyntheticRun, Vec<String>)> {
    let n_windows = run.window_count();
    if script.duration == 0 {
        return Err(Error::data("event duration must be at least one window"));
    }
    if script.start + script.duration > n_windows {
        return Err(Error::data(format!(
            "event windows [{}, {}) exceed the run's {} windows",
            script.start,
            script.start + script.duration,
            n_windows
        )));
    }
    let mut out = run.clone();
    out.events.push(script.clone());
    if script.magnitude == 0.0 {
        return Ok((
            out,
            vec![format!(
                "{} magnitude is zero: frames left unchanged",
                script.kind.name()
            )],
        ));
    }
    if script.magnitude < 0.0 {
        return Err(Error::data("event magnitude must be nonnegative"));
    }

    let mut rng = event_rng(run, script);
    let sigma = (2.0 * run.config.mean_median_ratio.ln()).sqrt();
    // Frames modified by an event over windows [start, start+duration):
    // the arrival days start+1 ..= start+duration.
    let first_frame = script.start + 1;
    let last_frame = script.start + script.duration;

    match script.kind {
        EventKind::Surge => {
            // The influx lands at full strength on the first event frame —
            // newcomers must outnumber incumbents for the population median
            // to cross into their zone — and keeps growing afterwards.
            // Incumbent guards simultaneously observe the extra traffic as a
            // climbing load multiplier, so every event window sees a fresh
            // soft displacement of the cluster's gravity center on top of
            // the sustained mass/gravity divergence.
            for frame in first_frame..=last_frame {
                let lift = 1.0 + SURGE_LIFT_STEP * (frame - first_frame + 1) as f64;
                let snapshot = &mut out.snapshots[frame];
                for relay in &mut snapshot.relays {
                    if !is_guard_record(relay) {
                        continue;
                    }
                    for idx in BW_FAMILY {
                        relay.features[idx] *= lift;
                    }
                    relay.features[feat::BANDWIDTH_DIFFERENCE] = relay.features
                        [feat::ADVERTISED_BANDWIDTH]
                        - relay.features[feat::OBSERVED_BANDWIDTH];
                }
                let ramp = 1.0 + SURGE_RAMP_GROWTH * (frame - first_frame) as f64;
                let n_new =
                    (script.magnitude * ramp * run.config.n_relays as f64).ceil() as usize;
                let mut newcomers = Vec::with_capacity(n_new);
                for i in 0..n_new {
                    newcomers.push(surge_relay(i, n_new, frame, &run.config, sigma, &mut rng)?);
                }
                out.snapshots[frame].relays.extend(newcomers);
                refresh_weight_fractions(&mut out.snapshots[frame]);
            }
        }
        EventKind::Fracture => {
            // Displace every relay along the tight invariant axes, in units
            // of each axis's day-0 interquartile range. The displacement is
            // applied to the reported features directly: the event models a
            // reporting-infrastructure rupture, so derived quantities go out
            // of sync with their inputs on purpose.
            let base = &run.snapshots[0];
            let shifts: Vec<(usize, f64)> = run
                .config
                .fracture_axes
                .iter()
                .map(|&idx| (idx, 1.55 * script.magnitude * feature_iqr(base, idx)))
                .collect();
            for frame in first_frame..=last_frame {
                for relay in &mut out.snapshots[frame].relays {
                    for &(idx, delta) in &shifts {
                        relay.features[idx] += delta;
                        if idx == feat::DAYS_SINCE_RESTART {
                            relay.days_since_restart = relay.features[idx];
                        }
                    }
                }
            }
        }
        EventKind::FleetRestart => {
            // The heaviest guards reboot: the operator fleet first (the
            // shared-epoch cohort planted at generation), then — if the
            // magnitude asks for more than the fleet — the next-heaviest
            // young guards. Restarted relays come back with fresh restart
            // ages and fresh traffic estimators, which drops both tight
            // ratios below their population clusters; because the restarted
            // weight is large inside the cluster but the restarted count is
            // small in the population, the cluster's weighted median crosses
            // hard while the global mean barely moves. A fixed share never
            // comes back, leaving the bimodal age forensic behind.
            let base = &run.snapshots[0];
            let mut fleet: Vec<(f64, String)> = Vec::new();
            let mut young: Vec<(f64, String)> = Vec::new();
            for relay in &base.relays {
                if !is_guard_record(relay) {
                    continue;
                }
                let entry = (relay.consensus_weight, relay.id.clone());
                if relay.days_since_restart >= 500.0 {
                    fleet.push(entry);
                } else {
                    young.push(entry);
                }
            }
            let n_guards = fleet.len() + young.len();
            if n_guards == 0 {
                return Err(Error::data("no guard cluster present to restart"));
            }
            let by_weight_desc = |a: &(f64, String), b: &(f64, String)| {
                b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1))
            };
            fleet.sort_by(by_weight_desc);
            young.sort_by(by_weight_desc);
            let take = ((script.magnitude * n_guards as f64).round() as usize).clamp(1, n_guards);
            let mut restarted: Vec<String> = fleet
                .into_iter()
                .chain(young)
                .take(take)
                .map(|(_, id)| id)
                .collect();
            // Deterministic partial shuffle for the return/leave split.
            for i in 0..restarted.len().saturating_sub(1) {
                let j = i + rng.random_range(0..(restarted.len() - i));
                restarted.swap(i, j);
            }
            let n_return = (FLEET_RETURN_SHARE * restarted.len() as f64).round() as usize;
            let mut returning = std::collections::BTreeMap::new();
            let mut leaving = std::collections::BTreeSet::new();
            for (k, id) in restarted.into_iter().enumerate() {
                if k < n_return {
                    let age = rng.random_range(RESTART_AGE_RANGE.0..RESTART_AGE_RANGE.1);
                    let b2r = rng.random_range(RESTART_B2R_RANGE.0..RESTART_B2R_RANGE.1);
                    returning.insert(id, (age, b2r));
                } else {
                    leaving.insert(id);
                }
            }
            for frame in first_frame..out.snapshots.len() {
                let offset = (frame - first_frame) as f64;
                let snapshot = &mut out.snapshots[frame];
                snapshot.relays.retain(|r| !leaving.contains(&r.id));
                for relay in &mut snapshot.relays {
                    if let Some(&(age, b2r)) = returning.get(&relay.id) {
                        let f = &mut relay.features;
                        f[feat::DAYS_SINCE_RESTART] = age + offset;
                        relay.days_since_restart = age + offset;
                        f[feat::BANDWIDTH_BURST] = f[feat::BANDWIDTH_RATE] * b2r;
                        f[feat::BURST_TO_RATE_RATIO] = b2r;
                        f[feat::ADVERTISED_BANDWIDTH] = f[feat::OBSERVED_BANDWIDTH];
                        f[feat::BANDWIDTH_RATIO] = 1.0;
                        f[feat::BANDWIDTH_DIFFERENCE] = 0.0;
                    }
                }
                refresh_weight_fractions(snapshot);
            }
        }
        EventKind::Fragmentation => {
            // Push a small fraction of relays to extreme values on non-clean
            // traffic-history features; clean features stay untouched, so
            // centers do not move while the population splits energetically.
            let fraction = script.magnitude.min(0.5);
            let base = &run.snapshots[0];
            let blast: Vec<(usize, f64)> = (100..124)
                .map(|idx| (idx, 40.0 * feature_iqr(base, idx)))
                .collect();
            for frame in first_frame..=last_frame {
                let snapshot = &mut out.snapshots[frame];
                let n = snapshot.relays.len();
                let count = ((fraction * n as f64).round() as usize).max(1);
                // Deterministic choice: spread over the population.
                let step = (n / count).max(1);
                for k in 0..count {
                    let relay = &mut snapshot.relays[(k * step) % n];
                    for &(idx, delta) in &blast {
                        relay.features[idx] += delta;
                    }
                }
            }
        }
        EventKind::Reorganization => {
            // One-day soft shift: the guard cluster's bandwidth family moves
            // coherently while the invariant axes stay put (the common
            // multiplier cancels in both tight ratios).
            let m = 1.0 + script.magnitude;
            for frame in first_frame..=last_frame {
                let snapshot = &mut out.snapshots[frame];
                for relay in &mut snapshot.relays {
                    if !is_guard_record(relay) {
                        continue;
                    }
                    for idx in BW_FAMILY {
                        relay.features[idx] *= m;
                    }
                    relay.features[feat::BANDWIDTH_DIFFERENCE] = relay.features
                        [feat::ADVERTISED_BANDWIDTH]
                        - relay.features[feat::OBSERVED_BANDWIDTH];
                }
                refresh_weight_fractions(snapshot);
            }
        }
    }

    mark_truth(&mut out.truth, script);
    Ok((out, Vec::new()))
}
