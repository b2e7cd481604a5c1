// Scratch diagnostic: trains the observers on a stable synthetic run, then
// prints per-window channel values and classifications for each scripted
// scenario. Used to tune the generator against the gate thresholds.
use geomon::cdae::CdaeConfig;
use geomon::gates::GateConfig;
use geomon::grbm::GrbmConfig;
use geomon::population::Role;
use geomon::schema::FeatureSchema;
use geomon::sweep::{
    build_frames, fit_scalers, fit_stable_baselines, run_sweep, sweep_channels, train_observers,
    SweepConfig,
};
use geomon::synth::{
    generate_population, inject_event, EventKind, ScenarioScript, SyntheticConfig,
};

fn main() {
    let schema = FeatureSchema::default_manifest();
    let config = SyntheticConfig {
        n_relays: 900,
        n_windows: 14,
        seed: 33,
        ..SyntheticConfig::default()
    };
    let stable = generate_population(&config).unwrap();
    let scalers = fit_scalers(&stable.snapshots, &schema).unwrap();
    let frames = build_frames(&stable.snapshots, &scalers, &schema).unwrap();
    let cdae_cfg = CdaeConfig {
        epochs: 8,
        batch_size: 256,
        ..CdaeConfig::default()
    };
    let grbm_cfg = GrbmConfig {
        epochs: 6,
        ..GrbmConfig::default()
    };
    let obs = train_observers(&frames, &cdae_cfg, &grbm_cfg, &schema.hash_hex()).unwrap();

    let windows = sweep_channels(&obs.cdae, &obs.grbm, &frames, &SweepConfig::default()).unwrap();
    let channels: Vec<_> = windows.iter().map(|w| w.channels.clone()).collect();
    let (baselines, gate) = fit_stable_baselines(&channels, &GateConfig::default()).unwrap();
    println!(
        "baselines: global {:.3}/{:.3} guard {:.3}/{:.3} exit {:.3}/{:.3}",
        baselines.global.mean,
        baselines.global.std,
        baselines.guard.mean,
        baselines.guard.std,
        baselines.exit.mean,
        baselines.exit.std
    );
    println!(
        "shift medians: guard {:.3} exit {:.3}",
        gate.shift_median[&Role::Guard], gate.shift_median[&Role::Exit]
    );
    let sweep_cfg = SweepConfig {
        gate,
        baselines,
        ..SweepConfig::default()
    };

    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:7.2}"),
        None => "      -".to_string(),
    };

    let scenarios: [(Option<(EventKind, usize)>, &str); 6] = [
        (None, "STABLE"),
        (Some((EventKind::Surge, 3)), "SURGE"),
        (Some((EventKind::Fracture, 2)), "FRACTURE"),
        (Some((EventKind::FleetRestart, 2)), "FLEET_RESTART"),
        (Some((EventKind::Fragmentation, 2)), "FRAGMENTATION"),
        (Some((EventKind::Reorganization, 1)), "REORGANIZATION"),
    ];
    for (scenario, tag) in scenarios {
        let run = match scenario {
            Some((kind, duration)) => {
                let script = ScenarioScript::with_defaults(kind, 5, duration);
                inject_event(&stable, &script).unwrap().0
            }
            None => stable.clone(),
        };
        let frames = build_frames(&run.snapshots, &scalers, &schema).unwrap();
        let records =
            run_sweep(&obs.cdae, &obs.grbm, &frames, &sweep_cfg, Some(&run.truth)).unwrap();
        println!("=== {tag}");
        println!(
            "  w  truth           label               cv     dmg  z_glob z_guard  sh_g   theta  rho1  fired"
        );
        for (w, r) in records.iter().enumerate() {
            println!(
                " {w:2}  {:<15} {:<17} {} {} {} {} {} {} {}  {}",
                r.truth.as_deref().unwrap_or("-"),
                r.label.name(),
                fmt(r.cv),
                fmt(r.delta_mg),
                fmt(r.z_global),
                fmt(r.z_guard),
                fmt(r.shift_guard),
                fmt(r.theta_deg),
                fmt(r.rho1),
                r.fired.join("+"),
            );
        }
    }
}
