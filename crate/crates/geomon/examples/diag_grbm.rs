// Scratch probe: decomposes scenario displacement vectors into the trained
// stiff/soft split, per clean feature axis.
use geomon::cdae::CdaeConfig;
use geomon::ejt::{eigen_split, metric_tensor, soft_alignment, DEFAULT_TRACE_MASS};
use geomon::grbm::GrbmConfig;
use geomon::population::{assign_clusters, cluster_centers, Role};
use geomon::schema::FeatureSchema;
use geomon::sweep::{build_frames, fit_scalers, train_observers};
use geomon::synth::{
    generate_population, inject_event, EventKind, ScenarioScript, SyntheticConfig,
};
use nalgebra::DVector;

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
    let names: Vec<&str> = schema
        .clean_indices
        .iter()
        .map(|&i| schema.names[i].as_str())
        .collect();

    let centers_at = |frame_idx: usize, run: &geomon::synth::SyntheticRun| {
        let f = build_frames(
            &run.snapshots[frame_idx..frame_idx + 1],
            &scalers,
            &schema,
        )
        .unwrap();
        let (roles, _) = assign_clusters(&f[0].relays);
        cluster_centers(&f[0], &roles).unwrap()
    };

    for (kind, duration) in [
        (EventKind::Surge, 3usize),
        (EventKind::FleetRestart, 2),
        (EventKind::Reorganization, 1),
    ] {
        println!("######## {:?}", kind);
        let script = ScenarioScript::with_defaults(kind, 5, duration);
        let (run, _) = inject_event(&stable, &script).unwrap();
        probe(&run, &obs, &scalers, &schema, &names, &centers_at);
    }

    // Fragmentation: free-energy spread on the blasted frame.
    let script = ScenarioScript::with_defaults(EventKind::Fragmentation, 5, 2);
    let (frag, _) = inject_event(&stable, &script).unwrap();
    for frame_idx in [5usize, 6] {
        let f = build_frames(&frag.snapshots[frame_idx..frame_idx + 1], &scalers, &schema)
            .unwrap();
        let sig = obs.grbm.fragmentation_cv(&f[0]).unwrap();
        let fmax = sig
            .free_energies
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let above = sig
            .free_energies
            .iter()
            .filter(|v| **v > sig.mean + 5.0 * sig.std)
            .count();
        println!(
            "frag frame {frame_idx}: cv {:.3} mean {:.1} std {:.1} max {:.1} n>5sigma {above}",
            sig.cv, sig.mean, sig.std, fmax
        );
    }
}

fn probe(
    run: &geomon::synth::SyntheticRun,
    obs: &geomon::sweep::TrainedObservers,
    _scalers: &geomon::sweep::FittedScalers,
    _schema: &FeatureSchema,
    names: &[&str],
    centers_at: &dyn Fn(usize, &geomon::synth::SyntheticRun) -> geomon::population::ClusterCenters,
) {
    for w in [4usize, 5, 6] {
        let c_prev = centers_at(w, run);
        let c_curr = centers_at(w + 1, run);
        for (scope, origin, target) in [
            (
                "guard",
                c_prev.weighted[&Role::Guard].clone(),
                c_curr.weighted[&Role::Guard].clone(),
            ),
            (
                "global",
                c_prev.global_mean.clone(),
                c_curr.global_mean.clone(),
            ),
        ] {
            let delta: DVector<f64> = &target - &origin;
            let j = obs.cdae.encoder_jacobian(&origin).unwrap();
            let m = metric_tensor(&j).unwrap();
            let split = eigen_split(&m, DEFAULT_TRACE_MASS, origin.as_slice(), scope).unwrap();
            let alignment = soft_alignment(&delta, &split).unwrap();
            let alpha = alignment.map(|a| a.alpha).unwrap_or(f64::NAN);
            // Stiff residual per axis: component of delta that the stiff
            // projector keeps.
            let k = split.k;
            let mut stiff_vec = DVector::zeros(delta.len());
            for c in 0..k {
                let v = split.eigenvectors.column(c);
                let coef = v.dot(&delta);
                stiff_vec += v * coef;
            }
            println!(
                "window {w} {scope}: |dx| {:.3} alpha {alpha:.3} stiff edge |.| {:.3} (k={k})",
                delta.norm(),
                stiff_vec.norm()
            );
            let mut rows: Vec<(f64, usize)> = (0..delta.len())
                .map(|i| (delta[i].abs().max(stiff_vec[i].abs()), i))
                .collect();
            rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            for (mag, i) in rows.iter().take(17) {
                if *mag < 5e-3 {
                    break;
                }
                println!(
                    "    {:<28} dx {:+8.3}  stiff part {:+8.3}  soft part {:+8.3}",
                    names[*i],
                    delta[*i],
                    stiff_vec[*i],
                    delta[*i] - stiff_vec[*i]
                );
            }
        }
    }
}
