use flatres::experiments::{
    closed_loop_flat, closed_loop_nmpc, diffeo_for, initial_state, open_loop, truth_diffeo,
    ModelKind, ScenarioConfig,
};
use flatres::nmpc::{NmpcController, OcpConfig};
use flatres::residual::{load_model, save_model};
use flatres::sim::{DerivativeSource, Reference};
use flatres::verify::random_network_residual;
use flatres::{Jet, QuadrotorParams};
use proptest::prelude::*;

fn short(duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        duration,
        ..ScenarioConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // state from flat outputs, then flat outputs back from the state
    #[test]
    fn flat_map_round_trip(
        p in prop::array::uniform2(-3.0..3.0f64),
        d in prop::array::uniform6(-2.0..2.0f64),
    ) {
        let diffeo = diffeo_for(QuadrotorParams::default(), random_network_residual(3, 16)).unwrap();
        let y = [
            Jet::lift(p[0], &[d[0], d[1], d[2]]).unwrap(),
            Jet::lift(p[1], &[d[3], d[4], d[5]]).unwrap(),
        ];
        let x = diffeo.state_from_flat(&y).unwrap();
        let back = diffeo.flat_derivatives_from_state(&x).unwrap();
        for (a, b) in y.iter().zip(&back) {
            for k in 0..=3 {
                let scale = a.derivative(k).abs().max(1.0);
                prop_assert!((a.derivative(k) - b.derivative(k)).abs() < 1e-9 * scale);
            }
        }
    }
}

#[test]
fn saved_model_reproduces_evaluation() {
    let params = QuadrotorParams::default();
    let residual = random_network_residual(11, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&residual, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let scenario = short(3.0);
    let run = |res| {
        let d = diffeo_for(params, res).unwrap();
        open_loop(&params, &d, ModelKind::Learned, Some(11), &Reference::circle(), &scenario).0
    };
    let (a, b) = (run(residual), run(loaded));
    assert!(a.error.is_some());
    assert_eq!(a.error.unwrap().to_bits(), b.error.unwrap().to_bits());
}

#[test]
fn nmpc_with_exact_model_starts_on_the_reference() {
    let params = QuadrotorParams::default();
    let reference = Reference::circle();
    let ctrl = NmpcController::new(truth_diffeo(params).unwrap(), reference, OcpConfig::default()).unwrap();
    let x0 = initial_state(&params, &reference).unwrap();
    let sol = ctrl.solve(0.0, &x0, false).unwrap();
    assert!(sol.converged);
    assert!(sol.max_defect < 1e-8, "{}", sol.max_defect);
    // the cold start already follows the reference, so the optimum barely moves
    assert!(sol.cost < 1e-6, "{}", sol.cost);
}

#[test]
fn nmpc_tracks_with_exact_model() {
    let params = QuadrotorParams::default();
    let (rec, traj) = closed_loop_nmpc(
        &params,
        &truth_diffeo(params).unwrap(),
        ModelKind::Truth,
        None,
        &Reference::lemniscate(),
        &short(1.0),
    );
    assert!(rec.failure.is_none(), "{rec:?}");
    // the input penalty leaves a few millimetres of lag on the lemniscate
    let error = rec.error.unwrap();
    assert!(error < 5e-3, "{error}");
    let summary = rec.nmpc.unwrap();
    assert_eq!(summary.solves, 100);
    assert_eq!(summary.not_converged, 0);
    assert_eq!(rec.solves.len(), 100);
    assert_eq!(traj.unwrap().len(), 101);
}

#[test]
fn observer_derivatives_track_the_circle() {
    let params = QuadrotorParams::default();
    let scenario = ScenarioConfig {
        derivative_source: DerivativeSource::Observer,
        ..short(5.0)
    };
    let (rec, _) = closed_loop_flat(
        &params,
        &truth_diffeo(params).unwrap(),
        ModelKind::Truth,
        None,
        &Reference::circle(),
        &scenario,
    );
    let error = rec.error.unwrap();
    assert!(error < 5e-3, "{error}");
}
