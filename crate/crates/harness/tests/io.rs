//! CSV logs and traces survive a write/read cycle bit for bit.

use grfmhe_harness::bench::{estimate, simulate};
use grfmhe_harness::config::{EstimatorKind, ScenarioConfig};
use grfmhe_harness::io::{load_trace, read_log, save_trace, write_log};

fn short() -> ScenarioConfig {
    ScenarioConfig::from_toml("[scenario]\nduration = 1.0\nseed = 9\n").unwrap()
}

#[test]
fn log_round_trip_is_exact() {
    let (model, log) = simulate(&short()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_log(dir.path(), &log).unwrap();
    let back = read_log(dir.path(), model.gravity).unwrap();
    assert_eq!(back, log);
}

#[test]
fn trace_round_trip_is_exact() {
    let config = short();
    let (model, log) = simulate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for trace in estimate(&config, &model, &log, &EstimatorKind::ALL, false).unwrap() {
        assert!(trace.fault.is_none());
        save_trace(dir.path(), &trace).unwrap();
        let back = load_trace(dir.path(), &trace.name).unwrap();
        assert_eq!(back.rows.len(), trace.rows.len());
        for (a, b) in back.rows.iter().zip(&trace.rows) {
            // NaN marks fields an estimator does not produce, so compare bit patterns.
            let bits = |r: &grfmhe_harness::TraceRow| {
                let mut v: Vec<u64> = [r.t, r.position.x, r.position.y, r.velocity.x, r.velocity.y, r.bias.x, r.bias.y, r.kkt, r.step_ms]
                    .iter()
                    .map(|x| x.to_bits())
                    .collect();
                v.extend(r.forces.iter().flat_map(|f| [f.x.to_bits(), f.y.to_bits()]));
                v
            };
            assert_eq!(bits(a), bits(b));
            assert_eq!((a.status, a.iterations, &a.contacts), (b.status, b.iterations, &b.contacts));
        }
    }
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let config = short();
    let (model, log) = simulate(&config).unwrap();
    let a = estimate(&config, &model, &log, &EstimatorKind::ALL, true).unwrap();
    let b = estimate(&config, &model, &log, &EstimatorKind::ALL, false).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.name, y.name);
        for (r, s) in x.rows.iter().zip(&y.rows) {
            assert_eq!(r.forces, s.forces);
        }
    }
}

#[test]
fn shipped_configs_match_builtin_defaults() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let config = ScenarioConfig::load(&root.join("configs/default.toml")).unwrap();
    assert_eq!(config, ScenarioConfig::default());
    let model = grfmhe_harness::config::ModelFile::load(&root.join("configs/reference_biped.toml")).unwrap();
    assert_eq!(model, grfmhe::dynamics::RobotModel::reference_biped());
}

#[test]
fn config_sections_reject_unknown_keys() {
    for text in ["[mhe]\nwindow = 4\n", "[mhe.noise]\nforce = 1.0\n", "[gait]\nheight = 0.4\n", "[extra]\n"] {
        assert!(ScenarioConfig::from_toml(text).is_err(), "{text}");
    }
    assert!(ScenarioConfig::from_toml("[scenario]\nestimators = [\"mhe\", \"mhe\"]\n").is_err());
    assert!(ScenarioConfig::from_toml("[scenario]\nduration = -1.0\n").is_err());
    let c = ScenarioConfig::from_toml("[scenario]\ngait = \"stand\"\n[gait]\nbody_height = 0.42\n").unwrap();
    assert!(c.gait_params().is_standing());
    assert_eq!(c.gait_params().body_height, 0.42);
}
