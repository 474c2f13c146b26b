#![allow(dead_code)]

use std::path::Path;

use conformal_teleop::envs::Catalog;
use conformal_teleop::netcore::{train_quantile, Sample};
use conformal_teleop::{Mlp, QuantileModel, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use teleopd::session::Registry;

/// Writes two small models into `dir`:
/// `arm-zero` maps a zero input to a zero action anywhere on the arm, and
/// `grid-toy` is a briefly trained grid-precision controller.
pub fn write_models(dir: &Path) -> Registry {
    let cat = Catalog::builtin();
    let reg = Registry::new(cat.clone(), dir);

    let env = reg.env("arm-goal").unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let samples: Vec<Sample<f64>> = (0..200)
        .map(|_| {
            let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            x.extend([0.0, 0.0]);
            Sample::new(x, vec![0.0; 3])
        })
        .collect();
    // Per-sample steps, then full-batch ones so SGD stops rattling around zero.
    let mut net = Mlp::init(&[5, 16, 6, 9], 1).unwrap();
    for (epochs, batch_size, learning_rate) in [(300, 1, 1e-2), (2000, 200, 1e-2)] {
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed: 1,
            ..TrainConfig::default()
        };
        net = train_quantile(net, &samples, &config).unwrap().0;
    }
    let m = QuantileModel::new(net, env.dims, Some(env.input_scale.clone()), 0.1, 1).unwrap();
    m.with_env(env.name).save(dir.join("arm-zero.json")).unwrap();

    let env = reg.env("grid-precision").unwrap();
    let triples = cat.train_set("grid-precision").unwrap().triples().unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 1,
        seed: 2,
        ..TrainConfig::default()
    };
    let (m, _) = QuantileModel::train(&triples, env.dims, Some(env.input_scale.clone()), &config).unwrap();
    m.with_env(env.name).save(dir.join("grid-toy.json")).unwrap();
    reg
}

pub fn reset(id: u64, scenario: &str, model: &str, mode: &str) -> String {
    format!(r#"{{"id":{id},"type":"reset","scenario":"{scenario}","model":"{model}","mode":"{mode}"}}"#)
}

pub fn input(id: u64, h: &[f64]) -> String {
    serde_json::json!({"id": id, "type": "input", "h": h}).to_string()
}

pub fn label(id: u64, a: &[f64]) -> String {
    serde_json::json!({"id": id, "type": "label", "a": a}).to_string()
}

pub fn probe(id: u64, h: &[f64]) -> String {
    serde_json::json!({"id": id, "type": "probe", "h": h}).to_string()
}

/// A registry over models trained once per test binary.
pub fn shared_registry() -> Registry {
    use std::sync::OnceLock;
    static DIR: OnceLock<std::path::PathBuf> = OnceLock::new();
    let dir = DIR.get_or_init(|| {
        let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("teleopd-models-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        write_models(&d);
        d
    });
    Registry::new(Catalog::builtin(), dir)
}
