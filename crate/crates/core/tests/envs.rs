use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use conformal_teleop::envs::arm::{plan_path, wrap_angle, ArmBehaviour, PlanarArm, Pose};
use conformal_teleop::envs::catalog::Generator;
use conformal_teleop::envs::grid::{gen_grid_precision, GridBehaviour, GridMap, GRID_SIZE};
use conformal_teleop::envs::{label_lowdim, Catalog, InputScheme, ScenarioDataset, Split, Trajectory};
use conformal_teleop::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn split(profile: &str, scheme: &str, n: usize, seed: u64) -> Split {
    Split {
        profile: profile.into(),
        scheme: scheme.into(),
        n,
        seed,
        modes: None,
    }
}

fn by_tag(ds: &ScenarioDataset) -> BTreeMap<&str, Vec<&Trajectory>> {
    let mut out: BTreeMap<&str, Vec<&Trajectory>> = BTreeMap::new();
    for t in &ds.trajectories {
        out.entry(t.tag.as_str()).or_default().push(t);
    }
    out
}

#[test]
fn preference_set_is_balanced_and_branches() {
    let cat = Catalog::builtin();
    let ds = cat.train_set("grid-preference").unwrap();
    assert_eq!(ds.trajectories.len(), 48);
    let modes = by_tag(&ds);
    assert_eq!(modes.keys().copied().collect::<Vec<_>>(), ["down", "up"]);
    assert!(modes.values().all(|v| v.len() == 24));

    let env = cat.env("grid-preference", &InputScheme::advance()).unwrap();
    let goal = env.goals[0].1.clone();
    let mut branch_moves: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for t in &ds.trajectories {
        assert_eq!(t.states.last().unwrap(), &goal);
        assert!(t.inputs.iter().all(|h| h == &vec![1.0]));
        assert!(t.actions.iter().flatten().all(|a| [-1.0, 0.0, 1.0].contains(a)));
        let at = t.states.iter().position(|s| s == &vec![9.0, 12.0]).expect("passes the branch cell");
        branch_moves.entry(t.tag.as_str()).or_default().push(t.actions[at][1]);
    }
    assert!(branch_moves["up"].iter().all(|dy| *dy == 1.0));
    assert!(branch_moves["down"].iter().all(|dy| *dy == -1.0));
}

fn precision_parts(cat: &Catalog) -> (GridMap, conformal_teleop::envs::grid::PrecisionLayout) {
    match &cat.scenario("grid-precision").unwrap().generator {
        Generator::GridPrecision { map, layout } => (GridMap::from_layout(&cat.maps[map]).unwrap(), layout.clone()),
        other => panic!("unexpected generator {other:?}"),
    }
}

#[test]
fn noiseless_precision_paths_are_shortest() {
    let cat = Catalog::builtin();
    let (map, layout) = precision_parts(&cat);
    let behaviour = GridBehaviour {
        noise_sigma: 0.0,
        detour: 0,
    };
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
    let trajs = gen_grid_precision(&map, &layout, 30, behaviour, &mut rng).unwrap();
    for t in trajs {
        let start = (t.states[0][0] as i32, t.states[0][1] as i32);
        let chebyshev = (layout.mouth.0 - start.0).abs().max((layout.mouth.1 - start.1).abs()) as usize;
        let mouth = t
            .states
            .iter()
            .position(|s| s == &vec![layout.mouth.0 as f64, layout.mouth.1 as f64])
            .unwrap();
        assert_eq!(mouth, chebyshev);
        let tail = (map.goal.1 - layout.mouth.1) as usize;
        assert_eq!(t.steps(), chebyshev + tail);
    }
}

#[test]
fn tunnel_is_deterministic_and_open_region_is_not() {
    let cat = Catalog::builtin();
    let (_, layout) = precision_parts(&cat);
    let ds = cat.train_set("grid-precision").unwrap();
    assert_eq!(ds.trajectories.len(), 120);
    let mut per_cell: BTreeMap<(i32, i32), Vec<[f64; 2]>> = BTreeMap::new();
    for t in &ds.trajectories {
        for (s, a) in t.states.iter().zip(&t.actions) {
            per_cell
                .entry((s[0] as i32, s[1] as i32))
                .or_default()
                .push([a[0], a[1]]);
        }
    }
    let variance = |acts: &[[f64; 2]]| -> f64 {
        let n = acts.len() as f64;
        (0..2)
            .map(|d| {
                let m = acts.iter().map(|a| a[d]).sum::<f64>() / n;
                acts.iter().map(|a| (a[d] - m).powi(2)).sum::<f64>() / n
            })
            .sum()
    };
    let (mut open, mut tunnel) = (Vec::new(), Vec::new());
    for (cell, acts) in &per_cell {
        if acts.len() < 2 {
            continue;
        }
        if layout.tunnel.contains(*cell) {
            assert!(acts.iter().all(|a| a == &acts[0]), "tunnel cell {cell:?} varies");
            tunnel.push(variance(acts));
        } else {
            open.push(variance(acts));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(!tunnel.is_empty() && !open.is_empty());
    assert!(mean(&open) > mean(&tunnel), "open {} tunnel {}", mean(&open), mean(&tunnel));
}

#[test]
fn grid_dynamics_stay_on_the_board() {
    let cat = Catalog::builtin();
    let env = cat.env("grid-precision", &InputScheme::advance()).unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
    let mut s = env.start.clone();
    for _ in 0..2000 {
        let a = [rng.random_range(-1.4..1.4), rng.random_range(-1.4..1.4)];
        s = env.step(&s, &a).unwrap();
        assert!(s.iter().all(|v| (0.0..=(GRID_SIZE - 1) as f64).contains(v)));
    }
    assert!(env.step(&s, &[f64::NAN, 0.0]).is_err());
    assert!(env.step(&s, &[1.0]).is_err());
}

#[test]
fn fk_examples() {
    let arm = PlanarArm::default();
    let (x, y) = arm.fk(&[0.0, 0.0, 0.0]).unwrap();
    assert_eq!((x, y), (3.0, 0.0));
    let (x, y) = arm.fk(&[FRAC_PI_2, 0.0, 0.0]).unwrap();
    assert!(x.abs() < 1e-15 && (y - 3.0).abs() < 1e-15);
    assert!(arm.fk(&[0.0, 0.0]).is_err());
}

proptest! {
    #[test]
    fn fk_matches_per_joint_accumulation(
        q in prop::collection::vec(-PI..PI, 3),
        links in prop::collection::vec(0.2f64..2.0, 3),
    ) {
        let arm = PlanarArm { links: [links[0], links[1], links[2]] };
        let (x, y) = arm.fk(&q).unwrap();
        // Walk the chain joint by joint.
        let (mut px, mut py, mut heading) = (0.0, 0.0, 0.0);
        for i in 0..3 {
            heading += q[i];
            px += links[i] * heading.cos();
            py += links[i] * heading.sin();
        }
        prop_assert!((x - px).abs() < 1e-12 && (y - py).abs() < 1e-12);
    }

    #[test]
    fn arm_dynamics_wrap_angles(
        q in prop::collection::vec(-PI..PI, 3),
        a in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let next = PlanarArm::default().step(&q, &a);
        prop_assert!(next.iter().all(|v| (-PI..=PI).contains(v)));
        for d in 0..3 {
            prop_assert!(wrap_angle(next[d] - q[d] - a[d]).abs() < 1e-9);
        }
    }
}

fn ee_dist(arm: &PlanarArm, q: &[f64], goal: &[f64]) -> f64 {
    let (x, y) = arm.fk(q).unwrap();
    ((x - goal[0]).powi(2) + (y - goal[1]).powi(2)).sqrt()
}

#[test]
fn goal_reaching_demonstrations() {
    let cat = Catalog::builtin();
    let arm = cat.planar_arm();
    let env = cat.env("arm-goal", &InputScheme::heuristic_xy()).unwrap();
    let goals: BTreeMap<&str, &Vec<f64>> = env.goals.iter().map(|(n, g)| (n.as_str(), g)).collect();

    let ds = cat.train_set("arm-goal").unwrap();
    assert_eq!(ds.trajectories.len(), 120);
    let modes = by_tag(&ds);
    assert_eq!(modes["red"].len(), 60);
    assert_eq!(modes["blue"].len(), 60);
    for t in &ds.trajectories {
        let g = goals[t.tag.as_str()];
        let d: Vec<f64> = t.states.iter().map(|q| ee_dist(&arm, q, g)).collect();
        assert!(*d.last().unwrap() < 0.05);
        assert!(d.windows(2).all(|w| w[1] < w[0]), "expert path is not direct");
    }

    let detour = cat.profiles.arm["indirect"].detour;
    let indirect = cat.generate("arm-goal", &split("indirect", "heuristic_xy", 20, 77)).unwrap();
    for t in &indirect.trajectories {
        let g = goals[t.tag.as_str()];
        let d: Vec<f64> = t.states.iter().map(|q| ee_dist(&arm, q, g)).collect();
        assert!(*d.last().unwrap() < 0.05);
        assert!(d.windows(2).any(|w| w[1] - w[0] > detour / 2.0));
    }
}

/// Sum of squared distances to the nearest of `k` centroids after Lloyd iterations.
fn kmeans_inertia(points: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    // Farthest-point seeding keeps this deterministic.
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![points[0].clone()];
    while centers.len() < k {
        let far = points
            .iter()
            .max_by(|a, b| {
                let da = centers.iter().map(|c| dist2(a, c)).fold(f64::INFINITY, f64::min);
                let db = centers.iter().map(|c| dist2(b, c)).fold(f64::INFINITY, f64::min);
                da.total_cmp(&db)
            })
            .unwrap();
        centers.push(far.clone());
    }
    let mut labels = vec![0; points.len()];
    for _ in 0..50 {
        for (i, p) in points.iter().enumerate() {
            labels[i] = (0..k).min_by(|a, b| dist2(p, &centers[*a]).total_cmp(&dist2(p, &centers[*b]))).unwrap();
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            if !members.is_empty() {
                for d in 0..center.len() {
                    center[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                }
            }
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, l)| dist2(p, &centers[*l])).sum();
    (inertia, labels)
}

#[test]
fn grasp_endpoints_form_two_clusters() {
    let cat = Catalog::builtin();
    let ds = cat.train_set("arm-grasp").unwrap();
    assert_eq!(ds.trajectories.len(), 14);
    let ends: Vec<Vec<f64>> = ds.trajectories.iter().map(|t| t.states.last().unwrap().clone()).collect();
    let (one, _) = kmeans_inertia(&ends, 1);
    let (two, labels) = kmeans_inertia(&ends, 2);
    assert!(two / one < 0.01, "inertia ratio {}", two / one);
    for (t, l) in ds.trajectories.iter().zip(&labels) {
        let first = ds.trajectories.iter().zip(&labels).find(|(u, _)| u.tag == t.tag).unwrap().1;
        assert_eq!(l, first);
    }
    assert_eq!(by_tag(&ds).values().map(Vec::len).collect::<Vec<_>>(), [7, 7]);
}

#[test]
fn precision_jitter_decays_near_target() {
    let cat = Catalog::builtin();
    let behaviour = cat.profiles.arm["low_precision"];
    assert!(behaviour.decay_near_target);
    let (start, goal) = (Pose { x: 0.0, y: 2.2, phi: FRAC_PI_2 }, Pose { x: 1.45, y: 0.55, phi: -PI / 4.0 });
    let clean = plan_path(start, goal, 20, &ArmBehaviour::direct(), &mut Xoshiro256PlusPlus::seed_from_u64(0));
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
    let (mut early, mut late) = (0.0, 0.0);
    for _ in 0..500 {
        let p = plan_path(start, goal, 20, &behaviour, &mut rng);
        early += (p[1].x - clean[1].x).powi(2) + (p[1].y - clean[1].y).powi(2);
        late += (p[19].x - clean[19].x).powi(2) + (p[19].y - clean[19].y).powi(2);
        assert_eq!(p[20], clean[20]);
    }
    assert!(late.sqrt() < 0.25 * early.sqrt(), "late {late} early {early}");
}

#[test]
fn label_examples() {
    let cat = Catalog::builtin();
    let arm = cat.planar_arm();
    let env = cat.env("arm-goal", &InputScheme::heuristic_xy()).unwrap();
    let poses: Vec<Pose> = (0..5)
        .map(|k| Pose {
            x: 1.0 + 0.1 * k as f64,
            y: 1.0,
            phi: 0.0,
        })
        .collect();
    let t = arm.track(&poses).unwrap();

    let h = label_lowdim(&env, &t, &InputScheme::heuristic_xy(), 0).unwrap();
    for v in &h {
        assert!((v[0] - 1.0).abs() < 1e-9 && v[1].abs() < 1e-9, "{v:?}");
    }
    let quarter = InputScheme::displacement("quarter", 90.0, 1.0, 0.0);
    for v in label_lowdim(&env, &t, &quarter, 0).unwrap() {
        assert!(v[0].abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
    }
    let plain = InputScheme::displacement("noisy_human(plain)", 0.0, 1.0, 0.0);
    assert_eq!(label_lowdim(&env, &t, &plain, 9).unwrap(), h);

    let noisy = InputScheme::noisy_human(3).unwrap();
    assert_eq!(label_lowdim(&env, &t, &noisy, 4).unwrap(), label_lowdim(&env, &t, &noisy, 4).unwrap());
    assert_ne!(label_lowdim(&env, &t, &noisy, 4).unwrap(), label_lowdim(&env, &t, &noisy, 5).unwrap());

    let short = Trajectory {
        states: vec![t.states[0].clone()],
        ..Trajectory::default()
    };
    assert!(label_lowdim(&env, &short, &noisy, 0).is_err());
}

#[test]
fn every_catalog_split_replays_and_is_deterministic() {
    let cat = Catalog::builtin();
    for id in cat.scenario_ids() {
        let s = cat.scenario(id).unwrap();
        for sp in [&s.train, &s.calib] {
            let ds = cat.generate(id, sp).unwrap();
            let env = cat.env(id, &sp.scheme.parse().unwrap()).unwrap();
            for t in &ds.trajectories {
                env.replay(t).unwrap();
                assert!(env.action_matches_difference(t));
                assert_eq!(t.inputs.len(), t.actions.len());
                for q in &t.states {
                    if env.dims.n_s == 3 {
                        assert!(q.iter().all(|v| (-PI..=PI).contains(v)));
                    }
                }
            }
            assert_eq!(ds, cat.generate(id, sp).unwrap());
        }
    }
}

#[test]
fn train_and_calibration_splits_are_disjoint() {
    let cat = Catalog::builtin();
    for id in cat.scenario_ids() {
        let train = cat.train_set(id).unwrap();
        let calib = cat.calib_set(id).unwrap();
        let seen: Vec<&Vec<Vec<f64>>> = train.trajectories.iter().map(|t| &t.states).collect();
        let shared = calib.trajectories.iter().filter(|t| seen.contains(&&t.states)).count();
        // Noiseless grid routes can coincide by start cell; everything else must differ.
        if id == "grid-preference" {
            assert!(shared < calib.trajectories.len(), "{id}");
        } else {
            assert_eq!(shared, 0, "{id}");
        }
    }
    assert_eq!(cat.calib_set("grid-precision").unwrap().trajectories.len(), 36);
}

#[test]
fn jsonl_round_trip() {
    let cat = Catalog::builtin();
    let ds = cat.calib_set("arm-goal").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("calib.jsonl");
    ds.save(&path).unwrap();
    assert_eq!(ScenarioDataset::load(&path).unwrap(), ds);

    let text = std::fs::read_to_string(&path).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["env", "scenario", "profile", "scheme", "seed", "states", "inputs", "actions"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(ScenarioDataset::load(&empty), Err(Error::EmptyDataset)));

    let other = cat.calib_set("arm-grasp").unwrap();
    let mut mixed = Vec::new();
    ds.write_jsonl(&mut mixed).unwrap();
    other.write_jsonl(&mut mixed).unwrap();
    assert!(matches!(ScenarioDataset::read_jsonl(mixed.as_slice()), Err(Error::Format(_))));
}

#[test]
fn unknown_names_are_rejected() {
    let cat = Catalog::builtin();
    assert!(cat.generate("arm-goal", &split("bob", "heuristic_xy", 2, 0)).is_err());
    assert!(cat.generate("arm-goal", &split("indirect", "joystick", 2, 0)).is_err());
    assert!(cat.generate("arm-goal", &split("indirect", "heuristic_xy", 0, 0)).is_err());
    let mut s = split("expert_direct", "heuristic_xy", 2, 0);
    s.modes = Some(vec!["green".into()]);
    assert!(cat.generate("arm-goal", &s).is_err());
}
