use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anchorloc::commands::{
    cmd_evaluate, cmd_localize, cmd_perturb, cmd_simulate, cmd_sweep, SweepOutcome, ANCHORS, CAMERAS_PERTURBED,
    CAMERAS_TRUE, DIAGNOSTICS, ESTIMATES, HEIGHTS, INITIALS, METRICS_CSV, METRICS_JSON, OBSERVATIONS, TRAJECTORIES,
};
use anchorloc::eval::{evaluate, FrameLabel};
use anchorloc::io::{read_anchors, read_estimates, read_json, read_positions, write_anchors};
use anchorloc::pipeline::{localize_observations, HeightTable};
use anchorloc::scenario::{build_scenario, ScenarioSpec};
use anchorloc::sim::perturb_cameras;
use anchorloc::sweep::{run_sweep, SweepMethod, SweepOptions, SweepSpec};
use anchorloc::{CameraSet, Error, Method, Position3D};
use serde_json::{json, Value};
use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(path: &Path, v: &Value) -> PathBuf {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

/// The shipped desk scene shrunk to a few targets and frames.
fn small_scene(dir: &Path, pixel_sigma: f64) -> PathBuf {
    let mut s: Value = serde_json::from_str(&fs::read_to_string(configs().join("scene_desk.json")).unwrap()).unwrap();
    s["n_targets"] = json!(3);
    s["n_frames"] = json!(30);
    s["noise"]["pixel_sigma"] = json!(pixel_sigma);
    s["noise"]["anchor_pixel_sigma"] = json!(pixel_sigma / 10.0);
    write(&dir.join("scene.json"), &s)
}

fn run_config(dir: &Path, name: &str, mode: &str, cameras: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "mode": mode,
        "cameras": cameras,
        "anchors": ANCHORS,
        "observations": OBSERVATIONS,
        "heights": HEIGHTS,
        "output_dir": name,
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut cfg, extra) {
        base.extend(more);
    }
    write(&dir.join(format!("{name}.json")), &cfg)
}

/// simulate + perturb into a fresh directory.
fn scene_with_perturbation(pixel_sigma: f64) -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let written = cmd_simulate(&small_scene(d, pixel_sigma), d, None).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let perturb = write(
        &d.join("perturb.json"),
        &json!({
            "cameras": CAMERAS_TRUE,
            "perturbation": {"rx_deg": 0.5, "ry_deg": 0.5, "t_m": 0.1, "d_rel": 0.5},
            "seed": 4,
        }),
    );
    assert_eq!(cmd_perturb(&perturb, d, None).unwrap(), d.join(CAMERAS_PERTURBED));
    tmp
}

#[test]
fn noiseless_round_trip_recovers_the_trajectories() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    cmd_simulate(&small_scene(d, 0.0), d, None).unwrap();
    for mode in ["NOMINAL", "ANCHOR"] {
        let cfg = run_config(d, mode, mode, CAMERAS_TRUE, json!({}));
        let diag = cmd_localize(&cfg, None).unwrap();
        assert!(diag.failures.is_empty());
        let truth = read_positions(&d.join(TRAJECTORIES)).unwrap();
        let est = read_estimates(&d.join(mode).join(ESTIMATES)).unwrap();
        assert_eq!(est.len() + diag.skipped.len(), truth.len());
        for e in &est {
            let t = truth.iter().find(|t| (t.frame, t.target_id) == (e.frame, e.target_id)).unwrap();
            let err = (Position3D::new(e.x, e.y, e.z) - t.position()).norm();
            assert!(err < 1e-6, "{mode} frame {} target {}: {err}", e.frame, e.target_id);
        }
    }
}

#[test]
fn localize_then_evaluate_writes_every_artifact() {
    let tmp = scene_with_perturbation(3.0);
    let d = tmp.path();
    let cfg = run_config(d, "anchor", "ANCHOR", CAMERAS_PERTURBED, json!({"anchor_count_limit": 8}));
    let diag = cmd_localize(&cfg, None).unwrap();
    let out = d.join("anchor");
    for f in [ESTIMATES, INITIALS, DIAGNOSTICS] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(diag.n_estimates, diag.n_observations - diag.skipped.len());
    let report = cmd_evaluate(&out.join(ESTIMATES), &d.join(TRAJECTORIES), &out.join(INITIALS), &out).unwrap();
    assert_eq!(report.n_frames(), diag.n_estimates);
    assert!(report.improvement_ratio() > 0.5);
    let back: anchorloc::eval::MetricsReport = read_json(&out.join(METRICS_JSON)).unwrap();
    assert_eq!(back, report);
    let csv = fs::read_to_string(out.join(METRICS_CSV)).unwrap();
    assert!(csv.starts_with("scope,target_id,n_frames,average_distance,distance_std,improvement_ratio,"));
    assert!(!csv.contains('\r'));
}

#[test]
fn localize_is_byte_identical_on_rerun() {
    let tmp = scene_with_perturbation(5.0);
    let d = tmp.path();
    let cfg = run_config(d, "a", "ANCHOR", CAMERAS_PERTURBED, json!({"batch_size": 3, "rho": 60.0}));
    cmd_localize(&cfg, None).unwrap();
    let first: Vec<Vec<u8>> = [ESTIMATES, INITIALS, DIAGNOSTICS].iter().map(|f| fs::read(d.join("a").join(f)).unwrap()).collect();
    cmd_localize(&cfg, Some(&d.join("b"))).unwrap();
    let second: Vec<Vec<u8>> = [ESTIMATES, INITIALS, DIAGNOSTICS].iter().map(|f| fs::read(d.join("b").join(f)).unwrap()).collect();
    assert_eq!(first, second);
}

#[test]
fn modes_differ_only_in_mode_and_positions() {
    let tmp = scene_with_perturbation(3.0);
    let d = tmp.path();
    let nominal = cmd_localize(&run_config(d, "n", "NOMINAL", CAMERAS_PERTURBED, json!({})), None).unwrap();
    let anchor = cmd_localize(&run_config(d, "a", "ANCHOR", CAMERAS_PERTURBED, json!({})), None).unwrap();
    assert_eq!(fs::read(d.join("n").join(INITIALS)).unwrap(), fs::read(d.join("a").join(INITIALS)).unwrap());
    let (en, ea) = (
        read_estimates(&d.join("n").join(ESTIMATES)).unwrap(),
        read_estimates(&d.join("a").join(ESTIMATES)).unwrap(),
    );
    let keys = |rows: &[anchorloc::io::EstimateRow]| rows.iter().map(|r| (r.frame, r.target_id)).collect::<Vec<_>>();
    assert_eq!(keys(&en), keys(&ea));
    assert!(en.iter().zip(&ea).any(|(a, b)| (a.x, a.y, a.z) != (b.x, b.y, b.z)));
    assert_ne!(nominal.mode, anchor.mode);
    assert_eq!(nominal.n_estimates, anchor.n_estimates);
    assert_eq!(nominal.skipped, anchor.skipped);
}

#[test]
fn anchor_limit_keeps_the_lowest_ids() {
    let tmp = scene_with_perturbation(3.0);
    let d = tmp.path();
    let all = read_anchors(&d.join(ANCHORS)).unwrap();
    // Same anchors listed in reverse, so file order cannot decide the pick.
    write_anchors(&d.join("reversed.csv"), all.iter().rev()).unwrap();
    write_anchors(&d.join("first4.csv"), all.iter().filter(|a| a.anchor_id < 4)).unwrap();
    let limited = run_config(
        d,
        "limited",
        "ANCHOR",
        CAMERAS_PERTURBED,
        json!({"anchors": "reversed.csv", "anchor_count_limit": 4}),
    );
    let trimmed = run_config(d, "trimmed", "ANCHOR", CAMERAS_PERTURBED, json!({"anchors": "first4.csv"}));
    let full = run_config(d, "full", "ANCHOR", CAMERAS_PERTURBED, json!({}));
    for c in [&limited, &trimmed, &full] {
        cmd_localize(c, None).unwrap();
    }
    let bytes = |n: &str| fs::read(d.join(n).join(ESTIMATES)).unwrap();
    assert_eq!(bytes("limited"), bytes("trimmed"));
    assert_ne!(bytes("limited"), bytes("full"));
}

#[test]
fn bad_configs_are_rejected_with_their_location() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let p = d.join("bad.json");
    fs::write(&p, "{\n  \"mode\": \"ANCHOR\",\n  \"lambda\": \"big\"\n}\n").unwrap();
    let msg = cmd_localize(&p, Some(d)).unwrap_err().to_string();
    assert!(msg.contains("bad.json:3"), "{msg}");
    assert!(msg.contains("lambda"), "{msg}");

    fs::write(&p, "{\"mode\": \"NOMINAL\", \"cameras\": \"c.json\"}").unwrap();
    let e = cmd_localize(&p, Some(d)).unwrap_err();
    assert!(matches!(e, Error::Invalid(_)), "{e}");

    fs::write(&p, "{\"extent\": [16.0, 12.0], \"layout\": ").unwrap();
    let msg = cmd_simulate(&p, d, None).unwrap_err().to_string();
    assert!(msg.contains("bad.json:1"), "{msg}");
}

#[test]
fn hall_scene_simulates_within_a_minute() {
    let tmp = TempDir::new().unwrap();
    let t = Instant::now();
    cmd_simulate(&configs().join("scene_hall.json"), tmp.path(), None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!("hall scene simulated in {secs:.2} s");
    assert!(secs < 60.0);
    let cams = anchorloc::io::read_cameras(&tmp.path().join(CAMERAS_TRUE)).unwrap();
    assert_eq!(cams.len(), 47);
}

/// The shipped error grid with one seed and short trajectories.
fn small_grid(dir: &Path) -> PathBuf {
    let mut s: Value = serde_json::from_str(&fs::read_to_string(configs().join("error_grid.json")).unwrap()).unwrap();
    s["seeds"] = json!([0]);
    s["scenario"]["n_frames"] = json!(8);
    s["scenario"]["n_targets"] = json!(2);
    write(&dir.join("grid.json"), &s)
}

#[test]
fn error_grid_sweep_has_one_row_per_cell_and_method() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let spec = small_grid(d);
    let SweepOutcome::DryRun(cells) = cmd_sweep(&spec, d, 1, true, None).unwrap() else {
        panic!("expected a dry run");
    };
    // 16 rows, one seed, both signs.
    assert_eq!(cells.len(), 32);
    assert!(!d.join("cells").exists());

    let SweepOutcome::Written { csv, rows, .. } = cmd_sweep(&spec, d, 4, false, None).unwrap() else {
        panic!("expected a written table");
    };
    assert_eq!(rows, 64);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 65);
    let methods: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').nth(8).unwrap()).collect();
    assert_eq!(methods.len(), 4, "{methods:?}");
}

#[test]
fn interrupted_sweep_resumes_from_finished_cells() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let spec = small_grid(d);
    let SweepOutcome::Written { csv, .. } = cmd_sweep(&spec, d, 2, false, None).unwrap() else {
        panic!()
    };
    let first = fs::read(&csv).unwrap();
    let cell_dir = d.join("cells").join("error_grid");
    let mut cells: Vec<PathBuf> = fs::read_dir(&cell_dir).unwrap().map(|e| e.unwrap().path()).collect();
    cells.sort();
    assert_eq!(cells.len(), 32);
    let stamps: Vec<_> = cells.iter().map(|p| fs::metadata(p).unwrap().modified().unwrap()).collect();
    // Lose the table and a few cells, as if the run had been killed.
    fs::remove_file(&csv).unwrap();
    for p in &cells[..5] {
        fs::remove_file(p).unwrap();
    }
    cmd_sweep(&spec, d, 1, false, None).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), first);
    for (p, s) in cells.iter().zip(&stamps).skip(5) {
        assert_eq!(fs::metadata(p).unwrap().modified().unwrap(), *s, "{} was recomputed", p.display());
    }
}

#[test]
fn one_cell_sweep_matches_a_direct_evaluation() {
    let mut spec: SweepSpec = read_json(&configs().join("error_grid.json")).unwrap();
    spec.rows.truncate(1);
    spec.seeds = vec![3];
    spec.sign_modes.truncate(1);
    spec.methods = vec![SweepMethod::Anchor { n_anchors: 4 }];
    spec.scenario.n_frames = 20;
    let table = run_sweep(&spec, &SweepOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 1);

    let mut scenario_spec: ScenarioSpec = spec.scenario.clone();
    scenario_spec.seed = 3;
    scenario_spec.noise.pixel_sigma = spec.pixel_sigmas[0];
    let sc = build_scenario(&scenario_spec).unwrap();
    let perturbed =
        CameraSet::new(perturb_cameras(sc.cameras.as_slice(), &spec.rows[0].with_sign(spec.sign_modes[0]), 3).unwrap())
            .unwrap();
    let heights = HeightTable {
        known: sc.trajectories.iter().map(|t| (t.target_id, t.height)).collect(),
        nominal: 0.0,
    };
    let anchors = sc.anchors.limited(4);
    let out = localize_observations(
        &sc.observations,
        &perturbed,
        &perturbed,
        Method::Anchor {
            anchors: &anchors,
            lambda: spec.lambda,
        },
        &heights,
        &spec.smoothing[0],
        &spec.solver,
    )
    .unwrap();
    let truth: Vec<Position3D> = out
        .outcomes
        .iter()
        .map(|o| sc.trajectories[o.target_id as usize].point(o.frame_index as usize, sc.representative))
        .collect();
    let est: Vec<Position3D> = out.outcomes.iter().map(|o| o.estimate).collect();
    let init: Vec<Position3D> = out.outcomes.iter().map(|o| o.initial).collect();
    let labels: Vec<FrameLabel> = out
        .outcomes
        .iter()
        .map(|o| FrameLabel {
            target_id: o.target_id,
            n_visible: o.n_visible,
        })
        .collect();
    assert_eq!(table.rows[0].report, evaluate(&est, &truth, &init, &labels).unwrap());
}
