mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fovpc::controller::ControllerVariant;
use fovpc::kinematics::forward_kinematics;
use fovpc::runner::{load_reports, run_batch, summarize, RunSpec, EXIT_BAD_INPUT, EXIT_EPISODE_FAILED};
use fovpc::scenario::Waypoint;
use tempfile::TempDir;

fn fovpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fovpc")).args(args).output().unwrap()
}

fn count(dir: &Path, suffix: &str) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(suffix)).count()
}

fn scenario(name: &str) -> String {
    common::scenario_path(name).to_string_lossy().into_owned()
}

#[test]
fn single_cell_writes_one_log_and_report() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o =
        fovpc(&["run", "--scenario", &scenario("single_segment.toml"), "--variants", "VisionSafe", "--seeds", "0", "-o", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count(dir.path(), ".csv"), 1);
    assert_eq!(count(dir.path(), ".report"), 1);
    assert!(dir.path().join("single_segment_VisionSafe_seed0.csv").exists());
    assert!(dir.path().join("single_segment_summary.txt").exists());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("VisionSafe"));
}

#[test]
fn batch_writes_every_cell_and_compare_reproduces_it() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fovpc(&[
        "run",
        "--scenario",
        &scenario("multi_target_sim.toml"),
        "--variants",
        "VisionSafeEnhanced,VisionSafe,Classical",
        "--seeds",
        "0-9",
        "-o",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count(dir.path(), "_gp.csv"), 10);
    assert_eq!(count(dir.path(), ".csv"), 40);
    assert_eq!(count(dir.path(), ".report"), 30);
    let run_table = String::from_utf8(o.stdout).unwrap();
    let summary = fs::read_to_string(dir.path().join("multi_target_sim_summary.txt")).unwrap();
    assert_eq!(run_table, summary);

    let c = fovpc(&["compare", out]);
    assert_eq!(c.status.code(), Some(0));
    assert_eq!(String::from_utf8(c.stdout).unwrap(), run_table);

    // Rows follow the fixed variant order regardless of the request order.
    let names: Vec<&str> =
        run_table.lines().skip(2).filter(|l| !l.trim().is_empty()).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["Classical", "VisionSafe", "VisionSafeEnhanced"]);
}

#[test]
fn reports_round_trip_exactly() {
    let dir = TempDir::new().unwrap();
    let mut spec = RunSpec::new(common::scenario_path("single_segment.toml"), dir.path());
    spec.seeds = vec![0, 1];
    spec.emit_logs = false;
    let reports = run_batch(&spec).unwrap();
    assert_eq!(reports.len(), 2 * ControllerVariant::ALL.len());
    assert_eq!(count(dir.path(), ".csv"), 0);
    let mut loaded = load_reports(dir.path()).unwrap();
    let mut want = reports.clone();
    let key = |r: &fovpc::runner::CellReport| (r.variant.name(), r.seed);
    loaded.sort_by_key(key);
    want.sort_by_key(key);
    assert_eq!(loaded, want);
    let rows = summarize(&reports);
    assert_eq!(rows.iter().map(|r| r.variant).collect::<Vec<_>>(), ControllerVariant::ALL.to_vec());
}

#[test]
fn compare_groups_scenarios() {
    let dir = TempDir::new().unwrap();
    for name in ["single_segment.toml", "multi_target_sim.toml"] {
        let mut spec = RunSpec::new(common::scenario_path(name), dir.path());
        spec.variants = vec![ControllerVariant::Classical];
        spec.emit_logs = false;
        run_batch(&spec).unwrap();
    }
    let o = fovpc(&["compare", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let a = text.find("scenario: multi_target_sim").unwrap();
    let b = text.find("scenario: single_segment").unwrap();
    assert!(a < b);
}

#[test]
fn bad_inputs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let missing = dir.path().join("nope.toml");
    let o = fovpc(&["run", "--scenario", missing.to_str().unwrap(), "-o", out]);
    assert_eq!(o.status.code(), Some(EXIT_BAD_INPUT));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "name = \"x\"\ndt = = 0.1\n").unwrap();
    let o = fovpc(&["run", "--scenario", bad.to_str().unwrap(), "-o", out]);
    assert_eq!(o.status.code(), Some(EXIT_BAD_INPUT));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = fovpc(&["run", "--scenario", &scenario("single_segment.toml"), "--variants", "Nope", "-o", out]);
    assert_eq!(o.status.code(), Some(EXIT_BAD_INPUT));
    let o = fovpc(&["run", "--scenario", &scenario("single_segment.toml"), "--seeds", "5-2", "-o", out]);
    assert_eq!(o.status.code(), Some(EXIT_BAD_INPUT));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(fovpc(&["compare", empty.to_str().unwrap()]).status.code(), Some(EXIT_BAD_INPUT));
    assert_eq!(fovpc(&["compare", dir.path().join("absent").to_str().unwrap()]).status.code(), Some(EXIT_BAD_INPUT));

    let report = "# fovpc metric report\nscenario = x\nvariant = Classical\nseed = 0\nseed_dh = 1\nseed_noise = 2\n\
                  seed_excitation = 3\nsteps = 10\nfovsr = abc\nmae = --\nrmse = --\navss = 0\nmac = 1\n";
    fs::write(empty.join("broken.report"), report).unwrap();
    let o = fovpc(&["compare", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_BAD_INPUT));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 9: 'fovsr' is not a number"));
    fs::write(empty.join("broken.report"), report.replace("abc", "100")).unwrap();
    assert_eq!(fovpc(&["compare", empty.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn failing_episode_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let mut sc = common::load_scenario("single_segment.toml");
    // Instrument ends up behind the camera late in the run.
    let pose = forward_kinematics(&sc.robot, &sc.initial_state()).unwrap();
    let behind = pose.transform_point(&nalgebra::Vector3::new(0.0, 0.0, -0.5));
    sc.instruments[0].waypoints.push(Waypoint { t: 7.0, position: [behind.x, behind.y, behind.z] });
    let path = dir.path().join("broken.toml");
    fs::write(&path, sc.to_toml_string().unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = fovpc(&[
        "run",
        "--scenario",
        path.to_str().unwrap(),
        "--variants",
        "Classical",
        "--seeds",
        "3",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_EPISODE_FAILED));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("episode single_segment_Classical_seed3"), "{err}");
}
