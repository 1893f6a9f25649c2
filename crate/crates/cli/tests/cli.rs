use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spectral-vi"))
}

fn ephemeris() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/solar_system_j2000.csv")
}

fn write_config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = bin()
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    status.status.code().unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn free_particle_integrate_is_exact() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "free.json",
        r#"{"problem": {"name": "free-particle", "masses": [1.0, 2.0], "q0": [0.5, -1.0], "p0": [1.0, 3.0]},
            "n": 6, "h": 0.5, "steps": 40}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run("integrate", &cfg, &out, &[]), 0);
    let (header, rows) = read_csv(&out.join("errors.csv"));
    assert_eq!(header, ["step", "t", "err_endpoint", "err_curve"]);
    assert_eq!(rows.len(), 40);
    for r in &rows {
        assert!(r[2].parse::<f64>().unwrap() <= 1e-12, "{r:?}");
    }
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(header, ["step", "t", "q0", "q1", "p0", "p1"]);
    assert_eq!(rows.len(), 41);
    assert_eq!(rows[0][2], "5.0000000000000000e-1");

    let s = summary(&out);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["config"]["m"], 12);
    assert_eq!(s["config"]["solver"]["tol"], 1e-12);
    assert_eq!(s["config"]["solver"]["strategy"], "fixed-point-then-newton");
    assert_eq!(s["run"]["steps_completed"], 40);
}

#[test]
fn harmonic_long_step_energy_is_bounded() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "h.json",
        r#"{"problem": {"name": "harmonic"}, "n": 14, "h": 20.0, "steps": 100, "outputs": ["energy"]}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run("integrate", &cfg, &out, &[]), 0);
    let s = summary(&out);
    assert!(s["run"]["energy"]["drift_ratio"].as_f64().unwrap() <= 2.0);
    assert!(out.join("energy.csv").exists());
    assert!(!out.join("errors.csv").exists());
    assert_eq!(s["config"]["problem"]["q0"], 1.0);
    assert_eq!(s["config"]["problem"]["p0"], 0.0);
}

#[test]
fn kepler_errors_and_noether_are_reported() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "k.json", r#"{"problem": {"name": "kepler"}, "n": 16, "h": 2.0, "steps": 100}"#);
    let out = tmp.path().join("out");
    assert_eq!(run("integrate", &cfg, &out, &[]), 0);
    let s = summary(&out);
    let e = s["run"]["err_endpoint"].as_f64().unwrap();
    assert!(e > 0.0 && e < 0.2);
    assert!(s["run"]["discrete_noether"]["max_step_change"].as_f64().unwrap() <= 1e-11);
    let (header, rows) = read_csv(&out.join("discrete_noether.csv"));
    assert_eq!(header, ["step", "t", "value", "change"]);
    assert_eq!(rows.len(), 101);
}

#[test]
fn step_failure_keeps_partial_output() {
    let tmp = TempDir::new().unwrap();
    // n = 5 has no stage solution near the short-step branch at this step size.
    let cfg = write_config(tmp.path(), "k.json", r#"{"problem": {"name": "kepler"}, "n": 5, "h": 2.0, "steps": 100}"#);
    let out = tmp.path().join("out");
    assert_eq!(run("integrate", &cfg, &out, &[]), 3);
    let s = summary(&out);
    assert_eq!(s["status"], "failed");
    let done = s["run"]["steps_completed"].as_u64().unwrap() as usize;
    assert!(done < 100);
    assert_eq!(s["run"]["failed_step"].as_u64().unwrap() as usize, done);
    let (_, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), done + 1);
}

#[test]
fn config_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        "{not json",
        r#"{"problem": {"name": "harmonic"}, "n": 4, "h": 1, "steps": 2, "extra": 1}"#,
        r#"{"problem": {"name": "harmonic"}, "n": 1, "h": 1, "steps": 2}"#,
        r#"{"problem": {"name": "harmonic"}, "n": 4, "m": 3, "h": 1, "steps": 2}"#,
        r#"{"problem": {"name": "kepler", "v0": [0.0, 5.0]}, "n": 4, "h": 1, "steps": 2}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("c{i}.json"), text);
        assert_eq!(run("integrate", &cfg, &out, &[]), 2, "{text}");
    }
    let bad_csv = write_config(tmp.path(), "bad.csv", "name,mass,x,y,z,vx,vy\nsun,1,0,0,0,0,0\n");
    let cfg = write_config(
        tmp.path(),
        "nb.json",
        &format!(r#"{{"problem": {{"name": "nbody", "ephemeris": "{}"}}, "n": 4, "h": 1, "steps": 2}}"#, bad_csv.display()),
    );
    assert_eq!(run("integrate", &cfg, &out, &[]), 2);
}

#[test]
fn io_errors_exit_4() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run("integrate", &tmp.path().join("missing.json"), &tmp.path().join("o"), &[]), 4);
    let cfg = write_config(tmp.path(), "h.json", r#"{"problem": {"name": "harmonic"}, "n": 4, "h": 1, "steps": 2}"#);
    let blocker = write_config(tmp.path(), "file", "");
    assert_eq!(run("integrate", &cfg, &blocker.join("out"), &[]), 4);
    let cfg = write_config(
        tmp.path(),
        "nb.json",
        r#"{"problem": {"name": "nbody", "ephemeris": "nowhere.csv"}, "n": 4, "h": 1, "steps": 2}"#,
    );
    assert_eq!(run("integrate", &cfg, &tmp.path().join("o"), &[]), 4);
}

#[test]
fn sweep_n_is_sorted_and_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        r#"{"problem": {"name": "kepler"}, "h": 1.0, "steps": 20, "sweep": {"n": [14, 8, 12, 10, 16]}}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("sweep-n", &cfg, &a, &["--threads", "1"]), 0);
    assert_eq!(run("sweep-n", &cfg, &b, &["--threads", "4", "--seed", "7"]), 0);
    let text_a = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(text_a, std::fs::read(b.join("sweep.csv")).unwrap());
    let (header, rows) = read_csv(&a.join("sweep.csv"));
    assert_eq!(header, ["n", "err_endpoint", "err_curve", "err_energy", "err_noether"]);
    let ns: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ns, ["8", "10", "12", "14", "16"]);
    let errs: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    let s = summary(&a);
    let base = s["fits"]["endpoint"]["fitted"].as_f64().unwrap();
    assert!(base > 0.0 && base < 1.0);
    assert_eq!(s["points"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_h_fits_an_order() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "s.json",
        r#"{"problem": {"name": "kepler"}, "n": 3, "outputs": ["endpoint-error"],
            "sweep": {"h": [0.125, 0.5, 0.25, 0.0625], "total_time": 10.0}}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run("sweep-h", &cfg, &out, &[]), 0);
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    assert_eq!(header, ["h", "steps", "err_endpoint", "err_curve", "err_energy", "err_noether"]);
    let steps: Vec<&str> = rows.iter().map(|r| r[1].as_str()).collect();
    assert_eq!(steps, ["20", "40", "80", "160"]);
    assert_eq!(rows[0][4], "NaN");
    let order = summary(&out)["fits"]["endpoint"]["fitted"].as_f64().unwrap();
    assert!((order - 4.0).abs() < 0.5, "order {order}");

    let bad = write_config(
        tmp.path(),
        "b.json",
        r#"{"problem": {"name": "kepler"}, "n": 3, "sweep": {"h": [0.5, 0.25], "total_time": 10.0}}"#,
    );
    assert_eq!(run("sweep-h", &bad, &out, &[]), 2);
}

#[test]
fn outer_solar_system_stability() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "so.json",
        &format!(
            r#"{{"problem": {{"name": "nbody", "ephemeris": "{}",
                "aggregate": [{{"name": "inner-system", "members": ["sun", "mercury", "venus", "earth", "mars"]}}]}},
                "n": 25, "h": 1825.0, "steps": 100, "outputs": ["discrete-noether"]}}"#,
            ephemeris().display()
        ),
    );
    let out = tmp.path().join("out");
    assert_eq!(run("stability", &cfg, &out, &[]), 0);
    let s = summary(&out);
    assert!(s["run"]["energy"]["drift_ratio"].as_f64().unwrap() <= 2.0);
    assert!(s["run"]["noether"]["max_abs_error"].as_f64().unwrap() < 1e-12);
    let orbits = s["run"]["orbits"].as_array().unwrap();
    assert_eq!(orbits.len(), 5);
    for o in orbits {
        assert!(o["max_radial_deviation"].as_f64().unwrap() < 0.05, "{o}");
    }
    let (header, rows) = read_csv(&out.join("orbits.csv"));
    assert_eq!(header, ["t", "body", "x", "y", "z"]);
    assert_eq!(rows.len(), 6 * (100 * 15 + 1));
    let (header, _) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(header[2], "inner-system_x");
}

#[test]
fn relative_ephemeris_resolves_against_config() {
    let tmp = TempDir::new().unwrap();
    std::fs::copy(ephemeris(), tmp.path().join("eph.csv")).unwrap();
    let cfg = write_config(
        tmp.path(),
        "nb.json",
        r#"{"problem": {"name": "nbody", "ephemeris": "eph.csv", "bodies": ["sun", "jupiter"]},
            "n": 8, "h": 100.0, "steps": 5, "outputs": ["energy"]}"#,
    );
    let out = tmp.path().join("out");
    assert_eq!(run("integrate", &cfg, &out, &[]), 0);
    let (header, rows) = read_csv(&out.join("trajectory.csv"));
    assert_eq!(header.len(), 2 + 12);
    assert_eq!(rows.len(), 6);
}
