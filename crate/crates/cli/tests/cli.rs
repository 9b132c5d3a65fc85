use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use platoon_core::config::KEYS;

fn platoon(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn platoon")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn topo_pf_prints_unit_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["topo", "PF", "9", "--out", "t"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("eigenvalues: 1 (×9)"), "{}", stdout(&o));
    assert!(dir.path().join("t/topology_PF.txt").exists());
    let manifest = fs::read_to_string(dir.path().join("t/manifest.txt")).unwrap();
    assert!(manifest.contains("command=topo"));
    assert!(manifest.contains("output=spectrum_PF.csv"));
}

#[test]
fn topo_bdl_spectrum_matches_closed_form() {
    // Path Laplacian plus identity: 3 - 2 cos(k pi / N), k = 0..N-1.
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["topo", "BDL", "9", "--out", "."]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut got: Vec<f64> = csv_rows(&dir.path().join("spectrum_BDL.csv"))
        .iter()
        .map(|r| {
            assert_eq!(r[2].parse::<f64>().unwrap(), 0.0);
            r[1].parse().unwrap()
        })
        .collect();
    got.sort_by(f64::total_cmp);
    let mut want: Vec<f64> = (0..9)
        .map(|k| 3.0 - 2.0 * (k as f64 * std::f64::consts::PI / 9.0).cos())
        .collect();
    want.sort_by(f64::total_cmp);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn topo_rejects_zero_followers_and_bad_kinds() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&platoon(dir.path(), &["topo", "PF", "0"])), 2);
    assert_eq!(code(&platoon(dir.path(), &["topo", "XYZ", "3"])), 2);
    assert_eq!(code(&platoon(dir.path(), &["topo", "rPF", "3", "--range", "4"])), 2);
    assert_eq!(code(&platoon(dir.path(), &["nonsense"])), 2);
}

#[test]
fn certify_reference_rows_hold() {
    let dir = tempfile::tempdir().unwrap();
    let kinds = "topology.kind=PF,PFL,TPF,TPFL,rPF,rPFL,BD,BDL,rBD,rBDL";
    for preset in ["reference-integral", "reference-no-integral"] {
        let o = platoon(
            dir.path(),
            &["certify", "--override", kinds, "--override", &format!("gains.preset={preset}")],
        );
        assert_eq!(code(&o), 0, "{preset}: {}", stdout(&o));
        assert_eq!(stdout(&o).matches("verdict: stable").count(), 10);
    }
}

#[test]
fn certify_negative_integral_gain_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["certify", "--kv", "--override", "gains.kappa_s=-0.1"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.contains("verdict=unstable"));
    let idx = out
        .lines()
        .find(|l| l.ends_with("name=kappa_s > 0"))
        .and_then(|l| l.strip_prefix("constraint."))
        .and_then(|l| l.split('.').next())
        .expect("kappa_s constraint listed")
        .to_string();
    let margin: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix(&format!("constraint.{idx}.margin=")))
        .unwrap()
        .parse()
        .unwrap();
    assert!(margin < 0.0);
}

#[test]
fn certify_general_digraph_is_not_applicable() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("cfg")).unwrap();
    // Directed 3-cycle with follower 1 pinned: neither triangular nor symmetric.
    fs::write(dir.path().join("cfg/cycle.txt"), "3 1 custom\n0 0 1\n1 0 0\n0 1 0\n1 0 0\n").unwrap();
    fs::write(
        dir.path().join("cfg/cycle.cfg"),
        "[topology]\nfile = cycle.txt\n\n[gains]\npreset = none\nkappa_s = 0.1\nkappa_p = 1\nkappa_v = 3\nkappa_a = 1\n",
    )
    .unwrap();
    // The topology file resolves against the config directory, not the cwd.
    let o = platoon(dir.path(), &["certify", "--config", "cfg/cycle.cfg"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("theorem not applicable"));
    let o = platoon(dir.path(), &["analyze", "--config", "cfg/cycle.cfg", "--out", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("a/custom/spectrum.csv").exists());
}

#[test]
fn certify_synthesized_kappa_v_holds() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(
        dir.path(),
        &["certify", "--synthesize-kv", "1.05", "--override", "topology.kind=BD,rPFL"],
    );
    assert_eq!(code(&o), 0, "{}", stdout(&o));
}

#[test]
fn bad_config_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "[sim]\ndtt = 0.1\n").unwrap();
    let o = platoon(dir.path(), &["certify", "--config", "bad.cfg"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown key 'sim.dtt' at line 2"), "{}", stderr(&o));
    assert_eq!(code(&platoon(dir.path(), &["certify", "--config", "missing.cfg"])), 2);
    assert_eq!(code(&platoon(dir.path(), &["simulate", "--override", "sim.dt=0"])), 2);
    assert_eq!(code(&platoon(dir.path(), &["simulate", "--override", "sim.dt"])), 2);
}

#[test]
fn simulate_refuses_uncertified_gains() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["simulate", "--override", "gains.kappa_v=-2"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn simulate_blow_up_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(
        dir.path(),
        &[
            "simulate",
            "--override",
            "gains.kappa_v=-2",
            "--override",
            "controller.allow_uncertified=true",
            "--override",
            "sim.t_final=60",
        ],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("blow-up"));
}

fn slope_steady_errors(metrics: &Path) -> Vec<f64> {
    csv_rows(metrics)
        .iter()
        .filter(|r| r[2] == "slope")
        .map(|r| r[5].parse().unwrap())
        .collect()
}

#[test]
fn simulate_integral_action_removes_slope_offset() {
    // The slope epoch is lengthened (no wind step) so the slowest PFL mode
    // has time to decay inside the settle window.
    let dir = tempfile::tempdir().unwrap();
    let base = ["simulate", "--override", "topology.kind=PFL", "--override", "schedule.wind.enabled=false"];
    let mut with_integral = base.to_vec();
    with_integral.extend(["--out", "ki", "--override", "sim.t_final=200"]);
    let o = platoon(dir.path(), &with_integral);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for row in csv_rows(&dir.path().join("ki/PFL/metrics.csv")) {
        let e: f64 = row[5].parse().unwrap();
        assert!(e.abs() < 1e-2, "{row:?}");
        assert_eq!(row[10], "false");
    }

    let mut without = base.to_vec();
    without.extend(["--out", "k0", "--override", "gains.preset=reference-no-integral", "--override", "sim.t_final=200"]);
    let o = platoon(dir.path(), &without);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let worst = slope_steady_errors(&dir.path().join("k0/PFL/metrics.csv"))
        .into_iter()
        .fold(0.0f64, |m, e| m.max(e.abs()));
    assert!(worst > 0.05, "{worst}");
}

#[test]
fn simulate_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = platoon(
            dir.path(),
            &["simulate", "--out", out, "--override", "topology.kind=TPF,BDL", "--override", "sim.output_stride=10"],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for rel in ["TPF/trajectory.csv", "TPF/metrics.csv", "BDL/trajectory.csv", "BDL/metrics.csv", "plot.py"] {
        let a = fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = fs::read(dir.path().join("b").join(rel)).unwrap();
        assert!(a == b, "{rel} differs");
    }
    let traj = fs::read_to_string(dir.path().join("a/TPF/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,veh,p,v,a,u,e_spacing\n"));
    // 25001 samples at stride 10 -> 2501 rows per vehicle, 10 vehicles.
    assert_eq!(traj.lines().count(), 1 + 2501 * 10);
    let plot = fs::read_to_string(dir.path().join("a/plot.py")).unwrap();
    assert!(plot.contains("'TPF/trajectory.csv'") && plot.contains("'BDL/trajectory.csv'"));
    let manifest = fs::read_to_string(dir.path().join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("command=simulate") && manifest.contains("output=plot.py"));
}

#[test]
fn sweep_finds_pf_kappa_v_boundary() {
    // kappa_v bound at lambda = 1: (0.15 * 2^2 + 0.15) / 2 = 0.375.
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["sweep", "--out", "s", "--x", "kappa_v:0.1:5:50"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("s/sweep.csv"));
    assert_eq!(rows.len(), 50);
    for r in &rows {
        let kv: f64 = r[3].parse().unwrap();
        let expected = if kv > 0.375 { "stable" } else { "unstable" };
        assert_eq!(r[5], expected, "{r:?}");
        assert_eq!(r[7], expected, "{r:?}");
    }
}

#[test]
fn sweep_with_nonpositive_kappa_p_is_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(
        dir.path(),
        &["sweep", "--out", "s", "--x", "kappa_p:-1:1:5", "--y", "kappa_v:2:4:3", "--override", "topology.kind=BDL"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("s/sweep.csv"));
    assert_eq!(rows.len(), 15);
    for r in &rows {
        let kp: f64 = r[2].parse().unwrap();
        if kp <= 0.0 {
            assert_eq!(r[5], "unstable", "{r:?}");
            assert_eq!(r[7], "unstable", "{r:?}");
        } else {
            assert_eq!(r[5], "stable", "{r:?}");
        }
    }
    assert_eq!(code(&platoon(dir.path(), &["sweep", "--x", "kappa_p:1:0:3"])), 2);
}

#[test]
fn analyze_reference_gains() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["analyze", "--out", "a", "--override", "topology.kind=BD,rPFL"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("Hurwitz").count(), 2);
    assert_eq!(stdout(&o).matches("matches").count(), 2);
    let rows = csv_rows(&dir.path().join("a/BD/spectrum.csv"));
    assert_eq!(rows.len(), 36);
    let o = platoon(dir.path(), &["analyze", "--override", "topology.n=101"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn template_is_a_valid_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = platoon(dir.path(), &["template"]);
    assert_eq!(code(&o), 0);
    fs::write(dir.path().join("t.cfg"), o.stdout).unwrap();
    assert_eq!(code(&platoon(dir.path(), &["certify", "--config", "t.cfg"])), 0);
}

#[test]
fn readme_documents_every_key() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    for k in KEYS {
        assert!(readme.contains(&format!("`{}`", k.key)), "README lacks {}", k.key);
    }
    assert!(readme.contains("`schedule.input_bias.<i>`"));
}
