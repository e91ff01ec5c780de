use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hkbary"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output { status, stdout, stderr } = cmd.output().unwrap();
    (
        status.code().unwrap(),
        String::from_utf8(stdout).unwrap(),
        String::from_utf8(stderr).unwrap(),
    )
}

fn csv_rows(path: &Path) -> Vec<(f64, f64)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let (x, m) = l.split_once(',').unwrap();
            (x.parse().unwrap(), m.parse().unwrap())
        })
        .collect()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn identical_diracs_reproduce_the_input() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0.3,1\n");
    let out = t.path().join("out");
    let (code, _, err) = run(bin().arg("barycenter").arg(&a).arg(&a).arg("--out-dir").arg(&out));
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&out.join("barycenter.csv"));
    assert_eq!(rows.len(), 1);
    assert!((rows[0].0 - 0.3).abs() < 1e-12);
    assert!((rows[0].1 - 1.0).abs() < 1e-6);
    assert!(report(&out)["values"]["smm"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn dirac_pair_matches_closed_form() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0,1\n");
    let b = write(t.path(), "b.csv", "x,mass\n0.5,2\n");
    let out = t.path().join("out");
    let (code, _, err) = run(bin()
        .arg("barycenter")
        .args([&a, &b])
        .args(["--lambda", "0.5", "--lambda", "0.5", "--verify", "--out-dir"])
        .arg(&out));
    assert_eq!(code, 0, "{err}");
    let rows = csv_rows(&out.join("barycenter.csv"));
    // Oracle: sqrt(1 * 2) cos^2(0.25), located at the midpoint.
    let mass = 2f64.sqrt() * 0.25f64.cos().powi(2);
    assert_eq!(rows.len(), 1);
    assert!((rows[0].0 - 0.25).abs() < 1e-12);
    assert!((rows[0].1 - mass).abs() < 1e-3 * mass);
    let r = report(&out);
    assert!(r["gaps"]["passed"].as_bool().unwrap());
    for key in ["smm", "extended", "cc2m", "conic"] {
        assert!(r["values"][key].is_number(), "{key}");
    }
    assert_eq!(r["residuals"].as_array().unwrap().len(), 2);
    assert!(r["converged"].as_bool().unwrap());
    assert_eq!(r["epsilon_final"].as_f64().unwrap(), 1e-3);
    assert!(out.join("plan_marginal_1.csv").exists() && out.join("plan_marginal_2.csv").exists());
}

#[test]
fn far_disjoint_supports_give_empty_barycenter() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0,1\n");
    let b = write(t.path(), "b.csv", "x,mass\n3.5,2\n");
    let out = t.path().join("out");
    let (code, _, err) = run(bin().arg("barycenter").args([&a, &b]).arg("--out-dir").arg(&out));
    assert_eq!(code, 0, "{err}");
    assert!(csv_rows(&out.join("barycenter.csv")).is_empty());
    assert_eq!(report(&out)["values"]["smm"].as_f64().unwrap(), 1.5);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0.1,1\n0.2,0.5\n0.4,0.25\n");
    let b = write(t.path(), "b.csv", "x,mass\n0.6,2\n0.9,1\n");
    let dirs: Vec<PathBuf> = (0..2).map(|k| t.path().join(format!("out{k}"))).collect();
    for d in &dirs {
        let (code, _, err) = run(bin()
            .arg("barycenter")
            .args([&a, &b])
            .args(["--grid-n", "41", "--out-dir"])
            .arg(d));
        assert_eq!(code, 0, "{err}");
    }
    for f in ["barycenter.csv", "plan_marginal_1.csv", "plan_marginal_2.csv", "report.json"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0,1\n");
    let b = write(t.path(), "b.csv", "x,mass\n0.5,2\n");
    let out = t.path().join("out");
    let conf = write(
        t.path(),
        "run.conf",
        &format!(
            "cost = quadratic\ngrid-n = 6\nlambda = 0.3, 0.7\neps-final = 1e-2\nout-dir = {}\n",
            out.display()
        ),
    );
    let (code, _, err) = run(bin()
        .arg("barycenter")
        .args([&a, &b])
        .arg("--config")
        .arg(&conf)
        .args(["--eps-final", "1e-3"]));
    assert_eq!(code, 0, "{err}");
    let r = report(&out);
    assert_eq!(r["epsilon_final"].as_f64().unwrap(), 1e-3);
    // The weighted mean 0.35 is off the 6-point grid, so every atom sits on a multiple of 0.1.
    let rows = csv_rows(&out.join("barycenter.csv"));
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|(x, _)| ((x * 10.0).round() - x * 10.0).abs() < 1e-9));
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0,1\n");
    let bad = write(t.path(), "bad.csv", "x,weight\n0,1\n");
    let neg = write(t.path(), "neg.csv", "x,mass\n0,-1\n");
    let out = t.path().join("out");

    let (code, _, _) = run(bin().args(["barycenter", "--no-such-flag"]));
    assert_eq!(code, 1);
    let (code, _, _) = run(bin().arg("barycenter").args([&a, &a]).args(["--lambda", "0.9", "--lambda", "0.9"]));
    assert_eq!(code, 1);
    let conf = write(t.path(), "bad.conf", "colour = blue\n");
    let (code, _, _) = run(bin().arg("barycenter").args([&a, &a]).arg("--config").arg(&conf));
    assert_eq!(code, 1);

    let (code, _, _) = run(bin().arg("barycenter").args([&a, &bad]).arg("--out-dir").arg(&out));
    assert_eq!(code, 2);
    let (code, _, _) = run(bin().arg("barycenter").args([&a, &neg]).arg("--out-dir").arg(&out));
    assert_eq!(code, 2);
    let (code, _, _) = run(bin().arg("barycenter").arg(&a).arg(t.path().join("missing.csv")));
    assert_eq!(code, 2);

    let g1 = write(t.path(), "g1.csv", "x,mass\n0.1,1\n0.2,0.5\n0.3,0.7\n");
    let g2 = write(t.path(), "g2.csv", "x,mass\n0.6,2\n0.7,1\n0.9,0.4\n");
    let (code, _, _) = run(bin()
        .arg("barycenter")
        .args([&g1, &g2])
        .args(["--max-iter", "1", "--out-dir"])
        .arg(&out));
    assert_eq!(code, 3);
    assert!(out.join("report.json").exists());
}

#[test]
fn dirac_subcommand() {
    let (code, stdout, err) = run(bin().args([
        "dirac", "--point", "0", "--mass", "1", "--point", "0.5", "--mass", "2", "--lambda", "0.5", "--lambda", "0.5",
    ]));
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["kind"], "atom");
    let mass = 2f64.sqrt() * 0.25f64.cos().powi(2);
    assert!((v["mass"].as_f64().unwrap() - mass).abs() < 1e-9);
    assert!((v["point"][0].as_f64().unwrap() - 0.25).abs() < 1e-6);

    let (code, stdout, _) = run(bin().args(["dirac", "--point", "0", "--mass", "1", "--point", "3.5", "--mass", "2"]));
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["kind"], "zero");
}

#[test]
fn verify_subcommand_reports_and_passes() {
    let t = tempfile::tempdir().unwrap();
    let a = write(t.path(), "a.csv", "x,mass\n0,1\n0.1,0.5\n");
    let b = write(t.path(), "b.csv", "x,mass\n0.4,2\n");
    let (code, stdout, err) = run(bin().arg("verify").args([&a, &b]).args(["--grid-n", "21"]));
    assert_eq!(code, 0, "{err}\n{stdout}");
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["gaps"]["passed"].as_bool().unwrap());

    // A single stage at large epsilon leaves the regularization bias in the values.
    let (code, stdout, _) = run(bin()
        .arg("verify")
        .args([&a, &b])
        .args(["--grid-n", "21", "--eps-start", "0.5", "--eps-final", "0.5"]));
    assert_eq!(code, 4);
    let v: Value = serde_json::from_str(&stdout).unwrap();
    assert!(!v["gaps"]["passed"].as_bool().unwrap());
}

#[test]
fn gaussians_demo_writes_every_case() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("demo");
    let (code, _, err) = run(bin().args(["gaussians-demo", "--out-dir"]).arg(&out));
    assert_eq!(code, 0, "{err}");
    for cost in ["hk", "quadratic"] {
        for l in ["0.25", "0.5", "0.75"] {
            let text = fs::read_to_string(out.join(format!("demo_{cost}_{l}.csv"))).unwrap();
            let mut lines = text.lines();
            assert_eq!(lines.next().unwrap(), "x,mu1,mu2,gamma_marg1,gamma_marg2,barycenter");
            assert_eq!(lines.count(), 200);
        }
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 6);
}
