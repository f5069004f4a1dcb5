use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const DIMER: &str = r#"
[system]
hubbard = { sites = 2, t = 1.0, u = 4.0 }

[sector]
n_alpha = 1
n_beta = 1
"#;

fn lindprep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lindprep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn plain_run_writes_series_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        &format!("{DIMER}\n[schedule]\nt_total = 3.0\n"),
    );
    let out = dir.path().join("out");
    let res = lindprep(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let csv = fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("time,energy,infidelity,s2,multiplicity,trace_err")
    );
    assert_eq!(csv.lines().count(), 32);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["a", "b", "delta_a", "delta_b", "s_max"] {
        assert!(report["filter"]["spec"][key].is_number(), "{key}");
    }
    assert_eq!(report["filter"]["nodes"], 200);
    assert_eq!(report["schedule"]["dt"], 0.1);
    assert_eq!(
        report["provenance"]["config_sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
}

#[test]
fn symmetry_sector_gives_exact_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = DIMER.replace("n_alpha = 1\nn_beta = 1", "n_alpha = 2\nn_beta = 0")
        + "\n[protocol]\nkind = \"symmetry\"\n";
    let cfg = write(dir.path(), "run.toml", &text);
    let out = dir.path().join("out");
    let res = lindprep(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["final_state"]["energy"], 0.0);
    assert!((report["final_state"]["multiplicity"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{DIMER}\n[engine]\nkind = \"trajectories\"\nn_traj = 64\nseed = 17\nimproved_sampling = true\n[schedule]\nt_total = 2.0\n"
    );
    let cfg = write(dir.path(), "run.toml", &text);
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let res = lindprep(&[
            "run",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
        outputs.push((
            fs::read(out.join("series.csv")).unwrap(),
            fs::read(out.join("report.json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let missing = dir.path().join("absent.toml");
    assert_eq!(
        lindprep(&["run", missing.to_str().unwrap(), "--out", out])
            .status
            .code(),
        Some(2)
    );

    let bad_cfg = write(dir.path(), "bad.toml", "[system]\nhubbard = 3\n");
    assert_eq!(
        lindprep(&["run", &bad_cfg, "--out", out]).status.code(),
        Some(2)
    );

    write(
        dir.path(),
        "FCIDUMP",
        "&FCI NORB=2, NELEC=2, MS2=0,\n&END\n 0.5 1 1 1 1\n oops 1 1 0 0\n",
    );
    let parse = write(
        dir.path(),
        "parse.toml",
        "[system]\nfcidump = \"FCIDUMP\"\n[sector]\nn_alpha = 1\nn_beta = 1\n",
    );
    let res = lindprep(&["run", &parse, "--out", out]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 4"));

    let big = write(
        dir.path(),
        "big.toml",
        "[system]\nhubbard = { sites = 9, t = 1.0, u = 4.0 }\n[sector]\nn_alpha = 4\nn_beta = 4\n",
    );
    assert_eq!(
        lindprep(&["run", &big, "--out", out]).status.code(),
        Some(4)
    );

    assert_eq!(lindprep(&["frobnicate"]).status.code(), Some(2));
}
