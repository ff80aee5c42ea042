//! End-to-end runs of the `pstrat` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn pstrat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pstrat"))
        .args(args)
        .env_remove("PSTRAT_SEED")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a preset into `<dir>/<preset>/` and returns that directory.
fn simulate(dir: &Path, preset: &str, n: usize, seed: u64) -> PathBuf {
    let d = dir.join(preset);
    ok(&pstrat(&["simulate", "--preset", preset, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&d)]));
    d
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn schema() -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json")).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &str) {
    let errs: Vec<String> = v.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errs.is_empty(), "{what}: {errs:?}");
}

#[test]
fn oracle_pipeline_agrees_with_cace_iv() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "iv_compliance", 100_000, 1);
    let orc = tmp.path().join("orc");
    ok(&pstrat(&["oracle", "--input", s(&sim.join("table.csv")), "--stratum", "compliers", "--out", s(&orc)]));
    let est = tmp.path().join("est");
    ok(&pstrat(&["cace-iv", "--input", s(&sim.join("data.csv")), "--out", s(&est)]));
    let truth = report(&orc)["reports"][0]["point"].as_f64().unwrap();
    let r = &report(&est)["reports"][0];
    let (point, se) = (r["point"].as_f64().unwrap(), r["se"].as_f64().unwrap());
    assert!((point - truth).abs() < 3.0 * se, "{point} vs {truth} (se {se})");
}

#[test]
fn sens_gbh_grid_writes_sixteen_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "gbh_monotone", 1500, 3);
    let out = tmp.path().join("g");
    ok(&pstrat(&[
        "sens-gbh", "--input", s(&sim.join("data.csv")), "--coding", "adherence", "--monotonicity", "s1-ge-s0",
        "--beta-from", "-1.5", "--beta-to", "0", "--beta-steps", "16", "--boot", "1000", "--seed", "7", "--out", s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 17);
    assert!(lines[0].starts_with("beta,estimate,ci_low,ci_high"));
    assert!(lines[1].starts_with("-1.5,"));
    assert!(lines[16].starts_with("0,"));
    assert_eq!(report(&out)["artifacts"][0], "curve.csv");
}

#[test]
fn nonpositive_complier_share_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // Treated take the experimental drug 30% of the time, controls avoid it
    // 50% of the time: p1 + p0 - 1 = -0.2.
    let mut csv = String::from("id,trt,event,y\n");
    for i in 0..20 {
        let (trt, taken) = if i < 10 { (1, u8::from(i < 3)) } else { (0, u8::from(i < 15)) };
        csv.push_str(&format!("{i},{trt},{taken},{}\n", i as f64 * 0.1));
    }
    let f = tmp.path().join("d.csv");
    std::fs::write(&f, csv).unwrap();
    let out = pstrat(&["cace-iv", "--input", s(&f), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PositivityViolation"));
    assert!(!tmp.path().join("o/report.json").exists());
}

#[test]
fn validation_errors_exit_2_with_typed_names() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<(Vec<String>, &str)> = vec![
        (vec!["itt".into(), "--input".into(), s(&tmp.path().join("missing.csv")).into()], "Io"),
        (vec!["simulate".into(), "--preset".into(), "pi_baseline".into()], "InvalidConfig"),
        (vec!["simulate".into(), "--preset".into(), "nope".into(), "--seed".into(), "1".into()], "UnknownPreset"),
    ];
    for (args, name) in cases {
        let a: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = pstrat(&a);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(&format!("error: {name}:")), "{args:?}: {err}");
    }
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "id,trt,event,y\n1,2,0,1.0\n").unwrap();
    let out = pstrat(&["itt", "--input", s(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NonBinaryTreatment"));
    // Short flags and unknown subcommands are rejected by the parser.
    assert_eq!(pstrat(&["itt", "-i", "x.csv"]).status.code(), Some(2));
    assert_eq!(pstrat(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let run = |dir: &Path, env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_pstrat"));
        c.args(["simulate", "--preset", "pi_baseline", "--n", "200", "--out", s(dir)]);
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        c.env_remove("PSTRAT_SEED");
        if let Some(e) = env {
            c.env("PSTRAT_SEED", e);
        }
        c.output().unwrap()
    };
    ok(&run(&a, Some("11"), None));
    ok(&run(&b, None, Some("11")));
    assert_eq!(report(&a)["seed"], 11);
    assert_eq!(std::fs::read(a.join("table.csv")).unwrap(), std::fs::read(b.join("table.csv")).unwrap());
    // The flag wins over the environment.
    ok(&run(&b, Some("12"), Some("11")));
    assert_eq!(report(&b)["seed"], 11);
    assert_eq!(run(&a, Some("x"), None).status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "mixture_monotone", 400, 5);
    let data = sim.join("data.csv");
    let out = tmp.path().join("o");
    let runs: Vec<Vec<&str>> = vec![
        vec!["bayes", "--iters", "150", "--burn-in", "100", "--chains", "3", "--reduced"],
        vec!["mi", "--m", "10", "--write-imputations", "--boot", "20"],
        vec!["sens-gbh", "--boot", "50", "--beta-steps", "4"],
    ];
    for extra in runs {
        let mut snapshots = Vec::new();
        for threads in ["1", "1", "4"] {
            let mut args = extra.clone();
            args.extend(["--input", s(&data), "--seed", "9", "--threads", threads, "--out", s(&out)]);
            ok(&pstrat(&args));
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.file_name().unwrap() != "run_meta.json")
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
                .collect();
            files.sort();
            snapshots.push(files);
            std::fs::remove_dir_all(&out).unwrap();
        }
        assert!(snapshots[0].len() >= 2, "{extra:?}");
        assert!(snapshots.windows(2).all(|w| w[0] == w[1]), "{extra:?} differs across runs/threads");
    }
    // simulate itself
    let t: Vec<Vec<u8>> = ["1", "4"]
        .iter()
        .map(|th| {
            ok(&pstrat(&["simulate", "--preset", "staged_qu", "--n", "800", "--seed", "2", "--threads", th, "--out", s(&out)]));
            std::fs::read(out.join("table.csv")).unwrap()
        })
        .collect();
    assert_eq!(t[0], t[1]);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = simulate(tmp.path(), "gbh_monotone", 600, 4);
    let cfg = tmp.path().join("run.conf");
    std::fs::write(
        &cfg,
        format!(
            "# sensitivity grid\ninput = {}\ncoding = adherence\nmonotonicity = s1-ge-s0\nbeta_from = -1.0\nbeta-to = 0\nbeta-steps = 4\n",
            s(&sim.join("data.csv"))
        ),
    )
    .unwrap();
    let out = tmp.path().join("o");
    ok(&pstrat(&["sens-gbh", "--config", s(&cfg), "--out", s(&out)]));
    assert_eq!(std::fs::read_to_string(out.join("curve.csv")).unwrap().lines().count(), 5);
    let r = report(&out);
    assert_eq!(r["config"]["beta_from"], -1.0);
    assert_eq!(r["config"]["monotonicity"], "s1-ge-s0");
    ok(&pstrat(&["sens-gbh", "--config", s(&cfg), "--beta-steps", "6", "--out", s(&out)]));
    assert_eq!(std::fs::read_to_string(out.join("curve.csv")).unwrap().lines().count(), 7);
    assert_eq!(report(&out)["config"]["beta_steps"], 6);

    std::fs::write(&cfg, "beta-steps 4\n").unwrap();
    assert_eq!(pstrat(&["sens-gbh", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn every_subcommand_writes_a_schema_valid_report() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let validator = schema();
    let pi = simulate(t, "pi_baseline", 600, 1).join("data.csv");
    let iv = simulate(t, "iv_compliance", 600, 1).join("data.csv");
    let gbh = simulate(t, "gbh_monotone", 600, 1).join("data.csv");
    let cross = simulate(t, "crossworld_independent", 600, 1).join("data.csv");
    let binary = simulate(t, "binary_event", 800, 1).join("data.csv");
    let staged = simulate(t, "staged_qu", 500, 1).join("data.csv");
    let obs = simulate(t, "confounded_obs", 500, 1).join("data.csv");
    let obs_bin = simulate(t, "confounded_binary", 800, 1).join("data.csv");
    let table = t.join("pi_baseline/table.csv");

    let gbh_coding = ["--coding", "adherence", "--monotonicity", "s1-ge-s0"];
    let none = ["--coding", "adherence-none"];
    let bayes = ["--iters", "100", "--burn-in", "100", "--chains", "2", "--reduced"];
    let cases: Vec<(&str, &Path, Vec<&str>)> = vec![
        ("summary", &pi, vec![]),
        ("itt", &pi, vec![]),
        ("naive", &pi, vec![]),
        ("cace-iv", &iv, vec![]),
        ("sens-binary", &binary, vec!["--param", "tau", "--from", "0.5", "--to", "2", "--steps", "4"]),
        ("sens-binary", &binary, vec!["--param", "gamma", "--value", "0.3"]),
        ("sens-binary", &binary, vec!["--param", "beta", "--value", "-0.5"]),
        ("sens-gbh", &gbh, gbh_coding.to_vec()),
        ("sens-cace", &cross, [none.as_slice(), &["--pi01", "0.1", "--beta0", "0.2", "--beta1", "-0.2"]].concat()),
        ("sace", &pi, vec!["--coding", "event", "--alpha", "-0.2"]),
        ("bounds", &pi, vec!["--coding", "event"]),
        ("t1", &pi, vec![]),
        ("t2", &pi, vec![]),
        ("t3", &cross, none.to_vec()),
        ("t4", &cross, none.to_vec()),
        ("pscore", &pi, vec![]),
        ("mi", &pi, vec!["--m", "5"]),
        ("mi-extended", &staged, [none.as_slice(), &["--m", "4", "--stratum", "S*0"]].concat()),
        ("method-a", &staged, [none.as_slice(), &["--draws", "20"]].concat()),
        ("method-b", &staged, [none.as_slice(), &["--draws", "20"]].concat()),
        ("bayes", &pi, bayes.to_vec()),
        ("bayes-sweep", &pi, bayes.to_vec()),
        ("covdist", &pi, vec!["--covariate", "x1", "--stratum", "S00"]),
        ("obs-tau", &obs_bin, vec!["--tau", "1.2"]),
        ("obs-ipw", &obs, [none.as_slice(), &["--draws", "20", "--method", "b"]].concat()),
        ("oracle", &table, vec!["--stratum", "S00"]),
    ];
    let mut seen = std::collections::BTreeSet::new();
    for (i, (cmd, input, extra)) in cases.iter().enumerate() {
        let out = t.join(format!("r{i}"));
        let mut args = vec![*cmd, "--input", s(input), "--seed", "3", "--out", s(&out)];
        args.extend(extra.iter());
        ok(&pstrat(&args));
        let doc = report(&out);
        assert_valid(&validator, &doc, cmd);
        assert_eq!(doc["command"], *cmd);
        for a in doc["artifacts"].as_array().unwrap() {
            assert!(out.join(a.as_str().unwrap()).exists());
        }
        seen.insert(*cmd);
    }
    let sim_report = report(&t.join("pi_baseline"));
    assert_valid(&validator, &sim_report, "simulate");
    seen.insert("simulate");
    assert_eq!(seen.len(), 25);
}
