use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_uipq-lab");

fn lab(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).output().expect("run uipq-lab")
}

#[test]
fn exit_codes() {
    assert_eq!(lab(&["enumerate", "--n-max", "4"]).status.code(), Some(1), "truncation at S is reported as a failure");
    assert_eq!(lab(&["verify-formulas", "--n-max", "100", "--l-max", "2"]).status.code(), Some(0));
    assert_eq!(lab(&["enumerate", "--n-max", "9"]).status.code(), Some(2));
    assert_eq!(lab(&["tv-convergence", "--radius", "3"]).status.code(), Some(2));
    assert_eq!(lab(&["spine-scaling", "--n", "10"]).status.code(), Some(2));
    assert_eq!(lab(&["sample", "--kind", "uipq-ball", "--epsilon", "0"]).status.code(), Some(2));
    assert_eq!(lab(&["--threads", "0", "enumerate"]).status.code(), Some(2));
    assert_eq!(lab(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn csv_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let out = lab(&["verify-formulas", "--n-max", "64", "--l-max", "2", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let body = std::fs::read_to_string(&path).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("kind,name,key,at,value,error,reference,abs_err,rel_err,verdict"));
    assert!(body.lines().any(|l| l.starts_with("check,") && l.ends_with(",expected-fail")));
}

#[test]
fn json_report_shape() {
    let out = lab(&["enumerate", "--n-max", "3", "--seed", "7"]);
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[0]["seed"], 7);
    assert_eq!(lines[0]["parameters"]["n_max"], 3);
    let last = lines.last().unwrap();
    assert_eq!(last["type"], "summary");
    assert_eq!(last["verdict"], "fail");
    assert!(last["fail"].as_u64().unwrap() >= 1);
}

#[test]
fn golden_inventories() {
    let dir = tempfile::tempdir().unwrap();
    lab(&["enumerate", "--n-max", "4", "--golden", dir.path().to_str().unwrap()]);
    for (n, d) in [(1, 2), (2, 9), (3, 54), (4, 378)] {
        let body = std::fs::read_to_string(dir.path().join(format!("codes-n{n}.txt"))).unwrap();
        assert_eq!(body.lines().count(), d, "n = {n}");
    }
}

#[test]
fn dump_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let out = lab(&["sample", "--kind", "rho-hat", "--label", "3", "--samples", "50", "--dump", path.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(2));
    let body = std::fs::read_to_string(&path).unwrap();
    let rows: Vec<serde_json::Value> = body.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 50);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["replica"], i);
        assert_eq!(r["kind"], "rho-hat");
        let pair: uipq_core::ContourPair = r["payload"].as_str().unwrap().parse().unwrap();
        assert_eq!(uipq_core::tree_core::decode_contour(&pair).unwrap().root_label(), 3);
    }
    assert_eq!(lab(&["sample", "--samples", "10", "--dump", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn cache_directory_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        Command::new(BIN)
            .args(["verify-formulas", "--n-max", "80", "--l-max", "3"])
            .env("UIPQ_LAB_CACHE", dir.path())
            .output()
            .unwrap()
    };
    let first = run();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(files.iter().any(|f| f.starts_with("counts-v1-")), "{files:?}");
    let second = run();
    assert_eq!(first.stdout, second.stdout);
    // a corrupted entry is ignored, not trusted
    for f in &files {
        std::fs::write(dir.path().join(f), "{\"version\":1}").unwrap();
    }
    assert_eq!(run().stdout, first.stdout);
}
