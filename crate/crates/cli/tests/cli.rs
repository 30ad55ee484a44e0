use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn epcmig() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_epcmig"));
    c.env_remove("EPCMIG_PROFILE_PATH");
    c
}

fn scenarios(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SINGLE: &str = "scenario.kind = hss\n\
                      scenario.virtualization = container\n\
                      scenario.flavor = small\n\
                      scenario.lightpath_km = 0.005\n";

#[test]
fn list_profiles_shows_bundled() {
    let o = epcmig().arg("list-profiles").output().unwrap();
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.lines().any(|l| l == "openroadm"));
    assert!(s.lines().any(|l| l == "cloudlab"));
}

#[test]
fn profile_search_path_adds_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let text = epcmig_core::profile::bundled_text("openroadm")
        .unwrap()
        .replace("profile.name = openroadm", "profile.name = lab")
        .replace(
            "container.hss.restore_overhead_s = 5.62",
            "container.hss.restore_overhead_s = 6.62",
        );
    fs::write(dir.path().join("lab.profile"), text).unwrap();
    let o = epcmig()
        .arg("list-profiles")
        .env("EPCMIG_PROFILE_PATH", dir.path())
        .output()
        .unwrap();
    assert!(stdout(&o).lines().any(|l| l == "lab"));

    let sc = dir.path().join("one.scenario");
    fs::write(&sc, SINGLE).unwrap();
    let restore_s = |profile: &str| -> f64 {
        let o = epcmig()
            .args(["run", sc.to_str().unwrap(), "--profile", profile])
            .env("EPCMIG_PROFILE_PATH", dir.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        let row = stdout(&o).lines().nth(1).unwrap().to_string();
        row.split(',').nth(12).unwrap().parse().unwrap()
    };
    let delta = restore_s("lab") - restore_s("openroadm");
    assert!((delta - 1.0).abs() < 1e-9, "{delta}");
}

#[test]
fn run_writes_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("one.scenario");
    fs::write(&sc, SINGLE).unwrap();
    let csv = dir.path().join("out.csv");
    let o = epcmig()
        .args(["run", sc.to_str().unwrap(), "--csv", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("scenario_id,kind,virt,flavor,length_km,overlay,migration_s"));
    assert!(lines
        .next()
        .unwrap()
        .starts_with("hss-container-small-0.005km,hss,container,small,0.005,vpn,32."));
    assert!(lines.next().is_none());
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let path = scenarios("spgw-no-gtp-utility.scenario");
    let a = epcmig()
        .args(["run", path.to_str().unwrap(), "--trace"])
        .output()
        .unwrap();
    let b = epcmig()
        .args(["run", path.to_str().unwrap(), "--trace"])
        .output()
        .unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let s = stdout(&a);
    assert!(s.contains("# wire spgw-container-small-0.005km"));
    assert!(s.contains("# events spgw-container-small-0.005km"));
}

#[test]
fn failing_scenario_is_reported_and_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("mixed.scenario");
    fs::write(
        &sc,
        "grid.kind = hss, mme\n\
         scenario.virtualization = container\n\
         options.repair_sctp = false\n",
    )
    .unwrap();
    let o = epcmig().args(["run", sc.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).lines().count(), 2, "header plus the HSS row");
    assert!(stderr(&o).contains("mme-container-small-0.005km"));
    assert!(stderr(&o).contains("without SCTP repair mode"));
}

#[test]
fn empty_grid_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("empty.scenario");
    fs::write(&sc, "grid.kind =\nscenario.virtualization = vm\n").unwrap();
    let o = epcmig().args(["run", sc.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 1);
}

#[test]
fn check_exit_status_follows_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("one.scenario");
    fs::write(&sc, SINGLE).unwrap();
    let good = dir.path().join("good.expected");
    fs::write(&good, "hss-container-small-0.005km.migration_s = 32 ±5% @ \"total\"\n").unwrap();
    let o = epcmig()
        .args(["check", sc.to_str().unwrap(), "--expected", good.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("1 passed, 0 failed"));

    let bad = dir.path().join("bad.expected");
    fs::write(&bad, "hss-container-small-0.005km.migration_s = 40 ±5%\n").unwrap();
    let o = epcmig()
        .args(["check", sc.to_str().unwrap(), "--expected", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL (delta -7.98"), "{}", stdout(&o));
}

#[test]
fn bundled_expectations_pass() {
    for (profile, expected) in [("openroadm", "openroadm.expected"), ("cloudlab", "cloudlab.expected")] {
        let o = epcmig()
            .arg("check")
            .arg(scenarios("standard-grid.scenario"))
            .arg("--expected")
            .arg(scenarios(expected))
            .args(["--profile", profile])
            .output()
            .unwrap();
        assert!(o.status.success(), "{profile}: {}", stdout(&o));
    }
    let o = epcmig()
        .arg("check")
        .arg(scenarios("spgw-vm-floating-ip.scenario"))
        .arg("--expected")
        .arg(scenarios("floating-ip.expected"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn dump_then_inspect_blob() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("spgw.scenario");
    fs::write(&sc, SINGLE.replace("hss", "spgw")).unwrap();
    let blob = dir.path().join("spgw.img");
    let o = epcmig()
        .args(["dump-blob", sc.to_str().unwrap(), "--out", blob.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = epcmig()
        .args(["inspect-blob", blob.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("100000000 bytes as moved"), "{s}");
    assert!(s.contains("GTUN"));
    assert!(s.contains("gtp0: restored"));

    let mut bytes = fs::read(&blob).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    fs::write(&blob, bytes).unwrap();
    let o = epcmig()
        .args(["inspect-blob", blob.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("CRC mismatch"), "{}", stderr(&o));
}

#[test]
fn bad_inputs_exit_with_usage_error() {
    let o = epcmig()
        .arg("run")
        .arg(scenarios("standard-grid.scenario"))
        .args(["--profile", "nowhere"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown profile `nowhere`"));

    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.scenario");
    fs::write(
        &sc,
        "scenario.kind = hss\nscenario.virtualization = vm\nprobes.srt_interval_ms = 0\n",
    )
    .unwrap();
    let o = epcmig().args(["run", sc.to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("probes.srt_interval_ms"), "{}", stderr(&o));
}
