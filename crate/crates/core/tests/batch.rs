use epcmig_core::orchestrator::run_scenario;
use epcmig_core::profile::load_profile;
use epcmig_core::report::{
    check_all, compare_expected, parse_expected, run_batch, CompareError, Comparison, CSV_COLUMNS,
};
use epcmig_core::scenario::{parse_scenarios, standard_grid, Scenario, Virtualization};
use epcmig_core::vnf::{Flavor, VnfKind};

fn bundled(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

#[test]
fn standard_grid_file_matches_builtin_grid() {
    let parsed = parse_scenarios(&bundled("standard-grid.scenario")).unwrap();
    assert_eq!(parsed.len(), 36);
    let mut a: Vec<String> = parsed.iter().map(|s| s.id.clone()).collect();
    let mut b: Vec<String> = standard_grid().into_iter().map(|s| s.id).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn grid_csv_has_one_sorted_row_per_scenario() {
    let p = load_profile("openroadm").unwrap();
    let mut grid = standard_grid();
    grid.reverse();
    let out = run_batch(&grid, &p);
    assert!(out.is_success());
    let csv = out.csv();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    let ids: Vec<String> = rd.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(ids.len(), 36);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
}

#[test]
fn csv_cells_follow_virtualization() {
    let p = load_profile("openroadm").unwrap();
    let scs = [
        Scenario::new(VnfKind::Spgw, Virtualization::Container, Flavor::Small, 0.005),
        Scenario::new(VnfKind::Hss, Virtualization::Vm, Flavor::Small, 0.005),
    ];
    let out = run_batch(&scs, &p);
    let csv = out.csv();
    let mut rd = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    let hss = &rows[0];
    assert_eq!(&hss[0], "hss-vm-small-0.005km");
    assert_eq!(&hss[9], "", "no UE recovery for the HSS");
    assert_eq!(&hss[10], "");
    assert_eq!(&hss[13], "3.240000");
    assert_eq!(&hss[8], "3470000000");
    let spgw = &rows[1];
    assert_eq!(&spgw[9], "2.000000");
    assert_eq!(&spgw[13], "");
    assert_eq!(&spgw[16], "");
}

#[test]
fn comparison_contract() {
    let p = load_profile("openroadm").unwrap();
    let r = run_scenario(
        &Scenario::new(VnfKind::Hss, Virtualization::Container, Flavor::Small, 0.005),
        &p,
    )
    .unwrap();
    let recs = parse_expected(
        "hss-container-small-0.005km.migration_s = 32 ±5%\n\
         hss-vm-small-0.005km.migration_s = 32 ±5%\n\
         hss-container-small-0.005km.live_s = 1\n",
    )
    .unwrap();
    let by_key = |k: &str| {
        recs.iter()
            .find(|e| e.scenario_id == k && e.metric != "live_s")
            .unwrap()
    };
    assert_eq!(
        compare_expected(&r, by_key("hss-container-small-0.005km")),
        Ok(Comparison::Pass)
    );
    assert!(matches!(
        compare_expected(&r, by_key("hss-vm-small-0.005km")),
        Err(CompareError::KeyMismatch { .. })
    ));
    let live = recs.iter().find(|e| e.metric == "live_s").unwrap();
    assert!(matches!(
        compare_expected(&r, live),
        Err(CompareError::Unavailable { .. })
    ));

    let results = check_all(std::slice::from_ref(&r), &recs);
    assert_eq!(results.iter().filter(|c| c.passed()).count(), 1);
}

#[test]
fn every_bundled_expectation_names_its_source() {
    for f in ["openroadm.expected", "cloudlab.expected", "floating-ip.expected"] {
        for rec in parse_expected(&bundled(f)).unwrap() {
            assert!(!rec.source.is_empty(), "{f}:{} has no source", rec.line);
        }
    }
}
