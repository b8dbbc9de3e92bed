mod common;

use common::{config, SMALL};
use hydronets::experiment::{
    fit_flat, fit_hydronet, prepare, run_all_basins, run_depth_experiment, run_scarcity,
    ScarcityConfig, HYDRONETS, LINEAR,
};
use hydronets::metrics::evaluate;

#[test]
fn depth_table_has_two_rows_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(SMALL, dir.path());
    let data = prepare(&cfg).unwrap();
    let out = run_depth_experiment(&cfg, &data).unwrap();
    assert_eq!(out.table.rows.len(), 2 * data.graph.height().unwrap());
    let keys: Vec<&str> = out.table.rows.iter().map(|r| r.key.as_str()).collect();
    assert_eq!(keys, ["depth=1", "depth=1", "depth=2", "depth=2", "depth=3", "depth=3"]);
    assert_eq!(out.runs.len(), 6 * cfg.seeds.len());
}

#[test]
fn largest_scarcity_count_matches_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL, dir.path());
    let data = prepare(&cfg).unwrap();
    let full = data.train.len();
    cfg.seeds = vec![5];
    cfg.scarcity = Some(ScarcityConfig {
        counts: vec![60, full],
        period: 1,
    });
    let out = run_scarcity(&cfg, &data).unwrap();
    assert_eq!(out.table.rows.len(), 4);
    assert!(out.table.rows.iter().all(|r| r.std == 0.0 && r.n_seeds == 1));

    let drain = data.graph.drain().unwrap();
    let key = format!("train={full}");
    let hn = fit_hydronet(&cfg, &data.graph, drain, &data.train, 5).unwrap();
    let hn_report = evaluate(&hn, &data.test, Some(&data.norm)).unwrap();
    let row = out.table.find(&key, drain, HYDRONETS).unwrap();
    assert_eq!(row.mean, hn_report.get(drain).unwrap().r2_persist);

    let flat = fit_flat(&cfg, &data, drain, cfg.flat_depth, &data.train, 5).unwrap();
    let flat_report = evaluate(&flat, &data.test, Some(&data.norm)).unwrap();
    let row = out.table.find(&key, drain, LINEAR).unwrap();
    assert_eq!(row.mean, flat_report.get(drain).unwrap().r2_persist);
}

#[test]
fn all_basins_diff_is_difference_of_means() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL, dir.path());
    cfg.basins = vec!["b01".into(), "b04".into()];
    let data = prepare(&cfg).unwrap();
    let out = run_all_basins(&cfg, &data).unwrap();
    assert_eq!(out.table.rows.len(), 6);
    for b in ["b01", "b04"] {
        let hn = out.table.find("all", b, HYDRONETS).unwrap();
        let lin = out.table.find("all", b, LINEAR).unwrap();
        let diff = out.table.find("all", b, "diff").unwrap();
        assert!((diff.mean - (hn.mean - lin.mean)).abs() < 1e-15);
    }
    let (_, table) = &out.companions[0];
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn unknown_target_basin_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(SMALL, dir.path());
    cfg.basins = vec!["zz".into()];
    let data = prepare(&cfg).unwrap();
    assert!(run_all_basins(&cfg, &data).is_err());
}
