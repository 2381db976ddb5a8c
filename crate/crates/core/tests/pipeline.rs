use std::collections::BTreeSet;

use multiko_core::competition::{compete, select_discoveries, TuningParams};
use multiko_core::knockoffs::{prepare_knockoffs, verify_gram, BatchPartition, PartitionMethod};
use multiko_core::lasso::{grid_count, GridSpec, ScoringPlan};
use multiko_core::seed::{derived_rng, rng_from};
use multiko_core::simulate::{
    aggregate, generate_dataset, run_experiment, run_replicate, score_design, ExperimentConfig, ExperimentRecord,
    Method,
};
use proptest::prelude::*;

fn record(method: &str, replicate: usize, fdp: f64, power: f64) -> ExperimentRecord {
    ExperimentRecord {
        method: method.into(),
        replicate,
        alpha: 0.1,
        status: "ok".into(),
        discoveries: 1,
        fdp: Some(fdp),
        power: Some(power),
        d: Some(1),
        c: Some(0.5),
        lambda: Some(0.5),
    }
}

#[test]
fn short_designs_are_extended_before_construction() {
    let cfg = ExperimentConfig::new(50, 20, 4, 3.0, vec![3]);
    let (data, _) = generate_dataset(&cfg, &mut rng_from(1)).unwrap();
    let partition = BatchPartition::single(20);
    let (ext, ks) = prepare_knockoffs(&data, 3, &partition, None, &mut rng_from(2)).unwrap();
    assert_eq!(ext.n(), 80);
    assert_eq!(ext.n_original(), 50);
    assert!(ks.sigma_hat().is_some());
    assert!(verify_gram(&ext, &ks, 1e-8).pass);

    let plan = ScoringPlan::new(&ext, &ks).unwrap();
    let grid = GridSpec::new(grid_count(5, 3, 20), 1e-3).unwrap();
    let table = plan.score(ext.y(), grid, &mut rng_from(3)).unwrap();
    assert_eq!((table.p(), table.d()), (20, 3));
    assert!((0..20).all(|i| (1..=4).contains(&table.rank(i))));
}

#[test]
fn strong_signals_are_found() {
    let cfg = ExperimentConfig::new(150, 30, 5, 10.0, vec![3]);
    let (data, truth) = generate_dataset(&cfg, &mut rng_from(4)).unwrap();
    let grid = GridSpec::new(grid_count(5, 3, 30), 1e-3).unwrap();
    let scored = score_design(&data, &BTreeSet::from([3]), 1, PartitionMethod::Single, grid, 5).unwrap();
    let outcome = compete(scored.table(3).unwrap(), &TuningParams::mirror(3).unwrap(), &mut rng_from(6)).unwrap();
    let found = select_discoveries(&outcome, 0.2).discoveries;
    let hits = truth.support.iter().filter(|i| found.contains(i)).count();
    assert!(hits >= 4, "found {found:?}, truth {:?}", truth.support);
}

#[test]
fn replicates_do_not_depend_on_each_other() {
    let mut cfg = ExperimentConfig::new(60, 12, 3, 4.0, vec![1, 2]);
    cfg.methods = vec![Method::KnockoffPlus, Method::Max { d: Some(2) }, Method::MultiKnockoffSelect];
    cfg.alphas = vec![0.1, 0.3];
    cfg.replicates = 3;
    cfg.m_b = 3;
    cfg.seed = 9;
    let all = run_experiment(&cfg).unwrap();
    assert_eq!(run_replicate(&cfg, 2).unwrap(), all[2]);
    assert_ne!(all[0].records, all[1].records);
    assert_eq!(all[0].records.len(), 3 * 2);
}

#[test]
fn aggregate_pairs_replicates() {
    let records = vec![
        record("a", 0, 0.0, 1.0),
        record("a", 1, 0.5, 0.5),
        record("b", 0, 0.0, 0.5),
        record("b", 1, 0.0, 0.5),
    ];
    let c = aggregate(&records);
    let a = c.point("a", 0.1).unwrap();
    assert!((a.fdr - 0.25).abs() < 1e-12);
    assert!((a.fdr_se - 0.25).abs() < 1e-12);
    assert_eq!(c.differences.len(), 1);
    let diff = &c.differences[0];
    assert_eq!(diff.pairs, 2);
    assert!((diff.mean - 0.25).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn extended_batched_knockoffs_match_their_gram(seed in any::<u64>(), d in 1usize..4, b in 1usize..5, extra in 2usize..8) {
        let p = 12;
        let cfg = ExperimentConfig::new(p + extra, p, 2, 2.0, vec![d]);
        let (data, _) = generate_dataset(&cfg, &mut rng_from(seed)).unwrap();
        let method = if b == 1 { PartitionMethod::Single } else { PartitionMethod::Clustered };
        let partition = BatchPartition::build(method, data.x(), b, &mut rng_from(seed)).unwrap();
        let (ext, ks) = prepare_knockoffs(&data, d, &partition, None, &mut derived_rng(seed, &[1])).unwrap();
        prop_assert_eq!(ext.n(), (d + 1) * p);
        prop_assert!(verify_gram(&ext, &ks, 1e-8).pass);
        prop_assert!(ks.original_discrepancy() <= 1e-8);
        prop_assert!(ks.per_batch_s0().iter().all(|&s| s > 0.0 && s <= 1.0));
    }
}
