use levy_gqic::experiment::{Case, CriterionPair, Design, ExperimentConfig};
use levy_gqic::model::{registry, registry_list, DRIFT_NAMES, SCALE_NAMES};
use levy_gqic::sde::{euler_path, TrueModelSpec, DEFAULT_REFINE};
use levy_gqic::selection::SelectionConfig;
use levy_gqic::{run_experiment, stepwise_select, DriftCriterionKind, RngStream, SamplePath, ScaleCriterionKind};

fn case_path(case: Case, n: usize, h: f64, stream: u64) -> SamplePath {
    let truth = TrueModelSpec::benchmark().build().unwrap();
    euler_path(&truth, &case.noise(), n, h, DEFAULT_REFINE, &RngStream::new(2024, stream)).unwrap()
}

fn config() -> SelectionConfig {
    SelectionConfig { opt: Default::default(), trunc_kappa: 0.2, full_grid: false }
}

#[test]
fn same_path_same_outcome() {
    let path = case_path(Case::Iii, 3000, 0.01, 0);
    let scales = registry_list(&SCALE_NAMES).unwrap();
    let drifts = registry_list(&DRIFT_NAMES).unwrap();
    for (sk, dk) in [
        (ScaleCriterionKind::GQAIC1, DriftCriterionKind::GQAIC2),
        (ScaleCriterionKind::GQBIC1_SHARP, DriftCriterionKind::GQBIC2),
    ] {
        let a = stepwise_select(&path, &scales, &drifts, sk, dk, &config()).unwrap();
        let b = stepwise_select(&path, &scales, &drifts, sk, dk, &config()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.evaluations, scales.len() + drifts.len());
    }
}

#[test]
fn duplicating_the_winner_keeps_the_class() {
    let drifts = registry_list(&DRIFT_NAMES).unwrap();
    for stream in 0..3 {
        let path = case_path(Case::I, 2000, 0.01, stream);
        let scales = registry_list(&SCALE_NAMES).unwrap();
        let kinds = (ScaleCriterionKind::GQBIC1, DriftCriterionKind::GQBIC2);
        let base = stepwise_select(&path, &scales, &drifts, kinds.0, kinds.1, &config()).unwrap();
        let winner = &base.scale.names[base.scale.chosen];

        let mut extended = scales.clone();
        extended.push(registry(winner).unwrap());
        let again = stepwise_select(&path, &extended, &drifts, kinds.0, kinds.1, &config()).unwrap();
        assert_eq!(&again.scale.names[again.scale.chosen], winner);
        assert_eq!(again.scale.chosen, base.scale.chosen);
        assert_eq!(again.drift.chosen, base.drift.chosen);
    }
}

fn small_experiment() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Case::Ii, vec![Design { h: 0.01, t_end: 5.0 }, Design { h: 0.005, t_end: 5.0 }], 8, 99);
    cfg.criteria = vec![CriterionPair::preset("gqaic").unwrap(), CriterionPair::preset("gqbic_sharp").unwrap()];
    cfg
}

#[test]
fn experiment_ignores_thread_count() {
    let cfg = small_experiment();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.blocks, four.blocks);
    assert_eq!(one.warnings, four.warnings);
}

#[test]
fn marginals_add_up() {
    let table = run_experiment(&small_experiment()).unwrap();
    for block in &table.blocks {
        let selected = block.total() - block.failed;
        assert_eq!(block.total(), 8);
        assert_eq!(block.scale_marginal().iter().sum::<u64>(), selected);
        assert_eq!(block.drift_marginal().iter().sum::<u64>(), selected);
        for (s, m) in block.scale_marginal().iter().enumerate() {
            assert_eq!(*m, block.counts.iter().map(|row| row[s]).sum::<u64>());
        }
    }
}

#[test]
fn true_pair_frequency_grows_with_horizon() {
    let short = Design { h: 0.01, t_end: 10.0 };
    let long = Design { h: 0.01, t_end: 50.0 };
    let mut cfg = ExperimentConfig::preset(Case::I, vec![short, long], 100, 4242);
    let gqbic = CriterionPair::preset("gqbic").unwrap();
    cfg.criteria = vec![gqbic];
    let table = run_experiment(&cfg).unwrap();
    // Scale2 and Drift2 sit at index 1 of their lists
    let p_short = table.block(short, gqbic).unwrap().frequency(1, 1);
    let p_long = table.block(long, gqbic).unwrap().frequency(1, 1);
    let se = ((p_short * (1.0 - p_short) + p_long * (1.0 - p_long)) / 100.0).sqrt();
    assert!(p_long >= p_short - 2.0 * se, "T = 10: {p_short:.3}, T = 50: {p_long:.3}, se {se:.3}");
}
