use echoweight::eval::{
    run_cells, run_grid, split, Condition, ExperimentGrid, PipelineSettings, ResultTable,
};
use echoweight::model::TrainConfig;
use echoweight::synth::{generate, LabelProbs, SynthConfig};
use echoweight::Execution;

fn corpus() -> echoweight::corpus::Corpus {
    let mut cfg = SynthConfig {
        n_news: 120,
        n_users: 300,
        lurker_signal: 0.9,
        lurker_signal_scale: 0.03,
        vocab_size: 200,
        words_per_news: 15,
        comments_per_news: 1,
        words_per_comment: 5,
        text_signal: 0.2,
        seed: 11,
        ..Default::default()
    };
    cfg.interact_prob.lurker = LabelProbs { fake: 0.005, real: 0.005 };
    generate(&cfg).unwrap().0
}

fn settings() -> PipelineSettings {
    PipelineSettings {
        train: TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.2,
            h_u: 8,
            h_f: 8,
            early_stop_patience: 5,
            ..Default::default()
        },
        encoder: echoweight::encode::EncoderConfig { dim: 256, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn single_condition_single_seed_gives_one_row() {
    let grid = ExperimentGrid {
        conditions: vec![Condition::BinaryUn],
        alphas: vec![],
        seeds: vec![3],
        split_ratio: 0.75,
    };
    let t = run_grid(&corpus(), &grid, &settings(), Execution::Sequential).unwrap();
    assert_eq!(t.rows.len(), 1);
    let r = &t.rows[0];
    assert_eq!((r.condition, r.alpha, r.seed_count, r.std_acc), (Condition::BinaryUn, None, 1, 0.0));
    assert_eq!(r.gain_vs_binary_un, Some(0.0));
    assert!((0.0..=1.0).contains(&r.mean_acc));
}

#[test]
fn alpha_zero_cells_equal_binary_un_cells() {
    let grid = ExperimentGrid {
        conditions: vec![Condition::BinaryUn, Condition::EdgeReweight, Condition::SampleReweight],
        alphas: vec![0.0],
        seeds: vec![0, 1],
        split_ratio: 0.75,
    };
    let cells = run_cells(&corpus(), &grid, &settings(), Execution::Parallel).unwrap();
    for seed in [0, 1] {
        let of = |c: Condition| cells.iter().find(|x| x.condition == c && x.seed == seed).unwrap();
        let b = of(Condition::BinaryUn);
        for c in [Condition::EdgeReweight, Condition::SampleReweight] {
            assert_eq!(of(c).test_accuracy.to_bits(), b.test_accuracy.to_bits());
            assert_eq!(of(c).log, b.log);
        }
    }
    let t = ResultTable::from_cells(&grid, &cells);
    assert!(t.rows.iter().all(|r| r.gain_vs_binary_un == Some(0.0)));
}

#[test]
fn grid_output_is_independent_of_execution_strategy() {
    let grid = ExperimentGrid {
        alphas: vec![1.0],
        seeds: vec![0, 1],
        ..Default::default()
    };
    let c = corpus();
    let seq = run_grid(&c, &grid, &settings(), Execution::Sequential).unwrap();
    let par = run_grid(&c, &grid, &settings(), Execution::Parallel).unwrap();
    let csv = |t: &ResultTable| {
        let mut v = Vec::new();
        t.write_csv(&mut v).unwrap();
        v
    };
    assert_eq!(csv(&seq), csv(&par));
    assert_eq!(seq.rows.len(), 4);
    for r in &seq.rows {
        let b = seq.get(Condition::BinaryUn, None).unwrap().mean_acc;
        assert_eq!(r.gain_vs_binary_un, Some(r.mean_acc - b));
    }
}

#[test]
fn split_returns_disjoint_sorted_ids() {
    let c = corpus();
    let (train, test) = split(&c, 0.75, 4).unwrap();
    assert_eq!(train.len(), 90);
    assert_eq!(test.len(), 30);
    assert!(train.windows(2).all(|w| w[0] < w[1]));
    assert!(test.iter().all(|id| !train.contains(id)));
}
