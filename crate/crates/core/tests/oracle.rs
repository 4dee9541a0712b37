use echoweight::corpus::InteractionMatrix;
use echoweight::participation::{Profiles, Thresholds};
use echoweight::synth::{generate, oracle_edge_reweight, oracle_weights, LabelProbs, SynthConfig};
use echoweight::weighting::{
    batch_sample_weights, edge_reweight, omega_per_row, sample_factors, weight_vector,
    GroupCoefficients, NormKind,
};
use echoweight::Execution;
use proptest::prelude::*;

fn small_corpus(seed: u64, n_news: usize, n_users: usize) -> SynthConfig {
    let mut cfg = SynthConfig {
        n_news,
        n_users,
        lurker_signal: 0.3,
        lurker_signal_scale: 0.05,
        vocab_size: 50,
        words_per_news: 3,
        comments_per_news: 0,
        words_per_comment: 0,
        seed,
        ..Default::default()
    };
    cfg.interact_prob.lurker = LabelProbs { fake: 0.005, real: 0.005 };
    cfg.interact_prob.engager = LabelProbs { fake: 0.05, real: 0.04 };
    cfg.interact_prob.contributor = LabelProbs { fake: 0.2, real: 0.3 };
    cfg
}

#[test]
fn fifty_corpora_match_the_brute_force_oracle_exactly() {
    let start = std::time::Instant::now();
    let coeffs = GroupCoefficients::default();
    for seed in 0..50u64 {
        let n_news = 20 + (seed as usize * 37) % 180;
        let n_users = 50 + (seed as usize * 53) % 250;
        let (corpus, _) = generate(&small_corpus(seed, n_news, n_users)).unwrap();
        let profiles = Profiles::compute(&corpus, &Thresholds::default(), Execution::Parallel);
        let matrix = InteractionMatrix::binary(&corpus);
        for (alpha, kind) in [(1.0, NormKind::L2), (0.5, NormKind::L1), (2.0, NormKind::Max)] {
            let fast = weight_vector(&matrix, &profiles, &coeffs, alpha, kind).unwrap();
            let slow = oracle_weights(&corpus, &profiles, &coeffs, alpha, kind);
            assert_eq!(fast.omega.len(), slow.omega.len());
            for (i, (a, b)) in fast.omega.iter().zip(&slow.omega).enumerate() {
                assert_eq!(a.to_bits(), b.to_bits(), "seed {seed} row {i}");
            }
            assert_eq!(fast.norm.to_bits(), slow.norm.to_bits(), "seed {seed}");
            let edge = edge_reweight(&matrix, &fast).unwrap().to_dense();
            let naive = oracle_edge_reweight(&corpus, &slow);
            assert_eq!(edge.len(), naive.len());
            for (ra, rb) in edge.iter().zip(&naive) {
                for (a, b) in ra.iter().zip(rb) {
                    assert_eq!(a.to_bits(), b.to_bits(), "seed {seed}");
                }
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "{:?}", start.elapsed());
}

#[test]
fn batch_weights_by_id_equal_factors_of_the_batch_omega() {
    let (corpus, _) = generate(&small_corpus(3, 40, 120)).unwrap();
    let profiles = Profiles::compute(&corpus, &Thresholds::default(), Execution::Sequential);
    let matrix = InteractionMatrix::binary(&corpus);
    let c = GroupCoefficients::default();
    let omega = omega_per_row(&matrix, &profiles, &c).unwrap();
    let rows = [5usize, 0, 17, 33, 9];
    let ids: Vec<&str> = rows.iter().map(|&i| corpus.news[i].id.as_str()).collect();
    let got = batch_sample_weights(&ids, &matrix, &profiles, &c, 1.0, NormKind::L2).unwrap();
    let batch: Vec<f64> = rows.iter().map(|&i| omega[i]).collect();
    assert_eq!(got, sample_factors(&batch, 1.0, NormKind::L2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_equivalence_holds_for_random_configs(
        seed in 0u64..10_000,
        n_news in 1usize..60,
        n_users in 1usize..80,
        alpha in 0.0f64..3.0,
        l in 0.0f64..1.0,
    ) {
        let mut cfg = small_corpus(seed, n_news, n_users);
        cfg.interact_prob.contributor = LabelProbs { fake: 0.5, real: 0.5 };
        cfg.interact_prob.engager = LabelProbs { fake: 0.5, real: 0.5 };
        let (corpus, _) = generate(&cfg).unwrap();
        let profiles = Profiles::compute(&corpus, &Thresholds::default(), Execution::Sequential);
        let matrix = InteractionMatrix::binary(&corpus);
        let coeffs = GroupCoefficients { lurker: l, engager: 0.09, contributor: 0.01 };
        let fast = weight_vector(&matrix, &profiles, &coeffs, alpha, NormKind::L2).unwrap();
        let slow = oracle_weights(&corpus, &profiles, &coeffs, alpha, NormKind::L2);
        prop_assert_eq!(&fast, &slow);
        prop_assert_eq!(edge_reweight(&matrix, &fast).unwrap().to_dense(), oracle_edge_reweight(&corpus, &slow));
    }
}
