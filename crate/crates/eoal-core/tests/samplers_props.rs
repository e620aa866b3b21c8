//! Property tests over the query strategies: every strategy returns exactly
//! `min(budget, |pool|)` unique ids from the pool, deterministically.

mod common;

use common::{random_matrix, seeded};
use eoal_core::matrix::Matrix;
use eoal_core::samplers::{
    certainty_query, coreset_query, entropy_query, eoal_query, random_query, EoalOptions,
    QueryResult,
};
use eoal_core::scoring::{ScoreRecord, ScoreTable};
use proptest::prelude::*;
use rand::Rng;

fn check_budget(result: &QueryResult, ids: &[u64], budget: usize) {
    let expected = budget.min(ids.len());
    assert_eq!(result.selected_ids.len(), expected);
    let unique: std::collections::HashSet<u64> = result.selected_ids.iter().copied().collect();
    assert_eq!(unique.len(), expected, "duplicate ids selected");
    let pool: std::collections::HashSet<u64> = ids.iter().copied().collect();
    assert!(result.selected_ids.iter().all(|id| pool.contains(id)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_strategy_spends_the_budget_exactly(
        seed in 0u64..100_000,
        n in 1usize..40,
        budget in 1usize..50,
        k in 1usize..6,
    ) {
        let mut rng = seeded(seed);
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 3 + 1).collect();
        let d = 3;

        // Entropic strategy over a synthetic score table.
        let features = random_matrix(&mut rng, n, d, -2.0, 2.0);
        let records: Vec<ScoreRecord<f64>> = ids
            .iter()
            .map(|&id| {
                let s_c: f64 = rng.gen_range(0.0..1.0);
                let s_d: f64 = rng.gen_range(0.0..1.0);
                ScoreRecord {
                    id,
                    s_c,
                    s_d,
                    s: s_c - s_d,
                    predicted_class: rng.gen_range(0..=k) as u32,
                }
            })
            .collect();
        let table = ScoreTable { records, features: features.clone() };
        let result = eoal_query(&table, budget, k, &EoalOptions::default()).unwrap();
        check_budget(&result, &ids, budget);

        // Random.
        check_budget(&random_query(&ids, budget, seed), &ids, budget);

        // Entropy and certainty over random distributions.
        let probs = {
            let mut m = Matrix::zeros(n, k.max(2));
            for i in 0..n {
                let raw: Vec<f64> = (0..k.max(2)).map(|_| rng.gen_range(0.01..1.0)).collect();
                let sum: f64 = raw.iter().sum();
                for (j, v) in raw.iter().enumerate() {
                    m.set(i, j, v / sum);
                }
            }
            m
        };
        check_budget(&entropy_query(&ids, &probs, budget).unwrap(), &ids, budget);
        check_budget(&certainty_query(&ids, &probs, budget).unwrap(), &ids, budget);

        // Coreset with a small labeled set.
        let labeled = random_matrix(&mut rng, 2, d, -2.0, 2.0);
        check_budget(
            &coreset_query(&labeled, &features, &ids, budget).unwrap(),
            &ids,
            budget,
        );
    }
}
