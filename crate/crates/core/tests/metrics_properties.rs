//! Properties of the ranking and the precision/recall metrics.

use noisyre::data::{Bag, RelationSchema};
use noisyre::metrics::{average_precision, pr_curve, precision_at_n, rank_predictions, GoldSet};
use proptest::prelude::*;

fn schema() -> RelationSchema {
    RelationSchema::new(vec!["NA".into(), "a".into(), "b".into(), "c".into()]).unwrap()
}

fn bag(i: usize) -> Bag {
    Bag {
        head_id: format!("h{i}"),
        tail_id: format!("t{}", i % 3),
        label: None,
        instances: Vec::new(),
    }
}

/// Bags with coarse scores (to force ties) and a random gold set.
fn scenario() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<(usize, usize)>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(proptest::collection::vec(0u8..6, 4), n).prop_map(|rows| {
                rows.into_iter()
                    .map(|r| r.into_iter().map(|x| x as f64 / 5.0).collect())
                    .collect()
            }),
            proptest::collection::vec((0..n, 1usize..4), 1..20),
        )
    })
}

fn gold(schema: &RelationSchema, triples: &[(usize, usize)]) -> GoldSet {
    let mut g = GoldSet::new();
    for &(i, r) in triples {
        let b = bag(i);
        g.insert(&b.head_id, &b.tail_id, schema.label(r));
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn curve_is_consistent_with_counts((dists, triples) in scenario()) {
        let schema = schema();
        let bags: Vec<Bag> = (0..dists.len()).map(bag).collect();
        let ranking = rank_predictions(&bags, &dists, &schema).unwrap();
        let gold = gold(&schema, &triples);
        let curve = pr_curve(&ranking, &gold).unwrap();
        prop_assert_eq!(curve.len(), ranking.len());
        let mut last_recall = 0.0;
        for (t, p) in curve.iter().enumerate() {
            let hits = p.precision * (t + 1) as f64;
            prop_assert!((hits - hits.round()).abs() < 1e-9);
            prop_assert!((p.recall * gold.len() as f64 - hits).abs() < 1e-9);
            prop_assert!(p.recall >= last_recall);
            last_recall = p.recall;
        }
        let full = precision_at_n(&ranking, &gold, ranking.len()).unwrap();
        prop_assert_eq!(full, curve.last().unwrap().precision);
        let beyond = precision_at_n(&ranking, &gold, ranking.len() + 10).unwrap();
        prop_assert_eq!(beyond, full);
        let ap = average_precision(&ranking, &gold).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn ranking_is_sorted_and_independent_of_bag_order((dists, _) in scenario(), rotate in 0usize..40) {
        let schema = schema();
        let bags: Vec<Bag> = (0..dists.len()).map(bag).collect();
        let ranking = rank_predictions(&bags, &dists, &schema).unwrap();
        prop_assert!(ranking.windows(2).all(|w| w[0].score >= w[1].score));
        let mut paired: Vec<(Bag, Vec<f64>)> = bags.into_iter().zip(dists).collect();
        paired.reverse();
        let len = paired.len();
        paired.rotate_left(rotate % len);
        let (b2, d2): (Vec<Bag>, Vec<Vec<f64>>) = paired.into_iter().unzip();
        prop_assert_eq!(rank_predictions(&b2, &d2, &schema).unwrap(), ranking);
    }
}

#[test]
fn perfect_ranking_has_unit_average_precision() {
    let schema = schema();
    let bags: Vec<Bag> = (0..3).map(bag).collect();
    let dists = vec![
        vec![0.1, 0.9, 0.0, 0.0],
        vec![0.2, 0.0, 0.8, 0.0],
        vec![0.9, 0.0, 0.0, 0.1],
    ];
    let ranking = rank_predictions(&bags, &dists, &schema).unwrap();
    let gold = gold(&schema, &[(0, 1), (1, 2)]);
    assert_eq!(average_precision(&ranking, &gold).unwrap(), 1.0);
    assert_eq!(precision_at_n(&ranking, &gold, 2).unwrap(), 1.0);
    assert_eq!(precision_at_n(&ranking, &gold, 4).unwrap(), 0.5);
}
