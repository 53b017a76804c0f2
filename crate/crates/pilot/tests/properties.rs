use std::collections::HashMap;

use proptest::prelude::*;

use pilot::diversity::{fk_grade_level, ngram_diversity, repetition_rate, tokenize, type_token_ratio};
use pilot::schema::{canonical_paths, flatten, unflatten, parse_profile, serialize_profile, PilotProfile, ProfileSource};
use pilot::stats::{kruskal_wallis, one_way_anova, pearson_r};
use pilot::steer::{cluster_purity, silhouette_score, DocVector};

fn word() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "ash", "bolt", "crane", "drum", "ember", "flint", "grove", "hollow", "iris", "jade",
    ])
}

fn text() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..60).prop_map(|ws| ws.join(" "))
}

proptest! {
    #[test]
    fn diversity_and_repetition_are_complements(t in text(), n in 1usize..=4) {
        let ts = tokenize(&t).unwrap();
        if ts.tokens.len() >= n {
            let d = ngram_diversity(&ts, n).unwrap();
            let r = repetition_rate(&ts, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d + r, 1.0);
        }
    }

    #[test]
    fn ttr_equals_unigram_diversity(t in text()) {
        let ts = tokenize(&t).unwrap();
        prop_assert_eq!(type_token_ratio(&ts).unwrap(), ngram_diversity(&ts, 1).unwrap());
    }

    #[test]
    fn fk_grade_invariant_under_duplication(t in text()) {
        let once = fk_grade_level(&tokenize(&format!("{t}.")).unwrap()).unwrap();
        let twice = fk_grade_level(&tokenize(&format!("{t}. {t}.")).unwrap()).unwrap();
        prop_assert!((once - twice).abs() < 1e-9);
    }

    #[test]
    fn profile_flatten_round_trip(scores in prop::collection::vec(0.0f64..=100.0, 84)) {
        let mut profile = PilotProfile::uniform("p", 0.0).unwrap();
        for (path, score) in canonical_paths().iter().zip(&scores) {
            profile.set_score(path, *score).unwrap();
        }
        let back = unflatten("p", ProfileSource::Manual, &flatten(&profile)).unwrap();
        prop_assert_eq!(back, profile);
    }

    #[test]
    fn profile_serialize_parse_round_trip(scores in prop::collection::vec(0.0f64..=100.0, 84)) {
        let mut profile = PilotProfile::uniform("p", 0.0).unwrap();
        for (path, score) in canonical_paths().iter().zip(&scores) {
            profile.set_score(path, *score).unwrap();
        }
        let parsed = parse_profile(&serialize_profile(&profile)).unwrap();
        // Serialization rounds to six decimal places.
        for (path, score) in flatten(&profile) {
            prop_assert!((parsed.score(&path).unwrap() - score).abs() <= 5e-7);
        }
    }

    #[test]
    fn purity_invariant_under_cluster_relabeling(
        assignments in prop::collection::vec(0usize..3, 6..20),
        labels in prop::collection::vec(0usize..3, 20),
    ) {
        let n = assignments.len();
        let doc_ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let label_map: HashMap<String, String> = doc_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), labels[i].to_string()))
            .collect();
        let direct = cluster_purity(&assignments, &doc_ids, &label_map).unwrap();
        let relabeled: Vec<usize> = assignments.iter().map(|c| (c + 1) % 3).collect();
        let swapped = cluster_purity(&relabeled, &doc_ids, &label_map).unwrap();
        prop_assert!((direct - swapped).abs() < 1e-12);
    }

    #[test]
    fn silhouette_is_bounded(
        coords in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..16),
        picks in prop::collection::vec(0usize..2, 16),
    ) {
        let vectors: Vec<DocVector> = coords
            .iter()
            .enumerate()
            .map(|(i, v)| DocVector { doc_id: format!("d{i}"), values: v.clone() })
            .collect();
        let mut assignments: Vec<usize> = (0..vectors.len()).map(|i| picks[i]).collect();
        assignments[0] = 0;
        assignments[1] = 1;
        let s = silhouette_score(&vectors, &assignments).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn anova_invariant_under_positive_affine_transform(
        g1 in prop::collection::vec(-10.0f64..10.0, 3..8),
        g2 in prop::collection::vec(-10.0f64..10.0, 3..8),
        scale in 0.5f64..3.0,
        shift in -5.0f64..5.0,
    ) {
        let f = one_way_anova(&[g1.clone(), g2.clone()]).unwrap().statistic;
        if f.is_finite() {
            let t1: Vec<f64> = g1.iter().map(|v| v * scale + shift).collect();
            let t2: Vec<f64> = g2.iter().map(|v| v * scale + shift).collect();
            let ft = one_way_anova(&[t1, t2]).unwrap().statistic;
            prop_assert!((f - ft).abs() < 1e-6 * f.abs().max(1.0));
        }
    }

    #[test]
    fn kruskal_wallis_invariant_under_monotone_transform(
        g1 in prop::collection::vec(-10.0f64..10.0, 3..8),
        g2 in prop::collection::vec(-10.0f64..10.0, 3..8),
    ) {
        if let Ok(base) = kruskal_wallis(&[g1.clone(), g2.clone()]) {
            let t1: Vec<f64> = g1.iter().map(|v| v.exp()).collect();
            let t2: Vec<f64> = g2.iter().map(|v| v.exp()).collect();
            let transformed = kruskal_wallis(&[t1, t2]).unwrap();
            prop_assert!((base.statistic - transformed.statistic).abs() < 1e-9);
        }
    }

    #[test]
    fn pearson_invariant_under_positive_affine_transform(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..12),
        scale in 0.5f64..3.0,
        shift in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        if let Ok(r) = pearson_r(&x, &y) {
            let xt: Vec<f64> = x.iter().map(|v| v * scale + shift).collect();
            if let Ok(rt) = pearson_r(&xt, &y) {
                prop_assert!((r - rt).abs() < 1e-6);
            }
        }
    }
}
