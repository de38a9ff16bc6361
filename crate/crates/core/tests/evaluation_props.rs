mod common;

use cinesynth::evaluation::{
    entity_counts, entity_macro_f1, extract_json_lenient, intent_counts, macro_f1, LenientJsonOptions,
};
use cinesynth::{EntityClass, EntityMap};
use common::{oracle_entity, oracle_intent, ratio_f64};
use proptest::prelude::*;
use proptest::sample::subsequence;
use serde_json::Value;

fn label() -> impl Strategy<Value = String> {
    (0u8..4).prop_map(|i| format!("c{i}"))
}

fn intent_pairs() -> impl Strategy<Value = (Vec<String>, Vec<Option<String>>)> {
    prop::collection::vec((label(), prop::option::weighted(0.9, label())), 1..120)
        .prop_map(|v| v.into_iter().unzip())
}

fn entity_map() -> impl Strategy<Value = EntityMap> {
    let class = (0usize..6).prop_map(|i| EntityClass::ALL[i]);
    let value = prop::sample::select(vec!["Dune", "dune", "Heat", "Big Fish", "big  fish", "Alien"]);
    prop::collection::vec((class, value), 0..6).prop_map(|pairs| {
        let mut m = EntityMap::new();
        for (c, v) in pairs {
            m.entry(c).or_default().push(v.to_owned());
        }
        m
    })
}

fn entity_pairs() -> impl Strategy<Value = (Vec<EntityMap>, Vec<Option<EntityMap>>)> {
    prop::collection::vec((entity_map(), prop::option::weighted(0.9, entity_map())), 1..60)
        .prop_map(|v| v.into_iter().unzip())
}

fn json_value() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::from),
        any::<i64>().prop_map(Value::from),
        (-1_000_000i32..1_000_000).prop_map(|i| Value::from(i as f64 / 16.0)),
        ".{0,12}".prop_map(Value::from),
    ];
    leaf.prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
            prop::collection::btree_map("[a-z_]{1,6}", inner, 0..4)
                .prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

proptest! {
    #[test]
    fn intent_matches_oracle((gold, pred) in intent_pairs()) {
        let got = macro_f1(&gold, &pred).unwrap().macro_f1;
        let (_, want) = oracle_intent(&gold, &pred);
        prop_assert!((got - ratio_f64(want)).abs() <= 1e-12);
    }

    #[test]
    fn entity_matches_oracle((gold, pred) in entity_pairs()) {
        let got = entity_macro_f1(&gold, &pred).unwrap().macro_f1;
        let (_, want) = oracle_entity(&gold, &pred);
        prop_assert!((got - ratio_f64(want)).abs() <= 1e-12);
    }

    #[test]
    fn macro_is_bounded((gold, pred) in intent_pairs()) {
        let r = macro_f1(&gold, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.macro_f1));
        for s in r.per_class.values() {
            prop_assert!((0.0..=1.0).contains(&s.f1));
        }
    }

    #[test]
    fn order_does_not_matter((gold, pred) in intent_pairs(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..gold.len()).collect();
        let mut s = seed;
        for i in (1..idx.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            idx.swap(i, (s >> 33) as usize % (i + 1));
        }
        let g2: Vec<_> = idx.iter().map(|&i| gold[i].clone()).collect();
        let p2: Vec<_> = idx.iter().map(|&i| pred[i].clone()).collect();
        prop_assert_eq!(macro_f1(&gold, &pred).unwrap(), macro_f1(&g2, &p2).unwrap());
    }

    #[test]
    fn relabeling_classes_keeps_the_score((gold, pred) in intent_pairs(), shift in 1u8..4) {
        let relabel = |s: &String| format!("k{}", (s[1..].parse::<u8>().unwrap() + shift) % 4);
        let g2: Vec<String> = gold.iter().map(relabel).collect();
        let p2: Vec<Option<String>> = pred.iter().map(|p| p.as_ref().map(relabel)).collect();
        let a = macro_f1(&gold, &pred).unwrap().macro_f1;
        let b = macro_f1(&g2, &p2).unwrap().macro_f1;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn shards_merge_to_the_whole((gold, pred) in entity_pairs(), cut in any::<prop::sample::Index>()) {
        prop_assume!(gold.len() >= 2);
        let k = 1 + cut.index(gold.len() - 1);
        let mut merged = entity_counts(&gold[..k], &pred[..k]).unwrap();
        merged.merge(&entity_counts(&gold[k..], &pred[k..]).unwrap());
        let whole = entity_counts(&gold, &pred).unwrap();
        prop_assert_eq!(&merged, &whole);
        prop_assert_eq!(merged.report(), whole.report());
    }

    #[test]
    fn intent_shards_merge_to_the_whole((gold, pred) in intent_pairs(), cut in any::<prop::sample::Index>()) {
        prop_assume!(gold.len() >= 2);
        let k = 1 + cut.index(gold.len() - 1);
        let mut merged = intent_counts(&gold[..k], &pred[..k]).unwrap();
        merged.merge(&intent_counts(&gold[k..], &pred[k..]).unwrap());
        prop_assert_eq!(merged, intent_counts(&gold, &pred).unwrap());
    }

    #[test]
    fn perfect_predictions_score_one(gold in prop::collection::vec(entity_map(), 1..40)) {
        let pred: Vec<Option<EntityMap>> = gold.iter().cloned().map(Some).collect();
        prop_assert_eq!(entity_macro_f1(&gold, &pred).unwrap().macro_f1, 1.0);
    }

    #[test]
    fn subset_predictions_have_full_precision(
        gold in prop::collection::vec(entity_map(), 1..40),
        keep in prop::collection::vec(any::<u64>(), 40),
    ) {
        let pred: Vec<Option<EntityMap>> = gold
            .iter()
            .zip(&keep)
            .map(|(g, &mask)| {
                let mut m = EntityMap::new();
                for (i, (c, vs)) in g.iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        m.insert(*c, vs.clone());
                    }
                }
                Some(m)
            })
            .collect();
        let r = entity_macro_f1(&gold, &pred).unwrap();
        for s in r.per_class.values() {
            prop_assert_eq!(s.fp, 0);
            prop_assert!(s.tp == 0 || s.precision == 1.0);
        }
    }

    #[test]
    fn serialized_objects_come_back(
        m in prop::collection::btree_map("[a-z_]{1,6}", json_value(), 0..5),
        prefix in "[a-zA-Z .!?]{0,20}",
        pretty in any::<bool>(),
    ) {
        let v = Value::Object(m.into_iter().collect());
        let body = if pretty { serde_json::to_string_pretty(&v).unwrap() } else { v.to_string() };
        prop_assert_eq!(extract_json_lenient(&body, &LenientJsonOptions::strict()).unwrap(), v.clone());
        let chatty = format!("{prefix}\n```json\n{body}\n```\n");
        prop_assert_eq!(extract_json_lenient(&chatty, &LenientJsonOptions::lenient()).unwrap(), v);
    }

    #[test]
    fn recovery_never_panics(s in "(?s).{0,200}", picks in subsequence(vec!["{", "}", "'", ",", "```", ":", "\""], 0..7)) {
        let text = format!("{}{s}", picks.concat());
        let _ = extract_json_lenient(&text, &LenientJsonOptions::lenient());
        let _ = extract_json_lenient(&text, &LenientJsonOptions::strict());
    }
}
