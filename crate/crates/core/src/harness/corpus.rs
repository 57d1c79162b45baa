//! The bundled mini corpus and its plan library.
//!
//! Ids have the form `CLASS-gGROUP-vVARIANT`. A group is one phrasing; its
//! variants differ only in entity values.

use crate::cascade::PlanTemplate;
use crate::model::Query;

const MINI_CORPUS: &str = include_str!("../../data/mini_corpus.jsonl");
const MINI_PLANS: &str = include_str!("../../data/mini_plans.json");

pub fn mini_corpus() -> Vec<Query> {
    MINI_CORPUS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let q: Query = serde_json::from_str(l).expect("bundled corpus parses");
            q.validate().expect("bundled corpus is valid");
            q
        })
        .collect()
}

pub fn mini_plans() -> Vec<PlanTemplate> {
    let plans: Vec<PlanTemplate> = serde_json::from_str(MINI_PLANS).expect("bundled plans parse");
    for p in &plans {
        p.validate().expect("bundled plans are valid");
    }
    plans
}

/// `(class, group)` of a corpus id, e.g. `("msg", "g3")` for `msg-g3-v2`.
pub fn template_group(id: &str) -> Option<(&str, &str)> {
    let mut parts = id.splitn(3, '-');
    let class = parts.next()?;
    let group = parts.next()?;
    parts.next().filter(|v| v.starts_with('v'))?;
    Some((class, group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn corpus_shape() {
        let c = mini_corpus();
        assert_eq!(c.len(), 60);
        let classes: BTreeSet<_> = c.iter().map(|q| q.true_intent.clone().unwrap()).collect();
        assert_eq!(classes.len(), 8);
        assert_eq!(mini_plans().len(), 8);
        assert!(c.iter().all(|q| template_group(&q.id).is_some()));
        let ids: BTreeSet<_> = c.iter().map(|q| &q.id).collect();
        assert_eq!(ids.len(), 60);
    }

    #[test]
    fn every_class_has_a_plan() {
        let plans: BTreeSet<_> = mini_plans().into_iter().map(|p| p.key).collect();
        let mut counts = BTreeMap::new();
        for q in mini_corpus() {
            let k = q.true_intent.unwrap().as_key().unwrap();
            assert!(plans.contains(&k));
            *counts.entry(k).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&n| n >= 6));
    }
}
