//! Randomized checks of retrieval, accuracy arithmetic and knowledge files.

mod common;

use agent_hospital::evaluation::{cumulative_accuracy, segment_accuracy, OutcomeSeries};
use agent_hospital::knowledge::load_knowledge_base;
use agent_hospital::llm::EmbeddingVector;
use agent_hospital::memory::{CaseBase, CaseSource, MedicalCase, Task};
use proptest::prelude::*;

fn case(v: Vec<f64>) -> MedicalCase {
    MedicalCase {
        case_id: 0,
        task: Task::Diagnosis,
        question_text: "q".into(),
        answer_text: "a".into(),
        embedding: EmbeddingVector::new(v),
        source: CaseSource::Interaction,
    }
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn nonzero(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3i8..=3, dim)
        .prop_filter("zero vector", |v| v.iter().any(|&x| x != 0))
        .prop_map(|v| v.into_iter().map(f64::from).collect())
}

proptest! {
    #[test]
    fn retrieval_matches_sorting_everything(
        stored in prop::collection::vec(nonzero(4), 1..40),
        query in nonzero(4),
        k in 0usize..50,
    ) {
        let mut base = CaseBase::new(Task::Diagnosis, "t");
        for v in &stored {
            base.add_case(case(v.clone()), "t").unwrap();
        }
        let mut expected: Vec<(u64, f64)> = stored
            .iter()
            .enumerate()
            .map(|(i, v)| (i as u64 + 1, cos(v, &query)))
            .collect();
        expected.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        expected.truncate(k);
        let got = base.retrieve(&EmbeddingVector::new(query.clone()), k).unwrap();
        prop_assert_eq!(got.len(), expected.len());
        for ((c, s), (id, e)) in got.iter().zip(&expected) {
            prop_assert!((s - e).abs() < 1e-9);
            // Ids may differ only between entries whose scores tie.
            if c.case_id != *id {
                let own = cos(&stored[c.case_id as usize - 1], &query);
                prop_assert!((own - e).abs() < 1e-9, "{} ranked where {} belongs", c.case_id, id);
            }
        }
    }

    #[test]
    fn segments_reweight_to_the_cumulative(
        outcomes in prop::collection::vec(any::<bool>(), 1..500),
        window in 1usize..600,
    ) {
        let s = OutcomeSeries::new("diagnosis", "d", outcomes.clone());
        let cum = cumulative_accuracy(&s).unwrap();
        prop_assert_eq!(cum.len(), outcomes.len());
        let correct = outcomes.iter().filter(|&&c| c).count();
        prop_assert!((cum.last().unwrap().1 - correct as f64 / outcomes.len() as f64).abs() < 1e-12);
        let segs = segment_accuracy(&s, window).unwrap();
        prop_assert_eq!(segs.iter().map(|g| g.correct).sum::<usize>(), correct);
        prop_assert_eq!(segs.iter().filter(|g| g.partial).count(), usize::from(outcomes.len() % window != 0));
    }
}

#[test]
fn knowledge_bundle_round_trips() {
    let kb = common::kb();
    let dir = tempfile::tempdir().unwrap();
    kb.save_bundle(dir.path()).unwrap();
    let again = load_knowledge_base(dir.path()).unwrap();
    assert_eq!(*kb, again);
}
