//! Train a doctor on one cohort, then score the frozen doctor on a disjoint
//! held-out cohort and print the report.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use agent_hospital::evaluation::{check_disjoint, evaluate_tasks};
use agent_hospital::knowledge::load_knowledge_base;
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::patient::{cohort_hashes, CohortSpec, Demographics, GeneratorMode, PatientFactory};
use agent_hospital::simulacrum::{Hospital, RunMode, RunOptions, TreatmentContext, WorldConfig};
use agent_hospital::templates::TemplateSet;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let kb = Arc::new(load_knowledge_base(root.join("data/knowledge"))?);
    let templates = Arc::new(TemplateSet::builtin());
    let mock = MockBackend::new(MockScript::load(root.join("data/mock/hospital.toml"))?);
    let factory = PatientFactory::new(&kb, &templates, GeneratorMode::Template);
    let cohort = |size, seed| {
        let spec = CohortSpec {
            department_id: "cardiology".into(),
            disease_weights: BTreeMap::new(),
            size,
            demographics: Demographics::default(),
            seed,
        };
        factory.sample_cohort(&spec, &mock)
    };
    let train = cohort(120, 11)?;
    let test = cohort(40, 12)?;
    check_disjoint(&cohort_hashes(&train), &test)?;

    let world = WorldConfig {
        departments: vec!["cardiology".into()],
        seed: 11,
        ..Default::default()
    };
    let out = tempfile::tempdir()?;
    let mut hospital = Hospital::new(kb.clone(), templates.clone(), world, "mock-64")?;
    hospital.run(&train, RunMode::Train, &mock, &BTreeMap::new(), &RunOptions::new(out.path()))?;

    let doctor = hospital.doctor("cardiology").expect("cardiology is staffed");
    let report = evaluate_tasks(doctor, &kb, &test, TreatmentContext::TrueDiagnosis, &mock)?;
    print!("{}", report.to_markdown());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
