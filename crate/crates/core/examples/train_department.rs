//! Train the respiratory department on a synthetic cohort with the scripted
//! backend, reading one handbook page a day, then print the learning curves.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use agent_hospital::audit::{read_log, Replay};
use agent_hospital::evaluation::{segment_accuracy, OutcomeSeries};
use agent_hospital::knowledge::load_knowledge_base;
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::memory::Task;
use agent_hospital::patient::{CohortSpec, Demographics, GeneratorMode, PatientFactory};
use agent_hospital::simulacrum::{Hospital, RunMode, RunOptions, WorldConfig};
use agent_hospital::templates::TemplateSet;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let kb = Arc::new(load_knowledge_base(root.join("data/knowledge"))?);
    let templates = Arc::new(TemplateSet::builtin());
    let mock = MockBackend::new(MockScript::load(root.join("data/mock/hospital.toml"))?);

    let spec = CohortSpec {
        department_id: "respiratory".into(),
        disease_weights: BTreeMap::new(),
        size: 200,
        demographics: Demographics::default(),
        seed: 1,
    };
    let cohort = PatientFactory::new(&kb, &templates, GeneratorMode::Template).sample_cohort(&spec, &mock)?;

    let world = WorldConfig {
        departments: vec!["respiratory".into()],
        visits_per_day: 20,
        books_per_day: 1,
        seed: 1,
        ..Default::default()
    };
    let library = BTreeMap::from([(
        "respiratory".to_string(),
        (1..=10).map(|i| format!("Respiratory handbook, page {i}.")).collect(),
    )]);
    let out = tempfile::tempdir()?;
    let mut hospital = Hospital::new(kb, templates, world, "mock-64")?;
    let summary = hospital.run(&cohort, RunMode::Train, &mock, &library, &RunOptions::new(out.path()))?;
    println!("{} recovered, {} unrecovered", summary.recovered, summary.unrecovered);

    let replay = Replay::from_log(&read_log(&summary.log_path)?);
    for task in Task::ALL {
        let series = OutcomeSeries::new(task.as_str(), "respiratory", replay.series(task));
        let blocks: Vec<String> = segment_accuracy(&series, 50)?
            .iter()
            .map(|s| format!("{:.2}", s.accuracy))
            .collect();
        let doctor = hospital.doctor("respiratory").unwrap();
        println!(
            "{:<11} per 50 patients [{}]  cases {}  principles {}",
            task.as_str(),
            blocks.join(", "),
            doctor.case_base(task).len(),
            doctor.experience_base(task).len()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
