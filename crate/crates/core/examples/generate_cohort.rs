//! Sample a respiratory cohort from the bundled knowledge base, write it
//! with its truth sidecar, and build one patient through the staged LLM
//! path against the scripted backend.

use std::path::PathBuf;

use agent_hospital::knowledge::load_knowledge_base;
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::patient::{
    read_visible_cohort, write_cohort, CohortSpec, Demographics, GeneratorMode, PatientFactory,
};
use agent_hospital::templates::TemplateSet;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let kb = load_knowledge_base(root.join("data/knowledge"))?;
    let templates = TemplateSet::builtin();
    let mock = MockBackend::new(MockScript::load(root.join("data/mock/hospital.toml"))?);

    let factory = PatientFactory::new(&kb, &templates, GeneratorMode::Template);
    let spec = CohortSpec {
        department_id: "respiratory".into(),
        disease_weights: [("covid19".to_string(), 3.0), ("pneumonia".to_string(), 1.0)].into(),
        size: 200,
        demographics: Demographics::default(),
        seed: 42,
    };
    let (cohort, qc) = factory.sample_cohort_with_stats(&spec, &mock)?;
    let covid = cohort.iter().filter(|p| p.truth.disease_id == "covid19").count();
    println!(
        "{} patients ({covid} COVID-19), {} accepted first time",
        cohort.len(),
        qc.first_pass
    );

    let out = tempfile::tempdir()?;
    write_cohort(out.path(), &cohort)?;
    let visible = read_visible_cohort(out.path())?;
    println!("\nwhat a doctor sees of the first patient:\n{}", visible[0].render(false));

    let llm = PatientFactory::new(&kb, &templates, GeneratorMode::Llm);
    let p = llm.generate_patient("influenza_b", &mock, 7, "demo-llm-0", &Demographics::default())?;
    println!("\nstaged generation:\n{}", p.view().render(true));
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
