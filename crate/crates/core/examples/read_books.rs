//! Turn textbook passages into stored cases for a doctor.

use std::path::PathBuf;
use std::sync::Arc;

use agent_hospital::doctor::DoctorAgent;
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::memory::{CaseSource, Task};
use agent_hospital::templates::TemplateSet;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let mock = MockBackend::new(MockScript::load(root.join("data/mock/hospital.toml"))?);
    let mut doctor = DoctorAgent::new(
        "respiratory-dr01",
        "Dr. Morgan",
        "respiratory",
        "Respiratory Department",
        "mock-64",
        Arc::new(TemplateSet::builtin()),
    );
    let documents = vec![
        "COVID-19 commonly presents with fever, dry cough and loss of smell.".to_string(),
        "Viral pneumonia is confirmed with blood tests and chest imaging.".to_string(),
    ];
    let report = doctor.read_books(&documents, &mock)?;
    for (i, d) in report.documents.iter().enumerate() {
        println!("document {i}: {} items stored, {} skipped", d.items_stored, d.items_skipped);
    }
    for task in Task::ALL {
        for case in doctor.case_base(task).entries() {
            assert_eq!(case.source, CaseSource::Book);
            println!("[{task}] {} -> {}", case.question_text.lines().next().unwrap_or(""), case.answer_text);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
