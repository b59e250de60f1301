//! Store past cases in a vector base, retrieve the nearest ones for a new
//! patient, and round-trip the base through its file.

use agent_hospital::llm::{Backend, MockBackend, MockScript};
use agent_hospital::memory::{CaseBase, CaseSource, MedicalCase, Task};

pub fn run_example() -> anyhow::Result<()> {
    let encoder = MockBackend::new(MockScript::default());
    let mut base = CaseBase::new(Task::Diagnosis, encoder.encoder_name());
    let past = [
        ("Symptoms: fever; dry cough; loss of smell", "COVID-19"),
        ("Symptoms: fever; chills; muscle aches", "Influenza B"),
        ("Symptoms: productive cough; chest pain; high fever", "Pneumonia"),
        ("Symptoms: night sweats; weight loss; chronic cough", "Pulmonary Tuberculosis"),
        ("Symptoms: itchy wheals; swelling of the lips", "Urticaria"),
    ];
    for (q, a) in past {
        base.add_case(
            MedicalCase {
                case_id: 0,
                task: Task::Diagnosis,
                question_text: q.into(),
                answer_text: a.into(),
                embedding: encoder.embed(q)?,
                source: CaseSource::Interaction,
            },
            encoder.encoder_name(),
        )?;
    }

    let query = "Symptoms: fever; dry cough; sore throat";
    println!("nearest cases for `{query}`:");
    for (case, sim) in base.retrieve(&encoder.embed(query)?, 3)? {
        println!("  #{} {:.4} {} -> {}", case.case_id, sim, case.question_text, case.answer_text);
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("cases_diagnosis.jsonl");
    base.save(&path)?;
    let again = CaseBase::load(&path)?;
    assert_eq!(again.entries(), base.entries());
    println!("reloaded {} cases from {}", again.len(), path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
