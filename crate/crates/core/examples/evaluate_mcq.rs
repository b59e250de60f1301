//! Score a doctor on multiple-choice questions, first with its own memory
//! only, then after merging labelled training items into the case base.

use std::sync::Arc;

use agent_hospital::doctor::{DoctorAgent, DoctorConfig};
use agent_hospital::evaluation::{evaluate_mcq, ingest_mcq, parse_mcq_jsonl};
use agent_hospital::llm::{MockBackend, MockRule, MockScript};
use agent_hospital::memory::Task;
use agent_hospital::templates::TemplateSet;

const TEST: &str = r#"{"question": "Fever, dry cough and loss of smell. Most likely diagnosis?", "options": {"A": "Influenza B", "B": "COVID-19"}, "answer_idx": "B", "meta": {"department": "respiratory"}}
{"question": "Crushing chest pain on exertion relieved by rest. Most likely diagnosis?", "options": ["Coronary Heart Disease", "Heart Failure"], "answer": "A", "meta": {"department": "cardiology"}}
{"question": "broken line"
"#;

const TRAIN: &str = r#"{"question": "Loss of smell with fever and cough after an exposure.", "options": {"A": "Influenza B", "B": "COVID-19"}, "answer_idx": "B"}
"#;

pub fn run_example() -> anyhow::Result<()> {
    // Picks COVID-19 only when a remembered case backs up the option.
    let mock = MockBackend::new(MockScript::default().rule(MockRule::responder("answer.*", |req| {
        let seen = req.full_text().matches("COVID-19").count();
        Some(if seen > 1 { "Answer: B" } else { "Answer: A" }.into())
    })));
    let (items, skipped) = parse_mcq_jsonl(TEST);
    for s in &skipped {
        println!("skipped line {}: {}", s.line, s.reason);
    }

    let templates = Arc::new(TemplateSet::builtin());
    let config = DoctorConfig { helpfulness_judge: false, ..Default::default() };
    let plain = DoctorAgent::new("dr", "Dr. Li", "general", "General", "mock-64", templates.clone())
        .with_config(config.clone());
    let report = evaluate_mcq(&plain, &items, skipped.len(), Task::Diagnosis, &mock)?;
    print!("{}", report.to_markdown());

    let mut hybrid = DoctorAgent::new("dr", "Dr. Li", "general", "General", "mock-64", templates)
        .with_config(DoctorConfig { hybrid: true, ..config });
    let (train, _) = parse_mcq_jsonl(TRAIN);
    ingest_mcq(&mut hybrid, &train, Task::Diagnosis, &mock)?;
    let report = evaluate_mcq(&hybrid, &items, skipped.len(), Task::Diagnosis, &mock)?;
    println!();
    print!("{}", report.to_markdown());
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
