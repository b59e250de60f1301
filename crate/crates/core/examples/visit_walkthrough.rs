//! Walk a Herpes Zoster patient through the treatment cycle one phase at a
//! time and show what each actor did.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use agent_hospital::audit::LogEvent;
use agent_hospital::knowledge::load_knowledge_base;
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::patient::{template_patient, Demographics};
use agent_hospital::simulacrum::{Hospital, VisitState, WorldConfig};
use agent_hospital::templates::TemplateSet;

pub fn run_example() -> anyhow::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let kb = Arc::new(load_knowledge_base(root.join("data/knowledge"))?);
    let mock = MockBackend::new(MockScript::load(root.join("data/mock/hospital.toml"))?);
    let patient = template_patient(kb.disease("herpes_zoster")?, 3, "walk-0001", &Demographics::default());
    println!("{}\n", patient.view().render(false));

    let mut hospital = Hospital::new(
        kb,
        Arc::new(TemplateSet::builtin()),
        WorldConfig::default(),
        "mock-64",
    )?;
    let mut state = VisitState::new(patient.patient_id.clone(), 0);
    let mut events = Vec::new();
    while !state.phase.is_terminal() {
        let before = events.len();
        state = hospital.step(&state, &patient, &mock, true, &mut events)?;
        for ev in &events[before..] {
            match ev {
                LogEvent::Transition { from, to, actor, visit_index, .. } => {
                    let from = from.map_or("start".to_string(), |f| format!("{f:?}"));
                    println!("visit {visit_index}: {from} -> {to:?} by {actor}");
                }
                LogEvent::Graded { task, decision, correct, .. } => {
                    println!("  {task}: {} ({})", decision.chosen.join(", "), if *correct { "right" } else { "wrong" });
                }
                _ => {}
            }
        }
    }

    let doctor = hospital.doctor("dermatology").expect("dermatology is staffed");
    let sizes: BTreeMap<_, _> = agent_hospital::memory::Task::ALL
        .into_iter()
        .map(|t| (t.as_str(), (doctor.case_base(t).len(), doctor.experience_base(t).len())))
        .collect();
    println!("\n{} now holds (cases, principles) {sizes:?}", doctor.doctor_id);
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run_example()
}
