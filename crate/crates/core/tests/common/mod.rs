#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use agent_hospital::knowledge::{load_knowledge_base, KnowledgeBase};
use agent_hospital::llm::{MockBackend, MockScript};
use agent_hospital::patient::{CohortSpec, Demographics, GeneratorMode, PatientFactory, PatientRecord};
use agent_hospital::templates::TemplateSet;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn kb() -> Arc<KnowledgeBase> {
    Arc::new(load_knowledge_base(manifest_dir().join("data/knowledge")).unwrap())
}

pub fn templates() -> Arc<TemplateSet> {
    Arc::new(TemplateSet::builtin())
}

pub fn hospital_mock() -> MockBackend {
    MockBackend::new(MockScript::load(manifest_dir().join("data/mock/hospital.toml")).unwrap())
}

pub fn template_cohort(kb: &KnowledgeBase, department: &str, size: usize, seed: u64) -> Vec<PatientRecord> {
    let t = TemplateSet::builtin();
    let factory = PatientFactory::new(kb, &t, GeneratorMode::Template);
    let spec = CohortSpec {
        department_id: department.into(),
        disease_weights: Default::default(),
        size,
        demographics: Demographics::default(),
        seed,
    };
    factory
        .sample_cohort(&spec, &MockBackend::new(MockScript::default()))
        .unwrap()
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}
