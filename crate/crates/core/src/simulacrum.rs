//! The hospital world: roster, the visit state machine, triage, recovery
//! and the run loop that lets doctors learn from a patient stream.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{read_log, AuditError, LogEvent, LogWriter, OutcomeRow, Replay};
use crate::doctor::{grade, DoctorAgent, DoctorConfig, DoctorError, TaskInstance, EXEMPLAR_FILE};
use crate::doctor::{case_base_file, experience_base_file};
use crate::knowledge::{DepartmentKind, KnowledgeBase, KnowledgeError};
use crate::llm::{Backend, ChatRequest, LlmError};
use crate::memory::{file_len, Task};
use crate::patient::{PatientRecord, PatientView};
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Doctor(#[from] DoctorError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("cannot step a visit in phase {0:?}")]
    IllegalPhase(Phase),
    #[error("patient {patient_id} could not be routed: {reason}")]
    Unroutable { patient_id: String, reason: String },
    #[error("{0} already holds a run; pass force or resume")]
    OutputExists(PathBuf),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> SimError + '_ {
    move |e| SimError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Onset,
    Triage,
    Registration,
    Consultation,
    Examination,
    Diagnosis,
    Dispensary,
    Convalescence,
    Recovered,
    Revisit,
    Unrecovered,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Recovered | Phase::Unrecovered)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageMode {
    /// Department whose disease vocabulary best overlaps the symptoms.
    Rules,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecoveryPolicy {
    /// Recovered iff the treatment was graded correct.
    Deterministic,
    /// Recover with `p_hi` after a correct treatment, `p_lo` otherwise.
    Stochastic { p_hi: f64, p_lo: f64 },
}

/// Which diagnosis the treatment question is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentContext {
    OwnDiagnosis,
    TrueDiagnosis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub doctors: usize,
    pub nurses: usize,
    /// Enabled department ids; empty means every clinical department.
    pub departments: Vec<String>,
    pub max_revisits: u32,
    /// Patient visits that make up one simulated day.
    pub visits_per_day: usize,
    /// Documents each doctor reads at the end of a day.
    pub books_per_day: usize,
    pub seed: u64,
    pub triage: TriageMode,
    pub recovery: RecoveryPolicy,
    pub treatment_context: TreatmentContext,
    /// fsync base journals after each append.
    pub fsync: bool,
    pub doctor: DoctorConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            doctors: 42,
            nurses: 4,
            departments: Vec::new(),
            max_revisits: 3,
            visits_per_day: 100,
            books_per_day: 0,
            seed: 0,
            triage: TriageMode::Rules,
            recovery: RecoveryPolicy::Deterministic,
            treatment_context: TreatmentContext::OwnDiagnosis,
            fsync: false,
            doctor: DoctorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RosterEntry {
    pub doctor_id: String,
    pub name: String,
    pub department_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roster {
    pub doctors: Vec<RosterEntry>,
    pub nurses: Vec<String>,
}

const DOCTOR_SURNAMES: &[&str] = &[
    "Adams", "Baker", "Carter", "Dalton", "Evans", "Fischer", "Gupta", "Hale", "Ishikawa",
    "Jensen", "Khan", "Lopez", "Moreau", "Novak", "Ortega", "Park", "Quinn", "Reyes", "Sato",
    "Turner", "Ueda", "Varga", "Wong", "Xu", "Yilmaz", "Zhou",
];

impl Roster {
    /// Deal doctors round-robin over the enabled departments, so each has
    /// at least one; the first doctor of a department is its attending.
    pub fn build(config: &WorldConfig, departments: &[String]) -> Result<Self, SimError> {
        if departments.is_empty() {
            return Err(SimError::Config("no departments enabled".into()));
        }
        if config.doctors < departments.len() {
            return Err(SimError::Config(format!(
                "{} doctors cannot staff {} departments",
                config.doctors,
                departments.len()
            )));
        }
        if config.nurses == 0 {
            return Err(SimError::Config("at least one nurse is required".into()));
        }
        let mut per_dept: BTreeMap<&str, usize> = BTreeMap::new();
        let doctors = (0..config.doctors)
            .map(|i| {
                let dept = &departments[i % departments.len()];
                let k = per_dept.entry(dept).or_default();
                *k += 1;
                RosterEntry {
                    doctor_id: format!("{dept}-dr{k:02}"),
                    name: format!("Dr. {}", DOCTOR_SURNAMES[i % DOCTOR_SURNAMES.len()]),
                    department_id: dept.clone(),
                }
            })
            .collect();
        let nurses = (1..=config.nurses).map(|i| format!("nurse-{i}")).collect();
        Ok(Self { doctors, nurses })
    }

    pub fn attending(&self, department_id: &str) -> Option<&RosterEntry> {
        self.doctors.iter().find(|d| d.department_id == department_id)
    }

    pub fn staff_of(&self, department_id: &str) -> usize {
        self.doctors
            .iter()
            .filter(|d| d.department_id == department_id)
            .count()
    }
}

/// Where a single patient stands in the treatment cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitState {
    pub patient_id: String,
    pub patient_index: usize,
    pub phase: Phase,
    pub triaged_department: Option<String>,
    pub chosen_examinations: Vec<String>,
    pub examination_reports_released: BTreeMap<String, String>,
    pub diagnosis: Option<String>,
    pub prescription: Option<String>,
    pub treatment_correct: Option<bool>,
    pub visit_index: u32,
    /// Correctness of each task's first decision.
    pub first_visit: BTreeMap<Task, bool>,
}

impl VisitState {
    pub fn new(patient_id: impl Into<String>, patient_index: usize) -> Self {
        Self {
            patient_id: patient_id.into(),
            patient_index,
            phase: Phase::Onset,
            triaged_department: None,
            chosen_examinations: Vec::new(),
            examination_reports_released: BTreeMap::new(),
            diagnosis: None,
            prescription: None,
            treatment_correct: None,
            visit_index: 1,
            first_visit: BTreeMap::new(),
        }
    }
}

/// Report text for a chosen modality the disease would not show.
pub const NORMAL_FINDINGS: &str = "No abnormal findings.";

/// Recovery rule. A patient who does not recover comes back unless this was
/// already visit `max_revisits`, in which case the outcome is Unrecovered.
pub fn convalesce(
    treatment_correct: bool,
    visit_index: u32,
    max_revisits: u32,
    policy: &RecoveryPolicy,
    draw_seed: u64,
) -> Phase {
    let recovered = match *policy {
        RecoveryPolicy::Deterministic => treatment_correct,
        RecoveryPolicy::Stochastic { p_hi, p_lo } => {
            let p = if treatment_correct { p_hi } else { p_lo };
            ChaCha8Rng::seed_from_u64(draw_seed).gen_bool(p)
        }
    };
    if recovered {
        Phase::Recovered
    } else if visit_index >= max_revisits {
        Phase::Unrecovered
    } else {
        Phase::Revisit
    }
}

fn normalize_words(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const STOPWORDS: &[&str] = &["with", "from", "that", "this", "over", "into", "than", "when", "after"];

fn content_words(phrases: &[String]) -> std::collections::BTreeSet<String> {
    phrases
        .iter()
        .flat_map(|p| {
            normalize_words(p)
                .split(' ')
                .filter(|w| w.len() >= 4 && !STOPWORDS.contains(w))
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Rules-mode triage. A disease scores the number of content words (four
/// letters or more) its symptom vocabulary shares with the reported
/// symptoms; a department scores its best disease. The highest-scoring
/// department wins, ties going to the smaller id. `None` when nothing
/// overlaps.
pub fn triage_by_rules(
    symptoms: &[String],
    kb: &KnowledgeBase,
    departments: &[String],
) -> Option<String> {
    let reported = content_words(symptoms);
    let mut best: Option<(usize, &str)> = None;
    let mut sorted: Vec<&String> = departments.iter().collect();
    sorted.sort();
    for dept in sorted {
        let Ok(diseases) = kb.diseases_for_department(dept) else {
            continue;
        };
        let score = diseases
            .iter()
            .map(|d| content_words(&d.symptoms).intersection(&reported).count())
            .max()
            .unwrap_or(0);
        if score > 0 && best.map_or(true, |(b, _)| score > b) {
            best = Some((score, dept));
        }
    }
    best.map(|(_, d)| d.to_string())
}

/// Department documents keyed by department id, read from
/// `dir/<department_id>/*.{txt,md}` in file-name order.
pub fn load_library(dir: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>, SimError> {
    let dir = dir.as_ref();
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if !path.is_dir() {
            continue;
        }
        let dept = path.file_name().unwrap().to_string_lossy().to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&path)
            .map_err(io_err(&path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt" || e == "md"))
            .collect();
        files.sort();
        let docs = files
            .iter()
            .map(|f| fs::read_to_string(f).map_err(io_err(f)))
            .collect::<Result<Vec<_>, _>>()?;
        out.insert(dept, docs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub cohort_hash: String,
    pub mode: RunMode,
    /// Index of the next patient to process.
    pub next_index: usize,
    pub next_seq: u64,
    pub log_offset: u64,
    /// Byte length of every base file, relative to the output directory.
    pub base_offsets: BTreeMap<String, u64>,
}

pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const DOCTORS_DIR: &str = "doctors";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub resume: bool,
    pub force: bool,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            resume: false,
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub patients: usize,
    /// Patients processed by this invocation.
    pub processed: usize,
    pub recovered: usize,
    pub unrecovered: usize,
    /// Every finished patient so far, including those before a resume.
    pub outcomes: Vec<OutcomeRow>,
    pub log_path: PathBuf,
}

/// Order-sensitive hash of a cohort's visible content.
pub fn cohort_hash(cohort: &[PatientRecord]) -> String {
    let mut h = Sha256::new();
    for p in cohort {
        h.update(p.content_hash().as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub struct Hospital {
    kb: Arc<KnowledgeBase>,
    config: WorldConfig,
    roster: Roster,
    enabled: Vec<String>,
    clinical: Vec<String>,
    /// Attending doctor of each enabled department.
    doctors: BTreeMap<String, DoctorAgent>,
    templates: Arc<TemplateSet>,
}

impl Hospital {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        templates: Arc<TemplateSet>,
        config: WorldConfig,
        encoder: &str,
    ) -> Result<Self, SimError> {
        if let RecoveryPolicy::Stochastic { p_hi, p_lo } = config.recovery {
            if !(0.0..=1.0).contains(&p_hi) || !(0.0..=1.0).contains(&p_lo) {
                return Err(SimError::Config("recovery probabilities must lie in [0, 1]".into()));
            }
        }
        if config.visits_per_day == 0 {
            return Err(SimError::Config("visits_per_day must be positive".into()));
        }
        let mut enabled: Vec<String> = if config.departments.is_empty() {
            kb.clinical_departments().map(|d| d.id.clone()).collect()
        } else {
            config.departments.clone()
        };
        enabled.sort();
        enabled.dedup();
        let mut clinical = Vec::new();
        for id in &enabled {
            if kb.department(id)?.kind == DepartmentKind::Clinical {
                clinical.push(id.clone());
            }
        }
        if clinical.is_empty() {
            return Err(SimError::Config("no clinical department enabled".into()));
        }
        let roster = Roster::build(&config, &enabled)?;
        let mut doctors = BTreeMap::new();
        for dept in &enabled {
            let entry = roster.attending(dept).expect("every department is staffed");
            let doctor = DoctorAgent::new(
                entry.doctor_id.clone(),
                entry.name.clone(),
                dept.clone(),
                kb.department(dept)?.name.clone(),
                encoder,
                templates.clone(),
            )
            .with_config(config.doctor.clone());
            doctors.insert(dept.clone(), doctor);
        }
        Ok(Self {
            kb,
            config,
            roster,
            enabled,
            clinical,
            doctors,
            templates,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn departments(&self) -> &[String] {
        &self.enabled
    }

    pub fn doctor(&self, department_id: &str) -> Option<&DoctorAgent> {
        self.doctors.get(department_id)
    }

    pub fn doctor_mut(&mut self, department_id: &str) -> Option<&mut DoctorAgent> {
        self.doctors.get_mut(department_id)
    }

    pub fn doctors(&self) -> impl Iterator<Item = &DoctorAgent> {
        self.doctors.values()
    }

    fn doctor_dir(root: &Path, doctor: &DoctorAgent) -> PathBuf {
        root.join(DOCTORS_DIR).join(&doctor.doctor_id)
    }

    /// Attach journalled bases under `root/doctors/<doctor_id>/`.
    pub fn attach_bases(&mut self, root: impl AsRef<Path>) -> Result<(), SimError> {
        let root = root.as_ref();
        let fsync = self.config.fsync;
        for doctor in self.doctors.values_mut() {
            let dir = Self::doctor_dir(root, doctor);
            doctor.open_bases(dir, fsync)?;
        }
        Ok(())
    }

    /// Load bases from a previous run's output without journals.
    pub fn load_bases(&mut self, root: impl AsRef<Path>) -> Result<(), SimError> {
        let root = root.as_ref();
        for doctor in self.doctors.values_mut() {
            let dir = Self::doctor_dir(root, doctor);
            if dir.exists() {
                doctor.load_bases(dir)?;
            }
        }
        Ok(())
    }

    fn base_files(&self) -> Vec<String> {
        let mut out = Vec::new();
        for doctor in self.doctors.values() {
            let dir = format!("{DOCTORS_DIR}/{}", doctor.doctor_id);
            for task in Task::ALL {
                out.push(format!("{dir}/{}", case_base_file(task)));
                out.push(format!("{dir}/{}", experience_base_file(task)));
            }
            out.push(format!("{dir}/{EXEMPLAR_FILE}"));
        }
        out
    }

    /// Route a patient to an enabled clinical department.
    pub fn triage(&self, view: &PatientView, backend: &dyn Backend) -> Result<String, SimError> {
        if view.symptoms.is_empty() {
            return Err(SimError::Unroutable {
                patient_id: view.patient_id.clone(),
                reason: "no symptoms reported".into(),
            });
        }
        match self.config.triage {
            TriageMode::Rules => triage_by_rules(&view.symptoms, &self.kb, &self.clinical)
                .ok_or_else(|| SimError::Unroutable {
                    patient_id: view.patient_id.clone(),
                    reason: "symptoms match no enabled department".into(),
                }),
            TriageMode::Llm => {
                let listing = self
                    .clinical
                    .iter()
                    .map(|id| {
                        let name = self.kb.department(id).map(|d| d.name.as_str()).unwrap_or(id);
                        format!("- {id}: {name}")
                    })
                    .collect::<Vec<_>>()
                    .join("\n");
                let prompt = self.templates.render(
                    "triage",
                    &[("symptoms", &view.symptoms.join("; ")), ("departments", &listing)],
                )?;
                let req = ChatRequest::new("triage").user(prompt).temperature(0.0);
                let mut last = String::new();
                for _ in 0..2 {
                    let out = backend.chat(&req)?;
                    if let Some(d) = self.parse_department(&out) {
                        return Ok(d);
                    }
                    last = out.trim().chars().take(200).collect();
                }
                Err(SimError::Unroutable {
                    patient_id: view.patient_id.clone(),
                    reason: format!("triage named no enabled department: {last}"),
                })
            }
        }
    }

    fn parse_department(&self, out: &str) -> Option<String> {
        let value = out.lines().rev().find_map(|l| {
            let l = l.trim();
            l.to_lowercase()
                .starts_with("department:")
                .then(|| l["department:".len()..].trim().to_string())
        })?;
        let v = normalize_words(&value);
        self.clinical
            .iter()
            .find(|id| {
                normalize_words(id) == v
                    || self
                        .kb
                        .department(id)
                        .is_ok_and(|d| normalize_words(&d.name) == v)
            })
            .cloned()
    }

    fn nurse_for(&self, patient_index: usize) -> &str {
        &self.roster.nurses[patient_index % self.roster.nurses.len()]
    }

    /// Ask, grade and (when `learn`) learn; appends a Graded event.
    #[allow(clippy::too_many_arguments)]
    fn decide(
        &mut self,
        dept: &str,
        instance: &TaskInstance,
        patient: &PatientRecord,
        visit_index: u32,
        backend: &dyn Backend,
        learn: bool,
        sink: &mut Vec<LogEvent>,
    ) -> Result<(Vec<String>, bool), SimError> {
        let doctor = self.doctors.get_mut(dept).expect("triage returns staffed departments");
        let decision = doctor.answer(instance, backend)?;
        let correct = grade(&decision, instance);
        let learning = if learn {
            Some(doctor.learn_from_outcome(instance, &decision, backend)?)
        } else {
            None
        };
        let chosen = decision.chosen.clone();
        sink.push(LogEvent::Graded {
            doctor_id: doctor.doctor_id.clone(),
            department_id: dept.to_string(),
            task: instance.task,
            patient_id: patient.patient_id.clone(),
            visit_index,
            disease_id: patient.truth.disease_id.clone(),
            decision,
            truth: instance.truth.clone(),
            correct,
            learning,
        });
        Ok((chosen, correct))
    }

    fn visit_context(state: &VisitState) -> Vec<(&'static str, String)> {
        if state.visit_index > 1 {
            vec![(
                "Visit",
                format!(
                    "return visit {}; the previous treatment did not lead to recovery",
                    state.visit_index
                ),
            )]
        } else {
            Vec::new()
        }
    }

    /// Execute the current phase and return the successor state. Events are
    /// pushed to `sink`; the input state is never modified.
    pub fn step(
        &mut self,
        state: &VisitState,
        patient: &PatientRecord,
        backend: &dyn Backend,
        learn: bool,
        sink: &mut Vec<LogEvent>,
    ) -> Result<VisitState, SimError> {
        let mut next = state.clone();
        let nurse = self.nurse_for(state.patient_index).to_string();
        let visit_ctx = Self::visit_context(state);
        let ctx_pairs: Vec<(&str, &str)> = visit_ctx.iter().map(|(k, v)| (*k, v.as_str())).collect();
        let (to, actor) = match state.phase {
            Phase::Onset => (Phase::Triage, "patient".to_string()),
            Phase::Triage => {
                let dept = self.triage(&patient.view(), backend)?;
                next.triaged_department = Some(dept);
                (Phase::Registration, nurse)
            }
            Phase::Registration => (Phase::Consultation, nurse),
            Phase::Consultation => {
                let dept = state.triaged_department.clone().ok_or(SimError::IllegalPhase(state.phase))?;
                let disease = self.kb.disease(&patient.truth.disease_id)?;
                let instance = TaskInstance::from_patient(
                    Task::Examination,
                    &patient.view(),
                    &ctx_pairs,
                    self.kb.candidate_examinations(&dept)?.to_vec(),
                    disease.examinations.keys().cloned().collect(),
                );
                let (chosen, correct) =
                    self.decide(&dept, &instance, patient, state.visit_index, backend, learn, sink)?;
                next.first_visit.entry(Task::Examination).or_insert(correct);
                next.chosen_examinations = chosen;
                (Phase::Examination, self.doctors[&dept].doctor_id.clone())
            }
            Phase::Examination => {
                next.examination_reports_released = state
                    .chosen_examinations
                    .iter()
                    .map(|m| {
                        let report = patient
                            .examination_reports
                            .get(m)
                            .cloned()
                            .unwrap_or_else(|| NORMAL_FINDINGS.to_string());
                        (m.clone(), report)
                    })
                    .collect();
                (Phase::Diagnosis, nurse)
            }
            Phase::Diagnosis => {
                let dept = state.triaged_department.clone().ok_or(SimError::IllegalPhase(state.phase))?;
                let kb = self.kb.clone();
                let disease = kb.disease(&patient.truth.disease_id)?;
                let mut view = patient.view();
                view.examination_reports = state.examination_reports_released.clone();

                let instance = TaskInstance::from_patient(
                    Task::Diagnosis,
                    &view,
                    &ctx_pairs,
                    self.kb.candidate_diseases(&dept)?.to_vec(),
                    vec![disease.name.clone()],
                );
                let (chosen, correct) =
                    self.decide(&dept, &instance, patient, state.visit_index, backend, learn, sink)?;
                next.first_visit.entry(Task::Diagnosis).or_insert(correct);
                let diagnosis = chosen.join(", ");

                let basis = match self.config.treatment_context {
                    TreatmentContext::OwnDiagnosis => diagnosis.clone(),
                    TreatmentContext::TrueDiagnosis => disease.name.clone(),
                };
                let severity = patient.truth.severity.as_str();
                let mut ctx = ctx_pairs.clone();
                ctx.push(("Diagnosis", &basis));
                ctx.push(("Severity", severity));
                let plan = disease
                    .treatment_label(patient.truth.severity)
                    .ok_or_else(|| SimError::Config(format!("{} has no {severity} plan", disease.name)))?;
                let instance = TaskInstance::from_patient(
                    Task::Treatment,
                    &view,
                    &ctx,
                    self.kb.candidate_treatments(&dept)?,
                    vec![plan],
                );
                let (chosen, correct) =
                    self.decide(&dept, &instance, patient, state.visit_index, backend, learn, sink)?;
                next.first_visit.entry(Task::Treatment).or_insert(correct);
                next.diagnosis = Some(diagnosis);
                next.prescription = Some(chosen.join("; "));
                next.treatment_correct = Some(correct);
                (Phase::Dispensary, self.doctors[&dept].doctor_id.clone())
            }
            Phase::Dispensary => (Phase::Convalescence, nurse),
            Phase::Convalescence => {
                let correct = state.treatment_correct.ok_or(SimError::IllegalPhase(state.phase))?;
                let draw = self.config.seed
                    ^ (state.patient_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    ^ u64::from(state.visit_index).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                let to = convalesce(
                    correct,
                    state.visit_index,
                    self.config.max_revisits,
                    &self.config.recovery,
                    draw,
                );
                (to, "patient".to_string())
            }
            Phase::Revisit => {
                next.visit_index += 1;
                next.chosen_examinations.clear();
                next.examination_reports_released.clear();
                next.diagnosis = None;
                next.prescription = None;
                next.treatment_correct = None;
                (Phase::Triage, "patient".to_string())
            }
            Phase::Recovered | Phase::Unrecovered => return Err(SimError::IllegalPhase(state.phase)),
        };
        sink.push(LogEvent::Transition {
            patient_id: state.patient_id.clone(),
            visit_index: next.visit_index,
            from: Some(state.phase),
            to,
            actor,
        });
        next.phase = to;
        Ok(next)
    }

    /// Drive one patient from onset to a terminal phase.
    pub fn visit(
        &mut self,
        patient: &PatientRecord,
        patient_index: usize,
        backend: &dyn Backend,
        learn: bool,
        sink: &mut Vec<LogEvent>,
    ) -> Result<VisitState, SimError> {
        let mut state = VisitState::new(patient.patient_id.clone(), patient_index);
        sink.push(LogEvent::Transition {
            patient_id: patient.patient_id.clone(),
            visit_index: 1,
            from: None,
            to: Phase::Onset,
            actor: "patient".into(),
        });
        while !state.phase.is_terminal() {
            state = self.step(&state, patient, backend, learn, sink)?;
        }
        sink.push(LogEvent::Outcome {
            patient_index,
            patient_id: patient.patient_id.clone(),
            disease_id: patient.truth.disease_id.clone(),
            department_id: state.triaged_department.clone().unwrap_or_default(),
            phase: state.phase,
            visits: state.visit_index,
            first_visit: state.first_visit.clone(),
        });
        Ok(state)
    }

    /// Every doctor reads the documents of its department scheduled for `day`.
    pub fn read_for_day(
        &mut self,
        day: u64,
        library: &BTreeMap<String, Vec<String>>,
        backend: &dyn Backend,
        sink: &mut Vec<LogEvent>,
    ) -> Result<(), SimError> {
        let per_day = self.config.books_per_day;
        if per_day == 0 {
            return Ok(());
        }
        for (dept, doctor) in self.doctors.iter_mut() {
            let Some(docs) = library.get(dept) else { continue };
            let start = (day as usize).saturating_mul(per_day);
            if start >= docs.len() {
                continue;
            }
            let batch = &docs[start..(start + per_day).min(docs.len())];
            let before: BTreeMap<Task, usize> =
                Task::ALL.into_iter().map(|t| (t, doctor.case_base(t).len())).collect();
            let report = doctor.read_books(batch, backend)?;
            let stored = Task::ALL
                .into_iter()
                .map(|t| (t, doctor.case_base(t).len() - before[&t]))
                .filter(|(_, n)| *n > 0)
                .collect();
            sink.push(LogEvent::BooksRead {
                doctor_id: doctor.doctor_id.clone(),
                department_id: dept.clone(),
                documents: batch.len(),
                stored,
                skipped: report.skipped(),
            });
        }
        Ok(())
    }

    fn checkpoint(
        &self,
        out: &Path,
        hash: &str,
        mode: RunMode,
        next_index: usize,
        log: &mut LogWriter,
    ) -> Result<(), SimError> {
        log.flush()?;
        let base_offsets = self
            .base_files()
            .into_iter()
            .filter(|_| mode == RunMode::Train)
            .map(|rel| {
                let len = file_len(&out.join(&rel));
                (rel, len)
            })
            .collect();
        let cp = Checkpoint {
            cohort_hash: hash.to_string(),
            mode,
            next_index,
            next_seq: log.next_seq(),
            log_offset: file_len(&out.join(LOG_FILE)),
            base_offsets,
        };
        let path = out.join(CHECKPOINT_FILE);
        let tmp = out.join(format!("{CHECKPOINT_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(&cp).expect("serializable"))
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Process `cohort` in order. Train mode attaches journalled bases under
    /// the output directory and learns after every graded decision; eval
    /// mode leaves the (already loaded) bases untouched.
    pub fn run(
        &mut self,
        cohort: &[PatientRecord],
        mode: RunMode,
        backend: &dyn Backend,
        library: &BTreeMap<String, Vec<String>>,
        options: &RunOptions,
    ) -> Result<RunSummary, SimError> {
        let out = options.out_dir.as_path();
        fs::create_dir_all(out).map_err(io_err(out))?;
        let log_path = out.join(LOG_FILE);
        let cp_path = out.join(CHECKPOINT_FILE);
        let hash = cohort_hash(cohort);
        let memory_before: usize = self.doctors.values().map(DoctorAgent::memory_size).sum();

        let (start, mut log, mut outcomes) = if options.resume && cp_path.exists() {
            let text = fs::read_to_string(&cp_path).map_err(io_err(&cp_path))?;
            let cp: Checkpoint =
                serde_json::from_str(&text).map_err(|e| SimError::Checkpoint(e.to_string()))?;
            if cp.cohort_hash != hash {
                return Err(SimError::Checkpoint("cohort differs from the checkpointed run".into()));
            }
            if cp.mode != mode {
                return Err(SimError::Checkpoint(format!("checkpoint belongs to a {:?} run", cp.mode)));
            }
            truncate(&log_path, cp.log_offset)?;
            for (rel, len) in &cp.base_offsets {
                truncate(&out.join(rel), *len)?;
            }
            if mode == RunMode::Train {
                self.attach_bases(out)?;
            }
            let outcomes = Replay::from_log(&read_log(&log_path)?).outcomes;
            (cp.next_index, LogWriter::append(&log_path, cp.next_seq)?, outcomes)
        } else {
            if log_path.exists() || cp_path.exists() {
                if !options.force {
                    return Err(SimError::OutputExists(out.to_path_buf()));
                }
                for p in [&log_path, &cp_path] {
                    if p.exists() {
                        fs::remove_file(p).map_err(io_err(p))?;
                    }
                }
                if mode == RunMode::Train {
                    let d = out.join(DOCTORS_DIR);
                    if d.exists() {
                        fs::remove_dir_all(&d).map_err(io_err(&d))?;
                    }
                }
            }
            if mode == RunMode::Train {
                self.attach_bases(out)?;
            }
            let mut log = LogWriter::append(&log_path, 0)?;
            log.write(
                0,
                LogEvent::RunStarted {
                    mode,
                    seed: self.config.seed,
                    cohort_hash: hash.clone(),
                    patients: cohort.len(),
                },
            )?;
            self.checkpoint(out, &hash, mode, 0, &mut log)?;
            (0, log, Vec::new())
        };

        let learn = mode == RunMode::Train;
        let per_day = self.config.visits_per_day;
        for (index, patient) in cohort.iter().enumerate().skip(start) {
            let day = (index / per_day) as u64;
            let mut events = Vec::new();
            self.visit(patient, index, backend, learn, &mut events)?;
            let mut reading = Vec::new();
            if learn && (index + 1) % per_day == 0 {
                self.read_for_day(day, library, backend, &mut reading)?;
            }
            for ev in events.into_iter().chain(reading) {
                if let LogEvent::Outcome {
                    patient_index,
                    patient_id,
                    disease_id,
                    department_id,
                    phase,
                    first_visit,
                    ..
                } = &ev
                {
                    outcomes.push(OutcomeRow {
                        patient_index: *patient_index,
                        patient_id: patient_id.clone(),
                        disease_id: disease_id.clone(),
                        department_id: department_id.clone(),
                        recovered: *phase == Phase::Recovered,
                        first_visit: first_visit.clone(),
                    });
                }
                log.write(day, ev)?;
            }
            self.checkpoint(out, &hash, mode, index + 1, &mut log)?;
        }
        if start < cohort.len() || cohort.is_empty() {
            let day = (cohort.len().saturating_sub(1) / per_day) as u64;
            log.write(day, LogEvent::RunFinished { patients: cohort.len() })?;
            self.checkpoint(out, &hash, mode, cohort.len(), &mut log)?;
        }
        if mode == RunMode::Eval {
            let after: usize = self.doctors.values().map(DoctorAgent::memory_size).sum();
            debug_assert_eq!(memory_before, after, "eval runs must not change memory");
        }

        let recovered = outcomes.iter().filter(|o| o.recovered).count();
        Ok(RunSummary {
            patients: cohort.len(),
            processed: cohort.len().saturating_sub(start),
            recovered,
            unrecovered: outcomes.len() - recovered,
            outcomes,
            log_path,
        })
    }
}

fn truncate(path: &Path, len: u64) -> Result<(), SimError> {
    if !path.exists() {
        return Ok(());
    }
    let f = fs::OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(len).map_err(io_err(path))
}

/// Phase names of a transition sequence, space separated.
pub fn phase_string(phases: &[Phase]) -> String {
    phases
        .iter()
        .map(|p| format!("{p:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::load_knowledge_base;

    fn kb() -> Arc<KnowledgeBase> {
        Arc::new(
            load_knowledge_base(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/knowledge")).unwrap(),
        )
    }

    #[test]
    fn default_roster_staffs_every_clinical_department() {
        let kb = kb();
        let h = Hospital::new(kb.clone(), Arc::new(TemplateSet::builtin()), WorldConfig::default(), "mock-64")
            .unwrap();
        assert_eq!(h.roster().doctors.len(), 42);
        assert_eq!(h.roster().nurses.len(), 4);
        for d in kb.clinical_departments() {
            assert_eq!(h.roster().staff_of(&d.id), 2, "{}", d.id);
        }
        let few = WorldConfig {
            doctors: 5,
            ..Default::default()
        };
        assert!(Hospital::new(kb, Arc::new(TemplateSet::builtin()), few, "mock-64").is_err());
    }

    #[test]
    fn rules_triage() {
        let kb = kb();
        let all: Vec<String> = kb.clinical_departments().map(|d| d.id.clone()).collect();
        let blisters = vec!["painful blisters on one side of the chest".to_string()];
        assert_eq!(triage_by_rules(&blisters, &kb, &all).as_deref(), Some("dermatology"));
        assert_eq!(triage_by_rules(&["xyzzy".to_string()], &kb, &all), None);
    }

    fn disease(id: &str, dept: &str, symptoms: &[&str]) -> crate::knowledge::DiseaseKnowledge {
        crate::knowledge::DiseaseKnowledge {
            disease_id: id.into(),
            name: id.to_uppercase(),
            department_id: dept.into(),
            risk_factors: vec![],
            symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
            examinations: [("Blood Test".to_string(), "abnormal".to_string())].into(),
            treatment_plans: [(crate::knowledge::Severity::Default, "rest".to_string())].into(),
        }
    }

    #[test]
    fn rules_triage_ties_go_to_smaller_id() {
        let mut depts = crate::knowledge::default_taxonomy();
        depts.retain(|d| d.id == "urology" || d.id == "nephrology");
        let kb = KnowledgeBase::new(
            depts,
            vec![
                disease("a", "urology", &["flank pain", "fever"]),
                disease("b", "nephrology", &["fever", "swollen ankles"]),
            ],
            vec![],
        )
        .unwrap();
        let ids = vec!["urology".to_string(), "nephrology".to_string()];
        let got = triage_by_rules(&["fever".to_string()], &kb, &ids);
        assert_eq!(got.as_deref(), Some("nephrology"));
        let got = triage_by_rules(&["flank pain and fever".to_string()], &kb, &ids);
        assert_eq!(got.as_deref(), Some("urology"));
    }

    #[test]
    fn recovery_rule() {
        let det = RecoveryPolicy::Deterministic;
        assert_eq!(convalesce(true, 1, 3, &det, 0), Phase::Recovered);
        assert_eq!(convalesce(false, 1, 3, &det, 0), Phase::Revisit);
        assert_eq!(convalesce(false, 3, 3, &det, 0), Phase::Unrecovered);
        let degenerate = RecoveryPolicy::Stochastic { p_hi: 1.0, p_lo: 0.0 };
        for seed in 0..50 {
            for (c, v) in [(true, 1), (false, 1), (false, 3)] {
                assert_eq!(convalesce(c, v, 3, &degenerate, seed), convalesce(c, v, 3, &det, seed));
            }
        }
    }
}
