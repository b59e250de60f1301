//! The doctor agent: prompt construction with retrieval, answer parsing and
//! grading, and the learning loop (case accumulation on success, principle
//! reflection and validation on failure, book reading).

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Backend, ChatRequest, EmbeddingVector, LlmError};
use crate::memory::{
    cosine_similarity, CaseBase, CaseSource, ExperienceBase, ExperiencePrinciple, MedicalCase,
    MemoryError, PrincipleOrigin, PrincipleStatus, Task,
};
use crate::patient::PatientView;
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum DoctorError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("empty answer for {task} question")]
    EmptyAnswer { task: Task },
    #[error("reflection produced no principle after {attempts} attempt(s)")]
    EmptyPrinciple { attempts: u32 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Which text a learned case stores (and is retrieved by).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseQuestion {
    PatientInfo,
    PatientInfoAndCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoctorConfig {
    pub top_cases: usize,
    pub top_experiences: usize,
    pub use_cases: bool,
    pub use_experience: bool,
    pub helpfulness_judge: bool,
    /// Label the case section as mixing simulated and external cases.
    pub hybrid: bool,
    /// Validation requires the originating question to be answered correctly.
    pub validate_origin: bool,
    /// Validation requires no accuracy drop on exemplar questions.
    pub validate_exemplars: bool,
    pub exemplar_count: usize,
    pub reflect_retries: u32,
    pub case_question: CaseQuestion,
    pub temperature: f64,
}

impl Default for DoctorConfig {
    fn default() -> Self {
        Self {
            top_cases: 3,
            top_experiences: 4,
            use_cases: true,
            use_experience: true,
            helpfulness_judge: true,
            hybrid: false,
            validate_origin: true,
            validate_exemplars: true,
            exemplar_count: 3,
            reflect_retries: 1,
            case_question: CaseQuestion::PatientInfo,
            temperature: 0.0,
        }
    }
}

/// Which Personal Experience subsections a prompt carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptShape {
    Plain,
    CasesOnly,
    ExperienceOnly,
    Both,
    Hybrid,
}

impl PromptShape {
    pub fn of(config: &DoctorConfig) -> Self {
        match (config.use_cases, config.use_experience) {
            (false, false) => PromptShape::Plain,
            (true, _) if config.hybrid => PromptShape::Hybrid,
            (true, false) => PromptShape::CasesOnly,
            (false, true) => PromptShape::ExperienceOnly,
            (true, true) => PromptShape::Both,
        }
    }
}

pub const SECTION_EXPERIENCE: &str = "## Personal Experience";
pub const SECTION_CASES: &str = "### Medical cases";
pub const SECTION_CASES_HYBRID: &str = "### Medical cases (simulated + external)";
pub const SECTION_PRINCIPLES: &str = "### Principles";

/// One question put to a doctor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task: Task,
    pub patient_id: String,
    /// Text of the patient-information section.
    pub question: String,
    pub candidates: Vec<String>,
    /// Hidden correct answer(s): a set for examination, a singleton otherwise.
    pub truth: Vec<String>,
}

impl TaskInstance {
    /// Build an instance from a patient view. Examination reports are shown
    /// for every task except examination; `context` lines (for example a
    /// diagnosis and severity for the treatment task) are appended.
    pub fn from_patient(
        task: Task,
        view: &PatientView,
        context: &[(&str, &str)],
        candidates: Vec<String>,
        truth: Vec<String>,
    ) -> Self {
        let mut question = view.render(task != Task::Examination);
        for (k, v) in context {
            question.push_str(&format!("\n{k}: {v}"));
        }
        Self {
            task,
            patient_id: view.patient_id.clone(),
            question,
            candidates,
            truth,
        }
    }

    pub fn candidates_text(&self) -> String {
        if self.candidates.is_empty() {
            return "(no candidate list; answer in free text)".to_string();
        }
        self.candidates
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", choice_label(i)))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// `A`..`Z`, then `AA`, `AB`, ...
pub fn choice_label(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn label_index(label: &str, n: usize) -> Option<usize> {
    (0..n).find(|&i| choice_label(i).eq_ignore_ascii_case(label))
}

/// Case-fold, trim, collapse whitespace and strip terminal punctuation.
pub fn normalize_answer(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim()
        .to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: u64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: Vec<String>,
    /// Some chosen answer matched no candidate.
    pub novel: bool,
    pub reasoning: String,
    pub retrieved_cases: Vec<Retrieved>,
    /// Principles that reached the prompt, after the helpfulness judgment.
    pub retrieved_experiences: Vec<Retrieved>,
    pub prompt: String,
    pub prompt_shape: PromptShape,
    #[serde(skip)]
    pub query_embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningKind {
    CaseAdded,
    PrincipleValidated,
    PrincipleDiscarded,
    Noop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearningEvent {
    pub kind: LearningKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principle_id: Option<u64>,
}

impl LearningEvent {
    fn noop() -> Self {
        Self {
            kind: LearningKind::Noop,
            case_id: None,
            principle_id: None,
        }
    }
}

/// A labelled question used to test candidate principles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub instance: TaskInstance,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentReport {
    pub items_stored: usize,
    pub items_skipped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingReport {
    pub documents: Vec<DocumentReport>,
}

impl ReadingReport {
    pub fn stored(&self) -> usize {
        self.documents.iter().map(|d| d.items_stored).sum()
    }

    pub fn skipped(&self) -> usize {
        self.documents.iter().map(|d| d.items_skipped).sum()
    }
}

#[derive(Debug)]
pub struct DoctorAgent {
    pub doctor_id: String,
    pub name: String,
    pub department_id: String,
    pub department_name: String,
    pub config: DoctorConfig,
    case_bases: BTreeMap<Task, CaseBase>,
    experience_bases: BTreeMap<Task, ExperienceBase>,
    exemplars: BTreeMap<Task, Vec<Exemplar>>,
    templates: Arc<TemplateSet>,
    encoder: String,
    exemplar_journal: Option<PathBuf>,
}

pub fn case_base_file(task: Task) -> String {
    format!("cases_{task}.jsonl")
}

pub fn experience_base_file(task: Task) -> String {
    format!("experience_{task}.jsonl")
}

pub const EXEMPLAR_FILE: &str = "exemplars.jsonl";

/// Value after the last `key:` line (case-insensitive).
fn field_after(text: &str, key: &str) -> Option<String> {
    let prefix = format!("{}:", key.to_lowercase());
    text.lines()
        .rev()
        .find_map(|l| {
            let t = l.trim().trim_start_matches(['*', '-', '#']).trim();
            let lower = t.to_lowercase();
            lower
                .starts_with(&prefix)
                .then(|| t[prefix.len()..].trim().trim_matches('*').trim().to_string())
        })
}

impl DoctorAgent {
    pub fn new(
        doctor_id: impl Into<String>,
        name: impl Into<String>,
        department_id: impl Into<String>,
        department_name: impl Into<String>,
        encoder: impl Into<String>,
        templates: Arc<TemplateSet>,
    ) -> Self {
        let encoder = encoder.into();
        Self {
            doctor_id: doctor_id.into(),
            name: name.into(),
            department_id: department_id.into(),
            department_name: department_name.into(),
            config: DoctorConfig::default(),
            case_bases: Task::ALL
                .into_iter()
                .map(|t| (t, CaseBase::new(t, encoder.clone())))
                .collect(),
            experience_bases: Task::ALL
                .into_iter()
                .map(|t| (t, ExperienceBase::new(t, encoder.clone())))
                .collect(),
            exemplars: BTreeMap::new(),
            templates,
            encoder,
            exemplar_journal: None,
        }
    }

    pub fn with_config(mut self, config: DoctorConfig) -> Self {
        self.config = config;
        self
    }

    /// Attach every base to a journal file under `dir`, loading what is
    /// already there.
    pub fn open_bases(&mut self, dir: impl AsRef<Path>, fsync: bool) -> Result<(), DoctorError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| DoctorError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
        for task in Task::ALL {
            self.case_bases.insert(
                task,
                CaseBase::open(dir.join(case_base_file(task)), task, &self.encoder, fsync)?,
            );
            self.experience_bases.insert(
                task,
                ExperienceBase::open(dir.join(experience_base_file(task)), task, &self.encoder, fsync)?,
            );
        }
        let ex = dir.join(EXEMPLAR_FILE);
        if ex.exists() {
            self.load_exemplars(&ex)?;
        } else {
            self.exemplars.clear();
            File::create(&ex).map_err(|e| DoctorError::Io {
                path: ex.clone(),
                message: e.to_string(),
            })?;
        }
        self.exemplar_journal = Some(ex);
        Ok(())
    }

    /// Load the bases saved under `dir` without attaching journals, so the
    /// doctor's memory stays frozen. Missing files leave a base empty.
    pub fn load_bases(&mut self, dir: impl AsRef<Path>) -> Result<(), DoctorError> {
        let dir = dir.as_ref();
        for task in Task::ALL {
            let cases = dir.join(case_base_file(task));
            if cases.exists() {
                let base = CaseBase::load(&cases)?;
                self.check_loaded(base.encoder_name(), base.task(), task)?;
                self.case_bases.insert(task, base);
            }
            let exp = dir.join(experience_base_file(task));
            if exp.exists() {
                let base = ExperienceBase::load(&exp)?;
                self.check_loaded(base.encoder_name(), base.task(), task)?;
                self.experience_bases.insert(task, base);
            }
        }
        let ex = dir.join(EXEMPLAR_FILE);
        if ex.exists() {
            self.load_exemplars(&ex)?;
        }
        self.exemplar_journal = None;
        Ok(())
    }

    fn check_loaded(&self, encoder: &str, found: Task, task: Task) -> Result<(), DoctorError> {
        if encoder != self.encoder {
            return Err(MemoryError::EncoderMismatch {
                base: encoder.to_string(),
                entry: self.encoder.clone(),
            }
            .into());
        }
        if found != task {
            return Err(MemoryError::TaskMismatch { base: found, entry: task }.into());
        }
        Ok(())
    }

    /// Write every base and the exemplar pool under `dir`.
    pub fn save_bases(&self, dir: impl AsRef<Path>) -> Result<(), DoctorError> {
        let dir = dir.as_ref();
        for task in Task::ALL {
            self.case_base(task).save(dir.join(case_base_file(task)))?;
            self.experience_base(task).save(dir.join(experience_base_file(task)))?;
        }
        self.save_exemplars(dir.join(EXEMPLAR_FILE))
    }

    /// Sum of entries over every base, for frozen-memory checks.
    pub fn memory_size(&self) -> usize {
        Task::ALL
            .into_iter()
            .map(|t| self.case_base(t).len() + self.experience_base(t).len())
            .sum()
    }

    pub fn encoder(&self) -> &str {
        &self.encoder
    }

    pub fn case_base(&self, task: Task) -> &CaseBase {
        &self.case_bases[&task]
    }

    pub fn case_base_mut(&mut self, task: Task) -> &mut CaseBase {
        self.case_bases.get_mut(&task).expect("every task has a base")
    }

    pub fn experience_base(&self, task: Task) -> &ExperienceBase {
        &self.experience_bases[&task]
    }

    pub fn experience_base_mut(&mut self, task: Task) -> &mut ExperienceBase {
        self.experience_bases.get_mut(&task).expect("every task has a base")
    }

    pub fn exemplars(&self, task: Task) -> &[Exemplar] {
        self.exemplars.get(&task).map_or(&[], Vec::as_slice)
    }

    pub fn add_exemplar(&mut self, exemplar: Exemplar) -> Result<(), DoctorError> {
        if let Some(path) = &self.exemplar_journal {
            let line = serde_json::to_string(&exemplar).expect("serializable");
            let io = |e: std::io::Error| DoctorError::Io {
                path: path.clone(),
                message: e.to_string(),
            };
            let mut f = std::fs::OpenOptions::new().append(true).open(path).map_err(io)?;
            writeln!(f, "{line}").map_err(io)?;
        }
        self.exemplars.entry(exemplar.instance.task).or_default().push(exemplar);
        Ok(())
    }

    pub fn save_exemplars(&self, path: impl AsRef<Path>) -> Result<(), DoctorError> {
        let path = path.as_ref();
        let io = |e: std::io::Error| DoctorError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        for e in self.exemplars.values().flatten() {
            writeln!(w, "{}", serde_json::to_string(e).expect("serializable")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load_exemplars(&mut self, path: impl AsRef<Path>) -> Result<(), DoctorError> {
        let path = path.as_ref();
        let io = |message: String| DoctorError::Io {
            path: path.to_path_buf(),
            message,
        };
        self.exemplars.clear();
        let file = File::open(path).map_err(|e| io(e.to_string()))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Exemplar =
                serde_json::from_str(&line).map_err(|e| io(format!("line {}: {e}", i + 1)))?;
            self.exemplars.entry(e.instance.task).or_default().push(e);
        }
        Ok(())
    }

    fn render_prompt(
        &self,
        instance: &TaskInstance,
        cases: &[(&MedicalCase, f64)],
        principles: &[&str],
    ) -> Result<String, DoctorError> {
        let mut instruction = self.templates.render(
            "doctor_instruction",
            &[
                ("doctor_name", &self.name),
                ("department_name", &self.department_name),
            ],
        )?;
        instruction.push('\n');
        instruction.push_str(
            self.templates
                .get(&format!("task_{}", instance.task))?
                .trim_end(),
        );

        let mut experience = String::new();
        if self.config.use_cases || self.config.use_experience {
            experience.push('\n');
            experience.push_str(SECTION_EXPERIENCE);
            experience.push('\n');
        }
        if self.config.use_cases {
            experience.push_str(if self.config.hybrid {
                SECTION_CASES_HYBRID
            } else {
                SECTION_CASES
            });
            experience.push('\n');
            if cases.is_empty() {
                experience.push_str("(none)\n");
            }
            for (case, sim) in cases {
                experience.push_str(&format!(
                    "Case #{:05} (similarity {sim:.4})\nQuestion: {}\nAnswer: {}\n",
                    case.case_id, case.question_text, case.answer_text
                ));
            }
        }
        if self.config.use_experience {
            if self.config.use_cases {
                experience.push('\n');
            }
            experience.push_str(SECTION_PRINCIPLES);
            experience.push('\n');
            if principles.is_empty() {
                experience.push_str("(none)\n");
            }
            for (i, p) in principles.iter().enumerate() {
                experience.push_str(&format!("{}. {p}\n", i + 1));
            }
        }

        Ok(self.templates.render(
            "doctor_prompt",
            &[
                ("instruction", &instruction),
                ("patient_information", &instance.question),
                ("candidate_choices", &instance.candidates_text()),
                ("personal_experience", &experience),
            ],
        )?)
    }

    fn retrieve_cases(
        &self,
        task: Task,
        query: &EmbeddingVector,
    ) -> Result<Vec<(&MedicalCase, f64)>, DoctorError> {
        if !self.config.use_cases {
            return Ok(Vec::new());
        }
        Ok(self.case_base(task).retrieve(query, self.config.top_cases)?)
    }

    fn retrieve_principles(
        &self,
        instance: &TaskInstance,
        query: &EmbeddingVector,
        backend: &dyn Backend,
    ) -> Result<Vec<(&ExperiencePrinciple, f64)>, DoctorError> {
        if !self.config.use_experience {
            return Ok(Vec::new());
        }
        let found = self
            .experience_base(instance.task)
            .retrieve(query, self.config.top_experiences)?;
        self.judge_helpfulness(instance, found, backend)
    }

    /// Build the prompt for `instance`, performing retrieval (and the
    /// helpfulness judgment when enabled).
    pub fn build_prompt(
        &self,
        instance: &TaskInstance,
        backend: &dyn Backend,
    ) -> Result<ChatRequest, DoctorError> {
        let query = backend.embed(&instance.question)?;
        let cases = self.retrieve_cases(instance.task, &query)?;
        let principles = self.retrieve_principles(instance, &query, backend)?;
        let texts: Vec<&str> = principles.iter().map(|(p, _)| p.text.as_str()).collect();
        let prompt = self.render_prompt(instance, &cases, &texts)?;
        Ok(self.request(format!("answer.{}", instance.task), prompt))
    }

    fn request(&self, tag: String, prompt: String) -> ChatRequest {
        ChatRequest::new(tag)
            .user(prompt)
            .temperature(self.config.temperature)
    }

    /// Retrieve, judge, prompt once and parse the chosen answer.
    pub fn answer(
        &self,
        instance: &TaskInstance,
        backend: &dyn Backend,
    ) -> Result<Decision, DoctorError> {
        let query = backend.embed(&instance.question)?;
        let cases = self.retrieve_cases(instance.task, &query)?;
        let principles = self.retrieve_principles(instance, &query, backend)?;
        let texts: Vec<&str> = principles.iter().map(|(p, _)| p.text.as_str()).collect();
        let prompt = self.render_prompt(instance, &cases, &texts)?;
        let req = self.request(format!("answer.{}", instance.task), prompt.clone());
        let output = backend.chat(&req)?;
        let (chosen, novel, reasoning) = parse_answer(&output, instance)?;
        Ok(Decision {
            chosen,
            novel,
            reasoning,
            retrieved_cases: cases
                .iter()
                .map(|(c, s)| Retrieved { id: c.case_id, similarity: *s })
                .collect(),
            retrieved_experiences: principles
                .iter()
                .map(|(p, s)| Retrieved { id: p.principle_id, similarity: *s })
                .collect(),
            prompt,
            prompt_shape: PromptShape::of(&self.config),
            query_embedding: Some(query),
        })
    }

    /// Filter retrieved principles through one judge call. Disabled judge
    /// or an empty list pass through unchanged; an unreadable verdict keeps
    /// everything.
    pub fn judge_helpfulness<'p>(
        &self,
        instance: &TaskInstance,
        retrieved: Vec<(&'p ExperiencePrinciple, f64)>,
        backend: &dyn Backend,
    ) -> Result<Vec<(&'p ExperiencePrinciple, f64)>, DoctorError> {
        if !self.config.helpfulness_judge || retrieved.is_empty() {
            return Ok(retrieved);
        }
        let listing = retrieved
            .iter()
            .enumerate()
            .map(|(i, (p, _))| format!("{}. {}", i + 1, p.text))
            .collect::<Vec<_>>()
            .join("\n");
        let prompt = self.templates.render(
            "judge_helpfulness",
            &[("question", &instance.question), ("principles", &listing)],
        )?;
        let out = backend.chat(&self.request(format!("judge.{}", instance.task), prompt))?;
        match parse_keep_set(&out, retrieved.len()) {
            Some(keep) => Ok(retrieved
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(&(i + 1)))
                .map(|(_, r)| r)
                .collect()),
            None => {
                tracing::warn!(doctor = %self.doctor_id, output = %out.trim(), "unreadable helpfulness verdict; keeping all principles");
                Ok(retrieved)
            }
        }
    }

    /// Turn a graded decision into at most one base change.
    pub fn learn_from_outcome(
        &mut self,
        instance: &TaskInstance,
        decision: &Decision,
        backend: &dyn Backend,
    ) -> Result<LearningEvent, DoctorError> {
        if grade(decision, instance) {
            if !self.config.use_cases {
                return Ok(LearningEvent::noop());
            }
            let question = match self.config.case_question {
                CaseQuestion::PatientInfo => instance.question.clone(),
                CaseQuestion::PatientInfoAndCandidates => {
                    format!("{}\nCandidates:\n{}", instance.question, instance.candidates_text())
                }
            };
            let embedding = match (&decision.query_embedding, self.config.case_question) {
                (Some(e), CaseQuestion::PatientInfo) => e.clone(),
                _ => backend.embed(&question)?,
            };
            let encoder = self.encoder.clone();
            let id = self.case_base_mut(instance.task).add_case(
                MedicalCase {
                    case_id: 0,
                    task: instance.task,
                    question_text: question,
                    answer_text: instance.truth.join(", "),
                    embedding,
                    source: CaseSource::Interaction,
                },
                &encoder,
            )?;
            return Ok(LearningEvent {
                kind: LearningKind::CaseAdded,
                case_id: Some(id),
                principle_id: None,
            });
        }
        if !self.config.use_experience {
            return Ok(LearningEvent::noop());
        }
        let mut principle = self.reflect(instance, &decision.chosen, backend)?;
        let status = self.validate_principle(&principle, instance, backend)?;
        principle.status = status;
        let encoder = self.encoder.clone();
        let id = self
            .experience_base_mut(instance.task)
            .add_experience(principle, &encoder)?;
        Ok(LearningEvent {
            kind: if status == PrincipleStatus::Validated {
                LearningKind::PrincipleValidated
            } else {
                LearningKind::PrincipleDiscarded
            },
            case_id: None,
            principle_id: Some(id),
        })
    }

    /// Distil one candidate principle from a wrong answer.
    pub fn reflect(
        &self,
        instance: &TaskInstance,
        wrong_answer: &[String],
        backend: &dyn Backend,
    ) -> Result<ExperiencePrinciple, DoctorError> {
        let question = format!(
            "{}\n\nCandidate choices:\n{}",
            instance.question,
            instance.candidates_text()
        );
        let wrong = wrong_answer.join(", ");
        let correct = instance.truth.join(", ");
        let prompt = self.templates.render(
            "reflect",
            &[
                ("task", instance.task.as_str()),
                ("question", &question),
                ("wrong_answer", &wrong),
                ("correct_answer", &correct),
            ],
        )?;
        let req = self.request(format!("reflect.{}", instance.task), prompt);
        let attempts = self.config.reflect_retries + 1;
        for _ in 0..attempts {
            let out = backend.chat(&req)?;
            let text = field_after(&out, "principle").unwrap_or_else(|| out.trim().to_string());
            if text.is_empty() {
                continue;
            }
            let embedding = backend.embed(&text)?;
            return Ok(ExperiencePrinciple {
                principle_id: 0,
                task: instance.task,
                text,
                embedding,
                origin: PrincipleOrigin {
                    patient_id: instance.patient_id.clone(),
                    question_text: instance.question.clone(),
                    candidates: instance.candidates.clone(),
                    wrong_answer: wrong_answer.to_vec(),
                    correct_answer: instance.truth.clone(),
                },
                status: PrincipleStatus::Candidate,
                refined: false,
                note: None,
            });
        }
        Err(DoctorError::EmptyPrinciple { attempts })
    }

    /// Answer `instance` with a fixed principle list in place of retrieval.
    fn answer_with(
        &self,
        instance: &TaskInstance,
        principles: &[&str],
        backend: &dyn Backend,
    ) -> Result<bool, DoctorError> {
        let query = backend.embed(&instance.question)?;
        let cases = self.retrieve_cases(instance.task, &query)?;
        let prompt = self.render_prompt(instance, &cases, principles)?;
        let out = backend.chat(&self.request(format!("validate.{}", instance.task), prompt))?;
        Ok(match parse_answer(&out, instance) {
            Ok((chosen, _, _)) => grade_answers(&chosen, &instance.truth),
            Err(_) => false,
        })
    }

    /// Decide a candidate principle's fate: the origin question must now be
    /// answered correctly, and exemplar accuracy must not drop. Either
    /// requirement can be switched off in the config.
    pub fn validate_principle(
        &self,
        principle: &ExperiencePrinciple,
        origin: &TaskInstance,
        backend: &dyn Backend,
    ) -> Result<PrincipleStatus, DoctorError> {
        let text = [principle.text.as_str()];
        if self.config.validate_origin && !self.answer_with(origin, &text, backend)? {
            return Ok(PrincipleStatus::Discarded);
        }
        if self.config.validate_exemplars {
            let chosen = self.nearest_exemplars(origin.task, &principle.origin.question_text, backend)?;
            let (mut before, mut after) = (0usize, 0usize);
            for ex in chosen {
                before += usize::from(self.answer_with(&ex.instance, &[], backend)?);
                after += usize::from(self.answer_with(&ex.instance, &text, backend)?);
            }
            if after < before {
                return Ok(PrincipleStatus::Discarded);
            }
        }
        Ok(PrincipleStatus::Validated)
    }

    fn nearest_exemplars(
        &self,
        task: Task,
        question: &str,
        backend: &dyn Backend,
    ) -> Result<Vec<&Exemplar>, DoctorError> {
        let pool = self.exemplars(task);
        let m = self.config.exemplar_count.min(pool.len());
        if m == 0 {
            return Ok(Vec::new());
        }
        let query = backend.embed(question)?;
        let mut scored = pool
            .iter()
            .enumerate()
            .map(|(i, e)| cosine_similarity(&query, &e.embedding).map(|s| (i, s)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored.into_iter().take(m).map(|(i, _)| &pool[i]).collect())
    }

    /// Validate a stored candidate principle and record its status.
    pub fn validate_stored(
        &mut self,
        task: Task,
        id: u64,
        backend: &dyn Backend,
    ) -> Result<PrincipleStatus, DoctorError> {
        let p = self
            .experience_base(task)
            .get(id)
            .cloned()
            .ok_or(MemoryError::UnknownId(id))?;
        if p.status != PrincipleStatus::Candidate {
            return Ok(p.status);
        }
        let status = self.validate_principle(&p, &origin_instance(&p), backend)?;
        self.experience_base_mut(task).set_status(id, status)?;
        Ok(status)
    }

    /// Reformat every validated, not yet refined principle of `task` after
    /// the style of `format_examples`. A rewrite is kept only if it passes
    /// validation again. Returns the number of principles rewritten.
    pub fn refine_experience(
        &mut self,
        task: Task,
        format_examples: &str,
        backend: &dyn Backend,
    ) -> Result<usize, DoctorError> {
        let pending: Vec<ExperiencePrinciple> = self
            .experience_base(task)
            .entries()
            .iter()
            .filter(|p| p.status == PrincipleStatus::Validated && !p.refined)
            .cloned()
            .collect();
        let mut rewritten = 0;
        for p in pending {
            let prompt = self.templates.render(
                "refine",
                &[("examples", format_examples), ("principle", &p.text)],
            )?;
            let out = backend.chat(&self.request(format!("refine.{task}"), prompt))?;
            let text = field_after(&out, "principle").unwrap_or_else(|| out.trim().to_string());
            let update = if text.is_empty() {
                (None, Some("reformatting produced no text".to_string()))
            } else {
                let embedding = backend.embed(&text)?;
                let candidate = ExperiencePrinciple {
                    text: text.clone(),
                    embedding: embedding.clone(),
                    ..p.clone()
                };
                match self.validate_principle(&candidate, &origin_instance(&p), backend)? {
                    PrincipleStatus::Validated => (Some((text, embedding)), None),
                    _ => (None, Some("reformatted text failed re-validation".to_string())),
                }
            };
            if update.0.is_some() {
                rewritten += 1;
            }
            self.experience_base_mut(task)
                .mark_refined(p.principle_id, update.0, update.1)?;
        }
        Ok(rewritten)
    }

    /// Convert documents into multiple-choice items, store each as a book
    /// case and add it to the exemplar pool.
    pub fn read_books(
        &mut self,
        documents: &[String],
        backend: &dyn Backend,
    ) -> Result<ReadingReport, DoctorError> {
        if documents.is_empty() {
            return Err(DoctorError::InvalidInput("no documents to read".into()));
        }
        let mut report = ReadingReport::default();
        for (d, doc) in documents.iter().enumerate() {
            let prompt = self.templates.render(
                "read_books",
                &[("department_name", &self.department_name), ("document", doc)],
            )?;
            let out = backend.chat(&self.request("read_books".into(), prompt))?;
            let (items, skipped) = parse_book_items(&out);
            let mut doc_report = DocumentReport {
                items_stored: 0,
                items_skipped: skipped,
            };
            for (n, mut item) in items.into_iter().enumerate() {
                item.patient_id = format!("book-{}-{d}-{n}", self.doctor_id);
                let embedding = backend.embed(&item.question)?;
                let encoder = self.encoder.clone();
                self.case_base_mut(item.task).add_case(
                    MedicalCase {
                        case_id: 0,
                        task: item.task,
                        question_text: item.question.clone(),
                        answer_text: item.truth.join(", "),
                        embedding: embedding.clone(),
                        source: CaseSource::Book,
                    },
                    &encoder,
                )?;
                self.add_exemplar(Exemplar {
                    instance: item,
                    embedding,
                })?;
                doc_report.items_stored += 1;
            }
            report.documents.push(doc_report);
        }
        Ok(report)
    }

    /// Store labelled questions from an external benchmark as cases.
    pub fn ingest_labeled(
        &mut self,
        items: &[TaskInstance],
        backend: &dyn Backend,
    ) -> Result<usize, DoctorError> {
        let encoder = self.encoder.clone();
        for item in items {
            let embedding = backend.embed(&item.question)?;
            self.case_base_mut(item.task).add_case(
                MedicalCase {
                    case_id: 0,
                    task: item.task,
                    question_text: item.question.clone(),
                    answer_text: item.truth.join(", "),
                    embedding,
                    source: CaseSource::ExternalLabeled,
                },
                &encoder,
            )?;
        }
        Ok(items.len())
    }
}

/// The question a principle was reflected from, as an instance.
pub fn origin_instance(p: &ExperiencePrinciple) -> TaskInstance {
    TaskInstance {
        task: p.task,
        patient_id: p.origin.patient_id.clone(),
        question: p.origin.question_text.clone(),
        candidates: p.origin.candidates.clone(),
        truth: p.origin.correct_answer.clone(),
    }
}

fn parse_keep_set(out: &str, n: usize) -> Option<BTreeSet<usize>> {
    let value = field_after(out, "keep")?;
    if value.trim().trim_end_matches('.').eq_ignore_ascii_case("none") {
        return Some(BTreeSet::new());
    }
    let mut keep = BTreeSet::new();
    for part in value.split([',', ';', ' ']).map(str::trim).filter(|s| !s.is_empty()) {
        let i: usize = part.trim_end_matches('.').parse().ok()?;
        if i == 0 || i > n {
            return None;
        }
        keep.insert(i);
    }
    (!keep.is_empty()).then_some(keep)
}

/// Resolve one answer token against the candidate list.
fn resolve_token(token: &str, candidates: &[String]) -> Option<String> {
    let t = token.trim().trim_matches(['(', ')', '[', ']', '*', '`']).trim();
    let bare = t.trim_end_matches(['.', ')', ':']);
    if let Some(i) = label_index(bare, candidates.len()) {
        return Some(candidates[i].clone());
    }
    let norm = normalize_answer(t);
    if let Some(c) = candidates.iter().find(|c| normalize_answer(c) == norm) {
        return Some(c.clone());
    }
    // "B. COVID-19" / "B) COVID-19"
    if let Some(pos) = t.find(['.', ')', ':']) {
        let (label, rest) = (&t[..pos], &t[pos + 1..]);
        if let Some(i) = label_index(label.trim(), candidates.len()) {
            if normalize_answer(rest) == normalize_answer(&candidates[i]) {
                return Some(candidates[i].clone());
            }
        }
    }
    None
}

/// Parse `Answer:` and `Reasoning:` lines. Returns the chosen answers, a
/// novelty flag and the reasoning text.
pub fn parse_answer(
    output: &str,
    instance: &TaskInstance,
) -> Result<(Vec<String>, bool, String), DoctorError> {
    if output.trim().is_empty() {
        return Err(DoctorError::EmptyAnswer {
            task: instance.task,
        });
    }
    let value = field_after(output, "answer").unwrap_or_else(|| {
        output
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or_default()
            .to_string()
    });
    let reasoning = output
        .lines()
        .skip_while(|l| !l.trim().to_lowercase().starts_with("reasoning:"))
        .collect::<Vec<_>>()
        .join("\n");
    let reasoning = reasoning
        .trim()
        .get("reasoning:".len()..)
        .map(|s| s.trim().to_string())
        .unwrap_or_default();

    let tokens: Vec<&str> = if instance.task == Task::Examination {
        value.split([',', ';']).filter(|s| !s.trim().is_empty()).collect()
    } else {
        vec![value.as_str()]
    };
    let mut chosen = Vec::new();
    let mut novel = false;
    for token in tokens {
        let resolved = resolve_token(token, &instance.candidates).unwrap_or_else(|| {
            novel = true;
            token.trim().to_string()
        });
        if !chosen.contains(&resolved) {
            chosen.push(resolved);
        }
    }
    if chosen.is_empty() || chosen.iter().all(|c| c.is_empty()) {
        return Err(DoctorError::EmptyAnswer {
            task: instance.task,
        });
    }
    Ok((chosen, novel, reasoning))
}

fn grade_answers(chosen: &[String], truth: &[String]) -> bool {
    let a: BTreeSet<String> = chosen.iter().map(|s| normalize_answer(s)).collect();
    let b: BTreeSet<String> = truth.iter().map(|s| normalize_answer(s)).collect();
    a == b
}

/// Normalized set equality between the chosen answers and the truth.
pub fn grade(decision: &Decision, instance: &TaskInstance) -> bool {
    grade_answers(&decision.chosen, &instance.truth)
}

/// Split reading output into well-formed items and a count of rejected ones.
pub fn parse_book_items(output: &str) -> (Vec<TaskInstance>, usize) {
    let mut items = Vec::new();
    let mut skipped = 0;
    for block in output.split("[item]").skip(1) {
        match parse_book_item(block) {
            Some(item) => items.push(item),
            None => skipped += 1,
        }
    }
    (items, skipped)
}

fn parse_book_item(block: &str) -> Option<TaskInstance> {
    let mut task = None;
    let mut question = String::new();
    let mut options: Vec<(String, String)> = Vec::new();
    let mut answer = None;
    for line in block.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((key, value)) = line.split_once(':') else {
            if options.is_empty() && !question.is_empty() {
                question.push(' ');
                question.push_str(line);
            }
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        match key.to_lowercase().as_str() {
            "task" => task = Task::parse(value),
            "question" => question = value.to_string(),
            "answer" => answer = Some(value.to_string()),
            _ if !key.is_empty() && key.chars().all(|c| c.is_ascii_uppercase()) => {
                options.push((key.to_string(), value.to_string()))
            }
            _ if options.is_empty() && !question.is_empty() => {
                question.push(' ');
                question.push_str(line);
            }
            _ => {}
        }
    }
    let task = task?;
    if question.is_empty() || options.len() < 2 {
        return None;
    }
    let answer = answer?;
    let labels: Vec<&str> = answer.split([',', ';']).map(str::trim).filter(|s| !s.is_empty()).collect();
    if labels.is_empty() || (task != Task::Examination && labels.len() != 1) {
        return None;
    }
    let truth = labels
        .iter()
        .map(|l| {
            options
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case(l.trim_end_matches('.')))
                .map(|(_, v)| v.clone())
        })
        .collect::<Option<Vec<_>>>()?;
    Some(TaskInstance {
        task,
        patient_id: String::new(),
        question,
        candidates: options.into_iter().map(|(_, v)| v).collect(),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockBackend, MockRule, MockScript};

    fn doctor(config: DoctorConfig) -> DoctorAgent {
        DoctorAgent::new(
            "d1",
            "Dr. Test",
            "respiratory",
            "Department of Respiratory Medicine",
            "mock-64",
            Arc::new(TemplateSet::builtin()),
        )
        .with_config(config)
    }

    fn diag(question: &str, truth: &str) -> TaskInstance {
        TaskInstance {
            task: Task::Diagnosis,
            patient_id: "p".into(),
            question: question.into(),
            candidates: vec![
                "COVID-19".into(),
                "Influenza B".into(),
                "Community-Acquired Pneumonia".into(),
                "Pulmonary Tuberculosis".into(),
            ],
            truth: vec![truth.into()],
        }
    }

    #[test]
    fn labels_run_past_z() {
        assert_eq!(choice_label(0), "A");
        assert_eq!(choice_label(25), "Z");
        assert_eq!(choice_label(26), "AA");
        assert_eq!(choice_label(27), "AB");
        assert_eq!(choice_label(26 * 27), "AAA");
    }

    #[test]
    fn defaults() {
        let c = DoctorConfig::default();
        assert_eq!((c.top_cases, c.top_experiences), (3, 4));
    }

    #[test]
    fn label_answer_parses_to_candidate() {
        let inst = diag("fever", "Influenza B");
        let (c, novel, r) = parse_answer("Answer: B\nReasoning: seasonal", &inst).unwrap();
        assert_eq!(c, vec!["Influenza B"]);
        assert!(!novel);
        assert_eq!(r, "seasonal");
        let (c, ..) = parse_answer("Answer: (b)", &inst).unwrap();
        assert_eq!(c, vec!["Influenza B"]);
        let (c, ..) = parse_answer("Answer: B. Influenza B", &inst).unwrap();
        assert_eq!(c, vec!["Influenza B"]);
        let (c, ..) = parse_answer("Answer: covid-19.", &inst).unwrap();
        assert_eq!(c, vec!["COVID-19"]);
    }

    #[test]
    fn non_candidate_answer_is_novel() {
        let inst = diag("fever", "COVID-19");
        let (c, novel, _) = parse_answer("Answer: Legionnaires' disease", &inst).unwrap();
        assert_eq!(c, vec!["Legionnaires' disease"]);
        assert!(novel);
        assert!(matches!(parse_answer("  \n", &inst), Err(DoctorError::EmptyAnswer { .. })));
    }

    #[test]
    fn examination_is_strict_set_equality() {
        let inst = TaskInstance {
            task: Task::Examination,
            patient_id: "p".into(),
            question: "q".into(),
            candidates: vec!["Blood Test".into(), "Chest X-ray Exam".into(), "Sputum Smear".into()],
            truth: vec!["Blood Test".into(), "Chest X-ray Exam".into()],
        };
        let (c, ..) = parse_answer("Answer: B, A", &inst).unwrap();
        assert!(grade_answers(&c, &inst.truth));
        let (c, ..) = parse_answer("Answer: A", &inst).unwrap();
        assert!(!grade_answers(&c, &inst.truth));
        assert!(grade_answers(&["covid-19.".into()], &["COVID-19".into()]));
    }

    #[test]
    fn ablation_shapes() {
        let mock = MockBackend::new(MockScript::default());
        let inst = diag("fever and cough", "COVID-19");
        let plain = doctor(DoctorConfig {
            use_cases: false,
            use_experience: false,
            ..Default::default()
        });
        let p = plain.build_prompt(&inst, &mock).unwrap().full_text();
        assert!(!p.contains(SECTION_EXPERIENCE));
        let order = ["## Instruction", "## Patient Information", "## Candidate Choices"];
        let pos: Vec<usize> = order.iter().map(|s| p.find(s).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));

        let both = doctor(DoctorConfig::default());
        let p = both.build_prompt(&inst, &mock).unwrap().full_text();
        assert!(p.contains(SECTION_CASES) && p.contains(SECTION_PRINCIPLES));
        assert!(p.find("## Candidate Choices").unwrap() < p.find(SECTION_EXPERIENCE).unwrap());
    }

    #[test]
    fn case_listing_is_clamped() {
        let mock = MockBackend::new(MockScript::default());
        let mut d = doctor(DoctorConfig::default());
        for q in ["fever, dry cough", "sore throat, fever"] {
            let c = MedicalCase {
                case_id: 0,
                task: Task::Diagnosis,
                question_text: q.into(),
                answer_text: "COVID-19".into(),
                embedding: mock.embed(q).unwrap(),
                source: CaseSource::Interaction,
            };
            d.case_base_mut(Task::Diagnosis).add_case(c, "mock-64").unwrap();
        }
        let p = d.build_prompt(&diag("fever", "COVID-19"), &mock).unwrap().full_text();
        assert_eq!(p.matches("Case #").count(), 2);
    }

    fn principle(text: &str, mock: &MockBackend) -> ExperiencePrinciple {
        ExperiencePrinciple {
            principle_id: 0,
            task: Task::Diagnosis,
            text: text.into(),
            embedding: mock.embed(text).unwrap(),
            origin: PrincipleOrigin {
                patient_id: "p".into(),
                question_text: "q".into(),
                candidates: vec![],
                wrong_answer: vec![],
                correct_answer: vec![],
            },
            status: PrincipleStatus::Candidate,
            refined: false,
            note: None,
        }
    }

    #[test]
    fn judge_keep_set() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("judge.*", "Keep: 1, 3")));
        let d = doctor(DoctorConfig::default());
        let ps: Vec<_> = ["r1", "r2", "r3", "r4"].iter().map(|t| principle(t, &mock)).collect();
        let list: Vec<_> = ps.iter().zip([0.9, 0.8, 0.7, 0.6]).collect();
        let inst = diag("q", "COVID-19");
        let kept = d.judge_helpfulness(&inst, list.clone(), &mock).unwrap();
        assert_eq!(kept.iter().map(|(p, _)| p.text.as_str()).collect::<Vec<_>>(), ["r1", "r3"]);

        let garbage = MockBackend::new(MockScript::default().rule(MockRule::new("judge.*", "hmm")));
        assert_eq!(d.judge_helpfulness(&inst, list.clone(), &garbage).unwrap().len(), 4);

        let off = doctor(DoctorConfig {
            helpfulness_judge: false,
            ..Default::default()
        });
        let silent = MockBackend::new(MockScript::default());
        assert_eq!(off.judge_helpfulness(&inst, list, &silent).unwrap().len(), 4);
        assert_eq!(silent.chat_calls(), 0);
    }

    #[test]
    fn keep_none_and_out_of_range() {
        assert_eq!(parse_keep_set("Keep: none", 3), Some(BTreeSet::new()));
        assert_eq!(parse_keep_set("Keep: 4", 3), None);
        assert_eq!(parse_keep_set("Keep: 2", 3), Some([2].into()));
    }

    #[test]
    fn correct_answer_adds_a_case() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("answer.*", "Answer: A")));
        let mut d = doctor(DoctorConfig::default());
        let inst = diag("fever", "COVID-19");
        let dec = d.answer(&inst, &mock).unwrap();
        let ev = d.learn_from_outcome(&inst, &dec, &mock).unwrap();
        assert_eq!(ev.kind, LearningKind::CaseAdded);
        assert_eq!(d.case_base(Task::Diagnosis).len(), 1);
        assert_eq!(d.experience_base(Task::Diagnosis).len(), 0);
        assert_eq!(d.case_base(Task::Diagnosis).entries()[0].question_text, "fever");
    }

    #[test]
    fn disabled_learning_is_noop() {
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("answer.*", "Answer: A")));
        let mut d = doctor(DoctorConfig {
            use_cases: false,
            use_experience: false,
            ..Default::default()
        });
        let good = diag("fever", "COVID-19");
        let dec = d.answer(&good, &mock).unwrap();
        assert_eq!(d.learn_from_outcome(&good, &dec, &mock).unwrap().kind, LearningKind::Noop);
        let bad = diag("fever", "Influenza B");
        assert_eq!(d.learn_from_outcome(&bad, &dec, &mock).unwrap().kind, LearningKind::Noop);
    }

    #[test]
    fn reflection_stores_text_verbatim_and_retries_once() {
        let rule = "People over the age of 50 are likely to contract Herpes Zoster!";
        let mock = MockBackend::new(
            MockScript::default().rule(MockRule::new("reflect.*", format!("Principle: {rule}"))),
        );
        let d = doctor(DoctorConfig::default());
        let inst = diag("q", "COVID-19");
        let p = d.reflect(&inst, &["Influenza B".into()], &mock).unwrap();
        assert_eq!(p.text, rule);
        assert_eq!(p.status, PrincipleStatus::Candidate);

        let empty = MockBackend::new(MockScript::default().rule(MockRule::new("reflect.*", "Principle:")));
        let err = d.reflect(&inst, &["x".into()], &empty).unwrap_err();
        assert!(matches!(err, DoctorError::EmptyPrinciple { attempts: 2 }));
        assert_eq!(empty.chat_calls(), 2);
    }

    #[test]
    fn backend_failure_leaves_no_partial_write() {
        let mock = MockBackend::new(
            MockScript::default()
                .rule(MockRule::new("answer.*", "Answer: B"))
                .rule(MockRule::new("reflect.*", "Principle: think of covid")),
        );
        let mut d = doctor(DoctorConfig::default());
        let inst = diag("fever", "COVID-19");
        let dec = d.answer(&inst, &mock).unwrap();
        assert!(d.learn_from_outcome(&inst, &dec, &mock).is_err());
        assert_eq!(d.experience_base(Task::Diagnosis).len(), 0);
    }

    #[test]
    fn book_items_parse_and_skip() {
        let out = "[item]\ntask: diagnosis\nquestion: fever and rash\nA: Measles\nB: Eczema\nanswer: A\n\
                   [item]\ntask: examination\nquestion: which tests\nA: Blood Test\nB: Skin Biopsy\nanswer: A, B\n\
                   [item]\ntask: diagnosis\nquestion: broken\nA: only one\nanswer: C\n";
        let (items, skipped) = parse_book_items(out);
        assert_eq!(items.len(), 2);
        assert_eq!(skipped, 1);
        assert_eq!(items[0].truth, vec!["Measles"]);
        assert_eq!(items[1].truth, vec!["Blood Test", "Skin Biopsy"]);
    }

    #[test]
    fn reading_stores_book_cases_and_exemplars() {
        let out = "[item]\ntask: diagnosis\nquestion: fever and rash\nA: Measles\nB: Eczema\nanswer: A\n\
                   [item]\ntask: diagnosis\nquestion: itchy dry skin\nA: Measles\nB: Eczema\nanswer: B\n";
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("read_books", out)));
        let mut d = doctor(DoctorConfig::default());
        let report = d.read_books(&["a document".into()], &mock).unwrap();
        assert_eq!(report.stored(), 2);
        assert_eq!(d.case_base(Task::Diagnosis).count_by_source(CaseSource::Book), 2);
        assert_eq!(d.exemplars(Task::Diagnosis).len(), 2);
        assert!(d.read_books(&[], &mock).is_err());
    }
}
