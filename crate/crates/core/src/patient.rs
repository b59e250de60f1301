//! Patient agent generation.
//!
//! A patient is generated for a chosen disease in four sequential stages:
//! basic information, medical history, symptoms, examination reports. Each
//! stage is conditioned on the disease knowledge and the earlier stages.
//! The record is then gated by [`quality_check`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knowledge::{DiseaseKnowledge, KnowledgeBase, KnowledgeError, Severity};
use crate::llm::{Backend, ChatRequest, LlmError};
use crate::templates::{TemplateError, TemplateSet};

#[derive(Debug, Error)]
pub enum PatientError {
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("stage `{stage}` output could not be parsed: {message}")]
    Parse { stage: &'static str, message: String },
    #[error("no record passed quality control after {attempts} attempt(s): {last}")]
    QcExhausted { attempts: u32, last: String },
    #[error("invalid cohort spec: {0}")]
    InvalidSpec(String),
    #[error("patient {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<PatientError>,
    },
    #[error("cohort file {path}: {message}")]
    CohortFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        }
    }

    fn parse(s: &str) -> Option<Gender> {
        match s.trim().to_lowercase().as_str() {
            "male" | "m" | "man" => Some(Gender::Male),
            "female" | "f" | "woman" => Some(Gender::Female),
            "other" => Some(Gender::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Profile {
    pub name: String,
    pub gender: Gender,
    pub age: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub disease_id: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CreatedBy {
    Llm,
    Template,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub profile: Profile,
    pub medical_history: Vec<String>,
    pub symptoms: Vec<String>,
    pub examination_reports: BTreeMap<String, String>,
    pub truth: PatientTruth,
    pub created_by: CreatedBy,
}

/// What a doctor is allowed to see of a patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientView {
    pub patient_id: String,
    pub profile: Profile,
    pub medical_history: Vec<String>,
    pub symptoms: Vec<String>,
    pub examination_reports: BTreeMap<String, String>,
}

/// Sidecar line holding the hidden part of a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub patient_id: String,
    pub disease_id: String,
    pub severity: Severity,
    pub created_by: CreatedBy,
}

impl PatientRecord {
    pub fn view(&self) -> PatientView {
        PatientView {
            patient_id: self.patient_id.clone(),
            profile: self.profile.clone(),
            medical_history: self.medical_history.clone(),
            symptoms: self.symptoms.clone(),
            examination_reports: self.examination_reports.clone(),
        }
    }

    pub fn truth_record(&self) -> TruthRecord {
        TruthRecord {
            patient_id: self.patient_id.clone(),
            disease_id: self.truth.disease_id.clone(),
            severity: self.truth.severity,
            created_by: self.created_by,
        }
    }

    /// Content hash of the visible view, used for train/test overlap checks.
    pub fn content_hash(&self) -> String {
        let line = serde_json::to_string(&self.view()).expect("serializable");
        hex::encode(Sha256::digest(line.as_bytes()))
    }
}

impl PatientView {
    /// Text of the patient-information prompt section.
    pub fn render(&self, include_reports: bool) -> String {
        let history = if self.medical_history.is_empty() {
            "none".to_string()
        } else {
            self.medical_history.join("; ")
        };
        let mut out = format!(
            "Name: {}\nGender: {}\nAge: {}\nMedical history: {}\nSymptoms: {}",
            self.profile.name,
            self.profile.gender.as_str(),
            self.profile.age,
            history,
            self.symptoms.join("; ")
        );
        if include_reports {
            out.push_str("\nExamination reports:");
            if self.examination_reports.is_empty() {
                out.push_str(" none");
            }
            for (modality, report) in &self.examination_reports {
                out.push_str(&format!("\n- {modality}: {report}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcVerdict {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

impl QcVerdict {
    fn from_violations(violations: Vec<Violation>) -> Self {
        Self {
            passed: violations.is_empty(),
            violations,
        }
    }
}

pub const CHECK_DEMOGRAPHICS: &str = "demographics";
pub const CHECK_SYMPTOM_OVERLAP: &str = "symptom_overlap";
pub const CHECK_EXAM_MODALITIES: &str = "exam_modalities";
pub const CHECK_JUDGE: &str = "judge";

fn normalize_phrase(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rule checks, plus the optional consistency judge when `judge` is given.
pub fn quality_check(
    record: &PatientRecord,
    kb: &KnowledgeBase,
    judge: Option<(&dyn Backend, &TemplateSet)>,
) -> Result<QcVerdict, PatientError> {
    let disease = kb.disease(&record.truth.disease_id)?;
    let mut violations = Vec::new();
    let mut violate = |check: &str, message: String| {
        violations.push(Violation {
            check: check.to_string(),
            message,
        })
    };

    if record.profile.age > 120 {
        violate(CHECK_DEMOGRAPHICS, format!("age {} outside [0, 120]", record.profile.age));
    }
    if record.profile.name.trim().is_empty() {
        violate(CHECK_DEMOGRAPHICS, "empty name".into());
    }

    let vocab: Vec<String> = disease.symptoms.iter().map(|s| normalize_phrase(s)).collect();
    let overlaps = record.symptoms.iter().any(|s| {
        let s = normalize_phrase(s);
        !s.is_empty() && vocab.iter().any(|v| s.contains(v.as_str()) || v.contains(s.as_str()))
    });
    if !overlaps {
        violate(
            CHECK_SYMPTOM_OVERLAP,
            format!("no reported symptom matches the {} vocabulary", disease.name),
        );
    }

    for modality in record.examination_reports.keys() {
        if !disease.examinations.contains_key(modality) {
            violate(
                CHECK_EXAM_MODALITIES,
                format!("examination `{modality}` is not known for {}", disease.name),
            );
        }
    }

    if let Some((backend, templates)) = judge {
        let knowledge = format!(
            "Symptoms: {}\nExaminations: {}",
            disease.symptoms.join("; "),
            disease
                .examinations
                .iter()
                .map(|(k, v)| format!("{k}: {v}"))
                .collect::<Vec<_>>()
                .join("\n")
        );
        let record_text = record.view().render(true);
        let prompt = templates.render(
            "qc_judge",
            &[
                ("disease_name", &disease.name),
                ("knowledge", &knowledge),
                ("record", &record_text),
            ],
        )?;
        let out = backend.chat(&ChatRequest::new("qc.judge").user(prompt))?;
        let verdict = key_values(&out)
            .into_iter()
            .find(|(k, _)| k == "verdict")
            .map(|(_, v)| v.to_lowercase());
        match verdict.as_deref() {
            Some("pass") => {}
            Some("fail") => violate(CHECK_JUDGE, judge_reason(&out)),
            _ => violate(CHECK_JUDGE, format!("unparseable judge verdict: {}", out.trim())),
        }
    }

    Ok(QcVerdict::from_violations(violations))
}

fn judge_reason(out: &str) -> String {
    key_values(out)
        .into_iter()
        .find(|(k, _)| k == "reason")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "judge rejected the record".into())
}

/// Content of the first fenced block, or the whole text if there is none.
fn fenced_block(text: &str) -> &str {
    let Some(start) = text.find("```") else {
        return text;
    };
    let after = &text[start + 3..];
    // skip an info string such as ```yaml
    let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
    let body = &after[body_start..];
    match body.find("```") {
        Some(end) => &body[..end],
        None => body,
    }
}

/// `key: value` lines with lowercase keys.
fn key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*']).trim();
            let (k, v) = line.split_once(':')?;
            let k = k.trim().to_lowercase();
            (!k.is_empty()).then(|| (k, v.trim().to_string()))
        })
        .collect()
}

fn split_list(value: &str) -> Vec<String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none"))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorMode {
    Llm,
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Demographics {
    pub min_age: u32,
    pub max_age: u32,
    /// Probability that a template-generated patient is female.
    pub female_fraction: f64,
}

impl Default for Demographics {
    fn default() -> Self {
        Self {
            min_age: 18,
            max_age: 85,
            female_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub department_id: String,
    /// Empty means uniform over the department's diseases.
    #[serde(default)]
    pub disease_weights: BTreeMap<String, f64>,
    pub size: usize,
    #[serde(default)]
    pub demographics: Demographics,
    pub seed: u64,
}

const FIRST_NAMES_MALE: &[&str] = &[
    "James", "Robert", "Kenneth", "Jason", "Michael", "David", "Daniel", "Thomas", "Andrew",
    "Samuel", "Henry", "Wei", "Arjun", "Carlos", "Omar", "Lucas",
];
const FIRST_NAMES_FEMALE: &[&str] = &[
    "Mary", "Linda", "Katherine", "Jessica", "Sarah", "Emily", "Grace", "Olivia", "Hannah",
    "Mei", "Priya", "Sofia", "Amara", "Elena", "Chloe", "Ruth",
];
const LAST_NAMES: &[&str] = &[
    "Morgan", "Thompson", "Huddleston", "Li", "Davis", "Chen", "Jackson", "Garcia", "Patel",
    "Nguyen", "Okafor", "Kowalski", "Silva", "Hughes", "Tanaka", "Walker", "Brown", "Rossi",
];
const COMMON_HISTORY: &[&str] = &[
    "hypertension",
    "type 2 diabetes",
    "hyperlipidaemia",
    "seasonal allergies",
    "appendectomy",
    "childhood asthma",
    "gastro-oesophageal reflux",
    "migraine",
    "osteoarthritis",
    "hypothyroidism",
];

/// Quality-control counters over a generated cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QcStats {
    pub patients: usize,
    /// Patients accepted on their first attempt.
    pub first_pass: usize,
    pub attempts: u64,
}

impl QcStats {
    pub fn retried(&self) -> usize {
        self.patients - self.first_pass
    }
}

const GEN_TEMPERATURE: f64 = 0.7;

/// Couples a generation backend with the knowledge base.
#[derive(Debug, Clone)]
pub struct PatientFactory<'a> {
    kb: &'a KnowledgeBase,
    templates: &'a TemplateSet,
    pub mode: GeneratorMode,
    pub qc_retries: u32,
    pub parse_retries: u32,
    pub use_judge: bool,
}

impl<'a> PatientFactory<'a> {
    pub fn new(kb: &'a KnowledgeBase, templates: &'a TemplateSet, mode: GeneratorMode) -> Self {
        Self {
            kb,
            templates,
            mode,
            qc_retries: 3,
            parse_retries: 2,
            use_judge: false,
        }
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        self.kb
    }

    /// Generate one QC-passed patient. Each QC retry uses a fresh seed
    /// derived from `seed`.
    pub fn generate_patient(
        &self,
        disease_id: &str,
        backend: &dyn Backend,
        seed: u64,
        patient_id: &str,
        demographics: &Demographics,
    ) -> Result<PatientRecord, PatientError> {
        self.generate_counted(disease_id, backend, seed, patient_id, demographics)
            .map(|(r, _)| r)
    }

    /// Like [`generate_patient`](Self::generate_patient), also returning the
    /// number of QC attempts used.
    pub fn generate_counted(
        &self,
        disease_id: &str,
        backend: &dyn Backend,
        seed: u64,
        patient_id: &str,
        demographics: &Demographics,
    ) -> Result<(PatientRecord, u32), PatientError> {
        let disease = self.kb.disease(disease_id)?;
        let attempts = self.qc_retries.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            let attempt_seed = seed.wrapping_add(u64::from(attempt).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let record = match self.mode {
                GeneratorMode::Template => {
                    template_patient(disease, attempt_seed, patient_id, demographics)
                }
                GeneratorMode::Llm => self.llm_patient(disease, backend, attempt_seed, patient_id)?,
            };
            let judge = self.use_judge.then_some((backend, self.templates));
            let verdict = quality_check(&record, self.kb, judge)?;
            if verdict.passed {
                return Ok((record, attempt + 1));
            }
            tracing::debug!(patient_id, attempt, ?verdict, "record failed QC");
            last = verdict
                .violations
                .iter()
                .map(|v| format!("{}: {}", v.check, v.message))
                .collect::<Vec<_>>()
                .join("; ");
        }
        Err(PatientError::QcExhausted { attempts, last })
    }

    fn stage<T>(
        &self,
        backend: &dyn Backend,
        stage: &'static str,
        template: &str,
        vars: &[(&str, &str)],
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, PatientError> {
        let prompt = self.templates.render(template, vars)?;
        let req = ChatRequest::new(format!("patient.{stage}"))
            .user(prompt)
            .temperature(GEN_TEMPERATURE);
        let mut message = String::new();
        for _ in 0..=self.parse_retries {
            let out = backend.chat(&req)?;
            match parse(fenced_block(&out)) {
                Ok(v) => return Ok(v),
                Err(e) => message = e,
            }
        }
        Err(PatientError::Parse { stage, message })
    }

    fn llm_patient(
        &self,
        disease: &DiseaseKnowledge,
        backend: &dyn Backend,
        seed: u64,
        patient_id: &str,
    ) -> Result<PatientRecord, PatientError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let severities = disease.severities();
        let severity = severities[rng.gen_range(0..severities.len())];
        let risk = if disease.risk_factors.is_empty() {
            "No specific predispositions are known for this disease.".to_string()
        } else {
            disease
                .risk_factors
                .iter()
                .map(|r| format!("- {r}"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let seed_text = seed.to_string();

        let profile = self.stage(
            backend,
            "basic_info",
            "patient_basic_info",
            &[
                ("disease_name", &disease.name),
                ("risk_factors", &risk),
                ("seed", &seed_text),
            ],
            |text| {
                let kv = key_values(text);
                let get = |key: &str| {
                    kv.iter()
                        .find(|(k, _)| k == key)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| format!("missing `{key}`"))
                };
                let name = get("name")?;
                let gender =
                    Gender::parse(&get("gender")?).ok_or_else(|| "unknown gender".to_string())?;
                let age_text = get("age")?;
                let digits: String = age_text.chars().take_while(char::is_ascii_digit).collect();
                let age = digits.parse().map_err(|_| format!("bad age `{age_text}`"))?;
                Ok(Profile { name, gender, age })
            },
        )?;
        let profile_text = format!(
            "{}, {}, {} years old",
            profile.name,
            profile.gender.as_str(),
            profile.age
        );

        let history = self.stage(
            backend,
            "history",
            "patient_history",
            &[
                ("disease_name", &disease.name),
                ("profile", &profile_text),
                ("risk_factors", &risk),
            ],
            |text| {
                key_values(text)
                    .into_iter()
                    .find(|(k, _)| k == "history")
                    .map(|(_, v)| split_list(&v))
                    .ok_or_else(|| "missing `history`".to_string())
            },
        )?;
        let history_text = if history.is_empty() {
            "none".to_string()
        } else {
            history.join("; ")
        };

        let vocab = disease.symptoms.join("; ");
        let symptoms = self.stage(
            backend,
            "symptoms",
            "patient_symptoms",
            &[
                ("disease_name", &disease.name),
                ("symptom_vocabulary", &vocab),
                ("profile", &profile_text),
                ("history", &history_text),
            ],
            |text| {
                let list = key_values(text)
                    .into_iter()
                    .find(|(k, _)| k == "symptoms")
                    .map(|(_, v)| split_list(&v))
                    .ok_or_else(|| "missing `symptoms`".to_string())?;
                if list.is_empty() {
                    return Err("empty symptom list".into());
                }
                Ok(list)
            },
        )?;

        let findings = disease
            .examinations
            .iter()
            .map(|(k, v)| format!("- {k}: {v}"))
            .collect::<Vec<_>>()
            .join("\n");
        let symptoms_text = symptoms.join("; ");
        let reports = self.stage(
            backend,
            "exams",
            "patient_exams",
            &[
                ("disease_name", &disease.name),
                ("examination_findings", &findings),
                ("profile", &profile_text),
                ("symptoms", &symptoms_text),
            ],
            |text| {
                let map: BTreeMap<String, String> = text
                    .lines()
                    .filter_map(|line| {
                        let (k, v) = line.trim().trim_start_matches('-').split_once(':')?;
                        let (k, v) = (k.trim(), v.trim());
                        (!k.is_empty() && !v.is_empty()).then(|| (k.to_string(), v.to_string()))
                    })
                    .collect();
                if map.is_empty() {
                    return Err("no examination reports".into());
                }
                Ok(map)
            },
        )?;

        Ok(PatientRecord {
            patient_id: patient_id.to_string(),
            profile,
            medical_history: history,
            symptoms,
            examination_reports: reports,
            truth: PatientTruth {
                disease_id: disease.disease_id.clone(),
                severity,
            },
            created_by: CreatedBy::Llm,
        })
    }

    /// Generate `spec.size` patients. Diseases are drawn from the weights
    /// with the cohort seed; patients are generated concurrently and
    /// returned in index order.
    pub fn sample_cohort(
        &self,
        spec: &CohortSpec,
        backend: &dyn Backend,
    ) -> Result<Vec<PatientRecord>, PatientError> {
        self.sample_cohort_with_stats(spec, backend).map(|(r, _)| r)
    }

    pub fn sample_cohort_with_stats(
        &self,
        spec: &CohortSpec,
        backend: &dyn Backend,
    ) -> Result<(Vec<PatientRecord>, QcStats), PatientError> {
        let plan = self.plan_cohort(spec)?;
        let results: Vec<Result<(PatientRecord, u32), PatientError>> = plan
            .par_iter()
            .enumerate()
            .map(|(index, (disease_id, seed))| {
                let pid = format!("{}-s{}-{:05}", spec.department_id, spec.seed, index);
                self.generate_counted(disease_id, backend, *seed, &pid, &spec.demographics)
                    .map_err(|e| PatientError::AtIndex {
                        index,
                        source: Box::new(e),
                    })
            })
            .collect();
        let mut stats = QcStats::default();
        let mut records = Vec::with_capacity(results.len());
        for r in results {
            let (record, attempts) = r?;
            stats.patients += 1;
            stats.attempts += u64::from(attempts);
            if attempts == 1 {
                stats.first_pass += 1;
            }
            records.push(record);
        }
        Ok((records, stats))
    }

    /// The (disease, patient seed) assignment of every cohort index.
    pub fn plan_cohort(&self, spec: &CohortSpec) -> Result<Vec<(String, u64)>, PatientError> {
        let diseases = self.kb.diseases_for_department(&spec.department_id)?;
        let weights: Vec<(String, f64)> = if spec.disease_weights.is_empty() {
            diseases.iter().map(|d| (d.disease_id.clone(), 1.0)).collect()
        } else {
            for id in spec.disease_weights.keys() {
                if !diseases.iter().any(|d| &d.disease_id == id) {
                    return Err(PatientError::InvalidSpec(format!(
                        "disease `{id}` is not in department `{}`",
                        spec.department_id
                    )));
                }
            }
            spec.disease_weights
                .iter()
                .map(|(k, v)| (k.clone(), *v))
                .collect()
        };
        if spec.demographics.min_age > spec.demographics.max_age
            || spec.demographics.max_age > 120
            || !(0.0..=1.0).contains(&spec.demographics.female_fraction)
        {
            return Err(PatientError::InvalidSpec("bad demographic constraints".into()));
        }
        if spec.size == 0 {
            return Ok(Vec::new());
        }
        if weights.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite())
            || weights.iter().map(|(_, w)| w).sum::<f64>() <= 0.0
        {
            return Err(PatientError::InvalidSpec(
                "weights must be non-negative with a positive sum".into(),
            ));
        }
        let dist = WeightedIndex::new(weights.iter().map(|(_, w)| *w))
            .map_err(|e| PatientError::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        Ok((0..spec.size)
            .map(|_| {
                let disease = weights[dist.sample(&mut rng)].0.clone();
                (disease, rng.gen::<u64>())
            })
            .collect())
    }
}

/// Knowledge-only generator.
///
/// Draws from `ChaCha8Rng::seed_from_u64(seed)` in this order: gender
/// (`gen_bool(female_fraction)`), age (`gen_range(min..=max)`), first-name
/// index, last-name index, history count (`0..=2`) and an index sample of
/// that size over the bundled history list, symptom count `k`
/// (`gen_range(2..=min(n, 5))`, or all `n` when `n <= 2`) and an index
/// sample of `k` over the disease's symptom list, then the severity index.
/// Sampled indices are sorted so list order follows the source lists. Every
/// examination modality of the disease is reported with its expected
/// findings.
pub fn template_patient(
    disease: &DiseaseKnowledge,
    seed: u64,
    patient_id: &str,
    demographics: &Demographics,
) -> PatientRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gender = if rng.gen_bool(demographics.female_fraction) {
        Gender::Female
    } else {
        Gender::Male
    };
    let age = rng.gen_range(demographics.min_age..=demographics.max_age);
    let first_names = match gender {
        Gender::Female => FIRST_NAMES_FEMALE,
        _ => FIRST_NAMES_MALE,
    };
    let first = first_names[rng.gen_range(0..first_names.len())];
    let last = LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())];

    let history_count = rng.gen_range(0..=2usize);
    let mut hist_idx = index::sample(&mut rng, COMMON_HISTORY.len(), history_count).into_vec();
    hist_idx.sort_unstable();
    let medical_history = hist_idx.iter().map(|&i| COMMON_HISTORY[i].to_string()).collect();

    let n = disease.symptoms.len();
    let k = if n <= 2 { n } else { rng.gen_range(2..=n.min(5)) };
    let mut sym_idx = index::sample(&mut rng, n, k).into_vec();
    sym_idx.sort_unstable();
    let symptoms = sym_idx.iter().map(|&i| disease.symptoms[i].clone()).collect();

    let severities = disease.severities();
    let severity = severities[rng.gen_range(0..severities.len())];

    PatientRecord {
        patient_id: patient_id.to_string(),
        profile: Profile {
            name: format!("{first} {last}"),
            gender,
            age,
        },
        medical_history,
        symptoms,
        examination_reports: disease.examinations.clone(),
        truth: PatientTruth {
            disease_id: disease.disease_id.clone(),
            severity,
        },
        created_by: CreatedBy::Template,
    }
}

pub const COHORT_FILE: &str = "cohort.jsonl";
pub const TRUTH_FILE: &str = "cohort.truth.jsonl";

fn cohort_err(path: &Path, message: impl ToString) -> PatientError {
    PatientError::CohortFile {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), PatientError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| cohort_err(path, e))?);
    for item in items {
        let line = serde_json::to_string(&item).expect("serializable");
        writeln!(w, "{line}").map_err(|e| cohort_err(path, e))?;
    }
    w.flush().map_err(|e| cohort_err(path, e))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PatientError> {
    let file = File::open(path).map_err(|e| cohort_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| cohort_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| cohort_err(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// Write `cohort.jsonl` (doctor-visible views) and `cohort.truth.jsonl`.
pub fn write_cohort(dir: impl AsRef<Path>, records: &[PatientRecord]) -> Result<(), PatientError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| cohort_err(dir, e))?;
    write_lines(&dir.join(COHORT_FILE), records.iter().map(PatientRecord::view))?;
    write_lines(&dir.join(TRUTH_FILE), records.iter().map(PatientRecord::truth_record))
}

/// Load only the doctor-visible part of a cohort.
pub fn read_visible_cohort(dir: impl AsRef<Path>) -> Result<Vec<PatientView>, PatientError> {
    read_lines(&dir.as_ref().join(COHORT_FILE))
}

pub fn read_cohort(dir: impl AsRef<Path>) -> Result<Vec<PatientRecord>, PatientError> {
    let dir = dir.as_ref();
    let views: Vec<PatientView> = read_lines(&dir.join(COHORT_FILE))?;
    let truth: Vec<TruthRecord> = read_lines(&dir.join(TRUTH_FILE))?;
    let mut by_id: BTreeMap<String, TruthRecord> =
        truth.into_iter().map(|t| (t.patient_id.clone(), t)).collect();
    views
        .into_iter()
        .map(|v| {
            let t = by_id
                .remove(&v.patient_id)
                .ok_or_else(|| cohort_err(dir, format!("no truth for {}", v.patient_id)))?;
            Ok(PatientRecord {
                patient_id: v.patient_id,
                profile: v.profile,
                medical_history: v.medical_history,
                symptoms: v.symptoms,
                examination_reports: v.examination_reports,
                truth: PatientTruth {
                    disease_id: t.disease_id,
                    severity: t.severity,
                },
                created_by: t.created_by,
            })
        })
        .collect()
}

pub fn cohort_hashes(records: &[PatientRecord]) -> BTreeSet<String> {
    records.iter().map(PatientRecord::content_hash).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::load_knowledge_base;
    use crate::llm::{MockBackend, MockRule, MockScript};

    fn kb() -> KnowledgeBase {
        load_knowledge_base(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/knowledge")).unwrap()
    }

    fn herpes_script() -> MockScript {
        MockScript::default()
            .rule(MockRule::new(
                "patient.basic_info",
                "```\nname: Kenneth Morgan\ngender: male\nage: 55\n```",
            ))
            .rule(MockRule::new("patient.history", "```\nhistory: chickenpox; hypertension\n```"))
            .rule(MockRule::new(
                "patient.symptoms",
                "```\nsymptoms: red painful skin; blisters on the right side of the chest; burning pain\n```",
            ))
            .rule(MockRule::new(
                "patient.exams",
                "```\nSkin Examination: Clustered vesicles along one dermatome.\n```",
            ))
    }

    #[test]
    fn llm_stages_build_the_walkthrough_patient() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let factory = PatientFactory::new(&kb, &t, GeneratorMode::Llm);
        let mock = MockBackend::new(herpes_script());
        let p = factory
            .generate_patient("herpes_zoster", &mock, 1, "p1", &Demographics::default())
            .unwrap();
        assert_eq!(p.profile.age, 55);
        assert_eq!(p.profile.gender, Gender::Male);
        assert!(p.medical_history.contains(&"chickenpox".to_string()));
        assert_eq!(p.symptoms.len(), 3);
        assert_eq!(p.created_by, CreatedBy::Llm);
        assert_eq!(p.truth.disease_id, "herpes_zoster");
        assert_eq!(mock.chat_calls(), 4);
    }

    #[test]
    fn unparseable_stage_is_an_error() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let mut factory = PatientFactory::new(&kb, &t, GeneratorMode::Llm);
        factory.parse_retries = 1;
        let mock = MockBackend::new(MockScript::default().rule(MockRule::new("*", "no structure here")));
        let err = factory
            .generate_patient("herpes_zoster", &mock, 1, "p1", &Demographics::default())
            .unwrap_err();
        assert!(matches!(err, PatientError::Parse { stage: "basic_info", .. }));
        assert_eq!(mock.chat_calls(), 2);
    }

    #[test]
    fn qc_failures_exhaust_the_budget() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let factory = PatientFactory::new(&kb, &t, GeneratorMode::Llm);
        let script = herpes_script();
        let mut rules = script.rules;
        rules[2] = MockRule::new("patient.symptoms", "symptoms: toothache");
        let mock = MockBackend::new(MockScript { rules, ..MockScript::default() });
        let err = factory
            .generate_patient("herpes_zoster", &mock, 1, "p1", &Demographics::default())
            .unwrap_err();
        match err {
            PatientError::QcExhausted { attempts, last } => {
                assert_eq!(attempts, 3);
                assert!(last.contains(CHECK_SYMPTOM_OVERLAP));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_risk_factors_still_generate() {
        let mut d = kb().disease("herpes_zoster").unwrap().clone();
        d.risk_factors.clear();
        let mut depts = crate::knowledge::default_taxonomy();
        depts.retain(|x| x.id == "dermatology");
        let kb = KnowledgeBase::new(depts, vec![d], vec![]).unwrap();
        let t = TemplateSet::builtin();
        let factory = PatientFactory::new(&kb, &t, GeneratorMode::Llm);
        let script = herpes_script().rule(MockRule::new("never", ""));
        let mut rules = script.rules;
        rules[0] = MockRule::new("patient.basic_info", "name: A B\ngender: female\nage: 40")
            .containing("No specific predispositions");
        let mock = MockBackend::new(MockScript { rules, ..MockScript::default() });
        let p = factory
            .generate_patient("herpes_zoster", &mock, 3, "p", &Demographics::default())
            .unwrap();
        assert!(quality_check(&p, &kb, None).unwrap().passed);
    }

    fn covid_record(symptoms: &[&str], age: u32) -> PatientRecord {
        PatientRecord {
            patient_id: "c".into(),
            profile: Profile {
                name: "Test Person".into(),
                gender: Gender::Female,
                age,
            },
            medical_history: vec![],
            symptoms: symptoms.iter().map(|s| s.to_string()).collect(),
            examination_reports: [("Blood Test".to_string(), "lymphopenia".to_string())].into(),
            truth: PatientTruth {
                disease_id: "covid19".into(),
                severity: Severity::Mild,
            },
            created_by: CreatedBy::Template,
        }
    }

    #[test]
    fn quality_rules() {
        let kb = kb();
        assert!(quality_check(&covid_record(&["sore throat", "fever"], 30), &kb, None)
            .unwrap()
            .passed);
        let v = quality_check(&covid_record(&["itchy elbow"], 30), &kb, None).unwrap();
        assert!(!v.passed);
        assert_eq!(v.violations[0].check, CHECK_SYMPTOM_OVERLAP);
        let v = quality_check(&covid_record(&["fever"], 140), &kb, None).unwrap();
        assert!(!v.passed);
        assert_eq!(v.violations[0].check, CHECK_DEMOGRAPHICS);
        let mut r = covid_record(&["fever"], 30);
        r.examination_reports.insert("Skin Biopsy".into(), "x".into());
        let v = quality_check(&r, &kb, None).unwrap();
        assert_eq!(v.violations[0].check, CHECK_EXAM_MODALITIES);
    }

    #[test]
    fn judge_verdicts() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let pass = MockBackend::new(MockScript::default().rule(MockRule::new("qc.judge", "Verdict: pass")));
        let r = covid_record(&["fever"], 30);
        assert!(quality_check(&r, &kb, Some((&pass, &t))).unwrap().passed);
        let fail = MockBackend::new(
            MockScript::default().rule(MockRule::new("qc.judge", "Verdict: fail\nReason: too young")),
        );
        let v = quality_check(&r, &kb, Some((&fail, &t))).unwrap();
        assert_eq!(v.violations[0].message, "too young");
        let down = MockBackend::new(MockScript::default());
        assert!(quality_check(&r, &kb, Some((&down, &t))).is_err());
    }

    #[test]
    fn template_sampler_matches_documented_draws() {
        let kb = kb();
        let d = kb.disease("covid19").unwrap();
        let demo = Demographics::default();
        let p = template_patient(d, 7, "p7", &demo);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let female = rng.gen_bool(0.5);
        let age: u32 = rng.gen_range(18..=85);
        let names = if female { FIRST_NAMES_FEMALE } else { FIRST_NAMES_MALE };
        let first = names[rng.gen_range(0..names.len())];
        let last = LAST_NAMES[rng.gen_range(0..LAST_NAMES.len())];
        let hc = rng.gen_range(0..=2usize);
        let _ = index::sample(&mut rng, COMMON_HISTORY.len(), hc);
        let k = rng.gen_range(2..=5usize);
        let mut idx = index::sample(&mut rng, d.symptoms.len(), k).into_vec();
        idx.sort_unstable();

        assert_eq!(p.profile.age, age);
        assert_eq!(p.profile.name, format!("{first} {last}"));
        let expect: Vec<_> = idx.iter().map(|&i| d.symptoms[i].clone()).collect();
        assert_eq!(p.symptoms, expect);
        assert!(p.symptoms.len() >= 2);
        assert_eq!(p.created_by, CreatedBy::Template);
        assert_eq!(template_patient(d, 7, "p7", &demo), p);
        assert!(quality_check(&p, &kb, None).unwrap().passed);
    }

    #[test]
    fn cohort_sizes_and_determinism() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let f = PatientFactory::new(&kb, &t, GeneratorMode::Template);
        let mock = MockBackend::new(MockScript::default());
        let mut spec = CohortSpec {
            department_id: "respiratory".into(),
            disease_weights: [("covid19".to_string(), 1.0)].into(),
            size: 5,
            demographics: Demographics::default(),
            seed: 11,
        };
        let c = f.sample_cohort(&spec, &mock).unwrap();
        assert!(c.iter().all(|p| p.truth.disease_id == "covid19"));
        assert_eq!(c, f.sample_cohort(&spec, &mock).unwrap());
        spec.size = 0;
        assert!(f.sample_cohort(&spec, &mock).unwrap().is_empty());
        spec.disease_weights = [("herpes_zoster".to_string(), 1.0)].into();
        spec.size = 1;
        assert!(matches!(f.sample_cohort(&spec, &mock), Err(PatientError::InvalidSpec(_))));
    }

    #[test]
    fn cohort_error_names_failing_index() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let f = PatientFactory::new(&kb, &t, GeneratorMode::Llm);
        let mock = MockBackend::new(MockScript::default());
        let spec = CohortSpec {
            department_id: "dermatology".into(),
            disease_weights: BTreeMap::new(),
            size: 3,
            demographics: Demographics::default(),
            seed: 1,
        };
        let err = f.sample_cohort(&spec, &mock).unwrap_err();
        assert!(matches!(err, PatientError::AtIndex { index: 0, .. }));
    }

    #[test]
    fn binomial_split_within_three_sigma() {
        // two equal weights, n = 1000: sd = sqrt(1000 * 0.25) ~ 15.81
        let kb = kb();
        let t = TemplateSet::builtin();
        let f = PatientFactory::new(&kb, &t, GeneratorMode::Template);
        let spec = CohortSpec {
            department_id: "respiratory".into(),
            disease_weights: [("covid19".to_string(), 1.0), ("influenza_b".to_string(), 1.0)].into(),
            size: 1000,
            demographics: Demographics::default(),
            seed: 2024,
        };
        let plan = f.plan_cohort(&spec).unwrap();
        let a = plan.iter().filter(|(d, _)| d == "covid19").count() as f64;
        let bound = 3.0 * (1000.0f64 * 0.25).sqrt();
        assert!((a - 500.0).abs() <= bound, "count {a}");
        assert!(((1000.0 - a) - 500.0).abs() <= bound);
    }

    #[test]
    fn cohort_files_keep_truth_separate() {
        let kb = kb();
        let t = TemplateSet::builtin();
        let f = PatientFactory::new(&kb, &t, GeneratorMode::Template);
        let mock = MockBackend::new(MockScript::default());
        let spec = CohortSpec {
            department_id: "dermatology".into(),
            disease_weights: BTreeMap::new(),
            size: 20,
            demographics: Demographics::default(),
            seed: 5,
        };
        let c = f.sample_cohort(&spec, &mock).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_cohort(dir.path(), &c).unwrap();
        assert_eq!(read_cohort(dir.path()).unwrap(), c);
        let visible = fs::read_to_string(dir.path().join(COHORT_FILE)).unwrap();
        for d in kb.diseases() {
            assert!(!visible.contains(&d.name), "{} leaked", d.name);
            assert!(!visible.contains(&format!("\"{}\"", d.disease_id)));
        }
        assert_eq!(read_visible_cohort(dir.path()).unwrap().len(), 20);
    }
}
