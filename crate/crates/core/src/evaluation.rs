//! Accuracy curves, held-out evaluation of the three tasks, a MedQA-style
//! multiple-choice adapter and curve export.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::audit::OutcomeRow;
use crate::doctor::{choice_label, grade, DoctorAgent, DoctorError, TaskInstance};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::llm::Backend;
use crate::memory::Task;
use crate::patient::PatientRecord;
use crate::simulacrum::TreatmentContext;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("accuracy of an empty series is undefined")]
    EmptySeries,
    #[error("segment window must be at least 1")]
    InvalidWindow,
    #[error("{count} test patient(s) also appear in the training cohort")]
    Overlap { count: usize },
    #[error(transparent)]
    Doctor(#[from] DoctorError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// Correctness flags of consecutive questions; question `n` is `outcomes[n - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSeries {
    pub task: String,
    pub department: String,
    pub outcomes: Vec<bool>,
}

impl OutcomeSeries {
    pub fn new(task: impl Into<String>, department: impl Into<String>, outcomes: Vec<bool>) -> Self {
        Self {
            task: task.into(),
            department: department.into(),
            outcomes,
        }
    }

    pub fn correct(&self) -> usize {
        self.outcomes.iter().filter(|&&c| c).count()
    }
}

/// `(n, correct_in_first_n / n)` for every prefix.
pub fn cumulative_accuracy(series: &OutcomeSeries) -> Result<Vec<(usize, f64)>, EvalError> {
    if series.outcomes.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let mut correct = 0usize;
    Ok(series
        .outcomes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            correct += usize::from(c);
            (i + 1, correct as f64 / (i + 1) as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// 1-based block number.
    pub index: usize,
    pub size: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Trailing block shorter than the window.
    pub partial: bool,
}

/// Accuracy over consecutive non-overlapping blocks of `window` outcomes.
pub fn segment_accuracy(series: &OutcomeSeries, window: usize) -> Result<Vec<Segment>, EvalError> {
    if window == 0 {
        return Err(EvalError::InvalidWindow);
    }
    Ok(series
        .outcomes
        .chunks(window)
        .enumerate()
        .map(|(i, block)| {
            let correct = block.iter().filter(|&&c| c).count();
            Segment {
                index: i + 1,
                size: block.len(),
                correct,
                accuracy: correct as f64 / block.len() as f64,
                partial: block.len() < window,
            }
        })
        .collect())
}

pub const DEFAULT_WINDOW: usize = 1000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn add(&mut self, correct: bool) {
        self.total += 1;
        self.correct += usize::from(correct);
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Percentage with two decimals, as in the report tables.
    pub fn percent(&self) -> String {
        format!("{:.2}", self.value() * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub department_id: String,
    pub patients: usize,
    pub per_task: BTreeMap<Task, Accuracy>,
    pub per_disease: BTreeMap<String, BTreeMap<Task, Accuracy>>,
    /// Per task, correctness in cohort order.
    pub series: BTreeMap<Task, Vec<bool>>,
}

impl TaskReport {
    pub fn accuracy(&self, task: Task) -> f64 {
        self.per_task.get(&task).map_or(0.0, Accuracy::value)
    }

    pub fn to_markdown(&self) -> String {
        let cell = |m: &BTreeMap<Task, Accuracy>, t: Task| {
            m.get(&t).map_or_else(|| "-".to_string(), Accuracy::percent)
        };
        let mut out = String::from(
            "| Department | Accuracy in Examination | Accuracy in Diagnosis | Accuracy in Treatment |\n\
             |---|---|---|---|\n",
        );
        out.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            self.department_id,
            cell(&self.per_task, Task::Examination),
            cell(&self.per_task, Task::Diagnosis),
            cell(&self.per_task, Task::Treatment)
        ));
        out.push_str(
            "\n| Disease | Patients | Accuracy in Examination | Accuracy in Diagnosis | Accuracy in Treatment |\n\
             |---|---|---|---|---|\n",
        );
        for (disease, m) in &self.per_disease {
            let n = m.values().map(|a| a.total).max().unwrap_or(0);
            out.push_str(&format!(
                "| {disease} | {n} | {} | {} | {} |\n",
                cell(m, Task::Examination),
                cell(m, Task::Diagnosis),
                cell(m, Task::Treatment)
            ));
        }
        out
    }
}

/// Fail if any test patient's visible content also occurs in training.
pub fn check_disjoint(train: &BTreeSet<String>, test: &[PatientRecord]) -> Result<(), EvalError> {
    let count = test.iter().filter(|p| train.contains(&p.content_hash())).count();
    if count > 0 {
        return Err(EvalError::Overlap { count });
    }
    Ok(())
}

/// The three questions asked about one held-out patient: examination from
/// the symptoms alone, diagnosis with the full examination reports, and
/// treatment given a diagnosis and the severity.
pub fn task_instances(
    kb: &KnowledgeBase,
    department_id: &str,
    patient: &PatientRecord,
    diagnosis_for_treatment: &str,
) -> Result<[TaskInstance; 3], EvalError> {
    let disease = kb.disease(&patient.truth.disease_id)?;
    let view = patient.view();
    let exam = TaskInstance::from_patient(
        Task::Examination,
        &view,
        &[],
        kb.candidate_examinations(department_id)?.to_vec(),
        disease.examinations.keys().cloned().collect(),
    );
    let diag = TaskInstance::from_patient(
        Task::Diagnosis,
        &view,
        &[],
        kb.candidate_diseases(department_id)?.to_vec(),
        vec![disease.name.clone()],
    );
    let plan = disease.treatment_label(patient.truth.severity).ok_or_else(|| {
        KnowledgeError::Invalid {
            id: disease.disease_id.clone(),
            message: format!("no {} plan", patient.truth.severity),
        }
    })?;
    let treat = TaskInstance::from_patient(
        Task::Treatment,
        &view,
        &[
            ("Diagnosis", diagnosis_for_treatment),
            ("Severity", patient.truth.severity.as_str()),
        ],
        kb.candidate_treatments(department_id)?,
        vec![plan],
    );
    Ok([exam, diag, treat])
}

/// Answer every held-out patient with frozen memory. Patients are handled
/// concurrently; results are reported in cohort order.
pub fn evaluate_tasks(
    doctor: &DoctorAgent,
    kb: &KnowledgeBase,
    test_cohort: &[PatientRecord],
    context: TreatmentContext,
    backend: &dyn Backend,
) -> Result<TaskReport, EvalError> {
    let results: Vec<Result<(String, [bool; 3]), EvalError>> = test_cohort
        .par_iter()
        .map(|patient| {
            let disease = kb.disease(&patient.truth.disease_id)?;
            let [exam, diag, _] = task_instances(kb, &doctor.department_id, patient, &disease.name)?;
            let e = grade(&doctor.answer(&exam, backend)?, &exam);
            let d_decision = doctor.answer(&diag, backend)?;
            let d = grade(&d_decision, &diag);
            let basis = match context {
                TreatmentContext::TrueDiagnosis => disease.name.clone(),
                TreatmentContext::OwnDiagnosis => d_decision.chosen.join(", "),
            };
            let [_, _, treat] = task_instances(kb, &doctor.department_id, patient, &basis)?;
            let t = grade(&doctor.answer(&treat, backend)?, &treat);
            Ok((patient.truth.disease_id.clone(), [e, d, t]))
        })
        .collect();

    let mut report = TaskReport {
        department_id: doctor.department_id.clone(),
        patients: test_cohort.len(),
        per_task: BTreeMap::new(),
        per_disease: BTreeMap::new(),
        series: BTreeMap::new(),
    };
    for r in results {
        let (disease, flags) = r?;
        for (task, ok) in Task::ALL.into_iter().zip(flags) {
            report.per_task.entry(task).or_default().add(ok);
            report
                .per_disease
                .entry(disease.clone())
                .or_default()
                .entry(task)
                .or_default()
                .add(ok);
            report.series.entry(task).or_default().push(ok);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqItem {
    pub question: String,
    /// Option text keyed by label, in label order.
    pub options: BTreeMap<String, String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub department: Option<String>,
}

impl McqItem {
    pub fn to_instance(&self, task: Task, id: &str) -> TaskInstance {
        TaskInstance {
            task,
            patient_id: id.to_string(),
            question: self.question.clone(),
            candidates: self.options.values().cloned().collect(),
            truth: vec![self.options[&self.answer].clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

fn parse_mcq_value(v: &Value) -> Result<McqItem, String> {
    let question = v["question"]
        .as_str()
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing question")?
        .to_string();
    let options: BTreeMap<String, String> = match &v["options"] {
        Value::Object(map) => map
            .iter()
            .map(|(k, v)| {
                v.as_str()
                    .map(|s| (k.trim().to_string(), s.to_string()))
                    .ok_or_else(|| format!("option {k} is not text"))
            })
            .collect::<Result<_, _>>()?,
        Value::Array(list) => list
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(|s| (choice_label(i), s.to_string()))
                    .ok_or_else(|| format!("option {i} is not text"))
            })
            .collect::<Result<_, _>>()?,
        _ => return Err("missing options".into()),
    };
    if options.len() < 2 {
        return Err("fewer than two options".into());
    }
    let label = if let Some(idx) = v["answer_idx"].as_str() {
        idx.trim().to_string()
    } else {
        let a = v["answer"].as_str().ok_or("missing answer")?.trim();
        if options.contains_key(a) {
            a.to_string()
        } else {
            options
                .iter()
                .find(|(_, text)| text.trim() == a)
                .map(|(k, _)| k.clone())
                .ok_or("answer matches no option")?
        }
    };
    if !options.contains_key(&label) {
        return Err(format!("answer label {label} is not an option"));
    }
    let department = v["meta"]["department"]
        .as_str()
        .or_else(|| v["department"].as_str())
        .map(str::to_string);
    Ok(McqItem {
        question,
        options,
        answer: label,
        department,
    })
}

/// Parse one item per line. Accepted fields: `question`; `options` as a
/// label-to-text object or a list (labelled A, B, ...); `answer_idx` (a
/// label) or `answer` (a label or the option text); `meta.department` or
/// `department`. Lines that do not fit are skipped and reported.
pub fn parse_mcq_jsonl(text: &str) -> (Vec<McqItem>, Vec<SkippedLine>) {
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(line)
            .map_err(|e| e.to_string())
            .and_then(|v| parse_mcq_value(&v));
        match parsed {
            Ok(item) => items.push(item),
            Err(reason) => skipped.push(SkippedLine { line: i + 1, reason }),
        }
    }
    (items, skipped)
}

pub fn load_mcq(path: impl AsRef<Path>) -> Result<(Vec<McqItem>, Vec<SkippedLine>), EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(parse_mcq_jsonl(&text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqReport {
    pub items: usize,
    pub skipped: usize,
    pub hybrid: bool,
    pub overall: Accuracy,
    pub per_department: BTreeMap<String, Accuracy>,
    pub series: Vec<bool>,
}

impl McqReport {
    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "| Benchmark | Items | Skipped | Accuracy |\n|---|---|---|---|\n| {} | {} | {} | {} |\n",
            if self.hybrid { "MCQ (hybrid)" } else { "MCQ" },
            self.items,
            self.skipped,
            self.overall.percent()
        );
        if !self.per_department.is_empty() {
            out.push_str("\n| Department | Items | Accuracy |\n|---|---|---|\n");
            for (d, a) in &self.per_department {
                out.push_str(&format!("| {d} | {} | {} |\n", a.total, a.percent()));
            }
        }
        out
    }
}

/// Add labelled benchmark items to the doctor's case base as external cases.
pub fn ingest_mcq(
    doctor: &mut DoctorAgent,
    items: &[McqItem],
    task: Task,
    backend: &dyn Backend,
) -> Result<usize, EvalError> {
    let instances: Vec<TaskInstance> = items
        .iter()
        .enumerate()
        .map(|(i, it)| it.to_instance(task, &format!("train-{i}")))
        .collect();
    Ok(doctor.ingest_labeled(&instances, backend)?)
}

/// Answer each item through the normal prompt path; an item is correct when
/// the chosen option carries the answer label.
pub fn evaluate_mcq(
    doctor: &DoctorAgent,
    items: &[McqItem],
    skipped: usize,
    task: Task,
    backend: &dyn Backend,
) -> Result<McqReport, EvalError> {
    let results: Vec<Result<bool, EvalError>> = items
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            let inst = item.to_instance(task, &format!("mcq-{i}"));
            let decision = doctor.answer(&inst, backend)?;
            let labels: Vec<&String> = item.options.keys().collect();
            let chosen: Vec<&String> = decision
                .chosen
                .iter()
                .filter_map(|c| inst.candidates.iter().position(|x| x == c).map(|p| labels[p]))
                .collect();
            Ok(!decision.novel && chosen.len() == 1 && *chosen[0] == item.answer)
        })
        .collect();
    let mut report = McqReport {
        items: items.len(),
        skipped,
        hybrid: doctor.config.hybrid,
        overall: Accuracy::default(),
        per_department: BTreeMap::new(),
        series: Vec::with_capacity(items.len()),
    };
    for (item, r) in items.iter().zip(results) {
        let ok = r?;
        report.overall.add(ok);
        if let Some(d) = &item.department {
            report.per_department.entry(d.clone()).or_default().add(ok);
        }
        report.series.push(ok);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// `cumulative` or `segment`.
    pub curve: String,
    /// Patient count for cumulative rows, block number for segment rows.
    pub x: usize,
    pub accuracy: f64,
    pub task: String,
    pub department: String,
    /// Outcomes behind the value.
    pub size: usize,
    pub partial: bool,
}

/// Cumulative and segment rows for one series.
pub fn curve_rows(series: &OutcomeSeries, window: usize) -> Result<Vec<CurveRow>, EvalError> {
    let mut rows: Vec<CurveRow> = cumulative_accuracy(series)?
        .into_iter()
        .map(|(n, accuracy)| CurveRow {
            curve: "cumulative".into(),
            x: n,
            accuracy,
            task: series.task.clone(),
            department: series.department.clone(),
            size: n,
            partial: false,
        })
        .collect();
    rows.extend(segment_accuracy(series, window)?.into_iter().map(|s| CurveRow {
        curve: "segment".into(),
        x: s.index,
        accuracy: s.accuracy,
        task: series.task.clone(),
        department: series.department.clone(),
        size: s.size,
        partial: s.partial,
    }));
    Ok(rows)
}

/// Per-task series of first-visit correctness, one per department plus
/// an `all` series when several departments appear.
pub fn series_from_outcomes(outcomes: &[OutcomeRow]) -> Vec<OutcomeSeries> {
    let departments: BTreeSet<&str> = outcomes.iter().map(|o| o.department_id.as_str()).collect();
    let mut out = Vec::new();
    for task in Task::ALL {
        let collect = |dept: Option<&str>| -> Vec<bool> {
            outcomes
                .iter()
                .filter(|o| dept.map_or(true, |d| o.department_id == d))
                .filter_map(|o| o.first_visit.get(&task).copied())
                .collect()
        };
        if departments.len() > 1 {
            out.push(OutcomeSeries::new(task.as_str(), "all", collect(None)));
        }
        for d in &departments {
            out.push(OutcomeSeries::new(task.as_str(), *d, collect(Some(d))));
        }
    }
    out.retain(|s| !s.outcomes.is_empty());
    out
}

pub fn curves_from_outcomes(outcomes: &[OutcomeRow], window: usize) -> Result<Vec<CurveRow>, EvalError> {
    let mut rows = Vec::new();
    for s in series_from_outcomes(outcomes) {
        rows.extend(curve_rows(&s, window)?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Jsonl,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => ExportFormat::Jsonl,
            _ => ExportFormat::Csv,
        }
    }
}

/// Write curve rows with full-precision accuracies.
pub fn export_curves(
    rows: &[CurveRow],
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let io = |message: String| EvalError::Io {
        path: path.to_path_buf(),
        message,
    };
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| io(e.to_string()))?;
            for r in rows {
                w.serialize(r).map_err(|e| io(e.to_string()))?;
            }
            w.flush().map_err(|e| io(e.to_string()))
        }
        ExportFormat::Jsonl => {
            let mut w = BufWriter::new(File::create(path).map_err(|e| io(e.to_string()))?);
            for r in rows {
                let line = serde_json::to_string(r).expect("serializable");
                writeln!(w, "{line}").map_err(|e| io(e.to_string()))?;
            }
            w.flush().map_err(|e| io(e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[bool]) -> OutcomeSeries {
        OutcomeSeries::new("diagnosis", "respiratory", v.to_vec())
    }

    #[test]
    fn cumulative_examples() {
        let c = cumulative_accuracy(&s(&[true, false, true, true])).unwrap();
        let rounded: Vec<(usize, f64)> =
            c.iter().map(|(n, a)| (*n, (a * 1000.0).round() / 1000.0)).collect();
        assert_eq!(rounded, vec![(1, 1.0), (2, 0.5), (3, 0.667), (4, 0.75)]);
        assert!(cumulative_accuracy(&s(&[true; 100])).unwrap().iter().all(|(_, a)| *a == 1.0));
        let alt: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        assert_eq!(cumulative_accuracy(&s(&alt)).unwrap().last().unwrap().1, 0.5);
        assert!(matches!(cumulative_accuracy(&s(&[])), Err(EvalError::EmptySeries)));
    }

    #[test]
    fn segment_examples() {
        let v: Vec<bool> = (0..2500).map(|i| i % 3 != 0).collect();
        let segs = segment_accuracy(&s(&v), 1000).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs[2].partial && segs[2].size == 500);
        assert!(!segs[0].partial);
        let w1 = segment_accuracy(&s(&[true, false]), 1).unwrap();
        assert_eq!((w1[0].index, w1[0].accuracy, w1[1].accuracy), (1, 1.0, 0.0));
        let block: Vec<bool> = (0..1000).map(|i| i < 920).collect();
        assert_eq!(segment_accuracy(&s(&block), 1000).unwrap()[0].accuracy, 0.92);
        assert!(segment_accuracy(&s(&block), 0).is_err());
    }

    #[test]
    fn mcq_formats() {
        let text = r#"{"question":"Q1","options":{"A":"x","B":"y"},"answer":"y","answer_idx":"B","meta":{"department":"cardiology"}}
{"question":"Q2","options":["p","q","r"],"answer":"C"}
{"question":"Q3","options":{"A":"x"},"answer":"A"}
not json
{"question":"Q4","options":{"A":"x","B":"y"},"answer":"z"}
"#;
        let (items, skipped) = parse_mcq_jsonl(text);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].answer, "B");
        assert_eq!(items[0].department.as_deref(), Some("cardiology"));
        assert_eq!(items[1].answer, "C");
        assert_eq!(items[1].options["C"], "r");
        assert_eq!(skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![3, 4, 5]);
    }

    #[test]
    fn export_rows_and_stability() {
        let series = s(&[true, false, true]);
        let rows = curve_rows(&series, 2).unwrap();
        assert_eq!(rows.iter().filter(|r| r.curve == "cumulative").count(), 3);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        export_curves(&rows, &a, ExportFormat::Csv).unwrap();
        export_curves(&rows, &b, ExportFormat::Csv).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        assert!(text.starts_with("curve,x,accuracy,task,department,size,partial\n"));
        assert!(text.contains("cumulative,3,0.6666666666666666,diagnosis"));
        let j = dir.path().join("c.jsonl");
        export_curves(&rows, &j, ExportFormat::from_path(&j)).unwrap();
        assert_eq!(fs::read_to_string(&j).unwrap().lines().count(), rows.len());
    }

    #[test]
    fn percent_has_two_decimals() {
        let a = Accuracy { correct: 92, total: 100 };
        assert_eq!(a.percent(), "92.00");
    }
}
