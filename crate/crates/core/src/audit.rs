//! The run log: one JSON event per line, replayable into base sizes,
//! learning provenance and per-task outcome series.
//!
//! Timestamps are logical (`seq`, `day`) so that identical runs produce
//! identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doctor::{Decision, LearningEvent, LearningKind};
use crate::memory::Task;
use crate::simulacrum::{Phase, RunMode};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    RunStarted {
        mode: RunMode,
        seed: u64,
        cohort_hash: String,
        patients: usize,
    },
    Transition {
        patient_id: String,
        visit_index: u32,
        from: Option<Phase>,
        to: Phase,
        actor: String,
    },
    Graded {
        doctor_id: String,
        department_id: String,
        task: Task,
        patient_id: String,
        visit_index: u32,
        disease_id: String,
        decision: Decision,
        truth: Vec<String>,
        correct: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        learning: Option<LearningEvent>,
    },
    Outcome {
        patient_index: usize,
        patient_id: String,
        disease_id: String,
        /// Department of the last triage.
        department_id: String,
        phase: Phase,
        visits: u32,
        /// Correctness of each task's first decision for this patient.
        first_visit: BTreeMap<Task, bool>,
    },
    BooksRead {
        doctor_id: String,
        department_id: String,
        documents: usize,
        stored: BTreeMap<Task, usize>,
        skipped: usize,
    },
    RunFinished {
        patients: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub day: u64,
    #[serde(flatten)]
    pub event: LogEvent,
}

pub type SimulationLog = Vec<LogRecord>;

/// Appends records, numbering them.
pub struct LogWriter {
    path: PathBuf,
    writer: BufWriter<File>,
    next_seq: u64,
}

impl LogWriter {
    /// Open `path` for appending, continuing numbering at `next_seq`.
    pub fn append(path: impl AsRef<Path>, next_seq: u64) -> Result<Self, AuditError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| AuditError::Io {
                path: path.clone(),
                source,
            })?;
        Ok(Self {
            path,
            writer: BufWriter::new(file),
            next_seq,
        })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn write(&mut self, day: u64, event: LogEvent) -> Result<(), AuditError> {
        let record = LogRecord {
            seq: self.next_seq,
            day,
            event,
        };
        let line = serde_json::to_string(&record).expect("serializable");
        self.next_seq += 1;
        writeln!(self.writer, "{line}").map_err(|source| AuditError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn flush(&mut self) -> Result<(), AuditError> {
        self.writer.flush().map_err(|source| AuditError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<SimulationLog, AuditError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| AuditError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AuditError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| AuditError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseCounts {
    pub interaction_cases: usize,
    pub book_cases: usize,
    pub validated_principles: usize,
    pub discarded_principles: usize,
}

impl BaseCounts {
    pub fn cases(&self) -> usize {
        self.interaction_cases + self.book_cases
    }

    pub fn principles(&self) -> usize {
        self.validated_principles + self.discarded_principles
    }
}

/// One finished patient as recorded in the log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub patient_index: usize,
    pub patient_id: String,
    pub disease_id: String,
    pub department_id: String,
    pub recovered: bool,
    pub first_visit: BTreeMap<Task, bool>,
}

/// Where a learned entry came from: (doctor, task, entry id).
pub type EntryKey = (String, Task, u64);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Replay {
    /// Per doctor and task.
    pub counts: BTreeMap<(String, Task), BaseCounts>,
    pub outcomes: Vec<OutcomeRow>,
    /// Phase sequence per patient, in log order.
    pub transitions: BTreeMap<String, Vec<Phase>>,
    /// Cases added after a correct decision.
    pub cases_from_correct: BTreeSet<EntryKey>,
    /// Validated principles reflected from a wrong decision.
    pub principles_from_wrong: BTreeSet<EntryKey>,
    pub graded: usize,
    pub learning_events: usize,
}

impl Replay {
    pub fn from_log(log: &[LogRecord]) -> Self {
        let mut r = Replay::default();
        for rec in log {
            match &rec.event {
                LogEvent::Transition { patient_id, to, .. } => {
                    r.transitions.entry(patient_id.clone()).or_default().push(*to);
                }
                LogEvent::Graded {
                    doctor_id,
                    task,
                    correct,
                    learning,
                    ..
                } => {
                    r.graded += 1;
                    let Some(ev) = learning else { continue };
                    r.learning_events += 1;
                    let c = r.counts.entry((doctor_id.clone(), *task)).or_default();
                    match ev.kind {
                        LearningKind::CaseAdded => {
                            c.interaction_cases += 1;
                            if *correct {
                                if let Some(id) = ev.case_id {
                                    r.cases_from_correct.insert((doctor_id.clone(), *task, id));
                                }
                            }
                        }
                        LearningKind::PrincipleValidated => {
                            c.validated_principles += 1;
                            if !*correct {
                                if let Some(id) = ev.principle_id {
                                    r.principles_from_wrong.insert((doctor_id.clone(), *task, id));
                                }
                            }
                        }
                        LearningKind::PrincipleDiscarded => c.discarded_principles += 1,
                        LearningKind::Noop => {}
                    }
                }
                LogEvent::BooksRead {
                    doctor_id, stored, ..
                } => {
                    for (task, n) in stored {
                        r.counts.entry((doctor_id.clone(), *task)).or_default().book_cases += n;
                    }
                }
                LogEvent::Outcome {
                    patient_index,
                    patient_id,
                    disease_id,
                    department_id,
                    phase,
                    first_visit,
                    ..
                } => r.outcomes.push(OutcomeRow {
                    patient_index: *patient_index,
                    patient_id: patient_id.clone(),
                    disease_id: disease_id.clone(),
                    department_id: department_id.clone(),
                    recovered: *phase == Phase::Recovered,
                    first_visit: first_visit.clone(),
                }),
                LogEvent::RunStarted { .. } | LogEvent::RunFinished { .. } => {}
            }
        }
        r
    }

    /// First-decision correctness of `task`, in patient order.
    pub fn series(&self, task: Task) -> Vec<bool> {
        self.outcomes
            .iter()
            .filter_map(|o| o.first_visit.get(&task).copied())
            .collect()
    }

    pub fn counts_for(&self, doctor_id: &str, task: Task) -> BaseCounts {
        self.counts
            .get(&(doctor_id.to_string(), task))
            .copied()
            .unwrap_or_default()
    }
}
