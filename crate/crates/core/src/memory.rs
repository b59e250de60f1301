//! Medical case base and experience base.
//!
//! Both are [`VectorBase`]s: append-ordered entries with embeddings,
//! retrieved by exact cosine similarity. A base can be attached to a file,
//! in which case every insert and update is appended as one JSON line after
//! a header line carrying `schema_version`, kind, task and encoder name.

use std::cmp::Ordering;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::EmbeddingVector;

pub const BASE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("encoder mismatch: base uses `{base}`, entry embedded with `{entry}`")]
    EncoderMismatch { base: String, entry: String },
    #[error("task mismatch: base holds {base} entries, got {entry}")]
    TaskMismatch { base: Task, entry: Task },
    #[error("{}: schema_version {found} is not supported (expected {BASE_SCHEMA_VERSION})", path.display())]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{}:{line}: corrupt record: {message}", path.display())]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("principle {id}: illegal status change {from:?} -> {to:?}")]
    IllegalTransition {
        id: u64,
        from: PrincipleStatus,
        to: PrincipleStatus,
    },
    #[error("no entry with id {0}")]
    UnknownId(u64),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Examination,
    Diagnosis,
    Treatment,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Examination, Task::Diagnosis, Task::Treatment];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Examination => "examination",
            Task::Diagnosis => "diagnosis",
            Task::Treatment => "treatment",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Case,
    Experience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseSource {
    Interaction,
    Book,
    ExternalLabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicalCase {
    pub case_id: u64,
    pub task: Task,
    pub question_text: String,
    pub answer_text: String,
    pub embedding: EmbeddingVector,
    pub source: CaseSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipleStatus {
    Candidate,
    Validated,
    Discarded,
}

/// The mistake a principle was reflected from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrincipleOrigin {
    pub patient_id: String,
    pub question_text: String,
    pub candidates: Vec<String>,
    pub wrong_answer: Vec<String>,
    pub correct_answer: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperiencePrinciple {
    pub principle_id: u64,
    pub task: Task,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub origin: PrincipleOrigin,
    pub status: PrincipleStatus,
    pub refined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Common surface of the two entry kinds.
pub trait BaseEntry: Clone + PartialEq + Serialize + DeserializeOwned {
    const KIND: BaseKind;
    fn id(&self) -> u64;
    fn set_id(&mut self, id: u64);
    fn task(&self) -> Task;
    fn embedding(&self) -> &EmbeddingVector;
    fn retrievable(&self) -> bool;
}

impl BaseEntry for MedicalCase {
    const KIND: BaseKind = BaseKind::Case;
    fn id(&self) -> u64 {
        self.case_id
    }
    fn set_id(&mut self, id: u64) {
        self.case_id = id;
    }
    fn task(&self) -> Task {
        self.task
    }
    fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
    fn retrievable(&self) -> bool {
        true
    }
}

impl BaseEntry for ExperiencePrinciple {
    const KIND: BaseKind = BaseKind::Experience;
    fn id(&self) -> u64 {
        self.principle_id
    }
    fn set_id(&mut self, id: u64) {
        self.principle_id = id;
    }
    fn task(&self) -> Task {
        self.task
    }
    fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
    fn retrievable(&self) -> bool {
        self.status == PrincipleStatus::Validated
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, MemoryError> {
    if a.dim() != b.dim() {
        return Err(MemoryError::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MemoryError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    kind: BaseKind,
    task: Task,
    encoder_name: String,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", content = "entry", rename_all = "snake_case")]
enum Record<E> {
    Add(E),
    Update(E),
}

/// Appends go through a short-lived handle so idle bases hold no descriptor.
struct Journal {
    path: PathBuf,
    fsync: bool,
}

impl fmt::Debug for Journal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Journal").field("path", &self.path).finish()
    }
}

impl Journal {
    fn append(&mut self, line: &str) -> Result<(), MemoryError> {
        let io = |source| MemoryError::Io {
            path: self.path.clone(),
            source,
        };
        let mut file = OpenOptions::new().append(true).open(&self.path).map_err(io)?;
        let mut buf = String::with_capacity(line.len() + 1);
        buf.push_str(line);
        buf.push('\n');
        file.write_all(buf.as_bytes()).map_err(io)?;
        if self.fsync {
            file.sync_data().map_err(io)?;
        }
        Ok(())
    }
}

pub type CaseBase = VectorBase<MedicalCase>;
pub type ExperienceBase = VectorBase<ExperiencePrinciple>;

#[derive(Debug)]
pub struct VectorBase<E> {
    task: Task,
    encoder_name: String,
    entries: Vec<E>,
    journal: Option<Journal>,
}

impl<E: BaseEntry> PartialEq for VectorBase<E> {
    fn eq(&self, other: &Self) -> bool {
        self.task == other.task
            && self.encoder_name == other.encoder_name
            && self.entries == other.entries
    }
}

impl<E: BaseEntry> Clone for VectorBase<E> {
    /// Clones are detached from any backing file.
    fn clone(&self) -> Self {
        Self {
            task: self.task,
            encoder_name: self.encoder_name.clone(),
            entries: self.entries.clone(),
            journal: None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MemoryError + '_ {
    move |source| MemoryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl<E: BaseEntry> VectorBase<E> {
    pub fn new(task: Task, encoder_name: impl Into<String>) -> Self {
        Self {
            task,
            encoder_name: encoder_name.into(),
            entries: Vec::new(),
            journal: None,
        }
    }

    pub fn kind(&self) -> BaseKind {
        E::KIND
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[E] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&E> {
        // ids are 1..=len in insertion order
        id.checked_sub(1)
            .and_then(|i| self.entries.get(i as usize))
            .filter(|e| e.id() == id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.embedding().dim())
    }

    fn check_embedding(&self, v: &EmbeddingVector) -> Result<(), MemoryError> {
        if let Some(expected) = self.dim() {
            if v.dim() != expected {
                return Err(MemoryError::DimMismatch {
                    expected,
                    found: v.dim(),
                });
            }
        }
        if v.is_zero() {
            return Err(MemoryError::ZeroVector);
        }
        Ok(())
    }

    /// Append an entry; its id is assigned here as previous max + 1.
    pub fn insert(&mut self, mut entry: E, encoder: &str) -> Result<u64, MemoryError> {
        if encoder != self.encoder_name {
            return Err(MemoryError::EncoderMismatch {
                base: self.encoder_name.clone(),
                entry: encoder.to_string(),
            });
        }
        if entry.task() != self.task {
            return Err(MemoryError::TaskMismatch {
                base: self.task,
                entry: entry.task(),
            });
        }
        self.check_embedding(entry.embedding())?;
        let id = self.entries.last().map_or(0, |e| e.id()) + 1;
        entry.set_id(id);
        if let Some(j) = &mut self.journal {
            j.append(&serde_json::to_string(&Record::Add(&entry)).expect("serializable"))?;
        }
        self.entries.push(entry);
        Ok(id)
    }

    fn replace(&mut self, entry: E) -> Result<(), MemoryError> {
        let id = entry.id();
        let idx = self
            .entries
            .iter()
            .position(|e| e.id() == id)
            .ok_or(MemoryError::UnknownId(id))?;
        if let Some(j) = &mut self.journal {
            j.append(&serde_json::to_string(&Record::Update(&entry)).expect("serializable"))?;
        }
        self.entries[idx] = entry;
        Ok(())
    }

    /// Exact top-k: eligible entries sorted by similarity descending, ties
    /// broken by smaller insertion id.
    pub fn retrieve(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<(&E, f64)>, MemoryError> {
        if query.is_zero() {
            return Err(MemoryError::ZeroVector);
        }
        if let Some(expected) = self.dim() {
            if query.dim() != expected {
                return Err(MemoryError::DimMismatch {
                    expected,
                    found: query.dim(),
                });
            }
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = self
            .entries
            .iter()
            .filter(|e| e.retrievable())
            .map(|e| cosine_similarity(query, e.embedding()).map(|s| (e, s)))
            .collect::<Result<Vec<_>, _>>()?;
        let order = |a: &(&E, f64), b: &(&E, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then_with(|| a.0.id().cmp(&b.0.id()))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    fn header(&self) -> Header {
        Header {
            schema_version: BASE_SCHEMA_VERSION,
            kind: E::KIND,
            task: self.task,
            encoder_name: self.encoder_name.clone(),
        }
    }

    /// Write a compacted copy (header plus one `add` line per entry).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MemoryError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
        let mut write_line = |s: String| -> Result<(), MemoryError> {
            w.write_all(s.as_bytes()).map_err(io_err(path))?;
            w.write_all(b"\n").map_err(io_err(path))
        };
        write_line(serde_json::to_string(&self.header()).expect("serializable"))?;
        for e in &self.entries {
            write_line(serde_json::to_string(&Record::Add(e)).expect("serializable"))?;
        }
        w.flush().map_err(io_err(path))
    }

    /// Read a base file, replaying `add` and `update` records in order.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
        let corrupt = |line: usize, message: String| MemoryError::Corrupt {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, l)) => l.map_err(io_err(path))?,
            None => return Err(corrupt(1, "missing header".into())),
        };
        let raw: serde_json::Value =
            serde_json::from_str(&header_line).map_err(|e| corrupt(1, e.to_string()))?;
        let version = raw["schema_version"].as_u64().unwrap_or(0) as u32;
        if version != BASE_SCHEMA_VERSION {
            return Err(MemoryError::VersionMismatch {
                path: path.to_path_buf(),
                found: version,
            });
        }
        let header: Header = serde_json::from_value(raw).map_err(|e| corrupt(1, e.to_string()))?;
        if header.kind != E::KIND {
            return Err(corrupt(1, format!("expected {:?} base", E::KIND)));
        }
        let mut base = Self::new(header.task, header.encoder_name);
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(io_err(path))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record<E> =
                serde_json::from_str(&line).map_err(|e| corrupt(line_no, e.to_string()))?;
            match record {
                Record::Add(e) => {
                    let expected = base.entries.last().map_or(0, |x| x.id()) + 1;
                    if e.id() != expected {
                        return Err(corrupt(line_no, format!("id {} out of order", e.id())));
                    }
                    base.entries.push(e);
                }
                Record::Update(e) => {
                    let id = e.id();
                    let slot = base
                        .entries
                        .iter_mut()
                        .find(|x| x.id() == id)
                        .ok_or_else(|| corrupt(line_no, format!("update of unknown id {id}")))?;
                    *slot = e;
                }
            }
        }
        Ok(base)
    }

    /// Load (or create) `path` and append every later change to it.
    pub fn open(
        path: impl AsRef<Path>,
        task: Task,
        encoder_name: &str,
        fsync: bool,
    ) -> Result<Self, MemoryError> {
        let path = path.as_ref();
        let mut base = if path.exists() {
            let base = Self::load(path)?;
            if base.encoder_name != encoder_name {
                return Err(MemoryError::EncoderMismatch {
                    base: base.encoder_name,
                    entry: encoder_name.to_string(),
                });
            }
            if base.task != task {
                return Err(MemoryError::TaskMismatch {
                    base: base.task,
                    entry: task,
                });
            }
            base
        } else {
            let base = Self::new(task, encoder_name);
            base.save(path)?;
            base
        };
        base.journal = Some(Journal {
            path: path.to_path_buf(),
            fsync,
        });
        Ok(base)
    }

    pub fn path(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.path.as_path())
    }
}

impl VectorBase<MedicalCase> {
    pub fn add_case(&mut self, case: MedicalCase, encoder: &str) -> Result<u64, MemoryError> {
        self.insert(case, encoder)
    }

    pub fn count_by_source(&self, source: CaseSource) -> usize {
        self.entries.iter().filter(|c| c.source == source).count()
    }
}

impl VectorBase<ExperiencePrinciple> {
    pub fn add_experience(
        &mut self,
        principle: ExperiencePrinciple,
        encoder: &str,
    ) -> Result<u64, MemoryError> {
        self.insert(principle, encoder)
    }

    /// Move a candidate to validated or discarded. Any other change is illegal.
    pub fn set_status(&mut self, id: u64, status: PrincipleStatus) -> Result<(), MemoryError> {
        let mut p = self.get(id).cloned().ok_or(MemoryError::UnknownId(id))?;
        if p.status != PrincipleStatus::Candidate || status == PrincipleStatus::Candidate {
            return Err(MemoryError::IllegalTransition {
                id,
                from: p.status,
                to: status,
            });
        }
        p.status = status;
        self.replace(p)
    }

    /// Record the outcome of reformatting a validated principle.
    pub fn mark_refined(
        &mut self,
        id: u64,
        new_text: Option<(String, EmbeddingVector)>,
        note: Option<String>,
    ) -> Result<(), MemoryError> {
        let mut p = self.get(id).cloned().ok_or(MemoryError::UnknownId(id))?;
        if let Some((text, embedding)) = new_text {
            self.check_embedding(&embedding)?;
            p.text = text;
            p.embedding = embedding;
        }
        p.refined = true;
        p.note = note;
        self.replace(p)
    }

    pub fn count_by_status(&self, status: PrincipleStatus) -> usize {
        self.entries.iter().filter(|p| p.status == status).count()
    }
}

/// Current size in bytes of a base or log file, or 0 if it does not exist.
pub fn file_len(path: &Path) -> u64 {
    std::fs::metadata(path).map(|m| m.len()).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec())
    }

    fn case(task: Task, emb: EmbeddingVector) -> MedicalCase {
        MedicalCase {
            case_id: 0,
            task,
            question_text: "q".into(),
            answer_text: "a".into(),
            embedding: emb,
            source: CaseSource::Interaction,
        }
    }

    fn principle(status: PrincipleStatus, emb: EmbeddingVector) -> ExperiencePrinciple {
        ExperiencePrinciple {
            principle_id: 0,
            task: Task::Diagnosis,
            text: "People over 50 are more likely to get shingles.".into(),
            embedding: emb,
            origin: PrincipleOrigin {
                patient_id: "p".into(),
                question_text: "q".into(),
                candidates: vec!["A".into()],
                wrong_answer: vec!["x".into()],
                correct_answer: vec!["y".into()],
            },
            status,
            refined: false,
            note: None,
        }
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[3.0, 4.0]), &v(&[3.0, 4.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_similarity(&v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert!((s - 0.974631846).abs() < 1e-6);
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(MemoryError::DimMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])),
            Err(MemoryError::ZeroVector)
        ));
    }

    #[test]
    fn ids_are_monotone() {
        let mut base = CaseBase::new(Task::Diagnosis, "mock-2");
        assert_eq!(base.add_case(case(Task::Diagnosis, v(&[1.0, 0.0])), "mock-2").unwrap(), 1);
        for i in 2..=100 {
            let id = base
                .add_case(case(Task::Diagnosis, v(&[1.0, i as f64])), "mock-2")
                .unwrap();
            assert_eq!(id, i);
        }
        let ids: Vec<_> = base.entries().iter().map(|c| c.case_id).collect();
        assert_eq!(ids, (1..=100).collect::<Vec<_>>());
    }

    #[test]
    fn mismatches_rejected() {
        let mut base = CaseBase::new(Task::Diagnosis, "ada");
        let err = base
            .add_case(case(Task::Diagnosis, v(&[1.0])), "mock-16")
            .unwrap_err();
        assert!(matches!(err, MemoryError::EncoderMismatch { .. }));
        let err = base.add_case(case(Task::Treatment, v(&[1.0])), "ada").unwrap_err();
        assert!(matches!(err, MemoryError::TaskMismatch { .. }));
        base.add_case(case(Task::Diagnosis, v(&[1.0, 0.0])), "ada").unwrap();
        assert!(base.add_case(case(Task::Diagnosis, v(&[1.0])), "ada").is_err());
        assert!(base.retrieve(&v(&[1.0]), 1).is_err());
        assert!(base.retrieve(&v(&[0.0, 0.0]), 1).is_err());
    }

    #[test]
    fn retrieval_rules() {
        let mut base = CaseBase::new(Task::Diagnosis, "e");
        assert!(base.retrieve(&v(&[1.0, 0.0]), 3).unwrap().is_empty());
        base.add_case(case(Task::Diagnosis, v(&[0.0, 1.0])), "e").unwrap();
        base.add_case(case(Task::Diagnosis, v(&[1.0, 1.0])), "e").unwrap();
        base.add_case(case(Task::Diagnosis, v(&[1.0, 1.0])), "e").unwrap();
        let got = base.retrieve(&v(&[1.0, 1.0]), 2).unwrap();
        let ids: Vec<_> = got.iter().map(|(c, _)| c.case_id).collect();
        assert_eq!(ids, vec![2, 3]);
        assert_eq!(base.retrieve(&v(&[1.0, 1.0]), 10).unwrap().len(), 3);
        assert!(base.retrieve(&v(&[1.0, 1.0]), 0).unwrap().is_empty());
    }

    #[test]
    fn only_validated_principles_are_retrieved() {
        let mut base = ExperienceBase::new(Task::Diagnosis, "e");
        let a = base.add_experience(principle(PrincipleStatus::Candidate, v(&[1.0, 0.0])), "e").unwrap();
        let b = base.add_experience(principle(PrincipleStatus::Candidate, v(&[1.0, 0.1])), "e").unwrap();
        base.add_experience(principle(PrincipleStatus::Candidate, v(&[1.0, 0.2])), "e").unwrap();
        base.set_status(a, PrincipleStatus::Validated).unwrap();
        base.set_status(b, PrincipleStatus::Discarded).unwrap();
        let got = base.retrieve(&v(&[1.0, 0.0]), 10).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].0.principle_id, a);
        assert!(matches!(
            base.set_status(a, PrincipleStatus::Discarded),
            Err(MemoryError::IllegalTransition { .. })
        ));
        assert!(base.set_status(b, PrincipleStatus::Validated).is_err());
    }

    #[test]
    fn persistence_round_trip_with_updates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dermatology/diagnosis.experience.jsonl");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let mut base = ExperienceBase::open(&path, Task::Diagnosis, "e", false).unwrap();
        let a = base.add_experience(principle(PrincipleStatus::Candidate, v(&[0.3, 0.7])), "e").unwrap();
        base.add_experience(principle(PrincipleStatus::Validated, v(&[0.1, 0.7])), "e").unwrap();
        base.set_status(a, PrincipleStatus::Validated).unwrap();
        base.mark_refined(a, Some(("Reformatted.".into(), v(&[0.5, 0.5]))), None).unwrap();
        let loaded = ExperienceBase::load(&path).unwrap();
        assert_eq!(loaded, base);

        let compact = dir.path().join("compact.jsonl");
        base.save(&compact).unwrap();
        assert_eq!(ExperienceBase::load(&compact).unwrap(), base);

        let reopened = ExperienceBase::open(&path, Task::Diagnosis, "e", false).unwrap();
        assert_eq!(reopened, base);
        assert!(ExperienceBase::open(&path, Task::Diagnosis, "other", false).is_err());
    }

    #[test]
    fn version_and_corruption_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.jsonl");
        std::fs::write(
            &p,
            "{\"schema_version\":99,\"kind\":\"case\",\"task\":\"diagnosis\",\"encoder_name\":\"e\"}\n",
        )
        .unwrap();
        assert!(matches!(CaseBase::load(&p), Err(MemoryError::VersionMismatch { found: 99, .. })));

        let mut base = CaseBase::new(Task::Diagnosis, "e");
        base.add_case(case(Task::Diagnosis, v(&[1.0, 2.0])), "e").unwrap();
        base.add_case(case(Task::Diagnosis, v(&[2.0, 1.0])), "e").unwrap();
        base.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, &text[..text.len() - 10]).unwrap();
        match CaseBase::load(&p) {
            Err(MemoryError::Corrupt { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected corrupt error, got {other:?}"),
        }
    }
}
