//! Department taxonomy and disease knowledge base.
//!
//! A knowledge bundle is either a directory holding `departments.toml` plus
//! one `diseases/<disease_id>.toml` per disease, or a single TOML file with
//! both a `departments` and a `diseases` array. Every file carries a
//! `schema_version` field.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KNOWLEDGE_SCHEMA_VERSION: u32 = 1;

const DEFAULT_TAXONOMY: &str = include_str!("../data/taxonomy/departments.toml");

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{}:{line}: parse error: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: unsupported schema_version {found} (expected {KNOWLEDGE_SCHEMA_VERSION})", file.display())]
    SchemaVersion { file: PathBuf, found: u32 },
    #[error("{context} references unknown id `{id}`")]
    Dangling { context: String, id: String },
    #[error("duplicate id `{id}`")]
    Duplicate { id: String },
    #[error("invalid record `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("unknown department `{0}`")]
    UnknownDepartment(String),
    #[error("unknown disease `{0}`")]
    UnknownDisease(String),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepartmentKind {
    Clinical,
    NonClinical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Department {
    pub id: String,
    pub name: String,
    pub kind: DepartmentKind,
}

/// Treatment plans are keyed by severity; unstratified diseases use `Default`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Mild,
    Moderate,
    Severe,
    Default,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Moderate => "moderate",
            Severity::Severe => "severe",
            Severity::Default => "default",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseKnowledge {
    pub disease_id: String,
    pub name: String,
    pub department_id: String,
    #[serde(default)]
    pub risk_factors: Vec<String>,
    pub symptoms: Vec<String>,
    pub examinations: BTreeMap<String, String>,
    pub treatment_plans: BTreeMap<Severity, String>,
}

impl DiseaseKnowledge {
    pub fn severities(&self) -> Vec<Severity> {
        self.treatment_plans.keys().copied().collect()
    }

    /// Candidate label used for a treatment plan in the treatment answer space.
    pub fn treatment_label(&self, severity: Severity) -> Option<String> {
        self.treatment_plans
            .get(&severity)
            .map(|plan| format!("{} ({}): {}", self.name, severity, plan))
    }
}

/// Explicit additions to the auto-derived candidate lists of one department.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateExtension {
    pub department_id: String,
    #[serde(default)]
    pub examinations: Vec<String>,
    #[serde(default)]
    pub diseases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub correct_examinations: BTreeSet<String>,
    pub correct_diagnosis: String,
    pub correct_treatments: BTreeMap<Severity, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    departments: Vec<Department>,
    diseases: Vec<DiseaseKnowledge>,
    extensions: Vec<CandidateExtension>,
    candidate_examinations: BTreeMap<String, Vec<String>>,
    candidate_diseases: BTreeMap<String, Vec<String>>,
    dept_index: HashMap<String, usize>,
    disease_index: HashMap<String, usize>,
}

#[derive(Debug, Deserialize, Serialize)]
struct DepartmentsFile {
    schema_version: u32,
    departments: Vec<Department>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    candidate_extensions: Vec<CandidateExtension>,
}

#[derive(Debug, Deserialize, Serialize)]
struct DiseaseFile {
    schema_version: u32,
    #[serde(flatten)]
    disease: DiseaseKnowledge,
}

#[derive(Debug, Deserialize)]
struct SingleFileBundle {
    schema_version: u32,
    departments: Vec<Department>,
    #[serde(default)]
    candidate_extensions: Vec<CandidateExtension>,
    #[serde(default)]
    diseases: Vec<DiseaseKnowledge>,
}

fn read(path: &Path) -> Result<String, KnowledgeError> {
    fs::read_to_string(path).map_err(|source| KnowledgeError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, KnowledgeError> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        KnowledgeError::Parse {
            file: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), KnowledgeError> {
    if found != KNOWLEDGE_SCHEMA_VERSION {
        return Err(KnowledgeError::SchemaVersion {
            file: path.to_path_buf(),
            found,
        });
    }
    Ok(())
}

/// Load a knowledge bundle from a directory or a single file.
pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase, KnowledgeError> {
    let path = path.as_ref();
    if path.is_dir() {
        let dept_path = path.join("departments.toml");
        let text = read(&dept_path)?;
        let file: DepartmentsFile = parse_toml(&dept_path, &text)?;
        check_version(&dept_path, file.schema_version)?;

        let mut diseases = Vec::new();
        let disease_dir = path.join("diseases");
        if disease_dir.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(&disease_dir)
                .map_err(|source| KnowledgeError::Io {
                    path: disease_dir.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
                .collect();
            files.sort();
            for file_path in files {
                let text = read(&file_path)?;
                let df: DiseaseFile = parse_toml(&file_path, &text)?;
                check_version(&file_path, df.schema_version)?;
                diseases.push(df.disease);
            }
        }
        KnowledgeBase::new(file.departments, diseases, file.candidate_extensions)
    } else {
        let text = read(path)?;
        let bundle: SingleFileBundle = parse_toml(path, &text)?;
        check_version(path, bundle.schema_version)?;
        KnowledgeBase::new(bundle.departments, bundle.diseases, bundle.candidate_extensions)
    }
}

/// The 32-department taxonomy shipped with the crate (no diseases).
pub fn default_taxonomy() -> Vec<Department> {
    let file: DepartmentsFile =
        toml::from_str(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid");
    file.departments
}

fn push_unique(list: &mut Vec<String>, item: &str) {
    if !list.iter().any(|x| x == item) {
        list.push(item.to_string());
    }
}

impl KnowledgeBase {
    /// Build and cross-check a knowledge base from parsed records.
    pub fn new(
        departments: Vec<Department>,
        diseases: Vec<DiseaseKnowledge>,
        extensions: Vec<CandidateExtension>,
    ) -> Result<Self, KnowledgeError> {
        let mut dept_index = HashMap::new();
        for (i, d) in departments.iter().enumerate() {
            if dept_index.insert(d.id.clone(), i).is_some() {
                return Err(KnowledgeError::Duplicate { id: d.id.clone() });
            }
        }

        let mut disease_index = HashMap::new();
        let mut names = HashSet::new();
        for (i, d) in diseases.iter().enumerate() {
            if disease_index.insert(d.disease_id.clone(), i).is_some() {
                return Err(KnowledgeError::Duplicate {
                    id: d.disease_id.clone(),
                });
            }
            if !names.insert(d.name.clone()) {
                return Err(KnowledgeError::Duplicate { id: d.name.clone() });
            }
            let dept = dept_index
                .get(&d.department_id)
                .map(|&j| &departments[j])
                .ok_or_else(|| KnowledgeError::Dangling {
                    context: format!("disease `{}`", d.disease_id),
                    id: d.department_id.clone(),
                })?;
            if dept.kind != DepartmentKind::Clinical {
                return Err(KnowledgeError::Invalid {
                    id: d.disease_id.clone(),
                    message: format!("department `{}` is not clinical", dept.id),
                });
            }
            let invalid = |message: &str| KnowledgeError::Invalid {
                id: d.disease_id.clone(),
                message: message.to_string(),
            };
            if d.symptoms.is_empty() {
                return Err(invalid("symptoms must be non-empty"));
            }
            if d.examinations.is_empty() {
                return Err(invalid("at least one examination modality required"));
            }
            if d.treatment_plans.is_empty() {
                return Err(invalid("at least one treatment plan required"));
            }
        }

        let mut candidate_examinations: BTreeMap<String, Vec<String>> = departments
            .iter()
            .map(|d| (d.id.clone(), Vec::new()))
            .collect();
        let mut candidate_diseases = candidate_examinations.clone();
        for d in &diseases {
            let exams = candidate_examinations.get_mut(&d.department_id).unwrap();
            for modality in d.examinations.keys() {
                push_unique(exams, modality);
            }
            push_unique(candidate_diseases.get_mut(&d.department_id).unwrap(), &d.name);
        }
        for ext in &extensions {
            let exams = candidate_examinations
                .get_mut(&ext.department_id)
                .ok_or_else(|| KnowledgeError::Dangling {
                    context: "candidate extension".into(),
                    id: ext.department_id.clone(),
                })?;
            for e in &ext.examinations {
                push_unique(exams, e);
            }
            let ds = candidate_diseases.get_mut(&ext.department_id).unwrap();
            for d in &ext.diseases {
                push_unique(ds, d);
            }
        }

        Ok(Self {
            departments,
            diseases,
            extensions,
            candidate_examinations,
            candidate_diseases,
            dept_index,
            disease_index,
        })
    }

    pub fn departments(&self) -> &[Department] {
        &self.departments
    }

    pub fn diseases(&self) -> &[DiseaseKnowledge] {
        &self.diseases
    }

    pub fn department(&self, id: &str) -> Result<&Department, KnowledgeError> {
        self.dept_index
            .get(id)
            .map(|&i| &self.departments[i])
            .ok_or_else(|| KnowledgeError::UnknownDepartment(id.to_string()))
    }

    pub fn disease(&self, id: &str) -> Result<&DiseaseKnowledge, KnowledgeError> {
        self.disease_index
            .get(id)
            .map(|&i| &self.diseases[i])
            .ok_or_else(|| KnowledgeError::UnknownDisease(id.to_string()))
    }

    pub fn disease_by_name(&self, name: &str) -> Option<&DiseaseKnowledge> {
        self.diseases.iter().find(|d| d.name == name)
    }

    pub fn clinical_departments(&self) -> impl Iterator<Item = &Department> {
        self.departments
            .iter()
            .filter(|d| d.kind == DepartmentKind::Clinical)
    }

    /// All and only the diseases of `dept`, in load order.
    pub fn diseases_for_department(
        &self,
        dept: &str,
    ) -> Result<Vec<&DiseaseKnowledge>, KnowledgeError> {
        self.department(dept)?;
        Ok(self
            .diseases
            .iter()
            .filter(|d| d.department_id == dept)
            .collect())
    }

    pub fn candidate_examinations(&self, dept: &str) -> Result<&[String], KnowledgeError> {
        self.candidate_examinations
            .get(dept)
            .map(Vec::as_slice)
            .ok_or_else(|| KnowledgeError::UnknownDepartment(dept.to_string()))
    }

    pub fn candidate_diseases(&self, dept: &str) -> Result<&[String], KnowledgeError> {
        self.candidate_diseases
            .get(dept)
            .map(Vec::as_slice)
            .ok_or_else(|| KnowledgeError::UnknownDepartment(dept.to_string()))
    }

    /// Treatment answer space of a department: every plan of every disease,
    /// labelled with disease name and severity.
    pub fn candidate_treatments(&self, dept: &str) -> Result<Vec<String>, KnowledgeError> {
        Ok(self
            .diseases_for_department(dept)?
            .into_iter()
            .flat_map(|d| {
                d.treatment_plans
                    .keys()
                    .filter_map(move |&s| d.treatment_label(s))
            })
            .collect())
    }

    pub fn ground_truth_for(&self, disease_id: &str) -> Result<GroundTruth, KnowledgeError> {
        let d = self.disease(disease_id)?;
        Ok(GroundTruth {
            correct_examinations: d.examinations.keys().cloned().collect(),
            correct_diagnosis: d.name.clone(),
            correct_treatments: d.treatment_plans.clone(),
        })
    }

    /// Write the knowledge base as a directory bundle.
    pub fn save_bundle(&self, dir: impl AsRef<Path>) -> Result<(), KnowledgeError> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| KnowledgeError::Io { path, source }
        };
        let disease_dir = dir.join("diseases");
        fs::create_dir_all(&disease_dir).map_err(io(&disease_dir))?;
        let depts = DepartmentsFile {
            schema_version: KNOWLEDGE_SCHEMA_VERSION,
            departments: self.departments.clone(),
            candidate_extensions: self.extensions.clone(),
        };
        let dept_path = dir.join("departments.toml");
        fs::write(&dept_path, toml::to_string(&depts).expect("serializable"))
            .map_err(io(&dept_path))?;
        // Zero-padded prefix keeps directory order equal to load order.
        for (i, d) in self.diseases.iter().enumerate() {
            let file = DiseaseFile {
                schema_version: KNOWLEDGE_SCHEMA_VERSION,
                disease: d.clone(),
            };
            let p = disease_dir.join(format!("{i:04}_{}.toml", d.disease_id));
            fs::write(&p, toml::to_string(&file).expect("serializable")).map_err(io(&p))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("data/knowledge")
    }

    #[test]
    fn default_taxonomy_counts() {
        let depts = default_taxonomy();
        let clinical = depts
            .iter()
            .filter(|d| d.kind == DepartmentKind::Clinical)
            .count();
        assert_eq!(clinical, 21);
        assert_eq!(depts.len() - clinical, 11);
        let ids: HashSet<_> = depts.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), 32);
    }

    #[test]
    fn fixture_queries() {
        let kb = load_knowledge_base(fixture_path()).unwrap();
        let resp: Vec<_> = kb
            .diseases_for_department("respiratory")
            .unwrap()
            .iter()
            .map(|d| d.name.as_str())
            .collect();
        assert_eq!(&resp[..2], &["COVID-19", "Influenza B"]);
        assert!(kb.diseases_for_department("anatomy").unwrap().is_empty());
        let derm: Vec<_> = kb
            .diseases_for_department("dermatology")
            .unwrap()
            .iter()
            .map(|d| d.name.clone())
            .collect();
        assert!(derm.contains(&"Herpes Zoster".to_string()));
        assert!(matches!(
            kb.diseases_for_department("nowhere"),
            Err(KnowledgeError::UnknownDepartment(_))
        ));
    }

    #[test]
    fn covid_ground_truth() {
        let kb = load_knowledge_base(fixture_path()).unwrap();
        let gt = kb.ground_truth_for("covid19").unwrap();
        let exams: Vec<_> = gt.correct_examinations.iter().cloned().collect();
        assert_eq!(exams, vec!["Blood Test", "Chest X-ray Exam"]);
        assert_eq!(gt.correct_diagnosis, "COVID-19");
        let sev: Vec<_> = gt.correct_treatments.keys().copied().collect();
        assert_eq!(sev, vec![Severity::Mild, Severity::Moderate, Severity::Severe]);
        assert!(matches!(
            kb.ground_truth_for("X999"),
            Err(KnowledgeError::UnknownDisease(id)) if id == "X999"
        ));
    }

    #[test]
    fn fixture_visible_text_never_names_its_disease() {
        let kb = load_knowledge_base(fixture_path()).unwrap();
        for d in kb.diseases() {
            let name = d.name.to_lowercase();
            for s in &d.symptoms {
                assert!(!s.to_lowercase().contains(&name), "{} symptom {s}", d.name);
            }
            for report in d.examinations.values() {
                assert!(!report.to_lowercase().contains(&name), "{} exam", d.name);
            }
        }
    }

    fn small_disease(id: &str, dept: &str, modalities: &[&str]) -> DiseaseKnowledge {
        DiseaseKnowledge {
            disease_id: id.into(),
            name: format!("Disease {id}"),
            department_id: dept.into(),
            risk_factors: vec![],
            symptoms: vec!["cough".into()],
            examinations: modalities
                .iter()
                .map(|m| (m.to_string(), "finding".to_string()))
                .collect(),
            treatment_plans: [(Severity::Default, "rest".to_string())].into(),
        }
    }

    fn dept(id: &str, kind: DepartmentKind) -> Department {
        Department {
            id: id.into(),
            name: id.into(),
            kind,
        }
    }

    #[test]
    fn dangling_department_is_named() {
        let err = KnowledgeBase::new(
            vec![dept("respiratory", DepartmentKind::Clinical)],
            vec![small_disease("d1", "Cardiology", &["ECG"])],
            vec![],
        )
        .unwrap_err();
        assert!(err.to_string().contains("Cardiology"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = KnowledgeBase::new(
            vec![
                dept("respiratory", DepartmentKind::Clinical),
                dept("respiratory", DepartmentKind::Clinical),
            ],
            vec![],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, KnowledgeError::Duplicate { .. }));
    }

    #[test]
    fn single_modality_and_extension() {
        let kb = KnowledgeBase::new(
            vec![dept("resp", DepartmentKind::Clinical)],
            vec![small_disease("d1", "resp", &["CT"])],
            vec![CandidateExtension {
                department_id: "resp".into(),
                examinations: vec!["MRI".into(), "CT".into()],
                diseases: vec!["Common Cold".into()],
            }],
        )
        .unwrap();
        assert_eq!(kb.ground_truth_for("d1").unwrap().correct_examinations.len(), 1);
        assert_eq!(kb.candidate_examinations("resp").unwrap(), &["CT", "MRI"]);
        assert_eq!(
            kb.candidate_diseases("resp").unwrap(),
            &["Disease d1", "Common Cold"]
        );
    }

    #[test]
    fn parse_error_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("departments.toml"),
            "schema_version = 1\n\n[[departments]]\nid = \"a\"\nname = = \"x\"\n",
        )
        .unwrap();
        let err = load_knowledge_base(dir.path()).unwrap_err();
        match err {
            KnowledgeError::Parse { file, line, .. } => {
                assert!(file.ends_with("departments.toml"));
                assert_eq!(line, 5);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn schema_version_checked() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("kb.toml");
        fs::write(&f, "schema_version = 7\ndepartments = []\n").unwrap();
        assert!(matches!(
            load_knowledge_base(&f),
            Err(KnowledgeError::SchemaVersion { found: 7, .. })
        ));
    }
}
