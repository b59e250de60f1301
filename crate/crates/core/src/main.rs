use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use agent_hospital::audit::{read_log, Replay};
use agent_hospital::config::RunConfig;
use agent_hospital::evaluation::{
    check_disjoint, curve_rows, curves_from_outcomes, evaluate_mcq, evaluate_tasks, export_curves,
    ingest_mcq, load_mcq, ExportFormat, OutcomeSeries,
};
use agent_hospital::knowledge::{DepartmentKind, KnowledgeBase};
use agent_hospital::llm::Backend;
use agent_hospital::memory::Task;
use agent_hospital::patient::{cohort_hashes, read_cohort, write_cohort, PatientFactory, COHORT_FILE};
use agent_hospital::simulacrum::{
    load_library, Hospital, RunMode, RunOptions, SimError, DOCTORS_DIR, LOG_FILE,
};

#[derive(Parser)]
#[command(name = "agent-hospital", version, about = "Hospital simulacrum with evolving doctor agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Department to work on; overrides the config.
    #[arg(long)]
    department: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a patient cohort and its truth sidecar.
    GenCohort {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Run the simulacrum in training mode over a cohort.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory holding cohort.jsonl and its truth sidecar.
        #[arg(long)]
        cohort: PathBuf,
        /// Discard the previous run in the output directory.
        #[arg(long, conflicts_with = "resume")]
        force: bool,
        /// Continue an interrupted run from its checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate frozen bases on held-out patients or an MCQ file.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Output directory of the training run whose bases are evaluated.
        #[arg(long)]
        bases: Option<PathBuf>,
        /// Held-out cohort directory to score.
        #[arg(long, conflicts_with = "mcq", required_unless_present = "mcq")]
        cohort: Option<PathBuf>,
        /// Training cohort; evaluation fails if any test patient overlaps it.
        #[arg(long, requires = "cohort")]
        train_cohort: Option<PathBuf>,
        /// Multiple-choice questions, one JSON object per line.
        #[arg(long)]
        mcq: Option<PathBuf>,
        /// Merge labelled MCQ items from this file into the case base first.
        #[arg(long, requires = "mcq")]
        hybrid: Option<PathBuf>,
    },
    /// Convert documents into cases for one department's doctor.
    ReadBooks {
        #[command(flatten)]
        common: Common,
        /// Directory of .txt or .md documents.
        #[arg(long)]
        docs: PathBuf,
    },
}

/// Configuration or usage problems exit with 2, everything else with 1.
struct UsageError(anyhow::Error);

type CmdResult = std::result::Result<(), Failure>;

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> UsageError {
    UsageError(e.into())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCohort { common, size } => gen_cohort(common, size),
        Command::Train {
            common,
            cohort,
            force,
            resume,
        } => train(common, &cohort, force, resume),
        Command::Eval {
            common,
            bases,
            cohort,
            train_cohort,
            mcq,
            hybrid,
        } => eval(common, bases, cohort, train_cohort, mcq, hybrid),
        Command::ReadBooks { common, docs } => read_books(common, &docs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Setup {
    cfg: RunConfig,
    kb: Arc<KnowledgeBase>,
    backend: Box<dyn Backend>,
}

/// Load, override, validate and echo the config, then build its pieces.
fn setup(
    common: &Common,
    adjust: impl FnOnce(&mut RunConfig),
) -> std::result::Result<Setup, UsageError> {
    let mut cfg = RunConfig::load(&common.config).map_err(usage)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(d) = &common.department {
        cfg.cohort.department = d.clone();
        cfg.world.departments = vec![d.clone()];
    }
    adjust(&mut cfg);
    cfg.sync();
    cfg.validate().map_err(usage)?;
    let kb = cfg.load_knowledge().map_err(usage)?;
    let dept = kb
        .department(&cfg.cohort.department)
        .map_err(|_| usage(anyhow!("unknown department '{}'", cfg.cohort.department)))?;
    if dept.kind != DepartmentKind::Clinical {
        return Err(usage(anyhow!("department '{}' is not clinical", dept.id)));
    }
    cfg.echo(&cfg.output_dir).map_err(usage)?;
    let backend = cfg.build_backend().map_err(usage)?;
    Ok(Setup { cfg, kb, backend })
}

fn gen_cohort(common: Common, size: Option<usize>) -> CmdResult {
    let s = setup(&common, |cfg| {
        if let Some(n) = size {
            cfg.cohort.size = n;
        }
    })?;
    let templates = s.cfg.load_templates().map_err(usage)?;
    let mut factory = PatientFactory::new(&s.kb, &templates, s.cfg.cohort.generator);
    factory.qc_retries = s.cfg.cohort.qc_retries;
    factory.use_judge = s.cfg.cohort.use_judge;
    let spec = s.cfg.cohort_spec();
    let (records, stats) = factory
        .sample_cohort_with_stats(&spec, s.backend.as_ref())
        .context("generating cohort")?;
    write_cohort(&s.cfg.output_dir, &records).context("writing cohort")?;
    println!(
        "wrote {} patients to {}",
        records.len(),
        s.cfg.output_dir.join(COHORT_FILE).display()
    );
    println!(
        "quality control: {} passed first time, {} needed retries, {} attempts in total",
        stats.first_pass,
        stats.retried(),
        stats.attempts
    );
    Ok(())
}

fn train(common: Common, cohort_dir: &Path, force: bool, resume: bool) -> CmdResult {
    let s = setup(&common, |_| {})?;
    let cohort = read_cohort(cohort_dir).map_err(usage)?;
    let templates = s.cfg.load_templates().map_err(usage)?;
    let library = match &s.cfg.library {
        Some(dir) => load_library(dir).map_err(usage)?,
        None => BTreeMap::new(),
    };
    let mut hospital = Hospital::new(
        s.kb.clone(),
        templates,
        s.cfg.world.clone(),
        s.backend.encoder_name(),
    )
    .map_err(usage)?;
    let options = RunOptions {
        out_dir: s.cfg.output_dir.clone(),
        resume,
        force,
    };
    let summary = hospital
        .run(&cohort, RunMode::Train, s.backend.as_ref(), &library, &options)
        .map_err(|e| match e {
            SimError::OutputExists(dir) => anyhow!(
                "{} already holds a run; pass --force to replace it or --resume to continue it",
                dir.display()
            ),
            e => anyhow::Error::new(e).context("training run"),
        })?;
    println!(
        "processed {} of {} patients ({} recovered, {} unrecovered)",
        summary.processed,
        summary.patients,
        summary.recovered,
        summary.unrecovered
    );

    let replay = Replay::from_log(&read_log(&summary.log_path).context("reading log")?);
    for doctor in hospital.doctors() {
        for task in Task::ALL {
            let c = replay.counts_for(&doctor.doctor_id, task);
            println!(
                "{} {:<11} cases {:>6} (interaction {}, books {})  principles {:>5} (validated {}, discarded {})",
                doctor.doctor_id,
                task.as_str(),
                doctor.case_base(task).len(),
                c.interaction_cases,
                c.book_cases,
                doctor.experience_base(task).len(),
                c.validated_principles,
                c.discarded_principles
            );
        }
    }
    for task in Task::ALL {
        let series = replay.series(task);
        if !series.is_empty() {
            let acc = series.iter().filter(|b| **b).count() as f64 / series.len() as f64;
            println!("final cumulative accuracy {:<11} {:.2}%", task.as_str(), acc * 100.0);
        }
    }
    let rows = curves_from_outcomes(&summary.outcomes, s.cfg.eval.window).context("computing curves")?;
    let curves = s.cfg.output_dir.join("curves.csv");
    export_curves(&rows, &curves, ExportFormat::Csv).context("exporting curves")?;
    println!(
        "log {}  curves {}",
        s.cfg.output_dir.join(LOG_FILE).display(),
        curves.display()
    );
    Ok(())
}

fn attending_with_bases(s: &Setup, bases: Option<&Path>) -> std::result::Result<Hospital, Failure> {
    let templates = s.cfg.load_templates().map_err(usage)?;
    let mut world = s.cfg.world.clone();
    world.departments = vec![s.cfg.cohort.department.clone()];
    let mut hospital =
        Hospital::new(s.kb.clone(), templates, world, s.backend.encoder_name()).map_err(usage)?;
    if let Some(dir) = bases {
        if !dir.join(DOCTORS_DIR).exists() {
            return Err(usage(anyhow!("no doctor bases under {}", dir.display())).into());
        }
        hospital.load_bases(dir).context("loading bases")?;
    }
    Ok(hospital)
}

fn eval(
    common: Common,
    bases: Option<PathBuf>,
    cohort: Option<PathBuf>,
    train_cohort: Option<PathBuf>,
    mcq: Option<PathBuf>,
    hybrid: Option<PathBuf>,
) -> CmdResult {
    let s = setup(&common, |cfg| {
        if hybrid.is_some() {
            cfg.doctor.hybrid = true;
        }
    })?;
    let mut hospital = attending_with_bases(&s, bases.as_deref())?;
    let dept = s.cfg.cohort.department.clone();
    let out = &s.cfg.output_dir;
    let window = s.cfg.eval.window;

    if let Some(dir) = cohort {
        let test = read_cohort(&dir).map_err(usage)?;
        if let Some(train_dir) = train_cohort {
            let train = read_cohort(&train_dir).map_err(usage)?;
            check_disjoint(&cohort_hashes(&train), &test).context("overlap check")?;
        }
        let doctor = hospital.doctor(&dept).expect("department enabled");
        let report = evaluate_tasks(
            doctor,
            &s.kb,
            &test,
            s.cfg.eval.treatment_context,
            s.backend.as_ref(),
        )
        .context("evaluating tasks")?;
        let md = report.to_markdown();
        print!("{md}");
        write(out.join("report.md"), &md)?;
        write(
            out.join("report.json"),
            &serde_json::to_string_pretty(&report).expect("serializable"),
        )?;
        let mut rows = Vec::new();
        for (task, outcomes) in &report.series {
            let series = OutcomeSeries::new(task.as_str(), &dept, outcomes.clone());
            rows.extend(curve_rows(&series, window).context("computing curves")?);
        }
        export_curves(&rows, out.join("curves.csv"), ExportFormat::Csv).context("exporting curves")?;
    } else if let Some(path) = mcq {
        let task = s.cfg.eval.mcq_task;
        let (items, skipped) = load_mcq(&path).map_err(usage)?;
        for line in &skipped {
            eprintln!("skipped {}:{}: {}", path.display(), line.line, line.reason);
        }
        if items.is_empty() {
            return Err(usage(anyhow!(
                "{}: no usable items ({} malformed lines)",
                path.display(),
                skipped.len()
            ))
            .into());
        }
        let doctor = hospital.doctor_mut(&dept).expect("department enabled");
        if let Some(train_path) = hybrid {
            let (train_items, train_skipped) = load_mcq(&train_path).map_err(usage)?;
            let n = ingest_mcq(doctor, &train_items, task, s.backend.as_ref())
                .context("ingesting labelled items")?;
            println!("merged {n} labelled items ({} malformed lines skipped)", train_skipped.len());
        }
        let report = evaluate_mcq(doctor, &items, skipped.len(), task, s.backend.as_ref())
            .context("evaluating MCQ")?;
        let md = report.to_markdown();
        print!("{md}");
        write(out.join("mcq_report.md"), &md)?;
        write(
            out.join("mcq_report.json"),
            &serde_json::to_string_pretty(&report).expect("serializable"),
        )?;
        let series = OutcomeSeries::new(task.as_str(), "mcq", report.series.clone());
        let rows = curve_rows(&series, window).context("computing curves")?;
        export_curves(&rows, out.join("curves.csv"), ExportFormat::Csv).context("exporting curves")?;
    }
    Ok(())
}

fn read_books(common: Common, docs: &Path) -> CmdResult {
    let s = setup(&common, |_| {})?;
    let mut hospital = attending_with_bases(&s, None)?;
    hospital
        .attach_bases(&s.cfg.output_dir)
        .context("opening bases")?;
    let doctor = hospital
        .doctor_mut(&s.cfg.cohort.department)
        .expect("department enabled");

    let mut files: Vec<PathBuf> = fs::read_dir(docs)
        .with_context(|| format!("listing {}", docs.display()))
        .map_err(Failure::Usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt" || e == "md"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(usage(anyhow!("no .txt or .md documents in {}", docs.display())).into());
    }
    let mut stored = 0;
    let mut failed = 0;
    for file in &files {
        let name = file.file_name().unwrap().to_string_lossy();
        let text = match fs::read_to_string(file) {
            Ok(t) => t,
            Err(e) => {
                println!("{name}: skipped ({e})");
                failed += 1;
                continue;
            }
        };
        let report = doctor
            .read_books(&[text], s.backend.as_ref())
            .with_context(|| format!("reading {name}"))?;
        println!(
            "{name}: {} items stored, {} skipped",
            report.stored(),
            report.skipped()
        );
        stored += report.stored();
    }
    println!(
        "{} documents, {} unreadable, {stored} items stored for {}",
        files.len(),
        failed,
        doctor.doctor_id
    );
    if failed == files.len() {
        return Err(anyhow!("no document could be read").into());
    }
    Ok(())
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
