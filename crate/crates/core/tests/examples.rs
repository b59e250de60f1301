//! Every example must run to completion.

#[allow(dead_code)]
#[path = "../examples/generate_cohort.rs"]
mod generate_cohort;

#[test]
fn run_generate_cohort() {
    generate_cohort::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/visit_walkthrough.rs"]
mod visit_walkthrough;

#[test]
fn run_visit_walkthrough() {
    visit_walkthrough::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/rag_retrieval.rs"]
mod rag_retrieval;

#[test]
fn run_rag_retrieval() {
    rag_retrieval::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/train_department.rs"]
mod train_department;

#[test]
fn run_train_department() {
    train_department::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/evaluate_tasks.rs"]
mod evaluate_tasks;

#[test]
fn run_evaluate_tasks() {
    evaluate_tasks::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/read_books.rs"]
mod read_books;

#[test]
fn run_read_books() {
    read_books::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/evaluate_mcq.rs"]
mod evaluate_mcq;

#[test]
fn run_evaluate_mcq() {
    evaluate_mcq::run_example().unwrap();
}
