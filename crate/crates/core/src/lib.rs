pub mod audit;
pub mod config;
pub mod doctor;
pub mod evaluation;
pub mod knowledge;
pub mod llm;
pub mod memory;
pub mod patient;
pub mod simulacrum;
pub mod templates;
