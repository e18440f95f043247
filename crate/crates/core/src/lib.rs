//! Budgeted black-box search over RAG pipeline configurations.

pub mod controllers;
pub mod engine;
pub mod environment;
pub mod exec;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod reporting;
pub mod search_space;
pub mod text;
