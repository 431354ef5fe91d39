//! Tagging service: serves image-caption pairs to taggers in per-session
//! random order, records 5-point scores in an append-only log, exports the
//! corpus format and reports agreement while tagging is under way.

pub mod http;
pub mod log;
pub mod service;

pub use log::{EventLog, ScoreEvent};
pub use service::{
    AnnotationService, NextItem, Progress, ScoreSubmission, ServiceConfig, ServiceError,
};
