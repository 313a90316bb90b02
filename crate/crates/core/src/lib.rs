pub mod annotation_service;
pub mod classifier;
pub mod cli;
pub mod clock;
pub mod corpus;
pub mod http;
pub mod ingest;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod taxonomy;
