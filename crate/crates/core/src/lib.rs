pub mod cardinality;
mod fsutil;
pub mod queue;
pub mod schema;
pub mod engine;
pub mod daily;
pub mod ingest;
pub mod workflow;
pub mod sentiment;
pub mod bench;
pub mod serve;
