pub mod cache;
pub mod experiments;
pub mod report;
pub mod stats;
