pub mod agents;
pub mod flowmatch;
pub mod harness;
pub mod linalg;
pub mod mmdit;
pub mod par;
pub mod pipeline;
pub mod schedule;
pub mod seed;
pub mod toyworld;
