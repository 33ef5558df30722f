pub mod diff;
pub mod nets;
pub mod envs;
pub mod persist;
pub mod replay;
pub mod agent;
pub mod plot;
pub mod stats;
pub mod run;
