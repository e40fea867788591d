//! Subcommand implementations. Each writes its outputs under an output
//! directory and returns what it wrote.

pub mod analyze;
pub mod diagnose;
pub mod eval;
pub mod sample;
pub mod sweep;
pub mod train;

pub use analyze::cmd_analyze;
pub use diagnose::cmd_diagnose;
pub use eval::cmd_eval;
pub use sample::cmd_sample;
pub use sweep::cmd_sweep;
pub use train::cmd_train;
