//! Experiment runner for the backward-compatible embedding laboratory:
//! config resolution, the generate / run / sweep pipeline, and the
//! persistence formats shared by the subcommands.

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod sweep;

pub use config::{resolve_config, EvalConfig, RunConfig, SplitConfig};
pub use error::CliError;
pub use metrics::{IncompleteDocument, MetricsDocument};
pub use pipeline::{run_generate, run_pipeline, PipelineArtifacts};
pub use sweep::run_sweep;
