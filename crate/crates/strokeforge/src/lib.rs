//! Files, configs and the command-line tool around `strokeforge-core`.
//!
//! - [`dataset`]: QuickDraw NDJSON parsing and the JSONL sketch store.
//! - [`config`]: the flat JSON [`config::RunConfig`] with desk and full presets.
//! - [`checkpoint`]: model checkpoint files.
//! - [`report`]: CSV loss logs, confusion matrices, stored predictions.
//! - [`export`]: SVG sketches, grids and scatter plots; PNG rasters.
//! - [`pipeline`]: training, parallel sampling and corpus assembly.
//! - [`cli`]: the `strokeforge` command.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod pipeline;
pub mod report;

pub use error::InputError;

/// Exit code for an error: 2 when the input was at fault, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<strokeforge_core::Error>() {
            use strokeforge_core::Error as E;
            return match e {
                E::Invalid(_) | E::Data(_) | E::Checkpoint(_) => 2,
                _ => 1,
            };
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            if e.kind() == std::io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}
