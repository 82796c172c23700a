//! Library side of the `subjcheck` command: run configuration and the
//! subcommand implementations, kept here so they can be driven from tests.
//!
//! Exit codes used by the binary:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | unexpected failure (I/O, internal contract) |
//! | 2 | configuration or usage error, reported before any provider call |
//! | 3 | input data failed validation (bad TSV, unknown ids, mismatched key sets, pool too small) |
//! | 4 | provider failure (transport, HTTP status, undecodable body, offline cache miss), including runs where some sentences failed |

pub mod commands;
pub mod config;

pub use commands::{
    cmd_audit, cmd_classify, cmd_embed, cmd_evaluate, cmd_select, cmd_stats, cmd_stats_config,
    ClassifyOutcome,
};
pub use config::{Overrides, RunConfig};

use subjcheck_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_remote() => EXIT_PROVIDER,
        Error::Config(_) => EXIT_CONFIG,
        Error::Parse { .. }
        | Error::Validation(_)
        | Error::Capacity { .. }
        | Error::Lookup(_)
        | Error::Provenance(_) => EXIT_VALIDATION,
        _ => EXIT_OTHER,
    }
}
