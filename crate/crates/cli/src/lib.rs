//! Command-line front end for `pcis-core`: configuration files, scene and
//! checkpoint formats, prediction files and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod predictions;
pub mod scene_file;
pub mod settings;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult, ErrorKind};
