//! Library surface of the `mhmmx` binary: run configuration, artifact
//! plumbing, the exit-code policy, and one function per subcommand. Exposed
//! so tooling (e.g. fuzz targets) can exercise the parsers directly.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
