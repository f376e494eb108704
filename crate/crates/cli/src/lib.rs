//! Command implementations behind the `mosaic` binary. Kept in a library so
//! tests can drive them with an injected model provider.

pub mod commands;
pub mod config;

pub use commands::{report, solve, teach, Env, Exit};
pub use config::{ConfigLayer, Purpose, RunConfig, SandboxKind};
