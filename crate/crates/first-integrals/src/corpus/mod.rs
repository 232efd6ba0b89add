//! File formats, reports and the command layer behind the `fint` binary:
//! system-definition documents, FI coefficient files, deterministic
//! structured-text reports, and the define → assemble → solve → certify →
//! verify pipeline.

pub mod commands;
pub mod fifile;
pub mod report;
pub mod sysfile;

pub use commands::{
    cmd_curvature, cmd_fi_solve, cmd_kt_solve, cmd_report, cmd_verify, CmdError, CommandOptions,
    FamilyArg,
};
pub use fifile::{parse_fi, render_fi};
pub use report::{digest, Report, Section};
pub use sysfile::{parse_system, AnsatzConfig, AnsatzTerm, SystemDefinition, VerifyConfig};
