//! The six subcommands. Each `run` writes its artifacts through the
//! [`Context`](crate::Context) and returns whether its predicates hold.

pub mod bounds;
pub mod gradcheck;
pub mod nfe;
pub mod sweep;
pub mod train;
pub mod verify_ot;

use serde::Serialize;

/// One named pass/fail predicate of a command.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Prints every check to stderr and returns whether all passed.
pub fn report(checks: &[Check]) -> bool {
    for c in checks {
        eprintln!(
            "[{}] {}: {}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    checks.iter().all(|c| c.pass)
}

/// `0.3` → `0.3`, `1` → `1`; safe in file names.
pub fn number_tag(x: f64) -> String {
    format!("{x}")
}
