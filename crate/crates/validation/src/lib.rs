//! Reporting helpers for the acceptance checks in `tests/acceptance.rs`.
//!
//! The package sits last in the workspace test order, so a failing
//! criterion does not keep the unit and integration tests from running.

use std::time::{Duration, Instant};

/// Result of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl Verdict {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {:<28} {} [{:.1}s]",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `check`, timing it; `check` returns whether it passed and a detail line.
pub fn criterion(id: u32, name: &'static str, check: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = check();
    let v = Verdict { id, name, pass, detail, elapsed: t.elapsed() };
    println!("{}", v.line());
    v
}

/// Prints the summary and returns the process exit code.
pub fn finish(verdicts: &[Verdict]) -> i32 {
    let failed: Vec<u32> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!("acceptance: {} passed, {} failed {:?}", verdicts.len() - failed.len(), failed.len(), failed);
    i32::from(!failed.is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_reflects_failures() {
        let ok = Verdict { id: 1, name: "a", pass: true, detail: String::new(), elapsed: Duration::ZERO };
        let bad = Verdict { pass: false, id: 2, ..ok.clone() };
        assert_eq!(finish(std::slice::from_ref(&ok)), 0);
        assert_eq!(finish(&[ok, bad.clone()]), 1);
        assert!(bad.line().starts_with("FAIL criterion  2"));
    }
}
