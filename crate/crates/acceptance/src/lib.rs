//! Minimal runner that evaluates acceptance criteria and prints one line per
//! criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Result of one criterion: whether every sub-check held, plus a summary.
pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

/// Collects sub-checks for one criterion.
#[derive(Default)]
pub struct Checks {
    items: Vec<(bool, String)>,
}

impl Checks {
    pub fn check(&mut self, ok: bool, what: impl Into<String>) -> bool {
        self.items.push((ok, what.into()));
        ok
    }

    pub fn outcome(self) -> Outcome {
        let passed = self.items.iter().all(|(ok, _)| *ok);
        let detail = self
            .items
            .into_iter()
            .map(|(ok, s)| format!("{}{s}", if ok { "" } else { "!! " }))
            .collect::<Vec<_>>()
            .join("; ");
        Outcome { passed, detail }
    }
}

pub struct Line {
    pub id: u32,
    pub passed: bool,
}

#[derive(Default)]
pub struct Suite {
    lines: Vec<Line>,
}

impl Suite {
    /// Runs `f`, enforcing the runtime budget, and prints the verdict.
    pub fn criterion(
        &mut self,
        id: u32,
        title: &str,
        budget: Duration,
        f: impl FnOnce() -> Outcome,
    ) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f));
        let elapsed = start.elapsed();
        let (mut passed, mut detail) = match result {
            Ok(o) => (o.passed, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                (false, format!("panicked: {msg}"))
            }
        };
        if elapsed > budget {
            passed = false;
            detail.push_str("; !! runtime over budget");
        }
        println!(
            "{} [{id}] {title} ({:.2} s / {} s): {detail}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        self.lines.push(Line { id, passed });
    }

    pub fn finish(self) -> ExitCode {
        let failed: Vec<u32> = self
            .lines
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.id)
            .collect();
        println!(
            "acceptance: {} of {} criteria passed{}",
            self.lines.len() - failed.len(),
            self.lines.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failing: {failed:?}")
            }
        );
        if failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}
