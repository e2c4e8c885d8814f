//! Subcommands of the `unitguard` tool. Each returns the text it would print
//! and its exit code so that it can be tested without a process.
//!
//! Every command prints a human-readable part, a `---` line, then JSON.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;
use unitguard::mape::Voter;
use unitguard::policy::{evaluate_policy, parse_policy, parse_trace};
use unitguard::sim::{compose_expected, involved, load_scenario, run, timing_report, ScenarioError};
use unitguard::Millis;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(code: i32, stderr: String) -> Self {
        Outcome { code, stdout: String::new(), stderr }
    }

    /// The JSON block after the `---` line.
    pub fn json(&self) -> Option<serde_json::Value> {
        let (_, tail) = self.stdout.rsplit_once("\n---\n")?;
        serde_json::from_str(tail).ok()
    }
}

fn with_json(mut text: String, value: serde_json::Value) -> String {
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str("---\n");
    text.push_str(&serde_json::to_string_pretty(&value).expect("json values serialize"));
    text.push('\n');
    text
}

fn scenario_error(path: &Path, e: &ScenarioError) -> String {
    let mut s = format!("error: {}: {e}\n", path.display());
    if let ScenarioError::Model(violations) = e {
        for v in violations {
            let _ = writeln!(s, "  {v}");
        }
    }
    s
}

/// Loads and validates a scenario; exit 1 lists every violation.
pub fn cmd_validate(scenario: &Path) -> Outcome {
    match load_scenario(scenario) {
        Ok(sc) => {
            let mut text = format!("ok: {} ({} units, {} flows)\n", sc.name, sc.units.len(), sc.dfg.flows.len());
            for w in &sc.warnings {
                let _ = writeln!(text, "warning: {w}");
            }
            let cycles: Vec<Vec<u32>> =
                sc.dfg.detect_cycles().into_iter().map(|c| c.into_iter().map(|u| u.0).collect()).collect();
            Outcome::ok(with_json(
                text,
                json!({
                    "valid": true,
                    "name": sc.name,
                    "units": sc.units.len(),
                    "flows": sc.dfg.flows.len(),
                    "cycles": cycles,
                    "warnings": sc.warnings,
                    "violations": [],
                }),
            ))
        }
        Err(e) => {
            let violations: Vec<String> = match &e {
                ScenarioError::Model(v) => v.iter().map(ToString::to_string).collect(),
                other => vec![other.to_string()],
            };
            let text = scenario_error(scenario, &e);
            Outcome {
                code: EXIT_INVALID,
                stdout: with_json(text.clone(), json!({ "valid": false, "violations": violations })),
                stderr: text,
            }
        }
    }
}

/// Simulates a scenario, writing the event log and timing report to the
/// given files or to stdout. Exit 2 if some unit never recovers.
pub fn cmd_run(scenario: &Path, log_out: Option<&Path>, report_out: Option<&Path>) -> Outcome {
    let sc = match load_scenario(scenario) {
        Ok(sc) => sc,
        Err(e) => return Outcome::fail(EXIT_INVALID, scenario_error(scenario, &e)),
    };
    let log = run(&sc);
    let report = timing_report(&log);
    let write = |p: &Path, text: &str| std::fs::write(p, text).map_err(|e| format!("error: {}: {e}\n", p.display()));
    let mut stdout = String::new();
    match log_out {
        Some(p) => {
            if let Err(e) = write(p, &log.to_text()) {
                return Outcome::fail(EXIT_RUNTIME, e);
            }
        }
        None => stdout.push_str(&log.to_text()),
    }
    // The report's JSON always follows the last `---` on stdout.
    match report_out {
        Some(p) => {
            if let Err(e) = write(p, &report.render()) {
                return Outcome::fail(EXIT_RUNTIME, e);
            }
            stdout = with_json(stdout, serde_json::to_value(&report).expect("report serializes"));
        }
        None => stdout.push_str(&report.render()),
    }
    let code = if log.timed_out() { EXIT_RUNTIME } else { EXIT_OK };
    let stderr = if log.timed_out() {
        let stuck: Vec<String> = log.stuck.iter().map(ToString::to_string).collect();
        format!("timeout: units {} not recovered by {} ms\n", stuck.join(", "), sc.duration)
    } else {
        String::new()
    };
    Outcome { code, stdout, stderr }
}

/// Evaluates a policy over a trace in windows of `window_ms` every
/// `stride_ms`, votes 2-of-3 over the window scores, exit 3 if flagged.
pub fn cmd_rules(policy: &Path, trace: &Path, window_ms: u64, stride_ms: u64) -> Outcome {
    if window_ms == 0 || stride_ms == 0 {
        return Outcome::fail(EXIT_INVALID, "error: --window and --stride must be positive\n".into());
    }
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| format!("error: {}: {e}\n", p.display()));
    let (policy_text, trace_text) = match (read(policy), read(trace)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::fail(EXIT_INVALID, e),
    };
    let policy = match parse_policy(&policy_text) {
        Ok(p) => p,
        Err(e) => return Outcome::fail(EXIT_INVALID, format!("error: {}: {e}\n", policy.display())),
    };
    let seq = match parse_trace(&trace_text) {
        Ok(s) => s,
        Err(e) => return Outcome::fail(EXIT_INVALID, format!("error: {}: {e}\n", trace.display())),
    };
    let events = seq.events();
    let last = events.last().map_or(0, |e| e.t_ms);
    let mut voter = Voter::new(3, 2);
    let mut text = String::new();
    let mut scores = Vec::new();
    let mut flagged_at = None;
    let mut start = 0;
    while start <= last {
        let lo = events.partition_point(|e| e.t_ms < start);
        let hi = events.partition_point(|e| e.t_ms < start + window_ms);
        let score = evaluate_policy(&policy, &events[lo..hi], start);
        let voted = voter.push(score);
        if voted && flagged_at.is_none() {
            flagged_at = Some(start);
        }
        let _ = writeln!(text, "window {start:>6} score={score} voted={}", u8::from(voted));
        scores.push(score);
        start += stride_ms;
    }
    let _ = writeln!(
        text,
        "{}",
        match flagged_at {
            Some(t) => format!("FLAGGED: injected traffic detected at window {t}"),
            None => "clean".to_string(),
        }
    );
    let out = with_json(
        text,
        json!({ "flagged": flagged_at.is_some(), "first_flagged_window": flagged_at, "scores": scores }),
    );
    Outcome { code: if flagged_at.is_some() { EXIT_MISMATCH } else { EXIT_OK }, stdout: out, stderr: String::new() }
}

/// Simulates a scenario and compares its total recovery time with `expect`
/// (default: the composition of calibrated per-class costs). The tolerance
/// defaults to one beacon period.
pub fn cmd_check(scenario: &Path, expect: Option<f64>, tol: Option<f64>) -> Outcome {
    let sc = match load_scenario(scenario) {
        Ok(sc) => sc,
        Err(e) => return Outcome::fail(EXIT_INVALID, scenario_error(scenario, &e)),
    };
    let expected = expect.map_or_else(|| compose_expected(&sc), Millis::from_f64);
    let tolerance = tol.map_or(sc.beacon_period, Millis::from_f64);
    let log = run(&sc);
    let report = timing_report(&log);
    let Some(total) = report.total_recovery else {
        let msg = if log.timed_out() { "run timed out before recovery" } else { "no failure was detected" };
        let text = with_json(
            format!("{msg}\n"),
            json!({ "pass": false, "expected": expected.as_f64(), "tolerance": tolerance.as_f64(), "measured": null }),
        );
        return Outcome { code: EXIT_RUNTIME, stdout: text, stderr: format!("error: {msg}\n") };
    };
    let diff = total.abs_diff(expected);
    let pass = diff <= tolerance;
    let involved: Vec<u32> = involved(&sc).into_iter().map(|u| u.0).collect();
    let text = format!(
        "{}: total recovery {total} ms, expected {expected} ms ± {tolerance} (off by {diff})\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let out = with_json(
        text,
        json!({
            "pass": pass,
            "measured": total.as_f64(),
            "expected": expected.as_f64(),
            "tolerance": tolerance.as_f64(),
            "difference": diff.as_f64(),
            "involved": involved,
            "failed_handling_avg": report.failed_handling_avg.map(Millis::as_f64),
            "affected_clearing_avg": report.affected_clearing_avg.map(Millis::as_f64),
        }),
    );
    Outcome { code: if pass { EXIT_OK } else { EXIT_MISMATCH }, stdout: out, stderr: String::new() }
}
