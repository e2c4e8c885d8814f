use super::ast::{CanEvent, Policy, Rule};

/// Number of `frame_id` events with `t ∈ [start_ms, start_ms + h_ms)`.
pub fn count_in_window(seq: &[CanEvent], frame_id: u32, start_ms: u64, h_ms: u64) -> u64 {
    let end = start_ms.saturating_add(h_ms);
    let lo = seq.partition_point(|e| e.t_ms < start_ms);
    let hi = seq.partition_point(|e| e.t_ms < end);
    seq[lo..hi].iter().filter(|e| e.frame_id == frame_id).count() as u64
}

/// First `frame_id` occurrence at or after `window_start_ms`, else the window start.
pub fn anchor(seq: &[CanEvent], frame_id: u32, window_start_ms: u64) -> u64 {
    let lo = seq.partition_point(|e| e.t_ms < window_start_ms);
    seq[lo..].iter().find(|e| e.frame_id == frame_id).map_or(window_start_ms, |e| e.t_ms)
}

/// Scores 1 when the rule's predicate is violated, 0 when it holds.
pub fn evaluate_rule(rule: &Rule, seq: &[CanEvent], window_start_ms: u64) -> u8 {
    let counts: Vec<(&str, i64)> = rule
        .bindings
        .iter()
        .map(|b| {
            let start = anchor(seq, b.frame_id, window_start_ms);
            (b.var.as_str(), count_in_window(seq, b.frame_id, start, b.h_ms) as i64)
        })
        .collect();
    let lookup = |v: &str| counts.iter().find(|(n, _)| *n == v).map_or(0, |(_, c)| *c);
    let value = rule.predicate.expr.eval(&lookup);
    u8::from(!rule.predicate.rel.holds(value, rule.predicate.threshold))
}

/// Scores 1 when any rule scores 1.
pub fn evaluate_policy(policy: &Policy, seq: &[CanEvent], window_start_ms: u64) -> u8 {
    u8::from(policy.rules.iter().any(|r| evaluate_rule(r, seq, window_start_ms) == 1))
}
