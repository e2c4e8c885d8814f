use std::fmt;

use thiserror::Error;

use super::ast::{CanEvent, EventSequence};
use super::parser::parse_frame_id;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

/// Parses `t_ms frame_id` lines; blank lines and `#` comments are skipped.
/// The result is sorted by time.
pub fn parse_trace(text: &str) -> Result<EventSequence, TraceError> {
    let mut events = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| TraceError { line: n + 1, message };
        let mut parts = line.split_whitespace();
        let (Some(t), Some(id), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(err(format!("expected `t_ms frame_id`, found `{line}`")));
        };
        let t_ms = t.parse().map_err(|_| err(format!("bad timestamp `{t}`")))?;
        let frame_id = parse_frame_id(id).ok_or_else(|| err(format!("bad frame id `{id}`")))?;
        events.push(CanEvent { frame_id, t_ms });
    }
    Ok(EventSequence::new(events))
}

/// Renders events one per line with hexadecimal frame ids.
pub struct TraceText<'a>(pub &'a [CanEvent]);

impl fmt::Display for TraceText<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in self.0 {
            writeln!(f, "{} {:#x}", e.t_ms, e.frame_id)?;
        }
        Ok(())
    }
}
