//! Sliding-window rule language over CAN frame events.
//!
//! ```text
//! policy    := rule { "&&" rule }
//! rule      := "(" binding { "." binding } "." predicate ")"
//! binding   := VAR ":" "<" FRAMEID "," INT ">"
//! predicate := expr REL INT
//! expr      := term { ("+" | "-") term }
//! term      := VAR | "(" expr ")"
//! REL       := "<" | "<=" | ">" | ">="
//! ```
//!
//! A binding counts occurrences of its frame id in a window of `INT` ms
//! anchored at the first occurrence at or after the evaluation window start.
//! A rule scores 1 when its predicate is violated.

mod ast;
mod eval;
mod parser;
mod trace;

pub use ast::{Binding, CanEvent, EventSequence, Expr, Policy, Predicate, Rel, Rule, Sign, Term};
pub use eval::{anchor, count_in_window, evaluate_policy, evaluate_rule};
pub use parser::{parse_frame_id, parse_policy, ParseError, ParseErrorKind};
pub use trace::{parse_trace, TraceError, TraceText};
