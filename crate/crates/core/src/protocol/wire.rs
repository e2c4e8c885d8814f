//! One-line textual encoding of cooperation and plan messages.
//!
//! ```text
//! seq=4 timestamp_ms=300 type=unit source_id=3 sick_bit=1 failure_queue=[4]
//! seq=0 timestamp_ms=100 type=status_req source_id=2 sick_bit=1 failure_queue=[] target_id=1
//! seq=9 timestamp_ms=400 type=plan source_id=5 opcode=launch target="fusion-b1" successor="fusion-b1" launch_file_path="/x.launch" address="10.0.5.12" kind="container" args=[]
//! ```
//!
//! Fields appear in exactly this order; strings and lists are JSON.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Beacon, Message, StatusRequest};
use crate::mape::{PlanMessage, PlanPayload, PseudoAction};
use crate::model::UnitId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Beacon(Beacon),
    StatusRequest(StatusRequest),
    Plan(PlanMessage),
}

impl From<Message> for Frame {
    fn from(m: Message) -> Self {
        match m {
            Message::Beacon(b) => Frame::Beacon(b),
            Message::StatusRequest(r) => Frame::StatusRequest(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("expected field `{expected}` at byte {at}")]
    MissingField { expected: &'static str, at: usize },
    #[error("field `{field}`: {message}")]
    BadValue { field: &'static str, message: String },
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("trailing input at byte {0}")]
    Trailing(usize),
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn id_list(ids: &[UnitId]) -> String {
    let parts: Vec<String> = ids.iter().map(|i| i.0.to_string()).collect();
    format!("[{}]", parts.join(","))
}

pub fn encode(frame: &Frame) -> String {
    match frame {
        Frame::Beacon(b) => format!(
            "seq={} timestamp_ms={} type=unit source_id={} sick_bit={} failure_queue={}",
            b.seq,
            b.timestamp_ms,
            b.source_id,
            u8::from(b.sick_bit),
            id_list(&b.failure_queue)
        ),
        Frame::StatusRequest(r) => format!(
            "seq={} timestamp_ms={} type=status_req source_id={} sick_bit={} failure_queue={} target_id={}",
            r.seq,
            r.timestamp_ms,
            r.source_id,
            u8::from(r.sick_bit),
            id_list(&r.failure_queue),
            r.target_id
        ),
        Frame::Plan(p) => {
            let a = &p.action;
            let mut s = format!(
                "seq={} timestamp_ms={} type=plan source_id={} opcode={}",
                p.seq, p.timestamp_ms, p.source_id, a.opcode
            );
            let args = serde_json::to_string(&a.payload.args).expect("string lists always serialize");
            let _ = write!(
                s,
                " target={} successor={} launch_file_path={} address={} kind={} args={}",
                json_str(&a.target),
                json_str(&a.successor_name),
                json_str(&a.launch_file_path),
                json_str(&a.payload.address),
                json_str(&a.payload.partition_kind),
                args
            );
            s
        }
    }
}

pub fn encode_message(m: &Message) -> String {
    encode(&Frame::from(m.clone()))
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    /// Reads `key=` followed by a bare token, a JSON string or a JSON list.
    fn field(&mut self, key: &'static str) -> Result<&'a str, WireError> {
        if self.pos > 0 {
            if !self.src[self.pos..].starts_with(' ') {
                return Err(WireError::MissingField { expected: key, at: self.pos });
            }
            self.pos += 1;
        }
        let rest = &self.src[self.pos..];
        let Some(value_start) = rest.strip_prefix(key).and_then(|r| r.strip_prefix('=')) else {
            return Err(WireError::MissingField { expected: key, at: self.pos });
        };
        self.pos += key.len() + 1;
        let len = match value_start.as_bytes().first() {
            Some(b'"') | Some(b'[') => {
                let mut stream = serde_json::Deserializer::from_str(value_start).into_iter::<serde_json::Value>();
                match stream.next() {
                    Some(Ok(_)) => stream.byte_offset(),
                    Some(Err(e)) => return Err(WireError::BadValue { field: key, message: e.to_string() }),
                    None => 0,
                }
            }
            _ => value_start.find(' ').unwrap_or(value_start.len()),
        };
        let v = &value_start[..len];
        self.pos += len;
        Ok(v)
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos == self.src.len() {
            Ok(())
        } else {
            Err(WireError::Trailing(self.pos))
        }
    }
}

fn num<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T, WireError> {
    // Only canonical decimal forms so that decode ∘ encode is the identity.
    let canonical = !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()) && (v == "0" || !v.starts_with('0'));
    if !canonical {
        return Err(WireError::BadValue { field, message: format!("`{v}` is not a non-negative integer") });
    }
    v.parse().map_err(|_| WireError::BadValue { field, message: format!("`{v}` out of range") })
}

fn bit(field: &'static str, v: &str) -> Result<bool, WireError> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(WireError::BadValue { field, message: format!("`{other}` is not 0 or 1") }),
    }
}

fn queue(field: &'static str, v: &str) -> Result<Vec<UnitId>, WireError> {
    let ids: Vec<u32> = serde_json::from_str(v).map_err(|e| WireError::BadValue { field, message: e.to_string() })?;
    if v != id_list(&ids.iter().copied().map(UnitId).collect::<Vec<_>>()) {
        return Err(WireError::BadValue { field, message: format!("`{v}` is not a compact id list") });
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(WireError::BadValue { field, message: "ids must be strictly ascending".into() });
    }
    Ok(ids.into_iter().map(UnitId).collect())
}

fn string(field: &'static str, v: &str) -> Result<String, WireError> {
    let s: String = serde_json::from_str(v).map_err(|e| WireError::BadValue { field, message: e.to_string() })?;
    if json_str(&s) != v {
        return Err(WireError::BadValue { field, message: "non-canonical string escape".into() });
    }
    Ok(s)
}

pub fn decode(line: &str) -> Result<Frame, WireError> {
    let mut c = Cursor { src: line, pos: 0 };
    let seq = num("seq", c.field("seq")?)?;
    let timestamp_ms = num("timestamp_ms", c.field("timestamp_ms")?)?;
    let ty = c.field("type")?;
    let source_id = UnitId(num("source_id", c.field("source_id")?)?);
    let frame = match ty {
        "unit" | "status_req" => {
            let sick_bit = bit("sick_bit", c.field("sick_bit")?)?;
            let failure_queue = queue("failure_queue", c.field("failure_queue")?)?;
            if ty == "unit" {
                Frame::Beacon(Beacon { seq, timestamp_ms, source_id, sick_bit, failure_queue })
            } else {
                let target_id = UnitId(num("target_id", c.field("target_id")?)?);
                Frame::StatusRequest(StatusRequest { seq, timestamp_ms, source_id, target_id, sick_bit, failure_queue })
            }
        }
        "plan" => {
            let opcode =
                c.field("opcode")?.parse().map_err(|message| WireError::BadValue { field: "opcode", message })?;
            let target = string("target", c.field("target")?)?;
            let successor_name = string("successor", c.field("successor")?)?;
            let launch_file_path = string("launch_file_path", c.field("launch_file_path")?)?;
            let address = string("address", c.field("address")?)?;
            let partition_kind = string("kind", c.field("kind")?)?;
            let args_raw = c.field("args")?;
            let args: Vec<String> = serde_json::from_str(args_raw)
                .map_err(|e| WireError::BadValue { field: "args", message: e.to_string() })?;
            if serde_json::to_string(&args).ok().as_deref() != Some(args_raw) {
                return Err(WireError::BadValue { field: "args", message: "non-canonical list".into() });
            }
            if opcode == crate::mape::Opcode::Launch && launch_file_path.is_empty() {
                return Err(WireError::BadValue { field: "launch_file_path", message: "launch needs a path".into() });
            }
            Frame::Plan(PlanMessage {
                seq,
                timestamp_ms,
                source_id,
                action: PseudoAction {
                    opcode,
                    target,
                    successor_name,
                    launch_file_path,
                    payload: PlanPayload { address, partition_kind, args },
                },
            })
        }
        other => return Err(WireError::UnknownType(other.to_string())),
    };
    c.finish()?;
    Ok(frame)
}
