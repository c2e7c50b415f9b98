//! Text trace format: one event per line.
//!
//! ```text
//! # comment
//! a <slot> <size>
//! f <slot>
//! r <slot> <size>
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Slot = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    Alloc { slot: Slot, size: usize },
    Free { slot: Slot },
    Realloc { slot: Slot, size: usize },
}

impl TraceEvent {
    pub fn slot(&self) -> Slot {
        match *self {
            TraceEvent::Alloc { slot, .. } | TraceEvent::Free { slot } | TraceEvent::Realloc { slot, .. } => slot,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Semantics { line: usize, message: String },
    #[error("reading trace: {0}")]
    Io(String),
}

/// Checks slot discipline: allocations target dead slots, frees and
/// reallocations target live ones.
#[derive(Default)]
pub struct SlotTracker {
    live: HashSet<Slot>,
}

impl SlotTracker {
    pub fn check(&mut self, event: &TraceEvent) -> Result<(), String> {
        match *event {
            TraceEvent::Alloc { slot, .. } => {
                if !self.live.insert(slot) {
                    return Err(format!("alloc into live slot {slot}"));
                }
            }
            TraceEvent::Free { slot } => {
                if !self.live.remove(&slot) {
                    return Err(format!("free of dead slot {slot}"));
                }
            }
            TraceEvent::Realloc { slot, .. } => {
                if !self.live.contains(&slot) {
                    return Err(format!("realloc of dead slot {slot}"));
                }
            }
        }
        Ok(())
    }

    pub fn live_slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.live.iter().copied()
    }
}

fn parse_line(text: &str) -> Result<Option<TraceEvent>, String> {
    let text = text.split('#').next().unwrap_or("").trim();
    if text.is_empty() {
        return Ok(None);
    }
    let mut parts = text.split_whitespace();
    let op = parts.next().unwrap_or("");
    let mut num = |what: &str| -> Result<u64, String> {
        let tok = parts.next().ok_or_else(|| format!("missing {what}"))?;
        tok.parse::<u64>().map_err(|_| format!("invalid {what} {tok:?}"))
    };
    let event = match op {
        "a" => TraceEvent::Alloc { slot: num("slot")?, size: num("size")? as usize },
        "f" => TraceEvent::Free { slot: num("slot")? },
        "r" => TraceEvent::Realloc { slot: num("slot")?, size: num("size")? as usize },
        other => return Err(format!("unknown op {other:?}")),
    };
    if let Some(extra) = parts.next() {
        return Err(format!("unexpected token {extra:?}"));
    }
    Ok(Some(event))
}

/// Parses and validates a whole trace.
pub fn parse_trace(reader: impl BufRead) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    let mut slots = SlotTracker::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
        let Some(event) = parse_line(&line).map_err(|message| TraceError::Parse { line: line_no, message })? else {
            continue;
        };
        slots.check(&event).map_err(|message| TraceError::Semantics { line: line_no, message })?;
        events.push(event);
    }
    Ok(events)
}

pub fn parse_trace_str(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(text.as_bytes())
}

pub fn serialize_trace(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 12);
    for e in events {
        let _ = match *e {
            TraceEvent::Alloc { slot, size } => writeln!(out, "a {slot} {size}"),
            TraceEvent::Free { slot } => writeln!(out, "f {slot}"),
            TraceEvent::Realloc { slot, size } => writeln!(out, "r {slot} {size}"),
        };
    }
    out
}
