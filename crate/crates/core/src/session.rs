//! Ordered log of interactive delineation events.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Click,
    Suggest,
    Accept,
    Edit,
    Delete,
    Zoom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub t_ms: u64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: Value,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("event time {t_ms} ms precedes the previous event at {last_ms} ms")]
pub struct OutOfOrder {
    pub t_ms: u64,
    pub last_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<SessionEvent>", try_from = "Vec<SessionEvent>")]
pub struct SessionLog {
    events: Vec<SessionEvent>,
}

impl TryFrom<Vec<SessionEvent>> for SessionLog {
    type Error = OutOfOrder;

    fn try_from(events: Vec<SessionEvent>) -> Result<Self, OutOfOrder> {
        Self::from_events(events)
    }
}

impl From<SessionLog> for Vec<SessionEvent> {
    fn from(log: SessionLog) -> Self {
        log.events
    }
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a log, rejecting decreasing timestamps.
    pub fn from_events(events: Vec<SessionEvent>) -> Result<Self, OutOfOrder> {
        let mut log = Self::new();
        for e in events {
            log.push(e)?;
        }
        Ok(log)
    }

    pub fn push(&mut self, event: SessionEvent) -> Result<(), OutOfOrder> {
        if let Some(last) = self.events.last() {
            if event.t_ms < last.t_ms {
                return Err(OutOfOrder {
                    t_ms: event.t_ms,
                    last_ms: last.t_ms,
                });
            }
        }
        self.events.push(event);
        Ok(())
    }

    /// Appends with the timestamp clamped to the last event's, keeping the
    /// log ordered even if the caller's clock stepped back.
    pub fn record(&mut self, t_ms: u64, kind: EventKind, payload: Value) {
        let t_ms = self.events.last().map_or(t_ms, |l| t_ms.max(l.t_ms));
        self.events.push(SessionEvent { t_ms, kind, payload });
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rejects_time_travel() {
        let mut log = SessionLog::new();
        log.push(SessionEvent { t_ms: 5, kind: EventKind::Click, payload: Value::Null }).unwrap();
        let err = log.push(SessionEvent { t_ms: 4, kind: EventKind::Click, payload: Value::Null });
        assert_eq!(err, Err(OutOfOrder { t_ms: 4, last_ms: 5 }));
        log.record(1, EventKind::Zoom, json!({"level": 2}));
        assert_eq!(log.events()[1].t_ms, 5);
    }

    #[test]
    fn json_shape() {
        let mut log = SessionLog::new();
        log.record(0, EventKind::Accept, json!({"boundary_id": 1}));
        let text = serde_json::to_string(&log).unwrap();
        assert_eq!(text, r#"[{"t_ms":0,"kind":"accept","payload":{"boundary_id":1}}]"#);
        let back: SessionLog = serde_json::from_str(&text).unwrap();
        assert_eq!(back, log);
        let bad = r#"[{"t_ms":3,"kind":"click"},{"t_ms":2,"kind":"click"}]"#;
        assert!(serde_json::from_str::<SessionLog>(bad).is_err());
    }
}
