use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SimTime;
use crate::crypto::Digest;

/// One line of the JSONL event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    /// Simulated seconds.
    pub t: f64,
    pub kind: String,
    pub sender: Option<String>,
    pub recipient: Option<String>,
    pub payload_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sent_at: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default)]
pub struct EventLog {
    enabled: bool,
    events: Vec<LogEvent>,
}

impl EventLog {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            events: Vec::new(),
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, ev: LogEvent) {
        if self.enabled {
            self.events.push(ev);
        }
    }

    pub fn message(
        &mut self,
        t: SimTime,
        kind: &str,
        sender: impl ToString,
        recipient: impl ToString,
        digest: Digest,
        sent_at: SimTime,
    ) {
        if !self.enabled {
            return;
        }
        self.events.push(LogEvent {
            t: t.as_secs_f64(),
            kind: kind.to_string(),
            sender: Some(sender.to_string()),
            recipient: Some(recipient.to_string()),
            payload_digest: Some(digest.to_hex()),
            sent_at: Some(sent_at.as_secs_f64()),
            detail: None,
        });
    }

    /// A structured record with no sender/recipient, e.g. an epoch report.
    pub fn record<T: Serialize>(&mut self, t: SimTime, kind: &str, detail: &T) {
        if !self.enabled {
            return;
        }
        let detail = serde_json::to_value(detail).expect("log detail serializes");
        self.events.push(LogEvent {
            t: t.as_secs_f64(),
            kind: kind.to_string(),
            sender: None,
            recipient: None,
            payload_digest: None,
            sent_at: None,
            detail: Some(detail),
        });
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ev in &self.events {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn parse_jsonl(s: &str) -> serde_json::Result<Vec<LogEvent>> {
        s.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip() {
        let mut log = EventLog::new(true);
        log.message(
            SimTime::from_secs(2),
            "prepare",
            "m0",
            "m1",
            Digest::of(b"x"),
            SimTime::from_secs(1),
        );
        log.record(
            SimTime::from_secs(3),
            "reconfig",
            &serde_json::json!({"epoch": 1}),
        );
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let parsed = EventLog::parse_jsonl(&text).unwrap();
        assert_eq!(parsed, log.events());
        assert!(text
            .lines()
            .next()
            .unwrap()
            .starts_with(r#"{"t":2.0,"kind":"prepare""#));
    }

    #[test]
    fn disabled_log_stays_empty() {
        let mut log = EventLog::new(false);
        log.record(SimTime::ZERO, "x", &1);
        assert!(log.is_empty());
    }
}
