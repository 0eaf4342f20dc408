use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    #[serde(rename = "same-close")]
    SameClose,
    #[serde(rename = "same-far")]
    SameFar,
    #[serde(rename = "different-close")]
    DifferentClose,
    #[serde(rename = "different-far")]
    DifferentFar,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::SameClose,
        Condition::SameFar,
        Condition::DifferentClose,
        Condition::DifferentFar,
    ];

    pub fn label(self) -> Label {
        match self {
            Condition::SameClose | Condition::SameFar => Label::Same,
            Condition::DifferentClose | Condition::DifferentFar => Label::Different,
        }
    }

    pub fn is_close(self) -> bool {
        matches!(self, Condition::SameClose | Condition::DifferentClose)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::SameClose => "same-close",
            Condition::SameFar => "same-far",
            Condition::DifferentClose => "different-close",
            Condition::DifferentFar => "different-far",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Same,
    Different,
}

impl Label {
    pub fn is_same(self) -> bool {
        self == Label::Same
    }
}

/// One two-dot trial. Pixel coordinates are `(x, y)` with the origin at the
/// top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub trial_id: String,
    pub image_id: String,
    pub center_px: (u32, u32),
    pub peripheral_px: (u32, u32),
    pub condition: Condition,
    pub label: Label,
    pub center_object_id: i64,
    pub peripheral_object_id: i64,
}

impl TrialSpec {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.condition.label() != self.label {
            return Err((
                "label",
                format!("label {:?} disagrees with condition {}", self.label, self.condition),
            ));
        }
        Ok(())
    }

    /// Checks both dots against an image of `width × height` pixels.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<()> {
        for (field, (x, y)) in [("center_px", self.center_px), ("peripheral_px", self.peripheral_px)] {
            if x >= width || y >= height {
                return Err(Error::Record {
                    line: 0,
                    trial_id: Some(self.trial_id.clone()),
                    field: field.into(),
                    reason: format!("({x}, {y}) outside {width}x{height} image"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehavioralRecord {
    pub trial_id: String,
    pub subject_id: String,
    pub rt_ms: f64,
    pub correct: bool,
}

/// One row of the per-image object index written next to exported masks.
/// `mask` is a path relative to the index file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectIndexEntry {
    pub image_id: String,
    pub object_id: i64,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

struct Line {
    number: usize,
    object: Map<String, Value>,
    trial_id: Option<String>,
}

impl Line {
    fn err(&self, field: &str, reason: impl Into<String>) -> Error {
        Error::Record {
            line: self.number,
            trial_id: self.trial_id.clone(),
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn field<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let value = self.object.get(name).ok_or_else(|| self.err(name, "missing"))?;
        T::deserialize(value).map_err(|e| self.err(name, e.to_string()))
    }
}

fn json_lines<R: BufRead>(source: R) -> impl Iterator<Item = Result<Line>> {
    source.lines().enumerate().filter_map(|(i, line)| {
        let number = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Stream { offset: 0, source: e })),
        };
        if line.trim().is_empty() {
            return None;
        }
        let parsed = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(object)) => object,
            Ok(_) => {
                return Some(Err(Error::Record {
                    line: number,
                    trial_id: None,
                    field: "<record>".into(),
                    reason: "not a JSON object".into(),
                }))
            }
            Err(e) => {
                return Some(Err(Error::Record {
                    line: number,
                    trial_id: None,
                    field: "<record>".into(),
                    reason: e.to_string(),
                }))
            }
        };
        let trial_id = parsed.get("trial_id").and_then(Value::as_str).map(str::to_owned);
        Some(Ok(Line {
            number,
            object: parsed,
            trial_id,
        }))
    })
}

/// Parses a line-delimited JSON trial manifest, preserving order.
pub fn read_trial_manifest<R: BufRead>(source: R) -> Result<Vec<TrialSpec>> {
    json_lines(source)
        .map(|line| {
            let line = line?;
            let trial = TrialSpec {
                trial_id: line.field("trial_id")?,
                image_id: line.field("image_id")?,
                center_px: line.field("center_px")?,
                peripheral_px: line.field("peripheral_px")?,
                condition: line.field("condition")?,
                label: line.field("label")?,
                center_object_id: line.field("center_object_id")?,
                peripheral_object_id: line.field("peripheral_object_id")?,
            };
            trial.validate().map_err(|(field, reason)| line.err(field, reason))?;
            Ok(trial)
        })
        .collect()
}

pub fn read_behavioral_records<R: BufRead>(source: R) -> Result<Vec<BehavioralRecord>> {
    json_lines(source)
        .map(|line| {
            let line = line?;
            let record = BehavioralRecord {
                trial_id: line.field("trial_id")?,
                subject_id: line.field("subject_id")?,
                rt_ms: line.field("rt_ms")?,
                correct: line.field("correct")?,
            };
            if !(record.rt_ms.is_finite() && record.rt_ms > 0.0) {
                return Err(line.err("rt_ms", format!("must be positive, got {}", record.rt_ms)));
            }
            Ok(record)
        })
        .collect()
}

pub fn read_object_index<R: BufRead>(source: R) -> Result<Vec<ObjectIndexEntry>> {
    json_lines(source)
        .map(|line| {
            let line = line?;
            ObjectIndexEntry::deserialize(Value::Object(line.object.clone()))
                .map_err(|e| line.err("<record>", e.to_string()))
        })
        .collect()
}

fn write_lines<W: Write, T: Serialize>(mut sink: W, items: &[T]) -> Result<()> {
    let mut offset = 0u64;
    for item in items {
        let mut line = serde_json::to_vec(item).expect("record types serialize");
        line.push(b'\n');
        sink.write_all(&line)
            .map_err(|source| Error::Stream { offset, source })?;
        offset += line.len() as u64;
    }
    Ok(())
}

pub fn write_trial_manifest<W: Write>(sink: W, trials: &[TrialSpec]) -> Result<()> {
    write_lines(sink, trials)
}

pub fn write_behavioral_records<W: Write>(sink: W, records: &[BehavioralRecord]) -> Result<()> {
    write_lines(sink, records)
}

pub fn write_object_index<W: Write>(sink: W, entries: &[ObjectIndexEntry]) -> Result<()> {
    write_lines(sink, entries)
}
