//! Event-sequence data model and JSON-Lines I/O.
//!
//! An [`EventSequence`] is an ordered list of (time, mark) pairs on an
//! observation window `[t_start, t_end]`; a [`Dataset`] is a bag of
//! sequences sharing a mark alphabet of size `K`. Both are immutable after
//! construction: every constructor validates and rejects rather than
//! repairs, so downstream numerical code never re-checks.
//!
//! The interchange format is JSON Lines: a one-line header object
//! `{"num_marks": K}` followed by one object per sequence,
//! `{"times": [...], "marks": [...], "t_end": ...}` (optionally
//! `"t_start"`, which defaults to 0). All numbers are IEEE-754 doubles;
//! the writer emits 17 significant digits so values round-trip bit-exactly.

use serde::Deserialize;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum EventError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One realization of a marked point process on `[t_start, t_end]`.
/// Fields are private; accessors return slices. Construction is the only
/// validation point.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    times: Vec<f64>,
    marks: Vec<u32>,
    t_start: f64,
    t_end: f64,
}

impl EventSequence {
    /// Validates: equal lengths, finite strictly-increasing times inside
    /// the window, `t_end > t_start`. Mark-range checks against `K` happen
    /// at [`Dataset`] construction, where `K` is known.
    pub fn new(times: Vec<f64>, marks: Vec<u32>, t_start: f64, t_end: f64) -> Result<Self, EventError> {
        let fail = |msg: String| Err(EventError::Invalid(msg));
        if times.len() != marks.len() {
            return fail(format!(
                "times/marks length mismatch ({} vs {})",
                times.len(),
                marks.len()
            ));
        }
        if !t_start.is_finite() || !t_end.is_finite() || t_end <= t_start {
            return fail(format!("bad window [{t_start}, {t_end}]"));
        }
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() {
                return fail(format!("times[{i}] is not finite"));
            }
            if i > 0 && t <= times[i - 1] {
                return fail(format!(
                    "times not strictly increasing at index {i} ({} then {t})",
                    times[i - 1]
                ));
            }
        }
        if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
            if first < t_start {
                return fail(format!("times[0] = {first} precedes t_start = {t_start}"));
            }
            if last > t_end {
                return fail(format!("last time {last} exceeds t_end = {t_end}"));
            }
        }
        Ok(EventSequence { times, marks, t_start, t_end })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[u32] {
        &self.marks
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Inter-arrival gaps including the leading gap from `t_start` to the
    /// first event; length equals `len()`.
    pub fn gaps(&self) -> Vec<f64> {
        let mut prev = self.t_start;
        self.times
            .iter()
            .map(|&t| {
                let dt = t - prev;
                prev = t;
                dt
            })
            .collect()
    }
}

/// Per-mark counts of events with time ≤ t; the marked counting process.
pub fn counting_process(seq: &EventSequence, num_marks: u32, t: f64) -> Result<Vec<u64>, EventError> {
    if t < seq.t_start() || t > seq.t_end() {
        return Err(EventError::Invalid(format!(
            "t = {t} outside window [{}, {}]",
            seq.t_start(),
            seq.t_end()
        )));
    }
    let mut counts = vec![0u64; num_marks as usize];
    for (&ti, &k) in seq.times().iter().zip(seq.marks()) {
        if ti > t {
            break;
        }
        counts[k as usize] += 1;
    }
    Ok(counts)
}

/// A named set of sequences over a shared mark alphabet of size `num_marks`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<EventSequence>,
    num_marks: u32,
    name: String,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, num_marks: u32, name: impl Into<String>) -> Result<Self, EventError> {
        if num_marks == 0 {
            return Err(EventError::Invalid("num_marks must be ≥ 1".into()));
        }
        for (i, seq) in sequences.iter().enumerate() {
            if let Some(&m) = seq.marks().iter().max() {
                if m >= num_marks {
                    return Err(EventError::Invalid(format!(
                        "sequence {i}: mark {m} out of range for num_marks = {num_marks}"
                    )));
                }
            }
        }
        Ok(Dataset { sequences, num_marks, name: name.into() })
    }

    pub fn sequences(&self) -> &[EventSequence] {
        &self.sequences
    }

    pub fn num_marks(&self) -> u32 {
        self.num_marks
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    /// Mean inter-arrival time across the dataset, counting the leading
    /// gap from each window start; used to scale evaluation grids.
    pub fn mean_inter_arrival(&self) -> f64 {
        let mut total_gap = 0.0;
        let mut n = 0usize;
        for s in &self.sequences {
            total_gap += s.gaps().iter().sum::<f64>();
            n += s.len();
        }
        if n == 0 {
            // No events anywhere: fall back to the mean window length.
            let mean_window: f64 = self
                .sequences
                .iter()
                .map(|s| s.t_end() - s.t_start())
                .sum::<f64>()
                / self.sequences.len().max(1) as f64;
            return mean_window.max(1.0);
        }
        total_gap / n as f64
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    num_marks: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    times: Vec<f64>,
    marks: Vec<u32>,
    t_end: f64,
    #[serde(default)]
    t_start: Option<f64>,
}

/// Loads a JSONL dataset. Line numbers are 1-based in errors; the dataset
/// name is the file stem. Malformed input is rejected, never repaired.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset, EventError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();

    let header_text = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(EventError::Parse { line: 1, msg: "empty file, expected header object".into() })
        }
    };
    let header: HeaderLine = serde_json::from_str(&header_text)
        .map_err(|e| EventError::Parse { line: 1, msg: format!("bad header: {e}") })?;
    if header.num_marks == 0 {
        return Err(EventError::Validation { line: 1, msg: "num_marks must be ≥ 1".into() });
    }

    let mut sequences = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2; // header consumed line 1
        let text = line?;
        if text.trim().is_empty() {
            return Err(EventError::Parse { line: line_no, msg: "blank line".into() });
        }
        let raw: SequenceLine = serde_json::from_str(&text)
            .map_err(|e| EventError::Parse { line: line_no, msg: e.to_string() })?;
        let t_start = raw.t_start.unwrap_or(0.0);
        let seq = EventSequence::new(raw.times, raw.marks, t_start, raw.t_end)
            .map_err(|e| EventError::Validation { line: line_no, msg: e.to_string() })?;
        if let Some(&m) = seq.marks().iter().max() {
            if m >= header.num_marks {
                return Err(EventError::Validation {
                    line: line_no,
                    msg: format!("mark {m} out of range for num_marks = {}", header.num_marks),
                });
            }
        }
        sequences.push(seq);
    }

    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    Dataset::new(sequences, header.num_marks, name)
}

/// Formats a double with 17 significant digits, enough for any f64 to
/// survive a decimal round trip bit-exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_sequence_line(seq: &EventSequence) -> String {
    let mut line = String::with_capacity(32 * seq.len() + 64);
    line.push_str("{\"times\":[");
    for (i, t) in seq.times().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(&fmt_f64(*t));
    }
    line.push_str("],\"marks\":[");
    for (i, m) in seq.marks().iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{m}");
    }
    let _ = write!(line, "],\"t_end\":{}", fmt_f64(seq.t_end()));
    if seq.t_start() != 0.0 {
        let _ = write!(line, ",\"t_start\":{}", fmt_f64(seq.t_start()));
    }
    line.push('}');
    line
}

/// Writes header + one line per sequence. `load_jsonl(save_jsonl(d)) == d`
/// bit-exactly (the name field follows the file stem, not the dataset).
pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), EventError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{{\"num_marks\":{}}}", dataset.num_marks())?;
    for seq in dataset.sequences() {
        writeln!(out, "{}", fmt_sequence_line(seq))?;
    }
    out.flush()?;
    Ok(())
}
