//! CSV export with a fixed header per record type.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use super::coding::{CodedTurn, TurnRef};
use super::engagement::EngagementReport;
use super::episode::EpisodeSummary;
use super::rubric::ReportScore;
use super::EvalError;

pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn to_row(&self) -> Vec<String>;

    fn from_row(row: &[&str]) -> Result<Self, String>;
}

/// Write a header plus one row per record; returns the number of rows.
pub fn export_csv<R: CsvRecord, W: Write>(records: &[R], sink: W) -> Result<usize, EvalError> {
    let sink_err = |e: ::csv::Error| EvalError::Sink(e.to_string());
    let mut w = ::csv::Writer::from_writer(sink);
    w.write_record(R::HEADER).map_err(sink_err)?;
    for r in records {
        w.write_record(r.to_row()).map_err(sink_err)?;
    }
    w.flush().map_err(|e| EvalError::Sink(e.to_string()))?;
    Ok(records.len())
}

pub fn read_csv<R: CsvRecord, S: Read>(source: S) -> Result<Vec<R>, EvalError> {
    let mut rd = ::csv::Reader::from_reader(source);
    let header = rd.headers().map_err(|e| EvalError::Parse(e.to_string()))?;
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(EvalError::Parse(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    rd.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| EvalError::Parse(e.to_string()))?;
            let fields: Vec<&str> = rec.iter().collect();
            R::from_row(&fields).map_err(|e| EvalError::Parse(format!("row {}: {e}", i + 1)))
        })
        .collect()
}

fn field<T: FromStr>(row: &[&str], i: usize, name: &str) -> Result<T, String> {
    row.get(i)
        .ok_or_else(|| format!("missing column {name}"))?
        .parse()
        .map_err(|_| format!("bad value for {name}: {:?}", row[i]))
}

/// `{2:2, 23:1}` ↔ `"2:2;23:1"`.
pub fn encode_freq(map: &BTreeMap<u8, u32>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn decode_freq(text: &str) -> Result<BTreeMap<u8, u32>, String> {
    if text.is_empty() {
        return Ok(BTreeMap::new());
    }
    text.split(';')
        .map(|pair| {
            let (k, v) = pair
                .split_once(':')
                .ok_or_else(|| format!("bad pair {pair:?}"))?;
            Ok((
                k.parse().map_err(|_| format!("bad key {k:?}"))?,
                v.parse().map_err(|_| format!("bad count {v:?}"))?,
            ))
        })
        .collect()
}

impl CsvRecord for EngagementReport {
    const HEADER: &'static [&'static str] = &[
        "session_id",
        "duration_min",
        "rounds",
        "student_word_count",
        "state_freq",
        "strategy_freq",
    ];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.session_id.clone(),
            self.duration_min.to_string(),
            self.rounds.to_string(),
            self.student_word_count.to_string(),
            encode_freq(&self.state_freq),
            encode_freq(&self.strategy_freq),
        ]
    }

    fn from_row(row: &[&str]) -> Result<Self, String> {
        Ok(EngagementReport {
            session_id: field(row, 0, "session_id")?,
            duration_min: field(row, 1, "duration_min")?,
            rounds: field(row, 2, "rounds")?,
            student_word_count: field(row, 3, "student_word_count")?,
            state_freq: decode_freq(row.get(4).copied().unwrap_or_default())?,
            strategy_freq: decode_freq(row.get(5).copied().unwrap_or_default())?,
        })
    }
}

impl CsvRecord for CodedTurn {
    const HEADER: &'static [&'static str] =
        &["session_id", "seq", "speech_type", "cognitive_level"];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.turn_ref.session_id.clone(),
            self.turn_ref.seq.to_string(),
            self.speech_type.to_string(),
            self.cognitive_level.to_string(),
        ]
    }

    fn from_row(row: &[&str]) -> Result<Self, String> {
        Ok(CodedTurn {
            turn_ref: TurnRef {
                session_id: field(row, 0, "session_id")?,
                seq: field(row, 1, "seq")?,
            },
            speech_type: field(row, 2, "speech_type")?,
            cognitive_level: field(row, 3, "cognitive_level")?,
        })
    }
}

impl CsvRecord for ReportScore {
    const HEADER: &'static [&'static str] = &[
        "quality",
        "elaboration",
        "originality",
        "human_like",
        "total",
        "clamped",
    ];

    fn to_row(&self) -> Vec<String> {
        let mut row: Vec<String> = self.dimensions().iter().map(u8::to_string).collect();
        row.push(self.total.to_string());
        row.push(self.clamped.join(";"));
        row
    }

    fn from_row(row: &[&str]) -> Result<Self, String> {
        let clamped = row.get(5).copied().unwrap_or_default();
        Ok(ReportScore {
            quality: field(row, 0, "quality")?,
            elaboration: field(row, 1, "elaboration")?,
            originality: field(row, 2, "originality")?,
            human_like: field(row, 3, "human_like")?,
            total: field(row, 4, "total")?,
            clamped: if clamped.is_empty() {
                Vec::new()
            } else {
                clamped.split(';').map(String::from).collect()
            },
        })
    }
}

impl CsvRecord for EpisodeSummary {
    const HEADER: &'static [&'static str] = &[
        "persona",
        "session_id",
        "rounds",
        "stages_reached",
        "state_accuracy",
        "mapping_compliance",
        "nudges",
    ];

    fn to_row(&self) -> Vec<String> {
        vec![
            self.persona.clone(),
            self.session_id.clone(),
            self.rounds.to_string(),
            self.stages_reached.to_string(),
            self.state_accuracy.to_string(),
            self.mapping_compliance.to_string(),
            self.nudges.to_string(),
        ]
    }

    fn from_row(row: &[&str]) -> Result<Self, String> {
        Ok(EpisodeSummary {
            persona: field(row, 0, "persona")?,
            session_id: field(row, 1, "session_id")?,
            rounds: field(row, 2, "rounds")?,
            stages_reached: field(row, 3, "stages_reached")?,
            state_accuracy: field(row, 4, "state_accuracy")?,
            mapping_compliance: field(row, 5, "mapping_compliance")?,
            nudges: field(row, 6, "nudges")?,
        })
    }
}
