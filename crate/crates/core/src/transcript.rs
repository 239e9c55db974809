//! Transcript parsing and serialization over the newline-delimited event format.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{Call, Direction, Domain, Utterance};
use crate::protocol::{CallEndEvent, CallStartEvent, GoldRecord, InputEvent, UtteranceEvent};

/// Calls plus optional gold annotations, as read from a corpus file.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    /// In order of first appearance.
    pub calls: Vec<Call>,
    pub gold: BTreeMap<String, GoldRecord>,
}

#[derive(Default)]
struct CallBuilder {
    direction: Option<Direction>,
    domain: Domain,
    duration_s: Option<f64>,
    utterances: Vec<(usize, Utterance)>,
}

/// Parses a stream holding exactly one call.
pub fn parse_transcript<R: BufRead>(reader: R) -> Result<Call> {
    let corpus = parse_corpus(reader)?;
    let mut calls = corpus.calls.into_iter();
    match (calls.next(), calls.next()) {
        (Some(call), None) => Ok(call),
        (None, _) => Err(Error::Empty("transcript contains no call")),
        (Some(_), Some(second)) => Err(Error::Validation(format!(
            "transcript holds more than one call (second call id {})",
            second.call_id
        ))),
    }
}

/// Parses a stream of events for any number of calls. Events may interleave
/// across calls; utterances are re-sorted by index within each call.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut order: Vec<String> = Vec::new();
    let mut builders: HashMap<String, CallBuilder> = HashMap::new();
    let mut gold = BTreeMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: InputEvent = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let call_id = match &event {
            InputEvent::CallStart(e) => e.call_id.clone(),
            InputEvent::Utterance(e) => e.call_id.clone(),
            InputEvent::CallEnd(e) => e.call_id.clone(),
            InputEvent::Gold(g) => {
                gold.insert(g.call_id.clone(), g.clone());
                continue;
            }
            InputEvent::Stats => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "stats requests are not valid in a transcript".into(),
                })
            }
        };
        if !builders.contains_key(&call_id) {
            order.push(call_id.clone());
        }
        let b = builders.entry(call_id.clone()).or_default();
        match event {
            InputEvent::CallStart(e) => {
                b.direction = Some(e.direction);
                b.domain = e.domain;
            }
            InputEvent::Utterance(e) => {
                if let (None, Some(d)) = (b.direction, e.direction) {
                    b.direction = Some(d);
                }
                let utt = Utterance::new(e.call_id, e.index, e.side, e.start_time_s, e.text)
                    .map_err(|err| Error::Validation(format!("line {line_no}: {err}")))?;
                b.utterances.push((line_no, utt));
            }
            InputEvent::CallEnd(e) => {
                if let Some(d) = e.duration_s {
                    if !d.is_finite() || d < 0.0 {
                        return Err(Error::Validation(format!(
                            "line {line_no}: duration_s must be non-negative"
                        )));
                    }
                }
                b.duration_s = e.duration_s;
            }
            InputEvent::Gold(_) | InputEvent::Stats => unreachable!(),
        }
    }

    let mut calls = Vec::with_capacity(order.len());
    for id in order {
        let b = builders.remove(&id).expect("builder exists for every ordered id");
        calls.push(finish_call(id, b)?);
    }
    Ok(Corpus { calls, gold })
}

fn finish_call(call_id: String, mut b: CallBuilder) -> Result<Call> {
    b.utterances.sort_by_key(|(_, u)| u.index);
    for pair in b.utterances.windows(2) {
        let (_, prev) = &pair[0];
        let (line, next) = &pair[1];
        if prev.index == next.index {
            return Err(Error::DuplicateIndex {
                call_id,
                index: next.index,
            });
        }
        if next.start_time_s < prev.start_time_s {
            return Err(Error::Validation(format!(
                "line {line}: call {call_id}: start_time_s decreases between index {} and {}",
                prev.index, next.index
            )));
        }
    }
    let utterances: Vec<Utterance> = b.utterances.into_iter().map(|(_, u)| u).collect();
    let duration_s = b
        .duration_s
        .unwrap_or_else(|| utterances.last().map_or(0.0, |u| u.start_time_s));
    Ok(Call {
        call_id,
        direction: b.direction.unwrap_or_default(),
        domain: b.domain,
        duration_s,
        utterances,
    })
}

/// Event records for a call: `call_start`, one `utterance` per utterance, `call_end`.
pub fn call_events(call: &Call) -> Vec<InputEvent> {
    let mut events = Vec::with_capacity(call.utterances.len() + 2);
    events.push(InputEvent::CallStart(CallStartEvent {
        call_id: call.call_id.clone(),
        direction: call.direction,
        domain: call.domain,
    }));
    events.extend(call.utterances.iter().map(|u| {
        InputEvent::Utterance(UtteranceEvent {
            call_id: u.call_id.clone(),
            index: u.index,
            side: u.side,
            start_time_s: u.start_time_s,
            text: u.text.clone(),
            direction: None,
        })
    }));
    events.push(InputEvent::CallEnd(CallEndEvent {
        call_id: call.call_id.clone(),
        duration_s: Some(call.duration_s),
    }));
    events
}

pub fn write_call<W: Write>(call: &Call, out: &mut W) -> Result<()> {
    for event in call_events(call) {
        serde_json::to_writer(&mut *out, &event).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes calls followed by their gold records (when present).
pub fn write_corpus<W: Write>(corpus: &Corpus, out: &mut W) -> Result<()> {
    for call in &corpus.calls {
        write_call(call, out)?;
        if let Some(g) = corpus.gold.get(&call.call_id) {
            serde_json::to_writer(&mut *out, &InputEvent::Gold(g.clone()))
                .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
