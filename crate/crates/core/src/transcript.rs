//! Calls, turns, segments and highlights, plus transcript parsing.
//!
//! The canonical on-disk shape of a transcript is JSON:
//!
//! ```json
//! {"id": "call-1", "turns": [{"speaker": "agent", "text": "hi", "start": 0.0, "end": 1.2}], "metadata": {}}
//! ```
//!
//! A plain two-column text format (`Label: utterance` per line, blank lines
//! ignored) is also accepted on input.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TranscriptError {
    #[error("malformed transcript input: {0}")]
    MalformedInput(String),
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("unknown speaker label {0:?}")]
    UnknownSpeakerLabel(String),
    #[error("separator {sep:?} occurs inside turn {turn}")]
    SeparatorCollision { sep: String, turn: usize },
    #[error("separator must be non-empty")]
    EmptySeparator,
    #[error("invalid transcript: {0}")]
    Invalid(String),
}

/// Participant role. `Agent` is speaker id 0, `Customer` is 1 and further
/// participants are numbered densely from 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpeakerRole {
    Agent,
    Customer,
    Other(u8),
}

impl SpeakerRole {
    pub fn id(self) -> usize {
        match self {
            SpeakerRole::Agent => 0,
            SpeakerRole::Customer => 1,
            SpeakerRole::Other(i) => i as usize,
        }
    }

    pub fn from_id(id: usize) -> Self {
        match id {
            0 => SpeakerRole::Agent,
            1 => SpeakerRole::Customer,
            i => SpeakerRole::Other(i.min(u8::MAX as usize) as u8),
        }
    }

    pub fn label(self) -> String {
        match self {
            SpeakerRole::Agent => "agent".to_string(),
            SpeakerRole::Customer => "customer".to_string(),
            SpeakerRole::Other(i) => format!("speaker{i}"),
        }
    }
}

impl fmt::Display for SpeakerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Case-insensitive mapping from raw speaker labels to roles.
#[derive(Debug, Clone)]
pub struct SpeakerAliases {
    aliases: BTreeMap<String, SpeakerRole>,
    /// Reject labels that are not in the alias map instead of assigning
    /// them `Other` ids.
    pub strict: bool,
}

impl Default for SpeakerAliases {
    fn default() -> Self {
        let mut aliases = BTreeMap::new();
        for a in ["agent", "rep", "seller", "salesperson", "sales", "support", "representative"] {
            aliases.insert(a.to_string(), SpeakerRole::Agent);
        }
        for c in ["customer", "client", "buyer", "caller", "prospect", "user"] {
            aliases.insert(c.to_string(), SpeakerRole::Customer);
        }
        Self { aliases, strict: false }
    }
}

impl SpeakerAliases {
    pub fn strict() -> Self {
        Self { strict: true, ..Self::default() }
    }

    pub fn insert(&mut self, label: &str, role: SpeakerRole) {
        self.aliases.insert(label.trim().to_lowercase(), role);
    }

    fn lookup(&self, label: &str) -> Option<SpeakerRole> {
        self.aliases.get(&label.trim().to_lowercase()).copied()
    }
}

/// Assigns roles to raw labels in order of first appearance; unknown labels
/// get dense `Other` ids starting at 2.
struct RoleResolver<'a> {
    aliases: &'a SpeakerAliases,
    others: BTreeMap<String, SpeakerRole>,
}

impl<'a> RoleResolver<'a> {
    fn new(aliases: &'a SpeakerAliases) -> Self {
        Self { aliases, others: BTreeMap::new() }
    }

    fn resolve(&mut self, label: &str) -> Result<SpeakerRole, TranscriptError> {
        if let Some(role) = self.aliases.lookup(label) {
            return Ok(role);
        }
        if let Some(role) = parse_canonical_other(label) {
            return Ok(role);
        }
        if self.aliases.strict {
            return Err(TranscriptError::UnknownSpeakerLabel(label.to_string()));
        }
        let key = label.trim().to_lowercase();
        let next = SpeakerRole::Other((2 + self.others.len()).min(u8::MAX as usize) as u8);
        Ok(*self.others.entry(key).or_insert(next))
    }
}

/// `speakerN` is the label written for `Other(N)`; reading it back keeps the
/// JSON format lossless.
fn parse_canonical_other(label: &str) -> Option<SpeakerRole> {
    let rest = label.trim().to_lowercase();
    let n: u8 = rest.strip_prefix("speaker")?.parse().ok()?;
    (n >= 2).then_some(SpeakerRole::Other(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub index: usize,
    pub speaker: SpeakerRole,
    pub text: String,
    pub start_time: Option<f64>,
    pub end_time: Option<f64>,
}

impl Turn {
    pub fn new(index: usize, speaker: SpeakerRole, text: impl AsRef<str>) -> Self {
        Self {
            index,
            speaker,
            text: normalize_whitespace(text.as_ref()),
            start_time: None,
            end_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub id: String,
    pub turns: Vec<Turn>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl Transcript {
    /// Builds a transcript from `(role, text)` pairs, assigning indices in order.
    pub fn from_turns<S: AsRef<str>>(
        id: impl Into<String>,
        turns: impl IntoIterator<Item = (SpeakerRole, S)>,
    ) -> Result<Self, TranscriptError> {
        let turns = turns
            .into_iter()
            .enumerate()
            .map(|(i, (role, text))| Turn::new(i, role, text))
            .collect();
        let t = Transcript { id: id.into(), turns, metadata: BTreeMap::new() };
        t.validate()?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn validate(&self) -> Result<(), TranscriptError> {
        if self.turns.is_empty() {
            return Err(TranscriptError::EmptyTranscript);
        }
        for (i, turn) in self.turns.iter().enumerate() {
            if turn.index != i {
                return Err(TranscriptError::Invalid(format!(
                    "turn at position {i} has index {}",
                    turn.index
                )));
            }
            if turn.text.trim().is_empty() {
                return Err(TranscriptError::Invalid(format!("turn {i} has empty text")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TranscriptRecord::from(self)).expect("transcript serializes")
    }
}

/// Serialized form of a transcript (the canonical JSON schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    #[serde(default)]
    pub id: String,
    pub turns: Vec<TurnRecord>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub speaker: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

impl From<&Transcript> for TranscriptRecord {
    fn from(t: &Transcript) -> Self {
        TranscriptRecord {
            id: t.id.clone(),
            turns: t
                .turns
                .iter()
                .map(|turn| TurnRecord {
                    speaker: turn.speaker.label(),
                    text: turn.text.clone(),
                    start: turn.start_time,
                    end: turn.end_time,
                })
                .collect(),
            metadata: t.metadata.clone(),
        }
    }
}

impl TranscriptRecord {
    pub fn into_transcript(self, aliases: &SpeakerAliases) -> Result<Transcript, TranscriptError> {
        let mut resolver = RoleResolver::new(aliases);
        let mut turns = Vec::with_capacity(self.turns.len());
        for rec in self.turns {
            let text = normalize_whitespace(&rec.text);
            // Whitespace-only turns carry nothing to summarize.
            if text.is_empty() {
                continue;
            }
            let speaker = resolver.resolve(&rec.speaker)?;
            turns.push(Turn {
                index: turns.len(),
                speaker,
                text,
                start_time: rec.start,
                end_time: rec.end,
            });
        }
        if turns.is_empty() {
            return Err(TranscriptError::EmptyTranscript);
        }
        Ok(Transcript { id: self.id, turns, metadata: self.metadata })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TranscriptFormat {
    JsonTurns,
    TwoColumnText,
}

impl std::str::FromStr for TranscriptFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" | "json_turns" | "json-turns" => Ok(Self::JsonTurns),
            "text" | "two_column_text" | "two-column" | "txt" => Ok(Self::TwoColumnText),
            other => Err(format!("unknown transcript format {other:?}")),
        }
    }
}

/// Parses a transcript in the given format.
///
/// `JsonTurns` accepts either the full canonical object or a bare list of
/// turn records.
pub fn parse_transcript(
    raw: &[u8],
    format: TranscriptFormat,
    aliases: &SpeakerAliases,
) -> Result<Transcript, TranscriptError> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| TranscriptError::MalformedInput(format!("invalid utf-8: {e}")))?;
    match format {
        TranscriptFormat::JsonTurns => parse_json(text, aliases),
        TranscriptFormat::TwoColumnText => parse_two_column(text, aliases),
    }
}

fn parse_json(text: &str, aliases: &SpeakerAliases) -> Result<Transcript, TranscriptError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| TranscriptError::MalformedInput(e.to_string()))?;
    let record = if value.is_array() {
        let turns: Vec<TurnRecord> = serde_json::from_value(value)
            .map_err(|e| TranscriptError::MalformedInput(e.to_string()))?;
        TranscriptRecord { id: String::new(), turns, metadata: BTreeMap::new() }
    } else {
        serde_json::from_value(value).map_err(|e| TranscriptError::MalformedInput(e.to_string()))?
    };
    record.into_transcript(aliases)
}

fn parse_two_column(text: &str, aliases: &SpeakerAliases) -> Result<Transcript, TranscriptError> {
    let mut turns = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, utterance) = line.split_once(':').ok_or_else(|| {
            TranscriptError::MalformedInput(format!("line {} has no 'Label:' prefix", lineno + 1))
        })?;
        if label.trim().is_empty() {
            return Err(TranscriptError::MalformedInput(format!(
                "line {} has an empty speaker label",
                lineno + 1
            )));
        }
        turns.push(TurnRecord {
            speaker: label.trim().to_string(),
            text: utterance.to_string(),
            start: None,
            end: None,
        });
    }
    TranscriptRecord { id: String::new(), turns, metadata: BTreeMap::new() }.into_transcript(aliases)
}

/// Collapses runs of whitespace to single spaces and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Joins turn texts with ` sep ` between consecutive turns.
pub fn render_dialogue_text(t: &Transcript, sep: &str) -> Result<String, TranscriptError> {
    render_turns(&t.turns, sep)
}

pub fn render_turns(turns: &[Turn], sep: &str) -> Result<String, TranscriptError> {
    if sep.trim().is_empty() {
        return Err(TranscriptError::EmptySeparator);
    }
    if let Some(turn) = turns.iter().find(|t| t.text.contains(sep)) {
        return Err(TranscriptError::SeparatorCollision { sep: sep.to_string(), turn: turn.index });
    }
    let joiner = format!(" {sep} ");
    Ok(turns.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(&joiner))
}

/// A contiguous, inclusive span of turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSpan {
    pub first: usize,
    pub last: usize,
}

impl TurnSpan {
    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.first..=self.last
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub transcript_id: String,
    pub turn_span: TurnSpan,
    pub index: usize,
}

/// Checks that `segments` partition `0..num_turns` in order.
pub fn check_partition(segments: &[Segment], num_turns: usize) -> Result<(), TranscriptError> {
    let mut next = 0;
    for (i, seg) in segments.iter().enumerate() {
        if seg.index != i {
            return Err(TranscriptError::Invalid(format!("segment {i} has ordinal {}", seg.index)));
        }
        if seg.turn_span.first != next || seg.turn_span.last < seg.turn_span.first {
            return Err(TranscriptError::Invalid(format!(
                "segment {i} span {:?} does not continue at turn {next}",
                seg.turn_span
            )));
        }
        next = seg.turn_span.last + 1;
    }
    if next != num_turns {
        return Err(TranscriptError::Invalid(format!(
            "segments cover {next} of {num_turns} turns"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HighlightStatus {
    Accept,
    Review,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HighlightOrigin {
    Model,
    UserEdited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub segment_index: usize,
    pub text: String,
    /// `None` in JSON means +infinity.
    #[serde(with = "crate::util::serde_inf")]
    pub perplexity: f64,
    pub status: HighlightStatus,
    pub origin: HighlightOrigin,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_json_str(s: &str) -> Result<Transcript, TranscriptError> {
        parse_transcript(s.as_bytes(), TranscriptFormat::JsonTurns, &SpeakerAliases::default())
    }

    #[test]
    fn json_list_assigns_indices_in_order() {
        let t = parse_json_str(
            r#"[{"speaker":"agent","text":"hello"},{"speaker":"customer","text":"hi"},{"speaker":"Agent","text":"how can I help"}]"#,
        )
        .unwrap();
        let idx: Vec<_> = t.turns.iter().map(|t| t.index).collect();
        assert_eq!(idx, vec![0, 1, 2]);
        let roles: Vec<_> = t.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(roles, vec![SpeakerRole::Agent, SpeakerRole::Customer, SpeakerRole::Agent]);
    }

    #[test]
    fn empty_json_list_is_empty_transcript() {
        assert_eq!(parse_json_str("[]").unwrap_err(), TranscriptError::EmptyTranscript);
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(parse_json_str("{nope"), Err(TranscriptError::MalformedInput(_))));
        assert!(matches!(
            parse_transcript(b"no colon here", TranscriptFormat::TwoColumnText, &SpeakerAliases::default()),
            Err(TranscriptError::MalformedInput(_))
        ));
    }

    #[test]
    fn two_column_text() {
        let t = parse_transcript(
            b"Customer: my phone broke\n\nAgent: I can help\n",
            TranscriptFormat::TwoColumnText,
            &SpeakerAliases::default(),
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.turns[0].speaker, SpeakerRole::Customer);
        assert_eq!(t.turns[1].speaker, SpeakerRole::Agent);
        assert_eq!(t.turns[0].text, "my phone broke");
    }

    #[test]
    fn aliases_and_unknown_labels() {
        let t = parse_transcript(
            b"Rep: hi\nSELLER: hello\nBob: hey\nAlice: yo\nbob: again",
            TranscriptFormat::TwoColumnText,
            &SpeakerAliases::default(),
        )
        .unwrap();
        let roles: Vec<_> = t.turns.iter().map(|t| t.speaker).collect();
        assert_eq!(
            roles,
            vec![
                SpeakerRole::Agent,
                SpeakerRole::Agent,
                SpeakerRole::Other(2),
                SpeakerRole::Other(3),
                SpeakerRole::Other(2)
            ]
        );
        let err = parse_transcript(b"Bob: hey", TranscriptFormat::TwoColumnText, &SpeakerAliases::strict())
            .unwrap_err();
        assert_eq!(err, TranscriptError::UnknownSpeakerLabel("Bob".into()));
    }

    #[test]
    fn whitespace_is_normalized_and_blank_turns_dropped() {
        let t = parse_json_str(
            r#"{"id":"x","turns":[{"speaker":"agent","text":"  a \n b "},{"speaker":"customer","text":"   "},{"speaker":"customer","text":"c"}]}"#,
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.turns[0].text, "a b");
        assert_eq!(t.turns[1].index, 1);
    }

    #[test]
    fn render_examples() {
        let t = Transcript::from_turns("t", [(SpeakerRole::Agent, "hi"), (SpeakerRole::Customer, "hello")]).unwrap();
        assert_eq!(render_dialogue_text(&t, "<sep>").unwrap(), "hi <sep> hello");

        let one = Transcript::from_turns("t", [(SpeakerRole::Agent, "bye")]).unwrap();
        assert_eq!(render_dialogue_text(&one, "<sep>").unwrap(), "bye");

        let bad = Transcript::from_turns("t", [(SpeakerRole::Agent, "a <sep> b")]).unwrap();
        assert!(matches!(
            render_dialogue_text(&bad, "<sep>"),
            Err(TranscriptError::SeparatorCollision { turn: 0, .. })
        ));
        assert_eq!(render_dialogue_text(&t, " ").unwrap_err(), TranscriptError::EmptySeparator);
    }

    #[test]
    fn json_round_trip_with_timestamps_and_others() {
        let raw = r#"{"id":"c1","turns":[{"speaker":"agent","text":"hi","start":0.5,"end":1.0},{"speaker":"Zed","text":"yo"}],"metadata":{"k":1}}"#;
        let t = parse_json_str(raw).unwrap();
        let again = parse_json_str(&t.to_json()).unwrap();
        assert_eq!(t, again);
        assert_eq!(again.turns[1].speaker, SpeakerRole::Other(2));
    }

    #[test]
    fn partition_check() {
        let seg = |first, last, index| Segment {
            transcript_id: "t".into(),
            turn_span: TurnSpan { first, last },
            index,
        };
        assert!(check_partition(&[seg(0, 1, 0), seg(2, 4, 1)], 5).is_ok());
        assert!(check_partition(&[seg(0, 1, 0), seg(3, 4, 1)], 5).is_err());
        assert!(check_partition(&[seg(0, 1, 0)], 5).is_err());
        assert!(check_partition(&[seg(0, 2, 0), seg(2, 4, 1)], 5).is_err());
    }
}
