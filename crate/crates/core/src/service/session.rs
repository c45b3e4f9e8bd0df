use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::transcript::{Highlight, HighlightOrigin, HighlightStatus, Segment, TranscriptRecord};

use super::{ServiceError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Generated,
    InReview,
    Finalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHighlight {
    /// `"{segment}-{perspective}"`.
    pub id: String,
    /// Rank of this candidate among the segment's distinct candidates.
    pub perspective: usize,
    #[serde(flatten)]
    pub highlight: Highlight,
    pub original_text: String,
    pub accepted: bool,
    pub discarded: bool,
}

impl SessionHighlight {
    pub fn new(highlight: Highlight, perspective: usize) -> Self {
        Self {
            id: format!("{}-{}", highlight.segment_index, perspective),
            perspective,
            original_text: highlight.text.clone(),
            highlight,
            accepted: false,
            discarded: false,
        }
    }

    /// REJECT highlights stay hidden until the user accepts or edits them.
    pub fn hidden_by_default(&self) -> bool {
        self.highlight.status == HighlightStatus::Reject
            && !self.accepted
            && self.highlight.origin == HighlightOrigin::Model
    }

    pub fn visible(&self) -> bool {
        !self.discarded && !self.hidden_by_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EditAction {
    Accept,
    Edit,
    Discard,
    Restore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditEvent {
    pub highlight_id: String,
    pub action: EditAction,
    /// Required for EDIT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_text: Option<String>,
    #[serde(default = "default_actor")]
    pub actor: String,
    pub timestamp: DateTime<Utc>,
}

fn default_actor() -> String {
    "anonymous".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySession {
    pub session_id: String,
    pub transcript_id: String,
    pub transcript: TranscriptRecord,
    pub segments: Vec<Segment>,
    pub highlights: Vec<SessionHighlight>,
    pub edit_log: Vec<EditEvent>,
    pub state: SessionState,
    /// Bumped by the store on every successful write.
    pub version: u64,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalized_at: Option<DateTime<Utc>>,
    /// Highlights as generated, before any edit.
    pub generated: Vec<SessionHighlight>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn state_err(code: &'static str, msg: impl Into<String>) -> ServiceError {
    ServiceError::new(code, Stage::Session, msg)
}

fn apply(highlights: &mut [SessionHighlight], event: &EditEvent) -> Result<(), ServiceError> {
    let h = highlights
        .iter_mut()
        .find(|h| h.id == event.highlight_id)
        .ok_or_else(|| state_err("UNKNOWN_HIGHLIGHT", format!("no highlight {:?}", event.highlight_id)))?;
    match event.action {
        EditAction::Accept => h.accepted = true,
        EditAction::Edit => {
            let text = event.new_text.as_deref().map(str::trim).filter(|t| !t.is_empty());
            let text = text.ok_or_else(|| state_err("INVALID_EVENT", "EDIT needs non-empty new_text"))?;
            h.highlight.text = text.to_string();
            h.highlight.origin = HighlightOrigin::UserEdited;
        }
        EditAction::Discard => h.discarded = true,
        EditAction::Restore => h.discarded = false,
    }
    Ok(())
}

impl SummarySession {
    /// Appends `event` and applies it. The session is unchanged on error.
    pub fn record_edit(&mut self, event: EditEvent) -> Result<(), ServiceError> {
        if self.state == SessionState::Finalized {
            return Err(state_err("SESSION_FINALIZED", format!("session {} is finalized", self.session_id)));
        }
        apply(&mut self.highlights, &event)?;
        self.edit_log.push(event);
        self.state = SessionState::InReview;
        Ok(())
    }

    pub fn finalize(&mut self, at: DateTime<Utc>) -> Result<(), ServiceError> {
        if self.state == SessionState::Finalized {
            return Err(state_err("SESSION_FINALIZED", format!("session {} is already finalized", self.session_id)));
        }
        self.state = SessionState::Finalized;
        self.finalized_at = Some(at);
        Ok(())
    }

    /// Rebuilds highlights and state from the generated snapshot and the log.
    pub fn replay(&self) -> Result<(Vec<SessionHighlight>, SessionState), ServiceError> {
        let mut highlights = self.generated.clone();
        for e in &self.edit_log {
            apply(&mut highlights, e)?;
        }
        let state = if self.finalized_at.is_some() {
            SessionState::Finalized
        } else if self.edit_log.is_empty() {
            SessionState::Generated
        } else {
            SessionState::InReview
        };
        Ok((highlights, state))
    }

    pub fn replay_matches(&self) -> bool {
        self.replay().is_ok_and(|(h, s)| h == self.highlights && s == self.state)
    }

    /// Highlights for a list response; hidden ones only on request.
    pub fn listed(&self, include_hidden: bool) -> Vec<&SessionHighlight> {
        self.highlights.iter().filter(|h| include_hidden || h.visible()).collect()
    }

    pub fn export_document(&self) -> ExportDocument {
        let highlights: Vec<ExportedHighlight> = self
            .highlights
            .iter()
            .filter(|h| h.visible())
            .map(|h| ExportedHighlight {
                id: h.id.clone(),
                segment_index: h.highlight.segment_index,
                text: h.highlight.text.clone(),
                status: h.highlight.status,
                origin: h.highlight.origin,
            })
            .collect();
        if highlights.is_empty() {
            tracing::warn!(session = %self.session_id, "export has no highlights");
        }
        ExportDocument {
            session_id: self.session_id.clone(),
            transcript_id: self.transcript_id.clone(),
            finalized_at: self.finalized_at,
            highlights,
        }
    }

    pub fn export(&self, format: ExportFormat) -> String {
        let doc = self.export_document();
        match format {
            ExportFormat::Json => serde_json::to_string_pretty(&doc).expect("export serializes"),
            ExportFormat::Markdown => doc.to_markdown(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Markdown,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown export format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedHighlight {
    pub id: String,
    pub segment_index: usize,
    pub text: String,
    pub status: HighlightStatus,
    pub origin: HighlightOrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportDocument {
    pub session_id: String,
    pub transcript_id: String,
    pub finalized_at: Option<DateTime<Utc>>,
    pub highlights: Vec<ExportedHighlight>,
}

impl ExportDocument {
    pub fn from_json(raw: &str) -> Result<Self, ServiceError> {
        serde_json::from_str(raw).map_err(|e| ServiceError::new("INVALID_REQUEST", Stage::Request, e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# Call summary: {}\n\n", self.transcript_id);
        for h in &self.highlights {
            out.push_str(&format!("- {}\n", h.text));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hl(seg: usize, status: HighlightStatus, text: &str) -> SessionHighlight {
        SessionHighlight::new(
            Highlight {
                segment_index: seg,
                text: text.into(),
                perplexity: if status == HighlightStatus::Reject { f64::INFINITY } else { 10.0 },
                status,
                origin: HighlightOrigin::Model,
            },
            0,
        )
    }

    pub(crate) fn session() -> SummarySession {
        let highlights = vec![
            hl(0, HighlightStatus::Accept, "Customer called about billing."),
            hl(1, HighlightStatus::Review, "Agent explain refund."),
            hl(2, HighlightStatus::Accept, "Customer agreed."),
            hl(3, HighlightStatus::Reject, "the the the"),
        ];
        SummarySession {
            session_id: "s1".into(),
            transcript_id: "t1".into(),
            transcript: TranscriptRecord { id: "t1".into(), turns: vec![], metadata: Default::default() },
            segments: vec![],
            generated: highlights.clone(),
            highlights,
            edit_log: vec![],
            state: SessionState::Generated,
            version: 0,
            created_at: DateTime::UNIX_EPOCH,
            finalized_at: None,
            warnings: vec![],
        }
    }

    fn ev(id: &str, action: EditAction, text: Option<&str>) -> EditEvent {
        EditEvent {
            highlight_id: id.into(),
            action,
            new_text: text.map(String::from),
            actor: "tester".into(),
            timestamp: DateTime::UNIX_EPOCH,
        }
    }

    #[test]
    fn edit_replaces_text_and_marks_origin() {
        let mut s = session();
        s.record_edit(ev("1-0", EditAction::Edit, Some("Customer asked for refund."))).unwrap();
        let h = &s.highlights[1];
        assert_eq!(h.highlight.text, "Customer asked for refund.");
        assert_eq!(h.highlight.origin, HighlightOrigin::UserEdited);
        assert_eq!(h.original_text, "Agent explain refund.");
        assert_eq!(s.state, SessionState::InReview);
        assert!(s.replay_matches());
    }

    #[test]
    fn discard_then_restore() {
        let mut s = session();
        s.record_edit(ev("0-0", EditAction::Discard, None)).unwrap();
        assert!(!s.highlights[0].visible());
        s.record_edit(ev("0-0", EditAction::Restore, None)).unwrap();
        assert!(s.highlights[0].visible());
        assert_eq!(s.edit_log.len(), 2);
    }

    #[test]
    fn invalid_events_leave_session_untouched() {
        let mut s = session();
        let before = s.clone();
        assert_eq!(s.record_edit(ev("9-9", EditAction::Accept, None)).unwrap_err().code, "UNKNOWN_HIGHLIGHT");
        assert_eq!(s.record_edit(ev("0-0", EditAction::Edit, Some("  "))).unwrap_err().code, "INVALID_EVENT");
        assert_eq!(s, before);
    }

    #[test]
    fn finalized_sessions_are_immutable() {
        let mut s = session();
        s.finalize(DateTime::UNIX_EPOCH).unwrap();
        assert_eq!(s.record_edit(ev("0-0", EditAction::Accept, None)).unwrap_err().code, "SESSION_FINALIZED");
        assert!(s.finalize(DateTime::UNIX_EPOCH).is_err());
        assert!(s.replay_matches());
    }

    #[test]
    fn export_filters_and_orders() {
        let mut s = session();
        s.record_edit(ev("1-0", EditAction::Discard, None)).unwrap();
        s.finalize(DateTime::UNIX_EPOCH).unwrap();
        let doc = s.export_document();
        let segs: Vec<usize> = doc.highlights.iter().map(|h| h.segment_index).collect();
        assert_eq!(segs, vec![0, 2]);
        let back = ExportDocument::from_json(&s.export(ExportFormat::Json)).unwrap();
        assert_eq!(back, doc);
        let md = s.export(ExportFormat::Markdown);
        assert!(md.contains("- Customer called about billing.\n- Customer agreed.\n"));
    }

    #[test]
    fn rejected_highlights_hidden_unless_requested_or_accepted() {
        let mut s = session();
        assert_eq!(s.listed(false).len(), 3);
        assert_eq!(s.listed(true).len(), 4);
        s.record_edit(ev("3-0", EditAction::Accept, None)).unwrap();
        assert_eq!(s.listed(false).len(), 4);
    }

    #[test]
    fn all_discarded_exports_empty_list() {
        let mut s = session();
        for id in ["0-0", "1-0", "2-0"] {
            s.record_edit(ev(id, EditAction::Discard, None)).unwrap();
        }
        assert!(s.export_document().highlights.is_empty());
    }

    #[test]
    fn json_round_trip_keeps_infinite_perplexity() {
        let s = session();
        let text = serde_json::to_string(&s).unwrap();
        let back: SummarySession = serde_json::from_str(&text).unwrap();
        assert_eq!(back.highlights[3].highlight.perplexity, f64::INFINITY);
        assert_eq!(back, s);
    }
}
