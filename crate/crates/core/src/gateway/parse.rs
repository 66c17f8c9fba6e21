use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_label_text, LabelId, LabelScheme};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "labels")]
pub enum ParseOutcome {
    Label(LabelId),
    MultiLabel(Vec<LabelId>),
    Unparseable,
}

/// Where a surface form matched, in token positions of the normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchSpan {
    pub label: LabelId,
    pub token_start: usize,
    pub token_end: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub outcome: ParseOutcome,
    pub spans: Vec<MatchSpan>,
}

impl ParsedLabel {
    pub fn unparseable() -> Self {
        ParsedLabel {
            outcome: ParseOutcome::Unparseable,
            spans: Vec::new(),
        }
    }

    pub fn labels(&self) -> Vec<LabelId> {
        match &self.outcome {
            ParseOutcome::Label(l) => vec![*l],
            ParseOutcome::MultiLabel(ls) => ls.clone(),
            ParseOutcome::Unparseable => vec![],
        }
    }
}

/// Maps a raw completion onto the scheme.
///
/// The text is lowercased and split on anything non-alphanumeric, which also
/// strips punctuation and markdown. If the whole answer equals a canonical
/// name or alias it is that label. Otherwise names and aliases are matched
/// as whole-word token sequences, scanning left to right and preferring the
/// longest form at each position. Single-character forms (codes such as
/// "A" or "O") are only honoured as the whole answer, since they collide
/// with ordinary words. Distinct labels are reported in order of first
/// appearance.
pub fn parse_label(completion: &str, scheme: &LabelScheme) -> ParsedLabel {
    let normalized = normalize_label_text(completion);
    if normalized.is_empty() {
        return ParsedLabel::unparseable();
    }
    let tokens: Vec<&str> = normalized.split(' ').collect();
    if let Some(label) = scheme.resolve(&normalized) {
        return ParsedLabel {
            outcome: ParseOutcome::Label(label),
            spans: vec![MatchSpan {
                label,
                token_start: 0,
                token_end: tokens.len(),
                surface: normalized.clone(),
            }],
        };
    }

    let mut forms: Vec<(Vec<&str>, LabelId, &str)> = scheme
        .surface_forms()
        .filter(|(s, _)| s.chars().count() > 1)
        .map(|(s, l)| (s.split(' ').collect(), l, s))
        .collect();
    // longest first; ties resolved by text so the scan is deterministic
    forms.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.2.cmp(b.2)));

    let mut spans = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let hit = forms
            .iter()
            .find(|(seq, _, _)| tokens.len() - i >= seq.len() && tokens[i..i + seq.len()] == seq[..]);
        match hit {
            Some((seq, label, surface)) => {
                spans.push(MatchSpan {
                    label: *label,
                    token_start: i,
                    token_end: i + seq.len(),
                    surface: surface.to_string(),
                });
                i += seq.len();
            }
            None => i += 1,
        }
    }

    let mut labels: Vec<LabelId> = Vec::new();
    for s in &spans {
        if !labels.contains(&s.label) {
            labels.push(s.label);
        }
    }
    let outcome = match labels.len() {
        0 => ParseOutcome::Unparseable,
        1 => ParseOutcome::Label(labels[0]),
        _ => ParseOutcome::MultiLabel(labels),
    };
    ParsedLabel { outcome, spans }
}
