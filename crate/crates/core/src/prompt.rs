//! Four-block classification prompts: role, task with target classes,
//! demonstrations, input.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LabelScheme;
use crate::error::{Error, Result};
use crate::selection::{Chosen, FewShotPool, SelectionResult};

pub const DEFAULT_ROLE: &str = "You are a software requirements analyst.";
pub const OUTPUT_FORMAT: &str = "Answer with exactly one class name from the list.";
pub const EXAMPLE_MARKER: &str = "[Example]";
pub const INPUT_MARKER: &str = "[Input]";

/// Prompt text with `{name}` placeholders (`{{` and `}}` for literal braces).
///
/// Placeholders: `{classes}` and `{format}` in the task block, `{text}` and
/// `{label}` in the example block, `{query}` in the input block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub version: String,
    pub system_role: String,
    pub task_description: String,
    pub examples_header: String,
    pub example_block: String,
    pub input_block: String,
}

impl PromptTemplate {
    /// The stock template for a scheme; the version string names the scheme.
    pub fn default_for(scheme: &LabelScheme) -> Self {
        let version = match scheme.name() {
            "promise-binary" => "promise-binary/v1".to_string(),
            "promise-12" => "promise-12/v1".to_string(),
            "promise-relabeled-9" => "promise-relabeled-9/v1".to_string(),
            other => format!("generic/v1+{other}"),
        };
        PromptTemplate {
            version,
            system_role: DEFAULT_ROLE.into(),
            task_description: "Classify the software requirement shown under [Input] into one of \
                               the following target classes:\n{classes}\n{format}"
                .into(),
            examples_header: "Labeled examples:".into(),
            example_block: format!("{EXAMPLE_MARKER}\nRequirement: {{text}}\nClass: {{label}}"),
            input_block: format!("{INPUT_MARKER}\nRequirement: {{query}}\nClass:"),
        }
    }

    /// Parses the plain-text template format: sections introduced by lines
    /// `[[version]]`, `[[system]]`, `[[task]]`, `[[examples_header]]`,
    /// `[[example]]` and `[[input]]`. Surrounding blank lines are trimmed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: HashMap<String, Vec<&str>> = HashMap::new();
        let mut current: Option<String> = None;
        for line in text.lines() {
            let t = line.trim();
            if t.starts_with("[[") && t.ends_with("]]") && t.len() > 4 {
                let name = t[2..t.len() - 2].trim().to_string();
                if sections.contains_key(&name) {
                    return Err(Error::Prompt(format!("template section [[{name}]] appears twice")));
                }
                sections.insert(name.clone(), Vec::new());
                current = Some(name);
            } else if let Some(name) = &current {
                sections.get_mut(name).expect("section exists").push(line);
            } else if !t.is_empty() {
                return Err(Error::Prompt("template text before the first [[section]]".into()));
            }
        }
        let mut take = |name: &str| -> Result<String> {
            let lines = sections
                .remove(name)
                .ok_or_else(|| Error::Prompt(format!("template lacks section [[{name}]]")))?;
            Ok(lines.join("\n").trim_matches('\n').trim_end().to_string())
        };
        let t = PromptTemplate {
            version: take("version")?,
            system_role: take("system")?,
            task_description: take("task")?,
            examples_header: take("examples_header")?,
            example_block: take("example")?,
            input_block: take("input")?,
        };
        if let Some(extra) = sections.keys().next() {
            return Err(Error::Prompt(format!("unknown template section [[{extra}]]")));
        }
        if t.version.is_empty() {
            return Err(Error::Prompt("template version is empty".into()));
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        format!(
            "[[version]]\n{}\n\n[[system]]\n{}\n\n[[task]]\n{}\n\n[[examples_header]]\n{}\n\n[[example]]\n{}\n\n[[input]]\n{}\n",
            self.version,
            self.system_role,
            self.task_description,
            self.examples_header,
            self.example_block,
            self.input_block
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Fills `{name}` placeholders in one pass; substituted values are not
/// rescanned.
pub fn fill(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if matches!(chars.peek(), Some((_, '{'))) => {
                chars.next();
                out.push('{');
            }
            '}' if matches!(chars.peek(), Some((_, '}'))) => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let rest = &template[i + 1..];
                let end = rest
                    .find('}')
                    .ok_or_else(|| Error::Prompt(format!("unterminated placeholder at byte {i}")))?;
                let name = &rest[..end];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::Prompt(format!("unresolved placeholder {{{name}}}")))?;
                out.push_str(value);
                for _ in 0..name.chars().count() + 1 {
                    chars.next();
                }
            }
            '}' => return Err(Error::Prompt(format!("stray '}}' at byte {i}"))),
            _ => out.push(c),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "policy", content = "seed")]
pub enum OrderingPolicy {
    /// Least similar first, most similar adjacent to the input.
    #[default]
    Ascending,
    Descending,
    /// Order of the candidates in the pool.
    PoolOrder,
    SeededShuffle(u64),
}

impl fmt::Display for OrderingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderingPolicy::Ascending => f.write_str("ascending"),
            OrderingPolicy::Descending => f.write_str("descending"),
            OrderingPolicy::PoolOrder => f.write_str("pool-order"),
            OrderingPolicy::SeededShuffle(s) => write!(f, "shuffle:{s}"),
        }
    }
}

impl FromStr for OrderingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascending" => Ok(OrderingPolicy::Ascending),
            "descending" => Ok(OrderingPolicy::Descending),
            "pool-order" | "pool_order" => Ok(OrderingPolicy::PoolOrder),
            _ => match s.strip_prefix("shuffle:") {
                Some(seed) => seed
                    .parse()
                    .map(OrderingPolicy::SeededShuffle)
                    .map_err(|_| Error::Config(format!("bad shuffle seed in {s:?}"))),
                None => Err(Error::Config(format!(
                    "unknown ordering {s:?} (ascending, descending, pool-order, shuffle:<seed>)"
                ))),
            },
        }
    }
}

fn order_examples(chosen: &[Chosen], pool: &FewShotPool, policy: OrderingPolicy) -> Vec<Chosen> {
    let mut out = chosen.to_vec();
    let sim = |c: &Chosen| c.similarity.unwrap_or(f64::NEG_INFINITY);
    match policy {
        OrderingPolicy::Ascending => out.sort_by(|a, b| sim(a).total_cmp(&sim(b))),
        OrderingPolicy::Descending => out.sort_by(|a, b| sim(b).total_cmp(&sim(a))),
        OrderingPolicy::PoolOrder => {
            let pos: HashMap<u64, usize> = pool
                .candidates
                .iter()
                .enumerate()
                .map(|(i, c)| (c.record_id, i))
                .collect();
            out.sort_by_key(|c| pos.get(&c.record_id).copied().unwrap_or(usize::MAX));
        }
        OrderingPolicy::SeededShuffle(seed) => out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub system_message: String,
    pub user_message: String,
    pub example_provenance: Vec<u64>,
    pub shot_count: usize,
    pub template_version: String,
    pub query_record_id: Option<u64>,
    /// Hex SHA-256 over template version, both messages, provenance and query id.
    pub content_hash: String,
}

impl PromptSpec {
    fn compute_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.template_version.as_bytes());
        h.update([0]);
        h.update(self.system_message.as_bytes());
        h.update([0]);
        h.update(self.user_message.as_bytes());
        h.update([0]);
        for id in &self.example_provenance {
            h.update(id.to_le_bytes());
        }
        h.update([0xff]);
        if let Some(q) = self.query_record_id {
            h.update(q.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn char_count(&self) -> usize {
        self.system_message.chars().count() + self.user_message.chars().count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("prompt serializes")
    }
}

/// Renders the target-class list, one `- NAME (description)` line per class.
pub fn render_class_list(scheme: &LabelScheme) -> String {
    scheme
        .labels()
        .iter()
        .map(|d| match &d.description {
            Some(desc) if !desc.is_empty() => format!("- {} ({desc})", d.name),
            _ => format!("- {}", d.name),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn render_prompt(
    template: &PromptTemplate,
    scheme: &LabelScheme,
    selection: &SelectionResult,
    pool: &FewShotPool,
    query_text: &str,
    ordering: OrderingPolicy,
) -> Result<PromptSpec> {
    let classes = render_class_list(scheme);
    let task = fill(
        &template.task_description,
        &[("classes", &classes), ("format", OUTPUT_FORMAT)],
    )?;
    let system = fill(&template.system_role, &[])?;

    let ordered = order_examples(&selection.chosen, pool, ordering);
    let mut blocks = Vec::with_capacity(ordered.len());
    for c in &ordered {
        let rec = pool
            .get(c.record_id)
            .ok_or_else(|| Error::Prompt(format!("selected record {} is not in the pool", c.record_id)))?;
        if !scheme.contains(rec.label) {
            return Err(Error::Prompt(format!(
                "record {} has a label outside scheme {:?}",
                rec.record_id,
                scheme.name()
            )));
        }
        blocks.push(fill(
            &template.example_block,
            &[("text", &rec.text), ("label", scheme.name_of(rec.label))],
        )?);
    }
    let input = fill(&template.input_block, &[("query", query_text)])?;

    let mut user = task;
    if !blocks.is_empty() {
        user.push_str("\n\n");
        user.push_str(&fill(&template.examples_header, &[])?);
        for b in &blocks {
            user.push_str("\n\n");
            user.push_str(b);
        }
    }
    user.push_str("\n\n");
    user.push_str(&input);

    let mut spec = PromptSpec {
        system_message: system,
        user_message: user,
        example_provenance: ordered.iter().map(|c| c.record_id).collect(),
        shot_count: ordered.len(),
        template_version: template.version.clone(),
        query_record_id: selection.query_record_id,
        content_hash: String::new(),
    };
    spec.content_hash = spec.compute_hash();
    Ok(spec)
}

/// Upper-bound token estimate: `ceil(chars / 3)`.
pub fn estimate_tokens(prompt: &PromptSpec) -> usize {
    prompt.char_count().div_ceil(3)
}
