//! Versioned classification prompt: a structured document rendered into a
//! two-part chat prompt (system instructions, user contribution).
//!
//! The system text is laid out as task description, flag definitions,
//! constraint rules, output instruction and worked examples, in that order.
//! The baseline prompt ships as `data/prompt_spec.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Contribution;
use crate::taxonomy::{validate_flag_set, FlagGroup, FlagId};

/// Output fields the model must produce.
pub const REQUIRED_OUTPUT_FIELDS: [&str; 2] = ["flags", "rationale"];

const DEFAULT_SPEC: &str = include_str!("../data/prompt_spec.json");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid prompt spec: {}", join_defects(.0))]
    InvalidSpec(Vec<SpecDefect>),
    #[error("cannot read prompt spec {path}: {message}")]
    Load { path: String, message: String },
}

fn join_defects(defects: &[SpecDefect]) -> String {
    defects.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagDefinition {
    pub flag: FlagId,
    pub name: String,
    pub definition: String,
    #[serde(default)]
    pub criteria: Vec<String>,
    #[serde(default)]
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    /// F11 may not be combined with any other flag.
    NeutralExclusive,
    /// Positive and negative flags may not be combined.
    GroupExclusion,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintRule {
    pub kind: RuleKind,
    pub text: String,
}

/// A worked example: contribution text, step-by-step reasoning and the
/// expected JSON answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub input: String,
    #[serde(default)]
    pub reasoning: Option<String>,
    pub flags: Vec<FlagId>,
    #[serde(default)]
    pub rationale: BTreeMap<FlagId, String>,
}

impl Exemplar {
    /// The expected model answer, as rendered in the prompt.
    pub fn expected_output(&self) -> String {
        serde_json::json!({
            "flags": self.flags,
            "rationale": self.rationale,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub version: String,
    pub task_description: String,
    pub flag_definitions: Vec<FlagDefinition>,
    pub constraint_rules: Vec<ConstraintRule>,
    pub output_instruction: String,
    pub exemplars: Vec<Exemplar>,
}

/// The baseline prompt shipped with the crate.
pub fn default_spec() -> PromptSpec {
    serde_json::from_str(DEFAULT_SPEC).expect("bundled prompt spec is valid JSON")
}

impl PromptSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let load_err = |message: String| PromptError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| load_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn definition(&self, flag: FlagId) -> Option<&FlagDefinition> {
        self.flag_definitions.iter().find(|d| d.flag == flag)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "defect", rename_all = "snake_case")]
pub enum SpecDefect {
    BadVersion { version: String },
    EmptySection { section: String },
    FlagUndefined { flag: FlagId },
    FlagDefinedTwice { flag: FlagId },
    InactiveFlagDefined { flag: FlagId },
    NeutralRuleMissing,
    GroupRuleMissing,
    OutputFieldMissing { field: String },
    ExemplarGroupMissing { group: FlagGroup },
    InvalidExemplar { index: usize, reason: String },
}

impl fmt::Display for SpecDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecDefect::BadVersion { version } => {
                write!(f, "version {version:?} is not a semantic version")
            }
            SpecDefect::EmptySection { section } => write!(f, "section {section} is empty"),
            SpecDefect::FlagUndefined { flag } => write!(f, "flag {flag} undefined"),
            SpecDefect::FlagDefinedTwice { flag } => write!(f, "flag {flag} defined more than once"),
            SpecDefect::InactiveFlagDefined { flag } => write!(f, "inactive flag {flag} defined"),
            SpecDefect::NeutralRuleMissing => f.write_str("neutral exclusivity rule absent"),
            SpecDefect::GroupRuleMissing => f.write_str("group exclusion rule absent"),
            SpecDefect::OutputFieldMissing { field } => {
                write!(f, "output instruction does not name field \"{field}\"")
            }
            SpecDefect::ExemplarGroupMissing { group } => {
                write!(f, "no exemplar for the {group:?} group")
            }
            SpecDefect::InvalidExemplar { index, reason } => {
                write!(f, "exemplar {} invalid: {reason}", index + 1)
            }
        }
    }
}

fn is_semver(v: &str) -> bool {
    let core = v.split(['-', '+']).next().unwrap_or("");
    let parts: Vec<&str> = core.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_digit()))
}

/// Lists every structural problem of a prompt spec; empty means usable.
pub fn validate_spec(spec: &PromptSpec) -> Vec<SpecDefect> {
    let mut defects = Vec::new();
    if !is_semver(&spec.version) {
        defects.push(SpecDefect::BadVersion {
            version: spec.version.clone(),
        });
    }
    let empty = |section: &str| SpecDefect::EmptySection {
        section: section.to_string(),
    };
    if spec.task_description.trim().is_empty() {
        defects.push(empty("task_description"));
    }
    if spec.flag_definitions.is_empty() {
        defects.push(empty("flag_definitions"));
    }
    if spec.constraint_rules.is_empty() {
        defects.push(empty("constraint_rules"));
    }
    if spec.output_instruction.trim().is_empty() {
        defects.push(empty("output_instruction"));
    }
    if spec.exemplars.is_empty() {
        defects.push(empty("exemplars"));
    }

    let mut seen = BTreeSet::new();
    for def in &spec.flag_definitions {
        if !def.flag.is_active() {
            defects.push(SpecDefect::InactiveFlagDefined { flag: def.flag });
        } else if !seen.insert(def.flag) {
            defects.push(SpecDefect::FlagDefinedTwice { flag: def.flag });
        }
        if def.definition.trim().is_empty() {
            defects.push(empty(&format!("flag_definitions.{}", def.flag)));
        }
    }
    for flag in FlagId::ACTIVE {
        if !seen.contains(&flag) {
            defects.push(SpecDefect::FlagUndefined { flag });
        }
    }

    let has_rule = |kind| {
        spec.constraint_rules
            .iter()
            .any(|r| r.kind == kind && !r.text.trim().is_empty())
    };
    if !has_rule(RuleKind::NeutralExclusive) {
        defects.push(SpecDefect::NeutralRuleMissing);
    }
    if !has_rule(RuleKind::GroupExclusion) {
        defects.push(SpecDefect::GroupRuleMissing);
    }

    for field in REQUIRED_OUTPUT_FIELDS {
        if !spec.output_instruction.contains(&format!("\"{field}\"")) {
            defects.push(SpecDefect::OutputFieldMissing {
                field: field.to_string(),
            });
        }
    }

    let mut groups = BTreeSet::new();
    for (index, ex) in spec.exemplars.iter().enumerate() {
        let invalid = |reason: String| SpecDefect::InvalidExemplar { index, reason };
        if ex.input.trim().is_empty() {
            defects.push(invalid("empty input".into()));
        }
        match validate_flag_set(&ex.flags.iter().copied().collect()) {
            Ok(set) => {
                groups.insert(group_rank(set.group()));
                if let Some(extra) = ex.rationale.keys().find(|k| !set.contains(**k)) {
                    defects.push(invalid(format!("rationale for unassigned flag {extra}")));
                }
                if let Some(missing) = set.iter().find(|f| !ex.rationale.contains_key(f)) {
                    defects.push(invalid(format!("no rationale for {missing}")));
                }
            }
            Err(v) => defects.push(invalid(v.to_string())),
        }
    }
    for group in [FlagGroup::Positive, FlagGroup::Negative, FlagGroup::Neutral] {
        if !spec.exemplars.is_empty() && !groups.contains(&group_rank(group)) {
            defects.push(SpecDefect::ExemplarGroupMissing { group });
        }
    }
    defects
}

fn group_rank(g: FlagGroup) -> u8 {
    match g {
        FlagGroup::Positive => 0,
        FlagGroup::Negative => 1,
        FlagGroup::Neutral => 2,
    }
}

/// Section headers of the system text.
pub mod sections {
    pub const TASK: &str = "## Task";
    pub const DEFINITIONS: &str = "## Flag definitions";
    pub const CONSTRAINTS: &str = "## Classification constraints";
    pub const OUTPUT: &str = "## Output format";
    pub const EXAMPLES: &str = "## Examples";
}

pub const CONTRIBUTION_OPEN: &str = "<contribution>";
pub const CONTRIBUTION_CLOSE: &str = "</contribution>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRendering {
    pub system_text: String,
    pub user_text: String,
    pub spec_version: String,
    pub content_hash: String,
}

impl PromptRendering {
    pub fn new(system_text: String, user_text: String, spec_version: String) -> Self {
        let content_hash = content_hash(&system_text, &user_text);
        PromptRendering {
            system_text,
            user_text,
            spec_version,
            content_hash,
        }
    }

    /// Text between two section headers of the system prompt.
    pub fn section(&self, header: &str) -> Option<&str> {
        let start = self.system_text.find(header)? + header.len();
        let rest = &self.system_text[start..];
        let end = rest.find("\n## ").unwrap_or(rest.len());
        Some(&rest[..end])
    }
}

/// Hex SHA-256 over both prompt parts, separated by a NUL byte.
pub fn content_hash(system_text: &str, user_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(system_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(user_text.as_bytes());
    hex::encode(hasher.finalize())
}

fn render_system(spec: &PromptSpec) -> String {
    let mut out = String::new();
    out.push_str(&format!("{}\n{}\n\n", sections::TASK, spec.task_description.trim()));

    out.push_str(sections::DEFINITIONS);
    out.push('\n');
    for def in &spec.flag_definitions {
        out.push_str(&format!("### {} - {}\n{}\n", def.flag, def.name, def.definition.trim()));
        if !def.criteria.is_empty() {
            out.push_str("Criteria:\n");
            for c in &def.criteria {
                out.push_str(&format!("- {}\n", c.trim()));
            }
        }
        if !def.examples.is_empty() {
            out.push_str("Examples:\n");
            for e in &def.examples {
                out.push_str(&format!("- \"{}\"\n", e.trim()));
            }
        }
        out.push('\n');
    }

    out.push_str(sections::CONSTRAINTS);
    out.push('\n');
    for (i, rule) in spec.constraint_rules.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, rule.text.trim()));
    }
    out.push('\n');

    out.push_str(&format!("{}\n{}\n\n", sections::OUTPUT, spec.output_instruction.trim()));

    out.push_str(sections::EXAMPLES);
    out.push('\n');
    for (i, ex) in spec.exemplars.iter().enumerate() {
        out.push_str(&format!(
            "### Example {}\n{CONTRIBUTION_OPEN}\n{}\n{CONTRIBUTION_CLOSE}\n",
            i + 1,
            ex.input
        ));
        if let Some(reasoning) = &ex.reasoning {
            out.push_str(&format!("Reasoning: {}\n", reasoning.trim()));
        }
        out.push_str(&format!("Output: {}\n\n", ex.expected_output()));
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

/// User message wrapping a contribution body verbatim.
pub fn render_user(body: &str) -> String {
    format!(
        "Classify the following non-coding contribution. Answer with the JSON object only.\n{CONTRIBUTION_OPEN}\n{body}\n{CONTRIBUTION_CLOSE}"
    )
}

pub fn render_prompt(spec: &PromptSpec, contribution: &Contribution) -> Result<PromptRendering, PromptError> {
    render_body(spec, &contribution.body)
}

pub fn render_body(spec: &PromptSpec, body: &str) -> Result<PromptRendering, PromptError> {
    let defects = validate_spec(spec);
    if !defects.is_empty() {
        return Err(PromptError::InvalidSpec(defects));
    }
    Ok(PromptRendering::new(
        render_system(spec),
        render_user(body),
        spec.version.clone(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Removed,
    Modified,
}

/// One differing section between two spec versions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionChange {
    pub section: String,
    pub change: ChangeKind,
    pub before: Option<String>,
    pub after: Option<String>,
}

impl fmt::Display for SectionChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.change {
            ChangeKind::Added => '+',
            ChangeKind::Removed => '-',
            ChangeKind::Modified => '~',
        };
        writeln!(f, "{sign} {}", self.section)?;
        if let Some(b) = &self.before {
            for line in b.lines() {
                writeln!(f, "    - {line}")?;
            }
        }
        if let Some(a) = &self.after {
            for line in a.lines() {
                writeln!(f, "    + {line}")?;
            }
        }
        Ok(())
    }
}

fn compare(out: &mut Vec<SectionChange>, section: String, before: Option<String>, after: Option<String>) {
    let change = match (&before, &after) {
        (None, None) => return,
        (Some(a), Some(b)) if a == b => return,
        (None, Some(_)) => ChangeKind::Added,
        (Some(_), None) => ChangeKind::Removed,
        _ => ChangeKind::Modified,
    };
    out.push(SectionChange {
        section,
        change,
        before,
        after,
    });
}

fn definition_text(d: &FlagDefinition) -> String {
    let mut s = format!("{}: {}", d.name, d.definition);
    for c in &d.criteria {
        s.push_str(&format!("\ncriterion: {c}"));
    }
    for e in &d.examples {
        s.push_str(&format!("\nexample: {e}"));
    }
    s
}

fn exemplar_text(e: &Exemplar) -> String {
    let mut s = format!("input: {}", e.input);
    if let Some(r) = &e.reasoning {
        s.push_str(&format!("\nreasoning: {r}"));
    }
    s.push_str(&format!("\noutput: {}", e.expected_output()));
    s
}

/// Section-by-section comparison of two spec versions.
pub fn diff_specs(before: &PromptSpec, after: &PromptSpec) -> Vec<SectionChange> {
    let mut out = Vec::new();
    compare(
        &mut out,
        "version".into(),
        Some(before.version.clone()),
        Some(after.version.clone()),
    );
    compare(
        &mut out,
        "task_description".into(),
        Some(before.task_description.clone()),
        Some(after.task_description.clone()),
    );
    for flag in FlagId::ALL {
        compare(
            &mut out,
            format!("flag_definitions.{flag}"),
            before.definition(flag).map(definition_text),
            after.definition(flag).map(definition_text),
        );
    }
    let n = before.constraint_rules.len().max(after.constraint_rules.len());
    for i in 0..n {
        let text = |r: &ConstraintRule| format!("[{:?}] {}", r.kind, r.text);
        compare(
            &mut out,
            format!("constraint_rules[{}]", i + 1),
            before.constraint_rules.get(i).map(text),
            after.constraint_rules.get(i).map(text),
        );
    }
    compare(
        &mut out,
        "output_instruction".into(),
        Some(before.output_instruction.clone()),
        Some(after.output_instruction.clone()),
    );
    let n = before.exemplars.len().max(after.exemplars.len());
    for i in 0..n {
        compare(
            &mut out,
            format!("exemplars[{}]", i + 1),
            before.exemplars.get(i).map(exemplar_text),
            after.exemplars.get(i).map(exemplar_text),
        );
    }
    out
}
