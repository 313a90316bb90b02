//! Ethical flags, their polarity groups, and validation/repair of label sets.
//!
//! Ten flags are active: five positive (`F1`–`F5`), four negative (`F6`–`F9`)
//! and the neutral `F11`. `F10` is kept as metadata so that datasets naming it
//! still parse, but it never appears inside a [`FlagSet`].
//!
//! A valid label set is non-empty and group-homogeneous: any combination of
//! positive flags, any combination of negative flags, or exactly `{F11}`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("unknown flag id {0:?}")]
    UnknownFlag(String),
    #[error("invalid flag set: {0}")]
    Invalid(Violations),
}

/// Identifier of an ethical flag. Serializes as `"F1"` … `"F11"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FlagId {
    F1,
    F2,
    F3,
    F4,
    F5,
    F6,
    F7,
    F8,
    F9,
    F10,
    F11,
}

impl FlagId {
    pub const ALL: [FlagId; 11] = [
        FlagId::F1,
        FlagId::F2,
        FlagId::F3,
        FlagId::F4,
        FlagId::F5,
        FlagId::F6,
        FlagId::F7,
        FlagId::F8,
        FlagId::F9,
        FlagId::F10,
        FlagId::F11,
    ];

    /// Every flag that may appear in a [`FlagSet`], in table order.
    pub const ACTIVE: [FlagId; 10] = [
        FlagId::F1,
        FlagId::F2,
        FlagId::F3,
        FlagId::F4,
        FlagId::F5,
        FlagId::F6,
        FlagId::F7,
        FlagId::F8,
        FlagId::F9,
        FlagId::F11,
    ];

    pub const POSITIVE: [FlagId; 5] = [FlagId::F1, FlagId::F2, FlagId::F3, FlagId::F4, FlagId::F5];
    pub const NEGATIVE: [FlagId; 4] = [FlagId::F6, FlagId::F7, FlagId::F8, FlagId::F9];

    pub fn as_str(self) -> &'static str {
        match self {
            FlagId::F1 => "F1",
            FlagId::F2 => "F2",
            FlagId::F3 => "F3",
            FlagId::F4 => "F4",
            FlagId::F5 => "F5",
            FlagId::F6 => "F6",
            FlagId::F7 => "F7",
            FlagId::F8 => "F8",
            FlagId::F9 => "F9",
            FlagId::F10 => "F10",
            FlagId::F11 => "F11",
        }
    }

    /// One-based table number (`F7` → 7).
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }

    pub fn group(self) -> FlagGroup {
        match self {
            FlagId::F1 | FlagId::F2 | FlagId::F3 | FlagId::F4 | FlagId::F5 => FlagGroup::Positive,
            FlagId::F6 | FlagId::F7 | FlagId::F8 | FlagId::F9 | FlagId::F10 => FlagGroup::Negative,
            FlagId::F11 => FlagGroup::Neutral,
        }
    }

    pub fn is_active(self) -> bool {
        self != FlagId::F10
    }

    pub fn info(self) -> &'static Flag {
        &FLAGS[self as usize]
    }
}

impl fmt::Display for FlagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlagId {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        FlagId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(trimmed))
            .ok_or_else(|| TaxonomyError::UnknownFlag(s.to_string()))
    }
}

impl Serialize for FlagId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FlagId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FlagGroup {
    Positive,
    Negative,
    Neutral,
}

/// Static description of one flag.
#[derive(Debug, Clone, Serialize)]
pub struct Flag {
    pub id: FlagId,
    pub name: &'static str,
    pub description: &'static str,
    pub group: FlagGroup,
    pub active: bool,
}

pub static FLAGS: [Flag; 11] = [
    Flag {
        id: FlagId::F1,
        name: "Empathy and Kindness",
        description: "Demonstrating understanding and compassion towards others.",
        group: FlagGroup::Positive,
        active: true,
    },
    Flag {
        id: FlagId::F2,
        name: "Respect for Differences",
        description: "Valuing diverse perspectives and backgrounds.",
        group: FlagGroup::Positive,
        active: true,
    },
    Flag {
        id: FlagId::F3,
        name: "Constructive Feedback",
        description: "Providing feedback that is helpful and aimed at improvement.",
        group: FlagGroup::Positive,
        active: true,
    },
    Flag {
        id: FlagId::F4,
        name: "Responsibility and Apology",
        description: "Taking responsibility for one's actions and apologizing when necessary.",
        group: FlagGroup::Positive,
        active: true,
    },
    Flag {
        id: FlagId::F5,
        name: "Common Good",
        description: "Acting in ways that benefit the broader community.",
        group: FlagGroup::Positive,
        active: true,
    },
    Flag {
        id: FlagId::F6,
        name: "Sexualized Language",
        description: "Using language that is inappropriate and sexual in nature.",
        group: FlagGroup::Negative,
        active: true,
    },
    Flag {
        id: FlagId::F7,
        name: "Insulting or Derogatory Comments",
        description: "Making comments that insult or demean others.",
        group: FlagGroup::Negative,
        active: true,
    },
    Flag {
        id: FlagId::F8,
        name: "Public Harassment",
        description: "Engaging in behavior that intimidates or harasses others.",
        group: FlagGroup::Negative,
        active: true,
    },
    Flag {
        id: FlagId::F9,
        name: "Publishing Private Information",
        description: "Sharing private information about others without consent.",
        group: FlagGroup::Negative,
        active: true,
    },
    Flag {
        id: FlagId::F10,
        name: "Inappropriate Conduct",
        description: "Behaving in a manner that is not suitable in a professional setting.",
        group: FlagGroup::Negative,
        active: false,
    },
    Flag {
        id: FlagId::F11,
        name: "No Flag",
        description: "Comments that do not exhibit any ethical behaviors.",
        group: FlagGroup::Neutral,
        active: true,
    },
];

/// Group of a flag given by its textual id.
pub fn flag_group(id: &str) -> Result<FlagGroup, TaxonomyError> {
    Ok(id.parse::<FlagId>()?.group())
}

/// Parses flag tokens into a raw (unvalidated) set.
pub fn parse_flag_ids<I, S>(tokens: I) -> Result<BTreeSet<FlagId>, TaxonomyError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    tokens.into_iter().map(|t| t.as_ref().parse()).collect()
}

/// A rule broken by a raw label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    EmptySet,
    MixedGroup,
    NeutralCombined,
    InactiveFlag,
}

impl Violation {
    pub fn as_str(self) -> &'static str {
        match self {
            Violation::EmptySet => "empty-set",
            Violation::MixedGroup => "mixed-group",
            Violation::NeutralCombined => "neutral-combined",
            Violation::InactiveFlag => "inactive-flag",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Violations(pub Vec<Violation>);

impl Violations {
    pub fn contains(&self, v: Violation) -> bool {
        self.0.contains(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = Violation> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|v| v.as_str()).collect();
        f.write_str(&parts.join(", "))
    }
}

/// Checks every label-set rule and reports all of those that fail.
pub fn validate_flag_set(raw: &BTreeSet<FlagId>) -> Result<FlagSet, Violations> {
    let mut violations = Vec::new();
    if raw.is_empty() {
        violations.push(Violation::EmptySet);
    }
    let has_positive = raw.iter().any(|f| f.group() == FlagGroup::Positive);
    let has_negative = raw.iter().any(|f| f.group() == FlagGroup::Negative);
    if has_positive && has_negative {
        violations.push(Violation::MixedGroup);
    }
    if raw.contains(&FlagId::F11) && raw.len() > 1 {
        violations.push(Violation::NeutralCombined);
    }
    if raw.contains(&FlagId::F10) {
        violations.push(Violation::InactiveFlag);
    }
    if violations.is_empty() {
        Ok(FlagSet::from_bits_unchecked(raw.iter().fold(0, |acc, f| acc | f.bit())))
    } else {
        Err(Violations(violations))
    }
}

/// A non-empty, group-homogeneous set of active flags.
///
/// Stored as a bitmask; iteration yields flags in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlagSet(u16);

impl FlagSet {
    pub fn neutral() -> Self {
        FlagSet(FlagId::F11.bit())
    }

    pub fn single(id: FlagId) -> Result<Self, TaxonomyError> {
        Self::try_from_iter([id])
    }

    pub fn try_from_iter<I: IntoIterator<Item = FlagId>>(ids: I) -> Result<Self, TaxonomyError> {
        let raw: BTreeSet<FlagId> = ids.into_iter().collect();
        validate_flag_set(&raw).map_err(TaxonomyError::Invalid)
    }

    /// Parses and validates string tokens such as `["F1", "F3"]`.
    pub fn parse<I, S>(tokens: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let raw = parse_flag_ids(tokens)?;
        validate_flag_set(&raw).map_err(TaxonomyError::Invalid)
    }

    fn from_bits_unchecked(bits: u16) -> Self {
        FlagSet(bits)
    }

    pub fn contains(&self, id: FlagId) -> bool {
        self.0 & id.bit() != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = FlagId> + '_ {
        let bits = self.0;
        FlagId::ALL.into_iter().filter(move |f| bits & f.bit() != 0)
    }

    pub fn to_set(&self) -> BTreeSet<FlagId> {
        self.iter().collect()
    }

    pub fn group(&self) -> FlagGroup {
        self.iter().next().map(FlagId::group).unwrap_or(FlagGroup::Neutral)
    }

    /// Number of shared flags.
    pub fn intersection_len(&self, other: &FlagSet) -> usize {
        (self.0 & other.0).count_ones() as usize
    }
}

impl fmt::Display for FlagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.iter().map(FlagId::as_str).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl Serialize for FlagSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FlagSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(deserializer)?;
        FlagSet::parse(&tokens).map_err(|e| match e {
            TaxonomyError::Invalid(v) => serde::de::Error::custom(v),
            other => serde::de::Error::custom(other),
        })
    }
}

/// How mixed positive/negative sets are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairPolicy {
    /// Group kept when both groups have the same size.
    pub tie_break: FlagGroup,
    /// Mark every mixed-group repair for review, not only ties.
    pub review_all_mixed: bool,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        RepairPolicy {
            tie_break: FlagGroup::Negative,
            review_all_mixed: false,
        }
    }
}

/// Outcome of [`repair_flag_set`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    pub flags: FlagSet,
    pub notes: Vec<String>,
    pub needs_review: bool,
}

impl Repair {
    pub fn changed(&self) -> bool {
        !self.notes.is_empty()
    }
}

/// Deterministically turns any raw set into a valid [`FlagSet`].
///
/// Rules are applied in order: empty becomes `{F11}`; `F11` next to other
/// flags is dropped; `F10` is dropped; a mixed set keeps its larger group
/// (ties resolved by `policy.tie_break`, which also marks the record for
/// review). A set that is already valid comes back unchanged with no notes.
pub fn repair_flag_set(raw: &BTreeSet<FlagId>, policy: RepairPolicy) -> Repair {
    if let Ok(flags) = validate_flag_set(raw) {
        return Repair {
            flags,
            notes: Vec::new(),
            needs_review: false,
        };
    }

    let mut set = raw.clone();
    let mut notes = Vec::new();
    let mut needs_review = false;

    if set.is_empty() {
        return Repair {
            flags: FlagSet::neutral(),
            notes: vec!["empty→neutral".to_string()],
            needs_review,
        };
    }
    if set.len() > 1 && set.remove(&FlagId::F11) {
        notes.push("dropped F11".to_string());
    }
    if set.remove(&FlagId::F10) {
        notes.push("dropped F10".to_string());
        if set.is_empty() {
            notes.push("empty→neutral".to_string());
            set.insert(FlagId::F11);
        }
    }

    let (positive, negative): (BTreeSet<FlagId>, BTreeSet<FlagId>) = set
        .iter()
        .filter(|f| f.group() != FlagGroup::Neutral)
        .partition(|f| f.group() == FlagGroup::Positive);
    if !positive.is_empty() && !negative.is_empty() {
        let keep_negative = match positive.len().cmp(&negative.len()) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => {
                needs_review = true;
                policy.tie_break != FlagGroup::Positive
            }
        };
        if policy.review_all_mixed {
            needs_review = true;
        }
        let (kept, label) = if keep_negative {
            (negative, "negative")
        } else {
            (positive, "positive")
        };
        notes.push(format!(
            "mixed-group: kept {label} group ({} positive vs {} negative)",
            set.iter().filter(|f| f.group() == FlagGroup::Positive).count(),
            set.iter().filter(|f| f.group() == FlagGroup::Negative).count(),
        ));
        set = kept;
    }

    match validate_flag_set(&set) {
        Ok(flags) => Repair {
            flags,
            notes,
            needs_review,
        },
        Err(v) => {
            notes.push(format!("unrepairable ({v}); defaulted to F11"));
            Repair {
                flags: FlagSet::neutral(),
                notes,
                needs_review: true,
            }
        }
    }
}
