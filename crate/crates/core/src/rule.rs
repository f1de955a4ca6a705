//! Priority rules: validation, business priority of debt items, backlog
//! ranking and comparison of alternative rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::domain::{
    effective_cells, AssetState, BusinessValue, CellKeyError, DebtId, LinkError, Portfolio, RuleCell,
    TechnicalDebtItem, Usage,
};

pub const MIN_RANK: u8 = 1;
pub const MAX_RANK: u8 = 10;

/// A business priority, 1 (most urgent) through 10.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Rank(u8);

impl Rank {
    pub fn new(value: i64) -> Result<Rank, RankOutOfRange> {
        if (MIN_RANK as i64..=MAX_RANK as i64).contains(&value) {
            Ok(Rank(value as u8))
        } else {
            Err(RankOutOfRange(value))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn bucket(self) -> Bucket {
        match self.0 {
            1..=3 => Bucket::High,
            4..=6 => Bucket::Medium,
            7..=9 => Bucket::Low,
            _ => Bucket::Lowest,
        }
    }

    pub fn all() -> impl Iterator<Item = Rank> {
        (MIN_RANK..=MAX_RANK).map(Rank)
    }
}

impl TryFrom<i64> for Rank {
    type Error = RankOutOfRange;

    fn try_from(value: i64) -> Result<Self, Self::Error> {
        Rank::new(value)
    }
}

impl From<Rank> for u8 {
    fn from(rank: Rank) -> u8 {
        rank.0
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("rank {0} is outside 1..=10")]
pub struct RankOutOfRange(pub i64);

/// Coarse grouping of ranks, comparable with technical priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    High,
    Medium,
    Low,
    Lowest,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Bucket::High, Bucket::Medium, Bucket::Low, Bucket::Lowest];

    pub fn as_str(self) -> &'static str {
        match self {
            Bucket::High => "high",
            Bucket::Medium => "medium",
            Bucket::Low => "low",
            Bucket::Lowest => "lowest",
        }
    }
}

pub fn bucket(rank: i64) -> Result<Bucket, RankOutOfRange> {
    Rank::new(rank).map(Rank::bucket)
}

/// Unvalidated rule as it arrives from a file or request: cell keys and raw
/// integer ranks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleDraft {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub created_date: Option<NaiveDate>,
    pub cells: BTreeMap<String, i64>,
}

impl RuleDraft {
    /// Accepts either a full rule object or a bare `{cell key: rank}` map.
    pub fn from_json(value: serde_json::Value) -> Result<RuleDraft, serde_json::Error> {
        if value.get("cells").is_some() {
            serde_json::from_value(value)
        } else {
            Ok(RuleDraft { cells: serde_json::from_value(value)?, ..RuleDraft::default() })
        }
    }
}

impl From<&PriorityRule> for RuleDraft {
    fn from(rule: &PriorityRule) -> Self {
        RuleDraft {
            id: Some(rule.id.clone()),
            name: rule.name.clone(),
            author: rule.author.clone(),
            created_date: Some(rule.created_date),
            cells: rule.cells.iter().map(|(c, r)| (c.key(), r.get() as i64)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleViolation {
    MissingCell { cell: RuleCell },
    RankOutOfRange { cell: String, rank: i64 },
    UsageOnToBe { cell: String },
    MissingUsage { cell: String },
    UnknownCell { cell: String },
}

impl fmt::Display for RuleViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleViolation::MissingCell { cell } => write!(f, "cell {cell} has no rank"),
            RuleViolation::RankOutOfRange { cell, rank } => write!(f, "cell {cell}: rank {rank} is outside 1..=10"),
            RuleViolation::UsageOnToBe { cell } => write!(f, "cell {cell}: to_be assets carry no usage"),
            RuleViolation::MissingUsage { cell } => write!(f, "cell {cell}: usage is required"),
            RuleViolation::UnknownCell { cell } => write!(f, "unknown cell {cell}"),
        }
    }
}

pub fn validate_rule(draft: &RuleDraft) -> Vec<RuleViolation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (key, &rank) in &draft.cells {
        match RuleCell::parse_key(key) {
            Ok(cell) => {
                seen.insert(cell);
            }
            Err(CellKeyError::UsageOnToBe(cell)) => out.push(RuleViolation::UsageOnToBe { cell }),
            Err(CellKeyError::MissingUsage(cell)) => out.push(RuleViolation::MissingUsage { cell }),
            Err(CellKeyError::Unknown(cell)) => out.push(RuleViolation::UnknownCell { cell }),
        }
        if Rank::new(rank).is_err() {
            out.push(RuleViolation::RankOutOfRange { cell: key.clone(), rank });
        }
    }
    for cell in RuleCell::all() {
        if !seen.contains(&cell) {
            out.push(RuleViolation::MissingCell { cell });
        }
    }
    out.sort();
    out
}

/// A validated, total map from the ten reachable cells to ranks.
///
/// Rules are immutable: editing produces a new version under the same id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityRule {
    pub id: String,
    #[serde(default = "first_version")]
    pub version: u32,
    pub name: String,
    pub author: String,
    pub created_date: NaiveDate,
    pub cells: BTreeMap<RuleCell, Rank>,
}

fn first_version() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid rule: {}", join_violations(.0))]
    InvalidRule(Vec<RuleViolation>),
    #[error(transparent)]
    Link(#[from] LinkError),
}

fn join_violations(v: &[RuleViolation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl PriorityRule {
    /// Validates a draft. Missing id, name or date fall back to the given
    /// defaults.
    pub fn from_draft(draft: &RuleDraft, default_id: &str, today: NaiveDate) -> Result<PriorityRule, EngineError> {
        let violations = validate_rule(draft);
        if !violations.is_empty() {
            return Err(EngineError::InvalidRule(violations));
        }
        let cells = draft
            .cells
            .iter()
            .map(|(k, &r)| (RuleCell::parse_key(k).expect("validated"), Rank::new(r).expect("validated")))
            .collect();
        let id = draft.id.clone().unwrap_or_else(|| default_id.to_owned());
        Ok(PriorityRule {
            name: if draft.name.is_empty() { id.clone() } else { draft.name.clone() },
            id,
            version: 1,
            author: draft.author.clone(),
            created_date: draft.created_date.unwrap_or(today),
            cells,
        })
    }

    /// Builds a rule from (cell, rank) pairs; panics on a non-total map.
    /// Intended for fixtures and tests.
    pub fn from_ranks(id: &str, ranks: impl IntoIterator<Item = (RuleCell, u8)>) -> PriorityRule {
        let cells: BTreeMap<RuleCell, Rank> =
            ranks.into_iter().map(|(c, r)| (c, Rank::new(r as i64).expect("rank in range"))).collect();
        assert_eq!(cells.len(), 10, "rule must map all ten cells");
        PriorityRule {
            id: id.to_owned(),
            version: 1,
            name: id.to_owned(),
            author: String::new(),
            created_date: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            cells,
        }
    }

    /// Every cell at the same rank.
    pub fn uniform(id: &str, rank: u8) -> PriorityRule {
        PriorityRule::from_ranks(id, RuleCell::all().into_iter().map(|c| (c, rank)))
    }

    /// The illustrative rule used on the priority canvas: operational
    /// core/high first, to-be core at 5 regardless of usage, legacy
    /// other/low last.
    pub fn canvas_example() -> PriorityRule {
        use AssetState::*;
        use BusinessValue::*;
        use Usage::*;
        PriorityRule::from_ranks(
            "canvas-example",
            [
                (RuleCell::new(Operational, Core, High), 1),
                (RuleCell::new(Operational, Core, Low), 2),
                (RuleCell::new(Operational, Other, High), 3),
                (RuleCell::to_be(Core), 5),
                (RuleCell::new(Operational, Other, Low), 6),
                (RuleCell::to_be(Other), 7),
                (RuleCell::new(Legacy, Core, High), 8),
                (RuleCell::new(Legacy, Core, Low), 9),
                (RuleCell::new(Legacy, Other, High), 9),
                (RuleCell::new(Legacy, Other, Low), 10),
            ],
        )
    }

    pub fn rank_of(&self, cell: &RuleCell) -> Rank {
        self.cells[cell]
    }

    pub fn cell_map(&self) -> BTreeMap<String, u8> {
        self.cells.iter().map(|(c, r)| (c.key(), r.get())).collect()
    }

    /// Report label for a business-priority group, e.g. `1-core/high`.
    /// Cells sharing a rank are joined with `+`.
    pub fn group_label(&self, rank: Rank) -> String {
        let cells: Vec<String> =
            self.cells.iter().filter(|(_, r)| **r == rank).map(|(c, _)| c.short_label()).collect();
        if cells.is_empty() {
            rank.to_string()
        } else {
            format!("{}-{}", rank, cells.join("+"))
        }
    }

    /// Ranks in use, ascending.
    pub fn used_ranks(&self) -> BTreeSet<Rank> {
        self.cells.values().copied().collect()
    }
}

/// Most urgent rank over the item's effective cells.
pub fn business_priority(item: &TechnicalDebtItem, rule: &PriorityRule, p: &Portfolio) -> Result<Rank, LinkError> {
    let cells = effective_cells(item, p)?;
    Ok(cells.iter().map(|c| rule.rank_of(c)).min().expect("effective cells are non-empty"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedItem {
    pub debt_id: DebtId,
    pub name: String,
    pub rank: Rank,
    pub bucket: Bucket,
    pub created_date: NaiveDate,
    pub paid_date: Option<NaiveDate>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Backlog {
    pub items: Vec<RankedItem>,
    /// Items that could not be ranked because they reach no rule cell.
    pub unlinked: Vec<DebtId>,
}

/// Orders debt items by business priority, then identification date, then id.
/// Paid items are left out unless `include_paid` is set.
pub fn rank_backlog<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    rule: &PriorityRule,
    p: &Portfolio,
    include_paid: bool,
) -> Backlog {
    let mut backlog = Backlog::default();
    for item in items {
        if item.is_paid() && !include_paid {
            continue;
        }
        match business_priority(item, rule, p) {
            Ok(rank) => backlog.items.push(RankedItem {
                debt_id: item.id.clone(),
                name: item.name.clone(),
                rank,
                bucket: rank.bucket(),
                created_date: item.created_date,
                paid_date: item.paid_date,
            }),
            Err(LinkError::UnlinkedDebt(id)) => backlog.unlinked.push(id),
        }
    }
    backlog.items.sort_by(|a, b| (a.rank, a.created_date, &a.debt_id).cmp(&(b.rank, b.created_date, &b.debt_id)));
    backlog.unlinked.sort();
    backlog
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellComparison {
    pub cell: RuleCell,
    pub ranks: Vec<Rank>,
    pub buckets: Vec<Bucket>,
    /// Every rule gives this cell the same rank.
    pub unanimous: bool,
    /// Every rule puts this cell in the same bucket.
    pub unanimous_bucket: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleComparison {
    pub rules: Vec<String>,
    pub cells: Vec<CellComparison>,
}

impl RuleComparison {
    pub fn unanimous_cells(&self) -> Vec<RuleCell> {
        self.cells.iter().filter(|c| c.unanimous).map(|c| c.cell).collect()
    }
}

pub fn compare_rules(rules: &[PriorityRule]) -> RuleComparison {
    let cells = RuleCell::all()
        .into_iter()
        .map(|cell| {
            let ranks: Vec<Rank> = rules.iter().map(|r| r.rank_of(&cell)).collect();
            let buckets: Vec<Bucket> = ranks.iter().map(|r| r.bucket()).collect();
            CellComparison {
                cell,
                unanimous: ranks.windows(2).all(|w| w[0] == w[1]),
                unanimous_bucket: buckets.windows(2).all(|w| w[0] == w[1]),
                ranks,
                buckets,
            }
        })
        .collect();
    RuleComparison { rules: rules.iter().map(|r| format!("{}@{}", r.id, r.version)).collect(), cells }
}

/// A single variable value a rule cell may contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Operational,
    ToBe,
    Legacy,
    Core,
    Other,
    High,
    Low,
}

impl Variable {
    pub const ALL: [Variable; 7] = [
        Variable::Operational,
        Variable::ToBe,
        Variable::Legacy,
        Variable::Core,
        Variable::Other,
        Variable::High,
        Variable::Low,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variable::Operational => "operational",
            Variable::ToBe => "to_be",
            Variable::Legacy => "legacy",
            Variable::Core => "core",
            Variable::Other => "other",
            Variable::High => "high",
            Variable::Low => "low",
        }
    }

    pub fn in_cell(self, cell: &RuleCell) -> bool {
        match self {
            Variable::Operational => cell.asset_state() == AssetState::Operational,
            Variable::ToBe => cell.asset_state() == AssetState::ToBe,
            Variable::Legacy => cell.asset_state() == AssetState::Legacy,
            Variable::Core => cell.business_value() == BusinessValue::Core,
            Variable::Other => cell.business_value() == BusinessValue::Other,
            Variable::High => cell.usage() == Some(Usage::High),
            Variable::Low => cell.usage() == Some(Usage::Low),
        }
    }
}

/// Priority band used when decomposing rules: high (1–3), medium (4–6) and
/// low, which folds the low and lowest buckets together (7–10).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    High,
    Medium,
    Low,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::High, Band::Medium, Band::Low];

    pub fn of(rank: Rank) -> Band {
        match rank.bucket() {
            Bucket::High => Band::High,
            Bucket::Medium => Band::Medium,
            Bucket::Low | Bucket::Lowest => Band::Low,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Band::High => "high",
            Band::Medium => "medium",
            Band::Low => "low",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRow {
    pub variable: Variable,
    /// Number of (rule, cell) pairs containing the variable.
    pub pairs: usize,
    pub high: usize,
    pub medium: usize,
    pub low: usize,
    pub pct_high: f64,
    pub pct_medium: f64,
    pub pct_low: f64,
}

/// For each variable value, the share of (rule, cell) pairs containing it
/// that fall in each band. Percentages are rounded half-up to one decimal.
pub fn decompose_rules(rules: &[PriorityRule]) -> Vec<DecompositionRow> {
    Variable::ALL
        .into_iter()
        .map(|variable| {
            let mut counts: BTreeMap<Band, usize> = BTreeMap::new();
            let mut pairs = 0;
            for rule in rules {
                for (cell, rank) in &rule.cells {
                    if variable.in_cell(cell) {
                        pairs += 1;
                        *counts.entry(Band::of(*rank)).or_default() += 1;
                    }
                }
            }
            let count = |b: Band| counts.get(&b).copied().unwrap_or(0);
            DecompositionRow {
                variable,
                pairs,
                high: count(Band::High),
                medium: count(Band::Medium),
                low: count(Band::Low),
                pct_high: crate::percent(count(Band::High), pairs),
                pct_medium: crate::percent(count(Band::Medium), pairs),
                pct_low: crate::percent(count(Band::Low), pairs),
            }
        })
        .collect()
}
