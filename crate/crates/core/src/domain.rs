//! Portfolio entities: configuration items, IT assets, value sources,
//! technical debt items and business metrics, plus consistency checks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(CiId);
string_id!(AssetId);
string_id!(ValueSourceId);
string_id!(DebtId);
string_id!(MetricId);

/// Lifecycle state shared by configuration items and IT assets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetState {
    Operational,
    ToBe,
    Legacy,
}

impl AssetState {
    pub const ALL: [AssetState; 3] = [AssetState::Operational, AssetState::ToBe, AssetState::Legacy];

    pub fn as_str(self) -> &'static str {
        match self {
            AssetState::Operational => "operational",
            AssetState::ToBe => "to_be",
            AssetState::Legacy => "legacy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusinessValue {
    Core,
    Other,
}

impl BusinessValue {
    pub const ALL: [BusinessValue; 2] = [BusinessValue::Core, BusinessValue::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            BusinessValue::Core => "core",
            BusinessValue::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Usage {
    High,
    Low,
}

impl Usage {
    pub const ALL: [Usage; 2] = [Usage::High, Usage::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Usage::High => "high",
            Usage::Low => "low",
        }
    }
}

/// Three-level scale used for technical priority and technical effort.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Medium,
    Low,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::High, Level::Medium, Level::Low];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::High => "high",
            Level::Medium => "medium",
            Level::Low => "low",
        }
    }

    pub fn parse(s: &str) -> Option<Level> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Some(Level::High),
            "medium" => Some(Level::Medium),
            "low" => Some(Level::Low),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebtType {
    Bug,
    Architectural,
    Feature,
    Database,
    Test,
    Build,
    Documentation,
    Requirements,
    Code,
    Infrastructure,
    Other,
}

impl DebtType {
    pub const ALL: [DebtType; 11] = [
        DebtType::Bug,
        DebtType::Architectural,
        DebtType::Feature,
        DebtType::Database,
        DebtType::Test,
        DebtType::Build,
        DebtType::Documentation,
        DebtType::Requirements,
        DebtType::Code,
        DebtType::Infrastructure,
        DebtType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DebtType::Bug => "bug",
            DebtType::Architectural => "architectural",
            DebtType::Feature => "feature",
            DebtType::Database => "database",
            DebtType::Test => "test",
            DebtType::Build => "build",
            DebtType::Documentation => "documentation",
            DebtType::Requirements => "requirements",
            DebtType::Code => "code",
            DebtType::Infrastructure => "infrastructure",
            DebtType::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Immediate,
    ShortTerm,
    LongTerm,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigurationItem {
    pub id: CiId,
    pub name: String,
    pub state: AssetState,
    /// Composition parents: this CI is a component of each listed CI.
    #[serde(default)]
    pub parent_ids: BTreeSet<CiId>,
    #[serde(default)]
    pub depends_on: BTreeSet<CiId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItAsset {
    pub id: AssetId,
    pub name: String,
    pub state: AssetState,
    #[serde(default)]
    pub ci_ids: BTreeSet<CiId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSource {
    pub id: ValueSourceId,
    pub name: String,
    pub business_value: BusinessValue,
    pub usage: Usage,
    #[serde(default)]
    pub asset_ids: BTreeSet<AssetId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechnicalDebtItem {
    pub id: DebtId,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Identification date, which may precede the registration date.
    pub created_date: NaiveDate,
    #[serde(default)]
    pub paid_date: Option<NaiveDate>,
    pub debt_type: DebtType,
    pub technical_priority: Level,
    /// Unset for items imported from a tracker until someone estimates them.
    #[serde(default)]
    pub technical_effort: Option<Level>,
    #[serde(default)]
    pub ci_id: Option<CiId>,
    #[serde(default)]
    pub value_source_ids: BTreeSet<ValueSourceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracker: Option<String>,
    #[serde(default)]
    pub tracker_issue_id: Option<String>,
    /// Set on import; cleared once a person links the CI and value sources.
    #[serde(default)]
    pub needs_linking: bool,
    #[serde(default)]
    pub factor_tags: BTreeSet<String>,
}

impl TechnicalDebtItem {
    /// Open at the end of `day`: identified on or before it and not yet paid.
    pub fn is_open_on(&self, day: NaiveDate) -> bool {
        self.created_date <= day && self.paid_date.is_none_or(|paid| paid > day)
    }

    pub fn is_paid(&self) -> bool {
        self.paid_date.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTarget {
    ValueSource(ValueSourceId),
    ItAsset(AssetId),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessMetric {
    pub id: MetricId,
    pub name: String,
    pub target: MetricTarget,
    pub horizon: Horizon,
    #[serde(default)]
    pub description: String,
}

/// Aggregate root over all portfolio entities.
///
/// Serializes to the interchange document with one array per entity kind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "PortfolioDocument", into = "PortfolioDocument")]
pub struct Portfolio {
    pub cis: BTreeMap<CiId, ConfigurationItem>,
    pub assets: BTreeMap<AssetId, ItAsset>,
    pub value_sources: BTreeMap<ValueSourceId, ValueSource>,
    pub debt_items: BTreeMap<DebtId, TechnicalDebtItem>,
    pub metrics: BTreeMap<MetricId, BusinessMetric>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PortfolioDocument {
    #[serde(default)]
    pub configuration_items: Vec<ConfigurationItem>,
    #[serde(default)]
    pub it_assets: Vec<ItAsset>,
    #[serde(default)]
    pub value_sources: Vec<ValueSource>,
    #[serde(default)]
    pub debt_items: Vec<TechnicalDebtItem>,
    #[serde(default)]
    pub metrics: Vec<BusinessMetric>,
}

impl From<PortfolioDocument> for Portfolio {
    fn from(doc: PortfolioDocument) -> Self {
        Portfolio {
            cis: doc.configuration_items.into_iter().map(|c| (c.id.clone(), c)).collect(),
            assets: doc.it_assets.into_iter().map(|a| (a.id.clone(), a)).collect(),
            value_sources: doc.value_sources.into_iter().map(|v| (v.id.clone(), v)).collect(),
            debt_items: doc.debt_items.into_iter().map(|d| (d.id.clone(), d)).collect(),
            metrics: doc.metrics.into_iter().map(|m| (m.id.clone(), m)).collect(),
        }
    }
}

impl From<Portfolio> for PortfolioDocument {
    fn from(p: Portfolio) -> Self {
        PortfolioDocument {
            configuration_items: p.cis.into_values().collect(),
            it_assets: p.assets.into_values().collect(),
            value_sources: p.value_sources.into_values().collect(),
            debt_items: p.debt_items.into_values().collect(),
            metrics: p.metrics.into_values().collect(),
        }
    }
}

impl Portfolio {
    pub fn is_empty(&self) -> bool {
        self.cis.is_empty()
            && self.assets.is_empty()
            && self.value_sources.is_empty()
            && self.debt_items.is_empty()
            && self.metrics.is_empty()
    }

    pub fn insert_ci(&mut self, ci: ConfigurationItem) {
        self.cis.insert(ci.id.clone(), ci);
    }

    pub fn insert_asset(&mut self, asset: ItAsset) {
        self.assets.insert(asset.id.clone(), asset);
    }

    pub fn insert_value_source(&mut self, vs: ValueSource) {
        self.value_sources.insert(vs.id.clone(), vs);
    }

    pub fn insert_debt(&mut self, item: TechnicalDebtItem) {
        self.debt_items.insert(item.id.clone(), item);
    }

    pub fn insert_metric(&mut self, metric: BusinessMetric) {
        self.metrics.insert(metric.id.clone(), metric);
    }

    /// The CI itself followed by all of its composition ancestors.
    pub fn composition_closure(&self, ci: &CiId) -> BTreeSet<CiId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![ci.clone()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            if let Some(node) = self.cis.get(&id) {
                stack.extend(node.parent_ids.iter().cloned());
            }
        }
        seen
    }
}

/// Which kind of entity a violation refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    ConfigurationItem,
    ItAsset,
    ValueSource,
    DebtItem,
    Metric,
}

impl EntityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::ConfigurationItem => "configuration_item",
            EntityKind::ItAsset => "it_asset",
            EntityKind::ValueSource => "value_source",
            EntityKind::DebtItem => "debt_item",
            EntityKind::Metric => "metric",
        }
    }
}

/// A broken portfolio invariant. Violations are reported, never raised.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DanglingReference {
        entity: EntityKind,
        id: String,
        field: String,
        target: String,
    },
    OperationalAssetWithoutOperationalCi {
        asset: AssetId,
    },
    AssetWithoutCis {
        asset: AssetId,
    },
    /// CIs that take part in a composition cycle, sorted.
    CompositionCycle {
        cis: Vec<CiId>,
    },
    DebtWithoutCi {
        debt: DebtId,
    },
    DebtWithoutValueSources {
        debt: DebtId,
    },
    DebtNeedsLinking {
        debt: DebtId,
    },
    PaidBeforeCreated {
        debt: DebtId,
    },
    ValueSourceWithoutAssets {
        value_source: ValueSourceId,
    },
    /// No (asset, value source) pair is reachable from the debt item's CI.
    UnlinkedDebt {
        debt: DebtId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingReference { entity, id, field, target } => {
                write!(f, "{} {id}: {field} references unknown id {target}", entity.as_str())
            }
            Violation::OperationalAssetWithoutOperationalCi { asset } => {
                write!(f, "operational asset {asset} has no operational configuration item")
            }
            Violation::AssetWithoutCis { asset } => write!(f, "asset {asset} has no configuration items"),
            Violation::CompositionCycle { cis } => {
                let ids: Vec<&str> = cis.iter().map(CiId::as_str).collect();
                write!(f, "composition cycle among {}", ids.join(", "))
            }
            Violation::DebtWithoutCi { debt } => write!(f, "debt item {debt} has no configuration item"),
            Violation::DebtWithoutValueSources { debt } => {
                write!(f, "debt item {debt} is not linked to any value source")
            }
            Violation::DebtNeedsLinking { debt } => write!(f, "debt item {debt} still needs linking"),
            Violation::PaidBeforeCreated { debt } => write!(f, "debt item {debt} is paid before it was created"),
            Violation::ValueSourceWithoutAssets { value_source } => {
                write!(f, "value source {value_source} is used for prioritization but has no assets")
            }
            Violation::UnlinkedDebt { debt } => {
                write!(f, "debt item {debt} reaches no (asset, value source) pair through its configuration item")
            }
        }
    }
}

/// Checks every portfolio invariant and returns one violation per breach,
/// sorted. An empty result means the portfolio is consistent.
pub fn validate_portfolio(p: &Portfolio) -> Vec<Violation> {
    let mut out = Vec::new();
    let dangling = |entity: EntityKind, id: &str, field: &str, target: &str| Violation::DanglingReference {
        entity,
        id: id.to_owned(),
        field: field.to_owned(),
        target: target.to_owned(),
    };

    for ci in p.cis.values() {
        for parent in &ci.parent_ids {
            if !p.cis.contains_key(parent) {
                out.push(dangling(EntityKind::ConfigurationItem, ci.id.as_str(), "parent_ids", parent.as_str()));
            }
        }
        for dep in &ci.depends_on {
            if !p.cis.contains_key(dep) {
                out.push(dangling(EntityKind::ConfigurationItem, ci.id.as_str(), "depends_on", dep.as_str()));
            }
        }
    }
    out.extend(composition_cycles(p).into_iter().map(|cis| Violation::CompositionCycle { cis }));

    for asset in p.assets.values() {
        for ci in &asset.ci_ids {
            if !p.cis.contains_key(ci) {
                out.push(dangling(EntityKind::ItAsset, asset.id.as_str(), "ci_ids", ci.as_str()));
            }
        }
        if asset.ci_ids.is_empty() && asset.state != AssetState::ToBe {
            out.push(Violation::AssetWithoutCis { asset: asset.id.clone() });
        }
        if asset.state == AssetState::Operational && !asset.ci_ids.is_empty() {
            let has_operational = asset
                .ci_ids
                .iter()
                .filter_map(|id| p.cis.get(id))
                .any(|ci| ci.state == AssetState::Operational);
            if !has_operational {
                out.push(Violation::OperationalAssetWithoutOperationalCi { asset: asset.id.clone() });
            }
        }
    }

    let mut used_value_sources = BTreeSet::new();
    for vs in p.value_sources.values() {
        for asset in &vs.asset_ids {
            if !p.assets.contains_key(asset) {
                out.push(dangling(EntityKind::ValueSource, vs.id.as_str(), "asset_ids", asset.as_str()));
            }
        }
    }

    for item in p.debt_items.values() {
        if item.needs_linking {
            out.push(Violation::DebtNeedsLinking { debt: item.id.clone() });
        }
        match &item.ci_id {
            None => out.push(Violation::DebtWithoutCi { debt: item.id.clone() }),
            Some(ci) if !p.cis.contains_key(ci) => {
                out.push(dangling(EntityKind::DebtItem, item.id.as_str(), "ci_id", ci.as_str()))
            }
            Some(_) => {}
        }
        if item.value_source_ids.is_empty() {
            out.push(Violation::DebtWithoutValueSources { debt: item.id.clone() });
        }
        for vs in &item.value_source_ids {
            if p.value_sources.contains_key(vs) {
                used_value_sources.insert(vs.clone());
            } else {
                out.push(dangling(EntityKind::DebtItem, item.id.as_str(), "value_source_ids", vs.as_str()));
            }
        }
        if let Some(paid) = item.paid_date {
            if paid < item.created_date {
                out.push(Violation::PaidBeforeCreated { debt: item.id.clone() });
            }
        }
        let linked = item.ci_id.is_some() && !item.value_source_ids.is_empty();
        if linked && effective_cells(item, p).is_err() {
            out.push(Violation::UnlinkedDebt { debt: item.id.clone() });
        }
    }

    for vs in used_value_sources {
        if p.value_sources[&vs].asset_ids.is_empty() {
            out.push(Violation::ValueSourceWithoutAssets { value_source: vs });
        }
    }

    for metric in p.metrics.values() {
        let missing = match &metric.target {
            MetricTarget::ValueSource(id) => (!p.value_sources.contains_key(id)).then(|| id.to_string()),
            MetricTarget::ItAsset(id) => (!p.assets.contains_key(id)).then(|| id.to_string()),
        };
        if let Some(target) = missing {
            out.push(dangling(EntityKind::Metric, metric.id.as_str(), "target", &target));
        }
    }

    out.sort();
    out
}

/// Strongly connected components of the composition graph that contain a
/// cycle (size > 1, or a self-parent).
fn composition_cycles(p: &Portfolio) -> Vec<Vec<CiId>> {
    // Tarjan's algorithm, iterative to stay safe on deep hierarchies.
    let ids: Vec<&CiId> = p.cis.keys().collect();
    let index_of: BTreeMap<&CiId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let edges: Vec<Vec<usize>> = ids
        .iter()
        .map(|id| p.cis[*id].parent_ids.iter().filter_map(|parent| index_of.get(parent).copied()).collect())
        .collect();

    let n = ids.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut counter = 0;
    let mut cycles = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut work: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut next)) = work.last_mut() {
            if *next < edges[v].len() {
                let w = edges[v][*next];
                *next += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                let cyclic = component.len() > 1 || edges[v].contains(&v);
                if cyclic {
                    let mut cis: Vec<CiId> = component.into_iter().map(|i| ids[i].clone()).collect();
                    cis.sort();
                    cycles.push(cis);
                }
            }
        }
    }
    cycles.sort();
    cycles
}

/// One cell of the priority grid: asset state × business value × usage.
///
/// Usage is absent exactly when the asset is to-be operational, since a
/// system not yet in use has no usage frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RuleCell {
    asset_state: AssetState,
    business_value: BusinessValue,
    usage: Option<Usage>,
}

impl RuleCell {
    /// Builds the cell for an asset state and value-source classification,
    /// dropping usage for to-be assets.
    pub fn new(asset_state: AssetState, business_value: BusinessValue, usage: Usage) -> Self {
        let usage = (asset_state != AssetState::ToBe).then_some(usage);
        RuleCell { asset_state, business_value, usage }
    }

    pub fn to_be(business_value: BusinessValue) -> Self {
        RuleCell { asset_state: AssetState::ToBe, business_value, usage: None }
    }

    pub fn asset_state(&self) -> AssetState {
        self.asset_state
    }

    pub fn business_value(&self) -> BusinessValue {
        self.business_value
    }

    pub fn usage(&self) -> Option<Usage> {
        self.usage
    }

    /// The ten reachable cells in canonical order.
    pub fn all() -> Vec<RuleCell> {
        let mut cells = Vec::with_capacity(10);
        for state in AssetState::ALL {
            for value in BusinessValue::ALL {
                if state == AssetState::ToBe {
                    cells.push(RuleCell::to_be(value));
                } else {
                    for usage in Usage::ALL {
                        cells.push(RuleCell::new(state, value, usage));
                    }
                }
            }
        }
        cells
    }

    /// Interchange key, e.g. `operational/core/high` or `to_be/core`.
    pub fn key(&self) -> String {
        match self.usage {
            Some(usage) => format!("{}/{}/{}", self.asset_state.as_str(), self.business_value.as_str(), usage.as_str()),
            None => format!("{}/{}", self.asset_state.as_str(), self.business_value.as_str()),
        }
    }

    /// Short label used in report rows: operational cells omit the state.
    pub fn short_label(&self) -> String {
        match (self.asset_state, self.usage) {
            (AssetState::Operational, Some(usage)) => format!("{}/{}", self.business_value.as_str(), usage.as_str()),
            _ => self.key(),
        }
    }

    pub fn parse_key(key: &str) -> Result<RuleCell, CellKeyError> {
        let parts: Vec<&str> = key.trim().split('/').collect();
        let state = match parts.first().copied() {
            Some("operational") => AssetState::Operational,
            Some("to_be") => AssetState::ToBe,
            Some("legacy") => AssetState::Legacy,
            _ => return Err(CellKeyError::Unknown(key.to_owned())),
        };
        let value = match parts.get(1).copied() {
            Some("core") => BusinessValue::Core,
            Some("other") => BusinessValue::Other,
            _ => return Err(CellKeyError::Unknown(key.to_owned())),
        };
        let usage = match parts.get(2).copied() {
            None => None,
            Some("high") => Some(Usage::High),
            Some("low") => Some(Usage::Low),
            Some(_) => return Err(CellKeyError::Unknown(key.to_owned())),
        };
        if parts.len() > 3 {
            return Err(CellKeyError::Unknown(key.to_owned()));
        }
        match (state, usage) {
            (AssetState::ToBe, Some(_)) => Err(CellKeyError::UsageOnToBe(key.to_owned())),
            (AssetState::ToBe, None) => Ok(RuleCell::to_be(value)),
            (_, None) => Err(CellKeyError::MissingUsage(key.to_owned())),
            (_, Some(usage)) => Ok(RuleCell::new(state, value, usage)),
        }
    }
}

impl fmt::Display for RuleCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl Serialize for RuleCell {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for RuleCell {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let key = String::deserialize(deserializer)?;
        RuleCell::parse_key(&key).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CellKeyError {
    #[error("unknown rule cell key {0:?}")]
    Unknown(String),
    #[error("rule cell {0:?} attaches usage to a to_be asset")]
    UsageOnToBe(String),
    #[error("rule cell {0:?} is missing usage")]
    MissingUsage(String),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("debt item {0} reaches no (asset, value source) pair")]
    UnlinkedDebt(DebtId),
}

/// The rule cells a debt item falls into.
///
/// For each linked value source, every asset of that value source that
/// contains the item's CI (directly or through a composition ancestor)
/// contributes one cell.
pub fn effective_cells(item: &TechnicalDebtItem, p: &Portfolio) -> Result<BTreeSet<RuleCell>, LinkError> {
    let unlinked = || LinkError::UnlinkedDebt(item.id.clone());
    let ci = item.ci_id.as_ref().ok_or_else(unlinked)?;
    let reach = p.composition_closure(ci);
    let mut cells = BTreeSet::new();
    for vs in item.value_source_ids.iter().filter_map(|id| p.value_sources.get(id)) {
        for asset in vs.asset_ids.iter().filter_map(|id| p.assets.get(id)) {
            if asset.ci_ids.iter().any(|c| reach.contains(c)) {
                cells.insert(RuleCell::new(asset.state, vs.business_value, vs.usage));
            }
        }
    }
    if cells.is_empty() {
        return Err(unlinked());
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn ci(id: &str, state: AssetState, parents: &[&str]) -> ConfigurationItem {
        ConfigurationItem {
            id: id.into(),
            name: id.to_owned(),
            state,
            parent_ids: parents.iter().map(|p| CiId::from(*p)).collect(),
            depends_on: BTreeSet::new(),
        }
    }

    fn asset(id: &str, state: AssetState, cis: &[&str]) -> ItAsset {
        ItAsset { id: id.into(), name: id.to_owned(), state, ci_ids: cis.iter().map(|c| CiId::from(*c)).collect() }
    }

    fn vs(id: &str, value: BusinessValue, usage: Usage, assets: &[&str]) -> ValueSource {
        ValueSource {
            id: id.into(),
            name: id.to_owned(),
            business_value: value,
            usage,
            asset_ids: assets.iter().map(|a| AssetId::from(*a)).collect(),
        }
    }

    fn debt(id: &str, ci: &str, vss: &[&str]) -> TechnicalDebtItem {
        TechnicalDebtItem {
            id: id.into(),
            name: id.to_owned(),
            description: String::new(),
            created_date: date("2020-03-01"),
            paid_date: None,
            debt_type: DebtType::Bug,
            technical_priority: Level::Medium,
            technical_effort: Some(Level::Low),
            ci_id: Some(ci.into()),
            value_source_ids: vss.iter().map(|v| ValueSourceId::from(*v)).collect(),
            tracker: None,
            tracker_issue_id: None,
            needs_linking: false,
            factor_tags: BTreeSet::new(),
        }
    }

    #[test]
    fn empty_portfolio_is_consistent() {
        assert!(validate_portfolio(&Portfolio::default()).is_empty());
    }

    #[test]
    fn operational_asset_needs_operational_ci() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("mobile-api", AssetState::ToBe, &[]));
        p.insert_asset(asset("sales", AssetState::Operational, &["mobile-api"]));
        assert_eq!(
            validate_portfolio(&p),
            vec![Violation::OperationalAssetWithoutOperationalCi { asset: "sales".into() }]
        );
    }

    #[test]
    fn two_node_composition_cycle() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("a", AssetState::Operational, &["b"]));
        p.insert_ci(ci("b", AssetState::Operational, &["a"]));
        assert_eq!(validate_portfolio(&p), vec![Violation::CompositionCycle { cis: vec!["a".into(), "b".into()] }]);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("a", AssetState::Operational, &["a"]));
        assert_eq!(validate_portfolio(&p), vec![Violation::CompositionCycle { cis: vec!["a".into()] }]);
    }

    #[test]
    fn dangling_refs_and_debt_without_links() {
        let mut p = Portfolio::default();
        p.insert_asset(asset("web", AssetState::ToBe, &["ghost"]));
        let mut item = debt("td1", "nowhere", &[]);
        item.paid_date = Some(date("2020-01-01"));
        p.insert_debt(item);
        let v = validate_portfolio(&p);
        assert!(v.contains(&Violation::DebtWithoutValueSources { debt: "td1".into() }));
        assert!(v.contains(&Violation::PaidBeforeCreated { debt: "td1".into() }));
        assert_eq!(v.iter().filter(|x| matches!(x, Violation::DanglingReference { .. })).count(), 2);
    }

    #[test]
    fn effective_cells_operational_core_high() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("web-front", AssetState::Operational, &[]));
        p.insert_asset(asset("sales-web", AssetState::Operational, &["web-front"]));
        p.insert_value_source(vs("showcase", BusinessValue::Core, Usage::High, &["sales-web"]));
        let cells = effective_cells(&debt("td", "web-front", &["showcase"]), &p).unwrap();
        assert_eq!(cells.into_iter().collect::<Vec<_>>(), vec![RuleCell::new(AssetState::Operational, BusinessValue::Core, Usage::High)]);
    }

    #[test]
    fn effective_cells_drop_usage_for_to_be() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("app", AssetState::ToBe, &[]));
        p.insert_asset(asset("sales-mobile", AssetState::ToBe, &["app"]));
        p.insert_value_source(vs("checkout", BusinessValue::Core, Usage::High, &["sales-mobile"]));
        let cells = effective_cells(&debt("td", "app", &["checkout"]), &p).unwrap();
        assert_eq!(cells.into_iter().collect::<Vec<_>>(), vec![RuleCell::to_be(BusinessValue::Core)]);
    }

    #[test]
    fn effective_cells_shared_ci_enumerates_assets() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("db", AssetState::Operational, &[]));
        p.insert_asset(asset("new", AssetState::Operational, &["db"]));
        p.insert_asset(asset("old", AssetState::Legacy, &["db"]));
        p.insert_value_source(vs("report", BusinessValue::Other, Usage::Low, &["new", "old"]));
        let item = debt("td", "db", &["report"]);

        // brute force: every (asset, value source) pair whose asset holds the CI
        let mut expected = BTreeSet::new();
        for a in p.assets.values() {
            for v in p.value_sources.values() {
                if v.asset_ids.contains(&a.id) && a.ci_ids.contains(&CiId::from("db")) && item.value_source_ids.contains(&v.id) {
                    expected.insert(RuleCell::new(a.state, v.business_value, v.usage));
                }
            }
        }
        assert_eq!(expected.len(), 2);
        assert_eq!(effective_cells(&item, &p).unwrap(), expected);
    }

    #[test]
    fn effective_cells_through_composition_parent() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("system", AssetState::Operational, &[]));
        p.insert_ci(ci("module", AssetState::Operational, &["system"]));
        p.insert_ci(ci("other", AssetState::Operational, &[]));
        p.insert_asset(asset("web", AssetState::Operational, &["system"]));
        p.insert_value_source(vs("search", BusinessValue::Other, Usage::High, &["web"]));
        assert_eq!(effective_cells(&debt("td", "module", &["search"]), &p).unwrap().len(), 1);
        // depends_on does not transmit membership
        p.cis.get_mut(&CiId::from("other")).unwrap().depends_on.insert("system".into());
        assert_eq!(
            effective_cells(&debt("td", "other", &["search"]), &p),
            Err(LinkError::UnlinkedDebt("td".into()))
        );
    }

    #[test]
    fn cell_keys_round_trip_and_reject_bad_shapes() {
        for cell in RuleCell::all() {
            assert_eq!(RuleCell::parse_key(&cell.key()).unwrap(), cell);
        }
        assert_eq!(RuleCell::all().len(), 10);
        assert!(matches!(RuleCell::parse_key("to_be/core/high"), Err(CellKeyError::UsageOnToBe(_))));
        assert!(matches!(RuleCell::parse_key("legacy/core"), Err(CellKeyError::MissingUsage(_))));
        assert!(matches!(RuleCell::parse_key("retired/core/high"), Err(CellKeyError::Unknown(_))));
    }

    #[test]
    fn portfolio_json_uses_interchange_arrays() {
        let mut p = Portfolio::default();
        p.insert_ci(ci("web-front", AssetState::Operational, &[]));
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["configuration_items"][0]["state"], "operational");
        assert!(json["it_assets"].as_array().unwrap().is_empty());
        let back: Portfolio = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }
}
