//! Application operations over the event store. Both the HTTP server and
//! the offline CLI drive the system through [`App`]; neither holds business
//! logic of its own.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::agreement::{self, AgreementScore, Dimension, Disagreement, RatingEvent};
use crate::analytics::{self, DailySeries, DateRange, EffortDistribution, LevelRow, PaymentStats, TrendLine, TypeShare};
use crate::domain::{
    validate_portfolio, BusinessMetric, DebtId, EntityKind, Horizon, MetricTarget, Portfolio, TechnicalDebtItem,
    Violation,
};
use crate::ingest::{self, ParsedFeed, SyncReport, TypeMap};
use crate::onboard::{self, Workshop};
use crate::rule::{
    compare_rules, decompose_rules, rank_backlog, Backlog, Bucket, DecompositionRow, EngineError, PriorityRule, Rank,
    RuleComparison, RuleDraft,
};
use crate::store::{
    AsOf, Change, DebtPayment, Entity, EntityRef, RuleRef, Snapshot, Store, StoreError, SyncApplied,
};

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytics(#[from] analytics::AnalyticsError),
    #[error(transparent)]
    Agreement(#[from] agreement::AgreementError),
    #[error(transparent)]
    Ingest(#[from] ingest::IngestError),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("no active priority rule; create one and activate it")]
    NoActiveRule,
    #[error("portfolio has {} violation(s)", .0.len())]
    Violations(Vec<Violation>),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl AppError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            AppError::Store(StoreError::ValidationFailed(_)) => "validation_failed",
            AppError::Store(StoreError::StorageFailed(_)) => "storage_failed",
            AppError::Store(StoreError::OutOfRange { .. }) => "out_of_range",
            AppError::Engine(EngineError::InvalidRule(_)) => "invalid_rule",
            AppError::Engine(EngineError::Link(_)) => "unlinked_debt",
            AppError::Analytics(analytics::AnalyticsError::EmptyRange { .. }) => "empty_range",
            AppError::Analytics(analytics::AnalyticsError::InsufficientPoints(_)) => "insufficient_points",
            AppError::Agreement(agreement::AgreementError::NoCommonSubjects) => "no_common_subjects",
            AppError::Agreement(agreement::AgreementError::NoCompleteSubjects) => "no_complete_subjects",
            AppError::Agreement(_) => "invalid_rating",
            AppError::Ingest(_) => "malformed_feed",
            AppError::NotFound(_) => "not_found",
            AppError::NoActiveRule => "no_active_rule",
            AppError::Violations(v) if v.iter().any(|x| matches!(x, Violation::UnlinkedDebt { .. })) => {
                "unlinked_debt"
            }
            AppError::Violations(_) => "portfolio_violations",
            AppError::BadRequest(_) => "bad_request",
        }
    }

    /// Structured detail for error payloads.
    pub fn details(&self) -> serde_json::Value {
        match self {
            AppError::Engine(EngineError::InvalidRule(v)) => serde_json::to_value(v).unwrap_or_default(),
            AppError::Violations(v) => serde_json::to_value(v).unwrap_or_default(),
            AppError::Store(StoreError::OutOfRange { requested, latest }) => {
                serde_json::json!({"requested": requested, "latest": latest})
            }
            _ => serde_json::Value::Null,
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub struct App {
    store: Store,
    clock: Clock,
    type_map: TypeMap,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDelta {
    pub debt_id: DebtId,
    pub active_rank: Rank,
    pub candidate_rank: Rank,
    /// `candidate_rank - active_rank`; negative means more urgent.
    pub rank_change: i32,
    pub active_bucket: Bucket,
    pub candidate_bucket: Bucket,
    pub bucket_changed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhatIf {
    pub active_rule: RuleRef,
    pub backlog: Backlog,
    pub deltas: Vec<ItemDelta>,
}

/// Ranks the open backlog under `candidate` and diffs it against `active`.
pub fn what_if(portfolio: &Portfolio, active: &PriorityRule, candidate: &PriorityRule) -> WhatIf {
    let items = portfolio.debt_items.values();
    let before = rank_backlog(items.clone(), active, portfolio, false);
    let after = rank_backlog(items, candidate, portfolio, false);
    let old: BTreeMap<&DebtId, (Rank, Bucket)> = before.items.iter().map(|i| (&i.debt_id, (i.rank, i.bucket))).collect();
    let mut deltas: Vec<ItemDelta> = after
        .items
        .iter()
        .filter_map(|i| {
            let (active_rank, active_bucket) = *old.get(&i.debt_id)?;
            Some(ItemDelta {
                debt_id: i.debt_id.clone(),
                active_rank,
                candidate_rank: i.rank,
                rank_change: i.rank.get() as i32 - active_rank.get() as i32,
                active_bucket,
                candidate_bucket: i.bucket,
                bucket_changed: active_bucket != i.bucket,
            })
        })
        .collect();
    deltas.sort_by(|a, b| a.debt_id.cmp(&b.debt_id));
    WhatIf { active_rule: RuleRef { rule_id: active.id.clone(), version: active.version }, backlog: after, deltas }
}

/// Optional report window and period split, as given on the command line or
/// in a query string.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub rule: Option<String>,
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
    #[serde(default)]
    pub split: Option<NaiveDate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub range: DateRange,
    pub total: DailySeries,
    pub groups: Vec<DailySeries>,
    /// Trend per group label over the whole range, and before/after the split.
    pub trends: BTreeMap<String, GroupTrends>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupTrends {
    pub overall: Option<TrendLine>,
    pub period_a: Option<TrendLine>,
    pub period_b: Option<TrendLine>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentsReport {
    pub window: DateRange,
    pub groups: Vec<PaymentStats>,
    pub total: PaymentStats,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsByHorizon {
    pub immediate: Vec<BusinessMetric>,
    pub short_term: Vec<BusinessMetric>,
    pub long_term: Vec<BusinessMetric>,
}

impl App {
    pub fn new(store: Store) -> App {
        App { store, clock: Box::new(Utc::now), type_map: TypeMap::default() }
    }

    pub fn open(dir: impl AsRef<Path>) -> AppResult<App> {
        Ok(App::new(Store::open(dir)?))
    }

    pub fn in_memory() -> App {
        App::new(Store::in_memory())
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> App {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_type_map(mut self, type_map: TypeMap) -> App {
        self.type_map = type_map;
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn snapshot(&self) -> &Snapshot {
        self.store.snapshot()
    }

    pub fn digest(&self) -> String {
        self.snapshot().digest()
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    fn commit(&mut self, changes: Vec<Change>, actor: &str) -> AppResult<Vec<u64>> {
        // check the whole batch against a scratch state so a rejection leaves
        // nothing half-written
        let mut scratch = self.snapshot().clone();
        for change in &changes {
            scratch.check(change)?;
            scratch.apply(change.clone());
        }
        let now = self.now();
        Ok(self.store.append_all(changes, now, actor)?)
    }

    pub fn snapshot_as_of(&self, as_of: Option<AsOf>) -> AppResult<Snapshot> {
        match as_of {
            None => Ok(self.snapshot().clone()),
            Some(a) => Ok(self.store.snapshot_as_of(a)?),
        }
    }

    // ---- portfolio ----

    pub fn portfolio(&self) -> &Portfolio {
        &self.snapshot().portfolio
    }

    pub fn violations(&self) -> Vec<Violation> {
        validate_portfolio(self.portfolio())
    }

    /// Replaces the portfolio: deletes what is gone, upserts what changed.
    pub fn put_portfolio(&mut self, next: Portfolio, actor: &str) -> AppResult<Vec<u64>> {
        let cur = self.portfolio().clone();
        let mut changes = Vec::new();
        macro_rules! diff {
            ($field:ident, $kind:expr, $variant:ident) => {
                for id in cur.$field.keys().filter(|id| !next.$field.contains_key(*id)) {
                    changes.push(Change::Delete(EntityRef { entity: $kind, id: id.to_string() }));
                }
                for (id, v) in &next.$field {
                    if cur.$field.get(id) != Some(v) {
                        changes.push(Change::Upsert(Entity::$variant(v.clone())));
                    }
                }
            };
        }
        diff!(debt_items, EntityKind::DebtItem, DebtItem);
        diff!(metrics, EntityKind::Metric, Metric);
        diff!(value_sources, EntityKind::ValueSource, ValueSource);
        diff!(assets, EntityKind::ItAsset, ItAsset);
        diff!(cis, EntityKind::ConfigurationItem, ConfigurationItem);
        self.commit(changes, actor)
    }

    pub fn upsert(&mut self, entity: Entity, actor: &str) -> AppResult<u64> {
        Ok(self.commit(vec![Change::Upsert(entity)], actor)?[0])
    }

    pub fn delete(&mut self, entity: EntityKind, id: &str, actor: &str) -> AppResult<u64> {
        Ok(self.commit(vec![Change::Delete(EntityRef { entity, id: id.to_owned() })], actor)?[0])
    }

    /// Registers a debt item. An item that names a CI or value sources must
    /// trace to the business through them; an item naming neither is kept
    /// as needing linking.
    pub fn add_debt(&mut self, mut item: TechnicalDebtItem, actor: &str) -> AppResult<u64> {
        if item.ci_id.is_none() && item.value_source_ids.is_empty() {
            item.needs_linking = true;
        } else {
            let mut p = self.portfolio().clone();
            p.insert_debt(item.clone());
            let id = item.id.as_str();
            let own: Vec<Violation> = validate_portfolio(&p)
                .into_iter()
                .filter(|v| match v {
                    Violation::DanglingReference { entity: EntityKind::DebtItem, id: d, .. } => d == id,
                    Violation::UnlinkedDebt { debt } | Violation::PaidBeforeCreated { debt } => debt.as_str() == id,
                    _ => false,
                })
                .collect();
            if !own.is_empty() {
                return Err(AppError::Violations(own));
            }
        }
        self.upsert(Entity::DebtItem(item), actor)
    }

    pub fn debt(&self, id: &str) -> AppResult<&TechnicalDebtItem> {
        self.portfolio().debt_items.get(id).ok_or_else(|| AppError::NotFound(format!("debt item {id}")))
    }

    pub fn pay_debt(&mut self, id: &str, paid_date: NaiveDate, actor: &str) -> AppResult<u64> {
        self.debt(id)?;
        Ok(self.commit(vec![Change::DebtPaid(DebtPayment { debt_id: id.into(), paid_date })], actor)?[0])
    }

    /// Links a debt item to a CI and value sources and clears `needs_linking`.
    pub fn link_debt(
        &mut self,
        id: &str,
        ci: Option<&str>,
        value_sources: &[String],
        actor: &str,
    ) -> AppResult<u64> {
        let mut item = self.debt(id)?.clone();
        if let Some(ci) = ci {
            item.ci_id = Some(ci.into());
        }
        item.value_source_ids.extend(value_sources.iter().map(|v| v.as_str().into()));
        item.needs_linking = item.ci_id.is_none() || item.value_source_ids.is_empty();
        self.upsert(Entity::DebtItem(item), actor)
    }

    pub fn onboard(&mut self, workshop: &Workshop, actor: &str) -> AppResult<onboard::Onboarding> {
        let result = onboard::onboard(self.portfolio(), workshop);
        if !result.is_consistent() {
            return Err(AppError::Violations(result.violations));
        }
        let mut rule = None;
        if let Some(draft) = &workshop.rule {
            rule = Some(self.prepare_rule(draft)?);
        }
        self.put_portfolio(result.portfolio.clone(), actor)?;
        if let Some(rule) = rule {
            let r = RuleRef { rule_id: rule.id.clone(), version: rule.version };
            self.commit(vec![Change::RuleCreated(rule), Change::RuleActivated(r)], actor)?;
        }
        Ok(result)
    }

    // ---- rules ----

    fn prepare_rule(&self, draft: &RuleDraft) -> AppResult<PriorityRule> {
        let today = self.now().date_naive();
        let default_id = format!("rule-{}", self.snapshot().rules.len() + 1);
        let mut rule = PriorityRule::from_draft(draft, &default_id, today)?;
        rule.version = self.snapshot().latest_version(&rule.id).map_or(1, |v| v + 1);
        Ok(rule)
    }

    /// Stores a rule; an existing id gets a new version.
    pub fn add_rule(&mut self, draft: &RuleDraft, actor: &str) -> AppResult<PriorityRule> {
        let rule = self.prepare_rule(draft)?;
        self.commit(vec![Change::RuleCreated(rule.clone())], actor)?;
        Ok(rule)
    }

    pub fn rules(&self) -> &[PriorityRule] {
        &self.snapshot().rules
    }

    /// Latest version of each rule.
    pub fn latest_rules(&self) -> Vec<&PriorityRule> {
        let ids: BTreeSet<&str> = self.rules().iter().map(|r| r.id.as_str()).collect();
        ids.into_iter().filter_map(|id| self.snapshot().rule(id, None)).collect()
    }

    pub fn activate_rule(&mut self, rule_id: &str, version: Option<u32>, actor: &str) -> AppResult<RuleRef> {
        let rule = self
            .snapshot()
            .rule(rule_id, version)
            .ok_or_else(|| AppError::NotFound(format!("rule {rule_id}")))?;
        let r = RuleRef { rule_id: rule.id.clone(), version: rule.version };
        self.commit(vec![Change::RuleActivated(r.clone())], actor)?;
        Ok(r)
    }

    pub fn active_rule(&self) -> AppResult<&PriorityRule> {
        self.snapshot().active().ok_or(AppError::NoActiveRule)
    }

    /// `id` or `id@version`; `None` means the active rule.
    pub fn resolve_rule(&self, spec: Option<&str>) -> AppResult<&PriorityRule> {
        match spec {
            None => self.active_rule(),
            Some(s) => {
                let (id, version) = match s.split_once('@') {
                    Some((id, v)) => {
                        (id, Some(v.parse().map_err(|_| AppError::BadRequest(format!("bad rule version in {s:?}")))?))
                    }
                    None => (s, None),
                };
                self.snapshot().rule(id, version).ok_or_else(|| AppError::NotFound(format!("rule {s}")))
            }
        }
    }

    pub fn compare(&self, specs: &[String]) -> AppResult<RuleComparison> {
        let rules = self.rules_for(specs)?;
        Ok(compare_rules(&rules))
    }

    pub fn decompose(&self, specs: &[String]) -> AppResult<Vec<DecompositionRow>> {
        let rules = self.rules_for(specs)?;
        Ok(decompose_rules(&rules))
    }

    fn rules_for(&self, specs: &[String]) -> AppResult<Vec<PriorityRule>> {
        if specs.is_empty() {
            return Ok(self.latest_rules().into_iter().cloned().collect());
        }
        specs.iter().map(|s| self.resolve_rule(Some(s)).cloned()).collect()
    }

    pub fn backlog(&self, rule: Option<&str>, include_paid: bool) -> AppResult<Backlog> {
        let rule = self.resolve_rule(rule)?;
        let p = self.portfolio();
        Ok(rank_backlog(p.debt_items.values(), rule, p, include_paid))
    }

    /// Read-only evaluation of a candidate rule; nothing is persisted.
    pub fn what_if(&self, draft: &RuleDraft, as_of: Option<AsOf>) -> AppResult<WhatIf> {
        let candidate = PriorityRule::from_draft(draft, "what-if", self.now().date_naive())?;
        let snap = self.snapshot_as_of(as_of)?;
        let active = snap.active().ok_or(AppError::NoActiveRule)?;
        Ok(what_if(&snap.portfolio, active, &candidate))
    }

    // ---- analytics ----

    fn window(&self, q: &ReportQuery) -> AppResult<DateRange> {
        let items = self.portfolio().debt_items.values();
        let covering = DateRange::covering(items);
        let today = self.now().date_naive();
        let start = q.from.or(covering.map(|r| r.start)).unwrap_or(today);
        let end = q.to.or(covering.map(|r| r.end)).unwrap_or(today);
        Ok(DateRange::new(start, end)?)
    }

    pub fn crosstab(&self, q: &ReportQuery) -> AppResult<Vec<LevelRow>> {
        let rule = self.resolve_rule(q.rule.as_deref())?;
        let p = self.portfolio();
        Ok(analytics::priority_crosstab(p.debt_items.values(), rule, p))
    }

    pub fn payments(&self, q: &ReportQuery) -> AppResult<PaymentsReport> {
        let rule = self.resolve_rule(q.rule.as_deref())?;
        let window = self.window(q)?;
        let p = self.portfolio();
        Ok(PaymentsReport {
            window,
            groups: analytics::payment_stats(p.debt_items.values(), rule, p, window),
            total: analytics::payment_totals(p.debt_items.values(), window),
        })
    }

    pub fn series(&self, q: &ReportQuery) -> AppResult<SeriesReport> {
        let rule = self.resolve_rule(q.rule.as_deref())?;
        let range = self.window(q)?;
        let p = self.portfolio();
        let groups = analytics::accumulation_series(p.debt_items.values(), rule, p, range, q.split)?;
        let total = analytics::total_series(p.debt_items.values(), range, q.split)?;
        let trends = std::iter::once(&total)
            .chain(&groups)
            .map(|s| {
                let (period_a, period_b) = match q.split {
                    Some(split) => analytics::split_trends(s, range, split),
                    None => (None, None),
                };
                (s.label.clone(), GroupTrends { overall: analytics::fit_trend(s, range).ok(), period_a, period_b })
            })
            .collect();
        Ok(SeriesReport { range, total, groups, trends })
    }

    pub fn effort(&self, q: &ReportQuery) -> AppResult<EffortDistribution> {
        let rule = self.resolve_rule(q.rule.as_deref())?;
        let window = self.window(q)?;
        let p = self.portfolio();
        Ok(analytics::effort_distribution(p.debt_items.values(), rule, p, window))
    }

    pub fn types(&self) -> Vec<TypeShare> {
        analytics::debt_type_distribution(self.portfolio().debt_items.values())
    }

    // ---- ratings ----

    pub fn rate(&mut self, rating: RatingEvent, actor: &str) -> AppResult<u64> {
        Ok(self.commit(vec![Change::Rating(rating)], actor)?[0])
    }

    pub fn ratings(&self) -> Vec<RatingEvent> {
        self.snapshot().rating_events()
    }

    pub fn agreement(
        &self,
        raters: Option<&[String]>,
        dimension: Dimension,
        as_of: Option<AsOf>,
    ) -> AppResult<BTreeMap<String, AgreementScore>> {
        let ratings = self.snapshot_as_of(as_of)?.rating_events();
        Ok(agreement::agreement_report(&ratings, dimension, raters))
    }

    pub fn disagreements(&self, dimension: Dimension) -> Vec<Disagreement> {
        agreement::disagreements(&self.ratings(), dimension)
    }

    // ---- tracker ----

    pub fn sync(&mut self, feed: &ParsedFeed, actor: &str) -> AppResult<SyncReport> {
        let outcome = ingest::import_debt(&feed.tracker, &feed.issues, &self.type_map, self.portfolio());
        let report = SyncReport { malformed: feed.malformed.clone(), ..outcome.report.clone() };
        let items: Vec<TechnicalDebtItem> = outcome.new_items.into_iter().chain(outcome.updated_items).collect();
        if !items.is_empty() {
            let applied = SyncApplied { tracker: feed.tracker.clone(), report: report.clone(), items };
            self.commit(vec![Change::Sync(applied)], actor)?;
        }
        Ok(report)
    }

    // ---- business impact canvas ----

    pub fn metrics(&self) -> MetricsByHorizon {
        let mut out = MetricsByHorizon { immediate: Vec::new(), short_term: Vec::new(), long_term: Vec::new() };
        for m in self.portfolio().metrics.values() {
            match m.horizon {
                Horizon::Immediate => out.immediate.push(m.clone()),
                Horizon::ShortTerm => out.short_term.push(m.clone()),
                Horizon::LongTerm => out.long_term.push(m.clone()),
            }
        }
        out
    }

    pub fn metrics_for_asset(&self, asset: &str) -> Vec<&BusinessMetric> {
        let p = self.portfolio();
        p.metrics
            .values()
            .filter(|m| match &m.target {
                MetricTarget::ItAsset(a) => a.as_str() == asset,
                MetricTarget::ValueSource(v) => p.value_sources.get(v).is_some_and(|vs| vs.asset_ids.contains(asset)),
            })
            .collect()
    }
}
