#![allow(dead_code)]

pub mod checks;
pub mod fixtures;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Days, NaiveDate, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::Rng;

use tdprio_core::domain::{
    AssetId, AssetState, BusinessValue, CiId, ConfigurationItem, DebtType, ItAsset, Level, Portfolio, RuleCell,
    TechnicalDebtItem, Usage, ValueSource, ValueSourceId,
};
use tdprio_core::rule::PriorityRule;

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

pub fn plus_days(d: NaiveDate, n: u64) -> NaiveDate {
    d.checked_add_days(Days::new(n)).unwrap()
}

pub fn minus_days(d: NaiveDate, n: u64) -> NaiveDate {
    d.checked_sub_days(Days::new(n)).unwrap()
}

pub fn ts(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap()
}

pub fn debt(id: &str, ci: Option<&str>, vss: &[&str], created: NaiveDate) -> TechnicalDebtItem {
    TechnicalDebtItem {
        id: id.into(),
        name: id.to_owned(),
        description: String::new(),
        created_date: created,
        paid_date: None,
        debt_type: DebtType::Code,
        technical_priority: Level::Medium,
        technical_effort: None,
        ci_id: ci.map(CiId::from),
        value_source_ids: vss.iter().map(|v| ValueSourceId::from(*v)).collect(),
        tracker: None,
        tracker_issue_id: None,
        needs_linking: false,
        factor_tags: BTreeSet::new(),
    }
}

/// A portfolio with one isolated CI → asset → value source chain per rule
/// cell, so items can be dropped into a chosen cell.
pub struct CellFixture {
    pub portfolio: Portfolio,
    pub chains: BTreeMap<RuleCell, (String, String)>,
}

impl CellFixture {
    pub fn new() -> CellFixture {
        let mut p = Portfolio::default();
        let mut chains = BTreeMap::new();
        for (n, cell) in RuleCell::all().into_iter().enumerate() {
            let (ci, asset, vs) = (format!("ci{n}"), format!("asset{n}"), format!("vs{n}"));
            p.insert_ci(ConfigurationItem {
                id: ci.as_str().into(),
                name: ci.clone(),
                state: cell.asset_state(),
                parent_ids: BTreeSet::new(),
                depends_on: BTreeSet::new(),
            });
            p.insert_asset(ItAsset {
                id: asset.as_str().into(),
                name: asset.clone(),
                state: cell.asset_state(),
                ci_ids: [CiId::from(ci.as_str())].into(),
            });
            p.insert_value_source(ValueSource {
                id: vs.as_str().into(),
                name: vs.clone(),
                business_value: cell.business_value(),
                // to_be cells ignore usage; any value will do
                usage: cell.usage().unwrap_or(Usage::High),
                asset_ids: [AssetId::from(asset.as_str())].into(),
            });
            chains.insert(cell, (ci, vs));
        }
        CellFixture { portfolio: p, chains }
    }

    pub fn item(&self, id: &str, cell: RuleCell, created: NaiveDate) -> TechnicalDebtItem {
        let (ci, vs) = &self.chains[&cell];
        debt(id, Some(ci), &[vs], created)
    }

    pub fn add(&mut self, item: TechnicalDebtItem) {
        self.portfolio.insert_debt(item);
    }
}

pub fn cell(state: AssetState, value: BusinessValue, usage: Usage) -> RuleCell {
    RuleCell::new(state, value, usage)
}

/// Random portfolio of at most 20 entities with composition edges, shared
/// CIs and some deliberately unlinked debt.
pub fn random_portfolio(rng: &mut StdRng) -> Portfolio {
    let n_ci = rng.random_range(1..=5);
    let n_asset = rng.random_range(1..=4);
    let n_vs = rng.random_range(1..=4);
    let n_debt = rng.random_range(1..=20 - n_ci - n_asset - n_vs);
    let mut p = Portfolio::default();
    let states = AssetState::ALL;
    for i in 0..n_ci {
        let mut parents = BTreeSet::new();
        // parents only point at lower indices, so composition stays acyclic
        if i > 0 && rng.random_bool(0.4) {
            parents.insert(CiId::from(format!("c{}", rng.random_range(0..i))));
        }
        let mut depends_on = BTreeSet::new();
        if rng.random_bool(0.3) {
            depends_on.insert(CiId::from(format!("c{}", rng.random_range(0..n_ci))));
        }
        p.insert_ci(ConfigurationItem {
            id: format!("c{i}").into(),
            name: String::new(),
            state: *states.choose(rng).unwrap(),
            parent_ids: parents,
            depends_on,
        });
    }
    for i in 0..n_asset {
        let ci_ids = (0..n_ci).filter(|_| rng.random_bool(0.4)).map(|c| CiId::from(format!("c{c}"))).collect();
        p.insert_asset(ItAsset { id: format!("a{i}").into(), name: String::new(), state: *states.choose(rng).unwrap(), ci_ids });
    }
    for i in 0..n_vs {
        let asset_ids = (0..n_asset).filter(|_| rng.random_bool(0.5)).map(|a| AssetId::from(format!("a{a}"))).collect();
        p.insert_value_source(ValueSource {
            id: format!("v{i}").into(),
            name: String::new(),
            business_value: *BusinessValue::ALL.choose(rng).unwrap(),
            usage: *Usage::ALL.choose(rng).unwrap(),
            asset_ids,
        });
    }
    let start = date("2020-01-01");
    for i in 0..n_debt {
        let ci = format!("c{}", rng.random_range(0..n_ci));
        let vss: Vec<String> = (0..n_vs).filter(|_| rng.random_bool(0.5)).map(|v| format!("v{v}")).collect();
        let vss: Vec<&str> = vss.iter().map(String::as_str).collect();
        // few distinct dates so rank ties fall through to the date and id
        let created = plus_days(start, rng.random_range(0..4));
        let mut item = debt(&format!("d{i:02}"), Some(&ci), &vss, created);
        item.technical_priority = *Level::ALL.choose(rng).unwrap();
        p.insert_debt(item);
    }
    p
}

pub fn random_rule(rng: &mut StdRng, id: &str) -> PriorityRule {
    PriorityRule::from_ranks(id, RuleCell::all().into_iter().map(|c| (c, rng.random_range(1..=10u8))))
}

/// CIs an item's CI reaches by following composition parents, by fixpoint
/// iteration over the whole CI table.
pub fn oracle_reach(p: &Portfolio, start: &CiId) -> BTreeSet<CiId> {
    let mut reach: BTreeSet<CiId> = [start.clone()].into();
    loop {
        let before = reach.len();
        for ci in p.cis.values() {
            if reach.contains(&ci.id) {
                reach.extend(ci.parent_ids.iter().cloned());
            }
        }
        if reach.len() == before {
            return reach;
        }
    }
}

/// Every (asset, value source) pair the item traces to, enumerated directly.
pub fn oracle_cells(item: &TechnicalDebtItem, p: &Portfolio) -> BTreeSet<RuleCell> {
    let Some(ci) = &item.ci_id else { return BTreeSet::new() };
    let reach = oracle_reach(p, ci);
    let mut out = BTreeSet::new();
    for a in p.assets.values() {
        for v in p.value_sources.values() {
            if item.value_source_ids.contains(&v.id)
                && v.asset_ids.contains(&a.id)
                && a.ci_ids.iter().any(|c| reach.contains(c))
            {
                out.insert(RuleCell::new(a.state, v.business_value, v.usage));
            }
        }
    }
    out
}

pub fn oracle_rank(item: &TechnicalDebtItem, rule: &PriorityRule, p: &Portfolio) -> Option<u8> {
    oracle_cells(item, p).iter().map(|c| rule.rank_of(c).get()).min()
}

/// Open items ordered by (rank, created, id) with ranks from the oracle.
pub fn oracle_order(rule: &PriorityRule, p: &Portfolio) -> Vec<String> {
    let mut keyed: Vec<(u8, NaiveDate, String)> = p
        .debt_items
        .values()
        .filter(|i| i.paid_date.is_none())
        .filter_map(|i| oracle_rank(i, rule, p).map(|r| (r, i.created_date, i.id.to_string())))
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(_, _, id)| id).collect()
}
