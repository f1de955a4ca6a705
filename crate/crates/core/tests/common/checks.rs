//! Property checks shared by the focused test files and the acceptance run.
//! Each returns `Err` with a description of the first counterexample.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use tdprio_core::agreement::{cohen_kappa, fleiss_kappa, AgreementScore, Dimension, RatingEvent};
use tdprio_core::domain::{
    AssetId, AssetState, BusinessValue, CiId, ConfigurationItem, DebtType, EntityKind, ItAsset, Level, RuleCell,
    Usage, ValueSource,
};
use tdprio_core::ingest::{import_debt, TrackerIssue, TypeMap};
use tdprio_core::rule::{business_priority, rank_backlog, PriorityRule};
use tdprio_core::store::{Change, DebtPayment, Entity, EntityRef, RuleRef, Snapshot, Store, SyncApplied};

use super::{date, debt, oracle_cells, oracle_order, oracle_rank, plus_days, random_portfolio, random_rule, ts};

fn order(rule: &PriorityRule, p: &tdprio_core::Portfolio) -> Vec<String> {
    rank_backlog(p.debt_items.values(), rule, p, false).items.iter().map(|i| i.debt_id.to_string()).collect()
}

/// Min-rank aggregation, monotone relabelling and rule-edit locality on one
/// random portfolio and rule.
pub fn engine_case(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let p = random_portfolio(&mut rng);
    let rule = random_rule(&mut rng, "r");

    // aggregation: engine rank equals the brute-force minimum
    for item in p.debt_items.values() {
        let got = business_priority(item, &rule, &p).ok().map(|r| r.get());
        let want = oracle_rank(item, &rule, &p);
        if got != want {
            return Err(format!("seed {seed}: {} ranked {got:?}, oracle {want:?}", item.id));
        }
    }
    let ranked = order(&rule, &p);
    if ranked != oracle_order(&rule, &p) {
        return Err(format!("seed {seed}: backlog order differs from oracle"));
    }

    // relabel: a strictly increasing map on the ranks in use keeps the order
    let used: Vec<u8> = rule.used_ranks().iter().map(|r| r.get()).collect();
    let mut targets: Vec<u8> = rand::seq::index::sample(&mut rng, 10, used.len())
        .into_iter()
        .map(|i| i as u8 + 1)
        .collect();
    targets.sort();
    let f: BTreeMap<u8, u8> = used.iter().copied().zip(targets).collect();
    let relabelled =
        PriorityRule::from_ranks("r2", RuleCell::all().into_iter().map(|c| (c, f[&rule.rank_of(&c).get()])));
    if order(&relabelled, &p) != ranked {
        return Err(format!("seed {seed}: relabel {f:?} changed the backlog order"));
    }

    // locality: editing one cell moves only items whose cells include it
    let edited_cell = *RuleCell::all().choose(&mut rng).unwrap();
    let new_rank = rng.random_range(1..=10u8);
    let edited = PriorityRule::from_ranks(
        "r3",
        RuleCell::all().into_iter().map(|c| (c, if c == edited_cell { new_rank } else { rule.rank_of(&c).get() })),
    );
    for item in p.debt_items.values() {
        if oracle_cells(item, &p).contains(&edited_cell) {
            continue;
        }
        let before = business_priority(item, &rule, &p).ok();
        let after = business_priority(item, &edited, &p).ok();
        if before != after {
            return Err(format!("seed {seed}: editing {} moved unrelated item {}", edited_cell.key(), item.id));
        }
    }
    Ok(())
}

/// A random `subjects × raters` matrix over two categories.
pub fn random_matrix(rng: &mut StdRng, subjects: usize, raters: usize) -> Vec<Vec<usize>> {
    (0..subjects).map(|_| (0..raters).map(|_| rng.random_range(0..2)).collect()).collect()
}

pub fn matrix_events(m: &[Vec<usize>], rater_names: &[String], labels: [&str; 2]) -> Vec<RatingEvent> {
    let mut out = Vec::new();
    for (s, row) in m.iter().enumerate() {
        for (r, &c) in row.iter().enumerate() {
            out.push(RatingEvent {
                rater_id: rater_names[r].clone(),
                value_source_id: format!("vs{s:02}").into(),
                dimension: Dimension::BusinessValue,
                category: labels[c].to_owned(),
                timestamp: ts((s * 100 + r) as i64),
            });
        }
    }
    out
}

fn same(a: &AgreementScore, b: &AgreementScore) -> bool {
    a.degenerate == b.degenerate && (a.kappa - b.kappa).abs() < 1e-12 && a.n_subjects == b.n_subjects
}

/// Fleiss and pairwise Cohen kappa are unchanged by permuting or renaming
/// raters and by swapping the two category labels.
pub fn kappa_invariance_case(seed: u64) -> Result<(), String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let m = random_matrix(&mut rng, 10, 5);
    let names: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
    let base = matrix_events(&m, &names, ["core", "other"]);

    let mut shuffled = names.clone();
    shuffled.shuffle(&mut rng);
    let renamed: Vec<String> = shuffled.iter().map(|n| format!("x-{n}")).collect();
    let permuted = matrix_events(&m, &renamed, ["core", "other"]);
    let relabelled = matrix_events(&m, &names, ["other", "core"]);

    let dim = Dimension::BusinessValue;
    let f0 = fleiss_kappa(&base, dim, None).map_err(|e| e.to_string())?;
    for (what, events) in [("permuted", &permuted), ("relabelled", &relabelled)] {
        let f1 = fleiss_kappa(events, dim, None).map_err(|e| e.to_string())?;
        if !same(&f0, &f1) {
            return Err(format!("seed {seed}: fleiss {} vs {} when {what}", f0.kappa, f1.kappa));
        }
    }
    for i in 0..5 {
        for j in (i + 1)..5 {
            let c0 = cohen_kappa(&base, &names[i], &names[j], dim).map_err(|e| e.to_string())?;
            let swapped = cohen_kappa(&base, &names[j], &names[i], dim).map_err(|e| e.to_string())?;
            let moved = cohen_kappa(&permuted, &renamed[i], &renamed[j], dim).map_err(|e| e.to_string())?;
            let relab = cohen_kappa(&relabelled, &names[i], &names[j], dim).map_err(|e| e.to_string())?;
            for (what, c1) in [("swapped", swapped), ("renamed", moved), ("relabelled", relab)] {
                if !same(&c0, &c1) {
                    return Err(format!("seed {seed}: cohen {}|{} {} vs {} when {what}", i, j, c0.kappa, c1.kappa));
                }
            }
        }
    }
    Ok(())
}

/// Generates `n` valid changes against an evolving state.
pub fn random_changes(seed: u64, n: usize) -> Vec<Change> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut state = Snapshot::default();
    let mut out = Vec::with_capacity(n);
    let start = date("2020-01-01");
    while out.len() < n {
        let change = random_change(&mut rng, &state, start);
        if state.check(&change).is_ok() {
            state.apply(change.clone());
            out.push(change);
        }
    }
    out
}

fn pick<'a, T>(rng: &mut StdRng, keys: impl Iterator<Item = &'a T>) -> Option<&'a T> {
    let all: Vec<&T> = keys.collect();
    all.choose(rng).copied()
}

fn random_change(rng: &mut StdRng, s: &Snapshot, start: NaiveDate) -> Change {
    let p = &s.portfolio;
    let state = *AssetState::ALL.choose(rng).unwrap();
    match rng.random_range(0..12) {
        0 => Change::Upsert(Entity::ConfigurationItem(ConfigurationItem {
            id: format!("c{}", rng.random_range(0..15)).into(),
            name: "ci".into(),
            state,
            parent_ids: pick(rng, p.cis.keys()).cloned().into_iter().collect(),
            depends_on: BTreeSet::new(),
        })),
        1 => Change::Upsert(Entity::ItAsset(ItAsset {
            id: format!("a{}", rng.random_range(0..8)).into(),
            name: "asset".into(),
            state,
            ci_ids: pick(rng, p.cis.keys()).cloned().into_iter().collect::<BTreeSet<CiId>>(),
        })),
        2 => Change::Upsert(Entity::ValueSource(ValueSource {
            id: format!("v{}", rng.random_range(0..8)).into(),
            name: "vs".into(),
            business_value: *BusinessValue::ALL.choose(rng).unwrap(),
            usage: *Usage::ALL.choose(rng).unwrap(),
            asset_ids: pick(rng, p.assets.keys()).cloned().into_iter().collect::<BTreeSet<AssetId>>(),
        })),
        3 | 4 => {
            let ci = pick(rng, p.cis.keys()).map(|c| c.to_string());
            let vs: Vec<String> = pick(rng, p.value_sources.keys()).map(|v| v.to_string()).into_iter().collect();
            let vs: Vec<&str> = vs.iter().map(String::as_str).collect();
            let mut item = debt(&format!("d{}", rng.random_range(0..60)), ci.as_deref(), &vs, plus_days(start, rng.random_range(0..90)));
            item.debt_type = *DebtType::ALL.choose(rng).unwrap();
            item.technical_priority = *Level::ALL.choose(rng).unwrap();
            Change::Upsert(Entity::DebtItem(item))
        }
        5 => match pick(rng, p.debt_items.values()) {
            Some(item) => Change::DebtPaid(DebtPayment {
                debt_id: item.id.clone(),
                paid_date: plus_days(item.created_date, rng.random_range(0..30)),
            }),
            None => Change::Delete(EntityRef { entity: EntityKind::DebtItem, id: "none".into() }),
        },
        6 => {
            let (entity, id) = match rng.random_range(0..3) {
                0 => (EntityKind::DebtItem, pick(rng, p.debt_items.keys()).map(|k| k.to_string())),
                1 => (EntityKind::ConfigurationItem, pick(rng, p.cis.keys()).map(|k| k.to_string())),
                _ => (EntityKind::ValueSource, pick(rng, p.value_sources.keys()).map(|k| k.to_string())),
            };
            Change::Delete(EntityRef { entity, id: id.unwrap_or_else(|| "none".into()) })
        }
        7 | 8 => {
            let dimension = if rng.random_bool(0.5) { Dimension::BusinessValue } else { Dimension::Usage };
            Change::Rating(RatingEvent {
                rater_id: format!("r{}", rng.random_range(0..4)),
                value_source_id: format!("v{}", rng.random_range(0..8)).into(),
                dimension,
                category: dimension.categories().choose(rng).unwrap().to_string(),
                timestamp: ts(rng.random_range(0..10_000)),
            })
        }
        9 => {
            let id = format!("rule{}", rng.random_range(0..3));
            let mut rule = random_rule(rng, &id);
            rule.version = s.latest_version(&id).map_or(1, |v| v + 1);
            Change::RuleCreated(rule)
        }
        10 => match pick(rng, s.rules.iter()) {
            Some(r) => Change::RuleActivated(RuleRef { rule_id: r.id.clone(), version: r.version }),
            None => Change::RuleActivated(RuleRef { rule_id: "none".into(), version: 1 }),
        },
        _ => {
            let issues: Vec<TrackerIssue> = (0..rng.random_range(1..4))
                .map(|_| TrackerIssue {
                    external_id: rng.random_range(0..20).to_string(),
                    subject: format!("issue {}", rng.random_range(0..5)),
                    description: String::new(),
                    issue_type: ["bug", "bug-dev", "test", "feature"].choose(rng).unwrap().to_string(),
                    td_flag: true,
                    created_on: plus_days(start, rng.random_range(0..60)),
                    closed_on: None,
                    priority: "high".into(),
                })
                .collect();
            // duplicate external ids within one feed are rejected by the
            // parser, so drop them here too
            let mut seen = BTreeSet::new();
            let issues: Vec<TrackerIssue> = issues.into_iter().filter(|i| seen.insert(i.external_id.clone())).collect();
            let outcome = import_debt("redmine", &issues, &TypeMap::default(), p);
            Change::Sync(SyncApplied {
                tracker: "redmine".into(),
                report: outcome.report,
                items: outcome.new_items.into_iter().chain(outcome.updated_items).collect(),
            })
        }
    }
}

/// Appends `n` generated events to a live store (optionally on disk with
/// compaction) and compares its snapshot with a from-scratch replay and,
/// on disk, with a reopened store.
pub fn replay_case(seed: u64, n: usize, dir: Option<&std::path::Path>) -> Result<(), String> {
    let changes = random_changes(seed, n);
    let mut store = match dir {
        Some(d) => Store::open(d).map_err(|e| e.to_string())?.with_compaction_interval(97),
        None => Store::in_memory(),
    };
    for (i, change) in changes.into_iter().enumerate() {
        store.append(change.into_event(ts(i as i64 * 60), "gen")).map_err(|e| format!("seed {seed} event {i}: {e}"))?;
    }
    let live = store.snapshot().canonical_bytes();
    let replayed = Snapshot::default().replay(store.events()).map_err(|e| e.to_string())?.canonical_bytes();
    if live != replayed {
        return Err(format!("seed {seed}: replay differs from live snapshot"));
    }
    if let Some(d) = dir {
        drop(store);
        let reopened = Store::open(d).map_err(|e| e.to_string())?;
        if reopened.snapshot().canonical_bytes() != live {
            return Err(format!("seed {seed}: reopened store differs from live snapshot"));
        }
    }
    Ok(())
}

