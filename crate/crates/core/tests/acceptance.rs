//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always printed.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::SeedableRng;

use common::checks::{engine_case, kappa_invariance_case, matrix_events, random_matrix, replay_case};
use common::fixtures;
use common::{cell, date, CellFixture};
use tdprio_core::agreement::{cohen_kappa, fleiss_kappa, Dimension, RatingEvent};
use tdprio_core::analytics::{effort_distribution, payment_totals, priority_crosstab, total_series, GroupKey, LevelRow};
use tdprio_core::domain::{AssetState, BusinessValue, DebtType, Usage};
use tdprio_core::ingest::{parse_feed, Feed, TypeMap};
use tdprio_core::rule::{bucket, business_priority, Bucket, PriorityRule, Rank};
use tdprio_core::service::App;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

/// Reference rounding for percentages: half-up to one decimal via f64.
fn pct_oracle(num: usize, den: usize) -> f64 {
    (num as f64 * 1000.0 / den as f64 + 0.5).floor() / 10.0
}

fn conservation() -> Check {
    let started = Instant::now();
    let items = fixtures::conservation_items();
    let w = fixtures::window();
    let stats = payment_totals(&items, w);
    let series = total_series(&items, w, None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let open_on_end = items.iter().filter(|i| i.is_open_on(w.end)).count();
    ensure(
        (stats.open_start, stats.identified, stats.paid) == (130, 69, 62),
        format!("counts {}/{}/{}", stats.open_start, stats.identified, stats.paid),
    )?;
    ensure(stats.open_end == 137 && open_on_end == 137, format!("open_end {} oracle {open_on_end}", stats.open_end))?;
    ensure(series.last_open() == 137, format!("series ends at {}", series.last_open()))?;
    ensure(series.points.len() as i64 == (w.end - w.start).num_days() + 1, "series skips days")?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("130 + 69 - 62 = {}; series last day {}; {elapsed:.2?}", stats.open_end, series.last_open()))
}

fn rule_semantics() -> Check {
    let rule = PriorityRule::canvas_example();
    let mut f = CellFixture::new();
    let op = cell(AssetState::Operational, BusinessValue::Core, Usage::High);
    let legacy = cell(AssetState::Legacy, BusinessValue::Other, Usage::Low);
    f.add(f.item("op", op, date("2020-01-01")));
    f.add(f.item("legacy", legacy, date("2020-01-01")));
    let p = &f.portfolio;
    let rank = |id: &str| business_priority(&p.debt_items[id], &rule, p).map(|r| r.get()).map_err(|e| e.to_string());
    ensure(rank("op")? == 1, "operational/core/high")?;
    ensure(rank("legacy")? == 10, "legacy/other/low")?;
    for usage in Usage::ALL {
        let c = cell(AssetState::ToBe, BusinessValue::Core, usage);
        ensure(c.key() == "to_be/core" && rule.rank_of(&c).get() == 5, format!("to_be/core with usage {usage:?}"))?;
    }
    for r in 1..=10i64 {
        let want = match r {
            1..=3 => Bucket::High,
            4..=6 => Bucket::Medium,
            7..=9 => Bucket::Low,
            _ => Bucket::Lowest,
        };
        ensure(bucket(r) == Ok(want), format!("bucket({r})"))?;
        ensure(Rank::new(r).map(|x| x.bucket()) == Ok(want), format!("Rank({r}).bucket"))?;
    }
    ensure(bucket(0).is_err() && bucket(11).is_err(), "out-of-range ranks accepted")?;
    Ok("1 / 5 / 10 and buckets for ranks 1..10".into())
}

fn row(rows: &[LevelRow], rank: u8) -> Result<&LevelRow, String> {
    rows.iter()
        .find(|r| r.group_key == GroupKey::Rank(Rank::new(rank.into()).unwrap()))
        .ok_or_else(|| format!("no row for rank {rank}"))
}

fn crosstab() -> Check {
    let p = fixtures::crosstab_portfolio();
    let rule = PriorityRule::canvas_example();
    let rows = priority_crosstab(p.debt_items.values(), &rule, &p);
    let g1 = row(&rows, 1)?;
    let g2 = row(&rows, 2)?;
    ensure(g1.label == "1-core/high" && g1.total == 58 && g1.high == 21, format!("group 1 {g1:?}"))?;
    ensure(g1.pct_high == 36.2 && g1.pct_high == pct_oracle(21, 58), format!("group 1 high {}", g1.pct_high))?;
    ensure(g2.label == "2-core/low" && g2.pct_low == 73.0 && g2.pct_low == pct_oracle(73, 100), format!("group 2 {g2:?}"))?;
    Ok(format!("{} technical-high {}%; {} technical-low {}%", g1.label, g1.pct_high, g2.label, g2.pct_low))
}

fn effort() -> Check {
    let p = fixtures::effort_portfolio();
    let rule = PriorityRule::canvas_example();
    let dist = effort_distribution(p.debt_items.values(), &rule, &p, fixtures::window());
    let g1 = row(&dist.rows, 1)?;
    let g2 = row(&dist.rows, 2)?;
    ensure(g1.total == 22 && g1.high == 5 && g1.pct_high == 22.7, format!("group 1 {g1:?}"))?;
    ensure(g2.total == 26 && g2.high == 3 && g2.pct_high == 11.5, format!("group 2 {g2:?}"))?;
    ensure(g1.pct_high == pct_oracle(5, 22) && g2.pct_high == pct_oracle(3, 26), "oracle rounding differs")?;
    Ok(format!("5/22 high effort {}%; 3/26 high effort {}%", g1.pct_high, g2.pct_high))
}

/// Textbook Fleiss kappa in floating point.
fn fleiss_oracle(m: &[Vec<usize>]) -> f64 {
    let (subjects, raters) = (m.len() as f64, m[0].len() as f64);
    let mut col = [0.0f64; 2];
    let mut p_bar = 0.0;
    for row in m {
        let mut n = [0.0f64; 2];
        for &c in row {
            n[c] += 1.0;
            col[c] += 1.0;
        }
        p_bar += (n[0] * n[0] + n[1] * n[1] - raters) / (raters * (raters - 1.0));
    }
    p_bar /= subjects;
    let pe: f64 = col.iter().map(|c| (c / (subjects * raters)).powi(2)).sum();
    (p_bar - pe) / (1.0 - pe)
}

fn kappa() -> Check {
    let dim = Dimension::BusinessValue;
    let rate = |rater: &str, vs: usize, cat: &str| RatingEvent {
        rater_id: rater.into(),
        value_source_id: format!("vs{vs:02}").into(),
        dimension: dim,
        category: cat.into(),
        timestamp: Utc.with_ymd_and_hms(2020, 5, 1, 10, 0, 0).unwrap(),
    };
    let cats = |i: usize| if i.is_multiple_of(3) { "other" } else { "core" };
    let perfect: Vec<RatingEvent> = (0..9).flat_map(|i| [rate("a", i, cats(i)), rate("b", i, cats(i))]).collect();
    let k = cohen_kappa(&perfect, "a", "b", dim).map_err(|e| e.to_string())?;
    ensure(k.kappa == 1.0, format!("perfect agreement gives {}", k.kappa))?;

    // 20 subjects: core/core 7, core/other 3, other/core 3, other/other 7
    let table: Vec<RatingEvent> = (0..20)
        .flat_map(|i| {
            let a = if i < 10 { "core" } else { "other" };
            let b = if i < 7 || (10..13).contains(&i) { "core" } else { "other" };
            [rate("a", i, a), rate("b", i, b)]
        })
        .collect();
    let k = cohen_kappa(&table, "a", "b", dim).map_err(|e| e.to_string())?;
    ensure(k.observed_agreement == 0.7 && k.expected_agreement == 0.5, "fixture Po/Pe")?;
    ensure(k.kappa == 0.4, format!("Po 0.7 Pe 0.5 gives {:?}", k.kappa))?;

    for seed in 0..200 {
        kappa_invariance_case(seed)?;
    }

    let mut rng = StdRng::seed_from_u64(45);
    let m = random_matrix(&mut rng, 45, 5);
    let names: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
    let f = fleiss_kappa(&matrix_events(&m, &names, ["core", "other"]), dim, None).map_err(|e| e.to_string())?;
    ensure((f.n_subjects, f.n_raters, f.n_categories) == (45, 5, 2), format!("shape {f:?}"))?;
    let want = fleiss_oracle(&m);
    ensure((f.kappa - want).abs() < 1e-12, format!("fleiss {} oracle {want}", f.kappa))?;
    Ok(format!("1.0, 0.4, 200 invariance matrices, 45x5x2 fleiss {:.4}", f.kappa))
}

fn engine_properties() -> Check {
    let started = Instant::now();
    let cases = 1000;
    for seed in 0..cases {
        engine_case(seed)?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), format!("{cases} cases took {elapsed:?}"))?;
    Ok(format!("{cases} random portfolios in {elapsed:.2?}"))
}

fn ingestion() -> Check {
    let (portfolio, issues) = fixtures::mixed_origin_portfolio();
    ensure(portfolio.debt_items.len() == 209, "fixture size")?;
    let feed = serde_json::to_string(&Feed { tracker: "redmine".into(), issues }).unwrap();
    let feed = parse_feed(&feed).map_err(|e| e.to_string())?;
    let mut app = App::in_memory();
    app.put_portfolio(portfolio.clone(), "setup").map_err(|e| e.to_string())?;

    let first = app.sync(&feed, "sync").map_err(|e| e.to_string())?;
    let digest = app.digest();
    let seq = app.store().latest_seq();
    let second = app.sync(&feed, "sync").map_err(|e| e.to_string())?;
    ensure(first.imported == 5, format!("first sync imported {}", first.imported))?;
    ensure(second.imported == 0 && second.updated == 0, format!("second sync {second:?}"))?;
    ensure(app.digest() == digest && app.store().latest_seq() == seq, "second sync changed the store")?;

    let map = TypeMap::default();
    ensure(map.debt_type("bug") == Some(DebtType::Bug) && map.debt_type("bug-dev") == Some(DebtType::Bug), "type map")?;
    let after = app.portfolio();
    ensure(after.debt_items.values().filter(|i| i.tracker.is_some()).all(|i| i.debt_type == DebtType::Bug || portfolio.debt_items.contains_key(&i.id)), "imported types")?;
    let native: Vec<_> = portfolio.debt_items.values().filter(|i| i.tracker_issue_id.is_none()).collect();
    ensure(native.len() == 64, "fixture native count")?;
    ensure(native.iter().all(|i| after.debt_items.get(&i.id) == Some(*i)), "a tool-native item changed")?;
    Ok(format!("first sync {} new / {} updated; second sync 0 new; 64 native items untouched", first.imported, first.updated))
}

fn event_sourcing() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    replay_case(1, 1000, Some(dir.path()))?;
    for seed in 2..6 {
        replay_case(seed, 1000, None)?;
    }
    Ok("5 generated logs of 1000 events replay byte-identically".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("conservation", conservation),
        ("rule semantics", rule_semantics),
        ("crosstab", crosstab),
        ("effort", effort),
        ("kappa", kappa),
        ("engine properties", engine_properties),
        ("ingestion", ingestion),
        ("event sourcing", event_sourcing),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS  {}. {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {}. {name}: {detail}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
