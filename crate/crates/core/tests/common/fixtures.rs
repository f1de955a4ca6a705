//! Constructed portfolios with known counts.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use tdprio_core::analytics::DateRange;
use tdprio_core::domain::{AssetState::Operational, BusinessValue::Core, Level, Portfolio, TechnicalDebtItem, Usage};
use tdprio_core::ingest::TrackerIssue;

use super::{cell, date, debt, minus_days, plus_days, CellFixture};

pub fn window() -> DateRange {
    DateRange::new(date("2021-01-01"), date("2021-06-30")).unwrap()
}

/// 130 items open when the window starts, 69 identified inside it and 62
/// paid inside it, plus items entirely before and after the window.
pub fn conservation_items() -> Vec<TechnicalDebtItem> {
    let mut rng = StdRng::seed_from_u64(130);
    let w = window();
    let span = (w.end - w.start).num_days() as u64;
    let mut items = Vec::new();
    let mut n = 0;
    let mut next = |created, paid| {
        n += 1;
        let mut item = debt(&format!("td-{n:03}"), None, &[], created);
        item.paid_date = paid;
        item
    };

    // carried over: 40 paid in the window, 10 after it, 80 still open
    for k in 0..130 {
        let created = minus_days(w.start, rng.random_range(1..400));
        let paid = match k {
            0..40 => Some(plus_days(w.start, rng.random_range(0..=span))),
            40..50 => Some(plus_days(w.end, rng.random_range(1..60))),
            _ => None,
        };
        items.push(next(created, paid));
    }
    // identified in the window: 22 also paid in it, 5 later
    for k in 0..69 {
        let offset = rng.random_range(0..=span);
        let created = plus_days(w.start, offset);
        let paid = match k {
            0..22 => Some(plus_days(created, rng.random_range(0..=span - offset))),
            22..27 => Some(plus_days(w.end, rng.random_range(1..30))),
            _ => None,
        };
        items.push(next(created, paid));
    }
    // outside the window entirely
    for _ in 0..15 {
        let created = minus_days(w.start, rng.random_range(30..200));
        items.push(next(created, Some(minus_days(w.start, rng.random_range(1..30)))));
    }
    for _ in 0..10 {
        items.push(next(plus_days(w.end, rng.random_range(1..50)), None));
    }
    items.shuffle(&mut rng);
    items
}

/// `count` items at `level`, the rest alternating over the other two levels.
fn levels(total: usize, count: usize, level: Level) -> Vec<Level> {
    let others: Vec<Level> = Level::ALL.into_iter().filter(|l| *l != level).collect();
    (0..total).map(|i| if i < count { level } else { others[i % 2] }).collect()
}

/// 58 items in the operational/core/high cell (21 with high technical
/// priority) and 100 in operational/core/low (73 with low technical priority).
pub fn crosstab_portfolio() -> Portfolio {
    let mut f = CellFixture::new();
    let start = date("2020-03-01");
    let groups = [
        (cell(Operational, Core, Usage::High), levels(58, 21, Level::High)),
        (cell(Operational, Core, Usage::Low), levels(100, 73, Level::Low)),
    ];
    let mut n = 0;
    for (c, lvls) in groups {
        for level in lvls {
            n += 1;
            let mut item = f.item(&format!("td-{n:03}"), c, plus_days(start, n % 40));
            item.technical_priority = level;
            f.add(item);
        }
    }
    f.portfolio
}

/// Items paid within `window()`: 22 in group 1 with 5 high-effort, 26 in
/// group 2 with 3 high-effort, plus open and out-of-window noise.
pub fn effort_portfolio() -> Portfolio {
    let mut f = CellFixture::new();
    let w = window();
    let groups = [
        (cell(Operational, Core, Usage::High), levels(22, 5, Level::High)),
        (cell(Operational, Core, Usage::Low), levels(26, 3, Level::High)),
    ];
    let mut n = 0;
    for (c, lvls) in groups {
        for level in lvls {
            n += 1;
            let mut item = f.item(&format!("td-{n:03}"), c, minus_days(w.start, 10));
            item.technical_effort = Some(level);
            item.paid_date = Some(plus_days(w.start, n as u64));
            f.add(item);
        }
        // open and paid-after-window items with high effort do not count
        for extra in 0..4 {
            n += 1;
            let mut item = f.item(&format!("td-{n:03}"), c, w.start);
            item.technical_effort = Some(Level::High);
            item.paid_date = (extra % 2 == 0).then(|| plus_days(w.end, 3));
            f.add(item);
        }
    }
    f.portfolio
}

/// 209 items: 145 imported from the tracker and 64 registered in the tool.
/// Returns the portfolio and a feed covering the 145 issues (some with
/// changed subjects or newly closed) and 5 new issues.
pub fn mixed_origin_portfolio() -> (Portfolio, Vec<TrackerIssue>) {
    let mut f = CellFixture::new();
    let c = cell(Operational, Core, Usage::High);
    let start = date("2019-06-01");
    let mut issues = Vec::new();
    for n in 0..145 {
        let ext = (1000 + n).to_string();
        let mut item = f.item(&format!("redmine-{ext}"), c, plus_days(start, n));
        item.name = format!("issue {ext}");
        item.tracker = Some("redmine".into());
        item.tracker_issue_id = Some(ext.clone());
        f.add(item);
        issues.push(TrackerIssue {
            external_id: ext.clone(),
            subject: if n % 7 == 0 { format!("issue {ext} (renamed)") } else { format!("issue {ext}") },
            description: String::new(),
            issue_type: if n % 2 == 0 { "bug".into() } else { "bug-dev".into() },
            td_flag: true,
            created_on: plus_days(start, n),
            closed_on: (n % 5 == 0).then(|| plus_days(start, n + 30)),
            priority: "normal".into(),
        });
    }
    for n in 0..64 {
        let mut item = f.item(&format!("native-{n:02}"), c, plus_days(start, n));
        item.technical_effort = Some(Level::Medium);
        item.factor_tags.insert("workshop".into());
        f.add(item);
    }
    for n in 0..5u64 {
        issues.push(TrackerIssue {
            external_id: (5000 + n).to_string(),
            subject: format!("new {n}"),
            description: String::new(),
            issue_type: if n % 2 == 0 { "bug".into() } else { "bug-dev".into() },
            td_flag: true,
            created_on: plus_days(start, 300 + n),
            closed_on: None,
            priority: "high".into(),
        });
    }
    (f.portfolio, issues)
}
