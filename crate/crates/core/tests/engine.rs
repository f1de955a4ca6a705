mod common;

use proptest::prelude::*;

use common::checks::engine_case;
use common::{cell, date, CellFixture};
use tdprio_core::domain::{AssetState, BusinessValue, Usage};
use tdprio_core::rule::{compare_rules, rank_backlog, PriorityRule, RuleDraft};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn engine_matches_brute_force(seed in any::<u64>()) {
        if let Err(e) = engine_case(seed) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn ties_break_on_identification_date_then_id() {
    let mut f = CellFixture::new();
    let c = cell(AssetState::Operational, BusinessValue::Core, Usage::High);
    f.add(f.item("td-b", c, date("2020-02-01")));
    f.add(f.item("td-a", c, date("2020-02-01")));
    f.add(f.item("td-c", c, date("2020-01-15")));
    let rule = PriorityRule::canvas_example();
    let b = rank_backlog(f.portfolio.debt_items.values(), &rule, &f.portfolio, false);
    let ids: Vec<&str> = b.items.iter().map(|i| i.debt_id.as_str()).collect();
    assert_eq!(ids, ["td-c", "td-a", "td-b"]);
}

#[test]
fn paid_items_leave_the_backlog_unless_requested() {
    let mut f = CellFixture::new();
    let c = cell(AssetState::Legacy, BusinessValue::Core, Usage::Low);
    let mut item = f.item("td-1", c, date("2020-02-01"));
    item.paid_date = Some(date("2020-03-01"));
    f.add(item);
    let rule = PriorityRule::canvas_example();
    assert!(rank_backlog(f.portfolio.debt_items.values(), &rule, &f.portfolio, false).items.is_empty());
    assert_eq!(rank_backlog(f.portfolio.debt_items.values(), &rule, &f.portfolio, true).items.len(), 1);
}

#[test]
fn edited_cell_breaks_unanimity() {
    let a = PriorityRule::canvas_example();
    let mut draft = RuleDraft::from(&a);
    draft.cells.insert("legacy/other/low".into(), 9);
    let b = PriorityRule::from_draft(&draft, "b", date("2020-01-01")).unwrap();
    let cmp = compare_rules(&[a, b]);
    // 10 → 9 stays in the low half but leaves the lowest bucket
    let legacy = cmp.cells.iter().find(|c| c.cell.key() == "legacy/other/low").unwrap();
    assert!(!legacy.unanimous);
    assert_eq!(cmp.unanimous_cells().len(), 9);
}
