//! Backlog evidence per business-priority group: daily accumulation series
//! with trend lines, payment statistics, effort distribution, the business
//! versus technical priority crosstab and the debt type distribution.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::domain::{DebtType, Level, Portfolio, TechnicalDebtItem};
use crate::percent;
use crate::rule::{business_priority, PriorityRule, Rank};

/// Business-priority group of a debt item under a rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Rank(Rank),
    /// The item reaches no rule cell.
    Unlinked,
    /// Every item, ungrouped.
    All,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKey::Rank(r) => write!(f, "{r}"),
            GroupKey::Unlinked => f.write_str("unlinked"),
            GroupKey::All => f.write_str("all"),
        }
    }
}

fn group_of(item: &TechnicalDebtItem, rule: &PriorityRule, p: &Portfolio) -> GroupKey {
    business_priority(item, rule, p).map(GroupKey::Rank).unwrap_or(GroupKey::Unlinked)
}

fn label_of(key: GroupKey, rule: &PriorityRule) -> String {
    match key {
        GroupKey::Rank(r) => rule.group_label(r),
        GroupKey::Unlinked | GroupKey::All => key.to_string(),
    }
}

/// Items paid before they were identified are left out of every report;
/// `validate_portfolio` flags them.
fn dates_consistent(item: &TechnicalDebtItem) -> bool {
    item.paid_date.is_none_or(|paid| paid >= item.created_date)
}

fn group_items<'a>(
    items: &[&'a TechnicalDebtItem],
    rule: &PriorityRule,
    p: &Portfolio,
) -> BTreeMap<GroupKey, Vec<&'a TechnicalDebtItem>> {
    let mut groups: BTreeMap<GroupKey, Vec<&TechnicalDebtItem>> = BTreeMap::new();
    for item in items.iter().filter(|i| dates_consistent(i)) {
        groups.entry(group_of(item, rule, p)).or_default().push(item);
    }
    groups
}

/// Inclusive calendar date window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<DateRange, AnalyticsError> {
        if end < start {
            return Err(AnalyticsError::EmptyRange { start, end });
        }
        Ok(DateRange { start, end })
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        self.start <= day && day <= self.end
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        let end = self.end;
        self.start.iter_days().take_while(move |d| *d <= end)
    }

    /// Smallest range covering every identification and payment date.
    pub fn covering<'a>(items: impl IntoIterator<Item = &'a TechnicalDebtItem>) -> Option<DateRange> {
        let dates: Vec<NaiveDate> =
            items.into_iter().flat_map(|i| std::iter::once(i.created_date).chain(i.paid_date)).collect();
        Some(DateRange { start: *dates.iter().min()?, end: *dates.iter().max()? })
    }

    fn day_before_start(&self) -> NaiveDate {
        self.start.checked_sub_days(Days::new(1)).unwrap_or(NaiveDate::MIN)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("date range {start}..{end} is empty")]
    EmptyRange { start: NaiveDate, end: NaiveDate },
    #[error("trend fit needs at least two distinct days in the window, found {0}")]
    InsufficientPoints(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub date: NaiveDate,
    /// Open items at the end of the day.
    pub open_count: usize,
    pub identified: usize,
    pub paid: usize,
}

impl SeriesPoint {
    /// Net items added that day.
    pub fn net(&self) -> i64 {
        self.identified as i64 - self.paid as i64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailySeries {
    pub group_key: GroupKey,
    pub label: String,
    /// Open items at the end of the day before the range.
    pub open_start: usize,
    pub points: Vec<SeriesPoint>,
    pub period_split: Option<NaiveDate>,
}

impl DailySeries {
    pub fn last_open(&self) -> usize {
        self.points.last().map_or(self.open_start, |p| p.open_count)
    }
}

fn series_for(items: &[&TechnicalDebtItem], range: DateRange) -> (usize, Vec<SeriesPoint>) {
    let open_start = items.iter().filter(|i| i.is_open_on(range.day_before_start())).count();
    let mut identified: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    let mut paid: BTreeMap<NaiveDate, usize> = BTreeMap::new();
    for item in items {
        *identified.entry(item.created_date).or_default() += 1;
        if let Some(d) = item.paid_date {
            *paid.entry(d).or_default() += 1;
        }
    }
    let mut open = open_start;
    let points = range
        .days()
        .map(|date| {
            let ident = identified.get(&date).copied().unwrap_or(0);
            let pd = paid.get(&date).copied().unwrap_or(0);
            open = open + ident - pd;
            SeriesPoint { date, open_count: open, identified: ident, paid: pd }
        })
        .collect();
    (open_start, points)
}

/// One daily open-item series per business-priority group, keyed on the
/// identification date (not the registration date) and the payment date.
pub fn accumulation_series<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    rule: &PriorityRule,
    p: &Portfolio,
    range: DateRange,
    split: Option<NaiveDate>,
) -> Result<Vec<DailySeries>, AnalyticsError> {
    let range = DateRange::new(range.start, range.end)?;
    let items: Vec<&TechnicalDebtItem> = items.into_iter().collect();
    Ok(group_items(&items, rule, p)
        .into_iter()
        .map(|(key, members)| {
            let (open_start, points) = series_for(&members, range);
            DailySeries { group_key: key, label: label_of(key, rule), open_start, points, period_split: split }
        })
        .collect())
}

/// The ungrouped series over all items.
pub fn total_series<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    range: DateRange,
    split: Option<NaiveDate>,
) -> Result<DailySeries, AnalyticsError> {
    let range = DateRange::new(range.start, range.end)?;
    let items: Vec<&TechnicalDebtItem> = items.into_iter().filter(|i| dates_consistent(i)).collect();
    let (open_start, points) = series_for(&items, range);
    Ok(DailySeries { group_key: GroupKey::All, label: "all".into(), open_start, points, period_split: split })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendLine {
    /// Items per day.
    pub slope: f64,
    /// Fitted open count on the window's first day.
    pub intercept: f64,
    pub r_squared: f64,
    pub window: DateRange,
    pub n_points: usize,
}

impl TrendLine {
    pub fn predict(&self, day: NaiveDate) -> f64 {
        self.intercept + self.slope * (day - self.window.start).num_days() as f64
    }
}

/// Ordinary least squares of open count against days since the window start.
/// A series with no variance fits exactly and reports r² = 1.
pub fn fit_trend(series: &DailySeries, window: DateRange) -> Result<TrendLine, AnalyticsError> {
    let pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter(|p| window.contains(p.date))
        .map(|p| ((p.date - window.start).num_days() as f64, p.open_count as f64))
        .collect();
    if pts.len() < 2 {
        return Err(AnalyticsError::InsufficientPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(TrendLine { slope, intercept, r_squared, window, n_points: pts.len() })
}

/// Trend lines before and after a split date, each over its own sub-window.
pub fn split_trends(series: &DailySeries, range: DateRange, split: NaiveDate) -> (Option<TrendLine>, Option<TrendLine>) {
    let before = split
        .checked_sub_days(Days::new(1))
        .and_then(|end| DateRange::new(range.start, end.min(range.end)).ok())
        .and_then(|w| fit_trend(series, w).ok());
    let after = DateRange::new(split.max(range.start), range.end).ok().and_then(|w| fit_trend(series, w).ok());
    (before, after)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaymentStats {
    pub group_key: GroupKey,
    pub label: String,
    pub open_start: usize,
    pub identified: usize,
    pub paid: usize,
    pub open_end: usize,
    /// `paid / (open_start + identified)` as a fraction; 0 when nothing was exposed.
    pub pct_paid: f64,
    /// The same ratio as a percentage rounded to one decimal.
    pub pct_paid_display: f64,
}

fn stats_for(key: GroupKey, label: String, items: &[&TechnicalDebtItem], window: DateRange) -> PaymentStats {
    let open_start = items.iter().filter(|i| i.is_open_on(window.day_before_start())).count();
    let identified = items.iter().filter(|i| window.contains(i.created_date)).count();
    let paid = items.iter().filter(|i| i.paid_date.is_some_and(|d| window.contains(d))).count();
    let exposed = open_start + identified;
    PaymentStats {
        group_key: key,
        label,
        open_start,
        identified,
        paid,
        open_end: exposed - paid,
        pct_paid: if exposed == 0 { 0.0 } else { paid as f64 / exposed as f64 },
        pct_paid_display: percent(paid, exposed),
    }
}

/// Conservation-checked counts per business-priority group over `window`.
/// Every rank the rule uses gets a row, even with no items.
pub fn payment_stats<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    rule: &PriorityRule,
    p: &Portfolio,
    window: DateRange,
) -> Vec<PaymentStats> {
    let items: Vec<&TechnicalDebtItem> = items.into_iter().collect();
    let mut groups = group_items(&items, rule, p);
    for rank in rule.used_ranks() {
        groups.entry(GroupKey::Rank(rank)).or_default();
    }
    groups.into_iter().map(|(key, members)| stats_for(key, label_of(key, rule), &members, window)).collect()
}

/// Whole-portfolio payment stats over `window`.
pub fn payment_totals<'a>(items: impl IntoIterator<Item = &'a TechnicalDebtItem>, window: DateRange) -> PaymentStats {
    let items: Vec<&TechnicalDebtItem> = items.into_iter().filter(|i| dates_consistent(i)).collect();
    stats_for(GroupKey::All, "all".into(), &items, window)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub group_key: GroupKey,
    pub label: String,
    pub total: usize,
    pub high: usize,
    pub medium: usize,
    pub low: usize,
    pub pct_high: f64,
    pub pct_medium: f64,
    pub pct_low: f64,
}

impl LevelRow {
    fn from_levels(key: GroupKey, label: String, levels: impl IntoIterator<Item = Level>) -> LevelRow {
        let (mut high, mut medium, mut low) = (0, 0, 0);
        for level in levels {
            match level {
                Level::High => high += 1,
                Level::Medium => medium += 1,
                Level::Low => low += 1,
            }
        }
        let total = high + medium + low;
        LevelRow {
            group_key: key,
            label,
            total,
            high,
            medium,
            low,
            pct_high: percent(high, total),
            pct_medium: percent(medium, total),
            pct_low: percent(low, total),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffortDistribution {
    pub rows: Vec<LevelRow>,
    /// Paid items in the window with no effort estimate.
    pub unestimated: usize,
}

/// Row-normalised technical effort of items paid within `window`, per
/// business-priority group.
pub fn effort_distribution<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    rule: &PriorityRule,
    p: &Portfolio,
    window: DateRange,
) -> EffortDistribution {
    let paid: Vec<&TechnicalDebtItem> =
        items.into_iter().filter(|i| i.paid_date.is_some_and(|d| window.contains(d))).collect();
    let unestimated = paid.iter().filter(|i| i.technical_effort.is_none()).count();
    let rows = group_items(&paid, rule, p)
        .into_iter()
        .map(|(key, members)| {
            LevelRow::from_levels(key, label_of(key, rule), members.iter().filter_map(|i| i.technical_effort))
        })
        .collect();
    EffortDistribution { rows, unestimated }
}

/// Business group × technical priority counts with row percentages.
pub fn priority_crosstab<'a>(
    items: impl IntoIterator<Item = &'a TechnicalDebtItem>,
    rule: &PriorityRule,
    p: &Portfolio,
) -> Vec<LevelRow> {
    let items: Vec<&TechnicalDebtItem> = items.into_iter().collect();
    group_items(&items, rule, p)
        .into_iter()
        .map(|(key, members)| LevelRow::from_levels(key, label_of(key, rule), members.iter().map(|i| i.technical_priority)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeShare {
    pub debt_type: DebtType,
    pub count: usize,
    pub pct: f64,
}

/// Share of each debt type, most frequent first; types with no items are omitted.
pub fn debt_type_distribution<'a>(items: impl IntoIterator<Item = &'a TechnicalDebtItem>) -> Vec<TypeShare> {
    let mut counts: BTreeMap<DebtType, usize> = BTreeMap::new();
    let mut total = 0;
    for item in items {
        *counts.entry(item.debt_type).or_default() += 1;
        total += 1;
    }
    let mut out: Vec<TypeShare> = counts
        .into_iter()
        .map(|(debt_type, count)| TypeShare { debt_type, count, pct: percent(count, total) })
        .collect();
    out.sort_by(|a, b| b.count.cmp(&a.count).then(a.debt_type.cmp(&b.debt_type)));
    out
}
