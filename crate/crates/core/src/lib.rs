//! Business-driven technical debt prioritization.
//!
//! Debt items are traced to the business through the chain
//! debt item → configuration item → IT asset → value source. A priority rule
//! maps each reachable (asset state, business value, usage) cell to a rank
//! from 1 to 10, which orders the backlog. Around that engine sit
//! inter-rater agreement analytics, portfolio trend reports, issue-tracker
//! ingestion and an event-sourced store.

pub mod agreement;
pub mod analytics;
pub mod domain;
pub mod ingest;
pub mod onboard;
pub mod rule;
pub mod service;
pub mod store;

pub use domain::{
    effective_cells, validate_portfolio, AssetState, BusinessValue, DebtType, Level, Portfolio, RuleCell,
    TechnicalDebtItem, Usage, Violation,
};
pub use rule::{bucket, business_priority, compare_rules, decompose_rules, rank_backlog, Bucket, PriorityRule, Rank};

/// `num / den` as a percentage rounded half-up to one decimal; 0 when
/// `den` is 0. Computed in integers so halves round exactly.
pub fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        return 0.0;
    }
    let (num, den) = (num as u128, den as u128);
    let tenths = (num * 2000 + den) / (2 * den);
    tenths as f64 / 10.0
}
