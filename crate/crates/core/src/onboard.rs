//! Workshop onboarding: builds an initial portfolio from a workshop file.
//!
//! For each debt item the loop registers the affected CI, links it to an
//! IT asset, links the item to the asset's value sources and then validates
//! the result.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{
    validate_portfolio, AssetId, AssetState, CiId, ConfigurationItem, DebtType, ItAsset, Level, Portfolio,
    TechnicalDebtItem, ValueSource, ValueSourceId, Violation,
};
use crate::rule::RuleDraft;

/// CI as named during the workshop; `parent_id` gives the second level of a
/// system/module pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkshopCi {
    pub id: CiId,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub state: Option<AssetState>,
    #[serde(default)]
    pub parent_id: Option<CiId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkshopDebt {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub created_date: chrono::NaiveDate,
    #[serde(default)]
    pub paid_date: Option<chrono::NaiveDate>,
    pub debt_type: DebtType,
    pub technical_priority: Level,
    #[serde(default)]
    pub technical_effort: Option<Level>,
    pub ci: WorkshopCi,
    pub asset_id: AssetId,
    pub value_source_ids: BTreeSet<ValueSourceId>,
    #[serde(default)]
    pub tracker_issue_id: Option<String>,
    #[serde(default)]
    pub factor_tags: BTreeSet<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workshop {
    #[serde(default)]
    pub configuration_items: Vec<ConfigurationItem>,
    #[serde(default)]
    pub it_assets: Vec<ItAsset>,
    #[serde(default)]
    pub value_sources: Vec<ValueSource>,
    #[serde(default)]
    pub debt_items: Vec<WorkshopDebt>,
    #[serde(default)]
    pub rule: Option<RuleDraft>,
}

impl Workshop {
    /// Parses a workshop file; blank input is an empty workshop.
    pub fn parse(text: &str) -> Result<Workshop, serde_json::Error> {
        if text.trim().is_empty() {
            return Ok(Workshop::default());
        }
        serde_json::from_str(text)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Onboarding {
    pub portfolio: Portfolio,
    pub violations: Vec<Violation>,
}

impl Onboarding {
    pub fn is_consistent(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Runs the onboarding loop on top of `base`.
///
/// A debt item may name its CI's state; otherwise the CI takes the state of
/// the asset it is linked to. Value sources listed for a debt item are
/// linked to the item's asset when they are not already.
pub fn onboard(base: &Portfolio, workshop: &Workshop) -> Onboarding {
    let mut p = base.clone();
    for ci in &workshop.configuration_items {
        p.insert_ci(ci.clone());
    }
    for asset in &workshop.it_assets {
        p.insert_asset(asset.clone());
    }
    for vs in &workshop.value_sources {
        p.insert_value_source(vs.clone());
    }

    for debt in &workshop.debt_items {
        let asset_state = p.assets.get(&debt.asset_id).map(|a| a.state);

        // 1. register the CI (and its parent, for two-level granularity)
        let state = debt.ci.state.or(asset_state).unwrap_or(AssetState::Operational);
        if let Some(parent) = &debt.ci.parent_id {
            if !p.cis.contains_key(parent) {
                p.insert_ci(ConfigurationItem {
                    id: parent.clone(),
                    name: parent.to_string(),
                    state,
                    parent_ids: BTreeSet::new(),
                    depends_on: BTreeSet::new(),
                });
            }
        }
        let ci = p.cis.entry(debt.ci.id.clone()).or_insert_with(|| ConfigurationItem {
            id: debt.ci.id.clone(),
            name: debt.ci.name.clone().unwrap_or_else(|| debt.ci.id.to_string()),
            state,
            parent_ids: BTreeSet::new(),
            depends_on: BTreeSet::new(),
        });
        if let Some(parent) = &debt.ci.parent_id {
            ci.parent_ids.insert(parent.clone());
        }

        // 2. link the CI (its top level, when composed) to the asset
        let top = debt.ci.parent_id.clone().unwrap_or_else(|| debt.ci.id.clone());
        if let Some(asset) = p.assets.get_mut(&debt.asset_id) {
            asset.ci_ids.insert(top);
        }

        // 3. link the debt item to value sources of that asset
        for vs in &debt.value_source_ids {
            if p.assets.contains_key(&debt.asset_id) {
                if let Some(v) = p.value_sources.get_mut(vs) {
                    v.asset_ids.insert(debt.asset_id.clone());
                }
            }
        }
        p.insert_debt(TechnicalDebtItem {
            id: debt.id.as_str().into(),
            name: debt.name.clone(),
            description: debt.description.clone(),
            created_date: debt.created_date,
            paid_date: debt.paid_date,
            debt_type: debt.debt_type,
            technical_priority: debt.technical_priority,
            technical_effort: debt.technical_effort,
            ci_id: Some(debt.ci.id.clone()),
            value_source_ids: debt.value_source_ids.clone(),
            tracker: None,
            tracker_issue_id: debt.tracker_issue_id.clone(),
            needs_linking: false,
            factor_tags: debt.factor_tags.clone(),
        });
    }

    // 4. review
    let violations = validate_portfolio(&p);
    Onboarding { portfolio: p, violations }
}
