//! Issue-tracker ingestion: parse the neutral JSON feed, turn flagged issues
//! into debt items and keep imported items synchronised.
//!
//! The tracker owns the subject and the dates. Everything else (type,
//! technical priority, effort, description, links, tags) belongs to the people
//! curating the portfolio and is never overwritten after import.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{DebtId, DebtType, Level, Portfolio, TechnicalDebtItem};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerIssue {
    pub external_id: String,
    pub subject: String,
    #[serde(default)]
    pub description: String,
    pub issue_type: String,
    #[serde(default)]
    pub td_flag: bool,
    pub created_on: NaiveDate,
    #[serde(default)]
    pub closed_on: Option<NaiveDate>,
    #[serde(default)]
    pub priority: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feed {
    pub tracker: String,
    pub issues: Vec<TrackerIssue>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedEntry {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedFeed {
    pub tracker: String,
    pub issues: Vec<TrackerIssue>,
    pub malformed: Vec<MalformedEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed feed: {0}")]
    MalformedFeed(String),
}

/// Parses a feed document. A bad envelope fails; bad entries are reported
/// and skipped, as are later duplicates of an external id.
pub fn parse_feed(document: &str) -> Result<ParsedFeed, IngestError> {
    let root: Value = serde_json::from_str(document).map_err(|e| IngestError::MalformedFeed(e.to_string()))?;
    let tracker = root
        .get("tracker")
        .and_then(Value::as_str)
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| IngestError::MalformedFeed("missing string field `tracker`".into()))?
        .to_owned();
    let entries = root
        .get("issues")
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::MalformedFeed("missing array field `issues`".into()))?;

    let mut issues = Vec::new();
    let mut malformed = Vec::new();
    let mut seen = BTreeSet::new();
    for (index, entry) in entries.iter().enumerate() {
        match serde_json::from_value::<TrackerIssue>(entry.clone()) {
            Ok(issue) if !seen.insert(issue.external_id.clone()) => malformed.push(MalformedEntry {
                index,
                reason: format!("duplicate external_id {:?}", issue.external_id),
            }),
            Ok(issue) if issue.closed_on.is_some_and(|c| c < issue.created_on) => malformed.push(MalformedEntry {
                index,
                reason: format!("issue {} is closed before it was created", issue.external_id),
            }),
            Ok(issue) => issues.push(issue),
            Err(e) => malformed.push(MalformedEntry { index, reason: e.to_string() }),
        }
    }
    Ok(ParsedFeed { tracker, issues, malformed })
}

/// Converts a Redmine `issues.json` response into the neutral feed. The
/// technical debt flag is read from the boolean custom field `td_field`.
pub fn redmine_to_feed(tracker: &str, response: &Value, td_field: &str) -> Result<Feed, IngestError> {
    let issues = response
        .get("issues")
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::MalformedFeed("redmine response has no `issues` array".into()))?;
    let date = |v: Option<&Value>| -> Option<NaiveDate> {
        let s = v?.as_str()?;
        NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok()
    };
    let name = |v: Option<&Value>| v.and_then(|x| x.get("name")).and_then(Value::as_str).unwrap_or("").to_owned();
    let mut out = Vec::new();
    for issue in issues {
        let Some(id) = issue.get("id").map(|v| match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }) else {
            continue;
        };
        let td_flag = issue
            .get("custom_fields")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .find(|f| f.get("name").and_then(Value::as_str) == Some(td_field))
            .and_then(|f| f.get("value"))
            .is_some_and(|v| matches!(v.as_str(), Some("1" | "true")) || v.as_bool() == Some(true));
        let Some(created_on) = date(issue.get("created_on")) else {
            continue;
        };
        out.push(TrackerIssue {
            external_id: id,
            subject: issue.get("subject").and_then(Value::as_str).unwrap_or("").to_owned(),
            description: issue.get("description").and_then(Value::as_str).unwrap_or("").to_owned(),
            issue_type: name(issue.get("tracker")).to_ascii_lowercase(),
            td_flag,
            created_on,
            closed_on: date(issue.get("closed_on")),
            priority: name(issue.get("priority")).to_ascii_lowercase(),
        });
    }
    Ok(Feed { tracker: tracker.to_owned(), issues: out })
}

/// Tracker vocabulary → debt type and tracker priority → technical priority.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeMap {
    pub types: BTreeMap<String, DebtType>,
    #[serde(default)]
    pub priority_map: BTreeMap<String, Level>,
}

impl Default for TypeMap {
    fn default() -> Self {
        let types = [
            ("documentation", DebtType::Documentation),
            ("requirements", DebtType::Requirements),
            ("development task", DebtType::Code),
            ("test", DebtType::Test),
            ("bug-dev", DebtType::Bug),
            ("bug", DebtType::Bug),
            ("build", DebtType::Build),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect();
        TypeMap { types, priority_map: BTreeMap::new() }
    }
}

impl TypeMap {
    pub fn debt_type(&self, issue_type: &str) -> Option<DebtType> {
        self.types.get(&issue_type.trim().to_ascii_lowercase()).copied()
    }

    /// Explicit mapping first, then identity on high/medium/low, else medium.
    pub fn technical_priority(&self, priority: &str) -> Level {
        let key = priority.trim().to_ascii_lowercase();
        self.priority_map.get(&key).copied().or_else(|| Level::parse(&key)).unwrap_or(Level::Medium)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub imported: usize,
    pub updated: usize,
    pub skipped: usize,
    pub unmapped_types: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed: Vec<MalformedEntry>,
}

impl SyncReport {
    pub fn processed(&self) -> usize {
        self.imported + self.updated + self.skipped
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ImportOutcome {
    pub new_items: Vec<TechnicalDebtItem>,
    /// Existing items with tracker-owned fields refreshed.
    pub updated_items: Vec<TechnicalDebtItem>,
    pub report: SyncReport,
}

fn tracker_index<'a>(p: &'a Portfolio, tracker: &str) -> BTreeMap<&'a str, &'a TechnicalDebtItem> {
    p.debt_items
        .values()
        .filter(|i| i.tracker.as_deref() == Some(tracker))
        .filter_map(|i| i.tracker_issue_id.as_deref().map(|ext| (ext, i)))
        .collect()
}

fn fresh_id(p: &Portfolio, taken: &BTreeSet<DebtId>, tracker: &str, external_id: &str) -> DebtId {
    let base = format!("{tracker}-{external_id}");
    let mut candidate = DebtId::new(base.clone());
    let mut n = 2;
    while p.debt_items.contains_key(&candidate) || taken.contains(&candidate) {
        candidate = DebtId::new(format!("{base}-{n}"));
        n += 1;
    }
    candidate
}

/// Refreshes tracker-owned fields (subject and dates) of `item` from
/// `issue`. Returns whether anything changed. A payment date is only
/// filled in, never replaced.
fn refresh(item: &mut TechnicalDebtItem, issue: &TrackerIssue) -> bool {
    let before = item.clone();
    item.name = issue.subject.clone();
    item.created_date = issue.created_on;
    if item.paid_date.is_none() {
        item.paid_date = issue.closed_on;
    }
    *item != before
}

/// Plans the import of flagged issues against the current portfolio.
///
/// Issues not flagged as debt are skipped. Known `(tracker, external_id)`
/// pairs refresh the existing item instead of creating a new one.
pub fn import_debt(tracker: &str, issues: &[TrackerIssue], type_map: &TypeMap, existing: &Portfolio) -> ImportOutcome {
    let index = tracker_index(existing, tracker);
    let mut out = ImportOutcome::default();
    let mut taken = BTreeSet::new();
    for issue in issues {
        if !issue.td_flag {
            out.report.skipped += 1;
            continue;
        }
        if let Some(current) = index.get(issue.external_id.as_str()) {
            let mut item = (*current).clone();
            // a refresh that would leave the item paid before creation is ignored
            if refresh(&mut item, issue) && !item.paid_date.is_some_and(|d| d < item.created_date) {
                out.report.updated += 1;
                out.updated_items.push(item);
            } else {
                out.report.skipped += 1;
            }
            continue;
        }
        if issue.closed_on.is_some_and(|c| c < issue.created_on) {
            out.report.skipped += 1;
            continue;
        }
        let debt_type = type_map.debt_type(&issue.issue_type).unwrap_or_else(|| {
            out.report.unmapped_types.insert(issue.issue_type.clone());
            DebtType::Other
        });
        let id = fresh_id(existing, &taken, tracker, &issue.external_id);
        taken.insert(id.clone());
        out.new_items.push(TechnicalDebtItem {
            id,
            name: issue.subject.clone(),
            description: issue.description.clone(),
            created_date: issue.created_on,
            paid_date: issue.closed_on,
            debt_type,
            technical_priority: type_map.technical_priority(&issue.priority),
            technical_effort: None,
            ci_id: None,
            value_source_ids: BTreeSet::new(),
            tracker: Some(tracker.to_owned()),
            tracker_issue_id: Some(issue.external_id.clone()),
            needs_linking: true,
            factor_tags: BTreeSet::new(),
        });
        out.report.imported += 1;
    }
    out
}

/// Applies an import plan to the portfolio.
pub fn apply_import(p: &mut Portfolio, outcome: &ImportOutcome) {
    for item in outcome.new_items.iter().chain(&outcome.updated_items) {
        p.insert_debt(item.clone());
    }
}

/// Idempotent reconciliation of the portfolio with a parsed feed.
pub fn sync(p: &mut Portfolio, feed: &ParsedFeed, type_map: &TypeMap) -> SyncReport {
    let outcome = import_debt(&feed.tracker, &feed.issues, type_map, p);
    apply_import(p, &outcome);
    SyncReport { malformed: feed.malformed.clone(), ..outcome.report }
}

/// Tracker connection settings, from the environment or a config file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerConfig {
    #[serde(default = "default_tracker_name")]
    pub name: String,
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_poll_secs")]
    pub poll_interval_secs: u64,
    #[serde(default = "default_td_field")]
    pub td_field: String,
}

fn default_tracker_name() -> String {
    "redmine".to_owned()
}

fn default_poll_secs() -> u64 {
    300
}

fn default_td_field() -> String {
    "Technical debt".to_owned()
}

impl TrackerConfig {
    pub const URL_VAR: &'static str = "TDPRIO_TRACKER_URL";
    pub const KEY_VAR: &'static str = "TDPRIO_TRACKER_API_KEY";
    pub const POLL_VAR: &'static str = "TDPRIO_TRACKER_POLL_SECS";
    pub const NAME_VAR: &'static str = "TDPRIO_TRACKER_NAME";
    pub const FIELD_VAR: &'static str = "TDPRIO_TRACKER_TD_FIELD";

    /// `None` when no tracker URL is configured.
    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Option<TrackerConfig> {
        let base_url = get(Self::URL_VAR).filter(|u| !u.trim().is_empty())?;
        Some(TrackerConfig {
            name: get(Self::NAME_VAR).unwrap_or_else(default_tracker_name),
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key: get(Self::KEY_VAR).filter(|k| !k.is_empty()),
            poll_interval_secs: get(Self::POLL_VAR).and_then(|s| s.parse().ok()).unwrap_or_else(default_poll_secs),
            td_field: get(Self::FIELD_VAR).unwrap_or_else(default_td_field),
        })
    }

    pub fn from_env() -> Option<TrackerConfig> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    /// Pulls every issue from a Redmine-compatible `issues.json` endpoint,
    /// following its offset pagination.
    #[cfg(feature = "http")]
    pub fn fetch_feed(&self) -> Result<Feed, FetchError> {
        const PAGE: usize = 100;
        let mut issues = Vec::new();
        let mut offset = 0;
        loop {
            let mut req = ureq::get(format!("{}/issues.json", self.base_url))
                .query("status_id", "*")
                .query("limit", PAGE.to_string())
                .query("offset", offset.to_string());
            if let Some(key) = &self.api_key {
                req = req.header("X-Redmine-API-Key", key);
            }
            let page: Value = req
                .call()
                .map_err(|e| FetchError::Unavailable(e.to_string()))?
                .body_mut()
                .read_json()
                .map_err(|e| FetchError::Unavailable(e.to_string()))?;
            let feed = redmine_to_feed(&self.name, &page, &self.td_field).map_err(FetchError::Malformed)?;
            let returned = page.get("issues").and_then(Value::as_array).map_or(0, Vec::len);
            issues.extend(feed.issues);
            let total = page.get("total_count").and_then(Value::as_u64).unwrap_or(0) as usize;
            offset += returned;
            if returned == 0 || offset >= total {
                break;
            }
        }
        Ok(Feed { tracker: self.name.clone(), issues })
    }
}

#[cfg(feature = "http")]
#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("tracker unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Malformed(IngestError),
}
