//! Append-only event log with replayable snapshots.
//!
//! Every mutation is an [`EventRecord`]; the current state is the fold of
//! the log. The file-backed store keeps `events.jsonl` (one record per line,
//! synced before acknowledgement) and periodically writes `snapshot.json` so
//! startup does not replay the whole history. The log itself is never
//! truncated, which keeps every historical state reachable.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agreement::RatingEvent;
use crate::domain::{
    BusinessMetric, ConfigurationItem, DebtId, EntityKind, ItAsset, Portfolio, TechnicalDebtItem, ValueSource,
};
use crate::ingest::SyncReport;
use crate::rule::PriorityRule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    EntityUpsert,
    EntityDelete,
    Rating,
    RuleCreated,
    RuleActivated,
    DebtPaid,
    Sync,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub kind: EventKind,
    pub payload: Value,
}

/// An event before the store has assigned it a sequence number.
#[derive(Clone, Debug, PartialEq)]
pub struct NewEvent {
    pub timestamp: DateTime<Utc>,
    pub actor: String,
    pub kind: EventKind,
    pub payload: Value,
}

impl NewEvent {
    pub fn new(timestamp: DateTime<Utc>, actor: impl Into<String>, kind: EventKind, payload: Value) -> Self {
        NewEvent { timestamp, actor: actor.into(), kind, payload }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entity", content = "data", rename_all = "snake_case")]
pub enum Entity {
    ConfigurationItem(ConfigurationItem),
    ItAsset(ItAsset),
    ValueSource(ValueSource),
    DebtItem(TechnicalDebtItem),
    Metric(BusinessMetric),
}

impl Entity {
    pub fn kind(&self) -> EntityKind {
        match self {
            Entity::ConfigurationItem(_) => EntityKind::ConfigurationItem,
            Entity::ItAsset(_) => EntityKind::ItAsset,
            Entity::ValueSource(_) => EntityKind::ValueSource,
            Entity::DebtItem(_) => EntityKind::DebtItem,
            Entity::Metric(_) => EntityKind::Metric,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Entity::ConfigurationItem(x) => x.id.as_str(),
            Entity::ItAsset(x) => x.id.as_str(),
            Entity::ValueSource(x) => x.id.as_str(),
            Entity::DebtItem(x) => x.id.as_str(),
            Entity::Metric(x) => x.id.as_str(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub entity: EntityKind,
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuleRef {
    pub rule_id: String,
    pub version: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DebtPayment {
    pub debt_id: DebtId,
    pub paid_date: NaiveDate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncApplied {
    pub tracker: String,
    pub report: SyncReport,
    /// Debt items created or refreshed by the sync, in their final form.
    pub items: Vec<TechnicalDebtItem>,
}

/// Typed view of an event payload.
#[derive(Clone, Debug, PartialEq)]
pub enum Change {
    Upsert(Entity),
    Delete(EntityRef),
    Rating(RatingEvent),
    RuleCreated(PriorityRule),
    RuleActivated(RuleRef),
    DebtPaid(DebtPayment),
    Sync(SyncApplied),
}

impl Change {
    pub fn kind(&self) -> EventKind {
        match self {
            Change::Upsert(_) => EventKind::EntityUpsert,
            Change::Delete(_) => EventKind::EntityDelete,
            Change::Rating(_) => EventKind::Rating,
            Change::RuleCreated(_) => EventKind::RuleCreated,
            Change::RuleActivated(_) => EventKind::RuleActivated,
            Change::DebtPaid(_) => EventKind::DebtPaid,
            Change::Sync(_) => EventKind::Sync,
        }
    }

    pub fn payload(&self) -> Value {
        let v = match self {
            Change::Upsert(e) => serde_json::to_value(e),
            Change::Delete(r) => serde_json::to_value(r),
            Change::Rating(r) => serde_json::to_value(r),
            Change::RuleCreated(r) => serde_json::to_value(r),
            Change::RuleActivated(r) => serde_json::to_value(r),
            Change::DebtPaid(p) => serde_json::to_value(p),
            Change::Sync(s) => serde_json::to_value(s),
        };
        v.expect("payload types serialize to JSON")
    }

    pub fn into_event(self, timestamp: DateTime<Utc>, actor: impl Into<String>) -> NewEvent {
        NewEvent::new(timestamp, actor, self.kind(), self.payload())
    }

    /// Decodes a payload against its kind's schema.
    pub fn parse(kind: EventKind, payload: &Value) -> Result<Change, StoreError> {
        fn de<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T, StoreError> {
            T::deserialize(payload).map_err(|e| StoreError::ValidationFailed(e.to_string()))
        }
        Ok(match kind {
            EventKind::EntityUpsert => Change::Upsert(de(payload)?),
            EventKind::EntityDelete => Change::Delete(de(payload)?),
            EventKind::Rating => Change::Rating(de(payload)?),
            EventKind::RuleCreated => Change::RuleCreated(de(payload)?),
            EventKind::RuleActivated => Change::RuleActivated(de(payload)?),
            EventKind::DebtPaid => Change::DebtPaid(de(payload)?),
            EventKind::Sync => Change::Sync(de(payload)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("storage failed: {0}")]
    StorageFailed(String),
    #[error("as-of {requested} is beyond the log (latest seq {latest})")]
    OutOfRange { requested: u64, latest: u64 },
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::StorageFailed(e.to_string())
    }
}

/// State reconstructed from the first `as_of` events.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub portfolio: Portfolio,
    /// Every version of every rule, ordered by id then version.
    pub rules: Vec<PriorityRule>,
    pub active_rule: Option<RuleRef>,
    /// Effective rating per `rater|value source|dimension`.
    pub ratings: BTreeMap<String, RatingEvent>,
    pub as_of: u64,
}

fn rating_key(r: &RatingEvent) -> String {
    format!("{}|{}|{}", r.rater_id, r.value_source_id, r.dimension)
}

impl Snapshot {
    /// Deterministic JSON bytes; maps and sets are ordered, so equal states
    /// encode identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("snapshot serializes")
    }

    pub fn digest(&self) -> String {
        Sha256::digest(self.canonical_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn rule(&self, rule_id: &str, version: Option<u32>) -> Option<&PriorityRule> {
        let mut versions = self.rules.iter().filter(|r| r.id == rule_id);
        match version {
            Some(v) => versions.find(|r| r.version == v),
            None => versions.max_by_key(|r| r.version),
        }
    }

    pub fn latest_version(&self, rule_id: &str) -> Option<u32> {
        self.rule(rule_id, None).map(|r| r.version)
    }

    pub fn active(&self) -> Option<&PriorityRule> {
        let r = self.active_rule.as_ref()?;
        self.rule(&r.rule_id, Some(r.version))
    }

    pub fn rating_events(&self) -> Vec<RatingEvent> {
        self.ratings.values().cloned().collect()
    }

    /// Checks a change against the current state without applying it.
    pub fn check(&self, change: &Change) -> Result<(), StoreError> {
        let invalid = |m: String| Err(StoreError::ValidationFailed(m));
        match change {
            Change::Upsert(entity) => {
                if entity.id().trim().is_empty() {
                    return invalid(format!("{} id is empty", entity.kind().as_str()));
                }
                if let Entity::DebtItem(item) = entity {
                    if item.paid_date.is_some_and(|d| d < item.created_date) {
                        return invalid(format!("debt item {} is paid before it was created", item.id));
                    }
                }
                Ok(())
            }
            Change::Delete(r) => {
                let p = &self.portfolio;
                let exists = match r.entity {
                    EntityKind::ConfigurationItem => p.cis.contains_key(r.id.as_str()),
                    EntityKind::ItAsset => p.assets.contains_key(r.id.as_str()),
                    EntityKind::ValueSource => p.value_sources.contains_key(r.id.as_str()),
                    EntityKind::DebtItem => p.debt_items.contains_key(r.id.as_str()),
                    EntityKind::Metric => p.metrics.contains_key(r.id.as_str()),
                };
                if exists {
                    Ok(())
                } else {
                    invalid(format!("no {} with id {}", r.entity.as_str(), r.id))
                }
            }
            Change::Rating(r) => r.check().map_err(|e| StoreError::ValidationFailed(e.to_string())),
            Change::RuleCreated(rule) => {
                if rule.cells.len() != 10 {
                    return invalid(format!("rule {} maps {} of 10 cells", rule.id, rule.cells.len()));
                }
                let expected = self.latest_version(&rule.id).map_or(1, |v| v + 1);
                if rule.version != expected {
                    return invalid(format!("rule {} must be version {expected}, got {}", rule.id, rule.version));
                }
                Ok(())
            }
            Change::RuleActivated(r) => match self.rule(&r.rule_id, Some(r.version)) {
                Some(_) => Ok(()),
                None => invalid(format!("no rule {}@{}", r.rule_id, r.version)),
            },
            Change::DebtPaid(pay) => match self.portfolio.debt_items.get(&pay.debt_id) {
                None => invalid(format!("no debt item {}", pay.debt_id)),
                Some(item) if pay.paid_date < item.created_date => {
                    invalid(format!("debt item {} cannot be paid before {}", item.id, item.created_date))
                }
                Some(_) => Ok(()),
            },
            Change::Sync(s) => {
                if let Some(item) = s.items.iter().find(|i| i.paid_date.is_some_and(|d| d < i.created_date)) {
                    return invalid(format!("synced item {} is paid before it was created", item.id));
                }
                Ok(())
            }
        }
    }

    /// Applies a checked change.
    pub fn apply(&mut self, change: Change) {
        let p = &mut self.portfolio;
        match change {
            Change::Upsert(Entity::ConfigurationItem(x)) => p.insert_ci(x),
            Change::Upsert(Entity::ItAsset(x)) => p.insert_asset(x),
            Change::Upsert(Entity::ValueSource(x)) => p.insert_value_source(x),
            Change::Upsert(Entity::DebtItem(x)) => p.insert_debt(x),
            Change::Upsert(Entity::Metric(x)) => p.insert_metric(x),
            Change::Delete(r) => {
                let id = r.id.as_str();
                match r.entity {
                    EntityKind::ConfigurationItem => drop(p.cis.remove(id)),
                    EntityKind::ItAsset => drop(p.assets.remove(id)),
                    EntityKind::ValueSource => drop(p.value_sources.remove(id)),
                    EntityKind::DebtItem => drop(p.debt_items.remove(id)),
                    EntityKind::Metric => drop(p.metrics.remove(id)),
                }
            }
            Change::Rating(r) => {
                let key = rating_key(&r);
                match self.ratings.get(&key) {
                    Some(prev) if prev.timestamp > r.timestamp => {}
                    _ => {
                        self.ratings.insert(key, r);
                    }
                }
            }
            Change::RuleCreated(rule) => {
                self.rules.push(rule);
                self.rules.sort_by(|a, b| (&a.id, a.version).cmp(&(&b.id, b.version)));
            }
            Change::RuleActivated(r) => self.active_rule = Some(r),
            Change::DebtPaid(pay) => {
                if let Some(item) = p.debt_items.get_mut(&pay.debt_id) {
                    item.paid_date = Some(pay.paid_date);
                }
            }
            Change::Sync(s) => {
                for item in s.items {
                    p.insert_debt(item);
                }
            }
        }
    }

    /// Folds a sequence of recorded events from this state.
    pub fn replay<'a>(mut self, events: impl IntoIterator<Item = &'a EventRecord>) -> Result<Snapshot, StoreError> {
        for event in events {
            let change = Change::parse(event.kind, &event.payload)?;
            self.check(&change)?;
            self.apply(change);
            self.as_of = event.seq;
        }
        Ok(self)
    }
}

/// Point in history to reconstruct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AsOf {
    Seq(u64),
    /// The last event whose timestamp falls on or before this day (UTC).
    Date(NaiveDate),
}

impl std::str::FromStr for AsOf {
    type Err = String;

    /// A sequence number or a `YYYY-MM-DD` date.
    fn from_str(s: &str) -> Result<AsOf, String> {
        if let Ok(seq) = s.parse::<u64>() {
            return Ok(AsOf::Seq(seq));
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(AsOf::Date)
            .map_err(|_| format!("as-of must be a sequence number or YYYY-MM-DD, got {s:?}"))
    }
}

const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    digest: String,
    snapshot: Snapshot,
}

/// Single-writer event store. Callers serialise access (the service wraps
/// it in a lock).
pub struct Store {
    dir: Option<PathBuf>,
    log: Vec<EventRecord>,
    state: Snapshot,
    file: Option<File>,
    compact_every: u64,
    last_compaction: u64,
}

impl Store {
    pub const DEFAULT_COMPACT_EVERY: u64 = 500;

    pub fn in_memory() -> Store {
        Store {
            dir: None,
            log: Vec::new(),
            state: Snapshot::default(),
            file: None,
            compact_every: 0,
            last_compaction: 0,
        }
    }

    /// Opens (or creates) a store in `dir`, replaying the log on top of the
    /// last compacted snapshot.
    pub fn open(dir: impl AsRef<Path>) -> Result<Store, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let log_path = dir.join(LOG_FILE);
        let log = read_log(&log_path)?;

        let mut base = Snapshot::default();
        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let file: SnapshotFile = serde_json::from_slice(&fs::read(&snap_path)?)
                .map_err(|e| StoreError::StorageFailed(format!("{}: {e}", snap_path.display())))?;
            // a snapshot ahead of the log or with a bad digest is ignored
            if file.snapshot.as_of <= log.len() as u64 && file.snapshot.digest() == file.digest {
                base = file.snapshot;
            }
        }
        let start = base.as_of as usize;
        let last_compaction = base.as_of;
        let state = base.replay(&log[start..])?;

        let file = OpenOptions::new().create(true).append(true).open(&log_path)?;
        Ok(Store {
            dir: Some(dir),
            log,
            state,
            file: Some(file),
            compact_every: Self::DEFAULT_COMPACT_EVERY,
            last_compaction,
        })
    }

    pub fn with_compaction_interval(mut self, every: u64) -> Store {
        self.compact_every = every;
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn latest_seq(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.log
    }

    /// Live state.
    pub fn snapshot(&self) -> &Snapshot {
        &self.state
    }

    /// Validates, persists and applies an event; returns its sequence number.
    /// A rejected event leaves the store untouched.
    pub fn append(&mut self, event: NewEvent) -> Result<u64, StoreError> {
        let change = Change::parse(event.kind, &event.payload)?;
        self.state.check(&change)?;
        let record = EventRecord {
            seq: self.latest_seq() + 1,
            timestamp: event.timestamp,
            actor: event.actor,
            kind: event.kind,
            payload: event.payload,
        };
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&record).map_err(|e| StoreError::StorageFailed(e.to_string()))?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        self.state.apply(change);
        self.state.as_of = record.seq;
        let seq = record.seq;
        self.log.push(record);
        if self.compact_every > 0 && seq - self.last_compaction >= self.compact_every {
            self.compact()?;
        }
        Ok(seq)
    }

    /// Appends several changes; stops at the first rejection.
    pub fn append_all(
        &mut self,
        changes: impl IntoIterator<Item = Change>,
        timestamp: DateTime<Utc>,
        actor: &str,
    ) -> Result<Vec<u64>, StoreError> {
        changes.into_iter().map(|c| self.append(c.into_event(timestamp, actor))).collect()
    }

    /// Writes the current state as the compaction snapshot.
    pub fn compact(&mut self) -> Result<(), StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let file = SnapshotFile { digest: self.state.digest(), snapshot: self.state.clone() };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let bytes = serde_json::to_vec(&file).map_err(|e| StoreError::StorageFailed(e.to_string()))?;
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, dir.join(SNAPSHOT_FILE))?;
        self.last_compaction = self.state.as_of;
        Ok(())
    }

    pub fn resolve(&self, as_of: AsOf) -> Result<u64, StoreError> {
        match as_of {
            AsOf::Seq(seq) if seq > self.latest_seq() => {
                Err(StoreError::OutOfRange { requested: seq, latest: self.latest_seq() })
            }
            AsOf::Seq(seq) => Ok(seq),
            AsOf::Date(day) => {
                Ok(self.log.iter().take_while(|e| e.timestamp.date_naive() <= day).last().map_or(0, |e| e.seq))
            }
        }
    }

    /// State after the first `as_of` events, rebuilt by replay.
    pub fn snapshot_as_of(&self, as_of: AsOf) -> Result<Snapshot, StoreError> {
        let seq = self.resolve(as_of)?;
        if seq == self.latest_seq() {
            return Ok(self.state.clone());
        }
        Snapshot::default().replay(&self.log[..seq as usize])
    }
}

fn read_log(path: &Path) -> Result<Vec<EventRecord>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = BufReader::new(File::open(path)?);
    let mut log = Vec::new();
    let mut line = String::new();
    let mut valid_len = 0u64;
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        if !line.ends_with('\n') {
            // torn final write: never acknowledged, drop it
            break;
        }
        let record: EventRecord = serde_json::from_str(line.trim_end())
            .map_err(|e| StoreError::StorageFailed(format!("{} line {}: {e}", path.display(), log.len() + 1)))?;
        if record.seq != log.len() as u64 + 1 {
            return Err(StoreError::StorageFailed(format!(
                "{}: expected seq {}, found {}",
                path.display(),
                log.len() + 1,
                record.seq
            )));
        }
        log.push(record);
        valid_len += n as u64;
    }
    let actual = fs::metadata(path)?.len();
    if actual != valid_len {
        OpenOptions::new().write(true).open(path)?.set_len(valid_len)?;
    }
    Ok(log)
}
