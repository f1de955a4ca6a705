//! Executes operations either on a local data directory or against a
//! running server. Both paths return the same JSON documents.

use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;
use serde_json::{json, Value};

use tdprio_core::agreement::{Dimension, RatingEvent};
use tdprio_core::domain::{Portfolio, TechnicalDebtItem};
use tdprio_core::ingest::{parse_feed, TrackerConfig};
use tdprio_core::onboard::Workshop;
use tdprio_core::rule::RuleDraft;
use tdprio_core::service::{App, AppError, ReportQuery};
use tdprio_core::store::{AsOf, Entity, StoreError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Rejected by validation or the domain rules.
    Domain,
    Usage,
    Io,
    Connectivity,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Domain => 1,
            ErrorKind::Usage => 2,
            ErrorKind::Io => 3,
            ErrorKind::Connectivity => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl CliError {
    pub fn new(kind: ErrorKind, code: &str, message: impl Into<String>) -> CliError {
        CliError { kind, code: code.to_owned(), message: message.into(), details: Value::Null }
    }

    pub fn usage(message: impl Into<String>) -> CliError {
        CliError::new(ErrorKind::Usage, "usage", message)
    }

    pub fn io(message: impl Into<String>) -> CliError {
        CliError::new(ErrorKind::Io, "io", message)
    }
}

impl From<AppError> for CliError {
    fn from(e: AppError) -> CliError {
        let kind = match e {
            AppError::Store(StoreError::StorageFailed(_)) => ErrorKind::Io,
            _ => ErrorKind::Domain,
        };
        CliError { kind, code: e.code().to_owned(), message: e.to_string(), details: e.details() }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportKind {
    Crosstab,
    Payments,
    Series,
    Effort,
    Types,
    Decompose,
}

impl ReportKind {
    fn path(self) -> &'static str {
        match self {
            ReportKind::Crosstab => "crosstab",
            ReportKind::Payments => "payments",
            ReportKind::Series => "series",
            ReportKind::Effort => "effort",
            ReportKind::Types => "types",
            ReportKind::Decompose => "decompose",
        }
    }
}

pub enum Req {
    Onboard(String),
    Portfolio,
    PutPortfolio(Portfolio),
    Violations,
    Upsert(Entity),
    AddDebt(TechnicalDebtItem),
    ListDebt { open: bool },
    PayDebt { id: String, date: NaiveDate },
    LinkDebt { id: String, ci: Option<String>, value_sources: Vec<String> },
    AddRule(Value),
    ActivateRule { id: String, version: Option<u32> },
    Rules,
    CompareRules(Vec<String>),
    WhatIf { draft: Value, as_of: Option<String> },
    Backlog { rule: Option<String>, include_paid: bool },
    Rate(Vec<RatingEvent>),
    Agreement { raters: Vec<String>, dimension: Dimension, as_of: Option<String> },
    Disagreements(Dimension),
    SyncFeed(String),
    SyncTracker,
    Report { kind: ReportKind, query: ReportQuery, rules: Vec<String> },
}

pub trait Backend {
    fn call(&mut self, req: Req) -> CliResult<Value>;

    fn portfolio(&mut self) -> CliResult<Portfolio> {
        let v = self.call(Req::Portfolio)?;
        serde_json::from_value(v).map_err(|e| CliError::io(format!("unexpected portfolio document: {e}")))
    }
}

fn to_json(v: impl Serialize) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::io(e.to_string()))
}

fn draft_of(v: Value) -> CliResult<RuleDraft> {
    RuleDraft::from_json(v).map_err(|e| CliError::usage(format!("invalid rule document: {e}")))
}

fn as_of(raw: Option<&str>) -> CliResult<Option<AsOf>> {
    raw.map(str::parse).transpose().map_err(CliError::usage)
}

/// Works directly on the data directory.
pub struct Local {
    app: App,
    actor: String,
}

impl Local {
    pub fn open(dir: &Path, actor: &str) -> CliResult<Local> {
        let app = App::open(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        Ok(Local { app, actor: actor.to_owned() })
    }
}

impl Backend for Local {
    fn call(&mut self, req: Req) -> CliResult<Value> {
        let app = &mut self.app;
        let actor = self.actor.as_str();
        match req {
            Req::Onboard(text) => {
                let workshop = Workshop::parse(&text).map_err(|e| CliError::usage(format!("invalid workshop file: {e}")))?;
                let out = app.onboard(&workshop, actor)?;
                Ok(json!({"portfolio": out.portfolio, "violations": out.violations}))
            }
            Req::Portfolio => to_json(app.portfolio()),
            Req::PutPortfolio(p) => {
                let seqs = app.put_portfolio(p, actor)?;
                Ok(json!({"events": seqs.len(), "seq": app.store().latest_seq(), "violations": app.violations()}))
            }
            Req::Violations => to_json(app.violations()),
            Req::Upsert(entity) => {
                let seq = app.upsert(entity.clone(), actor)?;
                Ok(json!({"seq": seq, "entity": entity}))
            }
            Req::AddDebt(item) => {
                let id = item.id.to_string();
                let seq = app.add_debt(item, actor)?;
                Ok(json!({"seq": seq, "item": app.debt(&id)?}))
            }
            Req::ListDebt { open } => {
                to_json(app.portfolio().debt_items.values().filter(|i| !open || !i.is_paid()).collect::<Vec<_>>())
            }
            Req::PayDebt { id, date } => {
                let seq = app.pay_debt(&id, date, actor)?;
                Ok(json!({"seq": seq, "item": app.debt(&id)?}))
            }
            Req::LinkDebt { id, ci, value_sources } => {
                let seq = app.link_debt(&id, ci.as_deref(), &value_sources, actor)?;
                Ok(json!({"seq": seq, "item": app.debt(&id)?}))
            }
            Req::AddRule(v) => to_json(app.add_rule(&draft_of(v)?, actor)?),
            Req::ActivateRule { id, version } => to_json(app.activate_rule(&id, version, actor)?),
            Req::Rules => Ok(json!({"rules": app.rules(), "active": app.snapshot().active_rule})),
            Req::CompareRules(rules) => to_json(app.compare(&rules)?),
            Req::WhatIf { draft, as_of: at } => to_json(app.what_if(&draft_of(draft)?, as_of(at.as_deref())?)?),
            Req::Backlog { rule, include_paid } => to_json(app.backlog(rule.as_deref(), include_paid)?),
            Req::Rate(ratings) => {
                let n = ratings.len();
                for r in ratings {
                    app.rate(r, actor)?;
                }
                Ok(json!({"recorded": n, "seq": app.store().latest_seq()}))
            }
            Req::Agreement { raters, dimension, as_of: at } => {
                let raters = (!raters.is_empty()).then_some(raters);
                to_json(app.agreement(raters.as_deref(), dimension, as_of(at.as_deref())?)?)
            }
            Req::Disagreements(dimension) => to_json(app.disagreements(dimension)),
            Req::SyncFeed(text) => {
                let feed = parse_feed(&text).map_err(|e| CliError::from(AppError::from(e)))?;
                to_json(app.sync(&feed, actor)?)
            }
            Req::SyncTracker => {
                let tracker = TrackerConfig::from_env().ok_or_else(|| {
                    CliError::usage(format!("no tracker configured; set {}", TrackerConfig::URL_VAR))
                })?;
                let feed = tracker
                    .fetch_feed()
                    .map_err(|e| CliError::new(ErrorKind::Connectivity, "tracker_unavailable", e.to_string()))?;
                let feed = tdprio_core::ingest::ParsedFeed { tracker: feed.tracker, issues: feed.issues, malformed: vec![] };
                to_json(app.sync(&feed, actor)?)
            }
            Req::Report { kind, query, rules } => match kind {
                ReportKind::Crosstab => to_json(app.crosstab(&query)?),
                ReportKind::Payments => to_json(app.payments(&query)?),
                ReportKind::Series => to_json(app.series(&query)?),
                ReportKind::Effort => to_json(app.effort(&query)?),
                ReportKind::Types => to_json(app.types()),
                ReportKind::Decompose => to_json(app.decompose(&rules)?),
            },
        }
    }
}

/// Talks to a running server.
pub struct Remote {
    base: String,
    token: Option<String>,
    actor: String,
    agent: ureq::Agent,
}

impl Remote {
    pub fn new(base: &str, token: Option<String>, actor: &str) -> Remote {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Remote { base: base.trim_end_matches('/').to_owned(), token, actor: actor.to_owned(), agent }
    }

    fn send(&self, method: &str, path: &str, query: &[(&str, String)], body: Option<(&str, String)>) -> CliResult<Value> {
        let url = format!("{}{path}", self.base);
        let unreachable = |e: ureq::Error| CliError::new(ErrorKind::Connectivity, "unreachable", format!("{url}: {e}"));
        let auth = self.token.as_ref().map(|t| format!("Bearer {t}"));
        let mut resp = match (method, body) {
            ("GET", _) => {
                let mut req = self.agent.get(&url).header("x-actor", &self.actor);
                for (k, v) in query {
                    req = req.query(*k, v);
                }
                if let Some(a) = &auth {
                    req = req.header("authorization", a);
                }
                req.call().map_err(unreachable)?
            }
            (m, body) => {
                let (ctype, text) = body.unwrap_or(("application/json", String::new()));
                let mut req = if m == "PUT" { self.agent.put(&url) } else { self.agent.post(&url) };
                req = req.header("x-actor", &self.actor).header("content-type", ctype);
                if let Some(a) = &auth {
                    req = req.header("authorization", a);
                }
                req.send(text).map_err(unreachable)?
            }
        };
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(unreachable)?;
        let value: Value = if text.trim().is_empty() {
            Value::Null
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::new(ErrorKind::Connectivity, "bad_response", format!("{url}: {e}")))?
        };
        if status.is_success() {
            return Ok(value);
        }
        let kind = match status.as_u16() {
            502..=504 => ErrorKind::Connectivity,
            500..=599 => ErrorKind::Io,
            400 => ErrorKind::Usage,
            _ => ErrorKind::Domain,
        };
        Err(CliError {
            kind,
            code: value["code"].as_str().unwrap_or("http_error").to_owned(),
            message: value["message"].as_str().map(str::to_owned).unwrap_or_else(|| format!("{url}: HTTP {status}")),
            details: value["details"].clone(),
        })
    }

    fn get(&self, path: &str, query: &[(&str, String)]) -> CliResult<Value> {
        self.send("GET", path, query, None)
    }

    fn post(&self, path: &str, body: Value) -> CliResult<Value> {
        self.send("POST", path, &[], Some(("application/json", body.to_string())))
    }
}

fn opt(key: &'static str, v: Option<impl ToString>) -> Option<(&'static str, String)> {
    v.map(|v| (key, v.to_string()))
}

impl Backend for Remote {
    fn call(&mut self, req: Req) -> CliResult<Value> {
        match req {
            Req::Onboard(text) => self.send("POST", "/onboard", &[], Some(("application/json", text))),
            Req::Portfolio => self.get("/portfolio", &[]),
            Req::PutPortfolio(p) => self.send("PUT", "/portfolio", &[], Some(("application/json", to_json(p)?.to_string()))),
            Req::Violations => self.get("/violations", &[]),
            Req::Upsert(Entity::Metric(m)) => self.post("/metrics", to_json(m)?),
            Req::Upsert(entity) => self.post("/entities", to_json(entity)?),
            Req::AddDebt(item) => self.post("/debt", to_json(item)?),
            Req::ListDebt { open } => self.get("/debt", &[("open", open.to_string())]),
            Req::PayDebt { id, date } => self.post(&format!("/debt/{id}/pay"), json!({"paid_date": date})),
            Req::LinkDebt { id, ci, value_sources } => {
                self.post(&format!("/debt/{id}/link"), json!({"ci_id": ci, "value_source_ids": value_sources}))
            }
            Req::AddRule(v) => self.post("/rules", v),
            Req::ActivateRule { id, version } => self.post("/rules/active", json!({"rule_id": id, "version": version})),
            Req::Rules => self.get("/rules", &[]),
            Req::CompareRules(rules) => self.get("/rules/compare", &[("rules", rules.join(","))]),
            Req::WhatIf { draft, as_of } => self.post("/whatif", json!({"rule": draft, "as_of": as_of})),
            Req::Backlog { rule, include_paid } => {
                let mut q = vec![("include_paid", include_paid.to_string())];
                q.extend(opt("rule", rule));
                self.get("/backlog", &q)
            }
            Req::Rate(ratings) => self.post("/ratings", to_json(ratings)?),
            Req::Agreement { raters, dimension, as_of } => {
                let mut q = vec![("raters", raters.join(",")), ("dimension", dimension.as_str().to_owned())];
                q.extend(opt("as_of", as_of));
                self.get("/agreement", &q)
            }
            Req::Disagreements(dimension) => self.get("/disagreements", &[("dimension", dimension.as_str().to_owned())]),
            Req::SyncFeed(text) => self.send("POST", "/sync", &[], Some(("application/json", text))),
            Req::SyncTracker => self.send("POST", "/sync", &[], None),
            Req::Report { kind, query, rules } => {
                let mut q: Vec<(&str, String)> = [
                    opt("rule", query.rule),
                    opt("from", query.from),
                    opt("to", query.to),
                    opt("split", query.split),
                ]
                .into_iter()
                .flatten()
                .collect();
                if !rules.is_empty() {
                    q.push(("rules", rules.join(",")));
                }
                self.get(&format!("/analytics/{}", kind.path()), &q)
            }
        }
    }
}
