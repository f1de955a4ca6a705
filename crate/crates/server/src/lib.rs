//! HTTP JSON API over the event-sourced store.
//!
//! All mutations go through one write lock on [`App`]; reads take the read
//! lock and see the latest committed snapshot.

pub mod config;
pub mod error;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::RwLock;

use tdprio_core::agreement::{read_ratings_csv, Dimension, RatingEvent};
use tdprio_core::domain::{BusinessMetric, Portfolio, TechnicalDebtItem};
use tdprio_core::ingest::{parse_feed, ParsedFeed, TrackerConfig};
use tdprio_core::onboard::Workshop;
use tdprio_core::rule::RuleDraft;
use tdprio_core::service::{App, ReportQuery};
use tdprio_core::store::{AsOf, Entity};

pub use config::Config;
use error::{ApiError, ApiResult};

#[derive(Clone)]
pub struct AppState {
    pub app: Arc<RwLock<App>>,
    pub api_token: Option<String>,
    pub tracker: Option<TrackerConfig>,
}

impl AppState {
    pub fn new(app: App) -> AppState {
        AppState { app: Arc::new(RwLock::new(app)), api_token: None, tracker: None }
    }

    pub fn with_token(mut self, token: Option<String>) -> AppState {
        self.api_token = token;
        self
    }

    pub fn with_tracker(mut self, tracker: Option<TrackerConfig>) -> AppState {
        self.tracker = tracker;
        self
    }
}

/// Query string extractor that reports failures in the API error format.
pub struct Q<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Q<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| Q(q.0))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

/// The caller's name for the event log, from `X-Actor`.
pub struct Actor(pub String);

impl<S: Send + Sync> FromRequestParts<S> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        let actor = parts.headers.get("x-actor").and_then(|v| v.to_str().ok()).unwrap_or("api");
        Ok(Actor(actor.to_owned()))
    }
}

fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn parse_as_of(raw: Option<&str>) -> ApiResult<Option<AsOf>> {
    raw.filter(|s| !s.is_empty()).map(str::parse).transpose().map_err(ApiError::bad_request)
}

fn parse_dimension(raw: Option<&str>) -> ApiResult<Dimension> {
    match raw {
        None => Ok(Dimension::BusinessValue),
        Some(d) => Dimension::parse(d).ok_or_else(|| ApiError::bad_request(format!("unknown dimension {d:?}"))),
    }
}

fn list(raw: Option<&str>) -> Vec<String> {
    raw.map(|s| s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_owned).collect()).unwrap_or_default()
}

fn created(body: impl Serialize) -> Response {
    (StatusCode::CREATED, Json(body)).into_response()
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.api_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|given| given == token);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/portfolio", get(get_portfolio).put(put_portfolio))
        .route("/violations", get(get_violations))
        .route("/entities", post(post_entity))
        .route("/onboard", post(post_onboard))
        .route("/debt", get(get_debt).post(post_debt))
        .route("/debt/{id}/pay", post(pay_debt))
        .route("/debt/{id}/link", post(link_debt))
        .route("/rules", get(get_rules).post(post_rule))
        .route("/rules/active", post(activate_rule))
        .route("/rules/compare", get(compare_rules))
        .route("/whatif", post(post_whatif))
        .route("/backlog", get(get_backlog))
        .route("/analytics/crosstab", get(crosstab))
        .route("/analytics/payments", get(payments))
        .route("/analytics/series", get(series))
        .route("/analytics/effort", get(effort))
        .route("/analytics/types", get(types))
        .route("/analytics/decompose", get(decompose))
        .route("/ratings", get(get_ratings).post(post_ratings))
        .route("/agreement", get(get_agreement))
        .route("/disagreements", get(get_disagreements))
        .route("/sync", post(post_sync))
        .route("/metrics", get(get_metrics).post(post_metric))
        .route("/snapshot", get(get_snapshot))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

#[derive(Deserialize)]
struct AsOfQuery {
    as_of: Option<String>,
}

async fn get_portfolio(State(s): State<AppState>, Q(q): Q<AsOfQuery>) -> ApiResult<Json<Portfolio>> {
    let as_of = parse_as_of(q.as_of.as_deref())?;
    Ok(Json(s.app.read().await.snapshot_as_of(as_of)?.portfolio))
}

async fn get_snapshot(State(s): State<AppState>, Q(q): Q<AsOfQuery>) -> ApiResult<Response> {
    let as_of = parse_as_of(q.as_of.as_deref())?;
    let app = s.app.read().await;
    let snap = app.snapshot_as_of(as_of)?;
    Ok(Json(json!({"digest": snap.digest(), "snapshot": snap})).into_response())
}

async fn put_portfolio(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Json<Value>> {
    let portfolio: Portfolio = parse_json(&body)?;
    let mut app = s.app.write().await;
    let seqs = app.put_portfolio(portfolio, &actor)?;
    Ok(Json(json!({"events": seqs.len(), "seq": app.store().latest_seq(), "violations": app.violations()})))
}

async fn get_violations(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.app.read().await.violations()))
}

async fn post_entity(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Response> {
    let entity: Entity = parse_json(&body)?;
    let seq = s.app.write().await.upsert(entity.clone(), &actor)?;
    Ok(created(json!({"seq": seq, "entity": entity})))
}

async fn post_onboard(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Json<Value>> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("workshop file is not UTF-8"))?;
    let workshop = Workshop::parse(text).map_err(|e| ApiError::bad_request(format!("invalid workshop file: {e}")))?;
    let result = s.app.write().await.onboard(&workshop, &actor)?;
    Ok(Json(json!({"portfolio": result.portfolio, "violations": result.violations})))
}

#[derive(Deserialize)]
struct DebtQuery {
    #[serde(default)]
    open: bool,
}

async fn get_debt(State(s): State<AppState>, Q(q): Q<DebtQuery>) -> Json<Vec<TechnicalDebtItem>> {
    let app = s.app.read().await;
    Json(app.portfolio().debt_items.values().filter(|i| !q.open || !i.is_paid()).cloned().collect())
}

async fn post_debt(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Response> {
    let item: TechnicalDebtItem = parse_json(&body)?;
    let seq = s.app.write().await.add_debt(item.clone(), &actor)?;
    Ok(created(json!({"seq": seq, "item": item})))
}

#[derive(Deserialize)]
struct Payment {
    paid_date: NaiveDate,
}

async fn pay_debt(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Actor(actor): Actor,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let pay: Payment = parse_json(&body)?;
    let mut app = s.app.write().await;
    let seq = app.pay_debt(&id, pay.paid_date, &actor)?;
    Ok(Json(json!({"seq": seq, "item": app.debt(&id)?})))
}

#[derive(Deserialize)]
struct Link {
    #[serde(default)]
    ci_id: Option<String>,
    #[serde(default)]
    value_source_ids: Vec<String>,
}

async fn link_debt(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Actor(actor): Actor,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let link: Link = parse_json(&body)?;
    let mut app = s.app.write().await;
    let seq = app.link_debt(&id, link.ci_id.as_deref(), &link.value_source_ids, &actor)?;
    Ok(Json(json!({"seq": seq, "item": app.debt(&id)?})))
}

async fn get_rules(State(s): State<AppState>) -> Json<Value> {
    let app = s.app.read().await;
    Json(json!({"rules": app.rules(), "active": app.snapshot().active_rule}))
}

async fn post_rule(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Response> {
    let draft = RuleDraft::from_json(parse_json(&body)?).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let rule = s.app.write().await.add_rule(&draft, &actor)?;
    Ok(created(rule))
}

#[derive(Deserialize)]
struct Activate {
    rule_id: String,
    #[serde(default)]
    version: Option<u32>,
}

async fn activate_rule(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Json<Value>> {
    let req: Activate = parse_json(&body)?;
    let active = s.app.write().await.activate_rule(&req.rule_id, req.version, &actor)?;
    Ok(Json(json!(active)))
}

#[derive(Deserialize)]
struct RulesQuery {
    rules: Option<String>,
}

async fn compare_rules(State(s): State<AppState>, Q(q): Q<RulesQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.compare(&list(q.rules.as_deref()))?)))
}

async fn decompose(State(s): State<AppState>, Q(q): Q<RulesQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.decompose(&list(q.rules.as_deref()))?)))
}

/// `{"rule": <draft>, "as_of": ...}` or a bare draft.
async fn post_whatif(State(s): State<AppState>, body: Bytes) -> ApiResult<Json<Value>> {
    let mut value: Value = parse_json(&body)?;
    let as_of = match value.get("as_of") {
        Some(Value::Number(n)) => Some(AsOf::Seq(n.as_u64().ok_or_else(|| ApiError::bad_request("bad as_of"))?)),
        Some(Value::String(s)) => parse_as_of(Some(s))?,
        _ => None,
    };
    if let Some(rule) = value.get_mut("rule") {
        value = rule.take();
    }
    let draft = RuleDraft::from_json(value).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(json!(s.app.read().await.what_if(&draft, as_of)?)))
}

#[derive(Deserialize)]
struct BacklogQuery {
    rule: Option<String>,
    #[serde(default)]
    include_paid: bool,
}

async fn get_backlog(State(s): State<AppState>, Q(q): Q<BacklogQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.backlog(q.rule.as_deref(), q.include_paid)?)))
}

async fn crosstab(State(s): State<AppState>, Q(q): Q<ReportQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.crosstab(&q)?)))
}

async fn payments(State(s): State<AppState>, Q(q): Q<ReportQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.payments(&q)?)))
}

async fn series(State(s): State<AppState>, Q(q): Q<ReportQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.series(&q)?)))
}

async fn effort(State(s): State<AppState>, Q(q): Q<ReportQuery>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(s.app.read().await.effort(&q)?)))
}

async fn types(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.app.read().await.types()))
}

async fn get_ratings(State(s): State<AppState>) -> Json<Vec<RatingEvent>> {
    Json(s.app.read().await.ratings())
}

/// Accepts one rating, a JSON array, or CSV with `Content-Type: text/csv`.
async fn post_ratings(
    State(s): State<AppState>,
    Actor(actor): Actor,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let is_csv = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|ct| ct.starts_with("text/csv"));
    let ratings: Vec<RatingEvent> = if is_csv {
        read_ratings_csv(&body[..]).map_err(|e| ApiError::from(tdprio_core::service::AppError::from(e)))?
    } else {
        match parse_json::<Value>(&body)? {
            v @ Value::Array(_) => serde_json::from_value(v),
            v => serde_json::from_value(v).map(|r| vec![r]),
        }
        .map_err(|e| ApiError::bad_request(format!("invalid rating: {e}")))?
    };
    let mut app = s.app.write().await;
    let mut seqs = Vec::with_capacity(ratings.len());
    for r in ratings {
        seqs.push(app.rate(r, &actor)?);
    }
    Ok(created(json!({"recorded": seqs.len(), "seq": app.store().latest_seq()})))
}

#[derive(Deserialize)]
struct AgreementQuery {
    raters: Option<String>,
    dimension: Option<String>,
    as_of: Option<String>,
}

async fn get_agreement(State(s): State<AppState>, Q(q): Q<AgreementQuery>) -> ApiResult<Json<Value>> {
    let dimension = parse_dimension(q.dimension.as_deref())?;
    let as_of = parse_as_of(q.as_of.as_deref())?;
    let raters = list(q.raters.as_deref());
    let raters = (!raters.is_empty()).then_some(raters);
    Ok(Json(json!(s.app.read().await.agreement(raters.as_deref(), dimension, as_of)?)))
}

#[derive(Deserialize)]
struct DimensionQuery {
    dimension: Option<String>,
}

async fn get_disagreements(State(s): State<AppState>, Q(q): Q<DimensionQuery>) -> ApiResult<Json<Value>> {
    let dimension = parse_dimension(q.dimension.as_deref())?;
    Ok(Json(json!(s.app.read().await.disagreements(dimension))))
}

async fn fetch(tracker: TrackerConfig) -> ApiResult<ParsedFeed> {
    let feed = tokio::task::spawn_blocking(move || tracker.fetch_feed())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "tracker_unavailable", e.to_string()))?;
    Ok(ParsedFeed { tracker: feed.tracker, issues: feed.issues, malformed: Vec::new() })
}

/// Syncs the posted feed, or pulls from the configured tracker when the
/// body is empty.
async fn post_sync(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Json<Value>> {
    let feed = if body.iter().all(u8::is_ascii_whitespace) {
        let tracker = s
            .tracker
            .clone()
            .ok_or_else(|| ApiError::bad_request("no feed posted and no tracker configured"))?;
        fetch(tracker).await?
    } else {
        let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("feed is not UTF-8"))?;
        parse_feed(text).map_err(|e| ApiError::from(tdprio_core::service::AppError::from(e)))?
    };
    Ok(Json(json!(s.app.write().await.sync(&feed, &actor)?)))
}

#[derive(Deserialize)]
struct MetricsQuery {
    asset: Option<String>,
}

async fn get_metrics(State(s): State<AppState>, Q(q): Q<MetricsQuery>) -> Json<Value> {
    let app = s.app.read().await;
    match q.asset {
        Some(asset) => Json(json!(app.metrics_for_asset(&asset))),
        None => Json(json!(app.metrics())),
    }
}

async fn post_metric(State(s): State<AppState>, Actor(actor): Actor, body: Bytes) -> ApiResult<Response> {
    let metric: BusinessMetric = parse_json(&body)?;
    let seq = s.app.write().await.upsert(Entity::Metric(metric.clone()), &actor)?;
    Ok(created(json!({"seq": seq, "metric": metric})))
}

/// Periodically pulls the configured tracker into the store.
pub async fn poll_tracker(state: AppState) {
    let Some(tracker) = state.tracker.clone() else { return };
    let mut tick = tokio::time::interval(std::time::Duration::from_secs(tracker.poll_interval_secs.max(1)));
    tick.tick().await;
    loop {
        tick.tick().await;
        match fetch(tracker.clone()).await {
            Ok(feed) => match state.app.write().await.sync(&feed, "tracker-poll") {
                Ok(report) => tracing::info!(imported = report.imported, updated = report.updated, "tracker sync"),
                Err(e) => tracing::warn!("tracker sync rejected: {e}"),
            },
            Err(e) => tracing::warn!("tracker poll failed: {}", e.message),
        }
    }
}

/// Opens the store and builds the shared state from `cfg`.
pub fn state_from_config(cfg: &Config) -> Result<AppState, tdprio_core::service::AppError> {
    let mut app = App::open(&cfg.data_dir)?;
    if let Some(map) = &cfg.type_map {
        app = app.with_type_map(map.clone());
    }
    Ok(AppState::new(app).with_token(cfg.api_token.clone()).with_tracker(cfg.tracker.clone()))
}
