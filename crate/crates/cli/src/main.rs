//! `tdprio`: command-line client. Works on a local data directory, or on a
//! server when `--server` is given.

mod backend;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::Value;

use tdprio_core::agreement::{read_ratings_csv, Dimension, RatingEvent};
use tdprio_core::domain::{
    AssetState, BusinessValue, ConfigurationItem, DebtType, ItAsset, Level, Portfolio, TechnicalDebtItem, Usage,
    ValueSource,
};
use tdprio_core::service::ReportQuery;
use tdprio_core::store::Entity;

use backend::{Backend, CliError, CliResult, Local, Remote, ReportKind, Req};
use output::{row, row_of, Format, Output, Row};

#[derive(Parser)]
#[command(name = "tdprio", version, about = "Business-driven technical debt prioritization")]
struct Cli {
    /// Local data directory, used when no server is given.
    #[arg(long, global = true, env = "TDPRIO_DATA_DIR", default_value = "data")]
    data_dir: PathBuf,
    /// Base URL of a tdprio server.
    #[arg(long, global = true, env = "TDPRIO_SERVER")]
    server: Option<String>,
    /// Bearer token for the server.
    #[arg(long, global = true, env = "TDPRIO_API_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, global = true, value_enum, default_value = "table")]
    format: Format,
    /// Name recorded on every change.
    #[arg(long, global = true, env = "TDPRIO_ACTOR", default_value = "cli")]
    actor: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a workshop file (CIs, assets, value sources, debt, rule).
    Onboard { file: PathBuf },
    #[command(subcommand)]
    Debt(DebtCmd),
    #[command(subcommand)]
    Ci(CiCmd),
    #[command(subcommand)]
    Asset(AssetCmd),
    #[command(subcommand)]
    Vs(VsCmd),
    #[command(subcommand)]
    Rule(RuleCmd),
    /// Record a classification rating, or a CSV file of them.
    Rate(RateArgs),
    /// Inter-rater agreement on value source classification.
    Agreement(AgreementArgs),
    /// Import a tracker feed, portfolio document or ratings CSV.
    Import {
        file: PathBuf,
        #[arg(long, value_enum)]
        kind: Option<ImportKind>,
    },
    /// Pull the issue tracker, or apply a saved feed.
    Sync {
        #[arg(long)]
        feed: Option<PathBuf>,
    },
    Report(ReportArgs),
    /// List portfolio invariant violations.
    Check,
}

#[derive(Subcommand)]
enum DebtCmd {
    Add(DebtAdd),
    List {
        /// Only unpaid items.
        #[arg(long)]
        open: bool,
        /// Order by business priority.
        #[arg(long)]
        ranked: bool,
        /// Rule as `id` or `id@version`; defaults to the active rule.
        #[arg(long)]
        rule: Option<String>,
    },
    Pay {
        id: String,
        /// Defaults to today.
        #[arg(long)]
        date: Option<NaiveDate>,
    },
    Link {
        id: String,
        #[arg(long)]
        ci: Option<String>,
        #[arg(long = "vs", value_delimiter = ',')]
        value_sources: Vec<String>,
    },
}

#[derive(Args)]
struct DebtAdd {
    #[arg(long)]
    id: String,
    #[arg(long)]
    name: String,
    #[arg(long, default_value = "")]
    description: String,
    /// Identification date; defaults to today.
    #[arg(long)]
    created: Option<NaiveDate>,
    #[arg(long = "type", value_parser = enum_arg::<DebtType>)]
    debt_type: DebtType,
    #[arg(long, value_parser = enum_arg::<Level>)]
    priority: Level,
    #[arg(long, value_parser = enum_arg::<Level>)]
    effort: Option<Level>,
    #[arg(long)]
    ci: Option<String>,
    #[arg(long = "vs", value_delimiter = ',')]
    value_sources: Vec<String>,
    #[arg(long)]
    tracker_issue: Option<String>,
    #[arg(long = "tag", value_delimiter = ',')]
    tags: Vec<String>,
}

#[derive(Subcommand)]
enum CiCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_parser = enum_arg::<AssetState>)]
        state: AssetState,
        /// Composition parents.
        #[arg(long = "parent", value_delimiter = ',')]
        parents: Vec<String>,
        #[arg(long = "depends-on", value_delimiter = ',')]
        depends_on: Vec<String>,
    },
}

#[derive(Subcommand)]
enum AssetCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_parser = enum_arg::<AssetState>)]
        state: AssetState,
        #[arg(long = "ci", value_delimiter = ',')]
        cis: Vec<String>,
    },
}

#[derive(Subcommand)]
enum VsCmd {
    Add {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, value_parser = enum_arg::<BusinessValue>)]
        value: BusinessValue,
        #[arg(long, value_parser = enum_arg::<Usage>)]
        usage: Usage,
        #[arg(long = "asset", value_delimiter = ',')]
        assets: Vec<String>,
    },
    /// Change the business value or usage of a value source.
    Classify {
        id: String,
        #[arg(long, value_parser = enum_arg::<BusinessValue>)]
        value: Option<BusinessValue>,
        #[arg(long, value_parser = enum_arg::<Usage>)]
        usage: Option<Usage>,
    },
}

#[derive(Subcommand)]
enum RuleCmd {
    /// Create a rule, or a new version of one, from a JSON file.
    Add {
        file: PathBuf,
        #[arg(long)]
        activate: bool,
    },
    Activate {
        id: String,
        #[arg(long)]
        version: Option<u32>,
    },
    List,
    /// Cell-by-cell comparison; defaults to the latest version of every rule.
    Compare {
        #[arg(value_delimiter = ',')]
        rules: Vec<String>,
    },
    /// Rank the backlog under a draft rule without saving it.
    Whatif {
        file: PathBuf,
        #[arg(long)]
        as_of: Option<String>,
    },
}

#[derive(Args)]
struct RateArgs {
    /// CSV with rater_id,value_source_id,dimension,category,timestamp.
    #[arg(long, conflicts_with_all = ["rater", "vs", "category"])]
    file: Option<PathBuf>,
    #[arg(long, required_unless_present = "file")]
    rater: Option<String>,
    #[arg(long, required_unless_present = "file")]
    vs: Option<String>,
    #[arg(long, value_parser = dimension_arg, default_value = "business_value")]
    dimension: Dimension,
    #[arg(long, required_unless_present = "file")]
    category: Option<String>,
}

#[derive(Args)]
struct AgreementArgs {
    #[arg(long, value_delimiter = ',')]
    raters: Vec<String>,
    #[arg(long, value_parser = dimension_arg, default_value = "business_value")]
    dimension: Dimension,
    /// Event sequence number or YYYY-MM-DD.
    #[arg(long)]
    as_of: Option<String>,
    /// List the value sources raters disagree on instead.
    #[arg(long)]
    disagreements: bool,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ImportKind {
    Feed,
    Portfolio,
    Ratings,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(value_enum)]
    kind: ReportKind,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Date dividing the two trend periods.
    #[arg(long)]
    split: Option<NaiveDate>,
    /// Rules for `decompose`; defaults to the latest version of every rule.
    #[arg(long, value_delimiter = ',')]
    rules: Vec<String>,
}

fn enum_arg<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(Value::String(s.trim().to_ascii_lowercase().replace('-', "_"))).map_err(|e| e.to_string())
}

fn dimension_arg(s: &str) -> Result<Dimension, String> {
    Dimension::parse(&s.replace('-', "_")).ok_or_else(|| format!("unknown dimension {s:?}; use business_value or usage"))
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn read_json(path: &Path) -> CliResult<Value> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn today() -> NaiveDate {
    Utc::now().date_naive()
}

fn field(v: &Value, keys: &[&str]) -> Row {
    keys.iter().map(|k| (k.to_string(), v[*k].clone())).collect()
}

fn rows_of(v: &Value, keys: &[&str]) -> Vec<Row> {
    v.as_array().map(|a| a.iter().map(|r| field(r, keys)).collect()).unwrap_or_default()
}

fn counts(p: &Value) -> Vec<Row> {
    ["configuration_items", "it_assets", "value_sources", "debt_items", "metrics"]
        .iter()
        .map(|k| row([("entity", Value::from(*k)), ("count", Value::from(p[*k].as_array().map_or(0, Vec::len)))]))
        .collect()
}

fn report_rows(kind: ReportKind, doc: &Value) -> Vec<Row> {
    let level = ["label", "total", "high", "medium", "low", "pct_high", "pct_medium", "pct_low"];
    match kind {
        ReportKind::Crosstab => rows_of(doc, &level),
        ReportKind::Effort => rows_of(&doc["rows"], &level),
        ReportKind::Payments => {
            let keys = ["label", "open_start", "identified", "paid", "open_end", "pct_paid_display"];
            let mut rows = rows_of(&doc["groups"], &keys);
            rows.push(field(&doc["total"], &keys));
            rows
        }
        ReportKind::Series => {
            let groups = doc["groups"].as_array().cloned().unwrap_or_default();
            std::iter::once(doc["total"].clone())
                .chain(groups)
                .flat_map(|g| {
                    let label = g["label"].clone();
                    g["points"]
                        .as_array()
                        .cloned()
                        .unwrap_or_default()
                        .into_iter()
                        .map(move |p| {
                            row([
                                ("group", label.clone()),
                                ("date", p["date"].clone()),
                                ("open", p["open_count"].clone()),
                                ("identified", p["identified"].clone()),
                                ("paid", p["paid"].clone()),
                            ])
                        })
                })
                .collect()
        }
        ReportKind::Types => rows_of(doc, &["debt_type", "count", "pct"]),
        ReportKind::Decompose => {
            rows_of(doc, &["variable", "pairs", "high", "medium", "low", "pct_high", "pct_medium", "pct_low"])
        }
    }
}

fn entity_upsert(b: &mut dyn Backend, entity: Entity) -> CliResult<Output> {
    let doc = b.call(Req::Upsert(entity))?;
    let rows = vec![row_of(&doc["entity"])];
    Ok(Output::new(doc, rows))
}

fn merge(mut base: Portfolio, incoming: Portfolio) -> Portfolio {
    base.cis.extend(incoming.cis);
    base.assets.extend(incoming.assets);
    base.value_sources.extend(incoming.value_sources);
    base.debt_items.extend(incoming.debt_items);
    base.metrics.extend(incoming.metrics);
    base
}

fn detect(path: &Path, text: &str) -> ImportKind {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return ImportKind::Ratings;
    }
    match serde_json::from_str::<Value>(text) {
        Ok(v) if v.get("tracker").is_some() && v.get("issues").is_some() => ImportKind::Feed,
        Ok(_) => ImportKind::Portfolio,
        Err(_) => ImportKind::Ratings,
    }
}

fn ratings_from_csv(text: &str) -> CliResult<Vec<RatingEvent>> {
    read_ratings_csv(text.as_bytes()).map_err(|e| CliError::new(backend::ErrorKind::Domain, "invalid_rating", e.to_string()))
}

fn sync_output(doc: Value) -> Output {
    let rows = vec![field(&doc, &["imported", "updated", "skipped"])];
    Output::new(doc, rows)
}

fn run(cli: Cli, b: &mut dyn Backend) -> CliResult<Output> {
    match cli.command {
        Command::Onboard { file } => {
            let doc = b.call(Req::Onboard(read(&file)?))?;
            let rows = counts(&doc["portfolio"]);
            Ok(Output::new(doc, rows))
        }
        Command::Check => Ok(Output::plain(b.call(Req::Violations)?)),
        Command::Debt(DebtCmd::Add(a)) => {
            let item = TechnicalDebtItem {
                id: a.id.into(),
                name: a.name,
                description: a.description,
                created_date: a.created.unwrap_or_else(today),
                paid_date: None,
                debt_type: a.debt_type,
                technical_priority: a.priority,
                technical_effort: a.effort,
                ci_id: a.ci.map(Into::into),
                value_source_ids: a.value_sources.into_iter().map(Into::into).collect(),
                tracker: None,
                tracker_issue_id: a.tracker_issue,
                needs_linking: false,
                factor_tags: a.tags.into_iter().collect(),
            };
            let doc = b.call(Req::AddDebt(item))?;
            let keys = ["id", "name", "debt_type", "technical_priority", "created_date", "ci_id", "needs_linking"];
            let rows = vec![field(&doc["item"], &keys)];
            Ok(Output::new(doc, rows))
        }
        Command::Debt(DebtCmd::List { open, ranked: false, rule: None }) => {
            let doc = b.call(Req::ListDebt { open })?;
            let keys = ["id", "name", "debt_type", "technical_priority", "created_date", "paid_date", "ci_id"];
            let mut rows = rows_of(&doc, &keys);
            for (row, item) in rows.iter_mut().zip(doc.as_array().into_iter().flatten()) {
                row.push(("value_source_ids".into(), item["value_source_ids"].clone()));
            }
            Ok(Output::new(doc, rows))
        }
        Command::Debt(DebtCmd::List { open, rule, .. }) => {
            let doc = b.call(Req::Backlog { rule, include_paid: !open })?;
            let rows = rows_of(&doc["items"], &["debt_id", "name", "rank", "bucket", "created_date", "paid_date"]);
            Ok(Output::new(doc, rows))
        }
        Command::Debt(DebtCmd::Pay { id, date }) => {
            let doc = b.call(Req::PayDebt { id, date: date.unwrap_or_else(today) })?;
            let rows = vec![field(&doc["item"], &["id", "name", "created_date", "paid_date"])];
            Ok(Output::new(doc, rows))
        }
        Command::Debt(DebtCmd::Link { id, ci, value_sources }) => {
            let doc = b.call(Req::LinkDebt { id, ci, value_sources })?;
            let rows = vec![field(&doc["item"], &["id", "ci_id", "value_source_ids", "needs_linking"])];
            Ok(Output::new(doc, rows))
        }
        Command::Ci(CiCmd::Add { id, name, state, parents, depends_on }) => entity_upsert(
            b,
            Entity::ConfigurationItem(ConfigurationItem {
                name: name.unwrap_or_else(|| id.clone()),
                id: id.into(),
                state,
                parent_ids: parents.into_iter().map(Into::into).collect(),
                depends_on: depends_on.into_iter().map(Into::into).collect(),
            }),
        ),
        Command::Asset(AssetCmd::Add { id, name, state, cis }) => entity_upsert(
            b,
            Entity::ItAsset(ItAsset {
                name: name.unwrap_or_else(|| id.clone()),
                id: id.into(),
                state,
                ci_ids: cis.into_iter().map(Into::into).collect(),
            }),
        ),
        Command::Vs(VsCmd::Add { id, name, value, usage, assets }) => entity_upsert(
            b,
            Entity::ValueSource(ValueSource {
                name: name.unwrap_or_else(|| id.clone()),
                id: id.into(),
                business_value: value,
                usage,
                asset_ids: assets.into_iter().map(Into::into).collect(),
            }),
        ),
        Command::Vs(VsCmd::Classify { id, value, usage }) => {
            let mut vs = b
                .portfolio()?
                .value_sources
                .remove(id.as_str())
                .ok_or_else(|| CliError::new(backend::ErrorKind::Domain, "not_found", format!("value source {id}")))?;
            vs.business_value = value.unwrap_or(vs.business_value);
            vs.usage = usage.unwrap_or(vs.usage);
            entity_upsert(b, Entity::ValueSource(vs))
        }
        Command::Rule(RuleCmd::Add { file, activate }) => {
            let rule = b.call(Req::AddRule(read_json(&file)?))?;
            let rule_id = rule["id"].as_str().unwrap_or_default().to_owned();
            let version = rule["version"].as_u64().map(|v| v as u32);
            let rows = vec![field(&rule, &["id", "version", "name", "author", "created_date"])];
            if activate {
                b.call(Req::ActivateRule { id: rule_id, version })?;
            }
            Ok(Output::new(rule, rows))
        }
        Command::Rule(RuleCmd::Activate { id, version }) => {
            Ok(Output::plain(b.call(Req::ActivateRule { id, version })?))
        }
        Command::Rule(RuleCmd::List) => {
            let doc = b.call(Req::Rules)?;
            let active = (doc["active"]["rule_id"].clone(), doc["active"]["version"].clone());
            let mut rows = rows_of(&doc["rules"], &["id", "version", "name", "author", "created_date"]);
            for (row, rule) in rows.iter_mut().zip(doc["rules"].as_array().into_iter().flatten()) {
                let on = rule["id"] == active.0 && rule["version"] == active.1;
                row.push(("active".into(), Value::Bool(on)));
            }
            Ok(Output::new(doc, rows))
        }
        Command::Rule(RuleCmd::Compare { rules }) => {
            let doc = b.call(Req::CompareRules(rules))?;
            let names = doc["rules"].as_array().cloned().unwrap_or_default();
            let rows = doc["cells"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|c| {
                    let mut row = row([("cell", c["cell"].clone())]);
                    for (name, rank) in names.iter().zip(c["ranks"].as_array().into_iter().flatten()) {
                        row.push((name.as_str().unwrap_or_default().to_owned(), rank.clone()));
                    }
                    row.push(("unanimous".into(), c["unanimous"].clone()));
                    row.push(("unanimous_bucket".into(), c["unanimous_bucket"].clone()));
                    row
                })
                .collect();
            Ok(Output::new(doc, rows))
        }
        Command::Rule(RuleCmd::Whatif { file, as_of }) => {
            let doc = b.call(Req::WhatIf { draft: read_json(&file)?, as_of })?;
            let keys = ["debt_id", "active_rank", "candidate_rank", "rank_change", "active_bucket", "candidate_bucket"];
            let rows = rows_of(&doc["deltas"], &keys);
            Ok(Output::new(doc, rows))
        }
        Command::Rate(a) => {
            let ratings = match a.file {
                Some(file) => ratings_from_csv(&read(&file)?)?,
                None => vec![RatingEvent {
                    rater_id: a.rater.unwrap_or_default(),
                    value_source_id: a.vs.unwrap_or_default().into(),
                    dimension: a.dimension,
                    category: a.category.unwrap_or_default(),
                    timestamp: Utc::now(),
                }],
            };
            Ok(Output::plain(b.call(Req::Rate(ratings))?))
        }
        Command::Agreement(a) if a.disagreements => {
            let doc = b.call(Req::Disagreements(a.dimension))?;
            let rows = doc
                .as_array()
                .into_iter()
                .flatten()
                .map(|d| {
                    let mut row = field(d, &["value_source_id", "dissenting"]);
                    if let Some(cats) = d["categories"].as_object() {
                        row.extend(cats.iter().map(|(k, v)| (k.clone(), v.clone())));
                    }
                    row
                })
                .collect();
            Ok(Output::new(doc, rows))
        }
        Command::Agreement(a) => {
            let doc = b.call(Req::Agreement { raters: a.raters, dimension: a.dimension, as_of: a.as_of })?;
            let keys = ["method", "kappa", "observed_agreement", "expected_agreement", "n_subjects", "degenerate"];
            let rows = doc
                .as_object()
                .into_iter()
                .flatten()
                .map(|(pair, score)| {
                    let mut row = row([("raters", Value::String(pair.clone()))]);
                    row.extend(field(score, &keys));
                    row
                })
                .collect();
            Ok(Output::new(doc, rows))
        }
        Command::Import { file, kind } => {
            let text = read(&file)?;
            match kind.unwrap_or_else(|| detect(&file, &text)) {
                ImportKind::Feed => Ok(sync_output(b.call(Req::SyncFeed(text))?)),
                ImportKind::Ratings => Ok(Output::plain(b.call(Req::Rate(ratings_from_csv(&text)?))?)),
                ImportKind::Portfolio => {
                    let incoming: Portfolio = serde_json::from_str(&text)
                        .map_err(|e| CliError::usage(format!("{}: not a portfolio document: {e}", file.display())))?;
                    let merged = merge(b.portfolio()?, incoming);
                    Ok(Output::plain(b.call(Req::PutPortfolio(merged))?))
                }
            }
        }
        Command::Sync { feed } => {
            let req = match feed {
                Some(path) => Req::SyncFeed(read(&path)?),
                None => Req::SyncTracker,
            };
            Ok(sync_output(b.call(req)?))
        }
        Command::Report(r) => {
            let query = ReportQuery { rule: r.rule, from: r.from, to: r.to, split: r.split };
            let doc = b.call(Req::Report { kind: r.kind, query, rules: r.rules })?;
            let rows = report_rows(r.kind, &doc);
            Ok(Output::new(doc, rows))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format;
    let backend: CliResult<Box<dyn Backend>> = match &cli.server {
        Some(url) => Ok(Box::new(Remote::new(url, cli.token.clone(), &cli.actor))),
        None => Local::open(&cli.data_dir, &cli.actor).map(|l| Box::new(l) as Box<dyn Backend>),
    };
    let result = backend.and_then(|mut b| run(cli, b.as_mut())).and_then(|out| output::print(&out, format));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            output::print_error(&e, format);
            ExitCode::from(e.kind.exit_code())
        }
    }
}
