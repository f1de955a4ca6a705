//! Inter-rater agreement on value-source classifications.
//!
//! Two statistics are exposed and labelled explicitly: Cohen's kappa for a
//! pair of raters and Fleiss' kappa for a fixed panel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::domain::ValueSourceId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    BusinessValue,
    Usage,
}

impl Dimension {
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::BusinessValue => "business_value",
            Dimension::Usage => "usage",
        }
    }

    pub fn parse(s: &str) -> Option<Dimension> {
        match s.trim() {
            "business_value" => Some(Dimension::BusinessValue),
            "usage" => Some(Dimension::Usage),
            _ => None,
        }
    }

    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Dimension::BusinessValue => &["core", "other"],
            Dimension::Usage => &["high", "low"],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RatingEvent {
    pub rater_id: String,
    pub value_source_id: ValueSourceId,
    pub dimension: Dimension,
    pub category: String,
    pub timestamp: DateTime<Utc>,
}

impl RatingEvent {
    /// Checks the category belongs to the dimension's vocabulary.
    pub fn check(&self) -> Result<(), AgreementError> {
        if self.rater_id.trim().is_empty() {
            return Err(AgreementError::InvalidRating("empty rater_id".into()));
        }
        if !self.dimension.categories().contains(&self.category.as_str()) {
            return Err(AgreementError::InvalidRating(format!(
                "category {:?} is not valid for dimension {}",
                self.category, self.dimension
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AgreementError {
    #[error("the two raters share no rated subject")]
    NoCommonSubjects,
    #[error("no subject is rated by the full panel")]
    NoCompleteSubjects,
    #[error("agreement needs at least two raters")]
    TooFewRaters,
    #[error("invalid rating: {0}")]
    InvalidRating(String),
    #[error("ratings csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Effective ratings for one dimension: subject → rater → category.
pub type RatingTable = BTreeMap<ValueSourceId, BTreeMap<String, String>>;

/// Resolves each (rater, subject) pair to its latest rating on `dimension`.
/// Equal timestamps resolve to the later event in input order.
pub fn effective_ratings(ratings: &[RatingEvent], dimension: Dimension) -> RatingTable {
    let mut latest: BTreeMap<(&ValueSourceId, &str), &RatingEvent> = BTreeMap::new();
    for event in ratings.iter().filter(|r| r.dimension == dimension) {
        let key = (&event.value_source_id, event.rater_id.as_str());
        match latest.get(&key) {
            Some(prev) if prev.timestamp > event.timestamp => {}
            _ => {
                latest.insert(key, event);
            }
        }
    }
    let mut table = RatingTable::new();
    for ((subject, rater), event) in latest {
        table.entry(subject.clone()).or_default().insert(rater.to_owned(), event.category.clone());
    }
    table
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMethod {
    Cohen,
    Fleiss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementScore {
    pub method: KappaMethod,
    pub kappa: f64,
    pub n_subjects: usize,
    pub n_raters: usize,
    pub n_categories: usize,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    /// Expected agreement is 1: every rating used the same category.
    pub degenerate: bool,
    /// Subjects left out because a rater of the pair or panel is missing.
    pub excluded_subjects: usize,
    pub raters: Vec<String>,
}

/// `(po - pe) / (1 - pe)` with `po = po_num / den` and `pe = pe_num / den`,
/// reduced to one integer ratio so results like 0.4 come out exact.
fn kappa_from(po_num: i128, pe_num: i128, den: i128) -> (f64, bool) {
    if pe_num == den {
        // Pe = 1 forces Po = 1 for both statistics
        (1.0, true)
    } else {
        ((po_num - pe_num) as f64 / (den - pe_num) as f64, false)
    }
}

/// Cohen's kappa over paired labels.
pub fn cohen_from_pairs<C: Ord + Clone>(pairs: &[(C, C)]) -> Option<(f64, f64, f64, bool, usize)> {
    if pairs.is_empty() {
        return None;
    }
    let mut left: BTreeMap<&C, usize> = BTreeMap::new();
    let mut right: BTreeMap<&C, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (a, b) in pairs {
        *left.entry(a).or_default() += 1;
        *right.entry(b).or_default() += 1;
        if a == b {
            agree += 1;
        }
    }
    let categories: BTreeSet<&C> = left.keys().chain(right.keys()).copied().collect();
    // over a common denominator of n²
    let n = pairs.len() as i128;
    let marginal_products: i128 = categories
        .iter()
        .map(|c| left.get(c).copied().unwrap_or(0) as i128 * right.get(c).copied().unwrap_or(0) as i128)
        .sum();
    let den = n * n;
    let (kappa, degenerate) = kappa_from(agree as i128 * n, marginal_products, den);
    let po = agree as f64 / n as f64;
    let pe = marginal_products as f64 / den as f64;
    Some((kappa, po, pe, degenerate, categories.len()))
}

/// Fleiss' kappa from a subjects × categories count matrix where every row
/// sums to the same panel size n ≥ 2.
pub fn fleiss_from_counts(counts: &[Vec<usize>]) -> Option<(f64, f64, f64, bool)> {
    let n_subjects = counts.len();
    if n_subjects == 0 {
        return None;
    }
    let n: usize = counts[0].iter().sum();
    if n < 2 || counts.iter().any(|row| row.iter().sum::<usize>() != n) {
        return None;
    }
    let n_categories = counts[0].len();
    // P̄ = a / d1 and Pe = b / d2, brought over the common denominator d1·d2
    let (subjects, raters) = (n_subjects as i128, n as i128);
    let a: i128 = counts.iter().flat_map(|row| row.iter().map(|&c| (c * c) as i128)).sum::<i128>() - subjects * raters;
    let d1 = subjects * raters * (raters - 1);
    let b: i128 = (0..n_categories)
        .map(|j| counts.iter().map(|row| row[j] as i128).sum::<i128>().pow(2))
        .sum();
    let d2 = (subjects * raters).pow(2);
    let (kappa, degenerate) = kappa_from(a * d2, b * d1, d1 * d2);
    let (p_bar, pe) = (a as f64 / d1 as f64, b as f64 / d2 as f64);
    Some((kappa, p_bar, pe, degenerate))
}

/// Two-rater kappa over the subjects both raters classified on `dimension`.
pub fn cohen_kappa(
    ratings: &[RatingEvent],
    rater_a: &str,
    rater_b: &str,
    dimension: Dimension,
) -> Result<AgreementScore, AgreementError> {
    let table = effective_ratings(ratings, dimension);
    let mut pairs = Vec::new();
    let mut excluded = 0;
    for by_rater in table.values() {
        match (by_rater.get(rater_a), by_rater.get(rater_b)) {
            (Some(a), Some(b)) => pairs.push((a.clone(), b.clone())),
            (None, None) => {}
            _ => excluded += 1,
        }
    }
    let (kappa, po, pe, degenerate, n_categories) =
        cohen_from_pairs(&pairs).ok_or(AgreementError::NoCommonSubjects)?;
    Ok(AgreementScore {
        method: KappaMethod::Cohen,
        kappa,
        n_subjects: pairs.len(),
        n_raters: 2,
        n_categories,
        observed_agreement: po,
        expected_agreement: pe,
        degenerate,
        excluded_subjects: excluded,
        raters: vec![rater_a.to_owned(), rater_b.to_owned()],
    })
}

/// Multi-rater kappa for a fixed panel. With `panel` unset the panel is
/// every rater seen on the dimension. Subjects missing any panel member are
/// excluded and counted.
pub fn fleiss_kappa(
    ratings: &[RatingEvent],
    dimension: Dimension,
    panel: Option<&[String]>,
) -> Result<AgreementScore, AgreementError> {
    let table = effective_ratings(ratings, dimension);
    let panel: BTreeSet<String> = match panel {
        Some(p) => p.iter().cloned().collect(),
        None => table.values().flat_map(|r| r.keys().cloned()).collect(),
    };
    if panel.len() < 2 {
        return Err(AgreementError::TooFewRaters);
    }
    let mut categories: BTreeSet<String> = dimension.categories().iter().map(|c| (*c).to_owned()).collect();
    for by_rater in table.values() {
        categories.extend(by_rater.values().cloned());
    }
    let index: BTreeMap<&String, usize> = categories.iter().enumerate().map(|(i, c)| (c, i)).collect();

    let mut counts = Vec::new();
    let mut excluded = 0;
    for by_rater in table.values() {
        if panel.iter().all(|r| by_rater.contains_key(r)) {
            let mut row = vec![0usize; categories.len()];
            for rater in &panel {
                row[index[&by_rater[rater]]] += 1;
            }
            counts.push(row);
        } else if panel.iter().any(|r| by_rater.contains_key(r)) {
            excluded += 1;
        }
    }
    let (kappa, po, pe, degenerate) = fleiss_from_counts(&counts).ok_or(AgreementError::NoCompleteSubjects)?;
    Ok(AgreementScore {
        method: KappaMethod::Fleiss,
        kappa,
        n_subjects: counts.len(),
        n_raters: panel.len(),
        n_categories: categories.len(),
        observed_agreement: po,
        expected_agreement: pe,
        degenerate,
        excluded_subjects: excluded,
        raters: panel.into_iter().collect(),
    })
}

/// Agreement report keyed by rater pair (`a|b`) plus `all` for the panel.
/// Pairs without common subjects and an incomplete panel are left out.
pub fn agreement_report(
    ratings: &[RatingEvent],
    dimension: Dimension,
    raters: Option<&[String]>,
) -> BTreeMap<String, AgreementScore> {
    let table = effective_ratings(ratings, dimension);
    let raters: Vec<String> = match raters {
        Some(r) => r.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        None => table.values().flat_map(|r| r.keys().cloned()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let mut report = BTreeMap::new();
    for (i, a) in raters.iter().enumerate() {
        for b in &raters[i + 1..] {
            if let Ok(score) = cohen_kappa(ratings, a, b, dimension) {
                report.insert(format!("{a}|{b}"), score);
            }
        }
    }
    if let Ok(score) = fleiss_kappa(ratings, dimension, Some(&raters)) {
        report.insert("all".to_owned(), score);
    }
    report
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub value_source_id: ValueSourceId,
    pub categories: BTreeMap<String, String>,
    /// Raters outside the most common category.
    pub dissenting: usize,
}

/// Subjects whose effective ratings differ, most contested first.
pub fn disagreements(ratings: &[RatingEvent], dimension: Dimension) -> Vec<Disagreement> {
    let mut out: Vec<Disagreement> = effective_ratings(ratings, dimension)
        .into_iter()
        .filter_map(|(subject, by_rater)| {
            let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
            for category in by_rater.values() {
                *tally.entry(category).or_default() += 1;
            }
            if tally.len() < 2 {
                return None;
            }
            let modal = tally.values().copied().max().unwrap_or(0);
            Some(Disagreement { dissenting: by_rater.len() - modal, value_source_id: subject, categories: by_rater })
        })
        .collect();
    out.sort_by(|a, b| b.dissenting.cmp(&a.dissenting).then_with(|| a.value_source_id.cmp(&b.value_source_id)));
    out
}

#[derive(Deserialize)]
struct CsvRow {
    rater_id: String,
    value_source_id: String,
    dimension: String,
    category: String,
    timestamp: String,
}

/// Reads ratings CSV with header `rater_id,value_source_id,dimension,category,timestamp`.
pub fn read_ratings_csv(reader: impl Read) -> Result<Vec<RatingEvent>, AgreementError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let err = |message: String| AgreementError::Csv { line, message };
        let row = row.map_err(|e| err(e.to_string()))?;
        let dimension =
            Dimension::parse(&row.dimension).ok_or_else(|| err(format!("unknown dimension {:?}", row.dimension)))?;
        let timestamp = DateTime::parse_from_rfc3339(&row.timestamp)
            .map_err(|e| err(format!("timestamp {:?}: {e}", row.timestamp)))?
            .with_timezone(&Utc);
        let event = RatingEvent {
            rater_id: row.rater_id,
            value_source_id: row.value_source_id.into(),
            dimension,
            category: row.category,
            timestamp,
        };
        event.check().map_err(|e| err(e.to_string()))?;
        out.push(event);
    }
    Ok(out)
}

pub fn write_ratings_csv(ratings: &[RatingEvent]) -> String {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["rater_id", "value_source_id", "dimension", "category", "timestamp"])
        .expect("in-memory write");
    for r in ratings {
        let ts = r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        wtr.write_record([r.rater_id.as_str(), r.value_source_id.as_str(), r.dimension.as_str(), &r.category, &ts])
            .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
