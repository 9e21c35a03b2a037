//! Reporting over daily batch outputs: ingestion and dedup statistics,
//! cumulative discovery per topic, replication series and the
//! coordinated-replication detector.

mod report;

pub use report::{emit_report, render_svg_lines, Report, ReportError, ReportFormat};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dedup::{DedupOutcome, DupGroup, Verdict};
use crate::textprep::extract_title;
use crate::types::DayKey;

pub const TITLE_MAX_CHARS: usize = 120;

/// `part / whole` as a percentage rounded to one decimal.
pub fn percent_1dp(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    (part as f64 * 1000.0 / whole as f64).round() / 10.0
}

/// `part / whole` as a percentage rounded to two decimals.
pub fn percent_2dp(part: u64, whole: u64) -> f64 {
    if whole == 0 {
        return 0.0;
    }
    (part as f64 * 10000.0 / whole as f64).round() / 100.0
}

pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub identified: u64,
    pub new: u64,
    pub downloaded_ok: u64,
    pub failed: u64,
}

impl SourceStats {
    pub fn add(&mut self, other: &SourceStats) {
        self.identified += other.identified;
        self.new += other.new;
        self.downloaded_ok += other.downloaded_ok;
        self.failed += other.failed;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupCounts {
    pub exact: u64,
    pub near: u64,
    pub unique: u64,
    pub bad_or_empty: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupProportions {
    pub exact: f64,
    pub near: f64,
    pub unique: f64,
    pub bad_or_empty: f64,
}

impl DedupCounts {
    pub fn total(&self) -> u64 {
        self.exact + self.near + self.unique + self.bad_or_empty
    }

    pub fn add(&mut self, o: &DedupCounts) {
        self.exact += o.exact;
        self.near += o.near;
        self.unique += o.unique;
        self.bad_or_empty += o.bad_or_empty;
    }

    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a DedupOutcome>, bad_or_empty: u64) -> Self {
        let mut c = DedupCounts { bad_or_empty, ..Default::default() };
        for o in outcomes {
            match o.verdict {
                Verdict::ExactDuplicateOf { .. } => c.exact += 1,
                Verdict::NearDuplicateOf { .. } => c.near += 1,
                Verdict::Unique => c.unique += 1,
            }
        }
        c
    }

    /// Shares at 0.1%; the bad/empty share is the complement of the
    /// other three so the row sums to 100%.
    pub fn proportions(&self) -> DedupProportions {
        let t = self.total();
        if t == 0 {
            return DedupProportions::default();
        }
        let exact = percent_1dp(self.exact, t);
        let near = percent_1dp(self.near, t);
        let unique = percent_1dp(self.unique, t);
        let rest = ((1000.0 - (exact + near + unique) * 10.0).round() / 10.0).max(0.0);
        DedupProportions { exact, near, unique, bad_or_empty: if self.bad_or_empty == 0 { 0.0 } else { rest } }
    }
}

/// Per-day statistics; all maps are ordered for deterministic output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyStats {
    pub day: Option<DayKey>,
    pub sources: BTreeMap<String, SourceStats>,
    pub dedup: DedupCounts,
    pub dedup_proportions: DedupProportions,
    pub languages_unique: BTreeMap<String, u64>,
    pub languages_propagated: BTreeMap<String, u64>,
    pub topics_unique: BTreeMap<String, u64>,
    pub topics_propagated: BTreeMap<String, u64>,
}

/// Stage outputs aggregated into [`DailyStats`].
#[derive(Debug, Clone, Default)]
pub struct DailyInputs<'a> {
    pub sources: BTreeMap<String, SourceStats>,
    pub outcomes: &'a [DedupOutcome],
    pub bad_or_empty: u64,
    /// Language of each unique document (representatives).
    pub unique_languages: Vec<&'a str>,
    pub propagated_languages: Vec<&'a str>,
    pub unique_topics: Vec<&'a str>,
    pub propagated_topics: Vec<&'a str>,
}

fn histogram<'a>(items: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let mut h = BTreeMap::new();
    for i in items {
        *h.entry(i.to_string()).or_default() += 1;
    }
    h
}

pub fn compute_daily_stats(day: DayKey, inputs: &DailyInputs<'_>) -> DailyStats {
    let dedup = DedupCounts::from_outcomes(inputs.outcomes, inputs.bad_or_empty);
    DailyStats {
        day: Some(day),
        sources: inputs.sources.clone(),
        dedup,
        dedup_proportions: dedup.proportions(),
        languages_unique: histogram(inputs.unique_languages.iter().copied()),
        languages_propagated: histogram(inputs.propagated_languages.iter().copied()),
        topics_unique: histogram(inputs.unique_topics.iter().copied()),
        topics_propagated: histogram(inputs.propagated_topics.iter().copied()),
    }
}

/// Identified and active (downloaded) address counts with the active share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Availability {
    pub identified: u64,
    pub active: u64,
    pub active_percent: f64,
}

pub fn availability(identified: u64, active: u64) -> Availability {
    Availability { identified, active, active_percent: percent_1dp(active, identified) }
}

/// Every group member takes the representative's topic label; documents in
/// no group keep their own.
pub fn propagate_topics(
    unique: &BTreeMap<String, String>,
    groups: &[DupGroup],
) -> BTreeMap<String, String> {
    let mut out = unique.clone();
    for g in groups {
        if let Some(label) = unique.get(&g.representative) {
            for m in &g.members {
                out.insert(m.clone(), label.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CumulativeSeries {
    pub days: Vec<DayKey>,
    /// Cumulative unique count per topic, aligned with `days`.
    pub series: BTreeMap<String, Vec<u64>>,
}

impl CumulativeSeries {
    pub fn totals(&self) -> Vec<u64> {
        (0..self.days.len()).map(|i| self.series.values().map(|s| s[i]).sum()).collect()
    }
}

/// `timeline` lists, per day, the high-level topic of each newly seen
/// unique document.
pub fn cumulative_unique_by_topic(timeline: &[(DayKey, Vec<String>)]) -> CumulativeSeries {
    let mut sorted: Vec<&(DayKey, Vec<String>)> = timeline.iter().collect();
    sorted.sort_by_key(|(d, _)| *d);
    let topics: BTreeSet<&str> = sorted.iter().flat_map(|(_, t)| t.iter().map(String::as_str)).collect();
    let mut series: BTreeMap<String, Vec<u64>> = topics.iter().map(|t| (t.to_string(), Vec::new())).collect();
    let mut running: BTreeMap<&str, u64> = topics.iter().map(|t| (*t, 0)).collect();
    let mut days = Vec::new();
    for (day, labels) in sorted {
        for l in labels {
            *running.get_mut(l.as_str()).expect("topic collected") += 1;
        }
        days.push(*day);
        for (t, v) in &running {
            series.get_mut(*t).expect("topic collected").push(*v);
        }
    }
    CumulativeSeries { days, series }
}

/// Duplicate history of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSeries {
    pub group: u32,
    pub representative: String,
    pub title: Option<String>,
    pub topic: Option<String>,
    pub first_seen: DayKey,
    pub daily: BTreeMap<DayKey, u64>,
    pub total_duplicates: u64,
    pub active_days: u64,
    pub rate: f64,
}

impl ReplicationSeries {
    /// `active_days` runs from `first_seen` to `window_end` inclusive.
    pub fn new(group: u32, representative: impl Into<String>, first_seen: DayKey, daily: BTreeMap<DayKey, u64>, window_end: DayKey) -> Self {
        let total_duplicates = daily.values().sum();
        let active_days = (first_seen.days_until(window_end) + 1).max(0) as u64;
        let rate = if active_days == 0 { 0.0 } else { total_duplicates as f64 / active_days as f64 };
        Self {
            group,
            representative: representative.into(),
            title: None,
            topic: None,
            first_seen,
            daily,
            total_duplicates,
            active_days,
            rate,
        }
    }

    pub fn rate_2dp(&self) -> f64 {
        round2(self.rate)
    }
}

/// Builds one series per group from daily dedup outcomes. A group is first
/// seen on the day any of its members appears.
pub fn replication_series(timeline: &[(DayKey, Vec<DedupOutcome>)], window_end: DayKey) -> Vec<ReplicationSeries> {
    let mut first: BTreeMap<u32, DayKey> = BTreeMap::new();
    let mut daily: BTreeMap<u32, BTreeMap<DayKey, u64>> = BTreeMap::new();
    let mut rep: BTreeMap<u32, String> = BTreeMap::new();
    for (day, outcomes) in timeline {
        for o in outcomes {
            let f = first.entry(o.group).or_insert(*day);
            if *day < *f {
                *f = *day;
            }
            rep.insert(o.group, o.representative.clone());
            daily.entry(o.group).or_default();
            if o.verdict.is_duplicate() {
                *daily.get_mut(&o.group).expect("inserted").entry(*day).or_default() += 1;
            }
        }
    }
    first
        .into_iter()
        .filter(|(_, f)| *f <= window_end)
        .map(|(g, f)| ReplicationSeries::new(g, rep[&g].clone(), f, daily.remove(&g).unwrap_or_default(), window_end))
        .collect()
}

/// Ranked by total duplicates, ties by earliest first sighting then group id.
pub fn top_replicated(series: &[ReplicationSeries], n: usize) -> Vec<ReplicationSeries> {
    let mut v = series.to_vec();
    v.sort_by(|a, b| {
        b.total_duplicates.cmp(&a.total_duplicates).then(a.first_seen.cmp(&b.first_seen)).then(a.group.cmp(&b.group))
    });
    v.truncate(n);
    v
}

/// Share of `total_instances` held by `series`, in percent at 0.01%.
pub fn coverage_percent(series: &[ReplicationSeries], total_instances: u64) -> f64 {
    percent_2dp(series.iter().map(|s| s.total_duplicates).sum(), total_instances)
}

/// Rate per group; groups with no active days are left out.
pub fn replication_rates(series: &[ReplicationSeries]) -> BTreeMap<u32, f64> {
    series.iter().filter(|s| s.active_days > 0).map(|s| (s.group, s.rate)).collect()
}

/// First `<title>` text of a page, at most [`TITLE_MAX_CHARS`] characters.
pub fn page_title(html: &str) -> Option<String> {
    extract_title(html).map(|t| truncate_title(&t))
}

pub fn truncate_title(title: &str) -> String {
    title.chars().take(TITLE_MAX_CHARS).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Largest rate gap, in duplicates per day, that links two series.
    pub tolerance: f64,
    pub min_group: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { tolerance: 0.5, min_group: 3 }
    }
}

/// A set of series with near-identical replication rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuspectGroup {
    pub groups: Vec<u32>,
    pub min_rate: f64,
    pub max_rate: f64,
    pub spread: f64,
    pub topics: Vec<String>,
    /// Mean pairwise Pearson correlation of cumulative daily duplicate
    /// counts; `None` with fewer than two days of data.
    pub mean_pearson: Option<f64>,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn cumulative_counts(s: &ReplicationSeries, days: &[DayKey]) -> Vec<f64> {
    let mut acc = 0u64;
    days.iter()
        .map(|d| {
            acc += s.daily.get(d).copied().unwrap_or(0);
            acc as f64
        })
        .collect()
}

/// Single-linkage grouping of series on their rates: neighbours closer than
/// `tolerance` join the same set. Sets smaller than `min_group` are dropped.
pub fn detect_coordinated_groups(series: &[ReplicationSeries], cfg: DetectorConfig) -> Vec<SuspectGroup> {
    let mut active: Vec<&ReplicationSeries> = series.iter().filter(|s| s.active_days > 0).collect();
    active.sort_by(|a, b| a.rate.total_cmp(&b.rate).then(a.group.cmp(&b.group)));
    let mut runs: Vec<Vec<&ReplicationSeries>> = Vec::new();
    for s in active {
        match runs.last_mut() {
            Some(run) if s.rate - run.last().expect("non-empty").rate <= cfg.tolerance + 1e-12 => run.push(s),
            _ => runs.push(vec![s]),
        }
    }
    let days: Vec<DayKey> = series.iter().flat_map(|s| s.daily.keys().copied()).collect::<BTreeSet<_>>().into_iter().collect();
    runs.into_iter()
        .filter(|r| r.len() >= cfg.min_group.max(1))
        .map(|run| {
            let min_rate = run.first().expect("non-empty").rate;
            let max_rate = run.last().expect("non-empty").rate;
            let topics: BTreeSet<String> = run.iter().filter_map(|s| s.topic.clone()).collect();
            let curves: Vec<Vec<f64>> = run.iter().map(|s| cumulative_counts(s, &days)).collect();
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..curves.len() {
                for j in i + 1..curves.len() {
                    if let Some(r) = pearson(&curves[i], &curves[j]) {
                        sum += r;
                        pairs += 1;
                    }
                }
            }
            let mut groups: Vec<u32> = run.iter().map(|s| s.group).collect();
            groups.sort_unstable();
            SuspectGroup {
                groups,
                min_rate,
                max_rate,
                spread: max_rate - min_rate,
                topics: topics.into_iter().collect(),
                mean_pearson: (pairs > 0).then(|| sum / pairs as f64),
            }
        })
        .collect()
}
