use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stages::{PreprocessedRow, TopicAssignment};
use crate::analytics::DedupCounts;
use crate::dedup::{DedupOutcome, Verdict};
use crate::langid::{LanguageRow, LanguageVerdict};
use crate::types::DayKey;

/// Duplicate history of one group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupHistory {
    pub representative: String,
    pub first_seen: DayKey,
    /// Duplicates added per day.
    pub daily: BTreeMap<DayKey, u64>,
}

impl GroupHistory {
    pub fn duplicates(&self) -> u64 {
        self.daily.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalTopic {
    pub cluster: i32,
    pub low_label: String,
    pub high_label: String,
}

/// Per-day contribution, kept so a day can be merged again without double counting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayTotals {
    pub dedup: DedupCounts,
    pub languages: BTreeMap<String, u64>,
    pub topics: BTreeMap<String, u64>,
}

/// Accumulated dataset across all merged days.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub per_day: BTreeMap<DayKey, DayTotals>,
    pub totals: DayTotals,
    /// Own (not propagated) language verdicts by address.
    pub languages: BTreeMap<String, LanguageVerdict>,
    /// Own (not propagated) topic assignments by address.
    pub topics: BTreeMap<String, GlobalTopic>,
    pub titles: BTreeMap<String, String>,
    pub groups: BTreeMap<u32, GroupHistory>,
    /// High-level label of every unique document, per day.
    pub unique_topics: BTreeMap<DayKey, Vec<String>>,
}

impl GlobalState {
    pub fn days(&self) -> Vec<DayKey> {
        self.per_day.keys().copied().collect()
    }

    pub fn last_day(&self) -> Option<DayKey> {
        self.per_day.keys().next_back().copied()
    }

    /// Counters exposed on the metrics endpoint.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let t = &self.totals.dedup;
        let mut m = BTreeMap::new();
        m.insert("onionscope_days_merged".to_string(), self.per_day.len() as f64);
        m.insert("onionscope_documents_total".to_string(), t.total() as f64);
        m.insert("onionscope_exact_duplicates_total".to_string(), t.exact as f64);
        m.insert("onionscope_near_duplicates_total".to_string(), t.near as f64);
        m.insert("onionscope_unique_total".to_string(), t.unique as f64);
        m.insert("onionscope_bad_or_empty_total".to_string(), t.bad_or_empty as f64);
        m.insert("onionscope_duplicate_groups".to_string(), self.groups.len() as f64);
        for (lang, n) in &self.totals.languages {
            m.insert(format!("onionscope_language_documents_{}", sanitize(lang)), *n as f64);
        }
        m
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect()
}

/// One day's stage outputs, as merged into the global state.
pub struct DayArtifacts<'a> {
    pub day: DayKey,
    pub rows: &'a [PreprocessedRow],
    pub outcomes: &'a [DedupOutcome],
    pub languages: &'a [LanguageRow],
    pub topics: &'a [TopicAssignment],
}

/// Folds a day into the global state. Any earlier contribution of the same
/// day is removed first, so merging a day twice equals merging it once.
pub fn merge_global(day: &DayArtifacts<'_>, global: &GlobalState) -> GlobalState {
    let mut g = global.clone();
    let d = day.day;
    g.per_day.remove(&d);
    g.unique_topics.remove(&d);
    g.groups.retain(|_, h| h.first_seen != d);
    for h in g.groups.values_mut() {
        h.daily.remove(&d);
    }

    let mut totals = DayTotals {
        dedup: DedupCounts::from_outcomes(day.outcomes, (day.rows.len() - day.outcomes.len()) as u64),
        ..Default::default()
    };
    for l in day.languages {
        *totals.languages.entry(l.lang.clone()).or_default() += 1;
        if !l.propagated {
            g.languages.insert(l.address.clone(), LanguageVerdict { lang: l.lang.clone(), confidence: l.confidence });
        }
    }
    let mut unique_topics = Vec::new();
    let unique: std::collections::BTreeSet<&str> =
        day.outcomes.iter().filter(|o| matches!(o.verdict, Verdict::Unique)).map(|o| o.doc.as_str()).collect();
    for t in day.topics {
        *totals.topics.entry(t.row.high_label.clone()).or_default() += 1;
        if !t.propagated {
            g.topics.insert(
                t.row.address.clone(),
                GlobalTopic { cluster: t.row.cluster, low_label: t.row.low_label.clone(), high_label: t.row.high_label.clone() },
            );
        }
        if unique.contains(t.row.address.as_str()) {
            unique_topics.push(t.row.high_label.clone());
        }
    }
    unique_topics.sort();

    let titles: BTreeMap<String, &str> = day
        .rows
        .iter()
        .filter_map(|r| r.doc.title.as_deref().map(|t| (r.doc.address.hostname(), t)))
        .collect();
    for o in day.outcomes {
        match o.verdict {
            Verdict::Unique => {
                g.groups.insert(
                    o.group,
                    GroupHistory { representative: o.representative.clone(), first_seen: d, daily: BTreeMap::new() },
                );
            }
            _ => {
                let h = g.groups.entry(o.group).or_insert_with(|| GroupHistory {
                    representative: o.representative.clone(),
                    first_seen: d,
                    daily: BTreeMap::new(),
                });
                h.representative = o.representative.clone();
                *h.daily.entry(d).or_default() += 1;
            }
        }
        if o.doc == o.representative {
            if let Some(t) = titles.get(&o.doc) {
                g.titles.insert(o.doc.clone(), crate::analytics::truncate_title(t));
            }
        }
    }

    g.per_day.insert(d, totals);
    g.unique_topics.insert(d, unique_topics);
    let mut sum = DayTotals::default();
    for t in g.per_day.values() {
        sum.dedup.add(&t.dedup);
        for (k, v) in &t.languages {
            *sum.languages.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &t.topics {
            *sum.topics.entry(k.clone()).or_default() += v;
        }
    }
    g.totals = sum;
    g
}
