//! The six batch stages as plain functions over typed rows.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::global::GlobalState;
use crate::analytics::{
    availability, compute_daily_stats, coverage_percent, cumulative_unique_by_topic, detect_coordinated_groups,
    top_replicated, DailyInputs, DailyStats, DetectorConfig, Report, ReplicationSeries, SourceStats,
};
use crate::dedup::{CorpusState, DedupInput, DedupOutcome, Verdict};
use crate::langid::{detect_language, LanguageDetector, LanguageRow, LanguageVerdict};
use crate::store::{DiscoveryCatalogRow, DownloadCatalogRow};
use crate::textprep::{extract_main_text, extract_title, PageDocument, PageFlags, Preprocessor};
use crate::topics::{
    assign_topic, fit_topics, EmbeddingProvider, LabelMap, Reducer, TopicModel, TopicRow, TopicsConfig, TopicsError,
    NOISE, UNASSIGNED,
};
use crate::types::{DayKey, FetchStatus, SourceKind};
use crate::OnionAddress;

/// A stored page as handed to extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPage {
    pub address: OnionAddress,
    pub html: String,
    pub downloaded_at: DateTime<Utc>,
}

/// A row of `extracted.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedRow {
    pub address: OnionAddress,
    pub day: DayKey,
    pub downloaded_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub main_text: String,
}

/// A row of `preprocessed.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedRow {
    #[serde(flatten)]
    pub doc: PageDocument,
    pub downloaded_at: DateTime<Utc>,
}

/// A row of `topics.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAssignment {
    #[serde(flatten)]
    pub row: TopicRow,
    pub propagated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractMetrics {
    pub pages: u64,
    pub empty_after_extraction: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessMetrics {
    pub documents: u64,
    pub empty_after_extraction: u64,
    pub empty_after_preprocessing: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupMetrics {
    pub exact: u64,
    pub near: u64,
    pub unique: u64,
    pub bad_or_empty: u64,
    pub corpus_groups: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LangidMetrics {
    pub detected: u64,
    pub propagated: u64,
    pub languages: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicsMetrics {
    pub documents: u64,
    pub propagated: u64,
    pub model_fitted: bool,
    pub model_clusters: u64,
    pub noise: u64,
    pub unmapped_clusters: Vec<i32>,
    pub high_labels: BTreeMap<String, u64>,
}

pub fn extract(day: DayKey, pages: &[RawPage]) -> (Vec<ExtractedRow>, ExtractMetrics) {
    let rows: Vec<ExtractedRow> = pages
        .iter()
        .map(|p| ExtractedRow {
            address: p.address.clone(),
            day,
            downloaded_at: p.downloaded_at,
            title: extract_title(&p.html),
            main_text: extract_main_text(&p.html),
        })
        .collect();
    let metrics = ExtractMetrics {
        pages: rows.len() as u64,
        empty_after_extraction: rows.iter().filter(|r| r.main_text.trim().is_empty()).count() as u64,
    };
    (rows, metrics)
}

pub fn preprocess(rows: &[ExtractedRow], pre: &Preprocessor) -> (Vec<PreprocessedRow>, PreprocessMetrics) {
    let out: Vec<PreprocessedRow> = rows
        .iter()
        .map(|r| {
            let clean_text = pre.run(&r.main_text);
            let flags = PageFlags {
                empty_after_extraction: r.main_text.trim().is_empty(),
                empty_after_preprocessing: clean_text.is_empty(),
            };
            PreprocessedRow {
                doc: PageDocument {
                    address: r.address.clone(),
                    day: r.day,
                    raw_html: String::new(),
                    title: r.title.clone(),
                    main_text: r.main_text.clone(),
                    clean_text,
                    flags,
                },
                downloaded_at: r.downloaded_at,
            }
        })
        .collect();
    let metrics = PreprocessMetrics {
        documents: out.len() as u64,
        empty_after_extraction: out.iter().filter(|r| r.doc.flags.empty_after_extraction).count() as u64,
        empty_after_preprocessing: out
            .iter()
            .filter(|r| r.doc.flags.empty_after_preprocessing && !r.doc.flags.empty_after_extraction)
            .count() as u64,
    };
    (out, metrics)
}

/// Runs non-empty documents through the corpus; empty ones count as bad.
pub fn dedup(rows: &[PreprocessedRow], corpus: &mut CorpusState) -> (Vec<DedupOutcome>, DedupMetrics) {
    let inputs: Vec<DedupInput> = rows
        .iter()
        .filter(|r| !r.doc.is_empty())
        .map(|r| DedupInput { id: r.doc.address.hostname(), text: r.doc.clean_text.clone(), downloaded_at: r.downloaded_at })
        .collect();
    let outcomes = corpus.dedup_batch(&inputs);
    let mut m = DedupMetrics { bad_or_empty: (rows.len() - inputs.len()) as u64, ..Default::default() };
    for o in &outcomes {
        match o.verdict {
            Verdict::ExactDuplicateOf { .. } => m.exact += 1,
            Verdict::NearDuplicateOf { .. } => m.near += 1,
            Verdict::Unique => m.unique += 1,
        }
    }
    m.corpus_groups = corpus.groups().len() as u64;
    (outcomes, m)
}

/// Detects the language of every unique document and every current group
/// representative; other duplicates inherit their representative's verdict,
/// looked up in this batch first and then in the global state.
pub fn langid(
    rows: &[PreprocessedRow],
    outcomes: &[DedupOutcome],
    global: &GlobalState,
    detector: &dyn LanguageDetector,
) -> (Vec<LanguageRow>, LangidMetrics) {
    let text: BTreeMap<String, &str> = rows.iter().map(|r| (r.doc.address.hostname(), r.doc.clean_text.as_str())).collect();
    let reps: BTreeSet<&str> = outcomes.iter().map(|o| o.representative.as_str()).collect();
    let mut own: BTreeMap<&str, LanguageVerdict> = BTreeMap::new();
    for o in outcomes {
        if matches!(o.verdict, Verdict::Unique) || reps.contains(o.doc.as_str()) {
            own.insert(&o.doc, detect_language(detector, text.get(&o.doc).copied().unwrap_or_default()));
        }
    }
    let mut out = Vec::with_capacity(outcomes.len());
    let mut m = LangidMetrics::default();
    for o in outcomes {
        let row = if let Some(v) = own.get(o.doc.as_str()) {
            LanguageRow { address: o.doc.clone(), lang: v.lang.clone(), confidence: v.confidence, propagated: false }
        } else if let Some(v) = own.get(o.representative.as_str()) {
            LanguageRow { address: o.doc.clone(), lang: v.lang.clone(), confidence: v.confidence, propagated: true }
        } else if let Some(g) = global.languages.get(&o.representative) {
            LanguageRow { address: o.doc.clone(), lang: g.lang.clone(), confidence: g.confidence, propagated: true }
        } else {
            let v = detect_language(detector, text.get(&o.doc).copied().unwrap_or_default());
            LanguageRow { address: o.doc.clone(), lang: v.lang, confidence: v.confidence, propagated: false }
        };
        if row.propagated {
            m.propagated += 1;
        } else {
            m.detected += 1;
        }
        *m.languages.entry(row.lang.clone()).or_default() += 1;
        out.push(row);
    }
    (out, m)
}

/// Topic stage output.
#[derive(Debug, Clone)]
pub struct TopicsOutput {
    pub rows: Vec<TopicAssignment>,
    /// Set when this batch fitted a new model.
    pub fitted: Option<TopicModel>,
    pub metrics: TopicsMetrics,
}

fn labels(map: &LabelMap, cluster: i32, unmapped: &mut BTreeSet<i32>) -> (String, String) {
    match map.lookup(cluster) {
        Ok(l) => l,
        Err(_) => {
            unmapped.insert(cluster);
            (format!("cluster {cluster}"), UNASSIGNED.to_string())
        }
    }
}

/// Assigns topics to documents in `language`. With no prior model, one is
/// fitted on this batch's own documents; a fit without clusters is not kept.
#[allow(clippy::too_many_arguments)]
pub fn topics(
    rows: &[PreprocessedRow],
    outcomes: &[DedupOutcome],
    languages: &[LanguageRow],
    global: &GlobalState,
    prior: Option<&TopicModel>,
    provider: &dyn EmbeddingProvider,
    reducer: &dyn Reducer,
    cfg: &TopicsConfig,
    language: &str,
    map: &LabelMap,
) -> Result<TopicsOutput, TopicsError> {
    let text: BTreeMap<String, &str> = rows.iter().map(|r| (r.doc.address.hostname(), r.doc.clean_text.as_str())).collect();
    let lang: BTreeMap<&str, &str> = languages.iter().map(|l| (l.address.as_str(), l.lang.as_str())).collect();
    let reps: BTreeSet<&str> = outcomes.iter().map(|o| o.representative.as_str()).collect();
    let own_docs: Vec<&DedupOutcome> = outcomes
        .iter()
        .filter(|o| matches!(o.verdict, Verdict::Unique) || reps.contains(o.doc.as_str()))
        .filter(|o| lang.get(o.doc.as_str()) == Some(&language))
        .collect();

    let mut fitted = None;
    let own_clusters: Vec<i32> = match prior {
        Some(model) => own_docs
            .iter()
            .map(|o| assign_topic(model, text.get(&o.doc).copied().unwrap_or_default(), cfg.assign_floor))
            .collect(),
        None => {
            let texts: Vec<String> = own_docs.iter().map(|o| text.get(&o.doc).copied().unwrap_or_default().to_string()).collect();
            let fit = fit_topics(&texts, provider, reducer, cfg, map)?;
            if !fit.model.clusters.is_empty() {
                fitted = Some(fit.model);
            }
            fit.assignments
        }
    };
    let mut unmapped = BTreeSet::new();
    let mut own: BTreeMap<&str, TopicRow> = BTreeMap::new();
    for (o, &c) in own_docs.iter().zip(&own_clusters) {
        let (low, high) = labels(map, c, &mut unmapped);
        own.insert(&o.doc, TopicRow { address: o.doc.clone(), cluster: c, low_label: low, high_label: high });
    }
    let mut out = Vec::new();
    for o in outcomes {
        if lang.get(o.doc.as_str()) != Some(&language) {
            continue;
        }
        let assignment = if let Some(r) = own.get(o.doc.as_str()) {
            TopicAssignment { row: r.clone(), propagated: false }
        } else if let Some(r) = own.get(o.representative.as_str()) {
            TopicAssignment { row: TopicRow { address: o.doc.clone(), ..r.clone() }, propagated: true }
        } else if let Some(g) = global.topics.get(&o.representative) {
            TopicAssignment {
                row: TopicRow {
                    address: o.doc.clone(),
                    cluster: g.cluster,
                    low_label: g.low_label.clone(),
                    high_label: g.high_label.clone(),
                },
                propagated: true,
            }
        } else {
            let (low, high) = labels(map, NOISE, &mut unmapped);
            TopicAssignment {
                row: TopicRow { address: o.doc.clone(), cluster: NOISE, low_label: low, high_label: high },
                propagated: false,
            }
        };
        out.push(assignment);
    }
    let model_clusters = fitted.as_ref().or(prior).map_or(0, |m| m.clusters.len() as u64);
    let mut metrics = TopicsMetrics {
        documents: out.len() as u64,
        propagated: out.iter().filter(|a| a.propagated).count() as u64,
        model_fitted: fitted.is_some(),
        model_clusters,
        noise: out.iter().filter(|a| a.row.cluster == NOISE).count() as u64,
        unmapped_clusters: unmapped.into_iter().collect(),
        high_labels: BTreeMap::new(),
    };
    for a in &out {
        *metrics.high_labels.entry(a.row.high_label.clone()).or_default() += 1;
    }
    Ok(TopicsOutput { rows: out, fitted, metrics })
}

/// Catalog view needed for per-source and availability figures.
#[derive(Debug, Clone, Default)]
pub struct CatalogView {
    pub discoveries: Vec<DiscoveryCatalogRow>,
    pub downloads: Vec<DownloadCatalogRow>,
}

/// Per-source counts for `day`: sightings that day, addresses first seen
/// that day, pages stored that day and addresses whose last attempt that day
/// failed.
pub fn source_stats(view: &CatalogView, day: DayKey) -> BTreeMap<String, SourceStats> {
    let mut first_seen: BTreeMap<&str, DateTime<Utc>> = BTreeMap::new();
    for d in &view.discoveries {
        let e = first_seen.entry(d.address.label()).or_insert(d.identification_timestamp);
        *e = (*e).min(d.identification_timestamp);
    }
    let mut out: BTreeMap<String, SourceStats> =
        SourceKind::ALL.iter().map(|k| (k.as_str().to_string(), SourceStats::default())).collect();
    for d in &view.discoveries {
        if DayKey::of(d.identification_timestamp) != day {
            continue;
        }
        let s = out.get_mut(d.source.as_str()).expect("every kind present");
        s.identified += 1;
        if DayKey::of(first_seen[d.address.label()]) == day {
            s.new += 1;
        }
    }
    for row in &view.downloads {
        let ok = row.downloaded && row.object_day == Some(day);
        let failed = !row.downloaded
            && row.last_status.is_some_and(|s| s != FetchStatus::Ok)
            && row.last_attempt.is_some_and(|t| DayKey::of(t) == day);
        for k in SourceKind::ALL {
            if !row.found_in(k) {
                continue;
            }
            let s = out.get_mut(k.as_str()).expect("every kind present");
            s.downloaded_ok += u64::from(ok);
            s.failed += u64::from(failed);
        }
    }
    out
}

/// Identified and active address counts up to the end of `day`.
pub fn availability_through(view: &CatalogView, day: DayKey) -> (u64, u64) {
    let end = day.end_of_day();
    let identified: BTreeSet<&str> =
        view.discoveries.iter().filter(|d| d.identification_timestamp <= end).map(|d| d.address.label()).collect();
    let active = view.downloads.iter().filter(|r| r.downloaded && r.object_day.is_some_and(|d| d <= day)).count();
    (identified.len() as u64, active as u64)
}

/// Everything the analytics stage reads.
pub struct AnalyticsInputs<'a> {
    pub day: DayKey,
    pub rows: &'a [PreprocessedRow],
    pub outcomes: &'a [DedupOutcome],
    pub languages: &'a [LanguageRow],
    pub topics: &'a [TopicAssignment],
    pub catalog: Option<&'a CatalogView>,
    /// Global state already merged with this day.
    pub merged: &'a GlobalState,
    pub top_n: usize,
    pub detector: DetectorConfig,
}

pub fn analytics(inp: &AnalyticsInputs<'_>) -> (Report, DailyStats) {
    let unique: BTreeSet<&str> =
        inp.outcomes.iter().filter(|o| matches!(o.verdict, Verdict::Unique)).map(|o| o.doc.as_str()).collect();
    let bad = (inp.rows.len() - inp.outcomes.len()) as u64;
    let lang_unique: Vec<&str> =
        inp.languages.iter().filter(|l| unique.contains(l.address.as_str())).map(|l| l.lang.as_str()).collect();
    let topic_unique: Vec<&str> =
        inp.topics.iter().filter(|t| unique.contains(t.row.address.as_str())).map(|t| t.row.high_label.as_str()).collect();
    let stats = compute_daily_stats(
        inp.day,
        &DailyInputs {
            sources: inp.catalog.map(|c| source_stats(c, inp.day)).unwrap_or_default(),
            outcomes: inp.outcomes,
            bad_or_empty: bad,
            unique_languages: lang_unique,
            propagated_languages: inp.languages.iter().map(|l| l.lang.as_str()).collect(),
            unique_topics: topic_unique,
            propagated_topics: inp.topics.iter().map(|t| t.row.high_label.as_str()).collect(),
        },
    );
    let g = inp.merged;
    let timeline: Vec<(DayKey, Vec<String>)> =
        g.unique_topics.iter().filter(|(d, _)| **d <= inp.day).map(|(d, v)| (*d, v.clone())).collect();
    let series: Vec<ReplicationSeries> = g
        .groups
        .iter()
        .filter(|(_, h)| h.first_seen <= inp.day && h.duplicates() > 0)
        .map(|(&id, h)| {
            let daily = h.daily.range(..=inp.day).map(|(d, c)| (*d, *c)).collect();
            let mut s = ReplicationSeries::new(id, h.representative.clone(), h.first_seen, daily, inp.day);
            s.title = g.titles.get(&h.representative).cloned();
            s.topic = g.topics.get(&h.representative).map(|t| t.high_label.clone());
            s
        })
        .collect();
    let total_instances: u64 = g.groups.values().map(|h| h.duplicates() + 1).sum();
    let top = top_replicated(&series, inp.top_n);
    let report = Report {
        day: Some(inp.day),
        stats: stats.clone(),
        availability: inp.catalog.map(|c| {
            let (identified, active) = availability_through(c, inp.day);
            availability(identified, active)
        }),
        cumulative: cumulative_unique_by_topic(&timeline),
        top_coverage_percent: coverage_percent(&top, total_instances),
        top_replicated: top,
        coordinated: detect_coordinated_groups(&series, inp.detector),
    };
    (report, stats)
}
