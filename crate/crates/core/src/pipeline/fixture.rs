//! Synthetic day of downloaded pages with known duplicate structure.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::store::{page_object_name, Bucket, Catalogs, ObjectStore, StoreError};
use crate::types::{DayKey, Discovery, FetchStatus, SourceKind};
use crate::OnionAddress;

pub const FIXTURE_SEED: u64 = 20230201;

const EN_FUNCTION: &[&str] = &[
    "the", "and", "of", "to", "in", "for", "with", "on", "our", "you", "your", "is", "are", "we", "all", "this",
    "that", "from", "by", "at", "it", "be", "can", "have", "will", "more", "only", "any", "here", "about",
];

const EN_TOPICS: [&[&str]; 3] = [
    &[
        "shop", "order", "product", "shipping", "vendor", "price", "quality", "delivery", "stock", "buy", "customer",
        "package", "payment", "escrow", "seller", "review", "discount", "item", "cart", "refund", "market",
        "listing", "store", "tracking", "worldwide", "stealth", "purchase", "offer", "sale", "goods",
    ],
    &[
        "bitcoin", "wallet", "coin", "exchange", "mixer", "transaction", "blockchain", "fee", "deposit", "withdraw",
        "crypto", "ledger", "mining", "token", "balance", "transfer", "key", "network", "confirmation", "anonymous",
        "monero", "tumbler", "coins", "private", "address", "funds", "outputs", "inputs", "trade", "rate",
    ],
    &[
        "forum", "thread", "post", "member", "board", "reply", "topic", "user", "account", "register", "login",
        "message", "discussion", "community", "moderator", "rules", "profile", "section", "guide", "news", "chat",
        "admin", "posts", "members", "threads", "replies", "welcome", "staff", "invite", "signature",
    ],
];

const RU_WORDS: &[&str] = &[
    "и", "в", "не", "на", "что", "это", "мы", "вы", "для", "с", "по", "как", "все", "только", "наш", "ваш",
    "магазин", "товар", "доставка", "цена", "заказ", "качество", "оплата", "гарантия", "быстро", "купить",
    "продажа", "лучший", "сайт", "который", "можно", "очень", "сейчас", "если", "когда", "также", "здесь",
    "новый", "работа", "время",
];

const ES_WORDS: &[&str] = &[
    "el", "la", "de", "que", "y", "en", "los", "para", "con", "por", "una", "del", "las", "es", "su", "nuestro",
    "tienda", "producto", "envío", "precio", "pedido", "calidad", "pago", "garantía", "rápido", "comprar",
    "venta", "mejor", "sitio", "también", "aquí", "nuevo", "todos", "cuando", "muy", "puede", "tiempo",
    "clientes", "servicio", "seguro",
];

/// Words appended to make near copies; none occur in the vocabularies above.
const NEAR_SUFFIXES: &[&str] = &[
    "mirror", "backup", "alternate", "updated", "official", "verified", "secondary", "fallback", "archived",
    "renewed", "relocated", "rehosted",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedKind {
    Unique,
    Exact,
    Near,
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixturePage {
    pub address: OnionAddress,
    pub html: String,
    pub kind: PlantedKind,
    /// Language of the planted text; `None` for empty pages.
    pub lang: Option<&'static str>,
    pub discovered_at: DateTime<Utc>,
    pub downloaded_at: DateTime<Utc>,
}

/// Counts the generator planted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub exact: u64,
    pub near: u64,
    pub unique: u64,
    pub bad_or_empty: u64,
    /// Unique documents per language.
    pub unique_languages: BTreeMap<String, u64>,
    /// Addresses discovered but never downloaded.
    pub unreachable: u64,
}

#[derive(Debug, Clone)]
pub struct FixtureDay {
    pub day: DayKey,
    pub pages: Vec<FixturePage>,
    pub unreachable: Vec<(OnionAddress, DateTime<Utc>)>,
    pub truth: FixtureTruth,
}

struct Original {
    body: String,
    lang: &'static str,
    near_copies: usize,
}

fn sentence(rng: &mut ChaCha8Rng, content: &[&str], function: &[&str]) -> String {
    let n = rng.gen_range(10..=18);
    let mut words: Vec<&str> = Vec::with_capacity(n);
    while words.len() < n {
        let w = if rng.gen_bool(0.4) && !function.is_empty() {
            function.choose(rng).unwrap()
        } else {
            content.choose(rng).unwrap()
        };
        if words.last() != Some(w) {
            words.push(w);
        }
    }
    let mut s = words.join(" ");
    let first = s.chars().next().unwrap();
    s.replace_range(..first.len_utf8(), &first.to_uppercase().to_string());
    s.push('.');
    s
}

fn body(rng: &mut ChaCha8Rng, content: &[&str], function: &[&str]) -> String {
    let n = rng.gen_range(10..=14);
    (0..n).map(|_| sentence(rng, content, function)).collect::<Vec<_>>().join(" ")
}

fn page(title: &str, paragraphs: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html><head><title>{title}</title></head><body>\
         <nav><a href=\"/\">Home</a> <a href=\"/about\">About</a></nav>\
         <div class=\"content\"><p>{paragraphs}</p></div>\
         <footer>All rights reserved</footer></body></html>\n"
    )
}

fn address(rng: &mut ChaCha8Rng) -> OnionAddress {
    let mut key = [0u8; 32];
    rng.fill(&mut key);
    OnionAddress::from_pubkey(key)
}

fn day_start(day: DayKey) -> DateTime<Utc> {
    day.date().and_hms_opt(0, 0, 0).expect("midnight exists").and_utc()
}

/// The bundled 200-page day: 85 unique texts (75 English in three topic
/// vocabularies, 5 Russian, 5 Spanish), 60 exact copies, 45 near copies and
/// 10 pages with no usable text, plus 10 addresses that were never reachable.
pub fn fixture_day(day: DayKey, seed: u64) -> FixtureDay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut originals: Vec<Original> = Vec::new();
    for topic in EN_TOPICS {
        for _ in 0..25 {
            originals.push(Original { body: body(&mut rng, topic, EN_FUNCTION), lang: "en", near_copies: 0 });
        }
    }
    for _ in 0..5 {
        originals.push(Original { body: body(&mut rng, RU_WORDS, &[]), lang: "ru", near_copies: 0 });
    }
    for _ in 0..5 {
        originals.push(Original { body: body(&mut rng, ES_WORDS, &[]), lang: "es", near_copies: 0 });
    }

    let mut planned: Vec<(String, PlantedKind, Option<&'static str>)> = Vec::new();
    for (i, o) in originals.iter().enumerate() {
        planned.push((page(&format!("Site {i}"), &o.body), PlantedKind::Unique, Some(o.lang)));
    }
    // copies concentrate on a few originals so replication is skewed
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> usize {
        if rng.gen_bool(0.5) {
            rng.gen_range(0..5)
        } else {
            rng.gen_range(0..n)
        }
    };
    for _ in 0..60 {
        let i = pick(&mut rng, originals.len());
        planned.push((planned[i].0.clone(), PlantedKind::Exact, Some(originals[i].lang)));
    }
    let mut near = 0;
    while near < 45 {
        let i = pick(&mut rng, originals.len());
        let o = &mut originals[i];
        if o.near_copies == NEAR_SUFFIXES.len() {
            continue;
        }
        let suffix = NEAR_SUFFIXES[o.near_copies];
        o.near_copies += 1;
        let text = format!("{} {}{}.", o.body, suffix[..1].to_uppercase(), &suffix[1..]);
        planned.push((page(&format!("Site {i}"), &text), PlantedKind::Near, Some(o.lang)));
        near += 1;
    }
    for i in 0..10 {
        let html = if i % 2 == 0 {
            "<html><head><script>var a = 1;</script></head><body></body></html>\n".to_string()
        } else {
            page("Price", "$ 250")
        };
        planned.push((html, PlantedKind::Empty, None));
    }
    planned.shuffle(&mut rng);

    let start = day_start(day);
    let pages: Vec<FixturePage> = planned
        .into_iter()
        .enumerate()
        .map(|(i, (html, kind, lang))| {
            let discovered_at = start + Duration::seconds(i as i64 * 400);
            FixturePage {
                address: address(&mut rng),
                html,
                kind,
                lang,
                discovered_at,
                downloaded_at: discovered_at + Duration::seconds(120),
            }
        })
        .collect();
    let unreachable: Vec<(OnionAddress, DateTime<Utc>)> =
        (0..10).map(|i| (address(&mut rng), start + Duration::seconds(300 + i * 7_000))).collect();

    let mut truth = FixtureTruth { unreachable: unreachable.len() as u64, ..Default::default() };
    for p in &pages {
        match p.kind {
            PlantedKind::Unique => {
                truth.unique += 1;
                *truth.unique_languages.entry(p.lang.unwrap().to_string()).or_default() += 1;
            }
            PlantedKind::Exact => truth.exact += 1,
            PlantedKind::Near => truth.near += 1,
            PlantedKind::Empty => truth.bad_or_empty += 1,
        }
    }
    FixtureDay { day, pages, unreachable, truth }
}

impl FixtureDay {
    pub fn bundled() -> Self {
        fixture_day(DayKey::from_ymd(2023, 2, 1).expect("valid date"), FIXTURE_SEED)
    }

    /// Writes every page to the `onions` bucket.
    pub fn store_pages(&self, store: &dyn ObjectStore) -> Result<(), StoreError> {
        for p in &self.pages {
            store.put_object(Bucket::Onions, self.day, &page_object_name(p.address.label()), p.html.as_bytes())?;
        }
        Ok(())
    }

    /// Records sightings, downloads and failed attempts in the catalogs.
    pub fn record_catalog(&self, catalogs: &Catalogs) -> Result<(), StoreError> {
        let now = Utc::now();
        let sighting = |i: usize, address: &OnionAddress, at: DateTime<Utc>| -> Result<(), StoreError> {
            let kind = SourceKind::ALL[i % SourceKind::ALL.len()];
            let d = Discovery::new(address.clone(), kind, format!("fixture-{}", kind.as_str()), at, now)
                .expect("fixture timestamps lie in the past");
            catalogs.record_discovery(&d)?;
            Ok(())
        };
        for (i, p) in self.pages.iter().enumerate() {
            sighting(i, &p.address, p.discovered_at)?;
            catalogs.record_fetch_status(&p.address, FetchStatus::Ok, p.downloaded_at)?;
            catalogs.catalog_mark_downloaded(&p.address, p.downloaded_at, self.day)?;
        }
        for (i, (a, at)) in self.unreachable.iter().enumerate() {
            sighting(i, a, *at)?;
            for k in 0..3 {
                catalogs.record_fetch_status(a, FetchStatus::Timeout, *at + Duration::seconds(60 * (k + 1)))?;
            }
        }
        Ok(())
    }

    /// Stores the pages and, when given, fills the catalogs.
    pub fn install(&self, store: &dyn ObjectStore, catalogs: Option<&Catalogs>) -> Result<(), StoreError> {
        self.store_pages(store)?;
        if let Some(c) = catalogs {
            self.record_catalog(c)?;
        }
        Ok(())
    }
}
