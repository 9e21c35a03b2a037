//! Onion service discovery, download, and daily content analysis.
//!
//! The crate is organised by pipeline stage: [`discovery`] finds addresses,
//! [`fetch`] downloads their root pages into the [`store`], and the daily
//! [`pipeline`] batch runs [`textprep`], [`dedup`], [`langid`], [`topics`] and
//! [`analytics`] over each day's pages.

pub mod analytics;
pub mod dedup;
pub mod discovery;
pub mod fetch;
pub mod langid;
pub mod onion;
pub mod pipeline;
pub mod store;
pub mod textprep;
pub mod topics;
pub mod types;

pub use onion::{
    compute_v3_checksum, extract_onion_addresses, parse_onion_address, OnionAddrError,
    OnionAddress,
};
pub use types::{DayKey, Discovery, FetchStatus, SourceKind};
