//! HTML to clean text: main-content extraction, then noise removal.

mod clean;
mod extract;

pub use clean::{preprocess, split_sentences, MoneyConfig, Preprocessor};
pub use extract::{extract_main_text, extract_title};

use serde::{Deserialize, Serialize};

use crate::onion::OnionAddress;
use crate::types::DayKey;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFlags {
    pub empty_after_extraction: bool,
    pub empty_after_preprocessing: bool,
}

/// One downloaded page through both text stages; a row of `preprocessed.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageDocument {
    pub address: OnionAddress,
    pub day: DayKey,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_html: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub main_text: String,
    pub clean_text: String,
    pub flags: PageFlags,
}

impl PageDocument {
    /// Runs extraction and preprocessing over a raw page.
    pub fn prepare(address: OnionAddress, day: DayKey, raw_html: String, pre: &Preprocessor) -> Self {
        let main_text = extract_main_text(&raw_html);
        let clean_text = pre.run(&main_text);
        let flags = PageFlags {
            empty_after_extraction: main_text.trim().is_empty(),
            empty_after_preprocessing: clean_text.is_empty(),
        };
        let title = extract_title(&raw_html);
        Self { address, day, raw_html, title, main_text, clean_text, flags }
    }

    pub fn is_empty(&self) -> bool {
        self.clean_text.is_empty()
    }

    /// Drops the raw markup (it already lives in the object store).
    pub fn without_html(mut self) -> Self {
        self.raw_html.clear();
        self
    }
}
