//! Tor v3 onion addresses.
//!
//! A v3 address label is the base32 encoding of `pubkey(32) ‖ checksum(2) ‖ version(1)`,
//! where the checksum is the first two bytes of
//! `SHA3-256(".onion checksum" ‖ pubkey ‖ version)`.
//! <https://spec.torproject.org/rend-spec/encoding-onion-addresses.html>

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use data_encoding::BASE32_NOPAD;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha3::{Digest, Sha3_256};
use thiserror::Error;

/// Length of a v3 label in base32 characters.
pub const V3_LABEL_LEN: usize = 56;
/// The only version byte accepted.
pub const V3_VERSION: u8 = 3;

const CHECKSUM_PREFIX: &[u8] = b".onion checksum";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OnionAddrError {
    #[error("onion label has {0} characters, expected 56")]
    WrongLength(usize),
    #[error("onion label contains characters outside the base32 alphabet")]
    BadAlphabet,
    #[error("unsupported onion version {0}")]
    BadVersion(u8),
    #[error("onion checksum mismatch")]
    BadChecksum,
}

/// A validated v3 onion address. The label is always lowercase.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct OnionAddress {
    label: String,
    pubkey: [u8; 32],
    checksum: [u8; 2],
    version: u8,
}

impl OnionAddress {
    /// Builds the address for a public key, computing the checksum.
    pub fn from_pubkey(pubkey: [u8; 32]) -> Self {
        let checksum = compute_v3_checksum(&pubkey, V3_VERSION);
        let mut raw = [0u8; 35];
        raw[..32].copy_from_slice(&pubkey);
        raw[32..34].copy_from_slice(&checksum);
        raw[34] = V3_VERSION;
        let label = BASE32_NOPAD.encode(&raw).to_ascii_lowercase();
        Self { label, pubkey, checksum, version: V3_VERSION }
    }

    /// The 56-character lowercase label, without `.onion`.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn pubkey(&self) -> &[u8; 32] {
        &self.pubkey
    }

    pub fn checksum(&self) -> [u8; 2] {
        self.checksum
    }

    pub fn version(&self) -> u8 {
        self.version
    }

    /// `<label>.onion`
    pub fn hostname(&self) -> String {
        format!("{}.onion", self.label)
    }

    /// Root URL fetched by the downloaders.
    pub fn root_url(&self) -> String {
        format!("http://{}.onion/", self.label)
    }
}

impl fmt::Display for OnionAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.onion", self.label)
    }
}

impl fmt::Debug for OnionAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OnionAddress({}.onion)", self.label)
    }
}

impl FromStr for OnionAddress {
    type Err = OnionAddrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_onion_address(s)
    }
}

impl TryFrom<String> for OnionAddress {
    type Error = OnionAddrError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        parse_onion_address(&value)
    }
}

impl From<OnionAddress> for String {
    fn from(value: OnionAddress) -> Self {
        value.hostname()
    }
}

/// First two bytes of `SHA3-256(".onion checksum" ‖ pubkey ‖ version)`.
pub fn compute_v3_checksum(pubkey: &[u8; 32], version: u8) -> [u8; 2] {
    let mut hasher = Sha3_256::new();
    hasher.update(CHECKSUM_PREFIX);
    hasher.update(pubkey);
    hasher.update([version]);
    let digest = hasher.finalize();
    [digest[0], digest[1]]
}

/// Parses a candidate hostname into a validated address.
///
/// Accepts any letter case, an optional `.onion` suffix, an optional trailing
/// root dot, an optional `:port`, and subdomains: only the rightmost label
/// before `.onion` is validated and kept.
pub fn parse_onion_address(text: &str) -> Result<OnionAddress, OnionAddrError> {
    let mut host = text.trim();
    if let Some((h, port)) = host.rsplit_once(':') {
        if !port.is_empty() && port.bytes().all(|b| b.is_ascii_digit()) {
            host = h;
        }
    }
    let host = host.strip_suffix('.').unwrap_or(host);
    let host = strip_suffix_ignore_case(host, ".onion").unwrap_or(host);
    let label = host.rsplit('.').next().unwrap_or(host);

    // Length is counted in characters so multibyte garbage reports a sane number.
    let len = label.chars().count();
    if len != V3_LABEL_LEN {
        return Err(OnionAddrError::WrongLength(len));
    }
    if !label.bytes().all(is_base32_char) {
        return Err(OnionAddrError::BadAlphabet);
    }
    let upper = label.to_ascii_uppercase();
    let raw = BASE32_NOPAD
        .decode(upper.as_bytes())
        .map_err(|_| OnionAddrError::BadAlphabet)?;
    // 56 base32 chars = 280 bits = exactly 35 bytes.
    debug_assert_eq!(raw.len(), 35);

    let mut pubkey = [0u8; 32];
    pubkey.copy_from_slice(&raw[..32]);
    let checksum = [raw[32], raw[33]];
    let version = raw[34];
    // The checksum covers the version byte, so integrity is checked first: a
    // corrupted final character reports BadChecksum, and BadVersion is reserved
    // for well-formed labels of another version.
    if compute_v3_checksum(&pubkey, version) != checksum {
        return Err(OnionAddrError::BadChecksum);
    }
    if version != V3_VERSION {
        return Err(OnionAddrError::BadVersion(version));
    }
    Ok(OnionAddress { label: label.to_ascii_lowercase(), pubkey, checksum, version })
}

fn strip_suffix_ignore_case<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let cut = s.len().checked_sub(suffix.len())?;
    if s.is_char_boundary(cut) && s[cut..].eq_ignore_ascii_case(suffix) {
        Some(&s[..cut])
    } else {
        None
    }
}

fn is_base32_char(b: u8) -> bool {
    matches!(b, b'a'..=b'z' | b'A'..=b'Z' | b'2'..=b'7')
}

/// Counters from an extraction pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractStats {
    pub candidates: usize,
    pub invalid: usize,
    pub duplicates: usize,
}

fn candidate_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i-u)\b([a-z2-7]{56})\.onion\b").expect("valid regex"))
}

/// Finds every valid v3 address in `text`, in first-occurrence order, without duplicates.
pub fn extract_onion_addresses(text: &str) -> Vec<OnionAddress> {
    extract_onion_addresses_with_stats(text).0
}

/// Same as [`extract_onion_addresses`], also reporting how many candidates were rejected.
pub fn extract_onion_addresses_with_stats(text: &str) -> (Vec<OnionAddress>, ExtractStats) {
    let mut stats = ExtractStats::default();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for caps in candidate_regex().captures_iter(text) {
        stats.candidates += 1;
        match parse_onion_address(&caps[1]) {
            Ok(addr) => {
                if seen.insert(addr.label.clone()) {
                    out.push(addr);
                } else {
                    stats.duplicates += 1;
                }
            }
            Err(_) => stats.invalid += 1,
        }
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUCKDUCKGO: &str = "duckduckgogg42xjoc72x3sjasowoarfbgcmvfimaftt6twagswzczad";
    const TORPROJECT: &str = "2gzyxa5ihm7nsggfxnu52rck2vv4rvmdlkiu3zzui5du4xyclen53wid";

    #[test]
    fn short_label_is_wrong_length() {
        assert_eq!(parse_onion_address("abc.onion"), Err(OnionAddrError::WrongLength(3)));
    }

    #[test]
    fn known_public_addresses_parse() {
        for label in [DUCKDUCKGO, TORPROJECT] {
            let addr = parse_onion_address(&format!("{label}.onion")).unwrap();
            assert_eq!(addr.label(), label);
            assert_eq!(addr.version(), 3);
            assert_eq!(OnionAddress::from_pubkey(*addr.pubkey()), addr);
        }
    }

    #[test]
    fn case_port_subdomain_and_root_dot_are_normalized() {
        let upper = DUCKDUCKGO.to_ascii_uppercase();
        let forms = [
            format!("{upper}.ONION"),
            format!("www.{DUCKDUCKGO}.onion"),
            format!("{DUCKDUCKGO}.onion."),
            format!("{DUCKDUCKGO}.onion:8080"),
            DUCKDUCKGO.to_string(),
        ];
        for f in forms {
            assert_eq!(parse_onion_address(&f).unwrap().label(), DUCKDUCKGO, "{f}");
        }
    }

    #[test]
    fn bad_alphabet_and_version() {
        let mut bad = DUCKDUCKGO.to_string();
        bad.replace_range(0..1, "1");
        assert_eq!(parse_onion_address(&bad), Err(OnionAddrError::BadAlphabet));

        let mut raw = [0u8; 35];
        raw[32..34].copy_from_slice(&compute_v3_checksum(&[0u8; 32], 2));
        raw[34] = 2;
        let label = BASE32_NOPAD.encode(&raw).to_ascii_lowercase();
        assert_eq!(parse_onion_address(&label), Err(OnionAddrError::BadVersion(2)));
    }

    #[test]
    fn corrupted_last_character_is_bad_checksum() {
        let mut bad = DUCKDUCKGO.to_string();
        bad.replace_range(55..56, "e");
        assert_eq!(parse_onion_address(&bad), Err(OnionAddrError::BadChecksum));
    }

    #[test]
    fn v2_addresses_rejected() {
        assert_eq!(
            parse_onion_address("expyuzz4wqqyqhjn.onion"),
            Err(OnionAddrError::WrongLength(16))
        );
    }

    #[test]
    fn extraction_dedupes_and_skips_invalid() {
        assert!(extract_onion_addresses("").is_empty());
        let mut corrupted = TORPROJECT.to_string();
        corrupted.replace_range(55..56, "a");
        let text = format!(
            "see http://{DUCKDUCKGO}.onion/ and {corrupted}.onion, again {}.ONION",
            DUCKDUCKGO.to_uppercase()
        );
        let (found, stats) = extract_onion_addresses_with_stats(&text);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].label(), DUCKDUCKGO);
        assert_eq!(stats, ExtractStats { candidates: 3, invalid: 1, duplicates: 1 });
    }

    #[test]
    fn overlong_runs_are_not_truncated_into_candidates() {
        let text = format!("aaaa{DUCKDUCKGO}.onion");
        assert!(extract_onion_addresses(&text).is_empty());
    }

    #[test]
    fn serde_uses_hostname() {
        let addr = parse_onion_address(DUCKDUCKGO).unwrap();
        let json = serde_json::to_string(&addr).unwrap();
        assert_eq!(json, format!("\"{DUCKDUCKGO}.onion\""));
        let back: OnionAddress = serde_json::from_str(&json).unwrap();
        assert_eq!(back, addr);
        assert!(serde_json::from_str::<OnionAddress>("\"abc.onion\"").is_err());
    }
}
