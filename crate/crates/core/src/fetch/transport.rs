use std::collections::HashMap;
use std::time::Duration;

use parking_lot::Mutex;
use reqwest::blocking::Client;

use super::{PageTransport, ProxyEndpoint, TransportError};
use crate::onion::OnionAddress;

const USER_AGENT: &str = "Mozilla/5.0 (Windows NT 10.0; rv:115.0) Gecko/20100101 Firefox/115.0";

/// HTTP over SOCKS5 with proxy-side name resolution (`socks5h`), as required
/// for `.onion` hosts. One client is kept per proxy endpoint.
#[derive(Debug, Default)]
pub struct Socks5Transport {
    clients: Mutex<HashMap<ProxyEndpoint, Client>>,
}

impl Socks5Transport {
    pub fn new() -> Self {
        Self::default()
    }

    fn client(&self, proxy: &ProxyEndpoint) -> Result<Client, TransportError> {
        let mut clients = self.clients.lock();
        if let Some(c) = clients.get(proxy) {
            return Ok(c.clone());
        }
        let p = reqwest::Proxy::all(format!("socks5h://{proxy}"))
            .map_err(|e| TransportError::Proxy(e.to_string()))?;
        let client = Client::builder()
            .proxy(p)
            .user_agent(USER_AGENT)
            .redirect(reqwest::redirect::Policy::limited(5))
            .build()
            .map_err(|e| TransportError::Proxy(e.to_string()))?;
        clients.insert(proxy.clone(), client.clone());
        Ok(client)
    }

    /// GET of an arbitrary URL through the proxy; also used by the HTTP page
    /// fetcher of the discovery connectors.
    pub fn get_url(
        &self,
        url: &str,
        proxy: &ProxyEndpoint,
        timeout: Duration,
    ) -> Result<Vec<u8>, TransportError> {
        let client = self.client(proxy)?;
        let resp = client.get(url).timeout(timeout).send().map_err(map_err)?;
        let bytes = resp.bytes().map_err(map_err)?;
        Ok(bytes.to_vec())
    }
}

fn map_err(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else {
        let mut msg = e.to_string();
        let mut src = std::error::Error::source(&e);
        while let Some(s) = src {
            msg.push_str(": ");
            msg.push_str(&s.to_string());
            src = s.source();
        }
        TransportError::Unreachable(msg)
    }
}

impl PageTransport for Socks5Transport {
    fn get_root(
        &self,
        address: &OnionAddress,
        proxy: &ProxyEndpoint,
        timeout: Duration,
    ) -> Result<Vec<u8>, TransportError> {
        self.get_url(&address.root_url(), proxy, timeout)
    }
}
