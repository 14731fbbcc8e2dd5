//! Element files and metrics rendering shared by the `mpsi` binary and its
//! tests.
//!
//! Element files hold one element per line. A line starting with `hex:` is
//! decoded as raw bytes, anything else is taken verbatim as UTF-8. Blank
//! lines are ignored, so the empty element is written `hex:`.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use ringpsi::transport::MsgType;
use ringpsi::{Element, PartyReport};

pub const HEX_PREFIX: &str = "hex:";

pub fn parse_elements(text: &str) -> Result<Vec<Element>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        match line.strip_prefix(HEX_PREFIX) {
            Some(h) => out.push(hex::decode(h.trim()).with_context(|| format!("line {}: bad hex", i + 1))?),
            None => out.push(line.as_bytes().to_vec()),
        }
    }
    Ok(out)
}

fn is_plain(x: &[u8]) -> bool {
    match std::str::from_utf8(x) {
        Ok(s) => !s.is_empty() && !s.starts_with(HEX_PREFIX) && !s.contains(['\n', '\r']),
        Err(_) => false,
    }
}

/// Inverse of [`parse_elements`].
pub fn format_elements(elements: &[Element]) -> String {
    let mut out = String::new();
    for x in elements {
        if is_plain(x) {
            out.push_str(std::str::from_utf8(x).unwrap());
        } else {
            out.push_str(HEX_PREFIX);
            out.push_str(&hex::encode(x));
        }
        out.push('\n');
    }
    out
}

/// `key=value` lines for one party.
pub fn report_text(r: &PartyReport) -> String {
    let mut out = format!(
        "party={}\nrole={}\nbytes_sent={}\nbytes_received={}\nwheel_bytes_sent={}\not_bytes={}\n",
        r.index,
        r.role.name(),
        r.bytes_sent(),
        r.bytes_received(),
        r.wheel_sent(),
        r.ot_bytes()
    );
    for t in MsgType::ALL {
        let sent = r.prev.sent(t) + r.next.sent(t);
        if sent > 0 {
            out.push_str(&format!("sent.{}={sent}\n", t.name()));
        }
    }
    for (name, d) in &r.phases {
        out.push_str(&format!("time_ms.{name}={:.3}\n", d.as_secs_f64() * 1e3));
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let Some((k, v)) = line.split_once('=') else {
            bail!("not a key=value line: {line}");
        };
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
