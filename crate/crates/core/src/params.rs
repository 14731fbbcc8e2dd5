//! Protocol parameter derivation.
//!
//! Every party derives the same [`ProtocolParams`] from `(N, n, lambda, sigma, d)`.
//! The matrix height `m` is fixed to the padded set size `N`, and the
//! column count `w` is the smallest value for which a non-member element
//! selects at least `d` one-bits from an occupancy matrix, except with
//! probability `2^-sigma` after a union bound over the `N` elements.

use std::collections::BTreeMap;
use std::fmt;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Upper limit for the `w` search.
pub const MAX_COLUMNS: u32 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecurityConfig {
    /// Computational security parameter, in bits.
    pub lambda: u32,
    /// Statistical security parameter, in bits.
    pub sigma: u32,
    /// Minimum Hamming weight a non-member must select.
    pub d: u32,
}

impl SecurityConfig {
    pub fn new(lambda: u32, sigma: u32, d: u32) -> Result<Self> {
        let sec = SecurityConfig { lambda, sigma, d };
        sec.validate()?;
        Ok(sec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda < 80 {
            return Err(Error::InvalidParams(format!("lambda={} < 80", self.lambda)));
        }
        if self.lambda % 8 != 0 {
            return Err(Error::InvalidParams(format!(
                "lambda={} is not a whole number of bytes",
                self.lambda
            )));
        }
        if self.sigma < 30 {
            return Err(Error::InvalidParams(format!("sigma={} < 30", self.sigma)));
        }
        if self.d < 1 {
            return Err(Error::InvalidParams("d must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SecurityConfig {
    /// lambda = 128, sigma = 40, d = lambda.
    fn default() -> Self {
        SecurityConfig {
            lambda: 128,
            sigma: 40,
            d: 128,
        }
    }
}

/// Parameters every party must agree on byte-for-byte.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProtocolParams {
    /// Number of parties `n`.
    pub parties: usize,
    /// Upper bound `N` on every input set; sets are padded to this size.
    pub set_size: usize,
    /// Matrix height `m`.
    pub rows: usize,
    /// Matrix width `w`, also the number of OTs per hop.
    pub cols: usize,
    /// H1 output length in bits.
    pub ell1: u32,
    /// H2 output length in bits.
    pub ell2: u32,
    pub sec: SecurityConfig,
}

impl ProtocolParams {
    /// Bytes per matrix column on the wire.
    pub fn column_bytes(&self) -> usize {
        self.rows.div_ceil(8)
    }

    /// Bytes of one full `m x w` matrix on the wire.
    pub fn matrix_bytes(&self) -> usize {
        self.cols * self.column_bytes()
    }

    /// Bytes of one transmitted OPRF value.
    pub fn oprf_bytes(&self) -> usize {
        (self.ell2 as usize).div_ceil(8)
    }

    pub fn key_bytes(&self) -> usize {
        (self.sec.lambda / 8) as usize
    }

    /// Replaces `ell2`. Used by the soundness experiment to force collisions.
    pub fn with_ell2(mut self, ell2: u32) -> Self {
        self.ell2 = ell2;
        self
    }

    /// Replaces `w`.
    pub fn with_cols(mut self, cols: usize) -> Self {
        self.cols = cols;
        self
    }

    pub fn with_parties(mut self, parties: usize) -> Self {
        self.parties = parties;
        self
    }

    fn fields(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("d", self.sec.d.to_string()),
            ("ell1", self.ell1.to_string()),
            ("ell2", self.ell2.to_string()),
            ("lambda", self.sec.lambda.to_string()),
            ("m", self.rows.to_string()),
            ("n", self.parties.to_string()),
            ("set_size", self.set_size.to_string()),
            ("sigma", self.sec.sigma.to_string()),
            ("w", self.cols.to_string()),
        ])
    }

    /// Canonical `name=value` block, one per line, sorted by name.
    pub fn canonical_text(&self) -> String {
        self.fields()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn parse_canonical(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidParams(format!("malformed line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::InvalidParams(format!("missing `{key}`")))?
                .parse()
                .map_err(|_| Error::InvalidParams(format!("bad value for `{key}`")))
        }
        Ok(ProtocolParams {
            parties: get(&map, "n")?,
            set_size: get(&map, "set_size")?,
            rows: get(&map, "m")?,
            cols: get(&map, "w")?,
            ell1: get(&map, "ell1")?,
            ell2: get(&map, "ell2")?,
            sec: SecurityConfig {
                lambda: get(&map, "lambda")?,
                sigma: get(&map, "sigma")?,
                d: get(&map, "d")?,
            },
        })
    }

    /// Compares against a peer's canonical block and names the first
    /// differing field.
    pub fn check_agreement(&self, peer_text: &str) -> Result<()> {
        let ours = self.canonical_text();
        if ours == peer_text {
            return Ok(());
        }
        let theirs: BTreeMap<&str, &str> = peer_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .collect();
        for (k, v) in self.fields() {
            let other = theirs.get(k).copied().unwrap_or("<missing>");
            if other != v {
                return Err(Error::ParamsMismatch {
                    field: k.to_string(),
                    ours: v,
                    theirs: other.to_string(),
                });
            }
        }
        Err(Error::ParamsMismatch {
            field: "<encoding>".into(),
            ours,
            theirs: peer_text.to_string(),
        })
    }
}

impl fmt::Display for ProtocolParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_text())
    }
}

/// Probability `(1 - 1/m)^set_size` that a given matrix cell stays 1.
pub fn occupancy_probability(m: usize, set_size: usize) -> f64 {
    if set_size == 0 {
        return 1.0;
    }
    (set_size as f64 * (-1.0 / m as f64).ln_1p()).exp()
}

fn ln_binomial(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Natural log of `P[Binomial(w, p) <= d - 1]` with `p = (1 - 1/m)^set_size`,
/// accumulated with log-sum-exp.
pub fn ln_weight_tail(w: u64, set_size: usize, m: usize, d: u32) -> f64 {
    let d = d as u64;
    if w < d {
        return 0.0;
    }
    let (ln_p, ln_q) = if set_size == 0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        let ln_p = set_size as f64 * (-1.0 / m as f64).ln_1p();
        // ln(1 - p) without cancellation when p is close to 1
        (ln_p, (-ln_p.exp_m1()).ln())
    };
    let terms: Vec<f64> = (0..d)
        .map(|k| {
            let mut t = ln_binomial(w, k);
            if k > 0 {
                t += k as f64 * ln_p;
            }
            if w > k {
                t += (w - k) as f64 * ln_q;
            }
            t
        })
        .collect();
    log_sum_exp(&terms)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// True iff `N * P[Binomial(w, p) < d] <= 2^-sigma`.
pub fn check_w_bound(w: usize, set_size: usize, m: usize, sec: &SecurityConfig) -> bool {
    if w < sec.d as usize {
        return false;
    }
    let ln_tail = ln_weight_tail(w as u64, set_size, m, sec.d);
    let ln_union = (set_size.max(1) as f64).ln() + ln_tail;
    ln_union <= -(sec.sigma as f64) * std::f64::consts::LN_2
}

/// `ceil(log2(x))` for `x >= 1`.
fn ceil_log2(x: u128) -> u32 {
    if x <= 1 {
        0
    } else {
        128 - (x - 1).leading_zeros()
    }
}

/// Smallest `w` in `[d, MAX_COLUMNS]` passing [`check_w_bound`], found by
/// doubling and then bisecting.
pub fn minimal_cols(set_size: usize, m: usize, sec: &SecurityConfig) -> Result<usize> {
    let infeasible = || Error::Infeasible {
        set_size: set_size as u64,
        d: sec.d,
        sigma: sec.sigma,
        limit: MAX_COLUMNS,
    };
    let limit = MAX_COLUMNS as usize;
    let mut hi = sec.d as usize;
    if hi > limit {
        return Err(infeasible());
    }
    let mut lo = hi - 1; // always fails: fewer columns than d
    while !check_w_bound(hi, set_size, m, sec) {
        if hi == limit {
            return Err(infeasible());
        }
        lo = hi;
        hi = (hi * 2).min(limit);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if check_w_bound(mid, set_size, m, sec) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

pub fn derive_params(set_size: usize, parties: usize, sec: SecurityConfig) -> Result<ProtocolParams> {
    if set_size < 2 {
        return Err(Error::InvalidParams(format!("N={set_size} < 2")));
    }
    if parties < 2 {
        return Err(Error::InvalidParams(format!("n={parties} < 2")));
    }
    sec.validate()?;
    let rows = set_size;
    let cols = minimal_cols(set_size, rows, &sec)?;
    let n2 = (set_size as u128) * (set_size as u128);
    Ok(ProtocolParams {
        parties,
        set_size,
        rows,
        cols,
        ell1: 2 * sec.lambda,
        ell2: sec.sigma + ceil_log2(n2),
        sec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sec() -> SecurityConfig {
        SecurityConfig::default()
    }

    #[test]
    fn ell2_for_large_sets() {
        let p = derive_params(1 << 20, 3, sec()).unwrap();
        assert_eq!(p.ell2, 80);
        assert_eq!(p.oprf_bytes(), 10);
    }

    #[test]
    fn ell1_is_twice_lambda() {
        let p = derive_params(1 << 12, 3, sec()).unwrap();
        assert_eq!(p.ell1, 256);
        assert_eq!(p.rows, 1 << 12);
    }

    #[test]
    fn ell2_rounds_up_for_non_powers() {
        // 2*log2(1000) = 19.93
        let p = derive_params(1000, 2, sec()).unwrap();
        assert_eq!(p.ell2, 60);
    }

    #[test]
    fn derived_w_is_minimal() {
        let p = derive_params(1 << 12, 3, sec()).unwrap();
        let s = p.sec;
        assert!(check_w_bound(p.cols, p.set_size, p.rows, &s));
        assert!(!check_w_bound(p.cols - 1, p.set_size, p.rows, &s));
    }

    #[test]
    fn fewer_columns_than_d_fails() {
        let s = sec();
        assert!(!check_w_bound(127, 1 << 12, 1 << 12, &s));
    }

    #[test]
    fn bound_is_monotone_in_w() {
        let s = sec();
        let mut seen = false;
        for w in 128..1200 {
            let ok = check_w_bound(w, 1 << 16, 1 << 16, &s);
            assert!(!seen || ok, "bound failed at w={w} after passing");
            seen |= ok;
        }
        assert!(seen);
    }

    #[test]
    fn w_for_million_element_sets_is_in_range() {
        let p = derive_params(1 << 20, 15, sec()).unwrap();
        assert!((550..=800).contains(&p.cols), "w = {}", p.cols);
    }

    #[test]
    fn occupancy_edge_cases() {
        assert_eq!(occupancy_probability(17, 0), 1.0);
        assert_eq!(occupancy_probability(1, 1), 0.0);
        let p = occupancy_probability(1 << 20, 1 << 20);
        assert!((p - (-1.0f64).exp()).abs() < 1e-4, "p = {p}");
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(derive_params(1, 3, sec()).is_err());
        assert!(derive_params(16, 1, sec()).is_err());
        assert!(SecurityConfig::new(64, 40, 64).is_err());
        assert!(SecurityConfig::new(128, 20, 128).is_err());
        assert!(SecurityConfig::new(128, 40, 0).is_err());
    }

    #[test]
    fn infeasible_when_every_cell_is_zeroed() {
        // m = 1: every element zeroes the only row
        let s = SecurityConfig::new(128, 40, 4).unwrap();
        assert!(matches!(minimal_cols(8, 1, &s), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn canonical_text_round_trips_and_names_mismatch() {
        let p = derive_params(256, 4, sec()).unwrap();
        let text = p.canonical_text();
        let mut keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
        let sorted = {
            let mut k = keys.clone();
            k.sort();
            k
        };
        assert_eq!(keys, sorted);
        keys.dedup();
        assert_eq!(keys.len(), 9);
        assert_eq!(ProtocolParams::parse_canonical(&text).unwrap(), p);
        p.check_agreement(&text).unwrap();

        let other = p.clone().with_parties(5).canonical_text();
        match p.check_agreement(&other) {
            Err(Error::ParamsMismatch { field, .. }) => assert_eq!(field, "n"),
            r => panic!("unexpected {r:?}"),
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_params(3000, 5, sec()).unwrap();
        let b = derive_params(3000, 5, sec()).unwrap();
        assert_eq!(a, b);
    }
}
