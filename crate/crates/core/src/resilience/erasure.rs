//! Systematic k-of-n MDS code over GF(256) for registry mirroring.
//!
//! The serialized registry is split into k equal chunks (zero padded);
//! chunk i is the value of a degree < k polynomial at x = i, so shares
//! 1..=k are the data itself and shares k+1..=n are Lagrange evaluations
//! at further points. Any k distinct shares interpolate the polynomial
//! back and therefore reconstruct the registry bit-exactly.
//!
//! Share framing (little-endian): version u64, index u8, k u8, n u8,
//! orig_len u64, payload_len u64, checksum u64 (FNV-1a over the payload),
//! then the payload.

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErasureParams {
    /// Data shares needed to reconstruct.
    pub k: u8,
    /// Total shares.
    pub n: u8,
}

impl Default for ErasureParams {
    fn default() -> Self {
        Self { k: 2, n: 4 }
    }
}

impl ErasureParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.n {
            return Err(GridError::InvalidSpec(format!(
                "erasure params need 1 <= k <= n, got k={} n={}",
                self.k, self.n
            )));
        }
        Ok(())
    }

    /// Shrink to a sub-grid with fewer members than n: n becomes the member
    /// count, k half of it rounded up.
    pub fn fit_to(&self, members: usize) -> ErasureParams {
        if members >= self.n as usize {
            *self
        } else {
            let n = members.clamp(1, 255) as u8;
            ErasureParams { k: n.div_ceil(2), n }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Share {
    /// 1..=n; shares 1..=k carry the data split.
    pub index: u8,
    pub registry_version: u64,
    /// Length of the original serialized registry (payloads are padded).
    pub orig_len: u64,
    pub checksum: u64,
    pub payload: Vec<u8>,
}

// ── GF(256) arithmetic, polynomial 0x11b, generator 3 ──────────────────────

struct Gf256 {
    exp: [u8; 512],
    log: [u8; 256],
}

fn tables() -> &'static Gf256 {
    use std::sync::OnceLock;
    static TABLES: OnceLock<Gf256> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut exp = [0u8; 512];
        let mut log = [0u8; 256];
        let mut x: u16 = 1;
        #[allow(clippy::needless_range_loop)] // exp and log fill in lockstep
        for i in 0..255 {
            exp[i] = x as u8;
            log[x as usize] = i as u8;
            x <<= 1;
            if x & 0x100 != 0 {
                x ^= 0x11b;
            }
            x ^= exp[i] as u16; // multiply by generator 3 = x * 2 ^ x
        }
        for i in 255..512 {
            exp[i] = exp[i - 255];
        }
        Gf256 { exp, log }
    })
}

fn gf_mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    let t = tables();
    t.exp[t.log[a as usize] as usize + t.log[b as usize] as usize]
}

fn gf_inv(a: u8) -> u8 {
    debug_assert!(a != 0);
    let t = tables();
    t.exp[255 - t.log[a as usize] as usize]
}

fn gf_div(a: u8, b: u8) -> u8 {
    gf_mul(a, gf_inv(b))
}

/// Lagrange basis coefficients for evaluating at `target` the polynomial
/// interpolated through points with x-coordinates `xs`.
fn lagrange_coeffs(xs: &[u8], target: u8) -> Vec<u8> {
    xs.iter()
        .map(|&xi| {
            let mut num = 1u8;
            let mut den = 1u8;
            for &xm in xs {
                if xm != xi {
                    num = gf_mul(num, target ^ xm); // subtraction is xor
                    den = gf_mul(den, xi ^ xm);
                }
            }
            gf_div(num, den)
        })
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Encode serialized registry bytes into n shares, any k of which
/// reconstruct the input.
pub fn encode_registry(data: &[u8], version: u64, params: &ErasureParams) -> Result<Vec<Share>> {
    params.validate()?;
    if data.is_empty() {
        return Err(GridError::InvalidSpec(
            "cannot encode an empty registry".to_string(),
        ));
    }
    let k = params.k as usize;
    let n = params.n as usize;
    let chunk_len = data.len().div_ceil(k);
    let chunks: Vec<Vec<u8>> = (0..k)
        .map(|i| {
            let mut c = vec![0u8; chunk_len];
            let start = i * chunk_len;
            if start < data.len() {
                let end = (start + chunk_len).min(data.len());
                c[..end - start].copy_from_slice(&data[start..end]);
            }
            c
        })
        .collect();

    let data_xs: Vec<u8> = (1..=params.k).collect();
    let mut shares = Vec::with_capacity(n);
    for idx in 1..=n as u8 {
        let payload = if (idx as usize) <= k {
            chunks[idx as usize - 1].clone()
        } else {
            let coeffs = lagrange_coeffs(&data_xs, idx);
            let mut p = vec![0u8; chunk_len];
            for (chunk, &c) in chunks.iter().zip(&coeffs) {
                if c == 0 {
                    continue;
                }
                for (dst, &src) in p.iter_mut().zip(chunk) {
                    *dst ^= gf_mul(src, c);
                }
            }
            p
        };
        shares.push(Share {
            index: idx,
            registry_version: version,
            orig_len: data.len() as u64,
            checksum: fnv1a(&payload),
            payload,
        });
    }
    Ok(shares)
}

/// Reconstruct the serialized registry from any >= k shares of one
/// encoding. Mixed versions or corrupt checksums are rejected.
pub fn decode_registry(shares: &[Share], params: &ErasureParams) -> Result<Vec<u8>> {
    params.validate()?;
    let k = params.k as usize;
    let mut versions: Vec<u64> = shares.iter().map(|s| s.registry_version).collect();
    versions.sort_unstable();
    versions.dedup();
    if versions.len() > 1 {
        return Err(GridError::VersionConflict(versions));
    }
    let mut picked: Vec<&Share> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for s in shares {
        if s.index == 0 || s.index > params.n {
            return Err(GridError::CorruptShare(format!(
                "index {} out of range 1..={}",
                s.index, params.n
            )));
        }
        if fnv1a(&s.payload) != s.checksum {
            return Err(GridError::CorruptShare(format!(
                "checksum mismatch on share {}",
                s.index
            )));
        }
        if seen.insert(s.index) {
            picked.push(s);
        }
    }
    if picked.len() < k {
        return Err(GridError::InsufficientShares {
            have: picked.len(),
            need: k,
        });
    }
    picked.truncate(k);
    let chunk_len = picked[0].payload.len();
    if picked.iter().any(|s| s.payload.len() != chunk_len) {
        return Err(GridError::CorruptShare(
            "shares of one encoding must have equal payload length".to_string(),
        ));
    }
    let orig_len = picked[0].orig_len as usize;
    let xs: Vec<u8> = picked.iter().map(|s| s.index).collect();

    let mut out = vec![0u8; chunk_len * k];
    for target in 1..=params.k {
        let dst = &mut out[(target as usize - 1) * chunk_len..][..chunk_len];
        if let Some(s) = picked.iter().find(|s| s.index == target) {
            dst.copy_from_slice(&s.payload);
            continue;
        }
        let coeffs = lagrange_coeffs(&xs, target);
        for (s, &c) in picked.iter().zip(&coeffs) {
            if c == 0 {
                continue;
            }
            for (d, &src) in dst.iter_mut().zip(&s.payload) {
                *d ^= gf_mul(src, c);
            }
        }
    }
    out.truncate(orig_len);
    Ok(out)
}

impl Share {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(35 + self.payload.len());
        buf.extend_from_slice(&self.registry_version.to_le_bytes());
        buf.push(self.index);
        buf.extend_from_slice(&self.orig_len.to_le_bytes());
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.checksum.to_le_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 33 {
            return Err(GridError::CorruptShare("truncated share frame".to_string()));
        }
        let registry_version = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
        let index = bytes[8];
        let orig_len = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let payload_len = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
        let checksum = u64::from_le_bytes(bytes[25..33].try_into().unwrap());
        if bytes.len() != 33 + payload_len {
            return Err(GridError::CorruptShare(format!(
                "frame length {} does not match payload_len {}",
                bytes.len(),
                payload_len
            )));
        }
        Ok(Share {
            index,
            registry_version,
            orig_len,
            checksum,
            payload: bytes[33..].to_vec(),
        })
    }
}
