//! Binary on-disk cache for a full [`TransitionSet`].
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     4 bytes  "HQTS"
//! version   u32      = 1
//! n_units   u32
//! n_nodes   u32
//! hash      32 bytes SHA-256 of the instance (see `instance_hash`)
//! n_up      u64
//! n_down    u64
//! upward    n_up   x (from u32, to u32, rate f64)
//! downward  n_down x (from u32, to u32, rate f64)
//! lambda    2^N x f64
//! mu        2^N x f64
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use super::{TransitionSet, Triple};
use crate::error::{Error, Result};
use crate::model::{ServiceSystem, StateIndex};

const MAGIC: &[u8; 4] = b"HQTS";
pub const VERSION: u32 = 1;

/// SHA-256 over the canonical JSON of the instance, excluding metadata and
/// travel times (neither affects transition rates).
pub fn instance_hash(sys: &ServiceSystem) -> [u8; 32] {
    let mut raw = sys.raw().clone();
    raw.metadata = None;
    raw.travel_times = None;
    raw.buffer_capacity = 0;
    let bytes = serde_json::to_vec(&raw).expect("instance serializes");
    Sha256::digest(&bytes).into()
}

pub fn write_cache<W: Write>(mut w: W, sys: &ServiceSystem, set: &TransitionSet) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(sys.n_units() as u32).to_le_bytes())?;
    w.write_all(&(sys.n_nodes() as u32).to_le_bytes())?;
    w.write_all(&instance_hash(sys))?;
    w.write_all(&(set.upward.len() as u64).to_le_bytes())?;
    w.write_all(&(set.downward.len() as u64).to_le_bytes())?;
    for t in set.upward.iter().chain(&set.downward) {
        w.write_all(&t.from.0.to_le_bytes())?;
        w.write_all(&t.to.0.to_le_bytes())?;
        w.write_all(&t.rate.to_le_bytes())?;
    }
    for x in set.lambda_total.iter().chain(&set.mu_total) {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Reads a cache and checks that it was written for `sys`.
pub fn read_cache<R: Read>(mut r: R, sys: &ServiceSystem) -> Result<TransitionSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let j = read_u32(&mut r)? as usize;
    if n != sys.n_units() || j != sys.n_nodes() {
        return Err(Error::Cache(format!(
            "cache is for N={n}, J={j}; instance has N={}, J={}",
            sys.n_units(),
            sys.n_nodes()
        )));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if hash != instance_hash(sys) {
        return Err(Error::Cache("instance hash mismatch".into()));
    }
    let n_up = read_u64(&mut r)? as usize;
    let n_down = read_u64(&mut r)? as usize;
    let max_edges = (1usize << n) * n;
    if n_up > max_edges || n_down > max_edges {
        return Err(Error::Cache("triple count exceeds hypercube edges".into()));
    }
    let mut read_triples = |count: usize| -> Result<Vec<Triple>> {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            let from = StateIndex(read_u32(&mut r)?);
            let to = StateIndex(read_u32(&mut r)?);
            let rate = read_f64(&mut r)?;
            v.push(Triple { from, to, rate });
        }
        Ok(v)
    };
    let upward = read_triples(n_up)?;
    let downward = read_triples(n_down)?;
    let states = 1usize << n;
    let lambda_total = (0..states)
        .map(|_| read_f64(&mut r))
        .collect::<Result<_>>()?;
    let mu_total = (0..states)
        .map(|_| read_f64(&mut r))
        .collect::<Result<_>>()?;
    Ok(TransitionSet {
        n_units: n,
        upward,
        downward,
        lambda_total,
        mu_total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, RawSystem};
    use crate::transitions::generate_full;

    fn sys(nu: Vec<f64>) -> ServiceSystem {
        validate(RawSystem {
            n_units: 3,
            n_nodes: 2,
            arrival_rate: 1.5,
            demand_fractions: vec![0.25, 0.75],
            service_rates: nu,
            preferences: vec![vec![1, 2, 3], vec![3, 1, 2]],
            buffer_capacity: 0,
            travel_times: None,
            metadata: None,
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let s = sys(vec![1.0, 2.0, 3.0]);
        let set = generate_full(&s).unwrap();
        let mut buf = Vec::new();
        write_cache(&mut buf, &s, &set).unwrap();
        assert_eq!(&buf[..4], b"HQTS");
        let back = read_cache(buf.as_slice(), &s).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn rejects_other_instance_and_truncation() {
        let s = sys(vec![1.0, 2.0, 3.0]);
        let set = generate_full(&s).unwrap();
        let mut buf = Vec::new();
        write_cache(&mut buf, &s, &set).unwrap();
        let other = sys(vec![1.0, 2.0, 4.0]);
        assert!(matches!(
            read_cache(buf.as_slice(), &other),
            Err(Error::Cache(_))
        ));
        assert!(read_cache(&buf[..buf.len() - 3], &s).is_err());
    }
}
