//! JSON checkpoints tagged with a kind string so a BH checkpoint is never
//! loaded as a PA one. Floats are written in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    kind: String,
    version: u32,
    body: T,
}

const VERSION: u32 = 1;

pub fn to_string<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        kind: kind.to_string(),
        version: VERSION,
        body,
    })?)
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if env.kind != kind {
        return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", env.kind)));
    }
    if env.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", env.version)));
    }
    Ok(serde_json::from_value(env.body)?)
}

pub fn save<T: Serialize>(path: impl AsRef<Path>, kind: &str, body: &T) -> Result<()> {
    std::fs::write(path, to_string(kind, body)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T> {
    from_str(kind, &std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let v: Vec<f64> = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE];
        let s = to_string("vec", &v).unwrap();
        let back: Vec<f64> = from_str("vec", &s).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(from_str::<Vec<f64>>("other", &s), Err(Error::Checkpoint(_))));
    }
}
