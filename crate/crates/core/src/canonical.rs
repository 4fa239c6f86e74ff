//! Canonical JSON encoding and content digests.
//!
//! Canonical form: object keys sorted bytewise, no insignificant whitespace,
//! floats in shortest round-trip representation. Digests are lowercase hex
//! SHA-256 of the canonical bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, k).expect("string serialization");
                out.push(b':');
                write_canonical(&map[k], out);
            }
            out.push(b'}');
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(v, out);
            }
            out.push(b']');
        }
        scalar => serde_json::to_writer(&mut *out, scalar).expect("scalar serialization"),
    }
}

pub fn canonical_bytes(value: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    write_canonical(value, &mut out);
    out
}

pub fn to_canonical<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    canonical_bytes(&serde_json::to_value(value).expect("serializable value"))
}

pub fn digest_value(value: &Value) -> String {
    sha256_hex(&canonical_bytes(value))
}

pub fn digest<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&to_canonical(value))
}

/// Digest of a JSON object with the named top-level fields removed.
pub fn digest_without(value: &Value, excluded: &[&str]) -> String {
    match value {
        Value::Object(map) => {
            let mut map = map.clone();
            for k in excluded {
                map.remove(*k);
            }
            digest_value(&Value::Object(map))
        }
        other => digest_value(other),
    }
}

/// Identifier derived from a source id and a payload, e.g. `pixelate-1a2b3c4d5e6f7a8b`.
pub fn derived_id(tag: &str, source_id: &str, payload: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(source_id.as_bytes());
    h.update([0u8]);
    h.update(payload);
    format!("{tag}-{}", &hex::encode(h.finalize())[..16])
}
