// Layout: u64 LE header length N | N bytes of UTF-8 JSON header | payload.
// The header maps tensor name -> {"dtype", "shape", "data_offsets": [begin, end]}
// with offsets relative to the payload start, plus an optional
// "__metadata__" object of strings. Writers emit tensors in sorted name order
// with contiguous offsets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::{DType, TensorMap, TensorRecord, WeightsError};

const METADATA_KEY: &str = "__metadata__";
// Headers larger than this are rejected before allocation.
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    dtype: DType,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

enum HeaderValue {
    Tensor(HeaderEntry),
    Metadata(BTreeMap<String, String>),
}

/// Header entries in file order, duplicates preserved so they can be reported.
struct RawHeader(Vec<(String, HeaderValue)>);

impl<'de> Deserialize<'de> for RawHeader {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct HeaderVisitor;

        impl<'de> Visitor<'de> for HeaderVisitor {
            type Value = RawHeader;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of tensor name to tensor info")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<RawHeader, A::Error> {
                let mut out = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    let value = if key == METADATA_KEY {
                        HeaderValue::Metadata(map.next_value()?)
                    } else {
                        HeaderValue::Tensor(map.next_value().map_err(|e: A::Error| {
                            de::Error::custom(format!("tensor {key:?}: {e}"))
                        })?)
                    };
                    out.push((key, value));
                }
                Ok(RawHeader(out))
            }
        }

        deserializer.deserialize_map(HeaderVisitor)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<TensorMap, WeightsError> {
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| WeightsError::MalformedHeader("file shorter than 8-byte length prefix".into()))?;
    let header_len = u64::from_le_bytes(len_bytes);
    if header_len > MAX_HEADER_LEN || header_len > (bytes.len() - 8) as u64 {
        return Err(WeightsError::MalformedHeader(format!(
            "header length {header_len} exceeds file size {}",
            bytes.len()
        )));
    }
    let header_end = 8 + header_len as usize;
    let header_text = std::str::from_utf8(&bytes[8..header_end])
        .map_err(|e| WeightsError::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let RawHeader(entries) =
        serde_json::from_str(header_text).map_err(|e| WeightsError::MalformedHeader(e.to_string()))?;

    let payload = &bytes[header_end..];
    let mut map = TensorMap::new();
    let mut spans: Vec<(u64, u64, String)> = Vec::new();
    let mut saw_metadata = false;

    for (name, value) in entries {
        let entry = match value {
            HeaderValue::Metadata(m) => {
                if saw_metadata {
                    return Err(WeightsError::DuplicateName(name));
                }
                saw_metadata = true;
                *map.metadata_mut() = m;
                continue;
            }
            HeaderValue::Tensor(e) => e,
        };
        if map.get(&name).is_some() {
            return Err(WeightsError::DuplicateName(name));
        }
        let [begin, end] = entry.data_offsets;
        if begin > end {
            return Err(WeightsError::MalformedHeader(format!(
                "tensor {name:?}: offsets [{begin}, {end}] are reversed"
            )));
        }
        if end > payload.len() as u64 {
            return Err(WeightsError::TruncatedPayload {
                name,
                end,
                available: payload.len() as u64,
            });
        }
        let expected = entry
            .shape
            .iter()
            .try_fold(entry.dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| WeightsError::MalformedHeader(format!("tensor {name:?}: shape overflows")))?;
        let found = (end - begin) as usize;
        if expected != found {
            return Err(WeightsError::SizeMismatch {
                name,
                shape: entry.shape,
                expected,
                found,
            });
        }
        let data = payload[begin as usize..end as usize].to_vec();
        spans.push((begin, end, name.clone()));
        map.insert(name, TensorRecord { dtype: entry.dtype, shape: entry.shape, data })?;
    }

    // empty tensors occupy no bytes and cannot overlap anything
    spans.retain(|(b, e, _)| b < e);
    spans.sort();
    for pair in spans.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(WeightsError::Overlap {
                first: pair[0].2.clone(),
                second: pair[1].2.clone(),
            });
        }
    }
    Ok(map)
}

pub fn to_bytes(map: &TensorMap) -> Vec<u8> {
    let mut header = serde_json::Map::new();
    if !map.metadata().is_empty() {
        header.insert(
            METADATA_KEY.into(),
            serde_json::to_value(map.metadata()).expect("string map serializes"),
        );
    }
    let mut offset = 0u64;
    for (name, rec) in map.iter() {
        let end = offset + rec.data.len() as u64;
        let entry = HeaderEntry {
            dtype: rec.dtype,
            shape: rec.shape.clone(),
            data_offsets: [offset, end],
        };
        header.insert(name.to_string(), serde_json::to_value(entry).expect("entry serializes"));
        offset = end;
    }
    let header = serde_json::to_string(&header).expect("header serializes");

    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, rec) in map.iter() {
        out.extend_from_slice(&rec.data);
    }
    out
}

pub fn load_tensor_map(path: impl AsRef<Path>) -> Result<TensorMap, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn save_tensor_map(map: &TensorMap, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(map)).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_header(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = (header.len() as u64).to_le_bytes().to_vec();
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn single_tensor() {
        let mut m = TensorMap::new();
        let vals: Vec<f32> = (0..6).map(|i| i as f32).collect();
        m.insert("w", TensorRecord::from_f32(vec![2, 3], &vals).unwrap()).unwrap();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        let w = back.get("w").unwrap();
        assert_eq!(w.num_elements(), 6);
        assert_eq!(w.to_f32().unwrap(), vals);
        assert_eq!(back, m);
    }

    #[test]
    fn empty_map_is_valid() {
        let bytes = to_bytes(&TensorMap::new());
        assert_eq!(&bytes[8..], b"{}");
        assert!(from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn deterministic_and_contiguous() {
        let mut m = TensorMap::new();
        m.insert("b", TensorRecord::from_f32(vec![3], &[1.0, 2.0, 3.0]).unwrap()).unwrap();
        m.insert("a", TensorRecord::from_f32(vec![2], &[4.0, 5.0]).unwrap()).unwrap();
        m.metadata_mut().insert("format".into(), "pt".into());
        let one = to_bytes(&m);
        assert_eq!(one, to_bytes(&m.clone()));
        let len = u64::from_le_bytes(one[..8].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&one[8..8 + len]).unwrap();
        assert_eq!(
            header,
            r#"{"__metadata__":{"format":"pt"},"a":{"data_offsets":[0,8],"dtype":"F32","shape":[2]},"b":{"data_offsets":[8,20],"dtype":"F32","shape":[3]}}"#
        );
        assert_eq!(from_bytes(&one).unwrap(), m);
    }

    #[test]
    fn truncated_payload() {
        let bytes = with_header(r#"{"w":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}}"#, &[0u8; 4]);
        assert!(matches!(from_bytes(&bytes), Err(WeightsError::TruncatedPayload { .. })));
    }

    #[test]
    fn overlapping_offsets() {
        let header = r#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#;
        let bytes = with_header(header, &[0u8; 12]);
        assert!(matches!(from_bytes(&bytes), Err(WeightsError::Overlap { .. })));
    }

    #[test]
    fn duplicate_names() {
        let header = r#"{"a":{"dtype":"U8","shape":[1],"data_offsets":[0,1]},"a":{"dtype":"U8","shape":[1],"data_offsets":[1,2]}}"#;
        let bytes = with_header(header, &[0u8; 2]);
        assert!(matches!(from_bytes(&bytes), Err(WeightsError::DuplicateName(n)) if n == "a"));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(from_bytes(&[1, 2, 3]), Err(WeightsError::MalformedHeader(_))));
        let mut huge = u64::MAX.to_le_bytes().to_vec();
        huge.extend_from_slice(b"{}");
        assert!(matches!(from_bytes(&huge), Err(WeightsError::MalformedHeader(_))));
        let bad_json = with_header("{nope", &[]);
        assert!(matches!(from_bytes(&bad_json), Err(WeightsError::MalformedHeader(_))));
        let bad_dtype = with_header(r#"{"a":{"dtype":"F8","shape":[1],"data_offsets":[0,1]}}"#, &[0]);
        assert!(matches!(from_bytes(&bad_dtype), Err(WeightsError::MalformedHeader(_))));
        let size = with_header(r#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#, &[0; 8]);
        assert!(matches!(from_bytes(&size), Err(WeightsError::SizeMismatch { .. })));
    }

    #[test]
    fn accepts_space_padded_header() {
        let header = r#"{"a":{"dtype":"U8","shape":[2],"data_offsets":[0,2]}}    "#;
        let m = from_bytes(&with_header(header, &[7, 9])).unwrap();
        assert_eq!(m.get("a").unwrap().bytes(), &[7, 9]);
    }
}
