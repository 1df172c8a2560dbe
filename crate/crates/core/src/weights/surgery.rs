use crate::schema::{index_violations, SchemaMapping};

use super::{DType, TensorMap, TensorRecord, WeightsError};

/// Rebuilds a keypoint head for a new schema.
///
/// The weight tensor `[K_src, C, kh, kw]` becomes `[K_dst, C, kh, kw]`, where
/// output channel `t` is the element-wise mean of the source channels listed
/// in `mapping.entries[t]`. A bias `[K_src]`, when named, is rebuilt the same
/// way. Means are accumulated in `f64` and rounded once to `f32`, so a single
/// counterpart is copied bit for bit. Every other tensor passes through
/// untouched.
pub fn remap_head_weights(
    map: &TensorMap,
    weight_name: &str,
    bias_name: Option<&str>,
    mapping: &SchemaMapping,
) -> Result<TensorMap, WeightsError> {
    let weight = f32_tensor(map, weight_name)?;
    if weight.shape().len() != 4 {
        return Err(WeightsError::Shape {
            name: weight_name.into(),
            reason: format!("expected rank 4 [K, C, kh, kw], got {:?}", weight.shape()),
        });
    }
    let k_src = weight.shape()[0];
    let violations = index_violations(mapping, k_src);
    if !violations.is_empty() {
        let text: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(WeightsError::Mapping(text.join("; ")));
    }

    let mut out = map.clone();
    out.set(weight_name, remap_rows(weight, mapping)?);

    if let Some(bias_name) = bias_name {
        let bias = f32_tensor(map, bias_name)?;
        if bias.shape() != [k_src] {
            return Err(WeightsError::Shape {
                name: bias_name.into(),
                reason: format!("expected [{k_src}], got {:?}", bias.shape()),
            });
        }
        out.set(bias_name, remap_rows(bias, mapping)?);
    }
    Ok(out)
}

fn f32_tensor<'a>(map: &'a TensorMap, name: &str) -> Result<&'a TensorRecord, WeightsError> {
    let t = map
        .get(name)
        .ok_or_else(|| WeightsError::MissingTensor(name.into()))?;
    if t.dtype() != DType::F32 {
        return Err(WeightsError::DType {
            name: name.into(),
            dtype: t.dtype(),
        });
    }
    Ok(t)
}

/// Averages along the leading axis according to `mapping`.
fn remap_rows(t: &TensorRecord, mapping: &SchemaMapping) -> Result<TensorRecord, WeightsError> {
    let values = t.to_f32().expect("checked F32");
    let row_len: usize = t.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(mapping.target_len() * row_len);
    let mut acc = vec![-0.0f64; row_len];
    for srcs in &mapping.entries {
        // -0.0 is the exact additive identity, so signed zeros survive a copy
        acc.iter_mut().for_each(|a| *a = -0.0);
        for &s in srcs {
            let row = &values[s * row_len..(s + 1) * row_len];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += f64::from(v);
            }
        }
        let n = srcs.len() as f64;
        out.extend(acc.iter().map(|&a| (a / n) as f32));
    }
    let mut shape = t.shape().to_vec();
    shape[0] = mapping.target_len();
    TensorRecord::from_f32(shape, &out)
}
