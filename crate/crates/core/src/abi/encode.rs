use super::{selector, AbiError, AbiType, FunctionKind, FunctionSpec, Value};
use crate::evm::Word;

fn word(v: Word) -> [u8; 32] {
    v.to_big_endian()
}

fn pad_right(data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    out.resize(data.len().div_ceil(32) * 32, 0);
    out
}

/// Head/tail encoding of a sequence of values.
fn encode_seq(items: &[(&AbiType, &Value)]) -> Vec<u8> {
    let encoded: Vec<(bool, Vec<u8>)> = items
        .iter()
        .map(|(ty, v)| (ty.is_dynamic(), encode_one(ty, v)))
        .collect();
    let head_len: usize = encoded
        .iter()
        .map(|(dynamic, e)| if *dynamic { 32 } else { e.len() })
        .sum();
    let mut head = Vec::with_capacity(head_len);
    let mut tail = Vec::new();
    for (dynamic, e) in encoded {
        if dynamic {
            head.extend_from_slice(&word(Word::from(head_len + tail.len())));
            tail.extend_from_slice(&e);
        } else {
            head.extend_from_slice(&e);
        }
    }
    head.extend_from_slice(&tail);
    head
}

fn encode_one(ty: &AbiType, v: &Value) -> Vec<u8> {
    match (ty, v) {
        (_, Value::Uint(w)) | (_, Value::Int(w)) => word(*w).to_vec(),
        (_, Value::Address(a)) => word(a.to_word()).to_vec(),
        (_, Value::Bool(b)) => word(Word::from(*b as u8)).to_vec(),
        (_, Value::FixedBytes(b)) => pad_right(b),
        (_, Value::Bytes(b)) => len_prefixed(b),
        (_, Value::String(s)) => len_prefixed(s.as_bytes()),
        (AbiType::FixedArray(elem, _), Value::Array(items)) => {
            encode_seq(&items.iter().map(|v| (elem.as_ref(), v)).collect::<Vec<_>>())
        }
        (AbiType::DynArray(elem), Value::Array(items)) => {
            let mut out = word(Word::from(items.len())).to_vec();
            out.extend(encode_seq(&items.iter().map(|v| (elem.as_ref(), v)).collect::<Vec<_>>()));
            out
        }
        (AbiType::Tuple(tys), Value::Tuple(items)) => {
            encode_seq(&tys.iter().zip(items).collect::<Vec<_>>())
        }
        _ => unreachable!("values are checked against their types before encoding"),
    }
}

fn len_prefixed(data: &[u8]) -> Vec<u8> {
    let mut out = word(Word::from(data.len())).to_vec();
    out.extend(pad_right(data));
    out
}

fn check(spec: &FunctionSpec, args: &[Value]) -> Result<(), AbiError> {
    if args.len() != spec.inputs.len() {
        return Err(AbiError::Arity {
            function: spec.to_string(),
            expected: spec.inputs.len(),
            got: args.len(),
        });
    }
    for (index, (p, v)) in spec.inputs.iter().zip(args).enumerate() {
        if !v.fits(&p.ty) {
            return Err(AbiError::TypeMismatch {
                function: spec.to_string(),
                index,
                expected: p.ty.to_string(),
            });
        }
    }
    Ok(())
}

/// Argument encoding without the selector.
pub fn encode_args(spec: &FunctionSpec, args: &[Value]) -> Result<Vec<u8>, AbiError> {
    check(spec, args)?;
    Ok(encode_seq(&spec.inputs.iter().map(|p| &p.ty).zip(args).collect::<Vec<_>>()))
}

/// Selector followed by the encoded arguments; fallback entries encode to empty calldata.
pub fn encode_call(spec: &FunctionSpec, args: &[Value]) -> Result<Vec<u8>, AbiError> {
    if spec.kind == FunctionKind::Fallback {
        check(spec, args)?;
        return Ok(Vec::new());
    }
    let mut out = selector(spec).to_vec();
    out.extend(encode_args(spec, args)?);
    Ok(out)
}
