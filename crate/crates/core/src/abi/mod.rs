//! Contract ABI: JSON parsing, selectors, calldata encoding and typed value fuzzing.

mod encode;
mod values;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value as Json;

use crate::evm::word::keccak256;

pub use encode::{encode_args, encode_call};
pub use values::{generate_value, mutate_value, Value, ValuePools};

/// Arrays and tuples may nest at most this deep.
pub const MAX_NESTING: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AbiError {
    #[error("ABI document is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("ABI document must be a JSON array")]
    NotAnArray,
    #[error("ABI entry {index} ({name}): {reason}")]
    Entry { index: usize, name: String, reason: String },
    #[error("bad type `{0}`")]
    BadType(String),
    #[error("type `{0}` nests deeper than {MAX_NESTING}")]
    TooDeep(String),
    #[error("{function} expects {expected} arguments, got {got}")]
    Arity { function: String, expected: usize, got: usize },
    #[error("argument {index} of {function} does not fit `{expected}`")]
    TypeMismatch { function: String, index: usize, expected: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AbiType {
    Uint(u16),
    Int(u16),
    Address,
    Bool,
    FixedBytes(u8),
    Bytes,
    String,
    FixedArray(Box<AbiType>, usize),
    DynArray(Box<AbiType>),
    Tuple(Vec<AbiType>),
}

impl AbiType {
    pub fn is_dynamic(&self) -> bool {
        match self {
            AbiType::Bytes | AbiType::String | AbiType::DynArray(_) => true,
            AbiType::FixedArray(elem, _) => elem.is_dynamic(),
            AbiType::Tuple(items) => items.iter().any(AbiType::is_dynamic),
            _ => false,
        }
    }

    /// Levels of array/tuple nesting (0 for scalars).
    pub fn nesting(&self) -> usize {
        match self {
            AbiType::FixedArray(elem, _) | AbiType::DynArray(elem) => 1 + elem.nesting(),
            AbiType::Tuple(items) => 1 + items.iter().map(AbiType::nesting).max().unwrap_or(0),
            _ => 0,
        }
    }

    fn validate(&self) -> Result<(), AbiError> {
        let ok = match self {
            AbiType::Uint(b) | AbiType::Int(b) => *b >= 8 && *b <= 256 && b % 8 == 0,
            AbiType::FixedBytes(n) => (1..=32).contains(n),
            AbiType::FixedArray(elem, n) => *n > 0 && elem.validate().is_ok(),
            AbiType::DynArray(elem) => elem.validate().is_ok(),
            AbiType::Tuple(items) => items.iter().all(|t| t.validate().is_ok()),
            _ => true,
        };
        if !ok {
            return Err(AbiError::BadType(self.to_string()));
        }
        if self.nesting() > MAX_NESTING {
            return Err(AbiError::TooDeep(self.to_string()));
        }
        Ok(())
    }
}

impl fmt::Display for AbiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AbiType::Uint(b) => write!(f, "uint{b}"),
            AbiType::Int(b) => write!(f, "int{b}"),
            AbiType::Address => f.write_str("address"),
            AbiType::Bool => f.write_str("bool"),
            AbiType::FixedBytes(n) => write!(f, "bytes{n}"),
            AbiType::Bytes => f.write_str("bytes"),
            AbiType::String => f.write_str("string"),
            AbiType::FixedArray(elem, n) => write!(f, "{elem}[{n}]"),
            AbiType::DynArray(elem) => write!(f, "{elem}[]"),
            AbiType::Tuple(items) => {
                f.write_str("(")?;
                for (i, t) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for AbiType {
    type Err = AbiError;

    /// Parses canonical type names, including `(a,b)[2]` tuple syntax.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AbiError::BadType(s.to_string());
        let s = s.trim();
        // Peel array suffixes from the right.
        if let Some(stripped) = s.strip_suffix(']') {
            let open = stripped.rfind('[').ok_or_else(bad)?;
            let inner: AbiType = stripped[..open].parse()?;
            let size = &stripped[open + 1..];
            let ty = if size.is_empty() {
                AbiType::DynArray(Box::new(inner))
            } else {
                AbiType::FixedArray(Box::new(inner), size.parse().map_err(|_| bad())?)
            };
            ty.validate()?;
            return Ok(ty);
        }
        if let Some(body) = s.strip_prefix('(').and_then(|r| r.strip_suffix(')')) {
            let items = split_top_level(body)
                .into_iter()
                .filter(|p| !p.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<_>, _>>()?;
            let ty = AbiType::Tuple(items);
            ty.validate()?;
            return Ok(ty);
        }
        let ty = match s {
            "address" => AbiType::Address,
            "bool" => AbiType::Bool,
            "bytes" => AbiType::Bytes,
            "string" => AbiType::String,
            "uint" => AbiType::Uint(256),
            "int" => AbiType::Int(256),
            _ => {
                if let Some(b) = s.strip_prefix("uint") {
                    AbiType::Uint(b.parse().map_err(|_| bad())?)
                } else if let Some(b) = s.strip_prefix("int") {
                    AbiType::Int(b.parse().map_err(|_| bad())?)
                } else if let Some(n) = s.strip_prefix("bytes") {
                    AbiType::FixedBytes(n.parse().map_err(|_| bad())?)
                } else {
                    return Err(bad());
                }
            }
        };
        ty.validate()?;
        Ok(ty)
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

impl Serialize for AbiType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AbiType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mutability {
    Pure,
    View,
    NonPayable,
    Payable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FunctionKind {
    Function,
    /// Fallback or receive entry: called with empty calldata.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: AbiType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub name: String,
    pub inputs: Vec<Param>,
    pub mutability: Mutability,
    pub kind: FunctionKind,
}

impl FunctionSpec {
    pub fn new(name: &str, inputs: &[AbiType], mutability: Mutability) -> Self {
        FunctionSpec {
            name: name.to_string(),
            inputs: inputs
                .iter()
                .map(|ty| Param {
                    name: String::new(),
                    ty: ty.clone(),
                })
                .collect(),
            mutability,
            kind: FunctionKind::Function,
        }
    }

    pub fn fallback(payable: bool) -> Self {
        FunctionSpec {
            name: String::new(),
            inputs: Vec::new(),
            mutability: if payable { Mutability::Payable } else { Mutability::NonPayable },
            kind: FunctionKind::Fallback,
        }
    }

    pub fn signature(&self) -> String {
        let types: Vec<String> = self.inputs.iter().map(|p| p.ty.to_string()).collect();
        format!("{}({})", self.name, types.join(","))
    }

    pub fn is_payable(&self) -> bool {
        self.mutability == Mutability::Payable
    }

    /// State-changing entries worth fuzzing.
    pub fn is_fuzzable(&self) -> bool {
        !matches!(self.mutability, Mutability::Pure | Mutability::View)
    }

    pub fn types(&self) -> Vec<AbiType> {
        self.inputs.iter().map(|p| p.ty.clone()).collect()
    }
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FunctionKind::Fallback => f.write_str("fallback()"),
            FunctionKind::Function => f.write_str(&self.signature()),
        }
    }
}

pub fn selector(spec: &FunctionSpec) -> [u8; 4] {
    selector_of(&spec.signature())
}

pub fn selector_of(signature: &str) -> [u8; 4] {
    let h = keccak256(signature.as_bytes());
    [h[0], h[1], h[2], h[3]]
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Abi {
    pub functions: Vec<FunctionSpec>,
    pub constructor: Option<Vec<Param>>,
}

impl Abi {
    pub fn has_fallback(&self) -> bool {
        self.functions.iter().any(|f| f.kind == FunctionKind::Fallback)
    }
}

pub fn parse_abi(document: &str) -> Result<Abi, AbiError> {
    let json: Json = serde_json::from_str(document)?;
    let entries = json.as_array().ok_or(AbiError::NotAnArray)?;
    let mut abi = Abi::default();
    for (index, entry) in entries.iter().enumerate() {
        let name = entry.get("name").and_then(Json::as_str).unwrap_or("").to_string();
        let fail = |reason: String| AbiError::Entry {
            index,
            name: name.clone(),
            reason,
        };
        let kind = entry.get("type").and_then(Json::as_str).unwrap_or("function");
        match kind {
            "event" | "error" => continue,
            "constructor" => {
                abi.constructor = Some(parse_params(entry.get("inputs")).map_err(|e| fail(e.to_string()))?);
            }
            "fallback" | "receive" => {
                let m = mutability(entry).map_err(fail)?;
                abi.functions
                    .push(FunctionSpec::fallback(kind == "receive" || m == Mutability::Payable));
            }
            "function" => {
                if name.is_empty() {
                    return Err(fail("function without a name".into()));
                }
                let inputs = parse_params(entry.get("inputs")).map_err(|e| fail(e.to_string()))?;
                let mutability = mutability(entry).map_err(fail)?;
                abi.functions.push(FunctionSpec {
                    name: name.clone(),
                    inputs,
                    mutability,
                    kind: FunctionKind::Function,
                });
            }
            other => return Err(fail(format!("unknown entry type `{other}`"))),
        }
    }
    Ok(abi)
}

fn mutability(entry: &Json) -> Result<Mutability, String> {
    if let Some(m) = entry.get("stateMutability") {
        return match m.as_str() {
            Some("pure") => Ok(Mutability::Pure),
            Some("view") => Ok(Mutability::View),
            Some("nonpayable") => Ok(Mutability::NonPayable),
            Some("payable") => Ok(Mutability::Payable),
            _ => Err(format!("bad stateMutability {m}")),
        };
    }
    // Legacy documents carry boolean flags instead.
    let flag = |k: &str| entry.get(k).and_then(Json::as_bool).unwrap_or(false);
    Ok(if flag("payable") {
        Mutability::Payable
    } else if flag("constant") {
        Mutability::View
    } else {
        Mutability::NonPayable
    })
}

fn parse_params(inputs: Option<&Json>) -> Result<Vec<Param>, AbiError> {
    let Some(inputs) = inputs else {
        return Ok(Vec::new());
    };
    let arr = inputs
        .as_array()
        .ok_or_else(|| AbiError::BadType("inputs must be an array".into()))?;
    arr.iter()
        .map(|p| {
            Ok(Param {
                name: p.get("name").and_then(Json::as_str).unwrap_or("").to_string(),
                ty: param_type(p)?,
            })
        })
        .collect()
}

fn param_type(p: &Json) -> Result<AbiType, AbiError> {
    let raw = p
        .get("type")
        .and_then(Json::as_str)
        .ok_or_else(|| AbiError::BadType("parameter without type".into()))?;
    let Some(suffix) = raw.strip_prefix("tuple") else {
        return raw.parse();
    };
    let components = p
        .get("components")
        .and_then(Json::as_array)
        .ok_or_else(|| AbiError::BadType(format!("{raw} without components")))?;
    let items = components.iter().map(param_type).collect::<Result<Vec<_>, _>>()?;
    let inner = AbiType::Tuple(items).to_string();
    format!("{inner}{suffix}").parse()
}
