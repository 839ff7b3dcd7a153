use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use super::AbiType;
use crate::evm::word::{is_negative, neg, signextend};
use crate::evm::{Address, Word, AGENT_ADDRESS};

/// Lengths favoured for dynamic values.
const SMALL_LENGTHS: [usize; 6] = [0, 1, 2, 4, 8, 32];
/// Nested dynamic arrays stay short so encodings do not explode.
const NESTED_LENGTHS: [usize; 4] = [0, 1, 2, 4];
const MAX_RANDOM_LEN: usize = 64;
const MAX_BYTES_LEN: usize = 256;
pub const POOL_PROBABILITY: f64 = 0.5;

/// A payload for some [`AbiType`]. Signed integers are kept sign-extended to 256 bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Uint(Word),
    Int(Word),
    Address(Address),
    Bool(bool),
    FixedBytes(Vec<u8>),
    Bytes(Vec<u8>),
    String(String),
    Array(Vec<Value>),
    Tuple(Vec<Value>),
}

fn uint_max(bits: u16) -> Word {
    if bits >= 256 {
        Word::max_value()
    } else {
        (Word::one() << bits as usize) - 1
    }
}

fn int_bounds(bits: u16) -> (Word, Word) {
    let max = uint_max(bits - 1);
    (neg(max + 1), max)
}

/// Maps a signed value onto `[0, 2^bits)` preserving order.
fn to_offset(v: Word, bits: u16) -> Word {
    let (min, _) = int_bounds(bits);
    v.overflowing_sub(min).0 & uint_max(bits)
}

fn from_offset(u: Word, bits: u16) -> Word {
    let (min, _) = int_bounds(bits);
    u.overflowing_add(min).0
}

fn sign_extend_bits(v: Word, bits: u16) -> Word {
    signextend(Word::from(bits / 8 - 1), v)
}

impl Value {
    pub fn fits(&self, ty: &AbiType) -> bool {
        match (ty, self) {
            (AbiType::Uint(b), Value::Uint(v)) => *v <= uint_max(*b),
            (AbiType::Int(b), Value::Int(v)) => sign_extend_bits(*v, *b) == *v,
            (AbiType::Address, Value::Address(_)) | (AbiType::Bool, Value::Bool(_)) => true,
            (AbiType::FixedBytes(n), Value::FixedBytes(b)) => b.len() == *n as usize,
            (AbiType::Bytes, Value::Bytes(_)) | (AbiType::String, Value::String(_)) => true,
            (AbiType::FixedArray(elem, n), Value::Array(items)) => {
                items.len() == *n && items.iter().all(|v| v.fits(elem))
            }
            (AbiType::DynArray(elem), Value::Array(items)) => items.iter().all(|v| v.fits(elem)),
            (AbiType::Tuple(tys), Value::Tuple(items)) => {
                tys.len() == items.len() && items.iter().zip(tys).all(|(v, t)| v.fits(t))
            }
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, items: &[Value], open: &str, close: &str| {
            f.write_str(open)?;
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str(close)
        };
        match self {
            Value::Uint(v) => write!(f, "{v}"),
            Value::Int(v) if is_negative(*v) => write!(f, "-{}", neg(*v)),
            Value::Int(v) => write!(f, "{v}"),
            Value::Address(a) => write!(f, "{a}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::FixedBytes(b) | Value::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
            Value::String(s) => write!(f, "{s:?}"),
            Value::Array(items) => list(f, items, "[", "]"),
            Value::Tuple(items) => list(f, items, "(", ")"),
        }
    }
}

/// Interesting constants reused during generation and mutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValuePools {
    pub addresses: Vec<Address>,
    pub magic_words: Vec<Word>,
}

impl ValuePools {
    pub fn new(target: Address, sender: Address) -> Self {
        let mut addresses = Vec::new();
        for a in [target, AGENT_ADDRESS, sender, Address::ZERO] {
            if !addresses.contains(&a) {
                addresses.push(a);
            }
        }
        let mut magic_words = vec![Word::zero(), Word::one(), Word::from(2)];
        for n in [8usize, 16, 32, 64, 128, 255] {
            let p = Word::one() << n;
            magic_words.push(p - 1);
            magic_words.push(p + 1);
        }
        magic_words.push(Word::max_value());
        ValuePools {
            addresses,
            magic_words,
        }
    }
}

fn random_word<R: Rng + ?Sized>(rng: &mut R) -> Word {
    let mut b = [0u8; 32];
    rng.fill(&mut b);
    Word::from_big_endian(&b)
}

fn random_address<R: Rng + ?Sized>(rng: &mut R) -> Address {
    let mut b = [0u8; 20];
    rng.fill(&mut b);
    Address(b)
}

fn random_len<R: Rng + ?Sized>(rng: &mut R, nested: bool) -> usize {
    if nested {
        *NESTED_LENGTHS.choose(rng).expect("non-empty")
    } else if rng.gen_bool(0.5) {
        *SMALL_LENGTHS.choose(rng).expect("non-empty")
    } else {
        rng.gen_range(0..=MAX_RANDOM_LEN)
    }
}

fn random_ascii<R: Rng + ?Sized>(rng: &mut R) -> char {
    rng.gen_range(0x20u8..0x7f) as char
}

/// Magic words that fit an unsigned type.
fn pool_uints(pools: &ValuePools, bits: u16) -> Vec<Word> {
    let max = uint_max(bits);
    pools.magic_words.iter().copied().filter(|w| *w <= max).collect()
}

/// Magic words projected into a signed type (truncate then sign-extend), plus their negations.
fn pool_ints(pools: &ValuePools, bits: u16) -> Vec<Word> {
    let mut out = Vec::new();
    for &w in &pools.magic_words {
        for v in [w, neg(w)] {
            let p = sign_extend_bits(v & uint_max(bits), bits);
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

pub fn generate_value<R: Rng + ?Sized>(ty: &AbiType, rng: &mut R, pools: &ValuePools) -> Value {
    generate_at(ty, rng, pools, 0)
}

fn generate_at<R: Rng + ?Sized>(ty: &AbiType, rng: &mut R, pools: &ValuePools, level: usize) -> Value {
    let from_pool = rng.gen_bool(POOL_PROBABILITY);
    match ty {
        AbiType::Uint(bits) => {
            let pool = pool_uints(pools, *bits);
            match pool.choose(rng) {
                Some(w) if from_pool => Value::Uint(*w),
                _ => Value::Uint(random_word(rng) & uint_max(*bits)),
            }
        }
        AbiType::Int(bits) => {
            let pool = pool_ints(pools, *bits);
            match pool.choose(rng) {
                Some(w) if from_pool => Value::Int(*w),
                _ => Value::Int(sign_extend_bits(random_word(rng) & uint_max(*bits), *bits)),
            }
        }
        AbiType::Address => match pools.addresses.choose(rng) {
            Some(a) if from_pool => Value::Address(*a),
            _ => Value::Address(random_address(rng)),
        },
        AbiType::Bool => Value::Bool(rng.gen()),
        AbiType::FixedBytes(n) => {
            let n = *n as usize;
            match pools.magic_words.choose(rng) {
                Some(w) if from_pool => Value::FixedBytes(w.to_big_endian()[32 - n..].to_vec()),
                _ => Value::FixedBytes((0..n).map(|_| rng.gen()).collect()),
            }
        }
        AbiType::Bytes => {
            let len = random_len(rng, level > 0);
            Value::Bytes((0..len).map(|_| rng.gen()).collect())
        }
        AbiType::String => {
            let len = random_len(rng, level > 0);
            Value::String((0..len).map(|_| random_ascii(rng)).collect())
        }
        AbiType::FixedArray(elem, n) => {
            Value::Array((0..*n).map(|_| generate_at(elem, rng, pools, level + 1)).collect())
        }
        AbiType::DynArray(elem) => {
            let len = random_len(rng, level > 0);
            Value::Array((0..len).map(|_| generate_at(elem, rng, pools, level + 1)).collect())
        }
        AbiType::Tuple(items) => {
            Value::Tuple(items.iter().map(|t| generate_at(t, rng, pools, level + 1)).collect())
        }
    }
}

/// Small arithmetic step, clamped to `[0, max]`.
fn step_clamped(u: Word, max: Word, delta: u64, up: bool) -> Word {
    let d = Word::from(delta);
    if up {
        if max - u < d {
            max
        } else {
            u + d
        }
    } else if u < d {
        Word::zero()
    } else {
        u - d
    }
}

/// Applies one type-preserving mutation operator.
pub fn mutate_value<R: Rng + ?Sized>(ty: &AbiType, v: &Value, rng: &mut R, pools: &ValuePools) -> Value {
    mutate_at(ty, v, rng, pools, 0)
}

fn mutate_at<R: Rng + ?Sized>(ty: &AbiType, v: &Value, rng: &mut R, pools: &ValuePools, level: usize) -> Value {
    match (ty, v) {
        (AbiType::Uint(bits), Value::Uint(u)) => {
            let max = uint_max(*bits);
            Value::Uint(match rng.gen_range(0..6) {
                0 => step_clamped(*u, max, 1, true),
                1 => step_clamped(*u, max, 1, false),
                2 => step_clamped(*u, max, 16, true),
                3 => step_clamped(*u, max, 16, false),
                4 => *u ^ (Word::one() << rng.gen_range(0..*bits as usize)),
                _ => *pool_uints(pools, *bits).choose(rng).unwrap_or(u),
            })
        }
        (AbiType::Int(bits), Value::Int(i)) => {
            let max = uint_max(*bits);
            let off = to_offset(*i, *bits);
            Value::Int(match rng.gen_range(0..7) {
                0 => from_offset(step_clamped(off, max, 1, true), *bits),
                1 => from_offset(step_clamped(off, max, 1, false), *bits),
                2 => from_offset(step_clamped(off, max, 16, true), *bits),
                3 => from_offset(step_clamped(off, max, 16, false), *bits),
                4 => sign_extend_bits(*i ^ (Word::one() << rng.gen_range(0..*bits as usize)), *bits),
                5 => {
                    // -min does not fit; clamp to max
                    let (min, top) = int_bounds(*bits);
                    if *i == min {
                        top
                    } else {
                        neg(*i)
                    }
                }
                _ => *pool_ints(pools, *bits).choose(rng).unwrap_or(i),
            })
        }
        (AbiType::Address, Value::Address(_)) => {
            if rng.gen_bool(POOL_PROBABILITY) && !pools.addresses.is_empty() {
                Value::Address(*pools.addresses.choose(rng).expect("non-empty"))
            } else {
                Value::Address(random_address(rng))
            }
        }
        (AbiType::Bool, Value::Bool(b)) => Value::Bool(!b),
        (AbiType::FixedBytes(_), Value::FixedBytes(b)) => {
            let mut b = b.clone();
            let i = rng.gen_range(0..b.len());
            b[i] ^= rng.gen_range(1..=255u8);
            Value::FixedBytes(b)
        }
        (AbiType::Bytes, Value::Bytes(b)) => Value::Bytes(mutate_seq(b, rng, |r| r.gen())),
        (AbiType::String, Value::String(s)) => {
            let chars: Vec<char> = s.chars().collect();
            Value::String(mutate_seq(&chars, rng, random_ascii).into_iter().collect())
        }
        (AbiType::FixedArray(elem, _), Value::Array(items)) => {
            let mut items = items.clone();
            let i = rng.gen_range(0..items.len());
            items[i] = mutate_at(elem, &items[i], rng, pools, level + 1);
            Value::Array(items)
        }
        (AbiType::DynArray(elem), Value::Array(items)) => {
            let mut items = items.clone();
            let cap = if level > 0 { NESTED_LENGTHS[3] } else { MAX_RANDOM_LEN };
            match rng.gen_range(0..3) {
                0 if items.len() < cap => items.push(generate_at(elem, rng, pools, level + 1)),
                1 if !items.is_empty() => {
                    items.pop();
                }
                _ if !items.is_empty() => {
                    let i = rng.gen_range(0..items.len());
                    items[i] = mutate_at(elem, &items[i], rng, pools, level + 1);
                }
                _ => items.push(generate_at(elem, rng, pools, level + 1)),
            }
            Value::Array(items)
        }
        (AbiType::Tuple(tys), Value::Tuple(items)) if !items.is_empty() => {
            let mut items = items.clone();
            let i = rng.gen_range(0..items.len());
            items[i] = mutate_at(&tys[i], &items[i], rng, pools, level + 1);
            Value::Tuple(items)
        }
        // Ill-typed input or empty tuple: regenerate.
        _ => generate_at(ty, rng, pools, level),
    }
}

/// Flip, grow or shrink a sequence by one element.
fn mutate_seq<T: Clone, R: Rng + ?Sized>(seq: &[T], rng: &mut R, fresh: impl Fn(&mut R) -> T) -> Vec<T> {
    let mut out = seq.to_vec();
    let op = if out.is_empty() { 1 } else { rng.gen_range(0..3) };
    match op {
        0 => {
            let i = rng.gen_range(0..out.len());
            out[i] = fresh(rng);
        }
        1 if out.len() < MAX_BYTES_LEN => {
            let i = rng.gen_range(0..=out.len());
            out.insert(i, fresh(rng));
        }
        _ => {
            let i = rng.gen_range(0..out.len());
            out.remove(i);
        }
    }
    out
}
