//! 256-bit word semantics: signed views, shifts, modular arithmetic.

use primitive_types::{U256, U512};
use sha3::{Digest, Keccak256};

pub fn keccak256(data: &[u8]) -> [u8; 32] {
    Keccak256::digest(data).into()
}

pub fn bool_word(b: bool) -> U256 {
    if b {
        U256::one()
    } else {
        U256::zero()
    }
}

pub fn is_negative(v: U256) -> bool {
    v.bit(255)
}

/// Two's-complement negation.
pub fn neg(v: U256) -> U256 {
    (!v).overflowing_add(U256::one()).0
}

fn abs(v: U256) -> U256 {
    if is_negative(v) {
        neg(v)
    } else {
        v
    }
}

pub fn sdiv(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::zero();
    }
    let q = abs(a) / abs(b);
    if is_negative(a) != is_negative(b) {
        neg(q)
    } else {
        q
    }
}

/// Signed remainder; the result takes the sign of the dividend.
pub fn smod(a: U256, b: U256) -> U256 {
    if b.is_zero() {
        return U256::zero();
    }
    let r = abs(a) % abs(b);
    if is_negative(a) {
        neg(r)
    } else {
        r
    }
}

pub fn slt(a: U256, b: U256) -> bool {
    match (is_negative(a), is_negative(b)) {
        (true, false) => true,
        (false, true) => false,
        _ => a < b,
    }
}

pub fn addmod(a: U256, b: U256, m: U256) -> U256 {
    if m.is_zero() {
        return U256::zero();
    }
    let sum = U512::from(a) + U512::from(b);
    U256::try_from(sum % U512::from(m)).expect("remainder below modulus")
}

pub fn mulmod(a: U256, b: U256, m: U256) -> U256 {
    if m.is_zero() {
        return U256::zero();
    }
    let prod = a.full_mul(b);
    U256::try_from(prod % U512::from(m)).expect("remainder below modulus")
}

pub fn exp(base: U256, exponent: U256) -> U256 {
    base.overflowing_pow(exponent).0
}

/// Sign-extends `v` from byte index `byte_idx` (0 = least significant byte).
pub fn signextend(byte_idx: U256, v: U256) -> U256 {
    if byte_idx >= U256::from(31) {
        return v;
    }
    let bit = byte_idx.low_u64() as usize * 8 + 7;
    let mask = (U256::one() << bit) - 1;
    if v.bit(bit) {
        v | !mask
    } else {
        v & mask
    }
}

/// `BYTE`: the `i`-th byte counting from the most significant end.
pub fn byte(i: U256, v: U256) -> U256 {
    if i >= U256::from(32) {
        return U256::zero();
    }
    U256::from(v.byte(31 - i.low_u64() as usize))
}

pub fn shl(shift: U256, v: U256) -> U256 {
    if shift >= U256::from(256) {
        U256::zero()
    } else {
        v << shift.low_u64() as usize
    }
}

pub fn shr(shift: U256, v: U256) -> U256 {
    if shift >= U256::from(256) {
        U256::zero()
    } else {
        v >> shift.low_u64() as usize
    }
}

/// Arithmetic right shift.
pub fn sar(shift: U256, v: U256) -> U256 {
    let negative = is_negative(v);
    if shift >= U256::from(256) {
        return if negative { U256::max_value() } else { U256::zero() };
    }
    let s = shift.low_u64() as usize;
    if s == 0 {
        return v;
    }
    let shifted = v >> s;
    if negative {
        shifted | !(U256::max_value() >> s)
    } else {
        shifted
    }
}

/// Saturating conversion for offsets and sizes.
pub fn to_u64_sat(v: U256) -> u64 {
    if v > U256::from(u64::MAX) {
        u64::MAX
    } else {
        v.low_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minus(n: u64) -> U256 {
        neg(U256::from(n))
    }

    #[test]
    fn signed_division() {
        assert_eq!(sdiv(minus(10), U256::from(3)), minus(3));
        assert_eq!(sdiv(U256::from(10), minus(3)), minus(3));
        assert_eq!(sdiv(minus(10), minus(3)), U256::from(3));
        assert_eq!(sdiv(U256::from(1), U256::zero()), U256::zero());
        assert_eq!(smod(minus(10), U256::from(3)), minus(1));
        assert_eq!(smod(U256::from(10), minus(3)), U256::from(1));
    }

    #[test]
    fn signed_compare() {
        assert!(slt(minus(1), U256::zero()));
        assert!(!slt(U256::zero(), minus(1)));
        assert!(slt(minus(5), minus(2)));
    }

    #[test]
    fn modular_ops_use_wide_intermediates() {
        let max = U256::max_value();
        assert_eq!(addmod(max, U256::from(2), U256::from(10)), U256::from(7));
        // (2^256-1)^2 mod 7: 2^256 ≡ 2 (mod 7) so (2-1)^2 = 1
        assert_eq!(mulmod(max, max, U256::from(7)), U256::from(1));
        assert_eq!(mulmod(max, max, U256::zero()), U256::zero());
    }

    #[test]
    fn sign_extension() {
        assert_eq!(signextend(U256::zero(), U256::from(0xff)), U256::max_value());
        assert_eq!(signextend(U256::zero(), U256::from(0x7f)), U256::from(0x7f));
        assert_eq!(signextend(U256::from(1), U256::from(0x1_80ff)), U256::from(0x80ff) | !U256::from(0xffff));
        assert_eq!(signextend(U256::from(40), U256::from(0xff)), U256::from(0xff));
    }

    #[test]
    fn shifts() {
        assert_eq!(shl(U256::from(4), U256::one()), U256::from(16));
        assert_eq!(shl(U256::from(256), U256::one()), U256::zero());
        assert_eq!(shr(U256::from(4), U256::from(16)), U256::one());
        assert_eq!(sar(U256::from(4), minus(16)), minus(1));
        assert_eq!(sar(U256::from(300), minus(16)), U256::max_value());
        assert_eq!(sar(U256::from(300), U256::from(16)), U256::zero());
    }

    #[test]
    fn byte_indexing() {
        let v = U256::from(0x1234);
        assert_eq!(byte(U256::from(31), v), U256::from(0x34));
        assert_eq!(byte(U256::from(30), v), U256::from(0x12));
        assert_eq!(byte(U256::from(32), v), U256::zero());
    }

    #[test]
    fn keccak_empty() {
        assert_eq!(
            hex::encode(keccak256(b"")),
            "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        );
    }
}
