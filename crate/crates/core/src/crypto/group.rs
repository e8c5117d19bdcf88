//! Safe-prime groups and the order-`q` quadratic-residue subgroup of `Z_p^*`.
//!
//! Parameters are desk-scale (at most 63-bit `p`), so all arithmetic runs on
//! `u64` with `u128` intermediates.

use serde::{Deserialize, Serialize};

use super::CryptoError;

/// `(a * b) mod m` without overflow.
#[inline]
pub fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

/// Square-and-multiply modular exponentiation.
pub fn pow_mod(base: u64, mut exp: u64, m: u64) -> u64 {
    if m == 1 {
        return 0;
    }
    let mut result = 1u64;
    let mut b = base % m;
    while exp > 0 {
        if exp & 1 == 1 {
            result = mul_mod(result, b, m);
        }
        b = mul_mod(b, b, m);
        exp >>= 1;
    }
    result
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Public parameters of the puzzle group: `p = 2q + 1` with `g` generating
/// the quadratic residues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupParams {
    pub p: u64,
    pub q: u64,
    pub g: u64,
    pub bits: u32,
}

/// Which parameters [`derive_group`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupPreset {
    /// `p = 23, q = 11, g = 2`.
    Small,
    /// `p = 47, q = 23, g = 2`.
    Medium,
    /// Smallest safe prime with exactly this many bits, generator 4.
    Bits(u32),
    Custom {
        p: u64,
        q: u64,
        g: u64,
    },
}

pub fn derive_group(preset: GroupPreset) -> Result<GroupParams, CryptoError> {
    match preset {
        GroupPreset::Small => GroupParams::new(23, 11, 2),
        GroupPreset::Medium => GroupParams::new(47, 23, 2),
        GroupPreset::Bits(bits) => safe_prime_with_bits(bits),
        GroupPreset::Custom { p, q, g } => GroupParams::new(p, q, g),
    }
}

fn safe_prime_with_bits(bits: u32) -> Result<GroupParams, CryptoError> {
    if !(3..=63).contains(&bits) {
        return Err(CryptoError::UnsupportedBits(bits));
    }
    // p = 2q + 1 has `bits` bits exactly when q lies in [2^(bits-2), 2^(bits-1)).
    let lo = 1u64 << (bits - 2);
    let hi = 1u64 << (bits - 1);
    (lo..hi)
        .find(|&q| is_prime(q) && is_prime(2 * q + 1))
        .ok_or(CryptoError::UnsupportedBits(bits))
        .and_then(|q| GroupParams::new(2 * q + 1, q, 4))
}

impl GroupParams {
    /// Validates a candidate parameter set.
    pub fn new(p: u64, q: u64, g: u64) -> Result<Self, CryptoError> {
        if !is_prime(p) {
            return Err(CryptoError::NotPrime {
                which: "p",
                value: p,
            });
        }
        if !is_prime(q) {
            return Err(CryptoError::NotPrime {
                which: "q",
                value: q,
            });
        }
        if q.checked_mul(2).and_then(|x| x.checked_add(1)) != Some(p) {
            return Err(CryptoError::NotSafePrime { p, q });
        }
        if g == 0 || g >= p || g == 1 || pow_mod(g, q, p) != 1 {
            return Err(CryptoError::BadGenerator { g, p });
        }
        Ok(Self {
            p,
            q,
            g,
            bits: 64 - p.leading_zeros(),
        })
    }

    /// Membership in the order-`q` subgroup.
    pub fn in_subgroup(&self, h: u64) -> bool {
        h != 0 && h < self.p && pow_mod(h, self.q, self.p) == 1
    }

    /// `g^x mod p`.
    pub fn exp(&self, x: u64) -> u64 {
        pow_mod(self.g, x, self.p)
    }

    /// All subgroup elements in exponent order `g^0, g^1, ..., g^(q-1)`.
    /// Only sensible for tiny groups.
    pub fn elements(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.q).map(move |x| self.exp(x))
    }
}
