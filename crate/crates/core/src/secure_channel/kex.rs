//! Ephemeral key agreement: X25519 for ECDHE, the 2048-bit MODP group of
//! RFC 3526 (generator 2) for DHE.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use num_bigint::{BigUint, RandBigInt};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use x25519_dalek::{PublicKey, StaticSecret};

use super::ChannelError;

pub const ECDHE_PUBLIC_LEN: usize = 32;
pub const DHE_PUBLIC_LEN: usize = 256;
/// Bits in a DHE private exponent.
pub const DHE_EXPONENT_BITS: u64 = 256;

const MODP_2048_HEX: &str = concat!(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1",
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD",
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245",
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED",
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D",
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F",
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D",
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B",
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9",
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510",
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
);

/// The 2048-bit MODP group prime.
pub fn modp_prime() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| BigUint::parse_bytes(MODP_2048_HEX.as_bytes(), 16).expect("valid hex"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KexMethod {
    Ecdhe,
    Dhe,
}

impl KexMethod {
    pub fn public_len(self) -> usize {
        match self {
            KexMethod::Ecdhe => ECDHE_PUBLIC_LEN,
            KexMethod::Dhe => DHE_PUBLIC_LEN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KexMethod::Ecdhe => "ecdhe",
            KexMethod::Dhe => "dhe",
        }
    }
}

impl fmt::Display for KexMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KexMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ecdhe" => Ok(KexMethod::Ecdhe),
            "dhe" => Ok(KexMethod::Dhe),
            other => Err(format!("unknown key exchange {other:?}")),
        }
    }
}

pub enum KexKeyPair {
    Ecdhe {
        secret: StaticSecret,
        public: PublicKey,
    },
    Dhe {
        exponent: BigUint,
        public: BigUint,
    },
}

impl fmt::Debug for KexKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KexKeyPair")
            .field("method", &self.method())
            .finish_non_exhaustive()
    }
}

impl KexKeyPair {
    pub fn method(&self) -> KexMethod {
        match self {
            KexKeyPair::Ecdhe { .. } => KexMethod::Ecdhe,
            KexKeyPair::Dhe { .. } => KexMethod::Dhe,
        }
    }

    /// Fixed-length public value: 32 bytes (ECDHE) or 256 bytes big-endian (DHE).
    pub fn public_bytes(&self) -> Vec<u8> {
        match self {
            KexKeyPair::Ecdhe { public, .. } => public.as_bytes().to_vec(),
            KexKeyPair::Dhe { public, .. } => to_fixed_be(public, DHE_PUBLIC_LEN),
        }
    }
}

fn to_fixed_be(n: &BigUint, len: usize) -> Vec<u8> {
    let raw = n.to_bytes_be();
    let mut out = vec![0u8; len - raw.len()];
    out.extend_from_slice(&raw);
    out
}

pub fn kex_generate(method: KexMethod, rng: &mut ChaCha20Rng) -> KexKeyPair {
    match method {
        KexMethod::Ecdhe => {
            let secret = StaticSecret::random_from_rng(&mut *rng);
            let public = PublicKey::from(&secret);
            KexKeyPair::Ecdhe { secret, public }
        }
        KexMethod::Dhe => {
            let p = modp_prime();
            let lo = BigUint::from(2u32);
            let hi = BigUint::from(1u32) << DHE_EXPONENT_BITS;
            let exponent = rng.gen_biguint_range(&lo, &hi);
            let public = BigUint::from(2u32).modpow(&exponent, p);
            KexKeyPair::Dhe { exponent, public }
        }
    }
}

/// Computes the shared secret from our key pair and the peer's public value.
///
/// Rejects wrong-length peer values, DHE values outside `(1, p - 1)`, and any
/// agreement that yields a degenerate (all-zero, 1 or `p - 1`) secret.
pub fn kex_agree(own: &KexKeyPair, peer_public: &[u8]) -> Result<Vec<u8>, ChannelError> {
    match own {
        KexKeyPair::Ecdhe { secret, .. } => {
            let bytes: [u8; ECDHE_PUBLIC_LEN] = peer_public
                .try_into()
                .map_err(|_| ChannelError::MalformedPublicKey)?;
            let shared = secret.diffie_hellman(&PublicKey::from(bytes));
            if !shared.was_contributory() {
                return Err(ChannelError::DegenerateSharedSecret);
            }
            Ok(shared.as_bytes().to_vec())
        }
        KexKeyPair::Dhe { exponent, .. } => {
            if peer_public.len() != DHE_PUBLIC_LEN {
                return Err(ChannelError::MalformedPublicKey);
            }
            let p = modp_prime();
            let one = BigUint::from(1u32);
            let p_minus_1 = p - &one;
            let y = BigUint::from_bytes_be(peer_public);
            if y <= one || y >= p_minus_1 {
                return Err(ChannelError::MalformedPublicKey);
            }
            let shared = y.modpow(exponent, p);
            if shared <= one || shared == p_minus_1 {
                return Err(ChannelError::DegenerateSharedSecret);
            }
            Ok(to_fixed_be(&shared, DHE_PUBLIC_LEN))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// Miller-Rabin with fixed small-prime bases; independent of the code under test.
    fn probably_prime(n: &BigUint) -> bool {
        let one = BigUint::from(1u32);
        let two = BigUint::from(2u32);
        let n_minus_1 = n - &one;
        let mut d = n_minus_1.clone();
        let mut s = 0;
        while (&d % &two) == BigUint::from(0u32) {
            d /= &two;
            s += 1;
        }
        'bases: for a in [2u32, 3, 5, 7, 11, 13, 17, 19] {
            let mut x = BigUint::from(a).modpow(&d, n);
            if x == one || x == n_minus_1 {
                continue;
            }
            for _ in 1..s {
                x = x.modpow(&two, n);
                if x == n_minus_1 {
                    continue 'bases;
                }
            }
            return false;
        }
        true
    }

    #[test]
    fn modp_group_is_a_2048_bit_safe_prime() {
        let p = modp_prime();
        assert_eq!(p.bits(), 2048);
        assert!(probably_prime(p));
        let q = (p - BigUint::from(1u32)) >> 1;
        assert!(probably_prime(&q));
    }

    #[test]
    fn agreement_commutes_for_both_methods() {
        for (i, method) in [KexMethod::Ecdhe, KexMethod::Dhe].into_iter().enumerate() {
            let mut r = rng(i as u64);
            let a = kex_generate(method, &mut r);
            let b = kex_generate(method, &mut r);
            assert_eq!(a.public_bytes().len(), method.public_len());
            let ab = kex_agree(&a, &b.public_bytes()).unwrap();
            let ba = kex_agree(&b, &a.public_bytes()).unwrap();
            assert_eq!(ab, ba);
        }
    }

    #[test]
    fn successive_keys_differ() {
        let mut r = rng(9);
        for method in [KexMethod::Ecdhe, KexMethod::Dhe] {
            let a = kex_generate(method, &mut r);
            let b = kex_generate(method, &mut r);
            assert_ne!(a.public_bytes(), b.public_bytes());
        }
    }

    #[test]
    fn dhe_public_is_in_group_range() {
        let mut r = rng(3);
        let KexKeyPair::Dhe { public, .. } = kex_generate(KexMethod::Dhe, &mut r) else {
            unreachable!()
        };
        assert!(public > BigUint::from(1u32));
        assert!(&public < modp_prime());
    }

    #[test]
    fn wrong_length_public_is_rejected() {
        let mut r = rng(4);
        let e = kex_generate(KexMethod::Ecdhe, &mut r);
        assert_eq!(kex_agree(&e, &[1u8; 31]), Err(ChannelError::MalformedPublicKey));
        let d = kex_generate(KexMethod::Dhe, &mut r);
        assert_eq!(kex_agree(&d, &[1u8; 32]), Err(ChannelError::MalformedPublicKey));
    }

    #[test]
    fn degenerate_peer_values_are_rejected() {
        let mut r = rng(5);
        let e = kex_generate(KexMethod::Ecdhe, &mut r);
        // The identity point yields an all-zero shared secret.
        assert_eq!(
            kex_agree(&e, &[0u8; 32]),
            Err(ChannelError::DegenerateSharedSecret)
        );

        let d = kex_generate(KexMethod::Dhe, &mut r);
        let p_minus_1 = to_fixed_be(&(modp_prime() - BigUint::from(1u32)), 256);
        assert_eq!(kex_agree(&d, &p_minus_1), Err(ChannelError::MalformedPublicKey));
        let one = to_fixed_be(&BigUint::from(1u32), 256);
        assert_eq!(kex_agree(&d, &one), Err(ChannelError::MalformedPublicKey));
    }
}
