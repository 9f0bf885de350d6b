use hkdf::Hkdf;
use sha2::Sha256;

use super::suite::{CipherSuite, SALT_LEN};

pub const RANDOM_LEN: usize = 32;
pub const FINISHED_KEY_LEN: usize = 32;

/// Directional traffic secrets derived from one handshake.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyBlock {
    pub client_write_key: Vec<u8>,
    pub server_write_key: Vec<u8>,
    pub client_salt: [u8; SALT_LEN],
    pub server_salt: [u8; SALT_LEN],
    pub client_finished_key: [u8; FINISHED_KEY_LEN],
    pub server_finished_key: [u8; FINISHED_KEY_LEN],
}

impl std::fmt::Debug for KeyBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("KeyBlock(<redacted>)")
    }
}

/// HKDF-SHA256: extract with `client_random || server_random` as salt, then
/// expand once per output under a distinct label.
pub fn derive_keys(
    shared: &[u8],
    client_random: &[u8; RANDOM_LEN],
    server_random: &[u8; RANDOM_LEN],
    suite: CipherSuite,
) -> KeyBlock {
    let mut salt = [0u8; 2 * RANDOM_LEN];
    salt[..RANDOM_LEN].copy_from_slice(client_random);
    salt[RANDOM_LEN..].copy_from_slice(server_random);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);

    let mut info = Vec::with_capacity(32);
    let mut expand = |label: &str, out: &mut [u8]| {
        info.clear();
        info.extend_from_slice(b"dtlsgate ");
        info.extend_from_slice(label.as_bytes());
        info.extend_from_slice(&suite.id().to_be_bytes());
        hk.expand(&info, out).expect("output length within HKDF bound");
    };

    let mut client_write_key = vec![0u8; suite.key_len()];
    let mut server_write_key = vec![0u8; suite.key_len()];
    let mut client_salt = [0u8; SALT_LEN];
    let mut server_salt = [0u8; SALT_LEN];
    let mut client_finished_key = [0u8; FINISHED_KEY_LEN];
    let mut server_finished_key = [0u8; FINISHED_KEY_LEN];
    expand("client write key", &mut client_write_key);
    expand("server write key", &mut server_write_key);
    expand("client salt", &mut client_salt);
    expand("server salt", &mut server_salt);
    expand("client finished", &mut client_finished_key);
    expand("server finished", &mut server_finished_key);

    KeyBlock {
        client_write_key,
        server_write_key,
        client_salt,
        server_salt,
        client_finished_key,
        server_finished_key,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs() -> (Vec<u8>, [u8; 32], [u8; 32]) {
        (vec![7u8; 32], [1u8; 32], [2u8; 32])
    }

    #[test]
    fn deterministic() {
        let (s, c, r) = inputs();
        for suite in CipherSuite::ALL {
            assert_eq!(derive_keys(&s, &c, &r, suite), derive_keys(&s, &c, &r, suite));
        }
    }

    #[test]
    fn lengths_follow_suite() {
        let (s, c, r) = inputs();
        assert_eq!(derive_keys(&s, &c, &r, CipherSuite::Aes128Gcm).client_write_key.len(), 16);
        assert_eq!(derive_keys(&s, &c, &r, CipherSuite::Aes256Gcm).server_write_key.len(), 32);
        assert_eq!(
            derive_keys(&s, &c, &r, CipherSuite::ChaCha20Poly1305).client_write_key.len(),
            32
        );
    }

    #[test]
    fn one_bit_of_client_random_changes_every_output() {
        let (s, c, r) = inputs();
        for bit in [0usize, 7, 100, 255] {
            let mut c2 = c;
            c2[bit / 8] ^= 1 << (bit % 8);
            let a = derive_keys(&s, &c, &r, CipherSuite::ChaCha20Poly1305);
            let b = derive_keys(&s, &c2, &r, CipherSuite::ChaCha20Poly1305);
            assert_ne!(a.client_write_key, b.client_write_key);
            assert_ne!(a.server_write_key, b.server_write_key);
            assert_ne!(a.client_salt, b.client_salt);
            assert_ne!(a.server_salt, b.server_salt);
        }
    }

    #[test]
    fn directions_are_distinct() {
        let (s, c, r) = inputs();
        let k = derive_keys(&s, &c, &r, CipherSuite::Aes256Gcm);
        assert_ne!(k.client_write_key, k.server_write_key);
        assert_ne!(k.client_salt, k.server_salt);
        assert_ne!(k.client_finished_key, k.server_finished_key);
    }
}
