//! Signature and encryption abstraction with a hash-based mock.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CryptoError {
    #[error("public key {0} is not registered")]
    UnknownKey(PublicKey),
    #[error("ciphertext is not addressed to this key")]
    WrongRecipient,
    #[error("ciphertext failed its integrity check")]
    Corrupt,
}

macro_rules! hex_bytes {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
                let arr: [u8; 32] = v
                    .try_into()
                    .map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
                Ok($name(arr))
            }
        }
    };
}

hex_bytes!(PublicKey);
hex_bytes!(SecretKey);
hex_bytes!(Tag);

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    pub recipient: PublicKey,
    pub nonce: Tag,
    #[serde(with = "hex_vec")]
    pub body: Vec<u8>,
    pub mac: Tag,
}

pub fn sha256(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub trait SignatureScheme {
    /// Deterministic in `label` so that replays regenerate the same keys.
    fn keygen(&mut self, label: &str) -> (PublicKey, SecretKey);
    fn sign(&self, sk: &SecretKey, msg: &[u8]) -> Tag;
    fn verify(&self, pk: &PublicKey, msg: &[u8], tag: &Tag) -> bool;
    fn encrypt(&self, pk: &PublicKey, data: &[u8]) -> Result<Ciphertext, CryptoError>;
    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError>;
    fn is_registered(&self, pk: &PublicKey) -> bool;
}

/// Tags are `H(sk ‖ m)`; verification looks the secret up in a registry of
/// generated keypairs. Encryption XORs with a hash keystream under the
/// recipient's secret.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScheme {
    pub seed: u64,
    registry: BTreeMap<PublicKey, SecretKey>,
}

impl MockScheme {
    pub fn new(seed: u64) -> Self {
        MockScheme {
            seed,
            registry: BTreeMap::new(),
        }
    }

    fn public_of(sk: &SecretKey) -> PublicKey {
        PublicKey(sha256(&[b"pk", &sk.0]))
    }

    fn keystream(sk: &SecretKey, nonce: &Tag, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut block = 0u64;
        while out.len() < len {
            out.extend_from_slice(&sha256(&[b"ks", &sk.0, &nonce.0, &block.to_be_bytes()]));
            block += 1;
        }
        out.truncate(len);
        out
    }
}

impl SignatureScheme for MockScheme {
    fn keygen(&mut self, label: &str) -> (PublicKey, SecretKey) {
        let sk = SecretKey(sha256(&[b"sk", &self.seed.to_be_bytes(), label.as_bytes()]));
        let pk = Self::public_of(&sk);
        self.registry.insert(pk, sk);
        (pk, sk)
    }

    fn sign(&self, sk: &SecretKey, msg: &[u8]) -> Tag {
        Tag(sha256(&[b"tag", &sk.0, msg]))
    }

    fn verify(&self, pk: &PublicKey, msg: &[u8], tag: &Tag) -> bool {
        self.registry
            .get(pk)
            .is_some_and(|sk| &self.sign(sk, msg) == tag)
    }

    fn encrypt(&self, pk: &PublicKey, data: &[u8]) -> Result<Ciphertext, CryptoError> {
        let sk = self.registry.get(pk).ok_or(CryptoError::UnknownKey(*pk))?;
        let nonce = Tag(sha256(&[b"nonce", &pk.0, data]));
        let body: Vec<u8> = data
            .iter()
            .zip(Self::keystream(sk, &nonce, data.len()))
            .map(|(a, b)| a ^ b)
            .collect();
        let mac = Tag(sha256(&[b"mac", &sk.0, &nonce.0, &body]));
        Ok(Ciphertext {
            recipient: *pk,
            nonce,
            body,
            mac,
        })
    }

    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
        if Self::public_of(sk) != ct.recipient {
            return Err(CryptoError::WrongRecipient);
        }
        if Tag(sha256(&[b"mac", &sk.0, &ct.nonce.0, &ct.body])) != ct.mac {
            return Err(CryptoError::Corrupt);
        }
        Ok(ct
            .body
            .iter()
            .zip(Self::keystream(sk, &ct.nonce, ct.body.len()))
            .map(|(a, b)| a ^ b)
            .collect())
    }

    fn is_registered(&self, pk: &PublicKey) -> bool {
        self.registry.contains_key(pk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_verify_round_trip() {
        let mut s = MockScheme::new(1);
        let (pk, sk) = s.keygen("bank");
        let (pk2, sk2) = s.keygen("other");
        let t = s.sign(&sk, b"hello");
        assert!(s.verify(&pk, b"hello", &t));
        assert!(!s.verify(&pk, b"hellp", &t));
        assert!(!s.verify(&pk2, b"hello", &t));
        assert_ne!(s.sign(&sk2, b"hello"), t);
        assert_eq!(s.keygen("bank").0, pk);
        assert!(!MockScheme::new(1).verify(&pk, b"hello", &t));
    }

    #[test]
    fn encryption_round_trip() {
        let mut s = MockScheme::new(9);
        let (pk, sk) = s.keygen("a");
        let (_, sk2) = s.keygen("b");
        let data = b"coordinates of some account, longer than one block of keystream".to_vec();
        let ct = s.encrypt(&pk, &data).unwrap();
        assert_ne!(ct.body, data);
        assert_eq!(s.decrypt(&sk, &ct).unwrap(), data);
        assert_eq!(s.decrypt(&sk2, &ct), Err(CryptoError::WrongRecipient));
        let mut bad = ct.clone();
        bad.body[0] ^= 1;
        assert_eq!(s.decrypt(&sk, &bad), Err(CryptoError::Corrupt));
        let json = serde_json::to_string(&ct).unwrap();
        assert_eq!(serde_json::from_str::<Ciphertext>(&json).unwrap(), ct);
    }
}
