//! Message types and their canonical byte encoding.

use super::crypto::{sha256, Ciphertext, PublicKey, Tag};
use crate::fiat_ledger::{AccountId, Currency, InstitutionId, Slot};
use crate::population_model::IdentityId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opcode {
    GEN,
    INS,
    REQ,
    CLM,
    REV,
    IRV,
    RFA,
    ARA,
    DIS,
    PBR,
    NBE,
    RPV,
    /// Custodial instruction from an account holder to its institution.
    WDR,
    /// Transfer on the settlement shard.
    XFR,
    /// Private clearing notice between two institutions.
    CLR,
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCap {
    pub currency: Currency,
    pub institution: InstitutionId,
    pub cap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    #[serde(default)]
    pub per_institution: std::collections::BTreeMap<InstitutionId, f64>,
    #[serde(default)]
    pub per_currency: std::collections::BTreeMap<Currency, f64>,
    #[serde(default)]
    pub per_pair: Vec<PairCap>,
}

impl Caps {
    pub fn pair(&self, m: &Currency, o: &InstitutionId) -> Option<f64> {
        self.per_pair
            .iter()
            .find(|p| &p.currency == m && &p.institution == o)
            .map(|p| p.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terms {
    pub join_deadline: Slot,
    pub mint_shutoff: Slot,
    #[serde(default)]
    pub caps: Caps,
    pub nonce: u64,
}

/// A set of authentication factors able to control an account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountKey {
    pub factors: BTreeSet<String>,
}

impl AccountKey {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(factors: I) -> Self {
        AccountKey {
            factors: factors.into_iter().map(Into::into).collect(),
        }
    }

    pub fn overlap(&self, other: &BTreeSet<String>) -> BTreeSet<String> {
        self.factors.intersection(other).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Destination {
    Key { key: PublicKey },
    Account { institution: InstitutionId, account: AccountId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispute {
    /// Hash of the disputed IRV message.
    pub irv: Tag,
    pub recomputed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op")]
pub enum Payload {
    GEN { founder: InstitutionId, nonce: u64, terms: Terms },
    INS { recipient: InstitutionId, recipient_key: PublicKey, cosigners: Vec<(InstitutionId, Tag)> },
    REQ { institution: InstitutionId },
    CLM { institution: InstitutionId, weight: f64 },
    REV { verifier: InstitutionId, target: InstitutionId, target_account: AccountId },
    IRV { verifier: InstitutionId, weight: f64, verifier_key: PublicKey, coordinates: Ciphertext },
    RFA { verifier: InstitutionId, institution: InstitutionId, sealed_secret: Ciphertext },
    ARA { institution: InstitutionId, provisional_tag: Tag, residual: f64 },
    DIS { institution: InstitutionId, provisional_tag: Tag, disputes: Vec<Dispute>, residual: f64 },
    PBR { identity: IdentityId, target: InstitutionId, target_account: AccountId, claimed: f64, currency: Currency, presented: BTreeSet<String> },
    NBE { verifier: InstitutionId, sealed: Ciphertext },
    RPV { verifier: InstitutionId, sealed: Ciphertext },
    WDR { identity: IdentityId, institution: InstitutionId, account: AccountId, destination: Destination, quantity: f64, currency: Currency },
    XFR { from_key: PublicKey, quantity: f64, currency: Currency, to_key: PublicKey, z: u64 },
    CLR { from: InstitutionId, to: InstitutionId, z: u64, sealed: Ciphertext },
}

impl Payload {
    pub fn opcode(&self) -> Opcode {
        match self {
            Payload::GEN { .. } => Opcode::GEN,
            Payload::INS { .. } => Opcode::INS,
            Payload::REQ { .. } => Opcode::REQ,
            Payload::CLM { .. } => Opcode::CLM,
            Payload::REV { .. } => Opcode::REV,
            Payload::IRV { .. } => Opcode::IRV,
            Payload::RFA { .. } => Opcode::RFA,
            Payload::ARA { .. } => Opcode::ARA,
            Payload::DIS { .. } => Opcode::DIS,
            Payload::PBR { .. } => Opcode::PBR,
            Payload::NBE { .. } => Opcode::NBE,
            Payload::RPV { .. } => Opcode::RPV,
            Payload::WDR { .. } => Opcode::WDR,
            Payload::XFR { .. } => Opcode::XFR,
            Payload::CLR { .. } => Opcode::CLR,
        }
    }

    /// Private messages travel between two parties; the rest are broadcast.
    pub fn is_private(&self) -> bool {
        matches!(
            self.opcode(),
            Opcode::REV | Opcode::PBR | Opcode::RFA | Opcode::RPV | Opcode::NBE | Opcode::WDR | Opcode::CLR
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signer {
    Key { key: PublicKey },
    Account { institution: InstitutionId, account: AccountId },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Signature {
    Tag { tag: Tag },
    /// Authentication factors presented to the custodian.
    Factors { factors: BTreeSet<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub slot: Slot,
    /// Sender label used for ordering within a slot.
    pub sender: String,
    pub signer: Signer,
    pub payload: Payload,
    pub signature: Signature,
}

impl Envelope {
    pub fn opcode(&self) -> Opcode {
        self.payload.opcode()
    }

    /// Bytes covered by the signature: slot, sender and payload.
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(self.slot, &self.sender, &self.payload)
    }

    pub fn hash(&self) -> Tag {
        let mut e = Encoder::default();
        e.bytes(&self.signing_bytes());
        encode_signer(&mut e, &self.signer);
        match &self.signature {
            Signature::Tag { tag } => {
                e.u8(0);
                e.raw(&tag.0);
            }
            Signature::Factors { factors } => {
                e.u8(1);
                e.strs(factors.iter());
            }
        }
        Tag(sha256(&[&e.buf]))
    }
}

pub fn signing_bytes(slot: Slot, sender: &str, payload: &Payload) -> Vec<u8> {
    let mut e = Encoder::default();
    e.u64(slot);
    e.str(sender);
    encode_payload(&mut e, payload);
    e.buf
}

/// Bytes a late institution signs with its provisional key to accept all
/// remote issuances.
pub fn attestation_bytes(institution: &InstitutionId, disputed: &[Tag]) -> Vec<u8> {
    let mut e = Encoder::default();
    e.str(if disputed.is_empty() { "ALL" } else { "EXCEPT" });
    e.str(&institution.0);
    e.u64(disputed.len() as u64);
    for t in disputed {
        e.raw(&t.0);
    }
    e.buf
}

/// Fixed-width big-endian integers; strings and byte strings carry a u64
/// length prefix.
#[derive(Debug, Default)]
pub struct Encoder {
    pub buf: Vec<u8>,
}

impl Encoder {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.raw(b);
    }
    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    pub fn strs<'a>(&mut self, xs: impl ExactSizeIterator<Item = &'a String>) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.str(x);
        }
    }
    fn ciphertext(&mut self, c: &Ciphertext) {
        self.raw(&c.recipient.0);
        self.raw(&c.nonce.0);
        self.bytes(&c.body);
        self.raw(&c.mac.0);
    }
}

fn encode_signer(e: &mut Encoder, s: &Signer) {
    match s {
        Signer::Key { key } => {
            e.u8(0);
            e.raw(&key.0);
        }
        Signer::Account { institution, account } => {
            e.u8(1);
            e.str(&institution.0);
            e.str(&account.0);
        }
    }
}

fn encode_terms(e: &mut Encoder, t: &Terms) {
    e.u64(t.join_deadline);
    e.u64(t.mint_shutoff);
    e.u64(t.nonce);
    e.u64(t.caps.per_institution.len() as u64);
    for (o, c) in &t.caps.per_institution {
        e.str(&o.0);
        e.f64(*c);
    }
    e.u64(t.caps.per_currency.len() as u64);
    for (m, c) in &t.caps.per_currency {
        e.str(&m.0);
        e.f64(*c);
    }
    e.u64(t.caps.per_pair.len() as u64);
    for p in &t.caps.per_pair {
        e.str(&p.currency.0);
        e.str(&p.institution.0);
        e.f64(p.cap);
    }
}

fn encode_payload(e: &mut Encoder, p: &Payload) {
    e.str(&p.opcode().to_string());
    match p {
        Payload::GEN { founder, nonce, terms } => {
            e.str(&founder.0);
            e.u64(*nonce);
            encode_terms(e, terms);
        }
        Payload::INS { recipient, recipient_key, cosigners } => {
            e.str(&recipient.0);
            e.raw(&recipient_key.0);
            e.u64(cosigners.len() as u64);
            for (o, t) in cosigners {
                e.str(&o.0);
                e.raw(&t.0);
            }
        }
        Payload::REQ { institution } => e.str(&institution.0),
        Payload::CLM { institution, weight } => {
            e.str(&institution.0);
            e.f64(*weight);
        }
        Payload::REV { verifier, target, target_account } => {
            e.str(&verifier.0);
            e.str(&target.0);
            e.str(&target_account.0);
        }
        Payload::IRV { verifier, weight, verifier_key, coordinates } => {
            e.str(&verifier.0);
            e.f64(*weight);
            e.raw(&verifier_key.0);
            e.ciphertext(coordinates);
        }
        Payload::RFA { verifier, institution, sealed_secret } => {
            e.str(&verifier.0);
            e.str(&institution.0);
            e.ciphertext(sealed_secret);
        }
        Payload::ARA { institution, provisional_tag, residual } => {
            e.str(&institution.0);
            e.raw(&provisional_tag.0);
            e.f64(*residual);
        }
        Payload::DIS { institution, provisional_tag, disputes, residual } => {
            e.str(&institution.0);
            e.raw(&provisional_tag.0);
            e.u64(disputes.len() as u64);
            for d in disputes {
                e.raw(&d.irv.0);
                e.f64(d.recomputed);
            }
            e.f64(*residual);
        }
        Payload::PBR { identity, target, target_account, claimed, currency, presented } => {
            e.str(&identity.0);
            e.str(&target.0);
            e.str(&target_account.0);
            e.f64(*claimed);
            e.str(&currency.0);
            e.strs(presented.iter());
        }
        Payload::NBE { verifier, sealed } | Payload::RPV { verifier, sealed } => {
            e.str(&verifier.0);
            e.ciphertext(sealed);
        }
        Payload::WDR { identity, institution, account, destination, quantity, currency } => {
            e.str(&identity.0);
            e.str(&institution.0);
            e.str(&account.0);
            match destination {
                Destination::Key { key } => {
                    e.u8(0);
                    e.raw(&key.0);
                }
                Destination::Account { institution, account } => {
                    e.u8(1);
                    e.str(&institution.0);
                    e.str(&account.0);
                }
            }
            e.f64(*quantity);
            e.str(&currency.0);
        }
        Payload::XFR { from_key, quantity, currency, to_key, z } => {
            e.raw(&from_key.0);
            e.f64(*quantity);
            e.str(&currency.0);
            e.raw(&to_key.0);
            e.u64(*z);
        }
        Payload::CLR { from, to, z, sealed } => {
            e.str(&from.0);
            e.str(&to.0);
            e.u64(*z);
            e.ciphertext(sealed);
        }
    }
}

/// Plaintext of an IRV coordinate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub target: InstitutionId,
    pub account: AccountId,
    /// Account at the verifier that received the weight.
    pub credited: AccountId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExaggerationNotice {
    pub target: InstitutionId,
    pub account: AccountId,
    pub claimed: f64,
    pub actual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionalNotice {
    pub target: InstitutionId,
    pub account: AccountId,
    pub claimed: f64,
    pub currency: Currency,
    pub identity: IdentityId,
    pub overlap: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingNotice {
    pub z: u64,
    pub account: AccountId,
    pub quantity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_is_length_prefixed_and_stable() {
        let p = Payload::REQ {
            institution: InstitutionId::new("ab"),
        };
        let b = signing_bytes(7, "x", &p);
        let mut want = 7u64.to_be_bytes().to_vec();
        want.extend(1u64.to_be_bytes());
        want.extend(b"x");
        want.extend(3u64.to_be_bytes());
        want.extend(b"REQ");
        want.extend(2u64.to_be_bytes());
        want.extend(b"ab");
        assert_eq!(b, want);
        let shifted = Payload::REQ {
            institution: InstitutionId::new("b"),
        };
        assert_ne!(signing_bytes(7, "xa", &shifted), b);
    }

    #[test]
    fn envelope_json_round_trip() {
        let env = Envelope {
            slot: 3,
            sender: "o".into(),
            signer: Signer::Key { key: PublicKey([1; 32]) },
            payload: Payload::CLM {
                institution: InstitutionId::new("o"),
                weight: 12.5,
            },
            signature: Signature::Tag { tag: Tag([2; 32]) },
        };
        let json = serde_json::to_string(&env).unwrap();
        assert!(json.contains(&"02".repeat(32)));
        let back: Envelope = serde_json::from_str(&json).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.hash(), env.hash());
    }
}
