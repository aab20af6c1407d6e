//! Actor helpers that build, sign and submit well-formed messages.

use super::crypto::{MockScheme, PublicKey, SecretKey, SignatureScheme, Tag};
use super::message::*;
use super::state::{IrvStatus, LedgerContext, PbrStatus, ProtocolConfig, ProtocolState};
use super::ProtocolError;
use crate::fiat_ledger::{clamp_nonnegative, AccountId, Currency, InstitutionId, Slot, SlotBalance};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// How the remote verifier reads a custodian's records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMethod {
    /// The requester hands over account credentials.
    #[default]
    Delegated,
    /// Through a data aggregator.
    Intermediated,
    /// Through an account-information interface at the custodian.
    Direct,
}

pub trait BalanceDataSource {
    fn method(&self) -> AccessMethod;
    fn currency(&self, account: &AccountId) -> Result<Currency, ProtocolError>;
    fn balances(&self, account: &AccountId, slots: &[Slot]) -> Result<Vec<SlotBalance>, ProtocolError>;
}

/// Reads straight from the simulated custodial array.
#[derive(Debug, Clone)]
pub struct LedgerSource {
    pub ctx: Arc<LedgerContext>,
    pub method: AccessMethod,
}

impl BalanceDataSource for LedgerSource {
    fn method(&self) -> AccessMethod {
        self.method
    }

    fn currency(&self, account: &AccountId) -> Result<Currency, ProtocolError> {
        Ok(self.ctx.array.record(account)?.currency.clone())
    }

    fn balances(&self, account: &AccountId, slots: &[Slot]) -> Result<Vec<SlotBalance>, ProtocolError> {
        let rec = self.ctx.array.record(account)?;
        Ok(slots.iter().map(|s| rec.balance(*s)).collect())
    }
}

/// Remote verifier conduct. `inflation` multiplies every weight it reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifierBehavior {
    pub inflation: f64,
}

impl Default for VerifierBehavior {
    fn default() -> Self {
        VerifierBehavior { inflation: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSetup {
    pub institutions: Vec<InstitutionId>,
    pub founder: InstitutionId,
    pub remote_verifier: Option<InstitutionId>,
    pub terms: Terms,
    pub seed: u64,
    #[serde(default)]
    pub genesis_slot: Slot,
    #[serde(default = "default_grace")]
    pub grace_slots: u64,
    #[serde(default)]
    pub cosign_required: usize,
}

fn default_grace() -> u64 {
    10
}

/// A protocol run plus every actor's secrets.
#[derive(Debug, Clone)]
pub struct Simulation<S = MockScheme> {
    pub state: ProtocolState<S>,
    keys: BTreeMap<InstitutionId, (PublicKey, SecretKey)>,
    pub behavior: VerifierBehavior,
    pub source: LedgerSource,
}

impl Simulation<MockScheme> {
    pub fn new(ctx: Arc<LedgerContext>, setup: &SimulationSetup) -> Result<Self, ProtocolError> {
        Self::with_scheme(ctx, setup, MockScheme::new(setup.seed))
    }
}

impl<S: SignatureScheme + Clone> Simulation<S> {
    pub fn with_scheme(ctx: Arc<LedgerContext>, setup: &SimulationSetup, mut scheme: S) -> Result<Self, ProtocolError> {
        let keys: BTreeMap<_, _> = setup
            .institutions
            .iter()
            .map(|o| (o.clone(), scheme.keygen(&format!("official/{o}"))))
            .collect();
        let mut config = ProtocolConfig::new(
            keys.iter().map(|(o, (pk, _))| (o.clone(), *pk)).collect(),
            setup.remote_verifier.clone(),
        );
        config.grace_slots = setup.grace_slots;
        config.cosign_required = setup.cosign_required;
        let (pk, sk) = keys
            .get(&setup.founder)
            .ok_or_else(|| ProtocolError::InvalidTerms(format!("founder {} not listed", setup.founder)))?;
        let payload = Payload::GEN {
            founder: setup.founder.clone(),
            nonce: setup.terms.nonce,
            terms: setup.terms.clone(),
        };
        let gen = sign_with(&scheme, pk, sk, setup.genesis_slot, &setup.founder.0, payload);
        let source = LedgerSource {
            ctx: ctx.clone(),
            method: AccessMethod::default(),
        };
        Ok(Simulation {
            state: ProtocolState::genesis(ctx, config, scheme, gen)?,
            keys,
            behavior: VerifierBehavior::default(),
            source,
        })
    }

    pub fn official(&self, o: &InstitutionId) -> Result<(PublicKey, SecretKey), ProtocolError> {
        self.keys.get(o).copied().ok_or(ProtocolError::Unauthorized)
    }

    /// Signs as the institution's official key.
    pub fn signed(&self, o: &InstitutionId, slot: Slot, payload: Payload) -> Result<Envelope, ProtocolError> {
        let (pk, sk) = self.official(o)?;
        Ok(sign_with(self.state.scheme(), &pk, &sk, slot, &o.0, payload))
    }

    /// Signs by presenting account factors; defaults to the registered key.
    pub fn account_signed(&self, account: &AccountId, slot: Slot, payload: Payload, factors: Option<BTreeSet<String>>) -> Result<Envelope, ProtocolError> {
        let rec = self.state.ctx().array.record(account)?;
        let factors = match factors {
            Some(f) => f,
            None => self
                .state
                .ctx()
                .key(account)
                .map(|k| k.factors.clone())
                .ok_or(ProtocolError::SignatureMismatch)?,
        };
        Ok(Envelope {
            slot,
            sender: account.0.clone(),
            signer: Signer::Account {
                institution: rec.institution.clone(),
                account: account.clone(),
            },
            payload,
            signature: Signature::Factors { factors },
        })
    }

    pub fn submit(&mut self, env: Envelope) -> Result<Tag, ProtocolError> {
        self.state.apply(env)
    }

    /// Registers a self-custody key that can receive settlement transfers.
    pub fn self_custody_key(&mut self, label: &str) -> PublicKey {
        self.state.scheme_mut().keygen(&format!("self/{label}")).0
    }

    pub fn request(&mut self, o: &InstitutionId, slot: Slot) -> Result<Tag, ProtocolError> {
        let env = self.signed(o, slot, Payload::REQ { institution: o.clone() })?;
        self.submit(env)
    }

    /// INS from `from` to `to`, cosigned by as many other authority holders
    /// as the configuration requires.
    pub fn award(&mut self, from: &InstitutionId, to: &InstitutionId, slot: Slot) -> Result<Tag, ProtocolError> {
        let recipient_key = self.official(to)?.0;
        let bare = Payload::INS {
            recipient: to.clone(),
            recipient_key,
            cosigners: Vec::new(),
        };
        let bytes = signing_bytes(slot, &from.0, &bare);
        let cosigners: Vec<(InstitutionId, Tag)> = self
            .state
            .authority()
            .iter()
            .filter(|o| *o != from)
            .take(self.state.config().cosign_required)
            .filter_map(|o| self.keys.get(o).map(|(_, sk)| (o.clone(), self.state.scheme().sign(sk, &bytes))))
            .collect();
        let payload = Payload::INS {
            recipient: to.clone(),
            recipient_key,
            cosigners,
        };
        let env = self.signed(from, slot, payload)?;
        self.submit(env)
    }

    pub fn claim_weight(&mut self, o: &InstitutionId, weight: f64, slot: Slot) -> Result<Tag, ProtocolError> {
        let env = self.signed(o, slot, Payload::CLM { institution: o.clone(), weight })?;
        self.submit(env)
    }

    /// Claims exactly the institution's residual.
    pub fn claim(&mut self, o: &InstitutionId, slot: Slot) -> Result<Tag, ProtocolError> {
        let w = self.state.residual(o)?.total;
        self.claim_weight(o, w, slot)
    }

    fn verifier(&self) -> Result<InstitutionId, ProtocolError> {
        self.state
            .config()
            .remote_verifier
            .clone()
            .ok_or(ProtocolError::NoRemoteVerifier)
    }

    /// Weight the verifier computes from its data source.
    pub fn observed_weight(&self, account: &AccountId) -> Result<f64, ProtocolError> {
        let ctx = self.state.ctx();
        let slots: Vec<Slot> = ctx.periods.slots().collect();
        let m = self.source.currency(account)?;
        let bs = self.source.balances(account, &slots)?;
        let mut sum = 0.0;
        for (s, b) in slots.iter().zip(bs) {
            if let SlotBalance::Known(v) = b {
                sum += clamp_nonnegative(v) * ctx.rates.rate(&m, *s)?;
            }
        }
        Ok(sum / slots.len() as f64)
    }

    fn send_irv(&mut self, target: &InstitutionId, account: &AccountId, credited: &AccountId, weight: f64, slot: Slot) -> Result<Tag, ProtocolError> {
        let rv = self.verifier()?;
        let prov = self
            .state
            .provisional()
            .get(target)
            .ok_or(ProtocolError::MissingProvisionalKey)?
            .public;
        let coords = Coordinates {
            target: target.clone(),
            account: account.clone(),
            credited: credited.clone(),
        };
        let coordinates = self.seal(&prov, &coords)?;
        let payload = Payload::IRV {
            verifier: rv.clone(),
            weight: weight * self.behavior.inflation,
            verifier_key: self.official(&rv)?.0,
            coordinates,
        };
        let env = self.signed(&rv, slot, payload)?;
        self.submit(env)
    }

    fn seal<T: Serialize>(&self, pk: &PublicKey, v: &T) -> Result<super::crypto::Ciphertext, ProtocolError> {
        let bytes = serde_json::to_vec(v).map_err(|e| ProtocolError::MalformedPayload(e.to_string()))?;
        Ok(self.state.scheme().encrypt(pk, &bytes)?)
    }

    /// REV from an account at the verifier, answered by an IRV. Returns the
    /// IRV hash.
    pub fn remote_verify(&mut self, requester: &AccountId, target_account: &AccountId, slot: Slot) -> Result<Tag, ProtocolError> {
        let rv = self.verifier()?;
        let target = self.state.ctx().array.record(target_account)?.institution.clone();
        let payload = Payload::REV {
            verifier: rv,
            target: target.clone(),
            target_account: target_account.clone(),
        };
        let env = self.account_signed(requester, slot, payload, None)?;
        self.submit(env)?;
        let w = self.observed_weight(target_account)?;
        self.send_irv(&target, target_account, requester, w, slot)
    }

    /// PBR presenting `factors` (the registered key of the target account
    /// when `None`) alongside the requester's own credentials.
    pub fn provisional_request(
        &mut self,
        requester: &AccountId,
        target_account: &AccountId,
        claimed: f64,
        slot: Slot,
        factors: Option<BTreeSet<String>>,
    ) -> Result<Tag, ProtocolError> {
        let rec = self.state.ctx().array.record(target_account)?.clone();
        let presented = factors
            .or_else(|| self.state.ctx().key(target_account).map(|k| k.factors.clone()))
            .unwrap_or_default();
        let payload = Payload::PBR {
            identity: rec.identity,
            target: rec.institution,
            target_account: target_account.clone(),
            claimed,
            currency: rec.currency,
            presented,
        };
        let env = self.account_signed(requester, slot, payload, None)?;
        self.submit(env)
    }

    /// The verifier checks a pending PBR: NBE when the claim exceeds what it
    /// sees, otherwise an IRV for the claimed amount.
    pub fn verify_provisional(&mut self, target_account: &AccountId, slot: Slot) -> Result<Tag, ProtocolError> {
        let rv = self.verifier()?;
        let p = self
            .state
            .pbrs()
            .get(target_account)
            .filter(|p| p.status == PbrStatus::Pending)
            .cloned()
            .ok_or_else(|| ProtocolError::NoPendingRequest(target_account.clone()))?;
        let actual = self.observed_weight(target_account)?;
        if p.claimed > actual {
            let prov = self
                .state
                .provisional()
                .get(&p.target)
                .ok_or(ProtocolError::MissingProvisionalKey)?
                .public;
            let notice = ExaggerationNotice {
                target: p.target.clone(),
                account: target_account.clone(),
                claimed: p.claimed,
                actual,
            };
            let sealed = self.seal(&prov, &notice)?;
            let env = self.signed(&rv, slot, Payload::NBE { verifier: rv.clone(), sealed })?;
            self.submit(env)
        } else {
            self.send_irv(&p.target, target_account, &p.credited, p.claimed, slot)
        }
    }

    /// Verifier side once `o` has joined: RPV for each pending PBR, then the
    /// RFA carrying the provisional secret.
    pub fn forward_attestation(&mut self, o: &InstitutionId, slot: Slot) -> Result<Vec<Tag>, ProtocolError> {
        let rv = self.verifier()?;
        let prov = self
            .state
            .provisional()
            .get(o)
            .ok_or(ProtocolError::MissingProvisionalKey)?
            .clone();
        let pending: Vec<(AccountId, _)> = self
            .state
            .pbrs()
            .iter()
            .filter(|(_, p)| &p.target == o && p.status == PbrStatus::Pending)
            .map(|(a, p)| (a.clone(), p.clone()))
            .collect();
        let mut out = Vec::new();
        for (a, p) in pending {
            let notice = ProvisionalNotice {
                target: o.clone(),
                account: a,
                claimed: p.claimed,
                currency: p.currency,
                identity: p.identity,
                overlap: p.overlap,
            };
            let sealed = self.seal(&prov.public, &notice)?;
            let env = self.signed(&rv, slot, Payload::RPV { verifier: rv.clone(), sealed })?;
            out.push(self.submit(env)?);
        }
        let pk_o = self.official(o)?.0;
        let sealed_secret = self.state.scheme().encrypt(&pk_o, &prov.secret.0)?;
        let payload = Payload::RFA {
            verifier: rv.clone(),
            institution: o.clone(),
            sealed_secret,
        };
        let env = self.signed(&rv, slot, payload)?;
        out.push(self.submit(env)?);
        Ok(out)
    }

    /// Late institution side: recover the provisional secret, find the IRVs
    /// addressed to it, recompute each from its own books and send ARA, or
    /// DIS listing the ones that disagree.
    pub fn attest(&mut self, o: &InstitutionId, slot: Slot) -> Result<Tag, ProtocolError> {
        let (_, official_sk) = self.official(o)?;
        let sealed = self
            .state
            .log()
            .iter()
            .rev()
            .find_map(|e| match &e.envelope.payload {
                Payload::RFA { institution, sealed_secret, .. } if institution == o => Some(sealed_secret.clone()),
                _ => None,
            })
            .ok_or(ProtocolError::MissingProvisionalKey)?;
        let bytes = self.state.scheme().decrypt(&official_sk, &sealed)?;
        let sk = SecretKey(
            bytes
                .try_into()
                .map_err(|_| ProtocolError::MalformedPayload("provisional secret length".into()))?,
        );
        let mut disputes = Vec::new();
        for e in self.state.log() {
            let Payload::IRV { weight, coordinates, .. } = &e.envelope.payload else {
                continue;
            };
            if self.state.scheme().decrypt(&sk, coordinates).is_err() {
                continue;
            }
            let Some(rec) = self.state.irvs().get(&e.hash).filter(|r| r.status == IrvStatus::Open) else {
                continue;
            };
            let correct = self.state.correct_irv_weight(rec)?;
            if !super::state::weights_match(*weight, correct) {
                disputes.push(Dispute {
                    irv: e.hash,
                    recomputed: correct,
                });
            }
        }
        let residual = self.state.residual(o)?.total;
        let disputed: Vec<Tag> = disputes.iter().map(|d| d.irv).collect();
        let provisional_tag = self.state.scheme().sign(&sk, &attestation_bytes(o, &disputed));
        let payload = if disputes.is_empty() {
            Payload::ARA {
                institution: o.clone(),
                provisional_tag,
                residual,
            }
        } else {
            Payload::DIS {
                institution: o.clone(),
                provisional_tag,
                disputes,
                residual,
            }
        };
        let env = self.signed(o, slot, payload)?;
        self.submit(env)
    }

    /// Moves forked fiat out of an account: WDR, then XFR for anything
    /// leaving the institution, then CLR when it lands in another
    /// institution's account.
    pub fn withdraw(&mut self, account: &AccountId, destination: Destination, quantity: f64, slot: Slot) -> Result<Vec<Tag>, ProtocolError> {
        let rec = self.state.ctx().array.record(account)?.clone();
        let payload = Payload::WDR {
            identity: rec.identity,
            institution: rec.institution.clone(),
            account: account.clone(),
            destination: destination.clone(),
            quantity,
            currency: self.state.ctx().rates.numeraire.clone(),
        };
        let before = self.state.transfers().keys().next_back().copied();
        let env = self.account_signed(account, slot, payload, None)?;
        let mut out = vec![self.submit(env)?];
        let Some((&z, t)) = self.state.transfers().iter().next_back().filter(|(z, _)| Some(**z) != before) else {
            return Ok(out);
        };
        let t = t.clone();
        let payload = Payload::XFR {
            from_key: t.from_key,
            quantity: t.quantity,
            currency: self.state.ctx().rates.numeraire.clone(),
            to_key: t.to_key,
            z,
        };
        let env = self.signed(&rec.institution, slot, payload)?;
        out.push(self.submit(env)?);
        if let Some((o2, a2)) = t.to {
            let notice = ClearingNotice {
                z,
                account: a2,
                quantity: t.quantity,
            };
            let sealed = self.seal(&t.to_key, &notice)?;
            let payload = Payload::CLR {
                from: rec.institution.clone(),
                to: o2,
                z,
                sealed,
            };
            let env = self.signed(&rec.institution, slot, payload)?;
            out.push(self.submit(env)?);
        }
        Ok(out)
    }
}

fn sign_with<S: SignatureScheme>(scheme: &S, pk: &PublicKey, sk: &SecretKey, slot: Slot, sender: &str, payload: Payload) -> Envelope {
    let bytes = signing_bytes(slot, sender, &payload);
    Envelope {
        slot,
        sender: sender.to_string(),
        signer: Signer::Key { key: *pk },
        signature: Signature::Tag {
            tag: scheme.sign(sk, &bytes),
        },
        payload,
    }
}
