//! The serialized message-application state machine.

use super::crypto::{CryptoError, MockScheme, PublicKey, SecretKey, SignatureScheme, Tag};
use super::message::*;
use super::ProtocolError;
use crate::fiat_ledger::{
    account_weight, provisional_account_weight, AccountId, CustodialArray, Currency, EligibilityPolicy, ExchangeRates, InstitutionId, LedgerError, OwnerKey,
    SettlementShard, Slot, StakingPeriods,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

/// Relative tolerance for comparing weights.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

pub fn weights_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= WEIGHT_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// The custodial world the simulation checks claims against.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerContext {
    pub array: CustodialArray,
    pub periods: StakingPeriods,
    pub rates: ExchangeRates,
    pub account_keys: BTreeMap<AccountId, AccountKey>,
}

impl LedgerContext {
    /// Stake weight of one account. Unknown slots count as zero.
    pub fn account_weight(&self, a: &AccountId) -> Result<f64, LedgerError> {
        match account_weight(&self.array, a, &self.periods, &self.rates) {
            Err(LedgerError::MissingSlotData(..)) => {
                provisional_account_weight(&self.array, a, &self.periods, &self.rates, EligibilityPolicy::ClampUnknown)
            }
            r => r,
        }
    }

    pub fn key(&self, a: &AccountId) -> Option<&AccountKey> {
        self.account_keys.get(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Keys claimed through official channels.
    pub official_keys: BTreeMap<InstitutionId, PublicKey>,
    pub remote_verifier: Option<InstitutionId>,
    pub grace_slots: u64,
    pub cosign_required: usize,
}

impl ProtocolConfig {
    pub fn new(official_keys: BTreeMap<InstitutionId, PublicKey>, remote_verifier: Option<InstitutionId>) -> Self {
        ProtocolConfig {
            official_keys,
            remote_verifier,
            grace_slots: 10,
            cosign_required: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub hash: Tag,
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obligation {
    pub requested: Slot,
    pub fulfilled: Option<Slot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionalKey {
    pub public: PublicKey,
    pub secret: SecretKey,
    pub delivered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IrvBasis {
    Balance,
    Provisional { claimed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrvStatus {
    Open,
    Attested,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrvRecord {
    pub target: InstitutionId,
    pub account: AccountId,
    pub credited: AccountId,
    pub weight: f64,
    pub basis: IrvBasis,
    pub status: IrvStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRev {
    pub target: InstitutionId,
    pub credited: AccountId,
    pub rev: Tag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PbrStatus {
    Pending,
    /// The late institution has been told about it.
    Noticed,
    Confirmed,
    Exaggerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PbrRecord {
    pub identity: crate::population_model::IdentityId,
    pub target: InstitutionId,
    pub claimed: f64,
    pub currency: Currency,
    pub credited: AccountId,
    pub overlap: BTreeSet<String>,
    pub status: PbrStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssuancePath {
    Remote { irv: Tag },
    Institutional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issuance {
    pub path: IssuancePath,
    pub institution: InstitutionId,
    pub currency: Currency,
    pub amount: f64,
    pub slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferStatus {
    Debited,
    Settled,
    Cleared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingTransfer {
    pub from_institution: InstitutionId,
    pub from_key: PublicKey,
    pub to_key: PublicKey,
    pub to: Option<(InstitutionId, AccountId)>,
    pub quantity: f64,
    pub status: TransferStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LivenessViolation {
    pub requester: InstitutionId,
    pub requested: Slot,
    pub responsible: Vec<InstitutionId>,
}

/// What an institution may still claim for its own accounts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub total: f64,
    pub parts: Vec<(AccountId, Currency, f64)>,
    pub confirmed: Vec<AccountId>,
    pub exaggerated: Vec<AccountId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolState<S = MockScheme> {
    #[serde(skip)]
    ctx: Arc<LedgerContext>,
    #[serde(skip)]
    scheme: S,
    config: ProtocolConfig,
    terms: Terms,
    founder: InstitutionId,
    log: Vec<LogEntry>,
    slot: Slot,
    authority: BTreeSet<InstitutionId>,
    joined: BTreeMap<InstitutionId, Slot>,
    obligations: BTreeMap<InstitutionId, Obligation>,
    claimed: BTreeSet<InstitutionId>,
    provisional: BTreeMap<InstitutionId, ProvisionalKey>,
    irvs: BTreeMap<Tag, IrvRecord>,
    pending_rev: BTreeMap<AccountId, PendingRev>,
    eligibility: BTreeMap<AccountId, bool>,
    pbrs: BTreeMap<AccountId, PbrRecord>,
    issuance: BTreeMap<AccountId, Vec<Issuance>>,
    settlement: SettlementShard,
    settlement_slots: Vec<Slot>,
    forked: BTreeMap<AccountId, f64>,
    transfers: BTreeMap<u64, PendingTransfer>,
    next_z: u64,
}

fn owner(pk: &PublicKey) -> OwnerKey {
    OwnerKey(pk.to_hex())
}

impl<S: SignatureScheme + Clone> ProtocolState<S> {
    /// Starts a run from a signed GEN message. The founder is the only
    /// authority holder.
    pub fn genesis(ctx: Arc<LedgerContext>, config: ProtocolConfig, scheme: S, gen: Envelope) -> Result<Self, ProtocolError> {
        let Payload::GEN { founder, nonce, terms } = &gen.payload else {
            return Err(ProtocolError::MalformedPayload("first message must be GEN".into()));
        };
        let pk = verify_tag(&scheme, &gen)?;
        if config.official_keys.get(founder) != Some(&pk) {
            return Err(ProtocolError::SignatureMismatch);
        }
        if terms.join_deadline > terms.mint_shutoff {
            return Err(ProtocolError::InvalidTerms("join deadline after mint shut-off".into()));
        }
        if *nonce != terms.nonce {
            return Err(ProtocolError::InvalidTerms("nonce differs from terms".into()));
        }
        let caps = &terms.caps;
        let all_caps = caps
            .per_institution
            .values()
            .chain(caps.per_currency.values())
            .chain(caps.per_pair.iter().map(|p| &p.cap));
        for c in all_caps {
            if !(*c >= 0.0) {
                return Err(ProtocolError::InvalidTerms(format!("negative cap {c}")));
            }
        }
        let hash = gen.hash();
        Ok(ProtocolState {
            ctx,
            scheme,
            config,
            terms: terms.clone(),
            founder: founder.clone(),
            slot: gen.slot,
            authority: BTreeSet::from([founder.clone()]),
            joined: BTreeMap::from([(founder.clone(), gen.slot)]),
            log: vec![LogEntry {
                seq: 0,
                hash,
                envelope: gen,
            }],
            obligations: BTreeMap::new(),
            claimed: BTreeSet::new(),
            provisional: BTreeMap::new(),
            irvs: BTreeMap::new(),
            pending_rev: BTreeMap::new(),
            eligibility: BTreeMap::new(),
            pbrs: BTreeMap::new(),
            issuance: BTreeMap::new(),
            settlement: SettlementShard::default(),
            settlement_slots: Vec::new(),
            forked: BTreeMap::new(),
            transfers: BTreeMap::new(),
            next_z: 1,
        })
    }

    /// Rebuilds a state from a log that starts with GEN.
    pub fn replay(ctx: Arc<LedgerContext>, config: ProtocolConfig, scheme: S, log: &[Envelope]) -> Result<Self, (usize, ProtocolError)> {
        let (first, rest) = log
            .split_first()
            .ok_or((0, ProtocolError::MalformedPayload("empty log".into())))?;
        let mut st = Self::genesis(ctx, config, scheme, first.clone()).map_err(|e| (0, e))?;
        for (i, env) in rest.iter().enumerate() {
            st.apply(env.clone()).map_err(|e| (i + 1, e))?;
        }
        Ok(st)
    }

    pub fn ctx(&self) -> &LedgerContext {
        &self.ctx
    }
    pub fn ctx_arc(&self) -> Arc<LedgerContext> {
        self.ctx.clone()
    }
    pub fn scheme(&self) -> &S {
        &self.scheme
    }
    pub fn scheme_mut(&mut self) -> &mut S {
        &mut self.scheme
    }
    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }
    pub fn terms(&self) -> &Terms {
        &self.terms
    }
    pub fn founder(&self) -> &InstitutionId {
        &self.founder
    }
    pub fn slot(&self) -> Slot {
        self.slot
    }
    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }
    pub fn envelopes(&self) -> Vec<Envelope> {
        self.log.iter().map(|e| e.envelope.clone()).collect()
    }
    pub fn authority(&self) -> &BTreeSet<InstitutionId> {
        &self.authority
    }
    pub fn has_joined(&self, o: &InstitutionId) -> bool {
        self.joined.contains_key(o) || self.authority.contains(o)
    }
    pub fn claimed(&self) -> &BTreeSet<InstitutionId> {
        &self.claimed
    }
    pub fn provisional(&self) -> &BTreeMap<InstitutionId, ProvisionalKey> {
        &self.provisional
    }
    pub fn irvs(&self) -> &BTreeMap<Tag, IrvRecord> {
        &self.irvs
    }
    pub fn pbrs(&self) -> &BTreeMap<AccountId, PbrRecord> {
        &self.pbrs
    }
    pub fn eligibility(&self) -> &BTreeMap<AccountId, bool> {
        &self.eligibility
    }
    pub fn is_eligible(&self, a: &AccountId) -> bool {
        self.eligibility.get(a).copied().unwrap_or(true)
    }
    pub fn issuance(&self) -> &BTreeMap<AccountId, Vec<Issuance>> {
        &self.issuance
    }
    pub fn settlement(&self) -> &SettlementShard {
        &self.settlement
    }
    pub fn settlement_slots(&self) -> &[Slot] {
        &self.settlement_slots
    }
    pub fn forked(&self) -> &BTreeMap<AccountId, f64> {
        &self.forked
    }
    pub fn transfers(&self) -> &BTreeMap<u64, PendingTransfer> {
        &self.transfers
    }
    pub fn obligations(&self) -> &BTreeMap<InstitutionId, Obligation> {
        &self.obligations
    }
    pub fn official_key(&self, o: &InstitutionId) -> Option<PublicKey> {
        self.config.official_keys.get(o).copied()
    }
    pub fn owner_key(&self, o: &InstitutionId) -> Option<OwnerKey> {
        self.official_key(o).map(|k| owner(&k))
    }

    /// Hash of the serialized public state.
    pub fn digest(&self) -> Tag {
        let bytes = serde_json::to_vec(self).expect("state serializes");
        Tag(super::crypto::sha256(&[&bytes]))
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Requests still unanswered after the grace window. Every authority
    /// holder shares the blame.
    pub fn liveness_violations(&self, now: Slot) -> Vec<LivenessViolation> {
        self.obligations
            .iter()
            .filter(|(_, ob)| ob.fulfilled.is_none() && now > ob.requested + self.config.grace_slots)
            .map(|(o, ob)| LivenessViolation {
                requester: o.clone(),
                requested: ob.requested,
                responsible: self.authority.iter().cloned().collect(),
            })
            .collect()
    }

    /// Sums per-account weight of the institution's still-eligible accounts.
    /// Accounts under a provisional request count for the claimed amount
    /// when it is not exaggerated and for nothing otherwise.
    pub fn residual(&self, o: &InstitutionId) -> Result<Residual, ProtocolError> {
        let mut r = Residual::default();
        for rec in self.ctx.array.accounts_at(o) {
            let a = &rec.account;
            if !self.is_eligible(a) || self.issuance.contains_key(a) {
                continue;
            }
            let actual = self.ctx.account_weight(a)?;
            let part = match self.pbrs.get(a) {
                Some(p) if matches!(p.status, PbrStatus::Pending | PbrStatus::Noticed) => {
                    if p.claimed <= actual {
                        r.confirmed.push(a.clone());
                        p.claimed
                    } else {
                        r.exaggerated.push(a.clone());
                        continue;
                    }
                }
                _ => actual,
            };
            r.total += part;
            r.parts.push((a.clone(), rec.currency.clone(), part));
        }
        Ok(r)
    }

    /// The value an IRV should have carried.
    pub fn correct_irv_weight(&self, irv: &IrvRecord) -> Result<f64, ProtocolError> {
        let actual = self.ctx.account_weight(&irv.account)?;
        Ok(match irv.basis {
            IrvBasis::Balance => actual,
            IrvBasis::Provisional { claimed } if claimed <= actual => claimed,
            IrvBasis::Provisional { .. } => 0.0,
        })
    }

    pub fn issued_totals(&self) -> IssuedTotals {
        let mut t = IssuedTotals::default();
        for recs in self.issuance.values() {
            for i in recs {
                t.add(&i.institution, &i.currency, i.amount);
            }
        }
        t
    }

    fn check_caps(&self, additions: &[(InstitutionId, Currency, f64)]) -> Result<(), ProtocolError> {
        let mut t = self.issued_totals();
        for (o, m, w) in additions {
            t.add(o, m, *w);
        }
        t.check(&self.terms.caps)
    }

    fn sender_institution(&self, pk: &PublicKey) -> Option<InstitutionId> {
        self.config
            .official_keys
            .iter()
            .find(|(_, k)| *k == pk)
            .map(|(o, _)| o.clone())
    }

    fn require_official(&self, pk: &PublicKey, o: &InstitutionId) -> Result<(), ProtocolError> {
        if self.config.official_keys.get(o) == Some(pk) {
            Ok(())
        } else {
            Err(ProtocolError::SignatureMismatch)
        }
    }

    fn remote_verifier(&self) -> Result<&InstitutionId, ProtocolError> {
        self.config
            .remote_verifier
            .as_ref()
            .ok_or(ProtocolError::NoRemoteVerifier)
    }

    /// Signed by the remote verifier's official key while it holds authority.
    fn require_verifier(&self, env: &Envelope, verifier: &InstitutionId) -> Result<PublicKey, ProtocolError> {
        let pk = verify_tag(&self.scheme, env)?;
        if self.remote_verifier()? != verifier {
            return Err(ProtocolError::Unauthorized);
        }
        self.require_official(&pk, verifier)?;
        if !self.authority.contains(verifier) {
            return Err(ProtocolError::Unauthorized);
        }
        Ok(pk)
    }

    /// Checks that presented factors equal the account's registered key.
    fn verify_account(&self, env: &Envelope) -> Result<(InstitutionId, AccountId, BTreeSet<String>), ProtocolError> {
        let (Signer::Account { institution, account }, Signature::Factors { factors }) = (&env.signer, &env.signature) else {
            return Err(ProtocolError::SignatureMismatch);
        };
        let rec = self
            .ctx
            .array
            .record(account)
            .map_err(|_| ProtocolError::UnknownAccount(account.clone()))?;
        if &rec.institution != institution {
            return Err(ProtocolError::UnknownAccount(account.clone()));
        }
        match self.ctx.key(account) {
            Some(k) if &k.factors == factors && !factors.is_empty() => {}
            _ => return Err(ProtocolError::SignatureMismatch),
        }
        Ok((institution.clone(), account.clone(), factors.clone()))
    }

    fn open_sealed<T: serde::de::DeserializeOwned>(&self, ct: &super::crypto::Ciphertext) -> Result<(InstitutionId, T), ProtocolError> {
        let (o, key) = self
            .provisional
            .iter()
            .find(|(_, k)| k.public == ct.recipient)
            .ok_or(ProtocolError::MissingProvisionalKey)?;
        let bytes = self.scheme.decrypt(&key.secret, ct)?;
        let v = serde_json::from_slice(&bytes).map_err(|e| ProtocolError::MalformedPayload(e.to_string()))?;
        Ok((o.clone(), v))
    }

    fn ensure_provisional(&mut self, o: &InstitutionId) {
        if !self.provisional.contains_key(o) {
            let (public, secret) = self.scheme.keygen(&format!("provisional/{}/{}", self.terms.nonce, o));
            self.provisional.insert(
                o.clone(),
                ProvisionalKey {
                    public,
                    secret,
                    delivered: false,
                },
            );
        }
    }

    fn record_account(&self, a: &AccountId) -> Result<&crate::fiat_ledger::AccountRecord, ProtocolError> {
        self.ctx
            .array
            .record(a)
            .map_err(|_| ProtocolError::UnknownAccount(a.clone()))
    }

    fn issue(&mut self, to: &OwnerKey, amount: f64, memo: String) {
        self.settlement.issue(to, amount, memo).expect("validated amount");
        self.settlement_slots.push(self.slot);
    }

    /// Validates and applies one message. On error nothing changes.
    pub fn apply(&mut self, env: Envelope) -> Result<Tag, ProtocolError> {
        if env.slot < self.slot {
            return Err(ProtocolError::SlotRegression {
                current: self.slot,
                got: env.slot,
            });
        }
        let hash = env.hash();
        if self.log.iter().any(|e| e.hash == hash) {
            return Err(ProtocolError::DuplicateMessage);
        }
        let prev_slot = self.slot;
        self.slot = env.slot;
        let result = match env.opcode() {
            Opcode::GEN => Err(ProtocolError::DuplicateGenesis),
            Opcode::REQ => self.on_req(&env),
            Opcode::INS => self.on_ins(&env),
            Opcode::CLM => self.on_clm(&env),
            Opcode::REV => self.on_rev(&env, hash),
            Opcode::IRV => self.on_irv(&env, hash),
            Opcode::PBR => self.on_pbr(&env),
            Opcode::NBE => self.on_nbe(&env),
            Opcode::RPV => self.on_rpv(&env),
            Opcode::RFA => self.on_rfa(&env),
            Opcode::ARA | Opcode::DIS => self.on_attestation(&env),
            Opcode::WDR => self.on_wdr(&env),
            Opcode::XFR => self.on_xfr(&env),
            Opcode::CLR => self.on_clr(&env),
        };
        match result {
            Ok(()) => {
                log::debug!("slot {} applied {} from {}", env.slot, env.opcode(), env.sender);
                self.log.push(LogEntry {
                    seq: self.log.len() as u64,
                    hash,
                    envelope: env,
                });
                Ok(hash)
            }
            Err(e) => {
                log::debug!("slot {} rejected {} from {}: {e}", env.slot, env.opcode(), env.sender);
                self.slot = prev_slot;
                Err(e)
            }
        }
    }

    /// Applies a slot's worth of messages in the deterministic order
    /// (sender, then message hash). Returns per-message outcomes in that order.
    pub fn apply_batch(&mut self, mut batch: Vec<Envelope>) -> Vec<(Opcode, Result<Tag, ProtocolError>)> {
        order_batch(&mut batch);
        batch
            .into_iter()
            .map(|e| {
                let op = e.opcode();
                (op, self.apply(e))
            })
            .collect()
    }

    fn on_req(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::REQ { institution: o } = &env.payload else { unreachable!() };
        let pk = verify_tag(&self.scheme, env)?;
        self.require_official(&pk, o)?;
        if self.authority.contains(o) {
            return Err(ProtocolError::AlreadyInstitutional(o.clone()));
        }
        if self.joined.contains_key(o) {
            return Err(ProtocolError::DuplicateRequest);
        }
        self.joined.insert(o.clone(), env.slot);
        self.obligations.insert(
            o.clone(),
            Obligation {
                requested: env.slot,
                fulfilled: None,
            },
        );
        Ok(())
    }

    fn on_ins(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::INS { recipient, recipient_key, cosigners } = &env.payload else { unreachable!() };
        let pk = verify_tag(&self.scheme, env)?;
        let sender = self
            .sender_institution(&pk)
            .filter(|o| self.authority.contains(o))
            .ok_or(ProtocolError::Unauthorized)?;
        if env.slot > self.terms.join_deadline {
            return Err(ProtocolError::DeadlinePassed {
                deadline: self.terms.join_deadline,
                slot: env.slot,
            });
        }
        if self.config.official_keys.get(recipient) != Some(recipient_key) {
            return Err(ProtocolError::SignatureMismatch);
        }
        if self.authority.contains(recipient) {
            return Err(ProtocolError::AlreadyInstitutional(recipient.clone()));
        }
        if self.config.cosign_required > 0 {
            let bare = Payload::INS {
                recipient: recipient.clone(),
                recipient_key: *recipient_key,
                cosigners: Vec::new(),
            };
            let bytes = signing_bytes(env.slot, &env.sender, &bare);
            let valid: BTreeSet<&InstitutionId> = cosigners
                .iter()
                .filter(|(o, t)| {
                    *o != sender
                        && self.authority.contains(o)
                        && self
                            .config
                            .official_keys
                            .get(o)
                            .is_some_and(|k| self.scheme.verify(k, &bytes, t))
                })
                .map(|(o, _)| o)
                .collect();
            if valid.len() < self.config.cosign_required {
                return Err(ProtocolError::InsufficientCosigners {
                    required: self.config.cosign_required,
                    got: valid.len(),
                });
            }
        }
        self.authority.insert(recipient.clone());
        self.joined.entry(recipient.clone()).or_insert(env.slot);
        if let Some(ob) = self.obligations.get_mut(recipient) {
            ob.fulfilled = Some(env.slot);
        }
        Ok(())
    }

    fn claim_preconditions(&self, pk: &PublicKey, o: &InstitutionId, slot: Slot) -> Result<(), ProtocolError> {
        self.require_official(pk, o)?;
        if !self.authority.contains(o) {
            return Err(ProtocolError::Unauthorized);
        }
        if self.claimed.contains(o) {
            return Err(ProtocolError::DoubleClaim(o.clone()));
        }
        if slot > self.terms.mint_shutoff {
            return Err(ProtocolError::PostShutoff {
                shutoff: self.terms.mint_shutoff,
                slot,
            });
        }
        Ok(())
    }

    fn check_residual(&self, o: &InstitutionId, claimed: f64) -> Result<Residual, ProtocolError> {
        let res = self.residual(o)?;
        if !claimed.is_finite() || !weights_match(claimed, res.total) {
            return Err(ProtocolError::WeightMismatch {
                claimed,
                expected: res.total,
            });
        }
        Ok(res)
    }

    fn finalize_claim(&mut self, o: &InstitutionId, res: Residual) {
        let key = self.owner_key(o).expect("official key checked");
        self.claimed.insert(o.clone());
        self.issue(&key, res.total, format!("{o} claim"));
        for (a, m, w) in res.parts {
            *self.forked.entry(a.clone()).or_insert(0.0) += w;
            self.issuance.entry(a).or_default().push(Issuance {
                path: IssuancePath::Institutional,
                institution: o.clone(),
                currency: m,
                amount: w,
                slot: self.slot,
            });
        }
        for a in res.confirmed {
            if let Some(p) = self.pbrs.get_mut(&a) {
                p.status = PbrStatus::Confirmed;
            }
        }
        for a in res.exaggerated {
            self.eligibility.insert(a.clone(), false);
            if let Some(p) = self.pbrs.get_mut(&a) {
                p.status = PbrStatus::Exaggerated;
            }
        }
    }

    fn on_clm(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::CLM { institution: o, weight } = &env.payload else { unreachable!() };
        let pk = verify_tag(&self.scheme, env)?;
        self.claim_preconditions(&pk, o, env.slot)?;
        if self.provisional.contains_key(o) {
            return Err(ProtocolError::AttestationRequired(o.clone()));
        }
        let res = self.check_residual(o, *weight)?;
        let adds: Vec<_> = res.parts.iter().map(|(_, m, w)| (o.clone(), m.clone(), *w)).collect();
        self.check_caps(&adds)?;
        self.finalize_claim(o, res);
        Ok(())
    }

    fn on_rev(&mut self, env: &Envelope, hash: Tag) -> Result<(), ProtocolError> {
        let Payload::REV { verifier, target, target_account } = &env.payload else { unreachable!() };
        let (inst, acc, _) = self.verify_account(env)?;
        if self.remote_verifier()? != verifier || &inst != verifier {
            return Err(ProtocolError::Unauthorized);
        }
        if self.has_joined(target) {
            return Err(ProtocolError::TargetAlreadyJoined(target.clone()));
        }
        let rec = self.record_account(target_account)?;
        if &rec.institution != target {
            return Err(ProtocolError::UnknownAccount(target_account.clone()));
        }
        if rec.identity != self.record_account(&acc)?.identity {
            return Err(ProtocolError::IdentityMismatch);
        }
        if self.issuance.contains_key(target_account)
            || !self.is_eligible(target_account)
            || self.pending_rev.contains_key(target_account)
            || self.pbrs.contains_key(target_account)
        {
            return Err(ProtocolError::DuplicateVerification(target_account.clone()));
        }
        self.ensure_provisional(target);
        self.pending_rev.insert(
            target_account.clone(),
            PendingRev {
                target: target.clone(),
                credited: acc,
                rev: hash,
            },
        );
        Ok(())
    }

    fn on_irv(&mut self, env: &Envelope, hash: Tag) -> Result<(), ProtocolError> {
        let Payload::IRV { verifier, weight, verifier_key, coordinates } = &env.payload else { unreachable!() };
        let pk = self.require_verifier(env, verifier)?;
        if verifier_key != &pk {
            return Err(ProtocolError::SignatureMismatch);
        }
        if !(*weight >= 0.0 && weight.is_finite()) {
            return Err(ProtocolError::MalformedPayload(format!("weight {weight}")));
        }
        let (sealed_to, c): (InstitutionId, Coordinates) = self.open_sealed(coordinates)?;
        if sealed_to != c.target {
            return Err(ProtocolError::MalformedPayload("coordinates sealed to another institution".into()));
        }
        if self.has_joined(&c.target) {
            return Err(ProtocolError::TargetAlreadyJoined(c.target.clone()));
        }
        if env.slot > self.terms.mint_shutoff {
            return Err(ProtocolError::PostShutoff {
                shutoff: self.terms.mint_shutoff,
                slot: env.slot,
            });
        }
        if self.issuance.contains_key(&c.account) {
            return Err(ProtocolError::DuplicateVerification(c.account.clone()));
        }
        let basis = match (self.pending_rev.get(&c.account), self.pbrs.get(&c.account)) {
            (Some(r), _) if r.target == c.target && r.credited == c.credited => IrvBasis::Balance,
            (None, Some(p)) if p.status == PbrStatus::Pending && p.target == c.target && p.credited == c.credited => {
                IrvBasis::Provisional { claimed: p.claimed }
            }
            _ => return Err(ProtocolError::NoPendingRequest(c.account.clone())),
        };
        let currency = self.record_account(&c.account)?.currency.clone();
        self.check_caps(&[(c.target.clone(), currency.clone(), *weight)])?;

        self.pending_rev.remove(&c.account);
        if let Some(p) = self.pbrs.get_mut(&c.account) {
            p.status = PbrStatus::Confirmed;
        }
        self.issue(&owner(&pk), *weight, format!("IRV {}", &hash.to_hex()[..16]));
        *self.forked.entry(c.credited.clone()).or_insert(0.0) += weight;
        self.eligibility.insert(c.account.clone(), false);
        self.issuance.entry(c.account.clone()).or_default().push(Issuance {
            path: IssuancePath::Remote { irv: hash },
            institution: c.target.clone(),
            currency,
            amount: *weight,
            slot: env.slot,
        });
        self.irvs.insert(
            hash,
            IrvRecord {
                target: c.target,
                account: c.account,
                credited: c.credited,
                weight: *weight,
                basis,
                status: IrvStatus::Open,
            },
        );
        Ok(())
    }

    fn on_pbr(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::PBR { identity, target, target_account, claimed, currency, presented } = &env.payload else { unreachable!() };
        let (inst, acc, _) = self.verify_account(env)?;
        if self.remote_verifier()? != &inst {
            return Err(ProtocolError::Unauthorized);
        }
        let rec = self.record_account(target_account)?;
        if &rec.institution != target {
            return Err(ProtocolError::UnknownAccount(target_account.clone()));
        }
        if &rec.identity != identity || &self.record_account(&acc)?.identity != identity {
            return Err(ProtocolError::IdentityMismatch);
        }
        if &rec.currency != currency || !(*claimed >= 0.0 && claimed.is_finite()) {
            return Err(ProtocolError::MalformedPayload("bad claim or currency".into()));
        }
        let overlap = self
            .ctx
            .key(target_account)
            .map(|k| k.overlap(presented))
            .unwrap_or_default();
        if overlap.is_empty() {
            return Err(ProtocolError::NoFactorOverlap);
        }
        if self.issuance.contains_key(target_account) || !self.is_eligible(target_account) || self.claimed.contains(target) {
            return Err(ProtocolError::AlreadySettled(target_account.clone()));
        }
        if self.has_joined(target) {
            return Err(ProtocolError::TargetAlreadyJoined(target.clone()));
        }
        if self.pbrs.contains_key(target_account) || self.pending_rev.contains_key(target_account) {
            return Err(ProtocolError::DuplicateRequest);
        }
        self.ensure_provisional(target);
        self.pbrs.insert(
            target_account.clone(),
            PbrRecord {
                identity: identity.clone(),
                target: target.clone(),
                claimed: *claimed,
                currency: currency.clone(),
                credited: acc,
                overlap,
                status: PbrStatus::Pending,
            },
        );
        Ok(())
    }

    fn on_nbe(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::NBE { verifier, sealed } = &env.payload else { unreachable!() };
        self.require_verifier(env, verifier)?;
        let (sealed_to, n): (InstitutionId, ExaggerationNotice) = self.open_sealed(sealed)?;
        let p = self
            .pbrs
            .get(&n.account)
            .filter(|p| p.status == PbrStatus::Pending && p.target == n.target && sealed_to == n.target && p.claimed == n.claimed)
            .ok_or_else(|| ProtocolError::NoPendingRequest(n.account.clone()))?;
        let actual = self.ctx.account_weight(&n.account)?;
        if !(n.claimed > n.actual) || !weights_match(n.actual, actual) {
            return Err(ProtocolError::NBEInvalid {
                claimed: p.claimed,
                actual: n.actual,
            });
        }
        self.eligibility.insert(n.account.clone(), false);
        self.pbrs.get_mut(&n.account).expect("checked").status = PbrStatus::Exaggerated;
        Ok(())
    }

    fn on_rpv(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::RPV { verifier, sealed } = &env.payload else { unreachable!() };
        self.require_verifier(env, verifier)?;
        let (sealed_to, n): (InstitutionId, ProvisionalNotice) = self.open_sealed(sealed)?;
        if !self.authority.contains(&n.target) || sealed_to != n.target {
            return Err(ProtocolError::NotInstitutional(n.target.clone()));
        }
        let p = self
            .pbrs
            .get(&n.account)
            .filter(|p| p.status == PbrStatus::Pending && p.target == n.target && p.claimed == n.claimed)
            .ok_or_else(|| ProtocolError::NoPendingRequest(n.account.clone()))?;
        if n.overlap.is_empty() || n.overlap != p.overlap || n.identity != p.identity || n.currency != p.currency {
            return Err(ProtocolError::NoFactorOverlap);
        }
        self.pbrs.get_mut(&n.account).expect("checked").status = PbrStatus::Noticed;
        Ok(())
    }

    fn on_rfa(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::RFA { verifier, institution: o, sealed_secret } = &env.payload else { unreachable!() };
        self.require_verifier(env, verifier)?;
        if !self.authority.contains(o) {
            return Err(ProtocolError::NotInstitutional(o.clone()));
        }
        if !self.provisional.contains_key(o) {
            return Err(ProtocolError::MissingProvisionalKey);
        }
        if self.config.official_keys.get(o) != Some(&sealed_secret.recipient) {
            return Err(ProtocolError::SignatureMismatch);
        }
        if self.pbrs.values().any(|p| &p.target == o && p.status == PbrStatus::Pending) {
            return Err(ProtocolError::PendingRequests(o.clone()));
        }
        self.provisional.get_mut(o).expect("checked").delivered = true;
        Ok(())
    }

    fn on_attestation(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let (o, tag, disputes, residual) = match &env.payload {
            Payload::ARA { institution, provisional_tag, residual } => (institution, provisional_tag, &[][..], *residual),
            Payload::DIS { institution, provisional_tag, disputes, residual } => (institution, provisional_tag, &disputes[..], *residual),
            _ => unreachable!(),
        };
        let pk = verify_tag(&self.scheme, env)?;
        self.claim_preconditions(&pk, o, env.slot)?;
        let prov = self
            .provisional
            .get(o)
            .filter(|p| p.delivered)
            .ok_or(ProtocolError::MissingProvisionalKey)?;
        let disputed: Vec<Tag> = disputes.iter().map(|d| d.irv).collect();
        if env.opcode() == Opcode::DIS && disputed.is_empty() {
            return Err(ProtocolError::InvalidDispute("DIS with no disputes".into()));
        }
        if !self.scheme.verify(&prov.public, &attestation_bytes(o, &disputed), tag) {
            return Err(ProtocolError::SignatureMismatch);
        }
        let mut by_irv: BTreeMap<Tag, f64> = BTreeMap::new();
        for d in disputes {
            if by_irv.insert(d.irv, d.recomputed).is_some() {
                return Err(ProtocolError::InvalidDispute("duplicate dispute".into()));
            }
        }
        let mut corrections = Vec::new();
        let mut adds = Vec::new();
        for (h, irv) in self.irvs.iter().filter(|(_, r)| &r.target == o && r.status == IrvStatus::Open) {
            let correct = self.correct_irv_weight(irv)?;
            let matches = weights_match(irv.weight, correct);
            match by_irv.remove(h) {
                None if matches => {}
                None => return Err(ProtocolError::RecomputationMismatch(*h)),
                Some(_) if matches => return Err(ProtocolError::InvalidDispute(format!("IRV {h} is correct"))),
                Some(r) if !weights_match(r, correct) => return Err(ProtocolError::RecomputationMismatch(*h)),
                Some(_) => {
                    let currency = self.record_account(&irv.account)?.currency.clone();
                    adds.push((o.clone(), currency, correct - irv.weight));
                    corrections.push((*h, correct));
                }
            }
        }
        if let Some(h) = by_irv.keys().next() {
            return Err(ProtocolError::InvalidDispute(format!("IRV {h} is not an open issuance for {o}")));
        }
        if self.pbrs.values().any(|p| &p.target == o && p.status == PbrStatus::Pending) {
            return Err(ProtocolError::PendingRequests(o.clone()));
        }
        let res = self.check_residual(o, residual)?;
        adds.extend(res.parts.iter().map(|(_, m, w)| (o.clone(), m.clone(), *w)));
        self.check_caps(&adds)?;

        let rv = self.remote_verifier()?.clone();
        let rv_key = self.owner_key(&rv).expect("verifier has a key");
        for (h, correct) in corrections {
            let irv = self.irvs.get(&h).expect("listed above").clone();
            let delta = irv.weight - correct;
            let held = self.forked.get(&irv.credited).copied().unwrap_or(0.0);
            if delta > 0.0 {
                let want = delta.min(held);
                let taken = self.settlement.reclaim(&rv_key, want, format!("DIS {}", &h.to_hex()[..16]))?;
                self.settlement_slots.push(self.slot);
                *self.forked.entry(irv.credited.clone()).or_insert(0.0) -= taken;
                if delta > want {
                    *self.settlement.liabilities.entry(rv_key.clone()).or_insert(0.0) += delta - want;
                }
            } else {
                self.issue(&rv_key, -delta, format!("DIS {}", &h.to_hex()[..16]));
                *self.forked.entry(irv.credited.clone()).or_insert(0.0) -= delta;
            }
            for i in self.issuance.get_mut(&irv.account).into_iter().flatten() {
                if i.path == (IssuancePath::Remote { irv: h }) {
                    i.amount = correct;
                }
            }
            self.irvs.get_mut(&h).expect("listed").status = IrvStatus::Corrected;
        }
        for r in self.irvs.values_mut().filter(|r| &r.target == o && r.status == IrvStatus::Open) {
            r.status = IrvStatus::Attested;
        }
        self.finalize_claim(o, res);
        Ok(())
    }

    fn on_wdr(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::WDR { identity, institution, account, destination, quantity, currency } = &env.payload else { unreachable!() };
        let (inst, acc, _) = self.verify_account(env)?;
        if &inst != institution || &acc != account || &self.record_account(&acc)?.identity != identity {
            return Err(ProtocolError::IdentityMismatch);
        }
        if !(*quantity > 0.0 && quantity.is_finite()) || currency != &self.ctx.rates.numeraire {
            return Err(ProtocolError::MalformedPayload("bad quantity or currency".into()));
        }
        let held = self.forked.get(&acc).copied().unwrap_or(0.0);
        if held < *quantity {
            return Err(ProtocolError::InsufficientBalance {
                available: held,
                requested: *quantity,
            });
        }
        let from_key = self.official_key(&inst).ok_or(ProtocolError::Unauthorized)?;
        let (to_key, to) = match destination {
            Destination::Key { key } => {
                if !self.scheme.is_registered(key) {
                    return Err(ProtocolError::UnknownRecipientKey);
                }
                (*key, None)
            }
            Destination::Account { institution: o2, account: a2 } => {
                let rec = self.record_account(a2)?;
                if &rec.institution != o2 {
                    return Err(ProtocolError::UnknownAccount(a2.clone()));
                }
                if o2 == &inst {
                    *self.forked.get_mut(&acc).expect("held checked") -= quantity;
                    *self.forked.entry(a2.clone()).or_insert(0.0) += quantity;
                    return Ok(());
                }
                let k = self
                    .official_key(o2)
                    .filter(|_| self.authority.contains(o2))
                    .ok_or(ProtocolError::UnknownRecipientKey)?;
                (k, Some((o2.clone(), a2.clone())))
            }
        };
        *self.forked.get_mut(&acc).expect("held checked") -= quantity;
        let z = self.next_z;
        self.next_z += 1;
        self.transfers.insert(
            z,
            PendingTransfer {
                from_institution: inst,
                from_key,
                to_key,
                to,
                quantity: *quantity,
                status: TransferStatus::Debited,
            },
        );
        Ok(())
    }

    fn on_xfr(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::XFR { from_key, quantity, to_key, z, .. } = &env.payload else { unreachable!() };
        let pk = verify_tag(&self.scheme, env)?;
        let t = self
            .transfers
            .get(z)
            .filter(|t| {
                t.status == TransferStatus::Debited && &t.from_key == from_key && &pk == from_key && &t.to_key == to_key && t.quantity == *quantity
            })
            .ok_or(ProtocolError::UnknownTransfer(*z))?;
        let settled = if t.to.is_some() { TransferStatus::Settled } else { TransferStatus::Cleared };
        self.settlement
            .transfer(&owner(from_key), &owner(to_key), *quantity, format!("z={z}"))
            .map_err(|e| match e {
                LedgerError::InsufficientBalance { available, requested, .. } => {
                    ProtocolError::InsufficientBalance { available, requested }
                }
                other => other.into(),
            })?;
        self.settlement_slots.push(self.slot);
        self.transfers.get_mut(z).expect("checked").status = settled;
        Ok(())
    }

    fn on_clr(&mut self, env: &Envelope) -> Result<(), ProtocolError> {
        let Payload::CLR { from, to, z, sealed } = &env.payload else { unreachable!() };
        let pk = verify_tag(&self.scheme, env)?;
        self.require_official(&pk, from)?;
        let t = self
            .transfers
            .get(z)
            .filter(|t| t.status == TransferStatus::Settled && &t.from_institution == from)
            .ok_or(ProtocolError::UnknownTransfer(*z))?;
        let Some((o2, a2)) = t.to.clone() else {
            return Err(ProtocolError::UnknownTransfer(*z));
        };
        if &o2 != to || self.official_key(to) != Some(sealed.recipient) {
            return Err(ProtocolError::UnknownTransfer(*z));
        }
        *self.forked.entry(a2).or_insert(0.0) += t.quantity;
        self.transfers.get_mut(z).expect("checked").status = TransferStatus::Cleared;
        Ok(())
    }
}

/// Running issuance sums by institution, currency and pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IssuedTotals {
    pub institution: BTreeMap<InstitutionId, f64>,
    pub currency: BTreeMap<Currency, f64>,
    pub pair: BTreeMap<(Currency, InstitutionId), f64>,
}

impl IssuedTotals {
    fn add(&mut self, o: &InstitutionId, m: &Currency, w: f64) {
        *self.institution.entry(o.clone()).or_insert(0.0) += w;
        *self.currency.entry(m.clone()).or_insert(0.0) += w;
        *self.pair.entry((m.clone(), o.clone())).or_insert(0.0) += w;
    }

    pub fn check(&self, caps: &Caps) -> Result<(), ProtocolError> {
        let over = |total: f64, cap: f64| total > cap && !weights_match(total, cap);
        for (o, t) in &self.institution {
            if let Some(c) = caps.per_institution.get(o) {
                if over(*t, *c) {
                    return Err(ProtocolError::CapExceeded(format!("institution {o}: {t} > {c}")));
                }
            }
        }
        for (m, t) in &self.currency {
            if let Some(c) = caps.per_currency.get(m) {
                if over(*t, *c) {
                    return Err(ProtocolError::CapExceeded(format!("currency {m}: {t} > {c}")));
                }
            }
        }
        for ((m, o), t) in &self.pair {
            if let Some(c) = caps.pair(m, o) {
                if over(*t, c) {
                    return Err(ProtocolError::CapExceeded(format!("{m} at {o}: {t} > {c}")));
                }
            }
        }
        Ok(())
    }
}

/// Sorts a slot's messages by sender, then message hash.
pub fn order_batch(batch: &mut [Envelope]) {
    batch.sort_by_cached_key(|e| (e.slot, e.sender.clone(), e.hash()));
}

fn verify_tag<S: SignatureScheme>(scheme: &S, env: &Envelope) -> Result<PublicKey, ProtocolError> {
    let (Signer::Key { key }, Signature::Tag { tag }) = (&env.signer, &env.signature) else {
        return Err(ProtocolError::SignatureMismatch);
    };
    if scheme.verify(key, &env.signing_bytes(), tag) {
        Ok(*key)
    } else {
        Err(ProtocolError::SignatureMismatch)
    }
}

impl From<CryptoError> for ProtocolError {
    fn from(e: CryptoError) -> Self {
        ProtocolError::Crypto(e.to_string())
    }
}
