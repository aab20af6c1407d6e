//! Custodial accounts, exchange rates, staking periods, weight formulas and
//! the forked-fiat settlement shard.

use crate::population_model::{AgentId, IdentityId, IdentityMap};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use thiserror::Error;

pub type Slot = u64;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LedgerError {
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("duplicate account {0}")]
    DuplicateAccount(AccountId),
    #[error("insufficient balance in {account}: {available} available, {requested} requested")]
    InsufficientBalance {
        account: String,
        available: f64,
        requested: f64,
    },
    #[error("currency mismatch: {0} vs {1}")]
    CurrencyMismatch(Currency, Currency),
    #[error("no rate for {0} at slot {1}")]
    MissingRate(Currency, Slot),
    #[error("account {0} has no verified balance at slot {1}")]
    MissingSlotData(AccountId, Slot),
    #[error("slot {slot} is outside the life of account {account}")]
    OutsideLifetime { account: AccountId, slot: Slot },
    #[error("identity {0} has no owner")]
    UnknownIdentity(IdentityId),
    #[error("invalid period count {0}")]
    InvalidP(u32),
    #[error("invalid periods: {0}")]
    InvalidPeriods(String),
    #[error("invalid quantity {0}")]
    InvalidQuantity(f64),
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("fixture: {0}")]
    Fixture(String),
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(InstitutionId);
string_id!(AccountId);
string_id!(Currency);
string_id!(OwnerKey);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlotBalance {
    Known(f64),
    Unknown,
}

impl SlotBalance {
    pub fn known(self) -> Option<f64> {
        match self {
            SlotBalance::Known(b) => Some(b),
            SlotBalance::Unknown => None,
        }
    }
}

/// `(b + |b|)/2`.
pub fn clamp_nonnegative(b: f64) -> f64 {
    (b + b.abs()) / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account: AccountId,
    pub institution: InstitutionId,
    pub identity: IdentityId,
    pub currency: Currency,
    pub created: Slot,
    /// First slot after the account closed.
    pub terminated: Option<Slot>,
    balances: BTreeMap<Slot, f64>,
}

impl AccountRecord {
    pub fn alive_at(&self, s: Slot) -> bool {
        s >= self.created && self.terminated.is_none_or(|t| s < t)
    }

    pub fn balance(&self, s: Slot) -> SlotBalance {
        match self.balances.get(&s) {
            Some(b) => SlotBalance::Known(*b),
            None => SlotBalance::Unknown,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: AccountId,
    pub to: AccountId,
    pub quantity: f64,
    pub slot: Slot,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CustodialArray {
    accounts: BTreeMap<AccountId, AccountRecord>,
    /// Outgoing quantity already authorized per account and slot.
    authorized: BTreeMap<(AccountId, Slot), f64>,
    transfers: Vec<Transfer>,
}

impl CustodialArray {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_account(
        &mut self,
        account: AccountId,
        institution: InstitutionId,
        identity: IdentityId,
        currency: Currency,
        created: Slot,
    ) -> Result<(), LedgerError> {
        if self.accounts.contains_key(&account) {
            return Err(LedgerError::DuplicateAccount(account));
        }
        self.accounts.insert(
            account.clone(),
            AccountRecord {
                account,
                institution,
                identity,
                currency,
                created,
                terminated: None,
                balances: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn terminate(&mut self, account: &AccountId, at: Slot) -> Result<(), LedgerError> {
        let rec = self.record_mut(account)?;
        rec.terminated = Some(at);
        rec.balances.retain(|s, _| *s < at);
        Ok(())
    }

    pub fn record(&self, account: &AccountId) -> Result<&AccountRecord, LedgerError> {
        self.accounts
            .get(account)
            .ok_or_else(|| LedgerError::UnknownAccount(account.clone()))
    }

    fn record_mut(&mut self, account: &AccountId) -> Result<&mut AccountRecord, LedgerError> {
        self.accounts
            .get_mut(account)
            .ok_or_else(|| LedgerError::UnknownAccount(account.clone()))
    }

    pub fn accounts(&self) -> impl Iterator<Item = &AccountRecord> {
        self.accounts.values()
    }

    pub fn accounts_at<'a>(&'a self, o: &'a InstitutionId) -> impl Iterator<Item = &'a AccountRecord> {
        self.accounts.values().filter(move |r| &r.institution == o)
    }

    pub fn institutions(&self) -> Vec<InstitutionId> {
        let mut v: Vec<InstitutionId> = self.accounts.values().map(|r| r.institution.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn set_balance(&mut self, account: &AccountId, s: Slot, b: SlotBalance) -> Result<(), LedgerError> {
        let rec = self.record_mut(account)?;
        if !rec.alive_at(s) {
            return Err(LedgerError::OutsideLifetime {
                account: account.clone(),
                slot: s,
            });
        }
        match b {
            SlotBalance::Known(v) => rec.balances.insert(s, v),
            SlotBalance::Unknown => rec.balances.remove(&s),
        };
        Ok(())
    }

    pub fn balance(&self, account: &AccountId, s: Slot) -> Result<SlotBalance, LedgerError> {
        Ok(self.record(account)?.balance(s))
    }

    fn known(&self, account: &AccountId, s: Slot) -> Result<f64, LedgerError> {
        self.balance(account, s)?
            .known()
            .ok_or_else(|| LedgerError::MissingSlotData(account.clone(), s))
    }

    /// Authorizes `q` from `from` to `to` for slot `s+1`. The sum authorized
    /// out of an account for a slot may not exceed its slot-`s` balance.
    /// Both accounts' slot-`s+1` balances start from their slot-`s` values
    /// the first time they are touched. Nothing changes on error.
    pub fn apply_transfer(&mut self, from: &AccountId, to: &AccountId, q: f64, s: Slot) -> Result<(), LedgerError> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(LedgerError::InvalidQuantity(q));
        }
        let (src, dst) = (self.record(from)?, self.record(to)?);
        if src.currency != dst.currency {
            return Err(LedgerError::CurrencyMismatch(src.currency.clone(), dst.currency.clone()));
        }
        if q == 0.0 {
            return Ok(());
        }
        for (acc, rec) in [(from, src), (to, dst)] {
            if !rec.alive_at(s) || !rec.alive_at(s + 1) {
                return Err(LedgerError::OutsideLifetime {
                    account: acc.clone(),
                    slot: s + 1,
                });
            }
        }
        let available = self.known(from, s)?;
        let spent = self.authorized.get(&(from.clone(), s)).copied().unwrap_or(0.0);
        if spent + q > available {
            return Err(LedgerError::InsufficientBalance {
                account: from.to_string(),
                available: available - spent,
                requested: q,
            });
        }
        let to_base = self.known(to, s)?;
        let from_next = self.balance(from, s + 1)?.known().unwrap_or(available);
        let to_next = if from == to {
            from_next
        } else {
            self.balance(to, s + 1)?.known().unwrap_or(to_base)
        };
        *self.authorized.entry((from.clone(), s)).or_insert(0.0) += q;
        if from == to {
            self.record_mut(from)?.balances.insert(s + 1, from_next);
        } else {
            self.record_mut(from)?.balances.insert(s + 1, from_next - q);
            self.record_mut(to)?.balances.insert(s + 1, to_next + q);
        }
        self.transfers.push(Transfer {
            from: from.clone(),
            to: to.clone(),
            quantity: q,
            slot: s,
        });
        Ok(())
    }

    /// Copies slot-`s` balances forward wherever slot `s+1` is still unset.
    pub fn carry_forward(&mut self, s: Slot) {
        for rec in self.accounts.values_mut() {
            if let Some(b) = rec.balances.get(&s).copied() {
                if rec.alive_at(s + 1) {
                    rec.balances.entry(s + 1).or_insert(b);
                }
            }
        }
    }

    pub fn outgoing(&self, account: &AccountId, s: Slot) -> f64 {
        self.authorized.get(&(account.clone(), s)).copied().unwrap_or(0.0)
    }

    pub fn transfers(&self) -> &[Transfer] {
        &self.transfers
    }
}

/// Numeraire prices per currency and slot. The numeraire is always 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRates {
    pub numeraire: Currency,
    rates: BTreeMap<(Currency, Slot), f64>,
}

impl ExchangeRates {
    pub fn new(numeraire: Currency) -> Self {
        ExchangeRates {
            numeraire,
            rates: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, m: Currency, s: Slot, price: f64) -> Result<(), LedgerError> {
        if !(price > 0.0 && price.is_finite()) {
            return Err(LedgerError::InvalidRate(price));
        }
        self.rates.insert((m, s), price);
        Ok(())
    }

    pub fn rate(&self, m: &Currency, s: Slot) -> Result<f64, LedgerError> {
        if m == &self.numeraire {
            return Ok(1.0);
        }
        self.rates
            .get(&(m.clone(), s))
            .copied()
            .ok_or_else(|| LedgerError::MissingRate(m.clone(), s))
    }

    /// The rates in force at `s`, frozen for the rest of a run.
    pub fn snapshot(&self, s: Slot) -> BTreeMap<Currency, f64> {
        self.rates
            .iter()
            .filter(|((_, t), _)| *t == s)
            .map(|((m, _), p)| (m.clone(), *p))
            .collect()
    }
}

/// Half-open slot intervals `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakingPeriods {
    periods: Vec<(Slot, Slot)>,
}

impl StakingPeriods {
    pub fn new(mut periods: Vec<(Slot, Slot)>) -> Result<Self, LedgerError> {
        periods.sort();
        for &(a, b) in &periods {
            if a >= b {
                return Err(LedgerError::InvalidPeriods(format!("empty period [{a}, {b})")));
            }
        }
        for w in periods.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(LedgerError::InvalidPeriods(format!("{:?} overlaps {:?}", w[0], w[1])));
            }
        }
        if periods.is_empty() {
            return Err(LedgerError::InvalidPeriods("no periods".into()));
        }
        Ok(StakingPeriods { periods })
    }

    /// `count` consecutive periods of `len` slots starting at `start`.
    pub fn uniform(start: Slot, len: Slot, count: u64) -> Result<Self, LedgerError> {
        Self::new((0..count).map(|i| (start + i * len, start + (i + 1) * len)).collect())
    }

    pub fn periods(&self) -> &[(Slot, Slot)] {
        &self.periods
    }

    pub fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.periods.iter().flat_map(|&(a, b)| a..b)
    }

    pub fn slot_count(&self) -> u64 {
        self.periods.iter().map(|(a, b)| b - a).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityPolicy {
    /// Unknown slots count as zero.
    #[default]
    ClampUnknown,
    /// A period with any unknown slot contributes nothing.
    FullyVerifiedOnly,
}

/// Mean over period slots of balance times rate. Every slot must be known.
pub fn account_weight(
    array: &CustodialArray,
    account: &AccountId,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
) -> Result<f64, LedgerError> {
    let rec = array.record(account)?;
    let mut sum = 0.0;
    for s in periods.slots() {
        let b = rec
            .balance(s)
            .known()
            .ok_or_else(|| LedgerError::MissingSlotData(account.clone(), s))?;
        sum += b * rates.rate(&rec.currency, s)?;
    }
    Ok(sum / periods.slot_count() as f64)
}

/// Weight from whatever is verified so far: each slot value is clamped at
/// zero and unknown slots are handled per `policy`.
pub fn provisional_account_weight(
    array: &CustodialArray,
    account: &AccountId,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
    policy: EligibilityPolicy,
) -> Result<f64, LedgerError> {
    let rec = array.record(account)?;
    let mut sum = 0.0;
    for &(a, b) in periods.periods() {
        let mut part = 0.0;
        let mut complete = true;
        for s in a..b {
            match rec.balance(s) {
                SlotBalance::Known(v) => part += clamp_nonnegative(v) * rates.rate(&rec.currency, s)?,
                SlotBalance::Unknown => complete = false,
            }
        }
        if complete || policy == EligibilityPolicy::ClampUnknown {
            sum += part;
        }
    }
    Ok(sum / periods.slot_count() as f64)
}

/// Extra weight owed once more slots are verified. Never negative, because
/// clamped per-slot values only grow as unknown slots become known. A
/// positive supplement also earns `reward_per_request`.
pub fn supplementary_weight(
    array: &CustodialArray,
    account: &AccountId,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
    prior_issuance: f64,
    policy: EligibilityPolicy,
    reward_per_request: f64,
) -> Result<f64, LedgerError> {
    let now = provisional_account_weight(array, account, periods, rates, policy)?;
    let extra = (now - prior_issuance).max(0.0);
    Ok(if extra > 0.0 { extra + reward_per_request } else { 0.0 })
}

/// Sum of fork-slot balance times rate over the identity's accounts.
pub fn idealized_weight(
    array: &CustodialArray,
    identity: &IdentityId,
    fork_slot: Slot,
    rates: &ExchangeRates,
) -> Result<f64, LedgerError> {
    let mut sum = 0.0;
    for rec in array.accounts().filter(|r| &r.identity == identity) {
        let b = rec
            .balance(fork_slot)
            .known()
            .ok_or_else(|| LedgerError::MissingSlotData(rec.account.clone(), fork_slot))?;
        sum += b * rates.rate(&rec.currency, fork_slot)?;
    }
    Ok(sum)
}

/// Eligibility per account; accounts missing from the map are eligible.
pub type Eligibility = BTreeMap<AccountId, bool>;

pub fn institution_weight(
    array: &CustodialArray,
    institution: &InstitutionId,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
    eligibility: &Eligibility,
) -> Result<f64, LedgerError> {
    let mut sum = 0.0;
    for rec in array.accounts_at(institution) {
        if eligibility.get(&rec.account).copied().unwrap_or(true) {
            sum += account_weight(array, &rec.account, periods, rates)?;
        }
    }
    Ok(sum)
}

/// Per-currency split of [`institution_weight`].
pub fn institution_weight_by_currency(
    array: &CustodialArray,
    institution: &InstitutionId,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
    eligibility: &Eligibility,
) -> Result<BTreeMap<Currency, f64>, LedgerError> {
    let mut out = BTreeMap::new();
    for rec in array.accounts_at(institution) {
        if eligibility.get(&rec.account).copied().unwrap_or(true) {
            *out.entry(rec.currency.clone()).or_insert(0.0) += account_weight(array, &rec.account, periods, rates)?;
        }
    }
    Ok(out)
}

/// Every account's identity must resolve in `map`.
pub fn agent_weight(
    array: &CustodialArray,
    agent: &AgentId,
    map: &IdentityMap,
    periods: &StakingPeriods,
    rates: &ExchangeRates,
) -> Result<f64, LedgerError> {
    let mut sum = 0.0;
    for rec in array.accounts() {
        let owner = map
            .owner(&rec.identity)
            .ok_or_else(|| LedgerError::UnknownIdentity(rec.identity.clone()))?;
        if owner == agent {
            sum += account_weight(array, &rec.account, periods, rates)?;
        }
    }
    Ok(sum)
}

/// `|Σb - c·n| / n` with integer arithmetic in the numerator.
pub fn consistency_error(balances: &[i64], correct: i64) -> f64 {
    let n = balances.len() as i128;
    let sum: i128 = balances.iter().map(|b| *b as i128).sum();
    (sum - correct as i128 * n).abs() as f64 / n as f64
}

/// Builds `P` equal staking periods in which only the first carries a unit
/// fault and reports the deviation of the averaged balance.
pub fn synthetic_consistency_error(p: u32) -> Result<f64, LedgerError> {
    synthetic_consistency_error_with(p, 1, 10)
}

pub fn synthetic_consistency_error_with(p: u32, period_len: u32, correct: i64) -> Result<f64, LedgerError> {
    if p == 0 || period_len == 0 {
        return Err(LedgerError::InvalidP(p));
    }
    let mut balances = Vec::with_capacity((p * period_len) as usize);
    for period in 0..p {
        let v = if period == 0 { correct - 1 } else { correct };
        balances.extend(std::iter::repeat_n(v, period_len as usize));
    }
    Ok(consistency_error(&balances, correct))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SettlementEntry {
    Issue { to: OwnerKey, amount: f64, memo: String },
    Transfer { from: OwnerKey, to: OwnerKey, amount: f64, memo: String },
    Reclaim { from: OwnerKey, amount: f64, shortfall: f64, memo: String },
}

/// Forked-fiat balances by owner key, with an append-only log.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SettlementShard {
    balances: BTreeMap<OwnerKey, f64>,
    log: Vec<SettlementEntry>,
    pub issued_total: f64,
    pub reclaimed_total: f64,
    /// Amounts that could not be reclaimed because the owner had spent them.
    pub liabilities: BTreeMap<OwnerKey, f64>,
}

impl SettlementShard {
    pub fn balance(&self, k: &OwnerKey) -> f64 {
        self.balances.get(k).copied().unwrap_or(0.0)
    }

    pub fn balances(&self) -> &BTreeMap<OwnerKey, f64> {
        &self.balances
    }

    pub fn log(&self) -> &[SettlementEntry] {
        &self.log
    }

    pub fn supply(&self) -> f64 {
        self.balances.values().sum()
    }

    pub fn issue(&mut self, to: &OwnerKey, amount: f64, memo: impl Into<String>) -> Result<(), LedgerError> {
        if !(amount >= 0.0 && amount.is_finite()) {
            return Err(LedgerError::InvalidQuantity(amount));
        }
        *self.balances.entry(to.clone()).or_insert(0.0) += amount;
        self.issued_total += amount;
        self.log.push(SettlementEntry::Issue {
            to: to.clone(),
            amount,
            memo: memo.into(),
        });
        Ok(())
    }

    pub fn transfer(&mut self, from: &OwnerKey, to: &OwnerKey, amount: f64, memo: impl Into<String>) -> Result<(), LedgerError> {
        if !(amount >= 0.0 && amount.is_finite()) {
            return Err(LedgerError::InvalidQuantity(amount));
        }
        let have = self.balance(from);
        if have < amount {
            return Err(LedgerError::InsufficientBalance {
                account: from.to_string(),
                available: have,
                requested: amount,
            });
        }
        *self.balances.entry(from.clone()).or_insert(0.0) -= amount;
        *self.balances.entry(to.clone()).or_insert(0.0) += amount;
        self.log.push(SettlementEntry::Transfer {
            from: from.clone(),
            to: to.clone(),
            amount,
            memo: memo.into(),
        });
        Ok(())
    }

    /// Takes back over-issued weight. Whatever the owner no longer holds
    /// is booked as a liability.
    pub fn reclaim(&mut self, from: &OwnerKey, amount: f64, memo: impl Into<String>) -> Result<f64, LedgerError> {
        if !(amount >= 0.0 && amount.is_finite()) {
            return Err(LedgerError::InvalidQuantity(amount));
        }
        let taken = amount.min(self.balance(from));
        let shortfall = amount - taken;
        *self.balances.entry(from.clone()).or_insert(0.0) -= taken;
        self.reclaimed_total += taken;
        if shortfall > 0.0 {
            *self.liabilities.entry(from.clone()).or_insert(0.0) += shortfall;
        }
        self.log.push(SettlementEntry::Reclaim {
            from: from.clone(),
            amount: taken,
            shortfall,
            memo: memo.into(),
        });
        Ok(taken)
    }

    /// Line-delimited JSON, one entry per line.
    pub fn write_log<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct CustodialRow {
    institution: String,
    account: String,
    identity: String,
    currency: String,
    slot: Slot,
    balance: String,
}

/// Reads `institution,account,identity,currency,slot,balance` rows. A
/// balance of `?` or an empty field is an unknown slot. An account lives
/// from its first listed slot to one past its last.
pub fn read_custodial_csv<R: Read>(reader: R) -> Result<CustodialArray, LedgerError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for r in rdr.deserialize::<CustodialRow>() {
        rows.push(r.map_err(|e| LedgerError::Fixture(e.to_string()))?);
    }
    let mut life: BTreeMap<String, (Slot, Slot)> = BTreeMap::new();
    for r in &rows {
        let e = life.entry(r.account.clone()).or_insert((r.slot, r.slot));
        e.0 = e.0.min(r.slot);
        e.1 = e.1.max(r.slot);
    }
    let mut array = CustodialArray::new();
    for r in &rows {
        let acc = AccountId::new(&r.account);
        match array.record(&acc) {
            Ok(rec) => {
                if rec.institution.0 != r.institution || rec.identity.0 != r.identity || rec.currency.0 != r.currency {
                    return Err(LedgerError::Fixture(format!("account {} has inconsistent rows", r.account)));
                }
            }
            Err(_) => {
                let (first, last) = life[&r.account];
                array.open_account(
                    acc.clone(),
                    InstitutionId::new(&r.institution),
                    IdentityId::new(&r.identity),
                    Currency::new(&r.currency),
                    first,
                )?;
                array.record_mut(&acc)?.terminated = Some(last + 1);
            }
        }
        let b = match r.balance.as_str() {
            "" | "?" => SlotBalance::Unknown,
            s => SlotBalance::Known(
                s.parse()
                    .map_err(|_| LedgerError::Fixture(format!("bad balance {s:?}")))?,
            ),
        };
        array.set_balance(&acc, r.slot, b)?;
    }
    Ok(array)
}

#[derive(Debug, Deserialize)]
struct RateRow {
    currency: String,
    slot: Slot,
    price: f64,
}

pub fn read_rates_csv<R: Read>(reader: R, numeraire: Currency) -> Result<ExchangeRates, LedgerError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rates = ExchangeRates::new(numeraire);
    for r in rdr.deserialize::<RateRow>() {
        let r = r.map_err(|e| LedgerError::Fixture(e.to_string()))?;
        rates.set(Currency::new(r.currency), r.slot, r.price)?;
    }
    Ok(rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn usd() -> Currency {
        Currency::new("USD")
    }

    fn acc(s: &str) -> AccountId {
        AccountId::new(s)
    }

    fn array_with(balances: &[(&str, &str, &str, &str, &[f64])]) -> CustodialArray {
        let mut a = CustodialArray::new();
        for (id, inst, ident, cur, bs) in balances {
            a.open_account(acc(id), InstitutionId::new(*inst), IdentityId::new(*ident), Currency::new(*cur), 0)
                .unwrap();
            for (s, b) in bs.iter().enumerate() {
                a.set_balance(&acc(id), s as Slot, SlotBalance::Known(*b)).unwrap();
            }
        }
        a
    }

    #[test]
    fn transfer_examples() {
        let mut a = array_with(&[("x", "o", "i", "USD", &[100.0]), ("y", "o", "j", "USD", &[0.0])]);
        a.apply_transfer(&acc("x"), &acc("y"), 40.0, 0).unwrap();
        assert_eq!(a.balance(&acc("x"), 1).unwrap(), SlotBalance::Known(60.0));
        assert_eq!(a.balance(&acc("y"), 1).unwrap(), SlotBalance::Known(40.0));

        let mut a = array_with(&[("x", "o", "i", "USD", &[100.0]), ("y", "o", "j", "USD", &[0.0])]);
        a.apply_transfer(&acc("x"), &acc("y"), 60.0, 0).unwrap();
        let before = a.clone();
        assert!(matches!(
            a.apply_transfer(&acc("x"), &acc("y"), 60.0, 0),
            Err(LedgerError::InsufficientBalance { .. })
        ));
        assert_eq!(a, before);

        a.apply_transfer(&acc("x"), &acc("y"), 0.0, 0).unwrap();
        assert_eq!(a, before);
        assert_eq!(
            a.apply_transfer(&acc("x"), &acc("q"), 1.0, 0),
            Err(LedgerError::UnknownAccount(acc("q")))
        );
        let mut b = array_with(&[("x", "o", "i", "USD", &[10.0]), ("e", "o", "j", "EUR", &[0.0])]);
        assert!(matches!(
            b.apply_transfer(&acc("x"), &acc("e"), 1.0, 0),
            Err(LedgerError::CurrencyMismatch(..))
        ));
    }

    #[test]
    fn idealized_examples() {
        let a = array_with(&[("u", "o", "i", "USD", &[100.0]), ("e", "p", "i", "EUR", &[50.0])]);
        let mut r = ExchangeRates::new(usd());
        r.set(Currency::new("EUR"), 0, 1.2).unwrap();
        assert!((idealized_weight(&a, &IdentityId::new("i"), 0, &r).unwrap() - 160.0).abs() < 1e-12);
        assert_eq!(idealized_weight(&a, &IdentityId::new("z"), 0, &r).unwrap(), 0.0);
        let one = array_with(&[("u", "o", "i", "USD", &[42.0])]);
        assert_eq!(idealized_weight(&one, &IdentityId::new("i"), 0, &r).unwrap(), 42.0);
        let no_rate = ExchangeRates::new(usd());
        assert!(matches!(
            idealized_weight(&a, &IdentityId::new("i"), 0, &no_rate),
            Err(LedgerError::MissingRate(..))
        ));
    }

    #[test]
    fn account_weight_examples() {
        let p = StakingPeriods::uniform(0, 4, 1).unwrap();
        let r = ExchangeRates::new(usd());
        let a = array_with(&[("c", "o", "i", "USD", &[10.0; 4]), ("f", "o", "i", "USD", &[9.0, 10.0, 10.0, 10.0])]);
        assert_eq!(account_weight(&a, &acc("c"), &p, &r).unwrap(), 10.0);
        assert_eq!(account_weight(&a, &acc("f"), &p, &r).unwrap(), 9.75);

        let e = array_with(&[("e", "o", "i", "EUR", &[10.0; 4])]);
        let mut r2 = ExchangeRates::new(usd());
        for (s, p) in [1.0, 1.0, 2.0, 2.0].iter().enumerate() {
            r2.set(Currency::new("EUR"), s as Slot, *p).unwrap();
        }
        assert_eq!(account_weight(&e, &acc("e"), &p, &r2).unwrap(), 15.0);

        let mut gap = a.clone();
        gap.set_balance(&acc("c"), 2, SlotBalance::Unknown).unwrap();
        assert_eq!(
            account_weight(&gap, &acc("c"), &p, &r),
            Err(LedgerError::MissingSlotData(acc("c"), 2))
        );
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(synthetic_consistency_error(1).unwrap(), 1.0);
        assert_eq!(synthetic_consistency_error(4).unwrap(), 0.25);
        assert_eq!(synthetic_consistency_error(10).unwrap(), 0.1);
        assert_eq!(synthetic_consistency_error_with(10, 7, 3).unwrap(), 0.1);
        assert_eq!(synthetic_consistency_error(0), Err(LedgerError::InvalidP(0)));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_nonnegative(-5.0), 0.0);
        assert_eq!(clamp_nonnegative(7.0), 7.0);
        assert_eq!(clamp_nonnegative(0.0), 0.0);
    }

    #[test]
    fn institution_examples() {
        let p = StakingPeriods::uniform(0, 2, 1).unwrap();
        let r = ExchangeRates::new(usd());
        let a = array_with(&[("a1", "o", "i", "USD", &[10.0, 10.0]), ("a2", "o", "j", "USD", &[5.0, 5.0])]);
        let o = InstitutionId::new("o");
        assert_eq!(institution_weight(&a, &o, &p, &r, &Eligibility::new()).unwrap(), 15.0);
        let es = Eligibility::from([(acc("a1"), false)]);
        assert_eq!(institution_weight(&a, &o, &p, &r, &es).unwrap(), 5.0);
        assert_eq!(institution_weight(&a, &InstitutionId::new("none"), &p, &r, &es).unwrap(), 0.0);
    }

    #[test]
    fn agent_examples() {
        let p = StakingPeriods::uniform(0, 1, 1).unwrap();
        let r = ExchangeRates::new(usd());
        let a = array_with(&[("a1", "o", "i1", "USD", &[3.0]), ("a2", "q", "i2", "USD", &[7.0]), ("a3", "q", "k", "USD", &[1.0])]);
        let mut map = IdentityMap::default();
        map.insert(IdentityId::new("i1"), AgentId::new("n"));
        map.insert(IdentityId::new("i2"), AgentId::new("n"));
        map.insert(IdentityId::new("k"), AgentId::new("m"));
        assert_eq!(agent_weight(&a, &AgentId::new("n"), &map, &p, &r).unwrap(), 10.0);
        assert_eq!(agent_weight(&a, &AgentId::new("z"), &map, &p, &r).unwrap(), 0.0);
        assert_eq!(agent_weight(&a, &AgentId::new("m"), &map, &p, &r).unwrap(), 1.0);
        let partial = IdentityMap::default();
        assert!(matches!(
            agent_weight(&a, &AgentId::new("n"), &partial, &p, &r),
            Err(LedgerError::UnknownIdentity(_))
        ));
    }

    #[test]
    fn supplementary_examples() {
        let p = StakingPeriods::uniform(0, 4, 1).unwrap();
        let r = ExchangeRates::new(usd());
        let mut a = array_with(&[("x", "o", "i", "USD", &[4.0, 4.0, 4.0, 4.0])]);
        a.set_balance(&acc("x"), 3, SlotBalance::Unknown).unwrap();
        let pol = EligibilityPolicy::ClampUnknown;
        let prior = provisional_account_weight(&a, &acc("x"), &p, &r, pol).unwrap();
        assert_eq!(prior, 3.0);
        assert_eq!(supplementary_weight(&a, &acc("x"), &p, &r, prior, pol, 0.0).unwrap(), 0.0);
        let mut v = a.clone();
        v.set_balance(&acc("x"), 3, SlotBalance::Known(8.0)).unwrap();
        assert_eq!(supplementary_weight(&v, &acc("x"), &p, &r, prior, pol, 0.0).unwrap(), 2.0);
        let mut n = a.clone();
        n.set_balance(&acc("x"), 3, SlotBalance::Known(-3.0)).unwrap();
        assert_eq!(supplementary_weight(&n, &acc("x"), &p, &r, prior, pol, 0.0).unwrap(), 0.0);

        let strict = EligibilityPolicy::FullyVerifiedOnly;
        assert_eq!(provisional_account_weight(&a, &acc("x"), &p, &r, strict).unwrap(), 0.0);
        assert_eq!(provisional_account_weight(&v, &acc("x"), &p, &r, strict).unwrap(), 5.0);
    }

    #[test]
    fn settlement_shard() {
        let (k1, k2) = (OwnerKey::new("k1"), OwnerKey::new("k2"));
        let mut s = SettlementShard::default();
        s.issue(&k1, 10.0, "claim").unwrap();
        s.transfer(&k1, &k2, 4.0, "pay").unwrap();
        assert!(s.transfer(&k1, &k2, 7.0, "pay").is_err());
        assert_eq!((s.balance(&k1), s.balance(&k2)), (6.0, 4.0));
        assert_eq!(s.reclaim(&k2, 5.0, "fix").unwrap(), 4.0);
        assert_eq!(s.liabilities[&k2], 1.0);
        assert_eq!(s.supply(), s.issued_total - s.reclaimed_total);
        let mut buf = Vec::new();
        s.write_log(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn csv_fixtures() {
        let text = "institution,account,identity,currency,slot,balance\n\
                    o,a,i,USD,0,9\no,a,i,USD,1,10\no,a,i,USD,2,?\no,a,i,USD,3,10\n";
        let a = read_custodial_csv(text.as_bytes()).unwrap();
        assert_eq!(a.balance(&acc("a"), 2).unwrap(), SlotBalance::Unknown);
        assert_eq!(a.record(&acc("a")).unwrap().terminated, Some(4));
        let rates = read_rates_csv("currency,slot,price\nEUR,0,1.1\n".as_bytes(), usd()).unwrap();
        assert_eq!(rates.rate(&Currency::new("EUR"), 0).unwrap(), 1.1);
        let bad = "institution,account,identity,currency,slot,balance\no,a,i,USD,0,9\np,a,i,USD,1,9\n";
        assert!(read_custodial_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn periods_validate() {
        assert!(StakingPeriods::new(vec![(0, 2), (1, 3)]).is_err());
        assert!(StakingPeriods::new(vec![(2, 2)]).is_err());
        let p = StakingPeriods::new(vec![(5, 7), (0, 2)]).unwrap();
        assert_eq!(p.slots().collect::<Vec<_>>(), vec![0, 1, 5, 6]);
    }
}
