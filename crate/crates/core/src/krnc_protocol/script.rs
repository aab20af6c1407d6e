//! Declarative worlds and action scripts for protocol runs.

use super::actors::{Simulation, SimulationSetup};
use super::crypto::Tag;
use super::invariants::{check_invariants, InvariantReport};
use super::message::{AccountKey, Caps, Destination, Terms};
use super::state::LedgerContext;
use super::ProtocolError;
use crate::fiat_ledger::{AccountId, CustodialArray, Currency, ExchangeRates, InstitutionId, Slot, SlotBalance, StakingPeriods};
use crate::population_model::IdentityId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BalanceSpec {
    Constant(f64),
    /// One entry per staking slot, in order; `null` is unknown.
    PerSlot(Vec<Option<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountSpec {
    pub account: AccountId,
    pub institution: InstitutionId,
    pub identity: IdentityId,
    pub currency: Currency,
    pub balance: BalanceSpec,
    pub factors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub numeraire: Currency,
    /// Constant numeraire price of each other currency.
    #[serde(default)]
    pub rates: BTreeMap<Currency, f64>,
    pub periods: Vec<(Slot, Slot)>,
    pub accounts: Vec<AccountSpec>,
}

impl WorldSpec {
    pub fn build(&self) -> Result<LedgerContext, ProtocolError> {
        let periods = StakingPeriods::new(self.periods.clone())?;
        let slots: Vec<Slot> = periods.slots().collect();
        let mut rates = ExchangeRates::new(self.numeraire.clone());
        for (m, p) in &self.rates {
            for s in &slots {
                rates.set(m.clone(), *s, *p)?;
            }
        }
        let mut array = CustodialArray::new();
        let mut account_keys = BTreeMap::new();
        for a in &self.accounts {
            array.open_account(a.account.clone(), a.institution.clone(), a.identity.clone(), a.currency.clone(), slots[0])?;
            let values: Vec<Option<f64>> = match &a.balance {
                BalanceSpec::Constant(b) => vec![Some(*b); slots.len()],
                BalanceSpec::PerSlot(v) if v.len() == slots.len() => v.clone(),
                BalanceSpec::PerSlot(v) => {
                    return Err(ProtocolError::MalformedPayload(format!(
                        "{}: {} balances for {} slots",
                        a.account,
                        v.len(),
                        slots.len()
                    )))
                }
            };
            for (s, v) in slots.iter().zip(values) {
                let b = v.map_or(SlotBalance::Unknown, SlotBalance::Known);
                array.set_balance(&a.account, *s, b)?;
            }
            account_keys.insert(a.account.clone(), AccountKey::new(a.factors.iter().cloned()));
        }
        Ok(LedgerContext {
            array,
            periods,
            rates,
            account_keys,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Request { institution: InstitutionId, slot: Slot },
    Award { from: InstitutionId, to: InstitutionId, slot: Slot },
    Claim { institution: InstitutionId, slot: Slot, #[serde(default)] weight: Option<f64> },
    RemoteVerify { requester: AccountId, account: AccountId, slot: Slot },
    ProvisionalRequest { requester: AccountId, account: AccountId, claimed: f64, slot: Slot },
    VerifyProvisional { account: AccountId, slot: Slot },
    ForwardAttestation { institution: InstitutionId, slot: Slot },
    Attest { institution: InstitutionId, slot: Slot },
    Withdraw { account: AccountId, destination: Destination, quantity: f64, slot: Slot },
    SetInflation { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolScript {
    pub world: WorldSpec,
    pub setup: SimulationSetup,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActionOutcome {
    pub index: usize,
    pub action: Action,
    pub accepted: Vec<Tag>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScriptRun {
    pub outcomes: Vec<ActionOutcome>,
    pub invariants: InvariantReport,
    pub digest: Tag,
    pub supply: f64,
    #[serde(skip)]
    pub simulation: Simulation,
}

pub fn run_action(sim: &mut Simulation, a: &Action) -> Result<Vec<Tag>, ProtocolError> {
    let one = |r: Result<Tag, ProtocolError>| r.map(|t| vec![t]);
    match a {
        Action::Request { institution, slot } => one(sim.request(institution, *slot)),
        Action::Award { from, to, slot } => one(sim.award(from, to, *slot)),
        Action::Claim { institution, slot, weight: Some(w) } => one(sim.claim_weight(institution, *w, *slot)),
        Action::Claim { institution, slot, weight: None } => one(sim.claim(institution, *slot)),
        Action::RemoteVerify { requester, account, slot } => one(sim.remote_verify(requester, account, *slot)),
        Action::ProvisionalRequest { requester, account, claimed, slot } => {
            one(sim.provisional_request(requester, account, *claimed, *slot, None))
        }
        Action::VerifyProvisional { account, slot } => one(sim.verify_provisional(account, *slot)),
        Action::ForwardAttestation { institution, slot } => sim.forward_attestation(institution, *slot),
        Action::Attest { institution, slot } => one(sim.attest(institution, *slot)),
        Action::Withdraw { account, destination, quantity, slot } => sim.withdraw(account, destination.clone(), *quantity, *slot),
        Action::SetInflation { factor } => {
            sim.behavior.inflation = *factor;
            Ok(vec![])
        }
    }
}

/// Runs every action, recording rejections rather than stopping.
pub fn run_script(script: &ProtocolScript) -> Result<ScriptRun, ProtocolError> {
    let ctx = Arc::new(script.world.build()?);
    let mut sim = Simulation::new(ctx, &script.setup)?;
    let outcomes = script
        .actions
        .iter()
        .enumerate()
        .map(|(index, a)| {
            let r = run_action(&mut sim, a);
            ActionOutcome {
                index,
                action: a.clone(),
                accepted: r.clone().unwrap_or_default(),
                error: r.err().map(|e| e.to_string()),
            }
        })
        .collect();
    Ok(ScriptRun {
        outcomes,
        invariants: check_invariants(&sim.state),
        digest: sim.state.digest(),
        supply: sim.state.settlement().supply(),
        simulation: sim,
    })
}

fn acct(
    account: &str,
    institution: &str,
    identity: &str,
    currency: &str,
    balance: BalanceSpec,
) -> AccountSpec {
    AccountSpec {
        account: AccountId::new(account),
        institution: InstitutionId::new(institution),
        identity: IdentityId::new(identity),
        currency: Currency::new(currency),
        balance,
        factors: vec![format!("pw:{account}"), format!("otp:{identity}")],
    }
}

/// A small four-institution world. `rv` verifies remotely for `late`,
/// which joins after customers have already been verified there.
pub fn demo_world() -> WorldSpec {
    use BalanceSpec::*;
    WorldSpec {
        numeraire: Currency::new("USD"),
        rates: BTreeMap::from([(Currency::new("EUR"), 1.1)]),
        periods: vec![(0, 2), (2, 4)],
        accounts: vec![
            acct("a1", "alpha", "alice", "USD", Constant(100.0)),
            acct("b1", "beta", "bob", "EUR", Constant(50.0)),
            acct("b2", "beta", "bea", "USD", PerSlot(vec![Some(10.0), Some(-5.0), Some(20.0), Some(30.0)])),
            acct("r1", "rv", "carol", "USD", Constant(10.0)),
            acct("r2", "rv", "dave", "USD", Constant(5.0)),
            acct("r3", "rv", "erin", "USD", Constant(1.0)),
            acct("l1", "late", "carol", "USD", Constant(200.0)),
            acct("l2", "late", "dave", "USD", Constant(80.0)),
            acct("l3", "late", "erin", "USD", Constant(30.0)),
            acct("l4", "late", "frank", "USD", Constant(40.0)),
        ],
    }
}

pub fn demo_setup(seed: u64) -> SimulationSetup {
    SimulationSetup {
        institutions: ["alpha", "beta", "rv", "late"].into_iter().map(InstitutionId::new).collect(),
        founder: InstitutionId::new("alpha"),
        remote_verifier: Some(InstitutionId::new("rv")),
        terms: Terms {
            join_deadline: 20,
            mint_shutoff: 30,
            caps: Caps::default(),
            nonce: seed,
        },
        seed,
        genesis_slot: 0,
        grace_slots: 10,
        cosign_required: 0,
    }
}

/// Full join sequence on the demo world: awards, a remote verification,
/// one truthful and one exaggerated provisional request, the late join and
/// its attestation, claims and a few withdrawals.
pub fn demo_script(seed: u64, inflation: f64) -> ProtocolScript {
    let i = InstitutionId::new;
    let a = AccountId::new;
    let mut actions = vec![
        Action::Award { from: i("alpha"), to: i("beta"), slot: 1 },
        Action::Award { from: i("alpha"), to: i("rv"), slot: 1 },
        Action::SetInflation { factor: inflation },
        Action::RemoteVerify { requester: a("r1"), account: a("l1"), slot: 2 },
        Action::ProvisionalRequest { requester: a("r2"), account: a("l2"), claimed: 60.0, slot: 3 },
        Action::ProvisionalRequest { requester: a("r3"), account: a("l3"), claimed: 50.0, slot: 3 },
        Action::VerifyProvisional { account: a("l3"), slot: 4 },
        Action::Claim { institution: i("alpha"), slot: 5, weight: None },
        Action::Claim { institution: i("beta"), slot: 5, weight: None },
        Action::Request { institution: i("late"), slot: 6 },
        Action::Award { from: i("beta"), to: i("late"), slot: 7 },
        Action::ForwardAttestation { institution: i("late"), slot: 8 },
        Action::Attest { institution: i("late"), slot: 9 },
        Action::Claim { institution: i("rv"), slot: 10, weight: None },
        Action::Withdraw {
            account: a("r1"),
            destination: Destination::Account { institution: i("alpha"), account: a("a1") },
            quantity: 100.0,
            slot: 11,
        },
        Action::Withdraw {
            account: a("a1"),
            destination: Destination::Account { institution: i("alpha"), account: a("a1") },
            quantity: 1.0,
            slot: 11,
        },
    ];
    if inflation == 1.0 {
        actions.retain(|x| !matches!(x, Action::SetInflation { .. }));
    }
    ProtocolScript {
        world: demo_world(),
        setup: demo_setup(seed),
        actions,
    }
}
