//! Safety checks over a protocol state.

use super::crypto::SignatureScheme;
use super::message::Payload;
use super::state::{weights_match, IrvStatus, IssuancePath, ProtocolState, TransferStatus};
use crate::fiat_ledger::{InstitutionId, SettlementEntry};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InvariantReport {
    pub checks: Vec<InvariantCheck>,
}

impl InvariantReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, problems: Vec<String>) {
        self.checks.push(InvariantCheck {
            name,
            passed: problems.is_empty(),
            detail: problems.join("; "),
        });
    }
}

pub fn check_invariants<S: SignatureScheme + Clone>(st: &ProtocolState<S>) -> InvariantReport {
    let mut r = InvariantReport::default();
    let ctx = st.ctx();

    // Each account earns weight through at most one path.
    let p = st
        .issuance()
        .iter()
        .filter(|(_, v)| v.len() > 1)
        .map(|(a, v)| format!("{a} issued {} times", v.len()))
        .collect();
    r.push("single_issuance_path", p);

    // Settled issuance never exceeds what the account is worth. Open IRVs
    // are provisional until the target attests.
    let mut p = Vec::new();
    for (a, recs) in st.issuance() {
        let Ok(actual) = ctx.account_weight(a) else {
            p.push(format!("{a} has no weight"));
            continue;
        };
        for i in recs {
            let settled = match &i.path {
                IssuancePath::Institutional => true,
                IssuancePath::Remote { irv } => st.irvs().get(irv).is_some_and(|r| r.status != IrvStatus::Open),
            };
            if settled && i.amount > actual && !weights_match(i.amount, actual) {
                p.push(format!("{a} issued {} > {actual}", i.amount));
            }
        }
    }
    r.push("issuance_bounded", p);

    let shutoff = st.terms().mint_shutoff;
    let p = st
        .settlement()
        .log()
        .iter()
        .zip(st.settlement_slots())
        .filter(|(e, s)| matches!(e, SettlementEntry::Issue { amount, .. } if *amount > 0.0) && **s > shutoff)
        .map(|(_, s)| format!("issue at slot {s}"))
        .collect();
    r.push("no_issuance_after_shutoff", p);

    let p = match st.issued_totals().check(&st.terms().caps) {
        Ok(()) => vec![],
        Err(e) => vec![e.to_string()],
    };
    r.push("caps_respected", p);

    let sh = st.settlement();
    let mut p = Vec::new();
    if !weights_match(sh.supply(), sh.issued_total - sh.reclaimed_total) {
        p.push(format!("supply {} vs issued-reclaimed {}", sh.supply(), sh.issued_total - sh.reclaimed_total));
    }
    for (k, b) in sh.balances() {
        if *b < 0.0 && !weights_match(*b, 0.0) {
            p.push(format!("{k} negative {b}"));
        }
    }
    r.push("settlement_conservation", p);

    // An institution's settlement balance backs its customers' forked
    // balances, net of transfers in flight.
    let mut held: BTreeMap<InstitutionId, f64> = BTreeMap::new();
    let mut p = Vec::new();
    for (a, v) in st.forked() {
        if *v < 0.0 && !weights_match(*v, 0.0) {
            p.push(format!("forked {a} negative {v}"));
        }
        if let Ok(rec) = ctx.array.record(a) {
            *held.entry(rec.institution.clone()).or_insert(0.0) += v;
        }
    }
    for t in st.transfers().values() {
        match t.status {
            TransferStatus::Debited => *held.entry(t.from_institution.clone()).or_insert(0.0) += t.quantity,
            TransferStatus::Settled => {
                if let Some((o2, _)) = &t.to {
                    *held.entry(o2.clone()).or_insert(0.0) -= t.quantity;
                }
            }
            TransferStatus::Cleared => {}
        }
    }
    for (o, pk) in &st.config().official_keys {
        let on_chain = sh.balance(&crate::fiat_ledger::OwnerKey(pk.to_hex()));
        let owed = held.get(o).copied().unwrap_or(0.0);
        let scale = on_chain.abs().max(owed.abs()).max(1.0);
        if (on_chain - owed).abs() > 1e-9 * scale {
            p.push(format!("{o}: settlement {on_chain} vs custodial {owed}"));
        }
    }
    r.push("custody_backing", p);

    let p = st
        .eligibility()
        .iter()
        .filter(|(_, v)| **v)
        .map(|(a, _)| format!("{a} re-enabled"))
        .collect();
    r.push("eligibility_only_cleared", p);

    let mut claims: BTreeMap<InstitutionId, usize> = BTreeMap::new();
    let mut awarded: BTreeSet<InstitutionId> = BTreeSet::from([st.founder().clone()]);
    for e in st.log() {
        match &e.envelope.payload {
            Payload::CLM { institution, .. } | Payload::ARA { institution, .. } | Payload::DIS { institution, .. } => {
                *claims.entry(institution.clone()).or_insert(0) += 1;
            }
            Payload::INS { recipient, .. } => {
                awarded.insert(recipient.clone());
            }
            _ => {}
        }
    }
    let mut p: Vec<String> = claims
        .iter()
        .filter(|(_, n)| **n > 1)
        .map(|(o, n)| format!("{o} claimed {n} times"))
        .collect();
    if claims.keys().cloned().collect::<BTreeSet<_>>() != *st.claimed() {
        p.push("claim set differs from log".into());
    }
    r.push("single_claim", p);

    let p = if &awarded == st.authority() {
        vec![]
    } else {
        vec!["authority not derived from awards".into()]
    };
    r.push("authority_by_award", p);
    r
}
