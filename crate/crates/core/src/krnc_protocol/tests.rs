use super::script::*;
use super::*;
use crate::fiat_ledger::{AccountId, InstitutionId};
use approx::assert_relative_eq;
use std::sync::Arc;

fn i(s: &str) -> InstitutionId {
    InstitutionId::new(s)
}
fn a(s: &str) -> AccountId {
    AccountId::new(s)
}

const HONEST_SUPPLY: f64 = 100.0 + 55.0 + 13.75 + 16.0 + 200.0 + 60.0 + 40.0;

fn fresh() -> Simulation {
    let ctx = Arc::new(demo_world().build().unwrap());
    Simulation::new(ctx, &demo_setup(7)).unwrap()
}

fn joined() -> Simulation {
    let mut s = fresh();
    s.award(&i("alpha"), &i("beta"), 1).unwrap();
    s.award(&i("alpha"), &i("rv"), 1).unwrap();
    s
}

#[test]
fn honest_demo_run() {
    let run = run_script(&demo_script(7, 1.0)).unwrap();
    for o in &run.outcomes {
        assert!(o.error.is_none(), "{:?}", o);
    }
    assert!(run.invariants.all_passed(), "{:?}", run.invariants);
    assert_relative_eq!(run.supply, HONEST_SUPPLY, max_relative = 1e-12);
    let st = &run.simulation.state;
    assert!(!st.is_eligible(&a("l3")));
    assert!(st.issuance().get(&a("l3")).is_none());
}

#[test]
fn dishonest_verifier_is_corrected() {
    let run = run_script(&demo_script(7, 2.0)).unwrap();
    for o in &run.outcomes {
        assert!(o.error.is_none(), "{:?}", o);
    }
    assert!(run.invariants.all_passed(), "{:?}", run.invariants);
    assert_relative_eq!(run.supply, HONEST_SUPPLY, max_relative = 1e-12);
    let dis = run
        .simulation
        .state
        .log()
        .iter()
        .filter(|e| e.envelope.opcode() == Opcode::DIS)
        .count();
    assert_eq!(dis, 1);
    assert_relative_eq!(run.simulation.state.forked()[&a("r1")], 200.0 + 10.0 - 100.0);
}

#[test]
fn replay_reproduces_digest() {
    let run = run_script(&demo_script(3, 1.5)).unwrap();
    let st = &run.simulation.state;
    let again = ProtocolState::replay(st.ctx_arc(), st.config().clone(), st.scheme().clone(), &st.envelopes()).unwrap();
    assert_eq!(again.digest(), st.digest());
}

#[test]
fn digest_depends_on_seed_only_through_keys() {
    let x = run_script(&demo_script(5, 1.0)).unwrap();
    let y = run_script(&demo_script(5, 1.0)).unwrap();
    assert_eq!(x.digest, y.digest);
    let z = run_script(&demo_script(6, 1.0)).unwrap();
    assert_ne!(x.digest, z.digest);
}

#[test]
fn unauthorized_award_rejected() {
    let mut s = fresh();
    assert_eq!(s.award(&i("beta"), &i("rv"), 1), Err(ProtocolError::Unauthorized));
    s.award(&i("alpha"), &i("beta"), 1).unwrap();
    assert!(matches!(s.award(&i("alpha"), &i("beta"), 2), Err(ProtocolError::AlreadyInstitutional(_))));
}

#[test]
fn award_after_deadline_rejected() {
    let mut s = fresh();
    assert!(matches!(s.award(&i("alpha"), &i("beta"), 21), Err(ProtocolError::DeadlinePassed { .. })));
}

#[test]
fn tampered_signature_rejected_without_change() {
    let mut s = joined();
    let before = s.state.digest();
    let mut env = s.signed(&i("beta"), 2, Payload::CLM { institution: i("beta"), weight: 68.75 }).unwrap();
    env.payload = Payload::CLM { institution: i("beta"), weight: 1e9 };
    assert_eq!(s.submit(env), Err(ProtocolError::SignatureMismatch));
    assert_eq!(s.state.digest(), before);
}

#[test]
fn claim_rules() {
    let mut s = joined();
    assert!(matches!(s.claim_weight(&i("beta"), 70.0, 2), Err(ProtocolError::WeightMismatch { .. })));
    s.claim(&i("beta"), 2).unwrap();
    assert!(matches!(s.claim(&i("beta"), 3), Err(ProtocolError::DoubleClaim(_))));
    assert!(matches!(s.claim(&i("alpha"), 31), Err(ProtocolError::PostShutoff { .. })));
    assert!(matches!(s.claim(&i("late"), 3), Err(ProtocolError::Unauthorized)));
}

#[test]
fn slot_regression_rejected() {
    let mut s = joined();
    s.claim(&i("beta"), 5).unwrap();
    assert!(matches!(s.claim(&i("alpha"), 4), Err(ProtocolError::SlotRegression { .. })));
}

#[test]
fn caps_enforced() {
    let mut setup = demo_setup(1);
    setup.terms.caps.per_institution.insert(i("beta"), 60.0);
    let ctx = Arc::new(demo_world().build().unwrap());
    let mut s = Simulation::new(ctx, &setup).unwrap();
    s.award(&i("alpha"), &i("beta"), 1).unwrap();
    assert!(matches!(s.claim(&i("beta"), 2), Err(ProtocolError::CapExceeded(_))));
}

#[test]
fn remote_verification_rules() {
    let mut s = joined();
    assert_eq!(s.remote_verify(&a("r2"), &a("l1"), 2), Err(ProtocolError::IdentityMismatch));
    s.remote_verify(&a("r1"), &a("l1"), 2).unwrap();
    assert!(matches!(s.remote_verify(&a("r1"), &a("l1"), 3), Err(ProtocolError::DuplicateVerification(_))));
    assert!(matches!(s.remote_verify(&a("r1"), &a("b1"), 3), Err(ProtocolError::TargetAlreadyJoined(_))));
    // The late institution must attest before it can claim.
    s.request(&i("late"), 4).unwrap();
    s.award(&i("alpha"), &i("late"), 4).unwrap();
    assert!(matches!(s.claim(&i("late"), 5), Err(ProtocolError::AttestationRequired(_))));
    assert_eq!(s.attest(&i("late"), 5), Err(ProtocolError::MissingProvisionalKey));
    s.forward_attestation(&i("late"), 5).unwrap();
    s.attest(&i("late"), 6).unwrap();
    assert!(check_invariants(&s.state).all_passed());
}

#[test]
fn provisional_request_rules() {
    let mut s = joined();
    let wrong = Some(["pw:nothing".to_string()].into_iter().collect());
    assert_eq!(s.provisional_request(&a("r2"), &a("l2"), 10.0, 2, wrong), Err(ProtocolError::NoFactorOverlap));
    let partial = Some(["otp:dave".to_string()].into_iter().collect());
    s.provisional_request(&a("r2"), &a("l2"), 10.0, 2, partial).unwrap();
    assert_eq!(s.provisional_request(&a("r2"), &a("l2"), 10.0, 2, None), Err(ProtocolError::DuplicateRequest));
}

#[test]
fn exaggeration_notice_requires_exaggeration() {
    let mut s = joined();
    s.provisional_request(&a("r2"), &a("l2"), 10.0, 2, None).unwrap();
    // A verifier that under-reports to block a truthful claim is caught.
    let prov = s.state.provisional()[&i("late")].public;
    let notice = message::ExaggerationNotice { target: i("late"), account: a("l2"), claimed: 10.0, actual: 5.0 };
    let sealed = s.state.scheme().encrypt(&prov, &serde_json::to_vec(&notice).unwrap()).unwrap();
    let env = s.signed(&i("rv"), 3, Payload::NBE { verifier: i("rv"), sealed }).unwrap();
    assert!(matches!(s.submit(env), Err(ProtocolError::NBEInvalid { .. })));
    assert!(s.state.is_eligible(&a("l2")));
}

#[test]
fn attestation_waits_for_notices() {
    let mut s = joined();
    s.provisional_request(&a("r2"), &a("l2"), 10.0, 2, None).unwrap();
    s.request(&i("late"), 3).unwrap();
    s.award(&i("alpha"), &i("late"), 3).unwrap();
    let prov = s.state.provisional()[&i("late")].clone();
    let pk = s.official(&i("late")).unwrap().0;
    let sealed_secret = s.state.scheme().encrypt(&pk, &prov.secret.0).unwrap();
    let env = s
        .signed(&i("rv"), 4, Payload::RFA { verifier: i("rv"), institution: i("late"), sealed_secret })
        .unwrap();
    assert!(matches!(s.submit(env), Err(ProtocolError::PendingRequests(_))));
}

#[test]
fn withdrawals_move_forked_fiat() {
    let run = run_script(&demo_script(7, 1.0)).unwrap();
    let mut s = run.simulation;
    let key = s.self_custody_key("alice");
    let tags = s.withdraw(&a("a1"), Destination::Key { key }, 50.0, 12).unwrap();
    assert_eq!(tags.len(), 2);
    assert_relative_eq!(s.state.settlement().balance(&crate::fiat_ledger::OwnerKey(key.to_hex())), 50.0);
    let err = s.withdraw(&a("a1"), Destination::Key { key }, 1e6, 12).unwrap_err();
    assert!(matches!(err, ProtocolError::InsufficientBalance { .. }));
    let stranger = PublicKey([9; 32]);
    assert_eq!(s.withdraw(&a("a1"), Destination::Key { key: stranger }, 1.0, 12), Err(ProtocolError::UnknownRecipientKey));
    let tags = s
        .withdraw(&a("b1"), Destination::Account { institution: i("late"), account: a("l4") }, 5.0, 13)
        .unwrap();
    assert_eq!(tags.len(), 3);
    assert!(check_invariants(&s.state).all_passed());
    assert_relative_eq!(s.state.forked()[&a("l4")], 45.0);
}

#[test]
fn liveness_blames_all_authority_holders() {
    let mut s = joined();
    s.request(&i("late"), 2).unwrap();
    assert!(s.state.liveness_violations(12).is_empty());
    let v = s.state.liveness_violations(13);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].responsible, vec![i("alpha"), i("beta"), i("rv")]);
    s.award(&i("rv"), &i("late"), 13).unwrap();
    assert!(s.state.liveness_violations(100).is_empty());
}

#[test]
fn cosignatures_required_when_configured() {
    let mut setup = demo_setup(2);
    setup.cosign_required = 1;
    let ctx = Arc::new(demo_world().build().unwrap());
    let mut s = Simulation::new(ctx, &setup).unwrap();
    assert!(matches!(
        s.award(&i("alpha"), &i("beta"), 1),
        Err(ProtocolError::InsufficientCosigners { required: 1, got: 0 })
    ));
}

#[test]
fn batch_order_is_input_independent() {
    let s = joined();
    let e1 = s.signed(&i("beta"), 2, Payload::CLM { institution: i("beta"), weight: 68.75 }).unwrap();
    let e2 = s.signed(&i("alpha"), 2, Payload::CLM { institution: i("alpha"), weight: 100.0 }).unwrap();
    let mut x = s.clone();
    let mut y = s.clone();
    x.state.apply_batch(vec![e1.clone(), e2.clone()]);
    y.state.apply_batch(vec![e2, e1]);
    assert_eq!(x.state.digest(), y.state.digest());
    assert_eq!(x.state.log()[3].envelope.sender, "alpha");
}

#[test]
fn log_lines_parse_back() {
    let run = run_script(&demo_script(7, 2.0)).unwrap();
    let mut buf = Vec::new();
    run.simulation.state.write_log(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let envs: Vec<Envelope> = text
        .lines()
        .map(|l| serde_json::from_str::<state::LogEntry>(l).unwrap().envelope)
        .collect();
    assert_eq!(envs, run.simulation.state.envelopes());
}
