use pob_core::attack_scenarios::{self, TransferKind, TransferStep};
use pob_core::capital_market::{gamblers_ruin_sim, price_adaptive_attack_cost, price_eras, PricePoint, RuinParams};
use pob_core::fiat_ledger::{
    provisional_account_weight, AccountId, CustodialArray, Currency, EligibilityPolicy, ExchangeRates, InstitutionId, OwnerKey,
    SettlementShard, SlotBalance, StakingPeriods,
};
use pob_core::participation_stats::{bias_estimate, min_participants_deterministic, ThresholdInputs};
use pob_core::population_model::{AgentId, CorruptionStatus, IdentityId};
use pob_core::signaling_game::{classify_equilibrium, ess_allocation, ess_weight, EquilibriumClass, EssParams, GamePayoffs};
use proptest::prelude::*;

fn payoffs_c0() -> impl Strategy<Value = GamePayoffs> {
    (0.01f64..100.0, 0.001f64..0.999, 0.001f64..100.0, 0.0f64..100.0)
        .prop_map(|(r, f, extra, c_a)| GamePayoffs::new(r, r * f, r * f + extra, 0.0, c_a).unwrap())
}

fn status() -> impl Strategy<Value = CorruptionStatus> {
    prop_oneof![Just(CorruptionStatus::Correct), Just(CorruptionStatus::Faulty)]
}

proptest! {
    #[test]
    fn free_participation_always_pools(p in payoffs_c0()) {
        prop_assert_eq!(classify_equilibrium(&p), EquilibriumClass::PoolingJoin);
    }

    #[test]
    fn bias_never_exceeds_bound(rows in prop::collection::vec((status(), 0.0f64..=1.0), 2..200)) {
        let (s, r): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        prop_assume!(r.iter().sum::<f64>() > 0.0);
        let b = bias_estimate(&s, &r).unwrap();
        prop_assert!(b.bias.abs() <= b.bias_max * (1.0 + 1e-9) + 1e-12, "{:?}", b);
    }

    #[test]
    fn participants_grow_with_corruption(y1 in 0.0f64..0.49, dy in 0.0f64..0.49, n in 1u64..10_000_000_000) {
        let y2 = (y1 + dy).min(0.499);
        let lo = min_participants_deterministic(&ThresholdInputs::new(y1, n, 0.5).unwrap()).unwrap();
        let hi = min_participants_deterministic(&ThresholdInputs::new(y2, n, 0.5).unwrap()).unwrap();
        prop_assert!(lo <= hi);
        prop_assert!(hi <= n);
    }

    #[test]
    fn adaptive_cost_matches_unit_greedy(
        slots in prop::collection::vec((0u32..40, 0u32..200), 1..10),
        frac in 0.0f64..=1.0,
    ) {
        let total: u32 = slots.iter().map(|s| s.1).sum();
        let need = (total as f64 * frac).floor() as u32;
        let points: Vec<PricePoint> = slots
            .iter()
            .enumerate()
            .map(|(i, &(p, v))| PricePoint { slot: i as u64, price: p as f64, volume: v as f64 })
            .collect();
        let got = price_adaptive_attack_cost(&price_eras(&points).unwrap(), need as f64).unwrap();
        let mut units: Vec<u32> = slots.iter().flat_map(|&(p, v)| std::iter::repeat_n(p, v as usize)).collect();
        units.sort_unstable();
        let want: u64 = units.iter().take(need as usize).map(|&p| p as u64).sum();
        prop_assert_eq!(got.cost, want as f64);
        let more = price_adaptive_attack_cost(&price_eras(&points).unwrap(), (need.min(total.saturating_sub(1))) as f64).unwrap();
        prop_assert!(more.cost <= got.cost);
    }

    #[test]
    fn ess_weight_increasing_and_invertible(beta in 0.1f64..10.0, np in 0.01f64..5.0, v1 in 0.0f64..20.0, dv in 1e-3f64..20.0) {
        let p = EssParams { beta, v_min: 0.0, w_min: 1.0, net_payoff: np, price_scale: 1.0, w_max: 100.0 };
        let a = ess_weight(v1, &p).unwrap();
        let b = ess_weight(v1 + dv, &p).unwrap();
        prop_assert!(b > a);
        let x = ess_allocation(a, &p).unwrap();
        prop_assert!((ess_weight(x, &p).unwrap() - a).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn clamped_weight_monotone_in_balances(
        base in prop::collection::vec(-50.0f64..100.0, 4),
        bumps in prop::collection::vec(0.0f64..30.0, 4),
    ) {
        let weight = |bs: &[f64]| {
            let mut arr = CustodialArray::new();
            let acc = AccountId::new("x");
            arr.open_account(acc.clone(), InstitutionId::new("o"), IdentityId::new("i"), Currency::new("USD"), 0).unwrap();
            for (s, b) in bs.iter().enumerate() {
                arr.set_balance(&acc, s as u64, SlotBalance::Known(*b)).unwrap();
            }
            let periods = StakingPeriods::new(vec![(0, 2), (2, 4)]).unwrap();
            provisional_account_weight(&arr, &acc, &periods, &ExchangeRates::new(Currency::new("USD")), EligibilityPolicy::ClampUnknown)
                .unwrap()
        };
        let raised: Vec<f64> = base.iter().zip(&bumps).map(|(b, d)| b + d).collect();
        let w0 = weight(&base);
        prop_assert!(w0 >= 0.0);
        prop_assert!(weight(&raised) >= w0);
    }

    #[test]
    fn custodial_transfers_conserve_slot_totals(ops in prop::collection::vec((0usize..4, 0usize..4, 0u32..80), 0..40)) {
        let mut arr = CustodialArray::new();
        let ids: Vec<AccountId> = (0..4).map(|i| AccountId::new(format!("a{i}"))).collect();
        for (n, id) in ids.iter().enumerate() {
            arr.open_account(id.clone(), InstitutionId::new("o"), IdentityId::new(format!("i{n}")), Currency::new("USD"), 0).unwrap();
            arr.set_balance(id, 0, SlotBalance::Known(50.0)).unwrap();
        }
        for (f, t, q) in ops {
            let _ = arr.apply_transfer(&ids[f], &ids[t], q as f64, 0);
        }
        arr.carry_forward(0);
        let total: f64 = ids.iter().map(|id| arr.balance(id, 1).unwrap().known().unwrap()).sum();
        prop_assert_eq!(total, 200.0);
        for id in &ids {
            prop_assert!(arr.outgoing(id, 0) <= 50.0);
            prop_assert!(arr.balance(id, 1).unwrap().known().unwrap() >= 0.0);
        }
    }

    #[test]
    fn settlement_supply_tracks_issue_and_reclaim(ops in prop::collection::vec((0u8..3, 0usize..3, 0usize..3, 0u32..100), 0..60)) {
        let keys: Vec<OwnerKey> = (0..3).map(|i| OwnerKey::new(format!("k{i}"))).collect();
        let mut s = SettlementShard::default();
        for (op, a, b, q) in ops {
            let q = q as f64;
            match op {
                0 => s.issue(&keys[a], q, "i").unwrap(),
                1 => { let _ = s.transfer(&keys[a], &keys[b], q, "t"); }
                _ => { s.reclaim(&keys[a], q, "r").unwrap(); }
            }
            prop_assert!(keys.iter().all(|k| s.balance(k) >= 0.0));
        }
        prop_assert_eq!(s.supply(), s.issued_total - s.reclaimed_total);
    }

    #[test]
    fn pseudo_transfers_never_move_control(steps in prop::collection::vec((prop::option::of(0u64..156), 1u64..5), 0..4)) {
        let mut spec = attack_scenarios::bundled("tezos156").unwrap();
        spec.adversary.schedule = steps
            .iter()
            .enumerate()
            .map(|(n, (agent, fanout))| TransferStep {
                slot: n as u64 + 1,
                kind: TransferKind::Pseudo,
                agent: agent.map(|i| AgentId::new(format!("insider{i}"))),
                fanout: *fanout,
                amount: 0,
            })
            .collect();
        let rep = attack_scenarios::run(&spec).unwrap();
        prop_assert!(rep.trace.iter().all(|t| t.control.eq_ratio(1, 2)));
        prop_assert!(rep.fractions_in_range());
    }
}

#[test]
fn ruin_limits() {
    let base = RuinParams { ico_flips: 50, extension_flips: 0, reorder_budget: 0, y_bar: 0.0, k: 0.5, trials: 2000, seed: 4 };
    assert_eq!(gamblers_ruin_sim(&base).unwrap().failures, 0);
    let forced = RuinParams { reorder_budget: 25, ..base };
    assert_eq!(gamblers_ruin_sim(&forced).unwrap().failures, 2000);
    let all = RuinParams { y_bar: 1.0, ..base };
    assert_eq!(gamblers_ruin_sim(&all).unwrap().probability, 1.0);
}

#[test]
fn ruin_shrinks_with_extension() {
    let mut prev = 1.0;
    for ext in [0, 40, 160, 640] {
        let e = gamblers_ruin_sim(&RuinParams {
            ico_flips: 20,
            extension_flips: ext,
            reorder_budget: 2,
            y_bar: 0.35,
            k: 0.5,
            trials: 20_000,
            seed: 9,
        })
        .unwrap();
        assert!(e.probability <= prev + 3.0 * e.std_error, "{ext}: {e:?}");
        prev = e.probability;
    }
}

#[test]
fn ruin_is_seed_deterministic() {
    let p = RuinParams { ico_flips: 30, extension_flips: 10, reorder_budget: 3, y_bar: 0.4, k: 0.5, trials: 3000, seed: 21 };
    assert_eq!(gamblers_ruin_sim(&p).unwrap(), gamblers_ruin_sim(&p).unwrap());
}
