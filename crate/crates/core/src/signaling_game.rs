//! The three-subgame participation game and the staking equilibrium
//! (weight-assignment strategy, Sybil and staking gaps, equilibrium cost).

use crate::population_model::CorruptionStatus;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("invalid payoffs: {0}")]
    InvalidPayoffs(String),
    #[error("invalid subgame probabilities: {0}")]
    InvalidProbs(String),
    #[error("invalid staking parameters: {0}")]
    InvalidParams(String),
    #[error("argument {value} below domain minimum {min}")]
    DomainError { value: f64, min: f64 },
    #[error("resource list is empty")]
    EmptyResourceList,
    #[error("no resource satisfies the scarcity cap")]
    NoAdmissibleResource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GamePayoffs {
    pub r: f64,
    pub r_v: f64,
    pub r_a: f64,
    pub c: f64,
    pub c_a: f64,
}

impl GamePayoffs {
    pub fn new(r: f64, r_v: f64, r_a: f64, c: f64, c_a: f64) -> Result<Self, GameError> {
        let p = GamePayoffs { r, r_v, r_a, c, c_a };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let GamePayoffs { r, r_v, r_a, c, c_a } = *self;
        let bad = |m: &str| Err(GameError::InvalidPayoffs(m.to_string()));
        if [r, r_v, r_a, c, c_a].iter().any(|x| !x.is_finite()) {
            return bad("payoffs must be finite");
        }
        if r <= 0.0 {
            return bad("r must be positive");
        }
        if !(r_v > 0.0 && r_v < r) {
            return bad("need 0 < r_v < r");
        }
        if r_v >= r_a {
            return bad("need r_v < r_a");
        }
        if c < 0.0 {
            return bad("c must be non-negative");
        }
        if c_a < c {
            return bad("need c_a >= c");
        }
        Ok(())
    }

    /// Faulty join payoff in the center subgame.
    pub fn attacker_net(&self) -> f64 {
        self.r_a - self.c_a
    }

    /// Correct join payoff in the center subgame.
    pub fn victim_net(&self) -> f64 {
        self.r_v - self.c
    }

    /// Join payoff in the left and right subgames.
    pub fn standard_net(&self) -> f64 {
        self.r - self.c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgameProbs {
    pub rho_l: f64,
    pub rho_c: f64,
    pub rho_r: f64,
}

impl SubgameProbs {
    pub fn new(rho_l: f64, rho_c: f64, rho_r: f64) -> Result<Self, GameError> {
        for x in [rho_l, rho_c, rho_r] {
            if !(0.0..=1.0).contains(&x) {
                return Err(GameError::InvalidProbs(format!("{x} outside [0,1]")));
            }
        }
        let s = rho_l + rho_c + rho_r;
        if (s - 1.0).abs() > 1e-9 {
            return Err(GameError::InvalidProbs(format!("sum is {s}, not 1")));
        }
        Ok(SubgameProbs { rho_l, rho_c, rho_r })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumClass {
    PoolingJoin,
    PoolingAbstain,
    SeparatingAdversarial,
    PoolingJoinViaAdversaryBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMove {
    Attack,
    NoAttack,
}

pub fn expected_reward(agent: CorruptionStatus, probs: &SubgameProbs, p: &GamePayoffs) -> f64 {
    let center = match agent {
        CorruptionStatus::Correct => p.r_v,
        CorruptionStatus::Faulty => p.r_a,
    };
    p.r * (probs.rho_l + probs.rho_r) + center * probs.rho_c
}

pub fn expected_cost(agent: CorruptionStatus, probs: &SubgameProbs, p: &GamePayoffs) -> f64 {
    match agent {
        CorruptionStatus::Correct => p.c,
        CorruptionStatus::Faulty => p.c * (probs.rho_l + probs.rho_r) + p.c_a * probs.rho_c,
    }
}

/// Whether an agent of this type joins when it cannot tell the subgames apart.
pub fn joins_under_uncertainty(agent: CorruptionStatus, probs: &SubgameProbs, p: &GamePayoffs) -> bool {
    expected_reward(agent, probs, p) - expected_cost(agent, probs, p) > 0.0
}

/// Faulty agents cannot earn more than their best payoff; the adversary
/// forces the center subgame only when that strictly beats the
/// alternative.
pub fn adversary_move(p: &GamePayoffs) -> AdversaryMove {
    if p.attacker_net().max(0.0) > p.standard_net().max(0.0) {
        AdversaryMove::Attack
    } else {
        AdversaryMove::NoAttack
    }
}

pub fn classify_equilibrium(p: &GamePayoffs) -> EquilibriumClass {
    use EquilibriumClass::*;
    if p.c == 0.0 {
        return PoolingJoin;
    }
    match (p.attacker_net() > 0.0, p.victim_net() > 0.0) {
        (true, true) => PoolingJoin,
        (false, false) => PoolingAbstain,
        (false, true) => PoolingJoinViaAdversaryBlock,
        (true, false) => match adversary_move(p) {
            AdversaryMove::Attack => SeparatingAdversarial,
            AdversaryMove::NoAttack if p.standard_net() > 0.0 => PoolingJoin,
            AdversaryMove::NoAttack => PoolingAbstain,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizedPlay {
    pub adversary: AdversaryMove,
    pub correct_joins: bool,
    pub faulty_joins: bool,
}

/// Play in the subgame the adversary actually selects.
pub fn realized_play(p: &GamePayoffs) -> RealizedPlay {
    let adversary = adversary_move(p);
    let (correct_joins, faulty_joins) = match adversary {
        AdversaryMove::Attack => (p.victim_net() > 0.0, p.attacker_net() > 0.0),
        AdversaryMove::NoAttack => {
            let j = p.standard_net() > 0.0;
            (j, j)
        }
    };
    RealizedPlay {
        adversary,
        correct_joins,
        faulty_joins,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssParams {
    pub beta: f64,
    pub v_min: f64,
    pub w_min: f64,
    pub net_payoff: f64,
    pub price_scale: f64,
    pub w_max: f64,
}

impl EssParams {
    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::InvalidParams(m.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive and finite");
        }
        if !(self.price_scale > 0.0 && self.price_scale.is_finite()) {
            return bad("price_scale must be positive and finite");
        }
        if !(self.v_min >= 0.0) || !(self.w_min >= 0.0) {
            return bad("v_min and w_min must be non-negative");
        }
        if !(self.w_max >= self.w_min) {
            return bad("w_max must be at least w_min");
        }
        if !(self.net_payoff >= 0.0 && self.net_payoff.is_finite()) {
            return bad("net_payoff must be non-negative and finite");
        }
        Ok(())
    }

    /// The default scale is the reciprocal price of the staking resource.
    pub fn with_price(mut self, price: f64) -> Self {
        self.price_scale = 1.0 / price;
        self
    }

    /// Allocation length scale `np·σ²/β`.
    pub fn length(&self) -> f64 {
        self.net_payoff * self.price_scale * self.price_scale / self.beta
    }

    /// Wealth-discount scale `np·σ²/β²`.
    pub fn discount(&self) -> f64 {
        self.length() / self.beta
    }

    /// The endowment line `v_min + (w - w_min)β`.
    pub fn endowment(&self, w: f64) -> f64 {
        self.v_min + (w - self.w_min) * self.beta
    }
}

/// `1 - exp(-x/l)`, with the `l -> 0` limit handled.
fn saturation(x: f64, l: f64) -> f64 {
    if l == 0.0 {
        if x > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        -(-x / l).exp_m1()
    }
}

pub fn ess_weight(v: f64, p: &EssParams) -> Result<f64, GameError> {
    p.validate()?;
    if !(v >= p.v_min) {
        return Err(GameError::DomainError { value: v, min: p.v_min });
    }
    let x = v - p.v_min;
    Ok(p.w_min + x / p.beta - p.discount() * saturation(x, p.length()))
}

/// Inverse of [`ess_weight`]: the equilibrium allocation `X*(w)`.
pub fn ess_allocation(w: f64, p: &EssParams) -> Result<f64, GameError> {
    p.validate()?;
    if !(w >= p.w_min) {
        return Err(GameError::DomainError { value: w, min: p.w_min });
    }
    if w == p.w_min {
        return Ok(p.v_min);
    }
    // ess_weight(v) >= w_min + (v - v_min)/β - A, so this bracket holds.
    let mut lo = p.v_min;
    let mut hi = p.endowment(w) + p.length() + 1.0;
    while ess_weight(hi, p)? < w {
        hi = p.v_min + 2.0 * (hi - p.v_min);
    }
    for _ in 0..2000 {
        if hi - lo <= 1e-12 {
            break;
        }
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if ess_weight(mid, p)? < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + (hi - lo) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub value: f64,
    pub asymptote: f64,
    pub half_life: f64,
}

pub fn sybil_gap(v: f64, p: &EssParams) -> Result<GapReport, GameError> {
    ess_weight(v, p)?;
    let x = v - p.v_min;
    Ok(GapReport {
        value: 0.0 - p.discount() * saturation(x, p.length()),
        asymptote: -p.discount(),
        half_life: p.length() * LN_2,
    })
}

/// Over-allocation `X*(w) - e(w)` relative to the endowment line.
pub fn staking_gap(w: f64, p: &EssParams) -> Result<GapReport, GameError> {
    let x = ess_allocation(w, p)?;
    Ok(GapReport {
        value: x - p.endowment(w),
        asymptote: p.length(),
        half_life: p.discount() * LN_2,
    })
}

/// The gap written in the allocation coordinate `u = X*(w) - v_min`,
/// where it is exactly `L(1 - exp(-u/L))`.
pub fn staking_gap_at_allocation(u: f64, p: &EssParams) -> Result<f64, GameError> {
    p.validate()?;
    if !(u >= 0.0) {
        return Err(GameError::DomainError { value: u, min: 0.0 });
    }
    Ok(p.length() * saturation(u, p.length()))
}

pub fn equilibrium_cost(w: f64, p: &EssParams) -> Result<f64, GameError> {
    Ok(equilibrium_log_cost(w, p)?.exp())
}

/// Natural log of [`equilibrium_cost`], which stays comparable after the
/// cost itself underflows. Zero cost maps to negative infinity.
pub fn equilibrium_log_cost(w: f64, p: &EssParams) -> Result<f64, GameError> {
    let x = ess_allocation(w, p)?;
    let scale = p.net_payoff * p.price_scale / p.beta;
    if scale == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(scale.ln() - (x - p.v_min) / p.length())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StakingResource {
    pub id: String,
    pub beta: f64,
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceChoice {
    pub index: usize,
    pub id: String,
    pub log_cost: f64,
    /// Log cost per resource; `None` where the scarcity cap excludes it.
    pub log_costs: Vec<Option<f64>>,
}

/// Cheapest resource at `reference_wealth`. Each resource uses its own slope
/// and `σ = 1/price`. A resource is admissible only if its price exceeds no
/// other listed price by `scarcity_cap` or more. Ties keep the first.
pub fn select_staking_resource(
    resources: &[StakingResource],
    scarcity_cap: Option<f64>,
    base: &EssParams,
    reference_wealth: f64,
) -> Result<ResourceChoice, GameError> {
    if resources.is_empty() {
        return Err(GameError::EmptyResourceList);
    }
    for r in resources {
        if !(r.beta > 0.0 && r.price > 0.0) {
            return Err(GameError::InvalidParams(format!("resource {} needs beta > 0 and price > 0", r.id)));
        }
    }
    let mut costs = Vec::with_capacity(resources.len());
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in resources.iter().enumerate() {
        let admissible = scarcity_cap.is_none_or(|u| resources.iter().all(|h| r.price - h.price < u));
        if !admissible {
            costs.push(None);
            continue;
        }
        let params = EssParams { beta: r.beta, ..*base }.with_price(r.price);
        let c = equilibrium_log_cost(reference_wealth, &params)?;
        costs.push(Some(c));
        if best.is_none_or(|(_, b)| c < b) {
            best = Some((i, c));
        }
    }
    let (index, log_cost) = best.ok_or(GameError::NoAdmissibleResource)?;
    Ok(ResourceChoice {
        index,
        id: resources[index].id.clone(),
        log_cost,
        log_costs: costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use CorruptionStatus::{Correct, Faulty};

    fn params(beta: f64, np: f64, sigma: f64) -> EssParams {
        EssParams {
            beta,
            v_min: 0.0,
            w_min: 0.0,
            net_payoff: np,
            price_scale: sigma,
            w_max: 100.0,
        }
    }

    #[test]
    fn reward_and_cost_examples() {
        let p = GamePayoffs::new(10.0, 4.0, 14.0, 1.0, 5.0).unwrap();
        let none = SubgameProbs::new(0.5, 0.0, 0.5).unwrap();
        assert_eq!(expected_reward(Correct, &none, &p), 10.0);
        assert_eq!(expected_reward(Faulty, &none, &p), 10.0);
        let q = SubgameProbs::new(0.25, 0.5, 0.25).unwrap();
        assert_eq!(expected_reward(Correct, &q, &p), 7.0);
        assert_eq!(expected_reward(Faulty, &q, &p), 12.0);
        assert_eq!(expected_cost(Correct, &q, &p), 1.0);
        assert_eq!(expected_cost(Faulty, &q, &p), 3.0);
        let flat = GamePayoffs::new(10.0, 4.0, 14.0, 1.0, 1.0).unwrap();
        assert_eq!(expected_cost(Faulty, &q, &flat), 1.0);
        assert!(SubgameProbs::new(0.5, 0.5, 0.5).is_err());
        assert!(GamePayoffs::new(10.0, 12.0, 14.0, 1.0, 1.0).is_err());
        assert!(GamePayoffs::new(10.0, 4.0, 14.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn classification_examples() {
        let zero = GamePayoffs::new(1.0, 0.5, 2.0, 0.0, 0.0).unwrap();
        assert_eq!(classify_equilibrium(&zero), EquilibriumClass::PoolingJoin);
        let sep = GamePayoffs::new(10.0, 2.0, 20.0, 3.0, 4.0).unwrap();
        assert_eq!(classify_equilibrium(&sep), EquilibriumClass::SeparatingAdversarial);
        let block = GamePayoffs::new(10.0, 5.0, 6.0, 1.0, 9.0).unwrap();
        assert_eq!(classify_equilibrium(&block), EquilibriumClass::PoolingJoinViaAdversaryBlock);
        let abstain = GamePayoffs::new(10.0, 2.0, 4.0, 3.0, 5.0).unwrap();
        assert_eq!(classify_equilibrium(&abstain), EquilibriumClass::PoolingAbstain);
    }

    #[test]
    fn adversary_examples() {
        let block = GamePayoffs::new(10.0, 5.0, 6.0, 1.0, 9.0).unwrap();
        assert_eq!(adversary_move(&block), AdversaryMove::NoAttack);
        let attack = GamePayoffs::new(10.0, 2.0, 20.0, 3.0, 4.0).unwrap();
        assert_eq!(adversary_move(&attack), AdversaryMove::Attack);
        let tie = GamePayoffs::new(10.0, 2.0, 11.0, 3.0, 4.0).unwrap();
        assert_eq!(tie.attacker_net(), tie.standard_net());
        assert_eq!(adversary_move(&tie), AdversaryMove::NoAttack);
    }

    #[test]
    fn ess_examples() {
        let p = params(1.0, 1.0, 1.0);
        assert_eq!(ess_weight(0.0, &p).unwrap(), 0.0);
        assert_relative_eq!(ess_weight(1.0, &p).unwrap(), (-1.0f64).exp(), max_relative = 1e-14);
        let tiny = params(2.0, 1e-12, 1.0);
        assert_relative_eq!(ess_weight(3.0, &tiny).unwrap(), 1.5, max_relative = 1e-9);
        let none = params(2.0, 0.0, 1.0);
        assert_eq!(ess_weight(3.0, &none).unwrap(), 1.5);
        assert!(matches!(ess_weight(-1.0, &p), Err(GameError::DomainError { .. })));
    }

    #[test]
    fn gap_examples() {
        let p = params(2.0, 1.0, 1.0);
        let s = sybil_gap(0.0, &p).unwrap();
        assert_eq!(s.value, 0.0);
        assert_relative_eq!(s.asymptote, -0.25);
        assert_relative_eq!(s.half_life, 0.5 * LN_2);
        assert_relative_eq!(sybil_gap(1e3, &p).unwrap().value, -0.25);

        let g = staking_gap(0.0, &p).unwrap();
        assert_eq!(g.value, 0.0);
        assert_relative_eq!(g.asymptote, 0.5);
        assert_relative_eq!(g.half_life, 0.25 * LN_2);
        assert_relative_eq!(staking_gap(1e3, &p).unwrap().value, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn sybil_gap_half_life() {
        let p = params(2.0, 1.0, 1.0);
        let s = sybil_gap(0.0, &p).unwrap();
        let at = sybil_gap(s.half_life, &p).unwrap();
        assert!((at.value - s.asymptote / 2.0).abs() < 1e-9);
    }

    /// In the allocation coordinate the staking gap halves its distance to
    /// the asymptote every `L ln 2`.
    #[test]
    fn staking_gap_is_exponential_in_allocation() {
        let p = params(2.0, 1.0, 1.0);
        let l = p.length();
        let g = staking_gap_at_allocation(l * LN_2, &p).unwrap();
        assert!((g - l / 2.0).abs() < 1e-12);
        for u in [0.1, 0.7, 2.0] {
            let w = ess_weight(p.v_min + u, &p).unwrap();
            let direct = staking_gap(w, &p).unwrap().value;
            assert!((direct - staking_gap_at_allocation(u, &p).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn allocation_inverts_weight() {
        let p = EssParams {
            beta: 3.0,
            v_min: 2.0,
            w_min: 5.0,
            net_payoff: 4.0,
            price_scale: 0.5,
            w_max: 50.0,
        };
        for i in 0..=100 {
            let w = p.w_min + (p.w_max - p.w_min) * i as f64 / 100.0;
            let x = ess_allocation(w, &p).unwrap();
            let back = ess_weight(x, &p).unwrap();
            assert!((back - w).abs() <= 1e-9 * w.abs().max(1.0), "w={w} back={back}");
        }
    }

    #[test]
    fn cost_examples() {
        assert_relative_eq!(equilibrium_cost(0.0, &params(4.0, 2.0, 1.0)).unwrap(), 0.5);
        assert!(equilibrium_cost(5.0, &params(1e9, 2.0, 1.0)).unwrap() < 1e-8);
        assert!(equilibrium_cost(1e4, &params(1.0, 2.0, 1.0)).unwrap() < 1e-12);
        assert_eq!(equilibrium_cost(1.0, &params(1.0, 0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn cost_comparative_statics() {
        for &w in &[0.0, 0.5, 2.0, 10.0] {
            let mut prev = f64::INFINITY;
            for &beta in &[0.1, 0.5, 1.0, 2.0, 10.0, 100.0] {
                let c = equilibrium_log_cost(w, &params(beta, 1.0, 1.0)).unwrap();
                assert!(c < prev, "beta={beta} w={w}");
                prev = c;
            }
            let mut prev = f64::INFINITY;
            for &price in &[0.5, 1.0, 2.0, 4.0] {
                let c = equilibrium_log_cost(w, &params(1.0, 1.0, 1.0).with_price(price)).unwrap();
                assert!(c < prev, "price={price} w={w}");
                prev = c;
            }
        }
    }

    #[test]
    fn resource_selection() {
        let base = params(1.0, 1.0, 1.0);
        let money = StakingResource { id: "money".into(), beta: 100.0, price: 1.0 };
        let hash = StakingResource { id: "hash".into(), beta: 0.1, price: 1.0 };
        let pick = select_staking_resource(&[hash.clone(), money.clone()], None, &base, 1.0).unwrap();
        assert_eq!(pick.id, "money");
        assert_eq!(select_staking_resource(std::slice::from_ref(&hash), None, &base, 1.0).unwrap().id, "hash");
        let twin = StakingResource { id: "twin".into(), ..money.clone() };
        assert_eq!(select_staking_resource(&[money.clone(), twin], None, &base, 1.0).unwrap().index, 0);
        assert_eq!(select_staking_resource(&[], None, &base, 1.0), Err(GameError::EmptyResourceList));

        let scarce = StakingResource { id: "scarce".into(), beta: 100.0, price: 50.0 };
        let pick = select_staking_resource(&[money.clone(), scarce.clone()], None, &base, 1.0).unwrap();
        assert_eq!(pick.id, "scarce");
        let pick = select_staking_resource(&[money, scarce], Some(10.0), &base, 1.0).unwrap();
        assert_eq!(pick.id, "money");
        assert_eq!(pick.log_costs[1], None);
    }
}
