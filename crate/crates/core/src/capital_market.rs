//! Resources, prices and wealth; the capital-majority check; capital
//! thresholds; the price-adaptive attack-cost estimator and the
//! gambler's-ruin Monte Carlo.

use crate::participation_stats::Bound;
use crate::population_model::AgentId;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown resource {0}")]
    UnknownResource(ResourceId),
    #[error("total wealth is zero")]
    ZeroTotalWealth,
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("{agent} holds {held} of {resource}, needs {needed}")]
    InsufficientHoldings {
        agent: AgentId,
        resource: ResourceId,
        held: f64,
        needed: f64,
    },
    #[error("invalid era: {0}")]
    InvalidEra(String),
    #[error("insufficient volume: {available} available, {required} required")]
    InsufficientVolume { available: f64, required: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("price series: {0}")]
    Series(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceId(pub String);

impl ResourceId {
    pub fn new(s: impl Into<String>) -> Self {
        ResourceId(s.into())
    }
}

impl fmt::Display for ResourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type Holdings = BTreeMap<ResourceId, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub staking: ResourceId,
    prices: BTreeMap<ResourceId, f64>,
    endowments: BTreeMap<AgentId, Holdings>,
    allocations: BTreeMap<AgentId, Holdings>,
}

impl Market {
    /// Allocations start equal to endowments.
    pub fn new(
        staking: ResourceId,
        prices: BTreeMap<ResourceId, f64>,
        endowments: BTreeMap<AgentId, Holdings>,
    ) -> Result<Self, MarketError> {
        if !prices.contains_key(&staking) {
            return Err(MarketError::UnknownResource(staking));
        }
        for (g, p) in &prices {
            if !(*p > 0.0 && p.is_finite()) {
                return Err(MarketError::InvalidMarket(format!("price of {g} must be positive")));
            }
        }
        for (n, row) in &endowments {
            for (g, e) in row {
                if !prices.contains_key(g) {
                    return Err(MarketError::UnknownResource(g.clone()));
                }
                if !(*e >= 0.0 && e.is_finite()) {
                    return Err(MarketError::InvalidMarket(format!("endowment of {n} in {g} is negative")));
                }
            }
        }
        Ok(Market {
            staking,
            prices,
            allocations: endowments.clone(),
            endowments,
        })
    }

    pub fn price(&self, g: &ResourceId) -> Result<f64, MarketError> {
        self.prices
            .get(g)
            .copied()
            .ok_or_else(|| MarketError::UnknownResource(g.clone()))
    }

    pub fn resources(&self) -> impl Iterator<Item = &ResourceId> {
        self.prices.keys()
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.endowments.keys()
    }

    pub fn endowment(&self, n: &AgentId) -> Result<&Holdings, MarketError> {
        self.endowments
            .get(n)
            .ok_or_else(|| MarketError::UnknownAgent(n.clone()))
    }

    pub fn allocation(&self, n: &AgentId) -> Result<&Holdings, MarketError> {
        self.allocations
            .get(n)
            .ok_or_else(|| MarketError::UnknownAgent(n.clone()))
    }

    pub fn supply(&self, g: &ResourceId) -> f64 {
        self.endowments.values().filter_map(|row| row.get(g)).sum()
    }

    fn value(&self, h: &Holdings) -> f64 {
        h.iter().map(|(g, q)| self.prices[g] * q).sum()
    }

    pub fn total_endowment_value(&self) -> f64 {
        self.endowments.values().map(|h| self.value(h)).sum()
    }

    pub fn total_allocation_value(&self) -> f64 {
        self.allocations.values().map(|h| self.value(h)).sum()
    }

    /// `buyer` takes `quantity` of `resource` from `seller` and pays its
    /// market value in `payment`. Nothing changes on error.
    pub fn trade(
        &mut self,
        buyer: &AgentId,
        seller: &AgentId,
        resource: &ResourceId,
        quantity: f64,
        payment: &ResourceId,
    ) -> Result<(), MarketError> {
        if !(quantity >= 0.0 && quantity.is_finite()) {
            return Err(MarketError::InvalidRange(format!("quantity {quantity}")));
        }
        let pay = quantity * self.price(resource)? / self.price(payment)?;
        let held = |m: &Self, n: &AgentId, g: &ResourceId| -> Result<f64, MarketError> {
            Ok(m.allocation(n)?.get(g).copied().unwrap_or(0.0))
        };
        let s_held = held(self, seller, resource)?;
        if s_held < quantity {
            return Err(MarketError::InsufficientHoldings {
                agent: seller.clone(),
                resource: resource.clone(),
                held: s_held,
                needed: quantity,
            });
        }
        let b_held = held(self, buyer, payment)?;
        if b_held < pay {
            return Err(MarketError::InsufficientHoldings {
                agent: buyer.clone(),
                resource: payment.clone(),
                held: b_held,
                needed: pay,
            });
        }
        let mut add = |n: &AgentId, g: &ResourceId, d: f64| {
            *self
                .allocations
                .get_mut(n)
                .expect("checked above")
                .entry(g.clone())
                .or_insert(0.0) += d;
        };
        add(seller, resource, -quantity);
        add(buyer, resource, quantity);
        add(buyer, payment, -pay);
        add(seller, payment, pay);
        Ok(())
    }
}

pub fn wealth(agent: &AgentId, market: &Market) -> Result<f64, MarketError> {
    Ok(market.value(market.endowment(agent)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WealthLedger {
    pub w: BTreeMap<AgentId, f64>,
    pub w_total: f64,
    pub w_adversary: f64,
}

impl WealthLedger {
    pub fn from_market(market: &Market, faulty: &BTreeSet<AgentId>) -> Result<Self, MarketError> {
        let mut w = BTreeMap::new();
        for n in market.agents() {
            w.insert(n.clone(), wealth(n, market)?);
        }
        if let Some(f) = faulty.iter().find(|f| !w.contains_key(*f)) {
            return Err(MarketError::UnknownAgent(f.clone()));
        }
        let w_total = w.values().sum();
        let w_adversary = faulty.iter().map(|f| w[f]).sum();
        Ok(WealthLedger { w, w_total, w_adversary })
    }

    pub fn adversary_share(&self) -> Result<f64, MarketError> {
        if self.w_total <= 0.0 {
            return Err(MarketError::ZeroTotalWealth);
        }
        Ok(self.w_adversary / self.w_total)
    }
}

fn check_k(k: f64) -> Result<(), MarketError> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(MarketError::InvalidThreshold(k))
    }
}

pub fn honest_majority_of_capital(ledger: &WealthLedger, k: f64) -> Result<bool, MarketError> {
    check_k(k)?;
    Ok(ledger.adversary_share()? < k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackAllocation {
    pub share: f64,
    pub quantities: Holdings,
    pub cost: f64,
}

/// When the adversary holds at least `k` of all wealth, the proportional
/// basket buys that share of every resource for exactly its wealth.
pub fn exhibit_attack_allocation(
    ledger: &WealthLedger,
    market: &Market,
    k: f64,
) -> Result<Option<AttackAllocation>, MarketError> {
    check_k(k)?;
    let share = ledger.adversary_share()?;
    if share < k {
        return Ok(None);
    }
    let quantities: Holdings = market
        .resources()
        .map(|g| (g.clone(), share * market.supply(g)))
        .collect();
    let cost = market.value(&quantities);
    Ok(Some(AttackAllocation {
        share,
        quantities,
        cost,
    }))
}

pub fn capital_sample_size(replica_count: f64, p_v: f64) -> f64 {
    replica_count * p_v
}

/// Probabilistic rule: the staked value must reach `floor_rule` of all
/// liquid wealth.
pub fn min_capital_threshold(total: f64, floor_rule: f64) -> Result<f64, MarketError> {
    if !(total > 0.0) || !(floor_rule > 0.0 && floor_rule <= 1.0) {
        return Err(MarketError::InvalidRange(format!("total={total}, floor={floor_rule}")));
    }
    Ok(total * floor_rule)
}

/// Deterministic rule over wealth: staked value strictly above `total·y_max/k`.
pub fn min_capital_threshold_deterministic(total: f64, y_max: f64, k: f64) -> Result<Bound, MarketError> {
    if !(total > 0.0) {
        return Err(MarketError::InvalidRange(format!("total={total}")));
    }
    let phi = crate::participation_stats::min_participation_fraction_deterministic(y_max, k)
        .map_err(|e| MarketError::InvalidRange(e.to_string()))?;
    Ok(Bound {
        value: total * phi.value,
        strict: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub reference_cost: f64,
    pub vs_full_base: f64,
    pub vs_super_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackCostComparison {
    pub fiat_total: f64,
    pub physical_media: f64,
    pub k: f64,
    /// `k` of the whole fiat base.
    pub super_k_full: f64,
    /// `k` of the base without physical media.
    pub super_k_electronic: f64,
    /// Ratios of the full base and of the super-k cost to each reference.
    pub ratios: Vec<RatioRow>,
}

/// The idealized cost of holding `k` of fiat money, compared against
/// reference attack costs.
pub fn attack_cost_comparison(
    fiat_total: f64,
    physical_media: f64,
    k: f64,
    references: &[f64],
) -> Result<AttackCostComparison, MarketError> {
    check_k(k)?;
    if !(fiat_total > 0.0) || !(physical_media >= 0.0 && physical_media <= fiat_total) {
        return Err(MarketError::InvalidRange(format!(
            "fiat_total={fiat_total}, physical={physical_media}"
        )));
    }
    if let Some(r) = references.iter().find(|r| !(**r > 0.0)) {
        return Err(MarketError::InvalidRange(format!("reference cost {r}")));
    }
    let super_k_full = fiat_total * k;
    Ok(AttackCostComparison {
        fiat_total,
        physical_media,
        k,
        super_k_full,
        super_k_electronic: (fiat_total - physical_media) * k,
        ratios: references
            .iter()
            .map(|&r| RatioRow {
                reference_cost: r,
                vs_full_base: fiat_total / r,
                vs_super_k: super_k_full / r,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEra {
    pub index: usize,
    pub price: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricePoint {
    pub slot: u64,
    pub price: f64,
    pub volume: f64,
}

/// Groups slots by price into eras, numbered from 1 in ascending price.
pub fn price_eras(points: &[PricePoint]) -> Result<Vec<PriceEra>, MarketError> {
    let mut by_price: Vec<(f64, f64)> = Vec::new();
    for p in points {
        if !(p.price >= 0.0 && p.price.is_finite()) {
            return Err(MarketError::InvalidEra(format!("slot {} has price {}", p.slot, p.price)));
        }
        if !(p.volume >= 0.0 && p.volume.is_finite()) {
            return Err(MarketError::InvalidEra(format!("slot {} has volume {}", p.slot, p.volume)));
        }
        by_price.push((p.price, p.volume));
    }
    by_price.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut eras: Vec<PriceEra> = Vec::new();
    for (price, volume) in by_price {
        match eras.last_mut() {
            Some(e) if e.price == price => e.volume += volume,
            _ => eras.push(PriceEra {
                index: eras.len() + 1,
                price,
                volume,
            }),
        }
    }
    Ok(eras)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackCost {
    pub cost: f64,
    /// Era in which the threshold is reached; `None` for a zero threshold.
    pub crossing_era: Option<usize>,
    /// Units bought in the crossing era before the threshold.
    pub pre_quantity: f64,
    /// Units of the crossing era left after the threshold.
    pub post_quantity: f64,
}

/// Buys the threshold quantity era by era from the cheapest price up.
/// Eras sharing a price are merged first.
pub fn price_adaptive_attack_cost(eras: &[PriceEra], threshold: f64) -> Result<AttackCost, MarketError> {
    if !(threshold >= 0.0 && threshold.is_finite()) {
        return Err(MarketError::InvalidRange(format!("threshold {threshold}")));
    }
    let points: Vec<PricePoint> = eras
        .iter()
        .map(|e| PricePoint {
            slot: e.index as u64,
            price: e.price,
            volume: e.volume,
        })
        .collect();
    let merged = price_eras(&points)?;
    let available: f64 = merged.iter().map(|e| e.volume).sum();
    if available < threshold {
        return Err(MarketError::InsufficientVolume {
            available,
            required: threshold,
        });
    }
    let mut out = AttackCost {
        cost: 0.0,
        crossing_era: None,
        pre_quantity: 0.0,
        post_quantity: 0.0,
    };
    if threshold == 0.0 {
        return Ok(out);
    }
    let mut bought = 0.0;
    for e in &merged {
        let need = threshold - bought;
        if e.volume >= need {
            out.cost += need * e.price;
            out.crossing_era = Some(e.index);
            out.pre_quantity = need;
            out.post_quantity = e.volume - need;
            return Ok(out);
        }
        out.cost += e.volume * e.price;
        bought += e.volume;
    }
    unreachable!("volume checked above")
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    slot: u64,
    price: f64,
    volume: f64,
}

/// Reads a `slot,price,volume` CSV.
pub fn read_price_series<R: Read>(reader: R) -> Result<Vec<PricePoint>, MarketError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize::<SeriesRow>() {
        let r = row.map_err(|e| MarketError::Series(e.to_string()))?;
        out.push(PricePoint {
            slot: r.slot,
            price: r.price,
            volume: r.volume,
        });
    }
    if out.is_empty() {
        return Err(MarketError::Series("no rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryUtilityParams {
    pub alpha: BTreeMap<ResourceId, f64>,
    pub faulty_exponent: f64,
    pub attack_weight: f64,
    pub attack_prob: f64,
}

impl AdversaryUtilityParams {
    pub fn validate(&self) -> Result<(), MarketError> {
        if self.alpha.values().any(|a| !(*a > 0.0)) || !(self.faulty_exponent > 0.0) {
            return Err(MarketError::InvalidParams("exponents must be positive".into()));
        }
        if !(self.attack_weight > 0.0) {
            return Err(MarketError::InvalidParams("attack_weight must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.attack_prob) {
            return Err(MarketError::InvalidParams("attack_prob outside [0,1]".into()));
        }
        Ok(())
    }

    /// Attack weight set to 1e9 times the largest standard utility among `candidates`.
    pub fn default_attack_weight(alpha: &BTreeMap<ResourceId, f64>, candidates: &[Holdings]) -> f64 {
        let max = candidates
            .iter()
            .map(|x| standard_utility(x, alpha))
            .fold(0.0, f64::max);
        1e9 * max.max(1.0)
    }
}

fn standard_utility(x: &Holdings, alpha: &BTreeMap<ResourceId, f64>) -> f64 {
    alpha
        .iter()
        .map(|(g, a)| x.get(g).copied().unwrap_or(0.0).powf(*a))
        .product()
}

pub fn adversary_utility(
    allocation: &Holdings,
    params: &AdversaryUtilityParams,
    market: &Market,
) -> Result<f64, MarketError> {
    params.validate()?;
    if let Some((g, q)) = allocation.iter().find(|(_, q)| !(**q >= 0.0)) {
        return Err(MarketError::InvalidRange(format!("allocation of {g} is {q}")));
    }
    let standard = standard_utility(allocation, &params.alpha);
    if params.attack_prob == 0.0 {
        return Ok(standard);
    }
    let v = allocation.get(&market.staking).copied().unwrap_or(0.0);
    Ok(standard + params.attack_weight * params.attack_prob * v.powf(params.faulty_exponent))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinParams {
    pub ico_flips: u64,
    pub extension_flips: u64,
    pub reorder_budget: u64,
    pub y_bar: f64,
    pub k: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinEstimate {
    pub failures: u64,
    pub trials: u64,
    pub probability: f64,
    pub std_error: f64,
}

const RUIN_BATCH: u64 = 256;

/// Each trial draws the faulty count at the decision point: the first
/// `reorder_budget` flips are faulty and the rest are Bernoulli(`y_bar`).
/// The decision falls after `ico_flips + extension_flips` flips. Trials
/// run in fixed-size batches, each on its own stream of one seeded
/// generator, so the result does not depend on the thread count.
pub fn gamblers_ruin_sim(p: &RuinParams) -> Result<RuinEstimate, MarketError> {
    let bad = |m: &str| Err(MarketError::InvalidParams(m.to_string()));
    if p.trials == 0 {
        return bad("trials must be at least 1");
    }
    if !(0.0..=1.0).contains(&p.y_bar) {
        return bad("y_bar outside [0,1]");
    }
    if !(p.k > 0.0 && p.k <= 1.0) {
        return bad("k outside (0,1]");
    }
    let n = p
        .ico_flips
        .checked_add(p.extension_flips)
        .filter(|n| *n > 0)
        .ok_or_else(|| MarketError::InvalidParams("need at least one flip".into()))?;
    let forced = p.reorder_budget.min(n);
    let free = Binomial::new(n - forced, p.y_bar).map_err(|e| MarketError::InvalidParams(e.to_string()))?;
    let batches = p.trials.div_ceil(RUIN_BATCH);
    let failures: u64 = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
            rng.set_stream(b);
            let count = RUIN_BATCH.min(p.trials - b * RUIN_BATCH);
            (0..count)
                .filter(|_| {
                    let faulty = forced + free.sample(&mut rng);
                    faulty as f64 >= p.k * n as f64
                })
                .count() as u64
        })
        .sum();
    let prob = failures as f64 / p.trials as f64;
    Ok(RuinEstimate {
        failures,
        trials: p.trials,
        probability: prob,
        std_error: (prob * (1.0 - prob) / p.trials as f64).sqrt(),
    })
}
