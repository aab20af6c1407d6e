//! Scripted adversaries: book-prize participation bias, sybil identities,
//! pseudo-transfers among an attacker's own addresses, and fixed versus
//! dynamic sampling frames. Scenarios are plain JSON; each run yields a
//! [`ScenarioReport`].

use crate::capital_market::{gamblers_ruin_sim, MarketError, RuinEstimate, RuinParams};
use crate::krnc_protocol::script::{run_script, ProtocolScript};
use crate::krnc_protocol::{InvariantCheck, ProtocolError};
use crate::population_model::fixture::{AgentRecord, PopulationFixture};
use crate::population_model::{
    corruption_share, flat_world, sybil_expand, Agent, AgentId, CorruptionStatus, IdentityId, IdentityMap, Population,
    PopulationError,
};
use crate::Share;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Default ceiling on sybil and pseudo-transfer fan-out.
pub const DEFAULT_FANOUT_CAP: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    BookPrize,
    Sybil,
    PseudoTransfer,
    FrameComparison,
    Protocol,
    Ruin,
}

/// Sampling-frame taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    FixedPermissioned,
    Disposable,
    #[default]
    FixedPermissionless,
    Closed,
    Dynamic,
}

/// A block of identical agents, expanded to `{prefix}{i}` for `i` in `0..count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGroup {
    pub prefix: String,
    pub count: u64,
    pub status: CorruptionStatus,
    pub endowment: f64,
    #[serde(default = "yes")]
    pub participant: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    /// Split every address of the agent (or of every faulty agent) into
    /// `fanout` fresh addresses it still owns.
    Pseudo,
    /// Hand `amount` to a new correct agent.
    Genuine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStep {
    pub slot: u64,
    pub kind: TransferKind,
    #[serde(default)]
    pub agent: Option<AgentId>,
    #[serde(default = "one")]
    pub fanout: u64,
    #[serde(default)]
    pub amount: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryParams {
    /// Join probability of correct agents; `None` keeps fixture flags.
    #[serde(default)]
    pub correct_propensity: Option<f64>,
    /// Identities per faulty agent; `None` keeps fixture identities.
    #[serde(default)]
    pub sybil_fanout: Option<u64>,
    #[serde(default = "fanout_cap")]
    pub fanout_cap: u64,
    #[serde(default)]
    pub reorder_budget: u64,
    #[serde(default)]
    pub schedule: Vec<TransferStep>,
}

fn fanout_cap() -> u64 {
    DEFAULT_FANOUT_CAP
}

impl Default for AdversaryParams {
    fn default() -> Self {
        AdversaryParams {
            correct_propensity: None,
            sybil_fanout: None,
            fanout_cap: DEFAULT_FANOUT_CAP,
            reorder_budget: 0,
            schedule: Vec::new(),
        }
    }
}

/// Late outside weight for the dynamic frame and pro-rata rewards for the
/// closed one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameParams {
    pub slots: u64,
    #[serde(default)]
    pub late_weight_per_slot: f64,
    #[serde(default)]
    pub reward_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuinSpec {
    pub ico_flips: u64,
    #[serde(default)]
    pub extension_flips: u64,
    pub y_bar: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub kind: ScenarioKind,
    #[serde(default)]
    pub frame: FrameType,
    pub k: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "empty_population")]
    pub population: PopulationFixture,
    #[serde(default)]
    pub groups: Vec<AgentGroup>,
    #[serde(default)]
    pub adversary: AdversaryParams,
    /// Staking resource name in agent endowments.
    #[serde(default = "default_resource")]
    pub resource: String,
    #[serde(default = "unit")]
    pub vote_quantum: f64,
    #[serde(default)]
    pub frame_params: Option<FrameParams>,
    #[serde(default)]
    pub ruin: Option<RuinSpec>,
    #[serde(default)]
    pub protocol: Option<ProtocolScript>,
}

fn empty_population() -> PopulationFixture {
    PopulationFixture { agents: Vec::new() }
}
fn default_resource() -> String {
    "stake".into()
}
fn unit() -> f64 {
    1.0
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(self.k > 0.0 && self.k <= 1.0) {
            return bad(format!("k = {} outside (0,1]", self.k));
        }
        if let Some(p) = self.adversary.correct_propensity {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("propensity {p} outside [0,1]"));
            }
        }
        if self.adversary.fanout_cap == 0 {
            return bad("fanout cap must be positive".into());
        }
        let needs_agents = !matches!(self.kind, ScenarioKind::Protocol | ScenarioKind::Ruin);
        if needs_agents && self.population.agents.is_empty() && self.groups.is_empty() {
            return bad("no agents".into());
        }
        match self.kind {
            ScenarioKind::FrameComparison if self.frame_params.is_none() => bad("frame_params missing".into()),
            ScenarioKind::Ruin if self.ruin.is_none() => bad("ruin parameters missing".into()),
            ScenarioKind::Protocol if self.protocol.is_none() => bad("protocol script missing".into()),
            _ => Ok(()),
        }
    }

    /// Fixture agents followed by expanded groups.
    pub fn fixture(&self) -> PopulationFixture {
        let mut agents = self.population.agents.clone();
        for g in &self.groups {
            agents.extend((0..g.count).map(|i| AgentRecord {
                id: AgentId::new(format!("{}{i}", g.prefix)),
                status: g.status,
                endowments: BTreeMap::from([(self.resource.clone(), g.endowment)]),
                trust: Vec::new(),
                trusts_network: false,
                participant: g.participant,
                identities: Vec::new(),
                propensity: None,
            }));
        }
        PopulationFixture { agents }
    }
}

/// One corruption level, network-wide and among protocol participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    pub unit: String,
    pub network: Share,
    pub protocol: Share,
    pub network_fraction: f64,
    pub protocol_fraction: f64,
}

impl LevelReport {
    fn new(level: u8, unit: &str, network: Share, protocol: Share) -> Self {
        LevelReport {
            level,
            unit: unit.into(),
            network,
            protocol,
            network_fraction: network.value().unwrap_or(0.0),
            protocol_fraction: protocol.value().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub slot: u64,
    pub addresses: u64,
    /// Largest single address's share of stake.
    pub max_address_share: f64,
    /// Fewest addresses holding at least `k` of stake.
    pub address_nakamoto: u64,
    /// Fewest agents holding at least `k` of stake.
    pub agent_nakamoto: u64,
    pub control: Share,
    pub control_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePoint {
    pub slot: u64,
    pub closed_fraction: f64,
    pub dynamic_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolSummary {
    pub digest: String,
    pub supply: f64,
    pub messages: usize,
    pub rejected: Vec<(usize, String)>,
    pub invariants: Vec<InvariantCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub kind: ScenarioKind,
    pub frame: FrameType,
    pub k: f64,
    pub seed: u64,
    pub levels: Vec<LevelReport>,
    pub weight_shares: BTreeMap<String, f64>,
    /// Weight shares as exact ratios when all endowments are whole.
    pub exact_weights: BTreeMap<String, Share>,
    pub success: BTreeMap<String, bool>,
    pub trace: Vec<TracePoint>,
    pub frames: Vec<FramePoint>,
    pub crossing_slot: Option<u64>,
    pub analytic_crossing_slot: Option<u64>,
    pub ruin: Option<RuinEstimate>,
    pub protocol: Option<ProtocolSummary>,
}

impl ScenarioReport {
    fn empty(spec: &ScenarioSpec) -> Self {
        ScenarioReport {
            name: spec.name.clone(),
            kind: spec.kind,
            frame: spec.frame,
            k: spec.k,
            seed: spec.seed,
            levels: Vec::new(),
            weight_shares: BTreeMap::new(),
            exact_weights: BTreeMap::new(),
            success: BTreeMap::new(),
            trace: Vec::new(),
            frames: Vec::new(),
            crossing_slot: None,
            analytic_crossing_slot: None,
            ruin: None,
            protocol: None,
        }
    }

    /// Every reported fraction lies in [0,1].
    pub fn fractions_in_range(&self) -> bool {
        let ok = |x: f64| (0.0..=1.0).contains(&x);
        self.levels.iter().all(|l| ok(l.network_fraction) && ok(l.protocol_fraction))
            && self.weight_shares.values().all(|x| ok(*x))
            && self.trace.iter().all(|t| ok(t.control_fraction) && ok(t.max_address_share))
            && self.frames.iter().all(|f| ok(f.closed_fraction) && ok(f.dynamic_fraction))
    }
}

pub fn run(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    spec.validate()?;
    match spec.kind {
        ScenarioKind::BookPrize => run_book_prize(spec),
        ScenarioKind::Sybil => run_sybil(spec),
        ScenarioKind::PseudoTransfer => run_pseudo_transfer(spec),
        ScenarioKind::FrameComparison => run_frame_comparison(spec),
        ScenarioKind::Protocol => run_protocol(spec),
        ScenarioKind::Ruin => run_ruin(spec),
    }
}

/// Identities per agent after optional sybil fan-out of faulty agents.
fn identity_map(spec: &ScenarioSpec, fx: &PopulationFixture) -> IdentityMap {
    let mut map = fx.identity_map();
    if let Some(f) = spec.adversary.sybil_fanout {
        let f = f.clamp(1, spec.adversary.fanout_cap);
        for r in fx.agents.iter().filter(|r| r.status.is_faulty()) {
            map.identities.retain(|_, o| o != &r.id);
            for j in 0..f {
                map.insert(IdentityId::new(format!("{}#{j}", r.id)), r.id.clone());
            }
        }
    }
    map
}

fn identity_share(map: &IdentityMap, pop: &Population, members: &BTreeSet<AgentId>) -> Result<Share, ScenarioError> {
    let ids: Vec<IdentityId> = map
        .identities
        .iter()
        .filter(|(_, o)| members.contains(*o))
        .map(|(i, _)| i.clone())
        .collect();
    Ok(corruption_share(&sybil_expand(map, pop, &ids)?))
}

/// Exact share of resource held by faulty members when every endowment is
/// a whole number.
fn integral_weight_share(endow: &[(Agent, f64)]) -> Option<Share> {
    let mut part = 0u64;
    let mut total = 0u64;
    for (a, e) in endow {
        if e.fract() != 0.0 || *e < 0.0 || *e > 1e15 {
            return None;
        }
        total += *e as u64;
        if a.status.is_faulty() {
            part += *e as u64;
        }
    }
    Some(Share::new(part, total))
}

/// Level reports plus float and exact weight shares.
type Levels = (Vec<LevelReport>, BTreeMap<String, f64>, BTreeMap<String, Share>);

fn levels_for(spec: &ScenarioSpec, fx: &PopulationFixture, members: &BTreeSet<AgentId>) -> Result<Levels, ScenarioError> {
    let pop = fx.population()?;
    let map = identity_map(spec, fx);
    let everyone: BTreeSet<AgentId> = pop.agents().iter().map(|a| a.id.clone()).collect();
    let agents_in = |set: &BTreeSet<AgentId>| -> Vec<Agent> { pop.agents().iter().filter(|a| set.contains(&a.id)).cloned().collect() };
    let endow_in = |set: &BTreeSet<AgentId>| -> Vec<(Agent, f64)> {
        fx.endowments(&spec.resource, false)
            .into_iter()
            .filter(|(a, _)| set.contains(&a.id))
            .collect()
    };
    let l0 = LevelReport::new(0, "agents", corruption_share(&agents_in(&everyone)), corruption_share(&agents_in(members)));
    let l1 = LevelReport::new(1, "identities", identity_share(&map, &pop, &everyone)?, identity_share(&map, &pop, members)?);
    let net_e = endow_in(&everyone);
    let pro_e = endow_in(members);
    let l2 = LevelReport::new(
        2,
        "votes",
        flat_world(&net_e, spec.vote_quantum)?.share(),
        flat_world(&pro_e, spec.vote_quantum)?.share(),
    );
    let mut w = BTreeMap::new();
    let mut exact = BTreeMap::new();
    for (label, e) in [("network_weight", &net_e), ("protocol_weight", &pro_e)] {
        let total: f64 = e.iter().map(|(_, x)| x).sum();
        let faulty: f64 = e.iter().filter(|(a, _)| a.status.is_faulty()).map(|(_, x)| x).sum();
        w.insert(label.to_string(), if total > 0.0 { faulty / total } else { 0.0 });
        if let Some(s) = integral_weight_share(e) {
            exact.insert(label.to_string(), s);
        }
    }
    Ok((vec![l0, l1, l2], w, exact))
}

/// Faulty agents always join; correct agents keep their fixture flag or,
/// with a propensity set, join independently with that probability.
pub fn run_book_prize(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let mut fx = spec.fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for r in &mut fx.agents {
        r.participant = match (r.status, spec.adversary.correct_propensity) {
            (CorruptionStatus::Faulty, _) => true,
            (CorruptionStatus::Correct, Some(p)) => rng.random::<f64>() < p,
            (CorruptionStatus::Correct, None) => r.participant,
        };
    }
    let members: BTreeSet<AgentId> = fx.agents.iter().filter(|r| r.participant).map(|r| r.id.clone()).collect();
    let (levels, weights, exact) = levels_for(spec, &fx, &members)?;
    let mut rep = ScenarioReport::empty(spec);
    let k = spec.k;
    rep.success.insert("attack_succeeds".into(), levels[2].protocol_fraction >= k && !levels[2].protocol.total.eq(&0));
    rep.success.insert("network_consensus_possible".into(), levels[2].network_fraction < k);
    rep.success.insert(
        "bias_raises_corruption".into(),
        levels.iter().all(|l| l.protocol_fraction >= l.network_fraction),
    );
    rep.levels = levels;
    rep.weight_shares = weights;
    rep.exact_weights = exact;
    Ok(rep)
}

/// Tallies the whole network by identity and by quantized weight.
pub fn run_sybil(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let fx = spec.fixture();
    let everyone: BTreeSet<AgentId> = fx.agents.iter().map(|r| r.id.clone()).collect();
    let (levels, weights, exact) = levels_for(spec, &fx, &everyone)?;
    let mut rep = ScenarioReport::empty(spec);
    rep.success.insert("unweighted_consensus_possible".into(), levels[1].network.lt_k(spec.k));
    rep.success.insert("weighted_consensus_possible".into(), levels[2].network.lt_k(spec.k));
    rep.levels = levels;
    rep.weight_shares = weights;
    rep.exact_weights = exact;
    Ok(rep)
}

trait ShareK {
    fn lt_k(&self, k: f64) -> bool;
}

impl ShareK for Share {
    fn lt_k(&self, k: f64) -> bool {
        self.total > 0 && (self.part as f64) < k * self.total as f64
    }
}

/// Address-level stake book for a closed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressBook {
    /// Owner and stake per address, grouped by owner.
    pub holdings: BTreeMap<AgentId, Vec<u64>>,
    pub status: BTreeMap<AgentId, CorruptionStatus>,
    fresh: u64,
}

impl AddressBook {
    pub fn from_fixture(fx: &PopulationFixture, resource: &str) -> Result<Self, ScenarioError> {
        let mut holdings = BTreeMap::new();
        let mut status = BTreeMap::new();
        for r in &fx.agents {
            let e = r.endowments.get(resource).copied().unwrap_or(0.0);
            if e < 0.0 || e.fract() != 0.0 {
                return Err(ScenarioError::Invalid(format!("{}: stake must be a whole number, got {e}", r.id)));
            }
            holdings.insert(r.id.clone(), vec![e as u64]);
            status.insert(r.id.clone(), r.status);
        }
        Ok(AddressBook { holdings, status, fresh: 0 })
    }

    pub fn addresses(&self) -> u64 {
        self.holdings.values().map(|v| v.len() as u64).sum()
    }

    pub fn total(&self) -> u64 {
        self.holdings.values().flatten().sum()
    }

    /// Stake owned by faulty agents over all stake.
    pub fn control(&self) -> Share {
        let part = self
            .holdings
            .iter()
            .filter(|(a, _)| self.status[*a].is_faulty())
            .flat_map(|(_, v)| v)
            .sum();
        Share::new(part, self.total())
    }

    /// Splits each of `agent`'s addresses into `fanout` new ones, keeping
    /// ownership. The address count per agent never exceeds `cap`.
    pub fn pseudo_transfer(&mut self, agent: &AgentId, fanout: u64, cap: u64) {
        let Some(v) = self.holdings.get_mut(agent) else { return };
        let target = (v.len() as u64).saturating_mul(fanout.max(1)).min(cap.max(v.len() as u64)) as usize;
        let per = target / v.len();
        let mut extra = target % v.len();
        let mut out = Vec::with_capacity(target);
        for &s in v.iter() {
            let n = per as u64 + if extra > 0 { 1 } else { 0 };
            extra = extra.saturating_sub(1);
            let base = s / n;
            let rem = s % n;
            out.extend((0..n).map(|j| base + u64::from(j < rem)));
        }
        *v = out;
    }

    /// Moves `amount` from `agent` to a brand-new correct agent.
    pub fn genuine_transfer(&mut self, agent: &AgentId, amount: u64) -> Result<AgentId, ScenarioError> {
        let v = self
            .holdings
            .get_mut(agent)
            .ok_or_else(|| ScenarioError::Invalid(format!("unknown agent {agent}")))?;
        let have: u64 = v.iter().sum();
        if amount > have {
            return Err(ScenarioError::Invalid(format!("{agent} holds {have} < {amount}")));
        }
        let mut left = amount;
        for s in v.iter_mut().rev() {
            let take = left.min(*s);
            *s -= take;
            left -= take;
        }
        self.fresh += 1;
        let id = AgentId::new(format!("fresh{}", self.fresh));
        self.holdings.insert(id.clone(), vec![amount]);
        self.status.insert(id.clone(), CorruptionStatus::Correct);
        Ok(id)
    }

    pub fn snapshot(&self, slot: u64, k: f64) -> TracePoint {
        let total = self.total();
        let mut addr: Vec<u64> = self.holdings.values().flatten().copied().collect();
        addr.sort_unstable_by(|a, b| b.cmp(a));
        let mut agents: Vec<u64> = self.holdings.values().map(|v| v.iter().sum()).collect();
        agents.sort_unstable_by(|a, b| b.cmp(a));
        let control = self.control();
        TracePoint {
            slot,
            addresses: addr.len() as u64,
            max_address_share: if total > 0 { addr[0] as f64 / total as f64 } else { 0.0 },
            address_nakamoto: nakamoto(&addr, total, k),
            agent_nakamoto: nakamoto(&agents, total, k),
            control,
            control_fraction: control.value().unwrap_or(0.0),
        }
    }
}

/// Count of largest holdings needed to reach `k` of `total`.
fn nakamoto(sorted_desc: &[u64], total: u64, k: f64) -> u64 {
    let need = k * total as f64;
    let mut acc = 0u64;
    for (i, s) in sorted_desc.iter().enumerate() {
        acc += s;
        if acc as f64 >= need {
            return i as u64 + 1;
        }
    }
    sorted_desc.len() as u64
}

pub fn run_pseudo_transfer(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let fx = spec.fixture();
    let mut book = AddressBook::from_fixture(&fx, &spec.resource)?;
    let mut rep = ScenarioReport::empty(spec);
    rep.trace.push(book.snapshot(0, spec.k));
    let mut steps = spec.adversary.schedule.clone();
    steps.sort_by_key(|s| s.slot);
    for step in &steps {
        let targets: Vec<AgentId> = match &step.agent {
            Some(a) => vec![a.clone()],
            None => book
                .status
                .iter()
                .filter(|(_, s)| s.is_faulty())
                .map(|(a, _)| a.clone())
                .collect(),
        };
        for a in &targets {
            match step.kind {
                TransferKind::Pseudo => book.pseudo_transfer(a, step.fanout, spec.adversary.fanout_cap),
                TransferKind::Genuine => {
                    book.genuine_transfer(a, step.amount)?;
                }
            }
        }
        rep.trace.push(book.snapshot(step.slot, spec.k));
    }
    let first = rep.trace[0].control;
    let invariant = rep.trace.iter().all(|t| t.control.part * first.total == first.part * t.control.total);
    rep.success.insert("control_invariant".into(), invariant);
    rep.success
        .insert("attack_succeeds".into(), rep.trace.last().is_some_and(|t| !t.control.lt_k(spec.k)));
    rep.weight_shares.insert("initial_control".into(), rep.trace[0].control_fraction);
    rep.weight_shares
        .insert("final_control".into(), rep.trace.last().map_or(0.0, |t| t.control_fraction));
    Ok(rep)
}

/// First slot at which `adversary / (adversary + honest0 + rate·t)` falls
/// below `k`, from the closed form.
pub fn analytic_crossing_slot(adversary: f64, honest0: f64, rate: f64, k: f64) -> Option<u64> {
    let needed = adversary * (1.0 - k) / k;
    if honest0 > needed {
        return Some(0);
    }
    if rate <= 0.0 {
        return None;
    }
    Some(((needed - honest0) / rate).floor() as u64 + 1)
}

/// Closed frame: total weight only grows through pro-rata rewards.
/// Dynamic frame: outside honest weight is claimed at a fixed rate.
pub fn run_frame_comparison(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let fp = spec.frame_params.expect("validated");
    let fx = spec.fixture();
    let endow = fx.endowments(&spec.resource, true);
    let adv: f64 = endow.iter().filter(|(a, _)| a.status.is_faulty()).map(|(_, e)| e).sum();
    let honest0: f64 = endow.iter().filter(|(a, _)| !a.status.is_faulty()).map(|(_, e)| e).sum();
    if adv + honest0 <= 0.0 {
        return Err(ScenarioError::Invalid("no stake".into()));
    }
    let mut rep = ScenarioReport::empty(spec);
    let (mut ca, mut ch) = (adv, honest0);
    let mut dh = honest0;
    for t in 0..=fp.slots {
        if t > 0 {
            ca += ca * fp.reward_rate;
            ch += ch * fp.reward_rate;
            dh += fp.late_weight_per_slot;
        }
        let dynamic_fraction = adv / (adv + dh);
        if rep.crossing_slot.is_none() && dynamic_fraction < spec.k {
            rep.crossing_slot = Some(t);
        }
        rep.frames.push(FramePoint {
            slot: t,
            closed_fraction: ca / (ca + ch),
            dynamic_fraction,
        });
    }
    rep.analytic_crossing_slot = analytic_crossing_slot(adv, honest0, fp.late_weight_per_slot, spec.k)
        .filter(|s| *s <= fp.slots);
    let f0 = adv / (adv + honest0);
    let closed_constant = rep.frames.iter().all(|p| (p.closed_fraction - f0).abs() <= 1e-12);
    rep.success.insert("closed_fraction_constant".into(), closed_constant);
    rep.success.insert("dynamic_crosses_below_k".into(), rep.crossing_slot.is_some());
    rep.success.insert("crossing_matches_analytic".into(), rep.crossing_slot == rep.analytic_crossing_slot);
    rep.weight_shares.insert("initial_fraction".into(), f0);
    rep.weight_shares
        .insert("final_dynamic_fraction".into(), rep.frames.last().map_or(f0, |p| p.dynamic_fraction));
    Ok(rep)
}

pub fn run_protocol(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let script = spec.protocol.as_ref().expect("validated");
    let run = run_script(script)?;
    let mut rep = ScenarioReport::empty(spec);
    rep.success.insert("invariants_hold".into(), run.invariants.all_passed());
    rep.protocol = Some(ProtocolSummary {
        digest: run.digest.to_hex(),
        supply: run.supply,
        messages: run.simulation.state.log().len(),
        rejected: run
            .outcomes
            .iter()
            .filter_map(|o| o.error.clone().map(|e| (o.index, e)))
            .collect(),
        invariants: run.invariants.checks,
    });
    Ok(rep)
}

pub fn run_ruin(spec: &ScenarioSpec) -> Result<ScenarioReport, ScenarioError> {
    let r = spec.ruin.expect("validated");
    let est = gamblers_ruin_sim(&RuinParams {
        ico_flips: r.ico_flips,
        extension_flips: r.extension_flips,
        reorder_budget: spec.adversary.reorder_budget,
        y_bar: r.y_bar,
        k: spec.k,
        trials: r.trials,
        seed: spec.seed,
    })?;
    let mut rep = ScenarioReport::empty(spec);
    rep.success.insert("attack_succeeds".into(), est.failures > 0);
    rep.ruin = Some(est);
    Ok(rep)
}

/// Runs many scenarios in parallel; reports come back sorted by name.
pub fn run_batch(specs: &[ScenarioSpec]) -> Vec<(String, Result<ScenarioReport, ScenarioError>)> {
    use rayon::prelude::*;
    let mut out: Vec<_> = specs.par_iter().map(|s| (s.name.clone(), run(s))).collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// The four-agent network with one faulty sybil participant.
pub const FIG31_JSON: &str = include_str!("../scenarios/fig31.json");
/// 156 insiders holding half of a 312,000-unit closed ledger.
pub const TEZOS156_JSON: &str = include_str!("../scenarios/tezos156.json");

/// Bundled scenarios by name: `fig31`, `tezos156`, and the protocol runs
/// `krnc_honest` and `krnc_dishonest` (verifier doubling its reports).
pub fn bundled(name: &str) -> Option<ScenarioSpec> {
    let protocol = |inflation: f64| ScenarioSpec {
        name: name.to_string(),
        kind: ScenarioKind::Protocol,
        frame: FrameType::Dynamic,
        k: 0.5,
        seed: 7,
        population: empty_population(),
        groups: Vec::new(),
        adversary: AdversaryParams::default(),
        resource: default_resource(),
        vote_quantum: 1.0,
        frame_params: None,
        ruin: None,
        protocol: Some(crate::krnc_protocol::script::demo_script(7, inflation)),
    };
    match name {
        "fig31" => ScenarioSpec::from_json(FIG31_JSON).ok(),
        "tezos156" => ScenarioSpec::from_json(TEZOS156_JSON).ok(),
        "krnc_honest" => Some(protocol(1.0)),
        "krnc_dishonest" => Some(protocol(2.0)),
        _ => None,
    }
}

pub const BUNDLED: [&str; 4] = ["fig31", "krnc_dishonest", "krnc_honest", "tezos156"];
