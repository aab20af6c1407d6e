//! Agents, corruption indicators, trust sets, control structures and the
//! flat-world replica expansion.

use crate::Share;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// Reserved identifier for the meta-agent that stands for the whole network.
pub const META_AGENT: &str = "\u{1d4a9}";

#[derive(Debug, Error, PartialEq)]
pub enum PopulationError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("threshold {0} is outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("agent {agent} has negative endowment {value}")]
    NegativeEndowment { agent: AgentId, value: f64 },
    #[error("quantum must be positive and finite, got {0}")]
    InvalidQuantum(f64),
    #[error("identity {0} is not in the identity map")]
    UnknownIdentity(IdentityId),
    #[error("agent {0} is not part of the population")]
    UnknownAgent(AgentId),
    #[error("duplicate agent id {0}")]
    DuplicateAgent(AgentId),
    #[error("control sets must be non-empty")]
    EmptyControlSet,
    #[error("the meta-agent id is reserved")]
    ReservedId,
    #[error("fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(s: impl Into<String>) -> Self {
        AgentId(s.into())
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityId(pub String);

impl IdentityId {
    pub fn new(s: impl Into<String>) -> Self {
        IdentityId(s.into())
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionStatus {
    Correct,
    Faulty,
}

impl CorruptionStatus {
    /// The indicator value: 0 for correct, 1 for faulty.
    pub fn indicator(self) -> u8 {
        match self {
            CorruptionStatus::Correct => 0,
            CorruptionStatus::Faulty => 1,
        }
    }

    pub fn is_faulty(self) -> bool {
        self == CorruptionStatus::Faulty
    }
}

/// Anything that carries a corruption status.
pub trait Statused {
    fn status(&self) -> CorruptionStatus;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub id: AgentId,
    pub status: CorruptionStatus,
}

impl Agent {
    pub fn new(id: impl Into<String>, status: CorruptionStatus) -> Self {
        Agent { id: AgentId::new(id), status }
    }
    pub fn correct(id: impl Into<String>) -> Self {
        Self::new(id, CorruptionStatus::Correct)
    }
    pub fn faulty(id: impl Into<String>) -> Self {
        Self::new(id, CorruptionStatus::Faulty)
    }
}

impl Statused for Agent {
    fn status(&self) -> CorruptionStatus {
        self.status
    }
}

impl Statused for CorruptionStatus {
    fn status(&self) -> CorruptionStatus {
        *self
    }
}

/// Faulty count over total count.
pub fn corruption_share<T: Statused>(items: &[T]) -> Share {
    let faulty = items.iter().filter(|a| a.status().is_faulty()).count() as u64;
    Share::new(faulty, items.len() as u64)
}

pub fn mean_corruption<T: Statused>(items: &[T]) -> Result<f64, PopulationError> {
    corruption_share(items)
        .value()
        .ok_or(PopulationError::EmptyPopulation)
}

fn check_threshold(k: f64) -> Result<(), PopulationError> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(PopulationError::InvalidThreshold(k))
    }
}

/// True iff the faulty fraction is strictly below `k`.
pub fn consensus_guaranteed<T: Statused>(items: &[T], k: f64) -> Result<bool, PopulationError> {
    check_threshold(k)?;
    Ok(mean_corruption(items)? < k)
}

/// The network `N` with the participating subset `N_S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    agents: Vec<Agent>,
    participants: BTreeSet<AgentId>,
}

impl Population {
    /// Every agent participates.
    pub fn new(agents: Vec<Agent>) -> Result<Self, PopulationError> {
        let participants = agents.iter().map(|a| a.id.clone()).collect();
        Self::with_participants(agents, participants)
    }

    pub fn with_participants(
        agents: Vec<Agent>,
        participants: BTreeSet<AgentId>,
    ) -> Result<Self, PopulationError> {
        let mut seen = BTreeSet::new();
        for a in &agents {
            if a.id.0 == META_AGENT {
                return Err(PopulationError::ReservedId);
            }
            if !seen.insert(a.id.clone()) {
                return Err(PopulationError::DuplicateAgent(a.id.clone()));
            }
        }
        if let Some(p) = participants.iter().find(|p| !seen.contains(*p)) {
            return Err(PopulationError::UnknownAgent(p.clone()));
        }
        Ok(Population {
            agents,
            participants,
        })
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn get(&self, id: &AgentId) -> Option<&Agent> {
        self.agents.iter().find(|a| &a.id == id)
    }

    pub fn is_participant(&self, id: &AgentId) -> bool {
        self.participants.contains(id)
    }

    pub fn participant_ids(&self) -> &BTreeSet<AgentId> {
        &self.participants
    }

    pub fn participants(&self) -> Vec<Agent> {
        self.agents
            .iter()
            .filter(|a| self.participants.contains(&a.id))
            .cloned()
            .collect()
    }

    pub fn correct(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| !a.status.is_faulty())
    }

    pub fn faulty(&self) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(|a| a.status.is_faulty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Trustee {
    Agent(AgentId),
    /// The network as a whole.
    Meta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustSet {
    pub owner: AgentId,
    pub trusted: BTreeSet<Trustee>,
}

impl TrustSet {
    pub fn new(owner: AgentId, trusted: impl IntoIterator<Item = AgentId>) -> Self {
        TrustSet {
            owner,
            trusted: trusted.into_iter().map(Trustee::Agent).collect(),
        }
    }

    pub fn trusts(&self, id: &AgentId) -> bool {
        self.trusted.contains(&Trustee::Agent(id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlStructure {
    sets: Vec<BTreeSet<AgentId>>,
    pub slot: Option<u64>,
}

impl ControlStructure {
    pub fn new(sets: Vec<BTreeSet<AgentId>>) -> Result<Self, PopulationError> {
        if sets.iter().any(|s| s.is_empty()) {
            return Err(PopulationError::EmptyControlSet);
        }
        Ok(ControlStructure { sets, slot: None })
    }

    pub fn at_slot(mut self, slot: u64) -> Self {
        self.slot = Some(slot);
        self
    }

    pub fn sets(&self) -> &[BTreeSet<AgentId>] {
        &self.sets
    }

    /// All subsets of `participants` holding at least a `k` fraction of them.
    /// Exponential in the participant count; meant for small populations.
    pub fn threshold(participants: &BTreeSet<AgentId>, k: f64) -> Result<Self, PopulationError> {
        check_threshold(k)?;
        let ids: Vec<&AgentId> = participants.iter().collect();
        let n = ids.len();
        assert!(n < 24, "threshold control structure is exponential in size");
        let mut sets = Vec::new();
        for mask in 1u32..(1u32 << n) {
            let size = mask.count_ones() as f64;
            if size / n as f64 >= k {
                sets.push(
                    (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| ids[i].clone())
                        .collect(),
                );
            }
        }
        Ok(ControlStructure { sets, slot: None })
    }
}

/// Agents whose trust set meets every control set. Agents without a trust
/// set trust nobody.
pub fn max_user_base(
    population: &Population,
    trust_sets: &BTreeMap<AgentId, TrustSet>,
    control: &ControlStructure,
) -> BTreeSet<AgentId> {
    population
        .agents()
        .iter()
        .filter(|a| {
            control.sets().iter().all(|f| {
                trust_sets
                    .get(&a.id)
                    .is_some_and(|t| f.iter().any(|m| t.trusts(m)))
            })
        })
        .map(|a| a.id.clone())
        .collect()
}

/// Membership test: the untrusted fraction of participants is below `k`.
pub fn max_user_base_quorum(
    trust: &TrustSet,
    participants: &BTreeSet<AgentId>,
    k: f64,
) -> Result<bool, PopulationError> {
    check_threshold(k)?;
    if participants.is_empty() {
        return Err(PopulationError::EmptyPopulation);
    }
    let trusted = participants.iter().filter(|p| trust.trusts(p)).count();
    let untrusted = participants.len() - trusted;
    Ok((untrusted as f64) / (participants.len() as f64) < k)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Replica {
    pub owner: AgentId,
    pub status: CorruptionStatus,
}

impl Statused for Replica {
    fn status(&self) -> CorruptionStatus {
        self.status
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicaPopulation {
    pub replicas: Vec<Replica>,
}

impl ReplicaPopulation {
    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn count_for(&self, owner: &AgentId) -> usize {
        self.replicas.iter().filter(|r| &r.owner == owner).count()
    }

    pub fn share(&self) -> Share {
        corruption_share(&self.replicas)
    }
}

/// Number of whole replicas an endowment buys at the given quantum.
pub fn quantize(endowment: f64, quantum: f64) -> Result<u64, PopulationError> {
    if !(quantum > 0.0 && quantum.is_finite()) {
        return Err(PopulationError::InvalidQuantum(quantum));
    }
    Ok((endowment / quantum).floor() as u64)
}

/// One replica per unit of quantized endowment, each inheriting the owner's status.
pub fn flat_world(
    endowments: &[(Agent, f64)],
    quantum: f64,
) -> Result<ReplicaPopulation, PopulationError> {
    let mut replicas = Vec::new();
    for (agent, e) in endowments {
        if !(*e >= 0.0) || !e.is_finite() {
            return Err(PopulationError::NegativeEndowment {
                agent: agent.id.clone(),
                value: *e,
            });
        }
        let units = quantize(*e, quantum)?;
        replicas.extend((0..units).map(|_| Replica {
            owner: agent.id.clone(),
            status: agent.status,
        }));
    }
    Ok(ReplicaPopulation { replicas })
}

/// Exact staking-resource share held by faulty agents, before quantization.
pub fn weighted_share(endowments: &[(Agent, f64)]) -> Result<f64, PopulationError> {
    let total: f64 = endowments.iter().map(|(_, e)| e).sum();
    if endowments.is_empty() || total <= 0.0 {
        return Err(PopulationError::EmptyPopulation);
    }
    let faulty: f64 = endowments
        .iter()
        .filter(|(a, _)| a.status.is_faulty())
        .map(|(_, e)| e)
        .sum();
    Ok(faulty / total)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityMap {
    pub identities: BTreeMap<IdentityId, AgentId>,
}

impl IdentityMap {
    /// One identity per agent, named after it.
    pub fn bijective(agents: &[Agent]) -> Self {
        IdentityMap {
            identities: agents
                .iter()
                .map(|a| (IdentityId(a.id.0.clone()), a.id.clone()))
                .collect(),
        }
    }

    pub fn insert(&mut self, identity: IdentityId, owner: AgentId) {
        self.identities.insert(identity, owner);
    }

    pub fn owner(&self, identity: &IdentityId) -> Option<&AgentId> {
        self.identities.get(identity)
    }

    pub fn identities_of<'a>(&'a self, owner: &'a AgentId) -> impl Iterator<Item = &'a IdentityId> {
        self.identities
            .iter()
            .filter(move |(_, o)| *o == owner)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusedIdentity {
    pub identity: IdentityId,
    pub owner: AgentId,
    pub status: CorruptionStatus,
}

impl Statused for StatusedIdentity {
    fn status(&self) -> CorruptionStatus {
        self.status
    }
}

/// Attach each protocol identity to its owner's status.
pub fn sybil_expand(
    map: &IdentityMap,
    population: &Population,
    identities: &[IdentityId],
) -> Result<Vec<StatusedIdentity>, PopulationError> {
    identities
        .iter()
        .map(|i| {
            let owner = map
                .owner(i)
                .ok_or_else(|| PopulationError::UnknownIdentity(i.clone()))?;
            let agent = population
                .get(owner)
                .ok_or_else(|| PopulationError::UnknownAgent(owner.clone()))?;
            Ok(StatusedIdentity {
                identity: i.clone(),
                owner: owner.clone(),
                status: agent.status,
            })
        })
        .collect()
}

pub mod fixture {
    //! JSON population fixtures.

    use super::*;

    fn default_true() -> bool {
        true
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct AgentRecord {
        pub id: AgentId,
        pub status: CorruptionStatus,
        #[serde(default)]
        pub endowments: BTreeMap<String, f64>,
        #[serde(default)]
        pub trust: Vec<AgentId>,
        #[serde(default)]
        pub trusts_network: bool,
        #[serde(default = "default_true")]
        pub participant: bool,
        /// Identities owned by the agent; defaults to one named after it.
        #[serde(default)]
        pub identities: Vec<IdentityId>,
        /// Participation propensity, if the scenario samples participants.
        #[serde(default)]
        pub propensity: Option<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct PopulationFixture {
        pub agents: Vec<AgentRecord>,
    }

    impl PopulationFixture {
        pub fn from_json(text: &str) -> Result<Self, PopulationError> {
            serde_json::from_str(text).map_err(|e| PopulationError::Fixture(e.to_string()))
        }

        pub fn population(&self) -> Result<Population, PopulationError> {
            let agents = self
                .agents
                .iter()
                .map(|r| Agent {
                    id: r.id.clone(),
                    status: r.status,
                })
                .collect();
            let participants = self
                .agents
                .iter()
                .filter(|r| r.participant)
                .map(|r| r.id.clone())
                .collect();
            Population::with_participants(agents, participants)
        }

        pub fn trust_sets(&self) -> BTreeMap<AgentId, TrustSet> {
            self.agents
                .iter()
                .map(|r| {
                    let mut t = TrustSet::new(r.id.clone(), r.trust.iter().cloned());
                    if r.trusts_network {
                        t.trusted.insert(Trustee::Meta);
                    }
                    (r.id.clone(), t)
                })
                .collect()
        }

        pub fn identity_map(&self) -> IdentityMap {
            let mut map = IdentityMap::default();
            for r in &self.agents {
                if r.identities.is_empty() {
                    map.insert(IdentityId(r.id.0.clone()), r.id.clone());
                }
                for i in &r.identities {
                    map.insert(i.clone(), r.id.clone());
                }
            }
            map
        }

        /// Endowments of one resource, with missing entries as zero.
        pub fn endowments(&self, resource: &str, participants_only: bool) -> Vec<(Agent, f64)> {
            self.agents
                .iter()
                .filter(|r| !participants_only || r.participant)
                .map(|r| {
                    (
                        Agent {
                            id: r.id.clone(),
                            status: r.status,
                        },
                        r.endowments.get(resource).copied().unwrap_or(0.0),
                    )
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(xs: &[&str]) -> BTreeSet<AgentId> {
        xs.iter().map(|x| AgentId::new(*x)).collect()
    }

    #[test]
    fn mean_corruption_examples() {
        let all_correct: Vec<Agent> = (0..4).map(|i| Agent::correct(format!("c{i}"))).collect();
        assert_eq!(mean_corruption(&all_correct).unwrap(), 0.0);
        let mut one = all_correct.clone();
        one[0].status = CorruptionStatus::Faulty;
        assert_eq!(mean_corruption(&one).unwrap(), 0.25);
        let mut two = one.clone();
        two[1].status = CorruptionStatus::Faulty;
        assert_eq!(mean_corruption(&two).unwrap(), 0.5);
        assert_eq!(
            mean_corruption::<Agent>(&[]),
            Err(PopulationError::EmptyPopulation)
        );
    }

    #[test]
    fn consensus_examples() {
        let net = vec![
            Agent::faulty("a"),
            Agent::correct("b"),
            Agent::correct("c"),
            Agent::correct("d"),
        ];
        assert!(consensus_guaranteed(&net, 1.0 / 3.0).unwrap());
        assert!(!consensus_guaranteed(&net[..2], 1.0 / 3.0).unwrap());
        assert!(consensus_guaranteed(&net[1..], 1e-9).unwrap());
        assert_eq!(
            consensus_guaranteed(&net, 0.0),
            Err(PopulationError::InvalidThreshold(0.0))
        );
        assert_eq!(
            consensus_guaranteed(&net, 1.5),
            Err(PopulationError::InvalidThreshold(1.5))
        );
    }

    #[test]
    fn user_base_examples() {
        let pop = Population::new(vec![Agent::correct("n"), Agent::correct("a"), Agent::correct("b")]).unwrap();
        let mut trust = BTreeMap::new();
        trust.insert(AgentId::new("n"), TrustSet::new(AgentId::new("n"), [AgentId::new("a")]));

        let f = ControlStructure::new(vec![ids(&["a"])]).unwrap();
        assert!(max_user_base(&pop, &trust, &f).contains(&AgentId::new("n")));

        let f = ControlStructure::new(vec![ids(&["a"]), ids(&["b"])]).unwrap();
        assert!(!max_user_base(&pop, &trust, &f).contains(&AgentId::new("n")));

        let f = ControlStructure::new(vec![]).unwrap();
        assert_eq!(max_user_base(&pop, &trust, &f).len(), 3);

        assert_eq!(
            ControlStructure::new(vec![BTreeSet::new()]),
            Err(PopulationError::EmptyControlSet)
        );
    }

    #[test]
    fn meta_agent_never_meets_a_control_set() {
        let pop = Population::new(vec![Agent::correct("n"), Agent::correct("a")]).unwrap();
        let mut t = TrustSet::new(AgentId::new("n"), []);
        t.trusted.insert(Trustee::Meta);
        let trust = BTreeMap::from([(AgentId::new("n"), t)]);
        let f = ControlStructure::new(vec![ids(&["a"])]).unwrap();
        assert!(max_user_base(&pop, &trust, &f).is_empty());
        assert_eq!(
            Population::new(vec![Agent::correct(META_AGENT)]),
            Err(PopulationError::ReservedId)
        );
    }

    #[test]
    fn quorum_examples() {
        let ns: BTreeSet<AgentId> = (0..10).map(|i| AgentId::new(format!("p{i}"))).collect();
        let six = TrustSet::new(AgentId::new("n"), ns.iter().take(6).cloned());
        assert!(max_user_base_quorum(&six, &ns, 0.5).unwrap());
        let all = TrustSet::new(AgentId::new("n"), ns.iter().cloned());
        assert!(max_user_base_quorum(&all, &ns, 1e-6).unwrap());
        let none = TrustSet::new(AgentId::new("n"), []);
        assert!(!max_user_base_quorum(&none, &ns, 0.5).unwrap());
        assert_eq!(
            max_user_base_quorum(&none, &BTreeSet::new(), 0.5),
            Err(PopulationError::EmptyPopulation)
        );
    }

    /// Every trust pattern over up to six participants, against the
    /// threshold control structure.
    #[test]
    fn quorum_form_matches_set_form_exhaustively() {
        for n in 1..=6usize {
            let names: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
            let ns: BTreeSet<AgentId> = names.iter().map(AgentId::new).collect();
            let agents: Vec<Agent> = names.iter().map(Agent::correct).collect();
            let observer = Agent::correct("obs");
            let mut all = agents.clone();
            all.push(observer.clone());
            let pop = Population::with_participants(all, ns.clone()).unwrap();
            for &k in &[0.2, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0] {
                let f = ControlStructure::threshold(&ns, k).unwrap();
                for mask in 0u32..(1 << n) {
                    let trusted = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| AgentId::new(&names[i]));
                    let t = TrustSet::new(observer.id.clone(), trusted);
                    let trust = BTreeMap::from([(observer.id.clone(), t.clone())]);
                    let set_form = max_user_base(&pop, &trust, &f).contains(&observer.id);
                    let quorum_form = max_user_base_quorum(&t, &ns, k).unwrap();
                    assert_eq!(set_form, quorum_form, "n={n} k={k} mask={mask:b}");
                }
            }
        }
    }

    #[test]
    fn flat_world_examples() {
        let r = flat_world(&[(Agent::faulty("x"), 3.0)], 1.0).unwrap();
        assert_eq!(r.len(), 3);
        assert!(r.replicas.iter().all(|r| r.status.is_faulty()));
        assert_eq!(
            flat_world(&[(Agent::faulty("x"), -1.0)], 1.0),
            Err(PopulationError::NegativeEndowment {
                agent: AgentId::new("x"),
                value: -1.0
            })
        );
        assert_eq!(
            flat_world(&[(Agent::faulty("x"), 1.0)], 0.0),
            Err(PopulationError::InvalidQuantum(0.0))
        );
    }

    #[test]
    fn sybil_examples() {
        let pop = Population::new(vec![Agent::faulty("a"), Agent::correct("b"), Agent::correct("c")]).unwrap();
        let mut map = IdentityMap::bijective(pop.agents());
        map.insert(IdentityId::new("a2"), AgentId::new("a"));
        let ids: Vec<IdentityId> = map.identities.keys().cloned().collect();
        let expanded = sybil_expand(&map, &pop, &ids).unwrap();
        assert_eq!(mean_corruption(&expanded).unwrap(), 0.5);

        let plain = IdentityMap::bijective(pop.agents());
        let ids: Vec<IdentityId> = plain.identities.keys().cloned().collect();
        let expanded = sybil_expand(&plain, &pop, &ids).unwrap();
        assert_eq!(
            mean_corruption(&expanded).unwrap(),
            mean_corruption(pop.agents()).unwrap()
        );
        assert_eq!(
            sybil_expand(&plain, &pop, &[IdentityId::new("zz")]),
            Err(PopulationError::UnknownIdentity(IdentityId::new("zz")))
        );
    }

    #[test]
    fn fixture_round_trip() {
        let text = r#"{"agents":[
            {"id":"a","status":"faulty","endowments":{"V":5},"identities":["a1","a2","a3"]},
            {"id":"b","status":"correct","endowments":{"V":2},"trust":["a"]},
            {"id":"c","status":"correct","participant":false}
        ]}"#;
        let fx = fixture::PopulationFixture::from_json(text).unwrap();
        let pop = fx.population().unwrap();
        assert_eq!(pop.participants().len(), 2);
        assert_eq!(fx.identity_map().identities.len(), 5);
        assert!(fx.trust_sets()[&AgentId::new("b")].trusts(&AgentId::new("a")));
        assert_eq!(fx.endowments("V", false)[2].1, 0.0);
    }
}
