use crate::report::{Report, Table};
use crate::{row, CliError, Output};
use clap::Args;
use pob_core::attack_scenarios::{self, ScenarioError, ScenarioKind, ScenarioReport, ScenarioSpec};
use pob_core::capital_market::{
    attack_cost_comparison, gamblers_ruin_sim, min_capital_threshold, min_capital_threshold_deterministic, price_adaptive_attack_cost,
    price_eras, read_price_series, MarketError, RuinParams,
};
use pob_core::krnc_protocol::check_invariants;
use pob_core::participation_stats::{
    bias_reduction_ratio, min_participants_deterministic, min_participants_probabilistic, min_participation_fraction_deterministic,
    StatsError, ThresholdInputs, DEFAULT_PROPENSITY_FLOOR,
};
use pob_core::population_model::CorruptionStatus;
use pob_core::signaling_game::{
    classify_equilibrium, ess_allocation, ess_weight, equilibrium_log_cost, joins_under_uncertainty, realized_play, staking_gap,
    sybil_gap, EssParams, GameError, GamePayoffs, SubgameProbs,
};
use serde::Serialize;
use std::path::PathBuf;

/// Accepts plain or scientific notation for whole numbers, e.g. `4e9`.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let x: f64 = s.parse().map_err(|_| format!("not a number: {s}"))?;
    if x < 0.0 || x.fract() != 0.0 || x > u64::MAX as f64 {
        return Err(format!("not a whole count: {s}"));
    }
    Ok(x as u64)
}

fn stats_err(e: StatsError) -> CliError {
    match e {
        StatsError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
        e => CliError::Usage(e.to_string()),
    }
}

fn market_err(e: MarketError) -> CliError {
    match e {
        MarketError::InsufficientVolume { .. } => CliError::InsufficientVolume(e.to_string()),
        MarketError::InvalidRange(ref m) if m.starts_with("infeasible") => CliError::Infeasible(m.clone()),
        e => CliError::Usage(e.to_string()),
    }
}

fn game_err(e: GameError) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ThresholdArgs {
    /// Upper bound on mean corruption of the population.
    #[arg(long)]
    pub ymax: f64,
    #[arg(long)]
    pub k: f64,
    /// Population size.
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Participation bias for the probabilistic bound.
    #[arg(long)]
    pub bias: Option<f64>,
    /// Propensity floor for the probabilistic bound.
    #[arg(long, default_value_t = DEFAULT_PROPENSITY_FLOOR)]
    pub floor: f64,
}

pub fn thresholds(a: &ThresholdArgs) -> Result<Report, CliError> {
    let inputs = ThresholdInputs::new(a.ymax, a.n, a.k).map_err(stats_err)?;
    let phi = min_participation_fraction_deterministic(a.ymax, a.k).map_err(stats_err)?;
    let count = min_participants_deterministic(&inputs).map_err(stats_err)?;
    let mut r = Report::new("thresholds", a);
    let mut t = Table::new("deterministic", &["ymax", "k", "n", "fraction", "strict", "min_participants"]);
    t.row(row![a.ymax, a.k, a.n, phi.value, phi.strict, count]);
    r.tables.push(t);
    if let Some(b) = a.bias {
        let m = min_participants_probabilistic(&inputs, b, a.floor).map_err(stats_err)?;
        let mut t = Table::new("probabilistic", &["ymax", "k", "n", "bias", "floor", "min_participants"]);
        t.row(row![a.ymax, a.k, a.n, b, a.floor, m]);
        r.tables.push(t);
    }
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BiasArgs {
    /// Mean propensity before.
    #[arg(long)]
    pub from: f64,
    /// Mean propensity after.
    #[arg(long)]
    pub to: f64,
}

pub fn bias(a: &BiasArgs) -> Result<Report, CliError> {
    let red = bias_reduction_ratio(a.from, a.to).map_err(stats_err)?;
    let mut r = Report::new("bias", a);
    let mut t = Table::new("reduction", &["rho_from", "rho_to", "reduction", "reduction_percent"]);
    t.row(row![a.from, a.to, red, 100.0 * red]);
    r.tables.push(t);
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CapitalArgs {
    /// Total liquid wealth.
    #[arg(long)]
    pub total: f64,
    /// Share of wealth the staked sample must reach.
    #[arg(long, default_value_t = DEFAULT_PROPENSITY_FLOOR)]
    pub floor: f64,
    #[arg(long, default_value_t = 0.5)]
    pub k: f64,
    /// Corruption bound for the deterministic rule.
    #[arg(long)]
    pub ymax: Option<f64>,
    /// Capital raised by an offering, compared with the threshold.
    #[arg(long)]
    pub ico: Option<f64>,
}

pub fn capital(a: &CapitalArgs) -> Result<Report, CliError> {
    let min = min_capital_threshold(a.total, a.floor).map_err(market_err)?;
    let mut r = Report::new("capital", a);
    let mut t = Table::new("thresholds", &["rule", "total", "parameter", "min_capital", "strict"]);
    t.row(row!["floor", a.total, a.floor, min, false]);
    if let Some(y) = a.ymax {
        let b = min_capital_threshold_deterministic(a.total, y, a.k).map_err(|e| match e {
            MarketError::InvalidRange(m) if m.contains("infeasible") => CliError::Infeasible(m),
            e => CliError::Usage(e.to_string()),
        })?;
        t.row(row!["deterministic", a.total, y, b.value, b.strict]);
    }
    r.tables.push(t);
    if let Some(ico) = a.ico {
        let mut t = Table::new("offering", &["raised", "min_capital", "fraction"]);
        t.row(row![ico, min, ico / min]);
        r.tables.push(t);
    }
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GameArgs {
    /// Reward in the standard subgames.
    #[arg(long)]
    pub r: f64,
    /// Correct agent's reward under attack.
    #[arg(long)]
    pub rv: f64,
    /// Faulty agent's reward under attack.
    #[arg(long)]
    pub ra: f64,
    /// Participation cost.
    #[arg(long)]
    pub c: f64,
    /// Faulty agent's cost under attack.
    #[arg(long)]
    pub ca: f64,
    /// Subgame probabilities left, center, right; all three or none.
    #[arg(long, value_delimiter = ',')]
    pub probs: Option<Vec<f64>>,
}

pub fn game(a: &GameArgs) -> Result<Report, CliError> {
    let p = GamePayoffs::new(a.r, a.rv, a.ra, a.c, a.ca).map_err(game_err)?;
    let class = classify_equilibrium(&p);
    let play = realized_play(&p);
    let mut r = Report::new("game", a);
    let mut t = Table::new("equilibrium", &["class", "adversary", "correct_joins", "faulty_joins"]);
    t.row(row![
        format!("{class:?}"),
        format!("{:?}", play.adversary),
        play.correct_joins,
        play.faulty_joins
    ]);
    r.tables.push(t);
    if let Some(v) = &a.probs {
        if v.len() != 3 {
            return Err(CliError::Usage(format!("--probs needs 3 values, got {}", v.len())));
        }
        let probs = SubgameProbs::new(v[0], v[1], v[2]).map_err(game_err)?;
        let mut t = Table::new("uncertain", &["status", "joins"]);
        for s in [CorruptionStatus::Correct, CorruptionStatus::Faulty] {
            t.row(row![format!("{s:?}").to_lowercase(), joins_under_uncertainty(s, &probs, &p)]);
        }
        r.tables.push(t);
    }
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EssArgs {
    /// Marginal staking-resource cost of signaled wealth.
    #[arg(long)]
    pub beta: f64,
    /// Net payoff of being counted.
    #[arg(long)]
    pub np: f64,
    /// Price of the staking resource; the scale is its reciprocal.
    #[arg(long, default_value_t = 1.0)]
    pub price: f64,
    #[arg(long, default_value_t = 0.0)]
    pub v_min: f64,
    #[arg(long, default_value_t = 0.0)]
    pub w_min: f64,
    #[arg(long)]
    pub w_max: f64,
    /// Grid points from w_min to w_max.
    #[arg(long, default_value_t = 100)]
    pub points: usize,
}

pub fn ess(a: &EssArgs) -> Result<Report, CliError> {
    if a.points < 2 {
        return Err(CliError::Usage("need at least 2 grid points".into()));
    }
    if a.price.is_nan() || a.price <= 0.0 {
        return Err(CliError::Usage("price must be positive".into()));
    }
    let p = EssParams {
        beta: a.beta,
        v_min: a.v_min,
        w_min: a.w_min,
        net_payoff: a.np,
        price_scale: 1.0,
        w_max: a.w_max,
    }
    .with_price(a.price);
    p.validate().map_err(game_err)?;
    let mut r = Report::new("ess", a);
    let mut s = Table::new("scales", &["length", "discount", "staking_half_life", "sybil_half_life"]);
    let g0 = staking_gap(a.w_min, &p).map_err(game_err)?;
    let s0 = sybil_gap(a.v_min, &p).map_err(game_err)?;
    s.row(row![p.length(), p.discount(), g0.half_life, s0.half_life]);
    r.tables.push(s);
    let mut t = Table::new("grid", &["w", "allocation", "roundtrip_w", "staking_gap", "sybil_gap", "log_cost"]);
    for i in 0..a.points {
        let w = a.w_min + (a.w_max - a.w_min) * i as f64 / (a.points - 1) as f64;
        let x = ess_allocation(w, &p).map_err(game_err)?;
        t.row(row![
            w,
            x,
            ess_weight(x, &p).map_err(game_err)?,
            staking_gap(w, &p).map_err(game_err)?.value,
            sybil_gap(x, &p).map_err(game_err)?.value,
            equilibrium_log_cost(w, &p).map_err(game_err)?
        ]);
    }
    r.tables.push(t);
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RuinArgs {
    /// Mean corruption of each flip.
    #[arg(long)]
    pub ybar: f64,
    #[arg(long, default_value_t = 0.5)]
    pub k: f64,
    /// Flips the adversary can force.
    #[arg(long, default_value_t = 0)]
    pub budget: u64,
    #[arg(long, value_parser = parse_count)]
    pub ico_flips: u64,
    /// Extension lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0", value_parser = parse_count)]
    pub extension: Vec<u64>,
    #[arg(long, value_parser = parse_count)]
    pub trials: u64,
    #[arg(long)]
    pub seed: u64,
}

pub fn ruin(a: &RuinArgs) -> Result<Report, CliError> {
    let mut r = Report::new("ruin", a);
    let mut t = Table::new("failure", &["extension", "trials", "failures", "probability", "std_error"]);
    for &ext in &a.extension {
        let est = gamblers_ruin_sim(&RuinParams {
            ico_flips: a.ico_flips,
            extension_flips: ext,
            reorder_budget: a.budget,
            y_bar: a.ybar,
            k: a.k,
            trials: a.trials,
            seed: a.seed,
        })
        .map_err(market_err)?;
        t.row(row![ext, est.trials, est.failures, est.probability, est.std_error]);
    }
    r.tables.push(t);
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EstimateArgs {
    /// Units the adversary must acquire.
    #[arg(long)]
    pub threshold: f64,
    /// CSV with columns slot,price,volume.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long, default_value_t = 80e12)]
    pub fiat_total: f64,
    /// Physical cash excluded from the electronic base.
    #[arg(long, default_value_t = 5e12)]
    pub physical: f64,
    #[arg(long, default_value_t = 0.5)]
    pub k: f64,
    /// Reference attack costs, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1e9,2e9,4e9")]
    pub reference: Vec<f64>,
}

pub fn estimate_cost(a: &EstimateArgs) -> Result<Report, CliError> {
    let file = std::fs::File::open(&a.series).map_err(|e| CliError::Usage(format!("{}: {e}", a.series.display())))?;
    let points = read_price_series(file).map_err(|e| CliError::Usage(e.to_string()))?;
    let eras = price_eras(&points).map_err(|e| CliError::Usage(e.to_string()))?;
    let cost = price_adaptive_attack_cost(&eras, a.threshold).map_err(market_err)?;
    let cmp = attack_cost_comparison(a.fiat_total, a.physical, a.k, &a.reference).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut r = Report::new("estimate_cost", a);
    let mut t = Table::new("cost", &["threshold", "cost", "d_k", "pre_quantity", "post_quantity"]);
    t.row(row![a.threshold, cost.cost, cost.crossing_era, cost.pre_quantity, cost.post_quantity]);
    r.tables.push(t);
    let mut t = Table::new("eras", &["era", "price", "volume"]);
    for e in &eras {
        t.row(row![e.index, e.price, e.volume]);
    }
    r.tables.push(t);
    let mut t = Table::new("super_k", &["base", "fiat_base", "k", "cost"]);
    t.row(row!["full", a.fiat_total, a.k, cmp.super_k_full]);
    t.row(row!["electronic", a.fiat_total - a.physical, a.k, cmp.super_k_electronic]);
    r.tables.push(t);
    let mut t = Table::new("ratios", &["reference_cost", "vs_full_base", "vs_super_k"]);
    for row in &cmp.ratios {
        t.row(row![row.reference_cost, row.vs_full_base, row.vs_super_k]);
    }
    r.tables.push(t);
    Ok(r)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON file, or a bundled name (fig31, tezos156, krnc_honest, krnc_dishonest).
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub seed: u64,
}

fn load_scenario(name: &str) -> Result<ScenarioSpec, CliError> {
    if let Some(s) = attack_scenarios::bundled(name) {
        return Ok(s);
    }
    let text = std::fs::read_to_string(name).map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
    ScenarioSpec::from_json(&text).map_err(|e| CliError::Usage(format!("{name}: {e}")))
}

fn scenario_err(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Market(m) => market_err(m),
        e => CliError::Usage(e.to_string()),
    }
}

pub fn simulate(a: &SimulateArgs, out: &Output) -> Result<(), CliError> {
    let mut spec = load_scenario(&a.scenario)?;
    spec.seed = a.seed;
    if let Some(p) = spec.protocol.as_mut() {
        p.setup.seed = a.seed;
        p.setup.terms.nonce = a.seed;
    }
    log::info!("running scenario {} ({:?})", spec.name, spec.kind);
    let rep = attack_scenarios::run(&spec).map_err(scenario_err)?;
    let config = serde_json::json!({ "args": a, "scenario": spec });
    let mut r = scenario_report(&rep, config);
    let mut violated = Vec::new();
    if spec.kind == ScenarioKind::Protocol {
        let run = pob_core::krnc_protocol::script::run_script(spec.protocol.as_ref().expect("validated")).map_err(|e| CliError::Usage(e.to_string()))?;
        let st = &run.simulation.state;
        let mut log = Vec::new();
        st.write_log(&mut log)?;
        let mut settle = Vec::new();
        st.settlement().write_log(&mut settle)?;
        let mut state = serde_json::to_vec_pretty(st).map_err(|e| CliError::Usage(e.to_string()))?;
        state.push(b'\n');
        r.attachments.push(("messages.jsonl".into(), log));
        r.attachments.push(("settlement.jsonl".into(), settle));
        r.attachments.push(("state.json".into(), state));
        violated = check_invariants(st).failures().map(|c| format!("{} ({})", c.name, c.detail)).collect();
    }
    if !rep.fractions_in_range() {
        violated.push("fractions_in_range".into());
    }
    r.emit(out.format, out.out.as_deref())?;
    if violated.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invariant(violated.join(", ")))
    }
}

fn scenario_report(rep: &ScenarioReport, config: serde_json::Value) -> Report {
    let mut r = Report::new("simulate", config);
    r.detail = Some(serde_json::to_value(rep).expect("report serializes"));
    let mut t = Table::new("summary", &["name", "kind", "frame", "k", "seed"]);
    t.row(row![
        rep.name.clone(),
        format!("{:?}", rep.kind),
        format!("{:?}", rep.frame),
        rep.k,
        rep.seed
    ]);
    r.tables.push(t);
    if !rep.levels.is_empty() {
        let mut t = Table::new(
            "levels",
            &["level", "unit", "network", "protocol", "network_fraction", "protocol_fraction"],
        );
        for l in &rep.levels {
            t.row(row![
                l.level as u64,
                l.unit.clone(),
                l.network.to_string(),
                l.protocol.to_string(),
                l.network_fraction,
                l.protocol_fraction
            ]);
        }
        r.tables.push(t);
    }
    if !rep.weight_shares.is_empty() || !rep.exact_weights.is_empty() {
        let mut t = Table::new("weights", &["name", "fraction", "exact"]);
        for (k, v) in &rep.weight_shares {
            t.row(row![k.clone(), *v, rep.exact_weights.get(k).map(|s| s.to_string())]);
        }
        r.tables.push(t);
    }
    let mut t = Table::new("outcomes", &["flag", "value"]);
    for (k, v) in &rep.success {
        t.row(row![k.clone(), *v]);
    }
    r.tables.push(t);
    if !rep.trace.is_empty() {
        let mut t = Table::new(
            "trace",
            &["slot", "addresses", "max_address_share", "address_nakamoto", "agent_nakamoto", "control", "control_fraction"],
        );
        for p in &rep.trace {
            t.row(row![
                p.slot,
                p.addresses,
                p.max_address_share,
                p.address_nakamoto,
                p.agent_nakamoto,
                p.control.to_string(),
                p.control_fraction
            ]);
        }
        r.tables.push(t);
    }
    if !rep.frames.is_empty() {
        let mut t = Table::new("frames", &["slot", "closed_fraction", "dynamic_fraction"]);
        for p in &rep.frames {
            t.row(row![p.slot, p.closed_fraction, p.dynamic_fraction]);
        }
        r.tables.push(t);
        let mut t = Table::new("crossing", &["simulated", "analytic"]);
        t.row(row![rep.crossing_slot, rep.analytic_crossing_slot]);
        r.tables.push(t);
    }
    if let Some(e) = &rep.ruin {
        let mut t = Table::new("ruin", &["trials", "failures", "probability", "std_error"]);
        t.row(row![e.trials, e.failures, e.probability, e.std_error]);
        r.tables.push(t);
    }
    if let Some(p) = &rep.protocol {
        let mut t = Table::new("protocol", &["digest", "supply", "messages", "rejected"]);
        t.row(row![p.digest.clone(), p.supply, p.messages, p.rejected.len()]);
        r.tables.push(t);
        let mut t = Table::new("invariants", &["name", "passed", "detail"]);
        for c in &p.invariants {
            t.row(row![c.name, c.passed, c.detail.clone()]);
        }
        r.tables.push(t);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accept_scientific_notation() {
        assert_eq!(parse_count("4e9"), Ok(4_000_000_000));
        assert_eq!(parse_count("10000"), Ok(10_000));
        assert!(parse_count("1.5").is_err());
        assert!(parse_count("-1").is_err());
    }
}
