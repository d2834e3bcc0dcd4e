//! Agent-based geo-social misinformation spread.
//!
//! Agents hold a workplace plus favourite restaurants and recreation sites,
//! and a symmetric friend list. A day has three slots: work, lunch
//! (restaurant or back at work) and evening (recreation or home). Spread is
//! SI: infectious agents transmit to co-located susceptible agents with
//! `p_coloc` per slot and to susceptible friends with `p_social` per day.
//! Agents infected during a day become infectious from the next day on.
//!
//! The complete co-location network joins agents that share a place. The
//! observed networks are uniform node samples of the complete co-location
//! and social networks, linked by identity bridges.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{default_test_samples, Dataset, DatasetMeta};
use crate::diffusion::DiffusionSample;
use crate::error::{Error, Result};
use crate::graph::{BridgeLinks, CrossNetwork, InfectionVector, Network, NodeFeatures, SeedVector};
use crate::rng::{self, stage, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_agents: usize,
    pub n_workplaces: usize,
    pub n_restaurants: usize,
    pub n_recreation: usize,
    pub household_size: f64,
    pub restaurants_per_agent: usize,
    pub recreation_per_agent: usize,
    /// Chance of lunch at a favourite restaurant instead of the workplace.
    pub meal_prob: f64,
    /// Chance of an evening at a favourite recreation site.
    pub recreation_prob: f64,
    /// Mean degree of the complete social network.
    pub social_mean_degree: f64,
    /// Chance that a pair sharing a place becomes friends before random
    /// long-range ties fill the remaining degree.
    pub place_friend_prob: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_agents: 15_000,
            n_workplaces: 2_000,
            n_restaurants: 15_000,
            n_recreation: 30_000,
            household_size: 2.5,
            restaurants_per_agent: 1,
            recreation_per_agent: 1,
            meal_prob: 0.3,
            recreation_prob: 0.3,
            social_mean_degree: 16.75,
            place_friend_prob: 0.3,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::Config("n_agents must be at least 1".into()));
        }
        if self.n_workplaces == 0 {
            return Err(Error::Config("n_workplaces must be at least 1 (every agent needs a workplace)".into()));
        }
        if (self.restaurants_per_agent > 0 && self.n_restaurants == 0) || (self.recreation_per_agent > 0 && self.n_recreation == 0) {
            return Err(Error::Config("favourite places requested but no places of that type exist".into()));
        }
        if self.restaurants_per_agent > self.n_restaurants.max(1) || self.recreation_per_agent > self.n_recreation.max(1) {
            return Err(Error::Config("more favourite places per agent than places".into()));
        }
        for (name, p) in [("meal_prob", self.meal_prob), ("recreation_prob", self.recreation_prob), ("place_friend_prob", self.place_friend_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.household_size >= 1.0) || !(self.social_mean_degree >= 0.0) {
            return Err(Error::Config("household_size must be >= 1 and social_mean_degree >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceKind {
    Work,
    Restaurant,
    Recreation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub home: usize,
    pub workplace: usize,
    pub restaurants: Vec<usize>,
    pub recreation: Vec<usize>,
    pub friends: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub config: WorldConfig,
    pub agents: Vec<Agent>,
    /// Kind of each place; agents refer to places by index into this list.
    pub places: Vec<PlaceKind>,
    pub social: Arc<Network>,
    pub complete_coloc: Arc<Network>,
}

fn favourites(r: &mut Rng, offset: usize, n: usize, k: usize) -> Vec<usize> {
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let mut v: Vec<usize> = sample(r, n, k).into_iter().map(|p| p + offset).collect();
    v.sort_unstable();
    v
}

pub fn init_world(cfg: &WorldConfig, rng_seed: u64) -> Result<World> {
    cfg.validate()?;
    let n = cfg.n_agents;
    let mut places = vec![PlaceKind::Work; cfg.n_workplaces];
    places.extend(std::iter::repeat_n(PlaceKind::Restaurant, cfg.n_restaurants));
    places.extend(std::iter::repeat_n(PlaceKind::Recreation, cfg.n_recreation));
    let rest0 = cfg.n_workplaces;
    let rec0 = rest0 + cfg.n_restaurants;
    let n_homes = ((n as f64 / cfg.household_size).ceil() as usize).max(1);

    let mut r = rng::stream(rng_seed, &[stage::WORLD, 0]);
    let mut agents: Vec<Agent> = (0..n)
        .map(|_| Agent {
            home: r.random_range(0..n_homes),
            workplace: r.random_range(0..cfg.n_workplaces),
            restaurants: favourites(&mut r, rest0, cfg.n_restaurants, cfg.restaurants_per_agent),
            recreation: favourites(&mut r, rec0, cfg.n_recreation, cfg.recreation_per_agent),
            friends: Vec::new(),
        })
        .collect();

    let mut members = vec![Vec::new(); places.len()];
    for (a, ag) in agents.iter().enumerate() {
        for &p in std::iter::once(&ag.workplace).chain(&ag.restaurants).chain(&ag.recreation) {
            members[p].push(a);
        }
    }
    let mut pairs = Vec::new();
    for m in &members {
        for (i, &a) in m.iter().enumerate() {
            for &b in &m[i + 1..] {
                pairs.push((a.min(b), a.max(b)));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let complete_coloc = Network::new("complete co-location", n, pairs.clone(), false)?;

    let max_edges = n * (n - 1) / 2;
    let target = ((cfg.social_mean_degree * n as f64 / 2.0).round() as usize).min(max_edges);
    let mut r = rng::stream(rng_seed, &[stage::WORLD, 1]);
    let mut ties = std::collections::HashSet::with_capacity(target);
    for &(a, b) in &pairs {
        if ties.len() >= target {
            break;
        }
        if r.random_bool(cfg.place_friend_prob) {
            ties.insert((a, b));
        }
    }
    while ties.len() < target {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a != b {
            ties.insert((a.min(b), a.max(b)));
        }
    }
    let mut ties: Vec<(usize, usize)> = ties.into_iter().collect();
    ties.sort_unstable();
    for &(a, b) in &ties {
        agents[a].friends.push(b);
        agents[b].friends.push(a);
    }
    for ag in &mut agents {
        ag.friends.sort_unstable();
    }
    let social = Network::new("complete social", n, ties, false)?;
    Ok(World {
        config: cfg.clone(),
        agents,
        places,
        social: Arc::new(social),
        complete_coloc: Arc::new(complete_coloc),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpreadConfig {
    pub p_coloc: f64,
    pub p_social: f64,
}

impl Default for SpreadConfig {
    fn default() -> Self {
        Self {
            p_coloc: 0.05,
            p_social: 0.025,
        }
    }
}

impl SpreadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_coloc) || !(0.0..=1.0).contains(&self.p_social) {
            return Err(Error::Config("transmission probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DayReport {
    pub newly_infected: Vec<usize>,
    /// Co-located agent pairs summed over the three slots.
    pub colocated_pairs: usize,
}

fn slot_place(ag: &Agent, slot: usize, cfg: &WorldConfig, r: &mut Rng) -> Option<usize> {
    match slot {
        0 => Some(ag.workplace),
        1 if !ag.restaurants.is_empty() && r.random_bool(cfg.meal_prob) => Some(ag.restaurants[r.random_range(0..ag.restaurants.len())]),
        1 => Some(ag.workplace),
        _ if !ag.recreation.is_empty() && r.random_bool(cfg.recreation_prob) => Some(ag.recreation[r.random_range(0..ag.recreation.len())]),
        _ => None,
    }
}

/// One simulated day. `infected` is updated in place.
pub fn step_day(world: &World, infected: &mut [bool], spread: &SpreadConfig, r: &mut Rng) -> Result<DayReport> {
    if infected.len() != world.agents.len() {
        return Err(Error::SizeMismatch {
            context: "infection state",
            expected: world.agents.len(),
            actual: infected.len(),
        });
    }
    let mut report = DayReport::default();
    let infectious: Vec<bool> = infected.to_vec();
    let mut visits: Vec<(usize, usize)> = Vec::with_capacity(world.agents.len());
    for slot in 0..3 {
        visits.clear();
        for (a, ag) in world.agents.iter().enumerate() {
            if let Some(p) = slot_place(ag, slot, &world.config, r) {
                visits.push((p, a));
            }
        }
        visits.sort_unstable();
        let mut newly = Vec::new();
        for group in visits.chunk_by(|x, y| x.0 == y.0) {
            report.colocated_pairs += group.len() * (group.len() - 1) / 2;
            let sources = group.iter().filter(|&&(_, a)| infectious[a]).count();
            if sources == 0 {
                continue;
            }
            let p = 1.0 - (1.0 - spread.p_coloc).powi(sources as i32);
            for &(_, a) in group {
                if !infected[a] && r.random_bool(p) {
                    newly.push(a);
                }
            }
        }
        for &a in &newly {
            infected[a] = true;
        }
        report.newly_infected.extend(newly);
    }
    let sources: Vec<usize> = (0..infected.len()).filter(|&a| infectious[a]).collect();
    let mut newly = Vec::new();
    for a in sources {
        for &f in &world.agents[a].friends {
            if !infected[f] && r.random_bool(spread.p_social) {
                infected[f] = true;
                newly.push(f);
            }
        }
    }
    report.newly_infected.extend(newly);
    report.newly_infected.sort_unstable();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub n_seeds: usize,
    pub days: usize,
    pub observe_rate_coloc: f64,
    pub observe_rate_social: f64,
    /// Seed of the observation sample, shared by every episode of a dataset.
    pub observation_seed: u64,
    pub spread: SpreadConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            days: 5,
            observe_rate_coloc: 5_281.0 / 15_000.0,
            observe_rate_social: 5_669.0 / 15_000.0,
            observation_seed: 0,
            spread: SpreadConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.n_seeds == 0 || self.days == 0 {
            return Err(Error::Config("n_seeds and days must be at least 1".into()));
        }
        if self.n_seeds > n_agents {
            return Err(Error::Config(format!("{} seeds requested but the world has {n_agents} agents", self.n_seeds)));
        }
        for (name, p) in [("observe_rate_coloc", self.observe_rate_coloc), ("observe_rate_social", self.observe_rate_social)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        self.spread.validate()
    }
}

/// Observed subnetworks with the agent ids behind their node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub coloc_agents: Vec<usize>,
    pub social_agents: Vec<usize>,
    pub observed_coloc: Network,
    pub observed_social: Network,
    /// Identity links in observed node indices.
    pub bridges: BridgeLinks,
}

/// Samples `round(rate · n)` agents for each observed network.
pub fn observe(world: &World, rate_coloc: f64, rate_social: f64, seed: u64) -> Observation {
    let n = world.agents.len();
    let pick = |tag: u64, rate: f64| {
        let mut r = rng::stream(seed, &[stage::OBSERVE, tag]);
        let k = ((rate * n as f64).round() as usize).min(n);
        let mut v = sample(&mut r, n, k).into_vec();
        v.sort_unstable();
        v
    };
    let coloc_agents = pick(0, rate_coloc);
    let social_agents = pick(1, rate_social);
    let mut social_index = vec![usize::MAX; n];
    for (i, &a) in social_agents.iter().enumerate() {
        social_index[a] = i;
    }
    let pairs = coloc_agents
        .iter()
        .enumerate()
        .filter(|&(_, &a)| social_index[a] != usize::MAX)
        .map(|(i, &a)| (i, social_index[a]))
        .collect();
    Observation {
        observed_coloc: world.complete_coloc.induced_subgraph("observed co-location", &coloc_agents),
        observed_social: world.social.induced_subgraph("observed social", &social_agents),
        bridges: BridgeLinks::new(pairs),
        coloc_agents,
        social_agents,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub ground_truth_seeds: Vec<usize>,
    /// Every agent infected by the end, seeds included, sorted.
    pub spread_set: Vec<usize>,
    pub complete_coloc: Arc<Network>,
    pub complete_social: Arc<Network>,
    pub observation: Arc<Observation>,
    /// Newly infected agents per day.
    pub day_log: Vec<Vec<usize>>,
}

fn simulate(world: &World, cfg: &EpisodeConfig, rng_seed: u64) -> Result<(Vec<usize>, Vec<usize>, Vec<Vec<usize>>)> {
    let n = world.agents.len();
    let mut r = rng::stream(rng_seed, &[stage::EPISODE]);
    let mut seeds = sample(&mut r, n, cfg.n_seeds).into_vec();
    seeds.sort_unstable();
    let mut infected = vec![false; n];
    for &s in &seeds {
        infected[s] = true;
    }
    let mut day_log = Vec::with_capacity(cfg.days);
    for _ in 0..cfg.days {
        day_log.push(step_day(world, &mut infected, &cfg.spread, &mut r)?.newly_infected);
    }
    let spread = (0..n).filter(|&a| infected[a]).collect();
    Ok((seeds, spread, day_log))
}

pub fn run_episode(world: &World, cfg: &EpisodeConfig, rng_seed: u64) -> Result<Episode> {
    cfg.validate(world.agents.len())?;
    let obs = Arc::new(observe(world, cfg.observe_rate_coloc, cfg.observe_rate_social, cfg.observation_seed));
    episode_with(world, cfg, rng_seed, obs)
}

fn episode_with(world: &World, cfg: &EpisodeConfig, rng_seed: u64, observation: Arc<Observation>) -> Result<Episode> {
    let (ground_truth_seeds, spread_set, day_log) = simulate(world, cfg, rng_seed)?;
    Ok(Episode {
        ground_truth_seeds,
        spread_set,
        complete_coloc: world.complete_coloc.clone(),
        complete_social: world.social.clone(),
        observation,
        day_log,
    })
}

/// `count` episodes in parallel; episode `i` uses seed `derive(rng_seed, i)`
/// and all share one observation sample.
pub fn run_episodes(world: &World, cfg: &EpisodeConfig, count: usize, rng_seed: u64) -> Result<Vec<Episode>> {
    cfg.validate(world.agents.len())?;
    let obs = Arc::new(observe(world, cfg.observe_rate_coloc, cfg.observe_rate_social, cfg.observation_seed));
    (0..count as u64)
        .into_par_iter()
        .map(|i| episode_with(world, cfg, rng::derive_seed(rng_seed, &[stage::EPISODE, i]), obs.clone()))
        .collect()
}

/// Which agents count as seeds in an exported sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedMode {
    /// The initial sources only.
    D0,
    /// Initial sources plus agents infected on the first day.
    D1,
}

impl std::str::FromStr for SeedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D0" => Ok(Self::D0),
            "D1" => Ok(Self::D1),
            _ => Err(Error::Config(format!("unknown seed mode '{s}' (expected D0 or D1)"))),
        }
    }
}

fn indicator(agents: &[usize], set: &[usize], n_agents: usize) -> Vec<f64> {
    let mut mark = vec![false; n_agents];
    for &a in set {
        mark[a] = true;
    }
    agents.iter().map(|&a| if mark[a] { 1.0 } else { 0.0 }).collect()
}

/// Builds the cross-network dataset: source = observed co-location,
/// target = observed social.
pub fn episodes_to_dataset(episodes: &[Episode], mode: SeedMode, n_agents: usize, generator: serde_json::Value) -> Result<Dataset> {
    let first = episodes.first().ok_or_else(|| Error::Invalid("no episodes to export".into()))?;
    let obs = &first.observation;
    if episodes.iter().any(|e| e.observation.coloc_agents != obs.coloc_agents || e.observation.social_agents != obs.social_agents) {
        return Err(Error::Invalid("episodes were observed through different samples".into()));
    }
    let cross = CrossNetwork::new(obs.observed_coloc.clone(), obs.observed_social.clone(), obs.bridges.clone());
    let features = NodeFeatures::structural(&cross.source);
    let cross = cross.with_source_features(features);
    let mut warnings = Vec::new();
    let mut samples = Vec::with_capacity(episodes.len());
    for (i, e) in episodes.iter().enumerate() {
        let mut seeds = e.ground_truth_seeds.clone();
        if mode == SeedMode::D1 {
            if let Some(day1) = e.day_log.first() {
                seeds.extend(day1);
            }
        }
        let x_s = SeedVector::from_values(&indicator(&obs.coloc_agents, &seeds, n_agents))?;
        if x_s.count() == 0 {
            warnings.push(format!("episode {i}: no seed falls inside the observed co-location network"));
        }
        let y_s = InfectionVector(indicator(&obs.coloc_agents, &e.spread_set, n_agents));
        let x_t = cross.bridge_transfer(&y_s)?;
        let y_t = InfectionVector(indicator(&obs.social_agents, &e.spread_set, n_agents));
        samples.push(DiffusionSample { x_s, y_s, x_t, y_t });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let meta = DatasetMeta {
        kind: "g2s".into(),
        diffusion: String::new(),
        source_config: None,
        target_config: None,
        n_samples: samples.len(),
        test_samples: default_test_samples(samples.len()),
        seed_fraction: None,
        rng_seed: 0,
        n_source: cross.n_source(),
        n_target: cross.n_target(),
        n_bridges: cross.bridges.len(),
        source_role: "observed co-location (assumed physical to social flow)".into(),
        target_role: "observed social".into(),
        warnings,
        generator,
    };
    Ok(Dataset { meta, cross, samples })
}

/// Writes the dataset for `episodes` to `out_dir` and returns it.
pub fn export_episodes(episodes: &[Episode], mode: SeedMode, n_agents: usize, out_dir: &Path, generator: serde_json::Value) -> Result<Dataset> {
    let d = episodes_to_dataset(episodes, mode, n_agents, generator)?;
    d.save(out_dir)?;
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub p_coloc: f64,
    pub p_social: f64,
    pub mean_infected: f64,
    pub min_infected: usize,
    pub max_infected: usize,
    /// Share of episodes whose final spread lies inside the band.
    pub in_band: f64,
}

/// Runs `episodes` episodes per grid point and reports how often the final
/// spread falls inside `band` (inclusive).
pub fn calibrate(world: &World, base: &EpisodeConfig, grid: &[(f64, f64)], episodes: usize, band: (usize, usize), rng_seed: u64) -> Result<Vec<CalibrationPoint>> {
    if episodes == 0 {
        return Err(Error::Config("calibration needs at least one episode per point".into()));
    }
    grid.iter()
        .map(|&(p_coloc, p_social)| {
            let cfg = EpisodeConfig {
                spread: SpreadConfig { p_coloc, p_social },
                ..base.clone()
            };
            cfg.validate(world.agents.len())?;
            let sizes = (0..episodes as u64)
                .into_par_iter()
                .map(|i| simulate(world, &cfg, rng::derive_seed(rng_seed, &[stage::EPISODE, i])).map(|(_, s, _)| s.len()))
                .collect::<Result<Vec<_>>>()?;
            Ok(CalibrationPoint {
                p_coloc,
                p_social,
                mean_infected: sizes.iter().sum::<usize>() as f64 / episodes as f64,
                min_infected: *sizes.iter().min().expect("non-empty"),
                max_infected: *sizes.iter().max().expect("non-empty"),
                in_band: sizes.iter().filter(|&&s| s >= band.0 && s <= band.1).count() as f64 / episodes as f64,
            })
        })
        .collect()
}
