//! Discrete-time stochastic population simulation compiled from a model.
//!
//! One step is one month. Each step applies, in order: producer growth,
//! consumption, satiation, reproduction, natural mortality, starvation,
//! destruction, production, abiotic baseline change and the biotic floor.

mod export;
pub mod rng;
mod stats;

use std::collections::BTreeMap;

use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ComponentKind, Model, ParameterName as P, RelationKind, Violation, MAX_COUNT};
pub use export::{aggregate_csv, aggregate_sidecar, batch_csv, parse_batch_csv};
pub use stats::{
    aggregate, peak_shift, peak_shift_with, BatchAggregate, HistogramBin, PeakShiftReport,
};

use rng::{hash_str, CounterRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub steps: u32,
    pub runs: u32,
    pub seed: u64,
    pub arena_scale: f64,
    pub starvation_severity: f64,
    pub histogram_bins: u32,
    /// Replace every random draw by its rounded expectation.
    pub expectation_mode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 24,
            runs: 10,
            seed: 0,
            arena_scale: 1000.0,
            starvation_severity: 0.5,
            histogram_bins: 20,
            expectation_mode: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::Config(what.to_string()));
        if self.runs < 1 {
            return bad("runs must be >= 1");
        }
        if !(self.arena_scale.is_finite() && self.arena_scale > 0.0) {
            return bad("arena_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.starvation_severity) {
            return bad("starvation_severity must lie in [0, 1]");
        }
        if self.histogram_bins < 1 {
            return bad("histogram_bins must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("model cannot be compiled: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("unknown target component {0}")]
    UnknownTarget(String),
    #[error("aggregates describe different components ({0} vs {1})")]
    MismatchedTargets(String, String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Species {
    id: String,
    name: String,
    kind: ComponentKind,
    key: u64,
    initial: f64,
    lifespan: f64,
    offspring: f64,
    maturity: f64,
    interval: u64,
    floor: f64,
    photosynthesis: f64,
    assimilation: f64,
    growth_rate: f64,
    consumer: bool,
}

impl Species {
    fn producer(&self) -> bool {
        self.kind == ComponentKind::Biotic && self.photosynthesis > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Coupling {
    from: usize,
    to: usize,
    rate: f64,
    key: u64,
}

/// Executable form of a valid model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub model_id: String,
    species: Vec<Species>,
    consumes: Vec<Coupling>,
    produces: Vec<Coupling>,
    destroys: Vec<Coupling>,
}

impl SimSpec {
    pub fn state_variables(&self) -> usize {
        self.species.len()
    }

    pub fn count(&self, kind: ComponentKind) -> usize {
        self.species.iter().filter(|s| s.kind == kind).count()
    }

    pub fn couplings(&self, kind: RelationKind) -> usize {
        match kind {
            RelationKind::Consumes => self.consumes.len(),
            RelationKind::Produces => self.produces.len(),
            RelationKind::Destroys => self.destroys.len(),
        }
    }

    pub fn producers(&self) -> Vec<&str> {
        self.species
            .iter()
            .filter(|s| s.producer())
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn component_ids(&self) -> impl Iterator<Item = &str> {
        self.species.iter().map(|s| s.id.as_str())
    }

    pub fn component_name(&self, id: &str) -> Option<&str> {
        self.species
            .iter()
            .find(|s| s.id == id)
            .map(|s| s.name.as_str())
    }
}

pub fn compile(model: &Model) -> Result<SimSpec, SimError> {
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(SimError::Invalid(violations));
    }
    let mut m = model.clone();
    m.canonicalize();
    let index: BTreeMap<&str, usize> = m
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id.as_str(), i))
        .collect();
    let consumers: std::collections::BTreeSet<&str> = m
        .relationships
        .iter()
        .filter(|r| r.kind == RelationKind::Consumes)
        .map(|r| r.source.as_str())
        .collect();
    let species = m
        .components
        .iter()
        .map(|c| {
            let biotic = c.kind == ComponentKind::Biotic;
            Species {
                id: c.id.clone(),
                name: c.name.clone(),
                kind: c.kind,
                key: hash_str(&c.id),
                initial: if biotic {
                    c.param(P::StartingPopulation)
                } else {
                    c.param(P::Amount)
                },
                lifespan: c.param(P::Lifespan),
                offspring: c.param(P::OffspringCount),
                maturity: c.param(P::ReproductiveMaturity),
                interval: c.param(P::ReproductiveInterval).max(1.0) as u64,
                floor: if biotic {
                    c.param(P::MinimumPopulation)
                } else {
                    c.param(P::MinimumAmount)
                },
                photosynthesis: if biotic {
                    c.param(P::PhotosynthesisRate)
                } else {
                    0.0
                },
                assimilation: c.param(P::AssimilationEfficiency),
                growth_rate: if biotic { 0.0 } else { c.param(P::GrowthRate) },
                consumer: consumers.contains(c.id.as_str()),
            }
        })
        .collect();
    let mut consumes = Vec::new();
    let mut produces = Vec::new();
    let mut destroys = Vec::new();
    for r in &m.relationships {
        let coupling = Coupling {
            from: index[r.source.as_str()],
            to: index[r.target.as_str()],
            rate: r.rate,
            key: hash_str(&r.id),
        };
        match r.kind {
            RelationKind::Consumes => consumes.push(coupling),
            RelationKind::Produces => produces.push(coupling),
            RelationKind::Destroys => destroys.push(coupling),
        }
    }
    Ok(SimSpec {
        model_id: m.id.clone(),
        species,
        consumes,
        produces,
        destroys,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub run_index: u32,
    pub seed: u64,
    /// Component id to `steps + 1` values.
    pub series: BTreeMap<String, Vec<f64>>,
    /// Set when any value hit the population ceiling.
    #[serde(default)]
    pub clamped: bool,
}

impl RunSeries {
    pub fn steps(&self) -> usize {
        self.series
            .values()
            .next()
            .map_or(0, |v| v.len().saturating_sub(1))
    }
}

#[derive(Clone, Copy)]
#[repr(u64)]
enum Stage {
    Growth = 1,
    Reproduction = 4,
    Mortality = 5,
    Starvation = 6,
    Destruction = 7,
}

struct Draws<'a> {
    config: &'a SimConfig,
    run: u32,
    step: u32,
}

impl Draws<'_> {
    fn stream(&self, component: u64, stage: Stage) -> CounterRng {
        CounterRng::keyed(&[
            self.config.seed,
            u64::from(self.run),
            u64::from(self.step),
            component,
            stage as u64,
        ])
    }

    fn poisson(&self, lambda: f64, component: u64, stage: Stage) -> f64 {
        if lambda.is_nan() || lambda <= 0.0 {
            return 0.0;
        }
        let lambda = lambda.min(MAX_COUNT);
        if self.config.expectation_mode {
            return lambda.round();
        }
        let mut rng = self.stream(component, stage);
        Poisson::new(lambda)
            .expect("positive finite lambda")
            .sample(&mut rng)
    }

    fn binomial(&self, n: f64, p: f64, component: u64, stage: Stage) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if n <= 0.0 || p == 0.0 {
            return 0.0;
        }
        if self.config.expectation_mode {
            return (n * p).round();
        }
        let mut rng = self.stream(component, stage);
        Binomial::new(n as u64, p)
            .expect("p in [0, 1]")
            .sample(&mut rng) as f64
    }
}

/// One run. Deterministic in `(config.seed, run_index)`.
pub fn run(spec: &SimSpec, config: &SimConfig, run_index: u32) -> Result<RunSeries, SimError> {
    config.validate()?;
    let n = spec.species.len();
    let mut state: Vec<f64> = spec.species.iter().map(|s| s.initial).collect();
    let mut series: Vec<Vec<f64>> = state
        .iter()
        .map(|&v| {
            let mut col = Vec::with_capacity(config.steps as usize + 1);
            col.push(v);
            col
        })
        .collect();
    let mut clamped = false;

    for step in 1..=config.steps {
        let draws = Draws {
            config,
            run: run_index,
            step,
        };
        let t = u64::from(step);

        for (i, sp) in spec.species.iter().enumerate() {
            if sp.producer() {
                let room = (1.0 - state[i] / config.arena_scale).max(0.0);
                state[i] +=
                    draws.poisson(sp.photosynthesis * state[i] * room, sp.key, Stage::Growth);
            }
        }

        let mut intake = vec![0.0; n];
        for e in &spec.consumes {
            let attempted = (e.rate * state[e.from]).round();
            let consumed = state[e.to].min(attempted);
            state[e.to] -= consumed;
            intake[e.from] += consumed;
        }

        let satiation: Vec<f64> = spec
            .species
            .iter()
            .enumerate()
            .map(|(i, sp)| {
                if sp.consumer {
                    (sp.assimilation * intake[i] / state[i].max(1.0)).min(1.0)
                } else {
                    1.0
                }
            })
            .collect();

        for (i, sp) in spec.species.iter().enumerate() {
            if sp.kind != ComponentKind::Biotic {
                continue;
            }
            if t % sp.interval == 0 {
                let share = (1.0 - sp.maturity / sp.lifespan).clamp(0.0, 1.0);
                let mature = (state[i] * share).floor();
                let fed = if sp.consumer { satiation[i] } else { 1.0 };
                state[i] += draws.poisson(mature * sp.offspring * fed, sp.key, Stage::Reproduction);
            }
            state[i] -= draws.binomial(state[i], 1.0 / sp.lifespan, sp.key, Stage::Mortality);
            if sp.consumer {
                let p = (1.0 - satiation[i]) * config.starvation_severity;
                state[i] -= draws.binomial(state[i], p, sp.key, Stage::Starvation);
            }
        }

        for e in &spec.destroys {
            let target = &spec.species[e.to];
            let p = (e.rate * state[e.from] / config.arena_scale).min(1.0);
            let deaths = draws.binomial(state[e.to], p, target.key ^ e.key, Stage::Destruction);
            state[e.to] -= deaths;
        }

        for e in &spec.produces {
            state[e.to] += (e.rate * state[e.from]).round();
        }

        for (i, sp) in spec.species.iter().enumerate() {
            if sp.kind == ComponentKind::Abiotic {
                state[i] = sp.floor.max((state[i] * (1.0 + sp.growth_rate)).round());
            } else {
                state[i] = state[i].max(sp.floor);
            }
            if state[i] > MAX_COUNT {
                state[i] = MAX_COUNT;
                clamped = true;
            }
            state[i] = state[i].max(0.0);
            series[i].push(state[i]);
        }
    }

    Ok(RunSeries {
        run_index,
        seed: config.seed,
        series: spec
            .species
            .iter()
            .map(|s| s.id.clone())
            .zip(series)
            .collect(),
        clamped,
    })
}

/// `config.runs` independent runs, indexed `0..runs`, computed in parallel.
pub fn run_batch(spec: &SimSpec, config: &SimConfig) -> Result<Vec<RunSeries>, SimError> {
    config.validate()?;
    (0..config.runs)
        .into_par_iter()
        .map(|i| run(spec, config, i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::epoch;
    use crate::exemplars;

    fn wsg() -> Model {
        exemplars::by_name("wolf-sheep-grass").unwrap()
    }

    fn single(params: &[(P, f64)]) -> Model {
        let mut m = Model::with_id("solo", "solo", "u", epoch()).unwrap();
        m.add_component(
            "sheep",
            ComponentKind::Biotic,
            &params.iter().copied().collect(),
            epoch(),
        )
        .unwrap();
        m
    }

    fn forced(steps: u32) -> SimConfig {
        SimConfig {
            steps,
            runs: 1,
            expectation_mode: true,
            ..SimConfig::default()
        }
    }

    #[test]
    fn compile_counts_state_and_couplings() {
        let spec = compile(&wsg()).unwrap();
        assert_eq!(spec.state_variables(), 3);
        assert_eq!(spec.couplings(RelationKind::Consumes), 2);

        let kudzu = compile(&exemplars::by_name("kudzu").unwrap()).unwrap();
        assert_eq!(kudzu.count(ComponentKind::Biotic), 3);
        assert_eq!(kudzu.count(ComponentKind::Abiotic), 1);
    }

    #[test]
    fn compile_rejects_invalid_model() {
        let mut m = wsg();
        m.relationships[0].target = "ghost".into();
        assert!(matches!(compile(&m), Err(SimError::Invalid(v)) if v.len() == 1));
    }

    #[test]
    fn zero_steps_is_initial_conditions() {
        let spec = compile(&wsg()).unwrap();
        let cfg = SimConfig {
            steps: 0,
            ..SimConfig::default()
        };
        let r = run(&spec, &cfg, 0).unwrap();
        assert!(r.series.values().all(|v| v.len() == 1));
        let sheep = wsg().component_by_name("Ovis aries").unwrap().clone();
        assert_eq!(r.series[&sheep.id][0], sheep.param(P::StartingPopulation));
    }

    #[test]
    fn same_seed_and_run_are_bit_identical() {
        let spec = compile(&wsg()).unwrap();
        let cfg = SimConfig {
            seed: 42,
            ..SimConfig::default()
        };
        assert_eq!(run(&spec, &cfg, 3).unwrap(), run(&spec, &cfg, 3).unwrap());
        assert_ne!(
            run(&spec, &cfg, 3).unwrap().series,
            run(&spec, &cfg, 4).unwrap().series
        );
    }

    #[test]
    fn sheep_trajectory_varies() {
        let m = wsg();
        let sheep = m.component_by_name("Ovis aries").unwrap().id.clone();
        let cfg = SimConfig {
            seed: 42,
            ..SimConfig::default()
        };
        let r = run(&compile(&m).unwrap(), &cfg, 0).unwrap();
        let xs = &r.series[&sheep];
        assert_eq!(xs.len(), 25);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(var > 0.0);
    }

    #[test]
    fn batch_matches_individual_runs() {
        let spec = compile(&wsg()).unwrap();
        let cfg = SimConfig {
            seed: 5,
            runs: 10,
            ..SimConfig::default()
        };
        let batch = run_batch(&spec, &cfg).unwrap();
        assert_eq!(batch.len(), 10);
        for (i, r) in batch.iter().enumerate() {
            assert_eq!(r.run_index as usize, i);
            assert_eq!(*r, run(&spec, &cfg, i as u32).unwrap());
        }
        let mut reversed: Vec<_> = (0..10)
            .rev()
            .map(|i| run(&spec, &cfg, i).unwrap())
            .collect();
        reversed.reverse();
        assert_eq!(reversed, batch);
    }

    #[test]
    fn floors_hold_after_each_step() {
        let mut m = wsg();
        let wolf = m.component_by_name("Canis lupus").unwrap().id.clone();
        m.set_parameter(&wolf, P::MinimumPopulation, 7.0, epoch())
            .unwrap();
        let spec = compile(&m).unwrap();
        for seed in 0..5 {
            let cfg = SimConfig {
                seed,
                steps: 36,
                ..SimConfig::default()
            };
            let r = run(&spec, &cfg, 0).unwrap();
            assert!(r.series[&wolf][1..].iter().all(|&v| v >= 7.0));
            assert!(r.series.values().flatten().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn expectation_mode_null_dynamics_is_constant() {
        let m = single(&[(P::OffspringCount, 0.0), (P::Lifespan, 1e8)]);
        let spec = compile(&m).unwrap();
        let r = run(&spec, &forced(48), 0).unwrap();
        assert!(r
            .series
            .values()
            .next()
            .unwrap()
            .iter()
            .all(|&v| v == 100.0));
    }

    #[test]
    fn null_dynamics_noise_is_bounded() {
        let m = single(&[(P::OffspringCount, 0.0), (P::Lifespan, 1e8)]);
        let spec = compile(&m).unwrap();
        let cfg = SimConfig {
            steps: 48,
            seed: 11,
            ..SimConfig::default()
        };
        let xs = run(&spec, &cfg, 0)
            .unwrap()
            .series
            .into_values()
            .next()
            .unwrap();
        assert!(xs.iter().all(|&v| (0.0..=100.0).contains(&v)));
        assert!(xs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn overflow_is_clamped_and_flagged() {
        let m = single(&[
            (P::OffspringCount, 1e9),
            (P::StartingPopulation, 1e9),
            (P::ReproductiveInterval, 1.0),
            (P::ReproductiveMaturity, 1.0),
            (P::Lifespan, 1e6),
        ]);
        let r = run(&compile(&m).unwrap(), &forced(2), 0).unwrap();
        assert!(r.clamped);
        assert!(r.series.values().flatten().all(|&v| v <= MAX_COUNT));
    }

    #[test]
    fn config_bounds() {
        assert!(SimConfig {
            runs: 0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            arena_scale: 0.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            starvation_severity: 1.5,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
