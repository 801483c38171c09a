//! Scripted learners driving the full service stack in-process.

use std::collections::BTreeMap;
use std::sync::Arc;

use ablab_client::Client;
use ablab_core::analytics::{parameter_label, AnalyticsReport, FocusSet};
use ablab_core::bundle::ExportBundle;
use ablab_core::clock::{epoch, SimClock, Timestamp};
use ablab_core::experiment::{AssignmentMode, FeatureFlag, Phase};
use ablab_core::model::{ComponentKind, Model, ParameterCategory, ParameterName, RelationKind};
use ablab_core::sim::rng::CounterRng;
use ablab_service::api::{
    AddComponent, AddRelationship, ApplyTraitsRequest, CreateExperiment, GroupSpec, JoinQuery,
    NewModel, SimulateRequest,
};
use ablab_service::{router, AppState, ServiceConfig};
use anyhow::{bail, ensure, Context, Result};
use chrono::Duration;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

/// Species the learners may add, all present in the bundled trait dataset.
const EXTRA_SPECIES: [&str; 6] = [
    "Odocoileus virginianus",
    "Vulpes vulpes",
    "Oryctolagus cuniculus",
    "Puma concolor",
    "Quercus alba",
    "Apis mellifera",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Guided,
    Unguided,
}

/// How a scripted learner picks its actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PolicySpec")]
pub struct LearnerPolicy {
    pub kind: PolicyKind,
    /// Parameter labels the guided instructions concentrate on.
    pub focus: Vec<String>,
    pub focus_probability: f64,
    pub changes_per_session: f64,
    pub structural_probability: f64,
    pub eol_probability: f64,
    pub simulate_probability: f64,
}

/// Wire form of a policy; missing fields take the kind's defaults.
#[derive(Debug, Clone, Deserialize)]
struct PolicySpec {
    kind: PolicyKind,
    #[serde(default)]
    focus: Option<Vec<String>>,
    #[serde(default)]
    focus_probability: Option<f64>,
    #[serde(default)]
    changes_per_session: Option<f64>,
    #[serde(default)]
    structural_probability: Option<f64>,
    #[serde(default)]
    eol_probability: Option<f64>,
    #[serde(default)]
    simulate_probability: Option<f64>,
}

impl From<PolicySpec> for LearnerPolicy {
    fn from(s: PolicySpec) -> Self {
        let d = LearnerPolicy::of_kind(s.kind);
        Self {
            kind: s.kind,
            focus: s.focus.unwrap_or(d.focus),
            focus_probability: s.focus_probability.unwrap_or(d.focus_probability),
            changes_per_session: s.changes_per_session.unwrap_or(d.changes_per_session),
            structural_probability: s.structural_probability.unwrap_or(d.structural_probability),
            eol_probability: s.eol_probability.unwrap_or(d.eol_probability),
            simulate_probability: s.simulate_probability.unwrap_or(d.simulate_probability),
        }
    }
}

impl LearnerPolicy {
    pub fn of_kind(kind: PolicyKind) -> Self {
        match kind {
            PolicyKind::Guided => Self::guided(),
            PolicyKind::Unguided => Self::unguided(),
        }
    }

    pub fn guided() -> Self {
        Self {
            kind: PolicyKind::Guided,
            focus: FocusSet::default().0.into_iter().collect(),
            focus_probability: 0.9,
            changes_per_session: 4.0,
            structural_probability: 0.05,
            eol_probability: 0.05,
            simulate_probability: 0.8,
        }
    }

    pub fn unguided() -> Self {
        Self {
            kind: PolicyKind::Unguided,
            focus: Vec::new(),
            focus_probability: 0.0,
            changes_per_session: 8.0,
            structural_probability: 0.15,
            eol_probability: 0.1,
            simulate_probability: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("focus_probability", self.focus_probability),
            ("structural_probability", self.structural_probability),
            ("eol_probability", self.eol_probability),
            ("simulate_probability", self.simulate_probability),
        ] {
            ensure!(
                (0.0..=1.0).contains(&p),
                "{name} must lie in [0, 1], got {p}"
            );
        }
        ensure!(
            self.structural_probability + self.eol_probability <= 1.0,
            "structural_probability + eol_probability must not exceed 1"
        );
        ensure!(
            self.changes_per_session.is_finite() && self.changes_per_session > 0.0,
            "changes_per_session must be positive"
        );
        Ok(())
    }

    fn focus_set(&self) -> FocusSet {
        FocusSet(self.focus.iter().map(|l| parameter_label(l)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseScript {
    pub name: String,
    /// Sessions per learner in this phase.
    pub sessions: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub phases: Vec<PhaseScript>,
    /// Learners per group.
    pub learners: u32,
    /// Exemplar every learner starts from.
    pub base_model: String,
    pub seed: u64,
    /// Group id to policy; exactly two groups.
    pub policies: BTreeMap<String, LearnerPolicy>,
    /// Per-group feature flags; unspecified flags are enabled.
    #[serde(default)]
    pub flags: BTreeMap<String, BTreeMap<FeatureFlag, bool>>,
    /// Simulation settings applied to every batch the learners run.
    #[serde(default = "default_sim")]
    pub sim: Map<String, Value>,
    #[serde(default = "default_phase_days")]
    pub phase_days: u32,
}

fn default_sim() -> Map<String, Value> {
    match json!({"runs": 3, "steps": 24}) {
        Value::Object(m) => m,
        _ => unreachable!(),
    }
}

fn default_phase_days() -> u32 {
    14
}

impl ScenarioScript {
    /// Guided group `A` against unguided group `B`: 20 learners each, two
    /// phases of two sessions, starting from the wolf-sheep-grass exemplar.
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            phases: vec![
                PhaseScript {
                    name: "Phase I".into(),
                    sessions: 2,
                },
                PhaseScript {
                    name: "Phase II".into(),
                    sessions: 2,
                },
            ],
            learners: 20,
            base_model: "wolf-sheep-grass".into(),
            seed,
            policies: BTreeMap::from([
                ("A".to_string(), LearnerPolicy::guided()),
                ("B".to_string(), LearnerPolicy::unguided()),
            ]),
            flags: BTreeMap::new(),
            sim: default_sim(),
            phase_days: default_phase_days(),
        }
    }

    /// Sets `flag` for `group`.
    pub fn with_flag(mut self, group: &str, flag: FeatureFlag, enabled: bool) -> Self {
        self.flags
            .entry(group.to_string())
            .or_default()
            .insert(flag, enabled);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.phases.is_empty(),
            "a scenario needs at least one phase"
        );
        ensure!(
            self.phases.iter().all(|p| p.sessions >= 1),
            "every phase needs at least one session"
        );
        ensure!(
            self.learners >= 1,
            "a scenario needs at least one learner per group"
        );
        ensure!(self.phase_days >= 1, "phase_days must be positive");
        ensure!(
            self.policies.len() == 2,
            "a scenario needs exactly two groups, got {}",
            self.policies.len()
        );
        for (g, p) in &self.policies {
            p.validate()
                .with_context(|| format!("policy for group {g}"))?;
        }
        for g in self.flags.keys() {
            ensure!(
                self.policies.contains_key(g),
                "flags given for unknown group {g}"
            );
        }
        ensure!(
            ablab_core::exemplars::by_name(&self.base_model).is_some(),
            "unknown base model {:?}",
            self.base_model
        );
        Ok(())
    }

    fn phase_windows(&self) -> Vec<Phase> {
        let len = Duration::days(i64::from(self.phase_days));
        self.phases
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let start = epoch() + len * i as i32;
                Phase {
                    name: p.name.clone(),
                    start,
                    end: start + len,
                }
            })
            .collect()
    }
}

/// Everything a scenario run produced.
#[derive(Clone)]
pub struct ScenarioRun {
    /// Researcher client of the service the run used.
    pub service: Client,
    pub experiment: String,
    pub bundle: ExportBundle,
    /// Analytics exactly as served.
    pub analytics: Vec<u8>,
    pub report: AnalyticsReport,
}

pub async fn run_scenario(script: &ScenarioScript) -> Result<ScenarioRun> {
    run_scenario_with(script, ServiceConfig::default()).await
}

/// Runs `script` against a fresh service built from `config`.
pub async fn run_scenario_with(
    script: &ScenarioScript,
    mut config: ServiceConfig,
) -> Result<ScenarioRun> {
    script.validate()?;
    config.default_seed = script.seed;
    let token = config.researcher_token.clone();
    let clock = Arc::new(SimClock::new(epoch()));
    let state = AppState::new(config, clock.clone()).context("starting the in-process service")?;
    let researcher = Client::in_process(router(state)).with_token(token);

    let phases = script.phase_windows();
    let groups: Vec<GroupSpec> = script
        .policies
        .keys()
        .map(|g| {
            let mut spec = GroupSpec::all(true).with_id(g.clone());
            for (&f, &on) in script.flags.get(g).into_iter().flatten() {
                spec = spec.with(f, on);
            }
            spec
        })
        .collect();
    let exp = researcher
        .create_experiment(&CreateExperiment {
            name: format!("scenario seed {}", script.seed),
            mode: Some(AssignmentMode::Manual),
            groups,
            seed: Some(script.seed),
            phases: phases.clone(),
            welcome_doc: None,
            exit_doc: None,
            draft: false,
        })
        .await
        .context("creating the scenario experiment")?;
    let exp_id = exp.experiment.id;
    let base = ablab_core::exemplars::by_name(&script.base_model).expect("validated");

    let mut current: BTreeMap<String, String> = BTreeMap::new();
    for (k, (phase, window)) in script.phases.iter().zip(&phases).enumerate() {
        clock.set(window.start + Duration::hours(1));
        for session in 0..phase.sessions {
            for (group, policy) in &script.policies {
                for n in 1..=script.learners {
                    let participant = format!("{group}-{n:02}");
                    let rng = CounterRng::keyed(&[
                        script.seed,
                        ablab_core::sim::rng::hash_str(&participant),
                        k as u64,
                        u64::from(session),
                    ]);
                    let mut learner = Learner {
                        researcher: &researcher,
                        clock: &clock,
                        rng,
                        policy,
                        base: &base,
                        script,
                        phase: k,
                    };
                    let model = learner
                        .session(
                            &exp_id,
                            group,
                            &participant,
                            current.get(&participant).cloned(),
                        )
                        .await
                        .with_context(|| {
                            format!("{participant}, {} session {}", phase.name, session + 1)
                        })?;
                    current.insert(participant, model);
                    let gap = 31 + learner.below(90) as i64;
                    clock.advance(Duration::minutes(gap));
                }
            }
        }
        ensure!(
            clock_now(&clock) < window.end,
            "{} did not fit in {} days; raise phase_days",
            phase.name,
            script.phase_days
        );
    }

    let zip = researcher
        .export(&exp_id)
        .await
        .context("exporting the run")?;
    let bundle = ExportBundle::from_zip(&zip).context("reading the exported bundle")?;
    let analytics = researcher
        .analytics_bytes(&exp_id)
        .await
        .context("fetching analytics")?;
    let report = ablab_core::analytics::parse_report(&analytics).context("parsing analytics")?;
    Ok(ScenarioRun {
        service: researcher,
        experiment: exp_id,
        bundle,
        analytics,
        report,
    })
}

fn clock_now(clock: &SimClock) -> Timestamp {
    ablab_core::clock::Clock::now(clock)
}

/// An editable (component or relationship, parameter) pair.
#[derive(Debug, Clone)]
enum Knob {
    Param {
        component: String,
        parameter: ParameterName,
    },
    Rate {
        relationship: String,
    },
}

struct Learner<'a> {
    researcher: &'a Client,
    clock: &'a SimClock,
    rng: CounterRng,
    policy: &'a LearnerPolicy,
    base: &'a Model,
    script: &'a ScenarioScript,
    phase: usize,
}

impl Learner<'_> {
    fn chance(&mut self, p: f64) -> bool {
        self.rng.next_f64() < p
    }

    fn below(&mut self, n: usize) -> usize {
        (self.rng.next_f64() * n as f64) as usize
    }

    fn pick<'v, T>(&mut self, items: &'v [T]) -> Option<&'v T> {
        if items.is_empty() {
            None
        } else {
            let i = self.below(items.len());
            items.get(i)
        }
    }

    /// One to five minutes of think time before each action.
    fn tick(&mut self) {
        let mins = 1 + self.below(5) as i64;
        self.clock.advance(Duration::minutes(mins));
    }

    async fn session(
        &mut self,
        exp: &str,
        group: &str,
        participant: &str,
        previous: Option<String>,
    ) -> Result<String> {
        let (me, joined) = self
            .researcher
            .join_as(&JoinQuery {
                group: Some(group.to_string()),
                experiment: Some(exp.to_string()),
                participant: Some(participant.to_string()),
            })
            .await?;
        let flags = joined.flags;
        let on = |f: FeatureFlag| flags.get(&f).copied().unwrap_or(false);

        self.tick();
        let mut model = if on(FeatureFlag::ExemplarModels) {
            me.new_model(&NewModel {
                name: None,
                exemplar: Some(self.script.base_model.clone()),
            })
            .await?
        } else if let Some(prev) = previous {
            if on(FeatureFlag::Cloning) {
                me.clone_model(&prev, None).await?
            } else {
                me.model(&prev).await?
            }
        } else {
            self.rebuild_base(&me, on(FeatureFlag::AdvancedParameters))
                .await?
        };

        let simulate = on(FeatureFlag::Simulation);
        let mut last_simulated = false;
        if self.policy.kind == PolicyKind::Guided {
            let levels = if self.phase == 0 { 1 } else { 2 };
            for (knob, note) in self.hypotheses(&model) {
                for _ in 0..levels {
                    self.tick();
                    model = self.turn(&me, &model, &knob).await?;
                    last_simulated = false;
                    if simulate {
                        self.simulate(&me, &model, Some(note.clone())).await?;
                        last_simulated = true;
                    }
                }
            }
        }

        let planned = Poisson::new(self.policy.changes_per_session)
            .map(|d| d.sample(&mut self.rng) as usize)
            .unwrap_or(1);
        let free = match self.policy.kind {
            PolicyKind::Guided => planned.saturating_sub(3),
            PolicyKind::Unguided => planned.max(1),
        };
        for _ in 0..free {
            self.tick();
            let r = self.rng.next_f64();
            model = if r < self.policy.structural_probability {
                self.structural(&me, &model).await?
            } else if r < self.policy.structural_probability + self.policy.eol_probability
                && on(FeatureFlag::LookupEol)
            {
                self.lookup(&me, &model).await?
            } else {
                let knob = self.choose_knob(&model, on(FeatureFlag::AdvancedParameters))?;
                self.turn(&me, &model, &knob).await?
            };
            last_simulated = false;
            if simulate && self.chance(self.policy.simulate_probability) {
                self.simulate(&me, &model, None).await?;
                last_simulated = true;
            }
        }
        if simulate && !last_simulated {
            self.simulate(&me, &model, None).await?;
        }
        Ok(model.id)
    }

    /// Builds the base model by hand when exemplars are unavailable.
    async fn rebuild_base(&mut self, me: &Client, advanced: bool) -> Result<Model> {
        let mut model = me
            .new_model(&NewModel {
                name: Some(self.base.name.clone()),
                exemplar: None,
            })
            .await?;
        for c in &self.base.components {
            self.tick();
            let params = c
                .params
                .iter()
                .filter(|(p, _)| advanced || !p.is_advanced())
                .map(|(&p, &v)| (p, v))
                .collect();
            model = me
                .add_component(
                    &model.id,
                    &AddComponent {
                        name: c.name.clone(),
                        kind: c.kind,
                        params,
                    },
                )
                .await?;
        }
        for r in &self.base.relationships {
            self.tick();
            let name = |id: &str| {
                self.base
                    .component(id)
                    .map(|c| c.name.clone())
                    .unwrap_or_default()
            };
            model = me
                .add_relationship(
                    &model.id,
                    &AddRelationship {
                        source: name(&r.source),
                        target: name(&r.target),
                        kind: r.kind,
                        rate: Some(r.rate),
                    },
                )
                .await?;
        }
        Ok(model)
    }

    /// Scripted targets: the resource's reproduction rate, the consumer's
    /// starting population, and the consumption rate.
    fn hypotheses(&mut self, model: &Model) -> Vec<(Knob, String)> {
        let Some(rel) = model.relationships.iter().find(|r| {
            r.kind == RelationKind::Consumes
                && model
                    .component(&r.target)
                    .is_some_and(|c| c.kind == ComponentKind::Biotic)
        }) else {
            return Vec::new();
        };
        let name = |id: &str| {
            model
                .component(id)
                .map(|c| c.name.clone())
                .unwrap_or_default()
        };
        let (consumer, resource) = (name(&rel.source), name(&rel.target));
        let reproduction = if self.chance(0.5) {
            ParameterName::OffspringCount
        } else {
            ParameterName::ReproductiveInterval
        };
        vec![
            (
                Knob::Param {
                    component: rel.target.clone(),
                    parameter: reproduction,
                },
                format!("the reproduction rate of {resource} changes its population"),
            ),
            (
                Knob::Param {
                    component: rel.source.clone(),
                    parameter: ParameterName::StartingPopulation,
                },
                format!(
                    "the starting population of {consumer} changes the population of {resource}"
                ),
            ),
            (
                Knob::Rate {
                    relationship: rel.id.clone(),
                },
                format!(
                    "the rate at which {consumer} consumes {resource} changes both populations"
                ),
            ),
        ]
    }

    fn knobs(&self, model: &Model, advanced: bool) -> Vec<(Knob, String)> {
        let mut out = Vec::new();
        for c in &model.components {
            for p in ParameterName::ALL {
                let usable = p.accepts(c.kind) && (advanced || !p.is_advanced());
                if usable && p.category() != ParameterCategory::Relationship {
                    out.push((
                        Knob::Param {
                            component: c.id.clone(),
                            parameter: p,
                        },
                        parameter_label(p.as_str()),
                    ));
                }
            }
        }
        for r in &model.relationships {
            out.push((
                Knob::Rate {
                    relationship: r.id.clone(),
                },
                parameter_label(r.kind.rate_name()),
            ));
        }
        out
    }

    fn choose_knob(&mut self, model: &Model, advanced: bool) -> Result<Knob> {
        let all = self.knobs(model, advanced);
        let focus = self.policy.focus_set();
        let focused: Vec<(Knob, String)> = all
            .iter()
            .filter(|(_, l)| focus.contains(l))
            .cloned()
            .collect();
        let pool = if !focused.is_empty() && self.chance(self.policy.focus_probability) {
            &focused
        } else {
            &all
        };
        match self.pick(pool) {
            Some((k, _)) => Ok(k.clone()),
            None => bail!("model {} has nothing to adjust", model.id),
        }
    }

    /// Moves one knob to a different valid value.
    async fn turn(&mut self, me: &Client, model: &Model, knob: &Knob) -> Result<Model> {
        match knob {
            Knob::Param {
                component,
                parameter,
            } => {
                let current = model
                    .component(component)
                    .with_context(|| format!("component {component} vanished"))?
                    .param(*parameter);
                let value = self.new_value(*parameter, current);
                Ok(me
                    .set_parameter(&model.id, component, *parameter, value)
                    .await?)
            }
            Knob::Rate { relationship } => {
                let current = model
                    .relationship(relationship)
                    .with_context(|| format!("relationship {relationship} vanished"))?
                    .rate;
                let value = self.new_value(ParameterName::InteractionRate, current);
                Ok(me.set_rate(&model.id, relationship, value).await?)
            }
        }
    }

    fn new_value(&mut self, p: ParameterName, current: f64) -> f64 {
        for _ in 0..32 {
            let u = self.rng.next_f64();
            let candidate = if p.check(0.5).is_ok() && p.check(1.5).is_err() {
                ((u * 19.0).floor() + 1.0) / 20.0
            } else {
                let step = 1.0 + (u * 4.0).floor();
                let scaled = if self.chance(0.5) {
                    current + step
                } else {
                    current - step
                };
                if p.check(0.5).is_ok() {
                    (scaled * 100.0).round() / 100.0
                } else {
                    scaled.round()
                }
            };
            if candidate != current && p.check(candidate).is_ok() {
                return candidate;
            }
        }
        current + 1.0
    }

    async fn simulate(&mut self, me: &Client, model: &Model, note: Option<String>) -> Result<()> {
        self.tick();
        let mut config = self.script.sim.clone();
        let seed = (self.rng.next_f64() * (1u64 << 53) as f64) as u64;
        config.insert("seed".into(), json!(seed));
        me.simulate(
            &model.id,
            &SimulateRequest {
                config: Some(config),
                note,
            },
        )
        .await?;
        Ok(())
    }

    async fn lookup(&mut self, me: &Client, model: &Model) -> Result<Model> {
        let names: Vec<String> = model
            .components
            .iter()
            .filter(|c| c.kind == ComponentKind::Biotic)
            .map(|c| c.name.clone())
            .collect();
        let Some(name) = self.pick(&names).cloned() else {
            return Ok(model.clone());
        };
        let res = me
            .apply_traits(
                &model.id,
                &ApplyTraitsRequest {
                    component: name,
                    species: None,
                },
            )
            .await?;
        Ok(res.model)
    }

    /// Adds a species, links two species, or removes something the learner
    /// added earlier. Base components are never removed.
    async fn structural(&mut self, me: &Client, model: &Model) -> Result<Model> {
        let is_base = |name: &str| self.base.component_by_name(name).is_some();
        let extras: Vec<_> = model
            .components
            .iter()
            .filter(|c| !is_base(&c.name))
            .collect();
        let missing: Vec<&str> = EXTRA_SPECIES
            .iter()
            .copied()
            .filter(|s| model.component_by_name(s).is_none())
            .collect();
        let r = self.rng.next_f64();
        if (extras.is_empty() || r < 0.4) && !missing.is_empty() {
            let name = self.pick(&missing).copied().expect("non-empty");
            return Ok(me
                .add_component(
                    &model.id,
                    &AddComponent {
                        name: name.to_string(),
                        kind: ComponentKind::Biotic,
                        params: BTreeMap::new(),
                    },
                )
                .await?);
        }
        if r < 0.75 {
            let biotic: Vec<&str> = model
                .components
                .iter()
                .filter(|c| c.kind == ComponentKind::Biotic)
                .map(|c| c.id.as_str())
                .collect();
            let mut free = Vec::new();
            for s in &biotic {
                for t in &biotic {
                    let taken = model.relationships.iter().any(|x| {
                        x.source == *s && x.target == *t && x.kind == RelationKind::Consumes
                    });
                    if s != t && !taken {
                        free.push((s.to_string(), t.to_string()));
                    }
                }
            }
            if let Some((s, t)) = self.pick(&free).cloned() {
                return Ok(me
                    .add_relationship(
                        &model.id,
                        &AddRelationship {
                            source: s,
                            target: t,
                            kind: RelationKind::Consumes,
                            rate: None,
                        },
                    )
                    .await?);
            }
        }
        match self.pick(&extras) {
            Some(c) => Ok(me.remove_component(&model.id, &c.id).await?),
            None => Ok(model.clone()),
        }
    }
}
