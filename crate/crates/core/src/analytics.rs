//! Automated analysis over captured events: descriptive group statistics,
//! model complexity and variety, parameter-space coverage, focus share,
//! action transition matrices and behavior pattern classes.

use std::collections::{BTreeMap, BTreeSet};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::events::{session_gap, sessionize, ActionEvent, ActionKind, Session};
use crate::experiment::{Experiment, Phase};
use crate::model::Model;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("parameter space is empty; coverage is undefined")]
    EmptySpace,
    #[error("session has no events")]
    EmptySession,
    #[error("unknown group {0}")]
    UnknownGroup(String),
}

/// Rounds `100 * num / den` half-up to two decimals using exact integer
/// arithmetic. `den` must be positive.
pub fn percent(num: u64, den: u64) -> f64 {
    assert!(den > 0, "percentage of an empty denominator");
    let hundredths = (20_000 * u128::from(num) + u128::from(den)) / (2 * u128::from(den));
    hundredths as f64 / 100.0
}

/// Display form of a parameter name: `offspring_count` -> `offspring count`.
pub fn parameter_label(raw: &str) -> String {
    raw.trim().replace('_', " ").to_lowercase()
}

/// One (component, parameter) combination, e.g. `Canis lupus - lifespan`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamPair {
    pub component: String,
    pub parameter: String,
}

impl ParamPair {
    pub fn new(component: &str, parameter: &str) -> Self {
        Self {
            component: component.to_string(),
            parameter: parameter_label(parameter),
        }
    }

    /// The pair a parameter-change event touches.
    pub fn of_event(e: &ActionEvent) -> Option<Self> {
        if e.action != ActionKind::P {
            return None;
        }
        let component = e.payload.get("component")?.as_str()?;
        let parameter = e.payload.get("parameter")?.as_str()?;
        Some(Self::new(component, parameter))
    }
}

impl std::fmt::Display for ParamPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} - {}", self.component, self.parameter)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpace {
    pub pairs: BTreeSet<ParamPair>,
}

impl ParameterSpace {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Every pair changed by the given events (across all phases in scope).
pub fn build_parameter_space<'a>(
    events: impl IntoIterator<Item = &'a ActionEvent>,
) -> ParameterSpace {
    ParameterSpace {
        pairs: events.into_iter().filter_map(ParamPair::of_event).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub group: String,
    pub phase: String,
    pub explored: Vec<ParamPair>,
    pub pct: f64,
}

fn in_window<'a, 'b>(
    events: impl IntoIterator<Item = &'a ActionEvent> + 'b,
    group: &'b str,
    phase: &'b Phase,
) -> impl Iterator<Item = &'a ActionEvent> + 'b
where
    'a: 'b,
{
    events
        .into_iter()
        .filter(move |e| e.group == group && phase.contains(e.ts))
}

pub fn coverage<'a>(
    events: impl IntoIterator<Item = &'a ActionEvent>,
    group: &str,
    phase: &Phase,
    space: &ParameterSpace,
) -> Result<CoverageReport, AnalyticsError> {
    if space.is_empty() {
        return Err(AnalyticsError::EmptySpace);
    }
    let explored: BTreeSet<ParamPair> = in_window(events, group, phase)
        .filter_map(ParamPair::of_event)
        .filter(|p| space.pairs.contains(p))
        .collect();
    Ok(CoverageReport {
        group: group.to_string(),
        phase: phase.name.clone(),
        pct: percent(explored.len() as u64, space.len() as u64),
        explored: explored.into_iter().collect(),
    })
}

/// Parameter labels a guided instruction set concentrates on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusSet(pub BTreeSet<String>);

impl Default for FocusSet {
    fn default() -> Self {
        Self::from_labels(&[
            "consumption rate",
            "starting population",
            "initial population",
            "minimum population",
            "offspring count",
            "reproductive interval",
            "reproductive maturity",
        ])
    }
}

impl FocusSet {
    pub fn from_labels(labels: &[&str]) -> Self {
        Self(labels.iter().map(|l| parameter_label(l)).collect())
    }

    pub fn contains(&self, parameter: &str) -> bool {
        self.0.contains(&parameter_label(parameter))
    }
}

/// Share of parameter changes that target the focus set; `None` when the
/// group made no parameter changes in the phase.
pub fn focus_share<'a>(
    events: impl IntoIterator<Item = &'a ActionEvent>,
    group: &str,
    phase: &Phase,
    focus: &FocusSet,
) -> Option<f64> {
    let (mut hits, mut total) = (0u64, 0u64);
    for pair in in_window(events, group, phase).filter_map(ParamPair::of_event) {
        total += 1;
        if focus.contains(&pair.parameter) {
            hits += 1;
        }
    }
    (total > 0).then(|| percent(hits, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub states: Vec<ActionKind>,
    pub counts: BTreeMap<ActionKind, BTreeMap<ActionKind, u64>>,
    /// Row-normalized counts; rows with no outgoing transitions are absent.
    pub probs: BTreeMap<ActionKind, BTreeMap<ActionKind, f64>>,
}

pub fn transition_matrix(actions: &[ActionKind]) -> Result<TransitionMatrix, AnalyticsError> {
    if actions.is_empty() {
        return Err(AnalyticsError::EmptySession);
    }
    let states: BTreeSet<ActionKind> = actions.iter().copied().collect();
    let mut counts: BTreeMap<ActionKind, BTreeMap<ActionKind, u64>> = BTreeMap::new();
    for w in actions.windows(2) {
        *counts.entry(w[0]).or_default().entry(w[1]).or_default() += 1;
    }
    let probs = counts
        .iter()
        .map(|(&from, row)| {
            let total: u64 = row.values().sum();
            (
                from,
                row.iter()
                    .map(|(&to, &c)| (to, c as f64 / total as f64))
                    .collect(),
            )
        })
        .collect();
    Ok(TransitionMatrix {
        states: states.into_iter().collect(),
        counts,
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PatternClass {
    Observation,
    Construction,
    Exploration,
}

/// Observation: only N/S/P. Exploration: structural edits and parameter
/// changes, with at least one structural edit strictly between two
/// simulations. Everything else is Construction.
pub fn classify_pattern(actions: &[ActionKind]) -> Result<PatternClass, AnalyticsError> {
    use ActionKind::*;
    if actions.is_empty() {
        return Err(AnalyticsError::EmptySession);
    }
    if actions.iter().all(|a| matches!(a, N | S | P)) {
        return Ok(PatternClass::Observation);
    }
    let structural = |a: &ActionKind| matches!(a, C | R);
    let has_edit = actions.iter().any(structural);
    let has_param = actions.contains(&P);
    let cyclic = {
        let first_s = actions.iter().position(|a| *a == S);
        let last_s = actions.iter().rposition(|a| *a == S);
        match (first_s, last_s) {
            (Some(i), Some(j)) if i < j => actions[i + 1..j].iter().any(structural),
            _ => false,
        }
    };
    if has_edit && has_param && cyclic {
        Ok(PatternClass::Exploration)
    } else {
        Ok(PatternClass::Construction)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub learners: u64,
    pub models: u64,
    pub total_session_time_s: i64,
    pub mean_session_time_s: f64,
    pub frequency: BTreeMap<ActionKind, u64>,
}

pub fn group_stats<'a>(
    events: impl IntoIterator<Item = &'a ActionEvent>,
    group: &str,
) -> GroupStats {
    let events: Vec<&ActionEvent> = events.into_iter().filter(|e| e.group == group).collect();
    let learners: BTreeSet<&str> = events.iter().map(|e| e.participant.as_str()).collect();
    let models: BTreeSet<&str> = events.iter().map(|e| e.model.as_str()).collect();
    let total: Duration = sessionize(events.iter().copied(), session_gap())
        .iter()
        .map(Session::duration)
        .fold(Duration::zero(), |a, b| a + b);
    let mut frequency: BTreeMap<ActionKind, u64> =
        ActionKind::ALL.into_iter().map(|a| (a, 0)).collect();
    for e in &events {
        *frequency.entry(e.action).or_default() += 1;
    }
    let total_s = total.num_seconds();
    GroupStats {
        learners: learners.len() as u64,
        models: models.len() as u64,
        total_session_time_s: total_s,
        mean_session_time_s: if learners.is_empty() {
            0.0
        } else {
            total_s as f64 / learners.len() as f64
        },
        frequency,
    }
}

/// Components plus relationships.
pub fn model_complexity(model: &Model) -> usize {
    model.components.len() + model.relationships.len()
}

/// Distinct component names plus distinct relationship kinds.
pub fn model_variety(model: &Model) -> usize {
    let names: BTreeSet<&str> = model.components.iter().map(|c| c.name.as_str()).collect();
    let kinds: BTreeSet<_> = model.relationships.iter().map(|r| r.kind).collect();
    names.len() + kinds.len()
}

/// Groups and phases a report is computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportScope {
    pub groups: Vec<String>,
    pub phases: Vec<Phase>,
}

/// Gap between events that starts a new inferred phase.
pub fn phase_gap() -> Duration {
    Duration::days(7)
}

impl ReportScope {
    /// The experiment's groups and phases; an experiment without phases is
    /// treated as one phase named `all` spanning its events.
    pub fn of_experiment<'a>(
        experiment: &Experiment,
        events: impl IntoIterator<Item = &'a ActionEvent>,
    ) -> Self {
        let phases = if experiment.phases.is_empty() {
            whole_span(events).into_iter().collect()
        } else {
            experiment.phases.clone()
        };
        Self {
            groups: experiment
                .groups
                .iter()
                .map(|g| g.group_id.clone())
                .collect(),
            phases,
        }
    }

    /// Scope recovered from a bare log: groups in first-seen order, phases
    /// split wherever the log goes quiet for [`phase_gap`].
    pub fn infer(events: &[ActionEvent]) -> Self {
        let mut groups: Vec<String> = Vec::new();
        for e in events {
            if !groups.contains(&e.group) {
                groups.push(e.group.clone());
            }
        }
        let mut times: Vec<Timestamp> = events.iter().map(|e| e.ts).collect();
        times.sort();
        let mut phases: Vec<Phase> = Vec::new();
        let mut start = times.first().copied();
        for w in times.windows(2) {
            if w[1] - w[0] >= phase_gap() {
                phases.push(Phase {
                    name: String::new(),
                    start: start.unwrap(),
                    end: w[0] + Duration::seconds(1),
                });
                start = Some(w[1]);
            }
        }
        if let (Some(s), Some(last)) = (start, times.last()) {
            phases.push(Phase {
                name: String::new(),
                start: s,
                end: *last + Duration::seconds(1),
            });
        }
        for (i, p) in phases.iter_mut().enumerate() {
            p.name = format!("Phase {}", roman(i + 1));
        }
        Self { groups, phases }
    }
}

fn whole_span<'a>(events: impl IntoIterator<Item = &'a ActionEvent>) -> Option<Phase> {
    let mut it = events.into_iter().map(|e| e.ts);
    let first = it.next()?;
    let (lo, hi) = it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
    Some(Phase {
        name: "all".into(),
        start: lo,
        end: hi + Duration::seconds(1),
    })
}

fn roman(mut n: usize) -> String {
    const TABLE: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (v, s) in TABLE {
        while n >= v {
            out.push_str(s);
            n -= v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub id: String,
    pub complexity: usize,
    pub variety: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusRow {
    pub group: String,
    pub phase: String,
    pub pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "PascalCase")]
pub struct PatternHistogram {
    pub observation: u64,
    pub construction: u64,
    pub exploration: u64,
}

impl PatternHistogram {
    fn add(&mut self, class: PatternClass) {
        match class {
            PatternClass::Observation => self.observation += 1,
            PatternClass::Construction => self.construction += 1,
            PatternClass::Exploration => self.exploration += 1,
        }
    }
}

/// Contents of `analytics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub groups: BTreeMap<String, GroupStats>,
    pub models: Vec<ModelMetrics>,
    pub parameter_space: Vec<ParamPair>,
    pub coverage: Vec<CoverageReport>,
    pub focus: Vec<FocusRow>,
    pub patterns: BTreeMap<String, PatternHistogram>,
}

impl AnalyticsReport {
    /// Canonical `analytics.json` bytes.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("report serializes");
        out.push(b'\n');
        out
    }

    pub fn coverage_for(&self, group: &str, phase: &str) -> Option<&CoverageReport> {
        self.coverage
            .iter()
            .find(|c| c.group == group && c.phase == phase)
    }

    pub fn focus_for(&self, group: &str, phase: &str) -> Option<f64> {
        self.focus
            .iter()
            .find(|c| c.group == group && c.phase == phase)
            .and_then(|f| f.pct)
    }
}

pub fn analytics_report(
    scope: &ReportScope,
    events: &[ActionEvent],
    models: &[Model],
) -> AnalyticsReport {
    let space = build_parameter_space(events);
    let focus_set = FocusSet::default();
    let mut coverage_rows = Vec::new();
    let mut focus_rows = Vec::new();
    for phase in &scope.phases {
        for group in &scope.groups {
            if let Ok(c) = coverage(events, group, phase, &space) {
                coverage_rows.push(c);
            }
            focus_rows.push(FocusRow {
                group: group.clone(),
                phase: phase.name.clone(),
                pct: focus_share(events, group, phase, &focus_set),
            });
        }
    }
    let mut patterns: BTreeMap<String, PatternHistogram> = scope
        .groups
        .iter()
        .map(|g| (g.clone(), PatternHistogram::default()))
        .collect();
    for s in sessionize(events, session_gap()) {
        if let Ok(class) = classify_pattern(&s.actions()) {
            patterns.entry(s.group.clone()).or_default().add(class);
        }
    }
    let mut models: Vec<ModelMetrics> = models
        .iter()
        .map(|m| ModelMetrics {
            id: m.id.clone(),
            complexity: model_complexity(m),
            variety: model_variety(m),
        })
        .collect();
    models.sort_by(|a, b| a.id.cmp(&b.id));
    AnalyticsReport {
        groups: scope
            .groups
            .iter()
            .map(|g| (g.clone(), group_stats(events, g)))
            .collect(),
        models,
        parameter_space: space.pairs.into_iter().collect(),
        coverage: coverage_rows,
        focus: focus_rows,
        patterns,
    }
}

/// Parses `analytics.json`.
pub fn parse_report(bytes: &[u8]) -> Result<AnalyticsReport, serde_json::Error> {
    serde_json::from_slice(bytes)
}

/// Loose accessor used by report rendering on foreign files.
pub fn report_value(bytes: &[u8]) -> Result<Value, serde_json::Error> {
    serde_json::from_slice(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::epoch;
    use crate::events::{payload, Payload};
    use crate::exemplars;
    use ActionKind::*;

    fn ev(
        seq: u64,
        participant: &str,
        group: &str,
        minutes: i64,
        action: ActionKind,
        payload: Payload,
    ) -> ActionEvent {
        ActionEvent {
            seq,
            ts: epoch() + Duration::minutes(minutes),
            experiment: "e".into(),
            group: group.into(),
            participant: participant.into(),
            model: format!("{participant}-m"),
            action,
            payload,
        }
    }

    fn p(seq: u64, group: &str, minutes: i64, comp: &str, param: &str) -> ActionEvent {
        ev(
            seq,
            "u",
            group,
            minutes,
            P,
            payload::parameter(comp, param, 0.0, 1.0),
        )
    }

    fn all_time() -> Phase {
        Phase {
            name: "all".into(),
            start: epoch() - Duration::days(1),
            end: epoch() + Duration::days(365),
        }
    }

    #[test]
    fn percentages_round_half_up() {
        assert_eq!(percent(11, 14), 78.57);
        assert_eq!(percent(10, 14), 71.43);
        assert_eq!(percent(7, 10), 70.0);
        assert_eq!(percent(8, 9), 88.89);
        assert_eq!(percent(1, 8), 12.5);
        assert_eq!(percent(1, 200_000), 0.0);
        assert_eq!(percent(1, 20_000), 0.01);
        assert_eq!(percent(14, 14), 100.0);
    }

    #[test]
    fn space_is_a_set() {
        let events = vec![
            p(1, "a", 0, "Canis lupus", "lifespan"),
            p(2, "a", 1, "Canis lupus", "lifespan"),
            p(3, "a", 2, "Consumes", "consumption_rate"),
            ev(4, "u", "a", 3, S, payload::simulation("b", 10)),
        ];
        let space = build_parameter_space(&events);
        assert_eq!(space.len(), 2);
        assert!(space
            .pairs
            .contains(&ParamPair::new("Consumes", "consumption rate")));
        assert!(build_parameter_space(&events[3..]).is_empty());
    }

    #[test]
    fn coverage_and_empty_space() {
        let events = vec![p(1, "a", 0, "x", "lifespan"), p(2, "b", 0, "y", "lifespan")];
        let space = build_parameter_space(&events);
        let c = coverage(&events, "a", &all_time(), &space).unwrap();
        assert_eq!(c.pct, 50.0);
        assert_eq!(
            coverage(&events, "a", &all_time(), &ParameterSpace::default()),
            Err(AnalyticsError::EmptySpace)
        );
    }

    #[test]
    fn focus_share_examples() {
        let mut events = Vec::new();
        for i in 0..7 {
            events.push(p(i, "a", 0, "x", "offspring_count"));
        }
        for i in 7..10 {
            events.push(p(i, "a", 0, "x", "body_mass"));
        }
        assert_eq!(
            focus_share(&events, "a", &all_time(), &FocusSet::default()),
            Some(70.0)
        );
        assert_eq!(
            focus_share(&events[7..], "a", &all_time(), &FocusSet::default()),
            Some(0.0)
        );
        assert_eq!(
            focus_share(&events, "b", &all_time(), &FocusSet::default()),
            None
        );
    }

    #[test]
    fn transition_examples() {
        let m = transition_matrix(&[N, S, P, S]).unwrap();
        assert_eq!(m.probs[&N][&S], 1.0);
        assert_eq!(m.probs[&S][&P], 1.0);
        assert_eq!(m.probs[&P][&S], 1.0);
        assert_eq!(transition_matrix(&[N, S, S]).unwrap().probs[&S][&S], 1.0);
        let single = transition_matrix(&[N]).unwrap();
        assert!(single.probs.is_empty());
        assert_eq!(single.states, vec![N]);
        assert_eq!(transition_matrix(&[]), Err(AnalyticsError::EmptySession));
    }

    #[test]
    fn canonical_patterns() {
        assert_eq!(
            classify_pattern(&[N, S, P, S, P]),
            Ok(PatternClass::Observation)
        );
        assert_eq!(
            classify_pattern(&[N, C, C, S]),
            Ok(PatternClass::Construction)
        );
        assert_eq!(
            classify_pattern(&[N, C, S, P, R, S]),
            Ok(PatternClass::Exploration)
        );
        assert_eq!(classify_pattern(&[N, E]), Ok(PatternClass::Construction));
        assert_eq!(classify_pattern(&[]), Err(AnalyticsError::EmptySession));
    }

    #[test]
    fn group_stats_counts() {
        let mut events = vec![
            ev(1, "u1", "a", 0, N, Payload::new()),
            ev(2, "u2", "a", 0, N, Payload::new()),
            ev(3, "u3", "a", 0, N, Payload::new()),
            ev(4, "u1", "a", 10, N, Payload::new()),
        ];
        events[3].model = "u1-second".into();
        let s = group_stats(&events, "a");
        assert_eq!((s.learners, s.models), (3, 4));
        assert_eq!(s.frequency.values().sum::<u64>(), 4);
        assert_eq!(s.total_session_time_s, 600);
        let empty = group_stats(&events, "b");
        assert_eq!(
            (empty.learners, empty.models, empty.total_session_time_s),
            (0, 0, 0)
        );
        assert!(empty.frequency.values().all(|&c| c == 0));
    }

    #[test]
    fn fixture_metrics() {
        let kudzu = exemplars::by_name("kudzu").unwrap();
        let wsg = exemplars::by_name("wolf-sheep-grass").unwrap();
        assert_eq!(model_complexity(&kudzu), 8);
        assert_eq!(model_variety(&wsg), 4);
        let empty = Model::with_id("m", "m", "u", epoch()).unwrap();
        assert_eq!((model_complexity(&empty), model_variety(&empty)), (0, 0));
    }

    #[test]
    fn phase_inference_splits_on_quiet_weeks() {
        let mut events = vec![
            p(1, "a", 0, "x", "lifespan"),
            p(2, "a", 60, "x", "lifespan"),
        ];
        events.push(ev(3, "u", "b", 60 * 24 * 40, N, Payload::new()));
        let scope = ReportScope::infer(&events);
        assert_eq!(scope.groups, ["a", "b"]);
        assert_eq!(scope.phases.len(), 2);
        assert_eq!(scope.phases[1].name, "Phase II");
        assert!(scope.phases[0].contains(events[1].ts));
        assert!(scope.phases[1].contains(events[2].ts));
        assert!(ReportScope::infer(&[]).phases.is_empty());
    }

    #[test]
    fn empty_report() {
        let scope = ReportScope {
            groups: vec!["a".into(), "b".into()],
            phases: vec![],
        };
        let r = analytics_report(&scope, &[], &[]);
        assert!(r.coverage.is_empty() && r.models.is_empty() && r.parameter_space.is_empty());
        assert_eq!(r.groups["a"].learners, 0);
        assert_eq!(r.patterns["b"], PatternHistogram::default());
        assert_eq!(parse_report(&r.to_json_bytes()).unwrap(), r);
    }
}
