//! Seeded generators for synthetic models and event logs, used by property
//! tests and benchmarks.

use chrono::Duration;
use rand_core::RngCore;

use crate::clock::{epoch, Timestamp};
use crate::events::{payload, ActionEvent, ActionKind, Payload};
use crate::experiment::Phase;
use crate::model::{ComponentKind, Model, ParameterName, RelationKind};
use crate::sim::rng::CounterRng;

const SPECIES: [&str; 8] = [
    "Canis lupus",
    "Ovis aries",
    "Grass",
    "kudzu",
    "kudzu bug",
    "american hornbeam",
    "light",
    "water",
];

fn below(rng: &mut CounterRng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

/// A valid model with up to `max_components` components and random typed
/// relationships among them.
pub fn random_model(seed: u64, max_components: usize) -> Model {
    let mut rng = CounterRng::keyed(&[seed, 0x5eed]);
    let now = epoch();
    let mut m =
        Model::with_id(format!("synth-{seed}"), "synthetic", "synth", now).expect("valid name");
    let n = below(&mut rng, max_components + 1);
    for i in 0..n {
        let kind = if rng.next_f64() < 0.7 {
            ComponentKind::Biotic
        } else {
            ComponentKind::Abiotic
        };
        m.add_component(&format!("component {i}"), kind, &Default::default(), now)
            .expect("unique name");
    }
    let ids: Vec<(String, ComponentKind)> = m
        .components
        .iter()
        .map(|c| (c.id.clone(), c.kind))
        .collect();
    if ids.len() >= 2 {
        for _ in 0..below(&mut rng, 2 * ids.len() + 1) {
            let (s, sk) = &ids[below(&mut rng, ids.len())];
            let (t, tk) = &ids[below(&mut rng, ids.len())];
            let kind = [
                RelationKind::Consumes,
                RelationKind::Produces,
                RelationKind::Destroys,
            ][below(&mut rng, 3)];
            if s != t && kind.allows(*sk, *tk) {
                let rate = (rng.next_f64() * 100.0).round() / 100.0;
                // duplicates are rejected by the model; skipping them is fine here
                let _ = m.add_relationship(s, t, kind, Some(rate), now);
            }
        }
    }
    m
}

/// Two consecutive one-week phases starting at the fixture epoch.
pub fn two_phases() -> Vec<Phase> {
    vec![
        Phase {
            name: "Phase I".into(),
            start: epoch(),
            end: epoch() + Duration::days(7),
        },
        Phase {
            name: "Phase II".into(),
            start: epoch() + Duration::days(7),
            end: epoch() + Duration::days(14),
        },
    ]
}

/// A log of up to `max_participants` participants split across groups `A`
/// and `B`, with up to `max_p` parameter changes interleaved with other
/// actions, spread over [`two_phases`].
pub fn random_log(seed: u64, max_participants: usize, max_p: usize) -> Vec<ActionEvent> {
    let mut rng = CounterRng::keyed(&[seed, 0x10c]);
    let participants = 1 + below(&mut rng, max_participants.max(1));
    let p_events = below(&mut rng, max_p + 1);
    let others = below(&mut rng, max_p + 1);
    let mut drafts: Vec<(Timestamp, usize, ActionKind, Payload)> = Vec::new();
    let ts = |rng: &mut CounterRng| epoch() + Duration::minutes(below(rng, 14 * 24 * 60) as i64);
    for _ in 0..p_events {
        let who = below(&mut rng, participants);
        let comp = SPECIES[below(&mut rng, SPECIES.len())];
        let param = ParameterName::ALL[below(&mut rng, ParameterName::ALL.len())];
        let at = ts(&mut rng);
        drafts.push((
            at,
            who,
            ActionKind::P,
            payload::parameter(comp, param.as_str(), 0.0, 1.0),
        ));
    }
    for _ in 0..others {
        let who = below(&mut rng, participants);
        let at = ts(&mut rng);
        let (action, payload) = match below(&mut rng, 4) {
            0 => (ActionKind::S, payload::simulation("batch", 1)),
            1 => (ActionKind::C, payload::structural("add_component", "x")),
            2 => (ActionKind::E, payload::lookup("Canis lupus")),
            _ => (ActionKind::N, Payload::new()),
        };
        drafts.push((at, who, action, payload));
    }
    drafts.sort_by_key(|d| d.0);
    drafts
        .into_iter()
        .enumerate()
        .map(|(i, (ts, who, action, payload))| ActionEvent {
            seq: i as u64 + 1,
            ts,
            experiment: "synthetic".into(),
            group: if who % 2 == 0 { "A" } else { "B" }.into(),
            participant: format!("p{who}"),
            model: format!("p{who}-model"),
            action,
            payload,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded_and_valid() {
        for seed in 0..50 {
            let m = random_model(seed, 8);
            assert!(m.validate().is_empty(), "seed {seed}: {:?}", m.validate());
            assert_eq!(m, random_model(seed, 8));
            let log = random_log(seed, 10, 50);
            assert_eq!(log, random_log(seed, 10, 50));
            assert!(log.iter().filter(|e| e.action == ActionKind::P).count() <= 50);
            assert!(log
                .windows(2)
                .all(|w| w[0].seq < w[1].seq && w[0].ts <= w[1].ts));
        }
    }
}
