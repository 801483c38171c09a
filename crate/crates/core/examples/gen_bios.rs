//! Regenerates `fixtures/bios.jsonl`: a two-phase classroom log whose
//! changed (component, parameter) pairs span a 14-pair space, with 11 pairs
//! explored in the first phase and 10 in the second.

use ablab_core::clock::epoch;
use ablab_core::events::{payload, ActionEvent, ActionKind, EventLog, Payload};
use ablab_core::model::Provenance;
use chrono::Duration;

const PHASE_ONE: [(&str, &str); 11] = [
    ("Canis lupus", "lifespan"),
    ("Canis lupus", "offspring_count"),
    ("Canis lupus", "reproductive_interval"),
    ("Canis lupus", "starting_population"),
    ("Consumes", "consumption_rate"),
    ("Grass", "lifespan"),
    ("Grass", "minimum_population"),
    ("Grass", "starting_population"),
    ("Ovis aries", "lifespan"),
    ("Ovis aries", "offspring_count"),
    ("Ovis aries", "starting_population"),
];

const PHASE_TWO: [(&str, &str); 10] = [
    ("Canis lupus", "reproductive_interval"),
    ("Canis lupus", "reproductive_maturity"),
    ("Canis lupus", "starting_population"),
    ("Consumes", "consumption_rate"),
    ("Grass", "body_mass"),
    ("Grass", "starting_population"),
    ("Ovis aries", "body_mass"),
    ("Ovis aries", "lifespan"),
    ("Ovis aries", "offspring_count"),
    ("Ovis aries", "starting_population"),
];

const STUDENTS: [&str; 5] = ["s01", "s02", "s03", "s04", "s05"];

fn main() {
    let mut events: Vec<ActionEvent> = Vec::new();
    let mut push = |ts, who: &str, model: &str, action, payload: Payload| {
        events.push(ActionEvent {
            seq: events.len() as u64 + 1,
            ts,
            experiment: "bios-4401".into(),
            group: "1".into(),
            participant: who.into(),
            model: model.into(),
            action,
            payload,
        });
    };
    let base = Provenance::ClonedFrom {
        model: "exemplar-wolf-sheep-grass".into(),
    };
    for (phase, pairs, start) in [
        (1, &PHASE_ONE[..], epoch()),
        (2, &PHASE_TWO[..], epoch() + Duration::days(40)),
    ] {
        for (i, who) in STUDENTS.iter().enumerate() {
            let model = format!("{who}-phase{phase}");
            let mut t = start + Duration::hours(i as i64);
            let mut tick = |minutes| {
                t += Duration::minutes(minutes);
                t
            };
            let at = tick(0);
            push(at, who, &model, ActionKind::N, payload::new_model(&base));
            let at = tick(2);
            push(
                at,
                who,
                &model,
                ActionKind::S,
                payload::simulation(&format!("{model}-b0"), 10),
            );
            // each student works a rotating window of the phase's pairs
            for k in 0..4 {
                let (component, parameter) = pairs[(i * 3 + k) % pairs.len()];
                let at = tick(3);
                push(
                    at,
                    who,
                    &model,
                    ActionKind::P,
                    payload::parameter(component, parameter, 1.0, 2.0),
                );
                let at = tick(2);
                push(
                    at,
                    who,
                    &model,
                    ActionKind::S,
                    payload::simulation(&format!("{model}-b{}", k + 1), 10),
                );
            }
            if i % 2 == 1 {
                let at = tick(4);
                push(
                    at,
                    who,
                    &model,
                    ActionKind::R,
                    payload::structural("add_relationship", "Consumes"),
                );
                let at = tick(2);
                push(
                    at,
                    who,
                    &model,
                    ActionKind::S,
                    payload::simulation(&format!("{model}-b9"), 10),
                );
            }
        }
    }
    events.sort_by_key(|e| (e.ts, e.seq));
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64 + 1;
    }
    print!("{}", EventLog::from_events(events).to_jsonl(None));
}
