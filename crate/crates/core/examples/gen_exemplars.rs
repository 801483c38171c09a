use ablab_core::clock::epoch;
use ablab_core::model::*;
use std::collections::BTreeMap;
use ParameterName as P;

fn p(xs: &[(P, f64)]) -> BTreeMap<P, f64> {
    xs.iter().copied().collect()
}

fn main() {
    let t = epoch();
    let mut w = Model::with_id(
        "exemplar-wolf-sheep-grass",
        "wolf-sheep-grass",
        "exemplars",
        t,
    )
    .unwrap();
    w.provenance = Provenance::Exemplar {
        name: "wolf-sheep-grass".into(),
    };
    let wolf = w
        .add_component(
            "Canis lupus",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 60.0),
                (P::BodyMass, 40.0),
                (P::StartingPopulation, 10.0),
                (P::OffspringCount, 3.0),
                (P::ReproductiveMaturity, 12.0),
                (P::ReproductiveInterval, 12.0),
            ]),
            t,
        )
        .unwrap();
    let sheep = w
        .add_component(
            "Ovis aries",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 60.0),
                (P::BodyMass, 60.0),
                (P::StartingPopulation, 100.0),
                (P::OffspringCount, 1.0),
                (P::ReproductiveMaturity, 12.0),
                (P::ReproductiveInterval, 12.0),
            ]),
            t,
        )
        .unwrap();
    let grass = w
        .add_component(
            "Grass",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 12.0),
                (P::BodyMass, 0.1),
                (P::StartingPopulation, 800.0),
                (P::OffspringCount, 0.0),
                (P::ReproductiveMaturity, 1.0),
                (P::ReproductiveInterval, 1.0),
                (P::PhotosynthesisRate, 1.0),
            ]),
            t,
        )
        .unwrap();
    w.add_relationship(&wolf, &sheep, RelationKind::Consumes, Some(0.1), t)
        .unwrap();
    w.add_relationship(&sheep, &grass, RelationKind::Consumes, Some(1.0), t)
        .unwrap();

    let mut k = Model::with_id("exemplar-kudzu", "kudzu", "exemplars", t).unwrap();
    k.provenance = Provenance::Exemplar {
        name: "kudzu".into(),
    };
    let kudzu = k
        .add_component(
            "kudzu",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 24.0),
                (P::BodyMass, 0.5),
                (P::StartingPopulation, 400.0),
                (P::OffspringCount, 1.0),
                (P::ReproductiveMaturity, 3.0),
                (P::ReproductiveInterval, 6.0),
                (P::PhotosynthesisRate, 0.4),
            ]),
            t,
        )
        .unwrap();
    let horn = k
        .add_component(
            "american hornbeam",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 120.0),
                (P::BodyMass, 500.0),
                (P::StartingPopulation, 150.0),
                (P::OffspringCount, 1.0),
                (P::ReproductiveMaturity, 24.0),
                (P::ReproductiveInterval, 12.0),
                (P::PhotosynthesisRate, 0.1),
            ]),
            t,
        )
        .unwrap();
    let bug = k
        .add_component(
            "kudzu bug",
            ComponentKind::Biotic,
            &p(&[
                (P::Lifespan, 6.0),
                (P::BodyMass, 0.0001),
                (P::StartingPopulation, 40.0),
                (P::OffspringCount, 2.0),
                (P::ReproductiveMaturity, 1.0),
                (P::ReproductiveInterval, 2.0),
            ]),
            t,
        )
        .unwrap();
    let light = k
        .add_component(
            "light",
            ComponentKind::Abiotic,
            &p(&[(P::Amount, 100000.0), (P::GrowthRate, 0.01)]),
            t,
        )
        .unwrap();
    k.add_relationship(&bug, &kudzu, RelationKind::Consumes, Some(0.5), t)
        .unwrap();
    k.add_relationship(&bug, &horn, RelationKind::Consumes, Some(0.3), t)
        .unwrap();
    k.add_relationship(&kudzu, &light, RelationKind::Consumes, Some(1.0), t)
        .unwrap();
    k.add_relationship(&horn, &light, RelationKind::Consumes, Some(1.0), t)
        .unwrap();

    println!(
        "[\n{}\n]",
        [k, w]
            .iter()
            .map(|m| m.to_json())
            .collect::<Vec<_>>()
            .join(",\n")
    );
}
