mod common;

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, Utc};
use common::{henkel, random_distribution, AFFECTED};
use erimap_core::bn::ValidatedNetwork;
use erimap_core::observation::{Location, Observation, Payload, Tier};
use erimap_core::pipeline::EngineState;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t0() -> DateTime<Utc> {
    "2024-05-14T00:00:00Z".parse().unwrap()
}

/// A valid observation on a random node of the case-study network.
fn random_observation<R: Rng>(
    rng: &mut R,
    net: &ValidatedNetwork,
    id: usize,
    areas: Vec<String>,
) -> Observation {
    let node = &net.nodes()[rng.gen_range(0..net.len())];
    let n = node.cardinality();
    let (tier, payload) = match rng.gen_range(0..4) {
        0 => (
            Tier::RS3,
            Payload::State(node.states()[rng.gen_range(0..n)].clone()),
        ),
        1 => (
            Tier::RS3,
            Payload::ProbRatio(random_distribution(rng, n, 0.01)),
        ),
        2 => (
            Tier::RS3,
            Payload::LikelihoodRatio((0..n).map(|_| rng.gen_range(0.05..1.0)).collect()),
        ),
        _ => (
            *[Tier::RS1, Tier::RS2].choose(rng).unwrap(),
            Payload::State(node.states()[rng.gen_range(0..n)].clone()),
        ),
    };
    Observation {
        id: format!("r{id:04}"),
        time: t0() + Duration::seconds(id as i64),
        location: Location::Areas(areas),
        node: node.id().to_string(),
        tier,
        payload,
        source: "random".into(),
    }
}

fn snapshots_of(e: &EngineState, area: &str) -> Vec<String> {
    e.area_timeline(area)
        .unwrap()
        .into_iter()
        .map(|s| serde_json::to_string(&s.marginals).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn evidence_in_one_area_leaves_others_untouched(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bundle, mut engine) = henkel();
        let ids: Vec<String> = bundle.area_ids().map(str::to_string).collect();
        let a = ids.choose(&mut rng).unwrap().clone();
        let before: BTreeMap<_, _> = ids.iter().filter(|b| **b != a).map(|b| (b.clone(), snapshots_of(&engine, b))).collect();
        for i in 0..12 {
            let obs = random_observation(&mut rng, &bundle.network, i, vec![a.clone()]);
            let _ = engine.ingest_or_reject(&obs);
        }
        for (b, snaps) in before {
            prop_assert_eq!(snapshots_of(&engine, &b), snaps);
            prop_assert!(engine.area(&b).unwrap().is_empty());
        }
    }

    #[test]
    fn snapshots_are_normalized_and_seq_is_monotone(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bundle, mut engine) = henkel();
        let ids: Vec<String> = bundle.area_ids().map(str::to_string).collect();
        for i in 0..20 {
            let k = rng.gen_range(1..=3);
            let areas = ids.choose_multiple(&mut rng, k).cloned().collect();
            let _ = engine.ingest_or_reject(&random_observation(&mut rng, &bundle.network, i, areas));
        }
        let tl = engine.timeline();
        prop_assert!(tl.windows(2).all(|w| w[0].seq < w[1].seq));
        let mut per_area: BTreeMap<&str, u64> = BTreeMap::new();
        for s in tl {
            let next = per_area.entry(&s.area_id).or_insert(0);
            prop_assert_eq!(s.area_seq, *next);
            *next += 1;
            for d in s.marginals.values() {
                prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn same_time_virtual_evidence_commutes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bundle, engine) = henkel();
        let mut batch: Vec<Observation> = (0..6)
            .map(|i| {
                let node = &bundle.network.nodes()[rng.gen_range(0..bundle.network.len())];
                let n = node.cardinality();
                Observation {
                    id: format!("v{i}"),
                    time: t0(),
                    location: Location::areas(["17"]),
                    node: node.id().to_string(),
                    tier: Tier::RS3,
                    payload: Payload::LikelihoodRatio((0..n).map(|_| rng.gen_range(0.05..1.0)).collect()),
                    source: String::new(),
                }
            })
            .collect();
        let mut first = engine.clone();
        for o in &batch {
            first.ingest(o).unwrap();
        }
        batch.shuffle(&mut rng);
        let mut second = engine.clone();
        for o in &batch {
            second.ingest(o).unwrap();
        }
        let a = first.current_beliefs("17").unwrap();
        let b = second.current_beliefs("17").unwrap();
        for (n, d) in &a {
            prop_assert!(common::max_abs_diff(&d.probs, &b[n].probs) <= 1e-12);
        }
    }

    #[test]
    fn sole_soft_observation_sets_the_marginal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bundle, mut engine) = henkel();
        let node = &bundle.network.nodes()[rng.gen_range(0..bundle.network.len())];
        let lambda = random_distribution(&mut rng, node.cardinality(), 0.0);
        let obs = Observation {
            id: "soft".into(),
            time: t0(),
            location: Location::areas(["5"]),
            node: node.id().to_string(),
            tier: Tier::RS3,
            payload: Payload::ProbRatio(lambda.clone()),
            source: String::new(),
        };
        let snaps = engine.ingest(&obs).unwrap();
        prop_assert!(common::max_abs_diff(&snaps[0].marginals[node.id()].probs, &lambda) <= 1e-9);
    }

    #[test]
    fn halts_exactly_when_every_key_node_is_confirmed(order in Just((1..=27).collect::<Vec<u32>>()).prop_shuffle()) {
        let (_, mut engine) = henkel();
        for (i, area) in order.iter().enumerate() {
            prop_assert!(!engine.is_halted());
            let obs = Observation {
                id: format!("k{i:02}"),
                time: t0(),
                location: Location::areas([area.to_string()]),
                node: AFFECTED.into(),
                tier: Tier::RS3,
                payload: Payload::State(if i % 2 == 0 { "True" } else { "False" }.into()),
                source: String::new(),
            };
            engine.ingest(&obs).unwrap();
        }
        prop_assert!(engine.is_halted());
    }
}

#[test]
fn replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (bundle, base) = henkel();
    let ids: Vec<String> = bundle.area_ids().map(str::to_string).collect();
    let obs: Vec<Observation> = (0..40)
        .map(|i| {
            let areas = ids.choose_multiple(&mut rng, 2).cloned().collect();
            random_observation(&mut rng, &bundle.network, i, areas)
        })
        .collect();
    let a = base.clone().replay(&obs);
    let b = base.clone().replay(&obs);
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn rejected_observation_leaves_engine_unchanged() {
    let (_, mut engine) = henkel();
    let before = engine.timeline().len();
    let bad = Observation {
        id: "x".into(),
        time: t0(),
        location: Location::areas(["17", "99"]),
        node: AFFECTED.into(),
        tier: Tier::RS3,
        payload: Payload::State("True".into()),
        source: String::new(),
    };
    let r = engine.ingest_or_reject(&bad).unwrap_err();
    assert_eq!(r.code, "UnknownArea");
    assert_eq!(engine.timeline().len(), before);
    assert!(engine.area("17").unwrap().is_empty());
    assert_eq!(engine.rejections().len(), 1);
}
