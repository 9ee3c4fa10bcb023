#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use erimap_core::bn::{CptRow, CptTable, NetworkSpec, NodeSpec, ValidatedNetwork};
use erimap_core::bundle::{load_bundle, read_script_file, ScenarioBundle};
use erimap_core::observation::Observation;
use erimap_core::pipeline::EngineState;
use rand::seq::SliceRandom;
use rand::Rng;

pub const PEOPLE: &str = "People in Building";
pub const GAS_AROUND: &str = "Critical Gas Dose around Building";
pub const GAS_IN: &str = "Critical Gas Dose in Building";
pub const AFFECTED: &str = "People in Building Affected";

pub fn henkel_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/henkel")
}

pub fn henkel() -> (ScenarioBundle, EngineState) {
    load_bundle(henkel_dir()).expect("shipped bundle loads")
}

pub fn script(name: &str) -> Vec<Observation> {
    read_script_file(&henkel_dir().join(name), name).expect("shipped script parses")
}

/// Probability vector with every entry at least `floor`.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| floor + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut probs: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // make the row sum to 1 as exactly as f64 allows
    let head: f64 = probs[..n - 1].iter().sum();
    probs[n - 1] = 1.0 - head;
    probs
}

fn configs(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |s| {
                    let mut v = prefix.clone();
                    v.push(s);
                    v
                })
            })
            .collect();
    }
    out
}

/// Random DAG with `nodes` nodes of 2..=`max_states` states each, at most
/// three parents per node and strictly positive CPT entries. Node ids are
/// shuffled so declaration order differs from topological order.
pub fn random_network<R: Rng>(rng: &mut R, nodes: usize, max_states: usize) -> NetworkSpec {
    let cards: Vec<usize> = (0..nodes).map(|_| rng.gen_range(2..=max_states)).collect();
    let mut names: Vec<String> = (0..nodes).map(|i| format!("n{i}")).collect();
    names.shuffle(rng);
    let state_names =
        |i: usize| -> Vec<String> { (0..cards[i]).map(|s| format!("s{s}")).collect() };

    let mut edges = Vec::new();
    let mut specs = Vec::new();
    for i in 0..nodes {
        let mut parents: Vec<usize> = (0..i).filter(|_| rng.gen_bool(0.4)).collect();
        parents.shuffle(rng);
        parents.truncate(3);
        for &p in &parents {
            edges.push((names[p].clone(), names[i].clone()));
        }
        let parent_cards: Vec<usize> = parents.iter().map(|&p| cards[p]).collect();
        let rows = configs(&parent_cards)
            .into_iter()
            .map(|cfg| CptRow {
                given: cfg
                    .iter()
                    .zip(&parents)
                    .map(|(&s, &p)| state_names(p)[s].clone())
                    .collect(),
                probs: random_distribution(rng, cards[i], 0.02),
            })
            .collect();
        let critical = if rng.gen_bool(0.5) {
            vec![state_names(i)[0].clone()]
        } else {
            vec![]
        };
        specs.push(NodeSpec {
            id: names[i].clone(),
            states: state_names(i),
            table: CptTable {
                parents: parents.iter().map(|&p| names[p].clone()).collect(),
                rows,
            },
            critical_states: critical,
        });
    }
    specs.shuffle(rng);
    edges.shuffle(rng);
    NetworkSpec {
        nodes: specs,
        edges,
        key_nodes: BTreeSet::new(),
    }
}

pub type Findings = (BTreeMap<String, String>, Vec<(String, Vec<f64>)>);

/// Hard evidence on up to two nodes and up to four positive likelihood vectors.
pub fn random_evidence<R: Rng>(rng: &mut R, net: &ValidatedNetwork) -> Findings {
    let mut hard = BTreeMap::new();
    for _ in 0..rng.gen_range(0..=2) {
        let n = &net.nodes()[rng.gen_range(0..net.len())];
        hard.insert(
            n.id().to_string(),
            n.states()[rng.gen_range(0..n.cardinality())].clone(),
        );
    }
    let likelihoods = (0..rng.gen_range(0..=4))
        .map(|_| {
            let n = &net.nodes()[rng.gen_range(0..net.len())];
            let v: Vec<f64> = (0..n.cardinality())
                .map(|_| rng.gen_range(0.01..1.0))
                .collect();
            (n.id().to_string(), v)
        })
        .collect();
    (hard, likelihoods)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
