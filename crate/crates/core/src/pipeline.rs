//! Operation phase: observations are routed to the areas they address,
//! classified, applied to each area's evidence, and every update is recorded
//! as a [`BeliefSnapshot`].
//!
//! [`EngineState::ingest`] is all-or-nothing. An observation addressed to
//! several areas either updates all of them or none.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bn::{BnError, Distribution, ValidatedNetwork};
use crate::evidence::{
    classify, soft_to_virtual, EvidenceError, EvidenceKind, RegretPolicy, ReliabilityTable,
};
use crate::observation::{Location, Observation};
use crate::spatial::{
    instantiate_areas, Area, AreaState, SoftOverride, SpatialError, VirtualRecord,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("unknown area `{0}`")]
    UnknownArea(String),

    #[error(transparent)]
    Evidence(#[from] EvidenceError),

    #[error("all key nodes are confirmed in every area; no further observations are accepted")]
    EngineHalted,

    #[error(
        "area `{area}`: `{node}` is already known to be `{recorded}`, cannot also be `{observed}`"
    )]
    HardEvidenceConflict {
        area: String,
        node: String,
        recorded: String,
        observed: String,
    },

    #[error(transparent)]
    Inference(#[from] BnError),

    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

impl PipelineError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownArea(_) => "UnknownArea",
            Self::EngineHalted => "EngineHalted",
            Self::HardEvidenceConflict { .. } => "HardEvidenceConflict",
            Self::Evidence(e) => match e {
                EvidenceError::UnknownNode(_) => "UnknownNode",
                EvidenceError::UnknownState { .. } => "UnknownState",
                EvidenceError::UnknownTier(_) => "UnknownTier",
                EvidenceError::DegenerateNode(_) => "DegenerateNode",
                EvidenceError::AmbiguousPayloadFromLowTier { .. } => "AmbiguousPayloadFromLowTier",
                EvidenceError::InvalidPayload { .. } => "InvalidPayload",
                EvidenceError::ZeroPriorState { .. } => "ZeroPriorState",
                EvidenceError::InvalidReliability(_) => "InvalidReliability",
                EvidenceError::InvalidTheta(_) => "InvalidTheta",
            },
            Self::Inference(e) => match e {
                BnError::ZeroProbabilityEvidence => "ZeroProbabilityEvidence",
                BnError::UnknownNode(_) => "UnknownNode",
                BnError::InvalidState { .. } => "UnknownState",
                BnError::InvalidLikelihood { .. } => "InvalidPayload",
                _ => "InferenceError",
            },
            Self::Spatial(e) => match e {
                SpatialError::DuplicateAreaId(_) => "DuplicateAreaId",
                SpatialError::InvalidGeometry { .. } => "InvalidGeometry",
                _ => "SpatialError",
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Marginals of the tracked nodes of one area after one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshot {
    /// Engine-wide, strictly increasing.
    pub seq: u64,
    /// Per area, gap-free from 0.
    pub area_seq: u64,
    /// `None` for the initial prior snapshot.
    pub time: Option<DateTime<Utc>>,
    pub area_id: String,
    pub marginals: BTreeMap<String, Distribution>,
    /// Id of the observation that caused the update.
    pub trigger: Option<String>,
}

/// An observation that was not applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub observation_id: String,
    pub time: DateTime<Utc>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Timeline {
    pub snapshots: Vec<BeliefSnapshot>,
    pub rejections: Vec<Rejection>,
}

/// Engine settings that are not part of the network itself.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub reliability: ReliabilityTable,
    pub policy: RegretPolicy,
    /// Nodes recorded in snapshots besides the key nodes.
    pub tracked_nodes: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub struct EngineState {
    net: Arc<ValidatedNetwork>,
    reliability: ReliabilityTable,
    policy: RegretPolicy,
    priors: BTreeMap<String, Distribution>,
    tracked: BTreeSet<String>,
    area_order: Vec<String>,
    areas: BTreeMap<String, AreaState>,
    area_seq: BTreeMap<String, u64>,
    timeline: Vec<BeliefSnapshot>,
    rejections: Vec<Rejection>,
    next_seq: u64,
    halted: bool,
    last_time: Option<DateTime<Utc>>,
}

impl EngineState {
    /// Fresh engine with one empty evidence state and one prior snapshot per area.
    pub fn new(net: Arc<ValidatedNetwork>, areas: &[Area], config: EngineConfig) -> Result<Self> {
        for n in &config.tracked_nodes {
            if net.node(n).is_none() {
                return Err(BnError::UnknownNode(n.clone()).into());
            }
        }
        let mut tracked = config.tracked_nodes;
        tracked.extend(net.key_nodes().map(str::to_string));

        let priors = net
            .query_all(&BTreeMap::new(), &[])?
            .into_iter()
            .map(|d| (d.node.clone(), d))
            .collect();

        let mut engine = Self {
            areas: instantiate_areas(&net, areas)?,
            net,
            reliability: config.reliability,
            policy: config.policy,
            priors,
            tracked,
            area_order: areas.iter().map(|a| a.id.clone()).collect(),
            area_seq: BTreeMap::new(),
            timeline: Vec::new(),
            rejections: Vec::new(),
            next_seq: 0,
            halted: false,
            last_time: None,
        };
        for id in engine.area_order.clone() {
            let marginals = engine.marginals(&engine.areas[&id])?;
            engine.record(&id, None, marginals, None);
        }
        Ok(engine)
    }

    pub fn network(&self) -> &Arc<ValidatedNetwork> {
        &self.net
    }

    pub fn reliability(&self) -> &ReliabilityTable {
        &self.reliability
    }

    pub fn policy(&self) -> RegretPolicy {
        self.policy
    }

    /// Marginals of every node with no evidence at all.
    pub fn original_priors(&self) -> &BTreeMap<String, Distribution> {
        &self.priors
    }

    /// Nodes whose marginals appear in snapshots.
    pub fn tracked_nodes(&self) -> &BTreeSet<String> {
        &self.tracked
    }

    /// Area ids in declaration order.
    pub fn area_ids(&self) -> &[String] {
        &self.area_order
    }

    pub fn areas(&self) -> &BTreeMap<String, AreaState> {
        &self.areas
    }

    pub fn area(&self, id: &str) -> Result<&AreaState> {
        self.areas
            .get(id)
            .ok_or_else(|| PipelineError::UnknownArea(id.to_string()))
    }

    pub fn timeline(&self) -> &[BeliefSnapshot] {
        &self.timeline
    }

    pub fn rejections(&self) -> &[Rejection] {
        &self.rejections
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Highest seq issued so far.
    pub fn last_seq(&self) -> Option<u64> {
        self.next_seq.checked_sub(1)
    }

    /// Snapshots of one area, oldest first.
    pub fn area_timeline(&self, id: &str) -> Result<Vec<&BeliefSnapshot>> {
        self.area(id)?;
        Ok(self.timeline.iter().filter(|s| s.area_id == id).collect())
    }

    /// The state of the map as of `seq`: the latest snapshot of each area
    /// with a seq not above it, in area declaration order.
    pub fn snapshots_at(&self, seq: u64) -> Vec<&BeliefSnapshot> {
        let mut latest: BTreeMap<&str, &BeliefSnapshot> = BTreeMap::new();
        for s in self.timeline.iter().take_while(|s| s.seq <= seq) {
            latest.insert(&s.area_id, s);
        }
        self.area_order
            .iter()
            .filter_map(|id| latest.get(id.as_str()).copied())
            .collect()
    }

    /// Marginals of all nodes under the area's evidence.
    pub fn current_beliefs(&self, id: &str) -> Result<BTreeMap<String, Distribution>> {
        Ok(self
            .area(id)?
            .posteriors(&self.net)?
            .into_iter()
            .map(|d| (d.node.clone(), d))
            .collect())
    }

    /// Apply one observation. Returns one snapshot per addressed area; on
    /// error nothing changes.
    pub fn ingest(&mut self, obs: &Observation) -> Result<Vec<BeliefSnapshot>> {
        if self.halted {
            return Err(PipelineError::EngineHalted);
        }
        let targets = self.resolve_location(&obs.location)?;
        let evidence = classify(obs, &self.reliability, &self.net, self.policy)?;

        let mut staged = Vec::with_capacity(targets.len());
        for id in targets {
            let mut st = self.areas[&id].clone();
            match &evidence.kind {
                EvidenceKind::Hard(state) => {
                    if let Some(recorded) = st.hard().get(&evidence.node) {
                        if recorded != state {
                            let err = PipelineError::HardEvidenceConflict {
                                area: id,
                                node: evidence.node.clone(),
                                recorded: recorded.clone(),
                                observed: state.clone(),
                            };
                            log::warn!("observation `{}` rejected: {err}", obs.id);
                            return Err(err);
                        }
                    }
                    st.set_hard(&evidence.node, state);
                }
                EvidenceKind::Virtual(likelihood) => st.push_virtual(VirtualRecord {
                    node: evidence.node.clone(),
                    likelihood: likelihood.clone(),
                    origin: obs.id.clone(),
                }),
                EvidenceKind::Soft(lambda) => {
                    let likelihood = soft_to_virtual(lambda, &self.priors[&evidence.node])?;
                    let replaced = st.set_soft(
                        &evidence.node,
                        SoftOverride {
                            lambda: lambda.clone(),
                            likelihood,
                            origin: obs.id.clone(),
                        },
                    );
                    if let Some(old) = replaced {
                        log::info!(
                            "area `{id}`: soft evidence on `{}` from `{}` replaced by `{}`",
                            evidence.node,
                            old.origin,
                            obs.id
                        );
                    }
                }
            }
            let marginals = self.marginals(&st)?;
            staged.push((id, st, marginals));
        }

        if let Some(last) = self.last_time {
            if obs.time < last {
                log::warn!(
                    "observation `{}` at {} arrived after {}",
                    obs.id,
                    obs.time,
                    last
                );
            }
        }
        self.last_time = Some(self.last_time.map_or(obs.time, |t| t.max(obs.time)));

        let mut out = Vec::with_capacity(staged.len());
        for (id, st, marginals) in staged {
            self.areas.insert(id.clone(), st);
            out.push(self.record(&id, Some(obs.time), marginals, Some(obs.id.clone())));
        }
        self.halted = self.stop_condition();
        if self.halted {
            log::info!("every key node is confirmed in every area; engine halted");
        }
        Ok(out)
    }

    /// [`ingest`](Self::ingest), recording a failure as a rejection instead
    /// of returning it.
    pub fn ingest_or_reject(
        &mut self,
        obs: &Observation,
    ) -> std::result::Result<Vec<BeliefSnapshot>, Rejection> {
        self.ingest(obs).map_err(|e| {
            log::warn!("observation `{}` rejected: {e}", obs.id);
            let r = Rejection {
                observation_id: obs.id.clone(),
                time: obs.time,
                code: e.code().to_string(),
                message: e.to_string(),
            };
            self.rejections.push(r.clone());
            r
        })
    }

    /// Fold [`ingest`](Self::ingest) over the observations sorted by
    /// `(time, id)`. Failures are recorded and skipped.
    pub fn replay(&mut self, observations: &[Observation]) -> Timeline {
        self.replay_with(observations, |_, _| {})
    }

    /// Like [`replay`](Self::replay), calling `on_step` after the last
    /// observation of every distinct timestamp.
    pub fn replay_with<F>(&mut self, observations: &[Observation], mut on_step: F) -> Timeline
    where
        F: FnMut(&EngineState, DateTime<Utc>),
    {
        let mut sorted: Vec<&Observation> = observations.iter().collect();
        sorted.sort_by(|a, b| (a.time, &a.id).cmp(&(b.time, &b.id)));
        for (i, obs) in sorted.iter().enumerate() {
            let _ = self.ingest_or_reject(obs);
            if sorted.get(i + 1).is_none_or(|next| next.time != obs.time) {
                on_step(self, obs.time);
            }
        }
        Timeline {
            snapshots: self.timeline.clone(),
            rejections: self.rejections.clone(),
        }
    }

    fn resolve_location(&self, location: &Location) -> Result<Vec<String>> {
        match location {
            Location::All => Ok(self.area_order.clone()),
            Location::Areas(ids) => {
                let mut seen = BTreeSet::new();
                let mut out = Vec::new();
                for id in ids {
                    if !self.areas.contains_key(id) {
                        return Err(PipelineError::UnknownArea(id.clone()));
                    }
                    if seen.insert(id) {
                        out.push(id.clone());
                    }
                }
                Ok(out)
            }
        }
    }

    fn marginals(&self, st: &AreaState) -> Result<BTreeMap<String, Distribution>> {
        self.tracked
            .iter()
            .map(|n| Ok((n.clone(), st.posterior(&self.net, n)?)))
            .collect()
    }

    fn record(
        &mut self,
        area: &str,
        time: Option<DateTime<Utc>>,
        marginals: BTreeMap<String, Distribution>,
        trigger: Option<String>,
    ) -> BeliefSnapshot {
        let area_seq = self.area_seq.entry(area.to_string()).or_insert(0);
        let snap = BeliefSnapshot {
            seq: self.next_seq,
            area_seq: *area_seq,
            time,
            area_id: area.to_string(),
            marginals,
            trigger,
        };
        *area_seq += 1;
        self.next_seq += 1;
        self.timeline.push(snap.clone());
        snap
    }

    fn stop_condition(&self) -> bool {
        let keys: Vec<&str> = self.net.key_nodes().collect();
        !keys.is_empty()
            && !self.areas.is_empty()
            && self
                .areas
                .values()
                .all(|st| keys.iter().all(|k| st.confirmed().contains(*k)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bn::{CptRow, CptTable, NetworkSpec, NodeSpec};
    use crate::observation::{Payload, Tier};
    use crate::spatial::Polygon;

    fn node(id: &str, parents: &[&str], rows: Vec<(Vec<&str>, Vec<f64>)>) -> NodeSpec {
        NodeSpec {
            id: id.into(),
            states: vec!["True".into(), "False".into()],
            table: CptTable {
                parents: parents.iter().map(|s| s.to_string()).collect(),
                rows: rows
                    .into_iter()
                    .map(|(g, p)| CptRow {
                        given: g.into_iter().map(String::from).collect(),
                        probs: p,
                    })
                    .collect(),
            },
            critical_states: vec!["True".into()],
        }
    }

    fn engine(area_ids: &[&str]) -> EngineState {
        let spec = NetworkSpec {
            nodes: vec![
                node("Gas", &[], vec![(vec![], vec![0.1, 0.9])]),
                node(
                    "Hurt",
                    &["Gas"],
                    vec![
                        (vec!["True"], vec![0.7, 0.3]),
                        (vec!["False"], vec![0.01, 0.99]),
                    ],
                ),
            ],
            edges: vec![("Gas".into(), "Hurt".into())],
            key_nodes: BTreeSet::from(["Hurt".to_string()]),
        };
        let areas: Vec<Area> = area_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let x = i as f64 * 10.0;
                Area {
                    id: id.to_string(),
                    footprint: Polygon::new(vec![
                        [x, 0.0],
                        [x + 5.0, 0.0],
                        [x + 5.0, 5.0],
                        [x, 5.0],
                    ])
                    .unwrap(),
                    attributes: BTreeMap::new(),
                }
            })
            .collect();
        let reliability = ReliabilityTable::from_likelihoods(&BTreeMap::from([
            (Tier::RS1, 0.7),
            (Tier::RS2, 0.8),
            (Tier::RS3, 1.0),
        ]))
        .unwrap();
        EngineState::new(
            Arc::new(ValidatedNetwork::build(spec).unwrap()),
            &areas,
            EngineConfig {
                reliability,
                policy: RegretPolicy::new(0.1).unwrap(),
                tracked_nodes: BTreeSet::from(["Gas".to_string()]),
            },
        )
        .unwrap()
    }

    fn obs(
        id: &str,
        minute: u32,
        areas: &[&str],
        node: &str,
        tier: Tier,
        payload: Payload,
    ) -> Observation {
        Observation {
            id: id.into(),
            time: format!("2024-05-14T00:{minute:02}:00Z").parse().unwrap(),
            location: Location::areas(areas.iter().copied()),
            node: node.into(),
            tier,
            payload,
            source: String::new(),
        }
    }

    fn state(s: &str) -> Payload {
        Payload::State(s.into())
    }

    #[test]
    fn fresh_engine_has_one_prior_snapshot_per_area() {
        let e = engine(&["a", "b", "c"]);
        assert_eq!(e.timeline().len(), 3);
        for (i, s) in e.timeline().iter().enumerate() {
            assert_eq!(s.seq, i as u64);
            assert_eq!(s.area_seq, 0);
            assert_eq!(s.time, None);
            assert_eq!(s.trigger, None);
            assert_eq!(s.marginals["Gas"].probs, vec![0.1, 0.9]);
            assert_eq!(s.marginals.len(), 2);
        }
        assert_eq!(e.current_beliefs("b").unwrap()["Gas"].probs, vec![0.1, 0.9]);
    }

    #[test]
    fn unknown_area_changes_nothing() {
        let mut e = engine(&["a", "b"]);
        let before = e.timeline().to_vec();
        let err = e
            .ingest(&obs("x", 0, &["a", "99"], "Gas", Tier::RS3, state("True")))
            .unwrap_err();
        assert_eq!(err, PipelineError::UnknownArea("99".into()));
        assert_eq!(err.code(), "UnknownArea");
        assert_eq!(e.timeline(), before.as_slice());
        assert!(e.area("a").unwrap().is_empty());
    }

    #[test]
    fn multi_area_observation_emits_one_snapshot_each() {
        let mut e = engine(&["a", "b", "c"]);
        let snaps = e
            .ingest(&obs(
                "o1",
                0,
                &["c", "a", "c"],
                "Gas",
                Tier::RS2,
                state("True"),
            ))
            .unwrap();
        assert_eq!(
            snaps.iter().map(|s| s.area_id.as_str()).collect::<Vec<_>>(),
            ["c", "a"]
        );
        assert!(snaps
            .iter()
            .all(|s| s.area_seq == 1 && s.trigger.as_deref() == Some("o1")));
        assert!(e.area("b").unwrap().is_empty());

        let all = e
            .ingest(&Observation {
                location: Location::All,
                ..obs("o2", 1, &[], "Gas", Tier::RS1, state("False"))
            })
            .unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(e.last_seq(), Some(7));
    }

    #[test]
    fn repeated_hard_is_idempotent_and_conflict_is_rejected() {
        let mut e = engine(&["a"]);
        let first = e
            .ingest(&obs("h1", 0, &["a"], "Gas", Tier::RS3, state("True")))
            .unwrap();
        let again = e
            .ingest(&obs("h2", 1, &["a"], "Gas", Tier::RS3, state("True")))
            .unwrap();
        assert_eq!(first[0].marginals, again[0].marginals);
        assert_eq!(again[0].area_seq, 2);

        let err = e
            .ingest(&obs("h3", 2, &["a"], "Gas", Tier::RS3, state("False")))
            .unwrap_err();
        assert_eq!(err.code(), "HardEvidenceConflict");
        assert_eq!(e.area("a").unwrap().hard()["Gas"], "True");
    }

    #[test]
    fn soft_evidence_is_exact_and_last_one_wins() {
        let mut e = engine(&["a"]);
        e.ingest(&obs(
            "s1",
            0,
            &["a"],
            "Gas",
            Tier::RS3,
            Payload::ProbRatio(vec![0.8, 0.2]),
        ))
        .unwrap();
        let gas = &e.current_beliefs("a").unwrap()["Gas"];
        assert!((gas.probs[0] - 0.8).abs() < 1e-12);

        let snaps = e
            .ingest(&obs(
                "s2",
                1,
                &["a"],
                "Gas",
                Tier::RS3,
                Payload::ProbRatio(vec![0.3, 0.7]),
            ))
            .unwrap();
        assert!((snaps[0].marginals["Gas"].probs[0] - 0.3).abs() < 1e-12);
        assert_eq!(e.area("a").unwrap().soft_overrides()["Gas"].origin, "s2");
    }

    #[test]
    fn halts_once_key_nodes_confirmed_everywhere() {
        let mut e = engine(&["a", "b"]);
        e.ingest(&obs("k1", 0, &["a"], "Hurt", Tier::RS3, state("False")))
            .unwrap();
        assert!(!e.is_halted());
        e.ingest(&obs("k2", 1, &["b"], "Gas", Tier::RS3, state("True")))
            .unwrap();
        assert!(!e.is_halted());
        e.ingest(&obs("k3", 2, &["b"], "Hurt", Tier::RS3, state("True")))
            .unwrap();
        assert!(e.is_halted());
        let err = e
            .ingest(&obs("k4", 3, &["a"], "Gas", Tier::RS1, state("True")))
            .unwrap_err();
        assert_eq!(err, PipelineError::EngineHalted);
    }

    #[test]
    fn impossible_evidence_is_rejected_atomically() {
        let mut e = engine(&["a"]);
        e.ingest(&obs("z1", 0, &["a"], "Gas", Tier::RS3, state("True")))
            .unwrap();
        let err = e
            .ingest(&obs(
                "z2",
                1,
                &["a"],
                "Gas",
                Tier::RS3,
                Payload::LikelihoodRatio(vec![0.0, 1.0]),
            ))
            .unwrap_err();
        assert_eq!(err.code(), "ZeroProbabilityEvidence");
        assert!(e.area("a").unwrap().virtuals().is_empty());
    }

    #[test]
    fn replay_sorts_and_records_rejections() {
        let mut e = engine(&["a", "b"]);
        let script = vec![
            obs("2", 5, &["a"], "Gas", Tier::RS2, state("True")),
            obs("1", 5, &["b"], "Gas", Tier::RS2, state("True")),
            obs(
                "0",
                0,
                &["a"],
                "Gas",
                Tier::RS1,
                Payload::ProbRatio(vec![0.5, 0.5]),
            ),
            obs("3", 9, &["nowhere"], "Gas", Tier::RS3, state("True")),
        ];
        let mut steps = Vec::new();
        let tl = e.replay_with(&script, |eng, t| steps.push((t, eng.last_seq())));
        let triggers: Vec<_> = tl
            .snapshots
            .iter()
            .skip(2)
            .map(|s| s.trigger.clone().unwrap())
            .collect();
        assert_eq!(triggers, ["1", "2"]);
        assert_eq!(tl.rejections.len(), 2);
        assert_eq!(tl.rejections[0].code, "AmbiguousPayloadFromLowTier");
        assert_eq!(tl.rejections[1].code, "UnknownArea");
        assert_eq!(steps.len(), 3);
        assert_eq!(steps[1].1, Some(3));
    }

    #[test]
    fn empty_replay_keeps_only_priors() {
        let mut e = engine(&["a", "b"]);
        let tl = e.replay(&[]);
        assert_eq!(tl.snapshots.len(), 2);
        assert!(tl.rejections.is_empty());
    }

    #[test]
    fn snapshots_at_reconstructs_history() {
        let mut e = engine(&["a", "b"]);
        e.ingest(&obs("o1", 0, &["a"], "Gas", Tier::RS2, state("True")))
            .unwrap();
        e.ingest(&obs("o2", 1, &["b"], "Gas", Tier::RS2, state("True")))
            .unwrap();
        let at2 = e.snapshots_at(2);
        assert_eq!(at2.iter().map(|s| s.seq).collect::<Vec<_>>(), [2, 1]);
        let at0 = e.snapshots_at(0);
        assert_eq!(at0.len(), 1);
        assert_eq!(e.area_timeline("a").unwrap().len(), 2);
        assert!(e.area_timeline("zz").is_err());
    }
}
