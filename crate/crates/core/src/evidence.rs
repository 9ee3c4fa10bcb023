//! Turning observations into findings the network can condition on.
//!
//! Three kinds of evidence come out of [`classify`]:
//!
//! * **hard**: an unambiguous report from a tier-3 source, the node is fixed;
//! * **virtual**: a likelihood ratio over the node's states, either supplied
//!   by a calibrated sensor or built from an unreliable unambiguous report by
//!   [`unambiguous_to_likelihood`];
//! * **soft**: a replacement distribution Λ for the node. It is turned into a
//!   likelihood ratio by [`soft_to_virtual`], dividing out the node's prior so
//!   that, applied alone, the posterior of the node is exactly Λ.
//!
//! Unreliable reports of a critical state get a precautionary boost Θ
//! ([`RegretPolicy`]) so that two equally reliable, contradicting reports lean
//! toward the worse outcome instead of cancelling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bn::{Distribution, Node, ValidatedNetwork, SUM_TOLERANCE};
use crate::observation::{Observation, Payload, Tier};

/// A boosted likelihood is never allowed to reach certainty.
pub const MAX_BOOSTED_LIKELIHOOD: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvidenceError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{node}` has no state `{state}`")]
    UnknownState { node: String, state: String },

    #[error("no reliability score configured for tier {0}")]
    UnknownTier(Tier),

    #[error("node `{0}` has fewer than two states")]
    DegenerateNode(String),

    #[error("{tier} sources may only report an unambiguous state")]
    AmbiguousPayloadFromLowTier { tier: Tier },

    #[error("invalid payload for node `{node}`: {reason}")]
    InvalidPayload { node: String, reason: String },

    #[error(
        "state #{state_index} of node `{node}` has zero prior but positive target probability"
    )]
    ZeroPriorState { node: String, state_index: usize },

    #[error("reliability likelihood {0} must lie in (0.5, 1]")]
    InvalidReliability(f64),

    #[error("regret boost {0} must lie in [0, 0.5)")]
    InvalidTheta(f64),
}

pub type Result<T> = std::result::Result<T, EvidenceError>;

/// Probability that an unambiguous report from a tier is correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityScore {
    pub tier: Tier,
    pub likelihood: f64,
}

impl ReliabilityScore {
    pub fn new(tier: Tier, likelihood: f64) -> Result<Self> {
        if !(likelihood > 0.5 && likelihood <= 1.0) {
            return Err(EvidenceError::InvalidReliability(likelihood));
        }
        Ok(Self { tier, likelihood })
    }
}

/// Tier → score lookup, as configured for a scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReliabilityTable {
    scores: BTreeMap<Tier, ReliabilityScore>,
}

impl ReliabilityTable {
    pub fn from_likelihoods(table: &BTreeMap<Tier, f64>) -> Result<Self> {
        let scores = table
            .iter()
            .map(|(&tier, &p)| Ok((tier, ReliabilityScore::new(tier, p)?)))
            .collect::<Result<_>>()?;
        Ok(Self { scores })
    }

    pub fn get(&self, tier: Tier) -> Result<ReliabilityScore> {
        self.scores
            .get(&tier)
            .copied()
            .ok_or(EvidenceError::UnknownTier(tier))
    }

    pub fn likelihoods(&self) -> BTreeMap<Tier, f64> {
        self.scores
            .iter()
            .map(|(t, s)| (*t, s.likelihood))
            .collect()
    }
}

/// Additive boost applied to unreliable reports of a critical state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretPolicy {
    pub theta: f64,
}

impl RegretPolicy {
    pub fn new(theta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&theta) {
            return Err(EvidenceError::InvalidTheta(theta));
        }
        Ok(Self { theta })
    }

    pub fn none() -> Self {
        Self { theta: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Hard(String),
    /// Target distribution Λ.
    Soft(Vec<f64>),
    /// Likelihood ratio L.
    Virtual(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub node: String,
    pub kind: EvidenceKind,
    /// Id of the observation this finding came from.
    pub origin: String,
}

/// Likelihood vector for an unambiguous report of `observed` from a source
/// with reliability `rs`.
///
/// The observed state gets `p = rs.likelihood` and the remaining `1 - p` is
/// spread evenly over the other states. If the node has critical states (but
/// not only critical states) and `observed` is one of them, `p` is raised by
/// the policy's Θ, capped at [`MAX_BOOSTED_LIKELIHOOD`].
pub fn unambiguous_to_likelihood(
    rs: ReliabilityScore,
    node: &Node,
    observed: &str,
    policy: RegretPolicy,
) -> Result<Vec<f64>> {
    let n = node.cardinality();
    if n < 2 {
        return Err(EvidenceError::DegenerateNode(node.id().to_string()));
    }
    let idx = node
        .state_index(observed)
        .ok_or_else(|| EvidenceError::UnknownState {
            node: node.id().to_string(),
            state: observed.to_string(),
        })?;

    let graded = !node.critical_states().is_empty() && node.critical_states().len() < n;
    let mut p = rs.likelihood;
    if graded && node.is_critical(idx) && policy.theta > 0.0 {
        p += policy.theta;
        if p > MAX_BOOSTED_LIKELIHOOD {
            log::warn!(
                "boosted likelihood {p} for `{}` = `{observed}` clipped to {MAX_BOOSTED_LIKELIHOOD}",
                node.id()
            );
            p = MAX_BOOSTED_LIKELIHOOD;
        }
    }

    let rest = (1.0 - p) / (n - 1) as f64;
    Ok((0..n).map(|i| if i == idx { p } else { rest }).collect())
}

/// Likelihood ratio that moves `prior` onto the target distribution `lambda`:
/// `normalize(lambda / prior)`.
pub fn soft_to_virtual(lambda: &[f64], prior: &Distribution) -> Result<Vec<f64>> {
    check_prob_ratio(&prior.node, lambda)?;
    if lambda.len() != prior.probs.len() {
        return Err(EvidenceError::InvalidPayload {
            node: prior.node.clone(),
            reason: format!(
                "{} target probabilities for {} states",
                lambda.len(),
                prior.probs.len()
            ),
        });
    }

    let mut ratio = Vec::with_capacity(lambda.len());
    for (i, (&l, &p)) in lambda.iter().zip(&prior.probs).enumerate() {
        if l == 0.0 {
            ratio.push(0.0);
        } else if p <= 0.0 {
            return Err(EvidenceError::ZeroPriorState {
                node: prior.node.clone(),
                state_index: i,
            });
        } else {
            ratio.push(l / p);
        }
    }
    let total: f64 = ratio.iter().sum();
    Ok(ratio.into_iter().map(|r| r / total).collect())
}

fn check_prob_ratio(node: &str, lambda: &[f64]) -> Result<()> {
    let invalid = |reason: &str| EvidenceError::InvalidPayload {
        node: node.to_string(),
        reason: reason.to_string(),
    };
    if lambda.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(invalid("probability ratio entries must lie in [0, 1]"));
    }
    let sum: f64 = lambda.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(invalid("probability ratio must sum to 1"));
    }
    Ok(())
}

fn check_likelihood_ratio(node: &Node, values: &[f64]) -> Result<()> {
    let invalid = |reason: String| EvidenceError::InvalidPayload {
        node: node.id().to_string(),
        reason,
    };
    if values.len() != node.cardinality() {
        return Err(invalid(format!(
            "{} likelihoods for {} states",
            values.len(),
            node.cardinality()
        )));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) || !values.iter().any(|v| *v > 0.0) {
        return Err(invalid(
            "likelihoods must be non-negative with at least one positive entry".into(),
        ));
    }
    Ok(())
}

/// Decide what kind of evidence an observation carries.
///
/// | tier    | payload            | result                                   |
/// |---------|--------------------|------------------------------------------|
/// | RS1/RS2 | state              | virtual, via `unambiguous_to_likelihood` |
/// | RS3     | state              | hard                                     |
/// | RS3     | probability ratio  | soft                                     |
/// | RS3     | likelihood ratio   | virtual, used as given                   |
/// | RS1/RS2 | ratio of any kind  | rejected                                 |
pub fn classify(
    obs: &Observation,
    rs_table: &ReliabilityTable,
    net: &ValidatedNetwork,
    policy: RegretPolicy,
) -> Result<Evidence> {
    let node = net
        .node(&obs.node)
        .ok_or_else(|| EvidenceError::UnknownNode(obs.node.clone()))?;
    let rs = rs_table.get(obs.tier)?;

    let kind = match (&obs.payload, obs.tier) {
        (Payload::State(state), Tier::RS3) => {
            if node.state_index(state).is_none() {
                return Err(EvidenceError::UnknownState {
                    node: obs.node.clone(),
                    state: state.clone(),
                });
            }
            EvidenceKind::Hard(state.clone())
        }
        (Payload::State(state), _) => {
            EvidenceKind::Virtual(unambiguous_to_likelihood(rs, node, state, policy)?)
        }
        (Payload::ProbRatio(lambda), Tier::RS3) => {
            if lambda.len() != node.cardinality() {
                return Err(EvidenceError::InvalidPayload {
                    node: obs.node.clone(),
                    reason: format!(
                        "{} target probabilities for {} states",
                        lambda.len(),
                        node.cardinality()
                    ),
                });
            }
            check_prob_ratio(&obs.node, lambda)?;
            EvidenceKind::Soft(lambda.clone())
        }
        (Payload::LikelihoodRatio(values), Tier::RS3) => {
            check_likelihood_ratio(node, values)?;
            EvidenceKind::Virtual(values.clone())
        }
        (_, tier) => return Err(EvidenceError::AmbiguousPayloadFromLowTier { tier }),
    };

    Ok(Evidence {
        node: obs.node.clone(),
        kind,
        origin: obs.id.clone(),
    })
}
