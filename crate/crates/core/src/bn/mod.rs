//! Discrete Bayesian networks: declarative specs, structural validation and
//! exact posterior queries.
//!
//! A [`NetworkSpec`] is the serializable description of a network (it is what
//! `network.json` in a scenario bundle contains). [`ValidatedNetwork::build`]
//! checks it and produces an immutable, queryable network. Queries condition on
//! two kinds of findings:
//!
//! * hard evidence, a node fixed to one of its states;
//! * likelihood vectors attached to a node, each equivalent to a binary child
//!   whose CPT column is the vector and which is observed `True`.
//!
//! [`ValidatedNetwork::query`] runs variable elimination;
//! [`ValidatedNetwork::enumerate_joint`] sums the full joint and exists only as
//! an independent check on it.

mod enumerate;
mod factor;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for a probability vector to count as normalized.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Normalizing totals below this are treated as an impossible evidence configuration.
pub const MIN_TOTAL: f64 = 1e-300;

/// Largest joint state space `enumerate_joint` will walk.
pub const MAX_ENUMERATION: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BnError {
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("node `{node}`: {reason}")]
    InvalidNode { node: String, reason: String },

    #[error("edge {parent} -> {child} references an undeclared node")]
    DanglingEdge { parent: String, child: String },

    #[error("cycle detected through node `{node}`")]
    CycleDetected { node: String },

    #[error("malformed table on node `{node}`: {reason}")]
    MalformedTable { node: String, reason: String },

    #[error("key node `{0}` is not declared")]
    UnknownKeyNode(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{node}` has no state `{state}`")]
    InvalidState { node: String, state: String },

    #[error("invalid likelihood vector on node `{node}`: {reason}")]
    InvalidLikelihood { node: String, reason: String },

    #[error("evidence has zero joint probability")]
    ZeroProbabilityEvidence,

    #[error("joint state space of {size} configurations exceeds the enumeration limit")]
    StateSpaceTooLarge { size: u128 },
}

pub type Result<T> = std::result::Result<T, BnError>;

/// Serializable network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeSpec>,
    /// `(parent, child)` pairs.
    #[serde(default)]
    pub edges: Vec<(String, String)>,
    #[serde(default)]
    pub key_nodes: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub states: Vec<String>,
    pub table: CptTable,
    /// States that are worse than the others; drives the precautionary boost
    /// applied to unreliable reports.
    #[serde(default)]
    pub critical_states: Vec<String>,
}

/// Conditional probability table. With no parents it is the node's marginal
/// table and holds a single row with an empty `given`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptTable {
    #[serde(default)]
    pub parents: Vec<String>,
    pub rows: Vec<CptRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptRow {
    /// One state name per entry of `CptTable::parents`, in the same order.
    #[serde(default)]
    pub given: Vec<String>,
    pub probs: Vec<f64>,
}

/// A posterior (or prior) marginal, aligned to the node's declared state order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub node: String,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn prob(&self, state_index: usize) -> f64 {
        self.probs[state_index]
    }
}

/// A node of a validated network.
#[derive(Debug, Clone)]
pub struct Node {
    id: String,
    states: Vec<String>,
    parents: Vec<usize>,
    critical: Vec<usize>,
    /// Row-major over parent configurations (first parent slowest), own state fastest.
    cpt: Vec<f64>,
}

impl Node {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    /// Indices of the parent nodes, in table order.
    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    /// Indices of the critical states, ascending.
    pub fn critical_states(&self) -> &[usize] {
        &self.critical
    }

    pub fn is_critical(&self, state: usize) -> bool {
        self.critical.contains(&state)
    }

    pub fn state_index(&self, state: &str) -> Option<usize> {
        self.states.iter().position(|s| s == state)
    }

    /// `P(self = state | parents = config)`, where `config` is the row index
    /// returned by [`ValidatedNetwork::parent_config`].
    pub fn cpt_entry(&self, config: usize, state: usize) -> f64 {
        self.cpt[config * self.states.len() + state]
    }
}

/// Immutable network that passed every structural and numerical check.
#[derive(Debug, Clone)]
pub struct ValidatedNetwork {
    spec: NetworkSpec,
    nodes: Vec<Node>,
    index: BTreeMap<String, usize>,
    topo: Vec<usize>,
    key_nodes: Vec<usize>,
}

/// Findings resolved against a network: at most one hard state per node and
/// the elementwise product of the likelihood vectors attached to it.
#[derive(Debug, Clone)]
pub(crate) struct Findings {
    pub(crate) hard: Vec<Option<usize>>,
    pub(crate) local: Vec<Option<Vec<f64>>>,
}

impl Findings {
    /// Weight of `state` on `node` from hard evidence and likelihoods.
    pub(crate) fn weight(&self, node: usize, state: usize) -> f64 {
        if let Some(h) = self.hard[node] {
            if h != state {
                return 0.0;
            }
        }
        match &self.local[node] {
            Some(v) => v[state],
            None => 1.0,
        }
    }

    pub(crate) fn touches(&self, node: usize) -> bool {
        self.hard[node].is_some() || self.local[node].is_some()
    }
}

impl ValidatedNetwork {
    pub fn build(spec: NetworkSpec) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, n) in spec.nodes.iter().enumerate() {
            if index.insert(n.id.clone(), i).is_some() {
                return Err(BnError::DuplicateNode(n.id.clone()));
            }
        }

        for (parent, child) in &spec.edges {
            if !index.contains_key(parent) || !index.contains_key(child) {
                return Err(BnError::DanglingEdge {
                    parent: parent.clone(),
                    child: child.clone(),
                });
            }
        }

        let mut nodes = Vec::with_capacity(spec.nodes.len());
        for n in &spec.nodes {
            nodes.push(check_node(n, &spec, &index)?);
        }

        let topo = topological_order(&nodes)?;

        let mut key_nodes = Vec::new();
        for k in &spec.key_nodes {
            match index.get(k) {
                Some(&i) => key_nodes.push(i),
                None => return Err(BnError::UnknownKeyNode(k.clone())),
            }
        }

        Ok(Self {
            spec,
            nodes,
            index,
            topo,
            key_nodes,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn node_at(&self, index: usize) -> &Node {
        &self.nodes[index]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node indices in a topological order (parents first).
    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Key node ids, sorted.
    pub fn key_nodes(&self) -> impl Iterator<Item = &str> {
        self.key_nodes.iter().map(|&i| self.nodes[i].id.as_str())
    }

    /// Row index into `node`'s CPT for a full assignment of the network.
    pub fn parent_config(&self, node: usize, assignment: &[usize]) -> usize {
        let mut config = 0;
        for &p in &self.nodes[node].parents {
            config = config * self.nodes[p].cardinality() + assignment[p];
        }
        config
    }

    /// Exact posterior marginal of `target` by variable elimination.
    pub fn query(
        &self,
        target: &str,
        hard: &BTreeMap<String, String>,
        likelihoods: &[(String, Vec<f64>)],
    ) -> Result<Distribution> {
        let t = self.require(target)?;
        let findings = self.resolve(hard, likelihoods)?;
        let probs = factor::eliminate(self, t, &findings)?;
        Ok(Distribution {
            node: target.to_string(),
            probs,
        })
    }

    /// Posterior marginals of every node, in declaration order.
    pub fn query_all(
        &self,
        hard: &BTreeMap<String, String>,
        likelihoods: &[(String, Vec<f64>)],
    ) -> Result<Vec<Distribution>> {
        let findings = self.resolve(hard, likelihoods)?;
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                Ok(Distribution {
                    node: n.id.clone(),
                    probs: factor::eliminate(self, i, &findings)?,
                })
            })
            .collect()
    }

    /// Same contract as [`query`](Self::query), computed by summing the full
    /// joint distribution. Used as a test oracle.
    pub fn enumerate_joint(
        &self,
        target: &str,
        hard: &BTreeMap<String, String>,
        likelihoods: &[(String, Vec<f64>)],
    ) -> Result<Distribution> {
        let t = self.require(target)?;
        let findings = self.resolve(hard, likelihoods)?;
        let probs = enumerate::marginal(self, t, &findings)?;
        Ok(Distribution {
            node: target.to_string(),
            probs,
        })
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.node_index(id)
            .ok_or_else(|| BnError::UnknownNode(id.to_string()))
    }

    pub(crate) fn resolve(
        &self,
        hard: &BTreeMap<String, String>,
        likelihoods: &[(String, Vec<f64>)],
    ) -> Result<Findings> {
        let n = self.nodes.len();
        let mut findings = Findings {
            hard: vec![None; n],
            local: vec![None; n],
        };

        for (node, state) in hard {
            let i = self.require(node)?;
            let s = self.nodes[i]
                .state_index(state)
                .ok_or_else(|| BnError::InvalidState {
                    node: node.clone(),
                    state: state.clone(),
                })?;
            findings.hard[i] = Some(s);
        }

        for (node, values) in likelihoods {
            let i = self.require(node)?;
            check_likelihood(&self.nodes[i], values)?;
            let slot = &mut findings.local[i];
            match slot {
                Some(acc) => acc.iter_mut().zip(values).for_each(|(a, v)| *a *= v),
                None => *slot = Some(values.clone()),
            }
        }

        Ok(findings)
    }
}

fn check_likelihood(node: &Node, values: &[f64]) -> Result<()> {
    let fail = |reason: String| {
        Err(BnError::InvalidLikelihood {
            node: node.id.clone(),
            reason,
        })
    };
    if values.len() != node.cardinality() {
        return fail(format!(
            "expected {} entries, got {}",
            node.cardinality(),
            values.len()
        ));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return fail("entries must be finite and non-negative".into());
    }
    if !values.iter().any(|v| *v > 0.0) {
        return fail("at least one entry must be positive".into());
    }
    Ok(())
}

fn check_node(n: &NodeSpec, spec: &NetworkSpec, index: &BTreeMap<String, usize>) -> Result<Node> {
    let invalid = |reason: &str| BnError::InvalidNode {
        node: n.id.clone(),
        reason: reason.to_string(),
    };
    let malformed = |reason: String| BnError::MalformedTable {
        node: n.id.clone(),
        reason,
    };

    if n.states.len() < 2 {
        return Err(invalid("a node needs at least two states"));
    }
    let unique: BTreeSet<&String> = n.states.iter().collect();
    if unique.len() != n.states.len() {
        return Err(invalid("state names must be unique"));
    }

    let mut critical = Vec::new();
    for c in &n.critical_states {
        match n.states.iter().position(|s| s == c) {
            Some(i) if !critical.contains(&i) => critical.push(i),
            Some(_) => {}
            None => return Err(invalid(&format!("critical state `{c}` is not a state"))),
        }
    }
    critical.sort_unstable();

    // the table's parent list must be exactly the edges into this node
    let declared: BTreeSet<&str> = spec
        .edges
        .iter()
        .filter(|(_, c)| *c == n.id)
        .map(|(p, _)| p.as_str())
        .collect();
    let listed: BTreeSet<&str> = n.table.parents.iter().map(String::as_str).collect();
    if listed.len() != n.table.parents.len() {
        return Err(malformed("parent listed twice".into()));
    }
    if declared != listed {
        return Err(malformed(format!(
            "table parents {:?} do not match incoming edges {:?}",
            listed, declared
        )));
    }

    let parents: Vec<usize> = n.table.parents.iter().map(|p| index[p]).collect();
    let parent_states: Vec<&[String]> = parents
        .iter()
        .map(|&p| spec.nodes[p].states.as_slice())
        .collect();
    let configs: usize = parent_states.iter().map(|s| s.len()).product();
    let k = n.states.len();

    let mut cpt = vec![f64::NAN; configs * k];
    let mut seen = vec![false; configs];
    for row in &n.table.rows {
        if row.given.len() != parents.len() {
            return Err(malformed(format!(
                "row {:?} names {} parent states, expected {}",
                row.given,
                row.given.len(),
                parents.len()
            )));
        }
        let mut config = 0;
        for (given, states) in row.given.iter().zip(&parent_states) {
            let s = states.iter().position(|s| s == given).ok_or_else(|| {
                malformed(format!(
                    "row {:?}: unknown parent state `{given}`",
                    row.given
                ))
            })?;
            config = config * states.len() + s;
        }
        if seen[config] {
            return Err(malformed(format!("duplicate row {:?}", row.given)));
        }
        seen[config] = true;

        if row.probs.len() != k {
            return Err(malformed(format!(
                "row {:?} has {} probabilities, expected {k}",
                row.given,
                row.probs.len()
            )));
        }
        if row.probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(malformed(format!(
                "row {:?} has an entry outside [0, 1]",
                row.given
            )));
        }
        let sum: f64 = row.probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(malformed(format!("row {:?} sums to {sum}", row.given)));
        }
        cpt[config * k..(config + 1) * k].copy_from_slice(&row.probs);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(malformed(format!(
            "missing row for parent combination #{missing}"
        )));
    }

    Ok(Node {
        id: n.id.clone(),
        states: n.states.clone(),
        parents,
        critical,
        cpt,
    })
}

/// Kahn's algorithm; among ready nodes the lowest declaration index goes first.
fn topological_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let n = nodes.len();
    let mut indegree: Vec<usize> = nodes.iter().map(|x| x.parents.len()).collect();
    let mut children = vec![Vec::new(); n];
    for (i, x) in nodes.iter().enumerate() {
        for &p in &x.parents {
            children[p].push(i);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&i| indegree[i] > 0).unwrap();
        return Err(BnError::CycleDetected {
            node: nodes[stuck].id.clone(),
        });
    }
    Ok(order)
}

/// Divide by the sum, refusing totals that make the result meaningless.
pub(crate) fn normalize(mut values: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = values.iter().sum();
    if !(total.is_finite() && total >= MIN_TOTAL) {
        return Err(BnError::ZeroProbabilityEvidence);
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(values)
}
