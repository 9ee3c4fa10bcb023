//! Scenario bundles: a directory holding everything prepared before an
//! emergency, described by a `bundle.json` manifest.
//!
//! ```json
//! {
//!   "name": "plant site",
//!   "network": "network.json",
//!   "areas": "areas.geojson",
//!   "threat_zones": "threat_zones.geojson",
//!   "substances": "substances.json",
//!   "reliability": {"RS1": 0.7, "RS2": 0.8, "RS3": 1.0},
//!   "theta": 0.1,
//!   "layers": [{"attribute": "building_type", "node": "Building Type"}],
//!   "display": {"node": "People in Building Affected", "state": "True"},
//!   "script": "scenario1.ndjson"
//! }
//! ```
//!
//! Optional entries: `key_nodes` (replaces the network file's list),
//! `tracked_nodes`, `layers`, `display`, `hazard` and `script`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bn::{NetworkSpec, ValidatedNetwork};
use crate::evidence::{classify, RegretPolicy, ReliabilityTable};
use crate::hazard::{exposure_to_soft_evidence, Exposure, SubstanceTable};
use crate::observation::{read_script, Location, Observation, Payload, ScriptError, Tier};
use crate::pipeline::{EngineConfig, EngineState};
use crate::spatial::{self, layer_to_evidence, max_zone_overlap, Area, SpatialError, ThreatZone};

pub const MANIFEST: &str = "bundle.json";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{file}: {message}")]
    ParseError { file: String, message: String },

    #[error("{file} ({location}): {message}")]
    CrossValidationError {
        file: String,
        location: String,
        message: String,
    },

    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

impl BundleError {
    fn parse(file: &str, message: impl ToString) -> Self {
        Self::ParseError {
            file: file.to_string(),
            message: message.to_string(),
        }
    }

    fn cross(file: &str, location: impl Into<String>, message: impl ToString) -> Self {
        Self::CrossValidationError {
            file: file.to_string(),
            location: location.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BundleError>;

/// An attribute of the areas file that reports the state of a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerBinding {
    pub attribute: String,
    pub node: String,
}

/// Node and state drawn on choropleth maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplaySpec {
    pub node: String,
    pub state: String,
}

/// Node that receives dispersion-model soft evidence, and the substance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardBinding {
    pub node: String,
    pub substance: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default)]
    name: Option<String>,
    network: String,
    areas: String,
    threat_zones: String,
    substances: String,
    reliability: BTreeMap<Tier, f64>,
    theta: f64,
    #[serde(default)]
    key_nodes: Option<BTreeSet<String>>,
    #[serde(default)]
    tracked_nodes: BTreeSet<String>,
    #[serde(default)]
    layers: Vec<LayerBinding>,
    #[serde(default)]
    display: Option<DisplaySpec>,
    #[serde(default)]
    hazard: Option<HazardBinding>,
    #[serde(default)]
    script: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub root: PathBuf,
    pub name: String,
    pub network: Arc<ValidatedNetwork>,
    pub areas: Vec<Area>,
    pub threat_zones: Vec<ThreatZone>,
    pub substances: SubstanceTable,
    pub reliability: ReliabilityTable,
    pub policy: RegretPolicy,
    pub tracked_nodes: BTreeSet<String>,
    pub layers: Vec<LayerBinding>,
    pub display: DisplaySpec,
    pub hazard: Option<HazardBinding>,
    /// The bundle's own observation script, if it names one.
    pub script: Option<Vec<Observation>>,
}

fn read(root: &Path, file: &str) -> Result<String> {
    fs::read_to_string(root.join(file)).map_err(|source| BundleError::Io {
        file: file.to_string(),
        source,
    })
}

fn spatial_error(file: &str, e: SpatialError) -> BundleError {
    match e {
        SpatialError::Format(m) => BundleError::parse(file, m),
        SpatialError::InvalidGeometry { what, reason } => BundleError::cross(file, what, reason),
        SpatialError::DuplicateAreaId(id) => {
            BundleError::cross(file, format!("area `{id}`"), "duplicate area id")
        }
        other => BundleError::cross(file, "", other),
    }
}

/// Parse and cross-validate a bundle directory, returning it with a fresh
/// engine that already holds the prior snapshot of every area.
pub fn load_bundle(path: impl AsRef<Path>) -> Result<(ScenarioBundle, EngineState)> {
    let bundle = ScenarioBundle::load(path)?;
    let engine = bundle.engine()?;
    Ok((bundle, engine))
}

impl ScenarioBundle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let manifest: Manifest = serde_json::from_str(&read(&root, MANIFEST)?)
            .map_err(|e| BundleError::parse(MANIFEST, e))?;

        let mut spec: NetworkSpec = serde_json::from_str(&read(&root, &manifest.network)?)
            .map_err(|e| BundleError::parse(&manifest.network, e))?;
        if let Some(keys) = &manifest.key_nodes {
            spec.key_nodes = keys.clone();
        }
        let network = ValidatedNetwork::build(spec).map_err(|e| {
            let file = if matches!(e, crate::bn::BnError::UnknownKeyNode(_))
                && manifest.key_nodes.is_some()
            {
                MANIFEST
            } else {
                &manifest.network
            };
            BundleError::cross(file, "network", e)
        })?;

        let areas = spatial::read_areas(&read(&root, &manifest.areas)?)
            .map_err(|e| spatial_error(&manifest.areas, e))?;
        let mut seen = BTreeSet::new();
        for a in &areas {
            if !seen.insert(&a.id) {
                return Err(spatial_error(
                    &manifest.areas,
                    SpatialError::DuplicateAreaId(a.id.clone()),
                ));
            }
        }
        let threat_zones = spatial::read_threat_zones(&read(&root, &manifest.threat_zones)?)
            .map_err(|e| spatial_error(&manifest.threat_zones, e))?;
        let substances = SubstanceTable::from_json(&read(&root, &manifest.substances)?)
            .map_err(|e| BundleError::parse(&manifest.substances, e))?;

        let reliability = ReliabilityTable::from_likelihoods(&manifest.reliability)
            .map_err(|e| BundleError::cross(MANIFEST, "reliability", e))?;
        let policy = RegretPolicy::new(manifest.theta)
            .map_err(|e| BundleError::cross(MANIFEST, "theta", e))?;

        for n in &manifest.tracked_nodes {
            if network.node(n).is_none() {
                return Err(BundleError::cross(
                    MANIFEST,
                    "tracked_nodes",
                    format!("unknown node `{n}`"),
                ));
            }
        }

        for (i, layer) in manifest.layers.iter().enumerate() {
            if network.node(&layer.node).is_none() {
                return Err(BundleError::cross(
                    MANIFEST,
                    format!("layers[{i}]"),
                    format!("unknown node `{}`", layer.node),
                ));
            }
            for area in &areas {
                layer_to_evidence(
                    area,
                    &layer.attribute,
                    &layer.node,
                    &network,
                    DateTime::<Utc>::UNIX_EPOCH,
                )
                .map_err(|e| {
                    BundleError::cross(
                        &manifest.areas,
                        format!("area `{}`, property `{}`", area.id, layer.attribute),
                        e,
                    )
                })?;
            }
        }

        let display = match manifest.display {
            Some(d) => d,
            None => default_display(&network).ok_or_else(|| {
                BundleError::cross(
                    MANIFEST,
                    "display",
                    "no display entry and the network has no key node",
                )
            })?,
        };
        let known = network
            .node(&display.node)
            .map(|n| n.state_index(&display.state).is_some());
        if known != Some(true) {
            return Err(BundleError::cross(
                MANIFEST,
                "display",
                format!(
                    "`{}` = `{}` is not a node state",
                    display.node, display.state
                ),
            ));
        }

        if let Some(h) = &manifest.hazard {
            let binary = network
                .node(&h.node)
                .map(|n| n.cardinality() == 2 && n.critical_states().len() == 1);
            if binary != Some(true) {
                return Err(BundleError::cross(
                    MANIFEST,
                    "hazard",
                    format!("`{}` must be a binary node with one critical state", h.node),
                ));
            }
            substances
                .get(&h.substance)
                .map_err(|e| BundleError::cross(MANIFEST, "hazard", e))?;
        }

        let mut bundle = Self {
            root: root.clone(),
            name: manifest.name.unwrap_or_else(|| {
                root.file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            }),
            network: Arc::new(network),
            areas,
            threat_zones,
            substances,
            reliability,
            policy,
            tracked_nodes: manifest.tracked_nodes,
            layers: manifest.layers,
            display,
            hazard: manifest.hazard,
            script: None,
        };
        if let Some(file) = &manifest.script {
            let observations = read_script_file(&root.join(file), file)?;
            bundle.validate_script(&observations, file)?;
            bundle.script = Some(observations);
        }
        Ok(bundle)
    }

    /// Fresh engine for this bundle.
    pub fn engine(&self) -> Result<EngineState> {
        EngineState::new(
            self.network.clone(),
            &self.areas,
            EngineConfig {
                reliability: self.reliability.clone(),
                policy: self.policy,
                tracked_nodes: self.tracked_nodes.clone(),
            },
        )
        .map_err(|e| BundleError::cross(MANIFEST, "engine", e))
    }

    pub fn area_ids(&self) -> impl Iterator<Item = &str> {
        self.areas.iter().map(|a| a.id.as_str())
    }

    /// Checks that every observation names known areas, nodes and states and
    /// carries a payload its tier may send.
    pub fn validate_script(&self, observations: &[Observation], file: &str) -> Result<()> {
        let ids: BTreeSet<&str> = self.area_ids().collect();
        let mut seen = BTreeSet::new();
        for (i, obs) in observations.iter().enumerate() {
            let location = format!("observation #{} `{}`", i + 1, obs.id);
            if !seen.insert(&obs.id) {
                return Err(BundleError::cross(
                    file,
                    location,
                    "duplicate observation id",
                ));
            }
            if let Location::Areas(list) = &obs.location {
                if let Some(bad) = list.iter().find(|a| !ids.contains(a.as_str())) {
                    return Err(BundleError::cross(
                        file,
                        location,
                        format!("unknown area `{bad}`"),
                    ));
                }
            }
            classify(obs, &self.reliability, &self.network, self.policy)
                .map_err(|e| BundleError::cross(file, location, e))?;
        }
        Ok(())
    }

    /// One tier-3 observation per area and attribute layer.
    pub fn layer_observations(&self, time: DateTime<Utc>) -> Result<Vec<Observation>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for area in &self.areas {
                let obs =
                    layer_to_evidence(area, &layer.attribute, &layer.node, &self.network, time)
                        .map_err(|e| BundleError::cross(MANIFEST, "layers", e))?;
                out.push(obs);
            }
        }
        Ok(out)
    }

    /// Soft evidence from the threat zones for every area inside one,
    /// assuming exposure to the highest overlapping concentration for
    /// `minutes`.
    pub fn simulation_observations(
        &self,
        minutes: f64,
        time: DateTime<Utc>,
    ) -> Result<Vec<Observation>> {
        let hazard = self
            .hazard
            .as_ref()
            .ok_or_else(|| BundleError::cross(MANIFEST, "hazard", "bundle has no hazard entry"))?;
        let params = self
            .substances
            .get(&hazard.substance)
            .map_err(|e| BundleError::cross(MANIFEST, "hazard", e))?;
        let node = self.network.node(&hazard.node).expect("checked on load");
        let critical = node.critical_states()[0];

        let mut out = Vec::new();
        for area in &self.areas {
            let Some(ppm) = max_zone_overlap(area, &self.threat_zones) else {
                continue;
            };
            let exposure = Exposure::new(ppm, minutes)
                .map_err(|e| BundleError::cross(MANIFEST, "hazard", e))?;
            let [q, rest] = exposure_to_soft_evidence(exposure, params)
                .map_err(|e| BundleError::cross(MANIFEST, "hazard", e))?;
            let mut lambda = vec![rest; 2];
            lambda[critical] = q;
            out.push(Observation {
                id: format!("simulation:{}", area.id),
                time,
                location: Location::Areas(vec![area.id.clone()]),
                node: hazard.node.clone(),
                tier: Tier::RS3,
                payload: Payload::ProbRatio(lambda),
                source: format!("dispersion model, {ppm} ppm for {minutes} min"),
            });
        }
        Ok(out)
    }
}

fn default_display(net: &ValidatedNetwork) -> Option<DisplaySpec> {
    let node = net.node(net.key_nodes().next()?)?;
    let state = node.critical_states().first().copied().unwrap_or(0);
    Some(DisplaySpec {
        node: node.id().to_string(),
        state: node.states()[state].clone(),
    })
}

/// Reads an NDJSON observation file, reporting errors against `label`.
pub fn read_script_file(path: &Path, label: &str) -> Result<Vec<Observation>> {
    let file = fs::File::open(path).map_err(|source| BundleError::Io {
        file: label.to_string(),
        source,
    })?;
    read_script(std::io::BufReader::new(file)).map_err(|e| match e {
        ScriptError::Io(source) => BundleError::Io {
            file: label.to_string(),
            source,
        },
        parse => BundleError::parse(label, parse),
    })
}
