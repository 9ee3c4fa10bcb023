//! Areas of a site, the per-area evidence they accumulate, and the GIS side:
//! attribute layers as evidence sources, threat-zone overlap and choropleth
//! output.
//!
//! Every area is assessed with the same [`ValidatedNetwork`]; what differs is
//! the [`AreaState`], i.e. the findings entered for that area.

mod geo_io;
mod geometry;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use geojson::{Feature, FeatureCollection, Geometry, JsonObject, Value};
use serde::Serialize;
use thiserror::Error;

use crate::bn::{BnError, Distribution, ValidatedNetwork};
use crate::observation::{Location, Observation, Payload, Tier};

pub use geo_io::{read_areas, read_threat_zones};
pub use geometry::{Polygon, AREA_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("invalid geometry for {what}: {reason}")]
    InvalidGeometry { what: String, reason: String },

    #[error("duplicate area id `{0}`")]
    DuplicateAreaId(String),

    #[error("area `{area}` has no attribute `{layer}`")]
    MissingAttribute { area: String, layer: String },

    #[error("area `{area}`: `{layer}` value `{value}` is not a state of node `{node}`")]
    UnmappedAttributeValue {
        area: String,
        layer: String,
        value: String,
        node: String,
    },

    #[error("malformed GeoJSON: {0}")]
    Format(String),

    #[error(transparent)]
    Inference(#[from] BnError),
}

pub type Result<T> = std::result::Result<T, SpatialError>;

/// One independently assessed area, e.g. a building.
#[derive(Debug, Clone, PartialEq)]
pub struct Area {
    pub id: String,
    pub footprint: Polygon,
    /// Layer name → value, e.g. `building_type` → `Production`.
    pub attributes: BTreeMap<String, String>,
}

/// Polygon of constant steady-state concentration from a dispersion model.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreatZone {
    pub id: Option<String>,
    pub polygon: Polygon,
    pub concentration_ppm: f64,
}

impl ThreatZone {
    pub fn new(id: Option<String>, polygon: Polygon, concentration_ppm: f64) -> Result<Self> {
        if !(concentration_ppm > 0.0 && concentration_ppm.is_finite()) {
            return Err(SpatialError::InvalidGeometry {
                what: id.unwrap_or_else(|| "threat zone".into()),
                reason: format!("concentration must be positive, got {concentration_ppm}"),
            });
        }
        Ok(Self {
            id,
            polygon,
            concentration_ppm,
        })
    }
}

/// A likelihood vector attached to a node, standing in for a virtual child.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VirtualRecord {
    pub node: String,
    pub likelihood: Vec<f64>,
    pub origin: String,
}

/// Soft evidence currently in force on a node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftOverride {
    /// Target distribution as reported.
    pub lambda: Vec<f64>,
    /// Likelihood ratio derived from it against the node's prior.
    pub likelihood: Vec<f64>,
    pub origin: String,
}

/// Evidence accumulated for one area.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct AreaState {
    area_id: String,
    hard: BTreeMap<String, String>,
    virtuals: Vec<VirtualRecord>,
    soft_overrides: BTreeMap<String, SoftOverride>,
    confirmed: BTreeSet<String>,
}

impl AreaState {
    pub fn new(area_id: impl Into<String>) -> Self {
        Self {
            area_id: area_id.into(),
            ..Default::default()
        }
    }

    pub fn area_id(&self) -> &str {
        &self.area_id
    }

    pub fn hard(&self) -> &BTreeMap<String, String> {
        &self.hard
    }

    pub fn virtuals(&self) -> &[VirtualRecord] {
        &self.virtuals
    }

    pub fn soft_overrides(&self) -> &BTreeMap<String, SoftOverride> {
        &self.soft_overrides
    }

    /// Nodes fixed by hard evidence.
    pub fn confirmed(&self) -> &BTreeSet<String> {
        &self.confirmed
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty() && self.virtuals.is_empty() && self.soft_overrides.is_empty()
    }

    pub(crate) fn set_hard(&mut self, node: &str, state: &str) {
        self.hard.insert(node.to_string(), state.to_string());
        self.confirmed.insert(node.to_string());
    }

    pub(crate) fn push_virtual(&mut self, record: VirtualRecord) {
        self.virtuals.push(record);
    }

    /// Returns the override it replaced, if any.
    pub(crate) fn set_soft(&mut self, node: &str, soft: SoftOverride) -> Option<SoftOverride> {
        self.soft_overrides.insert(node.to_string(), soft)
    }

    /// Every likelihood vector in force: virtual records in arrival order,
    /// then soft-derived vectors by node id.
    pub fn likelihoods(&self) -> Vec<(String, Vec<f64>)> {
        self.virtuals
            .iter()
            .map(|v| (v.node.clone(), v.likelihood.clone()))
            .chain(
                self.soft_overrides
                    .iter()
                    .map(|(n, s)| (n.clone(), s.likelihood.clone())),
            )
            .collect()
    }

    pub fn posterior(
        &self,
        net: &ValidatedNetwork,
        node: &str,
    ) -> std::result::Result<Distribution, BnError> {
        net.query(node, &self.hard, &self.likelihoods())
    }

    /// Posterior of every node, in declaration order.
    pub fn posteriors(
        &self,
        net: &ValidatedNetwork,
    ) -> std::result::Result<Vec<Distribution>, BnError> {
        net.query_all(&self.hard, &self.likelihoods())
    }
}

/// One empty evidence state per area.
pub fn instantiate_areas(
    _net: &ValidatedNetwork,
    areas: &[Area],
) -> Result<BTreeMap<String, AreaState>> {
    let mut states = BTreeMap::new();
    for a in areas {
        if states.insert(a.id.clone(), AreaState::new(&a.id)).is_some() {
            return Err(SpatialError::DuplicateAreaId(a.id.clone()));
        }
    }
    Ok(states)
}

/// A tier-3 unambiguous observation reporting the area's value on an
/// attribute layer as the state of `node`.
pub fn layer_to_evidence(
    area: &Area,
    layer: &str,
    node: &str,
    net: &ValidatedNetwork,
    time: DateTime<Utc>,
) -> Result<Observation> {
    let value = area
        .attributes
        .get(layer)
        .ok_or_else(|| SpatialError::MissingAttribute {
            area: area.id.clone(),
            layer: layer.to_string(),
        })?;
    let target = net
        .node(node)
        .ok_or_else(|| BnError::UnknownNode(node.to_string()))?;
    if target.state_index(value).is_none() {
        return Err(SpatialError::UnmappedAttributeValue {
            area: area.id.clone(),
            layer: layer.to_string(),
            value: value.clone(),
            node: node.to_string(),
        });
    }
    Ok(Observation {
        id: format!("layer:{layer}:{}", area.id),
        time,
        location: Location::Areas(vec![area.id.clone()]),
        node: node.to_string(),
        tier: Tier::RS3,
        payload: Payload::State(value.clone()),
        source: format!("GIS layer {layer}"),
    })
}

/// Highest concentration among zones overlapping the footprint with positive
/// area, or `None` when the area lies outside every zone.
pub fn max_zone_overlap(area: &Area, zones: &[ThreatZone]) -> Option<f64> {
    zones
        .iter()
        .filter(|z| z.polygon.overlaps(&area.footprint))
        .map(|z| z.concentration_ppm)
        .fold(None, |best, c| Some(best.map_or(c, |b: f64| b.max(c))))
}

/// Choropleth of `P(target = target_state)`: one feature per area carrying
/// `area_id`, `probability` and `confirmed` (target fixed by hard evidence).
/// Areas missing from `states` are drawn with no evidence.
pub fn beliefs_to_geojson(
    areas: &[Area],
    states: &BTreeMap<String, AreaState>,
    net: &ValidatedNetwork,
    target: &str,
    target_state: &str,
) -> Result<FeatureCollection> {
    let node = net
        .node(target)
        .ok_or_else(|| BnError::UnknownNode(target.to_string()))?;
    let state_idx = node
        .state_index(target_state)
        .ok_or_else(|| BnError::InvalidState {
            node: target.to_string(),
            state: target_state.to_string(),
        })?;

    let empty = AreaState::default();
    let mut features = Vec::with_capacity(areas.len());
    for area in areas {
        let st = states.get(&area.id).unwrap_or(&empty);
        let p = st.posterior(net, target)?.prob(state_idx);

        let mut props = JsonObject::new();
        props.insert("area_id".into(), area.id.clone().into());
        props.insert("probability".into(), p.into());
        props.insert("confirmed".into(), st.confirmed().contains(target).into());

        features.push(Feature {
            bbox: None,
            geometry: Some(Geometry::new(Value::Polygon(vec![area
                .footprint
                .closed_ring()]))),
            id: Some(geojson::feature::Id::String(area.id.clone())),
            properties: Some(props),
            foreign_members: None,
        });
    }
    Ok(FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    })
}
