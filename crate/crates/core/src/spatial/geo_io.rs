//! Reading areas and threat zones from GeoJSON FeatureCollections.

use std::collections::BTreeMap;

use geojson::{feature::Id, Feature, FeatureCollection, GeoJson, Value};

use super::{Area, Polygon, SpatialError, ThreatZone};

fn collection(text: &str) -> Result<FeatureCollection, SpatialError> {
    let gj: GeoJson = text
        .parse()
        .map_err(|e: geojson::Error| SpatialError::Format(e.to_string()))?;
    FeatureCollection::try_from(gj).map_err(|e| SpatialError::Format(e.to_string()))
}

fn feature_id(f: &Feature) -> Option<String> {
    match &f.id {
        Some(Id::String(s)) => Some(s.clone()),
        Some(Id::Number(n)) => Some(n.to_string()),
        None => f.property("id").and_then(|v| {
            v.as_str()
                .map(str::to_string)
                .or_else(|| v.as_number().map(|n| n.to_string()))
        }),
    }
}

fn polygon(f: &Feature, what: &str) -> Result<Polygon, SpatialError> {
    let invalid = |reason: String| SpatialError::InvalidGeometry {
        what: what.to_string(),
        reason,
    };
    let geometry = f
        .geometry
        .as_ref()
        .ok_or_else(|| invalid("missing geometry".into()))?;
    let rings = match &geometry.value {
        Value::Polygon(rings) => rings,
        other => {
            return Err(invalid(format!(
                "expected Polygon, got {}",
                other.type_name()
            )))
        }
    };
    match rings.as_slice() {
        [exterior] => {
            let points = exterior
                .iter()
                .map(|p| match p.as_slice() {
                    [x, y, ..] => Ok([*x, *y]),
                    _ => Err(invalid("position with fewer than two coordinates".into())),
                })
                .collect::<Result<Vec<_>, _>>()?;
            Polygon::new(points).map_err(invalid)
        }
        [] => Err(invalid("polygon without rings".into())),
        _ => Err(invalid("polygons with holes are not supported".into())),
    }
}

/// Areas from a FeatureCollection of polygons. The feature `id` (or an `id`
/// property) names the area; scalar properties become layer attributes.
pub fn read_areas(text: &str) -> Result<Vec<Area>, SpatialError> {
    let fc = collection(text)?;
    let mut areas = Vec::with_capacity(fc.features.len());
    for (i, f) in fc.features.iter().enumerate() {
        let id =
            feature_id(f).ok_or_else(|| SpatialError::Format(format!("feature #{i} has no id")))?;
        let footprint = polygon(f, &format!("area `{id}`"))?;
        let mut attributes = BTreeMap::new();
        for (k, v) in f.properties_iter() {
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => continue,
            };
            attributes.insert(k.clone(), value);
        }
        areas.push(Area {
            id,
            footprint,
            attributes,
        });
    }
    Ok(areas)
}

/// Threat zones from a FeatureCollection whose features carry a numeric
/// `concentration_ppm` property.
pub fn read_threat_zones(text: &str) -> Result<Vec<ThreatZone>, SpatialError> {
    let fc = collection(text)?;
    fc.features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let id = feature_id(f);
            let label = id.clone().unwrap_or_else(|| format!("zone #{i}"));
            let ppm = f
                .property("concentration_ppm")
                .and_then(serde_json::Value::as_f64)
                .ok_or_else(|| {
                    SpatialError::Format(format!("{label}: missing numeric concentration_ppm"))
                })?;
            ThreatZone::new(id, polygon(f, &label)?, ppm)
        })
        .collect()
}
