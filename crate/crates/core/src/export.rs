//! Replay artifacts written to an output directory:
//!
//! * `timeline.csv`: one row per snapshot, node and state;
//! * `panels/panel_NN.geojson` and `panels.json`: one choropleth per distinct
//!   observation time, or a single prior panel for an empty script;
//! * `timeseries.json`: per-area marginals over time;
//! * `rejected.json`: observations that were not applied.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use geojson::FeatureCollection;
use serde::Serialize;
use thiserror::Error;

use crate::bundle::ScenarioBundle;
use crate::observation::Observation;
use crate::pipeline::{BeliefSnapshot, EngineState, Timeline};
use crate::spatial::{beliefs_to_geojson, SpatialError};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

pub type Result<T> = std::result::Result<T, ExportError>;

/// Map of the display node after one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// `None` for the prior panel.
    pub time: Option<DateTime<Utc>>,
    /// Last seq included in the panel.
    pub seq: u64,
    pub collection: FeatureCollection,
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub timeline: Timeline,
    pub panels: Vec<Panel>,
}

/// Replays `observations` on `engine`, capturing one panel per time step.
pub fn run_replay(
    bundle: &ScenarioBundle,
    engine: &mut EngineState,
    observations: &[Observation],
) -> Result<ReplayOutput> {
    let panel = |e: &EngineState, time| -> Result<Panel> {
        Ok(Panel {
            time,
            seq: e.last_seq().unwrap_or(0),
            collection: beliefs_to_geojson(
                &bundle.areas,
                e.areas(),
                &bundle.network,
                &bundle.display.node,
                &bundle.display.state,
            )?,
        })
    };

    let mut panels = Vec::new();
    let mut failure = None;
    let timeline = engine.replay_with(observations, |e, t| match panel(e, Some(t)) {
        Ok(p) => panels.push(p),
        Err(err) => {
            failure.get_or_insert(err);
        }
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if panels.is_empty() {
        panels.push(panel(engine, None)?);
    }
    Ok(ReplayOutput { timeline, panels })
}

fn time_text(t: Option<DateTime<Utc>>) -> String {
    t.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `seq,time,area_id,node_id,state,probability,trigger_observation_id`.
pub fn timeline_csv(bundle: &ScenarioBundle, snapshots: &[BeliefSnapshot]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "seq",
        "time",
        "area_id",
        "node_id",
        "state",
        "probability",
        "trigger_observation_id",
    ])?;
    for s in snapshots {
        for (node, dist) in &s.marginals {
            let states = bundle
                .network
                .node(node)
                .map(|n| n.states())
                .unwrap_or_default();
            for (state, p) in states.iter().zip(&dist.probs) {
                w.write_record([
                    s.seq.to_string().as_str(),
                    &time_text(s.time),
                    &s.area_id,
                    node,
                    state,
                    &p.to_string(),
                    s.trigger.as_deref().unwrap_or(""),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| ExportError::Io {
        path: "timeline.csv".into(),
        source: e.into_error(),
    })
}

#[derive(Serialize)]
struct SeriesPoint<'a> {
    seq: u64,
    area_seq: u64,
    time: Option<String>,
    trigger: Option<&'a str>,
    /// node → state → probability
    probabilities: BTreeMap<&'a str, BTreeMap<&'a str, f64>>,
}

#[derive(Serialize)]
struct AreaSeries<'a> {
    area_id: &'a str,
    points: Vec<SeriesPoint<'a>>,
}

/// Per-area marginal trajectories, areas in declaration order.
pub fn timeseries_json(bundle: &ScenarioBundle, snapshots: &[BeliefSnapshot]) -> Result<Vec<u8>> {
    let mut by_area: BTreeMap<&str, Vec<SeriesPoint>> = BTreeMap::new();
    for s in snapshots {
        let probabilities = s
            .marginals
            .iter()
            .map(|(node, dist)| {
                let states = bundle
                    .network
                    .node(node)
                    .map(|n| n.states())
                    .unwrap_or_default();
                let per_state = states
                    .iter()
                    .map(String::as_str)
                    .zip(dist.probs.iter().copied())
                    .collect();
                (node.as_str(), per_state)
            })
            .collect();
        by_area.entry(&s.area_id).or_default().push(SeriesPoint {
            seq: s.seq,
            area_seq: s.area_seq,
            time: s.time.map(|t| time_text(Some(t))),
            trigger: s.trigger.as_deref(),
            probabilities,
        });
    }
    let series: Vec<AreaSeries> = bundle
        .area_ids()
        .map(|id| AreaSeries {
            area_id: id,
            points: by_area.remove(id).unwrap_or_default(),
        })
        .collect();
    let mut out = serde_json::to_vec_pretty(&series)?;
    out.push(b'\n');
    Ok(out)
}

/// GeoJSON text of a panel, as also served by the live service.
pub fn geojson_text(collection: &FeatureCollection) -> Result<String> {
    Ok(serde_json::to_string_pretty(collection)? + "\n")
}

#[derive(Serialize)]
struct PanelIndex {
    index: usize,
    file: String,
    time: Option<String>,
    seq: u64,
}

/// Writes every artifact of a replay into `out_dir`, creating it if needed.
pub fn write_replay(out_dir: &Path, bundle: &ScenarioBundle, output: &ReplayOutput) -> Result<()> {
    let panels_dir = out_dir.join("panels");
    fs::create_dir_all(&panels_dir).map_err(|source| ExportError::Io {
        path: panels_dir.display().to_string(),
        source,
    })?;
    // stale panels from an earlier, longer replay would be misleading
    if let Ok(entries) = fs::read_dir(&panels_dir) {
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("panel_") && name.ends_with(".geojson") {
                let _ = fs::remove_file(entry.path());
            }
        }
    }

    write_file(
        &out_dir.join("timeline.csv"),
        &timeline_csv(bundle, &output.timeline.snapshots)?,
    )?;
    write_file(
        &out_dir.join("timeseries.json"),
        &timeseries_json(bundle, &output.timeline.snapshots)?,
    )?;

    let mut index = Vec::with_capacity(output.panels.len());
    for (i, p) in output.panels.iter().enumerate() {
        let file = format!("panels/panel_{i:02}.geojson");
        write_file(
            &out_dir.join(&file),
            geojson_text(&p.collection)?.as_bytes(),
        )?;
        index.push(PanelIndex {
            index: i,
            file,
            time: p.time.map(|t| time_text(Some(t))),
            seq: p.seq,
        });
    }
    let mut idx = serde_json::to_vec_pretty(&index)?;
    idx.push(b'\n');
    write_file(&out_dir.join("panels.json"), &idx)?;

    let mut rejected = serde_json::to_vec_pretty(&output.timeline.rejections)?;
    rejected.push(b'\n');
    write_file(&out_dir.join("rejected.json"), &rejected)?;
    Ok(())
}
