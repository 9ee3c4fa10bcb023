//! The observation record fed to the engine.
//!
//! On the wire an observation is one JSON object (one line of an NDJSON
//! stream):
//!
//! ```json
//! {"id": "b17-03", "time": "2024-05-14T00:05:00Z", "location": ["17"],
//!  "node": "Critical Gas Dose around Building", "tier": "RS3",
//!  "payload": {"prob_ratio": [0.8, 0.2]}, "source": "Simulation"}
//! ```
//!
//! `location` is either a list of area ids or the string `"all"`. `payload`
//! holds exactly one of `state`, `prob_ratio` or `likelihood_ratio`.

use std::fmt;
use std::io::BufRead;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Reliability tier of an observation source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    RS1,
    RS2,
    RS3,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::RS1 => "RS1",
            Tier::RS2 => "RS2",
            Tier::RS3 => "RS3",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Payload {
    /// An unambiguous report of one state.
    State(String),
    /// A replacement distribution for the node (soft evidence).
    ProbRatio(Vec<f64>),
    /// A likelihood ratio over the node's states (virtual evidence).
    LikelihoodRatio(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    All,
    Areas(Vec<String>),
}

impl Location {
    pub fn areas<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Location::Areas(ids.into_iter().map(Into::into).collect())
    }
}

impl Serialize for Location {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Location::All => s.serialize_str("all"),
            Location::Areas(ids) => ids.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Location {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Keyword(String),
            Areas(Vec<String>),
        }
        match Repr::deserialize(d)? {
            Repr::Keyword(k) if k == "all" => Ok(Location::All),
            Repr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "location must be \"all\" or a list of area ids, got \"{k}\""
            ))),
            Repr::Areas(ids) if ids.is_empty() => Err(serde::de::Error::custom(
                "location must name at least one area",
            )),
            Repr::Areas(ids) => Ok(Location::Areas(ids)),
        }
    }
}

fn whole_seconds<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
    DateTime::<Utc>::deserialize(d).map(|t| t.trunc_subsecs(0))
}

/// One timestamped, spatially addressed report about one network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub id: String,
    /// UTC, truncated to whole seconds on input.
    #[serde(deserialize_with = "whole_seconds")]
    pub time: DateTime<Utc>,
    pub location: Location,
    pub node: String,
    pub tier: Tier,
    pub payload: Payload,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads newline-delimited observations; blank lines are skipped.
pub fn read_script<R: BufRead>(reader: R) -> Result<Vec<Observation>, ScriptError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obs = serde_json::from_str(&line).map_err(|source| ScriptError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(obs);
    }
    Ok(out)
}

/// Writes observations as NDJSON, one per line.
pub fn write_script<W: std::io::Write>(
    mut writer: W,
    observations: &[Observation],
) -> std::io::Result<()> {
    for obs in observations {
        serde_json::to_writer(&mut writer, obs)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
