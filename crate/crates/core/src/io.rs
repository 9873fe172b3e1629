//! JSON form of encodings and mixture encodings.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoding::Encoding;
use crate::error::{LogrError, Result};
use crate::mixture::{Cluster, MixtureEncoding};
use crate::pattern::Pattern;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryJson {
    pub bits: Vec<usize>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingJson {
    pub n: usize,
    #[serde(default)]
    pub features: Vec<String>,
    pub entries: Vec<EntryJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterJson {
    pub weight: f64,
    pub size: u64,
    pub error: f64,
    pub encoding: EncodingJson,
    /// Distinct-row indices of the source log.
    pub rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureJson {
    pub total: u64,
    pub features: Vec<String>,
    pub clusters: Vec<ClusterJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
}

pub fn encoding_to_json(enc: &Encoding, features: &[String]) -> EncodingJson {
    EncodingJson {
        n: enc.width(),
        features: features.to_vec(),
        entries: enc
            .iter()
            .map(|(b, p)| EntryJson { bits: b.ids(), p })
            .collect(),
    }
}

pub fn encoding_from_json(json: &EncodingJson) -> Result<Encoding> {
    if !json.features.is_empty() && json.features.len() != json.n {
        return Err(LogrError::InvalidArgument(format!(
            "encoding has n = {} but {} feature labels",
            json.n,
            json.features.len()
        )));
    }
    let mut enc = Encoding::new(json.n);
    for e in &json.entries {
        let pattern = Pattern::try_from_ids(json.n, e.bits.iter().copied())?;
        if enc.contains_pattern(&pattern) {
            return Err(LogrError::InvalidArgument(format!(
                "pattern {:?} listed twice",
                e.bits
            )));
        }
        enc.insert(pattern, e.p)?;
    }
    Ok(enc)
}

pub fn mixture_to_json(m: &MixtureEncoding, config: Option<Value>) -> MixtureJson {
    MixtureJson {
        total: m.total,
        features: m.features.clone(),
        clusters: m
            .clusters
            .iter()
            .map(|c| ClusterJson {
                weight: c.weight,
                size: c.size,
                error: c.error,
                encoding: encoding_to_json(&c.encoding, &m.features),
                rows: c.rows.clone(),
            })
            .collect(),
        config,
    }
}

pub fn mixture_from_json(json: &MixtureJson) -> Result<MixtureEncoding> {
    if json.clusters.is_empty() {
        return Err(LogrError::InvalidArgument("mixture has no clusters".into()));
    }
    let mut clusters = Vec::with_capacity(json.clusters.len());
    for (i, c) in json.clusters.iter().enumerate() {
        let encoding = encoding_from_json(&c.encoding)?;
        if encoding.width() != json.features.len() && !json.features.is_empty() {
            return Err(LogrError::InvalidArgument(format!(
                "cluster {i} has width {}, vocabulary has {} features",
                encoding.width(),
                json.features.len()
            )));
        }
        clusters.push(Cluster {
            weight: c.weight,
            size: c.size,
            encoding,
            error: c.error,
            rows: c.rows.clone(),
        });
    }
    let widths = clusters.iter().map(|c| c.encoding.width());
    if widths.clone().min() != widths.max() {
        return Err(LogrError::InvalidArgument("clusters disagree on width".into()));
    }
    Ok(MixtureEncoding {
        total: json.total,
        features: json.features.clone(),
        clusters,
    })
}

/// Pretty JSON text with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn parse_mixture(text: &str) -> Result<(MixtureEncoding, Option<Value>)> {
    let json: MixtureJson =
        serde_json::from_str(text).map_err(|e| LogrError::Parse(format!("mixture JSON: {e}")))?;
    Ok((mixture_from_json(&json)?, json.config))
}

pub fn parse_encoding(text: &str) -> Result<(Encoding, Vec<String>)> {
    let json: EncodingJson =
        serde_json::from_str(text).map_err(|e| LogrError::Parse(format!("encoding JSON: {e}")))?;
    Ok((encoding_from_json(&json)?, json.features))
}
