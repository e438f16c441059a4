//! The explorer export: everything an interactive viewer needs to show the
//! FDR space, the state images behind each point and episode segmentations.
//!
//! Top-level keys: `meta`, `codebook`, `points`, `images`, `episodes`,
//! `cluster_stats`. Image ids are the decimal point ids; each image is the
//! 12 × 12 grayscale render, row-major, 144 numbers.

use std::collections::BTreeMap;

use semrl_core::analysis::{segment_episode, ClusterStats, StateSet};
use serde::{Deserialize, Serialize};

use crate::config::LevelSection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub checkpoint_hash: String,
    pub env_config: LevelSection,
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Point {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub k: usize,
    pub env: usize,
    pub step: usize,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub episode_id: u64,
    pub codes: Vec<usize>,
    /// `[k, start, end)` triples.
    pub segments: Vec<[usize; 3]>,
    #[serde(rename = "return")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cluster {
    pub k: usize,
    pub count: usize,
    pub mean_image: Vec<f64>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterStatsExport {
    pub clusters: Vec<Cluster>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
    pub empty_clusters: Vec<usize>,
    pub transition_probability: Option<f64>,
}

impl From<&ClusterStats> for ClusterStatsExport {
    fn from(s: &ClusterStats) -> Self {
        Self {
            clusters: s
                .clusters
                .iter()
                .map(|c| Cluster {
                    k: c.code,
                    count: c.count,
                    mean_image: c.mean_image.clone(),
                    pixel_mean: c.pixel_mean,
                    pixel_std: c.pixel_std,
                })
                .collect(),
            pixel_mean: s.pooled_pixel_mean,
            pixel_std: s.pooled_pixel_std,
            empty_clusters: s.empty_clusters.clone(),
            transition_probability: s.transition_probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorerExport {
    pub meta: Meta,
    pub codebook: Vec<[f64; 2]>,
    pub points: Vec<Point>,
    pub images: BTreeMap<String, Vec<f64>>,
    pub episodes: Vec<Episode>,
    pub cluster_stats: ClusterStatsExport,
}

impl ExplorerExport {
    pub fn build(meta: Meta, codebook: Vec<[f64; 2]>, states: &StateSet, stats: &ClusterStats) -> Self {
        let points = states
            .records
            .iter()
            .enumerate()
            .map(|(id, r)| Point {
                id,
                x: r.point[0],
                y: r.point[1],
                k: r.code,
                env: r.env,
                step: r.step,
                episode: r.episode,
            })
            .collect();
        let images = states.records.iter().enumerate().map(|(id, r)| (id.to_string(), r.image.clone())).collect();
        let episodes = states
            .episodes
            .iter()
            .map(|e| Episode {
                episode_id: e.episode,
                codes: e.codes.clone(),
                segments: segment_episode(&e.codes).iter().map(|s| [s.code, s.start, s.end]).collect(),
                score: e.score,
            })
            .collect();
        Self {
            meta,
            codebook,
            points,
            images,
            episodes,
            cluster_stats: stats.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("export serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

/// Checks a parsed JSON document against the export layout without going
/// through the typed structs. Returns the path of the first violation.
pub fn validate_export_value(v: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;
    let obj = v.as_object().ok_or("$: expected object")?;
    for key in ["meta", "codebook", "points", "images", "episodes", "cluster_stats"] {
        if !obj.contains_key(key) {
            return Err(format!("$.{key}: missing"));
        }
    }
    let meta = obj["meta"].as_object().ok_or("$.meta: expected object")?;
    for key in ["checkpoint_hash", "env_config", "K", "alpha", "created_at"] {
        if !meta.contains_key(key) {
            return Err(format!("$.meta.{key}: missing"));
        }
    }
    let k = meta["K"].as_u64().ok_or("$.meta.K: expected integer")? as usize;
    let codebook = obj["codebook"].as_array().ok_or("$.codebook: expected array")?;
    if codebook.len() != k {
        return Err(format!("$.codebook: {} entries, K = {k}", codebook.len()));
    }
    let is_pair = |e: &Value| e.as_array().is_some_and(|a| a.len() == 2 && a.iter().all(Value::is_number));
    if let Some(i) = codebook.iter().position(|e| !is_pair(e)) {
        return Err(format!("$.codebook[{i}]: expected [x, y]"));
    }
    let images = obj["images"].as_object().ok_or("$.images: expected object")?;
    let points = obj["points"].as_array().ok_or("$.points: expected array")?;
    for (i, p) in points.iter().enumerate() {
        let p = p.as_object().ok_or_else(|| format!("$.points[{i}]: expected object"))?;
        for key in ["id", "x", "y", "k", "env", "step", "episode"] {
            if !p.get(key).is_some_and(Value::is_number) {
                return Err(format!("$.points[{i}].{key}: expected number"));
            }
        }
        if p["k"].as_u64().is_none_or(|c| c as usize >= k) {
            return Err(format!("$.points[{i}].k: outside codebook"));
        }
        let id = p["id"].as_u64().ok_or_else(|| format!("$.points[{i}].id: expected integer"))?;
        if !images.contains_key(&id.to_string()) {
            return Err(format!("$.images.{id}: missing image for point"));
        }
    }
    for (id, img) in images {
        let a = img.as_array().ok_or_else(|| format!("$.images.{id}: expected array"))?;
        if a.len() != 144 || !a.iter().all(|x| x.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x))) {
            return Err(format!("$.images.{id}: expected 144 reals in [0, 1]"));
        }
    }
    let episodes = obj["episodes"].as_array().ok_or("$.episodes: expected array")?;
    for (i, e) in episodes.iter().enumerate() {
        let e = e.as_object().ok_or_else(|| format!("$.episodes[{i}]: expected object"))?;
        for key in ["episode_id", "codes", "segments", "return"] {
            if !e.contains_key(key) {
                return Err(format!("$.episodes[{i}].{key}: missing"));
            }
        }
        let codes = e["codes"].as_array().ok_or_else(|| format!("$.episodes[{i}].codes: expected array"))?;
        let segs = e["segments"].as_array().ok_or_else(|| format!("$.episodes[{i}].segments: expected array"))?;
        let mut cursor = 0u64;
        for (j, s) in segs.iter().enumerate() {
            let s: Vec<u64> = s
                .as_array()
                .filter(|a| a.len() == 3)
                .and_then(|a| a.iter().map(Value::as_u64).collect())
                .ok_or_else(|| format!("$.episodes[{i}].segments[{j}]: expected [k, start, end]"))?;
            if s[1] != cursor || s[2] <= s[1] {
                return Err(format!("$.episodes[{i}].segments[{j}]: does not tile the episode"));
            }
            cursor = s[2];
        }
        if cursor as usize != codes.len() {
            return Err(format!("$.episodes[{i}].segments: cover {cursor} of {} steps", codes.len()));
        }
    }
    let stats = obj["cluster_stats"].as_object().ok_or("$.cluster_stats: expected object")?;
    for key in ["clusters", "pixel_mean", "pixel_std", "transition_probability"] {
        if !stats.contains_key(key) {
            return Err(format!("$.cluster_stats.{key}: missing"));
        }
    }
    Ok(())
}
