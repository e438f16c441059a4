#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A run small enough to train in well under a second.
pub const SMALL: &str = r#"
seed = 7

[train]
iterations = 2
n_envs = 2
horizon = 32
minibatch_size = 32
epochs = 1

[collect]
envs = 2
steps = 3
collect_prob = 1.0
"#;

pub fn semrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semrl")).args(args).output().expect("binary runs")
}

pub fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

pub fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains the small config into `dir/train` and returns (config, checkpoint).
pub fn trained(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir, SMALL);
    let out = dir.join("train");
    let mut args = vec!["train", "--config", s(&cfg), "--out", s(&out)];
    args.extend_from_slice(extra);
    ok(&semrl(&args));
    (cfg, out.join("checkpoint.json"))
}

pub fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Run-length encoding of a code sequence as `[k, start, end)` triples.
pub fn runs(codes: &[u64]) -> Vec<[u64; 3]> {
    let mut out: Vec<[u64; 3]> = Vec::new();
    for (t, &c) in codes.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r[0] == c => r[2] = t as u64 + 1,
            _ => out.push([c, t as u64, t as u64 + 1]),
        }
    }
    out
}

/// Schema check for an explorer export, written against the documented
/// layout rather than the crate's own types.
pub fn check_export(v: &serde_json::Value) -> Result<(), String> {
    let top = v.as_object().ok_or("not an object")?;
    let mut keys: Vec<&str> = top.keys().map(String::as_str).collect();
    keys.sort_unstable();
    if keys != ["cluster_stats", "codebook", "episodes", "images", "meta", "points"] {
        return Err(format!("top-level keys {keys:?}"));
    }
    let meta = &v["meta"];
    let k = meta["K"].as_u64().ok_or("meta.K")?;
    if !meta["alpha"].is_number() || !meta["checkpoint_hash"].is_string() || !meta["created_at"].is_string() || !meta["env_config"].is_object() {
        return Err("meta fields".into());
    }
    let codebook = v["codebook"].as_array().ok_or("codebook")?;
    if codebook.len() as u64 != k || codebook.iter().any(|e| e.as_array().is_none_or(|a| a.len() != 2 || a.iter().any(|x| !x.is_f64()))) {
        return Err("codebook entries".into());
    }
    let points = v["points"].as_array().ok_or("points")?;
    let images = v["images"].as_object().ok_or("images")?;
    if images.len() != points.len() {
        return Err(format!("{} images for {} points", images.len(), points.len()));
    }
    let mut counts = vec![0u64; k as usize];
    for (i, p) in points.iter().enumerate() {
        if p["id"].as_u64() != Some(i as u64) {
            return Err(format!("point {i} id"));
        }
        for key in ["x", "y"] {
            if !p[key].as_f64().is_some_and(f64::is_finite) {
                return Err(format!("point {i} {key}"));
            }
        }
        for key in ["env", "step", "episode"] {
            if p[key].as_u64().is_none() {
                return Err(format!("point {i} {key}"));
            }
        }
        let c = p["k"].as_u64().filter(|c| *c < k).ok_or(format!("point {i} k"))?;
        counts[c as usize] += 1;
        let img = images.get(&i.to_string()).and_then(|x| x.as_array()).ok_or(format!("image {i}"))?;
        if img.len() != 144 || img.iter().any(|x| !x.as_f64().is_some_and(|x| (0.0..=1.0).contains(&x))) {
            return Err(format!("image {i} contents"));
        }
    }
    for (i, e) in v["episodes"].as_array().ok_or("episodes")?.iter().enumerate() {
        let codes: Vec<u64> = e["codes"].as_array().ok_or("codes")?.iter().map(|c| c.as_u64().unwrap_or(u64::MAX)).collect();
        if codes.iter().any(|c| *c >= k) {
            return Err(format!("episode {i} codes"));
        }
        let segs: Vec<[u64; 3]> = serde_json::from_value(e["segments"].clone()).map_err(|e| e.to_string())?;
        if segs != runs(&codes) {
            return Err(format!("episode {i} segments"));
        }
        if e["episode_id"].as_u64().is_none() || !(e["return"].is_null() || e["return"].is_number()) {
            return Err(format!("episode {i} fields"));
        }
    }
    let stats = &v["cluster_stats"];
    let clusters = stats["clusters"].as_array().ok_or("clusters")?;
    if clusters.len() as u64 != k {
        return Err("cluster count".into());
    }
    for (c, cl) in clusters.iter().enumerate() {
        if cl["k"].as_u64() != Some(c as u64) || cl["count"].as_u64() != Some(counts[c]) {
            return Err(format!("cluster {c} count"));
        }
        let want = if counts[c] == 0 { 0 } else { 144 };
        if cl["mean_image"].as_array().is_none_or(|a| a.len() != want) {
            return Err(format!("cluster {c} mean image"));
        }
    }
    let empty: Vec<u64> = serde_json::from_value(stats["empty_clusters"].clone()).map_err(|e| e.to_string())?;
    if empty != (0..k).filter(|c| counts[*c as usize] == 0).collect::<Vec<_>>() {
        return Err("empty clusters".into());
    }
    if !stats["pixel_mean"].is_number() || !stats["pixel_std"].is_number() {
        return Err("pooled pixel stats".into());
    }
    let tp = &stats["transition_probability"];
    if !(tp.is_null() || tp.as_f64().is_some_and(|p| (0.0..=1.0).contains(&p))) {
        return Err("transition probability".into());
    }
    Ok(())
}
