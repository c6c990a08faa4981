//! Browser bindings. Each entry point takes plain arguments and returns a
//! JSON string for the page to render.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use ecupdate::config::{Flags, SimConfig};
use ecupdate::log_pool::{BlockKey, Layer, LogPool, LogRecord, PoolConfig, RecordKind};
use ecupdate::replay::{Engine, ReplayOptions};
use ecupdate::report::{compare, Report, StrategyReport, HEADLINE};
use ecupdate::strategy::STRATEGY_NAMES;
use ecupdate::trace::{generate, map_to_updates, AddressMap, MappedOp, SynthParams};

const MAX_OPS: u64 = 50_000;

fn demo_config(k: usize, m: usize) -> Result<SimConfig, String> {
    let mut cfg = SimConfig::small();
    cfg.k = k;
    cfg.m = m;
    cfg.cluster_size = (k + m).max(8);
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn synth_ops(cfg: &SimConfig, profile: &str, ops: u64, seed: u64) -> Result<Vec<MappedOp>, String> {
    if ops > MAX_OPS {
        return Err(format!("at most {MAX_OPS} ops in the browser"));
    }
    let p = SynthParams::profile(profile, ops, seed).map_err(|e| e.to_string())?;
    let records = generate(&p).map_err(|e| e.to_string())?;
    let mut map = AddressMap::new(cfg.k, cfg.block_size, cfg.stripes_per_volume);
    map_to_updates(&records, &mut map).map_err(|e| e.to_string())
}

/// Runs every strategy on one synthetic trace and returns the headline
/// counters with their ratios to TSUE.
pub fn comparison_json(profile: &str, ops: u64, seed: u64, k: usize, m: usize, flags: &str) -> Result<String, String> {
    let mut cfg = demo_config(k, m)?;
    cfg.flags = Flags::parse_list(flags).map_err(|e| e.to_string())?;
    let mapped = synth_ops(&cfg, profile, ops, seed)?;
    let mut strategies = Vec::new();
    for name in STRATEGY_NAMES {
        let mut e = Engine::new(&cfg, name, ReplayOptions { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        e.run(&mapped).map_err(|e| format!("{name}: {e}"))?;
        let r = e.finish().map_err(|e| format!("{name}: {e}"))?;
        strategies.push(StrategyReport::from_run(&r));
    }
    let report = Report {
        trace: format!("synth:{profile}:{ops}"),
        seed,
        config: cfg,
        strategies,
    };
    let ratios = compare(std::slice::from_ref(&report), &HEADLINE, "tsue").map_err(|e| e.to_string())?;
    let rows: Vec<Value> = report
        .strategies
        .iter()
        .map(|s| {
            let counters: serde_json::Map<String, Value> =
                HEADLINE.iter().map(|&h| (h.to_string(), json!(s.value(h)))).collect();
            json!({ "strategy": s.strategy, "counters": counters, "ratios": ratios.ratios[&s.strategy] })
        })
        .collect();
    Ok(json!({ "columns": HEADLINE, "rows": rows }).to_string())
}

/// Appends raw-data records, given as `offset,len` lines in bytes, to one
/// log unit and shows how the index merges them. Record `i` is filled
/// with byte `i + 1` so every merged byte names the record it came from.
pub fn merge_json(records: &str) -> Result<String, String> {
    let block_size = 4 << 20;
    let mut pool = LogPool::new(
        0,
        PoolConfig {
            unit_capacity: 64 << 20,
            min_units: 2,
            max_units: 2,
            block_size,
            merge: true,
        },
    );
    let key = BlockKey::new(0, 0, Layer::Data);
    let mut appended = 0u64;
    let mut count = 0u64;
    for (i, line) in records.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let bad = || format!("line {}: expected offset,len", i + 1);
        let (off, len) = line.split_once(',').ok_or_else(bad)?;
        let off: u64 = off.trim().parse().map_err(|_| bad())?;
        let len: u64 = len.trim().parse().map_err(|_| bad())?;
        if len == 0 || off + len > block_size {
            return Err(format!("line {}: extent must be non-empty and inside a 4 MiB block", i + 1));
        }
        if count == 254 {
            return Err("at most 254 records".into());
        }
        count += 1;
        pool.append(LogRecord {
            key,
            offset: off,
            kind: RecordKind::RawData,
            payload: vec![count as u8; len as usize],
            time: 0,
        })
        .map_err(|e| e.to_string())?;
        appended += len;
    }
    let id = pool.flush();
    let mut extents = Vec::new();
    if let Some(id) = id {
        pool.start_recycle(id).map_err(|e| e.to_string())?;
        for (off, data) in pool.merged_extents(id, &key).map_err(|e| e.to_string())? {
            let mut runs = Vec::new();
            let mut start = 0;
            for j in 1..=data.len() {
                if j == data.len() || data[j] != data[start] {
                    runs.push(json!({ "offset": off + start as u64, "len": j - start, "record": data[start] }));
                    start = j;
                }
            }
            extents.push(json!({ "offset": off, "len": data.len(), "runs": runs }));
        }
    }
    let merged: u64 = extents.iter().map(|e| e["len"].as_u64().unwrap_or(0)).sum();
    Ok(json!({
        "records": count,
        "appended_bytes": appended,
        "extents": extents,
        "merged_bytes": merged,
    })
    .to_string())
}

/// Replays a synthetic trace under one strategy, fails `nodes` together
/// halfway through, recovers, finishes the trace and checks every byte.
pub fn recovery_json(strategy: &str, profile: &str, ops: u64, seed: u64, nodes: &str) -> Result<String, String> {
    let mut cfg = demo_config(4, 2)?;
    let nodes: Vec<usize> = nodes
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad node id {s:?}")))
        .collect::<Result<_, _>>()?;
    if nodes.is_empty() {
        return Err("name at least one node".into());
    }
    if let Some(&n) = nodes.iter().find(|&&n| n >= cfg.cluster_size) {
        return Err(format!("node {n} outside the {}-node cluster", cfg.cluster_size));
    }
    cfg.replication = Some((nodes.len() + 1).min(cfg.cluster_size));
    let mapped = synth_ops(&cfg, profile, ops, seed)?;
    let at = mapped.len() / 2;
    let opts = ReplayOptions {
        seed,
        verify: true,
        ..Default::default()
    };
    let mut e = Engine::new(&cfg, strategy, opts).map_err(|e| e.to_string())?;
    e.run(&mapped[..at]).map_err(|e| e.to_string())?;
    let out = match e.fail_many_and_recover(&nodes) {
        Ok(rep) => {
            let finished = e.run(&mapped[at..]).and_then(|_| e.finish());
            json!({
                "recovered": true,
                "failed_after_op": at,
                "rebuilt_data": rep.rebuilt_data.len(),
                "rebuilt_parity": rep.rebuilt_parity.len(),
                "reencoded_stripes": rep.reencoded_stale.len(),
                "verified": finished.as_ref().map(|r| r.verified == Some(true)).unwrap_or(false),
                "error": finished.err().map(|e| e.to_string()),
            })
        }
        Err(err) => json!({ "recovered": false, "failed_after_op": at, "error": err.to_string() }),
    };
    Ok(out.to_string())
}

#[wasm_bindgen]
pub fn run_comparison(profile: &str, ops: u32, seed: u32, k: u32, m: u32, flags: &str) -> Result<String, JsValue> {
    comparison_json(profile, ops.into(), seed.into(), k as usize, m as usize, flags).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn merge_demo(records: &str) -> Result<String, JsValue> {
    merge_json(records).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn recovery_demo(strategy: &str, profile: &str, ops: u32, seed: u32, nodes: &str) -> Result<String, JsValue> {
    recovery_json(strategy, profile, ops.into(), seed.into(), nodes).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn comparison_has_every_strategy() {
        let v = parse(&comparison_json("ten", 2000, 1, 4, 2, "o1,o2,o3,o4,o5").unwrap());
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 6);
        let tsue = rows.iter().find(|r| r["strategy"] == "tsue").unwrap();
        assert_eq!(tsue["ratios"]["overwrite_ops"], 1.0);
        assert!(comparison_json("ten", MAX_OPS + 1, 1, 4, 2, "").is_err());
    }

    #[test]
    fn merge_splices_newest_over_oldest() {
        let v = parse(&merge_json("0,8192\n4096,8192\n65536,4096").unwrap());
        assert_eq!(v["records"], 3);
        let ext = v["extents"].as_array().unwrap();
        assert_eq!(ext.len(), 2);
        assert_eq!((ext[0]["offset"].as_u64(), ext[0]["len"].as_u64()), (Some(0), Some(12288)));
        let runs = ext[0]["runs"].as_array().unwrap();
        assert_eq!(runs[0]["record"], 1);
        assert_eq!(runs[1]["record"], 2);
        assert_eq!(runs[1]["offset"], 4096);
        assert_eq!(v["merged_bytes"], 16384);
        assert!(merge_json("12,x").is_err());
    }

    #[test]
    fn recovery_reports_success_and_bound() {
        let v = parse(&recovery_json("tsue", "ten", 1500, 3, "1,2").unwrap());
        assert_eq!(v["recovered"], true, "{v}");
        assert_eq!(v["verified"], true, "{v}");
        let v = parse(&recovery_json("fo", "ten", 1500, 3, "0,1,2,3,4").unwrap());
        assert_eq!(v["recovered"], false);
        assert!(v["error"].as_str().unwrap().contains("lost"), "{v}");
        assert!(recovery_json("fo", "ten", 10, 3, "9").is_err());
    }
}
