//! Topology directory format: `neurons.csv`, `synapses.csv` and a
//! `topology.json` metadata file carrying the generating spec, seed and format
//! version.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layer, NeuronParams, Polarity, Position, Synapse, Topology, TopologySpec};
use crate::error::{Error, Result};

pub const TOPOLOGY_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NeuronRow {
    id: u32,
    layer: String,
    polarity: String,
    x: f64,
    y: f64,
    z: f64,
    v_th: f64,
    v_reset: f64,
    e_leak: f64,
    tau_m: f64,
    t_ref: f64,
    c_m: f64,
}

#[derive(Serialize, Deserialize)]
struct SynapseRow {
    pre: u32,
    post: u32,
    weight: f64,
    delay: f64,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    seed: u64,
    n_neurons: usize,
    n_synapses: usize,
    layer_counts: BTreeMap<Layer, usize>,
    spec: Option<TopologySpec>,
}

pub fn write_topology(dir: &Path, t: &Topology) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = csv::Writer::from_path(dir.join("neurons.csv"))?;
    for (id, n) in t.neurons.iter().enumerate() {
        w.serialize(NeuronRow {
            id: id as u32,
            layer: n.layer.as_str().to_owned(),
            polarity: n.polarity.as_str().to_owned(),
            x: n.position.x,
            y: n.position.y,
            z: n.position.z,
            v_th: n.v_threshold,
            v_reset: n.v_reset,
            e_leak: n.e_leak,
            tau_m: n.tau_membrane,
            t_ref: n.t_refractory,
            c_m: n.capacitance,
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("neurons.csv"), e))?;

    let mut w = csv::Writer::from_path(dir.join("synapses.csv"))?;
    for s in &t.synapses {
        w.serialize(SynapseRow {
            pre: s.pre,
            post: s.post,
            weight: s.weight,
            delay: s.delay,
        })?;
    }
    w.flush().map_err(|e| Error::io(dir.join("synapses.csv"), e))?;

    let meta = Metadata {
        format_version: TOPOLOGY_FORMAT_VERSION,
        seed: t.seed,
        n_neurons: t.neurons.len(),
        n_synapses: t.synapses.len(),
        layer_counts: t.layer_counts.clone(),
        spec: t.spec.clone(),
    };
    let path = dir.join("topology.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_topology(dir: &Path) -> Result<Topology> {
    let meta_path = dir.join("topology.json");
    let raw = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Metadata = serde_json::from_str(&raw)?;
    if meta.format_version != TOPOLOGY_FORMAT_VERSION {
        return Err(Error::Parse {
            path: meta_path,
            message: format!(
                "unsupported format_version {} (expected {TOPOLOGY_FORMAT_VERSION})",
                meta.format_version
            ),
        });
    }
    let default_c = meta
        .spec
        .as_ref()
        .map(|s| s.neuron.capacitance)
        .unwrap_or_else(|| super::NeuronDefaults::default().capacitance);

    let neurons_path = dir.join("neurons.csv");
    let mut r = csv::Reader::from_path(&neurons_path)?;
    let mut headers = r.headers()?.clone();
    let has_cm = headers.iter().any(|h| h == "c_m");
    if !has_cm {
        headers.push_field("c_m");
    }
    let default_c = default_c.to_string();
    let mut neurons = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let mut rec = rec?;
        if !has_cm {
            rec.push_field(&default_c);
        }
        let row: NeuronRow = rec.deserialize(Some(&headers))?;
        if row.id as usize != i {
            return Err(Error::Parse {
                path: neurons_path,
                message: format!("neuron ids must be dense: row {i} has id {}", row.id),
            });
        }
        neurons.push(NeuronParams {
            v_threshold: row.v_th,
            v_reset: row.v_reset,
            e_leak: row.e_leak,
            tau_membrane: row.tau_m,
            capacitance: row.c_m,
            t_refractory: row.t_ref,
            polarity: row.polarity.parse::<Polarity>()?,
            layer: row.layer.parse::<Layer>()?,
            position: Position {
                x: row.x,
                y: row.y,
                z: row.z,
            },
        });
    }

    let mut synapses = Vec::new();
    let mut r = csv::Reader::from_path(dir.join("synapses.csv"))?;
    for row in r.deserialize::<SynapseRow>() {
        let row = row?;
        synapses.push(Synapse {
            pre: row.pre,
            post: row.post,
            weight: row.weight,
            delay: row.delay,
        });
    }

    Ok(Topology {
        neurons,
        synapses,
        layer_counts: meta.layer_counts,
        seed: meta.seed,
        spec: meta.spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_topology;

    #[test]
    fn directory_roundtrip_is_exact() {
        let spec = TopologySpec {
            n_neurons: 120,
            ..TopologySpec::default()
        };
        let t = build_topology(&spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_topology(dir.path(), &t).unwrap();
        let back = read_topology(dir.path()).unwrap();
        assert_eq!(back, t);
        let header = fs::read_to_string(dir.path().join("neurons.csv")).unwrap();
        assert!(header.starts_with("id,layer,polarity,x,y,z,v_th,v_reset,e_leak,tau_m,t_ref"));
        let header = fs::read_to_string(dir.path().join("synapses.csv")).unwrap();
        assert!(header.starts_with("pre,post,weight,delay\n"));
    }

    #[test]
    fn rejects_unknown_version() {
        let t = Topology::from_parts(Vec::new(), Vec::new());
        let dir = tempfile::tempdir().unwrap();
        write_topology(dir.path(), &t).unwrap();
        let p = dir.path().join("topology.json");
        let raw = fs::read_to_string(&p).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&p, raw).unwrap();
        assert!(matches!(read_topology(dir.path()), Err(Error::Parse { .. })));
    }
}
