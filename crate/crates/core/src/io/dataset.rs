//! On-disk dataset layout.
//!
//! A dataset directory holds `schema.json` (the manifest), one
//! `nodes_<type>.csv` per node type (`id,f0..f{d-1}`), one `edges_<rel>.csv`
//! per relation (`src,dst`), `labels.csv` (`id,label`) for the target type and
//! `splits.json`. Floats are written in shortest round-trip form, so saving a
//! loaded dataset reproduces canonical files byte for byte.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_file, write_atomic, Dataset};
use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, MetaPath, Relation, Schema, Splits};
use crate::tensor::Matrix;

pub const MANIFEST_FILE: &str = "schema.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeTypeEntry {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationEntry {
    pub name: String,
    pub source: String,
    pub target: String,
    pub count: usize,
}

/// Contents of `schema.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub target_type: String,
    pub num_classes: usize,
    pub node_types: Vec<NodeTypeEntry>,
    pub relations: Vec<RelationEntry>,
    /// Relation names per meta-path, `~` marking a reversed step.
    pub meta_paths: Vec<Vec<String>>,
}

impl DatasetManifest {
    pub fn describe(ds: &Dataset) -> Self {
        let g = &ds.graph;
        DatasetManifest {
            name: ds.name.clone(),
            target_type: g.schema.node_types[g.target_type].clone(),
            num_classes: g.num_classes,
            node_types: g
                .schema
                .node_types
                .iter()
                .zip(&g.node_counts)
                .zip(&g.features)
                .map(|((name, &count), f)| NodeTypeEntry {
                    name: name.clone(),
                    count,
                    feature_dim: f.cols(),
                })
                .collect(),
            relations: g
                .schema
                .relations
                .iter()
                .zip(&g.edges)
                .map(|(r, e)| RelationEntry {
                    name: r.name.clone(),
                    source: r.source.clone(),
                    target: r.target.clone(),
                    count: e.len(),
                })
                .collect(),
            meta_paths: ds.meta_paths.iter().map(MetaPath::to_strings).collect(),
        }
    }
}

fn load_err(path: &Path, line: Option<u64>, message: impl Into<String>) -> Error {
    Error::Load {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // writing to a Vec cannot fail
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Parses a headered CSV, checking the header and the row count. Yields
/// `(line, fields)`.
fn read_csv(path: &Path, header: &[String], expected_rows: usize) -> Result<Vec<(u64, Vec<String>)>> {
    let bytes = read_file(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let found: Vec<String> = r
        .headers()
        .map_err(|e| load_err(path, Some(1), e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(load_err(
            path,
            Some(1),
            format!("header {found:?}, expected {header:?}"),
        ));
    }
    let mut rows = Vec::with_capacity(expected_rows);
    for rec in r.records() {
        let rec = rec.map_err(|e| load_err(path, e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    if rows.len() != expected_rows {
        return Err(load_err(
            path,
            None,
            format!("{} rows, manifest declares {expected_rows}", rows.len()),
        ));
    }
    Ok(rows)
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, field: &str, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| load_err(path, Some(line), format!("malformed {what} {field:?}")))
}

/// Resolves a dataset directory or a path to its `schema.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates a dataset from its directory or manifest path.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let dir = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let manifest: DatasetManifest = serde_json::from_slice(&read_file(&manifest_file)?)
        .map_err(|e| load_err(&manifest_file, Some(e.line() as u64), e.to_string()))?;

    let schema = Schema {
        node_types: manifest.node_types.iter().map(|t| t.name.clone()).collect(),
        relations: manifest
            .relations
            .iter()
            .map(|r| Relation {
                name: r.name.clone(),
                source: r.source.clone(),
                target: r.target.clone(),
            })
            .collect(),
    };
    let target_type = schema
        .node_type(&manifest.target_type)
        .ok_or_else(|| load_err(&manifest_file, None, format!("unknown target type {:?}", manifest.target_type)))?;
    let type_index = |name: &str| {
        schema
            .node_type(name)
            .ok_or_else(|| load_err(&manifest_file, None, format!("unknown node type {name:?}")))
    };

    let mut features = Vec::with_capacity(manifest.node_types.len());
    for t in &manifest.node_types {
        let file = dir.join(format!("nodes_{}.csv", t.name));
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain((0..t.feature_dim).map(|k| format!("f{k}")))
            .collect();
        let rows = read_csv(&file, &header, t.count)?;
        let mut m = Matrix::zeros(t.count, t.feature_dim);
        for (i, (line, fields)) in rows.iter().enumerate() {
            let id: usize = parse_field(&file, *line, &fields[0], "node id")?;
            if id != i {
                return Err(load_err(&file, Some(*line), format!("node id {id}, expected {i}")));
            }
            for (x, f) in m.row_mut(i).iter_mut().zip(&fields[1..]) {
                *x = parse_field(&file, *line, f, "feature value")?;
            }
        }
        features.push(m);
    }
    let node_counts: Vec<usize> = manifest.node_types.iter().map(|t| t.count).collect();

    let mut edges = Vec::with_capacity(manifest.relations.len());
    for r in &manifest.relations {
        let file = dir.join(format!("edges_{}.csv", r.name));
        let (s, t) = (type_index(&r.source)?, type_index(&r.target)?);
        let rows = read_csv(&file, &["src".into(), "dst".into()], r.count)?;
        let mut list = Vec::with_capacity(r.count);
        for (line, fields) in &rows {
            let a: usize = parse_field(&file, *line, &fields[0], "source id")?;
            let b: usize = parse_field(&file, *line, &fields[1], "target id")?;
            if a >= node_counts[s] || b >= node_counts[t] {
                return Err(load_err(&file, Some(*line), format!("edge ({a}, {b}) out of range")));
            }
            list.push((a, b));
        }
        edges.push(list);
    }

    let n_target = node_counts[target_type];
    let file = dir.join("labels.csv");
    let rows = read_csv(&file, &["id".into(), "label".into()], n_target)?;
    let mut labels = vec![0; n_target];
    for (i, (line, fields)) in rows.iter().enumerate() {
        let id: usize = parse_field(&file, *line, &fields[0], "node id")?;
        if id != i {
            return Err(load_err(&file, Some(*line), format!("node id {id}, expected {i}")));
        }
        labels[i] = parse_field(&file, *line, &fields[1], "label")?;
    }

    let file = dir.join("splits.json");
    let splits: Splits = serde_json::from_slice(&read_file(&file)?)
        .map_err(|e| load_err(&file, Some(e.line() as u64), e.to_string()))?;

    let graph = HeteroGraph {
        schema,
        node_counts,
        edges,
        features,
        target_type,
        num_classes: manifest.num_classes,
        labels,
        splits,
    };
    let violations = graph.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidGraph(list.join("; ")));
    }
    let meta_paths: Vec<MetaPath> = manifest.meta_paths.iter().map(|p| MetaPath::parse(p)).collect();
    for p in &meta_paths {
        p.resolve(&graph.schema, &manifest.target_type)?;
    }
    Ok(Dataset {
        name: manifest.name,
        graph,
        meta_paths,
    })
}

/// Writes the dataset in canonical form; returns the files written.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let g = &ds.graph;
    let violations = g.validate();
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidGraph(list.join("; ")));
    }
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    let mut manifest = serde_json::to_vec_pretty(&DatasetManifest::describe(ds))?;
    manifest.push(b'\n');
    put(MANIFEST_FILE.into(), manifest)?;
    for (name, f) in g.schema.node_types.iter().zip(&g.features) {
        let header: Vec<String> = std::iter::once("id".to_string())
            .chain((0..f.cols()).map(|k| format!("f{k}")))
            .collect();
        let rows = (0..f.rows()).map(|i| {
            std::iter::once(i.to_string())
                .chain(f.row(i).iter().map(|x| x.to_string()))
                .collect()
        });
        put(format!("nodes_{name}.csv"), csv_bytes(&header, rows))?;
    }
    for (r, list) in g.schema.relations.iter().zip(&g.edges) {
        let rows = list.iter().map(|&(a, b)| vec![a.to_string(), b.to_string()]);
        put(
            format!("edges_{}.csv", r.name),
            csv_bytes(&["src".into(), "dst".into()], rows),
        )?;
    }
    let rows = g
        .labels
        .iter()
        .enumerate()
        .map(|(i, y)| vec![i.to_string(), y.to_string()]);
    put("labels.csv".into(), csv_bytes(&["id".into(), "label".into()], rows))?;
    let mut splits = serde_json::to_vec(&g.splits)?;
    splits.push(b'\n');
    put("splits.json".into(), splits)?;
    Ok(written)
}
