use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeteroGraph, Relation};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    node_types: Vec<String>,
    nodes: Vec<NodeEntry>,
    relations: Vec<RelationEntry>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    #[serde(rename = "type")]
    ty: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationEntry {
    name: String,
    src_type: usize,
    dst_type: usize,
    edges: Vec<[usize; 2]>,
}

pub fn parse_graph(text: &str) -> Result<HeteroGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| {
        Error::format(
            format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;

    let n = file.nodes.len();
    let width = file.features.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(n * width);
    for (i, row) in file.features.iter().enumerate() {
        if row.len() != width {
            return Err(Error::format(
                format!("features[{i}]"),
                format!("row has {} values, expected {width}", row.len()),
            ));
        }
        data.extend_from_slice(row);
    }
    let features = Matrix::from_vec(file.features.len(), width, data)?;
    let relations = file
        .relations
        .into_iter()
        .map(|r| Relation {
            name: r.name,
            src_type: r.src_type,
            dst_type: r.dst_type,
            edges: r.edges.into_iter().map(|[s, d]| (s, d)).collect(),
        })
        .collect();
    HeteroGraph::new(
        file.node_types,
        file.nodes.into_iter().map(|e| e.ty).collect(),
        relations,
        features,
        file.labels,
    )
}

pub fn to_json(g: &HeteroGraph) -> String {
    let file = GraphFile {
        node_types: g.type_names().to_vec(),
        nodes: g.node_types().iter().map(|&ty| NodeEntry { ty }).collect(),
        relations: g
            .relations()
            .iter()
            .map(|r| RelationEntry {
                name: r.name.clone(),
                src_type: r.src_type,
                dst_type: r.dst_type,
                edges: r.edges.iter().map(|&(s, d)| [s, d]).collect(),
            })
            .collect(),
        features: (0..g.node_count())
            .map(|i| g.features().row(i).to_vec())
            .collect(),
        labels: g.labels().map(|l| l.to_vec()),
    };
    serde_json::to_string(&file).expect("graph serializes")
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<HeteroGraph> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_graph(&text)
}

pub fn save_graph(g: &HeteroGraph, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), to_json(g))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isolated_nodes() {
        let g = parse_graph(
            r#"{"node_types":["a"],"nodes":[{"type":0},{"type":0},{"type":0}],
                "relations":[],"features":[[1.0],[2.0],[3.0]]}"#,
        )
        .unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 0);
        assert_eq!(g.labels(), None);
    }

    #[test]
    fn out_of_range_index() {
        let err = parse_graph(
            r#"{"node_types":["a"],"nodes":[{"type":0},{"type":0}],
                "relations":[{"name":"r","src_type":0,"dst_type":0,"edges":[[0,2]]}],
                "features":[[0.0],[0.0]]}"#,
        )
        .unwrap_err();
        match err {
            Error::Format { context, .. } => assert_eq!(context, "relations[0].edges[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_graph(
            r#"{"node_types":["a"],"nodes":[{"type":0}],"relations":[],
                "features":[[0.0]],"extra":1}"#,
        )
        .unwrap_err();
        match err {
            Error::Format { context, message } => {
                assert!(context.starts_with("line 2"), "{context}");
                assert!(message.contains("extra"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_features_and_duplicates() {
        assert!(parse_graph(
            r#"{"node_types":["a"],"nodes":[{"type":0},{"type":0}],"relations":[],
                "features":[[0.0],[0.0, 1.0]]}"#
        )
        .is_err());
        assert!(parse_graph(
            r#"{"node_types":["a"],"nodes":[{"type":0},{"type":0}],
                "relations":[{"name":"r","src_type":0,"dst_type":0,"edges":[[0,1],[0,1]]}],
                "features":[[0.0],[0.0]]}"#
        )
        .is_err());
    }

    #[test]
    fn round_trip_with_labels() {
        let text = r#"{"node_types":["a","b"],"nodes":[{"type":0},{"type":1}],
            "relations":[{"name":"ab","src_type":0,"dst_type":1,"edges":[[0,1]]}],
            "features":[[0.25,-1.5],[3.0,1e-7]],"labels":[1,0]}"#;
        let g = parse_graph(text).unwrap();
        let again = parse_graph(&to_json(&g)).unwrap();
        assert_eq!(g, again);
        assert_eq!(again.label_count(), 2);
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        let g = parse_graph(
            r#"{"node_types":["v"],"nodes":[{"type":0},{"type":0}],
            "relations":[{"name":"e","src_type":0,"dst_type":0,"edges":[[1,0]]}],
            "features":[[0.1],[0.2]]}"#,
        )
        .unwrap();
        save_graph(&g, &path).unwrap();
        assert_eq!(load_graph(&path).unwrap(), g);
        assert!(load_graph(dir.path().join("missing.json")).is_err());
    }
}
