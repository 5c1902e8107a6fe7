//! Plain-text dataset bundles.
//!
//! A bundle is a directory holding:
//!
//! ```text
//! edges.txt     one "i j" pair per line (undirected; symmetrized on load)
//! features.txt  header "n d nnz", then sparse "i j value" triplets
//! labels.txt    one "i label" per line; nodes not listed are unlabeled
//! splits.txt    three lines of space-separated indices: train, val, test
//! meta.txt      key=value lines; `classes` is required, `name` optional
//! ```
//!
//! Indices are dense, 0-based decimal integers. `#` starts a comment line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::{EdgeCleanup, Graph, Label, NodeData, Splits};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub data: NodeData,
}

/// Loader diagnostics.
#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub edges: EdgeCleanup,
    pub labeled: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_fields<const N: usize>(path: &Path, line: usize, s: &str) -> Result<[usize; N]> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(
            path,
            line,
            format!("expected {N} fields, found {}", parts.len()),
        ));
    }
    let mut out = [0usize; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|e| parse_err(path, line, format!("`{p}`: {e}")))?;
    }
    Ok(out)
}

fn parse_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read(path)?;
    let mut meta = BTreeMap::new();
    for (ln, line) in content_lines(&text) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, ln, "expected key=value"))?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(meta)
}

/// Load a dataset bundle directory.
pub fn load_graph_text(dir: &Path) -> Result<(Dataset, LoadReport)> {
    let meta_path = dir.join("meta.txt");
    let meta = parse_meta(&meta_path)?;
    let num_classes: usize = meta
        .get("classes")
        .ok_or_else(|| parse_err(&meta_path, 0, "missing `classes`"))?
        .parse()
        .map_err(|e| parse_err(&meta_path, 0, format!("classes: {e}")))?;
    let name = meta.get("name").cloned().unwrap_or_else(|| {
        dir.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });

    let feat_path = dir.join("features.txt");
    let features = CsrMatrix::read_triplets(&feat_path)?;
    let n = features.nrows();

    let edge_path = dir.join("edges.txt");
    let edge_text = read(&edge_path)?;
    let mut pairs = Vec::new();
    for (ln, line) in content_lines(&edge_text) {
        let [i, j] = parse_fields::<2>(&edge_path, ln, line)?;
        for x in [i, j] {
            if x >= n {
                return Err(Error::NodeOutOfRange { index: x, n });
            }
        }
        pairs.push((i, j));
    }
    let (graph, cleanup) = Graph::from_edges(n, pairs)?;
    if cleanup.self_loops + cleanup.duplicates > 0 {
        log::warn!(
            "{}: dropped {} self-loops and {} duplicate edges",
            edge_path.display(),
            cleanup.self_loops,
            cleanup.duplicates
        );
    }

    let label_path = dir.join("labels.txt");
    let label_text = read(&label_path)?;
    let mut labels = vec![Label::UNLABELED; n];
    for (ln, line) in content_lines(&label_text) {
        let [i, c] = parse_fields::<2>(&label_path, ln, line)?;
        if i >= n {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        if c >= num_classes {
            return Err(parse_err(
                &label_path,
                ln,
                format!("label {c} outside {num_classes} classes"),
            ));
        }
        labels[i] = Label::class(c);
    }

    let split_path = dir.join("splits.txt");
    let split_text = read(&split_path)?;
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for (ln, line) in split_text.lines().enumerate() {
        if sets.len() == 3 {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(
                &split_path,
                ln + 1,
                "more than three split lines",
            ));
        }
        let set = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| parse_err(&split_path, ln + 1, format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(set);
    }
    if sets.len() != 3 {
        return Err(parse_err(
            &split_path,
            0,
            "expected three lines (train, val, test)",
        ));
    }
    let test = sets.pop().unwrap();
    let val = sets.pop().unwrap();
    let train = sets.pop().unwrap();

    let labeled = labels.iter().filter(|l| l.is_labeled()).count();
    let data = NodeData::new(features, labels, num_classes, Splits { train, val, test })?;
    Ok((
        Dataset { name, graph, data },
        LoadReport {
            edges: cleanup,
            labeled,
        },
    ))
}

/// Write a dataset as a bundle directory (created if missing).
pub fn write_bundle(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| -> Result<()> {
        let p: PathBuf = dir.join(name);
        let mut f = fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(&p, e))
    };
    let mut edges = String::new();
    for (i, j) in dataset.graph.edges() {
        edges.push_str(&format!("{i} {j}\n"));
    }
    write("edges.txt", edges)?;
    dataset
        .data
        .features
        .write_triplets(&dir.join("features.txt"))?;
    let mut labels = String::new();
    for (i, l) in dataset.data.labels.iter().enumerate() {
        if let Some(c) = l.get() {
            labels.push_str(&format!("{i} {c}\n"));
        }
    }
    write("labels.txt", labels)?;
    let line = |v: &[usize]| {
        v.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(" ")
    };
    let s = &dataset.data.splits;
    write(
        "splits.txt",
        format!("{}\n{}\n{}\n", line(&s.train), line(&s.val), line(&s.test)),
    )?;
    write(
        "meta.txt",
        format!(
            "classes={}\nname={}\n",
            dataset.data.num_classes, dataset.name
        ),
    )
}
