//! Text serialization for [`GbdtModel`].
//!
//! ```text
//! saia-gbdt 1
//! objective softmax 3
//! features 4
//! learning_rate 0.3
//! base_score 0.0
//! rounds 2
//! columns node_id,feature,threshold,left,right,leaf_weight
//!
//! tree 0 0 scale 1.0 nodes 3
//! 0,2,0.5,1,2,
//! 1,,,,,-0.25
//! 2,,,,,0.4
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so write → read → write
//! is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GbdtModel, Objective, ScaledTree, Tree, TreeNode};
use crate::error::{Error, Result};

const MAGIC: &str = "saia-gbdt 1";
const COLUMNS: &str = "node_id,feature,threshold,left,right,leaf_weight";

impl GbdtModel {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let objective = match self.objective {
            Objective::Logistic => "logistic 2".to_string(),
            Objective::Softmax(m) => format!("softmax {m}"),
        };
        // Writing to a String is infallible.
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "objective {objective}");
        let _ = writeln!(out, "features {}", self.feature_count);
        let _ = writeln!(out, "learning_rate {:?}", self.learning_rate);
        let _ = writeln!(out, "base_score {:?}", self.base_score);
        let _ = writeln!(out, "rounds {}", self.rounds.len());
        let _ = writeln!(out, "columns {COLUMNS}");
        for (r, round) in self.rounds.iter().enumerate() {
            for (k, st) in round.iter().enumerate() {
                let _ = writeln!(out);
                let _ = writeln!(out, "tree {r} {k} scale {:?} nodes {}", st.scale, st.tree.nodes.len());
                for (id, node) in st.tree.nodes.iter().enumerate() {
                    let _ = match node {
                        TreeNode::Split { feature, threshold, left, right } => {
                            writeln!(out, "{id},{feature},{threshold:?},{left},{right},")
                        }
                        TreeNode::Leaf { weight } => writeln!(out, "{id},,,,,{weight:?}"),
                    };
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<GbdtModel> {
        Parser { lines: text.lines().enumerate().peekable() }.model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GbdtModel> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GbdtModel::from_text(&text)
    }
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::ModelFormat(format!("line {}: {msg}", line + 1))
}

fn num<T: std::str::FromStr>(line: usize, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| err(line, format!("cannot parse `{raw}`")))
}

impl Parser<'_> {
    /// Next non-blank line.
    fn next(&mut self) -> Result<(usize, &str)> {
        for (n, line) in self.lines.by_ref() {
            if !line.trim().is_empty() {
                return Ok((n, line.trim()));
            }
        }
        Err(Error::ModelFormat("unexpected end of file".into()))
    }

    fn keyed(&mut self, key: &str) -> Result<(usize, Vec<String>)> {
        let (n, line) = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(err(n, format!("expected `{key}`")));
        }
        Ok((n, parts.map(str::to_string).collect()))
    }

    fn model(mut self) -> Result<GbdtModel> {
        let (n, magic) = self.next()?;
        if magic != MAGIC {
            return Err(err(n, "not a saia-gbdt model"));
        }
        let (n, obj) = self.keyed("objective")?;
        let objective = match obj.as_slice() {
            [kind, m] if kind == "logistic" && m == "2" => Objective::Logistic,
            [kind, m] if kind == "softmax" => Objective::Softmax(num(n, m)?),
            _ => return Err(err(n, "unknown objective")),
        };
        let (n, v) = self.keyed("features")?;
        let feature_count: usize = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = self.keyed("learning_rate")?;
        let learning_rate: f64 = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = self.keyed("base_score")?;
        let base_score: f64 = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = self.keyed("rounds")?;
        let round_count: usize = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = self.keyed("columns")?;
        if v.first().map(String::as_str) != Some(COLUMNS) {
            return Err(err(n, "unexpected node columns"));
        }

        let mut rounds = Vec::with_capacity(round_count);
        for r in 0..round_count {
            let mut round = Vec::with_capacity(objective.arity());
            for k in 0..objective.arity() {
                let (n, head) = self.keyed("tree")?;
                let [tr, tk, scale_kw, scale, nodes_kw, count] = head.as_slice() else {
                    return Err(err(n, "malformed tree header"));
                };
                if num::<usize>(n, tr)? != r || num::<usize>(n, tk)? != k || scale_kw != "scale" || nodes_kw != "nodes" {
                    return Err(err(n, format!("expected tree {r} {k}")));
                }
                let scale: f64 = num(n, scale)?;
                let count: usize = num(n, count)?;
                let mut nodes = Vec::with_capacity(count);
                for id in 0..count {
                    let (n, line) = self.next()?;
                    nodes.push(parse_node(n, id, line)?);
                }
                let tree = Tree::from_nodes(nodes, feature_count).map_err(|m| err(n, m))?;
                round.push(ScaledTree { tree, scale });
            }
            rounds.push(round);
        }
        if let Ok((n, _)) = self.next() {
            return Err(err(n, "trailing content"));
        }
        GbdtModel::new(objective, feature_count, base_score, learning_rate, rounds)
    }
}

fn parse_node(n: usize, id: usize, line: &str) -> Result<TreeNode> {
    let cells: Vec<&str> = line.split(',').collect();
    let [node_id, feature, threshold, left, right, weight] = cells.as_slice() else {
        return Err(err(n, "node rows have 6 columns"));
    };
    if num::<usize>(n, node_id)? != id {
        return Err(err(n, format!("expected node {id}")));
    }
    match (feature.is_empty(), weight.is_empty()) {
        (true, false) if threshold.is_empty() && left.is_empty() && right.is_empty() => {
            Ok(TreeNode::Leaf { weight: num(n, weight)? })
        }
        (false, true) => Ok(TreeNode::Split {
            feature: num(n, feature)?,
            threshold: num(n, threshold)?,
            left: num(n, left)?,
            right: num(n, right)?,
        }),
        _ => Err(err(n, "node must be either a split or a leaf")),
    }
}
