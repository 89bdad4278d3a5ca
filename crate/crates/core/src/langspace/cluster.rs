//! Agglomerative clustering of language vectors and tree utilities.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::kernels::dot;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Linkage {
    /// UPGMA.
    #[default]
    Average,
    Complete,
    Single,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::Config(format!("unknown metric `{s}` (cosine, euclidean)"))),
        }
    }
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "upgma" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            _ => Err(Error::Config(format!(
                "unknown linkage `{s}` (average, complete, single)"
            ))),
        }
    }
}

impl Metric {
    /// Cosine distance is `1 − cos`; a zero vector is treated as orthogonal to everything.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
                if na == 0.0 || nb == 0.0 {
                    return 1.0;
                }
                1.0 - dot(a, b) / (na * nb)
            }
        }
    }
}

/// Binary merge tree. Internal nodes carry the linkage distance at which
/// their two children were merged; leaves sit at height 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DendrogramTree {
    Leaf { name: String },
    Node { children: Vec<DendrogramTree>, height: f64 },
}

impl DendrogramTree {
    pub fn leaf(name: &str) -> Self {
        DendrogramTree::Leaf { name: name.to_string() }
    }

    /// Joins two subtrees; the child with the smaller first leaf goes first.
    pub fn join(a: DendrogramTree, b: DendrogramTree, height: f64) -> Self {
        let (a, b) = if b.min_leaf() < a.min_leaf() { (b, a) } else { (a, b) };
        DendrogramTree::Node {
            children: vec![a, b],
            height,
        }
    }

    pub fn height(&self) -> f64 {
        match self {
            DendrogramTree::Leaf { .. } => 0.0,
            DendrogramTree::Node { height, .. } => *height,
        }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            DendrogramTree::Leaf { name } => out.push(name),
            DendrogramTree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    fn min_leaf(&self) -> &str {
        self.leaves().into_iter().min().unwrap_or("")
    }

    /// Merge heights of internal nodes in post-order.
    pub fn merge_heights(&self) -> Vec<f64> {
        fn walk(t: &DendrogramTree, out: &mut Vec<f64>) {
            if let DendrogramTree::Node { children, height } = t {
                children.iter().for_each(|c| walk(c, out));
                out.push(*height);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Binary, finite non-negative heights, never lower than a child's, unique leaves.
    pub fn validate(&self) -> Result<()> {
        fn walk(t: &DendrogramTree) -> Result<()> {
            if let DendrogramTree::Node { children, height } = t {
                if children.len() != 2 {
                    return Err(Error::Malformed(format!("node with {} children", children.len())));
                }
                if !height.is_finite() || *height < 0.0 {
                    return Err(Error::Malformed(format!("invalid merge height {height}")));
                }
                for c in children {
                    if c.height() > *height {
                        return Err(Error::Malformed(format!(
                            "child height {} above parent height {height}",
                            c.height()
                        )));
                    }
                    walk(c)?;
                }
            }
            Ok(())
        }
        walk(self)?;
        let leaves = self.leaves();
        let unique: BTreeSet<&str> = leaves.iter().copied().collect();
        if unique.len() != leaves.len() {
            return Err(Error::Malformed("duplicate leaf names".into()));
        }
        Ok(())
    }

    /// Newick string; a leaf below a merge at height `h` gets branch length
    /// `h / 2`, an inner node `(h_parent − h_child) / 2`.
    pub fn to_newick(&self) -> String {
        fn walk(t: &DendrogramTree, parent: f64, out: &mut String) {
            match t {
                DendrogramTree::Leaf { name } => {
                    let _ = write!(out, "{name}:{:?}", parent / 2.0);
                }
                DendrogramTree::Node { children, height } => {
                    out.push('(');
                    for (i, c) in children.iter().enumerate() {
                        if i > 0 {
                            out.push(',');
                        }
                        walk(c, *height, out);
                    }
                    let _ = write!(out, "):{:?}", (parent - height) / 2.0);
                }
            }
        }
        match self {
            DendrogramTree::Leaf { name } => format!("{name};"),
            DendrogramTree::Node { children, height } => {
                let mut s = String::from("(");
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        s.push(',');
                    }
                    walk(c, *height, &mut s);
                }
                s.push_str(");");
                s
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: DendrogramTree =
            serde_json::from_str(text).map_err(|e| Error::Malformed(format!("tree JSON: {e}")))?;
        tree.validate()?;
        Ok(tree)
    }

    /// Non-trivial bipartitions of the unrooted tree, each given by the side
    /// that excludes the smallest leaf.
    pub fn splits(&self) -> BTreeSet<BTreeSet<String>> {
        let all: BTreeSet<String> = self.leaves().into_iter().map(String::from).collect();
        let anchor = all.iter().next().cloned().unwrap_or_default();
        let mut out = BTreeSet::new();
        fn walk(t: &DendrogramTree, all: &BTreeSet<String>, anchor: &str, out: &mut BTreeSet<BTreeSet<String>>) {
            if let DendrogramTree::Node { children, .. } = t {
                let side: BTreeSet<String> = t.leaves().into_iter().map(String::from).collect();
                let side = if side.contains(anchor) {
                    all.difference(&side).cloned().collect()
                } else {
                    side
                };
                if side.len() >= 2 && side.len() + 2 <= all.len() {
                    out.insert(side);
                }
                children.iter().for_each(|c| walk(c, all, anchor, out));
            }
        }
        walk(self, &all, &anchor, &mut out);
        out
    }
}

/// Robinson–Foulds distance: bipartitions present in exactly one tree.
pub fn robinson_foulds(a: &DendrogramTree, b: &DendrogramTree) -> Result<usize> {
    let la: BTreeSet<&str> = a.leaves().into_iter().collect();
    let lb: BTreeSet<&str> = b.leaves().into_iter().collect();
    if la != lb {
        return Err(Error::Contract("trees have different leaf sets".into()));
    }
    Ok(a.splits().symmetric_difference(&b.splits()).count())
}

/// Pairwise distance matrix.
pub fn distance_matrix(vectors: &[Vec<f64>], metric: Metric) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = metric.distance(&vectors[i], &vectors[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Agglomerative clustering of `(code, vector)` pairs.
///
/// The closest pair under `linkage` merges first; equal distances are broken
/// by the smallest language code of each cluster, compared as a pair, so the
/// tree does not depend on input order.
pub fn cluster(items: &[(String, Vec<f64>)], metric: Metric, linkage: Linkage) -> Result<DendrogramTree> {
    if items.len() < 2 {
        return Err(Error::Config(format!(
            "clustering needs at least 2 languages, got {}",
            items.len()
        )));
    }
    let dim = items[0].1.len();
    for (code, v) in items {
        if v.len() != dim {
            return Err(Error::shape("cluster", &[dim], &[v.len()]));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("vector of `{code}`")));
        }
    }
    let names: BTreeSet<&str> = items.iter().map(|(c, _)| c.as_str()).collect();
    if names.len() != items.len() {
        return Err(Error::Config("duplicate language codes".into()));
    }

    let vectors: Vec<Vec<f64>> = items.iter().map(|(_, v)| v.clone()).collect();
    let mut dist = distance_matrix(&vectors, metric);
    // active clusters: (tree, size, smallest member code); `None` once merged
    let mut clusters: Vec<Option<(DendrogramTree, usize, String)>> = items
        .iter()
        .map(|(c, _)| Some((DendrogramTree::leaf(c), 1, c.clone())))
        .collect();

    for _ in 1..items.len() {
        let mut best: Option<(f64, &str, &str, usize, usize)> = None;
        for i in 0..clusters.len() {
            let Some((_, _, ki)) = &clusters[i] else { continue };
            for j in i + 1..clusters.len() {
                let Some((_, _, kj)) = &clusters[j] else { continue };
                let (lo, hi) = if ki < kj { (ki, kj) } else { (kj, ki) };
                let cand = (dist[i][j], lo.as_str(), hi.as_str(), i, j);
                let better = match &best {
                    None => true,
                    Some(b) => (cand.0, cand.1, cand.2) < (b.0, b.1, b.2),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (d, _, _, i, j) = best.expect("at least two active clusters");
        let (ti, ni, ki) = clusters[i].take().unwrap();
        let (tj, nj, kj) = clusters[j].take().unwrap();
        // Lance–Williams update into slot i
        for k in 0..clusters.len() {
            if k == i || clusters[k].is_none() {
                continue;
            }
            let (a, b) = (dist[i][k], dist[j][k]);
            let v = match linkage {
                Linkage::Single => a.min(b),
                Linkage::Complete => a.max(b),
                Linkage::Average => (ni as f64 * a + nj as f64 * b) / (ni + nj) as f64,
            };
            dist[i][k] = v;
            dist[k][i] = v;
        }
        clusters[i] = Some((DendrogramTree::join(ti, tj, d), ni + nj, ki.min(kj)));
    }
    Ok(clusters.into_iter().flatten().next().unwrap().0)
}
