//! Finite rooted plane trees with integer labels.
//!
//! Vertices are stored in depth-first (preorder) order with the root at
//! index 0; child lists are contiguous slices of a flat array.

use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("malformed contour: {0}")]
    Contour(String),
    #[error("label jump of {jump} on edge {parent} -> {child}")]
    LabelJump { parent: usize, child: usize, jump: i64 },
    #[error("label count {labels} does not match vertex count {vertices}")]
    LabelCount { labels: usize, vertices: usize },
    #[error("truncation generation {s} exceeds spine horizon {g}")]
    Horizon { s: usize, g: usize },
    #[error("subtree at spine position {0} has the wrong root label")]
    SubtreeRoot(usize),
    #[error("spine is not a valid label path: {0}")]
    Spine(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlaneTree {
    parent: Vec<usize>,
    child_start: Vec<usize>,
    child_list: Vec<usize>,
    depth: Vec<usize>,
}

const NO_PARENT: usize = usize::MAX;

impl PlaneTree {
    pub fn single() -> Self {
        PlaneTree {
            parent: vec![NO_PARENT],
            child_start: vec![0, 0],
            child_list: Vec::new(),
            depth: vec![0],
        }
    }

    /// Builds a tree from an up/down step sequence (true = step away from
    /// the root). The sequence must be a Dyck word.
    pub fn from_dyck(steps: &[bool]) -> Result<Self, TreeError> {
        let mut b = TreeBuilder::new();
        let mut stack = vec![0usize];
        for (t, &up) in steps.iter().enumerate() {
            if up {
                let top = *stack.last().unwrap();
                let c = b.add_child(top);
                stack.push(c);
            } else {
                if stack.len() == 1 {
                    return Err(TreeError::Contour(format!("walk goes below 0 at step {t}")));
                }
                stack.pop();
            }
        }
        if stack.len() != 1 {
            return Err(TreeError::Contour("walk does not return to 0".into()));
        }
        Ok(b.finish_shape())
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn edges(&self) -> usize {
        self.parent.len() - 1
    }

    pub fn parent(&self, u: usize) -> Option<usize> {
        match self.parent[u] {
            NO_PARENT => None,
            p => Some(p),
        }
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.child_list[self.child_start[u]..self.child_start[u + 1]]
    }

    /// Generation |u| of a vertex.
    pub fn depth(&self, u: usize) -> usize {
        self.depth[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.children(u).len() + usize::from(u != 0)
    }

    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    /// Up/down step sequence of the contour walk.
    pub fn dyck_word(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(2 * self.edges());
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        while let Some(&mut (u, ref mut i)) = stack.last_mut() {
            let ch = self.children(u);
            if *i < ch.len() {
                let c = ch[*i];
                *i += 1;
                out.push(true);
                stack.push((c, 0));
            } else {
                stack.pop();
                if !stack.is_empty() {
                    out.push(false);
                }
            }
        }
        out
    }

    /// Vertex visited at each integer time 0..=2n of the contour walk.
    pub fn contour_vertices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(2 * self.edges() + 1);
        out.push(0);
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
        while let Some(&mut (u, ref mut i)) = stack.last_mut() {
            let ch = self.children(u);
            if *i < ch.len() {
                let c = ch[*i];
                *i += 1;
                out.push(c);
                stack.push((c, 0));
            } else {
                stack.pop();
                if let Some(&(p, _)) = stack.last() {
                    out.push(p);
                }
            }
        }
        out
    }
}

/// Incremental construction in arbitrary order; `finish` renumbers the
/// vertices into preorder.
#[derive(Debug, Clone, Default)]
pub struct TreeBuilder {
    kids: Vec<Vec<usize>>,
    labels: Vec<i32>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        TreeBuilder { kids: vec![Vec::new()], labels: vec![0] }
    }

    pub fn with_root_label(label: i32) -> Self {
        TreeBuilder { kids: vec![Vec::new()], labels: vec![label] }
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.kids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kids.is_empty()
    }

    pub fn label(&self, u: usize) -> i32 {
        self.labels[u]
    }

    /// Appends a new last child of `parent`.
    pub fn add_child(&mut self, parent: usize) -> usize {
        let l = self.labels[parent];
        self.add_labeled_child(parent, l)
    }

    pub fn add_labeled_child(&mut self, parent: usize, label: i32) -> usize {
        let id = self.kids.len();
        self.kids.push(Vec::new());
        self.labels.push(label);
        self.kids[parent].push(id);
        id
    }

    /// Copies `t` below `at`, merging the root of `t` into `at`.
    pub fn graft_children(&mut self, at: usize, t: &LabeledTree) {
        let mut map = vec![0usize; t.len()];
        map[0] = at;
        for u in 1..t.len() {
            let p = map[t.shape.parent[u]];
            map[u] = self.add_labeled_child(p, t.labels[u]);
        }
    }

    fn order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.kids.len());
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            order.push(u);
            for &c in self.kids[u].iter().rev() {
                stack.push(c);
            }
        }
        order
    }

    fn finish_shape(self) -> PlaneTree {
        self.build().0
    }

    fn build(self) -> (PlaneTree, Vec<i32>) {
        let order = self.order();
        let mut new_id = vec![0usize; self.kids.len()];
        for (i, &u) in order.iter().enumerate() {
            new_id[u] = i;
        }
        let n = order.len();
        let mut parent = vec![NO_PARENT; n];
        let mut depth = vec![0usize; n];
        let mut child_start = Vec::with_capacity(n + 1);
        let mut child_list = Vec::with_capacity(n.saturating_sub(1));
        let mut labels = Vec::with_capacity(n);
        for &u in &order {
            let nu = new_id[u];
            child_start.push(child_list.len());
            labels.push(self.labels[u]);
            for &c in &self.kids[u] {
                let nc = new_id[c];
                parent[nc] = nu;
                depth[nc] = depth[nu] + 1;
                child_list.push(nc);
            }
        }
        child_start.push(child_list.len());
        (PlaneTree { parent, child_start, child_list, depth }, labels)
    }

    pub fn finish(self) -> Result<LabeledTree, TreeError> {
        let (shape, labels) = self.build();
        LabeledTree::new(shape, labels)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledTree {
    shape: PlaneTree,
    labels: Vec<i32>,
}

impl LabeledTree {
    pub fn new(shape: PlaneTree, labels: Vec<i32>) -> Result<Self, TreeError> {
        if labels.len() != shape.len() {
            return Err(TreeError::LabelCount { labels: labels.len(), vertices: shape.len() });
        }
        for u in 1..shape.len() {
            let p = shape.parent[u];
            let jump = labels[u] as i64 - labels[p] as i64;
            if jump.abs() > 1 {
                return Err(TreeError::LabelJump { parent: p, child: u, jump });
            }
        }
        Ok(LabeledTree { shape, labels })
    }

    pub fn single(label: i32) -> Self {
        LabeledTree { shape: PlaneTree::single(), labels: vec![label] }
    }

    /// A root with one leaf child per entry of `child_labels`.
    pub fn star(root: i32, child_labels: &[i32]) -> Result<Self, TreeError> {
        let mut b = TreeBuilder::with_root_label(root);
        for &l in child_labels {
            b.add_labeled_child(0, l);
        }
        b.finish()
    }

    /// Labels the shape by root label plus cumulative edge increments;
    /// `increments[u - 1]` is the increment on the edge into vertex `u`.
    pub fn from_increments(shape: PlaneTree, root: i32, increments: &[i8]) -> Result<Self, TreeError> {
        let mut labels = vec![root; shape.len()];
        for u in 1..shape.len() {
            labels[u] = labels[shape.parent[u]] + increments[u - 1] as i32;
        }
        LabeledTree::new(shape, labels)
    }

    pub fn shape(&self) -> &PlaneTree {
        &self.shape
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn label(&self, u: usize) -> i32 {
        self.labels[u]
    }

    pub fn root_label(&self) -> i32 {
        self.labels[0]
    }

    pub fn len(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shape.is_empty()
    }

    /// |ω|, the number of edges.
    pub fn edges(&self) -> usize {
        self.shape.edges()
    }

    pub fn height(&self) -> usize {
        self.shape.height()
    }

    pub fn min_label(&self) -> i32 {
        *self.labels.iter().min().unwrap()
    }

    /// Number of vertices at generation `s`.
    pub fn generation_size(&self, s: usize) -> usize {
        self.shape.depth.iter().filter(|&&d| d == s).count()
    }

    /// Number of vertices carrying label `l`.
    pub fn label_count(&self, l: i32) -> usize {
        self.labels.iter().filter(|&&x| x == l).count()
    }

    /// Number of corners carrying label `l`.
    pub fn corner_count(&self, l: i32) -> usize {
        (0..self.len()).filter(|&u| self.labels[u] == l).map(|u| self.shape.degree(u)).sum()
    }

    /// Vertex of each corner 0..2n-1 in contour order. A single-vertex tree
    /// has no corners.
    pub fn corners(&self) -> Vec<usize> {
        let mut cv = self.shape.contour_vertices();
        cv.pop();
        cv
    }

    pub fn to_contour(&self) -> ContourPair {
        encode_contour(self)
    }
}

impl fmt::Display for LabeledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_contour())
    }
}

/// True iff the root label is `base`, every label is at least 1 and every
/// edge increment lies in {-1, 0, 1}.
pub fn is_well_labeled(t: &LabeledTree, base: i32) -> bool {
    t.root_label() == base && t.min_label() >= 1
}

/// B_{T,S}(t): all vertices of generation at most `s`.
pub fn truncate_tree(t: &LabeledTree, s: usize) -> LabeledTree {
    if t.height() <= s {
        return t.clone();
    }
    let keep: Vec<usize> = (0..t.len()).filter(|&u| t.shape.depth[u] <= s).collect();
    let mut new_id = vec![NO_PARENT; t.len()];
    for (i, &u) in keep.iter().enumerate() {
        new_id[u] = i;
    }
    let mut parent = Vec::with_capacity(keep.len());
    let mut depth = Vec::with_capacity(keep.len());
    let mut labels = Vec::with_capacity(keep.len());
    let mut child_start = Vec::with_capacity(keep.len() + 1);
    let mut child_list = Vec::new();
    for &u in &keep {
        parent.push(match t.shape.parent[u] {
            NO_PARENT => NO_PARENT,
            p => new_id[p],
        });
        depth.push(t.shape.depth[u]);
        labels.push(t.labels[u]);
        child_start.push(child_list.len());
        if t.shape.depth[u] < s {
            child_list.extend(t.shape.children(u).iter().map(|&c| new_id[c]));
        }
    }
    child_start.push(child_list.len());
    LabeledTree { shape: PlaneTree { parent, child_start, child_list, depth }, labels }
}

/// (1 + sup{S : B_S(t1) = B_S(t2)})^-1, with value 1 when the roots
/// already differ and 0 for identical trees.
pub fn tree_local_distance(t1: &LabeledTree, t2: &LabeledTree) -> Rational64 {
    if t1 == t2 {
        return Rational64::from_integer(0);
    }
    if t1.root_label() != t2.root_label() {
        return Rational64::from_integer(1);
    }
    let h = t1.height().max(t2.height());
    let mut last = 0usize;
    for s in 1..=h {
        if truncate_tree(t1, s) == truncate_tree(t2, s) {
            last = s;
        } else {
            break;
        }
    }
    Rational64::new(1, 1 + last as i64)
}

/// Contour and spatial contour sampled at integer times 0..=2n.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContourPair {
    pub c: Vec<i64>,
    pub v: Vec<i64>,
}

impl ContourPair {
    /// Parses the two comma-separated integer lists.
    pub fn from_lists(c: &str, v: &str) -> Result<Self, TreeError> {
        Ok(ContourPair { c: parse_list(c)?, v: parse_list(v)? })
    }

    pub fn c_list(&self) -> String {
        join_list(&self.c)
    }

    pub fn v_list(&self) -> String {
        join_list(&self.v)
    }
}

impl fmt::Display for ContourPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{}", self.c_list(), self.v_list())
    }
}

impl std::str::FromStr for ContourPair {
    type Err = TreeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (c, v) = s
            .split_once(';')
            .ok_or_else(|| TreeError::Parse("expected two lists separated by ';'".into()))?;
        ContourPair::from_lists(c, v)
    }
}

fn parse_list(s: &str) -> Result<Vec<i64>, TreeError> {
    s.split(',')
        .map(|x| x.trim().parse::<i64>().map_err(|e| TreeError::Parse(format!("{x:?}: {e}"))))
        .collect()
}

fn join_list(xs: &[i64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    parts.join(",")
}

pub fn encode_contour(t: &LabeledTree) -> ContourPair {
    let cv = t.shape.contour_vertices();
    ContourPair {
        c: cv.iter().map(|&u| t.shape.depth[u] as i64).collect(),
        v: cv.iter().map(|&u| t.labels[u] as i64).collect(),
    }
}

/// Inverse of `encode_contour`. On a down step the spatial contour must
/// return to the label of the vertex being re-entered.
pub fn decode_contour(p: &ContourPair) -> Result<LabeledTree, TreeError> {
    let (c, v) = (&p.c, &p.v);
    if c.is_empty() || c.len() != v.len() || c.len() % 2 == 0 {
        return Err(TreeError::Contour("sequences must have equal odd length".into()));
    }
    if c[0] != 0 || c[c.len() - 1] != 0 {
        return Err(TreeError::Contour("contour must start and end at 0".into()));
    }
    let root = i32::try_from(v[0]).map_err(|_| TreeError::Contour("label out of range".into()))?;
    let mut b = TreeBuilder::with_root_label(root);
    let mut stack = vec![0usize];
    for t in 0..c.len() - 1 {
        let dv = v[t + 1] - v[t];
        match c[t + 1] - c[t] {
            1 => {
                if dv.abs() > 1 {
                    return Err(TreeError::Contour(format!("label jump {dv} at time {t}")));
                }
                let top = *stack.last().unwrap();
                let u = b.add_labeled_child(top, v[t + 1] as i32);
                stack.push(u);
            }
            -1 => {
                if c[t + 1] < 0 {
                    return Err(TreeError::Contour(format!("negative contour at time {}", t + 1)));
                }
                stack.pop();
                let top = *stack.last().unwrap();
                if b.label(top) as i64 != v[t + 1] {
                    return Err(TreeError::Contour(format!(
                        "label at time {} disagrees with the revisited vertex",
                        t + 1
                    )));
                }
            }
            d => return Err(TreeError::Contour(format!("contour step {d} at time {t}"))),
        }
    }
    b.finish()
}

/// Every plane tree with `n` edges, in lexicographic order of Dyck words
/// (up before down).
pub fn all_plane_trees(n: usize) -> Vec<PlaneTree> {
    fn rec(word: &mut Vec<bool>, ups: usize, downs: usize, n: usize, out: &mut Vec<PlaneTree>) {
        if word.len() == 2 * n {
            out.push(PlaneTree::from_dyck(word).unwrap());
            return;
        }
        if ups < n {
            word.push(true);
            rec(word, ups + 1, downs, n, out);
            word.pop();
        }
        if downs < ups {
            word.push(false);
            rec(word, ups, downs + 1, n, out);
            word.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), 0, 0, n, &mut out);
    out
}

/// Calls `f` on every labeling of `shape` with root label `root` and edge
/// increments in {-1, 0, 1}, in odometer order.
pub fn for_each_labeling(shape: &PlaneTree, root: i32, mut f: impl FnMut(&[i32])) {
    let n = shape.len();
    let mut inc = vec![-1i8; n];
    let mut labels = vec![root; n];
    loop {
        for u in 1..n {
            labels[u] = labels[shape.parent[u]] + inc[u] as i32;
        }
        f(&labels);
        let mut u = n;
        loop {
            if u <= 1 {
                return;
            }
            u -= 1;
            if inc[u] < 1 {
                inc[u] += 1;
                break;
            }
            inc[u] = -1;
        }
    }
}

/// Every labeled tree with `n` edges and root label `root`; with
/// `positive`, only those with all labels at least 1.
pub fn all_labeled_trees(n: usize, root: i32, positive: bool) -> Vec<LabeledTree> {
    let mut out = Vec::new();
    for shape in all_plane_trees(n) {
        for_each_labeling(&shape, root, |labels| {
            if !positive || labels.iter().all(|&l| l >= 1) {
                out.push(LabeledTree { shape: shape.clone(), labels: labels.to_vec() });
            }
        });
    }
    out
}

/// Truncated realization of a tree with a single infinite spine: spine
/// labels y_0..y_G and, at each spine vertex u_k, one left tree and one
/// right tree, both rooted at u_k. The root children of the left tree
/// precede the spine child; those of the right tree follow it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpineTree {
    pub spine: Vec<i32>,
    pub left: Vec<LabeledTree>,
    pub right: Vec<LabeledTree>,
    pub truncation: Option<usize>,
}

impl SpineTree {
    pub fn horizon(&self) -> usize {
        self.spine.len() - 1
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.spine.is_empty() || self.spine[0] != 1 {
            return Err(TreeError::Spine("spine must start at label 1".into()));
        }
        if self.spine.iter().any(|&y| y < 1) {
            return Err(TreeError::Spine("spine label below 1".into()));
        }
        if self.spine.windows(2).any(|w| (w[1] - w[0]).abs() > 1) {
            return Err(TreeError::Spine("spine label jump".into()));
        }
        if self.left.len() != self.spine.len() || self.right.len() != self.spine.len() {
            return Err(TreeError::Spine("one left and one right tree per spine vertex".into()));
        }
        for k in 0..self.spine.len() {
            if self.left[k].root_label() != self.spine[k] || self.right[k].root_label() != self.spine[k] {
                return Err(TreeError::SubtreeRoot(k));
            }
        }
        Ok(())
    }
}

/// The finite tree B_{T,S} determined by a spine realization.
pub fn assemble_spine(s: &SpineTree, depth: usize) -> Result<LabeledTree, TreeError> {
    s.validate()?;
    let g = s.horizon();
    if depth > g {
        return Err(TreeError::Horizon { s: depth, g });
    }
    let mut b = TreeBuilder::with_root_label(s.spine[0]);
    let mut at = 0usize;
    for k in 0..=depth {
        let room = depth - k;
        b.graft_children(at, &truncate_tree(&s.left[k], room));
        let next = if k < depth { Some(b.add_labeled_child(at, s.spine[k + 1])) } else { None };
        b.graft_children(at, &truncate_tree(&s.right[k], room));
        if let Some(n) = next {
            at = n;
        }
    }
    b.finish()
}
