//! Rooted planar maps as rotation systems, the Schaeffer bijection, balls
//! and canonical codes.
//!
//! Darts are `0..2E`. `alpha` pairs the two darts of an edge, `sigma` gives
//! the next dart counterclockwise around the origin vertex, and faces are
//! the orbits of `phi = sigma . alpha`.

use crate::tree_core::{is_well_labeled, LabeledTree};
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MapError {
    #[error("alpha is not a fixed-point-free involution at dart {0}")]
    Alpha(usize),
    #[error("sigma is not a permutation")]
    Sigma,
    #[error("root dart {0} out of range")]
    Root(usize),
    #[error("the bijection needs a well-labeled tree with at least one edge")]
    Input,
    #[error("not a quadrangulation: {0}")]
    NotQuad(String),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RotationMap {
    alpha: Vec<usize>,
    sigma: Vec<usize>,
    root: usize,
    vertex: Vec<usize>,
    n_vertices: usize,
}

/// JSON fixture form {darts: [twin...], sigma: [next...], root: d}.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapFixture {
    pub darts: Vec<usize>,
    pub sigma: Vec<usize>,
    pub root: usize,
}

impl RotationMap {
    pub fn new(alpha: Vec<usize>, sigma: Vec<usize>, root: usize) -> Result<Self, MapError> {
        let n = alpha.len();
        if sigma.len() != n {
            return Err(MapError::Sigma);
        }
        for d in 0..n {
            let t = alpha[d];
            if t >= n || t == d || alpha[t] != d {
                return Err(MapError::Alpha(d));
            }
        }
        let mut seen = vec![false; n];
        for &s in &sigma {
            if s >= n || seen[s] {
                return Err(MapError::Sigma);
            }
            seen[s] = true;
        }
        if root >= n {
            return Err(MapError::Root(root));
        }
        let (vertex, n_vertices) = orbits(n, |d| sigma[d]);
        Ok(RotationMap { alpha, sigma, root, vertex, n_vertices })
    }

    pub fn from_fixture(f: &MapFixture) -> Result<Self, MapError> {
        RotationMap::new(f.darts.clone(), f.sigma.clone(), f.root)
    }

    pub fn to_fixture(&self) -> MapFixture {
        MapFixture { darts: self.alpha.clone(), sigma: self.sigma.clone(), root: self.root }
    }

    pub fn darts(&self) -> usize {
        self.alpha.len()
    }

    pub fn edges(&self) -> usize {
        self.alpha.len() / 2
    }

    pub fn vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn root_vertex(&self) -> usize {
        self.vertex[self.root]
    }

    pub fn alpha(&self, d: usize) -> usize {
        self.alpha[d]
    }

    pub fn sigma(&self, d: usize) -> usize {
        self.sigma[d]
    }

    pub fn phi(&self, d: usize) -> usize {
        self.sigma[self.alpha[d]]
    }

    /// Origin vertex of a dart.
    pub fn vertex(&self, d: usize) -> usize {
        self.vertex[d]
    }

    /// Face orbits of phi, each listed from its smallest dart.
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let n = self.darts();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for d in 0..n {
            if seen[d] {
                continue;
            }
            let mut f = Vec::new();
            let mut x = d;
            while !seen[x] {
                seen[x] = true;
                f.push(x);
                x = self.phi(x);
            }
            out.push(f);
        }
        out
    }

    /// Face index of every dart, and the number of faces.
    pub fn face_ids(&self) -> (Vec<usize>, usize) {
        orbits(self.darts(), |d| self.phi(d))
    }

    /// One dart per vertex, by vertex id.
    pub fn vertex_darts(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_vertices];
        for d in (0..self.darts()).rev() {
            out[self.vertex[d]] = d;
        }
        out
    }

    /// Applies a dart renaming `perm` (old -> new).
    pub fn relabel(&self, perm: &[usize]) -> RotationMap {
        let n = self.darts();
        let mut alpha = vec![0; n];
        let mut sigma = vec![0; n];
        for d in 0..n {
            alpha[perm[d]] = perm[self.alpha[d]];
            sigma[perm[d]] = perm[self.sigma[d]];
        }
        RotationMap::new(alpha, sigma, perm[self.root]).expect("relabeling preserves validity")
    }
}

fn orbits(n: usize, next: impl Fn(usize) -> usize) -> (Vec<usize>, usize) {
    let mut id = vec![usize::MAX; n];
    let mut k = 0;
    for d in 0..n {
        if id[d] != usize::MAX {
            continue;
        }
        let mut x = d;
        while id[x] == usize::MAX {
            id[x] = k;
            x = next(x);
        }
        k += 1;
    }
    (id, k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadMap {
    map: RotationMap,
    faces: Vec<Vec<usize>>,
}

impl QuadMap {
    pub fn new(map: RotationMap) -> Result<Self, MapError> {
        let diag = validate_quadrangulation(&map);
        if !diag.pass() {
            return Err(MapError::NotQuad(diag.summary()));
        }
        let faces = map.faces();
        Ok(QuadMap { map, faces })
    }

    pub fn map(&self) -> &RotationMap {
        &self.map
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostics {
    pub darts: usize,
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub connected: bool,
    pub bad_face_degrees: Vec<usize>,
    pub euler: bool,
    pub bipartite: bool,
}

impl Diagnostics {
    pub fn pass(&self) -> bool {
        self.darts > 0 && self.connected && self.bad_face_degrees.is_empty() && self.euler && self.bipartite
    }

    pub fn summary(&self) -> String {
        let mut parts = Vec::new();
        if self.darts == 0 {
            parts.push("empty map".to_string());
        }
        if !self.connected {
            parts.push("not connected".to_string());
        }
        if let Some(d) = self.bad_face_degrees.first() {
            parts.push(format!("face degree {d}"));
        }
        if !self.euler {
            parts.push(format!("V - E + F = {}", self.vertices as i64 - self.edges as i64 + self.faces as i64));
        }
        if !self.bipartite {
            parts.push("not bipartite".to_string());
        }
        if parts.is_empty() {
            "ok".to_string()
        } else {
            parts.join(", ")
        }
    }
}

/// Connectivity, face degrees, Euler's formula and bipartiteness.
pub fn validate_quadrangulation(m: &RotationMap) -> Diagnostics {
    let faces = m.faces();
    let bad: Vec<usize> = faces.iter().map(|f| f.len()).filter(|&l| l != 4).collect();
    let dist = if m.darts() > 0 { bfs_distances(m, m.root_vertex()) } else { Vec::new() };
    let connected = dist.iter().all(|d| d.is_some());
    let bipartite = connected
        && (0..m.darts()).all(|d| {
            let a = dist[m.vertex(d)].unwrap();
            let b = dist[m.vertex(m.alpha(d))].unwrap();
            a.abs_diff(b) == 1
        });
    let (v, e, f) = (m.vertices(), m.edges(), faces.len());
    Diagnostics {
        darts: m.darts(),
        vertices: v,
        edges: e,
        faces: f,
        connected,
        bad_face_degrees: bad,
        euler: v as i64 - e as i64 + f as i64 == 2,
        bipartite,
    }
}

/// Graph distances from vertex `v`; `None` marks unreachable vertices.
pub fn bfs_distances(m: &RotationMap, v: usize) -> Vec<Option<usize>> {
    let vd = m.vertex_darts();
    let mut dist = vec![None; m.vertices()];
    let mut queue = VecDeque::new();
    dist[v] = Some(0);
    queue.push_back(v);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        let start = vd[u];
        let mut d = start;
        loop {
            let w = m.vertex(m.alpha(d));
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
            d = m.sigma(d);
            if d == start {
                break;
            }
        }
    }
    dist
}

/// Result of the bijection with the tree-vertex correspondence: map vertex
/// of tree vertex u is `tree_vertex[u]`; the extra vertex is `v0`.
#[derive(Debug, Clone)]
pub struct Schaeffer {
    pub quad: QuadMap,
    pub tree_vertex: Vec<usize>,
    pub v0: usize,
}

/// Corner successors in cyclic contour order: the next corner whose label
/// is one less, or `None` for label-1 corners (which connect to v0).
pub fn corner_successors(labels: &[i32]) -> Vec<Option<usize>> {
    let len = labels.len();
    let max = labels.iter().copied().max().unwrap_or(0).max(0) as usize;
    let mut next = vec![usize::MAX; max + 2];
    let mut succ = vec![None; len];
    for t in (0..2 * len).rev() {
        let i = t % len;
        let l = labels[i] as usize;
        if t < len && l >= 2 {
            let s = next[l - 1];
            debug_assert!(s != usize::MAX);
            succ[i] = Some(s % len);
        }
        next[l] = t;
    }
    succ
}

/// Builds an arbitrary rotation map from a cyclic corner word: per corner
/// its vertex id (0..vertices-1) and label. Every corner gets an arc to
/// its successor; label-1 corners go to the extra vertex. Root dart from
/// the extra vertex toward corner 0.
pub fn corner_word_map(corner_vertex: &[usize], labels: &[i32], vertices: usize) -> RotationMap {
    let len = labels.len();
    let succ = corner_successors(labels);
    // incoming arcs per corner, nearest predecessor first
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); len];
    for j in 0..len {
        if let Some(i) = succ[j] {
            incoming[i].push(j);
        }
    }
    for (i, inc) in incoming.iter_mut().enumerate() {
        inc.sort_by_key(|&j| (i + len - j) % len);
    }
    let out = |i: usize| 2 * i;
    let inn = |i: usize| 2 * i + 1;
    let mut alpha = vec![0usize; 2 * len];
    for i in 0..len {
        alpha[out(i)] = inn(i);
        alpha[inn(i)] = out(i);
    }
    // clockwise dart lists per vertex
    let mut cw: Vec<Vec<usize>> = vec![Vec::new(); vertices + 1];
    for i in 0..len {
        let v = corner_vertex[i];
        for &j in &incoming[i] {
            cw[v].push(inn(j));
        }
        cw[v].push(out(i));
    }
    for i in (0..len).rev() {
        if labels[i] == 1 {
            cw[vertices].push(inn(i));
        }
    }
    let mut sigma = vec![0usize; 2 * len];
    for list in &cw {
        let k = list.len();
        for (a, &d) in list.iter().enumerate() {
            sigma[d] = list[(a + k - 1) % k];
        }
    }
    RotationMap::new(alpha, sigma, inn(0)).expect("corner construction yields a valid rotation system")
}

/// The quadrangulation Phi(t) of a well-labeled tree with n >= 1 edges.
pub fn schaeffer_forward(t: &LabeledTree) -> Result<Schaeffer, MapError> {
    if t.edges() == 0 || !is_well_labeled(t, 1) {
        return Err(MapError::Input);
    }
    let corners = t.corners();
    let labels: Vec<i32> = corners.iter().map(|&u| t.label(u)).collect();
    let map = corner_word_map(&corners, &labels, t.len());
    // vertex ids of the rotation map are assigned by first dart
    let mut tree_vertex = vec![usize::MAX; t.len()];
    for (i, &u) in corners.iter().enumerate() {
        if tree_vertex[u] == usize::MAX {
            tree_vertex[u] = map.vertex(2 * i);
        }
    }
    let v0 = map.root_vertex();
    let quad = QuadMap::new(map)?;
    Ok(Schaeffer { quad, tree_vertex, v0 })
}

/// A ball: the faces with a vertex at distance < R from the root vertex,
/// kept together with the twins of their darts so that outer boundaries
/// form the remaining faces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BallMap {
    map: RotationMap,
    radius: usize,
    /// per dart of `map`: whether its face is a retained face
    retained: Vec<bool>,
}

impl BallMap {
    pub fn map(&self) -> &RotationMap {
        &self.map
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn is_retained(&self, d: usize) -> bool {
        self.retained[d]
    }

    pub fn retained_faces(&self) -> Vec<Vec<usize>> {
        self.map.faces().into_iter().filter(|f| self.retained[f[0]]).collect()
    }

    pub fn code(&self) -> CanonicalCode {
        canonical_code(&self.map)
    }
}

fn ball_of(m: &RotationMap, radius: usize, allowed: Option<&[bool]>) -> BallMap {
    let dist = bfs_distances(m, m.root_vertex());
    let (face_id, nf) = m.face_ids();
    let mut keep_face = vec![false; nf];
    for d in 0..m.darts() {
        if let Some(dv) = dist[m.vertex(d)] {
            if dv < radius && allowed.is_none_or(|a| a[d]) {
                keep_face[face_id[d]] = true;
            }
        }
    }
    let mut keep = vec![false; m.darts()];
    for d in 0..m.darts() {
        if keep_face[face_id[d]] {
            keep[d] = true;
            keep[m.alpha(d)] = true;
        }
    }
    let mut new_id = vec![usize::MAX; m.darts()];
    let mut k = 0;
    for d in 0..m.darts() {
        if keep[d] {
            new_id[d] = k;
            k += 1;
        }
    }
    let mut alpha = vec![0; k];
    let mut sigma = vec![0; k];
    let mut retained = vec![false; k];
    for d in 0..m.darts() {
        if !keep[d] {
            continue;
        }
        let nd = new_id[d];
        alpha[nd] = new_id[m.alpha(d)];
        let mut s = m.sigma(d);
        while !keep[s] {
            s = m.sigma(s);
        }
        sigma[nd] = new_id[s];
        retained[nd] = keep_face[face_id[d]];
    }
    let map = RotationMap::new(alpha, sigma, new_id[m.root()]).expect("restriction of a rotation system");
    BallMap { map, radius, retained }
}

/// B_R(q): the union of faces with a vertex at distance < R from the root.
pub fn extract_ball(m: &QuadMap, radius: usize) -> BallMap {
    ball_of(&m.map, radius, None)
}

/// Ball of a ball; only its retained faces count as faces.
pub fn extract_ball_of_ball(b: &BallMap, radius: usize) -> BallMap {
    ball_of(&b.map, radius, Some(&b.retained))
}

/// Retained faces are quadrangles with a vertex at distance < R, and every
/// dart lies on a retained face or is the twin of one that does.
pub fn validate_ball(b: &BallMap) -> Result<(), MapError> {
    let m = &b.map;
    let dist = bfs_distances(m, m.root_vertex());
    for f in b.retained_faces() {
        if f.len() != 4 {
            return Err(MapError::NotQuad(format!("retained face of degree {}", f.len())));
        }
        if !f.iter().any(|&d| dist[m.vertex(d)].is_some_and(|x| x < b.radius)) {
            return Err(MapError::NotQuad("retained face far from the root".into()));
        }
    }
    for d in 0..m.darts() {
        if !b.retained[d] && !b.retained[m.alpha(d)] {
            return Err(MapError::NotQuad(format!("dart {d} borders no retained face")));
        }
    }
    if dist.iter().any(|d| d.is_none()) {
        return Err(MapError::NotQuad("ball not connected".into()));
    }
    Ok(())
}

/// Rooted-map invariant. Vertices are numbered in breadth-first order of
/// discovery, starting at the root dart and scanning each rotation
/// counterclockwise from the dart through which the vertex was first
/// reached; darts are numbered in the same scan. The code lists the vertex
/// and dart counts and then, per vertex, its degree followed by the twin
/// number and the first-visit flag of each dart in the scan.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalCode(pub Vec<u64>);

impl fmt::Display for CanonicalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl std::str::FromStr for CanonicalCode {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(CanonicalCode(Vec::new()));
        }
        s.split('-')
            .map(|x| x.parse::<u64>().map_err(|e| MapError::Parse(format!("{x:?}: {e}"))))
            .collect::<Result<Vec<_>, _>>()
            .map(CanonicalCode)
    }
}

pub fn canonical_code(m: &RotationMap) -> CanonicalCode {
    let n = m.darts();
    if n == 0 {
        return CanonicalCode(vec![1, 0]);
    }
    let mut vnum = vec![usize::MAX; m.vertices()];
    let mut dnum = vec![usize::MAX; n];
    let mut order: Vec<usize> = Vec::new(); // start dart per numbered vertex
    let mut first_visit = vec![false; n];
    let r = m.root_vertex();
    vnum[r] = 0;
    order.push(m.root());
    let mut next_dart = 0usize;
    let mut i = 0;
    while i < order.len() {
        let start = order[i];
        let mut d = start;
        loop {
            dnum[d] = next_dart;
            next_dart += 1;
            let w = m.vertex(m.alpha(d));
            if vnum[w] == usize::MAX {
                vnum[w] = order.len();
                order.push(m.alpha(d));
                first_visit[d] = true;
            }
            d = m.sigma(d);
            if d == start {
                break;
            }
        }
        i += 1;
    }
    let mut code = Vec::with_capacity(2 + m.vertices() + 2 * n);
    code.push(order.len() as u64);
    code.push(n as u64);
    for &start in &order {
        let mut deg = 0u64;
        let mut d = start;
        loop {
            deg += 1;
            d = m.sigma(d);
            if d == start {
                break;
            }
        }
        code.push(deg);
        let mut d = start;
        loop {
            code.push(dnum[m.alpha(d)] as u64);
            code.push(u64::from(first_visit[d]));
            d = m.sigma(d);
            if d == start {
                break;
            }
        }
    }
    CanonicalCode(code)
}

pub fn quad_code(q: &QuadMap) -> CanonicalCode {
    canonical_code(&q.map)
}

/// (1 + sup{R : B_R(m1) = B_R(m2)})^-1 with B_0 empty; 0 iff the maps
/// are isomorphic.
pub fn map_local_distance(m1: &QuadMap, m2: &QuadMap) -> Rational64 {
    if quad_code(m1) == quad_code(m2) {
        return Rational64::from_integer(0);
    }
    let mut r = 1usize;
    loop {
        let b1 = extract_ball(m1, r);
        let b2 = extract_ball(m2, r);
        if b1.code() != b2.code() {
            return Rational64::new(1, r as i64);
        }
        if b1.map.darts() == m1.map.darts() && b2.map.darts() == m2.map.darts() {
            // both balls exhausted their maps yet the maps differ: cannot
            // happen for equal codes, kept as a guard
            return Rational64::new(1, r as i64 + 1);
        }
        r += 1;
    }
}
