//! Exact-law random generation: uniform well-labeled trees, conditioned
//! Galton-Watson trees, the spine chain, balls of the infinite tree and the
//! certified sampler for balls of the infinite quadrangulation.

use crate::formulas::{dip_f64, step_dip_f64, w_f64, w_gap_f64, EscapeTable, FormulaTable, SpineKernel};
use crate::map_core::{extract_ball, schaeffer_forward, BallMap, CanonicalCode};
use crate::tree_core::{assemble_spine, truncate_tree, LabeledTree, PlaneTree, SpineTree, TreeBuilder};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("escape table cap {cap} exceeded before the bound reached {eps}")]
    HorizonCap { cap: usize, eps: f64 },
}

const AUX_STREAM: u64 = 1 << 63;

/// Deterministic ChaCha8 stream. Replica streams of one seed use distinct
/// ChaCha stream ids, so they never overlap.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Stream for replica `replica` of master seed `seed`.
    pub fn child(seed: u64, replica: u64) -> Self {
        Self::with_stream(seed, (replica + 1) & !AUX_STREAM)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource { seed, stream, rng }
    }

    /// A fresh stream keyed by 256 bits of this one, for draws that must
    /// not disturb the main sequence afterwards.
    pub fn auxiliary(&mut self) -> RandomSource {
        let mut key = [0u8; 32];
        self.rng.fill_bytes(&mut key);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(AUX_STREAM);
        RandomSource { seed: self.seed, stream: self.stream | AUX_STREAM, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.gen_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// True with probability num/den exactly.
    pub fn ratio(&mut self, num: u64, den: u64) -> bool {
        self.rng.gen_range(0..den) < num
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

/// Index drawn from three nonnegative weights.
fn pick3(u: f64, w: [f64; 3]) -> usize {
    let t = u * (w[0] + w[1] + w[2]);
    if t < w[0] {
        0
    } else if t < w[0] + w[1] || w[2] == 0.0 {
        1
    } else {
        2
    }
}

/// Uniform plane tree with n edges: a uniform arrangement of n up and n+1
/// down steps, rotated to its unique excursion form (cycle lemma).
pub fn sample_dyck_tree(n: usize, rng: &mut RandomSource) -> PlaneTree {
    let mut steps: Vec<bool> = (0..2 * n + 1).map(|i| i < n).collect();
    steps.shuffle(rng);
    let mut h = 0i64;
    let mut min = 0i64;
    let mut at = 0usize;
    for (i, &up) in steps.iter().enumerate() {
        h += if up { 1 } else { -1 };
        if h < min {
            min = h;
            at = i + 1;
        }
    }
    let mut word = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        word.push(steps[(at + k) % (2 * n + 1)]);
    }
    PlaneTree::from_dyck(&word).expect("cycle lemma yields an excursion")
}

/// One attempt: a uniform excursion built step by step, labels drawn along
/// the way, abandoned at the first label below 1.
fn try_mu_n(n: usize, rng: &mut RandomSource) -> Option<LabeledTree> {
    let mut word = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n + 1);
    let mut path = Vec::with_capacity(n + 1);
    labels.push(1);
    path.push(1i32);
    let mut h = 0u64;
    for left in (1..=2 * n as u64).rev() {
        // paths from height h with `left` steps remaining: the next step is
        // up with probability (left - h)(h + 2) / (2 left (h + 1))
        let up = rng.ratio((left - h) * (h + 2), 2 * left * (h + 1));
        if up {
            let l = path[path.len() - 1] + rng.below(3) as i32 - 1;
            if l < 1 {
                return None;
            }
            path.push(l);
            labels.push(l);
            h += 1;
        } else {
            path.pop();
            h -= 1;
        }
        word.push(up);
    }
    let shape = PlaneTree::from_dyck(&word).expect("excursion");
    Some(LabeledTree::new(shape, labels).expect("unit label increments"))
}

/// Uniform well-labeled tree with n edges and the number of attempts used.
/// Each attempt is a uniform plane tree with uniform increments, rejected
/// when a label drops below 1.
pub fn sample_mu_n_counted(n: usize, rng: &mut RandomSource) -> (LabeledTree, u64) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        if let Some(t) = try_mu_n(n, rng) {
            return (t, attempts);
        }
    }
}

pub fn sample_mu_n(n: usize, rng: &mut RandomSource) -> LabeledTree {
    sample_mu_n_counted(n, rng).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhoCondition {
    None,
    /// min label <= m
    MinAtMost(i32),
    /// min label > m
    MinAbove(i32),
}

#[derive(Debug, Clone)]
pub struct RhoDraw {
    pub tree: LabeledTree,
    /// attempts of the unconditioned tree, including positivity failures
    pub attempts: u64,
    /// positive trees drawn, including those failing the minimum condition
    pub positive: u64,
}

/// Critical geometric Galton-Watson tree with labels, explored depth first;
/// `None` as soon as a label drops below 1.
fn try_gw(l: i32, rng: &mut RandomSource) -> Option<LabeledTree> {
    let mut b = TreeBuilder::with_root_label(l);
    let mut stack = vec![0usize];
    let mut kids = Vec::new();
    while let Some(u) = stack.pop() {
        let y = b.label(u);
        kids.clear();
        while rng.chance(0.5) {
            let c = y + rng.below(3) as i32 - 1;
            if c < 1 {
                return None;
            }
            kids.push(b.add_labeled_child(u, c));
        }
        stack.extend(kids.iter().rev());
    }
    Some(b.finish().expect("unit increments"))
}

pub fn sample_rho_hat_counted(l: i32, rng: &mut RandomSource, condition: RhoCondition) -> RhoDraw {
    assert!(l >= 1, "root label must be positive");
    let mut attempts = 0;
    let mut positive = 0;
    loop {
        attempts += 1;
        let Some(t) = try_gw(l, rng) else { continue };
        positive += 1;
        let ok = match condition {
            RhoCondition::None => true,
            RhoCondition::MinAtMost(m) => t.min_label() <= m,
            RhoCondition::MinAbove(m) => t.min_label() > m,
        };
        if ok {
            return RhoDraw { tree: t, attempts, positive };
        }
    }
}

pub fn sample_rho_hat(l: i32, rng: &mut RandomSource, condition: RhoCondition) -> LabeledTree {
    sample_rho_hat_counted(l, rng, condition).tree
}

/// One step of the spine chain from label x.
pub fn spine_step(kernel: &SpineKernel, x: i32, rng: &mut RandomSource) -> i32 {
    let i = x as usize;
    assert!(i < kernel.cap(), "spine label {x} beyond kernel cap {}", kernel.cap());
    x + pick3(rng.unit(), [kernel.q[i], kernel.r[i], kernel.p[i]]) as i32 - 1
}

/// Y_0 = 1 and g steps of the spine chain; the kernel cap must exceed g.
pub fn sample_spine_prefix(g: usize, kernel: &SpineKernel, rng: &mut RandomSource) -> Vec<i32> {
    let mut y = Vec::with_capacity(g + 1);
    y.push(1);
    for k in 0..g {
        let next = spine_step(kernel, y[k], rng);
        y.push(next);
    }
    y
}

/// Appends below `at` the children of a positive (label >= 1 + shift)
/// conditioned tree whose root has label `label`, down to `room`
/// generations. Labels are drawn as label - shift in the unshifted law.
fn grow_positive(b: &mut TreeBuilder, at: usize, room: usize, shift: i32, rng: &mut RandomSource) {
    if room == 0 {
        return;
    }
    let mut stack = vec![(at, room)];
    while let Some((u, r)) = stack.pop() {
        let z = b.label(u) - shift;
        let stop = 1.0 / w_f64(z as i64);
        let weights = [w_f64(z as i64 - 1), w_f64(z as i64), w_f64(z as i64 + 1)];
        let first = stack.len();
        loop {
            let u01 = rng.unit();
            if u01 < stop {
                break;
            }
            let c = z + pick3((u01 - stop) / (1.0 - stop), weights) as i32 - 1;
            let v = b.add_labeled_child(u, c + shift);
            if r > 1 {
                stack.push((v, r - 1));
            }
        }
        stack[first..].reverse();
    }
}

/// rho-hat^(l) tree truncated at depth `depth`.
pub fn sample_positive_truncated(l: i32, depth: usize, rng: &mut RandomSource) -> LabeledTree {
    let mut b = TreeBuilder::with_root_label(l);
    grow_positive(&mut b, 0, depth, 0, rng);
    b.finish().expect("unit increments")
}

/// A draw of the generation-S ball of the infinite tree: spine to S and,
/// at spine position k, left and right trees truncated at depth S - k.
pub fn sample_mu_tree_ball(s: usize, kernel: &SpineKernel, rng: &mut RandomSource) -> LabeledTree {
    assert!(s >= 1, "ball depth must be at least 1");
    let spine = sample_spine_prefix(s, kernel, rng);
    let mut left = Vec::with_capacity(s + 1);
    let mut right = Vec::with_capacity(s + 1);
    for (k, &y) in spine.iter().enumerate() {
        left.push(sample_positive_truncated(y, s - k, rng));
        right.push(sample_positive_truncated(y, s - k, rng));
    }
    let st = SpineTree { spine, left, right, truncation: Some(s) };
    assemble_spine(&st, s).expect("spine reaches the truncation")
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Kid(u32),
    /// that many children, each without labels <= m (full mode only)
    Hidden(u32),
    /// the remaining children carry no label <= m
    Rest,
}

#[derive(Debug, Clone)]
struct Node {
    label: i32,
    gen: u32,
    items: Vec<Item>,
}

#[derive(Debug, Clone, Copy)]
enum Task {
    P(u32),
    H(u32),
}

/// Labeled trees grown lazily relative to a threshold m. A subtree whose
/// root label exceeds m is first told whether it holds a label <= m; only
/// those that do are expanded. In full mode the others are kept as markers
/// to be materialized later from the auxiliary stream.
struct Lazy {
    m: i32,
    full: bool,
    nodes: Vec<Node>,
    stack: Vec<Task>,
}

impl Lazy {
    fn new(m: i32, full: bool) -> Self {
        Lazy { m, full, nodes: Vec::new(), stack: Vec::new() }
    }

    fn node(&mut self, label: i32, gen: u32) -> u32 {
        self.nodes.push(Node { label, gen, items: Vec::new() });
        (self.nodes.len() - 1) as u32
    }

    fn kid(&mut self, at: u32, label: i32) -> u32 {
        let g = self.nodes[at as usize].gen + 1;
        let c = self.node(label, g);
        self.nodes[at as usize].items.push(Item::Kid(c));
        c
    }

    fn kid_at(&mut self, at: u32, label: i32, gen: u32) -> u32 {
        let c = self.node(label, gen);
        self.nodes[at as usize].items.push(Item::Kid(c));
        c
    }

    fn push(&mut self, at: u32, item: Item) {
        self.nodes[at as usize].items.push(item);
    }

    fn h_weight(&self, y: i32) -> f64 {
        if y <= self.m {
            w_f64(y as i64)
        } else {
            w_gap_f64(y as i64, self.m as i64)
        }
    }

    /// Children of a positive tree rooted at `at`.
    fn p_seq(&mut self, at: u32, main: &mut RandomSource, aux: &mut RandomSource) {
        let y = self.nodes[at as usize].label;
        if y > self.m {
            if main.chance(dip_f64(y as i64, self.m as i64)) {
                self.h_seq(at, main, aux);
            } else {
                self.push(at, Item::Rest);
            }
            return;
        }
        let stop = 1.0 / w_f64(y as i64);
        let weights = [w_f64(y as i64 - 1), w_f64(y as i64), w_f64(y as i64 + 1)];
        loop {
            let u = main.unit();
            if u < stop {
                break;
            }
            let c = y + pick3((u - stop) / (1.0 - stop), weights) as i32 - 1;
            let v = self.kid(at, c);
            self.stack.push(Task::P(v));
        }
    }

    /// Children of a positive tree rooted at `at` (label > m) that holds a
    /// label <= m: hidden children, the first child that dips, then the
    /// remainder as an unconditioned positive sequence. A vertex whose only
    /// child is again of that kind is followed at once; outside full mode
    /// such runs keep only their end points.
    fn h_seq(&mut self, at: u32, main: &mut RandomSource, aux: &mut RandomSource) {
        let m = self.m;
        let mut anchor = at;
        let (mut y, mut g) = (self.nodes[at as usize].label, self.nodes[at as usize].gen);
        let mut stored = true;
        loop {
            let hidden = self.hidden(y, aux);
            let c = y + pick3(main.unit(), self.h_weights(y)) as i32 - 1;
            let more = main.chance(dip_f64(y as i64, m as i64));
            if !more && c > m && !self.full {
                y = c;
                g += 1;
                stored = false;
                continue;
            }
            let cur = if stored { anchor } else { self.kid_at(anchor, y, g) };
            if hidden > 0 {
                self.push(cur, Item::Hidden(hidden));
            }
            let v = self.kid(cur, c);
            if !more {
                self.push(cur, Item::Rest);
                if c > m {
                    anchor = v;
                    y = c;
                    g += 1;
                    stored = true;
                    continue;
                }
                self.stack.push(Task::P(v));
                return;
            }
            self.stack.push(if c <= m { Task::P(v) } else { Task::H(v) });
            loop {
                let hidden = self.hidden(y, aux);
                if hidden > 0 {
                    self.push(cur, Item::Hidden(hidden));
                }
                let c = y + pick3(main.unit(), self.h_weights(y)) as i32 - 1;
                let v = self.kid(cur, c);
                self.stack.push(if c <= m { Task::P(v) } else { Task::H(v) });
                if !main.chance(dip_f64(y as i64, m as i64)) {
                    self.push(cur, Item::Rest);
                    return;
                }
            }
        }
    }

    fn h_weights(&self, y: i32) -> [f64; 3] {
        [self.h_weight(y - 1), self.h_weight(y), self.h_weight(y + 1)]
    }

    /// Number of children without labels <= m placed before the next
    /// dipping child (full mode only).
    fn hidden(&self, y: i32, aux: &mut RandomSource) -> u32 {
        if !self.full {
            return 0;
        }
        let (yi, m) = (y as i64, self.m as i64);
        let rho = (w_f64(yi - 1 - m) + w_f64(yi - m) + w_f64(yi + 1 - m)) / 12.0;
        let mut j = 0u32;
        while aux.chance(rho) {
            j += 1;
        }
        j
    }

    fn drain(&mut self, main: &mut RandomSource, aux: &mut RandomSource) {
        while let Some(t) = self.stack.pop() {
            match t {
                Task::P(v) => self.p_seq(v, main, aux),
                Task::H(v) => self.h_seq(v, main, aux),
            }
        }
    }

    /// Deepest generation holding a label <= m.
    fn deepest_low(&self) -> usize {
        self.nodes.iter().filter(|n| n.label <= self.m).map(|n| n.gen as usize).max().unwrap_or(0)
    }

    fn is_chain(&self, v: u32) -> Option<u32> {
        let n = &self.nodes[v as usize];
        if n.label <= self.m {
            return None;
        }
        let mut only = None;
        for it in &n.items {
            if let Item::Kid(c) = *it {
                if only.is_some() {
                    return None;
                }
                only = Some(c);
            }
        }
        only
    }

    /// The expanded part only: markers dropped, and runs of single-child
    /// vertices with labels > m replaced by monotone label paths. A kid
    /// more than one generation below its parent stands for a run of
    /// skipped vertices with labels > m and gets at least one vertex in
    /// between.
    fn reduced_tree(&self, root: u32) -> LabeledTree {
        let mut b = TreeBuilder::with_root_label(self.nodes[root as usize].label);
        let mut stack: Vec<(u32, usize, u32)> = Vec::new();
        self.push_kids(root, 0, &mut stack);
        while let Some((v, parent, parent_gen)) = stack.pop() {
            let node = &self.nodes[v as usize];
            let l1 = node.label;
            let mut at = parent;
            if node.gen > parent_gen + 1 {
                let l0 = b.label(parent);
                if (l1 - l0).abs() <= 1 {
                    at = b.add_labeled_child(at, l0.max(l1));
                } else {
                    let mut l = l0 + (l1 - l0).signum();
                    while l != l1 {
                        at = b.add_labeled_child(at, l);
                        l += (l1 - l).signum();
                    }
                }
            }
            let here = b.add_labeled_child(at, l1);
            // follow a run of chain vertices v = v_1, ..., v_k
            let mut last = v;
            while let Some(c) = self.is_chain(last) {
                if self.is_chain(c).is_some() {
                    last = c;
                } else {
                    break;
                }
            }
            let mut at = here;
            if last != v {
                let lk = self.nodes[last as usize].label;
                let mut l = l1;
                if l == lk {
                    at = b.add_labeled_child(at, lk);
                }
                while l != lk {
                    l += (lk - l).signum();
                    at = b.add_labeled_child(at, l);
                }
            }
            self.push_kids(last, at, &mut stack);
        }
        b.finish().expect("reduced tree keeps unit increments")
    }

    fn push_kids(&self, v: u32, at: usize, stack: &mut Vec<(u32, usize, u32)>) {
        let start = stack.len();
        let g = self.nodes[v as usize].gen;
        for it in &self.nodes[v as usize].items {
            if let Item::Kid(c) = *it {
                stack.push((c, at, g));
            }
        }
        stack[start..].reverse();
    }

    /// Everything down to generation `depth`, markers materialized from
    /// `aux`.
    fn full_tree(&self, root: u32, depth: usize, aux: &mut RandomSource) -> LabeledTree {
        let m = self.m;
        let mut b = TreeBuilder::with_root_label(self.nodes[root as usize].label);
        let mut stack: Vec<(u32, usize)> = vec![(root, 0)];
        while let Some((v, at)) = stack.pop() {
            let node = &self.nodes[v as usize];
            let g = node.gen as usize;
            if g >= depth {
                continue;
            }
            let room = depth - g;
            let start = stack.len();
            for it in &node.items {
                match *it {
                    Item::Kid(c) => {
                        let here = b.add_labeled_child(at, self.nodes[c as usize].label);
                        stack.push((c, here));
                    }
                    Item::Hidden(j) => {
                        let y = node.label as i64 - m as i64;
                        let weights = [w_f64(y - 1), w_f64(y), w_f64(y + 1)];
                        for _ in 0..j {
                            let c = node.label + pick3(aux.unit(), weights) as i32 - 1;
                            let here = b.add_labeled_child(at, c);
                            grow_positive(&mut b, here, room - 1, m, aux);
                        }
                    }
                    Item::Rest => grow_positive(&mut b, at, room, m, aux),
                }
            }
            stack[start..].reverse();
        }
        b.finish().expect("materialized tree keeps unit increments")
    }
}

/// Drops what cannot reach the radius-R ball: subtrees with all labels at
/// least R+2 vanish below vertices of label at least R+2 and shrink to a
/// leaf below vertices of label R+1; runs of single-child vertices with
/// labels at least R+2 become monotone label paths.
pub fn prune_for_ball(t: &LabeledTree, radius: usize) -> LabeledTree {
    let m = radius as i32 + 1;
    let shape = t.shape();
    let mut high = vec![true; t.len()];
    for u in (0..t.len()).rev() {
        high[u] = t.label(u) > m && shape.children(u).iter().all(|&c| high[c]);
    }
    let mut lz = Lazy::new(m, false);
    let mut id = vec![u32::MAX; t.len()];
    id[0] = lz.node(t.label(0), 0);
    for u in 0..t.len() {
        if id[u] == u32::MAX {
            continue;
        }
        let keep_leaf = t.label(u) <= m;
        for &c in shape.children(u) {
            if high[c] && !keep_leaf {
                continue;
            }
            let v = lz.kid(id[u], t.label(c));
            if !high[c] {
                id[c] = v;
            }
        }
    }
    lz.reduced_tree(0)
}

/// Positive tree of root label l drawn lazily against threshold m: first
/// whether it holds a label <= m, then the body given that answer.
pub fn sample_rho_hat_lazy(l: i32, m: i32, rng: &mut RandomSource) -> (bool, LabeledTree) {
    assert!(l >= 1 && m >= 0);
    let mut aux = rng.auxiliary();
    let mut lz = Lazy::new(m, true);
    let root = lz.node(l, 0);
    lz.p_seq(root, rng, &mut aux);
    let dipped = l <= m || !matches!(lz.nodes[0].items.as_slice(), [Item::Rest]);
    lz.drain(rng, &mut aux);
    let t = lz.full_tree(root, usize::MAX, &mut aux);
    (dipped, t)
}

/// A ball of the infinite quadrangulation with its certificate.
#[derive(Debug, Clone)]
pub struct CertifiedBall {
    pub ball: BallMap,
    /// deepest generation holding a sampled label <= R + 1 (at least 1)
    pub s: usize,
    pub eps_actual: f64,
    /// spine steps generated
    pub horizon: usize,
    /// the run stopped at the certification level while a later dip was
    /// still pending
    pub aborted: bool,
}

impl CertifiedBall {
    pub fn code(&self) -> CanonicalCode {
        self.ball.code()
    }
}

/// Full-mode draw for consistency checks: the certified ball and the trees
/// B_{T,S+j} for j = 0..=extra built from the same randomness.
#[derive(Debug, Clone)]
pub struct FullDraw {
    pub ball: CertifiedBall,
    pub reduced: LabeledTree,
    pub truncations: Vec<LabeledTree>,
}

/// Precomputed tables for one radius and tolerance. The dip-or-return
/// probability v of the spine is solved on (R+1, cap]; the run stops once
/// the spine reaches `y_cert`, where v <= eps.
#[derive(Debug, Clone)]
pub struct UipqSampler {
    radius: usize,
    m: i32,
    eps: f64,
    eps_actual: f64,
    y_cert: i32,
    cap: usize,
    q: Vec<f64>,
    r: Vec<f64>,
    p: Vec<f64>,
    v: Vec<f64>,
    /// per label: cumulative probabilities of (dip now, down, stay) for the
    /// walk conditioned on a coming dip
    thr: Vec<[f64; 3]>,
}

const MAX_CAP: usize = 1 << 21;

impl UipqSampler {
    /// Builds the tables with the closure constant 8 at the cap.
    pub fn new(radius: usize, eps: f64) -> Result<Self, SamplerError> {
        Self::with_safety(radius, eps, 8.0)
    }

    pub fn with_safety(radius: usize, eps: f64, k_safety: f64) -> Result<Self, SamplerError> {
        if radius < 1 {
            return Err(SamplerError::Argument("radius must be at least 1".into()));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(SamplerError::Argument(format!("eps must lie in (0, 1), got {eps}")));
        }
        let m = radius + 1;
        let ft = FormulaTable::new();
        let mut cap = 4096usize.max(16 * m);
        let kernel_for = |cap: usize| SpineKernel::new(&ft, cap);
        let closure = |cap: usize| (k_safety * (radius as f64 + 2.0) / cap as f64).min(1.0);
        loop {
            let kernel = kernel_for(2 * cap);
            let t = EscapeTable::solve(&kernel, radius, cap, closure(cap));
            let t2 = EscapeTable::solve(&kernel, radius, 2 * cap, closure(2 * cap));
            let first = (m + 1..cap).find(|&y| t.v[y].max(t2.v[y]) <= eps);
            if let Some(y) = first {
                if 8 * y <= cap {
                    let eps_actual = t.v[y].max(t2.v[y]);
                    let n = y + 2;
                    let mut thr = vec![[0.0; 3]; n];
                    for x in m + 1..n - 1 {
                        let s = step_dip_f64(x as i64, m as i64);
                        let vx = t.v[x];
                        let c0 = s / vx;
                        let c1 = c0 + (1.0 - s) * kernel.q[x] * t.v[x - 1] / vx;
                        thr[x] = [c0, c1, c1 + (1.0 - s) * kernel.r[x]];
                    }
                    return Ok(UipqSampler {
                        thr,
                        radius,
                        m: m as i32,
                        eps,
                        eps_actual,
                        y_cert: y as i32,
                        cap,
                        q: kernel.q[..n].to_vec(),
                        r: kernel.r[..n].to_vec(),
                        p: kernel.p[..n].to_vec(),
                        v: t.v[..n].to_vec(),
                    });
                }
            }
            if 2 * cap > MAX_CAP {
                return Err(SamplerError::HorizonCap { cap, eps });
            }
            cap *= 2;
        }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eps_actual(&self) -> f64 {
        self.eps_actual
    }

    pub fn y_cert(&self) -> i32 {
        self.y_cert
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    fn v(&self, x: i32) -> f64 {
        if x <= self.m {
            1.0
        } else {
            self.v[x as usize]
        }
    }

    fn row(&self, x: i32) -> [f64; 3] {
        let i = x as usize;
        [self.q[i], self.r[i], self.p[i]]
    }

    fn step(&self, x: i32, weights: [f64; 3], rng: &mut RandomSource) -> i32 {
        x + pick3(rng.unit(), weights) as i32 - 1
    }

    /// Runs the spine until no further dip can occur (or the certification
    /// level is reached); returns the forest, the spine node ids and
    /// whether the run aborted. Outside full mode, spine vertices crossed
    /// by the conditioned walk without a dip are not stored.
    fn grow(&self, full: bool, main: &mut RandomSource, aux: &mut RandomSource) -> (Lazy, Vec<u32>, bool) {
        let m = self.m;
        let mut lz = Lazy::new(m, full);
        let mut u = lz.node(1, 0);
        let mut spine = vec![u];
        let mut x = 1i32;
        let mut aborted = false;
        loop {
            if x <= m {
                lz.p_seq(u, main, aux);
                lz.drain(main, aux);
                let next = self.step(x, self.row(x), main);
                let at = u;
                u = lz.kid(at, next);
                lz.p_seq(at, main, aux);
                lz.drain(main, aux);
                x = next;
                spine.push(u);
                continue;
            }
            if x >= self.y_cert || !main.chance(self.v(x)) {
                break;
            }
            // a dip is coming: walk the conditioned chain until it happens
            let mut gen = lz.nodes[u as usize].gen;
            let mut first = true;
            loop {
                let t = self.thr[x as usize];
                let c = main.unit();
                if c < t[0] {
                    break;
                }
                let next = x + if c < t[1] { -1 } else if c < t[2] { 0 } else { 1 };
                gen += 1;
                x = next;
                let end = next <= m || next >= self.y_cert;
                if full || first || end {
                    let at = u;
                    lz.push(at, Item::Rest);
                    u = lz.kid_at(at, next, gen);
                    lz.push(at, Item::Rest);
                    spine.push(u);
                    first = false;
                } else if !full {
                    // re-anchor the run at its latest vertex on the next store
                    let last = lz.nodes.len() as u32 - 1;
                    lz.nodes[last as usize].label = next;
                    lz.nodes[last as usize].gen = gen;
                }
                if end {
                    break;
                }
            }
            if x <= m {
                continue;
            }
            if x >= self.y_cert {
                aborted = true;
                break;
            }
            // dip at the current spine vertex
            let a = dip_f64(x as i64, m as i64);
            let side = pick3(main.unit(), [a * (1.0 - a), (1.0 - a) * a, a * a]);
            let at = u;
            if side != 1 {
                lz.h_seq(at, main, aux);
                lz.drain(main, aux);
            } else {
                lz.push(at, Item::Rest);
            }
            let next = self.step(x, self.row(x), main);
            u = lz.kid(at, next);
            if side != 0 {
                lz.h_seq(at, main, aux);
                lz.drain(main, aux);
            } else {
                lz.push(at, Item::Rest);
            }
            x = next;
            spine.push(u);
        }
        (lz, spine, aborted)
    }

    fn certify(&self, lz: &Lazy, spine: &[u32], aborted: bool) -> Result<(CertifiedBall, LabeledTree), SamplerError> {
        let reduced = lz.reduced_tree(0);
        let s = lz.deepest_low().max(1);
        let phi = schaeffer_forward(&reduced).map_err(|e| SamplerError::Argument(e.to_string()))?;
        let ball = extract_ball(&phi.quad, self.radius);
        Ok((
            CertifiedBall {
                ball,
                s,
                eps_actual: self.eps_actual,
                horizon: lz.nodes[spine[spine.len() - 1] as usize].gen as usize,
                aborted,
            },
            reduced,
        ))
    }

    /// Draws a certified ball. Only the parts of the tree that can carry a
    /// label <= R+1 are expanded.
    pub fn sample(&self, rng: &mut RandomSource) -> Result<CertifiedBall, SamplerError> {
        let mut aux = rng.auxiliary();
        let (lz, spine, aborted) = self.grow(false, rng, &mut aux);
        Ok(self.certify(&lz, &spine, aborted)?.0)
    }

    /// Same main-stream draw as `sample`, with every hidden part
    /// materialized down to generation S + extra. The spine is continued
    /// without further dips where the run stopped.
    pub fn sample_full(&self, rng: &mut RandomSource, extra: usize) -> Result<FullDraw, SamplerError> {
        let mut aux = rng.auxiliary();
        let (mut lz, mut spine, aborted) = self.grow(true, rng, &mut aux);
        let (ball, reduced) = self.certify(&lz, &spine, aborted)?;
        let depth = ball.s + extra;
        let mut x = lz.nodes[spine[spine.len() - 1] as usize].label;
        while spine.len() <= depth {
            let at = spine[spine.len() - 1];
            let [q, r, p] = self.row(x);
            let quiet = |y: i32| 1.0 - self.v(y).min(1.0);
            let next = if x + 2 < self.q.len() as i32 {
                self.step(x, [q * quiet(x - 1), r * quiet(x), p * quiet(x + 1)], &mut aux)
            } else {
                x + 1
            };
            lz.push(at, Item::Rest);
            let u = lz.kid(at, next);
            lz.push(at, Item::Rest);
            spine.push(u);
            x = next;
        }
        let top = lz.full_tree(0, depth, &mut aux);
        let truncations = (0..=extra).map(|j| truncate_tree(&top, ball.s + j)).collect();
        Ok(FullDraw { ball, reduced, truncations })
    }
}

/// One certified ball with fresh tables; prefer reusing a `UipqSampler`.
pub fn sample_uipq_ball(radius: usize, eps: f64, rng: &mut RandomSource) -> Result<CertifiedBall, SamplerError> {
    UipqSampler::new(radius, eps)?.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = RandomSource::child(7, 3);
        let mut b = RandomSource::child(7, 3);
        let mut c = RandomSource::child(7, 4);
        let xa: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..4).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
        let (mut u, mut v) = (a.auxiliary(), a.auxiliary());
        assert_ne!(u.next_u64(), v.next_u64());
    }

    #[test]
    fn trivial_trees() {
        let mut rng = RandomSource::new(1);
        assert_eq!(sample_dyck_tree(0, &mut rng).len(), 1);
        assert_eq!(sample_dyck_tree(1, &mut rng).edges(), 1);
        for _ in 0..50 {
            let t = sample_mu_n(7, &mut rng);
            assert_eq!(t.edges(), 7);
            assert!(crate::tree_core::is_well_labeled(&t, 1));
        }
    }

    #[test]
    fn lazy_indicator_matches_body() {
        let mut rng = RandomSource::new(5);
        for _ in 0..2000 {
            let (dip, t) = sample_rho_hat_lazy(3, 1, &mut rng);
            assert_eq!(dip, t.min_label() <= 1);
            assert!(t.min_label() >= 1);
        }
    }

    #[test]
    fn uipq_ball_runs() {
        let s = UipqSampler::new(1, 1e-2).unwrap();
        assert!(s.eps_actual() <= 1e-2);
        let mut rng = RandomSource::new(9);
        for _ in 0..100 {
            let b = s.sample(&mut rng).unwrap();
            crate::map_core::validate_ball(&b.ball).unwrap();
            assert!(b.s >= 1);
        }
    }
}
