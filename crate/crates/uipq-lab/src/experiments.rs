//! The experiments behind each subcommand. Every random quantity comes from
//! a child stream of a seed derived from (master seed, experiment tag), and
//! results are gathered in replica order.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF, Gamma};
use thiserror::Error;
use uipq_core::formulas::*;
use uipq_core::map_core::{bfs_distances, extract_ball, quad_code, schaeffer_forward, validate_ball, validate_quadrangulation, MapError};
use uipq_core::samplers::*;
use uipq_core::tree_core::{all_labeled_trees, all_plane_trees, encode_contour, for_each_labeling, truncate_tree};
use uipq_core::{CanonicalCode, CountTable, FormulaTable, LabeledTree, RandomSource};

use crate::cache::count_table;
use crate::report::{Check, ExperimentReport, Point, Verdict};
use crate::stats::{bootstrap_tv, index_samples, ks_distance, mean_se, permutation_tv};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Seed of a named part of an experiment: the first 8 bytes of
/// SHA-256(seed, tag).
pub fn arm_seed(seed: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// `count` independent replicas, replica i on child stream i of `seed`,
/// returned in replica order.
pub fn replicate<T: Send>(seed: u64, count: usize, f: impl Fn(&mut RandomSource) -> T + Sync) -> Vec<T> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = RandomSource::child(seed, i);
            f(&mut rng)
        })
        .collect()
}

fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if o > 0 {
                return 0.0;
            }
            continue;
        }
        let e = p * total as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    ChiSquared::new((cells - 1) as f64).unwrap().sf(stat)
}

fn three_sigma(name: String, hits: u64, trials: u64, p: f64) -> Check {
    let f = hits as f64 / trials as f64;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    Check::float(name, f, p, Verdict::from_bool((f - p).abs() <= 3.0 * sigma))
}

fn chi_check(name: String, counts: &[u64], probs: &[f64]) -> Check {
    let p = chi_square_p(counts, probs);
    Check::float(name, p, 1e-3, Verdict::from_bool(p > 1e-3))
}

// ---------------------------------------------------------------- enumerate

pub const ENUMERATE_LIMIT: usize = 8;
pub const BIJECTION_LIMIT: usize = 6;

#[derive(Debug, Clone)]
pub struct EnumerateParams {
    pub n_max: usize,
    /// directory for the canonical-code inventories
    pub golden: Option<PathBuf>,
}

fn brute_counts(n: usize, l_max: usize) -> Vec<BigUint> {
    let mut c = vec![0u64; l_max + 1];
    for shape in all_plane_trees(n) {
        for (l, slot) in c.iter_mut().enumerate().skip(1) {
            for_each_labeling(&shape, l as i32, |labels| {
                if labels.iter().all(|&x| x >= 1) {
                    *slot += 1;
                }
            });
        }
    }
    c.into_iter().map(BigUint::from).collect()
}

fn ball_code(t: &LabeledTree, radius: usize) -> Result<CanonicalCode, MapError> {
    Ok(extract_ball(&schaeffer_forward(t)?.quad, radius).code())
}

/// Deepest generation holding a label <= R + 1.
fn low_depth(t: &LabeledTree, radius: usize) -> usize {
    let m = radius as i32 + 1;
    (0..t.len()).filter(|&u| t.label(u) <= m).map(|u| t.shape().depth(u)).max().unwrap_or(0)
}

#[derive(Debug, Default, Clone)]
pub struct StabilityTally {
    pub cases: usize,
    pub violations: usize,
    pub shifted_violations: usize,
    pub first: Option<(LabeledTree, usize)>,
}

/// Over all trees with 1..=n_max edges and every S from the deepest low
/// label to the height: compares the radius-R ball of the tree with that
/// of its truncation at S, and at S + 1.
pub fn ball_stability(n_max: usize, radius: usize) -> Result<StabilityTally, MapError> {
    let mut tally = StabilityTally::default();
    for n in 1..=n_max {
        for t in all_labeled_trees(n, 1, true) {
            let full = ball_code(&t, radius)?;
            let low = low_depth(&t, radius).max(1);
            for s in low..t.height() {
                tally.cases += 1;
                if ball_code(&truncate_tree(&t, s), radius)? != full {
                    tally.violations += 1;
                    if tally.first.is_none() {
                        tally.first = Some((t.clone(), s));
                    }
                }
                if ball_code(&truncate_tree(&t, s + 1), radius)? != full {
                    tally.shifted_violations += 1;
                }
            }
        }
    }
    Ok(tally)
}

pub fn enumerate(p: &EnumerateParams, seed: u64) -> Result<ExperimentReport, LabError> {
    if p.n_max > ENUMERATE_LIMIT {
        return Err(LabError::Usage(format!("n-max {} above the exhaustive limit {ENUMERATE_LIMIT}", p.n_max)));
    }
    let mut rep = ExperimentReport::new("enumerate", seed);
    rep.param("n_max", p.n_max);
    let l_max = 4;
    let table = CountTable::build(p.n_max, l_max);
    for n in 0..=p.n_max {
        let brute = brute_counts(n, l_max);
        for l in 1..=l_max {
            let dp = table.get(n, l)?;
            rep.check(Check::text(format!("count n={n} l={l}"), &dp, &brute[l], Verdict::from_bool(dp == brute[l])));
        }
        let d = table.get(n, 1)?;
        let closed = d_n_closed(n);
        rep.check(Check::text(format!("closed form n={n}"), &d, &closed, Verdict::from_bool(d == closed)));
        rep.point(Point::new("n", n as f64, "D_n", to_f64(&BigRational::from_integer(d.into())), None));
    }
    let by_label = CountTable::build_by_label(p.n_max, l_max);
    rep.check(Check::text("label recursion table", "same", if by_label == table { "same" } else { "different" }, Verdict::from_bool(by_label == table)));

    let phi_max = p.n_max.min(BIJECTION_LIMIT);
    for n in 1..=phi_max {
        let trees = all_labeled_trees(n, 1, true);
        let mut invalid = 0usize;
        let mut far = 0usize;
        let mut codes = BTreeSet::new();
        for t in &trees {
            let s = schaeffer_forward(t)?;
            let m = s.quad.map();
            let d = validate_quadrangulation(m);
            if !d.pass() || (d.faces, d.vertices, d.edges) != (n, n + 2, 2 * n) {
                invalid += 1;
            }
            let dist = bfs_distances(m, s.v0);
            if (0..t.len()).any(|u| dist[s.tree_vertex[u]] != Some(t.label(u) as usize)) {
                far += 1;
            }
            codes.insert(quad_code(&s.quad));
        }
        rep.check(Check::text(format!("bijection valid n={n}"), invalid, 0, Verdict::from_bool(invalid == 0)));
        rep.check(Check::text(format!("bijection distances n={n}"), far, 0, Verdict::from_bool(far == 0)));
        let dn = table.get(n, 1)?;
        let ok = BigUint::from(codes.len()) == dn && codes.len() == trees.len();
        rep.check(Check::text(format!("bijection distinct codes n={n}"), codes.len(), &dn, Verdict::from_bool(ok)));
        if let Some(dir) = &p.golden {
            if n <= 5 {
                std::fs::create_dir_all(dir)?;
                let body: String = codes.iter().map(|c| format!("{c}\n")).collect();
                std::fs::write(dir.join(format!("codes-n{n}.txt")), body)?;
            }
        }
        for s in 1..=2 {
            let mut sum = BigRational::zero();
            for e in 0..=n {
                for t in all_labeled_trees(e, 1, true) {
                    if t.height() <= s {
                        sum += mu_n_ball_prob_at(&table, &t, s, n)?;
                    }
                }
            }
            let v = Verdict::from_bool(sum.is_one());
            rep.check(Check::exact(format!("ball law mass n={n} S={s}"), &sum, &BigRational::one(), v));
        }
    }

    for radius in 1..=2 {
        let t = ball_stability(phi_max, radius)?;
        rep.check(Check::text(
            format!("ball stability R={radius} truncation at S"),
            format!("{} of {} cases differ", t.violations, t.cases),
            0,
            Verdict::from_bool(t.violations == 0),
        ));
        if let Some((tree, s)) = &t.first {
            rep.check(Check::text(
                format!("ball stability R={radius} first difference"),
                encode_contour(tree),
                format!("S={s}"),
                Verdict::Info,
            ));
        }
        rep.check(Check::text(
            format!("ball stability R={radius} truncation at S+1"),
            format!("{} of {} cases differ", t.shifted_violations, t.cases),
            0,
            Verdict::from_bool(t.shifted_violations == 0),
        ));
    }
    Ok(rep)
}

// ---------------------------------------------------------- verify-formulas

#[derive(Debug, Clone)]
pub struct FormulaParams {
    pub l_max: usize,
    pub n_max: usize,
}

fn height_one_mass(ft: &FormulaTable, source: DSource) -> BigRational {
    let d = ft.d(1, source) + ft.d(2, source);
    let x = (ft.w(1) + ft.w(2)) / rat(12, 1);
    let rest = BigRational::one() - x;
    d / rat(12, 1) / (&rest * &rest)
}

fn within_rel(name: String, lhs: f64, rhs: f64, rel: f64) -> Check {
    Check::float(name, lhs, rhs, Verdict::from_bool(((lhs - rhs) / rhs).abs() <= rel))
}

pub fn verify_formulas(p: &FormulaParams, seed: u64) -> Result<ExperimentReport, LabError> {
    if p.l_max < 1 || p.n_max < 16 {
        return Err(LabError::Usage("need l-max >= 1 and n-max >= 16".into()));
    }
    let mut rep = ExperimentReport::new("verify-formulas", seed);
    rep.param("l_max", p.l_max);
    rep.param("n_max", p.n_max);
    let lt = p.l_max.max(3);
    let table = count_table(p.n_max, lt);
    let ft = FormulaTable::new();

    let small = p.n_max.min(200);
    let direct = CountTable::build(small, lt);
    let same = (0..=small).all(|n| (1..=lt).all(|l| direct.get(n, l).ok() == table.get(n, l).ok()));
    rep.check(Check::text(format!("first-subtree table vs label recursion n<={small}"), same, true, Verdict::from_bool(same)));

    for l in 1..=p.l_max {
        let w = w_formula(l as u64);
        let o = w_oracle(&table, l, p.n_max)?;
        let gap = &w - &o;
        let ok = gap.is_positive() && gap <= &w / rat(100, 1);
        rep.check(Check::exact(format!("w l={l} vs partial sum n<={}", p.n_max), &w, &o, Verdict::from_bool(ok)));
        let positive = (0..=p.n_max).all(|n| !table.get(n, l).unwrap().is_zero());
        rep.check(Check::text(format!("w l={l} partial sums increase"), positive, true, Verdict::from_bool(positive)));
        rep.point(Point::new("l", l as f64, "w gap", to_f64(&gap), None));
    }
    for l in 1..=p.l_max as u64 {
        let printed = d_formula_printed(l);
        let oracle = ft.d_oracle(l);
        let v = if printed == oracle { Verdict::Pass } else { Verdict::ExpectedFail };
        rep.check(Check::exact(format!("d l={l} printed vs oracle"), &printed, &oracle, v));
    }
    for l in 1..=lt.min(3) {
        let ex = d_extrapolate(&table, l, p.n_max)?;
        let oracle = ft.d_oracle(l as u64);
        let ok = (&ex.estimate - &oracle).abs() <= &ex.error * rat(4, 1) + rat(1, 1000);
        rep.check(Check::exact(format!("d l={l} extrapolated ratio vs oracle"), &ex.estimate, &oracle, Verdict::from_bool(ok)));
        rep.point(Point::new("l", l as f64, "d extrapolation error", to_f64(&ex.error), None));
    }
    for l in 1..=p.l_max as u64 {
        for (source, tag) in [(DSource::Oracle, "oracle"), (DSource::Printed, "printed")] {
            let row = ft.kernel_row(l, source);
            let raw = &row.raw_deficit + BigRational::one();
            let v = match (row.raw_deficit.is_zero(), source) {
                (true, _) => Verdict::Pass,
                (false, DSource::Printed) => Verdict::ExpectedFail,
                (false, DSource::Oracle) => Verdict::Fail,
            };
            rep.check(Check::exact(format!("kernel l={l} {tag} raw row sum"), &raw, &BigRational::one(), v));
        }
    }
    let row = ft.kernel_row(1, DSource::Oracle);
    rep.check(Check::exact("kernel l=1 stay", &row.r, &rat(4, 27), Verdict::from_bool(row.r == rat(4, 27))));
    rep.check(Check::exact("kernel l=1 up", &row.p, &rat(23, 27), Verdict::from_bool(row.p == rat(23, 27))));
    let one = BigRational::one();
    let m = height_one_mass(&ft, DSource::Oracle);
    rep.check(Check::exact("height-1 ball mass oracle", &m, &one, Verdict::from_bool(m.is_one())));
    let m = height_one_mass(&ft, DSource::Printed);
    let v = if m.is_one() { Verdict::Pass } else { Verdict::ExpectedFail };
    rep.check(Check::exact("height-1 ball mass printed", &m, &one, v));

    let l = 200u64;
    let row = ft.kernel_row(l, DSource::Oracle);
    let (q, pp) = (to_f64(row.q.as_ref().expect("l >= 2")), to_f64(&row.p));
    rep.check(within_rel(format!("l(1-q/p) at l={l}"), l as f64 * (1.0 - q / pp), 8.0, 0.05));
    rep.check(within_rel(format!("l(p-1/3) at l={l}"), l as f64 * (pp - 1.0 / 3.0), 4.0 / 3.0, 0.05));
    let l = 2000u64;
    for m in [1u64, 2] {
        let v = to_f64(&subtree_dip_prob(l, m)) * (l as f64).powi(3) / m as f64;
        rep.check(within_rel(format!("l^3 dip/m at l={l} m={m}"), v, 4.0, 0.01));
    }

    let kernel = SpineKernel::new(&ft, 1 << 18);
    let k = 10_000usize;
    for a in [0.3f64, 0.5, 0.8] {
        let j = (a * k as f64).floor() as usize;
        let v = never_hit_prob(k, j, &kernel, 1e-6)?;
        let target = 1.0 - a.powi(7);
        rep.check(Check::float(format!("never-hit k={k} j={j}"), v, target, Verdict::from_bool((v - target).abs() < 1e-2)));
    }
    let mut prev = 0.0;
    let mut monotone = true;
    for start in 11..=200 {
        let v = never_hit_prob(start, 10, &kernel, 1e-6)?;
        monotone &= v >= prev;
        prev = v;
    }
    rep.check(Check::text("never-hit nondecreasing in k (j=10)", monotone, true, Verdict::from_bool(monotone)));

    let edge = LabeledTree::star(1, &[1]).expect("edge");
    let v = mu_n_ball_prob(&table, &edge, 2)?;
    rep.check(Check::exact("edge ball n=2", &v, &rat(2, 9), Verdict::from_bool(v == rat(2, 9))));
    let n_edge = 2000;
    let big = count_table(n_edge, 1);
    let v = to_f64(&mu_n_ball_prob(&big, &edge, n_edge)?);
    rep.check(within_rel(format!("edge ball n={n_edge} vs 1/12"), v, 1.0 / 12.0, 0.002));
    for n in [10usize, 100, 1000, 2000] {
        rep.point(Point::new("n", n as f64, "edge ball", to_f64(&mu_n_ball_prob(&big, &edge, n)?), None));
    }
    Ok(rep)
}

// ------------------------------------------------------------ spine-scaling

#[derive(Debug, Clone)]
pub struct SpineParams {
    pub n: usize,
    pub replicas: usize,
    /// extra lengths for the trend
    pub n_list: Vec<usize>,
}

/// Gamma(9/2, scale 4/3): the law of Z^2 at time 2/3 for a dimension-9
/// Bessel process from 0.
pub fn bessel9_square_law() -> Gamma {
    Gamma::new(4.5, 0.75).expect("valid gamma")
}

fn spine_endpoints(n: usize, replicas: usize, seed: u64) -> Vec<f64> {
    let kernel = SpineKernel::new(&FormulaTable::new(), n + 2);
    replicate(seed, replicas, |rng| {
        let mut y = 1;
        for _ in 0..n {
            y = spine_step(&kernel, y, rng);
        }
        (y as f64).powi(2) / n as f64
    })
}

pub fn spine_scaling(p: &SpineParams, seed: u64) -> Result<ExperimentReport, LabError> {
    if p.n < 1000 || p.replicas < 1000 || p.n_list.iter().any(|&n| n < 1000) {
        return Err(LabError::Usage("spine lengths and replicas must be at least 1000".into()));
    }
    let mut rep = ExperimentReport::new("spine-scaling", seed);
    rep.param("n", p.n);
    rep.param("replicas", p.replicas);
    rep.param("n_list", &p.n_list);
    let law = bessel9_square_law();
    let mut ns = vec![p.n];
    ns.extend(p.n_list.iter().filter(|&&n| n != p.n));
    let mut trend = Vec::new();
    for &n in &ns {
        let mut xs = spine_endpoints(n, p.replicas, arm_seed(seed, &format!("spine-{n}")));
        let (mean, se) = mean_se(&xs);
        let ks = ks_distance(&mut xs, |x| law.cdf(x));
        rep.point(Point::new("n", n as f64, "mean Y^2/n", mean, Some(se)));
        rep.point(Point::new("n", n as f64, "KS vs Gamma(9/2, 4/3)", ks, None));
        if n == p.n {
            rep.check(Check::float(format!("mean Y^2/n at n={n}"), mean, 6.0, Verdict::from_bool((5.7..=6.3).contains(&mean))));
            rep.check(Check::float(format!("KS at n={n}"), ks, 0.05, Verdict::from_bool(ks <= 0.05)));
        }
        trend.push((n, mean));
    }
    if trend.len() > 1 {
        trend.sort_by_key(|t| t.0);
        let text: Vec<String> = trend.iter().map(|(n, m)| format!("{n}:{m:.4}")).collect();
        rep.check(Check::text("mean Y^2/n by n", text.join(" "), 6, Verdict::Info));
    }
    Ok(rep)
}

// ----------------------------------------------------------- tv-convergence

#[derive(Debug, Clone)]
pub struct TvParams {
    pub radius: usize,
    pub n_list: Vec<usize>,
    pub samples: usize,
    pub eps: f64,
    pub resamples: usize,
}

pub const TV_BAR: f64 = 0.1;

struct UipqArm {
    codes: Vec<CanonicalCode>,
    aborted: usize,
    eps_actual: f64,
}

fn uipq_arm(radius: usize, eps: f64, samples: usize, seed: u64) -> Result<UipqArm, LabError> {
    let sampler = UipqSampler::new(radius, eps)?;
    let draws = replicate(seed, samples, |rng| sampler.sample(rng).map(|b| (b.code(), b.aborted)));
    let mut codes = Vec::with_capacity(samples);
    let mut aborted = 0;
    for d in draws {
        let (c, a) = d?;
        codes.push(c);
        aborted += a as usize;
    }
    Ok(UipqArm { codes, aborted, eps_actual: sampler.eps_actual() })
}

fn mu_n_arm(n: usize, radius: usize, samples: usize, seed: u64) -> Result<Vec<CanonicalCode>, LabError> {
    replicate(seed, samples, |rng| ball_code(&sample_mu_n(n, rng), radius))
        .into_iter()
        .map(|r| r.map_err(LabError::from))
        .collect()
}

pub fn tv_convergence(p: &TvParams, seed: u64) -> Result<ExperimentReport, LabError> {
    if !(1..=2).contains(&p.radius) || p.samples < 1000 || p.n_list.is_empty() || p.n_list.contains(&0) {
        return Err(LabError::Usage("need radius 1 or 2, samples >= 1000 and a nonempty n-list of sizes >= 1".into()));
    }
    if !(p.eps > 0.0 && p.eps < 1.0) || p.resamples < 10 {
        return Err(LabError::Usage("need 0 < epsilon < 1 and at least 10 resamples".into()));
    }
    let mut rep = ExperimentReport::new("tv-convergence", seed);
    rep.param("radius", p.radius);
    rep.param("n_list", &p.n_list);
    rep.param("samples", p.samples);
    rep.param("epsilon", p.eps);
    rep.param("resamples", p.resamples);

    let limit = uipq_arm(p.radius, p.eps, p.samples, arm_seed(seed, "uipq"))?;
    let half = uipq_arm(p.radius, p.eps / 2.0, p.samples, arm_seed(seed, "uipq-half"))?;
    let finite: Vec<Vec<CanonicalCode>> = p
        .n_list
        .iter()
        .map(|&n| mu_n_arm(n, p.radius, p.samples, arm_seed(seed, &format!("mu-n-{n}"))))
        .collect::<Result<_, _>>()?;
    let mut arms: Vec<&[CanonicalCode]> = vec![&limit.codes, &half.codes];
    arms.extend(finite.iter().map(|v| v.as_slice()));
    let (ids, k) = index_samples(&arms);

    for (arm, tag) in [(&limit, "eps"), (&half, "eps/2")] {
        rep.point(Point::new("epsilon", if tag == "eps" { p.eps } else { p.eps / 2.0 }, "certified bound", arm.eps_actual, None));
        rep.point(Point::new("epsilon", if tag == "eps" { p.eps } else { p.eps / 2.0 }, "aborted fraction", arm.aborted as f64 / p.samples as f64, None));
        let distinct = arm.codes.iter().collect::<BTreeSet<_>>().len();
        rep.point(Point::new("epsilon", if tag == "eps" { p.eps } else { p.eps / 2.0 }, "distinct codes", distinct as f64, None));
    }
    let mut tvs = Vec::new();
    for (i, &n) in p.n_list.iter().enumerate() {
        let est = bootstrap_tv(&ids[2 + i], &ids[0], k, p.resamples, arm_seed(seed, &format!("bootstrap-{n}")));
        rep.point(Point::new("n", n as f64, "TV", est.tv, Some(est.sd)));
        rep.point(Point::new("n", n as f64, "TV bootstrap 2.5%", est.lo, None));
        rep.point(Point::new("n", n as f64, "TV bootstrap 97.5%", est.hi, None));
        let distinct = finite[i].iter().collect::<BTreeSet<_>>().len();
        rep.point(Point::new("n", n as f64, "distinct codes", distinct as f64, None));
        let other = bootstrap_tv(&ids[2 + i], &ids[1], k, p.resamples, arm_seed(seed, &format!("bootstrap-half-{n}")));
        rep.point(Point::new("n", n as f64, "TV vs eps/2 arm", other.tv, Some(other.sd)));
        let shift = (est.tv - other.tv).abs();
        rep.check(Check::float(format!("TV at n={n} stable under eps/2"), shift, est.sd + other.sd, Verdict::from_bool(shift <= est.sd + other.sd)));
        tvs.push((n, est));
    }
    for w in tvs.windows(2) {
        let ((a, x), (b, y)) = (w[0], w[1]);
        let drop = x.tv - y.tv;
        let bar = x.sd + y.sd;
        rep.check(Check::float(format!("TV decreases n={a} to n={b}"), drop, bar, Verdict::from_bool(drop > bar)));
    }
    let (n_last, last) = *tvs.last().expect("nonempty n-list");
    rep.check(Check::float(format!("TV at n={n_last} (empirical bar)"), last.tv, TV_BAR, Verdict::from_bool(last.tv <= TV_BAR)));
    let (obs, q95) = permutation_tv(&ids[0], &ids[1], k, p.resamples, arm_seed(seed, "permutation"));
    rep.check(Check::float("UIPQ eps vs eps/2 TV below permutation 95% level", obs, q95, Verdict::from_bool(obs <= q95)));
    Ok(rep)
}

// ------------------------------------------------------------------- sample

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SampleKind {
    /// run the law checks of the exact samplers
    All,
    MuN,
    RhoHat,
    Spine,
    MuTreeBall,
    UipqBall,
}

impl SampleKind {
    pub fn name(&self) -> &'static str {
        match self {
            SampleKind::All => "all",
            SampleKind::MuN => "mu-n",
            SampleKind::RhoHat => "rho-hat",
            SampleKind::Spine => "spine",
            SampleKind::MuTreeBall => "mu-tree-ball",
            SampleKind::UipqBall => "uipq-ball",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleParams {
    pub kind: SampleKind,
    /// tree size for mu-n, spine length for spine
    pub n: usize,
    /// root label for rho-hat
    pub label: i32,
    /// ball radius for uipq-ball, generation depth for mu-tree-ball
    pub radius: usize,
    pub samples: usize,
    pub eps: f64,
    pub dump: Option<PathBuf>,
}

fn check_mu_n(p: &SampleParams, seed: u64, rep: &mut ExperimentReport) {
    for n in [2usize, 3] {
        let all = all_labeled_trees(n, 1, true);
        let index: HashMap<String, usize> = all.iter().enumerate().map(|(i, t)| (encode_contour(t).to_string(), i)).collect();
        let mut counts = vec![0u64; all.len()];
        for t in replicate(arm_seed(seed, &format!("uniform-{n}")), p.samples, |rng| sample_mu_n(n, rng)) {
            counts[index[&encode_contour(&t).to_string()]] += 1;
        }
        rep.check(chi_check(format!("mu_n uniform over {} trees n={n} (p-value)", all.len()), &counts, &vec![1.0 / all.len() as f64; all.len()]));
    }
    let n = p.n;
    let draws = replicate(arm_seed(seed, &format!("acceptance-{n}")), p.samples, |rng| sample_mu_n_counted(n, rng).1);
    let attempts: u64 = draws.iter().sum();
    rep.check(three_sigma(format!("mu_n acceptance n={n}"), p.samples as u64, attempts, 2.0 / (n as f64 + 2.0)));
}

/// Exact joint law of (dip below m, size) for trees of root label 2 and
/// m = 1, up to size `max`, with one tail cell per indicator.
fn lazy_cells(max: usize) -> Vec<f64> {
    use num_traits::ToPrimitive;
    let table = CountTable::build(max, 2);
    let w2 = to_f64(&w_formula(2));
    let mut probs = vec![0.0; 2 * (max + 2)];
    for e in 0..=max {
        let all = table.get(e, 2).unwrap().to_f64().unwrap();
        let high = table.get(e, 1).unwrap().to_f64().unwrap();
        let scale = 12f64.powi(-(e as i32)) / w2;
        probs[2 * e] = high * scale;
        probs[2 * e + 1] = (all - high) * scale;
    }
    let no_dip = to_f64(&w_formula(1)) / w2;
    let small_no_dip: f64 = (0..=max).map(|e| probs[2 * e]).sum();
    let small_dip: f64 = (0..=max).map(|e| probs[2 * e + 1]).sum();
    probs[2 * (max + 1)] = no_dip - small_no_dip;
    probs[2 * (max + 1) + 1] = 1.0 - no_dip - small_dip;
    probs
}

fn check_rho_hat(p: &SampleParams, seed: u64, rep: &mut ExperimentReport) {
    for l in [1i32, 3] {
        let draws = replicate(arm_seed(seed, &format!("positivity-{l}")), p.samples, |rng| {
            let d = sample_rho_hat_counted(l, rng, RhoCondition::None);
            (d.positive, d.attempts)
        });
        let (pos, att) = draws.iter().fold((0, 0), |(a, b), &(x, y)| (a + x, b + y));
        rep.check(three_sigma(format!("rho-hat positivity l={l}"), pos, att, to_f64(&w_formula(l as u64)) / 2.0));
    }
    for (l, m) in [(3i32, 1i32), (5, 2)] {
        let hits = replicate(arm_seed(seed, &format!("dip-{l}-{m}")), p.samples, |rng| {
            sample_rho_hat(l, rng, RhoCondition::None).min_label() <= m
        });
        let h = hits.iter().filter(|&&x| x).count() as u64;
        rep.check(three_sigma(format!("rho-hat dip l={l} m={m}"), h, p.samples as u64, to_f64(&subtree_dip_prob(l as u64, m as u64))));
    }
    let max = 6;
    let probs = lazy_cells(max);
    let key = |dip: bool, t: &LabeledTree| 2 * t.edges().min(max + 1) + dip as usize;
    for lazy in [true, false] {
        let keys = replicate(arm_seed(seed, if lazy { "lazy" } else { "direct" }), p.samples, |rng| {
            if lazy {
                let (dip, t) = sample_rho_hat_lazy(2, 1, rng);
                key(dip, &t)
            } else {
                let t = sample_rho_hat(2, rng, RhoCondition::None);
                key(t.min_label() <= 1, &t)
            }
        });
        let mut counts = vec![0u64; probs.len()];
        for k in keys {
            counts[k] += 1;
        }
        let tag = if lazy { "lazy" } else { "direct" };
        rep.check(chi_check(format!("rho-hat l=2 m=1 {tag} joint law (p-value)"), &counts, &probs));
    }
}

fn check_spine(p: &SampleParams, seed: u64, rep: &mut ExperimentReport) {
    let kernel = SpineKernel::new(&FormulaTable::new(), 10_002);
    let steps = replicate(arm_seed(seed, "first-step"), p.samples, |rng| spine_step(&kernel, 1, rng) == 1);
    let stay = steps.iter().filter(|&&s| s).count() as u64;
    rep.check(three_sigma("spine stays at 1".into(), stay, p.samples as u64, 4.0 / 27.0));
    let runs = 1000;
    let high = replicate(arm_seed(seed, "transience"), runs, |rng| {
        let y = sample_spine_prefix(10_000, &kernel, rng);
        y[100..].iter().all(|&x| x >= 2)
    });
    let h = high.iter().filter(|&&x| x).count();
    rep.check(Check::float(
        "spine min after 100 steps >= 2 (fraction of 1000 runs)",
        h as f64 / runs as f64,
        0.95,
        Verdict::from_bool(h * 100 >= 95 * runs),
    ));
}

fn check_mu_tree_ball(p: &SampleParams, seed: u64, rep: &mut ExperimentReport) {
    let kernel = SpineKernel::new(&FormulaTable::new(), 64);
    let target = LabeledTree::star(1, &[1]).expect("edge");
    let hits = replicate(arm_seed(seed, "mu-ball"), p.samples, |rng| sample_mu_tree_ball(1, &kernel, rng) == target);
    let h = hits.iter().filter(|&&x| x).count() as u64;
    let ft = FormulaTable::new();
    let exact = to_f64(&mu_ball_prob(&ft, &target, DSource::Oracle).expect("height 1"));
    rep.check(three_sigma("tree ball B_1 = root-child(1)".into(), h, p.samples as u64, exact));
}

fn check_uipq(p: &SampleParams, seed: u64, rep: &mut ExperimentReport) -> Result<(), LabError> {
    let sampler = UipqSampler::new(p.radius, p.eps)?;
    let draws = replicate(arm_seed(seed, "uipq-check"), p.samples, |rng| {
        sampler.sample(rng).map(|b| (validate_ball(&b.ball).is_ok(), b.s >= 1 && b.eps_actual <= p.eps))
    });
    let mut bad = 0;
    for d in draws {
        let (valid, cert) = d?;
        bad += (!valid || !cert) as usize;
    }
    rep.check(Check::text(format!("uipq balls valid and certified R={}", p.radius), bad, 0, Verdict::from_bool(bad == 0)));
    rep.point(Point::new("epsilon", p.eps, "certified bound", sampler.eps_actual(), None));
    Ok(())
}

fn dump_lines(p: &SampleParams, seed: u64) -> Result<Vec<String>, LabError> {
    let kind = p.kind;
    let dseed = arm_seed(seed, &format!("dump-{}", kind.name()));
    let kernel = SpineKernel::new(&FormulaTable::new(), p.n.max(p.radius) + 2);
    let uipq = if kind == SampleKind::UipqBall { Some(UipqSampler::new(p.radius, p.eps)?) } else { None };
    let payloads = replicate(dseed, p.samples, |rng| -> Result<String, LabError> {
        Ok(match kind {
            SampleKind::All => unreachable!("no dump for all"),
            SampleKind::MuN => encode_contour(&sample_mu_n(p.n, rng)).to_string(),
            SampleKind::RhoHat => encode_contour(&sample_rho_hat(p.label, rng, RhoCondition::None)).to_string(),
            SampleKind::Spine => {
                sample_spine_prefix(p.n, &kernel, rng).iter().map(|y| y.to_string()).collect::<Vec<_>>().join(",")
            }
            SampleKind::MuTreeBall => encode_contour(&sample_mu_tree_ball(p.radius, &kernel, rng)).to_string(),
            SampleKind::UipqBall => uipq.as_ref().expect("sampler").sample(rng)?.code().to_string(),
        })
    });
    payloads
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let line = serde_json::json!({"seed": dseed, "replica": i, "kind": kind.name(), "payload": s?});
            Ok(line.to_string())
        })
        .collect()
}

pub fn sample(p: &SampleParams, seed: u64) -> Result<ExperimentReport, LabError> {
    if p.samples == 0 || p.n == 0 || p.radius == 0 || p.label < 1 {
        return Err(LabError::Usage("samples, n, radius and label must be positive".into()));
    }
    if p.kind == SampleKind::UipqBall && !(p.eps > 0.0 && p.eps < 1.0) {
        return Err(LabError::Usage("need 0 < epsilon < 1".into()));
    }
    let mut rep = ExperimentReport::new("sample", seed);
    rep.param("kind", p.kind.name());
    rep.param("n", p.n);
    rep.param("label", p.label);
    rep.param("radius", p.radius);
    rep.param("samples", p.samples);
    rep.param("epsilon", p.eps);
    let all = p.kind == SampleKind::All;
    if all || p.kind == SampleKind::MuN {
        check_mu_n(p, seed, &mut rep);
    }
    if all || p.kind == SampleKind::RhoHat {
        check_rho_hat(p, seed, &mut rep);
    }
    if all || p.kind == SampleKind::Spine {
        check_spine(p, seed, &mut rep);
    }
    if all || p.kind == SampleKind::MuTreeBall {
        check_mu_tree_ball(p, seed, &mut rep);
    }
    if p.kind == SampleKind::UipqBall {
        check_uipq(p, seed, &mut rep)?;
    }
    if let Some(path) = &p.dump {
        if all {
            return Err(LabError::Usage("--dump needs a single --kind".into()));
        }
        let mut body = dump_lines(p, seed)?.join("\n");
        body.push('\n');
        std::fs::write(path, body)?;
    }
    Ok(rep)
}
