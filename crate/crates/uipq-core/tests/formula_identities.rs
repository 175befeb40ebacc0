use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use uipq_core::formulas::*;
use uipq_core::samplers::{spine_step, RandomSource};
use uipq_core::tree_core::{all_labeled_trees, all_plane_trees, for_each_labeling};
use uipq_core::LabeledTree;

fn brute_count(n: usize, l: i32) -> BigUint {
    let mut c = 0u64;
    for shape in all_plane_trees(n) {
        for_each_labeling(&shape, l, |labels| {
            if labels.iter().all(|&x| x >= 1) {
                c += 1;
            }
        });
    }
    BigUint::from(c)
}

#[test]
fn counts_match_exhaustive_enumeration() {
    let table = CountTable::build(8, 4);
    for n in 0..=8 {
        for l in 1..=4 {
            assert_eq!(table.get(n, l).unwrap(), brute_count(n, l as i32), "n = {n}, l = {l}");
        }
    }
    let d: Vec<BigUint> = (1..=3).map(|n| table.get(n, 1).unwrap()).collect();
    assert_eq!(d, [2u32, 9, 54].map(BigUint::from));
}

#[test]
fn both_table_builders_agree() {
    assert_eq!(CountTable::build(200, 5), CountTable::build_by_label(200, 5));
}

#[test]
fn root_label_one_closed_form() {
    let table = CountTable::build(40, 1);
    for n in 0..=40 {
        assert_eq!(table.get(n, 1).unwrap(), d_n_closed(n));
    }
    for n in 1..=40 {
        assert_eq!(d_ratio(&table, 1, n).unwrap(), d_ratio_l1_closed(n));
    }
    assert_eq!(d_ratio(&table, 1, 2).unwrap(), rat(8, 3));
}

#[test]
fn partial_sums_increase_toward_w() {
    let table = CountTable::build(80, 3);
    for l in 1..=3 {
        let w = w_formula(l as u64);
        let mut prev = BigRational::zero();
        let mut prev_gap = w.clone();
        for n in 0..=80 {
            let o = w_oracle(&table, l, n).unwrap();
            assert!(o > prev && o < w, "l = {l}, n = {n}");
            let gap = &w - &o;
            assert!(gap < prev_gap);
            prev = o;
            prev_gap = gap;
        }
    }
}

#[test]
fn oracle_d_closes_the_kernel() {
    let ft = FormulaTable::new();
    assert_eq!(ft.d_oracle(2), rat(23, 4));
    for l in 1..=60u64 {
        let row = ft.kernel_row(l, DSource::Oracle);
        assert!(row.raw_deficit.is_zero(), "l = {l}");
        let total = row.q.clone().unwrap_or_else(BigRational::zero) + &row.r + &row.p;
        assert!(total.is_one());
        assert_eq!(row.r, ft.w(l) * ft.w(l) / rat(12, 1));
    }
}

#[test]
fn oracle_d_agrees_with_count_ratios() {
    let table = CountTable::build(128, 3);
    let ft = FormulaTable::new();
    for l in 1..=3 {
        let ex = d_extrapolate(&table, l, 128).unwrap();
        let diff = (&ex.estimate - ft.d_oracle(l as u64)).abs();
        // the fit error estimate is a change under doubling; allow a few of them
        assert!(diff <= &ex.error * rat(4, 1) + rat(1, 1000), "l = {l}: {} vs {}", to_f64(&ex.estimate), to_f64(&ft.d_oracle(l as u64)));
    }
}

#[test]
fn printed_d_breaks_stochasticity() {
    let ft = FormulaTable::new();
    assert_eq!(d_formula_printed(1), rat(139, 210));
    let row = ft.kernel_row(1, DSource::Printed);
    let raw = to_f64(&(row.raw_deficit + BigRational::one()));
    assert!((raw - 0.9848).abs() < 1e-3, "{raw}");
}

/// Sum over c >= 1 of 12^-c c (d_1 + d_2)(w_1 + w_2)^(c-1), in closed form.
fn height_one_mass(ft: &FormulaTable, source: DSource) -> BigRational {
    let d = ft.d(1, source) + ft.d(2, source);
    let x = (ft.w(1) + ft.w(2)) / rat(12, 1);
    let one_minus = BigRational::one() - x;
    d / rat(12, 1) / (&one_minus * &one_minus)
}

#[test]
fn height_one_ball_mass() {
    let ft = FormulaTable::new();
    assert!(height_one_mass(&ft, DSource::Oracle).is_one());
    let printed = to_f64(&height_one_mass(&ft, DSource::Printed));
    assert!((printed - 0.652).abs() < 2e-3, "{printed}");
    // direct partial sum over stars with labels in {1, 2}
    let mut sum = BigRational::zero();
    for c in 1..=8usize {
        for mask in 0..(1u32 << c) {
            let labels: Vec<i32> = (0..c).map(|i| 1 + ((mask >> i) & 1) as i32).collect();
            sum += mu_ball_prob(&ft, &LabeledTree::star(1, &labels).unwrap(), DSource::Oracle).unwrap();
        }
    }
    let s = to_f64(&sum);
    assert!(s < 1.0 && s > 0.98, "{s}");
}

#[test]
fn ball_formula_examples() {
    let ft = FormulaTable::new();
    let edge = LabeledTree::star(1, &[1]).unwrap();
    assert_eq!(mu_ball_prob(&ft, &edge, DSource::Oracle).unwrap(), rat(1, 12));
    let e2 = LabeledTree::star(1, &[2]).unwrap();
    assert_eq!(mu_ball_prob(&ft, &e2, DSource::Printed).unwrap(), d_formula_printed(2) / rat(12, 1));
    assert!(mu_ball_prob(&ft, &LabeledTree::single(1), DSource::Oracle).is_err());
    let table = CountTable::build(6, 1);
    assert_eq!(mu_n_ball_prob(&table, &edge, 2).unwrap(), rat(2, 9));
}

#[test]
fn finite_ball_laws_sum_to_one() {
    let table = CountTable::build(6, 4);
    for n in 1..=6 {
        for s in 1..=2 {
            let mut sum = BigRational::zero();
            for e in 0..=n {
                for t in all_labeled_trees(e, 1, true) {
                    if t.height() <= s {
                        sum += mu_n_ball_prob_at(&table, &t, s, n).unwrap();
                    }
                }
            }
            assert!(sum.is_one(), "n = {n}, s = {s}: {sum}");
        }
    }
}

#[test]
fn edge_ball_converges() {
    let table = CountTable::build(60, 1);
    let edge = LabeledTree::star(1, &[1]).unwrap();
    for n in 2..=60 {
        assert_eq!(mu_n_ball_prob(&table, &edge, n).unwrap(), d_ratio_l1_closed(n) / rat(12, 1));
    }
    let big = CountTable::build_by_label(2000, 1);
    let at = to_f64(&mu_n_ball_prob(&big, &edge, 2000).unwrap());
    assert!((at * 12.0 - 1.0).abs() < 0.005, "{at}");
}

#[test]
fn kernel_asymptotics() {
    let ft = FormulaTable::new();
    let l = 200u64;
    let row = ft.kernel_row(l, DSource::Oracle);
    let (q, p) = (to_f64(row.q.as_ref().unwrap()), to_f64(&row.p));
    let slope = l as f64 * (1.0 - q / p);
    assert!((slope / 8.0 - 1.0).abs() < 0.05, "{slope}");
    let drift = l as f64 * (p - 1.0 / 3.0);
    assert!((drift / (4.0 / 3.0) - 1.0).abs() < 0.05, "{drift}");
    // the f64 kernel follows the exact rows
    let k = SpineKernel::new(&ft, 1024);
    assert!((k.p[200] - p).abs() < 1e-12 && (k.q[200] - q).abs() < 1e-12);
}

#[test]
fn dip_probabilities() {
    assert_eq!(subtree_dip_prob(3, 1), rat(2, 27));
    assert!(subtree_dip_prob(4, 4).is_one());
    let l = 2000u64;
    for m in [1u64, 3] {
        let v = to_f64(&subtree_dip_prob(l, m)) * (l as f64).powi(3) / m as f64;
        assert!((v / 4.0 - 1.0).abs() < 0.01, "m = {m}: {v}");
    }
}

#[test]
fn never_hit_limits() {
    let k = SpineKernel::new(&FormulaTable::new(), 1 << 18);
    let n = 10_000usize;
    for a in [0.3f64, 0.5, 0.8] {
        let j = (a * n as f64).floor() as usize;
        let p = never_hit_prob(n, j, &k, 1e-6).unwrap();
        assert!((p - (1.0 - a.powi(7))).abs() < 1e-2, "alpha = {a}: {p}");
    }
    assert_eq!(never_hit_prob(50, 50, &k, 1e-6).unwrap(), 0.0);
    let mut prev = 0.0;
    for start in 11..60 {
        let p = never_hit_prob(start, 10, &k, 1e-6).unwrap();
        assert!(p >= prev);
        prev = p;
    }
}

/// Dip-or-return frequency of the spine from y with its hanging trees,
/// followed until the label reaches `stop`.
fn simulated_dip(y: i32, m: i32, stop: i32, runs: usize, kernel: &SpineKernel, rng: &mut RandomSource) -> f64 {
    let dip: Vec<f64> = (0..stop as i64).map(|x| step_dip_f64(x, m as i64)).collect();
    let mut hits = 0;
    for _ in 0..runs {
        let mut x = y;
        while x < stop {
            if x <= m || rng.chance(dip[x as usize]) {
                hits += 1;
                break;
            }
            x = spine_step(kernel, x, rng);
        }
    }
    hits as f64 / runs as f64
}

#[test]
fn escape_bound_dominates_simulation() {
    let radius = 1;
    let kernel = SpineKernel::new(&FormulaTable::new(), 1 << 20);
    assert_eq!(escape_bound(&kernel, 2, radius, 1e-4, 8.0, 4096).unwrap(), 1.0);
    let mut prev = 1.0;
    for y in [3usize, 5, 10, 30, 100, 300] {
        let b = escape_bound(&kernel, y, radius, 1e-4, 8.0, 4096).unwrap();
        assert!(b <= prev && b > 0.0);
        prev = b;
    }
    let mut rng = RandomSource::new(81);
    let runs = 10_000;
    for y in [10usize, 30, 100] {
        let b = escape_bound(&kernel, y, radius, 1e-4, 8.0, 4096).unwrap();
        let mc = simulated_dip(y as i32, radius as i32 + 1, 4 * y as i32, runs, &kernel, &mut rng);
        let sigma = (mc * (1.0 - mc) / runs as f64).sqrt();
        assert!(b >= mc - 3.0 * sigma, "y = {y}: bound {b} vs {mc}");
    }
}
