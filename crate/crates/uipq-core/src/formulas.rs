//! Exact counts D_n^(l), the weights w_l and d_l, the spine kernel and the
//! numerical bounds used by the infinite-ball sampler.

use crate::tree_core::LabeledTree;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("count table holds n <= {n_max}, l <= {l_max}; requested n = {n}, l = {l}")]
    TableSize { n: usize, l: usize, n_max: usize, l_max: usize },
    #[error("ball formula needs a well-labeled tree of height at least 1")]
    Height0,
    #[error("ball must be well-labeled with root label 1")]
    NotWellLabeled,
    #[error("tail bound {bound:e} above tolerance {tol:e} at cap {cap}")]
    Precision { bound: f64, tol: f64, cap: usize },
    #[error("escape bound did not settle below tolerance {tol:e} by cap {cap}")]
    NoConvergence { tol: f64, cap: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub fn rat(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

fn int(x: &BigUint) -> BigInt {
    BigInt::from(x.clone())
}

pub fn to_f64(x: &BigRational) -> f64 {
    // ratio of big integers without overflow
    let (n, d) = (x.numer(), x.denom());
    let shift = (n.bits().max(d.bits()) as i64 - 900).max(0);
    let nf = (n >> shift as usize).to_f64().unwrap_or(f64::NAN);
    let df = (d >> shift as usize).to_f64().unwrap_or(f64::NAN);
    nf / df
}

/// "p/q" form; integers print without a denominator.
pub fn rat_string(x: &BigRational) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn catalan(n: usize) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..n {
        c = c * BigUint::from(2 * (2 * i + 1)) / BigUint::from(i + 2);
    }
    c
}

/// 3^n Catalan(n): all labelings of all shapes, the count when no positivity
/// constraint can bind.
pub fn free_count(n: usize) -> BigUint {
    catalan(n) * BigUint::from(3u32).pow(n as u32)
}

/// D_n = D_n^(1) = 2 * 3^n Catalan(n) / (n + 2).
pub fn d_n_closed(n: usize) -> BigUint {
    free_count(n) * 2u32 / BigUint::from(n + 2)
}

/// D_n^(l) for 0 <= n <= n_max, 1 <= l <= l_max, by the first-subtree
/// decomposition. Entries with l > n equal 3^n Catalan(n) and are shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    n_max: usize,
    l_max: usize,
    free: Vec<BigUint>,
    // cols[l][n - l] for l <= n <= reach(l)
    cols: Vec<Vec<BigUint>>,
}

impl CountTable {
    pub fn build(n_max: usize, l_max: usize) -> Self {
        assert!(l_max >= 1);
        let free: Vec<BigUint> = {
            let mut v = Vec::with_capacity(n_max + 2);
            let mut c = BigUint::one();
            v.push(c.clone());
            for i in 0..=n_max {
                c = c * BigUint::from(6 * (2 * i + 1)) / BigUint::from(i + 2);
                v.push(c.clone());
            }
            v
        };
        let reach = |l: usize| n_max.saturating_sub(l.saturating_sub(l_max));
        let top = (1..).take_while(|&l| l <= reach(l)).last().unwrap_or(0);
        let mut cols: Vec<Vec<BigUint>> = vec![Vec::new(); top + 2];
        // acols[l][m - (l - 1)] = A_m^(l) for m >= l - 1
        let mut acols: Vec<Vec<BigUint>> = vec![Vec::new(); top + 2];
        let three = BigUint::from(3u32);
        let get = |cols: &Vec<Vec<BigUint>>, m: usize, l: usize| -> BigUint {
            if l == 0 {
                BigUint::zero()
            } else if l > m {
                free[m].clone()
            } else {
                cols[l][m - l].clone()
            }
        };
        let fill_a = |cols: &Vec<Vec<BigUint>>, acols: &mut Vec<Vec<BigUint>>, m: usize| {
            for l in 1..=top.min(m + 1) {
                if m + 1 > reach(l) {
                    continue;
                }
                let a = get(cols, m, l - 1) + get(cols, m, l) + get(cols, m, l + 1);
                debug_assert_eq!(acols[l].len(), m + 1 - l);
                acols[l].push(a);
            }
        };
        fill_a(&cols, &mut acols, 0);
        for n in 1..=n_max {
            for l in 1..=top.min(n) {
                if n > reach(l) {
                    continue;
                }
                let mut acc = BigUint::zero();
                for j in 1..=n {
                    let m = j - 1;
                    let r = n - j;
                    let d: &BigUint = if l > r { &free[r] } else { &cols[l][r - l] };
                    if m + 1 < l {
                        acc += &free[m] * d * &three;
                    } else {
                        acc += &acols[l][m + 1 - l] * d;
                    }
                }
                debug_assert_eq!(cols[l].len(), n - l);
                cols[l].push(acc);
            }
            if n < n_max {
                fill_a(&cols, &mut acols, n);
            }
        }
        cols.truncate(l_max + 1);
        cols.resize(l_max + 1, Vec::new());
        debug_assert!(cols.iter().enumerate().skip(1).all(|(l, c)| c.len() == (n_max + 1).saturating_sub(l)));
        CountTable { n_max, l_max, free, cols }
    }

    /// The same table through generating functions T_l = sum_n D_n^(l) z^n:
    /// T_1 from the closed form, T_0 = 0, and the relation
    /// T_l = 1 / (1 - z (T_{l-1} + T_l + T_{l+1})) solved for T_{l+1}.
    /// Each step loses one order, so T_1 starts l_max orders deeper.
    pub fn build_by_label(n_max: usize, l_max: usize) -> Self {
        assert!(l_max >= 1);
        let len = n_max + l_max + 1;
        let free: Vec<BigUint> = (0..=n_max + 1).map(free_count).collect();
        let mut prev: Vec<BigInt> = vec![BigInt::zero(); len];
        let mut cur: Vec<BigInt> = (0..len).map(|n| BigInt::from(d_n_closed(n))).collect();
        let mut cols: Vec<Vec<BigUint>> = vec![Vec::new(); l_max + 1];
        for l in 1..=l_max {
            cols[l] = (l..=n_max).map(|n| cur[n].to_biguint().expect("counts are nonnegative")).collect();
            if l == l_max {
                break;
            }
            let k = len - l; // valid orders of cur
            let mut inv: Vec<BigInt> = Vec::with_capacity(k);
            inv.push(BigInt::one());
            for j in 1..k {
                let mut acc = BigInt::zero();
                for i in 1..=j {
                    acc -= &cur[i] * &inv[j - i];
                }
                inv.push(acc);
            }
            // (1 - 1/T_l)/z - T_l - T_{l-1}
            let mut next: Vec<BigInt> = vec![BigInt::zero(); len];
            for j in 0..k - 1 {
                next[j] = -&inv[j + 1] - &cur[j] - &prev[j];
            }
            prev = std::mem::replace(&mut cur, next);
        }
        CountTable { n_max, l_max, free, cols }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn get(&self, n: usize, l: usize) -> Result<BigUint, FormulaError> {
        if n > self.n_max || l == 0 || l > self.l_max {
            return Err(FormulaError::TableSize { n, l, n_max: self.n_max, l_max: self.l_max });
        }
        Ok(self.raw(n, l))
    }

    fn raw(&self, n: usize, l: usize) -> BigUint {
        if l > n {
            self.free[n].clone()
        } else {
            self.cols[l][n - l].clone()
        }
    }

    /// Flat list of (n, l, value) for every stored entry with l <= n; the
    /// remaining entries are 3^n Catalan(n).
    pub fn entries(&self) -> Vec<(usize, usize, &BigUint)> {
        let mut out = Vec::new();
        for (l, col) in self.cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                out.push((l + i, l, v));
            }
        }
        out
    }

    pub fn from_entries(n_max: usize, l_max: usize, entries: Vec<(usize, usize, BigUint)>) -> Result<Self, FormulaError> {
        let free = (0..=n_max + 1).map(free_count).collect();
        let mut cols: Vec<Vec<BigUint>> = Vec::new();
        for (n, l, v) in entries {
            if cols.len() <= l {
                cols.resize(l + 1, Vec::new());
            }
            if l == 0 || n < l || cols[l].len() != n - l {
                return Err(FormulaError::Argument("entries out of order".into()));
            }
            cols[l].push(v);
        }
        cols.resize(l_max + 1, Vec::new());
        for (l, col) in cols.iter().enumerate().skip(1) {
            if col.len() != (n_max + 1).saturating_sub(l) {
                return Err(FormulaError::Argument(format!("column {l} has the wrong length")));
            }
        }
        if cols.len() != l_max + 1 {
            return Err(FormulaError::Argument("columns beyond l_max".into()));
        }
        Ok(CountTable { n_max, l_max, free, cols })
    }
}

pub fn w_formula(l: u64) -> BigRational {
    let l = l as i64;
    rat(2 * l * (l + 3), (l + 1) * (l + 2))
}

/// Partial sum of D_n^(l) 12^-n over n <= n_max.
pub fn w_oracle(table: &CountTable, l: usize, n_max: usize) -> Result<BigRational, FormulaError> {
    let mut acc = BigUint::zero();
    let twelve = BigUint::from(12u32);
    for n in 0..=n_max {
        acc = acc * &twelve + table.get(n, l)?;
    }
    Ok(BigRational::new(int(&acc), int(&twelve.pow(n_max as u32))))
}

/// The printed closed form (2 w_l / 560)(4l^4 + 30l^3 + 59l^2 + 42l + 4).
pub fn d_formula_printed(l: u64) -> BigRational {
    let x = l as i64;
    let poly = 4 * x.pow(4) + 30 * x.pow(3) + 59 * x * x + 42 * x + 4;
    w_formula(l) * rat(2, 560) * rat(poly, 1)
}

/// 12 D_{n-1}^(l) / D_n.
pub fn d_ratio(table: &CountTable, l: usize, n: usize) -> Result<BigRational, FormulaError> {
    if n == 0 {
        return Err(FormulaError::Argument("n must be at least 1".into()));
    }
    let num = table.get(n - 1, l)? * 12u32;
    Ok(BigRational::new(int(&num), int(&table.get(n, 1)?)))
}

/// 12 D_{n-1} / D_n = 2(n + 2)/(2n - 1) for root label 1.
pub fn d_ratio_l1_closed(n: usize) -> BigRational {
    let n = n as i64;
    rat(2 * (n + 2), 2 * n - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extrapolation {
    pub estimate: BigRational,
    pub error: BigRational,
    pub grid: Vec<usize>,
}

/// Least-squares fit of a + b/n to the values at the given points.
pub fn fit_inverse_n(points: &[(usize, BigRational)]) -> (BigRational, BigRational) {
    let m = BigRational::from_integer(BigInt::from(points.len()));
    let (mut sx, mut sxx, mut sy, mut sxy) =
        (BigRational::zero(), BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (n, y) in points {
        let x = rat(1, *n as i64);
        sx += &x;
        sxx += &x * &x;
        sy += y;
        sxy += &x * y;
    }
    let det = &m * &sxx - &sx * &sx;
    let b = (&m * &sxy - &sx * &sy) / &det;
    let a = (&sy - &b * &sx) / &m;
    (a, b)
}

fn dyadic_grid(n_max: usize, points: usize) -> Vec<usize> {
    (0..points).rev().map(|i| n_max >> i).filter(|&n| n >= 1).collect()
}

/// Limit of 12 D_{n-1}^(l)/D_n from a fit of a + b/n on the dyadic grid
/// ending at n_max; the error is the change from the grid ending at
/// n_max/2.
pub fn d_extrapolate(table: &CountTable, l: usize, n_max: usize) -> Result<Extrapolation, FormulaError> {
    let fit = |top: usize| -> Result<(BigRational, Vec<usize>), FormulaError> {
        let grid = dyadic_grid(top, 4);
        let pts = grid.iter().map(|&n| Ok((n, d_ratio(table, l, n)?))).collect::<Result<Vec<_>, FormulaError>>()?;
        Ok((fit_inverse_n(&pts).0, grid))
    };
    let (hi, grid) = fit(n_max)?;
    let (lo, _) = fit(n_max / 2)?;
    Ok(Extrapolation { error: (&hi - &lo).abs(), estimate: hi, grid })
}

/// Which d_l feeds the kernel and ball laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DSource {
    Printed,
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub q: Option<BigRational>,
    pub r: BigRational,
    pub p: BigRational,
    /// raw q + r + p - 1 before normalization
    pub raw_deficit: BigRational,
}

/// Memoized w_l and d_l. The oracle d_l solve the row-stochasticity
/// relation d_{l+1} = (12/w_l^2 - 1) d_l - d_{l-1}, d_0 = 0, from
/// d_1 = lim 12 D_{n-1}/D_n = 1.
#[derive(Debug, Default)]
pub struct FormulaTable {
    d_oracle: RefCell<Vec<BigRational>>,
}

impl FormulaTable {
    pub fn new() -> Self {
        FormulaTable { d_oracle: RefCell::new(vec![BigRational::zero(), BigRational::one()]) }
    }

    pub fn w(&self, l: u64) -> BigRational {
        if l == 0 {
            BigRational::zero()
        } else {
            w_formula(l)
        }
    }

    pub fn d_oracle(&self, l: u64) -> BigRational {
        let mut d = self.d_oracle.borrow_mut();
        while d.len() <= l as usize {
            let k = d.len() as u64 - 1;
            let w = w_formula(k);
            let c = rat(12, 1) / (&w * &w) - BigRational::one();
            let next = c * &d[k as usize] - &d[k as usize - 1];
            d.push(next);
        }
        d[l as usize].clone()
    }

    pub fn d(&self, l: u64, source: DSource) -> BigRational {
        match source {
            DSource::Oracle => self.d_oracle(l),
            DSource::Printed if l == 0 => BigRational::zero(),
            DSource::Printed => d_formula_printed(l),
        }
    }

    pub fn kernel_row(&self, l: u64, source: DSource) -> KernelRow {
        assert!(l >= 1);
        let w = self.w(l);
        let base = &w * &w / rat(12, 1);
        let dl = self.d(l, source);
        let q = (l >= 2).then(|| &base * self.d(l - 1, source) / &dl);
        let p = &base * self.d(l + 1, source) / &dl;
        let r = base;
        let sum = q.clone().unwrap_or_else(BigRational::zero) + &r + &p;
        let raw_deficit = &sum - BigRational::one();
        KernelRow { q: q.map(|q| q / &sum), r: r / &sum, p: p / &sum, raw_deficit }
    }
}

fn check_ball(w_star: &LabeledTree) -> Result<Vec<i32>, FormulaError> {
    if !crate::tree_core::is_well_labeled(w_star, 1) {
        return Err(FormulaError::NotWellLabeled);
    }
    let s = w_star.height();
    if s == 0 {
        return Err(FormulaError::Height0);
    }
    Ok((0..w_star.len()).filter(|&u| w_star.shape().depth(u) == s).map(|u| w_star.label(u)).collect())
}

/// mu(B_S(omega) = w_star) for a ball of height S >= 1.
pub fn mu_ball_prob(ft: &FormulaTable, w_star: &LabeledTree, source: DSource) -> Result<BigRational, FormulaError> {
    let top = check_ball(w_star)?;
    let mut sum = BigRational::zero();
    for i in 0..top.len() {
        let mut term = ft.d(top[i] as u64, source);
        for (j, &l) in top.iter().enumerate() {
            if j != i {
                term *= ft.w(l as u64);
            }
        }
        sum += term;
    }
    let scale = BigInt::from(12u32).pow(w_star.edges() as u32);
    Ok(sum / BigRational::from_integer(scale))
}

/// mu_n(B_S(omega) = w_star) where S is the height of w_star.
pub fn mu_n_ball_prob(table: &CountTable, w_star: &LabeledTree, n: usize) -> Result<BigRational, FormulaError> {
    let top = check_ball(w_star)?;
    let e = w_star.edges();
    let dn = table.get(n, 1)?;
    if n < e {
        return Ok(BigRational::zero());
    }
    let rest = n - e;
    let mut conv: Vec<BigUint> = vec![BigUint::zero(); rest + 1];
    conv[0] = BigUint::one();
    for &l in &top {
        let seq: Vec<BigUint> = (0..=rest).map(|m| table.get(m, l as usize)).collect::<Result<_, _>>()?;
        let mut next = vec![BigUint::zero(); rest + 1];
        for (a, ca) in conv.iter().enumerate() {
            if ca.is_zero() {
                continue;
            }
            for b in 0..=rest - a {
                next[a + b] += ca * &seq[b];
            }
        }
        conv = next;
    }
    Ok(BigRational::new(int(&conv[rest]), int(&dn)))
}

/// mu_n(B_s(omega) = w_star) for any s: balls of height below s only
/// occur as whole trees.
pub fn mu_n_ball_prob_at(table: &CountTable, w_star: &LabeledTree, s: usize, n: usize) -> Result<BigRational, FormulaError> {
    let h = w_star.height();
    if h > s {
        return Ok(BigRational::zero());
    }
    if h < s || h == 0 {
        if !crate::tree_core::is_well_labeled(w_star, 1) {
            return Err(FormulaError::NotWellLabeled);
        }
        let hit = if w_star.edges() == n { BigUint::one() } else { BigUint::zero() };
        return Ok(BigRational::new(int(&hit), int(&table.get(n, 1)?)));
    }
    mu_n_ball_prob(table, w_star, n)
}

/// P(some label <= m) under rho-hat^(l): 1 - w_{l-m}/w_l, or 1 if m >= l.
pub fn subtree_dip_prob(l: u64, m: u64) -> BigRational {
    if m >= l {
        return BigRational::one();
    }
    BigRational::one() - w_formula(l - m) / w_formula(l)
}

/// w_l in floating point.
pub fn w_f64(l: i64) -> f64 {
    if l <= 0 {
        0.0
    } else {
        let l = l as f64;
        2.0 - 4.0 / ((l + 1.0) * (l + 2.0))
    }
}

/// w_l - w_{l-m} without cancellation.
pub fn w_gap_f64(l: i64, m: i64) -> f64 {
    if m <= 0 {
        return 0.0;
    }
    if l - m <= 0 {
        return w_f64(l);
    }
    let (lf, mf) = (l as f64, m as f64);
    let a = lf - mf + 1.0;
    4.0 * mf * (2.0 * lf - mf + 3.0) / (a * (a + 1.0) * (lf + 1.0) * (lf + 2.0))
}

/// Floating-point subtree_dip_prob.
pub fn dip_f64(l: i64, m: i64) -> f64 {
    if m >= l {
        1.0
    } else {
        w_gap_f64(l, m) / w_f64(l)
    }
}

/// Normalized spine kernel rows in floating point for labels 1..=cap.
/// Rows up to `exact_upto` are rounded from exact rationals; beyond that
/// the ratios d_{l+1}/d_l continue through the same recurrence in f64,
/// which is contracting toward the growing solution.
#[derive(Debug, Clone)]
pub struct SpineKernel {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub p: Vec<f64>,
    /// q_l / p_l = d_{l-1} / d_{l+1}
    pub qp: Vec<f64>,
}

impl SpineKernel {
    pub fn new(ft: &FormulaTable, cap: usize) -> Self {
        let exact_upto = cap.min(512);
        let mut ratio = vec![0.0f64; cap + 2]; // d_{l+1}/d_l
        for l in 1..=exact_upto {
            ratio[l] = to_f64(&(ft.d_oracle(l as u64 + 1) / ft.d_oracle(l as u64)));
        }
        for l in exact_upto + 1..=cap {
            let w = w_f64(l as i64);
            ratio[l] = (12.0 / (w * w) - 1.0) - 1.0 / ratio[l - 1];
        }
        let mut k = SpineKernel {
            q: vec![0.0; cap + 1],
            r: vec![0.0; cap + 1],
            p: vec![0.0; cap + 1],
            qp: vec![0.0; cap + 1],
        };
        for l in 1..=cap {
            let w = w_f64(l as i64);
            let base = w * w / 12.0;
            let q = if l >= 2 { base / ratio[l - 1] } else { 0.0 };
            let p = base * ratio[l];
            let s = q + base + p;
            k.q[l] = q / s;
            k.r[l] = base / s;
            k.p[l] = p / s;
            k.qp[l] = if l >= 2 { 1.0 / (ratio[l - 1] * ratio[l]) } else { 0.0 };
        }
        k
    }

    pub fn cap(&self) -> usize {
        self.q.len() - 1
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// P_k[T_j = infinity] for the spine chain. With t_i = prod_{x=j+1}^{i}
/// q_x/p_x (t_j = 1) this is sum_{i=j}^{k-1} t_i / sum_{i>=j} t_i. The
/// infinite sum stops at a cap; past the cap t_i decays at least like
/// i^-7, giving the tail bound t_M (1 + M/6). The cap doubles from 4k
/// until the relative tail bound is below `tol`.
pub fn never_hit_prob(k: usize, j: usize, kernel: &SpineKernel, tol: f64) -> Result<f64, FormulaError> {
    if j < 1 || j > k {
        return Err(FormulaError::Argument(format!("need 1 <= j <= k, got j = {j}, k = {k}")));
    }
    if j == k {
        return Ok(0.0);
    }
    let max_cap = kernel.cap() - 1;
    let mut cap = (4 * k).min(max_cap);
    loop {
        let mut head = Neumaier::default();
        let mut all = Neumaier::default();
        let mut t = 1.0f64;
        for i in j..cap {
            if i > j {
                t *= kernel.qp[i];
            }
            if i < k {
                head.add(t);
            }
            all.add(t);
        }
        let tail = t * (1.0 + cap as f64 / 6.0);
        let total = all.value();
        let rel = tail / total;
        if rel <= tol {
            return Ok(head.value() / (total + tail / 2.0));
        }
        if cap >= max_cap {
            return Err(FormulaError::Precision { bound: rel, tol, cap });
        }
        cap = (cap * 2).min(max_cap);
    }
}

/// Probability that the spine started at label x >= m + 1, together with
/// all its hanging trees, ever shows a label <= m = R + 1. Solved exactly
/// on (R+1, cap] with v = 1 at R + 1 and the boundary value at cap given,
/// as a tridiagonal system.
#[derive(Debug, Clone)]
pub struct EscapeTable {
    pub radius: usize,
    pub cap: usize,
    /// v[x] for 0 <= x <= cap; v[x] = 1 for x <= R + 1
    pub v: Vec<f64>,
}

/// Per-step dip probability s(x) = 1 - (w_{x-m}/w_x)^2 of the two trees
/// hanging at a spine vertex of label x.
pub fn step_dip_f64(x: i64, m: i64) -> f64 {
    if x <= m {
        return 1.0;
    }
    let wx = w_f64(x);
    let gap = w_gap_f64(x, m);
    let lo = wx - gap;
    gap * (wx + lo) / (wx * wx)
}

impl EscapeTable {
    pub fn solve(kernel: &SpineKernel, radius: usize, cap: usize, boundary: f64) -> Self {
        let m = radius + 1;
        assert!(cap > m + 1 && cap <= kernel.cap());
        let mut v = vec![1.0f64; cap + 1];
        v[cap] = boundary;
        // unknowns x = m+1 ..= cap-1
        let lo = m + 1;
        let hi = cap - 1;
        let len = hi + 1 - lo;
        let mut a = vec![0.0; len]; // sub
        let mut b = vec![0.0; len]; // diag
        let mut c = vec![0.0; len]; // super
        let mut rhs = vec![0.0; len];
        for i in 0..len {
            let x = lo + i;
            let s = step_dip_f64(x as i64, m as i64);
            let keep = 1.0 - s;
            a[i] = -keep * kernel.q[x];
            b[i] = 1.0 - keep * kernel.r[x];
            c[i] = -keep * kernel.p[x];
            rhs[i] = s;
        }
        rhs[0] -= a[0] * 1.0;
        rhs[len - 1] -= c[len - 1] * boundary;
        // Thomas algorithm
        for i in 1..len {
            let f = a[i] / b[i - 1];
            b[i] -= f * c[i - 1];
            rhs[i] -= f * rhs[i - 1];
        }
        let mut x = vec![0.0; len];
        x[len - 1] = rhs[len - 1] / b[len - 1];
        for i in (0..len - 1).rev() {
            x[i] = (rhs[i] - c[i] * x[i + 1]) / b[i];
        }
        for i in 0..len {
            v[lo + i] = x[i].clamp(0.0, 1.0);
        }
        EscapeTable { radius, cap, v }
    }

    pub fn at(&self, x: i64) -> f64 {
        if x <= self.radius as i64 + 1 {
            1.0
        } else {
            self.v[x as usize]
        }
    }
}

/// Upper bound on the dip probability from label y, using the closure
/// v(cap) = K (R+2)/cap and doubling the cap from `start_cap` until the
/// value at y moves by less than `tol`.
pub fn escape_bound(
    kernel: &SpineKernel,
    y: usize,
    radius: usize,
    tol: f64,
    k_safety: f64,
    start_cap: usize,
) -> Result<f64, FormulaError> {
    if y <= radius + 1 {
        return Ok(1.0);
    }
    let mut cap = start_cap.max(4 * y).max(radius + 4);
    let solve = |cap: usize| {
        let t = EscapeTable::solve(kernel, radius, cap, (k_safety * (radius as f64 + 2.0) / cap as f64).min(1.0));
        t.at(y as i64)
    };
    if cap > kernel.cap() {
        return Err(FormulaError::NoConvergence { tol, cap });
    }
    let mut prev = solve(cap);
    while cap * 2 <= kernel.cap() {
        cap *= 2;
        let cur = solve(cap);
        if (prev - cur).abs() < tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(FormulaError::NoConvergence { tol, cap })
}
