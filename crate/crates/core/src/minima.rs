//! Stationarity systems of the scalar-map toy network and their solution
//! spaces.
//!
//! The toy network has `t` feature maps of a single pixel each (`I^1..I^t`),
//! a dense layer with weights `W^l_c` from map `l` to class `c` (10
//! classes) and one bias shared by all classes. Its variables are laid out
//! in `11t` columns:
//!
//! ```text
//! [I^1 .. I^t,  W^1_1 .. W^t_1,  W^1_2 .. W^t_2,  ...,  W^1_10 .. W^t_10]
//! ```
//!
//! so `W^l_c` (1-based `l`, `c`) sits at column `t + (c-1)*t + (l-1)`.
//!
//! Zero-gradient points of the loss for label class 1 are characterised by
//! two families of homogeneous equations per map: the map vanishes
//! (`I^l = 0`), and the map's class weights are balanced
//! (`(1/10 - 1) W^l_1 + 1/10 sum_{c>1} W^l_c = 0`). After NS only the
//! superposed maps reach the dense layer, so the equations apply per
//! superposed position instead: `sum_r beta_r I^{l + r*s} = 0` and the sum
//! of the balance patterns of the maps in the group. Fewer, coarser
//! equations leave a larger solution space.
//!
//! Note on the direction of the rank inequality: more solutions after the
//! transformation means `nullity(B') > nullity(B)`, i.e. `rank(B') <
//! rank(B)`. The opposite inequality `rank(B) < rank(B')` is inconsistent
//! with that conclusion; [`MinimaComparison`] records which one holds.

use std::fmt;

use rand::Rng as _;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::{cross_entropy, softmax};
use crate::nsfold::{ns_apply_vector, NsLayer, NsMode};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const CLASSES: usize = 10;

/// Relative pivot threshold of [`rank_nullity`].
pub const PIVOT_TOL: f64 = 1e-9;

/// What generated a row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// `I^l = 0`.
    MapVanishes,
    /// Balance of map `l`'s class weights.
    WeightBalance,
    /// `sum_r beta_r I^{l + r*s} = 0`.
    SuperposedMapVanishes,
    /// Unweighted sum of the balance rows of one position group.
    GroupBalance,
    /// `beta_r`-weighted sum of the balance rows (diagnostic variant).
    WeightedGroupBalance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub rows: Vec<Vec<f64>>,
    pub cols: usize,
    pub labels: Vec<String>,
    pub kinds: Vec<RowKind>,
}

impl LinearSystem {
    fn empty(t: usize) -> Self {
        let mut labels: Vec<String> = (1..=t).map(|l| format!("I{l}")).collect();
        for c in 1..=CLASSES {
            labels.extend((1..=t).map(|l| format!("W{l}_{c}")));
        }
        LinearSystem {
            rows: Vec::new(),
            cols: 11 * t,
            labels,
            kinds: Vec::new(),
        }
    }

    pub fn t(&self) -> usize {
        self.cols / 11
    }

    /// Row-major copy of the coefficient matrix.
    pub fn matrix(&self) -> Tensor {
        Tensor::new(vec![self.rows.len().max(1), self.cols], if self.rows.is_empty() {
            vec![0.0; self.cols]
        } else {
            self.rows.concat()
        })
        .expect("rows have `cols` entries")
    }

    /// `max_i |row_i . v|`.
    pub fn residual(&self, v: &[f64]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    fn push(&mut self, row: Vec<f64>, kind: RowKind) {
        self.rows.push(row);
        self.kinds.push(kind);
    }
}

/// Column of `I^l` (0-based `l`).
pub fn map_col(l: usize) -> usize {
    l
}

/// Column of `W^l_c` (0-based `l` and `c`).
pub fn weight_col(t: usize, l: usize, c: usize) -> usize {
    t + c * t + l
}

fn add_balance(row: &mut [f64], t: usize, l: usize, scale: f64) {
    for c in 0..CLASSES {
        let coeff = if c == 0 { 0.1 - 1.0 } else { 0.1 };
        row[weight_col(t, l, c)] += scale * coeff;
    }
}

/// The `2t`-row system before NS.
pub fn build_baseline_system(t: usize) -> Result<LinearSystem> {
    if t == 0 {
        return Err(Error::Config("the toy network needs t >= 1 maps".into()));
    }
    let mut sys = LinearSystem::empty(t);
    for l in 0..t {
        let mut row = vec![0.0; sys.cols];
        row[map_col(l)] = 1.0;
        sys.push(row, RowKind::MapVanishes);
    }
    for l in 0..t {
        let mut row = vec![0.0; sys.cols];
        add_balance(&mut row, t, l, 1.0);
        sys.push(row, RowKind::WeightBalance);
    }
    Ok(sys)
}

fn check_ns(t: usize, n: usize, beta: &[f64]) -> Result<usize> {
    if t == 0 || n == 0 || t % n != 0 {
        return Err(Error::Config(format!(
            "NS fold count N = {n} must divide the channel count t = {t}"
        )));
    }
    if beta.len() != n {
        return Err(Error::Config(format!("NS needs {n} coefficients, got {}", beta.len())));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Config("NS coefficients must be finite".into()));
    }
    Ok(t / n)
}

fn ns_system(t: usize, n: usize, beta: &[f64], weighted: bool) -> Result<LinearSystem> {
    let s = check_ns(t, n, beta)?;
    let mut sys = LinearSystem::empty(t);
    for l in 0..s {
        let mut row = vec![0.0; sys.cols];
        for (r, &b) in beta.iter().enumerate() {
            row[map_col(l + r * s)] += b;
        }
        sys.push(row, RowKind::SuperposedMapVanishes);
    }
    for l in 0..s {
        let mut row = vec![0.0; sys.cols];
        for (r, &b) in beta.iter().enumerate() {
            add_balance(&mut row, t, l + r * s, if weighted { b } else { 1.0 });
        }
        sys.push(
            row,
            if weighted {
                RowKind::WeightedGroupBalance
            } else {
                RowKind::GroupBalance
            },
        );
    }
    Ok(sys)
}

/// The `2t/N`-row system after NS, balance rows summed without weights.
pub fn build_ns_system(t: usize, n: usize, beta: &[f64]) -> Result<LinearSystem> {
    ns_system(t, n, beta, false)
}

/// Variant of [`build_ns_system`] whose balance rows carry the coefficients.
pub fn build_weighted_ns_system(t: usize, n: usize, beta: &[f64]) -> Result<LinearSystem> {
    ns_system(t, n, beta, true)
}

/// Row echelon reduction with partial pivoting. A candidate pivot counts if
/// its magnitude exceeds `PIVOT_TOL` times the largest magnitude its row had
/// before elimination. Returns the reduced rows (pivot rows first, each
/// scaled to a unit pivot and cleared above and below) and the pivot columns.
fn reduce(rows: &[Vec<f64>], cols: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let scale: Vec<f64> = a.iter().map(|r| r.iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
    let mut order: Vec<usize> = (0..a.len()).collect();
    let mut pivots = Vec::new();
    let mut next = 0;
    for col in 0..cols {
        if next == a.len() {
            break;
        }
        let mut best: Option<usize> = None;
        for k in next..a.len() {
            let r = order[k];
            let v = a[r][col].abs();
            if v > PIVOT_TOL * scale[r] && v > 0.0 && best.is_none_or(|b| v > a[order[b]][col].abs()) {
                best = Some(k);
            }
        }
        let Some(k) = best else { continue };
        order.swap(next, k);
        let pr = order[next];
        let p = a[pr][col];
        for v in a[pr].iter_mut() {
            *v /= p;
        }
        let pivot_row = a[pr].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == pr {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, &pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        pivots.push(col);
        next += 1;
    }
    let reduced = order[..pivots.len()].iter().map(|&r| a[r].clone()).collect();
    (reduced, pivots)
}

/// `(rank, nullity)` with `nullity = cols - rank`.
pub fn rank_nullity(system: &LinearSystem) -> (usize, usize) {
    let rank = reduce(&system.rows, system.cols).1.len();
    (rank, system.cols - rank)
}

/// Basis of the solution space of `system . v = 0`, one vector per free
/// column.
pub fn null_space(system: &LinearSystem) -> Vec<Vec<f64>> {
    let (reduced, pivots) = reduce(&system.rows, system.cols);
    let mut is_pivot = vec![false; system.cols];
    pivots.iter().for_each(|&p| is_pivot[p] = true);
    (0..system.cols)
        .filter(|&f| !is_pivot[f])
        .map(|f| {
            let mut v = vec![0.0; system.cols];
            v[f] = 1.0;
            for (row, &p) in reduced.iter().zip(&pivots) {
                v[p] = -row[f];
            }
            v
        })
        .collect()
}

/// Largest distance of a row of `rows` from the row space of `space`,
/// relative to that row's norm.
pub fn row_space_residual(rows: &[Vec<f64>], space: &[Vec<f64>]) -> f64 {
    // orthonormal basis by modified Gram-Schmidt, run twice per vector
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in space {
        let mut v = r.clone();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > PIVOT_TOL * rnorm && norm > 0.0 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows.iter()
        .map(|r| {
            let mut v = r.clone();
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let rnorm = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            v.iter().map(|x| x * x).sum::<f64>().sqrt() / rnorm
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Baseline,
    Ns,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinimaComparison {
    pub t: usize,
    pub n: usize,
    pub beta: Vec<f64>,
    pub rank_b: usize,
    pub rank_bprime: usize,
    pub nullity_b: usize,
    pub nullity_bprime: usize,
    pub gap: usize,
    pub expected_gap: usize,
    pub containment: bool,
    /// Largest relative distance of a `B'` row from the row space of `B`.
    pub containment_residual: f64,
    /// Largest `|B' v|` over the null-space basis of `B`.
    pub nullspace_residual: f64,
    pub loss_baseline: f64,
    pub loss_ns: f64,
    /// Rank of the variant whose group balance rows carry the coefficients.
    pub rank_bprime_weighted: usize,
    /// Whether `rank(B) < rank(B')` holds (it does not when NS enlarges the
    /// solution space).
    pub rank_b_below_rank_bprime: bool,
}

impl fmt::Display for MinimaComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let beta: Vec<String> = self.beta.iter().map(|b| format!("{b}")).collect();
        writeln!(f, "t = {}, N = {}, beta = [{}], columns = {}", self.t, self.n, beta.join(", "), 11 * self.t)?;
        writeln!(f, "{:<28}{:>8}{:>10}", "system", "rank", "nullity")?;
        writeln!(f, "{:<28}{:>8}{:>10}", "B  (before NS)", self.rank_b, self.nullity_b)?;
        writeln!(f, "{:<28}{:>8}{:>10}", "B' (after NS)", self.rank_bprime, self.nullity_bprime)?;
        writeln!(
            f,
            "{:<28}{:>8}{:>10}",
            "B' weighted balance rows",
            self.rank_bprime_weighted,
            11 * self.t - self.rank_bprime_weighted
        )?;
        writeln!(f, "{:<28}{:>18}", "nullity gap", format!("{} (expected {})", self.gap, self.expected_gap))?;
        writeln!(
            f,
            "{:<28}{:>18}",
            "containment",
            format!("{} (residual {:.1e})", self.containment, self.containment_residual.max(self.nullspace_residual))
        )?;
        writeln!(f, "{:<28}{:>18.12}", "loss at baseline point", self.loss_baseline)?;
        writeln!(f, "{:<28}{:>18.12}", "loss at NS point", self.loss_ns)?;
        write!(
            f,
            "{:<28}{:>18}",
            "rank(B) < rank(B')",
            if self.rank_b_below_rank_bprime {
                "holds"
            } else {
                "does not hold (inconsistent with the larger solution space)"
            }
        )
    }
}

/// Builds both systems, checks the nullity gap `2t(1 - 1/N)`, row-space
/// containment of `B'` in `B`, that a null-space basis of `B` solves `B'`,
/// and evaluates the loss at one sampled stationary point of each system.
pub fn compare_minima_spaces(t: usize, n: usize, beta: &[f64]) -> Result<MinimaComparison> {
    if n < 2 {
        return Err(Error::Config(format!("the comparison needs N >= 2, got {n}")));
    }
    if beta.contains(&0.0) {
        return Err(Error::Config("the comparison needs all coefficients nonzero".into()));
    }
    let b = build_baseline_system(t)?;
    let bp = build_ns_system(t, n, beta)?;
    let (rank_b, nullity_b) = rank_nullity(&b);
    let (rank_bprime, nullity_bprime) = rank_nullity(&bp);
    let expected_gap = 2 * t - 2 * t / n;
    let gap = nullity_bprime.saturating_sub(nullity_b);
    if nullity_bprime < nullity_b || gap != expected_gap {
        return Err(Error::Minima {
            clause: "nullity gap",
            detail: format!("nullity(B) = {nullity_b}, nullity(B') = {nullity_bprime}, expected gap {expected_gap}"),
        });
    }
    let containment_residual = row_space_residual(&bp.rows, &b.rows);
    if containment_residual >= 1e-9 {
        return Err(Error::Minima {
            clause: "row-space containment",
            detail: format!("a row of B' is {containment_residual:e} away from the row space of B"),
        });
    }
    let nullspace_residual = null_space(&b).iter().map(|v| bp.residual(v)).fold(0.0, f64::max);
    if nullspace_residual >= 1e-9 {
        return Err(Error::Minima {
            clause: "null-space inclusion",
            detail: format!("a null-space vector of B leaves |B' v| = {nullspace_residual:e}"),
        });
    }
    let loss_baseline = loss_at_stationary_point(t, n, beta, Which::Baseline, 0.0, 0)?;
    let loss_ns = loss_at_stationary_point(t, n, beta, Which::Ns, 0.0, 0)?;
    let (rank_bprime_weighted, _) = rank_nullity(&build_weighted_ns_system(t, n, beta)?);
    Ok(MinimaComparison {
        t,
        n,
        beta: beta.to_vec(),
        rank_b,
        rank_bprime,
        nullity_b,
        nullity_bprime,
        gap,
        expected_gap,
        containment: true,
        containment_residual,
        nullspace_residual,
        loss_baseline,
        loss_ns,
        rank_bprime_weighted,
        rank_b_below_rank_bprime: rank_b < rank_bprime,
    })
}

/// A random point of the solution space of `system` (Gaussian combination of
/// its null-space basis).
pub fn sample_solution(system: &LinearSystem, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, Stream::Sampling);
    let mut v = vec![0.0; system.cols];
    for basis in null_space(system) {
        let c: f64 = rng.sample(rand_distr::StandardNormal);
        v.iter_mut().zip(&basis).for_each(|(x, b)| *x += c * b);
    }
    v
}

/// Loss of the toy network (label class 1, shared bias `bias`) at a sampled
/// solution of the baseline or NS system. Maps pass through an actual NS
/// layer in the NS case.
pub fn loss_at_stationary_point(t: usize, n: usize, beta: &[f64], which: Which, bias: f64, seed: u64) -> Result<f64> {
    let system = match which {
        Which::Baseline => build_baseline_system(t)?,
        Which::Ns => build_ns_system(t, n, beta)?,
    };
    let v = sample_solution(&system, seed);
    let residual = system.residual(&v);
    if residual > 1e-9 {
        return Err(Error::Minima {
            clause: "stationary point construction",
            detail: format!("sampled point leaves residual {residual:e}"),
        });
    }
    let maps = Tensor::new(vec![1, t], v[..t].to_vec())?;
    let c = match which {
        Which::Baseline => maps,
        Which::Ns => {
            let mut layer = NsLayer::new(t, n, beta.to_vec(), NsMode::Fixed)?;
            ns_apply_vector(&maps, &mut layer)?
        }
    };
    let mut logits = vec![bias; CLASSES];
    for (l, &cl) in c.data().iter().enumerate() {
        for (cls, y) in logits.iter_mut().enumerate() {
            *y += cl * v[weight_col(t, l, cls)];
        }
    }
    cross_entropy(&softmax(&Tensor::new(vec![1, CLASSES], logits)?), 0)
}
