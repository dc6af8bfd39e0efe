//! Quasi-orthogonal packing experiments, random projections, and
//! embedding-offset analogies.
//!
//! `greedy_pack` is a lower-bound witness for the size of an ε-packing of
//! the unit sphere: every accepted set really has all pairwise
//! `|<u, v>| <= ε`, but the greedy run may stop well short of the largest
//! such set.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::{dot_seq, gaussian_matrix, matmul, random_unit_vector, random_unit_vectors, Matrix, Rng, Vector};

/// Consecutive rejections after which `greedy_pack` stops by default.
pub const DEFAULT_MAX_ATTEMPTS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingReport {
    pub d: usize,
    pub epsilon: f64,
    pub n_attempted: usize,
    pub max_abs_dot: f64,
    pub violating_pairs: usize,
    pub fraction_violating: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::param("epsilon", format!("{epsilon} is outside (0, 1)")));
    }
    Ok(())
}

/// Pairwise statistics of `n` fresh random unit vectors in `R^d`.
pub fn measure_packing(rng: &mut Rng, n: usize, d: usize, epsilon: f64) -> Result<PackingReport> {
    if n < 2 {
        return Err(Error::param("n", "at least two vectors are needed"));
    }
    check_epsilon(epsilon)?;
    let vectors = random_unit_vectors(rng, n, d)?;
    packing_of(&vectors, epsilon)
}

/// Pairwise statistics of the given rows (assumed unit length).
pub fn packing_of(vectors: &Matrix, epsilon: f64) -> Result<PackingReport> {
    check_epsilon(epsilon)?;
    let n = vectors.rows();
    if n < 2 {
        return Err(Error::param("n", "at least two vectors are needed"));
    }
    let mut max_abs_dot: f64 = 0.0;
    let mut violating_pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            let a = dot_seq(vectors.row(i), vectors.row(j)).abs();
            max_abs_dot = max_abs_dot.max(a);
            if a > epsilon {
                violating_pairs += 1;
            }
        }
    }
    let pairs = n * (n - 1) / 2;
    Ok(PackingReport {
        d: vectors.cols(),
        epsilon,
        n_attempted: n,
        max_abs_dot,
        violating_pairs,
        fraction_violating: violating_pairs as f64 / pairs as f64,
    })
}

/// Draws random unit vectors and keeps each one whose `|dot|` with every
/// kept vector is at most `epsilon`. Stops after `max_attempts`
/// consecutive rejections and returns the number kept.
pub fn greedy_pack(rng: &mut Rng, d: usize, epsilon: f64, max_attempts: usize) -> Result<usize> {
    Ok(greedy_pack_vectors(rng, d, epsilon, max_attempts)?.len() / d)
}

/// As `greedy_pack`, returning the accepted vectors flattened row-major.
fn greedy_pack_vectors(rng: &mut Rng, d: usize, epsilon: f64, max_attempts: usize) -> Result<Vec<f64>> {
    check_epsilon(epsilon)?;
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    if max_attempts == 0 {
        return Err(Error::param("max_attempts", "must be at least 1"));
    }
    let mut kept: Vec<f64> = Vec::new();
    let mut rejections = 0;
    while rejections < max_attempts {
        let v = random_unit_vector(rng, d)?;
        let clash = kept.chunks_exact(d).any(|u| dot_seq(u, &v).abs() > epsilon);
        if clash {
            rejections += 1;
        } else {
            kept.extend_from_slice(&v);
            rejections = 0;
        }
    }
    Ok(kept)
}

/// One dimension of a capacity curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub d: usize,
    /// Count returned by the greedy run.
    pub greedy_n: usize,
    /// `max(greedy_n, d)`: `d` orthonormal vectors always form a packing.
    pub achieved_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityCurve {
    pub epsilon: f64,
    pub max_attempts: usize,
    pub points: Vec<CapacityPoint>,
    /// Least-squares slope of `ln(greedy_n)` against `d`.
    pub fitted_slope: f64,
    pub r_squared: f64,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::dims("linear_fit", xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::param("points", "at least two are needed for a fit"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::param("points", "all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::param("dims", "at least two dimensions are needed"));
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::param("dims", "every dimension must be at least 2"));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("dims", "must be strictly ascending"));
    }
    Ok(())
}

/// Runs `greedy_pack` at each dimension and fits `ln N` against `d`.
pub fn capacity_curve(rng: &mut Rng, epsilon: f64, dims: &[usize]) -> Result<CapacityCurve> {
    capacity_curve_with(rng, epsilon, dims, DEFAULT_MAX_ATTEMPTS)
}

pub fn capacity_curve_with(rng: &mut Rng, epsilon: f64, dims: &[usize], max_attempts: usize) -> Result<CapacityCurve> {
    check_dims(dims)?;
    let mut points = Vec::with_capacity(dims.len());
    for &d in dims {
        let greedy_n = greedy_pack(rng, d, epsilon, max_attempts)?;
        points.push(CapacityPoint {
            d,
            greedy_n,
            achieved_n: greedy_n.max(d),
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.d as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| (p.greedy_n as f64).ln()).collect();
    let (fitted_slope, _, r_squared) = linear_fit(&xs, &ys)?;
    Ok(CapacityCurve {
        epsilon,
        max_attempts,
        points,
        fitted_slope,
        r_squared,
    })
}

/// Curves for several independent seeds plus a fit of the per-dimension
/// mean of `ln(greedy_n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityStudy {
    pub epsilon: f64,
    pub max_attempts: usize,
    pub seeds: Vec<u64>,
    pub curves: Vec<CapacityCurve>,
    pub mean_log_n: Vec<(usize, f64)>,
    pub fitted_slope: f64,
    pub r_squared: f64,
}

/// Seed `s` uses `Rng::new(s)`. Seeds run in parallel when `parallel`
/// is set; results are identical either way.
pub fn capacity_study(epsilon: f64, dims: &[usize], max_attempts: usize, seeds: &[u64], parallel: bool) -> Result<CapacityStudy> {
    use rayon::prelude::*;
    check_dims(dims)?;
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let run = |&s: &u64| capacity_curve_with(&mut Rng::new(s), epsilon, dims, max_attempts);
    let curves: Vec<CapacityCurve> = if parallel {
        seeds.par_iter().map(run).collect::<Result<_>>()?
    } else {
        seeds.iter().map(run).collect::<Result<_>>()?
    };
    let mean_log_n: Vec<(usize, f64)> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let mut s = 0.0;
            for c in &curves {
                s += (c.points[i].greedy_n as f64).ln();
            }
            (d, s / curves.len() as f64)
        })
        .collect();
    let xs: Vec<f64> = mean_log_n.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = mean_log_n.iter().map(|p| p.1).collect();
    let (fitted_slope, _, r_squared) = linear_fit(&xs, &ys)?;
    Ok(CapacityStudy {
        epsilon,
        max_attempts,
        seeds: seeds.to_vec(),
        curves,
        mean_log_n,
        fitted_slope,
        r_squared,
    })
}

/// One CSV row per (seed, d) cell.
pub fn write_study_csv(study: &CapacityStudy, mut w: impl Write) -> Result<()> {
    writeln!(w, "seed,d,epsilon,max_attempts,greedy_n,achieved_n")?;
    for (seed, curve) in study.seeds.iter().zip(&study.curves) {
        for p in &curve.points {
            writeln!(w, "{seed},{},{:?},{},{},{}", p.d, study.epsilon, study.max_attempts, p.greedy_n, p.achieved_n)?;
        }
    }
    Ok(())
}

pub fn save_study_csv(study: &CapacityStudy, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_study_csv(study, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Worst-case pairwise distortion of a projection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionReport {
    pub pairs: usize,
    /// `max |‖y_i − y_j‖ / ‖x_i − x_j‖ − 1|`
    pub max_distance_distortion: f64,
    /// `max |‖y_i − y_j‖² / ‖x_i − x_j‖² − 1|`
    pub max_squared_distortion: f64,
}

impl DistortionReport {
    pub fn distances_within(&self, epsilon: f64) -> bool {
        self.max_distance_distortion <= epsilon
    }

    pub fn squared_distances_within(&self, epsilon: f64) -> bool {
        self.max_squared_distortion <= epsilon
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub projected: Matrix,
    pub report: DistortionReport,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += (x - y) * (x - y);
    }
    s
}

pub fn distortion(original: &Matrix, projected: &Matrix) -> Result<DistortionReport> {
    if original.rows() != projected.rows() {
        return Err(Error::dims("distortion", original.rows(), projected.rows()));
    }
    let n = original.rows();
    let mut dist: f64 = 0.0;
    let mut sq: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let before = sq_dist(original.row(i), original.row(j));
            if before == 0.0 {
                continue;
            }
            let ratio = sq_dist(projected.row(i), projected.row(j)) / before;
            sq = sq.max((ratio - 1.0).abs());
            dist = dist.max((ratio.sqrt() - 1.0).abs());
        }
    }
    Ok(DistortionReport {
        pairs: n * n.saturating_sub(1) / 2,
        max_distance_distortion: dist,
        max_squared_distortion: sq,
    })
}

/// `Y = X M` for a caller-supplied `d x k` map, with its distortion report.
pub fn project_with(x: &Matrix, map: &Matrix) -> Result<Projection> {
    let projected = matmul(x, map)?;
    let report = distortion(x, &projected)?;
    Ok(Projection { projected, report })
}

/// Random projection `Y = X G / √k` with i.i.d. standard Gaussian `G`.
pub fn jl_project(rng: &mut Rng, x: &Matrix, k: usize) -> Result<Projection> {
    if k == 0 || k > x.cols() {
        return Err(Error::OutOfRange {
            what: "target dimension k",
            index: k,
            limit: x.cols(),
        });
    }
    let g = gaussian_matrix(rng, x.cols(), k, 1.0 / (k as f64).sqrt());
    project_with(x, &g)
}

/// Target dimension `ceil(8 ln n / ε²)`.
pub fn jl_dimension(n: usize, epsilon: f64) -> usize {
    (8.0 * (n as f64).ln() / (epsilon * epsilon)).ceil() as usize
}

/// Index of the row with the highest cosine similarity to
/// `v(a) − v(b) + v(c)`, ignoring rows `a`, `b`, `c` and zero rows.
/// Ties go to the lowest index.
pub fn analogy(embedding: &Matrix, a: usize, b: usize, c: usize) -> Result<usize> {
    let n = embedding.rows();
    for idx in [a, b, c] {
        if idx >= n {
            return Err(Error::OutOfRange {
                what: "token index",
                index: idx,
                limit: n,
            });
        }
    }
    let va = embedding.row_vector(a);
    let query = va.sub(&embedding.row_vector(b))?.add(&embedding.row_vector(c))?;
    let qn = query.norm();
    if qn == 0.0 {
        return Err(Error::param("query", "v(a) - v(b) + v(c) is the zero vector"));
    }
    let mut best: Option<(usize, f64)> = None;
    for i in (0..n).filter(|i| ![a, b, c].contains(i)) {
        let row = embedding.row(i);
        let rn = Vector::new(row.to_vec()).norm();
        if rn == 0.0 {
            continue;
        }
        let cos = dot_seq(row, query.as_slice()) / (rn * qn);
        if best.is_none_or(|(_, c)| cos > c) {
            best = Some((i, cos));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::Empty("analogy candidates"))
}
