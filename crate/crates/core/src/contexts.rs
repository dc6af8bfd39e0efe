//! Orthonormal bases as measurement contexts.
//!
//! A token is one fixed unit vector; what it "means" depends on the basis
//! it is measured in. Bases may share vectors (intertwining), observables
//! are built from a basis plus real eigenvalues, and measurement follows
//! the Born rule `p(i) = |e_i† ψ|²`.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::activations::ProbabilityVector;
use crate::error::{Error, Result};
use crate::numkit::{gram_schmidt, inner, matmul, Matrix, Scalar, Vector};

/// Orthonormality and coordinate-match tolerance.
pub const BASIS_TOLERANCE: f64 = 1e-12;
/// How far from unit norm a measured state may be.
pub const STATE_NORM_TOLERANCE: f64 = 1e-9;
/// How far Born probabilities may sum from one.
pub const BORN_SUM_TOLERANCE: f64 = 1e-10;

/// A complete orthonormal basis with one word label per vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBasis<T: Scalar = f64> {
    label: String,
    vectors: Vec<Vector<T>>,
    words: Vec<String>,
}

fn orthonormality_deviation<T: Scalar>(vectors: &[Vector<T>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, u) in vectors.iter().enumerate() {
        for (j, v) in vectors.iter().enumerate().skip(i) {
            let want = if i == j { T::one() } else { T::zero() };
            worst = worst.max((inner(u, v)? - want).modulus());
        }
    }
    Ok(worst)
}

impl<T: Scalar> ContextBasis<T> {
    pub fn new(label: impl Into<String>, vectors: Vec<Vector<T>>, words: Vec<String>) -> Result<Self> {
        let label = label.into();
        let dim = vectors.first().map(Vector::dim).unwrap_or(0);
        if vectors.is_empty() || dim == 0 || vectors.len() != dim {
            return Err(Error::IncompleteBasis {
                label,
                count: vectors.len(),
                dim,
            });
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(Error::dims("context basis", dim, v.dim()));
        }
        if words.len() != vectors.len() {
            return Err(Error::dims("context basis words", vectors.len(), words.len()));
        }
        let deviation = orthonormality_deviation(&vectors)?;
        if !(deviation <= BASIS_TOLERANCE) {
            return Err(Error::NotOrthonormal { label, deviation });
        }
        Ok(Self { label, vectors, words })
    }

    /// Orthonormalizes near-basis input by Gram–Schmidt, logging the
    /// deviation that was repaired.
    pub fn repaired(label: impl Into<String>, vectors: Vec<Vector<T>>, words: Vec<String>) -> Result<Self> {
        let label = label.into();
        let before = orthonormality_deviation(&vectors)?;
        let fixed = gram_schmidt(&vectors)?;
        if before > BASIS_TOLERANCE {
            log::warn!("context `{label}`: repaired non-orthonormal basis (max deviation {before:e})");
        }
        Self::new(label, fixed, words)
    }

    /// The standard basis `e_1..e_d`.
    pub fn standard(label: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let d = words.len();
        Self::new(label, (0..d).map(|i| Vector::basis(d, i)).collect(), words)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn vectors(&self) -> &[Vector<T>] {
        &self.vectors
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vector(&self, i: usize) -> &Vector<T> {
        &self.vectors[i]
    }

    pub fn position_of_word(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    /// `max |Σ e_i e_i† − I|` entrywise.
    pub fn completeness_deviation(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for c in 0..d {
                let mut s = T::zero();
                for v in &self.vectors {
                    s = s + v.get(r) * v.get(c).conj();
                }
                let want = if r == c { T::one() } else { T::zero() };
                worst = worst.max((s - want).modulus());
            }
        }
        worst
    }

    /// Matrix with the basis vectors as rows.
    pub fn as_rows(&self) -> Matrix<T> {
        Matrix::from_row_vectors(&self.vectors).expect("basis rows share a dimension")
    }
}

impl ContextBasis<f64> {
    /// The same basis viewed in complex coordinates.
    pub fn to_complex(&self) -> ContextBasis<Complex64> {
        ContextBasis {
            label: self.label.clone(),
            vectors: self.vectors.iter().map(Vector::to_complex).collect(),
            words: self.words.clone(),
        }
    }
}

/// Real coordinates in `d = 3` for the clockwise rotation of the first two
/// standard axes about the third by `angle`.
pub fn rotated_context(label: impl Into<String>, angle: f64, words: Vec<String>) -> Result<ContextBasis<f64>> {
    let (s, c) = angle.sin_cos();
    // clockwise about z: e_1 -> (c, -s, 0), e_2 -> (s, c, 0)
    let rot = Matrix::from_rows(&[vec![c, s, 0.0], vec![-s, c, 0.0], vec![0.0, 0.0, 1.0]])?;
    let vectors = (0..3).map(|i| rot.matvec(&Vector::basis(3, i))).collect::<Result<Vec<_>>>()?;
    ContextBasis::new(label, vectors, words)
}

fn words(ws: &[&str]) -> Vec<String> {
    ws.iter().map(|w| w.to_string()).collect()
}

/// The standard basis `e` and the basis `f` obtained by rotating `e_1, e_2`
/// clockwise by π/4 about `e_3`. They share exactly `e_3 = f_3`.
pub fn rotated_pair() -> Result<(ContextBasis<f64>, ContextBasis<f64>)> {
    let e = ContextBasis::standard("e", words(&["e1", "e2", "e3"]))?;
    let f = rotated_context("f", std::f64::consts::FRAC_PI_4, words(&["f1", "f2", "f3"]))?;
    Ok((e, f))
}

/// A spectral observable `Σ λ_i e_i e_i†`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable<T: Scalar = f64> {
    basis: ContextBasis<T>,
    eigenvalues: Vec<f64>,
    matrix: Matrix<T>,
}

impl<T: Scalar> Observable<T> {
    pub fn basis(&self) -> &ContextBasis<T> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }
}

pub fn make_observable<T: Scalar>(basis: &ContextBasis<T>, eigenvalues: &[f64]) -> Result<Observable<T>> {
    let d = basis.dim();
    if eigenvalues.len() != d {
        return Err(Error::dims("make_observable", d, eigenvalues.len()));
    }
    if let Some(x) = eigenvalues.iter().find(|x| !x.is_finite()) {
        return Err(Error::param("eigenvalues", format!("{x} is not finite")));
    }
    let matrix = Matrix::from_fn(d, d, |r, c| {
        let mut s = T::zero();
        for (v, &lam) in basis.vectors.iter().zip(eigenvalues) {
            s = s + (v.get(r) * v.get(c).conj()).scale(lam);
        }
        s
    });
    Ok(Observable {
        basis: basis.clone(),
        eigenvalues: eigenvalues.to_vec(),
        matrix,
    })
}

/// Frobenius norm of `AB − BA`.
pub fn commutator_norm<T: Scalar>(a: &Observable<T>, b: &Observable<T>) -> Result<f64> {
    if a.matrix.shape() != b.matrix.shape() {
        return Err(Error::dims("commutator_norm", a.matrix.rows(), b.matrix.rows()));
    }
    let ab = matmul(&a.matrix, &b.matrix)?;
    let ba = matmul(&b.matrix, &a.matrix)?;
    Ok(ab.sub(&ba)?.frobenius_norm())
}

/// `p(i) = |e_i† ψ|²`.
pub fn born_probabilities<T: Scalar>(psi: &Vector<T>, basis: &ContextBasis<T>) -> Result<ProbabilityVector> {
    if psi.dim() != basis.dim() {
        return Err(Error::dims("born_probabilities", basis.dim(), psi.dim()));
    }
    let norm = psi.norm();
    if !((norm - 1.0).abs() <= STATE_NORM_TOLERANCE) {
        return Err(Error::NotNormalized {
            norm,
            tolerance: STATE_NORM_TOLERANCE,
        });
    }
    let p = basis
        .vectors
        .iter()
        .map(|e| Ok(inner(e, psi)?.norm_sqr()))
        .collect::<Result<Vec<f64>>>()?;
    ProbabilityVector::new(p, BORN_SUM_TOLERANCE)
}

/// One vector found in several bases, with every `(basis, position)` it
/// occupies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedRecord {
    pub vector: String,
    pub members: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextGraph<T: Scalar = f64> {
    bases: Vec<ContextBasis<T>>,
    shared: Vec<SharedRecord>,
}

fn coordinate_deviation<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> f64 {
    a.max_abs_diff(b).unwrap_or(f64::INFINITY)
}

impl<T: Scalar> ContextGraph<T> {
    /// Bases with every shared vector discovered automatically.
    pub fn new(bases: Vec<ContextBasis<T>>) -> Result<Self> {
        check_bases(&bases)?;
        let shared = discover_shared(&bases);
        Ok(Self { bases, shared })
    }

    /// Bases with caller-claimed shared records, each verified.
    pub fn with_shared(bases: Vec<ContextBasis<T>>, shared: Vec<SharedRecord>) -> Result<Self> {
        check_bases(&bases)?;
        let g = Self { bases, shared };
        g.verify_claims()?;
        Ok(g)
    }

    pub fn bases(&self) -> &[ContextBasis<T>] {
        &self.bases
    }

    pub fn shared(&self) -> &[SharedRecord] {
        &self.shared
    }

    pub fn dim(&self) -> usize {
        self.bases[0].dim()
    }

    pub fn basis(&self, label: &str) -> Result<&ContextBasis<T>> {
        self.bases.iter().find(|b| b.label == label).ok_or_else(|| Error::Unknown {
            what: "context",
            name: label.to_string(),
        })
    }

    fn verify_claims(&self) -> Result<()> {
        for rec in &self.shared {
            let Some(&(b0, p0)) = rec.members.first() else {
                return Err(Error::param("shared", format!("record `{}` lists no members", rec.vector)));
            };
            for &(b, p) in &rec.members {
                if b >= self.bases.len() {
                    return Err(Error::OutOfRange {
                        what: "basis index",
                        index: b,
                        limit: self.bases.len(),
                    });
                }
                if p >= self.bases[b].dim() {
                    return Err(Error::OutOfRange {
                        what: "basis position",
                        index: p,
                        limit: self.bases[b].dim(),
                    });
                }
                let deviation = coordinate_deviation(&self.bases[b0].vectors[p0], &self.bases[b].vectors[p]);
                if !(deviation <= BASIS_TOLERANCE) {
                    return Err(Error::SharedMismatch {
                        vector: rec.vector.clone(),
                        basis: b,
                        position: p,
                        deviation,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_bases<T: Scalar>(bases: &[ContextBasis<T>]) -> Result<()> {
    let first = bases.first().ok_or(Error::Empty("context graph"))?;
    if let Some(b) = bases.iter().find(|b| b.dim() != first.dim()) {
        return Err(Error::dims("context graph", first.dim(), b.dim()));
    }
    Ok(())
}

/// Groups vectors that coincide (to `BASIS_TOLERANCE`) across different
/// bases. Records are ordered by first occurrence; the record takes the
/// word label of its first member.
fn discover_shared<T: Scalar>(bases: &[ContextBasis<T>]) -> Vec<SharedRecord> {
    let mut seen: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for (b, basis) in bases.iter().enumerate() {
        for (p, v) in basis.vectors.iter().enumerate() {
            if seen.contains(&(b, p)) {
                continue;
            }
            let mut members = vec![(b, p)];
            for (b2, other) in bases.iter().enumerate().skip(b + 1) {
                if let Some(p2) = other
                    .vectors
                    .iter()
                    .position(|w| coordinate_deviation(v, w) <= BASIS_TOLERANCE)
                {
                    members.push((b2, p2));
                }
            }
            if members.len() > 1 {
                seen.extend_from_slice(&members);
                out.push(SharedRecord {
                    vector: basis.words[p].clone(),
                    members,
                });
            }
        }
    }
    out
}

/// Whether two bases span the same set of rays (equal up to a phase per
/// vector, in any order).
fn same_rays<T: Scalar>(a: &ContextBasis<T>, b: &ContextBasis<T>) -> Result<bool> {
    for u in &a.vectors {
        let mut found = false;
        for v in &b.vectors {
            if (inner(u, v)?.modulus() - 1.0).abs() <= BASIS_TOLERANCE {
                found = true;
                break;
            }
        }
        if !found {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntertwineReport {
    pub dim: usize,
    pub bases: usize,
    /// Every vector found in more than one basis.
    pub shared: Vec<SharedRecord>,
    /// Number of caller-claimed records that were verified.
    pub verified_claims: usize,
    /// Whether two genuinely different bases share a vector.
    pub nontrivial: bool,
}

/// Re-verifies the graph's claimed records, rediscovers all shared
/// vectors, and checks that nontrivial intertwining only occurs in
/// dimension three or more.
pub fn intertwine_check<T: Scalar>(graph: &ContextGraph<T>) -> Result<IntertwineReport> {
    graph.verify_claims()?;
    let shared = discover_shared(&graph.bases);
    let mut nontrivial = false;
    for rec in &shared {
        for w in rec.members.windows(2) {
            if !same_rays(&graph.bases[w[0].0], &graph.bases[w[1].0])? {
                nontrivial = true;
            }
        }
    }
    if nontrivial && graph.dim() < 3 {
        return Err(Error::param(
            "context graph",
            format!("distinct bases share a vector in dimension {}", graph.dim()),
        ));
    }
    Ok(IntertwineReport {
        dim: graph.dim(),
        bases: graph.bases.len(),
        shared,
        verified_claims: graph.shared.len(),
        nontrivial,
    })
}

/// Born probabilities of `token` in the named context, and the word of
/// the most probable outcome (lowest index on ties).
pub fn disambiguate<T: Scalar>(token: &Vector<T>, graph: &ContextGraph<T>, context: &str) -> Result<(String, ProbabilityVector)> {
    let basis = graph.basis(context)?;
    let p = born_probabilities(token, basis)?;
    Ok((basis.words[p.argmax()].clone(), p))
}

/// The `bank` example in `R^3`: `v(bank) = (1,1,1)/√3` shared by three
/// contexts, each completed by Gram–Schmidt from two standard axes.
pub fn bank_graph() -> Result<ContextGraph<f64>> {
    let s = 1.0 / 3f64.sqrt();
    let bank = Vector::new(vec![s, s, s]);
    let make = |label: &str, a: usize, b: usize, ws: [&str; 3]| {
        let raw = vec![bank.clone(), Vector::basis(3, a), Vector::basis(3, b)];
        ContextBasis::new(label, gram_schmidt(&raw)?, words(&ws))
    };
    ContextGraph::new(vec![
        make("economy", 0, 1, ["bank", "economy", "money"])?,
        make("river", 1, 2, ["bank", "river", "shore"])?,
        make("seat", 2, 0, ["bank", "seat", "bench"])?,
    ])
}

#[derive(Serialize, Deserialize)]
struct BasisFile<T> {
    label: String,
    words: Vec<String>,
    vectors: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile<T> {
    bases: Vec<BasisFile<T>>,
    shared: Vec<SharedRecord>,
}

impl<T: Scalar + Serialize + DeserializeOwned> ContextGraph<T> {
    pub fn to_json(&self) -> Result<String> {
        let file = GraphFile {
            bases: self
                .bases
                .iter()
                .map(|b| BasisFile {
                    label: b.label.clone(),
                    words: b.words.clone(),
                    vectors: b.vectors.iter().map(|v| v.as_slice().to_vec()).collect(),
                })
                .collect(),
            shared: self.shared.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)? + "\n")
    }

    /// Parses and validates every basis and shared record.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile<T> = serde_json::from_str(text)?;
        let bases = file
            .bases
            .into_iter()
            .map(|b| ContextBasis::new(b.label, b.vectors.into_iter().map(Vector::new).collect(), b.words))
            .collect::<Result<Vec<_>>>()?;
        Self::with_shared(bases, file.shared)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
