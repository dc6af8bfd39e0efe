//! Quantum-style attention: a token is prepared as a unit state, evolved by
//! unitary operators only, and read out by one terminal Born measurement.
//!
//! Plane rotation `(i, j, θ, φ)` acts on the `(i, j)` plane as
//!
//! ```text
//! G[i][i] = G[j][j] = cos θ
//! G[j][i] = −sin θ · e^{iφ}
//! G[i][j] =  sin θ · e^{−iφ}
//! ```
//!
//! so with `φ = 0` it turns `e_i` into `cos θ e_i − sin θ e_j` (a
//! clockwise turn). A permutation `mapping` sends `e_k` to
//! `e_{mapping[k]}`. A composition applies its first element first.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::activations::{amplitudes_from_logits, ProbabilityVector};
use crate::contexts::{born_probabilities, ContextBasis};
use crate::error::{Error, Result};
use crate::numkit::{inner, matmul, Matrix, Rng, Vector};

pub const STATE_TOLERANCE: f64 = 1e-10;
pub const UNITARY_TOLERANCE: f64 = 1e-12;

type C = Complex64;

/// A unit vector in `C^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vector<C>,
}

impl StateVector {
    pub fn new(amplitudes: Vector<C>) -> Result<Self> {
        if amplitudes.dim() == 0 {
            return Err(Error::Empty("state vector"));
        }
        let norm = amplitudes.norm();
        if !((norm - 1.0).abs() <= STATE_TOLERANCE) {
            return Err(Error::NotNormalized {
                norm,
                tolerance: STATE_TOLERANCE,
            });
        }
        Ok(Self { amplitudes })
    }

    /// Scales a nonzero vector to unit norm.
    pub fn normalized(amplitudes: Vector<C>) -> Result<Self> {
        Self::new(amplitudes.normalized()?)
    }

    pub fn from_real(v: &Vector<f64>) -> Result<Self> {
        Self::new(v.to_complex())
    }

    /// `e_k`.
    pub fn basis(dim: usize, k: usize) -> Result<Self> {
        if k >= dim {
            return Err(Error::OutOfRange {
                what: "basis index",
                index: k,
                limit: dim,
            });
        }
        Self::new(Vector::basis(dim, k))
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.dim()
    }

    pub fn amplitudes(&self) -> &Vector<C> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// Multiplies by the phase that makes the first nonzero amplitude
    /// positive real.
    pub fn phase_fixed(&self) -> Self {
        match self.amplitudes.as_slice().iter().find(|a| a.norm_sqr() > 0.0) {
            Some(a) => {
                let rot = a.conj() / a.norm();
                Self {
                    amplitudes: self.amplitudes.map(|x| x * rot),
                }
            }
            None => self.clone(),
        }
    }
}

/// Dense matrix already checked to be unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseUnitary(Matrix<C>);

impl DenseUnitary {
    pub fn new(m: Matrix<C>) -> Result<Self> {
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(Error::dims("dense unitary", "square", format!("{}x{}", m.rows(), m.cols())));
        }
        let deviation = unitarity_deviation(&m)?;
        if !(deviation <= UNITARY_TOLERANCE) {
            return Err(Error::NotUnitary { deviation });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix<C> {
        &self.0
    }
}

/// `max |U†U − I|` entrywise.
pub fn unitarity_deviation(u: &Matrix<C>) -> Result<f64> {
    let g = matmul(&u.adjoint(), u)?;
    let id = Matrix::<C>::identity(u.rows());
    g.max_abs_diff(&id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitaryOp {
    PlaneRotation {
        dim: usize,
        i: usize,
        j: usize,
        angle: f64,
        #[serde(default)]
        phase: f64,
    },
    Permutation {
        mapping: Vec<usize>,
    },
    Composition {
        dim: usize,
        ops: Vec<UnitaryOp>,
    },
    #[serde(skip)]
    Dense(DenseUnitary),
}

impl UnitaryOp {
    pub fn rotation(dim: usize, i: usize, j: usize, angle: f64, phase: f64) -> Result<Self> {
        let op = UnitaryOp::PlaneRotation { dim, i, j, angle, phase };
        op.validate()?;
        Ok(op)
    }

    pub fn permutation(mapping: Vec<usize>) -> Result<Self> {
        let op = UnitaryOp::Permutation { mapping };
        op.validate()?;
        Ok(op)
    }

    /// `ops[0]` is applied first.
    pub fn composition(dim: usize, ops: Vec<UnitaryOp>) -> Result<Self> {
        let op = UnitaryOp::Composition { dim, ops };
        op.validate()?;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryOp::Permutation {
            mapping: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            UnitaryOp::PlaneRotation { dim, .. } | UnitaryOp::Composition { dim, .. } => *dim,
            UnitaryOp::Permutation { mapping } => mapping.len(),
            UnitaryOp::Dense(u) => u.0.rows(),
        }
    }

    /// Structural checks: indices in range, bijective mappings, matching
    /// dimensions, finite angles.
    pub fn validate(&self) -> Result<()> {
        match self {
            UnitaryOp::PlaneRotation { dim, i, j, angle, phase } => {
                for idx in [*i, *j] {
                    if idx >= *dim {
                        return Err(Error::OutOfRange {
                            what: "rotation axis",
                            index: idx,
                            limit: *dim,
                        });
                    }
                }
                if i == j {
                    return Err(Error::param("rotation", "the two axes must differ"));
                }
                if !angle.is_finite() || !phase.is_finite() {
                    return Err(Error::param("rotation", "angle and phase must be finite"));
                }
            }
            UnitaryOp::Permutation { mapping } => {
                if mapping.is_empty() {
                    return Err(Error::Empty("permutation"));
                }
                let mut hit = vec![false; mapping.len()];
                for &m in mapping {
                    if m >= mapping.len() || std::mem::replace(&mut hit[m], true) {
                        return Err(Error::param("permutation", format!("{mapping:?} is not a bijection")));
                    }
                }
            }
            UnitaryOp::Composition { dim, ops } => {
                for op in ops {
                    op.validate()?;
                    if op.dim() != *dim {
                        return Err(Error::dims("composition", *dim, op.dim()));
                    }
                }
            }
            UnitaryOp::Dense(_) => {}
        }
        Ok(())
    }

    /// Real-valued (orthogonal) when every rotation phase is zero.
    pub fn is_real(&self) -> bool {
        match self {
            UnitaryOp::PlaneRotation { phase, .. } => *phase == 0.0,
            UnitaryOp::Permutation { .. } => true,
            UnitaryOp::Composition { ops, .. } => ops.iter().all(UnitaryOp::is_real),
            UnitaryOp::Dense(u) => u.0.data().iter().all(|z| z.im == 0.0),
        }
    }

    pub fn dense(&self) -> Matrix<C> {
        let d = self.dim();
        match self {
            UnitaryOp::PlaneRotation { i, j, angle, phase, .. } => {
                let (s, c) = angle.sin_cos();
                let e = C::from_polar(1.0, *phase);
                let mut g = Matrix::<C>::identity(d);
                g.set(*i, *i, C::new(c, 0.0));
                g.set(*j, *j, C::new(c, 0.0));
                g.set(*j, *i, -e * s);
                g.set(*i, *j, e.conj() * s);
                g
            }
            UnitaryOp::Permutation { mapping } => {
                let mut p = Matrix::<C>::zeros(d, d);
                for (k, &m) in mapping.iter().enumerate() {
                    p.set(m, k, C::new(1.0, 0.0));
                }
                p
            }
            UnitaryOp::Composition { ops, .. } => {
                let mut acc = Matrix::<C>::identity(d);
                for op in ops {
                    acc = matmul(&op.dense(), &acc).expect("validated dimensions");
                }
                acc
            }
            UnitaryOp::Dense(u) => u.0.clone(),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            UnitaryOp::PlaneRotation { dim, i, j, angle, phase } => UnitaryOp::PlaneRotation {
                dim: *dim,
                i: *i,
                j: *j,
                angle: -angle,
                phase: *phase,
            },
            UnitaryOp::Permutation { mapping } => {
                let mut inv = vec![0; mapping.len()];
                for (k, &m) in mapping.iter().enumerate() {
                    inv[m] = k;
                }
                UnitaryOp::Permutation { mapping: inv }
            }
            UnitaryOp::Composition { dim, ops } => UnitaryOp::Composition {
                dim: *dim,
                ops: ops.iter().rev().map(UnitaryOp::inverse).collect(),
            },
            UnitaryOp::Dense(u) => UnitaryOp::Dense(DenseUnitary(u.0.adjoint())),
        }
    }

    fn apply_raw(&self, psi: &[C]) -> Vec<C> {
        match self {
            UnitaryOp::PlaneRotation { i, j, angle, phase, .. } => {
                let (s, c) = angle.sin_cos();
                let e = C::from_polar(1.0, *phase);
                let (a, b) = (psi[*i], psi[*j]);
                let mut out = psi.to_vec();
                out[*i] = a * c + e.conj() * s * b;
                out[*j] = -(e * s) * a + b * c;
                out
            }
            UnitaryOp::Permutation { mapping } => {
                let mut out = vec![C::new(0.0, 0.0); psi.len()];
                for (k, &m) in mapping.iter().enumerate() {
                    out[m] = psi[k];
                }
                out
            }
            UnitaryOp::Composition { ops, .. } => {
                let mut v = psi.to_vec();
                for op in ops {
                    v = op.apply_raw(&v);
                }
                v
            }
            UnitaryOp::Dense(u) => u
                .0
                .matvec(&Vector::new(psi.to_vec()))
                .expect("validated dimensions")
                .into_vec(),
        }
    }

    /// `φ = Uψ`.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        self.validate()?;
        if psi.dim() != self.dim() {
            return Err(Error::dims("apply", self.dim(), psi.dim()));
        }
        StateVector::new(Vector::new(self.apply_raw(psi.amplitudes.as_slice())))
    }

    /// Orthogonal action on a real vector; requires `is_real`.
    pub fn apply_real(&self, v: &Vector<f64>) -> Result<Vector<f64>> {
        self.validate()?;
        if !self.is_real() {
            return Err(Error::param("operator", "complex phases cannot act on a real state"));
        }
        if v.dim() != self.dim() {
            return Err(Error::dims("apply_real", self.dim(), v.dim()));
        }
        let out = self.apply_raw(v.to_complex().as_slice());
        Ok(Vector::new(out.iter().map(|z| z.re).collect()))
    }
}

/// `|φ† ψ|²`.
pub fn overlap_probability(phi: &StateVector, psi: &StateVector) -> Result<f64> {
    Ok(inner(&phi.amplitudes, &psi.amplitudes)?.norm_sqr())
}

/// Born measurement of `psi` in `basis`: returns the sampled outcome and
/// the collapsed state `e_i` with its phase fixed.
pub fn measure(psi: &StateVector, basis: &ContextBasis<C>, rng: &mut Rng) -> Result<(usize, StateVector)> {
    let p = born_probabilities(&psi.amplitudes, basis)?;
    let i = p.sample_index(rng.uniform());
    let collapsed = StateVector::new(basis.vector(i).clone())?.phase_fixed();
    Ok((i, collapsed))
}

/// Evolve then measure; the measurement is the only random step.
pub fn quantum_attention_step(token: &StateVector, op: &UnitaryOp, readout: &ContextBasis<C>, rng: &mut Rng) -> Result<usize> {
    let phi = op.apply(token)?;
    Ok(measure(&phi, readout, rng)?.0)
}

/// `|a_i|²` for the softmax amplitudes of `z` at temperature `t`.
pub fn classicality_bridge(z: &Vector<f64>, t: f64, phases: &Vector<f64>) -> Result<Vec<f64>> {
    let a = amplitudes_from_logits(z, t, phases)?;
    Ok(a.as_slice().iter().map(|x| x.norm_sqr()).collect())
}

/// Unitary stages followed by exactly one terminal measurement. No other
/// kind of stage can be expressed.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    stages: Vec<UnitaryOp>,
    readout: ContextBasis<C>,
}

impl Pipeline {
    pub fn new(stages: Vec<UnitaryOp>, readout: ContextBasis<C>) -> Result<Self> {
        for s in &stages {
            s.validate()?;
            if s.dim() != readout.dim() {
                return Err(Error::dims("pipeline stage", readout.dim(), s.dim()));
            }
        }
        Ok(Self { stages, readout })
    }

    pub fn dim(&self) -> usize {
        self.readout.dim()
    }

    pub fn stages(&self) -> &[UnitaryOp] {
        &self.stages
    }

    pub fn readout(&self) -> &ContextBasis<C> {
        &self.readout
    }

    /// Deterministic part: every stage in order.
    pub fn evolve(&self, psi: &StateVector) -> Result<StateVector> {
        let mut s = psi.clone();
        for op in &self.stages {
            s = op.apply(&s)?;
        }
        Ok(s)
    }

    /// Exact outcome distribution of `run`.
    pub fn probabilities(&self, psi: &StateVector) -> Result<ProbabilityVector> {
        born_probabilities(self.evolve(psi)?.amplitudes(), &self.readout)
    }

    pub fn run(&self, psi: &StateVector, rng: &mut Rng) -> Result<(usize, StateVector)> {
        measure(&self.evolve(psi)?, &self.readout, rng)
    }

    /// The whole evolution as a single operator.
    pub fn as_op(&self) -> UnitaryOp {
        UnitaryOp::Composition {
            dim: self.dim(),
            ops: self.stages.clone(),
        }
    }
}

/// Readout basis of a circuit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    Standard,
    Basis {
        label: String,
        words: Vec<String>,
        vectors: Vec<Vec<C>>,
    },
}

/// On-disk circuit description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub dim: usize,
    pub stages: Vec<UnitaryOp>,
    pub readout: Readout,
}

impl Circuit {
    pub fn pipeline(&self) -> Result<Pipeline> {
        let basis = match &self.readout {
            Readout::Standard => ContextBasis::standard("standard", (0..self.dim).map(|k| k.to_string()).collect())?,
            Readout::Basis { label, words, vectors } => {
                ContextBasis::new(label.clone(), vectors.iter().cloned().map(Vector::new).collect(), words.clone())?
            }
        };
        if basis.dim() != self.dim {
            return Err(Error::dims("circuit readout", self.dim, basis.dim()));
        }
        Pipeline::new(self.stages.clone(), basis)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Circuit = serde_json::from_str(text)?;
        c.pipeline()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::softmax_temperature;
    use crate::contexts::rotated_pair;
    use proptest::prelude::*;
    use super::Rng;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn c(re: f64) -> C {
        C::new(re, 0.0)
    }

    fn random_state(rng: &mut Rng, d: usize) -> StateVector {
        StateVector::normalized(Vector::new((0..d).map(|_| C::new(rng.normal(), rng.normal())).collect())).unwrap()
    }

    fn random_op(rng: &mut Rng, d: usize, len: usize) -> UnitaryOp {
        let ops = (0..len)
            .map(|k| {
                if k % 3 == 2 {
                    let mut m: Vec<usize> = (0..d).collect();
                    rng.shuffle(&mut m);
                    UnitaryOp::permutation(m).unwrap()
                } else {
                    let i = rng.below(d);
                    let j = (i + 1 + rng.below(d - 1)) % d;
                    UnitaryOp::rotation(d, i, j, rng.uniform_range(-PI, PI), rng.uniform_range(-PI, PI)).unwrap()
                }
            })
            .collect();
        UnitaryOp::composition(d, ops).unwrap()
    }

    fn standard(d: usize) -> ContextBasis<C> {
        ContextBasis::standard("std", (0..d).map(|k| k.to_string()).collect()).unwrap()
    }

    #[test]
    fn identity_and_permutation_round_trip() {
        let mut rng = Rng::new(1);
        let psi = random_state(&mut rng, 5);
        assert_eq!(UnitaryOp::identity(5).apply(&psi).unwrap(), psi);
        let p = UnitaryOp::permutation(vec![3, 0, 4, 1, 2]).unwrap();
        assert_eq!(p.inverse().apply(&p.apply(&psi).unwrap()).unwrap(), psi);
        assert!(UnitaryOp::permutation(vec![0, 0, 1]).is_err());
    }

    #[test]
    fn rotation_reproduces_rotated_basis() {
        let g = UnitaryOp::rotation(3, 0, 1, FRAC_PI_4, 0.0).unwrap();
        let out = g.apply(&StateVector::basis(3, 0).unwrap()).unwrap();
        let (_, f) = rotated_pair().unwrap();
        // dense oracle
        let dense = g.dense().matvec(&Vector::basis(3, 0)).unwrap();
        for k in 0..3 {
            assert!((out.amplitudes().get(k) - f.vector(0).to_complex().get(k)).norm() <= 1e-15);
            assert!((out.amplitudes().get(k) - dense.get(k)).norm() <= 1e-15);
        }
        let real = g.apply_real(&Vector::basis(3, 1)).unwrap();
        assert!(real.max_abs_diff(f.vector(1)).unwrap() <= 1e-15);
        let complex = UnitaryOp::rotation(3, 0, 1, 0.3, 0.2).unwrap();
        assert!(complex.apply_real(&Vector::basis(3, 0)).is_err());
    }

    #[test]
    fn structural_validation() {
        assert!(UnitaryOp::rotation(3, 0, 3, 0.1, 0.0).is_err());
        assert!(UnitaryOp::rotation(3, 1, 1, 0.1, 0.0).is_err());
        assert!(UnitaryOp::composition(3, vec![UnitaryOp::identity(4)]).is_err());
        let op = UnitaryOp::identity(3);
        assert!(op.apply(&StateVector::basis(4, 0).unwrap()).is_err());
        let not_unitary = Matrix::from_rows(&[vec![c(1.0), c(1.0)], vec![c(0.0), c(1.0)]]).unwrap();
        assert!(matches!(DenseUnitary::new(not_unitary), Err(Error::NotUnitary { .. })));
        assert!(StateVector::new(Vector::new(vec![c(1.0), c(1.0)])).is_err());
    }

    #[test]
    fn dense_variant_matches_structured() {
        let mut rng = Rng::new(2);
        let op = random_op(&mut rng, 4, 6);
        let dense = UnitaryOp::Dense(DenseUnitary::new(op.dense()).unwrap());
        let psi = random_state(&mut rng, 4);
        let a = op.apply(&psi).unwrap();
        let b = dense.apply(&psi).unwrap();
        assert!(a.amplitudes().max_abs_diff(b.amplitudes()).unwrap() <= 1e-12);
        let back = dense.inverse().apply(&b).unwrap();
        assert!(back.amplitudes().max_abs_diff(psi.amplitudes()).unwrap() <= 1e-12);
    }

    #[test]
    fn overlap_examples() {
        let e1 = StateVector::basis(2, 0).unwrap();
        let e2 = StateVector::basis(2, 1).unwrap();
        let r = 1.0 / 2f64.sqrt();
        let plus = StateVector::new(Vector::new(vec![c(r), c(r)])).unwrap();
        assert!((overlap_probability(&e1, &e1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(overlap_probability(&e1, &e2).unwrap(), 0.0);
        assert!((overlap_probability(&plus, &e1).unwrap() - 0.5).abs() < 1e-15);
        assert!(overlap_probability(&e1, &StateVector::basis(3, 0).unwrap()).is_err());
    }

    #[test]
    fn eigenstates_measure_with_certainty() {
        let b = standard(4);
        for seed in 0..20 {
            let (i, s) = measure(&StateVector::basis(4, 2).unwrap(), &b, &mut Rng::new(seed)).unwrap();
            assert_eq!(i, 2);
            assert_eq!(s, StateVector::basis(4, 2).unwrap());
        }
    }

    #[test]
    fn collapsed_state_is_phase_fixed() {
        let r = 1.0 / 2f64.sqrt();
        let v0 = Vector::new(vec![C::new(0.0, r), C::new(r, 0.0)]);
        let v1 = Vector::new(vec![C::new(0.0, r), C::new(-r, 0.0)]);
        let b = ContextBasis::new("tilted", vec![v0, v1], vec!["a".into(), "b".into()]).unwrap();
        let (i, s) = measure(&StateVector::new(b.vector(1).clone()).unwrap(), &b, &mut Rng::new(0)).unwrap();
        assert_eq!(i, 1);
        let first = s.amplitudes().get(0);
        assert!(first.im.abs() < 1e-15 && first.re > 0.0);
    }

    #[test]
    fn balanced_state_splits_evenly_and_reruns_identically() {
        let r = 1.0 / 2f64.sqrt();
        let psi = StateVector::new(Vector::new(vec![c(r), c(r)])).unwrap();
        let b = standard(2);
        let draw = |seed| {
            let mut rng = Rng::new(seed);
            (0..100_000).map(|_| measure(&psi, &b, &mut rng).unwrap().0).collect::<Vec<_>>()
        };
        let a = draw(5);
        let freq = a.iter().filter(|&&i| i == 0).count() as f64 / 1e5;
        assert!((freq - 0.5).abs() <= 0.01);
        assert_eq!(a, draw(5));
    }

    #[test]
    fn attention_step_special_cases() {
        let b = standard(5);
        let mut rng = Rng::new(6);
        for k in 0..5 {
            let e = StateVector::basis(5, k).unwrap();
            assert_eq!(quantum_attention_step(&e, &UnitaryOp::identity(5), &b, &mut rng).unwrap(), k);
            let p = UnitaryOp::permutation(vec![2, 4, 1, 0, 3]).unwrap();
            assert_eq!(quantum_attention_step(&e, &p, &b, &mut rng).unwrap(), [2, 4, 1, 0, 3][k]);
        }
    }

    #[test]
    fn rotation_outcomes_follow_cosine_law() {
        let theta = PI / 6.0;
        let op = UnitaryOp::rotation(4, 1, 3, theta, 0.7).unwrap();
        let b = standard(4);
        let e = StateVector::basis(4, 1).unwrap();
        let mut rng = Rng::new(7);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[quantum_attention_step(&e, &op, &b, &mut rng).unwrap()] += 1;
        }
        assert!((counts[1] as f64 / 1e5 - theta.cos().powi(2)).abs() <= 0.01);
        assert!((counts[3] as f64 / 1e5 - theta.sin().powi(2)).abs() <= 0.01);
        assert_eq!(counts[0] + counts[2], 0);
    }

    #[test]
    fn bridge_examples() {
        let flat = classicality_bridge(&Vector::new(vec![2.0; 4]), 0.7, &Vector::zeros(4)).unwrap();
        for p in flat {
            assert!((p - 0.25).abs() < 1e-15);
        }
        let z = Vector::new(vec![0.0, 9f64.ln()]);
        let p = classicality_bridge(&z, 1.0, &Vector::zeros(2)).unwrap();
        assert!((p[0] - 0.1).abs() < 1e-15 && (p[1] - 0.9).abs() < 1e-15);
        let q = classicality_bridge(&z, 1.0, &Vector::new(vec![1.3, -2.9])).unwrap();
        assert!((p[0] - q[0]).abs() <= 1e-15 && (p[1] - q[1]).abs() <= 1e-15);
        assert!(classicality_bridge(&z, 0.0, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn pipeline_matches_single_step() {
        let mut rng = Rng::new(8);
        let stages = vec![random_op(&mut rng, 3, 4), random_op(&mut rng, 3, 2)];
        let (_, f) = rotated_pair().unwrap();
        let pipe = Pipeline::new(stages, f.to_complex()).unwrap();
        let psi = random_state(&mut rng, 3);
        let a = pipe.run(&psi, &mut Rng::new(1)).unwrap().0;
        let b = quantum_attention_step(&psi, &pipe.as_op(), pipe.readout(), &mut Rng::new(1)).unwrap();
        assert_eq!(a, b);
        let p = pipe.probabilities(&psi).unwrap();
        assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(Pipeline::new(vec![UnitaryOp::identity(4)], f.to_complex()).is_err());
    }

    #[test]
    fn circuit_file_round_trips() {
        let circuit = Circuit {
            dim: 3,
            stages: vec![
                UnitaryOp::rotation(3, 0, 1, FRAC_PI_4, 0.0).unwrap(),
                UnitaryOp::permutation(vec![2, 0, 1]).unwrap(),
                UnitaryOp::composition(3, vec![UnitaryOp::rotation(3, 1, 2, 0.1, 0.5).unwrap()]).unwrap(),
            ],
            readout: Readout::Standard,
        };
        let text = circuit.to_json().unwrap();
        let back = Circuit::from_json(&text).unwrap();
        assert_eq!(back, circuit);
        assert_eq!(back.to_json().unwrap(), text);
        let bad = text.replace("\"dim\": 3,\n  \"stages\"", "\"dim\": 4,\n  \"stages\"");
        assert!(Circuit::from_json(&bad).is_err());
    }

    proptest! {
        #[test]
        fn evolution_preserves_norm(seed in any::<u64>(), d in 2usize..8, len in 1usize..10) {
            let mut rng = Rng::new(seed);
            let op = random_op(&mut rng, d, len);
            let psi = random_state(&mut rng, d);
            let phi = op.apply(&psi).unwrap();
            prop_assert!((phi.norm() - psi.norm()).abs() <= 1e-12);
            prop_assert!(unitarity_deviation(&op.dense()).unwrap() <= 1e-12);
        }

        #[test]
        fn evolution_is_reversible(seed in any::<u64>(), d in 2usize..8, len in 1usize..10) {
            let mut rng = Rng::new(seed);
            let op = random_op(&mut rng, d, len);
            let psi = random_state(&mut rng, d);
            let back = op.inverse().apply(&op.apply(&psi).unwrap()).unwrap();
            prop_assert!(back.amplitudes().max_abs_diff(psi.amplitudes()).unwrap() <= 1e-10);
        }

        #[test]
        fn composition_is_ordered_product(seed in any::<u64>(), d in 2usize..6) {
            let mut rng = Rng::new(seed);
            let parts: Vec<UnitaryOp> = (0..3).map(|_| random_op(&mut rng, d, 2)).collect();
            let comp = UnitaryOp::composition(d, parts.clone()).unwrap();
            let mut want = Matrix::<C>::identity(d);
            for p in &parts {
                want = p.dense().matmul(&want).unwrap();
            }
            prop_assert!(comp.dense().max_abs_diff(&want).unwrap() <= 1e-12);
            let psi = random_state(&mut rng, d);
            let direct = want.matvec(psi.amplitudes()).unwrap();
            prop_assert!(comp.apply(&psi).unwrap().amplitudes().max_abs_diff(&direct).unwrap() <= 1e-12);
        }

        #[test]
        fn bridge_matches_softmax(seed in any::<u64>(), t in 0.05f64..20.0) {
            let mut rng = Rng::new(seed);
            let z = Vector::new((0..6).map(|_| 5.0 * rng.normal()).collect());
            let phases = Vector::new((0..6).map(|_| rng.uniform_range(-PI, PI)).collect());
            let p = classicality_bridge(&z, t, &phases).unwrap();
            let s = softmax_temperature(&z, t).unwrap();
            for k in 0..6 {
                prop_assert!((p[k] - s.get(k)).abs() <= 1e-12);
            }
        }
    }
}
