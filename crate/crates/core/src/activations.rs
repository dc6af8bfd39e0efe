//! Logit, sigmoid, softmax (with temperature), and the complex amplitude
//! map whose squared moduli reproduce the tempered softmax.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numkit::Vector;

/// A point on the probability simplex: nonnegative entries summing to one.
///
/// Softmax outputs are strictly positive for moderate logits but can
/// underflow to exactly zero (masked attention, extreme temperatures), and
/// Born probabilities of basis states are exactly zero off the eigenstate,
/// so zero entries are admitted.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    /// Validates nonnegativity and normalization to within `tolerance`.
    pub fn new(p: Vec<f64>, tolerance: f64) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Empty("probability vector"));
        }
        if let Some(x) = p.iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
            return Err(Error::param("probabilities", format!("entry {x} is not a probability")));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > tolerance {
            return Err(Error::param("probabilities", format!("sum {s} differs from 1")));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Inverse-CDF draw: the first index whose cumulative mass exceeds `u`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, &p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding gap above the accumulated total
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(self.0.len() - 1)
    }
}

/// `log(p / (1 - p))` for `p` strictly inside `(0, 1)`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("{p} is outside the open interval (0, 1)")));
    }
    Ok((p / (1.0 - p)).ln())
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn sigmoid_prime(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax over a slice (max subtracted first).
pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = z.iter().map(|&x| (x - m).exp()).collect();
    let mut s = 0.0;
    for x in &e {
        s += x;
    }
    for x in e.iter_mut() {
        *x /= s;
    }
    e
}

fn check_logits(z: &Vector) -> Result<()> {
    if z.dim() == 0 {
        return Err(Error::Empty("logit vector"));
    }
    if z.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::param("z", "logits must be finite"));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("temperature", format!("{t} must be finite and > 0")));
    }
    Ok(())
}

pub fn softmax(z: &Vector) -> Result<ProbabilityVector> {
    check_logits(z)?;
    Ok(ProbabilityVector(softmax_slice(z.as_slice())))
}

/// `softmax(z / T)`.
pub fn softmax_temperature(z: &Vector, t: f64) -> Result<ProbabilityVector> {
    check_logits(z)?;
    check_temperature(t)?;
    if t == 1.0 {
        return Ok(ProbabilityVector(softmax_slice(z.as_slice())));
    }
    let scaled: Vec<f64> = z.as_slice().iter().map(|&x| x / t).collect();
    Ok(ProbabilityVector(softmax_slice(&scaled)))
}

/// Unit-norm complex amplitudes `a_i ∝ exp(z_i / 2T) · e^{i φ_i}`.
///
/// `|a_i|^2` equals `softmax_temperature(z, T)_i` whatever the phases.
pub fn amplitudes_from_logits(z: &Vector, t: f64, phases: &Vector) -> Result<Vector<Complex64>> {
    check_logits(z)?;
    check_temperature(t)?;
    if phases.dim() != z.dim() {
        return Err(Error::dims("amplitudes_from_logits", z.dim(), phases.dim()));
    }
    let scaled: Vec<f64> = z.as_slice().iter().map(|&x| x / t).collect();
    let m = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half: Vec<f64> = scaled.iter().map(|&x| ((x - m) / 2.0).exp()).collect();
    let mut s = 0.0;
    for w in &half {
        s += w * w;
    }
    let norm = s.sqrt();
    Ok(Vector::new(
        half.iter()
            .zip(phases.as_slice())
            .map(|(&w, &phi)| Complex64::from_polar(w / norm, phi))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec())
    }

    #[test]
    fn logit_examples() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert!((logit(sigmoid(3.7)).unwrap() - 3.7).abs() <= 1e-12);
        // ln 9, evaluated independently
        assert!((logit(0.9).unwrap() - 2.1972245773362196).abs() < 1e-14);
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(logit(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        for z in [-3.0, -0.2, 0.7, 5.5] {
            assert!((sigmoid(z) + sigmoid(-z) - 1.0).abs() < 1e-15);
        }
        // 1 / (1 + e^-2)
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn sigmoid_prime_examples_and_finite_differences() {
        assert_eq!(sigmoid_prime(0.0), 0.25);
        assert!(sigmoid_prime(40.0) < 1e-16);
        assert!(sigmoid_prime(-40.0) < 1e-16);
        let h = 1e-5;
        let mut z = -6.0;
        while z <= 6.0 {
            let fd = (sigmoid(z + h) - sigmoid(z - h)) / (2.0 * h);
            assert!((fd - sigmoid_prime(z)).abs() <= 1e-8, "z={z}");
            z += 0.05;
        }
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&v(&[0.0, 0.0])).unwrap().as_slice(), &[0.5, 0.5]);
        let a = softmax(&v(&[1.0, 2.0, 3.0])).unwrap();
        let b = softmax(&v(&[101.0, 102.0, 103.0])).unwrap();
        for i in 0..3 {
            assert!((a.get(i) - b.get(i)).abs() <= 1e-12);
        }
        let c = softmax(&v(&[0.0, 3f64.ln()])).unwrap();
        assert!((c.get(0) - 0.25).abs() < 1e-15 && (c.get(1) - 0.75).abs() < 1e-15);
        assert!(softmax(&v(&[])).is_err());
        assert!(softmax(&v(&[f64::NAN])).is_err());
    }

    #[test]
    fn temperature_examples() {
        let z = v(&[0.3, -1.2, 2.5]);
        assert_eq!(softmax_temperature(&z, 1.0).unwrap(), softmax(&z).unwrap());
        let sharp = softmax_temperature(&v(&[0.0, 1.0]), 0.001).unwrap();
        assert!(sharp.get(1) >= 1.0 - 1e-9);
        let t2 = softmax_temperature(&v(&[0.0, 2.0]), 2.0).unwrap();
        let direct = softmax(&v(&[0.0, 1.0])).unwrap();
        assert!((t2.get(0) - direct.get(0)).abs() < 1e-15);
        assert!(softmax_temperature(&z, 0.0).is_err());
        assert!(softmax_temperature(&z, -1.0).is_err());
    }

    #[test]
    fn amplitude_examples() {
        let a = amplitudes_from_logits(&v(&[0.0, 0.0]), 1.0, &v(&[0.0, 0.0])).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((a.get(0) - Complex64::new(r, 0.0)).norm() < 1e-15);
        assert!((a.get(1) - Complex64::new(r, 0.0)).norm() < 1e-15);

        let z = v(&[0.0, 2.0 * 3f64.ln()]);
        let a = amplitudes_from_logits(&z, 1.0, &v(&[1.0, -2.0])).unwrap();
        assert!((a.get(0).norm_sqr() - 0.1).abs() < 1e-12);
        assert!((a.get(1).norm_sqr() - 0.9).abs() < 1e-12);

        assert!(amplitudes_from_logits(&z, 0.0, &v(&[0.0, 0.0])).is_err());
        assert!(amplitudes_from_logits(&z, 1.0, &v(&[0.0])).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn sampling_by_inverse_cdf() {
        let p = ProbabilityVector::new(vec![0.25, 0.0, 0.75], 1e-12).unwrap();
        assert_eq!(p.sample_index(0.0), 0);
        assert_eq!(p.sample_index(0.2499), 0);
        assert_eq!(p.sample_index(0.25), 2);
        assert_eq!(p.sample_index(0.999_999), 2);
    }

    fn logits() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..20)
    }

    proptest! {
        #[test]
        fn softmax_contract(z in logits(), a in -100.0f64..100.0) {
            let p = softmax(&v(&z)).unwrap();
            prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));
            prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = z.iter().map(|x| x + a).collect();
            let q = softmax(&v(&shifted)).unwrap();
            for i in 0..z.len() {
                prop_assert!((p.get(i) - q.get(i)).abs() <= 1e-12);
            }
        }

        #[test]
        fn temperature_preserves_argmax(z in logits(), t in 0.01f64..100.0) {
            let p = softmax_temperature(&v(&z), t).unwrap();
            prop_assert_eq!(p.argmax(), argmax(&z));
        }

        #[test]
        fn amplitudes_match_softmax_for_any_phase(z in logits(), t in 0.05f64..20.0, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let phases = v(&z.iter().map(|_| rng.uniform_range(-10.0, 10.0)).collect::<Vec<_>>());
            let a = amplitudes_from_logits(&v(&z), t, &phases).unwrap();
            let p = softmax_temperature(&v(&z), t).unwrap();
            for i in 0..z.len() {
                prop_assert!((a.get(i).norm_sqr() - p.get(i)).abs() <= 1e-12);
            }
        }
    }
}
