//! Floating-point summation under explicit association orders.
//!
//! Addition is not associative in IEEE-754, so the same numbers summed in a
//! different grouping can give different bits. Inference kernels pick their
//! grouping from the batch shape; this module models that choice with a
//! batch-dependent chunk size (no GPU is involved) and contrasts it with a
//! deterministic mode whose chunking never depends on the batch.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// `((x0 + x1) + x2) + ...`
    Sequential,
    /// Recursive halves split at `n / 2`, left sum plus right sum.
    PairwiseTree,
    /// Sequential sums of consecutive chunks, then a sequential sum of the
    /// chunk totals.
    Chunked(usize),
    /// Sequential sum after a seeded shuffle of the inputs.
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReductionPlan {
    pub strategy: Strategy,
    pub precision: Precision,
}

impl ReductionPlan {
    pub fn new(strategy: Strategy, precision: Precision) -> Result<Self> {
        if let Strategy::Chunked(0) = strategy {
            return Err(Error::param("chunk_size", "must be at least 1"));
        }
        Ok(Self { strategy, precision })
    }

    pub fn f64(strategy: Strategy) -> Result<Self> {
        Self::new(strategy, Precision::F64)
    }

    pub fn label(&self) -> String {
        let p = match self.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        match self.strategy {
            Strategy::Sequential => format!("sequential/{p}"),
            Strategy::PairwiseTree => format!("pairwise/{p}"),
            Strategy::Chunked(c) => format!("chunked({c})/{p}"),
            Strategy::Shuffled(s) => format!("shuffled({s})/{p}"),
        }
    }
}

trait Acc: Copy + std::ops::Add<Output = Self> {
    const ZERO: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Acc for f64 {
    const ZERO: Self = 0.0;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

impl Acc for f32 {
    const ZERO: Self = 0.0;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

fn sequential<A: Acc>(xs: &[A]) -> A {
    let mut s = A::ZERO;
    for &x in xs {
        s = s + x;
    }
    s
}

fn pairwise<A: Acc>(xs: &[A]) -> A {
    match xs.len() {
        0 => A::ZERO,
        1 => xs[0],
        n => {
            let (l, r) = xs.split_at(n / 2);
            pairwise(l) + pairwise(r)
        }
    }
}

fn chunked<A: Acc>(xs: &[A], chunk: usize) -> A {
    let partials: Vec<A> = xs.chunks(chunk).map(sequential).collect();
    sequential(&partials)
}

fn reduce_in<A: Acc>(data: &[f64], strategy: Strategy) -> f64 {
    let mut xs: Vec<A> = data.iter().map(|&x| A::from_f64(x)).collect();
    let s = match strategy {
        Strategy::Sequential => sequential(&xs),
        Strategy::PairwiseTree => pairwise(&xs),
        Strategy::Chunked(c) => chunked(&xs, c),
        Strategy::Shuffled(seed) => {
            Rng::new(seed).shuffle(&mut xs);
            sequential(&xs)
        }
    };
    s.to_f64()
}

/// Sum of `data` in exactly the order the plan describes. In `F32` every
/// input is rounded to `f32` and all additions happen in `f32`.
pub fn reduce(data: &[f64], plan: ReductionPlan) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("reduction input"));
    }
    if let Strategy::Chunked(0) = plan.strategy {
        return Err(Error::param("chunk_size", "must be at least 1"));
    }
    Ok(match plan.precision {
        Precision::F64 => reduce_in::<f64>(data, plan.strategy),
        Precision::F32 => reduce_in::<f32>(data, plan.strategy),
    })
}

/// Chunked reduction with a chunk size fixed by the caller, never by the
/// surrounding batch.
pub fn deterministic_mode_reduce(data: &[f64], fixed_chunk: usize) -> Result<f64> {
    reduce(data, ReductionPlan::f64(Strategy::Chunked(fixed_chunk))?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscrepancyReport {
    pub values: Vec<(String, f64)>,
    pub max_abs_diff: f64,
    pub bitwise_identical: bool,
}

impl DiscrepancyReport {
    pub fn from_values(values: Vec<(String, f64)>) -> Self {
        let mut max_abs_diff: f64 = 0.0;
        let mut bitwise_identical = true;
        if let Some(&(_, first)) = values.first() {
            for &(_, v) in &values {
                bitwise_identical &= v.to_bits() == first.to_bits();
            }
            for (i, &(_, a)) in values.iter().enumerate() {
                for &(_, b) in &values[i + 1..] {
                    max_abs_diff = max_abs_diff.max((a - b).abs());
                }
            }
        }
        Self {
            values,
            max_abs_diff,
            bitwise_identical,
        }
    }
}

/// Sums the same data under every plan.
pub fn compare_plans(data: &[f64], plans: &[ReductionPlan]) -> Result<DiscrepancyReport> {
    if plans.is_empty() {
        return Err(Error::Empty("plans"));
    }
    let values = plans
        .iter()
        .map(|p| Ok((p.label(), reduce(data, *p)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscrepancyReport::from_values(values))
}

/// How a request's reduction is laid out inside a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlanFamily {
    /// The kernel splits each reduction into `max(1, 64 / batch_size)`
    /// chunks, so small batches use more, shorter chunks.
    BatchDependent(Precision),
    /// The same chunk size for every batch size.
    Deterministic { fixed_chunk: usize },
}

/// Parallel units available to the modeled kernel.
pub const KERNEL_WIDTH: usize = 64;

impl PlanFamily {
    pub fn plan_for(&self, request_len: usize, batch_size: usize) -> Result<ReductionPlan> {
        if batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        match *self {
            PlanFamily::BatchDependent(precision) => {
                let splits = (KERNEL_WIDTH / batch_size).max(1);
                let chunk = request_len.div_ceil(splits).max(1);
                ReductionPlan::new(Strategy::Chunked(chunk), precision)
            }
            PlanFamily::Deterministic { fixed_chunk } => ReductionPlan::f64(Strategy::Chunked(fixed_chunk)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchReport {
    pub batch_sizes: Vec<usize>,
    /// One report per request, one value per batch size.
    pub requests: Vec<DiscrepancyReport>,
    pub max_abs_diff: f64,
    pub bitwise_identical: bool,
}

/// Groups the requests into consecutive batches of each size, reduces
/// every request with the plan its batch layout dictates, and compares
/// each request's sums across the batch sizes.
pub fn batch_simulation(requests: &[Vec<f64>], batch_sizes: &[usize], family: PlanFamily) -> Result<BatchReport> {
    if requests.is_empty() {
        return Err(Error::Empty("requests"));
    }
    if batch_sizes.is_empty() {
        return Err(Error::Empty("batch sizes"));
    }
    let mut per_request: Vec<Vec<(String, f64)>> = vec![Vec::new(); requests.len()];
    for &b in batch_sizes {
        if b == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        // a short final batch is padded with empty requests, which leaves
        // the kernel layout at `b`
        for (batch_idx, batch) in requests.chunks(b).enumerate() {
            for (k, req) in batch.iter().enumerate() {
                let plan = family.plan_for(req.len(), b)?;
                per_request[batch_idx * b + k].push((format!("batch={b}"), reduce(req, plan)?));
            }
        }
    }
    let reports: Vec<DiscrepancyReport> = per_request.into_iter().map(DiscrepancyReport::from_values).collect();
    Ok(BatchReport {
        batch_sizes: batch_sizes.to_vec(),
        max_abs_diff: reports.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max),
        bitwise_identical: reports.iter().all(|r| r.bitwise_identical),
        requests: reports,
    })
}

/// Values spread over many binades: `± m · 2^e` with `m` uniform in
/// `[1, 2)` and `e` uniform in `[-exp_spread, exp_spread]`.
pub fn spread_corpus(rng: &mut Rng, n: usize, exp_spread: i32) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let e = rng.below((2 * exp_spread + 1) as usize) as i32 - exp_spread;
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            sign * (1.0 + rng.uniform()) * 2f64.powi(e)
        })
        .collect()
}

/// Splits a corpus into consecutive requests of length `len`.
pub fn into_requests(corpus: &[f64], len: usize) -> Vec<Vec<f64>> {
    corpus.chunks(len.max(1)).map(<[f64]>::to_vec).collect()
}

/// CSV rows `plan,sum,bits` with the sum in shortest round-trip decimal and
/// its bit pattern in hex.
pub fn write_report_csv(report: &DiscrepancyReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "plan,sum,bits")?;
    for (label, v) in &report.values {
        writeln!(w, "{label},{v:?},0x{:016x}", v.to_bits())?;
    }
    Ok(())
}

/// CSV rows `request,batch_size,sum,bits`.
pub fn write_batch_csv(report: &BatchReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "request,batch_size,sum,bits")?;
    for (i, r) in report.requests.iter().enumerate() {
        for ((_, v), b) in r.values.iter().zip(&report.batch_sizes) {
            writeln!(w, "{i},{b},{v:?},0x{:016x}", v.to_bits())?;
        }
    }
    Ok(())
}

pub fn save_batch_csv(report: &BatchReport, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_batch_csv(report, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::{Rng, Strategy};

    const CRAFTED: [f64; 3] = [1e20, -1e20, 1.0];

    fn all_plans(seed: u64) -> Vec<ReductionPlan> {
        let mut v = Vec::new();
        for p in [Precision::F64, Precision::F32] {
            for s in [Strategy::Sequential, Strategy::PairwiseTree, Strategy::Chunked(3), Strategy::Shuffled(seed)] {
                v.push(ReductionPlan::new(s, p).unwrap());
            }
        }
        v
    }

    #[test]
    fn single_element_and_zeros() {
        for plan in all_plans(1) {
            assert_eq!(reduce(&[2.5], plan).unwrap(), 2.5);
            assert_eq!(reduce(&[0.0; 17], plan).unwrap().to_bits(), 0.0f64.to_bits());
        }
        assert!(reduce(&[], ReductionPlan::f64(Strategy::Sequential).unwrap()).is_err());
        assert!(ReductionPlan::f64(Strategy::Chunked(0)).is_err());
    }

    #[test]
    fn crafted_input_separates_orders() {
        let seq = reduce(&CRAFTED, ReductionPlan::f64(Strategy::Sequential).unwrap()).unwrap();
        assert_eq!(seq, 1.0);
        // IEEE oracle: 1e20 + (-1e20 + 1) loses the 1 to rounding
        let regrouped = 1e20 + (-1e20 + 1.0);
        assert_eq!(regrouped, 0.0);
        assert_eq!(reduce(&CRAFTED, ReductionPlan::f64(Strategy::PairwiseTree).unwrap()).unwrap(), regrouped);
        assert_eq!(deterministic_mode_reduce(&CRAFTED, 3).unwrap(), 1.0);
        assert_ne!(
            deterministic_mode_reduce(&CRAFTED, 3).unwrap(),
            reduce(&CRAFTED, ReductionPlan::f64(Strategy::PairwiseTree).unwrap()).unwrap()
        );
    }

    #[test]
    fn shuffled_plan_sums_the_permuted_order() {
        let mut zero_seen = false;
        for seed in 0..20 {
            let mut order = CRAFTED.to_vec();
            Rng::new(seed).shuffle(&mut order);
            let want = (order[0] + order[1]) + order[2];
            let got = reduce(&CRAFTED, ReductionPlan::f64(Strategy::Shuffled(seed)).unwrap()).unwrap();
            assert_eq!(got.to_bits(), want.to_bits());
            zero_seen |= got == 0.0;
        }
        assert!(zero_seen);
    }

    #[test]
    fn chunked_matches_manual_grouping() {
        let xs = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let want = ((0.1 + 0.2) + 0.3) + ((0.4 + 0.5) + 0.6) + 0.7;
        assert_eq!(reduce(&xs, ReductionPlan::f64(Strategy::Chunked(3)).unwrap()).unwrap(), want);
        // n = 7 splits 3 | 4, then 1 | 2 and 2 | 2
        let tree = (0.1 + (0.2 + 0.3)) + ((0.4 + 0.5) + (0.6 + 0.7));
        assert_eq!(reduce(&xs, ReductionPlan::f64(Strategy::PairwiseTree).unwrap()).unwrap(), tree);
        assert_eq!(deterministic_mode_reduce(&xs, 7).unwrap(), reduce(&xs, ReductionPlan::f64(Strategy::Sequential).unwrap()).unwrap());
        assert_eq!(deterministic_mode_reduce(&xs, 100).unwrap(), reduce(&xs, ReductionPlan::f64(Strategy::Sequential).unwrap()).unwrap());
    }

    #[test]
    fn f32_accumulates_in_single_precision() {
        let xs = [1.0, 1e-8, 1e-8];
        assert_eq!(reduce(&xs, ReductionPlan::new(Strategy::Sequential, Precision::F32).unwrap()).unwrap(), 1.0);
        assert!(reduce(&xs, ReductionPlan::f64(Strategy::Sequential).unwrap()).unwrap() > 1.0);
    }

    #[test]
    fn plan_reruns_are_bit_identical() {
        let xs = spread_corpus(&mut Rng::new(2), 1000, 40);
        for plan in all_plans(9) {
            let first = reduce(&xs, plan).unwrap().to_bits();
            for _ in 0..100 {
                assert_eq!(reduce(&xs, plan).unwrap().to_bits(), first);
            }
        }
    }

    #[test]
    fn spread_data_differs_across_batch_sizes() {
        let corpus = spread_corpus(&mut Rng::new(3), 64 * 128, 30);
        let reqs = into_requests(&corpus, 128);
        let r = batch_simulation(&reqs, &[1, reqs.len()], PlanFamily::BatchDependent(Precision::F64)).unwrap();
        assert!(!r.bitwise_identical);
        assert!(r.max_abs_diff > 0.0);
        let direct_small = reduce(&reqs[0], ReductionPlan::f64(Strategy::Chunked(2)).unwrap()).unwrap();
        let direct_large = reduce(&reqs[0], ReductionPlan::f64(Strategy::Chunked(128)).unwrap()).unwrap();
        assert_eq!(r.requests[0].values[0].1, direct_small);
        assert_eq!(r.requests[0].values[1].1, direct_large);
    }

    #[test]
    fn small_integers_are_batch_invariant() {
        let mut rng = Rng::new(4);
        let corpus: Vec<f64> = (0..4096).map(|_| rng.below(1000) as f64 - 500.0).collect();
        let reqs = into_requests(&corpus, 64);
        let r = batch_simulation(&reqs, &[1, 2, 7, 64], PlanFamily::BatchDependent(Precision::F64)).unwrap();
        assert!(r.bitwise_identical);
        assert_eq!(r.max_abs_diff, 0.0);
    }

    #[test]
    fn deterministic_family_is_batch_invariant() {
        let corpus = spread_corpus(&mut Rng::new(5), 10_000, 30);
        let reqs = into_requests(&corpus, 100);
        let r = batch_simulation(&reqs, &[1, 2, 7, 64], PlanFamily::Deterministic { fixed_chunk: 16 }).unwrap();
        assert!(r.bitwise_identical);
        for (req, rep) in reqs.iter().zip(&r.requests) {
            assert_eq!(rep.values[0].1.to_bits(), deterministic_mode_reduce(req, 16).unwrap().to_bits());
        }
    }

    #[test]
    fn report_flags_are_consistent() {
        let r = compare_plans(&CRAFTED, &all_plans(0)).unwrap();
        assert!(!r.bitwise_identical && r.max_abs_diff > 0.0);
        let same = DiscrepancyReport::from_values(vec![("a".into(), 1.5), ("b".into(), 1.5)]);
        assert!(same.bitwise_identical && same.max_abs_diff == 0.0);
        let mut csv = Vec::new();
        write_report_csv(&same, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap(), "plan,sum,bits\na,1.5,0x3ff8000000000000\nb,1.5,0x3ff8000000000000\n");
    }

    proptest! {
        #[test]
        fn exact_regime_agrees_bitwise(xs in prop::collection::vec(-(1i64 << 40)..(1i64 << 40), 1..200), seed in any::<u64>(), chunk in 1usize..50) {
            // partial sums stay below 2^53, so every addition is exact
            let data: Vec<f64> = xs.iter().map(|&x| x as f64).collect();
            let plans = [
                ReductionPlan::f64(Strategy::Sequential).unwrap(),
                ReductionPlan::f64(Strategy::PairwiseTree).unwrap(),
                ReductionPlan::f64(Strategy::Chunked(chunk)).unwrap(),
                ReductionPlan::f64(Strategy::Shuffled(seed)).unwrap(),
            ];
            prop_assert!(compare_plans(&data, &plans).unwrap().bitwise_identical);
        }

        #[test]
        fn report_identical_implies_zero_diff(xs in prop::collection::vec(-1e6f64..1e6, 1..64), seed in any::<u64>()) {
            let r = compare_plans(&xs, &all_plans(seed)[..4]).unwrap();
            if r.bitwise_identical {
                prop_assert_eq!(r.max_abs_diff, 0.0);
            }
        }
    }
}
