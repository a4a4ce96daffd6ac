//! Benjamini-Hochberg selection on the test matrices, support estimates for
//! both precision matrices, and evaluation of the Kronecker-product support.
//!
//! Discovery counts `a` (row precision, `p x p`) and `b` (column precision,
//! `q x q`) count ordered off-diagonal entries, so each rejected pair
//! contributes two. With that convention the joint estimate
//! `supp(Omega_hat) (x) supp(Gamma_hat)` has `pb + a(q + b)` off-diagonal
//! entries.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::PrecisionMatrix;
use crate::teststat::TestMatrix;

/// Default cap on materialized joint edges.
pub const DEFAULT_KRON_CAP: usize = 4_000_000;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided p-value `2 - 2 Phi(|t|)`, evaluated through `erfc` so the tail
/// does not cancel.
pub fn two_sided_p(t: f64) -> f64 {
    erfc(t.abs() / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValueSet {
    pub dim: usize,
    /// Pairs `(i, j)` with `i < j`, row-major.
    pub pairs: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl PValueSet {
    /// Number of hypotheses, `(dim^2 - dim) / 2`.
    pub fn m(&self) -> usize {
        self.values.len()
    }
}

pub fn p_values(t: &TestMatrix) -> Result<PValueSet> {
    let dim = t.dim();
    let mut pairs = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
    let mut values = Vec::with_capacity(pairs.capacity());
    for i in 0..dim {
        for j in i + 1..dim {
            let v = t.t[(i, j)];
            if !v.is_finite() {
                return Err(Error::Degenerate(format!("statistic ({i}, {j}) is not finite")));
            }
            pairs.push((i, j));
            values.push(two_sided_p(v));
        }
    }
    Ok(PValueSet { dim, pairs, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhSelection {
    pub alpha: f64,
    pub m: usize,
    pub k_hat: usize,
    /// `p_(k_hat)`, or 0 when nothing is selected.
    pub cutoff: f64,
    pub rejected: Vec<(usize, usize)>,
}

/// BH step-up on a bare vector: returns `(k_hat, cutoff, rejected indices)`.
///
/// `k_hat = max{k : p_(k) <= alpha k / m}`; every p-value at or below
/// `p_(k_hat)` is rejected, so ties can push the count above `k_hat`.
pub fn bh_step_up(values: &[f64], alpha: f64) -> (usize, f64, Vec<usize>) {
    let m = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut k_hat = 0;
    for k in (1..=m).rev() {
        if sorted[k - 1] <= alpha * k as f64 / m as f64 {
            k_hat = k;
            break;
        }
    }
    if k_hat == 0 {
        return (0, 0.0, Vec::new());
    }
    let cutoff = sorted[k_hat - 1];
    let rejected = values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= cutoff)
        .map(|(idx, _)| idx)
        .collect();
    (k_hat, cutoff, rejected)
}

pub fn bh_select(pv: &PValueSet, alpha: f64) -> Result<BhSelection> {
    check_alpha(alpha)?;
    let (k_hat, cutoff, idx) = bh_step_up(&pv.values, alpha);
    Ok(BhSelection {
        alpha,
        m: pv.m(),
        k_hat,
        cutoff,
        rejected: idx.into_iter().map(|i| pv.pairs[i]).collect(),
    })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportEstimate {
    pub mask: Mask,
    /// Ordered off-diagonal count, `2 |rejected|`.
    pub discoveries: usize,
}

impl SupportEstimate {
    pub fn dim(&self) -> usize {
        self.mask.dim()
    }
}

pub fn support_estimate(sel: &BhSelection, dim: usize) -> Result<SupportEstimate> {
    let mut mask = Mask::identity(dim);
    for &(i, j) in &sel.rejected {
        if i >= dim || j >= dim || i == j {
            return Err(Error::Dimension(format!(
                "rejected pair ({i}, {j}) invalid for dimension {dim}"
            )));
        }
        mask.set(i, j, true);
        mask.set(j, i, true);
    }
    let discoveries = mask.offdiag_count();
    Ok(SupportEstimate { mask, discoveries })
}

/// Plug-in estimate of the joint FDP: the joint FDP formula with the false
/// discovery counts replaced by `alpha a` and `alpha b`.
pub fn alpha_prime(alpha: f64, a: usize, b: usize, p: usize, q: usize) -> f64 {
    let (a, b, p, q) = (a as f64, b as f64, p as f64, q as f64);
    let num = alpha * ((2.0 - alpha) * a * b + a * q + b * p);
    let den = (a * b + a * q + p * b).max(1.0);
    num / den
}

/// Total off-diagonal entries of the joint support, `pb + a(q + b)`.
pub fn joint_discoveries(a: usize, b: usize, p: usize, q: usize) -> f64 {
    let (a, b, p, q) = (a as f64, b as f64, p as f64, q as f64);
    p * b + a * (q + b)
}

/// False joint discoveries `a0(q + b) + (a - a0) b0 + p b0`.
pub fn joint_false_discoveries(a: usize, a0: usize, b: usize, b0: usize, p: usize, q: usize) -> f64 {
    let (a, a0, b, b0, p, q) = (a as f64, a0 as f64, b as f64, b0 as f64, p as f64, q as f64);
    a0 * (q + b) + (a - a0) * b0 + p * b0
}

pub fn joint_fdp(a: usize, a0: usize, b: usize, b0: usize, p: usize, q: usize) -> f64 {
    joint_false_discoveries(a, a0, b, b0, p, q) / joint_discoveries(a, b, p, q).max(1.0)
}

/// Joint power `(p(b - b0) + (a - a0)(q + b - b0)) / (pB + A(q + B))`, with
/// `A`, `B` the true ordered off-diagonal counts. Zero when there is nothing
/// to discover.
#[allow(clippy::too_many_arguments)]
pub fn joint_power(a: usize, a0: usize, b: usize, b0: usize, p: usize, q: usize, big_a: usize, big_b: usize) -> f64 {
    let (a, a0, b, b0, p, q) = (a as f64, a0 as f64, b as f64, b0 as f64, p as f64, q as f64);
    let (big_a, big_b) = (big_a as f64, big_b as f64);
    let den = p * big_b + big_a * (q + big_b);
    if den == 0.0 {
        return 0.0;
    }
    (p * (b - b0) + (a - a0) * (q + b - b0)) / den
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    pub p: usize,
    pub q: usize,
    pub alpha: f64,
    pub a: usize,
    pub b: usize,
    pub alpha_prime: f64,
    pub a0: Option<usize>,
    pub b0: Option<usize>,
    pub fdp_omega: Option<f64>,
    pub fdp_gamma: Option<f64>,
    pub fdp_joint: Option<f64>,
    pub power_joint: Option<f64>,
}

fn false_discoveries(est: &Mask, truth: &Mask) -> usize {
    let dim = est.dim();
    let mut count = 0;
    for i in 0..dim {
        for j in 0..dim {
            if i != j && est.get(i, j) && !truth.get(i, j) {
                count += 1;
            }
        }
    }
    count
}

/// Evaluation numbers for a pair of support estimates. Without ground truth
/// only `a`, `b` and `alpha_prime` are filled.
pub fn joint_metrics(
    omega_est: &SupportEstimate,
    gamma_est: &SupportEstimate,
    truth: Option<(&PrecisionMatrix, &PrecisionMatrix)>,
    alpha: f64,
) -> Result<JointMetrics> {
    let (p, q) = (omega_est.dim(), gamma_est.dim());
    let (a, b) = (omega_est.discoveries, gamma_est.discoveries);
    let mut metrics = JointMetrics {
        p,
        q,
        alpha,
        a,
        b,
        alpha_prime: alpha_prime(alpha, a, b, p, q),
        a0: None,
        b0: None,
        fdp_omega: None,
        fdp_gamma: None,
        fdp_joint: None,
        power_joint: None,
    };
    if let Some((omega, gamma)) = truth {
        if omega.dim() != p || gamma.dim() != q {
            return Err(Error::Dimension(format!(
                "estimates are {p}x{p} and {q}x{q}, truth is {}x{} and {}x{}",
                omega.dim(),
                omega.dim(),
                gamma.dim(),
                gamma.dim()
            )));
        }
        let a0 = false_discoveries(&omega_est.mask, omega.support());
        let b0 = false_discoveries(&gamma_est.mask, gamma.support());
        let big_a = omega.support().offdiag_count();
        let big_b = gamma.support().offdiag_count();
        metrics.a0 = Some(a0);
        metrics.b0 = Some(b0);
        metrics.fdp_omega = Some(a0 as f64 / a.max(1) as f64);
        metrics.fdp_gamma = Some(b0 as f64 / b.max(1) as f64);
        metrics.fdp_joint = Some(joint_fdp(a, a0, b, b0, p, q));
        metrics.power_joint = Some(joint_power(a, a0, b, b0, p, q, big_a, big_b));
    }
    Ok(metrics)
}

/// An off-diagonal entry of the `pq x pq` joint support: `((i, j), (k, l))`
/// links `X_ij` and `X_kl`.
pub type JointEdge = ((usize, usize), (usize, usize));

#[derive(Debug, Clone, PartialEq)]
pub enum KronSupport {
    /// Every ordered off-diagonal pair of the joint support.
    Edges(Vec<JointEdge>),
    /// Only the closed-form count.
    Count(u64),
}

/// Joint support `supp(Omega_hat) (x) supp(Gamma_hat)`. The pair
/// `((i, j), (k, l))` is present iff `omega(i, k)` and `gamma(j, l)`. When
/// `materialize` is set and the count exceeds `cap`, fails instead of
/// allocating.
pub fn kron_support(
    omega_est: &SupportEstimate,
    gamma_est: &SupportEstimate,
    cap: usize,
    materialize: bool,
) -> Result<KronSupport> {
    let (p, q) = (omega_est.dim(), gamma_est.dim());
    let total = joint_discoveries(omega_est.discoveries, gamma_est.discoveries, p, q) as u64;
    if !materialize {
        return Ok(KronSupport::Count(total));
    }
    if total > cap as u64 {
        return Err(Error::Config(format!(
            "joint support has {total} edges, above the materialization cap {cap}"
        )));
    }
    let row_pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| (0..p).map(move |k| (i, k)))
        .filter(|&(i, k)| omega_est.mask.get(i, k))
        .collect();
    let col_pairs: Vec<(usize, usize)> = (0..q)
        .flat_map(|j| (0..q).map(move |l| (j, l)))
        .filter(|&(j, l)| gamma_est.mask.get(j, l))
        .collect();
    let mut edges = Vec::with_capacity(total as usize);
    for &(i, k) in &row_pairs {
        for &(j, l) in &col_pairs {
            if i != k || j != l {
                edges.push(((i, j), (k, l)));
            }
        }
    }
    Ok(KronSupport::Edges(edges))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub a: usize,
    pub b: usize,
    /// Every candidate produced `a = b = 0`.
    pub zero_discovery: bool,
    /// Whether `alpha_prime` was non-decreasing along the grid.
    pub monotone: bool,
    /// `(alpha, a, b, alpha_prime)` per candidate.
    pub trace: Vec<(f64, usize, usize, f64)>,
}

/// Scans `grid` (sorted ascending internally) and picks the per-axis level
/// whose realized `alpha_prime` is closest to `target`; ties go to the smaller
/// level. `discoveries(alpha)` must return the realized `(a, b)`.
pub fn choose_alpha_for_target<F>(target: f64, p: usize, q: usize, grid: &[f64], mut discoveries: F) -> Result<AlphaChoice>
where
    F: FnMut(f64) -> Result<(usize, usize)>,
{
    check_alpha(target)?;
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    for &a in &grid {
        check_alpha(a)?;
    }
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();

    let mut trace = Vec::with_capacity(grid.len());
    for &alpha in &grid {
        let (a, b) = discoveries(alpha)?;
        trace.push((alpha, a, b, alpha_prime(alpha, a, b, p, q)));
    }
    let zero_discovery = trace.iter().all(|&(_, a, b, _)| a == 0 && b == 0);
    let monotone = trace.windows(2).all(|w| w[1].3 >= w[0].3);
    let best = if zero_discovery {
        trace[0]
    } else {
        let mut best = trace[0];
        for &cand in &trace[1..] {
            if (cand.3 - target).abs() < (best.3 - target).abs() {
                best = cand;
            }
        }
        best
    };
    Ok(AlphaChoice {
        alpha: best.0,
        alpha_prime: best.3,
        a: best.1,
        b: best.2,
        zero_discovery,
        monotone,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teststat::Axis;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn pv(values: Vec<f64>) -> PValueSet {
        PValueSet {
            dim: 0,
            pairs: (0..values.len()).map(|i| (i, i + 1)).collect(),
            values,
        }
    }

    #[test]
    fn p_value_reference_points() {
        assert_eq!(two_sided_p(0.0), 1.0);
        assert!((two_sided_p(1.959964) - 0.05).abs() < 1e-4);
        let tail = two_sided_p(8.0);
        assert!(tail > 0.0);
        assert!((tail / 1.244192114854357e-15 - 1.0).abs() < 1e-10, "{tail:e}");
        assert_eq!(two_sided_p(-2.5), two_sided_p(2.5));
    }

    #[test]
    fn p_values_from_matrix() {
        let t = TestMatrix {
            t: DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -3.0, 1.0, 0.0, 0.0, -3.0, 0.0, 0.0]),
            a_hat: 1.0,
            axis: Axis::Gamma,
        };
        let pv = p_values(&t).unwrap();
        assert_eq!(pv.m(), 3);
        assert_eq!(pv.pairs, vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(pv.values[2], 1.0);
        assert!(pv.values[1] < pv.values[0]);
    }

    #[test]
    fn bh_worked_example() {
        let sel = bh_select(&pv(vec![0.15, 0.9, 0.01]), 0.3).unwrap();
        assert_eq!(sel.k_hat, 2);
        assert_eq!(sel.cutoff, 0.15);
        assert_eq!(sel.rejected.len(), 2);
    }

    #[test]
    fn bh_nothing_rejected() {
        let sel = bh_select(&pv(vec![1.0; 6]), 0.2).unwrap();
        assert_eq!(sel.k_hat, 0);
        assert_eq!(sel.cutoff, 0.0);
        assert!(sel.rejected.is_empty());
        assert!(bh_select(&pv(vec![0.5]), 1.0).is_err());
        assert!(bh_select(&pv(vec![0.5]), 0.0).is_err());
    }

    #[test]
    fn bh_ties_at_cutoff_are_rejected() {
        let (k_hat, cutoff, rejected) = bh_step_up(&[0.01, 0.01, 0.01, 0.8], 0.05);
        assert_eq!(k_hat, 3);
        assert_eq!(cutoff, 0.01);
        assert_eq!(rejected, vec![0, 1, 2]);
    }

    #[test]
    fn support_estimates() {
        let empty = BhSelection { alpha: 0.1, m: 3, k_hat: 0, cutoff: 0.0, rejected: vec![] };
        let s = support_estimate(&empty, 3).unwrap();
        assert_eq!(s.mask, Mask::identity(3));
        assert_eq!(s.discoveries, 0);
        let one = BhSelection { rejected: vec![(0, 1)], k_hat: 1, ..empty.clone() };
        let s = support_estimate(&one, 3).unwrap();
        assert_eq!(s.discoveries, 2);
        assert!(s.mask.get(1, 0) && s.mask.get(0, 1));
        assert!(s.mask.is_symmetric());
        let bad = BhSelection { rejected: vec![(0, 5)], ..empty };
        assert!(support_estimate(&bad, 3).is_err());
    }

    #[test]
    fn alpha_prime_values() {
        assert_eq!(alpha_prime(0.1, 0, 0, 50, 40), 0.0);
        assert_abs_diff_eq!(alpha_prime(0.1, 10, 20, 50, 40), 0.11125, epsilon = 1e-15);
        let grid: Vec<f64> = (1..=50).map(|k| k as f64 / 100.0).collect();
        for w in grid.windows(2) {
            assert!(alpha_prime(w[1], 10, 20, 50, 40) >= alpha_prime(w[0], 10, 20, 50, 40));
        }
    }

    #[test]
    fn joint_fdp_worked_example() {
        assert_abs_diff_eq!(joint_fdp(2, 1, 3, 1, 4, 5), 13.0 / 28.0, epsilon = 1e-15);
    }

    fn est_from(mask: Mask) -> SupportEstimate {
        let discoveries = mask.offdiag_count();
        SupportEstimate { mask, discoveries }
    }

    #[test]
    fn metrics_exact_and_empty() {
        let omega = crate::model::gen_precision(crate::model::GraphKind::band(), 6, 0).unwrap();
        let gamma = crate::model::gen_precision(crate::model::GraphKind::hub(), 10, 0).unwrap();
        let exact = joint_metrics(
            &est_from(omega.support().clone()),
            &est_from(gamma.support().clone()),
            Some((&omega, &gamma)),
            0.1,
        )
        .unwrap();
        assert_eq!(exact.fdp_joint, Some(0.0));
        assert_eq!(exact.power_joint, Some(1.0));

        let empty = joint_metrics(
            &est_from(Mask::identity(6)),
            &est_from(Mask::identity(10)),
            Some((&omega, &gamma)),
            0.1,
        )
        .unwrap();
        assert_eq!(empty.fdp_joint, Some(0.0));
        assert_eq!(empty.power_joint, Some(0.0));
        assert_eq!(empty.alpha_prime, 0.0);

        let no_truth = joint_metrics(&est_from(Mask::identity(6)), &est_from(Mask::identity(10)), None, 0.1).unwrap();
        assert!(no_truth.fdp_joint.is_none());
        assert!(joint_metrics(&est_from(Mask::identity(5)), &est_from(Mask::identity(10)), Some((&omega, &gamma)), 0.1).is_err());
    }

    #[test]
    fn kron_support_cases() {
        let diag = kron_support(&est_from(Mask::identity(3)), &est_from(Mask::identity(4)), 100, true).unwrap();
        assert_eq!(diag, KronSupport::Edges(vec![]));

        let full = est_from(Mask::from_fn(2, |_, _| true));
        let edges = match kron_support(&full, &est_from(Mask::identity(2)), 100, true).unwrap() {
            KronSupport::Edges(e) => e,
            other => panic!("{other:?}"),
        };
        let mut expected = vec![((0, 0), (1, 0)), ((0, 1), (1, 1)), ((1, 0), (0, 0)), ((1, 1), (0, 1))];
        expected.sort();
        let mut got = edges.clone();
        got.sort();
        assert_eq!(got, expected);

        assert_eq!(kron_support(&full, &full, 0, false).unwrap(), KronSupport::Count(12));
        assert!(kron_support(&full, &full, 5, true).is_err());
    }

    #[test]
    fn choose_alpha_paths() {
        let c = choose_alpha_for_target(0.1, 10, 10, &[0.05], |_| Ok((4, 6))).unwrap();
        assert_eq!(c.alpha, 0.05);
        let c = choose_alpha_for_target(0.1, 10, 10, &[0.2, 0.05, 0.1], |_| Ok((0, 0))).unwrap();
        assert!(c.zero_discovery);
        assert_eq!(c.alpha, 0.05);
        assert_eq!(c.alpha_prime, 0.0);
        assert!(choose_alpha_for_target(0.1, 10, 10, &[], |_| Ok((0, 0))).is_err());
        // Discoveries growing with alpha: alpha' tracks alpha, target 0.1 picks 0.08 or 0.09.
        let c = choose_alpha_for_target(0.12, 20, 20, &[0.02, 0.05, 0.08, 0.11], |a| {
            let k = (a * 200.0) as usize * 2;
            Ok((k, k))
        })
        .unwrap();
        assert!(c.monotone);
        assert!(c.trace.iter().all(|t| (t.3 - 0.12).abs() >= (c.alpha_prime - 0.12).abs()));
    }

    fn brute_force_k_hat(values: &[f64], alpha: f64) -> usize {
        let m = values.len();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (0..=m)
            .filter(|&k| k == 0 || sorted[k - 1] <= alpha * k as f64 / m as f64)
            .max()
            .unwrap()
    }

    proptest! {
        #[test]
        fn bh_matches_brute_force(values in prop::collection::vec(0.0f64..=1.0, 1..20), alpha in 0.001f64..0.999) {
            let (k_hat, cutoff, rejected) = bh_step_up(&values, alpha);
            prop_assert_eq!(k_hat, brute_force_k_hat(&values, alpha));
            prop_assert!(rejected.len() >= k_hat);
            prop_assert!(rejected.iter().all(|&i| values[i] <= cutoff));
        }

        #[test]
        fn bh_monotone_in_alpha(values in prop::collection::vec(0.0f64..=1.0, 1..40), a1 in 0.001f64..0.999, a2 in 0.001f64..0.999) {
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(bh_step_up(&values, lo).2.len() <= bh_step_up(&values, hi).2.len());
        }

        #[test]
        fn p_values_monotone(x in 0.0f64..40.0, y in 0.0f64..40.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(two_sided_p(hi) <= two_sided_p(lo));
            prop_assert!((0.0..=1.0).contains(&two_sided_p(lo)));
        }

        #[test]
        fn alpha_prime_is_fdp_with_plugin_counts(a in 0usize..500, b in 0usize..500, p in 1usize..300, q in 1usize..300, alpha in 0.01f64..0.5) {
            // Substituting a0 = alpha a, b0 = alpha b into the joint FDP formula.
            let (af, bf, pf, qf) = (a as f64, b as f64, p as f64, q as f64);
            let a0 = alpha * af;
            let b0 = alpha * bf;
            let sub = (a0 * (qf + bf) + (af - a0) * b0 + pf * b0) / (pf * bf + af * (qf + bf)).max(1.0);
            let ap = alpha_prime(alpha, a, b, p, q);
            prop_assert!((ap - sub).abs() <= 1e-12 * sub.max(1.0));
            prop_assert!((0.0..=1.0).contains(&ap));
        }
    }
}
