//! Formal series in the two symbols `n` and `λⁿ`, and the algebra that
//! turns scaled invariant coefficients into Lyapunov-expansion coefficients.
//!
//! A *balanced* series is Σ s_{q,p} nᑫ λⁿᵖ with s_{q,p} = 0 for q > p: the
//! polynomial degree in `n` never exceeds the exponent of λⁿ. The class is
//! closed under sum, product, reciprocal, composition with analytic
//! functions of a λⁿ-multiple, and — the one nontrivial operation — raising
//! a series with constant term 1 to the n-th power. All asymptotics of the
//! homoclinic orbit family live in this algebra, so the whole module is
//! generic over the scalar: exact rationals for identity checks, bignum
//! floats for extraction work. λ itself never appears: only the grading
//! does, which is what makes exact-rational evaluation possible.

use thiserror::Error;

use crate::hp::{least_squares, Dual, Hp, Scalar};
use rayon::prelude::*;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
}

/// Truncated balanced series: `coeffs[p][q]` is the coefficient of nᑫ λⁿᵖ,
/// for 0 ≤ q ≤ p ≤ order.
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedSeries<S: Scalar> {
    pub order: usize,
    pub coeffs: Vec<Vec<S>>,
}

impl<S: Scalar> BalancedSeries<S> {
    pub fn zero(ctx: S::Ctx, order: usize) -> Self {
        let coeffs = (0..=order)
            .map(|p| vec![S::from_i64(ctx, 0); p + 1])
            .collect();
        BalancedSeries { order, coeffs }
    }

    pub fn constant(c: S, order: usize) -> Self {
        let mut out = Self::zero(c.ctx(), order);
        out.coeffs[0][0] = c;
        out
    }

    pub fn one(ctx: S::Ctx, order: usize) -> Self {
        Self::constant(S::from_i64(ctx, 1), order)
    }

    pub fn ctx(&self) -> S::Ctx {
        self.coeffs[0][0].ctx()
    }

    /// Coefficient of nᑫ λⁿᵖ.
    pub fn get(&self, q: usize, p: usize) -> &S {
        assert!(q <= p && p <= self.order, "coefficient ({q},{p}) out of range");
        &self.coeffs[p][q]
    }

    pub fn set(&mut self, q: usize, p: usize, v: S) {
        assert!(q <= p && p <= self.order, "coefficient ({q},{p}) out of range");
        self.coeffs[p][q] = v;
    }

    fn assert_same_shape(&self, rhs: &Self) {
        assert_eq!(self.order, rhs.order, "mismatched truncation orders");
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.assert_same_shape(rhs);
        let mut out = self.clone();
        for p in 0..=self.order {
            for q in 0..=p {
                out.coeffs[p][q] = self.coeffs[p][q].add(&rhs.coeffs[p][q]);
            }
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.assert_same_shape(rhs);
        let mut out = self.clone();
        for p in 0..=self.order {
            for q in 0..=p {
                out.coeffs[p][q] = self.coeffs[p][q].sub(&rhs.coeffs[p][q]);
            }
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for p in 0..=self.order {
            for q in 0..=p {
                out.coeffs[p][q] = self.coeffs[p][q].neg();
            }
        }
        out
    }

    pub fn scale(&self, c: &S) -> Self {
        let mut out = self.clone();
        for p in 0..=self.order {
            for q in 0..=p {
                out.coeffs[p][q] = self.coeffs[p][q].mul(c);
            }
        }
        out
    }

    /// Product; balance is preserved automatically because the polynomial
    /// degrees add along with the λⁿ-grades.
    pub fn mul(&self, rhs: &Self) -> Self {
        self.assert_same_shape(rhs);
        let ctx = self.ctx();
        let mut out = Self::zero(ctx, self.order);
        for i in 0..=self.order {
            for j in 0..=self.order - i {
                let p = i + j;
                for u in 0..=i {
                    if self.coeffs[i][u].is_zero() {
                        continue;
                    }
                    for v in 0..=j {
                        let t = self.coeffs[i][u].mul(&rhs.coeffs[j][v]);
                        out.coeffs[p][u + v] = out.coeffs[p][u + v].add(&t);
                    }
                }
            }
        }
        out
    }

    /// Multiplication by λⁿᵏ: grades shift up by `k`, top grades truncate.
    pub fn shift(&self, k: usize) -> Self {
        let mut out = Self::zero(self.ctx(), self.order);
        for p in k..=self.order {
            for q in 0..=p - k {
                out.coeffs[p][q] = self.coeffs[p - k][q].clone();
            }
        }
        out
    }

    /// Multiplication by a polynomial in `n` (coefficients of n⁰, n¹, …).
    /// Requires enough degree slack — every coefficient that a balanced
    /// container cannot hold must be zero, which is asserted.
    pub fn mul_poly_n(&self, poly: &[S]) -> Self {
        let mut out = Self::zero(self.ctx(), self.order);
        for p in 0..=self.order {
            for q in 0..=p {
                if self.coeffs[p][q].is_zero() {
                    continue;
                }
                for (j, c) in poly.iter().enumerate() {
                    if c.is_zero() {
                        continue;
                    }
                    assert!(
                        q + j <= p,
                        "series not reduced enough to multiply by n^{j} at grade {p}"
                    );
                    let t = self.coeffs[p][q].mul(c);
                    out.coeffs[p][q + j] = out.coeffs[p][q + j].add(&t);
                }
            }
        }
        out
    }

    /// Multiplication by `n` itself.
    pub fn mul_n(&self) -> Self {
        let ctx = self.ctx();
        self.mul_poly_n(&[S::from_i64(ctx, 0), S::from_i64(ctx, 1)])
    }

    /// Reciprocal; the constant term must be nonzero.
    pub fn recip(&self) -> Self {
        let ctx = self.ctx();
        let a0 = &self.coeffs[0][0];
        assert!(!a0.is_zero(), "reciprocal of a series with zero constant term");
        let inv0 = S::from_i64(ctx, 1).div(a0);
        let mut out = Self::zero(ctx, self.order);
        out.coeffs[0][0] = inv0.clone();
        for p in 1..=self.order {
            // b_p = -(1/a_0) Σ_{i=1..p} a_i b_{p-i}, as polynomials in n.
            let mut acc = vec![S::from_i64(ctx, 0); p + 1];
            for i in 1..=p {
                for u in 0..=i {
                    if self.coeffs[i][u].is_zero() {
                        continue;
                    }
                    for v in 0..=p - i {
                        let t = self.coeffs[i][u].mul(&out.coeffs[p - i][v]);
                        acc[u + v] = acc[u + v].add(&t);
                    }
                }
            }
            for q in 0..=p {
                out.coeffs[p][q] = acc[q].mul(&inv0).neg();
            }
        }
        out
    }

    /// Composition `ω(self)` with an analytic function ω given by its
    /// coefficients `(ω_0, ω_1, …)`. The series must carry no grade-0 part
    /// (i.e. be a λⁿ-multiple of a balanced series), so that only finitely
    /// many ω-terms reach any truncated grade.
    pub fn analytic(&self, omega: &[S]) -> Self {
        assert!(
            self.coeffs[0].iter().all(|c| c.is_zero()),
            "analytic composition needs a series with zero grade-0 part"
        );
        let ctx = self.ctx();
        let mut out = Self::zero(ctx, self.order);
        for k in (0..omega.len().min(self.order + 2)).rev() {
            out = out.mul(self);
            out.coeffs[0][0] = out.coeffs[0][0].add(&omega[k]);
        }
        out
    }

    /// Whether every grade-p coefficient has degree at most p-1 (no term on
    /// the diagonal q = p beyond the constant).
    pub fn is_strictly_reduced(&self) -> bool {
        (1..=self.order).all(|p| self.coeffs[p][p].is_zero())
    }

    /// The n-th power of a series with constant term exactly 1, via the
    /// binomial expansion Σ_r C(n,r)(self - 1)^r with C(n,r) expanded as a
    /// degree-r polynomial in n. The remainder self - 1 must be strictly
    /// reduced (degree ≤ p-1 at grade p), or the binomial weights would
    /// overflow the balanced shape; both preconditions are asserted.
    pub fn pow_n(&self) -> Self {
        let ctx = self.ctx();
        let one = S::from_i64(ctx, 1);
        assert!(
            self.coeffs[0][0] == one && self.coeffs[0].iter().skip(1).all(|c| c.is_zero()),
            "pow_n needs constant term exactly 1"
        );
        assert!(self.is_strictly_reduced(), "pow_n base must be strictly reduced");
        let r_part = self.sub(&Self::one(ctx, self.order));
        let mut out = Self::one(ctx, self.order);
        let mut r_pow = Self::one(ctx, self.order);
        // binom holds C(n,r) as a polynomial in n.
        let mut binom = vec![one];
        for r in 1..=self.order {
            r_pow = r_pow.mul(&r_part);
            // C(n,r) = C(n,r-1) (n - (r-1)) / r.
            let rm1 = S::from_i64(ctx, (r as i64) - 1);
            let inv_r = S::ratio(ctx, 1, r as i64);
            let mut next = vec![S::from_i64(ctx, 0); binom.len() + 1];
            for (j, c) in binom.iter().enumerate() {
                next[j + 1] = next[j + 1].add(c);
                next[j] = next[j].sub(&c.mul(&rm1));
            }
            for c in next.iter_mut() {
                *c = c.mul(&inv_r);
            }
            binom = next;
            out = out.add(&r_pow.mul_poly_n(&binom));
        }
        out
    }

    /// Largest coefficient magnitude of the difference, for stabilization
    /// and round-trip checks.
    pub fn max_abs_diff(&self, rhs: &Self) -> f64 {
        self.assert_same_shape(rhs);
        let mut worst = 0.0f64;
        for p in 0..=self.order {
            for q in 0..=p {
                worst = worst.max(self.coeffs[p][q].sub(&rhs.coeffs[p][q]).abs_f64());
            }
        }
        worst
    }
}

/// Scaled invariant coefficients: the dimensionless data the Lyapunov
/// expansion is made of. The leading entries ā₀ = γ̄₀ = 1 are implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet<S: Scalar> {
    /// ā₁, ā₂, … (scaled Birkhoff invariants).
    pub a: Vec<S>,
    /// γ̄₁, γ̄₂, … (scaled homoclinic-curve coefficients).
    pub gamma: Vec<S>,
    /// ḡ₀, ḡ₁, … (scaled gluing-derivative coefficients); ḡ₀ ≠ 0 for
    /// non-degenerate data.
    pub g: Vec<S>,
}

impl<S: Scalar> CoefficientSet<S> {
    /// All-zero set (the unperturbed hyperbolic picture) with room for
    /// `order` coefficients in each family.
    pub fn zeros(ctx: S::Ctx, order: usize) -> Self {
        let z = vec![S::from_i64(ctx, 0); order];
        CoefficientSet {
            a: z.clone(),
            gamma: z.clone(),
            g: z,
        }
    }

    fn entry(v: &[S], idx: usize, ctx: S::Ctx) -> S {
        v.get(idx).cloned().unwrap_or_else(|| S::from_i64(ctx, 0))
    }

    /// ā_k for k ≥ 1.
    pub fn a_bar(&self, k: usize, ctx: S::Ctx) -> S {
        assert!(k >= 1);
        Self::entry(&self.a, k - 1, ctx)
    }

    /// γ̄_k for k ≥ 1.
    pub fn gamma_bar(&self, k: usize, ctx: S::Ctx) -> S {
        assert!(k >= 1);
        Self::entry(&self.gamma, k - 1, ctx)
    }

    /// ḡ_k for k ≥ 0.
    pub fn g_bar(&self, k: usize, ctx: S::Ctx) -> S {
        Self::entry(&self.g, k, ctx)
    }

    /// Coefficients of the multiplier function Δ̄(z) = 1 + Σ ā_k zᵏ.
    fn delta_fn(&self, ctx: S::Ctx, order: usize) -> Vec<S> {
        let mut out = vec![S::from_i64(ctx, 1)];
        for k in 1..=order {
            out.push(self.a_bar(k, ctx));
        }
        out
    }

    /// Coefficients of D̄(z) = z Δ̄'(z) = Σ k ā_k zᵏ.
    fn delta_log_derivative_fn(&self, ctx: S::Ctx, order: usize) -> Vec<S> {
        let mut out = vec![S::from_i64(ctx, 0)];
        for k in 1..=order {
            out.push(self.a_bar(k, ctx).mul(&S::from_i64(ctx, k as i64)));
        }
        out
    }

    /// Coefficients of γ̄(z) = 1 + Σ γ̄_k zᵏ.
    fn gamma_fn(&self, ctx: S::Ctx, order: usize) -> Vec<S> {
        let mut out = vec![S::from_i64(ctx, 1)];
        for k in 1..=order {
            out.push(self.gamma_bar(k, ctx));
        }
        out
    }

    /// Coefficients of the derivative of the homoclinic-curve graph,
    /// γ'(z) = Σ_{k≥1} k γ̄_k z^{k-1}.
    fn gamma_derivative_fn(&self, ctx: S::Ctx, order: usize) -> Vec<S> {
        (1..=order + 1)
            .map(|k| self.gamma_bar(k, ctx).mul(&S::from_i64(ctx, k as i64)))
            .collect()
    }

    /// Coefficients of ḡ(z) = Σ ḡ_k zᵏ.
    fn g_fn(&self, ctx: S::Ctx, order: usize) -> Vec<S> {
        (0..=order).map(|k| self.g_bar(k, ctx)).collect()
    }
}

/// The scaled first return parameter η̄_n as a balanced series, from its
/// fixed-point equation η̄ = Δ̄(λⁿ η̄ γ̄(λⁿ η̄))ⁿ γ̄(λⁿ η̄).
///
/// One iteration from the right-hand side fixes one more λⁿ-grade, so
/// `order + 1` iterations determine everything kept by the truncation; an
/// extra iteration asserts stabilization rather than assuming it.
pub fn solve_eta<S: Scalar>(set: &CoefficientSet<S>, ctx: S::Ctx, order: usize) -> BalancedSeries<S> {
    let rhs = |eta: &BalancedSeries<S>| -> BalancedSeries<S> {
        let lam_eta = eta.shift(1);
        let gamma_of = lam_eta.analytic(&set.gamma_fn(ctx, order));
        let zeta = eta.mul(&gamma_of);
        let delta_of = zeta.shift(1).analytic(&set.delta_fn(ctx, order));
        delta_of.pow_n().mul(&gamma_of)
    };
    let mut eta = BalancedSeries::one(ctx, order);
    for _ in 0..=order {
        eta = rhs(&eta);
    }
    let check = rhs(&eta);
    assert!(
        check.max_abs_diff(&eta) <= 1e-12 * (1.0 + eta.coeffs.iter().flatten().map(|c| c.abs_f64()).fold(0.0, f64::max)),
        "fixed-point iteration for the return parameter failed to stabilize"
    );
    eta
}

/// All balanced series entering the Lyapunov trace expansion, kept around
/// for tests and diagnostics.
pub struct TraceParts<S: Scalar> {
    pub eta: BalancedSeries<S>,
    pub zeta: BalancedSeries<S>,
    /// λ^{±n} Δ_nⁿ∓: the n-th powers of the scaled multiplier along the
    /// orbit, contracting (-) and expanding (+).
    pub pow_minus: BalancedSeries<S>,
    pub pow_plus: BalancedSeries<S>,
    /// n Δ'_n Δ_n⁻¹.
    pub n_dlog: BalancedSeries<S>,
    /// g(η_n) and γ'(η_n).
    pub g_eta: BalancedSeries<S>,
    pub gamma_prime_eta: BalancedSeries<S>,
}

pub fn trace_parts<S: Scalar>(set: &CoefficientSet<S>, ctx: S::Ctx, order: usize) -> TraceParts<S> {
    let eta = solve_eta(set, ctx, order);
    let lam_eta = eta.shift(1);
    let gamma_of = lam_eta.analytic(&set.gamma_fn(ctx, order));
    let zeta = eta.mul(&gamma_of);
    let lam_zeta = zeta.shift(1);
    let delta_of = lam_zeta.analytic(&set.delta_fn(ctx, order));
    let pow_plus = delta_of.pow_n();
    let pow_minus = delta_of.recip().pow_n();
    let n_dlog = lam_zeta
        .analytic(&set.delta_log_derivative_fn(ctx, order))
        .mul(&delta_of.recip())
        .mul_n();
    let g_eta = lam_eta.analytic(&set.g_fn(ctx, order));
    let gamma_prime_eta = lam_eta.analytic(&set.gamma_derivative_fn(ctx, order));
    TraceParts {
        eta,
        zeta,
        pow_minus,
        pow_plus,
        n_dlog,
        g_eta,
        gamma_prime_eta,
    }
}

/// Coefficients L_{q,p} of 2λⁿ cosh(2(n+1)LE(h_n)) = Σ L_{q,p} nᑫ λⁿᵖ,
/// packed in a balanced container.
pub fn forward_l<S: Scalar>(set: &CoefficientSet<S>, ctx: S::Ctx, order: usize) -> BalancedSeries<S> {
    let parts = trace_parts(set, ctx, order);
    let one = BalancedSeries::one(ctx, order);
    let two = S::from_i64(ctx, 2);
    // Trace of the n-step differential through the gluing map, split by
    // weight: contracting block, mixed block, expanding block.
    let part_i = parts
        .pow_minus
        .mul(&one.sub(&parts.n_dlog))
        .mul(&parts.g_eta);
    let part_ii = parts
        .n_dlog
        .scale(&two)
        .mul(&one.sub(&parts.gamma_prime_eta.mul(&parts.g_eta)));
    let part_iii = parts
        .pow_plus
        .mul(&one.add(&parts.n_dlog))
        .mul(&parts.gamma_prime_eta)
        .mul(&BalancedSeries::constant(two, order).sub(&parts.gamma_prime_eta.mul(&parts.g_eta)));
    part_i.add(&part_ii.shift(1)).add(&part_iii.shift(2))
}

/// The classical 3×3 block relating (ḡ_p, γ̄_p, ā_{p+1}) to (L_{0,p},
/// L_{1,p+1}, L_{2,p+2}) at step p ≥ 1, assembled from the contracting
/// return term alone.
///
/// Caution: the mixed return term contributes two further middle-column
/// entries (−2p ā₁g₀ and −2p² ā₁²g₀ in the lower rows), and with those
/// included the observed block is singular — its kernel is spanned by
/// (0, 1, −2ā₁), so a whole diagonal of the L-array sees (γ̄_p, ā_{p+1})
/// only through the combination 2ā₁γ̄_p + ā_{p+1}. The tests pin both
/// facts down by exact finite differences; [`invert_l`] works around the
/// degeneracy by solving for a restricted slice globally instead of
/// inverting this block step by step.
pub fn step_matrix<S: Scalar>(ctx: S::Ctx, p: usize, a1: &S, g0: &S) -> Vec<Vec<S>> {
    let i = |v: i64| S::from_i64(ctx, v);
    let p_i = p as i64;
    let a1g0 = a1.mul(g0);
    let a1a1 = a1.mul(a1);
    vec![
        vec![i(1), i(0), i(0)],
        vec![
            a1.mul(&i(p_i - 2)),
            a1g0.mul(&i(-4)),
            g0.mul(&i(-(p_i + 2))),
        ],
        vec![
            a1a1.mul(&S::ratio(ctx, p_i * p_i - 2 * p_i - 1, 2)),
            a1a1.mul(g0).mul(&i(-2 * (2 * p_i + 1))),
            a1g0.mul(&i(-(p_i + 1) * (p_i + 1))),
        ],
    ]
}

/// Closed form of the step-matrix determinant, used as an exactness check
/// on the assembled system.
pub fn step_matrix_det<S: Scalar>(ctx: S::Ctx, p: usize, a1: &S, g0: &S) -> S {
    a1.mul(a1)
        .mul(&g0.mul(g0))
        .mul(&S::from_i64(ctx, -2 * p as i64))
}

/// Index layout of the recoverable coefficient slice at a given truncation
/// order: ā₁..ā_{P−1}, then γ̄₁..γ̄_{P−2}, then ḡ₀..ḡ₃ — 2P+1 parameters.
///
/// The count is forced by the array itself. An exact-rational Jacobian
/// computation (see the tests) shows the L-array of order P has exactly
/// 2P+1 independent directions at a generic coefficient set: each λⁿ-grade
/// beyond the fifth brings three new coefficients (ḡ_d, γ̄_d, ā_{d+1}) but
/// only two new determined combinations, because a shift of the hidden
/// split 2ā₁γ̄ − ā direction is absorbed, diagonal by diagonal, into the
/// later gluing and twist data. Inversion therefore pins the gluing series
/// to a cubic and recovers the twist and curve families in full.
#[derive(Clone, Copy)]
struct Slice {
    n_a: usize,
    n_gamma: usize,
    n_g: usize,
}

impl Slice {
    fn for_order(order: usize) -> Slice {
        Slice {
            n_a: order - 1,
            n_gamma: order - 2,
            n_g: 4,
        }
    }

    fn len(self) -> usize {
        self.n_a + self.n_gamma + self.n_g
    }

    fn add_to(self, set: &mut CoefficientSet<Hp>, k: usize, v: &Hp) {
        if k < self.n_a {
            set.a[k] = &set.a[k] + v;
        } else if k < self.n_a + self.n_gamma {
            let i = k - self.n_a;
            set.gamma[i] = &set.gamma[i] + v;
        } else {
            let i = k - self.n_a - self.n_gamma;
            set.g[i] = &set.g[i] + v;
        }
    }
}

/// L-array entries in a fixed flat enumeration.
fn flatten(l: &BalancedSeries<Hp>) -> Vec<Hp> {
    let mut out = Vec::with_capacity((l.order + 1) * (l.order + 2) / 2);
    for p in 0..=l.order {
        for q in 0..=p {
            out.push(l.get(q, p).clone());
        }
    }
    out
}

/// ∂(flattened L)/∂(slice parameter k), exactly, by running the forward
/// map over dual numbers with slot k marked as the variable.
fn jacobian_column(
    set: &CoefficientSet<Hp>,
    sl: Slice,
    k: usize,
    prec: u32,
    order: usize,
) -> Vec<Hp> {
    let lift = |v: &Hp| Dual::constant(v.clone());
    let mut dset = CoefficientSet {
        a: set.a.iter().map(lift).collect::<Vec<_>>(),
        gamma: set.gamma.iter().map(lift).collect(),
        g: set.g.iter().map(lift).collect(),
    };
    let one = Hp::from_i64(prec, 1);
    if k < sl.n_a {
        dset.a[k].d = one;
    } else if k < sl.n_a + sl.n_gamma {
        dset.gamma[k - sl.n_a].d = one;
    } else {
        dset.g[k - sl.n_a - sl.n_gamma].d = one;
    }
    let l = forward_l(&dset, prec, order);
    let mut out = Vec::with_capacity((order + 1) * (order + 2) / 2);
    for p in 0..=order {
        for q in 0..=p {
            out.push(l.get(q, p).d.clone());
        }
    }
    out
}

/// Bases of the van der Corput sequences used for fit nodes and multistart
/// seeds, one per split coordinate.
const SPLIT_PRIMES: [i64; 11] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31];

/// The `j`-th term of the van der Corput radical-inverse sequence in the
/// given base, mapped to (−1, 1): deterministic, well-spread, exactly
/// representable sample points.
fn radical_inverse(prec: u32, base: i64, mut j: u64) -> Hp {
    let mut num: i64 = 0;
    let mut den: i64 = 1;
    while j > 0 && den < (1 << 40) {
        num = num * base + (j % base as u64) as i64;
        den *= base;
        j /= base as u64;
    }
    Hp::ratio(prec, 2 * num - den, den)
}

/// Exponent vectors α (one slot per split coordinate w_d, d = 1..n_w) with
/// weighted degree Σ_d d·α_d ≤ cap, in a fixed order, downward closed.
fn weighted_exponents(n_w: usize, cap: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; n_w]];
    for d in 0..n_w {
        let weight = d + 1;
        let mut grown = Vec::new();
        for e in &out {
            let used: usize = e
                .iter()
                .enumerate()
                .map(|(i, &a)| (i + 1) * a as usize)
                .sum();
            let mut a = 1u32;
            while used + weight * a as usize <= cap {
                let mut n = e.clone();
                n[d] = a;
                grown.push(n);
                a += 1;
            }
        }
        out.extend(grown);
    }
    out
}

/// Values of all monomials in `exps` at the point `w`.
fn monomial_values(exps: &[Vec<u32>], w: &[Hp], prec: u32) -> Vec<Hp> {
    let n_w = w.len();
    let pows: Vec<Vec<Hp>> = (0..n_w)
        .map(|d| {
            let top = exps.iter().map(|e| e[d]).max().unwrap_or(0) as usize;
            let mut p = vec![Hp::from_i64(prec, 1)];
            for e in 0..top {
                let next = &p[e] * &w[d];
                p.push(next);
            }
            p
        })
        .collect();
    exps.iter()
        .map(|e| {
            let mut v = Hp::from_i64(prec, 1);
            for (d, &a) in e.iter().enumerate() {
                if a > 0 {
                    v = v * &pows[d][a as usize];
                }
            }
            v
        })
        .collect()
}

/// The weighted residual rows of the array along the swept family, as
/// explicit polynomials in the split coordinates.
///
/// Fixing a choice w = (γ̄₁, …, γ̄_{order−2}) and running the diagonal sweep
/// produces the unique slice set matching the sweep's rows; the remaining
/// rows then become polynomials in w whose simultaneous zeros are exactly
/// the coefficient sets reproducing the whole array. Their monomial
/// support is tiny: every array monomial carries at most one gluing
/// factor, so the weighted degree Σ d·(power of w_d) never exceeds the
/// truncation order. That makes the system cheap to fit by sampling and
/// cheap to solve by multistart.
struct SplitSystem {
    exps: Vec<Vec<u32>>,
    /// `down[m][d]`: index of monomial m with one power of w_d removed.
    down: Vec<Vec<Option<usize>>>,
    /// Fitted coefficients per active array row (empty = row is satisfied
    /// identically by the sweep and carries no split information).
    rows: Vec<Vec<Hp>>,
}

/// Fits [`SplitSystem`] from sweeps at quasi-random nodes and validates the
/// weighted-degree cap on held-out nodes. Returns `None` when the sample
/// matrix is unusable or the cap is too small for the data.
fn fit_split_system(
    l: &BalancedSeries<Hp>,
    prec: u32,
    order: usize,
    cap: usize,
    spread: &[Hp],
) -> Option<SplitSystem> {
    let n_w = order - 2;
    let exps = weighted_exponents(n_w, cap);
    let n_mono = exps.len();
    let n_fit = n_mono + 8;
    let n_nodes = n_fit + 3;
    let data = flatten(l);
    let one = Hp::from_i64(prec, 1);
    let weights: Vec<Hp> = data.iter().map(|v| &one / (&one + v.abs())).collect();
    let mut nodes: Vec<Vec<Hp>> = Vec::with_capacity(n_nodes);
    let mut resid: Vec<Vec<Hp>> = Vec::with_capacity(n_nodes);
    for j in 0..n_nodes {
        let w: Vec<Hp> = (0..n_w)
            .map(|d| &spread[d] * &radical_inverse(prec, SPLIT_PRIMES[d], j as u64 + 1))
            .collect();
        let set = diagonal_sweep(l, prec, order, |d, _| w[d - 1].clone()).0;
        let lw = flatten(&forward_l(&set, prec, order));
        resid.push(
            lw.iter()
                .zip(&data)
                .zip(&weights)
                .map(|((x, y), wt)| (x - y) * wt)
                .collect(),
        );
        nodes.push(w);
    }
    let design: Vec<Vec<Hp>> = nodes
        .iter()
        .take(n_fit)
        .map(|w| monomial_values(&exps, w, prec))
        .collect();
    let floor = 2f64.powi(-(prec as i32) / 3);
    let mut rows = Vec::with_capacity(data.len());
    for r in 0..data.len() {
        let rhs: Vec<Hp> = resid.iter().take(n_fit).map(|f| f[r].clone()).collect();
        if rhs.iter().map(Hp::abs_f64).fold(0.0f64, f64::max) <= floor {
            rows.push(Vec::new());
            continue;
        }
        let (c, _) = least_squares(&design, &rhs)?;
        rows.push(c);
    }
    // Degree-cap check: the fit must predict fresh nodes to solver
    // accuracy, otherwise monomials are missing and the caller must retry
    // with a larger cap.
    let check = 2f64.powi(-(prec as i32) / 4);
    for j in n_fit..n_nodes {
        let mv = monomial_values(&exps, &nodes[j], prec);
        for (r, c) in rows.iter().enumerate() {
            if c.is_empty() {
                continue;
            }
            let mut v = Hp::from_i64(prec, 0);
            for (k, ck) in c.iter().enumerate() {
                v = v + ck * &mv[k];
            }
            if (&v - &resid[j][r]).abs_f64() > check * (1.0 + resid[j][r].abs_f64()) {
                return None;
            }
        }
    }
    let index: std::collections::HashMap<Vec<u32>, usize> =
        exps.iter().cloned().zip(0..).collect();
    let down = exps
        .iter()
        .map(|e| {
            (0..n_w)
                .map(|d| {
                    if e[d] == 0 {
                        None
                    } else {
                        let mut f = e.clone();
                        f[d] -= 1;
                        Some(index[&f])
                    }
                })
                .collect()
        })
        .collect();
    Some(SplitSystem { exps, down, rows })
}

/// All distinct roots of the split system reachable from the given seeds,
/// by damped Gauss–Newton at polynomial-evaluation cost.
fn solve_split_system(
    sys: &SplitSystem,
    prec: u32,
    n_w: usize,
    seeds: &[Vec<Hp>],
) -> Vec<Vec<Hp>> {
    let accept = 2f64.powi(-(prec as i32) / 2);
    let active: Vec<&Vec<Hp>> = sys.rows.iter().filter(|c| !c.is_empty()).collect();
    if active.is_empty() {
        // Nothing constrains the splits (can only happen for degenerate
        // data); report no roots and let the caller fall back.
        return Vec::new();
    }
    let eval = |w: &[Hp]| -> (Vec<Hp>, Vec<Hp>, f64, f64) {
        let mv = monomial_values(&sys.exps, w, prec);
        let f: Vec<Hp> = active
            .iter()
            .map(|c| {
                let mut v = Hp::from_i64(prec, 0);
                for (k, ck) in c.iter().enumerate() {
                    v = v + ck * &mv[k];
                }
                v
            })
            .collect();
        let fmax = f.iter().map(Hp::abs_f64).fold(0.0f64, f64::max);
        let fss = f.iter().map(|v| v.abs_f64().powi(2)).sum::<f64>();
        (mv, f, fmax, fss)
    };
    let mut roots: Vec<Vec<Hp>> = Vec::new();
    'seed: for seed in seeds {
        let mut w = seed.clone();
        let (mut mv, mut f, mut fmax, mut fss) = eval(&w);
        let f0 = fmax.max(1e-300);
        let (mut mu, mut nu) = (1e-6f64, 2.0f64);
        let mut converged = fmax <= accept;
        for it in 0..40 {
            if converged {
                break;
            }
            if it >= 12 && fmax > 1e-3 * f0 {
                continue 'seed;
            }
            let jrows: Vec<Vec<Hp>> = active
                .iter()
                .map(|c| {
                    (0..n_w)
                        .map(|d| {
                            let mut v = Hp::from_i64(prec, 0);
                            for (k, ck) in c.iter().enumerate() {
                                let a = sys.exps[k][d];
                                if a > 0 {
                                    let m = sys.down[k][d].expect("support is downward closed");
                                    v = v + ck * &mv[m] * Hp::from_i64(prec, a as i64);
                                }
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            let col_norm: Vec<f64> = (0..n_w)
                .map(|d| {
                    jrows
                        .iter()
                        .map(|r| r[d].abs_f64().powi(2))
                        .sum::<f64>()
                        .sqrt()
                        .max(1e-30)
                })
                .collect();
            let mut accepted = false;
            for _ in 0..12 {
                let mut rows = jrows.clone();
                let mut rhs: Vec<Hp> = f.iter().map(|v| v.neg()).collect();
                for (d, n) in col_norm.iter().enumerate() {
                    let mut row = vec![Hp::from_i64(prec, 0); n_w];
                    row[d] = Hp::from_f64(prec, mu.sqrt() * n);
                    rows.push(row);
                    rhs.push(Hp::from_i64(prec, 0));
                }
                let Some((step, _)) = least_squares(&rows, &rhs) else {
                    continue 'seed;
                };
                let trial: Vec<Hp> = w.iter().zip(&step).map(|(a, b)| a + b).collect();
                let (tmv, tf, tmax, tss) = eval(&trial);
                if tss < fss {
                    mu = (mu / 3.0).max(1e-18);
                    nu = 2.0;
                    w = trial;
                    mv = tmv;
                    f = tf;
                    fmax = tmax;
                    fss = tss;
                    accepted = true;
                    break;
                }
                mu *= nu;
                nu *= 2.0;
                if mu > 1e12 {
                    break;
                }
            }
            converged = fmax <= accept;
            if !accepted && !converged {
                continue 'seed;
            }
        }
        if converged {
            let wf: Vec<f64> = w.iter().map(Hp::to_f64).collect();
            let scale = 1.0 + wf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dup = roots.iter().any(|r| {
                r.iter()
                    .zip(&wf)
                    .all(|(a, b)| (a.to_f64() - b).abs() <= 1e-8 * scale)
            });
            if !dup {
                roots.push(w);
                if roots.len() >= 16 {
                    break;
                }
            }
        }
    }
    roots
}

/// Diagonal sweep: builds the unique slice set whose array matches the
/// data on rows (0,d) and (1,d+1) for each grade d, given a rule for the
/// split. At stage d the residuals of those two rows against the partial
/// set yield ḡ_d and the combination u_d = 2ā₁γ̄_d + ā_{d+1} in closed form
/// (their coefficients are 1 and 0, (d−2)ā₁ and −(d+2)ḡ₀, free of
/// mixed-return corrections); `gamma_of(d, u_d)` then chooses γ̄_d. Returns
/// the set and the u values.
fn diagonal_sweep(
    l: &BalancedSeries<Hp>,
    prec: u32,
    order: usize,
    gamma_of: impl Fn(usize, &Hp) -> Hp,
) -> (CoefficientSet<Hp>, Vec<Hp>) {
    let g0 = l.get(0, 0).clone();
    let a1 = -(l.get(1, 1) / (Hp::from_i64(prec, 2) * &g0));
    let two_a1 = Hp::from_i64(prec, 2) * &a1;
    let mut set = CoefficientSet::zeros(prec, order);
    set.g[0] = g0.clone();
    set.a[0] = a1.clone();
    let mut us = Vec::with_capacity(order - 2);
    for d in 1..=order - 2 {
        let base = forward_l(&set, prec, d + 1);
        let r1 = l.get(1, d + 1) - base.get(1, d + 1);
        let gd = if d <= 3 {
            l.get(0, d) - base.get(0, d)
        } else {
            // Beyond the cubic range the gluing coefficient is pinned at
            // zero; row (0, d) instead joins the split system.
            Hp::from_i64(prec, 0)
        };
        let k1 = Hp::from_i64(prec, d as i64 - 2) * &a1;
        let u1 = Hp::from_i64(prec, -(d as i64 + 2)) * &g0;
        let u = (r1 - &k1 * &gd) / u1;
        let w = gamma_of(d, &u);
        set.a[d] = &u - &two_a1 * &w;
        set.gamma[d - 1] = w;
        if d <= 3 {
            set.g[d] = gd;
        }
        us.push(u);
    }
    (set, us)
}

/// Weighted max-norm distance between the array of `set` and the data —
/// the acceptance measure shared by all inversion stages.
fn weighted_residual_max(
    l: &BalancedSeries<Hp>,
    set: &CoefficientSet<Hp>,
    prec: u32,
    order: usize,
) -> f64 {
    let one = Hp::from_i64(prec, 1);
    flatten(&forward_l(set, prec, order))
        .iter()
        .zip(&flatten(l))
        .map(|(x, y)| ((x - y) / (&one + y.abs())).abs_f64())
        .fold(0.0f64, f64::max)
}

/// Recovers the scaled coefficient set from the Lyapunov-expansion array.
///
/// The array determines the slice described on [`Slice`]: ā up to order−1,
/// γ̄ up to order−2, and the gluing coefficients ḡ₀..ḡ₃; data is assumed to
/// come from a set supported on that slice (and inversion returns such a
/// set). Truncation order at least 5 is required — below that the slice no
/// longer fits.
///
/// Strategy: a closed-form diagonal sweep pins everything except the
/// splits of the combinations u_d = 2ā₁γ̄_d + ā_{d+1}, which the array sees
/// only through a small polynomial system ([`SplitSystem`]); that system
/// is fitted exactly and its real roots enumerated by multistart, each
/// root verified against the full array. If the fit is unusable the solver
/// falls back to Levenberg–Marquardt over the whole slice from several
/// split attributions. One caveat is fundamental: the determining
/// equations are polynomial, and distinct real coefficient sets can
/// reproduce the same array exactly. When several such branches are found
/// this returns the one with the smallest largest coefficient — spurious
/// branches in practice carry outsized compensating coefficients — but
/// callers holding data from a concrete geometry and needing a specific
/// branch must disambiguate with outside information (a longer expansion,
/// or bounds on the invariants).
pub fn invert_l(
    l: &BalancedSeries<Hp>,
    degeneracy_tol: f64,
) -> Result<CoefficientSet<Hp>, SeriesError> {
    let prec = l.ctx();
    let order = l.order;
    if order < 5 {
        return Err(SeriesError::Inconsistent(format!(
            "inversion needs truncation order at least 5, got {order}"
        )));
    }
    let g0 = l.get(0, 0).clone();
    if g0.abs_f64() <= degeneracy_tol {
        return Err(SeriesError::Degenerate(
            "leading gluing coefficient vanishes; transversality is lost".into(),
        ));
    }
    let a1 = -(l.get(1, 1) / (Hp::from_i64(prec, 2) * &g0));
    if a1.abs_f64() <= degeneracy_tol {
        return Err(SeriesError::Degenerate(
            "first twist coefficient vanishes (degeneracy condition)".into(),
        ));
    }
    let accept = 2f64.powi(-(prec as i32) / 2);
    let n_w = order - 2;
    let two_a1 = Hp::from_i64(prec, 2) * &a1;

    // Stage one: fit the split system and enumerate its roots. Seeds: the
    // plain attributions t·u_d/(2ā₁), plus quasi-random points spanning a
    // data-sized box (the u values bound how large a tame γ̄_d can be).
    let u0 = diagonal_sweep(l, prec, order, |_, _| Hp::from_i64(prec, 0)).1;
    let ratio0: Vec<Hp> = u0.iter().map(|u| u / &two_a1).collect();
    let spread: Vec<Hp> = ratio0
        .iter()
        .map(|v| Hp::from_f64(prec, 4.0 * 1.0f64.max(v.abs_f64())))
        .collect();
    let sys = fit_split_system(l, prec, order, order, &spread)
        .or_else(|| fit_split_system(l, prec, order, order + 2, &spread));
    if let Some(sys) = sys {
        let mut seeds: Vec<Vec<Hp>> = vec![vec![Hp::from_i64(prec, 0); n_w]];
        for (num, den) in [(1i64, 1i64), (-1, 1), (1, 2), (2, 1)] {
            let t = Hp::ratio(prec, num, den);
            seeds.push(ratio0.iter().map(|v| &t * v).collect());
        }
        for j in 0..56u64 {
            seeds.push(
                (0..n_w)
                    .map(|d| &spread[d] * &radical_inverse(prec, SPLIT_PRIMES[d], 101 + j))
                    .collect(),
            );
        }
        let mut found: Vec<(f64, CoefficientSet<Hp>)> = Vec::new();
        for w in solve_split_system(&sys, prec, n_w, &seeds) {
            let set = diagonal_sweep(l, prec, order, |d, _| w[d - 1].clone()).0;
            if weighted_residual_max(l, &set, prec, order) <= accept {
                found.push((coefficient_sup(&set), set));
            }
        }
        found.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, mut set) in found {
            let fmax = lm_refine(l, &mut set, prec, order)?;
            if fmax <= accept {
                return Ok(set);
            }
        }
    }

    // Stage two (fallback): Levenberg–Marquardt over the full slice from a
    // short list of split attributions — put no mass, all mass, half mass,
    // … of u_d on γ̄_d. Among branches that reach the floor the tame one is
    // preferred, as above.
    let mut candidates: Vec<(f64, CoefficientSet<Hp>)> = Vec::new();
    let mut stalled = f64::INFINITY;
    for (num, den) in [(0i64, 1i64), (1, 1), (-1, 1), (1, 2), (2, 1)] {
        let t = Hp::ratio(prec, num, den);
        let (mut set, _) = diagonal_sweep(l, prec, order, |_, u| &t * u / &two_a1);
        let fmax = lm_refine(l, &mut set, prec, order)?;
        if fmax <= accept {
            candidates.push((coefficient_sup(&set), set));
        } else {
            stalled = stalled.min(fmax);
        }
    }
    if let Some((_, set)) = candidates.into_iter().min_by(|x, y| x.0.total_cmp(&y.0)) {
        return Ok(set);
    }
    Err(SeriesError::Inconsistent(format!(
        "inversion stalled at residual {stalled:.3e}"
    )))
}

/// Largest coefficient magnitude in the set — the branch-selection size.
fn coefficient_sup(set: &CoefficientSet<Hp>) -> f64 {
    set.a
        .iter()
        .chain(&set.gamma)
        .chain(&set.g)
        .map(Hp::abs_f64)
        .fold(0.0f64, f64::max)
}

/// Levenberg–Marquardt refinement of `set` against the array `l`, rows
/// weighted by 1/(1 + |data|) so every order contributes evenly. Returns
/// the weighted max-norm residual it reached; an error means the damped
/// system itself is unsolvable, not merely a bad starting point.
fn lm_refine(
    l: &BalancedSeries<Hp>,
    set: &mut CoefficientSet<Hp>,
    prec: u32,
    order: usize,
) -> Result<f64, SeriesError> {
    let sl = Slice::for_order(order);
    let n_par = sl.len();
    let data = flatten(l);
    let m = data.len();
    let one = Hp::from_i64(prec, 1);
    let weights: Vec<Hp> = data.iter().map(|v| &one / (&one + v.abs())).collect();
    let target = 2f64.powi(-(prec as i32) * 3 / 4);
    let resid_of = |s: &CoefficientSet<Hp>| -> (Vec<Hp>, f64, f64) {
        let f: Vec<Hp> = flatten(&forward_l(s, prec, order))
            .iter()
            .zip(&data)
            .zip(&weights)
            .map(|((x, y), w)| (x - y) * w)
            .collect();
        let fmax = f.iter().map(Hp::abs_f64).fold(0.0f64, f64::max);
        let fss = f.iter().map(|v| v.abs_f64().powi(2)).sum::<f64>();
        (f, fmax, fss)
    };
    let (mut f, mut fmax, mut fss) = resid_of(set);
    let (mut mu, mut nu) = (1e-3f64, 2.0f64);
    let mut best_ss = fss;
    let mut since_best = 0usize;
    for _ in 0..150 {
        // Progress from a basin's interior is geometric; a long stretch of
        // nearly flat steps means a local minimum or a crawl along a
        // branch boundary, and the caller's other starts are the better
        // use of the budget.
        if fmax <= target || since_best > 25 {
            break;
        }
        let cols: Vec<Vec<Hp>> = (0..n_par)
            .into_par_iter()
            .map(|k| {
                jacobian_column(set, sl, k, prec, order)
                    .iter()
                    .zip(&weights)
                    .map(|(v, w)| v * w)
                    .collect()
            })
            .collect();
        let col_norm: Vec<f64> = cols
            .iter()
            .map(|c| {
                c.iter()
                    .map(|v| v.abs_f64().powi(2))
                    .sum::<f64>()
                    .sqrt()
                    .max(1e-30)
            })
            .collect();
        let mut accepted = false;
        for _ in 0..25 {
            // Damped normal equations in square-root form:
            // [J; √μ D] δ = [−f; 0].
            let mut rows: Vec<Vec<Hp>> = (0..m)
                .map(|r| (0..n_par).map(|c| cols[c][r].clone()).collect())
                .collect();
            let mut rhs: Vec<Hp> = f.iter().map(|v| v.neg()).collect();
            for (k, d) in col_norm.iter().enumerate() {
                let mut row = vec![Hp::from_i64(prec, 0); n_par];
                row[k] = Hp::from_f64(prec, mu.sqrt() * d);
                rows.push(row);
                rhs.push(Hp::from_i64(prec, 0));
            }
            let (step, _cond) = least_squares(&rows, &rhs).ok_or_else(|| {
                SeriesError::Inconsistent(
                    "expansion array does not determine a coefficient slice".into(),
                )
            })?;
            // Gain ratio: achieved reduction over the linear model's
            // prediction steers the damping (Nielsen's update).
            let mut pss = 0.0f64;
            for i in 0..m {
                let mut v = f[i].clone();
                for (k, s) in step.iter().enumerate() {
                    v = v + &cols[k][i] * s;
                }
                pss += v.abs_f64().powi(2);
            }
            let mut trial = set.clone();
            for (k, dv) in step.iter().enumerate() {
                sl.add_to(&mut trial, k, dv);
            }
            let (tf, tmax, tss) = resid_of(&trial);
            if tss < fss {
                let predicted = (fss - pss).max(f64::MIN_POSITIVE);
                let gain = (fss - tss) / predicted;
                let factor = (1.0 - (2.0 * gain - 1.0).powi(3)).clamp(1.0 / 3.0, 2.0);
                mu = (mu * factor).max(1e-18);
                nu = 2.0;
                *set = trial;
                f = tf;
                fmax = tmax;
                fss = tss;
                accepted = true;
                break;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e15 {
                break;
            }
        }
        if !accepted {
            break;
        }
        if fss < 0.25 * best_ss {
            best_ss = fss;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    Ok(fmax)
}
