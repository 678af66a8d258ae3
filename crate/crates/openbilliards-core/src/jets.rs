//! Truncated Taylor-series arithmetic in one and two variables.
//!
//! Jets are the crate's substitute for symbolic differentiation: boundary
//! curves, chord lengths, and collision maps are all expanded to a finite
//! order around a base point, and every geometric derivative downstream is
//! read off a jet coefficient. Coefficients are stored in Taylor form
//! (`c_k = f⁽ᵏ⁾/k!`), so products and compositions are plain polynomial
//! operations with truncation.

use crate::hp::Hp;

/// Univariate truncated Taylor series. `c[k]` multiplies `uᵏ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet1 {
    pub c: Vec<Hp>,
}

impl Jet1 {
    pub fn zero(order: usize, prec: u32) -> Self {
        Jet1 {
            c: vec![Hp::zero(prec); order + 1],
        }
    }

    pub fn constant(value: Hp, order: usize) -> Self {
        let prec = value.prec();
        let mut j = Jet1::zero(order, prec);
        j.c[0] = value;
        j
    }

    /// The series `c0 + u`.
    pub fn variable(c0: Hp, order: usize) -> Self {
        let prec = c0.prec();
        let mut j = Jet1::constant(c0, order);
        if order >= 1 {
            j.c[1] = Hp::one(prec);
        }
        j
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn prec(&self) -> u32 {
        self.c[0].prec()
    }

    pub fn truncate(&self, order: usize) -> Jet1 {
        assert!(order <= self.order());
        Jet1 {
            c: self.c[..=order].to_vec(),
        }
    }

    pub fn add(&self, rhs: &Jet1) -> Jet1 {
        assert_eq!(self.order(), rhs.order());
        Jet1 {
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Jet1) -> Jet1 {
        assert_eq!(self.order(), rhs.order());
        Jet1 {
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn neg(&self) -> Jet1 {
        Jet1 {
            c: self.c.iter().map(|a| -a).collect(),
        }
    }

    pub fn scale(&self, s: &Hp) -> Jet1 {
        Jet1 {
            c: self.c.iter().map(|a| a * s).collect(),
        }
    }

    pub fn mul(&self, rhs: &Jet1) -> Jet1 {
        assert_eq!(self.order(), rhs.order());
        let n = self.order();
        let prec = self.prec().max(rhs.prec());
        let mut c = vec![Hp::zero(prec); n + 1];
        for i in 0..=n {
            if self.c[i].is_zero() {
                continue;
            }
            for j in 0..=n - i {
                c[i + j] = &c[i + j] + &self.c[i] * &rhs.c[j];
            }
        }
        Jet1 { c }
    }

    pub fn square(&self) -> Jet1 {
        self.mul(self)
    }

    /// Composes a plain Taylor coefficient list `outer` with `self`, whose
    /// constant term must vanish. Horner evaluation in jet arithmetic.
    pub fn compose_series(outer: &[Hp], inner: &Jet1) -> Jet1 {
        assert!(inner.c[0].is_zero(), "inner jet must have zero constant term");
        let order = inner.order();
        // Linear inner (f(c*u)): coefficient scaling, no Horner loop.
        if order >= 1 && inner.c.iter().skip(2).all(|c| c.is_zero()) {
            let c1 = &inner.c[1];
            let prec = c1.prec();
            let mut out = Jet1::zero(order, prec);
            let mut pow = Hp::one(prec);
            for (k, coef) in outer.iter().take(order + 1).enumerate() {
                if k > 0 {
                    pow = &pow * c1;
                }
                out.c[k] = coef * &pow;
            }
            return out;
        }
        let mut acc = Jet1::constant(outer.last().unwrap().clone(), order);
        for k in (0..outer.len() - 1).rev() {
            acc = acc.mul(inner);
            acc.c[0] = &acc.c[0] + &outer[k];
        }
        acc
    }

    /// Composition `self ∘ inner` (the constant term of `inner` must vanish).
    pub fn compose(&self, inner: &Jet1) -> Jet1 {
        Jet1::compose_series(&self.c, inner)
    }

    /// Reciprocal; the constant term must be nonzero. Direct coefficient
    /// recursion, quadratic in the order.
    pub fn recip(&self) -> Jet1 {
        let n = self.order();
        let prec = self.prec();
        let c0 = &self.c[0];
        assert!(!c0.is_zero(), "reciprocal of a jet with zero constant term");
        let r0 = c0.recip();
        let mut out = Jet1::zero(n, prec);
        out.c[0] = r0.clone();
        for k in 1..=n {
            // b_k = -(1/c0) * sum_{j=1..k} c_j b_{k-j}
            let mut acc = Hp::zero(prec);
            for j in 1..=k {
                if !self.c[j].is_zero() {
                    acc = acc + &self.c[j] * &out.c[k - j];
                }
            }
            out.c[k] = -(acc * &r0);
        }
        out
    }

    pub fn div(&self, rhs: &Jet1) -> Jet1 {
        self.mul(&rhs.recip())
    }

    /// Square root; the constant term must be positive. Direct coefficient
    /// recursion, quadratic in the order.
    pub fn sqrt(&self) -> Jet1 {
        let n = self.order();
        let prec = self.prec();
        let r0 = self.c[0].sqrt();
        let two_r0 = Hp::from_i64(prec, 2) * &r0;
        let mut out = Jet1::zero(n, prec);
        out.c[0] = r0;
        for k in 1..=n {
            // r_k = (c_k - sum_{j=1..k-1} r_j r_{k-j}) / (2 r_0)
            let mut acc = self.c[k].clone();
            for j in 1..k {
                acc = acc - &out.c[j] * &out.c[k - j];
            }
            out.c[k] = acc / &two_r0;
        }
        out
    }

    /// Derivative d/du (order drops by one).
    pub fn derivative(&self) -> Jet1 {
        let prec = self.prec();
        let n = self.order();
        if n == 0 {
            return Jet1::zero(0, prec);
        }
        let mut c = Vec::with_capacity(n);
        for k in 1..=n {
            c.push(&self.c[k] * Hp::from_i64(prec, k as i64));
        }
        Jet1 { c }
    }

    /// Antiderivative with zero constant term (order grows by one).
    pub fn antiderivative(&self) -> Jet1 {
        let prec = self.prec();
        let mut c = Vec::with_capacity(self.c.len() + 1);
        c.push(Hp::zero(prec));
        for (k, a) in self.c.iter().enumerate() {
            c.push(a / Hp::from_i64(prec, (k + 1) as i64));
        }
        Jet1 { c }
    }

    pub fn eval(&self, u: &Hp) -> Hp {
        let mut acc = self.c.last().unwrap().clone();
        for k in (0..self.c.len() - 1).rev() {
            acc = acc * u + &self.c[k];
        }
        acc
    }

    /// Functional inverse of a jet with zero constant term and invertible
    /// linear term: returns `g` with `self(g(u)) = u + O(u^{K+1})`.
    pub fn revert(&self) -> Jet1 {
        assert!(self.c[0].is_zero(), "can only revert a jet fixing the origin");
        let n = self.order();
        let prec = self.prec();
        assert!(!self.c[1].is_zero(), "linear term must be invertible");
        let ident = {
            let mut j = Jet1::zero(n, prec);
            if n >= 1 {
                j.c[1] = Hp::one(prec);
            }
            j
        };
        let deriv_padded = {
            // f′ padded back to order n so compositions line up.
            let mut d = self.derivative().c;
            d.push(Hp::zero(prec));
            Jet1 { c: d }
        };
        let mut g = ident.scale(&self.c[1].recip());
        // Newton: g ← g − (f∘g − id)/(f′∘g); order of contact doubles per step.
        let steps = (usize::BITS - n.leading_zeros()) as usize + 1;
        for _ in 0..steps {
            let fg = self.compose(&g).sub(&ident);
            let fpg = deriv_padded.compose(&g);
            g = g.sub(&fg.div(&fpg));
        }
        g
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.c.iter().map(|a| a.abs().to_f64()).fold(0.0, f64::max)
    }
}

/// Taylor coefficients of `sin(t0 + z)` and `cos(t0 + z)` in `z`.
pub fn sin_cos_series(t0: &Hp, order: usize) -> (Vec<Hp>, Vec<Hp>) {
    let prec = t0.prec();
    let mut s = t0.sin();
    let mut c = t0.cos();
    let mut sin_c = Vec::with_capacity(order + 1);
    let mut cos_c = Vec::with_capacity(order + 1);
    let mut fact = Hp::one(prec);
    for k in 0..=order {
        if k > 0 {
            fact = fact * Hp::from_i64(prec, k as i64);
            // Rotate: d/dz (sin, cos) = (cos, −sin).
            let new_s = c.clone();
            let new_c = -s.clone();
            s = new_s;
            c = new_c;
        }
        sin_c.push(&s / &fact);
        cos_c.push(&c / &fact);
    }
    (sin_c, cos_c)
}

/// `(sin t, cos t)` for a jet `t` whose constant term is arbitrary.
pub fn jet_sin_cos(t: &Jet1) -> (Jet1, Jet1) {
    let order = t.order();
    let mut dt = t.clone();
    let t0 = std::mem::replace(&mut dt.c[0], Hp::zero(t.prec()));
    let (s_ser, c_ser) = sin_cos_series(&t0, order);
    (
        Jet1::compose_series(&s_ser, &dt),
        Jet1::compose_series(&c_ser, &dt),
    )
}

/// Bivariate truncated Taylor series up to total degree `K`.
///
/// Coefficients are stored degree-by-degree: the monomial `u^{d−j} v^j` of
/// total degree `d` lives at index `d(d+1)/2 + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub order: usize,
    pub c: Vec<Hp>,
}

pub fn jet2_len(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

#[inline]
pub fn jet2_idx(degree: usize, j: usize) -> usize {
    degree * (degree + 1) / 2 + j
}

impl Jet2 {
    pub fn zero(order: usize, prec: u32) -> Self {
        Jet2 {
            order,
            c: vec![Hp::zero(prec); jet2_len(order)],
        }
    }

    pub fn constant(value: Hp, order: usize) -> Self {
        let mut j = Jet2::zero(order, value.prec());
        j.c[0] = value;
        j
    }

    /// The coordinate jet `c0 + u` (first variable).
    pub fn var_u(c0: Hp, order: usize) -> Self {
        let prec = c0.prec();
        let mut j = Jet2::constant(c0, order);
        j.c[jet2_idx(1, 0)] = Hp::one(prec);
        j
    }

    /// The coordinate jet `c0 + v` (second variable).
    pub fn var_v(c0: Hp, order: usize) -> Self {
        let prec = c0.prec();
        let mut j = Jet2::constant(c0, order);
        j.c[jet2_idx(1, 1)] = Hp::one(prec);
        j
    }

    pub fn prec(&self) -> u32 {
        self.c[0].prec()
    }

    pub fn get(&self, i: usize, j: usize) -> &Hp {
        &self.c[jet2_idx(i + j, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Hp) {
        self.c[jet2_idx(i + j, j)] = v;
    }

    pub fn add(&self, rhs: &Jet2) -> Jet2 {
        assert_eq!(self.order, rhs.order);
        Jet2 {
            order: self.order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, rhs: &Jet2) -> Jet2 {
        assert_eq!(self.order, rhs.order);
        Jet2 {
            order: self.order,
            c: self.c.iter().zip(&rhs.c).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn neg(&self) -> Jet2 {
        Jet2 {
            order: self.order,
            c: self.c.iter().map(|a| -a).collect(),
        }
    }

    pub fn scale(&self, s: &Hp) -> Jet2 {
        Jet2 {
            order: self.order,
            c: self.c.iter().map(|a| a * s).collect(),
        }
    }

    pub fn mul(&self, rhs: &Jet2) -> Jet2 {
        assert_eq!(self.order, rhs.order);
        let k = self.order;
        let prec = self.prec().max(rhs.prec());
        let mut out = Jet2::zero(k, prec);
        for d1 in 0..=k {
            for j1 in 0..=d1 {
                let a = &self.c[jet2_idx(d1, j1)];
                if a.is_zero() {
                    continue;
                }
                for d2 in 0..=k - d1 {
                    for j2 in 0..=d2 {
                        let b = &rhs.c[jet2_idx(d2, j2)];
                        if b.is_zero() {
                            continue;
                        }
                        let idx = jet2_idx(d1 + d2, j1 + j2);
                        out.c[idx] = &out.c[idx] + a * b;
                    }
                }
            }
        }
        out
    }

    pub fn truncate(&self, order: usize) -> Jet2 {
        assert!(order <= self.order);
        Jet2 {
            order,
            c: self.c[..jet2_len(order)].to_vec(),
        }
    }

    /// Pads with zero coefficients up to a higher order.
    pub fn pad(&self, order: usize) -> Jet2 {
        assert!(order >= self.order);
        let mut c = self.c.clone();
        c.resize(jet2_len(order), Hp::zero(self.prec()));
        Jet2 { order, c }
    }

    pub fn partial_u(&self) -> Jet2 {
        let prec = self.prec();
        let mut out = Jet2::zero(self.order, prec);
        for d in 1..=self.order {
            for j in 0..d {
                // ∂/∂u of u^{d−j} v^j.
                let coeff = &self.c[jet2_idx(d, j)] * Hp::from_i64(prec, (d - j) as i64);
                out.c[jet2_idx(d - 1, j)] = coeff;
            }
        }
        out
    }

    pub fn partial_v(&self) -> Jet2 {
        let prec = self.prec();
        let mut out = Jet2::zero(self.order, prec);
        for d in 1..=self.order {
            for j in 1..=d {
                let coeff = &self.c[jet2_idx(d, j)] * Hp::from_i64(prec, j as i64);
                out.c[jet2_idx(d - 1, j - 1)] = coeff;
            }
        }
        out
    }

    /// Embeds a univariate jet as a function of the first variable.
    pub fn from_jet1_u(j: &Jet1, order: usize) -> Jet2 {
        let mut out = Jet2::zero(order, j.prec());
        for (k, a) in j.c.iter().enumerate().take(order + 1) {
            out.c[jet2_idx(k, 0)] = a.clone();
        }
        out
    }

    /// Embeds a univariate jet as a function of the second variable.
    pub fn from_jet1_v(j: &Jet1, order: usize) -> Jet2 {
        let mut out = Jet2::zero(order, j.prec());
        for (k, a) in j.c.iter().enumerate().take(order + 1) {
            out.c[jet2_idx(k, k)] = a.clone();
        }
        out
    }

    /// Restriction `f(u, 0)` as a univariate jet.
    pub fn restrict_v0(&self) -> Jet1 {
        Jet1 {
            c: (0..=self.order)
                .map(|d| self.c[jet2_idx(d, 0)].clone())
                .collect(),
        }
    }

    /// Restriction `f(0, v)` as a univariate jet.
    pub fn restrict_u0(&self) -> Jet1 {
        Jet1 {
            c: (0..=self.order)
                .map(|d| self.c[jet2_idx(d, d)].clone())
                .collect(),
        }
    }

    /// Substitutes `(u, v) ← (p, q)`; both inner jets must have zero constant
    /// term.
    pub fn compose_pair(&self, p: &Jet2, q: &Jet2) -> Jet2 {
        assert!(p.c[0].is_zero() && q.c[0].is_zero());
        assert_eq!(p.order, self.order);
        assert_eq!(q.order, self.order);
        let k = self.order;
        let prec = self.prec().max(p.prec()).max(q.prec());
        // Powers of p and q up to degree k; p^i has no terms below degree i
        // (zero constant), so monomials with i + j > k contribute nothing.
        let one = Jet2::constant(Hp::one(prec), k);
        let mut p_pows = vec![one.clone()];
        for i in 1..=k {
            p_pows.push(p_pows[i - 1].mul(p));
        }
        let mut q_pows = vec![one];
        for j in 1..=k {
            q_pows.push(q_pows[j - 1].mul(q));
        }
        let mut out = Jet2::zero(k, prec);
        for d in 0..=k {
            for j in 0..=d {
                let a = &self.c[jet2_idx(d, j)];
                if a.is_zero() {
                    continue;
                }
                let term = p_pows[d - j].mul(&q_pows[j]).scale(a);
                out = out.add(&term);
            }
        }
        out
    }

    /// Composes a univariate Taylor coefficient list with a zero-constant
    /// bivariate inner jet (Horner).
    pub fn compose_series(outer: &[Hp], inner: &Jet2) -> Jet2 {
        assert!(inner.c[0].is_zero());
        let mut acc = Jet2::constant(outer.last().unwrap().clone(), inner.order);
        for k in (0..outer.len() - 1).rev() {
            acc = acc.mul(inner);
            acc.c[0] = &acc.c[0] + &outer[k];
        }
        acc
    }

    pub fn recip(&self) -> Jet2 {
        let prec = self.prec();
        let c0 = self.c[0].clone();
        assert!(!c0.is_zero());
        let mut b = self.scale(&c0.recip());
        b.c[0] = Hp::zero(prec);
        let mut series = Vec::with_capacity(self.order + 1);
        let mut sign = Hp::one(prec);
        for _ in 0..=self.order {
            series.push(sign.clone());
            sign = -sign;
        }
        Jet2::compose_series(&series, &b).scale(&c0.recip())
    }

    pub fn sqrt(&self) -> Jet2 {
        let prec = self.prec();
        let c0 = self.c[0].clone();
        let mut b = self.scale(&c0.recip());
        b.c[0] = Hp::zero(prec);
        let mut series = Vec::with_capacity(self.order + 1);
        let mut coeff = Hp::one(prec);
        series.push(coeff.clone());
        for k in 0..self.order {
            let k = k as i64;
            coeff = coeff * Hp::ratio(prec, 1 - 2 * k, 2 * (k + 1));
            series.push(coeff.clone());
        }
        Jet2::compose_series(&series, &b).scale(&c0.sqrt())
    }

    pub fn eval(&self, u: &Hp, v: &Hp) -> Hp {
        let prec = self.prec().max(u.prec()).max(v.prec());
        let mut u_pows = vec![Hp::one(prec)];
        let mut v_pows = vec![Hp::one(prec)];
        for i in 1..=self.order {
            u_pows.push(&u_pows[i - 1] * u);
            v_pows.push(&v_pows[i - 1] * v);
        }
        let mut acc = Hp::zero(prec);
        for d in 0..=self.order {
            for j in 0..=d {
                let a = &self.c[jet2_idx(d, j)];
                if a.is_zero() {
                    continue;
                }
                acc = acc + a * &u_pows[d - j] * &v_pows[j];
            }
        }
        acc
    }

    /// Largest coefficient magnitude at or above a total degree.
    pub fn max_abs_from_degree(&self, degree: usize) -> f64 {
        let mut mx = 0.0f64;
        for d in degree..=self.order {
            for j in 0..=d {
                mx = mx.max(self.c[jet2_idx(d, j)].abs().to_f64());
            }
        }
        mx
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.max_abs_from_degree(0)
    }

    /// Homogeneous part of one total degree, everything else zeroed.
    pub fn homogeneous_part(&self, degree: usize) -> Jet2 {
        let mut out = Jet2::zero(self.order, self.prec());
        for j in 0..=degree {
            out.c[jet2_idx(degree, j)] = self.c[jet2_idx(degree, j)].clone();
        }
        out
    }
}

/// A planar map germ: a pair of bivariate jets (the two output components).
#[derive(Clone, Debug)]
pub struct Map2 {
    pub x: Jet2,
    pub y: Jet2,
}

impl Map2 {
    pub fn identity(order: usize, prec: u32) -> Self {
        Map2 {
            x: Jet2::var_u(Hp::zero(prec), order),
            y: Jet2::var_v(Hp::zero(prec), order),
        }
    }

    pub fn order(&self) -> usize {
        self.x.order
    }

    pub fn prec(&self) -> u32 {
        self.x.prec()
    }

    /// `self ∘ inner`; the inner map must fix the origin.
    pub fn compose(&self, inner: &Map2) -> Map2 {
        Map2 {
            x: self.x.compose_pair(&inner.x, &inner.y),
            y: self.y.compose_pair(&inner.x, &inner.y),
        }
    }

    /// Linear part as a matrix [[a,b],[c,d]] acting on (u,v).
    pub fn linear_part(&self) -> [[Hp; 2]; 2] {
        [
            [self.x.get(1, 0).clone(), self.x.get(0, 1).clone()],
            [self.y.get(1, 0).clone(), self.y.get(0, 1).clone()],
        ]
    }

    /// Jacobian determinant as a jet.
    pub fn jacobian_det(&self) -> Jet2 {
        let xu = self.x.partial_u();
        let xv = self.x.partial_v();
        let yu = self.y.partial_u();
        let yv = self.y.partial_v();
        xu.mul(&yv).sub(&xv.mul(&yu))
    }

    /// Inverse map germ (origin-fixing, invertible linear part), by jet
    /// Newton iteration: order of contact doubles per step.
    pub fn inverse(&self) -> Map2 {
        assert!(self.x.c[0].is_zero() && self.y.c[0].is_zero());
        let order = self.order();
        let prec = self.prec();
        let lin = self.linear_part();
        let det = &lin[0][0] * &lin[1][1] - &lin[0][1] * &lin[1][0];
        // Linear inverse as the seed.
        let mut inv = Map2 {
            x: {
                let mut j = Jet2::zero(order, prec);
                j.set(1, 0, &lin[1][1] / &det);
                j.set(0, 1, -&lin[0][1] / &det);
                j
            },
            y: {
                let mut j = Jet2::zero(order, prec);
                j.set(1, 0, -&lin[1][0] / &det);
                j.set(0, 1, &lin[0][0] / &det);
                j
            },
        };
        let ident = Map2::identity(order, prec);
        let steps = (usize::BITS - order.leading_zeros()) as usize + 1;
        for _ in 0..steps {
            // inv ← inv − Dself(inv)⁻¹ · (self∘inv − id)
            let err = {
                let comp = self.compose(&inv);
                Map2 {
                    x: comp.x.sub(&ident.x),
                    y: comp.y.sub(&ident.y),
                }
            };
            let xu = self.x.partial_u().compose_pair(&inv.x, &inv.y);
            let xv = self.x.partial_v().compose_pair(&inv.x, &inv.y);
            let yu = self.y.partial_u().compose_pair(&inv.x, &inv.y);
            let yv = self.y.partial_v().compose_pair(&inv.x, &inv.y);
            let jdet = xu.mul(&yv).sub(&xv.mul(&yu));
            let jdet_inv = jdet.recip();
            let dx = jdet_inv.mul(&yv.mul(&err.x).sub(&xv.mul(&err.y)));
            let dy = jdet_inv.mul(&xu.mul(&err.y).sub(&yu.mul(&err.x)));
            inv = Map2 {
                x: inv.x.sub(&dx),
                y: inv.y.sub(&dy),
            };
        }
        inv
    }

    pub fn eval(&self, u: &Hp, v: &Hp) -> (Hp, Hp) {
        (self.x.eval(u, v), self.y.eval(u, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 256;

    fn close(a: &Hp, b: f64, tol: f64) -> bool {
        (a.to_f64() - b).abs() < tol
    }

    #[test]
    fn jet1_mul_matches_polynomial_product() {
        // (1 + 2u + 3u²)(4 + 5u) = 4 + 13u + 22u² + 15u³.
        let a = Jet1 {
            c: vec![
                Hp::from_i64(PREC, 1),
                Hp::from_i64(PREC, 2),
                Hp::from_i64(PREC, 3),
                Hp::zero(PREC),
            ],
        };
        let b = Jet1 {
            c: vec![
                Hp::from_i64(PREC, 4),
                Hp::from_i64(PREC, 5),
                Hp::zero(PREC),
                Hp::zero(PREC),
            ],
        };
        let p = a.mul(&b);
        for (k, want) in [4.0, 13.0, 22.0, 15.0].iter().enumerate() {
            assert!(close(&p.c[k], *want, 1e-70));
        }
    }

    #[test]
    fn jet1_reversion_catalan_pattern() {
        // Inverse of f(u) = u + u² is u − u² + 2u³ − 5u⁴ + 14u⁵ (signed Catalan).
        let mut f = Jet1::zero(5, PREC);
        f.c[1] = Hp::one(PREC);
        f.c[2] = Hp::one(PREC);
        let g = f.revert();
        for (k, want) in [0.0, 1.0, -1.0, 2.0, -5.0, 14.0].iter().enumerate() {
            assert!(close(&g.c[k], *want, 1e-65), "coefficient {k}");
        }
        // f∘g is the identity jet.
        let id = f.compose(&g);
        assert!(close(&id.c[1], 1.0, 1e-65));
        assert!(id.c[2].abs().to_f64() < 1e-65);
        assert!(id.c[5].abs().to_f64() < 1e-65);
    }

    #[test]
    fn jet1_sqrt_of_perfect_square() {
        let mut f = Jet1::zero(4, PREC);
        f.c[0] = Hp::one(PREC);
        f.c[1] = Hp::one(PREC);
        let sq = f.square().sqrt();
        assert!(close(&sq.c[0], 1.0, 1e-70));
        assert!(close(&sq.c[1], 1.0, 1e-70));
        assert!(sq.c[2].abs().to_f64() < 1e-70);
    }

    #[test]
    fn jet_trig_matches_derivatives() {
        let t0 = Hp::ratio(PREC, 1, 3);
        let t = Jet1::variable(t0.clone(), 4);
        let (s, c) = jet_sin_cos(&t);
        assert!((s.c[0].clone() - t0.sin()).abs().to_f64() < 1e-70);
        assert!((s.c[1].clone() - t0.cos()).abs().to_f64() < 1e-70);
        // sin'' = −sin, so c[2] = −sin(t0)/2.
        assert!((s.c[2].clone() + t0.sin() / Hp::from_i64(PREC, 2)).abs().to_f64() < 1e-70);
        assert!((c.c[1].clone() + t0.sin()).abs().to_f64() < 1e-70);
    }

    #[test]
    fn jet2_compose_pair_difference_of_squares() {
        // outer(u,v) = u·v composed with (u+v, u−v) gives u² − v².
        let order = 3;
        let mut outer = Jet2::zero(order, PREC);
        outer.set(1, 1, Hp::one(PREC));
        let mut p = Jet2::zero(order, PREC);
        p.set(1, 0, Hp::one(PREC));
        p.set(0, 1, Hp::one(PREC));
        let mut q = Jet2::zero(order, PREC);
        q.set(1, 0, Hp::one(PREC));
        q.set(0, 1, -Hp::one(PREC));
        let comp = outer.compose_pair(&p, &q);
        assert!(close(comp.get(2, 0), 1.0, 1e-70));
        assert!(close(comp.get(0, 2), -1.0, 1e-70));
        assert!(comp.get(1, 1).abs().to_f64() < 1e-70);
    }

    #[test]
    fn jet2_partials_and_restriction() {
        // f = u² v + 3v²
        let mut f = Jet2::zero(3, PREC);
        f.set(2, 1, Hp::one(PREC));
        f.set(0, 2, Hp::from_i64(PREC, 3));
        let fu = f.partial_u(); // 2uv
        assert!(close(fu.get(1, 1), 2.0, 1e-70));
        let fv = f.partial_v(); // u² + 6v
        assert!(close(fv.get(2, 0), 1.0, 1e-70));
        assert!(close(fv.get(0, 1), 6.0, 1e-70));
        let at_v0 = f.restrict_v0();
        assert!(at_v0.max_abs_f64() < 1e-70);
    }

    #[test]
    fn map2_inverse_round_trip() {
        let order = 6;
        // A nonlinear origin-fixing map with nontrivial linear part.
        let mut m = Map2::identity(order, PREC);
        m.x.set(0, 1, Hp::ratio(PREC, 1, 2));
        m.x.set(2, 0, Hp::ratio(PREC, 1, 3));
        m.y.set(1, 1, -Hp::ratio(PREC, 2, 5));
        m.y.set(0, 3, Hp::ratio(PREC, 1, 7));
        let inv = m.inverse();
        let comp = m.compose(&inv);
        let id = Map2::identity(order, PREC);
        assert!(comp.x.sub(&id.x).max_abs_f64() < 1e-68);
        assert!(comp.y.sub(&id.y).max_abs_f64() < 1e-68);
        let comp2 = inv.compose(&m);
        assert!(comp2.x.sub(&id.x).max_abs_f64() < 1e-68);
        assert!(comp2.y.sub(&id.y).max_abs_f64() < 1e-68);
    }

    #[test]
    fn jet2_eval_consistency() {
        let mut f = Jet2::zero(4, PREC);
        f.set(1, 0, Hp::from_i64(PREC, 2));
        f.set(1, 2, Hp::from_i64(PREC, 5));
        let u = Hp::ratio(PREC, 1, 10);
        let v = Hp::ratio(PREC, -3, 10);
        // 2u + 5uv² at (0.1, −0.3) = 0.2 + 0.045.
        assert!(close(&f.eval(&u, &v), 0.2 + 5.0 * 0.1 * 0.09, 1e-70));
    }
}
