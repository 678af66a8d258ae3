//! Scatterer boundaries and billiard tables.
//!
//! Boundaries are analytic curves given in a native parameter (angle for the
//! closed variants, signed length for flat segments). Everything downstream
//! needs *arc-length* derivatives, so the central service here is a local
//! Taylor expansion of the boundary around a point together with the exact
//! local reparametrization between native parameter and arc length. The
//! global arc-length table (native parameter of a given cumulative length)
//! is built once per precision and cached; all derivative-sensitive
//! quantities are computed from local jets, never from the table.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hp::Hp;
use crate::jets::{jet_sin_cos, sin_cos_series, Jet1};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("scatterer {label}: {reason}")]
    BadScatterer { label: String, reason: String },
    #[error("non-eclipse violation: hull of pair ({i},{j}) meets scatterer {k} (clearance {clearance:.3e} < margin {margin:.3e})")]
    Eclipse {
        i: String,
        j: String,
        k: String,
        clearance: f64,
        margin: f64,
    },
    #[error("arc-length parameter outside the flat segment range")]
    OutOfRange,
    #[error("table needs at least 2 scatterers, got {0}")]
    TooFewScatterers(usize),
}

/// Numeric boundary parameter: either an ordinary float or a decimal string.
///
/// Strings exist because some benchmark layouts (e.g. an exactly equilateral
/// triangle of centers) have coordinates that no `f64` can represent, while
/// orbit-length checks downstream resolve far below `1e-16`. A string keeps
/// as many digits as it carries; it is re-parsed at whatever working
/// precision the caller asks for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Num(f64),
    Dec(String),
}

impl Real {
    /// Value at full working precision.
    pub fn to_hp(&self, prec: u32) -> Hp {
        match self {
            Real::Num(v) => Hp::from_f64(prec, *v),
            Real::Dec(s) => Hp::parse(prec, s).expect("decimal literal validated on construction"),
        }
    }

    /// Double-precision view, for bracketing and validation only.
    pub fn approx(&self) -> f64 {
        match self {
            Real::Num(v) => *v,
            Real::Dec(s) => Hp::parse(64, s).map(|h| h.to_f64()).unwrap_or(f64::NAN),
        }
    }

    /// Capture a high-precision value as a decimal string parameter.
    pub fn from_hp(v: &Hp) -> Self {
        Real::Dec(v.to_decimal())
    }

    fn check(&self) -> Result<(), String> {
        match self {
            Real::Num(v) if v.is_finite() => Ok(()),
            Real::Num(v) => Err(format!("non-finite parameter {v}")),
            Real::Dec(s) => match Hp::parse(64, s) {
                Some(h) if h.is_finite() => Ok(()),
                _ => Err(format!("unparseable decimal parameter {s:?}")),
            },
        }
    }
}

impl Default for Real {
    fn default() -> Self {
        Real::Num(0.0)
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real::Num(v)
    }
}

/// Geometric description of one obstacle boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveSpec {
    Circle {
        center: [Real; 2],
        radius: Real,
    },
    Ellipse {
        center: [Real; 2],
        /// Semi-axis lengths `[a, b]` along the rotated x/y axes.
        semi_axes: [Real; 2],
        #[serde(default)]
        rotation: Real,
    },
    /// Radial graph `rho(theta) = sum c_j cos(j theta) + sum s_j sin(j theta)`
    /// around `center`; must stay positive and strictly convex.
    FourierRadial {
        center: [Real; 2],
        cos_coeffs: Vec<Real>,
        #[serde(default)]
        sin_coeffs: Vec<Real>,
    },
    /// Straight wall, used only by folded tables. `normal_side = +1` puts the
    /// billiard domain on the right of start->end travel (matching the
    /// convention for counterclockwise closed curves), `-1` on the left.
    FlatSegment {
        start: [Real; 2],
        end: [Real; 2],
        #[serde(default = "default_side")]
        normal_side: i8,
    },
}

fn default_side() -> i8 {
    1
}

/// Shorthand for a coordinate pair of plain floats.
pub fn pair(v: [f64; 2]) -> [Real; 2] {
    [Real::Num(v[0]), Real::Num(v[1])]
}

/// Shorthand for a coefficient list of plain floats.
pub fn reals(v: &[f64]) -> Vec<Real> {
    v.iter().map(|&x| Real::Num(x)).collect()
}

impl CurveSpec {
    /// Circle from plain floats.
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        CurveSpec::Circle {
            center: pair(center),
            radius: Real::Num(radius),
        }
    }

    /// Flat wall from plain floats.
    pub fn segment(start: [f64; 2], end: [f64; 2], normal_side: i8) -> Self {
        CurveSpec::FlatSegment {
            start: pair(start),
            end: pair(end),
            normal_side,
        }
    }

    pub fn is_closed(&self) -> bool {
        !matches!(self, CurveSpec::FlatSegment { .. })
    }

    /// Double-precision boundary point, for bracketing and hull sampling.
    pub fn point_f64(&self, t: f64) -> [f64; 2] {
        match self {
            CurveSpec::Circle { center, radius } => {
                let (cx, cy, r) = (center[0].approx(), center[1].approx(), radius.approx());
                [cx + r * t.cos(), cy + r * t.sin()]
            }
            CurveSpec::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let (u, v) = (semi_axes[0].approx() * t.cos(), semi_axes[1].approx() * t.sin());
                let (c, s) = (rotation.approx().cos(), rotation.approx().sin());
                [
                    center[0].approx() + c * u - s * v,
                    center[1].approx() + s * u + c * v,
                ]
            }
            CurveSpec::FourierRadial {
                center,
                cos_coeffs,
                sin_coeffs,
            } => {
                let mut rho = 0.0;
                for (j, c) in cos_coeffs.iter().enumerate() {
                    rho += c.approx() * (j as f64 * t).cos();
                }
                for (j, s) in sin_coeffs.iter().enumerate() {
                    rho += s.approx() * (j as f64 * t).sin();
                }
                [
                    center[0].approx() + rho * t.cos(),
                    center[1].approx() + rho * t.sin(),
                ]
            }
            CurveSpec::FlatSegment { start, end, .. } => {
                let (x0, y0) = (start[0].approx(), start[1].approx());
                let (dx, dy) = (end[0].approx() - x0, end[1].approx() - y0);
                let len = dx.hypot(dy);
                [x0 + t * dx / len, y0 + t * dy / len]
            }
        }
    }

    /// Approximate center, used for initial orbit placement.
    pub fn center_f64(&self) -> [f64; 2] {
        match self {
            CurveSpec::Circle { center, .. }
            | CurveSpec::Ellipse { center, .. }
            | CurveSpec::FourierRadial { center, .. } => [center[0].approx(), center[1].approx()],
            CurveSpec::FlatSegment { start, end, .. } => [
                (start[0].approx() + end[0].approx()) / 2.0,
                (start[1].approx() + end[1].approx()) / 2.0,
            ],
        }
    }

    /// Native-parameter period for closed curves, segment length for flat.
    pub fn native_span_f64(&self) -> f64 {
        match self {
            CurveSpec::FlatSegment { start, end, .. } => (end[0].approx() - start[0].approx())
                .hypot(end[1].approx() - start[1].approx()),
            _ => std::f64::consts::TAU,
        }
    }

    fn params(&self) -> Vec<&Real> {
        match self {
            CurveSpec::Circle { center, radius } => vec![&center[0], &center[1], radius],
            CurveSpec::Ellipse {
                center,
                semi_axes,
                rotation,
            } => vec![&center[0], &center[1], &semi_axes[0], &semi_axes[1], rotation],
            CurveSpec::FourierRadial {
                center,
                cos_coeffs,
                sin_coeffs,
            } => {
                let mut out = vec![&center[0], &center[1]];
                out.extend(cos_coeffs.iter());
                out.extend(sin_coeffs.iter());
                out
            }
            CurveSpec::FlatSegment { start, end, .. } => {
                vec![&start[0], &start[1], &end[0], &end[1]]
            }
        }
    }
}

/// Cumulative arc-length table at one working precision.
struct ArcTable {
    /// Cumulative length at the uniform native nodes `t_k = k h`, length
    /// `nodes + 1` with the last entry the total boundary length.
    cum: Vec<Hp>,
    /// Native step between nodes.
    step: Hp,
}

/// One obstacle: a curve spec plus cached arc-length tables per precision.
pub struct Scatterer {
    pub label: String,
    pub spec: CurveSpec,
    tables: RwLock<HashMap<u32, Arc<ArcTable>>>,
}

impl Clone for Scatterer {
    fn clone(&self) -> Self {
        Scatterer {
            label: self.label.clone(),
            spec: self.spec.clone(),
            tables: RwLock::new(HashMap::new()),
        }
    }
}

impl std::fmt::Debug for Scatterer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scatterer")
            .field("label", &self.label)
            .field("spec", &self.spec)
            .finish()
    }
}

/// Grid size for convexity screening at construction.
const CONVEXITY_GRID: usize = 2048;
/// Nodes in the cumulative arc-length table.
const ARC_NODES: usize = 2048;

impl Scatterer {
    pub fn new(label: String, spec: CurveSpec) -> Result<Self, GeometryError> {
        let reject = |reason: String| GeometryError::BadScatterer {
            label: label.clone(),
            reason,
        };
        for p in spec.params() {
            if let Err(reason) = p.check() {
                return Err(reject(reason));
            }
        }
        match &spec {
            CurveSpec::Circle { radius, .. } => {
                if !(radius.approx() > 0.0) {
                    return Err(reject(format!(
                        "radius must be positive, got {}",
                        radius.approx()
                    )));
                }
            }
            CurveSpec::Ellipse { semi_axes, .. } => {
                let (a, b) = (semi_axes[0].approx(), semi_axes[1].approx());
                if !(a >= b && b > 0.0) {
                    return Err(reject(format!(
                        "semi-axes must satisfy a >= b > 0, got [{a}, {b}]"
                    )));
                }
            }
            CurveSpec::FourierRadial { cos_coeffs, .. } => {
                if cos_coeffs.is_empty() {
                    return Err(reject("fourier boundary needs a constant term".into()));
                }
                // Positivity of rho and strict convexity on a dense grid.
                let probe = Scatterer {
                    label: label.clone(),
                    spec: spec.clone(),
                    tables: RwLock::new(HashMap::new()),
                };
                for k in 0..CONVEXITY_GRID {
                    let t = std::f64::consts::TAU * k as f64 / CONVEXITY_GRID as f64;
                    let p = spec.point_f64(t);
                    let c = spec.center_f64();
                    let rho = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
                    if rho <= 0.0 {
                        return Err(reject(format!("radial graph vanishes near t = {t:.4}")));
                    }
                    let kappa = probe.curvature_f64(t);
                    if kappa <= 0.0 {
                        return Err(reject(format!(
                            "curvature {kappa:.3e} not positive near t = {t:.4}"
                        )));
                    }
                }
            }
            CurveSpec::FlatSegment { start, end, .. } => {
                let gap = (end[0].approx() - start[0].approx())
                    .hypot(end[1].approx() - start[1].approx());
                if !(gap > 0.0) {
                    return Err(reject("flat segment endpoints coincide".into()));
                }
            }
        }
        Ok(Scatterer {
            label,
            spec,
            tables: RwLock::new(HashMap::new()),
        })
    }

    pub fn is_closed(&self) -> bool {
        self.spec.is_closed()
    }

    /// Taylor expansion of the boundary position around native parameter
    /// `t0`, in the displacement `dt`.
    pub fn pos_jet(&self, t0: &Hp, order: usize) -> (Jet1, Jet1) {
        let prec = t0.prec();
        match &self.spec {
            CurveSpec::Circle { center, radius } => {
                let t = Jet1::variable(t0.clone(), order);
                let (s, c) = jet_sin_cos(&t);
                let r = radius.to_hp(prec);
                let cx = Jet1::constant(center[0].to_hp(prec), order);
                let cy = Jet1::constant(center[1].to_hp(prec), order);
                (cx.add(&c.scale(&r)), cy.add(&s.scale(&r)))
            }
            CurveSpec::Ellipse {
                center,
                semi_axes,
                rotation,
            } => {
                let t = Jet1::variable(t0.clone(), order);
                let (s, c) = jet_sin_cos(&t);
                let a = semi_axes[0].to_hp(prec);
                let b = semi_axes[1].to_hp(prec);
                let u = c.scale(&a);
                let v = s.scale(&b);
                let rot = rotation.to_hp(prec);
                let (rc, rs) = (rot.cos(), rot.sin());
                let x = u.scale(&rc).sub(&v.scale(&rs));
                let y = u.scale(&rs).add(&v.scale(&rc));
                let cx = Jet1::constant(center[0].to_hp(prec), order);
                let cy = Jet1::constant(center[1].to_hp(prec), order);
                (cx.add(&x), cy.add(&y))
            }
            CurveSpec::FourierRadial {
                center,
                cos_coeffs,
                sin_coeffs,
            } => {
                let mut rho = Jet1::zero(order, prec);
                let mut dt = Jet1::zero(order, prec);
                if order >= 1 {
                    dt.c[1] = Hp::one(prec);
                }
                for (j, coef) in cos_coeffs.iter().enumerate() {
                    if coef.approx() == 0.0 {
                        continue;
                    }
                    let jt0 = Hp::from_i64(prec, j as i64) * t0;
                    let (_, c_ser) = sin_cos_series(&jt0, order);
                    let inner = dt.scale(&Hp::from_i64(prec, j as i64));
                    let cj = Jet1::compose_series(&c_ser, &inner);
                    rho = rho.add(&cj.scale(&coef.to_hp(prec)));
                }
                for (j, coef) in sin_coeffs.iter().enumerate() {
                    if coef.approx() == 0.0 {
                        continue;
                    }
                    let jt0 = Hp::from_i64(prec, j as i64) * t0;
                    let (s_ser, _) = sin_cos_series(&jt0, order);
                    let inner = dt.scale(&Hp::from_i64(prec, j as i64));
                    let sj = Jet1::compose_series(&s_ser, &inner);
                    rho = rho.add(&sj.scale(&coef.to_hp(prec)));
                }
                let t = Jet1::variable(t0.clone(), order);
                let (s, c) = jet_sin_cos(&t);
                let cx = Jet1::constant(center[0].to_hp(prec), order);
                let cy = Jet1::constant(center[1].to_hp(prec), order);
                (cx.add(&rho.mul(&c)), cy.add(&rho.mul(&s)))
            }
            CurveSpec::FlatSegment { start, end, .. } => {
                let sx = start[0].to_hp(prec);
                let sy = start[1].to_hp(prec);
                let dxf = end[0].to_hp(prec) - &sx;
                let dyf = end[1].to_hp(prec) - &sy;
                let len = (dxf.square() + dyf.square()).sqrt();
                let dx = dxf / &len;
                let dy = dyf / &len;
                let mut x = Jet1::constant(sx + t0 * &dx, order);
                let mut y = Jet1::constant(sy + t0 * &dy, order);
                if order >= 1 {
                    x.c[1] = dx;
                    y.c[1] = dy;
                }
                (x, y)
            }
        }
    }

    pub fn point(&self, t0: &Hp) -> (Hp, Hp) {
        let (x, y) = self.pos_jet(t0, 0);
        (x.c[0].clone(), y.c[0].clone())
    }

    /// Parametrization speed `|dP/dt|` as a jet.
    pub fn speed_jet(&self, t0: &Hp, order: usize) -> Jet1 {
        let (x, y) = self.pos_jet(t0, order + 1);
        let xp = x.derivative();
        let yp = y.derivative();
        xp.square().add(&yp.square()).sqrt()
    }

    /// Unit tangent and the normal pointing into the billiard domain.
    pub fn tangent_normal(&self, t0: &Hp) -> ((Hp, Hp), (Hp, Hp)) {
        let (x, y) = self.pos_jet(t0, 1);
        let speed = (x.c[1].square() + y.c[1].square()).sqrt();
        let tx = &x.c[1] / &speed;
        let ty = &y.c[1] / &speed;
        // Counterclockwise closed curves: the domain is outside the obstacle,
        // reached by rotating the tangent by -90 degrees.
        let side = match &self.spec {
            CurveSpec::FlatSegment { normal_side, .. } => *normal_side as i64,
            _ => 1,
        };
        let s = Hp::from_i64(t0.prec(), side);
        let nx = &ty * &s;
        let ny = -&tx * &s;
        ((tx, ty), (nx, ny))
    }

    /// Curvature at native parameter, double precision (screening only).
    pub fn curvature_f64(&self, t: f64) -> f64 {
        let prec = 64;
        let k = self.curvature(&Hp::from_f64(prec, t));
        k.to_f64()
    }

    /// Curvature at native parameter `t0`.
    pub fn curvature(&self, t0: &Hp) -> Hp {
        if !self.is_closed() {
            return Hp::zero(t0.prec());
        }
        let (x, y) = self.pos_jet(t0, 2);
        let (xp, yp) = (&x.c[1], &y.c[1]);
        let two = Hp::from_i64(t0.prec(), 2);
        let (xpp, ypp) = (&x.c[2] * &two, &y.c[2] * &two);
        let speed2 = xp.square() + yp.square();
        (xp * ypp - yp * xpp) / (speed2.sqrt() * speed2)
    }

    /// Curvature and its arc-length derivatives `(K, K', ..., K^(order))`.
    pub fn curvature_jet(&self, t0: &Hp, order: usize) -> Vec<Hp> {
        let prec = t0.prec();
        if !self.is_closed() {
            return vec![Hp::zero(prec); order + 1];
        }
        let j = order;
        let (x, y) = self.pos_jet(t0, j + 2);
        let xp = x.derivative();
        let yp = y.derivative();
        let xpp = xp.derivative();
        let ypp = yp.derivative();
        // K(t) jet: cross(P', P'') / |P'|^3, all at order j.
        let xp_j = xp.truncate(j);
        let yp_j = yp.truncate(j);
        let speed2 = xp_j.square().add(&yp_j.square());
        let num = xp_j.mul(&ypp).sub(&yp_j.mul(&xpp));
        let k_t = num.div(&speed2.sqrt().mul(&speed2));
        // Local reparametrization dt(ds): revert the arc-length-of-dt jet.
        let speed = self.speed_jet(t0, j);
        let s_of_dt = speed.antiderivative().truncate(j.max(1));
        let dt_of_ds = s_of_dt.revert();
        let k_s = if j == 0 {
            k_t
        } else {
            k_t.compose(&dt_of_ds.truncate(j))
        };
        // Convert Taylor coefficients to derivative values.
        let mut fact = Hp::one(prec);
        let mut out = Vec::with_capacity(j + 1);
        for (k, c) in k_s.c.iter().enumerate() {
            if k > 0 {
                fact = fact * Hp::from_i64(prec, k as i64);
            }
            out.push(c * &fact);
        }
        out
    }

    fn arc_table(&self, prec: u32) -> Arc<ArcTable> {
        if let Some(t) = self.tables.read().unwrap().get(&prec) {
            return t.clone();
        }
        let table = Arc::new(self.build_arc_table(prec));
        self.tables.write().unwrap().insert(prec, table.clone());
        table
    }

    fn integration_order(prec: u32) -> usize {
        // Node spacing ~3e-3 against an O(1) analyticity radius: each extra
        // order buys ~2 digits, so size the jet to the working precision.
        let digits = (prec as f64) * 0.30103;
        ((digits / 2.0).ceil() as usize + 6).clamp(16, 96)
    }

    fn build_arc_table(&self, prec: u32) -> ArcTable {
        match &self.spec {
            CurveSpec::Circle { radius, .. } => {
                // Exact: s = radius * t.
                let r = radius.to_hp(prec);
                let step = Hp::pi(prec) * Hp::ratio(prec, 2, ARC_NODES as i64);
                let mut cum = Vec::with_capacity(ARC_NODES + 1);
                for k in 0..=ARC_NODES {
                    cum.push(&r * &step * Hp::from_i64(prec, k as i64));
                }
                ArcTable { cum, step }
            }
            CurveSpec::FlatSegment { start, end, .. } => {
                let dx = end[0].to_hp(prec) - start[0].to_hp(prec);
                let dy = end[1].to_hp(prec) - start[1].to_hp(prec);
                let len = (dx.square() + dy.square()).sqrt();
                let step = &len / Hp::from_i64(prec, ARC_NODES as i64);
                let mut cum = Vec::with_capacity(ARC_NODES + 1);
                for k in 0..=ARC_NODES {
                    cum.push(&step * Hp::from_i64(prec, k as i64));
                }
                ArcTable { cum, step }
            }
            _ => {
                let order = Self::integration_order(prec);
                let two_pi = Hp::pi(prec) * Hp::from_i64(prec, 2);
                let step = &two_pi / Hp::from_i64(prec, ARC_NODES as i64);
                let mut cum = Vec::with_capacity(ARC_NODES + 1);
                cum.push(Hp::zero(prec));
                for k in 0..ARC_NODES {
                    let t_k = &step * Hp::from_i64(prec, k as i64);
                    let anti = self.speed_jet(&t_k, order).antiderivative();
                    let seg = anti.eval(&step);
                    let last = cum.last().unwrap().clone();
                    cum.push(last + seg);
                }
                ArcTable { cum, step }
            }
        }
    }

    /// Total boundary length at the given precision.
    pub fn total_len(&self, prec: u32) -> Hp {
        self.arc_table(prec).cum.last().unwrap().clone()
    }

    /// Native parameter of the point at arc length `s` (reduced modulo the
    /// total length for closed curves).
    pub fn native_of_arclength(&self, s: &Hp) -> Result<Hp, GeometryError> {
        let prec = s.prec();
        let table = self.arc_table(prec);
        let total = table.cum.last().unwrap();
        let mut s = s.clone();
        if self.is_closed() {
            let wraps = (&s / total).floor();
            s = s - wraps * total;
        } else if s < Hp::zero(prec) || s > *total {
            return Err(GeometryError::OutOfRange);
        }
        // Binary search for the node interval.
        let mut lo = 0usize;
        let mut hi = table.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if table.cum[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t_k = &table.step * Hp::from_i64(prec, lo as i64);
        let ds = &s - &table.cum[lo];
        match &self.spec {
            CurveSpec::Circle { radius, .. } => Ok(t_k + ds / radius.to_hp(prec)),
            CurveSpec::FlatSegment { .. } => Ok(t_k + ds),
            _ => {
                let order = Self::integration_order(prec);
                let anti = self.speed_jet(&t_k, order).antiderivative();
                let dt = anti.revert().eval(&ds);
                Ok(t_k + dt)
            }
        }
    }

    /// Arc length of the point at native parameter `t` (reduced modulo the
    /// native period for closed curves).
    pub fn arclength_of_native(&self, t: &Hp) -> Hp {
        let prec = t.prec();
        let table = self.arc_table(prec);
        let mut t = t.clone();
        if self.is_closed() {
            let two_pi = Hp::pi(prec) * Hp::from_i64(prec, 2);
            let wraps = (&t / &two_pi).floor();
            t = t - wraps * two_pi;
        }
        let k = (&t / &table.step).floor().to_f64() as usize;
        let k = k.min(table.cum.len() - 2);
        let t_k = &table.step * Hp::from_i64(prec, k as i64);
        let dt = &t - &t_k;
        match &self.spec {
            CurveSpec::Circle { radius, .. } => &table.cum[k] + dt * radius.to_hp(prec),
            CurveSpec::FlatSegment { .. } => &table.cum[k] + dt,
            _ => {
                let order = Self::integration_order(prec);
                let anti = self.speed_jet(&t_k, order).antiderivative();
                &table.cum[k] + anti.eval(&dt)
            }
        }
    }

    /// Signed arc length from `t0` to `t1`, by full-precision local
    /// integration (no table involved; valid for any gap).
    pub fn arclength_between(&self, t0: &Hp, t1: &Hp) -> Hp {
        let prec = t0.prec().max(t1.prec());
        let delta = t1 - t0;
        let order = Self::integration_order(prec);
        // Step small enough for jet convergence.
        let max_step = 0.003;
        let n_sub = (delta.abs().to_f64() / max_step).ceil().max(1.0) as usize;
        let h = &delta / Hp::from_i64(prec, n_sub as i64);
        let mut acc = Hp::zero(prec);
        for k in 0..n_sub {
            let t_k = t0 + &h * Hp::from_i64(prec, k as i64);
            let anti = self.speed_jet(&t_k, order).antiderivative();
            acc = acc + anti.eval(&h);
        }
        acc
    }
}

/// Result of boundary evaluation at an arc-length position.
pub struct BoundaryPoint {
    pub point: (Hp, Hp),
    pub tangent: (Hp, Hp),
    pub normal: (Hp, Hp),
}

/// Evaluates position, unit tangent, and inward (into-domain) normal.
pub fn boundary_eval(scatterer: &Scatterer, s: &Hp) -> Result<BoundaryPoint, GeometryError> {
    let t = scatterer.native_of_arclength(s)?;
    let point = scatterer.point(&t);
    let (tangent, normal) = scatterer.tangent_normal(&t);
    Ok(BoundaryPoint {
        point,
        tangent,
        normal,
    })
}

/// A full billiard table.
#[derive(Debug)]
pub struct Table {
    pub scatterers: Vec<Scatterer>,
    /// SHA-256 of the canonicalized scatterer list; identifies the geometry
    /// in spectrum-file headers.
    pub hash: String,
    pub non_eclipse_margin: f64,
}

#[derive(Deserialize)]
struct TableConfig {
    #[serde(default)]
    format_version: Option<u32>,
    #[serde(default)]
    non_eclipse_margin: Option<f64>,
    scatterer: Vec<ScattererConfig>,
}

#[derive(Deserialize)]
struct ScattererConfig {
    #[serde(default)]
    label: Option<String>,
    #[serde(flatten)]
    spec: CurveSpec,
}

pub const DEFAULT_NON_ECLIPSE_MARGIN: f64 = 1e-9;

impl Table {
    pub fn new(specs: Vec<(String, CurveSpec)>, margin: f64) -> Result<Table, GeometryError> {
        if specs.len() < 2 {
            return Err(GeometryError::TooFewScatterers(specs.len()));
        }
        let mut scatterers = Vec::with_capacity(specs.len());
        let mut hasher = Sha256::new();
        for (label, spec) in specs {
            hasher.update(label.as_bytes());
            hasher.update(serde_json::to_string(&spec).expect("spec serializes").as_bytes());
            scatterers.push(Scatterer::new(label, spec)?);
        }
        Ok(Table {
            scatterers,
            hash: format!("{:x}", hasher.finalize()),
            non_eclipse_margin: margin,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Table, GeometryError> {
        let config: TableConfig =
            toml::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        if let Some(v) = config.format_version {
            if v != 1 {
                return Err(GeometryError::Parse(format!(
                    "unsupported format_version {v}"
                )));
            }
        }
        let specs = config
            .scatterer
            .into_iter()
            .enumerate()
            .map(|(k, sc)| {
                let label = sc.label.unwrap_or_else(|| (k + 1).to_string());
                (label, sc.spec)
            })
            .collect();
        Table::new(
            specs,
            config.non_eclipse_margin.unwrap_or(DEFAULT_NON_ECLIPSE_MARGIN),
        )
    }

    pub fn scatterer(&self, idx: usize) -> &Scatterer {
        &self.scatterers[idx]
    }

    pub fn len(&self) -> usize {
        self.scatterers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scatterers.is_empty()
    }

    /// Checks the non-eclipse condition: the convex hull of every scatterer
    /// pair stays clear of every other scatterer by at least the margin.
    ///
    /// Hulls and clearances are evaluated on dense boundary samples in double
    /// precision; the condition is an open inequality with a configured
    /// margin, so sampling resolution is not precision-critical.
    pub fn check_non_eclipse(&self) -> Result<(), GeometryError> {
        let m = self.scatterers.len();
        if m < 3 {
            return Ok(()); // vacuous for folded two-obstacle tables
        }
        const SAMPLES: usize = 2048;
        let boundary: Vec<Vec<[f64; 2]>> = self
            .scatterers
            .iter()
            .map(|sc| {
                let span = sc.spec.native_span_f64();
                let n = if sc.is_closed() { SAMPLES } else { 64 };
                (0..=n)
                    .map(|k| sc.spec.point_f64(span * k as f64 / n as f64))
                    .collect()
            })
            .collect();
        for i in 0..m {
            for j in i + 1..m {
                let mut cloud: Vec<[f64; 2]> = boundary[i].clone();
                cloud.extend_from_slice(&boundary[j]);
                let hull = convex_hull(&mut cloud);
                for (k, samples) in boundary.iter().enumerate() {
                    if k == i || k == j {
                        continue;
                    }
                    let mut clearance = f64::INFINITY;
                    for p in samples {
                        clearance = clearance.min(signed_distance_to_hull(&hull, *p));
                    }
                    if clearance < self.non_eclipse_margin {
                        return Err(GeometryError::Eclipse {
                            i: self.scatterers[i].label.clone(),
                            j: self.scatterers[j].label.clone(),
                            k: self.scatterers[k].label.clone(),
                            clearance,
                            margin: self.non_eclipse_margin,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Andrew monotone-chain convex hull (counterclockwise).
fn convex_hull(points: &mut Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup();
    let n = points.len();
    if n < 3 {
        return points.clone();
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * n);
    for &p in points.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in points.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Distance from a point to a convex polygon boundary: positive outside,
/// negative (penetration depth) inside.
fn signed_distance_to_hull(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = hull.len();
    if n < 3 {
        // Degenerate hull: distance to the segment/point set.
        let mut d = f64::INFINITY;
        for k in 0..n {
            let a = hull[k];
            let b = hull[(k + 1) % n.max(1)];
            d = d.min(segment_distance(a, b, p));
        }
        return d;
    }
    let mut inside = true;
    let mut dist = f64::INFINITY;
    for k in 0..n {
        let a = hull[k];
        let b = hull[(k + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross < 0.0 {
            inside = false;
        }
        dist = dist.min(segment_distance(a, b, p));
    }
    if inside {
        -dist
    } else {
        dist
    }
}

fn segment_distance(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

/// The equilateral benchmark: three unit circles with centers on an
/// equilateral triangle of the given side length.
///
/// The apex height `side * sqrt(3) / 2` has no exact `f64` form, so it is
/// stored as a decimal parameter with ~600 digits; the layout is equilateral
/// at any working precision up to 2048 bits.
pub fn equilateral_table(side: f64) -> Table {
    let h = Hp::from_f64(2048, side) * Hp::from_i64(2048, 3).sqrt() / Hp::from_i64(2048, 2);
    let specs = vec![
        (
            "1".to_string(),
            CurveSpec::circle([-side / 2.0, 0.0], 1.0),
        ),
        ("2".to_string(), CurveSpec::circle([side / 2.0, 0.0], 1.0)),
        (
            "3".to_string(),
            CurveSpec::Circle {
                center: [Real::Num(0.0), Real::from_hp(&h)],
                radius: Real::Num(1.0),
            },
        ),
    ];
    Table::new(specs, DEFAULT_NON_ECLIPSE_MARGIN).expect("equilateral table is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 256;

    fn unit_circle() -> Scatterer {
        Scatterer::new(
            "1".into(),
            CurveSpec::Circle {
                center: pair([0.0, 0.0]),
                radius: (1.0).into(),
            },
        )
        .unwrap()
    }

    /// Complete elliptic integral of the second kind E(m) by the
    /// arithmetic-geometric mean, an independent oracle for perimeters.
    fn elliptic_e(prec: u32, m: &Hp) -> Hp {
        let one = Hp::one(prec);
        let mut a = one.clone();
        let mut b = (Hp::one(prec) - m).sqrt();
        let mut c2_sum = m / Hp::from_i64(prec, 2); // 2^{-1} c_0^2
        let mut pow = Hp::one(prec);
        for _ in 0..prec.ilog2() + 30 {
            let an = (&a + &b) / Hp::from_i64(prec, 2);
            let bn = (&a * &b).sqrt();
            let c = (&a - &b) / Hp::from_i64(prec, 2);
            pow = pow * Hp::from_i64(prec, 2);
            c2_sum = c2_sum + &pow * c.square() / Hp::from_i64(prec, 2);
            a = an;
            b = bn;
            if (&a - &b).abs().to_f64() < 1e-75 {
                break;
            }
        }
        let k = Hp::pi(prec) / (Hp::from_i64(prec, 2) * &a);
        k * (one - c2_sum)
    }

    #[test]
    fn circle_boundary_points() {
        let sc = unit_circle();
        let bp = boundary_eval(&sc, &Hp::zero(PREC)).unwrap();
        assert!((bp.point.0.to_f64() - 1.0).abs() < 1e-70);
        assert!(bp.point.1.abs().to_f64() < 1e-70);
        let bp = boundary_eval(&sc, &Hp::pi(PREC)).unwrap();
        assert!((bp.point.0.to_f64() + 1.0).abs() < 1e-70);
        // Inward normal points away from the obstacle (outward from center).
        let bp = boundary_eval(&sc, &Hp::zero(PREC)).unwrap();
        assert!((bp.normal.0.to_f64() - 1.0).abs() < 1e-70);
    }

    #[test]
    fn constant_fourier_matches_circle() {
        let fc = Scatterer::new(
            "f".into(),
            CurveSpec::FourierRadial {
                center: pair([0.3, -0.2]),
                cos_coeffs: reals(&[2.0]),
                sin_coeffs: reals(&[]),
            },
        )
        .unwrap();
        let s = Hp::ratio(PREC, 7, 5);
        let bp = boundary_eval(&fc, &s).unwrap();
        let r = ((bp.point.0.clone() - Hp::from_f64(PREC, 0.3)).square()
            + (bp.point.1.clone() - Hp::from_f64(PREC, -0.2)).square())
        .sqrt();
        assert!((r.to_f64() - 2.0).abs() < 1e-70);
        let total = fc.total_len(PREC);
        let expect = Hp::pi(PREC) * Hp::from_i64(PREC, 4);
        assert!((total - expect).abs().to_f64() < 1e-70);
        let k = fc.curvature_jet(&Hp::ratio(PREC, 1, 3), 2);
        assert!((k[0].to_f64() - 0.5).abs() < 1e-70);
        assert!(k[1].abs().to_f64() < 1e-68);
    }

    #[test]
    fn ellipse_curvature_and_perimeter() {
        let a = 1.5;
        let b = 0.9;
        let sc = Scatterer::new(
            "e".into(),
            CurveSpec::Ellipse {
                center: pair([0.0, 0.0]),
                semi_axes: pair([a, b]),
                rotation: (0.0).into(),
            },
        )
        .unwrap();
        // Vertex curvature a/b^2 at t = 0, compared at full precision.
        let k = sc.curvature(&Hp::zero(PREC));
        let expect = Hp::from_f64(PREC, a) / Hp::from_f64(PREC, b).square();
        assert!((k - expect).abs().to_f64() < 1e-70);
        // Perimeter against the AGM elliptic-integral oracle, with the
        // modulus formed from the same binary values the scatterer uses.
        let a_hp = Hp::from_f64(PREC, a);
        let b_hp = Hp::from_f64(PREC, b);
        let m = Hp::one(PREC) - (&b_hp / &a_hp).square();
        let perimeter = Hp::from_i64(PREC, 4) * &a_hp * elliptic_e(PREC, &m);
        let total = sc.total_len(PREC);
        assert!(
            (total.clone() - perimeter.clone()).abs().to_f64() < 1e-70,
            "total {total:?} vs oracle {perimeter:?}"
        );
    }

    #[test]
    fn arclength_round_trip_and_unit_speed() {
        let sc = Scatterer::new(
            "e".into(),
            CurveSpec::Ellipse {
                center: pair([1.0, 2.0]),
                semi_axes: pair([1.3, 1.0]),
                rotation: (0.4).into(),
            },
        )
        .unwrap();
        for k in 0..7 {
            let s = Hp::ratio(PREC, 11 * k + 3, 9);
            let t = sc.native_of_arclength(&s).unwrap();
            let s_back = sc.arclength_of_native(&t);
            let total = sc.total_len(PREC);
            let wraps = (&s / &total).floor();
            let s_mod = &s - wraps * total;
            assert!(
                (s_back.clone() - s_mod.clone()).abs().to_f64() < 1e-70,
                "round trip failed at k={k}: {s_mod:?} vs {s_back:?}"
            );
        }
        // Unit speed: |P(s+d) - P(s)|/d -> 1.
        let s = Hp::ratio(PREC, 5, 7);
        let d = Hp::ratio(PREC, 1, 1_000_000);
        let p0 = boundary_eval(&sc, &s).unwrap().point;
        let p1 = boundary_eval(&sc, &(&s + &d)).unwrap().point;
        let chord = ((p1.0 - p0.0).square() + (p1.1 - p0.1).square()).sqrt();
        assert!((chord / d).to_f64() - 1.0 < 1e-8);
    }

    #[test]
    fn curvature_jet_matches_tangent_turning() {
        let sc = Scatterer::new(
            "f".into(),
            CurveSpec::FourierRadial {
                center: pair([0.0, 0.0]),
                cos_coeffs: reals(&[2.0, 0.0, 0.15]),
                sin_coeffs: reals(&[0.0, 0.0, 0.1]),
            },
        )
        .unwrap();
        let s = Hp::ratio(PREC, 9, 4);
        let t = sc.native_of_arclength(&s).unwrap();
        let k_jet = sc.curvature_jet(&t, 3);
        // Finite-difference turning rate of the tangent angle over ds.
        let d = Hp::ratio(PREC, 1, 100_000);
        let tp = sc.native_of_arclength(&(&s + &d)).unwrap();
        let tm = sc.native_of_arclength(&(&s - &d)).unwrap();
        let ang = |t: &Hp| {
            let ((tx, ty), _) = sc.tangent_normal(t);
            ty.atan2(&tx)
        };
        let fd = (ang(&tp) - ang(&tm)) / (Hp::from_i64(PREC, 2) * &d);
        assert!(
            (k_jet[0].clone() - fd).abs().to_f64() < 1e-6,
            "curvature vs turning rate"
        );
        // K' by finite differences of curvature.
        let kp = sc.curvature(&tp);
        let km = sc.curvature(&tm);
        let fd1 = (kp - km) / (Hp::from_i64(PREC, 2) * &d);
        assert!((k_jet[1].clone() - fd1).abs().to_f64() < 1e-6);
    }

    #[test]
    fn arclength_between_agrees_with_table() {
        let sc = Scatterer::new(
            "e".into(),
            CurveSpec::Ellipse {
                center: pair([0.0, 0.0]),
                semi_axes: pair([1.3, 1.0]),
                rotation: (0.0).into(),
            },
        )
        .unwrap();
        let t0 = Hp::ratio(PREC, 1, 5);
        let t1 = Hp::ratio(PREC, 4, 5);
        let direct = sc.arclength_between(&t0, &t1);
        let via_table = sc.arclength_of_native(&t1) - sc.arclength_of_native(&t0);
        assert!((direct - via_table).abs().to_f64() < 1e-70);
    }

    #[test]
    fn non_eclipse_pass_and_fail() {
        let good = equilateral_table(6.0);
        assert!(good.check_non_eclipse().is_ok());

        let collinear = Table::new(
            vec![
                (
                    "1".into(),
                    CurveSpec::Circle {
                        center: pair([0.0, 0.0]),
                        radius: (1.0).into(),
                    },
                ),
                (
                    "2".into(),
                    CurveSpec::Circle {
                        center: pair([4.0, 0.0]),
                        radius: (1.0).into(),
                    },
                ),
                (
                    "3".into(),
                    CurveSpec::Circle {
                        center: pair([8.0, 0.0]),
                        radius: (1.0).into(),
                    },
                ),
            ],
            DEFAULT_NON_ECLIPSE_MARGIN,
        )
        .unwrap();
        match collinear.check_non_eclipse() {
            Err(GeometryError::Eclipse { i, j, k, .. }) => {
                assert_eq!((i.as_str(), j.as_str(), k.as_str()), ("1", "3", "2"));
            }
            other => panic!("expected eclipse failure, got {other:?}"),
        }
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
format_version = 1

[[scatterer]]
kind = "circle"
label = "1"
center = [-3.0, 0.0]
radius = 1.0

[[scatterer]]
kind = "circle"
label = "2"
center = [3.0, 0.0]
radius = 1.0

[[scatterer]]
kind = "ellipse"
label = "3"
center = [0.0, 5.196152422706632]
semi_axes = [1.2, 1.0]
"#;
        let table = Table::from_toml_str(text).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.scatterers[2].label, "3");
        assert!(table.check_non_eclipse().is_ok());
        assert_eq!(table.hash.len(), 64);
        // Malformed config surfaces a parse error.
        assert!(matches!(
            Table::from_toml_str("[[scatterer]]\nkind = \"circle\""),
            Err(GeometryError::Parse(_))
        ));
    }

    #[test]
    fn nonconvex_fourier_rejected() {
        let bad = Scatterer::new(
            "b".into(),
            CurveSpec::FourierRadial {
                center: pair([0.0, 0.0]),
                cos_coeffs: reals(&[1.0, 0.0, 0.5]),
                sin_coeffs: reals(&[]),
            },
        );
        assert!(bad.is_err());
    }
}
