//! The billiard map in collision coordinates.
//!
//! A phase point is a boundary position (arc length) together with
//! `r = sin(phi)`, the tangential component of the outgoing unit velocity.
//! One application of the map: leave the boundary along the outgoing ray,
//! hit the first obstacle in the way, reflect. The chord length between
//! consecutive collision points acts as a generating function for the map:
//! its first partials reproduce `-r` at the start and `r` at the end, which
//! is what makes the map symplectic for `ds ^ dr` and lets us expand it to
//! any order through chord-length jets (see [`map_jet`]).

use thiserror::Error;

use crate::geometry::{GeometryError, Scatterer, Table};
use crate::hp::{Hp, Mat2};
use crate::jets::{Jet1, Jet2, Map2};

/// Minimal flight distance for a candidate hit; anything closer is the
/// source collision re-detected and gets ignored.
pub const RHO_TIE_TOL: f64 = 1e-30;

/// A collision counts as tangential (and the trajectory as untrustworthy)
/// when `1 - |r|` drops below this at the new collision.
pub const TANGENCY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("trajectory escapes: no obstacle ahead of scatterer {from}")]
    Escape { from: usize },
    #[error("tangential collision at scatterer {at} (1 - |r| = {deficit:.3e})")]
    Tangent { at: usize, deficit: f64 },
    #[error("|r| = {r} >= 1 is not an outgoing direction")]
    BadDirection { r: f64 },
    #[error("ray-boundary solve failed to converge on scatterer {on}")]
    NoConvergence { on: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Point of the collision space: scatterer index, arc-length position, and
/// tangential velocity component `r = sin(phi)` of the *outgoing* ray.
#[derive(Clone, Debug)]
pub struct PhasePoint {
    pub scatterer: usize,
    pub s: Hp,
    pub r: Hp,
}

impl PhasePoint {
    pub fn new(scatterer: usize, s: Hp, r: Hp) -> Self {
        PhasePoint { scatterer, s, r }
    }

    pub fn prec(&self) -> u32 {
        self.s.prec().max(self.r.prec())
    }
}

/// Everything produced by one application of the map.
pub struct Flight {
    pub next: PhasePoint,
    /// Chord length between the two collision points.
    pub chord: Hp,
    /// cos(phi) at departure.
    pub nu0: Hp,
    /// cos(phi) at arrival.
    pub nu1: Hp,
    /// Native boundary parameter of the arrival point.
    pub t1: Hp,
}

struct RayHit {
    rho: Hp,
    t: Hp,
}

/// First forward intersection of the ray `p0 + rho d` with one scatterer
/// boundary. Conic boundaries get the exact quadratic; radial Fourier
/// boundaries get a sampled bracket plus safeguarded Newton refinement.
fn ray_hit(sc: &Scatterer, p0: &(Hp, Hp), d: &(Hp, Hp), prec: u32) -> Option<RayHit> {
    use crate::geometry::CurveSpec::*;
    match &sc.spec {
        Circle { center, radius } => {
            let ox = &p0.0 - center[0].to_hp(prec);
            let oy = &p0.1 - center[1].to_hp(prec);
            let b = &d.0 * &ox + &d.1 * &oy;
            let r2 = radius.to_hp(prec).square();
            let q = ox.square() + oy.square() - r2;
            let disc = b.square() - &q;
            if !(disc > Hp::zero(prec)) {
                return None;
            }
            let root = disc.sqrt();
            let rho = pick_forward_root(&(-&b - &root), &(-&b + &root), prec)?;
            let hx = &ox + &d.0 * &rho;
            let hy = &oy + &d.1 * &rho;
            Some(RayHit {
                rho,
                t: hy.atan2(&hx),
            })
        }
        Ellipse {
            center,
            semi_axes,
            rotation,
        } => {
            // Stretch the rotated ellipse to a unit circle; the ray stays a
            // straight line with a non-unit direction vector.
            let rot = rotation.to_hp(prec);
            let (c, s) = (rot.cos(), rot.sin());
            let a_inv = semi_axes[0].to_hp(prec).recip();
            let b_inv = semi_axes[1].to_hp(prec).recip();
            let ox = &p0.0 - center[0].to_hp(prec);
            let oy = &p0.1 - center[1].to_hp(prec);
            let px = (&c * &ox + &s * &oy) * &a_inv;
            let py = (-&s * &ox + &c * &oy) * &b_inv;
            let dx = (&c * &d.0 + &s * &d.1) * &a_inv;
            let dy = (-&s * &d.0 + &c * &d.1) * &b_inv;
            let a2 = dx.square() + dy.square();
            let b1 = &dx * &px + &dy * &py;
            let c1 = px.square() + py.square() - Hp::one(prec);
            let disc = b1.square() - &a2 * &c1;
            if !(disc > Hp::zero(prec)) {
                return None;
            }
            let root = disc.sqrt();
            let rho = pick_forward_root(&((-&b1 - &root) / &a2), &((-&b1 + &root) / &a2), prec)?;
            let hx = &px + &dx * &rho;
            let hy = &py + &dy * &rho;
            Some(RayHit {
                rho,
                t: hy.atan2(&hx),
            })
        }
        FlatSegment { start, end, .. } => {
            let len = sc.spec.native_span_f64();
            let sx = start[0].to_hp(prec);
            let sy = start[1].to_hp(prec);
            let dxf = end[0].to_hp(prec) - &sx;
            let dyf = end[1].to_hp(prec) - &sy;
            let len_hp = (dxf.square() + dyf.square()).sqrt();
            let ux = dxf / &len_hp;
            let uy = dyf / &len_hp;
            // p0 + rho d = a + t u  =>  [d, -u] (rho, t)^T = a - p0.
            let det = -(&d.0 * &uy) + &d.1 * &ux;
            if det.abs().to_f64() < 1e-14 * len {
                return None; // parallel: grazing a flat wall is a miss
            }
            let bx = sx - &p0.0;
            let by = sy - &p0.1;
            let rho = (-(&bx * &uy) + &by * &ux) / &det;
            let t = (&d.0 * &by - &d.1 * &bx) / &det;
            if rho.to_f64() <= RHO_TIE_TOL || t < Hp::zero(prec) || t > len_hp {
                return None;
            }
            Some(RayHit { rho, t })
        }
        FourierRadial { .. } => {
            // Bracket sign changes of g(t) = cross(P(t) - p0, d) in double
            // precision, then polish each root at full precision.
            const SCAN: usize = 1024;
            let p0f = [p0.0.to_f64(), p0.1.to_f64()];
            let df = [d.0.to_f64(), d.1.to_f64()];
            let g_f64 = |t: f64| {
                let p = sc.spec.point_f64(t);
                (p[0] - p0f[0]) * df[1] - (p[1] - p0f[1]) * df[0]
            };
            let tau = std::f64::consts::TAU;
            let mut best: Option<RayHit> = None;
            let mut prev_t = 0.0;
            let mut prev_g = g_f64(0.0);
            for k in 1..=SCAN {
                let t = tau * k as f64 / SCAN as f64;
                let g = g_f64(t);
                if prev_g == 0.0 || prev_g.signum() != g.signum() {
                    if let Some(hit) = polish_fourier_root(sc, p0, d, prec, prev_t, t) {
                        best = match best {
                            Some(b) if b.rho <= hit.rho => Some(b),
                            _ => Some(hit),
                        };
                    }
                }
                prev_t = t;
                prev_g = g;
            }
            best
        }
    }
}

fn pick_forward_root(r1: &Hp, r2: &Hp, prec: u32) -> Option<Hp> {
    let tol = Hp::from_f64(prec, RHO_TIE_TOL);
    if *r1 > tol {
        Some(r1.clone())
    } else if *r2 > tol {
        Some(r2.clone())
    } else {
        None
    }
}

fn polish_fourier_root(
    sc: &Scatterer,
    p0: &(Hp, Hp),
    d: &(Hp, Hp),
    prec: u32,
    lo: f64,
    hi: f64,
) -> Option<RayHit> {
    let mut lo = Hp::from_f64(prec, lo);
    let mut hi = Hp::from_f64(prec, hi);
    let g = |t: &Hp| {
        let (x, y) = sc.pos_jet(t, 1);
        let gv = (&x.c[0] - &p0.0) * &d.1 - (&y.c[0] - &p0.1) * &d.0;
        let gp = &x.c[1] * &d.1 - &y.c[1] * &d.0;
        (gv, gp)
    };
    let (glo, _) = g(&lo);
    let lo_sign = glo.is_sign_negative();
    let mut t = (&lo + &hi) / Hp::from_i64(prec, 2);
    let target = 2f64.powi(-(prec as i32) + 8);
    for _ in 0..prec.ilog2() as usize * 8 + 40 {
        let (gv, gp) = g(&t);
        // Maintain the bracket for the bisection fallback.
        if gv.is_sign_negative() == lo_sign {
            lo = t.clone();
        } else {
            hi = t.clone();
        }
        let step = &gv / &gp;
        let tn = &t - &step;
        let tn = if tn <= lo || tn >= hi {
            (&lo + &hi) / Hp::from_i64(prec, 2)
        } else {
            tn
        };
        let done = step.abs().to_f64() < target;
        t = tn;
        if done {
            break;
        }
    }
    let (px, py) = sc.point(&t);
    let rho = (&px - &p0.0) * &d.0 + (&py - &p0.1) * &d.1;
    if rho.to_f64() <= RHO_TIE_TOL {
        return None;
    }
    Some(RayHit { rho, t })
}

/// One application of the billiard map, with flight data.
pub fn billiard_flight(table: &Table, x: &PhasePoint) -> Result<Flight, DynamicsError> {
    let prec = x.prec();
    if x.r.abs() >= Hp::one(prec) {
        return Err(DynamicsError::BadDirection { r: x.r.to_f64() });
    }
    let sc = table.scatterer(x.scatterer);
    let t0 = sc.native_of_arclength(&x.s)?;
    flight_from_native(table, x.scatterer, &t0, &x.r)
}

/// Same as [`billiard_flight`] but starting from a native boundary
/// parameter, skipping the arc-length lookup (the solver path).
pub fn flight_from_native(
    table: &Table,
    scatterer: usize,
    t0: &Hp,
    r: &Hp,
) -> Result<Flight, DynamicsError> {
    let prec = t0.prec().max(r.prec());
    let sc = table.scatterer(scatterer);
    let p0 = sc.point(t0);
    let ((tx, ty), (nx, ny)) = sc.tangent_normal(t0);
    let nu0 = (Hp::one(prec) - r.square()).sqrt();
    let d = (r * &tx + &nu0 * &nx, r * &ty + &nu0 * &ny);

    let mut hit: Option<(usize, RayHit)> = None;
    for (j, target) in table.scatterers.iter().enumerate() {
        if j == scatterer {
            continue; // a ray leaving a convex obstacle cannot return to it
        }
        if let Some(h) = ray_hit(target, &p0, &d, prec) {
            hit = match hit {
                Some((jb, hb)) if hb.rho <= h.rho => Some((jb, hb)),
                _ => Some((j, h)),
            };
        }
    }
    let (j, h) = hit.ok_or(DynamicsError::Escape { from: scatterer })?;

    let target = table.scatterer(j);
    let ((tx1, ty1), _) = target.tangent_normal(&h.t);
    let r1 = &d.0 * &tx1 + &d.1 * &ty1;
    let deficit = 1.0 - r1.abs().to_f64();
    if deficit < TANGENCY_TOL {
        return Err(DynamicsError::Tangent { at: j, deficit });
    }
    let nu1 = (Hp::one(prec) - r1.square()).sqrt();
    let s1 = target.arclength_of_native(&h.t);
    Ok(Flight {
        next: PhasePoint::new(j, s1, r1),
        chord: h.rho,
        nu0,
        nu1,
        t1: h.t,
    })
}

/// One application of the billiard map.
pub fn billiard_step(table: &Table, x: &PhasePoint) -> Result<PhasePoint, DynamicsError> {
    billiard_flight(table, x).map(|f| f.next)
}

/// The 2x2 differential of the map along the flight from `x0` to `x1`, in
/// the collision coordinates `(s, r)`.
pub fn differential(table: &Table, x0: &PhasePoint, x1: &PhasePoint) -> Result<Mat2, DynamicsError> {
    let prec = x0.prec().max(x1.prec());
    let sc0 = table.scatterer(x0.scatterer);
    let sc1 = table.scatterer(x1.scatterer);
    let t0 = sc0.native_of_arclength(&x0.s)?;
    let t1 = sc1.native_of_arclength(&x1.s)?;
    let p0 = sc0.point(&t0);
    let p1 = sc1.point(&t1);
    let chord = ((&p1.0 - &p0.0).square() + (&p1.1 - &p0.1).square()).sqrt();
    let k0 = sc0.curvature(&t0);
    let k1 = sc1.curvature(&t1);
    let nu0 = (Hp::one(prec) - x0.r.square()).sqrt();
    let nu1 = (Hp::one(prec) - x1.r.square()).sqrt();
    Ok(differential_from_parts(&chord, &k0, &k1, &nu0, &nu1))
}

/// The differential assembled from chord length, curvatures, and `cos(phi)`
/// at the two endpoints.
pub fn differential_from_parts(chord: &Hp, k0: &Hp, k1: &Hp, nu0: &Hp, nu1: &Hp) -> Mat2 {
    let a = (chord * k0 + nu0) / nu1;
    let b = chord / (nu0 * nu1);
    let c = chord * k0 * k1 + k0 * nu1 + k1 * nu0;
    let d = (chord * k1 + nu1) / nu0;
    Mat2::new(-a, -b, -c, -d)
}

/// Chord length between boundary points near `(i, t0)` and `(j, t1)`, as a
/// two-variable jet in the *native* parameter displacements.
pub fn chord_jet2_native(
    table: &Table,
    i: usize,
    t0: &Hp,
    j: usize,
    t1: &Hp,
    order: usize,
) -> Jet2 {
    let (xi, yi) = table.scatterer(i).pos_jet(t0, order);
    let (xj, yj) = table.scatterer(j).pos_jet(t1, order);
    let dx = Jet2::from_jet1_v(&xj, order).sub(&Jet2::from_jet1_u(&xi, order));
    let dy = Jet2::from_jet1_v(&yj, order).sub(&Jet2::from_jet1_u(&yi, order));
    dx.mul(&dx).add(&dy.mul(&dy)).truncate(order).sqrt()
}

/// Taylor jet of the native parameter displacement as a function of the
/// arc-length displacement at `(scatterer, t0)`.
fn native_of_arclen_jet(sc: &Scatterer, t0: &Hp, order: usize) -> Jet1 {
    let speed = sc.speed_jet(t0, order.max(1));
    speed.antiderivative().truncate(order.max(1)).revert()
}

/// Chord length jet in *arc-length* displacements at both endpoints.
pub fn chord_jet2(table: &Table, i: usize, t0: &Hp, j: usize, t1: &Hp, order: usize) -> Jet2 {
    let h_nat = chord_jet2_native(table, i, t0, j, t1, order);
    let du = native_of_arclen_jet(table.scatterer(i), t0, order);
    let dv = native_of_arclen_jet(table.scatterer(j), t1, order);
    h_nat.compose_pair(
        &Jet2::from_jet1_u(&du, order),
        &Jet2::from_jet1_v(&dv, order),
    )
}

/// Taylor expansion of one billiard step around the orbit segment starting
/// at `x`, to the given order, in displacement coordinates
/// `(delta s, delta r)`. Also returns the image point.
///
/// The expansion comes from the generating identities: writing `h` for the
/// chord-length jet, the next position solves
/// `d1 h(ds0, ds1) = -(r0 + dr0)` implicitly (jet-Newton), and the next
/// direction is `dr1 = d2 h(ds0, ds1(ds0, dr0)) - r1`.
pub fn map_jet(table: &Table, x: &PhasePoint, order: usize) -> Result<(Map2, PhasePoint), DynamicsError> {
    let flight = billiard_flight(table, x)?;
    let sc0 = table.scatterer(x.scatterer);
    let t0 = sc0.native_of_arclength(&x.s)?;
    let jet = step_jet_from_native(table, x.scatterer, &t0, &x.r, flight.next.scatterer, &flight.t1, &flight.next.r, order);
    Ok((jet, flight.next))
}

/// Jet of one step with both endpoints pinned (native parameters), used by
/// [`map_jet`] and directly by orbit-level expansions.
#[allow(clippy::too_many_arguments)]
pub fn step_jet_from_native(
    table: &Table,
    i: usize,
    t0: &Hp,
    r0: &Hp,
    j: usize,
    t1: &Hp,
    r1: &Hp,
    order: usize,
) -> Map2 {
    let prec = t0.prec().max(r0.prec());
    let h = chord_jet2(table, i, t0, j, t1, order + 2);
    let d1h = h.partial_u();
    let d2h = h.partial_v();

    // Solve d1h(u, w) + r0 + v = 0 for w(u, v) by jet-space Newton. The
    // derivative dF/dw has constant term d12 h = nu nu'/L != 0.
    let u_var = Jet2::var_u(Hp::zero(prec), order);
    let d12h = d1h.partial_v();
    let mut w = Jet2::zero(order, prec);
    let f_of = |w: &Jet2| -> Jet2 {
        let mut f = d1h.truncate(order).compose_pair(&u_var, w);
        f.c[0] = &f.c[0] + r0;
        // + v
        let mut v = Jet2::zero(order, prec);
        if order >= 1 {
            v.set(0, 1, Hp::one(prec));
        }
        f.add(&v)
    };
    let iters = (usize::BITS - (order + 1).leading_zeros()) as usize + 2;
    for _ in 0..iters {
        let f = f_of(&w);
        let fp = d12h.truncate(order).compose_pair(&u_var, &w);
        w = w.sub(&f.mul(&fp.recip()).truncate(order));
        // Keep the origin fixed exactly.
        w.c[0] = Hp::zero(prec);
    }
    let resid = f_of(&w).max_abs_f64();
    assert!(
        resid < 2f64.powi(-(prec as i32 / 2)),
        "implicit jet solve stalled (residual {resid:.3e})"
    );

    let mut dr1 = d2h.truncate(order).compose_pair(&u_var, &w);
    let c0 = (&dr1.c[0] - r1).abs().to_f64();
    assert!(
        c0 < 2f64.powi(-(prec as i32 / 2)),
        "generating identity failed at the image point (err {c0:.3e})"
    );
    dr1.c[0] = Hp::zero(prec);

    Map2 { x: w, y: dr1 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{equilateral_table, pair, reals, CurveSpec, Table, DEFAULT_NON_ECLIPSE_MARGIN};

    const PREC: u32 = 256;

    /// Two unit circles whose centers are 6 apart: every quantity of the
    /// bouncing orbit is known in closed form.
    fn two_circles() -> Table {
        Table::new(
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
                        center: pair([6.0, 0.0]),
                        radius: (1.0).into(),
                    },
                ),
            ],
            DEFAULT_NON_ECLIPSE_MARGIN,
        )
        .unwrap()
    }

    #[test]
    fn perpendicular_bounce_closed_form() {
        let table = two_circles();
        let x = PhasePoint::new(0, Hp::zero(PREC), Hp::zero(PREC));
        let f = billiard_flight(&table, &x).unwrap();
        assert_eq!(f.next.scatterer, 1);
        assert!((f.chord.clone() - Hp::from_i64(PREC, 4)).abs().to_f64() < 1e-70);
        assert!(f.next.r.abs().to_f64() < 1e-70);
        assert!((f.next.s.clone() - Hp::pi(PREC)).abs().to_f64() < 1e-70);

        // Differential of the perpendicular step: -[[5, 4], [6, 5]].
        let d = differential(&table, &x, &f.next).unwrap();
        let expect = [[-5i64, -4], [-6, -5]];
        for (got, want) in [
            (&d.a, expect[0][0]),
            (&d.b, expect[0][1]),
            (&d.c, expect[1][0]),
            (&d.d, expect[1][1]),
        ] {
            assert!((got.clone() - Hp::from_i64(PREC, want)).abs().to_f64() < 1e-70);
        }
        assert!((d.det() - Hp::one(PREC)).abs().to_f64() < 1e-70);

        // Monodromy of the closed bounce: trace 98, multiplier (5-2sqrt6)^2.
        let back = differential(&table, &f.next, &x).unwrap();
        let mono = back.mul(&d);
        assert!((mono.trace() - Hp::from_i64(PREC, 98)).abs().to_f64() < 1e-70);
        let lam = mono.contracting_eigenvalue().unwrap();
        let six = Hp::from_i64(PREC, 6);
        let expect = (Hp::from_i64(PREC, 5) - Hp::from_i64(PREC, 2) * six.sqrt()).square();
        assert!((lam - expect).abs().to_f64() < 1e-70);
    }

    #[test]
    fn escape_and_tangency_guards() {
        let table = two_circles();
        // Fire away from the second circle: nothing ahead.
        let x = PhasePoint::new(0, Hp::pi(PREC), Hp::zero(PREC));
        assert!(matches!(
            billiard_step(&table, &x),
            Err(DynamicsError::Escape { from: 0 })
        ));

        // A ray aimed a hair inside the tangent line to circle 2 collides
        // almost tangentially and must be rejected. Departure point t = pi/4
        // on circle 1, where the upper tangent ray is a valid outgoing
        // direction.
        let t0 = Hp::pi(PREC) / Hp::from_i64(PREC, 4);
        let p0 = (t0.cos(), t0.sin());
        let cx = Hp::from_i64(PREC, 6);
        let (vx, vy) = (&cx - &p0.0, -&p0.1);
        let dist = (vx.square() + vy.square()).sqrt();
        let alpha = dist.recip().asin();
        let beta = &alpha * (Hp::one(PREC) - Hp::ratio(PREC, 1, 10_000_000_000_000_000));
        // Rotate the center-pointing unit vector counterclockwise by beta.
        let ux = &vx / &dist;
        let uy = &vy / &dist;
        let (cb, sb) = (beta.cos(), beta.sin());
        let d = (&cb * &ux - &sb * &uy, &sb * &ux + &cb * &uy);
        // r at departure: d . tangent, with tangent (-sin t0, cos t0).
        let r0 = -&d.0 * t0.sin() + &d.1 * t0.cos();
        let x = PhasePoint::new(0, t0.clone(), r0);
        match billiard_step(&table, &x) {
            Err(DynamicsError::Tangent { at: 1, deficit }) => {
                assert!(deficit < TANGENCY_TOL);
            }
            other => panic!("expected tangency rejection, got {other:?}"),
        }
    }

    #[test]
    fn reflection_law_and_time_reversal() {
        let table = equilateral_table(6.0);
        let s = Hp::ratio(PREC, 2, 7);
        let r = Hp::ratio(PREC, -1, 3);
        let x = PhasePoint::new(0, s.clone(), r.clone());
        let f = billiard_flight(&table, &x).unwrap();
        // Reversing the outgoing direction at the image retraces the chord.
        let back = PhasePoint::new(f.next.scatterer, f.next.s.clone(), -&f.next.r);
        let g = billiard_flight(&table, &back).unwrap();
        assert_eq!(g.next.scatterer, 0);
        assert!((g.next.s.clone() - &s).abs().to_f64() < 1e-70);
        assert!((g.next.r.clone() + &r).abs().to_f64() < 1e-70);
        assert!((g.chord.clone() - &f.chord).abs().to_f64() < 1e-70);
    }

    #[test]
    fn generating_identities_by_finite_differences() {
        let table = equilateral_table(6.0);
        let x = PhasePoint::new(0, Hp::ratio(PREC, 1, 5), Hp::ratio(PREC, -1, 3));
        let f = billiard_flight(&table, &x).unwrap();
        let (i, j) = (0usize, f.next.scatterer);
        let chord_of = |s0: &Hp, s1: &Hp| -> Hp {
            let t0 = table.scatterer(i).native_of_arclength(s0).unwrap();
            let t1 = table.scatterer(j).native_of_arclength(s1).unwrap();
            let p0 = table.scatterer(i).point(&t0);
            let p1 = table.scatterer(j).point(&t1);
            ((&p1.0 - &p0.0).square() + (&p1.1 - &p0.1).square()).sqrt()
        };
        let eps = Hp::ratio(PREC, 1, 1_000_000_000_000_000); // 1e-15
        let two = Hp::from_i64(PREC, 2);
        let d1 = (chord_of(&(&x.s + &eps), &f.next.s) - chord_of(&(&x.s - &eps), &f.next.s))
            / (&two * &eps);
        let d2 = (chord_of(&x.s, &(&f.next.s + &eps)) - chord_of(&x.s, &(&f.next.s - &eps)))
            / (&two * &eps);
        assert!(
            (d1 + &x.r).abs().to_f64() < 1e-25,
            "d1 h must equal -r at departure"
        );
        assert!(
            (d2 - &f.next.r).abs().to_f64() < 1e-25,
            "d2 h must equal r at arrival"
        );
    }

    #[test]
    fn differential_is_unimodular_across_phase_space() {
        let table = equilateral_table(6.0);
        // Deterministic pseudo-random sweep over start scatterer, s, r.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next_u = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut checked = 0;
        for _ in 0..1000 {
            let i = (next_u() * 3.0) as usize % 3;
            let s = Hp::from_f64(PREC, next_u() * std::f64::consts::TAU);
            let r = Hp::from_f64(PREC, (next_u() - 0.5) * 1.8);
            let x = PhasePoint::new(i, s, r);
            let Ok(f) = billiard_flight(&table, &x) else {
                continue; // escapes are expected over the full sweep
            };
            let d = differential(&table, &x, &f.next).unwrap();
            assert!((d.det() - Hp::one(PREC)).abs().to_f64() < 1e-30);
            checked += 1;
        }
        assert!(checked > 80, "too few non-escaping samples: {checked}");
    }

    #[test]
    fn map_jet_matches_differential_and_is_symplectic() {
        let table = equilateral_table(6.0);
        let x = PhasePoint::new(0, Hp::ratio(PREC, 3, 7), Hp::ratio(PREC, -1, 2));
        let order = 6;
        let (jet, next) = map_jet(&table, &x, order).unwrap();
        let d = differential(&table, &x, &next).unwrap();
        let lin = jet.linear_part();
        for (got, want) in [
            (&lin[0][0], &d.a),
            (&lin[0][1], &d.b),
            (&lin[1][0], &d.c),
            (&lin[1][1], &d.d),
        ] {
            assert!(
                (got.clone() - want).abs().to_f64() < 1e-60,
                "jet linear part disagrees with the closed-form differential"
            );
        }
        // Jacobian determinant jet of a symplectic map is identically 1.
        // Differentiating drops one order, so the determinant is only
        // trustworthy below the jet's top degree.
        let det = jet.jacobian_det().truncate(order - 1);
        let mut err = (det.c[0].clone() - Hp::one(PREC)).abs().to_f64();
        for c in det.c.iter().skip(1) {
            err = err.max(c.abs().to_f64());
        }
        assert!(err < 1e-55, "det jet deviates from 1 by {err:.3e}");
    }

    #[test]
    fn map_jet_predicts_nearby_steps() {
        let table = equilateral_table(6.0);
        let x = PhasePoint::new(
            1,
            Hp::pi(PREC) + Hp::ratio(PREC, 1, 10),
            Hp::ratio(PREC, 1, 20),
        );
        let order = 8;
        let (jet, _) = map_jet(&table, &x, order).unwrap();
        let ds = Hp::ratio(PREC, 1, 10_000);
        let dr = Hp::ratio(PREC, -1, 15_000);
        let y = PhasePoint::new(1, &x.s + &ds, &x.r + &dr);
        let fy = billiard_flight(&table, &y).unwrap();
        let f0 = billiard_flight(&table, &x).unwrap();
        let (pred_ds, pred_dr) = jet.eval(&ds, &dr);
        let err_s = (&fy.next.s - &f0.next.s - pred_ds).abs().to_f64();
        let err_r = (&fy.next.r - &f0.next.r - pred_dr).abs().to_f64();
        // Truncation error ~ |delta|^(order+1) ~ 1e-36 times coefficient growth.
        assert!(err_s < 1e-27 && err_r < 1e-27, "err_s {err_s:.3e} err_r {err_r:.3e}");
    }

    #[test]
    fn flat_wall_reflection() {
        // A circle facing a vertical wall; perpendicular bounce at height 0.
        let table = Table::new(
            vec![
                (
                    "1".into(),
                    CurveSpec::Circle {
                        center: pair([0.0, 0.0]),
                        radius: (1.0).into(),
                    },
                ),
                (
                    "w".into(),
                    CurveSpec::FlatSegment {
                        start: pair([4.0, -3.0]),
                        end: pair([4.0, 3.0]),
                        // Travel is +y; the circle sits on the left.
                        normal_side: -1,
                    },
                ),
            ],
            DEFAULT_NON_ECLIPSE_MARGIN,
        )
        .unwrap();
        let x = PhasePoint::new(0, Hp::zero(PREC), Hp::zero(PREC));
        let f = billiard_flight(&table, &x).unwrap();
        assert_eq!(f.next.scatterer, 1);
        assert!((f.chord.clone() - Hp::from_i64(PREC, 3)).abs().to_f64() < 1e-70);
        // Hit point (4, 0) sits at native t = 3 on the wall.
        assert!((f.next.s.clone() - Hp::from_i64(PREC, 3)).abs().to_f64() < 1e-70);
        assert!(f.next.r.abs().to_f64() < 1e-70);
        // Bounce straight back.
        let g = billiard_flight(&table, &f.next).unwrap();
        assert_eq!(g.next.scatterer, 0);
        assert!(g.next.s.abs().to_f64() < 1e-70);
        // Differential with K = 0 on the wall: -[[L K + nu, L], [K, 1]].
        let d = differential(&table, &x, &f.next).unwrap();
        assert!((d.a.clone() + Hp::from_i64(PREC, 4)).abs().to_f64() < 1e-70);
        assert!((d.b.clone() + Hp::from_i64(PREC, 3)).abs().to_f64() < 1e-70);
        assert!((d.c.clone() + Hp::from_i64(PREC, 1)).abs().to_f64() < 1e-70);
        assert!((d.d.clone() + Hp::from_i64(PREC, 1)).abs().to_f64() < 1e-70);
    }
}
