//! Periodic orbit solver.
//!
//! A periodic orbit visiting the scatterer sequence `w` is a critical point
//! of the total chord length `L(t) = sum_k h(t_k, t_{k+1})` over boundary
//! positions. We solve the criticality system with a damped Newton method
//! in the native boundary parameters; the Hessian is cyclic tridiagonal
//! (each position only couples to its two flight neighbours), which a
//! Thomas sweep plus a rank-one corner correction solves in linear time.
//!
//! Orbits of a homoclinic family `tau sigma^n` are continued in `n` by
//! replicating one period of the `sigma` block in the previous solution,
//! which starts Newton close enough to converge in a handful of steps.

use thiserror::Error;

use crate::coding::{homoclinic_family, AdmissibleWord, WordError};
use crate::dynamics::{differential_from_parts, DynamicsError, PhasePoint};
use crate::geometry::{GeometryError, Table};
use crate::hp::{Hp, Mat2};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("word rejected: {0}")]
    Word(#[from] WordError),
    #[error("word references scatterer {label} but the table has {count}")]
    LabelOutOfRange { label: u8, count: usize },
    #[error("Newton did not reach tolerance on '{word}': residual {residual:.3e} after {iterations} iterations")]
    NotConverged {
        word: String,
        residual: f64,
        iterations: usize,
    },
    #[error("orbit '{word}' is not hyperbolic: |trace| = {trace_abs:.6} <= 2")]
    NonHyperbolic { word: String, trace_abs: f64 },
    #[error("orbit '{word}' is not realized: collision {index} is blocked or escapes")]
    NotRealized { word: String, index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// A solved periodic orbit with its linearization data.
#[derive(Clone, Debug)]
pub struct PeriodicOrbit {
    pub word: AdmissibleWord,
    /// Collision points in arc-length coordinates, one per word symbol.
    pub points: Vec<PhasePoint>,
    /// Native boundary parameters of the collision points.
    pub natives: Vec<Hp>,
    /// Total geometric length.
    pub length: Hp,
    /// Product of the per-flight differentials over one period.
    pub monodromy: Mat2,
    /// Contracting multiplier `lambda`, the eigenvalue of the monodromy
    /// inside the unit circle, in absolute value.
    pub multiplier: Hp,
    /// Lyapunov exponent per collision: `-ln(lambda) / period`.
    pub lyapunov: Hp,
    /// Final reflection-law violation `max_k |r_in - r_out|`.
    pub residual: f64,
    pub precision: u32,
}

/// A solved homoclinic family `tau sigma^n` together with its limits.
pub struct HomoclinicData {
    /// The core periodic orbit `sigma`.
    pub base: PeriodicOrbit,
    /// Family orbits in increasing `n` (index 0 is `n_min`).
    pub orbits: Vec<PeriodicOrbit>,
    pub n_min: usize,
    pub n_max: usize,
    /// Accumulation points `x_inf(k)` of the family for `|k| <= k_max`,
    /// read off the largest-`n` orbit.
    pub x_infinity: Vec<(i64, PhasePoint)>,
    /// Length defect limit fitted over even `n`.
    pub l_infinity_even: Hp,
    /// Length defect limit fitted over odd `n`.
    pub l_infinity_odd: Hp,
    /// Average of the two parity fits.
    pub l_infinity: Hp,
}

/// Newton iteration cap.
const MAX_ITERS: usize = 60;
/// Step-halving cap per iteration.
const MAX_HALVINGS: usize = 8;

/// Solver tolerance on the reflection-law residual at `prec` bits.
pub fn solver_tolerance(prec: u32) -> f64 {
    10f64.powf(-0.28 * prec as f64)
}

/// Second partials of one chord length w.r.t. the two native parameters.
struct EdgeData {
    h11: Hp,
    h12: Hp,
    h22: Hp,
}

fn edge_data(table: &Table, i: usize, t0: &Hp, j: usize, t1: &Hp) -> EdgeData {
    let jet = crate::dynamics::chord_jet2_native(table, i, t0, j, t1, 2);
    let prec = jet.prec();
    let two = Hp::from_i64(prec, 2);
    EdgeData {
        h11: jet.get(2, 0) * &two,
        h12: jet.get(1, 1).clone(),
        h22: jet.get(0, 2) * &two,
    }
}

/// Gradient of the total length and its worst normalized entry.
fn gradient(table: &Table, word: &[usize], t: &[Hp], speeds: &[Hp]) -> (Vec<Hp>, f64) {
    let p = t.len();
    let prec = t[0].prec();
    let mut g = vec![Hp::zero(prec); p];
    for k in 0..p {
        let k1 = (k + 1) % p;
        let jet = crate::dynamics::chord_jet2_native(table, word[k], &t[k], word[k1], &t[k1], 1);
        g[k] = &g[k] + jet.get(1, 0);
        g[k1] = &g[k1] + jet.get(0, 1);
    }
    let mut worst = 0.0f64;
    for k in 0..p {
        worst = worst.max((&g[k] / &speeds[k]).abs().to_f64());
    }
    (g, worst)
}

/// Solves the cyclic tridiagonal system `A x = rhs` (diagonal `b`, lower
/// `a`, upper `c`, equal corner entries `corner`) by a Thomas sweep plus a
/// Sherman-Morrison rank-one update. Falls back to dense elimination for
/// tiny systems where the bands overlap.
fn solve_cyclic_tridiagonal(
    a: &[Hp],
    b: &[Hp],
    c: &[Hp],
    corner: &Hp,
    rhs: &[Hp],
) -> Vec<Hp> {
    let p = b.len();
    let prec = b[0].prec();
    assert!(p >= 3, "period-2 systems are handled densely by the caller");
    if p == 3 {
        // Bands and corners fill the whole matrix; solve densely.
        let mut m = vec![vec![Hp::zero(prec); p]; p];
        for k in 0..p {
            m[k][k] = b[k].clone();
            if k + 1 < p {
                m[k][k + 1] = c[k].clone();
            }
            if k >= 1 {
                m[k][k - 1] = a[k].clone();
            }
        }
        m[0][p - 1] = &m[0][p - 1] + corner;
        m[p - 1][0] = &m[p - 1][0] + corner;
        return crate::hp::solve_linear(m, rhs.to_vec()).expect("Hessian is nonsingular");
    }
    // A = T + u v^T with u = (gamma, 0, .., 0, corner)^T,
    // v = (1, 0, .., 0, corner/gamma)^T.
    let gamma = -&b[0];
    let mut bb: Vec<Hp> = b.to_vec();
    bb[0] = &b[0] - &gamma;
    bb[p - 1] = &b[p - 1] - corner * corner / &gamma;
    let thomas = |rhs: &[Hp]| -> Vec<Hp> {
        let mut cp = vec![Hp::zero(prec); p];
        let mut dp = vec![Hp::zero(prec); p];
        cp[0] = &c[0] / &bb[0];
        dp[0] = &rhs[0] / &bb[0];
        for k in 1..p {
            let denom = &bb[k] - &a[k] * &cp[k - 1];
            if k < p - 1 {
                cp[k] = &c[k] / &denom;
            }
            dp[k] = (&rhs[k] - &a[k] * &dp[k - 1]) / &denom;
        }
        let mut x = vec![Hp::zero(prec); p];
        x[p - 1] = dp[p - 1].clone();
        for k in (0..p - 1).rev() {
            x[k] = &dp[k] - &cp[k] * &x[k + 1];
        }
        x
    };
    let y = thomas(rhs);
    let mut u = vec![Hp::zero(prec); p];
    u[0] = gamma.clone();
    u[p - 1] = corner.clone();
    let z = thomas(&u);
    let vy = &y[0] + corner / &gamma * &y[p - 1];
    let vz = &z[0] + corner / &gamma * &z[p - 1];
    let factor = vy / (Hp::one(prec) + vz);
    (0..p).map(|k| &y[k] - &z[k] * &factor).collect()
}

/// Default initial guess: each point starts where its boundary is closest
/// to the midpoint of the two neighbouring obstacles' centers.
fn default_init(table: &Table, word: &[usize], prec: u32) -> Vec<Hp> {
    let p = word.len();
    (0..p)
        .map(|k| {
            let prev = table.scatterer(word[(k + p - 1) % p]).spec.center_f64();
            let next = table.scatterer(word[(k + 1) % p]).spec.center_f64();
            let target = [(prev[0] + next[0]) / 2.0, (prev[1] + next[1]) / 2.0];
            let sc = table.scatterer(word[k]);
            let span = sc.spec.native_span_f64();
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..512 {
                let t = span * i as f64 / 512.0;
                let pnt = sc.spec.point_f64(t);
                let d2 = (pnt[0] - target[0]).powi(2) + (pnt[1] - target[1]).powi(2);
                if d2 < best.0 {
                    best = (d2, t);
                }
            }
            Hp::from_f64(prec, best.1)
        })
        .collect()
}

fn word_indices(table: &Table, word: &AdmissibleWord) -> Result<Vec<usize>, SolverError> {
    let idx: Vec<usize> = (0..word.len()).map(|k| word.scatterer_at(k)).collect();
    for (k, &i) in idx.iter().enumerate() {
        if i >= table.len() {
            return Err(SolverError::LabelOutOfRange {
                label: word.symbols()[k],
                count: table.len(),
            });
        }
    }
    Ok(idx)
}

/// Solves the periodic orbit for `word` at `prec` bits.
pub fn solve_orbit(table: &Table, word: &AdmissibleWord, prec: u32) -> Result<PeriodicOrbit, SolverError> {
    let idx = word_indices(table, word)?;
    let init = default_init(table, &idx, prec);
    solve_orbit_from(table, word, init, prec)
}

/// Solves the periodic orbit starting Newton from the given native
/// parameters (continuation entry point).
pub fn solve_orbit_from(
    table: &Table,
    word: &AdmissibleWord,
    init: Vec<Hp>,
    prec: u32,
) -> Result<PeriodicOrbit, SolverError> {
    let idx = word_indices(table, word)?;
    let p = idx.len();
    assert_eq!(init.len(), p, "initial guess size must match the word");
    let tol = solver_tolerance(prec);

    let mut t: Vec<Hp> = init.into_iter().map(|v| v.with_prec(prec)).collect();
    let speeds = |t: &[Hp]| -> Vec<Hp> {
        (0..p)
            .map(|k| {
                let j = table.scatterer(idx[k]).speed_jet(&t[k], 0);
                j.c[0].clone()
            })
            .collect()
    };

    let (mut g, mut resid) = {
        let sp = speeds(&t);
        gradient(table, &idx, &t, &sp)
    };
    let mut iterations = 0;
    while resid > tol && iterations < MAX_ITERS {
        iterations += 1;
        // Assemble the cyclic tridiagonal Hessian from per-edge jets.
        let mut diag = vec![Hp::zero(prec); p];
        let mut lower = vec![Hp::zero(prec); p];
        let mut upper = vec![Hp::zero(prec); p];
        let mut corner = Hp::zero(prec);
        for k in 0..p {
            let k1 = (k + 1) % p;
            let e = edge_data(table, idx[k], &t[k], idx[k1], &t[k1]);
            diag[k] = &diag[k] + &e.h11;
            diag[k1] = &diag[k1] + &e.h22;
            if k1 == (k + 1) % p && k < p - 1 {
                upper[k] = &upper[k] + &e.h12;
                lower[k1] = &lower[k1] + &e.h12;
            } else {
                // wrap edge p-1 -> 0
                corner = &corner + &e.h12;
            }
        }
        let neg_g: Vec<Hp> = g.iter().map(|v| -v).collect();
        let delta = if p == 2 {
            // Both off-diagonal couplings point at the same neighbour.
            let m = vec![
                vec![diag[0].clone(), &upper[0] + &corner],
                vec![&lower[1] + &corner, diag[1].clone()],
            ];
            crate::hp::solve_linear(m, neg_g).expect("Hessian is nonsingular")
        } else {
            solve_cyclic_tridiagonal(&lower, &diag, &upper, &corner, &neg_g)
        };

        // Damped update: halve until the residual stops exceeding the old.
        let mut accepted = false;
        let mut scale = Hp::one(prec);
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<Hp> = (0..p).map(|k| &t[k] + &delta[k] * &scale).collect();
            let sp_t = speeds(&trial);
            let (g_t, r_t) = gradient(table, &idx, &trial, &sp_t);
            if r_t < resid || r_t < tol {
                t = trial;
                g = g_t;
                resid = r_t;
                accepted = true;
                break;
            }
            scale = scale / Hp::from_i64(prec, 2);
        }
        if !accepted {
            break;
        }
    }
    if resid > tol {
        return Err(SolverError::NotConverged {
            word: word.to_string(),
            residual: resid,
            iterations,
        });
    }

    finalize_orbit(table, word, idx, t, resid, prec)
}

/// Builds the orbit record: collision data, length, monodromy, multiplier.
fn finalize_orbit(
    table: &Table,
    word: &AdmissibleWord,
    idx: Vec<usize>,
    t: Vec<Hp>,
    residual: f64,
    prec: u32,
) -> Result<PeriodicOrbit, SolverError> {
    let p = idx.len();
    let one = Hp::one(prec);
    let positions: Vec<(Hp, Hp)> = (0..p).map(|k| table.scatterer(idx[k]).point(&t[k])).collect();
    let mut chords = Vec::with_capacity(p);
    let mut rs = Vec::with_capacity(p);
    let mut length = Hp::zero(prec);
    for k in 0..p {
        let k1 = (k + 1) % p;
        let dx = &positions[k1].0 - &positions[k].0;
        let dy = &positions[k1].1 - &positions[k].1;
        let chord = (dx.square() + dy.square()).sqrt();
        let ((tx, ty), _) = table.scatterer(idx[k]).tangent_normal(&t[k]);
        rs.push((&dx * &tx + &dy * &ty) / &chord);
        length = length + &chord;
        chords.push(chord);
    }
    // Realizability: the outgoing ray from each point must reach the next
    // point of the word, not some other obstacle (occlusion check).
    for k in 0..p {
        let k1 = (k + 1) % p;
        let flight = crate::dynamics::flight_from_native(table, idx[k], &t[k], &rs[k])
            .map_err(|_| SolverError::NotRealized {
                word: word.to_string(),
                index: k,
            })?;
        let hit_err = (&flight.chord - &chords[k]).abs().to_f64();
        if flight.next.scatterer != idx[k1] || hit_err > 1e-20 {
            return Err(SolverError::NotRealized {
                word: word.to_string(),
                index: k,
            });
        }
    }

    let mut monodromy = Mat2::identity(prec);
    for k in 0..p {
        let k1 = (k + 1) % p;
        let nu0 = (&one - rs[k].square()).sqrt();
        let nu1 = (&one - rs[k1].square()).sqrt();
        let k0 = table.scatterer(idx[k]).curvature(&t[k]);
        let k1c = table.scatterer(idx[k1]).curvature(&t[k1]);
        let d = differential_from_parts(&chords[k], &k0, &k1c, &nu0, &nu1);
        monodromy = d.mul(&monodromy);
    }
    let trace_abs = monodromy.trace().abs().to_f64();
    let multiplier = monodromy
        .contracting_eigenvalue()
        .ok_or(SolverError::NonHyperbolic {
            word: word.to_string(),
            trace_abs,
        })?;
    let lyapunov = -multiplier.ln() / Hp::from_i64(prec, p as i64);

    let points = (0..p)
        .map(|k| {
            let s = table.scatterer(idx[k]).arclength_of_native(&t[k]);
            PhasePoint::new(idx[k], s, rs[k].clone())
        })
        .collect();
    Ok(PeriodicOrbit {
        word: word.clone(),
        points,
        natives: t,
        length,
        monodromy,
        multiplier,
        lyapunov,
        residual,
        precision: prec,
    })
}

/// Continuation seed for `tau sigma^(n+1)` from a solved `tau sigma^n`:
/// duplicate one core pair at an even position near the middle of the
/// sigma block.
fn grow_family_init(prev: &[Hp]) -> Vec<Hp> {
    let len = prev.len();
    let mut q = (len / 2 + 1) / 2 * 2;
    q = q.clamp(4, len);
    let mut init: Vec<Hp> = prev[..q].to_vec();
    init.push(prev[q - 2].clone());
    init.push(prev[q - 1].clone());
    init.extend_from_slice(&prev[q..]);
    init
}

/// Solves the homoclinic family `tau sigma^n` for `n` in
/// `n_min ..= n_max`, and extracts the accumulation points and the length
/// defect limit.
pub fn solve_homoclinic(
    table: &Table,
    sigma: &AdmissibleWord,
    tau: &AdmissibleWord,
    n_min: usize,
    n_max: usize,
    k_max: usize,
    prec: u32,
) -> Result<HomoclinicData, SolverError> {
    assert!(n_min >= 1 && n_max >= n_min + 5, "need a usable n range");
    let max_label = table.len() as u8;
    let base = solve_orbit(table, sigma, prec)?;

    let mut orbits = Vec::with_capacity(n_max - n_min + 1);
    let mut prev_natives: Option<Vec<Hp>> = None;
    for n in 1..=n_max {
        let word = homoclinic_family(sigma, tau, n, max_label)?;
        let init = match &prev_natives {
            None => default_init(table, &word_indices(table, &word)?, prec),
            Some(prev) => grow_family_init(prev),
        };
        let orbit = solve_orbit_from(table, &word, init, prec)?;
        prev_natives = Some(orbit.natives.clone());
        if n >= n_min {
            orbits.push(orbit);
        }
    }

    // x_inf(k): for k >= 0 read collision k of the longest orbit; negative
    // k wrap from the far end (the orbit tail closes back through tau).
    let last = orbits.last().expect("n range nonempty");
    let period = last.points.len() as i64;
    let mut x_infinity = Vec::new();
    for k in -(k_max as i64)..=k_max as i64 {
        let idx = if k >= 0 { k } else { period + k };
        x_infinity.push((k, last.points[idx as usize].clone()));
    }

    // Length defect d_n = L(h_n) - (n+1) L(sigma) -> L_inf, approached as
    // c lambda^n with a parity-dependent c; fit each parity separately
    // with basis [1, lambda^n, lambda^(1.5 n)].
    let lam = &base.multiplier;
    let fit_parity = |parity: usize| -> Hp {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for (i, orbit) in orbits.iter().enumerate() {
            let n = n_min + i;
            if n % 2 != parity {
                continue;
            }
            let n_hp = Hp::from_i64(prec, n as i64);
            let ln_lam = lam.ln();
            let l1 = (&n_hp * &ln_lam).exp();
            let l15 = (&n_hp * &ln_lam * Hp::ratio(prec, 3, 2)).exp();
            rows.push(vec![Hp::one(prec), l1, l15]);
            let defect =
                &orbit.length - Hp::from_i64(prec, (n + 1) as i64) * &base.length;
            ys.push(defect);
        }
        let (coef, _cond) =
            crate::hp::least_squares(&rows, &ys).expect("parity fit is overdetermined");
        coef[0].clone()
    };
    let l_infinity_even = fit_parity(0);
    let l_infinity_odd = fit_parity(1);
    let l_infinity = (&l_infinity_even + &l_infinity_odd) / Hp::from_i64(prec, 2);

    Ok(HomoclinicData {
        base,
        orbits,
        n_min,
        n_max,
        x_infinity,
        l_infinity_even,
        l_infinity_odd,
        l_infinity,
    })
}
