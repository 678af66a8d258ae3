use openbilliards_core::hp::{Rat, Scalar};
use openbilliards_core::series::{forward_l, CoefficientSet};

#[test]
fn weight_homogeneity() {
    let r = |n: i64, d: i64| Rat::new(n, d);
    let order = 6;
    let mut set = CoefficientSet::zeros((), order);
    set.a = vec![r(2, 3), r(-1, 5), r(3, 7), r(-2, 9), r(1, 4), r(0, 1)];
    set.gamma = vec![r(1, 7), r(3, 11), r(-1, 2), r(5, 13), r(0, 1), r(0, 1)];
    set.g = vec![r(5, 4), r(-3, 8), r(2, 5), r(1, 6), r(-1, 3), r(0, 1)];
    let s = r(1, 2);
    let sinv = r(2, 1);
    // a_k, gamma_k -> s^k; g_k -> s^(k-1)
    let mut scaled = set.clone();
    let mut pa = s.clone();
    for k in 0..order {
        scaled.a[k] = scaled.a[k].mul(&pa);
        scaled.gamma[k] = scaled.gamma[k].mul(&pa);
        pa = pa.mul(&s);
    }
    let mut pg = sinv.clone();
    for k in 0..order {
        scaled.g[k] = scaled.g[k].mul(&pg);
        pg = pg.mul(&s);
    }
    let l0 = forward_l(&set, (), order);
    let l1 = forward_l(&scaled, (), order);
    let mut ok = true;
    // expect L_{q,p} -> s^(p-1) L_{q,p}
    let mut sp = sinv.clone();
    for p in 0..=order {
        for q in 0..=p {
            let want = l0.get(q, p).mul(&sp);
            if want != *l1.get(q, p) {
                ok = false;
                eprintln!("mismatch at ({q},{p})");
            }
        }
        sp = sp.mul(&s);
    }
    assert!(ok, "not weight-homogeneous");
    eprintln!("exact weight homogeneity holds: L(q,p) -> s^(p-1) L(q,p)");
}
