use openbilliards_core::hp::{Hp, Scalar};
use openbilliards_core::series::{forward_l, invert_l, CoefficientSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(i: u64) -> CoefficientSet<Hp> {
    const PREC: u32 = 256;
    let order = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(42 + i);
    let mut set = CoefficientSet::<Hp>::zeros(PREC, order);
    let mut rand_in = |lo: f64, hi: f64| Hp::from_f64(PREC, rng.gen_range(lo..hi));
    set.a[0] = rand_in(0.1, 2.0);
    for k in 1..order - 1 {
        set.a[k] = rand_in(-1.0, 1.0);
    }
    set.g[0] = loop {
        let v = rand_in(-1.0, 1.0);
        if v.abs_f64() > 0.1 {
            break v;
        }
    };
    for k in 1..=3 {
        set.g[k] = rand_in(-1.0, 1.0);
    }
    for k in 0..order - 2 {
        set.gamma[k] = rand_in(-1.0, 1.0);
    }
    set
}

#[test]
fn trace_one() {
    const PREC: u32 = 256;
    let order = 6;
    let set = sample(17);
    let l = forward_l(&set, PREC, order);
    match invert_l(&l, 1e-40) {
        Ok(back) => {
            let mut worst = 0.0f64;
            for (x, y) in set.a.iter().zip(&back.a).chain(set.gamma.iter().zip(&back.gamma)).chain(set.g.iter().zip(&back.g)) {
                worst = worst.max((x - y).abs_f64());
            }
            eprintln!("set17: recovered, worst err {worst:.3e}");
            eprintln!("back gamma: {:?}", back.gamma.iter().map(Hp::to_f64).collect::<Vec<_>>());
        }
        Err(e) => eprintln!("set17: failed: {e:?}"),
    }
}
