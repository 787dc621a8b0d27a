use pgada::math::{gaussian_sample, Matrix, RngStream};
use pgada::transport::{exact_ot_small, sinkhorn};
use rand::Rng;
use std::time::Instant;

fn main() {
    // acceptance-1 family: U(0,1) costs, n,m <= 50, tol=1e-9
    let rng = RngStream::new(77, 0);
    let t = Instant::now();
    let mut worst_iters = 0;
    for k in 0..100u64 {
        let s = rng.split(k);
        let mut r = s.rng();
        let n = 2 + (r.random::<u64>() % 49) as usize;
        let m = 2 + (r.random::<u64>() % 49) as usize;
        let c = Matrix::from_fn(n, m, |_, _| r.random::<f64>()).unwrap();
        let a = vec![1.0 / n as f64; n];
        let b = vec![1.0 / m as f64; m];
        let beta = [0.3, 0.5, 0.9][k as usize % 3];
        let p = sinkhorn(&c, &a, &b, beta, 1e-9, 10_000).unwrap();
        assert!(p.converged() && p.marginal_violation() < 1e-9, "case {k}");
        worst_iters = worst_iters.max(p.iterations());
    }
    println!("acceptance-1 family: worst iters {worst_iters}, total {:.2?}", t.elapsed());

    // acceptance-2 family: n=m<=6, beta=0.999, cost within 2% of exact
    let rng = RngStream::new(78, 0);
    let t = Instant::now();
    let mut worst_rel: f64 = 0.0;
    let mut worst_low: f64 = 0.0;
    let mut unconverged = 0;
    for k in 0..100u64 {
        let s = rng.split(k);
        let nn = 2 + (k as usize % 5);
        let g = gaussian_sample(s.split(9), 0.0, 1.0, (nn, nn)).unwrap();
        let c = Matrix::from_fn(nn, nn, |i, j| 0.25 + g.get(i, j).abs()).unwrap();
        let u = vec![1.0 / nn as f64; nn];
        let (exact, _) = exact_ot_small(&c, &u, &u).unwrap();
        let p = sinkhorn(&c, &u, &u, 0.999, 1e-9, 10_000).unwrap();
        if !p.converged() { unconverged += 1; }
        let rel = (p.transport_cost() - exact) / exact;
        worst_rel = worst_rel.max(rel);
        worst_low = worst_low.min(rel);
        assert!(rel.abs() <= 0.02, "case {k}: rel gap {rel}");
    }
    println!("acceptance-2: worst rel +{worst_rel:.2e} / {worst_low:.2e}, unconverged {unconverged}, total {:.2?}", t.elapsed());
}
