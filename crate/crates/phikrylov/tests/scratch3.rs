use phikrylov::problems::make_problem;
use phikrylov::{integrate, EpirkScheme};

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

#[test]
#[ignore]
fn probe_allen_cahn_orders() {
    let n = 64;
    let tol = 1e-13;
    let prob = make_problem("allen-cahn", n).unwrap();
    let hs = [0.25, 0.125, 0.0625, 0.03125];
    let reference = integrate(EpirkScheme::Exprb5s3, &prob, 0.03125 / 8.0, 1e-14).unwrap();
    for scheme in [EpirkScheme::Epirk5p1, EpirkScheme::Exprb5s3, EpirkScheme::Epirk4s3] {
        let mut lh = Vec::new();
        let mut le = Vec::new();
        for &h in &hs {
            let out = integrate(scheme, &prob, h, tol).unwrap();
            let mut err = 0.0f64;
            for i in 0..prob.observable_dim {
                err = err.max((out.endpoint[i] - reference.endpoint[i]).abs());
            }
            println!("{:10} h={:<8.5} err={:.3e} substeps={}", scheme.id(), h, err, out.stats.substeps);
            lh.push(h.ln());
            le.push(err.max(1e-300).ln());
        }
        println!("{:10} slope = {:.2}", scheme.id(), fit_slope(&lh, &le));
    }
}
