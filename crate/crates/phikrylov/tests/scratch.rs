use phikrylov::problems::{exact_solution, make_problem};
use phikrylov::{integrate, EpirkScheme};

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

#[test]
#[ignore]
fn probe_orders() {
    let n = 200;
    let tol = 1e-13;
    let prob = make_problem("semilinear", n).unwrap();
    let k = prob.observable_dim;
    let exact = exact_solution("semilinear", n, 1.0).unwrap();

    // Fine reference via the fifth-order scheme.
    let t0 = std::time::Instant::now();
    let h_ref = 0.0125 / 8.0;
    let reference = integrate(EpirkScheme::Exprb5s3, &prob, h_ref, 1e-14).unwrap();
    println!("reference: {:.2?}", t0.elapsed());
    let mut ref_vs_exact = 0.0f64;
    for i in 0..k {
        ref_vs_exact = ref_vs_exact.max((reference.endpoint[i] - exact[i]).abs());
    }
    println!("reference vs exact-solution floor: {:.3e}", ref_vs_exact);

    for scheme in EpirkScheme::all() {
        let hs: Vec<f64> = if scheme.order() == 4 {
            vec![0.1, 0.05, 0.025, 0.0125]
        } else {
            vec![0.2, 0.1, 0.05, 0.025]
        };
        let mut log_h = Vec::new();
        let mut log_e_exact = Vec::new();
        let mut log_e_self = Vec::new();
        for &h in &hs {
            let t0 = std::time::Instant::now();
            let out = integrate(scheme, &prob, h, tol).unwrap();
            let mut err_exact = 0.0f64;
            let mut err_self = 0.0f64;
            for i in 0..k {
                err_exact = err_exact.max((out.endpoint[i] - exact[i]).abs());
                err_self = err_self.max((out.endpoint[i] - reference.endpoint[i]).abs());
            }
            println!(
                "{:10} h={:<8.4} err_exact={:.3e} err_self={:.3e} substeps={} avg_m={:.1} ({:.2?})",
                scheme.id(),
                h,
                err_exact,
                err_self,
                out.stats.substeps,
                out.stats.avg_krylov_dim(),
                t0.elapsed()
            );
            log_h.push(h.ln());
            log_e_exact.push(err_exact.max(1e-300).ln());
            log_e_self.push(err_self.max(1e-300).ln());
        }
        println!(
            "{:10} slope_exact={:.2} slope_self={:.2}",
            scheme.id(),
            fit_slope(&log_h, &log_e_exact),
            fit_slope(&log_h, &log_e_self)
        );
    }
}
