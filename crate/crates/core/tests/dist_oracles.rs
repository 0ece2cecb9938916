//! Monte-Carlo oracles for the distribution library.
//!
//! Every CDF implementation is checked against brute-force sampling that is
//! independent of the quadrature / series code paths it validates.

use dwmlab_core::dist::{
    chi2_cdf, chi2_quantile, gx2_cdf, gx2_from_residual_law, noncentral_chi2_cdf, Gx2Params,
};
use dwmlab_core::linalg::Matrix;
use dwmlab_core::rng::Streams;

/// Empirical P(X <= x) from `n` draws of `sample`.
fn mc_cdf<F: FnMut() -> f64>(n: usize, x: f64, mut sample: F) -> f64 {
    let mut count = 0usize;
    for _ in 0..n {
        if sample() <= x {
            count += 1;
        }
    }
    count as f64 / n as f64
}

#[test]
fn chi2_cdf_matches_squared_normal_oracle() {
    let mut rng = Streams::new(101).stream("chi2-oracle", 0);
    let n = 10_000_000;
    let mut c_3841 = 0usize;
    let mut c_7879 = 0usize;
    for _ in 0..n {
        let z = rng.standard_normal();
        let g = z * z;
        if g <= 3.841 {
            c_3841 += 1;
        }
        if g <= 7.879 {
            c_7879 += 1;
        }
    }
    let emp_3841 = c_3841 as f64 / n as f64;
    let emp_7879 = c_7879 as f64 / n as f64;
    assert!((chi2_cdf(3.841, 1).unwrap() - emp_3841).abs() < 1e-3);
    assert!((chi2_cdf(7.879, 1).unwrap() - emp_7879).abs() < 1e-3);
    // the frozen reference values themselves
    assert!((chi2_cdf(3.841, 1).unwrap() - 0.950).abs() < 1e-3);
    assert!((chi2_cdf(7.879, 1).unwrap() - 0.995).abs() < 1e-3);
}

#[test]
fn chi2_quantile_known_points() {
    assert!((chi2_quantile(0.995, 1).unwrap() - 7.879).abs() < 1e-3);
    assert!((chi2_quantile(0.95, 1).unwrap() - 3.841).abs() < 1e-3);
    assert!((chi2_quantile(0.90, 1).unwrap() - 2.706).abs() < 1e-3);
}

#[test]
fn noncentral_chi2_matches_shifted_normal_oracle() {
    // (Z + 2)^2 ~ noncentral chi2 with n=1, lam=4
    let mut rng = Streams::new(102).stream("ncx2-oracle", 0);
    let x = 7.879;
    let emp = mc_cdf(10_000_000, x, || {
        let z = rng.standard_normal() + 2.0;
        z * z
    });
    let ana = noncentral_chi2_cdf(x, 1, 4.0).unwrap();
    assert!((ana - emp).abs() < 1e-3, "ana={ana} emp={emp}");
}

#[test]
fn gx2_two_term_hand_built_oracle() {
    // 2 (Z1 + 1)^2 + 0.5 Z2^2
    let p = Gx2Params::new(vec![2.0, 0.5], vec![1, 1], vec![1.0, 0.0]).unwrap();
    let mut rng = Streams::new(103).stream("gx2-oracle", 0);
    for &x in &[1.0, 5.0, 10.0] {
        let mut rng_x = rng.clone();
        let emp = mc_cdf(10_000_000, x, || {
            let z1 = rng_x.standard_normal() + 1.0;
            let z2 = rng_x.standard_normal();
            2.0 * z1 * z1 + 0.5 * z2 * z2
        });
        let ana = gx2_cdf(&p, x);
        assert!(!ana.fallback);
        assert!((ana.value - emp).abs() < 2e-3, "x={x}: ana={} emp={emp}", ana.value);
        rng.next_u64();
    }
}

#[test]
fn gx2_randomized_parameter_suite() {
    // 20 random parameter sets, 5 x-points each, 10^6 draws per set
    // (the dedicated acceptance run uses 10^7; this keeps unit runtime sane)
    let streams = Streams::new(104);
    let mut gen = streams.stream("gx2-params", 0);
    for set in 0..20 {
        let k = 1 + gen.below(4);
        let mut weights = Vec::new();
        let mut dofs = Vec::new();
        let mut lams = Vec::new();
        for _ in 0..k {
            weights.push(0.1 + 4.9 * gen.uniform());
            dofs.push(1 + gen.below(3));
            lams.push(3.0 * gen.uniform());
        }
        let p = Gx2Params::new(weights, dofs, lams).unwrap();
        let mut draw_rng = streams.stream("gx2-draws", set as u64);
        let n = 1_000_000;
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            draws.push(p.sample(&mut draw_rng));
        }
        let mean = p.mean();
        for &frac in &[0.4, 0.8, 1.0, 1.3, 2.0] {
            let x = mean * frac;
            let emp = draws.iter().filter(|&&d| d <= x).count() as f64 / n as f64;
            let ana = gx2_cdf(&p, x);
            assert!(
                (ana.value - emp).abs() < 3.5e-3,
                "set={set} x={x}: ana={} emp={emp} (fallback={})",
                ana.value,
                ana.fallback
            );
        }
    }
}

#[test]
fn residual_law_singular_covariance_pseudo_inverse_path() {
    // rank-1 S with the mean inside range(S): the zero-eigenvalue term is
    // dropped and the mapped law still matches brute force
    let v = [1.0, 2.0];
    let mut s = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            s[(i, j)] = 0.5 * v[i] * v[j];
        }
    }
    let q = Matrix::from_rows(&[&[0.8, 0.1], &[0.1, 0.5]]);
    let m = [0.7 * v[0], 0.7 * v[1]];
    let params = gx2_from_residual_law(&m, &s, &q).unwrap();
    assert_eq!(params.terms(), 1, "rank-1 S must yield a single term");

    let q_inv = q.inverse().unwrap();
    let mut rng = Streams::new(321).stream("sing", 0);
    let n = 400_000;
    let mut draws = Vec::with_capacity(n);
    let scale = (0.5f64).sqrt();
    for _ in 0..n {
        let z = rng.standard_normal();
        let r = [m[0] + scale * v[0] * z, m[1] + scale * v[1] * z];
        draws.push(dwmlab_core::linalg::quad_form(&q_inv, &r));
    }
    let mean = params.mean();
    for &frac in &[0.4, 0.8, 1.2, 2.0] {
        let x = mean * frac;
        let emp = draws.iter().filter(|&&d| d <= x).count() as f64 / n as f64;
        let ana = gx2_cdf(&params, x);
        assert!((ana.value - emp).abs() < 5e-3, "x={x}: ana={} emp={emp}", ana.value);
    }
}

#[test]
fn gx2_cdf_monotone_and_bounded_on_grid() {
    let p = Gx2Params::new(vec![2.0, 0.5, 1.3], vec![1, 2, 1], vec![1.0, 0.0, 0.4]).unwrap();
    let mut prev = 0.0;
    for i in 0..100 {
        let x = 0.25 * i as f64;
        let v = gx2_cdf(&p, x).value;
        assert!((0.0..=1.0).contains(&v));
        assert!(v + 1e-7 >= prev, "non-monotone at x={x}: {v} < {prev}");
        prev = v;
    }
}

#[test]
fn residual_law_random_quadratic_forms() {
    // r ~ N(m, S); g = r^T Q^-1 r must follow the mapped gx2 law
    let streams = Streams::new(105);
    let mut gen = streams.stream("law-params", 0);
    for set in 0..10 {
        let n = 3;
        // random SPD via A A^T + eps I
        let mut make_spd = |scale: f64| {
            let mut a = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = gen.standard_normal() * scale;
                }
            }
            a.matmul(&a.transpose()).add(&Matrix::identity(n).scale(0.05 * scale * scale))
        };
        let s = make_spd(1.0);
        let q = make_spd(0.8);
        let m: Vec<f64> = (0..n).map(|_| gen.standard_normal()).collect();

        let params = gx2_from_residual_law(&m, &s, &q).unwrap();
        let q_inv = q.inverse().unwrap();
        let l = s.cholesky().unwrap();

        let mut draw_rng = streams.stream("law-draws", set as u64);
        let nd = 400_000;
        let mut draws = Vec::with_capacity(nd);
        for _ in 0..nd {
            let z: Vec<f64> = (0..n).map(|_| draw_rng.standard_normal()).collect();
            let r: Vec<f64> = (0..n)
                .map(|i| m[i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
                .collect();
            draws.push(dwmlab_core::linalg::quad_form(&q_inv, &r));
        }
        let mean = params.mean();
        for &frac in &[0.4, 0.8, 1.0, 1.3, 2.0] {
            let x = mean * frac;
            let emp = draws.iter().filter(|&&d| d <= x).count() as f64 / nd as f64;
            let ana = gx2_cdf(&params, x);
            assert!(
                (ana.value - emp).abs() < 5e-3,
                "set={set} x={x}: ana={} emp={emp}",
                ana.value
            );
        }
    }
}
