mod common;

use common::{dual_qp_oracle, oracle_decision, rbf, two_blobs};
use extremo::svm::{kkt_residuals, solve_smo, KernelSpec, SvmParams, WorkingSet};

#[test]
fn smo_agrees_with_projected_gradient_dual() {
    let (x, y) = two_blobs(200, 11);
    let gamma = 0.5;
    for working_set in [WorkingSet::MaxViolatingPair, WorkingSet::SecondOrder] {
        let params = SvmParams {
            c: 1.0,
            kernel: KernelSpec::Rbf { gamma },
            tol: 1e-3,
            working_set,
            ..SvmParams::default()
        };
        let solution = solve_smo(&x, &y, &params).unwrap();
        assert!(solution.stats.converged);
        let alphas = solution.alphas.clone();
        let model = solution.into_model(&x, &y, &params);
        let kkt = kkt_residuals(&model, &x, &y, &alphas).unwrap();
        assert!(
            kkt.iter().all(|&r| r < params.tol),
            "max KKT residual {}",
            kkt.iter().cloned().fold(0.0, f64::max)
        );

        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(gamma, a, b)).collect()).collect();
        let (oracle_alphas, oracle_bias) = dual_qp_oracle(&k, &y, params.c, 3000);
        let mut agree = 0;
        for i in 0..100 {
            for j in 0..100 {
                let p = [-4.0 + 8.0 * i as f64 / 99.0, -4.0 + 8.0 * j as f64 / 99.0];
                let row: Vec<f64> = x.iter().map(|xi| rbf(gamma, xi, &p)).collect();
                let reference = oracle_decision(&row, &y, &oracle_alphas, oracle_bias);
                if (model.decision(&p).unwrap() > 0.0) == (reference > 0.0) {
                    agree += 1;
                }
            }
        }
        assert!(agree >= 9900, "{working_set:?}: {agree} of 10000 grid points agree");
    }
}
