use chrono::NaiveDate;
use proptest::prelude::*;

use stelar::admm::{admm_factor_update, penalty_policy, AdmmState, FactorSubproblem};
use stelar::epi::{seir_simulate, sir_simulate, SeirConfig, SirConfig};
use stelar::eval::{mae, rmse};
use stelar::io::{read_csv, write_csv, FillPolicy, TensorBundle};
use stelar::model::ModelFile;
use stelar::engine::{predict_slabs, FittedStelar, Hyperparams, StopReason};
use stelar::sir_fit::{SirComponent, SirParams};
use stelar::tensor::{khatri_rao, refold, reconstruct, unfold, DenseTensor3, FactorModel, Matrix, Mode};

fn dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..5, 1usize..5, 1usize..6)
}

fn tensor() -> impl Strategy<Value = DenseTensor3> {
    dims().prop_flat_map(|d| {
        prop::collection::vec(0.0f64..100.0, d.0 * d.1 * d.2)
            .prop_map(move |data| DenseTensor3::new(d, data).unwrap())
    })
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(0.0f64..2.0, rows * cols)
        .prop_map(move |v| Matrix::from_row_slice(rows, cols, &v))
}

fn model() -> impl Strategy<Value = FactorModel> {
    (dims(), 1usize..4).prop_flat_map(|((m, n, l), k)| {
        (matrix(m, k), matrix(n, k), matrix(l, k))
            .prop_map(|(a, b, c)| FactorModel::new(a, b, c).unwrap())
    })
}

fn sir_component() -> impl Strategy<Value = SirComponent> {
    (0.01f64..0.99, 0.001f64..0.3, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(s, i, b, gamma)| {
        SirComponent { beta: b / (s + i), gamma, s, i }
    })
}

proptest! {
    #[test]
    fn refold_inverts_unfold(t in tensor()) {
        for mode in Mode::ALL {
            prop_assert_eq!(refold(&unfold(&t, mode), mode, t.dims()).unwrap(), t.clone());
        }
    }

    #[test]
    fn khatri_rao_is_columnwise_kronecker(p in matrix(3, 2), q in matrix(4, 2)) {
        let kr = khatri_rao(&p, &q).unwrap();
        prop_assert_eq!(kr.shape(), (12, 2));
        for k in 0..2 {
            let kron = p.column(k).kronecker(&q.column(k));
            prop_assert!((kr.column(k) - kron).norm() <= 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_sum_of_outer_products(f in model()) {
        let x = reconstruct(&f).unwrap();
        let (m, n, l) = f.dims();
        for i in 0..m {
            for j in 0..n {
                for t in 0..l {
                    let v: f64 = (0..f.rank()).map(|k| f.a[(i, k)] * f.b[(j, k)] * f.c[(t, k)]).sum();
                    prop_assert!((x.get(i, j, t) - v).abs() <= 1e-12 * v.max(1.0));
                }
            }
        }
    }

    #[test]
    fn admm_output_is_nonnegative(
        phi in matrix(8, 3),
        x in prop::collection::vec(-1.0f64..1.0, 8 * 5),
        mu in 0.0f64..1.0,
        iters in 1usize..30,
    ) {
        let x = Matrix::from_row_slice(8, 5, &x);
        let gram = phi.transpose() * &phi;
        let rho = penalty_policy(&gram);
        let sub = FactorSubproblem::plain(x.transpose() * &phi, gram, mu);
        let state = admm_factor_update(AdmmState::new(Matrix::zeros(5, 3), rho), &sub, iters).unwrap();
        prop_assert!(state.primal.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn rmse_bounds_mae(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..60)) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (r, m) = (rmse(&p, &t).unwrap(), mae(&p, &t).unwrap());
        prop_assert!(r >= m * (1.0 - 1e-12));
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn compartments_conserve_population(
        c in sir_component(),
        sigma in 0.0f64..1.0,
        e_share in 0.0f64..0.5,
        horizon in 1usize..300,
    ) {
        let sir = sir_simulate(&SirConfig { s0: c.s, i0: c.i, beta: c.beta, gamma: c.gamma, horizon }).unwrap();
        let e0 = c.s * e_share;
        let seir = seir_simulate(&SeirConfig {
            s0: c.s - e0, e0, i0: c.i, beta: c.beta, sigma, gamma: c.gamma, horizon,
        }).unwrap();
        for traj in [sir, seir] {
            let n0 = traj.total(0);
            for t in 0..=horizon {
                prop_assert!((traj.total(t) - n0).abs() < 1e-10);
                prop_assert!(traj.susceptible[t] >= -1e-12 && traj.infected[t] >= -1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_preserves_tensor(t in tensor(), day in 0i64..3000) {
        let (m, n, _) = t.dims();
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Duration::days(day);
        let bundle = TensorBundle::new(
            t,
            (0..m).map(|i| format!("loc{i}")).collect(),
            (0..n).map(|j| format!("sig {j}")).collect(),
            start,
        ).unwrap();
        let mut buf = Vec::new();
        write_csv(&bundle, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), FillPolicy::Error).unwrap();
        prop_assert_eq!(back, bundle);
    }

    #[test]
    fn model_file_round_trip_is_exact(f in model(), comps in prop::collection::vec(sir_component(), 3)) {
        let rank = f.rank();
        let (m, n, l) = f.dims();
        let fitted = FittedStelar {
            model: f,
            sir: SirParams::from_components(&comps[..rank]),
            initial_objective: 1.0,
            objective_trace: vec![0.5],
            validation_trace: vec![0.25],
            best_iteration: 0,
            stopped_reason: StopReason::MaxIters,
            holdout: 2,
        };
        let hp = Hyperparams { rank, ..Default::default() };
        let file = ModelFile::new(
            &fitted,
            &hp,
            (0..m).map(|i| i.to_string()).collect(),
            (0..n).map(|j| j.to_string()).collect(),
            NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
        ).unwrap();
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &file);
        let restored = back.to_fitted().unwrap();
        prop_assert_eq!(restored.observed_len(), l + 2);
        let bits = |t: DenseTensor3| t.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let original = FittedStelar { model: fitted.model.absorb_weights(), ..fitted.clone() };
        prop_assert_eq!(bits(predict_slabs(&restored, 3).unwrap()), bits(predict_slabs(&original, 3).unwrap()));
    }
}
