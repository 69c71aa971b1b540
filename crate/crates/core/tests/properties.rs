use bayesfolio::data::{ema_experts, EmaSpec, Frequency, ReturnsDataset};
use bayesfolio::evaluation::{backtest, regret_vs_hindsight};
use bayesfolio::linalg::{kron, rbf_gram, unvec, vec};
use bayesfolio::models::{ArModel, ArPrior, GwModel, GwPrior, VariationalModel};
use bayesfolio::sampling::sample_wishart;
use bayesfolio::simplex::project_simplex;
use bayesfolio::vb::{alg_vb, solve_inner, SolverConfig};
use bayesfolio::{DecisionSet, Matrix, RngSeed, SpdMatrix, Vector};
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn returns(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = RngSeed(seed).rng();
    Matrix::from_fn(n, d, |_, j| {
        0.01 * (j + 1) as f64 + 0.2 * (rng.gen::<f64>() - 0.5)
    })
}

/// Enumerates every support pattern and keeps the one satisfying the KKT
/// conditions of the simplex projection.
fn brute_force_projection(v: &Vector) -> Vector {
    let d = v.len();
    for mask in 1u32..(1 << d) {
        let support: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
        let tau = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let inside = support.iter().all(|&i| v[i] - tau > 0.0);
        let outside = (0..d).filter(|i| mask & (1 << i) == 0).all(|i| v[i] - tau <= 0.0);
        if inside && outside {
            return Vector::from_fn(d, |i, _| if mask & (1 << i) != 0 { v[i] - tau } else { 0.0 });
        }
    }
    unreachable!("some support pattern satisfies the KKT conditions")
}

fn converged_objective<M: VariationalModel>(model: &M, delta: &Vector, lambda: f64) -> f64 {
    let config = SolverConfig {
        lambda,
        inner_tol: 1e-13,
        max_inner: 20_000,
        ..SolverConfig::default()
    };
    let sol = solve_inner(model, model.initial_state().unwrap(), delta, &config).unwrap();
    model.objective(&sol.state, delta, lambda).unwrap()
}

fn simplex_point(raw: &[f64]) -> Vector {
    let v = Vector::from_iterator(raw.len(), raw.iter().map(|x| x + 1e-3));
    let s = v.sum();
    v / s
}

fn dataset(returns: Matrix) -> ReturnsDataset {
    let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
    let dates = (0..returns.nrows())
        .map(|i| start + chrono::Days::new(i as u64))
        .collect();
    let names = (0..returns.ncols()).map(|j| format!("x{j}")).collect();
    ReturnsDataset::new(dates, names, returns, Frequency::Daily).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_matches_kkt_enumeration(v in (1usize..=6).prop_flat_map(|d| prop::collection::vec(-3.0..3.0f64, d))) {
        let v = Vector::from_vec(v);
        let fast = project_simplex(&v).unwrap();
        let slow = brute_force_projection(&v);
        prop_assert!((&fast - &slow).amax() < 1e-12, "{fast} vs {slow}");
        prop_assert!((fast.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kron_is_associative(a in matrix(2, 3), b in matrix(3, 2), c in matrix(2, 2)) {
        let left = kron(&kron(&a, &b), &c);
        let right = kron(&a, &kron(&b, &c));
        prop_assert!((&left - &right).norm() <= 1e-12 * left.norm().max(1.0));
    }

    #[test]
    fn vec_of_product_is_kron_times_vec(a in matrix(2, 3), x in matrix(3, 4), b in matrix(4, 2)) {
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        prop_assert!((&lhs - &rhs).amax() < 1e-12);
        prop_assert_eq!(unvec(&vec(&x), 3, 4).unwrap(), x);
    }

    #[test]
    fn rbf_gram_is_always_factorizable(
        times in prop::collection::vec(0.0..200.0f64, 1..=200),
        gamma in 0.05..500.0f64,
    ) {
        prop_assert!(rbf_gram(&times, gamma).is_ok());
    }

    #[test]
    fn ema_experts_ignore_column_order(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let (n, m) = (300, 4);
        let r = returns(n, m, seed);
        let mut order: Vec<usize> = (0..m).collect();
        let mut rng = RngSeed(perm_seed).rng();
        for i in (1..m).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let permuted = Matrix::from_fn(n, m, |t, j| r[(t, order[j])]);
        let spec = EmaSpec::default();
        let a = ema_experts(&dataset(r), &spec).unwrap();
        let b = ema_experts(&dataset(permuted), &spec).unwrap();
        prop_assert!((&a.returns - &b.returns).amax() < 1e-14);
    }

    #[test]
    fn metrics_do_not_depend_on_evaluation_order(seed in any::<u64>()) {
        let test = returns(30, 4, seed);
        let weights: Vec<Vector> = (0..4)
            .map(|k| simplex_point(&[k as f64, 1.0, 2.0, (3 - k) as f64]))
            .collect();
        let forward: Vec<_> = weights.iter().map(|w| backtest("s", w, &test).unwrap()).collect();
        let mut backward: Vec<_> = weights.iter().rev().map(|w| backtest("s", w, &test).unwrap()).collect();
        backward.reverse();
        for (f, b) in forward.iter().zip(&backward) {
            prop_assert_eq!(&f.cumulative_wealth_path, &b.cumulative_wealth_path);
            prop_assert_eq!(&f.regret_path, &b.regret_path);
            prop_assert_eq!(f.sharpe_annualized.to_bits(), b.sharpe_annualized.to_bits());
        }
    }

    #[test]
    fn best_index_has_least_final_regret(seed in any::<u64>()) {
        let test = returns(25, 5, seed);
        let finals: Vec<f64> = (0..5)
            .map(|j| *regret_vs_hindsight(&Vector::from_fn(5, |i, _| f64::from(i == j)), &test).unwrap().as_slice().last().unwrap())
            .collect();
        let least = finals.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(least.abs() < 1e-12);
        prop_assert!(finals.iter().all(|&r| r >= -1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gw_objective_is_convex_along_segments(
        seed in 0u64..1000,
        a in prop::collection::vec(0.0..1.0f64, 3),
        b in prop::collection::vec(0.0..1.0f64, 3),
        t in 0.0..1.0f64,
    ) {
        let y = returns(40, 3, seed);
        let model = GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap();
        let (da, db) = (simplex_point(&a), simplex_point(&b));
        let mid = &da * t + &db * (1.0 - t);
        let lambda = 2.0;
        let f = |d: &Vector| converged_objective(&model, d, lambda);
        prop_assert!(f(&mid) <= t * f(&da) + (1.0 - t) * f(&db) + 1e-9);
    }

    #[test]
    fn sweeps_never_beat_the_fixed_point(seed in 0u64..1000, raw in prop::collection::vec(0.0..1.0f64, 3), sweeps in 0usize..4) {
        let y = returns(30, 3, seed);
        let model = ArModel::new(&y, ArPrior::from_data(&y).unwrap()).unwrap();
        let delta = simplex_point(&raw);
        let lambda = 1.0;
        let mut state = model.initial_state().unwrap();
        for _ in 0..sweeps {
            state = model.fixed_point_step(&state, &delta, lambda).unwrap();
        }
        let partial = model.objective(&state, &delta, lambda).unwrap();
        prop_assert!(converged_objective(&model, &delta, lambda) >= partial - 1e-9);
    }

    #[test]
    fn solver_is_deterministic_and_feasible(seed in 0u64..1000, lambda in 0.1..5.0f64) {
        let y = returns(30, 4, seed);
        let model = GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap();
        let config = SolverConfig { lambda, ..SolverConfig::default() };
        let first = alg_vb(&model, &config).unwrap();
        let second = alg_vb(&model, &config).unwrap();
        prop_assert_eq!(&first.decision, &second.decision);
        prop_assert_eq!(&first.objective_trace, &second.objective_trace);
        prop_assert!(DecisionSet::Simplex.contains(&first.decision, 1e-12));
        prop_assert!(first.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }
}

#[test]
fn fixed_point_sweeps_are_bit_reproducible() {
    let y = returns(20, 3, 5);
    let model = GwModel::new(&y, GwPrior::from_data(&y).unwrap()).unwrap();
    let delta = simplex_point(&[0.2, 0.5, 0.3]);
    let s0 = model.initial_state().unwrap();
    let a = model.fixed_point_step(&s0, &delta, 1.5).unwrap();
    let b = model.fixed_point_step(&s0, &delta, 1.5).unwrap();
    assert_eq!(model.residual(&a, &b), 0.0);
    assert_eq!(model.predictive_mean(&a), model.predictive_mean(&b));
}

#[test]
fn wishart_mean_is_within_clt_band() {
    let draws = 100_000;
    for d in 1..=3 {
        let mut rng = RngSeed(900 + d as u64).rng();
        let psi = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 + i as f64 * 0.5 } else { 0.3 });
        let psi = SpdMatrix::new(psi).unwrap();
        let nu = d as f64 + 2.5;
        let mut sum = Matrix::zeros(d, d);
        for _ in 0..draws {
            sum += sample_wishart(nu, &psi, &mut rng).unwrap().as_matrix();
        }
        let p = psi.as_matrix();
        for i in 0..d {
            for j in 0..d {
                let var = nu * (p[(i, j)] * p[(i, j)] + p[(i, i)] * p[(j, j)]);
                let se = (var / draws as f64).sqrt();
                let err = sum[(i, j)] / draws as f64 - nu * p[(i, j)];
                assert!(
                    err.abs() < 3.0 * se,
                    "d={d} ({i},{j}): error {err} vs 3se {}",
                    3.0 * se
                );
            }
        }
    }
}
