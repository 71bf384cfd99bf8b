mod common;

use bandtree::dense::{lu_factor, Matrix};
use bandtree::reference::{recursive_solver, GlobalSystem};
use bandtree::{solve_distributed, CostModel, GeneratorKind, SolverOptions};
use common::{global, oracle, problem, rel_err, run};

#[test]
fn distributed_matches_dense_elimination() {
    for n in [1, 2, 4, 8, 16, 32] {
        for m in [1, 2, 3, 5] {
            for k in [1, 3] {
                let p = problem(GeneratorKind::TridiagDd, n, m, k, (n * 100 + m * 10 + k) as u64);
                let x = run(&p).gather();
                let reference = oracle(&p);
                let rec = recursive_solver(&global(&p)).unwrap();
                assert!(rel_err(&x, &reference) <= 1e-10, "N={n} m={m} k={k}");
                assert!(rel_err(&rec, &reference) <= 1e-10, "N={n} m={m} k={k}");
                assert!(rel_err(&x, &rec) <= 1e-10, "N={n} m={m} k={k}");
            }
        }
    }
}

#[test]
fn two_leaf_scalar_system() {
    // [2 1; 1 2] x = [4; 4]
    let p = problem(GeneratorKind::Identity, 2, 1, 1, 0);
    let mut rows = p.rows.clone();
    rows[0].diag = Matrix::from_rows(&[[2.0]]);
    rows[0].upper = Matrix::from_rows(&[[1.0]]);
    rows[0].rhs = Matrix::from_rows(&[[4.0]]);
    rows[1].diag = Matrix::from_rows(&[[2.0]]);
    rows[1].lower = Matrix::from_rows(&[[1.0]]);
    rows[1].rhs = Matrix::from_rows(&[[4.0]]);
    let sol = solve_distributed(&p.shape, rows, CostModel::default(), SolverOptions::default()).unwrap();
    let x = sol.gather();
    for i in 0..2 {
        assert!((x[(i, 0)] - 4.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn spd_corpus_is_never_singular() {
    for seed in 0..40u64 {
        let n = 1 << (seed % 6 + 1);
        let m = 1 + (seed % 5) as usize;
        let p = problem(GeneratorKind::SpdBanded, n, m, 2, seed);
        let g = global(&p);
        assert!(is_spd(&g), "seed {seed}");
        let x = run(&p).gather();
        assert!(g.relative_residual(&x).unwrap() <= 1e-10, "seed {seed}");
    }
}

#[test]
fn generated_problems_are_spd_and_dominant() {
    let g = global(&problem(GeneratorKind::SpdBanded, 8, 3, 1, 5));
    assert!(is_spd(&g));

    let g = global(&problem(GeneratorKind::TridiagDd, 8, 3, 1, 5));
    for r in 0..g.matrix.rows() {
        let row = g.matrix.row(r);
        let off: f64 = row.iter().enumerate().filter(|&(c, _)| c != r).map(|(_, v)| v.abs()).sum();
        assert!(row[r].abs() >= 2.0 * off);
    }
}

#[test]
fn identity_problem_returns_rhs() {
    let p = problem(GeneratorKind::Identity, 4, 2, 1, 3);
    assert_eq!(run(&p).gather(), global(&p).rhs);
}

// symmetric, and elimination without pivoting keeps every pivot positive
fn is_spd(g: &GlobalSystem) -> bool {
    let a = &g.matrix;
    if a.max_abs_diff(&a.transpose()) > 1e-12 * a.max_abs() {
        return false;
    }
    let n = a.rows();
    let mut w: Vec<Vec<f64>> = (0..n).map(|r| a.row(r).to_vec()).collect();
    for k in 0..n {
        if w[k][k] <= 0.0 {
            return false;
        }
        for r in k + 1..n {
            let f = w[r][k] / w[k][k];
            for c in k..n {
                w[r][c] -= f * w[k][c];
            }
        }
    }
    lu_factor(a).is_ok()
}
