//! Sequential oracles for the distributed solver.
//!
//! * [`banded_solve`]: dense partial-pivoted elimination on the assembled
//!   matrix. Deliberately plain; it is the ground truth for everything else.
//! * [`recursive_solver`]: the divide-and-conquer formulation the tree
//!   algorithm unrolls. Split the system in the middle, solve both halves
//!   against `[V, Y]` recursively, solve the `2m x 2m` interface system for
//!   the boundary unknowns and fold them back with [`recursive_matmul`].
//! * [`materialize_iteration`]: rebuilds the dense iterate `A^(j+1)`,
//!   `Y^(j+1)` from the leaves' wing state after round `j`, for checking the
//!   leaf updates. Quadratic memory; tests and debugging only.

use crate::dense::{gemm_sub_counted, lu_factor, lu_solve, Flops, LinalgError, Matrix};
use crate::problem::{BlockRow, ProblemError};
use crate::solver::LeafState;
use crate::topology::wing_target;

/// The assembled `(N m) x (N m)` system and its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalSystem {
    pub matrix: Matrix,
    pub rhs: Matrix,
    pub block_size: usize,
}

impl GlobalSystem {
    pub fn leaves(&self) -> usize {
        self.matrix.rows() / self.block_size
    }

    /// `max |A x - y| / max |y|`.
    pub fn relative_residual(&self, x: &Matrix) -> Result<f64, LinalgError> {
        let r = self.matrix.matmul(x)?.sub(&self.rhs)?;
        let scale = self.rhs.max_abs();
        Ok(if scale == 0.0 {
            r.max_abs()
        } else {
            r.max_abs() / scale
        })
    }
}

/// Places each leaf's blocks: row-block `i` gets `lower` at block column
/// `i - 1`, `diag` at `i` and `upper` at `i + 1`.
pub fn assemble_global(rows: &[BlockRow]) -> Result<GlobalSystem, ProblemError> {
    let n = rows.len();
    let first = rows.first().ok_or(ProblemError::RowCount {
        expected: 1,
        actual: 0,
    })?;
    if !first.lower.is_zero() {
        return Err(ProblemError::BoundaryViolation(
            "lower block of the uppermost leaf must be zero",
        ));
    }
    if !rows[n - 1].upper.is_zero() {
        return Err(ProblemError::BoundaryViolation(
            "upper block of the lowermost leaf must be zero",
        ));
    }
    let m = first.diag.rows();
    let k = first.rhs.cols();
    let mut matrix = Matrix::zeros(n * m, n * m);
    let mut rhs = Matrix::zeros(n * m, k);
    for (i, row) in rows.iter().enumerate() {
        for (block, mat) in [("diag", &row.diag), ("upper", &row.upper), ("lower", &row.lower)] {
            if mat.shape() != (m, m) {
                return Err(ProblemError::BlockShape {
                    leaf: i + 1,
                    block,
                    expected: (m, m),
                    actual: mat.shape(),
                });
            }
        }
        if row.rhs.shape() != (m, k) {
            return Err(ProblemError::BlockShape {
                leaf: i + 1,
                block: "rhs",
                expected: (m, k),
                actual: row.rhs.shape(),
            });
        }
        matrix.set_block(i * m, i * m, &row.diag);
        if i > 0 {
            matrix.set_block(i * m, (i - 1) * m, &row.lower);
        }
        if i + 1 < n {
            matrix.set_block(i * m, (i + 1) * m, &row.upper);
        }
        rhs.set_block(i * m, 0, &row.rhs);
    }
    Ok(GlobalSystem {
        matrix,
        rhs,
        block_size: m,
    })
}

pub fn banded_solve(g: &GlobalSystem) -> Result<Matrix, LinalgError> {
    lu_solve(&lu_factor(&g.matrix)?, &g.rhs)
}

/// Divide-and-conquer solve of `g`. Requires `N` to be a power of two.
pub fn recursive_solver(g: &GlobalSystem) -> Result<Matrix, LinalgError> {
    let n = g.matrix.rows();
    let m = g.block_size;
    if !n.is_multiple_of(m) || !(n / m).is_power_of_two() {
        return Err(LinalgError::DimensionMismatch {
            op: "recursive_solver",
            detail: format!("dimension {n} is not a power-of-two multiple of {m}"),
        });
    }
    recurse(&g.matrix, &g.rhs, m)
}

fn recurse(a: &Matrix, y: &Matrix, m: usize) -> Result<Matrix, LinalgError> {
    let n = a.rows();
    if n <= 2 * m {
        return lu_solve(&lu_factor(a)?, y);
    }
    let h = n / 2;
    let k = y.cols();
    let a1 = a.block(0, 0, h, h);
    let a2 = a.block(h, h, n - h, n - h);
    // coupling strips: bandwidth <= m keeps them inside m columns
    let v1 = a.block(0, h, h, m);
    let v2 = a.block(h, h - m, n - h, m);
    let y1 = y.block(0, 0, h, k);
    let y2 = y.block(h, 0, n - h, k);

    let s1 = recurse(&a1, &Matrix::hcat(&[v1, y1])?, m)?;
    let s2 = recurse(&a2, &Matrix::hcat(&[v2, y2])?, m)?;
    let (tv1, ty1) = (s1.block(0, 0, h, m), s1.block(0, m, h, k));
    let (tv2, ty2) = (s2.block(0, 0, n - h, m), s2.block(0, m, n - h, k));

    // boundary rows: last m rows of the upper half, first m of the lower
    let mut s = Matrix::identity(2 * m);
    s.set_block(0, m, &tv1.block(h - m, 0, m, m));
    s.set_block(m, 0, &tv2.block(0, 0, m, m));
    let rhs = Matrix::vcat(&[ty1.block(h - m, 0, m, k), ty2.block(0, 0, m, k)])?;
    let z = lu_solve(&lu_factor(&s)?, &rhs)?;
    let z_up = z.block(0, 0, m, k);
    let z_down = z.block(m, 0, m, k);

    let depth = (h / m).trailing_zeros();
    let x1 = recursive_matmul(&ty1, &tv1, &z_down, depth)?;
    let x2 = recursive_matmul(&ty2, &tv2, &z_up, depth)?;
    Matrix::vcat(&[x1, x2])
}

pub fn recursive_matmul(m: &Matrix, u: &Matrix, w: &Matrix, depth: u32) -> Result<Matrix, LinalgError> {
    recursive_matmul_counted(m, u, w, depth, &mut Flops::default())
}

/// `M - U W` computed by splitting `M` and `U` into top and bottom row
/// halves, `depth` times.
pub fn recursive_matmul_counted(
    m: &Matrix,
    u: &Matrix,
    w: &Matrix,
    depth: u32,
    flops: &mut Flops,
) -> Result<Matrix, LinalgError> {
    if m.rows() != u.rows() || u.cols() != w.rows() || m.cols() != w.cols() {
        return Err(LinalgError::DimensionMismatch {
            op: "recursive_matmul",
            detail: format!("M {:?}, U {:?}, W {:?}", m.shape(), u.shape(), w.shape()),
        });
    }
    let rows = m.rows();
    if depth == 0 || rows < 2 {
        return gemm_sub_counted(m, u, w, flops);
    }
    let h = rows / 2;
    let top = recursive_matmul_counted(
        &m.block(0, 0, h, m.cols()),
        &u.block(0, 0, h, u.cols()),
        w,
        depth - 1,
        flops,
    )?;
    let bottom = recursive_matmul_counted(
        &m.block(h, 0, rows - h, m.cols()),
        &u.block(h, 0, rows - h, u.cols()),
        w,
        depth - 1,
        flops,
    )?;
    Matrix::vcat(&[top, bottom])
}

/// Dense iterate after `rounds` completed rounds, from the leaves' states
/// (in leaf order): identity plus every wing `V^l`, `l > rounds`, placed at
/// the block column it couples to. The second matrix stacks the leaves' `X`.
pub fn materialize_iteration(states: &[LeafState], rounds: u32) -> (Matrix, Matrix) {
    let n = states.len();
    let m = states[0].x.rows();
    let depth = states[0].wings.depth();
    let mut a = Matrix::identity(n * m);
    for (i, st) in states.iter().enumerate() {
        for level in rounds + 1..=depth {
            let col = wing_target(st.proc, level) - 1;
            a.set_block(i * m, col * m, st.wings.get(level));
        }
    }
    let y = Matrix::vcat(&states.iter().map(|s| s.x.clone()).collect::<Vec<_>>())
        .expect("equal column counts");
    (a, y)
}

/// Block-diagonal factor consumed by round `level`: identity plus the
/// level-`level` wings of the state taken after round `level - 1`. Its
/// diagonal blocks are the blades of that round.
pub fn blade_factor(states_before: &[LeafState], level: u32) -> Matrix {
    let n = states_before.len();
    let m = states_before[0].x.rows();
    let mut d = Matrix::identity(n * m);
    for (i, st) in states_before.iter().enumerate() {
        let col = wing_target(st.proc, level) - 1;
        d.set_block(i * m, col * m, st.wings.get(level));
    }
    d
}

/// Block-diagonal matrix of the rows' diagonal blocks.
pub fn diagonal_factor(rows: &[BlockRow]) -> Matrix {
    let m = rows[0].diag.rows();
    let mut d = Matrix::zeros(rows.len() * m, rows.len() * m);
    for (i, r) in rows.iter().enumerate() {
        d.set_block(i * m, i * m, &r.diag);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::gemm_sub;
    use crate::problem::{GeneratorKind, Problem};
    use crate::topology::ProblemShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[[v]])
    }

    fn two_by_two() -> Vec<BlockRow> {
        vec![
            BlockRow {
                diag: scalar(2.0),
                upper: scalar(1.0),
                lower: scalar(0.0),
                rhs: scalar(4.0),
            },
            BlockRow {
                diag: scalar(2.0),
                upper: scalar(0.0),
                lower: scalar(1.0),
                rhs: scalar(4.0),
            },
        ]
    }

    #[test]
    fn assembly_of_two_rows() {
        let g = assemble_global(&two_by_two()).unwrap();
        assert_eq!(g.matrix, Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]));
        assert_eq!(g.rhs, Matrix::from_rows(&[[4.0], [4.0]]));
    }

    #[test]
    fn assembly_rejects_boundary_blocks() {
        let mut rows = two_by_two();
        rows[0].lower = scalar(1.0);
        assert!(matches!(
            assemble_global(&rows),
            Err(ProblemError::BoundaryViolation(_))
        ));
    }

    #[test]
    fn block_diagonal_assembly() {
        let p = Problem::generate(
            GeneratorKind::Identity,
            ProblemShape::new(4, 2, 1, 0).unwrap(),
            1,
        )
        .unwrap();
        let g = assemble_global(&p.rows).unwrap();
        assert_eq!(g.matrix, Matrix::identity(8));
        assert_eq!(banded_solve(&g).unwrap(), g.rhs);
    }

    #[test]
    fn closed_form_two_by_two() {
        let g = assemble_global(&two_by_two()).unwrap();
        for x in [banded_solve(&g).unwrap(), recursive_solver(&g).unwrap()] {
            assert!((x[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
            assert!((x[(1, 0)] - 4.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn banded_solve_residual() {
        let p = Problem::generate(
            GeneratorKind::TridiagDd,
            ProblemShape::new(16, 3, 2, 3).unwrap(),
            5,
        )
        .unwrap();
        let g = assemble_global(&p.rows).unwrap();
        let x = banded_solve(&g).unwrap();
        assert!(g.relative_residual(&x).unwrap() <= 1e-12);
    }

    #[test]
    fn recursive_matches_banded() {
        for (n, m) in [(1, 3), (2, 2), (8, 2), (16, 1), (8, 5)] {
            for kind in [GeneratorKind::TridiagDd, GeneratorKind::SpdBanded] {
                let p = Problem::generate(kind, ProblemShape::new(n, m, 2, m).unwrap(), 9).unwrap();
                let g = assemble_global(&p.rows).unwrap();
                let a = banded_solve(&g).unwrap();
                let b = recursive_solver(&g).unwrap();
                assert!(a.max_abs_diff(&b) <= 1e-10 * a.max_abs(), "{kind} n={n} m={m}");
            }
        }
    }

    #[test]
    fn recursive_rejects_non_power_of_two() {
        let g = GlobalSystem {
            matrix: Matrix::identity(6),
            rhs: Matrix::zeros(6, 1),
            block_size: 2,
        };
        assert!(recursive_solver(&g).is_err());
    }

    #[test]
    fn recursive_matmul_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rand = |r, c| Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let m = rand(8, 3);
        let u = rand(8, 2);
        let w = rand(2, 3);
        let direct = gemm_sub(&m, &u, &w).unwrap();
        assert_eq!(recursive_matmul(&m, &u, &w, 0).unwrap(), direct);
        let split = recursive_matmul(&m, &u, &w, 3).unwrap();
        assert!(split.max_abs_diff(&direct) <= 1e-13 * m.max_abs());
        assert_eq!(recursive_matmul(&m, &Matrix::zeros(8, 2), &w, 2).unwrap(), m);
        assert!(recursive_matmul(&m, &u, &rand(3, 3), 1).is_err());

        // the split does the same work as one product
        let mut a = Flops::default();
        let mut b = Flops::default();
        recursive_matmul_counted(&m, &u, &w, 3, &mut a).unwrap();
        gemm_sub_counted(&m, &u, &w, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
