//! Distributed problem data: one [`BlockRow`] per leaf, plus deterministic
//! generators for test problems.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dense::Matrix;
use crate::topology::{ProblemShape, ShapeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("expected {expected} block rows, got {actual}")]
    RowCount { expected: usize, actual: usize },
    #[error("leaf {leaf}: block {block} is {actual:?}, expected {expected:?}")]
    BlockShape {
        leaf: usize,
        block: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("generator {0} cannot produce problems")]
    NotGeneratable(GeneratorKind),
    #[error("boundary violation: {0}")]
    BoundaryViolation(&'static str),
    #[error("leaf {leaf}: entry ({row}, {col}) of block {block} lies outside bandwidth {bandwidth}")]
    OutsideBand {
        leaf: usize,
        block: &'static str,
        row: usize,
        col: usize,
        bandwidth: usize,
    },
}

/// One leaf's slice of the global system: row-block `i` holds `lower` in
/// block column `i - 1`, `diag` in column `i` and `upper` in column `i + 1`,
/// with right-hand side `rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub diag: Matrix,
    pub upper: Matrix,
    pub lower: Matrix,
    pub rhs: Matrix,
}

/// Checks block shapes, the zero boundary blocks and the bandwidth.
pub fn validate_rows(rows: &[BlockRow], shape: &ProblemShape) -> Result<(), ProblemError> {
    let (n, m, k) = (shape.leaves(), shape.block_size(), shape.rhs_cols());
    if rows.len() != n {
        return Err(ProblemError::RowCount {
            expected: n,
            actual: rows.len(),
        });
    }
    for (i, row) in rows.iter().enumerate() {
        let leaf = i + 1;
        for (block, mat, expected) in [
            ("diag", &row.diag, (m, m)),
            ("upper", &row.upper, (m, m)),
            ("lower", &row.lower, (m, m)),
            ("rhs", &row.rhs, (m, k)),
        ] {
            if mat.shape() != expected {
                return Err(ProblemError::BlockShape {
                    leaf,
                    block,
                    expected,
                    actual: mat.shape(),
                });
            }
        }
        // global offset between column and row of each block
        for (block, mat, offset) in [
            ("diag", &row.diag, 0isize),
            ("upper", &row.upper, m as isize),
            ("lower", &row.lower, -(m as isize)),
        ] {
            for r in 0..m {
                for c in 0..m {
                    let dist = (c as isize + offset - r as isize).unsigned_abs();
                    if dist > shape.bandwidth() && mat[(r, c)] != 0.0 {
                        return Err(ProblemError::OutsideBand {
                            leaf,
                            block,
                            row: r,
                            col: c,
                            bandwidth: shape.bandwidth(),
                        });
                    }
                }
            }
        }
    }
    if !rows[0].lower.is_zero() {
        return Err(ProblemError::BoundaryViolation(
            "lower block of the uppermost leaf must be zero",
        ));
    }
    if !rows[n - 1].upper.is_zero() {
        return Err(ProblemError::BoundaryViolation(
            "upper block of the lowermost leaf must be zero",
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    /// Strictly diagonally dominant rows, dominance factor at least 2.
    TridiagDd,
    /// Symmetric positive definite `L * L^T` with banded lower-triangular `L`.
    SpdBanded,
    /// Identity blocks on the diagonal, zero coupling.
    Identity,
    /// Rows supplied by the caller.
    Custom,
}

impl GeneratorKind {
    pub fn code(self) -> u8 {
        match self {
            GeneratorKind::Identity => 0,
            GeneratorKind::TridiagDd => 1,
            GeneratorKind::SpdBanded => 2,
            GeneratorKind::Custom => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GeneratorKind::Identity),
            1 => Some(GeneratorKind::TridiagDd),
            2 => Some(GeneratorKind::SpdBanded),
            255 => Some(GeneratorKind::Custom),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::TridiagDd => "tridiag-dd",
            GeneratorKind::SpdBanded => "spd-banded",
            GeneratorKind::Identity => "identity",
            GeneratorKind::Custom => "custom",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tridiag-dd" => Ok(GeneratorKind::TridiagDd),
            "spd-banded" => Ok(GeneratorKind::SpdBanded),
            "identity" => Ok(GeneratorKind::Identity),
            "custom" => Ok(GeneratorKind::Custom),
            other => Err(format!("unknown generator {other:?}")),
        }
    }
}

/// A complete distributed problem as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub shape: ProblemShape,
    pub generator: GeneratorKind,
    pub seed: u64,
    pub rows: Vec<BlockRow>,
}

impl Problem {
    pub fn new(
        shape: ProblemShape,
        generator: GeneratorKind,
        seed: u64,
        rows: Vec<BlockRow>,
    ) -> Result<Self, ProblemError> {
        validate_rows(&rows, &shape)?;
        Ok(Self {
            shape,
            generator,
            seed,
            rows,
        })
    }

    /// Generates a problem. The same arguments always give the same entries.
    pub fn generate(
        kind: GeneratorKind,
        shape: ProblemShape,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = match kind {
            GeneratorKind::Identity => identity_rows(&shape, &mut rng),
            GeneratorKind::TridiagDd => dominant_rows(&shape, &mut rng),
            GeneratorKind::SpdBanded => spd_rows(&shape, &mut rng),
            GeneratorKind::Custom => return Err(ProblemError::NotGeneratable(kind)),
        };
        Self::new(shape, kind, seed, rows)
    }
}

fn random_rhs(shape: &ProblemShape, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(shape.block_size(), shape.rhs_cols(), |_, _| {
        rng.gen_range(-1.0..1.0)
    })
}

fn identity_rows(shape: &ProblemShape, rng: &mut ChaCha8Rng) -> Vec<BlockRow> {
    let m = shape.block_size();
    (0..shape.leaves())
        .map(|_| BlockRow {
            diag: Matrix::identity(m),
            upper: Matrix::zeros(m, m),
            lower: Matrix::zeros(m, m),
            rhs: random_rhs(shape, rng),
        })
        .collect()
}

fn dominant_rows(shape: &ProblemShape, rng: &mut ChaCha8Rng) -> Vec<BlockRow> {
    let (n, m, b) = (shape.leaves(), shape.block_size(), shape.bandwidth());
    // upper block entry (r, c) sits m + c - r off the diagonal
    let in_band_upper = |r: usize, c: usize| m + c <= b + r;
    let in_band_lower = |r: usize, c: usize| m + r <= b + c;
    (0..n)
        .map(|i| {
            let mut diag = Matrix::from_fn(m, m, |r, c| {
                if r != c && r.abs_diff(c) <= b {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            let upper = Matrix::from_fn(m, m, |r, c| {
                if i + 1 < n && in_band_upper(r, c) {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            let lower = Matrix::from_fn(m, m, |r, c| {
                if i > 0 && in_band_lower(r, c) {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            });
            for r in 0..m {
                let off: f64 = (0..m)
                    .map(|c| {
                        let d = if c == r { 0.0 } else { diag[(r, c)].abs() };
                        d + upper[(r, c)].abs() + lower[(r, c)].abs()
                    })
                    .sum();
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                diag[(r, r)] = sign * (2.0 * off + rng.gen_range(0.5..1.5));
            }
            BlockRow {
                diag,
                upper,
                lower,
                rhs: random_rhs(shape, rng),
            }
        })
        .collect()
}

fn spd_rows(shape: &ProblemShape, rng: &mut ChaCha8Rng) -> Vec<BlockRow> {
    let (n, m, b) = (shape.leaves(), shape.block_size(), shape.bandwidth());
    let dim = n * m;
    // factor[i][t] = L[i][i - b + t] for t in 0..=b
    let factor: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            (0..=b)
                .map(|t| {
                    if t == b {
                        1.0 + b as f64 + rng.gen_range(0.0..1.0)
                    } else if i + t >= b {
                        rng.gen_range(-1.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let l_at = |i: usize, j: usize| -> f64 {
        if j > i || i - j > b {
            0.0
        } else {
            factor[i][b - (i - j)]
        }
    };
    // (L L^T)[i][j] = sum over p <= min(i, j), p >= max(i, j) - b
    let entry = |i: usize, j: usize| -> f64 {
        if i.abs_diff(j) > b {
            return 0.0;
        }
        let hi = i.min(j);
        let lo = i.max(j).saturating_sub(b);
        (lo..=hi).map(|p| l_at(i, p) * l_at(j, p)).sum()
    };
    (0..n)
        .map(|leaf| {
            let r0 = leaf * m;
            let block = |c0: isize| {
                Matrix::from_fn(m, m, |r, c| {
                    let col = c0 + c as isize;
                    if col < 0 || col >= dim as isize {
                        0.0
                    } else {
                        entry(r0 + r, col as usize)
                    }
                })
            };
            BlockRow {
                diag: block(r0 as isize),
                upper: block(r0 as isize + m as isize),
                lower: block(r0 as isize - m as isize),
                rhs: random_rhs(shape, rng),
            }
        })
        .collect()
}
