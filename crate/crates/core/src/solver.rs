//! The tree-parallel solver run by every node of the two-tree.
//!
//! Each leaf keeps its block row in factored form: a set of `d` dense `m x m`
//! wings `V^1..V^d` and its slice `X` of the right-hand side. Initially the
//! upper and lower coupling blocks are filed under the wing level of the
//! tree boundary they cross, and `[V^1..V^d, X] := A \ [V^1..V^d, Y]`.
//!
//! Round `l = 1..d` then eliminates the coupling across every level-`l`
//! boundary at once:
//!
//! 1. Every leaf sends `[V^l..V^d, X]` to its parent. Internal nodes below
//!    level `l` receive both children and pass on the payload of the leaf
//!    next to the boundary: the down-child's if their level-`(l-1)` ancestor
//!    is an up-child (odd processor number), the up-child's otherwise.
//! 2. Each level-`l` node now holds the two boundary rows and solves
//!    `[[I, V_up^l], [V_down^l, I]] Z = [V_up^(l+1..d), X_up; V_down^(l+1..d), X_down]`.
//! 3. It sends the lower half `Z_down` to its up-child and `Z_up` to its
//!    down-child; internal nodes relay `Z` to both children.
//! 4. Leaves update `[V^(l+1..d), X] -= V^l * Z`.
//!
//! After round `d` every leaf's `X` is its slice of the solution.
//!
//! Only nodes with level `<= l` take part in the upward phase of round `l`.
//! Making every internal node receive in every round leaves the nodes above
//! level `l` waiting for messages nobody sends; [`Schedule::Ungated`] keeps
//! that variant around so its deadlock stays reproducible.

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

use crate::dense::{gemm_sub_counted, lu_factor_counted, lu_solve_counted, Flops, LinalgError, Matrix};
use crate::netsim::{self, CostModel, NodeCtx, Payload, ProblemInfo, SimError, SimReport};
use crate::problem::{validate_rows, BlockRow, ProblemError};
use crate::topology::{wing_level, Coupling, ProblemShape, TreeLayout};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("leaf {leaf}: diagonal block factorization failed: {source}")]
    Leaf { leaf: usize, source: LinalgError },
    #[error("round {round}, level-{round} node {proc}: interface solve failed: {source}")]
    Interface {
        round: u32,
        proc: usize,
        source: LinalgError,
    },
    #[error("malformed payload: {0}")]
    Payload(LinalgError),
}

/// A leaf's wings `V^1..V^d`, each `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct WingSet {
    wings: Vec<Matrix>,
}

impl WingSet {
    pub fn zeros(depth: u32, m: usize) -> Self {
        Self {
            wings: (0..depth).map(|_| Matrix::zeros(m, m)).collect(),
        }
    }

    pub fn depth(&self) -> u32 {
        self.wings.len() as u32
    }

    /// Wing for `level` in `1..=d`.
    pub fn get(&self, level: u32) -> &Matrix {
        &self.wings[level as usize - 1]
    }

    pub fn get_mut(&mut self, level: u32) -> &mut Matrix {
        &mut self.wings[level as usize - 1]
    }

    /// Wings for levels `from..=d`.
    pub fn from_level(&self, from: u32) -> &[Matrix] {
        &self.wings[from as usize - 1..]
    }
}

/// A leaf's working state: its wings and its current right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafState {
    pub proc: usize,
    pub wings: WingSet,
    pub x: Matrix,
}

impl LeafState {
    /// `[V^round..V^d, X]` as a message payload.
    fn upward_payload(&self, round: u32) -> Payload {
        let mut p = self.wings.from_level(round).to_vec();
        p.push(self.x.clone());
        p
    }

    /// `[V^(l+1..d), X] -= V^l * [Z_V^(l+1..d), Z_X]`.
    pub fn apply_update(&mut self, round: u32, z: &[Matrix], flops: &mut Flops) -> Result<(), LinalgError> {
        let d = self.wings.depth();
        let expected = (d - round) as usize + 1;
        if z.len() != expected {
            return Err(LinalgError::DimensionMismatch {
                op: "leaf update",
                detail: format!("expected {expected} blocks, got {}", z.len()),
            });
        }
        let v = self.wings.get(round).clone();
        for (offset, level) in (round + 1..=d).enumerate() {
            let w = gemm_sub_counted(self.wings.get(level), &v, &z[offset], flops)?;
            *self.wings.get_mut(level) = w;
        }
        self.x = gemm_sub_counted(&self.x, &v, &z[expected - 1], flops)?;
        Ok(())
    }
}

/// Files the coupling blocks under their wing levels and applies the inverse
/// of the diagonal block to all wings and the right-hand side.
pub fn leaf_init(
    row: &BlockRow,
    proc: usize,
    depth: u32,
    flops: &mut Flops,
) -> Result<LeafState, LinalgError> {
    let m = row.diag.rows();
    let mut wings = WingSet::zeros(depth, m);
    for (coupling, block) in [(Coupling::Upper, &row.upper), (Coupling::Lower, &row.lower)] {
        if let Some(level) = wing_level(proc, coupling, depth) {
            let sum = wings.get(level).add_counted(block, flops)?;
            *wings.get_mut(level) = sum;
        }
    }
    let factors = lu_factor_counted(&row.diag, flops)?;
    let mut blocks = wings.wings;
    blocks.push(row.rhs.clone());
    let widths: Vec<usize> = blocks.iter().map(Matrix::cols).collect();
    let solved = lu_solve_counted(&factors, &Matrix::hcat(&blocks)?, flops)?;
    let mut parts = solved.split_cols(&widths)?;
    let x = parts.pop().expect("rhs block");
    Ok(LeafState {
        proc,
        wings: WingSet { wings: parts },
        x,
    })
}

/// The `2m x 2m` interface matrix `[[I, V_up], [V_down, I]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub matrix: Matrix,
}

impl ReducedSystem {
    pub fn block_size(&self) -> usize {
        self.matrix.rows() / 2
    }
}

pub fn assemble_reduced(v_up: &Matrix, v_down: &Matrix) -> Result<ReducedSystem, LinalgError> {
    let m = v_up.rows();
    if !v_up.is_square() || v_down.shape() != (m, m) {
        return Err(LinalgError::DimensionMismatch {
            op: "assemble_reduced",
            detail: format!("V_up {:?}, V_down {:?}", v_up.shape(), v_down.shape()),
        });
    }
    let mut s = Matrix::identity(2 * m);
    s.set_block(0, m, v_up);
    s.set_block(m, 0, v_down);
    Ok(ReducedSystem { matrix: s })
}

/// Solution of an interface system, split into the rows belonging to the
/// up-side boundary and the down-side boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSolution {
    pub z_up: Matrix,
    pub z_down: Matrix,
}

pub fn solve_reduced(
    s: &ReducedSystem,
    rhs: &Matrix,
    flops: &mut Flops,
) -> Result<ReducedSolution, LinalgError> {
    let m = s.block_size();
    if rhs.rows() != 2 * m {
        return Err(LinalgError::DimensionMismatch {
            op: "solve_reduced",
            detail: format!("rhs has {} rows, expected {}", rhs.rows(), 2 * m),
        });
    }
    let f = lu_factor_counted(&s.matrix, flops)?;
    let z = lu_solve_counted(&f, rhs, flops)?;
    Ok(ReducedSolution {
        z_up: z.block(0, 0, m, z.cols()),
        z_down: z.block(m, 0, m, z.cols()),
    })
}

/// Which internal nodes receive from their children in round `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Nodes with level `<= l`; both child receives are posted together.
    #[default]
    Gated,
    /// Every internal node, child receives one after the other.
    Ungated,
}

/// Leaf state recorded after leaf initialization (`round == 0`) and after
/// every round.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafSnapshot {
    pub round: u32,
    pub state: LeafState,
}

pub type SnapshotLog = Rc<RefCell<Vec<LeafSnapshot>>>;

#[derive(Debug, Clone, Default)]
pub struct SolverOptions {
    pub schedule: Schedule,
    /// When set, leaves append their state here after each round.
    pub snapshots: Option<SnapshotLog>,
}

fn split_payload(p: &[Matrix]) -> (&Matrix, &[Matrix]) {
    (&p[0], &p[1..])
}

/// The program every node runs. Leaves return their solution slice.
pub async fn node_program(
    ctx: NodeCtx,
    row: Option<BlockRow>,
    opts: SolverOptions,
) -> Result<Option<Matrix>, SolveError> {
    let depth = ctx.depth();
    let level = ctx.level();
    let mut leaf = match row {
        Some(row) => {
            let proc = ctx.info().proc_num;
            let mut fl = Flops::default();
            let state = leaf_init(&row, proc, depth, &mut fl)
                .map_err(|source| SolveError::Leaf { leaf: proc, source })?;
            ctx.compute(fl);
            record(&opts, 0, &state);
            Some(state)
        }
        None => None,
    };

    for round in 1..=depth {
        ctx.set_iteration(round);

        // upward: boundary rows travel to the level-`round` nodes
        let mut boundary = None;
        if let Some(state) = &leaf {
            ctx.send_to_parent(state.upward_payload(round)).await;
        } else if opts.schedule == Schedule::Ungated || level <= round {
            let (up, down) = match opts.schedule {
                Schedule::Gated => ctx.receive_from_children().await,
                Schedule::Ungated => {
                    let up = ctx.receive_from_up_child().await;
                    let down = ctx.receive_from_down_child().await;
                    (up, down)
                }
            };
            if level < round {
                let forward = if ctx.my_proc_num(round - 1) % 2 == 1 {
                    down
                } else {
                    up
                };
                ctx.send_to_parent(forward).await;
            } else if level == round {
                boundary = Some((up, down));
            }
        }

        // interface solve
        if let Some((up, down)) = boundary {
            let mut fl = Flops::default();
            let (z_up, z_down) = interface_solve(&up, &down, &mut fl).map_err(|source| {
                SolveError::Interface {
                    round,
                    proc: ctx.info().proc_num,
                    source,
                }
            })?;
            ctx.compute(fl);
            ctx.send_to_up_child(z_down).await;
            ctx.send_to_down_child(z_up).await;
        }

        // downward: relay Z and update the leaves
        if level < round {
            let z = ctx.receive_from_parent().await;
            if let Some(state) = leaf.as_mut() {
                let mut fl = Flops::default();
                state
                    .apply_update(round, &z, &mut fl)
                    .map_err(SolveError::Payload)?;
                ctx.compute(fl);
                record(&opts, round, state);
            } else {
                ctx.send_to_up_child(z.clone()).await;
                ctx.send_to_down_child(z).await;
            }
        }
    }
    Ok(leaf.map(|s| s.x))
}

/// Solves the interface system from the two boundary payloads
/// `[V^l, V^(l+1..d), X]` and returns `(Z_up, Z_down)`, each split back into
/// `[Z_V^(l+1..d), Z_X]`.
fn interface_solve(
    up: &[Matrix],
    down: &[Matrix],
    flops: &mut Flops,
) -> Result<(Payload, Payload), LinalgError> {
    if up.len() < 2 || up.len() != down.len() {
        return Err(LinalgError::DimensionMismatch {
            op: "interface payload",
            detail: format!("{} and {} blocks", up.len(), down.len()),
        });
    }
    let (v_up, rest_up) = split_payload(up);
    let (v_down, rest_down) = split_payload(down);
    let s = assemble_reduced(v_up, v_down)?;
    let rhs = Matrix::vcat(&[Matrix::hcat(rest_up)?, Matrix::hcat(rest_down)?])?;
    let widths: Vec<usize> = rest_up.iter().map(Matrix::cols).collect();
    let z = solve_reduced(&s, &rhs, flops)?;
    Ok((z.z_up.split_cols(&widths)?, z.z_down.split_cols(&widths)?))
}

fn record(opts: &SolverOptions, round: u32, state: &LeafState) {
    if let Some(log) = &opts.snapshots {
        log.borrow_mut().push(LeafSnapshot {
            round,
            state: state.clone(),
        });
    }
}

/// Result of a simulated distributed solve.
#[derive(Debug, Clone)]
pub struct DistributedSolution {
    /// Solution slices in leaf order.
    pub slices: Vec<Matrix>,
    pub report: SimReport,
}

impl DistributedSolution {
    pub fn gather(&self) -> Matrix {
        gather_solution(&self.slices)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriverError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Sim(#[from] SimError<SolveError>),
}

/// Runs the solver on the simulated two-tree. Rows are handed to the leaves
/// as-is; the assembled global matrix is never formed.
pub fn solve_distributed(
    shape: &ProblemShape,
    rows: Vec<BlockRow>,
    cost: CostModel,
    opts: SolverOptions,
) -> Result<DistributedSolution, DriverError> {
    validate_rows(&rows, shape)?;
    let layout = TreeLayout::new(shape);
    let handle = netsim::spawn(&layout, cost, rows, move |ctx, row| {
        node_program(ctx, row, opts.clone())
    })?;
    let outcome = netsim::run(handle)?;
    let mut report = outcome.report;
    report.problem = Some(ProblemInfo {
        leaves: shape.leaves(),
        block_size: shape.block_size(),
        rhs_cols: shape.rhs_cols(),
    });
    let slices = outcome.outputs.into_iter().flatten().collect();
    Ok(DistributedSolution { slices, report })
}

/// Stacks the leaves' solution slices into the `(N m) x k` global solution.
pub fn gather_solution(slices: &[Matrix]) -> Matrix {
    Matrix::vcat(slices).expect("slices share the column count")
}

/// Per-round counts read back from a message log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundSummary {
    pub round: u32,
    /// Messages sent by leaves to their parents.
    pub leaf_sends: usize,
    /// Distinct element counts among all upward messages.
    pub upward_sizes: Vec<usize>,
    /// Level-`round` nodes that sent interface solutions down.
    pub interface_solves: usize,
}

/// Reconstructs the round structure from `report`'s message log.
pub fn round_summaries(report: &SimReport) -> Vec<RoundSummary> {
    let level_of = |id: usize| report.nodes[id].level;
    let rounds = report.messages.iter().map(|m| m.iter).max().unwrap_or(0);
    (1..=rounds)
        .map(|round| {
            let msgs: Vec<_> = report.messages.iter().filter(|m| m.iter == round).collect();
            let upward: Vec<_> = msgs
                .iter()
                .filter(|m| level_of(m.to) == level_of(m.from) + 1)
                .collect();
            let mut upward_sizes: Vec<usize> = upward.iter().map(|m| m.elements).collect();
            upward_sizes.sort_unstable();
            upward_sizes.dedup();
            let mut solvers: Vec<usize> = msgs
                .iter()
                .filter(|m| level_of(m.from) == round && level_of(m.to) + 1 == round)
                .map(|m| m.from)
                .collect();
            solvers.sort_unstable();
            solvers.dedup();
            RoundSummary {
                round,
                leaf_sends: upward.iter().filter(|m| level_of(m.from) == 0).count(),
                upward_sizes,
                interface_solves: solvers.len(),
            }
        })
        .collect()
}
