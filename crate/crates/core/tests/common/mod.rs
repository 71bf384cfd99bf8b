#![allow(dead_code)]

use bandtree::netsim::Step;
use bandtree::reference::{assemble_global, banded_solve, GlobalSystem};
use bandtree::{
    solve_distributed, CostModel, DistributedSolution, GeneratorKind, Matrix, Problem,
    ProblemShape, SimReport, SolverOptions,
};

pub fn problem(kind: GeneratorKind, n: usize, m: usize, k: usize, seed: u64) -> Problem {
    let shape = ProblemShape::new(n, m, k, m).expect("valid shape");
    Problem::generate(kind, shape, seed).expect("generator")
}

/// The 60-problem corpus: every N in 2..=64 against every block size, both
/// generators, k alternating between 1 and 3.
pub fn corpus() -> Vec<Problem> {
    let mut out = Vec::new();
    let mut seed = 1000;
    for n in [2, 4, 8, 16, 32, 64] {
        for (i, m) in [1, 2, 3, 5, 8].into_iter().enumerate() {
            for kind in [GeneratorKind::TridiagDd, GeneratorKind::SpdBanded] {
                let k = if (i + out.len()) % 2 == 0 { 1 } else { 3 };
                out.push(problem(kind, n, m, k, seed));
                seed += 1;
            }
        }
    }
    out
}

pub fn run(p: &Problem) -> DistributedSolution {
    run_with(p, CostModel::default())
}

pub fn run_with(p: &Problem, cost: CostModel) -> DistributedSolution {
    solve_distributed(&p.shape, p.rows.clone(), cost, SolverOptions::default())
        .expect("distributed solve")
}

pub fn global(p: &Problem) -> GlobalSystem {
    assemble_global(&p.rows).expect("assembly")
}

pub fn oracle(p: &Problem) -> Matrix {
    banded_solve(&global(p)).expect("oracle solve")
}

pub fn rel_err(x: &Matrix, reference: &Matrix) -> f64 {
    x.max_abs_diff(reference) / reference.max_abs().max(f64::MIN_POSITIVE)
}

/// Recomputes every step's completion time from the step trace alone, as a
/// longest path over program order and message edges, and returns the
/// largest completion time.
pub fn critical_path(report: &SimReport) -> f64 {
    let cost = report.cost;
    let nodes = report.trace.len();
    // which step of which node mentions each message
    let mut site = vec![[None::<(usize, usize)>; 2]; report.messages.len()];
    for (node, steps) in report.trace.iter().enumerate() {
        for (i, step) in steps.iter().enumerate() {
            if let Step::Comm { messages } = step {
                for &msg in messages {
                    let slot = if report.messages[msg].from == node { 0 } else { 1 };
                    site[msg][slot] = Some((node, i));
                }
            }
        }
    }
    let mut next = vec![0usize; nodes];
    let mut clock = vec![0.0f64; nodes];
    // start time of each step, once known
    let mut start: Vec<Vec<Option<f64>>> = report
        .trace
        .iter()
        .map(|s| vec![None; s.len()])
        .collect();
    loop {
        let mut progressed = false;
        for node in 0..nodes {
            while next[node] < report.trace[node].len() {
                let i = next[node];
                if start[node][i].is_none() {
                    start[node][i] = Some(clock[node]);
                    progressed = true;
                }
                let end = match &report.trace[node][i] {
                    Step::Compute { duration, .. } => clock[node] + duration,
                    Step::Comm { messages } => {
                        let mut end = clock[node];
                        let mut ready = true;
                        for &msg in messages {
                            let [s, r] = site[msg];
                            let (s, r) = (s.expect("sender step"), r.expect("receiver step"));
                            match (start[s.0][s.1], start[r.0][r.1]) {
                                (Some(a), Some(b)) => {
                                    let done = a.max(b) + cost.transfer_time(report.messages[msg].elements);
                                    end = end.max(done);
                                }
                                _ => ready = false,
                            }
                        }
                        if !ready {
                            break;
                        }
                        end
                    }
                };
                clock[node] = end;
                next[node] += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    assert!(
        (0..nodes).all(|n| next[n] == report.trace[n].len()),
        "trace has a cycle"
    );
    clock.into_iter().fold(0.0, f64::max)
}
