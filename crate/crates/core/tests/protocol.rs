mod common;

use bandtree::netsim::Step;
use bandtree::solver::round_summaries;
use bandtree::{
    solve_distributed, CostModel, DriverError, GeneratorKind, Schedule, SimError, SimReport,
    SolverOptions,
};
use common::{critical_path, problem, run, run_with};

fn level(report: &SimReport, id: usize) -> u32 {
    report.nodes[id].level
}

#[test]
fn rounds_and_interface_solves() {
    for d in 0..=6u32 {
        let n = 1usize << d;
        let p = problem(GeneratorKind::TridiagDd, n, 2, 1, d as u64);
        let report = run(&p).report;
        let rounds = round_summaries(&report);
        assert_eq!(rounds.len(), d as usize, "N = {n}");
        let mut total = 0;
        for r in &rounds {
            assert_eq!(r.leaf_sends, n);
            assert_eq!(r.interface_solves, n >> r.round, "N = {n} round {}", r.round);
            total += r.interface_solves;
        }
        assert_eq!(total, n.saturating_sub(1));
    }
}

#[test]
fn payload_sizes_follow_the_law() {
    for d in 1..=5u32 {
        let n = 1usize << d;
        for (m, k) in [(1, 1), (2, 3), (3, 2)] {
            let p = problem(GeneratorKind::SpdBanded, n, m, k, 11);
            let report = run(&p).report;
            for msg in &report.messages {
                let l = msg.iter;
                let (from, to) = (level(&report, msg.from), level(&report, msg.to));
                let expected = if to == from + 1 {
                    m * (m * (d - l + 1) as usize + k)
                } else {
                    assert_eq!(from, to + 1, "messages only travel along tree edges");
                    m * (m * (d - l) as usize + k)
                };
                assert_eq!(msg.elements, expected, "N={n} m={m} k={k} round {l}");
            }
        }
    }
}

#[test]
fn message_counts_per_round() {
    // up: every node below level l forwards once; down: Z reaches every
    // node below level l through exactly one message
    let (n, d) = (16usize, 4u32);
    let report = run(&problem(GeneratorKind::TridiagDd, n, 2, 2, 3)).report;
    for v in &report.per_iteration_volume {
        let below: usize = (0..v.iter).map(|j| n >> j).sum();
        assert_eq!(v.messages, 2 * below, "round {}", v.iter);
    }
    assert_eq!(report.per_iteration_volume.len(), d as usize);
}

#[test]
fn messages_respect_causality() {
    let cost = CostModel::new(3.0, 0.25, 0.5).unwrap();
    let report = run_with(&problem(GeneratorKind::TridiagDd, 32, 3, 2, 4), cost).report;
    for msg in &report.messages {
        let start = msg.t_ready.max(msg.t_recv);
        let expected = start + cost.transfer_time(msg.elements);
        assert!((msg.t_done - expected).abs() <= 1e-9 * expected.max(1.0));
        assert!(msg.t_done <= report.makespan);
    }
    // each directed edge delivers in posting order
    let mut last: std::collections::HashMap<(usize, usize), f64> = Default::default();
    for msg in &report.messages {
        let prev = last.insert((msg.from, msg.to), msg.t_done);
        if let Some(prev) = prev {
            assert!(prev <= msg.t_done);
        }
    }
    for node in &report.nodes {
        assert!(node.busy <= report.makespan + 1e-9);
        assert!(node.finish <= report.makespan);
    }
}

#[test]
fn makespan_is_the_critical_path() {
    for (n, m, cost) in [
        (8, 2, CostModel::default()),
        (16, 3, CostModel::new(5.0, 0.5, 0.25).unwrap()),
        (64, 1, CostModel::new(4.0, 1.0, 1.0).unwrap()),
    ] {
        let report = run_with(&problem(GeneratorKind::TridiagDd, n, m, 2, 8), cost).report;
        let cp = critical_path(&report);
        assert!(
            (cp - report.makespan).abs() <= 1e-9 * report.makespan,
            "N={n}: {cp} vs {}",
            report.makespan
        );
    }
}

#[test]
fn flops_are_charged_as_compute_time() {
    let cost = CostModel::new(0.0, 1.0, 0.5).unwrap();
    let report = run_with(&problem(GeneratorKind::TridiagDd, 8, 2, 1, 1), cost).report;
    for (node, steps) in report.nodes.iter().zip(&report.trace) {
        let traced: u64 = steps
            .iter()
            .map(|s| match s {
                Step::Compute { flops, duration } => {
                    assert_eq!(*duration, *flops as f64 * 0.5);
                    *flops
                }
                Step::Comm { .. } => 0,
            })
            .sum();
        assert_eq!(traced, node.flops);
    }
    // only leaves and interface nodes compute
    let leaves: u64 = report.nodes.iter().filter(|n| n.level == 0).map(|n| n.flops).sum();
    assert!(leaves > 0);
}

#[test]
fn identity_problem_pays_only_for_communication() {
    // N = 2, m = k = 1: up 2 elements, then Z to each child (1 each)
    let p = problem(GeneratorKind::Identity, 2, 1, 1, 0);
    let sol = run_with(&p, CostModel::new(0.0, 1.0, 0.0).unwrap());
    assert_eq!(sol.report.makespan, 4.0);
    assert_eq!(sol.gather(), common::global(&p).rhs);

    let p = problem(GeneratorKind::Identity, 16, 2, 3, 5);
    let sol = run_with(&p, CostModel::new(1.0, 1.0, 0.0).unwrap());
    assert_eq!(sol.gather(), common::global(&p).rhs);
    assert_eq!(critical_path(&sol.report), sol.report.makespan);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let p = problem(GeneratorKind::SpdBanded, 16, 3, 2, 99);
    let first = run(&p);
    let json = first.report.to_json();
    for _ in 0..5 {
        let again = run(&p);
        assert_eq!(again.report.to_json(), json);
        assert_eq!(again.slices, first.slices);
    }
    assert_eq!(SimReport::from_json(&json).unwrap().to_json(), json);
}

#[test]
fn ungated_schedule_deadlocks_at_eight_leaves() {
    let p = problem(GeneratorKind::TridiagDd, 8, 2, 1, 1);
    let opts = SolverOptions {
        schedule: Schedule::Ungated,
        ..Default::default()
    };
    match solve_distributed(&p.shape, p.rows.clone(), CostModel::default(), opts) {
        Err(DriverError::Sim(SimError::Deadlock { blocked })) => {
            assert!(!blocked.is_empty());
            assert!(blocked.iter().any(|b| b.level >= 2));
        }
        other => panic!("expected a deadlock, got {other:?}"),
    }
}

#[test]
fn gated_schedule_never_deadlocks() {
    for d in 0..=7u32 {
        let p = problem(GeneratorKind::SpdBanded, 1 << d, 2, 1, 3);
        assert!(solve_distributed(&p.shape, p.rows.clone(), CostModel::default(), SolverOptions::default()).is_ok());
    }
}
