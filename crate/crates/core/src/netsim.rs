//! Deterministic simulator for node programs on a [`TreeLayout`].
//!
//! Every node runs as an async task that talks to its neighbours through
//! six rendezvous primitives on [`NodeCtx`]. Time is virtual: a node's clock
//! advances by `flop * count` for local work, and a matched send/receive
//! pair completes at
//!
//! ```text
//! max(send posted, receive posted) + latency + per_element * elements
//! ```
//!
//! after which both parties continue from the completion time. Messages on
//! one directed link are matched in FIFO order. The observable result only
//! depends on each node's own sequence of operations, never on the order in
//! which the executor polls tasks.
//!
//! When no task can make progress and some have not finished, the run stops
//! with [`SimError::Deadlock`] naming every blocked node and what it waits on.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::{Flops, Matrix};
use crate::topology::{NodeId, NodeInfo, TreeLayout};

/// Ordered list of matrices carried by one message.
pub type Payload = Vec<Matrix>;

pub fn payload_elements(p: &[Matrix]) -> usize {
    p.iter().map(Matrix::len).sum()
}

/// Cost constants in abstract time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Fixed charge per message.
    pub latency: f64,
    /// Charge per scalar transferred.
    pub per_element: f64,
    /// Charge per arithmetic operation.
    pub flop: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            latency: 0.0,
            per_element: 1.0,
            flop: 1.0,
        }
    }
}

impl CostModel {
    pub fn new(latency: f64, per_element: f64, flop: f64) -> Result<Self, SimSetupError> {
        for (name, v) in [
            ("latency", latency),
            ("per_element", per_element),
            ("flop", flop),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimSetupError::InvalidCost { name, value: v });
            }
        }
        Ok(Self {
            latency,
            per_element,
            flop,
        })
    }

    /// Unit costs with the latency set to `scale * N^(1/s)`, the smallest
    /// leaf-to-root signal time a machine of `N` unit-size nodes can have
    /// when laid out in `s` dimensions.
    pub fn with_machine_dimension(leaves: usize, s: u32, scale: f64) -> Result<Self, SimSetupError> {
        let bound = crate::analysis::latency_lower_bound(leaves, s)
            .map_err(|_| SimSetupError::InvalidDimension(s))?;
        Self::new(scale * bound, 1.0, 1.0)
    }

    pub fn transfer_time(&self, elements: usize) -> f64 {
        self.latency + self.per_element * elements as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimSetupError {
    #[error("cost {name} must be finite and nonnegative, got {value}")]
    InvalidCost { name: &'static str, value: f64 },
    #[error("machine dimension must be 1, 2 or 3, got {0}")]
    InvalidDimension(u32),
}

/// One completed message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from: usize,
    pub to: usize,
    /// Iteration tag of the sender when the send was posted.
    pub iter: u32,
    pub elements: usize,
    /// Time the sender posted the send.
    pub t_ready: f64,
    /// Time the receiver posted the matching receive.
    pub t_recv: f64,
    pub t_done: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: usize,
    pub level: u32,
    pub proc: usize,
    pub flops: u64,
    /// Time spent computing or transferring, excluding waits.
    pub busy: f64,
    /// Clock value when the node's program returned.
    pub finish: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationVolume {
    pub iter: u32,
    pub messages: usize,
    pub elements: usize,
}

/// Problem sizes attached by drivers that know them; lets reports from
/// different runs be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub leaves: usize,
    pub block_size: usize,
    pub rhs_cols: usize,
}

/// A node-local step, kept for critical-path analysis.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Compute { flops: u64, duration: f64 },
    /// Messages exchanged by one primitive call. Several entries mean the
    /// node posted them together and continued after the last one finished.
    Comm { messages: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub makespan: f64,
    pub cost: CostModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemInfo>,
    pub nodes: Vec<NodeReport>,
    pub messages: Vec<MessageRecord>,
    pub per_iteration_volume: Vec<IterationVolume>,
    /// Per-node step sequences, in program order. Not serialized.
    #[serde(skip)]
    pub trace: Vec<Vec<Step>>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// A node that could not make progress when the run stalled.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedSite {
    pub node: usize,
    pub level: u32,
    pub proc: usize,
    pub waiting_on: Vec<String>,
}

impl fmt::Display for BlockedSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "node {} (level {}, proc {}) in {}",
            self.node,
            self.level,
            self.proc,
            self.waiting_on.join(" + ")
        )
    }
}

fn list_sites(sites: &[BlockedSite]) -> String {
    sites
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError<E> {
    #[error("expected {expected} leaf inputs, got {actual}")]
    InputCountMismatch { expected: usize, actual: usize },
    #[error("node {node} called {op} but has no such link")]
    NoSuchLink { node: usize, op: &'static str },
    #[error("deadlock: {}", list_sites(.blocked))]
    Deadlock { blocked: Vec<BlockedSite> },
    #[error("node {node} failed: {error}")]
    Program { node: usize, error: E },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    Send,
    Recv,
}

type Edge = (usize, usize);

struct PendingSend {
    payload: Payload,
    posted: f64,
    iter: u32,
}

struct Completion {
    payload: Option<Payload>,
    start: f64,
    done: f64,
    message: usize,
}

struct Shared {
    cost: CostModel,
    clocks: Vec<f64>,
    busy: Vec<f64>,
    flops: Vec<u64>,
    iteration: Vec<u32>,
    ready: Vec<bool>,
    sends: HashMap<Edge, PendingSend>,
    recvs: HashMap<Edge, f64>,
    done: HashMap<(Edge, Role), Completion>,
    waiting: Vec<BTreeMap<(Edge, u8), &'static str>>,
    messages: Vec<MessageRecord>,
    trace: Vec<Vec<Step>>,
    fault: Option<(usize, &'static str)>,
}

impl Shared {
    fn try_match(&mut self, edge: Edge) {
        if !(self.sends.contains_key(&edge) && self.recvs.contains_key(&edge)) {
            return;
        }
        let send = self.sends.remove(&edge).expect("checked");
        let recv_posted = self.recvs.remove(&edge).expect("checked");
        let elements = payload_elements(&send.payload);
        let start = send.posted.max(recv_posted);
        let done = start + self.cost.transfer_time(elements);
        let message = self.messages.len();
        self.messages.push(MessageRecord {
            from: edge.0,
            to: edge.1,
            iter: send.iter,
            elements,
            t_ready: send.posted,
            t_recv: recv_posted,
            t_done: done,
        });
        self.done.insert(
            (edge, Role::Send),
            Completion {
                payload: None,
                start,
                done,
                message,
            },
        );
        self.done.insert(
            (edge, Role::Recv),
            Completion {
                payload: Some(send.payload),
                start,
                done,
                message,
            },
        );
        self.ready[edge.0] = true;
        self.ready[edge.1] = true;
    }
}

#[derive(Clone, Copy)]
enum Link {
    Parent,
    UpChild,
    DownChild,
}

/// Handle through which a node program reads its identity, charges work and
/// exchanges messages.
#[derive(Clone)]
pub struct NodeCtx {
    id: NodeId,
    layout: Rc<TreeLayout>,
    shared: Rc<RefCell<Shared>>,
}

impl NodeCtx {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn info(&self) -> &NodeInfo {
        self.layout.node(self.id)
    }

    pub fn level(&self) -> u32 {
        self.info().level
    }

    pub fn depth(&self) -> u32 {
        self.layout.depth()
    }

    pub fn layout(&self) -> &TreeLayout {
        &self.layout
    }

    /// Processor number of this node's ancestor on `level`.
    pub fn my_proc_num(&self, level: u32) -> usize {
        self.layout
            .my_proc_num(self.id, level)
            .expect("level at or above own level")
    }

    pub fn clock(&self) -> f64 {
        self.shared.borrow().clocks[self.id.0]
    }

    /// Tag attached to every message this node sends from now on.
    pub fn set_iteration(&self, iter: u32) {
        self.shared.borrow_mut().iteration[self.id.0] = iter;
    }

    /// Charges local arithmetic.
    pub fn compute(&self, flops: Flops) {
        let mut s = self.shared.borrow_mut();
        let n = self.id.0;
        let duration = s.cost.flop * flops.get() as f64;
        s.clocks[n] += duration;
        s.busy[n] += duration;
        s.flops[n] += flops.get();
        s.trace[n].push(Step::Compute {
            flops: flops.get(),
            duration,
        });
    }

    fn neighbour(&self, link: Link) -> Option<NodeId> {
        let info = self.info();
        match link {
            Link::Parent => info.parent,
            Link::UpChild => info.up_child,
            Link::DownChild => info.down_child,
        }
    }

    fn post(&self, link: Link, payload: Option<Payload>, op: &'static str) -> Option<(Edge, Role)> {
        let me = self.id.0;
        let mut s = self.shared.borrow_mut();
        let Some(other) = self.neighbour(link) else {
            if s.fault.is_none() {
                s.fault = Some((me, op));
            }
            return None;
        };
        let now = s.clocks[me];
        let (edge, role) = match payload {
            Some(payload) => {
                let edge = (me, other.0);
                let iter = s.iteration[me];
                let prev = s.sends.insert(
                    edge,
                    PendingSend {
                        payload,
                        posted: now,
                        iter,
                    },
                );
                debug_assert!(prev.is_none(), "a node posts one send per link at a time");
                (edge, Role::Send)
            }
            None => {
                let edge = (other.0, me);
                let prev = s.recvs.insert(edge, now);
                debug_assert!(prev.is_none(), "a node posts one receive per link at a time");
                (edge, Role::Recv)
            }
        };
        s.waiting[me].insert((edge, role as u8), op);
        s.try_match(edge);
        Some((edge, role))
    }

    fn exchange(&self, ops: Vec<(Link, Option<Payload>, &'static str)>) -> Exchange {
        Exchange {
            ctx: self.clone(),
            pending: ops.into_iter().map(|(l, p, op)| OpState::Unposted(l, p, op)).collect(),
            started: false,
        }
    }

    async fn send(&self, link: Link, payload: Payload, op: &'static str) {
        self.exchange(vec![(link, Some(payload), op)]).await;
    }

    async fn receive(&self, link: Link, op: &'static str) -> Payload {
        let mut got = self.exchange(vec![(link, None, op)]).await;
        got.pop().flatten().expect("receive yields a payload")
    }

    pub async fn send_to_parent(&self, payload: Payload) {
        self.send(Link::Parent, payload, "send_to_parent").await
    }

    pub async fn send_to_up_child(&self, payload: Payload) {
        self.send(Link::UpChild, payload, "send_to_up_child").await
    }

    pub async fn send_to_down_child(&self, payload: Payload) {
        self.send(Link::DownChild, payload, "send_to_down_child").await
    }

    pub async fn receive_from_parent(&self) -> Payload {
        self.receive(Link::Parent, "receive_from_parent").await
    }

    pub async fn receive_from_up_child(&self) -> Payload {
        self.receive(Link::UpChild, "receive_from_up_child").await
    }

    pub async fn receive_from_down_child(&self) -> Payload {
        self.receive(Link::DownChild, "receive_from_down_child").await
    }

    /// Posts receives on both child links at once and resumes when both
    /// have completed. Returns `(up, down)`.
    pub async fn receive_from_children(&self) -> (Payload, Payload) {
        let mut got = self
            .exchange(vec![
                (Link::UpChild, None, "receive_from_up_child"),
                (Link::DownChild, None, "receive_from_down_child"),
            ])
            .await;
        let down = got.pop().flatten().expect("down payload");
        let up = got.pop().flatten().expect("up payload");
        (up, down)
    }
}

enum OpState {
    Unposted(Link, Option<Payload>, &'static str),
    Posted(Edge, Role),
    Done(Completion),
}

/// Future for a batch of operations posted at the same clock value.
struct Exchange {
    ctx: NodeCtx,
    pending: Vec<OpState>,
    started: bool,
}

impl Future for Exchange {
    type Output = Vec<Option<Payload>>;

    fn poll(self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        let this = self.get_mut();
        if !this.started {
            this.started = true;
            for slot in this.pending.iter_mut() {
                let OpState::Unposted(link, payload, op) =
                    std::mem::replace(slot, OpState::Posted((0, 0), Role::Send))
                else {
                    unreachable!("fresh exchange")
                };
                match this.ctx.post(link, payload, op) {
                    Some((edge, role)) => *slot = OpState::Posted(edge, role),
                    // The run aborts on the recorded fault; stay pending.
                    None => return Poll::Pending,
                }
            }
        }
        let me = this.ctx.id.0;
        let mut s = this.ctx.shared.borrow_mut();
        for slot in this.pending.iter_mut() {
            if let OpState::Posted(edge, role) = *slot {
                if let Some(c) = s.done.remove(&(edge, role)) {
                    s.waiting[me].remove(&(edge, role as u8));
                    *slot = OpState::Done(c);
                }
            }
        }
        if !this.pending.iter().all(|o| matches!(o, OpState::Done(_))) {
            return Poll::Pending;
        }
        let completions: Vec<Completion> = this
            .pending
            .drain(..)
            .map(|o| match o {
                OpState::Done(c) => c,
                _ => unreachable!(),
            })
            .collect();
        let finish = completions.iter().fold(f64::NEG_INFINITY, |a, c| a.max(c.done));
        let busy = completions
            .iter()
            .fold(0.0_f64, |a, c| a.max(c.done - c.start));
        s.clocks[me] = s.clocks[me].max(finish);
        s.busy[me] += busy;
        s.trace[me].push(Step::Comm {
            messages: completions.iter().map(|c| c.message).collect(),
        });
        Poll::Ready(completions.into_iter().map(|c| c.payload).collect())
    }
}

type Task<O, E> = Pin<Box<dyn Future<Output = Result<O, E>>>>;

/// Spawned node tasks, ready to [`run`].
pub struct SimHandle<O, E> {
    layout: Rc<TreeLayout>,
    shared: Rc<RefCell<Shared>>,
    tasks: Vec<Option<Task<O, E>>>,
}

impl<O, E> SimHandle<O, E> {
    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }
}

/// Result of a completed run: the report plus whatever each node returned.
pub struct SimOutcome<O> {
    pub report: SimReport,
    pub outputs: Vec<O>,
}

/// Instantiates one task per node. Leaf `p` receives `inputs[p - 1]`;
/// internal nodes get `None`.
pub fn spawn<I, O, E, F, Fut>(
    layout: &TreeLayout,
    cost: CostModel,
    inputs: Vec<I>,
    program: F,
) -> Result<SimHandle<O, E>, SimError<E>>
where
    F: Fn(NodeCtx, Option<I>) -> Fut,
    Fut: Future<Output = Result<O, E>> + 'static,
{
    let leaves = layout.leaf_count();
    if inputs.len() != leaves {
        return Err(SimError::InputCountMismatch {
            expected: leaves,
            actual: inputs.len(),
        });
    }
    let n = layout.len();
    let layout = Rc::new(layout.clone());
    let shared = Rc::new(RefCell::new(Shared {
        cost,
        clocks: vec![0.0; n],
        busy: vec![0.0; n],
        flops: vec![0; n],
        iteration: vec![0; n],
        ready: vec![true; n],
        sends: HashMap::new(),
        recvs: HashMap::new(),
        done: HashMap::new(),
        waiting: vec![BTreeMap::new(); n],
        messages: Vec::new(),
        trace: vec![Vec::new(); n],
        fault: None,
    }));
    let mut inputs = inputs.into_iter();
    let tasks = (0..n)
        .map(|i| {
            let id = NodeId(i);
            let input = if layout.node(id).is_leaf() {
                inputs.next()
            } else {
                None
            };
            let ctx = NodeCtx {
                id,
                layout: Rc::clone(&layout),
                shared: Rc::clone(&shared),
            };
            Some(Box::pin(program(ctx, input)) as Task<O, E>)
        })
        .collect();
    Ok(SimHandle {
        layout,
        shared,
        tasks,
    })
}

/// Drives every task to completion.
#[allow(clippy::needless_range_loop)]
pub fn run<O, E>(mut handle: SimHandle<O, E>) -> Result<SimOutcome<O>, SimError<E>> {
    let n = handle.tasks.len();
    let mut outputs: Vec<Option<O>> = (0..n).map(|_| None).collect();
    let mut cx = Context::from_waker(Waker::noop());
    let mut remaining = n;
    while remaining > 0 {
        let mut polled = false;
        for i in 0..n {
            let ready = std::mem::take(&mut handle.shared.borrow_mut().ready[i]);
            if !ready {
                continue;
            }
            let Some(task) = handle.tasks[i].as_mut() else {
                continue;
            };
            polled = true;
            let poll = task.as_mut().poll(&mut cx);
            if let Some((node, op)) = handle.shared.borrow().fault {
                return Err(SimError::NoSuchLink { node, op });
            }
            match poll {
                Poll::Ready(Ok(out)) => {
                    outputs[i] = Some(out);
                    handle.tasks[i] = None;
                    remaining -= 1;
                }
                Poll::Ready(Err(error)) => return Err(SimError::Program { node: i, error }),
                Poll::Pending => {}
            }
        }
        if !polled && remaining > 0 {
            let s = handle.shared.borrow();
            let blocked = (0..n)
                .filter(|&i| handle.tasks[i].is_some())
                .map(|i| {
                    let info = handle.layout.node(NodeId(i));
                    BlockedSite {
                        node: i,
                        level: info.level,
                        proc: info.proc_num,
                        waiting_on: s.waiting[i].values().map(|op| op.to_string()).collect(),
                    }
                })
                .collect();
            return Err(SimError::Deadlock { blocked });
        }
    }
    drop(handle.tasks);
    let shared = Rc::try_unwrap(handle.shared)
        .ok()
        .expect("all tasks dropped")
        .into_inner();
    let report = build_report(&handle.layout, shared);
    Ok(SimOutcome {
        report,
        outputs: outputs.into_iter().map(|o| o.expect("finished")).collect(),
    })
}

fn build_report(layout: &TreeLayout, s: Shared) -> SimReport {
    let nodes: Vec<NodeReport> = layout
        .nodes()
        .iter()
        .map(|info| NodeReport {
            id: info.id.0,
            level: info.level,
            proc: info.proc_num,
            flops: s.flops[info.id.0],
            busy: s.busy[info.id.0],
            finish: s.clocks[info.id.0],
        })
        .collect();
    let makespan = nodes
        .iter()
        .map(|n| n.finish)
        .chain(s.messages.iter().map(|m| m.t_done))
        .fold(0.0, f64::max);
    let mut volume: BTreeMap<u32, IterationVolume> = BTreeMap::new();
    for m in &s.messages {
        let v = volume.entry(m.iter).or_insert(IterationVolume {
            iter: m.iter,
            messages: 0,
            elements: 0,
        });
        v.messages += 1;
        v.elements += m.elements;
    }
    SimReport {
        makespan,
        cost: s.cost,
        problem: None,
        nodes,
        messages: s.messages,
        per_iteration_volume: volume.into_values().collect(),
        trace: s.trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type R = Result<(), ()>;

    fn scalar(v: f64) -> Payload {
        vec![Matrix::from_rows(&[[v]])]
    }

    #[test]
    fn idle_program_has_zero_makespan() {
        let layout = TreeLayout::with_leaves(2).unwrap();
        let h = spawn(&layout, CostModel::default(), vec![(), ()], |_, _| async {
            R::Ok(())
        })
        .unwrap();
        assert_eq!(h.task_count(), 3);
        let out = run(h).unwrap();
        assert_eq!(out.report.makespan, 0.0);
        assert!(out.report.messages.is_empty());
    }

    #[test]
    fn input_count_is_checked() {
        let layout = TreeLayout::with_leaves(8).unwrap();
        let r = spawn(&layout, CostModel::default(), vec![(); 7], |_, _| async {
            R::Ok(())
        });
        assert!(matches!(
            r,
            Err(SimError::InputCountMismatch {
                expected: 8,
                actual: 7
            })
        ));
    }

    #[test]
    fn compute_only() {
        let layout = TreeLayout::with_leaves(2).unwrap();
        let cost = CostModel::new(0.0, 1.0, 0.5).unwrap();
        let h = spawn(&layout, cost, vec![(), ()], |ctx, _| async move {
            if ctx.info().is_root() {
                ctx.compute(Flops(40));
            }
            R::Ok(())
        })
        .unwrap();
        let rep = run(h).unwrap().report;
        assert_eq!(rep.makespan, 20.0);
        assert_eq!(rep.nodes[2].flops, 40);
    }

    #[test]
    fn root_to_child_transfer() {
        let m = 3;
        let layout = TreeLayout::with_leaves(2).unwrap();
        let cost = CostModel::new(2.0, 0.5, 1.0).unwrap();
        let h = spawn(&layout, cost, vec![(), ()], move |ctx, _| async move {
            let info = *ctx.info();
            if info.is_root() {
                ctx.send_to_up_child(vec![Matrix::zeros(m, m)]).await;
            } else if info.proc_num == 1 {
                let p = ctx.receive_from_parent().await;
                assert_eq!(p[0].shape(), (m, m));
            }
            Ok::<f64, ()>(ctx.clock())
        })
        .unwrap();
        let out = run(h).unwrap();
        let expected = 2.0 + 0.5 * (m * m) as f64;
        assert_eq!(out.outputs[0], expected);
        assert_eq!(out.outputs[2], expected);
        assert_eq!(out.outputs[1], 0.0);
    }

    #[test]
    fn leaf_has_no_children() {
        let layout = TreeLayout::with_leaves(2).unwrap();
        let h = spawn(&layout, CostModel::default(), vec![(), ()], |ctx, _| async move {
            if ctx.info().proc_num == 2 && ctx.info().is_leaf() {
                ctx.send_to_up_child(scalar(1.0)).await;
            }
            R::Ok(())
        })
        .unwrap();
        assert!(matches!(
            run(h),
            Err(SimError::NoSuchLink {
                node: 1,
                op: "send_to_up_child"
            })
        ));
    }

    #[test]
    fn mutual_receive_deadlocks() {
        let layout = TreeLayout::with_leaves(2).unwrap();
        let h = spawn(&layout, CostModel::default(), vec![(), ()], |ctx, _| async move {
            let info = *ctx.info();
            if info.is_root() {
                ctx.receive_from_up_child().await;
            } else if info.proc_num == 1 {
                ctx.receive_from_parent().await;
            }
            R::Ok(())
        })
        .unwrap();
        match run(h) {
            Err(SimError::Deadlock { blocked }) => {
                assert_eq!(blocked.len(), 2);
                assert_eq!(blocked[0].node, 0);
                assert_eq!(blocked[0].waiting_on, vec!["receive_from_parent"]);
                assert_eq!(blocked[1].node, 2);
                assert_eq!(blocked[1].waiting_on, vec!["receive_from_up_child"]);
            }
            _ => panic!("expected deadlock"),
        }
    }

    #[test]
    fn relay_from_leaf_to_root() {
        for leaves in [2usize, 4, 8, 16] {
            let layout = TreeLayout::with_leaves(leaves).unwrap();
            let d = layout.depth();
            let cost = CostModel::new(1.0, 1.0, 0.0).unwrap();
            // leaf 1 sends one scalar, every node on its path forwards it
            let h = spawn(&layout, cost, vec![(); leaves], |ctx, _| async move {
                let on_path = ctx.info().proc_num == 1;
                if !on_path {
                    return R::Ok(());
                }
                let v = if ctx.info().is_leaf() {
                    scalar(7.0)
                } else {
                    ctx.receive_from_up_child().await
                };
                if !ctx.info().is_root() {
                    ctx.send_to_parent(v).await;
                }
                R::Ok(())
            })
            .unwrap();
            let rep = run(h).unwrap().report;
            assert_eq!(rep.makespan, 2.0 * d as f64);
            assert_eq!(rep.messages.len(), d as usize);
        }
    }

    #[test]
    fn paired_receive_waits_for_both() {
        let layout = TreeLayout::with_leaves(2).unwrap();
        let cost = CostModel::new(0.0, 1.0, 1.0).unwrap();
        let h = spawn(&layout, cost, vec![3u64, 10u64], |ctx, work| async move {
            if let Some(w) = work {
                ctx.compute(Flops(w));
                ctx.send_to_parent(scalar(w as f64)).await;
            } else {
                let (up, down) = ctx.receive_from_children().await;
                assert_eq!(up[0][(0, 0)], 3.0);
                assert_eq!(down[0][(0, 0)], 10.0);
            }
            Ok::<f64, ()>(ctx.clock())
        })
        .unwrap();
        let out = run(h).unwrap();
        assert_eq!(out.outputs, vec![4.0, 11.0, 11.0]);
        // busy counts the longer transfer only once
        assert_eq!(out.report.nodes[2].busy, 1.0);
    }
}
