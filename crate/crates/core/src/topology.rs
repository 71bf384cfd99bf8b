//! The two-tree of `2N - 1` nodes that carries the solver.
//!
//! Leaves sit on level 0 and the root on level `d = log2(N)`. Within a level,
//! processor numbers count from 1 at the uppermost node. A node with
//! processor number `p` on level `l` has parent `ceil(p / 2)` on level
//! `l + 1`, up-child `2p - 1` and down-child `2p` on level `l - 1`.
//!
//! Processor numbers must be 1-based for the wing placement loops to work.
//! Tracing the upper-coupling loop for leaf 1 of `N = 8` with a 0-based
//! index would hit zero on the first iteration and file the block under the
//! root level; with 1-based numbers the trace is
//!
//! ```text
//! level 3: idx 1 <  4        -> 1
//! level 2: idx 1 <  2        -> 1
//! level 1: idx 1 >= 1 -> 0   -> hit, level 1
//! ```
//!
//! which is the level-1 boundary between leaves 1 and 2, as it should be.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("leaf count {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error("right-hand side count must be at least 1")]
    ZeroRhs,
    #[error("bandwidth {bandwidth} exceeds block size {block_size}")]
    BandwidthTooLarge { bandwidth: usize, block_size: usize },
    #[error("leaf {leaf} outside 1..={leaves}")]
    OutOfRange { leaf: usize, leaves: usize },
}

/// Sizes of a distributed block-tridiagonal problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemShape {
    leaves: usize,
    block_size: usize,
    rhs_cols: usize,
    bandwidth: usize,
    depth: u32,
}

impl ProblemShape {
    pub fn new(
        leaves: usize,
        block_size: usize,
        rhs_cols: usize,
        bandwidth: usize,
    ) -> Result<Self, ShapeError> {
        if !leaves.is_power_of_two() {
            return Err(ShapeError::NotPowerOfTwo(leaves));
        }
        if block_size == 0 {
            return Err(ShapeError::ZeroBlockSize);
        }
        if rhs_cols == 0 {
            return Err(ShapeError::ZeroRhs);
        }
        if bandwidth > block_size {
            return Err(ShapeError::BandwidthTooLarge {
                bandwidth,
                block_size,
            });
        }
        Ok(Self {
            leaves,
            block_size,
            rhs_cols,
            bandwidth,
            depth: leaves.trailing_zeros(),
        })
    }

    /// Number of leaves, `N`.
    pub fn leaves(&self) -> usize {
        self.leaves
    }

    /// Block size `m`.
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Right-hand side columns `k`.
    pub fn rhs_cols(&self) -> usize {
        self.rhs_cols
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Tree depth `d = log2(N)`.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Dimension of the assembled system, `N * m`.
    pub fn dim(&self) -> usize {
        self.leaves * self.block_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInfo {
    pub id: NodeId,
    pub level: u32,
    /// 1-based position within the level, counted from the top.
    pub proc_num: usize,
    pub parent: Option<NodeId>,
    pub up_child: Option<NodeId>,
    pub down_child: Option<NodeId>,
}

impl NodeInfo {
    pub fn is_leaf(&self) -> bool {
        self.level == 0
    }

    pub fn is_root(&self) -> bool {
        self.parent.is_none()
    }
}

/// Immutable node table of the two-tree. Ids are assigned level by level
/// starting at the leaves, so leaf `p` has id `p - 1` and the root has the
/// largest id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeLayout {
    depth: u32,
    nodes: Vec<NodeInfo>,
    level_offsets: Vec<usize>,
}

impl TreeLayout {
    pub fn new(shape: &ProblemShape) -> Self {
        Self::with_leaves(shape.leaves()).expect("shape guarantees a power of two")
    }

    pub fn with_leaves(leaves: usize) -> Result<Self, ShapeError> {
        if !leaves.is_power_of_two() {
            return Err(ShapeError::NotPowerOfTwo(leaves));
        }
        let depth = leaves.trailing_zeros();
        let mut level_offsets = Vec::with_capacity(depth as usize + 2);
        let mut offset = 0;
        for level in 0..=depth {
            level_offsets.push(offset);
            offset += leaves >> level;
        }
        level_offsets.push(offset);

        let id_of = |level: u32, proc_num: usize| NodeId(level_offsets[level as usize] + proc_num - 1);
        let mut nodes = Vec::with_capacity(offset);
        for level in 0..=depth {
            for proc_num in 1..=(leaves >> level) {
                let parent = (level < depth).then(|| id_of(level + 1, proc_num.div_ceil(2)));
                let (up_child, down_child) = if level > 0 {
                    (
                        Some(id_of(level - 1, 2 * proc_num - 1)),
                        Some(id_of(level - 1, 2 * proc_num)),
                    )
                } else {
                    (None, None)
                };
                nodes.push(NodeInfo {
                    id: id_of(level, proc_num),
                    level,
                    proc_num,
                    parent,
                    up_child,
                    down_child,
                });
            }
        }
        Ok(Self {
            depth,
            nodes,
            level_offsets,
        })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeInfo {
        &self.nodes[id.0]
    }

    pub fn id_of(&self, level: u32, proc_num: usize) -> Option<NodeId> {
        if level > self.depth || proc_num == 0 || proc_num > self.leaf_count() >> level {
            return None;
        }
        Some(NodeId(self.level_offsets[level as usize] + proc_num - 1))
    }

    pub fn leaf(&self, proc_num: usize) -> Option<NodeId> {
        self.id_of(0, proc_num)
    }

    pub fn root(&self) -> NodeId {
        NodeId(self.nodes.len() - 1)
    }

    /// Processor number of `id`'s ancestor on `level` (or of `id` itself
    /// when `level` is its own level). `None` below the node's level.
    pub fn my_proc_num(&self, id: NodeId, level: u32) -> Option<usize> {
        let n = self.node(id);
        if level < n.level || level > self.depth {
            return None;
        }
        Some(n.proc_num.div_ceil(1 << (level - n.level)))
    }
}

/// Processor numbers of a leaf's ancestors, indexed by level `0..=d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcPath(pub Vec<usize>);

impl ProcPath {
    pub fn at(&self, level: u32) -> usize {
        self.0[level as usize]
    }
}

pub fn proc_path(leaf_proc: usize, shape: &ProblemShape) -> Result<ProcPath, ShapeError> {
    if leaf_proc == 0 || leaf_proc > shape.leaves() {
        return Err(ShapeError::OutOfRange {
            leaf: leaf_proc,
            leaves: shape.leaves(),
        });
    }
    Ok(ProcPath(
        (0..=shape.depth())
            .map(|level| leaf_proc.div_ceil(1 << level))
            .collect(),
    ))
}

/// Which off-diagonal block of a row-block is being placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// Couples row-block `i` to block column `i + 1`; zero on the lowermost leaf.
    Upper,
    /// Couples row-block `i` to block column `i - 1`; zero on the uppermost leaf.
    Lower,
}

/// Wing level that receives a leaf's coupling block, found by the
/// halving loop from the root level down. `None` when the loop runs out,
/// which happens only for the lowermost leaf's upper block.
///
/// The uppermost leaf's lower block is filed under the root level; it is
/// required to be zero so the placement is harmless.
pub fn wing_level(leaf_proc: usize, coupling: Coupling, depth: u32) -> Option<u32> {
    debug_assert!(leaf_proc >= 1 && leaf_proc <= 1 << depth);
    let mut idx = match coupling {
        Coupling::Upper => leaf_proc,
        Coupling::Lower => leaf_proc - 1,
    };
    let mut half = (1usize << depth) / 2;
    for level in (1..=depth).rev() {
        if idx >= half {
            idx -= half;
        }
        if idx == 0 {
            return Some(level);
        }
        half /= 2;
    }
    None
}

/// 1-based block column that a leaf's wing on `level` refers to: the first
/// block of the down half of the leaf's level-`level` subtree if the leaf
/// is in the up half, the last block of the up half otherwise.
pub fn wing_target(leaf_proc: usize, level: u32) -> usize {
    debug_assert!(level >= 1);
    let idx = leaf_proc - 1;
    let base = (idx >> level) << level;
    let half = 1usize << (level - 1);
    if idx - base < half {
        base + half + 1
    } else {
        base + half
    }
}
