//! Closed-form cost predictions and lower bounds, plus checks of simulated
//! makespans against them.
//!
//! The solver's predicted time is
//!
//! ```text
//! L * (latency + per_element * m(mL + k) + flop * m^2 (mL + k)),   L = log2 N
//! ```
//!
//! i.e. `L` rounds, each moving one leaf payload of `m(mL + k)` scalars and
//! doing `O(m^2 (mL + k))` arithmetic per node. It is an order-of-magnitude
//! model; simulated makespans are compared by ratio, not equality.
//!
//! # Lower bounds
//!
//! Nodes of unit size packed into an `s`-dimensional ball of `N` nodes need a
//! radius of order `N^(1/s)`, so some pair of nodes is that far apart and no
//! cabling can bring the worst-case latency below `N^(1/s)`. On a line the
//! two outermost of `N` nodes have `N - 2` nodes between them.
//!
//! Solving a tridiagonal system of dimension `N` on `N^p` nodes forces every
//! node to read `N^(1-p)` values and to exchange information with every
//! other node, at distance `N^(p/s)`. The time is at least
//! `N^max(1-p, p/s)`, which is minimised when `1 - p = p/s`, giving
//! `p = s/(s+1)` and time exponent `1/(s+1)`.

use std::io;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::CostModel;

pub type Rational = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("machine dimension must be 1, 2 or 3, got {0}")]
    InvalidDimension(u32),
    #[error("node data exponent q = {q} is below 1 - p = {min}")]
    DataExponentTooSmall { q: Rational, min: Rational },
    #[error("scaling check needs at least 3 samples, got {0}")]
    InsufficientSamples(usize),
    #[error("duplicate sample for N = {0}")]
    DuplicateLeaves(usize),
    #[error("model value for N = {leaves} is {value}, expected positive and finite")]
    BadModelValue { leaves: usize, value: f64 },
}

fn check_dimension(s: u32) -> Result<(), AnalysisError> {
    if (1..=3).contains(&s) {
        Ok(())
    } else {
        Err(AnalysisError::InvalidDimension(s))
    }
}

/// Parameters of the complexity discussion. `nodes_exp` (`p`) and
/// `data_exp` (`q`) say the machine has `N^p` nodes holding `N^q` values
/// each; they must cover the `N` values of the problem, so `q >= 1 - p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityParams {
    pub leaves: usize,
    pub block_size: usize,
    pub rhs_cols: usize,
    pub latency: f64,
    pub dimension: u32,
    pub nodes_exp: Rational,
    pub data_exp: Rational,
}

impl ComplexityParams {
    pub fn new(
        leaves: usize,
        block_size: usize,
        rhs_cols: usize,
        latency: f64,
        dimension: u32,
        nodes_exp: Rational,
        data_exp: Rational,
    ) -> Result<Self, AnalysisError> {
        check_dimension(dimension)?;
        let min = Rational::from_integer(1) - nodes_exp;
        if data_exp < min {
            return Err(AnalysisError::DataExponentTooSmall { q: data_exp, min });
        }
        Ok(Self {
            leaves,
            block_size,
            rhs_cols,
            latency,
            dimension,
            nodes_exp,
            data_exp,
        })
    }

    /// Exponent `omega` of the lower bound `N^max(1 - p, p/s)` for this `p`.
    pub fn time_exponent(&self) -> Rational {
        time_exponent(self.nodes_exp, self.dimension)
    }
}

fn time_exponent(p: Rational, s: u32) -> Rational {
    let read = Rational::from_integer(1) - p;
    let talk = p / Rational::from_integer(s as i64);
    read.max(talk)
}

/// Model time for one solve with `leaves` leaves, block size `m` and `k`
/// right-hand sides under `cost`.
pub fn predicted_time(leaves: usize, block_size: usize, rhs_cols: usize, cost: &CostModel) -> f64 {
    let l = (leaves as f64).log2();
    let m = block_size as f64;
    let k = rhs_cols as f64;
    let cols = m * l + k;
    l * (cost.latency + cost.per_element * m * cols + cost.flop * m * m * cols)
}

/// Smallest possible worst-case latency, `N^(1/s)`, for `N` unit nodes in
/// `s` dimensions.
pub fn latency_lower_bound(leaves: usize, s: u32) -> Result<f64, AnalysisError> {
    check_dimension(s)?;
    Ok((leaves as f64).powf(1.0 / s as f64))
}

/// Node-count exponent `p` and time exponent `omega` that minimise the
/// lower bound in `s` dimensions.
pub fn optimal_node_exponent(s: u32) -> Result<(Rational, Rational), AnalysisError> {
    check_dimension(s)?;
    let s = s as i64;
    Ok((Rational::new(s, s + 1), Rational::new(1, s + 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub leaves: usize,
    pub makespan: f64,
}

/// One CSV row: `N,makespan,model,ratio`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    #[serde(rename = "N")]
    pub leaves: usize,
    pub makespan: f64,
    pub model: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Largest ratio over smallest ratio.
    pub spread: f64,
    pub band: f64,
    pub within_band: bool,
}

impl ScalingReport {
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        write_scaling_csv(&self.rows, out)
    }
}

pub fn write_scaling_csv<W: io::Write>(rows: &[ScalingRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Makespan/model ratios sorted by `N`, without any sample-count check.
pub fn scaling_rows(
    samples: &[ScalingSample],
    model: impl Fn(usize) -> f64,
) -> Result<Vec<ScalingRow>, AnalysisError> {
    let mut sorted = samples.to_vec();
    sorted.sort_by_key(|s| s.leaves);
    if let Some(w) = sorted.windows(2).find(|w| w[0].leaves == w[1].leaves) {
        return Err(AnalysisError::DuplicateLeaves(w[0].leaves));
    }
    sorted
        .iter()
        .map(|s| {
            let value = model(s.leaves);
            if !(value.is_finite() && value > 0.0) {
                return Err(AnalysisError::BadModelValue {
                    leaves: s.leaves,
                    value,
                });
            }
            Ok(ScalingRow {
                leaves: s.leaves,
                makespan: s.makespan,
                model: value,
                ratio: s.makespan / value,
            })
        })
        .collect()
}

/// Compares makespans against `model` and reports whether all ratios lie
/// within a factor `band` of each other.
pub fn scaling_check(
    samples: &[ScalingSample],
    model: impl Fn(usize) -> f64,
    band: f64,
) -> Result<ScalingReport, AnalysisError> {
    if samples.len() < 3 {
        return Err(AnalysisError::InsufficientSamples(samples.len()));
    }
    let rows = scaling_rows(samples, model)?;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), r| {
        (lo.min(r.ratio), hi.max(r.ratio))
    });
    let spread = hi / lo;
    Ok(ScalingReport {
        rows,
        spread,
        band,
        within_band: spread <= band,
    })
}
