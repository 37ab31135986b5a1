//! Loss conditions: each training constraint (initial data, boundary values,
//! observations, PDE collocation, periodicity, discrete stage matching) is a
//! descriptor that contributes one reduced loss term; the total loss is
//! their weighted sum.

use crate::array::Array;
use crate::data::PointSet;
use crate::error::{Error, Result};
use crate::precision::Scalar;
use crate::tape::{Tape, Tensor};

/// How a residual tensor collapses to a scalar loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Reducer {
    /// Mean of squares over all N·K entries.
    Mse,
    /// Sum of squares over all N·K entries.
    Sse,
}

impl std::str::FromStr for Reducer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mse" => Ok(Reducer::Mse),
            "sse" => Ok(Reducer::Sse),
            other => Err(format!("unknown reducer '{other}' (expected mse or sse)")),
        }
    }
}

/// Collapses residuals to a scalar on the tape.
pub fn reduce<S: Scalar>(tape: &Tape<S>, residuals: Tensor, reducer: Reducer) -> Tensor {
    let sq = tape.square(residuals);
    match reducer {
        Reducer::Mse => tape.mean(sq),
        Reducer::Sse => tape.sum(sq),
    }
}

/// The constraint family a condition enforces.
#[derive(Debug, Clone, PartialEq)]
pub enum ConditionKind {
    /// Prediction at t = t0 matches targets.
    Initial,
    /// Prediction on the spatial boundary matches targets.
    Dirichlet,
    /// Prediction at scattered points matches observed targets.
    Observation,
    /// PDE residual vanishes at the points.
    Collocation,
    /// Outputs and the requested x-derivative orders agree between the two
    /// paired coordinate sets.
    Periodic { orders: Vec<usize> },
    /// Every discrete-time prediction column matches the snapshot targets.
    DiscreteStage,
}

/// One loss term descriptor: points, reduction, and weight.
#[derive(Debug, Clone)]
pub struct Condition {
    /// Label used in loss breakdowns, e.g. "mse_0" or "sse0_s".
    pub name: String,
    pub kind: ConditionKind,
    pub points: PointSet,
    /// Periodic only: the paired (right-side) coordinates.
    pub pair: Option<PointSet>,
    pub reducer: Reducer,
    pub weight: f64,
}

impl Condition {
    pub fn new(
        name: impl Into<String>,
        kind: ConditionKind,
        points: PointSet,
        pair: Option<PointSet>,
        reducer: Reducer,
    ) -> Result<Self> {
        let c = Self {
            name: name.into(),
            kind,
            points,
            pair,
            reducer,
            weight: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidShape {
                op: "condition_weight",
                message: format!("weight must be finite and >= 0, got {weight}"),
            });
        }
        self.weight = weight;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            ConditionKind::Initial | ConditionKind::Dirichlet | ConditionKind::Observation => {
                if self.points.targets.is_none() {
                    return Err(Error::MissingTargets("target-matching condition"));
                }
            }
            ConditionKind::DiscreteStage => {
                if self.points.targets.is_none() {
                    return Err(Error::MissingTargets("discrete stage condition"));
                }
            }
            ConditionKind::Collocation => {}
            ConditionKind::Periodic { orders } => {
                let pair = self.pair.as_ref().ok_or(Error::MissingTargets(
                    "periodic condition needs a paired coordinate set",
                ))?;
                if pair.len() != self.points.len() || pair.dim() != self.points.dim() {
                    return Err(Error::ShapeMismatch {
                        op: "periodic_pair",
                        lhs: self.points.coords.shape(),
                        rhs: pair.coords.shape(),
                    });
                }
                if orders.is_empty() || orders.iter().any(|&k| k > 3) {
                    return Err(Error::InvalidShape {
                        op: "periodic_orders",
                        message: format!("orders must be non-empty and <= 3, got {orders:?}"),
                    });
                }
            }
        }
        if let Some(pair) = &self.pair {
            if !matches!(self.kind, ConditionKind::Periodic { .. }) && pair.len() > 0 {
                return Err(Error::InvalidShape {
                    op: "condition_pair",
                    message: "only periodic conditions take a paired point set".into(),
                });
            }
        }
        Ok(())
    }
}

/// Stacks periodic mismatches [∂ᵏu_j(left) − ∂ᵏu_j(right)] for every output
/// j and requested order k into one [N, outputs·orders] tensor. `forward`
/// maps a bound coordinate tensor to per-output columns; `col` is the
/// coordinate column differentiated.
pub fn periodic_stack<S: Scalar, F>(
    tape: &Tape<S>,
    mut forward: F,
    left: Tensor,
    right: Tensor,
    col: usize,
    orders: &[usize],
) -> Result<Tensor>
where
    F: FnMut(&Tape<S>, Tensor) -> Result<Vec<Tensor>>,
{
    let out_l = forward(tape, left)?;
    let out_r = forward(tape, right)?;
    if out_l.len() != out_r.len() || out_l.is_empty() {
        return Err(Error::InvalidShape {
            op: "periodic_stack",
            message: format!(
                "forward returned {} and {} outputs",
                out_l.len(),
                out_r.len()
            ),
        });
    }
    let mut parts = Vec::new();
    for &k in orders {
        for (&ul, &ur) in out_l.iter().zip(&out_r) {
            let (dl, dr) = if k == 0 {
                (ul, ur)
            } else if ul.cols() == 1 {
                (tape.partials(ul, left, col, k)?, tape.partials(ur, right, col, k)?)
            } else {
                // Multi-column outputs (stage blocks) differentiate entrywise.
                (
                    tape.partials_multi(ul, left, col, k)?,
                    tape.partials_multi(ur, right, col, k)?,
                )
            };
            parts.push(tape.sub(dl, dr)?);
        }
    }
    tape.concat(&parts)
}

/// A named, weighted scalar loss node.
#[derive(Debug, Clone)]
pub struct LossTerm {
    pub name: String,
    pub value: Tensor,
    pub weight: f64,
}

/// Weighted sum of the term nodes; the terms themselves stay evaluable for
/// per-condition breakdown logging.
pub fn total_loss<S: Scalar>(tape: &Tape<S>, terms: &[LossTerm]) -> Result<Tensor> {
    if terms.is_empty() {
        return Err(Error::InvalidShape {
            op: "total_loss",
            message: "need at least one loss term".into(),
        });
    }
    let mut acc: Option<Tensor> = None;
    for term in terms {
        let scaled = if term.weight == 1.0 {
            term.value
        } else {
            tape.mul_scalar(term.value, term.weight)
        };
        acc = Some(match acc {
            None => scaled,
            Some(a) => tape.add(a, scaled)?,
        });
    }
    Ok(acc.unwrap())
}

/// Helper for target-matching conditions: reduce(prediction − targets).
pub fn target_mismatch<S: Scalar>(
    tape: &Tape<S>,
    prediction: Tensor,
    targets: Tensor,
    reducer: Reducer,
) -> Result<Tensor> {
    Ok(reduce(tape, tape.sub(prediction, targets)?, reducer))
}

/// Casts host f64 point data to the run precision.
pub fn cast_array<S: Scalar>(a: &Array<f64>) -> Array<S> {
    Array::from_fn(a.rows(), a.cols(), |i, j| S::from_f64(a.get(i, j)))
}
