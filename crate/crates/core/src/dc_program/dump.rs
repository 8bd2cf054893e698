//! JSON dump of a convex subproblem for external re-solving.
//!
//! ```json
//! {
//!   "format": "rate-alloc-subproblem/1",
//!   "n_vars": 12,
//!   "var_names": ["delta[1,1]", ...],
//!   "objective": {
//!     "linear": [[var, coeff], ...],
//!     "neg_log": [[var, weight], ...],
//!     "constant": 0.3
//!   },
//!   "blocks": [
//!     {"name": "sensor[1,1]", "dim": 3,
//!      "constant": [[row, col, value], ...],
//!      "terms": [{"var": 0, "entries": [[row, col, value], ...]}, ...]}
//!   ],
//!   "solution": {"x": [...], "objective": 0.12}
//! }
//! ```
//!
//! The problem is `minimize linear·x − Σ w·ln x_var + constant` subject to
//! `constant + Σ x_var·M_var ⪰ 0` for every block. Entries list the upper
//! triangle (row ≤ col, 0-based); an off-diagonal entry stands for both
//! positions. Objective units are nats.

use std::io::{Read, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{ConvexSubproblem, LmiBlock};
use crate::error::{invalid, Result};

pub const FORMAT: &str = "rate-alloc-subproblem/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDump {
    pub format: String,
    pub n_vars: usize,
    pub var_names: Vec<String>,
    pub objective: ObjectiveDump,
    pub blocks: Vec<BlockDump>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveDump {
    pub linear: Vec<(usize, f64)>,
    pub neg_log: Vec<(usize, f64)>,
    pub constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDump {
    pub name: String,
    pub dim: usize,
    pub constant: Vec<(usize, usize, f64)>,
    pub terms: Vec<TermDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermDump {
    pub var: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDump {
    pub x: Vec<f64>,
    pub objective: f64,
}

impl ProblemDump {
    pub fn from_subproblem(sub: &ConvexSubproblem, solution: Option<&DVector<f64>>) -> Self {
        let ix = sub.program.index();
        let linear = sub.linear.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(v, c)| (v, *c)).collect();
        Self {
            format: FORMAT.to_string(),
            n_vars: sub.n_vars(),
            var_names: (0..sub.n_vars()).map(|v| ix.name(v)).collect(),
            objective: ObjectiveDump { linear, neg_log: sub.neg_log.clone(), constant: sub.constant },
            blocks: sub.blocks().iter().map(BlockDump::from).collect(),
            solution: solution.map(|x| SolutionDump { x: x.iter().cloned().collect(), objective: sub.objective(x) }),
        }
    }

    /// Objective of the dumped problem at `x`.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut f = self.objective.constant;
        for &(v, c) in &self.objective.linear {
            f += c * x[v];
        }
        for &(v, w) in &self.objective.neg_log {
            f -= w * x[v].ln();
        }
        f
    }

    /// Blocks converted back to the in-memory representation.
    pub fn lmi_blocks(&self) -> Vec<LmiBlock> {
        self.blocks
            .iter()
            .map(|b| LmiBlock {
                name: b.name.clone(),
                dim: b.dim,
                constant: b.constant.clone(),
                terms: b.terms.iter().map(|t| (t.var, t.entries.clone())).collect(),
            })
            .collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| invalid(format!("problem dump: {e}")))
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let dump: Self = serde_json::from_reader(input).map_err(|e| invalid(format!("problem dump: {e}")))?;
        if dump.format != FORMAT {
            return Err(invalid(format!("unsupported dump format '{}'", dump.format)));
        }
        Ok(dump)
    }
}

impl From<&LmiBlock> for BlockDump {
    fn from(b: &LmiBlock) -> Self {
        Self {
            name: b.name.clone(),
            dim: b.dim,
            constant: b.constant.clone(),
            terms: b.terms.iter().map(|(v, e)| TermDump { var: *v, entries: e.clone() }).collect(),
        }
    }
}
