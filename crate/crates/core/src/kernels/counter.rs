use std::collections::BTreeMap;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

/// Operation counts for one kernel invocation or one layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerOps {
    pub multiplications: u64,
    pub additions: u64,
}

impl LayerOps {
    pub fn new(multiplications: u64, additions: u64) -> Self {
        LayerOps {
            multiplications,
            additions,
        }
    }

    pub(crate) fn mul_add(&mut self, n: usize) {
        self.multiplications += n as u64;
        self.additions += n as u64;
    }
}

impl AddAssign for LayerOps {
    fn add_assign(&mut self, rhs: LayerOps) {
        self.multiplications += rhs.multiplications;
        self.additions += rhs.additions;
    }
}

/// Per-run multiplication and addition counts, broken down by linear-layer
/// index. Counts only grow; [`OpCounter::reset`] starts a new run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub multiplications: u64,
    pub additions: u64,
    pub per_layer: BTreeMap<usize, LayerOps>,
}

impl OpCounter {
    pub fn new() -> Self {
        OpCounter::default()
    }

    pub fn record(&mut self, layer: usize, ops: LayerOps) {
        self.multiplications += ops.multiplications;
        self.additions += ops.additions;
        *self.per_layer.entry(layer).or_default() += ops;
    }

    pub fn layer(&self, layer: usize) -> LayerOps {
        self.per_layer.get(&layer).copied().unwrap_or_default()
    }

    pub fn merge(&mut self, other: &OpCounter) {
        for (&layer, &ops) in &other.per_layer {
            self.record(layer, ops);
        }
    }

    pub fn reset(&mut self) {
        *self = OpCounter::default();
    }
}
