use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::FieldParams;
use crate::kernels::center;

/// A way of corrupting an honest layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Tamper {
    Honest,
    /// Adds `delta` to entry `index` (taken modulo the output length).
    Entry {
        index: usize,
        delta: i64,
    },
    /// Adds a uniform nonzero residue to a uniformly chosen entry.
    RandomEntry,
    /// Adds `delta` to every entry of row `row`, rows being `row_len` wide.
    Row {
        row: usize,
        delta: i64,
    },
    /// Multiplies the whole output by `factor`.
    Scale {
        factor: i64,
    },
    /// Replaces the output with uniform residues.
    Replace,
}

impl Tamper {
    pub fn is_honest(&self) -> bool {
        matches!(self, Tamper::Honest)
    }

    pub fn apply<R: Rng + ?Sized>(
        &self,
        y: &mut [i64],
        row_len: usize,
        rng: &mut R,
        params: &FieldParams,
    ) {
        if y.is_empty() {
            return;
        }
        let m = i64::from(params.modulus());
        let half = (m - 1) / 2;
        match *self {
            Tamper::Honest => {}
            Tamper::Entry { index, delta } => {
                let i = index % y.len();
                y[i] = center(y[i] + delta, m);
            }
            Tamper::RandomEntry => {
                let i = rng.random_range(0..y.len());
                let delta = loop {
                    let d = rng.random_range(-half..=half);
                    if d != 0 {
                        break d;
                    }
                };
                y[i] = center(y[i] + delta, m);
            }
            Tamper::Row { row, delta } => {
                let w = row_len.clamp(1, y.len());
                let rows = y.len() / w;
                let start = (row % rows.max(1)) * w;
                for v in &mut y[start..start + w] {
                    *v = center(*v + delta, m);
                }
            }
            Tamper::Scale { factor } => y.iter_mut().for_each(|v| *v = center(*v * factor, m)),
            Tamper::Replace => y
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-half..=half)),
        }
    }
}
