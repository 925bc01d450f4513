//! Per-slot decision types shared by the beam-hopping and power layers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;

/// Binary illumination matrix `x[sat][cell]` for one slot.
///
/// Beam `k` of a satellite is the `k`-th illuminated cell in ascending id
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BhPattern {
    pub x: Vec<Vec<u8>>,
}

impl BhPattern {
    pub fn empty(n_sats: usize, n_cells: usize) -> Self {
        Self {
            x: vec![vec![0; n_cells]; n_sats],
        }
    }

    /// Builds a pattern from per-satellite cell selections.
    pub fn from_selections(n_cells: usize, selections: &[Vec<usize>]) -> Result<Self> {
        let mut p = Self::empty(selections.len(), n_cells);
        for (n, cells) in selections.iter().enumerate() {
            for &c in cells {
                if c >= n_cells {
                    return Err(Error::UnknownCell(c));
                }
                p.x[n][c] = 1;
            }
        }
        Ok(p)
    }

    pub fn n_sats(&self) -> usize {
        self.x.len()
    }

    pub fn n_cells(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    pub fn is_lit(&self, sat: usize, cell: usize) -> bool {
        self.x[sat][cell] != 0
    }

    /// Illuminated cells of `sat`, ascending; index = beam number.
    pub fn selected(&self, sat: usize) -> Vec<usize> {
        self.x[sat]
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Beam index serving `cell` on `sat`, if lit.
    pub fn beam_of(&self, sat: usize, cell: usize) -> Option<usize> {
        if !self.is_lit(sat, cell) {
            return None;
        }
        Some(self.x[sat][..cell].iter().filter(|&&v| v != 0).count())
    }

    /// True if the pattern is binary, lights exactly `k` cells per satellite
    /// and only within coverage.
    pub fn is_well_formed(&self, geom: &Geometry, k: usize) -> bool {
        self.x.len() == geom.n_sats()
            && self.x.iter().enumerate().all(|(n, row)| {
                row.len() == geom.n_cells()
                    && row.iter().all(|&v| v <= 1)
                    && row.iter().filter(|&&v| v == 1).count() == k
                    && row
                        .iter()
                        .enumerate()
                        .all(|(c, &v)| v == 0 || geom.local_index(n, c).is_some())
            })
    }
}

/// Per-beam transmit powers of one satellite (W).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAlloc {
    pub powers_w: Vec<f64>,
}

impl PowerAlloc {
    pub fn new(powers_w: Vec<f64>) -> Self {
        Self { powers_w }
    }

    pub fn total(&self) -> f64 {
        self.powers_w.iter().sum()
    }

    /// Per-beam cap and total budget both hold (with a relative slack for
    /// floating point rounding of the rescale).
    pub fn is_feasible(&self, p_max: f64, p_tot: f64) -> bool {
        let eps = 1e-9;
        self.powers_w
            .iter()
            .all(|&p| p.is_finite() && p >= 0.0 && p <= p_max * (1.0 + eps))
            && self.total() <= p_tot * (1.0 + eps)
    }
}
