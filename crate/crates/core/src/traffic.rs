//! Arrival generation and TTL-bounded per-cell queues.
//!
//! Queues keep an age histogram: bucket `l` (0-based here, age `l + 1` slots)
//! holds the bits that have waited that long. Service drains the oldest
//! buckets first; aging shifts every bucket up by one and drops what falls
//! off the end.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scenario::{BitMode, QueueMode, Scenario, TrafficConfig};

/// Per-slot, per-cell arrivals in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficTrace {
    /// `arrivals[t][cell]`.
    pub arrivals: Vec<Vec<f64>>,
    pub hotspot_mask: Vec<bool>,
}

impl TrafficTrace {
    pub fn n_slots(&self) -> usize {
        self.arrivals.len()
    }

    pub fn total_bits(&self) -> f64 {
        self.arrivals.iter().flatten().sum()
    }

    /// Arrivals of the cells in `cells` at slot `t`.
    pub fn gather(&self, t: usize, cells: &[usize]) -> Vec<f64> {
        cells.iter().map(|&c| self.arrivals[t][c]).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["slot", "cell", "arrival_bits"])?;
        for (t, row) in self.arrivals.iter().enumerate() {
            for (c, a) in row.iter().enumerate() {
                w.write_record([t.to_string(), c.to_string(), a.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Which cells are hotspots. Explicit ids win; otherwise
/// `round(fraction * V)` cells are drawn from the scenario seed, so every
/// episode of a scenario sees the same map.
pub fn hotspot_mask(scenario: &Scenario, cfg: &TrafficConfig) -> Result<Vec<bool>> {
    let v = scenario.n_cells_total;
    let mut mask = vec![false; v];
    match &cfg.hotspot_cells {
        Some(cells) => {
            for &c in cells {
                if c >= v {
                    return Err(Error::UnknownCell(c));
                }
                mask[c] = true;
            }
        }
        None => {
            let n_hot = ((cfg.hotspot_fraction * v as f64).round() as usize).min(v);
            let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed ^ 0x4057_5907);
            for c in sample(&mut rng, v, n_hot) {
                mask[c] = true;
            }
        }
    }
    Ok(mask)
}

/// Mean arrivals of a cell at slot `t` given the diurnal phase offset.
pub fn mean_arrivals(cfg: &TrafficConfig, hot: bool, t: usize, phase_offset: usize) -> f64 {
    let base = if hot { cfg.mean_hot_bits } else { cfg.mean_cold_bits };
    let angle = 2.0 * std::f64::consts::PI * ((t + phase_offset) % cfg.diurnal_period_slots) as f64
        / cfg.diurnal_period_slots as f64;
    base * (1.0 + cfg.diurnal_amplitude * angle.sin())
}

/// Poisson packet arrivals with a sinusoidal mean. The phase offset is drawn
/// from `seed`, so different episodes start at different points of the cycle.
pub fn generate_trace(
    scenario: &Scenario,
    cfg: &TrafficConfig,
    n_slots: usize,
    seed: u64,
) -> Result<TrafficTrace> {
    cfg.validate()?;
    if cfg.bit_mode == BitMode::Integer && cfg.packet_bits.fract() != 0.0 {
        return Err(Error::InvalidTraffic(
            "integer bit mode needs a whole-number packet size".into(),
        ));
    }
    let mask = hotspot_mask(scenario, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rand::Rng::random_range(&mut rng, 0..cfg.diurnal_period_slots);
    let arrivals = (0..n_slots)
        .map(|t| {
            mask.iter()
                .map(|&hot| {
                    let packets = mean_arrivals(cfg, hot, t, offset) / cfg.packet_bits;
                    if packets <= 0.0 {
                        return 0.0;
                    }
                    let n: f64 = Poisson::new(packets)
                        .expect("positive finite Poisson mean")
                        .sample(&mut rng);
                    n * cfg.packet_bits
                })
                .collect()
        })
        .collect();
    Ok(TrafficTrace {
        arrivals,
        hotspot_mask: mask,
    })
}

/// Age histograms for every (satellite, covered cell) pair.
///
/// In mirrored mode all satellites covering a cell share one histogram, so
/// replicas stay identical by construction and bookkeeping counts each bit
/// once. In independent mode every replica is its own queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    ttl: usize,
    mode: QueueMode,
    bit_mode: BitMode,
    /// `rows[n][local]` indexes a histogram in `phi`.
    rows: Vec<Vec<usize>>,
    /// Global cell id of every histogram row (first owner in independent mode).
    row_cell: Vec<usize>,
    /// Covered cell ids per satellite, for local lookups.
    covered: Vec<Vec<usize>>,
    phi: Vec<f64>,
    pub arrived_bits: f64,
    pub served_bits: f64,
    pub dropped_bits: f64,
}

impl QueueState {
    pub fn new(geom: &Geometry, scenario: &Scenario) -> Self {
        let mode = scenario.traffic.queue_mode;
        let mut rows = Vec::with_capacity(geom.n_sats());
        let mut row_cell = Vec::new();
        match mode {
            QueueMode::Mirrored => {
                row_cell.extend(0..geom.n_cells());
                for n in 0..geom.n_sats() {
                    rows.push(geom.covered(n).to_vec());
                }
            }
            QueueMode::Independent => {
                for n in 0..geom.n_sats() {
                    let mut r = Vec::new();
                    for &c in geom.covered(n) {
                        r.push(row_cell.len());
                        row_cell.push(c);
                    }
                    rows.push(r);
                }
            }
        }
        let ttl = scenario.t_ttl_slots;
        Self {
            ttl,
            mode,
            bit_mode: scenario.traffic.bit_mode,
            phi: vec![0.0; row_cell.len() * ttl],
            rows,
            row_cell,
            covered: (0..geom.n_sats()).map(|n| geom.covered(n).to_vec()).collect(),
            arrived_bits: 0.0,
            served_bits: 0.0,
            dropped_bits: 0.0,
        }
    }

    pub fn ttl(&self) -> usize {
        self.ttl
    }

    pub fn n_sats(&self) -> usize {
        self.rows.len()
    }

    fn row(&self, sat: usize, cell: usize) -> Result<usize> {
        let local = self.covered[sat]
            .binary_search(&cell)
            .map_err(|_| Error::UnknownCell(cell))?;
        Ok(self.rows[sat][local])
    }

    fn hist(&self, row: usize) -> &[f64] {
        &self.phi[row * self.ttl..(row + 1) * self.ttl]
    }

    /// Age histogram of `cell` as seen by `sat` (index 0 = age 1).
    pub fn phi(&self, sat: usize, cell: usize) -> Result<&[f64]> {
        Ok(self.hist(self.row(sat, cell)?))
    }

    /// Overwrite a histogram; for tests and replay.
    pub fn set_phi(&mut self, sat: usize, cell: usize, buckets: &[f64]) -> Result<()> {
        assert_eq!(buckets.len(), self.ttl, "histogram length must equal ttl");
        let r = self.row(sat, cell)?;
        self.phi[r * self.ttl..(r + 1) * self.ttl].copy_from_slice(buckets);
        Ok(())
    }

    /// Backlog `d` of `cell` at `sat`.
    pub fn backlog(&self, sat: usize, cell: usize) -> Result<f64> {
        Ok(self.hist(self.row(sat, cell)?).iter().sum())
    }

    /// Backlogs of every covered cell of `sat`, in coverage order.
    pub fn backlogs(&self, sat: usize) -> Vec<f64> {
        self.rows[sat]
            .iter()
            .map(|&r| self.hist(r).iter().sum())
            .collect()
    }

    /// Total bits held, counting each mirrored cell once.
    pub fn total_backlog(&self) -> f64 {
        self.phi.iter().sum()
    }

    /// Adds slot arrivals (indexed by global cell) at age 1.
    pub fn enqueue(&mut self, arrivals: &[f64]) {
        for (row, &cell) in self.row_cell.iter().enumerate() {
            let a = arrivals[cell];
            self.phi[row * self.ttl] += a;
            self.arrived_bits += a;
        }
    }

    /// Drains up to `capacity_bits` from `cell` at `sat`, oldest first.
    /// Mirrored replicas drain with it.
    pub fn serve(&mut self, sat: usize, cell: usize, capacity_bits: f64) -> Result<f64> {
        if capacity_bits < 0.0 || capacity_bits.is_nan() {
            return Err(Error::NegativeCapacity(capacity_bits));
        }
        let mut budget = match self.bit_mode {
            BitMode::Fluid => capacity_bits,
            BitMode::Integer => capacity_bits.floor(),
        };
        let r = self.row(sat, cell)?;
        let hist = &mut self.phi[r * self.ttl..(r + 1) * self.ttl];
        let mut served = 0.0;
        for b in hist.iter_mut().rev() {
            if budget <= 0.0 {
                break;
            }
            let take = b.min(budget);
            *b -= take;
            budget -= take;
            served += take;
        }
        self.served_bits += served;
        Ok(served)
    }

    /// Shifts every histogram one age step; returns the bits dropped for
    /// exceeding the TTL.
    pub fn age_and_drop(&mut self) -> f64 {
        let ttl = self.ttl;
        let mut dropped = 0.0;
        for hist in self.phi.chunks_exact_mut(ttl) {
            dropped += hist[ttl - 1];
            hist.copy_within(0..ttl - 1, 1);
            hist[0] = 0.0;
        }
        self.dropped_bits += dropped;
        dropped
    }

    /// Mean age in slots of the bits queued for `cell` at `sat`; 0 if empty.
    pub fn queue_delay(&self, sat: usize, cell: usize) -> Result<f64> {
        Ok(histogram_delay(self.hist(self.row(sat, cell)?)))
    }

    /// Delays of every covered cell of `sat`, in coverage order.
    pub fn delays(&self, sat: usize) -> Vec<f64> {
        self.rows[sat]
            .iter()
            .map(|&r| histogram_delay(self.hist(r)))
            .collect()
    }

    /// `arrived - served - dropped - backlog`; zero up to rounding.
    pub fn conservation_residual(&self) -> f64 {
        self.arrived_bits - self.served_bits - self.dropped_bits - self.total_backlog()
    }
}

/// Age-weighted mean of a histogram (bucket 0 = age 1).
pub fn histogram_delay(phi: &[f64]) -> f64 {
    let total: f64 = phi.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    phi.iter()
        .enumerate()
        .map(|(l, &b)| (l + 1) as f64 * b)
        .sum::<f64>()
        / total
}
