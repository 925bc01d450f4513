//! Downlink link budget: antenna pattern, free-space channel gains, thermal
//! noise, SINR with intra- and inter-satellite interference, and Shannon
//! capacity under full frequency reuse.
//!
//! Everything is computed in linear units; dB appears only at the edges
//! (scenario inputs and debug output).

use std::io::Write;

use crate::alloc::{BhPattern, PowerAlloc};
use crate::error::{Error, Result};
use crate::geometry::{self, CellGrid, Geometry};
use crate::scenario::Scenario;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380649e-23;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Transmit gain as a function of off-axis angle.
pub trait AntennaPattern: Send + Sync {
    fn gain_dbi(&self, theta_deg: f64) -> f64;
}

/// Parabolic main lobe `G_max - 12 (theta / theta_3dB)^2` dB with a flat
/// side-lobe floor `floor_db` below the peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParabolicPattern {
    pub max_gain_dbi: f64,
    pub beamwidth_3db_deg: f64,
    pub floor_db: f64,
}

impl ParabolicPattern {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            max_gain_dbi: s.g_tx_max_dbi,
            beamwidth_3db_deg: s.beamwidth_3db_deg,
            floor_db: 30.0,
        }
    }
}

impl AntennaPattern for ParabolicPattern {
    fn gain_dbi(&self, theta_deg: f64) -> f64 {
        let rel = theta_deg / self.beamwidth_3db_deg;
        (self.max_gain_dbi - 12.0 * rel * rel).max(self.max_gain_dbi - self.floor_db)
    }
}

/// Transmit gain (dBi) of the scenario's antenna at `theta_deg` off axis.
pub fn tx_gain(theta_deg: f64, scenario: &Scenario) -> f64 {
    ParabolicPattern::from_scenario(scenario).gain_dbi(theta_deg)
}

/// `(lambda / (4 pi d))^2` for a slant range in km.
pub fn free_space_gain(distance_km: f64, wavelength_m: f64) -> f64 {
    let x = wavelength_m / (4.0 * std::f64::consts::PI * distance_km * 1e3);
    x * x
}

/// `|h|^2` (linear) from a beam of the satellite at `sat_pos`, pointed at
/// `boresight_cell`, to a user at the center of `victim_cell`.
pub fn channel_power_gain(
    sat_pos: [f64; 3],
    boresight_cell: usize,
    victim_cell: usize,
    grid: &CellGrid,
    scenario: &Scenario,
) -> Result<f64> {
    channel_power_gain_with(
        &ParabolicPattern::from_scenario(scenario),
        sat_pos,
        boresight_cell,
        victim_cell,
        grid,
        scenario,
    )
}

pub fn channel_power_gain_with(
    pattern: &dyn AntennaPattern,
    sat_pos: [f64; 3],
    boresight_cell: usize,
    victim_cell: usize,
    grid: &CellGrid,
    scenario: &Scenario,
) -> Result<f64> {
    let theta = geometry::off_axis_angle(sat_pos, boresight_cell, victim_cell, grid)?;
    let d = geometry::slant_range(sat_pos, victim_cell, grid)?;
    let g_t = db_to_linear(pattern.gain_dbi(theta));
    let g_r = db_to_linear(scenario.g_rx_dbi);
    Ok(g_t * g_r * free_space_gain(d, scenario.wavelength_m()))
}

/// Thermal noise power `k_B T B` (W).
pub fn noise_power(scenario: &Scenario) -> f64 {
    BOLTZMANN * scenario.t_rx_k * scenario.bandwidth_hz
}

/// Precomputed `|h|^2` for every (satellite, boresight cell in coverage,
/// victim cell) triple. Geometry is static within a period, so this is built
/// once per layout.
#[derive(Debug, Clone)]
pub struct LinkTable {
    n_cells: usize,
    cells_per_sat: usize,
    /// `[sat][local boresight][victim]`, flattened.
    gains: Vec<f64>,
    /// `local[sat][cell]` copied from the geometry for O(1) lookups.
    local: Vec<Vec<Option<usize>>>,
    noise_w: f64,
    bandwidth_hz: f64,
}

impl LinkTable {
    pub fn build(geom: &Geometry, scenario: &Scenario) -> Result<Self> {
        Self::build_with(&ParabolicPattern::from_scenario(scenario), geom, scenario)
    }

    pub fn build_with(pattern: &dyn AntennaPattern, geom: &Geometry, scenario: &Scenario) -> Result<Self> {
        let n_cells = geom.n_cells();
        let c = scenario.cells_per_sat;
        let mut gains = Vec::with_capacity(geom.n_sats() * c * n_cells);
        let mut local = Vec::with_capacity(geom.n_sats());
        for n in 0..geom.n_sats() {
            let pos = geom.sat_position(n);
            for &b in geom.covered(n) {
                for v in 0..n_cells {
                    gains.push(channel_power_gain_with(pattern, pos, b, v, &geom.grid, scenario)?);
                }
            }
            local.push((0..n_cells).map(|cell| geom.local_index(n, cell)).collect());
        }
        Ok(Self {
            n_cells,
            cells_per_sat: c,
            gains,
            local,
            noise_w: noise_power(scenario),
            bandwidth_hz: scenario.bandwidth_hz,
        })
    }

    /// Gain from `sat`'s beam pointed at `boresight` (must be covered) to `victim`.
    pub fn gain(&self, sat: usize, boresight: usize, victim: usize) -> f64 {
        let b = self.local[sat][boresight].expect("boresight outside coverage");
        self.gains[(sat * self.cells_per_sat + b) * self.n_cells + victim]
    }

    /// Gain of a beam pointed straight at `cell` (the cell's own channel).
    pub fn own_gain(&self, sat: usize, cell: usize) -> f64 {
        self.gain(sat, cell, cell)
    }

    pub fn noise_w(&self) -> f64 {
        self.noise_w
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveBeam {
    pub sat: usize,
    pub beam: usize,
    pub cell: usize,
    pub power_w: f64,
}

/// Everything needed to evaluate SINR in one slot.
#[derive(Debug, Clone)]
pub struct SlotRadioState<'a> {
    pub beams: Vec<ActiveBeam>,
    table: &'a LinkTable,
}

impl<'a> SlotRadioState<'a> {
    /// Pairs each satellite's lit cells (ascending) with its beam powers.
    pub fn new(pattern: &BhPattern, powers: &[PowerAlloc], table: &'a LinkTable) -> Self {
        let mut beams = Vec::new();
        for n in 0..pattern.n_sats() {
            for (k, cell) in pattern.selected(n).into_iter().enumerate() {
                let power_w = powers
                    .get(n)
                    .and_then(|p| p.powers_w.get(k))
                    .copied()
                    .unwrap_or(0.0);
                beams.push(ActiveBeam {
                    sat: n,
                    beam: k,
                    cell,
                    power_w,
                });
            }
        }
        Self { beams, table }
    }

    pub fn from_beams(beams: Vec<ActiveBeam>, table: &'a LinkTable) -> Self {
        Self { beams, table }
    }

    fn find(&self, sat: usize, beam: usize) -> Result<&ActiveBeam> {
        self.beams
            .iter()
            .find(|b| b.sat == sat && b.beam == beam)
            .ok_or(Error::BeamInactive { sat, beam })
    }

    fn sinr_of(&self, target: &ActiveBeam) -> f64 {
        let t = self.table;
        let signal = target.power_w * t.gain(target.sat, target.cell, target.cell);
        let interference: f64 = self
            .beams
            .iter()
            .filter(|b| !(b.sat == target.sat && b.beam == target.beam))
            .map(|b| b.power_w * t.gain(b.sat, b.cell, target.cell))
            .sum();
        signal / (t.noise_w + interference)
    }

    /// SINR (linear) of the user served by `beam` of `sat`.
    pub fn sinr(&self, sat: usize, beam: usize) -> Result<f64> {
        Ok(self.sinr_of(self.find(sat, beam)?))
    }

    /// SINR for every active beam, in `beams` order.
    pub fn sinr_all(&self) -> Vec<f64> {
        self.beams.iter().map(|b| self.sinr_of(b)).collect()
    }

    /// Shannon rate (bit/s) of `cell` served by `sat`; zero if not lit.
    pub fn capacity(&self, sat: usize, cell: usize) -> f64 {
        self.beams
            .iter()
            .find(|b| b.sat == sat && b.cell == cell)
            .map_or(0.0, |b| shannon_rate(self.table.bandwidth_hz, self.sinr_of(b)))
    }

    /// Debug dump: `slot,sat,beam,cell,sinr_db`.
    pub fn write_sinr_csv<W: Write>(&self, slot: usize, out: &mut csv::Writer<W>) -> Result<()> {
        for (b, s) in self.beams.iter().zip(self.sinr_all()) {
            out.write_record([
                slot.to_string(),
                b.sat.to_string(),
                b.beam.to_string(),
                b.cell.to_string(),
                format!("{:.6}", linear_to_db(s)),
            ])?;
        }
        Ok(())
    }
}

pub fn shannon_rate(bandwidth_hz: f64, sinr: f64) -> f64 {
    bandwidth_hz * (1.0 + sinr).log2()
}
