//! Run configuration.
//!
//! A [`Scenario`] is the single source of truth for a run: constellation
//! shape, RF constants, traffic law, objective weights and normalizers. It
//! round-trips through JSON with snake_case keys; any omitted key takes the
//! reference (Ka-band, 12-satellite) value.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How overlapping coverage replicas of one cell's demand behave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueueMode {
    /// Every covering satellite holds the same demand; serving once drains all copies.
    #[default]
    Mirrored,
    /// Each covering satellite holds and drains its own copy.
    Independent,
}

/// Arithmetic used for queue contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BitMode {
    /// Real-valued bit counts.
    #[default]
    Fluid,
    /// Whole bits only: per-slot service capacity is floored to an integer.
    Integer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    /// Fraction of cells that are hotspots (rounded to a whole cell count).
    pub hotspot_fraction: f64,
    /// Mean arrivals per slot for a hotspot cell, in bits.
    pub mean_hot_bits: f64,
    /// Mean arrivals per slot for an ordinary cell, in bits.
    pub mean_cold_bits: f64,
    /// Period of the sinusoidal demand modulation, in slots.
    pub diurnal_period_slots: usize,
    /// Relative amplitude of the modulation, in `[0, 1]`.
    pub diurnal_amplitude: f64,
    /// Packet size; arrivals are a Poisson number of packets of this size.
    pub packet_bits: f64,
    /// Explicit hotspot cell ids. Overrides `hotspot_fraction` when set.
    pub hotspot_cells: Option<Vec<usize>>,
    pub queue_mode: QueueMode,
    pub bit_mode: BitMode,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            hotspot_fraction: 0.2,
            mean_hot_bits: 0.8e6,
            mean_cold_bits: 0.1e6,
            diurnal_period_slots: 32,
            diurnal_amplitude: 0.3,
            packet_bits: 1e4,
            hotspot_cells: None,
            queue_mode: QueueMode::Mirrored,
            bit_mode: BitMode::Fluid,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidTraffic(msg.to_string()));
        if !(0.0..=1.0).contains(&self.hotspot_fraction) {
            return bad("hotspot_fraction must lie in [0, 1]");
        }
        if !(self.mean_hot_bits >= 0.0 && self.mean_cold_bits >= 0.0) {
            return bad("mean arrivals must be non-negative");
        }
        if !self.mean_hot_bits.is_finite() || !self.mean_cold_bits.is_finite() {
            return bad("mean arrivals must be finite");
        }
        if !(0.0..=1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal_amplitude must lie in [0, 1]");
        }
        if self.diurnal_period_slots == 0 {
            return bad("diurnal_period_slots must be positive");
        }
        if self.packet_bits.is_nan() || self.packet_bits <= 0.0 {
            return bad("packet_bits must be positive");
        }
        Ok(())
    }
}

/// Objective normalizers. `None` means "derive the default from the scenario".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Normalizers {
    pub q_max: Option<f64>,
    pub j_max: Option<f64>,
    pub th_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub n_sats: usize,
    pub cells_per_sat: usize,
    pub n_beams: usize,
    pub n_cells_total: usize,
    pub cell_radius_km: f64,
    pub altitude_km: f64,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub p_tot_w: f64,
    pub p_max_w: f64,
    pub g_tx_max_dbi: f64,
    pub g_rx_dbi: f64,
    pub beamwidth_3db_deg: f64,
    pub t_rx_k: f64,
    pub slot_s: f64,
    pub bh_period_slots: usize,
    pub t_ttl_slots: usize,
    pub alpha: f64,
    pub beta: f64,
    pub min_interference_dist_km: f64,
    pub penalty_coeff: f64,
    pub normalizers: Normalizers,
    pub rng_seed: u64,
    pub traffic: TrafficConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::reference()
    }
}

pub fn dbw_to_w(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

impl Scenario {
    /// The 12-satellite Ka-band reference configuration.
    pub fn reference() -> Self {
        Self {
            n_sats: 12,
            cells_per_sat: 19,
            n_beams: 4,
            n_cells_total: 168,
            cell_radius_km: 39.0,
            altitude_km: 780.0,
            carrier_hz: 20e9,
            bandwidth_hz: 100e6,
            p_tot_w: dbw_to_w(39.0),
            p_max_w: dbw_to_w(30.0),
            g_tx_max_dbi: 35.9,
            g_rx_dbi: 0.0,
            beamwidth_3db_deg: 3.0,
            t_rx_k: 300.0,
            slot_s: 2e-3,
            bh_period_slots: 64,
            t_ttl_slots: 16,
            alpha: 0.5,
            beta: 0.5,
            min_interference_dist_km: 4.0 * 39.0,
            penalty_coeff: 0.1,
            normalizers: Normalizers::default(),
            rng_seed: 42,
            traffic: TrafficConfig::default(),
        }
    }

    /// Three satellites with seven-cell footprints over fifteen cells.
    ///
    /// Hotspots sit in the two overlap regions and in the exclusive part of
    /// the first footprint, so load is uneven unless overlap cells are
    /// handed to the lighter satellites.
    pub fn small() -> Self {
        Self {
            n_sats: 3,
            cells_per_sat: 7,
            n_beams: 2,
            n_cells_total: 15,
            traffic: TrafficConfig {
                hotspot_fraction: 0.2,
                mean_hot_bits: 0.8e6,
                mean_cold_bits: 0.1e6,
                ..TrafficConfig::default()
            },
            ..Self::reference()
        }
    }

    /// One satellite, seven cells, four beams, with a total power budget
    /// that binds before the per-beam cap does.
    pub fn single_sat() -> Self {
        Self {
            n_sats: 1,
            cells_per_sat: 7,
            n_beams: 4,
            n_cells_total: 7,
            p_tot_w: 2000.0,
            traffic: TrafficConfig {
                hotspot_fraction: 2.0 / 7.0,
                mean_hot_bits: 2.0e6,
                mean_cold_bits: 0.05e6,
                ..TrafficConfig::default()
            },
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.n_sats == 0 || self.cells_per_sat == 0 || self.n_beams == 0 {
            return bad("n_sats, cells_per_sat and n_beams must be positive".into());
        }
        if self.n_beams > self.cells_per_sat {
            return bad(format!(
                "n_beams ({}) exceeds cells_per_sat ({})",
                self.n_beams, self.cells_per_sat
            ));
        }
        if self.n_cells_total == 0 || self.n_cells_total > self.n_sats * self.cells_per_sat {
            return bad(format!(
                "n_cells_total ({}) must lie in 1..={}",
                self.n_cells_total,
                self.n_sats * self.cells_per_sat
            ));
        }
        if self.n_cells_total < self.cells_per_sat {
            return bad("n_cells_total is smaller than one footprint".into());
        }
        if !(self.p_max_w > 0.0 && self.p_max_w <= self.p_tot_w) {
            return bad(format!(
                "need 0 < p_max_w ({}) <= p_tot_w ({})",
                self.p_max_w, self.p_tot_w
            ));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("{name} = {w} outside [0, 1]"));
            }
        }
        let positive = [
            ("cell_radius_km", self.cell_radius_km),
            ("altitude_km", self.altitude_km),
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("beamwidth_3db_deg", self.beamwidth_3db_deg),
            ("slot_s", self.slot_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        if self.t_rx_k < 0.0 || self.penalty_coeff < 0.0 || self.min_interference_dist_km < 0.0 {
            return bad("t_rx_k, penalty_coeff and min_interference_dist_km must be non-negative".into());
        }
        if self.t_ttl_slots == 0 || self.bh_period_slots == 0 {
            return bad("t_ttl_slots and bh_period_slots must be positive".into());
        }
        for (name, v) in [
            ("q_max", self.normalizers.q_max),
            ("j_max", self.normalizers.j_max),
            ("th_max", self.normalizers.th_max),
        ] {
            if let Some(v) = v {
                if v.is_nan() || v <= 0.0 {
                    return bad(format!("normalizer {name} must be positive"));
                }
            }
        }
        self.traffic.validate()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        crate::channel::SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Milliseconds represented by `slots` slots.
    pub fn slots_to_ms(&self, slots: f64) -> f64 {
        slots * self.slot_s * 1e3
    }
}
