//! Slot-level simulator.
//!
//! One slot runs as: forecast this slot's arrivals from last slot's, build
//! the demand estimate the BH layer sees, enqueue the actual arrivals, let
//! the PA layer read the backlogs of the lit cells, evaluate SINR and
//! capacity, serve queues in satellite order, measure, then age queues.
//! [`Env::begin_slot`] covers everything up to the BH decision and
//! [`Env::end_slot`] everything after the power decision.

use crate::alloc::{BhPattern, PowerAlloc};
use crate::channel::{LinkTable, SlotRadioState};
use crate::error::Result;
use crate::geometry::Geometry;
use crate::metrics::{self, Norms, SlotMetrics};
use crate::predictor::{ForecastState, Forecaster};
use crate::scenario::Scenario;
use crate::traffic::{generate_trace, QueueState, TrafficTrace};

/// Everything fixed for a scenario: geometry, link table, normalizers.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub geom: Geometry,
    pub links: LinkTable,
    pub norms: Norms,
    /// `|h|^2` of each satellite's beam on each covered cell, coverage order.
    pub own_gains: Vec<Vec<f64>>,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate()?;
        let geom = Geometry::build(&scenario)?;
        Self::with_geometry(scenario, geom)
    }

    pub fn with_geometry(scenario: Scenario, geom: Geometry) -> Result<Self> {
        let links = LinkTable::build(&geom, &scenario)?;
        let own_gains = (0..geom.n_sats())
            .map(|n| geom.covered(n).iter().map(|&c| links.own_gain(n, c)).collect())
            .collect();
        Ok(Self {
            norms: Norms::resolve(&scenario),
            scenario,
            geom,
            links,
            own_gains,
        })
    }

    pub fn n_sats(&self) -> usize {
        self.geom.n_sats()
    }

    pub fn cells_per_sat(&self) -> usize {
        self.scenario.cells_per_sat
    }

    pub fn n_beams(&self) -> usize {
        self.scenario.n_beams
    }

    /// Pattern from per-satellite local cell indices.
    pub fn pattern_from_local(&self, local: &[Vec<usize>]) -> BhPattern {
        let mut p = BhPattern::empty(self.n_sats(), self.geom.n_cells());
        for (n, sel) in local.iter().enumerate() {
            for &l in sel {
                p.x[n][self.geom.covered(n)[l]] = 1;
            }
        }
        p
    }

    /// Lit cells of `sat` as local indices, ascending (beam order).
    pub fn local_selection(&self, pattern: &BhPattern, sat: usize) -> Vec<usize> {
        pattern
            .selected(sat)
            .into_iter()
            .map(|c| self.geom.local_index(sat, c).expect("lit cell outside coverage"))
            .collect()
    }
}

/// Feature scaling shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ObsScale {
    /// Demand unit in bits; features are `ln(1 + d / unit)`.
    pub demand_bits: f64,
    /// Reference gain (dB); features are `(gain_db - ref) / 10`.
    pub gain_ref_db: f64,
}

impl ObsScale {
    pub fn for_world(world: &World) -> Self {
        let t = &world.scenario.traffic;
        let peak = t.mean_hot_bits.max(t.mean_cold_bits) * (1.0 + t.diurnal_amplitude);
        let gain_ref_db = world
            .own_gains
            .iter()
            .flatten()
            .map(|&g| crate::channel::linear_to_db(g))
            .fold(f64::NEG_INFINITY, f64::max);
        Self {
            demand_bits: if peak > 0.0 { peak } else { 1.0 },
            gain_ref_db,
        }
    }

    pub fn demand(&self, d: f64) -> f64 {
        (d.max(0.0) / self.demand_bits).ln_1p()
    }

    pub fn gain(&self, g: f64) -> f64 {
        (crate::channel::linear_to_db(g) - self.gain_ref_db) / 10.0
    }
}

/// What the BH layer sees at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct BhView {
    pub slot: usize,
    /// Backlog carried over from the previous slot, `[sat][local]`.
    pub backlogs: Vec<Vec<f64>>,
    /// Forecast arrivals, `[sat][local]`.
    pub predicted: Vec<Vec<f64>>,
    /// Estimated demand: carried backlog plus forecast.
    pub demand_hat: Vec<Vec<f64>>,
}

/// What one satellite's beams see once the cells are chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct PaState {
    pub cells: Vec<usize>,
    /// Backlog of each lit cell after this slot's arrivals.
    pub backlogs: Vec<f64>,
    /// Own-beam channel gain of each lit cell.
    pub gains: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Env<'w> {
    pub world: &'w World,
    pub queues: QueueState,
    pub trace: TrafficTrace,
    forecaster: &'w Forecaster,
    forecast: ForecastState,
    t: usize,
    last_arrivals: Vec<f64>,
}

impl<'w> Env<'w> {
    /// New episode of `bh_period_slots` slots with traffic drawn from `seed`.
    pub fn new(world: &'w World, forecaster: &'w Forecaster, seed: u64) -> Result<Self> {
        let s = &world.scenario;
        let trace = generate_trace(s, &s.traffic, s.bh_period_slots, seed)?;
        Ok(Self::with_trace(world, forecaster, trace))
    }

    pub fn with_trace(world: &'w World, forecaster: &'w Forecaster, trace: TrafficTrace) -> Self {
        Self {
            queues: QueueState::new(&world.geom, &world.scenario),
            last_arrivals: vec![0.0; world.geom.n_cells()],
            forecast: forecaster.start(),
            forecaster,
            trace,
            world,
            t: 0,
        }
    }

    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.trace.n_slots()
    }

    /// Forecasts, builds the demand estimate, then enqueues the actual
    /// arrivals of the current slot.
    pub fn begin_slot(&mut self) -> BhView {
        let mut state = std::mem::replace(&mut self.forecast, ForecastState::Persistence);
        let view = self.view_with(&mut state);
        self.forecast = state;
        let arrivals = &self.trace.arrivals[self.t];
        self.queues.enqueue(arrivals);
        self.last_arrivals.clone_from(arrivals);
        view
    }

    /// The view the next [`Env::begin_slot`] would return, without advancing
    /// anything. Used to bootstrap values past the end of an episode.
    pub fn peek_view(&self) -> BhView {
        self.view_with(&mut self.forecast.clone())
    }

    fn view_with(&self, forecast: &mut ForecastState) -> BhView {
        let geom = &self.world.geom;
        let predicted = self.forecaster.forecast(geom, &self.last_arrivals, forecast);
        let backlogs: Vec<Vec<f64>> = (0..geom.n_sats()).map(|n| self.queues.backlogs(n)).collect();
        let demand_hat = backlogs
            .iter()
            .zip(&predicted)
            .map(|(d, p)| d.iter().zip(p).map(|(a, b)| a + b).collect())
            .collect();
        BhView {
            slot: self.t,
            backlogs,
            predicted,
            demand_hat,
        }
    }

    /// PA inputs for `sat` under `pattern` (call after [`Env::begin_slot`]).
    pub fn pa_state(&self, pattern: &BhPattern, sat: usize) -> PaState {
        let cells = pattern.selected(sat);
        let backlogs = cells
            .iter()
            .map(|&c| self.queues.backlog(sat, c).expect("lit cell is covered"))
            .collect();
        let gains = cells.iter().map(|&c| self.world.links.own_gain(sat, c)).collect();
        PaState { cells, backlogs, gains }
    }

    pub fn pa_states(&self, pattern: &BhPattern) -> Vec<PaState> {
        (0..self.world.n_sats()).map(|n| self.pa_state(pattern, n)).collect()
    }

    /// Transmits, serves, measures and ages; advances the clock.
    pub fn end_slot(&mut self, pattern: &BhPattern, powers: &[PowerAlloc]) -> Result<SlotMetrics> {
        let world = self.world;
        let s = &world.scenario;
        let geom = &world.geom;
        let n_sats = geom.n_sats();

        let backlog_bits: Vec<Vec<f64>> = (0..n_sats).map(|n| self.queues.backlogs(n)).collect();
        let load_bits: Vec<f64> = (0..n_sats)
            .map(|n| {
                let lit: Vec<bool> = geom.covered(n).iter().map(|&c| pattern.is_lit(n, c)).collect();
                metrics::satellite_load(&backlog_bits[n], &lit)
            })
            .collect();

        let radio = SlotRadioState::new(pattern, powers, &world.links);
        let sinrs = radio.sinr_all();
        let mut throughput_bits: Vec<Vec<f64>> = (0..n_sats).map(|n| vec![0.0; geom.covered(n).len()]).collect();
        for (beam, sinr) in radio.beams.iter().zip(sinrs) {
            let bits = crate::channel::shannon_rate(world.links.bandwidth_hz(), sinr) * s.slot_s;
            let served = self.queues.serve(beam.sat, beam.cell, bits)?;
            let local = geom.local_index(beam.sat, beam.cell).expect("lit cell is covered");
            throughput_bits[beam.sat][local] += served;
        }

        let delays: Vec<Vec<f64>> = (0..n_sats).map(|n| self.queues.delays(n)).collect();
        let delay_spread: Vec<f64> = delays.iter().map(|d| metrics::delay_fairness_term(d)).collect();
        let (co, close) = metrics::interference_violations(pattern, geom, s.min_interference_dist_km);
        let dropped = self.queues.age_and_drop();

        let mut m = SlotMetrics {
            slot: self.t,
            arrived_bits: self.trace.arrivals[self.t].iter().sum(),
            q_gap: metrics::load_gap(&load_bits),
            j_gap: delay_spread.iter().sum(),
            throughput_bits,
            backlog_bits,
            delays,
            load_bits,
            delay_spread,
            violations: co + close,
            dropped_bits: dropped,
            bh_reward: 0.0,
            pa_rewards: Vec::new(),
        };
        m.bh_reward = metrics::bh_reward(&m, s, &world.norms);
        m.pa_rewards = (0..n_sats).map(|n| metrics::pa_reward(&m, n, s, &world.norms)).collect();
        self.t += 1;
        Ok(m)
    }
}
