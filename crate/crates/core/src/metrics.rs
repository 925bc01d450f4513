//! Objective quantities: throughput, satellite load, load gap, delay
//! fairness, both RL rewards, the joint objective and the constraint report.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::alloc::{BhPattern, PowerAlloc};
use crate::channel::{self, BOLTZMANN};
use crate::error::Result;
use crate::geometry::Geometry;
use crate::scenario::Scenario;

/// Normalizing constants with scenario defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub q_max: f64,
    pub j_max: f64,
    pub th_max: f64,
}

impl Norms {
    /// Defaults: `q_max` is the largest load a satellite can hold (K cells,
    /// each with `T_ttl` slots of peak hotspot arrivals); `j_max` is the TTL;
    /// `th_max` is K interference-free nadir beams at full power for one slot.
    pub fn resolve(s: &Scenario) -> Self {
        let t = &s.traffic;
        let peak = t.mean_hot_bits.max(t.mean_cold_bits) * (1.0 + t.diurnal_amplitude);
        let q_default = s.n_beams as f64 * s.t_ttl_slots as f64 * peak;
        Self {
            q_max: s.normalizers.q_max.unwrap_or(if q_default > 0.0 { q_default } else { 1.0 }),
            j_max: s.normalizers.j_max.unwrap_or(s.t_ttl_slots as f64),
            th_max: s.normalizers.th_max.unwrap_or_else(|| peak_slot_throughput(s)),
        }
    }
}

/// Bits one satellite moves in a slot with K noise-limited nadir beams at `P_max`.
pub fn peak_slot_throughput(s: &Scenario) -> f64 {
    let h = channel::db_to_linear(s.g_tx_max_dbi + s.g_rx_dbi)
        * channel::free_space_gain(s.altitude_km, s.wavelength_m());
    let noise = BOLTZMANN * s.t_rx_k * s.bandwidth_hz;
    let snr = if noise > 0.0 { s.p_max_w * h / noise } else { 1e12 };
    s.n_beams as f64 * channel::shannon_rate(s.bandwidth_hz, snr) * s.slot_s
}

/// `L_n`: backlog summed over the cells `sat` lights.
pub fn satellite_load(backlogs: &[f64], lit: &[bool]) -> f64 {
    backlogs
        .iter()
        .zip(lit)
        .filter(|(_, &l)| l)
        .map(|(d, _)| d)
        .sum()
}

/// Spread between the largest and smallest value; 0 for an empty slice.
pub fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Per-slot term of the load gap `Q`.
pub fn load_gap(loads: &[f64]) -> f64 {
    spread(loads)
}

/// Per-satellite, per-slot term of the delay fairness `J`.
pub fn delay_fairness_term(delays: &[f64]) -> f64 {
    spread(delays)
}

/// Constraint audit of one slot's decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// Entries of `x` other than 0 or 1.
    pub non_binary: usize,
    /// Satellites not lighting exactly K cells.
    pub wrong_beam_count: usize,
    /// Sum over cells of (number of lighting satellites - 1), when positive.
    pub co_illuminated: usize,
    /// Lit cells outside the lighting satellite's coverage.
    pub outside_coverage: usize,
    /// Pairs of distinct cells lit by different satellites closer than the
    /// minimum interference distance.
    pub too_close: usize,
    /// Beams above the per-beam power cap.
    pub over_beam_cap: usize,
    /// Satellites above the total power budget.
    pub over_budget: usize,
}

impl ConstraintReport {
    /// Violations that only the reward penalty discourages.
    pub fn penalized(&self) -> usize {
        self.co_illuminated + self.too_close
    }

    /// Violations that every emitted decision must avoid by construction.
    pub fn hard(&self) -> usize {
        self.non_binary + self.wrong_beam_count + self.outside_coverage + self.over_beam_cap + self.over_budget
    }
}

/// Interference-avoidance counts only (co-illumination and distance pairs).
pub fn interference_violations(pattern: &BhPattern, geom: &Geometry, min_dist_km: f64) -> (usize, usize) {
    let v = pattern.n_cells();
    let mut co = 0;
    for c in 0..v {
        let lit = (0..pattern.n_sats()).filter(|&n| pattern.is_lit(n, c)).count();
        co += lit.saturating_sub(1);
    }
    let lit: Vec<(usize, usize)> = (0..pattern.n_sats())
        .flat_map(|n| pattern.selected(n).into_iter().map(move |c| (n, c)))
        .collect();
    let mut close = 0;
    for (a, &(n1, c1)) in lit.iter().enumerate() {
        for &(n2, c2) in &lit[a + 1..] {
            if n1 != n2 && c1 != c2 && geom.grid.distance(c1, c2).unwrap_or(f64::INFINITY) < min_dist_km {
                close += 1;
            }
        }
    }
    (co, close)
}

pub fn constraint_check(
    pattern: &BhPattern,
    powers: &[PowerAlloc],
    scenario: &Scenario,
    geom: &Geometry,
) -> ConstraintReport {
    let mut r = ConstraintReport::default();
    for (n, row) in pattern.x.iter().enumerate() {
        r.non_binary += row.iter().filter(|&&v| v > 1).count();
        if row.iter().filter(|&&v| v != 0).count() != scenario.n_beams {
            r.wrong_beam_count += 1;
        }
        r.outside_coverage += row
            .iter()
            .enumerate()
            .filter(|&(c, &v)| v != 0 && geom.local_index(n, c).is_none())
            .count();
    }
    let (co, close) = interference_violations(pattern, geom, scenario.min_interference_dist_km);
    r.co_illuminated = co;
    r.too_close = close;
    let eps = 1e-9;
    for p in powers {
        r.over_beam_cap += p
            .powers_w
            .iter()
            .filter(|&&w| !(w.is_finite() && w >= 0.0 && w <= scenario.p_max_w * (1.0 + eps)))
            .count();
        if p.total() > scenario.p_tot_w * (1.0 + eps) {
            r.over_budget += 1;
        }
    }
    r
}

/// Everything measured in one slot. Per-cell vectors follow each
/// satellite's coverage order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub slot: usize,
    /// Bits delivered, `[sat][local cell]`.
    pub throughput_bits: Vec<Vec<f64>>,
    /// Backlog the decisions were made against (after arrivals, before service).
    pub backlog_bits: Vec<Vec<f64>>,
    /// Mean queue age after service, `[sat][local cell]`.
    pub delays: Vec<Vec<f64>>,
    pub load_bits: Vec<f64>,
    pub q_gap: f64,
    /// Per-satellite delay spread.
    pub delay_spread: Vec<f64>,
    /// Sum of the per-satellite delay spreads.
    pub j_gap: f64,
    pub violations: usize,
    pub arrived_bits: f64,
    pub dropped_bits: f64,
    pub bh_reward: f64,
    pub pa_rewards: Vec<f64>,
}

impl SlotMetrics {
    pub fn total_throughput(&self) -> f64 {
        self.throughput_bits.iter().flatten().sum()
    }

    pub fn sat_throughput(&self, sat: usize) -> f64 {
        self.throughput_bits[sat].iter().sum()
    }
}

/// `-[a * gap / Q_max + (1 - a) * fairness / J_max + penalty * violations]`,
/// where fairness is the mean per-satellite delay spread.
pub fn bh_reward_terms(q_gap: f64, mean_spread: f64, violations: usize, s: &Scenario, norms: &Norms) -> f64 {
    -(s.alpha * q_gap / norms.q_max
        + (1.0 - s.alpha) * mean_spread / norms.j_max
        + s.penalty_coeff * violations as f64)
}

pub fn bh_reward(m: &SlotMetrics, s: &Scenario, norms: &Norms) -> f64 {
    let n = m.delay_spread.len().max(1) as f64;
    bh_reward_terms(m.q_gap, m.j_gap / n, m.violations, s, norms)
}

/// `b * throughput / Th_max - (1 - b) * spread / J_max` for one satellite.
pub fn pa_reward_terms(throughput_bits: f64, delay_spread: f64, s: &Scenario, norms: &Norms) -> f64 {
    s.beta * throughput_bits / norms.th_max - (1.0 - s.beta) * delay_spread / norms.j_max
}

pub fn pa_reward(m: &SlotMetrics, sat: usize, s: &Scenario, norms: &Norms) -> f64 {
    pa_reward_terms(m.sat_throughput(sat), m.delay_spread[sat], s, norms)
}

/// Joint objective over an episode: `b * Th_tot / Th_max - (1 - b) * J / J_max`.
pub fn p0_objective(total_throughput_bits: f64, j_total: f64, s: &Scenario, norms: &Norms) -> f64 {
    s.beta * total_throughput_bits / norms.th_max - (1.0 - s.beta) * j_total / norms.j_max
}

/// Episode aggregates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub slots: usize,
    pub throughput_bits: f64,
    pub arrived_bits: f64,
    pub dropped_bits: f64,
    /// Sum of per-slot load gaps.
    pub q_total: f64,
    /// Sum of per-slot, per-satellite delay spreads.
    pub j_total: f64,
    pub mean_q_gap: f64,
    pub mean_j_gap: f64,
    pub mean_delay_slots: f64,
    pub violations: usize,
    pub bh_reward: f64,
    pub pa_reward: f64,
    pub p0: f64,
    pub sat_throughput_bits: Vec<f64>,
    pub sat_mean_load_bits: Vec<f64>,
}

impl EpisodeSummary {
    pub fn from_slots(slots: &[SlotMetrics], s: &Scenario, norms: &Norms) -> Self {
        let t = slots.len();
        let n_sats = slots.first().map_or(0, |m| m.load_bits.len());
        let mut out = Self {
            slots: t,
            sat_throughput_bits: vec![0.0; n_sats],
            sat_mean_load_bits: vec![0.0; n_sats],
            ..Self::default()
        };
        if t == 0 {
            return out;
        }
        let mut delay_sum = 0.0;
        let mut delay_count = 0usize;
        let mut pa_sum = 0.0;
        for m in slots {
            out.throughput_bits += m.total_throughput();
            out.arrived_bits += m.arrived_bits;
            out.dropped_bits += m.dropped_bits;
            out.q_total += m.q_gap;
            out.j_total += m.j_gap;
            out.violations += m.violations;
            out.bh_reward += m.bh_reward;
            pa_sum += m.pa_rewards.iter().sum::<f64>() / m.pa_rewards.len().max(1) as f64;
            for n in 0..n_sats {
                out.sat_throughput_bits[n] += m.sat_throughput(n);
                out.sat_mean_load_bits[n] += m.load_bits[n] / t as f64;
            }
            for d in m.delays.iter().flatten() {
                delay_sum += d;
                delay_count += 1;
            }
        }
        let tf = t as f64;
        out.mean_q_gap = out.q_total / tf;
        out.mean_j_gap = out.j_total / tf;
        out.mean_delay_slots = if delay_count > 0 { delay_sum / delay_count as f64 } else { 0.0 };
        out.bh_reward /= tf;
        out.pa_reward = pa_sum / tf;
        out.p0 = p0_objective(out.throughput_bits, out.j_total, s, norms);
        out
    }
}

/// One line of the per-slot metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub slot: usize,
    pub sat: usize,
    pub cell: usize,
    pub served_bits: f64,
    pub backlog_bits: f64,
    pub delay_slots: f64,
    pub load_bits: f64,
    pub q_gap: f64,
    pub j_gap: f64,
    pub reward: f64,
}

impl SlotMetrics {
    /// One row per (satellite, covered cell); `reward` is the satellite's PA reward.
    pub fn rows(&self, geom: &Geometry) -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for n in 0..self.load_bits.len() {
            for (local, &cell) in geom.covered(n).iter().enumerate() {
                rows.push(MetricsRow {
                    slot: self.slot,
                    sat: n,
                    cell,
                    served_bits: self.throughput_bits[n][local],
                    backlog_bits: self.backlog_bits[n][local],
                    delay_slots: self.delays[n][local],
                    load_bits: self.load_bits[n],
                    q_gap: self.q_gap,
                    j_gap: self.j_gap,
                    reward: self.pa_rewards[n],
                });
            }
        }
        rows
    }
}

/// One line of the per-slot totals CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRow {
    pub slot: usize,
    pub arrived_bits: f64,
    pub dropped_bits: f64,
    pub served_bits: f64,
    pub q_gap: f64,
    pub j_gap: f64,
    pub violations: usize,
    pub bh_reward: f64,
    /// Mean of the satellites' PA rewards.
    pub pa_reward: f64,
}

impl SlotMetrics {
    pub fn slot_row(&self) -> SlotRow {
        SlotRow {
            slot: self.slot,
            arrived_bits: self.arrived_bits,
            dropped_bits: self.dropped_bits,
            served_bits: self.total_throughput(),
            q_gap: self.q_gap,
            j_gap: self.j_gap,
            violations: self.violations,
            bh_reward: self.bh_reward,
            pa_reward: self.pa_rewards.iter().sum::<f64>() / self.pa_rewards.len().max(1) as f64,
        }
    }
}

/// Writes any serializable rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads CSV rows written by [`write_csv`].
pub fn read_csv<R: Read, T: serde::de::DeserializeOwned>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}
