//! Constellation layout on a flat tangent plane.
//!
//! Cells are pointy-top hexagons of circumradius `cell_radius_km` on an
//! axial lattice. Sub-satellite points sit on a `rows x cols` grid (odd rows
//! shifted by half a column, so footprints tile like hexagons) and each
//! satellite covers the `cells_per_sat` lattice cells nearest its point. The
//! grid spacing is scanned upward until the union of footprints is exactly
//! `n_cells_total` cells.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Spacing scan resolution, as a fraction of the cell radius.
const SCAN_STEPS_PER_RADIUS: f64 = 32.0;

/// Constant offset of the satellite grid from the lattice origin, in cell
/// radii. Keeps sub-satellite points off lattice symmetry lines so
/// nearest-cell footprints have no distance ties.
const GRID_OFFSET: [f64; 2] = [0.137, 0.071];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub cell_radius_km: f64,
    /// Planar centers (km), indexed by cell id.
    pub centers: Vec<[f64; 2]>,
}

impl CellGrid {
    pub fn new(cell_radius_km: f64, centers: Vec<[f64; 2]>) -> Self {
        Self {
            cell_radius_km,
            centers,
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, id: usize) -> Result<[f64; 2]> {
        self.centers.get(id).copied().ok_or(Error::UnknownCell(id))
    }

    /// Center-to-center ground distance between two cells (km).
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let a = self.center(i)?;
        let b = self.center(j)?;
        Ok((a[0] - b[0]).hypot(a[1] - b[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageMap {
    /// Satellite positions (km): planar sub-satellite point plus altitude.
    pub sat_positions: Vec<[f64; 3]>,
    /// Covered cell ids per satellite, ascending.
    pub covered: Vec<Vec<usize>>,
}

impl CoverageMap {
    pub fn n_sats(&self) -> usize {
        self.covered.len()
    }

    /// Number of coverage slots beyond one per cell.
    pub fn overlap_assignments(&self) -> usize {
        let slots: usize = self.covered.iter().map(Vec::len).sum();
        slots - self.union().len()
    }

    pub fn union(&self) -> BTreeSet<usize> {
        self.covered.iter().flatten().copied().collect()
    }

    pub fn intersection(&self, a: usize, b: usize) -> Vec<usize> {
        let sb: BTreeSet<_> = self.covered[b].iter().copied().collect();
        self.covered[a]
            .iter()
            .copied()
            .filter(|c| sb.contains(c))
            .collect()
    }
}

/// Off-axis angle (degrees) at the satellite between the beam boresight
/// (pointed at `boresight_cell`) and the direction to `victim_cell`.
pub fn off_axis_angle(
    sat_pos: [f64; 3],
    boresight_cell: usize,
    victim_cell: usize,
    grid: &CellGrid,
) -> Result<f64> {
    let b = grid.center(boresight_cell)?;
    let v = grid.center(victim_cell)?;
    if boresight_cell == victim_cell {
        return Ok(0.0);
    }
    Ok(angle_between(sat_pos, b, v))
}

fn angle_between(sat: [f64; 3], b: [f64; 2], v: [f64; 2]) -> f64 {
    let u = [b[0] - sat[0], b[1] - sat[1], -sat[2]];
    let w = [v[0] - sat[0], v[1] - sat[1], -sat[2]];
    let cross = [
        u[1] * w[2] - u[2] * w[1],
        u[2] * w[0] - u[0] * w[2],
        u[0] * w[1] - u[1] * w[0],
    ];
    let cross_norm = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    let dot = u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
    cross_norm.atan2(dot).to_degrees()
}

/// Straight-line distance (km) from the satellite to a cell center.
pub fn slant_range(sat_pos: [f64; 3], cell: usize, grid: &CellGrid) -> Result<f64> {
    let c = grid.center(cell)?;
    let dx = c[0] - sat_pos[0];
    let dy = c[1] - sat_pos[1];
    Ok((dx * dx + dy * dy + sat_pos[2] * sat_pos[2]).sqrt())
}

/// Rings needed for a centered hexagonal footprint of `c` cells, if any.
fn hex_rings(c: usize) -> Option<usize> {
    for k in 0.. {
        let cells = 3 * k * (k + 1) + 1;
        if cells >= c {
            return (cells == c).then_some(k);
        }
    }
    unreachable!()
}

/// Most-square `rows x cols` factorization with `rows <= cols`.
fn grid_shape(n: usize) -> (usize, usize) {
    let mut rows = (n as f64).sqrt().floor() as usize;
    while rows > 1 && !n.is_multiple_of(rows) {
        rows -= 1;
    }
    (rows.max(1), n / rows.max(1))
}

struct Lattice {
    axial: Vec<(i64, i64)>,
    xy: Vec<[f64; 2]>,
}

impl Lattice {
    fn new(radius: i64, cell_r: f64) -> Self {
        let mut axial = Vec::new();
        let mut xy = Vec::new();
        for r in -radius..=radius {
            for q in -radius..=radius {
                axial.push((q, r));
                xy.push([
                    SQRT3 * cell_r * (q as f64 + r as f64 / 2.0),
                    1.5 * cell_r * r as f64,
                ]);
            }
        }
        Self { axial, xy }
    }

    /// Indices of the `c` lattice cells nearest `p`; ties broken by index.
    fn nearest(&self, p: [f64; 2], c: usize, scratch: &mut Vec<(f64, usize)>) -> Vec<usize> {
        scratch.clear();
        scratch.extend(self.xy.iter().enumerate().map(|(i, q)| {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            (dx * dx + dy * dy, i)
        }));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        scratch.select_nth_unstable_by(c - 1, cmp);
        let mut out: Vec<usize> = scratch[..c].iter().map(|e| e.1).collect();
        out.sort_unstable();
        out
    }
}

fn sub_satellite_points(rows: usize, cols: usize, spacing: f64, staggered: bool, r: f64) -> Vec<[f64; 2]> {
    let sy = if staggered { spacing * SQRT3 / 2.0 } else { spacing };
    let mut pts = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let shift = if staggered && i % 2 == 1 { 0.5 * spacing } else { 0.0 };
            pts.push([
                (j as f64 - (cols as f64 - 1.0) / 2.0) * spacing + shift + GRID_OFFSET[0] * r,
                (i as f64 - (rows as f64 - 1.0) / 2.0) * sy + GRID_OFFSET[1] * r,
            ]);
        }
    }
    pts
}

/// Generates the cell grid and per-satellite coverage for `scenario`.
///
/// Deterministic: the result depends only on the scenario's geometry fields.
pub fn build_constellation(scenario: &Scenario) -> Result<(CellGrid, CoverageMap)> {
    scenario.validate()?;
    let n = scenario.n_sats;
    let c = scenario.cells_per_sat;
    let v = scenario.n_cells_total;
    let r = scenario.cell_radius_km;
    let infeasible = || Error::LayoutInfeasible {
        n_sats: n,
        cells_per_sat: c,
        n_cells_total: v,
    };
    let rings = hex_rings(c).ok_or_else(|| {
        Error::InvalidScenario(format!(
            "cells_per_sat = {c} is not a centered hexagonal number (1, 7, 19, 37, ...)"
        ))
    })?;

    let (rows, cols) = grid_shape(n);
    // Beyond this spacing footprints no longer touch and the union is N*C.
    let max_spacing = 2.0 * SQRT3 * r * (rings as f64 + 1.0) + 2.0 * r;
    let extent = max_spacing * cols.max(rows) as f64 + 2.0 * SQRT3 * r * (rings as f64 + 2.0);
    let lattice = Lattice::new((extent / (1.5 * r)).ceil() as i64 + 2, r);

    let step = r / SCAN_STEPS_PER_RADIUS;
    let max_m = (max_spacing / step).ceil() as usize;
    let layouts: &[bool] = if rows > 1 { &[true, false] } else { &[false] };
    let mut scratch = Vec::new();

    for &staggered in layouts {
        for m in 0..=max_m {
            let spacing = m as f64 * step;
            let pts = sub_satellite_points(rows, cols, spacing, staggered, r);
            let footprints: Vec<Vec<usize>> =
                pts.iter().map(|&p| lattice.nearest(p, c, &mut scratch)).collect();
            let union: BTreeSet<usize> = footprints.iter().flatten().copied().collect();
            if union.len() != v {
                continue;
            }
            return Ok(assemble(&lattice, &pts, &footprints, &union, scenario));
        }
    }
    Err(infeasible())
}

fn assemble(
    lattice: &Lattice,
    pts: &[[f64; 2]],
    footprints: &[Vec<usize>],
    union: &BTreeSet<usize>,
    scenario: &Scenario,
) -> (CellGrid, CoverageMap) {
    // Cell ids in row-major lattice order (r, then q).
    let mut order: Vec<usize> = union.iter().copied().collect();
    order.sort_by_key(|&i| (lattice.axial[i].1, lattice.axial[i].0));
    let mut id_of = std::collections::HashMap::with_capacity(order.len());
    for (id, &li) in order.iter().enumerate() {
        id_of.insert(li, id);
    }
    let centers = order.iter().map(|&li| lattice.xy[li]).collect();
    let covered = footprints
        .iter()
        .map(|fp| {
            let mut ids: Vec<usize> = fp.iter().map(|li| id_of[li]).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    let sat_positions = pts
        .iter()
        .map(|p| [p[0], p[1], scenario.altitude_km])
        .collect();
    (
        CellGrid::new(scenario.cell_radius_km, centers),
        CoverageMap {
            sat_positions,
            covered,
        },
    )
}

/// Grid, coverage and the lookups derived from them.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub grid: CellGrid,
    pub coverage: CoverageMap,
    /// Satellites covering each cell, ascending.
    coverers: Vec<Vec<usize>>,
    /// `local[n][cell]` is the position of `cell` within `covered[n]`.
    local: Vec<Vec<Option<usize>>>,
}

impl Geometry {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let (grid, coverage) = build_constellation(scenario)?;
        Self::new(grid, coverage)
    }

    pub fn new(grid: CellGrid, coverage: CoverageMap) -> Result<Self> {
        let v = grid.len();
        let mut coverers = vec![Vec::new(); v];
        let mut local = vec![vec![None; v]; coverage.n_sats()];
        for (n, cells) in coverage.covered.iter().enumerate() {
            for (i, &c) in cells.iter().enumerate() {
                if c >= v {
                    return Err(Error::UnknownCell(c));
                }
                coverers[c].push(n);
                local[n][c] = Some(i);
            }
        }
        Ok(Self {
            grid,
            coverage,
            coverers,
            local,
        })
    }

    pub fn n_sats(&self) -> usize {
        self.coverage.n_sats()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn covered(&self, sat: usize) -> &[usize] {
        &self.coverage.covered[sat]
    }

    pub fn coverers(&self, cell: usize) -> &[usize] {
        &self.coverers[cell]
    }

    pub fn local_index(&self, sat: usize, cell: usize) -> Option<usize> {
        self.local.get(sat).and_then(|l| l.get(cell)).copied().flatten()
    }

    pub fn sat_position(&self, sat: usize) -> [f64; 3] {
        self.coverage.sat_positions[sat]
    }

    pub fn off_axis_angle(&self, sat: usize, boresight: usize, victim: usize) -> Result<f64> {
        off_axis_angle(self.sat_position(sat), boresight, victim, &self.grid)
    }

    pub fn slant_range(&self, sat: usize, cell: usize) -> Result<f64> {
        slant_range(self.sat_position(sat), cell, &self.grid)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Export<'a> {
            grid: &'a CellGrid,
            coverage: &'a CoverageMap,
        }
        Ok(serde_json::to_string_pretty(&Export {
            grid: &self.grid,
            coverage: &self.coverage,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Import {
            grid: CellGrid,
            coverage: CoverageMap,
        }
        let im: Import = serde_json::from_str(s)?;
        Self::new(im.grid, im.coverage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(n: usize, c: usize, v: usize) -> Scenario {
        Scenario {
            n_sats: n,
            cells_per_sat: c,
            n_cells_total: v,
            n_beams: 1,
            ..Scenario::reference()
        }
    }

    #[test]
    fn hex_numbers() {
        assert_eq!(hex_rings(1), Some(0));
        assert_eq!(hex_rings(7), Some(1));
        assert_eq!(hex_rings(19), Some(2));
        assert_eq!(hex_rings(37), Some(3));
        assert_eq!(hex_rings(8), None);
        assert_eq!(hex_rings(18), None);
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(12), (3, 4));
        assert_eq!(grid_shape(2), (1, 2));
        assert_eq!(grid_shape(3), (1, 3));
        assert_eq!(grid_shape(1), (1, 1));
        assert_eq!(grid_shape(7), (1, 7));
    }

    #[test]
    fn reference_layout_has_sixty_overlapping_slots() {
        let (grid, cov) = build_constellation(&Scenario::reference()).unwrap();
        assert_eq!(grid.len(), 168);
        assert_eq!(cov.covered.len(), 12);
        assert!(cov.covered.iter().all(|v| v.len() == 19));
        assert_eq!(cov.overlap_assignments(), 12 * 19 - 168);
        assert_eq!(cov.union().len(), 168);
    }

    #[test]
    fn single_satellite_has_no_overlap() {
        let (grid, cov) = build_constellation(&scenario(1, 19, 19)).unwrap();
        assert_eq!(grid.len(), 19);
        assert_eq!(cov.covered[0], (0..19).collect::<Vec<_>>());
        assert_eq!(cov.overlap_assignments(), 0);
    }

    #[test]
    fn two_satellites_share_seven_cells() {
        let (grid, cov) = build_constellation(&scenario(2, 19, 31)).unwrap();
        assert_eq!(grid.len(), 31);
        assert_eq!(cov.intersection(0, 1).len(), 7);
    }

    #[test]
    fn small_preset_layout() {
        let (grid, cov) = build_constellation(&Scenario::small()).unwrap();
        assert_eq!(grid.len(), 15);
        assert_eq!(cov.overlap_assignments(), 6);
    }

    #[test]
    fn hexagonal_packing_distance() {
        let (grid, _) = build_constellation(&Scenario::reference()).unwrap();
        let min = (0..grid.len())
            .flat_map(|i| (i + 1..grid.len()).map(move |j| (i, j)))
            .map(|(i, j)| grid.distance(i, j).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(min >= SQRT3 * 39.0 - 1e-9, "min spacing {min}");
    }

    #[test]
    fn infeasible_and_invalid_layouts() {
        // No spacing of two 19-cell footprints leaves exactly 14 shared cells.
        let s = scenario(2, 19, 24);
        assert!(matches!(build_constellation(&s), Err(Error::LayoutInfeasible { .. })));
        let s = scenario(2, 8, 12);
        assert!(matches!(build_constellation(&s), Err(Error::InvalidScenario(_))));
    }

    #[test]
    fn off_axis_angle_right_triangle() {
        let grid = CellGrid::new(39.0, vec![[0.0, 0.0], [39.0, 0.0], [-39.0, 0.0]]);
        let sat = [0.0, 0.0, 780.0];
        let a = off_axis_angle(sat, 0, 1, &grid).unwrap();
        assert!((a - (39.0f64 / 780.0).atan().to_degrees()).abs() < 1e-12);
        assert!((a - 2.863).abs() < 1e-3);
        assert_eq!(off_axis_angle(sat, 1, 1, &grid).unwrap(), 0.0);
        let b = off_axis_angle(sat, 0, 2, &grid).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(off_axis_angle(sat, 0, 9, &grid), Err(Error::UnknownCell(9))));
    }

    #[test]
    fn slant_range_examples() {
        let grid = CellGrid::new(39.0, vec![[0.0, 0.0], [39.0, 0.0]]);
        let sat = [0.0, 0.0, 780.0];
        assert_eq!(slant_range(sat, 0, &grid).unwrap(), 780.0);
        let d = slant_range(sat, 1, &grid).unwrap();
        assert!((d - (780.0f64.powi(2) + 39.0f64.powi(2)).sqrt()).abs() < 1e-12);
        assert!((d - 780.975).abs() < 1e-3);
        assert!(matches!(slant_range(sat, 2, &grid), Err(Error::UnknownCell(2))));
    }

    #[test]
    fn geometry_lookups_are_consistent() {
        let g = Geometry::build(&Scenario::reference()).unwrap();
        for n in 0..g.n_sats() {
            for (i, &c) in g.covered(n).iter().enumerate() {
                assert_eq!(g.local_index(n, c), Some(i));
                assert!(g.coverers(c).contains(&n));
            }
        }
        assert!((0..g.n_cells()).all(|c| !g.coverers(c).is_empty()));
    }
}
