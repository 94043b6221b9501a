//! Nested dyadic-cube partitions (Christ-type) and subcube sampling grids.
//!
//! Levels run from `k_min` (one cube = the whole space) to `k_max` (every
//! cube a singleton):
//!
//! * `k_max` = smallest `k` with `delta^k <` min positive distance,
//! * `k_min` = largest `k` with `delta^k >` diameter.
//!
//! Construction is fine-to-coarse: level `k_max` keeps every point; level
//! `k-1` centers are a greedy farthest-point maximal `delta^(k-1)`-separated
//! subset of the level-`k` centers (tie order fixed by the seed), and each
//! level-`k` cube joins its nearest surviving center (ties to the lowest
//! center id). Nesting and exact partitioning hold by construction; the
//! greedy net gives diam(Q) <= 2 delta^k/(1-delta).
//!
//! Queries outside the physical range clamp: coarser than `k_min` behaves as
//! the whole-space cube, finer than `k_max` as the singleton partition.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::MetricMeasureSpace;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cube {
    pub index: usize,
    /// point id of the net center
    pub center: usize,
    /// sorted point ids
    pub members: Vec<usize>,
    /// index of the containing cube one level coarser (None at k_min)
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelCubes {
    pub k: i64,
    pub cubes: Vec<Cube>,
    /// point id -> cube index at this level
    pub assignment: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeSystem {
    pub delta: f64,
    pub seed: u64,
    pub k_min: i64,
    pub k_max: i64,
    /// levels[i] is level k_min + i
    pub levels: Vec<LevelCubes>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CubeAxiomReport {
    pub partition_ok: bool,
    pub nesting_ok: bool,
    /// measured max diam(Q) / delta^k over all non-root cubes
    pub c_nat_upper: f64,
    /// measured min (distance from center to nearest non-member) / delta^k
    pub c_nat_lower: f64,
    pub levels_checked: usize,
    pub cubes_checked: usize,
}

fn delta_pow(delta: f64, k: i64) -> f64 {
    delta.powi(k as i32)
}

/// Smallest k with delta^k strictly below `dmin`, robust at exact powers.
fn level_max(delta: f64, dmin: f64) -> i64 {
    let mut k = (dmin.ln() / delta.ln()).floor() as i64; // approximate
    while delta_pow(delta, k) < dmin {
        k -= 1;
    }
    while delta_pow(delta, k) >= dmin {
        k += 1;
    }
    k
}

/// Largest k with delta^k strictly above `diam`.
fn level_min(delta: f64, diam: f64) -> i64 {
    let mut k = (diam.ln() / delta.ln()).ceil() as i64;
    while delta_pow(delta, k) > diam {
        k += 1;
    }
    while delta_pow(delta, k) <= diam {
        k -= 1;
    }
    k
}

impl CubeSystem {
    pub fn n_points(&self) -> usize {
        self.levels[0].assignment.len()
    }

    /// Index into `levels` after clamping to the physical range.
    fn level_slot(&self, k: i64) -> usize {
        let kk = k.clamp(self.k_min, self.k_max);
        (kk - self.k_min) as usize
    }

    /// Partition at level k (clamped outside [k_min, k_max]).
    pub fn level(&self, k: i64) -> &LevelCubes {
        &self.levels[self.level_slot(k)]
    }

    /// Cube index containing `point` at level k (clamped).
    pub fn cube_of(&self, k: i64, point: usize) -> usize {
        self.level(k).assignment[point]
    }

    pub fn cube_measure(&self, space: &MetricMeasureSpace, k: i64, index: usize) -> f64 {
        self.level(k).cubes[index].members.iter().map(|&p| space.mu(p)).sum()
    }
}

pub fn build_cubes(space: &MetricMeasureSpace, delta: f64, seed: u64) -> Result<CubeSystem> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let n = space.n();
    if n == 1 {
        let lv = LevelCubes {
            k: 0,
            cubes: vec![Cube { index: 0, center: 0, members: vec![0], parent: None }],
            assignment: vec![0],
        };
        return Ok(CubeSystem { delta, seed, k_min: 0, k_max: 0, levels: vec![lv] });
    }
    let dmin = space.min_positive_distance();
    let diam = space.diameter();
    let k_max = level_max(delta, dmin);
    let k_min = level_min(delta, diam).min(k_max); // degenerate guard

    // finest level: every point its own cube
    let mut levels_rev: Vec<LevelCubes> = Vec::new();
    let finest = LevelCubes {
        k: k_max,
        cubes: (0..n)
            .map(|i| Cube { index: i, center: i, members: vec![i], parent: None })
            .collect(),
        assignment: (0..n).collect(),
    };
    levels_rev.push(finest);

    let mut k = k_max;
    while k > k_min {
        k -= 1;
        let sep = delta_pow(delta, k);
        let fine = levels_rev.last().unwrap();
        let candidates: Vec<usize> = fine.cubes.iter().map(|c| c.center).collect();
        // tie-break priority: seeded shuffle, one stream per level
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9e3779b97f4a7c15));
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng);
        let mut priority = vec![0usize; candidates.len()];
        for (rank, &c) in order.iter().enumerate() {
            priority[c] = rank;
        }

        // greedy farthest-point traversal over candidate centers
        let m = candidates.len();
        let mut selected: Vec<usize> = Vec::new(); // candidate slots
        let mut nearest = vec![f64::INFINITY; m]; // distance to selected set
        let start = (0..m).min_by_key(|&i| priority[i]).unwrap();
        selected.push(start);
        for i in 0..m {
            nearest[i] = space.dist(candidates[i], candidates[start]);
        }
        loop {
            let mut best: Option<usize> = None;
            for i in 0..m {
                if selected.contains(&i) {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(b) => {
                        if nearest[i] > nearest[b]
                            || (nearest[i] == nearest[b] && priority[i] < priority[b])
                        {
                            Some(i)
                        } else {
                            Some(b)
                        }
                    }
                };
            }
            let Some(b) = best else { break };
            if nearest[b] < sep {
                break; // maximal: every remaining candidate is within sep
            }
            selected.push(b);
            for i in 0..m {
                nearest[i] = nearest[i].min(space.dist(candidates[i], candidates[b]));
            }
        }
        selected.sort_by_key(|&i| candidates[i]); // stable cube ordering by center id

        // assign each fine cube to the nearest selected center, ties -> lowest id
        let centers: Vec<usize> = selected.iter().map(|&i| candidates[i]).collect();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); centers.len()];
        let mut child_parent: Vec<usize> = vec![0; fine.cubes.len()];
        for (ci, cube) in fine.cubes.iter().enumerate() {
            let mut best = 0usize;
            for (si, &c) in centers.iter().enumerate() {
                let d = space.dist(cube.center, c);
                let db = space.dist(cube.center, centers[best]);
                if d < db || (d == db && c < centers[best]) {
                    best = si;
                }
            }
            child_parent[ci] = best;
            members[best].extend_from_slice(&cube.members);
        }
        let mut assignment = vec![0usize; n];
        let cubes: Vec<Cube> = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut ms = std::mem::take(&mut members[i]);
                ms.sort_unstable();
                for &p in &ms {
                    assignment[p] = i;
                }
                Cube { index: i, center: c, members: ms, parent: None }
            })
            .collect();

        // wire the parent pointers of the finer level
        let fine = levels_rev.last_mut().unwrap();
        for (ci, cube) in fine.cubes.iter_mut().enumerate() {
            cube.parent = Some(child_parent[ci]);
        }
        levels_rev.push(LevelCubes { k, cubes, assignment });
    }

    levels_rev.reverse();
    Ok(CubeSystem { delta, seed, k_min, k_max, levels: levels_rev })
}

/// Checks partition exactness, nesting, and the two ball/diameter axioms,
/// returning the *measured* inner and outer constants.
pub fn verify_cube_axioms(system: &CubeSystem, space: &MetricMeasureSpace) -> CubeAxiomReport {
    let n = space.n();
    let mut partition_ok = true;
    let mut nesting_ok = true;
    let mut c_upper = 0.0f64;
    let mut c_lower = f64::INFINITY;
    let mut cubes_checked = 0usize;

    for (slot, lv) in system.levels.iter().enumerate() {
        let scale = delta_pow(system.delta, lv.k);
        let mut seen = vec![false; n];
        for cube in &lv.cubes {
            cubes_checked += 1;
            for &p in &cube.members {
                if seen[p] {
                    partition_ok = false;
                }
                seen[p] = true;
                if lv.assignment[p] != cube.index {
                    partition_ok = false;
                }
            }
            // diameter axiom
            let mut diam = 0.0f64;
            for &a in &cube.members {
                for &b in &cube.members {
                    diam = diam.max(space.dist(a, b));
                }
            }
            c_upper = c_upper.max(diam / scale);
            // inner ball axiom: largest r with B(center, r) inside the cube is
            // the distance from the center to the nearest non-member
            if cube.members.len() < n {
                let mut nearest_out = f64::INFINITY;
                for q in 0..n {
                    if !cube.members.contains(&q) {
                        nearest_out = nearest_out.min(space.dist(cube.center, q));
                    }
                }
                c_lower = c_lower.min(nearest_out / scale);
            }
            // nesting: members must sit inside the parent cube
            if slot > 0 {
                let coarser = &system.levels[slot - 1];
                match cube.parent {
                    None => nesting_ok = false,
                    Some(pi) => {
                        for &p in &cube.members {
                            if coarser.assignment[p] != pi {
                                nesting_ok = false;
                            }
                        }
                    }
                }
            }
        }
        if seen.iter().any(|&s| !s) {
            partition_ok = false;
        }
    }
    if !c_lower.is_finite() {
        c_lower = f64::INFINITY; // only whole-space cubes; no constraint
    }
    CubeAxiomReport {
        partition_ok,
        nesting_ok,
        c_nat_upper: c_upper,
        c_nat_lower: c_lower,
        levels_checked: system.levels.len(),
        cubes_checked,
    }
}

// ---------------------------------------------------------------------------
// subcube sampling grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRule {
    Center,
    MinId,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Subcube {
    /// cube index at the parent level j
    pub parent: usize,
    /// level the subcube actually lives at (j + j0, clamped to k_max)
    pub cube_level: i64,
    pub cube_index: usize,
    /// chosen sample point id
    pub sample: usize,
    pub measure: f64,
    /// number of points in the subcube (1 = singleton)
    pub measure_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridLevel {
    pub j: i64,
    /// true when j + j0 exceeded k_max and was clamped
    pub clamped: bool,
    pub subcubes: Vec<Subcube>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubcubeGrid {
    pub j0: i64,
    pub eps0: f64,
    pub sample_rule: SampleRule,
    pub seed: u64,
    /// levels[i] holds grid level k_min + i
    pub levels: Vec<GridLevel>,
    pub k_min: i64,
    pub k_max: i64,
}

impl SubcubeGrid {
    /// Grid at level j (clamped to the physical range).
    pub fn level(&self, j: i64) -> &GridLevel {
        let jj = j.clamp(self.k_min, self.k_max);
        &self.levels[(jj - self.k_min) as usize]
    }

    /// True when every subcube at level j is a single point.
    pub fn is_singleton_level(&self, j: i64) -> bool {
        self.level(j).subcubes.iter().all(|s| s.measure_points == 1)
    }
}

impl Subcube {
    fn new(parent: usize, cube_level: i64, cube_index: usize, sample: usize, measure: f64, points: usize) -> Self {
        Subcube { parent, cube_level, cube_index, sample, measure, measure_points: points }
    }
}

pub fn subcube_grid(
    system: &CubeSystem,
    space: &MetricMeasureSpace,
    j0: i64,
    eps0: f64,
    sample_rule: SampleRule,
    seed: u64,
) -> Result<SubcubeGrid> {
    if j0 < 0 {
        return Err(Error::InvalidParams(format!("j0 must be >= 0, got {j0}")));
    }
    let mut levels = Vec::new();
    for j in system.k_min..=system.k_max {
        let sub_level = (j + j0).min(system.k_max);
        let clamped = j + j0 > system.k_max;
        let parent_lv = system.level(j);
        let sub_lv = system.level(sub_level);
        let mut subcubes = Vec::new();
        for (si, sc) in sub_lv.cubes.iter().enumerate() {
            // ancestor at level j: walk any member through the assignment
            let parent = parent_lv.assignment[sc.members[0]];
            let sample = match sample_rule {
                SampleRule::Center => sc.center,
                SampleRule::MinId => sc.members[0],
                SampleRule::Random => {
                    let mut rng = ChaCha20Rng::seed_from_u64(
                        seed ^ (j as u64).wrapping_mul(0x9e3779b97f4a7c15)
                            ^ (si as u64).wrapping_mul(0xd1b54a32d192ed03),
                    );
                    sc.members[rng.gen_range(0..sc.members.len())]
                }
            };
            let measure: f64 = sc.members.iter().map(|&p| space.mu(p)).sum();
            subcubes.push(Subcube::new(parent, sub_level, si, sample, measure, sc.members.len()));
        }
        levels.push(GridLevel { j, clamped, subcubes });
    }
    Ok(SubcubeGrid {
        j0,
        eps0,
        sample_rule,
        seed,
        levels,
        k_min: system.k_min,
        k_max: system.k_max,
    })
}

/// Piecewise-constant expansion weights: for each point, the subcube at level
/// j containing it (used by sequence norms and the stopping functional).
pub fn point_to_subcube(grid: &SubcubeGrid, system: &CubeSystem, j: i64) -> Vec<usize> {
    let lv = grid.level(j);
    let sub_level = lv.subcubes.first().map(|s| s.cube_level).unwrap_or(grid.k_max);
    let assignment = &system.level(sub_level).assignment;
    let mut cube_to_slot = vec![usize::MAX; system.level(sub_level).cubes.len()];
    for (slot, s) in lv.subcubes.iter().enumerate() {
        cube_to_slot[s.cube_index] = slot;
    }
    assignment.iter().map(|&c| cube_to_slot[c]).collect()
}

/// mu-weighted indicator masses of each cube, as a vector over cubes.
pub fn cube_measures(system: &CubeSystem, space: &MetricMeasureSpace, k: i64) -> Array1<f64> {
    let lv = system.level(k);
    Array1::from_iter(
        lv.cubes.iter().map(|c| c.members.iter().map(|&p| space.mu(p)).sum::<f64>()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn cycle_space(n: usize) -> MetricMeasureSpace {
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let k = (i as i64 - j as i64).unsigned_abs() as usize % n;
                d[(i, j)] = k.min(n - k) as f64;
            }
        }
        MetricMeasureSpace::new(d, Array1::ones(n)).unwrap()
    }

    fn path_space(n: usize) -> MetricMeasureSpace {
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] = (i as f64 - j as f64).abs();
            }
        }
        MetricMeasureSpace::new(d, Array1::ones(n)).unwrap()
    }

    #[test]
    fn invalid_delta_rejected() {
        let s = cycle_space(4);
        assert!(matches!(build_cubes(&s, 1.0, 0), Err(Error::InvalidDelta(_))));
        assert!(matches!(build_cubes(&s, 0.0, 0), Err(Error::InvalidDelta(_))));
    }

    #[test]
    fn cycle64_level_range() {
        let s = cycle_space(64);
        let c = build_cubes(&s, 0.5, 0).unwrap();
        assert_eq!(c.k_max, 1); // 0.5 < 1 = min distance
        assert_eq!(c.k_min, -6); // 2^6 = 64 > 32 = diam, 2^5 = 32 is not
        // finest two levels are singleton partitions
        assert_eq!(c.level(1).cubes.len(), 64);
        assert_eq!(c.level(0).cubes.len(), 64);
        // coarsest level is the whole space
        assert_eq!(c.level(-6).cubes.len(), 1);
        assert_eq!(c.level(-6).cubes[0].members.len(), 64);
        // clamped queries
        assert_eq!(c.level(5).cubes.len(), 64);
        assert_eq!(c.level(-20).cubes.len(), 1);
    }

    #[test]
    fn path8_outer_constant_within_greedy_bound() {
        let s = path_space(8);
        let c = build_cubes(&s, 0.5, 0).unwrap();
        let rep = verify_cube_axioms(&c, &s);
        assert!(rep.partition_ok && rep.nesting_ok);
        assert!(rep.c_nat_upper <= 4.0 + 1e-12, "C_nat = {}", rep.c_nat_upper);
        assert!(rep.c_nat_lower > 0.0);
    }

    #[test]
    fn determinism_bit_for_bit() {
        let s = cycle_space(24);
        let a = build_cubes(&s, 0.5, 7).unwrap();
        let b = build_cubes(&s, 0.5, 7).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn subcube_grid_covers_and_clamps() {
        let s = cycle_space(16);
        let c = build_cubes(&s, 0.5, 0).unwrap();
        let g = subcube_grid(&c, &s, 1, 0.1, SampleRule::Center, 0).unwrap();
        // at j = k_max the subcube level clamps to k_max
        let top = g.level(c.k_max);
        assert!(top.clamped);
        assert!(g.is_singleton_level(c.k_max));
        // every level's subcube measures add up to the total measure
        for j in c.k_min..=c.k_max {
            let tot: f64 = g.level(j).subcubes.iter().map(|s| s.measure).sum();
            assert!((tot - s.total_measure()).abs() < 1e-12);
        }
        // parents consistent: the sample point must lie in the parent cube
        for j in c.k_min..=c.k_max {
            for sc in &g.level(j).subcubes {
                assert_eq!(c.cube_of(j, sc.sample), sc.parent);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn axioms_hold_across_seeds_and_deltas(
            n in 4usize..20,
            seed in 0u64..1000,
            delta_pct in 30u32..70,
        ) {
            let delta = delta_pct as f64 / 100.0;
            let s = cycle_space(n);
            let c = build_cubes(&s, delta, seed).unwrap();
            let rep = verify_cube_axioms(&c, &s);
            prop_assert!(rep.partition_ok);
            prop_assert!(rep.nesting_ok);
            prop_assert!(rep.c_nat_lower > 0.0);
            prop_assert!(rep.c_nat_upper <= 2.0 / (1.0 - delta) + 1e-9);
        }
    }
}
