//! Ising lattice Monte Carlo.
//!
//! Two geometries share one periodic `n x n` index grid: the square lattice
//! (4 neighbors) and the triangular lattice, realized by adding the
//! `(+1, +1)` diagonal as a third bond direction (6 neighbors). The
//! Hamiltonian is `E = -J * sum_<ik> s_i s_k` with every bond counted once.
//!
//! Energies are tracked as the integer bond sum `S = sum s_i s_k`, so
//! `E = -J * S` and conservation checks are exact.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeKind {
    Square,
    Triangular,
}

impl LatticeKind {
    /// Bond directions owned by each site: (row offset, column offset).
    fn bond_offsets(self) -> &'static [(usize, usize)] {
        match self {
            LatticeKind::Square => &[(0, 1), (1, 0)],
            LatticeKind::Triangular => &[(0, 1), (1, 0), (1, 1)],
        }
    }

    pub fn coordination(self) -> usize {
        2 * self.bond_offsets().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dynamics {
    /// Single-spin flips.
    Metropolis,
    /// Neighbor exchanges of opposite spins; conserves magnetization.
    Kawasaki,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingConfig {
    pub lattice_kind: LatticeKind,
    pub n: usize,
    pub temperature: f64,
    pub j_coupling: f64,
    pub equil_sweeps: usize,
    pub measure_sweeps: usize,
    pub dynamics: Dynamics,
    /// Initial magnetization per spin for Kawasaki runs.
    #[serde(default)]
    pub init_magnetization: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Permits geometry/dynamics pairings other than square+Metropolis and
    /// triangular+Kawasaki.
    #[serde(default)]
    pub allow_any_pairing: bool,
}

pub const DEFAULT_TEMPERATURE: f64 = 2.7;

impl IsingConfig {
    pub fn square(n: usize) -> Self {
        IsingConfig {
            lattice_kind: LatticeKind::Square,
            n,
            temperature: DEFAULT_TEMPERATURE,
            j_coupling: 1.0,
            equil_sweeps: 500,
            measure_sweeps: 500,
            dynamics: Dynamics::Metropolis,
            init_magnetization: 0.0,
            rng_seed: 0,
            allow_any_pairing: false,
        }
    }

    pub fn triangular(n: usize) -> Self {
        IsingConfig {
            lattice_kind: LatticeKind::Triangular,
            dynamics: Dynamics::Kawasaki,
            ..IsingConfig::square(n)
        }
    }

    pub fn with_coupling(&self, j: f64, seed: u64) -> Self {
        IsingConfig { j_coupling: j, rng_seed: seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::config("ising.n", "lattice side must be >= 2"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("ising.temperature", "must be > 0"));
        }
        if !self.j_coupling.is_finite() {
            return Err(Error::config("ising.j_coupling", "must be finite"));
        }
        if self.equil_sweeps < 1 || self.measure_sweeps < 1 {
            return Err(Error::config("ising.sweeps", "equil_sweeps and measure_sweeps must be >= 1"));
        }
        if !(-1.0..=1.0).contains(&self.init_magnetization) {
            return Err(Error::config("ising.init_magnetization", "must lie in [-1, 1]"));
        }
        let paired = matches!(
            (self.lattice_kind, self.dynamics),
            (LatticeKind::Square, Dynamics::Metropolis) | (LatticeKind::Triangular, Dynamics::Kawasaki)
        );
        if !paired && !self.allow_any_pairing {
            return Err(Error::config(
                "ising.dynamics",
                format!("{:?} dynamics on a {:?} lattice needs allow_any_pairing", self.dynamics, self.lattice_kind),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinLattice {
    n: usize,
    kind: LatticeKind,
    spins: Vec<i8>,
    /// Flattened neighbor table, `coordination` entries per site.
    neighbors: Vec<usize>,
}

impl SpinLattice {
    pub fn uniform(n: usize, kind: LatticeKind, spin: i8) -> Self {
        assert!(spin == 1 || spin == -1, "spins are +1 or -1");
        let mut lat = SpinLattice {
            n,
            kind,
            spins: vec![spin; n * n],
            neighbors: Vec::new(),
        };
        lat.neighbors = lat.build_neighbors();
        lat
    }

    pub fn from_spins(n: usize, kind: LatticeKind, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, actual: spins.len() });
        }
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::param("spins", "every spin must be +1 or -1"));
        }
        let mut lat = SpinLattice::uniform(n, kind, 1);
        lat.spins = spins;
        Ok(lat)
    }

    pub fn random(n: usize, kind: LatticeKind, rng: &mut StreamRng) -> Self {
        let mut lat = SpinLattice::uniform(n, kind, 1);
        for s in &mut lat.spins {
            *s = if rng.random::<bool>() { 1 } else { -1 };
        }
        lat
    }

    /// Random arrangement with exactly `round((1 + m) / 2 * n^2)` up spins.
    pub fn with_magnetization(n: usize, kind: LatticeKind, m: f64, rng: &mut StreamRng) -> Self {
        let total = n * n;
        let up = (((1.0 + m) / 2.0) * total as f64).round() as usize;
        let mut lat = SpinLattice::uniform(n, kind, -1);
        for s in lat.spins.iter_mut().take(up.min(total)) {
            *s = 1;
        }
        lat.spins.shuffle(rng);
        lat
    }

    fn build_neighbors(&self) -> Vec<usize> {
        let n = self.n;
        let offsets = self.kind.bond_offsets();
        let mut out = Vec::with_capacity(n * n * 2 * offsets.len());
        for r in 0..n {
            for c in 0..n {
                for &(dr, dc) in offsets {
                    out.push(((r + dr) % n) * n + (c + dc) % n);
                    out.push(((r + n - dr) % n) * n + (c + n - dc) % n);
                }
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        let z = self.kind.coordination();
        &self.neighbors[site * z..(site + 1) * z]
    }

    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| i64::from(s)).sum()
    }

    /// `sum s_i s_k` over bonds, each counted once.
    pub fn bond_sum(&self) -> i64 {
        let n = self.n;
        let mut total = 0i64;
        for r in 0..n {
            for c in 0..n {
                let s = i64::from(self.spins[r * n + c]);
                for &(dr, dc) in self.kind.bond_offsets() {
                    total += s * i64::from(self.spins[((r + dr) % n) * n + (c + dc) % n]);
                }
            }
        }
        total
    }

    fn local_field(&self, site: usize) -> i64 {
        self.neighbors(site).iter().map(|&k| i64::from(self.spins[k])).sum()
    }

    /// Change in bond sum when flipping `site`.
    pub fn flip_bond_delta(&self, site: usize) -> i64 {
        -2 * i64::from(self.spins[site]) * self.local_field(site)
    }

    /// Change in bond sum when exchanging the spins at `a` and `b`.
    pub fn exchange_bond_delta(&self, a: usize, b: usize) -> i64 {
        let sa = i64::from(self.spins[a]);
        let sb = i64::from(self.spins[b]);
        if sa == sb {
            return 0;
        }
        let shared = self.neighbors(a).iter().filter(|&&k| k == b).count() as i64;
        -2 * (sa * self.local_field(a) + sb * self.local_field(b) - 2 * shared * sa * sb)
    }

    fn flip(&mut self, site: usize) {
        self.spins[site] = -self.spins[site];
    }
}

/// `E = -J * sum_<ik> s_i s_k` with periodic boundaries.
pub fn lattice_energy(lat: &SpinLattice, j: f64) -> f64 {
    -j * lat.bond_sum() as f64
}

/// One attempted move as seen by the acceptance rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveRecord {
    pub sites: (usize, usize),
    pub delta_e: f64,
    /// Uniform draw used for the decision; `None` when `delta_e <= 0` or
    /// the proposal was void (equal spins under exchange).
    pub uniform: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub attempts: usize,
    pub accepted: usize,
    /// Net change of the bond sum over the sweep.
    pub bond_delta: i64,
}

fn metropolis_accept(delta_e: f64, t: f64, rng: &mut StreamRng) -> (bool, Option<f64>) {
    if delta_e <= 0.0 {
        (true, None)
    } else {
        let u: f64 = rng.random();
        (u < (-delta_e / t).exp(), Some(u))
    }
}

/// `n^2` single-spin-flip attempts at random sites.
pub fn metropolis_sweep(lat: &mut SpinLattice, j: f64, t: f64, rng: &mut StreamRng) -> SweepStats {
    metropolis_sweep_audited(lat, j, t, rng, |_| {})
}

pub fn metropolis_sweep_audited<F: FnMut(MoveRecord)>(
    lat: &mut SpinLattice,
    j: f64,
    t: f64,
    rng: &mut StreamRng,
    mut audit: F,
) -> SweepStats {
    let sites = lat.len();
    let mut stats = SweepStats::default();
    for _ in 0..sites {
        let site = rng.random_range(0..sites);
        let db = lat.flip_bond_delta(site);
        let delta_e = -j * db as f64;
        let (accepted, uniform) = metropolis_accept(delta_e, t, rng);
        if accepted {
            lat.flip(site);
            stats.accepted += 1;
            stats.bond_delta += db;
        }
        stats.attempts += 1;
        audit(MoveRecord { sites: (site, site), delta_e, uniform, accepted });
    }
    stats
}

/// `n^2` attempted exchanges between a random site and a random neighbor.
/// Equal-spin pairs count as rejected attempts.
pub fn kawasaki_sweep(lat: &mut SpinLattice, j: f64, t: f64, rng: &mut StreamRng) -> SweepStats {
    kawasaki_sweep_audited(lat, j, t, rng, |_| {})
}

pub fn kawasaki_sweep_audited<F: FnMut(MoveRecord)>(
    lat: &mut SpinLattice,
    j: f64,
    t: f64,
    rng: &mut StreamRng,
    mut audit: F,
) -> SweepStats {
    let sites = lat.len();
    let z = lat.kind.coordination();
    let mut stats = SweepStats::default();
    for _ in 0..sites {
        let a = rng.random_range(0..sites);
        let b = lat.neighbors(a)[rng.random_range(0..z)];
        stats.attempts += 1;
        if lat.spins[a] == lat.spins[b] {
            audit(MoveRecord { sites: (a, b), delta_e: 0.0, uniform: None, accepted: false });
            continue;
        }
        let db = lat.exchange_bond_delta(a, b);
        let delta_e = -j * db as f64;
        let (accepted, uniform) = metropolis_accept(delta_e, t, rng);
        if accepted {
            lat.flip(a);
            lat.flip(b);
            stats.accepted += 1;
            stats.bond_delta += db;
        }
        audit(MoveRecord { sites: (a, b), delta_e, uniform, accepted });
    }
    stats
}

/// Equilibrates, then records the energy after every measurement sweep and
/// returns the per-spin fluctuation estimate `(<E^2> - <E>^2) / (n^2 T^2)`.
pub fn simulate_heat_capacity(cfg: &IsingConfig) -> Result<f64> {
    cfg.validate()?;
    let mut rng = crate::rng::stream(cfg.rng_seed, crate::rng::Stage::Objective, 0);
    let mut lat = match cfg.dynamics {
        Dynamics::Metropolis => SpinLattice::random(cfg.n, cfg.lattice_kind, &mut rng),
        Dynamics::Kawasaki => SpinLattice::with_magnetization(cfg.n, cfg.lattice_kind, cfg.init_magnetization, &mut rng),
    };
    let (j, t) = (cfg.j_coupling, cfg.temperature);
    let sweep = |lat: &mut SpinLattice, rng: &mut StreamRng| match cfg.dynamics {
        Dynamics::Metropolis => metropolis_sweep(lat, j, t, rng),
        Dynamics::Kawasaki => kawasaki_sweep(lat, j, t, rng),
    };
    for _ in 0..cfg.equil_sweeps {
        sweep(&mut lat, &mut rng);
    }
    let mut bond = lat.bond_sum();
    let mut samples = Vec::with_capacity(cfg.measure_sweeps);
    for _ in 0..cfg.measure_sweeps {
        bond += sweep(&mut lat, &mut rng).bond_delta;
        samples.push(bond as f64);
    }
    debug_assert_eq!(bond, lat.bond_sum());
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var_bond = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m;
    let spins = (cfg.n * cfg.n) as f64;
    Ok(j * j * var_bond / (spins * t * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> StreamRng {
        StreamRng::seed_from_u64(seed)
    }

    #[test]
    fn ground_state_energies() {
        for n in [2, 3, 7, 20] {
            let sq = SpinLattice::uniform(n, LatticeKind::Square, 1);
            let tri = SpinLattice::uniform(n, LatticeKind::Triangular, 1);
            assert_eq!(lattice_energy(&sq, 1.3), -1.3 * (2 * n * n) as f64);
            assert_eq!(lattice_energy(&tri, 0.7), -0.7 * (3 * n * n) as f64);
        }
        let lat = SpinLattice::random(9, LatticeKind::Triangular, &mut rng(1));
        assert_eq!(lattice_energy(&lat, 0.0), 0.0);
    }

    #[test]
    fn neighbor_tables() {
        let sq = SpinLattice::uniform(5, LatticeKind::Square, 1);
        let mut nb = sq.neighbors(0).to_vec();
        nb.sort();
        assert_eq!(nb, vec![1, 4, 5, 20]);
        let tri = SpinLattice::uniform(5, LatticeKind::Triangular, 1);
        let mut nb = tri.neighbors(6).to_vec();
        nb.sort();
        // (1,1): right (1,2)=7, left (1,0)=5, down (2,1)=11, up (0,1)=1, diag (2,2)=12, anti (0,0)=0
        assert_eq!(nb, vec![0, 1, 5, 7, 11, 12]);
    }

    #[test]
    fn local_deltas_match_brute_force() {
        let mut r = rng(5);
        for kind in [LatticeKind::Square, LatticeKind::Triangular] {
            for n in [2, 3, 6] {
                let lat = SpinLattice::random(n, kind, &mut r);
                let before = lat.bond_sum();
                for site in 0..lat.len() {
                    let mut flipped = lat.clone();
                    flipped.flip(site);
                    assert_eq!(flipped.bond_sum() - before, lat.flip_bond_delta(site));
                    for &b in lat.neighbors(site) {
                        if lat.spins[b] != lat.spins[site] {
                            let mut ex = lat.clone();
                            ex.flip(site);
                            ex.flip(b);
                            assert_eq!(ex.bond_sum() - before, lat.exchange_bond_delta(site, b));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn kawasaki_conserves_magnetization() {
        let mut r = rng(8);
        let mut lat = SpinLattice::with_magnetization(12, LatticeKind::Triangular, 0.25, &mut r);
        let m0 = lat.magnetization();
        assert_eq!(m0, 2 * 90 - 144);
        for _ in 0..50 {
            kawasaki_sweep(&mut lat, 1.0, 2.7, &mut r);
            assert_eq!(lat.magnetization(), m0);
        }
    }

    #[test]
    fn kawasaki_all_up_is_unchanged() {
        let mut lat = SpinLattice::uniform(6, LatticeKind::Triangular, 1);
        let stats = kawasaki_sweep(&mut lat, 1.0, 2.7, &mut rng(2));
        assert_eq!(stats.accepted, 0);
        assert_eq!(lat, SpinLattice::uniform(6, LatticeKind::Triangular, 1));
    }

    #[test]
    fn metropolis_limits() {
        let mut hot = SpinLattice::random(20, LatticeKind::Square, &mut rng(3));
        let stats = metropolis_sweep(&mut hot, 1.0, 1e6, &mut rng(4));
        assert!(stats.accepted as f64 / stats.attempts as f64 >= 0.999);

        let mut cold = SpinLattice::uniform(20, LatticeKind::Square, 1);
        let stats = metropolis_sweep(&mut cold, 1.0, 1e-3, &mut rng(4));
        assert_eq!(stats.accepted, 0);
    }

    #[test]
    fn downhill_moves_always_accepted() {
        // a single flipped spin in an all-up sea: flipping it back lowers the energy
        let mut spins = vec![1i8; 36];
        spins[14] = -1;
        let lat = SpinLattice::from_spins(6, LatticeKind::Square, spins).unwrap();
        let mut r = rng(6);
        let mut audited = 0;
        let mut l = lat.clone();
        metropolis_sweep_audited(&mut l, 1.0, 0.5, &mut r, |m| {
            if m.delta_e < 0.0 {
                assert!(m.accepted);
                audited += 1;
            }
        });
        assert!(audited <= 36);
    }

    #[test]
    fn metropolis_criterion_is_audited() {
        let mut lat = SpinLattice::random(10, LatticeKind::Square, &mut rng(10));
        let mut r = rng(11);
        for _ in 0..20 {
            metropolis_sweep_audited(&mut lat, 1.0, 2.7, &mut r, |m| match m.uniform {
                None => assert!(m.delta_e <= 0.0 && m.accepted),
                Some(u) => assert_eq!(m.accepted, u < (-m.delta_e / 2.7f64).exp().min(1.0)),
            });
        }
    }

    #[test]
    fn heat_capacity_basics() {
        let mut cfg = IsingConfig::square(8);
        cfg.equil_sweeps = 50;
        cfg.measure_sweeps = 50;
        cfg.j_coupling = 0.0;
        assert_eq!(simulate_heat_capacity(&cfg).unwrap(), 0.0);
        cfg.j_coupling = 1.1;
        cfg.rng_seed = 42;
        let a = simulate_heat_capacity(&cfg).unwrap();
        let b = simulate_heat_capacity(&cfg).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0);
        let tri = IsingConfig { n: 8, equil_sweeps: 50, measure_sweeps: 50, ..IsingConfig::triangular(8) };
        assert!(simulate_heat_capacity(&tri.with_coupling(0.7, 3)).unwrap() >= 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(IsingConfig { n: 1, ..IsingConfig::square(1) }.validate().is_err());
        assert!(IsingConfig { temperature: 0.0, ..IsingConfig::square(4) }.validate().is_err());
        assert!(IsingConfig { measure_sweeps: 0, ..IsingConfig::square(4) }.validate().is_err());
        let mixed = IsingConfig { dynamics: Dynamics::Kawasaki, ..IsingConfig::square(4) };
        assert!(mixed.validate().is_err());
        IsingConfig { allow_any_pairing: true, ..mixed }.validate().unwrap();
    }
}
