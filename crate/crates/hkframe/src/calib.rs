//! Spectral bump calibration: a smooth band pair, its duals, and the
//! truncated reproducing formula.
//!
//! All profiles are functions of `s = sqrt(lambda)` and are built from one
//! C-infinity glue `step(u) = psi(u)/(psi(u)+psi(1-u))`, `psi(u)=exp(-1/u)`.
//! With `D = delta^(-beta0/2)`:
//!
//! * `Phi0(s) = eta(s^2)` where `eta` is 1 on `[0, a^2]`, 0 on
//!   `[delta^(-beta0), inf)` (`a = D^alpha`, log-symmetric bridge between);
//! * `Phi(s) = Phi0(s) - Phi0(D s)`, so `Phi_j(s) = Phi(s/D^j)` telescopes:
//!   `Phi0 + sum_j Phi_j = eta(s^2/D^(2J)) -> 1` — the partition of unity is
//!   exact up to one rounding per level;
//! * both profiles take values in [0,1], `Phi0` is a function of `s^2` (all
//!   odd derivatives vanish at 0), `supp Phi0 = [0, D]`,
//!   `supp Phi_j = [a D^(j-1), D^(j+1)]`, and consecutive-only overlap means
//!   `Phi_j Phi_k = 0` *identically* for `|j-k| >= 2`;
//! * lower-bound certificate: at every `s` either one profile sits on its
//!   plateau (value 1) or exactly two adjacent profiles are active and they
//!   telescope to `g + (1 - g) = 1`, so
//!   `S = Phi0^2 + sum_j Phi_j^2 >= min_g (g^2 + (1-g)^2) = 1/2`,
//!   i.e. `c = 1/sqrt(2)` independent of `alpha`, and the bound is attained
//!   at the crossing `g = 1/2`.
//!
//! Duals divide by the squared sum `S >= c^2`:
//! `dual_j = Phi_j / S`, which makes `sum_j dual_j * Phi_j = 1` exact
//! wherever it needs to hold. `alpha` picks the glue width; two different
//! `alpha` values give the independent calibration pair used by the
//! norm-equivalence harness.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use crate::spectral::SpectralOperator;

/// Minimum allowed squared-sum value on the spectrum before the dual family
/// is declared degenerate.
pub const DEGENERATE_S_THRESHOLD: f64 = 1e-8;

/// C-infinity monotone step: 0 for u <= 0, 1 for u >= 1.
pub fn smooth_step(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / u).exp();
    let b = (-1.0 / (1.0 - u)).exp();
    a / (a + b)
}

/// 1 for x <= plateau, 0 for x >= zero, log-symmetric bridge between.
/// Exact 1.0/0.0 on the closed plateau/tail — callers rely on that.
pub fn glue_down(x: f64, plateau: f64, zero: f64) -> f64 {
    debug_assert!(0.0 < plateau && plateau < zero);
    if x <= plateau {
        return 1.0;
    }
    if x >= zero {
        return 0.0;
    }
    smooth_step((zero.ln() - x.ln()) / (zero.ln() - plateau.ln()))
}

/// 0 for x <= zero, 1 for x >= plateau (rising glue).
pub fn glue_up(x: f64, zero: f64, plateau: f64) -> f64 {
    debug_assert!(0.0 < zero && zero < plateau);
    if x <= zero {
        return 0.0;
    }
    if x >= plateau {
        return 1.0;
    }
    smooth_step((x.ln() - zero.ln()) / (plateau.ln() - zero.ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpPair {
    pub delta: f64,
    pub beta0: f64,
    /// glue-width parameter in [0, 3/4): the bridge plateau extends to D^alpha
    pub alpha: f64,
}

impl BumpPair {
    pub fn new(delta: f64, beta0: f64, alpha: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidDelta(delta));
        }
        if beta0 < 2.0 {
            return Err(Error::InvalidParams(format!("beta0 must be >= 2, got {beta0}")));
        }
        if !(0.0..0.75).contains(&alpha) {
            return Err(Error::InvalidParams(format!("alpha must lie in [0, 0.75), got {alpha}")));
        }
        Ok(Self { delta, beta0, alpha })
    }

    /// Dilation step D = delta^(-beta0/2) > 1.
    pub fn dilation(&self) -> f64 {
        self.delta.powf(-self.beta0 / 2.0)
    }

    /// Low-pass profile; a smooth function of s^2, supported on [0, D].
    pub fn phi0(&self, s: f64) -> f64 {
        let d = self.dilation();
        if s <= 0.0 {
            return 1.0;
        }
        let x = s * s;
        let plateau = d.powf(2.0 * self.alpha); // a^2 with a = D^alpha
        glue_down(x, plateau.max(1.0), d * d)
    }

    /// Band profile Phi(s) = Phi0(s) - Phi0(D s), supported in [a/D, D].
    pub fn phi(&self, s: f64) -> f64 {
        self.phi0(s) - self.phi0(self.dilation() * s)
    }

    /// Level-j profile: Phi0 at j = 0, Phi(delta^(j beta0/2) s) for j >= 1.
    pub fn phi_level(&self, j: usize, s: f64) -> f64 {
        if j == 0 {
            self.phi0(s)
        } else {
            self.phi(s / self.dilation().powi(j as i32))
        }
    }

    /// Lower-bound certificate for the squared sum: S >= c^2 with c = 1/sqrt(2).
    /// Adjacent profiles telescope (g and 1-g on every overlap), so the
    /// pointwise minimum of S is exactly 1/2, attained where g = 1/2.
    pub fn certificate_c(&self) -> f64 {
        std::f64::consts::FRAC_1_SQRT_2
    }

    /// Squared sum S(s) = Phi0^2 + sum_{j>=1} Phi_j^2 (only the finitely many
    /// levels whose support reaches s contribute). S >= c^2 = 1/2 everywhere.
    pub fn squared_sum(&self, s: f64) -> f64 {
        let d = self.dilation();
        let mut total = self.phi0(s).powi(2);
        if s > 0.0 {
            let t = s.ln() / d.ln();
            let hi = (t.ceil() as i64 + 2).max(1);
            for j in 1..=hi {
                let v = self.phi(s / d.powi(j as i32));
                total += v * v;
            }
        }
        total
    }

    /// Dual level profile Phi_j / S.
    pub fn dual_level(&self, j: usize, s: f64) -> f64 {
        let p = self.phi_level(j, s);
        if p == 0.0 {
            return 0.0; // keeps duals exactly band-limited
        }
        p / self.squared_sum(s)
    }

    /// Smallest j such that the level-j band misses the whole spectrum:
    /// delta^(j beta0 / 2) sqrt_lam_max < delta^(beta0/2).
    pub fn j_max_for(&self, sqrt_lam_max: f64) -> usize {
        if sqrt_lam_max <= 0.0 {
            return 0;
        }
        let d = self.dilation();
        let mut j: i64 = 0;
        while !(sqrt_lam_max < d.powi(j as i32 - 1)) {
            j += 1;
            if j > 10_000 {
                break; // unreachable for sane inputs
            }
        }
        j.max(0) as usize
    }

    /// Max deviation of Phi0 + sum_j Phi_j from 1 on a uniform scan of
    /// [0, hi] with `points` samples.
    pub fn partition_scan(&self, hi: f64, points: usize) -> f64 {
        let d = self.dilation();
        let levels = ((hi.max(1.0).ln() / d.ln()).ceil() as usize) + 3;
        let mut worst = 0.0f64;
        for i in 0..points {
            let s = hi * (i as f64) / ((points - 1) as f64);
            let mut total = self.phi0(s);
            for j in 1..=levels {
                total += self.phi(s / d.powi(j as i32));
            }
            worst = worst.max((total - 1.0).abs());
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// calibration bound to a spectrum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LPCalibration {
    pub op: SpectralOperator,
    pub bumps: BumpPair,
    pub j_max: usize,
    /// materialized band kernels M_j = Phi_j(sqrt L), j = 0..=j_max
    pub level_ops: Vec<Array2<f64>>,
    /// dual band kernels
    pub dual_ops: Vec<Array2<f64>>,
    /// min of the squared sum over the spectrum
    pub min_s_on_spectrum: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrfReport {
    /// max over eigenvalues of |sum_j dual_j * Phi_j - 1|
    pub multiplier_residual: f64,
    /// power-iteration estimate of || sum_j Mdual_j M_j - Id || on L^2(mu)
    pub op_norm_residual: f64,
    /// worst relative l2(mu) residual over the random-vector battery
    pub battery_residual: f64,
    pub battery_size: usize,
}

pub fn build_calibration(
    op: &SpectralOperator,
    delta: f64,
    beta0: f64,
    alpha: f64,
) -> Result<LPCalibration> {
    let bumps = BumpPair::new(delta, beta0, alpha)?;
    let sqrt_max = op.lambda_max().sqrt();
    let j_max = bumps.j_max_for(sqrt_max);
    build_with_levels(op, bumps, j_max)
}

/// Calibration with an explicit top level — used by diagnostics to observe
/// the residual left by dropping bands.
pub fn build_with_levels(
    op: &SpectralOperator,
    bumps: BumpPair,
    j_hi: usize,
) -> Result<LPCalibration> {
    let mut min_s = f64::INFINITY;
    for &s in op.sqrt_eigenvalues() {
        min_s = min_s.min(bumps.squared_sum(s));
    }
    if min_s < DEGENERATE_S_THRESHOLD {
        return Err(Error::DegenerateLowerBound { min_s, threshold: DEGENERATE_S_THRESHOLD });
    }
    let mut level_ops = Vec::with_capacity(j_hi + 1);
    let mut dual_ops = Vec::with_capacity(j_hi + 1);
    for j in 0..=j_hi {
        level_ops.push(op.apply_profile(|s| bumps.phi_level(j, s)));
        dual_ops.push(op.apply_profile(|s| bumps.dual_level(j, s)));
    }
    Ok(LPCalibration {
        op: op.clone(),
        bumps,
        j_max: j_hi,
        level_ops,
        dual_ops,
        min_s_on_spectrum: min_s,
    })
}

impl LPCalibration {
    /// Band application M_j f through the spectral side (no kernel product).
    pub fn band_apply(&self, j: usize, f: &Array1<f64>) -> Array1<f64> {
        self.op.apply_profile_to(|s| self.bumps.phi_level(j, s), f)
    }

    pub fn dual_band_apply(&self, j: usize, f: &Array1<f64>) -> Array1<f64> {
        self.op.apply_profile_to(|s| self.bumps.dual_level(j, s), f)
    }

    /// Level kernel, exact zero beyond j_max.
    pub fn level_op(&self, j: usize) -> Array2<f64> {
        if j <= self.j_max {
            self.level_ops[j].clone()
        } else {
            Array2::zeros((self.op.n(), self.op.n()))
        }
    }

    pub fn verify_crf(&self, battery_size: usize, seed: u64) -> CrfReport {
        use rand::{Rng, SeedableRng};
        let n = self.op.n();
        // multiplier-side residual at the eigenvalues
        let mut mult = 0.0f64;
        for &s in self.op.sqrt_eigenvalues() {
            let mut total = 0.0;
            for j in 0..=self.j_max {
                total += self.bumps.dual_level(j, s) * self.bumps.phi_level(j, s);
            }
            mult = mult.max((total - 1.0).abs());
        }
        // kernel-side residual operator
        let mut err = Array2::zeros((n, n));
        for j in 0..=self.j_max {
            err = err + self.op.compose_kernels(&self.dual_ops[j], &self.level_ops[j]);
        }
        err = err - self.op.identity_kernel();
        let op_norm = self.op.kernel_op_norm(&err, 50);
        // battery of random vectors
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..battery_size {
            let f = Array1::from_iter((0..n).map(|_| rng.gen_range(-1.0..1.0f64)));
            let rf = self.op.kernel_action(&err, &f);
            let denom = self.op.l2_norm(&f);
            if denom > 0.0 {
                worst = worst.max(self.op.l2_norm(&rf) / denom);
            }
        }
        CrfReport {
            multiplier_residual: mult,
            op_norm_residual: op_norm,
            battery_residual: worst,
            battery_size,
        }
    }
}
