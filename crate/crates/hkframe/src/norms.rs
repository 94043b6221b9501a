//! Mixed-norm evaluators over the cube hierarchy: Besov-type and
//! Triebel–Lizorkin-type band norms plus their Peetre-maximal and
//! heat-semigroup counterparts.
//!
//! Everything reduces to one pair of cores over a list of level functions
//! `g_j` (j = 0, 1, ...):
//!
//! * family `B`: `sup_Q |Q|^-tau (sum_{j >= max(k,0)} [int_Q |g_j|^p dmu]^{q/p})^{1/q}`
//! * family `F`: the same with the j-sum inside the cube integral.
//!
//! The sup runs over all cubes `Q` at every requested level `k` of the
//! chosen range. `p` or `q` = infinity turns the corresponding sum into a
//! max, integrals are mu-weighted sums, and both families evaluate through
//! the identical code path when `p = q`, so their equality there is exact by
//! construction rather than up to rounding.
//!
//! Requested levels may sit outside the physical cube range: the partition
//! is then the clamped one while the level cutoff `max(k,0)` still uses the
//! requested `k`. Extending the requested range further adds no new suprema
//! (tests prove this by enumeration), which keeps the finite range honest.

use std::collections::BTreeMap;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::LPCalibration;
use crate::cubes::CubeSystem;
use crate::error::{Error, Result};
use crate::space::MetricMeasureSpace;
use crate::spectral::SpectralOperator;

/// Hard cap on adaptively extended heat-profile level lists.
pub const HEAT_LEVEL_CAP: usize = 500;

/// Relative sup-norm threshold below which trailing heat levels are dropped
/// (after three consecutive negligible levels).
pub const HEAT_TAIL_REL: f64 = 1e-14;

/// Octaves spanned by the time quadrature of the continuous heat norm. The
/// range `[t_max 2^-32, t_max]` is fixed so refining points-per-octave never
/// moves the integration window.
pub const HEAT_QUAD_OCTAVES: f64 = 32.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    B,
    F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// level j weighted by the scale factor delta^(-j s)
    Plain,
    /// level j weighted pointwise by |B(x, delta^j)|^(-s/d)
    Tilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRangePolicy {
    /// requested levels span the physical range (floored at 0 on the left)
    #[default]
    Full,
    /// requested levels start at 0
    NonnegativeOnly,
}

/// Parameter bundle for one function space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceParams {
    pub s: f64,
    pub tau: f64,
    #[serde(with = "exponent")]
    pub p: f64,
    #[serde(with = "exponent")]
    pub q: f64,
    pub family: Family,
    pub variant: Variant,
    #[serde(default)]
    pub k_range_policy: KRangePolicy,
}

/// Serde adapter for exponents in (0, inf]: finite values round-trip as
/// numbers, infinity as the string "inf" (JSON has no infinity literal).
pub(crate) mod exponent {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            ser.serialize_f64(*v)
        } else {
            ser.serialize_str("inf")
        }
    }

    struct ExpVisitor;

    impl Visitor<'_> for ExpVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            write!(f, "a number or the string \"inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
                other => other.parse::<f64>().map_err(de::Error::custom),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        de.deserialize_any(ExpVisitor)
    }
}

impl SpaceParams {
    pub fn new(s: f64, tau: f64, p: f64, q: f64, family: Family, variant: Variant) -> Self {
        SpaceParams {
            s,
            tau,
            p,
            q,
            family,
            variant,
            k_range_policy: KRangePolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: KRangePolicy) -> Self {
        self.k_range_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) {
            return Err(Error::InvalidParams(format!("p must be in (0, inf], got {}", self.p)));
        }
        if !(self.q > 0.0) {
            return Err(Error::InvalidParams(format!("q must be in (0, inf], got {}", self.q)));
        }
        if !self.s.is_finite() {
            return Err(Error::InvalidParams(format!("s must be finite, got {}", self.s)));
        }
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::InvalidParams(format!("tau must be >= 0, got {}", self.tau)));
        }
        if self.family == Family::F && self.p.is_infinite() {
            return Err(Error::InvalidParams(
                "family F requires p < inf; p = inf only pairs with family B".into(),
            ));
        }
        Ok(())
    }
}

/// Where and how the outer supremum was attained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormBreakdown {
    pub value: f64,
    /// (requested level k, cube index) achieving the supremum; None when the
    /// value is zero
    pub argmax_cube: Option<(i64, usize)>,
    /// cumulative value at the argmax cube with the inner sums truncated to
    /// levels <= j; the last entry reproduces `value`
    pub per_level_terms: Vec<f64>,
}

fn zero_breakdown(len: usize) -> NormBreakdown {
    NormBreakdown {
        value: 0.0,
        argmax_cube: None,
        per_level_terms: vec![0.0; len],
    }
}

/// Requested-k range for a policy. The left end is floored at 0 so the
/// nonnegative range is always a sub-range of the full one.
pub fn requested_k_range(policy: KRangePolicy, cubes: &CubeSystem) -> (i64, i64) {
    match policy {
        KRangePolicy::Full => (cubes.k_min.min(0), cubes.k_max),
        KRangePolicy::NonnegativeOnly => (0, cubes.k_max.max(0)),
    }
}

/// mu-weighted L^p over a member set; p = inf is the max.
fn lp_members(members: &[usize], mu: &Array1<f64>, g: &Array1<f64>, p: f64) -> f64 {
    if p.is_infinite() {
        members.iter().fold(0.0, |acc, &x| acc.max(g[x].abs()))
    } else {
        members
            .iter()
            .map(|&x| g[x].abs().powf(p) * mu[x])
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// Inner core on one cube for levels j in [j_lo, j_hi]. When p = q both
/// families share the pointwise path, so their values coincide bit for bit.
fn cube_core(
    family: Family,
    p: f64,
    q: f64,
    members: &[usize],
    mu: &Array1<f64>,
    levels: &[Array1<f64>],
    j_lo: usize,
    j_hi: usize,
) -> f64 {
    if j_lo > j_hi || members.is_empty() {
        return 0.0;
    }
    let pointwise = family == Family::F || p == q;
    if pointwise {
        let stack = |x: usize| -> f64 {
            if q.is_infinite() {
                (j_lo..=j_hi).fold(0.0f64, |acc, j| acc.max(levels[j][x].abs()))
            } else {
                (j_lo..=j_hi)
                    .map(|j| levels[j][x].abs().powf(q))
                    .sum::<f64>()
                    .powf(1.0 / q)
            }
        };
        if p.is_infinite() {
            members.iter().fold(0.0, |acc, &x| acc.max(stack(x)))
        } else {
            members
                .iter()
                .map(|&x| stack(x).powf(p) * mu[x])
                .sum::<f64>()
                .powf(1.0 / p)
        }
    } else if q.is_infinite() {
        (j_lo..=j_hi).fold(0.0, |acc, j| acc.max(lp_members(members, mu, &levels[j], p)))
    } else {
        (j_lo..=j_hi)
            .map(|j| lp_members(members, mu, &levels[j], p).powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }
}

fn cube_measure_of(members: &[usize], mu: &Array1<f64>) -> f64 {
    members.iter().map(|&x| mu[x]).sum()
}

/// Mixed norm over an explicit requested-k range; the public entry points
/// derive the range from the policy. Exposed at crate level so tests can
/// prove that extending the range changes nothing.
pub(crate) fn mixed_norm_over_range(
    levels: &[Array1<f64>],
    params: &SpaceParams,
    ctx: &NormContext,
    k_lo: i64,
    k_hi: i64,
) -> Result<NormBreakdown> {
    params.validate()?;
    let n = ctx.space.n();
    for g in levels {
        if g.len() != n {
            return Err(Error::InvalidParams(format!(
                "level function has {} entries on a {n}-point space",
                g.len()
            )));
        }
    }
    if levels.is_empty() || k_hi < k_lo {
        return Ok(zero_breakdown(levels.len()));
    }
    let mu = ctx.space.mu_vec();
    let ks: Vec<i64> = (k_lo..=k_hi).collect();
    // deterministic: per-k bests are folded in ascending k order afterwards
    let per_k: Vec<(f64, usize)> = ks
        .par_iter()
        .map(|&k| {
            let part = ctx.cubes.level(k);
            let j_lo = k.max(0) as usize;
            let mut best = (0.0f64, 0usize);
            if j_lo < levels.len() {
                for (ci, cube) in part.cubes.iter().enumerate() {
                    let qm = cube_measure_of(&cube.members, mu);
                    let v = qm.powf(-params.tau)
                        * cube_core(
                            params.family,
                            params.p,
                            params.q,
                            &cube.members,
                            mu,
                            levels,
                            j_lo,
                            levels.len() - 1,
                        );
                    if v > best.0 {
                        best = (v, ci);
                    }
                }
            }
            best
        })
        .collect();
    let mut value = 0.0;
    let mut argmax = None;
    for (i, &(v, ci)) in per_k.iter().enumerate() {
        if v > value {
            value = v;
            argmax = Some((ks[i], ci));
        }
    }
    let per_level_terms = match argmax {
        None => vec![0.0; levels.len()],
        Some((k, ci)) => {
            let cube = &ctx.cubes.level(k).cubes[ci];
            let qm = cube_measure_of(&cube.members, mu);
            let j_lo = k.max(0) as usize;
            (0..levels.len())
                .map(|j| {
                    if j < j_lo {
                        0.0
                    } else {
                        qm.powf(-params.tau)
                            * cube_core(
                                params.family,
                                params.p,
                                params.q,
                                &cube.members,
                                mu,
                                levels,
                                j_lo,
                                j,
                            )
                    }
                })
                .collect()
        }
    };
    Ok(NormBreakdown {
        value,
        argmax_cube: argmax,
        per_level_terms,
    })
}

/// Geometry bundle shared by every norm evaluator.
#[derive(Debug, Clone, Copy)]
pub struct NormContext<'a> {
    pub space: &'a MetricMeasureSpace,
    pub cubes: &'a CubeSystem,
    /// dimension used in ball-normalized exponents and Peetre thresholds
    pub dim_d: f64,
    /// walk-dimension exponent of the heat profiles
    pub beta0: f64,
}

impl<'a> NormContext<'a> {
    /// Context with the doubling dimension read off the geometry report and
    /// the default walk exponent 2.
    pub fn new(space: &'a MetricMeasureSpace, cubes: &'a CubeSystem) -> Self {
        let d = space.geometry_report().dim_d;
        NormContext {
            space,
            cubes,
            dim_d: d,
            beta0: 2.0,
        }
    }

    pub fn with_dim(mut self, d: f64) -> Self {
        self.dim_d = d;
        self
    }

    pub fn with_beta0(mut self, beta0: f64) -> Self {
        self.beta0 = beta0;
        self
    }
}

/// Mixed norm of pre-weighted level functions with breakdown.
pub fn mixed_norm(
    levels: &[Array1<f64>],
    params: &SpaceParams,
    ctx: &NormContext,
) -> Result<NormBreakdown> {
    let (k_lo, k_hi) = requested_k_range(params.k_range_policy, ctx.cubes);
    mixed_norm_over_range(levels, params, ctx, k_lo, k_hi)
}

/// Mixed sequence norm of raw level functions (no band transform, no
/// weights): the building block the band/heat norms decorate.
pub fn lp_tau_seq_norm(
    levels: &[Array1<f64>],
    params: &SpaceParams,
    ctx: &NormContext,
) -> Result<f64> {
    mixed_norm(levels, params, ctx).map(|b| b.value)
}

/// In-place level weight: scale factor (plain) or pointwise ball-volume
/// normalization (tilde).
fn weight_level(g: &mut Array1<f64>, j: usize, params: &SpaceParams, ctx: &NormContext) -> Result<()> {
    match params.variant {
        Variant::Plain => {
            let w = ctx.cubes.delta.powf(-(j as f64) * params.s);
            g.mapv_inplace(|v| v * w);
        }
        Variant::Tilde => {
            if !(ctx.dim_d > 0.0) {
                return Err(Error::InvalidParams(
                    "ball-normalized weights need dim_d > 0".into(),
                ));
            }
            let r = ctx.cubes.delta.powi(j as i32);
            let e = -params.s / ctx.dim_d;
            for x in 0..g.len() {
                g[x] *= ctx.space.ball_measure(x, r).powf(e);
            }
        }
    }
    Ok(())
}

fn band_levels(f: &Array1<f64>, calib: &LPCalibration, params: &SpaceParams, ctx: &NormContext) -> Result<Vec<Array1<f64>>> {
    let mut out = Vec::with_capacity(calib.j_max + 1);
    for j in 0..=calib.j_max {
        let mut g = calib.band_apply(j, f);
        weight_level(&mut g, j, params, ctx)?;
        out.push(g);
    }
    Ok(out)
}

/// Besov-type norm: weighted band functions through the `B` core.
pub fn besov_type_norm(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    params: &SpaceParams,
) -> Result<NormBreakdown> {
    if params.family != Family::B {
        return Err(Error::InvalidParams("besov_type_norm requires family B".into()));
    }
    params.validate()?;
    let levels = band_levels(f, calib, params, ctx)?;
    mixed_norm(&levels, params, ctx)
}

/// Triebel–Lizorkin-type norm: weighted band functions through the `F` core.
pub fn triebel_type_norm(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    params: &SpaceParams,
) -> Result<NormBreakdown> {
    if params.family != Family::F {
        return Err(Error::InvalidParams("triebel_type_norm requires family F".into()));
    }
    params.validate()?;
    let levels = band_levels(f, calib, params, ctx)?;
    mixed_norm(&levels, params, ctx)
}

/// Endpoint norm at p = inf: evaluated as the q = p, tau = 1/q member, whose
/// two family forms coincide; at q = inf this collapses to the weighted
/// double sup, which the `B` core handles.
pub fn endpoint_finfty_norm(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    s: f64,
    q: f64,
) -> Result<f64> {
    let tau = if q.is_infinite() { 0.0 } else { 1.0 / q };
    let params = SpaceParams::new(s, tau, q, q, Family::B, Variant::Plain);
    params.validate()?;
    let levels = band_levels(f, calib, &params, ctx)?;
    mixed_norm(&levels, &params, ctx).map(|b| b.value)
}

// ---------------------------------------------------------------------------
// Peetre maximal machinery
// ---------------------------------------------------------------------------

/// Peetre maximal function of the level-`ell` band:
/// `max_y |B(y, delta^ell)|^gamma |M_ell f(y)| / (1 + delta^-ell rho(x,y))^a`.
pub fn peetre_maximal(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ell: usize,
    a: f64,
    gamma: f64,
    ctx: &NormContext,
) -> Array1<f64> {
    let mf = calib.band_apply(ell, f);
    let n = ctx.space.n();
    let r = ctx.cubes.delta.powi(ell as i32);
    let rinv = ctx.cubes.delta.powi(-(ell as i32));
    let weighted: Vec<f64> = (0..n)
        .map(|y| ctx.space.ball_measure(y, r).powf(gamma) * mf[y].abs())
        .collect();
    Array1::from_iter((0..n).map(|x| {
        (0..n).fold(0.0f64, |acc, y| {
            acc.max(weighted[y] / (1.0 + rinv * ctx.space.dist(x, y)).powf(a))
        })
    }))
}

/// Decay-rate threshold above which the Peetre-maximal norm is proven
/// comparable to the band norm: `d (tau + 1/p)` for B, `d (tau + 1/(p^q))`
/// for F (`1/inf = 0`).
pub fn peetre_threshold_a(params: &SpaceParams, d: f64) -> f64 {
    match params.family {
        Family::B => d * (params.tau + 1.0 / params.p),
        Family::F => d * (params.tau + 1.0 / params.p.min(params.q)),
    }
}

/// Mixed norm of the Peetre maximal functions. Plain variant: gamma = 0 and
/// the usual scale weights; tilde variant: gamma = -s/d baked into the
/// maximal function, no outer weight. Choosing `a` below
/// `peetre_threshold_a` is allowed (the evaluator stays total); only the
/// comparability guarantee is void there.
pub fn peetre_norm(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    params: &SpaceParams,
    a: f64,
) -> Result<f64> {
    params.validate()?;
    let gamma = match params.variant {
        Variant::Plain => 0.0,
        Variant::Tilde => {
            if !(ctx.dim_d > 0.0) {
                return Err(Error::InvalidParams(
                    "ball-normalized weights need dim_d > 0".into(),
                ));
            }
            -params.s / ctx.dim_d
        }
    };
    let levels: Vec<Array1<f64>> = (0..=calib.j_max)
        .map(|j| {
            let mut pj = peetre_maximal(f, calib, j, a, gamma, ctx);
            if params.variant == Variant::Plain {
                let w = ctx.cubes.delta.powf(-(j as f64) * params.s);
                pj.mapv_inplace(|v| v * w);
            }
            pj
        })
        .collect();
    mixed_norm(&levels, params, ctx).map(|b| b.value)
}

/// Hardy–Littlewood-style maximal operator over the metric ball family:
/// `(M |g|^r)^{1/r}` with `M h(x) = max { avg_B h : x in B }`, the max over
/// balls `B(y, rho)` with `rho` from the radius grid.
pub fn hl_maximal(g: &Array1<f64>, space: &MetricMeasureSpace, r: f64) -> Array1<f64> {
    assert!(r > 0.0, "maximal-function exponent must be positive");
    let n = space.n();
    let grid = space.radius_grid();
    let gr: Vec<f64> = g.iter().map(|v| v.abs().powf(r)).collect();
    let mut out = vec![0.0f64; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for y in 0..n {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| {
            space
                .dist(y, a)
                .partial_cmp(&space.dist(y, b))
                .unwrap()
                .then(a.cmp(&b))
        });
        // prefix sums over the distance-sorted row
        let mut pref_mu = Vec::with_capacity(n + 1);
        let mut pref_g = Vec::with_capacity(n + 1);
        pref_mu.push(0.0);
        pref_g.push(0.0);
        for &z in &order {
            pref_mu.push(pref_mu.last().unwrap() + space.mu(z));
            pref_g.push(pref_g.last().unwrap() + gr[z] * space.mu(z));
        }
        // ball averages per grid radius, then best average over all radii
        // at least a given index
        let avgs: Vec<f64> = grid
            .iter()
            .map(|&rho| {
                let c = order.partition_point(|&z| space.dist(y, z) < rho);
                if c == 0 {
                    0.0
                } else {
                    pref_g[c] / pref_mu[c]
                }
            })
            .collect();
        let mut best_from = avgs.clone();
        for i in (0..best_from.len().saturating_sub(1)).rev() {
            best_from[i] = best_from[i].max(best_from[i + 1]);
        }
        for &z in &order {
            let i0 = grid.partition_point(|&rho| rho <= space.dist(y, z));
            if i0 < best_from.len() {
                out[z] = out[z].max(best_from[i0]);
            }
        }
    }
    Array1::from_iter(out.into_iter().map(|v| v.powf(1.0 / r)))
}

// ---------------------------------------------------------------------------
// heat-semigroup norms
// ---------------------------------------------------------------------------

fn check_heat_m(m: usize, params: &SpaceParams, beta0: f64) -> Result<()> {
    if (m as f64) * beta0 <= params.s {
        return Err(Error::InvalidM {
            m,
            s: params.s,
            beta0,
        });
    }
    Ok(())
}

/// Discrete heat-scale norm: the band functions are replaced by
/// `h_0 = e^{-L} f` and `h_j = (t_j L)^m e^{-t_j L} f`, `t_j = delta^(j beta0)`.
/// The heat profiles never vanish exactly, so the level list extends past
/// the spectral cutoff until three consecutive levels are negligible.
pub fn heat_norm_discrete(
    f: &Array1<f64>,
    op: &SpectralOperator,
    ctx: &NormContext,
    params: &SpaceParams,
    m: usize,
) -> Result<f64> {
    params.validate()?;
    check_heat_m(m, params, ctx.beta0)?;
    let coeffs = op.analyze(f);
    let mut levels: Vec<Array1<f64>> = Vec::new();
    let mut top = 0.0f64;
    let mut quiet_run = 0usize;
    for j in 0..=HEAT_LEVEL_CAP {
        let tj = ctx.cubes.delta.powf(ctx.beta0 * j as f64);
        let mut g = Array1::zeros(op.n());
        for (i, &c) in coeffs.iter().enumerate() {
            let lam = op.eigenvalues()[i];
            let w = if j == 0 {
                (-lam).exp()
            } else {
                let z = tj * lam;
                z.powi(m as i32) * (-z).exp()
            };
            if w != 0.0 && c != 0.0 {
                ndarray::Zip::from(&mut g)
                    .and(op.eigenvectors().column(i))
                    .for_each(|gi, &ui| *gi += c * w * ui);
            }
        }
        weight_level(&mut g, j, params, ctx)?;
        let sup = g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        levels.push(g);
        top = top.max(sup);
        if sup <= HEAT_TAIL_REL * top {
            quiet_run += 1;
            if quiet_run >= 3 {
                break;
            }
        } else {
            quiet_run = 0;
        }
    }
    mixed_norm(&levels, params, ctx).map(|b| b.value)
}

/// Split of the continuous-time heat norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatContinuousReport {
    /// boundary + main
    pub value: f64,
    /// sup over coarse cubes (requested k <= 0) of the tau-weighted L^p
    /// average of e^{-L} f
    pub boundary_term: f64,
    /// sup over all requested cubes of the time-integrated profile term
    pub main_term: f64,
    /// quadrature points per cube-level time window
    pub t_points: usize,
    /// whether the integrability hypothesis p >= 1 (and q >= 1 for family F)
    /// held; the value is still computed when it did not
    pub hypothesis_ok: bool,
}

struct TimeGrid {
    ts: Vec<f64>,
    /// trapezoid weights in ln t
    ws: Vec<f64>,
    /// G_t f for each grid time
    gtf: Vec<Array1<f64>>,
}

fn time_grid(
    t_max: f64,
    ppo: usize,
    m: usize,
    beta0: f64,
    op: &SpectralOperator,
    coeffs: &Array1<f64>,
) -> TimeGrid {
    let n_pts = (HEAT_QUAD_OCTAVES as usize) * ppo + 1;
    let du = HEAT_QUAD_OCTAVES * std::f64::consts::LN_2 / (n_pts - 1) as f64;
    let ts: Vec<f64> = (0..n_pts)
        .map(|i| t_max * (-(HEAT_QUAD_OCTAVES * std::f64::consts::LN_2) + i as f64 * du).exp())
        .collect();
    let ws: Vec<f64> = (0..n_pts)
        .map(|i| if i == 0 || i == n_pts - 1 { du / 2.0 } else { du })
        .collect();
    let gtf: Vec<Array1<f64>> = ts
        .par_iter()
        .map(|&t| {
            let tb = t.powf(beta0);
            let weights: Array1<f64> = op
                .eigenvalues()
                .iter()
                .zip(coeffs.iter())
                .map(|(&lam, &c)| {
                    let z = tb * lam;
                    c * z.powi(m as i32) * (-z).exp()
                })
                .collect();
            op.synthesize(&weights)
        })
        .collect();
    TimeGrid { ts, ws, gtf }
}

/// Pointwise time weight h(x, t) = w(x, t) |G_t f(x)| with w = t^-s (plain)
/// or |B(x, t)|^(-s/d) (tilde).
fn time_weighted(
    grid: &TimeGrid,
    i: usize,
    x: usize,
    params: &SpaceParams,
    ctx: &NormContext,
) -> f64 {
    let t = grid.ts[i];
    let g = grid.gtf[i][x].abs();
    match params.variant {
        Variant::Plain => t.powf(-params.s) * g,
        Variant::Tilde => ctx.space.ball_measure(x, t).powf(-params.s / ctx.dim_d) * g,
    }
}

/// Continuous-time heat norm: boundary term plus the log-uniform trapezoid
/// discretization of the time integral over `(0, min(1, delta^k)]` per cube.
pub fn heat_norm_continuous_report(
    f: &Array1<f64>,
    op: &SpectralOperator,
    ctx: &NormContext,
    params: &SpaceParams,
    m: usize,
    t_grid_size: usize,
) -> Result<HeatContinuousReport> {
    params.validate()?;
    check_heat_m(m, params, ctx.beta0)?;
    if t_grid_size == 0 {
        return Err(Error::InvalidParams("t_grid_size must be >= 1".into()));
    }
    if params.variant == Variant::Tilde && !(ctx.dim_d > 0.0) {
        return Err(Error::InvalidParams(
            "ball-normalized weights need dim_d > 0".into(),
        ));
    }
    let hypothesis_ok = params.p >= 1.0 && (params.family == Family::B || params.q >= 1.0);
    let mu = ctx.space.mu_vec();
    let coeffs = op.analyze(f);

    // boundary: tau-weighted L^p averages of e^{-L} f over coarse cubes;
    // the tau weight sits inside the 1/p root here, and washes out entirely
    // in the p = inf (sup) limit
    let e1 = op.apply_profile_to(|s| (-s * s).exp(), f);
    let bweight = |x: usize| -> f64 {
        match params.variant {
            Variant::Plain => 1.0,
            Variant::Tilde => ctx.space.ball_measure(x, 1.0).powf(-params.s / ctx.dim_d),
        }
    };
    let mut boundary = 0.0f64;
    for k in ctx.cubes.k_min.min(0)..=0 {
        for cube in &ctx.cubes.level(k).cubes {
            let v = if params.p.is_infinite() {
                cube.members
                    .iter()
                    .fold(0.0f64, |acc, &x| acc.max(bweight(x) * e1[x].abs()))
            } else {
                let qm = cube_measure_of(&cube.members, mu);
                let integral: f64 = cube
                    .members
                    .iter()
                    .map(|&x| (bweight(x) * e1[x].abs()).powf(params.p) * mu[x])
                    .sum();
                (qm.powf(-params.tau) * integral).powf(1.0 / params.p)
            };
            boundary = boundary.max(v);
        }
    }

    // main term: per requested level, a shared time grid keyed by the
    // window top min(1, delta^k)
    let (k_lo, k_hi) = requested_k_range(params.k_range_policy, ctx.cubes);
    let mut grids: BTreeMap<i64, TimeGrid> = BTreeMap::new();
    let mut main = 0.0f64;
    for k in k_lo..=k_hi {
        let key = k.max(0);
        let grid = grids.entry(key).or_insert_with(|| {
            let t_max = ctx.cubes.delta.powi(key as i32).min(1.0);
            time_grid(t_max, t_grid_size, m, ctx.beta0, op, &coeffs)
        });
        let n_pts = grid.ts.len();
        for cube in &ctx.cubes.level(k).cubes {
            let qm = cube_measure_of(&cube.members, mu);
            let core = if params.family == Family::B {
                // L^p over the cube at each time, then the q-integral in t
                let at_time = |i: usize| -> f64 {
                    if params.p.is_infinite() {
                        cube.members
                            .iter()
                            .fold(0.0f64, |acc, &x| acc.max(time_weighted(grid, i, x, params, ctx)))
                    } else {
                        cube.members
                            .iter()
                            .map(|&x| time_weighted(grid, i, x, params, ctx).powf(params.p) * mu[x])
                            .sum::<f64>()
                            .powf(1.0 / params.p)
                    }
                };
                if params.q.is_infinite() {
                    (0..n_pts).fold(0.0f64, |acc, i| acc.max(at_time(i)))
                } else {
                    (0..n_pts)
                        .map(|i| grid.ws[i] * at_time(i).powf(params.q))
                        .sum::<f64>()
                        .powf(1.0 / params.q)
                }
            } else {
                // q-integral in t at each point, then L^p over the cube
                let at_point = |x: usize| -> f64 {
                    if params.q.is_infinite() {
                        (0..n_pts).fold(0.0f64, |acc, i| acc.max(time_weighted(grid, i, x, params, ctx)))
                    } else {
                        (0..n_pts)
                            .map(|i| grid.ws[i] * time_weighted(grid, i, x, params, ctx).powf(params.q))
                            .sum::<f64>()
                            .powf(1.0 / params.q)
                    }
                };
                cube.members
                    .iter()
                    .map(|&x| at_point(x).powf(params.p) * mu[x])
                    .sum::<f64>()
                    .powf(1.0 / params.p)
            };
            main = main.max(qm.powf(-params.tau) * core);
        }
    }

    Ok(HeatContinuousReport {
        value: boundary + main,
        boundary_term: boundary,
        main_term: main,
        t_points: (HEAT_QUAD_OCTAVES as usize) * t_grid_size + 1,
        hypothesis_ok,
    })
}

/// Value-only entry point for the continuous-time heat norm.
pub fn heat_norm_continuous(
    f: &Array1<f64>,
    op: &SpectralOperator,
    ctx: &NormContext,
    params: &SpaceParams,
    m: usize,
    t_grid_size: usize,
) -> Result<f64> {
    heat_norm_continuous_report(f, op, ctx, params, m, t_grid_size).map(|r| r.value)
}

/// Quasi-triangle constant `2^(max(1/min(p,q,1) - 1, 0) + 1)` valid for both
/// families at the given exponents.
pub fn quasi_triangle_constant(p: f64, q: f64) -> f64 {
    let m = p.min(q).min(1.0);
    2.0f64.powf((1.0 / m - 1.0).max(0.0) + 1.0)
}
