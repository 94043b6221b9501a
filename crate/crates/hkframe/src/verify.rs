//! Claim-verification harness.
//!
//! Nothing here asserts an equivalence constant. Each check *measures* the
//! ratio of two norms over a deterministic battery of test functions and
//! reports the spread (max ratio / min ratio); callers decide what spread is
//! acceptable and whether it stays stable when the space is refined. Guard
//! clauses refuse to run a comparison whose hypotheses the requested
//! parameters violate — a comparison outside its hypotheses would measure
//! noise and report it with a straight face.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array1;
use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{build_calibration, BumpPair, LPCalibration};
use crate::cubes::{CubeSystem, SubcubeGrid};
use crate::error::{Error, Result};
use crate::frame::{analysis, sequence_norm};
use crate::norms::{
    besov_type_norm, endpoint_finfty_norm, heat_norm_continuous, heat_norm_discrete, hl_maximal,
    peetre_maximal, peetre_norm, peetre_threshold_a, triebel_type_norm, Family, KRangePolicy,
    NormContext, SpaceParams, Variant,
};
use crate::space::MetricMeasureSpace;
use crate::spectral::SpectralOperator;

/// Smallest admissible battery.
pub const MIN_BATTERY: usize = 5;

// ---------------------------------------------------------------------------
// function battery
// ---------------------------------------------------------------------------

/// Named test functions, fixed by `(spectrum, seed, size)`.
#[derive(Debug, Clone)]
pub struct FunctionBattery {
    pub names: Vec<String>,
    pub functions: Vec<Array1<f64>>,
    pub seed: u64,
}

impl FunctionBattery {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

fn is_nonzero(f: &Array1<f64>) -> bool {
    f.iter().any(|v| *v != 0.0)
}

/// Deterministic battery mixing structured and generic inputs:
///
/// * the constant function,
/// * for every band that is nonempty on this spectrum, the eigenvector
///   maximizing that band's multiplier (so each such band sees at least one
///   battery member it does not annihilate),
/// * two point indicators (the adversarial case for maximal functions),
/// * heat-smoothed noise at two diffusion times,
/// * random low-band combinations filling up to `size`.
///
/// `size` is a floor: the structural members are always included, so the
/// battery may exceed `size` on spectra with many populated bands. The zero
/// function never appears.
pub fn make_battery(
    op: &SpectralOperator,
    delta: f64,
    beta0: f64,
    seed: u64,
    size: usize,
) -> Result<FunctionBattery> {
    if size < MIN_BATTERY {
        return Err(Error::InvalidParams(format!(
            "battery size must be at least {MIN_BATTERY}, got {size}"
        )));
    }
    let bumps = BumpPair::new(delta, beta0, 0.0)?;
    let n = op.n();
    let sqrt = op.sqrt_eigenvalues();

    let mut names: Vec<String> = Vec::new();
    let mut functions: Vec<Array1<f64>> = Vec::new();

    names.push("const".into());
    functions.push(Array1::ones(n));

    // one eigenvector per populated band, preferring fresh indices
    let j_max = bumps.j_max_for(op.lambda_max().sqrt());
    let mut used: Vec<usize> = Vec::new();
    for j in 0..=j_max {
        let pick = |skip: &[usize]| -> Option<usize> {
            let mut best = None;
            let mut best_v = 0.0;
            for i in 0..n {
                if skip.contains(&i) {
                    continue;
                }
                let v = bumps.phi_level(j, sqrt[i]);
                if v > best_v {
                    best_v = v;
                    best = Some(i);
                }
            }
            best
        };
        let Some(i) = pick(&used).or_else(|| pick(&[])) else {
            continue; // band empty on this spectrum
        };
        used.push(i);
        names.push(format!("band{j}_eig{i}"));
        functions.push(op.eigenvectors().column(i).to_owned());
    }

    let i1 = n / 3;
    let mut i2 = (2 * n) / 3;
    if i2 == i1 {
        i2 = (i1 + 1) % n;
    }
    for i in [i1, i2] {
        let mut e = Array1::zeros(n);
        e[i] = 1.0;
        names.push(format!("point{i}"));
        functions.push(e);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x6865_6174); // "heat"
    for (k, t) in [0.25f64, 1.0].into_iter().enumerate() {
        let f = loop {
            let xi = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..1.0));
            let f = op.apply_profile_to(|s| (-t * s * s).exp(), &xi);
            if is_nonzero(&f) {
                break f;
            }
        };
        names.push(format!("heat{k}"));
        functions.push(f);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let cutoff = n.div_ceil(2).max(2).min(n);
    let mut t = 0usize;
    while functions.len() < size {
        let f = loop {
            let mut c = Array1::zeros(n);
            for i in 0..cutoff {
                c[i] = rng.gen_range(-1.0..1.0);
            }
            let f = op.synthesize(&c);
            if is_nonzero(&f) {
                break f;
            }
        };
        names.push(format!("rand{t}"));
        functions.push(f);
        t += 1;
    }

    debug_assert!(functions.iter().all(is_nonzero));
    Ok(FunctionBattery { names, functions, seed })
}

// ---------------------------------------------------------------------------
// claims
// ---------------------------------------------------------------------------

/// The comparisons the harness knows how to measure. The wire identifiers
/// (`Display`/`FromStr`/serde) are the stable external vocabulary used by the
/// CLI and report files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Claim {
    /// band norm vs. the maximal-function norm built from the same bands
    #[serde(rename = "thm6.2")]
    PeetreMaximal,
    /// band norm vs. the discrete heat-difference norm
    #[serde(rename = "thm6.7")]
    HeatDiscrete,
    /// band norm vs. the continuous-time heat norm
    #[serde(rename = "thm6.8")]
    HeatContinuous,
    /// function norm vs. the sequence norm of its frame coefficients
    #[serde(rename = "thm7.5")]
    FrameSequence,
    /// endpoint norm vs. the matching finite-integrability scale member
    #[serde(rename = "thm7.8")]
    EndpointScale,
    /// large-tau collapse of both families onto a single sup-type space
    #[serde(rename = "prop4.9")]
    UniformCollapse,
    /// full level range vs. nonnegative levels only
    #[serde(rename = "prop4.10")]
    LevelRange,
    /// two parameterizations of the same endpoint sequence space
    #[serde(rename = "prop7.9")]
    SequenceScale,
    /// the same norm under two different admissible bump calibrations
    #[serde(rename = "bump_independence")]
    BumpIndependence,
}

impl Claim {
    pub const ALL: [Claim; 9] = [
        Claim::PeetreMaximal,
        Claim::HeatDiscrete,
        Claim::HeatContinuous,
        Claim::FrameSequence,
        Claim::EndpointScale,
        Claim::UniformCollapse,
        Claim::LevelRange,
        Claim::SequenceScale,
        Claim::BumpIndependence,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Claim::PeetreMaximal => "thm6.2",
            Claim::HeatDiscrete => "thm6.7",
            Claim::HeatContinuous => "thm6.8",
            Claim::FrameSequence => "thm7.5",
            Claim::EndpointScale => "thm7.8",
            Claim::UniformCollapse => "prop4.9",
            Claim::LevelRange => "prop4.10",
            Claim::SequenceScale => "prop7.9",
            Claim::BumpIndependence => "bump_independence",
        }
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Claim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Claim::ALL
            .into_iter()
            .find(|c| c.id() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown claim `{s}`")))
    }
}

/// Parameters for one equivalence run. `default_for` supplies per-claim
/// defaults that satisfy every guard.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimConfig {
    pub s: f64,
    pub tau: f64,
    #[serde(with = "crate::norms::exponent")]
    pub p: f64,
    #[serde(with = "crate::norms::exponent")]
    pub q: f64,
    pub family: Family,
    pub variant: Variant,
    /// maximal-function exponent; `None` picks threshold + 1
    pub a: Option<f64>,
    /// heat moment order; `None` picks the smallest admissible value
    pub m: Option<usize>,
    /// quadrature points per octave for the continuous heat norm
    pub t_grid_size: usize,
    /// the two glue widths compared by `bump_independence`
    pub alpha_pair: (f64, f64),
    pub battery_size: usize,
    pub seed: u64,
}

impl ClaimConfig {
    pub fn default_for(claim: Claim) -> Self {
        let mut c = ClaimConfig {
            s: 0.5,
            tau: 0.25,
            p: 2.0,
            q: 1.5,
            family: Family::B,
            variant: Variant::Plain,
            a: None,
            m: None,
            t_grid_size: 8,
            alpha_pair: (0.0, 0.5),
            battery_size: 20,
            seed: 0,
        };
        match claim {
            Claim::HeatContinuous => {
                c.tau = 0.0;
                c.q = 2.0;
                c.m = Some(1);
            }
            Claim::FrameSequence => {
                c.q = 2.0;
                c.variant = Variant::Tilde;
            }
            Claim::EndpointScale => {
                c.q = 2.0;
            }
            Claim::UniformCollapse => {
                c.tau = 2.0 / c.p;
            }
            Claim::LevelRange => {
                c.tau = 1.0 / c.p;
            }
            Claim::SequenceScale => {
                c.family = Family::F;
                c.variant = Variant::Tilde;
            }
            _ => {}
        }
        c
    }

    fn params(&self) -> SpaceParams {
        SpaceParams::new(self.s, self.tau, self.p, self.q, self.family, self.variant)
    }

    /// Smallest m with m * beta0 > s (saturating at 1 from below).
    fn heat_m(&self, beta0: f64) -> usize {
        self.m
            .unwrap_or_else(|| ((self.s / beta0).floor().max(0.0) as usize) + 1)
    }
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedRatio {
    pub function: String,
    pub value_a: f64,
    pub value_b: f64,
    pub ratio: f64,
}

/// Spread at two resolutions of the same geometry family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementStability {
    pub spread_coarse: f64,
    pub spread_fine: f64,
    /// |fine - coarse| / coarse
    pub relative_change: f64,
}

/// Outcome of one claim on one geometry: per-function norm pairs, their
/// ratio spread, and auxiliary measurements under `notes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub claim: String,
    pub norm_a: String,
    pub norm_b: String,
    pub battery_size: usize,
    pub seed: u64,
    pub ratios: Vec<NamedRatio>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// max_ratio / min_ratio; infinite when any ratio is degenerate
    pub spread: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementStability>,
    pub notes: BTreeMap<String, f64>,
}

impl EquivalenceReport {
    /// Attach the spread measured on a coarser instance of the same family.
    pub fn with_refinement(mut self, spread_coarse: f64) -> Self {
        let relative_change = if spread_coarse > 0.0 && spread_coarse.is_finite() {
            (self.spread - spread_coarse).abs() / spread_coarse
        } else {
            f64::INFINITY
        };
        self.refinement = Some(RefinementStability {
            spread_coarse,
            spread_fine: self.spread,
            relative_change,
        });
        self
    }
}

fn assemble(
    claim: Claim,
    norm_a: String,
    norm_b: String,
    battery: &FunctionBattery,
    pairs: &[(f64, f64)],
    notes: BTreeMap<String, f64>,
) -> EquivalenceReport {
    let ratios: Vec<NamedRatio> = battery
        .names
        .iter()
        .zip(pairs)
        .map(|(name, &(value_a, value_b))| NamedRatio {
            function: name.clone(),
            value_a,
            value_b,
            ratio: value_a / value_b,
        })
        .collect();
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = 0.0f64;
    let mut healthy = !ratios.is_empty();
    for r in &ratios {
        if r.ratio.is_finite() && r.ratio > 0.0 {
            min_ratio = min_ratio.min(r.ratio);
            max_ratio = max_ratio.max(r.ratio);
        } else {
            healthy = false; // a vanished or blown-up norm must not hide in the spread
        }
    }
    let spread = if healthy { max_ratio / min_ratio } else { f64::INFINITY };
    EquivalenceReport {
        claim: claim.id().to_string(),
        norm_a,
        norm_b,
        battery_size: battery.len(),
        seed: battery.seed,
        ratios,
        min_ratio,
        max_ratio,
        spread,
        refinement: None,
        notes,
    }
}

// ---------------------------------------------------------------------------
// the harness
// ---------------------------------------------------------------------------

/// Borrowed artifacts an equivalence run needs.
#[derive(Clone, Copy)]
pub struct VerifyContext<'a> {
    pub space: &'a MetricMeasureSpace,
    pub op: &'a SpectralOperator,
    pub calib: &'a LPCalibration,
    pub cubes: &'a CubeSystem,
    pub grid: &'a SubcubeGrid,
}

impl<'a> VerifyContext<'a> {
    fn norm_ctx(&self) -> NormContext<'a> {
        NormContext::new(self.space, self.cubes).with_beta0(self.calib.bumps.beta0)
    }
}

fn guard(claim: Claim, ok: bool, why: String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::GuardViolation { claim: claim.id().to_string(), why })
    }
}

fn exp_str(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn space_desc(params: &SpaceParams) -> String {
    let fam = match params.family {
        Family::B => "B",
        Family::F => "F",
    };
    let var = match params.variant {
        Variant::Plain => "plain",
        Variant::Tilde => "tilde",
    };
    format!(
        "{fam}[s={}, tau={}, p={}, q={}, {var}]",
        params.s,
        params.tau,
        exp_str(params.p),
        exp_str(params.q)
    )
}

fn band_norm(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    params: &SpaceParams,
) -> Result<f64> {
    match params.family {
        Family::B => besov_type_norm(f, calib, ctx, params).map(|b| b.value),
        Family::F => triebel_type_norm(f, calib, ctx, params).map(|b| b.value),
    }
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    for (rank, &i) in idx.iter().enumerate() {
        out[i] = rank as f64;
    }
    out
}

/// Pearson correlation of the rank vectors; 1 for fewer than two points.
fn rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (n as f64 - 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..n {
        let (da, db) = (ra[i] - mean, rb[i] - mean);
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if va == 0.0 || vb == 0.0 {
        return 1.0;
    }
    cov / (va * vb).sqrt()
}

/// Measure one claim over a deterministic battery.
///
/// Returns `GuardViolation` when the configured parameters fall outside the
/// claim's hypotheses; otherwise the ratios are measured and reported as-is,
/// degenerate values included (an infinite spread is a finding, not an error).
pub fn run_equivalence(
    claim: Claim,
    vctx: &VerifyContext,
    config: &ClaimConfig,
) -> Result<EquivalenceReport> {
    let bumps = &vctx.calib.bumps;
    let battery = make_battery(vctx.op, bumps.delta, bumps.beta0, config.seed, config.battery_size)?;
    let nctx = vctx.norm_ctx();
    let d = nctx.dim_d;
    let beta0 = nctx.beta0;
    let mut notes = BTreeMap::new();

    match claim {
        Claim::PeetreMaximal => {
            let params = config.params();
            params.validate()?;
            let threshold = peetre_threshold_a(&params, d);
            let a = config.a.unwrap_or(threshold + 1.0);
            guard(
                claim,
                a > threshold,
                format!("maximal exponent a = {a} must exceed d(tau + 1/p-type) = {threshold}"),
            )?;
            notes.insert("a".into(), a);
            notes.insert("threshold_a".into(), threshold);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, vctx.calib, &nctx, &params)?,
                        peetre_norm(f, vctx.calib, &nctx, &params, a)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} band norm", space_desc(&params)),
                format!("{} maximal-function norm, a = {a}", space_desc(&params)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::HeatDiscrete => {
            let params = config.params();
            params.validate()?;
            let m = config.heat_m(beta0);
            guard(
                claim,
                (m as f64) * beta0 > params.s,
                format!("moment order m = {m} must satisfy m * beta0 > s = {}", params.s),
            )?;
            notes.insert("m".into(), m as f64);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, vctx.calib, &nctx, &params)?,
                        heat_norm_discrete(f, vctx.op, &nctx, &params, m)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} band norm", space_desc(&params)),
                format!("{} discrete heat norm, m = {m}", space_desc(&params)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::HeatContinuous => {
            let params = config.params();
            params.validate()?;
            guard(
                claim,
                params.p >= 1.0,
                format!("continuous heat comparison needs p >= 1, got p = {}", exp_str(params.p)),
            )?;
            let m = config.heat_m(beta0);
            guard(
                claim,
                (m as f64) * beta0 > params.s,
                format!("moment order m = {m} must satisfy m * beta0 > s = {}", params.s),
            )?;
            notes.insert("m".into(), m as f64);
            notes.insert("t_grid_size".into(), config.t_grid_size as f64);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, vctx.calib, &nctx, &params)?,
                        heat_norm_continuous(f, vctx.op, &nctx, &params, m, config.t_grid_size)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} band norm", space_desc(&params)),
                format!("{} continuous heat norm, m = {m}", space_desc(&params)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::FrameSequence => {
            let params = config.params();
            params.validate()?;
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    let coeffs = analysis(f, vctx.calib, vctx.grid);
                    Ok((
                        sequence_norm(&coeffs, vctx.grid, &nctx, &params)?,
                        band_norm(f, vctx.calib, &nctx, &params)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} sequence norm of frame coefficients", space_desc(&params)),
                format!("{} band norm", space_desc(&params)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::EndpointScale => {
            guard(
                claim,
                config.p.is_finite() && config.p > 0.0,
                format!("endpoint comparison needs finite p > 0, got {}", exp_str(config.p)),
            )?;
            let params = SpaceParams::new(
                config.s,
                1.0 / config.p,
                config.p,
                config.q,
                Family::F,
                Variant::Plain,
            );
            params.validate()?;
            notes.insert("p".into(), config.p);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        triebel_type_norm(f, vctx.calib, &nctx, &params)?.value,
                        endpoint_finfty_norm(f, vctx.calib, &nctx, config.s, config.q)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} band norm", space_desc(&params)),
                format!("endpoint norm [s={}, q={}]", config.s, exp_str(config.q)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::UniformCollapse => {
            guard(
                claim,
                config.tau > 1.0 / config.p,
                format!("collapse needs tau > 1/p, got tau = {} with p = {}", config.tau, exp_str(config.p)),
            )?;
            let pb = SpaceParams::new(config.s, config.tau, config.p, config.q, Family::B, config.variant);
            let pf = SpaceParams::new(config.s, config.tau, config.p, config.q, Family::F, config.variant);
            let shift = config.s + d * config.tau - d / config.p;
            let pt = SpaceParams::new(shift, 0.0, f64::INFINITY, f64::INFINITY, Family::B, config.variant);
            pb.validate()?;
            pf.validate()?;
            pt.validate()?;
            let triples: Vec<(f64, f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, vctx.calib, &nctx, &pb)?,
                        band_norm(f, vctx.calib, &nctx, &pf)?,
                        band_norm(f, vctx.calib, &nctx, &pt)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let nb: Vec<f64> = triples.iter().map(|t| t.0).collect();
            let nf: Vec<f64> = triples.iter().map(|t| t.1).collect();
            let nt: Vec<f64> = triples.iter().map(|t| t.2).collect();
            let spread_of = |x: &[f64], y: &[f64]| {
                let mut lo = f64::INFINITY;
                let mut hi = 0.0f64;
                for (a, b) in x.iter().zip(y) {
                    let r = a / b;
                    if !(r.is_finite() && r > 0.0) {
                        return f64::INFINITY;
                    }
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
                hi / lo
            };
            notes.insert("spread_b_vs_f".into(), spread_of(&nb, &nf));
            notes.insert("spread_f_vs_target".into(), spread_of(&nf, &nt));
            notes.insert("rank_correlation".into(), rank_correlation(&nb, &nt));
            notes.insert(
                "argmax_agrees".into(),
                if argmax(&nb) == argmax(&nt) { 1.0 } else { 0.0 },
            );
            notes.insert("target_s".into(), shift);
            let pairs: Vec<(f64, f64)> = nb.into_iter().zip(nt).collect();
            Ok(assemble(
                claim,
                format!("{} band norm", space_desc(&pb)),
                format!("{} band norm", space_desc(&pt)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::LevelRange => {
            guard(
                claim,
                config.tau >= 1.0 / config.p,
                format!("range restriction needs tau >= 1/p, got tau = {} with p = {}", config.tau, exp_str(config.p)),
            )?;
            let params = config.params();
            params.validate()?;
            let full = params.clone().with_policy(KRangePolicy::Full);
            let nonneg = params.with_policy(KRangePolicy::NonnegativeOnly);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, vctx.calib, &nctx, &full)?,
                        band_norm(f, vctx.calib, &nctx, &nonneg)?,
                    ))
                })
                .collect::<Result<_>>()?;
            // dropping levels can only shrink the norm — exactly, not just up
            // to a constant
            let exact = pairs.iter().all(|&(a, b)| b <= a);
            let measured_c = pairs
                .iter()
                .map(|&(a, b)| a / b)
                .fold(0.0f64, |acc, r| if r.is_finite() { acc.max(r) } else { f64::INFINITY });
            notes.insert("exact_inequality_ok".into(), if exact { 1.0 } else { 0.0 });
            notes.insert("measured_upper_c".into(), measured_c);
            Ok(assemble(
                claim,
                format!("{} band norm, full level range", space_desc(&full)),
                format!("{} band norm, nonnegative levels", space_desc(&nonneg)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::SequenceScale => {
            guard(
                claim,
                config.p.is_finite() && config.p > 0.0 && config.q.is_finite() && config.q > 0.0,
                format!(
                    "sequence-scale comparison needs finite positive p, q, got p = {}, q = {}",
                    exp_str(config.p),
                    exp_str(config.q)
                ),
            )?;
            let pa = SpaceParams::new(config.s, 1.0 / config.q, config.q, config.q, Family::F, Variant::Tilde);
            let pb = SpaceParams::new(config.s, 1.0 / config.p, config.p, config.q, Family::F, Variant::Tilde);
            pa.validate()?;
            pb.validate()?;
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    let coeffs = analysis(f, vctx.calib, vctx.grid);
                    Ok((
                        sequence_norm(&coeffs, vctx.grid, &nctx, &pa)?,
                        sequence_norm(&coeffs, vctx.grid, &nctx, &pb)?,
                    ))
                })
                .collect::<Result<_>>()?;
            let va: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let vb: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            notes.insert(
                "argmax_agrees".into(),
                if argmax(&va) == argmax(&vb) { 1.0 } else { 0.0 },
            );
            Ok(assemble(
                claim,
                format!("{} sequence norm", space_desc(&pa)),
                format!("{} sequence norm", space_desc(&pb)),
                &battery,
                &pairs,
                notes,
            ))
        }
        Claim::BumpIndependence => {
            let (alpha_a, alpha_b) = config.alpha_pair;
            guard(
                claim,
                alpha_a != alpha_b,
                format!("bump comparison needs two distinct glue widths, got {alpha_a} twice"),
            )?;
            let params = config.params();
            params.validate()?;
            let own_a;
            let calib_a = if bumps.alpha == alpha_a {
                vctx.calib
            } else {
                own_a = build_calibration(vctx.op, bumps.delta, bumps.beta0, alpha_a)?;
                &own_a
            };
            let calib_b = build_calibration(vctx.op, bumps.delta, bumps.beta0, alpha_b)?;
            notes.insert("alpha_a".into(), alpha_a);
            notes.insert("alpha_b".into(), alpha_b);
            let pairs: Vec<(f64, f64)> = battery
                .functions
                .par_iter()
                .map(|f| {
                    Ok((
                        band_norm(f, calib_a, &nctx, &params)?,
                        band_norm(f, &calib_b, &nctx, &params)?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok(assemble(
                claim,
                format!("{} band norm, glue width {alpha_a}", space_desc(&params)),
                format!("{} band norm, glue width {alpha_b}", space_desc(&params)),
                &battery,
                &pairs,
                notes,
            ))
        }
    }
}

// ---------------------------------------------------------------------------
// maximal-function domination
// ---------------------------------------------------------------------------

/// Smallest constant C such that, at every level `ell` and every point, the
/// maximal function of the `ell`-band with exponent `a` is at most
/// `C * sum_{j >= ell} delta^((j-ell) nu) M_r(|band_j f|)`, where `M_r` is
/// the Hardy–Littlewood-type maximal operator with exponent `r`.
///
/// The plain-scale form (no ball-volume weight) is checked. The natural
/// choice is `a = nu + d/r`. Returns 0 for the zero function; an infinite
/// value means the majorant vanished somewhere the left side did not, which
/// would falsify the domination outright.
pub fn peetre_domination_check(
    f: &Array1<f64>,
    calib: &LPCalibration,
    ctx: &NormContext,
    a: f64,
    r: f64,
    nu: f64,
) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParams(format!("maximal exponent r must be positive and finite, got {r}")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidParams(format!("decay rate nu must be positive and finite, got {nu}")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParams(format!("maximal exponent a must be positive, got {a}")));
    }
    let delta = calib.bumps.delta;
    let jn = calib.j_max + 1;
    let majorants: Vec<Array1<f64>> = (0..jn)
        .into_par_iter()
        .map(|j| hl_maximal(&calib.band_apply(j, f), ctx.space, r))
        .collect();
    let n = ctx.space.n();
    let mut c = 0.0f64;
    for ell in 0..jn {
        let lhs = peetre_maximal(f, calib, ell, a, 0.0, ctx);
        let mut rhs = Array1::<f64>::zeros(n);
        for (j, m) in majorants.iter().enumerate().skip(ell) {
            let w = delta.powf((j - ell) as f64 * nu);
            rhs += &(m * w);
        }
        for x in 0..n {
            if rhs[x] > 0.0 {
                c = c.max(lhs[x] / rhs[x]);
            } else if lhs[x] > 0.0 {
                return Ok(f64::INFINITY);
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubes::{build_cubes, subcube_grid, SampleRule};
    use crate::generators::{cycle, LaplacianKind};
    use crate::linalg::max_abs;

    const DELTA: f64 = 0.5;
    const BETA0: f64 = 2.0;

    struct Setup {
        space: MetricMeasureSpace,
        op: SpectralOperator,
        calib: LPCalibration,
        cubes: CubeSystem,
        grid: SubcubeGrid,
    }

    impl Setup {
        fn vctx(&self) -> VerifyContext<'_> {
            VerifyContext {
                space: &self.space,
                op: &self.op,
                calib: &self.calib,
                cubes: &self.cubes,
                grid: &self.grid,
            }
        }
    }

    fn cycle_setup(n: usize) -> Setup {
        let g = cycle(n, LaplacianKind::Unnormalized).unwrap();
        let space = g.space().unwrap();
        let op = SpectralOperator::new(&space, &g.laplacian()).unwrap();
        let calib = build_calibration(&op, DELTA, BETA0, 0.0).unwrap();
        let cubes = build_cubes(&space, DELTA, 7).unwrap();
        let grid = subcube_grid(&cubes, &space, 1, 0.1, SampleRule::Center, 7).unwrap();
        Setup { space, op, calib, cubes, grid }
    }

    #[test]
    fn battery_is_deterministic_nonzero_and_band_covering() {
        let s = cycle_setup(16);
        let b1 = make_battery(&s.op, DELTA, BETA0, 3, 20).unwrap();
        let b2 = make_battery(&s.op, DELTA, BETA0, 3, 20).unwrap();
        assert_eq!(b1.names, b2.names);
        assert!(b1.len() >= 20);
        for (f, g) in b1.functions.iter().zip(&b2.functions) {
            assert_eq!(f, g); // bitwise reproducible
        }
        let other = make_battery(&s.op, DELTA, BETA0, 4, 20).unwrap();
        assert!(
            b1.functions
                .iter()
                .zip(&other.functions)
                .any(|(f, g)| f != g),
            "distinct seeds must change the random members"
        );
        for f in &b1.functions {
            assert!(is_nonzero(f));
        }
        // every band that is nonzero on this spectrum is seen by someone
        for j in 0..=s.calib.j_max {
            if max_abs(&s.calib.level_ops[j]) == 0.0 {
                continue;
            }
            let seen = b1
                .functions
                .iter()
                .any(|f| s.calib.band_apply(j, f).iter().any(|v| v.abs() > 1e-12));
            assert!(seen, "band {j} unseen by the battery");
        }
        assert!(matches!(
            make_battery(&s.op, DELTA, BETA0, 3, 4),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn claim_ids_round_trip_through_display_parse_and_serde() {
        for claim in Claim::ALL {
            let id = claim.to_string();
            assert_eq!(id.parse::<Claim>().unwrap(), claim);
            let json = serde_json::to_string(&claim).unwrap();
            assert_eq!(json, format!("\"{id}\""));
            assert_eq!(serde_json::from_str::<Claim>(&json).unwrap(), claim);
        }
        assert!("thm0.0".parse::<Claim>().is_err());
    }

    #[test]
    fn guards_refuse_out_of_range_hypotheses() {
        let s = cycle_setup(12);
        let vctx = s.vctx();

        let mut c = ClaimConfig::default_for(Claim::UniformCollapse);
        c.battery_size = 5;
        c.tau = 1.0 / c.p; // boundary case is outside the hypothesis
        let err = run_equivalence(Claim::UniformCollapse, &vctx, &c).unwrap_err();
        match err {
            Error::GuardViolation { claim, .. } => assert_eq!(claim, "prop4.9"),
            other => panic!("expected guard violation, got {other:?}"),
        }

        let mut c = ClaimConfig::default_for(Claim::HeatDiscrete);
        c.battery_size = 5;
        c.m = Some(0);
        assert!(matches!(
            run_equivalence(Claim::HeatDiscrete, &vctx, &c),
            Err(Error::GuardViolation { .. })
        ));

        let mut c = ClaimConfig::default_for(Claim::HeatContinuous);
        c.battery_size = 5;
        c.p = 0.5;
        c.q = 0.5;
        assert!(matches!(
            run_equivalence(Claim::HeatContinuous, &vctx, &c),
            Err(Error::GuardViolation { .. })
        ));

        let mut c = ClaimConfig::default_for(Claim::PeetreMaximal);
        c.battery_size = 5;
        c.a = Some(0.1);
        assert!(matches!(
            run_equivalence(Claim::PeetreMaximal, &vctx, &c),
            Err(Error::GuardViolation { .. })
        ));

        let mut c = ClaimConfig::default_for(Claim::BumpIndependence);
        c.battery_size = 5;
        c.alpha_pair = (0.25, 0.25);
        assert!(matches!(
            run_equivalence(Claim::BumpIndependence, &vctx, &c),
            Err(Error::GuardViolation { .. })
        ));
    }

    #[test]
    fn equivalence_spreads_are_finite_on_a_small_cycle() {
        let s = cycle_setup(24);
        let vctx = s.vctx();
        for claim in Claim::ALL {
            let mut config = ClaimConfig::default_for(claim);
            config.battery_size = 8;
            let report = run_equivalence(claim, &vctx, &config).unwrap();
            assert_eq!(report.claim, claim.id());
            assert_eq!(report.ratios.len(), report.battery_size);
            assert!(
                report.spread.is_finite() && report.spread >= 1.0,
                "{claim}: spread {}",
                report.spread
            );
            for r in &report.ratios {
                assert!(
                    r.ratio.is_finite() && r.ratio > 0.0,
                    "{claim}/{}: ratio {}",
                    r.function,
                    r.ratio
                );
            }
            match claim {
                Claim::LevelRange => {
                    assert_eq!(report.notes["exact_inequality_ok"], 1.0);
                    assert!(report.notes["measured_upper_c"] >= 1.0);
                }
                Claim::UniformCollapse => {
                    let rc = report.notes["rank_correlation"];
                    assert!((-1.0..=1.0).contains(&rc));
                    assert!(report.notes["spread_b_vs_f"].is_finite());
                    assert!(report.notes["spread_f_vs_target"].is_finite());
                }
                Claim::SequenceScale => {
                    assert!(report.notes.contains_key("argmax_agrees"));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn refinement_stability_records_relative_change() {
        let base = EquivalenceReport {
            claim: "x".into(),
            norm_a: String::new(),
            norm_b: String::new(),
            battery_size: 0,
            seed: 0,
            ratios: vec![],
            min_ratio: 1.0,
            max_ratio: 2.2,
            spread: 2.2,
            refinement: None,
            notes: BTreeMap::new(),
        };
        let r = base.with_refinement(2.0).refinement.unwrap();
        assert!((r.relative_change - 0.1).abs() < 1e-12);
        assert_eq!(r.spread_coarse, 2.0);
        assert_eq!(r.spread_fine, 2.2);
    }

    #[test]
    fn domination_constant_is_zero_for_zero_and_bounds_the_battery() {
        let s = cycle_setup(16);
        let nctx = NormContext::new(&s.space, &s.cubes).with_beta0(BETA0);
        let zero = Array1::zeros(16);
        let (r, nu) = (1.0, 1.0);
        let a = nu + nctx.dim_d / r;
        assert_eq!(
            peetre_domination_check(&zero, &s.calib, &nctx, a, r, nu).unwrap(),
            0.0
        );

        let battery = make_battery(&s.op, DELTA, BETA0, 9, 5).unwrap();
        for (name, f) in battery.names.iter().zip(&battery.functions) {
            let c = peetre_domination_check(f, &s.calib, &nctx, a, r, nu).unwrap();
            assert!(c.is_finite() && c > 0.0, "{name}: C = {c}");
            // re-derive both sides and confirm C actually dominates
            for ell in 0..=s.calib.j_max {
                let lhs = peetre_maximal(f, &s.calib, ell, a, 0.0, &nctx);
                let mut rhs = Array1::<f64>::zeros(16);
                for j in ell..=s.calib.j_max {
                    let m = hl_maximal(&s.calib.band_apply(j, f), &s.space, r);
                    rhs += &(&m * DELTA.powf((j - ell) as f64 * nu));
                }
                for x in 0..16 {
                    assert!(
                        lhs[x] <= c * rhs[x] * (1.0 + 1e-12) + f64::MIN_POSITIVE,
                        "{name}: level {ell}, point {x}"
                    );
                }
            }
        }

        assert!(peetre_domination_check(&zero, &s.calib, &nctx, a, -1.0, nu).is_err());
        assert!(peetre_domination_check(&zero, &s.calib, &nctx, a, r, 0.0).is_err());
    }
}
