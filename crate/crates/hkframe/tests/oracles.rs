//! Independent re-derivations of the library's numerical outputs.
//!
//! Every test here computes its expected values through a second route
//! written straight from the definitions — textbook Floyd–Warshall, the
//! matrix-exponential power series, closed-form spectra, naive triple-loop
//! norms — and compares the optimized implementations against it.

use hkframe::calib::build_calibration;
use hkframe::cubes::{build_cubes, subcube_grid, SampleRule};
use hkframe::frame::{analysis, stopping_functional};
use hkframe::generators::{binary_tree, cycle, gasket, path, torus, LaplacianKind};
use hkframe::norms::{
    besov_type_norm, requested_k_range, triebel_type_norm, Family, KRangePolicy, NormContext,
    SpaceParams, Variant,
};
use hkframe::spectral::SpectralOperator;
use ndarray::{Array1, Array2};
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha20Rng;

const UNNORM: LaplacianKind = LaplacianKind::Unnormalized;

// ---------------------------------------------------------------------------
// shortest paths
// ---------------------------------------------------------------------------

/// Textbook Floyd–Warshall on an undirected weighted edge list.
fn naive_all_pairs(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for &(a, b, w) in edges {
        if w < d[a][b] {
            d[a][b] = w;
            d[b][a] = w;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

#[test]
fn generated_distances_match_textbook_floyd_warshall() {
    let specimens = [
        cycle(8, UNNORM).unwrap(),
        path(5, UNNORM).unwrap(),
        torus(3, 4, UNNORM).unwrap(),
        binary_tree(3, UNNORM).unwrap(),
        gasket(2, UNNORM).unwrap(),
    ];
    for g in &specimens {
        let expect = naive_all_pairs(g.n, &g.edges);
        let got = g.distances();
        for i in 0..g.n {
            for j in 0..g.n {
                assert_eq!(got[(i, j)], expect[i][j], "{} ({i},{j})", g.kind);
            }
        }
    }

    // frozen facts about the smallest generator outputs
    let c8 = &specimens[0];
    for (k, want) in [(0usize, 0.0), (1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0), (5, 3.0), (6, 2.0), (7, 1.0)] {
        assert_eq!(c8.distances()[(0, k)], want);
    }
    let g1 = gasket(1, UNNORM).unwrap();
    assert_eq!(g1.n, 6, "level-1 gasket graph: 3 corners + 3 midpoints");
    assert_eq!(g1.edges.len(), 9);
    let hint = g1.beta0_hint.expect("gasket carries a walk-dimension hint");
    assert!((hint - 5f64.ln() / 2f64.ln()).abs() <= 1e-12, "hint {hint}");
    let p2 = path(2, UNNORM).unwrap();
    assert_eq!(p2.n, 2);
    assert_eq!(p2.distances()[(0, 1)], 1.0);
}

// ---------------------------------------------------------------------------
// spectra
// ---------------------------------------------------------------------------

#[test]
fn cycle_spectra_match_the_closed_form() {
    for n in [8usize, 64] {
        let g = cycle(n, UNNORM).unwrap();
        let op = SpectralOperator::new(&g.space().unwrap(), &g.laplacian()).unwrap();
        let mut expect: Vec<f64> = (0..n)
            .map(|k| 2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos())
            .collect();
        expect.sort_by(f64::total_cmp);
        for (i, want) in expect.iter().enumerate() {
            assert!(
                (op.eigenvalues()[i] - want).abs() <= 1e-9,
                "n={n} i={i}: {} vs {want}",
                op.eigenvalues()[i]
            );
        }
    }
    // 8-point case, fully explicit: 0, (2-sqrt2) x2, 2 x2, (2+sqrt2) x2, 4
    let g = cycle(8, UNNORM).unwrap();
    let op = SpectralOperator::new(&g.space().unwrap(), &g.laplacian()).unwrap();
    let r2 = std::f64::consts::SQRT_2;
    let expect = [0.0, 2.0 - r2, 2.0 - r2, 2.0, 2.0, 2.0 + r2, 2.0 + r2, 4.0];
    for (i, want) in expect.iter().enumerate() {
        assert!((op.eigenvalues()[i] - want).abs() <= 1e-10);
    }
}

// ---------------------------------------------------------------------------
// heat semigroup
// ---------------------------------------------------------------------------

/// e^{-tL} summed term by term; 40 terms is far past machine precision for
/// the spectra used here (|t lambda| <= 8).
fn naive_matrix_exp(l: &Array2<f64>, t: f64) -> Array2<f64> {
    let n = l.nrows();
    let mut sum = Array2::eye(n);
    let mut term = Array2::eye(n);
    for k in 1..=40 {
        term = term.dot(l) * (-t / k as f64);
        sum += &term;
    }
    sum
}

#[test]
fn heat_kernel_matches_the_power_series() {
    for g in [cycle(8, UNNORM).unwrap(), gasket(1, UNNORM).unwrap()] {
        let space = g.space().unwrap();
        let l = g.laplacian();
        let op = SpectralOperator::new(&space, &l).unwrap();
        for t in [0.25, 1.0] {
            // the kernel acts through the measure: action matrix = K diag(mu)
            let mut action = op.heat_kernel(t);
            for j in 0..space.n() {
                let w = space.mu(j);
                for i in 0..space.n() {
                    action[(i, j)] *= w;
                }
            }
            let expect = naive_matrix_exp(&l, t);
            let worst = (&action - &expect)
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(worst <= 1e-9, "{} t={t}: max abs diff {worst}", g.kind);
        }
    }
}

// ---------------------------------------------------------------------------
// reproducing identity: kernel route vs scalar route
// ---------------------------------------------------------------------------

#[test]
fn reproducing_residual_matches_the_scalar_spectral_identity() {
    let g = cycle(16, UNNORM).unwrap();
    let space = g.space().unwrap();
    let op = SpectralOperator::new(&space, &g.laplacian()).unwrap();
    let calib = build_calibration(&op, 0.5, 2.0, 0.0).unwrap();

    // scalar route: the dual construction makes sum_j eta_j(s) phi_j(s) = 1
    // at every spectrum point
    let mut scalar_worst = 0.0f64;
    for &s in calib.op.sqrt_eigenvalues() {
        let total: f64 = (0..=calib.j_max)
            .map(|j| calib.bumps.dual_level(j, s) * calib.bumps.phi_level(j, s))
            .sum();
        scalar_worst = scalar_worst.max((total - 1.0).abs());
    }
    assert!(scalar_worst <= 1e-12, "scalar residual {scalar_worst}");

    // kernel route: compose the materialized band kernels and take the
    // L^2(mu) operator norm of the defect
    let mut resid = -op.identity_kernel();
    for j in 0..=calib.j_max {
        resid += &op.compose_kernels(&calib.dual_ops[j], &calib.level_ops[j]);
    }
    let kernel_worst = op.kernel_op_norm(&resid, 400);
    assert!(kernel_worst <= 1e-10, "kernel residual {kernel_worst}");

    // the two routes measure the same operator, and the power iteration
    // approaches the true norm from below
    assert!(kernel_worst <= scalar_worst + 1e-12, "{kernel_worst} vs {scalar_worst}");
    let report = calib.verify_crf(20, 0);
    assert!((report.multiplier_residual - scalar_worst).abs() <= 1e-14);
}

// ---------------------------------------------------------------------------
// mixed norms: naive triple loop
// ---------------------------------------------------------------------------

struct Setup {
    space: hkframe::space::MetricMeasureSpace,
    calib: hkframe::calib::LPCalibration,
    cubes: hkframe::cubes::CubeSystem,
}

fn cycle_setup(n: usize) -> Setup {
    let g = cycle(n, UNNORM).unwrap();
    let space = g.space().unwrap();
    let op = SpectralOperator::new(&space, &g.laplacian()).unwrap();
    let calib = build_calibration(&op, 0.5, 2.0, 0.0).unwrap();
    let cubes = build_cubes(&space, 0.5, 7).unwrap();
    Setup { space, calib, cubes }
}

/// The full norm definition with no shared code: weight each band output,
/// then sup over levels k and cubes Q of
/// mu(Q)^-tau * (inner aggregate of levels j >= max(k,0) over Q).
fn naive_norm(f: &Array1<f64>, s: &Setup, params: &SpaceParams, d: f64) -> f64 {
    let delta = s.cubes.delta;
    let n = s.space.n();
    let mut weighted: Vec<Vec<f64>> = Vec::new();
    for j in 0..=s.calib.j_max {
        let band = s.calib.band_apply(j, f);
        let row: Vec<f64> = (0..n)
            .map(|x| {
                let w = match params.variant {
                    Variant::Plain => delta.powf(-(j as f64) * params.s),
                    Variant::Tilde => {
                        s.space.ball_measure(x, delta.powi(j as i32)).powf(-params.s / d)
                    }
                };
                w * band[x].abs()
            })
            .collect();
        weighted.push(row);
    }
    let lp = |members: &[usize], g: &dyn Fn(usize) -> f64, p: f64| -> f64 {
        if p.is_infinite() {
            members.iter().fold(0.0f64, |m, &x| m.max(g(x)))
        } else {
            members
                .iter()
                .map(|&x| g(x).powf(p) * s.space.mu(x))
                .sum::<f64>()
                .powf(1.0 / p)
        }
    };
    let lq = |vals: &[f64], q: f64| -> f64 {
        if q.is_infinite() {
            vals.iter().fold(0.0f64, |m, &v| m.max(v))
        } else {
            vals.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
        }
    };
    let (k_lo, k_hi) = requested_k_range(params.k_range_policy, &s.cubes);
    let mut value = 0.0f64;
    for k in k_lo..=k_hi {
        let j_lo = k.max(0) as usize;
        if j_lo > s.calib.j_max {
            continue;
        }
        for cube in &s.cubes.level(k).cubes {
            let qm: f64 = cube.members.iter().map(|&x| s.space.mu(x)).sum();
            let core = match params.family {
                Family::B => {
                    let per_level: Vec<f64> = (j_lo..=s.calib.j_max)
                        .map(|j| lp(&cube.members, &|x| weighted[j][x], params.p))
                        .collect();
                    lq(&per_level, params.q)
                }
                Family::F => lp(
                    &cube.members,
                    &|x| {
                        let stack: Vec<f64> =
                            (j_lo..=s.calib.j_max).map(|j| weighted[j][x]).collect();
                        lq(&stack, params.q)
                    },
                    params.p,
                ),
            };
            value = value.max(qm.powf(-params.tau) * core);
        }
    }
    value
}

#[test]
fn space_norms_match_a_naive_triple_loop() {
    let s = cycle_setup(12);
    let ctx = NormContext::new(&s.space, &s.cubes);
    let d = s.space.geometry_report().dim_d;
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let mut battery: Vec<Array1<f64>> = vec![
        Array1::from_shape_fn(12, |i| if i == 3 { 1.0 } else { 0.0 }),
        Array1::from_shape_fn(12, |i| (i as f64 / 12.0 * std::f64::consts::TAU).sin()),
    ];
    battery.push(Array1::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0)));

    let cases = [
        (2.0, 1.5, Family::B, Variant::Plain, KRangePolicy::Full),
        (2.0, 1.5, Family::F, Variant::Plain, KRangePolicy::Full),
        (2.0, 1.5, Family::B, Variant::Tilde, KRangePolicy::Full),
        (2.0, 1.5, Family::F, Variant::Tilde, KRangePolicy::Full),
        (2.0, 2.0, Family::B, Variant::Plain, KRangePolicy::Full),
        (1.0, f64::INFINITY, Family::B, Variant::Plain, KRangePolicy::Full),
        (f64::INFINITY, 2.0, Family::B, Variant::Plain, KRangePolicy::Full),
        (0.75, 1.0, Family::F, Variant::Plain, KRangePolicy::NonnegativeOnly),
    ];
    for &(p, q, family, variant, policy) in &cases {
        let params = SpaceParams::new(0.5, 0.25, p, q, family, variant).with_policy(policy);
        for (i, f) in battery.iter().enumerate() {
            let got = match family {
                Family::B => besov_type_norm(f, &s.calib, &ctx, &params).unwrap().value,
                Family::F => triebel_type_norm(f, &s.calib, &ctx, &params).unwrap().value,
            };
            let want = naive_norm(f, &s, &params, d);
            let rel = (got - want).abs() / want.max(f64::MIN_POSITIVE);
            assert!(
                rel <= 1e-12,
                "f{i} p={p} q={q} {family:?} {variant:?}: {got} vs {want} (rel {rel})"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// stopping functional: brute-force quartile search
// ---------------------------------------------------------------------------

#[test]
fn stopping_functional_matches_a_brute_force_quartile_search() {
    let s = cycle_setup(16);
    let grid = subcube_grid(&s.cubes, &s.space, 1, 0.1, SampleRule::Center, 7).unwrap();
    let ctx = NormContext::new(&s.space, &s.cubes);
    let d = s.space.geometry_report().dim_d;
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let f = Array1::from_shape_fn(16, |_| rng.gen_range(-1.0..1.0));
    let coeffs = analysis(&f, &s.calib, &grid);
    let (s_exp, q) = (0.5f64, 1.5f64);
    let got = stopping_functional(&coeffs, &grid, &ctx, s_exp, q).unwrap();

    // brute force: per point and level, the weighted coefficient magnitude
    // of the subcube containing the point
    let n = s.space.n();
    let point_level_val = |x: usize, j: usize| -> f64 {
        let slot = hkframe::cubes::point_to_subcube(&grid, &s.cubes, j as i64)[x];
        let m = grid.level(j as i64).subcubes[slot].measure;
        m.powf(-s_exp / d) * coeffs.values[j][slot].abs()
    };
    let tail = |x: usize, k: usize| -> f64 {
        (k..=coeffs.j_max)
            .map(|j| point_level_val(x, j).powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    };
    let k_hi = s.cubes.k_max.max(0).min(coeffs.j_max as i64) as usize;
    for x in 0..n {
        let mut best = 0.0f64;
        for k in 0..=k_hi {
            let slot_map = hkframe::cubes::point_to_subcube(&grid, &s.cubes, k as i64);
            let my_slot = slot_map[x];
            let members: Vec<usize> = (0..n).filter(|&y| slot_map[y] == my_slot).collect();
            let q_measure: f64 = members.iter().map(|&y| s.space.mu(y)).sum();
            let quarter = q_measure / 4.0;
            // candidate thresholds: zero, then every attained tail value;
            // pick the smallest whose strict super-level set is light
            let mut candidates: Vec<f64> = vec![0.0];
            candidates.extend(members.iter().map(|&y| tail(y, k)));
            candidates.sort_by(f64::total_cmp);
            let mut m_tilde = f64::INFINITY;
            for &v in &candidates {
                let mass: f64 = members
                    .iter()
                    .filter(|&&y| tail(y, k) > v)
                    .map(|&y| s.space.mu(y))
                    .sum();
                if mass < quarter {
                    m_tilde = v;
                    break;
                }
            }
            best = best.max(m_tilde);
        }
        assert!(
            (got[x] - best).abs() <= 1e-12,
            "point {x}: {} vs brute-force {best}",
            got[x]
        );
    }
}
