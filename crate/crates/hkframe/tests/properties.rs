//! Cross-module properties, checked on randomized parameters and functions.
//!
//! These complement the per-module unit properties: everything here runs the
//! public pipeline end to end (bands -> weights -> cube aggregation, or
//! analysis -> synthesis) and asserts structural identities that must hold
//! for every admissible draw.

use std::sync::OnceLock;

use hkframe::calib::{build_calibration, LPCalibration};
use hkframe::cubes::{build_cubes, subcube_grid, CubeSystem, SampleRule, SubcubeGrid};
use hkframe::frame::{analysis, build_synthesis_frame, sequence_norm, synthesis, SynthesisFrame};
use hkframe::generators::{cycle, LaplacianKind};
use hkframe::norms::{
    besov_type_norm, quasi_triangle_constant, triebel_type_norm, Family, KRangePolicy,
    NormContext, SpaceParams, Variant,
};
use hkframe::space::MetricMeasureSpace;
use hkframe::spectral::SpectralOperator;
use ndarray::Array1;
use proptest::prelude::*;

struct Setup {
    space: MetricMeasureSpace,
    calib: LPCalibration,
    cubes: CubeSystem,
    grid: SubcubeGrid,
    frame: SynthesisFrame,
}

fn setup() -> &'static Setup {
    static CELL: OnceLock<Setup> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = cycle(16, LaplacianKind::Unnormalized).unwrap();
        let space = g.space().unwrap();
        let op = SpectralOperator::new(&space, &g.laplacian()).unwrap();
        let calib = build_calibration(&op, 0.5, 2.0, 0.0).unwrap();
        let cubes = build_cubes(&space, 0.5, 7).unwrap();
        let grid = subcube_grid(&cubes, &space, 1, 0.1, SampleRule::Center, 7).unwrap();
        let frame = build_synthesis_frame(&calib, &grid, 1e-12).unwrap();
        Setup { space, calib, cubes, grid, frame }
    })
}

fn ctx() -> NormContext<'static> {
    let s = setup();
    NormContext::new(&s.space, &s.cubes)
}

fn norm_of(f: &Array1<f64>, params: &SpaceParams) -> f64 {
    let s = setup();
    match params.family {
        Family::B => besov_type_norm(f, &s.calib, &ctx(), params).unwrap().value,
        Family::F => triebel_type_norm(f, &s.calib, &ctx(), params).unwrap().value,
    }
}

fn f_strategy() -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(-10.0f64..10.0, 16).prop_map(Array1::from_vec)
}

fn exponent() -> impl Strategy<Value = f64> {
    0.5f64..4.0
}

fn variant() -> impl Strategy<Value = Variant> {
    prop::bool::ANY.prop_map(|t| if t { Variant::Tilde } else { Variant::Plain })
}

proptest! {
    /// With p = q the two family aggregations traverse the same pointwise
    /// path, so the values agree to the last bit, not merely to tolerance.
    #[test]
    fn besov_equals_triebel_bit_for_bit_when_p_equals_q(
        pq in exponent(),
        s in 0.1f64..1.5,
        tau in 0.0f64..1.0,
        v in variant(),
        f in f_strategy(),
    ) {
        let b = SpaceParams::new(s, tau, pq, pq, Family::B, v);
        let fp = SpaceParams::new(s, tau, pq, pq, Family::F, v);
        let nb = norm_of(&f, &b);
        let nf = norm_of(&f, &fp);
        prop_assert_eq!(nb.to_bits(), nf.to_bits(), "{} vs {}", nb, nf);
    }

    /// || c f || = |c| · || f ||, every norm is absolutely homogeneous.
    #[test]
    fn norms_are_absolutely_homogeneous(
        c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        p in exponent(),
        q in exponent(),
        v in variant(),
        f in f_strategy(),
    ) {
        let params = SpaceParams::new(0.5, 0.25, p, q, Family::B, v);
        let base = norm_of(&f, &params);
        let scaled = norm_of(&(&f * c), &params);
        let want = c.abs() * base;
        prop_assert!(
            (scaled - want).abs() <= 1e-9 * want.max(1e-300),
            "{} vs {}", scaled, want
        );
    }

    /// Quasi-triangle inequality with the advertised constant.
    #[test]
    fn quasi_triangle_inequality_holds(
        p in exponent(),
        q in exponent(),
        family in prop::bool::ANY,
        f in f_strategy(),
        g in f_strategy(),
    ) {
        let family = if family { Family::B } else { Family::F };
        let params = SpaceParams::new(0.5, 0.25, p, q, family, Variant::Plain);
        let lhs = norm_of(&(&f + &g), &params);
        let rhs = quasi_triangle_constant(p, q) * (norm_of(&f, &params) + norm_of(&g, &params));
        prop_assert!(lhs <= rhs * (1.0 + 1e-9), "{} vs {}", lhs, rhs);
    }

    /// The nonnegative level range is a sub-range of the full one and the
    /// outer aggregation is a sup, so restricting can only shrink the value.
    #[test]
    fn nonnegative_level_range_never_exceeds_the_full_range(
        p in exponent(),
        q in exponent(),
        tau in 0.0f64..1.0,
        f in f_strategy(),
    ) {
        let full = SpaceParams::new(0.5, tau, p, q, Family::B, Variant::Plain)
            .with_policy(KRangePolicy::Full);
        let nonneg = full.with_policy(KRangePolicy::NonnegativeOnly);
        prop_assert!(norm_of(&f, &nonneg) <= norm_of(&f, &full));
    }

    /// Monotonicity in the inner exponent, and the Minkowski ordering
    /// between the two families on either side of q = p.
    #[test]
    fn families_order_by_exponent_monotonicity(
        p in exponent(),
        q1 in exponent(),
        q2 in exponent(),
        f in f_strategy(),
    ) {
        let (q_lo, q_hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let slack = 1.0 + 1e-12;
        for family in [Family::B, Family::F] {
            let lo = SpaceParams::new(0.5, 0.25, p, q_lo, family, Variant::Plain);
            let hi = SpaceParams::new(0.5, 0.25, p, q_hi, family, Variant::Plain);
            prop_assert!(
                norm_of(&f, &hi) <= norm_of(&f, &lo) * slack,
                "{:?}: q {} vs {}", family, q_lo, q_hi
            );
        }
        // Minkowski in L^{p/q}: summing inside the L^p integral dominates
        // when q >= p and is dominated when q <= p
        let b = SpaceParams::new(0.5, 0.25, p, q1, Family::B, Variant::Plain);
        let fp = SpaceParams::new(0.5, 0.25, p, q1, Family::F, Variant::Plain);
        let (nb, nf) = (norm_of(&f, &b), norm_of(&f, &fp));
        if q1 >= p {
            prop_assert!(nb <= nf * slack, "q={} >= p={}: B {} vs F {}", q1, p, nb, nf);
        } else {
            prop_assert!(nf <= nb * slack, "q={} < p={}: F {} vs B {}", q1, p, nf, nb);
        }
    }

    /// Analysis followed by synthesis reproduces every function within the
    /// frame's own advertised budget.
    #[test]
    fn frame_roundtrip_reconstructs_random_functions(f in f_strategy()) {
        let s = setup();
        let coeffs = analysis(&f, &s.calib, &s.grid);
        let rec = synthesis(&coeffs, &s.frame).unwrap();
        let err = s.calib.op.l2_norm(&(&rec - &f));
        let denom = s.calib.op.l2_norm(&f).max(1e-300);
        let budget = (10.0 * s.frame.total_tail()).max(1e-6);
        prop_assert!(err / denom <= budget, "{} vs {}", err / denom, budget);
    }

    /// The coefficient-space norm inherits absolute homogeneity.
    #[test]
    fn sequence_norm_is_absolutely_homogeneous(
        c in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        q in exponent(),
        f in f_strategy(),
    ) {
        let s = setup();
        let params = SpaceParams::new(0.5, 0.25, 2.0, q, Family::B, Variant::Tilde);
        let coeffs = analysis(&f, &s.calib, &s.grid);
        let mut scaled = coeffs.clone();
        for row in &mut scaled.values {
            for v in row {
                *v *= c;
            }
        }
        let base = sequence_norm(&coeffs, &s.grid, &ctx(), &params).unwrap();
        let got = sequence_norm(&scaled, &s.grid, &ctx(), &params).unwrap();
        let want = c.abs() * base;
        prop_assert!(
            (got - want).abs() <= 1e-9 * want.max(1e-300),
            "{} vs {}", got, want
        );
    }
}
