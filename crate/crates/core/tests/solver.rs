use ftr_scatter::solver::{apply_green, green_kernel, LeafDiscretization, LeafSystem};
use ftr_scatter::{build_model, enumerate_modes, perturbation_library, BlockModel, PerturbationSpec, C64};
use proptest::prelude::*;

fn setup() -> (BlockModel, PerturbationSpec, f64, LeafDiscretization) {
    let model = build_model(1, 1, 1).unwrap();
    let v = perturbation_library("V_TR", 1.8, 0.25).unwrap();
    (model, v, 1.8, LeafDiscretization::new(0.0, 0.25, 8, 20, 1))
}

/// (h₀ − E)u at (x, y) by central differences; blocks laid out h first.
fn apply_h0_minus_e(model: &BlockModel, e: f64, u: impl Fn(f64, f64) -> Vec<C64>, x: f64, y: f64) -> Vec<C64> {
    let d = 1e-4;
    let c = u(x, y);
    let (xp, xm, yp, ym) = (u(x + d, y), u(x - d, y), u(x, y + d), u(x, y - d));
    let i = C64::i();
    let mut out = vec![C64::new(0.0, 0.0); c.len()];
    for s in 0..model.num_blocks() {
        let sx = if model.is_conjugated(s) { -1.0 } else { 1.0 };
        let (k0, k1) = (2 * s, 2 * s + 1);
        let dx = |k: usize| (xp[k] - xm[k]) / (2.0 * d);
        let dy = |k: usize| (yp[k] - ym[k]) / (2.0 * d);
        // Upper: ±D_x u₀ + 𝔞u₁; lower: 𝔞*u₀ ∓ D_x u₁, with D_x = −i∂_x.
        out[k0] = sx * (-i) * dx(k0) + dy(k1) + y * c[k1] - e * c[k0];
        out[k1] = -dy(k0) + y * c[k0] - sx * (-i) * dx(k1) - e * c[k1];
    }
    out
}

#[test]
fn green_field_solves_free_equation() {
    let (model, v, e, disc) = setup();
    let basis = enumerate_modes(&model, e, 3).unwrap();
    let sys = LeafSystem::new(&model, &v, e, &disc).unwrap();
    let rho = sys.densities(&basis.modes[..2]);
    for r in &rho {
        let scale = r.norm();
        let field = |x: f64, y: f64| apply_green(&model, e, &disc, r, &[(x, y)]).unwrap().remove(0);
        for (x, y) in [(0.05, 0.3), (0.13, -1.0), (0.2, 1.4), (-0.3, 0.2), (0.6, -0.5)] {
            let lhs = apply_h0_minus_e(&model, e, field, x, y);
            let inside = x > disc.a && x < disc.b;
            for (c, val) in lhs.iter().enumerate() {
                let source = if inside { r.evaluate(c, x, y) } else { C64::new(0.0, 0.0) };
                assert!((val - source).norm() <= 1e-6 * scale, "c={c} ({x},{y}): {val} vs {source}");
            }
        }
    }
}

#[test]
fn zero_perturbation_gives_zero_density() {
    let (model, _, e, disc) = setup();
    let zero = PerturbationSpec::zero(4, 0.25);
    let sys = LeafSystem::new(&model, &zero, e, &disc).unwrap();
    assert!(sys.is_trivial());
    let basis = enumerate_modes(&model, e, 3).unwrap();
    for r in sys.densities(&basis.modes) {
        assert_eq!(r.norm(), 0.0);
    }
}

#[test]
fn batched_solves_equal_single_solves() {
    let (model, v, e, disc) = setup();
    let big = build_model(2, 2, 1).unwrap();
    let v1 = perturbation_library("V1", e, 0.25).unwrap();
    let cases = [(model, v, disc), (big, v1, LeafDiscretization::new(0.0, 0.25, 8, 30, 1))];
    for (model, v, disc) in cases {
        let basis = enumerate_modes(&model, e, 12).unwrap();
        let sys = LeafSystem::new(&model, &v, e, &disc).unwrap();
        let batch = sys.solve_modes(&basis.modes);
        let reversed: Vec<_> = basis.modes.iter().rev().copied().collect();
        let back = sys.solve_modes(&reversed);
        let last = basis.modes.len() - 1;
        for (k, m) in basis.modes.iter().enumerate() {
            let single = sys.solve_modes(std::slice::from_ref(m));
            for r in 0..batch.nrows() {
                assert_eq!(batch[(r, k)], single[(r, 0)], "mode {k} row {r}");
                assert_eq!(back[(r, last - k)], single[(r, 0)], "mode {k} row {r}");
            }
        }
    }
}

#[test]
fn born_limit_is_linear() {
    let (model, v, e, disc) = setup();
    let basis = enumerate_modes(&model, e, 3).unwrap();
    let incoming = &basis.modes[..1];
    let rho = |eps: f64| LeafSystem::new(&model, &v.scaled(eps), e, &disc).unwrap().densities(incoming).remove(0);
    let defect = |eps: f64| {
        let (a, b) = (rho(eps), rho(2.0 * eps));
        let mut twice = a.clone();
        for i in 0..disc.n_x {
            for n in 0..disc.n_y {
                for c in 0..4 {
                    twice.set(i, n, c, a.get(i, n, c) * 2.0);
                }
            }
        }
        b.max_abs_diff(&twice) / a.norm()
    };
    let (d1, d2) = (defect(1e-2), defect(1e-3));
    assert!(d1 < 0.1);
    let ratio = d1 / d2;
    assert!((5.0..20.0).contains(&ratio), "second-order term should scale with eps: {ratio}");
}

#[test]
fn extra_channels_do_not_change_density() {
    let (model, v, e, disc) = setup();
    let basis = enumerate_modes(&model, e, 3).unwrap();
    let modes = &basis.modes[..2];
    let base = LeafSystem::new(&model, &v, e, &disc).unwrap().densities(modes);
    let wide = LeafDiscretization { n_chan: disc.n_chan + 6, ..disc };
    let more = LeafSystem::new(&model, &v, e, &wide).unwrap().densities(modes);
    let finer = LeafDiscretization::new(0.0, 0.25, 8, 24, 1);
    let refined = LeafSystem::new(&model, &v, e, &finer).unwrap().densities(modes);
    for k in 0..2 {
        let channel_change = base[k].max_abs_diff(&more[k]);
        // Compare common levels only.
        let mut level_change = 0.0f64;
        for i in 0..disc.n_x {
            for n in 0..disc.n_y {
                for c in 0..4 {
                    level_change = level_change.max((base[k].get(i, n, c) - refined[k].get(i, n, c)).norm());
                }
            }
        }
        assert!(channel_change <= level_change, "{channel_change:e} vs {level_change:e}");
    }
}

#[test]
fn rejects_too_few_channels() {
    let (model, v, e, disc) = setup();
    let bad = LeafDiscretization { n_chan: disc.n_y, ..disc };
    assert!(LeafSystem::new(&model, &v, e, &bad).is_err());
}

proptest! {
    #[test]
    fn green_kernel_reciprocity(
        x in -2.0f64..2.0, y in -2.5f64..2.5, x0 in -2.0f64..2.0, y0 in -2.5f64..2.5,
        e in prop::sample::select(vec![0.7, 1.8, -2.3, 3.1]), p in 1usize..3,
    ) {
        prop_assume!((x - x0).abs() > 1e-9);
        let n_chan = 24;
        let h = green_kernel(e, p, false, n_chan, (x, y), (x0, y0)).unwrap();
        let hbar_swapped = green_kernel(e, p, true, n_chan, (x0, y0), (x, y)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((h[i][j] - hbar_swapped[j][i]).norm() < 1e-10);
            }
        }
    }
}
