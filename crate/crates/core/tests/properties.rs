use mirrorla::attention::{
    feature_pair, linear_attention_direct, linear_attention_reordered, AttentionConfig,
};
use mirrorla::featmap::{mirror_feature_map, MirrorParams, ModulationConfig};
use mirrorla::numerics::dot;
use mirrorla::reflect::{global_reflect, householder_2d, householder_matrix, reflect_blocks, GlobalMirror};
use mirrorla::{Array, Rng};
use proptest::prelude::*;

/// Shape of one random attention problem.
#[derive(Clone, Copy, Debug)]
struct Dims {
    seed: u64,
    b: usize,
    heads: usize,
    head_dim: usize,
    nq: usize,
    nk: usize,
    dv: usize,
}

fn dims() -> impl Strategy<Value = Dims> {
    (any::<u64>(), 1..=2usize, 1..=3usize, 1..=4usize, 1..=12usize, 1..=12usize, 1..=5usize).prop_map(
        |(seed, b, heads, half, nq, nk, dv)| Dims { seed, b, heads, head_dim: 2 * half, nq, nk, dv },
    )
}

struct Problem {
    q: Array,
    k: Array,
    v: Array,
    params: MirrorParams,
    acfg: AttentionConfig,
}

fn problem(d: Dims, scale_qk: bool, shared_stats: bool) -> Problem {
    let mut rng = Rng::new(d.seed);
    let f = d.heads * d.head_dim;
    Problem {
        q: rng.normal_array(&[d.b, d.nq, f]),
        k: rng.normal_array(&[d.b, d.nk, f]),
        v: rng.normal_array(&[d.b, d.heads, d.nk, d.dv]),
        params: MirrorParams::random(&mut rng, d.heads, d.head_dim).unwrap(),
        acfg: AttentionConfig { scale_qk, shared_stats, ..AttentionConfig::new(d.heads, d.head_dim) },
    }
}

/// Reorders the token axis (axis 1) of `[B, N, F]` or (axis 2) of `[B, H, N, D]`.
fn permute_tokens(x: &Array, perm: &[usize]) -> Array {
    let s = x.shape();
    let axis = s.len() - 2;
    let (outer, n, inner) = (s[..axis].iter().product::<usize>(), s[axis], s[axis + 1]);
    assert_eq!(n, perm.len());
    let mut out = x.clone();
    for o in 0..outer {
        for (dst, &src) in perm.iter().enumerate() {
            let from = &x.data()[(o * n + src) * inner..][..inner];
            out.data_mut()[(o * n + dst) * inner..][..inner].copy_from_slice(from);
        }
    }
    out
}

fn rows(x: &Array) -> impl Iterator<Item = &[f64]> {
    x.data().chunks_exact(*x.shape().last().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn block_reflection_preserves_inner_products(seed in any::<u64>(), heads in 1..=3usize, half in 1..=8usize) {
        let mut rng = Rng::new(seed);
        let d = 2 * half;
        let x = rng.normal_array(&[1, heads, 2, d]);
        let angles = rng.uniform_array(&[heads, half], -std::f64::consts::PI, std::f64::consts::PI);
        let y = reflect_blocks(&x, &angles).unwrap();
        for h in 0..heads {
            let base = h * 2 * d;
            let (xa, xb) = (&x.data()[base..base + d], &x.data()[base + d..base + 2 * d]);
            let (ya, yb) = (&y.data()[base..base + d], &y.data()[base + d..base + 2 * d]);
            prop_assert!((dot(xa, xb) - dot(ya, yb)).abs() <= 1e-10);
        }
        let back = reflect_blocks(&y, &angles).unwrap();
        prop_assert!(back.max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn global_reflection_is_an_involutive_isometry(seed in any::<u64>(), width in 2..=32usize) {
        let mut rng = Rng::new(seed);
        let u = GlobalMirror::new(rng.normal_array(&[width])).unwrap();
        let x = rng.normal_array(&[2, width]);
        let y = global_reflect(&x, &u).unwrap();
        prop_assert!((dot(x.row(0), x.row(1)) - dot(y.row(0), y.row(1))).abs() <= 1e-10);
        prop_assert!(global_reflect(&y, &u).unwrap().max_abs_diff(&x) <= 1e-12);
    }

    #[test]
    fn closed_form_matches_matrix(theta in -10.0f64..10.0) {
        let r = householder_2d(theta);
        let by_normal = householder_matrix(&[-theta.sin(), theta.cos()]).unwrap();
        prop_assert!(r.max_abs_diff(&by_normal) <= 1e-12);
        let by_direction = householder_matrix(&[theta.cos(), theta.sin()]).unwrap();
        prop_assert!(r.max_abs_diff(&by_direction.scale(-1.0)) <= 1e-12);
    }

    #[test]
    fn features_are_non_negative(d in dims(), lambda in 0.1f64..10.0) {
        let p = problem(d, true, false);
        let cfg = ModulationConfig { lambda, ..Default::default() };
        let phi = mirror_feature_map(&p.q, &p.params, &cfg).unwrap();
        prop_assert!(phi.data().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn shift_strictly_decreases(mut grid in prop::collection::vec(0.05f64..1e6, 2..50)) {
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|a, b| *a <= *b * (1.0 + 1e-3));
        let cfg = ModulationConfig::default();
        for w in grid.windows(2) {
            prop_assert!(cfg.shift(w[1]) < cfg.shift(w[0]), "{} vs {}", w[0], w[1]);
        }
    }

    #[test]
    fn shift_saturates(low in 0.0f64..=1e-8, high in 1e6f64..1e12) {
        let cfg = ModulationConfig::default();
        prop_assert!(cfg.shift(low) >= 0.999 * cfg.alpha_max);
        prop_assert!(cfg.shift(high) <= 0.501 * cfg.alpha_max);
    }

    #[test]
    fn kernel_is_non_negative(d in dims(), shared in any::<bool>()) {
        let p = problem(d, true, shared);
        let (phi_q, phi_k) = feature_pair(&p.q, &p.k, &p.params, &ModulationConfig::default(), &p.acfg).unwrap();
        for qr in rows(&phi_q) {
            for kr in rows(&phi_k) {
                prop_assert!(dot(qr, kr) >= 0.0);
            }
        }
    }

    #[test]
    fn evaluation_orders_agree(d in dims(), scale in any::<bool>(), shared in any::<bool>()) {
        let p = problem(d, scale, shared);
        let cfg = ModulationConfig::default();
        let a = linear_attention_direct(&p.q, &p.k, &p.v, &p.params, &cfg, &p.acfg).unwrap();
        let b = linear_attention_reordered(&p.q, &p.k, &p.v, &p.params, &cfg, &p.acfg).unwrap();
        prop_assert!(a.out.max_abs_diff(&b.out) <= 1e-10);
    }

    #[test]
    fn outputs_are_convex_combinations_of_values(d in dims()) {
        let p = problem(d, true, false);
        let o = linear_attention_reordered(&p.q, &p.k, &p.v, &p.params, &ModulationConfig::default(), &p.acfg).unwrap();
        let guard = p.acfg.denom_eps;
        for bh in 0..d.b * d.heads {
            let values = &p.v.data()[bh * d.nk * d.dv..][..d.nk * d.dv];
            for t in 0..d.nq {
                let den = o.denom.data()[bh * d.nq + t];
                if den <= 10.0 * guard {
                    continue;
                }
                // The guard makes the weights sum to raw / (raw + guard).
                let mass = (den - guard) / den;
                let out = &o.out.data()[(bh * d.nq + t) * d.dv..][..d.dv];
                for (c, x) in out.iter().map(|x| x / mass).enumerate() {
                    let col = values.chunks_exact(d.dv).map(|r| r[c]);
                    let lo = col.clone().fold(f64::INFINITY, f64::min);
                    let hi = col.fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(x >= lo - 1e-10 && x <= hi + 1e-10, "{x} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn token_permutations(d in dims(), shared in any::<bool>(), perm_seed in any::<u64>()) {
        let p = problem(d, true, shared);
        let cfg = ModulationConfig::default();
        let base = linear_attention_reordered(&p.q, &p.k, &p.v, &p.params, &cfg, &p.acfg).unwrap();
        let mut rng = Rng::new(perm_seed);

        let pq = rng.permutation(d.nq);
        let q2 = permute_tokens(&p.q, &pq);
        let o = linear_attention_reordered(&q2, &p.k, &p.v, &p.params, &cfg, &p.acfg).unwrap();
        prop_assert!(o.out.max_abs_diff(&permute_tokens(&base.out, &pq)) <= 1e-10);

        let pk = rng.permutation(d.nk);
        let (k2, v2) = (permute_tokens(&p.k, &pk), permute_tokens(&p.v, &pk));
        let o = linear_attention_reordered(&p.q, &k2, &v2, &p.params, &cfg, &p.acfg).unwrap();
        prop_assert!(o.out.max_abs_diff(&base.out) <= 1e-10);
    }
}
