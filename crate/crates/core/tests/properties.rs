use permopt::auchmuty::{AuchmutyOptions, AuchmutyState};
use permopt::config::pi_cube;
use permopt::optimizer::{retract, tangent_project};
use permopt::par::{map_indexed, Execution};
use permopt::permittivity::AdmissibilityBounds;
use permopt::sparse::CsrMatrix;
use permopt::spectral_calculus::{cluster_groups, elementary_symmetric, ClusterPartition};
use permopt::{Grid, Sym3, SymMatrixField};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sym3() -> impl Strategy<Value = Sym3> {
    prop::array::uniform6(-3.0..3.0f64).prop_map(Sym3)
}

fn random_field(n: usize, seed: u64, lo: f64, hi: f64) -> SymMatrixField {
    let g = Grid::from_spec(&pi_cube(n)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permopt::permittivity::smooth_random_field(&g, &Default::default(), lo, hi, &mut rng)
}

fn partition(values: Vec<f64>, sizes: Vec<usize>) -> ClusterPartition {
    let mut groups = Vec::new();
    let mut next = 1;
    for &n in &sizes {
        groups.push((next..next + n).collect());
        next += n;
    }
    ClusterPartition { indices: (1..next).collect(), groups, values, basis: vec![Vec::new(); sizes.len()] }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clamp_puts_spectrum_in_band(a in sym3(), lo in 0.1..1.0f64, width in 0.1..3.0f64) {
        let hi = lo + width;
        let e = a.clamp_spectrum(lo, hi).eigenvalues();
        prop_assert!(e[0] >= lo - 1e-12 && e[2] <= hi + 1e-12);
    }

    #[test]
    fn clamp_is_identity_inside_band(v in prop::array::uniform3(0.6..1.9f64), a in sym3()) {
        let (_, q) = a.eigen();
        let m = Sym3::from_eigen(&v, &q);
        prop_assert_eq!(m.clamp_spectrum(0.5, 2.0), m);
    }

    #[test]
    fn eigen_reconstructs(a in sym3()) {
        let (v, q) = a.eigen();
        let b = Sym3::from_eigen(&v, &q);
        for i in 0..6 {
            prop_assert!((a.0[i] - b.0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn elementary_symmetric_is_permutation_invariant(mut v in prop::collection::vec(0.1..5.0f64, 1..7), s in 1usize..7) {
        let s = s.min(v.len());
        let a = elementary_symmetric(&v, s);
        v.reverse();
        v.rotate_left(1);
        let b = elementary_symmetric(&v, s);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
        prop_assert!((elementary_symmetric(&v, 1) - v.iter().sum::<f64>()).abs() < 1e-12 * v.iter().sum::<f64>());
        let prod: f64 = v.iter().product();
        prop_assert!((elementary_symmetric(&v, v.len()) - prod).abs() <= 1e-12 * prod);
    }

    // c_k / λ_k equals the derivative of Λ along any single member of group k
    #[test]
    fn cluster_coefficients_match_derivative(
        raw in prop::collection::vec((0.5..4.0f64, 1usize..4), 1..4),
        s in 1usize..5,
    ) {
        let values: Vec<f64> = raw.iter().enumerate().map(|(i, r)| r.0 + 5.0 * i as f64).collect();
        let sizes: Vec<usize> = raw.iter().map(|r| r.1).collect();
        let total: usize = sizes.iter().sum();
        let s = s.min(total);
        let part = partition(values.clone(), sizes.clone());
        let expanded: Vec<f64> = values.iter().zip(&sizes).flat_map(|(&v, &n)| std::iter::repeat(v).take(n)).collect();
        prop_assert!((part.sym_func(s) - elementary_symmetric(&expanded, s)).abs() <= 1e-12 * part.sym_func(s));
        let mut first = 0;
        for k in 0..sizes.len() {
            let h = 1e-6 * values[k];
            let mut up = expanded.clone();
            let mut dn = expanded.clone();
            up[first] += h;
            dn[first] -= h;
            let fd = (elementary_symmetric(&up, s) - elementary_symmetric(&dn, s)) / (2.0 * h);
            let ck = part.coeff_ck(s, k);
            prop_assert!((ck / values[k] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "k={} {} vs {}", k, ck / values[k], fd);
            first += sizes[k];
        }
    }

    #[test]
    fn cluster_groups_cover_index_set(gaps in prop::collection::vec(prop_oneof![Just(0.0), 0.5..2.0f64], 2..10)) {
        let mut values = vec![1.0];
        for g in &gaps {
            values.push(values[values.len() - 1] + g);
        }
        let all: Vec<usize> = (1..values.len()).collect();
        if let Ok(groups) = cluster_groups(&values, &all, 1e-8) {
            let flat: Vec<usize> = groups.concat();
            prop_assert_eq!(flat, all);
            for g in &groups {
                prop_assert!(g.iter().all(|&i| (values[i - 1] - values[g[0] - 1]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn mass_is_linear(seed in 0u64..1000, t in 0.1..4.0f64) {
        let eps = random_field(3, seed, 0.6, 1.8);
        let m = eps.frobenius_mass();
        prop_assert!((eps.scale(t).frobenius_mass() - t * m).abs() <= 1e-12 * t * m);
        prop_assert_eq!(eps.frobenius_mass_with(Execution::Sequential), eps.frobenius_mass_with(Execution::Parallel));
    }

    #[test]
    fn tangent_projection_has_zero_mass_differential(seed in 0u64..1000) {
        let eps = random_field(3, seed, 0.6, 1.8);
        let g = random_field(3, seed + 7, -1.0, 1.0);
        let p = tangent_project(&g, &eps).unwrap();
        let scale = eps.mass_differential(&g).unwrap().abs().max(1.0);
        prop_assert!(eps.mass_differential(&p).unwrap().abs() <= 1e-10 * scale);
        let pp = tangent_project(&p, &eps).unwrap();
        for (a, b) in p.values().iter().zip(pp.values()) {
            prop_assert!((a.0[0] - b.0[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn retraction_lands_in_box_with_target_mass(seed in 0u64..1000, lo in -1.0..1.0f64, frac in 0.1..0.9f64) {
        let bounds = AdmissibilityBounds::new(0.5, 2.0, 5.0).unwrap();
        let x = random_field(3, seed, lo, lo + 2.5);
        let full = SymMatrixField::constant(x.grid(), Sym3::IDENTITY).frobenius_mass();
        let target = full * (0.5 + 1.5 * frac);
        let (r, _) = retract(&x, &bounds, target).unwrap();
        prop_assert!((r.frobenius_mass() - target).abs() <= 1e-10 * target);
        for v in r.values() {
            let e = v.eigenvalues();
            prop_assert!(e[0] >= bounds.alpha && e[2] <= bounds.beta);
        }
        let (again, _) = retract(&r, &bounds, target).unwrap();
        prop_assert!((again.frobenius_mass() - target).abs() <= 1e-10 * target);
    }

    #[test]
    fn parallel_map_matches_sequential(n in 0usize..500) {
        let f = |i: usize| (i as f64).sqrt().sin();
        prop_assert_eq!(map_indexed(Execution::Sequential, n, f), map_indexed(Execution::Parallel, n, f));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // diagonal pencil: the minimum over the complement of the first M unit
    // vectors is −1/(2(d_{M+1}+1))
    #[test]
    fn auchmuty_recovers_diagonal_eigenvalue(mut d in prop::collection::vec(0.5..20.0f64, 6..12), m in 0usize..4) {
        d.sort_by(f64::total_cmp);
        d.dedup_by(|a, b| (*a - *b).abs() < 0.05);
        prop_assume!(d.len() > m + 1);
        let n = d.len();
        let t = CsrMatrix::from_dense(&(0..n).map(|i| (0..n).map(|j| if i == j { d[i] + 1.0 } else { 0.0 }).collect()).collect::<Vec<_>>());
        let basis: Vec<Vec<f64>> = (0..m).map(|k| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect();
        let state = AuchmutyState::new(t, CsrMatrix::identity(n), basis).unwrap();
        let min = state.minimize_f(&AuchmutyOptions::default()).unwrap();
        let expect = -0.5 / (d[m] + 1.0);
        prop_assert!((min.f_star - expect).abs() <= 1e-9 * expect.abs(), "{} vs {}", min.f_star, expect);
        prop_assert!((min.sigma_recovered - d[m]).abs() <= 1e-6 * (1.0 + d[m]));
        for k in 0..m {
            prop_assert!(min.u[k].abs() < 1e-10);
        }
    }
}
