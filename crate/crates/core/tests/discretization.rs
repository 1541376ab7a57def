use permopt::assembly::{assemble_div_penalty, assemble_mass, AssembledSystem, PenaltyQuadrature};
use permopt::grid::{BoxDomain, DofKind, DofSpace, Grid};
use permopt::{Sym3, SymMatrixField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_grid(n: usize) -> Grid {
    Grid::new(BoxDomain::cube(1.0).unwrap(), [n; 3]).unwrap()
}

#[test]
fn dof_counts() {
    for n in [2, 3, 8] {
        let g = unit_grid(n);
        let v = DofSpace::new(&g, DofKind::VectorTangentialZero);
        let s = DofSpace::new(&g, DofKind::ScalarDirichlet);
        // each component is free off the faces normal to the other two axes
        assert_eq!(v.num_free(), 3 * (n + 1) * (n - 1) * (n - 1));
        assert_eq!(s.num_free(), (n - 1).pow(3));
    }
    let g = Grid::new(BoxDomain::new([0.0; 3], [1.0, 2.0, 3.0]).unwrap(), [2, 3, 4]).unwrap();
    let v = DofSpace::new(&g, DofKind::VectorTangentialZero);
    assert_eq!(v.num_free(), 3 * 2 * 3 + 4 * 1 * 3 + 5 * 1 * 2);
}

#[test]
fn expand_restrict_round_trip() {
    let g = unit_grid(3);
    let v = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let x: Vec<f64> = (0..v.num_free()).map(|i| i as f64 + 0.5).collect();
    assert_eq!(v.restrict(&v.expand(&x)), x);
}

// 1D Q1 mass: h/3 on the diagonal of an interior node (two cells give 2h/3),
// h/6 between neighbours; the 3D matrix is the tensor product.
#[test]
fn mass_matches_tensor_product_oracle() {
    let g = unit_grid(2);
    let h = 0.5;
    let e = Sym3([1.3, 0.2, -0.1, 0.9, 0.05, 1.1]);
    let eps = SymMatrixField::constant(&g, e);
    let space = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let m = assemble_mass(&space, &eps).unwrap();
    let centre = g.node_index(1, 1, 1);
    let left = g.node_index(0, 1, 1);
    let diag = (2.0 * h / 3.0_f64).powi(3);
    let off = (h / 6.0) * (2.0 * h / 3.0_f64).powi(2);
    let idx = |n, c| space.index(n, c).unwrap();
    let em = e.to_matrix();
    for c in 0..3 {
        for d in 0..3 {
            let got = m.get(idx(centre, c), idx(centre, d));
            assert!((got - em[c][d] * diag).abs() < 1e-14, "{c}{d}: {got}");
        }
    }
    // only the x-component survives at (0,1,1)
    assert!((m.get(idx(left, 0), idx(centre, 0)) - em[0][0] * off).abs() < 1e-14);
    assert!(space.index(left, 1).is_none());
}

#[test]
fn mass_row_sum_is_basis_integral() {
    // the x-row of an interior node sums to ∫φ = h³
    let g = unit_grid(4);
    let eps = SymMatrixField::constant(&g, Sym3::IDENTITY);
    let space = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let m = assemble_mass(&space, &eps).unwrap();
    let node = g.node_index(2, 2, 2);
    let i = space.index(node, 0).unwrap();
    let (cols, vals) = m.row(i);
    let sum: f64 = cols.iter().zip(vals).filter(|(c, _)| space.owner(**c).1 == 0).map(|(_, v)| v).sum();
    assert!((sum - 0.25f64.powi(3)).abs() < 1e-14);
}

// Independent midpoint evaluation of ∫ div(εu)² for ε = diag(x₁, 1, 1):
// div(εu) = x₁ ∂₁u₁ + ∂₂u₂ + ∂₃u₃ + u₁.
#[test]
fn penalty_matches_midpoint_oracle() {
    let n = 3;
    let g = unit_grid(n);
    let h = 1.0 / n as f64;
    let eps = SymMatrixField::from_fn(&g, |p| Sym3([p[0], 0.0, 0.0, 1.0, 0.0, 1.0]));
    let space = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let d = assemble_div_penalty(&space, &eps, PenaltyQuadrature::Reduced).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..space.num_free()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = space.expand(&x);
    let at = |i: usize, j: usize, k: usize, c: usize| u[3 * g.node_index(i, j, k) + c];
    let mut oracle = 0.0;
    for ci in 0..n {
        for cj in 0..n {
            for ck in 0..n {
                let mut mean = [0.0; 3];
                let mut grad = [[0.0; 3]; 3];
                for a in 0..8usize {
                    let o = [a & 1, (a >> 1) & 1, (a >> 2) & 1];
                    for c in 0..3 {
                        let v = at(ci + o[0], cj + o[1], ck + o[2], c);
                        mean[c] += v / 8.0;
                        for dir in 0..3 {
                            let s = if o[dir] == 1 { 1.0 } else { -1.0 };
                            grad[c][dir] += s * v / (4.0 * h);
                        }
                    }
                }
                let x1 = (ci as f64 + 0.5) * h;
                let div = x1 * grad[0][0] + grad[1][1] + grad[2][2] + mean[0];
                oracle += h.powi(3) * div * div;
            }
        }
    }
    let got = d.bilinear(&x, &x);
    assert!((got - oracle).abs() < 1e-12 * oracle.abs().max(1.0), "{got} vs {oracle}");
}

#[test]
fn penalty_scales_quadratically_and_mass_linearly() {
    let g = unit_grid(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let eps = permopt::permittivity::smooth_random_field(&g, &Default::default(), 0.6, 1.8, &mut rng);
    let space = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let a = AssembledSystem::assemble(&space, &eps, 1.0, Default::default()).unwrap();
    let b = AssembledSystem::assemble(&space, &eps.scale(3.0), 1.0, Default::default()).unwrap();
    for (x, y) in a.m.values().iter().zip(b.m.values()) {
        assert!((3.0 * x - y).abs() < 1e-13 * (1.0 + y.abs()));
    }
    for (x, y) in a.d.values().iter().zip(b.d.values()) {
        assert!((9.0 * x - y).abs() < 1e-12 * (1.0 + y.abs()));
    }
    assert_eq!(a.k.values(), b.k.values());
}

#[test]
fn penalty_vanishes_when_u1_is_independent_of_x1() {
    let g = unit_grid(4);
    let eps = SymMatrixField::constant(&g, Sym3::IDENTITY);
    let space = DofSpace::new(&g, DofKind::VectorTangentialZero);
    let d = assemble_div_penalty(&space, &eps, PenaltyQuadrature::Full).unwrap();
    // u = (1, 0, 0) on every free x-DOF; u₁ varies in y and z only
    let x: Vec<f64> = (0..space.num_free()).map(|i| if space.owner(i).1 == 0 { 1.0 } else { 0.0 }).collect();
    let u = space.expand(&x);
    assert_eq!((0..g.num_nodes()).filter(|&n| u[3 * n] == 1.0).count(), 5 * 3 * 3);
    assert!(d.bilinear(&x, &x).abs() < 1e-14);
}
