use num_complex::Complex64;

use super::*;
use crate::spectral::{
    eigensystem_for, sample_potential, select_modes, Box1D, DistributionSpec, EigenSystem,
};

pub(crate) fn fixture(radius: i64, seed: u64) -> EigenSystem {
    let v = sample_potential(&DistributionSpec::Uniform01, Box1D::symmetric(radius), seed).unwrap();
    eigensystem_for(&v).unwrap()
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Tuple-sum oracle for the plain sector at p = 1: triple loop over stored
/// entries with direct overlaps, following the convolution constraint
/// n' + n_1 + n'_1 = n with v(n,j) = conj(u(-n,j)).
fn w_tuple_oracle(u: &LatticeCoeffs, eig: &EigenSystem, n: &[i64], j: i64) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for ((n1, j1), &c1) in u.iter() {
        for ((n2, j2), &c2) in u.iter() {
            for ((n3, j3), &c3) in u.iter() {
                // v-entry at n'_1 = -n3 carries conj(c3).
                let sum: Vec<i64> = n1
                    .iter()
                    .zip(n2)
                    .zip(n3)
                    .map(|((a, b), e)| a + b - e)
                    .collect();
                if sum != n {
                    continue;
                }
                let o = overlap_direct(eig, &[j, *j1, *j2, *j3]);
                total += c1 * c2 * c3.conj() * o;
            }
        }
    }
    total
}

#[test]
fn overlap_positivity_and_bounds() {
    let eig = fixture(20, 5);
    let cache = OverlapTensorCache::new(&eig, 1, 0.0);
    for j in [-5i64, 0, 7] {
        let a = cache.overlap(&[j, j, j, j]);
        assert!(a > 0.0 && a <= 1.0, "fourth-moment sum {a} out of (0, 1]");
    }
}

#[test]
fn tangential_moment_bounds() {
    // A_k = sum phi^{2p+2} obeys 1/L^{10p} <= A_k <= 1 for selected modes.
    let eig = fixture(64, 11);
    let sel = select_modes(&eig, &[45], 4, &[1.5]).unwrap();
    let cache = OverlapTensorCache::new(&eig, 1, 0.0);
    let a1 = cache.overlap(&[sel.alphas[0]; 4]);
    let l = 4f64;
    assert!(a1 >= l.powi(-10), "A_1 = {a1} below 1/L^10");
    assert!(a1 <= 1.0, "A_1 = {a1} above 1");
}

#[test]
fn overlap_pruning_matches_direct_summation() {
    let eig = fixture(40, 9);
    let tol = 1e-8;
    let cache = OverlapTensorCache::new(&eig, 1, tol);
    let radius = cache.prune_radius();
    // Hunt for a tuple whose center spread exceeds the prune radius; if the
    // sample is too delocalized for any to exist, the cache never prunes and
    // the invariant holds trivially.
    let labels: Vec<i64> = eig.labels().collect();
    let mut checked = 0;
    for &j1 in &labels {
        for &j2 in &labels {
            let spread = (eig.center(j1) - eig.center(j2)).abs() as f64;
            if spread > radius {
                let pruned = cache.overlap(&[j1, j1, j2, j2]);
                let direct = overlap_direct(&eig, &[j1, j1, j2, j2]);
                assert_eq!(pruned, 0.0);
                assert!(direct.abs() <= tol, "pruned tuple above tolerance: {direct}");
                checked += 1;
            }
        }
        if checked > 20 {
            break;
        }
    }
    // Near tuples must agree with direct summation bitwise.
    let v = cache.overlap(&[0, 0, 1, 1]);
    assert_eq!(v, overlap_direct(&eig, &[0, 0, 1, 1]));
}

#[test]
fn w_zero_input() {
    let eig = fixture(10, 3);
    let u = LatticeCoeffs::new(1, 4, vec![]);
    let w = assemble_w(&u, &eig, 1, WSector::Plain, None).unwrap();
    assert!(w.slabs.is_empty());
    let k = jacobian_kernel(&u, &eig, 1, None).unwrap();
    assert!(k.gp.is_empty() && k.huv.is_empty() && k.hvu.is_empty());
}

#[test]
fn w_single_mode_hand_convolution() {
    // Support {(-e_1, alpha)} with amplitude a: the only surviving tuple has
    // n' = n_1 = -e_1 and n'_1 = +e_1, so W lives on the single slab -e_1
    // with W(-e_1, j) = a^3 <phi_j phi_alpha^3>.
    let eig = fixture(30, 17);
    let alpha = 3i64;
    let a = 1.5f64;
    let mut u = LatticeCoeffs::new(1, 8, vec![alpha]);
    u.set(vec![-1], alpha, c(a)).unwrap();
    let w = assemble_w(&u, &eig, 1, WSector::Plain, None).unwrap();
    assert_eq!(w.slabs.len(), 1);
    assert!(w.slabs.contains_key(&vec![-1]));
    for j in eig.labels() {
        let want = a.powi(3) * overlap_direct(&eig, &[j, alpha, alpha, alpha]);
        let got = w.get(&[-1], eig.idx(j));
        assert!((got.re - want).abs() < 1e-12, "j={j}: {} vs {want}", got.re);
        assert!(got.im.abs() < 1e-15);
    }
    // At j = alpha this is a^3 A_1.
    let a1 = overlap_direct(&eig, &[alpha; 4]);
    let lead = w.get(&[-1], eig.idx(alpha));
    assert!((lead.re - a.powi(3) * a1).abs() < 1e-12);
}

#[test]
fn w_matches_tuple_oracle_on_random_sparse_input() {
    let eig = fixture(16, 23);
    let mut u = LatticeCoeffs::new(2, 6, vec![]);
    let entries: [(Vec<i64>, i64, f64, f64); 4] = [
        (vec![-1, 0], 2, 0.9, 0.3),
        (vec![0, -1], -3, -0.5, 0.7),
        (vec![1, 1], 0, 0.2, -0.4),
        (vec![-2, 1], 5, 0.1, 0.05),
    ];
    for (n, j, re, im) in entries {
        u.set(n, j, Complex64::new(re, im)).unwrap();
    }
    let w = assemble_w(&u, &eig, 1, WSector::Plain, Some(4)).unwrap();
    for n in [vec![-1i64, 0], vec![-2, 2], vec![0, 0], vec![-4, 1]] {
        for j in [-8i64, 0, 5] {
            let want = w_tuple_oracle(&u, &eig, &n, j);
            let got = w.get(&n, eig.idx(j));
            assert!(
                (got - want).norm() < 1e-12,
                "W({n:?}, {j}): {got} vs oracle {want}"
            );
        }
    }
}

#[test]
fn w_scaling_degree() {
    let eig = fixture(12, 7);
    let mut u = LatticeCoeffs::new(1, 4, vec![]);
    u.set(vec![-1], 0, c(1.2)).unwrap();
    u.set(vec![1], 2, Complex64::new(0.3, 0.1)).unwrap();
    let w1 = assemble_w(&u, &eig, 1, WSector::Plain, Some(3)).unwrap();
    let lam = 0.5f64;
    let mut u2 = LatticeCoeffs::new(1, 4, vec![]);
    for ((n, j), &v) in u.iter() {
        u2.set(n.clone(), *j, v * lam).unwrap();
    }
    let w2 = assemble_w(&u2, &eig, 1, WSector::Plain, Some(3)).unwrap();
    // Degree 2p+1 = 3 in the coefficients.
    for (n, slab) in &w1.slabs {
        let s2 = &w2.slabs[n];
        for (a, b) in slab.iter().zip(s2) {
            assert!((a * lam.powi(3) - b).norm() <= 1e-16 + 1e-12 * a.norm());
        }
    }
}

#[test]
fn conjugation_symmetry_between_sectors() {
    let eig = fixture(14, 31);
    let mut u = LatticeCoeffs::new(1, 5, vec![]);
    u.set(vec![-1], 1, Complex64::new(0.8, -0.2)).unwrap();
    u.set(vec![0], -2, Complex64::new(-0.3, 0.6)).unwrap();
    u.set(vec![2], 4, Complex64::new(0.05, 0.11)).unwrap();
    let plain = assemble_w(&u, &eig, 1, WSector::Plain, Some(5)).unwrap();
    let tilde = assemble_w(&u, &eig, 1, WSector::Tilde, Some(5)).unwrap();
    for (n, slab) in &tilde.slabs {
        let flipped: Vec<i64> = n.iter().map(|&k| -k).collect();
        for (idx, &t) in slab.iter().enumerate() {
            let w = plain.get(&flipped, idx);
            assert!(
                (t - w.conj()).norm() <= 1e-12,
                "tilde({n:?}) vs conj(plain({flipped:?})) at {idx}: {t} vs {w}"
            );
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let eig = fixture(16, 41);
    let mut u = LatticeCoeffs::new(1, 6, vec![]);
    u.set(vec![-1], 2, c(1.1)).unwrap();
    u.set(vec![0], -4, Complex64::new(0.4, 0.2)).unwrap();
    u.set(vec![1], 3, Complex64::new(-0.25, 0.15)).unwrap();
    let p = 1;
    let kernel = jacobian_kernel(&u, &eig, p, None).unwrap();
    let h = 1e-7;
    let radius = Some(4i64);

    // Perturb u at (m, l) by +-h and +-ih; central differences give
    // D_re = E00(n - m) + E01(n + m) and D_im = E00(n - m) - E01(n + m),
    // which pins both analytic blocks.
    let probes = [(vec![-1i64], 2i64), (vec![0], -4), (vec![1], 3), (vec![2], 0)];
    for (m, l) in probes {
        let eval = |hc: Complex64| -> (EigenSlabs, EigenSlabs) {
            let mut up = u.clone();
            up.set(m.clone(), l, u.get(&m, l) + hc).unwrap();
            (
                assemble_w(&up, &eig, p, WSector::Plain, radius).unwrap(),
                assemble_w(&up, &eig, p, WSector::Tilde, radius).unwrap(),
            )
        };
        let (wp_p, wt_p) = eval(c(h));
        let (wp_m, wt_m) = eval(c(-h));
        let (wp_ip, wt_ip) = eval(Complex64::new(0.0, h));
        let (wp_im, wt_im) = eval(Complex64::new(0.0, -h));
        for n in [vec![-1i64], vec![0], vec![1], vec![-3]] {
            for j in [-6i64, 0, 4] {
                let idx = eig.idx(j);
                let d_re = (wp_p.get(&n, idx) - wp_m.get(&n, idx)) / (2.0 * h);
                let d_im = (wp_ip.get(&n, idx) - wp_im.get(&n, idx))
                    / Complex64::new(0.0, 2.0 * h);
                let off_minus: Vec<i64> = n.iter().zip(&m).map(|(a, b)| a - b).collect();
                let off_plus: Vec<i64> = n.iter().zip(&m).map(|(a, b)| a + b).collect();
                let e00 = kernel.entry(&eig, 0, 0, &off_minus, j, l);
                let e01 = kernel.entry(&eig, 0, 1, &off_plus, j, l);
                let fd00 = (d_re + d_im) * 0.5;
                let fd01 = (d_re - d_im) * 0.5;
                let tol = 1e-6 * (1.0 + e00.norm().max(e01.norm()));
                assert!((fd00 - e00).norm() <= tol, "E00 at n={n:?} j={j}: {fd00} vs {e00}");
                assert!((fd01 - e01).norm() <= tol, "E01 at n={n:?} j={j}: {fd01} vs {e01}");

                let dt_re = (wt_p.get(&n, idx) - wt_m.get(&n, idx)) / (2.0 * h);
                let dt_im = (wt_ip.get(&n, idx) - wt_im.get(&n, idx))
                    / Complex64::new(0.0, 2.0 * h);
                let e10 = kernel.entry(&eig, 1, 0, &off_minus, j, l);
                let e11 = kernel.entry(&eig, 1, 1, &off_plus, j, l);
                let fd10 = (dt_re + dt_im) * 0.5;
                let fd11 = (dt_re - dt_im) * 0.5;
                let tol = 1e-6 * (1.0 + e10.norm().max(e11.norm()));
                assert!((fd10 - e10).norm() <= tol, "E10 at n={n:?} j={j}");
                assert!((fd11 - e11).norm() <= tol, "E11 at n={n:?} j={j}");
            }
        }
    }
}

#[test]
fn jacobian_apply_agrees_with_entries() {
    let eig = fixture(10, 53);
    let len = eig.box_.len();
    let mut u = LatticeCoeffs::new(1, 4, vec![]);
    u.set(vec![-1], 1, c(1.3)).unwrap();
    u.set(vec![1], -2, Complex64::new(0.2, 0.4)).unwrap();
    let kernel = jacobian_kernel(&u, &eig, 1, None).unwrap();

    let mut z = DoubledSlabs::new(1, len);
    for (i, j) in eig.labels().enumerate() {
        z.plus.slab_mut(&[0])[eig.idx(j)] = Complex64::new(0.1 * i as f64, -0.05);
        z.minus.slab_mut(&[1])[eig.idx(j)] = Complex64::new(0.02, 0.03 * i as f64);
    }
    let out = kernel.apply(&eig, &z, 3, 0.0);
    // Entry-wise reconstruction at a few output vertices.
    for n in [vec![0i64], vec![1], vec![-1], vec![2]] {
        for j in [-3i64, 0, 2] {
            let mut want_plus = Complex64::new(0.0, 0.0);
            let mut want_minus = Complex64::new(0.0, 0.0);
            for (np, slab) in &z.plus.slabs {
                let off: Vec<i64> = n.iter().zip(np).map(|(a, b)| a - b).collect();
                for jp in eig.labels() {
                    let zv = slab[eig.idx(jp)];
                    want_plus += kernel.entry(&eig, 0, 0, &off, j, jp) * zv;
                    want_minus += kernel.entry(&eig, 1, 0, &off, j, jp) * zv;
                }
            }
            for (np, slab) in &z.minus.slabs {
                let off: Vec<i64> = n.iter().zip(np).map(|(a, b)| a - b).collect();
                for jp in eig.labels() {
                    let zv = slab[eig.idx(jp)];
                    want_plus += kernel.entry(&eig, 0, 1, &off, j, jp) * zv;
                    want_minus += kernel.entry(&eig, 1, 1, &off, j, jp) * zv;
                }
            }
            let got_plus = out.plus.get(&n, eig.idx(j));
            let got_minus = out.minus.get(&n, eig.idx(j));
            assert!((got_plus - want_plus).norm() < 1e-11, "plus at {n:?},{j}");
            assert!((got_minus - want_minus).norm() < 1e-11, "minus at {n:?},{j}");
        }
    }
}

#[test]
fn first_order_expansion_tracks_jacobian() {
    let eig = fixture(12, 61);
    let len = eig.box_.len();
    let mut u = LatticeCoeffs::new(1, 5, vec![]);
    u.set(vec![-1], 0, c(1.4)).unwrap();
    u.set(vec![0], 2, Complex64::new(0.3, -0.1)).unwrap();
    let kernel = jacobian_kernel(&u, &eig, 1, None).unwrap();

    let eps = 1e-4;
    let mut w_dir = LatticeCoeffs::new(1, 5, vec![]);
    w_dir.set(vec![1], -1, c(1.0)).unwrap();
    w_dir.set(vec![0], 3, Complex64::new(0.0, 1.0)).unwrap();

    let mut u_pert = u.clone();
    for ((n, j), &v) in w_dir.iter() {
        u_pert.set(n.clone(), *j, u.get(n, *j) + v * eps).unwrap();
    }
    let radius = Some(3i64);
    let w0 = assemble_w(&u, &eig, 1, WSector::Plain, radius).unwrap();
    let w1 = assemble_w(&u_pert, &eig, 1, WSector::Plain, radius).unwrap();

    // Direction in doubled coordinates: (w, conj flip of w).
    let mut z = DoubledSlabs::new(1, len);
    for ((n, j), &v) in w_dir.iter() {
        z.plus.slab_mut(n)[eig.idx(*j)] = v;
        let flipped: Vec<i64> = n.iter().map(|&k| -k).collect();
        z.minus.slab_mut(&flipped)[eig.idx(*j)] += v.conj();
    }
    let lin = kernel.apply(&eig, &z, 3, 0.0);
    let mut worst = 0.0f64;
    for (n, slab) in &w1.slabs {
        for (idx, &v1) in slab.iter().enumerate() {
            let v0 = w0.get(n, idx);
            let predicted = lin.plus.get(n, idx) * eps;
            worst = worst.max((v1 - v0 - predicted).norm());
        }
    }
    // Quadratic remainder at ||w|| ~ 1e-4 sits near 1e-8.
    assert!(worst < 1e-6, "first-order mismatch {worst}");
}

#[test]
fn tiny_budget_reports_resource_error() {
    let eig = fixture(10, 3);
    let mut u = LatticeCoeffs::new(1, 4, vec![]);
    u.set(vec![-1], 0, c(1.0)).unwrap();
    u.set(vec![1], 1, c(0.5)).unwrap();
    let err = assemble_w_budgeted(&u, &eig, 1, WSector::Plain, None, 3).unwrap_err();
    assert!(matches!(err, Error::Resource(_)), "{err}");
}

#[test]
fn coeffs_jsonl_roundtrip_and_floor() {
    let mut u = LatticeCoeffs::new(2, 6, vec![4]);
    u.set(vec![-1, 0], 4, Complex64::new(1.5, 0.0)).unwrap();
    u.set(vec![0, 1], 2, Complex64::new(-0.25, 0.125)).unwrap();
    u.set(vec![1, 1], 5, Complex64::new(1e-301, 0.0)).unwrap();
    assert_eq!(u.len(), 2, "sub-floor entry must not be stored");
    let text = u.to_jsonl();
    let back = LatticeCoeffs::from_jsonl(2, 6, vec![4], &text).unwrap();
    assert_eq!(u, back);
    assert_eq!(text, back.to_jsonl());
    // Support radius is enforced on insert.
    let mut tight = LatticeCoeffs::new(1, 2, vec![]);
    assert!(tight.set(vec![5], 0, c(1.0)).is_err());
    assert!(tight.set(vec![0], 9, c(1.0)).is_err());
}

#[test]
fn jacobian_entries_decay_with_combined_distance() {
    // Fitted decay of |entry| against |n - n'| + jdist(j) + jdist(j') must
    // be at least half the weakest eigenfunction decay rate.
    let eig = fixture(64, 11);
    let sel_label = 45i64;
    let mut u = LatticeCoeffs::new(1, 300, vec![sel_label]);
    u.set(vec![-1], sel_label, c(1.5)).unwrap();
    let kernel = jacobian_kernel(&u, &eig, 1, None).unwrap();
    let gamma_min = eig
        .labels()
        .map(|j| {
            crate::spectral::decay_profile(eig.eigenvector(j), eig.center(j), eig.box_)
                .map(|f| f.gamma_hat)
                .unwrap_or(0.0)
        })
        .fold(f64::INFINITY, f64::min);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for off in [0i64, -2, 2] {
        for j in eig.labels().step_by(3) {
            for l in eig.labels().step_by(7) {
                let e = kernel.entry(&eig, 0, 0, &[off], j, l);
                if e.norm() > 1e-14 {
                    let dist = off.abs() + (j - sel_label).abs() + (l - sel_label).abs();
                    xs.push(-(dist as f64));
                    ys.push(e.norm().ln());
                }
            }
        }
    }
    let (slope, _, _) = crate::spectral::fit_line(&xs, &ys).unwrap();
    assert!(
        slope >= 0.5 * gamma_min,
        "fitted kernel decay {slope} below half the eigenfunction floor {gamma_min}"
    );
}
