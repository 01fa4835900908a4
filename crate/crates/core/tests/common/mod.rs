//! Independent oracles for integration tests. Everything here avoids the
//! implementation paths it checks: singular values come from one-sided
//! Jacobi rotations rather than power iteration, eigenvalues from
//! characteristic-polynomial root finding rather than the constructors,
//! and gradients from central finite differences rather than the tape.

#![allow(dead_code)]

use vfalign::tensor::Tensor;

/// Largest singular value by one-sided Jacobi: rotate column pairs until
/// all are mutually orthogonal, then read off column norms.
pub fn jacobi_svd_max_singular(w: &Tensor) -> f64 {
    let a = if w.rows() >= w.cols() { w.clone() } else { w.transpose() };
    let (m, n) = (a.rows(), a.cols());
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.at(i, j)).collect()).collect();
    for _ in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in p + 1..n {
                let app: f64 = cols[p].iter().map(|x| x * x).sum();
                let aqq: f64 = cols[q].iter().map(|x| x * x).sum();
                let apq: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                off = off.max(apq.abs());
                if apq.abs() < 1e-15 * (app * aqq).sqrt().max(1e-300) {
                    continue;
                }
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (c, s) = (theta.cos(), theta.sin());
                for i in 0..m {
                    let vp = cols[p][i];
                    let vq = cols[q][i];
                    cols[p][i] = c * vp + s * vq;
                    cols[q][i] = -s * vp + c * vq;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    cols.iter()
        .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Eigenvalues of a real square matrix via characteristic-polynomial
/// coefficients (Faddeev-LeVerrier) and Durand-Kerner root iteration.
/// Returns (re, im) pairs; intended for n ≤ 8.
pub fn char_poly_eigenvalues(a: &Tensor) -> Vec<(f64, f64)> {
    let n = a.rows();
    assert_eq!(a.cols(), n);
    // p(λ) = λⁿ + c[0] λⁿ⁻¹ + ... + c[n-1]
    let mut coeffs = vec![0.0; n];
    let mut m = a.clone();
    let mut c = -trace(&m);
    coeffs[0] = c;
    for k in 2..=n {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted.set(i, i, shifted.at(i, i) + c);
        }
        m = a.matmul(&shifted).unwrap();
        c = -trace(&m) / k as f64;
        coeffs[k - 1] = c;
    }
    durand_kerner(&coeffs)
}

fn trace(a: &Tensor) -> f64 {
    (0..a.rows()).map(|i| a.at(i, i)).sum()
}

fn durand_kerner(coeffs: &[f64]) -> Vec<(f64, f64)> {
    let n = coeffs.len();
    let eval = |re: f64, im: f64| -> (f64, f64) {
        // Horner on monic polynomial with real coefficients.
        let (mut pr, mut pi) = (1.0, 0.0);
        for &c in coeffs {
            let nr = pr * re - pi * im + c;
            let ni = pr * im + pi * re;
            pr = nr;
            pi = ni;
        }
        (pr, pi)
    };
    // Initial guesses on a spiral, never real so conjugate pairs can split.
    let mut roots: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let ang = 0.7 + 2.2 * k as f64;
            let r = 0.6 + 0.4 * k as f64;
            (r * ang.cos(), r * ang.sin())
        })
        .collect();
    for _ in 0..300 {
        let mut max_step = 0.0_f64;
        for i in 0..n {
            let (pr, pi) = eval(roots[i].0, roots[i].1);
            // denom = Π_{j≠i} (z_i − z_j)
            let (mut dr, mut di) = (1.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let zr = roots[i].0 - roots[j].0;
                let zi = roots[i].1 - roots[j].1;
                let nr = dr * zr - di * zi;
                let ni = dr * zi + di * zr;
                dr = nr;
                di = ni;
            }
            let denom = dr * dr + di * di;
            if denom < 1e-300 {
                continue;
            }
            let sr = (pr * dr + pi * di) / denom;
            let si = (pi * dr - pr * di) / denom;
            roots[i].0 -= sr;
            roots[i].1 -= si;
            max_step = max_step.max((sr * sr + si * si).sqrt());
        }
        if max_step < 1e-13 {
            break;
        }
    }
    roots
}

/// Signs of eigenvalue real parts, `(positive, negative)` counts, with
/// real-vs-complex classification at the given tolerance.
pub struct SpectrumSigns {
    pub pos: usize,
    pub neg: usize,
    pub real: usize,
    pub complex: usize,
}

pub fn spectrum_signs(a: &Tensor, tol: f64) -> SpectrumSigns {
    let eig = char_poly_eigenvalues(a);
    let mut s = SpectrumSigns { pos: 0, neg: 0, real: 0, complex: 0 };
    for (re, im) in eig {
        if re > tol {
            s.pos += 1;
        } else if re < -tol {
            s.neg += 1;
        }
        if im.abs() > tol {
            s.complex += 1;
        } else {
            s.real += 1;
        }
    }
    s
}

/// Sorted eigenvalues for multiset comparison.
pub fn sorted_eigenvalues(a: &Tensor) -> Vec<(f64, f64)> {
    let mut eig = char_poly_eigenvalues(a);
    eig.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.abs().partial_cmp(&y.1.abs()).unwrap())
    });
    eig
}

/// Dense points on the Van der Pol limit cycle, found by long RK4
/// integration past the transient.
pub fn vdp_limit_cycle(mu: f64) -> Vec<[f64; 2]> {
    let dt = 0.005;
    let mut x = [2.0, 0.0];
    let step = |x: &mut [f64; 2]| {
        let f = |p: [f64; 2]| [p[1], mu * (1.0 - p[0] * p[0]) * p[1] - p[0]];
        let k1 = f(*x);
        let k2 = f([x[0] + 0.5 * dt * k1[0], x[1] + 0.5 * dt * k1[1]]);
        let k3 = f([x[0] + 0.5 * dt * k2[0], x[1] + 0.5 * dt * k2[1]]);
        let k4 = f([x[0] + dt * k3[0], x[1] + dt * k3[1]]);
        x[0] += dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        x[1] += dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    };
    // Transient: 100 time units is plenty for μ in [1, 4].
    for _ in 0..20_000 {
        step(&mut x);
    }
    // One generous period's worth of points.
    (0..6000)
        .map(|_| {
            step(&mut x);
            x
        })
        .collect()
}

/// Distance from a point to the polyline through `cycle`.
pub fn distance_to_cycle(p: &[f64], cycle: &[[f64; 2]]) -> f64 {
    let mut best = f64::INFINITY;
    for w in cycle.windows(2) {
        let (a, b) = (w[0], w[1]);
        let abx = b[0] - a[0];
        let aby = b[1] - a[1];
        let apx = p[0] - a[0];
        let apy = p[1] - a[1];
        let denom = abx * abx + aby * aby;
        let t = if denom > 0.0 { ((apx * abx + apy * aby) / denom).clamp(0.0, 1.0) } else { 0.0 };
        let dx = apx - t * abx;
        let dy = apy - t * aby;
        best = best.min((dx * dx + dy * dy).sqrt());
    }
    best
}

/// Spectral-radius estimate of a nonsymmetric matrix from the growth
/// rate of repeated application.
pub fn spectral_radius_estimate(w: &Tensor) -> f64 {
    let n = w.rows();
    let mut v: Vec<f64> = (0..n).map(|i| ((i * 2654435761) % 1000) as f64 / 1000.0 + 0.1).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = norm(&v);
    for x in v.iter_mut() {
        *x /= nv;
    }
    let mut log_growth_sum = 0.0;
    let mut counted = 0;
    for it in 0..400 {
        let next = w.matvec(&v).unwrap();
        let g = norm(&next);
        if g < 1e-300 {
            return 0.0;
        }
        v = next.into_iter().map(|x| x / g).collect();
        if it >= 200 {
            log_growth_sum += g.ln();
            counted += 1;
        }
    }
    (log_growth_sum / counted as f64).exp()
}
