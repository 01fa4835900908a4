// probe2: sign-grid budget sweep + shear-warp contrast construction
use vfalign::dynsys::*;
use vfalign::iresnet::{IResNet, ResidualBlock};
use vfalign::linalg;
use vfalign::sampling::{derive_seed, Sampler};
use vfalign::svcca::svcca_similarity;
use vfalign::tensor::Tensor;
use vfalign::train::{train, TrainConfig};
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn linear_pair_run(a1: Tensor, a2: Tensor, batches: usize, restarts: usize, seed: u64) -> f64 {
    let f = VectorField::Linear { a: a1, bias: None };
    let g = VectorField::Linear { a: a2, bias: None };
    let n = f.dim();
    let p = Sampler::standard_normal(n, derive_seed(seed, 11));
    let q = Sampler::standard_normal(n, derive_seed(seed, 12));
    let mut cfg = TrainConfig::new(batches, seed);
    cfg.restarts = restarts;
    cfg.eval_every = 1_000_000;
    cfg.eval_samples = 4000;
    train(&f, &g, &p, &q, &cfg).map(|o| o.record.final_report.similarity).unwrap_or(f64::NAN)
}

/// Shear block: g(x) = c·relu(k(x·w − a))·d  (displacement along d beyond the
/// hyperplane x·w = a). σ(W1)=k, σ(W2)=c/k·|d|.
fn shear_block(dim: usize, w: &[f64], a: f64, d: &[f64], strength: f64) -> ResidualBlock {
    let h = 2 * dim;
    let k = 0.98;
    let mut w1 = Tensor::zeros(vec![h, dim]);
    for (j, &wj) in w.iter().enumerate() {
        w1.set(0, j, k * wj);
    }
    let mut b1 = Tensor::zeros(vec![h]);
    b1.data_mut()[0] = -k * a;
    let mut w2 = Tensor::zeros(vec![dim, h]);
    let dn: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    for (i, &di) in d.iter().enumerate() {
        w2.set(i, 0, strength / k * di / dn);
    }
    ResidualBlock { w1, b1, w2, b2: Tensor::zeros(vec![dim]) }
}

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_default();

    if which == "siggrid_budget" {
        for batches in [400usize, 800, 1200] {
            let mut line = format!("batches={batches}:");
            for (pct, na, nb) in [(100, 4usize, 4usize), (75, 2, 4), (50, 2, 6), (25, 0, 6), (0, 0, 8)] {
                let mut sims = Vec::new();
                for k in 0..3u64 {
                    let seed = derive_seed(8800 + pct as u64, k);
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                    let s1 = random_linear_with_signs(8, na, EigenPairing::Real, &mut rng).unwrap();
                    let s2 = random_linear_with_signs(8, nb, EigenPairing::Real, &mut rng).unwrap();
                    sims.push(linear_pair_run(s1.a, s2.a, batches, 2, seed));
                }
                let mean = sims.iter().sum::<f64>() / sims.len() as f64;
                line.push_str(&format!("  {pct}%={mean:.3}"));
            }
            println!("{line}");
        }
    }

    if which == "shearwarp" {
        let t0 = Instant::now();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4242);
        let layers = 20;
        let mut blocks = Vec::new();
        for _ in 0..layers {
            let ang = rng.gen::<f64>() * std::f64::consts::TAU;
            let w = [ang.cos(), ang.sin()];
            let a = -2.0 + 4.0 * rng.gen::<f64>();
            let dang = rng.gen::<f64>() * std::f64::consts::TAU;
            let d = [dang.cos(), dang.sin()];
            blocks.push(shear_block(2, &w, a, &d, 0.9));
        }
        let mut warp = IResNet::from_blocks(2, 0.99, blocks).unwrap();
        warp.project_spectral_norms();

        let g = VectorField::Pitchfork { mu: 9.0 };
        let f = pullback_field(&warp, &g);
        for x in [[0.4, -1.2], [2.5, 1.0]] {
            let xb = Tensor::matrix(1, 2, x.to_vec());
            let fx = f.eval(&x).unwrap();
            let (y, t) = warp.forward_with_tangent(&xb, &Tensor::matrix(1, 2, fx)).unwrap();
            let gy = g.eval(y.row(0)).unwrap();
            let err = (t.data()[0] - gy[0]).abs() + (t.data()[1] - gy[1]).abs();
            println!("conjugacy residual at {x:?}: {err:.2e}");
        }
        // displacement spread over the support: how non-affine is the warp?
        let mut box_s = Sampler::uniform_box(vec![-4.5, -1.5], vec![4.5, 1.5], 9).unwrap();
        let pts = box_s.draw(500).unwrap();
        let ys = warp.forward(&pts).unwrap();
        let disp = ys.sub(&pts).unwrap();
        let mean_disp: f64 = (0..500).map(|i| disp.row(i).iter().map(|v| v*v).sum::<f64>().sqrt()).sum::<f64>() / 500.0;
        println!("mean displacement {mean_disp:.2}");

        // SVCCA: trials from box ICs in x-space, matched B ICs = warp(x0); short T.
        let svcca = {
            let mut pa = Sampler::uniform_box(vec![-4.5, -1.5], vec![4.5, 1.5], 10).unwrap();
            let pts = pa.draw(300).unwrap();
            let mapped = warp.forward(&pts).unwrap();
            let pool_a: Vec<Vec<f64>> = (0..pts.rows()).map(|i| pts.row(i).to_vec()).collect();
            let pool_b: Vec<Vec<f64>> = (0..mapped.rows()).map(|i| mapped.row(i).to_vec()).collect();
            let sa = Sampler::from_pool(pool_a, 5).unwrap();
            let sb = Sampler::from_pool(pool_b, 5).unwrap();
            svcca_similarity(&f, &g, &sa, &sb, 60, 0.02, 4.0, 0.0, 77).unwrap()
        };
        println!("shear-warp svcca = {svcca:.4} ({:?})", t0.elapsed());

        // DFORM on the pair
        let p = Sampler::uniform_box(vec![-4.5, -1.5], vec![4.5, 1.5], 43).unwrap();
        let q = {
            let mut tmp = Sampler::uniform_box(vec![-4.5, -1.5], vec![4.5, 1.5], 44).unwrap();
            let pts = tmp.draw(20000).unwrap();
            let mapped = warp.forward(&pts).unwrap();
            Sampler::from_pool((0..mapped.rows()).map(|i| mapped.row(i).to_vec()).collect(), 45).unwrap()
        };
        let t1 = Instant::now();
        let mut cfg = TrainConfig::new(2000, 2718);
        cfg.restarts = 2;
        cfg.layers = 20;
        cfg.eval_every = 1_000_000;
        cfg.eval_samples = 4000;
        match train(&f, &g, &p, &q, &cfg) {
            Ok(out) => println!("shear-warp dform: {:.4} (fwd {:.3} bwd {:.3}) ({:?})", out.record.final_report.similarity, out.record.final_report.sim_forward, out.record.final_report.sim_backward, t1.elapsed()),
            Err(e) => println!("shear-warp dform FAILED: {e}"),
        }
        println!("total {:?}", t0.elapsed());
    }
}
