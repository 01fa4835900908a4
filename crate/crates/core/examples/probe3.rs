// probe3: dissect a 0%-agreement pair + dimension/budget sweeps
use vfalign::dynsys::*;
use vfalign::sampling::{derive_seed, Sampler};
use vfalign::tensor::Tensor;
use vfalign::train::{train, TrainConfig};
use rand::SeedableRng;

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_default();

    if which == "dissect" {
        let n = 8;
        let seed = 4242u64;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s1 = random_linear_with_signs(n, 0, EigenPairing::Real, &mut rng).unwrap();
        let s2 = random_linear_with_signs(n, 8, EigenPairing::Real, &mut rng).unwrap();
        let f = s1.field();
        let g = s2.field();
        let p = Sampler::standard_normal(n, derive_seed(seed, 1));
        let q = Sampler::standard_normal(n, derive_seed(seed, 2));
        let mut cfg = TrainConfig::new(1200, seed);
        cfg.restarts = 1;
        cfg.eval_every = 200;
        cfg.trace_samples = 1000;
        cfg.eval_samples = 4000;
        let out = train(&f, &g, &p, &q, &cfg).unwrap();
        let rep = &out.record.final_report;
        println!("fwd={:.4} bwd={:.4} min={:.4} excluded={}", rep.sim_forward, rep.sim_backward, rep.similarity, rep.excluded_count);
        println!("cos min/med/max = {:.3}/{:.3}/{:.3}", rep.cosine_min, rep.cosine_median, rep.cosine_max);
        for t in &out.record.restarts[0].trace {
            println!("  batch {}: fwd {:.3} bwd {:.3}", t.batch, t.sim_forward, t.sim_backward);
        }
        // independent check: FD jacobian of phi at random points, cos by hand
        let phi = &out.phi;
        let mut ps = Sampler::standard_normal(n, 777);
        let xs = ps.draw(200).unwrap();
        let eps = 1e-6;
        let mut cosines = Vec::new();
        let mut norm_ratio = Vec::new();
        for i in 0..xs.rows() {
            let x = xs.row(i).to_vec();
            let fx = f.eval(&x).unwrap();
            // u = J_phi(x) fx via central differences of phi
            let mut u = vec![0.0; n];
            for c in 0..n {
                let mut xp = x.clone(); xp[c] += eps;
                let mut xm = x.clone(); xm[c] -= eps;
                let yp = phi.forward_point(&xp).unwrap();
                let ym = phi.forward_point(&xm).unwrap();
                for r in 0..n { u[r] += (yp[r]-ym[r])/(2.0*eps) * fx[c]; }
            }
            let y = phi.forward_point(&x).unwrap();
            let gy = g.eval(&y).unwrap();
            let un: f64 = u.iter().map(|v| v*v).sum::<f64>().sqrt();
            let gn: f64 = gy.iter().map(|v| v*v).sum::<f64>().sqrt();
            let dot: f64 = u.iter().zip(&gy).map(|(a,b)| a*b).sum();
            cosines.push(dot/(un*gn));
            let xn: f64 = x.iter().map(|v| v*v).sum::<f64>().sqrt();
            let yn: f64 = y.iter().map(|v| v*v).sum::<f64>().sqrt();
            norm_ratio.push(yn/xn);
        }
        let mean_cos: f64 = cosines.iter().sum::<f64>() / cosines.len() as f64;
        let mean_ratio: f64 = norm_ratio.iter().sum::<f64>() / norm_ratio.len() as f64;
        println!("independent FD check: mean cos = {mean_cos:.4}, mean ||phi(x)||/||x|| = {mean_ratio:.3}");
        let z = phi.forward_point(&vec![0.0; n]).unwrap();
        println!("phi(0) norm = {:.3}", z.iter().map(|v| v*v).sum::<f64>().sqrt());
    }

    if which == "dims" {
        for (dim, groups) in [(2usize, vec![0usize,1,2]), (4, vec![0,1,2,3,4]), (8, vec![0,2,4,6,8])] {
            for batches in [200usize, 600, 1500] {
                let mut line = format!("dim={dim} batches={batches}:");
                // extremes and middle: (0,0) same, (0, max/2), (0, max)
                for nb in [0usize, groups[groups.len()/2], *groups.last().unwrap()] {
                    let mut sims = Vec::new();
                    for k in 0..3u64 {
                        let seed = derive_seed(31000 + dim as u64 * 100 + nb as u64, k);
                        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                        let s1 = random_linear_with_signs(dim, 0, EigenPairing::Real, &mut rng).unwrap();
                        let s2 = random_linear_with_signs(dim, nb, EigenPairing::Real, &mut rng).unwrap();
                        let f = s1.field();
                        let g = s2.field();
                        let p = Sampler::standard_normal(dim, derive_seed(seed, 1));
                        let q = Sampler::standard_normal(dim, derive_seed(seed, 2));
                        let mut cfg = TrainConfig::new(batches, seed);
                        cfg.restarts = 2;
                        cfg.eval_every = 1_000_000;
                        cfg.eval_samples = 3000;
                        sims.push(train(&f, &g, &p, &q, &cfg).unwrap().record.final_report.similarity);
                    }
                    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
                    line.push_str(&format!("  (0 vs {nb})={mean:.3}"));
                }
                println!("{line}");
            }
        }
    }
}
