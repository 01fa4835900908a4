// probe: sign-grid cells, table-2 classes, rnn pairs, ablation, warp contrast
use vfalign::dynsys::*;
use vfalign::iresnet::IResNet;
use vfalign::linalg;
use vfalign::loss::LossWeights;
use vfalign::sampling::{derive_seed, AsymptoticParams, Sampler};
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

fn main() {
    let which: String = std::env::args().nth(1).unwrap_or_default();

    if which == "signgrid" || which.is_empty() {
        let t0 = Instant::now();
        // groups by n_pos of 8, real eigenvalues
        let cells: Vec<(usize, Vec<(usize, usize)>)> = vec![
            (100, vec![(0,0),(4,4),(8,8)]),
            (75, vec![(0,2),(2,4),(6,8)]),
            (50, vec![(0,4),(2,6),(4,8)]),
            (25, vec![(0,6),(2,8),(0,6)]),
            (0, vec![(0,8),(0,8),(0,8)]),
        ];
        for (pct, pairs) in cells {
            let mut sims = Vec::new();
            for (k, &(na, nb)) in pairs.iter().enumerate() {
                let seed = derive_seed(8800 + pct as u64, k as u64);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let s1 = random_linear_with_signs(8, na, EigenPairing::Real, &mut rng).unwrap();
                let s2 = random_linear_with_signs(8, nb, EigenPairing::Real, &mut rng).unwrap();
                sims.push(linear_pair_run(s1.a, s2.a, 2500, 2, seed));
            }
            let mean = sims.iter().sum::<f64>() / sims.len() as f64;
            println!("signgrid {pct}%: mean={mean:.4} {sims:?}");
        }
        println!("signgrid elapsed {:?}", t0.elapsed());
    }

    if which == "table2" || which.is_empty() {
        let t0 = Instant::now();
        for class in ["orthogonal", "invertible"] {
            let mut sims = Vec::new();
            for k in 0..5u64 {
                let seed = derive_seed(9900, k);
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let s1 = random_linear_with_signs(8, 4, EigenPairing::Real, &mut rng).unwrap();
                let q = if class == "orthogonal" { linalg::random_rotation(&mut rng, 8) } else {
                    // random invertible with positive det
                    let m = linalg::random_well_conditioned(&mut rng, 8, 0.5, 2.0);
                    if linalg::det(&m).unwrap() < 0.0 {
                        let mut m2 = m.clone();
                        for j in 0..8 { let v = -m2.at(0,j); m2.set(0,j,v); }
                        m2
                    } else { m }
                };
                let a2 = q.matmul(&s1.a).unwrap().matmul(&linalg::inverse(&q).unwrap()).unwrap();
                sims.push(linear_pair_run(s1.a.clone(), a2, 3000, 3, seed));
            }
            let mean = sims.iter().sum::<f64>() / sims.len() as f64;
            println!("table2 {class}: mean={mean:.4} {sims:?}");
        }
        println!("table2 elapsed {:?}", t0.elapsed());
    }

    if which == "rnn" || which.is_empty() {
        let t0 = Instant::now();
        let mut sims = Vec::new();
        for k in 0..3u64 {
            let seed = derive_seed(7700, k);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let spec = random_lowrank_rnn(16, 2, &mut rng, true);
            let f = spec.field();
            let qm = linalg::random_rotation(&mut rng, 16);
            let g = make_conjugate(&f, &qm).unwrap();
            let p = Sampler::standard_normal(16, derive_seed(seed, 1));
            let q = Sampler::standard_normal(16, derive_seed(seed, 2));
            let mut cfg = TrainConfig::new(6000, seed);
            cfg.restarts = 3;
            cfg.eval_every = 1_000_000;
            cfg.eval_samples = 4000;
            let s = train(&f, &g, &p, &q, &cfg).unwrap().record.final_report.similarity;
            println!("  rnn pair {k}: {s:.4}");
            sims.push(s);
        }
        println!("rnn mean={:.4} elapsed {:?}", sims.iter().sum::<f64>() / 3.0, t0.elapsed());
    }

    if which == "ablation" || which.is_empty() {
        let t0 = Instant::now();
        for (name, w) in [
            ("full", LossWeights::default()),
            ("no_backward", LossWeights { forward: 1.0, backward: 0.0, inverse: 1.0 }),
            ("no_inverse", LossWeights { forward: 1.0, backward: 1.0, inverse: 0.0 }),
        ] {
            let mut sims: Vec<f64> = (0..5u64).map(|s| {
                let seed = 500 + s;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mu = 2.0 + 2.0 * rng.gen::<f64>();
                let f = VectorField::Pitchfork { mu };
                let q_mat = random_conjugacy(&mut rng, 2);
                let g = make_conjugate(&f, &q_mat).unwrap();
                let p = Sampler::pitchfork_box(mu, derive_seed(seed, 1));
                let q = p.clone().linear_image(q_mat, None).unwrap();
                let mut cfg = TrainConfig::new(2000, seed);
                cfg.restarts = 1;
                cfg.weights = w;
                cfg.eval_every = 1_000_000;
                cfg.eval_samples = 4000;
                train(&f, &g, &p, &q, &cfg).unwrap().record.final_report.similarity
            }).collect();
            sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
            println!("ablation {name}: median={:.4} all={:?}", sims[2], sims.iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>());
        }
        println!("ablation elapsed {:?}", t0.elapsed());
    }

    if which == "warp" || which.is_empty() {
        let t0 = Instant::now();
        let layers = 40;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(777);
        let base = IResNet::init(2, layers, 0.99, 777).unwrap();
        let mut blocks = base.blocks().to_vec();
        for b in blocks.iter_mut() {
            b.w1 = linalg::gaussian_matrix(&mut rng, 4, 2, 1.5);
            b.w2 = linalg::gaussian_matrix(&mut rng, 2, 4, 1.5);
            b.b1 = Tensor::vector(linalg::gaussian_vector(&mut rng, 4, 1.2));
            b.b2 = Tensor::vector(linalg::gaussian_vector(&mut rng, 2, 0.3));
        }
        let mut warp = IResNet::from_blocks(2, 0.99, blocks).unwrap();
        warp.project_spectral_norms();

        let g = VectorField::VanDerPol { mu: 2.0 };   // target, y-space
        let f = pullback_field(&warp, &g);            // source, x-space
        // conjugacy sanity: J_H f = g∘H at a few points
        for x in [[0.4, -1.2], [2.0, 1.0]] {
            let xb = Tensor::matrix(1, 2, x.to_vec());
            let fx = f.eval(&x).unwrap();
            let (y, t) = warp.forward_with_tangent(&xb, &Tensor::matrix(1, 2, fx)).unwrap();
            let gy = g.eval(y.row(0)).unwrap();
            let err = (t.data()[0]-gy[0]).abs() + (t.data()[1]-gy[1]).abs();
            println!("conjugacy residual at {x:?}: {err:.2e}");
        }

        // SVCCA with matched ICs: A = f from x0 (x-space), B = VDP from H(x0)
        let asymp = AsymptoticParams { sigma: 0.5, dt: 0.01, t_burn: 30.0, t_end: 60.0, trials: 300, save_every: 10 };
        let p = Sampler::asymptotic(&f, &asymp, 43).unwrap();
        println!("asymptotic pool built, discarded={} ({:?})", p.discarded_trials(), t0.elapsed());
        let svcca = {
            let mut pa = p.clone();
            let pts = pa.draw(300).unwrap();
            let mapped = warp.forward(&pts).unwrap();
            let pool_a: Vec<Vec<f64>> = (0..pts.rows()).map(|i| pts.row(i).to_vec()).collect();
            let pool_b: Vec<Vec<f64>> = (0..mapped.rows()).map(|i| mapped.row(i).to_vec()).collect();
            let sa = Sampler::from_pool(pool_a, 5).unwrap();
            let sb = Sampler::from_pool(pool_b, 5).unwrap();
            svcca_similarity(&f, &g, &sa, &sb, 40, 0.02, 8.0, 0.0, 77).unwrap()
        };
        println!("warp svcca = {svcca:.4} ({:?})", t0.elapsed());

        let q = Sampler::vdp_box(44);
        for (lbl, l, batches) in [("L10", 10usize, 2000usize), ("L20", 20, 2000)] {
            let t1 = Instant::now();
            let mut cfg = TrainConfig::new(batches, 2718);
            cfg.restarts = 2;
            cfg.layers = l;
            cfg.eval_every = 1_000_000;
            cfg.eval_samples = 4000;
            match train(&f, &g, &p, &q, &cfg) {
                Ok(out) => println!("warp dform {lbl}: {:.4} ({:?})", out.record.final_report.similarity, t1.elapsed()),
                Err(e) => println!("warp dform {lbl} FAILED: {e}"),
            }
        }
        println!("warp elapsed {:?}", t0.elapsed());
    }
}
