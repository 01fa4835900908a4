// probe4: bias-frozen training on sign-grid cells
use vfalign::dynsys::*;
use vfalign::iresnet::{IResNet, TapeNet};
use vfalign::loss::{record_batch_losses, similarity, LossWeights};
use vfalign::sampling::{derive_seed, Sampler};
use vfalign::tape::Tape;
use vfalign::train::AdamState;
use rand::SeedableRng;

fn train_pair_nobias(f: &VectorField, g: &VectorField, n: usize, batches: usize, seed: u64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for r in 0..2u64 {
        let mut phi = IResNet::init(n, 10, 0.99, derive_seed(seed, 1000 + r)).unwrap();
        let mut psi = IResNet::init(n, 10, 0.99, derive_seed(seed, 2000 + r)).unwrap();
        let mut opt_phi = AdamState::new(&phi.params());
        let mut opt_psi = AdamState::new(&psi.params());
        let mut p = Sampler::standard_normal(n, derive_seed(seed, 3000 + r));
        let mut q = Sampler::standard_normal(n, derive_seed(seed, 4000 + r));
        for _ in 0..batches {
            for (ff, gg, pp, swap) in [(f, g, &mut p, false), (g, f, &mut q, true)] {
                let x = pp.draw(128).unwrap();
                let mut tape = Tape::new();
                let (ba, bb) = if !swap {
                    (TapeNet::bind(&mut tape, &phi), TapeNet::bind(&mut tape, &psi))
                } else {
                    (TapeNet::bind(&mut tape, &psi), TapeNet::bind(&mut tape, &phi))
                };
                let rec = record_batch_losses(&mut tape, ff, gg, &x, &ba, &bb, LossWeights::default()).unwrap();
                let mut grads = tape.backward(rec.total).unwrap();
                let ga: Vec<_> = ba.param_ids().iter().enumerate().map(|(k, &id)| {
                    let mut g = grads.take_or_zeros(id, tape.value(id).shape());
                    if k % 4 == 1 || k % 4 == 3 { g.scale_assign(0.0); }   // freeze b1, b2
                    g
                }).collect();
                let gb: Vec<_> = bb.param_ids().iter().enumerate().map(|(k, &id)| {
                    let mut g = grads.take_or_zeros(id, tape.value(id).shape());
                    if k % 4 == 1 || k % 4 == 3 { g.scale_assign(0.0); }
                    g
                }).collect();
                if !swap {
                    opt_phi.step(&mut phi.params_mut(), &ga, 0.001).unwrap();
                    opt_psi.step(&mut psi.params_mut(), &gb, 0.001).unwrap();
                } else {
                    opt_psi.step(&mut psi.params_mut(), &ga, 0.001).unwrap();
                    opt_phi.step(&mut phi.params_mut(), &gb, 0.001).unwrap();
                }
                phi.project_spectral_norms();
                psi.project_spectral_norms();
            }
        }
        let mut pe = Sampler::standard_normal(n, derive_seed(seed, 5000 + r));
        let mut qe = Sampler::standard_normal(n, derive_seed(seed, 6000 + r));
        let rep = similarity(f, g, &phi, &psi, &mut pe, &mut qe, 3000).unwrap();
        best = best.max(rep.similarity);
    }
    best
}

fn main() {
    let n = 8;
    let batches: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1500);
    for (pct, na, nb) in [(100, 4usize, 4usize), (75, 2, 4), (50, 2, 6), (25, 0, 6), (0, 0, 8)] {
        let mut sims = Vec::new();
        for k in 0..3u64 {
            let seed = derive_seed(8800 + pct as u64, k);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let s1 = random_linear_with_signs(n, na, EigenPairing::Real, &mut rng).unwrap();
            let s2 = random_linear_with_signs(n, nb, EigenPairing::Real, &mut rng).unwrap();
            sims.push(train_pair_nobias(&s1.field(), &s2.field(), n, batches, seed));
        }
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        println!("no-bias {pct}%: mean={mean:.4} {:?}", sims.iter().map(|x| (x*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
}
