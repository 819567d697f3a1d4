use devlab::iet::{Iet, PermutationPair};
use devlab::renorm::*;
use devlab::singular::SingularCocycle;
use devlab::birkhoff::*;
use devlab::correction::*;
use rand::{Rng, SeedableRng};
fn main() {
    let mut results = Vec::new();
    for iet_seed in [53u64, 101, 202] {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(iet_seed);
        let raw: Vec<f64> = (0..4).map(|_| -rng.gen_range(0.0f64..1.0f64).ln()).collect();
        let tot: f64 = raw.iter().sum();
        let iet = Iet::new(PermutationPair::symmetric(4), raw.iter().map(|x| x / tot).collect()).unwrap();
        let state = accelerate(&iet, default_kappa(4), 30, &AccelOptions::default()).unwrap();
        let data = devlab::oseledets::class_exponents(&state.base, state.kappa_target, 4000, 2, 9).unwrap();
        let l1z = data.exponents_zorich[0];
        for phi_seed in 0..4u64 {
            let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(1000 + phi_seed);
            let d = 4; let perm = state.base.perm();
            let mut cp: Vec<f64> = (0..d).map(|_| rng2.gen_range(-1.0..1.0)).collect();
            let mut cm: Vec<f64> = (0..d).map(|_| rng2.gen_range(-1.0..1.0)).collect();
            cm[perm.symbol_at(0, d - 1)] = 0.0;
            cp[perm.symbol_at(0, 0)] = 0.0;
            let sm: Vec<Vec<f64>> = (0..d).map(|_| (0..3).map(|_| rng2.gen_range(-0.5..0.5)).collect()).collect();
            let phi = SingularCocycle::new(&state.base, 1.0/3.0, &cp, &cm, &sm).unwrap();
            let mut budget = OrbitBudget::new(8_000_000_000);
            let (_, res) = correct_observable(&phi, &state, &data.exponents_block, 2, 22, &mut budget).unwrap();
            let g = corrected_growth(&state, &res);
            println!("iet {iet_seed} phi {phi_seed}: depth {} raw_z {:.3} cor_z {:.3} (l1z {:.3}, target {:.3})",
                res.depth, g.raw_exponent_zorich, g.corrected_exponent_zorich, l1z, l1z*(1.0/3.0+0.1));
            results.push((g.raw_exponent_zorich/l1z, g.corrected_exponent_zorich/l1z));
        }
    }
    let mut cors: Vec<f64> = results.iter().map(|r| r.1).collect();
    cors.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("corrected/lambda1 quantiles: min {:.3} med {:.3} max {:.3}", cors[0], cors[cors.len()/2], cors[cors.len()-1]);
    let raws: Vec<f64> = results.iter().map(|r| r.0).collect();
    println!("raw/lambda1: {:?}", raws.iter().map(|x| format!("{:.2}", x)).collect::<Vec<_>>());
}
