use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softer::model::{SamplerSettings, SofterConfig, Symmetry};
use softer::sampler::{Chain, RngStream};
use softer::simbench::{gen_dataset, make_truth, Scenario, TruthSpec};

fn main() {
    let mut truth_rng = ChaCha8Rng::seed_from_u64(14422956694797367668);
    let truth = make_truth(&TruthSpec::Lowrank { rank: 3 }, &[20, 20], &mut truth_rng).unwrap();

    // rep 4, the catastrophic replicate: follow zeta and sigma2 sweep by sweep
    let scenario = Scenario {
        name: "rank3".into(),
        n: 200,
        truth: truth.clone(),
        noise_variance: 0.5,
        symmetry: Symmetry::None,
        seed: 3357698751085458097,
    };
    let (train, _) = gen_dataset(&scenario, 1).unwrap();
    let fit_seed = 14032982651523423537u64;
    let mut cfg = SofterConfig::default_for(vec![20, 20], 3).unwrap();
    cfg.sampler = SamplerSettings { iterations: 4000, burn_in: 0, thin: 1, chains: 1, seed: fit_seed };

    for stream in 0..2u64 {
        let mut chain = Chain::new(&cfg, &train, RngStream { seed: fit_seed, stream }).unwrap();
        println!("--- rep 4 stream {stream} ---");
        for sweep in 1..=4000usize {
            chain.sweep().unwrap();
            if sweep <= 10 || sweep % 250 == 0 {
                let st = chain.state();
                println!(
                    "sweep {sweep:5}: zeta [{:.3}, {:.3}, {:.3}] sigma2 [{:.4}, {:.4}] tau2 {:.3}",
                    st.zeta[0], st.zeta[1], st.zeta[2], st.sigma2[0], st.sigma2[1], st.tau2
                );
            }
        }
    }
}
