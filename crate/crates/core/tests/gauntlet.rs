//! Noise sufficiency of every preset: encrypt, multiply by a plaintext,
//! HomShare, decrypt, recombine.

use ensei_core::hss::{hom_rec, hom_share, open_share, recombine_clear};
use ensei_core::params::{preset, PRESET_NAMES};
use ensei_core::ringbfv::{Bfv, PlainVec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

#[test]
fn presets_survive_share_cycles() {
    for name in PRESET_NAMES {
        let params = preset(name).unwrap();
        let chain = &params.chain;
        let bfv = Bfv::new(&params.rlwe).unwrap();
        let n = bfv.n();
        let pe = chain.p_e();
        let mut rng = ChaCha20Rng::seed_from_u64(0x9a);
        let sk = bfv.keygen(&mut rng);
        for _ in 0..1000 {
            let u = PlainVec::new((0..n).map(|_| pe.sample_uniform(&mut rng)).collect());
            let w = PlainVec::new((0..n).map(|_| pe.sample_uniform(&mut rng)).collect());
            let ct = bfv.encrypt(&u, &sk, &mut rng).unwrap();
            let prod = bfv.mul_plain(&ct, &w).unwrap();
            let pair = hom_share(&bfv, &prod, chain, &mut rng).unwrap();
            let s_a = open_share(&bfv, &pair.alice_ct, &sk, chain).unwrap();
            let y = recombine_clear(&s_a, &pair.bob_share.slots, chain.p_a()).unwrap();
            let expect: Vec<_> = u.slots.iter().zip(&w.slots).map(|(&a, &b)| pe.mul_mod(a, b)).collect();
            assert_eq!(y, expect, "{name}");
        }
    }
}

#[test]
fn medium_chained_share_and_rec() {
    let params = preset("medium").unwrap();
    let chain = &params.chain;
    let bfv = Bfv::new(&params.rlwe).unwrap();
    let pe = chain.p_e();
    let mut rng = ChaCha20Rng::seed_from_u64(0x9b);
    let sk = bfv.keygen(&mut rng);
    for _ in 0..20 {
        let m = PlainVec::new((0..bfv.n()).map(|_| pe.sample_uniform(&mut rng)).collect());
        let mut ct = bfv.encrypt(&m, &sk, &mut rng).unwrap();
        for _ in 0..5 {
            let pair = hom_share(&bfv, &ct, chain, &mut rng).unwrap();
            ct = hom_rec(&bfv, &pair.alice_ct, &pair.bob_share, chain).unwrap();
        }
        let got = open_share(&bfv, &ct, &sk, chain).unwrap();
        assert_eq!(got, m.slots);
    }
}
