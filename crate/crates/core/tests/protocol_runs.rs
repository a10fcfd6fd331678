//! End-to-end protocol runs at ring degree 2048.

use std::net::TcpListener;

use ensei_core::ntt::{conv_oracle, ConvType};
use ensei_core::params::preset;
use ensei_core::protocol::{
    audit_transcript, random_matrix, random_weights, run_alice, run_bob, run_inproc, BobOptions, LayerPlan, Mode,
    Schedule, Session,
};
use ensei_core::wire::{tcp_accept, tcp_connect, transcript_bytes, Channel, Direction, MessageType, Role};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn medium_single(image: usize, filter: usize, mode: Mode) -> Session {
    Session::new(
        preset("medium").unwrap(),
        Schedule::single_conv((image, image), (filter, filter), ConvType::Same, (1, 1), None),
        mode,
        7,
    )
    .unwrap()
}

#[test]
fn single_block_byte_counts_are_exact() {
    let s = medium_single(28, 5, Mode::Baseline);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let image = vec![random_matrix(28, 28, 0, 255, &mut rng)];
    let w = random_weights(s.schedule(), -32, 31, &mut rng);
    let r = run_inproc(&s, &image, &w, BobOptions::default()).unwrap();
    let t = transcript_bytes(&r.alice_transcript);
    // header 14; ciphertext tag 1 + n 8 + two polynomials of 2048 words
    let ct_frame = 14 + 1 + 8 + 2 * 2048 * 8;
    let hello = 14 + 32;
    // count, dims, 28*28 words
    let done = 14 + 8 + 16 + 28 * 28 * 8;
    assert_eq!(ct_frame, 32791);
    assert_eq!(t.alice_to_bob, (hello + ct_frame) as u64);
    assert_eq!(t.bob_to_alice, (hello + ct_frame + done) as u64);
    assert_eq!(t.by_type[&(Direction::AliceToBob, MessageType::CiphertextBlocks)], ct_frame as u64);
    assert_eq!(t.total(), r.alice_transcript.entries().iter().map(|e| e.bytes).sum::<u64>());
    audit_transcript(&r.alice_transcript).unwrap();
}

#[test]
fn large_padding_splits_into_two_blocks() {
    let s = medium_single(32, 3, Mode::FreqDirect);
    assert!(matches!(s.plan()[0], LayerPlan::Conv { blocks: 2, .. }));
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let image = vec![random_matrix(32, 32, 0, 255, &mut rng)];
    let w = random_weights(s.schedule(), -32, 31, &mut rng);
    let r = run_inproc(&s, &image, &w, BobOptions::default()).unwrap();
    let ups = r.alice_transcript.entries()[2].bytes;
    assert_eq!(ups, 14 + 2 * (1 + 8 + 2 * 2048 * 8));
    let pn = s.chain().p_n();
    let LayerPlan::Conv { geometry, .. } = s.plan()[0] else { unreachable!() };
    assert_eq!(r.output[0], conv_oracle(&image[0].encode(pn), &w[0][0][0].encode(pn), &geometry, pn).unwrap());
}

#[test]
fn tcp_loopback_medium_matches_oracle() {
    let s = medium_single(28, 5, Mode::FreqDirect);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let image = vec![random_matrix(28, 28, 0, 255, &mut rng)];
    let w = random_weights(s.schedule(), -32, 31, &mut rng);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let out = std::thread::scope(|scope| {
        scope.spawn(|| {
            let mut ch = Channel::new(Role::Bob, Box::new(tcp_accept(&listener).unwrap()));
            run_bob(&s, &w, BobOptions::default(), &mut ch).unwrap();
        });
        let mut ch = Channel::new(Role::Alice, Box::new(tcp_connect(addr).unwrap()));
        run_alice(&s, &image, &mut ch).unwrap().output
    });
    let pn = s.chain().p_n();
    let LayerPlan::Conv { geometry, .. } = s.plan()[0] else { unreachable!() };
    assert_eq!(out[0], conv_oracle(&image[0].encode(pn), &w[0][0][0].encode(pn), &geometry, pn).unwrap());
}

#[test]
fn filter_size_does_not_change_online_counts() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let image = vec![random_matrix(32, 32, 0, 255, &mut rng)];
    let counts: Vec<_> = [3, 5]
        .into_iter()
        .map(|f| {
            let s = medium_single(32, f, Mode::Baseline);
            let w = random_weights(s.schedule(), -32, 31, &mut rng);
            let r = run_inproc(&s, &image, &w, BobOptions::default()).unwrap();
            (r.alice.online_counts, r.bob.online_counts)
        })
        .collect();
    assert_eq!(counts[0], counts[1]);
}
