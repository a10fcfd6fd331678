//! Per-phase timing harness over repeated in-process runs.
//!
//! Setup covers everything that does not depend on the image (Alice's key
//! generation, Bob's filter transforms and encoding); online covers image
//! transform and encryption, filtering and share decryption.

use std::time::Duration;

use crate::error::{Error, Result};
use crate::ntt::Matrix;
use crate::protocol::{run_inproc, BobOptions, ConvWeights, InferenceResult, PartyReport, Session};
use crate::ringbfv::OpCounts;
use crate::wire::transcript_bytes;

/// Medians in microseconds, one field per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseMedians {
    pub setup_us: f64,
    pub encrypt_us: f64,
    pub filter_us: f64,
    pub hadamard_us: f64,
    pub decrypt_us: f64,
    pub activation_us: f64,
    pub online_us: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub iterations: usize,
    pub medians: PhaseMedians,
    pub bytes_alice_to_bob: u64,
    pub bytes_bob_to_alice: u64,
    pub alice_online: OpCounts,
    pub bob_online: OpCounts,
    pub alice_setup: OpCounts,
    pub bob_setup: OpCounts,
    /// Output of the last iteration.
    pub output: Vec<Matrix<u64>>,
}

impl BenchReport {
    pub fn online_ring_ntt(&self) -> u64 {
        self.alice_online.ring_ntt + self.bob_online.ring_ntt
    }

    /// Hadamard time as a fraction of the whole filtering step.
    pub fn hadamard_fraction(&self) -> f64 {
        if self.medians.filter_us == 0.0 {
            0.0
        } else {
            self.medians.hadamard_us / self.medians.filter_us
        }
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

/// Runs the protocol `iterations` times after one warm-up run.
pub fn run_bench(
    session: &Session,
    image: &[Matrix<i64>],
    weights: &[ConvWeights],
    iterations: usize,
) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::InvalidParams("at least one iteration".into()));
    }
    run_inproc(session, image, weights, BobOptions::default())?;
    let mut runs: Vec<InferenceResult> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        runs.push(run_inproc(session, image, weights, BobOptions::default())?);
    }
    let col = |f: &dyn Fn(&PartyReport, &PartyReport) -> Duration| {
        let mut v: Vec<f64> = runs.iter().map(|r| us(f(&r.alice, &r.bob))).collect();
        median(&mut v)
    };
    let medians = PhaseMedians {
        setup_us: col(&|a, b| a.timings.setup + b.timings.setup),
        encrypt_us: col(&|a, _| a.timings.encrypt),
        filter_us: col(&|_, b| b.timings.filter),
        hadamard_us: col(&|_, b| b.timings.hadamard),
        decrypt_us: col(&|a, _| a.timings.decrypt),
        activation_us: col(&|_, b| b.timings.activation),
        online_us: col(&|a, b| a.timings.encrypt + b.timings.filter + a.timings.decrypt),
    };
    let last = runs.pop().expect("iterations > 0");
    let totals = transcript_bytes(&last.alice_transcript);
    Ok(BenchReport {
        iterations,
        medians,
        bytes_alice_to_bob: totals.alice_to_bob,
        bytes_bob_to_alice: totals.bob_to_alice,
        alice_online: last.alice.online_counts,
        bob_online: last.bob.online_counts,
        alice_setup: last.alice.setup_counts,
        bob_setup: last.bob.setup_counts,
        output: last.output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntt::ConvType;
    use crate::params::preset;
    use crate::protocol::{random_matrix, random_weights, Mode, Schedule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut []), 0.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn toy_bench_reports_consistent_numbers() {
        let s = Session::new(
            preset("toy").unwrap(),
            Schedule::single_conv((4, 4), (3, 3), ConvType::Same, (1, 1), None),
            Mode::Baseline,
            1,
        )
        .unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let image = vec![random_matrix(4, 4, -10, 10, &mut rng)];
        let w = random_weights(s.schedule(), -10, 10, &mut rng);
        let r = run_bench(&s, &image, &w, 3).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(r.medians.hadamard_us <= r.medians.filter_us);
        assert!(r.bytes_alice_to_bob > 0 && r.bytes_bob_to_alice > 0);
        assert!(r.hadamard_fraction() <= 1.0);
        // keygen and one prepared filter block
        assert_eq!(r.alice_setup.ring_ntt, 1);
        assert!(run_bench(&s, &image, &w, 0).is_err());
    }
}
