use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::Path;

use ensei_core::bench::{run_bench, BenchReport};
use ensei_core::ntt::{ConvType, Matrix};
use ensei_core::params::{build_params, preset, validate_paper_presets, ChainMode, ParamSet, PrecisionProfile};
use ensei_core::protocol::{
    plaintext_pipeline, random_matrix, random_weights, run_alice, run_bob, run_inproc, BobOptions, ConvWeights,
    LayerSpec, Mode, Schedule, Session,
};
use ensei_core::wire::{tcp_accept, tcp_connect, transcript_bytes, Channel, Role, Transcript};
use ensei_core::modfield::Residue;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::config::{flatten_weights, format_matrices, load_schedule, read_image, read_weights, WeightSource};
use crate::{BenchArgs, ChainArg, CliError, DemoArgs, OracleArgs, ParamsArgs, RoleArg, RunArgs, WeightsArgs};

const IMAGE_STREAM: u64 = 3;
const WEIGHT_STREAM: u64 = 4;

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn insecure_banner(params: &ParamSet) {
    if params.insecure() {
        eprintln!(
            "INSECURE: n = {} offers no security; these parameters exist for tests only",
            params.rlwe.n()
        );
    }
}

fn params_json(p: &ParamSet) -> Value {
    json!({
        "preset": p.preset_name,
        "input_bits": p.profile.input_bits,
        "filter_bits": p.profile.filter_bits,
        "f_h": p.profile.f_h,
        "f_w": p.profile.f_w,
        "bound": p.bound().to_string(),
        "chain": format!("{:?}", p.mode).to_lowercase(),
        "p_n": p.chain.p_n().modulus(),
        "p_a": p.chain.p_a().modulus(),
        "p_e": p.chain.p_e().modulus(),
        "q": p.rlwe.q().modulus(),
        "lg_q": p.lg_q(),
        "n": p.rlwe.n(),
        "sigma": p.rlwe.sigma(),
        "insecure": p.insecure(),
    })
}

pub fn params(a: ParamsArgs) -> Result<(), CliError> {
    let p = match (a.preset.as_deref(), a.input_bits) {
        (_, Some(ib)) => {
            let profile = PrecisionProfile::new(
                ib,
                a.filter_bits.expect("clap enforces"),
                a.fh.expect("clap enforces"),
                a.fw.expect("clap enforces"),
            )?;
            let mode = match a.chain {
                ChainArg::Unified => ChainMode::Unified,
                ChainArg::Split => ChainMode::SplitPaper,
            };
            build_params(profile, a.n, mode)?
        }
        (name, None) => preset(name.unwrap_or("medium"))?,
    };
    insecure_banner(&p);
    let report = validate_paper_presets();
    let text = if a.json {
        let checks: Vec<Value> = report
            .checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.tabulated.name,
                    "p_n": c.tabulated.p_n,
                    "p_e": c.tabulated.p_e,
                    "published_lg_q": c.tabulated.lg_q,
                    "our_lg_q": c.our_lg_q,
                    "bound": c.bound.to_string(),
                    "primes": c.p_n_prime && c.p_e_prime,
                    "congruences": c.p_n_congruent && c.p_e_congruent,
                    "bound_ok": c.bound_ok,
                    "ordering_ok": c.ordering_ok,
                    "rules_reproduce": c.rules_reproduce,
                    "lg_q_within_table": c.lg_q_within_table,
                    "no_wrap_ok": c.no_wrap_ok,
                    "table_consistent": c.table_consistent(),
                })
            })
            .collect();
        pretty(&json!({ "params": params_json(&p), "published_presets": checks }))
    } else {
        format!("{p}\n\npublished presets\n{report}")
    };
    emit(a.out.as_deref(), &text)
}

/// Everything a run needs before any party starts.
struct Setup {
    params: ParamSet,
    schedule: Schedule,
    schedule_weights: Option<WeightSource>,
}

fn setup(run: &RunArgs) -> Result<Setup, CliError> {
    let (file_preset, schedule, schedule_weights) = match &run.schedule {
        Some(path) => {
            let s = load_schedule(path)?;
            (s.preset, s.schedule, s.weights)
        }
        None => (
            None,
            Schedule::single_conv(
                run.image,
                run.filter,
                ConvType::from(crate::config::ConvKind::from(run.conv_type)),
                (run.channels_in, run.channels_out),
                run.activation.map(Into::into),
            ),
            None,
        ),
    };
    let name = run.preset.clone().or(file_preset).unwrap_or_else(|| "medium".into());
    let params = preset(&name)?;
    insecure_banner(&params);
    if schedule.layers.iter().any(|l| matches!(l, LayerSpec::Activation(_))) {
        eprintln!("note: activations use an INSECURE trusted stub that sees both shares");
    }
    Ok(Setup {
        params,
        schedule,
        schedule_weights,
    })
}

fn session(s: &Setup, mode: Mode, seed: u64) -> Result<Session, CliError> {
    Ok(Session::new(s.params.clone(), s.schedule.clone(), mode, seed)?)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Alice's input: the file, or seeded random values of the profile's width.
fn load_image(run: &RunArgs, s: &Setup) -> Result<Vec<Matrix<i64>>, CliError> {
    if let Some(path) = &run.input_file {
        return read_image(path, &s.schedule);
    }
    let bits = s.params.profile.input_bits.min(62);
    let hi = (1i64 << bits) - 1;
    let mut rng = stream_rng(run.seed, IMAGE_STREAM);
    Ok((0..s.schedule.channels_in)
        .map(|_| random_matrix(s.schedule.input_h, s.schedule.input_w, 0, hi, &mut rng))
        .collect())
}

/// Bob's filters: `--weights-file`, then the schedule's source, then
/// seeded random values of the profile's width.
fn load_weights(run: &RunArgs, s: &Setup, weights_file: Option<&Path>) -> Result<Vec<ConvWeights>, CliError> {
    let source = match weights_file {
        Some(p) => WeightSource::File(p.to_path_buf()),
        None => s.schedule_weights.clone().unwrap_or(WeightSource::Random(None)),
    };
    match source {
        WeightSource::File(p) => read_weights(&p, &s.schedule),
        WeightSource::Random(seed) => {
            let mut rng = stream_rng(seed.unwrap_or(run.seed), WEIGHT_STREAM);
            let fb = s.params.profile.filter_bits.min(62);
            if fb == 0 {
                let mut w = random_weights(&s.schedule, 0, 1, &mut rng);
                for m in w.iter_mut().flatten().flatten() {
                    m.data.iter_mut().for_each(|v| *v = 2 * *v - 1);
                }
                Ok(w)
            } else {
                let half = 1i64 << (fb - 1);
                Ok(random_weights(&s.schedule, -half, half - 1, &mut rng))
            }
        }
    }
}

fn decode_output(output: &[Matrix<Residue>], session: &Session) -> Vec<Matrix<i64>> {
    output.iter().map(|m| m.decode(session.chain().p_n())).collect()
}

fn matrices_json(ms: &[Matrix<i64>]) -> Value {
    Value::Array(
        ms.iter()
            .map(|m| {
                Value::Array(
                    m.data
                        .chunks(m.cols.max(1))
                        .map(|r| Value::Array(r.iter().map(|&v| json!(v)).collect()))
                        .collect(),
                )
            })
            .collect(),
    )
}

fn verdict(equal: Option<bool>) -> &'static str {
    match equal {
        Some(true) => "EQUAL",
        Some(false) => "UNEQUAL",
        None => "UNCHECKED",
    }
}

fn transcript_json(t: &Transcript) -> Value {
    let totals = transcript_bytes(t);
    json!({ "alice_to_bob": totals.alice_to_bob, "bob_to_alice": totals.bob_to_alice })
}

pub fn demo(a: DemoArgs) -> Result<(), CliError> {
    let s = setup(&a.run)?;
    let mode: Mode = a.mode.into();
    let sess = session(&s, mode, a.run.seed)?;
    match a.role {
        RoleArg::Both => {
            if a.listen.is_some() || a.connect.is_some() {
                return Err(CliError::Usage("--role both runs in-process; drop --listen/--connect".into()));
            }
            let image = load_image(&a.run, &s)?;
            let weights = load_weights(&a.run, &s, a.weights_file.as_deref())?;
            let r = run_inproc(&sess, &image, &weights, BobOptions::default())?;
            let expect = plaintext_pipeline(&sess, &image, &weights)?;
            let equal = Some(expect == r.output);
            let extra = json!({
                "bytes": transcript_json(&r.alice_transcript),
                "ring_ntt": {
                    "alice_online": r.alice.online_counts.ring_ntt,
                    "bob_online": r.bob.online_counts.ring_ntt,
                },
            });
            report_alice(&a, &sess, &decode_output(&r.output, &sess), equal, extra)
        }
        RoleArg::Alice => {
            let addr = a
                .connect
                .as_deref()
                .ok_or_else(|| CliError::Usage("--role alice needs --connect HOST:PORT".into()))?;
            let image = load_image(&a.run, &s)?;
            // test-only: the weights file lets Alice check against the oracle
            let weights = match &a.weights_file {
                Some(p) => {
                    eprintln!("TEST ONLY: Alice was given Bob's weights for the oracle check");
                    Some(read_weights(p, &s.schedule)?)
                }
                None => None,
            };
            let mut ch = Channel::new(Role::Alice, Box::new(tcp_connect(addr)?));
            let out = run_alice(&sess, &image, &mut ch)?;
            let equal = match &weights {
                Some(w) => Some(plaintext_pipeline(&sess, &image, w)? == out.output),
                None => None,
            };
            let extra = json!({
                "bytes": transcript_json(ch.transcript()),
                "ring_ntt": { "alice_online": out.report.online_counts.ring_ntt },
            });
            report_alice(&a, &sess, &decode_output(&out.output, &sess), equal, extra)
        }
        RoleArg::Bob => {
            let addr = a
                .listen
                .as_deref()
                .ok_or_else(|| CliError::Usage("--role bob needs --listen HOST:PORT".into()))?;
            let weights = load_weights(&a.run, &s, a.weights_file.as_deref())?;
            let listener = TcpListener::bind(addr).map_err(|e| CliError::Usage(format!("{addr}: {e}")))?;
            if let Ok(local) = listener.local_addr() {
                eprintln!("bob: listening on {local}");
            }
            let mut ch = Channel::new(Role::Bob, Box::new(tcp_accept(&listener)?));
            let report = run_bob(&sess, &weights, BobOptions::default(), &mut ch)?;
            let bytes = transcript_json(ch.transcript());
            let text = if a.json {
                pretty(&json!({
                    "role": "bob",
                    "bytes": bytes,
                    "ring_ntt": { "bob_online": report.online_counts.ring_ntt },
                }))
            } else {
                format!(
                    "bob: done, {} bytes sent, {} bytes received, {} online ring NTTs\n",
                    bytes["bob_to_alice"], bytes["alice_to_bob"], report.online_counts.ring_ntt
                )
            };
            emit(a.out.as_deref(), &text)
        }
    }
}

fn report_alice(
    a: &DemoArgs,
    sess: &Session,
    output: &[Matrix<i64>],
    equal: Option<bool>,
    extra: Value,
) -> Result<(), CliError> {
    let (c, h, w) = sess.output_shape();
    let text = if a.json {
        let mut v = json!({
            "preset": sess.params().preset_name,
            "mode": sess.mode().name(),
            "seed": sess.seed(),
            "output_shape": [c, h, w],
            "output": matrices_json(output),
            "verdict": verdict(equal),
        });
        if let (Value::Object(dst), Value::Object(src)) = (&mut v, extra) {
            dst.extend(src);
        }
        pretty(&v)
    } else {
        let mut t = format!(
            "preset {}, mode {}, seed {}\noutput {c}x{h}x{w}:\n{}",
            sess.params().preset_name.as_deref().unwrap_or("custom"),
            sess.mode().name(),
            sess.seed(),
            format_matrices(output)
        );
        if let Some(b) = extra.get("bytes") {
            t += &format!("bytes alice->bob {}, bob->alice {}\n", b["alice_to_bob"], b["bob_to_alice"]);
        }
        t += &format!("oracle check: {}\n", verdict(equal));
        t
    };
    emit(a.out.as_deref(), &text)?;
    match equal {
        Some(false) => Err(CliError::Unequal("protocol output differs from the plaintext oracle".into())),
        _ => Ok(()),
    }
}

const CSV_HEADER: [&str; 16] = [
    "preset",
    "mode",
    "iterations",
    "setup_us",
    "encrypt_us",
    "filter_us",
    "hadamard_us",
    "decrypt_us",
    "activation_us",
    "online_us",
    "hadamard_fraction",
    "bytes_alice_to_bob",
    "bytes_bob_to_alice",
    "ring_ntt_alice_online",
    "ring_ntt_bob_online",
    "ring_ops_bob_online",
];

fn bench_row(preset: &str, mode: Mode, r: &BenchReport) -> Vec<String> {
    let m = &r.medians;
    vec![
        preset.to_string(),
        mode.name().to_string(),
        r.iterations.to_string(),
        format!("{:.1}", m.setup_us),
        format!("{:.1}", m.encrypt_us),
        format!("{:.1}", m.filter_us),
        format!("{:.1}", m.hadamard_us),
        format!("{:.1}", m.decrypt_us),
        format!("{:.1}", m.activation_us),
        format!("{:.1}", m.online_us),
        format!("{:.4}", r.hadamard_fraction()),
        r.bytes_alice_to_bob.to_string(),
        r.bytes_bob_to_alice.to_string(),
        r.alice_online.ring_ntt.to_string(),
        r.bob_online.ring_ntt.to_string(),
        r.bob_online.ring_ops().to_string(),
    ]
}

fn bench_json(mode: Mode, r: &BenchReport) -> Value {
    let m = &r.medians;
    json!({
        "mode": mode.name(),
        "medians_us": {
            "setup": m.setup_us,
            "encrypt": m.encrypt_us,
            "filter": m.filter_us,
            "hadamard": m.hadamard_us,
            "decrypt": m.decrypt_us,
            "activation": m.activation_us,
            "online": m.online_us,
        },
        "hadamard_fraction": r.hadamard_fraction(),
        "bytes": { "alice_to_bob": r.bytes_alice_to_bob, "bob_to_alice": r.bytes_bob_to_alice },
        "ring_ntt": {
            "alice_setup": r.alice_setup.ring_ntt,
            "bob_setup": r.bob_setup.ring_ntt,
            "alice_online": r.alice_online.ring_ntt,
            "bob_online": r.bob_online.ring_ntt,
            "online_total": r.online_ring_ntt(),
        },
        "bob_online_ring_ops": r.bob_online.ring_ops(),
    })
}

pub fn bench(a: BenchArgs) -> Result<(), CliError> {
    if a.iterations < 10 {
        return Err(CliError::Usage("--iterations must be at least 10".into()));
    }
    let s = setup(&a.run)?;
    let image = load_image(&a.run, &s)?;
    let weights = load_weights(&a.run, &s, a.weights_file.as_deref())?;
    let modes: Vec<Mode> = if a.compare {
        vec![Mode::Baseline, Mode::FreqDirect]
    } else {
        vec![a.mode.into()]
    };
    let preset_name = s.params.preset_name.clone().unwrap_or_else(|| "custom".into());
    let mut reports = Vec::new();
    for &mode in &modes {
        let sess = session(&s, mode, a.run.seed)?;
        reports.push((mode, run_bench(&sess, &image, &weights, a.iterations)?));
    }
    let text = if a.json {
        pretty(&json!({
            "preset": preset_name,
            "seed": a.run.seed,
            "iterations": a.iterations,
            "input": [s.schedule.channels_in, s.schedule.input_h, s.schedule.input_w],
            "layers": s.schedule.layers.len(),
            "runs": reports.iter().map(|(m, r)| bench_json(*m, r)).collect::<Vec<_>>(),
        }))
    } else if a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).map_err(|e| CliError::Usage(e.to_string()))?;
        for (m, r) in &reports {
            w.write_record(bench_row(&preset_name, *m, r))
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        String::from_utf8(w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?).expect("csv is utf-8")
    } else {
        let mut t = format!("preset {preset_name}, {} iterations (medians)\n", a.iterations);
        for (m, r) in &reports {
            let md = &r.medians;
            t += &format!(
                "{}\n  setup      {:>10.1} us\n  encrypt    {:>10.1} us\n  filter     {:>10.1} us (hadamard {:.1} us, {:.1}%)\n  decrypt    {:>10.1} us\n  activation {:>10.1} us\n  online     {:>10.1} us\n  bytes      {} up, {} down\n  ring NTTs  {} alice, {} bob (online)\n",
                m.name(),
                md.setup_us,
                md.encrypt_us,
                md.filter_us,
                md.hadamard_us,
                100.0 * r.hadamard_fraction(),
                md.decrypt_us,
                md.activation_us,
                md.online_us,
                r.bytes_alice_to_bob,
                r.bytes_bob_to_alice,
                r.alice_online.ring_ntt,
                r.bob_online.ring_ntt,
            );
        }
        t
    };
    emit(a.out.as_deref(), &text)
}

pub fn oracle(a: OracleArgs) -> Result<(), CliError> {
    let s = setup(&a.run)?;
    let image = load_image(&a.run, &s)?;
    let weights = load_weights(&a.run, &s, a.weights_file.as_deref())?;
    let sess = session(&s, Mode::Baseline, a.run.seed)?;
    let out = decode_output(&plaintext_pipeline(&sess, &image, &weights)?, &sess);
    let text = if a.json {
        pretty(&json!({ "output_shape": sess.output_shape(), "output": matrices_json(&out) }))
    } else {
        format_matrices(&out)
    };
    emit(a.out.as_deref(), &text)
}

pub fn weights(a: WeightsArgs) -> Result<(), CliError> {
    let s = setup(&a.run)?;
    let w = load_weights(&a.run, &s, None)?;
    emit(a.out.as_deref(), &format_matrices(&flatten_weights(&w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_matches_header() {
        let r = BenchReport {
            iterations: 10,
            medians: Default::default(),
            bytes_alice_to_bob: 1,
            bytes_bob_to_alice: 2,
            alice_online: Default::default(),
            bob_online: Default::default(),
            alice_setup: Default::default(),
            bob_setup: Default::default(),
            output: vec![],
        };
        assert_eq!(bench_row("toy", Mode::Baseline, &r).len(), CSV_HEADER.len());
    }

    #[test]
    fn verdict_names() {
        assert_eq!(verdict(Some(true)), "EQUAL");
        assert_eq!(verdict(Some(false)), "UNEQUAL");
        assert_eq!(verdict(None), "UNCHECKED");
    }
}
