//! The two-party inference protocol.
//!
//! Per convolution layer:
//!
//! 1. Alice pads and 2D-transforms her input share, packs it into slot
//!    blocks, encrypts and sends the blocks.
//! 2. Bob adds his share back (HomRec), multiplies slot-wise by his
//!    transformed filters, accumulates over input channels and splits each
//!    output block with HomShare.
//! 3. Alice decrypts her shares; both parties inverse-transform and crop
//!    their shares locally.
//!
//! Activation layers go through [`trusted_activation`], an explicitly
//! insecure stand-in for a garbled circuit: Bob recombines the shares in the
//! clear, applies the function and re-shares. It keeps the share interface
//! a real two-party activation would have but offers no privacy.
//!
//! At the end Bob sends his final share and Alice recombines.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hss::{hom_rec, hom_share_fused, hom_share_with, open_share, recombine_clear, sample_share, ModulusChain};
use crate::modfield::{FieldSpec, Residue};
use crate::ntt::{conv_oracle, crop, pad_image, pad_filter, ConvGeometry, ConvType, FreqTensor, Matrix, Ntt2dPlan};
use crate::params::ParamSet;
use crate::ringbfv::{Bfv, Ciphertext, OpCounts, PlainVec, PreparedPlain, RingDomain, SecretKey};
use crate::wire::{
    decode_ciphertexts, decode_shares, encode_ciphertexts, encode_shares, inproc_pair, Channel, Direction,
    MessageType, Role, Transcript,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    ReLU,
    Square,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::ReLU => "relu",
            Activation::Square => "square",
            Activation::Identity => "identity",
        }
    }

    /// Applies the function to a centered value mod `p`.
    pub fn apply(self, x: Residue, p: &FieldSpec) -> Result<Residue> {
        let v = p.decode_signed(x);
        match self {
            Activation::Identity => Ok(x),
            Activation::ReLU => Ok(if v > 0 { x } else { 0 }),
            Activation::Square => {
                let sq = v as i128 * v as i128;
                if sq > (p.modulus() / 2) as i128 {
                    return Err(Error::RangeOverflow {
                        value: sq,
                        modulus: p.modulus(),
                    });
                }
                Ok(sq as u64)
            }
        }
    }
}

/// Encryption strategy for Alice's transformed input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Encrypt in the coefficient domain; Bob transforms each ciphertext
    /// before the slot-wise product.
    Baseline,
    /// Encrypt straight into the evaluation domain, saving Bob's two ring
    /// transforms per input ciphertext.
    FreqDirect,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::FreqDirect => "freq-direct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub filter_h: usize,
    pub filter_w: usize,
    pub conv_type: ConvType,
    pub channels_out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Activation(Activation),
}

/// Layer shapes shared by both parties. Weights stay with Bob.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Schedule {
    pub input_h: usize,
    pub input_w: usize,
    pub channels_in: usize,
    pub layers: Vec<LayerSpec>,
}

impl Schedule {
    /// One convolution followed by an optional activation.
    pub fn single_conv(
        image: (usize, usize),
        filter: (usize, usize),
        conv_type: ConvType,
        channels: (usize, usize),
        activation: Option<Activation>,
    ) -> Self {
        let mut layers = vec![LayerSpec::Conv(ConvSpec {
            filter_h: filter.0,
            filter_w: filter.1,
            conv_type,
            channels_out: channels.1,
        })];
        layers.extend(activation.map(LayerSpec::Activation));
        Self {
            input_h: image.0,
            input_w: image.1,
            channels_in: channels.0,
            layers,
        }
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvSpec> {
        self.layers.iter().filter_map(|l| match l {
            LayerSpec::Conv(c) => Some(c),
            LayerSpec::Activation(_) => None,
        })
    }
}

/// Bob's filters for one convolution, indexed `[out][in]`.
pub type ConvWeights = Vec<Vec<Matrix<i64>>>;

/// A schedule layer with all derived sizes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerPlan {
    Conv {
        geometry: ConvGeometry,
        channels_in: usize,
        channels_out: usize,
        /// Ciphertexts per channel.
        blocks: usize,
    },
    Activation {
        activation: Activation,
        channels: usize,
        dims: (usize, usize),
    },
}

/// Everything both parties must agree on before the first message.
#[derive(Clone, Debug)]
pub struct Session {
    params: ParamSet,
    schedule: Schedule,
    mode: Mode,
    seed: u64,
    plan: Vec<LayerPlan>,
}

impl Session {
    pub fn new(params: ParamSet, schedule: Schedule, mode: Mode, seed: u64) -> Result<Self> {
        let plan = plan_schedule(&params, &schedule)?;
        Ok(Self {
            params,
            schedule,
            mode,
            seed,
            plan,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn chain(&self) -> &ModulusChain {
        &self.params.chain
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn plan(&self) -> &[LayerPlan] {
        &self.plan
    }

    /// `(channels, rows, cols)` of the final output.
    pub fn output_shape(&self) -> (usize, usize, usize) {
        match self.plan.last() {
            Some(LayerPlan::Conv { geometry, channels_out, .. }) => {
                let (h, w) = geometry.output_dims();
                (*channels_out, h, w)
            }
            Some(LayerPlan::Activation { channels, dims, .. }) => (*channels, dims.0, dims.1),
            None => (self.schedule.channels_in, self.schedule.input_h, self.schedule.input_w),
        }
    }

    /// SHA-256 over parameters, schedule shapes, mode and seed; exchanged
    /// in the Hello messages.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ensei-hello-v1");
        let p = &self.params;
        for v in [
            p.rlwe.n() as u64,
            p.rlwe.q().modulus(),
            p.chain.p_n().modulus(),
            p.chain.p_a().modulus(),
            p.chain.p_e().modulus(),
            p.rlwe.sigma().to_bits(),
            self.mode as u64,
            self.seed,
            self.schedule.input_h as u64,
            self.schedule.input_w as u64,
            self.schedule.channels_in as u64,
            self.schedule.layers.len() as u64,
        ] {
            h.update(v.to_le_bytes());
        }
        for layer in &self.schedule.layers {
            match layer {
                LayerSpec::Conv(c) => {
                    h.update([0u8, c.conv_type as u8]);
                    for v in [c.filter_h, c.filter_w, c.channels_out] {
                        h.update((v as u64).to_le_bytes());
                    }
                }
                LayerSpec::Activation(a) => h.update([1u8, *a as u8]),
            }
        }
        h.finalize().into()
    }

    fn party_rng(&self, role: Role) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(match role {
            Role::Alice => 1,
            Role::Bob => 2,
        });
        rng
    }
}

fn plan_schedule(params: &ParamSet, schedule: &Schedule) -> Result<Vec<LayerPlan>> {
    let chain = &params.chain;
    if chain.p_a() != chain.p_n() {
        return Err(Error::InvalidSchedule("the protocol needs p_A = p_N".into()));
    }
    if schedule.input_h == 0 || schedule.input_w == 0 || schedule.channels_in == 0 {
        return Err(Error::InvalidSchedule("empty input".into()));
    }
    match schedule.layers.first() {
        Some(LayerSpec::Conv(_)) => {}
        Some(LayerSpec::Activation(_)) => {
            // an activation first would hand Bob the raw image
            return Err(Error::InvalidSchedule("the first layer must be a convolution".into()));
        }
        None => return Err(Error::InvalidSchedule("no layers".into())),
    }
    let n = params.rlwe.n();
    let (mut h, mut w, mut c) = (schedule.input_h, schedule.input_w, schedule.channels_in);
    let mut plan = Vec::with_capacity(schedule.layers.len());
    for layer in &schedule.layers {
        match *layer {
            LayerSpec::Conv(spec) => {
                if spec.channels_out == 0 {
                    return Err(Error::InvalidSchedule("zero output channels".into()));
                }
                let geometry = ConvGeometry::new(h, w, spec.filter_h, spec.filter_w, spec.conv_type, chain.p_n())
                    .map_err(|e| Error::InvalidSchedule(e.to_string()))?;
                chain.validate_no_wrap(c)?;
                plan.push(LayerPlan::Conv {
                    geometry,
                    channels_in: c,
                    channels_out: spec.channels_out,
                    blocks: geometry.padded_len().div_ceil(n),
                });
                (h, w) = geometry.output_dims();
                c = spec.channels_out;
            }
            LayerSpec::Activation(activation) => plan.push(LayerPlan::Activation {
                activation,
                channels: c,
                dims: (h, w),
            }),
        }
    }
    Ok(plan)
}

/// Wall-clock time spent in each phase of a run (summed over layers).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseTimings {
    /// Alice: key generation. Bob: filter transforms and encoding.
    pub setup: Duration,
    /// Alice: padding, 2D transform and encryption.
    pub encrypt: Duration,
    /// Bob: HomRec, ring transforms, products, accumulation and HomShare.
    pub filter: Duration,
    /// Bob: the slot-wise products alone.
    pub hadamard: Duration,
    /// Alice: share decryption, inverse 2D transform and crop.
    pub decrypt: Duration,
    /// Bob: trusted activation stub.
    pub activation: Duration,
}

impl PhaseTimings {
    pub fn online(&self) -> Duration {
        self.encrypt + self.filter + self.decrypt
    }
}

/// Instrumentation collected by one party.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PartyReport {
    pub setup_counts: OpCounts,
    pub online_counts: OpCounts,
    pub timings: PhaseTimings,
}

fn blocks_of(flat: &[Residue], n: usize, blocks: usize) -> Vec<PlainVec> {
    (0..blocks)
        .map(|k| {
            let mut slots = vec![0; n];
            let lo = (k * n).min(flat.len());
            let hi = ((k + 1) * n).min(flat.len());
            slots[..hi - lo].copy_from_slice(&flat[lo..hi]);
            PlainVec::new(slots)
        })
        .collect()
}

fn expected_kind(plan: Option<&LayerPlan>) -> MessageType {
    match plan {
        Some(LayerPlan::Conv { .. }) => MessageType::CiphertextBlocks,
        Some(LayerPlan::Activation { .. }) => MessageType::ActivationShareUp,
        None => MessageType::Done,
    }
}

fn check_shares(shares: &[Matrix<Residue>], channels: usize, dims: (usize, usize)) -> Result<()> {
    if shares.len() != channels || shares.iter().any(|m| m.dims() != dims) {
        return Err(Error::MalformedPayload(format!(
            "expected {channels} share matrices of {}x{}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

/// Client state: secret key and her share of the current activations.
pub struct Alice {
    session: Session,
    bfv: Bfv,
    sk: SecretKey,
    rng: ChaCha20Rng,
    layer: usize,
    share: Vec<Matrix<Residue>>,
    timings: PhaseTimings,
    setup_counts: OpCounts,
}

impl Alice {
    pub fn new(session: &Session) -> Result<Self> {
        let start = Instant::now();
        let bfv = Bfv::new(&session.params.rlwe)?;
        let mut rng = session.party_rng(Role::Alice);
        let sk = bfv.keygen(&mut rng);
        let timings = PhaseTimings {
            setup: start.elapsed(),
            ..Default::default()
        };
        Ok(Self {
            setup_counts: bfv.counts(),
            session: session.clone(),
            bfv,
            sk,
            rng,
            layer: 0,
            share: Vec::new(),
            timings,
        })
    }

    /// Loads the input image, one matrix per channel. It becomes Alice's
    /// share with Bob's share implicitly zero.
    pub fn load_input(&mut self, image: &[Matrix<i64>]) -> Result<()> {
        let s = &self.session.schedule;
        if image.len() != s.channels_in || image.iter().any(|m| m.dims() != (s.input_h, s.input_w)) {
            return Err(Error::GeometryMismatch(format!(
                "expected {} channels of {}x{}",
                s.channels_in, s.input_h, s.input_w
            )));
        }
        let pn = self.session.chain().p_n();
        self.share = image.iter().map(|m| m.encode(pn)).collect();
        self.layer = 0;
        Ok(())
    }

    pub fn share(&self) -> &[Matrix<Residue>] {
        &self.share
    }

    pub fn next_message(&self) -> MessageType {
        expected_kind(self.session.plan.get(self.layer))
    }

    fn order_error(&self, got: MessageType) -> Error {
        Error::ProtocolOrderViolation {
            expected: self.next_message(),
            got,
        }
    }

    fn conv_plan(&self, got: MessageType) -> Result<(ConvGeometry, usize, usize, usize)> {
        match self.session.plan.get(self.layer) {
            Some(&LayerPlan::Conv {
                geometry,
                channels_in,
                channels_out,
                blocks,
            }) => Ok((geometry, channels_in, channels_out, blocks)),
            _ => Err(self.order_error(got)),
        }
    }

    /// Transforms and encrypts the current share for the next convolution.
    pub fn begin_conv(&mut self) -> Result<Vec<Ciphertext>> {
        let (g, c_in, _, blocks) = self.conv_plan(MessageType::CiphertextBlocks)?;
        let start = Instant::now();
        let pn = self.session.chain().p_n().clone();
        let plan = Ntt2dPlan::for_geometry(&g, &pn)?;
        let n = self.bfv.n();
        let mut out = Vec::with_capacity(c_in * blocks);
        for ch in &self.share {
            let freq = plan.forward(&pad_image(ch, &g, &pn)?)?;
            for block in blocks_of(freq.data(), n, blocks) {
                out.push(match self.session.mode {
                    Mode::Baseline => self.bfv.encrypt(&block, &self.sk, &mut self.rng)?,
                    Mode::FreqDirect => self.bfv.encrypt_freq_direct(&block, &self.sk, &mut self.rng)?,
                });
            }
        }
        self.timings.encrypt += start.elapsed();
        Ok(out)
    }

    /// Decrypts Bob's HomShare output and turns it into time-domain shares.
    pub fn receive_share(&mut self, cts: &[Ciphertext]) -> Result<()> {
        let (g, _, c_out, blocks) = self.conv_plan(MessageType::AliceShareCiphertexts)?;
        if cts.len() != c_out * blocks {
            return Err(Error::MalformedPayload(format!(
                "expected {} ciphertexts, got {}",
                c_out * blocks,
                cts.len()
            )));
        }
        let start = Instant::now();
        let chain = self.session.chain().clone();
        let pn = chain.p_n();
        let plan = Ntt2dPlan::for_geometry(&g, pn)?;
        let len = g.padded_len();
        let mut share = Vec::with_capacity(c_out);
        for group in cts.chunks(blocks) {
            let mut flat = Vec::with_capacity(blocks * self.bfv.n());
            for ct in group {
                flat.extend(open_share(&self.bfv, ct, &self.sk, &chain)?);
            }
            flat.truncate(len);
            let t = FreqTensor::from_flat(flat, g.padded_h, g.padded_w, pn)?;
            share.push(crop(&plan.inverse(&t)?, &g)?);
        }
        self.share = share;
        self.layer += 1;
        self.timings.decrypt += start.elapsed();
        Ok(())
    }

    /// Share to hand to the activation stub.
    pub fn activation_up(&self) -> Result<Vec<Matrix<Residue>>> {
        match self.session.plan.get(self.layer) {
            Some(LayerPlan::Activation { .. }) => Ok(self.share.clone()),
            _ => Err(self.order_error(MessageType::ActivationShareUp)),
        }
    }

    pub fn activation_down(&mut self, share: Vec<Matrix<Residue>>) -> Result<()> {
        match self.session.plan.get(self.layer) {
            Some(&LayerPlan::Activation { channels, dims, .. }) => {
                check_shares(&share, channels, dims)?;
                self.share = share;
                self.layer += 1;
                Ok(())
            }
            _ => Err(self.order_error(MessageType::ActivationShareDown)),
        }
    }

    /// Recombines with Bob's final share.
    pub fn finish(&self, bob_share: &[Matrix<Residue>]) -> Result<Vec<Matrix<Residue>>> {
        if self.layer != self.session.plan.len() {
            return Err(self.order_error(MessageType::Done));
        }
        let (c, h, w) = self.session.output_shape();
        check_shares(bob_share, c, (h, w))?;
        let pa = self.session.chain().p_a();
        self.share
            .iter()
            .zip(bob_share)
            .map(|(a, b)| Matrix::from_vec(h, w, recombine_clear(&a.data, &b.data, pa)?))
            .collect()
    }

    pub fn report(&self) -> PartyReport {
        PartyReport {
            setup_counts: self.setup_counts,
            online_counts: self.bfv.counts() - self.setup_counts,
            timings: self.timings,
        }
    }
}

struct PreparedConv {
    geometry: ConvGeometry,
    plan: Ntt2dPlan,
    blocks: usize,
    /// `[out][in][block]`
    prepared: Vec<Vec<Vec<PreparedPlain>>>,
    /// Transformed padded filters, `[out][in]`.
    freq: Vec<Vec<Vec<Residue>>>,
}

/// Test-only switches for Bob.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BobOptions {
    /// Use `s_B = 0` in every HomShare so Alice's share is the full result.
    pub zero_shares: bool,
}

/// Server state: transformed filters and his share of the activations.
pub struct Bob {
    session: Session,
    bfv: Bfv,
    rng: ChaCha20Rng,
    convs: Vec<Option<PreparedConv>>,
    layer: usize,
    /// `None` until the first convolution: Alice then holds the whole input.
    share: Option<Vec<Matrix<Residue>>>,
    options: BobOptions,
    timings: PhaseTimings,
    setup_counts: OpCounts,
}

impl Bob {
    /// Transforms and encodes every filter. `weights` has one entry per
    /// convolution layer.
    pub fn new(session: &Session, weights: &[ConvWeights]) -> Result<Self> {
        let start = Instant::now();
        let bfv = Bfv::new(&session.params.rlwe)?;
        let pn = session.chain().p_n();
        let n = bfv.n();
        let mut layer_weights = weights.iter();
        let mut convs = Vec::with_capacity(session.plan.len());
        for lp in &session.plan {
            let LayerPlan::Conv {
                geometry: g,
                channels_in,
                channels_out,
                blocks,
            } = *lp
            else {
                convs.push(None);
                continue;
            };
            let w = layer_weights
                .next()
                .ok_or_else(|| Error::InvalidSchedule("fewer weight sets than convolutions".into()))?;
            if w.len() != channels_out
                || w.iter().any(|row| {
                    row.len() != channels_in || row.iter().any(|f| f.dims() != (g.filter_h, g.filter_w))
                })
            {
                return Err(Error::InvalidSchedule(format!(
                    "weights must be {channels_out}x{channels_in} filters of {}x{}",
                    g.filter_h, g.filter_w
                )));
            }
            let plan = Ntt2dPlan::for_geometry(&g, pn)?;
            let mut prepared = Vec::with_capacity(channels_out);
            let mut freq = Vec::with_capacity(channels_out);
            for row in w {
                let mut p_row = Vec::with_capacity(channels_in);
                let mut f_row = Vec::with_capacity(channels_in);
                for filter in row {
                    let wf = plan.forward(&pad_filter(&filter.encode(pn), &g, pn)?)?.into_data();
                    p_row.push(
                        blocks_of(&wf, n, blocks)
                            .iter()
                            .map(|b| bfv.prepare_plain(b))
                            .collect::<Result<Vec<_>>>()?,
                    );
                    f_row.push(wf);
                }
                prepared.push(p_row);
                freq.push(f_row);
            }
            convs.push(Some(PreparedConv {
                geometry: g,
                plan,
                blocks,
                prepared,
                freq,
            }));
        }
        if layer_weights.next().is_some() {
            return Err(Error::InvalidSchedule("more weight sets than convolutions".into()));
        }
        let timings = PhaseTimings {
            setup: start.elapsed(),
            ..Default::default()
        };
        Ok(Self {
            setup_counts: bfv.counts(),
            session: session.clone(),
            bfv,
            rng: session.party_rng(Role::Bob),
            convs,
            layer: 0,
            share: None,
            options: BobOptions::default(),
            timings,
        })
    }

    pub fn set_options(&mut self, options: BobOptions) {
        self.options = options;
    }

    pub fn next_message(&self) -> MessageType {
        expected_kind(self.session.plan.get(self.layer))
    }

    fn order_error(&self, got: MessageType) -> Error {
        Error::ProtocolOrderViolation {
            expected: self.next_message(),
            got,
        }
    }

    /// Slot-wise filtering and HomShare for the current convolution.
    /// Returns Alice's encrypted shares, `blocks` per output channel.
    pub fn filter(&mut self, cts: Vec<Ciphertext>) -> Result<Vec<Ciphertext>> {
        let Some(Some(conv)) = self.convs.get(self.layer) else {
            return Err(self.order_error(MessageType::CiphertextBlocks));
        };
        let start = Instant::now();
        let chain = self.session.chain();
        let pn = chain.p_n();
        let g = conv.geometry;
        let blocks = conv.blocks;
        let (c_out, c_in) = (conv.prepared.len(), conv.prepared[0].len());
        let n = self.bfv.n();
        if cts.len() != c_in * blocks {
            return Err(Error::MalformedPayload(format!(
                "expected {} ciphertexts, got {}",
                c_in * blocks,
                cts.len()
            )));
        }

        // Bob's transformed input share, one flat vector per input channel
        let bob_freq = match &self.share {
            Some(share) => Some(
                share
                    .iter()
                    .map(|s| Ok(conv.plan.forward(&pad_image(s, &g, pn)?)?.into_data()))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };

        let inputs: Vec<Ciphertext> = match self.session.mode {
            Mode::Baseline => cts
                .iter()
                .enumerate()
                .map(|(idx, ct)| {
                    let ct = match &bob_freq {
                        Some(bf) => {
                            let (i, k) = (idx / blocks, idx % blocks);
                            hom_rec(&self.bfv, ct, &blocks_of(&bf[i], n, blocks)[k], chain)?
                        }
                        None => ct.clone(),
                    };
                    Ok(self.bfv.to_evaluation_domain(&ct))
                })
                .collect::<Result<_>>()?,
            Mode::FreqDirect => {
                if cts.iter().any(|c| c.domain() != RingDomain::Evaluation) {
                    return Err(Error::DomainMismatch);
                }
                cts
            }
        };

        let mut hadamard = Duration::ZERO;
        let mut out = Vec::with_capacity(c_out * blocks);
        let mut bob_out = Vec::with_capacity(c_out);
        for o in 0..c_out {
            // HomRec folded into the share step by linearity:
            // Σ_i ([s_A,i] + s_B,i)·w_i = Σ_i [s_A,i]·w_i + Σ_i s_B,i·w_i
            let folded = match (&bob_freq, self.session.mode) {
                (Some(bf), Mode::FreqDirect) => {
                    let mut acc = vec![0; g.padded_len()];
                    for (b_in, w_in) in bf.iter().zip(&conv.freq[o]) {
                        for ((a, &b), &w) in acc.iter_mut().zip(b_in).zip(w_in) {
                            *a = pn.add_mod(*a, pn.mul_mod(b, w));
                        }
                    }
                    Some(blocks_of(&acc, n, blocks))
                }
                _ => None,
            };
            let mut flat = Vec::with_capacity(blocks * n);
            for k in 0..blocks {
                let mut acc: Option<Ciphertext> = None;
                for i in 0..c_in {
                    let t = Instant::now();
                    let prod = self.bfv.mul_prepared(&inputs[i * blocks + k], &conv.prepared[o][i][k])?;
                    hadamard += t.elapsed();
                    acc = Some(match acc {
                        Some(a) => self.bfv.add_ct(&a, &prod)?,
                        None => prod,
                    });
                }
                let acc = acc.expect("at least one input channel");
                let s_b = if self.options.zero_shares {
                    PlainVec::zeros(n)
                } else {
                    sample_share(n, chain, &mut self.rng)
                };
                let pair = match &folded {
                    Some(extra) => hom_share_fused(&self.bfv, &acc, &extra[k], chain, s_b)?,
                    None => hom_share_with(&self.bfv, &acc, chain, s_b)?,
                };
                out.push(pair.alice_ct);
                flat.extend(pair.bob_share.slots);
            }
            flat.truncate(g.padded_len());
            let t = FreqTensor::from_flat(flat, g.padded_h, g.padded_w, pn)?;
            bob_out.push(crop(&conv.plan.inverse(&t)?, &g)?);
        }
        self.share = Some(bob_out);
        self.layer += 1;
        self.timings.filter += start.elapsed();
        self.timings.hadamard += hadamard;
        Ok(out)
    }

    /// Runs the trusted activation stub on Alice's share and returns her
    /// new share.
    pub fn activation(&mut self, alice_share: Vec<Matrix<Residue>>) -> Result<Vec<Matrix<Residue>>> {
        let Some(&LayerPlan::Activation {
            activation,
            channels,
            dims,
        }) = self.session.plan.get(self.layer)
        else {
            return Err(self.order_error(MessageType::ActivationShareUp));
        };
        check_shares(&alice_share, channels, dims)?;
        let start = Instant::now();
        let pa = self.session.chain().p_a().clone();
        let bob_share = self.share.take().expect("a convolution precedes every activation");
        let mut alice_out = Vec::with_capacity(channels);
        let mut bob_out = Vec::with_capacity(channels);
        for (a, b) in alice_share.iter().zip(&bob_share) {
            let (a2, b2) = trusted_activation(a, b, activation, &pa, &mut self.rng)?;
            alice_out.push(a2);
            bob_out.push(b2);
        }
        self.share = Some(bob_out);
        self.layer += 1;
        self.timings.activation += start.elapsed();
        Ok(alice_out)
    }

    /// Bob's share of the final output.
    pub fn final_share(&self) -> Result<Vec<Matrix<Residue>>> {
        if self.layer != self.session.plan.len() {
            return Err(self.order_error(MessageType::Done));
        }
        Ok(self.share.clone().unwrap_or_default())
    }

    pub fn report(&self) -> PartyReport {
        PartyReport {
            setup_counts: self.setup_counts,
            online_counts: self.bfv.counts() - self.setup_counts,
            timings: self.timings,
        }
    }
}

/// INSECURE stand-in for a garbled-circuit activation: recombines the
/// shares in the clear, applies `f` to the centered value and re-shares
/// with a fresh uniform Bob share. Returns `(s_a', s_b')`.
pub fn trusted_activation<R: Rng + ?Sized>(
    s_a: &Matrix<Residue>,
    s_b: &Matrix<Residue>,
    f: Activation,
    p_a: &FieldSpec,
    rng: &mut R,
) -> Result<(Matrix<Residue>, Matrix<Residue>)> {
    if s_a.dims() != s_b.dims() {
        return Err(Error::LengthMismatch {
            left: s_a.data.len(),
            right: s_b.data.len(),
        });
    }
    let y = recombine_clear(&s_a.data, &s_b.data, p_a)?;
    let mut a_out = Vec::with_capacity(y.len());
    let mut b_out = Vec::with_capacity(y.len());
    for v in y {
        let fy = f.apply(v, p_a)?;
        let r = p_a.sample_uniform(rng);
        a_out.push(p_a.sub_mod(fy, r));
        b_out.push(r);
    }
    Ok((
        Matrix::from_vec(s_a.rows, s_a.cols, a_out)?,
        Matrix::from_vec(s_a.rows, s_a.cols, b_out)?,
    ))
}

/// Plaintext reference: the same schedule evaluated with [`conv_oracle`]
/// and the activation functions, mod `p_N`.
pub fn plaintext_pipeline(
    session: &Session,
    image: &[Matrix<i64>],
    weights: &[ConvWeights],
) -> Result<Vec<Matrix<Residue>>> {
    let pn = session.chain().p_n();
    let mut cur: Vec<Matrix<Residue>> = image.iter().map(|m| m.encode(pn)).collect();
    let mut w_iter = weights.iter();
    for lp in &session.plan {
        match lp {
            LayerPlan::Conv {
                geometry,
                channels_out,
                ..
            } => {
                let w = w_iter
                    .next()
                    .ok_or_else(|| Error::InvalidSchedule("fewer weight sets than convolutions".into()))?;
                let (oh, ow) = geometry.output_dims();
                let mut next = Vec::with_capacity(*channels_out);
                for row in w.iter().take(*channels_out) {
                    let mut acc = Matrix::zeros(oh, ow);
                    for (u, f) in cur.iter().zip(row) {
                        let part = conv_oracle(u, &f.encode(pn), geometry, pn)?;
                        for (a, p) in acc.data.iter_mut().zip(&part.data) {
                            *a = pn.add_mod(*a, *p);
                        }
                    }
                    next.push(acc);
                }
                cur = next;
            }
            LayerPlan::Activation { activation, .. } => {
                let pa = session.chain().p_a();
                cur = cur
                    .iter()
                    .map(|m| {
                        let data = m.data.iter().map(|&v| activation.apply(v, pa)).collect::<Result<_>>()?;
                        Matrix::from_vec(m.rows, m.cols, data)
                    })
                    .collect::<Result<_>>()?;
            }
        }
    }
    Ok(cur)
}

fn guard<T>(channel: &mut Channel, result: Result<T>) -> Result<T> {
    if let Err(e) = &result {
        if !matches!(
            e,
            Error::Peer(_) | Error::Transport(_) | Error::TransportClosed | Error::DigestMismatch
        ) {
            channel.send_error(&e.to_string());
        }
    }
    result
}

fn handshake(session: &Session, channel: &mut Channel) -> Result<()> {
    let digest = session.digest().to_vec();
    let theirs = match channel.role() {
        Role::Alice => {
            channel.send(MessageType::Hello, digest.clone())?;
            channel.recv(MessageType::Hello)?
        }
        Role::Bob => {
            let theirs = channel.recv(MessageType::Hello)?;
            channel.send(MessageType::Hello, digest.clone())?;
            theirs
        }
    };
    if theirs != digest {
        return Err(Error::DigestMismatch);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AliceOutcome {
    /// Final activations mod `p_N`, one matrix per channel.
    pub output: Vec<Matrix<Residue>>,
    pub report: PartyReport,
}

/// Drives Alice through the whole schedule.
pub fn run_alice(session: &Session, image: &[Matrix<i64>], channel: &mut Channel) -> Result<AliceOutcome> {
    let result = alice_steps(session, image, channel);
    guard(channel, result)
}

fn alice_steps(session: &Session, image: &[Matrix<i64>], channel: &mut Channel) -> Result<AliceOutcome> {
    let mut alice = Alice::new(session)?;
    alice.load_input(image)?;
    handshake(session, channel)?;
    let params = &session.params;
    for lp in &session.plan {
        match lp {
            LayerPlan::Conv { .. } => {
                let cts = alice.begin_conv()?;
                channel.send(MessageType::CiphertextBlocks, encode_ciphertexts(&cts))?;
                let payload = channel.recv(MessageType::AliceShareCiphertexts)?;
                alice.receive_share(&decode_ciphertexts(&payload, &params.rlwe)?)?;
            }
            LayerPlan::Activation { .. } => {
                channel.send(MessageType::ActivationShareUp, encode_shares(&alice.activation_up()?))?;
                let payload = channel.recv(MessageType::ActivationShareDown)?;
                alice.activation_down(decode_shares(&payload, params.chain.p_a())?)?;
            }
        }
    }
    let payload = channel.recv(MessageType::Done)?;
    let output = alice.finish(&decode_shares(&payload, params.chain.p_a())?)?;
    Ok(AliceOutcome {
        output,
        report: alice.report(),
    })
}

/// Drives Bob through the whole schedule.
pub fn run_bob(
    session: &Session,
    weights: &[ConvWeights],
    options: BobOptions,
    channel: &mut Channel,
) -> Result<PartyReport> {
    let result = bob_steps(session, weights, options, channel);
    guard(channel, result)
}

fn bob_steps(
    session: &Session,
    weights: &[ConvWeights],
    options: BobOptions,
    channel: &mut Channel,
) -> Result<PartyReport> {
    let mut bob = Bob::new(session, weights)?;
    bob.set_options(options);
    handshake(session, channel)?;
    let params = &session.params;
    for lp in &session.plan {
        match lp {
            LayerPlan::Conv { .. } => {
                let payload = channel.recv(MessageType::CiphertextBlocks)?;
                let shares = bob.filter(decode_ciphertexts(&payload, &params.rlwe)?)?;
                channel.send(MessageType::AliceShareCiphertexts, encode_ciphertexts(&shares))?;
            }
            LayerPlan::Activation { .. } => {
                let payload = channel.recv(MessageType::ActivationShareUp)?;
                let down = bob.activation(decode_shares(&payload, params.chain.p_a())?)?;
                channel.send(MessageType::ActivationShareDown, encode_shares(&down))?;
            }
        }
    }
    channel.send(MessageType::Done, encode_shares(&bob.final_share()?))?;
    Ok(bob.report())
}

#[derive(Clone, Debug)]
pub struct InferenceResult {
    pub output: Vec<Matrix<Residue>>,
    pub alice: PartyReport,
    pub bob: PartyReport,
    pub alice_transcript: Transcript,
    pub bob_transcript: Transcript,
}

/// Runs both parties on two threads over an in-process transport.
pub fn run_inproc(
    session: &Session,
    image: &[Matrix<i64>],
    weights: &[ConvWeights],
    options: BobOptions,
) -> Result<InferenceResult> {
    let (a, b) = inproc_pair();
    let mut alice_ch = Channel::new(Role::Alice, Box::new(a));
    let mut bob_ch = Channel::new(Role::Bob, Box::new(b));
    let (alice, bob) = std::thread::scope(|s| {
        let bob = s.spawn(|| run_bob(session, weights, options, &mut bob_ch));
        let alice = run_alice(session, image, &mut alice_ch);
        (alice, bob.join().expect("bob thread panicked"))
    });
    // report the root cause rather than the peer's echo of it
    let (alice, bob) = match (alice, bob) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), Err(Error::Peer(_) | Error::TransportClosed)) | (Err(e), Ok(_)) => return Err(e),
        (_, Err(e)) => return Err(e),
    };
    Ok(InferenceResult {
        output: alice.output,
        alice: alice.report,
        bob,
        alice_transcript: alice_ch.into_transcript(),
        bob_transcript: bob_ch.into_transcript(),
    })
}

/// Checks that every frame was sent by a role allowed to send its type and
/// that each direction opens with Hello. Ciphertexts and shares are the
/// only payloads that may cross the wire.
pub fn audit_transcript(t: &Transcript) -> Result<()> {
    let mut seen_hello = [false; 2];
    for (idx, e) in t.entries().iter().enumerate() {
        let (role, slot) = match e.direction {
            Direction::AliceToBob => (Role::Alice, 0),
            Direction::BobToAlice => (Role::Bob, 1),
        };
        if !role.allowed_outbound().contains(&e.msg_type) {
            return Err(Error::MalformedPayload(format!(
                "frame {idx}: {role:?} may not send {}",
                e.msg_type.name()
            )));
        }
        if !seen_hello[slot] && e.msg_type != MessageType::Hello {
            return Err(Error::ProtocolOrderViolation {
                expected: MessageType::Hello,
                got: e.msg_type,
            });
        }
        seen_hello[slot] = true;
    }
    Ok(())
}

/// Uniform random integers in `[lo, hi]`, for tests and demos.
pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, lo: i64, hi: i64, rng: &mut R) -> Matrix<i64> {
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(lo..=hi)).collect(),
    }
}

/// Random weights for every convolution of `schedule`, entries in `[lo, hi]`.
pub fn random_weights<R: Rng + ?Sized>(schedule: &Schedule, lo: i64, hi: i64, rng: &mut R) -> Vec<ConvWeights> {
    let mut c_in = schedule.channels_in;
    let mut out = Vec::new();
    for spec in schedule.conv_layers() {
        out.push(
            (0..spec.channels_out)
                .map(|_| {
                    (0..c_in)
                        .map(|_| random_matrix(spec.filter_h, spec.filter_w, lo, hi, rng))
                        .collect()
                })
                .collect(),
        );
        c_in = spec.channels_out;
    }
    out
}
