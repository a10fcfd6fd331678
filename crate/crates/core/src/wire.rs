//! Frame format, payload codecs and transports for the two-party protocol.
//!
//! ```text
//! frame      = "ENSE" | version:u8 (0x01) | msg_type:u8 | payload_len:u64le | payload
//! ciphertext = domain:u8 | n:u64le | c0: n × u64le | c1: n × u64le
//! shares     = count:u64le | count × (rows:u64le | cols:u64le | rows·cols × u64le)
//! ```
//!
//! A ciphertext-carrying payload is the plain concatenation of ciphertexts.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::modfield::{FieldSpec, Residue};
use crate::ntt::Matrix;
use crate::ringbfv::{Ciphertext, RingDomain, RingElem, RlweParams};

pub const MAGIC: [u8; 4] = *b"ENSE";
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 14;
/// Hard cap on a single payload.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    CiphertextBlocks = 0x02,
    AliceShareCiphertexts = 0x03,
    ActivationShareUp = 0x04,
    ActivationShareDown = 0x05,
    Done = 0x06,
    Error = 0x07,
}

impl MessageType {
    pub const ALL: [MessageType; 7] = [
        MessageType::Hello,
        MessageType::CiphertextBlocks,
        MessageType::AliceShareCiphertexts,
        MessageType::ActivationShareUp,
        MessageType::ActivationShareDown,
        MessageType::Done,
        MessageType::Error,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::Hello => "hello",
            MessageType::CiphertextBlocks => "ciphertext_blocks",
            MessageType::AliceShareCiphertexts => "alice_share_ciphertexts",
            MessageType::ActivationShareUp => "activation_share_up",
            MessageType::ActivationShareDown => "activation_share_down",
            MessageType::Done => "done",
            MessageType::Error => "error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MessageType, payload: Vec<u8>) -> Self {
        Self { msg_type, payload }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MessageType, u64)> {
    if h[..4] != MAGIC {
        return Err(Error::MalformedPayload("bad magic".into()));
    }
    if h[4] != VERSION {
        return Err(Error::MalformedPayload(format!("unsupported version {}", h[4])));
    }
    let msg_type = MessageType::from_u8(h[5])
        .ok_or_else(|| Error::MalformedPayload(format!("unknown message type {:#04x}", h[5])))?;
    let len = u64::from_le_bytes(h[6..14].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(Error::MalformedPayload(format!("payload length {len} exceeds cap")));
    }
    Ok((msg_type, len))
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedPayload("short frame header".into()));
    }
    let (msg_type, len) = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    if (bytes.len() - HEADER_LEN) as u64 != len {
        return Err(Error::MalformedPayload(format!(
            "payload length {} does not match header {len}",
            bytes.len() - HEADER_LEN
        )));
    }
    Ok(Frame {
        msg_type,
        payload: bytes[HEADER_LEN..].to_vec(),
    })
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TransportClosed,
        _ => Error::Transport(e),
    })?;
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = Vec::new();
    r.take(len).read_to_end(&mut payload)?;
    if payload.len() as u64 != len {
        return Err(Error::MalformedPayload("truncated payload".into()));
    }
    Ok(Frame { msg_type, payload })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::MalformedPayload("unexpected end of payload".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn u64(&mut self) -> Result<u64> {
        if self.remaining() < 8 {
            return Err(Error::MalformedPayload("unexpected end of payload".into()));
        }
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn residues(&mut self, count: usize, modulus: u64) -> Result<Vec<Residue>> {
        if count.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(Error::MalformedPayload(format!("{count} values exceed payload")));
        }
        (0..count)
            .map(|_| {
                let v = self.u64()?;
                if v >= modulus {
                    return Err(Error::MalformedPayload(format!("value {v} out of range")));
                }
                Ok(v)
            })
            .collect()
    }
}

pub fn ciphertext_len(n: usize) -> usize {
    1 + 8 + 2 * n * 8
}

pub fn write_ciphertext(out: &mut Vec<u8>, ct: &Ciphertext) {
    out.push(ct.domain().tag());
    out.extend_from_slice(&(ct.n() as u64).to_le_bytes());
    for c in ct.c0.coeffs.iter().chain(&ct.c1.coeffs) {
        out.extend_from_slice(&c.to_le_bytes());
    }
}

/// Noise budget is not serialized.
pub fn serialize_ciphertext(ct: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(ciphertext_len(ct.n()));
    write_ciphertext(&mut out, ct);
    out
}

fn read_ciphertext(r: &mut Reader<'_>, params: &RlweParams) -> Result<Ciphertext> {
    let domain = RingDomain::from_tag(r.u8()?)
        .ok_or_else(|| Error::MalformedPayload("bad domain tag".into()))?;
    let n = r.u64()?;
    if n != params.n() as u64 {
        return Err(Error::MalformedPayload(format!(
            "ring degree {n}, expected {}",
            params.n()
        )));
    }
    let q = params.q().modulus();
    let c0 = r.residues(params.n(), q)?;
    let c1 = r.residues(params.n(), q)?;
    Ok(Ciphertext {
        c0: RingElem { coeffs: c0, domain },
        c1: RingElem { coeffs: c1, domain },
        noise_budget_bits: params.budget_for_bound(params.fresh_noise_bound()),
    })
}

/// Parses one ciphertext; the receiver assumes a fresh-encryption budget.
pub fn deserialize_ciphertext(bytes: &[u8], params: &RlweParams) -> Result<Ciphertext> {
    let mut r = Reader::new(bytes);
    let ct = read_ciphertext(&mut r, params)?;
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload("trailing bytes after ciphertext".into()));
    }
    Ok(ct)
}

pub fn encode_ciphertexts(cts: &[Ciphertext]) -> Vec<u8> {
    let mut out = Vec::with_capacity(cts.iter().map(|c| ciphertext_len(c.n())).sum());
    for ct in cts {
        write_ciphertext(&mut out, ct);
    }
    out
}

pub fn decode_ciphertexts(bytes: &[u8], params: &RlweParams) -> Result<Vec<Ciphertext>> {
    let mut r = Reader::new(bytes);
    let mut out = Vec::new();
    while r.remaining() > 0 {
        out.push(read_ciphertext(&mut r, params)?);
    }
    Ok(out)
}

pub fn encode_shares(shares: &[Matrix<Residue>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(shares.len() as u64).to_le_bytes());
    for m in shares {
        out.extend_from_slice(&(m.rows as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols as u64).to_le_bytes());
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses share matrices, checking every entry is below `field`'s modulus.
pub fn decode_shares(bytes: &[u8], field: &FieldSpec) -> Result<Vec<Matrix<Residue>>> {
    let mut r = Reader::new(bytes);
    let count = r.u64()?;
    // each matrix needs at least its two dimension words
    if count > (r.remaining() / 16) as u64 {
        return Err(Error::MalformedPayload(format!("share count {count} exceeds payload")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::MalformedPayload("share dimensions overflow".into()))?;
        let data = r.residues(len, field.modulus())?;
        out.push(Matrix { rows, cols, data });
    }
    if r.remaining() != 0 {
        return Err(Error::MalformedPayload("trailing bytes after shares".into()));
    }
    Ok(out)
}

/// Blocking, ordered, reliable frame delivery.
pub trait Transport: Send {
    fn send_frame(&mut self, frame: &Frame) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Frame>;
}

/// One end of an in-process channel pair.
pub struct InProcTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn inproc_pair() -> (InProcTransport, InProcTransport) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    (
        InProcTransport { tx: tx_a, rx: rx_a },
        InProcTransport { tx: tx_b, rx: rx_b },
    )
}

impl Transport for InProcTransport {
    fn send_frame(&mut self, frame: &Frame) -> Result<()> {
        self.tx.send(frame.encode()).map_err(|_| Error::TransportClosed)
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        let bytes = self.rx.recv().map_err(|_| Error::TransportClosed)?;
        decode_frame(&bytes)
    }
}

/// Frames over any byte stream; used with `TcpStream`.
pub struct StreamTransport<S: Read + Write> {
    reader: BufReader<S>,
    writer: BufWriter<S>,
}

impl StreamTransport<TcpStream> {
    pub fn from_tcp(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(read_half),
            writer: BufWriter::new(stream),
        })
    }
}

impl<S: Read + Write + Send> Transport for StreamTransport<S> {
    fn send_frame(&mut self, frame: &Frame) -> Result<()> {
        write_frame(&mut self.writer, frame)
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        read_frame(&mut self.reader)
    }
}

/// Accepts a single connection.
pub fn tcp_accept(listener: &TcpListener) -> Result<StreamTransport<TcpStream>> {
    let (stream, _) = listener.accept()?;
    StreamTransport::from_tcp(stream)
}

pub fn tcp_listen(addr: impl ToSocketAddrs) -> Result<StreamTransport<TcpStream>> {
    tcp_accept(&TcpListener::bind(addr)?)
}

/// Connects, retrying for a few seconds while the listener comes up.
pub fn tcp_connect(addr: impl ToSocketAddrs + Clone) -> Result<StreamTransport<TcpStream>> {
    let mut last = None;
    for _ in 0..100 {
        match TcpStream::connect(addr.clone()) {
            Ok(s) => return StreamTransport::from_tcp(s),
            Err(e) => {
                last = Some(e);
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
    Err(Error::Transport(last.expect("at least one attempt")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub msg_type: MessageType,
    /// Full frame length including the header.
    pub bytes: u64,
}

/// Ordered log of every frame crossing the wire, plus a running digest of
/// the frame bytes.
#[derive(Clone, Debug, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
    hasher: Sha256,
}

impl PartialEq for Transcript {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries && self.digest() == other.digest()
    }
}

impl Transcript {
    pub fn record(&mut self, direction: Direction, frame: &Frame) {
        self.entries.push(TranscriptEntry {
            direction,
            msg_type: frame.msg_type,
            bytes: frame.encoded_len() as u64,
        });
        self.hasher.update([direction as u8]);
        self.hasher.update(frame.encode());
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    /// SHA-256 over the direction-tagged frame bytes, in order.
    pub fn digest(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TranscriptTotals {
    pub alice_to_bob: u64,
    pub bob_to_alice: u64,
    pub by_type: BTreeMap<(Direction, MessageType), u64>,
}

impl TranscriptTotals {
    pub fn total(&self) -> u64 {
        self.alice_to_bob + self.bob_to_alice
    }
}

pub fn transcript_bytes(t: &Transcript) -> TranscriptTotals {
    let mut totals = TranscriptTotals::default();
    for e in &t.entries {
        match e.direction {
            Direction::AliceToBob => totals.alice_to_bob += e.bytes,
            Direction::BobToAlice => totals.bob_to_alice += e.bytes,
        }
        *totals.by_type.entry((e.direction, e.msg_type)).or_default() += e.bytes;
    }
    totals
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    fn outbound(self) -> Direction {
        match self {
            Role::Alice => Direction::AliceToBob,
            Role::Bob => Direction::BobToAlice,
        }
    }

    fn inbound(self) -> Direction {
        match self {
            Role::Alice => Direction::BobToAlice,
            Role::Bob => Direction::AliceToBob,
        }
    }

    /// Message types this role may send.
    pub fn allowed_outbound(self) -> &'static [MessageType] {
        match self {
            Role::Alice => &[
                MessageType::Hello,
                MessageType::CiphertextBlocks,
                MessageType::ActivationShareUp,
                MessageType::Error,
            ],
            Role::Bob => &[
                MessageType::Hello,
                MessageType::AliceShareCiphertexts,
                MessageType::ActivationShareDown,
                MessageType::Done,
                MessageType::Error,
            ],
        }
    }
}

/// A party's endpoint: transport plus transcript and message-order checks.
pub struct Channel {
    role: Role,
    transport: Box<dyn Transport>,
    transcript: Transcript,
}

impl Channel {
    pub fn new(role: Role, transport: Box<dyn Transport>) -> Self {
        Self {
            role,
            transport,
            transcript: Transcript::default(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    pub fn send(&mut self, msg_type: MessageType, payload: Vec<u8>) -> Result<()> {
        debug_assert!(self.role.allowed_outbound().contains(&msg_type));
        let frame = Frame::new(msg_type, payload);
        self.transcript.record(self.role.outbound(), &frame);
        self.transport.send_frame(&frame)
    }

    /// Receives the next frame, which must be of type `expected`. An Error
    /// frame from the peer surfaces as [`Error::Peer`].
    pub fn recv(&mut self, expected: MessageType) -> Result<Vec<u8>> {
        let frame = self.transport.recv_frame()?;
        self.transcript.record(self.role.inbound(), &frame);
        if frame.msg_type == MessageType::Error && expected != MessageType::Error {
            return Err(Error::Peer(String::from_utf8_lossy(&frame.payload).into_owned()));
        }
        if frame.msg_type != expected {
            return Err(Error::ProtocolOrderViolation {
                expected,
                got: frame.msg_type,
            });
        }
        Ok(frame.payload)
    }

    /// Best-effort error notification to the peer.
    pub fn send_error(&mut self, message: &str) {
        let _ = self.send(MessageType::Error, message.as_bytes().to_vec());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modfield::find_prime;
    use crate::ringbfv::{Bfv, PlainVec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn toy_params() -> RlweParams {
        let pe = FieldSpec::new(97).unwrap();
        let q = FieldSpec::new(find_prime(1 << 40, 1, 32 * 97).unwrap()).unwrap();
        RlweParams::new(16, q, pe, 4.0).unwrap()
    }

    fn random_ct(params: &RlweParams, rng: &mut ChaCha20Rng) -> Ciphertext {
        let q = params.q();
        let domain = if rng.gen() { RingDomain::Coefficient } else { RingDomain::Evaluation };
        let elem = |rng: &mut ChaCha20Rng| RingElem {
            coeffs: (0..params.n()).map(|_| q.sample_uniform(rng)).collect(),
            domain,
        };
        Ciphertext {
            c0: elem(rng),
            c1: elem(rng),
            noise_budget_bits: params.budget_for_bound(params.fresh_noise_bound()),
        }
    }

    #[test]
    fn ciphertext_layout_and_roundtrip() {
        let params = toy_params();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let ct = random_ct(&params, &mut rng);
            let bytes = serialize_ciphertext(&ct);
            assert_eq!(bytes.len(), 265);
            assert_eq!(bytes.len(), ciphertext_len(16));
            assert_eq!(deserialize_ciphertext(&bytes, &params).unwrap(), ct);
        }
        let ct = random_ct(&params, &mut rng);
        let bytes = serialize_ciphertext(&ct);
        assert!(matches!(
            deserialize_ciphertext(&bytes[..200], &params),
            Err(Error::MalformedPayload(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = 9;
        assert!(deserialize_ciphertext(&bad, &params).is_err());
        let mut big = bytes.clone();
        big[9..17].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(deserialize_ciphertext(&big, &params).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(deserialize_ciphertext(&extra, &params).is_err());
    }

    #[test]
    fn deserialized_ciphertext_still_decrypts() {
        let params = toy_params();
        let bfv = Bfv::new(&params).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sk = bfv.keygen(&mut rng);
        let m = PlainVec::new((0..16).map(|i| i as u64 * 5).collect());
        let ct = bfv.encrypt(&m, &sk, &mut rng).unwrap();
        let back = deserialize_ciphertext(&serialize_ciphertext(&ct), &params).unwrap();
        assert_eq!(bfv.decrypt(&back, &sk).unwrap(), m);
    }

    #[test]
    fn frame_header_validation() {
        let f = Frame::new(MessageType::Done, vec![1, 2, 3]);
        let bytes = f.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_frame(&bad_magic), Err(Error::MalformedPayload(_))));
        let mut bad_version = bytes.clone();
        bad_version[4] = 2;
        assert!(decode_frame(&bad_version).is_err());
        let mut bad_type = bytes.clone();
        bad_type[5] = 0x42;
        assert!(decode_frame(&bad_type).is_err());
        let mut huge = bytes.clone();
        huge[6..14].copy_from_slice(&(MAX_PAYLOAD + 1).to_le_bytes());
        assert!(decode_frame(&huge).is_err());
        assert!(read_frame(&mut &huge[..]).is_err());
        assert!(decode_frame(&bytes[..HEADER_LEN + 1]).is_err());
        assert!(matches!(read_frame(&mut &bytes[..HEADER_LEN + 1]), Err(Error::MalformedPayload(_))));
        assert!(matches!(read_frame(&mut &bytes[..3]), Err(Error::TransportClosed)));
    }

    #[test]
    fn inproc_is_fifo() {
        let (mut a, mut b) = inproc_pair();
        for i in 0..10u8 {
            a.send_frame(&Frame::new(MessageType::CiphertextBlocks, vec![i; i as usize])).unwrap();
        }
        for i in 0..10u8 {
            assert_eq!(b.recv_frame().unwrap().payload, vec![i; i as usize]);
        }
        b.send_frame(&Frame::new(MessageType::Done, vec![])).unwrap();
        assert_eq!(a.recv_frame().unwrap().msg_type, MessageType::Done);
        drop(a);
        assert!(matches!(b.recv_frame(), Err(Error::TransportClosed)));
    }

    #[test]
    fn tcp_loopback_is_byte_identical() {
        let params = {
            let pe = FieldSpec::new(12289).unwrap();
            let q = FieldSpec::new(find_prime(1 << 50, 1, 4096 * 12289).unwrap()).unwrap();
            RlweParams::new(2048, q, pe, 4.0).unwrap()
        };
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let ct = random_ct(&params, &mut rng);
        let frame = Frame::new(MessageType::CiphertextBlocks, serialize_ciphertext(&ct));
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let echo = std::thread::spawn(move || {
            let mut t = tcp_accept(&listener).unwrap();
            let f = t.recv_frame().unwrap();
            t.send_frame(&f).unwrap();
            f.encode()
        });
        let mut client = tcp_connect(addr).unwrap();
        client.send_frame(&frame).unwrap();
        let back = client.recv_frame().unwrap();
        assert_eq!(echo.join().unwrap(), frame.encode());
        assert_eq!(back.encode(), frame.encode());
        assert_eq!(deserialize_ciphertext(&back.payload, &params).unwrap(), ct);
    }

    #[test]
    fn shares_roundtrip_and_range_check() {
        let f = FieldSpec::new(97).unwrap();
        let m = vec![
            Matrix::from_vec(2, 3, vec![1, 2, 3, 4, 5, 96]).unwrap(),
            Matrix::from_vec(1, 1, vec![0]).unwrap(),
        ];
        let bytes = encode_shares(&m);
        assert_eq!(decode_shares(&bytes, &f).unwrap(), m);
        let f17 = FieldSpec::new(17).unwrap();
        assert!(decode_shares(&bytes, &f17).is_err());
        assert!(decode_shares(&bytes[..bytes.len() - 1], &f).is_err());
        let mut lying = bytes.clone();
        lying[0..8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_shares(&lying, &f).is_err());
        assert_eq!(decode_shares(&encode_shares(&[]), &f).unwrap(), vec![]);
    }

    #[test]
    fn transcript_totals() {
        let t = Transcript::default();
        assert_eq!(transcript_bytes(&t).total(), 0);
        let mut t = Transcript::default();
        let f1 = Frame::new(MessageType::Hello, vec![0; 32]);
        let f2 = Frame::new(MessageType::CiphertextBlocks, vec![0; 265]);
        let f3 = Frame::new(MessageType::AliceShareCiphertexts, vec![0; 265]);
        t.record(Direction::AliceToBob, &f1);
        t.record(Direction::AliceToBob, &f2);
        t.record(Direction::BobToAlice, &f3);
        let totals = transcript_bytes(&t);
        assert_eq!(totals.alice_to_bob, 46 + 279);
        assert_eq!(totals.bob_to_alice, 279);
        assert_eq!(totals.total(), t.entries().iter().map(|e| e.bytes).sum::<u64>());
        assert_eq!(totals.by_type[&(Direction::BobToAlice, MessageType::AliceShareCiphertexts)], 279);
    }

    #[test]
    fn channel_enforces_order() {
        let (a, b) = inproc_pair();
        let mut alice = Channel::new(Role::Alice, Box::new(a));
        let mut bob = Channel::new(Role::Bob, Box::new(b));
        alice.send(MessageType::CiphertextBlocks, vec![]).unwrap();
        assert!(matches!(
            bob.recv(MessageType::Hello),
            Err(Error::ProtocolOrderViolation { expected: MessageType::Hello, got: MessageType::CiphertextBlocks })
        ));
        bob.send_error("nope");
        assert!(matches!(alice.recv(MessageType::Done), Err(Error::Peer(m)) if m == "nope"));
    }

    proptest! {
        #[test]
        fn mutated_frames_never_panic(seed in any::<u64>(), flips in 1usize..8) {
            let params = toy_params();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let ct = random_ct(&params, &mut rng);
            let mut bytes = Frame::new(MessageType::CiphertextBlocks, serialize_ciphertext(&ct)).encode();
            for _ in 0..flips {
                let i = rng.gen_range(0..bytes.len());
                bytes[i] ^= 1 << rng.gen_range(0..8);
            }
            if rng.gen_bool(0.3) {
                let cut = rng.gen_range(0..bytes.len());
                bytes.truncate(cut);
            }
            if let Ok(f) = decode_frame(&bytes) {
                let _ = decode_ciphertexts(&f.payload, &params);
                let _ = decode_shares(&f.payload, params.p_e());
            }
        }
    }
}
