//! Parameter selection: the dynamic-range bound on `p_N`, modulus-chain
//! construction, ciphertext modulus choice and the reference presets.

use std::fmt;

use crate::error::{Error, Result};
use crate::hss::ModulusChain;
use crate::modfield::{find_prime, gaussian_bound, is_prime, FieldSpec};
use crate::ringbfv::RlweParams;

/// Error width used by every preset.
pub const DEFAULT_SIGMA: f64 = 4.0;
/// Lattice dimension of the published presets.
pub const REFERENCE_N: usize = 2048;
/// Extra bits of noise headroom on top of the worst-case bound.
pub const NOISE_HEADROOM_BITS: f64 = 2.0;

/// Bit widths of activations and weights plus the filter size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PrecisionProfile {
    pub input_bits: u32,
    /// `0` denotes binary (±1) weights.
    pub filter_bits: u32,
    pub f_h: usize,
    pub f_w: usize,
}

impl PrecisionProfile {
    pub fn new(input_bits: u32, filter_bits: u32, f_h: usize, f_w: usize) -> Result<Self> {
        if input_bits == 0 || input_bits > 32 || filter_bits > 32 {
            return Err(Error::InvalidParams(format!(
                "bit widths must be in 1..=32 (input) and 0..=32 (filter), got {input_bits}/{filter_bits}"
            )));
        }
        if f_h == 0 || f_w == 0 {
            return Err(Error::InvalidParams("filter dimensions must be positive".into()));
        }
        Ok(Self {
            input_bits,
            filter_bits,
            f_h,
            f_w,
        })
    }
}

/// `max(u)·max(w)·f_h·f_w` with `max(v) = 2^bits`.
pub fn min_pntt(profile: &PrecisionProfile) -> u128 {
    (1u128 << profile.input_bits)
        * (1u128 << profile.filter_bits)
        * profile.f_h as u128
        * profile.f_w as u128
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChainMode {
    /// One prime for `p_N`, `p_A` and `p_E`.
    Unified,
    /// Separate `p_N` and `p_E` chosen by the published table rules, accepted
    /// only if the no-wrap validator passes.
    SplitPaper,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub chain: ModulusChain,
    pub rlwe: RlweParams,
    pub profile: PrecisionProfile,
    pub mode: ChainMode,
    pub preset_name: Option<String>,
}

impl ParamSet {
    pub fn insecure(&self) -> bool {
        self.rlwe.is_insecure()
    }

    pub fn bound(&self) -> u128 {
        min_pntt(&self.profile)
    }

    pub fn lg_q(&self) -> u32 {
        self.rlwe.q().bits()
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(name) = &self.preset_name {
            writeln!(f, "preset      {name}")?;
        }
        writeln!(
            f,
            "profile     input {} bits, filter {} bits, {}x{}",
            self.profile.input_bits, self.profile.filter_bits, self.profile.f_h, self.profile.f_w
        )?;
        writeln!(f, "bound       {}", self.bound())?;
        writeln!(f, "mode        {:?}", self.mode)?;
        writeln!(f, "p_N         {}", self.chain.p_n().modulus())?;
        writeln!(f, "p_A         {}", self.chain.p_a().modulus())?;
        writeln!(f, "p_E         {} ({} bits)", self.chain.p_e().modulus(), self.chain.p_e().bits())?;
        writeln!(f, "q           {} ({} bits)", self.rlwe.q().modulus(), self.lg_q())?;
        writeln!(f, "n           {}", self.rlwe.n())?;
        write!(f, "sigma       {}", self.rlwe.sigma())
    }
}

/// Smallest prime `q ≡ 1 (mod 2n·p_e)` leaving [`NOISE_HEADROOM_BITS`] of
/// budget after one fresh encryption is multiplied by a worst-case
/// plaintext. `q ≡ 1 (mod p_e)` keeps the `q mod p_e` noise term at 1.
pub fn select_q(n: usize, p_e: &FieldSpec, sigma: f64) -> Result<FieldSpec> {
    let pe = p_e.modulus();
    let nw = n as f64 * (pe / 2) as f64;
    let bound = nw * gaussian_bound(sigma) as f64 + (nw + 1.0);
    let target = bound.log2() + NOISE_HEADROOM_BITS;
    let min_q = ((target + 1.0).exp2() * pe as f64).ceil();
    if min_q >= (1u64 << 62) as f64 {
        return Err(Error::SearchExhausted);
    }
    let step = (2 * n as u64).checked_mul(pe).ok_or(Error::SearchExhausted)?;
    FieldSpec::new(find_prime(min_q as u64, 1, step)?)
}

fn to_u64(bound: u128) -> Result<u64> {
    u64::try_from(bound)
        .ok()
        .filter(|&b| b < 1 << 61)
        .ok_or_else(|| Error::RangeViolation(format!("bound {bound} too large")))
}

/// Split-mode `p_N`: smallest prime `>= bound` with `p ≡ 1 (mod 3)`.
pub fn table_p_n(bound: u128) -> Result<u64> {
    find_prime(to_u64(bound)?, 1, 3)
}

/// Split-mode `p_E`: smallest prime `≡ 1 (mod 2n)` not below `p_N`.
pub fn table_p_e(p_n: u64, n: usize) -> Result<u64> {
    find_prime(p_n, 1, 2 * n as u64)
}

pub fn build_params(profile: PrecisionProfile, n: usize, mode: ChainMode) -> Result<ParamSet> {
    if !n.is_power_of_two() || n < 2 {
        return Err(Error::InvalidParams(format!("n = {n} is not a power of two >= 2")));
    }
    let bound = min_pntt(&profile);
    let chain = match mode {
        ChainMode::Unified => {
            ModulusChain::unified(FieldSpec::new(find_prime(to_u64(bound)?, 1, 2 * n as u64)?)?)
        }
        ChainMode::SplitPaper => {
            let p_n = FieldSpec::new(table_p_n(bound)?)?;
            let p_e = FieldSpec::new(table_p_e(p_n.modulus(), n)?)?;
            let chain = ModulusChain::new(p_n.clone(), p_n, p_e)?;
            chain.validate_no_wrap(1)?;
            chain
        }
    };
    let q = select_q(n, chain.p_e(), DEFAULT_SIGMA)?;
    let rlwe = RlweParams::new(n, q, chain.p_e().clone(), DEFAULT_SIGMA)?;
    Ok(ParamSet {
        chain,
        rlwe,
        profile,
        mode,
        preset_name: None,
    })
}

pub const PRESET_NAMES: [&str; 4] = ["binary", "medium", "high", "toy"];

/// Profile and lattice dimension of a named preset.
pub fn preset_profile(name: &str) -> Result<(PrecisionProfile, usize)> {
    let (input, filter, f, n) = match name {
        "binary" => (8, 0, 3, REFERENCE_N),
        "medium" => (8, 6, 3, REFERENCE_N),
        "high" => (12, 6, 3, REFERENCE_N),
        "toy" => (1, 1, 3, 16),
        _ => {
            return Err(Error::InvalidParams(format!(
                "unknown preset {name:?}; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok((PrecisionProfile::new(input, filter, f, f)?, n))
}

/// Named preset in unified mode.
pub fn preset(name: &str) -> Result<ParamSet> {
    let (profile, n) = preset_profile(name)?;
    let mut set = build_params(profile, n, ChainMode::Unified)?;
    set.preset_name = Some(name.to_string());
    Ok(set)
}

/// One column of the published parameter table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TabulatedPreset {
    pub name: &'static str,
    pub p_n: u64,
    pub p_e: u64,
    pub lg_q: u32,
    pub n: usize,
}

pub const PUBLISHED_PRESETS: [TabulatedPreset; 3] = [
    TabulatedPreset { name: "binary", p_n: 2311, p_e: 12289, lg_q: 45, n: REFERENCE_N },
    TabulatedPreset { name: "medium", p_n: 147457, p_e: 147457, lg_q: 53, n: REFERENCE_N },
    TabulatedPreset { name: "high", p_n: 2359303, p_e: 2363393, lg_q: 60, n: REFERENCE_N },
];

/// Checks for one tabulated preset. Failures here are findings, not errors.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetCheck {
    pub tabulated: TabulatedPreset,
    pub bound: u128,
    pub p_n_prime: bool,
    pub p_e_prime: bool,
    /// `p_E ≡ 1 (mod 2n)`.
    pub p_e_congruent: bool,
    /// `p_N ≡ 1 (mod 3)`.
    pub p_n_congruent: bool,
    pub bound_ok: bool,
    pub ordering_ok: bool,
    /// The split-mode selection rules reproduce the tabulated `p_N` and `p_E`.
    pub rules_reproduce: bool,
    /// Split chain passes the no-wrap validator (single input channel).
    pub no_wrap_ok: bool,
    /// Our `q` for the tabulated `p_E`.
    pub our_lg_q: Option<u32>,
    pub lg_q_within_table: bool,
}

impl PresetCheck {
    /// Every tabulated property holds (the no-wrap condition is reported
    /// separately).
    pub fn table_consistent(&self) -> bool {
        self.p_n_prime
            && self.p_e_prime
            && self.p_e_congruent
            && self.p_n_congruent
            && self.bound_ok
            && self.ordering_ok
            && self.rules_reproduce
            && self.lg_q_within_table
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetReport {
    pub checks: Vec<PresetCheck>,
}

impl PresetReport {
    pub fn get(&self, name: &str) -> Option<&PresetCheck> {
        self.checks.iter().find(|c| c.tabulated.name == name)
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "FAIL"
    }
}

impl fmt::Display for PresetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>10}",
            "preset", "p_N", "p_E", "bound", "prime", "cong", "bound", "order", "rules", "lg q", "no-wrap", "our lg q"
        )?;
        for c in &self.checks {
            let t = &c.tabulated;
            writeln!(
                f,
                "{:<8} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>8} {:>10}",
                t.name,
                t.p_n,
                t.p_e,
                c.bound,
                yes_no(c.p_n_prime && c.p_e_prime),
                yes_no(c.p_n_congruent && c.p_e_congruent),
                yes_no(c.bound_ok),
                yes_no(c.ordering_ok),
                yes_no(c.rules_reproduce),
                yes_no(c.lg_q_within_table),
                yes_no(c.no_wrap_ok),
                c.our_lg_q.map_or("-".to_string(), |b| b.to_string()),
            )?;
        }
        Ok(())
    }
}

/// Checks the three tabulated presets against primality, congruences, the
/// dynamic-range bound, ordering, the selection rules and the no-wrap
/// condition.
pub fn validate_paper_presets() -> PresetReport {
    let checks = PUBLISHED_PRESETS
        .iter()
        .map(|t| {
            let (profile, _) = preset_profile(t.name).expect("published presets are registered");
            let bound = min_pntt(&profile);
            let n2 = 2 * t.n as u64;
            let fields = FieldSpec::new(t.p_n).ok().zip(FieldSpec::new(t.p_e).ok());
            let no_wrap_ok = fields.as_ref().is_some_and(|(pn, pe)| {
                ModulusChain::new(pn.clone(), pn.clone(), pe.clone())
                    .and_then(|c| c.validate_no_wrap(1))
                    .is_ok()
            });
            let our_lg_q = fields
                .as_ref()
                .and_then(|(_, pe)| select_q(t.n, pe, DEFAULT_SIGMA).ok())
                .map(|q| q.bits());
            let rules_reproduce = table_p_n(bound).ok() == Some(t.p_n)
                && table_p_e(t.p_n, t.n).ok() == Some(t.p_e);
            PresetCheck {
                tabulated: *t,
                bound,
                p_n_prime: is_prime(t.p_n),
                p_e_prime: is_prime(t.p_e),
                p_e_congruent: t.p_e % n2 == 1,
                p_n_congruent: t.p_n % 3 == 1,
                bound_ok: t.p_n as u128 >= bound,
                ordering_ok: t.p_e >= t.p_n,
                rules_reproduce,
                no_wrap_ok,
                our_lg_q,
                lg_q_within_table: our_lg_q.is_some_and(|b| b <= t.lg_q),
            }
        })
        .collect();
    PresetReport { checks }
}
