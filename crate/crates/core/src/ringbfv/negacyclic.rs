//! Negacyclic NTT over `Z_m[x]/(x^n + 1)` using a primitive 2n-th root ψ.
//!
//! Forward is Cooley-Tukey with ψ-powers in bit-reversed order (natural in,
//! bit-reversed out), inverse is Gentleman-Sande. Evaluation index `j`
//! holds the value at `ψ^(2·brv(j) + 1)`.

use crate::error::{Error, Result};
use crate::modfield::{FieldSpec, Residue};

#[derive(Clone, Debug)]
pub struct NegacyclicNtt {
    field: FieldSpec,
    n: usize,
    log_n: u32,
    psi: Residue,
    psi_brv: Vec<Residue>,
    psi_brv_shoup: Vec<u64>,
    psi_inv_brv: Vec<Residue>,
    psi_inv_brv_shoup: Vec<u64>,
    n_inv: Residue,
    n_inv_shoup: u64,
}

#[inline]
fn shoup(w: Residue, m: u64) -> u64 {
    (((w as u128) << 64) / m as u128) as u64
}

/// `a·w mod m` given the precomputed `shoup(w, m)`.
#[inline]
fn mul_shoup(a: u64, w: u64, w_shoup: u64, m: u64) -> u64 {
    let hi = ((a as u128 * w_shoup as u128) >> 64) as u64;
    let r = a.wrapping_mul(w).wrapping_sub(hi.wrapping_mul(m));
    if r >= m {
        r - m
    } else {
        r
    }
}

pub(crate) fn bit_reverse(i: usize, bits: u32) -> usize {
    if bits == 0 {
        0
    } else {
        i.reverse_bits() >> (usize::BITS - bits)
    }
}

impl NegacyclicNtt {
    pub fn new(n: usize, field: &FieldSpec) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::InvalidParams(format!("ring degree {n} is not a power of two")));
        }
        let psi = field.find_root_of_unity(2 * n as u64)?;
        Self::with_psi(n, psi, field)
    }

    pub fn with_psi(n: usize, psi: Residue, field: &FieldSpec) -> Result<Self> {
        if !field.is_primitive_root_of_unity(psi, 2 * n as u64) {
            return Err(Error::BadRoot {
                root: psi,
                order: 2 * n as u64,
            });
        }
        let m = field.modulus();
        let log_n = n.trailing_zeros();
        let psi_inv = field.inv_mod(psi);
        let mut psi_brv = vec![0; n];
        let mut psi_inv_brv = vec![0; n];
        let (mut pw, mut pw_inv) = (1u64, 1u64);
        for i in 0..n {
            let j = bit_reverse(i, log_n);
            psi_brv[j] = pw;
            psi_inv_brv[j] = pw_inv;
            pw = field.mul_mod(pw, psi);
            pw_inv = field.mul_mod(pw_inv, psi_inv);
        }
        let n_inv = field.inv_mod(n as u64 % m);
        Ok(Self {
            field: field.clone(),
            n,
            log_n,
            psi,
            psi_brv_shoup: psi_brv.iter().map(|&w| shoup(w, m)).collect(),
            psi_inv_brv_shoup: psi_inv_brv.iter().map(|&w| shoup(w, m)).collect(),
            psi_brv,
            psi_inv_brv,
            n_inv,
            n_inv_shoup: shoup(n_inv, m),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_n(&self) -> u32 {
        self.log_n
    }

    pub fn psi(&self) -> Residue {
        self.psi
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    pub fn forward(&self, a: &mut [Residue]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.field.modulus();
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let (w, ws) = (self.psi_brv[m + i], self.psi_brv_shoup[m + i]);
                let j1 = 2 * i * t;
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = mul_shoup(a[j + t], w, ws, q);
                    a[j] = if u + v >= q { u + v - q } else { u + v };
                    a[j + t] = if u >= v { u - v } else { u + q - v };
                }
            }
            m <<= 1;
        }
    }

    pub fn inverse(&self, a: &mut [Residue]) {
        debug_assert_eq!(a.len(), self.n);
        let q = self.field.modulus();
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let mut j1 = 0;
            for i in 0..h {
                let (w, ws) = (self.psi_inv_brv[h + i], self.psi_inv_brv_shoup[h + i]);
                for j in j1..j1 + t {
                    let u = a[j];
                    let v = a[j + t];
                    a[j] = if u + v >= q { u + v - q } else { u + v };
                    let d = if u >= v { u - v } else { u + q - v };
                    a[j + t] = mul_shoup(d, w, ws, q);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, q);
        }
    }

    /// Evaluation point held by index `j` of the forward output.
    pub fn eval_point(&self, j: usize) -> Residue {
        let e = 2 * bit_reverse(j, self.log_n) as u64 + 1;
        self.field.pow_mod(self.psi, e)
    }
}

/// Schoolbook product in `Z_m[x]/(x^n + 1)`.
pub fn negacyclic_mul_direct(a: &[Residue], b: &[Residue], field: &FieldSpec) -> Vec<Residue> {
    let n = a.len();
    let mut out = vec![0; n];
    for i in 0..n {
        for j in 0..n {
            let p = field.mul_mod(a[i], b[j]);
            let k = i + j;
            if k < n {
                out[k] = field.add_mod(out[k], p);
            } else {
                out[k - n] = field.sub_mod(out[k - n], p);
            }
        }
    }
    out
}
