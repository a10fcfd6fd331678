//! Number-theoretic transforms over the image modulus.
//!
//! Images and filters are zero-padded so that cyclic convolution equals
//! linear convolution, transformed with a separable 2D NTT, multiplied
//! element-wise and transformed back. Everything here is exact over `Z_p`.

use crate::error::{Error, Result};
use crate::modfield::{FieldSpec, Residue};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::default(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::BadGeometry("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

impl Matrix<i64> {
    pub fn encode(&self, field: &FieldSpec) -> Matrix<Residue> {
        self.map(|v| field.encode_signed(v))
    }
}

impl Matrix<Residue> {
    pub fn decode(&self, field: &FieldSpec) -> Matrix<i64> {
        self.map(|v| field.decode_signed(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Time,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvType {
    Same,
    Valid,
}

/// Shapes of one 2D convolution plus the transform size that realizes it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub image_h: usize,
    pub image_w: usize,
    pub filter_h: usize,
    pub filter_w: usize,
    pub conv_type: ConvType,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl ConvGeometry {
    /// Picks padded sizes with [`transform_len`] for the given field.
    pub fn new(
        image_h: usize,
        image_w: usize,
        filter_h: usize,
        filter_w: usize,
        conv_type: ConvType,
        field: &FieldSpec,
    ) -> Result<Self> {
        if image_h == 0 || image_w == 0 || filter_h == 0 || filter_w == 0 {
            return Err(Error::BadGeometry("zero-sized image or filter".into()));
        }
        let padded_h = transform_len(image_h + filter_h - 1, field)?;
        let padded_w = transform_len(image_w + filter_w - 1, field)?;
        Self::with_padding(
            image_h, image_w, filter_h, filter_w, conv_type, padded_h, padded_w,
        )
    }

    pub fn with_padding(
        image_h: usize,
        image_w: usize,
        filter_h: usize,
        filter_w: usize,
        conv_type: ConvType,
        padded_h: usize,
        padded_w: usize,
    ) -> Result<Self> {
        let g = Self {
            image_h,
            image_w,
            filter_h,
            filter_w,
            conv_type,
            padded_h,
            padded_w,
        };
        if padded_h < image_h + filter_h - 1 || padded_w < image_w + filter_w - 1 {
            return Err(Error::BadGeometry(format!(
                "padding {padded_h}x{padded_w} too small for {image_h}x{image_w} * {filter_h}x{filter_w}"
            )));
        }
        if conv_type == ConvType::Valid && (filter_h > image_h || filter_w > image_w) {
            return Err(Error::BadGeometry(
                "valid convolution needs filter no larger than image".into(),
            ));
        }
        Ok(g)
    }

    /// Dimensions after cropping.
    pub fn output_dims(&self) -> (usize, usize) {
        match self.conv_type {
            ConvType::Same => (self.image_h, self.image_w),
            ConvType::Valid => (
                self.image_h - self.filter_h + 1,
                self.image_w - self.filter_w + 1,
            ),
        }
    }

    /// Top-left corner of the crop window inside the full linear convolution.
    pub fn crop_offset(&self) -> (usize, usize) {
        match self.conv_type {
            ConvType::Same => ((self.filter_h - 1) / 2, (self.filter_w - 1) / 2),
            ConvType::Valid => (self.filter_h - 1, self.filter_w - 1),
        }
    }

    pub fn padded_len(&self) -> usize {
        self.padded_h * self.padded_w
    }
}

/// Transform length for a dimension needing at least `need` points.
///
/// Smallest power of two `>= need` dividing `p - 1`; when the field's
/// two-adicity is too small, falls back to the smallest divisor of `p - 1`
/// that is `>= need` (served by the quadratic path).
pub fn transform_len(need: usize, field: &FieldSpec) -> Result<usize> {
    let group = field.modulus() - 1;
    let pow2 = need.max(1).next_power_of_two() as u64;
    if pow2.trailing_zeros() <= field.two_adicity() {
        return Ok(pow2 as usize);
    }
    let limit = group.min((need as u64).saturating_mul(4096));
    (need.max(1) as u64..=limit)
        .find(|d| group.is_multiple_of(*d))
        .map(|d| d as usize)
        .ok_or_else(|| {
            Error::BadGeometry(format!(
                "no transform length >= {need} divides {} - 1",
                field.modulus()
            ))
        })
}

/// Precomputed state for repeated transforms of one length.
#[derive(Clone, Debug)]
pub struct NttPlan {
    field: FieldSpec,
    len: usize,
    root: Residue,
    len_inv: Residue,
    /// `root^k` for `k < len/2` (radix-2) or `k < len` (direct).
    powers: Vec<Residue>,
    powers_inv: Vec<Residue>,
}

impl NttPlan {
    /// Plan using the canonical root of unity of order `len`.
    pub fn new(len: usize, field: &FieldSpec) -> Result<Self> {
        let root = field
            .find_root_of_unity(len as u64)
            .map_err(|_| Error::BadGeometry(format!("{len} does not divide {} - 1", field.modulus())))?;
        Self::with_root(len, root, field)
    }

    pub fn with_root(len: usize, root: Residue, field: &FieldSpec) -> Result<Self> {
        if len == 0 || !field.is_primitive_root_of_unity(root, len as u64) {
            return Err(Error::BadRoot {
                root,
                order: len as u64,
            });
        }
        let root_inv = field.inv_mod(root);
        let count = if len.is_power_of_two() { len / 2 } else { len };
        let table = |w: Residue| {
            let mut v = Vec::with_capacity(count);
            let mut acc = 1 % field.modulus();
            for _ in 0..count {
                v.push(acc);
                acc = field.mul_mod(acc, w);
            }
            v
        };
        Ok(Self {
            field: field.clone(),
            len,
            root,
            len_inv: field.inv_mod(len as u64 % field.modulus()),
            powers: table(root),
            powers_inv: table(root_inv),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root(&self) -> Residue {
        self.root
    }

    pub fn forward(&self, x: &mut [Residue]) {
        debug_assert_eq!(x.len(), self.len);
        if self.len.is_power_of_two() {
            radix2(x, &self.powers, &self.field);
        } else {
            direct_in_place(x, &self.powers, &self.field);
        }
    }

    pub fn inverse(&self, x: &mut [Residue]) {
        debug_assert_eq!(x.len(), self.len);
        if self.len.is_power_of_two() {
            radix2(x, &self.powers_inv, &self.field);
        } else {
            direct_in_place(x, &self.powers_inv, &self.field);
        }
        for v in x.iter_mut() {
            *v = self.field.mul_mod(*v, self.len_inv);
        }
    }
}

/// Iterative decimation-in-time radix-2 transform, natural order in and out.
/// `half_powers[k] = w^k` for `k < n/2`.
fn radix2(x: &mut [Residue], half_powers: &[Residue], f: &FieldSpec) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            x.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = half_powers[k * stride];
                let u = x[start + k];
                let v = f.mul_mod(x[start + k + half], w);
                x[start + k] = f.add_mod(u, v);
                x[start + k + half] = f.sub_mod(u, v);
            }
        }
        len <<= 1;
    }
}

fn direct_in_place(x: &mut [Residue], powers: &[Residue], f: &FieldSpec) {
    let n = x.len();
    let out: Vec<Residue> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold(0, |acc, (i, &xi)| {
                f.add_mod(acc, f.mul_mod(xi, powers[(i * k) % n]))
            })
        })
        .collect();
    x.copy_from_slice(&out);
}

/// `y_k = Σ_i x_i ω^{ik} mod p`; radix-2 when the length is a power of two.
pub fn ntt_1d(x: &[Residue], root: Residue, field: &FieldSpec) -> Result<Vec<Residue>> {
    let plan = NttPlan::with_root(x.len(), root, field)?;
    let mut y = x.to_vec();
    plan.forward(&mut y);
    Ok(y)
}

/// Inverse of [`ntt_1d`] for the same root.
pub fn intt_1d(y: &[Residue], root: Residue, field: &FieldSpec) -> Result<Vec<Residue>> {
    let plan = NttPlan::with_root(y.len(), root, field)?;
    let mut x = y.to_vec();
    plan.inverse(&mut x);
    Ok(x)
}

/// Quadratic-time evaluation of the transform definition.
pub fn dft_direct(x: &[Residue], root: Residue, field: &FieldSpec) -> Vec<Residue> {
    let n = x.len() as u64;
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(0, |acc, (i, &xi)| {
                field.add_mod(acc, field.mul_mod(xi, field.pow_mod(root, (i as u64 * k) % n.max(1))))
            })
        })
        .collect()
}

/// Padded image or filter in either the time or the frequency domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreqTensor {
    data: Vec<Residue>,
    rows: usize,
    cols: usize,
    field: FieldSpec,
    domain: Domain,
}

impl FreqTensor {
    pub fn new(
        data: Vec<Residue>,
        rows: usize,
        cols: usize,
        field: &FieldSpec,
        domain: Domain,
    ) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        if data.iter().any(|&v| v >= field.modulus()) {
            return Err(Error::BadGeometry("entry not reduced".into()));
        }
        let group = field.modulus() - 1;
        if rows == 0 || cols == 0 || !group.is_multiple_of(rows as u64) || !group.is_multiple_of(cols as u64) {
            return Err(Error::BadGeometry(format!(
                "{rows}x{cols} does not divide {} - 1",
                field.modulus()
            )));
        }
        Ok(Self {
            data,
            rows,
            cols,
            field: field.clone(),
            domain,
        })
    }

    /// Flattened frequency values; `data` must be `rows * cols` long.
    pub fn from_flat(data: Vec<Residue>, rows: usize, cols: usize, field: &FieldSpec) -> Result<Self> {
        Self::new(data, rows, cols, field, Domain::Frequency)
    }

    pub fn data(&self) -> &[Residue] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Residue> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn field(&self) -> &FieldSpec {
        &self.field
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn get(&self, r: usize, c: usize) -> Residue {
        self.data[r * self.cols + c]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.field == other.field
    }
}

/// Row and column plans for tensors of one shape.
#[derive(Clone, Debug)]
pub struct Ntt2dPlan {
    rows: NttPlan,
    cols: NttPlan,
}

impl Ntt2dPlan {
    pub fn new(rows: usize, cols: usize, field: &FieldSpec) -> Result<Self> {
        Ok(Self {
            rows: NttPlan::new(rows, field)?,
            cols: NttPlan::new(cols, field)?,
        })
    }

    pub fn for_geometry(g: &ConvGeometry, field: &FieldSpec) -> Result<Self> {
        Self::new(g.padded_h, g.padded_w, field)
    }

    fn apply(&self, data: &mut [Residue], inverse: bool) {
        let (r, c) = (self.rows.len(), self.cols.len());
        for row in data.chunks_exact_mut(c) {
            if inverse {
                self.cols.inverse(row);
            } else {
                self.cols.forward(row);
            }
        }
        let mut column = vec![0; r];
        for j in 0..c {
            for i in 0..r {
                column[i] = data[i * c + j];
            }
            if inverse {
                self.rows.inverse(&mut column);
            } else {
                self.rows.forward(&mut column);
            }
            for i in 0..r {
                data[i * c + j] = column[i];
            }
        }
    }

    pub fn forward(&self, t: &FreqTensor) -> Result<FreqTensor> {
        self.check(t, Domain::Time)?;
        let mut out = t.clone();
        self.apply(&mut out.data, false);
        out.domain = Domain::Frequency;
        Ok(out)
    }

    pub fn inverse(&self, t: &FreqTensor) -> Result<FreqTensor> {
        self.check(t, Domain::Frequency)?;
        let mut out = t.clone();
        self.apply(&mut out.data, true);
        out.domain = Domain::Time;
        Ok(out)
    }

    fn check(&self, t: &FreqTensor, domain: Domain) -> Result<()> {
        if t.domain != domain {
            return Err(Error::GeometryMismatch(format!(
                "expected {domain:?}-domain tensor"
            )));
        }
        if t.rows != self.rows.len() || t.cols != self.cols.len() || t.field != self.rows.field {
            return Err(Error::GeometryMismatch(format!(
                "plan is {}x{}, tensor is {}x{}",
                self.rows.len(),
                self.cols.len(),
                t.rows,
                t.cols
            )));
        }
        Ok(())
    }
}

/// Separable 2D transform: every row, then every column.
pub fn ntt_2d(t: &FreqTensor) -> Result<FreqTensor> {
    Ntt2dPlan::new(t.rows, t.cols, &t.field)?.forward(t)
}

pub fn intt_2d(t: &FreqTensor) -> Result<FreqTensor> {
    Ntt2dPlan::new(t.rows, t.cols, &t.field)?.inverse(t)
}

/// Zero-pads `raw` (image dimensions of `g`) to the padded size, origin aligned.
pub fn pad_image(raw: &Matrix<Residue>, g: &ConvGeometry, field: &FieldSpec) -> Result<FreqTensor> {
    if raw.dims() != (g.image_h, g.image_w) {
        return Err(Error::BadGeometry(format!(
            "image is {}x{}, geometry expects {}x{}",
            raw.rows, raw.cols, g.image_h, g.image_w
        )));
    }
    pad_to(raw, g.padded_h, g.padded_w, field)
}

/// Zero-pads a filter to the padded size of `g`.
pub fn pad_filter(w: &Matrix<Residue>, g: &ConvGeometry, field: &FieldSpec) -> Result<FreqTensor> {
    if w.dims() != (g.filter_h, g.filter_w) {
        return Err(Error::BadGeometry(format!(
            "filter is {}x{}, geometry expects {}x{}",
            w.rows, w.cols, g.filter_h, g.filter_w
        )));
    }
    pad_to(w, g.padded_h, g.padded_w, field)
}

fn pad_to(m: &Matrix<Residue>, rows: usize, cols: usize, field: &FieldSpec) -> Result<FreqTensor> {
    let mut data = vec![0; rows * cols];
    for r in 0..m.rows {
        data[r * cols..r * cols + m.cols].copy_from_slice(&m.data[r * m.cols..(r + 1) * m.cols]);
    }
    FreqTensor::new(data, rows, cols, field, Domain::Time)
}

/// Extracts the output window of a time-domain result.
pub fn crop(t: &FreqTensor, g: &ConvGeometry) -> Result<Matrix<Residue>> {
    if t.domain != Domain::Time || t.rows != g.padded_h || t.cols != g.padded_w {
        return Err(Error::GeometryMismatch("crop expects a padded time tensor".into()));
    }
    let (oh, ow) = g.output_dims();
    let (r0, c0) = g.crop_offset();
    let mut out = Matrix::zeros(oh, ow);
    for r in 0..oh {
        for c in 0..ow {
            out.set(r, c, t.get(r0 + r, c0 + c));
        }
    }
    Ok(out)
}

/// Element-wise product of two frequency tensors.
pub fn freq_hadamard(a: &FreqTensor, b: &FreqTensor) -> Result<FreqTensor> {
    if !a.same_shape(b) || a.domain != Domain::Frequency || b.domain != Domain::Frequency {
        return Err(Error::GeometryMismatch(
            "hadamard needs two frequency tensors of one shape".into(),
        ));
    }
    let f = &a.field;
    Ok(FreqTensor {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f.mul_mod(x, y)).collect(),
        rows: a.rows,
        cols: a.cols,
        field: f.clone(),
        domain: Domain::Frequency,
    })
}

/// Element-wise sum of two tensors in the same domain.
pub fn freq_add(a: &FreqTensor, b: &FreqTensor) -> Result<FreqTensor> {
    if !a.same_shape(b) || a.domain != b.domain {
        return Err(Error::GeometryMismatch("tensor shapes differ".into()));
    }
    let f = &a.field;
    Ok(FreqTensor {
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f.add_mod(x, y)).collect(),
        ..a.clone()
    })
}

/// Ground-truth convolution by nested loops: flipped-kernel linear
/// convolution mod p, then cropped per `g.conv_type`.
pub fn conv_oracle(
    u: &Matrix<Residue>,
    w: &Matrix<Residue>,
    g: &ConvGeometry,
    field: &FieldSpec,
) -> Result<Matrix<Residue>> {
    if u.dims() != (g.image_h, g.image_w) || w.dims() != (g.filter_h, g.filter_w) {
        return Err(Error::BadGeometry("operand dimensions do not match geometry".into()));
    }
    let (oh, ow) = g.output_dims();
    let (r0, c0) = g.crop_offset();
    let mut out = Matrix::zeros(oh, ow);
    for orow in 0..oh {
        for ocol in 0..ow {
            // full-convolution index
            let (i, j) = (orow + r0, ocol + c0);
            let mut acc = 0;
            for a in 0..g.filter_h {
                if a > i || i - a >= g.image_h {
                    continue;
                }
                for b in 0..g.filter_w {
                    if b > j || j - b >= g.image_w {
                        continue;
                    }
                    acc = field.add_mod(acc, field.mul_mod(u.get(i - a, j - b), w.get(a, b)));
                }
            }
            out.set(orow, ocol, acc);
        }
    }
    Ok(out)
}

/// Transform-domain convolution: pad, transform, multiply, invert, crop.
pub fn conv_via_ntt(
    u: &Matrix<Residue>,
    w: &Matrix<Residue>,
    g: &ConvGeometry,
    field: &FieldSpec,
) -> Result<Matrix<Residue>> {
    let plan = Ntt2dPlan::for_geometry(g, field)?;
    let uf = plan.forward(&pad_image(u, g, field)?)?;
    let wf = plan.forward(&pad_filter(w, g, field)?)?;
    crop(&plan.inverse(&freq_hadamard(&uf, &wf)?)?, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn f(p: u64) -> FieldSpec {
        FieldSpec::new(p).unwrap()
    }

    fn random_vec(rng: &mut ChaCha20Rng, len: usize, field: &FieldSpec) -> Vec<Residue> {
        (0..len).map(|_| field.sample_uniform(rng)).collect()
    }

    fn cyclic_conv_2d(u: &FreqTensor, w: &FreqTensor) -> Vec<Residue> {
        let (r, c, fd) = (u.rows(), u.cols(), u.field());
        let mut out = vec![0; r * c];
        for i in 0..r {
            for j in 0..c {
                let mut acc = 0;
                for a in 0..r {
                    for b in 0..c {
                        let v = fd.mul_mod(u.get((i + r - a) % r, (j + c - b) % c), w.get(a, b));
                        acc = fd.add_mod(acc, v);
                    }
                }
                out[i * c + j] = acc;
            }
        }
        out
    }

    fn dft_2d_direct(t: &FreqTensor, inverse: bool) -> Vec<Residue> {
        let fd = t.field();
        let (r, c) = (t.rows(), t.cols());
        let mut wr = fd.find_root_of_unity(r as u64).unwrap();
        let mut wc = fd.find_root_of_unity(c as u64).unwrap();
        if inverse {
            wr = fd.inv_mod(wr);
            wc = fd.inv_mod(wc);
        }
        let mut out = vec![0; r * c];
        for k in 0..r {
            for l in 0..c {
                let mut acc = 0;
                for i in 0..r {
                    for j in 0..c {
                        let tw = fd.mul_mod(
                            fd.pow_mod(wr, (i * k) as u64),
                            fd.pow_mod(wc, (j * l) as u64),
                        );
                        acc = fd.add_mod(acc, fd.mul_mod(t.get(i, j), tw));
                    }
                }
                out[k * c + l] = acc;
            }
        }
        if inverse {
            let scale = fd.inv_mod((r * c) as u64);
            out.iter_mut().for_each(|v| *v = fd.mul_mod(*v, scale));
        }
        out
    }

    #[test]
    fn ntt_1d_examples() {
        let p17 = f(17);
        assert_eq!(ntt_1d(&[1, 0, 0, 0], 4, &p17).unwrap(), vec![1, 1, 1, 1]);
        assert_eq!(ntt_1d(&[1, 0, 0, 0], 13, &p17).unwrap(), vec![1, 1, 1, 1]);
        let expect: Vec<u64> = (0..4).map(|k| p17.pow_mod(4, k)).collect();
        assert_eq!(expect, vec![1, 4, 16, 13]);
        assert_eq!(ntt_1d(&[0, 1, 0, 0], 4, &p17).unwrap(), expect);
        for c in 0..17 {
            assert_eq!(ntt_1d(&[c; 4], 4, &p17).unwrap(), vec![(4 * c) % 17, 0, 0, 0]);
        }
    }

    #[test]
    fn ntt_rejects_bad_roots() {
        let p17 = f(17);
        // 16 has order 2, not 4
        assert!(matches!(ntt_1d(&[1, 2, 3, 4], 16, &p17), Err(Error::BadRoot { .. })));
        assert!(matches!(ntt_1d(&[1, 2, 3, 4], 3, &p17), Err(Error::BadRoot { .. })));
        assert!(intt_1d(&[1, 2, 3, 4], 2, &p17).is_err());
    }

    #[test]
    fn intt_1d_examples() {
        let p17 = f(17);
        assert_eq!(intt_1d(&[1, 1, 1, 1], 4, &p17).unwrap(), vec![1, 0, 0, 0]);
        assert_eq!(intt_1d(&[0, 0, 0, 0], 4, &p17).unwrap(), vec![0, 0, 0, 0]);
        let fp = f(147457);
        let root = fp.find_root_of_unity(64).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let x = random_vec(&mut rng, 64, &fp);
            let y = ntt_1d(&x, root, &fp).unwrap();
            assert_eq!(intt_1d(&y, root, &fp).unwrap(), x);
        }
    }

    #[test]
    fn radix2_matches_direct_path() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for p in [12289u64, 147457] {
            let fp = f(p);
            for logn in 0..=8 {
                let n = 1usize << logn;
                let root = fp.find_root_of_unity(n as u64).unwrap();
                for _ in 0..20 {
                    let x = random_vec(&mut rng, n, &fp);
                    assert_eq!(ntt_1d(&x, root, &fp).unwrap(), dft_direct(&x, root, &fp));
                }
            }
        }
    }

    #[test]
    fn non_power_of_two_lengths_use_direct_path() {
        let fp = f(2311);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for len in [3usize, 5, 6, 10, 15, 21, 30] {
            let root = fp.find_root_of_unity(len as u64).unwrap();
            let x = random_vec(&mut rng, len, &fp);
            let y = ntt_1d(&x, root, &fp).unwrap();
            assert_eq!(y, dft_direct(&x, root, &fp));
            assert_eq!(intt_1d(&y, root, &fp).unwrap(), x);
        }
    }

    #[test]
    fn ntt_2d_matches_brute_force() {
        let fp = f(12289);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..10 {
            let t = FreqTensor::new(random_vec(&mut rng, 16, &fp), 4, 4, &fp, Domain::Time).unwrap();
            let ft = ntt_2d(&t).unwrap();
            assert_eq!(ft.domain(), Domain::Frequency);
            assert_eq!(ft.data(), dft_2d_direct(&t, false).as_slice());
            let back = intt_2d(&ft).unwrap();
            assert_eq!(back, t);
            assert_eq!(back.data(), dft_2d_direct(&ft, true).as_slice());
        }
    }

    #[test]
    fn ntt_2d_degenerate_and_delta() {
        let fp = f(12289);
        let x: Vec<u64> = (1..=8).collect();
        let t = FreqTensor::new(x.clone(), 1, 8, &fp, Domain::Time).unwrap();
        let root = fp.find_root_of_unity(8).unwrap();
        assert_eq!(ntt_2d(&t).unwrap().data(), ntt_1d(&x, root, &fp).unwrap().as_slice());

        let mut delta = vec![0; 64];
        delta[0] = 1;
        let d = FreqTensor::new(delta.clone(), 8, 8, &fp, Domain::Time).unwrap();
        assert_eq!(ntt_2d(&d).unwrap().data(), vec![1; 64].as_slice());
        let ones = FreqTensor::from_flat(vec![1; 64], 8, 8, &fp).unwrap();
        assert_eq!(intt_2d(&ones).unwrap().data(), delta.as_slice());
    }

    #[test]
    fn ntt_2d_roundtrip_random() {
        let fp = f(147457);
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let plan = Ntt2dPlan::new(8, 8, &fp).unwrap();
        for _ in 0..100 {
            let t = FreqTensor::new(random_vec(&mut rng, 64, &fp), 8, 8, &fp, Domain::Time).unwrap();
            assert_eq!(plan.inverse(&plan.forward(&t).unwrap()).unwrap(), t);
        }
    }

    #[test]
    fn domain_tags_are_enforced() {
        let fp = f(17);
        let t = FreqTensor::new(vec![0; 4], 2, 2, &fp, Domain::Time).unwrap();
        assert!(intt_2d(&t).is_err());
        let ft = ntt_2d(&t).unwrap();
        assert!(ntt_2d(&ft).is_err());
        assert!(freq_hadamard(&t, &t).is_err());
        assert!(matches!(
            FreqTensor::new(vec![0; 9], 3, 3, &fp, Domain::Time),
            Err(Error::BadGeometry(_))
        ));
        assert!(FreqTensor::new(vec![17; 4], 2, 2, &fp, Domain::Time).is_err());
    }

    #[test]
    fn hadamard_identities() {
        let fp = f(12289);
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let a = FreqTensor::from_flat(random_vec(&mut rng, 16, &fp), 4, 4, &fp).unwrap();
        let ones = FreqTensor::from_flat(vec![1; 16], 4, 4, &fp).unwrap();
        let zeros = FreqTensor::from_flat(vec![0; 16], 4, 4, &fp).unwrap();
        assert_eq!(freq_hadamard(&a, &ones).unwrap(), a);
        assert_eq!(freq_hadamard(&a, &zeros).unwrap(), zeros);
        let other = FreqTensor::from_flat(vec![1; 8], 2, 4, &fp).unwrap();
        assert!(matches!(freq_hadamard(&a, &other), Err(Error::GeometryMismatch(_))));
    }

    #[test]
    fn convolution_theorem_cyclic() {
        let fp = f(12289);
        let mut rng = ChaCha20Rng::seed_from_u64(16);
        for case in 0..100 {
            let (r, c) = [(4, 4), (8, 4), (2, 8), (8, 8)][case % 4];
            let u = FreqTensor::new(random_vec(&mut rng, r * c, &fp), r, c, &fp, Domain::Time).unwrap();
            let w = FreqTensor::new(random_vec(&mut rng, r * c, &fp), r, c, &fp, Domain::Time).unwrap();
            let prod = freq_hadamard(&ntt_2d(&u).unwrap(), &ntt_2d(&w).unwrap()).unwrap();
            assert_eq!(intt_2d(&prod).unwrap().data(), cyclic_conv_2d(&u, &w).as_slice());
        }
    }

    #[test]
    fn padding_policy() {
        let p17 = f(17);
        let g = ConvGeometry::new(2, 2, 2, 2, ConvType::Valid, &p17).unwrap();
        assert_eq!((g.padded_h, g.padded_w), (4, 4));
        // p = 7 has no power-of-two length >= 3, falls back to divisor 3
        let p7 = f(7);
        let g7 = ConvGeometry::new(2, 2, 2, 2, ConvType::Valid, &p7).unwrap();
        assert_eq!((g7.padded_h, g7.padded_w), (3, 3));
        let t = pad_image(&Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap(), &g7, &p7).unwrap();
        assert_eq!(t.data(), &[1, 2, 0, 3, 4, 0, 0, 0, 0]);

        let g1 = ConvGeometry::new(1, 1, 1, 1, ConvType::Same, &p17).unwrap();
        assert_eq!((g1.padded_h, g1.padded_w), (1, 1));
        let fm = f(147457);
        let g32 = ConvGeometry::new(32, 32, 3, 3, ConvType::Same, &fm).unwrap();
        assert_eq!((g32.padded_h, g32.padded_w), (64, 64));
        let g2311 = ConvGeometry::new(8, 8, 3, 3, ConvType::Same, &f(2311)).unwrap();
        assert_eq!(g2311.padded_h, 10);

        assert!(pad_image(&Matrix::zeros(3, 2), &g, &p17).is_err());
        assert!(ConvGeometry::with_padding(4, 4, 3, 3, ConvType::Same, 4, 8).is_err());
        assert!(ConvGeometry::new(2, 2, 3, 3, ConvType::Valid, &fm).is_err());
        assert!(ConvGeometry::new(64, 64, 3, 3, ConvType::Same, &p17).is_err());
    }

    #[test]
    fn conv_oracle_examples() {
        let fp = f(12289);
        let g = ConvGeometry::new(1, 1, 1, 1, ConvType::Same, &fp).unwrap();
        let one = Matrix::from_rows(&[vec![1]]).unwrap();
        let five = Matrix::from_rows(&[vec![5]]).unwrap();
        assert_eq!(conv_oracle(&one, &five, &g, &fp).unwrap(), five);

        let gv = ConvGeometry::new(2, 2, 2, 2, ConvType::Valid, &fp).unwrap();
        let u = Matrix::from_rows(&[vec![1, 2], vec![3, 4]]).unwrap();
        let w = Matrix::from_rows(&[vec![1, 0], vec![0, 1]]).unwrap();
        assert_eq!(conv_oracle(&u, &w, &gv, &fp).unwrap().data, vec![5]);
        // flipped kernel: w = [[1, 2]] against u = [[3, 4]] gives 3*2 + 4*1
        let gf = ConvGeometry::new(1, 2, 1, 2, ConvType::Valid, &fp).unwrap();
        let out = conv_oracle(
            &Matrix::from_rows(&[vec![3, 4]]).unwrap(),
            &Matrix::from_rows(&[vec![1, 2]]).unwrap(),
            &gf,
            &fp,
        )
        .unwrap();
        assert_eq!(out.data, vec![10]);

        // centered delta kernel is the identity under Same
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let img = Matrix::from_vec(5, 6, random_vec(&mut rng, 30, &fp)).unwrap();
        let mut delta = Matrix::zeros(3, 3);
        delta.set(1, 1, 1);
        let gs = ConvGeometry::new(5, 6, 3, 3, ConvType::Same, &fp).unwrap();
        assert_eq!(conv_oracle(&img, &delta, &gs, &fp).unwrap(), img);
        assert!(conv_oracle(&img, &Matrix::zeros(2, 2), &gs, &fp).is_err());
    }

    #[test]
    fn transform_path_matches_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(18);
        for (p, shapes) in [
            (12289u64, vec![(8, 8, 3, 3), (5, 7, 2, 4), (28, 28, 5, 5)]),
            (2311, vec![(6, 6, 3, 3), (4, 9, 2, 2)]),
        ] {
            let fp = f(p);
            for (h, w, fh, fw) in shapes {
                for ct in [ConvType::Same, ConvType::Valid] {
                    let g = ConvGeometry::new(h, w, fh, fw, ct, &fp).unwrap();
                    let u = Matrix::from_vec(h, w, random_vec(&mut rng, h * w, &fp)).unwrap();
                    let k = Matrix::from_vec(fh, fw, random_vec(&mut rng, fh * fw, &fp)).unwrap();
                    assert_eq!(
                        conv_via_ntt(&u, &k, &g, &fp).unwrap(),
                        conv_oracle(&u, &k, &g, &fp).unwrap()
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn ntt_is_linear(seed in any::<u64>(), alpha in 0u64..12289, beta in 0u64..12289) {
            let fp = f(12289);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let len = 1usize << rng.gen_range(0..8);
            let root = fp.find_root_of_unity(len as u64).unwrap();
            let x = random_vec(&mut rng, len, &fp);
            let y = random_vec(&mut rng, len, &fp);
            let combo: Vec<u64> = x.iter().zip(&y)
                .map(|(&a, &b)| fp.add_mod(fp.mul_mod(alpha, a), fp.mul_mod(beta, b)))
                .collect();
            let lhs = ntt_1d(&combo, root, &fp).unwrap();
            let (nx, ny) = (ntt_1d(&x, root, &fp).unwrap(), ntt_1d(&y, root, &fp).unwrap());
            let rhs: Vec<u64> = nx.iter().zip(&ny)
                .map(|(&a, &b)| fp.add_mod(fp.mul_mod(alpha, a), fp.mul_mod(beta, b)))
                .collect();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
