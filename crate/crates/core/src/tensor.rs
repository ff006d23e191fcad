//! Dense N-way tensors and the primitive operations everything else is built
//! from: unfolding, mode permutation, circular shift, (multi-mode)
//! contraction and a direct 2D convolution used as the reference oracle.
//!
//! Storage is row-major (last index fastest). Modes are 0-based throughout
//! the API. Sums are always accumulated in `f64`, so `f32` tensors round only
//! once per output element.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar storage type tag, also used as the on-disk dtype byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Real scalar that can live in a [`DenseTensor`].
pub trait Element: Copy + Default + Debug + PartialEq + Send + Sync + 'static {
    const DTYPE: DType;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Row-major strides for `dims`.
pub fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for n in (0..dims.len().saturating_sub(1)).rev() {
        strides[n] = strides[n + 1] * dims[n + 1];
    }
    strides
}

fn check_shape(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::InvalidShape(dims.to_vec()));
    }
    Ok(dims.iter().product())
}

/// Advances a row-major multi-index; returns false once it wraps around.
fn next_index(idx: &mut [usize], dims: &[usize]) -> bool {
    for n in (0..dims.len()).rev() {
        idx[n] += 1;
        if idx[n] < dims[n] {
            return true;
        }
        idx[n] = 0;
    }
    false
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T: Element = f64> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> DenseTensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = check_shape(&dims)?;
        if data.len() != expected {
            return Err(Error::DataLength {
                dims,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = check_shape(&dims)?;
        Ok(Self {
            dims,
            data: vec![T::default(); len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        let len = check_shape(&dims)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0; dims.len()];
        loop {
            data.push(f(&idx));
            if !next_index(&mut idx, &dims) {
                break;
            }
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut off = 0;
        for (n, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[n]);
            off = off * self.dims[n] + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: T) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }

    pub fn cast<U: Element>(&self) -> DenseTensor<U> {
        DenseTensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.to_f64();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Frobenius norm of `self - other`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a.to_f64() - b.to_f64();
                d * d
            })
            .sum::<f64>()
            .sqrt())
    }

    /// `max |self - reference| / max |reference|` (plain max-difference when
    /// the reference is identically zero).
    pub fn max_relative_deviation(&self, reference: &Self) -> Result<f64> {
        if self.dims != reference.dims {
            return Err(Error::DimensionMismatch(format!(
                "{:?} vs {:?}",
                self.dims, reference.dims
            )));
        }
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in self.data.iter().zip(&reference.data) {
            diff = diff.max((a.to_f64() - b.to_f64()).abs());
            scale = scale.max(b.to_f64().abs());
        }
        Ok(if scale > 0.0 { diff / scale } else { diff })
    }

    /// Reorders modes so that result mode `n` is input mode `axes[n]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let order = self.ndim();
        let mut seen = vec![false; order];
        if axes.len() != order {
            return Err(Error::InvalidPermutation(axes.to_vec()));
        }
        for &a in axes {
            if a >= order || seen[a] {
                return Err(Error::InvalidPermutation(axes.to_vec()));
            }
            seen[a] = true;
        }
        if axes.iter().enumerate().all(|(n, &a)| n == a) {
            return Ok(self.clone());
        }
        let src_strides = strides_of(&self.dims);
        let dims: Vec<usize> = axes.iter().map(|&a| self.dims[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0; order];
        let mut off = 0usize;
        loop {
            data.push(self.data[off]);
            // incremental offset update along the odometer
            let mut n = order;
            loop {
                if n == 0 {
                    return Ok(Self { dims, data });
                }
                n -= 1;
                idx[n] += 1;
                off += strides[n];
                if idx[n] < dims[n] {
                    break;
                }
                off -= strides[n] * dims[n];
                idx[n] = 0;
            }
        }
    }

    /// Circular left shift of the modes by `k`: dims become
    /// `(I_{k+1}, .., I_N, I_1, .., I_k)`.
    pub fn circular_shift(&self, k: usize) -> Result<Self> {
        let order = self.ndim();
        if k >= order {
            return Err(Error::ModeOutOfRange { mode: k, order });
        }
        let axes: Vec<usize> = (0..order).map(|n| (n + k) % order).collect();
        self.permute(&axes)
    }

    /// Mode-`mode` matricization. Rows index `dims[mode]`; columns run
    /// lexicographically over the remaining modes in ascending order.
    pub fn unfold(&self, mode: usize) -> Result<Self> {
        let order = self.ndim();
        if mode >= order {
            return Err(Error::ModeOutOfRange { mode, order });
        }
        let mut axes = vec![mode];
        axes.extend((0..order).filter(|&n| n != mode));
        let rows = self.dims[mode];
        let cols = self.len() / rows;
        self.permute(&axes)?.reshape(vec![rows, cols])
    }

    /// Inverse of [`DenseTensor::unfold`] for a tensor of shape `dims`.
    pub fn fold(matrix: &Self, mode: usize, dims: &[usize]) -> Result<Self> {
        let order = dims.len();
        if mode >= order {
            return Err(Error::ModeOutOfRange { mode, order });
        }
        let total = check_shape(dims)?;
        if matrix.ndim() != 2 || matrix.dims[0] != dims[mode] || matrix.len() != total {
            return Err(Error::DimensionMismatch(format!(
                "cannot fold {:?} into {:?} along mode {mode}",
                matrix.dims, dims
            )));
        }
        let mut permuted_dims = vec![dims[mode]];
        permuted_dims.extend((0..order).filter(|&n| n != mode).map(|n| dims[n]));
        let permuted = matrix.clone().reshape(permuted_dims)?;
        // inverse of the unfolding permutation
        let mut inverse = vec![0; order];
        let mut forward = vec![mode];
        forward.extend((0..order).filter(|&n| n != mode));
        for (pos, &m) in forward.iter().enumerate() {
            inverse[m] = pos;
        }
        permuted.permute(&inverse)
    }
}

/// Row-major matrix product of `a` (m x k) and `b` (k x n) with `f64`
/// accumulation. Inputs are flat slices.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Mode-(n, m) contraction of `x` and `y`. The result carries the free modes
/// of `x` followed by the free modes of `y`, each in ascending order.
pub fn contract<T: Element>(
    x: &DenseTensor<T>,
    y: &DenseTensor<T>,
    n: usize,
    m: usize,
) -> Result<DenseTensor<T>> {
    multi_contract(x, y, &[n], &[m])
}

/// Contracts `x` mode `modes_x[l]` with `y` mode `modes_y[l]` for every `l`.
pub fn multi_contract<T: Element>(
    x: &DenseTensor<T>,
    y: &DenseTensor<T>,
    modes_x: &[usize],
    modes_y: &[usize],
) -> Result<DenseTensor<T>> {
    if modes_x.len() != modes_y.len() || modes_x.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "contraction mode lists {modes_x:?} and {modes_y:?} must be non-empty and of equal length"
        )));
    }
    for (modes, t) in [(modes_x, x), (modes_y, y)] {
        let mut seen = vec![false; t.ndim()];
        for &md in modes {
            if md >= t.ndim() {
                return Err(Error::ModeOutOfRange {
                    mode: md,
                    order: t.ndim(),
                });
            }
            if seen[md] {
                return Err(Error::RepeatedMode(md));
            }
            seen[md] = true;
        }
    }
    for (&a, &b) in modes_x.iter().zip(modes_y) {
        if x.dims[a] != y.dims[b] {
            return Err(Error::DimensionMismatch(format!(
                "mode {a} of x has size {} but mode {b} of y has size {}",
                x.dims[a], y.dims[b]
            )));
        }
    }

    let free_x: Vec<usize> = (0..x.ndim()).filter(|n| !modes_x.contains(n)).collect();
    let free_y: Vec<usize> = (0..y.ndim()).filter(|n| !modes_y.contains(n)).collect();
    let k: usize = modes_x.iter().map(|&a| x.dims[a]).product();
    let rows: usize = free_x.iter().map(|&a| x.dims[a]).product();
    let cols: usize = free_y.iter().map(|&a| y.dims[a]).product();

    let mut axes_x = free_x.clone();
    axes_x.extend_from_slice(modes_x);
    let mut axes_y = modes_y.to_vec();
    axes_y.extend_from_slice(&free_y);
    let a: Vec<f64> = x.permute(&axes_x)?.data.iter().map(|v| v.to_f64()).collect();
    let b: Vec<f64> = y.permute(&axes_y)?.data.iter().map(|v| v.to_f64()).collect();
    let prod = matmul_acc(&a, &b, rows, k, cols);

    let mut dims: Vec<usize> = free_x.iter().map(|&a| x.dims[a]).collect();
    dims.extend(free_y.iter().map(|&a| y.dims[a]));
    if dims.is_empty() {
        dims.push(1);
    }
    DenseTensor::new(dims, prod.into_iter().map(T::from_f64).collect())
}

/// Stride and symmetric zero padding of a 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        Ok(Self { stride, padding })
    }

    /// Output extent `floor((input + 2P - kernel) / stride) + 1`.
    pub fn output_size(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        let padded = input + 2 * self.padding;
        if kernel == 0 || padded < kernel {
            return Err(Error::Geometry(format!(
                "kernel {kernel} does not fit input {input} with padding {}",
                self.padding
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Direct 2D convolution (cross-correlation, no kernel flip).
///
/// `x` is `I1 x I2 x C`, `w` is `T x C x D1 x D2`, the result is
/// `Ĩ1 x Ĩ2 x T` with input row `ĩ1·Δ + d1 - P` feeding output row `ĩ1`.
pub fn conv2d_direct<T: Element>(
    x: &DenseTensor<T>,
    w: &DenseTensor<T>,
    g: ConvGeometry,
) -> Result<DenseTensor<T>> {
    if x.ndim() != 3 || w.ndim() != 4 {
        return Err(Error::Geometry(format!(
            "expected input I1xI2xC and kernel TxCxD1xD2, got {:?} and {:?}",
            x.dims, w.dims
        )));
    }
    let (i1, i2, c) = (x.dims[0], x.dims[1], x.dims[2]);
    let (t, wc, d1, d2) = (w.dims[0], w.dims[1], w.dims[2], w.dims[3]);
    if c != wc {
        return Err(Error::DimensionMismatch(format!(
            "input has {c} channels but kernel expects {wc}"
        )));
    }
    let o1 = g.output_size(i1, d1)?;
    let o2 = g.output_size(i2, d2)?;
    let pad = g.padding as isize;
    let xs: Vec<f64> = x.data.iter().map(|v| v.to_f64()).collect();
    let ws: Vec<f64> = w.data.iter().map(|v| v.to_f64()).collect();
    let mut out = Vec::with_capacity(o1 * o2 * t);
    for oi in 0..o1 {
        for oj in 0..o2 {
            for tt in 0..t {
                let mut acc = 0.0;
                for a in 0..d1 {
                    let r = (oi * g.stride + a) as isize - pad;
                    if r < 0 || r >= i1 as isize {
                        continue;
                    }
                    for b in 0..d2 {
                        let s = (oj * g.stride + b) as isize - pad;
                        if s < 0 || s >= i2 as isize {
                            continue;
                        }
                        let xbase = (r as usize * i2 + s as usize) * c;
                        for cc in 0..c {
                            acc += ws[((tt * c + cc) * d1 + a) * d2 + b] * xs[xbase + cc];
                        }
                    }
                }
                out.push(T::from_f64(acc));
            }
        }
    }
    DenseTensor::new(vec![o1, o2, t], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], seed: u64) -> DenseTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(dims.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn iota(dims: &[usize]) -> DenseTensor<f64> {
        let n: usize = dims.iter().product();
        DenseTensor::new(dims.to_vec(), (0..n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(DenseTensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(DenseTensor::<f64>::zeros(vec![]).is_err());
        assert!(DenseTensor::<f64>::zeros(vec![2, 0]).is_err());
    }

    #[test]
    fn unfold_matrix_is_identity() {
        let m = iota(&[2, 3]);
        assert_eq!(m.unfold(0).unwrap(), m);
    }

    #[test]
    fn unfold_cube_first_mode() {
        let t = iota(&[2, 2, 2]);
        let u = t.unfold(0).unwrap();
        assert_eq!(u.dims(), &[2, 4]);
        assert_eq!(u.data(), &[0., 1., 2., 3., 4., 5., 6., 7.]);
    }

    #[test]
    fn unfold_middle_mode_orders_remaining_lexicographically() {
        let t = iota(&[2, 3, 2]);
        let u = t.unfold(1).unwrap();
        assert_eq!(u.dims(), &[3, 4]);
        // row j, column (i, k) -> t[i, j, k] = 6i + 2j + k
        for j in 0..3 {
            for i in 0..2 {
                for k in 0..2 {
                    assert_eq!(u.get(&[j, i * 2 + k]), (6 * i + 2 * j + k) as f64);
                }
            }
        }
    }

    #[test]
    fn unfold_errors_on_bad_mode() {
        assert!(matches!(
            iota(&[2, 2]).unfold(2),
            Err(Error::ModeOutOfRange { .. })
        ));
    }

    #[test]
    fn fold_round_trip_345() {
        let t = random(&[3, 4, 5], 7);
        for mode in 0..3 {
            let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, t.dims()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn circular_shift_kernel_dims() {
        let w = DenseTensor::<f64>::zeros(vec![8, 6, 3, 3]).unwrap();
        assert_eq!(w.circular_shift(1).unwrap().dims(), &[6, 3, 3, 8]);
        assert_eq!(w.circular_shift(2).unwrap().dims(), &[3, 3, 8, 6]);
        assert_eq!(w.circular_shift(3).unwrap().dims(), &[3, 8, 6, 3]);
    }

    #[test]
    fn circular_shift_values_and_cycle() {
        let t = random(&[2, 3, 4], 1);
        assert_eq!(t.circular_shift(0).unwrap(), t);
        let s1 = t.circular_shift(1).unwrap();
        assert_eq!(s1.get(&[2, 3, 1]), t.get(&[1, 2, 3]));
        assert_eq!(s1.circular_shift(2).unwrap(), t);
        assert!(t.circular_shift(3).is_err());
    }

    #[test]
    fn contract_matrices_is_matmul() {
        let x = DenseTensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let y = DenseTensor::new(
            vec![3, 4],
            vec![1., 0., 2., -1., 0., 1., 1., 2., 3., -2., 0., 1.],
        )
        .unwrap();
        let z = contract(&x, &y, 1, 0).unwrap();
        assert_eq!(z.dims(), &[2, 4]);
        assert_eq!(z.data(), &[10., -4., 4., 6., 22., -7., 13., 12.]);
    }

    #[test]
    fn contract_with_delta_is_identity() {
        let x = random(&[2, 3, 4], 3);
        let delta = DenseTensor::from_fn(vec![4, 4], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
            .unwrap();
        assert_eq!(contract(&x, &delta, 2, 0).unwrap(), x);
    }

    #[test]
    fn contract_rejects_mismatch() {
        let x = random(&[2, 3], 0);
        let y = random(&[4, 2], 0);
        assert!(matches!(
            contract(&x, &y, 1, 0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            multi_contract(&x, &x, &[0, 0], &[0, 1]),
            Err(Error::RepeatedMode(0))
        ));
    }

    #[test]
    fn contract_against_triple_loop() {
        let x = random(&[2, 3, 4], 11);
        let y = random(&[4, 5], 12);
        let z = contract(&x, &y, 2, 0).unwrap();
        assert_eq!(z.dims(), &[2, 3, 5]);
        for i in 0..2 {
            for j in 0..3 {
                for l in 0..5 {
                    let mut s = 0.0;
                    for k in 0..4 {
                        s += x.get(&[i, j, k]) * y.get(&[k, l]);
                    }
                    assert!((z.get(&[i, j, l]) - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn multi_contract_two_pairs_against_loop() {
        let x = random(&[2, 3, 4], 21);
        let y = random(&[4, 5, 3], 22);
        let z = multi_contract(&x, &y, &[1, 2], &[2, 0]).unwrap();
        assert_eq!(z.dims(), &[2, 5]);
        for i in 0..2 {
            for l in 0..5 {
                let mut s = 0.0;
                for j in 0..3 {
                    for k in 0..4 {
                        s += x.get(&[i, j, k]) * y.get(&[k, l, j]);
                    }
                }
                assert!((z.get(&[i, l]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn multi_contract_single_pair_matches_contract() {
        let x = random(&[3, 4], 5);
        let y = random(&[4, 2, 3], 6);
        assert_eq!(
            multi_contract(&x, &y, &[1], &[0]).unwrap(),
            contract(&x, &y, 1, 0).unwrap()
        );
    }

    #[test]
    fn full_self_contraction_is_squared_norm() {
        let x = random(&[2, 3, 4], 9);
        let z = multi_contract(&x, &x, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert_eq!(z.len(), 1);
        let n = x.frobenius_norm();
        assert!((z.data()[0] - n * n).abs() < 1e-12);
    }

    #[test]
    fn conv_identity_kernel_returns_input() {
        let x = random(&[5, 4, 3], 2);
        let w = DenseTensor::from_fn(vec![3, 3, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
            .unwrap();
        let y = conv2d_direct(&x, &w, ConvGeometry::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_local_sums() {
        let x = iota(&[3, 3, 1]);
        let w = DenseTensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let y = conv2d_direct(&x, &w, ConvGeometry::default()).unwrap();
        // 0 1 2 / 3 4 5 / 6 7 8
        assert_eq!(y.dims(), &[2, 2, 1]);
        assert_eq!(y.data(), &[8., 12., 20., 24.]);
    }

    #[test]
    fn conv_stride_two_padding_one() {
        let x = iota(&[4, 4, 1]);
        let w = DenseTensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_direct(&x, &w, ConvGeometry::new(2, 1).unwrap()).unwrap();
        assert_eq!(y.dims(), &[2, 2, 1]);
        // windows centred at (0,0), (0,2), (2,0), (2,2) of the 0..15 grid
        assert_eq!(y.data(), &[10., 24., 51., 90.]);
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let x = random(&[2, 2, 1], 0);
        let w = random(&[1, 1, 3, 3], 0);
        assert!(matches!(
            conv2d_direct(&x, &w, ConvGeometry::default()),
            Err(Error::Geometry(_))
        ));
        let w2 = random(&[1, 2, 1, 1], 0);
        assert!(conv2d_direct(&x, &w2, ConvGeometry::default()).is_err());
    }

    #[test]
    fn conv_is_linear() {
        let x1 = random(&[5, 5, 2], 30);
        let x2 = random(&[5, 5, 2], 31);
        let w = random(&[3, 2, 3, 3], 32);
        let g = ConvGeometry::new(2, 1).unwrap();
        let sum = DenseTensor::new(
            x1.dims().to_vec(),
            x1.data().iter().zip(x2.data()).map(|(a, b)| 2.0 * a + b).collect(),
        )
        .unwrap();
        let y1 = conv2d_direct(&x1, &w, g).unwrap();
        let y2 = conv2d_direct(&x2, &w, g).unwrap();
        let ys = conv2d_direct(&sum, &w, g).unwrap();
        for ((a, b), s) in y1.data().iter().zip(y2.data()).zip(ys.data()) {
            assert!((2.0 * a + b - s).abs() < 1e-12);
        }
        // and in the kernel
        let w2 = random(&[3, 2, 3, 3], 33);
        let wsum = DenseTensor::new(
            w.dims().to_vec(),
            w.data().iter().zip(w2.data()).map(|(a, b)| a - 3.0 * b).collect(),
        )
        .unwrap();
        let ya = conv2d_direct(&x1, &w2, g).unwrap();
        let yw = conv2d_direct(&x1, &wsum, g).unwrap();
        for ((a, b), s) in y1.data().iter().zip(ya.data()).zip(yw.data()) {
            assert!((a - 3.0 * b - s).abs() < 1e-12);
        }
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=4, 1..=4)
    }

    proptest! {
        #[test]
        fn prop_fold_unfold_round_trip(dims in shape_strategy(), seed in any::<u64>()) {
            let t = random(&dims, seed);
            for mode in 0..dims.len() {
                let back = DenseTensor::fold(&t.unfold(mode).unwrap(), mode, &dims).unwrap();
                prop_assert_eq!(&back, &t);
            }
        }

        #[test]
        fn prop_circular_shift_group_law(dims in shape_strategy(), a in 0usize..4, b in 0usize..4) {
            let n = dims.len();
            let (a, b) = (a % n, b % n);
            let t = random(&dims, 99);
            let lhs = t.circular_shift(a).unwrap().circular_shift(b).unwrap();
            let rhs = t.circular_shift((a + b) % n).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn prop_contract_matches_naive(
            dx in prop::collection::vec(1usize..=6, 2..=3),
            extra in 1usize..=6,
            mode in 0usize..3,
            seed in any::<u64>(),
        ) {
            let mode = mode % dx.len();
            let x = random(&dx, seed);
            let y = random(&[extra, dx[mode]], seed ^ 1);
            let z = contract(&x, &y, mode, 1).unwrap();
            let free: Vec<usize> = (0..dx.len()).filter(|&n| n != mode).collect();
            let mut idx = vec![0; dx.len()];
            // walk every output element by walking x with the contracted index pinned
            loop {
                if idx[mode] == 0 {
                    for e in 0..extra {
                        let mut s = 0.0;
                        let mut xi = idx.clone();
                        for k in 0..dx[mode] {
                            xi[mode] = k;
                            s += x.get(&xi) * y.get(&[e, k]);
                        }
                        let mut zi: Vec<usize> = free.iter().map(|&n| idx[n]).collect();
                        zi.push(e);
                        prop_assert!((z.get(&zi) - s).abs() <= 1e-12);
                    }
                }
                if !next_index(&mut idx, &dx) {
                    break;
                }
            }
        }
    }
}
