//! Convolution with a TR-format kernel as four sequential stages, each
//! instrumented with the number of multiply-accumulates it performs.
//!
//! Whatever the shift, the ring visits the original modes in the order
//! `T -> C -> D1 -> D2 -> T`, so the cores have shapes `(Rd, T, Ra)`,
//! `(Ra, C, Rb)`, `(Rb, D1, Rc)` and `(Rc, D2, Rd)`.

use serde::{Deserialize, Serialize};

use crate::complexity::{ring_ranks, RingRanks};
use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, ConvGeometry, DenseTensor, Element};
use crate::tr_model::TrCores;

/// MACs per stage. One MAC counts as one FLOP.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    pub stage1: u64,
    pub stage2: u64,
    pub stage3: u64,
    pub stage4: u64,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.stage1 + self.stage2 + self.stage3 + self.stage4
    }
}

/// Original kernel modes.
pub const MODE_T: usize = 0;
pub const MODE_C: usize = 1;
pub const MODE_D1: usize = 2;
pub const MODE_D2: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrConvLayer<T: Element = f64> {
    cores: TrCores<T>,
    geometry: ConvGeometry,
}

impl<T: Element> TrConvLayer<T> {
    pub fn new(cores: TrCores<T>, geometry: ConvGeometry) -> Result<Self> {
        if cores.order() != 4 {
            return Err(Error::Order {
                expected: 4,
                actual: cores.order(),
            });
        }
        if geometry.stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        Ok(Self { cores, geometry })
    }

    pub fn cores(&self) -> &TrCores<T> {
        &self.cores
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    /// `[T, C, D1, D2]`.
    pub fn kernel_dims(&self) -> [usize; 4] {
        let d = self.cores.orig_dims();
        [d[0], d[1], d[2], d[3]]
    }

    /// The core that carries original mode `mode`.
    pub fn core_for(&self, mode: usize) -> &DenseTensor<T> {
        &self.cores.cores()[(mode + 4 - self.cores.shift()) % 4]
    }

    pub fn ring_ranks(&self) -> RingRanks {
        ring_ranks(&self.cores.ranks(), self.cores.shift())
    }

    /// Spatial output size for an `i1 x i2` input.
    pub fn output_size(&self, i1: usize, i2: usize) -> Result<(usize, usize)> {
        let [_, _, d1, d2] = self.kernel_dims();
        Ok((
            self.geometry.output_size(i1, d1)?,
            self.geometry.output_size(i2, d2)?,
        ))
    }
}

fn to_f64<T: Element>(t: &DenseTensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64()).collect()
}

fn from_f64<T: Element>(dims: Vec<usize>, data: Vec<f64>) -> Result<DenseTensor<T>> {
    DenseTensor::new(dims, data.into_iter().map(T::from_f64).collect())
}

/// Stage 1: contracts the channel mode of `x (I1 x I2 x C)` with the C-core,
/// giving `I1 x I2 x Ra x Rb`.
pub fn stage_contract_in<T: Element>(
    x: &DenseTensor<T>,
    layer: &TrConvLayer<T>,
) -> Result<(DenseTensor<T>, u64)> {
    let core = layer.core_for(MODE_C);
    let (ra, c, rb) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    if x.ndim() != 3 || x.dims()[2] != c {
        return Err(Error::DimensionMismatch(format!(
            "input {:?} does not end in {c} channels",
            x.dims()
        )));
    }
    let (i1, i2) = (x.dims()[0], x.dims()[1]);
    let rows = i1 * i2;
    // (Ra, C, Rb) -> (C, Ra·Rb)
    let g = to_f64(&core.permute(&[1, 0, 2])?);
    let out = matmul_acc(&to_f64(x), &g, rows, c, ra * rb);
    let macs = (rows * c * ra * rb) as u64;
    Ok((from_f64(vec![i1, i2, ra, rb], out)?, macs))
}

/// Slides a `(Rin, D, Rout)` core along spatial `mode` (0 or 1) of a
/// `A x B x Ra x Rin` tensor. Padding is materialized, so padded taps count.
fn spatial_stage<T: Element>(
    z: &DenseTensor<T>,
    core: &DenseTensor<T>,
    mode: usize,
    g: ConvGeometry,
) -> Result<(DenseTensor<T>, u64)> {
    let (rin, d, rout) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    if z.ndim() != 4 || z.dims()[3] != rin {
        return Err(Error::DimensionMismatch(format!(
            "intermediate {:?} does not match core {:?}",
            z.dims(),
            core.dims()
        )));
    }
    let mut dims = z.dims().to_vec();
    let ra = dims[2];
    let len = dims[mode];
    let out_len = g.output_size(len, d)?;

    let mut padded_dims = dims.clone();
    padded_dims[mode] = len + 2 * g.padding;
    let src = to_f64(z);
    let mut padded = vec![0.0; padded_dims.iter().product()];
    let (pa, pb) = (padded_dims[0], padded_dims[1]);
    let inner = ra * rin;
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            let (ta, tb) = if mode == 0 {
                (a + g.padding, b)
            } else {
                (a, b + g.padding)
            };
            let s = (a * dims[1] + b) * inner;
            let t = (ta * pb + tb) * inner;
            padded[t..t + inner].copy_from_slice(&src[s..s + inner]);
        }
    }

    // core as (D, Rin, Rout)
    let gk = to_f64(&core.permute(&[1, 0, 2])?);
    dims[mode] = out_len;
    dims[3] = rout;
    let (oa, ob) = (dims[0], dims[1]);
    let mut out = vec![0.0; oa * ob * ra * rout];
    let mut macs = 0u64;
    for x in 0..oa {
        for y in 0..ob {
            let o = (x * ob + y) * ra * rout;
            for tap in 0..d {
                let (px, py) = if mode == 0 {
                    (x * g.stride + tap, y)
                } else {
                    (x, y * g.stride + tap)
                };
                debug_assert!(px < pa && py < pb);
                let base = (px * pb + py) * inner;
                let w = &gk[tap * rin * rout..(tap + 1) * rin * rout];
                for r in 0..ra {
                    let zrow = &padded[base + r * rin..base + (r + 1) * rin];
                    let acc = &mut out[o + r * rout..o + (r + 1) * rout];
                    for (i, &zv) in zrow.iter().enumerate() {
                        for (av, &wv) in acc.iter_mut().zip(&w[i * rout..(i + 1) * rout]) {
                            *av += zv * wv;
                        }
                    }
                    macs += (rin * rout) as u64;
                }
            }
        }
    }
    Ok((from_f64(dims, out)?, macs))
}

/// Stage 2: vertical convolution with the D1-core, `I1 x I2 x Ra x Rb`
/// to `Ĩ1 x I2 x Ra x Rc`.
pub fn stage_conv_vertical<T: Element>(
    z: &DenseTensor<T>,
    layer: &TrConvLayer<T>,
) -> Result<(DenseTensor<T>, u64)> {
    spatial_stage(z, layer.core_for(MODE_D1), 0, layer.geometry)
}

/// Stage 3: horizontal convolution with the D2-core, `Ĩ1 x I2 x Ra x Rc`
/// to `Ĩ1 x Ĩ2 x Ra x Rd`.
pub fn stage_conv_horizontal<T: Element>(
    z: &DenseTensor<T>,
    layer: &TrConvLayer<T>,
) -> Result<(DenseTensor<T>, u64)> {
    spatial_stage(z, layer.core_for(MODE_D2), 1, layer.geometry)
}

/// Stage 4: contracts both ring ranks with the T-core,
/// `Y[o1, o2, t] = Σ_{a,d} Z[o1, o2, a, d] · G_T[d, t, a]`.
pub fn stage_contract_out<T: Element>(
    z: &DenseTensor<T>,
    layer: &TrConvLayer<T>,
) -> Result<(DenseTensor<T>, u64)> {
    let core = layer.core_for(MODE_T);
    let (rd, t, ra) = (core.dims()[0], core.dims()[1], core.dims()[2]);
    if z.ndim() != 4 || z.dims()[2] != ra || z.dims()[3] != rd {
        return Err(Error::DimensionMismatch(format!(
            "intermediate {:?} does not match core {:?}",
            z.dims(),
            core.dims()
        )));
    }
    let (o1, o2) = (z.dims()[0], z.dims()[1]);
    let rows = o1 * o2;
    // (Rd, T, Ra) -> (Ra, Rd, T)
    let g = to_f64(&core.permute(&[2, 0, 1])?);
    let out = matmul_acc(&to_f64(z), &g, rows, ra * rd, t);
    let macs = (rows * ra * rd * t) as u64;
    Ok((from_f64(vec![o1, o2, t], out)?, macs))
}

/// Full pipeline on `x (I1 x I2 x C)`, returning `Ĩ1 x Ĩ2 x T` and the MAC
/// count of every stage.
pub fn tr_convolution<T: Element>(
    x: &DenseTensor<T>,
    layer: &TrConvLayer<T>,
) -> Result<(DenseTensor<T>, FlopCounter)> {
    let (z1, stage1) = stage_contract_in(x, layer)?;
    let (z2, stage2) = stage_conv_vertical(&z1, layer)?;
    let (z3, stage3) = stage_conv_horizontal(&z2, layer)?;
    let (y, stage4) = stage_contract_out(&z3, layer)?;
    Ok((
        y,
        FlopCounter {
            stage1,
            stage2,
            stage3,
            stage4,
        },
    ))
}
