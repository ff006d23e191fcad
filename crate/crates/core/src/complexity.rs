//! Closed-form storage and FLOPS counts for TR kernels, the full-rank storage
//! upper bounds per circular shift, and the FLOPS ratio against tensorized TR.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ConvGeometry;
use crate::tr_conv::FlopCounter;

/// Kernel dims plus input and output spatial sizes of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub t: usize,
    pub c: usize,
    pub d1: usize,
    pub d2: usize,
    pub i1: usize,
    pub i2: usize,
    pub o1: usize,
    pub o2: usize,
}

impl LayerDims {
    /// Derives the output size from `g`.
    pub fn new(kernel: [usize; 4], i1: usize, i2: usize, g: ConvGeometry) -> Result<Self> {
        let [t, c, d1, d2] = kernel;
        if kernel.contains(&0) || i1 == 0 || i2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "layer dims must be positive: kernel {kernel:?}, input {i1}x{i2}"
            )));
        }
        Ok(Self {
            t,
            c,
            d1,
            d2,
            i1,
            i2,
            o1: g.output_size(i1, d1)?,
            o2: g.output_size(i2, d2)?,
        })
    }

    pub fn kernel(&self) -> [usize; 4] {
        [self.t, self.c, self.d1, self.d2]
    }
}

/// Ranks seen from the convolution pipeline: cores `(Rd, T, Ra)`,
/// `(Ra, C, Rb)`, `(Rb, D1, Rc)`, `(Rc, D2, Rd)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingRanks {
    pub ra: usize,
    pub rb: usize,
    pub rc: usize,
    pub rd: usize,
}

/// Maps shifted-order ranks `(R1, .., R4)` to pipeline ranks.
pub fn ring_ranks(ranks: &[usize], shift: usize) -> RingRanks {
    assert_eq!(ranks.len(), 4, "kernel TR models have four ranks");
    let left = |mode: usize| ranks[(mode + 4 - shift % 4) % 4];
    RingRanks {
        ra: left(1),
        rb: left(2),
        rc: left(3),
        rd: left(0),
    }
}

fn check_ranks(ranks: &[usize], shift: usize) -> Result<()> {
    if ranks.len() != 4 || ranks.contains(&0) {
        return Err(Error::InvalidParameter(format!(
            "expected four positive ranks, got {ranks:?}"
        )));
    }
    if shift >= 4 {
        return Err(Error::ModeOutOfRange {
            mode: shift,
            order: 4,
        });
    }
    Ok(())
}

/// Parameter count of a TR kernel with shifted-order `ranks`.
pub fn storage_tr(ranks: &[usize], dims: &LayerDims, shift: usize) -> Result<usize> {
    check_ranks(ranks, shift)?;
    let r = ring_ranks(ranks, shift);
    Ok(r.rd * dims.t * r.ra + r.ra * dims.c * r.rb + r.rb * dims.d1 * r.rc + r.rc * dims.d2 * r.rd)
}

/// MACs of the four-stage TR convolution. The spatial stages are counted at
/// their output positions, so stride and padding are reflected exactly.
pub fn flops_tr(ranks: &[usize], dims: &LayerDims, shift: usize) -> Result<FlopCounter> {
    check_ranks(ranks, shift)?;
    let r = ring_ranks(ranks, shift);
    let u = |v: usize| v as u64;
    Ok(FlopCounter {
        stage1: u(dims.i1 * dims.i2 * r.ra * dims.c * r.rb),
        stage2: u(dims.o1 * dims.i2 * r.ra * r.rc * dims.d1 * r.rb),
        stage3: u(dims.o1 * dims.o2 * r.ra * r.rd * dims.d2 * r.rc),
        stage4: u(dims.o1 * dims.o2 * r.ra * dims.t * r.rd),
    })
}

/// FLOPS with all four ranks equal to `r` and `D1 = D2 = D`, counting the
/// spatial stages at their input positions:
/// `R²CI1I2 + R³DI1I2 + R³DĨ1I2 + R²TĨ1Ĩ2`.
pub fn flops_uniform(r: u64, dims: &LayerDims) -> u64 {
    let d = dims.d1 as u64;
    let (i1, i2, o1, o2) = (dims.i1 as u64, dims.i2 as u64, dims.o1 as u64, dims.o2 as u64);
    let (c, t) = (dims.c as u64, dims.t as u64);
    r * r * c * i1 * i2 + r * r * r * d * i1 * i2 + r * r * r * d * o1 * i2 + r * r * t * o1 * o2
}

/// A storage bound. `exact` holds the integer value when every division in
/// the formula is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageBound {
    pub value: f64,
    pub exact: Option<u128>,
}

/// `(n / d)²`, exact when `d` divides `n`.
fn sq_ratio(n: u128, d: u128) -> StorageBound {
    if n.is_multiple_of(d) {
        let q = n / d;
        StorageBound {
            value: (q * q) as f64,
            exact: Some(q * q),
        }
    } else {
        let q = n as f64 / d as f64;
        StorageBound {
            value: q * q,
            exact: None,
        }
    }
}

fn int(v: u128) -> StorageBound {
    StorageBound {
        value: v as f64,
        exact: Some(v),
    }
}

fn sum(terms: &[StorageBound]) -> StorageBound {
    StorageBound {
        value: terms.iter().map(|t| t.value).sum(),
        exact: terms.iter().map(|t| t.exact).sum(),
    }
}

/// Largest admissible `R1` for the bound curves of each shift.
pub fn max_r1(shift: usize, t: usize, c: usize, d: usize) -> usize {
    match shift {
        0 => t,
        1 => c,
        _ => d,
    }
}

/// Admissible `R1` values of the bound curve for `shift`.
pub fn r1_range(shift: usize, t: usize, c: usize, d: usize) -> Vec<usize> {
    match shift {
        0 | 1 => (1..=max_r1(shift, t, c, d)).collect(),
        _ => vec![1, d],
    }
}

/// Storage upper bound under full-rank unfoldings for a `T x C x D x D`
/// kernel under `shift`, using the piece selected by `r1`.
pub fn storage_bound(shift: usize, r1: usize, t: usize, c: usize, d: usize) -> Result<StorageBound> {
    if t == 0 || c == 0 || d == 0 {
        return Err(Error::InvalidParameter("T, C and D must be positive".into()));
    }
    let out_of_range = |reason: &str| Error::RankOutOfRange {
        shift,
        r1,
        reason: reason.to_string(),
    };
    let (t, c, d, r) = (t as u128, c as u128, d as u128, r1 as u128);
    let d2 = d * d;
    let d4 = d2 * d2;
    match shift {
        0 => {
            if r == 0 || r > t {
                return Err(out_of_range("R1 must lie in [1, T]"));
            }
            let tc = t * c;
            Ok(if r * r * d2 <= tc {
                int(t * t + t * d2 * c + (d4 + d2) * r * r)
            } else if r * r < tc {
                sum(&[int(t * t), sq_ratio(tc, r), int(tc * d2), int(d2 * r * r)])
            } else {
                sum(&[int(t * t), sq_ratio(tc, r), sq_ratio(tc * d, r), int(tc * d2)])
            })
        }
        1 => {
            if r == 0 || r > c {
                return Err(out_of_range("R1 must lie in [1, C]"));
            }
            Ok(if r * r * t <= d2 * c {
                sum(&[int(c * c), sq_ratio(c * d, r), int(c * t * d2), int(t * t * r * r)])
            } else {
                sum(&[int(c * c), sq_ratio(c * d, r), sq_ratio(c * d2, r), int(c * t * d2)])
            })
        }
        2 | 3 => {
            let first = (shift == 2) == (r == 1);
            if r != 1 && r != d {
                return Err(out_of_range("R1 must be 1 or D"));
            }
            Ok(int(if first {
                d2 + d4 + c * t * d2 + if shift == 2 { c * c } else { t * t }
            } else {
                2 * d2 + c * t * d2 + d2 * c * c
            }))
        }
        _ => Err(Error::ModeOutOfRange {
            mode: shift,
            order: 4,
        }),
    }
}

/// Real-valued TR ranks `(R2, R3, R4)` under full-rank unfoldings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankBounds {
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

/// Full-rank chain for a `T x C x D x D` kernel after `shift`:
/// `R2 = min(I1, I2I3I4)/R1`, `R3 = min(R2·I2, I3I4·R1)`,
/// `R4 = min(R3·I3, I4·R1)` on the shifted dims.
pub fn rank_bounds(shift: usize, r1: usize, t: usize, c: usize, d: usize) -> RankBounds {
    let orig = [t, c, d, d];
    let i: Vec<f64> = (0..4).map(|n| orig[(n + shift) % 4] as f64).collect();
    let r1 = r1 as f64;
    let r2 = i[0].min(i[1] * i[2] * i[3]) / r1;
    let r3 = (r2 * i[1]).min(i[2] * i[3] * r1);
    let r4 = (r3 * i[2]).min(i[3] * r1);
    RankBounds { r2, r3, r4 }
}

/// One row of a storage-bound curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub shift: usize,
    pub r1: usize,
    pub normalized_r1: f64,
    pub bound: StorageBound,
}

/// Storage bounds over every admissible `R1`, for all four shifts.
pub fn storage_curves(t: usize, c: usize, d: usize) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::new();
    for shift in 0..4 {
        let max = max_r1(shift, t, c, d) as f64;
        for r1 in r1_range(shift, t, c, d) {
            out.push(CurvePoint {
                shift,
                r1,
                normalized_r1: r1 as f64 / max,
                bound: storage_bound(shift, r1, t, c, d)?,
            });
        }
    }
    Ok(out)
}

/// Points attaining the smallest bound.
pub fn curve_minima(points: &[CurvePoint]) -> Vec<CurvePoint> {
    let min = points
        .iter()
        .map(|p| p.bound.value)
        .fold(f64::INFINITY, f64::min);
    points.iter().copied().filter(|p| p.bound.value == min).collect()
}

fn format_bound(b: &StorageBound) -> String {
    match b.exact {
        Some(v) => v.to_string(),
        None => format!("{:.6}", b.value),
    }
}

/// CSV with header `permutation,R1,normalized_R1,bound`.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("permutation,R1,normalized_R1,bound\n");
    for p in points {
        let _ = writeln!(
            s,
            "tau{},{},{:.6},{}",
            p.shift,
            p.r1,
            p.normalized_r1,
            format_bound(&p.bound)
        );
    }
    s
}

/// Tensorized TR layer: `C = J1·J2·J3`, `T = O1·O2·O3`, uniform rank `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorizedTrSpec {
    pub j: [usize; 3],
    pub o: [usize; 3],
    pub r: usize,
}

impl TensorizedTrSpec {
    pub fn validate(&self, dims: &LayerDims) -> Result<()> {
        let cj: usize = self.j.iter().product();
        let to: usize = self.o.iter().product();
        if cj != dims.c || to != dims.t {
            return Err(Error::InvalidParameter(format!(
                "factorizations {:?} and {:?} do not give C = {} and T = {}",
                self.j, self.o, dims.c, dims.t
            )));
        }
        Ok(())
    }
}

/// `R³(J1J2 + C + T + O1O2) + R²(C·I1I2 + D1D2·I1I2 + T·Ĩ1Ĩ2)`.
pub fn flops_tensorized_tr(spec: &TensorizedTrSpec, dims: &LayerDims) -> Result<u64> {
    spec.validate(dims)?;
    let r = spec.r as u64;
    let u = |v: usize| v as u64;
    let cubic = u(spec.j[0] * spec.j[1] + dims.c + dims.t + spec.o[0] * spec.o[1]);
    let quad = u(dims.c * dims.i1 * dims.i2
        + dims.d1 * dims.d2 * dims.i1 * dims.i2
        + dims.t * dims.o1 * dims.o2);
    Ok(r * r * r * cubic + r * r * quad)
}

/// Layer parameters for the FLOPS ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RhoLayer {
    pub name: &'static str,
    pub i1: usize,
    pub i2: usize,
    pub o1: usize,
    pub c: usize,
    pub t: usize,
    pub d: usize,
    pub j1: usize,
    pub j2: usize,
    pub o1f: usize,
    pub o2f: usize,
}

impl RhoLayer {
    /// Square output, `Ĩ2 = Ĩ1`.
    pub fn dims(&self) -> LayerDims {
        LayerDims {
            t: self.t,
            c: self.c,
            d1: self.d,
            d2: self.d,
            i1: self.i1,
            i2: self.i2,
            o1: self.o1,
            o2: self.o1,
        }
    }

    /// Tensorized spec with the remaining factors `J3 = C/(J1J2)`, `O3 = T/(O1O2)`.
    pub fn tensorized(&self, r: usize) -> TensorizedTrSpec {
        TensorizedTrSpec {
            j: [self.j1, self.j2, self.c / (self.j1 * self.j2)],
            o: [self.o1f, self.o2f, self.t / (self.o1f * self.o2f)],
            r,
        }
    }
}

const fn rho_layer(name: &'static str, i: usize, o1: usize, c: usize, t: usize, j2: usize) -> RhoLayer {
    RhoLayer {
        name,
        i1: i,
        i2: i,
        o1,
        c,
        t,
        d: 3,
        j1: 4,
        j2,
        o1f: 4,
        o2f: j2,
    }
}

/// The five layer types of a CIFAR ResNet-32.
pub const RESNET32_LAYERS: [RhoLayer; 5] = [
    rho_layer("L1", 32, 32, 16, 16, 2),
    rho_layer("L2", 32, 16, 16, 32, 4),
    rho_layer("L3", 16, 16, 32, 32, 4),
    rho_layer("L4", 16, 8, 32, 64, 4),
    rho_layer("L5", 8, 8, 64, 64, 4),
];

/// `ρ = (R·D·I1I2 + R·D·Ĩ1I2) / (R(J1J2 + C + T + O1O2) + D²I1I2)`.
pub fn rho(r: f64, l: &RhoLayer) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::InvalidParameter(format!("rank must be >= 1, got {r}")));
    }
    let f = |v: usize| v as f64;
    let num = r * f(l.d) * f(l.i1 * l.i2) + r * f(l.d) * f(l.o1 * l.i2);
    let den = r * f(l.j1 * l.j2 + l.c + l.t + l.o1f * l.o2f) + f(l.d * l.d * l.i1 * l.i2);
    Ok(num / den)
}
