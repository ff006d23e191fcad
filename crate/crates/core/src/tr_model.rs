//! Tensor ring representation: a cyclic chain of third-order cores.

use serde::{Deserialize, Serialize};

use crate::archive::{AnyTensor, Archive};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Element};

/// TR cores `G(n) ∈ R^{R_n x I_n x R_{n+1}}` with `R_{N+1} = R_1`.
///
/// The cores describe the tensor after a circular left shift by `shift`
/// modes; `orig_dims` are the dims of the unshifted tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrCores<T: Element = f64> {
    cores: Vec<DenseTensor<T>>,
    shift: usize,
    orig_dims: Vec<usize>,
}

/// Ranks and orientation, without the core payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrLayout {
    pub ranks: Vec<usize>,
    pub shift: usize,
    pub orig_dims: Vec<usize>,
}

fn check_chain<T: Element>(cores: &[DenseTensor<T>]) -> Result<()> {
    if cores.is_empty() {
        return Err(Error::RankChain("no cores".into()));
    }
    for (n, c) in cores.iter().enumerate() {
        if c.ndim() != 3 {
            return Err(Error::RankChain(format!(
                "core {n} has order {} instead of 3",
                c.ndim()
            )));
        }
    }
    let count = cores.len();
    for n in 0..count {
        let next = (n + 1) % count;
        let right = cores[n].dims()[2];
        let left = cores[next].dims()[0];
        if right != left {
            return Err(Error::RankChain(format!(
                "core {n} ends with rank {right} but core {next} starts with rank {left}"
            )));
        }
    }
    Ok(())
}

impl<T: Element> TrCores<T> {
    /// Cores in shifted order plus the shift they were computed under.
    pub fn new(cores: Vec<DenseTensor<T>>, shift: usize) -> Result<Self> {
        check_chain(&cores)?;
        let order = cores.len();
        if shift >= order {
            return Err(Error::ModeOutOfRange { mode: shift, order });
        }
        let shifted: Vec<usize> = cores.iter().map(|c| c.dims()[1]).collect();
        // undo the left shift: original mode m sits at shifted position (m - k) mod N
        let orig_dims = (0..order)
            .map(|m| shifted[(m + order - shift) % order])
            .collect();
        Ok(Self {
            cores,
            shift,
            orig_dims,
        })
    }

    pub fn cores(&self) -> &[DenseTensor<T>] {
        &self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn shift(&self) -> usize {
        self.shift
    }

    pub fn orig_dims(&self) -> &[usize] {
        &self.orig_dims
    }

    /// Mode sizes in the shifted order the cores follow.
    pub fn shifted_dims(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[1]).collect()
    }

    /// `(R_1, .., R_N)`.
    pub fn ranks(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.dims()[0]).collect()
    }

    pub fn layout(&self) -> TrLayout {
        TrLayout {
            ranks: self.ranks(),
            shift: self.shift,
            orig_dims: self.orig_dims.clone(),
        }
    }

    /// `Σ_n R_n · I_n · R_{n+1}`.
    pub fn param_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    pub fn cast<U: Element>(&self) -> TrCores<U> {
        TrCores {
            cores: self.cores.iter().map(DenseTensor::cast).collect(),
            shift: self.shift,
            orig_dims: self.orig_dims.clone(),
        }
    }

    /// Cyclic left rotation of the core sequence by `k`. The result represents
    /// the input tensor circularly shifted by a further `k` modes.
    pub fn rotate(&self, k: usize) -> Result<Self> {
        let order = self.order();
        if k >= order {
            return Err(Error::ModeOutOfRange { mode: k, order });
        }
        let mut cores = self.cores.clone();
        cores.rotate_left(k);
        Ok(Self {
            cores,
            shift: (self.shift + k) % order,
            orig_dims: self.orig_dims.clone(),
        })
    }

    /// Tensor in the shifted orientation: `y[i] = trace(Π_n G_n[:, i_n, :])`.
    ///
    /// Built by chaining slices left to right: the running product has layout
    /// `(R_1, I_1..I_n, R_{n+1})`, so the total cost is `O(Π I · R³)`.
    pub fn reconstruct(&self) -> DenseTensor<T> {
        let r1 = self.cores[0].dims()[0];
        let first = &self.cores[0];
        let mut acc: Vec<f64> = first.data().iter().map(|v| v.to_f64()).collect();
        let mut mid = first.dims()[1];
        let mut right = first.dims()[2];
        for core in &self.cores[1..] {
            let (rl, ni, rr) = (core.dims()[0], core.dims()[1], core.dims()[2]);
            debug_assert_eq!(rl, right);
            let g: Vec<f64> = core.data().iter().map(|v| v.to_f64()).collect();
            let rows = r1 * mid;
            // (rows x rl) · (rl x ni*rr)
            acc = crate::tensor::matmul_acc(&acc, &g, rows, rl, ni * rr);
            mid *= ni;
            right = rr;
        }
        debug_assert_eq!(right, r1);
        let mut out = vec![0.0; mid];
        for a in 0..r1 {
            let block = &acc[a * mid * r1..(a + 1) * mid * r1];
            for (o, chunk) in out.iter_mut().zip(block.chunks_exact(r1)) {
                *o += chunk[a];
            }
        }
        DenseTensor::new(
            self.shifted_dims(),
            out.into_iter().map(T::from_f64).collect(),
        )
        .expect("dims product matches chained size")
    }

    /// Tensor in the original (unshifted) orientation.
    pub fn reconstruct_original(&self) -> DenseTensor<T> {
        let shifted = self.reconstruct();
        let order = self.order();
        if self.shift == 0 {
            return shifted;
        }
        shifted
            .circular_shift(order - self.shift)
            .expect("shift below order")
    }

    /// Tensors `{prefix}core0..core{N-1}` and `{prefix}meta`, where `meta`
    /// holds `(N, shift, R_1..R_N)` widened to the archive dtype.
    pub fn write_into(&self, archive: &mut Archive, prefix: &str)
    where
        AnyTensor: From<DenseTensor<T>>,
    {
        for (n, core) in self.cores.iter().enumerate() {
            archive.push(format!("{prefix}core{n}"), AnyTensor::from(core.clone()));
        }
        let mut meta = vec![self.order() as f64, self.shift as f64];
        meta.extend(self.ranks().iter().map(|&r| r as f64));
        let meta = DenseTensor::new(vec![meta.len()], meta.into_iter().map(T::from_f64).collect())
            .expect("non-empty meta");
        archive.push(format!("{prefix}meta"), AnyTensor::from(meta));
    }
}

impl TrCores<f64> {
    /// Reads cores written by [`TrCores::write_into`], widening `f32` payloads.
    pub fn read_from(archive: &Archive, prefix: &str) -> Result<Self> {
        let meta_name = format!("{prefix}meta");
        let meta = archive.get_f64(&meta_name)?;
        let values = meta.data();
        let as_count = |v: f64, what: &str| -> Result<usize> {
            if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                return Err(Error::Format(format!(
                    "{meta_name}: {what} = {v} is not a non-negative integer"
                )));
            }
            Ok(v as usize)
        };
        if values.len() < 2 {
            return Err(Error::Format(format!("{meta_name} is too short")));
        }
        let order = as_count(values[0], "N")?;
        let shift = as_count(values[1], "shift")?;
        if order == 0 || values.len() != 2 + order {
            return Err(Error::Format(format!(
                "{meta_name} must hold N + 2 values for N = {order}"
            )));
        }
        let mut cores = Vec::with_capacity(order);
        for n in 0..order {
            cores.push(archive.get_f64(&format!("{prefix}core{n}"))?);
        }
        let tr = Self::new(cores, shift)?;
        for (n, (&stored, actual)) in values[2..].iter().zip(tr.ranks()).enumerate() {
            if as_count(stored, "rank")? != actual {
                return Err(Error::RankChain(format!(
                    "meta lists R{} = {stored} but core{n} starts with rank {actual}",
                    n + 1
                )));
            }
        }
        Ok(tr)
    }
}
