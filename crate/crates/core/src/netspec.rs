//! Network descriptions, baseline parameter and FLOPS accounting, and
//! whole-network compression with per-layer minimum-storage TR search.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{AnyTensor, Archive};
use crate::complexity::{flops_tr, storage_tr, LayerDims};
use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, DType};
use crate::tr_svd::{check_eps, rsdtr_search};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    Pool,
}

/// One layer. Conv kernels are `T x C x D1 x D2`; fc layers use `C` inputs
/// and `T` outputs; pooling keeps `C = T` channels and uses `D1 x D2` windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "D1", default = "one")]
    pub d1: usize,
    #[serde(rename = "D2", default = "one")]
    pub d2: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default)]
    pub compress: bool,
    /// Layer whose output feeds this one; the preceding layer when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(name: &str, t: usize, c: usize, d: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            t,
            c,
            d1: d,
            d2: d,
            stride,
            padding,
            compress: true,
            source: None,
        }
    }

    pub fn fc(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Fc,
            t: outputs,
            c: inputs,
            d1: 1,
            d2: 1,
            stride: 1,
            padding: 0,
            compress: false,
            source: None,
        }
    }

    pub fn pool(name: &str, channels: usize, d: usize, stride: usize, padding: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Pool,
            t: channels,
            c: channels,
            d1: d,
            d2: d,
            stride,
            padding,
            compress: false,
            source: None,
        }
    }

    fn with_compress(mut self, compress: bool) -> Self {
        self.compress = compress;
        self
    }

    fn with_source(mut self, source: &str) -> Self {
        self.source = Some(source.to_string());
        self
    }

    pub fn geometry(&self) -> ConvGeometry {
        ConvGeometry {
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn kernel_dims(&self) -> [usize; 4] {
        [self.t, self.c, self.d1, self.d2]
    }

    pub fn is_pointwise(&self) -> bool {
        self.d1 == 1 && self.d2 == 1
    }

    /// Weight parameters without batch-norm or bias.
    pub fn weight_params(&self) -> usize {
        match self.kind {
            LayerKind::Conv => self.t * self.c * self.d1 * self.d2,
            LayerKind::Fc => self.t * self.c,
            LayerKind::Pool => 0,
        }
    }

    /// Batch-norm scale and shift for conv layers, bias for fc layers.
    pub fn other_params(&self) -> usize {
        match self.kind {
            LayerKind::Conv => 2 * self.t,
            LayerKind::Fc => self.t,
            LayerKind::Pool => 0,
        }
    }

    /// Name of the tensor holding the extra parameters, if any.
    pub fn other_tensor_name(&self) -> Option<String> {
        match self.kind {
            LayerKind::Conv => Some(format!("{}.bn", self.name)),
            LayerKind::Fc => Some(format!("{}.bias", self.name)),
            LayerKind::Pool => None,
        }
    }
}

/// Spatial size and channels, `(H, W, C)`.
pub type Shape = [usize; 3];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

/// Input and output shape of a layer after chain resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedLayer {
    pub input: Shape,
    pub output: Shape,
}

impl NetworkSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolve().map(|_| ())
    }

    /// Walks the layer chain and returns every layer's input and output shape.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        let bad = |msg: String| Error::Network(format!("{}: {msg}", self.name));
        if self.input.contains(&0) {
            return Err(bad(format!("input shape {:?} has a zero extent", self.input)));
        }
        let mut outputs: HashMap<&str, Shape> = HashMap::new();
        let mut resolved = Vec::with_capacity(self.layers.len());
        let mut prev = self.input;
        let mut seen_conv = false;
        for l in &self.layers {
            if outputs.contains_key(l.name.as_str()) || l.name.is_empty() {
                return Err(bad(format!("layer name {:?} is empty or repeated", l.name)));
            }
            let input = match &l.source {
                Some(src) => *outputs
                    .get(src.as_str())
                    .ok_or_else(|| bad(format!("{}: unknown source layer {src}", l.name)))?,
                None => prev,
            };
            if l.t == 0 || l.c == 0 || l.d1 == 0 || l.d2 == 0 || l.stride == 0 {
                return Err(bad(format!("{}: dims and stride must be positive", l.name)));
            }
            let [h, w, ch] = input;
            let output = match l.kind {
                LayerKind::Conv | LayerKind::Pool => {
                    if ch != l.c {
                        return Err(bad(format!(
                            "{}: expects {} input channels, chain provides {ch}",
                            l.name, l.c
                        )));
                    }
                    if l.kind == LayerKind::Pool && l.t != l.c {
                        return Err(bad(format!("{}: pooling must keep the channel count", l.name)));
                    }
                    let g = l.geometry();
                    let oh = g.output_size(h, l.d1).map_err(|e| bad(format!("{}: {e}", l.name)))?;
                    let ow = g.output_size(w, l.d2).map_err(|e| bad(format!("{}: {e}", l.name)))?;
                    [oh, ow, l.t]
                }
                LayerKind::Fc => {
                    if h * w * ch != l.c {
                        return Err(bad(format!(
                            "{}: expects {} inputs, chain provides {}",
                            l.name,
                            l.c,
                            h * w * ch
                        )));
                    }
                    if !l.is_pointwise() || l.stride != 1 || l.padding != 0 {
                        return Err(bad(format!("{}: fc layers take no window", l.name)));
                    }
                    [1, 1, l.t]
                }
            };
            if l.compress && l.kind != LayerKind::Conv {
                return Err(bad(format!("{}: only conv layers can be compressed", l.name)));
            }
            if l.kind == LayerKind::Conv {
                if !seen_conv && l.compress {
                    return Err(bad(format!(
                        "{}: the first conv layer is never compressed",
                        l.name
                    )));
                }
                seen_conv = true;
            }
            outputs.insert(l.name.as_str(), output);
            resolved.push(ResolvedLayer { input, output });
            prev = output;
        }
        Ok(resolved)
    }
}

/// Names accepted by [`builtin_network`].
pub const BUILTIN_NETWORKS: [&str; 6] = [
    "resnet20",
    "resnet32",
    "resnet56",
    "vgg19-cifar",
    "resnet18",
    "resnet34",
];

pub fn builtin_network(name: &str) -> Result<NetworkSpec> {
    match name {
        "resnet20" => Ok(cifar_resnet(name, 3)),
        "resnet32" => Ok(cifar_resnet(name, 5)),
        "resnet56" => Ok(cifar_resnet(name, 9)),
        "vgg19-cifar" => Ok(vgg19_cifar()),
        "resnet18" => Ok(imagenet_resnet(name, [2, 2, 2, 2])),
        "resnet34" => Ok(imagenet_resnet(name, [3, 4, 6, 3])),
        _ => Err(Error::UnknownNetwork(name.to_string())),
    }
}

/// CIFAR ResNet of depth `6n + 2` with parameter-free identity shortcuts.
fn cifar_resnet(name: &str, blocks: usize) -> NetworkSpec {
    let mut layers = vec![LayerSpec::conv("conv1", 16, 3, 3, 1, 1).with_compress(false)];
    let mut in_planes = 16;
    for (s, planes) in [16, 32, 64].into_iter().enumerate() {
        for b in 0..blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let p = format!("layer{}.{b}", s + 1);
            layers.push(LayerSpec::conv(&format!("{p}.conv1"), planes, in_planes, 3, stride, 1));
            layers.push(LayerSpec::conv(&format!("{p}.conv2"), planes, planes, 3, 1, 1));
            in_planes = planes;
        }
    }
    layers.push(LayerSpec::pool("avgpool", 64, 8, 1, 0));
    layers.push(LayerSpec::fc("fc", 64, 10));
    NetworkSpec {
        name: name.to_string(),
        input: [32, 32, 3],
        layers,
    }
}

fn vgg19_cifar() -> NetworkSpec {
    let cfg: [usize; 21] = [
        64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
    ];
    let mut layers = Vec::new();
    let (mut c, mut conv, mut pool) = (3, 0, 0);
    for v in cfg {
        if v == 0 {
            pool += 1;
            layers.push(LayerSpec::pool(&format!("pool{pool}"), c, 2, 2, 0));
        } else {
            conv += 1;
            layers.push(LayerSpec::conv(&format!("conv{conv}"), v, c, 3, 1, 1).with_compress(conv > 1));
            c = v;
        }
    }
    layers.push(LayerSpec::fc("classifier", 512, 10));
    NetworkSpec {
        name: "vgg19-cifar".to_string(),
        input: [32, 32, 3],
        layers,
    }
}

/// ImageNet ResNet with basic blocks and 1x1 projection shortcuts.
fn imagenet_resnet(name: &str, blocks: [usize; 4]) -> NetworkSpec {
    let mut layers = vec![
        LayerSpec::conv("conv1", 64, 3, 7, 2, 3).with_compress(false),
        LayerSpec::pool("maxpool", 64, 3, 2, 1),
    ];
    let mut in_planes = 64;
    let mut block_input = "maxpool".to_string();
    for (s, planes) in [64, 128, 256, 512].into_iter().enumerate() {
        for b in 0..blocks[s] {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            let p = format!("layer{}.{b}", s + 1);
            layers.push(LayerSpec::conv(&format!("{p}.conv1"), planes, in_planes, 3, stride, 1));
            layers.push(LayerSpec::conv(&format!("{p}.conv2"), planes, planes, 3, 1, 1));
            if stride != 1 || in_planes != planes {
                layers.push(
                    LayerSpec::conv(&format!("{p}.downsample"), planes, in_planes, 1, stride, 0)
                        .with_source(&block_input),
                );
            }
            block_input = layers.last().expect("block layers").name.clone();
            in_planes = planes;
        }
    }
    layers.push(LayerSpec::pool("avgpool", 512, 7, 1, 0));
    layers.push(LayerSpec::fc("fc", 512, 1000));
    NetworkSpec {
        name: name.to_string(),
        input: [224, 224, 3],
        layers,
    }
}

/// Weight FLOPS of one layer: one per MAC, zero for pooling.
fn layer_flops(l: &LayerSpec, r: &ResolvedLayer) -> u64 {
    match l.kind {
        LayerKind::Conv => (l.weight_params() * r.output[0] * r.output[1]) as u64,
        LayerKind::Fc => l.weight_params() as u64,
        LayerKind::Pool => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCounts {
    pub params: u64,
    pub flops: u64,
}

/// Parameters (weights plus batch-norm or bias) and FLOPS of the
/// uncompressed network.
pub fn baseline_counts(net: &NetworkSpec) -> Result<BaselineCounts> {
    let resolved = net.resolve()?;
    let mut out = BaselineCounts { params: 0, flops: 0 };
    for (l, r) in net.layers.iter().zip(&resolved) {
        out.params += (l.weight_params() + l.other_params()) as u64;
        out.flops += layer_flops(l, r);
    }
    Ok(out)
}

pub fn pcr(baseline_params: u64, compressed_params: u64) -> Result<f64> {
    ratio(baseline_params, compressed_params)
}

pub fn fcr(baseline_flops: u64, compressed_flops: u64) -> Result<f64> {
    ratio(baseline_flops, compressed_flops)
}

fn ratio(base: u64, compressed: u64) -> Result<f64> {
    if compressed == 0 {
        return Err(Error::InvalidParameter("compressed count is zero".into()));
    }
    Ok(base as f64 / compressed as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompressOptions {
    /// Also decompose 1x1 convolutions.
    pub include_1x1: bool,
}

/// Whether `l` is decomposed under `opts`.
pub fn is_eligible(l: &LayerSpec, opts: &CompressOptions) -> bool {
    l.kind == LayerKind::Conv && l.compress && (opts.include_1x1 || !l.is_pointwise())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: LayerKind,
    pub original_params: u64,
    pub original_flops: u64,
    /// Batch-norm or bias parameters, kept in every configuration.
    pub other_params: u64,
    pub compressed: bool,
    pub shift: Option<usize>,
    pub r1: Option<usize>,
    pub ranks: Option<Vec<usize>>,
    pub compressed_params: u64,
    pub compressed_flops: u64,
    pub achieved_eps: Option<f64>,
    #[serde(skip)]
    pub elapsed: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub network: String,
    pub eps_p: f64,
    pub layers: Vec<LayerReport>,
    pub baseline_params: u64,
    pub baseline_flops: u64,
    pub compressed_params: u64,
    pub compressed_flops: u64,
    pub pcr: f64,
    pub fcr: f64,
}

impl CompressionReport {
    fn from_rows(network: &str, eps_p: f64, layers: Vec<LayerReport>) -> Result<Self> {
        let baseline_params = layers.iter().map(|l| l.original_params + l.other_params).sum();
        let baseline_flops = layers.iter().map(|l| l.original_flops).sum();
        let compressed_params = layers.iter().map(|l| l.compressed_params + l.other_params).sum();
        let compressed_flops = layers.iter().map(|l| l.compressed_flops).sum();
        Ok(Self {
            network: network.to_string(),
            eps_p,
            pcr: pcr(baseline_params, compressed_params)?,
            fcr: fcr(baseline_flops, compressed_flops)?,
            layers,
            baseline_params,
            baseline_flops,
            compressed_params,
            compressed_flops,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned text table, one row per layer plus a totals row.
    pub fn to_table(&self, with_time: bool) -> String {
        let mut header = vec![
            "layer", "params", "flops", "shift", "R1", "ranks", "tr_params", "tr_flops", "eps",
        ];
        if with_time {
            header.push("ms");
        }
        let mut rows: Vec<Vec<String>> = self
            .layers
            .iter()
            .map(|l| {
                let opt = |v: Option<String>| v.unwrap_or_else(|| "-".to_string());
                let mut row = vec![
                    l.name.clone(),
                    l.original_params.to_string(),
                    l.original_flops.to_string(),
                    opt(l.shift.map(|s| format!("tau{s}"))),
                    opt(l.r1.map(|r| r.to_string())),
                    opt(l.ranks.as_ref().map(|r| {
                        r.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
                    })),
                    l.compressed_params.to_string(),
                    l.compressed_flops.to_string(),
                    opt(l.achieved_eps.map(|e| format!("{e:.4}"))),
                ];
                if with_time {
                    row.push(opt(l.elapsed.map(|d| format!("{:.1}", d.as_secs_f64() * 1e3))));
                }
                row
            })
            .collect();
        let mut total = vec![
            "total".to_string(),
            self.baseline_params.to_string(),
            self.baseline_flops.to_string(),
            String::new(),
            String::new(),
            String::new(),
            self.compressed_params.to_string(),
            self.compressed_flops.to_string(),
            String::new(),
        ];
        if with_time {
            total.push(String::new());
        }
        rows.push(total);

        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        let line = |cells: Vec<&str>, s: &mut String| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        };
        line(header, &mut s);
        for r in &rows {
            line(r.iter().map(String::as_str).collect(), &mut s);
        }
        let _ = writeln!(
            s,
            "eps_p = {}  PCR = {:.3}  FCR = {:.3}  (other params incl. batch-norm/bias)",
            self.eps_p, self.pcr, self.fcr
        );
        s
    }
}

/// Scalars in `archive` that are parameters, i.e. everything except the
/// `.meta` bookkeeping tensors written next to TR cores.
pub fn archive_param_count(archive: &Archive) -> usize {
    archive
        .iter()
        .filter(|(n, _)| !n.ends_with(".meta"))
        .map(|(_, t)| t.len())
        .sum()
}

/// Decomposes every eligible conv layer of `net` found in `weights` at
/// relative error `eps_p`. Eligible weights are replaced by
/// `{layer}.core0..3` and `{layer}.meta` in the input dtype; every other
/// tensor passes through unchanged.
pub fn compress_network(
    weights: &Archive,
    net: &NetworkSpec,
    eps_p: f64,
    opts: &CompressOptions,
) -> Result<(Archive, CompressionReport)> {
    check_eps(eps_p)?;
    let resolved = net.resolve()?;
    for l in &net.layers {
        if l.kind == LayerKind::Pool {
            continue;
        }
        let w = weights.get(&l.name).ok_or_else(|| Error::MissingTensor(l.name.clone()))?;
        let expect: Vec<usize> = match l.kind {
            LayerKind::Conv => l.kernel_dims().to_vec(),
            _ => vec![l.t, l.c],
        };
        if w.dims() != expect.as_slice() {
            return Err(Error::DimensionMismatch(format!(
                "{}: archive holds {:?}, the network expects {expect:?}",
                l.name,
                w.dims()
            )));
        }
    }

    let jobs: Vec<usize> = (0..net.layers.len())
        .filter(|&i| is_eligible(&net.layers[i], opts))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&i| {
            let l = &net.layers[i];
            let start = Instant::now();
            let w = weights.get_f64(&l.name)?;
            let res = rsdtr_search(&w, eps_p)?;
            Ok((i, res, start.elapsed()))
        })
        .collect::<Result<_>>()?;
    let mut found: HashMap<usize, _> = results.into_iter().map(|(i, r, t)| (i, (r, t))).collect();

    let mut out = Archive::default();
    let mut rows = Vec::with_capacity(net.layers.len());
    let mut decomposed = HashMap::new();
    for (i, (l, r)) in net.layers.iter().zip(&resolved).enumerate() {
        let mut row = LayerReport {
            name: l.name.clone(),
            kind: l.kind,
            original_params: l.weight_params() as u64,
            original_flops: layer_flops(l, r),
            other_params: l.other_params() as u64,
            compressed: false,
            shift: None,
            r1: None,
            ranks: None,
            compressed_params: l.weight_params() as u64,
            compressed_flops: layer_flops(l, r),
            achieved_eps: None,
            elapsed: None,
        };
        if let Some((res, elapsed)) = found.remove(&i) {
            let dims = LayerDims::new(l.kernel_dims(), r.input[0], r.input[1], l.geometry())?;
            let ranks = res.cores.ranks();
            let storage = storage_tr(&ranks, &dims, res.shift)?;
            debug_assert_eq!(storage, res.storage);
            row.compressed = true;
            row.shift = Some(res.shift);
            row.r1 = Some(res.r1);
            row.compressed_params = storage as u64;
            row.compressed_flops = flops_tr(&ranks, &dims, res.shift)?.total();
            row.achieved_eps = Some(res.achieved_rel_error);
            row.elapsed = Some(elapsed);
            row.ranks = Some(ranks);
            decomposed.insert(l.name.as_str(), res.cores);
        }
        rows.push(row);
    }

    for (name, tensor) in weights.iter() {
        match decomposed.get(name) {
            Some(cores) => {
                let prefix = format!("{name}.");
                match tensor.dtype() {
                    DType::F32 => cores.cast::<f32>().write_into(&mut out, &prefix),
                    DType::F64 => cores.write_into(&mut out, &prefix),
                }
            }
            None => out.push(name, tensor.clone()),
        }
    }
    let report = CompressionReport::from_rows(&net.name, eps_p, rows)?;
    Ok((out, report))
}

/// Tensor names [`compress_network`] expects for `net`, with their dims.
pub fn expected_tensors(net: &NetworkSpec) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for l in &net.layers {
        match l.kind {
            LayerKind::Conv => {
                out.push((l.name.clone(), l.kernel_dims().to_vec()));
                out.push((format!("{}.bn", l.name), vec![2, l.t]));
            }
            LayerKind::Fc => {
                out.push((l.name.clone(), vec![l.t, l.c]));
                out.push((format!("{}.bias", l.name), vec![l.t]));
            }
            LayerKind::Pool => {}
        }
    }
    out
}

/// `Some(name)` for the first expected tensor that is absent or has other dims.
pub fn first_mismatch(weights: &Archive, net: &NetworkSpec) -> Option<String> {
    expected_tensors(net)
        .into_iter()
        .find(|(name, dims)| weights.get(name).map(AnyTensor::dims) != Some(dims.as_slice()))
        .map(|(name, _)| name)
}
