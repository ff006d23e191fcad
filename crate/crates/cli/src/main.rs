use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use rsdtr_core::complexity::{curve_minima, curves_csv, rho, storage_curves, RESNET32_LAYERS};
use rsdtr_core::netspec::{
    builtin_network, compress_network, first_mismatch, CompressOptions, CompressionReport,
    NetworkSpec, BUILTIN_NETWORKS,
};
use rsdtr_core::synthetic::{gaussian_tensor, synthetic_weights};
use rsdtr_core::tr_svd::{
    candidate_keys, evaluate_candidates, relative_error, rsdtr_search, select_best, tr_svd,
    DecompositionConfig,
};
use rsdtr_core::{
    conv2d_direct, tr_convolution, Archive, ConvGeometry, DType, DenseTensor, TrConvLayer,
    TrCores,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "rsdtr", version, about = "Minimum-storage tensor ring compression of CNN kernels")]
struct Cli {
    /// Worker threads for the parallel search (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose one kernel and write its TR cores.
    Decompose(DecomposeArgs),
    /// Compress every eligible conv layer of a network.
    Compress(CompressArgs),
    /// Storage upper-bound curves over R1 for all circular shifts, as CSV.
    Curves(CurvesArgs),
    /// FLOPS ratio against tensorized TR for the ResNet-32 layer types, as CSV.
    Rho(RhoArgs),
    /// Check the convolution pipeline and search against oracles, or check stored cores.
    Verify(VerifyArgs),
    /// Histogram of selected shifts and R1 regimes over a network's layers.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for DType {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => DType::F32,
            DtypeArg::F64 => DType::F64,
        }
    }
}

#[derive(Args)]
struct NetworkArgs {
    /// Built-in network name.
    #[arg(long, conflicts_with = "spec")]
    network: Option<String>,
    /// Network description as JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Weight archive; seeded Gaussian weights are used when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed for synthetic weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dtype of synthetic weights.
    #[arg(long, value_enum, default_value = "f32")]
    dtype: DtypeArg,
    /// Also decompose 1x1 convolutions.
    #[arg(long)]
    include_1x1: bool,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Archive holding the kernel.
    #[arg(long, requires = "tensor", conflicts_with = "shape")]
    weights: Option<PathBuf>,
    /// Tensor name inside the archive.
    #[arg(long)]
    tensor: Option<String>,
    /// Synthetic Gaussian kernel `T,C,D1,D2`.
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Fix the shift instead of searching (needs --r1).
    #[arg(long, requires = "r1")]
    shift: Option<usize>,
    #[arg(long, requires = "shift")]
    r1: Option<usize>,
    /// Output archive for the cores.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dtype of the stored cores.
    #[arg(long, value_enum, default_value = "f64")]
    dtype: DtypeArg,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Output archive with cores in place of decomposed kernels.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
    /// Print wall-clock time per layer.
    #[arg(long)]
    time: bool,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(short = 't', long = "T", default_value_t = 256)]
    t: usize,
    #[arg(short = 'c', long = "C", default_value_t = 256)]
    c: usize,
    #[arg(short = 'd', long = "D", default_value_t = 3)]
    d: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RhoArgs {
    /// Layer types to sweep (L1..L5); all when absent.
    #[arg(long, value_delimiter = ',')]
    layer: Vec<String>,
    #[arg(long, default_value_t = 30)]
    r_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Check the TR cores stored in this archive instead of running the oracle matrix.
    #[arg(long)]
    cores: Option<PathBuf>,
    /// With --cores: original kernels to compare reconstructions against.
    #[arg(long, requires = "cores")]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Kernel `T,C,D1,D2` for the oracle matrix.
    #[arg(long, value_delimiter = ',', default_value = "6,4,3,3")]
    kernel: Vec<usize>,
    /// Input spatial size `I1,I2`.
    #[arg(long, value_delimiter = ',', default_value = "7,6")]
    input: Vec<usize>,
    /// Relative errors to test.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    eps: Vec<f64>,
    #[arg(long, value_enum, default_value = "f64")]
    dtype: DtypeArg,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long)]
    json: bool,
    #[arg(long)]
    time: bool,
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Verify(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<rsdtr_core::Error> for Failure {
    fn from(e: rsdtr_core::Error) -> Self {
        Failure::Data(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let outcome = match cli.command {
        Command::Decompose(a) => decompose(a),
        Command::Compress(a) => compress(a),
        Command::Curves(a) => curves(a),
        Command::Rho(a) => rho_sweep(a),
        Command::Verify(a) => verify(a),
        Command::Stats(a) => stats(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

fn check_eps(eps: f64) -> Outcome {
    if !(0.0..1.0).contains(&eps) {
        return Err(Failure::Data(anyhow::anyhow!(
            "--eps must lie in [0, 1), got {eps}"
        )));
    }
    Ok(())
}

fn load_archive(path: &Path) -> Result<Archive, Failure> {
    Ok(Archive::load(path).with_context(|| format!("reading {}", path.display()))?)
}

fn save_archive(ar: &Archive, path: &Path) -> Outcome {
    ar.save(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_network(args: &NetworkArgs) -> Result<NetworkSpec, Failure> {
    match (&args.network, &args.spec) {
        (Some(name), None) => Ok(builtin_network(name).map_err(|_| {
            Failure::Usage(format!(
                "unknown network {name}; choose one of {}",
                BUILTIN_NETWORKS.join(", ")
            ))
        })?),
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Ok(NetworkSpec::from_json(&text)
                .with_context(|| format!("parsing {}", path.display()))?)
        }
        _ => Err(Failure::Usage("give exactly one of --network or --spec".into())),
    }
}

fn load_weights(args: &NetworkArgs, net: &NetworkSpec) -> Result<Archive, Failure> {
    match &args.weights {
        Some(path) => {
            let ar = load_archive(path)?;
            if let Some(name) = first_mismatch(&ar, net) {
                eprintln!("warning: {} has no matching tensor {name}", path.display());
            }
            Ok(ar)
        }
        None => Ok(synthetic_weights(net, args.seed, args.dtype.into())?),
    }
}

#[derive(Serialize)]
struct DecomposeSummary {
    tensor: String,
    dims: Vec<usize>,
    eps_p: f64,
    shift: usize,
    r1: usize,
    ranks: Vec<usize>,
    original_params: usize,
    storage: usize,
    compression: f64,
    achieved_rel_error: f64,
    candidates_evaluated: usize,
}

fn decompose(a: DecomposeArgs) -> Outcome {
    check_eps(a.eps)?;
    let (name, w) = match (&a.weights, &a.shape) {
        (Some(path), None) => {
            let name = a.tensor.clone().expect("clap requires --tensor");
            let w = load_archive(path)?.get_f64(&name)?;
            (name, w)
        }
        (None, Some(shape)) => {
            if shape.len() != 4 || shape.contains(&0) {
                return Err(Failure::Usage("--shape takes four positive sizes T,C,D1,D2".into()));
            }
            ("kernel".to_string(), gaussian_tensor(shape, a.seed)?)
        }
        _ => return Err(Failure::Usage("give --weights with --tensor, or --shape".into())),
    };
    let (cores, candidates) = match (a.shift, a.r1) {
        (Some(shift), Some(r1)) => (tr_svd(&w, &DecompositionConfig::new(a.eps, shift, r1)?)?, 1),
        _ => {
            let res = rsdtr_search(&w, a.eps)?;
            (res.cores, res.candidates_evaluated)
        }
    };
    let summary = DecomposeSummary {
        tensor: name.clone(),
        dims: w.dims().to_vec(),
        eps_p: a.eps,
        shift: cores.shift(),
        r1: cores.ranks()[0],
        ranks: cores.ranks(),
        original_params: w.len(),
        storage: cores.param_count(),
        compression: w.len() as f64 / cores.param_count() as f64,
        achieved_rel_error: relative_error(&w, &cores)?,
        candidates_evaluated: candidates,
    };
    if let Some(out) = &a.out {
        let mut ar = Archive::default();
        let prefix = format!("{name}.");
        match a.dtype {
            DtypeArg::F32 => cores.cast::<f32>().write_into(&mut ar, &prefix),
            DtypeArg::F64 => cores.write_into(&mut ar, &prefix),
        }
        save_archive(&ar, out)?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn compress(a: CompressArgs) -> Outcome {
    check_eps(a.eps)?;
    let net = load_network(&a.net)?;
    let weights = load_weights(&a.net, &net)?;
    let opts = CompressOptions {
        include_1x1: a.net.include_1x1,
    };
    let start = Instant::now();
    let (out, report) = compress_network(&weights, &net, a.eps, &opts)?;
    let elapsed = start.elapsed();
    if let Some(path) = &a.out {
        save_archive(&out, path)?;
    }
    if let Some(path) = &a.report {
        write_text(Some(path), &report.to_json()?)?;
    }
    if a.json {
        println!("{}", report.to_json()?);
    } else {
        print!("{}", report.to_table(a.time));
    }
    if a.time {
        eprintln!("total wall-clock: {:.2} s", elapsed.as_secs_f64());
    }
    Ok(())
}

fn curves(a: CurvesArgs) -> Outcome {
    if a.t < a.c {
        eprintln!("warning: the bounds assume T >= C");
    }
    let pts = storage_curves(a.t, a.c, a.d)?;
    write_text(a.out.as_deref(), &curves_csv(&pts))?;
    for m in curve_minima(&pts) {
        eprintln!("minimum: tau{} R1={} bound={}", m.shift, m.r1, m.bound.value);
    }
    Ok(())
}

fn rho_sweep(a: RhoArgs) -> Outcome {
    let layers: Vec<_> = if a.layer.is_empty() {
        RESNET32_LAYERS.to_vec()
    } else {
        a.layer
            .iter()
            .map(|name| {
                RESNET32_LAYERS
                    .iter()
                    .find(|l| l.name.eq_ignore_ascii_case(name))
                    .copied()
                    .ok_or_else(|| Failure::Usage(format!("unknown layer {name}; use L1..L5")))
            })
            .collect::<Result<_, _>>()?
    };
    let mut csv = String::from("layer,R,rho\n");
    for l in &layers {
        for r in 1..=a.r_max {
            csv.push_str(&format!("{},{r},{:.9}\n", l.name, rho(r as f64, l)?));
        }
    }
    write_text(a.out.as_deref(), &csv)
}

fn verify(a: VerifyArgs) -> Outcome {
    match &a.cores {
        Some(path) => verify_cores(path, a.weights.as_deref(), &a.eps),
        None => verify_matrix(&a),
    }
}

/// Every `{prefix}meta` entry names a TR model; each must load with a
/// consistent rank chain and reconstruct to finite values.
fn verify_cores(path: &Path, weights: Option<&Path>, eps: &[f64]) -> Outcome {
    let ar = load_archive(path)?;
    let originals = weights.map(load_archive).transpose()?;
    let tol = eps.iter().copied().fold(0.0, f64::max) + 1e-8;
    let prefixes: Vec<String> = ar
        .names()
        .filter_map(|n| n.strip_suffix("meta").map(str::to_string))
        .collect();
    if prefixes.is_empty() {
        return Err(Failure::Verify(format!("{} holds no TR cores", path.display())));
    }
    let mut failures = Vec::new();
    for prefix in &prefixes {
        let label = prefix.trim_end_matches('.');
        let cores = match TrCores::read_from(&ar, prefix) {
            Ok(c) => c,
            Err(e) => {
                failures.push(format!("{label}: rank chain invariant violated: {e}"));
                continue;
            }
        };
        let w = cores.reconstruct_original();
        if w.data().iter().any(|v| !v.is_finite()) {
            failures.push(format!("{label}: reconstruction is not finite"));
            continue;
        }
        let mut line = format!("{label}: ranks {:?} shift tau{} ok", cores.ranks(), cores.shift());
        if let Some(orig) = &originals {
            let reference = orig.get_f64(label)?;
            if reference.dims() != w.dims() {
                failures.push(format!("{label}: reconstruction dims {:?} differ from {:?}", w.dims(), reference.dims()));
                continue;
            }
            let err = relative_error(&reference, &cores)?;
            if err > tol {
                failures.push(format!("{label}: relative error {err:.3e} exceeds {tol:.3e}"));
                continue;
            }
            line.push_str(&format!(", relative error {err:.3e}"));
        }
        println!("{line}");
    }
    if failures.is_empty() {
        println!("PASS {} TR models", prefixes.len());
        Ok(())
    } else {
        Err(Failure::Verify(failures.join("; ")))
    }
}

fn pipeline_deviation(
    cores: &TrCores<f64>,
    x: &DenseTensor<f64>,
    g: ConvGeometry,
    dtype: DtypeArg,
) -> Result<f64, Failure> {
    Ok(match dtype {
        DtypeArg::F64 => {
            let layer = TrConvLayer::new(cores.clone(), g)?;
            let (y, _) = tr_convolution(x, &layer)?;
            let reference = conv2d_direct(x, &cores.reconstruct_original(), g)?;
            y.max_relative_deviation(&reference)?
        }
        DtypeArg::F32 => {
            let c32 = cores.cast::<f32>();
            let x32 = x.cast::<f32>();
            let (y, _) = tr_convolution(&x32, &TrConvLayer::new(c32.clone(), g)?)?;
            let reference = conv2d_direct(&x32, &c32.reconstruct_original(), g)?;
            y.max_relative_deviation(&reference)?
        }
    })
}

fn verify_matrix(a: &VerifyArgs) -> Outcome {
    if a.kernel.len() != 4 || a.kernel.contains(&0) {
        return Err(Failure::Usage("--kernel takes four positive sizes T,C,D1,D2".into()));
    }
    if a.input.len() != 2 || a.input.contains(&0) {
        return Err(Failure::Usage("--input takes two positive sizes I1,I2".into()));
    }
    for &e in &a.eps {
        check_eps(e)?;
    }
    let tol = match a.dtype {
        DtypeArg::F64 => 1e-10,
        DtypeArg::F32 => 1e-4,
    };
    let w = gaussian_tensor(&a.kernel, a.seed)?;
    let x = gaussian_tensor(&[a.input[0], a.input[1], a.kernel[1]], a.seed.wrapping_add(1))?;
    let geometries = [(1, 0), (1, 1), (2, 0), (2, 1)];
    let mut failed = Vec::new();
    let mark = |ok: bool| if ok { "pass" } else { "FAIL" };

    println!("equivalence tolerance {tol:e}");
    println!("{:<6} {:<6} {:>8} {:>8} {:>8} {:>8} {:>8}", "eps", "shift", "d1p0", "d1p1", "d2p0", "d2p1", "bound");
    for &eps in &a.eps {
        for shift in 0..4 {
            let cores = tr_svd(&w, &DecompositionConfig::new(eps, shift, 1)?)?;
            let mut cells = Vec::new();
            for (s, p) in geometries {
                let g = ConvGeometry::new(s, p)?;
                let dev = pipeline_deviation(&cores, &x, g, a.dtype)?;
                let ok = dev <= tol;
                if !ok {
                    failed.push(format!("pipeline eps={eps} tau{shift} stride={s} pad={p}: deviation {dev:.3e}"));
                }
                cells.push(mark(ok));
            }
            let err = relative_error(&w, &cores)?;
            let ok = err <= eps + 1e-8;
            if !ok {
                failed.push(format!("error bound eps={eps} tau{shift}: {err:.3e}"));
            }
            println!(
                "{:<6} {:<6} {:>8} {:>8} {:>8} {:>8} {:>8}",
                eps, format!("tau{shift}"), cells[0], cells[1], cells[2], cells[3], mark(ok)
            );
        }
        let res = rsdtr_search(&w, eps)?;
        let keys = candidate_keys(&w, eps)?;
        let all = evaluate_candidates(&w, eps, &keys)?;
        let best = select_best(&all).expect("at least one candidate");
        let ok = res.storage == best.storage && (res.shift, res.r1) == (best.shift, best.r1);
        if !ok {
            failed.push(format!(
                "optimality eps={eps}: search chose {} (tau{}, R1={}), enumeration {} (tau{}, R1={})",
                res.storage, res.shift, res.r1, best.storage, best.shift, best.r1
            ));
        }
        println!(
            "optimality eps={eps}: {} over {} candidates -> tau{} R1={} storage {}",
            mark(ok),
            all.len(),
            res.shift,
            res.r1,
            res.storage
        );
    }
    if failed.is_empty() {
        println!("PASS");
        Ok(())
    } else {
        Err(Failure::Verify(failed.join("; ")))
    }
}

#[derive(Serialize)]
struct StatsOutput {
    network: String,
    eps_p: f64,
    layers: usize,
    /// `tau{k}/{regime}` -> count
    histogram: BTreeMap<String, usize>,
    frequencies: BTreeMap<String, f64>,
}

fn r1_regime(ranks: &[usize]) -> &'static str {
    match (ranks[0], ranks[1]) {
        (1, _) => "R1=1",
        (_, 1) => "R1=max",
        _ => "interior",
    }
}

fn stats(a: StatsArgs) -> Outcome {
    check_eps(a.eps)?;
    let net = load_network(&a.net)?;
    let weights = load_weights(&a.net, &net)?;
    let opts = CompressOptions {
        include_1x1: a.net.include_1x1,
    };
    let (_, report): (_, CompressionReport) = compress_network(&weights, &net, a.eps, &opts)?;
    let mut histogram = BTreeMap::new();
    let mut count = 0;
    for row in report.layers.iter().filter(|r| r.compressed) {
        let ranks = row.ranks.as_ref().expect("compressed rows carry ranks");
        let key = format!("tau{}/{}", row.shift.expect("shift"), r1_regime(ranks));
        *histogram.entry(key).or_insert(0) += 1;
        count += 1;
        if a.time {
            if let Some(t) = row.elapsed {
                eprintln!("{}: {:.1} ms", row.name, t.as_secs_f64() * 1e3);
            }
        }
    }
    let frequencies = histogram
        .iter()
        .map(|(k, &v)| (k.clone(), v as f64 / count.max(1) as f64))
        .collect();
    let out = StatsOutput {
        network: net.name.clone(),
        eps_p: a.eps,
        layers: count,
        histogram,
        frequencies,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        println!("{} at eps_p = {}: {} decomposed layers", out.network, out.eps_p, out.layers);
        for (k, v) in &out.histogram {
            println!("{k:<18} {v:>4}  {:.3}", out.frequencies[k]);
        }
    }
    Ok(())
}
