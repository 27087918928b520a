//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Takes roughly a quarter of an hour on one core.
//!
//! Run alone with `cargo test -p cryocare --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cryocare::config::PipelineConfig;
use cryocare::mrc::{read_mrc, to_bytes};
use cryocare::workflow;
use cryocare_core::baselines::median_filter;
use cryocare_core::downstream::{connected_components, otsu_bin, BinaryMask, Connectivity};
use cryocare_core::metrics::{field_correlation, fsc, mse};
use cryocare_core::nn::{
    activation_pattern, backward, mse_loss, predict_whole, train, unet_forward, PairDataset, Tensor, TrainConfig,
    UNetConfig, UNetParams,
};
use cryocare_core::pairing::Scheme;
use cryocare_core::phantom::{make_phantom, project, PhantomSpec};
use cryocare_core::recon::{backproject, Tilt, TiltSeries};
use cryocare_core::{Rng, ScalarField};

/// 64^3 specimen with 110 blobs, +-60 degrees in 2 degree steps, 4 frames per tilt.
const SIMULATION: &str = r#"
schema_version = 1
seed = 1

[phantom]
blobs = 110
"#;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

// 1. Gradients

fn normal_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.normal()).collect()).unwrap()
}

fn gradient_check() -> Verdict {
    let t0 = Instant::now();
    let cfg = UNetConfig {
        spatial_dims: 2,
        depth: 2,
        kernel: 3,
        base_channels: 2,
    };
    // Random biases: with the zero-bias init a dead unit sits exactly on the
    // ReLU kink, where there is no derivative to check.
    let mut p = UNetParams::<f64>::init(&cfg, &Rng::new(41));
    let mut r = Rng::new(44);
    for v in p.data.iter_mut().filter(|v| **v == 0.0) {
        *v = 0.1 * r.normal();
    }
    let x = normal_tensor(&[1, 1, 16, 16], 42);
    let t = normal_tensor(&[1, 1, 16, 16], 43);
    let loss = |q: &UNetParams<f64>| mse_loss(&unet_forward(&x, q, &cfg).unwrap(), &t).unwrap().0;
    let (_, grad) = backward(&x, &t, &p, &cfg).unwrap();
    let mut worst = (0, 0.0f64);
    let mut q = p.clone();
    for i in 0..grad.len() {
        // shrink the step until both probes see the same ReLU and pooling pattern
        let mut h = 1e-3;
        let fd = loop {
            q.data[i] = p.data[i] + h;
            let (plus, pat_plus) = (loss(&q), activation_pattern(&x, &q, &cfg).unwrap());
            q.data[i] = p.data[i] - h;
            let (minus, pat_minus) = (loss(&q), activation_pattern(&x, &q, &cfg).unwrap());
            if pat_plus == pat_minus || h < 1e-7 {
                break (plus - minus) / (2.0 * h);
            }
            h /= 10.0;
        };
        q.data[i] = p.data[i];
        let rel = (grad[i] - fd).abs() / (grad[i].abs() + 1e-8);
        if rel > worst.1 {
            worst = (i, rel);
        }
    }
    let took = t0.elapsed();
    verdict(
        worst.1 < 1e-4 && took < Duration::from_secs(120),
        format!(
            "{} parameters, worst relative error {:.2e} (parameter {}), {}",
            grad.len(),
            worst.1,
            worst.0,
            secs(took)
        ),
    )
}

// 2. Noise2Noise on synthetic image pairs

fn phantom_slices(seed: u64, n: usize) -> Vec<ScalarField> {
    let p = make_phantom(&PhantomSpec {
        seed,
        ..PhantomSpec::default()
    })
    .unwrap();
    (0..n).map(|i| p.density.section(8 + i * 48 / n).unwrap()).collect()
}

fn corrupt(f: &ScalarField, sigma: f64, r: &mut Rng) -> ScalarField {
    ScalarField::new(
        f.shape().to_vec(),
        f.data().iter().map(|&v| v + (sigma * r.normal()) as f32).collect(),
    )
    .unwrap()
}

fn noise2noise_convergence() -> Verdict {
    let t0 = Instant::now();
    let mut r = Rng::new(7);
    let mut data = PairDataset::new();
    for s in 0..4 {
        for c in phantom_slices(100 + s, 50) {
            data.push_both(corrupt(&c, 0.5, &mut r), corrupt(&c, 0.5, &mut r)).unwrap();
        }
    }
    let epochs = 12;
    let (model, _) = train(
        &data,
        &UNetConfig::new_2d(8),
        &TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let (mut restored, mut noisy) = (0.0, 0.0);
    for c in phantom_slices(999, 20) {
        let n = corrupt(&c, 0.5, &mut r);
        restored += mse(&predict_whole(&n, &model).unwrap(), &c).unwrap();
        noisy += mse(&n, &c).unwrap();
    }
    let took = t0.elapsed();
    let ratio = restored / noisy;
    verdict(
        ratio <= 0.5 && took < Duration::from_secs(600),
        format!(
            "held-out MSE restored {:.4} vs noisy {:.4} (ratio {ratio:.3}) after {epochs} epochs, {}",
            restored / 20.0,
            noisy / 20.0,
            secs(took)
        ),
    )
}

// 3, 4, 7. End to end on one simulated acquisition

struct EndToEnd {
    wedge: Verdict,
    fsc: Verdict,
    detection: Verdict,
}

fn end_to_end() -> EndToEnd {
    let cfg = PipelineConfig::parse(SIMULATION).unwrap();
    cfg.validate().unwrap();
    let shape = cfg.phantom.shape;
    let t0 = Instant::now();
    let sim = workflow::simulate(&cfg).unwrap();
    let sim_time = t0.elapsed();

    let t = Instant::now();
    let halves = workflow::halves(&sim.movie, Scheme::T2tDf).unwrap();
    let (ta, tb) = workflow::half_maps(&halves, shape).unwrap();
    let (t2t_model, _) = workflow::train_tomogram_model(&ta, &tb, &cfg).unwrap();
    let t2t = workflow::restore_tomograms(&ta, &tb, &t2t_model, &cfg).unwrap();
    let t2t_time = t.elapsed();

    let t = Instant::now();
    let p2p_halves = workflow::halves(&sim.movie, Scheme::P2pDf).unwrap();
    let (p2p_model, _) = workflow::train_projection_model(&p2p_halves, &cfg).unwrap();
    let p2p = workflow::restore_projections(&p2p_halves, &p2p_model, shape, &cfg).unwrap();
    let p2p_time = t.elapsed();

    let raw = workflow::raw_tomogram(&sim.movie, shape).unwrap();
    let w_t2t = workflow::wedge_ratio(&t2t.mean, &cfg).unwrap();
    let w_p2p = workflow::wedge_ratio(&p2p.mean, &cfg).unwrap();
    let w_raw = workflow::wedge_ratio(&raw, &cfg).unwrap();
    let w_clean = workflow::wedge_ratio(&sim.phantom.density, &cfg).unwrap();
    let wedge_time = sim_time + t2t_time + p2p_time;
    let wedge = verdict(
        w_t2t < w_p2p && wedge_time < Duration::from_secs(1800),
        format!(
            "wedge_inconsistency T2T-df {w_t2t:.4} vs P2P-df {w_p2p:.4} (raw {w_raw:.4}, phantom {w_clean:.4}), {}",
            secs(wedge_time)
        ),
    );

    let [lo, hi] = cfg.metrics.fsc_band;
    let raw_fsc = workflow::fsc_curve(&ta, &tb, &cfg).unwrap();
    let res_fsc = workflow::fsc_curve(&t2t.a, &t2t.b, &cfg).unwrap();
    let in_band: Vec<usize> = (0..raw_fsc.len())
        .filter(|&i| raw_fsc.frequency[i] >= lo && raw_fsc.frequency[i] <= hi)
        .collect();
    let every_shell = in_band.iter().all(|&i| res_fsc.correlation[i] > raw_fsc.correlation[i]);
    let (m_raw, m_res) = (raw_fsc.band_mean(lo, hi).unwrap(), res_fsc.band_mean(lo, hi).unwrap());
    let fsc = verdict(
        !in_band.is_empty() && every_shell && m_res - m_raw >= 0.05,
        format!(
            "band [{lo}, {hi}] mean FSC raw {m_raw:.3} restored {m_res:.3}, higher in {} of {} shells",
            in_band
                .iter()
                .filter(|&&i| res_fsc.correlation[i] > raw_fsc.correlation[i])
                .count(),
            in_band.len()
        ),
    );

    let t = Instant::now();
    let labels = &sim.phantom.labels;
    let best_f1 = |v: &ScalarField| {
        let (seg, _) = workflow::segment(v, labels, &cfg).unwrap();
        workflow::detection_report(&seg, labels, &cfg).unwrap().best_f1()
    };
    let f1_raw = best_f1(&raw);
    let f1_t2t = best_f1(&t2t.mean);
    let det_time = sim_time + t2t_time + t.elapsed();
    let n_blobs = sim.phantom.blobs.len();
    let detection = verdict(
        n_blobs >= 50 && f1_t2t - f1_raw >= 0.05 && det_time < Duration::from_secs(1800),
        format!(
            "{n_blobs} blobs, best F1 raw {f1_raw:.3} T2T-restored {f1_t2t:.3}, {}",
            secs(det_time)
        ),
    );
    EndToEnd { wedge, fsc, detection }
}

// 5. FSC identities

fn fsc_identities() -> Verdict {
    let noise = |seed| {
        let mut r = Rng::new(seed);
        ScalarField::from_fn(&[32, 32, 32], |_| r.normal() as f32).unwrap()
    };
    let v = noise(1);
    let self_dev = fsc(&v, &v, 1.0)
        .unwrap()
        .correlation
        .iter()
        .map(|c| (c - 1.0).abs())
        .fold(0.0, f64::max);
    let indep = fsc(&noise(2), &noise(3), 1.0).unwrap();
    let outside = (0..indep.len())
        .filter(|&i| indep.correlation[i].abs() >= 3.0 / (indep.n_samples[i] as f64).sqrt())
        .count();
    let w = noise(4).zip_map(&v, |a, b| a + b).unwrap();
    let base = fsc(&v, &w, 1.0).unwrap();
    let scaled = fsc(&v.map(|x| 7.0 * x).unwrap(), &w.map(|x| 0.125 * x).unwrap(), 1.0).unwrap();
    let scale_dev = base
        .correlation
        .iter()
        .zip(&scaled.correlation)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    verdict(
        self_dev <= 1e-6 && outside == 0 && scale_dev <= 1e-6,
        format!(
            "|fsc(v,v) - 1| <= {self_dev:.1e}, {outside} of {} noise shells outside 3/sqrt(n), scale deviation {scale_dev:.1e}",
            indep.len()
        ),
    )
}

// 6. Reconstruction

fn projection_series(v: &ScalarField, angles: &[f64]) -> TiltSeries {
    let tilts = angles
        .iter()
        .enumerate()
        .map(|(i, &angle)| Tilt {
            angle,
            projection: project(v, angle).unwrap(),
            acquisition_index: i,
        })
        .collect();
    TiltSeries::new(tilts).unwrap()
}

fn reconstruction_oracle() -> Verdict {
    let n = 32;
    let c = (n as f64 - 1.0) / 2.0;
    let sphere = ScalarField::from_fn(&[n, n, n], |i| {
        let r2: f64 = i.iter().map(|&k| (k as f64 - c).powi(2)).sum();
        (r2 <= 64.0) as u8 as f32
    })
    .unwrap();
    let angles: Vec<f64> = (-89..=89).map(f64::from).collect();
    let rec = backproject(&projection_series(&sphere, &angles), [n, n, n], true).unwrap();
    let corr = field_correlation(&rec, &sphere).unwrap();

    // One untilted view of a point: unfiltered backprojection puts pi (the
    // 1/n_angles scale times pi) on the beam line through it and 0 elsewhere.
    let mut point = ScalarField::zeros(&[11, 11, 11]).unwrap();
    point
        .insert(&[2, 6, 3], &ScalarField::filled(&[1, 1, 1], 1.0).unwrap())
        .unwrap();
    let smear = backproject(&projection_series(&point, &[0.0]), [11, 11, 11], false).unwrap();
    let expect = ScalarField::from_fn(&[11, 11, 11], |i| {
        if i[1] == 6 && i[2] == 3 {
            std::f32::consts::PI
        } else {
            0.0
        }
    })
    .unwrap();
    verdict(
        corr >= 0.95 && smear == expect,
        format!(
            "full-range sphere correlation {corr:.4}, single-view smear {}",
            if smear == expect { "exact" } else { "wrong" }
        ),
    )
}

// 8. Exact oracles

fn median_oracle(f: &ScalarField, r: [usize; 3]) -> ScalarField {
    let [nz, ny, nx] = f.dims3();
    let c = |i: usize, d: isize, n: usize| (i as isize + d).clamp(0, n as isize - 1) as usize;
    let (rz, ry, rx) = (r[0] as isize, r[1] as isize, r[2] as isize);
    ScalarField::from_fn(f.shape(), |i| {
        let mut w = Vec::new();
        for dz in -rz..=rz {
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    w.push(f.get(&[c(i[0], dz, nz), c(i[1], dy, ny), c(i[2], dx, nx)]));
                }
            }
        }
        w.sort_by(f32::total_cmp);
        w[w.len() / 2]
    })
    .unwrap()
}

/// Last bin of the lower class, maximizing between-class variance compared
/// as exact fractions; ties go to the lower bin.
fn otsu_oracle(f: &ScalarField) -> usize {
    let (lo, hi) = f.min_max();
    let bins: Vec<u128> = f
        .data()
        .iter()
        .map(|&v| {
            let x = ((v as f64 - lo as f64) / (hi as f64 - lo as f64)) as f32;
            ((x as f64 * 256.0) as u128).min(255)
        })
        .collect();
    let n = bins.len() as u128;
    let s: u128 = bins.iter().sum();
    // variance ~ d^2 / (n0 n1) with d = |n s0 - n0 s|
    let mut best: Option<(usize, u128, u128)> = None;
    for t in 0..256u128 {
        let n0 = bins.iter().filter(|&&b| b <= t).count() as u128;
        let s0: u128 = bins.iter().filter(|&&b| b <= t).sum();
        let (num, den) = if n0 == 0 || n0 == n {
            (0, 1)
        } else {
            let d = (n * s0).abs_diff(n0 * s);
            (d * d, n0 * (n - n0))
        };
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((t as usize, num, den));
        }
    }
    best.unwrap().0
}

/// Component sizes by iterated minimum-label propagation, ordered by each
/// component's first voxel in raster order.
fn component_oracle(m: &BinaryMask, conn: Connectivity) -> Vec<usize> {
    let [nz, ny, nx] = m.shape;
    let mut label: Vec<usize> = (0..m.data.len()).map(|i| if m.data[i] { i } else { usize::MAX }).collect();
    let offsets = conn.offsets();
    loop {
        let mut changed = false;
        for i in 0..label.len() {
            if label[i] == usize::MAX {
                continue;
            }
            let (z, y, x) = ((i / (ny * nx)) as isize, ((i / nx) % ny) as isize, (i % nx) as isize);
            for d in &offsets {
                let (a, b, c) = (z + d[0], y + d[1], x + d[2]);
                if a < 0 || b < 0 || c < 0 || a >= nz as isize || b >= ny as isize || c >= nx as isize {
                    continue;
                }
                let j = (a as usize * ny + b as usize) * nx + c as usize;
                if label[j] < label[i] {
                    label[i] = label[j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut sizes = BTreeMap::new();
    for &l in label.iter().filter(|&&l| l != usize::MAX) {
        *sizes.entry(l).or_insert(0) += 1;
    }
    sizes.into_values().collect()
}

fn exact_oracles() -> Verdict {
    const N: usize = 100;
    let mut r = Rng::new(13);
    let mut fails = [0usize; 4];
    for _ in 0..N {
        let shape = [1 + r.below(7) as usize, 2 + r.below(9) as usize, 2 + r.below(9) as usize];
        // few distinct values so ties are common
        let f = ScalarField::from_fn(&shape, |_| r.below(6) as f32 - 2.5).unwrap();
        let radius = [r.below(3) as usize, r.below(3) as usize, r.below(3) as usize];
        if median_filter(&f, &radius).unwrap() != median_oracle(&f, radius) {
            fails[0] += 1;
        }

        let w = r.uniform();
        let img = ScalarField::from_fn(&[16, 16], |_| {
            if r.uniform() < w {
                (0.4 * r.normal()) as f32
            } else {
                (1.5 + r.normal()) as f32
            }
        })
        .unwrap();
        if otsu_bin(&img).unwrap() != otsu_oracle(&img) {
            fails[1] += 1;
        }

        let p = 0.15 + 0.3 * r.uniform();
        let m = BinaryMask::new([10, 10, 10], (0..1000).map(|_| r.uniform() < p).collect()).unwrap();
        for conn in [Connectivity::Faces6, Connectivity::Edges18, Connectivity::Corners26] {
            if connected_components(&m, conn).counts != component_oracle(&m, conn) {
                fails[2] += 1;
            }
        }

        let a = ScalarField::from_fn(&shape, |_| r.normal() as f32).unwrap();
        let b = ScalarField::from_fn(&shape, |_| (3.0 * r.normal()) as f32).unwrap();
        let mut sum = 0.0f64;
        for (x, y) in a.data().iter().zip(b.data()) {
            sum += (*x as f64 - *y as f64).powi(2);
        }
        if mse(&a, &b).unwrap() != sum / a.len() as f64 {
            fails[3] += 1;
        }
    }
    verdict(
        fails == [0; 4],
        format!(
            "{N} instances each; mismatches: median {}, otsu {}, components {} (of {}), mse {}",
            fails[0],
            fails[1],
            fails[2],
            3 * N,
            fails[3]
        ),
    )
}

// 9. Determinism through the binary

fn run_pipeline(dir: &Path, threads: &str, scheme: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cryocare"))
        .args(["--config", "demo", "--seed", "3", "--scheme", scheme, "--threads", threads, "--out-dir"])
        .arg(dir)
        .arg("pipeline")
        .env("CRYOCARE_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("mrc" | "csv")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect())
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for scheme in ["t2t-df", "p2p-df"] {
        let runs: Result<Vec<_>, String> = [("a", "1"), ("b", "2"), ("c", "1")]
            .iter()
            .map(|(name, threads)| run_pipeline(&root.path().join(format!("{scheme}-{name}")), threads, scheme))
            .collect();
        match runs {
            Err(e) => {
                ok = false;
                notes.push(format!("{scheme}: run failed: {e}"));
            }
            Ok(runs) => {
                let differing: Vec<&String> = runs[0]
                    .iter()
                    .filter(|(k, v)| runs[1].get(*k) != Some(v) || runs[2].get(*k) != Some(v))
                    .map(|(k, _)| k)
                    .collect();
                let same_set = runs[0].len() == runs[1].len() && runs[0].len() == runs[2].len();
                ok &= differing.is_empty() && same_set && !runs[0].is_empty();
                notes.push(format!(
                    "{scheme}: {} MRC/CSV files, {} differ",
                    runs[0].len(),
                    differing.len()
                ));
            }
        }
    }
    verdict(ok, format!("--threads 1, 2 and a rerun; {}", notes.join("; ")))
}

// 10. MRC

fn mrc_round_trip() -> Verdict {
    let mut r = Rng::new(17);
    let mut bad = 0;
    for _ in 0..100 {
        let shape = [1 + r.below(12) as usize, 1 + r.below(12) as usize, 1 + r.below(12) as usize];
        let f = ScalarField::from_fn(&shape, |_| (r.normal() * 10f64.powi(r.below(20) as i32 - 10)) as f32).unwrap();
        let back = read_mrc(&to_bytes(&f).unwrap()).unwrap();
        let exact = back.shape() == f.shape() && back.data().iter().zip(f.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        bad += !exact as usize;
    }
    let len = to_bytes(&ScalarField::filled(&[1, 1, 1], 1.0).unwrap()).unwrap().len();
    verdict(
        bad == 0 && len == 1028,
        format!("100 random volumes, {bad} not bit-exact; 1x1x1 file is {len} bytes"),
    )
}

fn main() {
    let t0 = Instant::now();
    let mut results: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |n: u32, name: &'static str, v: Verdict| {
        println!("{} [{n}] {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((n, name, v));
    };
    report(1, "gradient correctness", gradient_check());
    report(5, "FSC identities", fsc_identities());
    report(6, "reconstruction oracle", reconstruction_oracle());
    report(8, "exact oracles", exact_oracles());
    report(10, "MRC round trip", mrc_round_trip());
    report(9, "determinism", determinism());
    report(2, "Noise2Noise convergence", noise2noise_convergence());
    let e = end_to_end();
    report(3, "T2T vs P2P wedge artifacts", e.wedge);
    report(4, "FSC improvement", e.fsc);
    report(7, "downstream detection", e.detection);
    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass in {}",
        results.len() - failed.len(),
        results.len(),
        secs(t0.elapsed())
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
