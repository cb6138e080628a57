//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`; a FAIL also panics).

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

use utelocate::detection::{detect_electrodes, registered_positions, PipelineConfig};
use utelocate::evaluation::{detection_stats, paired_t_test, position_errors};
use utelocate::hough::{detect_spheres, HoughParams};
use utelocate::morphology::BinaryMask;
use utelocate::phantom::{generate_phantom, perturb_points, PhantomSpec};
use utelocate::registration::{
    fiducial_register, icp_register, umeyama, IcpOptions, SimilarityTransform,
};
use utelocate::template::default_template;
use utelocate::volume::{read_nifti, write_nifti, Dtype, Volume3D, WorldPoint};

fn verdict(criterion: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion}: {status} — {detail}");
    assert!(pass, "{criterion}: {detail}");
}

fn pe_map_with_failures(n: usize, failures: usize) -> BTreeMap<String, f64> {
    (0..n)
        .map(|i| {
            let pe = if i < failures { 25.0 } else { 1.0 };
            (format!("ch{i:02}"), pe)
        })
        .collect()
}

#[test]
fn criterion_1_accuracy_table_arithmetic() {
    let rows: [(usize, f64); 5] = [(9, 86.2), (4, 93.8), (2, 96.9), (7, 89.2), (8, 87.7)];
    let mut worst = 0.0f64;
    for (fn_count, expected_acc) in rows {
        let report = detection_stats(&pe_map_with_failures(65, fn_count), 10.0).unwrap();
        assert_eq!(report.fn_count, fn_count);
        assert_eq!(report.fp_count, fn_count);
        worst = worst.max((report.accuracy_pct - expected_acc).abs());
    }
    verdict(
        "1 (published accuracy table arithmetic)",
        worst <= 0.05,
        &format!("max |accuracy delta| = {worst:.3} points (tolerance 0.05)"),
    );
}

struct RunOutcome {
    accuracy_pct: f64,
    mean_pe_mm: f64,
    seconds: f64,
}

fn run_pipeline(spec: &PhantomSpec) -> RunOutcome {
    let tpl = default_template();
    let ph = generate_phantom(spec, &tpl).unwrap();
    let start = std::time::Instant::now();
    let set = detect_electrodes(&ph.t1, &ph.ute, &tpl, &PipelineConfig::default()).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    let pe = position_errors(&set.labeled_points(), &ph.truth).unwrap();
    let report = detection_stats(&pe, 10.0).unwrap();
    RunOutcome {
        accuracy_pct: report.accuracy_pct,
        mean_pe_mm: report.mean_pe_mm,
        seconds,
    }
}

#[test]
fn criterion_2_phantom_end_to_end() {
    let mut noiseless = PhantomSpec::default();
    noiseless.t1_noise_sigma = 0.0;
    noiseless.ute_noise_sigma = 0.0;
    let clean = run_pipeline(&noiseless);
    let clean_ok = clean.accuracy_pct == 100.0 && clean.mean_pe_mm <= 1.5;

    let mut worst_acc = 100.0f64;
    let mut worst_pe = 0.0f64;
    let mut worst_time = clean.seconds;
    for seed in 0..10u64 {
        let out = run_pipeline(&PhantomSpec {
            rng_seed: seed,
            ..PhantomSpec::default()
        });
        worst_acc = worst_acc.min(out.accuracy_pct);
        worst_pe = worst_pe.max(out.mean_pe_mm);
        worst_time = worst_time.max(out.seconds);
    }
    let noisy_ok = worst_acc >= 95.0 && worst_pe <= 2.0;
    verdict(
        "2 (phantom end-to-end)",
        clean_ok && noisy_ok && worst_time <= 60.0,
        &format!(
            "noiseless acc {:.1}% / mean PE {:.2} mm; 10 noisy seeds worst acc {:.1}% / worst mean PE {:.2} mm; slowest detect {:.1}s",
            clean.accuracy_pct, clean.mean_pe_mm, worst_acc, worst_pe, worst_time
        ),
    );
}

#[test]
fn criterion_3_method_comparison() {
    let tpl = default_template();
    let mut ute_means = Vec::with_capacity(20);
    let mut baseline_means = Vec::with_capacity(20);
    for i in 0..20u64 {
        let spec = PhantomSpec {
            rng_seed: 200 + i,
            ..PhantomSpec::default()
        };
        let ph = generate_phantom(&spec, &tpl).unwrap();

        let set = detect_electrodes(&ph.t1, &ph.ute, &tpl, &PipelineConfig::default()).unwrap();
        let pe = position_errors(&set.labeled_points(), &ph.truth).unwrap();
        ute_means.push(pe.values().sum::<f64>() / pe.len() as f64);

        let jittered = perturb_points(&ph.fiducials, 5.0, 1000 + i);
        let t = fiducial_register(&tpl, &jittered).unwrap();
        let baseline = registered_positions(&tpl, &t);
        let pe_b = position_errors(&baseline, &ph.truth).unwrap();
        baseline_means.push(pe_b.values().sum::<f64>() / pe_b.len() as f64);
    }
    let mean_ute = ute_means.iter().sum::<f64>() / 20.0;
    let mean_base = baseline_means.iter().sum::<f64>() / 20.0;
    let tt = paired_t_test(&ute_means, &baseline_means).unwrap();
    verdict(
        "3 (automatic vs fiducial baseline)",
        mean_ute < mean_base && tt.p_two_sided < 0.05,
        &format!(
            "mean PE {:.2} mm vs baseline {:.2} mm, t = {:.2}, p = {:.2e}",
            mean_ute, mean_base, tt.t, tt.p_two_sided
        ),
    );
}

#[test]
fn criterion_4_hough_oracle() {
    let dims = (48, 48, 48);
    let center = (24.0, 24.0, 24.0);
    let mut worst_center = 0.0f64;
    let mut worst_radius = 0.0f64;
    let mut worst_time = 0.0f64;
    for r in [4.0f64, 5.0, 6.0, 7.0, 8.0] {
        let mut data = vec![0.0f32; 48 * 48 * 48];
        for k in 0..48 {
            for j in 0..48 {
                for i in 0..48 {
                    let d2 = (i as f64 - center.0).powi(2)
                        + (j as f64 - center.1).powi(2)
                        + (k as f64 - center.2).powi(2);
                    if d2 <= r * r {
                        data[i + 48 * (j + 48 * k)] = 1000.0;
                    }
                }
            }
        }
        let vol = Volume3D::from_spacing(dims, (1.0, 1.0, 1.0), data, Dtype::F32).unwrap();
        let voi = BinaryMask::from_volume_geometry(&vol, vec![true; vol.len()]).unwrap();
        let start = std::time::Instant::now();
        let cands = detect_spheres(&vol, &voi, &HoughParams::default()).unwrap();
        worst_time = worst_time.max(start.elapsed().as_secs_f64());
        let top = &cands[0];
        let d = top
            .center
            .distance(WorldPoint::new(center.0, center.1, center.2));
        worst_center = worst_center.max(d);
        worst_radius = worst_radius.max((top.radius_mm - r).abs());
    }
    verdict(
        "4 (single-sphere Hough oracle, r = 4..8 mm)",
        worst_center <= 3.0f64.sqrt() && worst_radius <= 1.0 + 1e-9 && worst_time <= 5.0,
        &format!(
            "worst center error {worst_center:.2} mm (<= 1 voxel diagonal), worst radius error {worst_radius:.1} mm, slowest {worst_time:.1}s"
        ),
    );
}

#[test]
fn criterion_5_registration_suite() {
    let tpl = default_template();
    let src: Vec<Vector3<f64>> = tpl.channels().iter().map(|c| c.unit_pos).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(42);
    let normal = rand_distr::Normal::new(0.0f64, 1.0).unwrap();

    let mut icp_ok = 0usize;
    let mut monotone_ok = 0usize;
    const TRIALS: usize = 500;
    for _ in 0..TRIALS {
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
            normal.sample(&mut rng),
        ));
        let truth = SimilarityTransform {
            r: *q.to_rotation_matrix().matrix(),
            t: Vector3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            ),
            s: rng.random_range(80.0..120.0),
        };
        let candidates: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| {
                truth.apply_vec(*p)
                    + Vector3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    )
            })
            .collect();
        let res = icp_register(&src, &candidates, &IcpOptions::default()).unwrap();
        let rms = (src
            .iter()
            .map(|p| (res.transform.apply_vec(*p) - truth.apply_vec(*p)).norm_squared())
            .sum::<f64>()
            / src.len() as f64)
            .sqrt();
        if rms <= 2.0 {
            icp_ok += 1;
        }
        if res
            .residual_history
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9)
        {
            monotone_ok += 1;
        }
    }

    let mut umeyama_ok = 0usize;
    for _ in 0..100 {
        let dst: Vec<Vector3<f64>> = src
            .iter()
            .map(|p| {
                p * rng.random_range(50.0..150.0)
                    + Vector3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    ) * 5.0
            })
            .collect();
        let fit = umeyama(&src, &dst, true).unwrap();
        let res_fit: f64 = src
            .iter()
            .zip(&dst)
            .map(|(p, q)| (fit.apply_vec(*p) - q).norm_squared())
            .sum();
        let beaten = (0..100).all(|_| {
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            ));
            let rand_t = SimilarityTransform {
                r: *q.to_rotation_matrix().matrix(),
                t: Vector3::new(
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                ),
                s: rng.random_range(0.5..200.0),
            };
            let res_rand: f64 = src
                .iter()
                .zip(&dst)
                .map(|(p, q)| (rand_t.apply_vec(*p) - q).norm_squared())
                .sum();
            res_fit <= res_rand
        });
        if beaten {
            umeyama_ok += 1;
        }
    }

    verdict(
        "5 (registration suite, 500 random transforms)",
        icp_ok * 100 >= TRIALS * 98 && monotone_ok == TRIALS && umeyama_ok == 100,
        &format!(
            "ICP RMS <= 2 mm in {icp_ok}/{TRIALS}, residual history monotone in {monotone_ok}/{TRIALS}, umeyama beat the random-transform oracle in {umeyama_ok}/100"
        ),
    );
}

fn chain_outputs(seed: u64) -> (String, String, String) {
    let tpl = default_template();
    let spec = PhantomSpec {
        rng_seed: seed,
        ..PhantomSpec::default()
    };
    let ph = generate_phantom(&spec, &tpl).unwrap();
    let set = detect_electrodes(&ph.t1, &ph.ute, &tpl, &PipelineConfig::default()).unwrap();
    let pe = position_errors(&set.labeled_points(), &ph.truth).unwrap();
    let report = detection_stats(&pe, 10.0).unwrap();
    (
        set.to_csv(),
        set.to_json(),
        serde_json::to_string_pretty(&report).unwrap(),
    )
}

#[test]
fn criterion_6_determinism() {
    let pool_a = rayon::ThreadPoolBuilder::new()
        .num_threads(2)
        .build()
        .unwrap();
    let pool_b = rayon::ThreadPoolBuilder::new()
        .num_threads(7)
        .build()
        .unwrap();
    let a = pool_a.install(|| chain_outputs(3));
    let b = pool_b.install(|| chain_outputs(3));
    verdict(
        "6 (determinism across worker counts)",
        a == b,
        "phantom -> detect -> eval outputs byte-identical with 2 and 7 rayon workers",
    );
}

#[test]
fn criterion_7_t_test_oracle() {
    let a = [1.0, 2.0, 3.0];
    let b = [0.0, 0.0, 0.0];
    let tt = paired_t_test(&a, &b).unwrap();
    let quad = t_p_by_quadrature(tt.t, tt.df as f64);
    let t_ok = (tt.t - 3.4641).abs() <= 1e-4;
    let p_ok = (tt.p_two_sided - quad).abs() <= 1e-6;
    verdict(
        "7 (paired t-test oracle)",
        t_ok && p_ok,
        &format!(
            "t = {:.5} (expected 3.4641 ± 1e-4), p = {:.8} vs quadrature {:.8} (|delta| = {:.1e})",
            tt.t,
            tt.p_two_sided,
            quad,
            (tt.p_two_sided - quad).abs()
        ),
    );
}

/// Two-sided p by Simpson integration of the t density; independent of the
/// library's incomplete-beta implementation.
fn t_p_by_quadrature(t: f64, df: f64) -> f64 {
    let ln_norm = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let simpson = |f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize| {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let lo = t.abs();
    let m = lo + 50.0;
    let body = simpson(&density, lo, m, 200_000);
    let tail = simpson(
        &|u: f64| {
            if u == 0.0 {
                0.0
            } else {
                density(1.0 / u) / (u * u)
            }
        },
        0.0,
        1.0 / m,
        200_000,
    );
    2.0 * (body + tail)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos g = 7, n = 9
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

#[test]
fn criterion_8_nifti_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut ok = 0usize;
    const N: usize = 1000;
    for trial in 0..N {
        let dtype = match trial % 3 {
            0 => Dtype::U8,
            1 => Dtype::I16,
            _ => Dtype::F32,
        };
        let dims = (
            rng.random_range(2..8usize),
            rng.random_range(2..8usize),
            rng.random_range(2..8usize),
        );
        let n = dims.0 * dims.1 * dims.2;
        let data: Vec<f32> = (0..n)
            .map(|_| match dtype {
                Dtype::U8 => rng.random_range(0..=255u16) as f32,
                Dtype::I16 => rng.random_range(-32768..=32767i32) as f32,
                Dtype::F32 => f32::from_bits(loop {
                    let bits: u32 = rng.random();
                    let v = f32::from_bits(bits);
                    if v.is_finite() {
                        break bits;
                    }
                }),
            })
            .collect();
        // affine entries kept f32-representable (header stores f32)
        let mut affine = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                let v: f32 = (rng.random_range(-8.0f32..8.0) * 4.0).round() / 4.0;
                affine[(r, c)] = v as f64;
            }
            affine[(r, r)] += 10.0; // keep it invertible
        }
        let vol = Volume3D::new(dims, affine, data, dtype).unwrap();
        let path = dir.path().join(format!("v{trial}.nii"));
        write_nifti(&vol, &path).unwrap();
        let back = read_nifti(&path).unwrap();
        let bits_equal = vol
            .data()
            .iter()
            .zip(back.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let affine_equal = (0..4).all(|r| (0..4).all(|c| vol.affine()[(r, c)] == back.affine()[(r, c)]));
        if bits_equal && affine_equal && back.dims() == dims && back.dtype() == dtype {
            ok += 1;
        }
        std::fs::remove_file(&path).unwrap();
    }
    verdict(
        "8 (NIfTI round-trip)",
        ok == N,
        &format!("{ok}/{N} random volumes bit-exact across u8/i16/f32"),
    );
}
