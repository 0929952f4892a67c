//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p aure-core --test acceptance`.

use std::path::Path;
use std::time::Instant;

use aure_core::dataset::{generate_synthetic, parse_manifest, BinaryMask, SynthConfig};
use aure_core::embed::BackendSpec;
use aure_core::eval::{calibrate_threshold, compute_rates, AgeGroup, Counts, Protocol, ScoreSet, Threshold};
use aure_core::fuse::{SelectorConfig, SelectorMethod};
use aure_core::pipeline::{run_pipeline, PipelineConfig, ProtocolSelection, RunOutput};
use aure_core::preprocess::{align_and_crop, apply_mask, clahe_luma, estimate_orientation, ClaheParams};
use aure_core::project::{joint_probabilities, kl_divergence, kl_gradient, tsne_embed, TsneParams};
use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        name,
        pass,
        detail: detail.into(),
    }
}

fn reproducibility_statement() -> Outcome {
    outcome(
        "published-number reproducibility statement",
        true,
        "published IITD (TAR 97.89% at FAR 1.99%) and child-dataset figures are not reproducible at desk scale \
         (private and licensed data, trained heads out of scope); the property-based criteria below substitute",
    )
}

/// Random score set with ties; target is `num / 1000`.
fn random_score_set(rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>, u64) {
    let n = rng.random_range(2..=200);
    let p_genuine = rng.random_range(0.0..0.6);
    let grid = rng.random_bool(0.5);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(p_genuine)).collect();
    labels[0] = false;
    let d = (0..n)
        .map(|_| {
            if grid {
                rng.random_range(0..30u32) as f64 * 0.25
            } else {
                rng.random_range(0.0..10.0)
            }
        })
        .collect();
    let num = match rng.random_range(0..4) {
        0 => 20,
        1 => rng.random_range(0..=100),
        _ => rng.random_range(0..=1000),
    };
    (labels, d, num)
}

/// `fa / n <= num / 1000` in integers.
fn within_budget(fa: usize, n: usize, num: u64) -> bool {
    fa as u64 * 1000 <= num * n as u64
}

fn oracle_threshold(labels: &[bool], d: &[f64], num: u64) -> Option<f64> {
    let imp: Vec<f64> = labels.iter().zip(d).filter(|(g, _)| !**g).map(|(_, x)| *x).collect();
    let mut best: Option<f64> = None;
    for &v in &imp {
        let fa = imp.iter().filter(|&&x| x <= v).count();
        if within_budget(fa, imp.len(), num) && best.is_none_or(|b| v > b) {
            best = Some(v);
        }
    }
    best
}

fn oracle_counts(labels: &[bool], d: &[f64], tau: Option<f64>) -> Counts {
    let mut c = Counts::default();
    for (&g, &x) in labels.iter().zip(d) {
        let accepted = tau.is_some_and(|t| x <= t);
        match (g, accepted) {
            (true, true) => c.ta += 1,
            (true, false) => c.fr += 1,
            (false, true) => c.fa += 1,
            (false, false) => c.tr += 1,
        }
    }
    c
}

fn metrics_criteria() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240611);
    let sets: Vec<_> = (0..1000).map(|_| random_score_set(&mut rng)).collect();
    let start = Instant::now();
    let mut mismatches = 0;
    let mut not_maximal = 0;
    let mut reject_all = 0;
    for (labels, d, num) in &sets {
        let scores = ScoreSet::from_labeled(labels, d.clone()).expect("valid score set");
        let target = *num as f64 / 1000.0;
        let Ok(tau) = calibrate_threshold(&scores, target) else {
            mismatches += 1;
            continue;
        };
        let counts = compute_rates(&scores, tau);
        let expected_tau = oracle_threshold(labels, d, *num);
        let got_tau = match tau {
            Threshold::Accept(t) => Some(t),
            Threshold::RejectAll => {
                reject_all += 1;
                None
            }
        };
        if got_tau != expected_tau || counts != oracle_counts(labels, d, got_tau) {
            mismatches += 1;
        }
        if counts.tar() != (counts.genuine() > 0).then(|| counts.ta as f64 / (counts.ta + counts.fr) as f64) {
            mismatches += 1;
        }

        let imp: Vec<f64> = labels.iter().zip(d).filter(|(g, _)| !**g).map(|(_, x)| *x).collect();
        let fa_at = |t: f64| imp.iter().filter(|&&x| x <= t).count();
        let ok_here = got_tau.is_none_or(|t| within_budget(fa_at(t), imp.len(), *num));
        let next = imp
            .iter()
            .copied()
            .filter(|&x| got_tau.is_none_or(|t| x > t))
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.min(x))));
        let over_next = next.is_none_or(|t| !within_budget(fa_at(t), imp.len(), *num));
        if !(ok_here && over_next) {
            not_maximal += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    vec![
        outcome(
            "metrics oracle equivalence",
            mismatches == 0 && secs < 10.0,
            format!("1000 sets, {mismatches} mismatches vs brute-force oracle, {reject_all} reject-all, {secs:.3} s (limit 10 s)"),
        ),
        outcome(
            "threshold maximality",
            not_maximal == 0,
            format!("{not_maximal} of 1000 sets violate FAR(tau) <= target < FAR(next impostor distance)"),
        ),
    ]
}

fn clahe_reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = ClaheParams {
        clip_limit: 256.0,
        tiles_x: 1,
        tiles_y: 1,
    };
    let mut failing_images = 0;
    for i in 0..100 {
        let (lo, hi) = if i % 2 == 0 {
            (0u8, 255u8)
        } else {
            let a = rng.random_range(0..200u8);
            (a, a + rng.random_range(1..=55u8))
        };
        let img = GrayImage::from_fn(64, 64, |_, _| Luma([rng.random_range(lo..=hi)]));
        let out = clahe_luma(&img, &params).expect("clahe");
        let mut hist = [0u64; 256];
        img.pixels().for_each(|p| hist[p.0[0] as usize] += 1);
        let mut cdf = [0u64; 256];
        let mut acc = 0;
        for v in 0..256 {
            acc += hist[v];
            cdf[v] = acc;
        }
        let n = 64.0 * 64.0;
        let cdf_min = cdf[hist.iter().position(|&h| h > 0).expect("nonempty")] as f64;
        let mismatch = img.pixels().zip(out.pixels()).any(|(p, q)| {
            let expected = ((cdf[p.0[0] as usize] as f64 - cdf_min) * 255.0 / (n - cdf_min)).round() as u8;
            q.0[0] != expected
        });
        failing_images += mismatch as usize;
    }
    outcome(
        "CLAHE reduces to global equalization",
        failing_images == 0,
        format!("1x1 tiles, no clipping: {failing_images} of 100 random 64x64 images differ from the global formula"),
    )
}

fn alignment_residual() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..100 {
        let size = 180u32;
        let ratio = rng.random_range(2.0..4.0);
        let major = rng.random_range(35.0..70.0);
        let minor = major / ratio;
        let angle: f64 = rng.random_range(-89.0..89.0);
        let center = (90.0 + rng.random_range(-8.0..8.0), 90.0 + rng.random_range(-8.0..8.0));
        let (s, c) = angle.to_radians().sin_cos();
        let ellipse = i % 2 == 0;
        let mask = BinaryMask::from_fn(size, size, |x, y| {
            let (dx, dy) = (x as f64 + 0.5 - center.0, y as f64 + 0.5 - center.1);
            let (ex, ey) = (c * dx + s * dy, -s * dx + c * dy);
            if ellipse {
                (ex / minor).powi(2) + (ey / major).powi(2) <= 1.0
            } else {
                ex.abs() <= minor && ey.abs() <= major
            }
        });
        let tone = Rgb([rng.random_range(60..255u8), rng.random_range(60..255u8), rng.random_range(60..255u8)]);
        let masked = apply_mask(&RgbImage::from_pixel(size, size, tone), &mask).expect("mask");
        let est = estimate_orientation(&mask).expect("orientation");
        let aligned = align_and_crop(&masked, &est).expect("align");
        let again = BinaryMask::from_fn(aligned.width(), aligned.height(), |x, y| {
            aligned.get_pixel(x, y).0.iter().any(|&v| v > 0)
        });
        let residual = estimate_orientation(&again).expect("re-estimate").angle_deg.abs();
        worst = worst.max(residual);
        failures += (residual > 0.5) as usize;
    }
    outcome(
        "alignment residual",
        failures == 0,
        format!("100 elongated masks (ratio 2-4): worst residual {worst:.4} deg, {failures} above 0.5 deg"),
    )
}

fn three_clusters() -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 1.0).expect("sigma");
    let centers = [[0.0; 10], [20.0; 10], {
        let mut c = [0.0; 10];
        c.iter_mut().step_by(2).for_each(|v| *v = 20.0);
        c
    }];
    Array2::from_shape_fn((50, 10), |(i, j)| centers[i % 3][j] + noise.sample(&mut rng))
}

fn tsne_numerics() -> Outcome {
    let x = three_clusters();
    let params = TsneParams {
        seed: 7,
        ..TsneParams::default()
    };
    let resolved = params.resolve(50).expect("params");
    let (_, rows) = joint_probabilities(x.view(), resolved.perplexity).expect("P");
    let target = resolved.perplexity.log2();
    let mut unflagged_misses = 0;
    let mut flagged = 0;
    for row in &rows {
        let h: f64 = -row.probabilities.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>();
        if (h - target).abs() > 1e-5 {
            if row.converged {
                unflagged_misses += 1;
            } else {
                flagged += 1;
            }
        }
    }

    let small = array![[0.0, 0.0, 1.0], [1.0, 0.5, 0.0], [0.2, 2.0, 0.3], [3.0, 3.0, 1.0], [5.0, 1.0, 2.0]];
    let (p, _) = joint_probabilities(small.view(), 2.0).expect("P");
    let y = array![[0.1, -0.3], [0.7, 0.2], [-0.5, 0.4], [0.3, 0.9], [-0.8, -0.6]];
    let g = kl_gradient(p.view(), y.view());
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    for i in 0..5 {
        for c in 0..2 {
            let mut plus = y.clone();
            plus[[i, c]] += h;
            let mut minus = y.clone();
            minus[[i, c]] -= h;
            let fd = (kl_divergence(p.view(), plus.view()) - kl_divergence(p.view(), minus.view())) / (2.0 * h);
            let rel = (fd - g[[i, c]]).abs() / fd.abs().max(g[[i, c]].abs()).max(1e-12);
            worst_rel = worst_rel.max(rel);
        }
    }

    let a = tsne_embed(x.view(), &params).expect("tsne");
    let b = tsne_embed(x.view(), &params).expect("tsne");
    let kl_at = |it: usize| a.kl_trace.iter().find(|k| k.iteration == it).map(|k| k.kl);
    let (kl250, kl1000) = (kl_at(250).unwrap_or(f64::NAN), kl_at(1000).unwrap_or(f64::NAN));
    let (p_full, _) = joint_probabilities(x.view(), resolved.perplexity).expect("P");
    let direct = kl_divergence(p_full.view(), a.coordinates.view());
    let identical = a
        .coordinates
        .iter()
        .zip(b.coordinates.iter())
        .all(|(u, v)| u.to_bits() == v.to_bits());

    let pass = unflagged_misses == 0 && worst_rel < 1e-4 && kl1000 < kl250 && direct == kl1000 && identical;
    outcome(
        "t-SNE numerics",
        pass,
        format!(
            "entropy: {unflagged_misses} unflagged misses, {flagged} flagged of 50 rows; gradient worst rel err {worst_rel:.2e}; \
             KL(250) {kl250:.4} > KL(1000) {kl1000:.4} (direct {direct:.4}); bit-identical rerun {identical}"
        ),
    )
}

fn pipeline_config(dir: &Path, manifest: &Path) -> PipelineConfig {
    PipelineConfig {
        manifest: manifest.to_path_buf(),
        out_dir: dir.join("out"),
        backends: vec![BackendSpec::builtin()],
        selector: SelectorConfig {
            method: SelectorMethod::Fisher,
            ..SelectorConfig::default()
        },
        projection_enabled: false,
        target_far: 0.02,
        protocol: ProtocolSelection::default(),
        seed: 42,
        ..PipelineConfig::default()
    }
}

fn synth(dir: &Path, subjects: usize, collections: u32, samples: usize, drift: f64) -> std::path::PathBuf {
    let cfg = SynthConfig {
        n_subjects: subjects,
        n_collections: collections,
        samples_per_subject_per_collection: samples,
        drift_per_collection: drift,
        image_size: 256,
        seed: 42,
    };
    generate_synthetic(&cfg, dir).expect("synthetic data");
    dir.join("manifest.csv")
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let start = Instant::now();
    let manifest = synth(dir.path(), 20, 2, 2, 0.0);
    let out = match run_pipeline(&pipeline_config(dir.path(), &manifest)) {
        Ok(o) => o,
        Err(e) => return outcome("end-to-end synthetic verification", false, format!("pipeline error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let within: Vec<_> = out
        .report
        .experiments
        .iter()
        .filter(|e| matches!(e.protocol, Protocol::Within { .. }))
        .collect();
    let ok = !within.is_empty()
        && within
            .iter()
            .all(|e| e.tar.is_some_and(|t| t >= 0.95) && e.far.is_some_and(|f| f <= 0.02));
    let detail: Vec<String> = within
        .iter()
        .map(|e| format!("{} TAR {} FAR {}", e.protocol, pct(e.tar), pct(e.far)))
        .collect();
    outcome(
        "end-to-end synthetic verification",
        ok && secs < 60.0,
        format!("20 subjects x 4 images, builtin, fisher, bypass: {}; {secs:.1} s (limit 60 s)", detail.join(", ")),
    )
}

fn longitudinal_trend() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let manifest = synth(dir.path(), 20, 6, 2, 0.15);
    let out: RunOutput = match run_pipeline(&pipeline_config(dir.path(), &manifest)) {
        Ok(o) => o,
        Err(e) => return outcome("longitudinal trend", false, format!("pipeline error: {e}")),
    };
    let series = out.report.gap_series(1);
    let mut inversions = Vec::new();
    for w in series.windows(2) {
        let (a, b) = (w[0].1.unwrap_or(0.0), w[1].1.unwrap_or(0.0));
        if b > a {
            inversions.push(b - a);
        }
    }
    let complete = series.len() == 6 && series.iter().all(|s| s.1.is_some());
    let pass = complete && inversions.len() <= 1 && inversions.iter().all(|&d| d <= 0.02 + 1e-12);
    let text: Vec<String> = series.iter().map(|(g, t)| format!("{g}m {}", pct(*t))).collect();
    outcome(
        "longitudinal trend",
        pass,
        format!(
            "drift 0.15, 6 collections, TAR@FAR<=2% by gap: {}; {} inversion(s)",
            text.join(", "),
            inversions.len()
        ),
    )
}

fn age_split() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = synth(dir.path(), 12, 3, 2, 0.0);
    let mut manifest = parse_manifest(&path).expect("manifest");
    let idx = manifest
        .records
        .iter()
        .position(|r| r.session == 2)
        .expect("session 2 record");
    let subject = manifest.records[idx].subject_id.clone();
    for r in manifest.records.iter_mut().filter(|r| r.subject_id == subject) {
        r.age_years = Some(8.0 + 0.5 * (r.session as f64 - 2.0));
    }
    let key = manifest.records[idx].key();
    manifest.write_csv(&path).expect("rewrite manifest");

    let out = match run_pipeline(&pipeline_config(dir.path(), &path)) {
        Ok(o) => o,
        Err(e) => return outcome("age-split harness", false, format!("pipeline error: {e}")),
    };
    let groups = &out.report.per_age_group;
    let populated = |g: AgeGroup| groups.get(&g).is_some_and(|s| s.populated());
    let probe_groups: Vec<AgeGroup> = out
        .experiments
        .iter()
        .flat_map(|e| e.scores.trials().iter())
        .filter(|t| t.probe_key == key)
        .map(|t| t.age_group)
        .collect();
    let exact_le8 = !probe_groups.is_empty() && probe_groups.iter().all(|&g| g == AgeGroup::Le8);
    let per_exp = out
        .report
        .experiments
        .iter()
        .filter(|e| e.per_age_group.get(&AgeGroup::Le8).is_some_and(|s| s.populated())
            && e.per_age_group.get(&AgeGroup::Gt8).is_some_and(|s| s.populated()))
        .count();
    outcome(
        "age-split harness",
        populated(AgeGroup::Le8) && populated(AgeGroup::Gt8) && exact_le8,
        format!(
            "le8 {} / gt8 {} (pooled TAR {} / {}); {per_exp} experiments with both groups; \
             probe aged exactly 8.0 in {} trials, all le8: {exact_le8}",
            groups.get(&AgeGroup::Le8).map_or(0, |s| s.n_genuine + s.n_impostor),
            groups.get(&AgeGroup::Gt8).map_or(0, |s| s.n_genuine + s.n_impostor),
            pct(groups.get(&AgeGroup::Le8).and_then(|s| s.tar)),
            pct(groups.get(&AgeGroup::Gt8).and_then(|s| s.tar)),
            probe_groups.len()
        ),
    )
}

fn main() {
    let mut results = vec![reproducibility_statement()];
    results.extend(metrics_criteria());
    results.push(clahe_reduction());
    results.push(alignment_residual());
    results.push(tsne_numerics());
    results.push(end_to_end());
    results.push(longitudinal_trend());
    results.push(age_split());

    println!();
    for r in &results {
        println!("[{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("\nacceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
