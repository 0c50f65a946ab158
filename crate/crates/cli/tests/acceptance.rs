//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured numbers (visible with `--nocapture`).
//!
//! Expected values marked "oracle" are computed inside the test from
//! first principles (closed-form arithmetic, analytic forward models,
//! paired simulations) rather than taken from the implementation under
//! test.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ndarray::Array2;

use plume_core::quantify::{
    self, AtmosphereParams, PlumeMask, PlumePolygon, QuantifyConfig, WindRecord,
};
use plume_core::retrieval::{
    convert_units, matched_filter, EnhancementMap, RetrievalMode, RetrievalOptions, TargetInput,
    Units, PPMM_TO_PPB,
};
use plume_core::rng::CounterRng;
use plume_core::sensor::{SensorName, SensorSpec, UeffCoeffs};
use plume_core::sim::{
    gaussian_blob_field, render_cube, round_trip, truth_mask, uniform_rect_field, BackgroundModel,
    PlumeField, RoundTripSettings, SimConfig, SlopeModel, TRUTH_MASK_FRACTION,
};
use plume_core::target::FineSlope;

fn pass(criterion: u32, detail: &str) {
    println!("acceptance {criterion:02} PASS: {detail}");
}

fn custom_sensor(bands: usize, smile_nm: f64) -> SensorSpec {
    SensorSpec {
        name: SensorName::Custom,
        gsd_m: 30.0,
        band_centers_nm: (0..bands)
            .map(|i| 2100.0 + 350.0 * (i as f64) / ((bands - 1) as f64))
            .collect(),
        fwhm_nm: vec![7.0; bands],
        snr_reference: 100.0,
        smile_shift_nm: smile_nm,
        ueff_coeffs: Some(UeffCoeffs {
            slope: 0.37,
            intercept: 0.70,
        }),
    }
}

fn flat_gaussian_bg(bands: usize, level: f64, var: f64) -> BackgroundModel {
    let covariance = (var > 0.0).then(|| {
        let mut cov = vec![vec![0.0; bands]; bands];
        for (i, row) in cov.iter_mut().enumerate() {
            row[i] = var;
        }
        cov
    });
    BackgroundModel::Gaussian {
        mean: vec![level; bands],
        covariance,
    }
}

fn band_target(spec: &SensorSpec, log_slope: &[f64]) -> plume_core::target::TargetSpectrum {
    plume_core::target::TargetSpectrum {
        band_centers_nm: spec.band_centers_nm.clone(),
        log_slope: log_slope.to_vec(),
        fit_r2: vec![1.0; spec.bands()],
        window_nm: (
            spec.band_centers_nm[0],
            *spec.band_centers_nm.last().unwrap(),
        ),
    }
}

fn map_std(map: &EnhancementMap) -> f64 {
    let n = (map.rows() * map.cols()) as f64;
    let mean = map.values.iter().sum::<f64>() / n;
    (map.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Criterion 1: on a noiseless small-signal scene the filter recovers the
/// truth within 2% per plume pixel and 0.5% on the plume mean, in under
/// 10 s for a 256×256×50 cube.
#[test]
fn acceptance_01_matched_filter_oracle() {
    let bands = 50;
    let spec = custom_sensor(bands, 0.0);
    let truth_ppmm = 500.0;
    let slope = vec![-1.0e-5; bands]; // |slope·ΔX| = 5e-3, small signal
    let field = uniform_rect_field((256, 256), (120, 120), (10, 10), truth_ppmm).unwrap();
    let config = SimConfig {
        sensor: spec.clone(),
        background: flat_gaussian_bg(bands, 1.0, 1.0e-8),
        snr: None,
        reference_radiance: 1.0,
        smile: false,
        striping_std_frac: 0.0,
        seed: 0,
    };
    let cube = render_cube(&field, &SlopeModel::Band { log_slope: slope.clone() }, &config).unwrap();

    let plume_pixels = truth_mask(&field, TRUTH_MASK_FRACTION);
    assert_eq!(plume_pixels.len(), 100);
    let target = band_target(&spec, &slope);
    let options = RetrievalOptions {
        delta: 0.0,
        exclusion: Some(plume_pixels.iter().cloned().collect()),
        ..Default::default()
    };
    let start = Instant::now();
    let map = matched_filter(&cube, TargetInput::Band(&target), &options).unwrap();
    let elapsed = start.elapsed();

    let mut worst = 0.0f64;
    let mut mean = 0.0f64;
    for &(r, c) in &plume_pixels {
        let rel = (map.values[(r, c)] - truth_ppmm) / truth_ppmm;
        worst = worst.max(rel.abs());
        mean += map.values[(r, c)];
    }
    mean /= plume_pixels.len() as f64;
    let mean_rel = (mean - truth_ppmm) / truth_ppmm;

    assert!(worst <= 0.02, "worst per-pixel error {worst}");
    assert!(mean_rel.abs() <= 0.005, "plume-mean error {mean_rel}");
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "retrieval took {elapsed:?} on a 256×256×50 cube"
    );
    pass(
        1,
        &format!(
            "per-pixel |err| max {:.4}% (≤2%), plume-mean {:.4}% (≤0.5%), runtime {:.2} s (<10 s)",
            100.0 * worst,
            100.0 * mean_rel,
            elapsed.as_secs_f64()
        ),
    );
}

fn noisy_test_cube(seed: u64) -> (SimConfig, SlopeModel, PlumeField) {
    let bands = 20;
    let spec = custom_sensor(bands, 0.0);
    let slope: Vec<f64> = (0..bands)
        .map(|b| -1.0e-5 * (0.6 + (b as f64) / bands as f64))
        .collect();
    let field = gaussian_blob_field((64, 64), (32.0, 32.0), (2.5, 2.5), 400.0).unwrap();
    let config = SimConfig {
        sensor: spec,
        background: flat_gaussian_bg(bands, 1.0, 1.0e-8),
        snr: Some(100.0),
        reference_radiance: 1.0,
        smile: false,
        striping_std_frac: 0.0,
        seed,
    };
    (config, SlopeModel::Band { log_slope: slope }, field)
}

/// Criterion 2: multiplying the cube by 7.3 changes no value beyond
/// relative 1e-10 (δ = 0). The comparison scale for near-zero pixels is
/// the map's own standard deviation.
#[test]
fn acceptance_02_radiometric_scale_invariance() {
    let (config, slope, field) = noisy_test_cube(2);
    let cube = render_cube(&field, &slope, &config).unwrap();
    let mut scaled = cube.clone();
    scaled.data.mapv_inplace(|v| v * 7.3);

    let target = band_target(&config.sensor, match &slope {
        SlopeModel::Band { log_slope } => log_slope,
        _ => unreachable!(),
    });
    let options = RetrievalOptions {
        delta: 0.0,
        ..Default::default()
    };
    let base = matched_filter(&cube, TargetInput::Band(&target), &options).unwrap();
    let scaled_map = matched_filter(&scaled, TargetInput::Band(&target), &options).unwrap();

    let sigma = map_std(&base);
    let mut worst = 0.0f64;
    for (a, b) in base.values.iter().zip(scaled_map.values.iter()) {
        let scale = a.abs().max(b.abs()).max(sigma);
        worst = worst.max((a - b).abs() / scale);
    }
    assert!(worst <= 1.0e-10, "worst relative change {worst}");
    pass(
        2,
        &format!("max relative ΔX change under ×7.3 = {worst:.3e} (≤1e-10)"),
    );
}

/// Criterion 3: the mean retrieved ΔX over the statistics pixels is zero
/// to within 1e-8 of the map's standard deviation (δ = 0).
#[test]
fn acceptance_03_zero_mean_identity() {
    let (config, slope, field) = noisy_test_cube(3);
    let cube = render_cube(&field, &slope, &config).unwrap();
    let target = band_target(&config.sensor, match &slope {
        SlopeModel::Band { log_slope } => log_slope,
        _ => unreachable!(),
    });
    let options = RetrievalOptions {
        delta: 0.0,
        ..Default::default()
    };
    let map = matched_filter(&cube, TargetInput::Band(&target), &options).unwrap();
    let n = (map.rows() * map.cols()) as f64;
    let mean = map.values.iter().sum::<f64>() / n;
    let sigma = map_std(&map);
    assert!(
        mean.abs() <= 1.0e-8 * sigma,
        "mean {mean} vs std {sigma}: ratio {}",
        mean.abs() / sigma
    );
    pass(
        3,
        &format!(
            "|mean ΔX| / std = {:.3e} (≤1e-8), over {} statistics pixels",
            mean.abs() / sigma,
            map.rows() * map.cols()
        ),
    );
}

/// Criterion 4: doubling the simulated SNR halves the background ΔX
/// standard deviation within 10%, over ≥10⁴ pixels (the paper's
/// EnMAP-vs-PRISMA noise anchor).
#[test]
fn acceptance_04_snr_noise_scaling() {
    let bands = 20;
    let spec = custom_sensor(bands, 0.0);
    let slope = vec![-1.0e-5; bands];
    let field = PlumeField {
        values: Array2::zeros((128, 128)),
        generator: serde_json::json!({"type": "zero"}),
    };
    let mut config = SimConfig {
        sensor: spec.clone(),
        background: flat_gaussian_bg(bands, 1.0, 0.0),
        snr: Some(100.0),
        reference_radiance: 1.0,
        smile: false,
        striping_std_frac: 0.0,
        seed: 4,
    };
    let target = band_target(&spec, &slope);
    let options = RetrievalOptions::default();

    let cube_low = render_cube(&field, &SlopeModel::Band { log_slope: slope.clone() }, &config).unwrap();
    config.snr = Some(200.0);
    let cube_high = render_cube(&field, &SlopeModel::Band { log_slope: slope }, &config).unwrap();

    let std_low = map_std(&matched_filter(&cube_low, TargetInput::Band(&target), &options).unwrap());
    let std_high = map_std(&matched_filter(&cube_high, TargetInput::Band(&target), &options).unwrap());
    let ratio = std_high / std_low;
    assert!(
        (0.45..=0.55).contains(&ratio),
        "std ratio {ratio} outside [0.45, 0.55]"
    );
    pass(
        4,
        &format!(
            "background ΔX std ratio at 2×SNR = {ratio:.4} (0.5 ± 10%), {} pixels",
            128 * 128
        ),
    );
}

/// Criterion 5: with a 2.8-nm linear smile ramp, column-wise retrieval
/// cuts the mean absolute background ΔX by at least 25% versus global
/// mode, on the standard fixture seed.
#[test]
fn acceptance_05_columnwise_smile_benefit() {
    let spec = SensorSpec::builtin(SensorName::Prisma).unwrap();
    assert_eq!(spec.smile_shift_nm, 2.8);
    let bands = spec.bands();

    // Textured background whose endmembers carry the atmosphere's own
    // methane absorption at different background columns: under smile
    // the features shift per column, and because each pixel mixes the
    // endmembers differently the induced deviation is not a low-rank
    // direction a global covariance can whiten away. Per-column
    // statistics see a constant shift and absorb it entirely.
    let absorption_bump = |wl: f64| {
        let a = (-0.5 * ((wl - 2300.0) / 60.0_f64).powi(2)).exp();
        let b = 0.4 * (-0.5 * ((wl - 2180.0) / 25.0_f64).powi(2)).exp();
        1.0e-5 * (a + b) + 5.0e-8
    };
    let airmass = 2.0;
    let endmembers: Vec<Vec<f64>> = [(20_000.0, 0.95), (40_000.0, 1.0), (60_000.0, 1.05)]
        .iter()
        .map(|(background_ch4_ppmm, level)| {
            spec.band_centers_nm
                .iter()
                .map(|wl| level * (-absorption_bump(*wl) * airmass * background_ch4_ppmm).exp())
                .collect()
        })
        .collect();
    let fine_wl: Vec<f64> = (0..881).map(|i| 2055.0 + 0.5 * i as f64).collect();
    let fine_slope: Vec<f64> = fine_wl
        .iter()
        .map(|wl| -absorption_bump(*wl) * airmass)
        .collect();
    let slope = SlopeModel::Fine {
        wavelengths_nm: fine_wl.clone(),
        log_slope: fine_slope.clone(),
    };
    // tall scene: per-column statistics need rows >> bands; the SNR is
    // high enough that the smile artifact, not the noise floor, sets the
    // global-mode background level
    let field = PlumeField {
        values: Array2::zeros((256, 96)),
        generator: serde_json::json!({"type": "zero"}),
    };
    let config = SimConfig {
        sensor: spec.clone(),
        background: BackgroundModel::Textured {
            endmembers,
            length_scale_px: 32.0,
        },
        snr: Some(2000.0),
        reference_radiance: 1.0,
        smile: true,
        striping_std_frac: 0.0,
        seed: 0,
    };
    let cube = render_cube(&field, &slope, &config).unwrap();

    let fine = FineSlope {
        wavelengths_nm: fine_wl,
        log_slope: fine_slope,
        fit_r2: vec![1.0; 881],
        valid: vec![true; 881],
    };
    let global = matched_filter(
        &cube,
        TargetInput::Fine(&fine),
        &RetrievalOptions {
            mode: RetrievalMode::Global,
            ..Default::default()
        },
    )
    .unwrap();
    let columnwise = matched_filter(
        &cube,
        TargetInput::Fine(&fine),
        &RetrievalOptions {
            mode: RetrievalMode::Columnwise,
            ..Default::default()
        },
    )
    .unwrap();

    let mean_abs = |map: &EnhancementMap| {
        map.values.iter().map(|v| v.abs()).sum::<f64>() / (map.rows() * map.cols()) as f64
    };
    let (g, c) = (mean_abs(&global), mean_abs(&columnwise));
    let reduction = 1.0 - c / g;
    assert!(
        reduction >= 0.25,
        "column-wise reduced mean |ΔX| by only {:.1}% (global {g:.3}, column-wise {c:.3})",
        100.0 * reduction
    );
    assert_eq!(bands, 47);
    pass(
        5,
        &format!(
            "mean |background ΔX|: global {g:.3} → column-wise {c:.3} ppm·m, reduction {:.1}% (≥25%)",
            100.0 * reduction
        ),
    );
}

/// Criterion 6: 1000 ppm·m converts to exactly 125.0 ppb.
#[test]
fn acceptance_06_unit_conversion_exact() {
    let map = EnhancementMap {
        values: Array2::from_elem((2, 2), 1000.0),
        units: Units::Ppmm,
        noise_estimate: vec![8.0, 8.0],
    };
    let ppb = convert_units(&map, Units::Ppb);
    for v in ppb.values.iter() {
        assert_eq!(*v, 125.0);
    }
    assert_eq!(PPMM_TO_PPB, 0.125);
    pass(6, "1000 ppm·m → 125.0 ppb exactly (factor 0.125)");
}

/// Criterion 7: the worked quantification fixture. Oracle values are
/// derived in-test from the chain formulas with the default constants.
/// Note: the exact chain gives Q = 3928.98 kg/h; a rounded-intermediate
/// reading places it at 3929.5. The derived value is asserted at the
/// stated ±0.5 kg/h tolerance.
#[test]
fn acceptance_07_quantification_chain() {
    // independent oracle arithmetic
    let k_oracle = (16.04 / 28.9644) * (101_325.0 / 9.806_65) * 900.0 * 1e-9;
    let ime_oracle = k_oracle * 200.0 * 100.0;
    let length_oracle = (100.0 * 900.0_f64).sqrt();
    let ueff_oracle = 0.37 * 6.7 + 0.70;
    let q_oracle = ime_oracle * ueff_oracle / length_oracle * 3600.0;

    let mut values = Array2::zeros((20, 20));
    for r in 0..10 {
        for c in 0..10 {
            values[(r, c)] = 200.0;
        }
    }
    let map = EnhancementMap {
        values,
        units: Units::Ppb,
        noise_estimate: vec![0.0; 20],
    };
    let poly = PlumePolygon::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap();
    let spec = SensorSpec::builtin(SensorName::Prisma).unwrap();
    let wind = WindRecord {
        u10_ms: 6.7,
        direction_deg: 90.0,
        source: "fixture".to_string(),
        timestamp: chrono::DateTime::UNIX_EPOCH,
    };
    let estimate = quantify::quantify_plume(
        &map,
        &poly,
        &spec,
        &wind,
        &AtmosphereParams::default(),
        &QuantifyConfig::default(),
    )
    .unwrap();

    assert!((estimate.ime_kg - 102.99).abs() <= 0.01, "IME {}", estimate.ime_kg);
    assert!((estimate.ime_kg - ime_oracle).abs() <= 1e-12 * ime_oracle);
    assert_eq!(estimate.plume_length_m, length_oracle);
    assert_eq!(estimate.plume_length_m, 300.0);
    assert!((estimate.u_eff_ms - 3.179).abs() <= 1e-12);
    assert!(
        (estimate.q_kg_per_h - q_oracle).abs() <= 0.5,
        "Q {} vs derived {}",
        estimate.q_kg_per_h,
        q_oracle
    );
    assert!(estimate.is_self_consistent());
    pass(
        7,
        &format!(
            "IME {:.5} kg (102.99±0.01), L {} m, U_eff {:.3} m/s, Q {:.4} kg/h (derived {:.4}±0.5; \
             3929.5 as printed reflects rounded intermediates)",
            estimate.ime_kg, estimate.plume_length_m, estimate.u_eff_ms,
            estimate.q_kg_per_h, q_oracle
        ),
    );
}

/// Criterion 8: the effective-wind table, exact to 1e-12.
#[test]
fn acceptance_08_effective_wind_table() {
    let cases = [
        (SensorName::Prisma, 6.7, 3.179),
        (SensorName::Enmap, 6.7, 3.169),
        (SensorName::Emit, 2.7, 1.885),
    ];
    for (name, u10, expected) in cases {
        let spec = SensorSpec::builtin(name).unwrap();
        let wind = WindRecord {
            u10_ms: u10,
            direction_deg: 0.0,
            source: "fixture".to_string(),
            timestamp: chrono::DateTime::UNIX_EPOCH,
        };
        let ueff = quantify::effective_wind(&spec, &wind, None).unwrap();
        assert!(
            (ueff - expected).abs() <= 1e-12,
            "{name}: {ueff} vs {expected}"
        );
    }
    pass(8, "U_eff(PRISMA,6.7)=3.179, U_eff(EnMAP,6.7)=3.169, U_eff(EMIT,2.7)=1.885, all to 1e-12");
}

/// Criterion 9: IME/flux linearity and mask monotonicity hold exactly on
/// 100 randomized fixtures (binary scale factors commute with rounding).
#[test]
fn acceptance_09_linearity_and_monotonicity_randomized() {
    let rng = CounterRng::new(9, 0);
    let mut draw = {
        let mut counter = 0u64;
        move || {
            counter += 1;
            rng.uniform(counter)
        }
    };
    for fixture in 0..100 {
        let rows = 4 + (draw() * 12.0) as usize;
        let cols = 4 + (draw() * 12.0) as usize;
        let mut values = Array2::zeros((rows, cols));
        for r in 0..rows {
            for c in 0..cols {
                values[(r, c)] = 600.0 * draw() - 200.0;
            }
        }
        let map = EnhancementMap {
            values,
            units: Units::Ppb,
            noise_estimate: vec![1.0; cols],
        };
        let n_mask = 2 + (draw() * ((rows * cols - 3) as f64)) as usize;
        let mut pixels = Vec::new();
        for i in 0..n_mask {
            pixels.push((i / cols, i % cols));
        }
        let mask = PlumeMask {
            pixels,
            pixel_area_m2: 900.0,
        };
        let k = 5.0e-3;
        let u_eff = 0.5 + 8.0 * draw();
        let exponent = ((draw() * 10.0) as i32) - 3;
        let scale = 2.0f64.powi(exponent);

        let ime = quantify::ime(&map, &mask, k).unwrap();
        let length = quantify::plume_length(&mask).unwrap();
        let q = quantify::flux(ime, u_eff, length).unwrap();

        // linearity in the map under a binary scale
        let scaled_map = EnhancementMap {
            values: map.values.mapv(|v| v * scale),
            units: Units::Ppb,
            noise_estimate: map.noise_estimate.clone(),
        };
        let ime_scaled = quantify::ime(&scaled_map, &mask, k).unwrap();
        assert_eq!(ime_scaled.to_bits(), (scale * ime).to_bits(), "fixture {fixture}");
        let q_scaled = quantify::flux(ime_scaled, u_eff, length).unwrap();
        assert_eq!(q_scaled.to_bits(), (scale * q).to_bits(), "fixture {fixture}");

        // linearity in U_eff
        let q_double = quantify::flux(ime, 2.0 * u_eff, length).unwrap();
        assert_eq!(q_double.to_bits(), (2.0 * q).to_bits(), "fixture {fixture}");

        // mask monotonicity: appending a zero-valued pixel
        let zero_pixel = (rows - 1, cols - 1);
        let mut grown_map = map.values.clone();
        grown_map[zero_pixel] = 0.0;
        let grown_map = EnhancementMap {
            values: grown_map,
            units: Units::Ppb,
            noise_estimate: map.noise_estimate.clone(),
        };
        let mut grown_pixels = mask.pixels.clone();
        grown_pixels.push(zero_pixel);
        let grown = PlumeMask {
            pixels: grown_pixels,
            pixel_area_m2: 900.0,
        };
        let ime_grown = quantify::ime(&grown_map, &grown, k).unwrap();
        let ime_base = quantify::ime(&grown_map, &mask, k).unwrap();
        assert_eq!(ime_grown.to_bits(), ime_base.to_bits(), "fixture {fixture}");
        let q_grown = quantify::flux(ime_grown, u_eff, quantify::plume_length(&grown).unwrap()).unwrap();
        let expected = quantify::flux(ime_base, u_eff, ((grown.n_pixels() as f64) * 900.0).sqrt()).unwrap();
        assert_eq!(q_grown.to_bits(), expected.to_bits(), "fixture {fixture}");
    }
    pass(9, "IME/Q linearity and zero-pixel mask monotonicity exact on 100 randomized fixtures");
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Criterion 10: the two case-study fixtures pair and compare as derived
/// from their printed values.
#[test]
fn acceptance_10_case_study_fixtures() {
    use plume_core::compare::{build_report, pair_acquisitions, read_records_jsonl};
    use plume_core::io::Provenance;

    let ba = read_records_jsonl(&fixtures_dir().join("records_buenos_aires.jsonl")).unwrap();
    let pairs = pair_acquisitions(&ba, 600.0);
    assert_eq!(pairs.len(), 1, "exactly one ≤600 s pair");
    assert_eq!(pairs[0].dt_s, 97.0);
    assert_eq!(
        (pairs[0].sensor_a.as_str(), pairs[0].sensor_b.as_str()),
        ("GHGSat", "EnMAP")
    );
    let rel_oracle = 2.0 * (20.637 - 18.55_f64).abs() / (20.637 + 18.55);
    assert!((pairs[0].rel_flux_diff - rel_oracle).abs() <= 1e-9);

    let kam = read_records_jsonl(&fixtures_dir().join("records_kamishlidza.jsonl")).unwrap();
    let report = build_report("kamishlidza-compressor", &kam, 3600.0, Provenance::new()).unwrap();
    let flux_of = |sensor: &str| {
        report
            .records
            .iter()
            .find(|r| r.sensor == sensor)
            .unwrap()
            .flux_value()
    };
    let (ghgsat, prisma, enmap) = (flux_of("GHGSat"), flux_of("PRISMA"), flux_of("EnMAP"));
    assert_eq!((ghgsat, prisma, enmap), (18.54, 12.29, 37.72));
    assert!(ghgsat < enmap && prisma < ghgsat, "PRISMA minimum, EnMAP maximum");
    let derived = 2.0 * (37.72 - 12.29_f64).abs() / (37.72 + 12.29);
    let pair = report
        .pairs
        .iter()
        .find(|p| p.sensor_a == "PRISMA" && p.sensor_b == "EnMAP")
        .unwrap();
    assert!((pair.rel_flux_diff - derived).abs() <= 1e-9);
    // symmetry is bitwise
    assert_eq!(
        plume_core::compare::relative_flux_difference(37.72, 12.29).to_bits(),
        plume_core::compare::relative_flux_difference(12.29, 37.72).to_bits()
    );
    pass(
        10,
        &format!(
            "Buenos Aires: one ≤600 s pair (Δt=97 s), rel diff {:.6}; Kamishlidza: PRISMA 12.29 < GHGSat 18.54 < EnMAP 37.72, PRISMA-EnMAP rel diff {:.6}",
            rel_oracle, derived
        ),
    );
}

/// Criterion 11: end-to-end IME round trip — noiseless within 3%, with
/// EnMAP-like noise within 10% averaged over 10 seeds.
#[test]
fn acceptance_11_end_to_end_round_trip() {
    let bands = 20;
    let spec = custom_sensor(bands, 0.0);
    let slope = SlopeModel::Band {
        log_slope: vec![-1.0e-5; bands],
    };
    let field = gaussian_blob_field((128, 128), (64.0, 64.0), (2.0, 2.0), 1000.0).unwrap();
    let settings = RoundTripSettings {
        exclude_truth_from_stats: true,
        ..Default::default()
    };

    // noiseless
    let config = SimConfig {
        sensor: spec.clone(),
        background: flat_gaussian_bg(bands, 1.0, 1.0e-8),
        snr: None,
        reference_radiance: 1.0,
        smile: false,
        striping_std_frac: 0.0,
        seed: 11,
    };
    let clean = round_trip(&field, &slope, &config, &settings).unwrap();
    assert!(
        clean.ime_rel_err.abs() <= 0.03,
        "noiseless IME error {}",
        clean.ime_rel_err
    );

    // EnMAP-like noise (SNR 200), averaged over 10 seeds
    let mut total_abs_err = 0.0;
    for seed in 0..10 {
        let config = SimConfig {
            sensor: spec.clone(),
            background: flat_gaussian_bg(bands, 1.0, 1.0e-8),
            snr: Some(200.0),
            reference_radiance: 1.0,
            smile: false,
            striping_std_frac: 0.0,
            seed,
        };
        let report = round_trip(&field, &slope, &config, &settings).unwrap();
        total_abs_err += report.ime_rel_err.abs();
    }
    let mean_abs_err = total_abs_err / 10.0;
    assert!(
        mean_abs_err <= 0.10,
        "noisy mean |IME error| {mean_abs_err}"
    );
    pass(
        11,
        &format!(
            "noiseless IME error {:.3}% (≤3%); EnMAP-like noise mean |error| {:.3}% over 10 seeds (≤10%)",
            100.0 * clean.ime_rel_err,
            100.0 * mean_abs_err
        ),
    );
}

fn run_cli(args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_plume"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "plume {args:?}: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

fn file_pair(path: &Path) -> (Vec<u8>, Vec<u8>) {
    (
        std::fs::read(path).unwrap(),
        std::fs::read(path.with_extension("bin")).unwrap_or_default(),
    )
}

/// Criterion 12: every command re-run with identical inputs and seed
/// produces byte-identical outputs at any --threads value.
#[test]
fn acceptance_12_cli_byte_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = fixtures_dir();
    let f = |name: &str| fixtures.join(name).to_str().unwrap().to_string();

    let mut outputs: Vec<Vec<(Vec<u8>, Vec<u8>)>> = Vec::new();
    for (run_idx, threads) in ["1", "4", "1"].iter().enumerate() {
        // identical file names in per-run directories, so embedded
        // companion names match and any byte difference is real
        let run_dir = dir.path().join(format!("run{run_idx}"));
        std::fs::create_dir(&run_dir).unwrap();
        let p = |name: &str| run_dir.join(name).to_str().unwrap().to_string();
        run_cli(&[
            "--threads", threads,
            "lut-build",
            "--cross-section", &f("ch4_cross_section.csv"),
            "--axes", &f("lut_axes.json"),
            "--out", &p("lut.json"),
        ]);
        run_cli(&[
            "--threads", threads,
            "simulate",
            "--scene", &f("sim_prisma.json"),
            "--seed", "0",
            "--out-cube", &p("cube.json"),
            "--out-truth", &p("truth.json"),
        ]);
        run_cli(&[
            "--threads", threads,
            "retrieve",
            "--cube", &p("cube.json"),
            "--lut", &p("lut.json"),
            "--scene-params", &f("scene_params.json"),
            "--mode", "columnwise",
            "--out", &p("map.json"),
        ]);
        run_cli(&[
            "--threads", threads,
            "quantify",
            "--map", &p("map.json"),
            "--polygon", &f("plume_polygon.json"),
            "--wind", &f("wind_buenos_aires.json"),
            "--out", &p("flux.json"),
        ]);
        run_cli(&[
            "--threads", threads,
            "compare",
            "--records", &f("records_buenos_aires.jsonl"),
            "--dt-max", "600",
            "--out", &p("compare.json"),
        ]);

        let files = vec![
            file_pair(&run_dir.join("lut.json")),
            file_pair(&run_dir.join("cube.json")),
            file_pair(&run_dir.join("truth.json")),
            file_pair(&run_dir.join("map.json")),
            file_pair(&run_dir.join("flux.json")),
            file_pair(&run_dir.join("compare.json")),
        ];
        outputs.push(files);
    }
    for run in 1..outputs.len() {
        for (i, (header, payload)) in outputs[run].iter().enumerate() {
            assert_eq!(
                &outputs[0][i].0, header,
                "header {i} differs between run 0 and run {run}"
            );
            assert_eq!(
                &outputs[0][i].1, payload,
                "payload {i} differs between run 0 and run {run}"
            );
        }
    }
    pass(
        12,
        "lut-build/simulate/retrieve/quantify/compare byte-identical across re-runs and --threads 1 vs 4",
    );
}
