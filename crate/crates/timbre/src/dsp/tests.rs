use super::*;
use std::f64::consts::PI;
use timbre_core::spectral::scale_frequencies;
use timbre_core::{NsgtScale, Rng};

const SR: f64 = 22050.0;

fn tone(freq: f64, secs: f64) -> Vec<f64> {
    (0..(secs * SR) as usize)
        .map(|n| 0.5 * (2.0 * PI * freq * n as f64 / SR).sin())
        .collect()
}

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..len).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn all_specs() -> Vec<TransformSpec> {
    vec![
        TransformSpec::stft(),
        TransformSpec::dct(),
        TransformSpec::nsgt(NsgtScale::Cq { bins_per_octave: 48 }),
        TransformSpec::nsgt(NsgtScale::Mel { bins: 400 }),
        TransformSpec::nsgt(NsgtScale::Erb { bins: 400 }),
    ]
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::MIN), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

#[test]
fn stft_frame_matches_direct_dft() {
    let spec = TransformSpec::stft();
    let x = noise(4000, 1);
    let plan = FramedPlan::new(&spec, x.len()).unwrap();
    let sg = plan.stft(&x).unwrap();
    let n = 882;
    let w = hamming(n);
    let t = 5;
    let start = t * 221 - n / 2;
    for k in [0usize, 1, 17, 200, 441] {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += Complex64::from_polar(x[start + j] * w[j], -2.0 * PI * (k * j) as f64 / n as f64);
        }
        assert!((acc - sg.frames[t][k]).norm() < 1e-9, "bin {k}");
    }
}

#[test]
fn stft_tone_peaks_at_its_bin() {
    let x = tone(440.0, 1.0);
    let audio = AudioBuffer::new(x, SR).unwrap();
    let sg = stft_forward(&audio, &TransformSpec::stft()).unwrap();
    let mags = sg.magnitudes();
    // 440 Hz at 25 Hz per bin lies in bin 18 (17.6 rounds to 18)
    for f in &mags[3..mags.len() - 3] {
        assert_eq!(argmax(f), 18);
    }
}

#[test]
fn silent_input_gives_silent_coefficients() {
    for spec in all_specs() {
        let (_, sg) = analyze(&AudioBuffer::new(vec![0.0; 11025], SR).unwrap(), &spec).unwrap();
        assert!(sg.frames.iter().flatten().all(|c| c.norm() == 0.0), "{}", spec.name());
    }
}

#[test]
fn round_trips_on_noise() {
    for spec in all_specs() {
        let x = noise(11025, 7);
        let plan = TransformPlan::new(&spec, x.len()).unwrap();
        let y = plan.inverse(&plan.forward(&x).unwrap()).unwrap();
        let e = rel_err(&y, &x);
        assert!(e < 1e-10, "{}: {e}", spec.name());
    }
}

#[test]
fn transforms_are_linear() {
    for spec in all_specs() {
        let (x, y) = (noise(11025, 3), noise(11025, 4));
        let plan = TransformPlan::new(&spec, x.len()).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let (fx, fy, fm) = (plan.forward(&x).unwrap(), plan.forward(&y).unwrap(), plan.forward(&mix).unwrap());
        for t in 0..fm.frames.len() {
            for k in 0..fm.frames[t].len() {
                let want = fx.frames[t][k] * 2.0 - fy.frames[t][k] * 0.5;
                assert!((fm.frames[t][k] - want).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn inverse_needs_phase() {
    let spec = TransformSpec::stft();
    let audio = AudioBuffer::new(noise(2000, 1), SR).unwrap();
    let sg = stft_forward(&audio, &spec).unwrap().magnitude_only();
    assert_eq!(stft_inverse(&sg), Err(DspError::MissingPhase));
    let short = AudioBuffer::new(vec![0.0; 500], SR).unwrap();
    assert!(matches!(stft_forward(&short, &spec), Err(DspError::InputTooShort { .. })));
    assert!(matches!(dct_forward(&short, &TransformSpec::dct()), Err(DspError::InputTooShort { .. })));
}

#[test]
fn single_frame_inverse_is_a_local_grain() {
    let spec = TransformSpec::stft();
    let plan = FramedPlan::new(&spec, 5000).unwrap();
    let mut sg = plan.stft(&vec![0.0; 5000]).unwrap();
    sg.frames[10][30] = Complex64::new(1.0, 0.0);
    let y = plan.istft(&sg).unwrap();
    let centre = 10 * 221;
    for (i, v) in y.iter().enumerate() {
        if (i as isize - centre as isize).unsigned_abs() > 441 {
            assert_eq!(*v, 0.0);
        }
    }
    assert!(y.iter().any(|v| v.abs() > 0.0));
}

#[test]
fn dct_matches_direct_formula() {
    let x = noise(37, 11);
    let c = dct_ii(&x);
    let n = x.len() as f64;
    for (k, ck) in c.iter().enumerate() {
        let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        let direct: f64 = x
            .iter()
            .enumerate()
            .map(|(i, v)| v * (PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos())
            .sum::<f64>()
            * s;
        assert!((direct - ck).abs() < 1e-12);
    }
    let back = dct_iii(&c);
    assert!(rel_err(&back, &x) < 1e-12);
    let dc = dct_ii(&[0.7; 16]);
    assert!((dc[0] - 0.7 * 4.0).abs() < 1e-12);
    assert!(dc[1..].iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn cq_plan_has_409_bands_and_positive_frame_operator() {
    let spec = TransformSpec::nsgt(NsgtScale::Cq { bins_per_octave: 48 });
    let plan = nsgt_design(&spec, SR, 11025).unwrap();
    assert_eq!(plan.band_count(), 409 + 2);
    assert!(plan.frame_operator_diagonal().iter().all(|&s| s > 0.0));
    for scale in [NsgtScale::Mel { bins: 400 }, NsgtScale::Erb { bins: 400 }] {
        let plan = nsgt_design(&TransformSpec::nsgt(scale), SR, 11025).unwrap();
        assert_eq!(plan.band_count(), 402);
        let c = plan.band_centers();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn frame_operator_matches_explicit_computation() {
    // apply the analysis operator followed by plain (undualized) synthesis
    // to a unit impulse in each frequency bin
    let spec = TransformSpec::nsgt(NsgtScale::Erb { bins: 24 });
    let len = 512;
    let plan = nsgt_design(&spec, SR, len).unwrap();
    let diag = plan.frame_operator_diagonal().to_vec();
    let full = TransformPlan::Nsgt(plan.clone());
    for nu in [0usize, 3, 40, 255, 256] {
        let x: Vec<f64> = (0..len).map(|n| (2.0 * PI * (nu * n) as f64 / len as f64).cos()).collect();
        let sg = full.forward(&x).unwrap();
        // the coefficient energy of a pure cosine is Σ_k g_k(ν)² · |X(ν)|² / M
        let energy: f64 = sg.frames.iter().flatten().map(|c| c.norm_sqr()).sum();
        let amp = if nu == 0 || nu == len / 2 { len as f64 } else { len as f64 / 2.0 };
        let m = plan.frame_count() as f64;
        assert!((energy - diag[nu] * amp * amp / m).abs() < 1e-6 * energy.max(1.0), "bin {nu}");
    }
}

#[test]
fn nsgt_tone_peaks_at_nearest_centre() {
    for scale in [NsgtScale::Cq { bins_per_octave: 48 }, NsgtScale::Erb { bins: 400 }] {
        let spec = TransformSpec::nsgt(scale);
        let (plan, sg) = analyze(&AudioBuffer::new(tone(440.0, 1.0), SR).unwrap(), &spec).unwrap();
        let f = extract_frame(&plan, &sg, 500.0, None, "a").unwrap();
        let centres = scale_frequencies(&spec);
        let nearest = argmax(&centres.iter().map(|c| -(c - 440.0).abs()).collect::<Vec<_>>());
        assert_eq!(argmax(&f.magnitudes), nearest);
    }
}

#[test]
fn nsgt_plan_mismatch() {
    let plan = nsgt_design(&TransformSpec::nsgt(NsgtScale::Erb { bins: 400 }), SR, 11025).unwrap();
    let audio = AudioBuffer::new(vec![0.0; 11000], SR).unwrap();
    assert_eq!(
        nsgt_forward(&audio, &plan),
        Err(DspError::PlanMismatch { expected: 11025, got: 11000 })
    );
}

#[test]
fn frame_index_follows_hop() {
    let spec = TransformSpec::stft();
    let plan = TransformPlan::new(&spec, 22050).unwrap();
    assert_eq!(frame_index(&plan, 200.0).unwrap(), 20);
    assert_eq!(frame_index(&plan, 0.0).unwrap(), 0);
    assert!(matches!(frame_index(&plan, -1.0), Err(DspError::OutOfRange { .. })));
    assert!(matches!(frame_index(&plan, 1500.0), Err(DspError::OutOfRange { .. })));
}

#[test]
fn corpus_normalization_is_invertible() {
    let spec = TransformSpec::nsgt(NsgtScale::Mel { bins: 3 });
    let raw = [vec![1.0, 2.0, 4.0], vec![0.5, 0.0, 3.0]];
    let mut frames: Vec<SpectralFrame> = raw
        .iter()
        .map(|m| SpectralFrame::new(m.clone(), spec, None, "x").unwrap())
        .collect();
    let c = corpus_normalize(&mut frames).unwrap();
    assert_eq!(c, 4.0);
    assert_eq!(frames[0].magnitudes[1], 0.5);
    let max = frames.iter().flat_map(|f| f.magnitudes.iter().copied()).fold(0.0, f64::max);
    assert_eq!(max, 1.0);
    for (f, r) in frames.iter().zip(&raw) {
        assert_eq!(&denormalize(&f.magnitudes, c), r);
    }
    let mut zeros = vec![SpectralFrame::new(vec![0.0; 3], spec, None, "z").unwrap()];
    assert_eq!(corpus_normalize(&mut zeros), Err(DspError::DegenerateCorpus));
}

fn harmonic(f0: f64, secs: f64) -> Vec<f64> {
    let n = (secs * SR) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            (1..8).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.2
        })
        .collect()
}

#[test]
fn griffin_lim_is_monotone() {
    for spec in all_specs() {
        let x = harmonic(220.0, 0.5);
        let plan = TransformPlan::new(&spec, x.len()).unwrap();
        let target = plan.forward(&x).unwrap().magnitude_only();
        let out = griffin_lim(&target, &plan, &GriffinLimConfig { iterations: 30, ..Default::default() }).unwrap();
        for w in out.errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{}: {w:?}", spec.name());
        }
        assert!(out.errors[29] <= out.errors[0]);
    }
}

#[test]
fn griffin_lim_of_silence_is_silent() {
    let spec = TransformSpec::stft();
    let plan = TransformPlan::new(&spec, 4000).unwrap();
    let target = Spectrogram::from_magnitudes(&vec![vec![0.0; 442]; plan.frame_count()], spec, 4000);
    let out = griffin_lim(&target, &plan, &GriffinLimConfig::default()).unwrap();
    assert!(out.samples.iter().all(|&v| v == 0.0));
    assert!(out.errors.iter().all(|&e| e == 0.0));
}

#[test]
fn tiling_assigns_frames_by_time() {
    let spec = TransformSpec::stft();
    let frames = vec![vec![1.0; 442], vec![2.0; 442], vec![3.0; 442]];
    let (plan, sg) = tile_frames(&frames, &spec, 25.0).unwrap();
    assert_eq!(plan.signal_len(), 1654);
    let mags = sg.magnitudes();
    assert_eq!(mags[0][0], 1.0);
    assert_eq!(mags[3][0], 2.0);
    assert_eq!(mags.last().unwrap()[0], 3.0);

    let nspec = TransformSpec::nsgt(NsgtScale::Erb { bins: 400 });
    let (plan, sg) = tile_frames(&[vec![1.0; 400]], &nspec, 25.0).unwrap();
    let mags = sg.magnitudes();
    assert_eq!(mags[0].len(), 402);
    assert_eq!((mags[0][0], mags[0][1], mags[0][401]), (0.0, 1.0, 0.0));
    assert_eq!(mags.len(), plan.frame_count());
}

#[test]
fn resampler_preserves_low_tones() {
    let from = 44100;
    let x: Vec<f64> = (0..44100)
        .map(|n| (2.0 * PI * 440.0 * n as f64 / from as f64).sin())
        .collect();
    let y = resample(&x, from, 22050);
    assert_eq!(y.len(), 22050);
    let want: Vec<f64> = (0..22050).map(|n| (2.0 * PI * 440.0 * n as f64 / SR).sin()).collect();
    assert!(rel_err(&y[100..22000], &want[100..22000]) < 1e-3);

    let y = resample(&x[..48000.min(x.len())], 48000, 22050);
    assert_eq!(y.len(), (44100usize * 147).div_ceil(320));
    assert_eq!(resample(&x[..10], 22050, 22050), x[..10].to_vec());
}

#[test]
fn resampler_rejects_content_above_new_nyquist() {
    let x: Vec<f64> = (0..44100)
        .map(|n| (2.0 * PI * 15000.0 * n as f64 / 44100.0).sin())
        .collect();
    let y = resample(&x, 44100, 22050);
    let rms = (y[200..21800].iter().map(|v| v * v).sum::<f64>() / 21600.0).sqrt();
    assert!(rms < 1e-2, "{rms}");
}
