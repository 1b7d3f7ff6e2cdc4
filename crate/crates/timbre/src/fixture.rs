//! Synthetic instrument corpus and dissimilarity ratings.
//!
//! Each class is a harmonic source with its own spectral tilt, odd/even
//! balance, formant and attack. Ratings are the scaled distances between
//! class parameter vectors plus per-subject noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use timbre_core::ratings::RatingRecord;
use timbre_core::{AudioBuffer, Rng};

use crate::error::{Error, Result};
use crate::io::{write_ratings, write_wav_pcm16};

const NAMES: [&str; 12] = [
    "clarinet",
    "flute",
    "oboe",
    "bassoon",
    "trumpet",
    "trombone",
    "horn",
    "tuba",
    "violin",
    "cello",
    "saxophone",
    "english_horn",
];

const NOTE_NAMES: [&str; 12] = ["c", "cs", "d", "ds", "e", "f", "fs", "g", "gs", "a", "as", "b"];

const DYNAMICS: [(&str, f64, f64); 3] = [("pp", 0.6, -0.15), ("mf", 0.75, 0.0), ("ff", 0.9, 0.15)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub duration_s: f64,
    pub subjects_per_study: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            classes: 12,
            samples_per_class: 20,
            seed: 0,
            sample_rate: 44100,
            duration_s: 1.0,
            subjects_per_study: 3,
        }
    }
}

/// Synthesis parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTimbre {
    pub name: String,
    /// Harmonic `h` has base amplitude `h^-slope`.
    pub slope: f64,
    pub even_gain: f64,
    pub formant_hz: f64,
    pub formant_width_hz: f64,
    pub formant_gain: f64,
    pub attack_ms: f64,
    pub decay_per_s: f64,
    /// RMS of the breath noise relative to the harmonic part.
    pub noise_mix: f64,
}

impl ClassTimbre {
    /// Spectral envelope shared by the harmonics and the noise.
    pub fn envelope(&self, f: f64, tilt: f64) -> f64 {
        let z = (f - self.formant_hz) / self.formant_width_hz;
        (f.max(50.0) / 100.0).powf(-self.slope + tilt) * (1.0 + self.formant_gain * (-0.5 * z * z).exp())
    }

    /// Normalized parameter vector used for the synthetic ratings.
    pub fn features(&self) -> [f64; 6] {
        [
            self.slope / 1.2,
            self.even_gain,
            (self.formant_hz / 300.0).log2() / 4.0,
            self.formant_gain / 3.0,
            self.attack_ms / 150.0,
            self.noise_mix / 2.0,
        ]
    }
}

pub fn class_name(i: usize) -> String {
    NAMES.get(i).map_or_else(|| format!("class_{:02}", i + 1), |s| s.to_string())
}

pub fn class_timbres(n: usize, rng: &mut Rng) -> Vec<ClassTimbre> {
    (0..n)
        .map(|i| ClassTimbre {
            name: class_name(i),
            slope: rng.uniform_range(0.0, 1.2),
            even_gain: rng.uniform_range(0.1, 1.0),
            formant_hz: 300.0 * 2f64.powf(rng.uniform_range(0.0, 4.0)),
            formant_width_hz: rng.uniform_range(300.0, 1500.0),
            formant_gain: rng.uniform_range(0.0, 3.0),
            attack_ms: rng.uniform_range(10.0, 150.0),
            decay_per_s: rng.uniform_range(0.2, 2.0),
            noise_mix: rng.uniform_range(0.5, 2.0),
        })
        .collect()
}

/// Gaussian noise coloured by the class envelope, unit RMS.
fn shaped_noise(t: &ClassTimbre, tilt: f64, n: usize, sr: f64, top: f64, rng: &mut Rng) -> Vec<f64> {
    let mut spec: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n.div_ceil(2) {
        let f = k as f64 * sr / n as f64;
        if f < top {
            let a = t.envelope(f, tilt);
            spec[k] = Complex64::new(a * rng.normal(), a * rng.normal());
            spec[n - k] = spec[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let rms = (spec.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64).sqrt();
    spec.iter().map(|c| if rms > 0.0 { c.re / rms } else { 0.0 }).collect()
}

/// One note: harmonics below 10.5 kHz with random phases plus breath noise
/// under the same envelope, linear attack, exponential decay and a 50 ms
/// release.
pub fn synth_note(t: &ClassTimbre, f0: f64, dynamic: (f64, f64), sr: f64, secs: f64, rng: &mut Rng) -> Vec<f64> {
    let (gain, tilt) = dynamic;
    let n = (secs * sr) as usize;
    let top = 10500f64.min(0.45 * sr);
    let partials: Vec<(f64, f64, f64)> = (1..)
        .map(|h| h as f64)
        .take_while(|h| h * f0 < top)
        .map(|h| {
            let f = h * f0;
            let parity = if h as usize % 2 == 0 { t.even_gain } else { 1.0 };
            (f, t.envelope(f, tilt) * parity, 2.0 * PI * rng.uniform())
        })
        .collect();
    let harmonic_rms = (0.5 * partials.iter().map(|p| p.1 * p.1).sum::<f64>()).sqrt();
    let noise = shaped_noise(t, tilt, n, sr, top, rng);
    let attack = t.attack_ms / 1000.0;
    let release = 0.05;
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let time = i as f64 / sr;
            let env = (time / attack).min(1.0)
                * (-t.decay_per_s * (time - attack).max(0.0)).exp()
                * ((secs - time) / release).clamp(0.0, 1.0);
            let s: f64 = partials.iter().map(|(f, a, ph)| a * (2.0 * PI * f * time + ph).sin()).sum();
            env * (s + t.noise_mix * harmonic_rms * noise[i])
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= gain / peak);
    }
    out
}

fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2f64.powf((m - 69.0) / 12.0)
}

fn note_name(midi: usize) -> String {
    format!("{}{}", NOTE_NAMES[midi % 12], midi / 12 - 1)
}

/// Pairwise feature distances scaled to [0, 1].
pub fn class_distances(timbres: &[ClassTimbre]) -> Vec<Vec<f64>> {
    let feats: Vec<[f64; 6]> = timbres.iter().map(ClassTimbre::features).collect();
    let n = feats.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            d[i][j] = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    let max = d.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    if max > 0.0 {
        d.iter_mut().flatten().for_each(|v| *v /= max);
    }
    d
}

/// Two studies: `s1` rates every pair on an integer 1–9 scale, `s2` rates
/// the adjacent pairs plus a random half of the rest on a continuous 0–1
/// scale.
pub fn synthetic_ratings(timbres: &[ClassTimbre], subjects: usize, rng: &mut Rng) -> Vec<RatingRecord> {
    let d = class_distances(timbres);
    let n = timbres.len();
    let mut out = Vec::new();
    let mut record = |study: &str, subject: usize, i: usize, j: usize, value: f64, lo: f64, hi: f64| {
        out.push(RatingRecord {
            study: study.into(),
            subject: format!("{study}_p{}", subject + 1),
            instrument_a: timbres[i].name.clone(),
            instrument_b: timbres[j].name.clone(),
            value,
            scale_min: lo,
            scale_max: hi,
        })
    };
    for s in 0..subjects {
        for i in 0..n {
            for j in i + 1..n {
                let v = (d[i][j] + 0.05 * rng.normal()).clamp(0.0, 1.0);
                record("s1", s, i, j, (1.0 + 8.0 * v).round(), 1.0, 9.0);
            }
        }
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || rng.uniform() < 0.5 {
                pairs.push((i, j));
            }
        }
    }
    for s in 0..subjects {
        for &(i, j) in &pairs {
            let v = (d[i][j] + 0.05 * rng.normal()).clamp(0.0, 1.0);
            record("s2", s, i, j, v, 0.0, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub corpus_dir: PathBuf,
    pub ratings: PathBuf,
    pub wav_count: usize,
    pub rated_pairs: usize,
    pub timbres: Vec<ClassTimbre>,
}

/// Write `<out>/corpus/<class>/<class>_<note>_<dyn>_<k>.wav`,
/// `<out>/ratings.csv` and `<out>/fixture.json`.
pub fn generate(config: &FixtureConfig, out: &Path) -> Result<FixtureSummary> {
    if config.classes < 3 {
        return Err(Error::Config(format!("fixture needs at least 3 classes, got {}", config.classes)));
    }
    // separate streams so changing m does not reshuffle the class design
    let timbres = class_timbres(config.classes, &mut Rng::with_stream(config.seed, 0));
    let corpus_dir = out.join("corpus");
    let sr = config.sample_rate as f64;
    let mut wav_count = 0;
    for (c, t) in timbres.iter().enumerate() {
        let dir = corpus_dir.join(&t.name);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        let mut rng = Rng::with_stream(config.seed, 100 + c as u64);
        for k in 0..config.samples_per_class {
            let midi = 45 + rng.below(3);
            let detune = rng.uniform_range(-0.25, 0.25);
            let (dyn_name, gain, tilt) = DYNAMICS[rng.below(DYNAMICS.len())];
            let samples = synth_note(t, midi_to_hz(midi as f64 + detune), (gain, tilt), sr, config.duration_s, &mut rng);
            let path = dir.join(format!("{}_{}_{}_{:03}.wav", t.name, note_name(midi), dyn_name, k));
            write_wav_pcm16(&path, &AudioBuffer::new(samples, sr)?)?;
            wav_count += 1;
        }
    }
    let records = synthetic_ratings(&timbres, config.subjects_per_study, &mut Rng::with_stream(config.seed, 1));
    let ratings = out.join("ratings.csv");
    write_ratings(&ratings, &records)?;
    let mut pairs: Vec<(&str, &str)> = records
        .iter()
        .map(|r| {
            let (a, b) = (r.instrument_a.as_str(), r.instrument_b.as_str());
            if a < b { (a, b) } else { (b, a) }
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let summary = FixtureSummary {
        corpus_dir,
        ratings,
        wav_count,
        rated_pairs: pairs.len(),
        timbres,
    };
    crate::io::write_json(&out.join("fixture.json"), &summary)?;
    Ok(summary)
}
