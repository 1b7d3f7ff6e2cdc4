use std::f64::consts::PI;

pub const RESAMPLER_TAPS: usize = 64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn blackman(x: f64) -> f64 {
    // x in [0, 1]
    0.42 - 0.5 * (2.0 * PI * x).cos() + 0.08 * (4.0 * PI * x).cos()
}

/// Rational-ratio polyphase resampler with a Blackman-windowed sinc kernel.
///
/// Output sample `n` sits at input position `n·down/up`; its phase
/// `(n·down) mod up` selects one of `up` precomputed 64-tap filters, each
/// normalized to unit DC gain.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    phases: Vec<[f64; RESAMPLER_TAPS]>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Self {
        let g = gcd(from_hz as u64, to_hz as u64).max(1);
        let up = (to_hz as u64 / g) as usize;
        let down = (from_hz as u64 / g) as usize;
        // cutoff relative to the input Nyquist, slightly below the output Nyquist
        let cutoff = 0.95 * (up as f64 / down as f64).min(1.0);
        let half = (RESAMPLER_TAPS / 2) as f64;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps = [0.0; RESAMPLER_TAPS];
                for (j, t) in taps.iter_mut().enumerate() {
                    // tap j reads input base + j - (TAPS/2 - 1)
                    let tau = frac - (j as f64 - (half - 1.0));
                    let x = cutoff * tau;
                    let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
                    let pos = (tau + half) / (2.0 * half);
                    *t = cutoff * sinc * blackman(pos.clamp(0.0, 1.0));
                }
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Self { up, down, phases }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return input.to_vec();
        }
        let offset = RESAMPLER_TAPS / 2 - 1;
        (0..self.output_len(input.len()))
            .map(|n| {
                let pos = n * self.down;
                let (base, phase) = (pos / self.up, pos % self.up);
                let taps = &self.phases[phase];
                let mut acc = 0.0;
                for (j, t) in taps.iter().enumerate() {
                    let idx = base as isize + j as isize - offset as isize;
                    if idx >= 0 && (idx as usize) < input.len() {
                        acc += t * input[idx as usize];
                    }
                }
                acc
            })
            .collect()
    }
}

pub fn resample(input: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    Resampler::new(from_hz, to_hz).process(input)
}
