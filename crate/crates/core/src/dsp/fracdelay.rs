//! Windowed-sinc fractional delay.

/// Number of interpolation taps.
pub const TAPS: usize = 32;
const HALF: f64 = (TAPS / 2) as f64;

/// A fixed delay of `integer + fraction` samples, `fraction` in `[0, 1)`.
///
/// The interpolator uses taps `k = -15..=16` around the integer part and is
/// normalized to unit DC gain. A delay with zero fractional part is an exact
/// integer shift.
#[derive(Debug, Clone)]
pub struct FractionalDelay {
    integer: isize,
    taps: Option<[f64; TAPS]>,
}

fn blackman(u: f64) -> f64 {
    if u.abs() >= HALF {
        return 0.0;
    }
    let x = std::f64::consts::PI * u / HALF;
    0.42 + 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

impl FractionalDelay {
    pub fn new(delay_samples: f64) -> Self {
        let integer = delay_samples.floor();
        let frac = delay_samples - integer;
        let taps = if frac == 0.0 {
            None
        } else {
            let mut h = [0.0; TAPS];
            for (i, tap) in h.iter_mut().enumerate() {
                let k = i as f64 - (HALF - 1.0);
                let u = k - frac;
                *tap = sinc(u) * blackman(u);
            }
            let sum: f64 = h.iter().sum();
            for tap in &mut h {
                *tap /= sum;
            }
            Some(h)
        };
        Self {
            integer: integer as isize,
            taps,
        }
    }

    pub fn delay(&self) -> (isize, bool) {
        (self.integer, self.taps.is_some())
    }

    /// Adds `gain * input` delayed by this filter into `out`. Samples outside
    /// `input` are treated as zero; `out` may have any length.
    pub fn accumulate(&self, input: &[f64], gain: f64, out: &mut [f64]) {
        match &self.taps {
            None => shift_add(input, self.integer, gain, out),
            Some(h) => {
                for (i, &tap) in h.iter().enumerate() {
                    let k = i as isize - (TAPS as isize / 2 - 1);
                    shift_add(input, self.integer + k, gain * tap, out);
                }
            }
        }
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; input.len()];
        self.accumulate(input, 1.0, &mut out);
        out
    }
}

/// `out[n] += gain * input[n - shift]` wherever both indices are valid.
fn shift_add(input: &[f64], shift: isize, gain: f64, out: &mut [f64]) {
    let n_out = out.len() as isize;
    let n_in = input.len() as isize;
    let start = shift.max(0);
    let end = (n_in + shift).min(n_out);
    if start >= end {
        return;
    }
    let src = &input[(start - shift) as usize..(end - shift) as usize];
    let dst = &mut out[start as usize..end as usize];
    for (d, s) in dst.iter_mut().zip(src) {
        *d += gain * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_delay_is_exact() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = FractionalDelay::new(2.0).apply(&x);
        assert_eq!(&y[2..], &x[..8]);
        assert_eq!(&y[..2], &[0.0, 0.0]);
        let y = FractionalDelay::new(-3.0).apply(&x);
        assert_eq!(&y[..7], &x[3..]);
    }

    #[test]
    fn dc_gain_is_unity() {
        let x = vec![1.0; 200];
        let y = FractionalDelay::new(1.37).apply(&x);
        for v in &y[40..160] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn half_sample_delay_of_a_sine() {
        let f = 0.05;
        let x: Vec<f64> = (0..400).map(|n| (2.0 * std::f64::consts::PI * f * n as f64).sin()).collect();
        let d = -1.5;
        let y = FractionalDelay::new(d).apply(&x);
        for n in 50..350 {
            let want = (2.0 * std::f64::consts::PI * f * (n as f64 - d)).sin();
            assert!((y[n] - want).abs() < 1e-4, "n={n} {} {}", y[n], want);
        }
    }
}
