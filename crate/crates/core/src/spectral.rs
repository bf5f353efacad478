//! Real-input Fourier transforms along the time axis of a `T×F` matrix.
//!
//! Convention: unnormalized forward transform `X[j] = Σ_t x[t]·e^{−2πi·jt/T}`
//! keeping the `c = ⌊T/2⌋+1` non-redundant bins, and a `1/T` inverse that
//! rebuilds the conjugate-symmetric half. Any `T ≥ 2` is supported; the
//! planner picks radix or Bluestein/Rader kernels by length.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Number of retained bins for a real signal of length `t`.
pub fn num_bins(t: usize) -> usize {
    t / 2 + 1
}

/// Spectrum of a real `T×F` matrix: `c×F` real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    re: Tensor,
    im: Tensor,
    origin_length: usize,
}

impl ComplexSpectrum {
    pub fn new(re: Tensor, im: Tensor, origin_length: usize) -> Result<Self> {
        let (c, f) = re.dims2()?;
        if im.shape() != re.shape() {
            return Err(Error::Contract(format!(
                "real part {:?} and imaginary part {:?} differ in shape",
                re.shape(),
                im.shape()
            )));
        }
        if origin_length < 1 || c != num_bins(origin_length) {
            return Err(Error::Contract(format!(
                "{c} bins (x{f}) cannot come from a length-{origin_length} signal"
            )));
        }
        Ok(ComplexSpectrum {
            re,
            im,
            origin_length,
        })
    }

    pub fn re(&self) -> &Tensor {
        &self.re
    }

    pub fn im(&self) -> &Tensor {
        &self.im
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn num_bins(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn num_features(&self) -> usize {
        self.re.shape()[1]
    }

    pub fn bin(&self, j: usize, f: usize) -> Complex64 {
        Complex64::new(self.re.at2(j, f), self.im.at2(j, f))
    }
}

/// Polar form of a spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct AmpPhase {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

/// Modulus of `re + i·im`.
pub fn modulus(re: f64, im: f64) -> f64 {
    re.hypot(im)
}

/// Argument of `re + i·im` in `(−π, π]`; zero for the zero bin.
pub fn argument(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let a = im.atan2(re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn rfft(x: &Tensor) -> Result<ComplexSpectrum> {
    let (t, f) = x.dims2()?;
    if t < 2 {
        return Err(Error::Parameter(format!(
            "rfft needs at least 2 time steps, got {t}"
        )));
    }
    let (re, im) = rfft_raw(x.data(), t, f);
    let c = num_bins(t);
    ComplexSpectrum::new(
        Tensor::from_parts(vec![c, f], re),
        Tensor::from_parts(vec![c, f], im),
        t,
    )
}

pub fn irfft(s: &ComplexSpectrum) -> Result<Tensor> {
    let t = s.origin_length;
    let (c, f) = s.re.dims2()?;
    if c != num_bins(t) {
        return Err(Error::Contract(format!(
            "{c} bins do not match origin length {t}"
        )));
    }
    Ok(Tensor::from_parts(
        vec![t, f],
        irfft_raw(s.re.data(), s.im.data(), t, f),
    ))
}

pub fn amp_phase(s: &ComplexSpectrum) -> AmpPhase {
    let shape = s.re.shape().to_vec();
    let (re, im) = (s.re.data(), s.im.data());
    AmpPhase {
        amplitude: Tensor::from_fn(shape.clone(), |i| modulus(re[i], im[i])),
        phase: Tensor::from_fn(shape, |i| argument(re[i], im[i])),
    }
}

/// Direct `O(T²)` evaluation of the forward transform, same convention as
/// [`rfft`]. Used as the reference in tests.
pub fn naive_dft(x: &Tensor) -> Result<ComplexSpectrum> {
    let (t, f) = x.dims2()?;
    let c = num_bins(t);
    let mut re = vec![0.0; c * f];
    let mut im = vec![0.0; c * f];
    for j in 0..c {
        for tt in 0..t {
            // reduce jt mod T before scaling to keep the angle small
            let theta = -2.0 * PI * ((j * tt) % t) as f64 / t as f64;
            let (sin, cos) = theta.sin_cos();
            for col in 0..f {
                let v = x.data()[tt * f + col];
                re[j * f + col] += v * cos;
                im[j * f + col] += v * sin;
            }
        }
    }
    ComplexSpectrum::new(
        Tensor::from_parts(vec![c, f], re),
        Tensor::from_parts(vec![c, f], im),
        t,
    )
}

/// Direct `O(T²)` inverse with the same conjugate-symmetric extension as [`irfft`].
pub fn naive_idft(s: &ComplexSpectrum) -> Tensor {
    let t = s.origin_length;
    let (c, f) = (s.num_bins(), s.num_features());
    let mut out = vec![0.0; t * f];
    for tt in 0..t {
        for j in 0..c {
            let paired = j != 0 && !(t % 2 == 0 && j == t / 2);
            let theta = 2.0 * PI * ((j * tt) % t) as f64 / t as f64;
            let (sin, cos) = theta.sin_cos();
            for col in 0..f {
                let z = s.bin(j, col);
                let term = if paired {
                    2.0 * (z.re * cos - z.im * sin)
                } else {
                    z.re * cos
                };
                out[tt * f + col] += term / t as f64;
            }
        }
    }
    Tensor::from_parts(vec![t, f], out)
}

pub(crate) fn rfft_raw(x: &[f64], t: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let c = num_bins(t);
    let fft = plan(t, false);
    let mut re = vec![0.0; c * f];
    let mut im = vec![0.0; c * f];
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for col in 0..f {
        for (tt, z) in buf.iter_mut().enumerate() {
            *z = Complex64::new(x[tt * f + col], 0.0);
        }
        fft.process(&mut buf);
        for j in 0..c {
            re[j * f + col] = buf[j].re;
            im[j * f + col] = buf[j].im;
        }
        // exact zeros where real input forces them
        im[col] = 0.0;
        if t % 2 == 0 {
            im[(c - 1) * f + col] = 0.0;
        }
    }
    (re, im)
}

pub(crate) fn irfft_raw(re: &[f64], im: &[f64], t: usize, f: usize) -> Vec<f64> {
    let c = num_bins(t);
    let ifft = plan(t, true);
    let mut out = vec![0.0; t * f];
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    let scale = 1.0 / t as f64;
    for col in 0..f {
        buf[0] = Complex64::new(re[col], 0.0);
        for j in 1..c {
            let z = Complex64::new(re[j * f + col], im[j * f + col]);
            if t % 2 == 0 && j == t / 2 {
                buf[j] = Complex64::new(z.re, 0.0);
            } else {
                buf[j] = z;
                buf[t - j] = z.conj();
            }
        }
        ifft.process(&mut buf);
        for tt in 0..t {
            out[tt * f + col] = buf[tt].re * scale;
        }
    }
    out
}

/// Vector-Jacobian product of [`rfft_raw`].
pub(crate) fn rfft_vjp(g_re: &[f64], g_im: &[f64], t: usize, f: usize) -> Vec<f64> {
    let c = num_bins(t);
    let ifft = plan(t, true);
    let mut out = vec![0.0; t * f];
    let mut buf = vec![Complex64::new(0.0, 0.0); t];
    for col in 0..f {
        buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        buf[0] = Complex64::new(g_re[col], 0.0);
        for j in 1..c {
            let imag = if t % 2 == 0 && j == t / 2 {
                0.0
            } else {
                g_im[j * f + col]
            };
            buf[j] = Complex64::new(g_re[j * f + col], imag);
        }
        ifft.process(&mut buf);
        for tt in 0..t {
            out[tt * f + col] = buf[tt].re;
        }
    }
    out
}

/// Vector-Jacobian product of [`irfft_raw`]: gradients for the real and
/// imaginary parts of the retained bins.
pub(crate) fn irfft_vjp(g: &[f64], t: usize, f: usize) -> (Vec<f64>, Vec<f64>) {
    let c = num_bins(t);
    let (mut re, mut im) = rfft_raw(g, t, f);
    let inv = 1.0 / t as f64;
    for j in 0..c {
        let unpaired = j == 0 || (t % 2 == 0 && j == t / 2);
        let w = if unpaired { inv } else { 2.0 * inv };
        for col in 0..f {
            re[j * f + col] *= w;
            im[j * f + col] = if unpaired { 0.0 } else { im[j * f + col] * w };
        }
    }
    (re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![t, f], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let s = rfft(&Tensor::new(vec![4, 1], vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(s.re().data(), &[4.0, 0.0, 0.0]);
        assert_eq!(s.im().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn cosine_lands_in_bin_one() {
        let x = Tensor::from_fn(vec![8, 1], |t| (2.0 * PI * t as f64 / 8.0).cos());
        let s = rfft(&x).unwrap();
        for j in 0..5 {
            let expect = if j == 1 { 4.0 } else { 0.0 };
            assert!((s.bin(j, 0).re - expect).abs() < 1e-9);
            assert!(s.bin(j, 0).im.abs() < 1e-9);
        }
    }

    #[test]
    fn odd_length_matches_naive() {
        let x = random(100, 3, 11);
        let fast = rfft(&x).unwrap();
        let slow = naive_dft(&x).unwrap();
        assert!(fast.re().max_abs_diff(slow.re()) < 1e-9);
        assert!(fast.im().max_abs_diff(slow.im()) < 1e-9);
    }

    #[test]
    fn dc_inversion() {
        let re = Tensor::new(vec![5, 1], vec![8.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let s = ComplexSpectrum::new(re, Tensor::zeros(vec![5, 1]), 8).unwrap();
        let x = irfft(&s).unwrap();
        assert!(x.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn inverse_matches_naive_for_t10() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let re = Tensor::from_fn(vec![6, 2], |_| rng.random_range(-1.0..1.0));
        let mut im = Tensor::from_fn(vec![6, 2], |_| rng.random_range(-1.0..1.0));
        for col in 0..2 {
            im.data_mut()[col] = 0.0;
            im.data_mut()[5 * 2 + col] = 0.0;
        }
        let s = ComplexSpectrum::new(re, im, 10).unwrap();
        assert!(irfft(&s).unwrap().max_abs_diff(&naive_idft(&s)) < 1e-9);
    }

    #[test]
    fn polar_form_of_3_4() {
        assert_eq!(modulus(3.0, 4.0), 5.0);
        assert!((argument(3.0, 4.0) - 0.927295218).abs() < 1e-9);
        assert_eq!(argument(0.0, 0.0), 0.0);
        assert_eq!(argument(-0.0, -0.0), 0.0);
        assert_eq!(argument(-1.0, -0.0), PI);
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = Tensor::zeros(vec![7, 1]);
        x.data_mut()[0] = 1.0;
        let s = naive_dft(&x).unwrap();
        for j in 0..4 {
            assert!((s.bin(j, 0).re - 1.0).abs() < 1e-12 && s.bin(j, 0).im.abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_spectrum_rejected() {
        assert!(ComplexSpectrum::new(Tensor::zeros(vec![4, 1]), Tensor::zeros(vec![4, 1]), 8).is_err());
        assert!(rfft(&Tensor::zeros(vec![1, 3])).is_err());
    }
}
