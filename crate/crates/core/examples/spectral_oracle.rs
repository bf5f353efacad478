//! Real FFT against a direct O(T²) DFT, plus the round trip and energy
//! balance, on a two-tone signal with an odd length.

use mff_ftnet::spectral::{self, naive_dft};
use mff_ftnet::Tensor;

fn main() -> mff_ftnet::Result<()> {
    let t = 45;
    let x = Tensor::from_fn(vec![t, 2], |i| {
        let (step, f) = ((i / 2) as f64, (i % 2) as f64);
        (std::f64::consts::TAU * step * 3.0 / t as f64).sin() + 0.4 * (std::f64::consts::TAU * step * (7.0 + f) / t as f64).cos()
    });
    let fast = spectral::rfft(&x)?;
    let slow = naive_dft(&x)?;
    println!("bins: {}", fast.num_bins());
    println!(
        "max |fft - dft|: re {:.2e}, im {:.2e}",
        fast.re().max_abs_diff(slow.re()),
        fast.im().max_abs_diff(slow.im())
    );
    println!("max |irfft(rfft(x)) - x|: {:.2e}", spectral::irfft(&fast)?.max_abs_diff(&x));

    let amp = spectral::amp_phase(&fast).amplitude;
    for f in 0..2 {
        let mut peaks: Vec<(usize, f64)> = (0..fast.num_bins()).map(|j| (j, amp.at2(j, f))).collect();
        peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
        println!("feature {f}: strongest bins {:?}", &peaks[..2].iter().map(|p| p.0).collect::<Vec<_>>());
    }
    Ok(())
}
