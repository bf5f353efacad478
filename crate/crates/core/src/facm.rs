//! Frequency-aware contrastive module.
//!
//! The representation `r ∈ ℝ^{T×K}` is transformed along time, every bin
//! outside the `k` strongest (by channel-averaged amplitude) is zeroed, the
//! surviving spectrum is reweighted by a learnable complex `K×K/2` matrix
//! plus a complex `c×K/2` offset, and the result is brought back to the time
//! domain. The reweighted spectra of the two views feed an amplitude/phase
//! contrastive loss in which bin `j` of one view is the positive for bin `j`
//! of the other and all other bins are negatives.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{normal, ParamId, ParamStore};
use crate::spectral::{self, ComplexSpectrum};
use crate::tape::{Tape, Var};

/// Standard deviation of the spectral weight initialization.
pub const SPECTRAL_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FacmConfig {
    /// Fraction of bins kept by top-k selection.
    pub mask_ratio: f64,
    /// Weight of the amplitude term against the phase term.
    pub lambda: f64,
    pub dropout: f64,
}

impl Default for FacmConfig {
    fn default() -> Self {
        FacmConfig {
            mask_ratio: 0.4,
            lambda: 0.5,
            dropout: 0.1,
        }
    }
}

impl FacmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "facm.mask_ratio must lie in (0, 1], got {}",
                self.mask_ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "facm.lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "facm.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Number of bins kept out of `c`: `max(1, ⌊c·ratio⌋)`.
pub fn topk_count(c: usize, ratio: f64) -> usize {
    ((c as f64 * ratio).floor() as usize).clamp(1, c.max(1))
}

/// Per-bin modulus averaged over feature channels.
pub fn mean_amplitude(s: &ComplexSpectrum) -> Vec<f64> {
    mean_amplitude_raw(s.re().data(), s.im().data(), s.num_features())
}

fn mean_amplitude_raw(re: &[f64], im: &[f64], f: usize) -> Vec<f64> {
    re.chunks_exact(f)
        .zip(im.chunks_exact(f))
        .map(|(r, i)| {
            r.iter()
                .zip(i)
                .map(|(a, b)| spectral::modulus(*a, *b))
                .sum::<f64>()
                / f as f64
        })
        .collect()
}

/// Indices of the `max(1, ⌊c·ratio⌋)` largest entries of `amplitude`, in
/// ascending index order. Ties go to the lower index.
pub fn select_topk(amplitude: &[f64], ratio: f64) -> Vec<usize> {
    let k = topk_count(amplitude.len(), ratio);
    let mut order: Vec<usize> = (0..amplitude.len()).collect();
    order.sort_by(|&a, &b| amplitude[b].total_cmp(&amplitude[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Learnable complex reweighting: `ω = ω_re + i·ω_im` (`K×K/2`) and
/// `β = β_re + i·β_im` (`c×K/2`).
#[derive(Clone, Copy, Debug)]
pub struct FreqParams {
    pub omega_re: ParamId,
    pub omega_im: ParamId,
    pub beta_re: ParamId,
    pub beta_im: ParamId,
}

/// Tape handles produced by one FACM pass.
#[derive(Clone, Debug)]
pub struct FacmOutput {
    /// Time-domain output `ĥ`, `T×K/2`.
    pub h: Var,
    /// Reweighted spectrum, `c×K/2` real part.
    pub spec_re: Var,
    /// Reweighted spectrum, `c×K/2` imaginary part.
    pub spec_im: Var,
    /// Bins that survived top-k selection.
    pub selected: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Facm {
    cfg: FacmConfig,
    width: usize,
    window: usize,
    params: FreqParams,
}

impl Facm {
    /// Registers spectral weights for `K = width` channels and windows of
    /// length `window`.
    pub fn new(
        cfg: &FacmConfig,
        width: usize,
        window: usize,
        store: &mut ParamStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if width == 0 || width % 2 != 0 {
            return Err(Error::Config(format!("FACM width must be even, got {width}")));
        }
        if window < 2 {
            return Err(Error::Config(format!("FACM window must be at least 2, got {window}")));
        }
        let (half, c) = (width / 2, spectral::num_bins(window));
        let params = FreqParams {
            omega_re: store.add("facm.omega.re", normal(&[width, half], SPECTRAL_INIT_STD, rng), false)?,
            omega_im: store.add("facm.omega.im", normal(&[width, half], SPECTRAL_INIT_STD, rng), false)?,
            beta_re: store.add("facm.beta.re", normal(&[c, half], SPECTRAL_INIT_STD, rng), true)?,
            beta_im: store.add("facm.beta.im", normal(&[c, half], SPECTRAL_INIT_STD, rng), true)?,
        };
        Ok(Facm {
            cfg: cfg.clone(),
            width,
            window,
            params,
        })
    }

    pub fn config(&self) -> &FacmConfig {
        &self.cfg
    }

    pub fn params(&self) -> FreqParams {
        self.params
    }

    pub fn forward(&self, tape: &mut Tape<'_>, r: Var, rng: Option<&mut dyn RngCore>) -> Result<FacmOutput> {
        let (t, k) = tape.value(r).dims2()?;
        if k != self.width || t != self.window {
            return Err(Error::Contract(format!(
                "FACM built for {}x{} representations, got {t}x{k}",
                self.window, self.width
            )));
        }
        let spec = tape.rfft(r)?;
        let re = tape.slab(spec, 0)?;
        let im = tape.slab(spec, 1)?;
        let amp = mean_amplitude_raw(tape.value(re).data(), tape.value(im).data(), k);
        let selected = select_topk(&amp, self.cfg.mask_ratio);

        let c = amp.len();
        let mut mask = vec![0.0; c * k];
        for &j in &selected {
            mask[j * k..(j + 1) * k].iter_mut().for_each(|m| *m = 1.0);
        }
        let re = tape.mul_const(re, mask.clone())?;
        let im = tape.mul_const(im, mask)?;

        let p = self.params;
        let (wr, wi) = (tape.param(p.omega_re), tape.param(p.omega_im));
        let (br, bi) = (tape.param(p.beta_re), tape.param(p.beta_im));
        // (re + i·im)(wr + i·wi) + (br + i·bi)
        let rr = tape.matmul(re, wr)?;
        let ii = tape.matmul(im, wi)?;
        let ri = tape.matmul(re, wi)?;
        let ir = tape.matmul(im, wr)?;
        let out_re = tape.sub(rr, ii)?;
        let out_re = tape.add(out_re, br)?;
        let out_im = tape.add(ri, ir)?;
        let out_im = tape.add(out_im, bi)?;

        let h = tape.irfft(out_re, out_im, t)?;
        let h = tape.dropout(h, self.cfg.dropout, rng)?;
        Ok(FacmOutput {
            h,
            spec_re: out_re,
            spec_im: out_im,
            selected,
        })
    }
}

/// Tape handles for the dual amplitude/phase loss.
#[derive(Clone, Copy, Debug)]
pub struct FreqLoss {
    pub amp: Var,
    pub phase: Var,
    pub total: Var,
}

/// Amplitude and phase InfoNCE between two reweighted spectra given as
/// `(re, im)` pairs of `c×F` nodes; each term is averaged over bins.
pub fn freq_loss_on_tape(
    tape: &mut Tape<'_>,
    view1: (Var, Var),
    view2: (Var, Var),
    lambda: f64,
) -> Result<FreqLoss> {
    if tape.shape(view1.0) != tape.shape(view2.0) {
        return Err(Error::Contract(format!(
            "spectra of shapes {:?} and {:?} cannot be contrasted",
            tape.shape(view1.0),
            tape.shape(view2.0)
        )));
    }
    let c = tape.shape(view1.0)[0] as f64;
    let a1 = tape.hypot(view1.0, view1.1)?;
    let a2 = tape.hypot(view2.0, view2.1)?;
    let p1 = tape.atan2(view1.1, view1.0)?;
    let p2 = tape.atan2(view2.1, view2.0)?;
    let amp = tape.info_nce(a1, a2)?;
    let amp = tape.scale(amp, 1.0 / c);
    let phase = tape.info_nce(p1, p2)?;
    let phase = tape.scale(phase, 1.0 / c);
    let wa = tape.scale(amp, lambda);
    let wp = tape.scale(phase, 1.0 - lambda);
    let total = tape.add(wa, wp)?;
    Ok(FreqLoss { amp, phase, total })
}

/// `(L_amp, L_phase, L_freq)` for two spectra of identical shape.
pub fn freq_contrastive_loss(
    s1: &ComplexSpectrum,
    s2: &ComplexSpectrum,
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    if s1.re().shape() != s2.re().shape() {
        return Err(Error::Contract(format!(
            "spectra of shapes {:?} and {:?} cannot be contrasted",
            s1.re().shape(),
            s2.re().shape()
        )));
    }
    let mut tape = Tape::detached();
    let v1 = (tape.constant(s1.re().clone()), tape.constant(s1.im().clone()));
    let v2 = (tape.constant(s2.re().clone()), tape.constant(s2.im().clone()));
    let l = freq_loss_on_tape(&mut tape, v1, v2, lambda)?;
    Ok((
        tape.value(l.amp).item(),
        tape.value(l.phase).item(),
        tape.value(l.total).item(),
    ))
}
