//! Fourier amplitude mixing.
//!
//! An image is split into a center-shifted amplitude spectrum and a phase
//! image. The low-frequency block of the amplitude is blended with that of a
//! partner image, and the result is recombined with the original phase.

use std::f64::consts::PI;
use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Amplitude and phase of a 2-D DFT, DC moved to `(H/2, W/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixMode {
    /// Keep the amplitude outside the mask; convex blend inside it.
    ConvexLowFreq,
    /// `(1-λ)·S·(1-M) + λ·S'·M`, evaluated as written.
    PaperLiteral,
}

impl FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convex-low-freq" => Ok(MixMode::ConvexLowFreq),
            "paper-literal" => Ok(MixMode::PaperLiteral),
            other => Err(Error::config(format!("unknown mix mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub lambda: f64,
    pub mask_ratio: f64,
    pub mode: MixMode,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            lambda: 0.5,
            mask_ratio: 0.1,
            mode: MixMode::ConvexLowFreq,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        check_mask_ratio(self.mask_ratio)
    }
}

fn check_mask_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 0.5 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "mask ratio {ratio} outside (0, 0.5]"
        )))
    }
}

fn fft_2d(height: usize, width: usize, buf: &mut [Complex<f64>], direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let rows = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        rows.process(row);
    }
    let cols = planner.plan_fft(height, direction);
    let mut column = vec![Complex::default(); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        cols.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Index of unshifted frequency `k` once DC is moved to `n/2`.
fn shifted(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

pub fn dft2(image: &Image) -> Spectrum {
    let (h, w) = image.dims();
    let mut buf: Vec<Complex<f64>> = image.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_2d(h, w, &mut buf, FftDirection::Forward);
    let mut amplitude = vec![0.0; h * w];
    let mut phase = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = buf[y * w + x];
            let dst = shifted(y, h) * w + shifted(x, w);
            amplitude[dst] = c.norm();
            let mut p = c.arg();
            if p <= -PI {
                p = PI;
            }
            phase[dst] = p;
        }
    }
    Spectrum {
        height: h,
        width: w,
        amplitude,
        phase,
    }
}

/// Inverse transform without the final clamp; the real part is returned.
pub fn idft2_raw(spectrum: &Spectrum) -> Image {
    let (h, w) = (spectrum.height, spectrum.width);
    let mut buf = vec![Complex::default(); h * w];
    for y in 0..h {
        for x in 0..w {
            let src = shifted(y, h) * w + shifted(x, w);
            buf[y * w + x] = Complex::from_polar(spectrum.amplitude[src], spectrum.phase[src]);
        }
    }
    fft_2d(h, w, &mut buf, FftDirection::Inverse);
    let scale = 1.0 / (h * w) as f64;
    Image::new(h, w, buf.iter().map(|c| c.re * scale).collect()).expect("dims preserved")
}

/// Inverse transform clamped to the `[0, 1]` intensity range.
pub fn idft2(spectrum: &Spectrum) -> Image {
    let mut img = idft2_raw(spectrum);
    img.clamp_unit();
    img
}

/// Centered low-frequency rectangle (`true` inside) in shifted coordinates.
pub fn low_freq_mask(height: usize, width: usize, mask_ratio: f64) -> Result<Vec<bool>> {
    check_mask_ratio(mask_ratio)?;
    if height < 2 || width < 2 {
        return Err(Error::config(format!(
            "mask grid {height}x{width} is smaller than 2x2"
        )));
    }
    let mh = ((mask_ratio * height as f64).round() as usize).max(1);
    let mw = ((mask_ratio * width as f64).round() as usize).max(1);
    let (y0, x0) = (height / 2 - mh / 2, width / 2 - mw / 2);
    let mut mask = vec![false; height * width];
    for y in y0..y0 + mh {
        mask[y * width + x0..y * width + x0 + mw].fill(true);
    }
    Ok(mask)
}

pub fn mix_amplitude(
    src: &[f64],
    partner: &[f64],
    height: usize,
    width: usize,
    cfg: &MixConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if src.len() != height * width || partner.len() != src.len() {
        return Err(Error::shape(format!(
            "amplitude grids of {} and {} values for a {height}x{width} mask",
            src.len(),
            partner.len()
        )));
    }
    let mask = low_freq_mask(height, width, cfg.mask_ratio)?;
    let lam = cfg.lambda;
    let out = src
        .iter()
        .zip(partner)
        .zip(&mask)
        .map(|((&s, &p), &inside)| match (cfg.mode, inside) {
            (MixMode::ConvexLowFreq, false) => s,
            (MixMode::ConvexLowFreq, true) => (1.0 - lam) * s + lam * p,
            (MixMode::PaperLiteral, false) => (1.0 - lam) * s,
            (MixMode::PaperLiteral, true) => lam * p,
        })
        .collect();
    Ok(out)
}

/// Augmented image before clamping; phase always comes from `image`.
pub fn fourier_augment_raw(image: &Image, partner: &Image, cfg: &MixConfig) -> Result<Image> {
    if image.dims() != partner.dims() {
        return Err(Error::shape(format!(
            "augmentation pair {:?} vs {:?}",
            image.dims(),
            partner.dims()
        )));
    }
    let (h, w) = image.dims();
    let s = dft2(image);
    let s_partner = dft2(partner);
    let amplitude = mix_amplitude(&s.amplitude, &s_partner.amplitude, h, w, cfg)?;
    Ok(idft2_raw(&Spectrum { amplitude, ..s }))
}

pub fn fourier_augment(image: &Image, partner: &Image, cfg: &MixConfig) -> Result<Image> {
    let mut out = fourier_augment_raw(image, partner, cfg)?;
    out.clamp_unit();
    Ok(out)
}
