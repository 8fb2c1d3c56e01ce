//! WebAssembly bindings for `www/index.html`.
//!
//! Every export returns RGBA bytes or plain numbers. The `*_rgba` helpers do
//! the work and run natively; the `#[wasm_bindgen]` wrappers only map errors.

use cacps::phantom::generate_phantom;
use cacps::spectral::{dft2, fourier_augment, MixConfig, MixMode};
use cacps::{Image, LabelMap, Result};
use wasm_bindgen::prelude::*;

/// Overlay colors for LV, MYO, RV.
const LABEL_RGB: [[f64; 3]; 3] = [
    [230.0, 60.0, 50.0],
    [70.0, 200.0, 90.0],
    [60.0, 110.0, 235.0],
];
const OVERLAY_ALPHA: f64 = 0.45;

fn gray_rgba(img: &Image, lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(img.data().len() * 4);
    for &v in img.data() {
        let g = (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend([g, g, g, 255]);
    }
    out
}

fn overlay(rgba: &mut [u8], mask: &LabelMap) {
    for (px, &label) in rgba.chunks_exact_mut(4).zip(mask.labels()) {
        if label == 0 {
            continue;
        }
        let color = LABEL_RGB[label as usize - 1];
        for c in 0..3 {
            px[c] = ((1.0 - OVERLAY_ALPHA) * px[c] as f64 + OVERLAY_ALPHA * color[c]).round() as u8;
        }
    }
}

/// Phantom image of one domain, optionally with its labels blended on top.
pub fn phantom_rgba(seed: u64, domain: u8, size: usize, show_labels: bool) -> Result<Vec<u8>> {
    let sample = generate_phantom(seed, domain, size, size)?;
    let mut rgba = gray_rgba(&sample.image, 0.0, 1.0);
    if show_labels {
        overlay(
            &mut rgba,
            sample
                .mask
                .as_ref()
                .expect("generated phantoms carry masks"),
        );
    }
    Ok(rgba)
}

pub fn parse_mode(mode: &str) -> Result<MixMode> {
    mode.parse()
}

/// Augmented view of `(seed, domain)` with the low frequencies of
/// `(partner_seed, partner_domain)`, followed by its log-amplitude spectrum;
/// both `size × size` RGBA, concatenated.
pub fn augment_rgba(
    seed: u64,
    domain: u8,
    partner_seed: u64,
    partner_domain: u8,
    size: usize,
    cfg: &MixConfig,
) -> Result<Vec<u8>> {
    let image = generate_phantom(seed, domain, size, size)?.image;
    let partner = generate_phantom(partner_seed, partner_domain, size, size)?.image;
    let aug = fourier_augment(&image, &partner, cfg)?;
    let mut out = gray_rgba(&aug, 0.0, 1.0);
    out.extend(spectrum_rgba(&aug));
    Ok(out)
}

fn spectrum_rgba(img: &Image) -> Vec<u8> {
    let s = dft2(img);
    let log: Vec<f64> = s.amplitude.iter().map(|a| a.ln_1p()).collect();
    let hi = log.iter().cloned().fold(0.0, f64::max);
    gray_rgba(
        &Image::new(s.height, s.width, log).expect("spectrum dims"),
        0.0,
        hi,
    )
}

/// Two-class pixel: `[V, exp(−V), CE, weighted term]` where the teacher
/// predicts `p_o` on the original view and `p_f` on the augmented one, and
/// the student assigns `p_student` to the teacher's pseudo-label class. Each
/// argument is the probability of class 1.
pub fn confidence_terms(p_o: f64, p_f: f64, p_student: f64) -> [f64; 4] {
    let eps = 1e-12;
    let (po, pf) = ([1.0 - p_o, p_o], [1.0 - p_f, p_f]);
    let v: f64 = (0..2)
        .map(|c| pf[c] * (pf[c].max(eps) / po[c].max(eps)).ln())
        .sum();
    let weight = (-v).exp();
    let ce = -p_student.max(eps).ln();
    [v, weight, ce, weight * ce + v]
}

/// `exp(−V)·ce + V` sampled at `n` evenly spaced V in `[0, v_max]`.
pub fn weighted_curve(ce: f64, v_max: f64, n: usize) -> Vec<f64> {
    let steps = n.max(2) - 1;
    (0..=steps)
        .map(|i| {
            let v = v_max * i as f64 / steps as f64;
            (-v).exp() * ce + v
        })
        .collect()
}

fn js(e: cacps::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn phantom(
    seed: u32,
    domain: u8,
    size: u32,
    show_labels: bool,
) -> std::result::Result<Vec<u8>, JsError> {
    phantom_rgba(seed.into(), domain, size as usize, show_labels).map_err(js)
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn augment(
    seed: u32,
    domain: u8,
    partner_seed: u32,
    partner_domain: u8,
    size: u32,
    lambda: f64,
    mask_ratio: f64,
    mode: &str,
) -> std::result::Result<Vec<u8>, JsError> {
    let cfg = MixConfig {
        lambda,
        mask_ratio,
        mode: parse_mode(mode).map_err(js)?,
    };
    augment_rgba(
        seed.into(),
        domain,
        partner_seed.into(),
        partner_domain,
        size as usize,
        &cfg,
    )
    .map_err(js)
}

#[wasm_bindgen]
pub fn confidence(p_o: f64, p_f: f64, p_student: f64) -> Vec<f64> {
    confidence_terms(p_o, p_f, p_student).to_vec()
}

#[wasm_bindgen]
pub fn curve(ce: f64, v_max: f64, n: u32) -> Vec<f64> {
    weighted_curve(ce, v_max, n as usize)
}
