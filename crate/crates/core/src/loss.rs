//! Pseudo labels, confidence variance and the training losses.
//!
//! Each network sees an original view `I` and an augmented view `X`. Its
//! prediction set ([`PseudoBundle`]) holds both probability maps, their
//! average, the per-pixel divergence between them, and the hard label taken
//! from the average. Two networks supervise each other through those hard
//! labels, with every pixel's cross-entropy scaled by `exp(-V)` and `V` added
//! back as a penalty.

use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::grid::{Tensor, Var};
use crate::image::NUM_CLASSES;
use crate::segnet::BoundNet;

/// Additive smoothing in the soft dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// Foreground classes scored by dice: LV, MYO, RV.
pub const FOREGROUND: [usize; 3] = [1, 2, 3];

pub struct PseudoBundle<'t> {
    /// Prediction on the original view.
    pub p_o: Var<'t>,
    /// Prediction on the augmented view.
    pub p_f: Var<'t>,
    /// `(p_o + p_f) / 2`.
    pub p_e: Var<'t>,
    /// Per-pixel `Σ_c p_f·ln(p_f / p_o)`, shape `[N, H, W]`.
    pub variance: Var<'t>,
    /// One-hot argmax of `p_e`; carries no gradient.
    pub y: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacpsOptions {
    /// Let gradients flow through `V` in the confidence weighting and penalty.
    pub grad_through_variance: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_s: f64,
    pub l_cacps: f64,
    pub l_total: f64,
    /// Soft dice loss per foreground class, averaged over the supervised networks.
    pub dice_terms: [f64; 3],
    pub mean_variance: f64,
}

pub fn build_bundle<'t>(
    net: &BoundNet<'t>,
    original: Var<'t>,
    augmented: Var<'t>,
) -> Result<PseudoBundle<'t>> {
    if original.shape() != augmented.shape() {
        return Err(Error::shape(format!(
            "original {:?} and augmented {:?} batches differ",
            original.shape(),
            augmented.shape()
        )));
    }
    let p_f = net.predict_probs(augmented)?;
    let p_o = net.predict_probs(original)?;
    bundle_from_probs(p_o, p_f)
}

/// Assembles a bundle from probability maps already on the tape.
pub fn bundle_from_probs<'t>(p_o: Var<'t>, p_f: Var<'t>) -> Result<PseudoBundle<'t>> {
    if p_o.shape() != p_f.shape() {
        return Err(Error::shape(format!(
            "p_o {:?} vs p_f {:?}",
            p_o.shape(),
            p_f.shape()
        )));
    }
    let p_e = p_o.add(p_f)?.scale(0.5);
    let variance = confidence_variance(p_f, p_o)?;
    let y = one_hot_argmax(&p_e.value())?;
    Ok(PseudoBundle {
        p_o,
        p_f,
        p_e,
        variance,
        y,
    })
}

/// `Σ_c p_f·(ln p_f − ln p_o)` over the channel axis, logs clamped at 1e-8.
pub fn confidence_variance<'t>(p_f: Var<'t>, p_o: Var<'t>) -> Result<Var<'t>> {
    let log_ratio = p_f.ln().sub(p_o.ln())?;
    p_f.mul(log_ratio)?.sum_axes(&[1])
}

/// Per-pixel one-hot of the channel argmax; ties go to the lowest class.
pub fn one_hot_argmax(probs: &Tensor) -> Result<Tensor> {
    let s = probs.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("expected [N,C,H,W], got {s:?}")));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let d = probs.data();
    let mut out = vec![0.0; d.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut best = 0;
            for ch in 1..c {
                if d[base + ch * hw + p] > d[base + best * hw + p] {
                    best = ch;
                }
            }
            out[base + best * hw + p] = 1.0;
        }
    }
    Tensor::new(s, out)
}

/// Per-pixel argmax labels of `[N, C, H, W]` probabilities.
pub fn argmax_labels(probs: &Tensor) -> Result<Vec<u8>> {
    let oh = one_hot_argmax(probs)?;
    let s = probs.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let d = oh.data();
    let mut labels = vec![0u8; n * hw];
    for b in 0..n {
        for p in 0..hw {
            labels[b * hw + p] = (0..c)
                .find(|&ch| d[(b * c + ch) * hw + p] == 1.0)
                .unwrap_or(0) as u8;
        }
    }
    Ok(labels)
}

/// `−Σ_c y·ln p` per pixel, shape `[N, H, W]`.
pub fn cross_entropy_map<'t>(probs: Var<'t>, target: &Tensor) -> Result<Var<'t>> {
    let y = probs.tape().constant(target.clone());
    probs.ln().mul(y)?.sum_axes(&[1]).map(|v| v.scale(-1.0))
}

/// Mean over pixels of `exp(−V_t)·CE(p_e of student, Y_t) + V_t`.
pub fn directional_loss<'t>(
    teacher: &PseudoBundle<'t>,
    student: &PseudoBundle<'t>,
    opts: CacpsOptions,
) -> Result<Var<'t>> {
    let v = if opts.grad_through_variance {
        teacher.variance
    } else {
        teacher.variance.detach()
    };
    let ce = cross_entropy_map(student.p_e, &teacher.y)?;
    Ok(v.scale(-1.0).exp().mul(ce)?.add(v)?.mean())
}

/// `L_a + L_b` for the two parallel networks of one model.
pub fn cacps_pair_loss<'t>(
    a: &PseudoBundle<'t>,
    b: &PseudoBundle<'t>,
    opts: CacpsOptions,
) -> Result<Var<'t>> {
    if a.p_e.shape() != b.p_e.shape() {
        return Err(Error::shape(format!(
            "bundles {:?} vs {:?}",
            a.p_e.shape(),
            b.p_e.shape()
        )));
    }
    let l_a = directional_loss(a, b, opts)?;
    let l_b = directional_loss(b, a, opts)?;
    l_a.add(l_b)
}

fn check_one_hot(g: &Tensor) -> Result<()> {
    let s = g.shape();
    let bad = |m: String| Error::new(ErrorKind::Label, m);
    if s.len() != 4 || s[1] != NUM_CLASSES {
        return Err(bad(format!(
            "ground truth must be [N,{NUM_CLASSES},H,W], got {s:?}"
        )));
    }
    let hw = s[2] * s[3];
    let d = g.data();
    for b in 0..s[0] {
        for p in 0..hw {
            let mut ones = 0;
            for c in 0..NUM_CLASSES {
                match d[(b * NUM_CLASSES + c) * hw + p] {
                    v if v == 1.0 => ones += 1,
                    v if v == 0.0 => {}
                    v => return Err(bad(format!("ground truth holds non-binary value {v}"))),
                }
            }
            if ones != 1 {
                return Err(bad(format!(
                    "pixel {p} of sample {b} has {ones} active classes"
                )));
            }
        }
    }
    Ok(())
}

/// Soft dice loss per foreground class, sums taken over batch and pixels.
pub fn dice_terms<'t>(probs: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    check_one_hot(g)?;
    if probs.shape() != g.shape() {
        return Err(Error::shape(format!(
            "probs {:?} vs truth {:?}",
            probs.shape(),
            g.shape()
        )));
    }
    let tape = probs.tape();
    let gv = tape.constant(g.clone());
    let inter = probs.mul(gv)?.sum_axes(&[0, 2, 3])?;
    let p_sum = probs.sum_axes(&[0, 2, 3])?;
    let g_sum = gv.sum_axes(&[0, 2, 3])?;
    let num = inter.scale(2.0).add(DICE_SMOOTH)?;
    let den = p_sum.add(g_sum)?.add(DICE_SMOOTH)?;
    // 1 − ratio, as (−ratio) + 1
    Ok(num.div(den)?.scale(-1.0).add(1.0)?)
}

/// Mean of the foreground soft dice losses; lies in `[0, 1]`.
pub fn dice_loss<'t>(probs: Var<'t>, g: &Tensor) -> Result<Var<'t>> {
    let terms = dice_terms(probs, g)?;
    let mut w = vec![0.0; NUM_CLASSES];
    for c in FOREGROUND {
        w[c] = 1.0 / FOREGROUND.len() as f64;
    }
    let w = terms.tape().constant(Tensor::new(&[NUM_CLASSES], w)?);
    Ok(terms.mul(w)?.sum())
}

pub fn total_loss<'t>(l_s: Var<'t>, l_cacps: Var<'t>, beta: f64) -> Result<Var<'t>> {
    l_s.add(l_cacps.scale(beta))
}

pub fn total_loss_value(l_s: f64, l_cacps: f64, beta: f64) -> f64 {
    l_s + beta * l_cacps
}
