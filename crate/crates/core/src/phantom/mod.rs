//! Synthetic cardiac-like phantoms with four motion-severity domains.
//!
//! Geometry is drawn from the sample seed alone, so the same seed rendered in
//! different domains shares its label map. Domain corruption (blur, ghosting,
//! noise, gamma) only touches the image.

mod dataset;
pub mod io;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};

pub use dataset::{
    build_dataset, generate_samples, load_dataset, Dataset, DatasetConfig, DatasetManifest,
    DomainCounts, ManifestEntry, Split, MANIFEST_FILE,
};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_LV: u8 = 1;
pub const LABEL_MYO: u8 = 2;
pub const LABEL_RV: u8 = 3;

pub const MIN_SIDE: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub sample_id: String,
    pub image: Image,
    /// Present iff the sample is labeled.
    pub mask: Option<LabelMap>,
    pub domain_id: u8,
    pub labeled: bool,
}

/// Clean shapes and tissue intensities of one phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub height: usize,
    pub width: usize,
    pub center: (f64, f64),
    pub lv_radius: f64,
    pub myo_thickness: f64,
    pub rv_center: (f64, f64),
    pub rv_radius: f64,
    /// Background, LV, MYO, RV.
    pub intensities: [f64; 4],
}

/// Corruption recipe for a motion-severity domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corruption {
    pub blur_sigma: f64,
    pub ghost_weight: f64,
    pub ghost_shift: usize,
    pub noise_sigma: f64,
    /// Gamma exponent drawn uniformly from this range, when present.
    pub gamma: Option<(f64, f64)>,
}

impl Corruption {
    pub fn for_domain(domain_id: u8) -> Result<Self> {
        let none = Corruption {
            blur_sigma: 0.0,
            ghost_weight: 0.0,
            ghost_shift: 0,
            noise_sigma: 0.0,
            gamma: None,
        };
        Ok(match domain_id {
            1 => none,
            2 => Corruption {
                blur_sigma: 0.8,
                noise_sigma: 0.01,
                ..none
            },
            3 => Corruption {
                blur_sigma: 1.5,
                ghost_weight: 0.15,
                ghost_shift: 3,
                noise_sigma: 0.03,
                gamma: None,
            },
            4 => Corruption {
                blur_sigma: 2.5,
                ghost_weight: 0.3,
                ghost_shift: 6,
                noise_sigma: 0.06,
                gamma: Some((0.7, 1.4)),
            },
            other => return Err(Error::config(format!("domain id {other} outside 1..=4"))),
        })
    }
}

/// splitmix64 finalizer, for deriving independent stream seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE || height % 4 != 0 || width % 4 != 0 {
        return Err(Error::shape(format!(
            "phantom size {height}x{width}: sides must be >= {MIN_SIDE} and divisible by 4"
        )));
    }
    Ok(())
}

impl Geometry {
    pub fn sample(seed: u64, height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x6765_6f6d));
        let side = height.min(width) as f64;
        let lv_radius = rng.random_range(0.08..0.14) * side;
        let myo_thickness = rng.random_range(0.04..0.08) * side;
        let center = (
            height as f64 / 2.0 + rng.random_range(-0.08..0.08) * height as f64,
            width as f64 / 2.0 + rng.random_range(-0.08..0.08) * width as f64,
        );
        let outer = lv_radius + myo_thickness;
        let rv_radius = outer * rng.random_range(0.9..1.2);
        let theta = rng.random_range(0.0..2.0 * PI);
        let dist = outer + 0.3 * rv_radius;
        let rv_center = (center.0 + dist * theta.sin(), center.1 + dist * theta.cos());
        let mut jitter = |base: f64| base + rng.random_range(-0.05..0.05);
        let intensities = [jitter(0.15), jitter(0.85), jitter(0.55), jitter(0.75)];
        Ok(Geometry {
            height,
            width,
            center,
            lv_radius,
            myo_thickness,
            rv_center,
            rv_radius,
            intensities,
        })
    }

    fn label_at(&self, y: usize, x: usize) -> u8 {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let d = (py - self.center.0).hypot(px - self.center.1);
        if d < self.lv_radius {
            LABEL_LV
        } else if d < self.lv_radius + self.myo_thickness {
            LABEL_MYO
        } else if (py - self.rv_center.0).hypot(px - self.rv_center.1) < self.rv_radius {
            LABEL_RV
        } else {
            LABEL_BACKGROUND
        }
    }

    pub fn mask(&self) -> LabelMap {
        let labels = (0..self.height * self.width)
            .map(|i| self.label_at(i / self.width, i % self.width))
            .collect();
        LabelMap::new(self.height, self.width, labels).expect("labels in range")
    }

    /// Piecewise-constant image before any corruption.
    pub fn render(&self) -> Image {
        let mask = self.mask();
        let data = mask
            .labels()
            .iter()
            .map(|&l| self.intensities[l as usize])
            .collect();
        Image::new(self.height, self.width, data).expect("dims")
    }
}

/// Separable gaussian blur, kernel truncated at 3σ, edges replicated.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= z);
    let (h, w) = img.dims();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (sy, sx) = if horizontal {
                        (y as isize, (x as isize + off).clamp(0, w as isize - 1))
                    } else {
                        ((y as isize + off).clamp(0, h as isize - 1), x as isize)
                    };
                    acc += wt * src[sy as usize * w + sx as usize];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    Image::new(h, w, pass(&tmp, false)).expect("dims")
}

/// Adds `weight ×` a copy shifted down by `shift` rows, wrapping around.
pub fn add_ghost(img: &Image, weight: f64, shift: usize) -> Image {
    if weight == 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let src = img.data();
    let data = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let sy = (y + h - shift % h) % h;
            src[i] + weight * src[sy * w + x]
        })
        .collect();
    Image::new(h, w, data).expect("dims")
}

pub fn corrupt(clean: &Image, recipe: &Corruption, rng: &mut ChaCha8Rng) -> Image {
    let mut img = gaussian_blur(clean, recipe.blur_sigma);
    img = add_ghost(&img, recipe.ghost_weight, recipe.ghost_shift);
    if recipe.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, recipe.noise_sigma).expect("positive sigma");
        img.data_mut()
            .iter_mut()
            .for_each(|v| *v += noise.sample(rng));
    }
    img.clamp_unit();
    if let Some((lo, hi)) = recipe.gamma {
        let g = rng.random_range(lo..hi);
        img.data_mut().iter_mut().for_each(|v| *v = v.powf(g));
    }
    img.clamp_unit();
    img
}

/// One labeled phantom; labels come from the clean geometry.
pub fn generate_phantom(
    seed: u64,
    domain_id: u8,
    height: usize,
    width: usize,
) -> Result<PhantomSample> {
    let recipe = Corruption::for_domain(domain_id)?;
    let geom = Geometry::sample(seed, height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x636f_7272 + domain_id as u64));
    let image = corrupt(&geom.render(), &recipe, &mut rng);
    Ok(PhantomSample {
        sample_id: format!("seed{seed}_d{domain_id}"),
        image,
        mask: Some(geom.mask()),
        domain_id,
        labeled: true,
    })
}

/// Peak signal-to-noise ratio in dB for unit peak; infinite for equal images.
pub fn psnr(reference: &Image, test: &Image) -> f64 {
    let n = reference.data().len() as f64;
    let mse = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// True when no 4-connected path leads from an LV pixel to the image border
/// or to background without crossing myocardium.
pub fn lv_enclosed_by_myo(mask: &LabelMap) -> bool {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y == h - 1 || x == w - 1;
            let l = mask.at(y, x);
            if (border || l == LABEL_BACKGROUND) && l != LABEL_MYO {
                seen[y * w + x] = true;
                stack.push((y, x));
            }
        }
    }
    while let Some((y, x)) = stack.pop() {
        if mask.at(y, x) == LABEL_LV {
            return false;
        }
        let mut visit = |ny: usize, nx: usize| {
            let i = ny * w + nx;
            if !seen[i] && mask.at(ny, nx) != LABEL_MYO {
                seen[i] = true;
                stack.push((ny, nx));
            }
        };
        if y > 0 {
            visit(y - 1, x);
        }
        if y + 1 < h {
            visit(y + 1, x);
        }
        if x > 0 {
            visit(y, x - 1);
        }
        if x + 1 < w {
            visit(y, x + 1);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn generation_is_deterministic() {
        for d in 1..=4 {
            assert_eq!(
                generate_phantom(5, d, 64, 64).unwrap(),
                generate_phantom(5, d, 64, 64).unwrap()
            );
        }
        assert_ne!(
            generate_phantom(5, 1, 64, 64).unwrap().image,
            generate_phantom(6, 1, 64, 64).unwrap().image
        );
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(
            generate_phantom(1, 1, 30, 64).unwrap_err().kind(),
            ErrorKind::Shape
        );
        assert_eq!(
            generate_phantom(1, 1, 64, 66).unwrap_err().kind(),
            ErrorKind::Shape
        );
        assert_eq!(
            generate_phantom(1, 5, 64, 64).unwrap_err().kind(),
            ErrorKind::Config
        );
    }

    #[test]
    fn masks_have_all_labels_and_enclosed_lv() {
        for seed in 0..50 {
            let s = generate_phantom(seed, 1, 64, 64).unwrap();
            let mask = s.mask.unwrap();
            assert!(mask.class_counts().iter().all(|&c| c > 0), "seed {seed}");
            assert!(lv_enclosed_by_myo(&mask), "seed {seed}");
        }
    }

    #[test]
    fn ring_check_detects_leaks() {
        let mut labels = vec![0u8; 36];
        labels[2 * 6 + 2] = LABEL_LV;
        labels[2 * 6 + 3] = LABEL_MYO;
        let m = LabelMap::new(6, 6, labels).unwrap();
        assert!(!lv_enclosed_by_myo(&m));
    }

    #[test]
    fn class_shares_are_well_conditioned() {
        let mut counts = [0usize; 4];
        for seed in 0..100 {
            let c = Geometry::sample(seed, 64, 64)
                .unwrap()
                .mask()
                .class_counts();
            counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        let total: usize = counts.iter().sum();
        assert!(counts[0] * 2 > total);
        for &c in &counts[1..] {
            let share = c as f64 / total as f64;
            assert!((0.005..=0.20).contains(&share), "{counts:?}");
        }
    }

    #[test]
    fn corruption_severity_lowers_psnr() {
        for seed in 0..20 {
            let clean = Geometry::sample(seed, 64, 64).unwrap().render();
            let p: Vec<f64> = (1..=4)
                .map(|d| psnr(&clean, &generate_phantom(seed, d, 64, 64).unwrap().image))
                .collect();
            assert!(p[3] < p[0], "seed {seed}: {p:?}");
            assert!(p[0].is_infinite());
            assert!(p[1] > p[2] && p[2] > p[3], "seed {seed}: {p:?}");
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass() {
        let flat = Image::filled(32, 32, 0.4);
        assert!(gaussian_blur(&flat, 1.5).max_abs_diff(&flat) < 1e-12);
        let ghost = add_ghost(&flat, 0.5, 3);
        assert!(ghost.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }
}
