use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_phantom, io, mix_seed, PhantomSample};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-domain generation settings, indexed by `domain_id - 1`.
///
/// Labeled samples of a domain go to its `labeled_split`; unlabeled ones
/// always go to `train`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub n_per_domain: usize,
    pub labeled_fraction: [f64; 4],
    pub labeled_split: [Split; 4],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 64,
            width: 64,
            seed: 0,
            n_per_domain: 25,
            labeled_fraction: [0.2; 4],
            labeled_split: [Split::Train, Split::Train, Split::Val, Split::Val],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < super::MIN_SIDE
            || self.width < super::MIN_SIDE
            || self.height % 4 != 0
            || self.width % 4 != 0
        {
            return Err(Error::config(format!(
                "dataset size {}x{} must be >= {} per side and divisible by 4",
                self.height,
                self.width,
                super::MIN_SIDE
            )));
        }
        if self.n_per_domain == 0 {
            return Err(Error::config("n_per_domain must be positive"));
        }
        if let Some(f) = self
            .labeled_fraction
            .iter()
            .find(|f| !(0.0..=1.0).contains(*f))
        {
            return Err(Error::config(format!(
                "labeled fraction {f} outside [0, 1]"
            )));
        }
        Ok(())
    }

    pub fn labeled_count(&self, domain_id: u8) -> usize {
        (self.n_per_domain as f64 * self.labeled_fraction[domain_id as usize - 1]).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub image: String,
    pub mask: Option<String>,
    pub domain_id: u8,
    pub labeled: bool,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub domain_id: u8,
    pub total: usize,
    pub labeled: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<ManifestEntry>,
    pub counts: Vec<DomainCounts>,
}

/// Every sample of the configured dataset, in manifest order.
pub fn generate_samples(cfg: &DatasetConfig) -> Result<Vec<(ManifestEntry, PhantomSample)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for domain_id in 1..=4u8 {
        let mut order: Vec<usize> = (0..cfg.n_per_domain).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            cfg.seed,
            0x7370_6c69 + domain_id as u64,
        )));
        let mut labeled = vec![false; cfg.n_per_domain];
        for &i in &order[..cfg.labeled_count(domain_id)] {
            labeled[i] = true;
        }
        for (idx, &is_labeled) in labeled.iter().enumerate() {
            let sample_seed = mix_seed(cfg.seed, ((domain_id as u64) << 32) | idx as u64);
            let mut sample = generate_phantom(sample_seed, domain_id, cfg.height, cfg.width)?;
            sample.sample_id = format!("d{domain_id}_{idx:03}");
            sample.labeled = is_labeled;
            if !is_labeled {
                sample.mask = None;
            }
            let entry = ManifestEntry {
                image: format!("images/{}.phi", sample.sample_id),
                mask: is_labeled.then(|| format!("masks/{}.phm", sample.sample_id)),
                sample_id: sample.sample_id.clone(),
                domain_id,
                labeled: is_labeled,
                split: if is_labeled {
                    cfg.labeled_split[domain_id as usize - 1]
                } else {
                    Split::Train
                },
            };
            out.push((entry, sample));
        }
    }
    Ok(out)
}

/// Writes images, masks and `manifest.json` under `root`.
pub fn build_dataset(cfg: &DatasetConfig, root: &Path) -> Result<Dataset> {
    let samples = generate_samples(cfg)?;
    for sub in ["images", "masks"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (entry, sample) in samples {
        io::save_image(&root.join(&entry.image), &sample.image)?;
        if let (Some(path), Some(mask)) = (&entry.mask, &sample.mask) {
            io::save_mask(&root.join(path), mask)?;
        }
        entries.push(entry);
    }
    let counts = (1..=4u8)
        .map(|d| DomainCounts {
            domain_id: d,
            total: entries.iter().filter(|e| e.domain_id == d).count(),
            labeled: entries
                .iter()
                .filter(|e| e.domain_id == d && e.labeled)
                .count(),
        })
        .collect();
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        height: cfg.height,
        width: cfg.width,
        samples: entries,
        counts,
    };
    let path = root.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(Dataset {
        root: root.to_path_buf(),
        manifest,
    })
}

/// A manifest plus the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

/// Reads and validates `manifest.json` in `root`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    let ds = Dataset {
        root: root.to_path_buf(),
        manifest,
    };
    ds.validate()?;
    Ok(ds)
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        for e in &m.samples {
            if e.labeled != e.mask.is_some() {
                return Err(Error::data(format!(
                    "{}: labeled flag disagrees with mask entry",
                    e.sample_id
                )));
            }
            if !(1..=4).contains(&e.domain_id) {
                return Err(Error::data(format!(
                    "{}: domain {} outside 1..=4",
                    e.sample_id, e.domain_id
                )));
            }
            for file in std::iter::once(&e.image).chain(e.mask.as_ref()) {
                if !self.root.join(file).is_file() {
                    return Err(Error::data(format!("{}: missing file {file}", e.sample_id)));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.manifest
            .samples
            .iter()
            .filter(move |e| e.split == split)
    }

    pub fn find(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.manifest
            .samples
            .iter()
            .find(|e| e.sample_id == sample_id)
    }

    pub fn load(&self, entry: &ManifestEntry) -> Result<PhantomSample> {
        let image = io::load_image(&self.root.join(&entry.image))?;
        let mask = entry
            .mask
            .as_ref()
            .map(|m| io::load_mask(&self.root.join(m)))
            .transpose()?;
        if image.dims() != (self.manifest.height, self.manifest.width)
            || mask.as_ref().is_some_and(|m| m.dims() != image.dims())
        {
            return Err(Error::format(format!(
                "{}: dimensions disagree with manifest",
                entry.sample_id
            )));
        }
        Ok(PhantomSample {
            sample_id: entry.sample_id.clone(),
            image,
            mask,
            domain_id: entry.domain_id,
            labeled: entry.labeled,
        })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<PhantomSample>> {
        self.entries(split).map(|e| self.load(e)).collect()
    }
}
