use std::path::{Path, PathBuf};

use cacps::phantom::{io, Dataset};
use cacps::spectral::{fourier_augment, MixConfig};
use cacps::train::RunConfig;
use cacps::{Error, ErrorKind, Result};
use serde_json::json;

pub const SUMMARY_FILE: &str = "augment_summary.json";

/// Writes `<id>_original.phi`, `<id>_partner.phi` and one
/// `<id>_lambda<λ>.phi` per mixing weight, plus a JSON summary with the
/// largest absolute change each weight caused. Returns the summary path.
pub fn augment_preview(
    cfg: &RunConfig,
    ds: &Dataset,
    sample_ids: &[String],
    partner_id: Option<&str>,
    lambdas: &[f64],
    out: &Path,
) -> Result<PathBuf> {
    let samples = &ds.manifest.samples;
    let missing = |id: &str| Error::new(ErrorKind::Data, format!("sample {id} not in manifest"));
    let mut jobs = Vec::new();
    for id in sample_ids {
        let pos = samples
            .iter()
            .position(|e| &e.sample_id == id)
            .ok_or_else(|| missing(id))?;
        let partner = match partner_id {
            Some(p) => ds.find(p).ok_or_else(|| missing(p))?,
            None => &samples[(pos + 1) % samples.len()],
        };
        jobs.push((&samples[pos], partner));
    }
    for &l in lambdas {
        MixConfig {
            lambda: l,
            mask_ratio: cfg.aug.mask_ratio,
            mode: cfg.aug.mode,
        }
        .validate()?;
    }
    std::fs::create_dir_all(out)
        .map_err(|e| Error::new(ErrorKind::Io, format!("{}: {e}", out.display())))?;

    let mut records = Vec::new();
    for (entry, partner_entry) in jobs {
        let image = ds.load(entry)?.image;
        let partner = ds.load(partner_entry)?.image;
        let id = &entry.sample_id;
        io::save_image(&out.join(format!("{id}_original.phi")), &image)?;
        io::save_image(&out.join(format!("{id}_partner.phi")), &partner)?;
        let mut results = Vec::new();
        for &lambda in lambdas {
            let mix = MixConfig {
                lambda,
                mask_ratio: cfg.aug.mask_ratio,
                mode: cfg.aug.mode,
            };
            let aug = fourier_augment(&image, &partner, &mix)?;
            let file = format!("{id}_lambda{lambda}.phi");
            io::save_image(&out.join(&file), &aug)?;
            results.push(
                json!({ "lambda": lambda, "file": file, "max_abs_diff": aug.max_abs_diff(&image) }),
            );
        }
        records.push(
            json!({ "sample_id": id, "partner_id": partner_entry.sample_id, "results": results }),
        );
    }
    let path = out.join(SUMMARY_FILE);
    crate::write_json(
        &path,
        &json!({ "mode": cfg.aug.mode, "mask_ratio": cfg.aug.mask_ratio, "samples": records }),
    )?;
    Ok(path)
}
