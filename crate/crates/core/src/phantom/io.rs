//! PHI1 images (f32 LE) and PHM1 masks (one byte per pixel).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMap, NUM_CLASSES};

const IMAGE_MAGIC: &[u8; 4] = b"PHI1";
const MASK_MAGIC: &[u8; 4] = b"PHM1";
const HEADER_LEN: usize = 12;

fn header(magic: &[u8; 4], h: usize, w: usize, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out
}

/// Returns (H, W, payload) after checking magic and exact length.
fn parse_header<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    elem: usize,
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != magic {
        return Err(Error::format(format!(
            "missing {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if h == 0 || w == 0 {
        return Err(Error::format(format!("zero dimension {h}x{w}")));
    }
    let want = h.checked_mul(w).and_then(|n| n.checked_mul(elem));
    let payload = &bytes[HEADER_LEN..];
    if want != Some(payload.len()) {
        return Err(Error::format(format!(
            "{h}x{w} payload expects {} bytes, found {}",
            h * w * elem,
            payload.len()
        )));
    }
    Ok((h, w, payload))
}

pub fn encode_image(img: &Image) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = header(IMAGE_MAGIC, h, w, h * w * 4);
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let (h, w, payload) = parse_header(bytes, IMAGE_MAGIC, 4)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Image::new(h, w, data)
}

pub fn encode_mask(mask: &LabelMap) -> Vec<u8> {
    let (h, w) = mask.dims();
    let mut out = header(MASK_MAGIC, h, w, h * w);
    out.extend_from_slice(mask.labels());
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<LabelMap> {
    let (h, w, payload) = parse_header(bytes, MASK_MAGIC, 1)?;
    if let Some(bad) = payload.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::format(format!("mask label {bad} out of range")));
    }
    LabelMap::new(h, w, payload.to_vec())
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_image(img)).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_mask(path: &Path, mask: &LabelMap) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: &Path) -> Result<LabelMap> {
    decode_mask(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ErrorKind;

    #[test]
    fn image_round_trip_within_f32() {
        let data: Vec<f64> = (0..32 * 36)
            .map(|i| (i as f64 * 0.37).sin().abs())
            .collect();
        let img = Image::new(32, 36, data).unwrap();
        let back = decode_image(&encode_image(&img)).unwrap();
        assert_eq!(back.dims(), (32, 36));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        // Stored values are already f32, so a second trip is exact.
        assert_eq!(decode_image(&encode_image(&back)).unwrap(), back);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_mask(&LabelMap::new(1, 2, vec![3, 1]).unwrap());
        assert_eq!(
            bytes,
            [b'P', b'H', b'M', b'1', 1, 0, 0, 0, 2, 0, 0, 0, 3, 1]
        );
    }

    #[test]
    fn rejects_bad_files() {
        let mask = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let good = encode_mask(&mask);
        assert_eq!(decode_mask(&good).unwrap(), mask);
        assert_eq!(
            decode_mask(&good[..good.len() - 1]).unwrap_err().kind(),
            ErrorKind::Format
        );
        assert_eq!(
            decode_mask(&good[..5]).unwrap_err().kind(),
            ErrorKind::Format
        );
        assert_eq!(decode_image(&good).unwrap_err().kind(), ErrorKind::Format);
        let mut four = good.clone();
        four[HEADER_LEN] = 4;
        assert_eq!(decode_mask(&four).unwrap_err().kind(), ErrorKind::Format);
        let mut long = good;
        long.push(0);
        assert_eq!(decode_mask(&long).unwrap_err().kind(), ErrorKind::Format);
    }
}
