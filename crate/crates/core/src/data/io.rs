use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use super::{Dataset, ImageSample, Label, Source};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_IMAGE_SIZE: usize = 128;

/// One PNG file found under a class directory. `id` is the file stem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageEntry {
    pub id: String,
    pub label: Label,
    pub path: PathBuf,
}

fn is_hidden(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with('.'))
}

/// Lists `<root>/<class>/*.png` in sorted path order without decoding.
pub fn index_dataset(root: &Path) -> Result<Vec<ImageEntry>> {
    let mut class_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if !path.is_dir() || is_hidden(&path) {
            continue;
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let label = Label::from_name(name).ok_or_else(|| {
            Error::Data(format!(
                "unknown class directory {} (expected parasitized or uninfected)",
                path.display()
            ))
        })?;
        class_dirs.push((label, path));
    }
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no class directories under {}",
            root.display()
        )));
    }

    let mut entries = Vec::new();
    for (label, dir) in class_dirs {
        let mut found = 0;
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() || is_hidden(&path) {
                continue;
            }
            let is_png = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"));
            if !is_png {
                return Err(Error::Image {
                    path,
                    message: "unsupported image format (only PNG is accepted)".into(),
                });
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("unreadable file name {}", path.display())))?
                .to_string();
            entries.push(ImageEntry { id, label, path });
            found += 1;
        }
        if found == 0 {
            return Err(Error::Data(format!(
                "class directory {} contains no images",
                dir.display()
            )));
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));

    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::Data(format!("duplicate image id {:?}", e.id)));
        }
    }
    Ok(entries)
}

/// Decodes a PNG into `[3, size, size]` pixels in `[0, 1]`.
pub fn load_image(path: &Path, size: usize) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let pixels = tensor_from_rgb8(&img.to_rgb8());
    resize_image(&pixels, size, size)
}

/// Loads every image under `root`, resized to `size x size`.
pub fn load_dataset(root: &Path, size: usize) -> Result<Dataset> {
    let entries = index_dataset(root)?;
    let samples = entries
        .into_par_iter()
        .map(|e| {
            Ok(ImageSample {
                pixels: load_image(&e.path, size)?,
                id: e.id,
                label: e.label,
                source: Source::File(e.path),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(samples))
}

/// Bilinear resize with aligned corners, on `[c, h, w]` pixels.
pub fn resize_image(pixels: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!(
            "resize target {out_h}x{out_w} has a zero dimension"
        )));
    }
    let s = pixels.shape();
    if s.len() != 3 {
        return Err(Error::Dimension(format!("expected [c, h, w] pixels, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(pixels.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, src - lo as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let src = pixels.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..out_h {
            let (y0, y1, fy) = coord(y, h, out_h);
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                out.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

pub fn tensor_from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * h * w + y as usize * w + x as usize] = f64::from(px[ch]) / 255.0;
        }
    }
    Tensor::from_parts(vec![3, h, w], data)
}

/// Quantizes `[3, h, w]` pixels in `[0, 1]` to 8-bit RGB.
pub fn rgb8_from_tensor(pixels: &Tensor) -> Result<RgbImage> {
    let s = pixels.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Dimension(format!("expected [3, h, w] pixels, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let d = pixels.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| quantize(d[ch * h * w + y as usize * w + x as usize]);
        image::Rgb([at(0), at(1), at(2)])
    }))
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| Error::Image {
        path: PathBuf::from("<memory>"),
        message: e.to_string(),
    })?;
    Ok(buf.into_inner())
}

pub fn write_png(pixels: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_png(&rgb8_from_tensor(pixels)?)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn resize_identity() {
        let px = t(&[3, 2, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.0, 1.0, 0.5, 0.5, 0.25, 0.75, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4]);
        assert_eq!(resize_image(&px, 2, 3).unwrap(), px);
    }

    #[test]
    fn resize_constant() {
        let px = Tensor::filled(&[3, 5, 7], 0.37);
        for (h, w) in [(1, 1), (3, 11), (16, 9)] {
            let out = resize_image(&px, h, w).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.37));
        }
    }

    #[test]
    fn resize_align_corners_row() {
        let out = resize_image(&t(&[1, 2, 2], &[0.0, 1.0, 0.0, 1.0]), 2, 4).unwrap();
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in out.data().chunks(4) {
            for (a, b) in row.iter().zip(expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_zero_target() {
        assert!(matches!(resize_image(&Tensor::zeros(&[3, 2, 2]), 0, 4), Err(Error::Config(_))));
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let px = t(&[3, 2, 2], &[0.0, 1.0, 0.5, 0.25, 1.0, 0.0, 0.2, 0.4, 0.6, 0.8, 0.1, 0.9]);
        write_png(&px, &path).unwrap();
        let back = load_image(&path, 2).unwrap();
        assert_eq!(back.shape(), &[3, 2, 2]);
        assert!(back.max_abs_diff(&px) <= 0.5 / 255.0 + 1e-12);
    }
}
