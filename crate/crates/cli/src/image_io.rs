//! Image, class-map and overlay files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader, RgbImage};
use rdrnet_core::metrics::{LabelMap, IGNORE_INDEX};
use rdrnet_core::{Dims, Element, Tensor4};

/// Per-channel normalization applied to `[0, 1]` pixel values.
pub const MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const STD: [f64; 3] = [0.229, 0.224, 0.225];

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .with_context(|| format!("cannot open {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("cannot read {}", path.display()))?
        .decode()
        .with_context(|| format!("cannot decode {}", path.display()))
}

/// Reads an 8-bit RGB image (PNG or binary PPM).
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    match decode(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        other => bail!("{}: expected 8-bit RGB, got {:?}", path.display(), other.color()),
    }
}

/// Reads an 8-bit single-channel label map (binary PGM or PNG).
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    match decode(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            Ok(LabelMap::new(1, h as usize, w as usize, img.into_raw())?)
        }
        other => bail!("{}: expected 8-bit grayscale labels, got {:?}", path.display(), other.color()),
    }
}

/// Normalized `(1, 3, h, w)` input tensor.
pub fn to_tensor<T: Element>(img: &RgbImage) -> Tensor4<T> {
    let (w, h) = img.dimensions();
    Tensor4::from_fn(Dims::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        let v = img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0;
        T::from_f64((v - MEAN[c]) / STD[c])
    })
}

fn write_pnm(path: &Path, subtype: PnmSubtype, data: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let mut bytes = Vec::new();
    PnmEncoder::new(&mut bytes)
        .with_subtype(subtype)
        .write_image(data, w, h, color)
        .with_context(|| format!("cannot encode {}", path.display()))?;
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the first batch item of a label map as a binary PGM (P5).
pub fn write_class_map(path: &Path, labels: &LabelMap) -> Result<()> {
    let data = &labels.data[..labels.h * labels.w];
    let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
    write_pnm(path, subtype, data, labels.w as u32, labels.h as u32, ExtendedColorType::L8)
}

const CITYSCAPES: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

/// Class colour: the Cityscapes palette for the first 19 classes, a fixed
/// hash beyond, black for the ignore label.
pub fn palette(class: u8) -> [u8; 3] {
    if class == IGNORE_INDEX {
        return [0, 0, 0];
    }
    match CITYSCAPES.get(class as usize) {
        Some(&c) => c,
        None => {
            let h = (class as u32).wrapping_mul(2_654_435_761);
            [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
        }
    }
}

/// Half-and-half blend of the image and the class colours.
pub fn overlay(img: &RgbImage, labels: &LabelMap) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    if (labels.w, labels.h) != (w as usize, h as usize) {
        bail!("overlay: labels are {}x{}, image is {h}x{w}", labels.h, labels.w);
    }
    Ok(RgbImage::from_fn(w, h, |x, y| {
        let c = palette(labels.data[y as usize * labels.w + x as usize]);
        let p = img.get_pixel(x, y).0;
        image::Rgb([0, 1, 2].map(|i| ((p[i] as u16 + c[i] as u16) / 2) as u8))
    }))
}

/// Saves an RGB image as PNG or binary PPM (P6), chosen by extension.
pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("png") => img
            .save_with_format(path, image::ImageFormat::Png)
            .with_context(|| format!("cannot write {}", path.display())),
        Some("ppm") => {
            let subtype = PnmSubtype::Pixmap(SampleEncoding::Binary);
            write_pnm(path, subtype, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        }
        _ => bail!("{}: overlay must end in .png or .ppm", path.display()),
    }
}
