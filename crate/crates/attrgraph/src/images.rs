//! PNG input/output and on-disk datasets.
//!
//! A dataset directory holds `images/<id>` PNG files and a CelebA-style
//! annotation file `list_attr.txt`. Pixels are stored as 8-bit RGB, so a
//! reload quantizes values to multiples of 2/255.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use attrgraph_core::dataset::{Dataset, Sample};

use crate::error::{Error, Result};
use crate::formats::{read_annotations, write_celeba, write_text, Annotations};

pub const ANNOTATION_FILE: &str = "list_attr.txt";
pub const IMAGE_DIR: &str = "images";

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

fn from_byte(b: u8) -> f64 {
    f64::from(b) / 127.5 - 1.0
}

fn image_err(path: &Path, message: impl ToString) -> Error {
    Error::Image { path: path.into(), message: message.to_string() }
}

/// Write a planar `3×height×width` image with values in `[−1, 1]`.
pub fn write_png(path: &Path, planar: &[f64], height: usize, width: usize) -> Result<()> {
    let plane = height * width;
    if planar.len() != 3 * plane {
        return Err(image_err(path, format!("{} values for a 3×{height}×{width} image", planar.len())));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|p| (0..3).map(move |c| to_byte(planar[c * plane + p])))
        .collect();
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e))
}

/// Read an 8-bit RGB or RGBA PNG of the given square size as planar `[−1, 1]`.
pub fn read_png(path: &Path, size: usize) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(|e| image_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    if info.width as usize != size || info.height as usize != size {
        return Err(image_err(path, format!("{}×{} image, expected {size}×{size}", info.width, info.height)));
    }
    let stride = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
        (c, d) => return Err(image_err(path, format!("unsupported pixel format {c:?}/{d:?}"))),
    };
    let plane = size * size;
    let mut out = vec![0.0; 3 * plane];
    for (p, px) in buf[..info.buffer_size()].chunks_exact(stride).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = from_byte(px[c]);
        }
    }
    Ok(out)
}

/// Tile equally sized planar images into one image, row by row.
pub fn tile(images: &[Vec<f64>], columns: usize, size: usize) -> (Vec<f64>, usize, usize) {
    let columns = columns.max(1);
    let rows = images.len().div_ceil(columns).max(1);
    let (h, w) = (rows * size, columns * size);
    let mut out = vec![-1.0; 3 * h * w];
    for (n, img) in images.iter().enumerate() {
        let (gy, gx) = (n / columns * size, n % columns * size);
        for c in 0..3 {
            for y in 0..size {
                for x in 0..size {
                    out[c * h * w + (gy + y) * w + gx + x] = img[c * size * size + y * size + x];
                }
            }
        }
    }
    (out, h, w)
}

/// Write samples as PNG files plus the annotation file.
pub fn write_dataset(dir: &Path, names: &[String], image_size: usize, samples: &[Sample]) -> Result<()> {
    for s in samples {
        write_png(&dir.join(IMAGE_DIR).join(&s.id), &s.image, image_size, image_size)?;
    }
    let annotations = Annotations {
        names: names.to_vec(),
        rows: samples.iter().map(|s| (s.id.clone(), s.attributes.clone())).collect(),
    };
    write_text(&dir.join(ANNOTATION_FILE), &write_celeba(&annotations))
}

/// Load a dataset directory written by [`write_dataset`] or laid out the same way.
pub fn load_dataset(dir: &Path, image_size: usize) -> Result<Dataset> {
    let annotations = read_annotations(&dir.join(ANNOTATION_FILE))?;
    let samples = annotations
        .rows
        .into_iter()
        .map(|(id, attributes)| {
            let image = read_png(&dir.join(IMAGE_DIR).join(&id), image_size)?;
            Ok(Sample { id, image, attributes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_samples(annotations.names, image_size, samples)?)
}
