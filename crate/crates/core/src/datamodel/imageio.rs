//! Raster file I/O: grayscale PNG (8/16-bit), indexed 8-bit mask PNG, and
//! single-slice NIfTI for both images and masks.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nifti::{IntoNdArray, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};

use super::raster::{GrayImage, SegmentationMask};
use crate::error::{Error, IoContext, Result};

/// Raw intensity window `[lo, hi]` mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityWindow {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for IntensityWindow {
    fn from([lo, hi]: [f64; 2]) -> Self {
        Self { lo, hi }
    }
}

/// Undecoded pixel values plus the natural range of the storage type.
#[derive(Debug, Clone)]
pub struct RawRaster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub full_range: IntensityWindow,
    /// True for palette-indexed PNGs (value = palette index).
    pub indexed: bool,
}

fn is_nifti(path: &Path) -> bool {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

pub fn read_raw(path: &Path) -> Result<RawRaster> {
    if is_nifti(path) {
        read_nifti(path)
    } else {
        read_png(path)
    }
}

fn img_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Image(format!("{}: {msg}", path.display()))
}

fn read_png(path: &Path) -> Result<RawRaster> {
    let file = File::open(path).at(path)?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| img_err(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| img_err(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let indexed = info.color_type == png::ColorType::Indexed;
    if !matches!(
        info.color_type,
        png::ColorType::Grayscale | png::ColorType::Indexed
    ) {
        return Err(img_err(
            path,
            format!("expected single-channel PNG, got {:?}", info.color_type),
        ));
    }
    let (data, max) = match info.bit_depth {
        png::BitDepth::Eight => {
            let mut out = Vec::with_capacity(w * h);
            for row in buf.chunks(info.line_size).take(h) {
                out.extend(row[..w].iter().map(|&v| f64::from(v)));
            }
            (out, 255.0)
        }
        png::BitDepth::Sixteen if !indexed => {
            let mut out = Vec::with_capacity(w * h);
            for row in buf.chunks(info.line_size).take(h) {
                out.extend(
                    row[..2 * w]
                        .chunks_exact(2)
                        .map(|b| f64::from(u16::from_be_bytes([b[0], b[1]]))),
                );
            }
            (out, 65535.0)
        }
        other => {
            return Err(img_err(path, format!("unsupported bit depth {other:?}")));
        }
    };
    Ok(RawRaster {
        height: h,
        width: w,
        data,
        full_range: IntensityWindow { lo: 0.0, hi: max },
        indexed,
    })
}

fn read_nifti(path: &Path) -> Result<RawRaster> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| img_err(path, e))?;
    let mut arr = obj
        .into_volume()
        .into_ndarray::<f64>()
        .map_err(|e| img_err(path, e))?;
    if arr.ndim() < 2 {
        return Err(img_err(path, "NIfTI volume has fewer than 2 dimensions"));
    }
    while arr.ndim() > 2 {
        if arr.shape()[2] != 1 {
            return Err(img_err(
                path,
                format!("expected a single slice, got shape {:?}", arr.shape()),
            ));
        }
        arr = arr.index_axis_move(ndarray::Axis(2), 0);
    }
    // NIfTI axes are (x, y): x indexes columns, y rows.
    let (w, h) = (arr.shape()[0], arr.shape()[1]);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(arr[&[x, y][..]]);
        }
    }
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RawRaster {
        height: h,
        width: w,
        data,
        full_range: IntensityWindow { lo, hi },
        indexed: false,
    })
}

/// Loads a grayscale image normalized to `[0, 1]` through `window`
/// (default: the storage type's full range).
pub fn load_image(path: &Path, window: Option<IntensityWindow>) -> Result<GrayImage> {
    let raw = read_raw(path)?;
    if raw.height == 0 || raw.width == 0 {
        return Err(Error::EmptyImage);
    }
    let IntensityWindow { lo, hi } = window.unwrap_or(raw.full_range);
    let span = hi - lo;
    let data = raw
        .data
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0) as f32
            } else {
                0.0
            }
        })
        .collect();
    GrayImage::new(raw.height, raw.width, data)
}

/// Loads a class-index mask and checks its values against `k`.
pub fn load_mask(path: &Path, k: usize) -> Result<SegmentationMask> {
    let raw = read_raw(path)?;
    let mut data = Vec::with_capacity(raw.data.len());
    for &v in &raw.data {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(img_err(path, format!("non-integer mask value {v}")));
        }
        data.push(v as u8);
    }
    let mask = SegmentationMask::new(raw.height, raw.width, data)?;
    mask.validate(k)?;
    Ok(mask)
}

/// Fixed overlay palette: background black, then distinct hues.
pub fn mask_palette() -> Vec<u8> {
    const BASE: [[u8; 3]; 8] = [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
    ];
    (0..256)
        .flat_map(|i| {
            if i < BASE.len() {
                BASE[i]
            } else {
                let g = (i % 200) as u8 + 40;
                [g, g, g]
            }
        })
        .collect()
}

fn encode_png<W: Write>(
    out: W,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    data: &[u8],
) -> Result<()> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(e.to_string()))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))
}

/// PNG bytes of an indexed 8-bit mask.
pub fn encode_mask_png(mask: &SegmentationMask) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    encode_png(
        &mut buf,
        mask.width,
        mask.height,
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(mask_palette()),
        &mask.data,
    )?;
    Ok(buf)
}

/// PNG bytes of an 8-bit grayscale rendering of `image`.
pub fn encode_gray_png(image: &GrayImage) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = image
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut buf = Vec::new();
    encode_png(
        &mut buf,
        image.width,
        image.height,
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        &bytes,
    )?;
    Ok(buf)
}

pub fn write_mask_png(path: &Path, mask: &SegmentationMask) -> Result<()> {
    let bytes = encode_mask_png(mask)?;
    std::fs::write(path, bytes).at(path)
}

pub fn write_gray_png(path: &Path, image: &GrayImage) -> Result<()> {
    let bytes = encode_gray_png(image)?;
    std::fs::write(path, bytes).at(path)
}

/// Writes raw 16-bit grayscale values.
pub fn write_gray16_png(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    let file = File::create(path).at(path)?;
    encode_png(
        BufWriter::new(file),
        width,
        height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &bytes,
    )
}

/// Writes a row-major `height × width` slice as a 2-D NIfTI-1 file.
pub fn write_nifti_slice(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::ShapeMismatch("NIfTI slice size".into()));
    }
    let arr = ndarray::Array2::from_shape_fn((width, height), |(x, y)| values[y * width + x]);
    nifti::writer::WriterOptions::new(path)
        .write_nifti(&arr)
        .map_err(|e| img_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_mask_round_trip_is_indexed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = SegmentationMask::new(2, 3, vec![0, 1, 2, 5, 0, 3]).unwrap();
        write_mask_png(&p, &m).unwrap();
        assert!(read_raw(&p).unwrap().indexed);
        assert_eq!(load_mask(&p, 5).unwrap(), m);
        assert!(load_mask(&p, 4).is_err());
    }

    #[test]
    fn sixteen_bit_png_with_window() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        write_gray16_png(&p, 2, 1, &[0, 65535]).unwrap();
        let full = load_image(&p, None).unwrap();
        assert_eq!(full.data, vec![0.0, 1.0]);
        let windowed = load_image(&p, Some([0.0, 32767.5].into())).unwrap();
        assert_eq!(windowed.data, vec![0.0, 1.0]);
        let mid = load_image(&p, Some([-65535.0, 65535.0].into())).unwrap();
        assert!((mid.data[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nifti_slice_orientation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.nii");
        // 2 rows x 3 cols
        write_nifti_slice(&p, 2, 3, &[0.0, 1.0, 2.0, 3.0, 0.0, 1.0]).unwrap();
        let m = load_mask(&p, 3).unwrap();
        assert_eq!((m.height, m.width), (2, 3));
        assert_eq!(m.data, vec![0, 1, 2, 3, 0, 1]);
        let img = load_image(&p, None).unwrap();
        assert_eq!(img.data[3], 1.0);
    }

    #[test]
    fn gray_png_is_deterministic() {
        let img = GrayImage::new(2, 2, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
        assert_eq!(encode_gray_png(&img).unwrap(), encode_gray_png(&img).unwrap());
    }
}
