//! Image files in and out: binary PPM (P6) natively, PNG and baseline JPEG
//! through the `image` crate, and the EXIF orientation tag (0x0112) read
//! and written directly in the JPEG APP1 segment.
//!
//! Decoded pixels are raw: the EXIF rotation is reported, never applied.

use crate::datapipe::{rotate_image, OrientationLabel};
use crate::error::{DecodeError, Error, Result};
use crate::tensor::Tensor;
use image::ImageEncoder;
use std::io::Cursor;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
    Jpeg,
}

impl ImageFormat {
    pub fn from_extension(path: &Path) -> Option<ImageFormat> {
        match path
            .extension()
            .map(|e| e.to_string_lossy().to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") => Some(ImageFormat::Ppm),
            Some("png") => Some(ImageFormat::Png),
            Some("jpg") | Some("jpeg") => Some(ImageFormat::Jpeg),
            _ => None,
        }
    }
}

/// A decoded image: planar [3,h,w] pixels in 0..=255, plus the EXIF
/// orientation when the source carried one.
#[derive(Debug, Clone)]
pub struct ImageFile {
    pub pixels: Tensor,
    pub exif_orientation: Option<u8>,
    pub format: ImageFormat,
}

pub fn decode(path: impl AsRef<Path>) -> Result<ImageFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bytes(&bytes, path)
}

/// Sniffs the format from magic bytes, independent of the file name.
pub fn decode_bytes(bytes: &[u8], path: &Path) -> Result<ImageFile> {
    if bytes.starts_with(b"P6") {
        return decode_ppm(bytes, path);
    }
    if bytes.starts_with(b"P3") || bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        return Err(Error::decode(
            path,
            DecodeError::Unsupported {
                detail: "only binary P6 PPM is supported".into(),
            },
        ));
    }
    if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| {
                Error::decode(
                    path,
                    DecodeError::CorruptNoOffset {
                        detail: e.to_string(),
                    },
                )
            })?;
        return Ok(ImageFile {
            pixels: rgb8_to_planar(&img.to_rgb8()),
            exif_orientation: None,
            format: ImageFormat::Png,
        });
    }
    if bytes.starts_with(&[0xFF, 0xD8]) {
        let exif = scan_jpeg_exif_orientation(bytes);
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)
            .map_err(|e| {
                Error::decode(
                    path,
                    DecodeError::CorruptNoOffset {
                        detail: e.to_string(),
                    },
                )
            })?;
        return Ok(ImageFile {
            pixels: rgb8_to_planar(&img.to_rgb8()),
            exif_orientation: exif.filter(|v| (1..=8).contains(v)),
            format: ImageFormat::Jpeg,
        });
    }
    Err(Error::decode(path, DecodeError::UnknownFormat))
}

fn rgb8_to_planar(img: &image::RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    let plane = h * w;
    for (i, px) in img.pixels().enumerate() {
        data[i] = px.0[0] as f32;
        data[plane + i] = px.0[1] as f32;
        data[2 * plane + i] = px.0[2] as f32;
    }
    Tensor::new(&[3, h, w], data).expect("planar image shape")
}

/// Rounds planar [3,h,w] floats back to interleaved bytes.
fn planar_to_rgb8(pixels: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let shape = pixels.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Data(format!(
            "encoding expects a [3,h,w] image, got {shape:?}"
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let plane = h * w;
    let data = pixels.data();
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            bytes.push(data[ch * plane + i].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((w, h, bytes))
}

// PPM (P6)

fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ImageFile> {
    let corrupt = |offset: usize, detail: &str| {
        Error::decode(
            path,
            DecodeError::Corrupt {
                offset,
                detail: detail.into(),
            },
        )
    };
    let mut pos = 2; // past "P6"

    // Whitespace and '#' comments separate the three header tokens.
    let next_token = |pos: &mut usize| -> Result<usize> {
        loop {
            match bytes.get(*pos) {
                Some(b) if b.is_ascii_whitespace() => *pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(*pos) {
                        *pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                Some(_) => return Err(corrupt(*pos, "expected digit in header")),
                None => return Err(corrupt(*pos, "truncated header")),
            }
        }
        let start = *pos;
        while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
            *pos += 1;
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| corrupt(start, "unparsable header number"))
    };

    let w = next_token(&mut pos)?;
    let h = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if w == 0 || h == 0 {
        return Err(corrupt(2, "zero image extent"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(corrupt(pos, "maxval out of range"));
    }
    if maxval > 255 {
        return Err(Error::decode(
            path,
            DecodeError::Unsupported {
                detail: format!("16-bit PPM (maxval {maxval}) is not supported"),
            },
        ));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(corrupt(pos, "expected single whitespace after maxval")),
    }
    let need = 3 * w * h;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| corrupt(bytes.len(), "truncated pixel data"))?;

    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        data[i] = px[0] as f32;
        data[plane + i] = px[1] as f32;
        data[2 * plane + i] = px[2] as f32;
    }
    Ok(ImageFile {
        pixels: Tensor::new(&[3, h, w], data)?,
        exif_orientation: None,
        format: ImageFormat::Ppm,
    })
}

/// Canonical P6 bytes: "P6\n{w} {h}\n255\n" followed by the raster.
pub fn encode_ppm(pixels: &Tensor) -> Result<Vec<u8>> {
    let (w, h, raster) = planar_to_rgb8(pixels)?;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&raster);
    Ok(out)
}

pub fn encode_png(pixels: &Tensor) -> Result<Vec<u8>> {
    let (w, h, raster) = planar_to_rgb8(pixels)?;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&raster, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Data(format!("png encode failed: {e}")))?;
    Ok(out)
}

/// Baseline JPEG at the given quality; `exif_orientation` inserts a minimal
/// APP1 segment when set.
pub fn encode_jpeg(pixels: &Tensor, quality: u8, exif_orientation: Option<u8>) -> Result<Vec<u8>> {
    let (w, h, raster) = planar_to_rgb8(pixels)?;
    let mut out = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut Cursor::new(&mut out), quality)
        .write_image(&raster, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Data(format!("jpeg encode failed: {e}")))?;
    match exif_orientation {
        Some(v) => insert_jpeg_exif_orientation(&out, v),
        None => Ok(out),
    }
}

pub const JPEG_WRITE_QUALITY: u8 = 95;

/// Encodes `pixels` in `format` and writes the file.
pub fn write_image(
    path: impl AsRef<Path>,
    pixels: &Tensor,
    format: ImageFormat,
    exif_orientation: Option<u8>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Ppm => encode_ppm(pixels)?,
        ImageFormat::Png => encode_png(pixels)?,
        ImageFormat::Jpeg => encode_jpeg(pixels, JPEG_WRITE_QUALITY, exif_orientation)?,
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// EXIF orientation tag (0x0112) in the JPEG APP1 segment.

const EXIF_HEADER: &[u8; 6] = b"Exif\0\0";
const ORIENTATION_TAG: u16 = 0x0112;

/// Walks the JPEG segment list looking for an APP1/Exif block and the
/// orientation tag in IFD0. Structural surprises yield None; the pixel
/// decoder reports real corruption separately.
fn scan_jpeg_exif_orientation(bytes: &[u8]) -> Option<u8> {
    let mut pos = 2usize; // past SOI
    loop {
        if pos + 4 > bytes.len() || bytes[pos] != 0xFF {
            return None;
        }
        let marker = bytes[pos + 1];
        match marker {
            0xD8 | 0x01 | 0xD0..=0xD7 => {
                pos += 2;
                continue;
            }
            0xD9 | 0xDA => return None, // EOI / start of scan
            _ => {}
        }
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > bytes.len() {
            return None;
        }
        let seg = &bytes[pos + 4..pos + 2 + len];
        if marker == 0xE1 && seg.starts_with(EXIF_HEADER) {
            return parse_tiff_orientation(&seg[EXIF_HEADER.len()..]);
        }
        pos += 2 + len;
    }
}

fn parse_tiff_orientation(tiff: &[u8]) -> Option<u8> {
    if tiff.len() < 8 {
        return None;
    }
    let big_endian = match &tiff[0..2] {
        b"II" => false,
        b"MM" => true,
        _ => return None,
    };
    let u16_at = |off: usize| -> Option<u16> {
        let b = tiff.get(off..off + 2)?;
        Some(if big_endian {
            u16::from_be_bytes([b[0], b[1]])
        } else {
            u16::from_le_bytes([b[0], b[1]])
        })
    };
    let u32_at = |off: usize| -> Option<u32> {
        let b = tiff.get(off..off + 4)?;
        Some(if big_endian {
            u32::from_be_bytes([b[0], b[1], b[2], b[3]])
        } else {
            u32::from_le_bytes([b[0], b[1], b[2], b[3]])
        })
    };
    if u16_at(2)? != 42 {
        return None;
    }
    let ifd0 = u32_at(4)? as usize;
    let count = u16_at(ifd0)? as usize;
    for i in 0..count {
        let entry = ifd0 + 2 + i * 12;
        if u16_at(entry)? == ORIENTATION_TAG {
            // Type SHORT, count 1: the value sits in the first two bytes
            // of the value field.
            if u16_at(entry + 2)? != 3 {
                return None;
            }
            return u16_at(entry + 8).map(|v| v as u8);
        }
    }
    None
}

/// Minimal APP1 payload: TIFF header plus a single-entry IFD0 holding the
/// orientation tag.
fn exif_app1_segment(orientation: u8) -> Vec<u8> {
    let mut tiff = Vec::with_capacity(26);
    tiff.extend_from_slice(b"II");
    tiff.extend_from_slice(&42u16.to_le_bytes());
    tiff.extend_from_slice(&8u32.to_le_bytes()); // IFD0 offset
    tiff.extend_from_slice(&1u16.to_le_bytes()); // entry count
    tiff.extend_from_slice(&ORIENTATION_TAG.to_le_bytes());
    tiff.extend_from_slice(&3u16.to_le_bytes()); // SHORT
    tiff.extend_from_slice(&1u32.to_le_bytes()); // value count
    tiff.extend_from_slice(&(orientation as u16).to_le_bytes());
    tiff.extend_from_slice(&0u16.to_le_bytes()); // value padding
    tiff.extend_from_slice(&0u32.to_le_bytes()); // next IFD

    let payload_len = EXIF_HEADER.len() + tiff.len();
    let mut seg = Vec::with_capacity(4 + payload_len);
    seg.push(0xFF);
    seg.push(0xE1);
    seg.extend_from_slice(&((payload_len + 2) as u16).to_be_bytes());
    seg.extend_from_slice(EXIF_HEADER);
    seg.extend_from_slice(&tiff);
    seg
}

/// Returns the JPEG with exactly one APP1/Exif segment, right after SOI,
/// carrying the given orientation; any existing Exif segments are dropped.
pub fn insert_jpeg_exif_orientation(jpeg: &[u8], orientation: u8) -> Result<Vec<u8>> {
    if !jpeg.starts_with(&[0xFF, 0xD8]) {
        return Err(Error::Data("not a JPEG stream (missing SOI)".into()));
    }
    let mut out = Vec::with_capacity(jpeg.len() + 40);
    out.extend_from_slice(&jpeg[0..2]);
    out.extend_from_slice(&exif_app1_segment(orientation));

    let mut pos = 2usize;
    while pos + 4 <= jpeg.len() && jpeg[pos] == 0xFF {
        let marker = jpeg[pos + 1];
        if matches!(marker, 0xD9 | 0xDA | 0x01 | 0xD0..=0xD7) {
            break;
        }
        let len = u16::from_be_bytes([jpeg[pos + 2], jpeg[pos + 3]]) as usize;
        if len < 2 || pos + 2 + len > jpeg.len() {
            break;
        }
        let seg = &jpeg[pos + 4..pos + 2 + len];
        if !(marker == 0xE1 && seg.starts_with(EXIF_HEADER)) {
            out.extend_from_slice(&jpeg[pos..pos + 2 + len]);
        }
        pos += 2 + len;
    }
    out.extend_from_slice(&jpeg[pos..]);
    Ok(out)
}

/// What an EXIF orientation value means for a four-class rotation model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExifRotation {
    /// Pure rotation: stored pixels equal the upright image rotated
    /// clockwise by theta quarter turns.
    Rotation(OrientationLabel),
    /// Values 2, 4, 5, 7 involve mirroring, which the model cannot
    /// represent.
    Mirrored(u8),
}

/// Maps EXIF orientation 1/6/3/8 to theta 0/3/2/1; mirrored values are
/// reported as unsupported, anything outside 1..=8 is an error.
pub fn exif_to_theta(exif_orientation: u8) -> Result<ExifRotation> {
    match exif_orientation {
        1 => Ok(ExifRotation::Rotation(OrientationLabel::new(0)?)),
        3 => Ok(ExifRotation::Rotation(OrientationLabel::new(2)?)),
        6 => Ok(ExifRotation::Rotation(OrientationLabel::new(3)?)),
        8 => Ok(ExifRotation::Rotation(OrientationLabel::new(1)?)),
        2 | 4 | 5 | 7 => Ok(ExifRotation::Mirrored(exif_orientation)),
        other => Err(Error::Data(format!(
            "EXIF orientation must be 1..=8, got {other}"
        ))),
    }
}

/// Result of correcting one file.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionOutcome {
    pub path_out: PathBuf,
    /// Clockwise quarter turns applied ((4 - theta) mod 4).
    pub applied: OrientationLabel,
    /// True when the output was lossily re-encoded (JPEG).
    pub recompressed: bool,
}

/// Writes the pixel-rotated image with EXIF orientation reset to 1.
/// PPM and PNG round-trip losslessly; JPEG is re-encoded at quality 95 and
/// flagged as recompressed.
pub fn correct_file(
    path_in: impl AsRef<Path>,
    path_out: impl AsRef<Path>,
    theta: OrientationLabel,
) -> Result<CorrectionOutcome> {
    let path_in = path_in.as_ref();
    let path_out = path_out.as_ref();
    let decoded = decode(path_in)?;
    let out_format = ImageFormat::from_extension(path_out).ok_or_else(|| {
        Error::Data(format!(
            "unsupported output format for {} (use .ppm, .png, .jpg)",
            path_out.display()
        ))
    })?;
    let correction = theta.correction();
    let rotated = rotate_image(&decoded.pixels, correction);
    let exif = match out_format {
        ImageFormat::Jpeg => Some(1),
        _ => None,
    };
    write_image(path_out, &rotated, out_format, exif)?;
    Ok(CorrectionOutcome {
        path_out: path_out.to_path_buf(),
        applied: correction,
        recompressed: out_format == ImageFormat::Jpeg,
    })
}
