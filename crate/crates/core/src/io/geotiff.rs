//! GeoTIFF reader/writer built on the `tiff` codec crate. Handles 1-4
//! band BlackIsZero images of u8/u16/f32 samples, stored chunky
//! (pixel-interleaved) on disk and band-sequential in memory.
//! Georeferencing uses ModelPixelScale + ModelTiepoint with a small
//! geographic-CRS GeoKey directory; nodata travels in the GDAL_NODATA
//! ascii tag.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::colortype::{ColorType, Gray16, Gray32Float, Gray8};
use tiff::encoder::{Compression, DeflateLevel, TiffEncoder};
use tiff::tags::{PhotometricInterpretation, SampleFormat, Tag};
use tiff::ColorType as DecodedColor;

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, RasterGrid, Samples};

const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;
const TAG_GDAL_NODATA: u16 = 42113;

/// GeoKey directory for a plain geographic lat/lon CRS on WGS84:
/// model type geographic, raster type pixel-is-area, geographic CRS 4326,
/// angular unit degree.
const GEO_KEYS: [u16; 20] = [
    1, 1, 0, 4, // version, revision, minor, key count
    1024, 0, 1, 2, // model type: geographic
    1025, 0, 1, 1, // raster type: pixel is area
    2048, 0, 1, 4326, // geodetic CRS
    2054, 0, 1, 9102, // angular unit: degree
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TiffCompression {
    None,
    Deflate,
}

// Multiband colortypes the codec crate does not ship. BlackIsZero with
// 2-4 samples per pixel covers every product this pipeline writes.
macro_rules! multiband_colortype {
    ($name:ident, $inner:ty, $bits:expr, $fmt:expr, $n:expr) => {
        struct $name;
        impl ColorType for $name {
            type Inner = $inner;
            const TIFF_VALUE: PhotometricInterpretation = PhotometricInterpretation::BlackIsZero;
            const BITS_PER_SAMPLE: &'static [u16] = &[$bits; $n];
            const SAMPLE_FORMAT: &'static [SampleFormat] = &[$fmt; $n];
            fn horizontal_predict(_: &[Self::Inner], _: &mut Vec<Self::Inner>) {
                unreachable!("horizontal predictor is never enabled")
            }
        }
    };
}

multiband_colortype!(GrayU8x2, u8, 8, SampleFormat::Uint, 2);
multiband_colortype!(GrayU8x3, u8, 8, SampleFormat::Uint, 3);
multiband_colortype!(GrayU8x4, u8, 8, SampleFormat::Uint, 4);
multiband_colortype!(GrayU16x2, u16, 16, SampleFormat::Uint, 2);
multiband_colortype!(GrayU16x3, u16, 16, SampleFormat::Uint, 3);
multiband_colortype!(GrayU16x4, u16, 16, SampleFormat::Uint, 4);
multiband_colortype!(GrayF32x2, f32, 32, SampleFormat::IEEEFP, 2);
multiband_colortype!(GrayF32x3, f32, 32, SampleFormat::IEEEFP, 3);
multiband_colortype!(GrayF32x4, f32, 32, SampleFormat::IEEEFP, 4);

/// Band-sequential memory order to chunky disk order.
fn interleave<T: Copy + Default>(data: &[T], pixels: usize, bands: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for p in 0..pixels {
        for b in 0..bands {
            out[p * bands + b] = data[b * pixels + p];
        }
    }
    out
}

/// Chunky disk order back to band-sequential memory order.
fn deinterleave<T: Copy + Default>(data: &[T], pixels: usize, bands: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for p in 0..pixels {
        for b in 0..bands {
            out[b * pixels + p] = data[p * bands + b];
        }
    }
    out
}

fn write_typed<C, W>(
    encoder: &mut TiffEncoder<W>,
    grid: &RasterGrid,
    data: &[C::Inner],
) -> Result<()>
where
    C: ColorType,
    W: std::io::Write + std::io::Seek,
    [C::Inner]: tiff::encoder::TiffValue,
{
    let mut image = encoder.new_image::<C>(grid.width() as u32, grid.height() as u32)?;
    let t = grid.transform();
    image
        .encoder()
        .write_tag(Tag::Unknown(TAG_MODEL_PIXEL_SCALE), &[t.pixel_width, t.pixel_height, 0.0][..])?;
    image.encoder().write_tag(
        Tag::Unknown(TAG_MODEL_TIEPOINT),
        &[0.0, 0.0, 0.0, t.origin_lon, t.origin_lat, 0.0][..],
    )?;
    image.encoder().write_tag(Tag::Unknown(TAG_GEO_KEY_DIRECTORY), &GEO_KEYS[..])?;
    if let Some(nd) = grid.nodata() {
        image.encoder().write_tag(Tag::Unknown(TAG_GDAL_NODATA), format!("{nd}").as_str())?;
    }
    image.write_data(data)?;
    Ok(())
}

pub fn write(path: &Path, grid: &RasterGrid, compression: TiffCompression) -> Result<()> {
    if grid.bands() > 4 {
        return Err(Error::UnsupportedTiff(format!(
            "{} bands exceed the 4-band writer limit",
            grid.bands()
        )));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = TiffEncoder::new(file)?.with_compression(match compression {
        TiffCompression::None => Compression::Uncompressed,
        TiffCompression::Deflate => Compression::Deflate(DeflateLevel::default()),
    });
    let pixels = grid.pixel_count();
    let bands = grid.bands();
    match grid.samples() {
        Samples::U8(v) => {
            let chunky = interleave(v, pixels, bands);
            match bands {
                1 => write_typed::<Gray8, _>(&mut encoder, grid, &chunky),
                2 => write_typed::<GrayU8x2, _>(&mut encoder, grid, &chunky),
                3 => write_typed::<GrayU8x3, _>(&mut encoder, grid, &chunky),
                _ => write_typed::<GrayU8x4, _>(&mut encoder, grid, &chunky),
            }
        }
        Samples::U16(v) => {
            let chunky = interleave(v, pixels, bands);
            match bands {
                1 => write_typed::<Gray16, _>(&mut encoder, grid, &chunky),
                2 => write_typed::<GrayU16x2, _>(&mut encoder, grid, &chunky),
                3 => write_typed::<GrayU16x3, _>(&mut encoder, grid, &chunky),
                _ => write_typed::<GrayU16x4, _>(&mut encoder, grid, &chunky),
            }
        }
        Samples::F32(v) => {
            let chunky = interleave(v, pixels, bands);
            match bands {
                1 => write_typed::<Gray32Float, _>(&mut encoder, grid, &chunky),
                2 => write_typed::<GrayF32x2, _>(&mut encoder, grid, &chunky),
                3 => write_typed::<GrayF32x3, _>(&mut encoder, grid, &chunky),
                _ => write_typed::<GrayF32x4, _>(&mut encoder, grid, &chunky),
            }
        }
    }
}

pub fn read(path: &Path) -> Result<RasterGrid> {
    let file = BufReader::new(File::open(path)?);
    let mut decoder = Decoder::new(file)?.with_limits(Limits::unlimited());

    let (width, height) = decoder.dimensions()?;
    let (width, height) = (width as usize, height as usize);
    let bands = match decoder.colortype()? {
        DecodedColor::Gray(_) => 1,
        DecodedColor::Multiband { num_samples, .. } => num_samples as usize,
        DecodedColor::RGB(_) => 3,
        DecodedColor::RGBA(_) => 4,
        other => {
            return Err(Error::UnsupportedTiff(format!("color type {other:?}")));
        }
    };

    let scale = decoder
        .find_tag(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))?
        .ok_or_else(|| Error::UnsupportedTiff("missing ModelPixelScale tag".into()))
        .and_then(|_| Ok(decoder.get_tag_f64_vec(Tag::Unknown(TAG_MODEL_PIXEL_SCALE))?))?;
    let tiepoint = decoder
        .find_tag(Tag::Unknown(TAG_MODEL_TIEPOINT))?
        .ok_or_else(|| Error::UnsupportedTiff("missing ModelTiepoint tag".into()))
        .and_then(|_| Ok(decoder.get_tag_f64_vec(Tag::Unknown(TAG_MODEL_TIEPOINT))?))?;
    if scale.len() < 2 || tiepoint.len() < 6 {
        return Err(Error::UnsupportedTiff("short georeferencing tag".into()));
    }
    // Tiepoint maps raster point (i, j) to model point (x, y); shift back
    // to the raster origin.
    let transform = GeoTransform::new(
        tiepoint[3] - tiepoint[0] * scale[0],
        tiepoint[4] + tiepoint[1] * scale[1],
        scale[0],
        scale[1],
    )?;

    let nodata = match decoder.find_tag(Tag::Unknown(TAG_GDAL_NODATA))? {
        None => None,
        Some(_) => {
            let text = decoder.get_tag_ascii_string(Tag::Unknown(TAG_GDAL_NODATA))?;
            let trimmed = text.trim_end_matches('\0').trim().to_string();
            Some(trimmed.parse::<f64>().map_err(|_| {
                Error::UnsupportedTiff(format!("unparseable nodata value {trimmed:?}"))
            })?)
        }
    };

    // Planar files arrive band-sequential already; chunky needs the swap.
    let chunky = match decoder.find_tag(Tag::PlanarConfiguration)? {
        Some(v) => v.into_u16().map(|p| p == 1).unwrap_or(true),
        None => true,
    };

    let pixels = width * height;
    let samples = match decoder.read_image()? {
        DecodingResult::U8(v) => {
            Samples::U8(if chunky && bands > 1 { deinterleave(&v, pixels, bands) } else { v })
        }
        DecodingResult::U16(v) => {
            Samples::U16(if chunky && bands > 1 { deinterleave(&v, pixels, bands) } else { v })
        }
        DecodingResult::F32(v) => {
            Samples::F32(if chunky && bands > 1 { deinterleave(&v, pixels, bands) } else { v })
        }
        other => {
            return Err(Error::UnsupportedTiff(format!("sample type {other:?}")));
        }
    };

    RasterGrid::new(width, height, bands, samples, nodata, transform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Dtype;

    #[test]
    fn plain_tiff_without_geo_tags_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bare.tif");
        let file = BufWriter::new(File::create(&p).unwrap());
        let mut enc = TiffEncoder::new(file).unwrap();
        enc.write_image::<Gray8>(2, 2, &[1, 2, 3, 4]).unwrap();
        drop(enc);
        assert!(matches!(read(&p), Err(Error::UnsupportedTiff(_))));
    }

    #[test]
    fn truncated_file_is_a_tiff_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trunc.tif");
        std::fs::write(&p, b"II*\0garbage").unwrap();
        assert!(matches!(read(&p), Err(Error::Tiff(_))));
    }

    #[test]
    fn nodata_tag_roundtrips_fractional_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frac.tif");
        let t = GeoTransform::new(5.0, 6.0, 0.25, 0.25).unwrap();
        let g = RasterGrid::filled(3, 3, 1, Dtype::F32, 0.5, Some(-0.125), t).unwrap();
        write(&p, &g, TiffCompression::None).unwrap();
        assert_eq!(read(&p).unwrap().nodata(), Some(-0.125));
    }

    #[test]
    fn five_band_writes_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let t = GeoTransform::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let g = RasterGrid::filled(2, 2, 5, Dtype::U8, 0.0, None, t).unwrap();
        let err = write(&dir.path().join("five.tif"), &g, TiffCompression::None).unwrap_err();
        assert!(matches!(err, Error::UnsupportedTiff(_)));
    }
}
