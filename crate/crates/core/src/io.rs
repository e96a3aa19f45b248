//! File formats shared by the command-line tools.
//!
//! * distribution: `{"F": [9 floats]}`, row-major; other fields are ignored
//! * rotation set: a JSON array of row-major 9-element rows, optionally
//!   wrapped as `{"rotations": [...]}`, or an array of `[w, x, y, z]` quaternions
//! * single rotation: `{"R": [9 floats]}` or a bare 9-element array
//! * images: binary PGM (P5) and PPM (P6), 8-bit

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::FisherParams;
use crate::rotation::{quat_to_rot, RotationMatrix, UnitQuaternion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    #[serde(rename = "F")]
    pub f: FisherParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationSet {
    pub rotations: Vec<RotationMatrix>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RotationSetJson {
    Wrapped { rotations: Vec<RotationMatrix> },
    Bare(Vec<RotationMatrix>),
    Quaternions(Vec<[f64; 4]>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationLabel {
    #[serde(rename = "R")]
    pub r: RotationMatrix,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RotationLabelJson {
    Wrapped {
        #[serde(rename = "R")]
        r: RotationMatrix,
    },
    Bare(RotationMatrix),
}

pub fn parse_distribution(text: &str) -> Result<FisherParams> {
    Ok(serde_json::from_str::<DistributionFile>(text)?.f)
}

pub fn parse_rotations(text: &str) -> Result<Vec<RotationMatrix>> {
    match serde_json::from_str::<RotationSetJson>(text) {
        Ok(RotationSetJson::Wrapped { rotations } | RotationSetJson::Bare(rotations)) => Ok(rotations),
        Ok(RotationSetJson::Quaternions(qs)) => qs
            .iter()
            .map(|q| UnitQuaternion::normalized(q[0], q[1], q[2], q[3]).map(|q| quat_to_rot(&q)))
            .collect(),
        Err(e) => Err(Error::validation(format!("rotation set: {e}"))),
    }
}

pub fn rotations_to_json(rotations: &[RotationMatrix]) -> Result<String> {
    Ok(serde_json::to_string(rotations)?)
}

pub fn parse_rotation(text: &str) -> Result<RotationMatrix> {
    match serde_json::from_str::<RotationLabelJson>(text) {
        Ok(RotationLabelJson::Wrapped { r } | RotationLabelJson::Bare(r)) => Ok(r),
        Err(e) => Err(Error::validation(format!("rotation: {e}"))),
    }
}

/// An 8-bit raster as read from a PNM file.
#[derive(Clone, Debug, PartialEq)]
pub enum Raster {
    Gray(GrayImage),
    Rgb(RgbImage),
}

impl Raster {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            Raster::Gray(g) => g.dimensions(),
            Raster::Rgb(c) => c.dimensions(),
        }
    }
}

pub fn read_pnm(path: &Path) -> Result<Raster> {
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    if reader.format() != Some(ImageFormat::Pnm) {
        return Err(Error::validation(format!("{} is not a PNM image", path.display())));
    }
    Ok(match reader.decode()? {
        DynamicImage::ImageLuma8(g) => Raster::Gray(g),
        DynamicImage::ImageRgb8(c) => Raster::Rgb(c),
        other => match other.color().channel_count() {
            1 | 2 => Raster::Gray(other.to_luma8()),
            _ => Raster::Rgb(other.to_rgb8()),
        },
    })
}

pub fn write_pnm(path: &Path, raster: &Raster) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    encode_pnm(out, raster)
}

pub fn encode_pnm<W: Write>(out: W, raster: &Raster) -> Result<()> {
    let (w, h) = raster.dimensions();
    match raster {
        Raster::Gray(g) => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(g.as_raw(), w, h, ExtendedColorType::L8)?,
        Raster::Rgb(c) => PnmEncoder::new(out)
            .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
            .write_image(c.as_raw(), w, h, ExtendedColorType::Rgb8)?,
    }
    Ok(())
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_pnm(path, &Raster::Rgb(img.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    #[test]
    fn distribution_ignores_extra_fields() {
        let f = parse_distribution(r#"{"F":[5,0,0,0,5,0,0,0,5],"note":"x"}"#).unwrap();
        assert_eq!(f.to_row_major()[4], 5.0);
        assert!(parse_distribution(r#"{"F":[5,0,0]}"#).is_err());
    }

    #[test]
    fn rotation_shapes() {
        let id = "[1,0,0,0,1,0,0,0,1]";
        assert_eq!(parse_rotations(&format!("[{id},{id}]")).unwrap().len(), 2);
        assert_eq!(parse_rotations(&format!(r#"{{"rotations":[{id}]}}"#)).unwrap().len(), 1);
        let q = parse_rotations("[[1,0,0,0],[0,0,0,2]]").unwrap();
        assert_eq!(q[0], RotationMatrix::identity());
        assert!((q[1].matrix()[(0, 0)] + 1.0).abs() < 1e-15);
        assert_eq!(parse_rotation(id).unwrap(), RotationMatrix::identity());
        assert_eq!(parse_rotation(&format!(r#"{{"R":{id}}}"#)).unwrap(), RotationMatrix::identity());
        assert!(parse_rotation("[1,0,0,0,1,0,0,0,2]").is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let dir = std::env::temp_dir().join(format!("matfisher-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let rgb = Raster::Rgb(RgbImage::from_fn(5, 3, |x, y| Rgb([x as u8 * 40, y as u8 * 80, 7])));
        let gray = Raster::Gray(GrayImage::from_fn(4, 6, |x, y| Luma([(x * 10 + y) as u8])));
        for (name, img) in [("a.ppm", &rgb), ("b.pgm", &gray)] {
            let p = dir.join(name);
            write_pnm(&p, img).unwrap();
            assert_eq!(&read_pnm(&p).unwrap(), img);
        }
        let mut bytes = Vec::new();
        encode_pnm(&mut bytes, &gray).unwrap();
        assert!(bytes.starts_with(b"P5"));
        std::fs::write(dir.join("c.ppm"), b"not an image").unwrap();
        assert!(read_pnm(&dir.join("c.ppm")).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
