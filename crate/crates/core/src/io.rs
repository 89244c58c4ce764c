//! File formats: COCO-style annotation JSON, detection JSON, Bayer PNG with
//! sidecar, 16-bit RGB PNG, float tensor files and profile banks.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    Annotation, BBox, BayerImage, CameraProfile, Category, ConditionTag, DatasetIndex,
    DetectionResult, ImageRecord, LinearImage, SrgbImage, TileProvenance,
};
use crate::unprocess::BayerSidecar;

/// Magic prefix of tensor files.
pub const TENSOR_MAGIC: &[u8; 8] = b"RAWDTNSR";

#[derive(Serialize, Deserialize)]
struct RawIndex {
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    categories: Vec<Category>,
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    condition: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tile: Option<TileProvenance>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    iscrowd: u8,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Parses and validates an annotation document. `origin` names the source
/// in error messages.
pub fn parse_index(text: &str, origin: &str) -> Result<DatasetIndex> {
    let raw: RawIndex = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: origin.to_owned(),
        source,
    })?;
    let mut images = Vec::with_capacity(raw.images.len());
    for img in raw.images {
        let condition: ConditionTag = img.condition.parse().map_err(|_| {
            Error::invalid(
                "image record",
                format!("image {} has unknown condition {:?}", img.id, img.condition),
            )
        })?;
        images.push(ImageRecord {
            id: img.id,
            file_name: img.file_name,
            width: img.width,
            height: img.height,
            condition,
            tile: img.tile,
        });
    }
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        let [x, y, w, h] = a.bbox;
        let bbox = BBox::new(x, y, w, h).map_err(|e| {
            Error::invalid("annotation", format!("annotation {}: {e}", a.id))
        })?;
        annotations.push(Annotation {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox,
            ignore: a.iscrowd != 0,
        });
    }
    DatasetIndex::new(images, annotations, raw.categories)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    let path = path.as_ref();
    parse_index(&read_text(path)?, &path.display().to_string())
}

/// Pretty-printed JSON with keys in a fixed order.
pub fn index_to_json(index: &DatasetIndex) -> String {
    let raw = RawIndex {
        images: index
            .images
            .iter()
            .map(|i| RawImage {
                id: i.id,
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
                condition: i.condition.to_string(),
                tile: i.tile,
            })
            .collect(),
        annotations: index
            .annotations
            .iter()
            .map(|a| RawAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                area: Some(a.bbox.area()),
                iscrowd: a.ignore as u8,
            })
            .collect(),
        categories: index.categories.clone(),
    };
    serde_json::to_string_pretty(&raw).expect("index serialises")
}

pub fn save_index(index: &DatasetIndex, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), index_to_json(index).as_bytes())
}

#[derive(Deserialize)]
struct RawDetection {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    score: f64,
}

pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<DetectionResult>> {
    let raw: Vec<RawDetection> = serde_json::from_str(text).map_err(|source| Error::Parse {
        path: origin.to_owned(),
        source,
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            let [x, y, w, h] = d.bbox;
            let det = DetectionResult {
                image_id: d.image_id,
                category_id: d.category_id,
                bbox: BBox { x, y, w, h },
                score: d.score,
            };
            det.validate()
                .map_err(|e| Error::invalid("detection", format!("entry {i}: {e}")))?;
            Ok(det)
        })
        .collect()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionResult>> {
    let path = path.as_ref();
    parse_detections(&read_text(path)?, &path.display().to_string())
}

pub fn detections_to_json(dets: &[DetectionResult]) -> String {
    let rows: Vec<serde_json::Value> = dets
        .iter()
        .map(|d| {
            serde_json::json!({
                "image_id": d.image_id,
                "category_id": d.category_id,
                "bbox": [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
                "score": d.score,
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("detections serialise")
}

pub fn load_profile_bank(path: impl AsRef<Path>) -> Result<Vec<CameraProfile>> {
    let path = path.as_ref();
    let bank: Vec<CameraProfile> =
        serde_json::from_str(&read_text(path)?).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            source,
        })?;
    if bank.is_empty() {
        return Err(Error::invalid("profile bank", "bank is empty"));
    }
    Ok(bank)
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_owned(),
        source,
    }
}

pub fn read_srgb_png(path: impl AsRef<Path>) -> Result<SrgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    SrgbImage::new(w as usize, h as usize, img.into_raw())
}

pub fn write_srgb_png(img: &SrgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .expect("buffer length checked at construction");
    buf.save(path).map_err(image_err(path))
}

/// Path of the JSON sidecar that accompanies a Bayer PNG.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Writes the 16-bit grayscale PNG and its sidecar.
pub fn write_bayer(img: &BayerImage, sidecar: &BayerSidecar, png: impl AsRef<Path>) -> Result<()> {
    let png = png.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.samples().to_vec())
            .expect("buffer length checked at construction");
    if let Some(dir) = png.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    buf.save(png).map_err(image_err(png))?;
    let text = serde_json::to_string_pretty(sidecar).expect("sidecar serialises");
    write_bytes(&sidecar_path(png), text.as_bytes())
}

/// Reads a Bayer PNG and its sidecar.
pub fn read_bayer(png: impl AsRef<Path>) -> Result<(BayerImage, BayerSidecar)> {
    let png = png.as_ref();
    let side_path = sidecar_path(png);
    let sidecar: BayerSidecar =
        serde_json::from_str(&read_text(&side_path)?).map_err(|source| Error::Parse {
            path: side_path.display().to_string(),
            source,
        })?;
    let img = image::open(png).map_err(image_err(png))?;
    if !matches!(img, image::DynamicImage::ImageLuma16(_)) {
        return Err(Error::invalid(
            "bayer png",
            format!("{} is not a 16-bit single-channel PNG", png.display()),
        ));
    }
    let buf = img.into_luma16();
    let (w, h) = buf.dimensions();
    let bayer = BayerImage::new(
        w as usize,
        h as usize,
        sidecar.cfa,
        buf.into_raw(),
        sidecar.black_level,
        sidecar.white_level,
    )?;
    Ok((bayer, sidecar))
}

/// Writes a 3-channel 16-bit PNG, mapping `[0, 1]` to `[0, 65535]`.
pub fn write_rgb16_png(img: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data)
            .expect("buffer length checked at construction");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    buf.save(path).map_err(image_err(path))
}

/// Tensor layout: 8-byte magic, then `channels`, `height`, `width` as
/// little-endian u32, then channel-planar (CHW) little-endian f32 values.
pub fn encode_tensor(img: &LinearImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(20 + 12 * w * h);
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [3u32, h as u32, w as u32] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for c in 0..3 {
        for p in img.data().chunks_exact(3) {
            out.extend_from_slice(&(p[c] as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<LinearImage> {
    let bad = |r: &str| Error::invalid("tensor file", r.to_owned());
    let mut cursor = bytes;
    let mut magic = [0u8; 8];
    cursor.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        cursor.read_exact(&mut b).map_err(|_| bad("truncated header"))?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let [c, h, w] = dims;
    if c != 3 {
        return Err(bad("expected 3 channels"));
    }
    if cursor.len() != 4 * c * h * w {
        return Err(bad("payload length does not match dimensions"));
    }
    let planar: Vec<f32> = cursor
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    let plane = h * w;
    let data = (0..plane)
        .flat_map(|i| (0..3).map(move |ch| (ch, i)))
        .map(|(ch, i)| planar[ch * plane + i] as f64)
        .collect();
    LinearImage::new(w, h, data)
}

pub fn write_tensor(img: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(img);
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    f.write_all(&bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    decode_tensor(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Cfa;

    const MINIMAL: &str = r#"{
        "images": [{"id": 1, "file_name": "a.png", "width": 6000, "height": 4000,
                    "condition": "outdoor/lowlight/rain"}],
        "annotations": [],
        "categories": [{"id": 1, "name": "car"}]
    }"#;

    #[test]
    fn minimal_document() {
        let idx = parse_index(MINIMAL, "mem").unwrap();
        assert_eq!(idx.images.len(), 1);
        assert_eq!(idx.images[0].condition.to_string(), "outdoor/lowlight/rain");
    }

    #[test]
    fn dangling_reference_names_the_id() {
        let text = MINIMAL.replace(
            "\"annotations\": []",
            r#""annotations": [{"id": 5, "image_id": 77, "category_id": 1, "bbox": [0, 0, 4, 4]}]"#,
        );
        let err = parse_index(&text, "mem").unwrap_err().to_string();
        assert!(err.contains("77"), "{err}");
    }

    #[test]
    fn unknown_condition_and_missing_key() {
        let text = MINIMAL.replace("outdoor/lowlight/rain", "outdoor/dusk");
        let err = parse_index(&text, "mem").unwrap_err().to_string();
        assert!(err.contains("image 1") && err.contains("outdoor/dusk"), "{err}");

        let text = MINIMAL.replace("\"file_name\": \"a.png\",", "");
        let err = parse_index(&text, "mem").unwrap_err().to_string();
        assert!(err.contains("file_name") && err.contains("line"), "{err}");
    }

    #[test]
    fn crowd_maps_to_ignore() {
        let text = MINIMAL.replace(
            "\"annotations\": []",
            r#""annotations": [{"id": 5, "image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4], "iscrowd": 1}]"#,
        );
        let idx = parse_index(&text, "mem").unwrap();
        assert!(idx.annotations[0].ignore);
        let again = parse_index(&index_to_json(&idx), "mem").unwrap();
        assert_eq!(again, idx);
    }

    #[test]
    fn detections_validate_scores() {
        let ok = r#"[{"image_id": 1, "category_id": 2, "bbox": [1, 2, 3, 4], "score": 0.5}]"#;
        assert_eq!(parse_detections(ok, "mem").unwrap().len(), 1);
        let bad = ok.replace("0.5", "1.5");
        assert!(parse_detections(&bad, "mem").is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = LinearImage::new(2, 1, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap();
        let bytes = encode_tensor(&img);
        assert_eq!(&bytes[..8], TENSOR_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        // first plane is red: pixel 0 then pixel 1
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 0.0);
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 0.75);
        assert_eq!(decode_tensor(&bytes).unwrap(), img);
        assert!(decode_tensor(&bytes[..30]).is_err());
    }

    #[test]
    fn bayer_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = BayerImage::new(4, 2, Cfa::Gbrg, vec![0, 1, 2, 300, 40000, 65535, 7, 8], 0, 65535).unwrap();
        let profile = CameraProfile::identity();
        let aug = crate::unprocess::AugmentSample {
            target_brightness: 100.0,
            noise: crate::types::NoiseParams::zero(),
            wb_gains: [1.0; 3],
            ccm_index: 0,
        };
        let mut side = BayerSidecar::new(&profile, &aug, 3, 1.0);
        side.cfa = Cfa::Gbrg;
        let png = dir.path().join("x.png");
        write_bayer(&img, &side, &png).unwrap();
        let (back, side_back) = read_bayer(&png).unwrap();
        assert_eq!(back, img);
        assert_eq!(side_back, side);
    }
}
