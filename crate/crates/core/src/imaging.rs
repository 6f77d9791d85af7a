//! Pixel-level primitives: bilinear resampling, float tensors and image
//! loading.
//!
//! Resampling uses pixel-center coordinates: destination pixel `u` maps to
//! source coordinate `(u + 0.5) * src / dst - 0.5`, clamped to the edge.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::catalog::ImageRecord;
use crate::error::{Error, Result};

/// Bilinear sample of `img` at continuous pixel-center coordinates.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let x = x.clamp(0.0, f64::from(w - 1));
    let y = y.clamp(0.0, f64::from(h - 1));
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - f64::from(x0);
    let fy = y - f64::from(y0);
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
        let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resamples the source window `[x0, x0 + span_x) x [y0, y0 + span_y)`
/// (continuous coordinates, pixel edges) onto a `w x h` output.
pub fn resample_window(
    img: &RgbImage,
    (x0, y0): (f64, f64),
    (span_x, span_y): (f64, f64),
    (w, h): (u32, u32),
) -> RgbImage {
    let sx = span_x / f64::from(w);
    let sy = span_y / f64::from(h);
    RgbImage::from_fn(w, h, |u, v| {
        let x = x0 + (f64::from(u) + 0.5) * sx - 0.5;
        let y = y0 + (f64::from(v) + 0.5) * sy - 0.5;
        let p = sample_bilinear(img, x, y);
        Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    })
}

/// Linear-interpolation resize.
pub fn resize_bilinear(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    if img.dimensions() == (w, h) {
        return img.clone();
    }
    let (sw, sh) = img.dimensions();
    resample_window(img, (0.0, 0.0), (f64::from(sw), f64::from(sh)), (w, h))
}

/// Dense `channels x height x width` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Scales 8-bit channels to `[0, 1]`.
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let (w, h) = (w as usize, h as usize);
        let mut t = Self::zeros(3, h, w);
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                t.data[(c * h + y as usize) * w + x as usize] = f32::from(p.0[c]) / 255.0;
            }
        }
        t
    }

    pub fn to_rgb(&self) -> RgbImage {
        assert_eq!(self.channels, 3, "to_rgb needs three channels");
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let v = self.data[(c * self.height + y as usize) * self.width + x as usize];
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            };
            Rgb([px(0), px(1), px(2)])
        })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Source of decoded images for records.
pub trait ImageSource: Sync {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage>;
}

/// Loads files from disk, resolving relative URIs against `root`.
#[derive(Debug, Clone)]
pub struct FsImageSource {
    pub root: PathBuf,
}

impl FsImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path_of(&self, record: &ImageRecord) -> PathBuf {
        let uri = Path::new(&record.uri);
        if uri.is_absolute() {
            uri.to_path_buf()
        } else {
            self.root.join(uri)
        }
    }
}

impl ImageSource for FsImageSource {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage> {
        load_rgb(&self.path_of(record))
    }
}

/// In-memory images keyed by record ID.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    pub images: BTreeMap<String, RgbImage>,
}

impl ImageSource for MemoryImageSource {
    fn load(&self, record: &ImageRecord) -> Result<RgbImage> {
        self.images
            .get(&record.record_id)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no image for record {:?}", record.record_id)))
    }
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("png encoding into memory");
    buf.into_inner()
}

pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|source| Error::Image {
            path: PathBuf::from("<memory>"),
            source,
        })
}
