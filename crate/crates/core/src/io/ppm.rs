use std::io::Write;
use std::path::Path;

use crate::geometry::{ImageSize, Orientation};
use crate::pair_search::{EpipolarPairSet, QuantizedLineKey};

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn black(size: ImageSize) -> Self {
        Self { width: size.width, height: size.height, pixels: vec![[0, 0, 0]; size.pixel_count()] }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        self.pixels[y * self.width + x] = c;
    }

    /// Binary P6 encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&image.to_ppm())?;
    f.flush()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key_hash(key: &QuantizedLineKey) -> u64 {
    let o = match key.orientation {
        Orientation::Standard => 0u64,
        Orientation::Swapped => 1u64,
    };
    splitmix64(splitmix64(splitmix64(o) ^ key.qk as u64) ^ key.qb as u64)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Fully saturated color whose hue comes from a 64-bit hash of the key.
pub fn cluster_color(key: &QuantizedLineKey) -> [u8; 3] {
    let hue = (key_hash(key) >> 11) as f64 / (1u64 << 53) as f64 * 360.0;
    hsv_to_rgb(hue, 1.0, 1.0)
}

/// Reference and source renderings; pixels outside every pair stay black.
pub fn render_pairs(set: &EpipolarPairSet) -> (RgbImage, RgbImage) {
    let mut reference = RgbImage::black(set.ref_size);
    let mut source = RgbImage::black(set.src_size);
    for p in &set.pairs {
        let color = cluster_color(&p.key);
        for q in &p.ref_pixels {
            reference.set(q.x, q.y, color);
        }
        for q in &p.src_pixels {
            source.set(q.x, q.y, color);
        }
    }
    (reference, source)
}
