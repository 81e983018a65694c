//! Images, masks and the dataset preparation steps: netpbm codecs, tiling,
//! seeded splitting, synthetic scenes and palette colorization.

mod netpbm;
mod palette;
mod split;
mod synth;
mod tile;

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use netpbm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
pub use palette::{colorize, decolorize, Palette};
pub use split::{split_counts, split_dataset, DatasetIndex, Split, DEFAULT_FRACTIONS};
pub use synth::{synth_generate, synth_generate_with, SynthOptions};
pub use tile::{tile_grid, tile_sample};

/// 8-bit RGB raster, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage { width, height, data: alloc::vec![0; 3 * width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(shape_err!("{} bytes for a {width}x{height} RGB image", data.len()));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `[1, 3, H, W]` with values scaled by 1/255.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros([1, 3, self.height, self.width]);
        let plane = self.width * self.height;
        let out = t.data_mut();
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = T::lit(px[c] as f64 / 255.0);
            }
        }
        t
    }

    /// Quantizes a `[1, 3, H, W]` tensor, rounding half up and clamping to `[0, 255]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [n, c, h, w] = t.dims();
        if n != 1 || c != 3 {
            return Err(shape_err!("expected a [1, 3, H, W] image, got {:?}", t.shape()));
        }
        let plane = h * w;
        let mut img = RgbImage::new(w, h);
        for p in 0..plane {
            for ch in 0..3 {
                img.data[3 * p + ch] = quantize(t.data()[ch * plane + p].as_f64());
            }
        }
        Ok(img)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> RgbImage {
        let mut data = Vec::with_capacity(3 * width * height);
        for y in y0..y0 + height {
            let start = 3 * (y * self.width + x0);
            data.extend_from_slice(&self.data[start..start + 3 * width]);
        }
        RgbImage { width, height, data }
    }
}

/// `floor(v·255 + 0.5)` clamped to the byte range.
pub fn quantize(v: f64) -> u8 {
    let q = num_traits::Float::floor(v * 255.0 + 0.5);
    if q.is_nan() {
        0
    } else {
        q.clamp(0.0, 255.0) as u8
    }
}

/// Per-pixel class indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, data: alloc::vec![0; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!("{} bytes for a {width}x{height} mask", data.len()));
        }
        Ok(Mask { width, height, data })
    }

    /// Builds a mask from class indices such as an argmax output.
    pub fn from_classes(width: usize, height: usize, classes: &[usize]) -> Result<Self> {
        if classes.len() != width * height {
            return Err(shape_err!("{} classes for a {width}x{height} mask", classes.len()));
        }
        let data = classes
            .iter()
            .map(|&c| u8::try_from(c).map_err(|_| Error::LabelOutOfRange { value: c, classes: 256 }))
            .collect::<Result<_>>()?;
        Ok(Mask { width, height, data })
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Rejects any value `≥ classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v as usize >= classes) {
            Some(&v) => Err(Error::LabelOutOfRange { value: v as usize, classes }),
            None => Ok(()),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Mask {
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            let start = y * self.width + x0;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Mask { width, height, data }
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().map(|&v| v as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSample {
    pub image: RgbImage,
    pub mask: Mask,
    pub stem: String,
}

impl LabeledSample {
    pub fn new(image: RgbImage, mask: Mask, stem: impl Into<String>) -> Result<Self> {
        if image.width != mask.width || image.height != mask.height {
            return Err(shape_err!(
                "image is {}x{} but mask is {}x{}",
                image.width,
                image.height,
                mask.width,
                mask.height
            ));
        }
        Ok(LabeledSample { image, mask, stem: stem.into() })
    }
}

/// Stacks samples into a `[B, 3, H, W]` batch plus flat `[B, H, W]` labels.
pub fn batch<T: Scalar>(samples: &[&LabeledSample]) -> Result<(Tensor<T>, Vec<usize>)> {
    let first = samples.first().ok_or(Error::Empty("batch"))?;
    let (w, h) = (first.image.width, first.image.height);
    let mut images = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len() * w * h);
    for s in samples {
        if s.image.width != w || s.image.height != h {
            return Err(shape_err!("batch mixes {w}x{h} with {}x{}", s.image.width, s.image.height));
        }
        images.push(s.image.to_tensor::<T>());
        labels.extend(s.mask.classes());
    }
    let refs: Vec<&Tensor<T>> = images.iter().collect();
    Ok((Tensor::stack(&refs)?, labels))
}
