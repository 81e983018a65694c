use alloc::format;
use alloc::vec::Vec;

use super::{Mask, RgbImage};
use crate::error::{Error, Result};

/// Class colors. The six-class default is gray background, red, olive, green,
/// yellow and blue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

const DEFAULT_COLORS: [[u8; 3]; 6] =
    [[128, 128, 128], [255, 0, 0], [192, 192, 0], [0, 255, 0], [255, 255, 0], [0, 0, 255]];

impl Palette {
    pub fn new(colors: Vec<[u8; 3]>) -> Result<Self> {
        for (i, c) in colors.iter().enumerate() {
            if colors[..i].contains(c) {
                return Err(Error::Config(format!("palette color {c:?} is used twice")));
            }
        }
        Ok(Palette { colors })
    }

    /// The default colors, extended with distinct generated ones past six classes.
    pub fn for_classes(classes: usize) -> Self {
        let mut colors: Vec<[u8; 3]> = DEFAULT_COLORS.iter().copied().take(classes).collect();
        let mut i: u32 = 0;
        while colors.len() < classes {
            i += 1;
            // Odd multipliers modulo 256 are bijective, so successive `i` rarely collide.
            let c = [(i * 37 + 11) as u8, (i * 101 + 57) as u8, (i * 197 + 23) as u8];
            if !colors.contains(&c) {
                colors.push(c);
            }
        }
        Palette { colors }
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: usize) -> Option<[u8; 3]> {
        self.colors.get(class).copied()
    }

    pub fn lookup(&self, rgb: [u8; 3]) -> Option<usize> {
        self.colors.iter().position(|&c| c == rgb)
    }
}

impl Default for Palette {
    fn default() -> Self {
        Palette::for_classes(DEFAULT_COLORS.len())
    }
}

pub fn colorize(mask: &Mask, palette: &Palette) -> Result<RgbImage> {
    mask.validate(palette.len())?;
    let mut data = Vec::with_capacity(3 * mask.data.len());
    for &c in &mask.data {
        data.extend_from_slice(&palette.colors[c as usize]);
    }
    RgbImage::from_raw(mask.width, mask.height, data)
}

/// Inverse of [`colorize`]; colors outside the palette are rejected.
pub fn decolorize(image: &RgbImage, palette: &Palette) -> Result<Mask> {
    let data = image
        .data
        .chunks_exact(3)
        .map(|px| {
            palette
                .lookup([px[0], px[1], px[2]])
                .map(|c| c as u8)
                .ok_or_else(|| Error::Config(format!("color {px:?} is not in the palette")))
        })
        .collect::<Result<_>>()?;
    Mask::from_raw(image.width, image.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_class_is_uniform() {
        let mut m = Mask::new(3, 2);
        m.data.fill(2);
        let img = colorize(&m, &Palette::default()).unwrap();
        assert!(img.data.chunks(3).all(|px| px == [192, 192, 0]));
    }

    #[test]
    fn one_pixel_identity_palette() {
        let p = Palette::new((0..4).map(|i| [i, i, i]).collect()).unwrap();
        let m = Mask::from_raw(1, 1, alloc::vec![3]).unwrap();
        assert_eq!(colorize(&m, &p).unwrap().data, [3, 3, 3]);
    }

    #[test]
    fn roundtrip_and_errors() {
        let p = Palette::default();
        let m = Mask::from_raw(3, 1, alloc::vec![0, 5, 1]).unwrap();
        assert_eq!(decolorize(&colorize(&m, &p).unwrap(), &p).unwrap(), m);
        let bad = Mask::from_raw(1, 1, alloc::vec![6]).unwrap();
        assert!(colorize(&bad, &p).is_err());
        assert!(Palette::new(alloc::vec![[1, 1, 1], [1, 1, 1]]).is_err());
    }

    #[test]
    fn generated_colors_are_distinct() {
        let p = Palette::for_classes(40);
        assert_eq!(p.len(), 40);
        assert!(Palette::new((0..40).map(|i| p.color(i).unwrap()).collect()).is_ok());
    }
}
