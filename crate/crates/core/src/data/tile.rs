use alloc::format;
use alloc::vec::Vec;

use super::LabeledSample;

/// `(rows, cols)` of non-overlapping `patch × patch` tiles; edge residue is dropped.
pub fn tile_grid(width: usize, height: usize, patch: usize) -> (usize, usize) {
    if patch == 0 {
        return (0, 0);
    }
    (height / patch, width / patch)
}

/// Cuts a sample into row-major patches named `{stem}_r{row}_c{col}`.
pub fn tile_sample(sample: &LabeledSample, patch: usize) -> Vec<LabeledSample> {
    let (rows, cols) = tile_grid(sample.image.width, sample.image.height, patch);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let (x0, y0) = (c * patch, r * patch);
            out.push(LabeledSample {
                image: sample.image.crop(x0, y0, patch, patch),
                mask: sample.mask.crop(x0, y0, patch, patch),
                stem: format!("{}_r{r}_c{c}", sample.stem),
            });
        }
    }
    out
}
