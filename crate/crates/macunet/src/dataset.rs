//! On-disk dataset layout: `<root>/images/<stem>.ppm` and `<root>/masks/<stem>.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use macunet_core::data::{
    decode_pgm, decode_ppm, encode_pgm, encode_ppm, DatasetIndex, LabeledSample, Mask, RgbImage, Split,
};

use crate::error::{Error, Result};

pub fn image_path(root: &Path, stem: &str) -> PathBuf {
    root.join("images").join(format!("{stem}.ppm"))
}

pub fn mask_path(root: &Path, stem: &str) -> PathBuf {
    root.join("masks").join(format!("{stem}.pgm"))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: macunet_core::Result<T>) -> Result<T> {
    r.map_err(|source| Error::File { path: path.to_path_buf(), source })
}

pub fn read_image(path: &Path) -> Result<RgbImage> {
    with_path(path, decode_ppm(&read_bytes(path)?))
}

pub fn read_mask(path: &Path, classes: Option<usize>) -> Result<Mask> {
    with_path(path, decode_pgm(&read_bytes(path)?, classes))
}

pub fn write_image(path: &Path, image: &RgbImage) -> Result<()> {
    write_bytes(path, &encode_ppm(image))
}

pub fn write_mask(path: &Path, mask: &Mask, classes: Option<usize>) -> Result<()> {
    let bytes = with_path(path, encode_pgm(mask, classes))?;
    write_bytes(path, &bytes)
}

/// Sorted stems of every `images/*.ppm` under `root`.
pub fn list_stems(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("images");
    let mut stems = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|x| x == "ppm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn load_sample(root: &Path, stem: &str, classes: Option<usize>) -> Result<LabeledSample> {
    let image = read_image(&image_path(root, stem))?;
    let mask = read_mask(&mask_path(root, stem), classes)?;
    LabeledSample::new(image, mask, stem).map_err(|source| Error::File { path: mask_path(root, stem), source })
}

pub fn write_sample(root: &Path, sample: &LabeledSample) -> Result<()> {
    write_image(&image_path(root, &sample.stem), &sample.image)?;
    write_mask(&mask_path(root, &sample.stem), &sample.mask, None)
}

/// Every sample of one subset, in stem order.
pub fn load_subset(root: &Path, index: &DatasetIndex, split: Split, classes: usize) -> Result<Vec<LabeledSample>> {
    index.subset(split).map(|stem| load_sample(root, stem, Some(classes))).collect()
}

pub fn read_split(path: &Path) -> Result<DatasetIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    with_path(path, DatasetIndex::parse(&text))
}

pub fn write_split(path: &Path, index: &DatasetIndex) -> Result<()> {
    write_bytes(path, index.to_text().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use macunet_core::data::synth_generate;

    #[test]
    fn sample_roundtrip_through_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate(3, 16, 4, 0);
        for s in &samples {
            write_sample(dir.path(), s).unwrap();
        }
        let stems = list_stems(dir.path()).unwrap();
        assert_eq!(stems, ["synth_00000", "synth_00001", "synth_00002"]);
        assert_eq!(load_sample(dir.path(), &stems[1], Some(4)).unwrap(), samples[1]);
        assert!(load_sample(dir.path(), &stems[1], Some(2)).is_err());
    }

    #[test]
    fn missing_files_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sample(dir.path(), "nope", None).unwrap_err();
        assert!(err.to_string().contains("nope.ppm"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }
}
