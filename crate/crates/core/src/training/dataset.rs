use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use crate::color::{rgb_to_hsv, HsvPlanes, RgbImage};
use crate::error::{Error, Result};
use crate::metrics::is_image_path;

/// One decoded training image at the working resolution.
#[derive(Clone, Debug)]
pub struct Sample {
    pub path: PathBuf,
    /// Sequence subdirectory name; `None` for images at the top level.
    pub sequence: Option<String>,
    pub rgb: RgbImage,
    pub hsv: HsvPlanes,
}

impl Sample {
    pub fn stem(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Image paths of `dir` and of its immediate subdirectories, in
/// lexicographic order, together with the sequence each belongs to.
pub fn list_images(dir: &Path) -> Result<Vec<(PathBuf, Option<String>)>> {
    let mut found = Vec::new();
    for path in sorted_entries(dir)? {
        if path.is_dir() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
            for inner in sorted_entries(&path)? {
                if inner.is_file() && is_image_path(&inner) {
                    found.push((inner, name.clone()));
                }
            }
        } else if is_image_path(&path) {
            found.push((path, None));
        }
    }
    found.sort();
    Ok(found)
}

/// Decodes every image under `dir`, resized bilinearly to `image_size` square.
/// Undecodable files are skipped with a warning.
pub fn load_dataset(dir: &Path, image_size: usize) -> Result<Vec<Sample>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no images found in {}", dir.display())));
    }
    let mut samples = Vec::with_capacity(paths.len());
    for (path, sequence) in paths {
        let img = match RgbImage::load(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let rgb = if img.dims() == (image_size, image_size) {
            img
        } else {
            img.resize(image_size, image_size)
        };
        let hsv = rgb_to_hsv(&rgb);
        samples.push(Sample {
            path,
            sequence,
            rgb,
            hsv,
        });
    }
    if samples.is_empty() {
        return Err(Error::Dataset(format!(
            "none of the images in {} could be decoded",
            dir.display()
        )));
    }
    Ok(samples)
}

/// Indices into a sample list, split for training and model selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Holds out one image per sequence and `val_fraction` of the top-level
/// images (rounded up), never leaving a group without training data. With
/// `val_fraction == 0` nothing is held out.
pub fn split_dataset<R: Rng + ?Sized>(samples: &[Sample], val_fraction: f64, rng: &mut R) -> Split {
    let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups.entry(s.sequence.as_deref()).or_default().push(i);
    }
    let mut validation = Vec::new();
    if val_fraction > 0.0 {
        for (key, members) in &groups {
            let wanted = match key {
                Some(_) => 1,
                None => (val_fraction * members.len() as f64).ceil() as usize,
            };
            let take = wanted.min(members.len().saturating_sub(1));
            if take == 0 {
                continue;
            }
            validation.extend(index::sample(rng, members.len(), take).into_iter().map(|k| members[k]));
        }
    }
    validation.sort_unstable();
    let train = (0..samples.len())
        .filter(|i| validation.binary_search(i).is_err())
        .collect();
    Split { train, validation }
}

/// Reference image for a held-out sample: `<reference_dir>/<sequence>.*` for
/// sequence layouts, `<reference_dir>/<stem>.*` otherwise.
pub fn find_reference(sample: &Sample, reference_dir: &Path) -> Option<PathBuf> {
    let key = sample.sequence.clone().unwrap_or_else(|| sample.stem());
    let entries = sorted_entries(reference_dir).ok()?;
    entries.into_iter().find(|p| {
        p.is_file() && is_image_path(p) && p.file_stem().map(|s| s.to_string_lossy() == key).unwrap_or(false)
    })
}
