//! Frame sets on disk.
//!
//! A TOML manifest lists one entry per frame: the index of the scene camera
//! that saw it, its image and an optional normal prior. Paths are relative to
//! the manifest. Images ending in `.pfm` are read losslessly, anything else
//! as an 8-bit PNG. Normal priors are 3-channel PFM.
//!
//! ```toml
//! [[frames]]
//! camera = 0
//! image = "frame_000.png"
//! normal_prior = "frame_000_normal.pfm"
//! ```

use crate::error::{Error, Result};
use crate::image::{read_pfm, read_png, write_pfm, write_png, ImageBuffer};
use crate::train::Frame;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    frames: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    camera: usize,
    image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal_prior: Option<PathBuf>,
}

fn read_image(path: &Path) -> Result<ImageBuffer> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pfm")) {
        read_pfm(path)
    } else {
        read_png(path)
    }
}

fn rgb_of(img: ImageBuffer, path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    if img.channels != 3 {
        return Err(Error::ShapeMismatch(format!("{}: expected 3 channels, found {}", path.display(), img.channels)));
    }
    Ok((img.width, img.height, img.to_f64()))
}

/// Reads a frame manifest with its images. Image sizes are checked against
/// each other here and against the cameras when training starts.
pub fn load_frames(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    Ok(load_frames_sized(path)?.into_iter().map(|(f, _)| f).collect())
}

/// [`load_frames`] that also reports each image's width and height.
pub fn load_frames_sized(path: impl AsRef<Path>) -> Result<Vec<(Frame, (usize, usize))>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let dir = path.parent().unwrap_or(Path::new(""));
    manifest
        .frames
        .iter()
        .map(|e| {
            let image_path = dir.join(&e.image);
            let (w, h, rgb) = rgb_of(read_image(&image_path)?, &image_path)?;
            let normal_prior = match &e.normal_prior {
                None => None,
                Some(p) => {
                    let p = dir.join(p);
                    let (pw, ph, n) = rgb_of(read_pfm(&p)?, &p)?;
                    if (pw, ph) != (w, h) {
                        return Err(Error::ShapeMismatch(format!(
                            "{}: {pw}x{ph} prior for a {w}x{h} image",
                            p.display()
                        )));
                    }
                    Some(n)
                }
            };
            Ok((Frame { camera: e.camera, rgb, normal_prior }, (w, h)))
        })
        .collect()
}

/// Writes `frames` as `frame_NNN.png` (plus `frame_NNN_normal.pfm`) next
/// to the manifest at `path`. Sizes come from the cameras the frames use.
pub fn save_frames(path: impl AsRef<Path>, frames: &[Frame], sizes: &[(usize, usize)]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let &(w, h) = sizes
            .get(f.camera)
            .ok_or_else(|| Error::ShapeMismatch(format!("frame {i} refers to missing camera {}", f.camera)))?;
        let image = PathBuf::from(format!("frame_{i:03}.png"));
        write_png(&dir.join(&image), &ImageBuffer::from_f64(w, h, 3, &f.rgb)?)?;
        let normal_prior = match &f.normal_prior {
            None => None,
            Some(n) => {
                let p = PathBuf::from(format!("frame_{i:03}_normal.pfm"));
                write_pfm(&dir.join(&p), &ImageBuffer::from_f64(w, h, 3, n)?)?;
                Some(p)
            }
        };
        entries.push(Entry { camera: f.camera, image, normal_prior });
    }
    let text = toml::to_string(&Manifest { frames: entries })
        .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}
