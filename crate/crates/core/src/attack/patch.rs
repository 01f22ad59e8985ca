//! The optimized patch texture and its on-disk form.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed;

pub const DEFAULT_PATCH_SIZE: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub texels: Image,
    pub iteration: u64,
    pub rng_seed: u64,
    /// Hash of the configuration that produced the patch.
    pub provenance: String,
}

/// JSON sidecar written next to a patch PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMeta {
    pub width: usize,
    pub height: usize,
    pub iteration: u64,
    pub rng_seed: u64,
    pub config_hash: String,
    pub png_sha256: String,
}

impl Patch {
    pub fn from_image(texels: Image, rng_seed: u64) -> Result<Self> {
        if texels.width() == 0 || texels.height() == 0 {
            return Err(Error::domain("patch must have at least one texel"));
        }
        let mut texels = texels;
        texels.clamp01();
        Ok(Patch {
            texels,
            iteration: 0,
            rng_seed,
            provenance: String::new(),
        })
    }

    /// Uniform 8-bit noise drawn from `rng_seed`, so it survives a PNG
    /// round trip unchanged.
    pub fn random(width: usize, height: usize, rng_seed: u64) -> Result<Self> {
        let mut rng = seed::stream(rng_seed, &[0x5041_5443]);
        let data = (0..width * height * 3)
            .map(|_| rng.random_range(0..=255u8) as f64 / 255.0)
            .collect();
        Patch::from_image(Image::from_vec(width, height, data)?, rng_seed)
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Patch::from_image(Image::filled(width, height, [value; 3]), 0)
    }

    pub fn width(&self) -> usize {
        self.texels.width()
    }

    pub fn height(&self) -> usize {
        self.texels.height()
    }

    /// Writes `<stem>.png` and `<stem>.json`. Returns the PNG path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let png = dir.join(format!("{stem}.png"));
        self.texels.save_png(&png)?;
        let bytes = fs::read(&png).map_err(|e| Error::io(&png, e))?;
        let meta = PatchMeta {
            width: self.width(),
            height: self.height(),
            iteration: self.iteration,
            rng_seed: self.rng_seed,
            config_hash: self.provenance.clone(),
            png_sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(png)
    }

    /// Loads a PNG patch, picking up the sidecar when it exists.
    pub fn load(png: &Path) -> Result<Self> {
        let texels = Image::load(png)?;
        let mut patch = Patch::from_image(texels, 0)?;
        let json = png.with_extension("json");
        if json.exists() {
            let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
            let meta: PatchMeta = serde_json::from_str(&text)?;
            patch.iteration = meta.iteration;
            patch.rng_seed = meta.rng_seed;
            patch.provenance = meta.config_hash;
        }
        Ok(patch)
    }

    /// SHA-256 of the 8-bit quantized texels.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.texels.to_rgb8()))
    }
}
