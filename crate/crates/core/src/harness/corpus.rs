//! Synthetic person corpora and manifest ingestion.
//!
//! A corpus directory holds `images/` (one rendered person per scene),
//! `backgrounds/` (the same scenes without the person), and a JSON-lines
//! `manifest.jsonl` with one record per scene.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::error::{Error, Result};
use crate::geometry::{deform_garment, humanoid, Humanoid, NonRigidConfig};
use crate::image::Image;
use crate::metrics::EvalSample;
use crate::scene::{composite, derive_render_params, rasterize, timespace_sample, Camera, Palette};
use crate::seed;

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundStyle {
    Gradient,
    Noise,
    Tiled,
    /// Cycles through the other three by scene index.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpusSpec {
    pub n_scenes: usize,
    pub size: usize,
    pub background: BackgroundStyle,
    pub seed: u64,
    /// Fraction of scenes rendered under poor lighting (the last ones).
    pub poor_fraction: f64,
    /// Luminance multiplier range for poor lighting.
    pub lighting_multiplier: [f64; 2],
    /// Every `test_every`-th scene goes to the test split.
    pub test_every: usize,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            n_scenes: 562,
            size: 416,
            background: BackgroundStyle::Mixed,
            seed: 7,
            poor_fraction: 112.0 / 562.0,
            lighting_multiplier: [0.35, 0.6],
            test_every: 5,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::Config("corpus needs at least one scene".into()));
        }
        if self.size < 64 {
            return Err(Error::Config(format!("corpus image size {} is below 64", self.size)));
        }
        let [lo, hi] = self.lighting_multiplier;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config("lighting multipliers must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.poor_fraction) || self.test_every == 0 {
            return Err(Error::Config("invalid corpus split parameters".into()));
        }
        Ok(())
    }

    /// Number of scenes with adequate lighting.
    pub fn n_adequate(&self) -> usize {
        self.n_scenes - (self.n_scenes as f64 * self.poor_fraction).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lighting {
    Adequate,
    Poor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub boxes: Vec<[f64; 4]>,
    pub split: Split,
    pub lighting: Lighting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<String>,
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Procedural background with a few flat clutter rectangles.
pub fn background<R: Rng + ?Sized>(style: BackgroundStyle, size: usize, rng: &mut R) -> Image {
    let mut img = match style {
        BackgroundStyle::Gradient | BackgroundStyle::Mixed => {
            let (a, b) = (random_color(rng), random_color(rng));
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let (s, c) = angle.sin_cos();
            let mut img = Image::new(size, size);
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 / size as f64 - 0.5) * c + (y as f64 / size as f64 - 0.5) * s;
                    img.set(x, y, lerp(a, b, (u / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0)));
                }
            }
            img
        }
        BackgroundStyle::Noise => {
            // smooth value noise: a coarse random grid upsampled bilinearly
            let cells = rng.random_range(4..12);
            let mut coarse = Image::new(cells, cells);
            let base = random_color(rng);
            for y in 0..cells {
                for x in 0..cells {
                    let jitter = random_color(rng);
                    coarse.set(x, y, lerp(base, jitter, 0.6));
                }
            }
            coarse.resize(size, size)
        }
        BackgroundStyle::Tiled => {
            let (a, b) = (random_color(rng), random_color(rng));
            let tile = rng.random_range(16..64);
            let stripes = rng.random_bool(0.5);
            let mut img = Image::new(size, size);
            for y in 0..size {
                for x in 0..size {
                    let on = if stripes { (y / tile) % 2 == 0 } else { (x / tile + y / tile) % 2 == 0 };
                    img.set(x, y, if on { a } else { lerp(a, b, 0.7) });
                }
            }
            img
        }
    };
    for _ in 0..rng.random_range(2..7) {
        let w = rng.random_range(size / 16..size / 3);
        let h = rng.random_range(size / 16..size / 3);
        let x0 = rng.random_range(0..size - w);
        let y0 = rng.random_range(0..size - h);
        let color = random_color(rng);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.set(x, y, color);
            }
        }
    }
    img
}

fn random_palette<R: Rng + ?Sized>(rng: &mut R) -> Palette {
    let skin_tone: f64 = rng.random_range(0.25..0.95);
    Palette {
        skin: [skin_tone, skin_tone * 0.78, skin_tone * 0.64],
        shirt: random_color(rng),
        pants: [0, 1, 2].map(|_| rng.random_range(0.05..0.7)),
    }
}

fn scale_luminance(img: &mut Image, m: f64) {
    for v in img.data_mut() {
        *v = (*v * m).clamp(0.0, 1.0);
    }
}

/// One generated scene held in memory.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub image: Image,
    pub background: Image,
    pub boxes: Vec<BoundingBox>,
    pub lighting: Lighting,
    pub split: Split,
}

/// Renders a person at a perspective-consistent random placement. Optional
/// `texture` is worn on the shirt panel.
pub fn render_person<R: Rng + ?Sized>(
    model: &Humanoid,
    bg: &Image,
    texture: Option<&Image>,
    rng: &mut R,
) -> Result<(Image, BoundingBox)> {
    let (w, h) = bg.dims();
    let cam = Camera::for_image(w, h);
    let boxes = timespace_sample(w, h, &cam, rng)?;
    let (params, _) = derive_render_params(&boxes.human, boxes.v_orient, &cam)?;
    let garment = deform_garment(&model.garment, &NonRigidConfig::default(), rng.random())?.mesh;
    let palette = random_palette(rng);
    let render = rasterize(model, &garment, texture, &palette, &params, &cam, &boxes.human, w, h)?;
    let img = composite(&render.image, &render.mask, bg)?;
    Ok((img, render.silhouette))
}

/// Scene `index` of `spec`, independent of every other scene.
pub fn generate_scene(spec: &SyntheticCorpusSpec, model: &Humanoid, index: usize) -> Result<SyntheticScene> {
    let mut rng = seed::stream(spec.seed, &[index as u64]);
    let style = match spec.background {
        BackgroundStyle::Mixed => [BackgroundStyle::Gradient, BackgroundStyle::Noise, BackgroundStyle::Tiled][index % 3],
        s => s,
    };
    let mut bg = background(style, spec.size, &mut rng);
    let (mut image, gt) = render_person(model, &bg, None, &mut rng)?;
    let lighting = if index >= spec.n_adequate() {
        let [lo, hi] = spec.lighting_multiplier;
        let m = if lo < hi { rng.random_range(lo..hi) } else { lo };
        scale_luminance(&mut image, m);
        scale_luminance(&mut bg, m);
        Lighting::Poor
    } else {
        Lighting::Adequate
    };
    let split = if index % spec.test_every == spec.test_every - 1 {
        Split::Test
    } else {
        Split::Train
    };
    Ok(SyntheticScene {
        image,
        background: bg,
        boxes: vec![gt],
        lighting,
        split,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let partial = super::persist::partial_path(path);
    fs::write(&partial, bytes).map_err(|e| Error::io(&partial, e))?;
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

/// Writes a full corpus under `dir` and returns its manifest path.
pub fn generate_corpus(spec: &SyntheticCorpusSpec, dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    let model = humanoid()?;
    for sub in ["images", "backgrounds"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut manifest = Vec::new();
    for i in 0..spec.n_scenes {
        let scene = generate_scene(spec, &model, i)?;
        let image = format!("images/scene_{i:05}.png");
        let background = format!("backgrounds/scene_{i:05}.png");
        scene.image.save_png(&dir.join(&image))?;
        scene.background.save_png(&dir.join(&background))?;
        let record = ManifestRecord {
            image,
            boxes: scene.boxes.iter().map(|b| b.to_array()).collect(),
            split: scene.split,
            lighting: scene.lighting,
            background: Some(background),
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n").expect("write to memory");
        if (i + 1) % 50 == 0 {
            log::info!("generated {} of {} scenes", i + 1, spec.n_scenes);
        }
    }
    let path = dir.join(MANIFEST);
    write_atomic(&path, &manifest)?;
    Ok(path)
}

/// A validated corpus whose images load on demand.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Reads and validates a manifest: every referenced file must exist and
/// every box must be valid and inside its image.
pub fn ingest_corpus(path: &Path) -> Result<Corpus> {
    let manifest = if path.is_dir() { path.join(MANIFEST) } else { path.to_path_buf() };
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut records = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Record {
            path: manifest.clone(),
            index,
            reason,
        };
        let record: ManifestRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        for rel in std::iter::once(&record.image).chain(record.background.as_ref()) {
            let p = root.join(rel);
            if !p.is_file() {
                return Err(bad(format!("missing file {}", p.display())));
            }
        }
        let (w, h) = image::image_dimensions(root.join(&record.image)).map_err(|e| bad(e.to_string()))?;
        for (k, b) in record.boxes.iter().enumerate() {
            let bx = BoundingBox {
                x_min: b[0],
                y_min: b[1],
                x_max: b[2],
                y_max: b[3],
            };
            if bx.validate().is_err() || !bx.contained_in(w as usize, h as usize) {
                return Err(bad(format!("box {k} {b:?} is invalid or outside the {w}x{h} image")));
            }
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::Record {
            path: manifest,
            index: 0,
            reason: "manifest has no records".into(),
        });
    }
    Ok(Corpus { root, records })
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn boxes(&self, i: usize) -> Vec<BoundingBox> {
        self.records[i]
            .boxes
            .iter()
            .map(|b| BoundingBox {
                x_min: b[0],
                y_min: b[1],
                x_max: b[2],
                y_max: b[3],
            })
            .collect()
    }

    pub fn load(&self, i: usize) -> Result<EvalSample> {
        Ok(EvalSample {
            image: Image::load(&self.root.join(&self.records[i].image))?,
            boxes: self.boxes(i),
        })
    }

    pub fn load_background(&self, i: usize) -> Result<Option<Image>> {
        self.records[i]
            .background
            .as_ref()
            .map(|b| Image::load(&self.root.join(b)))
            .transpose()
    }

    /// Indices of records in `split` (all records for `None`), in manifest order.
    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| split.is_none_or(|s| self.records[i].split == s))
            .collect()
    }

    /// Samples in manifest order.
    pub fn iter(&self) -> impl Iterator<Item = Result<EvalSample>> + '_ {
        (0..self.len()).map(|i| self.load(i))
    }
}
