//! End-to-end runs wired from a [`RunConfig`]: fixture training, patch
//! training, evaluation, sweeps, the occlusion protocol, and demos.

use std::borrow::Cow;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{DetectorSection, RunConfig, SplitSelection};
use super::corpus::{background, ingest_corpus, render_person, BackgroundStyle, Corpus};
use super::persist::OutputDir;
use crate::attack::{
    apply_2d, render3d, sample_setup3d, train, write_trace, Patch, PersonSample, RoundLoss, TrainOutcome,
    TrainSource, TransformRanges,
};
use crate::bbox::BoundingBox;
use crate::detect::{
    bundled_detector, load_weights, quantize, train_toy_detector, write_weights, DetectorModel,
    DetectorTrainReport, LabelledInput, ToyDetector,
};
use crate::error::{Error, Result};
use crate::geometry::{compute_vertex_stress, deform_garment, humanoid, Humanoid};
use crate::image::Image;
use crate::metrics::{
    apply_patch_standard, attack_success, evaluate_scored, sweep_scored, write_asr_table, write_sweep_csv,
    EvalReport, EvalSample, Scored, OCCLUSION_AREA, PROTOCOL_PATCH_SIZE,
};
use crate::scene::Relighting;
use crate::seed;

/// The configured weight file, or the bundled fixture when none is set.
pub fn load_detector(section: &DetectorSection) -> Result<ToyDetector> {
    if section.weights.as_os_str().is_empty() {
        bundled_detector()
    } else {
        load_weights(&section.weights)
    }
}

fn random_texture<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Image {
    match rng.random_range(0..4) {
        0 => Image::from_vec(size, size, (0..size * size * 3).map(|_| rng.random()).collect())
            .expect("texture shape"),
        1 => Image::filled(size, size, [rng.random_range(0.0..1.0); 3]),
        2 => {
            let c = rng.random_range(2..6);
            let coarse = Image::from_vec(c, c, (0..c * c * 3).map(|_| rng.random()).collect()).expect("texture shape");
            coarse.resize(size, size)
        }
        _ => {
            let (a, b): ([f64; 3], [f64; 3]) = (rng.random(), rng.random());
            let period = rng.random_range(2..8);
            let mut img = Image::new(size, size);
            for y in 0..size {
                for x in 0..size {
                    img.set(x, y, if (y / period) % 2 == 0 { a } else { b });
                }
            }
            img
        }
    }
}

/// One labelled training image for the detector fixture. Persons wear
/// random shirt textures and sometimes carry pasted random patches, so
/// neither noise nor flat patches read as a reason to drop a detection.
pub fn detector_scene(
    model: &Humanoid,
    size: usize,
    seed_base: u64,
    index: usize,
    paste_prob: f64,
) -> Result<(Image, Vec<BoundingBox>)> {
    let mut rng = seed::stream(seed_base, &[index as u64]);
    let style = [BackgroundStyle::Gradient, BackgroundStyle::Noise, BackgroundStyle::Tiled][rng.random_range(0..3)];
    let bg = background(style, size, &mut rng);
    let (mut image, boxes) = if rng.random_bool(0.12) {
        (bg, Vec::new())
    } else {
        let texture = rng.random_bool(0.6).then(|| random_texture(&mut rng, 32));
        let (mut img, gt) = render_person(model, &bg, texture.as_ref(), &mut rng)?;
        if rng.random_bool(paste_prob) {
            let patch = Patch::from_image(random_texture(&mut rng, 60), 0)?;
            let t = TransformRanges::default().sample(&patch, &gt, &mut rng);
            img = apply_2d(&patch, &img, &gt, &t)?.image;
        }
        (img, vec![gt])
    };
    if rng.random_bool(0.2) {
        let m = rng.random_range(0.35..0.8);
        for v in image.data_mut() {
            *v *= m;
        }
    }
    Ok((image, boxes))
}

/// Pooled training and validation sets for the detector fixture.
pub fn detector_dataset(section: &DetectorSection) -> Result<(Vec<LabelledInput>, Vec<LabelledInput>)> {
    let model = humanoid()?;
    let size = section.arch.input_size;
    let make = |offset: usize, n: usize| -> Result<Vec<LabelledInput>> {
        (0..n)
            .map(|i| {
                let (img, boxes) = detector_scene(&model, size, section.data_seed, offset + i, section.patch_paste_prob)?;
                LabelledInput::from_image(&section.arch, &img, boxes)
            })
            .collect()
    };
    let train = make(0, section.train_scenes)?;
    let val = make(section.train_scenes, section.val_scenes)?;
    Ok((train, val))
}

/// Trains the fixture detector and writes `toy_detector.bin` and
/// `detector_train.json` into `out`.
pub fn train_detector_fixture(cfg: &RunConfig, out: &OutputDir) -> Result<(ToyDetector, DetectorTrainReport)> {
    log::info!(
        "generating {} training and {} validation scenes",
        cfg.detector.train_scenes,
        cfg.detector.val_scenes
    );
    let (train, val) = detector_dataset(&cfg.detector)?;
    let (mut model, report) = train_toy_detector(cfg.detector.arch.clone(), &train, &val, &cfg.detector.train)?;
    quantize(&mut model);
    out.write_with("toy_detector.bin", |f| write_weights(&model, BufWriter::new(f)).map_err(|e| Error::io("toy_detector.bin", e)))?;
    out.write("detector_train.json", &serde_json::to_vec_pretty(&report)?)?;
    Ok((model, report))
}

/// Corpus-backed [`TrainSource`] loading images on demand.
pub struct CorpusSource {
    corpus: Corpus,
    /// `(record, box)` pairs.
    persons: Vec<(usize, usize)>,
    backgrounds: Vec<usize>,
}

impl CorpusSource {
    pub fn new(corpus: Corpus, split: SplitSelection) -> Self {
        let idx = corpus.indices(split.as_split());
        let persons = idx
            .iter()
            .flat_map(|&i| (0..corpus.records[i].boxes.len()).map(move |b| (i, b)))
            .collect();
        CorpusSource {
            corpus,
            persons,
            backgrounds: idx,
        }
    }
}

impl TrainSource for CorpusSource {
    fn n_persons(&self) -> usize {
        self.persons.len()
    }

    fn person(&self, i: usize) -> Result<Cow<'_, PersonSample>> {
        let (r, b) = self.persons[i];
        let sample = self.corpus.load(r)?;
        Ok(Cow::Owned(PersonSample {
            image: sample.image,
            gt: sample.boxes[b],
        }))
    }

    fn n_backgrounds(&self) -> usize {
        self.backgrounds.len()
    }

    /// The person-free background when the manifest has one, else the image.
    fn background(&self, i: usize) -> Result<Cow<'_, Image>> {
        let r = self.backgrounds[i];
        Ok(Cow::Owned(match self.corpus.load_background(r)? {
            Some(bg) => bg,
            None => self.corpus.load(r)?.image,
        }))
    }
}

/// Trains a patch, writing `trace.csv` and `patch.png`/`patch.json`. On
/// failure the last good patch is saved as `patch.resume.png` and the trace
/// so far stays in `trace.csv.partial`.
pub fn run_train(
    cfg: &RunConfig,
    corpus: Corpus,
    detector: &dyn DetectorModel,
    out: &OutputDir,
    initial: Option<Patch>,
) -> Result<TrainOutcome> {
    out.check_writable("trace.csv")?;
    out.check_writable("patch.png")?;
    let model = humanoid()?;
    let source = CorpusSource::new(corpus, cfg.train_split);
    let hash = cfg.hash();
    let mut initial = match initial {
        Some(p) => p,
        None => Patch::random(cfg.attack.patch_size, cfg.attack.patch_size, cfg.attack.seeds.patch)?,
    };
    initial.provenance = hash.clone();
    let mut last = initial.clone();
    let mut rows: Vec<RoundLoss> = Vec::new();
    let result = train(&source, detector, &model, &cfg.attack, Some(initial), |row, p| {
        rows.push(*row);
        last.clone_from(p);
    });
    match result {
        Ok(mut outcome) => {
            outcome.patch.provenance = hash;
            out.write_with("trace.csv", |f| write_trace(&outcome.trace, f))?;
            save_patch(&outcome.patch, out, "patch")?;
            Ok(outcome)
        }
        Err(e) => {
            let partial = super::persist::partial_path(&out.path("trace.csv"));
            if let Ok(f) = File::create(&partial) {
                let _ = write_trace(&rows, f);
            }
            let _ = last.save(out.root(), "patch.resume");
            Err(e)
        }
    }
}

/// Saves a patch PNG and its sidecar through `.partial` files.
pub fn save_patch(patch: &Patch, out: &OutputDir, stem: &str) -> Result<()> {
    out.check_writable(&format!("{stem}.png"))?;
    let tmp = format!("{stem}.tmp");
    patch.save(out.root(), &tmp)?;
    out.commit(&out.path(&format!("{tmp}.png")), &format!("{stem}.png"))?;
    out.commit(&out.path(&format!("{tmp}.json")), &format!("{stem}.json"))?;
    Ok(())
}

/// Scores the selected corpus records, optionally wearing `patch` through
/// the standard pipeline.
pub fn score_corpus_with_patch(
    corpus: &Corpus,
    split: SplitSelection,
    patch: Option<&Patch>,
    occlusion: Option<f64>,
    detector: &dyn DetectorModel,
) -> Result<Vec<Scored>> {
    corpus
        .indices(split.as_split())
        .into_iter()
        .map(|i| {
            let sample = corpus.load(i)?;
            let sample = match patch {
                Some(p) => apply_patch_standard(p, &sample, occlusion)?,
                None => sample,
            };
            Ok(Scored {
                detections: detector.detect(&sample.image)?,
                gts: sample.boxes,
            })
        })
        .collect()
}

fn write_report(out: &OutputDir, stem: &str, report: &EvalReport) -> Result<()> {
    out.write(&format!("{stem}.json"), &(serde_json::to_string_pretty(report)? + "\n").into_bytes())?;
    out.write_with(&format!("{stem}.csv"), |f| write_sweep_csv(std::slice::from_ref(report), f))?;
    Ok(())
}

/// Evaluates `patch` (or the clean corpus) and writes `<stem>.json`/`.csv`.
pub fn run_eval(
    cfg: &RunConfig,
    corpus: &Corpus,
    detector: &dyn DetectorModel,
    patch: Option<&Patch>,
    out: &OutputDir,
    stem: &str,
) -> Result<EvalReport> {
    let scored = score_corpus_with_patch(corpus, cfg.eval.split, patch, None, detector)?;
    let report = evaluate_scored(&scored, &cfg.eval.thresholds)?;
    write_report(out, stem, &report)?;
    Ok(report)
}

/// Threshold sweep, written as `sweep.csv` (long form) and `sweep_asr.csv`
/// (ASR grid with one column per IoU threshold).
pub fn run_sweep(
    cfg: &RunConfig,
    corpus: &Corpus,
    detector: &dyn DetectorModel,
    patch: Option<&Patch>,
    out: &OutputDir,
) -> Result<Vec<EvalReport>> {
    let scored = score_corpus_with_patch(corpus, cfg.eval.split, patch, None, detector)?;
    let reports = sweep_scored(&scored, &cfg.eval.iou_grid, &cfg.eval.conf_grid)?;
    out.write_with("sweep.csv", |f| write_sweep_csv(&reports, f))?;
    out.write_with("sweep_asr.csv", |f| write_asr_table(&reports, f))?;
    Ok(reports)
}

/// Occlusion protocol outcome next to the unoccluded baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionOutcome {
    pub unoccluded: EvalReport,
    pub occluded: EvalReport,
}

pub fn run_occlusion(
    cfg: &RunConfig,
    corpus: &Corpus,
    detector: &dyn DetectorModel,
    patch: &Patch,
    out: &OutputDir,
) -> Result<OcclusionOutcome> {
    if (patch.width(), patch.height()) != (PROTOCOL_PATCH_SIZE, PROTOCOL_PATCH_SIZE) {
        log::warn!(
            "occlusion protocol expects a {0}x{0} patch; occluding 1/9 of a {1}x{2} patch",
            PROTOCOL_PATCH_SIZE,
            patch.width(),
            patch.height()
        );
    }
    let t = &cfg.eval.thresholds;
    let plain = score_corpus_with_patch(corpus, cfg.eval.split, Some(patch), None, detector)?;
    let occl = score_corpus_with_patch(corpus, cfg.eval.split, Some(patch), Some(OCCLUSION_AREA), detector)?;
    let outcome = OcclusionOutcome {
        unoccluded: evaluate_scored(&plain, t)?,
        occluded: evaluate_scored(&occl, t)?,
    };
    out.write("occlusion.json", &(serde_json::to_string_pretty(&outcome)? + "\n").into_bytes())?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleRow {
    pub angle_deg: f64,
    pub asr: f64,
    pub samples: usize,
}

/// ASR of 3D renders wearing `patch` at fixed yaw angles.
pub fn angle_sweep(cfg: &RunConfig, corpus: &Corpus, detector: &dyn DetectorModel, patch: &Patch) -> Result<Vec<AngleRow>> {
    let model = humanoid()?;
    let idx = corpus.indices(cfg.eval.split.as_split());
    let mut rows = Vec::new();
    for &deg in &cfg.eval.angles_deg {
        let mut successes = 0;
        for k in 0..cfg.eval.angle_samples {
            let r = idx[k % idx.len()];
            let bg = match corpus.load_background(r)? {
                Some(b) => b,
                None => corpus.load(r)?.image,
            };
            let mut rng = seed::stream(cfg.attack.seeds.scene, &[0xA17, k as u64]);
            let geo = seed::derive_seed(cfg.attack.seeds.geometry, &[0xA17, k as u64]);
            let mut setup = sample_setup3d(&bg, &model, &cfg.attack.scene3d, &mut rng, geo)?;
            let az = deg.to_radians();
            setup.params.azimuth = az;
            setup.params.orientation = [-az.sin(), az.cos()];
            let rendered = render3d(&setup, &model, patch, &cfg.attack.scene3d)?;
            let dets = detector.detect(&rendered.image)?;
            if attack_success(&dets, &rendered.gt, &cfg.eval.thresholds) {
                successes += 1;
            }
        }
        rows.push(AngleRow {
            angle_deg: deg,
            asr: successes as f64 / cfg.eval.angle_samples.max(1) as f64,
            samples: cfg.eval.angle_samples,
        });
    }
    Ok(rows)
}

pub fn write_angles(rows: &[AngleRow], out: &OutputDir) -> Result<()> {
    out.write_with("angles.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("angles.csv", e))
    })?;
    Ok(())
}

/// Reads rows written by [`write_angles`].
pub fn read_angles<R: std::io::Read>(r: R) -> Result<Vec<AngleRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes the rest and deformed garment as OBJ plus per-vertex stress.
pub fn deform_demo(cfg: &RunConfig, out: &OutputDir) -> Result<()> {
    let model = humanoid()?;
    let nonrigid = &cfg.attack.scene3d.nonrigid;
    let d = deform_garment(&model.garment, nonrigid, cfg.attack.seeds.geometry)?;
    out.write("garment_rest.obj", model.garment.to_obj().as_bytes())?;
    out.write("garment_deformed.obj", d.mesh.to_obj().as_bytes())?;
    let stress = compute_vertex_stress(&model.garment)?;
    out.write_with("stress.csv", |f| {
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["vertex", "sigma", "control"])?;
        for (i, s) in stress.sigma.iter().enumerate() {
            let control = d.control.indices.contains(&i);
            w.write_record([i.to_string(), format!("{s:.9}"), control.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("stress.csv", e))
    })?;
    Ok(())
}

/// Renders a person with `patch` on a corpus background and writes the
/// composite without and with the fitted relighting, plus its parameters.
pub fn relight_demo(cfg: &RunConfig, corpus: &Corpus, patch: &Patch, out: &OutputDir) -> Result<Relighting> {
    let model = humanoid()?;
    let bg = match corpus.load_background(0)? {
        Some(b) => b,
        None => corpus.load(0)?.image,
    };
    let mut scene = cfg.attack.scene3d.clone();
    let mut rng = seed::stream(cfg.attack.seeds.scene, &[0xDE30]);
    let setup = sample_setup3d(&bg, &model, &scene, &mut rng, cfg.attack.seeds.geometry)?;
    scene.relight_enabled = true;
    let lit = render3d(&setup, &model, patch, &scene)?;
    scene.relight_enabled = false;
    let raw = render3d(&setup, &model, patch, &scene)?;
    for (name, img) in [("relight_before.png", &raw.image), ("relight_after.png", &lit.image)] {
        let p = out.check_writable(name)?;
        img.save_png(&p)?;
    }
    out.write("relight.json", &(serde_json::to_string_pretty(&lit.relight)? + "\n").into_bytes())?;
    Ok(lit.relight)
}

/// Ingests the configured corpus.
pub fn open_corpus(cfg: &RunConfig) -> Result<Corpus> {
    ingest_corpus(&cfg.corpus.path)
}

/// Loads a patch from disk, or the seeded noise patch when `path` is `None`.
pub fn patch_or_random(cfg: &RunConfig, path: Option<&Path>) -> Result<Patch> {
    match path {
        Some(p) => Patch::load(p),
        None => Patch::random(cfg.attack.patch_size, cfg.attack.patch_size, cfg.attack.seeds.patch),
    }
}

/// Loads clean evaluation samples for `split` (small corpora only).
pub fn load_samples(corpus: &Corpus, split: SplitSelection) -> Result<Vec<EvalSample>> {
    corpus.indices(split.as_split()).into_iter().map(|i| corpus.load(i)).collect()
}
