//! Shared inputs for the criterion benches.

use patchkit_core::attack::{PersonSample, TrainData};
use patchkit_core::geometry::{humanoid, Humanoid};
use patchkit_core::harness::corpus::generate_scene;
use patchkit_core::harness::SyntheticCorpusSpec;

/// The body model and a small in-memory training set of `n` scenes.
pub fn small_train_data(n: usize) -> (Humanoid, TrainData) {
    let model = humanoid().expect("built-in model");
    let spec = SyntheticCorpusSpec {
        n_scenes: n,
        ..SyntheticCorpusSpec::default()
    };
    let mut persons = Vec::new();
    let mut backgrounds = Vec::new();
    for i in 0..n {
        let scene = generate_scene(&spec, &model, i).expect("scene");
        persons.push(PersonSample {
            image: scene.image,
            gt: scene.boxes[0],
        });
        backgrounds.push(scene.background);
    }
    (model, TrainData { persons, backgrounds })
}
