//! Corpora, image sets and synthetic tasks.

mod images;
mod planted;
mod synth;
mod text;

pub use images::{augment, augment_with, decode_cifar, load_images_cifar_binary, shapes_dataset, ImageSet, CIFAR_RECORD, CIFAR_SIDE};
pub use planted::PlantedTask;
pub use synth::{synth_lm_corpus, Grammar};
pub use text::{lm_windows, load_text, Level, Split, TextCorpus};
