use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingVector;
use crate::error::Result;
use crate::toyworld::{apply_edit, render_scene, scene_key, SoundCategory};

use super::{ImageEncoder, TextEmbedder, ToyImageEncoder};

pub const TEXT_RENDER_SIDE: usize = 32;

/// Embeds text by rendering it: the scene keyed on the prompt's content words,
/// graded by every category the prompt mentions, then image-encoded.
///
/// Text and image deltas therefore point the same way when an image edit
/// matches a prompt edit.
pub struct ToyTextEmbedder {
    image: ToyImageEncoder,
    categories: Vec<SoundCategory>,
}

impl ToyTextEmbedder {
    pub fn new(image: ToyImageEncoder, categories: Vec<SoundCategory>) -> Self {
        Self { image, categories }
    }
}

impl TextEmbedder for ToyTextEmbedder {
    fn dim(&self) -> usize {
        self.image.dim()
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector> {
        let key = scene_key(text, &self.categories);
        let mut img = render_scene(key, 0, TEXT_RENDER_SIDE, TEXT_RENDER_SIDE)?;
        for cat in self.categories.iter().filter(|c| c.mentioned_in(text)) {
            img = apply_edit(&img, cat, 1.0)?;
        }
        self.image.encode_image(&img)
    }

    fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.image.fingerprint().as_bytes());
        for c in &self.categories {
            h.update(c.name.as_bytes());
        }
        hex::encode(h.finalize())
    }
}
