use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{EncoderConfig, EncoderParams, FreezeFlags, Weights};
use super::vocab::SubwordVocab;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Versioned JSON container for an encoder and its tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub vocab: SubwordVocab,
    pub weights: Weights,
    pub freeze: FreezeFlags,
    pub rng_state: Option<RngState>,
}

impl Checkpoint {
    pub fn new(params: &EncoderParams, vocab: &SubwordVocab, rng_state: Option<RngState>) -> Result<Self> {
        if vocab.len() != params.config.vocab_size {
            return Err(Error::Dimension {
                expected: params.config.vocab_size,
                actual: vocab.len(),
            });
        }
        Ok(Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            config: params.config.clone(),
            vocab: vocab.clone(),
            weights: params.weights.clone(),
            freeze: params.freeze.clone(),
            rng_state,
        })
    }

    pub fn params(&self) -> EncoderParams {
        EncoderParams {
            config: self.config.clone(),
            weights: self.weights.clone(),
            freeze: self.freeze.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Load(format!(
                "{}: unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
                path.display(),
                ck.format_version
            )));
        }
        let vocab = ck.vocab.reindex()?;
        ck.config.validate()?;
        let bad = ck.weights.shape_mismatches(&ck.config);
        if !bad.is_empty() {
            return Err(Error::Load(format!("{}: shape mismatch in {}", path.display(), bad.join(", "))));
        }
        if !ck.weights.all_finite() {
            return Err(Error::Load(format!("{}: non-finite parameters", path.display())));
        }
        if vocab.len() != ck.config.vocab_size {
            return Err(Error::Load(format!(
                "{}: vocabulary has {} pieces, config expects {}",
                path.display(),
                vocab.len(),
                ck.config.vocab_size
            )));
        }
        Ok(Checkpoint { vocab, ..ck })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::params::{init_params, InitScheme};
    use crate::encoder::vocab::train_subword_vocab;

    #[test]
    fn round_trip_and_load_scheme() {
        let vocab = train_subword_vocab(&["hello world".to_string()], 40).unwrap();
        let cfg = EncoderConfig {
            num_layers: 2,
            num_heads: 2,
            hidden_size: 8,
            ffn_size: 16,
            max_seq_len: 8,
            vocab_size: vocab.len(),
            ..Default::default()
        };
        let p = init_params(&cfg, &InitScheme::Uniform, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let rs = crate::rng::RngState { seed: 3, word_pos: 17 };
        Checkpoint::new(&p, &vocab, Some(rs)).unwrap().save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.params(), p);
        assert_eq!(back.vocab.encode("hello", 8), vocab.encode("hello", 8));
        assert_eq!(back.rng_state, Some(rs));

        let loaded = init_params(&cfg, &InitScheme::Load(path.clone()), 99).unwrap();
        assert_eq!(loaded.weights, p.weights);

        let wider = EncoderConfig { hidden_size: 16, ..cfg.clone() };
        let err = init_params(&wider, &InitScheme::Load(path), 0).unwrap_err().to_string();
        assert!(err.contains("embeddings"), "{err}");
        assert!(err.contains("layer 1"), "{err}");
    }

    #[test]
    fn rejects_garbage_and_versions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{\"format_version\": 1}").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Load(_))));
        assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
    }
}
