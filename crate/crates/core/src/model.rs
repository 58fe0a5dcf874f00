//! The full network: encoder, forest decoder and fragment detector sharing one
//! parameter store.

use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::corpus::{flatten_forest, AnnotatedSentence, Entity};
use crate::decoder::{decode_forest_traced, DecodeConfig, DecodedEdge, Decoder, DecoderConfig};
use crate::detector::{Detector, DetectorConfig};
use crate::encoder::{EncodedBatch, Encoder, EncoderConfig, EncoderError, EncoderInput};
use crate::params::{Init, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Published hyperparameters.
    Paper,
    /// Small enough to train from scratch on a laptop CPU.
    Desk,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset {other:?} (expected paper or desk)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Entity type labels; their order fixes the detector channels.
    pub types: Vec<String>,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub detector: DetectorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(Preset::Desk)
    }
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => ModelConfig {
                types: Vec::new(),
                encoder: EncoderConfig::paper(),
                decoder: DecoderConfig::paper(),
                detector: DetectorConfig {
                    mlp_dim: 128,
                    ..DetectorConfig::default()
                },
            },
            Preset::Desk => ModelConfig {
                types: Vec::new(),
                encoder: EncoderConfig::desk(),
                decoder: DecoderConfig::desk(),
                detector: DetectorConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.types.is_empty() {
            return Err("model.types must list at least one entity type".into());
        }
        for (i, t) in self.types.iter().enumerate() {
            if self.types[..i].contains(t) {
                return Err(format!("model.types lists {t:?} twice"));
            }
        }
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.detector.mlp_dim == 0 {
            return Err("detector.mlp_dim must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
    detector: Detector,
}

/// Decoded entities of one sentence plus the links the decoder followed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Prediction {
    pub entities: Vec<Entity>,
    pub edges: Vec<DecodedEdge>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng);
        let mut params = ParamStore::new();
        let k = config.types.len();
        let encoder = Encoder::new(&mut params, &mut init, &config.encoder);
        let d = config.encoder.reduced_dim;
        let decoder = Decoder::new(
            &mut params,
            &mut init,
            &config.decoder,
            config.encoder.state_dim(),
            d,
            k,
        );
        let detector = Detector::new(&mut params, &mut init, &config.detector, d, k);
        Ok(Model {
            config,
            params,
            encoder,
            decoder,
            detector,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn types(&self) -> &[String] {
        &self.config.types
    }

    pub fn type_index(&self, label: &str) -> Option<usize> {
        self.config.types.iter().position(|t| t == label)
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        batch: &[EncoderInput<'_>],
    ) -> Result<EncodedBatch, EncoderError> {
        self.encoder.forward(g, batch)
    }

    /// Decodes one packed batch.
    pub fn predict_batch(
        &self,
        batch: &[EncoderInput<'_>],
        decode: &DecodeConfig,
    ) -> Result<Vec<Prediction>, ModelError> {
        let mut g = Graph::inference(&self.params);
        let enc = self.encode(&mut g, batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..batch.len() {
            let sent = enc.sentence(&mut g, i);
            let (forest, edges) = decode_forest_traced(
                &mut g,
                &self.decoder,
                &self.detector,
                &sent,
                &self.config.types,
                decode,
            );
            out.push(Prediction {
                entities: flatten_forest(&forest),
                edges,
            });
        }
        Ok(out)
    }

    /// Decodes `inputs` in consecutive batches of `batch_size` sentences;
    /// batches run in parallel on the rayon pool.
    pub fn predict(
        &self,
        inputs: &[EncoderInput<'_>],
        decode: &DecodeConfig,
        batch_size: usize,
    ) -> Result<Vec<Prediction>, ModelError> {
        let batches: Vec<_> = inputs
            .par_chunks(batch_size.max(1))
            .map(|chunk| self.predict_batch(chunk, decode))
            .collect::<Result<_, _>>()?;
        Ok(batches.into_iter().flatten().collect())
    }
}

/// Sentences plus, for models reading external token vectors, one matrix
/// per sentence.
#[derive(Clone, Copy, Debug)]
pub struct Dataset<'a> {
    pub sentences: &'a [AnnotatedSentence],
    pub vectors: Option<&'a [Mat]>,
}

impl<'a> Dataset<'a> {
    pub fn new(sentences: &'a [AnnotatedSentence]) -> Self {
        Dataset {
            sentences,
            vectors: None,
        }
    }

    pub fn with_vectors(sentences: &'a [AnnotatedSentence], vectors: &'a [Mat]) -> Self {
        assert_eq!(sentences.len(), vectors.len(), "one vector matrix per sentence");
        Dataset {
            sentences,
            vectors: Some(vectors),
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn input(&self, index: usize) -> EncoderInput<'a> {
        EncoderInput {
            tokens: &self.sentences[index].tokens,
            vectors: self.vectors.map(|v| &v[index]),
        }
    }

    pub fn inputs(&self) -> Vec<EncoderInput<'a>> {
        (0..self.len()).map(|i| self.input(i)).collect()
    }
}
