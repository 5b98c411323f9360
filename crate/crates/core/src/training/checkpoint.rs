//! Versioned single-file checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u64 header length, a JSON
//! header (format version, model config, vocabulary snapshot, training
//! metadata, tensor directory with name/shape/offset/dtype), then the raw
//! little-endian tensor payloads in directory order. Save -> load -> save
//! is byte-identical.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::career::{CareerModel, TransformerConfig};
use crate::corpus::{OccId, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{
    BagOfJobsModel, HeadKind, MarkovModel, Model, RegressionModel, UniformModel,
};
use crate::numerics::ParamTensors;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CSEQCKPT";

/// Model family plus the hyperparameters needed to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Uniform,
    Markov { order: u8, lambda1: f64, lambda2: f64 },
    Regression { head: HeadKind },
    BagOfJobs { dim: usize, head: HeadKind },
    Career {
        #[serde(flatten)]
        config: TransformerConfig,
    },
}

impl ModelConfig {
    pub fn markov(order: u8) -> Self {
        ModelConfig::Markov {
            order,
            lambda1: crate::models::DEFAULT_LAMBDA1,
            lambda2: crate::models::DEFAULT_LAMBDA2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::Uniform => "uniform",
            ModelConfig::Markov { order: 1, .. } => "markov1",
            ModelConfig::Markov { .. } => "markov2",
            ModelConfig::Regression { .. } => "regression",
            ModelConfig::BagOfJobs { .. } => "bagofjobs",
            ModelConfig::Career { .. } => "career",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Optimization step the parameters were taken from.
    pub step: u64,
    pub validation_ppl: Option<f64>,
    pub seed: u64,
    /// Set when the model was trained (or fine-tuned) with job dropout;
    /// required by greedy rationalization.
    pub dropout_compatible: bool,
    /// Cutoff year the training corpus was truncated to, if any.
    pub train_cutoff_year: Option<i32>,
    /// Training aborted on a non-finite loss; parameters are the last good
    /// validation checkpoint.
    pub diverged: bool,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        CheckpointMeta {
            step: 0,
            validation_ppl: None,
            seed: 0,
            dropout_compatible: false,
            train_cutoff_year: None,
            diverged: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, ArrayD<f64>)>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        for (name, tensor) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: tensor.shape().to_vec(),
                dtype: "f64".to_string(),
                offset,
            });
            offset += (tensor.len() * 8) as u64;
        }
        let header = Header {
            version: self.version,
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        out.write_all(MAGIC)?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        out.write_all(&header_bytes)?;
        for (_, tensor) in &self.tensors {
            let standard = tensor.as_standard_layout();
            for &v in standard.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut header_bytes)?;
        let header: Header =
            serde_json::from_slice(&header_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.version
            )));
        }
        let mut payload = Vec::new();
        input.read_to_end(&mut payload)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 8;
            if entry.dtype != "f64" {
                return Err(Error::Checkpoint(format!("unsupported dtype {}", entry.dtype)));
            }
            if end > payload.len() {
                return Err(Error::Checkpoint(format!("tensor {} overruns payload", entry.name)));
            }
            let values: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("length 8")))
                .collect();
            let array = ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((entry.name.clone(), array));
        }
        Ok(Checkpoint {
            version: header.version,
            config: header.config,
            vocabulary: header.vocabulary,
            meta: header.meta,
            tensors,
        })
    }

    /// Snapshot a model's parameters.
    pub fn from_model(model: &Model, meta: CheckpointMeta) -> Checkpoint {
        let (config, vocabulary, tensors) = match model {
            Model::Uniform(m) => (ModelConfig::Uniform, m.vocab.clone(), Vec::new()),
            Model::Markov { vocab, model } => {
                let mut tensors: Vec<(String, ArrayD<f64>)> = vec![
                    ("unigram".into(), model.unigram().clone().into_dyn()),
                    ("first_order".into(), model.first_order().clone().into_dyn()),
                ];
                let nnz: usize = model.second_order().values().map(Vec::len).sum();
                let mut rows = Array2::zeros((nnz, 4));
                let mut r = 0;
                for (&(prev2, prev), entries) in model.second_order() {
                    for &(target, p) in entries {
                        rows[[r, 0]] = prev2 as f64;
                        rows[[r, 1]] = prev as f64;
                        rows[[r, 2]] = target as f64;
                        rows[[r, 3]] = p;
                        r += 1;
                    }
                }
                tensors.push(("second_order".into(), rows.into_dyn()));
                (
                    ModelConfig::Markov {
                        order: model.order,
                        lambda1: model.lambda1,
                        lambda2: model.lambda2,
                    },
                    vocab.clone(),
                    tensors,
                )
            }
            Model::Regression(m) => (
                ModelConfig::Regression { head: m.params.head.kind() },
                m.vocab.clone(),
                named_tensors(&m.params),
            ),
            Model::BagOfJobs(m) => (
                ModelConfig::BagOfJobs { dim: m.dim, head: m.params.head.kind() },
                m.vocab.clone(),
                named_tensors(&m.params),
            ),
            Model::Career(m) => (
                ModelConfig::Career { config: m.config },
                m.vocab.clone(),
                named_tensors(&m.params),
            ),
        };
        Checkpoint { version: FORMAT_VERSION, config, vocabulary, meta, tensors }
    }

    /// Rebuild the model this checkpoint snapshots.
    pub fn to_model(&self) -> Result<Model> {
        let vocab = self.vocabulary.clone();
        match &self.config {
            ModelConfig::Uniform => Ok(Model::Uniform(UniformModel { vocab })),
            ModelConfig::Markov { order, lambda1, lambda2 } => {
                let map: BTreeMap<&str, &ArrayD<f64>> =
                    self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
                let unigram: Array1<f64> = fetch(&map, "unigram")?
                    .clone()
                    .into_dimensionality()
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let first: Array2<f64> = fetch(&map, "first_order")?
                    .clone()
                    .into_dimensionality()
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let rows: Array2<f64> = fetch(&map, "second_order")?
                    .clone()
                    .into_dimensionality()
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                let mut second: BTreeMap<(OccId, OccId), Vec<(OccId, f64)>> = BTreeMap::new();
                for r in rows.rows() {
                    second
                        .entry((r[0] as OccId, r[1] as OccId))
                        .or_default()
                        .push((r[2] as OccId, r[3]));
                }
                let model =
                    MarkovModel::from_parts(*order, *lambda1, *lambda2, unigram, first, second)?;
                Ok(Model::Markov { vocab, model })
            }
            ModelConfig::Regression { head } => {
                let mut model = RegressionModel::new(vocab, *head);
                fill_params(&mut model.params, &self.tensors)?;
                Ok(Model::Regression(model))
            }
            ModelConfig::BagOfJobs { dim, head } => {
                let mut model = BagOfJobsModel::new(vocab, *dim, *head, 0);
                fill_params(&mut model.params, &self.tensors)?;
                Ok(Model::BagOfJobs(model))
            }
            ModelConfig::Career { config } => {
                let mut model = CareerModel::new(vocab, *config, 0)?;
                fill_params(&mut model.params, &self.tensors)?;
                Ok(Model::Career(model))
            }
        }
    }
}

fn named_tensors<P: ParamTensors>(params: &P) -> Vec<(String, ArrayD<f64>)> {
    params
        .param_descs()
        .into_iter()
        .zip(params.param_views())
        .map(|(d, v)| (d.name, v.to_owned()))
        .collect()
}

fn fetch<'a>(
    map: &BTreeMap<&str, &'a ArrayD<f64>>,
    name: &str,
) -> Result<&'a ArrayD<f64>> {
    map.get(name).copied().ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

/// Load named tensors into a parameter struct; every parameter must be
/// covered and shapes must match the embedded config.
fn fill_params<P: ParamTensors>(params: &mut P, tensors: &[(String, ArrayD<f64>)]) -> Result<()> {
    let map: BTreeMap<&str, &ArrayD<f64>> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let descs = params.param_descs();
    let mut views = params.param_views_mut();
    if map.len() != views.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model needs {}",
            map.len(),
            views.len()
        )));
    }
    for (desc, view) in descs.iter().zip(views.iter_mut()) {
        let tensor = fetch(&map, &desc.name)?;
        if tensor.shape() != view.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {:?}, expected {:?}",
                desc.name,
                tensor.shape(),
                view.shape()
            )));
        }
        view.assign(tensor);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, LengthSpec, SyntheticKind, SyntheticSpec};
    use crate::models::fit_markov;

    fn small_corpus() -> crate::corpus::Corpus {
        generate_synthetic(&SyntheticSpec {
            occupations: 4,
            kind: SyntheticKind::StickyMarkov { stay: 0.7 },
            sequences: 30,
            length: LengthSpec::Fixed(8),
            seed: 2,
            start_year: 2000,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let corpus = small_corpus();
        let model = Model::Markov {
            vocab: corpus.vocabulary.clone(),
            model: fit_markov(&corpus, 2).unwrap(),
        };
        let ckpt = Checkpoint::from_model(
            &model,
            CheckpointMeta { step: 17, validation_ppl: Some(3.25), seed: 9, ..Default::default() },
        );
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(loaded.meta, ckpt.meta);
    }

    #[test]
    fn markov_model_survives_round_trip() {
        let corpus = small_corpus();
        let fitted = fit_markov(&corpus, 2).unwrap();
        let model = Model::Markov { vocab: corpus.vocabulary.clone(), model: fitted.clone() };
        let ckpt = Checkpoint::from_model(&model, CheckpointMeta::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        match Checkpoint::load(&path).unwrap().to_model().unwrap() {
            Model::Markov { model, .. } => {
                assert_eq!(model, fitted);
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn career_model_survives_round_trip() {
        let corpus = small_corpus();
        let model = CareerModel::new(
            corpus.vocabulary.clone(),
            crate::career::TransformerConfig::tiny(),
            5,
        )
        .unwrap();
        let ckpt = Checkpoint::from_model(&Model::Career(model.clone()), CheckpointMeta::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        ckpt.save(&path).unwrap();
        match Checkpoint::load(&path).unwrap().to_model().unwrap() {
            Model::Career(loaded) => assert_eq!(loaded, model),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn config_json_uses_kind_tags() {
        let json = serde_json::to_string(&ModelConfig::markov(1)).unwrap();
        assert!(json.contains("\"kind\":\"markov\""), "{json}");
        let career = ModelConfig::Career { config: TransformerConfig::tiny() };
        let json = serde_json::to_string(&career).unwrap();
        assert!(json.contains("\"kind\":\"career\"") && json.contains("\"layers\":2"), "{json}");
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, career);
    }
}
