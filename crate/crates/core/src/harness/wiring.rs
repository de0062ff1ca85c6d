//! Methods, ablation variants and how each one is assembled and scored.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    centric_user_embedding, mf_train, tempfusion_user_embeddings, MfModel, PopularityModel,
};
use crate::corpus::store::CorpusData;
use crate::embedder::{EmbeddingTable, EmbeddingVector};
use crate::error::{check_dim, Error, Result};
use crate::eval::ItemScorer;
use crate::scorer::{
    fit, BoundNeural, Head, HeadConfig, HeadKind, NeuralModel, PairIndex, TrainConfig, TrainLog,
    UserInput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "popularity")]
    Popularity,
    #[serde(rename = "mf")]
    Mf,
    #[serde(rename = "centric")]
    Centric,
    #[serde(rename = "temp-fusion")]
    TempFusion,
    #[serde(rename = "llm-tp")]
    LlmTp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Popularity,
        Method::Mf,
        Method::Centric,
        Method::TempFusion,
        Method::LlmTp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Popularity => "popularity",
            Method::Mf => "mf",
            Method::Centric => "centric",
            Method::TempFusion => "temp-fusion",
            Method::LlmTp => "llm-tp",
        }
    }

    /// Methods scored by a [`NeuralModel`] over text embeddings.
    pub fn is_neural(self) -> bool {
        matches!(self, Method::Centric | Method::TempFusion | Method::LlmTp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationVariant {
    Full,
    St,
    Lt,
    Nots,
    Dp,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::St,
        AblationVariant::Lt,
        AblationVariant::Nots,
        AblationVariant::Dp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::St => "st",
            AblationVariant::Lt => "lt",
            AblationVariant::Nots => "nots",
            AblationVariant::Dp => "dp",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Where a neural model's user input comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSource {
    /// Short- and long-term profile vectors.
    ProfilePair,
    ShortProfile,
    LongProfile,
    GeneralProfile,
    /// Centroid of the train items' vectors.
    ItemCentroid,
    /// Recent-window and whole-history item centroids.
    ItemPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub fused: bool,
    pub head: HeadKind,
    pub input: InputSource,
}

/// The wiring table. Only `llm-tp` has ablation variants; popularity and MF
/// are not neural.
pub fn wiring(method: Method, variant: AblationVariant) -> Result<Wiring> {
    use AblationVariant as V;
    let w = |fused, head, input| Ok(Wiring { fused, head, input });
    match (method, variant) {
        (Method::LlmTp, V::Full) => w(true, HeadKind::Mlp, InputSource::ProfilePair),
        (Method::LlmTp, V::St) => w(false, HeadKind::Mlp, InputSource::ShortProfile),
        (Method::LlmTp, V::Lt) => w(false, HeadKind::Mlp, InputSource::LongProfile),
        (Method::LlmTp, V::Nots) => w(false, HeadKind::Mlp, InputSource::GeneralProfile),
        (Method::LlmTp, V::Dp) => w(true, HeadKind::Dot, InputSource::ProfilePair),
        (Method::Centric, V::Full) => w(false, HeadKind::Mlp, InputSource::ItemCentroid),
        (Method::TempFusion, V::Full) => w(true, HeadKind::Mlp, InputSource::ItemPair),
        (Method::Popularity | Method::Mf, _) => {
            Err(Error::Config(format!("{method} is not a neural method")))
        }
        (_, v) => Err(Error::Config(format!("variant {v} applies only to llm-tp"))),
    }
}

/// A freshly initialized model for `method`/`variant`.
pub fn wire_variant(
    method: Method,
    variant: AblationVariant,
    dim: usize,
    head: &HeadConfig,
    seed: u64,
) -> Result<NeuralModel> {
    let w = wiring(method, variant)?;
    Ok(NeuralModel::init(dim, w.fused, w.head, head, seed))
}

/// Per-user inputs for every user of the split dataset. Only train slices
/// and train-derived profiles are read.
pub fn user_inputs(
    source: InputSource,
    corpus: &CorpusData,
    table: &EmbeddingTable,
    n_recent: usize,
) -> Result<BTreeMap<String, UserInput>> {
    let mut out = BTreeMap::new();
    for split in corpus.splits.iter() {
        let user = &split.user_id;
        let profile = || {
            table
                .profiles
                .get(user)
                .ok_or_else(|| Error::MissingEmbedding(format!("profiles of {user}")))
        };
        let input = match source {
            InputSource::ProfilePair => {
                let p = profile()?;
                UserInput::Pair {
                    short: p.short.clone(),
                    long: p.long.clone(),
                }
            }
            InputSource::ShortProfile => UserInput::Single(profile()?.short.clone()),
            InputSource::LongProfile => UserInput::Single(profile()?.long.clone()),
            InputSource::GeneralProfile => {
                UserInput::Single(profile()?.general.clone().ok_or_else(|| {
                    Error::MissingEmbedding(format!("general profile of {user} (needed by nots)"))
                })?)
            }
            InputSource::ItemCentroid => {
                UserInput::Single(centric_user_embedding(&split.train, &table.items)?)
            }
            InputSource::ItemPair => {
                let (short, long) =
                    tempfusion_user_embeddings(&split.train, &table.items, n_recent)?;
                UserInput::Pair { short, long }
            }
        };
        out.insert(user.clone(), input);
    }
    Ok(out)
}

/// Hyperparameters shared by every model of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub dim: usize,
    pub n_recent: usize,
    pub train: TrainConfig,
    pub head: HeadConfig,
    pub mf_factors: usize,
}

/// Trained parameters of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Popularity(PopularityModel),
    Mf(MfModel),
    Neural(NeuralModel),
}

impl ModelParams {
    /// Names of the parameter arrays, for introspection.
    pub fn parameter_names(&self) -> Vec<String> {
        match self {
            ModelParams::Popularity(_) => vec!["counts".into()],
            ModelParams::Mf(_) => vec!["p".into(), "q".into()],
            ModelParams::Neural(m) => {
                let mut names: Vec<String> =
                    m.fusion.iter().map(|_| "fusion.w_a".to_string()).collect();
                if let Head::Mlp(h) = &m.head {
                    for l in 0..h.layers.len() {
                        names.push(format!("mlp.{l}.weights"));
                        names.push(format!("mlp.{l}.bias"));
                    }
                }
                names
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Popularity(_) => Ok(()),
            ModelParams::Mf(m) => m.validate(),
            ModelParams::Neural(m) => m.validate(),
        }
    }
}

/// Trains one method (or `llm-tp` variant) on the corpus's train slices.
/// Every model of a run shares the seed, so initializations, negatives and
/// dropout masks are drawn from identical streams.
pub fn train_model(
    method: Method,
    variant: AblationVariant,
    corpus: &CorpusData,
    table: Option<&EmbeddingTable>,
    settings: &ModelSettings,
) -> Result<(ModelParams, Option<TrainLog>)> {
    match method {
        Method::Popularity => Ok((
            ModelParams::Popularity(PopularityModel::from_splits(&corpus.splits)?),
            None,
        )),
        Method::Mf => {
            let index = PairIndex::from_splits(&corpus.splits, &corpus.catalog);
            let (model, log) =
                mf_train(&index, &corpus.splits, settings.mf_factors, &settings.train)?;
            Ok((ModelParams::Mf(model), Some(log)))
        }
        _ => {
            let table =
                table.ok_or_else(|| Error::invalid(format!("{method} needs embeddings")))?;
            check_dim(settings.dim, table.dim)?;
            let w = wiring(method, variant)?;
            let inputs = user_inputs(w.input, corpus, table, settings.n_recent)?;
            let index = PairIndex::from_splits(&corpus.splits, &corpus.catalog);
            let users: Vec<UserInput> = index.users.iter().map(|u| inputs[u].clone()).collect();
            let items: Vec<EmbeddingVector> = index
                .items
                .iter()
                .map(|i| table.item(i).cloned())
                .collect::<Result<_>>()?;
            let model = wire_variant(
                method,
                variant,
                settings.dim,
                &settings.head,
                settings.train.seed,
            )?;
            let mut bound = BoundNeural::new(model, &users, &items)?;
            let data = index.pair_data(
                &corpus.splits,
                settings.train.negatives_per_positive,
                settings.train.seed,
            )?;
            let log = fit(&mut bound, &data, &settings.train)?;
            Ok((ModelParams::Neural(bound.model), Some(log)))
        }
    }
}

/// Read-only scorer over a neural model with user and item sides computed
/// once up front.
pub struct NeuralScorer<'a> {
    model: &'a NeuralModel,
    users: HashMap<String, Vec<f64>>,
    items: HashMap<String, Vec<f64>>,
}

impl<'a> NeuralScorer<'a> {
    pub fn new(
        model: &'a NeuralModel,
        inputs: &BTreeMap<String, UserInput>,
        items: &BTreeMap<String, EmbeddingVector>,
    ) -> Result<Self> {
        let users = inputs
            .iter()
            .map(|(u, input)| Ok((u.clone(), model.user_side(&model.user_vector(input)?.0)?)))
            .collect::<Result<_>>()?;
        let items = items
            .iter()
            .map(|(i, v)| Ok((i.clone(), model.item_side(&v.0)?)))
            .collect::<Result<_>>()?;
        Ok(NeuralScorer {
            model,
            users,
            items,
        })
    }
}

impl ItemScorer for NeuralScorer<'_> {
    fn score_items(&self, user_id: &str, items: &[String]) -> Result<Vec<f64>> {
        let user = self
            .users
            .get(user_id)
            .ok_or_else(|| Error::invalid(format!("no input for user {user_id}")))?;
        items
            .iter()
            .map(|i| {
                let side = self
                    .items
                    .get(i)
                    .ok_or_else(|| Error::MissingEmbedding(format!("item {i}")))?;
                Ok(self.model.score_sides(user, side))
            })
            .collect()
    }
}

impl ItemScorer for PopularityModel {
    fn score_items(&self, _user_id: &str, items: &[String]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|i| self.score(i)).collect())
    }
}

pub struct MfScorer<'a> {
    model: &'a MfModel,
    users: HashMap<&'a str, usize>,
    items: HashMap<&'a str, usize>,
}

impl<'a> MfScorer<'a> {
    pub fn new(model: &'a MfModel) -> Self {
        let index = |ids: &'a [String]| {
            ids.iter()
                .enumerate()
                .map(|(n, id)| (id.as_str(), n))
                .collect()
        };
        MfScorer {
            model,
            users: index(&model.users),
            items: index(&model.items),
        }
    }
}

impl ItemScorer for MfScorer<'_> {
    fn score_items(&self, user_id: &str, items: &[String]) -> Result<Vec<f64>> {
        let u = *self
            .users
            .get(user_id)
            .ok_or_else(|| Error::invalid(format!("unknown user {user_id}")))?;
        items
            .iter()
            .map(|i| {
                let i = *self
                    .items
                    .get(i.as_str())
                    .ok_or_else(|| Error::UnknownItem(i.clone()))?;
                Ok(self.model.score_index(u, i))
            })
            .collect()
    }
}

/// A scorer for trained parameters, rebuilding user inputs from the corpus.
pub fn scorer_for<'a>(
    params: &'a ModelParams,
    method: Method,
    variant: AblationVariant,
    corpus: &CorpusData,
    table: Option<&EmbeddingTable>,
    n_recent: usize,
) -> Result<Box<dyn ItemScorer + 'a>> {
    Ok(match params {
        ModelParams::Popularity(m) => Box::new(m.clone()),
        ModelParams::Mf(m) => Box::new(MfScorer::new(m)),
        ModelParams::Neural(m) => {
            let table =
                table.ok_or_else(|| Error::invalid(format!("{method} needs embeddings")))?;
            let inputs = user_inputs(wiring(method, variant)?.input, corpus, table, n_recent)?;
            Box::new(NeuralScorer::new(m, &inputs, &table.items)?)
        }
    })
}
