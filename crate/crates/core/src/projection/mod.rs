//! Three-component projections of activation matrices: PCA, PLS, exact
//! t-SNE and UMAP, plus bootstrap dispersion of the embeddings.

pub mod bootstrap;
pub mod io;
pub mod pca;
pub mod pls;
pub mod tsne;
pub mod umap;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::autoencoder::ActivationSet;
use crate::volume::ClassLabel;

/// Number of components every method produces.
pub const COMPONENTS: usize = 3;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("response matrix is constant")]
    ConstantResponse,
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("embedding format: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Pca,
    Pls,
    Tsne,
    Umap,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pca, Method::Pls, Method::Tsne, Method::Umap];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pca => "pca",
            Method::Pls => "pls",
            Method::Tsne => "tsne",
            Method::Umap => "umap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Layer {
    L1,
    L2,
    L3,
}

impl Layer {
    pub const ALL: [Layer; 3] = [Layer::L1, Layer::L2, Layer::L3];

    pub fn name(self) -> &'static str {
        match self {
            Layer::L1 => "L1",
            Layer::L2 => "L2",
            Layer::L3 => "L3",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s.trim()))
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// n × 3 projection of one layer's activations by one method.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub method: Method,
    pub layer: Layer,
    pub subject_ids: Vec<String>,
    pub values: Vec<[f64; COMPONENTS]>,
    /// Hyperparameters and seed of the fit.
    pub metadata: BTreeMap<String, String>,
}

impl EmbeddingMatrix {
    pub fn new(
        method: Method,
        layer: Layer,
        subject_ids: Vec<String>,
        values: Vec<[f64; COMPONENTS]>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, ProjectionError> {
        if subject_ids.len() != values.len() {
            return Err(ProjectionError::Shape(format!("{} ids for {} rows", subject_ids.len(), values.len())));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ProjectionError::NonFinite("embedding"));
        }
        Ok(Self { method, layer, subject_ids, values, metadata })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[c]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneParams {
    pub perplexity: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            learning_rate: 200.0,
            iterations: 1000,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UmapParams {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub negative_sample_rate: usize,
    pub learning_rate: f64,
}

impl Default for UmapParams {
    fn default() -> Self {
        Self { n_neighbors: 15, min_dist: 0.1, spread: 1.0, epochs: 500, negative_sample_rate: 5, learning_rate: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProjectionParams {
    pub tsne: TsneParams,
    pub umap: UmapParams,
}

/// Row-stacks one layer of each subject's activations into an n × p matrix.
pub fn activation_matrix(acts: &[ActivationSet], layer: Layer) -> Result<DMatrix<f64>, ProjectionError> {
    let n = acts.len();
    let p = acts.first().map_or(0, |a| a.layer(layer.index()).values.len());
    if acts.iter().any(|a| a.layer(layer.index()).values.len() != p) {
        return Err(ProjectionError::Shape("activation lengths differ between subjects".into()));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| acts[i].layer(layer.index()).values[j]))
}

/// Columns shifted to zero mean.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Columns shifted to zero mean and scaled to unit sample standard
/// deviation; columns with σ < 1e-12 become all zero.
pub fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut out = center_columns(x);
    for mut col in out.column_iter_mut() {
        let ss: f64 = col.iter().map(|v| v * v).sum();
        let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
        if sd < 1e-12 {
            col.fill(0.0);
        } else {
            col /= sd;
        }
    }
    out
}

/// Pairwise squared Euclidean distances between rows, diagonal exactly 0.
pub fn squared_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let gram = x * x.transpose();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0)
        }
    })
}

/// One-hot indicator matrix over the classes present, columns in class
/// order.
pub fn one_hot(labels: &[ClassLabel]) -> DMatrix<f64> {
    let classes: Vec<ClassLabel> = {
        let mut c: Vec<_> = labels.to_vec();
        c.sort();
        c.dedup();
        c
    };
    DMatrix::from_fn(labels.len(), classes.len(), |i, j| f64::from(u8::from(labels[i] == classes[j])))
}

/// Fits `method` on `x` (rows = subjects) and returns the embedding.
pub fn embed(
    method: Method,
    layer: Layer,
    x: &DMatrix<f64>,
    subject_ids: &[String],
    labels: &[ClassLabel],
    params: &ProjectionParams,
    seed: u64,
) -> Result<EmbeddingMatrix, ProjectionError> {
    if subject_ids.len() != x.nrows() || labels.len() != x.nrows() {
        return Err(ProjectionError::Shape("ids, labels and rows must align".into()));
    }
    let (values, mut metadata) = project(method, x, labels, params, seed)?;
    metadata.insert("method".into(), method.name().into());
    metadata.insert("layer".into(), layer.name().into());
    metadata.insert("seed".into(), seed.to_string());
    metadata.insert("n_subjects".into(), x.nrows().to_string());
    metadata.insert("n_features".into(), x.ncols().to_string());
    EmbeddingMatrix::new(method, layer, subject_ids.to_vec(), values, metadata)
}

type Projected = (Vec<[f64; COMPONENTS]>, BTreeMap<String, String>);

pub(crate) fn project(
    method: Method,
    x: &DMatrix<f64>,
    labels: &[ClassLabel],
    params: &ProjectionParams,
    seed: u64,
) -> Result<Projected, ProjectionError> {
    let mut meta = BTreeMap::new();
    let values = match method {
        Method::Pca => {
            let (model, values) = pca::fit_transform(x, COMPONENTS)?;
            meta.insert("preprocessing".into(), "center".into());
            meta.insert("effective_rank".into(), model.effective_rank.to_string());
            meta.insert(
                "eigenvalues".into(),
                model.eigenvalues.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";"),
            );
            values
        }
        Method::Pls => {
            let y = one_hot(labels);
            let (model, values) = pls::fit_transform(x, &y, COMPONENTS)?;
            meta.insert("preprocessing".into(), "standardize_x,center_y".into());
            meta.insert("components_fitted".into(), model.weights.len().to_string());
            values
        }
        Method::Tsne => {
            let r = tsne::embed(&standardize_columns(x), &params.tsne, seed)?;
            let t = &params.tsne;
            meta.insert("preprocessing".into(), "standardize".into());
            meta.insert("perplexity".into(), t.perplexity.to_string());
            meta.insert("perplexity_used".into(), r.perplexity_used.to_string());
            meta.insert("learning_rate".into(), t.learning_rate.to_string());
            meta.insert("iterations".into(), t.iterations.to_string());
            meta.insert("early_exaggeration".into(), t.exaggeration.to_string());
            meta.insert("exaggeration_iters".into(), t.exaggeration_iters.to_string());
            meta.insert("momentum".into(), format!("{}->{}", t.momentum_initial, t.momentum_final));
            meta.insert("final_kl".into(), format!("{:e}", r.kl_trace.last().copied().unwrap_or(0.0)));
            r.embedding
        }
        Method::Umap => {
            let r = umap::embed(&standardize_columns(x), &params.umap, seed)?;
            let u = &params.umap;
            meta.insert("preprocessing".into(), "standardize".into());
            meta.insert("n_neighbors".into(), u.n_neighbors.to_string());
            meta.insert("min_dist".into(), u.min_dist.to_string());
            meta.insert("spread".into(), u.spread.to_string());
            meta.insert("epochs".into(), u.epochs.to_string());
            meta.insert("negative_sample_rate".into(), u.negative_sample_rate.to_string());
            meta.insert("curve_a".into(), format!("{:e}", r.a));
            meta.insert("curve_b".into(), format!("{:e}", r.b));
            meta.insert("graph_components".into(), r.graph_components.to_string());
            r.embedding
        }
    };
    Ok((values, meta))
}
