//! The fusion classifier.
//!
//! ```text
//! sem'    = sem_proj(sem)            k_c -> h
//! struct' = struct_proj(z(struct))   22  -> h     z = training-set standardizer
//! logits  = hidden(sem' ++ struct')  2h  -> 2
//! prob    = softmax(logits)          [prob_FP, prob_TP]
//! ```
//!
//! Ablations drop one branch entirely; `hidden` then reads only `h` inputs.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Label;
use crate::nn::{
    self, softmax, softmax_cross_entropy_grad, Activation, AdamConfig, AdamState, DenseLayer,
    Parameterized,
};
use crate::semantic::{SourceMode, TRANSFORMER_DIM};
use crate::structural::{Standardizer, StructVector, STRUCT_DIM};

pub const MODEL_FORMAT_VERSION: u32 = 1;

pub const CLASS_FP: usize = 0;
pub const CLASS_TP: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Both,
    SemOnly,
    StructOnly,
}

impl Ablation {
    pub fn uses_sem(self) -> bool {
        self != Ablation::StructOnly
    }

    pub fn uses_struct(self) -> bool {
        self != Ablation::SemOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// k_c, the semantic vector length.
    pub sem_dim: usize,
    /// k_s; must be 22.
    pub struct_dim: usize,
    /// h, the width of each projection.
    pub hidden: usize,
    pub ablation: Ablation,
    /// Recorded for provenance; applied by the semantic provider.
    pub source_mode: SourceMode,
    /// Activation after each projection.
    pub fusion_activation: Activation,
    pub standardize: bool,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Loss weight of [false-positive, true-positive] examples.
    pub class_weights: [f64; 2],
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            sem_dim: TRANSFORMER_DIM,
            struct_dim: STRUCT_DIM,
            hidden: 32,
            ablation: Ablation::Both,
            source_mode: SourceMode::Both,
            fusion_activation: Activation::Relu,
            standardize: true,
            lr: 5e-6,
            batch: 50,
            epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            class_weights: [1.0, 1.0],
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.struct_dim != STRUCT_DIM {
            return fail(format!("struct_dim must be {STRUCT_DIM}, got {}", self.struct_dim));
        }
        if self.hidden == 0 {
            return fail("hidden must be at least 1".into());
        }
        if self.ablation.uses_sem() && self.sem_dim == 0 {
            return fail("sem_dim must be at least 1 unless ablation is struct-only".into());
        }
        if self.batch == 0 || self.epochs == 0 {
            return fail("batch and epochs must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return fail("invalid Adam hyperparameters".into());
        }
        if self.class_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return fail("class weights must be finite and non-negative".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One labeled edge. `sem` may be empty for struct-only models.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sem: Vec<f64>,
    pub structure: StructVector,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub standardizer: Standardizer,
    pub sem_proj: Option<DenseLayer>,
    pub struct_proj: Option<DenseLayer>,
    /// Maps the fused vector to the two logits.
    pub hidden: DenseLayer,
}

struct Trace {
    sem_z: Vec<f64>,
    struct_in: StructVector,
    struct_z: Vec<f64>,
    fused: Vec<f64>,
    prob: Vec<f64>,
}

impl FusionModel {
    /// Seeded uniform initialization; an identity standardizer until trained.
    pub fn init(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = nn::seeded_rng(config.seed);
        Ok(Self::init_with(config, Standardizer::identity(), &mut rng))
    }

    fn init_with(config: FusionConfig, standardizer: Standardizer, rng: &mut nn::SeededRng) -> Self {
        let h = config.hidden;
        let act = config.fusion_activation;
        let sem_proj = config
            .ablation
            .uses_sem()
            .then(|| DenseLayer::init(config.sem_dim, h, act, rng));
        let struct_proj = config
            .ablation
            .uses_struct()
            .then(|| DenseLayer::init(STRUCT_DIM, h, act, rng));
        let branches = usize::from(sem_proj.is_some()) + usize::from(struct_proj.is_some());
        let hidden = DenseLayer::init(branches * h, 2, Activation::None, rng);
        FusionModel {
            config,
            standardizer,
            sem_proj,
            struct_proj,
            hidden,
        }
    }

    /// Same shapes as `init`, every weight and bias zero.
    pub fn zeros(config: FusionConfig) -> Result<Self> {
        let mut m = Self::init(config)?;
        m.visit_params_mut(&mut |p| *p = 0.0);
        Ok(m)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.sem_proj
            .iter_mut()
            .chain(self.struct_proj.iter_mut())
            .chain(std::iter::once(&mut self.hidden))
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.sem_proj
            .iter()
            .chain(self.struct_proj.iter())
            .chain(std::iter::once(&self.hidden))
    }

    fn trace(&self, sem: &[f64], structure: &StructVector) -> Result<Trace> {
        let mut fused = Vec::with_capacity(self.hidden.inputs);
        let mut sem_z = Vec::new();
        if let Some(layer) = &self.sem_proj {
            sem_z = layer.pre_activation(sem)?;
            fused.extend(layer.activate(&sem_z));
        }
        let struct_in = self.standardizer.apply(structure);
        let mut struct_z = Vec::new();
        if let Some(layer) = &self.struct_proj {
            struct_z = layer.pre_activation(&struct_in)?;
            fused.extend(layer.activate(&struct_z));
        }
        let prob = softmax(&self.hidden.forward(&fused)?)?;
        Ok(Trace {
            sem_z,
            struct_in,
            struct_z,
            fused,
            prob,
        })
    }

    /// `[prob_FP, prob_TP]` for one edge. `structure` is the raw vector.
    pub fn fuse_forward(&self, sem: &[f64], structure: &StructVector) -> Result<[f64; 2]> {
        let p = self.trace(sem, structure)?.prob;
        Ok([p[CLASS_FP], p[CLASS_TP]])
    }

    /// True positive iff `prob_TP > prob_FP`; ties go to false positive.
    pub fn classify_edge(&self, sem: &[f64], structure: &StructVector) -> Result<(Label, f64)> {
        let [fp, tp] = self.fuse_forward(sem, structure)?;
        Ok((decide(fp, tp), tp))
    }

    /// Weighted cross-entropy at one example; parameter gradients are added
    /// into `grads` in [`Parameterized`] order.
    pub fn accumulate_gradient(
        &self,
        sem: &[f64],
        structure: &StructVector,
        label: usize,
        weight: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        if label > CLASS_TP {
            return Err(Error::Index { index: label, len: 2 });
        }
        let t = self.trace(sem, structure)?;
        let loss = weight * nn::cross_entropy(&t.prob, label)?;
        let mut g_logits = softmax_cross_entropy_grad(&t.prob, label);
        g_logits.iter_mut().for_each(|g| *g *= weight);

        let h = self.config.hidden;
        let sem_n = self.sem_proj.as_ref().map_or(0, Parameterized::param_count);
        let struct_n = self.struct_proj.as_ref().map_or(0, Parameterized::param_count);
        let (g_sem, rest) = grads.split_at_mut(sem_n);
        let (g_struct, g_hidden) = rest.split_at_mut(struct_n);

        let logits_z = self.hidden.pre_activation(&t.fused)?;
        let g_fused = self.hidden.backward(&t.fused, &logits_z, &g_logits, g_hidden);
        let mut offset = 0;
        if let Some(layer) = &self.sem_proj {
            layer.backward(sem, &t.sem_z, &g_fused[..h], g_sem);
            offset = h;
        }
        if let Some(layer) = &self.struct_proj {
            layer.backward(&t.struct_in, &t.struct_z, &g_fused[offset..offset + h], g_struct);
        }
        Ok(loss)
    }

    /// Unweighted loss and its full gradient at one example.
    pub fn loss_and_gradient(
        &self,
        sem: &[f64],
        structure: &StructVector,
        label: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.param_count()];
        let loss = self.accumulate_gradient(sem, structure, label, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn loss(&self, sem: &[f64], structure: &StructVector, label: usize) -> Result<f64> {
        nn::cross_entropy(&self.trace(sem, structure)?.prob, label)
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(DenseLayer::is_finite)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model file: {e}")))?;
        file.into_model()
    }
}

pub fn decide(prob_fp: f64, prob_tp: f64) -> Label {
    if prob_tp > prob_fp {
        Label::TruePositive
    } else {
        Label::FalsePositive
    }
}

impl Parameterized for FusionModel {
    fn param_count(&self) -> usize {
        self.layers().map(Parameterized::param_count).sum()
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for layer in self.layers_mut() {
            let n = layer.param_count();
            if index < n {
                return layer.param_mut(index);
            }
            index -= n;
        }
        panic!("parameter index out of range");
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        for layer in self.layers_mut() {
            layer.visit_params_mut(f);
        }
    }
}

fn check_example(cfg: &FusionConfig, i: usize, ex: &Example) -> Result<()> {
    if ex.label > CLASS_TP {
        return Err(Error::Training(format!("example {i}: label {} is not 0 or 1", ex.label)));
    }
    if cfg.ablation.uses_sem() && ex.sem.len() != cfg.sem_dim {
        return Err(Error::Shape {
            expected: cfg.sem_dim,
            got: ex.sem.len(),
            context: "training semantic vector",
        });
    }
    if ex.sem.iter().chain(&ex.structure).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("example {i} has non-finite features")));
    }
    Ok(())
}

/// Trains a model with mini-batch Adam on mean weighted cross-entropy.
/// `on_epoch` receives each epoch's mean loss.
pub fn train_with(
    cfg: &FusionConfig,
    data: &[Example],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<FusionModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    for (i, ex) in data.iter().enumerate() {
        check_example(cfg, i, ex)?;
    }
    let standardizer = if cfg.standardize {
        let rows: Vec<StructVector> = data.iter().map(|e| e.structure).collect();
        Standardizer::fit(&rows)?
    } else {
        Standardizer::identity()
    };
    let mut rng = nn::seeded_rng(cfg.seed);
    let mut model = FusionModel::init_with(cfg.clone(), standardizer, &mut rng);
    let mut adam = AdamState::new(cfg.adam(), model.param_count());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grads = vec![0.0; model.param_count()];
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                let ex = &data[i];
                let w = cfg.class_weights[ex.label];
                loss += model
                    .accumulate_gradient(&ex.sem, &ex.structure, ex.label, w, &mut grads)
                    .map_err(|e| match e {
                        Error::Numeric(msg) => Error::Numeric(format!("non-finite loss at step {step}: {msg}")),
                        other => other,
                    })?;
            }
            let n = batch.len() as f64;
            grads.iter_mut().for_each(|g| *g /= n);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            adam.step(&mut model, &grads)?;
            if !model.is_finite() {
                return Err(Error::Numeric(format!("non-finite parameters after step {step}")));
            }
            epoch_loss += loss;
            step += 1;
        }
        let mean_loss = epoch_loss / data.len() as f64;
        log::debug!("epoch {epoch}: {step} steps, mean loss {mean_loss}");
        on_epoch(epoch, mean_loss);
    }
    Ok(model)
}

pub fn train(cfg: &FusionConfig, data: &[Example]) -> Result<FusionModel> {
    train_with(cfg, data, |_, _| {})
}

// Model file. Floats are stored as decimal strings holding the shortest
// representation that parses back to the same bits.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    config: FusionConfig,
    standardizer: StandardizerFile,
    layers: LayersFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerFile {
    mean: Vec<String>,
    scale: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayersFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sem_proj: Option<LayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    struct_proj: Option<LayerFile>,
    hidden: LayerFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<String>,
    bias: Vec<String>,
}

fn encode(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| format!("{v:?}")).collect()
}

fn decode(values: &[String], what: &str) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("{what}: bad number {s:?}: {e}")))
        })
        .collect()
}

impl From<&DenseLayer> for LayerFile {
    fn from(l: &DenseLayer) -> Self {
        LayerFile {
            inputs: l.inputs,
            outputs: l.outputs,
            activation: l.activation,
            weights: encode(&l.weights),
            bias: encode(&l.bias),
        }
    }
}

impl LayerFile {
    fn into_layer(self, name: &str, inputs: usize, outputs: usize, activation: Activation) -> Result<DenseLayer> {
        if (self.inputs, self.outputs, self.activation) != (inputs, outputs, activation) {
            return Err(Error::Format(format!(
                "layer {name}: {}x{} {:?} does not match config {inputs}x{outputs} {activation:?}",
                self.inputs, self.outputs, self.activation
            )));
        }
        let weights = decode(&self.weights, name)?;
        let bias = decode(&self.bias, name)?;
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Format(format!("layer {name}: wrong parameter count")));
        }
        Ok(DenseLayer {
            inputs,
            outputs,
            weights,
            bias,
            activation,
        })
    }
}

impl From<&FusionModel> for ModelFile {
    fn from(m: &FusionModel) -> Self {
        ModelFile {
            version: MODEL_FORMAT_VERSION,
            config: m.config.clone(),
            standardizer: StandardizerFile {
                mean: encode(&m.standardizer.mean),
                scale: encode(&m.standardizer.scale),
            },
            layers: LayersFile {
                sem_proj: m.sem_proj.as_ref().map(LayerFile::from),
                struct_proj: m.struct_proj.as_ref().map(LayerFile::from),
                hidden: LayerFile::from(&m.hidden),
            },
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<FusionModel> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} (expected {MODEL_FORMAT_VERSION})",
                self.version
            )));
        }
        let cfg = self.config;
        cfg.validate()?;
        let mean = decode(&self.standardizer.mean, "standardizer")?;
        let scale = decode(&self.standardizer.scale, "standardizer")?;
        if mean.len() != STRUCT_DIM || scale.len() != STRUCT_DIM {
            return Err(Error::Format("standardizer must have 22 entries".into()));
        }
        let (h, act) = (cfg.hidden, cfg.fusion_activation);
        let layers = self.layers;
        let branch = |file: Option<LayerFile>, used: bool, name: &str, inputs: usize| match (file, used) {
            (Some(f), true) => f.into_layer(name, inputs, h, act).map(Some),
            (None, false) => Ok(None),
            (Some(_), false) => Err(Error::Format(format!("layer {name} present but ablated"))),
            (None, true) => Err(Error::Format(format!("layer {name} missing"))),
        };
        let sem_proj = branch(layers.sem_proj, cfg.ablation.uses_sem(), "sem_proj", cfg.sem_dim)?;
        let struct_proj = branch(layers.struct_proj, cfg.ablation.uses_struct(), "struct_proj", STRUCT_DIM)?;
        let fused = h * (usize::from(sem_proj.is_some()) + usize::from(struct_proj.is_some()));
        let hidden = layers.hidden.into_layer("hidden", fused, 2, Activation::None)?;
        Ok(FusionModel {
            config: cfg,
            standardizer: Standardizer { mean, scale },
            sem_proj,
            struct_proj,
            hidden,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn small(ablation: Ablation, seed: u64) -> FusionConfig {
        FusionConfig {
            sem_dim: 6,
            hidden: 4,
            ablation,
            seed,
            ..FusionConfig::default()
        }
    }

    fn random_input(rng: &mut impl Rng, sem_dim: usize) -> (Vec<f64>, StructVector) {
        let sem = (0..sem_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut st = [0.0; STRUCT_DIM];
        st.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        (sem, st)
    }

    #[test]
    fn defaults_follow_reported_hyperparameters() {
        let c = FusionConfig::default();
        assert_eq!((c.sem_dim, c.struct_dim, c.hidden), (768, 22, 32));
        assert_eq!((c.lr, c.batch, c.epochs), (5e-6, 50, 5));
        c.validate().unwrap();
    }

    #[test]
    fn default_dimensions_shape_path() {
        let m = FusionModel::init(FusionConfig::default()).unwrap();
        let sem = m.sem_proj.as_ref().unwrap();
        let st = m.struct_proj.as_ref().unwrap();
        assert_eq!((sem.inputs, sem.outputs), (768, 32));
        assert_eq!((st.inputs, st.outputs), (22, 32));
        assert_eq!((m.hidden.inputs, m.hidden.outputs), (64, 2));
        let p = m.fuse_forward(&[0.1; 768], &[1.0; STRUCT_DIM]).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        assert!(matches!(
            m.fuse_forward(&[0.1; 767], &[1.0; STRUCT_DIM]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_model_is_undecided() {
        let m = FusionModel::zeros(small(Ablation::Both, 1)).unwrap();
        let mut rng = nn::seeded_rng(9);
        for _ in 0..5 {
            let (sem, st) = random_input(&mut rng, 6);
            assert_eq!(m.fuse_forward(&sem, &st).unwrap(), [0.5, 0.5]);
            assert_eq!(m.classify_edge(&sem, &st).unwrap().0, Label::FalsePositive);
        }
    }

    #[test]
    fn ablations_drop_branches() {
        let m = FusionModel::init(small(Ablation::SemOnly, 3)).unwrap();
        assert!(m.struct_proj.is_none());
        assert_eq!(m.hidden.inputs, 4);
        let mut rng = nn::seeded_rng(4);
        let (sem, st) = random_input(&mut rng, 6);
        let (_, st2) = random_input(&mut rng, 6);
        assert_eq!(m.fuse_forward(&sem, &st).unwrap(), m.fuse_forward(&sem, &st2).unwrap());

        let m = FusionModel::init(small(Ablation::StructOnly, 3)).unwrap();
        assert!(m.sem_proj.is_none());
        assert_eq!(m.hidden.inputs, 4);
        m.fuse_forward(&[], &st).unwrap();
    }

    #[test]
    fn decision_rule_matches_half_threshold() {
        assert_eq!(decide(0.3, 0.7), Label::TruePositive);
        assert_eq!(decide(0.5, 0.5), Label::FalsePositive);
        let mut rng = nn::seeded_rng(17);
        for seed in 0..20 {
            let m = FusionModel::init(small(Ablation::Both, seed)).unwrap();
            for _ in 0..50 {
                let (sem, st) = random_input(&mut rng, 6);
                let (label, tp) = m.classify_edge(&sem, &st).unwrap();
                let by_threshold = if tp > 0.5 {
                    Label::TruePositive
                } else {
                    Label::FalsePositive
                };
                assert_eq!(label, by_threshold);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = nn::seeded_rng(99);
        let mut checked = 0;
        for seed in 0..30u64 {
            let ablation = [Ablation::Both, Ablation::SemOnly, Ablation::StructOnly][seed as usize % 3];
            let mut m = FusionModel::init(FusionConfig {
                sem_dim: rng.random_range(1..8),
                hidden: rng.random_range(1..6),
                ablation,
                seed,
                ..FusionConfig::default()
            })
            .unwrap();
            let (sem, st) = random_input(&mut rng, m.config.sem_dim);
            if near_kink(&m, &sem, &st) {
                continue;
            }
            let label = rng.random_range(0..2);
            let (_, grads) = m.loss_and_gradient(&sem, &st, label).unwrap();
            let check = nn::gradient_check(&mut m, &grads, 1e-4, |m| m.loss(&sem, &st, label).unwrap());
            assert!(check.max_relative_error < 1e-4, "seed {seed}: {check:?}");
            checked += 1;
        }
        assert!(checked >= 10);
    }

    pub(crate) fn near_kink(m: &FusionModel, sem: &[f64], st: &StructVector) -> bool {
        let mut zs = Vec::new();
        if let Some(l) = &m.sem_proj {
            zs.extend(l.pre_activation(sem).unwrap());
        }
        if let Some(l) = &m.struct_proj {
            zs.extend(l.pre_activation(&m.standardizer.apply(st)).unwrap());
        }
        zs.iter().any(|z| z.abs() < 1e-3)
    }

    #[test]
    fn concatenation_order_is_sem_then_struct() {
        let mut rng = nn::seeded_rng(5);
        let m = FusionModel::init(small(Ablation::Both, 8)).unwrap();
        let h = m.config.hidden;

        // Permuting hidden units inside the semantic branch (rows of sem_proj
        // and the matching columns of hidden) is a symmetry of the network.
        let mut permuted = m.clone();
        let sem = permuted.sem_proj.as_mut().unwrap();
        let d = sem.inputs;
        for c in 0..d {
            sem.weights.swap(c, d + c);
        }
        sem.bias.swap(0, 1);
        for r in 0..2 {
            permuted.hidden.weights.swap(r * 2 * h, r * 2 * h + 1);
        }

        // Swapping the two column blocks of hidden, without touching the
        // projections, pretends the concatenation order were (struct, sem).
        let mut swapped = m.clone();
        for r in 0..2 {
            for c in 0..h {
                swapped.hidden.weights.swap(r * 2 * h + c, r * 2 * h + h + c);
            }
        }

        let mut differs = false;
        for _ in 0..20 {
            let (sem, st) = random_input(&mut rng, 6);
            let a = m.fuse_forward(&sem, &st).unwrap();
            let b = permuted.fuse_forward(&sem, &st).unwrap();
            assert!((a[1] - b[1]).abs() < 1e-12);
            differs |= (a[1] - swapped.fuse_forward(&sem, &st).unwrap()[1]).abs() > 1e-6;
        }
        assert!(differs);
    }

    #[test]
    fn overfits_a_single_example() {
        let cfg = FusionConfig {
            lr: 1e-2,
            batch: 1,
            epochs: 200,
            ..small(Ablation::Both, 12)
        };
        let (sem, st) = random_input(&mut nn::seeded_rng(1), 6);
        for label in [CLASS_FP, CLASS_TP] {
            let data = [Example {
                sem: sem.clone(),
                structure: st,
                label,
            }];
            let m = train(&cfg, &data).unwrap();
            let p = m.fuse_forward(&sem, &st).unwrap();
            assert!(p[label] > 0.99, "label {label}: {p:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = nn::seeded_rng(77);
        let data: Vec<Example> = (0..30)
            .map(|i| {
                let (sem, structure) = random_input(&mut rng, 6);
                Example {
                    sem,
                    structure,
                    label: i % 2,
                }
            })
            .collect();
        let cfg = FusionConfig {
            lr: 1e-3,
            batch: 7,
            epochs: 3,
            ..small(Ablation::Both, 5)
        };
        let a = train(&cfg, &data).unwrap();
        let b = train(&cfg, &data).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = train(&FusionConfig { seed: 6, ..cfg }, &data).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn training_errors() {
        let cfg = small(Ablation::Both, 0);
        assert!(matches!(train(&cfg, &[]), Err(Error::Training(_))));
        let bad = Example {
            sem: vec![0.0; 6],
            structure: [0.0; STRUCT_DIM],
            label: 2,
        };
        assert!(matches!(train(&cfg, std::slice::from_ref(&bad)), Err(Error::Training(_))));
        let wrong_dim = Example {
            sem: vec![0.0; 5],
            label: 0,
            ..bad
        };
        assert!(matches!(train(&cfg, &[wrong_dim]), Err(Error::Shape { .. })));
        let mut exploding = small(Ablation::Both, 0);
        exploding.lr = f64::NAN;
        assert!(matches!(exploding.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let cfg = FusionConfig {
            lr: 1e-3,
            class_weights: [f64::MAX, f64::MAX],
            ..small(Ablation::Both, 0)
        };
        let data = [Example {
            sem: vec![1e300; 6],
            structure: [0.0; STRUCT_DIM],
            label: 1,
        }];
        let err = train(&cfg, &data).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("step 0")), "{err}");
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let mut rng = nn::seeded_rng(21);
        let data: Vec<Example> = (0..20)
            .map(|i| {
                let (sem, structure) = random_input(&mut rng, 6);
                Example {
                    sem,
                    structure,
                    label: i % 2,
                }
            })
            .collect();
        let cfg = FusionConfig {
            lr: 1e-3,
            seed: 4242,
            ..small(Ablation::Both, 0)
        };
        let m = train(&cfg, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.apm.json");
        m.save(&path).unwrap();
        let back = FusionModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.config.seed, 4242);
        assert_eq!(back.config.sem_dim, 6);
        for _ in 0..10 {
            let (sem, st) = random_input(&mut rng, 6);
            let (a, b) = (m.fuse_forward(&sem, &st).unwrap(), back.fuse_forward(&sem, &st).unwrap());
            assert_eq!(a[0].to_bits(), b[0].to_bits());
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }

        let text = m.to_json();
        assert!(matches!(
            FusionModel::from_json(&text[..text.len() / 2]),
            Err(Error::Format(_))
        ));
        let wrong_version = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(FusionModel::from_json(&wrong_version), Err(Error::Format(_))));
    }

    #[test]
    fn struct_only_roundtrip_has_no_sem_layer() {
        let m = FusionModel::init(small(Ablation::StructOnly, 2)).unwrap();
        let text = m.to_json();
        assert!(!text.contains("sem_proj"));
        assert_eq!(FusionModel::from_json(&text).unwrap(), m);
    }
}
