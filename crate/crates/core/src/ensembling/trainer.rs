use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::diagnostics::{DiagnosticsLog, EpochMetrics};
use super::losses::{class_weights, consistency_loss, supervised_loss};
use super::teacher::{adaptive_teacher_update, fixed_teacher_update, AdaptiveState};
use crate::autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use crate::config::{RunConfig, TrainingMode};
use crate::corpus::{encode_documents, Batch, BatchIterator, Document, Domain, EncodedDoc, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{decisions, f1_scores, indicators, Metrics};
use crate::model::{
    bind_params, forward, predict_encoded, BatchPerturbation, ModelConfig, ModelParams, TrainedModel, YearNormalizer,
};

const STREAM_INIT: u64 = 1;
const STREAM_STUDENT_SOURCE: u64 = 2;
const STREAM_STUDENT_TARGET: u64 = 3;
const STREAM_TEACHER: u64 = 4;
const STREAM_SAMPLES: u64 = 5;

/// Independent generator for one purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn init_student(cfg: &ModelConfig, vocab_size: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::init(cfg, vocab_size, &mut stream_rng(seed, STREAM_INIT))
}

/// Everything a single optimisation step depends on besides the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSettings {
    pub mode: TrainingMode,
    pub alpha: f64,
    pub alpha0: f64,
    pub epsilon: f64,
    pub consistency_weight: f64,
    pub ramp_steps: Option<u64>,
    pub adam: AdamConfig,
    pub class_weights: Vec<f64>,
}

impl StepSettings {
    pub fn from_config(cfg: &RunConfig, class_weights: Vec<f64>) -> Self {
        Self {
            mode: cfg.mode,
            alpha: cfg.alpha,
            alpha0: cfg.alpha0,
            epsilon: cfg.epsilon(),
            consistency_weight: cfg.consistency_weight,
            ramp_steps: cfg.consistency_ramp_steps,
            adam: cfg.adam(),
            class_weights,
        }
    }

    /// Consistency weight in effect at zero-based step `t`.
    pub fn lambda(&self, t: u64) -> f64 {
        match self.ramp_steps {
            Some(r) if t < r => self.consistency_weight * t as f64 / r as f64,
            _ => self.consistency_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub ce: f64,
    pub mse: f64,
    /// Consistency recomputed with the updated teacher (adaptive mode only).
    pub mse_after: Option<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
struct PerturbRngs {
    student_source: ChaCha8Rng,
    student_target: ChaCha8Rng,
    teacher: ChaCha8Rng,
}

/// Student, teacher and optimiser state of a run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub adaptive: Option<AdaptiveState>,
    pub adam: Adam,
    pub step: u64,
    pub settings: StepSettings,
    pub model: ModelConfig,
    pub norm: YearNormalizer,
    rngs: PerturbRngs,
}

struct Consistency {
    student_probs: Tensor,
    teacher_source: BatchPerturbation,
    teacher_target: BatchPerturbation,
}

fn concat_probs(graph: &mut Graph, a: Var, b: Var) -> Result<Var> {
    graph.concat_rows(&[a, b])
}

/// Teacher probabilities on the source and target batch, stacked.
fn teacher_probs(
    teacher: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    batches: (&Batch, &Batch),
    perturbations: (&BatchPerturbation, &BatchPerturbation),
) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, teacher, false);
    let fs = forward(&mut g, &vars, cfg, norm, batches.0, Some(perturbations.0))?;
    let ft = forward(&mut g, &vars, cfg, norm, batches.1, Some(perturbations.1))?;
    let probs = concat_probs(&mut g, fs.probs, ft.probs)?;
    let v = g.value(probs);
    Tensor::new(v.shape().to_vec(), v.data().to_vec())
}

/// Consistency loss of `teacher` against fixed student probabilities and its
/// gradient with respect to every teacher array.
pub fn teacher_consistency_gradients(
    teacher: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    batches: (&Batch, &Batch),
    perturbations: (&BatchPerturbation, &BatchPerturbation),
    student_probs: &Tensor,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = bind_params(&mut g, teacher, true);
    let fs = forward(&mut g, &vars, cfg, norm, batches.0, Some(perturbations.0))?;
    let ft = forward(&mut g, &vars, cfg, norm, batches.1, Some(perturbations.1))?;
    let probs = concat_probs(&mut g, fs.probs, ft.probs)?;
    let student = g.constant(student_probs.clone());
    let loss = consistency_loss(&mut g, student, probs)?;
    g.backward(loss)?;
    let grads = vars
        .iter()
        .zip(teacher.params())
        .map(|(&v, p)| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::MissingGrad(format!("teacher {}", p.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((g.value(loss).item(), grads))
}

impl TrainState {
    /// The teacher starts as an exact copy of `student`.
    pub fn new(
        student: ModelParams,
        model: ModelConfig,
        norm: YearNormalizer,
        settings: StepSettings,
        seed: u64,
    ) -> Result<Self> {
        if settings.class_weights.len() != model.n_classes {
            return Err(Error::Shape {
                op: "class_weights",
                lhs: vec![settings.class_weights.len()],
                rhs: vec![model.n_classes],
            });
        }
        let adaptive = match settings.mode {
            TrainingMode::Ae => Some(AdaptiveState::new(student.params(), settings.alpha0, settings.epsilon)?),
            _ => None,
        };
        if !(0.0..=1.0).contains(&settings.alpha) {
            return Err(Error::config("alpha", format!("{} is outside [0, 1]", settings.alpha)));
        }
        Ok(Self {
            teacher: student.clone(),
            adam: Adam::new(settings.adam, student.params()),
            student,
            adaptive,
            step: 0,
            settings,
            model,
            norm,
            rngs: PerturbRngs {
                student_source: stream_rng(seed, STREAM_STUDENT_SOURCE),
                student_target: stream_rng(seed, STREAM_STUDENT_TARGET),
                teacher: stream_rng(seed, STREAM_TEACHER),
            },
        })
    }

    /// One student update followed by the mode's teacher update.
    pub fn step(&mut self, source: &Batch, target: Option<&Batch>) -> Result<StepReport> {
        let step = self.step + 1;
        self.step_inner(source, target).map_err(|e| match e {
            Error::NonFinite { op } => Error::Divergence {
                step,
                reason: format!("non-finite value in {op}"),
            },
            other => other,
        })
    }

    fn step_inner(&mut self, source: &Batch, target: Option<&Batch>) -> Result<StepReport> {
        let labels = source
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data("source batch has no labels".into()))?;
        let lambda = self.settings.lambda(self.step);
        let (cfg, norm) = (&self.model, &self.norm);

        let mut g = Graph::new();
        let vars = bind_params(&mut g, &self.student, true);
        let sp = BatchPerturbation::sample(source, cfg, &mut self.rngs.student_source);
        let fs = forward(&mut g, &vars, cfg, norm, source, Some(&sp))?;
        let ce = supervised_loss(&mut g, fs.logits, labels, &self.settings.class_weights, cfg.head)?;

        let mut consistency = None;
        let mut mse_value = 0.0;
        let loss = if self.settings.mode == TrainingMode::SourceOnly {
            ce
        } else {
            let target = target.ok_or_else(|| Error::Data("consistency training needs a target batch".into()))?;
            let tp = BatchPerturbation::sample(target, cfg, &mut self.rngs.student_target);
            let ft = forward(&mut g, &vars, cfg, norm, target, Some(&tp))?;
            let student_probs = concat_probs(&mut g, fs.probs, ft.probs)?;
            let teacher_source = BatchPerturbation::sample(source, cfg, &mut self.rngs.teacher);
            let teacher_target = BatchPerturbation::sample(target, cfg, &mut self.rngs.teacher);
            let teacher = teacher_probs(&self.teacher, cfg, norm, (source, target), (&teacher_source, &teacher_target))?;
            let teacher = g.constant(teacher);
            let mse = consistency_loss(&mut g, student_probs, teacher)?;
            mse_value = g.value(mse).item();
            let sv = g.value(student_probs);
            consistency = Some(Consistency {
                student_probs: Tensor::new(sv.shape().to_vec(), sv.data().to_vec())?,
                teacher_source,
                teacher_target,
            });
            let weighted = g.scale(mse, lambda);
            g.add(ce, weighted)?
        };
        let ce_value = g.value(ce).item();
        g.backward(loss)?;

        for (p, &v) in self.student.params_mut().iter_mut().zip(&vars) {
            if let Some(grad) = g.grad(v) {
                p.tensor.accumulate_grad(grad)?;
            }
        }
        drop(g);
        self.adam.step(self.student.params_mut())?;
        self.student.zero_grad();
        if !self.student.params().iter().all(|p| p.tensor.all_finite()) {
            return Err(Error::NonFinite { op: "adam" });
        }

        let mut mse_after = None;
        match self.settings.mode {
            TrainingMode::SourceOnly => fixed_teacher_update(self.teacher.params_mut(), self.student.params(), 0.0)?,
            TrainingMode::Se => fixed_teacher_update(self.teacher.params_mut(), self.student.params(), self.settings.alpha)?,
            TrainingMode::Ae => {
                let state = self.adaptive.as_mut().expect("adaptive mode has constants");
                let c = consistency.expect("adaptive mode computes consistency");
                let old = self.teacher.clone();
                adaptive_teacher_update(self.teacher.params_mut(), self.student.params(), &state.constants)?;
                let target = target.expect("checked above");
                let (after, grads) = teacher_consistency_gradients(
                    &self.teacher,
                    &self.model,
                    &self.norm,
                    (source, target),
                    (&c.teacher_source, &c.teacher_target),
                    &c.student_probs,
                )?;
                let refs: Vec<Option<&[f64]>> = grads.iter().map(|g| Some(g.as_slice())).collect();
                state.step(old.params(), self.student.params(), &refs)?;
                mse_after = Some(after);
            }
        }

        self.step += 1;
        Ok(StepReport {
            step: self.step,
            ce: ce_value,
            mse: mse_value,
            mse_after,
            lambda,
        })
    }
}

/// Labeled inputs of a run.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub source: &'a [Document],
    pub target: &'a [Document],
    pub dev: &'a [Document],
}

/// Eval-mode scores of `params` on labeled encoded documents.
pub fn evaluate(
    docs: &[EncodedDoc],
    params: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    class_names: &[&str],
    threshold: f64,
) -> Result<Metrics> {
    let gold: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| {
            d.labels
                .clone()
                .ok_or_else(|| Error::Data("labels required for evaluation".into()))
        })
        .collect::<Result<_>>()?;
    let preds = predict_encoded(docs, params, cfg, norm)?;
    let pred: Vec<Vec<bool>> = preds.iter().map(|p| decisions(&p.probs, cfg.head, threshold)).collect();
    f1_scores(&pred, &indicators(&gold, cfg.n_classes)?, class_names)
}

pub struct TrainOutput {
    /// Teacher snapshot with the best development macro-F1.
    pub model: TrainedModel,
    pub state: TrainState,
    pub history: Vec<EpochMetrics>,
    pub diagnostics: DiagnosticsLog,
    pub best_epoch: usize,
    /// `(array index, flat index)` of each traced adaptive constant.
    pub sampled_constants: Vec<(usize, usize)>,
}

/// Epoch-level driver around [`TrainState`].
pub struct Trainer {
    cfg: RunConfig,
    pub vocabulary: Vocabulary,
    pub state: TrainState,
    source: BatchIterator,
    target: BatchIterator,
    dev: Vec<EncodedDoc>,
    pub history: Vec<EpochMetrics>,
    pub diagnostics: DiagnosticsLog,
    sampled: Vec<(usize, usize)>,
    best: Option<(usize, f64, ModelParams)>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, data: TrainingData<'_>) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.sync_model();
        cfg.validate()?;
        if data.source.is_empty() {
            return Err(Error::Empty("source documents"));
        }
        if cfg.mode != TrainingMode::SourceOnly && data.target.is_empty() {
            return Err(Error::Empty("target documents"));
        }
        let vocabulary = Vocabulary::build(data.source.iter().chain(data.target), cfg.min_count)?;
        let norm = YearNormalizer::from_years(data.source.iter().chain(data.target).map(|d| d.year))?;
        let max_len = cfg.model.max_len;
        let source = encode_documents(data.source, &vocabulary, max_len, cfg.task)?;
        if source.iter().any(|d| d.labels.is_none()) {
            return Err(Error::Data("every source document needs labels".into()));
        }
        let mut target = encode_documents(data.target, &vocabulary, max_len, cfg.task)?;
        for d in &mut target {
            d.labels = None;
        }
        let dev = encode_documents(data.dev, &vocabulary, max_len, cfg.task)?;
        if dev.iter().any(|d| d.labels.is_none()) {
            return Err(Error::Data("labels required for the development set".into()));
        }

        let labels: Vec<Vec<usize>> = source.iter().filter_map(|d| d.labels.clone()).collect();
        let weights = if cfg.class_weighting {
            class_weights(&labels, cfg.model.n_classes)?
        } else {
            vec![1.0; cfg.model.n_classes]
        };
        let mut student = init_student(&cfg.model, vocabulary.len(), cfg.seed)?;
        if let Some(path) = &cfg.data.embeddings {
            student.load_embeddings(path, &vocabulary)?;
        }
        let state = TrainState::new(
            student,
            cfg.model.clone(),
            norm,
            StepSettings::from_config(&cfg, weights),
            cfg.seed,
        )?;
        let sampled = match &state.adaptive {
            Some(_) => sample_positions(&state.student, cfg.sampled_constants, cfg.seed),
            None => Vec::new(),
        };
        let diagnostics = DiagnosticsLog::new(diagnostic_columns(&state, sampled.len()));
        Ok(Self {
            source: BatchIterator::new(source, cfg.batch_size, cfg.seed, Domain::Source, false),
            target: BatchIterator::new(target, cfg.batch_size, cfg.seed, Domain::Target, cfg.curriculum),
            cfg,
            vocabulary,
            state,
            dev,
            history: Vec::new(),
            diagnostics,
            sampled,
            best: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn log_step(&mut self, epoch: usize, r: &StepReport) {
        let mut row = vec![r.step as f64, epoch as f64, r.ce, r.mse, r.lambda];
        if let Some(state) = &self.state.adaptive {
            row.push(r.mse_after.unwrap_or(f64::NAN));
            for c in &state.constants {
                let (mean, std) = mean_std(c.data());
                row.push(mean);
                row.push(std);
            }
            for &(a, i) in &self.sampled {
                row.push(state.constants[a].data()[i]);
            }
        }
        self.diagnostics.push(row);
    }

    /// Runs epochs until the budget, the step cap or early stopping ends
    /// training.
    pub fn run(&mut self) -> Result<()> {
        let class_names = self.cfg.task.class_names();
        let mut since_best = 0;
        for epoch in 1..=self.cfg.epochs {
            let batches = self.source.next_epoch();
            let (mut ce_sum, mut mse_sum, mut n) = (0.0, 0.0, 0usize);
            let mut capped = false;
            for sb in &batches {
                let tb = match self.state.settings.mode {
                    TrainingMode::SourceOnly => None,
                    _ => self.target.next(),
                };
                let report = self.state.step(sb, tb.as_ref())?;
                if !(report.ce.is_finite() && report.mse.is_finite()) {
                    return Err(Error::Divergence {
                        step: report.step,
                        reason: "non-finite loss".into(),
                    });
                }
                ce_sum += report.ce;
                mse_sum += report.mse;
                n += 1;
                self.log_step(epoch, &report);
                if self.cfg.max_steps.is_some_and(|m| self.state.step >= m) {
                    capped = true;
                    break;
                }
            }
            let dev = if self.dev.is_empty() {
                None
            } else {
                Some(evaluate(
                    &self.dev,
                    &self.state.teacher,
                    &self.state.model,
                    &self.state.norm,
                    class_names,
                    self.cfg.threshold,
                )?)
            };
            let score = dev.as_ref().map(|m| m.macro_f1);
            self.history.push(EpochMetrics {
                epoch,
                steps: self.state.step,
                mean_ce: ce_sum / n.max(1) as f64,
                mean_mse: mse_sum / n.max(1) as f64,
                dev,
            });
            match score {
                Some(s) if self.best.as_ref().is_none_or(|b| s > b.1) => {
                    self.best = Some((epoch, s, self.state.teacher.clone()));
                    since_best = 0;
                }
                Some(_) => since_best += 1,
                None => self.best = Some((epoch, f64::NAN, self.state.teacher.clone())),
            }
            if capped || (self.cfg.early_stopping && since_best >= self.cfg.patience) {
                break;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutput {
        let (best_epoch, params) = match self.best {
            Some((e, _, p)) => (e, p),
            None => (0, self.state.teacher.clone()),
        };
        TrainOutput {
            model: TrainedModel {
                task: self.cfg.task,
                config: self.state.model.clone(),
                year_normalizer: self.state.norm,
                vocabulary: self.vocabulary,
                params,
            },
            state: self.state,
            history: self.history,
            diagnostics: self.diagnostics,
            best_epoch,
            sampled_constants: self.sampled,
        }
    }
}

/// Trains according to `cfg` and returns the best development teacher.
pub fn train(cfg: &RunConfig, data: TrainingData<'_>) -> Result<TrainOutput> {
    let mut trainer = Trainer::new(cfg, data)?;
    trainer.run()?;
    Ok(trainer.finish())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn diagnostic_columns(state: &TrainState, n_samples: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["step", "epoch", "l_ce", "l_mse", "lambda"].map(String::from).to_vec();
    if state.adaptive.is_some() {
        cols.push("l_mse_after".into());
        for p in state.student.params() {
            cols.push(format!("c_mean_{}", p.name));
            cols.push(format!("c_std_{}", p.name));
        }
        cols.extend((1..=n_samples).map(|i| format!("c_sample_{i}")));
    }
    cols
}

/// Picks traced constants uniformly among the entries of every array except
/// the embedding table.
fn sample_positions(params: &ModelParams, k: usize, seed: u64) -> Vec<(usize, usize)> {
    let sizes: Vec<usize> = params.params().iter().map(|p| p.tensor.numel()).collect();
    let first = ModelParams::embedding_index() + 1;
    let total: usize = sizes[first..].iter().sum();
    let mut rng = stream_rng(seed, STREAM_SAMPLES);
    rand::seq::index::sample(&mut rng, total, k.min(total))
        .into_iter()
        .map(|mut flat| {
            let mut a = first;
            while flat >= sizes[a] {
                flat -= sizes[a];
                a += 1;
            }
            (a, flat)
        })
        .collect()
}
