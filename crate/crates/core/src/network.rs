//! Utterance-level model: frame splicing, the single or coupled recurrence
//! over all frames, softmax heads with target delay, cross-entropy loss with
//! full-sequence BPTT, language-aware posterior masking and evaluation.

use std::fmt;

use rayon::prelude::*;

use crate::corpus::{splice, PhonePartition, Utterance};
use crate::error::{Error, Result};
use crate::lstmp::{step_backward_into, step_forward, CellDims, CellState, LstmpParams, StepCache};
use crate::multitask::{
    mt_step_backward_into, mt_step_forward, FeedbackConfig, JointState, MtStepCache,
    MultiTaskParams,
};
use crate::numkit::{argmax, softmax, Rng, Vector};
use crate::params::{visit_prefixed, visit_prefixed_mut, Params};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// One tower emitting posteriors over the union of both phone sets.
    SingleBilingual,
    /// ASR tower plus language tower with inter-task links.
    Multitask,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::SingleBilingual => "single",
            Mode::Multitask => "multitask",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "single" | "single_bilingual" => Ok(Mode::SingleBilingual),
            "multitask" => Ok(Mode::Multitask),
            _ => Err(Error::config(format!("unknown mode '{s}' (single or multitask)"))),
        }
    }
}

/// Hidden sizes of one tower; input and output sizes come from [`ModelSpec`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TowerSize {
    pub cell: usize,
    pub rproj: usize,
    pub pproj: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub mode: Mode,
    pub feat_dim: usize,
    pub splice_context: usize,
    pub asr: TowerSize,
    /// Ignored in single mode.
    pub lr: TowerSize,
    pub feedback: FeedbackConfig,
    pub phone_classes: usize,
    pub language_classes: usize,
    pub target_delay: usize,
    pub lambda_asr: f64,
    pub lambda_lr: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0 {
            return Err(Error::config("feature dimension must be >= 1"));
        }
        if self.language_classes < 2 {
            return Err(Error::config(format!(
                "need at least 2 language classes, got {}",
                self.language_classes
            )));
        }
        PhonePartition::even(self.phone_classes, self.language_classes)?;
        for (name, l) in [("lambda_asr", self.lambda_asr), ("lambda_lr", self.lambda_lr)] {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {l}")));
            }
        }
        if self.mode == Mode::SingleBilingual && !self.feedback.targets().is_empty() {
            return Err(Error::config("feedback links need multitask mode"));
        }
        self.dims_asr().validate()?;
        if self.mode == Mode::Multitask {
            self.dims_lr().validate()?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feat_dim * (2 * self.splice_context + 1)
    }

    pub fn dims_asr(&self) -> CellDims {
        CellDims {
            input_dim: self.input_dim(),
            cell_dim: self.asr.cell,
            rproj_dim: self.asr.rproj,
            pproj_dim: self.asr.pproj,
            output_dim: self.phone_classes,
        }
    }

    pub fn dims_lr(&self) -> CellDims {
        CellDims {
            input_dim: self.input_dim(),
            cell_dim: self.lr.cell,
            rproj_dim: self.lr.rproj,
            pproj_dim: self.lr.pproj,
            output_dim: self.language_classes,
        }
    }

    pub fn partition(&self) -> PhonePartition {
        PhonePartition::even(self.phone_classes, self.language_classes)
            .expect("validated phone partition")
    }

    /// `key=value` lines, one per field.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("mode", self.mode.name().into());
        kv("feat_dim", self.feat_dim.to_string());
        kv("splice_context", self.splice_context.to_string());
        kv("asr_cell", self.asr.cell.to_string());
        kv("asr_rproj", self.asr.rproj.to_string());
        kv("asr_pproj", self.asr.pproj.to_string());
        kv("lr_cell", self.lr.cell.to_string());
        kv("lr_rproj", self.lr.rproj.to_string());
        kv("lr_pproj", self.lr.pproj.to_string());
        kv("feedback", self.feedback.to_string());
        kv("phone_classes", self.phone_classes.to_string());
        kv("language_classes", self.language_classes.to_string());
        kv("target_delay", self.target_delay.to_string());
        kv("lambda_asr", self.lambda_asr.to_string());
        kv("lambda_lr", self.lambda_lr.to_string());
        s
    }

    pub fn from_text(text: &str) -> Result<ModelSpec> {
        let mut fields = std::collections::HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key=value, got '{line}'"),
            })?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| Error::config(format!("model spec is missing '{k}'")))
        };
        fn parse<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::config(format!("model spec field {k}='{v}' is malformed")))
        }
        let num = |k: &str| -> Result<usize> { parse(k, get(k)?) };
        let real = |k: &str| -> Result<f64> { parse(k, get(k)?) };
        let spec = ModelSpec {
            mode: Mode::parse(get("mode")?)?,
            feat_dim: num("feat_dim")?,
            splice_context: num("splice_context")?,
            asr: TowerSize {
                cell: num("asr_cell")?,
                rproj: num("asr_rproj")?,
                pproj: num("asr_pproj")?,
            },
            lr: TowerSize {
                cell: num("lr_cell")?,
                rproj: num("lr_rproj")?,
                pproj: num("lr_pproj")?,
            },
            feedback: FeedbackConfig::parse(get("feedback")?)?,
            phone_classes: num("phone_classes")?,
            language_classes: num("language_classes")?,
            target_delay: num("target_delay")?,
            lambda_asr: real("lambda_asr")?,
            lambda_lr: real("lambda_lr")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Initialization knobs (not part of the saved model).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub seed: u64,
    pub scale: f64,
    pub forget_bias: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            seed: 7,
            scale: 0.1,
            forget_bias: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Single(LstmpParams),
    Multi(MultiTaskParams),
}

impl Params for ModelParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        match self {
            ModelParams::Single(p) => visit_prefixed(p, "a", f),
            ModelParams::Multi(p) => p.visit(f),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        match self {
            ModelParams::Single(p) => visit_prefixed_mut(p, "a", f),
            ModelParams::Multi(p) => p.visit_mut(f),
        }
    }
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    /// The ASR tower (the only tower in single mode).
    pub fn asr_tower(&self) -> &LstmpParams {
        match self {
            ModelParams::Single(p) => p,
            ModelParams::Multi(p) => &p.tower_a,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

impl Model {
    pub fn zeros(spec: ModelSpec) -> Result<Model> {
        spec.validate()?;
        let params = match spec.mode {
            Mode::SingleBilingual => ModelParams::Single(LstmpParams::zeros(spec.dims_asr())),
            Mode::Multitask => ModelParams::Multi(MultiTaskParams::zeros(
                spec.dims_asr(),
                spec.dims_lr(),
                spec.feedback.clone(),
            )?),
        };
        Ok(Model { spec, params })
    }

    pub fn init(spec: ModelSpec, init: &InitConfig) -> Result<Model> {
        spec.validate()?;
        let mut rng = Rng::new(init.seed);
        let params = match spec.mode {
            Mode::SingleBilingual => ModelParams::Single(LstmpParams::init(
                spec.dims_asr(),
                &mut rng,
                init.scale,
                init.forget_bias,
            )?),
            Mode::Multitask => ModelParams::Multi(MultiTaskParams::init(
                spec.dims_asr(),
                spec.dims_lr(),
                spec.feedback.clone(),
                &mut rng,
                init.scale,
                init.forget_bias,
            )?),
        };
        Ok(Model { spec, params })
    }

    fn check_utterance(&self, utt: &Utterance) -> Result<()> {
        if utt.is_empty() {
            return Err(Error::config(format!("utterance {} has no frames", utt.id)));
        }
        if let Some(f) = utt.frames.iter().find(|f| f.len() != self.spec.feat_dim) {
            return Err(Error::dims(
                "forward_utterance",
                format!(
                    "utterance {} has {}-dim features, model expects {}",
                    utt.id,
                    f.len(),
                    self.spec.feat_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Frame index whose target is scored against output frame `t`: `t − delay`,
/// clamped to the first frame.
pub fn aligned_target(t: usize, delay: usize) -> usize {
    t.saturating_sub(delay)
}

#[derive(Clone, Debug)]
pub enum Caches {
    Single(Vec<StepCache>),
    Multi(Vec<MtStepCache>),
}

/// Raw outputs of one pass over an utterance.
#[derive(Clone, Debug)]
struct Run {
    y_a: Vec<Vector>,
    y_l: Option<Vec<Vector>>,
    caches: Option<Caches>,
}

fn run(model: &Model, utt: &Utterance, keep_caches: bool) -> Result<Run> {
    model.check_utterance(utt)?;
    let xs = splice(&utt.frames, model.spec.splice_context)?;
    match &model.params {
        ModelParams::Single(p) => {
            let mut state = CellState::zeros(p.dims());
            let mut y_a = Vec::with_capacity(xs.len());
            let mut caches = Vec::new();
            for x in &xs {
                let out = step_forward(p, x, &state)?;
                state = out.state;
                y_a.push(out.y);
                if keep_caches {
                    caches.push(out.cache);
                }
            }
            Ok(Run {
                y_a,
                y_l: None,
                caches: keep_caches.then_some(Caches::Single(caches)),
            })
        }
        ModelParams::Multi(p) => {
            let mut state = JointState::zeros(p);
            let mut y_a = Vec::with_capacity(xs.len());
            let mut y_l = Vec::with_capacity(xs.len());
            let mut caches = Vec::new();
            for x in &xs {
                let out = mt_step_forward(p, x, &state)?;
                state = out.state;
                y_a.push(out.y_a);
                y_l.push(out.y_l);
                if keep_caches {
                    caches.push(out.cache);
                }
            }
            Ok(Run {
                y_a,
                y_l: Some(y_l),
                caches: keep_caches.then_some(Caches::Multi(caches)),
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardRecord {
    pub phone_posteriors: Vec<Vector>,
    /// Present in multitask mode only.
    pub language_posteriors: Option<Vec<Vector>>,
    pub caches: Option<Caches>,
}

impl ForwardRecord {
    pub fn len(&self) -> usize {
        self.phone_posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phone_posteriors.is_empty()
    }
}

fn posteriors(run: Run) -> ForwardRecord {
    ForwardRecord {
        phone_posteriors: run.y_a.iter().map(|y| softmax(y)).collect(),
        language_posteriors: run.y_l.map(|ys| ys.iter().map(|y| softmax(y)).collect()),
        caches: run.caches,
    }
}

/// Forward pass keeping the caches needed for BPTT.
pub fn forward_utterance(model: &Model, utt: &Utterance) -> Result<ForwardRecord> {
    Ok(posteriors(run(model, utt, true)?))
}

/// Forward pass without caches.
pub fn infer(model: &Model, utt: &Utterance) -> Result<ForwardRecord> {
    Ok(posteriors(run(model, utt, false)?))
}

fn log_sum_exp(y: &[f64]) -> f64 {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + y.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Weighted total plus the unweighted per-task mean cross-entropies.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub asr: f64,
    pub lr: f64,
}

fn frame_losses(model: &Model, utt: &Utterance, run: &Run) -> LossParts {
    let t_len = utt.len() as f64;
    let delay = model.spec.target_delay;
    let asr = run
        .y_a
        .iter()
        .enumerate()
        .map(|(t, y)| log_sum_exp(y) - y[utt.phones[aligned_target(t, delay)]])
        .sum::<f64>()
        / t_len;
    let lr = run.y_l.as_ref().map_or(0.0, |ys| {
        ys.iter().map(|y| log_sum_exp(y) - y[utt.language]).sum::<f64>() / t_len
    });
    LossParts {
        total: model.spec.lambda_asr * asr + model.spec.lambda_lr * lr,
        asr,
        lr,
    }
}

fn check_targets(model: &Model, utt: &Utterance) -> Result<()> {
    if utt.phones.len() != utt.frames.len() {
        return Err(Error::dims(
            "loss",
            format!("utterance {} has {} frames but {} targets", utt.id, utt.frames.len(), utt.phones.len()),
        ));
    }
    if utt.phones.iter().any(|&p| p >= model.spec.phone_classes) {
        return Err(Error::config(format!("utterance {} has a phone id out of range", utt.id)));
    }
    if utt.language >= model.spec.language_classes {
        return Err(Error::config(format!("utterance {} has a language id out of range", utt.id)));
    }
    Ok(())
}

pub fn loss(model: &Model, utt: &Utterance) -> Result<LossParts> {
    check_targets(model, utt)?;
    let r = run(model, utt, false)?;
    Ok(frame_losses(model, utt, &r))
}

/// `dL/dy` for a softmax head scored against `target`.
fn head_grad(y: &[f64], target: usize, weight: f64) -> Vector {
    let mut g = softmax(y);
    g[target] -= 1.0;
    g.iter_mut().for_each(|v| *v *= weight);
    g
}

/// Loss and gradients via full-sequence BPTT.
pub fn loss_and_grad(model: &Model, utt: &Utterance) -> Result<(LossParts, ModelParams)> {
    check_targets(model, utt)?;
    let r = run(model, utt, true)?;
    let parts = frame_losses(model, utt, &r);
    let t_len = utt.len() as f64;
    let delay = model.spec.target_delay;
    let w_asr = model.spec.lambda_asr / t_len;
    let w_lr = model.spec.lambda_lr / t_len;
    let mut grads = model.params.zeros_like();

    match (&model.params, &mut grads, r.caches.as_ref().expect("caches kept")) {
        (ModelParams::Single(p), ModelParams::Single(g), Caches::Single(caches)) => {
            let mut dnext = CellState::zeros(p.dims());
            for t in (0..caches.len()).rev() {
                let dy = head_grad(&r.y_a[t], utt.phones[aligned_target(t, delay)], w_asr);
                dnext = step_backward_into(p, &caches[t], &dy, &dnext, g)?.dprev;
            }
        }
        (ModelParams::Multi(p), ModelParams::Multi(g), Caches::Multi(caches)) => {
            let y_l = r.y_l.as_ref().expect("language outputs");
            let mut dnext = JointState::zeros(p);
            for t in (0..caches.len()).rev() {
                let dy_a = head_grad(&r.y_a[t], utt.phones[aligned_target(t, delay)], w_asr);
                let dy_l = head_grad(&y_l[t], utt.language, w_lr);
                dnext = mt_step_backward_into(p, &caches[t], &dy_a, &dy_l, &dnext, g)?.dprev;
            }
        }
        _ => unreachable!("caches follow the parameter variant"),
    }
    Ok((parts, grads))
}

/// Reweight a phone posterior by per-language weights and renormalize.
/// Falls back to the input when every weighted entry is zero.
pub fn mask_posterior(post: &[f64], language_weights: &[f64], partition: &PhonePartition) -> Result<Vector> {
    if post.len() != partition.num_phones() || language_weights.len() != partition.num_languages() {
        return Err(Error::dims(
            "language_aware_posterior",
            format!(
                "{} phones / {} language weights against a partition of {} phones over {} languages",
                post.len(),
                language_weights.len(),
                partition.num_phones(),
                partition.num_languages()
            ),
        ));
    }
    let mut out: Vector = post
        .iter()
        .enumerate()
        .map(|(k, p)| p * language_weights[partition.language_of(k)])
        .collect();
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|v| *v /= total);
        Ok(out)
    } else {
        Ok(post.to_vec())
    }
}

/// Phone posterior at frame `t` masked by the running mean of the language
/// posteriors over frames `0..=t`.
pub fn language_aware_posterior(record: &ForwardRecord, t: usize, partition: &PhonePartition) -> Result<Vector> {
    let lang = record
        .language_posteriors
        .as_ref()
        .ok_or_else(|| Error::config("language-aware masking needs a multitask model"))?;
    if t >= record.len() {
        return Err(Error::config(format!("frame {t} out of range for {} frames", record.len())));
    }
    let mut mean = vec![0.0; lang[0].len()];
    for l in &lang[..=t] {
        for (m, v) in mean.iter_mut().zip(l) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= (t + 1) as f64);
    mask_posterior(&record.phone_posteriors[t], &mean, partition)
}

/// Which posterior the frame decision is taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Masking {
    None,
    /// Running language posterior of the model.
    Running,
    /// Hard mask to the given language.
    Oracle(usize),
}

/// Frame errors of one utterance under the given masking: `(errors, frames)`.
pub fn frame_errors(
    record: &ForwardRecord,
    utt: &Utterance,
    delay: usize,
    partition: &PhonePartition,
    masking: Masking,
) -> Result<(usize, usize)> {
    let mut running = record
        .language_posteriors
        .as_ref()
        .map(|l| vec![0.0; l[0].len()]);
    let mut errors = 0;
    for t in 0..record.len() {
        let post = match masking {
            Masking::None => record.phone_posteriors[t].clone(),
            Masking::Running => {
                let lang = record
                    .language_posteriors
                    .as_ref()
                    .ok_or_else(|| Error::config("language-aware masking needs a multitask model"))?;
                let acc = running.as_mut().expect("language posteriors present");
                for (m, v) in acc.iter_mut().zip(&lang[t]) {
                    *m += v;
                }
                let mean: Vec<f64> = acc.iter().map(|m| m / (t + 1) as f64).collect();
                mask_posterior(&record.phone_posteriors[t], &mean, partition)?
            }
            Masking::Oracle(g) => {
                let mut w = vec![0.0; partition.num_languages()];
                w[g] = 1.0;
                mask_posterior(&record.phone_posteriors[t], &w, partition)?
            }
        };
        if argmax(&post) != utt.phones[aligned_target(t, delay)] {
            errors += 1;
        }
    }
    Ok((errors, record.len()))
}

/// Per-frame language posterior: the language tower's output in multitask
/// mode, otherwise the phone-posterior mass of each language.
fn utterance_language_scores(record: &ForwardRecord, partition: &PhonePartition) -> Vector {
    let mut mean = vec![0.0; partition.num_languages()];
    match &record.language_posteriors {
        Some(lang) => {
            for l in lang {
                for (m, v) in mean.iter_mut().zip(l) {
                    *m += v;
                }
            }
        }
        None => {
            for post in &record.phone_posteriors {
                for (k, p) in post.iter().enumerate() {
                    mean[partition.language_of(k)] += p;
                }
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= record.len() as f64);
    mean
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    /// Frame error rate per language (by utterance language).
    pub fer: Vec<f64>,
    pub language_accuracy: f64,
    /// Fraction of frames whose argmax phone belongs to another language.
    pub confusion: f64,
    /// FER under running language-aware masking; multitask only.
    pub masked_fer: Option<Vec<f64>>,
    pub frames: usize,
    pub utterances: usize,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        f64::NAN
    } else {
        num as f64 / den as f64
    }
}

/// Per-utterance tallies gathered in parallel, reduced in corpus order.
#[derive(Clone, Copy, Default)]
struct Tally {
    errors: usize,
    masked_errors: usize,
    confusions: usize,
    frames: usize,
    language_correct: bool,
}

fn tally(model: &Model, utt: &Utterance, partition: &PhonePartition) -> Result<Tally> {
    let record = infer(model, utt)?;
    let delay = model.spec.target_delay;
    let (errors, frames) = frame_errors(&record, utt, delay, partition, Masking::None)?;
    let masked_errors = if record.language_posteriors.is_some() {
        frame_errors(&record, utt, delay, partition, Masking::Running)?.0
    } else {
        0
    };
    let confusions = record
        .phone_posteriors
        .iter()
        .filter(|p| partition.language_of(argmax(p)) != utt.language)
        .count();
    let scores = utterance_language_scores(&record, partition);
    Ok(Tally {
        errors,
        masked_errors,
        confusions,
        frames,
        language_correct: argmax(&scores) == utt.language,
    })
}

pub fn evaluate(model: &Model, corpus: &[Utterance], label: &str) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::config("cannot evaluate on an empty corpus"));
    }
    let partition = model.spec.partition();
    let tallies: Vec<Tally> = corpus
        .par_iter()
        .map(|u| {
            check_targets(model, u)?;
            tally(model, u, &partition)
        })
        .collect::<Result<_>>()?;

    let langs = partition.num_languages();
    let mut errors = vec![0usize; langs];
    let mut masked = vec![0usize; langs];
    let mut frames = vec![0usize; langs];
    let (mut confusions, mut correct, mut total_frames) = (0, 0, 0);
    for (utt, t) in corpus.iter().zip(&tallies) {
        errors[utt.language] += t.errors;
        masked[utt.language] += t.masked_errors;
        frames[utt.language] += t.frames;
        confusions += t.confusions;
        total_frames += t.frames;
        correct += t.language_correct as usize;
    }
    Ok(MetricsReport {
        label: label.to_string(),
        fer: (0..langs).map(|g| rate(errors[g], frames[g])).collect(),
        language_accuracy: rate(correct, corpus.len()),
        confusion: rate(confusions, total_frames),
        masked_fer: (model.spec.mode == Mode::Multitask)
            .then(|| (0..langs).map(|g| rate(masked[g], frames[g])).collect()),
        frames: total_frames,
        utterances: corpus.len(),
    })
}

impl MetricsReport {
    pub fn header(languages: usize, masked: bool) -> String {
        let mut cols = vec!["label".to_string()];
        cols.extend((1..=languages).map(|g| format!("fer_lang{g}")));
        cols.push("lang_acc".into());
        cols.push("confusion".into());
        if masked {
            cols.extend((1..=languages).map(|g| format!("masked_fer_lang{g}")));
        }
        format!("# {}", cols.join(" "))
    }

    pub fn row(&self, masked: bool) -> String {
        let mut cols = vec![self.label.clone()];
        cols.extend(self.fer.iter().map(|v| format!("{v:.6}")));
        cols.push(format!("{:.6}", self.language_accuracy));
        cols.push(format!("{:.6}", self.confusion));
        if masked {
            match &self.masked_fer {
                Some(m) => cols.extend(m.iter().map(|v| format!("{v:.6}"))),
                None => cols.extend(self.fer.iter().map(|_| "-".to_string())),
            }
        }
        cols.join(" ")
    }
}

/// Header plus one row per report.
pub struct MetricsTable<'a> {
    pub reports: &'a [MetricsReport],
    pub masked: bool,
}

impl fmt::Display for MetricsTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let langs = self.reports.first().map_or(2, |r| r.fer.len());
        writeln!(f, "{}", MetricsReport::header(langs, self.masked))?;
        for r in self.reports {
            writeln!(f, "{}", r.row(self.masked))?;
        }
        Ok(())
    }
}
