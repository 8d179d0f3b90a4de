//! Python bindings: corpus generation and I/O, model construction, training,
//! evaluation, checkpoints and the gradient-check suite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use mtrnet_core::checkpoint;
use mtrnet_core::corpus::{self as core_corpus, CorpusConfig, CorpusFile, CorpusSpec};
use mtrnet_core::gradcheck::{run_suite, SuiteOptions};
use mtrnet_core::multitask::FeedbackConfig as CoreFeedback;
use mtrnet_core::network::{self, InitConfig, Mode, ModelSpec, TowerSize};
use mtrnet_core::params::Params;
use mtrnet_core::trainer::{self, TrainConfig};

create_exception!(mtrnet, MtrnetError, PyException);

fn err(e: mtrnet_core::Error) -> PyErr {
    MtrnetError::new_err(e.to_string())
}

#[pyclass(module = "mtrnet", frozen, from_py_object)]
#[derive(Clone)]
struct Utterance {
    inner: core_corpus::Utterance,
}

#[pymethods]
impl Utterance {
    #[new]
    fn new(id: String, frames: Vec<Vec<f64>>, phones: Vec<usize>, language: usize) -> PyResult<Self> {
        if frames.len() != phones.len() {
            return Err(MtrnetError::new_err(format!(
                "{} frames but {} phone labels",
                frames.len(),
                phones.len()
            )));
        }
        Ok(Utterance {
            inner: core_corpus::Utterance {
                id,
                frames,
                phones,
                language,
            },
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn frames(&self) -> Vec<Vec<f64>> {
        self.inner.frames.clone()
    }

    #[getter]
    fn phones(&self) -> Vec<usize> {
        self.inner.phones.clone()
    }

    #[getter]
    fn language(&self) -> usize {
        self.inner.language
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Utterance(id={:?}, frames={}, language={})",
            self.inner.id,
            self.inner.len(),
            self.inner.language
        )
    }
}

fn unwrap_utts(utts: &[Utterance]) -> Vec<core_corpus::Utterance> {
    utts.iter().map(|u| u.inner.clone()).collect()
}

fn wrap_utts(utts: Vec<core_corpus::Utterance>) -> Vec<Utterance> {
    utts.into_iter().map(|inner| Utterance { inner }).collect()
}

/// Generate a synthetic bilingual corpus; returns `(train, test)`.
#[pyfunction]
#[pyo3(signature = (
    seed=1, languages=2, phones_per_language=10, feat_dim=8, utterances_per_language=240,
    frames_min=30, frames_max=60, overlap=0.9, stddev=0.3, self_loop=0.6
))]
#[allow(clippy::too_many_arguments)]
fn gen_corpus(
    seed: u64,
    languages: usize,
    phones_per_language: usize,
    feat_dim: usize,
    utterances_per_language: usize,
    frames_min: usize,
    frames_max: usize,
    overlap: f64,
    stddev: f64,
    self_loop: f64,
) -> PyResult<(Vec<Utterance>, Vec<Utterance>)> {
    let cfg = CorpusConfig {
        seed,
        languages,
        phones_per_language,
        feat_dim,
        utterances_per_language,
        frames_min,
        frames_max,
        overlap,
        stddev,
        self_loop,
    };
    let corpus = core_corpus::gen_corpus(&CorpusSpec::from_config(&cfg).map_err(err)?).map_err(err)?;
    Ok((wrap_utts(corpus.train), wrap_utts(corpus.test)))
}

/// Read a corpus file; returns `(utterances, feat_dim, phone_classes, language_classes)`.
#[pyfunction]
fn read_corpus(path: PathBuf) -> PyResult<(Vec<Utterance>, usize, usize, usize)> {
    let f = File::open(&path).map_err(|e| MtrnetError::new_err(format!("{}: {e}", path.display())))?;
    let file = core_corpus::read_corpus(BufReader::new(f)).map_err(err)?;
    Ok((
        wrap_utts(file.utterances),
        file.feat_dim,
        file.phone_classes,
        file.language_classes,
    ))
}

#[pyfunction]
fn write_corpus(
    path: PathBuf,
    utterances: Vec<Utterance>,
    feat_dim: usize,
    phone_classes: usize,
    language_classes: usize,
) -> PyResult<()> {
    let file = CorpusFile {
        feat_dim,
        phone_classes,
        language_classes,
        utterances: unwrap_utts(&utterances),
    };
    let io = |e: std::io::Error| MtrnetError::new_err(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    core_corpus::write_corpus(&mut w, &file).map_err(err)?;
    w.flush().map_err(io)
}

/// Feedback configuration in the compact `TARGETS:INFO` form, e.g. `g:r`.
#[pyclass(module = "mtrnet", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct FeedbackConfig {
    inner: CoreFeedback,
}

#[pymethods]
impl FeedbackConfig {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(FeedbackConfig {
            inner: CoreFeedback::parse(text).map_err(err)?,
        })
    }

    /// The 12 configurations of the sweep grid.
    #[staticmethod]
    fn sweep_grid() -> Vec<FeedbackConfig> {
        CoreFeedback::sweep_grid()
            .into_iter()
            .map(|inner| FeedbackConfig { inner })
            .collect()
    }

    #[getter]
    fn targets(&self) -> String {
        self.inner.targets().iter().map(|g| g.letter()).collect()
    }

    #[getter]
    fn info(&self) -> String {
        self.inner.info().iter().map(|i| i.letter()).collect()
    }

    fn __str__(&self) -> String {
        self.inner.to_string()
    }

    fn __repr__(&self) -> String {
        format!("FeedbackConfig('{}')", self.inner)
    }
}

/// A single-tower or two-tower (ASR + LR) LSTMP model.
#[pyclass(module = "mtrnet", from_py_object)]
#[derive(Clone)]
struct Model {
    inner: network::Model,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (
        mode="multitask", feedback="g:r", feat_dim=8, phone_classes=20, language_classes=2,
        cell_dim=64, proj_dim=16, lr_cell_dim=32, lr_proj_dim=8, target_delay=5, splice_context=2,
        lambda_asr=1.0, lambda_lr=1.0, init_seed=7, init_scale=0.1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        mode: &str,
        feedback: &str,
        feat_dim: usize,
        phone_classes: usize,
        language_classes: usize,
        cell_dim: usize,
        proj_dim: usize,
        lr_cell_dim: usize,
        lr_proj_dim: usize,
        target_delay: usize,
        splice_context: usize,
        lambda_asr: f64,
        lambda_lr: f64,
        init_seed: u64,
        init_scale: f64,
    ) -> PyResult<Self> {
        let mode = Mode::parse(mode).map_err(err)?;
        let feedback = match mode {
            Mode::SingleBilingual => CoreFeedback::none(),
            Mode::Multitask => CoreFeedback::parse(feedback).map_err(err)?,
        };
        let spec = ModelSpec {
            mode,
            feat_dim,
            splice_context,
            asr: TowerSize {
                cell: cell_dim,
                rproj: proj_dim,
                pproj: proj_dim,
            },
            lr: TowerSize {
                cell: lr_cell_dim,
                rproj: lr_proj_dim,
                pproj: lr_proj_dim,
            },
            feedback,
            phone_classes,
            language_classes,
            target_delay,
            lambda_asr,
            lambda_lr,
        };
        let init = InitConfig {
            seed: init_seed,
            scale: init_scale,
            ..InitConfig::default()
        };
        Ok(Model {
            inner: network::Model::init(spec, &init).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: checkpoint::load_file(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_file(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.spec.mode.name()
    }

    #[getter]
    fn feedback(&self) -> String {
        self.inner.spec.feedback.to_string()
    }

    #[getter]
    fn spec_text(&self) -> String {
        self.inner.spec.to_text()
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params.num_params()
    }

    fn block_names(&self) -> Vec<String> {
        self.inner.params.block_names()
    }

    /// All parameters in checkpoint order.
    fn params(&self) -> Vec<f64> {
        self.inner.params.to_flat()
    }

    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        let n = self.inner.params.num_params();
        if flat.len() != n {
            return Err(MtrnetError::new_err(format!("expected {n} values, got {}", flat.len())));
        }
        self.inner.params.load_flat(&flat);
        Ok(())
    }

    /// `(total, asr, lr)` loss of one utterance.
    fn loss(&self, utt: &Utterance) -> PyResult<(f64, f64, f64)> {
        let l = network::loss(&self.inner, &utt.inner).map_err(err)?;
        Ok((l.total, l.asr, l.lr))
    }

    /// `((total, asr, lr), flat_gradient)`.
    fn loss_and_grad(&self, utt: &Utterance) -> PyResult<((f64, f64, f64), Vec<f64>)> {
        let (l, g) = network::loss_and_grad(&self.inner, &utt.inner).map_err(err)?;
        Ok(((l.total, l.asr, l.lr), g.to_flat()))
    }

    /// `(phone_posteriors, language_posteriors or None)`, one row per frame.
    fn infer(&self, utt: &Utterance) -> PyResult<(Vec<Vec<f64>>, Option<Vec<Vec<f64>>>)> {
        let r = network::infer(&self.inner, &utt.inner).map_err(err)?;
        Ok((r.phone_posteriors, r.language_posteriors))
    }

    /// Metrics over a corpus as a plain dict.
    #[pyo3(signature = (utterances, label="eval"))]
    fn evaluate<'py>(&self, py: Python<'py>, utterances: Vec<Utterance>, label: &str) -> PyResult<Bound<'py, PyAny>> {
        let r = network::evaluate(&self.inner, &unwrap_utts(&utterances), label).map_err(err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("label", r.label)?;
        d.set_item("fer", r.fer)?;
        d.set_item("language_accuracy", r.language_accuracy)?;
        d.set_item("confusion", r.confusion)?;
        d.set_item("masked_fer", r.masked_fer)?;
        d.set_item("frames", r.frames)?;
        d.set_item("utterances", r.utterances)?;
        Ok(d.into_any())
    }

    /// Train in place; returns one `(epoch, train_loss, holdout_loss, learning_rate)`
    /// tuple per epoch.
    #[pyo3(signature = (
        train, holdout=Vec::new(), epochs=12, batch_size=8, learning_rate=0.1, momentum=0.9,
        clip_norm=5.0, seed=1, lr_halving=true
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        train: Vec<Utterance>,
        holdout: Vec<Utterance>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        momentum: f64,
        clip_norm: f64,
        seed: u64,
        lr_halving: bool,
    ) -> PyResult<Vec<(usize, f64, Option<f64>, f64)>> {
        let cfg = TrainConfig {
            learning_rate,
            momentum,
            clip_norm,
            epochs,
            batch_size,
            seed,
            lr_halving,
        };
        let (fit, hold) = (unwrap_utts(&train), unwrap_utts(&holdout));
        let model = &mut self.inner;
        let log = py
            .detach(|| trainer::train(model, &fit, &hold, &cfg))
            .map_err(err)?;
        Ok(log
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.holdout_loss, e.learning_rate))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(mode={}, feedback={}, params={})",
            self.inner.spec.mode.name(),
            self.inner.spec.feedback,
            self.inner.params.num_params()
        )
    }
}

/// Run the gradient-check suite; returns `(label, passed, max_rel_err, worst_block)` per check.
#[pyfunction]
#[pyo3(signature = (seed=1, eps=1e-5, tol=1e-5, frames=6, configs=None))]
fn grad_check(
    py: Python<'_>,
    seed: u64,
    eps: f64,
    tol: f64,
    frames: usize,
    configs: Option<Vec<String>>,
) -> PyResult<Vec<(String, bool, f64, String)>> {
    let only = configs
        .map(|list| list.iter().map(|c| CoreFeedback::parse(c)).collect::<Result<Vec<_>, _>>())
        .transpose()
        .map_err(err)?;
    let opts = SuiteOptions {
        seed,
        eps,
        tol,
        frames,
        only,
    };
    let reports = py.detach(|| run_suite(&opts)).map_err(err)?;
    Ok(reports
        .into_iter()
        .map(|r| (r.label, r.passed, r.max_rel_err, r.worst_block))
        .collect())
}

#[pymodule]
fn mtrnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MtrnetError", m.py().get_type::<MtrnetError>())?;
    m.add_class::<Utterance>()?;
    m.add_class::<FeedbackConfig>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gen_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(read_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(write_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
