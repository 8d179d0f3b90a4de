//! Finite-difference verification of the analytic gradients.
//!
//! The numeric side evaluates the loss with a separate forward pass in
//! double-double arithmetic and differences it against the unperturbed
//! loss, so the only f64 rounding left is in the perturbed parameter itself.

use std::fmt;

use crate::corpus::{splice, Utterance};
use crate::dd::Dd;
use crate::error::Result;
use crate::lstmp::{step_backward_into, step_forward, CellDims, CellState, Gate, LstmpParams};
use crate::multitask::{CrossLink, FeedbackConfig, Info};
use crate::network::{aligned_target, loss_and_grad, InitConfig, Mode, Model, ModelParams, ModelSpec, TowerSize};
use crate::numkit::{central_diff, Matrix, Rng, Vector};
use crate::params::Params;

/// `|a − n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub max_rel_err: f64,
    /// Block and in-block index of the worst component.
    pub worst_block: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<10} params={:<5} max_rel_err={:.3e} worst={}[{}] analytic={:.6e} numeric={:.6e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.checked,
            self.max_rel_err,
            self.worst_block,
            self.worst_index,
            self.analytic,
            self.numeric
        )
    }
}

/// Compare `analytic` (laid out like `params`) against central differences of
/// `objective` over every parameter entry.
pub fn compare<P, F>(label: &str, params: &P, analytic: &P, mut objective: F, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    P: Params + Clone,
    F: FnMut(&P) -> f64,
{
    let theta = params.to_flat();
    let grads = analytic.to_flat();
    let mut owners = Vec::with_capacity(theta.len());
    params.visit(&mut |name, d| owners.extend((0..d.len()).map(|k| (name.to_string(), k))));

    let mut scratch = params.clone();
    let mut f = |t: &[f64]| {
        scratch.load_flat(t);
        objective(&scratch)
    };
    let mut worst = (0.0f64, 0usize, 0.0, 0.0);
    for k in 0..theta.len() {
        let numeric = central_diff(&mut f, &theta, k, eps)?;
        let rel = relative_error(grads[k], numeric);
        if rel > worst.0 || k == 0 {
            worst = (rel, k, grads[k], numeric);
        }
    }
    let (block, index) = owners.get(worst.1).cloned().unwrap_or_default();
    Ok(GradCheckReport {
        label: label.to_string(),
        max_rel_err: worst.0,
        worst_block: block,
        worst_index: index,
        analytic: worst.2,
        numeric: worst.3,
        checked: theta.len(),
        passed: worst.0 < tol,
    })
}

/// Check `loss_and_grad` of a whole utterance.
pub fn grad_check(model: &Model, utt: &Utterance, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grad(model, utt)?;
    grad_check_against(model, utt, &grads.to_flat(), eps, tol, "model")
}

/// Check externally supplied gradients (flat, in block order) for `model`.
pub fn grad_check_against(
    model: &Model,
    utt: &Utterance,
    analytic: &[f64],
    eps: f64,
    tol: f64,
    label: &str,
) -> Result<GradCheckReport> {
    let mut grads = model.params.clone();
    grads.load_flat(analytic);
    let xs = splice(&utt.frames, model.spec.splice_context)?;
    let xs: Vec<Vec<Dd>> = xs.iter().map(|x| widen(x)).collect();
    let base = reference_loss(&model.spec, &model.params, &xs, utt);
    compare(
        label,
        &model.params,
        &grads,
        |p| (reference_loss(&model.spec, p, &xs, utt) - base).to_f64(),
        eps,
        tol,
    )
}

/// Bare tower over a frame sequence with objective `Σ_t coeffs_t · y_t`.
pub fn cell_grad_check(
    params: &LstmpParams,
    xs: &[Vector],
    coeffs: &[Vector],
    eps: f64,
    tol: f64,
    label: &str,
) -> Result<GradCheckReport> {
    let dims = params.dims();
    let wide: Vec<Vec<Dd>> = xs.iter().map(|x| widen(x)).collect();
    let reference = |p: &LstmpParams| -> Dd {
        let mut s = RefState::zeros(dims);
        let mut total = Dd::ZERO;
        for (x, c) in wide.iter().zip(coeffs) {
            let (next, y) = ref_step(p, x, &s, &[]);
            for (yk, ck) in y.iter().zip(c) {
                total += *yk * *ck;
            }
            s = next;
        }
        total
    };
    let base = reference(params);
    let objective = |p: &LstmpParams| (reference(p) - base).to_f64();

    let mut caches = Vec::new();
    let mut s = CellState::zeros(dims);
    for x in xs {
        let out = step_forward(params, x, &s)?;
        caches.push(out.cache);
        s = out.state;
    }
    let mut grads = LstmpParams::zeros(dims);
    let mut dnext = CellState::zeros(dims);
    for (cache, c) in caches.iter().zip(coeffs).rev() {
        dnext = step_backward_into(params, cache, c, &dnext, &mut grads)?.dprev;
    }
    compare(label, params, &grads, objective, eps, tol)
}

fn widen(v: &[f64]) -> Vec<Dd> {
    v.iter().map(|&x| Dd::new(x)).collect()
}

/// `z += W x`
fn ref_affine(w: &Matrix, x: &[Dd], z: &mut [Dd]) {
    for (i, zi) in z.iter_mut().enumerate() {
        for (j, xj) in x.iter().enumerate() {
            *zi += *xj * w.get(i, j);
        }
    }
}

#[derive(Clone)]
struct RefState {
    c: Vec<Dd>,
    r: Vec<Dd>,
    p: Vec<Dd>,
}

impl RefState {
    fn zeros(d: CellDims) -> Self {
        RefState {
            c: vec![Dd::ZERO; d.cell_dim],
            r: vec![Dd::ZERO; d.rproj_dim],
            p: vec![Dd::ZERO; d.pproj_dim],
        }
    }
}

/// One LSTMP step; `links` adds `W · source` from the other tower's previous
/// state into the named gate.
fn ref_step(p: &LstmpParams, x: &[Dd], prev: &RefState, links: &[(Gate, &Matrix, &[Dd])]) -> (RefState, Vec<Dd>) {
    let n = p.dims().cell_dim;
    let pre = |gate: Gate, wx: &Matrix, wr: &Matrix, b: &[f64]| {
        let mut z = widen(b);
        ref_affine(wx, x, &mut z);
        ref_affine(wr, &prev.r, &mut z);
        for (g, w, src) in links {
            if *g == gate {
                ref_affine(w, src, &mut z);
            }
        }
        z
    };
    let zi = pre(Gate::Input, &p.w_ix, &p.w_ir, &p.b_i);
    let zf = pre(Gate::Forget, &p.w_fx, &p.w_fr, &p.b_f);
    let zg = pre(Gate::Cell, &p.w_cx, &p.w_cr, &p.b_c);
    let zo = pre(Gate::Output, &p.w_ox, &p.w_or, &p.b_o);
    let mut c = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    for k in 0..n {
        let i = (zi[k] + prev.c[k] * p.w_ic[k]).sigmoid();
        let f = (zf[k] + prev.c[k] * p.w_fc[k]).sigmoid();
        let ck = f * prev.c[k] + i * zg[k].tanh();
        let o = (zo[k] + ck * p.w_oc[k]).sigmoid();
        m.push(o * ck.tanh());
        c.push(ck);
    }
    let d = p.dims();
    let mut r = vec![Dd::ZERO; d.rproj_dim];
    ref_affine(&p.w_rm, &m, &mut r);
    let mut pp = vec![Dd::ZERO; d.pproj_dim];
    ref_affine(&p.w_pm, &m, &mut pp);
    let mut y = widen(&p.b_y);
    ref_affine(&p.w_yr, &r, &mut y);
    ref_affine(&p.w_yp, &pp, &mut y);
    (RefState { c, r, p: pp }, y)
}

fn ref_cross_entropy(y: &[Dd], target: usize) -> Dd {
    let max = y.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
    let mut s = Dd::ZERO;
    for v in y {
        s += (*v - Dd::new(max)).exp();
    }
    Dd::new(max) + s.ln() - y[target]
}

fn ref_links<'a>(links: &'a [CrossLink], other: &'a RefState) -> Vec<(Gate, &'a Matrix, &'a [Dd])> {
    links
        .iter()
        .map(|l| {
            let src: &[Dd] = match l.info {
                Info::Recurrent => &other.r,
                Info::NonRecurrent => &other.p,
            };
            (l.gate, &l.weight, src)
        })
        .collect()
}

/// Independent high-precision evaluation of the training loss on spliced
/// inputs `xs`.
fn reference_loss(spec: &ModelSpec, params: &ModelParams, xs: &[Vec<Dd>], utt: &Utterance) -> Dd {
    let t_len = Dd::new(xs.len() as f64);
    let target = |t: usize| utt.phones[aligned_target(t, spec.target_delay)];
    let mut asr = Dd::ZERO;
    let mut lr = Dd::ZERO;
    match params {
        ModelParams::Single(p) => {
            let mut s = RefState::zeros(p.dims());
            for (t, x) in xs.iter().enumerate() {
                let (next, y) = ref_step(p, x, &s, &[]);
                asr += ref_cross_entropy(&y, target(t));
                s = next;
            }
        }
        ModelParams::Multi(mp) => {
            let mut sa = RefState::zeros(mp.tower_a.dims());
            let mut sl = RefState::zeros(mp.tower_l.dims());
            for (t, x) in xs.iter().enumerate() {
                let (na, ya) = ref_step(&mp.tower_a, x, &sa, &ref_links(&mp.cross.to_a, &sl));
                let (nl, yl) = ref_step(&mp.tower_l, x, &sl, &ref_links(&mp.cross.to_l, &sa));
                asr += ref_cross_entropy(&ya, target(t));
                lr += ref_cross_entropy(&yl, utt.language);
                sa = na;
                sl = nl;
            }
        }
    }
    (asr * spec.lambda_asr + lr * spec.lambda_lr) / t_len
}

/// Options for the full verification run.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub frames: usize,
    /// Restrict to these multitask configurations (skips the single-tower
    /// checks); `None` runs everything.
    pub only: Option<Vec<FeedbackConfig>>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 1,
            eps: 1e-5,
            tol: 1e-5,
            frames: 6,
            only: None,
        }
    }
}

/// Small model used for finite-difference checks.
pub fn tiny_spec(mode: Mode, feedback: FeedbackConfig) -> ModelSpec {
    ModelSpec {
        mode,
        feat_dim: 2,
        splice_context: 1,
        asr: TowerSize { cell: 6, rproj: 3, pproj: 2 },
        lr: TowerSize { cell: 4, rproj: 2, pproj: 3 },
        feedback,
        phone_classes: 4,
        language_classes: 2,
        target_delay: 2,
        lambda_asr: 1.0,
        lambda_lr: 1.0,
    }
}

const TINY_INIT_SCALE: f64 = 0.5;

fn random_utterance(rng: &mut Rng, spec: &ModelSpec, frames: usize) -> Utterance {
    let language = rng.below(spec.language_classes);
    let per = spec.phone_classes / spec.language_classes;
    Utterance {
        id: "gradcheck".into(),
        frames: (0..frames)
            .map(|_| (0..spec.feat_dim).map(|_| rng.normal()).collect())
            .collect(),
        phones: (0..frames).map(|_| language * per + rng.below(per)).collect(),
        language,
    }
}

/// Bare towers at both tower sizes, the single-tower network, then every
/// configuration of the sweep grid (or just `opts.only`).
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(opts.seed);
    let mut reports = Vec::new();
    let configs = match &opts.only {
        Some(list) => list.clone(),
        None => {
            let base = tiny_spec(Mode::SingleBilingual, FeedbackConfig::none());
            for (label, dims) in [("cell-a", base.dims_asr()), ("cell-l", base.dims_lr())] {
                let params = LstmpParams::init(dims, &mut rng, TINY_INIT_SCALE, 1.0)?;
                let (xs, coeffs) = random_cell_inputs(&mut rng, dims, opts.frames);
                reports.push(cell_grad_check(&params, &xs, &coeffs, opts.eps, opts.tol, label)?);
            }
            let model = Model::init(base.clone(), &tiny_init(rng.below(1 << 30) as u64))?;
            let utt = random_utterance(&mut rng, &base, opts.frames);
            let (_, g) = loss_and_grad(&model, &utt)?;
            reports.push(grad_check_against(&model, &utt, &g.to_flat(), opts.eps, opts.tol, "single")?);
            FeedbackConfig::sweep_grid()
        }
    };
    for cfg in configs {
        let spec = tiny_spec(Mode::Multitask, cfg.clone());
        let model = Model::init(spec.clone(), &tiny_init(rng.below(1 << 30) as u64))?;
        let utt = random_utterance(&mut rng, &spec, opts.frames);
        let (_, g) = loss_and_grad(&model, &utt)?;
        reports.push(grad_check_against(&model, &utt, &g.to_flat(), opts.eps, opts.tol, &cfg.to_string())?);
    }
    Ok(reports)
}

fn tiny_init(seed: u64) -> InitConfig {
    InitConfig {
        seed,
        scale: TINY_INIT_SCALE,
        forget_bias: 1.0,
    }
}

fn random_cell_inputs(rng: &mut Rng, dims: CellDims, frames: usize) -> (Vec<Vector>, Vec<Vector>) {
    let xs = (0..frames)
        .map(|_| (0..dims.input_dim).map(|_| rng.normal()).collect())
        .collect();
    let coeffs = (0..frames)
        .map(|_| (0..dims.output_dim).map(|_| rng.symmetric(1.0)).collect())
        .collect();
    (xs, coeffs)
}
