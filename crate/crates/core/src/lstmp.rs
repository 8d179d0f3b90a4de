//! Projected LSTM (LSTMP) tower: gates with diagonal peepholes, a recurrent
//! projection `r` fed back to the next frame, and a non-recurrent projection
//! `p` that only feeds the output layer.
//!
//! ```text
//! i = σ(W_ix x + W_ir r' + w_ic ⊙ c' + b_i)
//! f = σ(W_fx x + W_fr r' + w_fc ⊙ c' + b_f)
//! c = f ⊙ c' + i ⊙ tanh(W_cx x + W_cr r' + b_c)
//! o = σ(W_ox x + W_or r' + w_oc ⊙ c + b_o)
//! m = o ⊙ tanh(c),  r = W_rm m,  p = W_pm m
//! y = W_yr r + W_yp p + b_y
//! ```
//!
//! Primed quantities are from the previous frame.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::numkit::{sigmoid, Matrix, Rng, Vector};
use crate::params::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellDims {
    pub input_dim: usize,
    pub cell_dim: usize,
    pub rproj_dim: usize,
    pub pproj_dim: usize,
    pub output_dim: usize,
}

impl CellDims {
    pub fn validate(&self) -> Result<()> {
        let d = self;
        if [d.input_dim, d.cell_dim, d.rproj_dim, d.pproj_dim, d.output_dim].contains(&0) {
            return Err(Error::config(format!("all cell dimensions must be >= 1, got {d:?}")));
        }
        Ok(())
    }
}

/// The four gate pre-activation slots, in the order i, f, o, g.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    pub fn letter(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Cell => 'g',
        }
    }

    pub fn from_letter(c: char) -> Option<Gate> {
        Gate::ALL.into_iter().find(|g| g.letter() == c)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// One vector per gate, used both for additive pre-activation inputs and for
/// pre-activation gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GateVectors(pub [Vector; 4]);

impl GateVectors {
    pub fn zeros(n: usize) -> Self {
        GateVectors(std::array::from_fn(|_| vec![0.0; n]))
    }
}

impl Index<Gate> for GateVectors {
    type Output = Vector;

    fn index(&self, g: Gate) -> &Vector {
        &self.0[g.index()]
    }
}

impl IndexMut<Gate> for GateVectors {
    fn index_mut(&mut self, g: Gate) -> &mut Vector {
        &mut self.0[g.index()]
    }
}

/// Weights of one tower. Peepholes are vectors: the cell-to-gate links are
/// diagonal by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmpParams {
    pub w_ix: Matrix,
    pub w_fx: Matrix,
    pub w_cx: Matrix,
    pub w_ox: Matrix,
    pub w_ir: Matrix,
    pub w_fr: Matrix,
    pub w_cr: Matrix,
    pub w_or: Matrix,
    pub w_ic: Vector,
    pub w_fc: Vector,
    pub w_oc: Vector,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
    pub w_rm: Matrix,
    pub w_pm: Matrix,
    pub w_yr: Matrix,
    pub w_yp: Matrix,
    pub b_y: Vector,
}

impl LstmpParams {
    pub fn zeros(dims: CellDims) -> Self {
        let CellDims {
            input_dim: nx,
            cell_dim: nc,
            rproj_dim: nr,
            pproj_dim: np,
            output_dim: ny,
        } = dims;
        LstmpParams {
            w_ix: Matrix::zeros(nc, nx),
            w_fx: Matrix::zeros(nc, nx),
            w_cx: Matrix::zeros(nc, nx),
            w_ox: Matrix::zeros(nc, nx),
            w_ir: Matrix::zeros(nc, nr),
            w_fr: Matrix::zeros(nc, nr),
            w_cr: Matrix::zeros(nc, nr),
            w_or: Matrix::zeros(nc, nr),
            w_ic: vec![0.0; nc],
            w_fc: vec![0.0; nc],
            w_oc: vec![0.0; nc],
            b_i: vec![0.0; nc],
            b_f: vec![0.0; nc],
            b_c: vec![0.0; nc],
            b_o: vec![0.0; nc],
            w_rm: Matrix::zeros(nr, nc),
            w_pm: Matrix::zeros(np, nc),
            w_yr: Matrix::zeros(ny, nr),
            w_yp: Matrix::zeros(ny, np),
            b_y: vec![0.0; ny],
        }
    }

    /// Uniform draws on `[-scale, scale)` for every entry in block order,
    /// then `b_f` overwritten with `forget_bias`.
    pub fn init(dims: CellDims, rng: &mut Rng, scale: f64, forget_bias: f64) -> Result<Self> {
        dims.validate()?;
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::config(format!("init scale must be finite and >= 0, got {scale}")));
        }
        let mut p = LstmpParams::zeros(dims);
        p.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x = rng.symmetric(scale)));
        p.b_f.iter_mut().for_each(|b| *b = forget_bias);
        Ok(p)
    }

    pub fn dims(&self) -> CellDims {
        CellDims {
            input_dim: self.w_ix.cols(),
            cell_dim: self.w_ix.rows(),
            rproj_dim: self.w_rm.rows(),
            pproj_dim: self.w_pm.rows(),
            output_dim: self.b_y.len(),
        }
    }

    pub(crate) fn input_weight(&self, g: Gate) -> &Matrix {
        match g {
            Gate::Input => &self.w_ix,
            Gate::Forget => &self.w_fx,
            Gate::Output => &self.w_ox,
            Gate::Cell => &self.w_cx,
        }
    }

    pub(crate) fn input_weight_mut(&mut self, g: Gate) -> &mut Matrix {
        match g {
            Gate::Input => &mut self.w_ix,
            Gate::Forget => &mut self.w_fx,
            Gate::Output => &mut self.w_ox,
            Gate::Cell => &mut self.w_cx,
        }
    }
}

impl Params for LstmpParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("W_ix", self.w_ix.data());
        f("W_fx", self.w_fx.data());
        f("W_cx", self.w_cx.data());
        f("W_ox", self.w_ox.data());
        f("W_ir", self.w_ir.data());
        f("W_fr", self.w_fr.data());
        f("W_cr", self.w_cr.data());
        f("W_or", self.w_or.data());
        f("w_ic", &self.w_ic);
        f("w_fc", &self.w_fc);
        f("w_oc", &self.w_oc);
        f("b_i", &self.b_i);
        f("b_f", &self.b_f);
        f("b_c", &self.b_c);
        f("b_o", &self.b_o);
        f("W_rm", self.w_rm.data());
        f("W_pm", self.w_pm.data());
        f("W_yr", self.w_yr.data());
        f("W_yp", self.w_yp.data());
        f("b_y", &self.b_y);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("W_ix", self.w_ix.data_mut());
        f("W_fx", self.w_fx.data_mut());
        f("W_cx", self.w_cx.data_mut());
        f("W_ox", self.w_ox.data_mut());
        f("W_ir", self.w_ir.data_mut());
        f("W_fr", self.w_fr.data_mut());
        f("W_cr", self.w_cr.data_mut());
        f("W_or", self.w_or.data_mut());
        f("w_ic", &mut self.w_ic);
        f("w_fc", &mut self.w_fc);
        f("w_oc", &mut self.w_oc);
        f("b_i", &mut self.b_i);
        f("b_f", &mut self.b_f);
        f("b_c", &mut self.b_c);
        f("b_o", &mut self.b_o);
        f("W_rm", self.w_rm.data_mut());
        f("W_pm", self.w_pm.data_mut());
        f("W_yr", self.w_yr.data_mut());
        f("W_yp", self.w_yp.data_mut());
        f("b_y", &mut self.b_y);
    }
}

/// Recurrent state carried between frames. The same shape holds state
/// gradients during the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub c: Vector,
    pub r: Vector,
    pub p: Vector,
}

impl CellState {
    pub fn zeros(dims: CellDims) -> Self {
        CellState {
            c: vec![0.0; dims.cell_dim],
            r: vec![0.0; dims.rproj_dim],
            p: vec![0.0; dims.pproj_dim],
        }
    }

    fn check(&self, dims: CellDims, op: &'static str, what: &str) -> Result<()> {
        if self.c.len() != dims.cell_dim
            || self.r.len() != dims.rproj_dim
            || self.p.len() != dims.pproj_dim
        {
            return Err(Error::dims(
                op,
                format!(
                    "{what} has (c, r, p) lengths ({}, {}, {}), cell expects ({}, {}, {})",
                    self.c.len(),
                    self.r.len(),
                    self.p.len(),
                    dims.cell_dim,
                    dims.rproj_dim,
                    dims.pproj_dim
                ),
            ));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Vector,
    pub r_prev: Vector,
    pub c_prev: Vector,
    pub i: Vector,
    pub f: Vector,
    pub g_pre: Vector,
    pub g: Vector,
    pub c: Vector,
    pub o: Vector,
    pub tanh_c: Vector,
    pub m: Vector,
    pub r: Vector,
    pub p: Vector,
}

#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: CellState,
    pub y: Vector,
    pub cache: StepCache,
}

pub fn step_forward(params: &LstmpParams, x: &[f64], prev: &CellState) -> Result<StepOutput> {
    step_forward_with(params, x, prev, None)
}

/// Forward step with optional extra terms added to the gate pre-activations
/// (used by the coupled two-tower cell).
pub fn step_forward_with(
    params: &LstmpParams,
    x: &[f64],
    prev: &CellState,
    extra: Option<&GateVectors>,
) -> Result<StepOutput> {
    let dims = params.dims();
    if x.len() != dims.input_dim {
        return Err(Error::dims(
            "step_forward",
            format!("input has {} entries, cell expects {}", x.len(), dims.input_dim),
        ));
    }
    prev.check(dims, "step_forward", "previous state")?;
    if let Some(e) = extra {
        if e.0.iter().any(|v| v.len() != dims.cell_dim) {
            return Err(Error::dims("step_forward", "gate inputs must have cell_dim entries"));
        }
    }
    let nc = dims.cell_dim;

    let pre = |g: Gate, w_r: &Matrix, bias: &[f64]| -> Vector {
        let mut z = bias.to_vec();
        params.input_weight(g).mul_vec_acc(x, &mut z);
        w_r.mul_vec_acc(&prev.r, &mut z);
        if let Some(e) = extra {
            for (zk, ek) in z.iter_mut().zip(&e[g]) {
                *zk += ek;
            }
        }
        z
    };

    let mut zi = pre(Gate::Input, &params.w_ir, &params.b_i);
    let mut zf = pre(Gate::Forget, &params.w_fr, &params.b_f);
    let g_pre = pre(Gate::Cell, &params.w_cr, &params.b_c);
    let mut zo = pre(Gate::Output, &params.w_or, &params.b_o);

    for k in 0..nc {
        zi[k] += params.w_ic[k] * prev.c[k];
        zf[k] += params.w_fc[k] * prev.c[k];
    }
    let i: Vector = zi.iter().map(|&z| sigmoid(z)).collect();
    let f: Vector = zf.iter().map(|&z| sigmoid(z)).collect();
    let g: Vector = g_pre.iter().map(|z| z.tanh()).collect();
    let c: Vector = (0..nc).map(|k| f[k] * prev.c[k] + i[k] * g[k]).collect();
    for k in 0..nc {
        zo[k] += params.w_oc[k] * c[k];
    }
    let o: Vector = zo.iter().map(|&z| sigmoid(z)).collect();
    let tanh_c: Vector = c.iter().map(|z| z.tanh()).collect();
    let m: Vector = (0..nc).map(|k| o[k] * tanh_c[k]).collect();

    let mut r = vec![0.0; dims.rproj_dim];
    params.w_rm.mul_vec_acc(&m, &mut r);
    let mut p = vec![0.0; dims.pproj_dim];
    params.w_pm.mul_vec_acc(&m, &mut p);
    let mut y = params.b_y.clone();
    params.w_yr.mul_vec_acc(&r, &mut y);
    params.w_yp.mul_vec_acc(&p, &mut y);

    Ok(StepOutput {
        state: CellState {
            c: c.clone(),
            r: r.clone(),
            p: p.clone(),
        },
        y,
        cache: StepCache {
            x: x.to_vec(),
            r_prev: prev.r.clone(),
            c_prev: prev.c.clone(),
            i,
            f,
            g_pre,
            g,
            c,
            o,
            tanh_c,
            m,
            r,
            p,
        },
    })
}

/// Gradients flowing out of one backward step.
#[derive(Clone, Debug)]
pub struct StepBackward {
    pub dx: Vector,
    /// Gradient w.r.t. the previous state. `p` is not recurrent inside a
    /// tower, so `dprev.p` is zero unless a caller adds cross-tower terms.
    pub dprev: CellState,
    /// Gradient w.r.t. each gate pre-activation.
    pub dpre: GateVectors,
}

/// Reverse-mode step. `dnext` holds the loss gradient w.r.t. the state this
/// step produced; parameter gradients are added into `grads`.
pub fn step_backward_into(
    params: &LstmpParams,
    cache: &StepCache,
    dy: &[f64],
    dnext: &CellState,
    grads: &mut LstmpParams,
) -> Result<StepBackward> {
    let dims = params.dims();
    if dy.len() != dims.output_dim {
        return Err(Error::dims(
            "step_backward",
            format!("dy has {} entries, output is {}", dy.len(), dims.output_dim),
        ));
    }
    dnext.check(dims, "step_backward", "next-state gradient")?;
    if grads.dims() != dims {
        return Err(Error::dims("step_backward", "gradient accumulator shape differs from params"));
    }
    if cache.x.len() != dims.input_dim || cache.c.len() != dims.cell_dim {
        return Err(Error::dims("step_backward", "cache was not produced by these params"));
    }
    let nc = dims.cell_dim;
    let s = cache;

    // output layer
    for (b, d) in grads.b_y.iter_mut().zip(dy) {
        *b += d;
    }
    grads.w_yr.add_outer(dy, &s.r);
    grads.w_yp.add_outer(dy, &s.p);
    let mut dr = dnext.r.clone();
    params.w_yr.tmul_vec_acc(dy, &mut dr);
    let mut dp = dnext.p.clone();
    params.w_yp.tmul_vec_acc(dy, &mut dp);

    // projections
    grads.w_rm.add_outer(&dr, &s.m);
    grads.w_pm.add_outer(&dp, &s.m);
    let mut dm = vec![0.0; nc];
    params.w_rm.tmul_vec_acc(&dr, &mut dm);
    params.w_pm.tmul_vec_acc(&dp, &mut dm);

    let mut dpre = GateVectors::zeros(nc);
    let mut dc = dnext.c.clone();
    let mut dc_prev = vec![0.0; nc];
    for k in 0..nc {
        let dzo = dm[k] * s.tanh_c[k] * s.o[k] * (1.0 - s.o[k]);
        dpre[Gate::Output][k] = dzo;
        dc[k] += dm[k] * s.o[k] * (1.0 - s.tanh_c[k] * s.tanh_c[k]) + dzo * params.w_oc[k];
        grads.w_oc[k] += dzo * s.c[k];

        let dzi = dc[k] * s.g[k] * s.i[k] * (1.0 - s.i[k]);
        let dzg = dc[k] * s.i[k] * (1.0 - s.g[k] * s.g[k]);
        let dzf = dc[k] * s.c_prev[k] * s.f[k] * (1.0 - s.f[k]);
        dpre[Gate::Input][k] = dzi;
        dpre[Gate::Cell][k] = dzg;
        dpre[Gate::Forget][k] = dzf;

        grads.w_ic[k] += dzi * s.c_prev[k];
        grads.w_fc[k] += dzf * s.c_prev[k];
        dc_prev[k] = dc[k] * s.f[k] + dzi * params.w_ic[k] + dzf * params.w_fc[k];
    }

    let mut dx = vec![0.0; dims.input_dim];
    let mut dr_prev = vec![0.0; dims.rproj_dim];
    for gate in Gate::ALL {
        let dz = &dpre[gate];
        let (w_r, g_r, b) = match gate {
            Gate::Input => (&params.w_ir, &mut grads.w_ir, &mut grads.b_i),
            Gate::Forget => (&params.w_fr, &mut grads.w_fr, &mut grads.b_f),
            Gate::Output => (&params.w_or, &mut grads.w_or, &mut grads.b_o),
            Gate::Cell => (&params.w_cr, &mut grads.w_cr, &mut grads.b_c),
        };
        g_r.add_outer(dz, &s.r_prev);
        for (bk, d) in b.iter_mut().zip(dz) {
            *bk += d;
        }
        w_r.tmul_vec_acc(dz, &mut dr_prev);
        params.input_weight(gate).tmul_vec_acc(dz, &mut dx);
        grads.input_weight_mut(gate).add_outer(dz, &s.x);
    }

    Ok(StepBackward {
        dx,
        dprev: CellState {
            c: dc_prev,
            r: dr_prev,
            p: vec![0.0; dims.pproj_dim],
        },
        dpre,
    })
}

/// Parameter gradients plus input/state gradients for one step.
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub params: LstmpParams,
    pub dx: Vector,
    pub dprev: CellState,
}

pub fn step_backward(
    params: &LstmpParams,
    cache: &StepCache,
    dy: &[f64],
    dnext: &CellState,
) -> Result<StepGrads> {
    let mut grads = LstmpParams::zeros(params.dims());
    let out = step_backward_into(params, cache, dy, dnext, &mut grads)?;
    Ok(StepGrads {
        params: grads,
        dx: out.dx,
        dprev: out.dprev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::central_diff;

    fn dims(nx: usize, nc: usize, nr: usize, np: usize, ny: usize) -> CellDims {
        CellDims {
            input_dim: nx,
            cell_dim: nc,
            rproj_dim: nr,
            pproj_dim: np,
            output_dim: ny,
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn init_zero_scale_keeps_forget_bias() {
        let p = LstmpParams::init(dims(3, 2, 2, 1, 2), &mut Rng::new(1), 0.0, 1.0).unwrap();
        p.visit(&mut |name, d| {
            let want = if name == "b_f" { 1.0 } else { 0.0 };
            assert!(d.iter().all(|&x| x == want), "{name}");
        });
    }

    #[test]
    fn init_is_deterministic_and_in_range() {
        let d = dims(3, 2, 2, 2, 3);
        let a = LstmpParams::init(d, &mut Rng::new(42), 0.1, 1.0).unwrap();
        let b = LstmpParams::init(d, &mut Rng::new(42), 0.1, 1.0).unwrap();
        assert_eq!(a, b);
        let mut n = 0;
        a.visit(&mut |name, v| {
            if name != "b_f" {
                n += v.len();
                assert!(v.iter().all(|x| (-0.1..=0.1).contains(x)), "{name}");
            }
        });
        assert_eq!(n, a.num_params() - 2);
        assert!(LstmpParams::init(d, &mut Rng::new(1), -1.0, 1.0).is_err());
        assert!(LstmpParams::init(dims(0, 2, 2, 2, 2), &mut Rng::new(1), 0.1, 1.0).is_err());
    }

    #[test]
    fn zero_params_give_half_gates() {
        let d = dims(3, 4, 2, 2, 3);
        let p = LstmpParams::zeros(d);
        let out = step_forward(&p, &[1.0, -2.0, 0.5], &CellState::zeros(d)).unwrap();
        let s = &out.cache;
        assert!(s.i.iter().chain(&s.f).chain(&s.o).all(|&g| g == 0.5));
        assert!(s.c.iter().chain(&s.m).chain(&s.r).chain(&s.p).all(|&v| v == 0.0));
        assert!(out.y.iter().all(|&v| v == 0.0));

        let mut p = LstmpParams::zeros(dims(1, 1, 1, 1, 1));
        p.b_y = vec![7.0];
        let out = step_forward(&p, &[3.0], &CellState::zeros(p.dims())).unwrap();
        assert_eq!(out.y, vec![7.0]);
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        let mut p = LstmpParams::zeros(dims(1, 1, 1, 1, 1));
        p.w_cx.set(0, 0, 1.0);
        p.w_rm.set(0, 0, 1.0);
        p.w_pm.set(0, 0, 1.0);
        let out = step_forward(&p, &[1.0], &CellState::zeros(p.dims())).unwrap();
        // scalar oracle
        let (i, f, o) = (0.5, 0.5, 0.5);
        let g = 1f64.tanh();
        let c = f * 0.0 + i * g;
        let m = o * c.tanh();
        assert_eq!(out.cache.i[0], i);
        assert_eq!(out.cache.f[0], f);
        assert_eq!(out.cache.o[0], o);
        assert!((out.cache.g[0] - g).abs() < 1e-15);
        assert!((out.cache.c[0] - c).abs() < 1e-15);
        assert!((out.cache.m[0] - m).abs() < 1e-15);
        assert!((out.state.r[0] - m).abs() < 1e-15);
        assert!((out.state.p[0] - m).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let d = dims(3, 2, 2, 1, 2);
        let p = LstmpParams::zeros(d);
        assert!(step_forward(&p, &[1.0], &CellState::zeros(d)).is_err());
        let mut bad = CellState::zeros(d);
        bad.r.push(0.0);
        assert!(step_forward(&p, &[1.0, 2.0, 3.0], &bad).is_err());
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let d = dims(3, 4, 3, 2, 2);
        let p = LstmpParams::init(d, &mut Rng::new(3), 0.5, 1.0).unwrap();
        let mut rng = Rng::new(4);
        let prev = CellState {
            c: (0..4).map(|_| rng.normal()).collect(),
            r: (0..3).map(|_| rng.normal()).collect(),
            p: (0..2).map(|_| rng.normal()).collect(),
        };
        let out = step_forward(&p, &[0.3, -0.1, 0.8], &prev).unwrap();
        let g = step_backward(&p, &out.cache, &[0.0, 0.0], &CellState::zeros(d)).unwrap();
        assert_eq!(g.params.sq_norm(), 0.0);
        assert!(g.dx.iter().chain(&g.dprev.c).chain(&g.dprev.r).all(|&v| v == 0.0));
    }

    #[test]
    fn bias_only_gradient() {
        let d = dims(2, 3, 2, 2, 3);
        let mut p = LstmpParams::zeros(d);
        p.b_y = vec![0.3, -0.2, 0.1];
        let out = step_forward(&p, &[1.0, 1.0], &CellState::zeros(d)).unwrap();
        let g = step_backward(&p, &out.cache, &[1.0, 0.0, 0.0], &CellState::zeros(d)).unwrap();
        assert_eq!(g.params.b_y, vec![1.0, 0.0, 0.0]);
        g.params.visit(&mut |name, v| {
            if name != "b_y" {
                assert!(v.iter().all(|&x| x == 0.0), "{name}");
            }
        });
    }

    #[test]
    fn one_step_gradients_match_central_differences() {
        let d = dims(3, 4, 3, 2, 2);
        let params = LstmpParams::init(d, &mut Rng::new(11), 0.6, 1.0).unwrap();
        let mut rng = Rng::new(12);
        let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let prev = CellState {
            c: (0..4).map(|_| rng.normal()).collect(),
            r: (0..3).map(|_| rng.normal()).collect(),
            p: vec![0.0; 2],
        };
        let out = step_forward(&params, &x, &prev).unwrap();
        let g = step_backward(&params, &out.cache, &[1.0, 1.0], &CellState::zeros(d)).unwrap();

        let theta = params.to_flat();
        let analytic = g.params.to_flat();
        let mut scratch = params.clone();
        let mut loss = |t: &[f64]| {
            scratch.load_flat(t);
            step_forward(&scratch, &x, &prev).unwrap().y.iter().sum::<f64>()
        };
        for k in 0..theta.len() {
            let num = central_diff(&mut loss, &theta, k, 1e-5).unwrap();
            assert!(rel_err(analytic[k], num) < 1e-6, "param {k}: {} vs {num}", analytic[k]);
        }

        // input and previous-state gradients
        let loss_x = |t: &[f64]| step_forward(&params, t, &prev).unwrap().y.iter().sum::<f64>();
        for k in 0..3 {
            let num = central_diff(loss_x, &x, k, 1e-5).unwrap();
            assert!(rel_err(g.dx[k], num) < 1e-6);
        }
        for k in 0..4 {
            let loss_c = |t: &[f64]| {
                let s = CellState { c: t.to_vec(), ..prev.clone() };
                step_forward(&params, &x, &s).unwrap().y.iter().sum::<f64>()
            };
            let num = central_diff(loss_c, &prev.c, k, 1e-5).unwrap();
            assert!(rel_err(g.dprev.c[k], num) < 1e-6);
        }
    }

    #[test]
    fn peepholes_are_diagonal() {
        let d = dims(2, 4, 2, 2, 2);
        let p = LstmpParams::init(d, &mut Rng::new(5), 0.8, 1.0).unwrap();
        let x = [0.4, -0.7];
        let base = CellState {
            c: vec![0.1, -0.2, 0.3, 0.5],
            r: vec![0.2, 0.1],
            p: vec![0.0, 0.0],
        };
        let ref_out = step_forward(&p, &x, &base).unwrap().cache;
        for j in 0..4 {
            let mut s = base.clone();
            s.c[j] += 0.9;
            let out = step_forward(&p, &x, &s).unwrap().cache;
            for k in 0..4 {
                if k == j {
                    assert_ne!(out.i[k], ref_out.i[k]);
                } else {
                    assert_eq!(out.i[k], ref_out.i[k]);
                    assert_eq!(out.f[k], ref_out.f[k]);
                }
            }
        }
    }
}
