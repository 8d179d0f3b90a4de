//! Two LSTMP towers over the same input (ASR tower `a`, language tower `l`)
//! coupled by inter-task recurrent links: selected gate pre-activations of
//! each tower receive `W · s'` where `s'` is the opposite tower's previous
//! recurrent (`r`) or non-recurrent (`p`) projection.

use std::fmt;

use crate::error::{Error, Result};
use crate::lstmp::{
    step_backward_into, step_forward_with, CellDims, CellState, Gate, GateVectors, LstmpParams,
    StepCache,
};
use crate::numkit::{Matrix, Rng, Vector};
use crate::params::{visit_prefixed, visit_prefixed_mut, Params};

/// Which projection of the opposite tower is fed back.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Info {
    Recurrent,
    NonRecurrent,
}

impl Info {
    pub const ALL: [Info; 2] = [Info::Recurrent, Info::NonRecurrent];

    pub fn letter(self) -> char {
        match self {
            Info::Recurrent => 'r',
            Info::NonRecurrent => 'p',
        }
    }

    fn source(self, state: &CellState) -> &Vector {
        match self {
            Info::Recurrent => &state.r,
            Info::NonRecurrent => &state.p,
        }
    }

    fn source_mut(self, state: &mut CellState) -> &mut Vector {
        match self {
            Info::Recurrent => &mut state.r,
            Info::NonRecurrent => &mut state.p,
        }
    }

    fn source_dim(self, dims: CellDims) -> usize {
        match self {
            Info::Recurrent => dims.rproj_dim,
            Info::NonRecurrent => dims.pproj_dim,
        }
    }
}

/// Feedback configuration, applied identically in both directions.
///
/// Written as `targets:info`, e.g. `g:r,p` feeds both projections into the
/// cell input nonlinearity and `ifo:r` feeds `r` into all three gates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct FeedbackConfig {
    info: Vec<Info>,
    targets: Vec<Gate>,
}

impl FeedbackConfig {
    pub fn new(info: &[Info], targets: &[Gate]) -> Result<Self> {
        let mut info = info.to_vec();
        info.sort();
        info.dedup();
        let mut targets = targets.to_vec();
        targets.sort();
        targets.dedup();
        if !targets.is_empty() && info.is_empty() {
            return Err(Error::config("feedback targets given without any feedback info"));
        }
        Ok(FeedbackConfig { info, targets })
    }

    /// No cross links: two independent towers.
    pub fn none() -> Self {
        FeedbackConfig::default()
    }

    pub fn full() -> Self {
        FeedbackConfig {
            info: Info::ALL.to_vec(),
            targets: Gate::ALL.to_vec(),
        }
    }

    pub fn info(&self) -> &[Info] {
        &self.info
    }

    pub fn targets(&self) -> &[Gate] {
        &self.targets
    }

    pub fn is_full(&self) -> bool {
        *self == FeedbackConfig::full()
    }

    /// `(gate, info)` pairs in link order.
    pub fn links(&self) -> impl Iterator<Item = (Gate, Info)> + '_ {
        self.targets
            .iter()
            .flat_map(move |&g| self.info.iter().map(move |&s| (g, s)))
    }

    /// Parse `targets:info`; info letters may be comma separated.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "none" {
            return Ok(FeedbackConfig::none());
        }
        let (t, s) = text
            .split_once(':')
            .ok_or_else(|| Error::config(format!("feedback config '{text}' is not targets:info")))?;
        let mut targets = Vec::new();
        for c in t.chars() {
            targets.push(Gate::from_letter(c).ok_or_else(|| {
                Error::config(format!("unknown feedback target '{c}' in '{text}' (use i, f, o, g)"))
            })?);
        }
        let mut info = Vec::new();
        for c in s.chars().filter(|&c| c != ',') {
            info.push(match c {
                'r' => Info::Recurrent,
                'p' => Info::NonRecurrent,
                _ => {
                    return Err(Error::config(format!(
                        "unknown feedback info '{c}' in '{text}' (use r, p)"
                    )))
                }
            });
        }
        if targets.is_empty() || info.is_empty() {
            return Err(Error::config(format!("feedback config '{text}' needs targets and info")));
        }
        FeedbackConfig::new(&info, &targets)
    }

    /// The twelve joint-training rows: targets {i}, {f}, {o}, {g}, {i,f,o},
    /// {i,f,o,g}, each with info {r} then {r,p}.
    pub fn sweep_grid() -> Vec<FeedbackConfig> {
        use Gate::*;
        let target_sets: [&[Gate]; 6] = [
            &[Input],
            &[Forget],
            &[Output],
            &[Cell],
            &[Input, Forget, Output],
            &[Input, Forget, Output, Cell],
        ];
        let info_sets: [&[Info]; 2] = [&[Info::Recurrent], &[Info::Recurrent, Info::NonRecurrent]];
        target_sets
            .iter()
            .flat_map(|t| info_sets.iter().map(move |s| FeedbackConfig::new(s, t).unwrap()))
            .collect()
    }
}

impl fmt::Display for FeedbackConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.targets.is_empty() {
            return f.write_str("none");
        }
        let t: String = self.targets.iter().map(|g| g.letter()).collect();
        let s: Vec<String> = self.info.iter().map(|i| i.letter().to_string()).collect();
        write!(f, "{t}:{}", s.join(","))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossLink {
    pub gate: Gate,
    pub info: Info,
    pub weight: Matrix,
}

/// Cross matrices for both directions, one per `(gate, info)` pair of the
/// configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossLinks {
    /// Into tower `a`, reading tower `l`'s previous projections.
    pub to_a: Vec<CrossLink>,
    /// Into tower `l`, reading tower `a`'s previous projections.
    pub to_l: Vec<CrossLink>,
}

impl CrossLinks {
    pub fn zeros(config: &FeedbackConfig, dims_a: CellDims, dims_l: CellDims) -> Self {
        let build = |dst: CellDims, src: CellDims| {
            config
                .links()
                .map(|(gate, info)| CrossLink {
                    gate,
                    info,
                    weight: Matrix::zeros(dst.cell_dim, info.source_dim(src)),
                })
                .collect()
        };
        CrossLinks {
            to_a: build(dims_a, dims_l),
            to_l: build(dims_l, dims_a),
        }
    }

    pub fn len(&self) -> usize {
        self.to_a.len() + self.to_l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, into_a: bool, gate: Gate, info: Info) -> Option<&Matrix> {
        let links = if into_a { &self.to_a } else { &self.to_l };
        links
            .iter()
            .find(|l| l.gate == gate && l.info == info)
            .map(|l| &l.weight)
    }
}

fn link_name(into_a: bool, link: &CrossLink) -> String {
    let dir = if into_a { "a<-l" } else { "l<-a" };
    format!("{dir}.{}.{}", link.gate.letter(), link.info.letter())
}

impl Params for CrossLinks {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (into_a, links) in [(true, &self.to_a), (false, &self.to_l)] {
            for link in links {
                f(&link_name(into_a, link), link.weight.data());
            }
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (into_a, links) in [(true, &mut self.to_a), (false, &mut self.to_l)] {
            for link in links.iter_mut() {
                let name = link_name(into_a, link);
                f(&name, link.weight.data_mut());
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiTaskParams {
    pub tower_a: LstmpParams,
    pub tower_l: LstmpParams,
    pub cross: CrossLinks,
    pub config: FeedbackConfig,
}

impl Params for MultiTaskParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[f64])) {
        visit_prefixed(&self.tower_a, "a", f);
        visit_prefixed(&self.tower_l, "l", f);
        visit_prefixed(&self.cross, "cross", f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        visit_prefixed_mut(&mut self.tower_a, "a", f);
        visit_prefixed_mut(&mut self.tower_l, "l", f);
        visit_prefixed_mut(&mut self.cross, "cross", f);
    }
}

impl MultiTaskParams {
    pub fn zeros(dims_a: CellDims, dims_l: CellDims, config: FeedbackConfig) -> Result<Self> {
        check_pair(dims_a, dims_l)?;
        Ok(MultiTaskParams {
            tower_a: LstmpParams::zeros(dims_a),
            tower_l: LstmpParams::zeros(dims_l),
            cross: CrossLinks::zeros(&config, dims_a, dims_l),
            config,
        })
    }

    /// Towers drawn as in [`LstmpParams::init`] (tower `a` first), then the
    /// cross matrices from the same uniform distribution.
    pub fn init(
        dims_a: CellDims,
        dims_l: CellDims,
        config: FeedbackConfig,
        rng: &mut Rng,
        scale: f64,
        forget_bias: f64,
    ) -> Result<Self> {
        check_pair(dims_a, dims_l)?;
        let tower_a = LstmpParams::init(dims_a, rng, scale, forget_bias)?;
        let tower_l = LstmpParams::init(dims_l, rng, scale, forget_bias)?;
        let mut cross = CrossLinks::zeros(&config, dims_a, dims_l);
        cross.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x = rng.symmetric(scale)));
        Ok(MultiTaskParams {
            tower_a,
            tower_l,
            cross,
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }
}

fn check_pair(dims_a: CellDims, dims_l: CellDims) -> Result<()> {
    dims_a.validate()?;
    dims_l.validate()?;
    if dims_a.input_dim != dims_l.input_dim {
        return Err(Error::dims(
            "multitask init",
            format!(
                "towers must share the input: a has {}, l has {}",
                dims_a.input_dim, dims_l.input_dim
            ),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    pub a: CellState,
    pub l: CellState,
}

impl JointState {
    pub fn zeros(params: &MultiTaskParams) -> Self {
        JointState {
            a: CellState::zeros(params.tower_a.dims()),
            l: CellState::zeros(params.tower_l.dims()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MtStepCache {
    pub a: StepCache,
    pub l: StepCache,
    pub prev: JointState,
}

#[derive(Clone, Debug)]
pub struct MtStepOutput {
    pub state: JointState,
    pub y_a: Vector,
    pub y_l: Vector,
    pub cache: MtStepCache,
}

/// Sum of cross terms for one destination tower, or `None` without links.
fn cross_inputs(links: &[CrossLink], src: &CellState, cell_dim: usize) -> Result<Option<GateVectors>> {
    if links.is_empty() {
        return Ok(None);
    }
    let mut extra = GateVectors::zeros(cell_dim);
    for link in links {
        let s = link.info.source(src);
        if link.weight.cols() != s.len() || link.weight.rows() != cell_dim {
            return Err(Error::dims(
                "mt_step_forward",
                format!(
                    "cross matrix {}{} is {:?}, source has {} entries",
                    link.gate.letter(),
                    link.info.letter(),
                    link.weight.shape(),
                    s.len()
                ),
            ));
        }
        link.weight.mul_vec_acc(s, &mut extra[link.gate]);
    }
    Ok(Some(extra))
}

/// One coupled frame. Each tower reads only the opposite tower's state from
/// the previous frame.
pub fn mt_step_forward(params: &MultiTaskParams, x: &[f64], prev: &JointState) -> Result<MtStepOutput> {
    let extra_a = cross_inputs(&params.cross.to_a, &prev.l, params.tower_a.dims().cell_dim)?;
    let extra_l = cross_inputs(&params.cross.to_l, &prev.a, params.tower_l.dims().cell_dim)?;
    let out_a = step_forward_with(&params.tower_a, x, &prev.a, extra_a.as_ref())?;
    let out_l = step_forward_with(&params.tower_l, x, &prev.l, extra_l.as_ref())?;
    Ok(MtStepOutput {
        state: JointState {
            a: out_a.state,
            l: out_l.state,
        },
        y_a: out_a.y,
        y_l: out_l.y,
        cache: MtStepCache {
            a: out_a.cache,
            l: out_l.cache,
            prev: prev.clone(),
        },
    })
}

#[derive(Clone, Debug)]
pub struct MtStepBackward {
    pub dx: Vector,
    pub dprev: JointState,
}

/// Reverse of [`mt_step_forward`]; parameter gradients are added into `grads`.
pub fn mt_step_backward_into(
    params: &MultiTaskParams,
    cache: &MtStepCache,
    dy_a: &[f64],
    dy_l: &[f64],
    dnext: &JointState,
    grads: &mut MultiTaskParams,
) -> Result<MtStepBackward> {
    if grads.cross.to_a.len() != params.cross.to_a.len()
        || grads.cross.to_l.len() != params.cross.to_l.len()
    {
        return Err(Error::dims("mt_step_backward", "gradient accumulator has other cross links"));
    }
    let back_a = step_backward_into(&params.tower_a, &cache.a, dy_a, &dnext.a, &mut grads.tower_a)?;
    let back_l = step_backward_into(&params.tower_l, &cache.l, dy_l, &dnext.l, &mut grads.tower_l)?;
    let mut dprev = JointState {
        a: back_a.dprev,
        l: back_l.dprev,
    };

    // into a: reads l's previous projections
    for (link, glink) in params.cross.to_a.iter().zip(grads.cross.to_a.iter_mut()) {
        let dz = &back_a.dpre[link.gate];
        glink.weight.add_outer(dz, link.info.source(&cache.prev.l));
        link.weight.tmul_vec_acc(dz, link.info.source_mut(&mut dprev.l));
    }
    for (link, glink) in params.cross.to_l.iter().zip(grads.cross.to_l.iter_mut()) {
        let dz = &back_l.dpre[link.gate];
        glink.weight.add_outer(dz, link.info.source(&cache.prev.a));
        link.weight.tmul_vec_acc(dz, link.info.source_mut(&mut dprev.a));
    }

    let dx = back_a.dx.iter().zip(&back_l.dx).map(|(a, b)| a + b).collect();
    Ok(MtStepBackward { dx, dprev })
}

/// Parameter gradients plus input/state gradients for one joint step.
#[derive(Clone, Debug)]
pub struct MtStepGrads {
    pub params: MultiTaskParams,
    pub dx: Vector,
    pub dprev: JointState,
}

pub fn mt_step_backward(
    params: &MultiTaskParams,
    cache: &MtStepCache,
    dy_a: &[f64],
    dy_l: &[f64],
    dnext: &JointState,
) -> Result<MtStepGrads> {
    let mut grads = params.zeros_like();
    let out = mt_step_backward_into(params, cache, dy_a, dy_l, dnext, &mut grads)?;
    Ok(MtStepGrads {
        params: grads,
        dx: out.dx,
        dprev: out.dprev,
    })
}

/// Single-tower parameter sets equivalent to the fully-coupled model
/// (`ifog:r,p`): each tower's input becomes `[x; r_other'; p_other']` and the
/// cross matrices move into the input weight blocks.
pub fn build_augmented_equivalent(params: &MultiTaskParams) -> Result<(LstmpParams, LstmpParams)> {
    if !params.config.is_full() {
        return Err(Error::config(format!(
            "input augmentation is only equivalent for feedback config ifog:r,p, not {}",
            params.config
        )));
    }
    let augment = |tower: &LstmpParams, into_a: bool| -> Result<LstmpParams> {
        let mut out = tower.clone();
        for gate in Gate::ALL {
            let cr = params.cross.get(into_a, gate, Info::Recurrent).expect("full config");
            let cp = params.cross.get(into_a, gate, Info::NonRecurrent).expect("full config");
            *out.input_weight_mut(gate) = Matrix::hcat(&[tower.input_weight(gate), cr, cp])?;
        }
        Ok(out)
    };
    Ok((augment(&params.tower_a, true)?, augment(&params.tower_l, false)?))
}

/// `[x; r; p]`, the input of an augmented tower.
pub fn augmented_input(x: &[f64], other: &CellState) -> Vector {
    let mut v = Vec::with_capacity(x.len() + other.r.len() + other.p.len());
    v.extend_from_slice(x);
    v.extend_from_slice(&other.r);
    v.extend_from_slice(&other.p);
    v
}
