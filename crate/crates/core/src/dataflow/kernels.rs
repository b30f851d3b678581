//! Stream tokens and the per-element work of each compute stage.

use super::graph::{StageKind, ValueKind, NUM_KINDS};
use crate::mesh::{ElementInput, NODES_PER_ELEM};
use crate::reference::{
    accumulate_lumped, accumulate_viscous, apply_viscous_and_fold, cartesian_derivatives, convective_partial,
    element_length, gauss_matrices, gauss_point_value, tau_point, AssemblyError, ConvectiveInputs, ConvectivePartial,
    ElementResult, GaussGeometry, GaussMatrices, GaussPointValues, Geometry, NodalVec, PhysParams, Quadrature,
};
use crate::scalar::Real;

/// What the distributor hands to an engine for one element.
#[derive(Clone, Debug)]
pub enum EngineInput<T> {
    /// Gathered element; the engine computes geometry itself.
    Plain(ElementInput<T>),
    /// Gathered element plus geometry computed on the host.
    WithGeometry(ElementInput<T>, Geometry<T>),
}

impl<T> EngineInput<T> {
    pub fn element(&self) -> &ElementInput<T> {
        match self {
            EngineInput::Plain(e) | EngineInput::WithGeometry(e, _) => e,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Token<T> {
    Input { seq: u64, input: Box<EngineInput<T>> },
    Elcod { elem_id: usize, elcod: NodalVec<T> },
    Elvel { seq: u64, elem_id: usize, elvel: NodalVec<T> },
    Geometry { geo: GaussGeometry<T>, det_j: T },
    Values(GaussPointValues<T>),
    Tau(T),
    Lumped { eldtrho: [T; NODES_PER_ELEM], elmurho: [T; NODES_PER_ELEM] },
    Matrices(GaussMatrices<T>),
    Partials(ConvectivePartial<T>),
    Visc([[T; NODES_PER_ELEM]; NODES_PER_ELEM]),
    Accum(ConvectivePartial<T>),
    Result { seq: u64, result: ElementResult<T> },
}

impl<T> Token<T> {
    pub fn kind(&self) -> ValueKind {
        match self {
            Token::Input { .. } => ValueKind::Input,
            Token::Elcod { .. } => ValueKind::Elcod,
            Token::Elvel { .. } => ValueKind::Elvel,
            Token::Geometry { .. } => ValueKind::Geometry,
            Token::Values(_) => ValueKind::Values,
            Token::Tau(_) => ValueKind::Tau,
            Token::Lumped { .. } => ValueKind::Lumped,
            Token::Matrices(_) => ValueKind::Matrices,
            Token::Partials(_) => ValueKind::Partials,
            Token::Visc(_) => ValueKind::Visc,
            Token::Accum(_) => ValueKind::Accum,
            Token::Result { .. } => ValueKind::Result,
        }
    }
}

/// Tokens of one element, grouped by kind.
pub(crate) struct Env<T> {
    slots: [Vec<Token<T>>; NUM_KINDS],
}

impl<T> Env<T> {
    pub fn new() -> Self {
        Env { slots: std::array::from_fn(|_| Vec::new()) }
    }

    pub fn get(&self, k: ValueKind) -> &[Token<T>] {
        &self.slots[k as usize]
    }

    pub fn push(&mut self, t: Token<T>) {
        self.slots[t.kind() as usize].push(t);
    }

    pub fn take(&mut self, k: ValueKind) -> Vec<Token<T>> {
        std::mem::take(&mut self.slots[k as usize])
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            s.clear();
        }
    }
}

macro_rules! expect_token {
    ($tok:expr, $pat:pat => $out:expr) => {
        match $tok {
            $pat => $out,
            other => unreachable!("unexpected token {:?}", other.kind()),
        }
    };
}

pub(crate) struct KernelParams<'a, T> {
    pub phys: &'a PhysParams<T>,
    pub quad: &'a Quadrature<T>,
}

/// Runs one element through a compute stage, adding its outputs to `env`.
pub(crate) fn compute<T: Real>(kind: StageKind, env: &mut Env<T>, kp: &KernelParams<'_, T>) -> Result<(), AssemblyError> {
    let (phys, quad) = (kp.phys, kp.quad);
    match kind {
        StageKind::Source => {
            let (seq, input) = expect_token!(env.take(ValueKind::Input).pop().expect("input token"),
                Token::Input { seq, input } => (seq, input));
            let push_elvel = |env: &mut Env<T>, e: &ElementInput<T>| {
                env.push(Token::Elvel { seq, elem_id: e.elem_id, elvel: e.elvel });
            };
            match *input {
                EngineInput::Plain(e) => {
                    env.push(Token::Elcod { elem_id: e.elem_id, elcod: e.elcod });
                    push_elvel(env, &e);
                }
                EngineInput::WithGeometry(e, geometry) => {
                    push_elvel(env, &e);
                    for geo in geometry.points {
                        env.push(Token::Geometry { geo, det_j: geometry.det_j });
                    }
                }
            }
        }
        StageKind::Cartesian => {
            let (elem_id, elcod) = expect_token!(&env.get(ValueKind::Elcod)[0], Token::Elcod { elem_id, elcod } => (*elem_id, *elcod));
            let geometry = cartesian_derivatives(&elcod, quad)
                .map_err(|d| AssemblyError::DegenerateElement { elem_id, det: d.det })?;
            for geo in geometry.points {
                env.push(Token::Geometry { geo, det_j: geometry.det_j });
            }
        }
        StageKind::GaussValues => {
            let elvel = expect_token!(&env.get(ValueKind::Elvel)[0], Token::Elvel { elvel, .. } => *elvel);
            let out: Vec<_> = env
                .get(ValueKind::Geometry)
                .iter()
                .zip(&quad.shape)
                .map(|(t, shape)| {
                    let geo = expect_token!(t, Token::Geometry { geo, .. } => geo);
                    Token::Values(gauss_point_value(&elvel, geo, shape, phys))
                })
                .collect();
            out.into_iter().for_each(|t| env.push(t));
        }
        StageKind::Tau => {
            let geos = env.get(ValueKind::Geometry);
            let det_j = expect_token!(&geos[0], Token::Geometry { det_j, .. } => *det_j);
            let h = element_length(det_j);
            let mut eldtrho = [T::zero(); NODES_PER_ELEM];
            let mut elmurho = [T::zero(); NODES_PER_ELEM];
            let mut taus = Vec::with_capacity(geos.len());
            for ((tg, tv), shape) in geos.iter().zip(env.get(ValueKind::Values)).zip(&quad.shape) {
                let geo = expect_token!(tg, Token::Geometry { geo, .. } => geo);
                let gv = expect_token!(tv, Token::Values(v) => v);
                taus.push(Token::Tau(tau_point(h, &gv.gpadv, phys)));
                accumulate_lumped(&mut eldtrho, &mut elmurho, geo.gpvol, shape, phys);
            }
            taus.into_iter().for_each(|t| env.push(t));
            env.push(Token::Lumped { eldtrho, elmurho });
        }
        StageKind::Matrices => {
            let out: Vec<_> = env
                .get(ValueKind::Geometry)
                .iter()
                .zip(env.get(ValueKind::Values))
                .map(|(tg, tv)| {
                    let geo = expect_token!(tg, Token::Geometry { geo, .. } => geo);
                    let gv = expect_token!(tv, Token::Values(v) => v);
                    Token::Matrices(gauss_matrices(geo, gv, phys))
                })
                .collect();
            out.into_iter().for_each(|t| env.push(t));
        }
        StageKind::Convective => {
            let mut out = Vec::with_capacity(quad.num_gauss());
            for g in 0..quad.num_gauss() {
                let geo = expect_token!(&env.get(ValueKind::Geometry)[g], Token::Geometry { geo, .. } => geo);
                let gv = expect_token!(&env.get(ValueKind::Values)[g], Token::Values(v) => v);
                let tau = expect_token!(&env.get(ValueKind::Tau)[g], Token::Tau(t) => *t);
                let mat = expect_token!(&env.get(ValueKind::Matrices)[g], Token::Matrices(m) => m);
                let inp = ConvectiveInputs { gpvol: geo.gpvol, tau, shape: &quad.shape[g], gv, mat };
                out.push(Token::Partials(convective_partial(&inp, phys)));
            }
            out.into_iter().for_each(|t| env.push(t));
        }
        StageKind::Viscous => {
            let mut visc = [[T::zero(); NODES_PER_ELEM]; NODES_PER_ELEM];
            for (tg, tm) in env.get(ValueKind::Geometry).iter().zip(env.get(ValueKind::Matrices)) {
                let geo = expect_token!(tg, Token::Geometry { geo, .. } => geo);
                let mat = expect_token!(tm, Token::Matrices(m) => m);
                accumulate_viscous(&mut visc, geo.gpvol, mat, phys);
            }
            env.push(Token::Visc(visc));
        }
        StageKind::Accumulate => {
            let mut acc = ConvectivePartial::zero();
            for t in env.take(ValueKind::Partials) {
                acc.add_assign(&expect_token!(t, Token::Partials(p) => p));
            }
            env.push(Token::Accum(acc));
        }
        StageKind::Fold => {
            let (seq, elem_id, elvel) =
                expect_token!(&env.get(ValueKind::Elvel)[0], Token::Elvel { seq, elem_id, elvel } => (*seq, *elem_id, *elvel));
            let (eldtrho, elmurho) =
                expect_token!(&env.get(ValueKind::Lumped)[0], Token::Lumped { eldtrho, elmurho } => (*eldtrho, *elmurho));
            let visc = expect_token!(&env.get(ValueKind::Visc)[0], Token::Visc(v) => *v);
            let mut acc = expect_token!(env.take(ValueKind::Accum).pop().expect("accum token"), Token::Accum(a) => a);
            apply_viscous_and_fold(&mut acc.elauu, &mut acc.elrbu, &visc, &elvel);
            env.push(Token::Result { seq, result: ElementResult { elem_id, elrbu: acc.elrbu, eldtrho, elmurho } });
        }
        StageKind::Distributor | StageKind::Replicate | StageKind::Collector => {
            unreachable!("{} is not a compute stage", kind.name())
        }
    }
    Ok(())
}
