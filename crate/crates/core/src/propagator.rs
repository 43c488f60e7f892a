//! Compiled generators for the stepping kernels.
//!
//! The joint operators are stored as fixed sparse patterns whose values are
//! linear in `g(t)`, `g*(t)` or `|g(t)|²`, so each stage only re-evaluates a
//! few coefficients. States are restricted to the subspace reachable from the
//! initial state under every generator, and when no unmonitored channel acts
//! on that subspace a pure state vector replaces the density matrix.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::hilbert::{
    annihilation_operator, atomic_transition, embed, min_hermitian_eigenvalue, AtomLevel,
    DensityMatrix, Operator, Subsystem, C64, ZERO,
};
use crate::model::ModelConfig;
use crate::pulse::CouplingSchedule;

/// Storage choice for conditioned states.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Representation {
    /// State vectors whenever the unraveling keeps states pure.
    #[default]
    Auto,
    /// Always density matrices.
    Density,
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(Representation::Auto),
            "density" => Ok(Representation::Density),
            other => Err(Error::config(format!(
                "unknown representation `{other}` (expected auto or density)"
            ))),
        }
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Representation::Auto => "auto",
            Representation::Density => "density",
        })
    }
}

/// Which generator a Runge–Kutta step integrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    /// Unconditional master equation.
    Full,
    /// Everything except the monitored jump term L₀ρL₀†.
    NoJump,
}

/// A state on the reduced support, row-major if mixed.
#[derive(Clone, Debug, PartialEq)]
pub enum StateRepr {
    Pure(Vec<C64>),
    Mixed(Vec<C64>),
}

#[derive(Clone, Debug, Default)]
struct SparseOp {
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_operator(op: &Operator) -> Self {
        let m = op.matrix();
        let n = op.dim();
        let mut entries = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let v = m[[r, c]];
                if v != ZERO {
                    entries.push((r, c, v));
                }
            }
        }
        Self { entries }
    }

    fn restrict(&self, map: &[Option<usize>]) -> Self {
        let entries = self
            .entries
            .iter()
            .filter_map(|&(r, c, v)| Some((map[r]?, map[c]?, v)))
            .collect();
        Self { entries }
    }
}

#[derive(Clone, Copy, Debug)]
enum Coef {
    Const(C64),
    Coupling(f64),
    ConjCoupling(f64),
    CouplingNormSq(f64),
}

impl Coef {
    fn eval(self, g: C64) -> C64 {
        match self {
            Coef::Const(c) => c,
            Coef::Coupling(k) => g * k,
            Coef::ConjCoupling(k) => g.conj() * k,
            Coef::CouplingNormSq(k) => C64::new(g.norm_sqr() * k, 0.0),
        }
    }
}

/// Sum of coefficient-weighted basis operators on a shared sparse pattern.
#[derive(Clone, Debug)]
struct Family {
    rows: Vec<usize>,
    cols: Vec<usize>,
    terms: Vec<(Coef, Vec<(usize, C64)>)>,
}

impl Family {
    fn build(terms: Vec<(Coef, SparseOp)>) -> Self {
        let mut slots: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (_, op) in &terms {
            for &(r, c, _) in &op.entries {
                slots.insert((r, c), 0);
            }
        }
        let mut rows = Vec::with_capacity(slots.len());
        let mut cols = Vec::with_capacity(slots.len());
        for (k, ((r, c), slot)) in slots.iter_mut().enumerate() {
            *slot = k;
            rows.push(*r);
            cols.push(*c);
        }
        let terms = terms
            .into_iter()
            .map(|(coef, op)| {
                let entries = op.entries.iter().map(|&(r, c, v)| (slots[&(r, c)], v)).collect();
                (coef, entries)
            })
            .collect();
        Self { rows, cols, terms }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn eval(&self, g: C64, out: &mut [C64]) {
        let out = &mut out[..self.rows.len()];
        out.fill(ZERO);
        for (coef, entries) in &self.terms {
            let k = coef.eval(g);
            if k == ZERO {
                continue;
            }
            for &(slot, v) in entries {
                out[slot] += k * v;
            }
        }
    }

    fn view<'a>(&'a self, vals: &'a [C64]) -> OpView<'a> {
        OpView {
            rows: &self.rows,
            cols: &self.cols,
            vals: &vals[..self.rows.len()],
        }
    }
}

#[derive(Clone, Copy)]
struct OpView<'a> {
    rows: &'a [usize],
    cols: &'a [usize],
    vals: &'a [C64],
}

impl<'a> OpView<'a> {
    fn entries(self) -> impl Iterator<Item = (usize, usize, C64)> + 'a {
        self.rows
            .iter()
            .zip(self.cols)
            .zip(self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    /// out = A x
    fn apply(self, x: &[C64], out: &mut [C64]) {
        out.fill(ZERO);
        for (r, c, v) in self.entries() {
            out[r] += v * x[c];
        }
    }

    /// out = A ρ
    fn left_mul(self, rho: &[C64], out: &mut [C64], d: usize) {
        out.fill(ZERO);
        for (r, c, v) in self.entries() {
            if v == ZERO {
                continue;
            }
            let src = &rho[c * d..(c + 1) * d];
            let dst = &mut out[r * d..(r + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += v * s;
            }
        }
    }

    /// out += w · A ρ A†
    fn sandwich_add(self, rho: &[C64], out: &mut [C64], d: usize, w: f64) {
        for (r, a, v) in self.entries() {
            if v == ZERO {
                continue;
            }
            let v = v * w;
            for (s, b, u) in self.entries() {
                out[r * d + s] += v * u.conj() * rho[a * d + b];
            }
        }
    }

    /// Tr(A ρ)
    fn trace_product(self, rho: &[C64], d: usize) -> C64 {
        self.entries().map(|(r, c, v)| v * rho[c * d + r]).sum()
    }
}

fn sparse_sandwich_add(op: &SparseOp, rho: &[C64], out: &mut [C64], d: usize) {
    for &(r, a, v) in &op.entries {
        for &(s, b, u) in &op.entries {
            out[r * d + s] += v * u.conj() * rho[a * d + b];
        }
    }
}

/// x ← x + x† in place.
fn add_own_dagger(x: &mut [C64], d: usize) {
    for i in 0..d {
        let ii = i * d + i;
        x[ii] = C64::new(2.0 * x[ii].re, 0.0);
        for j in i + 1..d {
            let a = x[i * d + j];
            let b = x[j * d + i];
            x[i * d + j] = a + b.conj();
            x[j * d + i] = b + a.conj();
        }
    }
}

/// x ← (x + x†)/2 in place.
pub(crate) fn symmetrize(x: &mut [C64], d: usize) {
    for i in 0..d {
        let ii = i * d + i;
        x[ii] = C64::new(x[ii].re, 0.0);
        for j in i + 1..d {
            let m = 0.5 * (x[i * d + j] + x[j * d + i].conj());
            x[i * d + j] = m;
            x[j * d + i] = m.conj();
        }
    }
}

/// Scratch buffers for one stepping thread.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
    vals: Vec<C64>,
}

impl Workspace {
    fn ensure(&mut self, len: usize, nvals: usize) {
        for b in [&mut self.k1, &mut self.k2, &mut self.k3, &mut self.k4, &mut self.tmp] {
            if b.len() < len {
                b.resize(len, ZERO);
            }
        }
        if self.vals.len() < nvals {
            self.vals.resize(nvals, ZERO);
        }
    }
}

/// Generators of one model compiled onto a reduced support.
#[derive(Debug)]
pub struct Propagator {
    full_dim: usize,
    support: Vec<usize>,
    schedule: Arc<CouplingSchedule>,
    generator: Family,
    jump: Family,
    rate: Family,
    extras: Vec<SparseOp>,
    photons: Vec<f64>,
    excited: Vec<f64>,
    max_vals: usize,
}

impl Propagator {
    /// Compiles `config` onto the support reachable from `initial`, or onto
    /// the full joint space when `initial` is `None`.
    pub fn compile(
        config: &ModelConfig,
        schedule: Arc<CouplingSchedule>,
        initial: Option<&Array1<C64>>,
    ) -> Result<Self> {
        let layout = &config.layout;
        let full_dim = layout.joint_dim();
        let a = embed(&annihilation_operator(layout.cavity_dim())?, Subsystem::Cavity, layout)?;
        let c = embed(
            &atomic_transition(AtomLevel::Excited, AtomLevel::One),
            Subsystem::Atom,
            layout,
        )?;
        let e = embed(
            &atomic_transition(AtomLevel::Excited, AtomLevel::Excited),
            Subsystem::Atom,
            layout,
        )?;
        let ad = a.dagger();
        let cd = c.dagger();
        let ops = [&a, &c, &e, &(&ad * &c), &(&a * &cd), &(&ad * &a), &(&cd * &c)];
        let [a, c, e, ad_c, a_cd, ad_a, cd_c] = ops.map(SparseOp::from_operator);

        let extra_ops: Vec<Operator> = if config.kappa > 0.0 {
            let l = embed(
                &atomic_transition(AtomLevel::Excited, AtomLevel::One),
                Subsystem::Atom,
                layout,
            )?
            .scaled(C64::new(config.kappa.sqrt(), 0.0));
            vec![l]
        } else {
            Vec::new()
        };

        let sg = config.gamma.sqrt();
        let half_sg = 0.5 * sg;
        // K = −iH − ½ L₀†L₀ − ½ Σ Lᵢ†Lᵢ
        let mut k_terms = vec![
            (Coef::Coupling(half_sg), ad_c.clone()),
            (Coef::ConjCoupling(-half_sg), a_cd.clone()),
            (Coef::Const(C64::new(0.0, -config.detuning)), e),
            (Coef::CouplingNormSq(-0.5), ad_a.clone()),
            (Coef::Coupling(-half_sg), ad_c.clone()),
            (Coef::ConjCoupling(-half_sg), a_cd.clone()),
            (Coef::Const(C64::new(-0.5 * config.gamma, 0.0)), cd_c.clone()),
        ];
        for l in &extra_ops {
            k_terms.push((
                Coef::Const(C64::new(-0.5, 0.0)),
                SparseOp::from_operator(&(&l.dagger() * l)),
            ));
        }
        let jump_terms = vec![
            (Coef::ConjCoupling(1.0), a),
            (Coef::Const(C64::new(sg, 0.0)), c),
        ];
        let rate_terms = vec![
            (Coef::CouplingNormSq(1.0), ad_a),
            (Coef::Coupling(sg), ad_c),
            (Coef::ConjCoupling(sg), a_cd),
            (Coef::Const(C64::new(config.gamma, 0.0)), cd_c),
        ];
        let extras: Vec<SparseOp> = extra_ops.iter().map(SparseOp::from_operator).collect();

        let support: Vec<usize> = match initial {
            None => (0..full_dim).collect(),
            Some(psi) => {
                if psi.len() != full_dim {
                    return Err(Error::Dimension(format!(
                        "initial amplitudes have length {}, expected {full_dim}",
                        psi.len()
                    )));
                }
                let mut adj = vec![Vec::new(); full_dim];
                let patterns = k_terms
                    .iter()
                    .chain(&jump_terms)
                    .map(|(_, op)| op)
                    .chain(&extras);
                for op in patterns {
                    for &(r, c, _) in &op.entries {
                        adj[c].push(r);
                    }
                }
                let mut seen = vec![false; full_dim];
                let mut queue: Vec<usize> =
                    (0..full_dim).filter(|&i| psi[i] != ZERO).collect();
                for &i in &queue {
                    seen[i] = true;
                }
                let mut head = 0;
                while head < queue.len() {
                    let i = queue[head];
                    head += 1;
                    for &j in &adj[i] {
                        if !seen[j] {
                            seen[j] = true;
                            queue.push(j);
                        }
                    }
                }
                (0..full_dim).filter(|&i| seen[i]).collect()
            }
        };
        if support.is_empty() {
            return Err(Error::NonPositiveTrace(0.0));
        }
        let mut map = vec![None; full_dim];
        for (k, &i) in support.iter().enumerate() {
            map[i] = Some(k);
        }
        let restrict = |terms: Vec<(Coef, SparseOp)>| {
            Family::build(terms.into_iter().map(|(k, op)| (k, op.restrict(&map))).collect())
        };
        let generator = restrict(k_terms);
        let jump = restrict(jump_terms);
        let rate = restrict(rate_terms);
        let extras: Vec<SparseOp> = extras
            .iter()
            .map(|op| op.restrict(&map))
            .filter(|op| !op.entries.is_empty())
            .collect();
        let (photons, excited) = support
            .iter()
            .map(|&i| {
                let (n, s) = layout.split(i);
                (n as f64, if s == AtomLevel::Excited.index() { 1.0 } else { 0.0 })
            })
            .unzip();
        let max_vals = generator.len().max(jump.len()).max(rate.len());
        Ok(Self {
            full_dim,
            support,
            schedule,
            generator,
            jump,
            rate,
            extras,
            photons,
            excited,
            max_vals,
        })
    }

    pub fn dim(&self) -> usize {
        self.support.len()
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    /// Joint-space indices kept by the reduction, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// True when no unmonitored channel acts on the support.
    pub fn pure_allowed(&self) -> bool {
        self.extras.is_empty()
    }

    pub fn schedule(&self) -> &CouplingSchedule {
        &self.schedule
    }

    pub fn workspace(&self) -> Workspace {
        let mut ws = Workspace::default();
        ws.ensure(self.dim() * self.dim(), self.max_vals);
        ws
    }

    /// Restricts full-space amplitudes to the support.
    pub fn pure_state(&self, psi: &Array1<C64>) -> Result<StateRepr> {
        if psi.len() != self.full_dim {
            return Err(Error::Dimension(format!(
                "amplitudes have length {}, expected {}",
                psi.len(),
                self.full_dim
            )));
        }
        let outside: f64 = (0..self.full_dim)
            .filter(|i| self.support.binary_search(i).is_err())
            .map(|i| psi[i].norm_sqr())
            .sum();
        if outside > 0.0 {
            return Err(Error::Dimension("state leaves the compiled support".into()));
        }
        Ok(StateRepr::Pure(self.support.iter().map(|&i| psi[i]).collect()))
    }

    pub fn mixed_state(&self, rho: &DensityMatrix) -> Result<StateRepr> {
        crate::hilbert::check_shape(self.full_dim, rho.matrix())?;
        let m = rho.matrix();
        let d = self.dim();
        let mut out = vec![ZERO; d * d];
        for (a, &i) in self.support.iter().enumerate() {
            for (b, &j) in self.support.iter().enumerate() {
                out[a * d + b] = m[[i, j]];
            }
        }
        let kept: f64 = self.support.iter().map(|&i| m[[i, i]].re).sum();
        if (kept - rho.trace()).abs() > 1e-12 * rho.trace().abs().max(1.0) {
            return Err(Error::Dimension("state leaves the compiled support".into()));
        }
        Ok(StateRepr::Mixed(out))
    }

    pub fn to_mixed(&self, state: &StateRepr) -> StateRepr {
        match state {
            StateRepr::Mixed(_) => state.clone(),
            StateRepr::Pure(psi) => {
                let d = psi.len();
                let mut out = vec![ZERO; d * d];
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = psi[i] * psi[j].conj();
                    }
                }
                StateRepr::Mixed(out)
            }
        }
    }

    /// Expands a reduced state to a joint-space density matrix.
    pub fn to_density(&self, state: &StateRepr) -> DensityMatrix {
        let n = self.full_dim;
        let d = self.dim();
        let mut m = Array2::zeros((n, n));
        match state {
            StateRepr::Pure(psi) => {
                for (a, &i) in self.support.iter().enumerate() {
                    for (b, &j) in self.support.iter().enumerate() {
                        m[[i, j]] = psi[a] * psi[b].conj();
                    }
                }
            }
            StateRepr::Mixed(rho) => {
                for (a, &i) in self.support.iter().enumerate() {
                    for (b, &j) in self.support.iter().enumerate() {
                        m[[i, j]] = rho[a * d + b];
                    }
                }
            }
        }
        DensityMatrix::from_matrix(m, false).expect("square")
    }

    fn rhs(
        &self,
        gen: Generator,
        t: f64,
        x: &[C64],
        out: &mut [C64],
        vals: &mut [C64],
        pure: bool,
    ) {
        let d = self.dim();
        let g = self.schedule.coupling(t);
        self.generator.eval(g, vals);
        let k = self.generator.view(vals);
        if pure {
            k.apply(x, out);
            return;
        }
        k.left_mul(x, out, d);
        add_own_dagger(out, d);
        for l in &self.extras {
            sparse_sandwich_add(l, x, out, d);
        }
        if gen == Generator::Full {
            self.jump.eval(g, vals);
            self.jump.view(vals).sandwich_add(x, out, d, 1.0);
        }
    }

    /// One classical RK4 step over [t, t + dt].
    pub fn rk4(
        &self,
        ws: &mut Workspace,
        state: &mut StateRepr,
        t: f64,
        dt: f64,
        gen: Generator,
    ) -> Result<()> {
        let d = self.dim();
        let (y, pure) = match state {
            StateRepr::Pure(v) => (v, true),
            StateRepr::Mixed(v) => (v, false),
        };
        if pure && gen == Generator::Full {
            return Err(Error::Dimension(
                "the unconditional master equation needs a density matrix".into(),
            ));
        }
        if pure && !self.pure_allowed() {
            return Err(Error::Dimension(
                "unmonitored channels act on this state; use a density matrix".into(),
            ));
        }
        let n = y.len();
        debug_assert_eq!(n, if pure { d } else { d * d });
        ws.ensure(d * d, self.max_vals);
        let Workspace {
            k1,
            k2,
            k3,
            k4,
            tmp,
            vals,
        } = ws;
        let (k1, k2, k3, k4, tmp) = (
            &mut k1[..n],
            &mut k2[..n],
            &mut k3[..n],
            &mut k4[..n],
            &mut tmp[..n],
        );
        let half = 0.5 * dt;
        self.rhs(gen, t, y, k1, vals, pure);
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * half;
        }
        self.rhs(gen, t + half, tmp, k2, vals, pure);
        for i in 0..n {
            tmp[i] = y[i] + k2[i] * half;
        }
        self.rhs(gen, t + half, tmp, k3, vals, pure);
        for i in 0..n {
            tmp[i] = y[i] + k3[i] * dt;
        }
        self.rhs(gen, t + dt, tmp, k4, vals, pure);
        let sixth = dt / 6.0;
        for i in 0..n {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * sixth;
        }
        if !pure {
            symmetrize(y, d);
        }
        Ok(())
    }

    /// ρ → L₀ρL₀† at time t (unnormalized).
    pub fn jump(&self, ws: &mut Workspace, state: &mut StateRepr, t: f64) {
        let d = self.dim();
        ws.ensure(d * d, self.max_vals);
        self.jump.eval(self.schedule.coupling(t), &mut ws.vals);
        let l = self.jump.view(&ws.vals);
        match state {
            StateRepr::Pure(psi) => {
                l.apply(psi, &mut ws.tmp[..d]);
                psi.copy_from_slice(&ws.tmp[..d]);
            }
            StateRepr::Mixed(rho) => {
                let out = &mut ws.tmp[..d * d];
                out.fill(ZERO);
                l.sandwich_add(rho, out, d, 1.0);
                symmetrize(out, d);
                rho.copy_from_slice(out);
            }
        }
    }

    /// ρ → MρM† with M = 1 + s L₀(t).
    pub fn measure(&self, ws: &mut Workspace, state: &mut StateRepr, t: f64, s: C64) {
        let d = self.dim();
        ws.ensure(d * d, self.max_vals);
        self.jump.eval(self.schedule.coupling(t), &mut ws.vals);
        let l = self.jump.view(&ws.vals);
        match state {
            StateRepr::Pure(psi) => {
                l.apply(psi, &mut ws.tmp[..d]);
                for (p, q) in psi.iter_mut().zip(&ws.tmp[..d]) {
                    *p += s * q;
                }
            }
            StateRepr::Mixed(rho) => {
                let y = &mut ws.tmp[..d * d];
                l.left_mul(rho, y, d);
                for v in y.iter_mut() {
                    *v *= s;
                }
                add_own_dagger(y, d);
                l.sandwich_add(rho, y, d, s.norm_sqr());
                for (r, v) in rho.iter_mut().zip(y.iter()) {
                    *r += v;
                }
                symmetrize(rho, d);
            }
        }
    }

    /// Tr(L₀†L₀ρ) at time t, not divided by the trace.
    pub fn rate(&self, ws: &mut Workspace, state: &StateRepr, t: f64) -> f64 {
        let d = self.dim();
        ws.ensure(d * d, self.max_vals);
        let g = self.schedule.coupling(t);
        match state {
            StateRepr::Pure(psi) => {
                self.jump.eval(g, &mut ws.vals);
                let out = &mut ws.tmp[..d];
                self.jump.view(&ws.vals).apply(psi, out);
                out.iter().map(|z| z.norm_sqr()).sum()
            }
            StateRepr::Mixed(rho) => {
                self.rate.eval(g, &mut ws.vals);
                self.rate.view(&ws.vals).trace_product(rho, d).re
            }
        }
    }

    /// Tr(L₀ρ) at time t, not divided by the trace.
    pub fn jump_mean(&self, ws: &mut Workspace, state: &StateRepr, t: f64) -> C64 {
        let d = self.dim();
        ws.ensure(d * d, self.max_vals);
        self.jump.eval(self.schedule.coupling(t), &mut ws.vals);
        let l = self.jump.view(&ws.vals);
        match state {
            StateRepr::Pure(psi) => l
                .entries()
                .map(|(r, c, v)| psi[r].conj() * v * psi[c])
                .sum(),
            StateRepr::Mixed(rho) => l.trace_product(rho, d),
        }
    }

    pub fn trace(&self, state: &StateRepr) -> f64 {
        match state {
            StateRepr::Pure(psi) => psi.iter().map(|z| z.norm_sqr()).sum(),
            StateRepr::Mixed(rho) => {
                let d = self.dim();
                (0..d).map(|i| rho[i * d + i].re).sum()
            }
        }
    }

    /// Multiplies the trace by `factor` (> 0).
    pub fn scale(&self, state: &mut StateRepr, factor: f64) {
        match state {
            StateRepr::Pure(psi) => {
                let s = factor.sqrt();
                psi.iter_mut().for_each(|z| *z *= s);
            }
            StateRepr::Mixed(rho) => rho.iter_mut().for_each(|z| *z *= factor),
        }
    }

    fn diagonal_mean(&self, state: &StateRepr, weights: &[f64]) -> f64 {
        let d = self.dim();
        let (num, tr) = match state {
            StateRepr::Pure(psi) => psi.iter().zip(weights).fold((0.0, 0.0), |(n, t), (z, w)| {
                let p = z.norm_sqr();
                (n + w * p, t + p)
            }),
            StateRepr::Mixed(rho) => (0..d).fold((0.0, 0.0), |(n, t), i| {
                let p = rho[i * d + i].re;
                (n + weights[i] * p, t + p)
            }),
        };
        num / tr
    }

    /// ⟨a†a⟩ on the normalized state.
    pub fn photons(&self, state: &StateRepr) -> f64 {
        self.diagonal_mean(state, &self.photons)
    }

    /// ⟨|e⟩⟨e|⟩ on the normalized state.
    pub fn excited(&self, state: &StateRepr) -> f64 {
        self.diagonal_mean(state, &self.excited)
    }

    /// max |ρ − ρ†| / Tr ρ; zero for state vectors.
    pub fn hermiticity(&self, state: &StateRepr) -> f64 {
        match state {
            StateRepr::Pure(_) => 0.0,
            StateRepr::Mixed(rho) => {
                let d = self.dim();
                let mut dev: f64 = 0.0;
                for i in 0..d {
                    for j in i..d {
                        dev = dev.max((rho[i * d + j] - rho[j * d + i].conj()).norm());
                    }
                }
                dev / self.trace(state).abs()
            }
        }
    }

    /// λ_min / Tr ρ. Rank-one states give 0 (or 1 on a one-dimensional support).
    pub fn min_eigen_ratio(&self, state: &StateRepr) -> f64 {
        match state {
            StateRepr::Pure(_) => {
                if self.dim() == 1 {
                    1.0
                } else {
                    0.0
                }
            }
            StateRepr::Mixed(rho) => {
                min_hermitian_eigenvalue(Some(rho), self.dim()) / self.trace(state)
            }
        }
    }
}
