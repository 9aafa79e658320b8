//! Minimization engines: pure periodic phases on the unit cell, constrained
//! strip minimization of the renormalized energy, the minimal-minimizer
//! combination fixed point, period-doubled runs and a brute-force oracle for
//! tiny instances.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{CellSystem, EnergyError, Region, StripSystem};
use crate::lattice::{translate, Direction, Field, LatticeError, LatticeQuotient, UnitCellField};
use crate::model::{EnergyBreakdown, ModelSpec};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("pure-phase minimization did not converge within the iteration budget")]
    PhaseNonConvergence,
    #[error("pure phase strayed {delta_eta} from its well, beyond delta0 = {delta0}; the forcing amplitude is too large")]
    EtaTooLarge { delta_eta: f64, delta0: f64 },
    #[error("no ensemble member converged")]
    EnsembleFailed,
    #[error("min/max combination increased the energy by {0}, beyond tolerance")]
    CombinationViolation(f64),
    #[error("brute-force instance too large: {0}")]
    InstanceTooLarge(String),
    #[error("admissible class does not match the system lattice")]
    ClassMismatch,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Options shared by all descent-based solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Stationarity: projected-gradient sup-norm tolerance.
    pub grad_tol: f64,
    /// Tighter tolerance for the unit-cell phases everything else builds on.
    pub phase_grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub bb_min: f64,
    pub bb_max: f64,
    /// Number of random admissible initializations in the ensemble.
    pub ensemble_size: usize,
    pub seed: u64,
    /// Fixed-point tolerance of the min-combination loop (sup-norm).
    pub combine_tol: f64,
    pub combine_rounds: usize,
    pub backtrack_max: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            phase_grad_tol: 1e-10,
            max_iters: 6000,
            armijo_c1: 1e-4,
            bb_min: 1e-12,
            bb_max: 1e12,
            ensemble_size: 8,
            seed: 42,
            combine_tol: 1e-9,
            combine_rounds: 4,
            backtrack_max: 60,
        }
    }
}

/// Band-plus-box constraints of the admissible class on a given lattice.
#[derive(Debug, Clone)]
pub struct AdmissibleClass {
    lattice: Arc<LatticeQuotient>,
    pub delta0: f64,
    lo: Vec<f64>,
    hi: Vec<f64>,
    banded_low: Vec<bool>,
    banded_high: Vec<bool>,
}

/// Nodes sitting exactly on a constraint after projection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActiveConstraints {
    pub lower_band: usize,
    pub upper_band: usize,
    pub box_low: usize,
    pub box_high: usize,
}

impl AdmissibleClass {
    pub fn new(lattice: Arc<LatticeQuotient>, delta0: f64) -> Self {
        let (a, b) = lattice.strip();
        let count = lattice.node_count();
        let mut lo = vec![-1.0 - delta0; count];
        let mut hi = vec![1.0 + delta0; count];
        let mut banded_low = vec![false; count];
        let mut banded_high = vec![false; count];
        for i in 0..count {
            let level = lattice.node_level(i);
            if level <= a + 1e-12 {
                lo[i] = 1.0 - delta0;
                banded_low[i] = true;
            } else if level >= b - 1e-12 {
                hi[i] = -1.0 + delta0;
                banded_high[i] = true;
            }
        }
        Self {
            lattice,
            delta0,
            lo,
            hi,
            banded_low,
            banded_high,
        }
    }

    pub fn lattice(&self) -> &Arc<LatticeQuotient> {
        &self.lattice
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn project(&self, values: &mut [f64]) {
        for ((v, &l), &h) in values.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(l, h);
        }
    }

    pub fn contains(&self, values: &[f64], tol: f64) -> bool {
        values
            .iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .all(|((&v, &l), &h)| v >= l - tol && v <= h + tol)
    }

    pub fn active_counts(&self, values: &[f64]) -> ActiveConstraints {
        let mut out = ActiveConstraints::default();
        for (i, &v) in values.iter().enumerate() {
            if v == self.lo[i] {
                if self.banded_low[i] {
                    out.lower_band += 1;
                } else {
                    out.box_low += 1;
                }
            }
            if v == self.hi[i] {
                if self.banded_high[i] {
                    out.upper_band += 1;
                } else {
                    out.box_high += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct MinimizerResult {
    pub field: Field,
    pub f_omega: f64,
    pub breakdown: EnergyBreakdown,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub active: ActiveConstraints,
    pub converged: bool,
    /// Energy after every accepted step, starting from the initial point.
    pub trace: Vec<f64>,
}

struct DescentReport {
    f: f64,
    iterations: usize,
    pg_norm: f64,
    converged: bool,
    trace: Vec<f64>,
}

fn sup_pg(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..x.len() {
        let step = x[i] - (x[i] - g[i]).clamp(lo[i], hi[i]);
        s = s.max(step.abs());
    }
    s
}

/// Projected gradient descent with a Barzilai-Borwein step and monotone
/// backtracking. Mutates `x` in place.
fn projected_descent(
    x: &mut [f64],
    lo: &[f64],
    hi: &[f64],
    mut eval_f: impl FnMut(&[f64]) -> f64,
    mut eval_grad: impl FnMut(&[f64], &mut Vec<f64>),
    alpha0: f64,
    grad_tol: f64,
    opts: &SolverOptions,
) -> DescentReport {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
    let mut g = Vec::new();
    eval_grad(x, &mut g);
    let mut f = eval_f(x);
    let mut trace = vec![f];
    let mut pg = sup_pg(x, &g, lo, hi);
    if pg <= grad_tol {
        return DescentReport {
            f,
            iterations: 0,
            pg_norm: pg,
            converged: true,
            trace,
        };
    }
    let mut alpha = alpha0;
    let mut xt = vec![0.0; x.len()];
    let mut gt = Vec::new();
    for it in 1..=opts.max_iters {
        let mut a = alpha;
        let mut accepted = false;
        let mut ft = f;
        for _ in 0..opts.backtrack_max {
            let mut gap = 0.0;
            for i in 0..x.len() {
                xt[i] = (x[i] - a * g[i]).clamp(lo[i], hi[i]);
                gap += g[i] * (xt[i] - x[i]);
            }
            if gap == 0.0 {
                // projection arc degenerated; stationary up to roundoff
                let pg_now = sup_pg(x, &g, lo, hi);
                return DescentReport {
                    f,
                    iterations: it - 1,
                    pg_norm: pg_now,
                    converged: pg_now <= grad_tol,
                    trace,
                };
            }
            ft = eval_f(&xt);
            // acceptance needs headroom for roundoff once c1*gap shrinks
            // below the evaluation noise of f itself
            let noise = 1e-14 * (1.0 + f.abs());
            if ft <= f + opts.armijo_c1 * gap + noise {
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if !accepted {
            return DescentReport {
                f,
                iterations: it - 1,
                pg_norm: pg,
                converged: false,
                trace,
            };
        }
        eval_grad(&xt, &mut gt);
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..x.len() {
            let s = xt[i] - x[i];
            sy += s * (gt[i] - g[i]);
            ss += s * s;
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(opts.bb_min, opts.bb_max)
        } else {
            alpha0
        };
        x.copy_from_slice(&xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        trace.push(f);
        pg = sup_pg(x, &g, lo, hi);
        if pg <= grad_tol {
            return DescentReport {
                f,
                iterations: it,
                pg_norm: pg,
                converged: true,
                trace,
            };
        }
    }
    DescentReport {
        f,
        iterations: opts.max_iters,
        pg_norm: pg,
        converged: false,
        trace,
    }
}

/// The two periodic pure phases and their cell energies.
#[derive(Debug, Clone)]
pub struct PurePhases {
    pub u_plus: Arc<UnitCellField>,
    pub u_minus: Arc<UnitCellField>,
    /// `max(||u_+ - 1||_inf, ||u_- + 1||_inf)`.
    pub delta_eta: f64,
    pub energy_plus: EnergyBreakdown,
    pub energy_minus: EnergyBreakdown,
    pub iterations: (usize, usize),
}

/// Minimizes the periodic cell energy from both wells.
pub fn pure_phase_minimize(
    model: &ModelSpec,
    dim: usize,
    n: u32,
    opts: &SolverOptions,
) -> Result<PurePhases, SolverError> {
    let cell = CellSystem::new(model.clone(), dim, n)?;
    let count = cell.node_count();
    let bound = model.box_bound();
    let lo = vec![-bound; count];
    let hi = vec![bound; count];
    let alpha0 = 1.0 / lipschitz_cell(&cell);
    let run = |start: f64| -> Result<(UnitCellField, usize), SolverError> {
        let mut x = vec![start; count];
        let scratch = std::cell::RefCell::new((
            UnitCellField::new(dim, n, x.clone()).expect("cell shape"),
            Vec::<f64>::new(),
        ));
        let report = projected_descent(
            &mut x,
            &lo,
            &hi,
            |v| {
                let mut s = scratch.borrow_mut();
                s.0.values_mut().copy_from_slice(v);
                cell.energy_per_cell(&s.0)
            },
            |v, out| {
                let mut s = scratch.borrow_mut();
                let (field, grad_buf) = &mut *s;
                field.values_mut().copy_from_slice(v);
                cell.gradient(field, grad_buf);
                out.resize(grad_buf.len(), 0.0);
                out.copy_from_slice(grad_buf);
            },
            alpha0,
            opts.phase_grad_tol,
            opts,
        );
        if !report.converged {
            return Err(SolverError::PhaseNonConvergence);
        }
        Ok((UnitCellField::new(dim, n, x).expect("cell shape"), report.iterations))
    };
    let (plus, it_plus) = run(1.0)?;
    let (minus, it_minus) = run(-1.0)?;
    let dev_plus = plus.values().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let dev_minus = minus.values().iter().map(|v| (v + 1.0).abs()).fold(0.0, f64::max);
    let delta_eta = dev_plus.max(dev_minus);
    if delta_eta > model.delta0() {
        return Err(SolverError::EtaTooLarge {
            delta_eta,
            delta0: model.delta0(),
        });
    }
    Ok(PurePhases {
        energy_plus: cell.energy_cube(&plus),
        energy_minus: cell.energy_cube(&minus),
        u_plus: Arc::new(plus),
        u_minus: Arc::new(minus),
        delta_eta,
        iterations: (it_plus, it_minus),
    })
}

fn lipschitz_cell(cell: &CellSystem) -> f64 {
    lipschitz_from(
        &cell.model,
        cell.dim,
        cell.n,
        cell_stencil_weight_total(cell),
    )
}

fn cell_stencil_weight_total(cell: &CellSystem) -> f64 {
    cell.stencil_weight_total()
}

fn lipschitz_from(model: &ModelSpec, dim: usize, n: u32, w_total: f64) -> f64 {
    let h = 1.0 / f64::from(n);
    let h_kin = h.powi(2 * dim as i32);
    let h_pot = h.powi(dim as i32);
    let amp = if model.kernel.eps_k != 0.0 {
        model.kernel.lambda_cap
    } else {
        1.0
    };
    let curvature = match model.potential.well {
        crate::model::WellShape::Quartic => {
            let r = 1.0 + model.delta0();
            (12.0 * r * r - 4.0).max(4.0)
        }
        crate::model::WellShape::Cosine => std::f64::consts::PI * std::f64::consts::PI,
    };
    2.0 * h_kin * w_total * amp + h_pot * curvature * (1.0 + model.potential.eps_w)
}

fn lipschitz_strip(sys: &StripSystem) -> f64 {
    lipschitz_from(
        &sys.model,
        sys.lattice.dim(),
        sys.lattice.resolution(),
        sys.stencil.entries.iter().map(|e| e.w).sum(),
    )
}

/// Collapsed descent along the strip axis when the whole problem (tables,
/// far phases, bounds and the initialization) is constant on every layer.
/// The reduction is exact; the returned result is re-measured against the
/// full system.
fn minimize_layered(
    sys: &StripSystem,
    class: &AdmissibleClass,
    u0: &Field,
    opts: &SolverOptions,
) -> Option<Result<MinimizerResult, SolverError>> {
    let layer = sys.lattice.layer_size();
    if layer <= 1 {
        return None;
    }
    let layered = crate::layered::LayeredSystem::try_new(sys)?;
    let (lo, hi) = class.bounds();
    let lo_l = crate::layered::layer_values(lo, layer)?;
    let hi_l = crate::layered::layer_values(hi, layer)?;
    let mut u0p = u0.clone();
    class.project(u0p.interior_mut());
    let ext_layers = layered.field_layers(&u0p)?;
    let halo = layered.halo;
    let layers = layered.layers;
    let mut x: Vec<f64> = ext_layers[halo..halo + layers].to_vec();
    let scratch = std::cell::RefCell::new((ext_layers, Vec::<f64>::new()));
    let alpha0 = 1.0 / lipschitz_strip(sys);
    let report = projected_descent(
        &mut x,
        &lo_l,
        &hi_l,
        |v| {
            let mut s = scratch.borrow_mut();
            s.0[halo..halo + layers].copy_from_slice(v);
            layered.f_col(&s.0, sys)
        },
        |v, out| {
            let mut s = scratch.borrow_mut();
            let (ext, grad_buf) = &mut *s;
            ext[halo..halo + layers].copy_from_slice(v);
            layered.grad_col(ext, sys, grad_buf);
            out.resize(grad_buf.len(), 0.0);
            out.copy_from_slice(grad_buf);
        },
        alpha0,
        opts.grad_tol,
        opts,
    );
    let mut interior = vec![0.0; sys.lattice.node_count()];
    for (l, &v) in x.iter().enumerate() {
        interior[l * layer..(l + 1) * layer].fill(v);
    }
    let mut field = u0p;
    field.interior_mut().copy_from_slice(&interior);
    let breakdown = match sys.energy_total(&field, &Region::All) {
        Ok(b) => b,
        Err(e) => return Some(Err(e.into())),
    };
    let f_full = sys.f_omega(&field);
    let mut g = Vec::new();
    sys.gradient(&field, &mut g);
    let pg_full = sup_pg(&interior, &g, lo, hi);
    let cols = layer as f64;
    let active = class.active_counts(&interior);
    Some(Ok(MinimizerResult {
        field,
        f_omega: f_full,
        breakdown,
        iterations: report.iterations,
        final_grad_norm: pg_full,
        active,
        converged: report.converged && pg_full <= 10.0 * opts.grad_tol,
        trace: report.trace.iter().map(|f| cols * f).collect(),
    }))
}

fn minimize_in_class(
    sys: &StripSystem,
    class: &AdmissibleClass,
    u0: &Field,
    opts: &SolverOptions,
) -> Result<MinimizerResult, SolverError> {
    if !Arc::ptr_eq(class.lattice(), &sys.lattice) {
        return Err(SolverError::ClassMismatch);
    }
    if let Some(result) = minimize_layered(sys, class, u0, opts) {
        return result;
    }
    let (lo, hi) = class.bounds();
    let mut x: Vec<f64> = u0.interior().to_vec();
    let scratch = std::cell::RefCell::new((u0.clone(), Vec::<f64>::new()));
    let alpha0 = 1.0 / lipschitz_strip(sys);
    let report = projected_descent(
        &mut x,
        lo,
        hi,
        |v| {
            let mut s = scratch.borrow_mut();
            s.0.interior_mut().copy_from_slice(v);
            sys.f_omega(&s.0)
        },
        |v, out| {
            let mut s = scratch.borrow_mut();
            let (field, grad_buf) = &mut *s;
            field.interior_mut().copy_from_slice(v);
            sys.gradient(field, grad_buf);
            out.resize(grad_buf.len(), 0.0);
            out.copy_from_slice(grad_buf);
        },
        alpha0,
        opts.grad_tol,
        opts,
    );
    let active = class.active_counts(&x);
    let (mut field, _) = scratch.into_inner();
    field.interior_mut().copy_from_slice(&x);
    let breakdown = sys.energy_total(&field, &Region::All)?;
    Ok(MinimizerResult {
        field,
        f_omega: report.f,
        breakdown,
        iterations: report.iterations,
        final_grad_norm: report.pg_norm,
        active,
        converged: report.converged,
        trace: report.trace,
    })
}

/// Constrained minimization of the renormalized strip energy from `u0`
/// (projected into the class if necessary).
pub fn constrained_minimize(
    sys: &StripSystem,
    class: &AdmissibleClass,
    u0: &Field,
    opts: &SolverOptions,
) -> Result<MinimizerResult, SolverError> {
    minimize_in_class(sys, class, u0, opts)
}

/// Linear transition profile between the pure phases across the strip.
pub fn linear_profile(sys: &StripSystem) -> Field {
    let lat = &sys.lattice;
    let (a, b) = lat.strip();
    let interior: Vec<f64> = (0..lat.node_count())
        .map(|i| {
            let g = lat.node_grid(i);
            let p = sys.u_plus.sample(&g);
            let m = sys.u_minus.sample(&g);
            let level = lat.node_level(i);
            if level <= a {
                p
            } else if level > b {
                m
            } else {
                p + (m - p) * (level - a) / (b - a)
            }
        })
        .collect();
    sys.field_from_interior(interior).expect("profile in box")
}

/// Sharp step profile switching phases mid-strip.
pub fn step_profile(sys: &StripSystem) -> Field {
    let lat = &sys.lattice;
    let (a, b) = lat.strip();
    let mid = 0.5 * (a + b);
    let interior: Vec<f64> = (0..lat.node_count())
        .map(|i| {
            let g = lat.node_grid(i);
            if lat.node_level(i) <= mid {
                sys.u_plus.sample(&g)
            } else {
                sys.u_minus.sample(&g)
            }
        })
        .collect();
    sys.field_from_interior(interior).expect("profile in box")
}

/// Seeded random admissible initialization.
pub fn random_admissible(sys: &StripSystem, class: &AdmissibleClass, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = class.bounds();
    let interior: Vec<f64> = lo
        .iter()
        .zip(hi)
        .map(|(&l, &h)| rng.gen_range(l..=h))
        .collect();
    sys.field_from_interior(interior).expect("inside box")
}

/// One min/max rearrangement with the four energies involved.
#[derive(Debug, Clone, Copy)]
pub struct CombineRecord {
    pub f_u: f64,
    pub f_v: f64,
    pub f_min: f64,
    pub f_max: f64,
}

impl CombineRecord {
    /// Nonnegative up to roundoff by the rearrangement inequality.
    pub fn slack(&self) -> f64 {
        self.f_u + self.f_v - self.f_min - self.f_max
    }
}

#[derive(Debug)]
pub struct MinimalOutcome {
    pub result: MinimizerResult,
    pub member_energies: Vec<f64>,
    pub member_fields: Vec<Field>,
    pub combines: Vec<CombineRecord>,
    pub rounds: usize,
    pub slide_moves: usize,
    pub any_nonconverged: bool,
}

/// Pushes a minimizer down the translation ties: minimizers translated one
/// level toward the lower constraint keep the same energy in the periodic
/// medium, and the pointwise min with such a translate never increases it.
/// The loop stops when further sliding would clip against the constraint and
/// raise the energy.
fn slide_to_floor(
    sys: &StripSystem,
    class: &AdmissibleClass,
    field: &Field,
    opts: &SolverOptions,
) -> (Field, f64, usize) {
    let lat = &sys.lattice;
    let down: Vec<i64> = lat.basis().completion().iter().map(|&z| -z).collect();
    let mut cur = field.clone();
    let mut f_cur = sys.f_omega(&cur);
    let mut moves = 0usize;
    let (t_min, t_max) = lat.t_range();
    let max_moves = ((t_max - t_min) / lat.resolution() as i64 + 2) as usize;
    while moves < max_moves {
        let mut shifted = translate(lat, &cur, &down);
        class.project(shifted.interior_mut());
        let cand = cur.pointwise_min(&shifted);
        let f_cand = sys.f_omega(&cand);
        if f_cand > f_cur + 1e-10 * (1.0 + f_cur.abs()) {
            break;
        }
        if cand.sup_diff(&cur) <= opts.combine_tol {
            break;
        }
        cur = cand;
        f_cur = f_cand;
        moves += 1;
    }
    (cur, f_cur, moves)
}

/// Minimal minimizer from an explicit list of initializations: descend all,
/// then iterate pointwise-min combination and re-descent to a fixed point.
pub fn minimal_minimizer_from(
    sys: &StripSystem,
    class: &AdmissibleClass,
    inits: Vec<Field>,
    opts: &SolverOptions,
) -> Result<MinimalOutcome, SolverError> {
    assert!(!inits.is_empty());
    let members: Vec<Result<MinimizerResult, SolverError>> = inits
        .par_iter()
        .map(|u0| minimize_in_class(sys, class, u0, opts))
        .collect();
    let mut converged: Vec<MinimizerResult> = Vec::new();
    let mut any_nonconverged = false;
    for m in members {
        let m = m?;
        if m.converged {
            converged.push(m);
        } else {
            any_nonconverged = true;
        }
    }
    if converged.is_empty() {
        return Err(SolverError::EnsembleFailed);
    }
    let mut best_idx = 0;
    for (i, m) in converged.iter().enumerate() {
        if m.f_omega < converged[best_idx].f_omega {
            best_idx = i;
        }
    }
    let member_energies: Vec<f64> = converged.iter().map(|m| m.f_omega).collect();
    let member_fields: Vec<Field> = converged.iter().map(|m| m.field.clone()).collect();
    let mut best = converged.swap_remove(best_idx);
    let mut combines = Vec::new();
    let mut rounds = 0;
    let mut slide_moves = 0;
    for round in 0..opts.combine_rounds {
        let (slid, f_slid, moves) = slide_to_floor(sys, class, &best.field, opts);
        slide_moves += moves;
        let mut cand = slid;
        let mut f_cand = f_slid;
        for other in member_fields.iter() {
            let mn = cand.pointwise_min(other);
            let mx = cand.pointwise_max(other);
            let rec = CombineRecord {
                f_u: f_cand,
                f_v: sys.f_omega(other),
                f_min: sys.f_omega(&mn),
                f_max: sys.f_omega(&mx),
            };
            if rec.slack() < -1e-10 {
                return Err(SolverError::CombinationViolation(rec.slack()));
            }
            combines.push(rec);
            f_cand = rec.f_min;
            cand = mn;
        }
        let moved = cand.sup_diff(&best.field);
        if moved <= opts.combine_tol {
            break;
        }
        best = minimize_in_class(sys, class, &cand, opts)?;
        rounds = round + 1;
    }
    Ok(MinimalOutcome {
        result: best,
        member_energies,
        member_fields,
        combines,
        rounds,
        slide_moves,
        any_nonconverged,
    })
}

/// Minimal minimizer with the default ensemble: the linear and step profiles
/// plus seeded random admissible initializations.
pub fn minimal_minimizer(
    sys: &StripSystem,
    class: &AdmissibleClass,
    opts: &SolverOptions,
) -> Result<MinimalOutcome, SolverError> {
    let mut inits = vec![linear_profile(sys), step_profile(sys)];
    for k in 0..opts.ensemble_size {
        inits.push(random_admissible(
            sys,
            class,
            opts.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1)),
        ));
    }
    minimal_minimizer_from(sys, class, inits, opts)
}

/// Exact global minimum of the level-quantized problem by exhaustive
/// enumeration. Ties resolve to the lexicographically smallest value vector.
pub fn brute_force_minimize(
    sys: &StripSystem,
    class: &AdmissibleClass,
    levels: &[f64],
) -> Result<Field, SolverError> {
    let lat = &sys.lattice;
    let count = lat.node_count();
    let (lo, hi) = class.bounds();
    // allowed levels per node, ascending
    let allowed: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            let mut vs: Vec<f64> = levels
                .iter()
                .copied()
                .filter(|&v| v >= lo[i] - 1e-12 && v <= hi[i] + 1e-12)
                .collect();
            vs.sort_by(f64::total_cmp);
            vs.dedup();
            vs
        })
        .collect();
    if allowed.iter().any(|v| v.is_empty()) {
        return Err(SolverError::InstanceTooLarge(
            "a node has no admissible quantization level".into(),
        ));
    }
    let free_nodes = allowed.iter().filter(|v| v.len() > 3).count();
    let combos: f64 = allowed.iter().map(|v| v.len() as f64).product();
    if free_nodes > 12 || combos > 3e8 {
        return Err(SolverError::InstanceTooLarge(format!(
            "{free_nodes} free nodes, {combos:.3e} assignments"
        )));
    }
    // pair weights between interior nodes and per-node frozen/potential tables
    let h_kin = sys.h_kin();
    let h_pot = sys.h_pot();
    let mut pair_w = vec![vec![0.0f64; count]; count];
    let mut tables: Vec<Vec<f64>> = Vec::with_capacity(count);
    let far = sys.field_from_interior(vec![0.0; count])?;
    let (t_min, t_max) = lat.t_range();
    for i in 0..count {
        let g0 = lat.node_grid(i);
        let mut frozen_quad = 0.0;
        let mut frozen_lin = 0.0;
        for e in &sys.stencil.entries {
            let g: Vec<i64> = g0
                .iter()
                .zip(&e.d)
                .map(|(&a, &b)| a + b as i64)
                .collect();
            let t = lat.direction().dot(&g);
            if t >= t_min && t <= t_max {
                let j = lat.grid_to_node(&g).expect("in range");
                pair_w[i][j] += e.w;
            } else {
                let fv = far.value_at_grid(&g);
                frozen_quad += e.w;
                frozen_lin += e.w * fv;
            }
        }
        let x = lat.node_position(i);
        let xr: Vec<f64> = x.iter().map(|v| v.rem_euclid(1.0)).collect();
        let table: Vec<f64> = allowed[i]
            .iter()
            .map(|&v| {
                h_kin * (frozen_quad * v * v - 2.0 * frozen_lin * v)
                    + h_pot * (sys.model.potential.value(&xr, v) + sys.model.meso.value(&xr) * v)
            })
            .collect();
        tables.push(table);
    }
    // depth-first enumeration with incremental partial energies
    let mut choice = vec![0usize; count];
    let mut best_choice = vec![0usize; count];
    let mut best_energy = f64::INFINITY;
    let mut partial = vec![0.0f64; count + 1];
    let mut depth = 0usize;
    loop {
        if depth == count {
            if partial[count] < best_energy {
                best_energy = partial[count];
                best_choice.copy_from_slice(&choice);
            }
            // backtrack
            loop {
                if depth == 0 {
                    let interior: Vec<f64> = best_choice
                        .iter()
                        .enumerate()
                        .map(|(i, &k)| allowed[i][k])
                        .collect();
                    return Ok(sys.field_from_interior(interior)?);
                }
                depth -= 1;
                choice[depth] += 1;
                if choice[depth] < allowed[depth].len() {
                    break;
                }
            }
        }
        // extend: add node `depth` with its current choice
        let k = choice[depth];
        let v = allowed[depth][k];
        let mut e = partial[depth] + tables[depth][k];
        for j in 0..depth {
            let w = pair_w[depth][j];
            if w != 0.0 {
                let d = v - allowed[j][choice[j]];
                e += h_kin * w * d * d;
            }
        }
        partial[depth + 1] = e;
        depth += 1;
        if depth < count {
            choice[depth] = 0;
        }
    }
}

/// Period-doubling run: the base minimal minimizer, the scaling identity of
/// the widened-period energy on its tiling, and a fresh minimal minimizer on
/// the widened quotient.
#[derive(Debug)]
pub struct DoubledOutcome {
    pub base: MinimalOutcome,
    pub doubled: MinimalOutcome,
    pub tiled: Field,
    pub f_base: f64,
    pub f_tiled: f64,
    pub copies: f64,
    /// sup |doubled minimal minimizer - tiled base minimizer|
    pub sup_diff: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn doubled_period_minimize(
    model: &ModelSpec,
    phases: &PurePhases,
    direction: &Direction,
    m: &[u64],
    n: u32,
    a: f64,
    b: f64,
    margin: f64,
    opts: &SolverOptions,
) -> Result<DoubledOutcome, SolverError> {
    let ones = vec![1u64; direction.dim() - 1];
    let lat1 = Arc::new(crate::lattice::build_quotient(
        direction.clone(),
        &ones,
        n,
        a,
        b,
        margin,
    )?);
    let sys1 = StripSystem::new(
        lat1.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let class1 = AdmissibleClass::new(lat1.clone(), model.delta0());
    let base = minimal_minimizer(&sys1, &class1, opts)?;

    let latm = Arc::new(crate::lattice::build_quotient(
        direction.clone(),
        m,
        n,
        a,
        b,
        margin,
    )?);
    let sysm = StripSystem::new(
        latm.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let classm = AdmissibleClass::new(latm.clone(), model.delta0());
    // tile the base minimizer onto the widened quotient
    let tiled_values: Vec<f64> = (0..latm.node_count())
        .map(|i| base.result.field.value_at_grid(&latm.node_grid(i)))
        .collect();
    let tiled = sysm.field_from_interior(tiled_values)?;
    let f_base = base.result.f_omega;
    let f_tiled = sysm.f_omega(&tiled);
    let copies: f64 = m.iter().map(|&x| x as f64).product();
    let doubled = minimal_minimizer(&sysm, &classm, opts)?;
    let sup_diff = doubled.result.field.sup_diff(&tiled);
    Ok(DoubledOutcome {
        base,
        doubled,
        tiled,
        f_base,
        f_tiled,
        copies,
        sup_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_quotient;
    use crate::model::{KernelSpec, MesoSpec, ModelSpec};

    fn model(s: f64, rbar: f64, eta: f64) -> ModelSpec {
        ModelSpec {
            kernel: KernelSpec {
                s,
                truncation_radius: rbar,
                ..KernelSpec::default()
            },
            meso: MesoSpec { eta },
            ..ModelSpec::default()
        }
    }

    fn strip_system(md: &ModelSpec, n: u32, b: f64) -> (StripSystem, AdmissibleClass) {
        let phases = pure_phase_minimize(md, 2, n, &SolverOptions::default()).unwrap();
        let lat = Arc::new(
            build_quotient(
                Direction::new(&[1, 0]).unwrap(),
                &[1],
                n,
                0.0,
                b,
                md.kernel.truncation_radius,
            )
            .unwrap(),
        );
        let class = AdmissibleClass::new(lat.clone(), md.delta0());
        let sys = StripSystem::new(lat, md.clone(), phases.u_plus, phases.u_minus).unwrap();
        (sys, class)
    }

    #[test]
    fn pure_phases_without_forcing_are_exact() {
        let md = model(0.5, 3.0, 0.0);
        let ph = pure_phase_minimize(&md, 2, 8, &SolverOptions::default()).unwrap();
        assert!(ph.u_plus.values().iter().all(|&v| v == 1.0));
        assert!(ph.u_minus.values().iter().all(|&v| v == -1.0));
        assert_eq!(ph.delta_eta, 0.0);
        assert_eq!(ph.energy_plus.total, 0.0);
        assert_eq!(ph.energy_minus.total, 0.0);
        assert_eq!(ph.iterations, (0, 0));
    }

    #[test]
    fn pure_phases_with_forcing() {
        let md = model(0.5, 3.0, 0.01);
        let ph = pure_phase_minimize(&md, 2, 8, &SolverOptions::default()).unwrap();
        assert!(ph.delta_eta > 0.0 && ph.delta_eta <= md.delta0());
        assert!((ph.energy_plus.total - ph.energy_minus.total).abs() <= 1e-10);
        // halving the forcing shrinks the deviation
        let md2 = model(0.5, 3.0, 0.005);
        let ph2 = pure_phase_minimize(&md2, 2, 8, &SolverOptions::default()).unwrap();
        assert!(ph2.delta_eta < ph.delta_eta);
    }

    #[test]
    fn refed_minimizer_is_a_fixed_point() {
        let md = model(0.5, 2.0, 0.01);
        let (sys, class) = strip_system(&md, 4, 3.0);
        let opts = SolverOptions::default();
        let first = constrained_minimize(&sys, &class, &linear_profile(&sys), &opts).unwrap();
        assert!(first.converged);
        let again = constrained_minimize(&sys, &class, &first.field, &opts).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.field.interior(), first.field.interior());
    }

    #[test]
    fn descent_beats_linear_profile_and_is_monotone() {
        let md = model(0.5, 2.0, 0.01);
        let (sys, class) = strip_system(&md, 4, 3.0);
        let opts = SolverOptions::default();
        let bar_u = linear_profile(&sys);
        let f_bar = sys.f_omega(&bar_u);
        let res = constrained_minimize(&sys, &class, &bar_u, &opts).unwrap();
        assert!(res.f_omega <= f_bar);
        for w in res.trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs()),
                "trace not monotone: {w:?}"
            );
        }
        assert!(class.contains(res.field.interior(), 0.0));
    }

    #[test]
    fn minimal_minimizer_single_member_is_that_minimizer() {
        let md = model(0.5, 2.0, 0.01);
        let (sys, class) = strip_system(&md, 4, 3.0);
        let opts = SolverOptions::default();
        let init = linear_profile(&sys);
        let alone = minimal_minimizer_from(&sys, &class, vec![init.clone()], &opts).unwrap();
        let direct = constrained_minimize(&sys, &class, &init, &opts).unwrap();
        // one member: no combination partners, only the translation slide,
        // which may only lower the field at tied energy
        assert!(alone.result.f_omega <= direct.f_omega + 1e-10);
        for (a, b) in alone.result.field.interior().iter().zip(direct.field.interior()) {
            assert!(a <= &(b + 1e-6), "minimal result rose above the member");
        }
    }

    #[test]
    fn minimal_minimizer_below_members() {
        let md = model(0.4, 2.0, 0.01);
        let (sys, class) = strip_system(&md, 4, 2.0);
        let opts = SolverOptions {
            ensemble_size: 3,
            ..SolverOptions::default()
        };
        let out = minimal_minimizer(&sys, &class, &opts).unwrap();
        for &fe in &out.member_energies {
            assert!(out.result.f_omega <= fe + 1e-10);
        }
        for rec in &out.combines {
            assert!(rec.slack() >= -1e-10);
        }
        for field in &out.member_fields {
            let tol = 1e-6;
            for (a, b) in out.result.field.interior().iter().zip(field.interior()) {
                assert!(a <= &(b + tol));
            }
        }
    }

    #[test]
    fn brute_force_single_free_node() {
        let md = model(0.25, 1.0, 0.0);
        let phases = pure_phase_minimize(&md, 1, 1, &SolverOptions::default()).unwrap();
        // 1D strip with exactly one unconstrained node at t = 1 of [0, 2]
        let lat = Arc::new(
            build_quotient(Direction::new(&[1]).unwrap(), &[], 1, 0.0, 2.0, 1.0).unwrap(),
        );
        let class = AdmissibleClass::new(lat.clone(), md.delta0());
        let sys = StripSystem::new(lat, md.clone(), phases.u_plus, phases.u_minus).unwrap();
        let d0 = md.delta0();
        let levels = [-1.0 - d0, -1.0, -1.0 + d0, 0.0, 1.0 - d0, 1.0, 1.0 + d0];
        let best = brute_force_minimize(&sys, &class, &levels).unwrap();
        // independent check: scan the free node's levels by hand
        let mut hand_best = f64::INFINITY;
        let mut hand_v = f64::NAN;
        for &v in &levels {
            let mut vals = best.interior().to_vec();
            let free = (0..sys.lattice.node_count())
                .find(|&i| sys.lattice.node_in_open_strip(i))
                .unwrap();
            vals[free] = v;
            let f = sys.f_omega(&sys.field_from_interior(vals).unwrap());
            if f < hand_best {
                hand_best = f;
                hand_v = v;
            }
        }
        let free = (0..sys.lattice.node_count())
            .find(|&i| sys.lattice.node_in_open_strip(i))
            .unwrap();
        assert_eq!(best.interior()[free], hand_v);
    }

    #[test]
    fn brute_force_matches_exhaustive_two_nodes() {
        let md = model(0.25, 1.5, 0.01);
        let phases = pure_phase_minimize(&md, 1, 1, &SolverOptions::default()).unwrap();
        let lat = Arc::new(
            build_quotient(Direction::new(&[1]).unwrap(), &[], 1, 0.0, 3.0, 1.5).unwrap(),
        );
        let class = AdmissibleClass::new(lat.clone(), md.delta0());
        let sys = StripSystem::new(lat.clone(), md.clone(), phases.u_plus, phases.u_minus).unwrap();
        let d0 = md.delta0();
        let levels = [-1.0 - d0, -1.0, -1.0 + d0, 0.0, 1.0 - d0, 1.0, 1.0 + d0];
        let best = brute_force_minimize(&sys, &class, &levels).unwrap();
        let f_best = sys.f_omega(&best);
        // an independent odometer over every admissible assignment
        let (lo, hi) = class.bounds();
        let per_node: Vec<Vec<f64>> = (0..lat.node_count())
            .map(|i| {
                levels
                    .iter()
                    .copied()
                    .filter(|&v| v >= lo[i] - 1e-12 && v <= hi[i] + 1e-12)
                    .collect()
            })
            .collect();
        let mut idx = vec![0usize; lat.node_count()];
        let mut scan_best = f64::INFINITY;
        loop {
            let vals: Vec<f64> = idx.iter().enumerate().map(|(i, &k)| per_node[i][k]).collect();
            let f = sys.f_omega(&sys.field_from_interior(vals).unwrap());
            scan_best = scan_best.min(f);
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < per_node[d].len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == lat.node_count() {
                    break;
                }
            }
            if d == lat.node_count() {
                break;
            }
        }
        assert!((f_best - scan_best).abs() <= 1e-13 * scan_best.abs().max(1.0));
    }

    #[test]
    fn doubling_small_instance() {
        let md = model(0.5, 1.5, 0.01);
        let phases = pure_phase_minimize(&md, 2, 4, &SolverOptions::default()).unwrap();
        let opts = SolverOptions {
            ensemble_size: 2,
            ..SolverOptions::default()
        };
        let out = doubled_period_minimize(
            &md,
            &phases,
            &Direction::new(&[1, 0]).unwrap(),
            &[2],
            4,
            0.0,
            2.0,
            1.5,
            &opts,
        )
        .unwrap();
        let rel = (out.f_tiled - out.copies * out.f_base).abs() / out.f_base.abs().max(1e-30);
        assert!(rel <= 1e-10, "scaling identity off by {rel}");
        assert!(out.sup_diff <= 1e-6, "doubled minimizer differs by {}", out.sup_diff);
    }
}
