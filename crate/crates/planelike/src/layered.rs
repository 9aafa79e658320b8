//! Exact layer reduction.
//!
//! When the medium tables, far phases, constraints and field are constant on
//! every strip layer (and the kernel carries no spatial modulation), the
//! energy, the gradient and projected descent all collapse onto the strip
//! axis: each layer is one unknown coupled through transverse-summed kernel
//! weights. The reduction is exact, so it serves as a fast path wherever the
//! symmetry is detected, with the generic evaluators as the fallback.

use crate::energy::StripSystem;
use crate::lattice::{Direction, Field, UnitCellField};
use crate::model::{EnergyBreakdown, KernelSpec};

/// Per-layer value view of a layer-constant vector (bitwise check).
pub(crate) fn layer_values(values: &[f64], layer: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(values.len() % layer, 0);
    let mut out = Vec::with_capacity(values.len() / layer);
    for chunk in values.chunks_exact(layer) {
        let v0 = chunk[0];
        if chunk.iter().any(|&v| v != v0) {
            return None;
        }
        out.push(v0);
    }
    Some(out)
}

/// Cell values bucketed by the residue of `omega . g`: succeeds only when the
/// cell is constant across each strip level.
fn cell_by_level(cell: &UnitCellField, direction: &Direction) -> Option<Vec<f64>> {
    let n = cell.resolution() as i64;
    let dim = cell.dim();
    let mut by_res: Vec<Option<f64>> = vec![None; n as usize];
    let count = cell.values().len();
    for idx in 0..count {
        let mut rest = idx;
        let mut g = vec![0i64; dim];
        for gi in g.iter_mut() {
            *gi = (rest % n as usize) as i64;
            rest /= n as usize;
        }
        let r = direction.dot(&g).rem_euclid(n) as usize;
        let v = cell.values()[idx];
        match by_res[r] {
            None => by_res[r] = Some(v),
            Some(prev) if prev == v => {}
            Some(_) => return None,
        }
    }
    by_res.into_iter().collect()
}

/// Layer-collapsed view of a strip system.
pub struct LayeredSystem {
    /// Collapsed kinetic weights indexed by `dt + reach`.
    pub w_dt: Vec<f64>,
    pub reach: i64,
    /// Extended (halo included) medium and reference tables, one per layer.
    pub wfac: Vec<f64>,
    pub meso: Vec<f64>,
    pub p_ref: Vec<f64>,
    /// Interior reference potential, one per layer.
    pub ref_pot: Vec<f64>,
    /// Far phase values by `t mod n`.
    pub far_low_t: Vec<f64>,
    pub far_high_t: Vec<f64>,
    pub halo: usize,
    pub layers: usize,
    pub layer_size: usize,
}

impl LayeredSystem {
    /// Collapses the system when every layer of its tables is uniform and
    /// the kernel is unmodulated.
    pub fn try_new(sys: &StripSystem) -> Option<Self> {
        if sys.model.kernel.eps_k != 0.0 {
            return None;
        }
        let layer = sys.lattice.layer_size();
        let direction = sys.lattice.direction();
        let far_low_t = cell_by_level(&sys.u_plus, direction)?;
        let far_high_t = cell_by_level(&sys.u_minus, direction)?;
        let wfac = layer_values(&sys.wfac, layer)?;
        let meso = layer_values(&sys.meso, layer)?;
        let p_ref = layer_values(&sys.p_ext, layer)?;
        let ref_pot = layer_values(&sys.ref_pot, layer)?;
        let mut reach = 0i64;
        for e in &sys.stencil.entries {
            reach = reach.max(e.dt.unsigned_abs() as i64);
        }
        let mut w_dt = vec![0.0; (2 * reach + 1) as usize];
        for e in &sys.stencil.entries {
            w_dt[(e.dt as i64 + reach) as usize] += e.w;
        }
        Some(Self {
            w_dt,
            reach,
            wfac,
            meso,
            p_ref,
            ref_pot,
            far_low_t,
            far_high_t,
            halo: sys.lattice.halo_layers() as usize,
            layers: sys.lattice.layers(),
            layer_size: layer,
        })
    }

    /// Extended per-layer values of a layer-constant field.
    pub fn field_layers(&self, field: &Field) -> Option<Vec<f64>> {
        layer_values(field.ext_values(), self.layer_size)
    }

    /// Per-column kinetic sum matching the full system's cross weighting.
    fn kin_col(&self, u: &[f64]) -> f64 {
        let mut kin = 0.0;
        for l in 0..self.layers {
            let le = self.halo + l;
            let ul = u[le];
            for dt in -self.reach..=self.reach {
                let w = self.w_dt[(dt + self.reach) as usize];
                if w == 0.0 {
                    continue;
                }
                let je = (le as i64 + dt) as usize;
                let interior = je >= self.halo && je < self.halo + self.layers;
                let factor = if interior { 0.5 } else { 1.0 };
                let du = ul - u[je];
                kin += factor * w * du * du;
            }
        }
        kin
    }

    /// Renormalized energy per transverse column.
    pub fn f_col(&self, u: &[f64], sys: &StripSystem) -> f64 {
        let well = sys.model.potential.well;
        let kin = self.kin_col(u) - self.kin_col(&self.p_ref);
        let mut pot = 0.0;
        for l in 0..self.layers {
            let le = self.halo + l;
            let ul = u[le];
            pot += well.value(ul) * self.wfac[le] + self.meso[le] * ul - self.ref_pot[l];
        }
        sys.h_kin() * kin + sys.h_pot() * pot
    }

    /// Gradient of the column energy with respect to interior layer values;
    /// equals the per-node gradient of the full system on layered fields.
    pub fn grad_col(&self, u: &[f64], sys: &StripSystem, out: &mut Vec<f64>) {
        let well = sys.model.potential.well;
        out.resize(self.layers, 0.0);
        let two_hkin = 2.0 * sys.h_kin();
        for l in 0..self.layers {
            let le = self.halo + l;
            let ul = u[le];
            let mut s = 0.0;
            for dt in -self.reach..=self.reach {
                let w = self.w_dt[(dt + self.reach) as usize];
                if w != 0.0 {
                    s += w * (ul - u[(le as i64 + dt) as usize]);
                }
            }
            out[l] = two_hkin * s
                + sys.h_pot() * (well.derivative(ul) * self.wfac[le] + self.meso[le]);
        }
    }
}

/// Transversely-summed ball energies for an axis direction and a layered
/// field: the transverse lattice sums reduce to interval counts evaluated
/// through prefix tables, costing O(radii x axis extent x axis reach).
///
/// Returns `None` when the symmetry prerequisites fail.
pub fn ball_energy_layered(
    sys: &StripSystem,
    field: &Field,
    eval_kernel: &KernelSpec,
    center: &[i64],
    radii_sorted: &[f64],
) -> Option<Vec<EnergyBreakdown>> {
    let lat = &sys.lattice;
    if lat.dim() != 2 || eval_kernel.eps_k != 0.0 {
        return None;
    }
    let omega = lat.direction().components();
    let axis = (0..2).find(|&i| omega[i] != 0)?;
    if omega[1 - axis] != 0 || omega[axis].abs() != 1 {
        return None;
    }
    let layered = LayeredSystem::try_new(sys)?;
    let u_layers = layered.field_layers(field)?;
    let well = sys.model.potential.well;
    let n = lat.resolution();
    let nf = f64::from(n);
    let h = lat.spacing();
    let (t_min, t_max) = lat.t_range();
    let sign = omega[axis];

    let r_max = *radii_sorted.last()?;
    let ball_reach = (r_max * nf + 1e-9).floor() as i64;
    let eval_reach = (eval_kernel.truncation_radius * nf + 1e-9).floor() as i64;
    let reach2 = eval_reach * eval_reach;

    // the anchor at axis offset alpha sits at t = omega . g = t_center + sign*alpha
    let t_center = lat.direction().dot(center);
    let alpha_span = (ball_reach + eval_reach) as usize;
    let value_at = |alpha: i64| -> f64 {
        let t = t_center + sign * alpha;
        if t < t_min {
            layered.far_low_t[t.rem_euclid(n as i64) as usize]
        } else if t > t_max {
            layered.far_high_t[t.rem_euclid(n as i64) as usize]
        } else {
            u_layers[layered.halo + (t - t_min) as usize]
        }
    };
    let mut u_axis = Vec::with_capacity(2 * alpha_span + 1);
    for alpha in -(alpha_span as i64)..=(alpha_span as i64) {
        u_axis.push(value_at(alpha));
    }
    let ua = |alpha: i64| u_axis[(alpha + alpha_span as i64) as usize];

    // prefix tables over transverse displacements per axis displacement:
    // G0 totals signed weight within |db| <= q, G1 totals |db|-weighted
    let exponent = -(2.0 + 2.0 * eval_kernel.s) / 2.0;
    let dmax = eval_reach as usize;
    let mut g0 = vec![Vec::<f64>::new(); dmax + 1];
    let mut g1 = vec![Vec::<f64>::new(); dmax + 1];
    let mut w_hat = vec![0.0f64; dmax + 1];
    for da in 0..=dmax {
        let cap2 = reach2 - (da * da) as i64;
        if cap2 < 0 {
            continue;
        }
        let dcap = (cap2 as f64).sqrt().floor() as usize;
        let mut p0 = Vec::with_capacity(dcap + 1);
        let mut p1 = Vec::with_capacity(dcap + 1);
        let mut acc0 = 0.0;
        let mut acc1 = 0.0;
        for db in 0..=dcap {
            let d2 = (da * da + db * db) as f64;
            let w = if d2 == 0.0 { 0.0 } else { (d2 * h * h).powf(exponent) };
            if db == 0 {
                acc0 += w;
            } else {
                acc0 += 2.0 * w;
                acc1 += 2.0 * db as f64 * w;
            }
            p0.push(acc0);
            p1.push(acc1);
        }
        w_hat[da] = acc0;
        g0[da] = p0;
        g1[da] = p1;
    }

    // per-alpha anchored kinetic density and potential density
    let amax = ball_reach;
    let mut f_axis = vec![0.0f64; (2 * amax + 1) as usize];
    let mut pot_axis = vec![0.0f64; (2 * amax + 1) as usize];
    let mut meso_axis = vec![0.0f64; (2 * amax + 1) as usize];
    for alpha in -amax..=amax {
        let ui = ua(alpha);
        let mut f = 0.0;
        for da in -(dmax as i64)..=dmax as i64 {
            let w = w_hat[da.unsigned_abs() as usize];
            if w != 0.0 {
                let du = ui - ua(alpha + da);
                f += w * du * du;
            }
        }
        f_axis[(alpha + amax) as usize] = f;
        let t = t_center + sign * alpha;
        debug_assert!(t >= t_min && t <= t_max, "ball anchors must be interior");
        let le = layered.halo + (t - t_min) as usize;
        pot_axis[(alpha + amax) as usize] = well.value(ui) * layered.wfac[le];
        meso_axis[(alpha + amax) as usize] = layered.meso[le] * ui;
    }

    let mut out = Vec::with_capacity(radii_sorted.len());
    for &r in radii_sorted {
        let thr = ((r * nf) * (r * nf) + 1e-9).floor() as i64;
        let beta = |x: i64| -> i64 {
            let rem = thr - x * x;
            if rem < 0 {
                -1
            } else {
                (rem as f64).sqrt().floor() as i64
            }
        };
        let mut a_sum = 0.0;
        let mut pot = 0.0;
        let mut meso = 0.0;
        let mut b_sum = 0.0;
        for alpha in -amax..=amax {
            let b1 = beta(alpha);
            if b1 < 0 {
                continue;
            }
            let rows = (2 * b1 + 1) as f64;
            let idx = (alpha + amax) as usize;
            a_sum += f_axis[idx] * rows;
            pot += pot_axis[idx] * rows;
            meso += meso_axis[idx] * rows;
            let ui = ua(alpha);
            for da in -(dmax as i64)..=dmax as i64 {
                let dau = da.unsigned_abs() as usize;
                let p0 = &g0[dau];
                if p0.is_empty() {
                    continue;
                }
                let b2 = beta(alpha + da);
                if b2 < 0 {
                    continue;
                }
                let du = ui - ua(alpha + da);
                if du == 0.0 {
                    continue;
                }
                let dcap = (p0.len() - 1) as i64;
                let qc = (b1 - b2).abs().min(dcap);
                let qm = (b1 + b2).min(dcap);
                let c0 = (2 * b1.min(b2) + 1) as f64;
                let p1 = &g1[dau];
                let mut s = c0 * p0[qc as usize];
                if qm > qc {
                    s += ((b1 + b2 + 1) as f64) * (p0[qm as usize] - p0[qc as usize])
                        - (p1[qm as usize] - p1[qc as usize]);
                }
                b_sum += du * du * s;
            }
        }
        let inner = 0.5 * sys.h_kin() * b_sum;
        let cross = sys.h_kin() * (a_sum - b_sum);
        out.push(EnergyBreakdown::compose(
            inner,
            cross,
            sys.h_pot() * pot,
            sys.h_pot() * meso,
        ));
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_quotient, Direction};
    use crate::model::{KernelSpec, MesoSpec, ModelSpec};
    use std::sync::Arc;

    fn layered_setup(n: u32, b: f64, eta: f64) -> (StripSystem, Field) {
        let model = ModelSpec {
            kernel: KernelSpec {
                s: 0.3,
                truncation_radius: 2.0,
                ..KernelSpec::default()
            },
            meso: MesoSpec { eta },
            ..ModelSpec::default()
        };
        let phases =
            crate::solver::pure_phase_minimize(&model, 2, n, &crate::solver::SolverOptions::default())
                .unwrap();
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], n, 0.0, b, 2.0).unwrap(),
        );
        let sys = StripSystem::new(lat.clone(), model, phases.u_plus.clone(), phases.u_minus.clone())
            .unwrap();
        let f = Field::from_fn(lat, phases.u_plus, phases.u_minus, |x| {
            -((x[0] - b / 2.0) * 1.7).tanh() * 0.98
        });
        (sys, f)
    }

    #[test]
    fn collapsed_energy_and_gradient_match_full_system() {
        // nonzero forcing: far phases are level-structured but not constant
        let (sys, f) = layered_setup(4, 6.0, 0.01);
        let layered = LayeredSystem::try_new(&sys).expect("layered system");
        let u = layered.field_layers(&f).expect("layered field");
        let cols = sys.lattice.layer_size() as f64;
        let f_full = sys.f_omega(&f);
        let f_col = layered.f_col(&u, &sys);
        assert!(
            (f_full - cols * f_col).abs() <= 1e-12 * f_full.abs().max(1.0),
            "full {f_full} vs column {f_col}"
        );
        let mut gc = Vec::new();
        layered.grad_col(&u, &sys, &mut gc);
        let mut gf = Vec::new();
        sys.gradient(&f, &mut gf);
        for (l, &g) in gc.iter().enumerate() {
            for c in 0..sys.lattice.layer_size() {
                let gi = gf[l * sys.lattice.layer_size() + c];
                assert!((gi - g).abs() <= 1e-13 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn layered_ball_energy_matches_generic() {
        let (sys, f) = layered_setup(4, 8.0, 0.0);
        let mut eval = sys.model.kernel.clone();
        eval.truncation_radius = 3.0; // beyond the lattice margin: exercises far values
        let center = sys.lattice.basis().compose(&[0], 16);
        let radii = [1.5, 2.0, 3.0];
        let generic = sys.ball_energy_generic(&f, &eval, &center, &radii).unwrap();
        let fast = ball_energy_layered(&sys, &f, &eval, &center, &radii).expect("fast path");
        for (g, l) in generic.iter().zip(&fast) {
            assert!(
                (g.kinetic_inner - l.kinetic_inner).abs() <= 1e-12 * g.kinetic_inner.max(1.0),
                "inner {} vs {}",
                g.kinetic_inner,
                l.kinetic_inner
            );
            assert!(
                (g.kinetic_cross - l.kinetic_cross).abs() <= 1e-12 * g.kinetic_cross.max(1.0),
                "cross {} vs {}",
                g.kinetic_cross,
                l.kinetic_cross
            );
            assert!((g.potential - l.potential).abs() <= 1e-12 * g.potential.abs().max(1.0));
            assert!((g.mesoscopic - l.mesoscopic).abs() <= 1e-12);
            assert!((g.total - l.total).abs() <= 1e-12 * g.total.abs().max(1.0));
        }
    }

    #[test]
    fn layered_ball_energy_matches_generic_with_forcing() {
        let (sys, f) = layered_setup(4, 8.0, 0.01);
        let eval = sys.model.kernel.clone();
        let center = sys.lattice.basis().compose(&[0], 16);
        let radii = [1.5, 2.5];
        let generic = sys.ball_energy_generic(&f, &eval, &center, &radii).unwrap();
        let fast = ball_energy_layered(&sys, &f, &eval, &center, &radii).expect("fast path");
        for (g, l) in generic.iter().zip(&fast) {
            assert!((g.total - l.total).abs() <= 1e-12 * g.total.abs().max(1.0));
        }
    }

    #[test]
    fn modulated_kernel_disables_the_fast_path() {
        let (sys, _f) = layered_setup(4, 6.0, 0.0);
        let mut modulated = sys.model.clone();
        modulated.kernel.eps_k = 0.5;
        modulated.kernel.lambda = 0.5;
        modulated.kernel.lambda_cap = 1.5;
        let plus = Arc::new(crate::lattice::UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(crate::lattice::UnitCellField::constant(2, 4, -1.0));
        let sys2 = StripSystem::new(sys.lattice.clone(), modulated, plus, minus).unwrap();
        assert!(LayeredSystem::try_new(&sys2).is_none());
    }
}
