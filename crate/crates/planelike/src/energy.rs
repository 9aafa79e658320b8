//! Discrete energy evaluation on quotient and unit-cell grids.
//!
//! The kinetic part is a sum over precomputed displacement stencils of the
//! truncated kernel; pairs with one endpoint in the frozen exterior carry the
//! doubled cross weight. All reductions run over fixed-size layer blocks and
//! are combined in block order, so results are identical for any thread count.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{Field, LatticeQuotient, UnitCellField};
use crate::model::{EnergyBreakdown, KernelSpec, ModelError, ModelSpec};

const BLOCK_LAYERS: usize = 8;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("lattice margin {margin} is below the kernel truncation radius {rbar}")]
    MarginBelowTruncation { margin: f64, rbar: f64 },
    #[error("far-field cell resolution does not match the lattice")]
    ResolutionMismatch,
    #[error("region mask has wrong length")]
    RegionSize,
    #[error("ball of radius {radius} around t={center_t} leaves the computed domain")]
    BallOutsideDomain { radius: f64, center_t: i64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One displacement of the interaction stencil.
#[derive(Debug, Clone)]
pub struct StencilEntry {
    pub d: [i32; 3],
    pub d2: i64,
    pub dt: i32,
    row_off: i64,
    dcm: [u32; 3],
    /// Radial kernel weight at `|d| h`.
    pub w: f64,
    /// Modulation taper `exp(-|d h|^2 / 2)`.
    taper: f64,
    cde: f64,
    sde: f64,
}

/// All displacements with `0 < |d| h <= truncation_radius`, lexicographic.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub entries: Vec<StencilEntry>,
    pub max_abs_dt: i64,
}

fn for_each_displacement(dim: usize, reach: i64, mut f: impl FnMut([i32; 3], i64)) {
    let r2cap = reach * reach;
    let range = |active: bool| if active { -reach..=reach } else { 0..=0 };
    for dz in range(dim > 2) {
        for dy in range(dim > 1) {
            for dx in -reach..=reach {
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 == 0 || d2 > r2cap {
                    continue;
                }
                f([dx as i32, dy as i32, dz as i32], d2);
            }
        }
    }
}

fn build_stencil(
    dim: usize,
    n: u32,
    kernel: &KernelSpec,
    layer_size: usize,
    // reduces transverse steps for a displacement; returns (dcm, dt)
    reduce: impl Fn(&[i32; 3]) -> ([u32; 3], i64),
) -> Stencil {
    let h = 1.0 / f64::from(n);
    let reach_g = (kernel.truncation_radius * f64::from(n) + 1e-9).floor() as i64;
    let cap2 = kernel.truncation_radius * kernel.truncation_radius;
    let mut entries = Vec::new();
    let mut max_abs_dt = 0i64;
    for_each_displacement(dim, reach_g, |d, d2| {
        let dist2 = d2 as f64 * h * h;
        if dist2 > cap2 + 1e-12 {
            return;
        }
        let dist = dist2.sqrt();
        let w = dist.powf(-(dim as f64 + 2.0 * kernel.s));
        let (dcm, dt) = reduce(&d);
        max_abs_dt = max_abs_dt.max(dt.abs());
        let half_step = std::f64::consts::PI * d[0] as f64 * h;
        entries.push(StencilEntry {
            d,
            d2,
            dt: dt as i32,
            row_off: dt * layer_size as i64,
            dcm,
            w,
            taper: (-0.5 * dist2).exp(),
            cde: half_step.cos(),
            sde: half_step.sin(),
        });
    });
    Stencil {
        entries,
        max_abs_dt,
    }
}

/// Node subset of a quotient domain.
#[derive(Debug, Clone)]
pub enum Region {
    All,
    Mask(Vec<bool>),
}

impl Region {
    pub fn from_pred(lat: &LatticeQuotient, pred: impl Fn(usize) -> bool) -> Self {
        Region::Mask((0..lat.node_count()).map(pred).collect())
    }

    fn contains(&self, node: usize) -> bool {
        match self {
            Region::All => true,
            Region::Mask(m) => m[node],
        }
    }

    fn check(&self, lat: &LatticeQuotient) -> Result<(), EnergyError> {
        if let Region::Mask(m) = self {
            if m.len() != lat.node_count() {
                return Err(EnergyError::RegionSize);
            }
        }
        Ok(())
    }
}

/// Enumerates the contiguous transverse slices of one (layer, displacement)
/// combination as `(c offset, j offset, length)`, so inner loops run over
/// plain slice windows with the periodic wrap folded into the offsets.
#[inline]
fn for_segments(c1: usize, c2: usize, e: &StencilEntry, mut f: impl FnMut(usize, usize, usize, usize)) {
    let d1 = e.dcm[0] as usize;
    if c2 == 1 {
        if c1 > d1 {
            f(0, 0, d1, c1 - d1);
        }
        if d1 > 0 {
            f(c1 - d1, c1 - d1, 0, d1);
        }
    } else {
        let d2 = e.dcm[1] as usize;
        let segs2 = [(0usize, c2 - d2, d2 as isize), (c2 - d2, c2, d2 as isize - c2 as isize)];
        for &(a2, b2, o2) in &segs2 {
            for q in a2..b2 {
                let base_c = q * c1;
                let base_j = ((q as isize + o2) as usize) * c1;
                if c1 > d1 {
                    f(base_c, base_c, base_j + d1, c1 - d1);
                }
                if d1 > 0 {
                    f(base_c + c1 - d1, base_c + c1 - d1, base_j, d1);
                }
            }
        }
    }
}

pub(crate) fn ext_grid_of(lat: &LatticeQuotient, ext_index: usize) -> Vec<i64> {
    let (t_min, _) = lat.t_range();
    let t = t_min - lat.halo_layers() + (ext_index / lat.layer_size()) as i64;
    let mut flat = ext_index % lat.layer_size();
    let mut c = Vec::with_capacity(lat.dim().saturating_sub(1));
    for i in 0..lat.dim() - 1 {
        c.push((flat % lat.layer_extents()[i]) as i64);
        flat /= lat.layer_extents()[i];
    }
    lat.basis().compose(&c, t)
}

/// Everything needed to evaluate the strip energies of one model/lattice pair:
/// kernel stencil, per-node medium tables and the reference pure-phase
/// extension used by the renormalized functional.
pub struct StripSystem {
    pub lattice: Arc<LatticeQuotient>,
    pub model: ModelSpec,
    pub stencil: Stencil,
    pub u_plus: Arc<UnitCellField>,
    pub u_minus: Arc<UnitCellField>,
    pub(crate) p_ext: Vec<f64>,
    pub(crate) wfac: Vec<f64>,
    pub(crate) meso: Vec<f64>,
    cpos: Vec<f64>,
    spos: Vec<f64>,
    pub(crate) ref_pot: Vec<f64>,
    kin_ref: f64,
    h_pot: f64,
    h_kin: f64,
}

impl StripSystem {
    pub fn new(
        lattice: Arc<LatticeQuotient>,
        model: ModelSpec,
        u_plus: Arc<UnitCellField>,
        u_minus: Arc<UnitCellField>,
    ) -> Result<Self, EnergyError> {
        model.validate()?;
        let rbar = model.kernel.truncation_radius;
        if lattice.margin() + 1e-12 < rbar {
            return Err(EnergyError::MarginBelowTruncation {
                margin: lattice.margin(),
                rbar,
            });
        }
        if u_plus.resolution() != lattice.resolution()
            || u_minus.resolution() != lattice.resolution()
            || u_plus.dim() != lattice.dim()
            || u_minus.dim() != lattice.dim()
        {
            return Err(EnergyError::ResolutionMismatch);
        }
        let dim = lattice.dim();
        let n = lattice.resolution();
        let layer = lattice.layer_size();
        let basis = lattice.basis().clone();
        let extents = lattice.layer_extents();
        let stencil = build_stencil(dim, n, &model.kernel, layer, |d| {
            let dj: Vec<i64> = d[..dim].iter().map(|&x| x as i64).collect();
            let (c, t) = basis.decompose(&dj);
            let mut dcm = [0u32; 3];
            for (i, &ci) in c.iter().enumerate() {
                dcm[i] = ci.rem_euclid(extents[i] as i64) as u32;
            }
            (dcm, t)
        });
        let h = lattice.spacing();
        let nf = f64::from(n);
        let modulated = model.kernel.eps_k != 0.0;
        let ext_len = lattice.ext_len();
        let mut wfac = vec![0.0; ext_len];
        let mut meso = vec![0.0; ext_len];
        let mut p_ext = vec![0.0; ext_len];
        let mut cpos = Vec::new();
        let mut spos = Vec::new();
        if modulated {
            cpos = vec![0.0; ext_len];
            spos = vec![0.0; ext_len];
        }
        for idx in 0..ext_len {
            let g = ext_grid_of(&lattice, idx);
            // reduce into the periodicity cell so translated lattices build
            // bit-identical medium tables
            let xr: Vec<f64> = g.iter().map(|&gi| gi.rem_euclid(nf as i64) as f64 * h).collect();
            wfac[idx] = model.potential.spatial_factor(&xr);
            meso[idx] = model.meso.value(&xr);
            p_ext[idx] = u_plus.sample(&g);
            if modulated {
                let x1 = g[0].rem_euclid(2 * nf as i64) as f64 * h;
                cpos[idx] = (2.0 * std::f64::consts::PI * x1).cos();
                spos[idx] = (2.0 * std::f64::consts::PI * x1).sin();
            }
        }
        let off = lattice.interior_offset();
        let well = model.potential.well;
        let ref_pot: Vec<f64> = (0..lattice.node_count())
            .map(|i| {
                let e = off + i;
                well.value(p_ext[e]) * wfac[e] + meso[e] * p_ext[e]
            })
            .collect();
        let mut sys = Self {
            h_pot: h.powi(dim as i32),
            h_kin: h.powi(2 * dim as i32),
            lattice,
            model,
            stencil,
            u_plus,
            u_minus,
            p_ext,
            wfac,
            meso,
            cpos,
            spos,
            ref_pot,
            kin_ref: 0.0,
        };
        sys.kin_ref = sys.kin_sum(&sys.p_ext.clone());
        Ok(sys)
    }

    pub fn h_pot(&self) -> f64 {
        self.h_pot
    }
    pub fn h_kin(&self) -> f64 {
        self.h_kin
    }

    fn modulated(&self) -> bool {
        self.model.kernel.eps_k != 0.0
    }

    /// Modulation factor for anchor ext-index `i` and stencil entry `e`.
    #[inline]
    fn mod_factor(&self, i: usize, e: &StencilEntry) -> f64 {
        let c = self.cpos[i] * e.cde - self.spos[i] * e.sde;
        (1.0 + self.model.kernel.eps_k * c * e.taper)
            .clamp(self.model.kernel.lambda, self.model.kernel.lambda_cap)
    }

    /// Builds a field wired to this system's far phases.
    pub fn field_from_interior(&self, interior: Vec<f64>) -> Result<Field, crate::lattice::LatticeError> {
        Field::new(
            self.lattice.clone(),
            interior,
            self.u_plus.clone(),
            self.u_minus.clone(),
            self.model.box_bound(),
        )
    }

    fn layer_blocks(&self) -> Vec<(usize, usize)> {
        let layers = self.lattice.layers();
        (0..layers)
            .step_by(BLOCK_LAYERS)
            .map(|start| (start, (start + BLOCK_LAYERS).min(layers)))
            .collect()
    }

    /// Raw kinetic sum (cross pairs doubled), deterministic block order.
    fn kin_sum(&self, u: &[f64]) -> f64 {
        let lat = &self.lattice;
        let layer = lat.layer_size();
        let (t_min, t_max) = lat.t_range();
        let off = lat.interior_offset();
        let modulated = self.modulated();
        let blocks = self.layer_blocks();
        let [c1, c2] = lat.layer_extents();
        let partials: Vec<f64> = blocks
            .par_iter()
            .map(|&(l0, l1)| {
                let mut kin = 0.0;
                let mut acc = vec![0.0f64; layer];
                for l in l0..l1 {
                    let t = t_min + l as i64;
                    let row_i = off + l * layer;
                    acc.fill(0.0);
                    for e in &self.stencil.entries {
                        let tj = t + e.dt as i64;
                        let factor = if tj >= t_min && tj <= t_max { 0.5 } else { 1.0 };
                        let row_j = (row_i as i64 + e.row_off) as usize;
                        if modulated {
                            let mut s = 0.0;
                            self.for_pairs(row_i as i64, row_j as i64, e, |i, j| {
                                let du = u[i] - u[j];
                                s += self.mod_factor(i, e) * du * du;
                            });
                            kin += factor * e.w * s;
                        } else {
                            let fw = factor * e.w;
                            for_segments(c1, c2, e, |a_off, i_off, j_off, len| {
                                let ui = &u[row_i + i_off..row_i + i_off + len];
                                let uj = &u[row_j + j_off..row_j + j_off + len];
                                let ac = &mut acc[a_off..a_off + len];
                                for k in 0..len {
                                    let du = ui[k] - uj[k];
                                    ac[k] += fw * du * du;
                                }
                            });
                        }
                    }
                    let mut layer_kin = 0.0;
                    for &a in acc.iter() {
                        layer_kin += a;
                    }
                    kin += layer_kin;
                }
                kin
            })
            .collect();
        partials.iter().sum()
    }

    /// Renormalized strip energy: the energy difference against the pure
    /// upper-phase extension. The reference sums run through the identical
    /// deterministic loops, so the reference extension evaluates to exactly
    /// zero and the frozen far field cancels term by term.
    pub fn f_omega(&self, field: &Field) -> f64 {
        let u = field.ext_values();
        let lat = &self.lattice;
        let layer = lat.layer_size();
        let off = lat.interior_offset();
        let well = self.model.potential.well;
        let blocks = self.layer_blocks();
        let kin = self.kin_sum(u) - self.kin_ref;
        let pot_partials: Vec<f64> = blocks
            .par_iter()
            .map(|&(l0, l1)| {
                let mut pot = 0.0;
                for l in l0..l1 {
                    let row_i = off + l * layer;
                    for c in 0..layer {
                        let ie = row_i + c;
                        let ui = u[ie];
                        pot += well.value(ui) * self.wfac[ie] + self.meso[ie] * ui
                            - self.ref_pot[l * layer + c];
                    }
                }
                pot
            })
            .collect();
        self.h_kin * kin + self.h_pot * pot_partials.iter().sum::<f64>()
    }

    /// Iterates the transverse layer pairs of one (t, entry) combination,
    /// handling the periodic wrap without per-pair branches.
    #[inline]
    pub(crate) fn for_pairs(
        &self,
        row_i: i64,
        row_j: i64,
        e: &StencilEntry,
        mut f: impl FnMut(usize, usize),
    ) {
        let ext = self.lattice.layer_extents();
        let c1 = ext[0];
        let c2 = ext[1];
        let d1 = e.dcm[0] as usize;
        let d2 = e.dcm[1] as usize;
        let segs1 = [(0usize, c1 - d1, d1 as isize), (c1 - d1, c1, d1 as isize - c1 as isize)];
        if c2 == 1 {
            for &(a, b, o) in &segs1 {
                for c in a..b {
                    let i = (row_i + c as i64) as usize;
                    let j = (row_j + (c as isize + o) as i64) as usize;
                    f(i, j);
                }
            }
        } else {
            let segs2 = [(0usize, c2 - d2, d2 as isize), (c2 - d2, c2, d2 as isize - c2 as isize)];
            for &(a2, b2, o2) in &segs2 {
                for q in a2..b2 {
                    let base_i = row_i + (q * c1) as i64;
                    let base_j = row_j + ((q as isize + o2) * c1 as isize) as i64;
                    for &(a, b, o) in &segs1 {
                        for c in a..b {
                            let i = (base_i + c as i64) as usize;
                            let j = (base_j + (c as isize + o) as i64) as usize;
                            f(i, j);
                        }
                    }
                }
            }
        }
    }

    /// Gradient of the renormalized (equivalently, total) strip energy with
    /// respect to the interior node values.
    pub fn gradient(&self, field: &Field, grad: &mut Vec<f64>) {
        let lat = &self.lattice;
        let layer = lat.layer_size();
        let count = lat.node_count();
        grad.resize(count, 0.0);
        let u = field.ext_values();
        let off = lat.interior_offset();
        let well = self.model.potential.well;
        let modulated = self.modulated();
        let two_hkin = 2.0 * self.h_kin;
        let blocks = self.layer_blocks();
        let block_nodes = BLOCK_LAYERS * layer;
        let [c1, c2] = lat.layer_extents();
        grad.par_chunks_mut(block_nodes)
            .zip(blocks.par_iter())
            .for_each(|(gout, &(l0, l1))| {
                let mut acc = vec![0.0f64; layer];
                for l in l0..l1 {
                    acc.fill(0.0);
                    let row_i = off + l * layer;
                    for e in &self.stencil.entries {
                        let row_j = (row_i as i64 + e.row_off) as usize;
                        if modulated {
                            self.for_pairs(row_i as i64, row_j as i64, e, |i, j| {
                                let a = self.mod_factor(i, e);
                                acc[i - row_i] += a * e.w * (u[i] - u[j]);
                            });
                        } else {
                            let w = e.w;
                            for_segments(c1, c2, e, |a_off, i_off, j_off, len| {
                                let ui = &u[row_i + i_off..row_i + i_off + len];
                                let uj = &u[row_j + j_off..row_j + j_off + len];
                                let ac = &mut acc[a_off..a_off + len];
                                for k in 0..len {
                                    ac[k] += w * (ui[k] - uj[k]);
                                }
                            });
                        }
                    }
                    for c in 0..layer {
                        let ie = off + l * layer + c;
                        let wr = well.derivative(u[ie]) * self.wfac[ie] + self.meso[ie];
                        gout[(l - l0) * layer + c] = two_hkin * acc[c] + self.h_pot * wr;
                    }
                }
            });
    }

    /// Localized total energy over a node region, split by term. Pairs with
    /// the second endpoint outside the region carry the doubled cross count.
    pub fn energy_total(&self, field: &Field, region: &Region) -> Result<EnergyBreakdown, EnergyError> {
        region.check(&self.lattice)?;
        let u = field.ext_values();
        let lat = &self.lattice;
        let layer = lat.layer_size();
        let (t_min, t_max) = lat.t_range();
        let off = lat.interior_offset();
        let well = self.model.potential.well;
        let modulated = self.modulated();
        let blocks = self.layer_blocks();
        let partials: Vec<[f64; 4]> = blocks
            .par_iter()
            .map(|&(l0, l1)| {
                let mut inner = 0.0;
                let mut cross = 0.0;
                let mut pot = 0.0;
                let mut meso = 0.0;
                for l in l0..l1 {
                    let t = t_min + l as i64;
                    let row_i = (off + l * layer) as i64;
                    let row_int = (l * layer) as i64;
                    for e in &self.stencil.entries {
                        let tj = t + e.dt as i64;
                        let j_interior = tj >= t_min && tj <= t_max;
                        let row_j = row_i + e.row_off;
                        let row_j_int = row_int + e.row_off;
                        self.for_pairs(row_i, row_j, e, |i, j| {
                            let i_int = (i as i64 - row_i + row_int) as usize;
                            if !region.contains(i_int) {
                                return;
                            }
                            let du = u[i] - u[j];
                            let wv = if modulated {
                                self.mod_factor(i, e) * e.w
                            } else {
                                e.w
                            };
                            let in_region = j_interior
                                && region.contains((j as i64 - row_j + row_j_int) as usize);
                            if in_region {
                                inner += 0.5 * wv * du * du;
                            } else {
                                cross += wv * du * du;
                            }
                        });
                    }
                    for c in 0..layer {
                        let i_int = l * layer + c;
                        if !region.contains(i_int) {
                            continue;
                        }
                        let ie = off + i_int;
                        let ui = u[ie];
                        pot += well.value(ui) * self.wfac[ie];
                        meso += self.meso[ie] * ui;
                    }
                }
                [inner, cross, pot, meso]
            })
            .collect();
        let mut sums = [0.0f64; 4];
        for p in partials {
            for (s, v) in sums.iter_mut().zip(p) {
                *s += v;
            }
        }
        Ok(EnergyBreakdown::compose(
            self.h_kin * sums[0],
            self.h_kin * sums[1],
            self.h_pot * sums[2],
            self.h_pot * sums[3],
        ))
    }

    /// Kinetic interaction of the field between two node sets (all periodic
    /// images of the second set are counted).
    pub fn kinetic_interaction(
        &self,
        field: &Field,
        set_u: &Region,
        set_v: &Region,
    ) -> Result<f64, EnergyError> {
        set_u.check(&self.lattice)?;
        set_v.check(&self.lattice)?;
        let u = field.ext_values();
        let lat = &self.lattice;
        let layer = lat.layer_size();
        let (t_min, t_max) = lat.t_range();
        let off = lat.interior_offset();
        let modulated = self.modulated();
        let blocks = self.layer_blocks();
        let partials: Vec<f64> = blocks
            .par_iter()
            .map(|&(l0, l1)| {
                let mut acc = 0.0;
                for l in l0..l1 {
                    let t = t_min + l as i64;
                    let row_i = (off + l * layer) as i64;
                    let row_int = (l * layer) as i64;
                    for e in &self.stencil.entries {
                        let tj = t + e.dt as i64;
                        if tj < t_min || tj > t_max {
                            continue;
                        }
                        let row_j = row_i + e.row_off;
                        let row_j_int = row_int + e.row_off;
                        self.for_pairs(row_i, row_j, e, |i, j| {
                            let i_int = (i as i64 - row_i + row_int) as usize;
                            let j_int = (j as i64 - row_j + row_j_int) as usize;
                            if set_u.contains(i_int) && set_v.contains(j_int) {
                                let du = u[i] - u[j];
                                let wv = if modulated {
                                    self.mod_factor(i, e) * e.w
                                } else {
                                    e.w
                                };
                                acc += 0.5 * wv * du * du;
                            }
                        });
                    }
                }
                acc
            })
            .collect();
        Ok(self.h_kin * partials.iter().sum::<f64>())
    }

    /// Potential-plus-forcing part over a node set.
    pub fn potential_part(&self, field: &Field, set: &Region) -> Result<f64, EnergyError> {
        set.check(&self.lattice)?;
        let u = field.ext_values();
        let off = self.lattice.interior_offset();
        let well = self.model.potential.well;
        let mut acc = 0.0;
        for i in 0..self.lattice.node_count() {
            if set.contains(i) {
                let ie = off + i;
                acc += well.value(u[ie]) * self.wfac[ie] + self.meso[ie] * u[ie];
            }
        }
        Ok(self.h_pot * acc)
    }

    /// Energies of grid balls `B_R(center)` for every radius in one pass,
    /// evaluated for the periodic extension of the field under `eval_kernel`
    /// (which may reach further than this system's own kernel).
    pub fn ball_energy(
        &self,
        field: &Field,
        eval_kernel: &KernelSpec,
        center: &[i64],
        radii: &[f64],
    ) -> Result<Vec<EnergyBreakdown>, EnergyError> {
        let mut radii_sorted: Vec<f64> = radii.to_vec();
        radii_sorted.sort_by(f64::total_cmp);
        self.ball_precheck(center, *radii_sorted.last().expect("radii nonempty"))?;
        let out_sorted = match crate::layered::ball_energy_layered(
            self,
            field,
            eval_kernel,
            center,
            &radii_sorted,
        ) {
            Some(v) => v,
            None => self.ball_energy_generic(field, eval_kernel, center, &radii_sorted)?,
        };
        let mut result = Vec::with_capacity(radii.len());
        for r in radii {
            let k = radii_sorted.iter().position(|x| x == r).expect("radius present");
            result.push(out_sorted[k]);
        }
        Ok(result)
    }

    fn ball_precheck(&self, center: &[i64], r_max: f64) -> Result<(), EnergyError> {
        let lat = &self.lattice;
        let nf = f64::from(lat.resolution());
        let (t_min, t_max) = lat.t_range();
        let tc = lat.direction().dot(center);
        let treach = (r_max * lat.direction().norm() * nf).ceil() as i64;
        if tc - treach < t_min || tc + treach > t_max {
            return Err(EnergyError::BallOutsideDomain {
                radius: r_max,
                center_t: tc,
            });
        }
        Ok(())
    }

    /// Generic ball evaluation over sorted radii (anchors enumerated in the
    /// plane, transverse images resolved per pair).
    pub(crate) fn ball_energy_generic(
        &self,
        field: &Field,
        eval_kernel: &KernelSpec,
        center: &[i64],
        radii_sorted: &[f64],
    ) -> Result<Vec<EnergyBreakdown>, EnergyError> {
        let lat = &self.lattice;
        let dim = lat.dim();
        let n = lat.resolution();
        let nf = f64::from(n);
        let h = lat.spacing();
        let (t_min, t_max) = lat.t_range();
        let r_max = *radii_sorted.last().expect("radii nonempty");
        let thresholds: Vec<i64> = radii_sorted
            .iter()
            .map(|r| ((r * nf) * (r * nf) + 1e-9).floor() as i64)
            .collect();
        let nb = thresholds.len();
        let max_thr = *thresholds.last().unwrap();
        // r2 -> index of the smallest ball containing it; nb means "outside"
        let mut lut = vec![nb as u8; (max_thr + 1) as usize];
        {
            let mut k = 0usize;
            for r2 in 0..=max_thr {
                while k < nb && r2 > thresholds[k] {
                    k += 1;
                }
                lut[r2 as usize] = k as u8;
            }
        }
        let eval_stencil = build_stencil(dim, n, eval_kernel, lat.layer_size(), |d| {
            let dj: Vec<i64> = d[..dim].iter().map(|&x| x as i64).collect();
            let (c, t) = lat.basis().decompose(&dj);
            let mut dcm = [0u32; 3];
            for (i, &ci) in c.iter().enumerate() {
                dcm[i] = ci.rem_euclid(lat.layer_extents()[i] as i64) as u32;
            }
            (dcm, t)
        });
        let modulated = eval_kernel.eps_k != 0.0;
        let far_low_const = constant_cell(&self.u_plus);
        let far_high_const = constant_cell(&self.u_minus);
        let interior = field.interior();
        let reach = (r_max * nf + 1e-9).floor() as i64;
        let well = self.model.potential.well;
        // anchor rows along axis 0, fixed blocks for deterministic merging
        let rows: Vec<i64> = (-reach..=reach).collect();
        let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = rows
            .par_iter()
            .map(|&g0| {
                let mut kin_anchor = vec![0.0; nb + 1];
                let mut kin_both = vec![0.0; nb + 1];
                let mut pot = vec![0.0; nb];
                let mut meso = vec![0.0; nb];
                let mut g = vec![0i64; dim];
                let mut rel = vec![0i64; dim];
                let mut walk = vec![-reach; dim];
                walk[0] = g0;
                loop {
                    let r2i: i64 = walk.iter().map(|&x| x * x).sum();
                    if r2i <= max_thr {
                        for (gi, (&w, &ci)) in g.iter_mut().zip(walk.iter().zip(center)) {
                            *gi = w + ci;
                        }
                        rel.copy_from_slice(&walk);
                        let bin_i = lut[r2i as usize] as usize;
                        if bin_i < nb {
                            let (c, t) = lat.basis().decompose(&g);
                            let idx = lat
                                .node_index(&c, t)
                                .expect("ball anchors are interior");
                            let ui = interior[idx];
                            // potential part of the anchor
                            let xr: Vec<f64> = g
                                .iter()
                                .map(|&gi| gi.rem_euclid(nf as i64) as f64 * h)
                                .collect();
                            let wf = self.model.potential.spatial_factor(&xr);
                            let hh = self.model.meso.value(&xr);
                            pot[bin_i] += well.value(ui) * wf;
                            meso[bin_i] += hh * ui;
                            let x1 = g[0].rem_euclid(2 * nf as i64) as f64 * h;
                            let (c2x, s2x) = if modulated {
                                let a = 2.0 * std::f64::consts::PI * x1;
                                (a.cos(), a.sin())
                            } else {
                                (0.0, 0.0)
                            };
                            let mut anchor_total = 0.0;
                            for e in &eval_stencil.entries {
                                let tj = t + e.dt as i64;
                                let uj = if tj >= t_min && tj <= t_max {
                                    let mut cj = c.clone();
                                    for (ci, &dc) in cj.iter_mut().zip(&e.dcm) {
                                        *ci += dc as i64;
                                    }
                                    interior[lat.node_index(&cj, tj).unwrap()]
                                } else {
                                    let side_const = if tj < t_min {
                                        far_low_const
                                    } else {
                                        far_high_const
                                    };
                                    match side_const {
                                        Some(v) => v,
                                        None => {
                                            let gj: Vec<i64> = g
                                                .iter()
                                                .zip(&e.d)
                                                .map(|(&a, &b)| a + b as i64)
                                                .collect();
                                            if tj < t_min {
                                                self.u_plus.sample(&gj)
                                            } else {
                                                self.u_minus.sample(&gj)
                                            }
                                        }
                                    }
                                };
                                let du = ui - uj;
                                let wv = if modulated {
                                    let csum = c2x * e.cde - s2x * e.sde;
                                    (1.0 + eval_kernel.eps_k * csum * e.taper)
                                        .clamp(eval_kernel.lambda, eval_kernel.lambda_cap)
                                        * e.w
                                } else {
                                    e.w
                                };
                                let v = wv * du * du;
                                anchor_total += v;
                                // max-bin for the both-inside prefix
                                let dot: i64 = rel.iter().zip(&e.d).map(|(&a, &b)| a * b as i64).sum();
                                let r2j = r2i + 2 * dot + e.d2;
                                let bin_j = if r2j <= max_thr {
                                    lut[r2j as usize] as usize
                                } else {
                                    nb
                                };
                                kin_both[bin_i.max(bin_j)] += v;
                            }
                            kin_anchor[bin_i] += anchor_total;
                        }
                    }
                    // odometer over the remaining axes
                    let mut dd = 1;
                    if dim == 1 {
                        break;
                    }
                    loop {
                        walk[dd] += 1;
                        if walk[dd] <= reach {
                            break;
                        }
                        walk[dd] = -reach;
                        dd += 1;
                        if dd == dim {
                            break;
                        }
                    }
                    if dd == dim {
                        break;
                    }
                }
                (kin_anchor, kin_both, pot, meso)
            })
            .collect();
        let mut kin_anchor = vec![0.0; nb + 1];
        let mut kin_both = vec![0.0; nb + 1];
        let mut pot = vec![0.0; nb];
        let mut meso = vec![0.0; nb];
        for (ka, kb, p, m) in partials {
            for (a, b) in kin_anchor.iter_mut().zip(ka) {
                *a += b;
            }
            for (a, b) in kin_both.iter_mut().zip(kb) {
                *a += b;
            }
            for (a, b) in pot.iter_mut().zip(p) {
                *a += b;
            }
            for (a, b) in meso.iter_mut().zip(m) {
                *a += b;
            }
        }
        let mut out = Vec::with_capacity(nb);
        let mut pref_a = 0.0;
        let mut pref_b = 0.0;
        let mut pref_p = 0.0;
        let mut pref_m = 0.0;
        for k in 0..nb {
            pref_a += kin_anchor[k];
            pref_b += kin_both[k];
            pref_p += pot[k];
            pref_m += meso[k];
            let inner = 0.5 * self.h_kin * pref_b;
            let cross = self.h_kin * (pref_a - pref_b);
            out.push(EnergyBreakdown::compose(
                inner,
                cross,
                self.h_pot * pref_p,
                self.h_pot * pref_m,
            ));
        }
        Ok(out)
    }
}

fn constant_cell(cell: &UnitCellField) -> Option<f64> {
    let v0 = cell.values()[0];
    cell.values().iter().all(|&v| v == v0).then_some(v0)
}

/// Unit-cell (fully periodic) evaluation context for the pure-phase problem.
pub struct CellSystem {
    pub model: ModelSpec,
    pub dim: usize,
    pub n: u32,
    stencil: Stencil,
    wfac: Vec<f64>,
    meso: Vec<f64>,
    cpos: Vec<f64>,
    spos: Vec<f64>,
    strides: [usize; 3],
    h_pot: f64,
    h_kin: f64,
}

impl CellSystem {
    pub fn new(model: ModelSpec, dim: usize, n: u32) -> Result<Self, EnergyError> {
        model.validate()?;
        let count = (n as usize).pow(dim as u32);
        let h = 1.0 / f64::from(n);
        let strides = [1usize, n as usize, (n as usize) * (n as usize)];
        let stencil = build_stencil(dim, n, &model.kernel, 0, |d| {
            let mut dcm = [0u32; 3];
            for i in 0..dim {
                dcm[i] = (d[i] as i64).rem_euclid(n as i64) as u32;
            }
            (dcm, 0)
        });
        let modulated = model.kernel.eps_k != 0.0;
        let mut wfac = vec![0.0; count];
        let mut meso = vec![0.0; count];
        let mut cpos = Vec::new();
        let mut spos = Vec::new();
        if modulated {
            cpos = vec![0.0; count];
            spos = vec![0.0; count];
        }
        for idx in 0..count {
            let mut rest = idx;
            let mut x = vec![0.0; dim];
            let mut g1 = 0i64;
            for (axis, xi) in x.iter_mut().enumerate() {
                let gi = rest % n as usize;
                if axis == 0 {
                    g1 = gi as i64;
                }
                *xi = gi as f64 * h;
                rest /= n as usize;
            }
            wfac[idx] = model.potential.spatial_factor(&x);
            meso[idx] = model.meso.value(&x);
            if modulated {
                let x1 = g1 as f64 * h;
                cpos[idx] = (2.0 * std::f64::consts::PI * x1).cos();
                spos[idx] = (2.0 * std::f64::consts::PI * x1).sin();
            }
        }
        Ok(Self {
            h_pot: h.powi(dim as i32),
            h_kin: h.powi(2 * dim as i32),
            model,
            dim,
            n,
            stencil,
            wfac,
            meso,
            cpos,
            spos,
            strides,
        })
    }

    pub fn node_count(&self) -> usize {
        (self.n as usize).pow(self.dim as u32)
    }

    /// Sum of the radial stencil weights (a Lipschitz ingredient).
    pub fn stencil_weight_total(&self) -> f64 {
        self.stencil.entries.iter().map(|e| e.w).sum()
    }

    #[inline]
    fn neighbor(&self, coords: &[usize; 3], e: &StencilEntry) -> usize {
        let n = self.n as usize;
        let mut idx = 0usize;
        for axis in 0..self.dim {
            let mut c = coords[axis] + e.dcm[axis] as usize;
            if c >= n {
                c -= n;
            }
            idx += c * self.strides[axis];
        }
        idx
    }

    fn for_each_node(&self, mut f: impl FnMut(usize, &[usize; 3])) {
        let n = self.n as usize;
        let mut coords = [0usize; 3];
        for idx in 0..self.node_count() {
            let mut rest = idx;
            for axis in 0..self.dim {
                coords[axis] = rest % n;
                rest /= n;
            }
            f(idx, &coords);
        }
    }

    #[inline]
    fn pair_weight(&self, idx: usize, e: &StencilEntry) -> f64 {
        if self.model.kernel.eps_k == 0.0 {
            e.w
        } else {
            let c = self.cpos[idx] * e.cde - self.spos[idx] * e.sde;
            (1.0 + self.model.kernel.eps_k * c * e.taper)
                .clamp(self.model.kernel.lambda, self.model.kernel.lambda_cap)
                * e.w
        }
    }

    /// Per-cell energy of the periodic extension (anchor in the cell, partner
    /// anywhere); this is the functional the pure phases minimize.
    pub fn energy_per_cell(&self, u: &UnitCellField) -> f64 {
        let v = u.values();
        let well = self.model.potential.well;
        let mut kin = 0.0;
        let mut pot = 0.0;
        self.for_each_node(|idx, coords| {
            let ui = v[idx];
            for e in &self.stencil.entries {
                let uj = v[self.neighbor(coords, e)];
                let du = ui - uj;
                kin += self.pair_weight(idx, e) * du * du;
            }
            pot += well.value(ui) * self.wfac[idx] + self.meso[idx] * ui;
        });
        0.5 * self.h_kin * kin + self.h_pot * pot
    }

    pub fn gradient(&self, u: &UnitCellField, grad: &mut Vec<f64>) {
        let v = u.values();
        grad.resize(v.len(), 0.0);
        let well = self.model.potential.well;
        self.for_each_node(|idx, coords| {
            let ui = v[idx];
            let mut s = 0.0;
            for e in &self.stencil.entries {
                let uj = v[self.neighbor(coords, e)];
                s += self.pair_weight(idx, e) * (ui - uj);
            }
            grad[idx] =
                2.0 * self.h_kin * s + self.h_pot * (well.derivative(ui) * self.wfac[idx] + self.meso[idx]);
        });
    }

    /// Localized energy over the unit cube: inner pairs have both (unwrapped)
    /// endpoints in the cube, pairs leaving it carry the doubled cross count.
    pub fn energy_cube(&self, u: &UnitCellField) -> EnergyBreakdown {
        let v = u.values();
        let n = self.n as i64;
        let well = self.model.potential.well;
        let mut inner = 0.0;
        let mut cross = 0.0;
        let mut pot = 0.0;
        let mut meso = 0.0;
        self.for_each_node(|idx, coords| {
            let ui = v[idx];
            for e in &self.stencil.entries {
                let uj = v[self.neighbor(coords, e)];
                let du = ui - uj;
                let t = self.pair_weight(idx, e) * du * du;
                let inside = (0..self.dim).all(|axis| {
                    let y = coords[axis] as i64 + e.d[axis] as i64;
                    y >= 0 && y < n
                });
                if inside {
                    inner += 0.5 * t;
                } else {
                    cross += t;
                }
            }
            pot += well.value(ui) * self.wfac[idx];
            meso += self.meso[idx] * ui;
        });
        EnergyBreakdown::compose(
            self.h_kin * inner,
            self.h_kin * cross,
            self.h_pot * pot,
            self.h_pot * meso,
        )
    }

    /// Discrete zero-average check of the forcing over the cell.
    pub fn meso_cell_average(&self) -> f64 {
        self.h_pot * self.meso.iter().sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_quotient, Direction};
    use crate::model::PotentialSpec;

    fn plain_model(s: f64, rbar: f64, eta: f64) -> ModelSpec {
        ModelSpec {
            kernel: KernelSpec {
                s,
                truncation_radius: rbar,
                ..KernelSpec::default()
            },
            potential: PotentialSpec::default(),
            meso: crate::model::MesoSpec { eta },
        }
    }

    fn tiny_1d_system(u0: f64, u1: f64) -> (StripSystem, Field) {
        let model = plain_model(0.25, 2.0, 0.0);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1]).unwrap(), &[], 1, 0.0, 1.0, 2.0).unwrap(),
        );
        let lo = Arc::new(UnitCellField::constant(1, 1, u0));
        let hi = Arc::new(UnitCellField::constant(1, 1, u1));
        let sys = StripSystem::new(lat.clone(), model, lo.clone(), hi.clone()).unwrap();
        // domain is t in [-2, 3]; the two "strip" nodes carry u0, u1 and the
        // margins continue the far values so only the strip pair differs
        let interior: Vec<f64> = (0..lat.node_count())
            .map(|i| if lat.node_level(i) < 0.5 { u0 } else { u1 })
            .collect();
        let f = Field::new(lat, interior, lo, hi, 2.0).unwrap();
        (sys, f)
    }

    #[test]
    fn hand_computed_single_pair_kinetic() {
        // 1D, h = 1, u jumps 0 -> 1 across one bond, s = 1/4, cutoff 2:
        // only pairs straddling the jump contribute.
        let (sys, f) = tiny_1d_system(0.0, 1.0);
        let region = Region::from_pred(&sys.lattice, |i| {
            let l = sys.lattice.node_level(i);
            (-0.5..1.5).contains(&l)
        });
        let e = sys.energy_total(&f, &region).unwrap();
        // inner: the bond (0,1) at distance 1: K = 1
        assert!((e.kinetic_inner - 1.0).abs() < 1e-14);
        // cross: nodes 0 and 1 each see one opposite-phase partner at
        // distance 2 outside the region: 2 * 2^{-3/2}
        let expect_cross = 2.0 * 2.0f64.powf(-1.5);
        assert!((e.kinetic_cross - expect_cross).abs() < 1e-14);
    }

    #[test]
    fn constant_field_zero_kinetic() {
        let model = plain_model(0.5, 3.0, 0.01);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 8, 0.0, 2.0, 3.0).unwrap(),
        );
        let ones = Arc::new(UnitCellField::constant(2, 8, 1.0));
        let sys = StripSystem::new(lat.clone(), model, ones.clone(), ones.clone()).unwrap();
        let f = Field::constant(lat, 1.0, ones.clone(), ones);
        let e = sys.energy_total(&f, &Region::All).unwrap();
        assert_eq!(e.kinetic_inner, 0.0);
        assert_eq!(e.kinetic_cross, 0.0);
        assert_eq!(e.potential, 0.0);
    }

    #[test]
    fn cell_energy_of_plus_one_is_zero() {
        let model = plain_model(0.5, 3.0, 0.01);
        let cell = CellSystem::new(model, 2, 8).unwrap();
        let u = UnitCellField::constant(2, 8, 1.0);
        let e = cell.energy_cube(&u);
        assert_eq!(e.kinetic_inner, 0.0);
        assert_eq!(e.kinetic_cross, 0.0);
        assert_eq!(e.potential, 0.0);
        assert!(e.mesoscopic.abs() < 1e-12);
        assert!(cell.meso_cell_average().abs() < 1e-12);
    }

    #[test]
    fn renormalized_energy_of_reference_extension_is_zero() {
        let model = plain_model(0.5, 3.0, 0.0);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 2.0, 3.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus).unwrap();
        // u_+ extension, overriding the high-side far rule as well
        let interior = vec![1.0; lat.node_count()];
        let f = Field::new(lat, interior, plus.clone(), plus, 1.05).unwrap();
        assert_eq!(sys.f_omega(&f), 0.0);
    }

    #[test]
    fn renormalized_energy_matches_two_pass_difference() {
        let model = plain_model(0.3, 2.0, 0.0);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1]).unwrap(), &[], 4, 0.0, 1.0, 2.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(1, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(1, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let (a, b) = lat.strip();
        let prof = |x: &[f64]| {
            let s = ((x[0] - a) / (b - a)).clamp(0.0, 1.0);
            1.0 - 2.0 * s
        };
        let u = Field::from_fn(lat.clone(), plus.clone(), minus.clone(), prof);
        let f_fused = sys.f_omega(&u);
        // independent two-pass oracle
        let e_u = sys.energy_total(&u, &Region::All).unwrap().total;
        let pref = Field::new(lat.clone(), vec![1.0; lat.node_count()], plus.clone(), plus.clone(), 1.05)
            .unwrap();
        let e_p = sys.energy_total(&pref, &Region::All).unwrap().total;
        assert!(
            (f_fused - (e_u - e_p)).abs() < 1e-12,
            "fused {f_fused} vs two-pass {}",
            e_u - e_p
        );
        assert!(f_fused > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = plain_model(0.45, 1.5, 0.02);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 1.5, 1.5).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let u = Field::from_fn(lat.clone(), plus, minus, |x| {
            0.9 * (1.7 * x[0]).sin() * (0.6 + 0.3 * (2.4 * x[1]).cos())
        });
        let mut grad = Vec::new();
        sys.gradient(&u, &mut grad);
        let step = 1e-5;
        for i in (0..lat.node_count()).step_by(7) {
            let mut up = u.clone();
            up.interior_mut()[i] += step;
            let mut dn = u.clone();
            dn.interior_mut()[i] -= step;
            let ep = sys.energy_total(&up, &Region::All).unwrap().total;
            let en = sys.energy_total(&dn, &Region::All).unwrap().total;
            let fd = (ep - en) / (2.0 * step);
            let scale = grad[i].abs().max(fd.abs()).max(1e-10);
            assert!(
                (grad[i] - fd).abs() / scale < 1e-6,
                "node {i}: grad {} vs fd {}",
                grad[i],
                fd
            );
        }
    }

    #[test]
    fn gradient_is_local_to_kernel_radius() {
        let model = plain_model(0.5, 1.0, 0.0);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 3.0, 1.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let base = Field::constant(lat.clone(), 1.0, plus.clone(), plus.clone());
        let mut grad0 = Vec::new();
        sys.gradient(&base, &mut grad0);
        // constant +1 with eta = 0: exactly stationary
        assert!(grad0.iter().all(|&g| g == 0.0));
        let center = lat.node_count() / 2;
        let mut pert = base.clone();
        pert.interior_mut()[center] = 0.5;
        let mut grad = Vec::new();
        sys.gradient(&pert, &mut grad);
        let pc = lat.node_position(center);
        for i in 0..lat.node_count() {
            let pi = lat.node_position(i);
            let mut d2 = 0.0;
            for (a, b) in pi.iter().zip(&pc) {
                // transverse distance on the quotient circle
                let mut dd = (a - b).abs();
                dd = dd.min(1.0 - dd.min(1.0));
                d2 += dd * dd;
            }
            if grad[i] != 0.0 {
                assert!(
                    d2.sqrt() <= 1.0 + 1e-9,
                    "gradient leaked outside kernel radius at node {i}"
                );
            }
        }
    }

    #[test]
    fn kinetic_invariant_under_constant_shift() {
        let model = plain_model(0.6, 2.0, 0.01);
        let lat = Arc::new(
            build_quotient(Direction::new(&[2, 1]).unwrap(), &[1], 4, 0.0, 1.0, 2.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let u = Field::from_fn(lat.clone(), plus.clone(), minus.clone(), |x| {
            0.4 * (2.3 * x[0] + 0.1 * x[1]).sin()
        });
        let shifted = u.with_interior(u.interior().iter().map(|v| v + 0.25).collect());
        // compare inner kinetic only: the frozen far field does not shift
        let eu = sys
            .kinetic_interaction(&u, &Region::All, &Region::All)
            .unwrap();
        let es = sys
            .kinetic_interaction(&shifted, &Region::All, &Region::All)
            .unwrap();
        assert!((eu - es).abs() < 1e-12);
    }

    #[test]
    fn submodular_kinetic_inequality_random_pair() {
        let model = plain_model(0.5, 2.0, 0.01);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 2.0, 2.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let u = Field::from_fn(lat.clone(), plus.clone(), minus.clone(), |x| {
            (5.0 * x[0] + x[1]).sin()
        });
        let v = Field::from_fn(lat.clone(), plus.clone(), minus.clone(), |x| {
            (3.0 * x[0] - 2.0 * x[1]).cos() * 0.8
        });
        let (mn, mx) = crate::model::submodular_combine(&u, &v).unwrap();
        let half = Region::from_pred(&lat, |i| lat.node_level(i) < 1.0);
        let rest = Region::from_pred(&lat, |i| lat.node_level(i) >= 1.0);
        for (su, sv) in [
            (&Region::All, &Region::All),
            (&half, &rest),
            (&half, &Region::All),
        ] {
            let lhs = sys.kinetic_interaction(&mn, su, sv).unwrap()
                + sys.kinetic_interaction(&mx, su, sv).unwrap();
            let rhs = sys.kinetic_interaction(&u, su, sv).unwrap()
                + sys.kinetic_interaction(&v, su, sv).unwrap();
            assert!(lhs <= rhs + 1e-12, "lhs {lhs} rhs {rhs}");
        }
        // potential rearrangement identity on a common region
        let pu = sys.potential_part(&u, &Region::All).unwrap();
        let pv = sys.potential_part(&v, &Region::All).unwrap();
        let pmn = sys.potential_part(&mn, &Region::All).unwrap();
        let pmx = sys.potential_part(&mx, &Region::All).unwrap();
        assert!(((pmn + pmx) - (pu + pv)).abs() < 1e-12);
    }

    #[test]
    fn submodular_combine_trivial_cases() {
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 1.0, 1.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let u = Field::from_fn(lat.clone(), plus.clone(), minus.clone(), |x| 0.3 * x[0].sin());
        let v = u.with_interior(u.interior().iter().map(|x| x + 0.2).collect());
        let (mn, mx) = crate::model::submodular_combine(&u, &u).unwrap();
        assert_eq!(mn.interior(), u.interior());
        assert_eq!(mx.interior(), u.interior());
        let (mn2, mx2) = crate::model::submodular_combine(&u, &v).unwrap();
        assert_eq!(mn2.interior(), u.interior());
        assert_eq!(mx2.interior(), v.interior());
    }

    #[test]
    fn energy_total_region_error() {
        let model = plain_model(0.5, 1.0, 0.0);
        let lat = Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], 4, 0.0, 1.0, 1.0).unwrap(),
        );
        let plus = Arc::new(UnitCellField::constant(2, 4, 1.0));
        let minus = Arc::new(UnitCellField::constant(2, 4, -1.0));
        let sys = StripSystem::new(lat.clone(), model, plus.clone(), minus.clone()).unwrap();
        let f = Field::constant(lat, 0.5, plus, minus);
        let bad = Region::Mask(vec![true; 3]);
        assert!(sys.energy_total(&f, &bad).is_err());
    }
}
