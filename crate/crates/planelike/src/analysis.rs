//! Executable structure checks for computed minimizers: level-set ordering
//! under integer translations, interface width, ball energy growth,
//! insensitivity to strip enlargement, an empirical Hölder quotient, and
//! rational approximation of irrational directions.

use std::sync::Arc;

use thiserror::Error;

use crate::energy::{EnergyError, StripSystem};
use crate::lattice::{build_quotient, translate, Direction, Field, LatticeError, LatticeQuotient};
use crate::model::{EnergyBreakdown, KernelSpec, ModelSpec};
use crate::solver::{
    minimal_minimizer, AdmissibleClass, MinimalOutcome, PurePhases, SolverError, SolverOptions,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("subdomain is empty")]
    EmptySubdomain,
    #[error("direction vector must be nonzero")]
    ZeroVector,
    #[error("ball energies must be positive to fit a log-log slope (got {0})")]
    NonPositiveEnergy(f64),
    #[error("need at least two radii for a slope fit")]
    TooFewRadii,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// All nonzero integer vectors with `|k_i| <= radius`.
pub fn cube_translations(dim: usize, radius: i64) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut k = vec![-radius; dim];
    loop {
        if k.iter().any(|&x| x != 0) {
            out.push(k.clone());
        }
        let mut d = 0;
        loop {
            k[d] += 1;
            if k[d] <= radius {
                break;
            }
            k[d] = -radius;
            d += 1;
            if d == dim {
                return out;
            }
        }
    }
}

/// Ordering violations of one translated level-set inclusion.
#[derive(Debug, Clone)]
pub struct BirkhoffEntry {
    pub k: Vec<i64>,
    pub omega_dot_k: i64,
    pub theta: f64,
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct BirkhoffReport {
    pub entries: Vec<BirkhoffEntry>,
    pub total_violations: usize,
    pub tolerance: f64,
}

/// Checks that superlevel sets of the field are ordered under integer
/// translations according to the sign of `omega . k`. Violations are counted
/// only outside a two-sided tolerance band.
pub fn birkhoff_check(
    lattice: &Arc<LatticeQuotient>,
    field: &Field,
    levels: &[f64],
    translations: &[Vec<i64>],
    tol: f64,
) -> BirkhoffReport {
    let mut entries = Vec::new();
    let mut total = 0usize;
    for k in translations {
        let s = lattice.direction().dot(k);
        let shifted = translate(lattice, field, k);
        for &theta in levels {
            let mut violations = 0usize;
            for (tu, u) in shifted.interior().iter().zip(field.interior()) {
                let bad = if s <= 0 {
                    // expect {tau_k u > theta} inside {u > theta}
                    *tu > theta + tol && *u < theta - tol
                } else {
                    *u > theta + tol && *tu < theta - tol
                };
                if bad {
                    violations += 1;
                }
            }
            total += violations;
            entries.push(BirkhoffEntry {
                k: k.clone(),
                omega_dot_k: s,
                theta,
                violations,
            });
        }
    }
    BirkhoffReport {
        entries,
        total_violations: total,
        tolerance: tol,
    }
}

/// Width of the `|u| < theta` transition band along the direction.
#[derive(Debug, Clone)]
pub struct WidthReport {
    pub direction: Vec<i64>,
    pub strip: (f64, f64),
    pub theta: f64,
    /// sup - inf of the normalized level over the band (0 when empty).
    pub width: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    pub empty: bool,
    /// Euclidean distance from `{u > -1 + delta0}` to the upper strip plane.
    pub dist_upper: f64,
}

pub fn interface_width(
    lattice: &Arc<LatticeQuotient>,
    field: &Field,
    theta: f64,
    delta0: f64,
) -> WidthReport {
    let norm = lattice.direction().norm();
    let (a, b) = lattice.strip();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut sup_level_above = f64::NEG_INFINITY;
    for (i, &v) in field.interior().iter().enumerate() {
        let level = lattice.node_level(i) / norm;
        if v.abs() < theta {
            lo = lo.min(level);
            hi = hi.max(level);
        }
        if v > -1.0 + delta0 {
            sup_level_above = sup_level_above.max(level);
        }
    }
    let empty = lo > hi;
    WidthReport {
        direction: lattice.direction().components().to_vec(),
        strip: (a, b),
        theta,
        width: if empty { 0.0 } else { hi - lo },
        band_lo: if empty { 0.0 } else { lo },
        band_hi: if empty { 0.0 } else { hi },
        empty,
        dist_upper: b / norm - sup_level_above,
    }
}

/// Log-log growth of ball energies against the predicted interface scaling.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub s: f64,
    pub radii: Vec<f64>,
    pub energies: Vec<EnergyBreakdown>,
    pub fitted_slope: f64,
    pub reference_slope: f64,
    /// Slope of `E / R^{N-1}` against `log R`; positive at the critical
    /// exponent where the growth carries a logarithmic correction.
    pub log_residual_slope: f64,
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Evaluates `E(u, B_R)` for each radius under `eval_kernel` and fits the
/// log-log growth exponent.
pub fn energy_scaling(
    sys: &StripSystem,
    field: &Field,
    eval_kernel: &KernelSpec,
    center: &[i64],
    radii: &[f64],
) -> Result<ScalingReport, AnalysisError> {
    if radii.len() < 2 {
        return Err(AnalysisError::TooFewRadii);
    }
    let energies = sys.ball_energy(field, eval_kernel, center, radii)?;
    let mut xs = Vec::with_capacity(radii.len());
    let mut ys = Vec::with_capacity(radii.len());
    let mut resid = Vec::with_capacity(radii.len());
    let dim = sys.lattice.dim() as f64;
    for (r, e) in radii.iter().zip(&energies) {
        if e.total <= 0.0 {
            return Err(AnalysisError::NonPositiveEnergy(e.total));
        }
        xs.push(r.ln());
        ys.push(e.total.ln());
        resid.push(e.total / r.powf(dim - 1.0));
    }
    let fitted = least_squares_slope(&xs, &ys);
    let s = eval_kernel.s;
    let reference = if s < 0.5 { dim - 2.0 * s } else { dim - 1.0 };
    let log_residual = least_squares_slope(&xs, &resid);
    Ok(ScalingReport {
        s,
        radii: radii.to_vec(),
        energies,
        fitted_slope: fitted,
        reference_slope: reference,
        log_residual_slope: log_residual,
    })
}

/// One strip-enlargement comparison.
#[derive(Debug, Clone)]
pub struct EnlargementCheck {
    pub a: f64,
    /// sup-norm disagreement with the base minimizer on the base domain.
    pub sup_diff: f64,
    pub upper_band_active: usize,
    pub dist_upper: f64,
}

/// Energy comparison on the two-sided enlargement, where the minimal
/// minimizer may legitimately move to a translate of equal energy.
#[derive(Debug, Clone)]
pub struct TwoSidedCheck {
    pub a: f64,
    pub f_base_extended: f64,
    pub f_enlarged_minimal: f64,
    pub sup_diff: f64,
}

#[derive(Debug)]
pub struct UnconstrainedReport {
    pub base: MinimalOutcome,
    pub base_width: WidthReport,
    /// True when the upper constraint still pins the base minimizer.
    pub constrained: bool,
    pub upward: Vec<EnlargementCheck>,
    pub two_sided: Vec<TwoSidedCheck>,
}

/// Recomputes the minimal minimizer on strips enlarged upward (field
/// agreement expected) and on two-sided enlargements (energy agreement
/// expected; the minimal element may shift by an integer translate of
/// identical energy there).
#[allow(clippy::too_many_arguments)]
pub fn unconstrained_check(
    model: &ModelSpec,
    phases: &PurePhases,
    direction: &Direction,
    n: u32,
    strip_lo: f64,
    strip_hi: f64,
    margin: f64,
    a_values: &[f64],
    opts: &SolverOptions,
) -> Result<UnconstrainedReport, AnalysisError> {
    let ones = vec![1u64; direction.dim() - 1];
    let solve = |a: f64, b: f64| -> Result<(MinimalOutcome, StripSystem), AnalysisError> {
        let lat = Arc::new(build_quotient(direction.clone(), &ones, n, a, b, margin)?);
        let sys = StripSystem::new(
            lat.clone(),
            model.clone(),
            phases.u_plus.clone(),
            phases.u_minus.clone(),
        )?;
        let class = AdmissibleClass::new(lat, model.delta0());
        let out = minimal_minimizer(&sys, &class, opts)?;
        Ok((out, sys))
    };
    let (base, base_sys) = solve(strip_lo, strip_hi)?;
    let base_lat = base_sys.lattice.clone();
    let base_width = interface_width(&base_lat, &base.result.field, 1.0 - model.delta0(), model.delta0());
    let constrained = base.result.active.upper_band > 0 || base_width.dist_upper < 1.0;
    let mut upward = Vec::new();
    let mut two_sided = Vec::new();
    for &a in a_values {
        let (up, up_sys) = solve(strip_lo, strip_hi + a)?;
        let mut sup = 0.0f64;
        for i in 0..base_lat.node_count() {
            let g = base_lat.node_grid(i);
            sup = sup.max((up.result.field.value_at_grid(&g) - base.result.field.interior()[i]).abs());
        }
        let up_width = interface_width(
            &up_sys.lattice.clone(),
            &up.result.field,
            1.0 - model.delta0(),
            model.delta0(),
        );
        upward.push(EnlargementCheck {
            a,
            sup_diff: sup,
            upper_band_active: up.result.active.upper_band,
            dist_upper: up_width.dist_upper,
        });

        let (two, two_sys) = solve(strip_lo - a, strip_hi + a)?;
        // base minimizer extended onto the two-sided domain via its far rules
        let ext_values: Vec<f64> = (0..two_sys.lattice.node_count())
            .map(|i| base.result.field.value_at_grid(&two_sys.lattice.node_grid(i)))
            .collect();
        let ext = two_sys.field_from_interior(ext_values)?;
        let mut sup2 = 0.0f64;
        for i in 0..base_lat.node_count() {
            let g = base_lat.node_grid(i);
            sup2 = sup2.max((two.result.field.value_at_grid(&g) - base.result.field.interior()[i]).abs());
        }
        two_sided.push(TwoSidedCheck {
            a,
            f_base_extended: two_sys.f_omega(&ext),
            f_enlarged_minimal: two.result.f_omega,
            sup_diff: sup2,
        });
    }
    Ok(UnconstrainedReport {
        base,
        base_width,
        constrained,
        upward,
        two_sided,
    })
}

/// Empirical Hölder quotient: max of `|u(x)-u(y)| / |x-y|^alpha` over pairs
/// inside the subdomain at Euclidean distance >= `inner_margin` from the
/// domain truncation, with pair separations up to one unit.
pub fn holder_seminorm(
    lattice: &Arc<LatticeQuotient>,
    field: &Field,
    alpha: f64,
    inner_margin: f64,
) -> Result<f64, AnalysisError> {
    let norm = lattice.direction().norm();
    let (t_min, t_max) = lattice.t_range();
    let nf = f64::from(lattice.resolution());
    let lo_level = t_min as f64 / nf + inner_margin * norm;
    let hi_level = t_max as f64 / nf - inner_margin * norm;
    let in_sub = |i: usize| {
        let l = lattice.node_level(i);
        l >= lo_level && l <= hi_level
    };
    if !(0..lattice.node_count()).any(&in_sub) {
        return Err(AnalysisError::EmptySubdomain);
    }
    let pair_radius = 1.0f64.min(lattice.margin().max(lattice.spacing()));
    let mut best = 0.0f64;
    for i in 0..lattice.node_count() {
        if !in_sub(i) {
            continue;
        }
        let ui = field.interior()[i];
        for nb in crate::lattice::neighbors_within(lattice, i, pair_radius)? {
            if nb.index > i && in_sub(nb.index) {
                let q = (ui - field.interior()[nb.index]).abs() / nb.dist2.sqrt().powf(alpha);
                best = best.max(q);
            }
        }
    }
    Ok(best)
}

fn continued_fraction_directions(ratio: f64, lead_sign: i64, count: usize) -> Vec<Direction> {
    // convergents p/q of |ratio| with p over the second axis
    let negative = ratio < 0.0;
    let mut x = ratio.abs();
    let (mut p0, mut q0) = (1i64, 0i64);
    let (mut p1, mut q1) = (x.floor() as i64, 1i64);
    let mut out: Vec<(i64, i64)> = vec![(p1, q1)];
    for _ in 0..40 {
        let frac = x - x.floor();
        if frac.abs() < 1e-13 || out.len() >= count {
            break;
        }
        x = 1.0 / frac;
        let a = x.floor() as i64;
        let p2 = a.checked_mul(p1).and_then(|v| v.checked_add(p0));
        let q2 = a.checked_mul(q1).and_then(|v| v.checked_add(q0));
        match (p2, q2) {
            (Some(p2), Some(q2)) if q2 < 1_000_000_000 => {
                p0 = p1;
                q0 = q1;
                p1 = p2;
                q1 = q2;
                out.push((p1, q1));
            }
            _ => break,
        }
    }
    out.into_iter()
        .map(|(p, q)| {
            let pp = if negative { -p } else { p };
            Direction::new(&[q * lead_sign, pp * lead_sign]).expect("nonzero convergent")
        })
        .collect()
}

fn angular_error(omega: &[f64], dir: &Direction) -> f64 {
    let norm_w: f64 = omega.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_v = dir.norm();
    let dot: f64 = omega
        .iter()
        .zip(dir.components())
        .map(|(a, &b)| a * b as f64)
        .sum::<f64>();
    let sign = if dot < 0.0 { -1.0 } else { 1.0 };
    let mut err2 = 0.0;
    for (a, &b) in omega.iter().zip(dir.components()) {
        let d = a / norm_w - sign * b as f64 / norm_v;
        err2 += d * d;
    }
    err2.sqrt()
}

/// Integer directions approximating a real one with strictly decreasing
/// angular error. Rational inputs return their exact direction first and
/// terminate there.
pub fn rational_approximation(
    omega_real: &[f64],
    count: usize,
) -> Result<Vec<Direction>, AnalysisError> {
    if omega_real.iter().all(|&x| x == 0.0) || omega_real.is_empty() {
        return Err(AnalysisError::ZeroVector);
    }
    // exact integer input (after harmless scaling) short-circuits
    let as_int: Option<Vec<i64>> = omega_real
        .iter()
        .map(|&x| {
            let r = x.round();
            ((x - r).abs() < 1e-9 && r.abs() < 1e15).then_some(r as i64)
        })
        .collect();
    if let Some(ints) = as_int {
        if ints.iter().any(|&x| x != 0) {
            return Ok(vec![Direction::new(&ints).expect("nonzero")]);
        }
    }
    let dim = omega_real.len();
    let mut dirs = match dim {
        1 => vec![Direction::new(&[if omega_real[0] < 0.0 { -1 } else { 1 }]).unwrap()],
        2 => {
            if omega_real[0].abs() < 1e-15 {
                vec![Direction::new(&[0, if omega_real[1] < 0.0 { -1 } else { 1 }]).unwrap()]
            } else {
                let lead = if omega_real[0] < 0.0 { -1 } else { 1 };
                continued_fraction_directions(omega_real[1] / omega_real[0], lead, count.max(1))
            }
        }
        _ => {
            // growing-denominator scan emitting strict improvements
            let scale = omega_real
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            let unit: Vec<f64> = omega_real.iter().map(|x| x / scale).collect();
            let mut best = f64::INFINITY;
            let mut out = Vec::new();
            for q in 1..200_000i64 {
                let k: Vec<i64> = unit.iter().map(|x| (x * q as f64).round() as i64).collect();
                if k.iter().all(|&x| x == 0) {
                    continue;
                }
                let dir = Direction::new(&k).expect("nonzero");
                let err = angular_error(omega_real, &dir);
                if err < best * (1.0 - 1e-12) {
                    best = err;
                    out.push(dir);
                    if out.len() >= count || err < 1e-14 {
                        break;
                    }
                }
            }
            out
        }
    };
    dirs.truncate(count.max(1));
    // keep only strict improvements in angular error
    let mut filtered: Vec<Direction> = Vec::new();
    let mut best = f64::INFINITY;
    for d in dirs {
        let err = angular_error(omega_real, &d);
        if err < best - 1e-15 || filtered.is_empty() {
            best = err;
            filtered.push(d);
        }
    }
    Ok(filtered)
}

/// Sup-norm gap of two periodic extensions over the grid points of the box
/// `[lo, hi]^N` (both fields must share the grid resolution).
pub fn window_sup_gap(a: &Field, b: &Field, lo: f64, hi: f64) -> f64 {
    let n = a.lattice().resolution();
    assert_eq!(n, b.lattice().resolution());
    let dim = a.lattice().dim();
    let g_lo = (lo * f64::from(n)).round() as i64;
    let g_hi = (hi * f64::from(n)).round() as i64;
    let mut g = vec![g_lo; dim];
    let mut sup = 0.0f64;
    loop {
        sup = sup.max((a.value_at_grid(&g) - b.value_at_grid(&g)).abs());
        let mut d = 0;
        loop {
            g[d] += 1;
            if g[d] <= g_hi {
                break;
            }
            g[d] = g_lo;
            d += 1;
            if d == dim {
                return sup;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::UnitCellField;

    fn profile_lattice(n: u32, b: f64) -> Arc<LatticeQuotient> {
        Arc::new(
            build_quotient(Direction::new(&[1, 0]).unwrap(), &[1], n, 0.0, b, 1.0).unwrap(),
        )
    }

    fn phase_cells(n: u32) -> (Arc<UnitCellField>, Arc<UnitCellField>) {
        (
            Arc::new(UnitCellField::constant(2, n, 1.0)),
            Arc::new(UnitCellField::constant(2, n, -1.0)),
        )
    }

    #[test]
    fn birkhoff_zero_violations_for_monotone_profile() {
        let lat = profile_lattice(4, 3.0);
        let (lo, hi) = phase_cells(4);
        let f = Field::from_fn(lat.clone(), lo, hi, |x| -(2.0 * (x[0] - 1.5)).tanh());
        let report = birkhoff_check(
            &lat,
            &f,
            &[-0.5, 0.0, 0.5],
            &cube_translations(2, 2),
            1e-6,
        );
        assert_eq!(report.total_violations, 0);
    }

    #[test]
    fn birkhoff_flags_disordered_field() {
        let lat = profile_lattice(4, 3.0);
        let (lo, hi) = phase_cells(4);
        // increasing profile breaks the expected ordering
        let f = Field::from_fn(lat.clone(), lo, hi, |x| (2.0 * (x[0] - 1.5)).tanh());
        let report = birkhoff_check(&lat, &f, &[0.0], &[vec![-1, 0]], 1e-6);
        assert!(report.total_violations > 0);
    }

    #[test]
    fn width_of_pure_phase_is_zero() {
        let lat = profile_lattice(4, 2.0);
        let (lo, hi) = phase_cells(4);
        let f = Field::constant(lat.clone(), 1.0, lo.clone(), hi.clone());
        let w = interface_width(&lat, &f, 0.95, 0.05);
        assert!(w.empty);
        assert_eq!(w.width, 0.0);
        // sharp step: one grid layer at most
        let step = Field::from_fn(lat.clone(), lo, hi, |x| if x[0] <= 1.0 { 1.0 } else { -1.0 });
        let ws = interface_width(&lat, &step, 0.95, 0.05);
        assert!(ws.width <= lat.spacing() * (2.0f64).sqrt());
    }

    #[test]
    fn width_bounded_by_strip_plus_margins() {
        let lat = profile_lattice(4, 2.0);
        let (lo, hi) = phase_cells(4);
        let f = Field::from_fn(lat.clone(), lo, hi, |x| -(x[0] - 1.0).clamp(-1.0, 1.0));
        let w = interface_width(&lat, &f, 0.95, 0.05);
        let (a, b) = lat.strip();
        let bound = (b - a) / lat.direction().norm() + 2.0 * lat.margin();
        assert!(w.width <= bound + 1e-12);
    }

    #[test]
    fn holder_quotient_reference_values() {
        let lat = profile_lattice(4, 2.0);
        let (lo, hi) = phase_cells(4);
        let constant = Field::constant(lat.clone(), 0.5, lo.clone(), hi.clone());
        assert_eq!(holder_seminorm(&lat, &constant, 0.5, 0.5).unwrap(), 0.0);
        // linear profile of unit slope at alpha = 1 has quotient 1
        let linear = Field::from_fn(lat.clone(), lo, hi, |x| (x[0] - 1.0) * 0.5);
        let q = holder_seminorm(&lat, &linear, 1.0, 0.5).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rational_approximation_examples() {
        // exact rational input returns itself
        let same = rational_approximation(&[1.0, 1.0], 4).unwrap();
        assert_eq!(same[0].components(), &[1, 1]);
        assert_eq!(same.len(), 1);
        // (1, sqrt 2): continued-fraction convergents of sqrt 2
        let dirs = rational_approximation(&[1.0, std::f64::consts::SQRT_2], 4).unwrap();
        let comps: Vec<&[i64]> = dirs.iter().map(|d| d.components()).collect();
        assert_eq!(comps[0], &[1, 1]);
        assert_eq!(comps[1], &[2, 3]);
        assert_eq!(comps[2], &[5, 7]);
        // strictly decreasing angular errors
        let target = [1.0, std::f64::consts::SQRT_2];
        let errs: Vec<f64> = dirs.iter().map(|d| angular_error(&target, d)).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn rational_approximation_three_dim() {
        let target = [1.0, std::f64::consts::SQRT_2, std::f64::consts::E];
        let dirs = rational_approximation(&target, 3).unwrap();
        assert!(dirs.len() >= 2);
        let errs: Vec<f64> = dirs.iter().map(|d| angular_error(&target, d)).collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn slope_fit_recovers_power_law() {
        let xs: Vec<f64> = (3..=12).map(|r| (r as f64).ln()).collect();
        let ys: Vec<f64> = (3..=12).map(|r| 1.5 * (r as f64).ln() + 0.3).collect();
        assert!((least_squares_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn window_gap_of_identical_fields_is_zero() {
        let lat = profile_lattice(4, 2.0);
        let (lo, hi) = phase_cells(4);
        let f = Field::from_fn(lat.clone(), lo, hi, |x| (x[0] - 1.0).clamp(-1.0, 1.0));
        assert_eq!(window_sup_gap(&f, &f, -1.0, 1.0), 0.0);
    }
}
