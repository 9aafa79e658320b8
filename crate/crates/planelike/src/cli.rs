//! Batch commands: compute phases, minimize along a direction, sweep
//! directions, fit ball-energy scaling, run the verification suite and
//! approximate irrational directions. Each command writes snapshots, a
//! JSON-lines check report and a manifest under the configured output
//! directory, and reports named check failures.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{
    birkhoff_check, cube_translations, energy_scaling, interface_width, rational_approximation,
    unconstrained_check, window_sup_gap, AnalysisError,
};
use crate::config::{ConfigError, RunConfig};
use crate::energy::{Region, StripSystem};
use crate::lattice::{build_quotient, Direction, Field, LatticeQuotient};
use crate::model::{submodular_combine, ModelSpec};
use crate::persistence::{
    save_field, write_report, write_scaling_csv, ExperimentManifest, ManifestArtifact, PersistError,
    Record,
};
use crate::solver::{
    brute_force_minimize, constrained_minimize, linear_profile, minimal_minimizer,
    pure_phase_minimize, AdmissibleClass, PurePhases, SolverError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("artifact error: {0}")]
    Artifact(#[from] PersistError),
    #[error("{0}")]
    Analysis(String),
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::Solver(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Solver(s) => CliError::Solver(s.to_string()),
            other => CliError::Analysis(other.to_string()),
        }
    }
}

impl From<crate::energy::EnergyError> for CliError {
    fn from(e: crate::energy::EnergyError) -> Self {
        CliError::Analysis(e.to_string())
    }
}

impl From<crate::lattice::LatticeError> for CliError {
    fn from(e: crate::lattice::LatticeError) -> Self {
        CliError::Analysis(e.to_string())
    }
}

/// Stable exit codes: 0 pass, 1 check failure, 2 config error, 3 solver
/// non-convergence.
pub fn exit_code(result: &Result<CommandReport, CliError>) -> i32 {
    match result {
        Ok(report) if report.failures.is_empty() => 0,
        Ok(_) => 1,
        Err(CliError::Config(_)) => 2,
        Err(CliError::Artifact(_)) => 2,
        Err(CliError::Analysis(_)) => 1,
        Err(CliError::Solver(_)) => 3,
    }
}

#[derive(Debug, Default)]
pub struct CommandReport {
    pub records: Vec<Record>,
    pub failures: Vec<String>,
    pub artifacts: Vec<PathBuf>,
}

impl CommandReport {
    fn fail(&mut self, name: impl Into<String>) {
        self.failures.push(name.into());
    }
}

fn direction_of(cfg: &RunConfig) -> Result<Direction, CliError> {
    Direction::new(&cfg.lattice.omega)
        .map_err(|e| CliError::Analysis(format!("lattice.omega: {e}")))
}

fn phases_of(cfg: &RunConfig, model: &ModelSpec) -> Result<PurePhases, CliError> {
    Ok(pure_phase_minimize(
        model,
        cfg.lattice.dim,
        cfg.lattice.n,
        &cfg.solver,
    )?)
}

fn strip_context(
    cfg: &RunConfig,
    model: &ModelSpec,
    phases: &PurePhases,
    direction: &Direction,
    strip: (f64, f64),
) -> Result<(Arc<LatticeQuotient>, StripSystem, AdmissibleClass), CliError> {
    let m = if cfg.lattice.m.len() == direction.dim() - 1 {
        cfg.lattice.m.clone()
    } else {
        vec![1; direction.dim() - 1]
    };
    let lat = Arc::new(build_quotient(
        direction.clone(),
        &m,
        cfg.lattice.n,
        strip.0,
        strip.1,
        cfg.margin(),
    )?);
    let sys = StripSystem::new(
        lat.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let class = AdmissibleClass::new(lat.clone(), model.delta0());
    Ok((lat, sys, class))
}

struct OutputSink {
    dir: PathBuf,
    manifest: ExperimentManifest,
    records: Vec<Record>,
}

impl OutputSink {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            dir: cfg.run.out.clone(),
            manifest: ExperimentManifest::new(cfg.solver.seed, cfg.to_toml()),
            records: Vec::new(),
        }
    }

    fn snapshot(&mut self, field: &Field, model_hash: u64, name: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let sha = save_field(field, model_hash, &path)?;
        self.manifest.snapshots.push(ManifestArtifact {
            path: name.to_string(),
            sha256: sha,
        });
        Ok(())
    }

    fn csv(&mut self, rows: &[(f64, crate::model::EnergyBreakdown)], name: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        write_scaling_csv(rows, &path)?;
        self.manifest.reports.push(ManifestArtifact {
            path: name.to_string(),
            sha256: crate::persistence::sha256_file(&path)?,
        });
        Ok(())
    }

    fn finish(mut self, report: &mut CommandReport) -> Result<(), CliError> {
        let checks = self.dir.join("checks.jsonl");
        write_report(&self.records, &checks)?;
        self.manifest.reports.push(ManifestArtifact {
            path: "checks.jsonl".to_string(),
            sha256: crate::persistence::sha256_file(&checks)?,
        });
        self.manifest.write(&self.dir.join("manifest.json"))?;
        report.artifacts.push(self.dir.join("manifest.json"));
        report.artifacts.push(checks);
        report.records = self.records;
        Ok(())
    }
}

/// Computes the periodic pure phases and records their deviation and
/// energies.
pub fn cmd_phases(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let model = cfg.model.clone();
    let phases = phases_of(cfg, &model)?;
    let direction = direction_of(cfg)?;
    let (lat, sys, _) = strip_context(
        cfg,
        &model,
        &phases,
        &direction,
        (cfg.lattice.strip_lo, cfg.lattice.strip_hi),
    )?;
    for (name, cell) in [("phase_plus.plk", &phases.u_plus), ("phase_minus.plk", &phases.u_minus)] {
        let interior: Vec<f64> = (0..lat.node_count())
            .map(|i| cell.sample(&lat.node_grid(i)))
            .collect();
        let field = sys.field_from_interior(interior)?;
        sink.snapshot(&field, model.hash64(), name)?;
    }
    let mut rec = Record::new("pure_phases");
    rec.set("delta_eta", phases.delta_eta)?;
    rec.set("eta", model.meso.eta)?;
    rec.set("energy_plus", phases.energy_plus.total)?;
    rec.set("energy_minus", phases.energy_minus.total)?;
    rec.set("energy_gap", (phases.energy_plus.total - phases.energy_minus.total).abs())?;
    rec.set("iterations_plus", phases.iterations.0)?;
    rec.set("iterations_minus", phases.iterations.1)?;
    let pass = (phases.energy_plus.total - phases.energy_minus.total).abs() <= 1e-10;
    rec.set("pass", pass)?;
    if !pass {
        report.fail("pure-phase energies differ");
    }
    sink.records.push(rec);
    sink.finish(&mut report)?;
    Ok(report)
}

/// Full pipeline for one direction: minimal minimizer, interface width,
/// translation ordering and strip-enlargement checks, snapshots.
pub fn cmd_minimize(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let model = cfg.model.clone();
    let phases = phases_of(cfg, &model)?;
    let direction = direction_of(cfg)?;
    let un = unconstrained_check(
        &model,
        &phases,
        &direction,
        cfg.lattice.n,
        cfg.lattice.strip_lo,
        cfg.lattice.strip_hi,
        cfg.margin(),
        &cfg.run.enlargements,
        &cfg.solver,
    )?;
    let base = &un.base.result;
    let (lat, sys, _class) = strip_context(
        cfg,
        &model,
        &phases,
        &direction,
        (cfg.lattice.strip_lo, cfg.lattice.strip_hi),
    )?;
    sink.snapshot(&base.field, model.hash64(), "minimizer.plk")?;
    let _ = &sys;

    let mut rec = Record::new("minimal_minimizer");
    rec.set("f_omega", base.f_omega)?;
    rec.set("iterations", base.iterations)?;
    rec.set("grad_norm", base.final_grad_norm)?;
    rec.set("converged", base.converged)?;
    rec.set("active_lower_band", base.active.lower_band)?;
    rec.set("active_upper_band", base.active.upper_band)?;
    rec.set("members", un.base.member_energies.clone())?;
    sink.records.push(rec);
    if !base.converged {
        return Err(CliError::Solver("minimal minimizer did not converge".into()));
    }

    let width = &un.base_width;
    let mut rec = Record::new("interface_width");
    rec.set("direction", width.direction.clone())?;
    rec.set("theta", width.theta)?;
    rec.set("width", width.width)?;
    rec.set("empty", width.empty)?;
    rec.set("dist_upper", width.dist_upper)?;
    let norm = direction.norm();
    let width_pass = width.width <= (cfg.lattice.strip_hi - cfg.lattice.strip_lo) / norm;
    rec.set("pass", width_pass)?;
    sink.records.push(rec);
    if !width_pass {
        report.fail("interface width exceeds the strip");
    }

    let birk = birkhoff_check(
        &lat,
        &base.field,
        &cfg.run.levels,
        &cube_translations(direction.dim(), 2),
        1e-6,
    );
    let mut rec = Record::new("birkhoff");
    rec.set("violations", birk.total_violations)?;
    rec.set("tolerance", birk.tolerance)?;
    rec.set("translations", birk.entries.len())?;
    rec.set("pass", birk.total_violations == 0)?;
    sink.records.push(rec);
    if birk.total_violations > 0 {
        report.fail("birkhoff ordering violated");
    }

    let mut rec = Record::new("unconstrained");
    rec.set("constrained", un.constrained)?;
    rec.set(
        "upward_sup",
        un.upward.iter().map(|c| c.sup_diff).collect::<Vec<f64>>(),
    )?;
    rec.set(
        "upward_active",
        un.upward
            .iter()
            .map(|c| c.upper_band_active as i64)
            .collect::<Vec<i64>>(),
    )?;
    rec.set(
        "two_sided_energy_gap",
        un.two_sided
            .iter()
            .map(|c| (c.f_base_extended - c.f_enlarged_minimal).abs())
            .collect::<Vec<f64>>(),
    )?;
    let unconstrained_pass = !un.constrained
        && un
            .upward
            .iter()
            .all(|c| c.sup_diff <= 1e-5 && c.upper_band_active == 0)
        && un.two_sided.iter().all(|c| {
            (c.f_base_extended - c.f_enlarged_minimal).abs()
                <= 1e-8 * c.f_base_extended.abs().max(1.0)
        });
    rec.set("pass", unconstrained_pass)?;
    sink.records.push(rec);
    if un.constrained {
        report.fail("strip too narrow: upper constraint active (informative)");
    } else if !unconstrained_pass {
        report.fail("unconstrained transition violated");
    }

    sink.finish(&mut report)?;
    Ok(report)
}

/// Interface widths across a direction set and their max/min ratio.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let model = cfg.model.clone();
    let phases = phases_of(cfg, &model)?;
    let theta = 1.0 - model.delta0();
    let mut widths = Vec::new();
    for omega in &cfg.run.directions {
        let direction =
            Direction::new(omega).map_err(|e| CliError::Analysis(format!("run.directions: {e}")))?;
        let (lat, sys, class) = strip_context(
            cfg,
            &model,
            &phases,
            &direction,
            (cfg.lattice.strip_lo, cfg.lattice.strip_hi),
        )?;
        let out = minimal_minimizer(&sys, &class, &cfg.solver)?;
        if !out.result.converged {
            return Err(CliError::Solver(format!(
                "sweep direction {omega:?} did not converge"
            )));
        }
        let w = interface_width(&lat, &out.result.field, theta, model.delta0());
        let name = format!(
            "minimizer_{}.plk",
            omega
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("_")
        );
        sink.snapshot(&out.result.field, model.hash64(), &name)?;
        let mut rec = Record::new("sweep_width");
        rec.set("direction", omega.clone())?;
        rec.set("theta", theta)?;
        rec.set("width", w.width)?;
        rec.set("dist_upper", w.dist_upper)?;
        rec.set("f_omega", out.result.f_omega)?;
        let contained = w.width <= (cfg.lattice.strip_hi - cfg.lattice.strip_lo) / direction.norm();
        rec.set("contained", contained)?;
        sink.records.push(rec);
        if !contained {
            report.fail(format!("direction {omega:?}: band leaves the strip"));
        }
        widths.push(w.width.max(1e-12));
    }
    let ratio = widths.iter().cloned().fold(0.0, f64::max)
        / widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut rec = Record::new("width_ratio");
    rec.set("ratio", ratio)?;
    rec.set("widths", widths)?;
    rec.set("pass", ratio <= 2.0)?;
    sink.records.push(rec);
    if ratio > 2.0 {
        report.fail(format!("width ratio {ratio:.3} exceeds 2"));
    }
    sink.finish(&mut report)?;
    Ok(report)
}

/// Ball-energy growth exponents for each configured fractional exponent.
pub fn cmd_scaling(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let direction = direction_of(cfg)?;
    let norm = direction.norm();
    let r_max = cfg.run.radii.iter().cloned().fold(0.0, f64::max);
    // a strip wide enough to center every ball strictly inside
    let strip_hi = (2.0 * (r_max + 2.0) + 6.0) * norm;
    for &s in &cfg.run.s_values {
        let mut model = cfg.model.clone();
        model.kernel.s = s;
        let phases = phases_of(cfg, &model)?;
        let (lat, sys, class) = strip_context(cfg, &model, &phases, &direction, (0.0, strip_hi))?;
        let res = constrained_minimize(&sys, &class, &linear_profile(&sys), &cfg.solver)?;
        if !res.converged {
            return Err(CliError::Solver(format!("scaling solve s={s} did not converge")));
        }
        let w = interface_width(&lat, &res.field, 1.0 - model.delta0(), model.delta0());
        let mid_level = if w.empty {
            0.5 * strip_hi / norm
        } else {
            0.5 * (w.band_lo + w.band_hi)
        };
        let t_center = (mid_level * norm * f64::from(cfg.lattice.n)).round() as i64;
        let center = lat.basis().compose(&vec![0; direction.dim() - 1], t_center);
        let mut eval_kernel = model.kernel.clone();
        eval_kernel.truncation_radius = cfg.run.scaling_truncation;
        let scaling = energy_scaling(&sys, &res.field, &eval_kernel, &center, &cfg.run.radii)?;
        let rows: Vec<(f64, crate::model::EnergyBreakdown)> = scaling
            .radii
            .iter()
            .cloned()
            .zip(scaling.energies.iter().cloned())
            .collect();
        sink.csv(&rows, &format!("scaling_s{s}.csv"))?;
        let mut rec = Record::new("energy_scaling");
        rec.set("s", s)?;
        rec.set("fitted_slope", scaling.fitted_slope)?;
        rec.set("reference_slope", scaling.reference_slope)?;
        rec.set("log_residual_slope", scaling.log_residual_slope)?;
        rec.set("radii", scaling.radii.clone())?;
        let mut pass = (scaling.fitted_slope - scaling.reference_slope).abs() <= 0.3;
        if s == 0.5 {
            pass = pass && scaling.log_residual_slope > 0.0;
        }
        rec.set("pass", pass)?;
        sink.records.push(rec);
        if !pass {
            report.fail(format!(
                "scaling s={s}: slope {:.3} vs reference {:.3}",
                scaling.fitted_slope, scaling.reference_slope
            ));
        }
    }
    sink.finish(&mut report)?;
    Ok(report)
}

/// Small-scale property suite: rearrangement inequalities, gradient
/// consistency, oracle equivalence, ordering and doubling.
pub fn cmd_verify(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let mut model = cfg.model.clone();
    model.kernel.truncation_radius = model.kernel.truncation_radius.min(3.0);
    let n = 8u32;
    let phases = pure_phase_minimize(&model, 2, n, &cfg.solver)?;
    let direction = Direction::new(&[1, 0]).expect("axis");
    let lat = Arc::new(build_quotient(
        direction.clone(),
        &[1],
        n,
        0.0,
        4.0,
        model.kernel.truncation_radius,
    )?);
    let sys = StripSystem::new(
        lat.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let class = AdmissibleClass::new(lat.clone(), model.delta0());
    let bound = model.box_bound();

    // rearrangement inequalities over seeded random pairs
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.solver.seed);
    let mut worst_kin: f64 = f64::INFINITY;
    let mut worst_pot: f64 = 0.0;
    let half = Region::from_pred(&lat, |i| lat.node_level(i) < 2.0);
    let other = Region::from_pred(&lat, |i| lat.node_level(i) >= 2.0);
    for _ in 0..200 {
        let mk = |rng: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..lat.node_count())
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            sys.field_from_interior(vals).expect("in box")
        };
        let u = mk(&mut rng);
        let v = mk(&mut rng);
        let (mn, mx) = submodular_combine(&u, &v).map_err(|e| CliError::Analysis(e.to_string()))?;
        for (su, sv) in [(&Region::All, &Region::All), (&half, &other)] {
            let lhs = sys.kinetic_interaction(&mn, su, sv)? + sys.kinetic_interaction(&mx, su, sv)?;
            let rhs = sys.kinetic_interaction(&u, su, sv)? + sys.kinetic_interaction(&v, su, sv)?;
            worst_kin = worst_kin.min(rhs - lhs);
        }
        let gap = (sys.potential_part(&mn, &Region::All)? + sys.potential_part(&mx, &Region::All)?)
            - (sys.potential_part(&u, &Region::All)? + sys.potential_part(&v, &Region::All)?);
        worst_pot = worst_pot.max(gap.abs());
    }
    let mut rec = Record::new("submodularity");
    rec.set("pairs", 200usize)?;
    rec.set("worst_kinetic_slack", worst_kin)?;
    rec.set("worst_potential_gap", worst_pot)?;
    let pass = worst_kin >= -1e-12 && worst_pot <= 1e-12;
    rec.set("pass", pass)?;
    sink.records.push(rec);
    if !pass {
        report.fail("rearrangement inequality violated");
    }

    // gradient against central finite differences
    let fd_lat = Arc::new(build_quotient(
        direction.clone(),
        &[1],
        n,
        0.0,
        2.0,
        model.kernel.truncation_radius,
    )?);
    let fd_sys = StripSystem::new(
        fd_lat.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let mut worst_rel: f64 = 0.0;
    let step = 1e-5;
    for _ in 0..20 {
        let vals: Vec<f64> = (0..fd_lat.node_count())
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        let u = fd_sys.field_from_interior(vals)?;
        let mut grad = Vec::new();
        fd_sys.gradient(&u, &mut grad);
        for i in (0..fd_lat.node_count()).step_by(11) {
            let mut up = u.clone();
            up.interior_mut()[i] += step;
            let mut dn = u.clone();
            dn.interior_mut()[i] -= step;
            let fd = (fd_sys.f_omega(&up) - fd_sys.f_omega(&dn)) / (2.0 * step);
            let scale = grad[i].abs().max(fd.abs()).max(1e-10);
            worst_rel = worst_rel.max((grad[i] - fd).abs() / scale);
        }
    }
    let mut rec = Record::new("gradient_check");
    rec.set("fields", 20usize)?;
    rec.set("worst_relative_error", worst_rel)?;
    rec.set("pass", worst_rel <= 1e-6)?;
    sink.records.push(rec);
    if worst_rel > 1e-6 {
        report.fail("gradient/finite-difference mismatch");
    }

    // oracle equivalence on tiny 1d instances
    let mut worst_gap: f64 = 0.0;
    let phases1 = pure_phase_minimize(&model, 1, 1, &cfg.solver)?;
    for (idx, b_hi) in [2.0, 3.0, 4.0].iter().enumerate() {
        let lat1 = Arc::new(build_quotient(
            Direction::new(&[1]).expect("axis"),
            &[],
            1,
            0.0,
            *b_hi,
            model.kernel.truncation_radius.min(2.0),
        )?);
        let mut m1 = model.clone();
        m1.kernel.truncation_radius = model.kernel.truncation_radius.min(2.0);
        let sys1 = StripSystem::new(
            lat1.clone(),
            m1.clone(),
            phases1.u_plus.clone(),
            phases1.u_minus.clone(),
        )?;
        let class1 = AdmissibleClass::new(lat1.clone(), m1.delta0());
        let d0 = m1.delta0();
        let levels = [-1.0 - d0, -1.0, -1.0 + d0, 0.0, 1.0 - d0, 1.0, 1.0 + d0];
        let bf = brute_force_minimize(&sys1, &class1, &levels)?;
        let refined = constrained_minimize(&sys1, &class1, &bf, &cfg.solver)?;
        let mut opts1 = cfg.solver.clone();
        opts1.seed = cfg.solver.seed.wrapping_add(idx as u64);
        let solved = minimal_minimizer(&sys1, &class1, &opts1)?;
        worst_gap = worst_gap.max((solved.result.f_omega - refined.f_omega).abs());
    }
    let mut rec = Record::new("oracle_equivalence");
    rec.set("instances", 3usize)?;
    rec.set("worst_energy_gap", worst_gap)?;
    rec.set("pass", worst_gap <= 1e-9)?;
    sink.records.push(rec);
    if worst_gap > 1e-9 {
        report.fail("descent missed the brute-force optimum");
    }

    // ordering and doubling on a computed minimizer
    let lat21 = Arc::new(build_quotient(
        Direction::new(&[2, 1]).expect("nonzero"),
        &[1],
        n,
        0.0,
        6.0,
        model.kernel.truncation_radius,
    )?);
    let sys21 = StripSystem::new(
        lat21.clone(),
        model.clone(),
        phases.u_plus.clone(),
        phases.u_minus.clone(),
    )?;
    let class21 = AdmissibleClass::new(lat21.clone(), model.delta0());
    let out21 = minimal_minimizer(&sys21, &class21, &cfg.solver)?;
    let birk = birkhoff_check(
        &lat21,
        &out21.result.field,
        &cfg.run.levels,
        &cube_translations(2, 2),
        1e-6,
    );
    let mut rec = Record::new("birkhoff_small");
    rec.set("violations", birk.total_violations)?;
    rec.set("pass", birk.total_violations == 0)?;
    sink.records.push(rec);
    if birk.total_violations > 0 {
        report.fail("ordering violated on verify-scale minimizer");
    }

    let doubled = crate::solver::doubled_period_minimize(
        &model,
        &phases,
        &direction,
        &[2],
        n,
        0.0,
        4.0,
        model.kernel.truncation_radius,
        &cfg.solver,
    )?;
    let rel = (doubled.f_tiled - doubled.copies * doubled.f_base).abs()
        / doubled.f_base.abs().max(1e-300);
    let mut rec = Record::new("doubling");
    rec.set("energy_identity_rel", rel)?;
    rec.set("sup_diff", doubled.sup_diff)?;
    let pass = rel <= 1e-10 && doubled.sup_diff <= 1e-6;
    rec.set("pass", pass)?;
    sink.records.push(rec);
    if !pass {
        report.fail("doubling property violated");
    }

    let _ = class;
    sink.finish(&mut report)?;
    Ok(report)
}

/// Rational approximants of an irrational direction and the convergence of
/// their minimizers on a fixed window.
pub fn cmd_irrational(cfg: &RunConfig) -> Result<CommandReport, CliError> {
    cfg.validate()?;
    let mut report = CommandReport::default();
    let mut sink = OutputSink::new(cfg);
    let model = cfg.model.clone();
    let target = cfg
        .lattice
        .omega_real
        .clone()
        .unwrap_or_else(|| vec![1.0, std::f64::consts::SQRT_2]);
    let dirs = rational_approximation(&target, cfg.run.approximants)?;
    let mut rec = Record::new("approximants");
    for (j, d) in dirs.iter().enumerate() {
        rec.set(&format!("omega_{j}"), d.components().to_vec())?;
    }
    sink.records.push(rec);
    let phases = phases_of(cfg, &model)?;
    let mut fields: Vec<Field> = Vec::new();
    for d in &dirs {
        let strip_hi = cfg.run.irrational_width * d.norm();
        let (_lat, sys, class) = strip_context(cfg, &model, &phases, d, (0.0, strip_hi))?;
        let out = minimal_minimizer(&sys, &class, &cfg.solver)?;
        if !out.result.converged {
            return Err(CliError::Solver(format!(
                "approximant {:?} did not converge",
                d.components()
            )));
        }
        let name = format!(
            "minimizer_{}.plk",
            d.components()
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("_")
        );
        sink.snapshot(&out.result.field, model.hash64(), &name)?;
        fields.push(out.result.field);
    }
    let w = cfg.run.window;
    let gaps: Vec<f64> = fields
        .windows(2)
        .map(|pair| window_sup_gap(&pair[0], &pair[1], -w, w))
        .collect();
    let decreasing = gaps.windows(2).all(|g| g[1] < g[0]);
    let mut rec = Record::new("window_convergence");
    rec.set("gaps", gaps.clone())?;
    rec.set("window", w)?;
    rec.set("pass", decreasing)?;
    sink.records.push(rec);
    if !decreasing {
        report.fail(format!("window gaps not strictly decreasing: {gaps:?}"));
    }
    sink.finish(&mut report)?;
    Ok(report)
}

/// Dispatches a named subcommand.
pub fn run_command(name: &str, cfg: &RunConfig) -> Result<CommandReport, CliError> {
    match name {
        "phases" => cmd_phases(cfg),
        "minimize" => cmd_minimize(cfg),
        "sweep" => cmd_sweep(cfg),
        "scaling" => cmd_scaling(cfg),
        "verify" => cmd_verify(cfg),
        "irrational" => cmd_irrational(cfg),
        other => Err(CliError::Analysis(format!("unknown command {other}"))),
    }
}

/// Renders pass/fail lines for the terminal.
pub fn summary_lines(report: &CommandReport) -> Vec<String> {
    let mut lines = Vec::new();
    for rec in &report.records {
        let name = match rec.get("check") {
            Some(crate::persistence::Value::Str(s)) => s.clone(),
            _ => "check".to_string(),
        };
        let status = match rec.get("pass") {
            Some(crate::persistence::Value::Bool(true)) => "PASS",
            Some(crate::persistence::Value::Bool(false)) => "FAIL",
            _ => "info",
        };
        lines.push(format!("[{status}] {name}"));
    }
    for f in &report.failures {
        lines.push(format!("[FAIL] {f}"));
    }
    lines
}

/// Resolves the thread count: explicit flag, else environment, else config.
pub fn thread_count(flag: Option<usize>, cfg: &RunConfig) -> usize {
    flag.or_else(|| {
        std::env::var("PLANELIKE_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(cfg.run.threads)
}

/// Runs `f` inside a rayon pool of `threads` workers (0 = default pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Convenience used by tests: run a command into a fresh directory.
pub fn run_into(name: &str, cfg: &RunConfig, out: &Path) -> Result<CommandReport, CliError> {
    let mut cfg = cfg.clone();
    cfg.run.out = out.to_path_buf();
    run_command(name, &cfg)
}
