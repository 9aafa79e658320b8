//! Energy data: interaction kernel, double-well potential and mesoscopic
//! forcing, plus the scalar shape functions they are assembled from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::Field;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("fractional exponent s must lie in (0,1), got {0}")]
    BadExponent(f64),
    #[error("ellipticity bounds must satisfy 0 < lambda <= Lambda (got {0}, {1})")]
    BadEllipticity(f64, f64),
    #[error("truncation radius must be >= 1 (got {0})")]
    BadTruncation(f64),
    #[error("delta0 must lie in (0, 1/10), got {0}")]
    BadDelta0(f64),
    #[error("potential modulation amplitude must lie in [0,1), got {0}")]
    BadPotentialAmplitude(f64),
    #[error("mesoscopic amplitude eta must be >= 0, got {0}")]
    BadEta(f64),
    #[error("kernel evaluated on the diagonal x = y")]
    SingularDiagonal,
    #[error("fields live on different lattices")]
    ShapeMismatch,
}

/// Interface-energy growth correction: `R^{1-2s}` below the critical exponent,
/// `log R` at `s = 1/2`, constant above.
pub fn psi_s(s: f64, r: f64) -> Result<f64, ModelError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(ModelError::BadExponent(s));
    }
    Ok(if s < 0.5 {
        r.powf(1.0 - 2.0 * s)
    } else if s == 0.5 {
        r.ln()
    } else {
        1.0
    })
}

/// Truncated elliptic kernel `K(x,y) = a(x,y) |x-y|^{-(N+2s)}` for
/// `|x-y| <= truncation_radius`, zero beyond.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub s: f64,
    pub lambda: f64,
    pub lambda_cap: f64,
    /// Amplitude of the periodic modulation of `a(x,y)`; zero keeps `a = 1`.
    pub eps_k: f64,
    pub truncation_radius: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            s: 0.5,
            lambda: 1.0,
            lambda_cap: 1.0,
            eps_k: 0.0,
            truncation_radius: 3.0,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(ModelError::BadExponent(self.s));
        }
        if !(0.0 < self.lambda && self.lambda <= self.lambda_cap) {
            return Err(ModelError::BadEllipticity(self.lambda, self.lambda_cap));
        }
        if !(self.truncation_radius >= 1.0) {
            return Err(ModelError::BadTruncation(self.truncation_radius));
        }
        Ok(())
    }

    /// Periodic symmetric modulation, clipped into the ellipticity window.
    pub fn modulation(&self, x: &[f64], y: &[f64]) -> f64 {
        if self.eps_k == 0.0 {
            return 1.0f64.clamp(self.lambda, self.lambda_cap);
        }
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let taper = (-0.5 * d2).exp();
        let raw = 1.0 + self.eps_k * (std::f64::consts::PI * (x[0] + y[0])).cos() * taper;
        raw.clamp(self.lambda, self.lambda_cap)
    }

    /// Radial factor `|x-y|^{-(N+2s)}` truncated at the cutoff; the modulation
    /// multiplies it.
    pub fn radial(&self, dim: usize, dist: f64) -> f64 {
        if dist > self.truncation_radius {
            0.0
        } else {
            dist.powf(-(dim as f64 + 2.0 * self.s))
        }
    }
}

/// Pointwise kernel evaluation; callers must exclude the diagonal.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64, ModelError> {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if d2 == 0.0 {
        return Err(ModelError::SingularDiagonal);
    }
    Ok(spec.modulation(x, y) * spec.radial(x.len(), d2.sqrt()))
}

/// Shape of the even double well `w0`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum WellShape {
    /// `(1 - r^2)^2`
    Quartic,
    /// `1 + cos(pi r)`; the two wells have identical shape, so the potential
    /// is invariant under `r -> r - 2` near the wells.
    Cosine,
}

impl WellShape {
    pub fn value(self, r: f64) -> f64 {
        match self {
            WellShape::Quartic => {
                let q = 1.0 - r * r;
                q * q
            }
            WellShape::Cosine => 1.0 + (std::f64::consts::PI * r).cos(),
        }
    }

    pub fn derivative(self, r: f64) -> f64 {
        match self {
            WellShape::Quartic => 4.0 * r * (r * r - 1.0),
            WellShape::Cosine => -std::f64::consts::PI * (std::f64::consts::PI * r).sin(),
        }
    }
}

/// Double-well potential `W(x, r) = w0(r) (1 + eps_w p(x))` with
/// `p(x) = cos(2 pi x_1) cos(2 pi x_2)` (factors beyond the dimension dropped).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSpec {
    pub delta0: f64,
    pub well: WellShape,
    pub eps_w: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            delta0: 0.05,
            well: WellShape::Quartic,
            eps_w: 0.0,
        }
    }
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.delta0 > 0.0 && self.delta0 < 0.1) {
            return Err(ModelError::BadDelta0(self.delta0));
        }
        if !(0.0..1.0).contains(&self.eps_w) {
            return Err(ModelError::BadPotentialAmplitude(self.eps_w));
        }
        Ok(())
    }

    pub fn spatial_factor(&self, x: &[f64]) -> f64 {
        if self.eps_w == 0.0 {
            return 1.0;
        }
        let tau = 2.0 * std::f64::consts::PI;
        let mut p = 1.0;
        for &xi in x.iter().take(2) {
            p *= (tau * xi).cos();
        }
        1.0 + self.eps_w * p
    }

    pub fn value(&self, x: &[f64], r: f64) -> f64 {
        self.well.value(r) * self.spatial_factor(x)
    }

    pub fn derivative(&self, x: &[f64], r: f64) -> f64 {
        self.well.derivative(r) * self.spatial_factor(x)
    }

    /// Measured lower bound of `W` over `|r| <= theta` (sampled).
    pub fn measured_gamma(&self, theta: f64, samples: usize) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..=samples {
            let r = -theta + 2.0 * theta * i as f64 / samples as f64;
            for corner in [-1.0, 1.0] {
                let factor = 1.0 + self.eps_w * corner;
                best = best.min(self.well.value(r) * factor);
            }
        }
        best
    }

    /// Measured outward-derivative constant beyond the wells (sampled over
    /// `r in [delta0, 1]` on both sides).
    pub fn measured_outward_slope(&self, samples: usize) -> f64 {
        let mut c = f64::INFINITY;
        for i in 0..=samples {
            let r = self.delta0 + (1.0 - self.delta0) * i as f64 / samples as f64;
            for corner in [-1.0, 1.0] {
                let factor = 1.0 + self.eps_w * corner;
                c = c.min(self.well.derivative(1.0 + r) * factor);
                c = c.min(-self.well.derivative(-1.0 - r) * factor);
            }
        }
        c
    }

    /// Measured bound for `W |W_r|` on `r in [-1, 1]` (sampled).
    pub fn measured_w_star(&self, samples: usize) -> f64 {
        let mut w = 0.0f64;
        for i in 0..=samples {
            let r = -1.0 + 2.0 * i as f64 / samples as f64;
            for corner in [-1.0, 1.0] {
                let factor = 1.0 + self.eps_w * corner;
                w = w.max(self.well.value(r) * factor * (self.well.derivative(r) * factor).abs());
            }
        }
        w
    }
}

/// Mesoscopic forcing `H(x) = eta q(x)` with the zero-average periodic shape
/// `q(x) = cos(2 pi x_1)`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MesoSpec {
    pub eta: f64,
}

impl Default for MesoSpec {
    fn default() -> Self {
        Self { eta: 0.01 }
    }
}

impl MesoSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.eta >= 0.0) {
            return Err(ModelError::BadEta(self.eta));
        }
        Ok(())
    }

    pub fn shape(&self, x: &[f64]) -> f64 {
        (2.0 * std::f64::consts::PI * x[0]).cos()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.eta * self.shape(x)
    }
}

/// Complete energy data.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub kernel: KernelSpec,
    pub potential: PotentialSpec,
    pub meso: MesoSpec,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.kernel.validate()?;
        self.potential.validate()?;
        self.meso.validate()
    }

    pub fn delta0(&self) -> f64 {
        self.potential.delta0
    }

    /// Admissible box half-width `1 + delta0`.
    pub fn box_bound(&self) -> f64 {
        1.0 + self.potential.delta0
    }

    /// Stable 64-bit digest of the model data (used in snapshot headers).
    pub fn hash64(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("model serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Energy of a field split by term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyBreakdown {
    pub kinetic_inner: f64,
    pub kinetic_cross: f64,
    pub potential: f64,
    pub mesoscopic: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn compose(kinetic_inner: f64, kinetic_cross: f64, potential: f64, mesoscopic: f64) -> Self {
        Self {
            kinetic_inner,
            kinetic_cross,
            potential,
            mesoscopic,
            total: kinetic_inner + kinetic_cross + potential + mesoscopic,
        }
    }

    pub fn kinetic(&self) -> f64 {
        self.kinetic_inner + self.kinetic_cross
    }
}

/// Pointwise min/max of two fields on the same lattice. Rearranging a pair
/// this way never increases the kinetic energy and leaves the summed
/// potential unchanged.
pub fn submodular_combine(u: &Field, v: &Field) -> Result<(Field, Field), ModelError> {
    if !std::sync::Arc::ptr_eq(u.lattice(), v.lattice())
        && u.lattice().node_count() != v.lattice().node_count()
    {
        return Err(ModelError::ShapeMismatch);
    }
    Ok((u.pointwise_min(v), u.pointwise_max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_s_reference_values() {
        assert_eq!(psi_s(0.75, 10.0).unwrap(), 1.0);
        assert!((psi_s(0.25, 4.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((psi_s(0.5, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        assert!(psi_s(1.2, 3.0).is_err());
        assert!(psi_s(0.0, 3.0).is_err());
    }

    #[test]
    fn kernel_plain_value_and_truncation() {
        let spec = KernelSpec {
            s: 0.5,
            truncation_radius: 2.0,
            ..KernelSpec::default()
        };
        // N = 2, |x-y| = 1: 1 / 1^3
        let k = kernel_eval(&spec, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((k - 1.0).abs() < 1e-15);
        let beyond = kernel_eval(&spec, &[0.0, 0.0], &[2.1, 0.0]).unwrap();
        assert_eq!(beyond, 0.0);
        assert_eq!(
            kernel_eval(&spec, &[0.3, 0.4], &[0.3, 0.4]),
            Err(ModelError::SingularDiagonal)
        );
    }

    #[test]
    fn kernel_symmetry_random_pairs() {
        let spec = KernelSpec {
            s: 0.3,
            lambda: 0.5,
            lambda_cap: 1.5,
            eps_k: 0.4,
            truncation_radius: 3.0,
        };
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 6.0 - 3.0
        };
        for _ in 0..1000 {
            let x = [next(), next()];
            let y = [next(), next()];
            if x == y {
                continue;
            }
            let kxy = kernel_eval(&spec, &x, &y).unwrap();
            let kyx = kernel_eval(&spec, &y, &x).unwrap();
            assert_eq!(kxy, kyx);
            assert!(kxy >= 0.0);
        }
    }

    #[test]
    fn kernel_periodic_under_joint_shift() {
        let spec = KernelSpec {
            s: 0.4,
            lambda: 0.25,
            lambda_cap: 2.0,
            eps_k: 0.5,
            truncation_radius: 3.0,
        };
        let x = [0.21, 0.83];
        let y = [1.02, 0.11];
        let k0 = kernel_eval(&spec, &x, &y).unwrap();
        for shift in [[1.0, 0.0], [0.0, 1.0], [2.0, -3.0]] {
            let xs = [x[0] + shift[0], x[1] + shift[1]];
            let ys = [y[0] + shift[0], y[1] + shift[1]];
            let ks = kernel_eval(&spec, &xs, &ys).unwrap();
            assert!((k0 - ks).abs() < 1e-12);
        }
    }

    #[test]
    fn wells_vanish_at_pure_phases() {
        for shape in [WellShape::Quartic, WellShape::Cosine] {
            assert_eq!(shape.value(1.0), 0.0);
            assert_eq!(shape.value(-1.0), 0.0);
            assert!(shape.value(0.0) > 0.0);
        }
    }

    #[test]
    fn cosine_well_mirror_between_wells() {
        // W(-1 + r) = W(1 + r): the wells have identical local shape.
        let w = WellShape::Cosine;
        for i in 0..=20 {
            let r = -0.05 + 0.1 * i as f64 / 20.0;
            assert!((w.value(-1.0 + r) - w.value(1.0 + r)).abs() < 1e-15);
        }
    }

    #[test]
    fn potential_constants_measured() {
        let p = PotentialSpec::default();
        p.validate().unwrap();
        assert!(p.measured_gamma(0.9, 2000) > 0.0);
        assert!(p.measured_outward_slope(2000) > 0.0);
        assert!(p.measured_w_star(2000) > 0.0);
        // gamma is non-increasing in theta
        assert!(p.measured_gamma(0.5, 2000) >= p.measured_gamma(0.9, 2000));
    }

    #[test]
    fn meso_bounds() {
        let m = MesoSpec { eta: 0.02 };
        for i in 0..50 {
            let x = [i as f64 / 50.0, 0.3];
            assert!(m.value(&x).abs() <= m.eta + 1e-15);
        }
    }

    #[test]
    fn model_hash_stable_and_sensitive() {
        let a = ModelSpec::default();
        let mut b = ModelSpec::default();
        assert_eq!(a.hash64(), b.hash64());
        b.meso.eta = 0.02;
        assert_ne!(a.hash64(), b.hash64());
    }
}
