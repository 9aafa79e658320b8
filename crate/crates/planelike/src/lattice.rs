//! Quotient geometry for integer directions.
//!
//! A direction `omega` in Z^N induces the equivalence `x ~ y` iff `y - x` is an
//! integer vector orthogonal to `omega`. The quotient of R^N by (multiples of)
//! that sublattice is an infinite cylinder whose unbounded axis is measured by
//! `t = omega . j` on grid points `x = j/n`. We index nodes by unimodular
//! coordinates `(c_1..c_{N-1}, t)`: transverse basis steps plus the strip layer.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("direction must be a nonzero integer vector")]
    ZeroDirection,
    #[error("dimension {0} unsupported (expected 1, 2 or 3)")]
    BadDimension(usize),
    #[error("grid resolution must be at least 1 node per unit length")]
    BadResolution,
    #[error("grid is incommensurable with the sublattice translations")]
    GridIncommensurable,
    #[error("strip bounds must satisfy A < B (got A={0}, B={1})")]
    BadStrip(f64, f64),
    #[error("strip contains no grid layers")]
    EmptyStrip,
    #[error("margin must be nonnegative")]
    BadMargin,
    #[error("period multipliers must have length N-1 with entries >= 1")]
    BadMultipliers,
    #[error("neighbor radius {0} exceeds margin {1}")]
    RadiusExceedsMargin(f64, f64),
    #[error("field/lattice mismatch: {0}")]
    Mismatch(String),
    #[error("field value {0} outside the admissible box bound {1}")]
    ValueOutOfBox(f64, f64),
}

pub(crate) fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

/// Extended gcd: returns (g, x, y) with `a*x + b*y = g`, `g >= 0`.
fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        if a >= 0 {
            (a, 1, 0)
        } else {
            (-a, -1, 0)
        }
    } else {
        let (g, x, y) = ext_gcd(b, a % b);
        (g, y, x - (a / b) * y)
    }
}

/// An integer direction with coprime components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Direction {
    omega: Vec<i64>,
}

impl Direction {
    /// Builds a direction, reducing the components by their gcd.
    pub fn new(omega: &[i64]) -> Result<Self, LatticeError> {
        if omega.is_empty() || omega.len() > 3 {
            return Err(LatticeError::BadDimension(omega.len()));
        }
        let g = omega.iter().fold(0, |acc, &v| gcd(acc, v));
        if g == 0 {
            return Err(LatticeError::ZeroDirection);
        }
        Ok(Self {
            omega: omega.iter().map(|&v| v / g).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn components(&self) -> &[i64] {
        &self.omega
    }

    pub fn dot(&self, k: &[i64]) -> i64 {
        self.omega.iter().zip(k).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        (self.omega.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt()
    }

    /// Unit vector along the direction.
    pub fn unit(&self) -> Vec<f64> {
        let nrm = self.norm();
        self.omega.iter().map(|&v| v as f64 / nrm).collect()
    }
}

/// Integer basis of the sublattice `{k in Z^N : omega . k = 0}` together with
/// a completion vector `z_N` satisfying `omega . z_N = 1`, so that
/// `{z_1,..,z_{N-1},z_N}` is a unimodular basis of Z^N.
#[derive(Debug, Clone)]
pub struct SublatticeBasis {
    dim: usize,
    vectors: Vec<Vec<i64>>,
    completion: Vec<i64>,
    // Rows of the inverse of the column matrix [z_1 .. z_{N-1}, z_N].
    inverse_rows: Vec<Vec<i64>>,
}

impl SublatticeBasis {
    pub fn for_direction(direction: &Direction) -> Self {
        let dim = direction.dim();
        let omega = direction.components();
        // Column operations on the identity, driving omega . col into (1,0,..,0).
        let mut cols: Vec<Vec<i64>> = (0..dim)
            .map(|i| (0..dim).map(|r| i64::from(r == i)).collect())
            .collect();
        let mut dots: Vec<i64> = omega.to_vec();
        for i in 1..dim {
            let (g, x, y) = ext_gcd(dots[0], dots[i]);
            if g == 0 {
                continue;
            }
            let c0: Vec<i64> = (0..dim)
                .map(|r| x * cols[0][r] + y * cols[i][r])
                .collect();
            let ci: Vec<i64> = (0..dim)
                .map(|r| -(dots[i] / g) * cols[0][r] + (dots[0] / g) * cols[i][r])
                .collect();
            cols[0] = c0;
            cols[i] = ci;
            dots[i] = 0;
            dots[0] = g;
        }
        debug_assert_eq!(dots[0], 1, "direction components must be coprime");
        let completion = cols[0].clone();
        let mut vectors: Vec<Vec<i64>> = cols[1..].to_vec();
        for v in &mut vectors {
            if let Some(&lead) = v.iter().find(|&&x| x != 0) {
                if lead < 0 {
                    for x in v.iter_mut() {
                        *x = -*x;
                    }
                }
            }
        }
        let inverse_rows = invert_unimodular(&vectors, &completion);
        let basis = Self {
            dim,
            vectors,
            completion,
            inverse_rows,
        };
        debug_assert!(basis.self_check(direction));
        basis
    }

    fn self_check(&self, direction: &Direction) -> bool {
        self.vectors.iter().all(|z| direction.dot(z) == 0)
            && direction.dot(&self.completion) == 1
    }

    pub fn vectors(&self) -> &[Vec<i64>] {
        &self.vectors
    }

    pub fn completion(&self) -> &[i64] {
        &self.completion
    }

    /// Writes `j = sum_i c_i z_i + t z_N`; returns `(c, t)`.
    pub fn decompose(&self, j: &[i64]) -> (Vec<i64>, i64) {
        let mut coeffs = vec![0i64; self.dim];
        for (r, row) in self.inverse_rows.iter().enumerate() {
            coeffs[r] = row.iter().zip(j).map(|(a, b)| a * b).sum();
        }
        let t = coeffs[self.dim - 1];
        coeffs.truncate(self.dim - 1);
        (coeffs, t)
    }

    /// Reconstructs the grid vector from `(c, t)` coordinates.
    pub fn compose(&self, c: &[i64], t: i64) -> Vec<i64> {
        let mut j = vec![0i64; self.dim];
        for (ci, z) in c.iter().zip(&self.vectors) {
            for (r, zr) in z.iter().enumerate() {
                j[r] += ci * zr;
            }
        }
        for (r, zr) in self.completion.iter().enumerate() {
            j[r] += t * zr;
        }
        j
    }

    /// Exhaustively verifies that the integer span of the basis equals the
    /// orthogonal sublattice within the cube `|k_i| <= radius`.
    pub fn verify_span_exhaustive(&self, direction: &Direction, radius: i64) -> bool {
        let dim = self.dim;
        let mut k = vec![-radius; dim];
        loop {
            if k.iter().any(|&x| x != 0) || true {
                let orthogonal = direction.dot(&k) == 0;
                let (c, t) = self.decompose(&k);
                let spanned = t == 0 && self.compose(&c, 0) == k;
                if orthogonal != spanned {
                    return false;
                }
            }
            // odometer
            let mut d = 0;
            loop {
                k[d] += 1;
                if k[d] <= radius {
                    break;
                }
                k[d] = -radius;
                d += 1;
                if d == dim {
                    return true;
                }
            }
        }
    }
}

fn invert_unimodular(vectors: &[Vec<i64>], completion: &[i64]) -> Vec<Vec<i64>> {
    let dim = completion.len();
    let mut m = vec![vec![0i64; dim]; dim];
    for (c, z) in vectors.iter().enumerate() {
        for r in 0..dim {
            m[r][c] = z[r];
        }
    }
    for r in 0..dim {
        m[r][dim - 1] = completion[r];
    }
    match dim {
        1 => {
            assert!(m[0][0].abs() == 1);
            vec![vec![m[0][0]]]
        }
        2 => {
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            assert!(det.abs() == 1);
            let d = det; // 1/det == det for det = +-1
            vec![vec![d * m[1][1], -d * m[0][1]], vec![-d * m[1][0], d * m[0][0]]]
        }
        3 => {
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            assert!(det.abs() == 1);
            let d = det;
            let cof = |r: usize, c: usize| -> i64 {
                let rs: Vec<usize> = (0..3).filter(|&x| x != r).collect();
                let cs: Vec<usize> = (0..3).filter(|&x| x != c).collect();
                let minor = m[rs[0]][cs[0]] * m[rs[1]][cs[1]] - m[rs[0]][cs[1]] * m[rs[1]][cs[0]];
                if (r + c) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            };
            // adjugate transpose, scaled by 1/det
            (0..3)
                .map(|r| (0..3).map(|c| d * cof(c, r)).collect())
                .collect()
        }
        _ => unreachable!(),
    }
}

/// Discretized fundamental domain of the quotient restricted to the strip
/// `omega . x in [A - L|omega|, B + L|omega|]` (margin `L` is Euclidean).
#[derive(Debug, Clone)]
pub struct LatticeQuotient {
    direction: Direction,
    basis: SublatticeBasis,
    multipliers: Vec<u64>,
    n: u32,
    h: f64,
    strip_lo: f64,
    strip_hi: f64,
    margin: f64,
    t_min: i64,
    t_max: i64,
    halo: i64,
    layer_extents: [usize; 2],
    layer_size: usize,
}

/// Builds the quotient geometry for `direction` with period multipliers `m`,
/// `n` nodes per unit length, strip bounds `a < b` (in `omega . x` units) and
/// Euclidean margin `l`.
pub fn build_quotient(
    direction: Direction,
    m: &[u64],
    n: u32,
    a: f64,
    b: f64,
    l: f64,
) -> Result<LatticeQuotient, LatticeError> {
    let dim = direction.dim();
    if n < 1 {
        return Err(LatticeError::BadResolution);
    }
    if !(a < b) {
        return Err(LatticeError::BadStrip(a, b));
    }
    if !(l >= 0.0) {
        return Err(LatticeError::BadMargin);
    }
    if m.len() != dim - 1 || m.iter().any(|&mi| mi < 1) {
        return Err(LatticeError::BadMultipliers);
    }
    let basis = SublatticeBasis::for_direction(&direction);
    // n * z_i is an integral node shift by construction; the commensurability
    // check is kept as a guard for future non-uniform grids.
    if basis.vectors().iter().any(|z| z.iter().all(|&x| x == 0)) {
        return Err(LatticeError::GridIncommensurable);
    }
    let nf = f64::from(n);
    let reach = l * direction.norm();
    let t_min = ((a - reach) * nf - 1e-9).ceil() as i64;
    let t_max = ((b + reach) * nf + 1e-9).floor() as i64;
    if t_min > t_max {
        return Err(LatticeError::EmptyStrip);
    }
    let halo = ((l * direction.norm() * nf).ceil() as i64) + 1;
    let mut layer_extents = [1usize; 2];
    for (i, &mi) in m.iter().enumerate() {
        layer_extents[i] = (n as usize) * (mi as usize);
    }
    let layer_size = layer_extents[0] * layer_extents[1];
    Ok(LatticeQuotient {
        direction,
        basis,
        multipliers: m.to_vec(),
        n,
        h: 1.0 / nf,
        strip_lo: a,
        strip_hi: b,
        margin: l,
        t_min,
        t_max,
        halo,
        layer_extents,
        layer_size,
    })
}

impl LatticeQuotient {
    pub fn direction(&self) -> &Direction {
        &self.direction
    }
    pub fn basis(&self) -> &SublatticeBasis {
        &self.basis
    }
    pub fn multipliers(&self) -> &[u64] {
        &self.multipliers
    }
    pub fn dim(&self) -> usize {
        self.direction.dim()
    }
    pub fn resolution(&self) -> u32 {
        self.n
    }
    pub fn spacing(&self) -> f64 {
        self.h
    }
    pub fn strip(&self) -> (f64, f64) {
        (self.strip_lo, self.strip_hi)
    }
    pub fn margin(&self) -> f64 {
        self.margin
    }
    pub fn layer_size(&self) -> usize {
        self.layer_size
    }
    pub fn layer_extents(&self) -> [usize; 2] {
        self.layer_extents
    }
    pub fn t_range(&self) -> (i64, i64) {
        (self.t_min, self.t_max)
    }
    pub fn halo_layers(&self) -> i64 {
        self.halo
    }
    pub fn layers(&self) -> usize {
        (self.t_max - self.t_min + 1) as usize
    }

    pub fn node_count(&self) -> usize {
        self.layers() * self.layer_size
    }

    pub fn ext_len(&self) -> usize {
        (self.layers() + 2 * self.halo as usize) * self.layer_size
    }

    /// Offset of the interior block inside extended (halo-padded) storage.
    pub fn interior_offset(&self) -> usize {
        self.halo as usize * self.layer_size
    }

    pub fn node_index(&self, c: &[i64], t: i64) -> Option<usize> {
        if t < self.t_min || t > self.t_max {
            return None;
        }
        let mut flat = 0usize;
        let mut stride = 1usize;
        for (i, &ci) in c.iter().enumerate() {
            let ext = self.layer_extents[i] as i64;
            flat += ci.rem_euclid(ext) as usize * stride;
            stride *= self.layer_extents[i];
        }
        Some((t - self.t_min) as usize * self.layer_size + flat)
    }

    /// Unimodular coordinates `(c, t)` of an interior node index.
    pub fn node_coords(&self, index: usize) -> (Vec<i64>, i64) {
        let t = self.t_min + (index / self.layer_size) as i64;
        let mut flat = index % self.layer_size;
        let mut c = Vec::with_capacity(self.dim() - 1);
        for i in 0..self.dim() - 1 {
            c.push((flat % self.layer_extents[i]) as i64);
            flat /= self.layer_extents[i];
        }
        (c, t)
    }

    /// Representative grid point (integer coordinates, grid units) of a node.
    pub fn node_grid(&self, index: usize) -> Vec<i64> {
        let (c, t) = self.node_coords(index);
        self.basis.compose(&c, t)
    }

    /// Euclidean position of a node's representative.
    pub fn node_position(&self, index: usize) -> Vec<f64> {
        self.node_grid(index)
            .iter()
            .map(|&g| g as f64 * self.h)
            .collect()
    }

    /// `omega . x` for a node.
    pub fn node_level(&self, index: usize) -> f64 {
        let t = self.t_min + (index / self.layer_size) as i64;
        t as f64 * self.h
    }

    /// Extended-storage index for `(c, t)` with `t` allowed inside the halo.
    pub fn ext_index(&self, c: &[i64], t: i64) -> Option<usize> {
        if t < self.t_min - self.halo || t > self.t_max + self.halo {
            return None;
        }
        let mut flat = 0usize;
        let mut stride = 1usize;
        for (i, &ci) in c.iter().enumerate() {
            let ext = self.layer_extents[i] as i64;
            flat += ci.rem_euclid(ext) as usize * stride;
            stride *= self.layer_extents[i];
        }
        Some((t - (self.t_min - self.halo)) as usize * self.layer_size + flat)
    }

    /// Maps an arbitrary grid point to its interior node index, if the class
    /// representative lies inside the domain.
    pub fn grid_to_node(&self, g: &[i64]) -> Option<usize> {
        let (c, t) = self.basis.decompose(g);
        self.node_index(&c, t)
    }

    /// True when the node is inside the constraint-free strip (A, B).
    pub fn node_in_open_strip(&self, index: usize) -> bool {
        let lvl = self.node_level(index);
        lvl > self.strip_lo && lvl < self.strip_hi
    }
}

/// `Z^N`-periodic field sampled on the unit-cell grid `{0..n-1}^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCellField {
    dim: usize,
    n: u32,
    values: Vec<f64>,
}

impl UnitCellField {
    pub fn new(dim: usize, n: u32, values: Vec<f64>) -> Result<Self, LatticeError> {
        if dim == 0 || dim > 3 {
            return Err(LatticeError::BadDimension(dim));
        }
        let count = (n as usize).pow(dim as u32);
        if values.len() != count {
            return Err(LatticeError::Mismatch(format!(
                "unit cell expects {count} values, got {}",
                values.len()
            )));
        }
        Ok(Self { dim, n, values })
    }

    pub fn constant(dim: usize, n: u32, value: f64) -> Self {
        Self {
            dim,
            n,
            values: vec![value; (n as usize).pow(dim as u32)],
        }
    }

    pub fn from_fn(dim: usize, n: u32, f: impl Fn(&[f64]) -> f64) -> Self {
        let count = (n as usize).pow(dim as u32);
        let h = 1.0 / f64::from(n);
        let mut values = Vec::with_capacity(count);
        for idx in 0..count {
            let mut pos = vec![0.0; dim];
            let mut rest = idx;
            for p in pos.iter_mut() {
                *p = (rest % n as usize) as f64 * h;
                rest /= n as usize;
            }
            values.push(f(&pos));
        }
        Self { dim, n, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn resolution(&self) -> u32 {
        self.n
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn cell_index(&self, g: &[i64]) -> usize {
        let n = self.n as i64;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &gi in g.iter() {
            idx += gi.rem_euclid(n) as usize * stride;
            stride *= self.n as usize;
        }
        idx
    }

    /// Periodic sample at an arbitrary grid point (grid units).
    pub fn sample(&self, g: &[i64]) -> f64 {
        self.values[self.cell_index(g)]
    }

    pub fn sup_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn pointwise_min(&self, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.min(b))
            .collect();
        Self {
            dim: self.dim,
            n: self.n,
            values,
        }
    }

    pub fn pointwise_max(&self, other: &Self) -> Self {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a.max(b))
            .collect();
        Self {
            dim: self.dim,
            n: self.n,
            values,
        }
    }
}

/// Grid field over a quotient with frozen far-field behavior beyond the
/// domain: the low side (`omega . x` below the domain) reads the `+1`-phase
/// cell field, the high side the `-1` phase.
#[derive(Debug, Clone)]
pub struct Field {
    lattice: Arc<LatticeQuotient>,
    // Extended storage: halo layers prefilled from the far-field rules.
    ext: Vec<f64>,
    far_low: Arc<UnitCellField>,
    far_high: Arc<UnitCellField>,
}

impl Field {
    pub fn new(
        lattice: Arc<LatticeQuotient>,
        interior: Vec<f64>,
        far_low: Arc<UnitCellField>,
        far_high: Arc<UnitCellField>,
        box_bound: f64,
    ) -> Result<Self, LatticeError> {
        if interior.len() != lattice.node_count() {
            return Err(LatticeError::Mismatch(format!(
                "expected {} interior values, got {}",
                lattice.node_count(),
                interior.len()
            )));
        }
        for &v in &interior {
            if !(v.abs() <= box_bound + 1e-12) {
                return Err(LatticeError::ValueOutOfBox(v, box_bound));
            }
        }
        let mut field = Self {
            ext: vec![0.0; lattice.ext_len()],
            lattice,
            far_low,
            far_high,
        };
        let off = field.lattice.interior_offset();
        field.ext[off..off + interior.len()].copy_from_slice(&interior);
        field.refill_halo();
        Ok(field)
    }

    pub fn constant(
        lattice: Arc<LatticeQuotient>,
        value: f64,
        far_low: Arc<UnitCellField>,
        far_high: Arc<UnitCellField>,
    ) -> Self {
        let interior = vec![value; lattice.node_count()];
        Self::new(lattice, interior, far_low, far_high, value.abs().max(2.0)).expect("constant")
    }

    pub fn from_fn(
        lattice: Arc<LatticeQuotient>,
        far_low: Arc<UnitCellField>,
        far_high: Arc<UnitCellField>,
        f: impl Fn(&[f64]) -> f64,
    ) -> Self {
        let interior: Vec<f64> = (0..lattice.node_count())
            .map(|i| f(&lattice.node_position(i)))
            .collect();
        let bound = interior.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::new(lattice, interior, far_low, far_high, bound).expect("from_fn")
    }

    pub fn lattice(&self) -> &Arc<LatticeQuotient> {
        &self.lattice
    }
    pub fn far_low(&self) -> &Arc<UnitCellField> {
        &self.far_low
    }
    pub fn far_high(&self) -> &Arc<UnitCellField> {
        &self.far_high
    }

    /// Extended storage including the frozen halo.
    pub fn ext_values(&self) -> &[f64] {
        &self.ext
    }

    pub fn interior(&self) -> &[f64] {
        let off = self.lattice.interior_offset();
        &self.ext[off..off + self.lattice.node_count()]
    }

    pub fn interior_mut(&mut self) -> &mut [f64] {
        let off = self.lattice.interior_offset();
        let len = self.lattice.node_count();
        &mut self.ext[off..off + len]
    }

    pub fn with_interior(&self, interior: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.interior_mut().copy_from_slice(&interior);
        out
    }

    /// Rewrites halo layers from the far-field rules.
    pub fn refill_halo(&mut self) {
        let lat = self.lattice.clone();
        let (t_min, t_max) = lat.t_range();
        let halo = lat.halo_layers();
        let layer = lat.layer_size();
        for side in 0..2 {
            for ht in 0..halo {
                let t = if side == 0 { t_min - 1 - ht } else { t_max + 1 + ht };
                let cell = if side == 0 { &self.far_low } else { &self.far_high };
                let base = ((t - (t_min - halo)) as usize) * layer;
                for flat in 0..layer {
                    let idx = base + flat;
                    let g = self.ext_grid(idx);
                    self.ext[idx] = cell.sample(&g);
                }
            }
        }
    }

    fn ext_grid(&self, ext_index: usize) -> Vec<i64> {
        let lat = &self.lattice;
        let (t_min, _) = lat.t_range();
        let t = t_min - lat.halo_layers() + (ext_index / lat.layer_size()) as i64;
        let mut flat = ext_index % lat.layer_size();
        let mut c = Vec::with_capacity(lat.dim() - 1);
        for i in 0..lat.dim() - 1 {
            c.push((flat % lat.layer_extents()[i]) as i64);
            flat /= lat.layer_extents()[i];
        }
        lat.basis().compose(&c, t)
    }

    /// Value of the periodic extension at an arbitrary grid point.
    pub fn value_at_grid(&self, g: &[i64]) -> f64 {
        let lat = &self.lattice;
        let (c, t) = lat.basis().decompose(g);
        let (t_min, t_max) = lat.t_range();
        if t < t_min {
            self.far_low.sample(g)
        } else if t > t_max {
            self.far_high.sample(g)
        } else {
            let idx = lat.node_index(&c, t).expect("in range");
            self.interior()[idx]
        }
    }

    pub fn sup_diff(&self, other: &Field) -> f64 {
        self.interior()
            .iter()
            .zip(other.interior())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn pointwise_min(&self, other: &Field) -> Field {
        let interior: Vec<f64> = self
            .interior()
            .iter()
            .zip(other.interior())
            .map(|(&a, &b)| a.min(b))
            .collect();
        let mut out = self.clone();
        out.interior_mut().copy_from_slice(&interior);
        out.far_low = Arc::new(self.far_low.pointwise_min(&other.far_low));
        out.far_high = Arc::new(self.far_high.pointwise_min(&other.far_high));
        out.refill_halo();
        out
    }

    pub fn pointwise_max(&self, other: &Field) -> Field {
        let interior: Vec<f64> = self
            .interior()
            .iter()
            .zip(other.interior())
            .map(|(&a, &b)| a.max(b))
            .collect();
        let mut out = self.clone();
        out.interior_mut().copy_from_slice(&interior);
        out.far_low = Arc::new(self.far_low.pointwise_max(&other.far_low));
        out.far_high = Arc::new(self.far_high.pointwise_max(&other.far_high));
        out.refill_halo();
        out
    }
}

/// Translation `tau_k u (x) = u(x - k)` for an integer vector `k`.
pub fn translate(lattice: &Arc<LatticeQuotient>, field: &Field, k: &[i64]) -> Field {
    assert_eq!(k.len(), lattice.dim());
    let n = lattice.resolution() as i64;
    let interior: Vec<f64> = (0..lattice.node_count())
        .map(|i| {
            let mut g = lattice.node_grid(i);
            for (gi, &ki) in g.iter_mut().zip(k) {
                *gi -= ki * n;
            }
            field.value_at_grid(&g)
        })
        .collect();
    let mut out = field.clone();
    out.interior_mut().copy_from_slice(&interior);
    out.refill_halo();
    out
}

/// A neighbor of a node within kernel reach.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Real-space displacement (neighbor minus node).
    pub displacement: Vec<f64>,
    pub dist2: f64,
}

/// Enumerates the in-domain grid neighbors of `node` within Euclidean radius
/// `r`, including periodic images under the quotient.
pub fn neighbors_within(
    lattice: &LatticeQuotient,
    node: usize,
    r: f64,
) -> Result<Vec<Neighbor>, LatticeError> {
    if r > lattice.margin() + 1e-12 {
        return Err(LatticeError::RadiusExceedsMargin(r, lattice.margin()));
    }
    let dim = lattice.dim();
    let n = lattice.resolution();
    let h = lattice.spacing();
    let rg = (r * f64::from(n) + 1e-9).floor() as i64;
    let rg2 = (r * f64::from(n)) * (r * f64::from(n)) + 1e-9;
    let g0 = lattice.node_grid(node);
    let mut out = Vec::new();
    let mut d = vec![-rg; dim];
    loop {
        let d2: i64 = d.iter().map(|&x| x * x).sum();
        if d2 > 0 && (d2 as f64) <= rg2 {
            let g: Vec<i64> = g0.iter().zip(&d).map(|(a, b)| a + b).collect();
            if let Some(idx) = lattice.grid_to_node(&g) {
                out.push(Neighbor {
                    index: idx,
                    displacement: d.iter().map(|&x| x as f64 * h).collect(),
                    dist2: d2 as f64 * h * h,
                });
            }
        }
        let mut dd = 0;
        loop {
            d[dd] += 1;
            if d[dd] <= rg {
                break;
            }
            d[dd] = -rg;
            dd += 1;
            if dd == dim {
                return Ok(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc_cells(dim: usize, n: u32, v: f64) -> Arc<UnitCellField> {
        Arc::new(UnitCellField::constant(dim, n, v))
    }

    #[test]
    fn direction_reduces_and_rejects_zero() {
        assert_eq!(Direction::new(&[2, 4]).unwrap().components(), &[1, 2]);
        assert_eq!(Direction::new(&[0, 0]), Err(LatticeError::ZeroDirection));
    }

    #[test]
    fn basis_axis_direction() {
        let d = Direction::new(&[1, 0]).unwrap();
        let b = SublatticeBasis::for_direction(&d);
        assert_eq!(b.vectors(), &[vec![0, 1]]);
    }

    #[test]
    fn basis_two_one() {
        let d = Direction::new(&[2, 1]).unwrap();
        let b = SublatticeBasis::for_direction(&d);
        assert_eq!(b.vectors(), &[vec![1, -2]]);
        assert_eq!(d.dot(&b.vectors()[0]), 0);
    }

    #[test]
    fn basis_three_dim_span() {
        let d = Direction::new(&[3, 2, 1]).unwrap();
        let b = SublatticeBasis::for_direction(&d);
        for z in b.vectors() {
            assert_eq!(d.dot(z), 0);
        }
        assert!(b.verify_span_exhaustive(&d, 3));
    }

    #[test]
    fn span_check_all_small_directions() {
        for o1 in -2i64..=2 {
            for o2 in -2i64..=2 {
                for o3 in -2i64..=2 {
                    if (o1, o2, o3) == (0, 0, 0) {
                        continue;
                    }
                    let d = Direction::new(&[o1, o2, o3]).unwrap();
                    let b = SublatticeBasis::for_direction(&d);
                    assert!(b.verify_span_exhaustive(&d, 3), "failed for {:?}", d);
                }
            }
        }
    }

    #[test]
    fn quotient_node_count() {
        let d = Direction::new(&[1, 0]).unwrap();
        let lat = build_quotient(d, &[1], 4, 0.0, 2.0, 1.0).unwrap();
        // t in [-4, 12]: 17 layers, 4 nodes each
        assert_eq!(lat.layers(), 17);
        assert_eq!(lat.node_count(), 17 * 4);
        let lat2 = build_quotient(Direction::new(&[1, 0]).unwrap(), &[3], 4, 0.0, 2.0, 1.0).unwrap();
        assert_eq!(lat2.node_count(), 17 * 12);
    }

    #[test]
    fn empty_strip_detected() {
        let d = Direction::new(&[1, 0]).unwrap();
        let err = build_quotient(d, &[1], 2, 0.1, 0.3, 0.0).unwrap_err();
        assert_eq!(err, LatticeError::EmptyStrip);
    }

    #[test]
    fn node_roundtrip_coords() {
        let d = Direction::new(&[2, 1]).unwrap();
        let lat = build_quotient(d, &[2], 4, 0.0, 1.5, 0.75).unwrap();
        for i in 0..lat.node_count() {
            let g = lat.node_grid(i);
            assert_eq!(lat.grid_to_node(&g), Some(i));
            let t = lat.direction().dot(&g);
            let (tm, tx) = lat.t_range();
            assert!(t >= tm && t <= tx);
        }
    }

    #[test]
    fn neighbors_axis_count() {
        let d = Direction::new(&[1, 0]).unwrap();
        let lat = build_quotient(d, &[1], 8, 0.0, 2.0, 1.0).unwrap();
        let node = lat.node_count() / 2;
        let h = lat.spacing();
        let nbrs = neighbors_within(&lat, node, h * 1.001).unwrap();
        assert_eq!(nbrs.len(), 4);
        let nothing = neighbors_within(&lat, node, h * 0.5).unwrap();
        assert!(nothing.is_empty());
    }

    #[test]
    fn neighbors_match_brute_force_count() {
        let d = Direction::new(&[2, 1]).unwrap();
        let lat = build_quotient(d, &[1], 4, 0.0, 1.0, 1.0).unwrap();
        let r = 2.5 * lat.spacing();
        for node in [0usize, lat.node_count() / 2, lat.node_count() - 1] {
            let nbrs = neighbors_within(&lat, node, r).unwrap();
            // brute force: scan a big box of displacements
            let g0 = lat.node_grid(node);
            let rg = (r * lat.resolution() as f64).floor() as i64 + 1;
            let mut count = 0;
            for dx in -rg..=rg {
                for dy in -rg..=rg {
                    let d2 = dx * dx + dy * dy;
                    if d2 == 0 || (d2 as f64) * lat.spacing() * lat.spacing() > r * r + 1e-12 {
                        continue;
                    }
                    let g = [g0[0] + dx, g0[1] + dy];
                    if lat.grid_to_node(&g).is_some() {
                        count += 1;
                    }
                }
            }
            assert_eq!(nbrs.len(), count);
        }
    }

    #[test]
    fn neighbors_radius_exceeding_margin_rejected() {
        let d = Direction::new(&[1, 0]).unwrap();
        let lat = build_quotient(d, &[1], 4, 0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            neighbors_within(&lat, 0, 1.0),
            Err(LatticeError::RadiusExceedsMargin(_, _))
        ));
    }

    #[test]
    fn neighbor_symmetry() {
        let d = Direction::new(&[1, 1]).unwrap();
        let lat = build_quotient(d, &[1], 4, 0.0, 1.0, 0.75).unwrap();
        let r = 0.7;
        let all: Vec<Vec<Neighbor>> = (0..lat.node_count())
            .map(|i| neighbors_within(&lat, i, r).unwrap())
            .collect();
        for (i, nbrs) in all.iter().enumerate() {
            for nb in nbrs {
                let back = all[nb.index].iter().any(|m| {
                    m.index == i
                        && m.displacement
                            .iter()
                            .zip(&nb.displacement)
                            .all(|(a, b)| (a + b).abs() < 1e-12)
                });
                assert!(back, "missing mirror for pair ({i}, {})", nb.index);
            }
        }
    }

    #[test]
    fn translate_identity_and_periodicity() {
        let d = Direction::new(&[2, 1]).unwrap();
        let lat = Arc::new(build_quotient(d, &[1], 4, 0.0, 1.5, 1.0).unwrap());
        let lo = arc_cells(2, 4, 1.0);
        let hi = arc_cells(2, 4, -1.0);
        let f = Field::from_fn(lat.clone(), lo, hi, |x| {
            (0.7 * x[0] + 0.5 * x[1]).sin() * 0.9
        });
        let id = translate(&lat, &f, &[0, 0]);
        assert_eq!(f.interior(), id.interior());
        // translation by a basis vector is the identity on the quotient
        let z1: Vec<i64> = lat.basis().vectors()[0].clone();
        let tz = translate(&lat, &f, &z1);
        assert_eq!(f.interior(), tz.interior());
    }

    #[test]
    fn translate_axis_matches_closed_form() {
        let d = Direction::new(&[1, 0]).unwrap();
        let lat = Arc::new(build_quotient(d, &[1], 4, 0.0, 2.0, 1.0).unwrap());
        let lo = arc_cells(2, 4, 1.0);
        let hi = arc_cells(2, 4, -1.0);
        let form = |x: &[f64]| 0.8 * (0.9 * x[0]).sin() * (2.2 * x[1]).cos();
        let f = Field::from_fn(lat.clone(), lo, hi, form);
        let shifted = translate(&lat, &f, &[1, 0]);
        for i in 0..lat.node_count() {
            let x = lat.node_position(i);
            // only compare where the source node is still inside the domain
            let src_level = x[0] - 1.0;
            let (tm, tx) = lat.t_range();
            let ts = (src_level * lat.resolution() as f64).round() as i64;
            if ts >= tm && ts <= tx {
                let expect = form(&[x[0] - 1.0, x[1]]);
                assert!((shifted.interior()[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn translate_orthogonal_is_permutation() {
        let d = Direction::new(&[2, 1]).unwrap();
        let lat = Arc::new(build_quotient(d, &[2], 4, 0.0, 1.0, 0.5).unwrap());
        let lo = arc_cells(2, 4, 1.0);
        let hi = arc_cells(2, 4, -1.0);
        let f = Field::from_fn(lat.clone(), lo, hi, |x| (3.1 * x[0] - 1.7 * x[1]).sin());
        let z1 = lat.basis().vectors()[0].clone(); // omega . z1 = 0
        let tz = translate(&lat, &f, &z1);
        let mut a: Vec<f64> = f.interior().to_vec();
        let mut b: Vec<f64> = tz.interior().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_ne!(f.interior(), tz.interior()); // genuinely permuted
    }

    #[test]
    fn one_dimensional_quotient() {
        let d = Direction::new(&[1]).unwrap();
        let lat = build_quotient(d, &[], 1, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(lat.node_count(), 2); // t in {0, 1}, h = 1
        assert_eq!(lat.spacing(), 1.0);
    }
}
