//! Dense quantum linear algebra: layouts, Hermitian and density operators,
//! tensor composition, partial traces, Hermitian eigendecomposition and the
//! pinching (full dephasing) map.
//!
//! Qubit registers are ordered most-significant first, so the Kronecker
//! product `A ⊗ B` places `A` on the leading factor.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

/// Qubit budget when `WFQD_MAX_QUBITS` is unset.
pub const DEFAULT_MAX_QUBITS: usize = 12;
pub const MAX_QUBITS_ENV: &str = "WFQD_MAX_QUBITS";

/// Largest register (in qubits, pointer qubits included) handled by the dense path.
pub const DENSE_MAX_QUBITS: usize = 12;

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// Reads the qubit budget from `WFQD_MAX_QUBITS`, falling back to the default.
pub fn max_qubits_from_env() -> usize {
    std::env::var(MAX_QUBITS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_QUBITS)
}

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

/// `|k⟩⟨k|` in dimension `dim`.
pub fn basis_projector(dim: usize, k: usize) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    m[(k, k)] = c(1., 0.);
    m
}

/// Largest absolute entry.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// `‖A − A†‖_max`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

/// `Re Tr(AB)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

fn ensure_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Subsystem dimension bookkeeping for one lab: a pointer qubit, a Friend of
/// `n_f` qubits and an environment of `n_e` qubits, in that tensor order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabLayout {
    n_f: usize,
    n_e: usize,
}

impl LabLayout {
    pub const SYSTEM_DIM: usize = 2;

    pub fn new(n_f: usize, n_e: usize) -> Result<Self> {
        Self::with_limit(n_f, n_e, DEFAULT_MAX_QUBITS)
    }

    pub fn with_limit(n_f: usize, n_e: usize, max_qubits: usize) -> Result<Self> {
        if n_f == 0 || n_e == 0 {
            return Err(Error::InvalidLayout(format!(
                "need at least one Friend and one environment qubit (got n_f={n_f}, n_e={n_e})"
            )));
        }
        if n_f + n_e > max_qubits {
            return Err(Error::ResourceLimit {
                requested: n_f + n_e,
                limit: max_qubits,
            });
        }
        Ok(Self { n_f, n_e })
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    /// Friend plus environment qubits (the pointer qubit excluded).
    pub fn qubits(&self) -> usize {
        self.n_f + self.n_e
    }

    pub fn friend_dim(&self) -> usize {
        1 << self.n_f
    }

    pub fn env_dim(&self) -> usize {
        1 << self.n_e
    }

    /// Dimension of the Friend ⊗ environment register.
    pub fn register_dim(&self) -> usize {
        self.friend_dim() * self.env_dim()
    }

    pub fn total_dim(&self) -> usize {
        Self::SYSTEM_DIM * self.register_dim()
    }

    pub fn region_qubits(&self, region: Region) -> usize {
        match region {
            Region::Friend => self.n_f,
            Region::Environment => self.n_e,
        }
    }

    /// Factor dimensions `[system, friend, environment]`.
    pub fn factor_dims(&self) -> [usize; 3] {
        [Self::SYSTEM_DIM, self.friend_dim(), self.env_dim()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Friend,
    Environment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subsystem {
    System,
    Friend,
    Environment,
}

impl Subsystem {
    fn factor(self) -> usize {
        match self {
            Subsystem::System => 0,
            Subsystem::Friend => 1,
            Subsystem::Environment => 2,
        }
    }
}

/// A Hermitian matrix. Construction symmetrizes the input as `(A + A†)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
}

impl HermitianOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        ensure_square(&matrix)?;
        let sym = (&matrix + matrix.adjoint()).scale(0.5);
        Ok(Self { matrix: sym })
    }

    /// Like [`HermitianOperator::new`], but rejects inputs whose
    /// anti-Hermitian part exceeds `tol` (relative to `max(1, ‖A‖_max)`).
    pub fn try_new(matrix: CMatrix, tol: f64) -> Result<Self> {
        ensure_square(&matrix)?;
        let defect = hermiticity_defect(&matrix);
        if defect > tol * max_abs(&matrix).max(1.0) {
            return Err(Error::NotHermitian(defect));
        }
        Self::new(matrix)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: self.matrix.scale(factor),
        }
    }

    pub fn eig(&self) -> EigenDecomposition {
        eig_symmetrized(&self.matrix)
    }
}

/// A density matrix: Hermitian, unit trace and positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
}

impl DensityOperator {
    /// Validates Hermiticity (1e-12), trace (1e-10) and positivity (−1e-10).
    pub fn new(matrix: CMatrix) -> Result<Self> {
        ensure_square(&matrix)?;
        let defect = hermiticity_defect(&matrix);
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {defect:e})"
            )));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace is {tr}")));
        }
        let matrix = (&matrix + matrix.adjoint()).scale(0.5);
        let eig = eig_symmetrized(&matrix);
        let min = eig.eigenvalues.first().copied().unwrap_or(0.0);
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix known to be a state (outputs of trace- and
    /// positivity-preserving maps applied to valid states).
    pub(crate) fn from_trusted(matrix: CMatrix) -> Self {
        debug_assert_eq!(matrix.nrows(), matrix.ncols());
        Self { matrix }
    }

    /// `|ψ⟩⟨ψ|` for a (normalized on entry) state vector.
    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if amplitudes.is_empty() || norm == 0.0 {
            return Err(Error::InvalidState("zero state vector".into()));
        }
        let v = nalgebra::DVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|a| a / norm));
        Ok(Self::from_trusted(&v * v.adjoint()))
    }

    /// `|k⟩⟨k|`.
    pub fn basis(dim: usize, k: usize) -> Self {
        Self::from_trusted(basis_projector(dim, k))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_trusted(identity(dim).unscale(dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    /// `Tr(ρσ)`.
    pub fn overlap(&self, other: &DensityOperator) -> f64 {
        trace_product(&self.matrix, &other.matrix)
    }

    /// `Tr(Mρ)` for an effect operator `M`.
    pub fn expectation(&self, op: &CMatrix) -> f64 {
        trace_product(op, &self.matrix)
    }

    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<DensityOperator> {
        partial_trace_matrix(&self.matrix, dims, keep).map(DensityOperator::from_trusted)
    }
}

/// Real eigenvalues in ascending order with the matching orthonormal eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

impl EigenDecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let v = &self.eigenvectors;
        let mut scaled = v.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(lambda);
        }
        scaled * v.adjoint()
    }

    /// Projector onto the span of the listed eigenvector columns.
    pub fn projector(&self, columns: &[usize]) -> CMatrix {
        let d = self.eigenvectors.nrows();
        let mut p = CMatrix::zeros(d, d);
        for &k in columns {
            let v = self.eigenvectors.column(k);
            p += v * v.adjoint();
        }
        p
    }
}

fn eig_symmetrized(m: &CMatrix) -> EigenDecomposition {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = CMatrix::from_fn(m.nrows(), order.len(), |r, col| {
        eig.eigenvectors[(r, order[col])]
    });
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Eigendecomposition of a Hermitian matrix; rejects inputs whose
/// anti-Hermitian part exceeds 1e-12 relative to `max(1, ‖A‖_max)`.
pub fn eig_hermitian(m: &CMatrix) -> Result<EigenDecomposition> {
    let op = HermitianOperator::try_new(m.clone(), HERMITIAN_TOL)?;
    Ok(op.eig())
}

/// Kronecker product in listed order.
pub fn tensor(ops: &[&CMatrix]) -> Result<CMatrix> {
    let (first, rest) = ops.split_first().ok_or(Error::EmptyTensor)?;
    ensure_square(first)?;
    let mut acc = (*first).clone();
    for op in rest {
        ensure_square(op)?;
        acc = acc.kronecker(op);
    }
    Ok(acc)
}

/// Tensor product of density operators.
pub fn tensor_states(states: &[&DensityOperator]) -> Result<DensityOperator> {
    let ops: Vec<&CMatrix> = states.iter().map(|s| s.matrix()).collect();
    tensor(&ops).map(DensityOperator::from_trusted)
}

/// Places a single-qubit operator on qubit `site` of an `n_qubits` register.
pub fn embed_qubit(op: &CMatrix, site: usize, n_qubits: usize) -> Result<CMatrix> {
    if op.nrows() != 2 || op.ncols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: op.nrows(),
        });
    }
    if site >= n_qubits {
        return Err(Error::SiteOutOfRange {
            site,
            size: n_qubits,
        });
    }
    let left = identity(1 << site);
    let right = identity(1 << (n_qubits - site - 1));
    Ok(left.kronecker(op).kronecker(&right))
}

/// Single-qubit operator acting on qubit `site` of the Friend or environment
/// register of `layout`, identity on the rest of that register.
pub fn embed_local(op: &CMatrix, site: usize, layout: &LabLayout, region: Region) -> Result<CMatrix> {
    embed_qubit(op, site, layout.region_qubits(region))
}

/// Partial trace over all factors not listed in `keep`. `dims` gives the
/// factor dimensions in tensor order; kept factors stay in their original order.
pub fn partial_trace_matrix(m: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    ensure_square(m)?;
    let total: usize = dims.iter().product();
    if total != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: total,
            found: m.nrows(),
        });
    }
    if let Some(&bad) = keep.iter().find(|&&k| k >= dims.len()) {
        return Err(Error::SiteOutOfRange {
            site: bad,
            size: dims.len(),
        });
    }
    let kept: Vec<bool> = (0..dims.len()).map(|f| keep.contains(&f)).collect();
    let keep_dim: usize = dims.iter().zip(&kept).filter(|(_, &k)| k).map(|(d, _)| d).product();
    let trace_dim = total / keep_dim;

    // global index for every (kept, traced) pair
    let mut global = vec![0usize; total];
    for g in 0..total {
        let mut rem = g;
        let (mut ki, mut ti) = (0usize, 0usize);
        let (mut kstride, mut tstride) = (1usize, 1usize);
        for f in (0..dims.len()).rev() {
            let digit = rem % dims[f];
            rem /= dims[f];
            if kept[f] {
                ki += digit * kstride;
                kstride *= dims[f];
            } else {
                ti += digit * tstride;
                tstride *= dims[f];
            }
        }
        global[ki * trace_dim + ti] = g;
    }

    let mut out = CMatrix::zeros(keep_dim, keep_dim);
    for a in 0..keep_dim {
        for b in 0..keep_dim {
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..trace_dim {
                acc += m[(global[a * trace_dim + t], global[b * trace_dim + t])];
            }
            out[(a, b)] = acc;
        }
    }
    Ok(out)
}

/// Partial trace of a lab state down to the listed subsystems.
pub fn partial_trace(rho: &DensityOperator, layout: &LabLayout, keep: &[Subsystem]) -> Result<DensityOperator> {
    let keep: Vec<usize> = keep.iter().map(|s| s.factor()).collect();
    rho.partial_trace(&layout.factor_dims(), &keep)
}

/// Groups ascending eigenvalues into clusters whose neighbouring gaps are below
/// `tol · (λ_max − λ_min)`. Returns half-open index ranges.
pub fn eigenvalue_clusters(eigenvalues: &[f64], tol: f64) -> Vec<std::ops::Range<usize>> {
    if eigenvalues.is_empty() {
        return Vec::new();
    }
    let range = eigenvalues[eigenvalues.len() - 1] - eigenvalues[0];
    let threshold = tol * range;
    let mut clusters = Vec::new();
    let mut start = 0;
    for k in 1..eigenvalues.len() {
        if !(eigenvalues[k] - eigenvalues[k - 1] < threshold || range == 0.0) {
            clusters.push(start..k);
            start = k;
        }
    }
    clusters.push(start..eigenvalues.len());
    clusters
}

/// Result of a pinching map together with the number of merged (degenerate)
/// eigenvalue clusters encountered.
#[derive(Clone, Debug)]
pub struct Pinched {
    pub state: DensityOperator,
    pub degenerate_clusters: usize,
}

pub(crate) fn pinch_in_basis(rho: &CMatrix, eig: &EigenDecomposition, tol: f64) -> (CMatrix, usize) {
    let v = &eig.eigenvectors;
    let clusters = eigenvalue_clusters(&eig.eigenvalues, tol);
    let mut label = vec![0usize; eig.eigenvalues.len()];
    for (c, r) in clusters.iter().enumerate() {
        for k in r.clone() {
            label[k] = c;
        }
    }
    let mut rotated = v.adjoint() * rho * v;
    let n = rotated.nrows();
    for i in 0..n {
        for j in 0..n {
            if label[i] != label[j] {
                rotated[(i, j)] = C64::new(0.0, 0.0);
            }
        }
    }
    let out = v * rotated * v.adjoint();
    let merged = clusters.iter().filter(|r| r.len() > 1).count();
    (out, merged)
}

/// `Σ_n Π_n ρ Π_n` over the eigenprojectors of `h`, with eigenvalues closer
/// than `degeneracy_tol` times the spectral range sharing one projector.
pub fn pinch_report(rho: &DensityOperator, h: &HermitianOperator, degeneracy_tol: f64) -> Result<Pinched> {
    if rho.dim() != h.dim() {
        return Err(Error::DimensionMismatch {
            expected: h.dim(),
            found: rho.dim(),
        });
    }
    let eig = h.eig();
    let (m, merged) = pinch_in_basis(rho.matrix(), &eig, degeneracy_tol);
    let m = (&m + m.adjoint()).scale(0.5);
    Ok(Pinched {
        state: DensityOperator::from_trusted(m),
        degenerate_clusters: merged,
    })
}

pub fn pinch(rho: &DensityOperator, h: &HermitianOperator, degeneracy_tol: f64) -> Result<DensityOperator> {
    pinch_report(rho, h, degeneracy_tol).map(|p| p.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut impl Rng, d: usize) -> CMatrix {
        CMatrix::from_fn(d, d, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    fn random_state(rng: &mut impl Rng, d: usize) -> DensityOperator {
        let g = random_matrix(rng, d);
        let m = &g * g.adjoint();
        let tr = m.trace().re;
        DensityOperator::new(m.unscale(tr)).unwrap()
    }

    fn random_hermitian(rng: &mut impl Rng, d: usize) -> HermitianOperator {
        HermitianOperator::new(random_matrix(rng, d)).unwrap()
    }

    fn plus_state() -> DensityOperator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DensityOperator::pure(&[c(s, 0.), c(s, 0.)]).unwrap()
    }

    #[test]
    fn tensor_of_identities_is_identity() {
        let i2 = identity(2);
        assert_eq!(tensor(&[&i2, &i2]).unwrap(), identity(4));
    }

    #[test]
    fn tensor_of_basis_projectors() {
        let p0 = basis_projector(2, 0);
        let p1 = basis_projector(2, 1);
        assert_eq!(tensor(&[&p0, &p1]).unwrap(), basis_projector(4, 1));
    }

    #[test]
    fn tensor_rejects_empty_and_non_square() {
        assert!(matches!(tensor(&[]), Err(Error::EmptyTensor)));
        let rect = CMatrix::zeros(2, 3);
        assert!(matches!(tensor(&[&rect]), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn tensor_trace_multiplies() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 2);
            let b = random_matrix(&mut rng, 2);
            let t = tensor(&[&a, &b]).unwrap();
            // multiply-out oracle
            let mut expected = C64::new(0.0, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    expected += a[(i, i)] * b[(j, j)];
                }
            }
            assert!((t.trace() - expected).norm() < 1e-14);
            assert!((t.trace() - a.trace() * b.trace()).norm() < 1e-14);
        }
    }

    #[test]
    fn embed_local_on_friend_register() {
        let layout = LabLayout::new(2, 1).unwrap();
        let e = embed_local(&pauli_z(), 0, &layout, Region::Friend).unwrap();
        assert_eq!(e, pauli_z().kronecker(&identity(2)));
        let id = embed_local(&identity(2), 1, &layout, Region::Friend).unwrap();
        assert_eq!(id, identity(4));
        assert!(matches!(
            embed_local(&pauli_z(), 2, &layout, Region::Friend),
            Err(Error::SiteOutOfRange { site: 2, size: 2 })
        ));
    }

    #[test]
    fn embeddings_at_different_sites_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let a = random_hermitian(&mut rng, 2);
            let b = random_hermitian(&mut rng, 2);
            let ea = embed_qubit(a.matrix(), 0, 3).unwrap();
            let eb = embed_qubit(b.matrix(), 2, 3).unwrap();
            let comm = &ea * &eb - &eb * &ea;
            assert!(max_abs(&comm) < 1e-14);
        }
    }

    #[test]
    fn partial_trace_of_product_state() {
        let rho = DensityOperator::basis(4, 0);
        let reduced = rho.partial_trace(&[2, 2], &[0]).unwrap();
        assert_eq!(reduced.matrix(), &basis_projector(2, 0));
    }

    #[test]
    fn partial_trace_of_bell_state_is_maximally_mixed() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = DensityOperator::pure(&[c(s, 0.), c(0., 0.), c(0., 0.), c(s, 0.)]).unwrap();
        let reduced = bell.partial_trace(&[2, 2], &[0]).unwrap();
        assert!(max_abs(&(reduced.matrix() - identity(2).unscale(2.0))) < 1e-15);
    }

    #[test]
    fn partial_trace_matches_index_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (da, db, dc) = (2, 3, 2);
        let a = random_state(&mut rng, da);
        let b = random_state(&mut rng, db);
        let cc = random_state(&mut rng, dc);
        let abc = tensor(&[a.matrix(), b.matrix(), cc.matrix()]).unwrap();
        let abc = DensityOperator::new(abc).unwrap();
        let keep_a = abc.partial_trace(&[da, db, dc], &[0]).unwrap();
        assert!(max_abs(&(keep_a.matrix() - a.matrix())) < 1e-12);
        let keep_ac = abc.partial_trace(&[da, db, dc], &[0, 2]).unwrap();
        let ac = tensor(&[a.matrix(), cc.matrix()]).unwrap();
        assert!(max_abs(&(keep_ac.matrix() - ac)) < 1e-12);

        // explicit index contraction over the middle factor
        let m = abc.matrix();
        let mut oracle = CMatrix::zeros(da * dc, da * dc);
        for i in 0..da {
            for k in 0..dc {
                for i2 in 0..da {
                    for k2 in 0..dc {
                        let mut acc = C64::new(0., 0.);
                        for j in 0..db {
                            acc += m[((i * db + j) * dc + k, (i2 * db + j) * dc + k2)];
                        }
                        oracle[(i * dc + k, i2 * dc + k2)] = acc;
                    }
                }
            }
        }
        assert!(max_abs(&(keep_ac.matrix() - oracle)) < 1e-14);
    }

    #[test]
    fn partial_trace_dimension_errors() {
        let rho = DensityOperator::basis(4, 0);
        assert!(matches!(
            rho.partial_trace(&[2, 3], &[0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let layout = LabLayout::new(1, 1).unwrap();
        assert!(partial_trace(&rho, &layout, &[Subsystem::System]).is_err());
    }

    #[test]
    fn pauli_and_identity_spectra() {
        let e = eig_hermitian(&pauli_z()).unwrap();
        assert_eq!(e.eigenvalues, vec![-1.0, 1.0]);
        let e = eig_hermitian(&identity(5)).unwrap();
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)]);
        assert!(matches!(eig_hermitian(&m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn hermitian_construction_is_exactly_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_hermitian(&mut rng, 6);
        assert_eq!(hermiticity_defect(h.matrix()), 0.0);
    }

    #[test]
    fn density_operator_rejects_invalid_input() {
        assert!(DensityOperator::new(identity(2)).is_err()); // trace 2
        let neg = CMatrix::from_row_slice(2, 2, &[c(1.5, 0.), c(0., 0.), c(0., 0.), c(-0.5, 0.)]);
        assert!(DensityOperator::new(neg).is_err());
        let nonh = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.1, 0.), c(0., 0.), c(0.5, 0.)]);
        assert!(DensityOperator::new(nonh).is_err());
        assert!(DensityOperator::new(CMatrix::zeros(2, 3)).is_err());
        assert!(DensityOperator::new(identity(2).unscale(2.0)).is_ok());
    }

    #[test]
    fn pinch_dephases_plus_state() {
        let h = HermitianOperator::new(pauli_z()).unwrap();
        let out = pinch(&plus_state(), &h, 1e-9).unwrap();
        assert!(max_abs(&(out.matrix() - identity(2).unscale(2.0))) < 1e-15);
    }

    #[test]
    fn pinch_fixes_commuting_states() {
        let h = HermitianOperator::new(pauli_z()).unwrap();
        let rho = DensityOperator::new(CMatrix::from_row_slice(
            2,
            2,
            &[c(0.3, 0.), c(0., 0.), c(0., 0.), c(0.7, 0.)],
        ))
        .unwrap();
        let out = pinch(&rho, &h, 1e-9).unwrap();
        assert!(max_abs(&(out.matrix() - rho.matrix())) < 1e-15);
    }

    #[test]
    fn pinch_merges_degenerate_clusters() {
        // h = diag(0, 0, 1): the degenerate pair keeps its internal coherence
        let h = HermitianOperator::new(CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(0., 0.),
            c(0., 0.),
            c(1., 0.),
        ])))
        .unwrap();
        let v = 1.0 / 3f64.sqrt();
        let rho = DensityOperator::pure(&[c(v, 0.), c(v, 0.), c(v, 0.)]).unwrap();
        let out = pinch_report(&rho, &h, 1e-9).unwrap();
        assert_eq!(out.degenerate_clusters, 1);
        let m = out.state.matrix();
        assert!((m[(0, 1)].re - 1.0 / 3.0).abs() < 1e-14);
        assert!(m[(0, 2)].norm() < 1e-14);
        assert!(m[(1, 2)].norm() < 1e-14);
    }

    #[test]
    fn pinch_dimension_mismatch() {
        let h = HermitianOperator::new(identity(4)).unwrap();
        assert!(matches!(
            pinch(&plus_state(), &h, 1e-9),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn layout_bounds() {
        assert!(LabLayout::new(0, 1).is_err());
        assert!(LabLayout::new(1, 0).is_err());
        assert!(matches!(
            LabLayout::new(8, 5),
            Err(Error::ResourceLimit { requested: 13, limit: 12 })
        ));
        let l = LabLayout::new(3, 4).unwrap();
        assert_eq!(l.total_dim(), 2 * 8 * 16);
        assert_eq!(l.factor_dims(), [2, 8, 16]);
    }

    #[test]
    fn clusters_group_close_eigenvalues() {
        let c = eigenvalue_clusters(&[0.0, 1e-12, 0.5, 1.0], 1e-9);
        assert_eq!(c, vec![0..2, 2..3, 3..4]);
        let c = eigenvalue_clusters(&[2.0, 2.0, 2.0], 1e-9);
        assert_eq!(c, vec![0..3]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn seeded_inputs(seed: u64, d: usize) -> (DensityOperator, HermitianOperator) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (random_state(&mut rng, d), random_hermitian(&mut rng, d))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn pinch_is_idempotent_and_conserving(seed in any::<u64>(), d in 2usize..9) {
                let (rho, h) = seeded_inputs(seed, d);
                let once = pinch(&rho, &h, 1e-9).unwrap();
                let twice = pinch(&once, &h, 1e-9).unwrap();
                prop_assert!(max_abs(&(twice.matrix() - once.matrix())) < 1e-12);
                prop_assert!((once.trace() - rho.trace()).abs() < 1e-12);
                let energy = |r: &DensityOperator| trace_product(h.matrix(), r.matrix());
                prop_assert!((energy(&once) - energy(&rho)).abs() < 1e-9);
                let comm = h.matrix() * once.matrix() - once.matrix() * h.matrix();
                prop_assert!(max_abs(&comm) <= 1e-9 * max_abs(h.matrix()));
            }

            #[test]
            fn eigenvectors_are_orthonormal_and_reconstruct(seed in any::<u64>(), d in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let h = random_hermitian(&mut rng, d);
                let e = h.eig();
                let gram = e.eigenvectors.adjoint() * &e.eigenvectors;
                prop_assert!(max_abs(&(gram - identity(d))) < 1e-9);
                prop_assert!(max_abs(&(e.reconstruct() - h.matrix())) <= 1e-9 * max_abs(h.matrix()));
                prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
            }

            #[test]
            fn partial_trace_inverts_tensor(seed in any::<u64>(), da in 1usize..5, db in 1usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_state(&mut rng, da);
                let b = random_state(&mut rng, db);
                let ab = tensor_states(&[&a, &b]).unwrap();
                let ra = ab.partial_trace(&[da, db], &[0]).unwrap();
                let rb = ab.partial_trace(&[da, db], &[1]).unwrap();
                prop_assert!(max_abs(&(ra.matrix() - a.matrix())) < 1e-12);
                prop_assert!(max_abs(&(rb.matrix() - b.matrix())) < 1e-12);
            }
        }
    }
}
