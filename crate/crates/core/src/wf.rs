//! Simple Wigner's Friend lab: broadcasting Hamiltonian, equilibration by
//! pinching, and the resulting conditional Friend/environment states.
//!
//! Within pointer sector `i` the lab evolves under
//! `H⁽ⁱ⁾ = Σ_k h⁽ⁱ⁾_{F,k} + Σ_k h⁽ⁱ⁾_{E,k}`, a sum of independently sampled
//! single-qubit terms with no Friend–environment coupling. Its eigenvectors
//! are products of single-qubit eigenvectors, so for a generic spectrum the
//! pinched all-`|0⟩` state is a product of per-qubit pinches. That is the
//! factored path; the dense path diagonalizes `H⁽ⁱ⁾` as a whole.

use crate::error::{Error, Result};
use crate::gue::{derive_path, gue_sample, Register};
use crate::qcore::{
    c, embed_qubit, eigenvalue_clusters, pinch_report, tensor_states, CMatrix, DensityOperator,
    HermitianOperator, LabLayout, DENSE_MAX_QUBITS,
};

pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct WfConfig {
    pub layout: LabLayout,
    /// Prior weight of pointer outcome 0.
    pub p0: f64,
    pub scale_f: f64,
    pub scale_e: f64,
    pub degeneracy_tol: f64,
    pub seed: u64,
    /// Force the dense equilibration path.
    pub dense: bool,
}

impl WfConfig {
    pub fn new(layout: LabLayout, p0: f64) -> Result<Self> {
        let config = Self {
            layout,
            p0,
            scale_f: 1.0,
            scale_e: 1.0,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            seed: 0,
            dense: false,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn priors(&self) -> [f64; 2] {
        [self.p0, 1.0 - self.p0]
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(Error::InvalidConfig(format!("p0 must lie in [0, 1], got {}", self.p0)));
        }
        if !self.scale_f.is_finite() || !self.scale_e.is_finite() {
            return Err(Error::InvalidConfig("Hamiltonian scales must be finite".into()));
        }
        if self.degeneracy_tol.is_nan() || self.degeneracy_tol < 0.0 {
            return Err(Error::InvalidConfig("degeneracy tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Conditional single-qubit Hamiltonians of one lab, indexed `[outcome][site]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastTerms {
    layout: LabLayout,
    friend: [Vec<HermitianOperator>; 2],
    env: [Vec<HermitianOperator>; 2],
}

impl BroadcastTerms {
    /// Draws every local term from its own GUE stream. `registers` names the
    /// Friend-like and environment-like qubit groups for seeding.
    pub fn sample(
        layout: LabLayout,
        master_seed: u64,
        sample_index: u64,
        registers: [Register; 2],
    ) -> Result<Self> {
        let draw = |register, count: usize, outcome: usize| -> Result<Vec<HermitianOperator>> {
            (0..count)
                .map(|site| gue_sample(2, &derive_path(master_seed, sample_index, register, site, outcome)))
                .collect()
        };
        Ok(Self {
            layout,
            friend: [draw(registers[0], layout.n_f(), 0)?, draw(registers[0], layout.n_f(), 1)?],
            env: [draw(registers[1], layout.n_e(), 0)?, draw(registers[1], layout.n_e(), 1)?],
        })
    }

    /// Builds the terms from explicit 2×2 matrices.
    pub fn from_locals(layout: LabLayout, friend: [Vec<CMatrix>; 2], env: [Vec<CMatrix>; 2]) -> Result<Self> {
        let wrap = |ms: Vec<CMatrix>, expected: usize| -> Result<Vec<HermitianOperator>> {
            if ms.len() != expected {
                return Err(Error::DimensionMismatch { expected, found: ms.len() });
            }
            ms.into_iter()
                .map(|m| {
                    if m.nrows() != 2 {
                        return Err(Error::DimensionMismatch { expected: 2, found: m.nrows() });
                    }
                    HermitianOperator::try_new(m, crate::qcore::HERMITIAN_TOL)
                })
                .collect()
        };
        let [f0, f1] = friend;
        let [e0, e1] = env;
        Ok(Self {
            layout,
            friend: [wrap(f0, layout.n_f())?, wrap(f1, layout.n_f())?],
            env: [wrap(e0, layout.n_e())?, wrap(e1, layout.n_e())?],
        })
    }

    pub fn scaled(&self, scale_f: f64, scale_e: f64) -> Self {
        let s = |terms: &[Vec<HermitianOperator>; 2], k: f64| {
            [0, 1].map(|i| terms[i].iter().map(|h| h.scaled(k)).collect::<Vec<_>>())
        };
        Self {
            layout: self.layout,
            friend: s(&self.friend, scale_f),
            env: s(&self.env, scale_e),
        }
    }

    pub fn layout(&self) -> LabLayout {
        self.layout
    }

    pub fn friend_terms(&self, outcome: usize) -> &[HermitianOperator] {
        &self.friend[outcome]
    }

    pub fn env_terms(&self, outcome: usize) -> &[HermitianOperator] {
        &self.env[outcome]
    }

    /// Sector Hamiltonian on the Friend ⊗ environment register.
    pub fn sector_hamiltonian(&self, outcome: usize) -> HermitianOperator {
        let n = self.layout.qubits();
        let d = self.layout.register_dim();
        let mut h = CMatrix::zeros(d, d);
        let sites = self.friend[outcome].iter().chain(self.env[outcome].iter());
        for (site, term) in sites.enumerate() {
            h += embed_qubit(term.matrix(), site, n).expect("site within register");
        }
        HermitianOperator::new(h).expect("square")
    }

    /// `H_L = Σ_i |i⟩⟨i|_S ⊗ H⁽ⁱ⁾` on the whole lab.
    pub fn lab_hamiltonian(&self) -> HermitianOperator {
        let d = self.layout.register_dim();
        let mut h = CMatrix::zeros(2 * d, 2 * d);
        for i in 0..2 {
            h.view_mut((i * d, i * d), (d, d))
                .copy_from(self.sector_hamiltonian(i).matrix());
        }
        HermitianOperator::new(h).expect("square")
    }

    /// Full spectrum of sector `outcome`: every sum of one eigenvalue per qubit.
    pub fn sector_spectrum(&self, outcome: usize) -> Vec<f64> {
        let mut spectrum = vec![0.0];
        for term in self.friend[outcome].iter().chain(self.env[outcome].iter()) {
            let local = term.eig().eigenvalues;
            spectrum = spectrum
                .iter()
                .flat_map(|s| local.iter().map(move |l| s + l))
                .collect();
        }
        spectrum
    }
}

/// Samples the (scaled) local terms of one simple-scenario lab.
pub fn sample_terms(config: &WfConfig, sample_index: u64) -> Result<BroadcastTerms> {
    let terms = BroadcastTerms::sample(
        config.layout,
        config.seed,
        sample_index,
        [Register::Friend, Register::Environment],
    )?;
    Ok(terms.scaled(config.scale_f, config.scale_e))
}

pub fn build_broadcast_h(config: &WfConfig, sample_index: u64) -> Result<HermitianOperator> {
    Ok(sample_terms(config, sample_index)?.lab_hamiltonian())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    Factored,
    Dense,
}

/// State of one macrofraction (the Friend or the environment) conditional on
/// a pointer outcome.
#[derive(Clone, Debug, PartialEq)]
pub enum Macrofraction {
    /// One single-qubit state per qubit.
    Factored(Vec<DensityOperator>),
    Dense(DensityOperator),
}

impl Macrofraction {
    pub fn to_state(&self) -> DensityOperator {
        match self {
            Macrofraction::Factored(qubits) => {
                let refs: Vec<&DensityOperator> = qubits.iter().collect();
                tensor_states(&refs).expect("non-empty register")
            }
            Macrofraction::Dense(rho) => rho.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Macrofraction::Factored(qubits) => 1 << qubits.len(),
            Macrofraction::Dense(rho) => rho.dim(),
        }
    }

    /// `Tr(ρσ)`, qubit by qubit when both sides are factored.
    pub fn overlap(&self, other: &Macrofraction) -> f64 {
        match (self, other) {
            (Macrofraction::Factored(a), Macrofraction::Factored(b)) => {
                a.iter().zip(b).map(|(x, y)| x.overlap(y)).product()
            }
            _ => self.to_state().overlap(&other.to_state()),
        }
    }
}

/// Near-degeneracy bookkeeping of one equilibration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Eigenvalue collisions (factored check) or merged clusters (dense pinch).
    pub near_degeneracies: usize,
    pub dense_fallback: bool,
}

impl Diagnostics {
    pub fn merge(self, other: Diagnostics) -> Diagnostics {
        Diagnostics {
            near_degeneracies: self.near_degeneracies + other.near_degeneracies,
            dense_fallback: self.dense_fallback || other.dense_fallback,
        }
    }
}

/// Conditional macrofraction states of one lab for both pointer outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabConditionals {
    pub friend: [Macrofraction; 2],
    pub env: [Macrofraction; 2],
    /// Joint Friend ⊗ environment state per sector; present on the dense path,
    /// where it need not factorize.
    pub sectors: Option<[DensityOperator; 2]>,
}

impl LabConditionals {
    pub fn representation(&self) -> Representation {
        match self.sectors {
            Some(_) => Representation::Dense,
            None => Representation::Factored,
        }
    }

    /// Joint Friend ⊗ environment state of sector `outcome`.
    pub fn sector_state(&self, outcome: usize) -> DensityOperator {
        match &self.sectors {
            Some(s) => s[outcome].clone(),
            None => tensor_states(&[&self.friend[outcome].to_state(), &self.env[outcome].to_state()])
                .expect("non-empty"),
        }
    }

    /// Same conditionals with every state materialized densely.
    pub fn to_dense(&self) -> LabConditionals {
        let dense = |m: &Macrofraction| Macrofraction::Dense(m.to_state());
        LabConditionals {
            friend: [dense(&self.friend[0]), dense(&self.friend[1])],
            env: [dense(&self.env[0]), dense(&self.env[1])],
            sectors: Some([self.sector_state(0), self.sector_state(1)]),
        }
    }
}

/// Counts neighbouring eigenvalues (across all listed spectra) closer than
/// `tol` times the overall spectral range.
pub(crate) fn count_collisions(spectra: &[Vec<f64>], tol: f64) -> usize {
    let mut all: Vec<f64> = spectra.iter().flatten().copied().collect();
    all.sort_by(f64::total_cmp);
    eigenvalue_clusters(&all, tol)
        .iter()
        .map(|r| r.len() - 1)
        .sum()
}

fn pinch_ground_qubit(h: &HermitianOperator, tol: f64) -> DensityOperator {
    pinch_report(&DensityOperator::basis(2, 0), h, tol)
        .expect("2x2 operands")
        .state
}

pub(crate) fn factored_conditionals(terms: &BroadcastTerms, tol: f64) -> LabConditionals {
    let pinch_all = |hs: &[HermitianOperator]| {
        Macrofraction::Factored(hs.iter().map(|h| pinch_ground_qubit(h, tol)).collect())
    };
    LabConditionals {
        friend: [pinch_all(terms.friend_terms(0)), pinch_all(terms.friend_terms(1))],
        env: [pinch_all(terms.env_terms(0)), pinch_all(terms.env_terms(1))],
        sectors: None,
    }
}

fn dense_conditionals(terms: &BroadcastTerms, tol: f64) -> Result<(LabConditionals, usize)> {
    let layout = terms.layout();
    if layout.qubits() > DENSE_MAX_QUBITS {
        return Err(Error::ResourceLimit {
            requested: layout.qubits(),
            limit: DENSE_MAX_QUBITS,
        });
    }
    let dims = [layout.friend_dim(), layout.env_dim()];
    let mut merged = 0;
    let mut sector = |i: usize| -> Result<(DensityOperator, DensityOperator, DensityOperator)> {
        let init = DensityOperator::basis(layout.register_dim(), 0);
        let pinched = pinch_report(&init, &terms.sector_hamiltonian(i), tol)?;
        merged += pinched.degenerate_clusters;
        let f = pinched.state.partial_trace(&dims, &[0])?;
        let e = pinched.state.partial_trace(&dims, &[1])?;
        Ok((pinched.state, f, e))
    };
    let (s0, f0, e0) = sector(0)?;
    let (s1, f1, e1) = sector(1)?;
    Ok((
        LabConditionals {
            friend: [Macrofraction::Dense(f0), Macrofraction::Dense(f1)],
            env: [Macrofraction::Dense(e0), Macrofraction::Dense(e1)],
            sectors: Some([s0, s1]),
        },
        merged,
    ))
}

/// Conditional states of a lab equilibrated from the all-`|0⟩` register.
/// The factored path falls back to the dense one when any two eigenvalues of
/// the lab Hamiltonian collide within tolerance.
pub fn equilibrate_lab(terms: &BroadcastTerms, tol: f64, dense: bool) -> Result<(LabConditionals, Diagnostics)> {
    if !dense {
        let collisions = count_collisions(&[terms.sector_spectrum(0), terms.sector_spectrum(1)], tol);
        if collisions == 0 {
            return Ok((factored_conditionals(terms, tol), Diagnostics::default()));
        }
        log::warn!("{collisions} near-degenerate eigenvalue pair(s); using the dense path");
        let (cond, _) = dense_conditionals(terms, tol)?;
        return Ok((
            cond,
            Diagnostics {
                near_degeneracies: collisions,
                dense_fallback: true,
            },
        ));
    }
    let (cond, merged) = dense_conditionals(terms, tol)?;
    Ok((
        cond,
        Diagnostics {
            near_degeneracies: merged,
            dense_fallback: false,
        },
    ))
}

/// Post-measurement lab `ρ_L = Σ_i p_i |i⟩⟨i| ⊗ ρ⁽ⁱ⁾_{FE}`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabState {
    pub layout: LabLayout,
    /// Pointer weights. Pinching preserves each sector's trace, so these are
    /// the priors of the system state.
    pub p: [f64; 2],
    pub conditionals: LabConditionals,
    pub diagnostics: Diagnostics,
}

impl LabState {
    pub fn representation(&self) -> Representation {
        self.conditionals.representation()
    }

    pub fn friend(&self, outcome: usize) -> &Macrofraction {
        &self.conditionals.friend[outcome]
    }

    pub fn env(&self, outcome: usize) -> &Macrofraction {
        &self.conditionals.env[outcome]
    }

    /// Dense `ρ_L`; entries between the two pointer sectors are exactly zero.
    pub fn dense_lab(&self) -> Result<DensityOperator> {
        let qubits = self.layout.qubits() + 1;
        if qubits > DENSE_MAX_QUBITS {
            return Err(Error::ResourceLimit {
                requested: qubits,
                limit: DENSE_MAX_QUBITS,
            });
        }
        let d = self.layout.register_dim();
        let mut m = CMatrix::zeros(2 * d, 2 * d);
        for i in 0..2 {
            if self.p[i] == 0.0 {
                continue;
            }
            let block = self.conditionals.sector_state(i).into_matrix() * c(self.p[i], 0.0);
            m.view_mut((i * d, i * d), (d, d)).copy_from(&block);
        }
        Ok(DensityOperator::from_trusted(m))
    }

    pub fn to_dense(&self) -> LabState {
        LabState {
            conditionals: self.conditionals.to_dense(),
            ..self.clone()
        }
    }
}

/// Equilibrates sample `sample_index` of the ensemble described by `config`.
pub fn equilibrate(config: &WfConfig, sample_index: u64) -> Result<LabState> {
    config.validate()?;
    let terms = sample_terms(config, sample_index)?;
    equilibrate_with_terms(config, &terms)
}

pub fn equilibrate_with_terms(config: &WfConfig, terms: &BroadcastTerms) -> Result<LabState> {
    config.validate()?;
    if terms.layout() != config.layout {
        return Err(Error::InvalidConfig("terms were sampled for a different layout".into()));
    }
    let (conditionals, diagnostics) = equilibrate_lab(terms, config.degeneracy_tol, config.dense)?;
    Ok(LabState {
        layout: config.layout,
        p: config.priors(),
        conditionals,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlaps {
    pub friend_overlap: f64,
    pub env_overlap: f64,
}

/// Non-objectivity overlaps `Tr(ρ⁽⁰⁾ρ⁽¹⁾)` of the Friend and the environment.
pub fn overlap_metrics(state: &LabState) -> Overlaps {
    Overlaps {
        friend_overlap: state.friend(0).overlap(state.friend(1)),
        env_overlap: state.env(0).overlap(state.env(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qcore::{identity, max_abs, pauli_x, pauli_z, pinch, basis_projector, tensor};

    fn sx_sz_terms(layout: LabLayout) -> BroadcastTerms {
        let f = |m: CMatrix, n: usize| vec![m; n];
        BroadcastTerms::from_locals(
            layout,
            [f(pauli_x(), layout.n_f()), f(pauli_z(), layout.n_f())],
            [f(pauli_x(), layout.n_e()), f(pauli_z(), layout.n_e())],
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_is_block_diagonal() {
        let config = WfConfig::new(LabLayout::new(2, 2).unwrap(), 0.5).unwrap().with_seed(3);
        let h = build_broadcast_h(&config, 0).unwrap();
        for i in 0..2 {
            let proj = tensor(&[&basis_projector(2, i), &identity(16)]).unwrap();
            let comm = h.matrix() * &proj - &proj * h.matrix();
            assert_eq!(max_abs(&comm), 0.0);
        }
    }

    #[test]
    fn fixed_locals_assemble_directly() {
        let layout = LabLayout::new(1, 1).unwrap();
        let h = sx_sz_terms(layout).lab_hamiltonian();
        let i2 = identity(2);
        let sector = |m: &CMatrix| tensor(&[m, &i2]).unwrap() + tensor(&[&i2, m]).unwrap();
        let expected = tensor(&[&basis_projector(2, 0), &sector(&pauli_x())]).unwrap()
            + tensor(&[&basis_projector(2, 1), &sector(&pauli_z())]).unwrap();
        assert_eq!(h.matrix(), &expected);
    }

    #[test]
    fn sector_spectrum_is_sum_of_local_spectra() {
        let config = WfConfig::new(LabLayout::new(2, 3).unwrap(), 0.5).unwrap().with_seed(8);
        let terms = sample_terms(&config, 4).unwrap();
        for i in 0..2 {
            let dense = terms.sector_hamiltonian(i).eig().eigenvalues;
            let mut sums = terms.sector_spectrum(i);
            sums.sort_by(f64::total_cmp);
            for (a, b) in dense.iter().zip(&sums) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn certain_prior_populates_one_sector() {
        let config = WfConfig::new(LabLayout::new(1, 2).unwrap(), 1.0).unwrap();
        let state = equilibrate(&config, 0).unwrap();
        assert_eq!(state.p, [1.0, 0.0]);
        let rho = state.dense_lab().unwrap();
        let d = config.layout.register_dim();
        assert!(rho.matrix().view((d, d), (d, d)).iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn sigma_x_versus_sigma_z_friend() {
        let layout = LabLayout::new(1, 1).unwrap();
        let config = WfConfig::new(layout, 0.5).unwrap();
        // environment terms chosen so that no two lab eigenvalues coincide
        let terms = BroadcastTerms::from_locals(
            layout,
            [vec![pauli_x()], vec![pauli_z()]],
            [vec![pauli_z().scale(0.3)], vec![pauli_x().scale(0.45)]],
        )
        .unwrap();
        let state = equilibrate_with_terms(&config, &terms).unwrap();
        assert_eq!(state.representation(), Representation::Factored);
        let f0 = state.friend(0).to_state();
        let f1 = state.friend(1).to_state();
        assert!(max_abs(&(f0.matrix() - identity(2).unscale(2.0))) < 1e-14);
        assert!(max_abs(&(f1.matrix() - basis_projector(2, 0))) < 1e-14);
        let o = overlap_metrics(&state);
        assert!((o.friend_overlap - 0.5).abs() < 1e-14);
    }

    #[test]
    fn overlap_limits() {
        let q0 = DensityOperator::basis(2, 0);
        let q1 = DensityOperator::basis(2, 1);
        let a = Macrofraction::Factored(vec![q0.clone(), q0.clone()]);
        let b = Macrofraction::Factored(vec![q0.clone(), q1]);
        assert_eq!(a.overlap(&b), 0.0);
        assert_eq!(a.overlap(&a), 1.0);
    }

    #[test]
    fn factored_overlap_matches_dense_trace() {
        let config = WfConfig::new(LabLayout::new(3, 2).unwrap(), 0.5).unwrap().with_seed(21);
        for s in 0..10 {
            let state = equilibrate(&config, s).unwrap();
            let fast = overlap_metrics(&state);
            let dense = overlap_metrics(&state.to_dense());
            assert!((fast.friend_overlap - dense.friend_overlap).abs() < 1e-10);
            assert!((fast.env_overlap - dense.env_overlap).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&fast.friend_overlap));
        }
    }

    #[test]
    fn factored_and_dense_paths_agree() {
        let layout = LabLayout::new(2, 3).unwrap();
        let config = WfConfig::new(layout, 0.3).unwrap().with_seed(17);
        for s in 0..5 {
            let fast = equilibrate(&config, s).unwrap();
            assert_eq!(fast.representation(), Representation::Factored);
            let dense = equilibrate(&config.clone().with_dense(true), s).unwrap();
            assert_eq!(dense.representation(), Representation::Dense);
            let a = fast.dense_lab().unwrap();
            let b = dense.dense_lab().unwrap();
            assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-10);

            // full-lab pinch of the initial state
            let mut init = CMatrix::zeros(layout.total_dim(), layout.total_dim());
            init[(0, 0)] = c(0.3, 0.);
            init[(layout.register_dim(), layout.register_dim())] = c(0.7, 0.);
            let init = DensityOperator::new(init).unwrap();
            let oracle = pinch(&init, &build_broadcast_h(&config, s).unwrap(), 1e-9).unwrap();
            assert!(max_abs(&(a.matrix() - oracle.matrix())) < 1e-10);
        }
    }

    #[test]
    fn degenerate_locals_fall_back_to_dense() {
        // identical σz terms on two qubits: |01⟩ and |10⟩ share an eigenvalue
        let layout = LabLayout::new(1, 1).unwrap();
        let terms = BroadcastTerms::from_locals(
            layout,
            [vec![pauli_z()], vec![pauli_x()]],
            [vec![pauli_z()], vec![pauli_x()]],
        )
        .unwrap();
        let config = WfConfig::new(layout, 0.5).unwrap();
        let state = equilibrate_with_terms(&config, &terms).unwrap();
        assert!(state.diagnostics.dense_fallback);
        assert!(state.diagnostics.near_degeneracies > 0);
        assert_eq!(state.representation(), Representation::Dense);
    }

    #[test]
    fn invalid_prior_is_rejected() {
        let layout = LabLayout::new(1, 1).unwrap();
        assert!(WfConfig::new(layout, 1.5).is_err());
        assert!(WfConfig::new(layout, -0.1).is_err());
        assert!(WfConfig::new(layout, f64::NAN).is_err());
    }
}
