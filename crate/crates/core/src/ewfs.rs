//! Extended scenario: two labs (Charlie and Debbie) share an entangled pair
//! and each measures its half by broadcasting into a Friend register and an
//! environment.
//!
//! Tensor order of the joint space is `(1, C, E_C, 2, D, E_D)`: Charlie's lab
//! first, each lab laid out as pointer ⊗ Friend ⊗ environment. The Hamiltonian
//! is `H_C ⊗ I + I ⊗ H_D` with each side a broadcasting Hamiltonian of the
//! simple scenario.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::discrimination::helstrom;
use crate::error::{Error, Result};
use crate::gue::Register;
use crate::qcore::{
    c, eigenvalue_clusters, max_abs, max_qubits_from_env, partial_trace_matrix, pinch_report, tensor,
    trace_product, CMatrix, DensityOperator, HermitianOperator, LabLayout, C64, DENSE_MAX_QUBITS, HERMITIAN_TOL,
};
use crate::wf::{
    BroadcastTerms, Diagnostics, LabConditionals, Macrofraction, Overlaps, Representation, DEFAULT_DEGENERACY_TOL,
};

/// `(√2 − 1)/2`: below this readout error the modified bound `2 + 4ε` stays
/// under the Tsirelson value `2√2`.
pub const LF_THRESHOLD: f64 = (std::f64::consts::SQRT_2 - 1.0) / 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lab {
    Charlie,
    Debbie,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EwfsConfig {
    /// Charlie's Friend (`n_f`) and environment (`n_e`) qubits.
    pub charlie: LabLayout,
    pub debbie: LabLayout,
    /// Source angle; every reported metric is independent of it.
    pub theta: f64,
    pub degeneracy_tol: f64,
    pub seed: u64,
    pub dense: bool,
}

impl EwfsConfig {
    /// Checks the combined qubit count against `WFQD_MAX_QUBITS`.
    pub fn new(n_c: usize, n_ec: usize, n_d: usize, n_ed: usize) -> Result<Self> {
        Self::with_limit(n_c, n_ec, n_d, n_ed, max_qubits_from_env())
    }

    pub fn with_limit(n_c: usize, n_ec: usize, n_d: usize, n_ed: usize, max_qubits: usize) -> Result<Self> {
        let requested = n_c + n_ec + n_d + n_ed;
        if requested > max_qubits {
            return Err(Error::ResourceLimit {
                requested,
                limit: max_qubits,
            });
        }
        Ok(Self {
            charlie: LabLayout::with_limit(n_c, n_ec, max_qubits)?,
            debbie: LabLayout::with_limit(n_d, n_ed, max_qubits)?,
            theta: std::f64::consts::FRAC_PI_4,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            seed: 0,
            dense: false,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn layout(&self, lab: Lab) -> LabLayout {
        match lab {
            Lab::Charlie => self.charlie,
            Lab::Debbie => self.debbie,
        }
    }

    /// Lab qubits, excluding the two source qubits.
    pub fn qubits(&self) -> usize {
        self.charlie.qubits() + self.debbie.qubits()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.theta.is_finite() {
            return Err(Error::InvalidConfig("theta must be finite".into()));
        }
        if self.degeneracy_tol.is_nan() || self.degeneracy_tol < 0.0 {
            return Err(Error::InvalidConfig("degeneracy tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

fn source_amplitudes(theta: f64) -> [f64; 4] {
    let (s, co) = theta.sin_cos();
    let k = std::f64::consts::FRAC_1_SQRT_2;
    // |00⟩, |01⟩, |10⟩, |11⟩
    [-s * k, co * k, -co * k, -s * k]
}

/// `(cos θ(|01⟩ − |10⟩) − sin θ(|00⟩ + |11⟩))/√2`.
pub fn source_state(theta: f64) -> DensityOperator {
    let amps = source_amplitudes(theta).map(|a| c(a, 0.0));
    DensityOperator::pure(&amps).expect("unit vector")
}

/// Computational-basis table `p(c, d)` of the source.
pub fn source_table(theta: f64) -> [[f64; 2]; 2] {
    let a = source_amplitudes(theta);
    [[a[0] * a[0], a[1] * a[1]], [a[2] * a[2], a[3] * a[3]]]
}

/// Local terms of both labs of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct EwfsTerms {
    pub charlie: BroadcastTerms,
    pub debbie: BroadcastTerms,
}

impl EwfsTerms {
    pub fn sample(config: &EwfsConfig, sample_index: u64) -> Result<Self> {
        Ok(Self {
            charlie: BroadcastTerms::sample(
                config.charlie,
                config.seed,
                sample_index,
                [Register::Charlie, Register::CharlieEnvironment],
            )?,
            debbie: BroadcastTerms::sample(
                config.debbie,
                config.seed,
                sample_index,
                [Register::Debbie, Register::DebbieEnvironment],
            )?,
        })
    }

    /// `H_CD = H_C ⊗ I + I ⊗ H_D`.
    pub fn joint_hamiltonian(&self) -> HermitianOperator {
        let hc = self.charlie.lab_hamiltonian().into_matrix();
        let hd = self.debbie.lab_hamiltonian().into_matrix();
        let ic = CMatrix::identity(hc.nrows(), hc.nrows());
        let id = CMatrix::identity(hd.nrows(), hd.nrows());
        HermitianOperator::new(hc.kronecker(&id) + ic.kronecker(&hd)).expect("square")
    }

    /// Spectrum of `H_CD`: sums over both pointer sectors of both labs.
    pub fn joint_spectrum(&self) -> Vec<f64> {
        let side = |t: &BroadcastTerms| [t.sector_spectrum(0), t.sector_spectrum(1)].concat();
        let sc = side(&self.charlie);
        let sd = side(&self.debbie);
        sc.iter().flat_map(|a| sd.iter().map(move |b| a + b)).collect()
    }

    pub fn swapped(&self) -> Self {
        Self {
            charlie: self.debbie.clone(),
            debbie: self.charlie.clone(),
        }
    }
}

pub fn build_ewfs_h(config: &EwfsConfig, sample_index: u64) -> Result<HermitianOperator> {
    config.validate()?;
    Ok(EwfsTerms::sample(config, sample_index)?.joint_hamiltonian())
}

/// Product eigenbasis of one lab's sector Hamiltonian. Index `α` enumerates
/// products of single-qubit eigenvectors, Friend qubits first, most
/// significant bit first.
#[derive(Clone, Debug, PartialEq)]
pub struct SectorBasis {
    n_f: usize,
    values: Vec<[f64; 2]>,
    vectors: Vec<CMatrix>,
    /// Energy of every product level.
    pub energies: Vec<f64>,
    /// `⟨α|0…0⟩` for every product level.
    pub amplitudes: Vec<C64>,
}

impl SectorBasis {
    pub fn new(terms: &BroadcastTerms, outcome: usize) -> Self {
        let locals: Vec<_> = terms
            .friend_terms(outcome)
            .iter()
            .chain(terms.env_terms(outcome))
            .map(|h| h.eig())
            .collect();
        let n = locals.len();
        let values: Vec<[f64; 2]> = locals.iter().map(|e| [e.eigenvalues[0], e.eigenvalues[1]]).collect();
        let vectors: Vec<CMatrix> = locals.into_iter().map(|e| e.eigenvectors).collect();
        let dim = 1usize << n;
        let bit = |alpha: usize, q: usize| (alpha >> (n - 1 - q)) & 1;
        let energies = (0..dim)
            .map(|a| (0..n).map(|q| values[q][bit(a, q)]).sum())
            .collect();
        let amplitudes = (0..dim)
            .map(|a| (0..n).map(|q| vectors[q][(0, bit(a, q))].conj()).product())
            .collect();
        Self {
            n_f: terms.layout().n_f(),
            values,
            vectors,
            energies,
            amplitudes,
        }
    }

    fn qubits(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.qubits()
    }

    /// Product eigenvector of level `alpha` restricted to qubits `first..last`.
    fn vector(&self, alpha: usize, first: usize, last: usize) -> DVector<C64> {
        let n = self.qubits();
        let mut v = DVector::from_element(1, c(1.0, 0.0));
        for q in first..last {
            let b = (alpha >> (n - 1 - q)) & 1;
            v = v.kronecker(&self.vectors[q].column(b).into_owned());
        }
        v
    }

    /// Per-qubit dephased ground state `Σ_a |⟨a|0⟩|² |a⟩⟨a|`.
    fn qubit_states(&self) -> Vec<DensityOperator> {
        self.vectors
            .iter()
            .map(|v| {
                let mut m = CMatrix::zeros(2, 2);
                for a in 0..2 {
                    let col = v.column(a);
                    m += (col * col.adjoint()).scale(v[(0, a)].norm_sqr());
                }
                DensityOperator::from_trusted(m)
            })
            .collect()
    }

    /// Kronecker product of all local eigenvector matrices.
    fn unitary(&self) -> CMatrix {
        let refs: Vec<&CMatrix> = self.vectors.iter().collect();
        tensor(&refs).expect("non-empty lab")
    }

    pub fn local_eigenvalues(&self) -> &[[f64; 2]] {
        &self.values
    }
}

/// One off-diagonal element `⟨u|ρ|v⟩` of the pinched joint state between two
/// distinct product levels with (numerically) equal energy. Levels are
/// indexed in `(1, C-lab, 2, D-lab)` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coherence {
    pub row: usize,
    pub col: usize,
    pub value: C64,
}

/// Product bases and surviving coherences; present only when the joint
/// spectrum has near-degenerate levels.
#[derive(Clone, Debug, PartialEq)]
pub struct JointStructure {
    pub charlie: [SectorBasis; 2],
    pub debbie: [SectorBasis; 2],
    source: [f64; 4],
    pub coherences: Vec<Coherence>,
}

impl JointStructure {
    fn level(&self, index: usize) -> (usize, usize, usize, usize) {
        let (nc, nd) = (self.charlie[0].dim(), self.debbie[0].dim());
        let beta = index % nd;
        let rest = index / nd;
        let d = rest % 2;
        let rest = rest / 2;
        (rest / nc, rest % nc, d, beta)
    }

    fn amplitude(&self, index: usize) -> C64 {
        let (ci, alpha, di, beta) = self.level(index);
        self.charlie[ci].amplitudes[alpha] * self.debbie[di].amplitudes[beta] * self.source[ci * 2 + di]
    }

    fn swapped(&self) -> JointStructure {
        let (nc, nd) = (self.charlie[0].dim(), self.debbie[0].dim());
        let remap = |index: usize| {
            let (ci, alpha, di, beta) = self.level(index);
            ((di * nd + beta) * 2 + ci) * nc + alpha
        };
        let s = &self.source;
        JointStructure {
            charlie: self.debbie.clone(),
            debbie: self.charlie.clone(),
            source: [s[0], s[2], s[1], s[3]],
            coherences: self
                .coherences
                .iter()
                .map(|k| Coherence {
                    row: remap(k.row),
                    col: remap(k.col),
                    value: k.value,
                })
                .collect(),
        }
    }

    /// `U (D + C) U†` with `D` the dephased diagonal, `C` the coherences and
    /// `U` the product eigenbasis.
    fn dense(&self) -> CMatrix {
        let block = |b: &[SectorBasis; 2]| {
            let (u0, u1) = (b[0].unitary(), b[1].unitary());
            let d = u0.nrows();
            let mut m = CMatrix::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&u0);
            m.view_mut((d, d), (d, d)).copy_from(&u1);
            m
        };
        let u = block(&self.charlie).kronecker(&block(&self.debbie));
        let n = u.nrows();
        let mut inner = CMatrix::from_diagonal(&DVector::from_fn(n, |i, _| c(self.amplitude(i).norm_sqr(), 0.0)));
        for k in &self.coherences {
            inner[(k.row, k.col)] += k.value;
        }
        &u * inner * u.adjoint()
    }
}

/// Post-measurement state of both labs. Without near-degenerate levels it is
/// `Σ_{cd} p(c,d) |c⟩⟨c| ⊗ ρ_C⁽ᶜ⁾ ⊗ |d⟩⟨d| ⊗ ρ_D⁽ᵈ⁾`.
#[derive(Clone, Debug, PartialEq)]
pub struct EwfsState {
    pub charlie_layout: LabLayout,
    pub debbie_layout: LabLayout,
    pub p_cd: [[f64; 2]; 2],
    /// Each lab's states conditional on its own outcome.
    pub charlie: LabConditionals,
    pub debbie: LabConditionals,
    /// Full pinched joint state; present on the dense path.
    pub joint: Option<DensityOperator>,
    pub structure: Option<Box<JointStructure>>,
    pub diagnostics: Diagnostics,
}

impl EwfsState {
    pub fn representation(&self) -> Representation {
        if self.joint.is_none() && self.structure.is_none() {
            Representation::Factored
        } else {
            Representation::Dense
        }
    }

    pub fn marginal(&self, lab: Lab) -> [f64; 2] {
        let p = &self.p_cd;
        match lab {
            Lab::Charlie => [p[0][0] + p[0][1], p[1][0] + p[1][1]],
            Lab::Debbie => [p[0][0] + p[1][0], p[0][1] + p[1][1]],
        }
    }

    pub fn conditionals(&self, lab: Lab) -> &LabConditionals {
        match lab {
            Lab::Charlie => &self.charlie,
            Lab::Debbie => &self.debbie,
        }
    }

    pub fn layout(&self, lab: Lab) -> LabLayout {
        match lab {
            Lab::Charlie => self.charlie_layout,
            Lab::Debbie => self.debbie_layout,
        }
    }

    /// Joint state on `(1, C, E_C, 2, D, E_D)`.
    pub fn dense_joint(&self) -> Result<DensityOperator> {
        if let Some(joint) = &self.joint {
            return Ok(joint.clone());
        }
        let qubits = self.charlie_layout.qubits() + self.debbie_layout.qubits() + 2;
        if qubits > DENSE_MAX_QUBITS {
            return Err(Error::ResourceLimit {
                requested: qubits,
                limit: DENSE_MAX_QUBITS,
            });
        }
        if let Some(structure) = &self.structure {
            let m = structure.dense();
            return Ok(DensityOperator::from_trusted((&m + m.adjoint()).scale(0.5)));
        }
        let lab_block = |cond: &LabConditionals, k: usize| {
            let s = cond.sector_state(k).into_matrix();
            let mut proj = CMatrix::zeros(2, 2);
            proj[(k, k)] = c(1.0, 0.0);
            proj.kronecker(&s)
        };
        let dim = 1usize << qubits;
        let mut m = CMatrix::zeros(dim, dim);
        for (ci, row) in self.p_cd.iter().enumerate() {
            for (di, &p) in row.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                m += lab_block(&self.charlie, ci).kronecker(&lab_block(&self.debbie, di)) * c(p, 0.0);
            }
        }
        Ok(DensityOperator::from_trusted(m))
    }

    pub fn to_dense(&self) -> Result<EwfsState> {
        Ok(EwfsState {
            charlie: self.charlie.to_dense(),
            debbie: self.debbie.to_dense(),
            joint: Some(self.dense_joint()?),
            ..self.clone()
        })
    }

    /// Same state with the two labs' roles exchanged.
    pub fn swapped(&self) -> EwfsState {
        let p = &self.p_cd;
        let joint = self.joint.as_ref().map(|joint| {
            let dc = 2 * self.charlie_layout.register_dim();
            let dd = 2 * self.debbie_layout.register_dim();
            let n = dc * dd;
            // index `i` of the swapped order is `(D-lab, C-lab)`
            let orig = |i: usize| (i % dc) * dd + i / dc;
            DensityOperator::from_trusted(CMatrix::from_fn(n, n, |i, j| joint.matrix()[(orig(i), orig(j))]))
        });
        EwfsState {
            charlie_layout: self.debbie_layout,
            debbie_layout: self.charlie_layout,
            p_cd: [[p[0][0], p[1][0]], [p[0][1], p[1][1]]],
            charlie: self.debbie.clone(),
            debbie: self.charlie.clone(),
            joint,
            structure: self.structure.as_ref().map(|s| Box::new(s.swapped())),
            diagnostics: self.diagnostics,
        }
    }
}

/// Conditional states of lab `lab` (0 Charlie, 1 Debbie) given its own outcome,
/// from a dense joint state: `Tr_other(⟨k|ρ|k⟩)/p(k)`.
fn dense_lab_conditionals(
    joint: &CMatrix,
    layouts: [LabLayout; 2],
    p_cd: &[[f64; 2]; 2],
    lab: usize,
) -> Result<LabConditionals> {
    let dcl = layouts[0].register_dim();
    let ddl = layouts[1].register_dim();
    let own = layouts[lab];
    let own_dims = [own.friend_dim(), own.env_dim()];
    let sector = |k: usize| -> Result<(DensityOperator, DensityOperator, DensityOperator)> {
        let weight = |o: usize| if lab == 0 { p_cd[k][o] } else { p_cd[o][k] };
        let p = weight(0) + weight(1);
        let lab_state = if p > 0.0 {
            let mut acc = CMatrix::zeros(own.register_dim(), own.register_dim());
            for other in 0..2 {
                let (ci, di) = if lab == 0 { (k, other) } else { (other, k) };
                let idx: Vec<usize> = (0..dcl)
                    .flat_map(|a| (0..ddl).map(move |b| ((ci * dcl + a) * 2 + di) * ddl + b))
                    .collect();
                let n = idx.len();
                let block = CMatrix::from_fn(n, n, |i, j| joint[(idx[i], idx[j])]);
                acc += partial_trace_matrix(&block, &[dcl, ddl], &[lab])?;
            }
            acc.unscale(p)
        } else {
            // unpopulated outcome: the state carries no weight
            CMatrix::identity(own.register_dim(), own.register_dim()).unscale(own.register_dim() as f64)
        };
        let f = partial_trace_matrix(&lab_state, &own_dims, &[0])?;
        let e = partial_trace_matrix(&lab_state, &own_dims, &[1])?;
        Ok((
            DensityOperator::from_trusted(lab_state),
            DensityOperator::from_trusted(f),
            DensityOperator::from_trusted(e),
        ))
    };
    let (s0, f0, e0) = sector(0)?;
    let (s1, f1, e1) = sector(1)?;
    Ok(LabConditionals {
        friend: [Macrofraction::Dense(f0), Macrofraction::Dense(f1)],
        env: [Macrofraction::Dense(e0), Macrofraction::Dense(e1)],
        sectors: Some([s0, s1]),
    })
}

fn dense_ewfs(config: &EwfsConfig, terms: &EwfsTerms) -> Result<(EwfsState, usize)> {
    let qubits = config.qubits() + 2;
    if qubits > DENSE_MAX_QUBITS {
        return Err(Error::ResourceLimit {
            requested: qubits,
            limit: DENSE_MAX_QUBITS,
        });
    }
    let lab_init = |l: &LabLayout| DensityOperator::basis(l.register_dim(), 0);
    let init = tensor(&[
        source_state(config.theta).matrix(),
        lab_init(&config.charlie).matrix(),
        lab_init(&config.debbie).matrix(),
    ])?;
    // reorder (1, 2, C-lab, D-lab) into (1, C-lab, 2, D-lab)
    let dcl = config.charlie.register_dim();
    let ddl = config.debbie.register_dim();
    let n = init.nrows();
    let from = |g: usize| {
        let b = g % ddl;
        let rest = g / ddl;
        let q2 = rest % 2;
        let rest = rest / 2;
        let a = rest % dcl;
        let q1 = rest / dcl;
        ((q1 * 2 + q2) * dcl + a) * ddl + b
    };
    let init = DensityOperator::from_trusted(CMatrix::from_fn(n, n, |i, j| init[(from(i), from(j))]));
    let pinched = pinch_report(&init, &terms.joint_hamiltonian(), config.degeneracy_tol)?;
    let joint = pinched.state;
    let p_cd = source_table(config.theta);
    let layouts = [config.charlie, config.debbie];
    let charlie = dense_lab_conditionals(joint.matrix(), layouts, &p_cd, 0)?;
    let debbie = dense_lab_conditionals(joint.matrix(), layouts, &p_cd, 1)?;
    Ok((
        EwfsState {
            charlie_layout: config.charlie,
            debbie_layout: config.debbie,
            p_cd,
            charlie,
            debbie,
            joint: Some(joint),
            structure: None,
            diagnostics: Diagnostics::default(),
        },
        pinched.degenerate_clusters,
    ))
}

/// Off-diagonal elements of the pinched joint state that survive because
/// their two levels fall in one energy cluster. Returns them with the number
/// of levels merged into clusters.
fn surviving_coherences(structure: &JointStructure, tol: f64) -> (Vec<Coherence>, usize) {
    let (nc, nd) = (structure.charlie[0].dim(), structure.debbie[0].dim());
    let mut levels = Vec::with_capacity(4 * nc * nd);
    for ci in 0..2 {
        for alpha in 0..nc {
            for di in 0..2 {
                for beta in 0..nd {
                    let e = structure.charlie[ci].energies[alpha] + structure.debbie[di].energies[beta];
                    levels.push((e, ((ci * nc + alpha) * 2 + di) * nd + beta));
                }
            }
        }
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let energies: Vec<f64> = levels.iter().map(|l| l.0).collect();
    let mut coherences = Vec::new();
    let mut merged = 0;
    for cluster in eigenvalue_clusters(&energies, tol).into_iter().filter(|r| r.len() > 1) {
        merged += cluster.len() - 1;
        for i in cluster.clone() {
            for j in cluster.clone() {
                if i == j {
                    continue;
                }
                let (row, col) = (levels[i].1, levels[j].1);
                let value = structure.amplitude(row) * structure.amplitude(col).conj();
                if value != c(0.0, 0.0) {
                    coherences.push(Coherence { row, col, value });
                }
            }
        }
    }
    (coherences, merged)
}

/// Conditional states of one lab from the product-basis description: the
/// dephased product states plus any coherences that stay within one of the
/// lab's outcomes and act trivially on the other lab.
fn structured_lab_conditionals(
    structure: &JointStructure,
    p_cd: &[[f64; 2]; 2],
    layout: LabLayout,
    lab: usize,
) -> Result<LabConditionals> {
    let bases = if lab == 0 { &structure.charlie } else { &structure.debbie };
    // (outcome, α, α', weight) in the lab's own product basis
    let mut corrections = Vec::new();
    for k in &structure.coherences {
        let (r, s) = (structure.level(k.row), structure.level(k.col));
        let (own_r, own_s, other_r, other_s) = if lab == 0 {
            ((r.0, r.1), (s.0, s.1), (r.2, r.3), (s.2, s.3))
        } else {
            ((r.2, r.3), (s.2, s.3), (r.0, r.1), (s.0, s.1))
        };
        if own_r.0 == own_s.0 && other_r == other_s && own_r.1 != own_s.1 {
            let p = if lab == 0 {
                p_cd[own_r.0][0] + p_cd[own_r.0][1]
            } else {
                p_cd[0][own_r.0] + p_cd[1][own_r.0]
            };
            corrections.push((own_r.0, own_r.1, own_s.1, k.value / p));
        }
    }
    let product = |k: usize| Macrofraction::Factored(bases[k].qubit_states());
    let (n_f, n_e) = (layout.n_f(), layout.n_e());
    if corrections.is_empty() {
        return Ok(LabConditionals {
            friend: [0, 1].map(|k| {
                let Macrofraction::Factored(q) = product(k) else { unreachable!() };
                Macrofraction::Factored(q[..n_f].to_vec())
            }),
            env: [0, 1].map(|k| {
                let Macrofraction::Factored(q) = product(k) else { unreachable!() };
                Macrofraction::Factored(q[n_f..].to_vec())
            }),
            sectors: None,
        });
    }
    let n = n_f + n_e;
    let env_mask = (1usize << n_e) - 1;
    let sector = |k: usize| -> (DensityOperator, DensityOperator, DensityOperator) {
        let base = bases[k].qubit_states();
        let dense = |qs: &[DensityOperator]| {
            let refs: Vec<&DensityOperator> = qs.iter().collect();
            crate::qcore::tensor_states(&refs).expect("non-empty").into_matrix()
        };
        let mut joint = dense(&base);
        let mut f = dense(&base[..n_f]);
        let mut e = dense(&base[n_f..]);
        for &(outcome, a, b, w) in corrections.iter().filter(|x| x.0 == k) {
            let (va, vb) = (bases[k].vector(a, 0, n), bases[k].vector(b, 0, n));
            joint += &va * vb.adjoint() * w;
            if a & env_mask == b & env_mask {
                let (fa, fb) = (bases[outcome].vector(a, 0, n_f), bases[outcome].vector(b, 0, n_f));
                f += &fa * fb.adjoint() * w;
            }
            if a >> n_e == b >> n_e {
                let (ea, eb) = (bases[outcome].vector(a, n_f, n), bases[outcome].vector(b, n_f, n));
                e += &ea * eb.adjoint() * w;
            }
        }
        let herm = |m: CMatrix| DensityOperator::from_trusted((&m + m.adjoint()).scale(0.5));
        (herm(joint), herm(f), herm(e))
    };
    let (s0, f0, e0) = sector(0);
    let (s1, f1, e1) = sector(1);
    Ok(LabConditionals {
        friend: [Macrofraction::Dense(f0), Macrofraction::Dense(f1)],
        env: [Macrofraction::Dense(e0), Macrofraction::Dense(e1)],
        sectors: Some([s0, s1]),
    })
}

pub fn equilibrate_ewfs(config: &EwfsConfig, sample_index: u64) -> Result<EwfsState> {
    config.validate()?;
    let terms = EwfsTerms::sample(config, sample_index)?;
    equilibrate_ewfs_with_terms(config, &terms)
}

/// Pinches `ρ₁₂ ⊗ |0…0⟩⟨0…0|` under `H_CD`.
///
/// `H_CD` is a sum of commuting single-qubit terms, so its eigenbasis is a
/// product basis and the pinched state is the dephased diagonal in that basis
/// plus the coherences between levels of one energy cluster. Generic samples
/// have none and stay in product form. With `config.dense` the joint state is
/// instead pinched by diagonalizing `H_CD` as a whole.
pub fn equilibrate_ewfs_with_terms(config: &EwfsConfig, terms: &EwfsTerms) -> Result<EwfsState> {
    config.validate()?;
    if terms.charlie.layout() != config.charlie || terms.debbie.layout() != config.debbie {
        return Err(Error::InvalidConfig("terms were sampled for a different layout".into()));
    }
    if config.dense {
        let (mut state, merged) = dense_ewfs(config, terms)?;
        state.diagnostics.near_degeneracies = merged;
        return Ok(state);
    }
    let mut structure = JointStructure {
        charlie: [SectorBasis::new(&terms.charlie, 0), SectorBasis::new(&terms.charlie, 1)],
        debbie: [SectorBasis::new(&terms.debbie, 0), SectorBasis::new(&terms.debbie, 1)],
        source: source_amplitudes(config.theta),
        coherences: Vec::new(),
    };
    let (coherences, merged) = surviving_coherences(&structure, config.degeneracy_tol);
    if merged > 0 {
        log::info!("{merged} near-degenerate level(s) in the joint Hamiltonian; keeping their coherences");
    }
    structure.coherences = coherences;
    let p_cd = source_table(config.theta);
    let charlie = structured_lab_conditionals(&structure, &p_cd, config.charlie, 0)?;
    let debbie = structured_lab_conditionals(&structure, &p_cd, config.debbie, 1)?;
    Ok(EwfsState {
        charlie_layout: config.charlie,
        debbie_layout: config.debbie,
        p_cd,
        charlie,
        debbie,
        joint: None,
        structure: (merged > 0).then(|| Box::new(structure)),
        diagnostics: Diagnostics {
            near_degeneracies: merged,
            dense_fallback: false,
        },
    })
}

/// Overlaps of one lab's conditional Friend and environment states.
pub fn ewfs_overlaps(state: &EwfsState, lab: Lab) -> Overlaps {
    let cond = state.conditionals(lab);
    Overlaps {
        friend_overlap: cond.friend[0].overlap(&cond.friend[1]),
        env_overlap: cond.env[0].overlap(&cond.env[1]),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LfReport {
    /// Readout error of the Friend's optimal measurement.
    pub varepsilon: f64,
    /// Modified CHSH bound `2 + 4ε`.
    pub bound: f64,
    /// True when the bound is below the Tsirelson value.
    pub violable: bool,
}

impl LfReport {
    pub fn from_epsilon(varepsilon: f64) -> Self {
        Self {
            varepsilon,
            bound: 2.0 + 4.0 * varepsilon,
            violable: varepsilon < LF_THRESHOLD,
        }
    }
}

/// `ε = 1 − Σ_c p(c) Tr(Π⁽ᶜ⁾ρ⁽ᶜ⁾)` for one lab's Friend register, with `Π`
/// the Helstrom measurement for the lab's marginal prior.
pub fn lf_epsilon_from(rho: [&DensityOperator; 2], prior: [f64; 2]) -> Result<LfReport> {
    let povm = helstrom(rho[0], rho[1], prior[0])?;
    let success = prior[0] * povm.probability(0, rho[0].matrix()) + prior[1] * povm.probability(1, rho[1].matrix());
    Ok(LfReport::from_epsilon((1.0 - success).clamp(0.0, 1.0)))
}

pub fn lf_epsilon_for(state: &EwfsState, lab: Lab) -> Result<LfReport> {
    let cond = state.conditionals(lab);
    let r0 = cond.friend[0].to_state();
    let r1 = cond.friend[1].to_state();
    lf_epsilon_from([&r0, &r1], state.marginal(lab))
}

/// Readout error of Charlie's Friend.
pub fn lf_epsilon(state: &EwfsState) -> Result<LfReport> {
    lf_epsilon_for(state, Lab::Charlie)
}

fn check_observable(op: &CMatrix, dim: usize) -> Result<()> {
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: op.nrows(),
        });
    }
    let defect = max_abs(&(op - op.adjoint()));
    if defect > HERMITIAN_TOL * max_abs(op).max(1.0) {
        return Err(Error::InvalidObservable(format!("not Hermitian (deviation {defect:e})")));
    }
    let eig = HermitianOperator::new(op.clone())?.eig();
    let (lo, hi) = (eig.eigenvalues[0], eig.eigenvalues[dim - 1]);
    if lo < -1.0 - 1e-10 || hi > 1.0 + 1e-10 {
        return Err(Error::InvalidObservable(format!("spectrum [{lo}, {hi}] exceeds [-1, 1]")));
    }
    Ok(())
}

/// `⟨A₀B₀⟩ + ⟨A₀B₁⟩ − ⟨A₁B₀⟩ + ⟨A₁B₁⟩` on a bipartite state whose first
/// factor has dimension `dim_a`.
pub fn chsh(rho: &DensityOperator, dim_a: usize, a: [&CMatrix; 2], b: [&CMatrix; 2]) -> Result<f64> {
    if dim_a == 0 || !rho.dim().is_multiple_of(dim_a) {
        return Err(Error::DimensionMismatch {
            expected: dim_a,
            found: rho.dim(),
        });
    }
    let dim_b = rho.dim() / dim_a;
    for op in a {
        check_observable(op, dim_a)?;
    }
    for op in b {
        check_observable(op, dim_b)?;
    }
    let corr = |x: &CMatrix, y: &CMatrix| trace_product(&x.kronecker(y), rho.matrix());
    Ok(corr(a[0], b[0]) + corr(a[0], b[1]) - corr(a[1], b[0]) + corr(a[1], b[1]))
}

/// CHSH value with `a` acting on Charlie's whole lab and `b` on Debbie's.
pub fn chsh_value(state: &EwfsState, a: [&CMatrix; 2], b: [&CMatrix; 2]) -> Result<f64> {
    let joint = state.dense_joint()?;
    chsh(&joint, 2 * state.charlie_layout.register_dim(), a, b)
}

/// `U diag(±1) U†` with `U` the eigenvectors of a Gaussian Hermitian matrix
/// and independent uniformly random signs.
pub fn random_dichotomic(dim: usize, rng: &mut impl Rng) -> CMatrix {
    let g = CMatrix::from_fn(dim, dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let u = HermitianOperator::new(g).expect("square").eig().eigenvectors;
    let signs = DVector::from_fn(dim, |_, _| c(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0));
    let m = &u * CMatrix::from_diagonal(&signs) * u.adjoint();
    (&m + m.adjoint()).scale(0.5)
}
