//! Helstrom measurements, the F/E agreement measurement and the observer
//! probabilities of the simple scenario.
//!
//! The Helstrom element for outcome 0 projects onto the positive part of
//! `O = p₀ρ₀ − p₁ρ₁`, which maximizes `p₀Tr(M₀ρ₀) + p₁Tr(M₁ρ₁)`. Eigenvalues
//! with `|λ| < 1e-10·‖O‖` go to the element of the larger prior (outcome 0 on
//! a tie).

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::qcore::{
    basis_projector, c, eig_hermitian, identity, max_abs, tensor, trace_product, CMatrix, DensityOperator,
    HermitianOperator, LabLayout, PSD_TOL,
};
use crate::wf::{LabState, Representation, WfConfig};

pub const COMPLETENESS_TOL: f64 = 1e-10;
pub const HELSTROM_ZERO_TOL: f64 = 1e-10;

/// A two-outcome POVM `{M₀, M₁}` with `M₀ + M₁ = I`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoElementPovm {
    elements: [CMatrix; 2],
}

impl TwoElementPovm {
    pub fn new(m0: CMatrix, m1: CMatrix) -> Result<Self> {
        if m0.shape() != m1.shape() {
            return Err(Error::DimensionMismatch {
                expected: m0.nrows(),
                found: m1.nrows(),
            });
        }
        let d = m0.nrows();
        let defect = max_abs(&(&m0 + &m1 - identity(d)));
        if defect > COMPLETENESS_TOL {
            return Err(Error::InvalidPovm(format!("elements sum to identity only within {defect:e}")));
        }
        for m in [&m0, &m1] {
            let eig = eig_hermitian(m).map_err(|e| Error::InvalidPovm(e.to_string()))?;
            if eig.eigenvalues[0] < -PSD_TOL {
                return Err(Error::InvalidPovm(format!(
                    "element has eigenvalue {:e}",
                    eig.eigenvalues[0]
                )));
            }
        }
        Ok(Self { elements: [m0, m1] })
    }

    fn from_parts(m0: CMatrix, m1: CMatrix) -> Self {
        Self { elements: [m0, m1] }
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn element(&self, outcome: usize) -> &CMatrix {
        &self.elements[outcome]
    }

    /// `Tr(M_outcome ρ)`.
    pub fn probability(&self, outcome: usize, rho: &CMatrix) -> f64 {
        trace_product(&self.elements[outcome], rho)
    }

    /// True when the element is the zero operator (a rank-zero projector).
    pub fn is_zero(&self, outcome: usize) -> bool {
        max_abs(&self.elements[outcome]) < 1e-12
    }

    pub fn swapped(&self) -> Self {
        Self::from_parts(self.elements[1].clone(), self.elements[0].clone())
    }

    pub fn is_projective(&self, tol: f64) -> bool {
        self.elements.iter().all(|m| max_abs(&(m * m - m)) < tol)
    }

    /// The element divided by its trace, or the maximally mixed state when the
    /// element has zero rank. The flag reports the substitution.
    pub fn normalized(&self, outcome: usize) -> (DensityOperator, bool) {
        let m = &self.elements[outcome];
        let tr = m.trace().re;
        if self.is_zero(outcome) || tr <= 0.0 {
            (DensityOperator::maximally_mixed(self.dim()), true)
        } else {
            (DensityOperator::from_trusted(m.unscale(tr)), false)
        }
    }
}

fn check_prior(p0: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::InvalidConfig(format!("prior must lie in [0, 1], got {p0}")));
    }
    Ok(())
}

/// Minimum-error measurement discriminating `ρ₀` (prior `p0`) from `ρ₁`.
pub fn helstrom(rho0: &DensityOperator, rho1: &DensityOperator, p0: f64) -> Result<TwoElementPovm> {
    if rho0.dim() != rho1.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho0.dim(),
            found: rho1.dim(),
        });
    }
    check_prior(p0)?;
    let p1 = 1.0 - p0;
    let o = rho0.matrix().scale(p0) - rho1.matrix().scale(p1);
    let eig = HermitianOperator::new(o)?.eig();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, l| a.max(l.abs()));
    let zero_tol = HELSTROM_ZERO_TOL * scale;
    let zero_to_first = p0 >= p1;

    let (mut first, mut second) = (Vec::new(), Vec::new());
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let to_first = if lambda.abs() <= zero_tol {
            zero_to_first
        } else {
            lambda > 0.0
        };
        if to_first {
            first.push(k);
        } else {
            second.push(k);
        }
    }
    Ok(TwoElementPovm::from_parts(eig.projector(&first), eig.projector(&second)))
}

/// `p₀Tr(M₀ρ₀) + p₁Tr(M₁ρ₁)`.
pub fn success_probability(povm: &TwoElementPovm, rho0: &DensityOperator, rho1: &DensityOperator, p0: f64) -> f64 {
    p0 * povm.probability(0, rho0.matrix()) + (1.0 - p0) * povm.probability(1, rho1.matrix())
}

fn gaussian_matrix(rng: &mut impl Rng, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_povm(rng: &mut impl Rng, d: usize) -> TwoElementPovm {
    if rng.random::<bool>() {
        // projective: Haar eigenbasis split into two random groups
        let eig = HermitianOperator::new(gaussian_matrix(rng, d)).expect("square").eig();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in 0..d {
            if rng.random::<bool>() {
                a.push(k);
            } else {
                b.push(k);
            }
        }
        TwoElementPovm::from_parts(eig.projector(&a), eig.projector(&b))
    } else {
        // S^{-1/2} A S^{-1/2} with A, B random PSD and S = A + B
        let ga = gaussian_matrix(rng, d);
        let gb = gaussian_matrix(rng, d);
        let a = &ga * ga.adjoint();
        let s = &a + &gb * gb.adjoint();
        let eig = HermitianOperator::new(s).expect("square").eig();
        let inv_sqrt = DVector::from_iterator(d, eig.eigenvalues.iter().map(|l| c(1.0 / l.sqrt(), 0.0)));
        let s_inv_sqrt = &eig.eigenvectors * CMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.adjoint();
        let m0 = &s_inv_sqrt * a * &s_inv_sqrt;
        let m0 = (&m0 + m0.adjoint()).scale(0.5);
        let m1 = identity(d) - &m0;
        TwoElementPovm::from_parts(m0, m1)
    }
}

/// Random-search cross-check: `false` if any of `trials` random two-element
/// POVMs beats `povm`'s success probability by more than 1e-3. Intended for
/// dimensions up to 8.
pub fn verify_optimality(
    rho0: &DensityOperator,
    rho1: &DensityOperator,
    p0: f64,
    povm: &TwoElementPovm,
    trials: usize,
    rng: &mut impl Rng,
) -> bool {
    let candidate = success_probability(povm, rho0, rho1, p0);
    (0..trials).all(|_| {
        let trial = random_povm(rng, rho0.dim());
        success_probability(&trial, rho0, rho1, p0) <= candidate + 1e-3
    })
}

/// "Do the Friend and the environment record the same outcome?"
/// `M⁰ = Σ_α Π_S^α ⊗ (Π_F⁰⊗Π_E⁰ + Π_F¹⊗Π_E¹)`, `M¹` the mismatched pairs.
pub fn agreement_povm(pf: &TwoElementPovm, pe: &TwoElementPovm, layout: &LabLayout) -> Result<TwoElementPovm> {
    for (povm, expected) in [(pf, layout.friend_dim()), (pe, layout.env_dim())] {
        if povm.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: povm.dim(),
            });
        }
    }
    let d = layout.total_dim();
    let mut same = CMatrix::zeros(d, d);
    let mut diff = CMatrix::zeros(d, d);
    for alpha in 0..2 {
        let ps = basis_projector(2, alpha);
        for beta in 0..2 {
            for gamma in 0..2 {
                let term = tensor(&[&ps, pf.element(beta), pe.element(gamma)])?;
                if beta == gamma {
                    same += term;
                } else {
                    diff += term;
                }
            }
        }
    }
    Ok(TwoElementPovm::from_parts(same, diff))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ZeroRankFlags {
    pub friend: [bool; 2],
    pub env: [bool; 2],
}

impl ZeroRankFlags {
    pub fn any(&self) -> bool {
        self.friend.iter().chain(&self.env).any(|&f| f)
    }
}

/// Observer probabilities of one equilibrated lab, all for outcome 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WfReport {
    /// Friend's probability of her own outcome, `p₀`.
    pub p_f_i: f64,
    /// Wigner "asking the Friend": `Tr((I⊗Π_F⁰⊗I)ρ_L)`.
    pub p_w_i: f64,
    pub e0: f64,
    pub e1: f64,
    /// `Tr(Π_F¹ρ_F⁽⁰⁾)`.
    pub misid_10: f64,
    /// `Tr(Π_F⁰ρ_F⁽¹⁾)`.
    pub misid_01: f64,
    /// Agreement measurement under the Friend's SBS assignment.
    pub p_f_j: f64,
    /// Agreement measurement on the true lab state.
    pub p_w_j: f64,
    /// Agreement measurement when the environment is assigned `I/d_E`.
    pub p_b_j: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub zero_rank: ZeroRankFlags,
}

struct Measurements {
    pf: TwoElementPovm,
    pe: TwoElementPovm,
    rho_f: [DensityOperator; 2],
    rho_e: [DensityOperator; 2],
    norm_f: [DensityOperator; 2],
    norm_e: [DensityOperator; 2],
    flags: ZeroRankFlags,
}

fn measurements(state: &LabState) -> Result<Measurements> {
    let rho_f = [state.friend(0).to_state(), state.friend(1).to_state()];
    let rho_e = [state.env(0).to_state(), state.env(1).to_state()];
    let pf = helstrom(&rho_f[0], &rho_f[1], state.p[0])?;
    let pe = helstrom(&rho_e[0], &rho_e[1], state.p[0])?;
    let (nf0, zf0) = pf.normalized(0);
    let (nf1, zf1) = pf.normalized(1);
    let (ne0, ze0) = pe.normalized(0);
    let (ne1, ze1) = pe.normalized(1);
    Ok(Measurements {
        pf,
        pe,
        rho_f,
        rho_e,
        norm_f: [nf0, nf1],
        norm_e: [ne0, ne1],
        flags: ZeroRankFlags {
            friend: [zf0, zf1],
            env: [ze0, ze1],
        },
    })
}

fn check_layout(state: &LabState, config: &WfConfig) -> Result<()> {
    if state.layout != config.layout {
        return Err(Error::InvalidConfig("state and config layouts differ".into()));
    }
    Ok(())
}

/// Observer probabilities from per-macrofraction traces. Lab-wide
/// expectations use the product structure when the state is factored and the
/// joint sector states otherwise.
pub fn wf_probabilities(state: &LabState, config: &WfConfig) -> Result<WfReport> {
    check_layout(state, config)?;
    let m = measurements(state)?;
    let p = state.p;
    // t[b][i] = Tr(Π^b ρ^(i)), s[b][a] = Tr(Π^b Π̂^a)
    let t = |povm: &TwoElementPovm, rho: &[DensityOperator; 2]| {
        [0, 1].map(|b| [0, 1].map(|i| povm.probability(b, rho[i].matrix())))
    };
    let tf = t(&m.pf, &m.rho_f);
    let te = t(&m.pe, &m.rho_e);
    let sf = t(&m.pf, &m.norm_f);
    let se = t(&m.pe, &m.norm_e);

    let p_w_i = p[0] * tf[0][0] + p[1] * tf[0][1];
    let p_w_j = match state.representation() {
        Representation::Factored => (0..2)
            .map(|i| p[i] * (tf[0][i] * te[0][i] + tf[1][i] * te[1][i]))
            .sum(),
        Representation::Dense => {
            let agree = tensor(&[m.pf.element(0), m.pe.element(0)])? + tensor(&[m.pf.element(1), m.pe.element(1)])?;
            (0..2)
                .map(|i| p[i] * trace_product(&agree, state.conditionals.sector_state(i).matrix()))
                .sum()
        }
    };
    let d_e = state.layout.env_dim() as f64;
    let p_f_j = (0..2).map(|i| p[i] * (sf[0][i] * se[0][i] + sf[1][i] * se[1][i])).sum();
    let p_b_j = (0..2)
        .map(|i| p[i] * (sf[0][i] * m.pe.element(0).trace().re + sf[1][i] * m.pe.element(1).trace().re) / d_e)
        .sum();
    let p_f_i = config.p0;
    Ok(WfReport {
        p_f_i,
        p_w_i,
        e0: tf[0][0],
        e1: tf[1][1],
        misid_10: tf[1][0],
        misid_01: tf[0][1],
        p_f_j,
        p_w_j,
        p_b_j,
        epsilon: (p_w_i - p_f_i).abs(),
        delta: (p_w_j - p_f_j).abs(),
        zero_rank: m.flags,
    })
}

/// Same quantities evaluated literally as `Tr(M ρ)` on the full lab space
/// with `ρ_L`, `ρ_L^F` and `ρ_L^B` built densely.
pub fn wf_probabilities_dense(state: &LabState, config: &WfConfig) -> Result<WfReport> {
    check_layout(state, config)?;
    let m = measurements(state)?;
    let layout = &state.layout;
    let p = state.p;
    let rho_l = state.dense_lab()?;
    let assign = |friend: &[DensityOperator; 2], env: [&CMatrix; 2]| -> Result<CMatrix> {
        let mut out = CMatrix::zeros(layout.total_dim(), layout.total_dim());
        for i in 0..2 {
            out += tensor(&[&basis_projector(2, i), friend[i].matrix(), env[i]])?.scale(p[i]);
        }
        Ok(out)
    };
    let rho_lf = assign(&m.norm_f, [m.norm_e[0].matrix(), m.norm_e[1].matrix()])?;
    let mixed = identity(layout.env_dim()).unscale(layout.env_dim() as f64);
    let rho_lb = assign(&m.norm_f, [&mixed, &mixed])?;

    let ask_friend = tensor(&[&identity(2), m.pf.element(0), &identity(layout.env_dim())])?;
    let system0 = tensor(&[&basis_projector(2, 0), &identity(layout.register_dim())])?;
    let agree = agreement_povm(&m.pf, &m.pe, layout)?;

    let p_w_i = trace_product(&ask_friend, rho_l.matrix());
    let p_f_i = trace_product(&system0, &rho_lf);
    let p_w_j = agree.probability(0, rho_l.matrix());
    let p_f_j = agree.probability(0, &rho_lf);
    let p_b_j = agree.probability(0, &rho_lb);
    Ok(WfReport {
        p_f_i,
        p_w_i,
        e0: m.pf.probability(0, m.rho_f[0].matrix()),
        e1: m.pf.probability(1, m.rho_f[1].matrix()),
        misid_10: m.pf.probability(1, m.rho_f[0].matrix()),
        misid_01: m.pf.probability(0, m.rho_f[1].matrix()),
        p_f_j,
        p_w_j,
        p_b_j,
        epsilon: (p_w_i - p_f_i).abs(),
        delta: (p_w_j - p_f_j).abs(),
        zero_rank: m.flags,
    })
}
