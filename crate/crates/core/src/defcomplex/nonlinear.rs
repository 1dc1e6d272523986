//! The nonlinear maps whose derivatives are `L^Φ` and `L^Ψ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::jets::{quad_flow_jet, Jet3};
use crate::mobius::translation_chart_jet;
use crate::symtensor::{BasisMatrix, SymMultiMap};

/// Tolerance for the jet-level check `F̄ ∘ G = G^k ∘ F̄`.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// `(A ∘ P^{b_i} ∘ A^-1)_i` at jet level.
pub fn nonlinear_phi(a: &DMatrix<f64>, basis: &BasisMatrix) -> Result<Vec<Jet3>> {
    let h = Jet3::linear_map(a)?;
    (0..basis.dim())
        .map(|i| translation_chart_jet(&basis.vector(i)).conjugate(&h))
        .collect()
}

/// `1/2 D2` of [`nonlinear_phi`]: `(A Q_{v_i}(A^-1, A^-1))_i`.
pub fn theta_phi(a: &DMatrix<f64>, basis: &BasisMatrix) -> Result<Vec<SymMultiMap>> {
    nonlinear_phi(a, basis)?.iter().map(|g| g.theta()).collect()
}

/// `1/4 (D3(G_i ∘ G_j) - D3(G_j ∘ G_i))` over pairs `i < j`, after checking
/// that every `G_i` is tangent to the identity and satisfies
/// `F̄ ∘ G_i = G_i^k ∘ F̄` with `F̄ = k^-1 I`.
pub fn nonlinear_psi(g: &[Jet3], k: u32) -> Result<Vec<SymMultiMap>> {
    let n = g.first().map(|j| j.dim()).ok_or_else(|| Error::Contract("empty tuple".into()))?;
    let fbar = Jet3::scaling(n, 1.0 / k as f64)?;
    let id = DMatrix::identity(n, n);
    for (i, gi) in g.iter().enumerate() {
        if gi.linear_deviation(&id) > MEMBERSHIP_TOL {
            return Err(Error::Precondition(format!("component {} is not tangent to the identity", i + 1)));
        }
        let lhs = fbar.compose(gi)?;
        let rhs = gi.power(k as i64)?.compose(&fbar)?;
        let scale = gi.cubic().max_abs().max(gi.quadratic().max_abs()).max(1.0);
        if lhs.max_diff(&rhs) > MEMBERSHIP_TOL * scale {
            return Err(Error::Precondition(format!(
                "component {} violates the dilation relation by {:.3e}",
                i + 1,
                lhs.max_diff(&rhs)
            )));
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let d = g[i].compose(&g[j])?.cubic() - g[j].compose(&g[i])?.cubic();
            out.push(d.scaled(0.25));
        }
    }
    Ok(out)
}

/// `Ψ ∘ Θ^-1` through time-one quadratic flows.
pub fn psi_after_theta_inverse(q: &[SymMultiMap], k: u32) -> Result<Vec<SymMultiMap>> {
    let flows = q.iter().map(|qi| quad_flow_jet(qi, 1.0)).collect::<Result<Vec<_>>>()?;
    nonlinear_psi(&flows, k)
}
