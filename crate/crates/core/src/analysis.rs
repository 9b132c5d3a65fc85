//! Closed-loop formation-error matrix `I_N (x) A - (L + P) (x) B k^T` and its
//! per-eigenvalue block decomposition.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::control::GainVector;
use crate::dynamics::{linear_model, VehicleParams};
use crate::linalg::{self, LinalgError};
use crate::topology::{coupling_spectrum, Topology, TopologyError};

/// Default cap on the number of closed-loop states.
pub const DEFAULT_MAX_STATES: usize = 400;

/// Pairing tolerance for triangular and symmetric coupling matrices.
pub const STRUCTURED_PAIRING_TOL: f64 = 1e-8;
/// Pairing tolerance for general coupling matrices.
pub const GENERAL_PAIRING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("closed loop would have {states} states, above the cap of {cap}")]
    TooLarge { states: usize, cap: usize },
    #[error("powertrain time constant must be positive, got {0}")]
    InvalidTau(f64),
    #[error("model order must be 3 or 4, got {0}")]
    InvalidOrder(usize),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    /// 4 with the integral state, 3 without it.
    pub order: usize,
    pub full_matrix: DMatrix<f64>,
    /// Coupling eigenvalues, in the order of `blocks`.
    pub coupling_eigenvalues: Vec<Complex64>,
    /// `A - lambda_i B k^T`, one per coupling eigenvalue.
    pub blocks: Vec<DMatrix<Complex64>>,
    pub eigenvalues_full: Vec<Complex64>,
    pub spectral_abscissa: f64,
    /// Coupling matrix is lower triangular or symmetric.
    pub structured: bool,
}

impl ClosedLoopSystem {
    pub fn n_followers(&self) -> usize {
        self.blocks.len()
    }

    /// Eigenvalues of every block, tagged with the block index.
    pub fn block_eigenvalues(&self) -> Result<Vec<(usize, Complex64)>, AnalysisError> {
        let mut out = Vec::with_capacity(self.order * self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            for ev in block_spectrum(b, self.coupling_eigenvalues[k])? {
                out.push((k, ev));
            }
        }
        Ok(out)
    }

    /// Default pairing tolerance for this coupling structure.
    pub fn pairing_tol(&self) -> f64 {
        if self.structured {
            STRUCTURED_PAIRING_TOL
        } else {
            GENERAL_PAIRING_TOL
        }
    }
}

// Real eigenvalues give real blocks; those go through the real solver so the
// block and full spectra come out of the same algorithm.
fn block_spectrum(b: &DMatrix<Complex64>, lambda: Complex64) -> Result<Vec<Complex64>, LinalgError> {
    if lambda.im == 0.0 {
        linalg::eigenvalues(&b.map(|c| c.re))
    } else {
        linalg::complex_eigenvalues(b)
    }
}

/// Fourth-order closed loop with the default size cap.
pub fn build_closed_loop(topo: &Topology, gains: &GainVector, tau: f64) -> Result<ClosedLoopSystem, AnalysisError> {
    build_closed_loop_with(topo, gains, tau, 4, DEFAULT_MAX_STATES)
}

/// Closed loop without the integral state. Use this for `kappa_s = 0`, where
/// the fourth-order loop has an uncontrolled integrator at the origin.
pub fn build_closed_loop_reduced(
    topo: &Topology,
    gains: &GainVector,
    tau: f64,
) -> Result<ClosedLoopSystem, AnalysisError> {
    build_closed_loop_with(topo, gains, tau, 3, DEFAULT_MAX_STATES)
}

pub fn build_closed_loop_with(
    topo: &Topology,
    gains: &GainVector,
    tau: f64,
    order: usize,
    max_states: usize,
) -> Result<ClosedLoopSystem, AnalysisError> {
    if order != 3 && order != 4 {
        return Err(AnalysisError::InvalidOrder(order));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(AnalysisError::InvalidTau(tau));
    }
    let n = topo.n_followers();
    let states = n * order;
    if states > max_states {
        return Err(AnalysisError::TooLarge { states, cap: max_states });
    }
    let params = VehicleParams {
        powertrain_tau: tau,
        ..VehicleParams::default()
    };
    let model = linear_model(order, &params).map_err(|_| AnalysisError::InvalidTau(tau))?;
    let k: Vec<f64> = if order == 4 {
        gains.as_array().to_vec()
    } else {
        gains.as_array()[1..].to_vec()
    };
    let kt = DMatrix::from_row_slice(1, order, &k);
    let bk = &model.b * kt;

    let spec = coupling_spectrum(topo)?;
    let m = &spec.matrix;
    let mut full = DMatrix::<f64>::zeros(states, states);
    for i in 0..n {
        for j in 0..n {
            let mij = m[(i, j)];
            for r in 0..order {
                for c in 0..order {
                    let diag = if i == j { model.a[(r, c)] } else { 0.0 };
                    full[(i * order + r, j * order + c)] = diag - mij * bk[(r, c)];
                }
            }
        }
    }

    let a_c = model.a.map(|v| Complex64::new(v, 0.0));
    let bk_c = bk.map(|v| Complex64::new(v, 0.0));
    let blocks: Vec<DMatrix<Complex64>> = spec
        .eigenvalues
        .iter()
        .map(|l| &a_c - bk_c.map(|v| v * *l))
        .collect();

    let eigenvalues_full = linalg::eigenvalues(&full)?;
    let spectral_abscissa = linalg::spectral_abscissa(&eigenvalues_full);
    Ok(ClosedLoopSystem {
        order,
        full_matrix: full,
        coupling_eigenvalues: spec.eigenvalues.clone(),
        blocks,
        eigenvalues_full,
        spectral_abscissa,
        structured: spec.is_triangular || spec.is_symmetric,
    })
}

/// Spectral abscissa strictly below `-tol`.
pub fn is_hurwitz(system: &ClosedLoopSystem, tol: f64) -> bool {
    system.spectral_abscissa < -tol
}

/// Optimal one-to-one pairing distance between the full spectrum and the
/// union of block spectra.
pub fn block_spectrum_distance(system: &ClosedLoopSystem) -> Result<f64, AnalysisError> {
    let union: Vec<Complex64> = system.block_eigenvalues()?.into_iter().map(|(_, e)| e).collect();
    Ok(linalg::bottleneck_distance(&system.eigenvalues_full, &union))
}

/// `true` iff the full spectrum and the union of block spectra pair up with
/// every distance below `tol`.
pub fn block_spectrum_union_check(system: &ClosedLoopSystem, tol: f64) -> bool {
    match block_spectrum_distance(system) {
        Ok(d) => d < tol,
        Err(e) => {
            log::warn!("block spectrum unavailable: {e}");
            false
        }
    }
}

/// `block,re,im` rows for every block eigenvalue.
pub fn spectrum_csv(system: &ClosedLoopSystem) -> Result<String, AnalysisError> {
    let mut out = String::from("block,re,im\n");
    for (k, ev) in system.block_eigenvalues()? {
        let _ = writeln!(out, "{},{:.16e},{:.16e}", k + 1, ev.re, ev.im);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{certify_gains, reference_gains, GainColumn};
    use crate::topology::{build_named, TopologyKind};

    fn named(kind: TopologyKind, n: usize) -> Topology {
        build_named(kind, n, kind.reference_range().min(n)).unwrap()
    }

    #[test]
    fn single_pinned_follower_is_one_block() {
        let t = build_named(TopologyKind::Pf, 1, 1).unwrap();
        let g = GainVector::new(0.15, 1.0, 3.45, 1.0);
        let sys = build_closed_loop(&t, &g, 0.15).unwrap();
        let model = linear_model(4, &VehicleParams::default()).unwrap();
        let expected = &model.a - &model.b * DMatrix::from_row_slice(1, 4, &g.as_array());
        assert_eq!(sys.full_matrix, expected);
        assert!(block_spectrum_union_check(&sys, 1e-12));
    }

    #[test]
    fn pf_reference_gains_are_hurwitz() {
        let g = reference_gains(TopologyKind::Pf, GainColumn::WithIntegral).unwrap();
        for n in [3, 9] {
            let sys = build_closed_loop(&named(TopologyKind::Pf, n), &g, 0.15).unwrap();
            assert!(sys.spectral_abscissa < 0.0);
            assert!(is_hurwitz(&sys, 1e-7));
        }
    }

    #[test]
    fn zero_gains_give_open_loop_chain() {
        let sys = build_closed_loop(&named(TopologyKind::Bd, 4), &GainVector::default(), 0.15).unwrap();
        let mut zeros = 0;
        let mut lag = 0;
        for e in &sys.eigenvalues_full {
            if e.norm() < 1e-12 {
                zeros += 1;
            } else if (e.re + 1.0 / 0.15).abs() < 1e-9 && e.im.abs() < 1e-12 {
                lag += 1;
            }
        }
        assert_eq!((zeros, lag), (12, 4));
        assert!(!is_hurwitz(&sys, 1e-9));
    }

    #[test]
    fn negative_integral_gain_is_not_hurwitz() {
        let g = GainVector::new(-0.01, 1.0, 3.45, 1.0);
        let sys = build_closed_loop(&named(TopologyKind::Pf, 9), &g, 0.15).unwrap();
        assert!(!is_hurwitz(&sys, 1e-9));
        // Oracle: constant term of each block polynomial is negative, so one
        // real root is positive.
        assert!(sys.spectral_abscissa > 0.0);
    }

    #[test]
    fn union_identity_examples() {
        let pfl = reference_gains(TopologyKind::Pfl, GainColumn::WithIntegral).unwrap();
        let sys = build_closed_loop(&named(TopologyKind::Pfl, 5), &pfl, 0.15).unwrap();
        assert!(block_spectrum_union_check(&sys, 1e-8));

        let bd = reference_gains(TopologyKind::Bd, GainColumn::WithIntegral).unwrap();
        let sys = build_closed_loop(&named(TopologyKind::Bd, 9), &bd, 0.15).unwrap();
        assert!(block_spectrum_union_check(&sys, 1e-7));
    }

    #[test]
    fn size_cap_is_enforced() {
        let t = named(TopologyKind::Pf, 101);
        assert!(matches!(
            build_closed_loop(&t, &GainVector::default(), 0.15),
            Err(AnalysisError::TooLarge { states: 404, cap: 400 })
        ));
        assert!(build_closed_loop_with(&t, &GainVector::default(), 0.15, 4, 404).is_ok());
    }

    #[test]
    fn reduced_loop_matches_no_integral_conditions() {
        for kind in TopologyKind::NAMED {
            let t = named(kind, 9);
            let g = reference_gains(kind, GainColumn::WithoutIntegral).unwrap();
            let sys = build_closed_loop_reduced(&t, &g, 0.15).unwrap();
            let cert = certify_gains(&g, &coupling_spectrum(&t).unwrap(), 0.15).unwrap();
            assert_eq!(cert.holds, is_hurwitz(&sys, 1e-7), "{kind}");
            assert!(block_spectrum_union_check(&sys, 1e-7), "{kind}");
        }
    }

    #[test]
    fn general_digraph_blocks_are_complex() {
        let t = Topology::new(
            TopologyKind::Custom,
            1,
            vec![vec![0, 1, 0], vec![0, 0, 1], vec![1, 0, 0]],
            vec![1, 0, 0],
        )
        .unwrap();
        let g = GainVector::new(0.05, 1.0, 3.0, 1.0);
        let sys = build_closed_loop(&t, &g, 0.15).unwrap();
        assert!(sys.coupling_eigenvalues.iter().any(|e| e.im.abs() > 1e-3));
        assert!(!sys.structured);
        assert!(block_spectrum_union_check(&sys, sys.pairing_tol()));
    }

    #[test]
    fn spectrum_csv_shape() {
        let g = reference_gains(TopologyKind::Pf, GainColumn::WithIntegral).unwrap();
        let sys = build_closed_loop(&named(TopologyKind::Pf, 2), &g, 0.15).unwrap();
        let csv = spectrum_csv(&sys).unwrap();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "block,re,im");
        assert_eq!(lines.len(), 1 + 8);
        assert!(lines[1].starts_with("1,"));
        assert!(lines[8].starts_with("2,"));
    }
}
