//! Distributed PID-A control law with integral spacing action, Routh–Hurwitz
//! evaluation of the per-eigenvalue characteristic polynomials, and
//! closed-form gain certification.

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::dynamics::VehicleState;
use crate::topology::{CouplingSpectrum, Topology, TopologyKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("follower index {index} out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("missing state for vehicle {0}")]
    MissingState(usize),
    #[error("powertrain time constant must be positive, got {0}")]
    InvalidTau(f64),
    #[error("coupling eigenvalue must be positive, got {0}")]
    InvalidEigenvalue(f64),
    #[error("Routh array needs a monic polynomial of degree 3 or 4")]
    InvalidPolynomial,
    #[error("zero pivot in Routh array row {row}: marginal or indeterminate")]
    ZeroPivot { row: usize },
    #[error("theorem not applicable: coupling matrix is neither lower triangular nor symmetric")]
    NotApplicable,
    #[error("gain precondition violated: {0}")]
    Precondition(String),
    #[error("steady-state error undefined for kappa_s = 0 and kappa_p = 0")]
    UndefinedSteadyState,
}

/// Controller gains `[kappa_s, kappa_p, kappa_v, kappa_a]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GainVector {
    /// Integral gain, 1/s^3.
    pub kappa_s: f64,
    /// Position gain, 1/s^2.
    pub kappa_p: f64,
    /// Velocity gain, 1/s.
    pub kappa_v: f64,
    /// Acceleration gain.
    pub kappa_a: f64,
}

impl GainVector {
    pub const fn new(kappa_s: f64, kappa_p: f64, kappa_v: f64, kappa_a: f64) -> Self {
        GainVector {
            kappa_s,
            kappa_p,
            kappa_v,
            kappa_a,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.kappa_s, self.kappa_p, self.kappa_v, self.kappa_a]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|g| g.is_finite())
    }
}

/// Which column of the reference gain table to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainColumn {
    /// Integral action enabled (`kappa_s > 0`).
    WithIntegral,
    /// `kappa_s = 0`.
    WithoutIntegral,
}

/// Reference gains for the named topologies with nine followers and a
/// 0.15 s powertrain lag.
pub fn reference_gains(kind: TopologyKind, column: GainColumn) -> Option<GainVector> {
    // (kappa_s, kappa_p, kappa_v, kappa_a) | (kappa_p, kappa_v, kappa_a)
    let (integral, proportional) = match kind {
        TopologyKind::Pf => ([0.150, 1.0, 3.450, 1.000], [1.0, 2.150, 1.000]),
        TopologyKind::Pfl => ([0.075, 1.0, 3.225, 1.500], [1.0, 2.075, 1.500]),
        TopologyKind::Tpf => ([0.075, 1.0, 3.225, 1.500], [1.0, 2.075, 1.500]),
        TopologyKind::Tpfl => ([0.050, 1.0, 3.150, 1.667], [1.0, 2.050, 1.667]),
        TopologyKind::RPf => ([0.030, 1.0, 3.090, 1.800], [1.0, 2.030, 1.800]),
        TopologyKind::RPfl => ([0.025, 1.0, 3.075, 1.833], [1.0, 2.025, 1.833]),
        TopologyKind::Bd => ([0.010, 1.0, 5.086, 1.743], [1.0, 2.286, 1.743]),
        TopologyKind::Bdl => ([0.010, 1.0, 1.052, 1.795], [1.0, 2.107, 1.795]),
        TopologyKind::RBd => ([0.010, 1.0, 1.423, 1.890], [1.0, 2.175, 1.890]),
        TopologyKind::RBdl => ([0.010, 1.0, 1.103, 1.900], [1.0, 2.103, 1.900]),
        TopologyKind::Custom => return None,
    };
    Some(match column {
        GainColumn::WithIntegral => GainVector::new(integral[0], integral[1], integral[2], integral[3]),
        GainColumn::WithoutIntegral => GainVector::new(0.0, proportional[0], proportional[1], proportional[2]),
    })
}

/// Constant-distance spacing policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacingPolicy {
    /// Desired bumper-to-bumper gap between consecutive vehicles, m.
    pub gap: f64,
    pub vehicle_length: f64,
}

impl Default for SpacingPolicy {
    fn default() -> Self {
        SpacingPolicy {
            gap: 10.0,
            vehicle_length: 0.0,
        }
    }
}

impl SpacingPolicy {
    /// Desired `p_j - p_i` between front-bumper positions of vehicles `i`
    /// and `j` (index 0 is the leader). Positive when `j` is ahead.
    pub fn desired_offset(&self, i: usize, j: usize) -> f64 {
        (i as f64 - j as f64) * (self.gap + self.vehicle_length)
    }

    /// Front-to-rear-bumper distance from the leader to follower `i`.
    pub fn leader_distance(&self, i: usize) -> f64 {
        i as f64 * (self.gap + self.vehicle_length) - self.vehicle_length
    }
}

fn check_follower(i: usize, states: &[VehicleState], topo: &Topology) -> Result<(), ControlError> {
    let n = topo.n_followers();
    if i == 0 || i > n {
        return Err(ControlError::IndexOutOfRange { index: i, n });
    }
    if states.len() <= n {
        return Err(ControlError::MissingState(states.len()));
    }
    Ok(())
}

/// `sum_{j in I_i} (p_i - p_j + d_ij)`: the integrand of follower `i`'s
/// integral state.
pub fn spacing_error_sum(
    i: usize,
    states: &[VehicleState],
    topo: &Topology,
    policy: &SpacingPolicy,
) -> Result<f64, ControlError> {
    check_follower(i, states, topo)?;
    let me = &states[i];
    Ok(topo
        .neighbors(i)
        .into_iter()
        .map(|j| me.position - states[j].position + policy.desired_offset(i, j))
        .sum())
}

/// Acceleration command of follower `i` (1-based).
///
/// `states[0]` is the leader. The integral term uses
/// `states[i].error_integral`, which the caller accumulates from
/// [`spacing_error_sum`].
pub fn control_input(
    i: usize,
    states: &[VehicleState],
    topo: &Topology,
    gains: &GainVector,
    policy: &SpacingPolicy,
) -> Result<f64, ControlError> {
    check_follower(i, states, topo)?;
    let me = &states[i];
    let mut acc = gains.kappa_s * me.error_integral;
    for j in topo.neighbors(i) {
        let other = &states[j];
        acc += gains.kappa_p * (me.position - other.position + policy.desired_offset(i, j))
            + gains.kappa_v * (me.velocity - other.velocity)
            + gains.kappa_a * (me.acceleration - other.acceleration);
    }
    Ok(-acc)
}

/// Coefficients `[1, c3, c2, c1, c0]` of
/// `det(sI - A + lambda B k^T)` for the fourth-order model.
pub fn block_char_poly(lambda: f64, gains: &GainVector, tau: f64) -> Result<[f64; 5], ControlError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(ControlError::InvalidTau(tau));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(ControlError::InvalidEigenvalue(lambda));
    }
    Ok([
        1.0,
        (1.0 + lambda * gains.kappa_a) / tau,
        lambda * gains.kappa_v / tau,
        lambda * gains.kappa_p / tau,
        lambda * gains.kappa_s / tau,
    ])
}

/// First column of the Routh array for a monic cubic or quartic.
///
/// For the quartic `[1, c3, c2, c1, c0]` this is
/// `[1, c3, (c3 c2 - c1)/c3, c1 - c0 c3/alpha, c0]`. A zero in a position
/// that is later divided by is reported as [`ControlError::ZeroPivot`].
pub fn routh_first_column(coeffs: &[f64]) -> Result<Vec<f64>, ControlError> {
    if !(coeffs.len() == 4 || coeffs.len() == 5) || coeffs[0] != 1.0 {
        return Err(ControlError::InvalidPolynomial);
    }
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(ControlError::InvalidPolynomial);
    }
    let degree = coeffs.len() - 1;
    let width = degree / 2 + 1;
    let row_from = |start: usize| -> Vec<f64> {
        (0..width)
            .map(|k| coeffs.get(start + 2 * k).copied().unwrap_or(0.0))
            .collect()
    };
    let mut rows = vec![row_from(0), row_from(1)];
    for r in 2..=degree {
        let prev = &rows[r - 1];
        let prev2 = &rows[r - 2];
        let pivot = prev[0];
        if pivot == 0.0 {
            return Err(ControlError::ZeroPivot { row: r - 1 });
        }
        let next: Vec<f64> = (0..width)
            .map(|k| {
                let a = prev2.get(k + 1).copied().unwrap_or(0.0);
                let b = prev.get(k + 1).copied().unwrap_or(0.0);
                (pivot * a - prev2[0] * b) / pivot
            })
            .collect();
        rows.push(next);
    }
    Ok(rows.iter().map(|r| r[0]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouthVerdict {
    Stable,
    Unstable,
    /// Zero pivot or zero entry: roots on the imaginary axis or an
    /// indeterminate array. Never reported as stable.
    Marginal,
}

pub fn routh_verdict(coeffs: &[f64]) -> Result<RouthVerdict, ControlError> {
    match routh_first_column(coeffs) {
        Ok(col) => {
            if col.iter().any(|c| *c == 0.0) {
                Ok(RouthVerdict::Marginal)
            } else if col.iter().all(|c| *c > 0.0) {
                Ok(RouthVerdict::Stable)
            } else {
                Ok(RouthVerdict::Unstable)
            }
        }
        Err(ControlError::ZeroPivot { .. }) => Ok(RouthVerdict::Marginal),
        Err(e) => Err(e),
    }
}

/// Topology families covered by the closed-form conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityFamily {
    /// Directed look-ahead graphs: `L + P` lower triangular.
    LookAhead,
    /// Undirected graphs: `L + P` symmetric.
    Undirected,
}

impl StabilityFamily {
    pub fn label(self) -> &'static str {
        match self {
            StabilityFamily::LookAhead => "rPFL",
            StabilityFamily::Undirected => "rBDL",
        }
    }

    pub fn of(spec: &CouplingSpectrum) -> Result<Self, ControlError> {
        if spec.is_triangular {
            Ok(StabilityFamily::LookAhead)
        } else if spec.is_symmetric {
            Ok(StabilityFamily::Undirected)
        } else {
            Err(ControlError::NotApplicable)
        }
    }
}

/// One inequality of the stability conditions and how much slack it has.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: &'static str,
    /// Positive iff the inequality holds.
    pub margin: f64,
    /// Coupling eigenvalue at which the margin is smallest, when the
    /// inequality depends on one.
    pub eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub family: StabilityFamily,
    /// `true` iff every entry of `binding_constraints` has a positive margin.
    pub holds: bool,
    /// Per-eigenvalue conditions, minimized over the spectrum. These are
    /// necessary and sufficient for every block to be Hurwitz.
    pub binding_constraints: Vec<Constraint>,
    pub eigen_range: (f64, f64),
    /// `kappa_s = 0`: the reduced third-order conditions were applied.
    pub integral_free: bool,
    /// The same conditions written with only the extremal eigenvalues. This
    /// form is sufficient but can be conservative.
    pub extremal_constraints: Vec<Constraint>,
    pub extremal_holds: bool,
}

impl StabilityCertificate {
    /// Constraints with non-positive margin.
    pub fn violations(&self) -> impl Iterator<Item = &Constraint> {
        self.binding_constraints.iter().filter(|c| !(c.margin > 0.0))
    }

    /// Smallest margin over the binding constraints.
    pub fn min_margin(&self) -> f64 {
        self.binding_constraints
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }

    /// The per-eigenvalue verdict and the extremal-eigenvalue form disagree.
    pub fn forms_disagree(&self) -> bool {
        self.holds != self.extremal_holds
    }

    /// Machine-readable `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "family={}", self.family.label());
        let _ = writeln!(
            out,
            "conditions={}",
            if self.integral_free { "no-integral" } else { "integral" }
        );
        let _ = writeln!(out, "eig_min={:.17e}", self.eigen_range.0);
        let _ = writeln!(out, "eig_max={:.17e}", self.eigen_range.1);
        for (k, c) in self.binding_constraints.iter().enumerate() {
            let _ = writeln!(out, "constraint.{k}.name={}", c.name);
            let _ = writeln!(out, "constraint.{k}.margin={:.17e}", c.margin);
            if let Some(ev) = c.eigenvalue {
                let _ = writeln!(out, "constraint.{k}.eigenvalue={ev:.17e}");
            }
        }
        for (k, c) in self.extremal_constraints.iter().enumerate() {
            let _ = writeln!(out, "extremal.{k}.name={}", c.name);
            let _ = writeln!(out, "extremal.{k}.margin={:.17e}", c.margin);
        }
        let _ = writeln!(out, "extremal_holds={}", self.extremal_holds);
        let _ = writeln!(out, "verdict={}", if self.holds { "stable" } else { "unstable" });
        out
    }
}

impl fmt::Display for StabilityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "family {} ({} coupling, {} conditions), eigenvalues in [{:.6}, {:.6}]",
            self.family.label(),
            match self.family {
                StabilityFamily::LookAhead => "lower-triangular",
                StabilityFamily::Undirected => "symmetric",
            },
            if self.integral_free { "kappa_s = 0" } else { "integral" },
            self.eigen_range.0,
            self.eigen_range.1
        )?;
        for c in &self.binding_constraints {
            let mark = if c.margin > 0.0 { "ok  " } else { "FAIL" };
            write!(f, "  {mark} {:<60} margin {:+.6e}", c.name, c.margin)?;
            if let Some(ev) = c.eigenvalue {
                write!(f, " at lambda = {ev:.6}")?;
            }
            writeln!(f)?;
        }
        if self.forms_disagree() {
            writeln!(
                f,
                "  note: extremal-eigenvalue form gives {}",
                if self.extremal_holds { "stable" } else { "not certified" }
            )?;
        }
        write!(f, "verdict: {}", if self.holds { "stable" } else { "unstable" })
    }
}

const NAME_KS: &str = "kappa_s > 0";
const NAME_KA: &str = "kappa_a > -1/lambda_max";
const NAME_KP: &str = "kappa_p > 0";
const NAME_KP_UPPER: &str = "kappa_p < kappa_v (1 + lambda kappa_a) / tau";
const NAME_KV_BETA: &str =
    "kappa_v > (kappa_s (1 + lambda kappa_a)^2 + tau lambda kappa_p^2) / (lambda (1 + lambda kappa_a) kappa_p)";
const NAME_KV_COR: &str = "kappa_v > tau kappa_p / (1 + lambda kappa_a)";
const NAME_EIG: &str = "lambda_min > 0";

fn finite_or_neg_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::NEG_INFINITY
    } else {
        x
    }
}

// Lower bound on kappa_v from the s^1 Routh entry at one eigenvalue.
fn kv_bound_beta(lambda: f64, g: &GainVector, tau: f64) -> f64 {
    let one_plus = 1.0 + lambda * g.kappa_a;
    (g.kappa_s * one_plus * one_plus + tau * lambda * g.kappa_p * g.kappa_p) / (lambda * one_plus * g.kappa_p)
}

fn kv_bound_cor(lambda: f64, g: &GainVector, tau: f64) -> f64 {
    tau * g.kappa_p / (1.0 + lambda * g.kappa_a)
}

fn min_over<F: Fn(f64) -> f64>(eigs: &[f64], name: &'static str, f: F) -> Constraint {
    let mut best = Constraint {
        name,
        margin: f64::INFINITY,
        eigenvalue: None,
    };
    for &l in eigs {
        let m = finite_or_neg_inf(f(l));
        if best.eigenvalue.is_none() || m < best.margin {
            best.margin = m;
            best.eigenvalue = Some(l);
        }
    }
    best
}

fn distinct_real_eigenvalues(spec: &CouplingSpectrum) -> Vec<f64> {
    let mut eigs: Vec<f64> = spec.eigenvalues.iter().map(|e| e.re).collect();
    eigs.sort_by(f64::total_cmp);
    eigs.dedup();
    eigs
}

/// Certify asymptotic stability of the formation error dynamics.
///
/// Evaluates `kappa_s > 0`, `kappa_a > -1/lambda`, `0 < kappa_p <
/// kappa_v (1 + lambda kappa_a)/tau` and the `kappa_v` lower bound at every
/// coupling eigenvalue (the reduced cubic conditions when `kappa_s = 0`).
/// The extremal-eigenvalue version of the same inequalities is reported
/// alongside.
pub fn certify_gains(
    gains: &GainVector,
    spec: &CouplingSpectrum,
    tau: f64,
) -> Result<StabilityCertificate, ControlError> {
    let family = StabilityFamily::of(spec)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(ControlError::InvalidTau(tau));
    }
    if !gains.is_finite() {
        return Err(ControlError::Precondition("gains must be finite".into()));
    }
    let eigs = distinct_real_eigenvalues(spec);
    let (lo, hi) = (spec.min_eig, spec.max_eig);
    let g = *gains;
    let integral_free = g.kappa_s == 0.0;

    let mut binding = vec![Constraint {
        name: NAME_EIG,
        margin: lo,
        eigenvalue: Some(lo),
    }];
    let mut extremal = Vec::new();
    if integral_free {
        binding.push(Constraint {
            name: NAME_KP,
            margin: g.kappa_p,
            eigenvalue: None,
        });
        binding.push(min_over(&eigs, NAME_KV_COR, |l| g.kappa_v - kv_bound_cor(l, &g, tau)));
        binding.push(min_over(&eigs, NAME_KA, |l| g.kappa_a + 1.0 / l));

        extremal.push(Constraint {
            name: NAME_KP,
            margin: g.kappa_p,
            eigenvalue: None,
        });
        extremal.push(Constraint {
            name: NAME_KV_COR,
            margin: finite_or_neg_inf(g.kappa_v - kv_bound_cor(lo, &g, tau)),
            eigenvalue: Some(lo),
        });
        extremal.push(Constraint {
            name: NAME_KA,
            margin: g.kappa_a + 1.0 / hi,
            eigenvalue: Some(hi),
        });
    } else {
        binding.push(Constraint {
            name: NAME_KS,
            margin: g.kappa_s,
            eigenvalue: None,
        });
        binding.push(min_over(&eigs, NAME_KA, |l| g.kappa_a + 1.0 / l));
        binding.push(Constraint {
            name: NAME_KP,
            margin: g.kappa_p,
            eigenvalue: None,
        });
        binding.push(min_over(&eigs, NAME_KP_UPPER, |l| {
            g.kappa_v * (1.0 + l * g.kappa_a) / tau - g.kappa_p
        }));
        binding.push(min_over(&eigs, NAME_KV_BETA, |l| g.kappa_v - kv_bound_beta(l, &g, tau)));

        let one_hi = 1.0 + hi * g.kappa_a;
        let one_lo = 1.0 + lo * g.kappa_a;
        extremal.push(Constraint {
            name: NAME_KS,
            margin: g.kappa_s,
            eigenvalue: None,
        });
        extremal.push(Constraint {
            name: NAME_KP,
            margin: g.kappa_p,
            eigenvalue: None,
        });
        extremal.push(Constraint {
            name: NAME_KP_UPPER,
            margin: finite_or_neg_inf(g.kappa_v * one_hi / tau - g.kappa_p),
            eigenvalue: Some(hi),
        });
        extremal.push(Constraint {
            name: NAME_KA,
            margin: g.kappa_a + 1.0 / hi,
            eigenvalue: Some(hi),
        });
        extremal.push(Constraint {
            name: NAME_KV_BETA,
            margin: finite_or_neg_inf(
                g.kappa_v
                    - (g.kappa_s * one_hi * one_hi + tau * hi * g.kappa_p * g.kappa_p)
                        / (lo * one_lo * g.kappa_p),
            ),
            eigenvalue: Some(lo),
        });
    }

    // Bounds derived under kappa_p > 0 and 1 + lambda kappa_a > 0 are
    // meaningless otherwise; the failing precondition already carries the
    // verdict, so the dependent margins are forced negative as well.
    if !(g.kappa_p > 0.0) || !(g.kappa_a + 1.0 / hi > 0.0) {
        for c in binding.iter_mut().chain(extremal.iter_mut()) {
            if c.name == NAME_KV_BETA || c.name == NAME_KV_COR {
                c.margin = c.margin.min(0.0).min(-f64::MIN_POSITIVE);
            }
        }
    }

    let holds = binding.iter().all(|c| c.margin > 0.0);
    let extremal_holds = lo > 0.0 && extremal.iter().all(|c| c.margin > 0.0);
    Ok(StabilityCertificate {
        family,
        holds,
        binding_constraints: binding,
        eigen_range: (lo, hi),
        integral_free,
        extremal_constraints: extremal,
        extremal_holds,
    })
}

/// Smallest admissible `kappa_v` times `margin`.
///
/// With `kappa_s > 0` this is the largest per-eigenvalue bound from the
/// `s^1` Routh entry; with `kappa_s = 0` the reduced cubic bound.
pub fn synthesize_kv(
    kappa_s: f64,
    kappa_p: f64,
    kappa_a: f64,
    spec: &CouplingSpectrum,
    tau: f64,
    margin: f64,
) -> Result<f64, ControlError> {
    StabilityFamily::of(spec)?;
    if !(tau.is_finite() && tau > 0.0) {
        return Err(ControlError::InvalidTau(tau));
    }
    if !(kappa_s >= 0.0) {
        return Err(ControlError::Precondition(format!("kappa_s = {kappa_s} must be >= 0")));
    }
    if !(kappa_p > 0.0) {
        return Err(ControlError::Precondition(format!("kappa_p = {kappa_p} must be > 0")));
    }
    if !(kappa_a > -1.0 / spec.max_eig) {
        return Err(ControlError::Precondition(format!(
            "kappa_a = {kappa_a} must exceed -1/lambda_max = {}",
            -1.0 / spec.max_eig
        )));
    }
    if !(margin >= 1.0) {
        return Err(ControlError::Precondition(format!("margin = {margin} must be >= 1")));
    }
    if !(spec.min_eig > 0.0) {
        return Err(ControlError::InvalidEigenvalue(spec.min_eig));
    }
    let g = GainVector::new(kappa_s, kappa_p, 0.0, kappa_a);
    let bound = distinct_real_eigenvalues(spec)
        .into_iter()
        .map(|l| {
            if kappa_s == 0.0 {
                kv_bound_cor(l, &g, tau)
            } else {
                kv_bound_beta(l, &g, tau)
            }
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(margin * bound)
}

/// Steady-state spacing error under a step input disturbance of size
/// `kappa_psi`: `-kappa_psi / kappa_p` without integral action, zero with it.
pub fn steady_state_error(kappa_psi: f64, gains: &GainVector) -> Result<f64, ControlError> {
    if kappa_psi == 0.0 || gains.kappa_s != 0.0 {
        return Ok(0.0);
    }
    if gains.kappa_p == 0.0 {
        return Err(ControlError::UndefinedSteadyState);
    }
    Ok(-kappa_psi / gains.kappa_p)
}
