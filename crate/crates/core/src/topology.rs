//! Platoon communication graphs.
//!
//! Followers are numbered `1..=N` in the domain; internally rows and columns
//! are zero-based, so row `i` is follower `i + 1`. `adjacency[i][j] == 1`
//! means follower `i + 1` receives the state of follower `j + 1`, and
//! `pinning[i] == 1` means it receives the leader's state.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::{self, LinalgError};

/// Upper bound on the follower count accepted from text input.
pub const MAX_FOLLOWERS: usize = 1024;

/// Tolerance for treating an imaginary part or a symmetry defect as zero.
pub const ZERO_IMAG_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown topology kind '{0}'")]
    UnknownKind(String),
    #[error("platoon must have at least one follower")]
    NoFollowers,
    #[error("communication range must be at least 1")]
    ZeroRange,
    #[error("range {range} exceeds follower count {n}")]
    RangeTooLarge { range: usize, n: usize },
    #[error("follower count {0} exceeds limit {MAX_FOLLOWERS}")]
    TooLarge(usize),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("leader does not reach every follower (no spanning tree rooted at the leader)")]
    NoSpanningTree,
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The named platoon topologies plus a catch-all for user-supplied graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TopologyKind {
    /// Predecessor following.
    Pf,
    /// Predecessor following plus leader.
    Pfl,
    /// Two-predecessor following.
    Tpf,
    /// Two-predecessor following plus leader.
    Tpfl,
    /// `r` nearest predecessors.
    RPf,
    /// `r` nearest predecessors plus leader.
    RPfl,
    /// Bidirectional.
    Bd,
    /// Bidirectional plus leader.
    Bdl,
    /// `r` nearest neighbours on each side.
    RBd,
    /// `r` nearest neighbours on each side plus leader.
    RBdl,
    Custom,
}

impl TopologyKind {
    pub const NAMED: [TopologyKind; 10] = [
        TopologyKind::Pf,
        TopologyKind::Pfl,
        TopologyKind::Tpf,
        TopologyKind::Tpfl,
        TopologyKind::RPf,
        TopologyKind::RPfl,
        TopologyKind::Bd,
        TopologyKind::Bdl,
        TopologyKind::RBd,
        TopologyKind::RBdl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TopologyKind::Pf => "PF",
            TopologyKind::Pfl => "PFL",
            TopologyKind::Tpf => "TPF",
            TopologyKind::Tpfl => "TPFL",
            TopologyKind::RPf => "rPF",
            TopologyKind::RPfl => "rPFL",
            TopologyKind::Bd => "BD",
            TopologyKind::Bdl => "BDL",
            TopologyKind::RBd => "rBD",
            TopologyKind::RBdl => "rBDL",
            TopologyKind::Custom => "custom",
        }
    }

    /// Kinds whose range parameter matters.
    pub fn is_generalized(self) -> bool {
        matches!(
            self,
            TopologyKind::RPf | TopologyKind::RPfl | TopologyKind::RBd | TopologyKind::RBdl
        )
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(
            self,
            TopologyKind::Bd | TopologyKind::Bdl | TopologyKind::RBd | TopologyKind::RBdl
        )
    }

    pub fn is_look_ahead(self) -> bool {
        matches!(
            self,
            TopologyKind::Pf
                | TopologyKind::Pfl
                | TopologyKind::Tpf
                | TopologyKind::Tpfl
                | TopologyKind::RPf
                | TopologyKind::RPfl
        )
    }

    /// Communication range used for the reference scenario (nine followers).
    pub fn reference_range(self) -> usize {
        match self {
            TopologyKind::RPf | TopologyKind::RPfl => 5,
            TopologyKind::RBd | TopologyKind::RBdl => 4,
            _ => 1,
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TopologyKind {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kind = match s {
            "PF" => TopologyKind::Pf,
            "PFL" => TopologyKind::Pfl,
            "TPF" => TopologyKind::Tpf,
            "TPFL" => TopologyKind::Tpfl,
            "rPF" => TopologyKind::RPf,
            "rPFL" => TopologyKind::RPfl,
            "BD" => TopologyKind::Bd,
            "BDL" => TopologyKind::Bdl,
            "rBD" => TopologyKind::RBd,
            "rBDL" => TopologyKind::RBdl,
            "custom" => TopologyKind::Custom,
            other => return Err(TopologyError::UnknownKind(other.to_string())),
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n_followers: usize,
    adjacency: Vec<Vec<u8>>,
    pinning: Vec<u8>,
    kind: TopologyKind,
    range: usize,
}

impl Topology {
    /// Build a topology from explicit matrices, checking the structural
    /// invariants (0/1 entries, zero diagonal, symmetry for bidirectional
    /// kinds).
    pub fn new(
        kind: TopologyKind,
        range: usize,
        adjacency: Vec<Vec<u8>>,
        pinning: Vec<u8>,
    ) -> Result<Self, TopologyError> {
        let n = pinning.len();
        if n == 0 {
            return Err(TopologyError::NoFollowers);
        }
        if n > MAX_FOLLOWERS {
            return Err(TopologyError::TooLarge(n));
        }
        if range == 0 {
            return Err(TopologyError::ZeroRange);
        }
        if adjacency.len() != n || adjacency.iter().any(|row| row.len() != n) {
            return Err(TopologyError::Invalid(format!(
                "adjacency must be {n}x{n} to match the pinning vector"
            )));
        }
        if pinning.iter().chain(adjacency.iter().flatten()).any(|v| *v > 1) {
            return Err(TopologyError::Invalid("entries must be 0 or 1".into()));
        }
        if (0..n).any(|i| adjacency[i][i] != 0) {
            return Err(TopologyError::Invalid("adjacency diagonal must be zero".into()));
        }
        if kind.is_bidirectional() {
            for i in 0..n {
                for j in 0..i {
                    if adjacency[i][j] != adjacency[j][i] {
                        return Err(TopologyError::Invalid(format!(
                            "{kind} adjacency must be symmetric (entry {},{})",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
        Ok(Topology {
            n_followers: n,
            adjacency,
            pinning,
            kind,
            range,
        })
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn range(&self) -> usize {
        self.range
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    pub fn pinning(&self) -> &[u8] {
        &self.pinning
    }

    /// Whether follower `i` (1-based) hears vehicle `j` (0 = leader).
    pub fn hears(&self, i: usize, j: usize) -> bool {
        if i == 0 || i > self.n_followers || j > self.n_followers {
            return false;
        }
        if j == 0 {
            self.pinning[i - 1] == 1
        } else {
            self.adjacency[i - 1][j - 1] == 1
        }
    }

    /// Neighbour set of follower `i` (1-based), leader included as `0`.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..=self.n_followers).filter(|&j| self.hears(i, j)).collect()
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        self.adjacency
            .iter()
            .map(|row| row.iter().map(|v| *v as usize).sum())
            .collect()
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_followers;
        let deg = self.in_degrees();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                deg[i] as f64
            } else {
                -(self.adjacency[i][j] as f64)
            }
        })
    }

    /// `M = L + P`.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let mut m = self.laplacian();
        for (i, p) in self.pinning.iter().enumerate() {
            m[(i, i)] += *p as f64;
        }
        m
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.n_followers).all(|i| ((i + 1)..self.n_followers).all(|j| self.adjacency[i][j] == 0))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n_followers).all(|i| (0..i).all(|j| self.adjacency[i][j] == self.adjacency[j][i]))
    }

    /// Serialize to the plain-text matrix format: `N r kind`, N adjacency
    /// rows, one pinning row.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.n_followers, self.range, self.kind);
        for row in &self.adjacency {
            out.push_str(&join_bits(row));
            out.push('\n');
        }
        out.push_str(&join_bits(&self.pinning));
        out.push('\n');
        out
    }

    /// Parse the plain-text matrix format produced by [`Topology::to_text`].
    ///
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (hline, header) = lines.next().ok_or(TopologyError::Parse {
            line: 1,
            msg: "missing header line".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(TopologyError::Parse {
                line: hline,
                msg: "header must be `N r kind`".into(),
            });
        }
        let n: usize = fields[0].parse().map_err(|_| TopologyError::Parse {
            line: hline,
            msg: format!("invalid follower count '{}'", fields[0]),
        })?;
        let range: usize = fields[1].parse().map_err(|_| TopologyError::Parse {
            line: hline,
            msg: format!("invalid range '{}'", fields[1]),
        })?;
        let kind: TopologyKind = fields[2].parse()?;
        if n == 0 {
            return Err(TopologyError::NoFollowers);
        }
        if n > MAX_FOLLOWERS {
            return Err(TopologyError::TooLarge(n));
        }

        let mut parse_row = |what: &str| -> Result<Vec<u8>, TopologyError> {
            let (lno, line) = lines.next().ok_or(TopologyError::Parse {
                line: 0,
                msg: format!("missing {what} row"),
            })?;
            let row = line
                .split_whitespace()
                .map(|tok| match tok {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(TopologyError::Parse {
                        line: lno,
                        msg: format!("entry '{other}' is not 0 or 1"),
                    }),
                })
                .collect::<Result<Vec<u8>, _>>()?;
            if row.len() != n {
                return Err(TopologyError::Parse {
                    line: lno,
                    msg: format!("expected {n} entries, found {}", row.len()),
                });
            }
            Ok(row)
        };

        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            adjacency.push(parse_row("adjacency")?);
        }
        let pinning = parse_row("pinning")?;
        if let Some((lno, _)) = lines.next() {
            return Err(TopologyError::Parse {
                line: lno,
                msg: "unexpected trailing content".into(),
            });
        }
        Topology::new(kind, range, adjacency, pinning)
    }
}

fn join_bits(bits: &[u8]) -> String {
    bits.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(" ")
}

/// Build one of the named topologies.
///
/// Windows are truncated at the platoon edges. Leader-augmented variants
/// (`PFL`, `TPFL`, `rPFL`, `BDL`, `rBDL`) pin every follower; `TPF` pins the
/// first two followers (the leader stands in for follower 1's missing
/// predecessor of follower 2); the remaining plain kinds pin follower 1 only.
pub fn build_named(kind: TopologyKind, n: usize, range: usize) -> Result<Topology, TopologyError> {
    if n == 0 {
        return Err(TopologyError::NoFollowers);
    }
    if n > MAX_FOLLOWERS {
        return Err(TopologyError::TooLarge(n));
    }
    if range == 0 {
        return Err(TopologyError::ZeroRange);
    }
    if kind.is_generalized() && range > n {
        return Err(TopologyError::RangeTooLarge { range, n });
    }

    let (back, forward) = match kind {
        TopologyKind::Pf | TopologyKind::Pfl => (1, 0),
        TopologyKind::Tpf | TopologyKind::Tpfl => (2, 0),
        TopologyKind::RPf | TopologyKind::RPfl => (range, 0),
        TopologyKind::Bd | TopologyKind::Bdl => (1, 1),
        TopologyKind::RBd | TopologyKind::RBdl => (range, range),
        TopologyKind::Custom => {
            return Err(TopologyError::Invalid(
                "custom topologies must be loaded from a file".into(),
            ))
        }
    };

    let mut adjacency = vec![vec![0u8; n]; n];
    for (i, row) in adjacency.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let hears = (j < i && i - j <= back) || (j > i && j - i <= forward);
            *cell = hears as u8;
        }
    }

    let pinning: Vec<u8> = (0..n)
        .map(|i| {
            let pinned = match kind {
                TopologyKind::Pfl
                | TopologyKind::Tpfl
                | TopologyKind::RPfl
                | TopologyKind::Bdl
                | TopologyKind::RBdl => true,
                TopologyKind::Tpf => i < 2,
                _ => i == 0,
            };
            pinned as u8
        })
        .collect();

    let stored_range = if kind.is_generalized() { range } else { 1 };
    Topology::new(kind, stored_range, adjacency, pinning)
}

/// True iff every follower is reachable from the leader along information
/// flow edges (`leader -> i` when pinned, `j -> i` when `a_ij = 1`).
pub fn has_leader_spanning_tree(t: &Topology) -> bool {
    let n = t.n_followers;
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| t.pinning[i] == 1).collect();
    for &i in &queue {
        reached[i] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !reached[i] && t.adjacency[i][j] == 1 {
                reached[i] = true;
                queue.push_back(i);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Spectrum of the coupling matrix `M = L + P`.
#[derive(Debug, Clone)]
pub struct CouplingSpectrum {
    pub matrix: DMatrix<f64>,
    /// Ascending by real part, ties by imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub min_eig: f64,
    pub max_eig: f64,
    pub is_triangular: bool,
    pub is_symmetric: bool,
}

impl CouplingSpectrum {
    /// Eigenvalues as reals, if every imaginary part is below
    /// [`ZERO_IMAG_TOL`].
    pub fn real_eigenvalues(&self) -> Option<Vec<f64>> {
        self.eigenvalues
            .iter()
            .map(|e| (e.im.abs() <= ZERO_IMAG_TOL).then_some(e.re))
            .collect()
    }

    /// `true` when neither triangular nor symmetric: the closed-form
    /// stability results do not cover this case.
    pub fn is_general(&self) -> bool {
        !self.is_triangular && !self.is_symmetric
    }
}

pub fn coupling_spectrum(t: &Topology) -> Result<CouplingSpectrum, TopologyError> {
    if !has_leader_spanning_tree(t) {
        return Err(TopologyError::NoSpanningTree);
    }
    let matrix = t.coupling_matrix();
    let is_triangular = t.is_lower_triangular();
    let is_symmetric = t.is_symmetric();

    let mut eigenvalues: Vec<Complex64> = if is_triangular {
        (0..t.n_followers)
            .map(|i| Complex64::new(matrix[(i, i)], 0.0))
            .collect()
    } else if is_symmetric {
        SymmetricEigen::new(matrix.clone())
            .eigenvalues
            .iter()
            .map(|v| Complex64::new(*v, 0.0))
            .collect()
    } else {
        linalg::eigenvalues(&matrix)?
    };
    linalg::sort_eigenvalues(&mut eigenvalues);

    let min_eig = eigenvalues.iter().map(|e| e.re).fold(f64::INFINITY, f64::min);
    let max_eig = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(CouplingSpectrum {
        matrix,
        eigenvalues,
        min_eig,
        max_eig,
        is_triangular,
        is_symmetric,
    })
}

/// Gershgorin containment plus non-negative real parts.
///
/// Every eigenvalue must lie in some disk centred at `m_ii` with radius
/// `sum_{j != i} |m_ij|`, and have real part `>= 0`. Returns `false` on any
/// violation, which would point at an eigensolver problem.
pub fn gershgorin_certificate(spec: &CouplingSpectrum) -> bool {
    let m = &spec.matrix;
    let n = m.nrows();
    let disks: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let radius: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            (m[(i, i)], radius)
        })
        .collect();
    spec.eigenvalues.iter().all(|ev| {
        let scale = 1.0 + ev.norm();
        let in_disk = disks
            .iter()
            .any(|(c, r)| (*ev - Complex64::new(*c, 0.0)).norm() <= r + ZERO_IMAG_TOL * scale);
        in_disk && ev.re >= -ZERO_IMAG_TOL * scale
    })
}
