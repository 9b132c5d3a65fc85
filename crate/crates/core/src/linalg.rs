//! Small dense linear-algebra helpers shared by the topology and analysis
//! modules: eigenvalues of reducible matrices, polynomial roots, rank, and
//! spectrum pairing.

use nalgebra::{Complex, DMatrix, Schur};
use num_complex::Complex64;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Schur iteration did not converge for a {0}x{0} block")]
    NoConvergence(usize),
}

/// Sort ascending by real part, ties broken by ascending imaginary part.
pub fn sort_eigenvalues(values: &mut [Complex64]) {
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

fn check_square<T>(m: &DMatrix<T>) -> Result<(), LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Strongly connected components of the sparsity pattern of `m`.
///
/// An entry `m[i][j] != 0` is an edge `i -> j`. Permuting the matrix along a
/// topological order of the condensation makes it block upper triangular,
/// so the spectrum is the union of the spectra of the component blocks.
pub fn irreducible_blocks(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut blocks: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|comp| {
            let mut idx: Vec<usize> = comp.into_iter().map(|n| n.index()).collect();
            idx.sort_unstable();
            idx
        })
        .collect();
    blocks.sort_by_key(|b| b[0]);
    blocks
}

/// Diagonal similarity by powers of two that equalizes row and column norms.
/// The spectrum is unchanged and exactly representable.
pub fn balance(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    let radix = 2.0f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let (mut c2, r2) = (c, r / radix);
            while c2 < r2 {
                f *= radix;
                c2 *= radix * radix;
            }
            let r2 = r * radix;
            while c2 > r2 {
                f /= radix;
                c2 /= radix * radix;
            }
            if (c * f + r / f) / s < 0.95 {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                }
                for j in 0..n {
                    m[(j, i)] *= f;
                }
            }
        }
    }
}

fn schur_eigenvalues(mut m: DMatrix<f64>) -> Result<Vec<Complex64>, LinalgError> {
    let n = m.nrows();
    if n == 1 {
        return Ok(vec![Complex64::new(m[(0, 0)], 0.0)]);
    }
    balance(&mut m);
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 100 * n) {
        return Ok(schur
            .complex_eigenvalues()
            .iter()
            .map(|c| Complex64::new(c.re, c.im))
            .collect());
    }
    // nalgebra's iteration has no exceptional shifts and can cycle on
    // clustered repeated eigenvalues.
    log::debug!("Schur stalled on a {n}x{n} block, falling back to hqr");
    hqr(nalgebra::linalg::Hessenberg::new(m).h()).ok_or(LinalgError::NoConvergence(n))
}

/// Eigenvalues of an upper Hessenberg matrix by the Francis double-shift QR
/// iteration with exceptional shifts after 10 and 20 stalled iterations
/// (the classical EISPACK `hqr` scheme).
fn hqr(mut a: DMatrix<f64>) -> Option<Vec<Complex64>> {
    let n = a.nrows();
    let eps = f64::EPSILON;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l > 0 {
                let mut s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(l, l - 1)].abs() <= eps * s {
                    a[(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[(nu, nu)];
            if l == nu {
                out[nu] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[(nu - 1, nu - 1)];
            let mut w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    out[nu - 1] = Complex64::new(x + z, 0.0);
                    out[nu] = Complex64::new(if z != 0.0 { x - w / z } else { x + z }, 0.0);
                } else {
                    out[nu] = Complex64::new(x + p, -z);
                    out[nu - 1] = Complex64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return None;
            }
            if its % 10 == 0 && its > 0 {
                t += x;
                for i in 0..=nu {
                    a[(i, i)] -= x;
                }
                let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let (mut p, mut q, mut r);
            let mut m = nu - 2;
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nu - 1 {
                a[(i + 2, i)] = 0.0;
                if i != m {
                    a[(i + 2, i - 1)] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k + 1 != nu { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[(k, k - 1)] = -a[(k, k - 1)];
                        }
                    } else {
                        a[(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                        if k + 1 != nu {
                            pp += r * a[(k + 2, j)];
                            a[(k + 2, j)] -= pp * z;
                        }
                        a[(k + 1, j)] -= pp * y;
                        a[(k, j)] -= pp * x;
                    }
                    let mmin = nu.min(k + 3);
                    for i in l..=mmin {
                        let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                        if k + 1 != nu {
                            pp += z * a[(i, k + 2)];
                            a[(i, k + 2)] -= pp * r;
                        }
                        a[(i, k + 1)] -= pp * q;
                        a[(i, k)] -= pp;
                    }
                }
                k += 1;
            }
            if l + 1 >= nn as usize {
                break;
            }
        }
    }
    Some(out)
}

/// Eigenvalues of a general real square matrix.
///
/// The matrix is first split into its irreducible diagonal blocks; each block
/// goes through a real Schur decomposition. Block-triangular structure (for
/// example the closed loop of a look-ahead platoon) is therefore resolved
/// exactly instead of being smeared by the conditioning of repeated
/// eigenvalues with long Jordan chains.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>, LinalgError> {
    check_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut out = Vec::with_capacity(m.nrows());
    for block in irreducible_blocks(m) {
        let sub = DMatrix::from_fn(block.len(), block.len(), |r, c| m[(block[r], block[c])]);
        out.extend(schur_eigenvalues(sub)?);
    }
    sort_eigenvalues(&mut out);
    Ok(out)
}

/// Eigenvalues of a complex square matrix (complex Schur form).
pub fn complex_eigenvalues(m: &DMatrix<Complex64>) -> Result<Vec<Complex64>, LinalgError> {
    check_square(m)?;
    let n = m.nrows();
    if m.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    if n == 1 {
        return Ok(vec![m[(0, 0)]]);
    }
    let converted: DMatrix<Complex<f64>> = m.map(|c| Complex::new(c.re, c.im));
    let schur = Schur::try_new(converted, f64::EPSILON, 10_000 * n).ok_or(LinalgError::NoConvergence(n))?;
    let mut out: Vec<Complex64> = schur
        .eigenvalues()
        .ok_or(LinalgError::NoConvergence(n))?
        .iter()
        .map(|c| Complex64::new(c.re, c.im))
        .collect();
    sort_eigenvalues(&mut out);
    Ok(out)
}

/// Roots of a monic-or-not real polynomial given highest degree first.
///
/// Uses the eigenvalues of the companion matrix. Leading zeros are rejected
/// by returning the roots of the trimmed polynomial.
pub fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<Complex64>, LinalgError> {
    let start = coeffs.iter().position(|c| *c != 0.0).unwrap_or(coeffs.len());
    let c = &coeffs[start..];
    if c.len() <= 1 {
        return Ok(Vec::new());
    }
    let degree = c.len() - 1;
    let lead = c[0];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for j in 0..degree {
        companion[(0, j)] = -c[j + 1] / lead;
    }
    for i in 1..degree {
        companion[(i, i - 1)] = 1.0;
    }
    if companion.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let mut roots = schur_eigenvalues(companion)?;
    sort_eigenvalues(&mut roots);
    Ok(roots)
}

/// Numerical rank via singular values relative to the largest one.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * max).count()
}

/// Largest real part over a spectrum (`-inf` for an empty one).
pub fn spectral_abscissa(values: &[Complex64]) -> f64 {
    values.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Whether the two multisets can be paired one-to-one with every pair closer
/// than `tol` (bipartite matching on the threshold graph).
pub fn spectra_match_within(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let adj: Vec<Vec<usize>> = a
        .iter()
        .map(|x| {
            b.iter()
                .enumerate()
                .filter(|(_, y)| (*x - **y).norm() < tol)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    max_matching(&adj, b.len()) == a.len()
}

/// Smallest achievable maximum pair distance over all one-to-one pairings of
/// two equally sized multisets (bottleneck assignment).
pub fn bottleneck_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    let mut dists: Vec<f64> = a
        .iter()
        .flat_map(|x| b.iter().map(move |y| (*x - *y).norm()))
        .collect();
    dists.sort_by(f64::total_cmp);
    dists.dedup();
    let feasible = |limit: f64| {
        let adj: Vec<Vec<usize>> = a
            .iter()
            .map(|x| {
                b.iter()
                    .enumerate()
                    .filter(|(_, y)| (*x - **y).norm() <= limit)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        max_matching(&adj, b.len()) == a.len()
    };
    let (mut lo, mut hi) = (0, dists.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(dists[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    dists[lo]
}

// Kuhn's augmenting-path matching; sizes here are at most a few hundred.
fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].map_or(true, |w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_right];
    let mut count = 0;
    for u in 0..adj.len() {
        let mut seen = vec![false; n_right];
        if augment(u, adj, &mut seen, &mut owner) {
            count += 1;
        }
    }
    count
}
