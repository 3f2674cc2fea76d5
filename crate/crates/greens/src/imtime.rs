//! Compact imaginary-time basis for fermionic functions on `[0, beta]`.
//!
//! Functions are expanded as `G(tau) = sum_k g_k K(tau, w_k)` with
//! `K(tau, w) = exp(-w tau) / (1 + exp(-beta w))`. Frequencies are chosen
//! by pivoted Gram-Schmidt on a fine discretization of `K`, interpolation
//! nodes by the same pivoting on the rows of the selected columns.
//! Coordinates are dimensionless internally: `t = tau / beta`, `x = beta w`.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::error::{GreensError, Result};
use crate::quad::{chebyshev, composite_rule, two_sided_panels};

const PANEL_POINTS: usize = 24;
const QUAD_ORDER: usize = 16;

/// `exp(-x t) / (1 + exp(-x))`, evaluated without overflow for either sign of `x`.
pub fn kernel_dimless(t: f64, x: f64) -> f64 {
    if x >= 0.0 {
        (-x * t).exp() / (1.0 + (-x).exp())
    } else {
        (x * (1.0 - t)).exp() / (1.0 + x.exp())
    }
}

/// `K(tau, omega)` in physical units.
pub fn kernel(tau: f64, omega: f64, beta: f64) -> f64 {
    kernel_dimless(tau / beta, beta * omega)
}

/// Fermionic Matsubara frequency `(2n + 1) pi / beta`.
pub fn matsubara_freq(n: i64, beta: f64) -> f64 {
    (2 * n + 1) as f64 * std::f64::consts::PI / beta
}

/// Pivoted modified Gram-Schmidt with one reorthogonalization pass.
/// Returns the chosen vector indices and the orthonormal basis. Stops when
/// the largest residual norm drops below `tol` or `max_rank` is reached.
fn pivoted_gs_real(vecs: &[Vec<f64>], tol: f64, max_rank: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut res: Vec<Vec<f64>> = vecs.to_vec();
    let mut chosen = Vec::new();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; vecs.len()];
    while chosen.len() < max_rank {
        let (best, norm) = res
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, v)| (i, v.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .fold((usize::MAX, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        let sup = res
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .flat_map(|(_, v)| v.iter())
            .fold(0.0f64, |m, x| m.max(x.abs()));
        if best == usize::MAX || norm == 0.0 || sup <= tol {
            break;
        }
        let mut v = res[best].clone();
        for _ in 0..2 {
            for qk in &q {
                let dot: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(qk).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        for (i, r) in res.iter_mut().enumerate() {
            if used[i] {
                continue;
            }
            let dot: f64 = v.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(&v).for_each(|(x, y)| *x -= dot * y);
        }
        used[best] = true;
        chosen.push(best);
        q.push(v);
    }
    (chosen, q)
}

fn pivoted_gs_complex(vecs: &[Vec<C>], max_rank: usize) -> Vec<usize> {
    let mut res: Vec<Vec<C>> = vecs.to_vec();
    let mut q: Vec<Vec<C>> = Vec::new();
    let mut chosen = Vec::new();
    let mut used = vec![false; vecs.len()];
    let norm = |v: &[C]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let inner = |a: &[C], b: &[C]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C>();
    while chosen.len() < max_rank {
        let (best, _) = res
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, v)| (i, norm(v)))
            .fold((usize::MAX, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if best == usize::MAX {
            break;
        }
        let mut v = res[best].clone();
        for _ in 0..2 {
            for qk in &q {
                let dot = inner(qk, &v);
                v.iter_mut().zip(qk).for_each(|(x, y)| *x -= dot * y);
            }
        }
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        for (i, r) in res.iter_mut().enumerate() {
            if !used[i] {
                let dot = inner(&v, r);
                r.iter_mut().zip(&v).for_each(|(x, y)| *x -= dot * y);
            }
        }
        used[best] = true;
        chosen.push(best);
        q.push(v);
    }
    chosen
}

/// Expansion coefficients of one function in a [`DlrBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct ImTimeFn {
    pub coeffs: Vec<C>,
    key: BasisKey,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BasisKey {
    beta: f64,
    lambda: f64,
    eps: f64,
    r: usize,
}

#[derive(Debug, Clone)]
pub struct DlrBasis {
    pub beta: f64,
    pub lambda: f64,
    pub eps: f64,
    /// Dimensionless frequencies `beta w_k`, increasing.
    pub freqs: Vec<f64>,
    /// Dimensionless nodes `tau_j / beta`, increasing.
    pub nodes: Vec<f64>,
    /// Selected Matsubara indices `n` (`nu_n = (2n+1) pi / beta`).
    pub matsubara: Vec<i64>,
    /// Largest projection residual over the certification frequencies.
    pub cert_residual: f64,
    eval_nodes: DMatrix<f64>,
    node_lu: LU<C, Dyn, Dyn>,
    node_lu_t: LU<C, Dyn, Dyn>,
    mats_lu: LU<C, Dyn, Dyn>,
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    beta: f64,
    lambda: f64,
    eps: f64,
    freqs: Vec<f64>,
    nodes: Vec<f64>,
    matsubara: Vec<i64>,
    cert_residual: f64,
}

fn fine_frequencies(lambda: f64) -> Vec<f64> {
    let mut edges = vec![0.0, lambda.min(1.0)];
    while *edges.last().unwrap() < lambda {
        let next = (2.0 * edges.last().unwrap()).min(lambda);
        edges.push(next);
    }
    let mut pos = Vec::new();
    for e in edges.windows(2) {
        pos.extend(chebyshev(PANEL_POINTS, e[0], e[1]));
    }
    let mut all: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    all.extend(pos);
    all
}

fn fine_times(lambda: f64) -> Vec<f64> {
    let edges = two_sided_panels(0.0, 1.0, 1.0 / lambda);
    let mut out = Vec::new();
    for e in edges.windows(2) {
        out.extend(chebyshev(PANEL_POINTS, e[0], e[1]));
    }
    out
}

fn matsubara_candidates(lambda: f64) -> Vec<i64> {
    let mut pos: Vec<i64> = (0..128).collect();
    let n_max = ((4.0 * lambda / (2.0 * std::f64::consts::PI)).ceil() as i64).max(256);
    let mut x = 128.0f64;
    while (x as i64) < n_max {
        x *= 1.05;
        let n = (x as i64).min(n_max);
        if n > *pos.last().unwrap() {
            pos.push(n);
        }
    }
    let mut all: Vec<i64> = pos.iter().rev().map(|n| -n - 1).collect();
    all.extend(pos);
    all
}

/// `-1 / (i (2n+1) pi - x)`: dimensionless transform of `K(., x)`.
fn pole(n: i64, x: f64) -> C {
    let nu = (2 * n + 1) as f64 * std::f64::consts::PI;
    -C::new(1.0, 0.0) / C::new(-x, nu)
}

impl DlrBasis {
    pub fn build(beta: f64, lambda: f64, eps: f64) -> Result<Self> {
        if !(beta > 0.0) || !(lambda >= 1.0) || !(eps > 0.0 && eps < 1.0) {
            return Err(GreensError::Config(format!(
                "need beta > 0, lambda >= 1, 0 < eps < 1; got beta={beta}, lambda={lambda}, eps={eps}"
            )));
        }
        let xs = fine_frequencies(lambda);
        let ts = fine_times(lambda);
        let cols: Vec<Vec<f64>> = xs
            .iter()
            .map(|&x| ts.iter().map(|&t| kernel_dimless(t, x)).collect())
            .collect();
        // Residual updates stagnate near a few ulps of the largest entry.
        let sup0 = cols.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = eps.max(64.0 * f64::EPSILON * sup0);
        let (sel, q) = pivoted_gs_real(&cols, tol, ts.len().min(xs.len()));
        if sel.is_empty() {
            return Err(GreensError::Basis("no frequencies selected".into()));
        }
        let mut freqs: Vec<f64> = sel.iter().map(|&i| xs[i]).collect();
        freqs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = freqs.len();

        let rows: Vec<Vec<f64>> = ts
            .iter()
            .map(|&t| freqs.iter().map(|&x| kernel_dimless(t, x)).collect())
            .collect();
        let (row_sel, _) = pivoted_gs_real(&rows, 0.0, r);
        if row_sel.len() < r {
            return Err(GreensError::Basis(format!(
                "row pivoting stagnated at {} of {r} nodes",
                row_sel.len()
            )));
        }
        let mut nodes: Vec<f64> = row_sel.iter().map(|&i| ts[i]).collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // Certify on frequencies off the fine grid.
        let mut test: Vec<f64> = (0..=400).map(|i| lambda * (i as f64 / 400.0).powi(3)).collect();
        test.extend((0..200).map(|i| lambda * (i as f64 + 0.37) / 200.0));
        let mut cert: f64 = 0.0;
        for x in test.iter().flat_map(|&x| [x, -x]) {
            let mut v: Vec<f64> = ts.iter().map(|&t| kernel_dimless(t, x)).collect();
            for _ in 0..2 {
                for qk in &q {
                    let dot: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(qk).for_each(|(a, b)| *a -= dot * b);
                }
            }
            cert = cert.max(v.iter().fold(0.0, |m, a| m.max(a.abs())));
        }
        if cert > 10.0 * eps {
            return Err(GreensError::Basis(format!(
                "certification residual {cert:e} exceeds 10 eps = {:e} (r = {r})",
                10.0 * eps
            )));
        }

        let cands = matsubara_candidates(lambda);
        let mrows: Vec<Vec<C>> = cands
            .iter()
            .map(|&n| freqs.iter().map(|&x| pole(n, x)).collect())
            .collect();
        let msel = pivoted_gs_complex(&mrows, r);
        let mut matsubara: Vec<i64> = msel.iter().map(|&i| cands[i]).collect();
        matsubara.sort();
        Self::assemble(beta, lambda, eps, freqs, nodes, matsubara, cert)
    }

    fn assemble(
        beta: f64,
        lambda: f64,
        eps: f64,
        freqs: Vec<f64>,
        nodes: Vec<f64>,
        matsubara: Vec<i64>,
        cert: f64,
    ) -> Result<Self> {
        let r = freqs.len();
        if nodes.len() != r || matsubara.len() != r {
            return Err(GreensError::Basis(format!(
                "{r} frequencies, {} nodes, {} Matsubara points",
                nodes.len(),
                matsubara.len()
            )));
        }
        let eval_nodes = DMatrix::from_fn(r, r, |j, k| kernel_dimless(nodes[j], freqs[k]));
        let ec = eval_nodes.map(|v| C::new(v, 0.0));
        let node_lu = ec.clone().lu();
        let node_lu_t = ec.transpose().lu();
        let mats_lu = DMatrix::from_fn(r, r, |i, k| pole(matsubara[i], freqs[k])).lu();
        if !node_lu.is_invertible() || !mats_lu.is_invertible() {
            return Err(GreensError::Basis("interpolation matrix is singular".into()));
        }
        Ok(Self {
            beta,
            lambda,
            eps,
            freqs,
            nodes,
            matsubara,
            cert_residual: cert,
            eval_nodes,
            node_lu,
            node_lu_t,
            mats_lu,
        })
    }

    pub fn r(&self) -> usize {
        self.freqs.len()
    }

    fn key(&self) -> BasisKey {
        BasisKey {
            beta: self.beta,
            lambda: self.lambda,
            eps: self.eps,
            r: self.r(),
        }
    }

    /// Whether `f` was produced by this basis.
    pub fn owns(&self, f: &ImTimeFn) -> bool {
        f.key == self.key()
    }

    /// Physical nodes `tau_j`.
    pub fn tau_nodes(&self) -> Vec<f64> {
        self.nodes.iter().map(|t| t * self.beta).collect()
    }

    /// Physical frequencies `w_k`.
    pub fn omegas(&self) -> Vec<f64> {
        self.freqs.iter().map(|x| x / self.beta).collect()
    }

    /// `K(tau, w_k)` for every `k`.
    pub fn eval_row(&self, tau: f64) -> Vec<f64> {
        let t = tau / self.beta;
        self.freqs.iter().map(|&x| kernel_dimless(t, x)).collect()
    }

    /// Row vector `e` with `G(tau) = e . (node values)`.
    pub fn node_functional(&self, tau: f64) -> Vec<f64> {
        let row = DMatrix::from_fn(1, self.r(), |_, k| {
            C::new(kernel_dimless(tau / self.beta, self.freqs[k]), 0.0)
        });
        self.times_node_inverse(row).iter().map(|v| v.re).collect()
    }

    /// Matrix `R` with `G(beta - tau_i) = sum_j R_ij G(tau_j)`.
    pub fn reflect_matrix(&self) -> DMatrix<f64> {
        let r = self.r();
        let e = DMatrix::from_fn(r, r, |i, k| kernel_dimless(1.0 - self.nodes[i], self.freqs[k]));
        self.times_node_inverse(e.map(|v| C::new(v, 0.0))).map(|v| v.re)
    }

    /// `A E^{-1}` with `E_jk = K(tau_j, w_k)`, via the factorization of `E^T`.
    fn times_node_inverse(&self, a: DMatrix<C>) -> DMatrix<C> {
        self.node_lu_t
            .solve(&a.transpose())
            .expect("factorization is invertible")
            .transpose()
    }

    pub fn from_coeffs(&self, coeffs: Vec<C>) -> Result<ImTimeFn> {
        if coeffs.len() != self.r() {
            return Err(GreensError::Config(format!(
                "{} coefficients for r = {}",
                coeffs.len(),
                self.r()
            )));
        }
        Ok(ImTimeFn {
            coeffs,
            key: self.key(),
        })
    }

    pub fn fit(&self, node_values: &[C]) -> Result<ImTimeFn> {
        if node_values.len() != self.r() {
            return Err(GreensError::Config(format!(
                "{} node values for r = {}",
                node_values.len(),
                self.r()
            )));
        }
        let rhs = DVector::from_column_slice(node_values);
        let coeffs = self
            .node_lu
            .solve(&rhs)
            .expect("factorization is invertible")
            .iter()
            .copied()
            .collect();
        Ok(ImTimeFn {
            coeffs,
            key: self.key(),
        })
    }

    pub fn eval(&self, f: &ImTimeFn, tau: f64) -> Result<C> {
        let slack = 1e-12 * self.beta;
        if !(tau >= -slack && tau <= self.beta + slack) {
            return Err(GreensError::Domain { tau, beta: self.beta });
        }
        Ok(self.eval_unchecked(f, tau.clamp(0.0, self.beta)))
    }

    fn eval_unchecked(&self, f: &ImTimeFn, tau: f64) -> C {
        let t = tau / self.beta;
        self.freqs
            .iter()
            .zip(&f.coeffs)
            .map(|(&x, &c)| c * kernel_dimless(t, x))
            .sum()
    }

    /// `tau`-derivative of `f`.
    pub fn eval_derivative(&self, f: &ImTimeFn, tau: f64) -> C {
        let t = tau / self.beta;
        self.freqs
            .iter()
            .zip(&f.coeffs)
            .map(|(&x, &c)| c * (-x / self.beta * kernel_dimless(t, x)))
            .sum()
    }

    pub fn node_values(&self, f: &ImTimeFn) -> Vec<C> {
        (0..self.r())
            .map(|j| (0..self.r()).map(|k| f.coeffs[k] * self.eval_nodes[(j, k)]).sum())
            .collect()
    }

    /// Expansion of `tau -> f(beta - tau)`.
    pub fn reflect(&self, f: &ImTimeFn) -> ImTimeFn {
        let vals: Vec<C> = self
            .nodes
            .iter()
            .map(|&t| self.eval_unchecked(f, (1.0 - t) * self.beta))
            .collect();
        self.fit(&vals).expect("r node values")
    }

    /// `G(i nu_n) = int_0^beta exp(i nu_n tau) G(tau) dtau`.
    pub fn matsubara_eval(&self, f: &ImTimeFn, n: i64) -> C {
        self.freqs
            .iter()
            .zip(&f.coeffs)
            .map(|(&x, &c)| c * pole(n, x))
            .sum::<C>()
            * self.beta
    }

    /// Inverse of [`Self::matsubara_eval`] on the selected frequencies.
    pub fn matsubara_fit(&self, values: &[C]) -> Result<ImTimeFn> {
        if values.len() != self.r() {
            return Err(GreensError::Config(format!(
                "{} Matsubara values for r = {}",
                values.len(),
                self.r()
            )));
        }
        let rhs = DVector::from_iterator(self.r(), values.iter().map(|v| v / self.beta));
        let coeffs = self
            .mats_lu
            .solve(&rhs)
            .expect("factorization is invertible")
            .iter()
            .copied()
            .collect();
        Ok(ImTimeFn {
            coeffs,
            key: self.key(),
        })
    }

    /// Composite Gauss-Legendre rule on `[a, b]`, refined toward both ends
    /// to the basis resolution.
    pub fn panel_rule(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        if b <= a {
            return (Vec::new(), Vec::new());
        }
        let edges = two_sided_panels(a, b, self.beta / (8.0 * self.lambda));
        composite_rule(&edges, QUAD_ORDER)
    }

    /// Matrix `M` with `(M s)_j = int_0^beta S(tau') G(tau' - tau_j) dtau'`
    /// for node samples `s` of `S`, using `G(-x) = -G(beta - x)`.
    pub fn conv_matrix(&self, gm: &ImTimeFn) -> Result<DMatrix<C>> {
        if !self.owns(gm) {
            return Err(GreensError::Config("function belongs to a different basis".into()));
        }
        let r = self.r();
        let mut w = DMatrix::<C>::zeros(r, r);
        for (j, &tj) in self.tau_nodes().iter().enumerate() {
            for (lo, hi, branch) in [(0.0, tj, true), (tj, self.beta, false)] {
                let (xs, ws) = self.panel_rule(lo, hi);
                for (&x, &wt) in xs.iter().zip(&ws) {
                    let g = if branch {
                        -self.eval_unchecked(gm, self.beta + x - tj)
                    } else {
                        self.eval_unchecked(gm, x - tj)
                    };
                    let gw = g * wt;
                    let t = x / self.beta;
                    for (k, &fx) in self.freqs.iter().enumerate() {
                        w[(j, k)] += gw * kernel_dimless(t, fx);
                    }
                }
            }
        }
        Ok(self.times_node_inverse(w))
    }

    /// `int_0^beta a(tau - tau') b(tau') dtau'` with the antiperiodic
    /// extension of `a`.
    pub fn convolve_at(&self, a: &ImTimeFn, b: &ImTimeFn, tau: f64) -> C {
        let mut acc = C::new(0.0, 0.0);
        for (lo, hi, wrap) in [(0.0, tau, false), (tau, self.beta, true)] {
            let (xs, ws) = self.panel_rule(lo, hi);
            for (&x, &wt) in xs.iter().zip(&ws) {
                let av = if wrap {
                    -self.eval_unchecked(a, self.beta + tau - x)
                } else {
                    self.eval_unchecked(a, tau - x)
                };
                acc += av * self.eval_unchecked(b, x) * wt;
            }
        }
        acc
    }

    pub fn to_json(&self) -> String {
        let file = BasisFile {
            beta: self.beta,
            lambda: self.lambda,
            eps: self.eps,
            freqs: self.freqs.clone(),
            nodes: self.nodes.clone(),
            matsubara: self.matsubara.clone(),
            cert_residual: self.cert_residual,
        };
        serde_json::to_string_pretty(&file).expect("basis serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: BasisFile = serde_json::from_str(text).map_err(|e| GreensError::Io(e.to_string()))?;
        Self::assemble(f.beta, f.lambda, f.eps, f.freqs, f.nodes, f.matsubara, f.cert_residual)
    }
}

/// Free-fermion Matsubara function `-exp(-tau h) / (1 + exp(-beta h))`.
pub fn free_fermion(tau: f64, h: f64, beta: f64) -> f64 {
    -kernel(tau, h, beta)
}

/// Convergence record of [`solve_matsubara`].
#[derive(Debug, Clone)]
pub struct MatsubaraSolution {
    pub g: ImTimeFn,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Self-consistent `G(i nu) = 1 / (i nu - h - Sigma(i nu))` with
/// `Sigma = sigma_eval(G)` evaluated on node values. Starts from the free
/// fermion, mixes with weight `mix`, stops when the largest node update is
/// below `tol`.
pub fn solve_matsubara<F>(
    basis: &DlrBasis,
    h: f64,
    sigma_eval: F,
    mix: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MatsubaraSolution>
where
    F: Fn(&[C]) -> Vec<C>,
{
    if !(mix > 0.0 && mix <= 1.0) {
        return Err(GreensError::Config(format!("mix must lie in (0, 1], got {mix}")));
    }
    let mut g: Vec<C> = basis
        .tau_nodes()
        .iter()
        .map(|&t| C::new(free_fermion(t, h, basis.beta), 0.0))
        .collect();
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let sigma = basis.fit(&sigma_eval(&g))?;
        let gw: Vec<C> = basis
            .matsubara
            .iter()
            .map(|&n| {
                let iv = C::new(0.0, matsubara_freq(n, basis.beta));
                C::new(1.0, 0.0) / (iv - h - basis.matsubara_eval(&sigma, n))
            })
            .collect();
        let gnew_fn = basis.matsubara_fit(&gw)?;
        let gnew = basis.node_values(&gnew_fn);
        let diff = g.iter().zip(&gnew).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        history.push(diff);
        if diff < tol {
            return Ok(MatsubaraSolution {
                g: gnew_fn,
                iterations: it,
                history,
            });
        }
        for (a, b) in g.iter_mut().zip(&gnew) {
            *a = *a * (1.0 - mix) + b * mix;
        }
    }
    Err(GreensError::NoConvergence {
        iterations: max_iter,
        last: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

/// Largest `|(-d/dtau - h) G - int Sigma(tau - tau') G(tau') dtau'|` over `taus`.
pub fn matsubara_residual(basis: &DlrBasis, h: f64, g: &ImTimeFn, sigma: &ImTimeFn, taus: &[f64]) -> f64 {
    taus.iter()
        .map(|&t| {
            let lhs = -basis.eval_derivative(g, t) - basis.eval_unchecked(g, t) * h;
            (lhs - basis.convolve_at(sigma, g, t)).norm()
        })
        .fold(0.0, f64::max)
}
