//! Euclidean projection onto `{X : X <= I, diag(X) <= 0}`.
//!
//! The two constraint sets are handled by alternation: the eigenvalue clip
//! for `X <= I` and a nonnegative diagonal correction `g` for the diagonal
//! bound, `X(g) = clip(Z - diag(g))`. The correction solves the
//! complementarity problem `g >= 0, X(g)_ii <= 0, g_i X(g)_ii = 0`, which is
//! the optimality system of the projection's dual. Each round tries a
//! projected semismooth Newton step on the free coordinates and falls back
//! to the plain ascent step `g <- max(0, g + diag X(g))` when Newton does
//! not reduce the complementarity residual.
//!
//! The correction is kept between calls (per unit gradient step) so
//! consecutive projections of nearby points need only a few rounds.

use crate::error::Result;
use crate::linalg::{Mat, SpectralDecomposition, SymMat};

/// Cap on clip/correct rounds per projection.
pub const MAX_ROUNDS: usize = 50;

#[derive(Debug, Clone)]
pub struct CfProjector {
    /// Diagonal correction per unit step (warm start, rescaled by the step).
    correction: Vec<f64>,
    rel_tol: f64,
    pub last_rounds: usize,
    pub last_residual: f64,
}

struct Round {
    g: Vec<f64>,
    sd: SpectralDecomposition,
    x: SymMat,
    residual: f64,
}

fn evaluate(z: &SymMat, g: Vec<f64>) -> Result<Round> {
    let y = z.add_diag(&g.iter().map(|v| -v).collect::<Vec<_>>());
    let sd = y.eig()?;
    let x = if sd.max() > 1.0 {
        sd.map(|w| w.min(1.0))
    } else {
        y
    };
    let residual = g
        .iter()
        .enumerate()
        .map(|(i, gi)| (gi - (gi + x.get(i, i)).max(0.0)).abs())
        .fold(0.0, f64::max);
    Ok(Round {
        g,
        sd,
        x,
        residual,
    })
}

/// `K_ik = d[(Y - I)_+]_ii / dY_kk`, the diagonal block of the derivative of
/// the positive part at `Y - I` (spectrum `w - 1`, vectors `V`).
fn positive_part_diag_jacobian(sd: &SpectralDecomposition) -> Mat {
    let n = sd.n();
    let v = &sd.vectors;
    let mu: Vec<f64> = sd.values.iter().map(|w| w - 1.0).collect();
    let positive: Vec<usize> = (0..n).filter(|&a| mu[a] > 0.0).collect();
    let mut k = Mat::zeros(n, n);
    let mut u = vec![0.0; n];
    for &a in &positive {
        for b in 0..n {
            let weight = if mu[b] > 0.0 {
                1.0
            } else {
                2.0 * mu[a] / (mu[a] - mu[b])
            };
            if weight == 0.0 {
                continue;
            }
            for i in 0..n {
                u[i] = v[(i, a)] * v[(i, b)];
            }
            for i in 0..n {
                let ui = weight * u[i];
                if ui == 0.0 {
                    continue;
                }
                let row = k.row_mut(i);
                for (kk, uk) in row.iter_mut().zip(&u) {
                    *kk += ui * uk;
                }
            }
        }
    }
    k
}

/// Newton correction on the free coordinates: `(I - K)_FF d_F = diag(X)_F`.
fn newton_candidate(round: &Round) -> Option<Vec<f64>> {
    let n = round.g.len();
    let free: Vec<usize> = (0..n)
        .filter(|&i| round.g[i] > 0.0 || round.x.get(i, i) > 0.0)
        .collect();
    if free.is_empty() {
        return None;
    }
    let k = positive_part_diag_jacobian(&round.sd);
    let m = SymMat::from_upper_fn(free.len(), |p, q| {
        let (i, j) = (free[p], free[q]);
        let kij = 0.5 * (k[(i, j)] + k[(j, i)]);
        if p == q {
            1.0 - kij + 1e-14
        } else {
            -kij
        }
    });
    let rhs: Vec<f64> = free.iter().map(|&i| round.x.get(i, i)).collect();
    let step = m.cholesky().ok()?.solve(&rhs);
    let mut g = round.g.clone();
    for (p, &i) in free.iter().enumerate() {
        g[i] = (g[i] + step[p]).max(0.0);
    }
    step.iter().all(|v| v.is_finite()).then_some(g)
}

impl CfProjector {
    pub fn new(n: usize) -> Self {
        Self {
            correction: vec![0.0; n],
            rel_tol: 1e-14,
            last_rounds: 0,
            last_residual: 0.0,
        }
    }

    /// Projects `z`. `step` is the gradient step that produced `z`; it only
    /// rescales the warm start.
    pub fn project(&mut self, z: &SymMat, step: f64) -> Result<SymMat> {
        let n = z.n();
        let tol = self.rel_tol * z.max_abs().max(1.0);
        let g0: Vec<f64> = self.correction.iter().map(|c| c * step).collect();
        let mut cur = evaluate(z, g0)?;
        let mut rounds = 1;
        while cur.residual > tol && rounds < MAX_ROUNDS {
            rounds += 1;
            let mut next = None;
            if let Some(g) = newton_candidate(&cur) {
                let cand = evaluate(z, g)?;
                if cand.residual < cur.residual {
                    next = Some(cand);
                } else {
                    rounds += 1;
                }
            }
            let next = match next {
                Some(r) => r,
                None => {
                    let g: Vec<f64> = cur
                        .g
                        .iter()
                        .enumerate()
                        .map(|(i, gi)| (gi + cur.x.get(i, i)).max(0.0))
                        .collect();
                    evaluate(z, g)?
                }
            };
            cur = next;
        }
        self.last_rounds = rounds;
        self.last_residual = cur.residual;
        if step > 0.0 {
            self.correction = cur.g.iter().map(|v| v / step).collect();
        }
        let mut x = cur.x;
        // subtracting a nonnegative diagonal keeps X <= I
        for i in 0..n {
            if x.get(i, i) > 0.0 {
                x.set(i, i, 0.0);
            }
        }
        Ok(x)
    }
}

/// One-shot projection without warm start.
pub fn project_cf(z: &SymMat) -> Result<SymMat> {
    CfProjector::new(z.n()).project(z, 1.0)
}
