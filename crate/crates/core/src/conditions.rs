//! Solvability conditions: the scalar MI margin and the two-group
//! dissipativity assumption `L(t) + L(t)* <= 0`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::ConditionError;
use crate::exec::{map_indexed, ExecMode};
use crate::grid::TimeGrid;
use crate::linalg::{
    cmat_add, cmat_adjoint, cmat_from_real, cmat_mul, hermitian_eigenvalues, CMat2, Mat2,
};
use crate::model::{build_mp_matrices, MiParams, MpMatrices, MpParams};
use crate::riccati::{ClosedFormA, RiccatiSolutionMp};
use crate::rng::{stream, Normals};

/// Absolute tolerance on the largest eigenvalue of `L + L*`.
pub const ASSUMPTION_TOL: f64 = 1e-10;
const HEURISTIC_SEED: u64 = 0x5eed_cafe;
const HEURISTIC_DRAWS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Inconclusive,
}

/// `(E, F)` pair of complex 2x2 matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub e: CMat2,
    pub f: CMat2,
}

impl Candidate {
    pub fn real(e: Mat2, f: Mat2) -> Self {
        Self {
            e: cmat_from_real(e),
            f: cmat_from_real(f),
        }
    }

    /// Checks `E = E*` and `E > 0`.
    pub fn validate(&self) -> Result<(), ConditionError> {
        let e = &self.e;
        let scale = e.iter().flatten().map(|z| z.norm()).fold(1.0, f64::max);
        for i in 0..2 {
            for j in 0..2 {
                if (e[i][j] - e[j][i].conj()).norm() > 1e-12 * scale {
                    return Err(ConditionError::NotHermitian);
                }
            }
        }
        let flat: Vec<Complex64> = e.iter().flatten().copied().collect();
        if hermitian_eigenvalues(&flat, 2)[0] <= 0.0 {
            return Err(ConditionError::NotPositiveDefinite);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: Verdict,
    /// Smallest slack over the grid. For the MP assumption this is minus the
    /// worst eigenvalue of the best candidate tried.
    pub min_margin: f64,
    pub witness_time: f64,
    /// Accepted `(E, F)` as `[[re, im]; 2]; 2]` pairs, MP only.
    pub witness_matrices: Option<[[[[f64; 2]; 2]; 2]; 2]>,
}

/// Evaluates `b_mu A_t + c_mu` with the closed-form `A` at every node.
pub fn check_mi_condition(params: &MiParams, grid: &TimeGrid) -> ConditionReport {
    let a = ClosedFormA::new(params);
    let (mut margin, mut at) = (f64::INFINITY, 0.0);
    for t in grid.nodes() {
        let m = params.b_mu * a.eval(t).expect("grid node inside horizon") + params.c_mu;
        if m < margin {
            margin = m;
            at = t;
        }
    }
    ConditionReport {
        holds: if margin >= 0.0 { Verdict::Yes } else { Verdict::No },
        min_margin: margin,
        witness_time: at,
        witness_matrices: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionBlocks {
    pub m11: Mat2,
    pub m21: Mat2,
    pub m22: Mat2,
}

pub fn build_assumption_blocks(m: &MpMatrices, a: &Mat2) -> AssumptionBlocks {
    AssumptionBlocks {
        m11: m.m2 * *a + m.m1 + m.m3,
        m21: m.m5 - *a * m.m3,
        m22: m.m6 - *a * m.m2 - m.m1,
    }
}

/// `L = [[E M11 + F M21, E M2 + M11^T F + F M22], [0, M2 F]]`, row-major 4x4.
pub fn assemble_l(m: &MpMatrices, blocks: &AssumptionBlocks, cand: &Candidate) -> [[Complex64; 4]; 4] {
    let c = cmat_from_real;
    let (e, f) = (&cand.e, &cand.f);
    let tl = cmat_add(&cmat_mul(e, &c(blocks.m11)), &cmat_mul(f, &c(blocks.m21)));
    let tr = cmat_add(
        &cmat_add(&cmat_mul(e, &c(m.m2)), &cmat_mul(&c(blocks.m11.transpose()), f)),
        &cmat_mul(f, &c(blocks.m22)),
    );
    let br = cmat_mul(&c(m.m2), f);
    let mut l = [[Complex64::new(0.0, 0.0); 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            l[i][j] = tl[i][j];
            l[i][j + 2] = tr[i][j];
            l[i + 2][j + 2] = br[i][j];
        }
    }
    l
}

/// Largest eigenvalue of `L + L*`.
pub fn hermitian_part_max_eigenvalue(l: &[[Complex64; 4]; 4]) -> f64 {
    let mut h = Vec::with_capacity(16);
    for i in 0..4 {
        for j in 0..4 {
            h.push(l[i][j] + l[j][i].conj());
        }
    }
    *hermitian_eigenvalues(&h, 4).last().expect("4 eigenvalues")
}

/// Worst eigenvalue over the solution's nodes and the node index where it occurs.
pub fn candidate_worst_eigenvalue(
    m: &MpMatrices,
    sol: &RiccatiSolutionMp,
    cand: &Candidate,
) -> (f64, usize) {
    let mut worst = (f64::NEG_INFINITY, 0);
    for (k, a) in sol.a.iter().enumerate() {
        let lambda = hermitian_part_max_eigenvalue(&assemble_l(m, &build_assumption_blocks(m, a), cand));
        if lambda > worst.0 || lambda.is_nan() {
            worst = (lambda, k);
        }
    }
    worst
}

/// Built-in witness pool: `E = I` with `F` in `{0, +-I, +-M2^-1}`, then
/// seeded random draws `E = G G* + 0.1 I`, `F` complex Gaussian.
pub fn heuristic_candidates(m: &MpMatrices) -> Vec<Candidate> {
    let mut out = vec![
        Candidate::real(Mat2::IDENTITY, Mat2::ZERO),
        Candidate::real(Mat2::IDENTITY, Mat2::IDENTITY),
        Candidate::real(Mat2::IDENTITY, -Mat2::IDENTITY),
    ];
    if let Some(inv) = m.m2.inverse() {
        out.push(Candidate::real(Mat2::IDENTITY, inv));
        out.push(Candidate::real(Mat2::IDENTITY, -inv));
    }
    let mut normals = Normals::new(stream(HEURISTIC_SEED, 0));
    let mut draw = || {
        let mut z = [[Complex64::new(0.0, 0.0); 2]; 2];
        for row in z.iter_mut() {
            for v in row.iter_mut() {
                *v = Complex64::new(normals.sample(), normals.sample());
            }
        }
        z
    };
    for _ in 0..HEURISTIC_DRAWS {
        let g = draw();
        let mut e = cmat_mul(&g, &cmat_adjoint(&g));
        e[0][0] += 0.1;
        e[1][1] += 0.1;
        // exact Hermitian symmetry despite rounding
        e[1][0] = e[0][1].conj();
        e[0][0].im = 0.0;
        e[1][1].im = 0.0;
        out.push(Candidate { e, f: draw() });
    }
    out
}

pub fn check_mp_assumption(
    params: &MpParams,
    sol: &RiccatiSolutionMp,
    candidates: &[Candidate],
) -> Result<ConditionReport, ConditionError> {
    check_mp_assumption_with(params, sol, candidates, ExecMode::default())
}

/// Returns `Yes` with the first candidate (in list order) whose worst
/// eigenvalue is within [`ASSUMPTION_TOL`]; `Inconclusive` otherwise. An
/// empty list falls back to [`heuristic_candidates`].
pub fn check_mp_assumption_with(
    params: &MpParams,
    sol: &RiccatiSolutionMp,
    candidates: &[Candidate],
    mode: ExecMode,
) -> Result<ConditionReport, ConditionError> {
    for c in candidates {
        c.validate()?;
    }
    let m = build_mp_matrices(params);
    let pool = if candidates.is_empty() {
        heuristic_candidates(&m)
    } else {
        candidates.to_vec()
    };
    let worst = map_indexed(pool.len(), mode, |i| candidate_worst_eigenvalue(&m, sol, &pool[i]));
    let report = |idx: usize, holds: Verdict| {
        let (lambda, k) = worst[idx];
        ConditionReport {
            holds,
            min_margin: -lambda,
            witness_time: sol.grid.time(k),
            witness_matrices: (holds == Verdict::Yes).then(|| {
                let enc = |z: &CMat2| z.map(|row| row.map(|v| [v.re, v.im]));
                [enc(&pool[idx].e), enc(&pool[idx].f)]
            }),
        }
    };
    if let Some(idx) = worst.iter().position(|w| w.0 <= ASSUMPTION_TOL) {
        return Ok(report(idx, Verdict::Yes));
    }
    let best = (0..worst.len())
        .filter(|&i| !worst[i].0.is_nan())
        .min_by(|&i, &j| worst[i].0.total_cmp(&worst[j].0))
        .unwrap_or(0);
    Ok(report(best, Verdict::Inconclusive))
}
