//! Minimal 5-point essential matrix solver.
//!
//! Pipeline: the 4-dimensional nullspace of the 5×9 epipolar constraint
//! matrix parameterizes `E = x·E₁ + y·E₂ + z·E₃ + E₄`; the determinant and
//! trace constraints give ten cubic polynomials in `(x, y, z)`; Gauss-Jordan
//! elimination reduces them to a 3×3 system with polynomial-in-`z` entries
//! whose determinant is a degree-10 polynomial; its real roots (found through
//! the companion matrix) are back-substituted to recover all essential
//! matrices consistent with the five correspondences.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::roots::{eval_poly, real_roots};
use super::{EssentialMatrix, GeometryError, NormalizedPoint2};

/// Exponent triples of the 20 monomials of degree ≤ 3 in `(x, y, z)`.
///
/// The first ten (degree ≥ 2 in `{x, y}`) are eliminated by Gauss-Jordan;
/// the last ten are linear in `{x, y}` with coefficients polynomial in `z`.
const MONOMIALS: [(u8, u8, u8); 20] = [
    (3, 0, 0), // x³
    (2, 1, 0), // x²y
    (1, 2, 0), // xy²
    (0, 3, 0), // y³
    (2, 0, 1), // x²z
    (1, 1, 1), // xyz
    (0, 2, 1), // y²z
    (2, 0, 0), // x²
    (1, 1, 0), // xy
    (0, 2, 0), // y²
    (1, 0, 2), // xz²
    (1, 0, 1), // xz
    (1, 0, 0), // x
    (0, 1, 2), // yz²
    (0, 1, 1), // yz
    (0, 1, 0), // y
    (0, 0, 3), // z³
    (0, 0, 2), // z²
    (0, 0, 1), // z
    (0, 0, 0), // 1
];

fn monomial_index(dx: u8, dy: u8, dz: u8) -> usize {
    MONOMIALS
        .iter()
        .position(|&m| m == (dx, dy, dz))
        .expect("exponents within degree 3")
}

/// Dense trivariate polynomial of total degree ≤ 3.
#[derive(Clone, Copy)]
struct Poly3 {
    c: [f64; 20],
}

impl Poly3 {
    fn zero() -> Self {
        Self { c: [0.0; 20] }
    }

    /// Degree-1 polynomial `a·x + b·y + c·z + d`.
    fn linear(a: f64, b: f64, c: f64, d: f64) -> Self {
        let mut p = Self::zero();
        p.c[monomial_index(1, 0, 0)] = a;
        p.c[monomial_index(0, 1, 0)] = b;
        p.c[monomial_index(0, 0, 1)] = c;
        p.c[monomial_index(0, 0, 0)] = d;
        p
    }

    fn add(&self, other: &Self) -> Self {
        let mut out = *self;
        for k in 0..20 {
            out.c[k] += other.c[k];
        }
        out
    }

    fn sub(&self, other: &Self) -> Self {
        let mut out = *self;
        for k in 0..20 {
            out.c[k] -= other.c[k];
        }
        out
    }

    fn scale(&self, s: f64) -> Self {
        let mut out = *self;
        for k in 0..20 {
            out.c[k] *= s;
        }
        out
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (i, &a) in self.c.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let (ix, iy, iz) = MONOMIALS[i];
            for (j, &b) in other.c.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let (jx, jy, jz) = MONOMIALS[j];
                let (dx, dy, dz) = (ix + jx, iy + jy, iz + jz);
                debug_assert!(dx + dy + dz <= 3, "product exceeds degree 3");
                out.c[monomial_index(dx, dy, dz)] += a * b;
            }
        }
        out
    }
}

/// 3×3 matrix with `Poly3` entries, used for `E(x, y, z)`.
type PolyMat = [[Poly3; 3]; 3];

fn poly_mat_from_basis(basis: &[Matrix3<f64>; 4]) -> PolyMat {
    let mut out = [[Poly3::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = Poly3::linear(
                basis[0][(i, j)],
                basis[1][(i, j)],
                basis[2][(i, j)],
                basis[3][(i, j)],
            );
        }
    }
    out
}

fn det3(m: &PolyMat) -> Poly3 {
    let a = m[1][1].mul(&m[2][2]).sub(&m[1][2].mul(&m[2][1]));
    let b = m[1][0].mul(&m[2][2]).sub(&m[1][2].mul(&m[2][0]));
    let c = m[1][0].mul(&m[2][1]).sub(&m[1][1].mul(&m[2][0]));
    m[0][0].mul(&a).sub(&m[0][1].mul(&b)).add(&m[0][2].mul(&c))
}

/// The nine entries of `2·E·Eᵀ·E − trace(E·Eᵀ)·E`.
fn trace_constraints(e: &PolyMat) -> Vec<Poly3> {
    // G = E·Eᵀ (degree 2 entries).
    let mut g = [[Poly3::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Poly3::zero();
            for k in 0..3 {
                acc = acc.add(&e[i][k].mul(&e[j][k]));
            }
            g[i][j] = acc;
        }
    }
    let trace = g[0][0].add(&g[1][1]).add(&g[2][2]);
    let mut out = Vec::with_capacity(9);
    for i in 0..3 {
        for j in 0..3 {
            let mut acc = Poly3::zero();
            for k in 0..3 {
                acc = acc.add(&g[i][k].mul(&e[k][j]));
            }
            out.push(acc.scale(2.0).sub(&trace.mul(&e[i][j])));
        }
    }
    out
}

/// Nullspace basis (four 3×3 matrices) of the 5×9 epipolar constraint matrix,
/// through the eigen-decomposition of `QᵀQ`.
fn constraint_nullspace(
    corr: &[(NormalizedPoint2, NormalizedPoint2); 5],
) -> Result<[Matrix3<f64>; 4], GeometryError> {
    let mut q = DMatrix::<f64>::zeros(5, 9);
    for (r, (x, xp)) in corr.iter().enumerate() {
        let (u, v) = (x.u, x.v);
        let (up, vp) = (xp.u, xp.v);
        let row = [up * u, up * v, up, vp * u, vp * v, vp, u, v, 1.0];
        for (c, val) in row.iter().enumerate() {
            q[(r, c)] = *val;
        }
    }
    let qtq = q.transpose() * &q;
    let eig = qtq.symmetric_eigen();
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap()
    });
    let lambda_max = eig.eigenvalues[order[8]].max(0.0);
    // Rank of Q must be 5: the fifth-largest eigenvalue of QᵀQ well above the
    // noise floor. Eigenvalues are squared singular values, so this matches a
    // relative singular-value tolerance of 1e-8.
    if lambda_max <= 0.0 || eig.eigenvalues[order[4]] <= 1e-16 * lambda_max {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let mut basis = [Matrix3::zeros(); 4];
    for (b, &col) in order[..4].iter().enumerate() {
        let v = eig.eigenvectors.column(col);
        basis[b] = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    }
    Ok(basis)
}

/// Gauss-Jordan elimination of the first ten columns with partial pivoting.
fn reduce_constraints(m: &mut [[f64; 20]; 10]) -> Result<(), GeometryError> {
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale <= 0.0 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    for col in 0..10 {
        let pivot_row = (col..10)
            .max_by(|&a, &b| m[a][col].abs().partial_cmp(&m[b][col].abs()).unwrap())
            .unwrap();
        if m[pivot_row][col].abs() < 1e-12 * scale {
            return Err(GeometryError::DegenerateConfiguration);
        }
        m.swap(col, pivot_row);
        let pivot = m[col][col];
        for v in m[col].iter_mut() {
            *v /= pivot;
        }
        for row in 0..10 {
            if row == col {
                continue;
            }
            let factor = m[row][col];
            if factor == 0.0 {
                continue;
            }
            for k in 0..20 {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    Ok(())
}

/// Coefficient triple of one reduced row: the polynomials (ascending in `z`)
/// multiplying `x`, multiplying `y`, and the constant part.
fn row_polys(row: &[f64; 20]) -> ([f64; 3], [f64; 3], [f64; 4]) {
    // Columns 10..20 are ordered xz², xz, x, yz², yz, y, z³, z², z, 1.
    let p = [row[12], row[11], row[10]];
    let q = [row[15], row[14], row[13]];
    let c = [row[19], row[18], row[17], row[16]];
    (p, q, c)
}

/// `a(z) − z·b(z)` with ascending coefficients.
fn shift_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let len = (b.len() + 1).max(a.len());
    let mut out = vec![0.0; len];
    for (k, &v) in a.iter().enumerate() {
        out[k] += v;
    }
    for (k, &v) in b.iter().enumerate() {
        out[k + 1] -= v;
    }
    out
}

fn mul_uni(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn sub_uni(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (k, &v) in a.iter().enumerate() {
        out[k] += v;
    }
    for (k, &v) in b.iter().enumerate() {
        out[k] -= v;
    }
    out
}

/// All essential matrices consistent with five calibrated correspondences.
///
/// Returns every real solution of the underlying degree-10 system, projected
/// onto the essential manifold. Candidates whose algebraic residual over the
/// five inputs exceeds 1e-6 are discarded as numerical artifacts.
pub fn five_point_solve(
    corr: &[(NormalizedPoint2, NormalizedPoint2); 5],
) -> Result<Vec<EssentialMatrix>, GeometryError> {
    let basis = constraint_nullspace(corr)?;
    let e_poly = poly_mat_from_basis(&basis);

    let mut constraints = [[0.0f64; 20]; 10];
    constraints[0] = det3(&e_poly).c;
    for (r, poly) in trace_constraints(&e_poly).iter().enumerate() {
        constraints[r + 1] = poly.c;
    }
    reduce_constraints(&mut constraints)?;

    // Rows indexed by their leading monomial after reduction:
    // 4: x²z, 7: x², 6: y²z, 9: y², 5: xyz, 8: xy. Subtracting z·(degree-2
    // row) from the matching degree-3 row cancels the eliminated monomials
    // and leaves three equations linear in (x, y) with z-polynomial
    // coefficients.
    let mut b_rows = Vec::with_capacity(3);
    for (hi, lo) in [(4usize, 7usize), (6, 9), (5, 8)] {
        let (p_hi, q_hi, c_hi) = row_polys(&constraints[hi]);
        let (p_lo, q_lo, c_lo) = row_polys(&constraints[lo]);
        b_rows.push([
            shift_sub(&p_hi, &p_lo),
            shift_sub(&q_hi, &q_lo),
            shift_sub(&c_hi, &c_lo),
        ]);
    }

    // det of the 3×3 polynomial matrix: degree ≤ 10 in z.
    let minor = |r0: usize, r1: usize, c0: usize, c1: usize| {
        sub_uni(
            &mul_uni(&b_rows[r0][c0], &b_rows[r1][c1]),
            &mul_uni(&b_rows[r0][c1], &b_rows[r1][c0]),
        )
    };
    let det = sub_uni(
        &mul_uni(&b_rows[0][0], &minor(1, 2, 1, 2)),
        &sub_uni(
            &mul_uni(&b_rows[0][1], &minor(1, 2, 0, 2)),
            &mul_uni(&b_rows[0][2], &minor(1, 2, 0, 1)),
        ),
    );

    let roots = real_roots(&det).ok_or(GeometryError::DegenerateConfiguration)?;
    if roots.is_empty() {
        return Err(GeometryError::NoRealSolution);
    }

    let mut solutions = Vec::new();
    for z in roots {
        // Evaluate B(z) and take the null vector (x, y, 1) from the most
        // stable pair of rows.
        let rows: Vec<Vector3<f64>> = b_rows
            .iter()
            .map(|r| Vector3::new(eval_poly(&r[0], z), eval_poly(&r[1], z), eval_poly(&r[2], z)))
            .collect();
        let candidates = [
            rows[0].cross(&rows[1]),
            rows[0].cross(&rows[2]),
            rows[1].cross(&rows[2]),
        ];
        let null = candidates
            .iter()
            .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
            .unwrap();
        if null.z.abs() < 1e-12 * null.norm() {
            continue; // solution at infinity in the chosen chart
        }
        let x = null.x / null.z;
        let y = null.y / null.z;
        let raw = basis[0] * x + basis[1] * y + basis[2] * z + basis[3];
        let Ok(e) = EssentialMatrix::from_matrix(&raw) else {
            continue;
        };
        let residual = corr
            .iter()
            .map(|(a, b)| (b.homogeneous().dot(&(e.matrix() * a.homogeneous()))).abs())
            .fold(0.0f64, f64::max);
        if residual < 1e-6 {
            solutions.push(e);
        }
    }
    if solutions.is_empty() {
        return Err(GeometryError::NoRealSolution);
    }
    Ok(solutions)
}
