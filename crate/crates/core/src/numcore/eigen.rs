//! Symmetric eigendecomposition.
//!
//! Householder reduction to tridiagonal form followed by the implicit QL
//! algorithm (the classic EISPACK `tred2`/`tql2` pair). Deterministic and
//! accurate to a few ulps times the matrix norm for the sizes used here
//! (a few hundred to about a thousand rows).

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Eigenvalues in ascending order and the matching orthonormal eigenvectors
/// stored as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

const SYMMETRY_TOL: f64 = 1e-10;

pub fn eigh(sym: ArrayView2<'_, f64>) -> Result<SymmetricEigen> {
    let n = sym.nrows();
    if sym.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "eigh (square matrix)",
            expected: n,
            found: sym.ncols(),
        });
    }
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigh input"));
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let scale = sym.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((sym[[i, j]] - sym[[j, i]]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }

    // Row-major working copy; the lower triangle drives the reduction.
    let mut v: Vec<f64> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            v.push(sym[[i, j]]);
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(n, &mut v, &mut d, &mut e);

    // QL works column-wise on the accumulated transform; transpose so the
    // rotated columns are contiguous.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    drop(v);
    tql2(n, &mut vt, &mut d, &mut e)?;

    let values = Array1::from(d);
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| vt[j * n + i]);
    Ok(SymmetricEigen { values, vectors })
}

fn tred2(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }

    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for &dk in d.iter().take(i) {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d.iter_mut().take(i) {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }

            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in (j + 1)..i {
                    let vkj = v[at(k, j)];
                    g += vkj * d[k];
                    e[k] += vkj * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..(n - 1) {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// `vt` holds the transform transposed: row `i` is eigenvector `i`.
fn tql2(n: usize, vt: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    const MAX_ITER: usize = 64;

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        // e[n-1] is zero, so m < n always holds here.
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_ITER {
                    return Err(Error::NumericalGuard(
                        "eigenvalue iteration did not converge".into(),
                    ));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);

                    let (lo, hi) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut lo[i * n..];
                    let row_i1 = &mut hi[..n];
                    for (a, b) in row_i.iter_mut().zip(row_i1.iter_mut()) {
                        let hb = *b;
                        *b = s * *a + c * hb;
                        *a = c * *a - s * hb;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // Selection sort, ascending.
    for i in 0..(n - 1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for col in 0..n {
                vt.swap(i * n + col, k * n + col);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    fn frobenius(a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let eig = eigh(Array2::<f64>::eye(3).view()).unwrap();
        for &v in eig.values.iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_sorted_with_axis_vectors() {
        let a = arr2(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        let eig = eigh(a.view()).unwrap();
        assert_eq!(eig.values.to_vec(), vec![1.0, 2.0, 3.0]);
        // eigenvalue 1 -> axis 1, 2 -> axis 2, 3 -> axis 0
        let axes = [1usize, 2, 0];
        for (col, &axis) in axes.iter().enumerate() {
            assert!((eig.vectors[[axis, col]].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn reconstructs_random_50() {
        let a = random_symmetric(50, 7);
        let eig = eigh(a.view()).unwrap();
        let v = &eig.vectors;
        let lambda = Array2::from_diag(&eig.values);
        let recon = v.dot(&lambda).dot(&v.t());
        let resid = frobenius(&(&recon - &a));
        assert!(resid <= 1e-8 * frobenius(&a), "residual {resid}");

        let gram = v.t().dot(v);
        let ortho = (&gram - &Array2::<f64>::eye(50))
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(ortho <= 1e-8);

        for w in eig.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        // A v_i = lambda_i v_i, column by column
        let norm = frobenius(&a);
        for i in 0..50 {
            let col = v.column(i);
            let av = a.dot(&col);
            let err = (&av - &(&col * eig.values[i]))
                .iter()
                .fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(err <= 1e-8 * norm);
        }
    }

    #[test]
    fn rejects_asymmetric_and_nan() {
        let a = arr2(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(eigh(a.view()), Err(Error::NotSymmetric(_))));
        let b = arr2(&[[1.0, f64::NAN], [f64::NAN, 1.0]]);
        assert!(matches!(eigh(b.view()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn handles_degenerate_and_tiny() {
        let eig = eigh(arr2(&[[5.0]]).view()).unwrap();
        assert_eq!(eig.values[0], 5.0);
        let zero = Array2::<f64>::zeros((4, 4));
        let eig = eigh(zero.view()).unwrap();
        assert!(eig.values.iter().all(|&v| v == 0.0));
    }
}
