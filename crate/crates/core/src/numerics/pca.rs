use super::linalg::symmetric_eigen;
use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Principal axes of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Matrix,
    /// Non-increasing, one per component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn num_components(&self) -> usize {
        self.components.rows()
    }

    /// `componentsᵀ·z + mean`.
    pub fn inverse_transform_row(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (k, &zk) in z.iter().enumerate() {
            for (xi, c) in x.iter_mut().zip(self.components.row(k)) {
                *xi += zk * c;
            }
        }
        x
    }
}

pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::ShapeMismatch(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidConfig(format!(
            "PCA with k={k} on {n}x{d} data"
        )));
    }
    let cov = x.covariance();
    let total = cov.trace();
    if total < 1e-12 {
        return Err(Error::DegenerateData(total));
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(k, d);
    for r in 0..k {
        let row = vectors.row(r);
        let pivot = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1.abs() {
                    (i, v)
                } else {
                    best
                }
            });
        let sign = if pivot.1 < 0.0 { -1.0 } else { 1.0 };
        for (dst, src) in components.row_mut(r).iter_mut().zip(row) {
            *dst = sign * src;
        }
    }
    let explained_variance = values[..k].iter().map(|v| v.max(0.0)).collect();
    Ok(PcaModel {
        mean: x.column_means(),
        components,
        explained_variance,
    })
}

pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    let d = model.mean.len();
    if x.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "PCA model expects {d} columns, got {}",
            x.cols()
        )));
    }
    let k = model.num_components();
    let mut out = Matrix::zeros(x.rows(), k);
    let mut centered = vec![0.0; d];
    for (i, row) in x.row_iter().enumerate() {
        for j in 0..d {
            centered[j] = row[j] - model.mean[j];
        }
        for c in 0..k {
            out[(i, c)] = dot(model.components.row(c), &centered);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_data() -> Matrix {
        Matrix::from_rows(&[
            [-2.0, -4.0],
            [-1.0, -2.0],
            [0.0, 0.0],
            [1.0, 2.0],
            [2.0, 4.0],
        ])
        .unwrap()
    }

    #[test]
    fn line_first_component() {
        let m = pca_fit(&line_data(), 2).unwrap();
        let s5 = 5f64.sqrt();
        assert!((m.components[(0, 0)] - 1.0 / s5).abs() < 1e-10);
        assert!((m.components[(0, 1)] - 2.0 / s5).abs() < 1e-10);
        assert!(m.explained_variance[1].abs() < 1e-10);
        // variance along (1,2)/√5: projections are -2√5..2√5, sample var = 12.5
        assert!((m.explained_variance[0] - 12.5).abs() < 1e-10);
    }

    #[test]
    fn line_projection() {
        let m = pca_fit(&line_data(), 1).unwrap();
        let z = pca_transform(&m, &Matrix::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert!((z[(0, 0)] - 5f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn mean_maps_to_zero() {
        let x = Matrix::from_rows(&[
            [1.0, 5.0, 2.0],
            [3.0, 1.0, 0.0],
            [0.0, 2.0, 7.0],
            [4.0, 4.0, 1.0],
        ])
        .unwrap();
        let m = pca_fit(&x, 2).unwrap();
        let z = pca_transform(
            &m,
            &Matrix::from_rows(std::slice::from_ref(&m.mean)).unwrap(),
        )
        .unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_is_degenerate() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(pca_fit(&x, 1), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn shape_mismatch() {
        let m = pca_fit(&line_data(), 1).unwrap();
        let bad = Matrix::zeros(1, 3);
        assert!(matches!(
            pca_transform(&m, &bad),
            Err(Error::ShapeMismatch(_))
        ));
    }

    fn data_strategy() -> impl Strategy<Value = Matrix> {
        (2usize..5, 6usize..20).prop_flat_map(|(d, n)| {
            proptest::collection::vec(-5.0f64..5.0, n * d)
                .prop_map(move |v| Matrix::from_vec(n, d, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn components_orthonormal_and_decorrelating(x in data_strategy()) {
            let d = x.cols();
            let m = pca_fit(&x, d).unwrap();
            let gram = m.components.matmul(&m.components.transpose()).unwrap();
            prop_assert!(gram.max_abs_diff(&Matrix::identity(d)) < 1e-8);
            for w in m.explained_variance.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let z = pca_transform(&m, &x).unwrap();
            let cz = z.covariance();
            for i in 0..d {
                for j in 0..d {
                    let expect = if i == j { m.explained_variance[i] } else { 0.0 };
                    prop_assert!((cz[(i, j)] - expect).abs() < 1e-8);
                }
            }
            // full-rank reconstruction
            for (i, row) in z.row_iter().enumerate() {
                let back = m.inverse_transform_row(row);
                for (a, b) in back.iter().zip(x.row(i)) {
                    prop_assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }
}
