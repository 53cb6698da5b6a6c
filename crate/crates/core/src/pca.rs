use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Principal axes of a point cloud, sorted by decreasing variance.
pub(crate) struct Pca {
    pub mean: DVector<f64>,
    /// Sample variances (n - 1 denominator), descending.
    pub variances: Vec<f64>,
    /// Unit principal directions, one column per component, same order as `variances`.
    pub components: DMatrix<f64>,
}

impl Pca {
    /// `rows` are observations. Requires at least two rows of equal, nonzero length.
    pub fn fit(rows: &[Vec<f64>]) -> Pca {
        let n = rows.len();
        let dim = rows[0].len();
        let mut mean = DVector::zeros(dim);
        for r in rows {
            mean += DVector::from_column_slice(r);
        }
        mean /= n as f64;

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        for r in rows {
            let d = DVector::from_column_slice(r) - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let variances = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let mut components = DMatrix::zeros(dim, dim);
        for (k, &i) in order.iter().enumerate() {
            components.set_column(k, &eig.eigenvectors.column(i));
        }
        Pca { mean, variances, components }
    }
}
