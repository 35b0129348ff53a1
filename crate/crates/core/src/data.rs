//! Data ingestion and partialling-out of included exogenous controls.
//!
//! Everything downstream works on the partialled model
//! `y = x beta + u`, `x = Z pi + v2`, where the controls (including any
//! intercept) have already been projected out of `y`, `x` and every column
//! of `Z`.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

/// Cluster labels mapped to dense ids in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    ids: Vec<usize>,
    labels: Vec<String>,
}

impl Clusters {
    pub fn from_labels<S: AsRef<str>>(raw: &[S]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut labels = Vec::new();
        let mut ids = Vec::with_capacity(raw.len());
        for label in raw {
            let label = label.as_ref();
            let next = labels.len();
            let id = *index.entry(label).or_insert_with(|| {
                labels.push(label.to_string());
                next
            });
            ids.push(id);
        }
        Clusters { ids, labels }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Raw sample: outcome, one endogenous regressor, excluded instruments and
/// optional controls / cluster labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    y: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
    controls: Option<DMatrix<f64>>,
    clusters: Option<Clusters>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DVector<f64>, z: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if x.len() != n || z.nrows() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: y has {n} rows, x has {}, Z has {}",
                x.len(),
                z.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidInput("at least one excluded instrument is required".into()));
        }
        check_finite("y", y.as_slice())?;
        check_finite("x", x.as_slice())?;
        check_finite("Z", z.as_slice())?;
        let d = Dataset {
            y,
            x,
            z,
            controls: None,
            clusters: None,
        };
        d.check_size()?;
        let rank = linalg::column_rank(&d.z);
        if rank < d.kz() {
            return Err(Error::RankDeficient {
                what: "instrument matrix Z".into(),
                rank,
                cols: d.kz(),
            });
        }
        Ok(d)
    }

    pub fn with_controls(mut self, c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != self.n() {
            return Err(Error::InvalidInput(format!(
                "controls have {} rows, expected {}",
                c.nrows(),
                self.n()
            )));
        }
        check_finite("controls", c.as_slice())?;
        self.controls = if c.ncols() == 0 { None } else { Some(c) };
        self.check_size()?;
        Ok(self)
    }

    pub fn with_clusters(mut self, clusters: Clusters) -> Result<Self> {
        if clusters.len() != self.n() {
            return Err(Error::InvalidInput(format!(
                "cluster column has {} entries, expected {}",
                clusters.len(),
                self.n()
            )));
        }
        self.clusters = Some(clusters);
        Ok(self)
    }

    fn check_size(&self) -> Result<()> {
        let need = self.kz() + self.kc() + 2;
        if self.n() < need {
            return Err(Error::InvalidInput(format!(
                "n = {} observations but k_z + k_c + 2 = {need} are required",
                self.n()
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn kz(&self) -> usize {
        self.z.ncols()
    }

    pub fn kc(&self) -> usize {
        self.controls.as_ref().map_or(0, |c| c.ncols())
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn controls(&self) -> Option<&DMatrix<f64>> {
        self.controls.as_ref()
    }

    pub fn clusters(&self) -> Option<&Clusters> {
        self.clusters.as_ref()
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} contains non-finite values")))
    }
}

/// Residualized sample together with the first-stage and reduced-form
/// quantities every downstream computation needs.
#[derive(Debug, Clone)]
pub struct PartialledData {
    y: DVector<f64>,
    x: DVector<f64>,
    z: DMatrix<f64>,
    clusters: Option<Clusters>,
    n_controls: usize,
    zz_chol: Cholesky<f64, Dyn>,
    zx: DVector<f64>,
    zy: DVector<f64>,
    pi_hat: DVector<f64>,
    pi_y_hat: DVector<f64>,
    v1_hat: DVector<f64>,
    v2_hat: DVector<f64>,
}

impl PartialledData {
    fn build(
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        clusters: Option<Clusters>,
        n_controls: usize,
    ) -> Result<Self> {
        let kz = z.ncols();
        let rank = linalg::column_rank(&z);
        if rank < kz {
            return Err(Error::RankDeficient {
                what: "instrument matrix Z after partialling out controls".into(),
                rank,
                cols: kz,
            });
        }
        let zz = z.tr_mul(&z);
        let zz_chol = linalg::cholesky(&zz, "Z'Z")?;
        let zx = z.tr_mul(&x);
        let zy = z.tr_mul(&y);
        let pi_hat = zz_chol.solve(&zx);
        let pi_y_hat = zz_chol.solve(&zy);
        let v2_hat = &x - &z * &pi_hat;
        let v1_hat = &y - &z * &pi_y_hat;
        Ok(PartialledData {
            y,
            x,
            z,
            clusters,
            n_controls,
            zz_chol,
            zx,
            zy,
            pi_hat,
            pi_y_hat,
            v1_hat,
            v2_hat,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn kz(&self) -> usize {
        self.z.ncols()
    }

    /// Number of control columns that were projected out.
    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn clusters(&self) -> Option<&Clusters> {
        self.clusters.as_ref()
    }

    /// Cholesky factor of Z'Z.
    pub fn zz_chol(&self) -> &Cholesky<f64, Dyn> {
        &self.zz_chol
    }

    pub fn zz(&self) -> DMatrix<f64> {
        self.z.tr_mul(&self.z)
    }

    pub fn zx(&self) -> &DVector<f64> {
        &self.zx
    }

    pub fn zy(&self) -> &DVector<f64> {
        &self.zy
    }

    /// First-stage OLS coefficients.
    pub fn pi_hat(&self) -> &DVector<f64> {
        &self.pi_hat
    }

    /// Reduced-form OLS coefficients.
    pub fn pi_y_hat(&self) -> &DVector<f64> {
        &self.pi_y_hat
    }

    /// Reduced-form residuals (I - P_Z) y.
    pub fn v1_hat(&self) -> &DVector<f64> {
        &self.v1_hat
    }

    /// First-stage residuals (I - P_Z) x.
    pub fn v2_hat(&self) -> &DVector<f64> {
        &self.v2_hat
    }

    /// x' P_Z x.
    pub fn x_pz_x(&self) -> f64 {
        linalg::inv_quad_form(&self.zz_chol, &self.zx)
    }
}

/// Project the controls out of y, x and every column of Z.
///
/// Uses a QR factorization of the control matrix; controls whose singular
/// values fall below `1e-10` times the largest are reported as collinear.
pub fn partial_out(d: &Dataset) -> Result<PartialledData> {
    let Some(c) = d.controls() else {
        return PartialledData::build(d.y.clone(), d.x.clone(), d.z.clone(), d.clusters.clone(), 0);
    };
    let kc = c.ncols();
    let rank = linalg::column_rank(c);
    if rank < kc {
        return Err(Error::RankDeficient {
            what: "control matrix C".into(),
            rank,
            cols: kc,
        });
    }
    let q = c.clone().qr().q();
    let resid_vec = |v: &DVector<f64>| v - &q * q.tr_mul(v);
    let z = &d.z - &q * q.tr_mul(&d.z);
    PartialledData::build(resid_vec(&d.y), resid_vec(&d.x), z, d.clusters.clone(), kc)
}

/// Role assignment for the columns of a CSV file.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub y: String,
    pub x: String,
    pub z: Vec<String>,
    pub controls: Vec<String>,
    /// Append a column of ones to the controls.
    pub intercept: bool,
    pub cluster: Option<String>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

/// Parse CSV text with a header row. Rows in error messages are 1-based data
/// rows (the header is not counted).
pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    if schema.z.is_empty() {
        return Err(Error::InvalidInput("at least one instrument column is required".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let y_col = locate(&schema.y)?;
    let x_col = locate(&schema.x)?;
    let z_cols = schema.z.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let c_cols = schema.controls.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let cl_col = schema.cluster.as_deref().map(locate).transpose()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); z_cols.len()];
    let mut c: Vec<Vec<f64>> = vec![Vec::new(); c_cols.len()];
    let mut labels = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        let cell = |col: usize| -> Result<f64> {
            let name = headers.get(col).unwrap_or_default().to_string();
            let raw = record.get(col).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::EmptyCell { row, column: name });
            }
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: name,
                value: raw.to_string(),
            })
        };
        y.push(cell(y_col)?);
        x.push(cell(x_col)?);
        for (dst, &col) in z.iter_mut().zip(&z_cols) {
            dst.push(cell(col)?);
        }
        for (dst, &col) in c.iter_mut().zip(&c_cols) {
            dst.push(cell(col)?);
        }
        if let Some(col) = cl_col {
            let raw = record.get(col).unwrap_or("");
            if raw.is_empty() {
                return Err(Error::EmptyCell {
                    row,
                    column: headers.get(col).unwrap_or_default().to_string(),
                });
            }
            labels.push(raw.to_string());
        }
    }

    let n = y.len();
    let z = DMatrix::from_fn(n, z_cols.len(), |i, j| z[j][i]);
    let mut d = Dataset::new(DVector::from_vec(y), DVector::from_vec(x), z)?;
    let kc = c_cols.len() + usize::from(schema.intercept);
    if kc > 0 {
        let controls = DMatrix::from_fn(n, kc, |i, j| if j < c.len() { c[j][i] } else { 1.0 });
        d = d.with_controls(controls)?;
    }
    if cl_col.is_some() {
        d = d.with_clusters(Clusters::from_labels(&labels))?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn parses_simple_file() {
        let text = "y,x,z1,z2\n1,2,1,0\n2,3,0,1\n3,5,1,1\n4,4,2,1\n5,7,1,3\n";
        let schema = CsvSchema {
            y: "y".into(),
            x: "x".into(),
            z: vec!["z1".into(), "z2".into()],
            ..Default::default()
        };
        let d = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.n(), 5);
        assert_eq!(d.kz(), 2);
        assert_eq!(d.z()[(4, 1)], 3.0);
    }

    #[test]
    fn non_numeric_cell_names_row() {
        let text = "y,x,z1\n1,2,1\n2,3,0\n3,oops,1\n4,4,2\n5,7,1\n";
        let schema = CsvSchema {
            y: "y".into(),
            x: "x".into(),
            z: vec!["z1".into()],
            ..Default::default()
        };
        let err = read_csv(text.as_bytes(), &schema).unwrap_err();
        match &err {
            Error::Parse { row, column, .. } => {
                assert_eq!(*row, 3);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("row 3"));
    }

    #[test]
    fn empty_cell_is_an_error() {
        let text = "y,x,z1\n1,2,1\n2,,0\n3,4,1\n4,4,2\n";
        let schema = CsvSchema {
            y: "y".into(),
            x: "x".into(),
            z: vec!["z1".into()],
            ..Default::default()
        };
        assert!(matches!(read_csv(text.as_bytes(), &schema), Err(Error::EmptyCell { row: 2, .. })));
    }

    #[test]
    fn missing_column_is_reported() {
        let text = "y,x,z1\n1,2,1\n";
        let schema = CsvSchema {
            y: "y".into(),
            x: "x".into(),
            z: vec!["z9".into()],
            ..Default::default()
        };
        assert!(matches!(read_csv(text.as_bytes(), &schema), Err(Error::MissingColumn(c)) if c == "z9"));
    }

    #[test]
    fn duplicated_instrument_is_collinear() {
        let text = "y,x,z1\n1,2,1\n2,3,0\n3,5,1\n4,4,2\n5,7,1\n6,1,4\n";
        let schema = CsvSchema {
            y: "y".into(),
            x: "x".into(),
            z: vec!["z1".into(), "z1".into()],
            ..Default::default()
        };
        assert!(matches!(
            read_csv(text.as_bytes(), &schema),
            Err(Error::RankDeficient { rank: 1, cols: 2, .. })
        ));
    }

    #[test]
    fn instrument_collinear_with_controls_fails_after_partialling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let c = random_matrix(&mut rng, n, 2);
        let mut z = random_matrix(&mut rng, n, 2);
        let combo = c.column(0) * 2.0 - c.column(1);
        z.set_column(1, &combo);
        let d = Dataset::new(DVector::from_fn(n, |i, _| i as f64), DVector::from_fn(n, |_, _| rng.random()), z)
            .unwrap()
            .with_controls(c)
            .unwrap();
        assert!(matches!(partial_out(&d), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn intercept_demeans() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let x = DVector::from_vec(vec![2.0, 1.0, 4.0, 3.0, 6.0]);
        let z = DMatrix::from_column_slice(5, 1, &[1.0, 0.0, 2.0, 1.0, 3.0]);
        let d = Dataset::new(y, x, z).unwrap().with_controls(DMatrix::from_element(5, 1, 1.0)).unwrap();
        let pd = partial_out(&d).unwrap();
        let expected = [-2.0, -1.0, 0.0, 1.0, 2.0];
        for (a, b) in pd.y().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_point_demeaning() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DVector::from_vec(vec![1.0, 0.0, 4.0]);
        let z = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 0.0]);
        // n = 3 is one short of k_z + k_c + 2 = 4, so go through build directly.
        let q = DMatrix::from_element(3, 1, 1.0 / 3f64.sqrt());
        let resid = &y - &q * q.tr_mul(&y);
        assert!((resid - DVector::from_vec(vec![-1.0, 0.0, 1.0])).norm() < 1e-14);
        assert!(Dataset::new(y, x, z).unwrap().with_controls(DMatrix::from_element(3, 1, 1.0)).is_err());
    }

    #[test]
    fn no_controls_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let z = random_matrix(&mut rng, n, 3);
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let x = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let d = Dataset::new(y.clone(), x.clone(), z.clone()).unwrap();
        let pd = partial_out(&d).unwrap();
        assert_eq!(pd.y(), &y);
        assert_eq!(pd.x(), &x);
        assert_eq!(pd.z(), &z);
    }

    #[test]
    fn residuals_orthogonal_to_controls() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let c = random_matrix(&mut rng, n, 3);
        let z = random_matrix(&mut rng, n, 2);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let x = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
        let d = Dataset::new(y.clone(), x, z).unwrap().with_controls(c.clone()).unwrap();
        let pd = partial_out(&d).unwrap();

        // Oracle: explicit projector I - C (C'C)^{-1} C'.
        let ctc_inv = (c.transpose() * &c).try_inverse().unwrap();
        let m = DMatrix::identity(n, n) - &c * ctc_inv * c.transpose();
        assert!((&m * &y - pd.y()).norm() < 1e-10 * y.norm());
        for v in [pd.y().clone(), pd.x().clone()] {
            let ortho = c.tr_mul(&v);
            assert!(ortho.norm() < 1e-8 * c.norm() * v.norm().max(1.0));
        }
        assert!(c.tr_mul(pd.z()).norm() < 1e-8 * c.norm() * pd.z().norm());
    }

    #[test]
    fn partialling_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30;
        let c = random_matrix(&mut rng, n, 2);
        let d = Dataset::new(
            DVector::from_fn(n, |_, _| rng.random::<f64>()),
            DVector::from_fn(n, |_, _| rng.random::<f64>()),
            random_matrix(&mut rng, n, 2),
        )
        .unwrap()
        .with_controls(c.clone())
        .unwrap();
        let once = partial_out(&d).unwrap();
        let again = Dataset::new(once.y().clone(), once.x().clone(), once.z().clone())
            .unwrap()
            .with_controls(c)
            .unwrap();
        let twice = partial_out(&again).unwrap();
        assert!((once.y() - twice.y()).norm() < 1e-12);
        assert!((once.z() - twice.z()).norm() < 1e-12);
    }

    #[test]
    fn cluster_ids_follow_first_appearance() {
        let cl = Clusters::from_labels(&["b", "a", "b", "c", "a"]);
        assert_eq!(cl.ids(), &[0, 1, 0, 2, 1]);
        assert_eq!(cl.labels(), &["b", "a", "c"]);
        assert_eq!(cl.count(), 3);
    }
}
