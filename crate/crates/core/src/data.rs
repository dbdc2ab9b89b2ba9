//! Domain types shared by design, estimation and simulation.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("block labels must cover 0..{num_blocks} with no empty block (block {block} is empty)")]
    EmptyBlock { block: usize, num_blocks: usize },
    #[error("block {block} has {treated} treated units but only {size} units")]
    TooManyTreated { block: usize, treated: usize, size: usize },
    #[error("expected {expected} {what}, got {found}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("assignment values must be 0 or 1, found {value} at unit {unit}")]
    NonBinaryAssignment { unit: usize, value: u8 },
    #[error("block {block} arm {arm} has {count} units; at least 2 are required")]
    ArmTooSmall { block: usize, arm: u8, count: usize },
    #[error("{0} is required but absent")]
    Missing(&'static str),
    #[error("data failed validation: {0}")]
    Invalid(String),
}

/// Block membership with per-block treated counts.
///
/// Blocks are indexed `0..M` internally; they print as `1..M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStructure {
    block_of: Vec<usize>,
    sizes: Vec<usize>,
    treated: Vec<usize>,
    #[serde(skip)]
    members: Vec<Vec<usize>>,
}

impl BlockStructure {
    pub fn new(block_of: Vec<usize>, treated: Vec<usize>) -> Result<Self, DataError> {
        let num_blocks = treated.len();
        let mut sizes = vec![0usize; num_blocks];
        let mut members = vec![Vec::new(); num_blocks];
        for (i, &b) in block_of.iter().enumerate() {
            if b >= num_blocks {
                return Err(DataError::Length {
                    what: "treated counts (one per block)",
                    expected: b + 1,
                    found: num_blocks,
                });
            }
            sizes[b] += 1;
            members[b].push(i);
        }
        for m in 0..num_blocks {
            if sizes[m] == 0 {
                return Err(DataError::EmptyBlock { block: m + 1, num_blocks });
            }
            if treated[m] > sizes[m] {
                return Err(DataError::TooManyTreated { block: m + 1, treated: treated[m], size: sizes[m] });
            }
        }
        Ok(Self { block_of, sizes, treated, members })
    }

    /// One block holding all `n` units, `n1` of them treated.
    pub fn single(n: usize, n1: usize) -> Result<Self, DataError> {
        Self::new(vec![0; n], vec![n1])
    }

    /// Treated counts read off an observed assignment.
    pub fn from_assignment(block_of: Vec<usize>, z: &[u8]) -> Result<Self, DataError> {
        if z.len() != block_of.len() {
            return Err(DataError::Length { what: "assignments", expected: block_of.len(), found: z.len() });
        }
        let num_blocks = block_of.iter().max().map_or(0, |m| m + 1);
        let mut treated = vec![0usize; num_blocks];
        for (unit, (&b, &zi)) in block_of.iter().zip(z).enumerate() {
            match zi {
                0 => {}
                1 => treated[b] += 1,
                value => return Err(DataError::NonBinaryAssignment { unit, value }),
            }
        }
        Self::new(block_of, treated)
    }

    /// Per-block treated counts `round(e_m * n_m)`, clamped to `[2, n_m - 2]`
    /// when the block is large enough to allow it.
    pub fn with_propensities(block_of: Vec<usize>, propensities: &[f64]) -> Result<Self, DataError> {
        let mut sizes = vec![0usize; propensities.len()];
        for &b in &block_of {
            if b < sizes.len() {
                sizes[b] += 1;
            }
        }
        let treated = sizes
            .iter()
            .zip(propensities)
            .map(|(&size, &e)| {
                let t = (e * size as f64).round() as usize;
                if size >= 4 {
                    t.clamp(2, size - 2)
                } else {
                    t.min(size)
                }
            })
            .collect();
        Self::new(block_of, treated)
    }

    pub fn n(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn block_of(&self, unit: usize) -> usize {
        self.block_of[unit]
    }

    pub fn labels(&self) -> &[usize] {
        &self.block_of
    }

    pub fn size(&self, m: usize) -> usize {
        self.sizes[m]
    }

    pub fn treated(&self, m: usize) -> usize {
        self.treated[m]
    }

    pub fn control(&self, m: usize) -> usize {
        self.sizes[m] - self.treated[m]
    }

    /// Units in arm `z` of block `m` under the design counts.
    pub fn arm_count(&self, m: usize, z: u8) -> usize {
        if z == 1 {
            self.treated(m)
        } else {
            self.control(m)
        }
    }

    pub fn total_treated(&self) -> usize {
        self.treated.iter().sum()
    }

    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    /// π_m = n_m / n.
    pub fn weight(&self, m: usize) -> f64 {
        self.sizes[m] as f64 / self.n() as f64
    }

    /// e_m = n_m1 / n_m.
    pub fn propensity(&self, m: usize) -> f64 {
        self.treated[m] as f64 / self.sizes[m] as f64
    }

    /// Propensity of arm `z`: e_m for z = 1, 1 - e_m for z = 0.
    pub fn arm_propensity(&self, m: usize, z: u8) -> f64 {
        let e = self.propensity(m);
        if z == 1 {
            e
        } else {
            1.0 - e
        }
    }

    /// Blocks whose treated count violates `2 <= n_m1 <= n_m - 2`.
    pub fn count_violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for m in 0..self.num_blocks() {
            if self.treated(m) < 2 {
                out.push(Violation::TooFewUnits { block: m + 1, arm: 1, count: self.treated(m) });
            }
            if self.control(m) < 2 {
                out.push(Violation::TooFewUnits { block: m + 1, arm: 0, count: self.control(m) });
            }
        }
        out
    }

    /// Rebuilds the member lists after deserialization.
    pub fn reindexed(self) -> Result<Self, DataError> {
        Self::new(self.block_of, self.treated)
    }
}

/// Covariates, blocks, assignment and outcomes of one experiment.
///
/// `z` and `y` are absent at design time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub x: Array2<f64>,
    pub x_names: Vec<String>,
    pub w: Array2<f64>,
    pub w_names: Vec<String>,
    pub block_of: Vec<usize>,
    pub block_names: Vec<String>,
    pub z: Option<Vec<u8>>,
    pub y: Option<Vec<f64>>,
}

impl ExperimentData {
    pub fn n(&self) -> usize {
        self.block_of.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_of.iter().max().map_or(0, |m| m + 1)
    }

    /// Block structure implied by the observed assignment.
    pub fn blocks(&self) -> Result<BlockStructure, DataError> {
        let z = self.z.as_deref().ok_or(DataError::Missing("assignment"))?;
        BlockStructure::from_assignment(self.block_of.clone(), z)
    }

    /// Copy with the listed covariate and design columns removed.
    pub fn without_columns(&self, drop_x: &[usize], drop_w: &[usize]) -> ExperimentData {
        let keep = |names: &[String], drop: &[usize]| -> Vec<usize> {
            (0..names.len()).filter(|j| !drop.contains(j)).collect()
        };
        let kx = keep(&self.x_names, drop_x);
        let kw = keep(&self.w_names, drop_w);
        ExperimentData {
            x: self.x.select(Axis(1), &kx),
            x_names: kx.iter().map(|&j| self.x_names[j].clone()).collect(),
            w: self.w.select(Axis(1), &kw),
            w_names: kw.iter().map(|&j| self.w_names[j].clone()).collect(),
            ..self.clone()
        }
    }

    /// Applies the drop list of a validation report.
    pub fn drop_block_dependent(&self, report: &ValidationReport) -> ExperimentData {
        self.without_columns(&report.drop_x, &report.drop_w)
    }
}

/// Fixed potential outcomes of a finite population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomeTable {
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub tau: f64,
}

impl PotentialOutcomeTable {
    pub fn new(y1: Vec<f64>, y0: Vec<f64>) -> Self {
        assert_eq!(y1.len(), y0.len(), "potential outcome vectors differ in length");
        let tau = y1.iter().zip(&y0).map(|(a, b)| a - b).sum::<f64>() / y1.len() as f64;
        Self { y1, y0, tau }
    }

    pub fn n(&self) -> usize {
        self.y1.len()
    }

    /// Y_i = Z_i Y_i(1) + (1 - Z_i) Y_i(0).
    pub fn observe(&self, z: &[u8]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(i, &zi)| if zi == 1 { self.y1[i] } else { self.y0[i] })
            .collect()
    }

    /// Observe into an existing buffer.
    pub fn observe_into(&self, z: &[u8], out: &mut Vec<f64>) {
        out.clear();
        out.extend(z.iter().enumerate().map(|(i, &zi)| if zi == 1 { self.y1[i] } else { self.y0[i] }));
    }
}

/// Which matrix a column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matrix {
    Covariates,
    Design,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Fewer than two units in one arm of a block (blocks print 1-based).
    TooFewUnits { block: usize, arm: u8, count: usize },
    /// Column constant within every block, hence collinear with the block dummies.
    BlockDependentColumn { matrix: Matrix, column: usize, name: String },
    NonFinite { matrix: Matrix, row: usize, column: usize },
    NonFiniteOutcome { row: usize },
    NonBinaryAssignment { row: usize, value: u8 },
    DimensionMismatch { what: String, expected: usize, found: usize },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TooFewUnits { block, arm, count } => {
                let which = if *arm == 1 { "treated" } else { "control" };
                write!(f, "fewer than 2 {which} units in block {block} (found {count})")
            }
            Violation::BlockDependentColumn { matrix, name, .. } => {
                write!(f, "{matrix:?} column '{name}' is constant within every block; drop it")
            }
            Violation::NonFinite { matrix, row, column } => {
                write!(f, "{matrix:?} entry at row {row}, column {column} is not finite")
            }
            Violation::NonFiniteOutcome { row } => write!(f, "outcome at row {row} is not finite"),
            Violation::NonBinaryAssignment { row, value } => {
                write!(f, "assignment at row {row} is {value}, expected 0 or 1")
            }
            Violation::DimensionMismatch { what, expected, found } => {
                write!(f, "{what}: expected {expected}, found {found}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Covariate columns recommended for removal.
    pub drop_x: Vec<usize>,
    /// Design-covariate columns recommended for removal.
    pub drop_w: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations other than droppable block-dependent columns.
    pub fn blocking(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| !matches!(v, Violation::BlockDependentColumn { .. }))
    }
}

/// Relative within-block variance floor for block dependence.
const BLOCK_DEPENDENCE_TOL: f64 = 1e-12;

/// True if column `j` has negligible variance inside every block.
pub fn is_block_dependent(column: ndarray::ArrayView1<'_, f64>, block_of: &[usize], num_blocks: usize) -> bool {
    let scale = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return true;
    }
    let floor = BLOCK_DEPENDENCE_TOL * scale * scale;
    let mut sums = vec![0.0; num_blocks];
    let mut counts = vec![0usize; num_blocks];
    for (&v, &b) in column.iter().zip(block_of) {
        sums[b] += v;
        counts[b] += 1;
    }
    let mut ss = vec![0.0; num_blocks];
    for (&v, &b) in column.iter().zip(block_of) {
        let d = v - sums[b] / counts[b] as f64;
        ss[b] += d * d;
    }
    (0..num_blocks).all(|m| counts[m] < 2 || ss[m] / ((counts[m] - 1) as f64) < floor)
}

fn scan_matrix(
    mat: ArrayView2<'_, f64>,
    names: &[String],
    which: Matrix,
    block_of: &[usize],
    num_blocks: usize,
    report: &mut ValidationReport,
) {
    let n = block_of.len();
    if mat.nrows() != n {
        report.violations.push(Violation::DimensionMismatch {
            what: format!("{which:?} rows"),
            expected: n,
            found: mat.nrows(),
        });
        return;
    }
    if names.len() != mat.ncols() {
        report.violations.push(Violation::DimensionMismatch {
            what: format!("{which:?} column names"),
            expected: mat.ncols(),
            found: names.len(),
        });
    }
    let mut finite_cols = vec![true; mat.ncols()];
    for ((row, column), v) in mat.indexed_iter() {
        if !v.is_finite() {
            report.violations.push(Violation::NonFinite { matrix: which, row, column });
            finite_cols[column] = false;
        }
    }
    for (j, col) in mat.axis_iter(Axis(1)).enumerate() {
        if finite_cols[j] && is_block_dependent(col, block_of, num_blocks) {
            report.violations.push(Violation::BlockDependentColumn {
                matrix: which,
                column: j,
                name: names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
            });
            match which {
                Matrix::Covariates => report.drop_x.push(j),
                Matrix::Design => report.drop_w.push(j),
            }
        }
    }
}

/// Checks the structural assumptions of the estimators; never fails.
pub fn validate(data: &ExperimentData) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = data.n();
    let num_blocks = data.num_blocks();

    scan_matrix(data.x.view(), &data.x_names, Matrix::Covariates, &data.block_of, num_blocks, &mut report);
    scan_matrix(data.w.view(), &data.w_names, Matrix::Design, &data.block_of, num_blocks, &mut report);

    if let Some(y) = &data.y {
        if y.len() != n {
            report.violations.push(Violation::DimensionMismatch {
                what: "outcomes".into(),
                expected: n,
                found: y.len(),
            });
        } else {
            for (row, v) in y.iter().enumerate() {
                if !v.is_finite() {
                    report.violations.push(Violation::NonFiniteOutcome { row });
                }
            }
        }
    }

    if let Some(z) = &data.z {
        if z.len() != n {
            report.violations.push(Violation::DimensionMismatch {
                what: "assignments".into(),
                expected: n,
                found: z.len(),
            });
        } else {
            let mut ok = true;
            for (row, &value) in z.iter().enumerate() {
                if value > 1 {
                    report.violations.push(Violation::NonBinaryAssignment { row, value });
                    ok = false;
                }
            }
            if ok {
                match BlockStructure::from_assignment(data.block_of.clone(), z) {
                    Ok(blocks) => report.violations.extend(blocks.count_violations()),
                    Err(e) => report.violations.push(Violation::DimensionMismatch {
                        what: e.to_string(),
                        expected: 0,
                        found: 0,
                    }),
                }
            }
        }
    }
    report
}

/// Borrowed view of an analyzed experiment: covariates, blocks implied by
/// the assignment, and observed outcomes, with block-arm membership
/// precomputed.
#[derive(Debug, Clone)]
pub struct Observed<'a> {
    pub x: ArrayView2<'a, f64>,
    pub blocks: &'a BlockStructure,
    pub z: &'a [u8],
    pub y: &'a [f64],
    groups: Vec<[Vec<usize>; 2]>,
}

impl<'a> Observed<'a> {
    pub fn new(
        x: ArrayView2<'a, f64>,
        blocks: &'a BlockStructure,
        z: &'a [u8],
        y: &'a [f64],
    ) -> Result<Self, DataError> {
        let n = blocks.n();
        for (what, found) in [("covariate rows", x.nrows()), ("assignments", z.len()), ("outcomes", y.len())] {
            if found != n {
                return Err(DataError::Length { what, expected: n, found });
            }
        }
        let mut groups = vec![[Vec::new(), Vec::new()]; blocks.num_blocks()];
        for (unit, &zi) in z.iter().enumerate() {
            if zi > 1 {
                return Err(DataError::NonBinaryAssignment { unit, value: zi });
            }
            groups[blocks.block_of(unit)][zi as usize].push(unit);
        }
        for (m, g) in groups.iter().enumerate() {
            for arm in [0u8, 1] {
                let count = g[arm as usize].len();
                if count != blocks.arm_count(m, arm) {
                    return Err(DataError::Invalid(format!(
                        "block {} arm {arm}: assignment has {count} units, block structure expects {}",
                        m + 1,
                        blocks.arm_count(m, arm)
                    )));
                }
                if count < 2 {
                    return Err(DataError::ArmTooSmall { block: m + 1, arm, count });
                }
            }
        }
        Ok(Self { x, blocks, z, y, groups })
    }

    pub fn n(&self) -> usize {
        self.blocks.n()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Units of block `m` in arm `z`.
    pub fn group(&self, m: usize, z: u8) -> &[usize] {
        &self.groups[m][z as usize]
    }

    pub fn arm_units(&self, z: u8) -> Vec<usize> {
        let mut out: Vec<usize> = self.groups.iter().flat_map(|g| g[z as usize].iter().copied()).collect();
        out.sort_unstable();
        out
    }

    pub fn arm_size(&self, z: u8) -> usize {
        self.groups.iter().map(|g| g[z as usize].len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn two_blocks_of_four() -> ExperimentData {
        let x = Array2::from_shape_vec(
            (8, 2),
            vec![1.0, 0.5, 2.0, -0.1, 0.3, 2.2, 4.0, 1.0, -1.0, 0.0, 2.5, 3.0, 0.7, -2.0, 1.1, 0.4],
        )
        .unwrap();
        ExperimentData {
            x,
            x_names: vec!["x1".into(), "x2".into()],
            w: Array2::zeros((8, 0)),
            w_names: vec![],
            block_of: vec![0, 0, 0, 0, 1, 1, 1, 1],
            block_names: vec!["a".into(), "b".into()],
            z: Some(vec![1, 1, 0, 0, 0, 1, 0, 1]),
            y: Some(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]),
        }
    }

    #[test]
    fn clean_data_validates() {
        let report = validate(&two_blocks_of_four());
        assert!(report.is_valid(), "{:?}", report);
    }

    #[test]
    fn block_indicator_column_is_flagged() {
        let mut data = two_blocks_of_four();
        let indicator: Vec<f64> = data.block_of.iter().map(|&b| if b == 0 { 1.0 } else { 0.0 }).collect();
        let mut x = Array2::zeros((8, 3));
        x.slice_mut(ndarray::s![.., 0..2]).assign(&data.x);
        x.column_mut(2).assign(&ndarray::Array1::from(indicator));
        data.x = x;
        data.x_names.push("block_a".into());
        let report = validate(&data);
        assert_eq!(report.drop_x, vec![2]);
        assert!(matches!(
            &report.violations[..],
            [Violation::BlockDependentColumn { column: 2, name, .. }] if name == "block_a"
        ));
        let cleaned = data.drop_block_dependent(&report);
        assert_eq!(cleaned.p(), 2);
        assert!(validate(&cleaned).is_valid());
    }

    #[test]
    fn single_treated_unit_is_reported() {
        let mut data = two_blocks_of_four();
        data.z = Some(vec![1, 0, 0, 0, 0, 1, 0, 1]);
        let report = validate(&data);
        assert!(report
            .violations
            .contains(&Violation::TooFewUnits { block: 1, arm: 1, count: 1 }));
        assert_eq!(
            report.violations[0].to_string(),
            "fewer than 2 treated units in block 1 (found 1)"
        );
    }

    #[test]
    fn non_finite_and_dimension_problems() {
        let mut data = two_blocks_of_four();
        data.x[[3, 1]] = f64::NAN;
        data.y = Some(vec![0.0; 7]);
        let report = validate(&data);
        assert!(report
            .violations
            .contains(&Violation::NonFinite { matrix: Matrix::Covariates, row: 3, column: 1 }));
        assert!(report.violations.iter().any(|v| matches!(v, Violation::DimensionMismatch { .. })));
    }

    #[test]
    fn validate_is_deterministic() {
        let data = two_blocks_of_four();
        assert_eq!(validate(&data), validate(&data));
    }

    #[test]
    fn block_structure_quantities() {
        let b = BlockStructure::new(vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1], vec![2, 3]).unwrap();
        assert_eq!(b.num_blocks(), 2);
        let total: f64 = (0..2).map(|m| b.weight(m)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(b.propensity(1), 0.5);
        assert_eq!(b.control(0), 2);
        assert!(BlockStructure::new(vec![0, 2], vec![0, 0, 0]).is_err());
        assert!(BlockStructure::new(vec![0, 0], vec![3]).is_err());
    }

    #[test]
    fn potential_outcomes_reconstruct() {
        let table = PotentialOutcomeTable::new(vec![1.0, 2.0, 3.0], vec![0.0, 0.5, 1.0]);
        assert!((table.tau - 1.5).abs() < 1e-15);
        assert_eq!(table.observe(&[1, 0, 1]), vec![1.0, 0.5, 3.0]);
    }
}
