//! Invariant sets: affine equalities and inequalities, hierarchy trees
//! compiled to constraint systems, and free-variable parametrizations of
//! affine solution sets.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default membership tolerance for constraint satisfaction.
pub const CONTAINS_TOL: f64 = 1e-9;

/// Relative pivot threshold for numerical rank decisions.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum InvariantError {
    #[error("expected vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("constraint matrix is rank deficient (numerical rank {rank} < {rows} rows)")]
    RankDeficient { rank: usize, rows: usize },
    #[error("malformed hierarchy: {0}")]
    MalformedHierarchy(String),
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The affine set {z : A z = b} with A of full row rank n' < n.
#[derive(Debug, Clone)]
pub struct AffineEquality {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// The halfspace intersection {z : A z ≥ rhs}. Feasibility is not checked at
/// construction.
#[derive(Debug, Clone)]
pub struct AffineInequality {
    a: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// An invariant set: affine equalities, inequalities, or their intersection.
#[derive(Debug, Clone)]
pub enum Invariant {
    Equality(AffineEquality),
    Inequality(AffineInequality),
    Intersection(AffineEquality, AffineInequality),
}

impl AffineEquality {
    /// Builds the equality system, verifying full row rank.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, InvariantError> {
        if a.nrows() != b.len() {
            return Err(InvariantError::DimensionMismatch { expected: a.nrows(), got: b.len() });
        }
        let eq = AffineEquality { a, b };
        if eq.a.nrows() > 0 {
            // Construction fails fast on dependent rows; the parametrization
            // below would report the same rank.
            solve_free_parametrization(&eq)?;
        }
        Ok(eq)
    }

    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self, InvariantError> {
        let ncols = rows.first().map_or(0, |r| r.len());
        let a = DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied());
        Self::new(a, DVector::from_column_slice(b))
    }

    /// Sum-to-`b` constraint over `n` coordinates.
    pub fn sum_constraint(n: usize, b: f64) -> Self {
        AffineEquality { a: DMatrix::from_element(1, n, 1.0), b: DVector::from_element(1, b) }
    }

    /// An empty (vacuous) constraint over `n` coordinates.
    pub fn vacuous(n: usize) -> Self {
        AffineEquality { a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, z: &[f64]) -> Result<f64, InvariantError> {
        if z.len() != self.dim() {
            return Err(InvariantError::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let zv = DVector::from_column_slice(z);
        let r = &self.a * zv - &self.b;
        Ok(r.amax())
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> Result<bool, InvariantError> {
        if self.rows() == 0 {
            if z.len() != self.dim() && self.dim() != 0 {
                return Err(InvariantError::DimensionMismatch { expected: self.dim(), got: z.len() });
            }
            return Ok(true);
        }
        Ok(self.residual(z)? <= tol)
    }

    /// Homogeneous version {z : A z = 0}, for constraints on additive noise.
    pub fn homogeneous(&self) -> AffineEquality {
        AffineEquality { a: self.a.clone(), b: DVector::zeros(self.rows()) }
    }

    /// Block-diagonal composition of two systems over concatenated coordinates.
    pub fn block_diag(&self, other: &AffineEquality) -> AffineEquality {
        let (r1, c1) = (self.rows(), self.dim());
        let (r2, c2) = (other.rows(), other.dim());
        let mut a = DMatrix::zeros(r1 + r2, c1 + c2);
        a.view_mut((0, 0), (r1, c1)).copy_from(&self.a);
        a.view_mut((r1, c1), (r2, c2)).copy_from(&other.a);
        let mut b = DVector::zeros(r1 + r2);
        b.rows_mut(0, r1).copy_from(&self.b);
        b.rows_mut(r1, r2).copy_from(&other.b);
        AffineEquality { a, b }
    }
}

impl AffineInequality {
    pub fn new(a: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, InvariantError> {
        if a.nrows() != rhs.len() {
            return Err(InvariantError::DimensionMismatch { expected: a.nrows(), got: rhs.len() });
        }
        Ok(AffineInequality { a, rhs })
    }

    pub fn from_rows(rows: &[Vec<f64>], rhs: &[f64]) -> Result<Self, InvariantError> {
        let ncols = rows.first().map_or(0, |r| r.len());
        let a = DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied());
        Self::new(a, DVector::from_column_slice(rhs))
    }

    /// Componentwise nonnegativity x ≥ 0 over `n` coordinates.
    pub fn nonneg(n: usize) -> Self {
        AffineInequality { a: DMatrix::identity(n, n), rhs: DVector::zeros(n) }
    }

    /// Single halfspace {z : row · z ≥ c}.
    pub fn halfspace(row: &[f64], c: f64) -> Self {
        AffineInequality {
            a: DMatrix::from_row_slice(1, row.len(), row),
            rhs: DVector::from_element(1, c),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// Largest violation of A z ≥ rhs (0 when satisfied).
    pub fn violation(&self, z: &[f64]) -> Result<f64, InvariantError> {
        if z.len() != self.dim() {
            return Err(InvariantError::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let zv = DVector::from_column_slice(z);
        let r = &self.rhs - &self.a * zv;
        Ok(r.iter().fold(0.0f64, |m, &x| m.max(x)))
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> Result<bool, InvariantError> {
        Ok(self.violation(z)? <= tol)
    }

    pub fn block_diag(&self, other: &AffineInequality) -> AffineInequality {
        let (r1, c1) = (self.rows(), self.dim());
        let (r2, c2) = (other.rows(), other.dim());
        let mut a = DMatrix::zeros(r1 + r2, c1 + c2);
        a.view_mut((0, 0), (r1, c1)).copy_from(&self.a);
        a.view_mut((r1, c1), (r2, c2)).copy_from(&other.a);
        let mut rhs = DVector::zeros(r1 + r2);
        rhs.rows_mut(0, r1).copy_from(&self.rhs);
        rhs.rows_mut(r1, r2).copy_from(&other.rhs);
        AffineInequality { a, rhs }
    }
}

impl Invariant {
    pub fn dim(&self) -> usize {
        match self {
            Invariant::Equality(eq) => eq.dim(),
            Invariant::Inequality(iq) => iq.dim(),
            Invariant::Intersection(eq, _) => eq.dim(),
        }
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> Result<bool, InvariantError> {
        match self {
            Invariant::Equality(eq) => eq.contains(z, tol),
            Invariant::Inequality(iq) => iq.contains(z, tol),
            Invariant::Intersection(eq, iq) => Ok(eq.contains(z, tol)? && iq.contains(z, tol)?),
        }
    }

    pub fn equality(&self) -> Option<&AffineEquality> {
        match self {
            Invariant::Equality(eq) | Invariant::Intersection(eq, _) => Some(eq),
            Invariant::Inequality(_) => None,
        }
    }

    pub fn inequality(&self) -> Option<&AffineInequality> {
        match self {
            Invariant::Inequality(iq) | Invariant::Intersection(_, iq) => Some(iq),
            Invariant::Equality(_) => None,
        }
    }

    /// Product invariant over concatenated output blocks.
    pub fn product(&self, other: &Invariant) -> Invariant {
        let eq = match (self.equality(), other.equality()) {
            (Some(a), Some(b)) => Some(a.block_diag(b)),
            (Some(a), None) => Some(a.block_diag(&AffineEquality::vacuous(other.dim()))),
            (None, Some(b)) => Some(AffineEquality::vacuous(self.dim()).block_diag(b)),
            (None, None) => None,
        };
        let iq = match (self.inequality(), other.inequality()) {
            (Some(a), Some(b)) => Some(a.block_diag(b)),
            (Some(a), None) => {
                Some(a.block_diag(&AffineInequality::new(DMatrix::zeros(0, other.dim()), DVector::zeros(0)).unwrap()))
            }
            (None, Some(b)) => {
                Some(AffineInequality::new(DMatrix::zeros(0, self.dim()), DVector::zeros(0)).unwrap().block_diag(b))
            }
            (None, None) => None,
        };
        match (eq, iq) {
            (Some(e), Some(i)) => Invariant::Intersection(e, i),
            (Some(e), None) => Invariant::Equality(e),
            (None, Some(i)) => Invariant::Inequality(i),
            (None, None) => unreachable!("product of two invariants"),
        }
    }
}

/// Free-variable parametrization of {z : A z = b}: pivot (dependent)
/// coordinates expressed as an affine function of the remaining free ones.
#[derive(Debug, Clone)]
pub struct FreeParametrization {
    n: usize,
    pivots: Vec<usize>,
    free: Vec<usize>,
    /// Row r: dependent pivots[r] = particular[r] − Σ_j coeff[(r, j)]·v_j.
    coeff: DMatrix<f64>,
    particular: DVector<f64>,
}

impl FreeParametrization {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn free_indices(&self) -> &[usize] {
        &self.free
    }

    pub fn pivot_indices(&self) -> &[usize] {
        &self.pivots
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Full n-vector satisfying A z = b from free-coordinate values.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>, InvariantError> {
        if v.len() != self.free.len() {
            return Err(InvariantError::DimensionMismatch { expected: self.free.len(), got: v.len() });
        }
        let mut z = vec![0.0; self.n];
        for (j, &idx) in self.free.iter().enumerate() {
            z[idx] = v[j];
        }
        for (r, &idx) in self.pivots.iter().enumerate() {
            let mut val = self.particular[r];
            for (j, &vj) in v.iter().enumerate() {
                val -= self.coeff[(r, j)] * vj;
            }
            z[idx] = val;
        }
        Ok(z)
    }

    /// Free coordinates of a full vector.
    pub fn free_of(&self, z: &[f64]) -> Result<Vec<f64>, InvariantError> {
        if z.len() != self.n {
            return Err(InvariantError::DimensionMismatch { expected: self.n, got: z.len() });
        }
        Ok(self.free.iter().map(|&i| z[i]).collect())
    }

    /// Sum over dependent rows of |row coefficients|, used to bound how far a
    /// dependent coordinate can move per unit of free coordinates.
    pub fn max_row_l1(&self) -> f64 {
        (0..self.pivots.len())
            .map(|r| (0..self.free.len()).map(|j| self.coeff[(r, j)].abs()).sum::<f64>())
            .fold(1.0f64, f64::max)
    }
}

/// Reduces [A | b] with partial pivoting and reads off the free/pivot split.
///
/// Pivot columns are chosen left to right; within a column the largest
/// remaining entry is used. Columns whose best pivot falls below the relative
/// rank tolerance become free.
pub fn solve_free_parametrization(eq: &AffineEquality) -> Result<FreeParametrization, InvariantError> {
    let n = eq.dim();
    let rows = eq.rows();
    let mut m = DMatrix::zeros(rows, n + 1);
    m.view_mut((0, 0), (rows, n)).copy_from(eq.matrix());
    m.view_mut((0, n), (rows, 1)).copy_from(eq.rhs());

    let scale = eq.matrix().amax().max(1.0);
    let threshold = RANK_TOL * scale;

    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for c in 0..n {
        if r == rows {
            break;
        }
        // partial pivoting: largest entry in column c among rows r..
        let (best_row, best_val) = (r..rows)
            .map(|i| (i, m[(i, c)].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        if best_val <= threshold {
            continue; // free column
        }
        m.swap_rows(r, best_row);
        let pivot = m[(r, c)];
        for j in c..=n {
            m[(r, j)] /= pivot;
        }
        for i in 0..rows {
            if i != r {
                let factor = m[(i, c)];
                if factor != 0.0 {
                    for j in c..=n {
                        m[(i, j)] -= factor * m[(r, j)];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    if r < rows {
        return Err(InvariantError::RankDeficient { rank: r, rows });
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let mut coeff = DMatrix::zeros(rows, free.len());
    let mut particular = DVector::zeros(rows);
    for (ri, _) in pivots.iter().enumerate() {
        for (j, &fc) in free.iter().enumerate() {
            coeff[(ri, j)] = m[(ri, fc)];
        }
        particular[ri] = m[(ri, n)];
    }
    Ok(FreeParametrization { n, pivots, free, coeff, particular })
}

/// A rooted tree of named nodes with levels 1..N (level 1 = root).
///
/// Coordinates are ordered leaves first (in input order), then internal nodes
/// grouped by level from the deepest up, root last.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    level: Vec<usize>,
    children: Vec<Vec<usize>>,
    n_leaves: usize,
}

impl Hierarchy {
    /// Builds a hierarchy from `(name, parent name, level)` triples; the root
    /// has no parent and level 1.
    pub fn new(nodes: Vec<(String, Option<String>, usize)>) -> Result<Self, InvariantError> {
        use std::collections::HashMap;
        let malformed = |msg: String| InvariantError::MalformedHierarchy(msg);
        if nodes.is_empty() {
            return Err(malformed("hierarchy has no nodes".into()));
        }
        let mut seen = HashMap::new();
        for (i, (name, _, _)) in nodes.iter().enumerate() {
            if seen.insert(name.clone(), i).is_some() {
                return Err(malformed(format!("duplicate node {name:?}")));
            }
        }
        let mut has_children = vec![false; nodes.len()];
        let mut roots = 0usize;
        for (name, parent, level) in &nodes {
            match parent {
                None => {
                    roots += 1;
                    if *level != 1 {
                        return Err(malformed(format!("root {name:?} must be at level 1")));
                    }
                }
                Some(p) => {
                    let pi = *seen
                        .get(p)
                        .ok_or_else(|| malformed(format!("unknown parent {p:?} of {name:?}")))?;
                    if nodes[pi].2 + 1 != *level {
                        return Err(malformed(format!(
                            "node {name:?} at level {level} must have its parent at level {}",
                            level - 1
                        )));
                    }
                    has_children[pi] = true;
                }
            }
        }
        if roots != 1 {
            return Err(malformed(format!("expected a single root, found {roots}")));
        }

        // coordinate order: leaves in input order, then internal nodes by
        // descending level, root last
        let mut order: Vec<usize> = Vec::with_capacity(nodes.len());
        order.extend((0..nodes.len()).filter(|&i| !has_children[i]));
        let n_leaves = order.len();
        let max_level = nodes.iter().map(|n| n.2).max().unwrap();
        for lvl in (1..=max_level).rev() {
            order.extend((0..nodes.len()).filter(|&i| has_children[i] && nodes[i].2 == lvl));
        }
        let mut position = vec![0usize; nodes.len()];
        for (coord, &orig) in order.iter().enumerate() {
            position[orig] = coord;
        }

        let mut names = Vec::with_capacity(nodes.len());
        let mut parent = vec![None; nodes.len()];
        let mut level = vec![0usize; nodes.len()];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for &orig in &order {
            names.push(nodes[orig].0.clone());
        }
        for (orig, (_, p, lvl)) in nodes.iter().enumerate() {
            let coord = position[orig];
            level[coord] = *lvl;
            if let Some(pname) = p {
                let pcoord = position[seen[pname]];
                parent[coord] = Some(pcoord);
                children[pcoord].push(position[orig]);
            }
        }
        Ok(Hierarchy { names, parent, level, children, n_leaves })
    }

    /// Parses the CSV format `node,parent,level` (root row has empty parent).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, InvariantError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut nodes = Vec::new();
        for record in rdr.records() {
            let rec = record.map_err(|e| InvariantError::ParseError(e.to_string()))?;
            if rec.len() < 3 {
                return Err(InvariantError::ParseError(format!("expected 3 columns, got {}", rec.len())));
            }
            let name = rec[0].to_string();
            let parent = if rec[1].is_empty() { None } else { Some(rec[1].to_string()) };
            let level: usize = rec[2]
                .parse()
                .map_err(|_| InvariantError::ParseError(format!("bad level {:?}", &rec[2])))?;
            nodes.push((name, parent, level));
        }
        Self::new(nodes)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, InvariantError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn level_of(&self, coord: usize) -> usize {
        self.level[coord]
    }

    pub fn max_level(&self) -> usize {
        self.level.iter().copied().max().unwrap_or(0)
    }

    pub fn is_leaf(&self, coord: usize) -> bool {
        coord < self.n_leaves
    }

    pub fn children(&self, coord: usize) -> &[usize] {
        &self.children[coord]
    }

    pub fn parent(&self, coord: usize) -> Option<usize> {
        self.parent[coord]
    }

    /// Coordinates belonging to a hierarchy level.
    pub fn level_coords(&self, lvl: usize) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.level[i] == lvl).collect()
    }

    /// Internal coordinates ordered deepest level first, so each node's
    /// children are already final when it is computed.
    fn internal_bottom_up(&self) -> Vec<usize> {
        let mut coords: Vec<usize> = (self.n_leaves..self.node_count()).collect();
        coords.sort_by(|&a, &b| self.level[b].cmp(&self.level[a]));
        coords
    }

    /// One sum constraint per internal node: (children sum) − node = 0.
    pub fn to_equalities(&self) -> AffineEquality {
        let n = self.node_count();
        let internal: Vec<usize> = (self.n_leaves..n).collect();
        let mut a = DMatrix::zeros(internal.len(), n);
        for (row, &node) in internal.iter().enumerate() {
            for &c in &self.children[node] {
                a[(row, c)] = 1.0;
            }
            a[(row, node)] = -1.0;
        }
        AffineEquality { a, b: DVector::zeros(internal.len()) }
    }

    /// Fills internal values bottom-up from the given full vector's leaf
    /// block, returning a consistent vector.
    pub fn consistent_fill(&self, leaf_values: &[f64]) -> Result<Vec<f64>, InvariantError> {
        if leaf_values.len() != self.n_leaves {
            return Err(InvariantError::DimensionMismatch { expected: self.n_leaves, got: leaf_values.len() });
        }
        let mut x = vec![0.0; self.node_count()];
        x[..self.n_leaves].copy_from_slice(leaf_values);
        self.refresh_internal(&mut x);
        Ok(x)
    }

    /// Recomputes every internal coordinate as the sum of its children.
    pub fn refresh_internal(&self, x: &mut [f64]) {
        for node in self.internal_bottom_up() {
            x[node] = self.children[node].iter().map(|&c| x[c]).sum();
        }
    }
}

/// Serializable constraint dump: `{A, b, order}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConstraintDump {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub order: Vec<String>,
}

impl ConstraintDump {
    pub fn from_hierarchy(h: &Hierarchy) -> Self {
        let eq = h.to_equalities();
        let a = (0..eq.rows())
            .map(|r| (0..eq.dim()).map(|c| eq.matrix()[(r, c)]).collect())
            .collect();
        ConstraintDump { a, b: eq.rhs().iter().copied().collect(), order: h.names().to_vec() }
    }
}
