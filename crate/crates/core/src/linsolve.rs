//! Sparse direct LU factorisation and solve.
//!
//! Matrices are supplied as triplet lists; duplicate entries are summed.
//! [`LuSolver`] caches the compressed pattern and the symbolic analysis, so
//! repeated factorisations of matrices assembled in the same triplet order
//! only redo the numeric phase.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::linalg::LuError;
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::Mat;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripletMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl TripletMatrix {
    pub fn new(n: usize) -> Self {
        Self { n, ..Default::default() }
    }

    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        Self { n, rows: Vec::with_capacity(nnz), cols: Vec::with_capacity(nnz), vals: Vec::with_capacity(nnz) }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::with_capacity(n, n);
        for i in 0..n {
            m.push(i, i, 1.0);
        }
        m
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for k in 0..self.nnz() {
            y[self.rows[k]] += self.vals[k] * x[self.cols[k]];
        }
        y
    }

    /// Dense copy, duplicates summed.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for k in 0..self.nnz() {
            a[self.rows[k]][self.cols[k]] += self.vals[k];
        }
        a
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut s = vec![0.0; self.n];
        for k in 0..self.nnz() {
            s[self.rows[k]] += self.vals[k].abs();
        }
        s.into_iter().fold(0.0, f64::max)
    }

    fn check(&self) -> Result<()> {
        if self.rows.len() != self.vals.len() || self.cols.len() != self.vals.len() {
            return Err(Error::DimensionMismatch { expected: self.vals.len(), found: self.rows.len().min(self.cols.len()) });
        }
        if let Some(k) = (0..self.nnz()).find(|&k| self.rows[k] >= self.n || self.cols[k] >= self.n) {
            return Err(Error::DimensionMismatch { expected: self.n, found: self.rows[k].max(self.cols[k]) + 1 });
        }
        Ok(())
    }
}

/// Compressed column pattern plus the map from triplet position to slot.
struct Csc {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    slot: Vec<usize>,
}

impl Csc {
    fn build(m: &TripletMatrix) -> Self {
        let mut order: Vec<usize> = (0..m.nnz()).collect();
        order.sort_unstable_by_key(|&k| (m.cols[k], m.rows[k]));
        let mut col_ptr = vec![0usize; m.n + 1];
        let mut row_idx = Vec::with_capacity(m.nnz());
        let mut slot = vec![0usize; m.nnz()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let key = (m.cols[k], m.rows[k]);
            if last != Some(key) {
                row_idx.push(key.1);
                col_ptr[key.0 + 1] += 1;
                last = Some(key);
            }
            slot[k] = row_idx.len() - 1;
        }
        for j in 0..m.n {
            col_ptr[j + 1] += col_ptr[j];
        }
        Self { n: m.n, rows: m.rows.clone(), cols: m.cols.clone(), col_ptr, row_idx, slot }
    }

    fn matches(&self, m: &TripletMatrix) -> bool {
        self.n == m.n && self.rows == m.rows && self.cols == m.cols
    }

    fn values(&self, m: &TripletMatrix) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.row_idx.len()];
        for (k, &s) in self.slot.iter().enumerate() {
            v[s] += m.vals[k];
        }
        match v.iter().position(|x| !x.is_finite()) {
            Some(s) => Err(Error::Factorisation(format!("non-finite matrix entry in stored slot {s}"))),
            None => Ok(v),
        }
    }

    fn symbolic(&self) -> SymbolicSparseColMatRef<'_, usize> {
        SymbolicSparseColMatRef::new_checked(self.n, self.n, &self.col_ptr, None, &self.row_idx)
    }
}

/// Pattern together with its symbolic LU analysis.
struct Analysed {
    csc: Csc,
    symbolic: SymbolicLu<usize>,
}

#[derive(Default)]
struct SymbolicCache {
    entry: Option<Arc<Analysed>>,
    builds: usize,
}

impl SymbolicCache {
    fn factorise(&mut self, m: &TripletMatrix) -> Result<Lu<usize, f64>> {
        let entry = match &self.entry {
            Some(e) if e.csc.matches(m) => e.clone(),
            _ => {
                let csc = Csc::build(m);
                let symbolic = SymbolicLu::try_new(csc.symbolic()).map_err(|e| Error::Factorisation(format!("{e:?}")))?;
                let e = Arc::new(Analysed { csc, symbolic });
                self.builds += 1;
                self.entry = Some(e.clone());
                e
            }
        };
        let values = entry.csc.values(m)?;
        let mat = SparseColMatRef::new(entry.csc.symbolic(), &values);
        Lu::try_new_with_symbolic(entry.symbolic.clone(), mat).map_err(|e| match e {
            LuError::SymbolicSingular { index } => Error::Singular { pivot: index },
            LuError::Generic(g) => Error::Factorisation(format!("{g:?}")),
        })
    }
}

fn lu_solve(lu: &Lu<usize, f64>, rhs: &[f64]) -> Vec<f64> {
    let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    (0..rhs.len()).map(|i| x[(i, 0)]).collect()
}

/// The single index whose row and column are both dense, if there is one.
fn dense_border(m: &TripletMatrix) -> Option<usize> {
    let n = m.n;
    let limit = (8.0 * (n as f64).sqrt()).max(64.0) as usize;
    if n < 2 * limit {
        return None;
    }
    let (mut rc, mut cc) = (vec![0usize; n], vec![0usize; n]);
    for k in 0..m.nnz() {
        rc[m.rows[k]] += 1;
        cc[m.cols[k]] += 1;
    }
    let mut dense = (0..n).filter(|&i| rc[i] > limit || cc[i] > limit);
    match (dense.next(), dense.next()) {
        (Some(i), None) if rc[i] > limit && cc[i] > limit => Some(i),
        _ => None,
    }
}

/// `K = [A b; c^T d]` with the border at index `m`. `A` is factorised after
/// adding `sigma` at `(k, k)`; the shift is removed with Sherman-Morrison.
struct Bordered {
    m: usize,
    k: usize,
    sigma: f64,
    lu: Lu<usize, f64>,
    c: Vec<(usize, f64)>,
    zb: Vec<f64>,
    schur: f64,
    q: Vec<f64>,
    denom: f64,
}

impl Bordered {
    fn build(cache: &mut SymbolicCache, t: &TripletMatrix, m: usize) -> Result<Option<Self>> {
        let red = |i: usize| if i < m { i } else { i - 1 };
        let n = t.n - 1;
        let mut a = TripletMatrix::with_capacity(n, t.nnz());
        let (mut b, mut cd, mut d) = (vec![0.0; n], vec![0.0; n], 0.0);
        for k in 0..t.nnz() {
            let (r, c, v) = (t.rows[k], t.cols[k], t.vals[k]);
            match (r == m, c == m) {
                (true, true) => d += v,
                (true, false) => cd[red(c)] += v,
                (false, true) => b[red(r)] += v,
                (false, false) => a.push(red(r), red(c), v),
            }
        }
        let k = (0..n).fold(0, |best, i| if b[i].abs() + cd[i].abs() > b[best].abs() + cd[best].abs() { i } else { best });
        let sigma = (0..a.nnz())
            .filter(|&j| a.cols[j] == k)
            .fold(0.0f64, |s, j| s.max(a.vals[j].abs()));
        let sigma = if sigma > 0.0 { sigma } else { 1.0 };
        a.push(k, k, sigma);
        let lu = match cache.factorise(&a) {
            Ok(lu) => lu,
            Err(_) => return Ok(None),
        };
        let c: Vec<(usize, f64)> = cd.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, v)).collect();
        let zb = lu_solve(&lu, &b);
        let schur = d - c.iter().map(|&(i, v)| v * zb[i]).sum::<f64>();
        let mut out = Self { m, k, sigma, lu, c, zb, schur, q: Vec::new(), denom: 0.0 };
        let scale = b.iter().chain(&cd).fold(0.0f64, |s, v| s.max(v.abs()));
        if !schur.is_finite() || schur.abs() <= 1e-14 * scale * scale / sigma {
            return Ok(None);
        }
        let mut e = vec![0.0; t.n];
        e[out.full(k)] = 1.0;
        out.q = out.shifted_solve(&e);
        out.denom = 1.0 - sigma * out.q[out.full(k)];
        if !out.denom.is_finite() || out.denom.abs() < 1e-12 || out.q.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        Ok(Some(out))
    }

    fn full(&self, i: usize) -> usize {
        if i < self.m { i } else { i + 1 }
    }

    fn shifted_solve(&self, r: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = (0..r.len()).filter(|&i| i != self.m).map(|i| r[i]).collect();
        let z = lu_solve(&self.lu, &f);
        let lambda = (r[self.m] - self.c.iter().map(|&(i, v)| v * z[i]).sum::<f64>()) / self.schur;
        let mut y = Vec::with_capacity(r.len());
        for i in 0..f.len() {
            if i == self.m {
                y.push(lambda);
            }
            y.push(z[i] - self.zb[i] * lambda);
        }
        if self.m == f.len() {
            y.push(lambda);
        }
        y
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let mut y = self.shifted_solve(r);
        let w = self.sigma * y[self.full(self.k)] / self.denom;
        for (yi, qi) in y.iter_mut().zip(&self.q) {
            *yi += w * qi;
        }
        y
    }
}

enum Kind {
    Direct(Lu<usize, f64>),
    Bordered(Box<Bordered>),
}

/// LU factors of one matrix; immutable and shareable across threads.
pub struct Factorisation {
    csc: Arc<Csc>,
    values: Vec<f64>,
    kind: Kind,
}

impl std::fmt::Debug for Factorisation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let bordered = matches!(self.kind, Kind::Bordered(_));
        f.debug_struct("Factorisation").field("n", &self.csc.n).field("nnz", &self.values.len()).field("bordered", &bordered).finish()
    }
}

impl Factorisation {
    pub fn dim(&self) -> usize {
        self.csc.n
    }

    /// Whether a dense border row and column were split off.
    pub fn is_bordered(&self) -> bool {
        matches!(self.kind, Kind::Bordered(_))
    }

    fn raw_solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Direct(lu) => lu_solve(lu, rhs),
            Kind::Bordered(b) => b.solve(rhs),
        }
    }

    fn residual(&self, x: &[f64], rhs: &[f64]) -> Vec<f64> {
        let p = &self.csc;
        let mut r = rhs.to_vec();
        for j in 0..p.n {
            for s in p.col_ptr[j]..p.col_ptr[j + 1] {
                r[p.row_idx[s]] -= self.values[s] * x[j];
            }
        }
        r
    }

    /// Solve `A x = rhs`, with up to two steps of iterative refinement while
    /// the backward error exceeds `1e-12 (|A| |x| + |b|)`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: rhs.len() });
        }
        let mut x = self.raw_solve(rhs);
        if let Some(pivot) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Singular { pivot });
        }
        let norm_a = self.norm_inf();
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for _ in 0..2 {
            let r = self.residual(&x, rhs);
            if norm(&r) <= 1e-12 * (norm_a * norm(&x) + norm(rhs)) {
                break;
            }
            let dx = self.raw_solve(&r);
            if !dx.iter().all(|v| v.is_finite()) {
                break;
            }
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        Ok(x)
    }

    fn norm_inf(&self) -> f64 {
        let p = &self.csc;
        let mut s = vec![0.0; p.n];
        for (k, &r) in p.row_idx.iter().enumerate() {
            s[r] += self.values[k].abs();
        }
        s.into_iter().fold(0.0, f64::max)
    }
}

/// Factorises a sequence of matrices, reusing the symbolic analysis while
/// the triplet pattern stays the same. A single dense row and column (such
/// as a Lagrange multiplier coupled to a whole field) is split off and
/// handled by block elimination, which keeps the fill of the sparse part
/// low.
#[derive(Default)]
pub struct LuSolver {
    csc: Option<Arc<Csc>>,
    border: Option<usize>,
    direct: SymbolicCache,
    reduced: SymbolicCache,
}

impl LuSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of symbolic analyses performed so far.
    pub fn symbolic_builds(&self) -> usize {
        self.direct.builds + self.reduced.builds
    }

    pub fn factorise(&mut self, m: &TripletMatrix) -> Result<Factorisation> {
        m.check()?;
        let csc = match &self.csc {
            Some(c) if c.matches(m) => c.clone(),
            _ => {
                let c = Arc::new(Csc::build(m));
                self.border = dense_border(m);
                self.csc = Some(c.clone());
                c
            }
        };
        let values = csc.values(m)?;
        if let Some(b) = self.border {
            if let Some(bordered) = Bordered::build(&mut self.reduced, m, b)? {
                return Ok(Factorisation { csc, values, kind: Kind::Bordered(Box::new(bordered)) });
            }
            log::debug!("bordered factorisation failed; factorising the full matrix");
        }
        let lu = self.direct.factorise(m)?;
        Ok(Factorisation { csc, values, kind: Kind::Direct(lu) })
    }
}

pub fn factorise(m: &TripletMatrix) -> Result<Factorisation> {
    LuSolver::new().factorise(m)
}

pub fn solve(f: &Factorisation, rhs: &[f64]) -> Result<Vec<f64>> {
    f.solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity() {
        let f = factorise(&TripletMatrix::identity(5)).unwrap();
        let b = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(solve(&f, &b).unwrap(), b);
    }

    #[test]
    fn needs_pivoting() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 1, 1.0);
        m.push(1, 0, 1.0);
        let x = solve(&factorise(&m).unwrap(), &[3.0, 4.0]).unwrap();
        assert_eq!(x, vec![4.0, 3.0]);
    }

    #[test]
    fn duplicates_are_summed() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 1.0);
        m.push(0, 0, 1.0);
        m.push(1, 1, 4.0);
        m.push(1, 0, 0.5);
        m.push(1, 0, 0.5);
        let x = solve(&factorise(&m).unwrap(), &[2.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn structurally_singular_reported() {
        let mut m = TripletMatrix::new(3);
        m.push(0, 0, 1.0);
        m.push(1, 0, 1.0);
        m.push(2, 2, 1.0);
        assert!(matches!(factorise(&m), Err(Error::Singular { .. })));
    }

    #[test]
    fn numerically_singular_reported() {
        let mut m = TripletMatrix::new(2);
        m.push(0, 0, 1.0);
        m.push(0, 1, 1.0);
        m.push(1, 0, 1.0);
        m.push(1, 1, 1.0);
        let r = factorise(&m).and_then(|f| f.solve(&[1.0, 2.0]));
        assert!(r.is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let f = factorise(&TripletMatrix::identity(3)).unwrap();
        assert!(matches!(f.solve(&[1.0]), Err(Error::DimensionMismatch { .. })));
        let mut bad = TripletMatrix::new(2);
        bad.push(2, 0, 1.0);
        assert!(factorise(&bad).is_err());
    }

    fn bordered_system(n: usize, singular: bool, seed: u64) -> TripletMatrix {
        // Graph Laplacian on a ring (kernel = constants) plus a dense border.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = TripletMatrix::new(n + 1);
        for i in 0..n {
            let j = (i + 1) % n;
            let w = 1.0 + rng.gen::<f64>();
            m.push(i, i, w);
            m.push(j, j, w);
            m.push(i, j, -w);
            m.push(j, i, -w);
            if !singular {
                m.push(i, i, 0.3);
            }
        }
        for i in 0..n {
            let w = 1.0 / n as f64;
            m.push(i, n, w);
            m.push(n, i, w);
        }
        m
    }

    fn check_solution(m: &TripletMatrix, x: &[f64], b: &[f64]) {
        let r = m.matvec(x);
        let err = r.iter().zip(b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let xn = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-11 * (m.norm_inf() * xn + 1.0), "residual {err}");
    }

    #[test]
    fn dense_border_is_split_off() {
        for singular in [true, false] {
            let m = bordered_system(600, singular, 5);
            let b: Vec<f64> = (0..m.n).map(|i| (0.1 * i as f64).sin()).collect();
            let mut solver = LuSolver::new();
            let f = solver.factorise(&m).unwrap();
            assert!(f.is_bordered());
            let x = f.solve(&b).unwrap();
            check_solution(&m, &x, &b);
            // Same answer with the border moved to index 0.
            let mut perm = TripletMatrix::new(m.n);
            let p = |i: usize| if i == m.n - 1 { 0 } else { i + 1 };
            for k in 0..m.nnz() {
                perm.push(p(m.rows[k]), p(m.cols[k]), m.vals[k]);
            }
            let mut bp = vec![0.0; m.n];
            for i in 0..m.n {
                bp[p(i)] = b[i];
            }
            let y = factorise(&perm).unwrap().solve(&bp).unwrap();
            for i in 0..m.n {
                assert!((y[p(i)] - x[i]).abs() < 1e-9 * (1.0 + x[i].abs()));
            }
        }
    }

    #[test]
    fn small_systems_are_not_split() {
        let m = bordered_system(40, true, 1);
        assert!(!factorise(&m).unwrap().is_bordered());
    }

    #[test]
    fn symbolic_reuse_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let mut m = TripletMatrix::new(n);
        for i in 0..n {
            m.push(i, i, 4.0 + rng.gen::<f64>());
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                m.push(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let mut solver = LuSolver::new();
        let x1 = solver.factorise(&m).unwrap().solve(&b).unwrap();
        for v in m.vals.iter_mut() {
            *v *= 1.5;
        }
        let x2 = solver.factorise(&m).unwrap().solve(&b).unwrap();
        assert_eq!(solver.symbolic_builds(), 1);
        for i in 0..n {
            assert!((x1[i] - 1.5 * x2[i]).abs() < 1e-12 * (1.0 + x1[i].abs()));
        }
        let x3 = LuSolver::new().factorise(&m).unwrap().solve(&b).unwrap();
        assert_eq!(x2, x3);
        let r = m.matvec(&x2);
        let err = r.iter().zip(&b).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let xn = x2.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(err <= 1e-10 * (m.norm_inf() * xn + 1.0));
    }
}
