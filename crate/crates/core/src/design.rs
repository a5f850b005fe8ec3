//! Design matrices and index bookkeeping for the outcome and strata models.
//!
//! Matrices are stored transposed (one column per individual) so that each
//! individual's design row is a contiguous slice.

use nalgebra::DMatrix;

use crate::error::{Result, SaceError};
use crate::model::{StratumLabel, TrialData};

/// Design structures of one trial. Immutable after [`build_designs`].
#[derive(Debug, Clone)]
pub struct DesignMatrices {
    n: usize,
    n_clusters: usize,
    n_periods: usize,
    n_covariates: usize,
    /// `(2p + 3) x N`: intercept, treatment, covariates, period dummy, treatment x covariates.
    out11_t: DMatrix<f64>,
    /// `(p + 2) x N`: intercept, covariates, period dummy.
    out10_t: DMatrix<f64>,
    /// `(p + 2) x N`: intercept, covariates, period dummy.
    ps_t: DMatrix<f64>,
    /// 0-based cluster of each row.
    cluster: Vec<usize>,
    /// 0-based period of each row.
    period: Vec<usize>,
    /// Compact index of each row's observed cluster-period.
    cp: Vec<usize>,
    /// Full 0-based column `i + I(j-1) - 1` of each compact cluster-period.
    cp_full: Vec<usize>,
    /// Full column -> compact index, `None` for absent cluster-periods.
    cp_lookup: Vec<Option<usize>>,
    cp_cluster: Vec<usize>,
    cp_treated: Vec<bool>,
    /// Compact cluster-period -> index among treated cluster-periods.
    cp_treated_index: Vec<Option<usize>>,
    n_treated_cp: usize,
    cluster_sizes: Vec<usize>,
    cp_sizes: Vec<usize>,
    treatment: Vec<bool>,
    survived: Vec<bool>,
    /// `log(outcome)`, `NaN` for non-survivors.
    log_y: Vec<f64>,
}

/// Rows contributing to each outcome model under the current labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StratumViews {
    /// Labelled `(1,1)` with an observed outcome.
    pub rows_y11: Vec<usize>,
    /// Labelled `(1,0)` with an observed outcome (necessarily treated).
    pub rows_y10: Vec<usize>,
}

impl StratumViews {
    pub fn n_y11(&self) -> usize {
        self.rows_y11.len()
    }

    pub fn n_y10(&self) -> usize {
        self.rows_y10.len()
    }
}

/// Builds all design structures. The data must satisfy [`TrialData::validate`]
/// and have exactly two periods.
pub fn build_designs(data: &TrialData) -> Result<DesignMatrices> {
    data.ensure_valid()?;
    if data.n_periods != 2 {
        return Err(SaceError::UnsupportedPeriods(data.n_periods));
    }
    let n = data.n_individuals();
    let i_count = data.n_clusters;
    let j_count = data.n_periods;
    let p = data.n_covariates();
    let k11 = 2 * p + 3;
    let k10 = p + 2;

    let mut out11_t = DMatrix::zeros(k11, n);
    let mut out10_t = DMatrix::zeros(k10, n);
    let mut cluster = Vec::with_capacity(n);
    let mut period = Vec::with_capacity(n);
    let mut full_col = Vec::with_capacity(n);
    let mut present = vec![false; i_count * j_count];
    let mut treated_full = vec![false; i_count * j_count];

    for (r, ind) in data.individuals.iter().enumerate() {
        let a = if ind.treatment { 1.0 } else { 0.0 };
        let kappa = if ind.period == 2 { 1.0 } else { 0.0 };
        let mut c11 = out11_t.column_mut(r);
        c11[0] = 1.0;
        c11[1] = a;
        for (q, x) in ind.covariates.iter().enumerate() {
            c11[2 + q] = *x;
            c11[3 + p + q] = a * x;
        }
        c11[2 + p] = kappa;
        let mut c10 = out10_t.column_mut(r);
        c10[0] = 1.0;
        for (q, x) in ind.covariates.iter().enumerate() {
            c10[1 + q] = *x;
        }
        c10[1 + p] = kappa;

        let ci = ind.cluster_id - 1;
        let pj = ind.period - 1;
        let col = ci + i_count * pj;
        cluster.push(ci);
        period.push(pj);
        full_col.push(col);
        present[col] = true;
        treated_full[col] = ind.treatment;
    }

    let mut cp_lookup = vec![None; i_count * j_count];
    let mut cp_full = Vec::new();
    let mut cp_cluster = Vec::new();
    let mut cp_treated = Vec::new();
    let mut cp_treated_index = Vec::new();
    let mut n_treated_cp = 0;
    for col in 0..i_count * j_count {
        if present[col] {
            cp_lookup[col] = Some(cp_full.len());
            cp_full.push(col);
            cp_cluster.push(col % i_count);
            cp_treated.push(treated_full[col]);
            if treated_full[col] {
                cp_treated_index.push(Some(n_treated_cp));
                n_treated_cp += 1;
            } else {
                cp_treated_index.push(None);
            }
        }
    }
    let cp: Vec<usize> = full_col
        .iter()
        .map(|c| cp_lookup[*c].expect("present"))
        .collect();

    let mut cluster_sizes = vec![0; i_count];
    for c in &cluster {
        cluster_sizes[*c] += 1;
    }
    let mut cp_sizes = vec![0; cp_full.len()];
    for c in &cp {
        cp_sizes[*c] += 1;
    }

    Ok(DesignMatrices {
        n,
        n_clusters: i_count,
        n_periods: j_count,
        n_covariates: p,
        ps_t: out10_t.clone(),
        out11_t,
        out10_t,
        cluster,
        period,
        cp,
        cp_full,
        cp_lookup,
        cp_cluster,
        cp_treated,
        cp_treated_index,
        n_treated_cp,
        cluster_sizes,
        cp_sizes,
        treatment: data.individuals.iter().map(|d| d.treatment).collect(),
        survived: data.individuals.iter().map(|d| d.survived).collect(),
        log_y: data
            .individuals
            .iter()
            .map(|d| d.log_outcome().unwrap_or(f64::NAN))
            .collect(),
    })
}

/// 1-based indicator column `i + I(j - 1)` of cluster `i`, period `j`.
pub fn full_cp_column(cluster_id: usize, period: usize, n_clusters: usize) -> usize {
    cluster_id + n_clusters * (period - 1)
}

impl DesignMatrices {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }
    /// Number of observed cluster-periods.
    pub fn n_cp(&self) -> usize {
        self.cp_full.len()
    }
    /// Number of observed treated cluster-periods.
    pub fn n_treated_cp(&self) -> usize {
        self.n_treated_cp
    }
    pub fn k_out11(&self) -> usize {
        self.out11_t.nrows()
    }
    pub fn k_out10(&self) -> usize {
        self.out10_t.nrows()
    }
    pub fn k_ps(&self) -> usize {
        self.ps_t.nrows()
    }

    /// Design row of individual `r` in the always-survivor outcome model.
    pub fn out11_row(&self, r: usize) -> &[f64] {
        let k = self.out11_t.nrows();
        &self.out11_t.as_slice()[r * k..(r + 1) * k]
    }
    /// Design row of individual `r` in the protected outcome model.
    pub fn out10_row(&self, r: usize) -> &[f64] {
        let k = self.out10_t.nrows();
        &self.out10_t.as_slice()[r * k..(r + 1) * k]
    }
    /// Design row of individual `r` in the strata model.
    pub fn ps_row(&self, r: usize) -> &[f64] {
        let k = self.ps_t.nrows();
        &self.ps_t.as_slice()[r * k..(r + 1) * k]
    }
    pub fn out11_t(&self) -> &DMatrix<f64> {
        &self.out11_t
    }
    pub fn out10_t(&self) -> &DMatrix<f64> {
        &self.out10_t
    }
    pub fn ps_t(&self) -> &DMatrix<f64> {
        &self.ps_t
    }

    /// `N x (2p+3)` always-survivor outcome design.
    pub fn d_out_11(&self) -> DMatrix<f64> {
        self.out11_t.transpose()
    }
    /// `N x (p+2)` protected outcome design.
    pub fn d_out_10(&self) -> DMatrix<f64> {
        self.out10_t.transpose()
    }
    /// `N x (p+2)` strata design.
    pub fn d_ps(&self) -> DMatrix<f64> {
        self.ps_t.transpose()
    }

    /// `N x I` cluster indicator matrix.
    pub fn p_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n_clusters);
        for (r, c) in self.cluster.iter().enumerate() {
            m[(r, *c)] = 1.0;
        }
        m
    }

    /// `N x IJ` cluster-period indicator matrix over all `IJ` columns.
    pub fn l_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n_clusters * self.n_periods);
        for (r, c) in self.cp.iter().enumerate() {
            m[(r, self.cp_full[*c])] = 1.0;
        }
        m
    }

    /// `(cluster_id, period, individual)` of row `r`, 1-based ids.
    pub fn row_index(&self, r: usize) -> (usize, usize, usize) {
        (self.cluster[r] + 1, self.period[r] + 1, r)
    }

    pub fn cluster(&self, r: usize) -> usize {
        self.cluster[r]
    }
    pub fn period(&self, r: usize) -> usize {
        self.period[r]
    }
    /// Compact cluster-period of row `r`.
    pub fn cp(&self, r: usize) -> usize {
        self.cp[r]
    }
    /// Index among treated cluster-periods for row `r`, if its cluster-period is treated.
    pub fn treated_cp(&self, r: usize) -> Option<usize> {
        self.cp_treated_index[self.cp[r]]
    }
    /// Compact index of the 1-based `(cluster_id, period)` pair, if observed.
    pub fn cp_of(&self, cluster_id: usize, period: usize) -> Option<usize> {
        let col = full_cp_column(cluster_id, period, self.n_clusters) - 1;
        self.cp_lookup.get(col).copied().flatten()
    }
    /// 1-based full indicator column of each compact cluster-period.
    pub fn cp_full_column(&self, cp: usize) -> usize {
        self.cp_full[cp] + 1
    }
    pub fn cp_cluster(&self, cp: usize) -> usize {
        self.cp_cluster[cp]
    }
    pub fn cp_is_treated(&self, cp: usize) -> bool {
        self.cp_treated[cp]
    }
    pub fn cluster_sizes(&self) -> &[usize] {
        &self.cluster_sizes
    }
    pub fn cp_sizes(&self) -> &[usize] {
        &self.cp_sizes
    }
    pub fn treatment(&self, r: usize) -> bool {
        self.treatment[r]
    }
    pub fn survived(&self, r: usize) -> bool {
        self.survived[r]
    }
    /// Logged outcome, `NaN` for non-survivors.
    pub fn log_y(&self, r: usize) -> f64 {
        self.log_y[r]
    }
    pub fn n_survivors(&self) -> usize {
        self.survived.iter().filter(|s| **s).count()
    }
}

/// Row sets feeding the two outcome models under `labels`.
pub fn stratum_views(dm: &DesignMatrices, labels: &[StratumLabel]) -> StratumViews {
    let mut views = StratumViews::default();
    stratum_views_into(dm, labels, &mut views);
    views
}

/// [`stratum_views`] reusing the buffers of `views`.
pub fn stratum_views_into(dm: &DesignMatrices, labels: &[StratumLabel], views: &mut StratumViews) {
    views.rows_y11.clear();
    views.rows_y10.clear();
    for (r, l) in labels.iter().enumerate() {
        if !dm.survived[r] {
            continue;
        }
        match l {
            StratumLabel::AlwaysSurvivor => views.rows_y11.push(r),
            StratumLabel::Protected => views.rows_y10.push(r),
            StratumLabel::NeverSurvivor => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Individual;

    fn ind(c: usize, j: usize, a: bool, s: bool, x: &[f64]) -> Individual {
        Individual {
            cluster_id: c,
            period: j,
            treatment: a,
            survived: s,
            outcome: s.then_some(2.0),
            covariates: x.to_vec(),
        }
    }

    fn grid(i_count: usize, per_cp: usize, p: usize) -> TrialData {
        let mut individuals = Vec::new();
        for c in 1..=i_count {
            for j in 1..=2 {
                let a = (c + j) % 2 == 0;
                for k in 0..per_cp {
                    let x: Vec<f64> = (0..p).map(|q| (c * 10 + j + k + q) as f64 * 0.1).collect();
                    individuals.push(ind(c, j, a, k % 3 != 0, &x));
                }
            }
        }
        TrialData {
            individuals,
            n_clusters: i_count,
            n_periods: 2,
            covariate_names: (0..p).map(|q| format!("x{q}")).collect(),
        }
    }

    #[test]
    fn two_by_two_indicators() {
        let dm = build_designs(&grid(2, 1, 1)).unwrap();
        let p = dm.p_matrix();
        let l = dm.l_matrix();
        assert_eq!(p.shape(), (4, 2));
        assert_eq!(l.shape(), (4, 4));
        for c in 0..2 {
            assert_eq!(p.column(c).sum(), 2.0);
        }
        for r in 0..4 {
            assert_eq!(p.row(r).sum(), 1.0);
            assert_eq!(l.row(r).sum(), 1.0);
            assert_eq!(l.column(r).sum(), 1.0);
        }
    }

    #[test]
    fn cluster_period_column_formula() {
        assert_eq!(full_cp_column(3, 2, 5), 8);
        let dm = build_designs(&grid(5, 2, 1)).unwrap();
        let l = dm.l_matrix();
        for r in 0..dm.n() {
            let (c, j, _) = dm.row_index(r);
            let col = full_cp_column(c, j, 5);
            assert_eq!(l[(r, col - 1)], 1.0);
            assert_eq!(dm.cp_full_column(dm.cp(r)), col);
        }
    }

    #[test]
    fn column_counts_and_interactions() {
        let dm = build_designs(&grid(3, 4, 3)).unwrap();
        let d = dm.d_out_11();
        assert_eq!(d.ncols(), 9);
        assert_eq!(dm.d_out_10().ncols(), 5);
        assert_eq!(dm.d_ps().ncols(), 5);
        for r in 0..dm.n() {
            for q in 0..3 {
                assert_eq!(d[(r, 6 + q)], d[(r, 1)] * d[(r, 2 + q)]);
            }
            assert_eq!(d[(r, 5)], if dm.period(r) == 1 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn treated_cluster_periods_are_half() {
        let dm = build_designs(&grid(6, 2, 1)).unwrap();
        assert_eq!(dm.n_cp(), 12);
        assert_eq!(dm.n_treated_cp(), 6);
        for r in 0..dm.n() {
            assert_eq!(dm.treated_cp(r).is_some(), dm.treatment(r));
        }
    }

    #[test]
    fn missing_period_is_compacted() {
        let mut data = grid(3, 2, 1);
        data.individuals
            .retain(|d| !(d.cluster_id == 2 && d.period == 1));
        let dm = build_designs(&data).unwrap();
        assert_eq!(dm.n_cp(), 5);
        assert_eq!(dm.cp_of(2, 1), None);
        assert!(dm.cp_of(2, 2).is_some());
        assert_eq!(dm.l_matrix().column(1).sum(), 0.0);
    }

    #[test]
    fn views_follow_labels() {
        let data = grid(2, 3, 1);
        let dm = build_designs(&data).unwrap();
        let never = vec![StratumLabel::NeverSurvivor; dm.n()];
        let v = stratum_views(&dm, &never);
        assert_eq!((v.n_y11(), v.n_y10()), (0, 0));

        let mut labels = never.clone();
        let target = (0..dm.n())
            .find(|r| dm.treatment(*r) && dm.survived(*r))
            .unwrap();
        labels[target] = StratumLabel::Protected;
        let v = stratum_views(&dm, &labels);
        assert_eq!(v.rows_y10, vec![target]);
        assert!(v.rows_y11.is_empty());
    }

    #[test]
    fn rejects_three_periods() {
        let mut data = grid(2, 1, 1);
        data.n_periods = 3;
        assert_eq!(
            build_designs(&data).unwrap_err(),
            SaceError::UnsupportedPeriods(3)
        );
    }
}
