//! Experiment drivers shared by the command line and the test suites.
//! Each returns a serializable report; none of them measures wall time, so
//! reports are reproducible byte for byte.

use serde::{Deserialize, Serialize};

use crate::boundary_stats::{self, GrowthResult, LeftTailRow};
use crate::error::{LabError, Result};
use crate::fractal_dim;
use crate::grid::GridFunction;
use crate::profiles::{self, Lambda, PdeRunConfig};
use crate::sim::{ClusterEnsemble, DensityEnsemble};
use crate::spectral::{self, Builtin, EigenResult, KillingSpec};
use crate::stats::{self, PowerLawFit};

/// An empirical mean against a closed form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedFormRow {
    pub quantity: String,
    pub empirical: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
}

impl ClosedFormRow {
    fn from_samples(quantity: String, samples: &[f64], exact: f64) -> Self {
        let (m, se) = stats::mean_stderr(samples);
        let z = if se > 0.0 { (m - exact) / se } else if (m - exact).abs() < 1e-12 { 0.0 } else { f64::INFINITY };
        Self {
            quantity,
            empirical: m,
            stderr: se,
            exact,
            z,
        }
    }
}

/// `E exp(-lambda X_t(1))` against `exp(-2 lambda m / (2 + lambda t))` and
/// `P(X_t(1) = 0)` against `exp(-2 m / t)`.
pub fn total_mass_checks(ens: &DensityEnsemble, lambdas: &[f64]) -> Vec<ClosedFormRow> {
    let t = ens.config.t_final;
    let m0 = ens.config.x0.total_mass();
    let masses = ens.total_masses();
    let mut rows: Vec<ClosedFormRow> = lambdas
        .iter()
        .map(|&l| {
            let s: Vec<f64> = masses.iter().map(|m| (-l * m).exp()).collect();
            ClosedFormRow::from_samples(format!("E exp(-{l} X_t(1))"), &s, (-2.0 * l * m0 / (2.0 + l * t)).exp())
        })
        .collect();
    let zeros: Vec<f64> = masses.iter().map(|m| if *m == 0.0 { 1.0 } else { 0.0 }).collect();
    rows.push(ClosedFormRow::from_samples("P(X_t(1) = 0)".into(), &zeros, (-2.0 * m0 / t).exp()));
    rows
}

/// `E exp(-lambda X_t([x, inf)))` against `exp(-v^lambda_t(x))` for an
/// ensemble started from a unit atom at 0.
pub fn duality_checks(ens: &DensityEnsemble, pairs: &[(f64, f64)]) -> Result<Vec<ClosedFormRow>> {
    let t = ens.config.t_final;
    let m0 = ens.config.x0.total_mass();
    let mut rows = Vec::new();
    for &(lambda, x) in pairs {
        let v = profiles::solve_v_lambda(&PdeRunConfig::new(Lambda::Finite(lambda), t))?;
        let s: Vec<f64> = ens
            .snapshots()
            .map(|snap| (-lambda * boundary_stats::right_mass(snap, x)).exp())
            .collect();
        rows.push(ClosedFormRow::from_samples(
            format!("E exp(-{lambda} X_{t}([{x}, inf)))"),
            &s,
            (-m0 * v.eval(x)).exp(),
        ));
    }
    Ok(rows)
}

/// Both discretizations for one killing function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenPair {
    pub phi: String,
    pub hermite: EigenResult,
    pub fd: EigenResult,
}

impl EigenPair {
    pub fn gap(&self) -> f64 {
        (self.hermite.lambda0() - self.fd.lambda0()).abs()
    }
}

pub fn eigen_pair(spec: &KillingSpec) -> Result<EigenPair> {
    Ok(EigenPair {
        phi: spec.name.clone(),
        hermite: spectral::eig_hermite(spec, spectral::DEFAULT_BASIS)?,
        fd: spectral::eig_neumann_fd(spec, spectral::DEFAULT_K, spectral::DEFAULT_FD_N)?,
    })
}

/// `solve-f -> eig(F, F/2) -> solve-g -> eig(G) -> dimension`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineReport {
    pub f0: f64,
    pub lambda0_f_half: [f64; 2],
    pub lambda0_f: [f64; 2],
    pub g_cross_check_gap: f64,
    pub g0: f64,
    pub lambda0_g: [f64; 2],
    pub lambda0: f64,
    pub dimension: f64,
}

pub fn pipeline() -> Result<(PipelineReport, Vec<EigenPair>, profiles::GProfile, GridFunction)> {
    let f = profiles::solve_f(10.0, 2001, 1e-10)?;
    let f_full = f.profile.even_extension()?;
    let spec_f = KillingSpec::new(f_full.clone(), true).map(|mut s| {
        s.name = Builtin::F.name().into();
        s
    })?;
    let spec_fh = KillingSpec::new(f_full.scaled(0.5, "F/2")?, true).map(|mut s| {
        s.name = Builtin::FHalf.name().into();
        s
    })?;
    let pf = eigen_pair(&spec_f)?;
    let pfh = eigen_pair(&spec_fh)?;
    let g = profiles::solve_g(-10.0, 10.0, 2001, profiles::DEFAULT_INFINITY_SURROGATE, 1e-3)?;
    let spec_g = KillingSpec::builtin(Builtin::G)?;
    let pg = eigen_pair(&spec_g)?;
    let lambda0 = pf.hermite.lambda0();
    let dimension = spectral::dimension_from_lambda0(lambda0)?;
    let report = PipelineReport {
        f0: f.c_star,
        lambda0_f_half: [pfh.hermite.lambda0(), pfh.fd.lambda0()],
        lambda0_f: [pf.hermite.lambda0(), pf.fd.lambda0()],
        g_cross_check_gap: g.gap,
        g0: g.profile.eval(0.0),
        lambda0_g: [pg.hermite.lambda0(), pg.fd.lambda0()],
        lambda0,
        dimension,
    };
    Ok((report, vec![pfh, pf, pg], g, f_full))
}

/// Weighted `L^2(m)` relative error on `[a, b]` between `psi` and the best
/// multiple of `reference`.
pub fn weighted_relative_error(psi: &GridFunction, reference: &GridFunction, a: f64, b: f64) -> f64 {
    let n = 2000;
    let h = (b - a) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| a + i as f64 * h).collect();
    let w = |x: f64| (-0.5 * x * x).exp();
    let (mut pr, mut rr, mut pp) = (0.0, 0.0, 0.0);
    for &x in &xs {
        let (p, r) = (psi.eval(x), reference.eval(x));
        pr += p * r * w(x);
        rr += r * r * w(x);
        pp += p * p * w(x);
    }
    let s = pr / rr;
    let err: f64 = xs.iter().map(|&x| (psi.eval(x) - s * reference.eval(x)).powi(2) * w(x)).sum();
    (err / pp).sqrt()
}

/// `-e^{x^2/2} G'(x)` on the grid of `g`.
pub fn g_eigenfunction_candidate(g: &GridFunction) -> Result<GridFunction> {
    let dg = crate::grid::derivative(g)?;
    dg.map("-exp(x^2/2) G'", |x, v| -(0.5 * x * x).exp() * v)
}

/// Mean local-time approximant totals over cluster ensembles at several `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalTimeRow {
    pub t: f64,
    pub clusters: usize,
    pub survival_frequency: f64,
    pub survival_probability: f64,
    pub mean_mass: f64,
    pub mean_total: f64,
    pub mean_total_stderr: f64,
    pub second_moment: f64,
    pub second_moment_stderr: f64,
    /// `(2 / t) mean_total`, the canonical-measure first moment.
    pub canonical_mean: f64,
    pub canonical_second_moment: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalTimeReport {
    pub lambda: f64,
    pub lambda0: f64,
    pub rows: Vec<LocalTimeRow>,
    /// Canonical first moment against `t`; expected exponent `-lambda0`.
    pub first_moment_fit: PowerLawFit,
    /// Canonical second moment against `t`; bounded by `C t^{1 - 2 lambda0}`.
    pub second_moment_fit: PowerLawFit,
}

pub fn local_time_report(ensembles: &[ClusterEnsemble], lambda: f64, lambda0: f64) -> Result<LocalTimeReport> {
    let mut rows = Vec::new();
    for e in ensembles {
        let totals: Vec<f64> = e
            .samples
            .iter()
            .map(|s| boundary_stats::local_time_approx(&s.snapshot, lambda, lambda0).map(|l| l.total))
            .collect::<Result<_>>()?;
        let squares: Vec<f64> = totals.iter().map(|v| v * v).collect();
        let (m, se) = stats::mean_stderr(&totals);
        let (m2, se2) = stats::mean_stderr(&squares);
        let masses: Vec<f64> = e.samples.iter().map(|s| s.total_mass).collect();
        let rate = e.cluster_rate();
        rows.push(LocalTimeRow {
            t: e.config.t,
            clusters: e.samples.len(),
            survival_frequency: e.survival_frequency(),
            survival_probability: e.config.survival_probability(),
            mean_mass: stats::mean_stderr(&masses).0,
            mean_total: m,
            mean_total_stderr: se,
            second_moment: m2,
            second_moment_stderr: se2,
            canonical_mean: rate * m,
            canonical_second_moment: rate * m2,
        });
    }
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let first: Vec<f64> = rows.iter().map(|r| r.canonical_mean).collect();
    let second: Vec<f64> = rows.iter().map(|r| r.canonical_second_moment).collect();
    Ok(LocalTimeReport {
        lambda,
        lambda0,
        first_moment_fit: stats::power_law_fit(&ts, &first)?,
        second_moment_fit: stats::power_law_fit(&ts, &second)?,
        rows,
    })
}

/// Box-dimension estimates over snapshots (exploratory).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxDimReport {
    pub threshold: f64,
    pub levels: u32,
    pub snapshots: usize,
    pub dimensions: Vec<f64>,
    pub unreliable: usize,
    pub degenerate: usize,
    pub median: f64,
    pub iqr: f64,
    pub note: String,
}

pub fn box_dimension_report(snapshots: &[&GridFunction], threshold: f64, levels: u32) -> Result<BoxDimReport> {
    let mut dimensions = Vec::new();
    let mut unreliable = 0;
    let mut degenerate = 0;
    for s in snapshots {
        let ladder = fractal_dim::dyadic_ladder(s.h(), levels);
        match fractal_dim::robust_box_dimension(s, &ladder, threshold) {
            Ok(r) => {
                if !r.reliable {
                    unreliable += 1;
                }
                dimensions.push(r.result.dimension());
            }
            Err(LabError::DegenerateFit(_)) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    let (median, iqr) = stats::median_iqr(&dimensions);
    Ok(BoxDimReport {
        threshold,
        levels,
        snapshots: snapshots.len(),
        dimensions,
        unreliable,
        degenerate,
        median,
        iqr,
        note: "box dimension of a thresholded grid set; exploratory comparison with a Hausdorff dimension".into(),
    })
}

/// Geometric ladder of `n` points from `a` to `b`.
pub fn geometric_ladder(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

pub fn growth_report(ens: &DensityEnsemble, eps: f64, n_u: usize) -> Result<GrowthResult> {
    let snaps: Vec<GridFunction> = ens.snapshots().cloned().collect();
    let ladder = geometric_ladder(eps.sqrt(), 10.0 * eps.sqrt(), n_u);
    boundary_stats::boundary_growth_experiment(&snaps, eps, &ladder)
}

pub fn left_tail_report(ens: &DensityEnsemble, x_values: &[f64], lambdas: &[f64]) -> Result<Vec<LeftTailRow>> {
    let snaps: Vec<GridFunction> = ens.snapshots().cloned().collect();
    boundary_stats::left_tail_experiment(&snaps, x_values, lambdas)
}
