//! The renormalization tower: levels R_k = q_k B_k, the compositions
//! S_n = R_n ∘ … ∘ R_1, the pulled-back field X_n = 1/S_n', its time-1 maps
//! G_n, F_n = G_n ∘ … ∘ G_1, the pulled-back chains Q_k, and the induction step.

use crate::chains::{
    crooked_embedding_witness, generate_crooked_curve, is_circular_chain, link_diameter_sup, standard_chain,
    CircularChain, JordanPolyline,
};
use crate::conformal::{choose_epsilon_stably_crooked, riemann_map_with, MapAccuracy, MapError, MapOptions};
use crate::cylinder::{CylError, PeriodicEntireMap, C64};
use crate::geom::Polygon;
use crate::runge::{
    build_psi, default_radius, extract_w, fit_polynomial, inverse_defect, map_polygon, InverseBranch, RungeError,
};
use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TowerError {
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error("level {level}: Im {im:.4} is below the validity floor {floor:.4}")]
    OutOfValidityStrip { level: usize, im: f64, floor: f64 },
    #[error("flow of X_{level} left the certified domain at t = {t:.4} (z = {at})")]
    DomainEscape { level: usize, t: f64, at: C64 },
    #[error("Newton inverse diverged: {0}")]
    NewtonDivergence(String),
    #[error("level {level}, stage {stage}: {message}")]
    Stage { level: usize, stage: String, message: String },
    #[error("level {level}: conditions {failed:?} failed")]
    LedgerFailed { level: usize, failed: Vec<u8> },
    #[error("no level {0} in the tower")]
    NoSuchLevel(usize),
}

fn stage(level: usize, stage: &str, e: impl std::fmt::Display) -> TowerError {
    TowerError::Stage { level, stage: stage.to_string(), message: e.to_string() }
}

/// R = q B, with B's inverse branch certified on Im > -0.45 ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenormLevel {
    pub b: PeriodicEntireMap,
    pub q: u64,
    /// Margin ε of B; 0 for the identity.
    pub eps: f64,
}

impl RenormLevel {
    pub fn identity(q: u64) -> Self {
        RenormLevel { b: PeriodicEntireMap::identity(), q, eps: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.b.is_identity()
    }

    /// (R(z), R'(z)).
    pub fn eval(&self, z: C64) -> Result<(C64, C64), CylError> {
        let q = self.q as f64;
        let (v, d) = self.b.eval_with_derivative(z)?;
        Ok((q * v, q * d))
    }

    pub fn branch(&self) -> InverseBranch<'_> {
        InverseBranch { psi: &self.b, eps: self.eps }
    }

    /// R⁻¹(w), continued from a known pair R(t0) = w0 if given.
    pub fn inverse(&self, w: C64, seed: Option<(C64, C64)>) -> Result<C64, RungeError> {
        let q = self.q as f64;
        if self.b.w_coeffs.is_empty() {
            return Ok(w / q - self.b.asymptotic_constant());
        }
        match seed {
            Some((w0, t0)) => self.branch().eval_near(w / q, (w0 / q, t0)),
            None => self.branch().eval(w / q),
        }
    }

    /// R⁻¹ of a polygon on C/(qP)Z, landing on C/PZ.
    pub fn pull_polygon(&self, p: &Polygon) -> Result<Polygon, RungeError> {
        let q = self.q as f64;
        let scaled = p.scaled(1.0 / q);
        if self.b.w_coeffs.is_empty() {
            return Ok(scaled.translated(-self.b.asymptotic_constant()));
        }
        let step = (scaled.diameter() / 16.0).max(1e-6);
        map_polygon(self.branch(), &scaled, step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub id: u8,
    pub passed: bool,
    pub vacuous: bool,
    /// Slack of the check; None when unbounded.
    pub margin: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLedger {
    pub level: usize,
    pub conditions: Vec<ConditionRecord>,
    /// The level was appended in best-effort mode despite failed conditions.
    pub provisional: bool,
}

impl LevelLedger {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<u8> {
        self.conditions.iter().filter(|c| !c.passed).map(|c| c.id).collect()
    }

    pub fn get(&self, id: u8) -> Option<&ConditionRecord> {
        self.conditions.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub degree: usize,
    pub train_error: f64,
    pub validation_error: f64,
    pub conditioning: f64,
    pub probe_residual: Option<f64>,
    pub defect: Option<f64>,
    pub trunc_radius: Option<f64>,
    pub note: String,
}

/// What the pipeline did to produce one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub level: usize,
    pub target: String,
    pub map_accuracy: MapAccuracy,
    pub eps: f64,
    pub eps_source: String,
    pub sample_height: f64,
    pub v0: C64,
    pub ladder: Vec<LadderStep>,
    pub degree: usize,
    pub probe_residual: f64,
    /// (q, conditions failed at q) for every q tried.
    pub q_trials: Vec<(u64, Vec<u8>)>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TowerOptions {
    pub map: MapOptions,
    pub samples: usize,
    pub degrees: Vec<usize>,
    /// The ladder stops once the validation error improves by less than this factor.
    pub plateau_factor: f64,
    pub q_cap: u64,
    /// Largest pulled-back chain the q-search will build.
    pub link_budget: usize,
    pub grid_spacing: f64,
    pub grid_height: f64,
    pub ode_tolerance: f64,
    /// Continue with recorded failures instead of stopping at the first one.
    pub best_effort: bool,
}

impl Default for TowerOptions {
    fn default() -> Self {
        TowerOptions {
            map: MapOptions::default(),
            samples: 1024,
            degrees: vec![4, 8, 12, 16, 20, 24, 32, 40, 48, 64],
            plateau_factor: 2.0,
            q_cap: 1 << 20,
            link_budget: 20_000,
            grid_spacing: 0.05,
            grid_height: 4.0,
            ode_tolerance: 1e-12,
            best_effort: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerState {
    pub version: u32,
    pub h: f64,
    pub levels: Vec<RenormLevel>,
    pub theta_partials: Vec<f64>,
    /// Q_k on C/Z.
    pub chains: Vec<CircularChain>,
    pub ledger: Vec<LevelLedger>,
    /// Lowest Im(z) down to which dom(F_k) was verified on the test grid.
    pub safety_floor: Vec<f64>,
    pub stages: Vec<StageRecord>,
    pub options: TowerOptions,
}

impl TowerState {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn qs(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.q).collect()
    }

    /// q_1 … q_n.
    pub fn product(&self, n: usize) -> f64 {
        self.levels[..n].iter().map(|l| l.q as f64).product()
    }

    pub fn passed(&self) -> bool {
        self.ledger.iter().all(|l| l.passed())
    }

    fn check_level(&self, n: usize) -> Result<(), TowerError> {
        if n == 0 || n > self.levels.len() {
            Err(TowerError::NoSuchLevel(n))
        } else {
            Ok(())
        }
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> Result<TowerState, String> {
        let s: TowerState = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if s.version != STATE_VERSION {
            return Err(format!("unsupported state version {}", s.version));
        }
        if s.levels.is_empty() || s.theta_partials.len() != s.levels.len() || s.chains.len() != s.levels.len() {
            return Err("inconsistent level count".into());
        }
        if s.levels.iter().any(|l| l.q == 0) {
            return Err("q must be positive".into());
        }
        Ok(s)
    }
}

fn theta_partials(qs: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(qs.len());
    let (mut prod, mut theta) = (1.0, 0.0);
    for q in qs {
        prod *= *q as f64;
        theta += 1.0 / prod;
        out.push(theta);
    }
    out
}

pub fn init_tower(h: f64, q1: u64) -> Result<TowerState, TowerError> {
    init_tower_with(h, q1, TowerOptions::default())
}

pub fn init_tower_with(h: f64, q1: u64, options: TowerOptions) -> Result<TowerState, TowerError> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(TowerError::BadParameters(format!("h must be positive, got {h}")));
    }
    if q1 < 5 {
        return Err(TowerError::BadParameters(format!("q1 must be at least 5, got {q1}")));
    }
    let mut state = TowerState {
        version: STATE_VERSION,
        h,
        levels: vec![RenormLevel::identity(q1)],
        theta_partials: theta_partials(&[q1]),
        chains: Vec::new(),
        ledger: Vec::new(),
        safety_floor: Vec::new(),
        stages: Vec::new(),
        options,
    };
    let q = pullback_chain(&state, 1)?;
    state.chains.push(q);
    let ledger = level_ledger(&state, 1);
    state.safety_floor.push(safety_floor(&state, 1));
    state.ledger.push(ledger);
    Ok(state)
}

/// (S_n(z), S_n'(z)).
pub fn eval_s(state: &TowerState, n: usize, z: C64) -> Result<(C64, C64), TowerError> {
    state.check_level(n)?;
    let (mut w, mut d) = (z, C64::new(1.0, 0.0));
    for (k, level) in state.levels[..n].iter().enumerate() {
        let (v, dv) = level.eval(w).map_err(|e| match e {
            CylError::OutOfValidityStrip { im, floor } => TowerError::OutOfValidityStrip { level: k + 1, im, floor },
            other => TowerError::Stage { level: k + 1, stage: "eval".into(), message: other.to_string() },
        })?;
        w = v;
        d *= dv;
    }
    Ok((w, d))
}

/// X_n = 1/S_n'.
pub fn vector_field(state: &TowerState, n: usize, z: C64) -> Result<C64, TowerError> {
    Ok(1.0 / eval_s(state, n, z)?.1)
}

// Dormand–Prince 5(4)
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// G_n(z): time 1 of ż = X_n(z), adaptive Dormand–Prince. Any evaluation
/// outside the certified strips aborts with DomainEscape.
pub fn flow_time1(state: &TowerState, n: usize, z: C64) -> Result<C64, TowerError> {
    state.check_level(n)?;
    let tol = state.options.ode_tolerance;
    let field = |t: f64, z: C64| -> Result<C64, TowerError> {
        vector_field(state, n, z).map_err(|e| match e {
            TowerError::OutOfValidityStrip { .. } | TowerError::Stage { .. } => {
                TowerError::DomainEscape { level: n, t, at: z }
            }
            other => other,
        })
    };
    let (mut t, mut z) = (0.0, z);
    let mut k1 = field(0.0, z)?;
    let mut h = (0.1 / (k1.norm() + 1e-300)).min(1.0);
    for _ in 0..100_000 {
        if t >= 1.0 {
            return Ok(z);
        }
        if t + h > 1.0 {
            h = 1.0 - t;
        }
        let mut k = [C64::new(0.0, 0.0); 7];
        k[0] = k1;
        let mut bad = None;
        for s in 0..6 {
            let mut y = z;
            for j in 0..=s {
                y += h * A[s][j] * k[j];
            }
            match field(t + h, y) {
                Ok(v) => k[s + 1] = v,
                Err(e) => {
                    bad = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = bad {
            // a stage left the domain: retry shorter unless the step is already tiny
            if h < 1e-10 {
                return Err(e);
            }
            h *= 0.25;
            continue;
        }
        let mut znew = z;
        for j in 0..6 {
            znew += h * A[5][j] * k[j];
        }
        let mut err = C64::new(0.0, 0.0);
        for j in 0..7 {
            err += h * E[j] * k[j];
        }
        let scale = tol * (1.0 + z.norm().max(znew.norm()));
        let ratio = err.norm() / scale;
        if ratio <= 1.0 {
            t += h;
            z = znew;
            k1 = k[6];
        }
        let fac = if ratio > 0.0 { 0.9 * ratio.powf(-0.2) } else { 5.0 };
        h *= fac.clamp(0.2, 5.0);
    }
    Err(TowerError::DomainEscape { level: n, t, at: z })
}

/// F_n = G_n ∘ … ∘ G_1.
pub fn eval_f(state: &TowerState, n: usize, z: C64) -> Result<C64, TowerError> {
    state.check_level(n)?;
    let mut w = z;
    for k in 1..=n {
        w = flow_time1(state, k, w)?;
    }
    Ok(w)
}

/// S_n⁻¹(S_n(z) + 1): the same map as G_n where the inverse branch exists.
pub fn conjugated_translation(state: &TowerState, n: usize, z: C64) -> Result<C64, TowerError> {
    state.check_level(n)?;
    let mut fwd = vec![z];
    for (k, level) in state.levels[..n].iter().enumerate() {
        let w = *fwd.last().unwrap();
        let (v, _) = level
            .eval(w)
            .map_err(|e| TowerError::OutOfValidityStrip { level: k + 1, im: w.im, floor: e_floor(&e) })?;
        fwd.push(v);
    }
    let mut target = fwd[n] + 1.0;
    for k in (0..n).rev() {
        let seed = (fwd[k + 1], fwd[k]);
        target = state.levels[k]
            .inverse(target, Some(seed))
            .map_err(|e| TowerError::NewtonDivergence(format!("level {}: {e}", k + 1)))?;
    }
    Ok(target)
}

/// S_n⁻¹(w) on the branch continued down from the upper end, level by level.
pub fn inverse_s(state: &TowerState, n: usize, w: C64) -> Result<C64, TowerError> {
    state.check_level(n)?;
    let mut t = w;
    for k in (0..n).rev() {
        t = state.levels[k]
            .inverse(t, None)
            .map_err(|e| TowerError::NewtonDivergence(format!("level {}: {e}", k + 1)))?;
    }
    Ok(t)
}

fn e_floor(e: &CylError) -> f64 {
    match e {
        CylError::OutOfValidityStrip { floor, .. } => *floor,
        _ => f64::NAN,
    }
}

/// Φ_n(F_n(z)) - Φ_n(z) - θ_n with Φ_n = S_n/(q_1…q_n).
pub fn conjugacy_residual(state: &TowerState, n: usize, z: C64) -> Result<C64, TowerError> {
    let p = state.product(n);
    let f = eval_f(state, n, z)?;
    Ok((eval_s(state, n, f)?.0 - eval_s(state, n, z)?.0) / p - state.theta_partials[n - 1])
}

/// Q_k: the preimage of C_{q_1…q_k} under S_k, as a chain on C/Z.
pub fn pullback_chain(state: &TowerState, k: usize) -> Result<CircularChain, TowerError> {
    state.check_level(k)?;
    pull_back(&state.levels[..k])
}

fn pull_back(levels: &[RenormLevel]) -> Result<CircularChain, TowerError> {
    let m: u64 = levels.iter().map(|l| l.q).product();
    let top = standard_chain(m as usize).map_err(|e| TowerError::BadParameters(e.to_string()))?;
    let links = top
        .links
        .par_iter()
        .map(|link| {
            let mut p = link.clone();
            for (j, level) in levels.iter().enumerate().rev() {
                p = level
                    .pull_polygon(&p)
                    .map_err(|e| TowerError::NewtonDivergence(format!("level {}: {e}", j + 1)))?;
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>, TowerError>>()?;
    CircularChain::new(1, links).map_err(|e| TowerError::BadParameters(e.to_string()))
}

fn grid_row(y: f64, spacing: f64) -> Vec<C64> {
    let n = (1.0 / spacing).round().max(1.0) as usize;
    (0..n).map(|i| C64::new(i as f64 / n as f64, y)).collect()
}

/// Does F_n exist on every grid point of the row Im = y?
fn row_in_domain(state: &TowerState, n: usize, y: f64) -> Result<(), TowerError> {
    grid_row(y, state.options.grid_spacing)
        .par_iter()
        .map(|z| eval_f(state, n, *z).map(|_| ()))
        .collect::<Result<Vec<()>, _>>()
        .map(|_| ())
}

/// Lowest row height in [-h-2, 4] from which up the grid rows lie in dom F_n
/// (bisection, assuming the domain is an upper set on the grid).
pub fn safety_floor(state: &TowerState, n: usize) -> f64 {
    let (mut lo, mut hi) = (-state.h - 2.0, 4.0);
    if row_in_domain(state, n, lo).is_ok() {
        return lo;
    }
    if row_in_domain(state, n, hi).is_err() {
        return f64::INFINITY;
    }
    for _ in 0..14 {
        let mid = 0.5 * (lo + hi);
        if row_in_domain(state, n, mid).is_ok() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn record(id: u8, passed: bool, margin: Option<f64>, detail: String) -> ConditionRecord {
    ConditionRecord { id, passed, vacuous: false, margin, detail }
}

fn vacuous(id: u8, detail: &str) -> ConditionRecord {
    ConditionRecord { id, passed: true, vacuous: true, margin: None, detail: detail.to_string() }
}

/// (1): the inverse branch of R_k covers H_{-0.45 q_k ε_k}.
pub fn condition_1(state: &TowerState, k: usize) -> ConditionRecord {
    let level = &state.levels[k - 1];
    if level.is_identity() {
        return record(1, true, None, "R_k is linear".into());
    }
    match level.branch().probe() {
        Ok(rep) if rep.max_residual <= 1e-10 => {
            let reach = 0.45 * level.eps * level.q as f64;
            record(1, true, Some(reach), format!("R_k⁻¹ certified on Im > -{reach:.4}, probe residual {:.1e}", rep.max_residual))
        }
        Ok(rep) => record(1, false, Some(-rep.max_residual), format!("probe residual {:.1e}", rep.max_residual)),
        Err(e) => record(1, false, None, format!("probe failed: {e}")),
    }
}

/// (2): Q_k is a circular chain crookedly embedded in Q_{k-1}.
pub fn condition_2(chains: &[CircularChain], k: usize) -> ConditionRecord {
    if k == 1 {
        return vacuous(2, "no Q_0");
    }
    let (inner, outer) = (&chains[k - 1], &chains[k - 2]);
    let (is_chain, _) = is_circular_chain(inner);
    if !is_chain {
        return record(2, false, None, "Q_k is not a circular chain".into());
    }
    match crooked_embedding_witness(inner, outer) {
        Some(w) => record(2, true, None, format!("witness of length {}", w.f_values.len())),
        None => {
            let outside = inner
                .links
                .iter()
                .filter(|l| !outer.links.iter().any(|o| (-1..=1).any(|s| o.translated(C64::new(s as f64, 0.0)).contains_closure_of(l))))
                .count();
            record(2, false, None, format!("no crooked witness; {outside} of {} links lie in no link of Q_(k-1)", inner.len()))
        }
    }
}

/// (3): links of Q_k have diameter at most 1/k.
pub fn condition_3(chains: &[CircularChain], k: usize) -> ConditionRecord {
    let d = link_diameter_sup(&chains[k - 1]);
    let bound = 1.0 / k as f64;
    record(3, d <= bound, Some(bound - d), format!("sup diameter {d:.6} vs {bound:.6}"))
}

/// (4): F_k is defined on the grid of the line Im = -h - 1/k.
pub fn condition_4(state: &TowerState, k: usize) -> (ConditionRecord, bool) {
    let y = -state.h - 1.0 / k as f64;
    let row = grid_row(y, state.options.grid_spacing);
    let results: Vec<Result<C64, TowerError>> = row.par_iter().map(|z| eval_f(state, k, *z)).collect();
    let mut escaped = 0;
    let mut at_start = 0;
    for r in &results {
        if let Err(e) = r {
            escaped += 1;
            if matches!(e, TowerError::DomainEscape { t, .. } if *t == 0.0) {
                at_start += 1;
            }
        }
    }
    let floor = safety_floor(state, k);
    let passed = escaped == 0;
    let detail = if passed {
        format!("all {} trajectories from Im = {y:.3} stay certified", row.len())
    } else {
        format!("{escaped} of {} trajectories from Im = {y:.3} escape ({at_start} at t = 0); domain verified down to Im = {floor:.3}", row.len())
    };
    // an escape at t = 0 happens in S_(k-1), which does not depend on q_k
    (record(4, passed, Some(y - floor), detail), at_start > 0)
}

/// (5): grid-sup |F_k - F_(k-1)| on H_{-h}, demanded with factor 2 below 2^-k.
pub fn condition_5(state: &TowerState, k: usize) -> ConditionRecord {
    if k == 1 {
        return vacuous(5, "no F_0");
    }
    let o = &state.options;
    let rows = (o.grid_height / o.grid_spacing).round() as usize;
    let mut heights: Vec<f64> = (0..=rows).map(|i| -state.h + i as f64 * o.grid_spacing).collect();
    // asymptotic tail above the grid
    heights.extend([1.0, 2.0, 4.0, 8.0].iter().map(|d| -state.h + o.grid_height + d));
    let pts: Vec<C64> = heights.iter().flat_map(|y| grid_row(*y, o.grid_spacing)).collect();
    let diffs: Vec<Option<f64>> = pts
        .par_iter()
        .map(|z| match (eval_f(state, k, *z), eval_f(state, k - 1, *z)) {
            (Ok(a), Ok(b)) => Some((a - b).norm()),
            _ => None,
        })
        .collect();
    let undefined = diffs.iter().filter(|d| d.is_none()).count();
    let sup = diffs.iter().flatten().fold(0.0f64, |a, &b| if b > a || b.is_nan() { b } else { a });
    let budget = 0.5f64.powi(k as i32);
    let passed = undefined == 0 && 2.0 * sup <= budget;
    let detail = if undefined == 0 {
        format!("sup {sup:.3e} on {} points, budget {budget} with factor 2", pts.len())
    } else {
        format!("F_k undefined at {undefined} of {} grid points; sup {sup:.3e} over the rest", pts.len())
    };
    record(5, passed, Some(budget - 2.0 * sup), detail)
}

pub fn condition_6(state: &TowerState, k: usize) -> ConditionRecord {
    let q = state.levels[k - 1].q;
    record(6, q >= k as u64, Some(q as f64 - k as f64), format!("q_{k} = {q}"))
}

/// All six conditions for level k, from the stored data.
pub fn level_ledger(state: &TowerState, k: usize) -> LevelLedger {
    let (c4, _) = condition_4(state, k);
    LevelLedger {
        level: k,
        conditions: vec![
            condition_1(state, k),
            condition_2(&state.chains, k),
            condition_3(&state.chains, k),
            c4,
            condition_5(state, k),
            condition_6(state, k),
        ],
        provisional: false,
    }
}

/// Appends a given level with its chain, ledger and safety floor; the
/// ledger is marked provisional if it fails.
pub fn append_level(state: &TowerState, level: RenormLevel) -> Result<TowerState, TowerError> {
    let mut next = with_level(state, level)?;
    let k = next.levels.len();
    let mut ledger = level_ledger(&next, k);
    ledger.provisional = !ledger.passed();
    next.safety_floor.push(safety_floor(&next, k));
    next.ledger.push(ledger);
    Ok(next)
}

/// The state with a candidate level appended (chain and θ included, ledger not).
fn with_level(state: &TowerState, level: RenormLevel) -> Result<TowerState, TowerError> {
    let mut next = state.clone();
    next.levels.push(level);
    next.theta_partials = theta_partials(&next.qs());
    let k = next.levels.len();
    let chain = pullback_chain(&next, k)?;
    next.chains.push(chain);
    Ok(next)
}

struct Trial {
    ledger: LevelLedger,
    q_independent: bool,
}

/// Conditions for candidate q; `only` restricts to a subset (others are skipped).
fn try_q(state: &TowerState, base: &RenormLevel, q: u64, only: Option<&[u8]>) -> Result<Trial, TowerError> {
    let next = with_level(state, RenormLevel { q, ..base.clone() })?;
    let k = next.levels.len();
    let wanted = |id: u8| only.is_none_or(|o| o.contains(&id));
    let mut conditions = Vec::new();
    let mut q_independent = false;
    if wanted(6) {
        conditions.push(condition_6(&next, k));
    }
    if wanted(1) {
        conditions.push(condition_1(&next, k));
    }
    if wanted(3) {
        conditions.push(condition_3(&next.chains, k));
    }
    if wanted(2) {
        conditions.push(condition_2(&next.chains, k));
    }
    if wanted(4) {
        let (c, qi) = condition_4(&next, k);
        q_independent = qi;
        conditions.push(c);
    }
    if wanted(5) {
        conditions.push(condition_5(&next, k));
    }
    conditions.sort_by_key(|c| c.id);
    let ledger = LevelLedger { level: k, conditions, provisional: false };
    Ok(Trial { ledger, q_independent })
}

/// Least q >= q0 passing the given conditions, by doubling then bisection.
fn search_q(
    state: &TowerState,
    base: &RenormLevel,
    q0: u64,
    only: Option<&[u8]>,
    trials: &mut Vec<(u64, Vec<u8>)>,
) -> Result<u64, TowerError> {
    let k = state.levels.len() + 1;
    let m = state.product(state.levels.len()) as u64;
    let opts = &state.options;
    let mut run = |q: u64| -> Result<Trial, TowerError> {
        if q > opts.q_cap {
            return Err(stage(k, "choose_q", format!("no q up to the cap {} passes", opts.q_cap)));
        }
        if (m * q) as usize > opts.link_budget {
            return Err(stage(k, "choose_q", format!("Q_{k} would need {} links, above the budget {}", m * q, opts.link_budget)));
        }
        let t = try_q(state, base, q, only)?;
        debug!("q = {q}: failed {:?}", t.ledger.failed());
        trials.push((q, t.ledger.failed()));
        Ok(t)
    };
    let mut lo = None;
    let mut q = q0;
    loop {
        let t = run(q)?;
        if t.ledger.passed() {
            break;
        }
        if t.q_independent {
            return Err(stage(k, "choose_q", format!("condition (4) fails for every q: {}", t.ledger.get(4).map_or("", |c| &c.detail))));
        }
        lo = Some(q);
        q = q.saturating_mul(2);
    }
    if let Some(mut lo) = lo {
        while q - lo > 1 {
            let mid = lo + (q - lo) / 2;
            if run(mid)?.ledger.passed() {
                q = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(q)
}

fn smallest_dyadic_at_least(x: f64) -> f64 {
    let mut e = 1.0;
    while e < x {
        e *= 2.0;
    }
    while e / 2.0 >= x {
        e /= 2.0;
    }
    e
}

/// One induction step: target curve, conformal map, ε, Runge fit of B_(n+1),
/// choice of q_(n+1), and the ledger of the new level. `target` overrides the
/// generated crooked curve.
pub fn advance_level(state: &TowerState, target: Option<&JordanPolyline>) -> Result<TowerState, TowerError> {
    let n = state.levels.len();
    let k = n + 1;
    let opts = state.options.clone();
    let best_effort = opts.best_effort;
    if !best_effort {
        if let Some(l) = state.ledger.iter().find(|l| !l.passed()) {
            return Err(TowerError::LedgerFailed { level: l.level, failed: l.failed() });
        }
    }
    let m = state.product(n) as usize;
    let mut notes = Vec::new();

    // (a) target
    let (curve, target_name) = match target {
        Some(j) => (j.clone(), "supplied".to_string()),
        None => (generate_crooked_curve(m).map_err(|e| stage(k, "target", e))?, format!("generated crooked curve, m = {m}")),
    };
    if curve.period != m as u64 {
        return Err(stage(k, "target", format!("curve has period {}, the cylinder needs {m}", curve.period)));
    }
    info!("level {k}: mapping {target_name}");

    // (b) conformal map
    let phi = riemann_map_with(&curve, &opts.map).map_err(|e| stage(k, "mapping", e))?;
    let floor = phi.accuracy.certified_height;
    info!("level {k}: map certified above Im = {floor}, eps_map {:.2e}", phi.accuracy.eps_map);

    // (c) ε
    let chain = standard_chain(m).map_err(|e| stage(k, "choose_epsilon", e))?;
    let (eps, eps_source) = match choose_epsilon_stably_crooked(&phi, &chain) {
        Ok((eps, clearance)) => (eps, format!("stably crooked, clearance {clearance:.3e}")),
        Err(e @ MapError::NoEpsilonFound { .. }) if best_effort => {
            let eps = smallest_dyadic_at_least(4.0 * floor);
            warn!("level {k}: {e}; continuing with eps = {eps}");
            notes.push(format!("choose_epsilon: {e}"));
            (eps, "best effort: 4 × certified height".to_string())
        }
        Err(e) => return Err(stage(k, "choose_epsilon", e)),
    };

    // (d) Runge fit of w on the image of Im = ε/4 (raised to the certified region)
    let height = (eps / 4.0).max(floor);
    let train = extract_w(&phi, height, opts.samples).map_err(|e| stage(k, "runge", e))?;
    let val = extract_w(&phi, height, 2 * opts.samples + 1).map_err(|e| stage(k, "runge", e))?;
    let compact = extract_w(&phi, (eps / 2.0).max(height), opts.samples / 4).map_err(|e| stage(k, "runge", e))?;
    let rho = default_radius(state.h);
    let mut ladder: Vec<LadderStep> = Vec::new();
    let mut best: Option<(usize, PeriodicEntireMap, f64)> = None;
    let mut last_err = f64::INFINITY;
    for &d in &opts.degrees {
        let fit = match fit_polynomial(&train, &val, d) {
            Ok(f) => f,
            Err(e) => {
                notes.push(format!("degree {d}: {e}"));
                break;
            }
        };
        let mut step = LadderStep {
            degree: d,
            train_error: fit.train_error,
            validation_error: fit.validation_error,
            conditioning: fit.conditioning,
            probe_residual: None,
            defect: None,
            trunc_radius: None,
            note: String::new(),
        };
        let plateau = !(fit.validation_error * opts.plateau_factor <= last_err);
        match build_psi(&fit.coeffs, train.v0, eps, rho) {
            Ok((psi, probe)) => {
                step.probe_residual = Some(probe.max_residual);
                step.trunc_radius = Some(psi.trunc_radius);
                let branch = InverseBranch { psi: &psi, eps };
                match inverse_defect(branch, &compact) {
                    Ok(def) if def.skipped == 0 => {
                        step.defect = Some(def.max);
                        if probe.max_residual <= 1e-10 && !plateau {
                            best = Some((d, psi.clone(), probe.max_residual));
                        }
                    }
                    Ok(def) => step.note = format!("{} of {} compact points below the validity strip", def.skipped, compact.s.len()),
                    Err(e) => step.note = e.to_string(),
                }
            }
            Err(e) => step.note = e.to_string(),
        }
        info!("level {k}: degree {d}: validation {:.2e} {}", fit.validation_error, step.note);
        let failed = step.defect.is_none();
        ladder.push(step);
        if plateau || failed {
            break;
        }
        last_err = fit.validation_error;
    }
    let (degree, psi, probe_residual) = best.ok_or_else(|| stage(k, "runge", "no degree gave a certified inverse branch"))?;

    // (e) q
    let base = RenormLevel { b: psi, q: 1, eps };
    let q0 = (k as u64).max(state.levels[n - 1].q);
    let mut q_trials = Vec::new();
    let q = if best_effort {
        let q = search_q(state, &base, q0, Some(&[1, 3, 6]), &mut q_trials)?;
        notes.push("q chosen from conditions (1), (3), (6) only".to_string());
        q
    } else {
        search_q(state, &base, q0, None, &mut q_trials)?
    };

    // (f) append
    let mut next = append_level(state, RenormLevel { q, ..base })?;
    if next.ledger[k - 1].provisional {
        warn!("level {k}: appended with failed conditions {:?}", next.ledger[k - 1].failed());
    }
    next.stages.push(StageRecord {
        level: k,
        target: target_name,
        map_accuracy: phi.accuracy,
        eps,
        eps_source,
        sample_height: height,
        v0: train.v0,
        ladder,
        degree,
        probe_residual,
        q_trials,
        notes,
    });
    Ok(next)
}

/// θ - θ_n ≤ 2/(q_1…q_(n+1)) when every later q is at least 2.
pub fn tail_bound(qs: &[u64], q_next: u64) -> f64 {
    let p: f64 = qs.iter().map(|q| *q as f64).product();
    2.0 / (p * q_next as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn identity_tower(qs: &[u64]) -> TowerState {
        let mut s = init_tower(1.0, qs[0]).unwrap();
        for q in &qs[1..] {
            s = with_level(&s, RenormLevel::identity(*q)).unwrap();
        }
        s
    }

    #[test]
    fn base_tower() {
        let s = init_tower(1.0, 5).unwrap();
        assert_eq!(s.theta_partials, vec![0.2]);
        assert!(s.passed(), "{:?}", s.ledger);
        let l = &s.ledger[0];
        assert!(l.get(2).unwrap().vacuous && l.get(5).unwrap().vacuous);
        assert!((link_diameter_sup(&s.chains[0]) - 13f64.sqrt() / 10.0).abs() < 1e-12);
        let z = c(0.3, -2.0);
        assert_eq!(eval_f(&s, 1, z).unwrap(), z + 0.2);
        assert!(matches!(init_tower(1.0, 4), Err(TowerError::BadParameters(_))));
        assert!(matches!(init_tower(0.0, 5), Err(TowerError::BadParameters(_))));
    }

    #[test]
    fn base_chain_is_scaled_standard_chain() {
        let s = init_tower(1.0, 5).unwrap();
        for (i, l) in s.chains[0].links.iter().enumerate() {
            let b = l.bbox();
            let x0 = i as f64 / 5.0 - 0.05;
            assert!((b.min_x - x0).abs() < 1e-15 && (b.max_x - (i as f64 / 5.0 + 0.25)).abs() < 1e-15);
            assert!(b.min_y.abs() < 1e-15 && (b.max_y - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_tower_closed_forms() {
        let s = identity_tower(&[5, 5]);
        let z = c(0.37, -1.2);
        let (v, d) = eval_s(&s, 2, z).unwrap();
        assert!((v - 25.0 * z).norm() < 1e-14 && (d - 25.0).norm() < 1e-14);
        assert!((vector_field(&s, 2, z).unwrap() - 0.04).norm() < 1e-15);
        assert!((flow_time1(&s, 2, z).unwrap() - z - 0.04).norm() < 1e-12);
        assert!((eval_f(&s, 2, z).unwrap() - z - 0.24).norm() < 1e-11);
        assert!(conjugacy_residual(&s, 2, z).unwrap().norm() < 1e-11);
        assert!((conjugated_translation(&s, 2, z).unwrap() - z - 0.04).norm() < 1e-14);
    }

    #[test]
    fn dyadic_rounding() {
        assert_eq!(smallest_dyadic_at_least(1.0), 1.0);
        assert_eq!(smallest_dyadic_at_least(0.26), 0.5);
        assert_eq!(smallest_dyadic_at_least(0.0625), 0.0625);
        assert_eq!(smallest_dyadic_at_least(3.0), 4.0);
    }

    #[test]
    fn theta_and_tail() {
        let t = theta_partials(&[5, 5]);
        assert!(t[0] == 0.2 && (t[1] - 0.24).abs() < 1e-16);
        assert!((tail_bound(&[5, 25], 3) - 2.0 / 375.0).abs() < 1e-18);
    }
}
