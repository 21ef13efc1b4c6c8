//! Coarse-to-fine search over `(μ₁, μ₂)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GridRanges {
    pub mu1: (f64, f64),
    pub mu2: (f64, f64),
    /// Points per axis of the logarithmic first stage.
    pub log_points: usize,
    /// Points per axis of each linear refinement.
    pub linear_points: usize,
    pub stage3: bool,
}

impl Default for GridRanges {
    fn default() -> Self {
        Self {
            mu1: (1e-15, 1e-5),
            mu2: (1e-15, 1e-5),
            log_points: 11,
            linear_points: 9,
            stage3: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEvaluation {
    pub stage: u8,
    pub mu1: f64,
    pub mu2: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub mu1: f64,
    pub mu2: f64,
    pub score: f64,
    /// Winner after each stage, in order.
    pub stage_winners: Vec<(f64, f64)>,
    pub log: Vec<GridEvaluation>,
}

impl GridResult {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("stage,mu1,mu2,score\n");
        for e in &self.log {
            out.push_str(&format!("{},{:e},{:e},{}\n", e.stage, e.mu1, e.mu2, e.score));
        }
        out
    }
}

fn log_axis(range: (f64, f64), points: usize) -> Vec<f64> {
    if range.0 == range.1 || points < 2 {
        return vec![range.0];
    }
    let (a, b) = (range.0.log10(), range.1.log10());
    (0..points)
        .map(|k| 10f64.powf(a + (b - a) * k as f64 / (points - 1) as f64))
        .collect()
}

fn linear_axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
        .filter(|v| *v > 0.0)
        .collect()
}

/// The one-decade linear span the second stage searches around `w`.
pub fn refinement_span(w: f64) -> (f64, f64) {
    let r = 10f64.sqrt();
    (w / r, w * r)
}

fn better(a: &GridEvaluation, best: &Option<GridEvaluation>) -> bool {
    match best {
        None => true,
        Some(b) => {
            a.score > b.score
                || (a.score == b.score && (a.mu1, a.mu2) < (b.mu1, b.mu2))
        }
    }
}

fn run_stage<F: FnMut(f64, f64) -> f64>(
    stage: u8,
    mu1s: &[f64],
    mu2s: &[f64],
    objective: &mut F,
    log: &mut Vec<GridEvaluation>,
) -> Option<GridEvaluation> {
    let mut best = None;
    for &m1 in mu1s {
        for &m2 in mu2s {
            let e = GridEvaluation {
                stage,
                mu1: m1,
                mu2: m2,
                score: objective(m1, m2),
            };
            log.push(e);
            if !e.score.is_nan() && e.score != f64::NEG_INFINITY && better(&e, &best) {
                best = Some(e);
            }
        }
    }
    best
}

/// Maximizes `objective(μ₁, μ₂)`: a log grid, then linear refinements.
///
/// Ties go to the lexicographically smaller pair. An axis whose range is a
/// single point stays fixed throughout.
pub fn grid_search<F: FnMut(f64, f64) -> f64>(mut objective: F, ranges: &GridRanges) -> Result<GridResult> {
    for (lo, hi) in [ranges.mu1, ranges.mu2] {
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Parameter(format!("invalid search range [{lo}, {hi}]")));
        }
    }
    if ranges.log_points == 0 || ranges.linear_points < 2 {
        return Err(Error::param("grid needs at least one log point and two linear points"));
    }
    let fixed1 = ranges.mu1.0 == ranges.mu1.1;
    let fixed2 = ranges.mu2.0 == ranges.mu2.1;
    let mut log = Vec::new();
    let mut best = run_stage(
        1,
        &log_axis(ranges.mu1, ranges.log_points),
        &log_axis(ranges.mu2, ranges.log_points),
        &mut objective,
        &mut log,
    )
    .ok_or_else(|| Error::SolverAbort {
        iteration: 0,
        reason: "objective was non-finite at every grid point".into(),
    })?;
    let mut winners = vec![(best.mu1, best.mu2)];

    let n = ranges.linear_points;
    let axis = |w: f64, fixed: bool| {
        if fixed {
            vec![w]
        } else {
            let (lo, hi) = refinement_span(w);
            linear_axis(lo, hi, n)
        }
    };
    let spacing = |w: f64| {
        let (lo, hi) = refinement_span(w);
        (hi - lo) / (n - 1) as f64
    };
    let (d1, d2) = (spacing(best.mu1), spacing(best.mu2));
    if let Some(e) = run_stage(2, &axis(best.mu1, fixed1), &axis(best.mu2, fixed2), &mut objective, &mut log) {
        if better(&e, &Some(best)) {
            best = e;
        }
    }
    winners.push((best.mu1, best.mu2));

    if ranges.stage3 {
        let around = |w: f64, d: f64, fixed: bool| {
            if fixed {
                vec![w]
            } else {
                linear_axis(w - d, w + d, n)
            }
        };
        if let Some(e) = run_stage(
            3,
            &around(best.mu1, d1, fixed1),
            &around(best.mu2, d2, fixed2),
            &mut objective,
            &mut log,
        ) {
            if better(&e, &Some(best)) {
                best = e;
            }
        }
        winners.push((best.mu1, best.mu2));
    }

    Ok(GridResult {
        mu1: best.mu1,
        mu2: best.mu2,
        score: best.score,
        stage_winners: winners,
        log,
    })
}
