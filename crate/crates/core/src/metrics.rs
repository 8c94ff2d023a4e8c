//! Rank statistics, budget curves and the cost-surface report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judges::{
    apply_budget, no_judge_outcomes, rank_for_verification, EntropyScore, JudgeError, JudgeOutcome, JudgeStrategy,
    StrategyKind, VerificationOracle,
};
use crate::signals::SignalVector;
use crate::trace_model::{QueryRecord, TraceKey, TruthStatus};
use crate::Execution;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least one positive and one negative example")]
    DegenerateClasses,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("input is constant or shorter than two")]
    ConstantInput,
    #[error("non-finite score")]
    NonFinite,
    #[error("budget outcomes cover different trace sets")]
    InconsistentCorpus,
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Average ranks (1-based), ties receiving the mean of the ranks they span.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve, `P(pos > neg) + ½ P(pos = neg)`, via the
/// Mann-Whitney U statistic on midranks.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64, MetricsError> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let n_pos = scores.iter().filter(|(_, p)| *p).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateClasses);
    }
    let values: Vec<f64> = scores.iter().map(|(s, _)| *s).collect();
    let ranks = average_ranks(&values);
    let rank_sum: f64 = ranks.iter().zip(scores).filter(|(_, (_, p))| *p).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::ConstantInput);
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y)).ok_or(MetricsError::ConstantInput)
}

/// Fraction of outcomes counted correct: a correct answer on a Determined
/// query or an abstention on an Underdetermined one.
pub fn accuracy(outcomes: &[JudgeOutcome]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.counts_correct()).count() as f64 / outcomes.len() as f64
}

/// `(budget, accuracy)` points sorted by budget.
pub fn budget_curve(outcomes_by_budget: &[(f64, Vec<JudgeOutcome>)]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let key_set = |o: &[JudgeOutcome]| o.iter().map(JudgeOutcome::key).collect::<BTreeSet<TraceKey>>();
    if let Some((_, first)) = outcomes_by_budget.first() {
        let reference = key_set(first);
        for (_, o) in &outcomes_by_budget[1..] {
            if o.len() != first.len() || key_set(o) != reference {
                return Err(MetricsError::InconsistentCorpus);
            }
        }
    }
    let mut points: Vec<(f64, f64)> = outcomes_by_budget.iter().map(|(b, o)| (*b, accuracy(o))).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub strategy: StrategyKind,
    pub budget: f64,
    pub accuracy: f64,
}

/// Accuracy for every (strategy, budget) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSurface {
    pub cells: Vec<SurfaceCell>,
    pub n_traces: usize,
    pub baseline_accuracy: f64,
}

impl CostSurface {
    pub fn get(&self, strategy: StrategyKind, budget: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.strategy == strategy && (c.budget - budget).abs() < 1e-12)
            .map(|c| c.accuracy)
    }

    pub fn strategies(&self) -> Vec<StrategyKind> {
        let mut s: Vec<StrategyKind> = self.cells.iter().map(|c| c.strategy).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn budgets(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.cells.iter().map(|c| c.budget).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    pub fn curve(&self, strategy: StrategyKind) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.strategy == strategy)
            .map(|c| (c.budget, c.accuracy))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }

    /// Checks that NoJudge cells equal the baseline and the grid is complete.
    pub fn is_consistent(&self) -> bool {
        let strategies = self.strategies();
        let budgets = self.budgets();
        let complete = self.cells.len() == strategies.len() * budgets.len()
            && strategies
                .iter()
                .all(|&s| budgets.iter().all(|&b| self.get(s, b).is_some()));
        let baseline_ok = self
            .cells
            .iter()
            .filter(|c| c.strategy == StrategyKind::NoJudge)
            .all(|c| c.accuracy == self.baseline_accuracy);
        complete && baseline_ok
    }

    /// Cost-surface CSV, `strategy,budget,accuracy,n,baseline`, cells in
    /// strategy then budget order.
    pub fn to_csv(&self) -> String {
        let mut cells = self.cells.clone();
        cells.sort_by(|a, b| a.strategy.cmp(&b.strategy).then(a.budget.total_cmp(&b.budget)));
        let mut out = String::from("strategy,budget,accuracy,n,baseline\n");
        for c in cells {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{},{:.4}",
                c.strategy, c.budget, c.accuracy, self.n_traces, self.baseline_accuracy
            );
        }
        out
    }

    /// Line chart of accuracy against budget, one polyline per strategy.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const PAD: f64 = 56.0;
        const COLORS: [&str; 4] = ["#7f7f7f", "#1f77b4", "#d62728", "#2ca02c"];
        let budgets = self.budgets();
        let bmax = budgets.last().copied().unwrap_or(1.0).max(1e-9);
        let accs: Vec<f64> = self.cells.iter().map(|c| c.accuracy).collect();
        let lo = (accs.iter().copied().fold(1.0, f64::min) * 20.0).floor() / 20.0;
        let hi = (accs.iter().copied().fold(0.0, f64::max) * 20.0).ceil() / 20.0;
        let (lo, hi) = if hi - lo < 0.05 { (lo.max(0.05) - 0.05, hi) } else { (lo, hi) };
        let x = |b: f64| PAD + (W - 2.0 * PAD) * b / bmax;
        let y = |a: f64| H - PAD - (H - 2.0 * PAD) * (a - lo) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
            H - PAD,
            W - PAD,
            H - PAD
        );
        let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{:.2}" stroke="black"/>"#, H - PAD);
        for &b in &budgets {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{:.0}%</text>"#,
                x(b),
                H - PAD + 18.0,
                b * 100.0
            );
        }
        let steps = ((hi - lo) / 0.05).round() as usize;
        for i in 0..=steps {
            let a = lo + 0.05 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.0}%</text>"#,
                PAD - 6.0,
                y(a) + 4.0,
                a * 100.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">verification budget</text>"#,
            W / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">accuracy</text>"#,
            H / 2.0,
            H / 2.0
        );
        for (i, strategy) in self.strategies().into_iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = self
                .curve(strategy)
                .iter()
                .map(|&(b, a)| format!("{:.2},{:.2}", x(b), y(a)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                pts.join(" ")
            );
            for &(b, a) in &self.curve(strategy) {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, x(b), y(a));
            }
            let ly = PAD + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
                W - PAD - 110.0,
                W - PAD - 90.0
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{strategy}</text>"#, W - PAD - 84.0, ly + 4.0);
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Builds the cost surface for `strategies × budgets`.
///
/// `oracle_for` supplies the verifier each strategy uses, so the composed
/// judge can consult its citation index while the others do not. Cells are
/// computed independently and may run in parallel.
pub fn cost_surface<'a>(
    signals: &[SignalVector],
    queries: &BTreeMap<String, QueryRecord>,
    strategies: &[StrategyKind],
    budgets: &[f64],
    entropy_score: EntropyScore,
    oracle_for: &(dyn Fn(StrategyKind) -> &'a (dyn VerificationOracle + 'a) + Sync),
    exec: Execution,
) -> Result<CostSurface, MetricsError> {
    if signals.is_empty() {
        return Err(JudgeError::EmptyCorpus.into());
    }
    let keys: Vec<TraceKey> = signals.iter().map(|s| s.key.clone()).collect();
    let baseline = accuracy(&no_judge_outcomes(&keys, oracle_for(StrategyKind::NoJudge))?);
    let mut grid = Vec::new();
    for &s in strategies {
        for &b in budgets {
            grid.push((s, b));
        }
    }
    let cells = exec.try_map(&grid, |&(kind, budget)| -> Result<SurfaceCell, MetricsError> {
        let accuracy = if kind == StrategyKind::NoJudge {
            baseline
        } else {
            let strategy = JudgeStrategy::new(kind, budget, entropy_score)?;
            let ranking = rank_for_verification(signals, &strategy, queries)?;
            accuracy(&apply_budget(&ranking, budget, oracle_for(kind), Execution::Sequential)?)
        };
        Ok(SurfaceCell {
            strategy: kind,
            budget,
            accuracy,
        })
    })?;
    Ok(CostSurface {
        cells,
        n_traces: signals.len(),
        baseline_accuracy: baseline,
    })
}

/// Writes `cost_surface.csv` and `budget_curve.svg` into `dir`.
pub fn emit_cost_surface(surface: &CostSurface, dir: &Path) -> Result<Vec<PathBuf>, MetricsError> {
    let csv_path = dir.join("cost_surface.csv");
    let svg_path = dir.join("budget_curve.svg");
    write_file(&csv_path, &surface.to_csv())?;
    write_file(&svg_path, &surface.to_svg())?;
    Ok(vec![csv_path, svg_path])
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), MetricsError> {
    fs::write(path, contents).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Named per-trace signals scored for the AUC report. `None` means the
/// trace lacks the signal.
pub type SignalFn = fn(&SignalVector) -> Option<f64>;

pub const AUC_SIGNALS: [(&str, SignalFn); 8] = [
    ("mean_entropy", |s| Some(s.mean_entropy)),
    ("max_entropy", |s| Some(s.max_entropy)),
    ("entropy_std", |s| Some(s.entropy_std)),
    ("spike_count", |s| Some(s.spike_count as f64)),
    ("response_length", |s| Some(s.response_length as f64)),
    ("hedge_flag", |s| Some(f64::from(u8::from(s.hedge_flag)))),
    ("refusal_flag", |s| Some(f64::from(u8::from(s.refusal_flag)))),
    ("topk_entropy_lb_mean", |s| s.topk_entropy_lb_mean),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub signal: String,
    /// `pooled` or a model id.
    pub scope: String,
    pub auc: Option<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Per-signal AUC for separating Underdetermined (positive) from Determined
/// traces, pooled and per model.
pub fn auc_report(signals: &[SignalVector], queries: &BTreeMap<String, QueryRecord>) -> Vec<AucRow> {
    let mut scopes: Vec<Option<&str>> = vec![None];
    let models: BTreeSet<&str> = signals.iter().map(|s| s.key.model_id.as_str()).collect();
    scopes.extend(models.into_iter().map(Some));
    let mut rows = Vec::new();
    for (name, f) in AUC_SIGNALS {
        for &scope in &scopes {
            let scored: Vec<(f64, bool)> = signals
                .iter()
                .filter(|s| scope.is_none_or(|m| s.key.model_id == m))
                .filter_map(|s| {
                    let q = queries.get(&s.key.query_id)?;
                    Some((f(s)?, q.truth_status == TruthStatus::Underdetermined))
                })
                .collect();
            let n_pos = scored.iter().filter(|(_, p)| *p).count();
            if scored.is_empty() {
                continue;
            }
            rows.push(AucRow {
                signal: name.to_string(),
                scope: scope.unwrap_or("pooled").to_string(),
                auc: auc(&scored).ok(),
                n_pos,
                n_neg: scored.len() - n_pos,
            });
        }
    }
    rows
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

pub fn auc_report_csv(rows: &[AucRow]) -> String {
    let mut out = String::from("signal,scope,auc,n_pos,n_neg\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.signal, r.scope, opt4(r.auc), r.n_pos, r.n_neg);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanRow {
    pub model_a: String,
    pub model_b: String,
    pub rho: Option<f64>,
    pub n_queries: usize,
}

/// Cross-model agreement: for each model pair, Spearman's ρ between the two
/// models' mean entropies over the queries both answered.
pub fn spearman_matrix(signals: &[SignalVector]) -> Vec<SpearmanRow> {
    let mut by_model: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for s in signals {
        by_model
            .entry(s.key.model_id.as_str())
            .or_default()
            .insert(s.key.query_id.as_str(), s.mean_entropy);
    }
    let models: Vec<&str> = by_model.keys().copied().collect();
    let mut rows = Vec::new();
    for (i, a) in models.iter().enumerate() {
        for b in &models[i + 1..] {
            let (ma, mb) = (&by_model[a], &by_model[b]);
            let (x, y): (Vec<f64>, Vec<f64>) = ma
                .iter()
                .filter_map(|(q, &ea)| mb.get(q).map(|&eb| (ea, eb)))
                .unzip();
            rows.push(SpearmanRow {
                model_a: a.to_string(),
                model_b: b.to_string(),
                rho: spearman(&x, &y).ok(),
                n_queries: x.len(),
            });
        }
    }
    rows
}

pub fn spearman_matrix_csv(rows: &[SpearmanRow]) -> String {
    let mut out = String::from("model_a,model_b,rho,n_queries\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.model_a, r.model_b, opt4(r.rho), r.n_queries);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judges::{Verification, VerdictOracle};
    use crate::trace_model::Label;
    use proptest::prelude::*;

    fn brute_auc(scores: &[(f64, bool)]) -> f64 {
        let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
        let neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                wins += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    fn rank_difference_rho(x: &[f64], y: &[f64]) -> f64 {
        let rx = average_ranks(x);
        let ry = average_ranks(y);
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[(1.0, true), (1.0, true), (0.0, false)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.3, true), (0.3, false), (0.3, false)]).unwrap(), 0.5);
        assert_eq!(auc(&[(0.9, true), (0.4, true), (0.8, false), (0.1, false)]).unwrap(), 0.75);
        assert!(matches!(auc(&[(0.1, true)]), Err(MetricsError::DegenerateClasses)));
        assert!(matches!(auc(&[(f64::NAN, true), (0.0, false)]), Err(MetricsError::NonFinite)));
    }

    #[test]
    fn spearman_examples() {
        let x = [0.5, 1.0, 2.5, 7.0];
        assert!((spearman(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(matches!(spearman(&[1.0], &[1.0, 2.0]), Err(MetricsError::LengthMismatch(1, 2))));
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricsError::ConstantInput)));
    }

    #[test]
    fn midranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), [3.5, 1.0, 3.5, 2.0]);
    }

    fn outcome(id: &str, truth: TruthStatus, label: Label) -> JudgeOutcome {
        JudgeOutcome {
            query_id: id.into(),
            model_id: "m".into(),
            truth,
            selected_for_verification: false,
            intervened: false,
            final_label: label,
            rank_score: 0.0,
        }
    }

    /// 8 traces, 6 counted correct at baseline.
    fn eight() -> Vec<JudgeOutcome> {
        use Label::*;
        use TruthStatus::*;
        vec![
            outcome("a", Determined, Correct),
            outcome("b", Determined, Correct),
            outcome("c", Determined, Correct),
            outcome("d", Determined, Incorrect),
            outcome("e", Underdetermined, Refusal),
            outcome("f", Underdetermined, Refusal),
            outcome("g", Underdetermined, Refusal),
            outcome("h", Underdetermined, Incorrect),
        ]
    }

    #[test]
    fn budget_curve_points() {
        let base = eight();
        let mut full = eight();
        // the perfect oracle rescues the lone unknowable fabrication ("h")
        full[7].final_label = Label::Refusal;
        full[7].intervened = true;
        let curve = budget_curve(&[(1.0, full), (0.0, base.clone())]).unwrap();
        assert_eq!(curve, [(0.0, 0.75), (1.0, 0.875)]);
        let mut other = base.clone();
        other.pop();
        assert!(matches!(budget_curve(&[(0.0, base), (0.1, other)]), Err(MetricsError::InconsistentCorpus)));
    }

    fn table_one() -> CostSurface {
        let rows = [
            (StrategyKind::NoJudge, [0.758, 0.758, 0.758]),
            (StrategyKind::TextLength, [0.792, 0.828, 0.876]),
            (StrategyKind::TensorEntropy, [0.817, 0.867, 0.902]),
            (StrategyKind::Composed, [0.811, 0.877, 0.918]),
        ];
        let cells = rows
            .iter()
            .flat_map(|(s, accs)| {
                [0.1, 0.2, 0.3]
                    .iter()
                    .zip(accs)
                    .map(|(&budget, &accuracy)| SurfaceCell { strategy: *s, budget, accuracy })
            })
            .collect();
        CostSurface { cells, n_traces: 800, baseline_accuracy: 0.758 }
    }

    #[test]
    fn table_one_renders() {
        let surface = table_one();
        assert!(surface.is_consistent());
        let csv = surface.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 13);
        let at_ten: Vec<&str> = lines.iter().filter(|l| l.contains(",0.1000,")).copied().collect();
        assert_eq!(
            at_ten,
            [
                "nojudge,0.1000,0.7580,800,0.7580",
                "text,0.1000,0.7920,800,0.7580",
                "tensor,0.1000,0.8170,800,0.7580",
                "composed,0.1000,0.8110,800,0.7580",
            ]
        );
        let svg = surface.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg, table_one().to_svg());
    }

    #[test]
    fn surface_from_oracle() {
        let mut signals = Vec::new();
        let mut queries = BTreeMap::new();
        let mut entries = Vec::new();
        for i in 0..10 {
            let id = format!("q{i}");
            let unknowable = i >= 5;
            let truth = if unknowable { TruthStatus::Underdetermined } else { TruthStatus::Determined };
            queries.insert(
                id.clone(),
                QueryRecord {
                    query_id: id.clone(),
                    text: String::new(),
                    category: if unknowable { crate::Category::PrivateFuture } else { crate::Category::Control },
                    truth_status: truth,
                    expected_answers: if unknowable { vec![] } else { vec!["x".into()] },
                },
            );
            entries.push((
                TraceKey::new(&id, "m"),
                Verification { label: if unknowable { Label::Incorrect } else { Label::Correct }, truth },
            ));
            signals.push(SignalVector {
                key: TraceKey::new(&id, "m"),
                mean_entropy: i as f64,
                max_entropy: i as f64,
                entropy_std: 0.0,
                spike_count: 0,
                response_length: 10 - i,
                hedge_flag: false,
                refusal_flag: false,
                topk_entropy_lb_mean: None,
                degenerate: false,
            });
        }
        let oracle = VerdictOracle::new(entries);
        let pick = |_: StrategyKind| &oracle as &dyn VerificationOracle;
        let surface = cost_surface(
            &signals,
            &queries,
            &StrategyKind::ALL[..3],
            &[0.1, 0.2, 0.3],
            EntropyScore::MeanEntropy,
            &pick,
            Execution::default(),
        )
        .unwrap();
        assert!(surface.is_consistent());
        assert_eq!(surface.baseline_accuracy, 0.5);
        assert_eq!(surface.get(StrategyKind::TensorEntropy, 0.3), Some(0.8));
        assert_eq!(surface.get(StrategyKind::TextLength, 0.3), Some(0.5));
        let rows = auc_report(&signals, &queries);
        let pooled = rows.iter().find(|r| r.signal == "mean_entropy" && r.scope == "pooled").unwrap();
        assert_eq!(pooled.auc, Some(1.0));
        assert!(!rows.iter().any(|r| r.signal == "topk_entropy_lb_mean"));
    }

    #[test]
    fn spearman_matrix_pairs() {
        let mk = |q: &str, m: &str, h: f64| SignalVector {
            key: TraceKey::new(q, m),
            mean_entropy: h,
            max_entropy: h,
            entropy_std: 0.0,
            spike_count: 0,
            response_length: 1,
            hedge_flag: false,
            refusal_flag: false,
            topk_entropy_lb_mean: None,
            degenerate: false,
        };
        let s = [
            mk("a", "m1", 0.1),
            mk("b", "m1", 0.5),
            mk("c", "m1", 0.9),
            mk("a", "m2", 1.0),
            mk("b", "m2", 2.0),
            mk("c", "m2", 3.0),
            mk("a", "m3", 3.0),
        ];
        let rows = spearman_matrix(&s);
        assert_eq!(rows.len(), 3);
        assert!((rows[0].rho.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].n_queries, 1);
        assert_eq!(rows[1].rho, None);
        assert!(spearman_matrix_csv(&rows).contains("m1,m3,NA,1"));
    }

    fn score_set() -> impl Strategy<Value = Vec<(f64, bool)>> {
        (2usize..=200).prop_flat_map(|n| {
            prop::collection::vec(((0u8..20).prop_map(|v| v as f64 / 4.0), any::<bool>()), n)
                .prop_filter("both classes", |v| v.iter().any(|s| s.1) && v.iter().any(|s| !s.1))
        })
    }

    proptest! {
        #[test]
        fn auc_matches_brute_force(scores in score_set()) {
            prop_assert!((auc(&scores).unwrap() - brute_auc(&scores)).abs() <= 1e-12);
        }

        #[test]
        fn auc_negation_symmetry(
            raw in prop::collection::btree_set(-1_000_000i64..1_000_000, 2..100),
            labels in prop::collection::vec(any::<bool>(), 100),
        ) {
            let scores: Vec<(f64, bool)> = raw.iter().zip(&labels).map(|(&s, &l)| (s as f64, l)).collect();
            prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
            let neg: Vec<(f64, bool)> = scores.iter().map(|&(s, l)| (-s, l)).collect();
            prop_assert!((auc(&neg).unwrap() - (1.0 - auc(&scores).unwrap())).abs() <= 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance(
            pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..60),
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let Ok(r) = spearman(&x, &y) {
                let tx: Vec<f64> = x.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
                let ty: Vec<f64> = y.iter().map(|v| v.powi(3)).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
            }
        }

        #[test]
        fn spearman_matches_rank_difference_without_ties(
            x in prop::collection::btree_set(0i64..100_000, 3..80),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, SeedableRng};
            let x: Vec<f64> = x.into_iter().map(|v| v as f64).collect();
            let mut y = x.clone();
            y.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((spearman(&x, &y).unwrap() - rank_difference_rho(&x, &y)).abs() <= 1e-12);
        }

        #[test]
        fn budget_curve_permutation_invariant(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = eight();
            let mut shuffled = eight();
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(
                budget_curve(&[(0.0, base.clone()), (0.5, base.clone())]).unwrap(),
                budget_curve(&[(0.5, shuffled.clone()), (0.0, shuffled)]).unwrap()
            );
        }
    }
}
