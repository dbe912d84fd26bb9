//! Scoring of agent predictions against benchmark cases: format rate,
//! tool / parameter / return precision, recall and F1, and pass rate.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::AnswerJudge;
use crate::sandbox::BenchmarkCase;
use crate::search::SearchResult;
use crate::trajectory::{Args, Observation};

pub const NUMERIC_RTOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("benchmark has no cases")]
    EmptyBenchmark,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedCall {
    pub tool: String,
    #[serde(default)]
    pub args: Args,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub case_id: String,
    pub trajectory: Vec<PredictedCall>,
    pub final_answer: Option<String>,
}

impl Prediction {
    pub fn from_search(result: &SearchResult) -> Self {
        let state = result.trajectory();
        let trajectory = state
            .steps
            .iter()
            .filter_map(|s| {
                let inv = s.action.invocation()?;
                Some(PredictedCall { tool: inv.tool.clone(), args: inv.args.clone(), observation: s.observation.clone() })
            })
            .collect();
        Prediction {
            case_id: result.case_id.clone().unwrap_or_default(),
            trajectory,
            final_answer: result.final_answer.clone(),
        }
    }
}

/// Predictions by case id, plus ids of lines that were present but malformed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub parsed: HashMap<String, Prediction>,
    pub malformed: Vec<String>,
    /// Lines that were not JSON objects with a `case_id`.
    pub unreadable: usize,
}

impl PredictionSet {
    pub fn from_jsonl(text: &str) -> Self {
        let mut set = PredictionSet::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<Prediction>(line) {
                Ok(p) => {
                    set.parsed.insert(p.case_id.clone(), p);
                }
                Err(_) => match serde_json::from_str::<Value>(line).ok().and_then(|v| v.get("case_id")?.as_str().map(str::to_owned)) {
                    Some(id) => set.malformed.push(id),
                    None => set.unreadable += 1,
                },
            }
        }
        set
    }

    pub fn from_predictions(preds: impl IntoIterator<Item = Prediction>) -> Self {
        let parsed = preds.into_iter().map(|p| (p.case_id.clone(), p)).collect();
        PredictionSet { parsed, ..Default::default() }
    }

    pub fn read(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
        Ok(Self::from_jsonl(&text))
    }
}

/// Trimmed, case-folded text, or a number compared with relative tolerance.
#[derive(Clone, Debug, PartialEq)]
pub enum Norm {
    Num(f64),
    Text(String),
}

impl Norm {
    pub fn of(value: &Value) -> Norm {
        match value {
            Value::Number(n) => Norm::Num(n.as_f64().unwrap_or(f64::NAN)),
            Value::String(s) => Norm::parse(s),
            other => Norm::Text(serde_json::to_string(other).unwrap_or_default().to_lowercase()),
        }
    }

    pub fn parse(s: &str) -> Norm {
        let t = s.trim();
        match t.parse::<f64>() {
            Ok(x) if x.is_finite() => Norm::Num(x),
            _ => Norm::Text(t.to_lowercase()),
        }
    }

    pub fn matches(&self, other: &Norm) -> bool {
        match (self, other) {
            (Norm::Num(a), Norm::Num(b)) => {
                a == b || (a - b).abs() <= NUMERIC_RTOL * a.abs().max(b.abs())
            }
            (Norm::Text(a), Norm::Text(b)) => a == b,
            _ => false,
        }
    }
}

/// Size of the greedy multiset intersection under `eq`.
pub fn multiset_matches<T>(pred: &[T], gold: &[T], eq: impl Fn(&T, &T) -> bool) -> usize {
    let mut used = vec![false; gold.len()];
    let mut hits = 0;
    for p in pred {
        if let Some(i) = (0..gold.len()).find(|&i| !used[i] && eq(p, &gold[i])) {
            used[i] = true;
            hits += 1;
        }
    }
    hits
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts { matched: self.matched + o.matched, predicted: self.predicted + o.predicted, gold: self.gold + o.gold }
    }
}

impl Counts {
    pub fn prf(self) -> Prf {
        Prf::from_ratio(self.matched as f64, self.predicted as f64, self.gold as f64)
    }
}

/// Percentages in `[0, 100]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_ratio(matched: f64, predicted: f64, gold: f64) -> Prf {
        let p = if predicted > 0.0 { 100.0 * matched / predicted } else { 0.0 };
        let r = if gold > 0.0 { 100.0 * matched / gold } else { 0.0 };
        Prf::new(p, r)
    }

    pub fn new(precision: f64, recall: f64) -> Prf {
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub case_id: String,
    pub parseable: bool,
    pub tool: Counts,
    pub param: Counts,
    pub ret: Counts,
}

type ParamTriple = (String, String, Norm);
type ReturnPair = (String, Norm);

fn triples(calls: &[(String, &Args)]) -> Vec<ParamTriple> {
    calls
        .iter()
        .flat_map(|(tool, args)| args.iter().map(move |(k, v)| (tool.clone(), k.to_lowercase(), Norm::of(v))))
        .collect()
}

fn count<T>(pred: &[T], gold: &[T], eq: impl Fn(&T, &T) -> bool) -> Counts {
    Counts { matched: multiset_matches(pred, gold, eq), predicted: pred.len(), gold: gold.len() }
}

/// Counts for one case; `pred = None` means the prediction was missing or unparseable.
pub fn score_case(pred: Option<&Prediction>, gold: &BenchmarkCase) -> CaseCounts {
    let gold_calls: Vec<(String, &Args)> = gold.gold_chain.iter().map(|g| (g.call.tool.clone(), &g.call.args)).collect();
    let gold_tools: Vec<String> = gold_calls.iter().map(|(t, _)| t.clone()).collect();
    let gold_returns: Vec<ReturnPair> = gold
        .gold_chain
        .iter()
        .filter_map(|g| Some((g.call.tool.clone(), Norm::of(g.expected.value.as_ref()?))))
        .collect();
    let empty = |n: usize| Counts { matched: 0, predicted: 0, gold: n };
    let Some(pred) = pred else {
        return CaseCounts {
            case_id: gold.id.clone(),
            parseable: false,
            tool: empty(gold_tools.len()),
            param: empty(triples(&gold_calls).len()),
            ret: empty(gold_returns.len()),
        };
    };
    let pred_calls: Vec<(String, &Args)> = pred.trajectory.iter().map(|c| (c.tool.clone(), &c.args)).collect();
    let pred_tools: Vec<String> = pred_calls.iter().map(|(t, _)| t.clone()).collect();
    let pred_returns: Vec<ReturnPair> = pred
        .trajectory
        .iter()
        .filter_map(|c| {
            let obs = c.observation.as_ref().filter(|o| o.ok)?;
            Some((c.tool.clone(), Norm::of(obs.value.as_ref()?)))
        })
        .collect();
    CaseCounts {
        case_id: gold.id.clone(),
        parseable: true,
        tool: count(&pred_tools, &gold_tools, |a, b| a == b),
        param: count(&triples(&pred_calls), &triples(&gold_calls), |a, b| a.0 == b.0 && a.1 == b.1 && a.2.matches(&b.2)),
        ret: count(&pred_returns, &gold_returns, |a, b| a.0 == b.0 && a.1.matches(&b.1)),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

impl FromStr for Averaging {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            other => Err(format!("unknown averaging `{other}`")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_cases: usize,
    pub averaging: Averaging,
    pub format_rate: f64,
    pub tool: Prf,
    pub param: Prf,
    #[serde(rename = "return")]
    pub ret: Prf,
    pub pass_rate: f64,
    /// Cases whose judge call failed; they count as not passed.
    pub judge_errors: Vec<String>,
}

fn macro_prf(counts: &[CaseCounts], pick: impl Fn(&CaseCounts) -> Counts) -> Prf {
    let n = counts.len() as f64;
    let (p, r, f) = counts.iter().map(|c| pick(c).prf()).fold((0.0, 0.0, 0.0), |acc, x| {
        (acc.0 + x.precision, acc.1 + x.recall, acc.2 + x.f1)
    });
    Prf { precision: p / n, recall: r / n, f1: f / n }
}

/// Combines per-case counts; `pass_rate` and `judge_errors` are filled by [`evaluate`].
pub fn aggregate(counts: &[CaseCounts], averaging: Averaging) -> Result<MetricReport, EvalError> {
    if counts.is_empty() {
        return Err(EvalError::EmptyBenchmark);
    }
    let n = counts.len();
    let parseable = counts.iter().filter(|c| c.parseable).count();
    let (tool, param, ret) = match averaging {
        Averaging::Micro => {
            let sum = |pick: fn(&CaseCounts) -> Counts| counts.iter().map(pick).fold(Counts::default(), |a, b| a + b).prf();
            (sum(|c| c.tool), sum(|c| c.param), sum(|c| c.ret))
        }
        Averaging::Macro => (macro_prf(counts, |c| c.tool), macro_prf(counts, |c| c.param), macro_prf(counts, |c| c.ret)),
    };
    Ok(MetricReport {
        n_cases: n,
        averaging,
        format_rate: 100.0 * parseable as f64 / n as f64,
        tool,
        param,
        ret,
        pass_rate: 0.0,
        judge_errors: Vec::new(),
    })
}

/// Percentage of cases the judge scores at least 0.5, plus one annotation per judge failure.
pub fn pass_rate(preds: &PredictionSet, golds: &[BenchmarkCase], judge: &dyn AnswerJudge) -> (f64, Vec<String>) {
    if golds.is_empty() {
        return (0.0, Vec::new());
    }
    let mut passed = 0;
    let mut errors = Vec::new();
    for case in golds {
        let Some(answer) = preds.parsed.get(&case.id).and_then(|p| p.final_answer.as_deref()) else { continue };
        match judge.judge(case, answer) {
            Ok(s) if s.value() >= 0.5 => passed += 1,
            Ok(_) => {}
            Err(e) => errors.push(format!("{}: {e}", case.id)),
        }
    }
    (100.0 * passed as f64 / golds.len() as f64, errors)
}

pub fn evaluate(
    preds: &PredictionSet,
    golds: &[BenchmarkCase],
    judge: &dyn AnswerJudge,
    averaging: Averaging,
) -> Result<MetricReport, EvalError> {
    let counts: Vec<CaseCounts> = golds.iter().map(|g| score_case(preds.parsed.get(&g.id), g)).collect();
    let mut report = aggregate(&counts, averaging)?;
    let (rate, errors) = pass_rate(preds, golds, judge);
    report.pass_rate = rate;
    report.judge_errors = errors;
    Ok(report)
}

impl fmt::Display for MetricReport {
    /// Columns: Format | Tool P R F1 | Param P R F1 | Return P R F1 | Pass Rate.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = [
            "Format", "Tool P", "Tool R", "Tool F1", "Param P", "Param R", "Param F1", "Return P", "Return R",
            "Return F1", "Pass Rate",
        ];
        let values = [
            self.format_rate,
            self.tool.precision,
            self.tool.recall,
            self.tool.f1,
            self.param.precision,
            self.param.recall,
            self.param.f1,
            self.ret.precision,
            self.ret.recall,
            self.ret.f1,
            self.pass_rate,
        ];
        let cells: Vec<String> = values.iter().map(|v| format!("{v:.2}")).collect();
        let widths: Vec<usize> = header.iter().zip(&cells).map(|(h, c)| h.len().max(c.len())).collect();
        let row = |items: &[String]| {
            items.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join(" | ")
        };
        let head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        writeln!(f, "{}", row(&head))?;
        writeln!(f, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"))?;
        writeln!(f, "{}", row(&cells))?;
        write!(f, "cases: {} ({:?} averaging)", self.n_cases, self.averaging)?;
        for e in &self.judge_errors {
            write!(f, "\njudge error: {e}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::scripted::ExactMatchJudge;
    use crate::gateway::{GatewayError, Score};
    use crate::sandbox::generate_benchmark;
    use serde_json::json;

    fn gold_prediction(case: &BenchmarkCase) -> Prediction {
        Prediction {
            case_id: case.id.clone(),
            trajectory: case
                .gold_chain
                .iter()
                .map(|g| PredictedCall { tool: g.call.tool.clone(), args: g.call.args.clone(), observation: Some(g.expected.clone()) })
                .collect(),
            final_answer: Some(case.gold_answer.clone()),
        }
    }

    #[test]
    fn tool_counts_example() {
        let c = count(&["a", "c"], &["a", "b"], |x, y| x == y);
        let prf = c.prf();
        assert_eq!((prf.precision, prf.recall, prf.f1), (50.0, 50.0, 50.0));
    }

    #[test]
    fn micro_average_sums_counts() {
        let mk = |m, p, g| CaseCounts { parseable: true, tool: Counts { matched: m, predicted: p, gold: g }, ..Default::default() };
        let r = aggregate(&[mk(1, 2, 2), mk(2, 2, 2)], Averaging::Micro).unwrap();
        assert_eq!(r.tool.precision, 75.0);
        let r = aggregate(&[mk(0, 0, 2)], Averaging::Micro).unwrap();
        assert_eq!((r.tool.precision, r.tool.recall, r.tool.f1), (0.0, 0.0, 0.0));
        assert!(matches!(aggregate(&[], Averaging::Micro), Err(EvalError::EmptyBenchmark)));
    }

    #[test]
    fn numeric_tolerance() {
        assert!(Norm::parse("18.0150").matches(&Norm::of(&json!(18.015))));
        assert!(Norm::parse(" Water ").matches(&Norm::of(&json!("water"))));
        assert!(!Norm::parse("18.02").matches(&Norm::of(&json!(18.015))));
        assert!(Norm::of(&json!(1e9)).matches(&Norm::of(&json!(1e9 + 100.0))));
    }

    #[test]
    fn perfect_predictions_score_100() {
        let cases = generate_benchmark(7, 3, 3, (2, 4)).unwrap();
        let preds = PredictionSet::from_predictions(cases.iter().map(gold_prediction));
        let r = evaluate(&preds, &cases, &ExactMatchJudge, Averaging::Micro).unwrap();
        for v in [r.format_rate, r.tool.f1, r.param.f1, r.ret.f1, r.pass_rate] {
            assert_eq!(v, 100.0);
        }
        let table = r.to_string();
        assert!(table.starts_with("Format | Tool P"));
    }

    #[test]
    fn malformed_lines_count_against_format() {
        let cases = generate_benchmark(7, 2, 0, (2, 4)).unwrap();
        let good = serde_json::to_string(&gold_prediction(&cases[0])).unwrap();
        let text = format!("{good}\n{{\"case_id\":\"{}\",\"trajectory\":7}}\nnot json\n", cases[1].id);
        let preds = PredictionSet::from_jsonl(&text);
        assert_eq!(preds.malformed, vec![cases[1].id.clone()]);
        assert_eq!(preds.unreadable, 1);
        let r = evaluate(&preds, &cases, &ExactMatchJudge, Averaging::Micro).unwrap();
        assert_eq!(r.format_rate, 50.0);
        assert_eq!(r.pass_rate, 50.0);
    }

    struct Flaky;

    impl AnswerJudge for Flaky {
        fn judge(&self, case: &BenchmarkCase, answer: &str) -> Result<Score, GatewayError> {
            if case.id.ends_with('0') {
                Err(GatewayError::BackendUnreachable("down".into()))
            } else {
                ExactMatchJudge.judge(case, answer)
            }
        }
    }

    #[test]
    fn judge_failures_count_as_fail() {
        let cases = generate_benchmark(7, 4, 0, (2, 4)).unwrap();
        let preds = PredictionSet::from_predictions(cases.iter().map(gold_prediction));
        let (rate, errors) = pass_rate(&preds, &cases, &Flaky);
        assert_eq!(rate, 75.0);
        assert_eq!(errors.len(), 1);
    }
}
