use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpora::Label;
use crate::training::InitMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    F1,
    Mcc,
    Spearman,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::F1 => "f1",
            MetricKind::Mcc => "mcc",
            MetricKind::Spearman => "spearman",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "f1" => Ok(MetricKind::F1),
            "mcc" => Ok(MetricKind::Mcc),
            "spearman" | "spr" => Ok(MetricKind::Spearman),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

/// Model outputs for a dataset, in example order.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictions {
    Classes(Vec<usize>),
    Scalars(Vec<f64>),
}

impl Predictions {
    pub fn len(&self) -> usize {
        match self {
            Predictions::Classes(v) => v.len(),
            Predictions::Scalars(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub init_mode: InitMode,
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    Ok(pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / pred.len() as f64)
}

/// `(tp, tn, fp, fn)` with class 1 as the positive class.
pub fn confusion(pred: &[usize], gold: &[usize]) -> Result<(usize, usize, usize, usize)> {
    same_len(pred.len(), gold.len())?;
    if let Some(x) = pred.iter().chain(gold).find(|&&x| x > 1) {
        return Err(Error::Input(format!("binary metric given class {x}")));
    }
    let mut c = (0, 0, 0, 0);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p, g) {
            (1, 1) => c.0 += 1,
            (0, 0) => c.1 += 1,
            (1, 0) => c.2 += 1,
            _ => c.3 += 1,
        }
    }
    Ok(c)
}

/// Binary F1 of class 1; 0 when there are no true positives.
pub fn f1(pred: &[usize], gold: &[usize]) -> Result<f64> {
    let (tp, _, fp, fn_) = confusion(pred, gold)?;
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Matthews correlation; 0 when any margin of the confusion matrix is empty.
pub fn mcc(pred: &[usize], gold: &[usize]) -> Result<f64> {
    let (tp, tn, fp, fn_) = confusion(pred, gold)?;
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(((tp * tn - fp * fn_) / den.sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input vector".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<f64> {
    same_len(pred.len(), gold.len())?;
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in spearman input".into()));
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::Input("no predictions to score".into()));
    }
    Ok(())
}

/// Scores `preds` against `labels` with `metric`.
pub fn evaluate(
    preds: &Predictions,
    labels: &[Label],
    metric: MetricKind,
    seed: u64,
    init_mode: InitMode,
) -> Result<MetricReport> {
    let value = match (preds, metric) {
        (Predictions::Classes(p), MetricKind::Accuracy | MetricKind::F1 | MetricKind::Mcc) => {
            let gold = labels
                .iter()
                .map(|l| match l {
                    Label::Class(c) => Ok(*c),
                    Label::Scalar(_) => Err(Error::Input("scalar label for a class metric".into())),
                })
                .collect::<Result<Vec<_>>>()?;
            match metric {
                MetricKind::Accuracy => accuracy(p, &gold)?,
                MetricKind::F1 => f1(p, &gold)?,
                _ => mcc(p, &gold)?,
            }
        }
        (Predictions::Scalars(p), MetricKind::Spearman) => {
            let gold = labels
                .iter()
                .map(|l| match l {
                    Label::Scalar(x) => Ok(*x),
                    Label::Class(c) => Ok(*c as f64),
                })
                .collect::<Result<Vec<_>>>()?;
            spearman(p, &gold)?
        }
        _ => {
            return Err(Error::Input(format!(
                "metric {} does not fit these predictions",
                metric.as_str()
            )))
        }
    };
    Ok(MetricReport {
        metric,
        value,
        n: preds.len(),
        seed,
        init_mode,
    })
}

/// Writes `run_id,init_mode,seed,metric,value,n` rows with a header.
pub fn write_metrics_csv(
    mut out: impl Write,
    run_id: &str,
    reports: &[MetricReport],
) -> std::io::Result<()> {
    writeln!(out, "run_id,init_mode,seed,metric,value,n")?;
    for r in reports {
        writeln!(
            out,
            "{run_id},{},{},{},{},{}",
            r.init_mode,
            r.seed,
            r.metric.as_str(),
            r.value,
            r.n
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let g = [0, 1, 1, 0, 1];
        assert_eq!(accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(mcc(&g, &g).unwrap(), 1.0);
        assert_eq!(f1(&g, &g).unwrap(), 1.0);
        let x = [0.3, -1.0, 2.0, 2.5];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn reversed_ranking() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [8.0, 6.0, 4.0, 1.0];
        assert_eq!(spearman(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn balanced_confusion_gives_zero_mcc() {
        // TP, TN, FP, FN each once.
        let p = [1, 0, 1, 0];
        let g = [1, 0, 0, 1];
        assert_eq!(confusion(&p, &g).unwrap(), (1, 1, 1, 1));
        assert_eq!(mcc(&p, &g).unwrap(), 0.0);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(
            average_ranks(&[10.0, 20.0, 10.0, 5.0]),
            vec![2.5, 4.0, 2.5, 1.0]
        );
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(accuracy(&[1], &[1, 0]), Err(Error::Dimension(_))));
        assert!(matches!(accuracy(&[], &[]), Err(Error::Input(_))));
        assert_eq!(mcc(&[1, 1], &[1, 1]).unwrap(), 0.0);
        assert!(f1(&[2], &[1]).is_err());
    }

    #[test]
    fn evaluate_checks_kind() {
        let labels = [Label::Class(1), Label::Class(0)];
        let r = evaluate(
            &Predictions::Classes(vec![1, 1]),
            &labels,
            MetricKind::Accuracy,
            4,
            InitMode::ReEmb,
        )
        .unwrap();
        assert_eq!((r.value, r.n, r.seed), (0.5, 2, 4));
        assert!(evaluate(
            &Predictions::Classes(vec![1, 1]),
            &labels,
            MetricKind::Spearman,
            0,
            InitMode::Scratch
        )
        .is_err());
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            metric: MetricKind::Mcc,
            value: 0.25,
            n: 8,
            seed: 2,
            init_mode: InitMode::Checkpoint,
        };
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, "abc", &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "run_id,init_mode,seed,metric,value,n\nabc,checkpoint,2,mcc,0.25,8\n"
        );
    }
}
