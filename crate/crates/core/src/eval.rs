//! UAR, cross-fold aggregation, and group fairness scores.
//!
//! Fairness scores compare female and male speakers; utterances with an
//! unknown gender are left out of them.

use serde::{Deserialize, Serialize};

use crate::data::Gender;
use crate::error::{Error, Result};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Confusion(Vec<Vec<u64>>);

impl Confusion {
    pub fn new(n_classes: usize) -> Self {
        Confusion(vec![vec![0; n_classes]; n_classes])
    }

    pub fn from_rows(rows: Vec<Vec<u64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(Confusion(rows))
    }

    pub fn from_predictions(labels: &[usize], preds: &[usize], n_classes: usize) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::Dimension(format!(
                "{} labels but {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        let mut c = Confusion::new(n_classes);
        for (&y, &p) in labels.iter().zip(preds) {
            c.record(y, p)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.n_classes();
        if truth >= n || pred >= n {
            return Err(Error::Data(format!("class ({truth}, {pred}) outside 0..{n}")));
        }
        self.0[truth][pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.0
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::Dimension("cannot add confusions of different sizes".into()));
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

/// UAR in percent plus the classes that had no true instance.
pub fn uar_detailed(confusion: &Confusion) -> Result<(f64, Vec<usize>)> {
    let mut recalls = Vec::new();
    let mut missing = Vec::new();
    for (c, row) in confusion.rows().iter().enumerate() {
        let support: u64 = row.iter().sum();
        if support == 0 {
            missing.push(c);
        } else {
            recalls.push(row[c] as f64 / support as f64);
        }
    }
    if recalls.is_empty() {
        return Err(Error::Usage("UAR of an empty confusion matrix".into()));
    }
    Ok((100.0 * recalls.iter().sum::<f64>() / recalls.len() as f64, missing))
}

/// Mean per-class recall in percent over classes with at least one true instance.
pub fn uar(confusion: &Confusion) -> Result<f64> {
    let (value, missing) = uar_detailed(confusion)?;
    if !missing.is_empty() {
        log::warn!("classes {missing:?} have no true instances and are excluded from UAR");
    }
    Ok(value)
}

fn group_rows<'a>(
    preds: &'a [usize],
    genders: &'a [Gender],
    group: Gender,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    preds
        .iter()
        .zip(genders)
        .enumerate()
        .filter(move |(_, (_, &g))| g == group)
        .map(|(i, (&p, _))| (i, p))
}

fn rates(preds: impl Iterator<Item = usize>, n_classes: usize) -> Result<(Vec<f64>, usize)> {
    let mut counts = vec![0usize; n_classes];
    let mut n = 0;
    for p in preds {
        if p >= n_classes {
            return Err(Error::Data(format!("prediction {p} outside 0..{n_classes}")));
        }
        counts[p] += 1;
        n += 1;
    }
    Ok((counts.into_iter().map(|c| c as f64 / n.max(1) as f64).collect(), n))
}

fn mean_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn require_groups(genders: &[Gender]) -> Result<()> {
    for g in [Gender::Female, Gender::Male] {
        if !genders.contains(&g) {
            return Err(Error::Usage(format!("no {g} speakers in the evaluation set")));
        }
    }
    Ok(())
}

/// Mean over classes of |P(ŷ=c | female) − P(ŷ=c | male)|, in percent.
pub fn demographic_parity(preds: &[usize], genders: &[Gender], n_classes: usize) -> Result<f64> {
    if preds.len() != genders.len() {
        return Err(Error::Dimension("predictions and genders differ in length".into()));
    }
    require_groups(genders)?;
    let (f, _) = rates(group_rows(preds, genders, Gender::Female).map(|(_, p)| p), n_classes)?;
    let (m, _) = rates(group_rows(preds, genders, Gender::Male).map(|(_, p)| p), n_classes)?;
    Ok(100.0 * mean_abs_gap(&f, &m))
}

/// Demographic parity computed within each true class and averaged over the
/// classes where both groups are present, in percent.
pub fn equality_of_odds(preds: &[usize], labels: &[usize], genders: &[Gender], n_classes: usize) -> Result<f64> {
    if preds.len() != genders.len() || labels.len() != preds.len() {
        return Err(Error::Dimension(
            "predictions, labels, and genders differ in length".into(),
        ));
    }
    require_groups(genders)?;
    let mut gaps = Vec::new();
    for y in 0..n_classes {
        let stratum = |g: Gender| {
            group_rows(preds, genders, g)
                .filter(|&(i, _)| labels[i] == y)
                .map(|(_, p)| p)
        };
        let (f, nf) = rates(stratum(Gender::Female), n_classes)?;
        let (m, nm) = rates(stratum(Gender::Male), n_classes)?;
        if nf == 0 || nm == 0 {
            log::warn!("class {y} lacks one gender group; skipped in equality of odds");
            continue;
        }
        gaps.push(mean_abs_gap(&f, &m));
    }
    if gaps.is_empty() {
        return Err(Error::Usage("no class has both gender groups".into()));
    }
    Ok(100.0 * gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessScores {
    pub dem_parity: f64,
    pub eq_odds: f64,
}

pub fn fairness(preds: &[usize], labels: &[usize], genders: &[Gender], n_classes: usize) -> Result<FairnessScores> {
    Ok(FairnessScores {
        dem_parity: demographic_parity(preds, genders, n_classes)?,
        eq_odds: equality_of_odds(preds, labels, genders, n_classes)?,
    })
}

/// Per-utterance outputs for one evaluated split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub preds: Vec<usize>,
    pub genders: Vec<Gender>,
}

impl Predictions {
    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn push(&mut self, id: impl Into<String>, label: usize, pred: usize, gender: Gender) {
        self.ids.push(id.into());
        self.labels.push(label);
        self.preds.push(pred);
        self.genders.push(gender);
    }

    pub fn extend(&mut self, other: &Predictions) {
        self.ids.extend(other.ids.iter().cloned());
        self.labels.extend(&other.labels);
        self.preds.extend(&other.preds);
        self.genders.extend(&other.genders);
    }

    pub fn has_both_groups(&self) -> bool {
        self.genders.contains(&Gender::Female) && self.genders.contains(&Gender::Male)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub confusion: Confusion,
    pub uar: f64,
    pub fairness: Option<FairnessScores>,
    pub warnings: Vec<String>,
}

pub fn evaluate_fold(fold: usize, p: &Predictions, n_classes: usize) -> Result<FoldEval> {
    let confusion = Confusion::from_predictions(&p.labels, &p.preds, n_classes)?;
    let (uar, missing) = uar_detailed(&confusion)?;
    let mut warnings = Vec::new();
    if !missing.is_empty() {
        warnings.push(format!("fold {fold}: classes {missing:?} absent, excluded from UAR"));
    }
    let fairness = if p.has_both_groups() {
        match fairness(&p.preds, &p.labels, &p.genders, n_classes) {
            Ok(f) => Some(f),
            Err(e) => {
                warnings.push(format!("fold {fold}: fairness unavailable: {e}"));
                None
            }
        }
    } else {
        warnings.push(format!("fold {fold}: both gender groups needed for fairness scores"));
        None
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FoldEval {
        fold,
        confusion,
        uar,
        fairness,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    /// Scores over all folds' predictions taken together.
    pub pooled: FairnessScores,
    /// Mean of the per-fold scores, over folds where they exist.
    pub per_fold_mean: Option<FairnessScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub uar: f64,
    pub per_fold: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub fairness: Option<FairnessReport>,
    pub warnings: Vec<String>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Combines per-fold results. `pooled` holds every fold's predictions and is
/// used for the pooled fairness scores.
pub fn aggregate(folds: &[FoldEval], pooled: Option<&Predictions>) -> Result<EvalReport> {
    let first = folds
        .first()
        .ok_or_else(|| Error::Usage("nothing to aggregate".into()))?;
    let n_classes = first.confusion.n_classes();
    let mut confusion = Confusion::new(n_classes);
    for f in folds {
        confusion.merge(&f.confusion)?;
    }
    let per_fold: Vec<f64> = folds.iter().map(|f| f.uar).collect();
    let (mu, sigma) = mean_std(&per_fold);
    let mut warnings: Vec<String> = folds.iter().flat_map(|f| f.warnings.iter().cloned()).collect();
    let (uar, missing) = uar_detailed(&confusion)?;
    if !missing.is_empty() {
        warnings.push(format!("classes {missing:?} absent from every fold"));
    }

    let fold_scores: Vec<FairnessScores> = folds.iter().filter_map(|f| f.fairness).collect();
    let per_fold_mean = (!fold_scores.is_empty()).then(|| FairnessScores {
        dem_parity: mean_std(&fold_scores.iter().map(|s| s.dem_parity).collect::<Vec<_>>()).0,
        eq_odds: mean_std(&fold_scores.iter().map(|s| s.eq_odds).collect::<Vec<_>>()).0,
    });
    let fairness = match pooled {
        Some(p) if p.has_both_groups() => match fairness(&p.preds, &p.labels, &p.genders, n_classes) {
            Ok(pooled) => Some(FairnessReport { pooled, per_fold_mean }),
            Err(e) => {
                warnings.push(format!("pooled fairness unavailable: {e}"));
                None
            }
        },
        _ => None,
    };
    Ok(EvalReport {
        confusion,
        uar,
        per_fold,
        mu,
        sigma,
        fairness,
        warnings,
    })
}

impl EvalReport {
    /// One row per fold: `fold,uar,dem_parity,eq_odds`.
    pub fn to_csv(&self, folds: &[FoldEval]) -> String {
        let mut out = String::from("fold,uar,dem_parity,eq_odds\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in folds {
            out.push_str(&format!(
                "{},{},{},{}\n",
                f.fold,
                f.uar,
                opt(f.fairness.map(|s| s.dem_parity)),
                opt(f.fairness.map(|s| s.eq_odds))
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Gender::{Female as F, Male as M};

    #[test]
    fn uar_examples() {
        let perfect = Confusion::from_predictions(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        assert_eq!(uar(&perfect).unwrap(), 100.0);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let chance = Confusion::from_predictions(&labels, &[0; 40], 4).unwrap();
        assert_eq!(uar(&chance).unwrap(), 25.0);
        let toy = Confusion::from_rows(vec![vec![3, 1], vec![2, 2]]).unwrap();
        assert_eq!(uar(&toy).unwrap(), 62.5);
    }

    #[test]
    fn uar_skips_missing_classes_and_rejects_empty() {
        let c = Confusion::from_rows(vec![vec![2, 0, 0], vec![0, 0, 0], vec![1, 0, 1]]).unwrap();
        let (v, missing) = uar_detailed(&c).unwrap();
        assert_eq!(missing, vec![1]);
        assert_eq!(v, 75.0);
        assert!(matches!(uar(&Confusion::new(4)), Err(Error::Usage(_))));
    }

    #[test]
    fn uar_invariant_to_balanced_duplication() {
        let labels = [0, 0, 1, 2, 3, 3, 1];
        let preds = [0, 1, 1, 2, 0, 3, 2];
        let once = uar(&Confusion::from_predictions(&labels, &preds, 4).unwrap()).unwrap();
        let l2: Vec<usize> = labels.iter().chain(&labels).copied().collect();
        let p2: Vec<usize> = preds.iter().chain(&preds).copied().collect();
        let twice = uar(&Confusion::from_predictions(&l2, &p2, 4).unwrap()).unwrap();
        assert!((once - twice).abs() < 1e-12);
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(demographic_parity(&[0, 0, 1, 1], &[F, F, M, M], 2).unwrap(), 100.0);
        assert_eq!(demographic_parity(&[0, 1, 0, 1], &[F, F, M, M], 2).unwrap(), 0.0);
        // One true class; female recall 1.0, male recall 0.5.
        let eo = equality_of_odds(&[0, 0, 0, 1], &[0, 0, 0, 0], &[F, F, M, M], 2).unwrap();
        assert!((eo - 50.0).abs() < 1e-12);
    }

    #[test]
    fn missing_group_is_named() {
        let err = demographic_parity(&[0, 1], &[F, F], 2).unwrap_err();
        assert!(matches!(&err, Error::Usage(m) if m.contains("male")), "{err}");
    }

    #[test]
    fn aggregate_mean_and_population_std() {
        let fold = |i: usize, uar: f64| FoldEval {
            fold: i,
            confusion: Confusion::from_rows(vec![vec![1, 0], vec![0, 1]]).unwrap(),
            uar,
            fairness: None,
            warnings: vec![],
        };
        let r = aggregate(&[fold(0, 60.0), fold(1, 70.0)], None).unwrap();
        assert_eq!((r.mu, r.sigma), (65.0, 5.0));
        assert_eq!(r.confusion.rows(), &[vec![2, 0], vec![0, 2]]);
        let single = aggregate(&[fold(0, 42.0)], None).unwrap();
        assert_eq!((single.mu, single.sigma), (42.0, 0.0));
        assert!(aggregate(&[], None).is_err());
    }
}
