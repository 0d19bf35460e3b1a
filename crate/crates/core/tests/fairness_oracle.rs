use peft_ser::data::Gender;
use peft_ser::eval::{demographic_parity, equality_of_odds, Confusion};
use proptest::prelude::*;

const C: usize = 4;

/// Counts every (group, truth, prediction) cell by scanning the whole set.
fn cell(preds: &[usize], labels: &[usize], genders: &[Gender], g: Gender, y: Option<usize>, p: usize) -> f64 {
    let mut n = 0;
    for i in 0..preds.len() {
        if genders[i] == g && y.is_none_or(|y| labels[i] == y) && preds[i] == p {
            n += 1;
        }
    }
    n as f64
}

fn oracle_dp(preds: &[usize], genders: &[Gender]) -> f64 {
    let labels = vec![0; preds.len()];
    let total = |g| (0..C).map(|p| cell(preds, &labels, genders, g, None, p)).sum::<f64>();
    let (nf, nm) = (total(Gender::Female), total(Gender::Male));
    let mut gap = 0.0;
    for p in 0..C {
        gap += (cell(preds, &labels, genders, Gender::Female, None, p) / nf
            - cell(preds, &labels, genders, Gender::Male, None, p) / nm)
            .abs();
    }
    100.0 * gap / C as f64
}

fn oracle_eo(preds: &[usize], labels: &[usize], genders: &[Gender]) -> Option<f64> {
    let mut strata = Vec::new();
    for y in 0..C {
        let total = |g| (0..C).map(|p| cell(preds, labels, genders, g, Some(y), p)).sum::<f64>();
        let (nf, nm) = (total(Gender::Female), total(Gender::Male));
        if nf == 0.0 || nm == 0.0 {
            continue;
        }
        let mut gap = 0.0;
        for p in 0..C {
            gap += (cell(preds, labels, genders, Gender::Female, Some(y), p) / nf
                - cell(preds, labels, genders, Gender::Male, Some(y), p) / nm)
                .abs();
        }
        strata.push(gap / C as f64);
    }
    (!strata.is_empty()).then(|| 100.0 * strata.iter().sum::<f64>() / strata.len() as f64)
}

fn swap(genders: &[Gender]) -> Vec<Gender> {
    genders
        .iter()
        .map(|g| match g {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
            Gender::Unknown => Gender::Unknown,
        })
        .collect()
}

fn sample() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<Gender>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(0..C, n),
            prop::collection::vec(0..C, n),
            prop::collection::vec(prop::sample::select(vec![Gender::Female, Gender::Male]), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scores_match_brute_force_recount((preds, labels, genders) in sample()) {
        let both = genders.contains(&Gender::Female) && genders.contains(&Gender::Male);
        prop_assume!(both);
        let dp = demographic_parity(&preds, &genders, C).unwrap();
        prop_assert!((dp - oracle_dp(&preds, &genders)).abs() < 1e-9);
        match oracle_eo(&preds, &labels, &genders) {
            Some(expected) => {
                let eo = equality_of_odds(&preds, &labels, &genders, C).unwrap();
                prop_assert!((eo - expected).abs() < 1e-9);
                prop_assert!((0.0..=100.0).contains(&eo));
            }
            None => prop_assert!(equality_of_odds(&preds, &labels, &genders, C).is_err()),
        }
        prop_assert!((0.0..=100.0).contains(&dp));
    }

    #[test]
    fn group_swap_leaves_scores_unchanged((preds, labels, genders) in sample()) {
        prop_assume!(genders.contains(&Gender::Female) && genders.contains(&Gender::Male));
        let swapped = swap(&genders);
        prop_assert_eq!(
            demographic_parity(&preds, &genders, C).unwrap(),
            demographic_parity(&preds, &swapped, C).unwrap()
        );
        if let Ok(eo) = equality_of_odds(&preds, &labels, &genders, C) {
            prop_assert!((eo - equality_of_odds(&preds, &labels, &swapped, C).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_groups_score_zero(preds in prop::collection::vec(0..C, 1..100), labels in prop::collection::vec(0..C, 100)) {
        // Each utterance appears once per group with the same prediction.
        let n = preds.len();
        let p2: Vec<usize> = preds.iter().chain(&preds).copied().collect();
        let l2: Vec<usize> = labels[..n].iter().chain(&labels[..n]).copied().collect();
        let g2: Vec<Gender> = std::iter::repeat_n(Gender::Female, n).chain(std::iter::repeat_n(Gender::Male, n)).collect();
        prop_assert_eq!(demographic_parity(&p2, &g2, C).unwrap(), 0.0);
        prop_assert_eq!(equality_of_odds(&p2, &l2, &g2, C).unwrap(), 0.0);
    }

    #[test]
    fn confusion_total_counts_every_utterance(preds in prop::collection::vec(0..C, 0..100)) {
        let labels: Vec<usize> = preds.iter().map(|p| (p * 3 + 1) % C).collect();
        let c = Confusion::from_predictions(&labels, &preds, C).unwrap();
        prop_assert_eq!(c.total(), preds.len() as u64);
    }
}
