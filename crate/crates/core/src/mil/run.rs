use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    argmax_first, initial_window, nearest_proposal, score_bag, selection_from, train_svm,
    AppearanceModel, Bag, MilConfig, ScoredProposal, Selection,
};
use crate::eval::corloc;
use crate::geometry::BBox;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// `None` when the bags carry no ground truth.
    pub corloc: Option<f64>,
    pub deep_mil_surrogate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilOutcome {
    /// One entry per positive bag that had proposals, in input order.
    pub selections: Vec<Selection>,
    pub model: AppearanceModel,
    /// CorLoc of the initialization (iteration 0) and of every iteration after it.
    pub trace: Vec<IterationStats>,
    /// Positive bags skipped for having no proposals.
    pub skipped: Vec<String>,
}

pub(crate) fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(a.wrapping_mul(0x1_0000_0001) ^ mix(b)))
}

fn trace_corloc(bags: &[&Bag], boxes: &[BBox]) -> Option<f64> {
    if bags.iter().all(|b| b.gt_boxes.is_empty()) {
        return None;
    }
    let sel: BTreeMap<String, BBox> = bags
        .iter()
        .zip(boxes)
        .map(|(b, bx)| (b.image_id.clone(), *bx))
        .collect();
    let gt: BTreeMap<String, Vec<BBox>> = bags
        .iter()
        .map(|b| (b.image_id.clone(), b.gt_boxes.clone()))
        .collect();
    Some(corloc(&sel, &gt, crate::config::CORLOC_IOU))
}

/// Multi-fold MIL over the bags of one class.
///
/// Positive bags are split into `folds` seeded folds that stay fixed across
/// iterations. In every iteration fold `i` is re-localized with a model
/// trained on the current picks of the other folds plus the capped
/// negatives, so no bag is ever scored by a model that saw its own pick.
/// All folds read the previous iteration's picks; results match the
/// sequential schedule bit for bit regardless of thread count.
pub fn run_mil(bags: &[Bag], config: &MilConfig) -> Result<MilOutcome> {
    config.validate()?;
    let mut skipped = Vec::new();
    let positives: Vec<&Bag> = bags
        .iter()
        .filter(|b| b.positive)
        .filter(|b| {
            if b.proposals.is_empty() {
                skipped.push(b.image_id.clone());
                false
            } else {
                true
            }
        })
        .collect();
    if positives.len() < config.folds {
        return Err(Error::config(
            "folds",
            format!(
                "{} folds need at least as many positive bags, got {}",
                config.folds,
                positives.len()
            ),
        ));
    }

    let negatives: Vec<&[f64]> = bags
        .iter()
        .filter(|b| !b.positive)
        .flat_map(|b| {
            let mut idx: Vec<usize> = (0..b.proposals.len()).collect();
            idx.sort_by(|&i, &j| {
                b.proposals[j]
                    .objectness
                    .total_cmp(&b.proposals[i].objectness)
                    .then(i.cmp(&j))
            });
            idx.truncate(config.negatives_per_image);
            idx.into_iter().map(move |i| b.proposals[i].feature.as_slice())
        })
        .collect();
    if negatives.is_empty() {
        return Err(Error::invalid("MIL needs at least one negative proposal"));
    }

    // Initialization windows enter training through their nearest proposal.
    let mut current: Vec<usize> = Vec::with_capacity(positives.len());
    let mut current_boxes: Vec<BBox> = Vec::with_capacity(positives.len());
    for bag in &positives {
        let window = initial_window(bag, config)?;
        current.push(nearest_proposal(bag, &window).expect("non-empty bag"));
        current_boxes.push(window);
    }

    let mut order: Vec<usize> = (0..positives.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(config.seed, 0, 0)));
    let mut fold_of = vec![0usize; positives.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % config.folds;
    }

    let mut trace = vec![IterationStats {
        iteration: 0,
        corloc: trace_corloc(&positives, &current_boxes),
        deep_mil_surrogate: false,
    }];
    let total = config.iterations + config.deep_mil_surrogate_iterations;
    let mut picks: Vec<(usize, ScoredProposal)> = Vec::new();

    for it in 0..total {
        let models: Vec<AppearanceModel> = (0..config.folds)
            .into_par_iter()
            .map(|fold| {
                let train: Vec<&[f64]> = positives
                    .iter()
                    .zip(&current)
                    .zip(&fold_of)
                    .filter(|(_, &f)| f != fold)
                    .map(|((b, &p), _)| b.proposals[p].feature.as_slice())
                    .collect();
                train_svm(
                    &train,
                    &negatives,
                    &config.svm,
                    sub_seed(config.seed, it as u64 + 1, fold as u64),
                )
            })
            .collect::<Result<_>>()?;

        picks = positives
            .par_iter()
            .zip(fold_of.par_iter())
            .map(|(bag, &fold)| {
                let mut scored = score_bag(bag, &models[fold], config);
                let best = argmax_first(scored.iter().map(ScoredProposal::log_score))
                    .expect("non-empty bag");
                (best, scored.swap_remove(best))
            })
            .collect();
        current = picks.iter().map(|(i, _)| *i).collect();
        current_boxes = positives
            .iter()
            .zip(&current)
            .map(|(b, &i)| b.proposals[i].bbox)
            .collect();
        trace.push(IterationStats {
            iteration: it + 1,
            corloc: trace_corloc(&positives, &current_boxes),
            deep_mil_surrogate: it >= config.iterations,
        });
    }

    let final_pos: Vec<&[f64]> = positives
        .iter()
        .zip(&current)
        .map(|(b, &p)| b.proposals[p].feature.as_slice())
        .collect();
    let model = train_svm(
        &final_pos,
        &negatives,
        &config.svm,
        sub_seed(config.seed, u64::MAX, 0),
    )?;

    let selections = positives
        .iter()
        .zip(&picks)
        .map(|(bag, (i, s))| selection_from(bag, *i, s))
        .collect();
    Ok(MilOutcome {
        selections,
        model,
        trace,
        skipped,
    })
}
