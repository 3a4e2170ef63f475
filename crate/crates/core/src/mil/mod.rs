//! Multiple Instance Learning with click supervision.
//!
//! Each positive image is a bag of proposals. Training alternates between
//! re-localization (pick the best-scoring proposal per positive image) and
//! re-training a linear appearance model on the picks against proposals
//! from negative images. Clicks enter through initialization and through
//! the box-center and box-area scores multiplied into the re-localization
//! score.

mod run;
pub mod scores;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::annotator::{ClickRecord, ErrorModel};
use crate::config;
use crate::eval::{nms, Detection};
use crate::geometry::{iou, max_window_at, BBox, Point};
use crate::{Error, Result};

pub use run::{run_mil, IterationStats, MilOutcome};
pub use scores::{calibrate_margins, score_s_ap, score_s_ba, score_s_bc};
pub use svm::{train_svm, AppearanceModel, SvmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub feature: Vec<f64>,
    pub objectness: f64,
}

impl Proposal {
    pub fn new(bbox: BBox, feature: Vec<f64>, objectness: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&objectness) {
            return Err(Error::invalid(format!("objectness {objectness} outside [0, 1]")));
        }
        if feature.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite proposal feature"));
        }
        Ok(Proposal {
            bbox,
            feature,
            objectness,
        })
    }
}

/// One image seen for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub image_id: String,
    pub class: String,
    pub width: f64,
    pub height: f64,
    pub proposals: Vec<Proposal>,
    pub positive: bool,
    /// Zero to two center clicks, in collection order.
    pub clicks: Vec<ClickRecord>,
    /// Only used for evaluation.
    pub gt_boxes: Vec<BBox>,
}

impl Bag {
    pub fn image_area(&self) -> f64 {
        self.width * self.height
    }

    /// Clicks visible under the given supervision mode.
    pub fn click_points(&self, supervision: Supervision) -> Vec<Point> {
        let take = match supervision {
            Supervision::None => 0,
            Supervision::OneClick => 1,
            Supervision::TwoClick => 2,
        };
        self.clicks.iter().take(take).map(|c| c.position).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    None,
    OneClick,
    TwoClick,
}

impl Supervision {
    pub fn clicks(&self) -> usize {
        match self {
            Supervision::None => 0,
            Supervision::OneClick => 1,
            Supervision::TwoClick => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Supervision::None => "none",
            Supervision::OneClick => "one_click",
            Supervision::TwoClick => "two_click",
        }
    }
}

impl std::str::FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(Supervision::None),
            "one_click" => Ok(Supervision::OneClick),
            "two_click" => Ok(Supervision::TwoClick),
            other => Err(Error::config(
                "supervision",
                format!("expected none, one-click or two-click, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for Supervision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    pub folds: usize,
    pub iterations: usize,
    /// Extra plain iterations run after convergence in place of CNN re-training.
    pub deep_mil_surrogate_iterations: usize,
    pub svm: SvmParams,
    pub negatives_per_image: usize,
    pub supervision: Supervision,
    pub error_model: Option<ErrorModel>,
    pub seed: u64,
}

impl Default for MilConfig {
    fn default() -> Self {
        MilConfig {
            folds: config::MIL_FOLDS,
            iterations: config::MIL_ITERATIONS,
            deep_mil_surrogate_iterations: config::DEEP_MIL_SURROGATE_ITERATIONS,
            svm: SvmParams::default(),
            negatives_per_image: config::NEGATIVES_PER_IMAGE,
            supervision: Supervision::None,
            error_model: None,
            seed: 0,
        }
    }
}

impl MilConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds", format!("must be >= 2, got {}", self.folds)));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be >= 1"));
        }
        if !(self.svm.lambda > 0.0 && self.svm.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and > 0"));
        }
        if self.negatives_per_image == 0 {
            return Err(Error::config("negatives_per_image", "must be >= 1"));
        }
        match (&self.error_model, self.supervision) {
            (None, Supervision::OneClick | Supervision::TwoClick) => Err(Error::config(
                "error_model",
                "click supervision needs an error model",
            )),
            (Some(m), _) => m.validate(),
            (None, Supervision::None) => Ok(()),
        }
    }

    pub(crate) fn error_model(&self) -> Option<&ErrorModel> {
        match self.supervision {
            Supervision::None => None,
            _ => self.error_model.as_ref(),
        }
    }
}

/// Box a positive bag starts from, before any re-localization.
///
/// Without usable clicks this is the whole image. Otherwise it is the
/// largest window centered on the click (or on the average of two clicks
/// within `d_max`; on the first click when they are farther apart) that
/// fits inside the image.
pub fn initial_window(bag: &Bag, config: &MilConfig) -> Result<BBox> {
    let full = || BBox::new(0.0, 0.0, bag.width, bag.height);
    let Some(model) = config.error_model() else {
        return full();
    };
    let clicks = bag.click_points(config.supervision);
    let center = match clicks.as_slice() {
        [] => return full(),
        [c] => *c,
        [a, b, ..] => {
            if crate::geometry::euclidean(a, b) <= model.d_max {
                a.midpoint(b)
            } else {
                *a
            }
        }
    };
    // clicks clamped onto the border would give an empty window
    let margin_x = 0.5f64.min(0.25 * bag.width);
    let margin_y = 0.5f64.min(0.25 * bag.height);
    let inside = Point::new(
        center.x.clamp(margin_x, bag.width - margin_x),
        center.y.clamp(margin_y, bag.height - margin_y),
    );
    max_window_at(&inside, bag.width, bag.height)
}

/// Initial window for every positive bag, keyed by image id.
pub fn initialize(bags: &[Bag], config: &MilConfig) -> Result<Vec<(String, BBox)>> {
    bags.iter()
        .filter(|b| b.positive)
        .map(|b| Ok((b.image_id.clone(), initial_window(b, config)?)))
        .collect()
}

/// Proposal standing in for an arbitrary window: highest IoU, then nearest
/// center, then lowest index.
pub fn nearest_proposal(bag: &Bag, window: &BBox) -> Option<usize> {
    let c = window.center();
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, p) in bag.proposals.iter().enumerate() {
        let o = iou(&p.bbox, window);
        let d = crate::geometry::euclidean(&p.bbox.center(), &c);
        let better = match best {
            None => true,
            Some((_, bo, bd)) => o > bo || (o == bo && d < bd),
        };
        if better {
            best = Some((i, o, d));
        }
    }
    best.map(|(i, _, _)| i)
}

/// Chosen box for a positive bag with the factors of its final score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub image_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub proposal: usize,
    pub s_ap: f64,
    pub s_bc: f64,
    pub s_ba: f64,
    pub score: f64,
}

/// Per-proposal scores of a bag under the current appearance model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProposal {
    pub s_ap: f64,
    pub log_s_bc: f64,
    pub log_s_ba: f64,
}

impl ScoredProposal {
    pub fn log_score(&self) -> f64 {
        self.s_ap.ln() + self.log_s_bc + self.log_s_ba
    }
}

pub fn score_bag(bag: &Bag, model: &AppearanceModel, config: &MilConfig) -> Vec<ScoredProposal> {
    let margins: Vec<f64> = bag.proposals.iter().map(|p| model.margin(&p.feature)).collect();
    let calibrated = calibrate_margins(&margins);
    score_bag_calibrated(bag, &calibrated, config)
}

pub(crate) fn score_bag_calibrated(
    bag: &Bag,
    calibrated: &[f64],
    config: &MilConfig,
) -> Vec<ScoredProposal> {
    let em = config.error_model();
    let clicks = bag.click_points(config.supervision);
    bag.proposals
        .iter()
        .zip(calibrated)
        .map(|(p, a)| {
            let s_ap = score_s_ap(*a, p.objectness);
            let (log_s_bc, log_s_ba) = match em {
                None => (0.0, 0.0),
                Some(m) => {
                    let bc = scores::log_s_bc(&p.bbox.center(), &clicks, m.sigma_bc, m.d_max);
                    let ba = match (config.supervision, clicks.as_slice()) {
                        (Supervision::TwoClick, [c1, c2, ..]) => {
                            scores::log_s_ba(&p.bbox, c1, c2, m, bag.image_area())
                        }
                        _ => 0.0,
                    };
                    (bc, ba)
                }
            };
            ScoredProposal {
                s_ap,
                log_s_bc,
                log_s_ba,
            }
        })
        .collect()
}

/// Index of the maximal entry, first one on ties.
pub(crate) fn argmax_first(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(s > b) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Re-localization: the proposal maximizing `S_ap`, `S_ap * S_bc` or
/// `S_ap * S_bc * S_ba` depending on the supervision.
pub fn relocalize(bag: &Bag, model: &AppearanceModel, config: &MilConfig) -> Result<Selection> {
    if bag.proposals.is_empty() {
        return Err(Error::invalid(format!("bag {} has no proposals", bag.image_id)));
    }
    let scored = score_bag(bag, model, config);
    let best = argmax_first(scored.iter().map(ScoredProposal::log_score)).expect("non-empty");
    Ok(selection_from(bag, best, &scored[best]))
}

pub(crate) fn selection_from(bag: &Bag, index: usize, s: &ScoredProposal) -> Selection {
    let s_bc = s.log_s_bc.exp();
    let s_ba = s.log_s_ba.exp();
    Selection {
        image_id: bag.image_id.clone(),
        class: bag.class.clone(),
        bbox: bag.proposals[index].bbox,
        proposal: index,
        s_ap: s.s_ap,
        s_bc,
        s_ba,
        score: s.s_ap * s_bc * s_ba,
    }
}

/// Score every proposal of every bag with calibrated `S_ap` and keep the
/// per-image NMS survivors.
pub fn detect(bags: &[Bag], model: &AppearanceModel, nms_threshold: f64) -> Vec<Detection> {
    let plain = MilConfig::default();
    bags.iter()
        .flat_map(|bag| {
            let dets: Vec<Detection> = score_bag(bag, model, &plain)
                .iter()
                .zip(&bag.proposals)
                .map(|(s, p)| Detection {
                    image_id: bag.image_id.clone(),
                    class: bag.class.clone(),
                    bbox: p.bbox,
                    score: s.s_ap,
                })
                .collect();
            nms(&dets, nms_threshold)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{AreaConvention, ERROR_MODEL_SCHEMA_VERSION};
    use crate::poly::Polynomial;

    pub(crate) fn error_model(sigma_bc: f64) -> ErrorModel {
        ErrorModel {
            schema_version: ERROR_MODEL_SCHEMA_VERSION,
            sigma_bc,
            d_max: 70.0,
            mu_coeffs: Polynomial::new(vec![-3.0, 0.02]),
            mu_range: (0.0, 150.0),
            sigma_ba: 0.8,
            sim_distance_coeffs: Polynomial::new(vec![5.0, 0.08]),
            area_convention: AreaConvention::RelativeToImage,
        }
    }

    fn click(x: f64, y: f64) -> ClickRecord {
        ClickRecord::new("img", "a", Point::new(x, y), 1000.0).unwrap()
    }

    fn bag(proposals: Vec<Proposal>, clicks: Vec<ClickRecord>) -> Bag {
        Bag {
            image_id: "img".into(),
            class: "c".into(),
            width: 100.0,
            height: 60.0,
            proposals,
            positive: true,
            clicks,
            gt_boxes: vec![],
        }
    }

    fn prop(x: f64, y: f64, w: f64, h: f64, f: f64, o: f64) -> Proposal {
        Proposal::new(BBox::new(x, y, w, h).unwrap(), vec![f], o).unwrap()
    }

    fn cfg(sup: Supervision, sigma_bc: f64) -> MilConfig {
        MilConfig {
            supervision: sup,
            error_model: Some(error_model(sigma_bc)),
            ..MilConfig::default()
        }
    }

    #[test]
    fn initialization_windows() {
        let b = bag(vec![], vec![]);
        assert_eq!(
            initial_window(&b, &MilConfig::default()).unwrap(),
            BBox::new(0.0, 0.0, 100.0, 60.0).unwrap()
        );
        let b = bag(vec![], vec![click(10.0, 30.0)]);
        assert_eq!(
            initial_window(&b, &cfg(Supervision::OneClick, 10.0)).unwrap(),
            BBox::new(0.0, 0.0, 20.0, 60.0).unwrap()
        );
        // no supervision ignores clicks
        assert_eq!(
            initial_window(&b, &MilConfig::default()).unwrap(),
            BBox::new(0.0, 0.0, 100.0, 60.0).unwrap()
        );
        let b = bag(vec![], vec![click(40.0, 30.0), click(50.0, 30.0)]);
        let w = initial_window(&b, &cfg(Supervision::TwoClick, 10.0)).unwrap();
        assert_eq!(w.center(), Point::new(45.0, 30.0));
        // border click still yields a valid window
        let b = bag(vec![], vec![click(0.0, 60.0)]);
        assert!(initial_window(&b, &cfg(Supervision::OneClick, 10.0)).is_ok());
    }

    #[test]
    fn single_proposal_wins() {
        let b = bag(vec![prop(0.0, 0.0, 10.0, 10.0, 1.0, 0.5)], vec![]);
        let s = relocalize(&b, &AppearanceModel::zeros(1), &MilConfig::default()).unwrap();
        assert_eq!(s.proposal, 0);
        assert!(relocalize(&bag(vec![], vec![]), &AppearanceModel::zeros(1), &MilConfig::default()).is_err());
    }

    #[test]
    fn no_supervision_constant_objectness_is_appearance_argmax() {
        let b = bag(
            vec![
                prop(0.0, 0.0, 10.0, 10.0, 0.2, 0.5),
                prop(5.0, 0.0, 10.0, 10.0, 0.9, 0.5),
                prop(0.0, 5.0, 10.0, 10.0, -0.4, 0.5),
            ],
            vec![],
        );
        let m = AppearanceModel {
            weights: vec![2.0],
            bias: -1.0,
        };
        assert_eq!(relocalize(&b, &m, &MilConfig::default()).unwrap().proposal, 1);
    }

    #[test]
    fn tiny_sigma_bc_picks_click_centered_proposal() {
        let b = bag(
            vec![
                prop(0.0, 0.0, 40.0, 40.0, 5.0, 1.0),
                prop(50.0, 10.0, 20.0, 20.0, -5.0, 0.1),
                prop(10.0, 10.0, 30.0, 30.0, 1.0, 0.9),
            ],
            vec![click(60.0, 20.0)],
        );
        let m = AppearanceModel {
            weights: vec![1.0],
            bias: 0.0,
        };
        let s = relocalize(&b, &m, &cfg(Supervision::OneClick, 1e-3)).unwrap();
        assert_eq!(s.proposal, 1);
        assert_eq!(s.s_bc, 1.0);
    }

    #[test]
    fn one_and_two_click_agree_on_coincident_clicks() {
        let props = vec![
            prop(0.0, 0.0, 40.0, 40.0, 0.5, 0.6),
            prop(30.0, 10.0, 30.0, 30.0, 0.1, 0.3),
            prop(60.0, 20.0, 20.0, 20.0, 0.9, 0.5),
        ];
        let m = AppearanceModel {
            weights: vec![1.0],
            bias: 0.0,
        };
        let one = bag(props.clone(), vec![click(45.0, 25.0)]);
        let two = bag(props, vec![click(45.0, 25.0), click(45.0, 25.0)]);
        let s1 = score_bag(&one, &m, &cfg(Supervision::OneClick, 15.0));
        let mut c2 = cfg(Supervision::TwoClick, 15.0);
        let s2 = score_bag(&two, &m, &c2);
        for (a, b) in s1.iter().zip(&s2) {
            assert_eq!(a.s_ap, b.s_ap);
            assert_eq!(a.log_s_bc, b.log_s_bc);
        }
        // under one-click supervision the second click is ignored entirely
        c2.supervision = Supervision::OneClick;
        assert_eq!(score_bag(&two, &m, &c2), s1);
    }

    #[test]
    fn argmax_invariant_to_monotone_appearance_transform() {
        let props: Vec<_> = (0..8)
            .map(|i| prop(5.0 * i as f64, 3.0, 20.0, 20.0, (i as f64 * 0.7).sin(), 0.1 * i as f64 % 1.0))
            .collect();
        let b = bag(props, vec![click(30.0, 14.0)]);
        let c = cfg(Supervision::OneClick, 20.0);
        let m1 = AppearanceModel {
            weights: vec![1.0],
            bias: 0.0,
        };
        let m2 = AppearanceModel {
            weights: vec![7.5],
            bias: 3.0,
        };
        assert_eq!(
            relocalize(&b, &m1, &c).unwrap().proposal,
            relocalize(&b, &m2, &c).unwrap().proposal
        );
    }

    #[test]
    fn detection_basics() {
        let m = AppearanceModel {
            weights: vec![1.0],
            bias: 0.0,
        };
        let one = bag(vec![prop(0.0, 0.0, 10.0, 10.0, 1.0, 0.5)], vec![]);
        assert_eq!(detect(&[one], &m, 0.3).len(), 1);
        let dup = bag(
            vec![prop(0.0, 0.0, 10.0, 10.0, 1.0, 0.5), prop(0.0, 0.0, 10.0, 10.0, 0.5, 0.5)],
            vec![],
        );
        let d = detect(&[dup], &m, 0.3);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].score, 0.75);
    }

    #[test]
    fn supervision_parsing() {
        assert_eq!("one-click".parse::<Supervision>().unwrap(), Supervision::OneClick);
        assert_eq!("two_click".parse::<Supervision>().unwrap(), Supervision::TwoClick);
        assert!("three".parse::<Supervision>().is_err());
    }
}
