use std::collections::BTreeMap;

use clickmil::datastore::{generate_synthetic, Dataset, Split, SyntheticConfig};
use clickmil::iou;
use clickmil::mil::{run_mil, train_svm, MilConfig, SvmParams};
use clickmil::pipeline::corloc_per_class;

fn small(overlap: f64, floor: f64, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        seed,
        positive_images: 120,
        negative_images: 80,
        test_images: 0,
        overlap,
        iou_floor: floor,
        feature_noise: 0.0,
        objectness_noise: 0.0,
        ..SyntheticConfig::default()
    }
}

fn object_index(ds: &Dataset, image_id: &str) -> usize {
    let gt = ds.gt.iter().find(|g| g.image_id == image_id).unwrap();
    ds.proposals[image_id]
        .iter()
        .position(|p| iou(&p.bbox, &gt.bbox) >= 0.5)
        .unwrap()
}

#[test]
fn separable_construction_has_zero_hinge_model() {
    let ds = generate_synthetic(&small(0.0, 1.0, 3)).unwrap();
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for img in &ds.manifest.images {
        let props = &ds.proposals[&img.id];
        if img.labels.is_empty() {
            neg.extend(props.iter().map(|p| p.feature.clone()));
        } else {
            let k = object_index(&ds, &img.id);
            for (i, p) in props.iter().enumerate() {
                if i == k { pos.push(p.feature.clone()) } else { neg.push(p.feature.clone()) }
            }
        }
    }
    let params = SvmParams { lambda: 1e-6, tolerance: 1e-12, max_epochs: 2000 };
    let m = train_svm(&pos, &neg, &params, 0).unwrap();
    let hinge: f64 = pos
        .iter()
        .map(|x| (1.0 - m.margin(x)).max(0.0))
        .chain(neg.iter().map(|x| (1.0 + m.margin(x)).max(0.0)))
        .sum();
    assert!(hinge < 1e-6, "hinge {hinge}");
}

#[test]
fn separable_dataset_reaches_full_corloc() {
    for seed in 0..3 {
        let ds = generate_synthetic(&small(0.0, 1.0, seed)).unwrap();
        let bags = ds.bags("object", Split::Train, &BTreeMap::new());
        let out = run_mil(&bags, &MilConfig { seed, ..MilConfig::default() }).unwrap();
        let c = corloc_per_class(&ds, &out.selections)["object"];
        assert_eq!(c, 1.0, "seed {seed}");
    }
}

#[test]
fn full_overlap_appearance_is_at_chance() {
    // Appearance alone cannot tell the object from distractors; the pick
    // rate of the object proposal matches uniform random selection.
    let cfg = SyntheticConfig {
        positive_images: 600,
        negative_images: 200,
        feature_noise: 0.3,
        ..small(1.0, 0.7, 11)
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let bags = ds.bags("object", Split::Train, &BTreeMap::new());
    let pos: Vec<&[f64]> = bags
        .iter()
        .filter(|b| b.positive)
        .flat_map(|b| b.proposals.iter().map(|p| p.feature.as_slice()))
        .collect();
    let neg: Vec<&[f64]> = bags
        .iter()
        .filter(|b| !b.positive)
        .flat_map(|b| b.proposals.iter().map(|p| p.feature.as_slice()))
        .collect();
    let m = train_svm(&pos, &neg, &SvmParams::default(), 0).unwrap();
    let positives: Vec<_> = bags.iter().filter(|b| b.positive).collect();
    let hits = positives
        .iter()
        .filter(|b| {
            let best = (0..b.proposals.len())
                .max_by(|&i, &j| m.margin(&b.proposals[i].feature).total_cmp(&m.margin(&b.proposals[j].feature)))
                .unwrap();
            iou(&b.proposals[best].bbox, &b.gt_boxes[0]) >= 0.5
        })
        .count();
    let n = positives.len() as f64;
    let rate = hits as f64 / n;
    // Monte-Carlo oracle: one of 30 proposals reaches IoU 0.5
    let chance = 1.0 / 30.0;
    let sd = (chance * (1.0 - chance) / n).sqrt();
    assert!((rate - chance).abs() < 4.0 * sd, "rate {rate} vs chance {chance}");
}

#[test]
fn same_seed_gives_identical_files() {
    let cfg = SyntheticConfig { positive_images: 30, negative_images: 20, test_images: 10, ..SyntheticConfig::default() };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_synthetic(&cfg).unwrap().save(a.path()).unwrap();
    generate_synthetic(&cfg).unwrap().save(b.path()).unwrap();
    for f in ["manifest.json", "proposals.jsonl", "gt.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn stored_features_have_six_significant_digits() {
    let cfg = SyntheticConfig { positive_images: 2, negative_images: 1, test_images: 0, ..SyntheticConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    generate_synthetic(&cfg).unwrap().save(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("proposals.jsonl")).unwrap();
    let line = text.lines().nth(1).unwrap();
    let feature = &line[line.find("\"feature\":[").unwrap() + 11..];
    let first = feature.split([',', ']']).next().unwrap();
    let mantissa = first.trim_start_matches('-').split('e').next().unwrap();
    assert_eq!(mantissa.len(), 7, "{first}");
}
