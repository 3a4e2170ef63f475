//! Protocol state: sessions, qualification attempts, batch assignment.
//!
//! Everything mutable sits behind one lock, so every request is applied
//! atomically; the click logs are the only durable state.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clickmil::annotator::{evaluate_qualification, generate_polygon, ClickRecord};
use clickmil::config;
use clickmil::datastore::{effective_clicks, save_polygons, ClickLog, Dataset, NewClick, Split};
use clickmil::{euclidean, polygon_bbox_center, Point, Polygon};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

use crate::api::*;

pub const BATCH_CLICKS_FILE: &str = "clicks.jsonl";
pub const QUALIFICATION_DIR: &str = "qualification";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub batch_size: usize,
    pub golden_per_batch: usize,
    /// Distinct annotators per image-class pair.
    pub clicks_per_object: usize,
    pub qualification_polygons: usize,
    pub qualification_threshold: f64,
    pub canvas: (f64, f64),
    /// Pairs per class set aside as golden questions.
    pub golden_per_class: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            batch_size: config::BATCH_SIZE,
            golden_per_batch: config::GOLDEN_PER_BATCH,
            clicks_per_object: config::CLICKS_PER_OBJECT,
            qualification_polygons: config::QUALIFICATION_POLYGONS,
            qualification_threshold: config::QUALIFICATION_THRESHOLD_PX,
            canvas: config::QUALIFICATION_CANVAS,
            golden_per_class: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceError {
    Unauthorized,
    Forbidden(String),
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

impl std::fmt::Display for ServiceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServiceError::Unauthorized => f.write_str("missing or unknown bearer token"),
            ServiceError::Forbidden(m)
            | ServiceError::BadRequest(m)
            | ServiceError::NotFound(m)
            | ServiceError::Conflict(m)
            | ServiceError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<clickmil::Error> for ServiceError {
    fn from(e: clickmil::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug)]
struct Pair {
    image_id: String,
    class: String,
    width: f64,
    height: f64,
    gt_centers: Vec<Point>,
}

#[derive(Debug)]
struct Attempt {
    id: String,
    polygons: Vec<(String, Polygon)>,
}

#[derive(Debug)]
struct Session {
    annotator_id: String,
    state: SessionState,
    attempts: u32,
    attempt: Option<Attempt>,
    batch: Option<String>,
}

#[derive(Debug)]
struct Batch {
    class: String,
    payload: BatchPayload,
    /// Pair index and golden flag per item, aligned with `payload.items`.
    items: Vec<(usize, bool)>,
}

#[derive(Debug)]
struct State {
    rng: rand_chacha::ChaCha8Rng,
    sessions: HashMap<String, Session>,
    session_count: u64,
    attempt_count: u64,
    pairs: Vec<Pair>,
    regular: BTreeMap<String, Vec<usize>>,
    golden: BTreeMap<String, Vec<usize>>,
    /// Annotators holding or having completed each pair.
    holders: Vec<BTreeSet<String>>,
    batches: HashMap<String, Batch>,
    answered_polygons: Vec<(String, Polygon)>,
}

pub struct Service {
    config: ServiceConfig,
    state: Mutex<State>,
    clicks: ClickLog,
    qualification_clicks: ClickLog,
    polygons_path: PathBuf,
}

fn token<R: Rng>(rng: &mut R) -> String {
    format!("{:032x}", rng.random::<u128>())
}

impl Service {
    /// Serve the positive image-class pairs of the training split of
    /// `dataset`, keeping click logs under `data_dir`.
    pub fn open(dataset: &Dataset, data_dir: &Path, config: ServiceConfig) -> clickmil::Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let mut pairs = Vec::new();
        for img in dataset.manifest.images.iter().filter(|i| i.split == Split::Train) {
            for class in &img.labels {
                let gt_centers = dataset
                    .gt
                    .iter()
                    .filter(|g| g.image_id == img.id && &g.class == class)
                    .map(|g| g.bbox.center())
                    .collect();
                pairs.push(Pair {
                    image_id: img.id.clone(),
                    class: class.clone(),
                    width: img.width,
                    height: img.height,
                    gt_centers,
                });
            }
        }
        let mut regular: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut golden: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for class in &dataset.manifest.classes {
            let mut with_gt: Vec<usize> = (0..pairs.len())
                .filter(|&i| &pairs[i].class == class && !pairs[i].gt_centers.is_empty())
                .collect();
            with_gt.shuffle(&mut rng);
            with_gt.truncate(config.golden_per_class);
            with_gt.sort_unstable();
            let reg = (0..pairs.len())
                .filter(|&i| &pairs[i].class == class && with_gt.binary_search(&i).is_err())
                .collect();
            regular.insert(class.clone(), reg);
            golden.insert(class.clone(), with_gt);
        }

        let clicks = ClickLog::open(data_dir.join(BATCH_CLICKS_FILE))?;
        let qdir = data_dir.join(QUALIFICATION_DIR);
        let qualification_clicks = ClickLog::open(qdir.join(BATCH_CLICKS_FILE))?;
        let polygons_path = qdir.join(clickmil::datastore::POLYGONS_FILE);
        let answered_polygons = if polygons_path.exists() {
            clickmil::datastore::load_polygons(&polygons_path)?.1
        } else {
            Vec::new()
        };

        // resume assignment state from the persisted log
        let index: HashMap<(&str, &str), usize> = pairs
            .iter()
            .enumerate()
            .map(|(i, p)| ((p.image_id.as_str(), p.class.as_str()), i))
            .collect();
        let mut holders = vec![BTreeSet::new(); pairs.len()];
        for ((image, class), recs) in effective_clicks(&clicks.read_all()?) {
            if let Some(&i) = index.get(&(image.as_str(), class.as_str())) {
                holders[i].extend(recs.into_iter().map(|r| r.annotator_id));
            }
        }

        Ok(Service {
            config,
            state: Mutex::new(State {
                rng,
                sessions: HashMap::new(),
                session_count: 0,
                attempt_count: 0,
                pairs,
                regular,
                golden,
                holders,
                batches: HashMap::new(),
                answered_polygons,
            }),
            clicks,
            qualification_clicks,
            polygons_path,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create_session(&self, req: NewSession) -> SessionCreated {
        let mut st = self.lock();
        st.session_count += 1;
        let session_id = format!("s-{}", st.session_count);
        let annotator_id = req
            .annotator_id
            .filter(|a| !a.trim().is_empty())
            .unwrap_or_else(|| format!("annotator-{}", st.session_count));
        let token = token(&mut rand::rng());
        st.sessions.insert(
            token.clone(),
            Session {
                annotator_id: annotator_id.clone(),
                state: SessionState::Untrained,
                attempts: 0,
                attempt: None,
                batch: None,
            },
        );
        SessionCreated {
            schema_version: API_SCHEMA_VERSION,
            session_id,
            annotator_id,
            token,
            state: SessionState::Untrained,
        }
    }

    pub fn session_state(&self, token: &str) -> Result<SessionState> {
        self.lock().sessions.get(token).map(|s| s.state).ok_or(ServiceError::Unauthorized)
    }

    /// A fresh set of polygons for an untrained session; a no-op for a
    /// qualified one.
    pub fn qualification(&self, token: &str) -> Result<QualificationTest> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let canvas = Canvas {
            width: self.config.canvas.0,
            height: self.config.canvas.1,
        };
        let session = st.sessions.get_mut(token).ok_or(ServiceError::Unauthorized)?;
        if session.state != SessionState::Untrained {
            return Ok(QualificationTest {
                schema_version: API_SCHEMA_VERSION,
                state: session.state,
                attempt_id: None,
                canvas,
                polygons: Vec::new(),
            });
        }
        st.attempt_count += 1;
        let attempt_id = format!("q{}", st.attempt_count);
        let mut polygons = Vec::with_capacity(self.config.qualification_polygons);
        for i in 0..self.config.qualification_polygons {
            let p = generate_polygon(&mut st.rng, canvas.width, canvas.height)?;
            polygons.push((format!("{attempt_id}-{i:02}"), p));
        }
        let tasks = polygons
            .iter()
            .map(|(id, p)| PolygonTask {
                polygon_id: id.clone(),
                vertices: p.vertices().to_vec(),
            })
            .collect();
        session.attempt = Some(Attempt {
            id: attempt_id.clone(),
            polygons,
        });
        Ok(QualificationTest {
            schema_version: API_SCHEMA_VERSION,
            state: session.state,
            attempt_id: Some(attempt_id),
            canvas,
            polygons: tasks,
        })
    }

    pub fn submit_qualification(&self, token: &str, sub: QualificationSubmission) -> Result<QualificationOutcome> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let session = st.sessions.get_mut(token).ok_or(ServiceError::Unauthorized)?;
        if session.state != SessionState::Untrained {
            return Err(ServiceError::Conflict("session is already qualified".into()));
        }
        let attempt = match &session.attempt {
            Some(a) if a.id == sub.attempt_id => a,
            _ => return Err(ServiceError::Conflict(format!("unknown or stale attempt `{}`", sub.attempt_id))),
        };
        if sub.clicks.len() != attempt.polygons.len() {
            return Err(ServiceError::BadRequest(format!(
                "expected {} clicks, got {}",
                attempt.polygons.len(),
                sub.clicks.len()
            )));
        }
        let by_id: HashMap<&str, &PolygonClick> = sub.clicks.iter().map(|c| (c.polygon_id.as_str(), c)).collect();
        let mut records = Vec::with_capacity(attempt.polygons.len());
        for (id, _) in &attempt.polygons {
            let c = by_id
                .get(id.as_str())
                .ok_or_else(|| ServiceError::BadRequest(format!("no click for polygon `{id}`")))?;
            let rec = ClickRecord::new(id.clone(), session.annotator_id.clone(), Point::new(c.x, c.y), c.time_ms)
                .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
            records.push(rec);
        }
        let polys: Vec<Polygon> = attempt.polygons.iter().map(|(_, p)| p.clone()).collect();
        let result = evaluate_qualification(&records, &polys, self.config.qualification_threshold)
            .map_err(|e| ServiceError::BadRequest(e.to_string()))?;

        let feedback = attempt
            .polygons
            .iter()
            .zip(&records)
            .zip(&result.per_polygon_errors)
            .map(|(((id, p), r), d)| FeedbackRow {
                polygon_id: id.clone(),
                center: polygon_bbox_center(p).1,
                click: r.position,
                distance: *d,
            })
            .collect();

        let new: Vec<NewClick> = records.into_iter().map(|r| NewClick::new("polygon", r)).collect();
        self.qualification_clicks.append_many(&new)?;
        let attempt = session.attempt.take().expect("matched above");
        st.answered_polygons.extend(attempt.polygons);
        save_polygons(&self.polygons_path, self.config.canvas, &st.answered_polygons)?;

        session.attempts += 1;
        if result.passed {
            session.state = SessionState::Qualified;
        }
        Ok(QualificationOutcome {
            schema_version: API_SCHEMA_VERSION,
            passed: result.passed,
            mean_error: result.mean_error,
            threshold: self.config.qualification_threshold,
            state: session.state,
            attempts: session.attempts,
            feedback,
        })
    }

    fn empty_batch() -> BatchPayload {
        BatchPayload {
            schema_version: API_SCHEMA_VERSION,
            batch_id: None,
            class: None,
            items: Vec::new(),
            suggested_seconds_per_click: config::SUGGESTED_SECONDS_PER_CLICK,
        }
    }

    /// The session's outstanding batch, or a new single-class batch with
    /// the golden items shuffled in among the regular ones.
    pub fn fetch_batch(&self, token: &str) -> Result<BatchPayload> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let session = st.sessions.get_mut(token).ok_or(ServiceError::Unauthorized)?;
        if session.state == SessionState::Untrained {
            return Err(ServiceError::Forbidden("pass the qualification test first".into()));
        }
        if let Some(id) = &session.batch {
            return Ok(st.batches[id].payload.clone());
        }
        let annotator = session.annotator_id.clone();
        let cap = self.config.clicks_per_object;
        let eligible = |i: &usize| st.holders[*i].len() < cap && !st.holders[*i].contains(&annotator);
        let mut best: Option<(&String, usize)> = None;
        for (class, items) in &st.regular {
            if st.golden[class].len() < self.config.golden_per_batch {
                continue;
            }
            let n = items.iter().filter(|i| eligible(i)).count();
            if n > 0 && best.is_none_or(|(_, m)| n > m) {
                best = Some((class, n));
            }
        }
        let Some((class, _)) = best else {
            return Ok(Self::empty_batch());
        };
        let class = class.clone();
        let take = self.config.batch_size - self.config.golden_per_batch;
        let regular: Vec<usize> = st.regular[&class].iter().copied().filter(|i| eligible(i)).take(take).collect();
        let golden: Vec<usize> = st.golden[&class]
            .choose_multiple(&mut st.rng, self.config.golden_per_batch)
            .copied()
            .collect();
        let mut items: Vec<(usize, bool)> = regular
            .iter()
            .map(|&i| (i, false))
            .chain(golden.iter().map(|&i| (i, true)))
            .collect();
        items.shuffle(&mut st.rng);

        let batch_id = format!("b-{}", token_short(&mut st.rng));
        let payload = BatchPayload {
            schema_version: API_SCHEMA_VERSION,
            batch_id: Some(batch_id.clone()),
            class: Some(class.clone()),
            items: items
                .iter()
                .map(|&(i, _)| BatchItem {
                    item_id: token_short(&mut st.rng),
                    image_id: st.pairs[i].image_id.clone(),
                    width: st.pairs[i].width,
                    height: st.pairs[i].height,
                })
                .collect(),
            suggested_seconds_per_click: config::SUGGESTED_SECONDS_PER_CLICK,
        };
        for &i in &regular {
            st.holders[i].insert(annotator.clone());
        }
        let session = st.sessions.get_mut(token).expect("looked up above");
        session.state = SessionState::Annotating;
        session.batch = Some(batch_id.clone());
        st.batches.insert(
            batch_id,
            Batch {
                class,
                payload: payload.clone(),
                items,
            },
        );
        Ok(payload)
    }

    pub fn submit_batch(&self, token: &str, sub: BatchSubmission) -> Result<BatchOutcome> {
        let mut guard = self.lock();
        let st = &mut *guard;
        let session = st.sessions.get(token).ok_or(ServiceError::Unauthorized)?;
        if session.batch.as_deref() != Some(sub.batch_id.as_str()) {
            return Err(if st.batches.contains_key(&sub.batch_id) {
                ServiceError::Conflict(format!("batch `{}` is not assigned to this session", sub.batch_id))
            } else {
                ServiceError::NotFound(format!("unknown batch `{}`", sub.batch_id))
            });
        }
        let annotator = session.annotator_id.clone();
        let batch = &st.batches[&sub.batch_id];
        if sub.clicks.len() != batch.items.len() {
            return Err(ServiceError::BadRequest(format!(
                "expected {} clicks, got {}",
                batch.items.len(),
                sub.clicks.len()
            )));
        }
        let by_id: HashMap<&str, &ItemClick> = sub.clicks.iter().map(|c| (c.item_id.as_str(), c)).collect();
        let mut records = Vec::with_capacity(batch.items.len());
        let mut golden_errors = Vec::new();
        for (item, &(pair, is_golden)) in batch.payload.items.iter().zip(&batch.items) {
            let c = by_id
                .get(item.item_id.as_str())
                .ok_or_else(|| ServiceError::BadRequest(format!("no click for item `{}`", item.item_id)))?;
            if !(c.time_ms > 0.0 && c.time_ms.is_finite()) {
                return Err(ServiceError::BadRequest(format!("item `{}`: response time must be positive", item.item_id)));
            }
            let p = &st.pairs[pair];
            let pos = Point::new(c.x, c.y);
            if !(pos.is_finite() && (0.0..=p.width).contains(&c.x) && (0.0..=p.height).contains(&c.y)) {
                return Err(ServiceError::BadRequest(format!("item `{}`: click outside the image", item.item_id)));
            }
            if is_golden {
                let e = p.gt_centers.iter().map(|g| euclidean(g, &pos)).fold(f64::INFINITY, f64::min);
                golden_errors.push(e);
            }
            let rec = ClickRecord::new(p.image_id.clone(), annotator.clone(), pos, c.time_ms)
                .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
            records.push(rec);
        }
        let golden_mean_error = golden_errors.iter().sum::<f64>() / golden_errors.len().max(1) as f64;
        let mean_response_time_ms = records.iter().map(|r| r.response_time_ms).sum::<f64>() / records.len().max(1) as f64;
        let accepted = golden_mean_error < self.config.qualification_threshold;

        let batch = st.batches.remove(&sub.batch_id).expect("checked above");
        let persisted = if accepted {
            let new: Vec<NewClick> = records.into_iter().map(|r| NewClick::new(batch.class.clone(), r)).collect();
            if let Err(e) = self.clicks.append_many(&new) {
                st.batches.insert(sub.batch_id.clone(), batch);
                return Err(e.into());
            }
            new.len()
        } else {
            for &(i, golden) in &batch.items {
                if !golden {
                    st.holders[i].remove(&annotator);
                }
            }
            0
        };
        st.sessions.get_mut(token).expect("looked up above").batch = None;
        Ok(BatchOutcome {
            schema_version: API_SCHEMA_VERSION,
            accepted,
            golden_mean_error,
            threshold: self.config.qualification_threshold,
            mean_response_time_ms,
            persisted,
            message: if accepted {
                "Batch accepted. Thank you!".into()
            } else {
                "Some clicks were not close enough to the object centers. Please take another look and try a new batch.".into()
            },
        })
    }

    pub fn instructions(&self) -> Instructions {
        Instructions {
            schema_version: API_SCHEMA_VERSION,
            title: "Click on the center of the object".into(),
            task: "Imagine a perfectly tight rectangular box around the object and click on the center of that box. \
                   This is not necessarily a point on the object itself."
                .into(),
            rules: vec![
                "If the object is truncated by the image border, click on the center of its visible part.".into(),
                "If there are several instances of the class, click on the center of any one of them.".into(),
                "All images in a batch show the same class; the class name is shown once per batch.".into(),
            ],
            qualification: format!(
                "Before annotating, click on the center of {} synthetic polygons. You pass if your mean error is below {} pixels; \
                 you may repeat the test as many times as you want.",
                self.config.qualification_polygons, self.config.qualification_threshold
            ),
            suggested_seconds_per_click: config::SUGGESTED_SECONDS_PER_CLICK,
        }
    }
}

fn token_short<R: Rng>(rng: &mut R) -> String {
    format!("{:016x}", rng.random::<u64>())
}
