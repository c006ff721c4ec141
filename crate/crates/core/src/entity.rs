//! Shared top-K visit-frequency model for the APP and WEB modalities.
//!
//! The valid-class model is the user's top K entities by training visits,
//! normalized; the invalid-class model is the other users' visit counts
//! restricted to those same K entities. Windows are decided by the
//! maximum-likelihood product over in-model events, computed in log space.
//! Entities outside the model are outliers and are ignored.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};

use thiserror::Error;
use url::Url;

use crate::detector::{Detector, Vote};
use crate::events::{escape_field, unescape_field, Modality, Payload, RawEvent, Window};

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EntityError {
    #[error("valid visit counts are empty")]
    EmptyValidCounts,
    #[error("epsilon {epsilon} must lie in (0, 1/k) for k={k}")]
    BadEpsilon { epsilon: f64, k: usize },
    #[error("cannot extract an entity from a {0} event")]
    WrongModality(Modality),
    #[error("unparseable url {0:?}")]
    UnparseableUrl(String),
    #[error("model line {line}: {message}")]
    ModelFormat { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The unique identifier an APP/WEB event contributes to the frequency model:
/// the app name verbatim, or the URL's host with subdomains significant
/// ("m.example.com" and "www.example.com" are different entities).
pub fn extract_entity(event: &RawEvent) -> Result<String, EntityError> {
    match &event.payload {
        Payload::App(name) => Ok(name.clone()),
        Payload::Web(url) => domain_of(url),
        other => Err(EntityError::WrongModality(other.modality())),
    }
}

/// Host part of a URL. Scheme-less inputs ("www.example.com/a") are accepted
/// by retrying with an http prefix.
pub fn domain_of(url: &str) -> Result<String, EntityError> {
    let parsed = Url::parse(url)
        .or_else(|_| Url::parse(&format!("http://{url}")))
        .map_err(|_| EntityError::UnparseableUrl(url.to_string()))?;
    parsed
        .host_str()
        .map(|h| h.to_string())
        .ok_or_else(|| EntityError::UnparseableUrl(url.to_string()))
}

/// Per-user frequency model over the top K training entities, with the two
/// class-conditional distributions and the smoothing floor applied to both.
#[derive(Debug, Clone)]
pub struct EntityModel {
    modality: Modality,
    entities: Vec<String>,
    p_valid: Vec<f64>,
    p_invalid: Vec<f64>,
    epsilon: f64,
    log_ratio: Vec<f64>,
    index: HashMap<String, usize>,
}

/// Normalize counts to probabilities, then floor zero (or sub-epsilon)
/// entries at epsilon exactly, rescaling only the unfloored mass so the
/// distribution still sums to one.
fn normalize_with_floor(counts: &[u64], epsilon: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let k = counts.len();
    if total == 0 {
        return vec![1.0 / k as f64; k];
    }
    let mut probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let floored: Vec<bool> = probs.iter().map(|&p| p < epsilon).collect();
    let n_floored = floored.iter().filter(|&&f| f).count();
    if n_floored == 0 {
        return probs;
    }
    if n_floored == k {
        return vec![1.0 / k as f64; k];
    }
    let unfloored_sum: f64 = probs
        .iter()
        .zip(&floored)
        .filter(|(_, &f)| !f)
        .map(|(&p, _)| p)
        .sum();
    let scale = (1.0 - n_floored as f64 * epsilon) / unfloored_sum;
    for (p, f) in probs.iter_mut().zip(&floored) {
        *p = if *f { epsilon } else { *p * scale };
    }
    probs
}

/// Build the model: top K valid entities by count (ties broken
/// lexicographically), both class distributions normalized over exactly that
/// entity set. Fewer than K distinct entities is not an error.
pub fn train_entity(
    modality: Modality,
    valid_counts: &BTreeMap<String, u64>,
    impostor_counts: &BTreeMap<String, u64>,
    k: usize,
    epsilon: f64,
) -> Result<EntityModel, EntityError> {
    if valid_counts.is_empty() {
        return Err(EntityError::EmptyValidCounts);
    }
    let k = k.min(valid_counts.len());
    if !(epsilon > 0.0 && epsilon < 1.0 / k as f64) {
        return Err(EntityError::BadEpsilon { epsilon, k });
    }

    // BTreeMap iteration is lexicographic, so a stable sort by descending
    // count leaves ties in lexicographic order.
    let mut ranked: Vec<(&String, u64)> = valid_counts.iter().map(|(e, &c)| (e, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(k);

    let entities: Vec<String> = ranked.iter().map(|(e, _)| (*e).clone()).collect();
    let valid_top: Vec<u64> = ranked.iter().map(|(_, c)| *c).collect();
    let impostor_top: Vec<u64> = entities
        .iter()
        .map(|e| impostor_counts.get(e).copied().unwrap_or(0))
        .collect();

    let p_valid = normalize_with_floor(&valid_top, epsilon);
    let p_invalid = normalize_with_floor(&impostor_top, epsilon);
    let log_ratio: Vec<f64> = p_valid
        .iter()
        .zip(&p_invalid)
        .map(|(&v, &i)| (v / i).ln())
        .collect();
    let index = entities
        .iter()
        .enumerate()
        .map(|(i, e)| (e.clone(), i))
        .collect();

    Ok(EntityModel {
        modality,
        entities,
        p_valid,
        p_invalid,
        epsilon,
        log_ratio,
        index,
    })
}

impl EntityModel {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn p_valid(&self) -> &[f64] {
        &self.p_valid
    }

    pub fn p_invalid(&self) -> &[f64] {
        &self.p_invalid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// ln(P(e|H1)/P(e|H0)) for an in-model entity, `None` for outliers.
    pub fn log_likelihood_ratio(&self, entity: &str) -> Option<f64> {
        self.index.get(entity).map(|&i| self.log_ratio[i])
    }

    /// Sum of per-event log-likelihood ratios over the window's in-model
    /// events of this modality; `None` when every event is an outlier.
    pub fn window_log_ratio(&self, window: &Window<'_>) -> Option<f64> {
        let mut sum = 0.0;
        let mut matched = false;
        for timed in &window.events {
            if timed.event.modality() != self.modality {
                continue;
            }
            let entity = match extract_entity(&timed.event) {
                Ok(e) => e,
                Err(_) => continue,
            };
            if let Some(lr) = self.log_likelihood_ratio(&entity) {
                sum += lr;
                matched = true;
            }
        }
        matched.then_some(sum)
    }

    /// Maximum-likelihood decision: accept when the log-ratio is nonnegative.
    pub fn decide_window(&self, window: &Window<'_>) -> Option<Vote> {
        self.window_log_ratio(window)
            .map(|lr| if lr >= 0.0 { Vote::Accept } else { Vote::Reject })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "modality\t{}", self.modality.tag())?;
        writeln!(w, "k\t{}", self.entities.len())?;
        writeln!(w, "epsilon\t{}", self.epsilon)?;
        for (i, entity) in self.entities.iter().enumerate() {
            writeln!(
                w,
                "entity\t{}\t{}\t{}",
                escape_field(entity),
                self.p_valid[i],
                self.p_invalid[i]
            )?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<EntityModel, EntityError> {
        let mut modality = None;
        let mut epsilon = None;
        let mut entities = Vec::new();
        let mut p_valid = Vec::new();
        let mut p_invalid = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let fmt_err = |message: String| EntityError::ModelFormat {
                line: idx + 1,
                message,
            };
            let mut fields = line.split('\t');
            match fields.next() {
                Some("modality") => {
                    let tag = fields.next().ok_or_else(|| fmt_err("missing modality".into()))?;
                    modality = Some(
                        Modality::from_tag(tag).ok_or_else(|| fmt_err(format!("bad modality {tag:?}")))?,
                    );
                }
                Some("k") => {} // informational; length of the entity list governs
                Some("epsilon") => {
                    let raw = fields.next().ok_or_else(|| fmt_err("missing epsilon".into()))?;
                    epsilon = Some(raw.parse::<f64>().map_err(|_| fmt_err("bad epsilon".into()))?);
                }
                Some("entity") => {
                    let name = fields.next().ok_or_else(|| fmt_err("missing entity".into()))?;
                    let v = fields.next().ok_or_else(|| fmt_err("missing p_valid".into()))?;
                    let i = fields.next().ok_or_else(|| fmt_err("missing p_invalid".into()))?;
                    entities.push(unescape_field(name).map_err(fmt_err)?);
                    p_valid.push(v.parse::<f64>().map_err(|_| fmt_err("bad p_valid".into()))?);
                    p_invalid.push(i.parse::<f64>().map_err(|_| fmt_err("bad p_invalid".into()))?);
                }
                other => return Err(fmt_err(format!("unknown key {other:?}"))),
            }
        }
        let modality = modality.ok_or(EntityError::ModelFormat {
            line: 0,
            message: "missing modality".into(),
        })?;
        let epsilon = epsilon.ok_or(EntityError::ModelFormat {
            line: 0,
            message: "missing epsilon".into(),
        })?;
        let log_ratio: Vec<f64> = p_valid
            .iter()
            .zip(&p_invalid)
            .map(|(&v, &i)| (v / i).ln())
            .collect();
        let index = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Ok(EntityModel {
            modality,
            entities,
            p_valid,
            p_invalid,
            epsilon,
            log_ratio,
            index,
        })
    }
}

impl Detector for EntityModel {
    fn modality(&self) -> Modality {
        self.modality
    }

    fn decide(&self, window: &Window<'_>) -> Option<Vote> {
        self.decide_window(window)
    }
}
