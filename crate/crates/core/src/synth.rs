//! Seeded synthetic population generator.
//!
//! Produces event logs statistically shaped like a mobile behavioral corpus:
//! activity arrives in sessions separated by idle gaps, keystrokes fire in
//! bursts inside sessions, app/web visits follow per-user Zipf vocabularies,
//! and location fixes arrive at regular one-per-minute intervals while "GPS
//! is on", from per-user habitual anchor clusters. Per-modality mean rates
//! track configurable targets per hour of active (idle-compressed) time.
//!
//! An overlap knob blends every behavioral component toward a shared profile
//! to control task difficulty: at 0 users are behaviorally disjoint, at 1
//! they are indistinguishable.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use thiserror::Error;

use crate::events::{Payload, RawEvent};

/// Shared alphabet for keystroke generation: letters, space, apostrophe
/// (chat-style typing, typos and all).
pub const ALPHABET: [char; 28] = [
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r',
    's', 't', 'u', 'v', 'w', 'x', 'y', 'z', ' ', '\'',
];

const VOCAB_SIZE: usize = 24;
/// The shared pool is smaller and therefore more concentrated: blended-in
/// entities rank high in every user's visit counts.
const SHARED_VOCAB_SIZE: usize = 12;
const SHARED_ANCHORS: usize = 4;
const WALL_EPOCH_BASE: i64 = 1_700_000_000;

/// Per-modality shaping of the overlap knob: the effective blend degree is
/// `overlap.powf(exponent)`. Every exponent keeps the endpoints (0 stays
/// disjoint, 1 stays identical); between them the curve balances how hard
/// each modality gets, so no single verifier trivializes or dominates the
/// fused task at moderate overlap. Order: text, app, web, location.
const OVERLAP_SHAPE: [f64; 4] = [0.7, 1.2, 1.2, 1.6];

/// Slowest keystroke cadence (seconds per character). Within a session the
/// cadence adapts so the owed keystrokes span the whole session, down to
/// this bound; typing therefore covers most of the active span, thinning to
/// bursts only in long low-text sessions.
const TEXT_MAX_CADENCE_SECS: f64 = 3.0;
const TEXT_MIN_CADENCE_SECS: f64 = 0.45;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("population needs at least 2 users (the impostor pool must be non-empty), got {0}")]
    TooFewUsers(usize),
    #[error("overlap degree {0} outside [0, 1]")]
    BadOverlap(f64),
}

/// Target event rates per hour of active time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRates {
    pub text: f64,
    pub app: f64,
    pub web: f64,
    pub location: f64,
}

impl Default for EventRates {
    fn default() -> Self {
        EventRates {
            text: 557.8,
            app: 23.2,
            web: 5.6,
            location: 3.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Target active (idle-compressed) duration per user.
    pub active_hours: f64,
    pub seed: u64,
    /// Behavioral overlap degree in [0, 1].
    pub overlap: f64,
    pub rates: EventRates,
    /// Per-user relative rate spread (a dispersion of 0.1 scales each user's
    /// rates by a factor in [0.9, 1.1]).
    pub rate_dispersion: f64,
    pub region_center: (f64, f64),
    /// Half-extent of the anchor region in degrees.
    pub region_extent_deg: f64,
    pub anchor_sigma_range: (f64, f64),
}

impl SynthConfig {
    pub fn new(n_users: usize, active_hours: f64, seed: u64) -> SynthConfig {
        SynthConfig {
            n_users,
            active_hours,
            seed,
            overlap: 0.0,
            rates: EventRates::default(),
            rate_dispersion: 0.10,
            region_center: (40.0, -75.0),
            region_extent_deg: 0.15,
            anchor_sigma_range: (0.002, 0.005),
        }
    }
}

/// Order-1 character transition table over the shared alphabet.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    rows: Vec<Vec<f64>>,
}

impl TransitionTable {
    fn random(rng: &mut ChaCha8Rng) -> TransitionTable {
        let rows = (0..ALPHABET.len())
            .map(|_| {
                // A peaked row: geometric mass over a random preference
                // order, so each user favors distinct character paths.
                let rho = rng.random_range(0.35..0.55);
                let mut order: Vec<usize> = (0..ALPHABET.len()).collect();
                order.shuffle(rng);
                let mut row = vec![0.0; ALPHABET.len()];
                let mut w = 1.0;
                for &idx in &order {
                    row[idx] = w;
                    w *= rho;
                }
                let total: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= total);
                row
            })
            .collect();
        TransitionTable { rows }
    }

    fn sample_next(&self, current: usize, rng: &mut ChaCha8Rng) -> usize {
        sample_weighted(&self.rows[current], rng)
    }
}

/// Entity list with normalized visit propensities.
#[derive(Debug, Clone)]
pub struct Vocab {
    pub entities: Vec<String>,
    pub weights: Vec<f64>,
}

impl Vocab {
    fn zipf(entities: Vec<String>, rng: &mut ChaCha8Rng) -> Vocab {
        let s = rng.random_range(1.0..1.3);
        let mut ranks: Vec<usize> = (0..entities.len()).collect();
        ranks.shuffle(rng);
        let mut weights: Vec<f64> = ranks
            .iter()
            .map(|&r| 1.0 / ((r + 1) as f64).powf(s))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Vocab { entities, weights }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> &str {
        &self.entities[sample_weighted(&self.weights, rng)]
    }

    fn top(&self) -> &str {
        let mut best = 0;
        for i in 1..self.weights.len() {
            if self.weights[i] > self.weights[best] {
                best = i;
            }
        }
        &self.entities[best]
    }
}

/// A habitual location cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub lat: f64,
    pub lon: f64,
    pub sigma: f64,
    pub dwell: f64,
}

#[derive(Debug, Clone)]
pub struct UserProfile {
    pub seed: u64,
    pub user_id: String,
    pub text_model: TransitionTable,
    pub app_vocab: Vocab,
    pub web_vocab: Vocab,
    pub location_anchors: Vec<Anchor>,
    pub modality_rates: EventRates,
}

/// The common behavior users blend toward under the overlap knob.
#[derive(Debug, Clone)]
pub struct SharedBehavior {
    pub text_model: TransitionTable,
    pub app_vocab: Vocab,
    pub web_vocab: Vocab,
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone)]
pub struct Population {
    pub config: SynthConfig,
    pub users: Vec<UserProfile>,
    pub shared: SharedBehavior,
}

fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut u: f64 = rng.random::<f64>();
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

fn random_anchor(cfg: &SynthConfig, rng: &mut ChaCha8Rng, dwell: f64) -> Anchor {
    Anchor {
        lat: cfg.region_center.0 + rng.random_range(-cfg.region_extent_deg..cfg.region_extent_deg),
        lon: cfg.region_center.1 + rng.random_range(-cfg.region_extent_deg..cfg.region_extent_deg),
        sigma: rng.random_range(cfg.anchor_sigma_range.0..cfg.anchor_sigma_range.1),
        dwell,
    }
}

fn normalized_dwells(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut dwells: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = dwells.iter().sum();
    dwells.iter_mut().for_each(|d| *d /= total);
    dwells
}

/// Build the population's profiles. Per-user seeds derive from the global
/// seed up front, so later per-user generation is order-independent.
pub fn build_population(config: SynthConfig) -> Result<Population, SynthError> {
    if config.n_users < 2 {
        return Err(SynthError::TooFewUsers(config.n_users));
    }
    if !(0.0..=1.0).contains(&config.overlap) {
        return Err(SynthError::BadOverlap(config.overlap));
    }
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let shared_seed: u64 = master.random();
    let user_seeds: Vec<u64> = (0..config.n_users).map(|_| master.random()).collect();

    let mut shared_rng = ChaCha8Rng::seed_from_u64(shared_seed);
    let shared = SharedBehavior {
        text_model: TransitionTable::random(&mut shared_rng),
        app_vocab: Vocab::zipf(
            (0..SHARED_VOCAB_SIZE).map(|i| format!("com.shared.app{i:02}")).collect(),
            &mut shared_rng,
        ),
        web_vocab: Vocab::zipf(
            (0..SHARED_VOCAB_SIZE).map(|i| format!("www.shared{i:02}.example")).collect(),
            &mut shared_rng,
        ),
        anchors: {
            let dwells = normalized_dwells(SHARED_ANCHORS, &mut shared_rng);
            dwells
                .into_iter()
                .map(|d| random_anchor(&config, &mut shared_rng, d))
                .collect()
        },
    };

    let users = user_seeds
        .iter()
        .enumerate()
        .map(|(idx, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let disperse = |rng: &mut ChaCha8Rng, base: f64, d: f64| {
                (base * (1.0 + d * rng.random_range(-1.0..1.0))).max(f64::MIN_POSITIVE)
            };
            let d = config.rate_dispersion;
            let modality_rates = EventRates {
                text: disperse(&mut rng, config.rates.text, d),
                app: disperse(&mut rng, config.rates.app, d),
                web: disperse(&mut rng, config.rates.web, d),
                location: disperse(&mut rng, config.rates.location, d),
            };
            let n_anchors = rng.random_range(2..=4usize);
            let dwells = normalized_dwells(n_anchors, &mut rng);
            UserProfile {
                seed,
                user_id: format!("user{idx:03}"),
                text_model: TransitionTable::random(&mut rng),
                app_vocab: Vocab::zipf(
                    (0..VOCAB_SIZE).map(|i| format!("com.u{idx:03}.app{i:02}")).collect(),
                    &mut rng,
                ),
                web_vocab: Vocab::zipf(
                    (0..VOCAB_SIZE)
                        .map(|i| format!("site{i:02}.u{idx:03}.example"))
                        .collect(),
                    &mut rng,
                ),
                location_anchors: dwells
                    .into_iter()
                    .map(|dw| random_anchor(&config, &mut rng, dw))
                    .collect(),
                modality_rates,
            }
        })
        .collect();

    Ok(Population {
        config,
        users,
        shared,
    })
}

/// Set the behavioral overlap degree: 0 leaves users disjoint, 1 makes every
/// user draw from the shared profile only.
pub fn overlap_knob(mut population: Population, degree: f64) -> Result<Population, SynthError> {
    if !(0.0..=1.0).contains(&degree) {
        return Err(SynthError::BadOverlap(degree));
    }
    population.config.overlap = degree;
    Ok(population)
}

struct UserGenerator<'a> {
    profile: &'a UserProfile,
    shared: &'a SharedBehavior,
    /// Effective per-modality blend degrees (text, app, web, location).
    overlap: [f64; 4],
    rng: ChaCha8Rng,
    events: Vec<RawEvent>,
    owed: [f64; 4],
}

impl<'a> UserGenerator<'a> {
    fn shared_draw(&mut self, slot: usize) -> bool {
        self.overlap[slot] > 0.0 && self.rng.random::<f64>() < self.overlap[slot]
    }

    fn push(&mut self, wall_time: i64, payload: Payload) {
        self.events.push(RawEvent {
            user_id: self.profile.user_id.clone(),
            wall_time,
            payload,
        });
    }

    fn gen_text_burst(&mut self, start: i64, count: usize, cadence: f64) {
        let mut t = start as f64;
        let mut current = self.rng.random_range(0..ALPHABET.len());
        for _ in 0..count {
            let table = if self.shared_draw(0) {
                &self.shared.text_model
            } else {
                &self.profile.text_model
            };
            current = table.sample_next(current, &mut self.rng);
            self.push(t as i64, Payload::Text(ALPHABET[current]));
            t += cadence;
        }
    }

    fn session_anchor(&mut self) -> Anchor {
        let (anchors, dwells): (&[Anchor], Vec<f64>) = if self.shared_draw(3) {
            (
                &self.shared.anchors,
                self.shared.anchors.iter().map(|a| a.dwell).collect(),
            )
        } else {
            (
                &self.profile.location_anchors,
                self.profile.location_anchors.iter().map(|a| a.dwell).collect(),
            )
        };
        anchors[sample_weighted(&dwells, &mut self.rng)]
    }

    fn gen_session(&mut self, start: i64, len: i64, active_contribution: f64) {
        let rates = self.profile.modality_rates;
        let hours = active_contribution / 3600.0;
        for (slot, rate) in [rates.text, rates.app, rates.web, rates.location].into_iter().enumerate() {
            self.owed[slot] += rate * hours;
        }

        // Keystrokes in bursts spread across the session, anchoring its span
        // on the active axis. The cadence adapts so the bursts jointly cover
        // the session without spilling past its end.
        let n_text = self.owed[0] as usize;
        self.owed[0] -= n_text as f64;
        if n_text > 0 {
            let cadence = (len as f64 / n_text as f64)
                .clamp(TEXT_MIN_CADENCE_SECS, TEXT_MAX_CADENCE_SECS);
            let n_bursts = ((n_text + 79) / 80).clamp(1, 4);
            let per_burst = n_text / n_bursts;
            let mut remaining = n_text;
            for b in 0..n_bursts {
                let count = if b == n_bursts - 1 { remaining } else { per_burst };
                remaining -= count;
                let pos = start + (len - 1).max(0) * b as i64 / n_bursts as i64;
                self.gen_text_burst(pos, count, cadence);
            }
        }

        // App visits: the session opener is the user's habitual first app.
        let n_app = self.owed[1] as usize;
        self.owed[1] -= n_app as f64;
        for k in 0..n_app {
            if k == 0 {
                let name = if self.shared_draw(1) {
                    self.shared.app_vocab.top().to_string()
                } else if self.rng.random_bool(0.5) {
                    self.profile.app_vocab.top().to_string()
                } else {
                    self.profile.app_vocab.sample(&mut self.rng).to_string()
                };
                self.push(start, Payload::App(name));
            } else {
                let t = start + self.rng.random_range(0..len.max(1));
                let name = if self.shared_draw(1) {
                    self.shared.app_vocab.sample(&mut self.rng).to_string()
                } else {
                    self.profile.app_vocab.sample(&mut self.rng).to_string()
                };
                self.push(t, Payload::App(name));
            }
        }

        let n_web = self.owed[2] as usize;
        self.owed[2] -= n_web as f64;
        for _ in 0..n_web {
            let t = start + self.rng.random_range(0..len.max(1));
            let domain = if self.shared_draw(2) {
                self.shared.web_vocab.sample(&mut self.rng).to_string()
            } else {
                self.profile.web_vocab.sample(&mut self.rng).to_string()
            };
            let path = self.rng.random_range(0..50u32);
            self.push(t, Payload::Web(format!("https://{domain}/p/{path}")));
        }

        // GPS: when on, fixes arrive at regular 1-per-minute intervals from
        // the session's dwell anchor.
        let capacity = (len / 60 + 1) as usize;
        let n_loc = (self.owed[3] as usize).min(capacity);
        if n_loc > 0 {
            self.owed[3] -= n_loc as f64;
            let anchor = self.session_anchor();
            let normal = Normal::new(0.0, anchor.sigma).expect("positive sigma");
            for f in 0..n_loc {
                let lat = (anchor.lat + normal.sample(&mut self.rng)).clamp(-90.0, 90.0);
                let lon = (anchor.lon + normal.sample(&mut self.rng)).clamp(-180.0, 180.0);
                self.push(start + 60 * f as i64, Payload::Location { lat, lon });
            }
        }
    }

    fn generate(mut self, target_active_secs: f64) -> Vec<RawEvent> {
        let session_len = LogNormal::new(330f64.ln(), 0.5).expect("valid lognormal");
        let long_gap = LogNormal::new(7200f64.ln(), 0.8).expect("valid lognormal");
        let mut wall = WALL_EPOCH_BASE + self.rng.random_range(0..86_400);
        let mut active_total = 0.0f64;
        let mut first = true;
        while active_total < target_active_secs {
            let gap_active = if first {
                0.0
            } else {
                let gap = if self.rng.random_bool(0.15) {
                    self.rng.random_range(30..240)
                } else {
                    (long_gap.sample(&mut self.rng) as i64).clamp(400, 43_200)
                };
                wall += gap;
                gap.min(300) as f64
            };
            first = false;
            let len = (session_len.sample(&mut self.rng) as i64).clamp(90, 1_500);
            let contribution = gap_active + len as f64;
            self.gen_session(wall, len, contribution);
            wall += len;
            active_total += contribution;
        }
        self.events.sort_by_key(|e| e.wall_time);
        self.events
    }
}

/// Generate the event streams for every user of the population,
/// deterministically from the profiles alone.
pub fn generate_events(population: &Population) -> BTreeMap<String, Vec<RawEvent>> {
    let target_secs = population.config.active_hours * 3600.0;
    population
        .users
        .iter()
        .map(|profile| {
            let degree = population.config.overlap;
            let mut overlap = [0.0; 4];
            for (slot, exponent) in OVERLAP_SHAPE.into_iter().enumerate() {
                overlap[slot] = degree.powf(exponent);
            }
            let generator = UserGenerator {
                profile,
                shared: &population.shared,
                overlap,
                rng: ChaCha8Rng::seed_from_u64(profile.seed ^ 0x5e55_10f5),
                events: Vec::new(),
                owed: [0.0; 4],
            };
            (profile.user_id.clone(), generator.generate(target_secs))
        })
        .collect()
}

/// Convenience wrapper: build profiles and emit logs in one call.
pub fn generate_population(
    n_users: usize,
    active_hours: f64,
    seed: u64,
) -> Result<(Population, BTreeMap<String, Vec<RawEvent>>), SynthError> {
    let population = build_population(SynthConfig::new(n_users, active_hours, seed))?;
    let events = generate_events(&population);
    Ok((population, events))
}
