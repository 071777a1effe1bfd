use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use super::{FeatureSchema, Panel, PanelRow, ScenarioConfig, ANOMALY_DIM};
use crate::error::Result;
use crate::graphs::{Centroid, RoadNetwork};
use crate::rng::{self, Rng as StreamRng};

const DOW_FACTOR: [f64; 7] = [1.0, 1.05, 1.0, 1.0, 1.1, 0.85, 0.8];
const WEATHER_BASE: [f64; 5] = [0.4, 0.3, 0.15, 0.05, 0.1];
/// Multiplier on lockdown capacity loss per weather state
/// (sunny, cloudy, rain, snow, fog).
const WEATHER_LOCK_MULT: [f64; 5] = [1.0, 1.0, 1.3, 1.6, 1.15];
const CASES_PER_INTENSITY: f64 = 30.0;
const HOLIDAY_FACTOR: f64 = 1.1;
/// Label noise components as fractions of `noise_std`: team AR(1),
/// courier AR(1), white.
const TEAM_NOISE: f64 = 0.95;
const COURIER_NOISE: f64 = 0.15;
const WHITE_NOISE: f64 = 0.2;

/// Latent simulator state, day-major, kept for property checks.
#[derive(Debug, Clone)]
pub struct GeneratedTruth {
    pub intensity: Vec<Vec<f64>>,
    pub locked: Vec<Vec<bool>>,
    pub absent: Vec<Vec<bool>>,
    pub planned: Vec<Vec<f64>>,
    pub assigned: Vec<Vec<f64>>,
    pub capacity: Vec<Vec<f64>>,
    pub backlog: Vec<Vec<f64>>,
    pub team: Vec<usize>,
    pub home: Vec<usize>,
    pub district_distance: Vec<Vec<f64>>,
}

fn normal(r: &mut StreamRng) -> f64 {
    r.sample(StandardNormal)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn is_holiday(day: usize) -> bool {
    day % 50 == 17
}

struct Layout {
    centroids: Vec<Centroid>,
    roads: RoadNetwork,
    dist: Vec<Vec<f64>>,
}

fn layout(cfg: &ScenarioConfig, r: &mut StreamRng) -> Layout {
    let m = cfg.n_districts;
    let s = cfg.district_spacing;
    let cols = ((m as f64 * 1.5).sqrt().ceil() as usize).max(1);
    let rows = m.div_ceil(cols);
    let centroids: Vec<Centroid> = (0..m)
        .map(|k| {
            let (c, rr) = (k % cols, k / cols);
            Centroid {
                district: k,
                x: (c as f64 + 0.5) * s + r.random_range(-0.15..0.15) * s,
                y: (rr as f64 + 0.5) * s + r.random_range(-0.15..0.15) * s,
            }
        })
        .collect();

    // Road grid at half the district spacing; segment lengths are at least
    // the straight-line distance between their endpoints.
    let (nx, ny) = (2 * cols + 1, 2 * rows + 1);
    let half = s / 2.0;
    let mut coords = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            coords.push((i as f64 * half, j as f64 * half));
        }
    }
    let mut edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let u = j * nx + i;
            if i + 1 < nx {
                edges.push((u, u + 1, half * (1.0 + 0.3 * r.random::<f64>())));
            }
            if j + 1 < ny {
                edges.push((u, u + nx, half * (1.0 + 0.3 * r.random::<f64>())));
            }
        }
    }
    let roads = RoadNetwork {
        ids: (0..(nx * ny) as u64).collect(),
        coords,
        edges,
    };
    let dist = centroids
        .iter()
        .map(|a| centroids.iter().map(|b| (a.x - b.x).hypot(a.y - b.y)).collect())
        .collect();
    Layout { centroids, roads, dist }
}

/// Districts sorted by distance from `from`, ties by id.
fn by_distance(dist: &[Vec<f64>], from: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[from][a].total_cmp(&dist[from][b]).then(a.cmp(&b)));
    order
}

struct Courier {
    team: usize,
    home: usize,
    volume: f64,
    tenure: f64,
    age: f64,
    service_split: [f64; 3],
    base_props: Vec<f64>,
}

fn couriers(cfg: &ScenarioConfig, dist: &[Vec<f64>], r: &mut StreamRng) -> Vec<Courier> {
    let n_teams = cfg.n_couriers.div_ceil(cfg.team_size);
    let m = cfg.n_districts;
    (0..cfg.n_couriers)
        .map(|i| {
            let team = i / cfg.team_size;
            let center = team * m / n_teams;
            let near = by_distance(dist, center);
            let home = near[(i % cfg.team_size) % 2.min(m)];
            let reach = 1.6 * cfg.district_spacing;
            let scale = 0.6 * cfg.district_spacing;
            let raw: Vec<f64> = (0..m)
                .map(|j| {
                    let d = dist[home][j];
                    if d <= reach {
                        (-d / scale).exp()
                    } else {
                        0.0
                    }
                })
                .collect();
            let total: f64 = raw.iter().sum();
            let mut split = [0.6, 0.3, 0.1].map(|f: f64| f * r.random_range(0.8..1.2));
            let st: f64 = split.iter().sum();
            split.iter_mut().for_each(|v| *v /= st);
            Courier {
                team,
                home,
                volume: r.random_range(80.0..120.0),
                tenure: r.random_range(0.5..8.0),
                age: r.random_range(22.0..50.0),
                service_split: split,
                base_props: raw.iter().map(|v| v / total).collect(),
            }
        })
        .collect()
}

fn intensity_field(cfg: &ScenarioConfig, dist: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = cfg.n_districts;
    let centers: Vec<usize> = (0..cfg.outbreak_days.len())
        .map(|k| rng::stream(cfg.seed, &[10, k as u64]).random_range(0..m))
        .collect();
    let mut noise = rng::stream(cfg.seed, &[11]);
    let two_r2 = 2.0 * cfg.cluster_radius * cfg.cluster_radius;
    (0..cfg.n_days)
        .map(|d| {
            (0..m)
                .map(|j| {
                    let mut v = 0.0;
                    for (k, &start) in cfg.outbreak_days.iter().enumerate() {
                        let peak = cfg.outbreak_peaks[k.min(cfg.outbreak_peaks.len() - 1)];
                        let t = d as f64 - start as f64;
                        let bump = logistic(cfg.growth_rate * t) * logistic(cfg.growth_rate * (cfg.outbreak_duration - t));
                        v += peak * bump * (-dist[centers[k]][j].powi(2) / two_r2).exp();
                    }
                    let eps = normal(&mut noise);
                    (v * (1.0 + cfg.intensity_noise * eps)).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Seeded synthetic panel. Pure function of `cfg`.
pub fn generate(cfg: &ScenarioConfig) -> Result<Panel> {
    generate_with_truth(cfg).map(|(p, _)| p)
}

pub fn generate_with_truth(cfg: &ScenarioConfig) -> Result<(Panel, GeneratedTruth)> {
    cfg.validate()?;
    let splits = cfg.splits()?;
    let (n, m, days) = (cfg.n_couriers, cfg.n_districts, cfg.n_days);

    let lay = layout(cfg, &mut rng::stream(cfg.seed, &[1]));
    let people = couriers(cfg, &lay.dist, &mut rng::stream(cfg.seed, &[2]));
    let intensity = intensity_field(cfg, &lay.dist);
    let locked: Vec<Vec<bool>> = intensity
        .iter()
        .map(|row| row.iter().map(|v| *v > cfg.lockdown_threshold).collect())
        .collect();

    // Pairwise teammate affinity for reassignment ranking.
    let mut aff_rng = rng::stream(cfg.seed, &[3]);
    let mut affinity = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let a = aff_rng.random::<f64>();
            affinity[i * n + j] = a;
            affinity[j * n + i] = a;
        }
    }

    let mut day_rng = rng::stream(cfg.seed, &[4]);
    let mut noise_rng = rng::stream(cfg.seed, &[5]);
    let sigma = cfg.noise_std;
    let n_teams = n.div_ceil(cfg.team_size);
    let mut team_ar = vec![0.0; n_teams];
    let mut courier_ar = vec![0.0; n];

    let mut weather = 0usize;
    let mut prev_y = vec![cfg.base_rate; n];
    let mut prev_planned: Vec<f64> = people.iter().map(|c| c.volume).collect();
    let mut prev_props: Vec<Vec<f64>> = people.iter().map(|c| c.base_props.clone()).collect();
    let mut prev_absent = vec![false; n];
    let mut prev_backlog = vec![0.0; n];
    let mut prev_cases = [0.0; 2];
    let mut prev_district_cases = vec![0.0; n];

    let schema = FeatureSchema::default_courier();
    let mut rows = Vec::with_capacity(n * days);
    let mut truth = GeneratedTruth {
        intensity: intensity.clone(),
        locked: locked.clone(),
        absent: Vec::with_capacity(days),
        planned: Vec::with_capacity(days),
        assigned: Vec::with_capacity(days),
        capacity: Vec::with_capacity(days),
        backlog: Vec::with_capacity(days),
        team: people.iter().map(|c| c.team).collect(),
        home: people.iter().map(|c| c.home).collect(),
        district_distance: lay.dist.clone(),
    };

    for d in 0..days {
        if day_rng.random::<f64>() > 0.6 {
            let u = day_rng.random::<f64>();
            let mut acc = 0.0;
            weather = WEATHER_BASE.len() - 1;
            for (k, p) in WEATHER_BASE.iter().enumerate() {
                acc += p;
                if u < acc {
                    weather = k;
                    break;
                }
            }
        }
        let season = 15.0 + 12.0 * (2.0 * std::f64::consts::PI * (d as f64 - 100.0) / 365.0).sin();
        let temp_mean = season + 2.0 * normal(&mut day_rng);
        let temp_min = temp_mean - 4.0 - 2.0 * day_rng.random::<f64>();
        let temp_max = temp_mean + 4.0 + 2.0 * day_rng.random::<f64>();
        let holiday = is_holiday(d);
        let dow = d % 7;
        let lock_today = &locked[d];

        let planned: Vec<f64> = people
            .iter()
            .map(|c| {
                let z = normal(&mut day_rng).clamp(-2.0, 2.0);
                c.volume * DOW_FACTOR[dow] * if holiday { HOLIDAY_FACTOR } else { 1.0 } * (1.0 + 0.05 * z)
            })
            .collect();

        let absent: Vec<bool> = (0..n)
            .map(|i| {
                if lock_today[people[i].home] {
                    let stay = if prev_absent[i] { 0.8 } else { cfg.absence_prob };
                    day_rng.random::<f64>() < stay
                } else {
                    false
                }
            })
            .collect();

        let props: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let base = &people[i].base_props;
                let raw: Vec<f64> = base
                    .iter()
                    .map(|&b| if b > 0.0 { b * (0.15 * normal(&mut day_rng)).exp() } else { 0.0 })
                    .collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|v| v / t).collect()
            })
            .collect();

        // Reassign absent couriers' orders to their closest available teammates.
        let mut assigned: Vec<f64> = (0..n).map(|i| if absent[i] { 0.0 } else { planned[i] }).collect();
        let mut received_mix: Vec<Vec<f64>> = (0..n)
            .map(|i| if absent[i] { vec![0.0; m] } else { props[i].iter().map(|p| p * planned[i]).collect() })
            .collect();
        let mut stranded = vec![0.0; n];
        let mut helpers_of: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in (0..n).filter(|&i| absent[i]) {
            let mut helpers: Vec<usize> = (0..n).filter(|&j| j != i && !absent[j]).collect();
            helpers.sort_by(|&a, &b| {
                let same_a = people[a].team == people[i].team;
                let same_b = people[b].team == people[i].team;
                let home = people[i].home;
                same_b
                    .cmp(&same_a)
                    .then(lay.dist[home][people[a].home].total_cmp(&lay.dist[home][people[b].home]))
                    .then(affinity[i * n + b].total_cmp(&affinity[i * n + a]))
                    .then(a.cmp(&b))
            });
            helpers.truncate(cfg.reassign_top_k.max(1));
            if helpers.is_empty() {
                stranded[i] = planned[i];
                continue;
            }
            helpers_of[i] = helpers.clone();
            // Shares proportional to the helpers' usual volume.
            let pool: f64 = helpers.iter().map(|&h| people[h].volume).sum();
            for &h in &helpers {
                let share = planned[i] * people[h].volume / pool;
                assigned[h] += share;
                for (acc, p) in received_mix[h].iter_mut().zip(&people[i].base_props) {
                    *acc += p * share;
                }
            }
        }
        let day_props: Vec<Vec<f64>> = received_mix
            .iter()
            .map(|mix| {
                let t: f64 = mix.iter().sum();
                if t > 0.0 {
                    mix.iter().map(|v| v / t).collect()
                } else {
                    vec![0.0; m]
                }
            })
            .collect();

        let city_conf: f64 = intensity[d].iter().sum::<f64>() * CASES_PER_INTENSITY;
        let cases = [
            (city_conf * (1.0 + 0.1 * normal(&mut day_rng))).max(0.0),
            (1.6 * city_conf * (1.0 + 0.15 * normal(&mut day_rng))).max(0.0),
        ];
        let district_cases: Vec<f64> = (0..n)
            .map(|i| (intensity[d][people[i].home] * CASES_PER_INTENSITY * (1.0 + 0.1 * normal(&mut day_rng))).max(0.0))
            .collect();

        // Team shocks are relative to the city: dispatch rebalancing moves
        // slack from one team to the others.
        for z in team_ar.iter_mut() {
            *z = 0.3 * *z + (1.0f64 - 0.09).sqrt() * TEAM_NOISE * sigma * normal(&mut noise_rng);
        }
        let centre = team_ar.iter().sum::<f64>() / n_teams as f64;
        let team_shock: Vec<f64> = team_ar.iter().map(|z| z - centre).collect();
        for z in courier_ar.iter_mut() {
            *z = 0.6 * *z + (1.0f64 - 0.36).sqrt() * COURIER_NOISE * sigma * normal(&mut noise_rng);
        }

        let mut capacity = vec![0.0; n];
        let mut backlog = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            let c = &people[i];
            let nominal = c.volume * cfg.capacity_headroom;
            let share_props = if absent[i] { &c.base_props } else { &day_props[i] };
            let locked_share: f64 = share_props
                .iter()
                .zip(lock_today)
                .map(|(p, l)| if *l { *p } else { 0.0 })
                .sum();
            let overload = if absent[i] {
                capacity[i] = 0.0;
                backlog[i] = prev_backlog[i] + stranded[i];
                0.0
            } else {
                let loss = cfg.lockdown_capacity_loss * (locked_share * WEATHER_LOCK_MULT[weather]).min(1.0);
                capacity[i] = nominal * (1.0 - loss);
                backlog[i] = (prev_backlog[i] + assigned[i] - capacity[i]).max(0.0);
                ((assigned[i] + prev_backlog[i]) / capacity[i] - 1.0).max(0.0)
            };
            let penalty = cfg.workload_penalty * overload.tanh()
                + cfg.lockdown_penalty * locked_share
                + cfg.backlog_penalty * (prev_backlog[i] / c.volume).min(1.0);
            let eps = WHITE_NOISE * sigma * normal(&mut noise_rng);
            let noise = (team_shock[c.team] + courier_ar[i] + eps).clamp(-3.0 * sigma, 3.0 * sigma);
            y[i] = (cfg.base_rate - penalty + noise).clamp(0.01, 0.99);

            let mut feats = Vec::with_capacity(schema.raw_width());
            feats.extend(c.service_split.iter().map(|f| planned[i] * f));
            // Per-service rates are measured over that service's parcels.
            for f in c.service_split {
                let parcels = (prev_planned[i] * f).round().max(1.0);
                let on_time = Binomial::new(parcels as u64, prev_y[i]).expect("rate in [0, 1]").sample(&mut noise_rng);
                feats.push(on_time as f64 / parcels);
            }
            feats.extend([c.tenure, c.age, prev_backlog[i], f64::from(u8::from(prev_absent[i]))]);
            feats.push(weather as f64);
            feats.extend([temp_min, temp_max, temp_mean]);
            feats.push(dow as f64);
            feats.push(f64::from(u8::from(holiday)));
            let a: [f64; ANOMALY_DIM] = [prev_cases[0], prev_cases[1], prev_district_cases[i], prev_backlog[i]];
            rows.push(PanelRow {
                courier: i,
                day: d,
                y: y[i],
                c: feats,
                p: if prev_absent[i] { vec![0.0; m] } else { prev_props[i].clone() },
                a,
            });
        }

        // An absent courier's parcels are delivered by the helpers, so their
        // timely rate follows the helpers'.
        for i in (0..n).filter(|&i| !helpers_of[i].is_empty()) {
            let h = &helpers_of[i];
            let v = h.iter().map(|&j| y[j]).sum::<f64>() / h.len() as f64;
            y[i] = (v + WHITE_NOISE * sigma * normal(&mut noise_rng)).clamp(0.01, 0.99);
            rows[d * n + i].y = y[i];
        }

        prev_y = y;
        prev_planned = planned.clone();
        prev_props = day_props;
        prev_absent = absent.clone();
        prev_backlog = backlog.clone();
        prev_cases = [cases[0], cases[1]];
        prev_district_cases = district_cases;

        truth.absent.push(absent);
        truth.planned.push(planned);
        truth.assigned.push((0..n).map(|i| assigned[i] + stranded[i]).collect());
        truth.capacity.push(capacity);
        truth.backlog.push(backlog);
    }

    let panel = Panel {
        n_couriers: n,
        n_days: days,
        n_districts: m,
        schema,
        splits,
        rows,
        centroids: lay.centroids,
        roads: lay.roads,
    };
    Ok((panel, truth))
}
