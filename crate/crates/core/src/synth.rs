//! Synthetic highway episodes with known maneuver ground truth.
//!
//! Episodes follow kinematic templates: lane changes run a smoothstep
//! lateral ramp (~4 s) centered mid-episode, speed changes ramp +-20%
//! around the same center, neighbors hold lanes at constant speed. With
//! zero noise the pipeline labeling recovers the requested maneuver at
//! every valid anchor, which closes the loop for training and evaluation
//! tests without the real corpus.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::io::Write;

use crate::error::Result;
use crate::pipeline::{build_samples, split_by_vehicle, DatasetSplit, PipelineConfig};
use crate::types::{Lateral, Longitudinal, ManeuverLabel, VehicleRecord, FT_TO_M, RAW_DT};

/// Lane width in meters (3-lane road).
pub const LANE_WIDTH: f64 = 3.7;
/// Raw frames per episode (12 s at 10 Hz, frames 0..=120).
pub const EPISODE_FRAMES: u64 = 121;
/// Maneuver midpoint frame.
const CENTER: u64 = 60;
/// Lateral ramp half-width in raw frames (4 s total).
const LAT_HALF: f64 = 20.0;
/// Longitudinal ramp half-width in raw frames (8 s total).
const LON_HALF: f64 = 40.0;
/// Speed ramp magnitude for ACC/DEC.
const SPEED_RATIO: f64 = 0.2;

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn lane_center(lane: u32) -> f64 {
    (lane as f64 - 0.5) * LANE_WIDTH
}

fn lane_of(x: f64) -> u32 {
    ((x / LANE_WIDTH).floor() as i64 + 1).clamp(1, 3) as u32
}

fn ramp01(frame: u64, center: u64, half: f64) -> f64 {
    smoothstep((frame as f64 - (center as f64 - half)) / (2.0 * half))
}

/// One synthetic episode: the ego executes exactly `maneuver`, neighbors
/// hold their lanes at constant speed. Records come back sorted by
/// (vehicle, frame) with ids `id_base` (ego) and up, frames offset by
/// `frame_base`.
pub fn generate_episode_at(
    seed: u64,
    maneuver: ManeuverLabel,
    n_neighbors: usize,
    noise_sigma: f64,
    id_base: u64,
    frame_base: u64,
) -> Vec<VehicleRecord> {
    assert!(n_neighbors <= 8, "at most 8 neighbors supported");
    assert!(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let jitter = |rng: &mut ChaCha8Rng| {
        if noise_sigma > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };

    let v0: f64 = rng.random_range(20.0..30.0);
    let start_lane = 2u32;
    let target_lane = match maneuver.lateral {
        Lateral::Lk => start_lane,
        Lateral::Cll => start_lane - 1,
        Lateral::Clr => start_lane + 1,
    };
    let speed_sign = match maneuver.longitudinal {
        Longitudinal::Acc => 1.0,
        Longitudinal::Dec => -1.0,
        Longitudinal::Con => 0.0,
    };

    let speeds: Vec<f64> = (0..EPISODE_FRAMES)
        .map(|f| v0 * (1.0 + speed_sign * SPEED_RATIO * ramp01(f, CENTER, LON_HALF)))
        .collect();
    // y is the cumulative sum of the speed profile
    let mut ys = Vec::with_capacity(EPISODE_FRAMES as usize);
    let mut y = 100.0;
    for &v in &speeds {
        ys.push(y);
        y += v * RAW_DT;
    }

    let mut records = Vec::new();
    for f in 0..EPISODE_FRAMES {
        let s = ramp01(f, CENTER, LAT_HALF);
        let x = lane_center(start_lane) + s * (lane_center(target_lane) - lane_center(start_lane));
        let xn = x + jitter(&mut rng);
        let yn = ys[f as usize] + jitter(&mut rng);
        let v = speeds[f as usize];
        let next_v = speeds.get(f as usize + 1).copied().unwrap_or(v);
        records.push(VehicleRecord {
            vehicle_id: id_base,
            frame_id: frame_base + f,
            local_x: xn,
            local_y: yn,
            lane_id: lane_of(xn),
            velocity: v,
            acceleration: (next_v - v) / RAW_DT,
        });
    }

    // fixed lane/offset slots around the ego's starting position
    const SLOTS: [(i64, f64); 8] = [
        (0, 15.0),
        (-1, 8.0),
        (1, -10.0),
        (0, -15.0),
        (1, 8.0),
        (-1, -10.0),
        (0, 30.0),
        (-1, 20.0),
    ];
    // neighbors only span the ego history window, so they never yield
    // samples of their own
    let nbr_lo = CENTER.saturating_sub(40);
    let nbr_hi = CENTER + 10;
    for (k, &(dlane, dy)) in SLOTS.iter().take(n_neighbors).enumerate() {
        let lane = (start_lane as i64 + dlane).clamp(1, 3) as u32;
        let vn: f64 = rng.random_range(20.0..30.0);
        let y_at_center = ys[CENTER as usize] + dy;
        for f in nbr_lo..=nbr_hi {
            let yk = y_at_center + vn * RAW_DT * (f as f64 - CENTER as f64);
            let xn = lane_center(lane) + jitter(&mut rng);
            let yn = yk + jitter(&mut rng);
            records.push(VehicleRecord {
                vehicle_id: id_base + 1 + k as u64,
                frame_id: frame_base + f,
                local_x: xn,
                local_y: yn,
                lane_id: lane_of(xn),
                velocity: vn,
                acceleration: 0.0,
            });
        }
    }

    records.sort_by_key(|r| (r.vehicle_id, r.frame_id));
    records
}

/// [`generate_episode_at`] with ego id 1 and frames starting at 0.
pub fn generate_episode(
    seed: u64,
    maneuver: ManeuverLabel,
    n_neighbors: usize,
    noise_sigma: f64,
) -> Vec<VehicleRecord> {
    generate_episode_at(seed, maneuver, n_neighbors, noise_sigma, 1, 0)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Balanced synthetic dataset: `n_per_class` episodes per maneuver pair,
/// pushed through the real sample builder and vehicle-disjoint splitter.
pub fn generate_dataset(
    seed: u64,
    n_per_class: usize,
    n_neighbors: usize,
    noise_sigma: f64,
    cfg: &PipelineConfig,
) -> Result<DatasetSplit> {
    assert!(n_per_class >= 1, "n_per_class must be >= 1");
    let mut records = Vec::new();
    let mut episode = 0u64;
    for label in ManeuverLabel::all() {
        for _ in 0..n_per_class {
            let ep_seed = splitmix64(seed ^ splitmix64(episode + 1));
            records.extend(generate_episode_at(
                ep_seed,
                label,
                n_neighbors,
                noise_sigma,
                episode * 64 + 1,
                episode * 10_000,
            ));
            episode += 1;
        }
    }
    records.sort_by_key(|r| (r.vehicle_id, r.frame_id));
    let samples = build_samples(&records, cfg)?;
    split_by_vehicle(samples, (0.7, 0.1, 0.2), seed)
}

/// Write records as NGSIM-style CSV (feet, 10 Hz) so that
/// [`crate::pipeline::parse_records`] can read them back.
pub fn records_to_csv<W: Write>(records: &[VehicleRecord], w: &mut W) -> Result<()> {
    writeln!(w, "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID,v_Vel,v_Acc")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.vehicle_id,
            r.frame_id,
            r.local_x / FT_TO_M,
            r.local_y / FT_TO_M,
            r.lane_id,
            r.velocity / FT_TO_M,
            r.acceleration / FT_TO_M,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{label_lateral, label_longitudinal, parse_records, tracks, PipelineConfig};
    use crate::types::mode_index;

    #[test]
    fn noise_free_labels_round_trip_all_classes() {
        for label in ManeuverLabel::all() {
            for seed in [1u64, 7, 42] {
                let records = generate_episode(seed, label, 2, 0.0);
                let ego: Vec<VehicleRecord> = records
                    .iter()
                    .filter(|r| r.vehicle_id == 1)
                    .cloned()
                    .collect();
                // every valid anchor must recover the requested label
                for anchor in (30..=70).step_by(2) {
                    assert_eq!(
                        label_lateral(&ego, anchor, 40),
                        label.lateral,
                        "lateral at anchor {anchor} for {label} seed {seed}"
                    );
                    assert_eq!(
                        label_longitudinal(&ego, anchor, 40, 0.05),
                        label.longitudinal,
                        "longitudinal at anchor {anchor} for {label} seed {seed}"
                    );
                }
            }
        }
    }

    #[test]
    fn episode_determinism() {
        let a = generate_episode(9, ManeuverLabel::new(Lateral::Cll, Longitudinal::Acc), 3, 0.5);
        let b = generate_episode(9, ManeuverLabel::new(Lateral::Cll, Longitudinal::Acc), 3, 0.5);
        assert_eq!(a, b);
    }

    #[test]
    fn acc_final_speed_ratio() {
        let records = generate_episode(7, ManeuverLabel::new(Lateral::Lk, Longitudinal::Acc), 0, 0.0);
        let first = records.first().unwrap().velocity;
        let last = records.last().unwrap().velocity;
        assert!((last / first - 1.2).abs() < 1e-9);
    }

    #[test]
    fn positions_are_velocity_cumsums() {
        let records = generate_episode(3, ManeuverLabel::new(Lateral::Lk, Longitudinal::Dec), 0, 0.0);
        let mut y = records[0].local_y;
        for w in records.windows(2) {
            y += w[0].velocity * RAW_DT;
            assert!(
                (w[1].local_y - y).abs() < 1e-6,
                "frame {}: {} vs {}",
                w[1].frame_id,
                w[1].local_y,
                y
            );
        }
    }

    #[test]
    fn dataset_balanced_and_labeled() {
        let cfg = PipelineConfig {
            stride: 3,
            ..PipelineConfig::default()
        };
        let split = generate_dataset(11, 2, 2, 0.0, &cfg).unwrap();
        assert!(split.total() > 0);

        let mut class_counts = [0usize; 9];
        for (_, samples) in split.splits() {
            for s in samples {
                class_counts[mode_index(s.label.lateral, s.label.longitudinal)] += 1;
            }
        }
        let max = *class_counts.iter().max().unwrap() as f64;
        let min = *class_counts.iter().min().unwrap() as f64;
        assert!(min > 0.0);
        assert!(
            (max - min) / max <= 0.10,
            "class imbalance: {class_counts:?}"
        );
    }

    #[test]
    fn csv_export_parses_back() {
        let records = generate_episode(5, ManeuverLabel::new(Lateral::Clr, Longitudinal::Con), 2, 0.1);
        let mut buf = Vec::new();
        records_to_csv(&records, &mut buf).unwrap();
        let parsed = parse_records(buf.as_slice()).unwrap();
        assert_eq!(parsed.skipped_rows, 0);
        assert_eq!(parsed.records.len(), records.len());
        assert_eq!(tracks(&parsed.records).count(), 3);
        for (a, b) in records.iter().zip(parsed.records.iter()) {
            assert_eq!(a.vehicle_id, b.vehicle_id);
            assert_eq!(a.frame_id, b.frame_id);
            assert!((a.local_x - b.local_x).abs() < 1e-9);
            assert!((a.local_y - b.local_y).abs() < 1e-9);
            assert_eq!(a.lane_id, b.lane_id);
            assert!((a.velocity - b.velocity).abs() < 1e-9);
        }
    }
}
