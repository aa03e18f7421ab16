//! Stream-level behavior of the subspace tracker: convergence on planted
//! subspaces, the expansion/reset control flow on rotation streams,
//! fidelity-cosine equivalence, and determinism.

mod common;

use common::{gaussian, random_orthonormal, PlantedStream};
use laser::linalg::{principal_angles, truncated_svd};
use laser::tracker::{fidelity, reconstruct, SiteTracker, TrackerConfig, TrackerEvent};
use laser::Mat;

fn cfg(k0: usize, max_rank: usize) -> TrackerConfig {
    TrackerConfig {
        initial_rank: k0,
        fidelity_threshold: 0.95,
        patience: 2,
        expansion_size: 4,
        max_rank,
        power_steps: 1,
    }
}

/// Orthonormal basis for the orthogonal complement slice [offset,
/// offset+k) of the canonical axes, rotated by a fixed seeded rotation so
/// the planted subspaces are not axis-aligned.
fn planted_frames(dim: usize, sizes: &[usize], seed: u64) -> Vec<Mat> {
    let total: usize = sizes.iter().sum();
    let full = random_orthonormal(dim, total, seed);
    let mut out = Vec::new();
    let mut offset = 0;
    for &s in sizes {
        out.push(Mat::from_fn(dim, s, |i, j| full[(i, offset + j)]));
        offset += s;
    }
    out
}

#[test]
fn power_updates_converge_to_planted_subspace() {
    // Stationary stream with a rank-4 dominant subspace plus small
    // isotropic noise; 50 power updates from a random initial basis.
    let dim = 64;
    let mut stream = PlantedStream::new(dim, &[10.0, 8.0, 6.0, 5.0], 0.01, 21);
    let planted = stream.basis.clone();
    let mut tracker =
        SiteTracker::with_basis("s", random_orthonormal(dim, 4, 999), cfg(4, 8), 3).unwrap();

    for _ in 0..50 {
        let x = stream.next_batch(32);
        tracker.power_update(&x).unwrap();
    }
    let angles = principal_angles(tracker.basis(), &planted).unwrap();
    let max_angle = angles.last().copied().unwrap();
    assert!(max_angle < 1e-2, "max principal angle {max_angle}");
}

#[test]
fn in_span_stream_keeps_rank_and_unit_fidelity() {
    let dim = 32;
    let mut stream = PlantedStream::new(dim, &[3.0, 2.0, 1.5, 1.0], 0.0, 5);
    let x0 = stream.next_batch(48);
    let mut tracker = SiteTracker::init_site("s", &x0, cfg(4, 8), 11).unwrap();
    for _ in 0..20 {
        let x = stream.next_batch(48);
        let out = tracker.step(&x).unwrap();
        assert_eq!(out.event, TrackerEvent::PowerUpdated);
        assert!((out.fidelity - 1.0).abs() < 1e-9);
        assert_eq!(tracker.rank(), 4);
        assert!(!out.skip_backward);
    }
}

#[test]
fn rotation_stream_expands_then_hard_resets_and_recovers() {
    // Three mutually orthogonal planted frames. The stream starts in S1,
    // rotates abruptly to S2 (expansion picks it up), then to S3 while the
    // counter is still warm, forcing the hard reset; afterwards fidelity
    // recovers immediately.
    let dim = 32;
    let frames = planted_frames(dim, &[4, 4, 4], 77);
    let stds = [4.0, 3.0, 2.5, 2.0];
    let mut s1 = PlantedStream::with_basis(frames[0].clone(), &stds, 0.0, 101);
    let mut s2 = PlantedStream::with_basis(frames[1].clone(), &stds, 0.0, 102);
    let mut s3 = PlantedStream::with_basis(frames[2].clone(), &stds, 0.0, 103);

    let x0 = s1.next_batch(40);
    let mut tracker = SiteTracker::init_site("s", &x0, cfg(4, 16), 55).unwrap();

    let mut events = Vec::new();
    for step in 0..16 {
        let x = if step < 10 {
            s1.next_batch(40)
        } else if step == 10 {
            s2.next_batch(40)
        } else {
            s3.next_batch(40)
        };
        let out = tracker.step(&x).unwrap();
        events.push((step, out.event, out.fidelity, out.skip_backward));
    }

    // Step 10: first rotation, fidelity collapses, expansion fires.
    assert!(matches!(events[10].1, TrackerEvent::Expanded { from_rank: 4, to_rank } if to_rank > 4));
    assert!(events[10].2 < 0.5);
    // Step 11: second rotation while the counter is warm: hard reset.
    assert_eq!(events[11].1, TrackerEvent::HardReset);
    assert!(events[11].3, "hard reset must flag skip_backward");
    assert_eq!(tracker.rank(), 4);
    // Recovery within 3 steps of the reset.
    assert!(
        events[12..=14].iter().all(|e| e.2 >= 0.95),
        "fidelity after reset: {:?}",
        &events[12..]
    );
    // Only the reset step skipped backward.
    assert_eq!(events.iter().filter(|e| e.3).count(), 1);
}

#[test]
fn persistent_low_fidelity_expands_then_resets() {
    // After the stream jumps to a 12-dimensional equal-power subspace,
    // m = 4 sampled rows cannot restore fidelity, so with patience 2 the
    // first failure expands and the second hard-resets.
    let dim = 48;
    let frames = planted_frames(dim, &[4, 12], 31);
    let mut s1 = PlantedStream::with_basis(frames[0].clone(), &[3.0, 2.5, 2.0, 1.5], 0.0, 71);
    let stds2 = vec![2.0; 12];
    let mut s2 = PlantedStream::with_basis(frames[1].clone(), &stds2, 0.0, 72);

    let x0 = s1.next_batch(40);
    let mut tracker = SiteTracker::init_site("s", &x0, cfg(4, 16), 5).unwrap();
    for _ in 0..3 {
        tracker.step(&s1.next_batch(40)).unwrap();
    }
    let first = tracker.step(&s2.next_batch(40)).unwrap();
    assert!(matches!(first.event, TrackerEvent::Expanded { .. }));
    assert_eq!(tracker.fail_count(), 1);
    let second = tracker.step(&s2.next_batch(40)).unwrap();
    assert_eq!(second.event, TrackerEvent::HardReset);
    assert_eq!(tracker.fail_count(), 0);
}

#[test]
fn sites_track_independent_streams_independently() {
    let dim = 24;
    let frames = planted_frames(dim, &[3, 3], 13);
    let stds = [3.0, 2.0, 1.5];
    let mut stream_a = PlantedStream::with_basis(frames[0].clone(), &stds, 0.0, 1);
    let mut stream_b = PlantedStream::with_basis(frames[1].clone(), &stds, 0.0, 2);
    let mut shifted = PlantedStream::with_basis(frames[0].clone(), &stds, 0.0, 3);

    let mut ta = SiteTracker::init_site("a", &stream_a.next_batch(30), cfg(3, 8), 10).unwrap();
    let mut tb = SiteTracker::init_site("b", &stream_b.next_batch(30), cfg(3, 8), 11).unwrap();

    // Site B's stream rotates; site A's does not. Only B's counter moves.
    for step in 0..6 {
        ta.step(&stream_a.next_batch(30)).unwrap();
        let xb = if step < 3 {
            stream_b.next_batch(30)
        } else {
            shifted.next_batch(30)
        };
        tb.step(&xb).unwrap();
    }
    assert!(ta
        .events()
        .iter()
        .all(|e| !e.event.starts_with("expanded") && !e.event.starts_with("hard_reset")));
    assert!(tb
        .events()
        .iter()
        .any(|e| e.event.starts_with("expanded") || e.event.starts_with("hard_reset")));
}

#[test]
fn fidelity_equals_cosine_similarity() {
    // Proposition-level equivalence on random pairs, via the explicit
    // reconstruction and Frobenius inner product.
    for trial in 0..100 {
        let (rows, dim, k) = match trial % 3 {
            0 => (12, 8, 3),
            1 => (30, 16, 5),
            _ => (7, 20, 6),
        };
        let x = gaussian(rows, dim, 40_000 + trial);
        let q = random_orthonormal(dim, k, 50_000 + trial);
        let z = x.matmul(&q);
        let f = fidelity(&z, &x);

        let xhat = reconstruct(&z, &q);
        let inner: f64 = x
            .data()
            .iter()
            .zip(xhat.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let cosine = inner / (x.frobenius_norm() * xhat.frobenius_norm());
        assert!((f - cosine).abs() < 1e-8, "trial {trial}: {f} vs {cosine}");
        assert!((0.0..=1.0 + 1e-9).contains(&f));
    }
}

#[test]
fn expansion_is_monotone_and_bounded() {
    for trial in 0..20 {
        let x = gaussian(32, 16, 60_000 + trial);
        let q = random_orthonormal(16, 4, 61_000 + trial);
        let mut tracker = SiteTracker::with_basis("s", q.clone(), cfg(4, 8), trial).unwrap();
        let before = x.matmul(&q).frobenius_norm();
        let (from, to) = tracker.expand(&x).unwrap();
        assert_eq!(from, 4);
        assert!((4..=8).contains(&to));
        let after = x.matmul(tracker.basis()).frobenius_norm();
        assert!(after >= before - 1e-10, "projection energy shrank");
    }
}

#[test]
fn expansion_clamps_at_max_rank_keeping_largest_residuals() {
    let x = gaussian(32, 16, 4242);
    let q = random_orthonormal(16, 4, 4343);
    let mut tracker = SiteTracker::with_basis("s", q, cfg(4, 6), 9).unwrap();
    let (_, to) = tracker.expand(&x).unwrap();
    assert!(to <= 6, "rank {to} above max_rank");
}

#[test]
fn reset_is_optimal_among_rank_k_bases() {
    let x = gaussian(40, 12, 777);
    let mut tracker =
        SiteTracker::with_basis("s", random_orthonormal(12, 3, 1), cfg(3, 6), 2).unwrap();
    tracker.hard_reset(&x).unwrap();
    let reset_f = fidelity(&tracker.compress(&x).unwrap(), &x);
    for seed in 0..50 {
        let r = random_orthonormal(12, 3, 9000 + seed);
        let f = fidelity(&x.matmul(&r), &x);
        assert!(reset_f >= f - 1e-9, "random basis beat the reset SVD");
    }
    // And it matches the direct truncated SVD route.
    let direct = truncated_svd(&x, 3).unwrap();
    assert_eq!(**tracker.basis(), direct);
}

#[test]
fn identical_seeds_give_bit_identical_trajectories() {
    let run = |seed: u64| {
        let dim = 24;
        let frames = planted_frames(dim, &[4, 6], 17);
        let mut s1 = PlantedStream::with_basis(frames[0].clone(), &[3.0, 2.0, 1.5, 1.2], 0.0, 81);
        let mut s2 = PlantedStream::with_basis(
            frames[1].clone(),
            &[2.0, 1.8, 1.6, 1.4, 1.2, 1.0],
            0.0,
            82,
        );
        let x0 = s1.next_batch(30);
        let mut tracker = SiteTracker::init_site("s", &x0, cfg(4, 10), seed).unwrap();
        let mut bases = Vec::new();
        for step in 0..12 {
            let x = if step < 6 {
                s1.next_batch(30)
            } else {
                s2.next_batch(30)
            };
            tracker.step(&x).unwrap();
            bases.push((**tracker.basis()).clone());
        }
        (bases, tracker.events_jsonl())
    };
    let (bases_a, log_a) = run(12345);
    let (bases_b, log_b) = run(12345);
    assert_eq!(log_a, log_b);
    for (a, b) in bases_a.iter().zip(&bases_b) {
        assert_eq!(a, b, "basis trajectory diverged");
    }
}

#[test]
fn rank_stays_within_configured_bounds_through_mixed_stream() {
    let dim = 24;
    let frames = planted_frames(dim, &[4, 6], 29);
    let mut s1 = PlantedStream::with_basis(frames[0].clone(), &[3.0, 2.0, 1.5, 1.2], 0.01, 91);
    let mut s2 = PlantedStream::with_basis(
        frames[1].clone(),
        &[2.0, 1.8, 1.6, 1.4, 1.2, 1.0],
        0.01,
        92,
    );
    let x0 = s1.next_batch(30);
    let mut tracker = SiteTracker::init_site("s", &x0, cfg(4, 8), 33).unwrap();
    for step in 0..20 {
        let x = if step % 7 < 4 {
            s1.next_batch(30)
        } else {
            s2.next_batch(30)
        };
        let out = tracker.step(&x).unwrap();
        assert!(tracker.rank() <= 8);
        assert!(tracker.rank() >= 1);
        assert!(out.fidelity <= 1.0 + 1e-9);
        assert!(out.fidelity >= 0.0);
        assert!(tracker.basis().orthonormality_defect() < 1e-6);
    }
}
