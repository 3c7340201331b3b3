//! Event-driven FAST corner detection and feature-driven rate control.

use crate::event::{Event, StreamHeader, Tick};
use crate::reconstruct::{ReconError, ReconState};
use crate::transcoder::{default_boost_duration, SensitivityRequest, TranscodeHook};

/// Radius-3 Bresenham ring, clockwise from straight up.
pub const RING: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

pub const DEFAULT_THRESHOLD: u8 = 10;
pub const DEFAULT_STREAK: usize = 9;
const MARGIN: u16 = 3;

/// Which pixels an event retests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectMode {
    /// Only the event's own pixel.
    #[default]
    Paper,
    /// The event's pixel and every pixel whose ring contains it, which keeps
    /// the feature set identical to a full-frame scan.
    Exact,
}

fn testable(width: u16, height: u16, x: u16, y: u16) -> bool {
    x >= MARGIN && y >= MARGIN && x + MARGIN < width && y + MARGIN < height
}

fn has_circular_run(mask: u16, n: usize) -> bool {
    if n == 0 {
        return true;
    }
    if mask == u16::MAX {
        return true;
    }
    let mut run = 0;
    // Two passes over the ring handle runs that wrap around.
    for i in 0..32 {
        if mask >> (i % 16) & 1 == 1 {
            run += 1;
            if run >= n {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// FAST test on a single-channel image. Pixels within 3 of the border are
/// never features.
pub fn is_feature(image: &[u8], width: u16, height: u16, x: u16, y: u16, threshold: u8, streak: usize) -> bool {
    if !testable(width, height, x, y) {
        return false;
    }
    let w = i32::from(width);
    let at = |dx: i32, dy: i32| i32::from(image[((i32::from(y) + dy) * w + i32::from(x) + dx) as usize]);
    let p = at(0, 0);
    let thr = i32::from(threshold);
    let (mut bright, mut dark) = (0u16, 0u16);
    for (i, &(dx, dy)) in RING.iter().enumerate() {
        let v = at(dx, dy);
        if v > p + thr {
            bright |= 1 << i;
        } else if v < p - thr {
            dark |= 1 << i;
        }
    }
    has_circular_run(bright, streak) || has_circular_run(dark, streak)
}

/// Full-image scan; features in row-major order.
pub fn detect_frame(image: &[u8], width: u16, height: u16, threshold: u8, streak: usize) -> Vec<(u16, u16)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if is_feature(image, width, height, x, y, threshold, streak) {
                out.push((x, y));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureDelta {
    pub added: Vec<(u16, u16)>,
    pub removed: Vec<(u16, u16)>,
}

impl FeatureDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

/// Running reconstruction plus the current corner set. Channel 0 is the
/// detection plane.
#[derive(Debug, Clone)]
pub struct DetectorState {
    recon: ReconState,
    plane: Vec<u8>,
    features: Vec<bool>,
    feature_count: usize,
    threshold: u8,
    streak: usize,
    mode: DetectMode,
    tests: u64,
}

impl DetectorState {
    pub fn new(header: &StreamHeader, threshold: u8, mode: DetectMode) -> Self {
        let n = header.pixel_count();
        DetectorState {
            recon: ReconState::new(header),
            plane: vec![0; n],
            features: vec![false; n],
            feature_count: 0,
            threshold,
            streak: DEFAULT_STREAK,
            mode,
            tests: 0,
        }
    }

    pub fn with_streak(mut self, streak: usize) -> Self {
        self.streak = streak;
        self
    }

    pub fn image(&self) -> &[u8] {
        &self.plane
    }

    pub fn recon(&self) -> &ReconState {
        &self.recon
    }

    /// Number of `is_feature` evaluations so far.
    pub fn tests(&self) -> u64 {
        self.tests
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn is_marked(&self, x: u16, y: u16) -> bool {
        self.features[usize::from(y) * usize::from(self.recon.width()) + usize::from(x)]
    }

    /// Current features in row-major order.
    pub fn features(&self) -> Vec<(u16, u16)> {
        let w = usize::from(self.recon.width());
        self.features
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| ((i % w) as u16, (i / w) as u16))
            .collect()
    }

    fn retest(&mut self, x: u16, y: u16, delta: &mut FeatureDelta) {
        let (w, h) = (self.recon.width(), self.recon.height());
        if !testable(w, h, x, y) {
            return;
        }
        self.tests += 1;
        let now = is_feature(&self.plane, w, h, x, y, self.threshold, self.streak);
        let i = usize::from(y) * usize::from(w) + usize::from(x);
        if now != self.features[i] {
            self.features[i] = now;
            if now {
                self.feature_count += 1;
                delta.added.push((x, y));
            } else {
                self.feature_count -= 1;
                delta.removed.push((x, y));
            }
        }
    }

    /// Applies `e` to the running image and retests the affected pixels.
    pub fn on_event(&mut self, e: &Event) -> Result<FeatureDelta, ReconError> {
        let value = self.recon.apply_event(e)?;
        let mut delta = FeatureDelta::default();
        if e.c != 0 {
            return Ok(delta);
        }
        let w = self.recon.width();
        self.plane[usize::from(e.y) * usize::from(w) + usize::from(e.x)] = value;
        self.retest(e.x, e.y, &mut delta);
        if self.mode == DetectMode::Exact {
            for (dx, dy) in RING {
                let (x, y) = (i32::from(e.x) + dx, i32::from(e.y) + dy);
                if x >= 0 && y >= 0 && x <= i32::from(u16::MAX) && y <= i32::from(u16::MAX) {
                    self.retest(x as u16, y as u16, &mut delta);
                }
            }
        }
        Ok(delta)
    }
}

/// Transcoder hook that lowers thresholds around newly detected corners.
pub struct FeaturePolicy {
    detector: DetectorState,
    radius: u16,
    duration: Tick,
    requests: u64,
    errors: u64,
}

impl FeaturePolicy {
    pub fn new(header: &StreamHeader, radius: u16, threshold: u8, mode: DetectMode) -> Self {
        FeaturePolicy {
            detector: DetectorState::new(header, threshold, mode),
            radius,
            duration: default_boost_duration(header),
            requests: 0,
            errors: 0,
        }
    }

    pub fn with_duration(mut self, duration: Tick) -> Self {
        self.duration = duration;
        self
    }

    pub fn detector(&self) -> &DetectorState {
        &self.detector
    }

    /// Sensitivity requests issued so far.
    pub fn requests(&self) -> u64 {
        self.requests
    }

    /// Turns a detector delta into one request per newly added feature.
    pub fn requests_for(&self, delta: &FeatureDelta) -> Vec<SensitivityRequest> {
        delta
            .added
            .iter()
            .map(|&(x, y)| SensitivityRequest { x, y, radius: self.radius, duration: self.duration })
            .collect()
    }
}

impl TranscodeHook for FeaturePolicy {
    fn on_event(&mut self, event: &Event, requests: &mut Vec<SensitivityRequest>) {
        match self.detector.on_event(event) {
            Ok(delta) => {
                let new = self.requests_for(&delta);
                self.requests += new.len() as u64;
                requests.extend(new);
            }
            Err(err) => {
                if self.errors == 0 {
                    log::warn!("feature policy skipped an event: {err}");
                }
                self.errors += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::D_EMPTY;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn with_ring(center: u8, ring: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut img = vec![center; 49];
        for (i, (dx, dy)) in RING.iter().enumerate() {
            img[((3 + dy) * 7 + 3 + dx) as usize] = ring(i);
        }
        img
    }

    /// Independent restatement: some start index begins `n` consecutive hits.
    fn oracle(img: &[u8], thr: i32, n: usize) -> bool {
        let p = i32::from(img[3 * 7 + 3]);
        let vals: Vec<i32> = RING.iter().map(|(dx, dy)| i32::from(img[((3 + dy) * 7 + 3 + dx) as usize])).collect();
        (0..16).any(|s| (0..n).all(|k| vals[(s + k) % 16] > p + thr) || (0..n).all(|k| vals[(s + k) % 16] < p - thr))
    }

    #[test]
    fn ring_is_radius_three_circle() {
        for (dx, dy) in RING {
            let r2 = dx * dx + dy * dy;
            assert!((9..=10).contains(&r2) || r2 == 8);
        }
        let mut sorted = RING.to_vec();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 16);
    }

    #[test]
    fn uniform_and_full_ring() {
        assert!(!is_feature(&[90; 49], 7, 7, 3, 3, 10, 9));
        assert!(is_feature(&with_ring(0, |_| 255), 7, 7, 3, 3, 10, 9));
        assert!(is_feature(&with_ring(255, |_| 0), 7, 7, 3, 3, 10, 9));
        assert!(detect_frame(&[90; 400], 20, 20, 10, 9).is_empty());
    }

    #[test]
    fn arcs_of_every_rotation() {
        for len in [8usize, 9, 12] {
            for start in 0..16 {
                let img = with_ring(100, |i| if (i + 16 - start) % 16 < len { 200 } else { 100 });
                let got = is_feature(&img, 7, 7, 3, 3, 10, 9);
                assert_eq!(got, oracle(&img, 10, 9));
                assert_eq!(got, len >= 9, "len {len} start {start}");
            }
        }
    }

    #[test]
    fn threshold_is_strict() {
        assert!(!is_feature(&with_ring(100, |_| 110), 7, 7, 3, 3, 10, 9));
        assert!(is_feature(&with_ring(100, |_| 111), 7, 7, 3, 3, 10, 9));
        assert!(!is_feature(&with_ring(100, |_| 90), 7, 7, 3, 3, 10, 9));
    }

    #[test]
    fn synthetic_corner_found_exactly() {
        // A bright 3x3 square; with n = 9 only its centre sees a long dark arc.
        let (w, h) = (15u16, 15u16);
        let mut img = vec![20u8; 225];
        for y in 6..9 {
            for x in 6..9 {
                img[y * 15 + x] = 220;
            }
        }
        let found = detect_frame(&img, w, h, 10, 9);
        let brute: Vec<(u16, u16)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| {
                if !(3..12).contains(&x) || !(3..12).contains(&y) {
                    return false;
                }
                let mut patch = vec![0u8; 49];
                for py in 0..7 {
                    for px in 0..7 {
                        patch[py * 7 + px] = img[(usize::from(y) + py - 3) * 15 + usize::from(x) + px - 3];
                    }
                }
                oracle(&patch, 10, 9)
            })
            .collect();
        assert_eq!(found, brute);
        assert!(found.contains(&(7, 7)));
    }

    fn header(w: u16, h: u16) -> StreamHeader {
        StreamHeader::new(w, h, 1, 255, 7650, 30.0)
    }

    #[test]
    fn border_event_does_no_work() {
        let mut det = DetectorState::new(&header(10, 10), 10, DetectMode::Paper);
        let delta = det.on_event(&Event::new(1, 5, 8, 300)).unwrap();
        assert!(delta.is_empty());
        assert_eq!(det.tests(), 0);
    }

    #[test]
    fn exact_mode_adds_constructed_corner() {
        let mut det = DetectorState::new(&header(7, 7), 10, DetectMode::Exact);
        let mut added = Vec::new();
        for (i, (dx, dy)) in RING.iter().enumerate() {
            // 2^8 units over 256 ticks reads as 255.
            let e = Event::new((3 + dx) as u16, (3 + dy) as u16, 8, 256 + i as u32);
            let before = det.tests();
            let delta = det.on_event(&e).unwrap();
            assert!(det.tests() - before <= 17);
            added.extend(delta.added);
        }
        assert_eq!(added, [(3, 3)]);
        assert_eq!(det.features(), detect_frame(det.image(), 7, 7, 10, 9));
    }

    #[test]
    fn incremental_mode_counts_one_test_per_interior_event() {
        let mut det = DetectorState::new(&header(12, 12), 10, DetectMode::Paper);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = vec![0u32; 144];
        let mut interior = 0;
        for _ in 0..500 {
            let (x, y) = (rng.random_range(0..12u16), rng.random_range(0..12u16));
            let i = usize::from(y) * 12 + usize::from(x);
            t[i] += rng.random_range(1..400);
            let delta = det.on_event(&Event::new(x, y, rng.random_range(0..9), t[i])).unwrap();
            if testable(12, 12, x, y) {
                interior += 1;
            }
            for (fx, fy) in delta.added {
                assert!(is_feature(det.image(), 12, 12, fx, fy, 10, 9));
            }
        }
        assert_eq!(det.tests(), interior);
    }

    #[test]
    fn policy_requests_only_new_features() {
        let h = header(7, 7);
        let mut policy = FeaturePolicy::new(&h, 2, 10, DetectMode::Exact);
        let mut reqs = Vec::new();
        for (i, (dx, dy)) in RING.iter().enumerate() {
            policy.on_event(&Event::new((3 + dx) as u16, (3 + dy) as u16, 8, 256 + i as u32), &mut reqs);
        }
        assert_eq!(reqs.len(), 1);
        assert_eq!((reqs[0].x, reqs[0].y, reqs[0].radius, reqs[0].duration), (3, 3, 2, 15300));
        // Re-detection of an existing feature triggers nothing.
        policy.on_event(&Event::new(3, 0, 8, 600), &mut reqs);
        assert_eq!(reqs.len(), 1);
        assert!(policy.requests_for(&FeatureDelta::default()).is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_mode_matches_frame_scan(seed in any::<u64>(), n in 1usize..400) {
            let (w, hgt) = (11u16, 10u16);
            let mut det = DetectorState::new(&header(w, hgt), 10, DetectMode::Exact);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut t = vec![0u32; usize::from(w) * usize::from(hgt)];
            for _ in 0..n {
                let (x, y) = (rng.random_range(0..w), rng.random_range(0..hgt));
                let i = usize::from(y) * usize::from(w) + usize::from(x);
                t[i] += rng.random_range(1..600);
                let d = if rng.random_bool(0.1) { D_EMPTY } else { rng.random_range(0..10) };
                let before = det.tests();
                det.on_event(&Event::new(x, y, d, t[i])).unwrap();
                prop_assert!(det.tests() - before <= 17);
                prop_assert_eq!(det.features(), detect_frame(det.image(), w, hgt, 10, 9));
            }
        }
    }
}
