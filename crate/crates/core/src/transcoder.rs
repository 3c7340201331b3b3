//! Framed video to event transcoder.
//!
//! Every pixel integrates its frame values (units per `dt_ref` ticks) and
//! fires an event each time it crosses the next `2^D` boundary. While the
//! input stays within the pixel's contrast threshold of the run's baseline,
//! events after the first are queued and coalesced into ever larger `D`.
//! A contrast violation flushes the queue and opens a new run.

use log::warn;
use rayon::prelude::*;
use thiserror::Error;

use crate::event::{Event, EventError, ParamSet, StreamHeader, Tick, D, D_EMPTY, D_MAX};

#[derive(Debug, Error)]
pub enum TranscodeError {
    #[error("frame has {got} samples, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no frames to transcode")]
    NoFrames,
    #[error("tick counter overflowed 32 bits at frame {0}")]
    TickOverflow(u64),
    #[error(transparent)]
    Header(#[from] EventError),
}

/// `floor(log2(max(value, 1)))`: the decimation a run opens with.
pub fn d_intensity(value: u32) -> D {
    (31 - value.max(1).leading_zeros()) as D
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedEvent {
    pub d: D,
    pub t: Tick,
}

impl QueuedEvent {
    pub fn new(d: D, t: Tick) -> Self {
        QueuedEvent { d, t }
    }
}

/// Appends `entry` to a queue of mergeable events and folds equal neighbours
/// at the tail into one event of twice the span.
fn push_coalescing(queue: &mut Vec<QueuedEvent>, entry: QueuedEvent, protected: usize) {
    queue.push(entry);
    while queue.len() >= protected + 2 {
        let n = queue.len();
        let (a, b) = (queue[n - 2], queue[n - 1]);
        if a.d != b.d || a.d >= D_MAX {
            break;
        }
        queue.truncate(n - 2);
        queue.push(QueuedEvent { d: a.d + 1, t: b.t });
    }
}

/// Merges adjacent equal-`D` entries to a fixpoint. The first entry of the
/// run is left alone since it carries the first-event latency bound.
pub fn coalesce_queue(queue: Vec<QueuedEvent>) -> Vec<QueuedEvent> {
    let mut out = Vec::with_capacity(queue.len());
    let mut iter = queue.into_iter();
    if let Some(first) = iter.next() {
        out.push(first);
    }
    for entry in iter {
        push_coalescing(&mut out, entry, 1);
    }
    out
}

/// Stream-wide values a pixel needs while integrating.
#[derive(Debug, Clone, Copy)]
pub struct PixelContext {
    pub dt_ref: u32,
    pub dt_max: u32,
    pub params: ParamSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Run {
    Idle,
    /// Zero-intensity run: expressed with empty events only.
    Dark,
    Lit { baseline: u32 },
}

/// Per-pixel integration state.
#[derive(Debug, Clone)]
pub struct PixelIntegrator {
    run: Run,
    /// Accumulated intensity in sub-units (units x `dt_ref`) since the last boundary.
    acc: u64,
    d_current: D,
    m_current: u8,
    m_target: u8,
    /// Events after the first of the current run, awaiting the next flush.
    queue: Vec<QueuedEvent>,
    first_pending: bool,
    t_last_fired: Tick,
    t_run_start: Tick,
    stable_intervals: u32,
    /// Tick at which a forced sensitivity boost expires; 0 when none is active.
    override_until: Tick,
}

impl Default for PixelIntegrator {
    fn default() -> Self {
        PixelIntegrator {
            run: Run::Idle,
            acc: 0,
            d_current: 0,
            m_current: 0,
            m_target: 0,
            queue: Vec::new(),
            first_pending: false,
            t_last_fired: 0,
            t_run_start: 0,
            stable_intervals: 0,
            override_until: 0,
        }
    }
}

impl PixelIntegrator {
    pub fn baseline(&self) -> Option<u32> {
        match self.run {
            Run::Idle => None,
            Run::Dark => Some(0),
            Run::Lit { baseline } => Some(baseline),
        }
    }

    pub fn m_current(&self) -> u8 {
        self.m_current
    }

    pub fn m_target(&self) -> u8 {
        self.m_target
    }

    pub fn d_current(&self) -> D {
        self.d_current
    }

    pub fn t_last_fired(&self) -> Tick {
        self.t_last_fired
    }

    pub fn t_run_start(&self) -> Tick {
        self.t_run_start
    }

    pub fn queue(&self) -> &[QueuedEvent] {
        &self.queue
    }

    /// Intensity units integrated toward the next, not yet fired, event.
    pub fn remainder_units(&self, dt_ref: u32) -> f64 {
        self.acc as f64 / f64::from(dt_ref)
    }

    fn override_active(&self) -> bool {
        self.override_until != 0
    }

    /// Integrates one frame of `value` units starting at tick `frame_start`,
    /// appending any events that become final to `out`.
    pub fn integrate(&mut self, value: u32, frame_start: Tick, ctx: &PixelContext, out: &mut Vec<QueuedEvent>) {
        if self.override_active() && frame_start >= self.override_until {
            self.override_until = 0;
            self.m_target = ctx.params.m_max;
        }
        match self.run {
            Run::Idle => self.open_run(value, frame_start, ctx, out),
            Run::Dark | Run::Lit { .. } => {
                let baseline = self.baseline().unwrap_or(0);
                if value.abs_diff(baseline) <= u32::from(self.m_current) {
                    if let Run::Lit { .. } = self.run {
                        self.accumulate(value, frame_start, ctx, out);
                    }
                    self.stable_intervals += 1;
                    if self.stable_intervals.is_multiple_of(ctx.params.m_v) && self.m_current < self.m_target {
                        self.m_current += 1;
                    }
                } else {
                    self.close_run(frame_start, out);
                    self.open_run(value, frame_start, ctx, out);
                }
            }
        }
    }

    /// Emits everything the current run still holds, leaving the pixel idle.
    pub fn flush(&mut self, end: Tick, out: &mut Vec<QueuedEvent>) {
        if self.run == Run::Idle {
            return;
        }
        self.close_run(end, out);
        self.acc = 0;
        self.run = Run::Idle;
    }

    /// Forces the threshold down to `m_base` until tick `until`.
    pub fn boost(&mut self, m_base: u8, until: Tick) {
        self.m_current = self.m_current.min(m_base);
        self.m_target = m_base;
        self.override_until = self.override_until.max(until).max(1);
    }

    fn close_run(&mut self, end: Tick, out: &mut Vec<QueuedEvent>) {
        match self.run {
            Run::Idle => {}
            Run::Dark => {
                if end > self.t_last_fired {
                    out.push(QueuedEvent::new(D_EMPTY, end));
                    self.t_last_fired = end;
                }
            }
            Run::Lit { .. } => {
                debug_assert!(!self.first_pending, "first event must fire inside its opening frame");
                out.append(&mut self.queue);
            }
        }
    }

    fn open_run(&mut self, value: u32, frame_start: Tick, ctx: &PixelContext, out: &mut Vec<QueuedEvent>) {
        self.m_current = ctx.params.m_base;
        self.m_target = if self.override_active() { ctx.params.m_base } else { ctx.params.m_max };
        self.stable_intervals = 0;
        self.t_run_start = frame_start;
        self.first_pending = true;
        self.queue.clear();

        if value == 0 {
            // An empty event at the end of the opening frame makes the darkness
            // visible; any leftover from the previous run is folded into it.
            self.run = Run::Dark;
            self.d_current = D_EMPTY;
            self.acc = 0;
            let t = (frame_start + ctx.dt_ref).max(self.t_last_fired + 1);
            out.push(QueuedEvent::new(D_EMPTY, t));
            self.t_last_fired = t;
            self.first_pending = false;
            return;
        }

        self.run = Run::Lit { baseline: value };
        let latency_cap = {
            let budget = u64::from(value) * u64::from(ctx.dt_max) / u64::from(ctx.dt_ref);
            (63 - budget.max(1).leading_zeros()) as D
        };
        self.d_current = d_intensity(value).min(latency_cap);

        let needed = (1u64 << self.d_current) * u64::from(ctx.dt_ref);
        let gap = u64::from(frame_start.saturating_sub(self.t_last_fired));
        if gap * u64::from(value) <= needed {
            // The unfired tail of the previous run is shorter than the new
            // run's first event: start integrating from the last boundary.
            self.acc = gap * u64::from(value);
        } else {
            self.emit_tail(value, needed, frame_start, ctx, out);
        }
        self.accumulate(value, frame_start, ctx, out);
    }

    /// Expresses the unfired tail of the previous run at its own average
    /// rate, largest power-of-two chunks first, until what is left of the gap
    /// fits inside the new run's first event.
    fn emit_tail(&mut self, value: u32, needed: u64, frame_start: Tick, ctx: &PixelContext, out: &mut Vec<QueuedEvent>) {
        let base = u64::from(self.t_last_fired);
        let span = u64::from(frame_start).saturating_sub(base);
        let total = self.acc;
        let mut units = self.acc / u64::from(ctx.dt_ref);
        let mut emitted = 0u64;
        let fits = |t_last: Tick| u64::from(frame_start.saturating_sub(t_last)) * u64::from(value) <= needed;
        while units > 0 && !fits(self.t_last_fired) {
            let d = 63 - units.leading_zeros();
            units -= 1 << d;
            emitted += (1u64 << d) * u64::from(ctx.dt_ref);
            let t = (base + (2 * emitted * span + total) / (2 * total))
                .max(u64::from(self.t_last_fired) + 1)
                .min(u64::from(frame_start)) as Tick;
            if t <= self.t_last_fired {
                break;
            }
            out.push(QueuedEvent::new(d as D, t));
            self.t_last_fired = t;
        }
        if fits(self.t_last_fired) {
            self.acc = u64::from(frame_start.saturating_sub(self.t_last_fired)) * u64::from(value);
        } else {
            out.push(QueuedEvent::new(D_EMPTY, frame_start));
            self.t_last_fired = frame_start;
            self.acc = 0;
        }
    }

    fn accumulate(&mut self, value: u32, frame_start: Tick, ctx: &PixelContext, out: &mut Vec<QueuedEvent>) {
        if value == 0 {
            return;
        }
        let rate = u64::from(value);
        let budget = rate * u64::from(ctx.dt_ref);
        let needed = (1u64 << self.d_current) * u64::from(ctx.dt_ref);
        let mut used = 0u64;
        loop {
            let need = needed.saturating_sub(self.acc);
            if used + need > budget {
                self.acc += budget - used;
                break;
            }
            used += need;
            self.acc = 0;
            let offset = ((2 * used + rate) / (2 * rate)).max(1);
            let t = (u64::from(frame_start) + offset).max(u64::from(self.t_last_fired) + 1) as Tick;
            self.fire(t, out);
        }
    }

    fn fire(&mut self, t: Tick, out: &mut Vec<QueuedEvent>) {
        let entry = QueuedEvent::new(self.d_current, t);
        if self.first_pending {
            self.first_pending = false;
            out.push(entry);
        } else {
            push_coalescing(&mut self.queue, entry, 0);
        }
        self.t_last_fired = t;
    }
}

/// A request from an in-loop application to make a neighbourhood more sensitive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensitivityRequest {
    pub x: u16,
    pub y: u16,
    pub radius: u16,
    pub duration: Tick,
}

/// Observes events as the transcoder emits them and may ask for sensitivity boosts.
pub trait TranscodeHook {
    fn on_event(&mut self, event: &Event, requests: &mut Vec<SensitivityRequest>);
}

pub struct Transcoder {
    header: StreamHeader,
    ctx: PixelContext,
    pixels: Vec<PixelIntegrator>,
    frame_index: u64,
}

impl Transcoder {
    pub fn new(header: StreamHeader, params: ParamSet) -> Result<Self, TranscodeError> {
        header.validate()?;
        let n = header.pixel_count() * usize::from(header.channels);
        Ok(Transcoder {
            header,
            ctx: PixelContext { dt_ref: header.dt_ref, dt_max: header.dt_max, params },
            pixels: vec![PixelIntegrator::default(); n],
            frame_index: 0,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn params(&self) -> &ParamSet {
        &self.ctx.params
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    /// Tick at which the next frame starts.
    pub fn now(&self) -> Tick {
        (self.frame_index * u64::from(self.header.dt_ref)) as Tick
    }

    pub fn pixel(&self, x: u16, y: u16, c: u8) -> &PixelIntegrator {
        &self.pixels[self.index(x, y, c)]
    }

    fn index(&self, x: u16, y: u16, c: u8) -> usize {
        let ch = usize::from(self.header.channels);
        (usize::from(y) * usize::from(self.header.width) + usize::from(x)) * ch + usize::from(c)
    }

    /// Integrates one frame (interleaved channels, row-major) and returns the
    /// events it finalized, row-major with each pixel's events in time order.
    pub fn integrate_frame(&mut self, frame: &[u8]) -> Result<Vec<Event>, TranscodeError> {
        let expected = self.pixels.len();
        if frame.len() != expected {
            return Err(TranscodeError::DimensionMismatch { expected, got: frame.len() });
        }
        let end = (self.frame_index + 1) * u64::from(self.header.dt_ref);
        if end > u64::from(Tick::MAX) {
            return Err(TranscodeError::TickOverflow(self.frame_index));
        }
        let frame_start = self.now();
        let ctx = self.ctx;
        let events = self.for_each_row(|pixel, i, scratch| {
            pixel.integrate(u32::from(frame[i]), frame_start, &ctx, scratch);
        });
        self.frame_index += 1;
        Ok(events)
    }

    /// Drains every pixel's pending events at the current time.
    pub fn flush_all(&mut self) -> Vec<Event> {
        let end = self.now();
        self.for_each_row(|pixel, _, scratch| pixel.flush(end, scratch))
    }

    /// Lowers the threshold of every pixel within Chebyshev `radius` of the
    /// centre to `m_base` for `duration` ticks from now.
    pub fn set_sensitivity(&mut self, x: u16, y: u16, radius: u16, duration: Tick) {
        if x >= self.header.width || y >= self.header.height {
            warn!("sensitivity request at ({x}, {y}) is outside the {}x{} frame", self.header.width, self.header.height);
            return;
        }
        let until = self.now().saturating_add(duration);
        let m_base = self.ctx.params.m_base;
        let x0 = x.saturating_sub(radius);
        let y0 = y.saturating_sub(radius);
        let x1 = x.saturating_add(radius).min(self.header.width - 1);
        let y1 = y.saturating_add(radius).min(self.header.height - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                for c in 0..self.header.channels {
                    let i = self.index(px, py, c);
                    self.pixels[i].boost(m_base, until);
                }
            }
        }
    }

    fn for_each_row<F>(&mut self, f: F) -> Vec<Event>
    where
        F: Fn(&mut PixelIntegrator, usize, &mut Vec<QueuedEvent>) + Sync,
    {
        let ch = usize::from(self.header.channels);
        let row_len = usize::from(self.header.width) * ch;
        let rows: Vec<Vec<Event>> = self
            .pixels
            .par_chunks_mut(row_len)
            .enumerate()
            .map(|(y, row)| {
                let mut events = Vec::new();
                let mut scratch = Vec::new();
                for (i, pixel) in row.iter_mut().enumerate() {
                    f(pixel, y * row_len + i, &mut scratch);
                    for q in scratch.drain(..) {
                        events.push(Event {
                            x: (i / ch) as u16,
                            y: y as u16,
                            c: (i % ch) as u8,
                            d: q.d,
                            t: q.t,
                        });
                    }
                }
                events
            })
            .collect();
        rows.concat()
    }
}

/// Transcodes a whole clip, draining every pixel at the end. When a hook is
/// supplied it sees each event in emission order, and its sensitivity
/// requests take effect from the next frame.
pub fn transcode<'a, I>(
    frames: I,
    params: ParamSet,
    header: StreamHeader,
    mut hook: Option<&mut dyn TranscodeHook>,
) -> Result<Vec<Event>, TranscodeError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut transcoder = Transcoder::new(header, params)?;
    let mut out = Vec::new();
    let mut requests = Vec::new();
    let mut any = false;
    for frame in frames {
        any = true;
        let events = transcoder.integrate_frame(frame)?;
        if let Some(hook) = hook.as_deref_mut() {
            for e in &events {
                hook.on_event(e, &mut requests);
            }
            for r in requests.drain(..) {
                transcoder.set_sensitivity(r.x, r.y, r.radius, r.duration);
            }
        }
        out.extend(events);
    }
    if !any {
        return Err(TranscodeError::NoFrames);
    }
    let tail = transcoder.flush_all();
    if let Some(hook) = hook {
        for e in &tail {
            hook.on_event(e, &mut requests);
        }
    }
    out.extend(tail);
    Ok(out)
}

/// Default lifetime of a sensitivity boost.
pub fn default_boost_duration(header: &StreamHeader) -> Tick {
    header.dt_max.saturating_mul(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::crf_params;

    fn ctx(dt_ref: u32, dt_max: u32, params: ParamSet) -> PixelContext {
        PixelContext { dt_ref, dt_max, params }
    }

    fn lossless() -> ParamSet {
        crf_params(0).unwrap()
    }

    fn loose(m: u8) -> ParamSet {
        ParamSet { m_base: m, m_max: m, m_v: 1, feature_radius: 0 }
    }

    #[test]
    fn d_intensity_values() {
        assert_eq!(d_intensity(223), 7);
        assert_eq!(d_intensity(0), 0);
        assert_eq!(d_intensity(1), 0);
        assert_eq!(d_intensity(256), 8);
    }

    #[test]
    fn coalesce_worked_examples() {
        let q = |v: &[(D, Tick)]| v.iter().map(|&(d, t)| QueuedEvent::new(d, t)).collect::<Vec<_>>();
        assert_eq!(coalesce_queue(q(&[(8, 256), (8, 512), (8, 768)])), q(&[(8, 256), (9, 768)]));
        assert_eq!(coalesce_queue(q(&[(8, 256)])), q(&[(8, 256)]));
        assert_eq!(coalesce_queue(vec![]), vec![]);
        let five = coalesce_queue(q(&[(8, 256), (8, 512), (8, 768), (8, 1024), (8, 1280)]));
        assert_eq!(five, q(&[(8, 256), (10, 1280)]));
        // 5 x 256 units = 256 + 1024
        let units: u64 = five.iter().map(|e| 1u64 << e.d).sum();
        assert_eq!(units, 5 * 256);
    }

    #[test]
    fn latency_example_emits_first_then_coalesced() {
        // One unit per tick for 768 ticks with D starting at 8, then a change.
        let c = ctx(256, 300, lossless());
        let mut px = PixelIntegrator::default();
        let mut out = Vec::new();
        for k in 0..3 {
            px.integrate(256, k * 256, &c, &mut out);
        }
        assert_eq!(out, vec![QueuedEvent::new(8, 256)]);
        px.integrate(100, 768, &c, &mut out);
        assert_eq!(out[..2], [QueuedEvent::new(8, 256), QueuedEvent::new(9, 768)]);
    }

    #[test]
    fn stability_component_matches_worked_example() {
        // 223 then three frames of 220 with M >= 3: D grows from 7 to 9.
        let c = ctx(255, 7650, loose(3));
        let mut px = PixelIntegrator::default();
        let mut out = Vec::new();
        px.integrate(223, 0, &c, &mut out);
        assert_eq!(px.d_current(), 7);
        for k in 1..4 {
            px.integrate(220, k * 255, &c, &mut out);
        }
        px.flush(4 * 255, &mut out);
        let max_d = out.iter().map(|e| e.d).max().unwrap();
        assert_eq!(max_d, 9);
        assert_eq!(max_d - d_intensity(223), 2);
        let units: u64 = out.iter().map(|e| 1u64 << e.d).sum();
        assert_eq!(units, 768); // floor(883 / 128) * 128
    }

    #[test]
    fn all_dark_pixels_emit_only_empty_events() {
        let header = StreamHeader::new(4, 3, 1, 255, 7650, 30.0);
        let frames = vec![vec![0u8; 12]; 10];
        let events = transcode(frames.iter().map(|f| f.as_slice()), lossless(), header, None).unwrap();
        assert!(events.iter().all(|e| e.is_empty()));
        // one for the opening frame, one when the run is drained
        for y in 0..3 {
            for x in 0..4 {
                let n = events.iter().filter(|e| e.x == x && e.y == y).count();
                assert_eq!(n, 2);
            }
        }
    }

    #[test]
    fn flush_of_untouched_state_is_empty() {
        let mut tc = Transcoder::new(StreamHeader::new(5, 5, 1, 255, 255, 30.0), lossless()).unwrap();
        assert!(tc.flush_all().is_empty());
        tc.integrate_frame(&[77; 25]).unwrap();
        let tail = tc.flush_all();
        // every pixel fired its first event inside the frame; nothing queued
        assert!(tail.is_empty());
        tc.integrate_frame(&[77; 25]).unwrap();
        tc.integrate_frame(&[77; 25]).unwrap();
        let tail = tc.flush_all();
        assert_eq!(tail.len(), 25);
    }

    #[test]
    fn dimension_mismatch() {
        let mut tc = Transcoder::new(StreamHeader::new(4, 4, 1, 255, 255, 30.0), lossless()).unwrap();
        assert!(matches!(
            tc.integrate_frame(&[0; 15]),
            Err(TranscodeError::DimensionMismatch { expected: 16, got: 15 })
        ));
    }

    #[test]
    fn lossless_flushes_on_any_change() {
        let c = ctx(255, 7650, lossless());
        let mut px = PixelIntegrator::default();
        let mut out = Vec::new();
        px.integrate(100, 0, &c, &mut out);
        px.integrate(100, 255, &c, &mut out);
        let before = px.t_run_start();
        px.integrate(101, 510, &c, &mut out);
        assert_ne!(px.t_run_start(), before);
        assert_eq!(px.baseline(), Some(101));
    }

    #[test]
    fn threshold_growth_steps_every_m_v_intervals() {
        let params = ParamSet { m_base: 1, m_max: 4, m_v: 3, feature_radius: 0 };
        let c = ctx(255, 7650, params);
        let mut px = PixelIntegrator::default();
        let mut out = Vec::new();
        px.integrate(50, 0, &c, &mut out);
        let mut seen = vec![px.m_current()];
        for k in 1..=12 {
            px.integrate(50, k * 255, &c, &mut out);
            seen.push(px.m_current());
        }
        assert_eq!(seen, [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 4]);
    }

    #[test]
    fn sensitivity_radius_zero_touches_only_centre() {
        let params = ParamSet { m_base: 2, m_max: 10, m_v: 1, feature_radius: 0 };
        let mut tc = Transcoder::new(StreamHeader::new(6, 6, 1, 255, 7650, 30.0), params).unwrap();
        for _ in 0..12 {
            tc.integrate_frame(&[90; 36]).unwrap();
        }
        assert_eq!(tc.pixel(3, 3, 0).m_current(), 10);
        tc.set_sensitivity(3, 3, 0, 1000);
        assert_eq!(tc.pixel(3, 3, 0).m_current(), 2);
        assert_eq!(tc.pixel(3, 3, 0).m_target(), 2);
        assert_eq!(tc.pixel(2, 3, 0).m_current(), 10);
        tc.set_sensitivity(1, 1, 1, 1000);
        for (x, y) in [(0, 0), (2, 2), (0, 2)] {
            assert_eq!(tc.pixel(x, y, 0).m_current(), 2);
        }
        assert_eq!(tc.pixel(3, 0, 0).m_current(), 10);
        // out of bounds is a no-op
        tc.set_sensitivity(60, 1, 2, 1000);
    }

    #[test]
    fn boosted_pixel_uses_base_threshold_then_recovers() {
        let params = ParamSet { m_base: 2, m_max: 10, m_v: 1, feature_radius: 0 };
        let mut tc = Transcoder::new(StreamHeader::new(1, 1, 1, 255, 255, 30.0), params).unwrap();
        for _ in 0..12 {
            tc.integrate_frame(&[90]).unwrap();
        }
        tc.set_sensitivity(0, 0, 0, 510);
        let run = tc.pixel(0, 0, 0).t_run_start();
        // a 5-unit wobble now breaks the run
        tc.integrate_frame(&[95]).unwrap();
        assert_ne!(tc.pixel(0, 0, 0).t_run_start(), run);
        for _ in 0..3 {
            tc.integrate_frame(&[95]).unwrap();
        }
        assert_eq!(tc.pixel(0, 0, 0).m_target(), 10);
        for _ in 0..10 {
            tc.integrate_frame(&[95]).unwrap();
        }
        assert_eq!(tc.pixel(0, 0, 0).m_current(), 10);
    }

    #[test]
    fn static_lossless_clip_event_count() {
        // value 128 fires one D=7 event per frame; the first is emitted at once,
        // the remaining n-1 coalesce into popcount(n-1) events at the drain.
        for n in [1u32, 2, 5, 16, 60, 61] {
            let header = StreamHeader::new(2, 2, 1, 255, 7650, 30.0);
            let frames = vec![vec![128u8; 4]; n as usize];
            let events = transcode(frames.iter().map(|f| f.as_slice()), lossless(), header, None).unwrap();
            let per_pixel = events.iter().filter(|e| e.x == 0 && e.y == 0).count() as u32;
            assert_eq!(per_pixel, 1 + (n - 1).count_ones(), "n = {n}");
            let first = events.iter().find(|e| e.x == 0 && e.y == 0).unwrap();
            assert!(first.t <= header.dt_max);
        }
    }
}
