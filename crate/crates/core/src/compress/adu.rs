//! Grouping of raw events into independently decodable time windows.

use crate::event::{Event, StreamHeader, Tick};

/// Side length of a spatial cube.
pub const CUBE_SIZE: u16 = 16;

/// Events of one 16x16 region within one ADU, one queue per pixel and
/// channel, channel-major then row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventCube {
    pub x0: u16,
    pub y0: u16,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub queues: Vec<Vec<Event>>,
}

impl EventCube {
    fn new(x0: u16, y0: u16, width: u16, height: u16, channels: u8) -> Self {
        let n = usize::from(width) * usize::from(height) * usize::from(channels);
        EventCube { x0, y0, width, height, channels, queues: vec![Vec::new(); n] }
    }

    pub fn slot(&self, x: u16, y: u16, c: u8) -> usize {
        let area = usize::from(self.width) * usize::from(self.height);
        usize::from(c) * area + usize::from(y - self.y0) * usize::from(self.width) + usize::from(x - self.x0)
    }

    /// Coordinates of queue `slot`.
    pub fn coords(&self, slot: usize) -> (u16, u16, u8) {
        let area = usize::from(self.width) * usize::from(self.height);
        let c = slot / area;
        let r = slot % area;
        let w = usize::from(self.width);
        (self.x0 + (r % w) as u16, self.y0 + (r / w) as u16, c as u8)
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(Vec::is_empty)
    }
}

/// Application data unit: all events in `(start_t, start_t + span]`, plus
/// any late events that arrived while this window was open.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adu {
    pub start_t: Tick,
    pub span: u32,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub cubes: Vec<EventCube>,
    cubes_x: u16,
}

impl Adu {
    pub fn new(header: &StreamHeader, start_t: Tick, span: u32) -> Self {
        let cubes_x = header.width.div_ceil(CUBE_SIZE);
        let cubes_y = header.height.div_ceil(CUBE_SIZE);
        let mut cubes = Vec::with_capacity(usize::from(cubes_x) * usize::from(cubes_y));
        for cy in 0..cubes_y {
            for cx in 0..cubes_x {
                let x0 = cx * CUBE_SIZE;
                let y0 = cy * CUBE_SIZE;
                let w = CUBE_SIZE.min(header.width - x0);
                let h = CUBE_SIZE.min(header.height - y0);
                cubes.push(EventCube::new(x0, y0, w, h, header.channels));
            }
        }
        Adu { start_t, span, width: header.width, height: header.height, channels: header.channels, cubes, cubes_x }
    }

    pub fn end_t(&self) -> u64 {
        u64::from(self.start_t) + u64::from(self.span)
    }

    /// Appends `e` to its pixel queue. Events must arrive in nondecreasing
    /// time per pixel.
    pub fn push(&mut self, e: Event) {
        debug_assert!(e.x < self.width && e.y < self.height && e.c < self.channels);
        let ci = usize::from(e.y / CUBE_SIZE) * usize::from(self.cubes_x) + usize::from(e.x / CUBE_SIZE);
        let cube = &mut self.cubes[ci];
        let slot = cube.slot(e.x, e.y, e.c);
        cube.queues[slot].push(e);
    }

    pub fn event_count(&self) -> usize {
        self.cubes.iter().flat_map(|c| &c.queues).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.iter().all(EventCube::is_empty)
    }

    /// Events in coding order: cube, channel, pixel, then time.
    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.cubes.iter().flat_map(|c| c.queues.iter().flatten())
    }
}

/// Streams events into consecutive ADUs. Windows with no events are still
/// produced so that ADU `k` always starts at `k * span`.
pub struct AduBuilder {
    header: StreamHeader,
    span: u32,
    current: Adu,
}

impl AduBuilder {
    pub fn new(header: &StreamHeader, span: u32) -> Self {
        assert!(span > 0, "ADU span must be positive");
        AduBuilder { header: *header, span, current: Adu::new(header, 0, span) }
    }

    /// Adds `e`, returning any ADUs its timestamp closed.
    pub fn push(&mut self, e: Event) -> Vec<Adu> {
        let mut closed = Vec::new();
        while u64::from(e.t) > self.current.end_t() {
            let next_start = self.current.end_t() as Tick;
            let next = Adu::new(&self.header, next_start, self.span);
            closed.push(std::mem::replace(&mut self.current, next));
        }
        self.current.push(e);
        closed
    }

    pub fn finish(self) -> Adu {
        self.current
    }
}

/// Splits an emission-ordered event stream into ADUs of `span` ticks.
/// Always returns at least one ADU.
pub fn build_adus(header: &StreamHeader, events: &[Event], span: u32) -> Vec<Adu> {
    let mut builder = AduBuilder::new(header, span);
    let mut out = Vec::new();
    for e in events {
        out.extend(builder.push(*e));
    }
    out.push(builder.finish());
    out
}
