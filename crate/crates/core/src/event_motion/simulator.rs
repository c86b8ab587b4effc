use vfi_tensor::Scalar;

use super::volume::{build_event_volume, Event, EventVolume, Polarity};
use crate::error::{Error, Result};
use crate::image::Image;

/// Log-intensity floor.
pub const LOG_EPS: f64 = 1e-3;

/// Difference-threshold event simulator.
///
/// Each pixel emits `floor(|d| / threshold)` events with
/// `d = ln(L_b + eps) - ln(L_a + eps)`, timestamped `k / n` for `k = 1..=n`.
/// RGB input is reduced to luma first. Events come out in raster order.
pub fn simulate_events<S: Scalar>(frame_a: &Image<S>, frame_b: &Image<S>, threshold: f64) -> Result<Vec<Event>> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Config(format!("contrast threshold must be positive, got {threshold}")));
    }
    if (frame_a.height(), frame_a.width()) != (frame_b.height(), frame_b.width()) {
        return Err(Error::Shape(format!(
            "simulator frames differ: {}x{} vs {}x{}",
            frame_a.height(),
            frame_a.width(),
            frame_b.height(),
            frame_b.width()
        )));
    }
    let (la, lb) = (frame_a.luma(), frame_b.luma());
    let w = la.width();
    let mut events = Vec::new();
    for (i, (&a, &b)) in la.data().iter().zip(lb.data()).enumerate() {
        let d = (b.as_f64() + LOG_EPS).ln() - (a.as_f64() + LOG_EPS).ln();
        let n = (d.abs() / threshold).floor() as usize;
        if n == 0 {
            continue;
        }
        let p = if d > 0.0 { Polarity::Positive } else { Polarity::Negative };
        let (y, x) = (i / w, i % w);
        events.extend((1..=n).map(|k| Event::new(x, y, k as f64 / n as f64, p)));
    }
    Ok(events)
}

/// Simulates events between two frames and scatters them into a volume.
pub fn simulate_volume<S: Scalar>(frame_a: &Image<S>, frame_b: &Image<S>, threshold: f64, bins: usize) -> Result<EventVolume<S>> {
    let events = simulate_events(frame_a, frame_b, threshold)?;
    build_event_volume(&events, bins, frame_a.height(), frame_a.width())
}
