use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{stream_rng, ErrorModel, SimulatedFrame};
use crate::calib::CalibrationPair;

const INJECT_STREAM: u64 = 1;

fn symmetric(rng: &mut ChaCha8Rng, half: f64) -> f64 {
    if half > 0.0 {
        rng.random_range(-half..=half)
    } else {
        0.0
    }
}

/// Perturbs the camera mapping of a rendered frame: records a pixel shift for
/// every point and jitters or drops detection boxes. Cloud, labels and poses
/// are left as rendered.
pub fn inject_mapping_errors(mut frame: SimulatedFrame, err: &ErrorModel, seed: u64, calib: &CalibrationPair) -> SimulatedFrame {
    let mut rng = stream_rng(seed, frame.frame_id, INJECT_STREAM);
    let frame_shift = [
        err.constant_shift_px[0] + symmetric(&mut rng, err.frame_shift_px[0]),
        err.constant_shift_px[1] + symmetric(&mut rng, err.frame_shift_px[1]),
    ];
    for s in frame.applied_shifts.iter_mut() {
        *s = [
            frame_shift[0] + symmetric(&mut rng, err.point_jitter_px[0]),
            frame_shift[1] + symmetric(&mut rng, err.point_jitter_px[1]),
        ];
    }

    let (w, h) = (calib.intrinsics.width as f64, calib.intrinsics.height as f64);
    let detections = std::mem::take(&mut frame.detections);
    for mut b in detections {
        let dropped = err.dropout > 0.0 && rng.random::<f64>() < err.dropout;
        let (du, dv) = (symmetric(&mut rng, err.box_jitter_px), symmetric(&mut rng, err.box_jitter_px));
        let (sw, sh) = (
            1.0 + symmetric(&mut rng, err.box_scale_jitter),
            1.0 + symmetric(&mut rng, err.box_scale_jitter),
        );
        if dropped {
            continue;
        }
        let (cu, cv) = (0.5 * (b.u_min + b.u_max) + du, 0.5 * (b.v_min + b.v_max) + dv);
        let (hw, hh) = (0.5 * b.width() * sw, 0.5 * b.height() * sh);
        b.u_min = (cu - hw).clamp(0.0, w);
        b.u_max = (cu + hw).clamp(0.0, w);
        b.v_min = (cv - hh).clamp(0.0, h);
        b.v_max = (cv + hh).clamp(0.0, h);
        if b.width() >= 1.0 && b.height() >= 1.0 {
            frame.detections.push(b);
        }
    }
    frame
}
