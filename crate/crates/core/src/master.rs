//! Supervisor choosing between the corner sensors and the arm-mounted sensor.
//!
//! ```text
//!            target inside frustum shrunk by margin
//!   EtoH ─────────────────────────────────────────▶ EinH
//!        ◀─────────────────────────────────────────
//!            target lost or outside the full frustum
//! ```

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::sensors::FrustumSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServoMode {
    EtoH,
    EinH,
}

impl std::fmt::Display for ServoMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ServoMode::EtoH => "etoh",
            ServoMode::EinH => "einh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MasterState {
    pub mode: ServoMode,
    pub hysteresis_margin: f64,
    /// Pins the mode to EtoH (corner-sensor-only runs).
    pub pinned: bool,
}

impl MasterState {
    pub fn new(hysteresis_margin: f64) -> Self {
        Self {
            mode: ServoMode::EtoH,
            hysteresis_margin: hysteresis_margin.max(0.0),
            pinned: false,
        }
    }

    pub fn pinned_etoh() -> Self {
        Self {
            pinned: true,
            ..Self::new(0.0)
        }
    }
}

/// One supervisor step. `target_cam` is the target in the stereo camera
/// frame, or `None` when the stereo sensor has no valid detection.
pub fn update_mode(
    state: MasterState,
    target_cam: Option<&Vec3>,
    einh_frustum: &FrustumSpec,
) -> MasterState {
    if state.pinned {
        return MasterState {
            mode: ServoMode::EtoH,
            ..state
        };
    }
    let mode = match (state.mode, target_cam) {
        (_, None) => ServoMode::EtoH,
        (ServoMode::EtoH, Some(p)) => {
            if einh_frustum.contains_local_shrunk(p, state.hysteresis_margin) {
                ServoMode::EinH
            } else {
                ServoMode::EtoH
            }
        }
        (ServoMode::EinH, Some(p)) => {
            if einh_frustum.contains_local(p) {
                ServoMode::EinH
            } else {
                ServoMode::EtoH
            }
        }
    };
    MasterState { mode, ..state }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(depth: f64) -> Vec3 {
        Vec3::new(0.0, 0.0, depth)
    }

    #[test]
    fn switch_examples() {
        let f = FrustumSpec::einh_default();
        let s = MasterState::new(0.05);
        assert_eq!(update_mode(s, Some(&at(0.30)), &f).mode, ServoMode::EinH);
        assert_eq!(update_mode(s, Some(&at(0.37)), &f).mode, ServoMode::EtoH);
        let e = MasterState {
            mode: ServoMode::EinH,
            ..s
        };
        assert_eq!(update_mode(e, Some(&at(0.41)), &f).mode, ServoMode::EtoH);
        assert_eq!(update_mode(e, Some(&at(0.39)), &f).mode, ServoMode::EinH);
        assert_eq!(update_mode(e, None, &f).mode, ServoMode::EtoH);
    }

    #[test]
    fn never_einh_without_target() {
        let f = FrustumSpec::einh_default();
        for mode in [ServoMode::EtoH, ServoMode::EinH] {
            let s = MasterState {
                mode,
                ..MasterState::new(0.05)
            };
            assert_eq!(update_mode(s, None, &f).mode, ServoMode::EtoH);
        }
    }

    #[test]
    fn zero_margin_boundaries_coincide() {
        let f = FrustumSpec::einh_default();
        let s = MasterState::new(0.0);
        for depth in [0.199, 0.2, 0.3, 0.4, 0.401] {
            let inside = f.contains_local(&at(depth));
            let switched_in = update_mode(s, Some(&at(depth)), &f).mode == ServoMode::EinH;
            let held = update_mode(
                MasterState {
                    mode: ServoMode::EinH,
                    ..s
                },
                Some(&at(depth)),
                &f,
            )
            .mode
                == ServoMode::EinH;
            assert_eq!(inside, switched_in);
            assert_eq!(inside, held);
        }
    }

    #[test]
    fn pinned_stays_etoh() {
        let f = FrustumSpec::einh_default();
        assert_eq!(
            update_mode(MasterState::pinned_etoh(), Some(&at(0.3)), &f).mode,
            ServoMode::EtoH
        );
    }

    #[test]
    fn small_oscillation_never_switches_in() {
        // amplitude 2 cm around the far wall stays outside the 5 cm band
        let f = FrustumSpec::einh_default();
        let mut s = MasterState::new(0.05);
        let mut switches = 0;
        for i in 0..1000 {
            let t = i as f64 * 0.1;
            let depth = 0.40 + 0.02 * (t * std::f64::consts::TAU / 10.0).sin();
            let next = update_mode(s, Some(&at(depth)), &f);
            if s.mode == ServoMode::EtoH && next.mode == ServoMode::EinH {
                switches += 1;
            }
            s = next;
        }
        assert_eq!(switches, 0);
    }
}
