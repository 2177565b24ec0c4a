use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Green,
    Red,
}

/// Fixed-time plan: each cycle is `red_s` of red followed by `green_s` of
/// green, shifted by `phase_offset` seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalSchedule<S> {
    pub green_s: S,
    pub red_s: S,
    pub phase_offset: S,
}

/// Snapshot of the signal at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalState<S> {
    pub phase: Phase,
    pub time_in_phase: S,
    pub time_remaining: S,
    pub schedule: SignalSchedule<S>,
}

impl<S: Scalar> SignalSchedule<S> {
    pub fn new(green_s: S, red_s: S, phase_offset: S) -> Self {
        Self { green_s, red_s, phase_offset }
    }

    pub fn cycle(&self) -> S {
        self.green_s + self.red_s
    }

    /// Position inside the cycle, in `[0, cycle)`. Values within a few ulps
    /// of a phase boundary snap onto it so that `t` and `t + cycle` agree.
    fn cycle_time(&self, t: S) -> S {
        let c = self.cycle();
        let eps = S::epsilon() * S::lit(64.0) * c;
        let u = (t + self.phase_offset) % c;
        let u = if u < S::zero() { u + c } else { u };
        if u >= c - eps || u < eps {
            S::zero()
        } else if (u - self.red_s).abs() < eps {
            self.red_s
        } else {
            u
        }
    }

    pub fn phase_at(&self, t: S) -> Phase {
        if self.cycle_time(t) < self.red_s {
            Phase::Red
        } else {
            Phase::Green
        }
    }

    pub fn state_at(&self, t: S) -> SignalState<S> {
        let u = self.cycle_time(t);
        let (phase, time_in_phase, time_remaining) = if u < self.red_s {
            (Phase::Red, u, self.red_s - u)
        } else {
            (Phase::Green, u - self.red_s, self.cycle() - u)
        };
        SignalState { phase, time_in_phase, time_remaining, schedule: *self }
    }

    /// Seconds until the next green onset; zero while green.
    pub fn time_to_green(&self, t: S) -> S {
        let st = self.state_at(t);
        match st.phase {
            Phase::Green => S::zero(),
            Phase::Red => st.time_remaining,
        }
    }

    /// Length of the green window that starts at (or is running at) `t`:
    /// remaining green if green, the full green duration if red.
    pub fn green_window(&self, t: S) -> S {
        let st = self.state_at(t);
        match st.phase {
            Phase::Green => st.time_remaining,
            Phase::Red => self.green_s,
        }
    }
}

impl<S: Scalar> SignalState<S> {
    pub fn time_to_green(&self) -> S {
        match self.phase {
            Phase::Green => S::zero(),
            Phase::Red => self.time_remaining,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_then_green() {
        let s = SignalSchedule::new(25.0, 30.0, 0.0);
        assert_eq!(s.phase_at(0.0), Phase::Red);
        assert_eq!(s.phase_at(29.9), Phase::Red);
        assert_eq!(s.phase_at(30.0), Phase::Green);
        assert_eq!(s.phase_at(54.9), Phase::Green);
        assert_eq!(s.phase_at(55.0), Phase::Red);
        assert_eq!(s.time_to_green(10.0), 20.0);
        assert_eq!(s.time_to_green(40.0), 0.0);
        assert_eq!(s.green_window(10.0), 25.0);
        assert_eq!(s.green_window(40.0), 15.0);
    }

    #[test]
    fn offset_shifts_the_cycle() {
        let s = SignalSchedule::new(25.0, 30.0, 40.0);
        assert_eq!(s.phase_at(0.0), Phase::Green);
        let st = s.state_at(0.0);
        assert_eq!(st.time_in_phase, 10.0);
        assert_eq!(st.time_remaining, 15.0);
        assert_eq!(s.phase_at(15.0), Phase::Red);
    }

    #[test]
    fn periodic_on_the_step_grid() {
        let s = SignalSchedule::new(27.3, 25.9, 13.7);
        for k in 0..20_000 {
            let t = k as f64 * 0.1;
            assert_eq!(s.phase_at(t), s.phase_at(t + s.cycle()), "t = {t}");
        }
    }
}
