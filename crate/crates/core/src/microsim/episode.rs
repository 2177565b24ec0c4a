use std::io::Write;

use super::sim::{ActionMap, Simulator, TraceRow};
use super::SimConfig;
use crate::error::Result;
use crate::evalbench::{Metrics, WindowStats};
use crate::scalar::Scalar;
use crate::scenario::Context;

/// Produces one commanded acceleration per active AV each step.
pub trait Controller<S: Scalar> {
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>>;

    /// Called after every step with the updated state.
    fn observe(&mut self, _sim: &Simulator<S>) -> Result<()> {
        Ok(())
    }
}

impl<S, F> Controller<S> for F
where
    S: Scalar,
    F: FnMut(&Simulator<S>) -> Result<ActionMap<S>>,
{
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>> {
        self(sim)
    }
}

/// Drives every AV exactly as a human driver would be driven.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdmController;

impl<S: Scalar> Controller<S> for IdmController {
    fn act(&mut self, sim: &Simulator<S>) -> Result<ActionMap<S>> {
        sim.active_avs().into_iter().map(|id| Ok((id, sim.idm_proposal(id)?))).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub metrics: Metrics,
    pub trace: Vec<TraceRow>,
}

/// Runs one episode from an empty approach: arrivals for `cfg.horizon`
/// seconds, then (if `cfg.drain`) until every vehicle has left.
pub fn run_episode<S, C>(
    ctx: &Context,
    cfg: &SimConfig,
    seed: u64,
    controller: &mut C,
    record_trace: bool,
) -> Result<Episode>
where
    S: Scalar,
    C: Controller<S> + ?Sized,
{
    let mut sim = Simulator::<S>::new(ctx, cfg, seed)?;
    if record_trace {
        sim.enable_trace();
    }
    for _ in 0..cfg.steps() {
        let actions = controller.act(&sim)?;
        sim.step(&actions)?;
        controller.observe(&sim)?;
    }
    let window = WindowStats { horizon: sim.clock().as_f64(), crossed: sim.tally().crossed };
    sim.set_spawning(false);
    for _ in 0..cfg.max_drain_steps() {
        if sim.is_empty() {
            break;
        }
        let actions = controller.act(&sim)?;
        sim.step(&actions)?;
        controller.observe(&sim)?;
    }
    let metrics = Metrics::from_sim(&sim, &window);
    Ok(Episode { metrics, trace: sim.take_trace() })
}

/// Writes trace rows as CSV with a header line.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "vehicle_id", "class", "lane", "position", "speed", "accel", "emission_gps"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.vehicle_id.to_string(),
            r.class.as_str().to_string(),
            r.lane.to_string(),
            r.position.to_string(),
            r.speed.to_string(),
            r.accel.to_string(),
            r.emission_gps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
