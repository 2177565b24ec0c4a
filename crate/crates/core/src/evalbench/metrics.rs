use serde::{Deserialize, Serialize};

use crate::microsim::Simulator;
use crate::scalar::Scalar;

/// Fleet-level outcome of one episode (or a mean over episodes).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// g, all vehicles over the whole horizon.
    pub total_emission: f64,
    /// g per arrived vehicle (entered or still waiting at the entry).
    pub emission_per_vehicle: f64,
    /// Vehicle-time weighted mean speed, m/s.
    pub mean_speed: f64,
    /// Stop-line crossings per hour during the arrival window.
    pub throughput: f64,
    /// Spawn to stop-line crossing, s.
    pub mean_travel_time: f64,
    /// s per arrived vehicle below the idling speed, entry waiting included.
    pub idling_time_per_vehicle: f64,
    /// Vehicles that crossed the stop line. Fractional after averaging.
    pub vehicles_completed: f64,
}

/// Metric selector used by reports and sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    TotalEmission,
    EmissionPerVehicle,
    MeanSpeed,
    Throughput,
    MeanTravelTime,
    IdlingTimePerVehicle,
    VehiclesCompleted,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        Self::TotalEmission,
        Self::EmissionPerVehicle,
        Self::MeanSpeed,
        Self::Throughput,
        Self::MeanTravelTime,
        Self::IdlingTimePerVehicle,
        Self::VehiclesCompleted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TotalEmission => "total_emission",
            Self::EmissionPerVehicle => "emission_per_vehicle",
            Self::MeanSpeed => "mean_speed",
            Self::Throughput => "throughput",
            Self::MeanTravelTime => "mean_travel_time",
            Self::IdlingTimePerVehicle => "idling_time_per_vehicle",
            Self::VehiclesCompleted => "vehicles_completed",
        }
    }
}

/// Arrival-window snapshot used for throughput.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub horizon: f64,
    pub crossed: usize,
}

impl Metrics {
    /// Metrics of a finished episode. Throughput counts crossings inside the
    /// arrival window; all other fields cover every step simulated.
    pub fn from_sim<S: Scalar>(sim: &Simulator<S>, window: &WindowStats) -> Self {
        let t = sim.tally();
        let horizon = window.horizon;
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        let arrived = t.spawned + sim.backlog();
        Self {
            total_emission: t.total_emission,
            emission_per_vehicle: per(t.total_emission, arrived),
            mean_speed: if t.vehicle_time > 0.0 { t.distance / t.vehicle_time } else { 0.0 },
            throughput: if horizon > 0.0 { window.crossed as f64 * 3600.0 / horizon } else { 0.0 },
            mean_travel_time: per(t.travel_time_sum, t.crossed),
            idling_time_per_vehicle: per(t.idle_time, arrived),
            vehicles_completed: t.crossed as f64,
        }
    }

    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::TotalEmission => self.total_emission,
            MetricKind::EmissionPerVehicle => self.emission_per_vehicle,
            MetricKind::MeanSpeed => self.mean_speed,
            MetricKind::Throughput => self.throughput,
            MetricKind::MeanTravelTime => self.mean_travel_time,
            MetricKind::IdlingTimePerVehicle => self.idling_time_per_vehicle,
            MetricKind::VehiclesCompleted => self.vehicles_completed,
        }
    }

    /// Field-wise mean; the default (all zero) for an empty slice.
    pub fn mean(all: &[Metrics]) -> Self {
        if all.is_empty() {
            return Self::default();
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Self {
            total_emission: avg(|m| m.total_emission),
            emission_per_vehicle: avg(|m| m.emission_per_vehicle),
            mean_speed: avg(|m| m.mean_speed),
            throughput: avg(|m| m.throughput),
            mean_travel_time: avg(|m| m.mean_travel_time),
            idling_time_per_vehicle: avg(|m| m.idling_time_per_vehicle),
            vehicles_completed: avg(|m| m.vehicles_completed),
        }
    }
}
