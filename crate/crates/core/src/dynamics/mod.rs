//! Optically driven jump process: rates, sampling, exact counting and
//! calibration.

pub mod calibrate;
pub mod exact;
pub mod fluorescence;
pub mod rates;
pub mod reduced;
pub mod sampler;
pub mod trajectory_io;

pub use calibrate::{calibrate, Calibration, CalibrationTargets};
pub use exact::{exact_count_distribution, CountDistribution};
pub use fluorescence::{fluorescence_decay_curve, DecayCurve};
pub use rates::{Channel, Drive, RateModel};
pub use reduced::ReducedModel;
pub use sampler::{detect, sample_trajectory, Detector, Trajectory};
