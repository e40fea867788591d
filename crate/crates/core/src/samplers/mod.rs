//! MAP/SGD optimization, SGLD and GGMC kernels, cyclical schedules,
//! preconditioning and the chain runner.

mod chain;
mod kernels;
mod schedule;

pub use chain::{
    run_chain, sgd_map, DivergenceRecord, Draw, DrawMeta, EpochRecord, MapResult, Preconditioner, SampleArchive,
    SamplerConfig, SamplerKind, DEFAULT_DECAY,
};
pub use kernels::{
    eval_checked, ggmc_step, obabo_step, sgld_step, update_preconditioner, GradFn, SamplerState, DIVERGENCE_THRESHOLD,
    MASS_EPS, RMS_DECAY,
};
pub use schedule::{cyclical_lr, LrSchedule};
