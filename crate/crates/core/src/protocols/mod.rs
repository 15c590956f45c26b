//! Pulse sequences on coupled control–target pairs.

mod echo;
mod prep;
mod propagate;
mod timeline;

pub use echo::{make_echo_timeline, EchoDesign, EchoTimeline, Perturbation, Placement};
pub use prep::{
    aliased_coupling_offset, analytic_selection_acceptance, distill_rabi, distill_survival, pair_select,
    selection_survival, selection_timeline, SelectParams, SelectionPulses,
};
pub use propagate::{run_sequence, uniform_grid, CouplingOptions, PairPropagator, PairState, PairTrajectory};
pub use timeline::{Channel, EventChannel, EventKind, Segment, SequenceEvent, Timeline, TimelineBuilder};

