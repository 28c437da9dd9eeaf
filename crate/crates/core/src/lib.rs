//! Feedback-controller synthesis for control-affine systems under
//! next-free LTL specifications.
//!
//! The pipeline: a deterministic Rabin automaton of the specification is an
//! input; an accepting lasso run is selected and unrolled into a sequence
//! of formulae, each with an active time window; logistic guard functions
//! stagger the obligations over their windows; each formula gets a smooth
//! composed control barrier function; and a per-step quadratic program
//! picks the minimum-cost input satisfying the resulting ZCBF/FCBF rows.
//! A runtime monitor replays the closed-loop trace through the automaton
//! and certifies that the planned run was executed on schedule.

pub mod automaton;
pub mod barrier;
pub mod controller;
pub mod expr;
pub mod formula;
pub mod planner;
pub mod qp;
pub mod scenario;
pub mod sim;

pub use automaton::{AcceptingRun, Dra};
pub use barrier::{Barrier, BarrierOpts, GuardParams};
pub use controller::{ControlContext, CtrlParams, Schedule, SystemModel};
pub use expr::{parse_expr, Expr};
pub use formula::{holds, label, parse_formula, LitFormula, PropositionDef};
pub use planner::{FormulaSpec, TaskPlan};
pub use scenario::{load_scenario, synthesize, Scenario, Synthesis};
pub use sim::{simulate, SimResult, Trajectory, Verdict};
