//! Follower, leader and Stackelberg solvers.

mod bilevel;
mod ga;
mod local;
mod simplex;

pub use bilevel::{
    evaluate_fixed_beta, solve_follower, solve_stackelberg, Diagnostics, FollowerConfig, FollowerSolution,
    PollutionProblem, StackelbergConfig, StackelbergResult, TrafficProblem,
};
pub use ga::{ga_minimize, GAConfig, GAResult, GenerationStats};
pub use local::{central_difference_gradient, local_minimize, LocalResult, LocalSearchConfig};
pub use simplex::{project_capped_simplex, ControlEncoder, ControlHalf, Group, SimplexLayout};
