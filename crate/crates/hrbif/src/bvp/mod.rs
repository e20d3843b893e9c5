pub mod contin;
pub mod homoclinic;
pub mod mesh;
pub mod periodic;
pub mod systems;

pub use contin::{continue_bvp, BvpBranch, BvpBranchPoint, BvpContinuationSettings, BvpSpecialPoint, TestSpec};
pub use mesh::{BvpConditions, BvpNewtonSettings, BvpSolution, BvpSystem};
pub use periodic::{continue_periodic, floquet_multipliers, solve_periodic, PeriodicOrbit};
pub use homoclinic::{
    continue_homoclinic, inclination_flip_test, saddle_frame, scan_connections,
    solve_homoclinic_from_shot, stitch_branches, HomoclinicBranch, HomoclinicSolution,
    HomoclinicSolveOptions, HomoclinicTests, SaddleFrame, ShotConnection,
};
pub use systems::{ClosureSystem, FastBvpSystem, HrBvpSystem};
