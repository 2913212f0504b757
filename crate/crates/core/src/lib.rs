pub mod autodiff;
pub mod cli;
pub mod fixtures;
pub mod io;
pub mod kinematics;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod mosds;
pub mod motion_init;
pub mod optimizer;
pub mod renderer;
pub mod rig;
pub mod skeleton;
pub mod springmass;
