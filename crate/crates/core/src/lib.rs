pub mod bounds;
pub mod data;
pub mod grad;
pub mod model;
pub mod numerics;
pub mod train;
pub mod verify;
