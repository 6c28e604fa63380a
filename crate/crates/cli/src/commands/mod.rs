pub mod example1;
pub mod example2;
pub mod generic_loss;
pub mod particles;
pub mod report;
