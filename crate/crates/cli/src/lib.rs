pub mod audit;
pub mod expr;
pub mod output;
pub mod run;
pub mod scenario;
