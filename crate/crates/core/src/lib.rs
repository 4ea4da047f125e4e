pub mod audit;
pub mod consistency;
pub mod cost;
pub mod election;
pub mod engine;
pub mod epidemic;
pub mod ids;
pub mod protocol;
pub mod sim;
pub mod time;
pub mod trace;
pub mod scenario;
