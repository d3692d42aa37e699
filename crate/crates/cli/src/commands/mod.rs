mod bus;
mod run;
mod service;
mod validate;

pub use bus::{read, scan, simulate};
pub use run::run;
pub use service::gen_service;
pub use validate::validate;
