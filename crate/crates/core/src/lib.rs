pub mod domain;
pub mod elbo;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod oracle;
pub mod selftest;
pub mod sim;
pub mod training;
pub mod special;
pub mod variational;
