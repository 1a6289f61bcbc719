pub mod config;
pub mod error;
pub mod experiment;
pub mod forward_models;
pub mod inverse_model;
pub mod kv;
pub mod linalg;
pub mod rng;
pub mod sensor;
pub mod simulation;
pub mod world;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/world.md")]
    mod world {}
    #[doc = include_str!("../../../book/src/sensor.md")]
    mod sensor {}
    #[doc = include_str!("../../../book/src/forward_models.md")]
    mod forward_models {}
    #[doc = include_str!("../../../book/src/inverse_model.md")]
    mod inverse_model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
