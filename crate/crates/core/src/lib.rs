pub mod config;
pub mod cost;
pub mod crypto;
pub mod lower;
pub mod model;
pub mod upper;
pub mod netsim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/lower-layer.md")]
    mod lower_layer {}
    #[doc = include_str!("../../../book/src/costs.md")]
    mod costs {}
    #[doc = include_str!("../../../book/src/adversary.md")]
    mod adversary {}
    #[doc = include_str!("../../../book/src/upper-layer.md")]
    mod upper_layer {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
