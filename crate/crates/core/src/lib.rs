#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod covering;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod folner;
pub mod group;
pub mod par;
pub mod rng;
pub mod sum;
pub mod torus;
pub mod weights;
