//! Convolutional supernets for the macro and micro spaces.
//!
//! Ops follow relu -> conv -> batch norm; separable convolutions are
//! depthwise then pointwise, and inside micro cells they are applied twice.
//! Channel width stays `C` everywhere, restored by 1x1 projections.

mod macro_net;
mod micro_net;

pub use macro_net::{MacroConfig, MacroSupernet, MacroTrace};
pub use micro_net::{CellResult, MicroConfig, MicroSupernet};
