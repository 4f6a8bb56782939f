//! Neural texture compression with BC1-stored latents.
//!
//! A material's nine feature channels are encoded as a stack of four latent
//! textures stored in BC1 blocks, plus a small MLP that maps trilinearly
//! filtered latents back to features.

pub mod bc1;
pub mod container;
pub mod eval;
pub mod mlp;
pub mod pyramid;
pub mod qat;
pub mod tilesim;
pub mod trainer;
