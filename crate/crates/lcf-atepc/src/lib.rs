//! Joint aspect term extraction (ATE) and aspect polarity classification (APC)
//! with a local-context-focus attention mechanism, trainable on CPU.
//!
//! The model runs two independent token encoders over the same input. The
//! global branch feeds a token-level IOB classifier for aspect extraction.
//! The local branch is focused around one targeted aspect using
//! semantic-relative distance (SRD): feature rows of far-away tokens are
//! either masked out (CDM), decayed (CDW), or both variants are fused. Local
//! and global features are then combined and pooled for polarity
//! classification. Both heads train jointly from dual-labeled sentences.
//!
//! Everything is built on a small reverse-mode autodiff substrate in
//! [`numerics`]; no external ML framework is involved.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod heads;
pub mod lcf;
pub mod numerics;
pub mod train;
