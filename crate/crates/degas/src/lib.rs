//! Differentiable Gaussian-mixture semantics for a loop-free probabilistic
//! programming language.
//!
//! Programs over real variables are evaluated symbolically: every program
//! state is a Gaussian mixture, and conditioning, branching, products and
//! affine maps update the mixture in closed form. Point masses and
//! measure-zero events are replaced by a vanishing Gaussian perturbation of
//! standard deviation `epsilon`, which makes path probabilities and posterior
//! densities differentiable in the program parameters. Gradients are obtained
//! by reverse-mode accumulation on a tape, so likelihood and reachability
//! objectives can be optimized without sampling.
//!
//! Module map:
//! - [`frontend`]: lexer, parser and static validation for the source language
//! - [`cfg`]: control-flow graph construction and path enumeration
//! - [`diff`]: differentiable scalars, gradient tape, parameter store
//! - [`gmix`]: Gaussian-mixture algebra (moments, truncation, conditioning)
//! - [`semantics`]: smoothed and moment-matched program evaluation
//! - [`optimize`]: loss construction and the Adam loop with domain projection
//! - [`oracle`]: Monte-Carlo reference, quadrature, random program generator

// Indexed loops over packed matrices stay as-is, and `!(x > 0.0)`-style
// comparisons are deliberate: NaN must take the failure branch.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cfg;
pub mod diff;
pub mod frontend;
pub mod gmix;
pub mod optimize;
pub mod oracle;
pub mod semantics;
