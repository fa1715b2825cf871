//! Hearing the shape of a polygonal drum.
//!
//! The crate covers the whole numerical pipeline: random pentagons and their
//! gauge-fixed raster images ([`geometry`]), Dirichlet Laplacian spectra by P1
//! finite elements ([`fem`]), Weyl-law analysis ([`spectral`]), the
//! symmetry-minimised soft Jaccard loss ([`loss`]), persisted datasets
//! ([`dataset`]) and a small encoder-decoder network with latent probes
//! ([`model`]).

pub mod config;
pub mod dataset;
pub mod fem;
pub mod geometry;
pub mod loss;
pub mod model;
pub mod spectral;
