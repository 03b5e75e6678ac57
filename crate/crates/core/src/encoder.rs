//! One front end over both embedding families, with batched evaluation.

use std::str::FromStr;

use crate::dfs::{DfsEmbedding, EmbeddingSpec};
use crate::error::Result;
use crate::geom::SpherePoint;
use crate::matrix::Matrix;
use crate::sphharm::{compile_basis, CompiledBasis};

#[derive(Debug, Clone)]
enum Backend {
    Fourier(DfsEmbedding),
    Harmonics(CompiledBasis),
}

#[derive(Debug, Clone)]
pub struct PositionalEncoder {
    spec: EmbeddingSpec,
    backend: Backend,
}

impl PositionalEncoder {
    pub fn new(spec: &EmbeddingSpec) -> Result<Self> {
        let backend = match spec {
            EmbeddingSpec::SphericalHarmonics { degree } => {
                Backend::Harmonics(compile_basis(*degree)?)
            }
            other => Backend::Fourier(DfsEmbedding::new(other)?),
        };
        Ok(Self {
            spec: *spec,
            backend,
        })
    }

    pub fn spec(&self) -> &EmbeddingSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Fourier(e) => e.dim(),
            Backend::Harmonics(b) => b.dim(),
        }
    }

    pub fn embed(&self, p: &SpherePoint) -> Vec<f64> {
        match &self.backend {
            Backend::Fourier(e) => e.embed(p),
            Backend::Harmonics(b) => b.embed(p),
        }
    }

    fn embed_rows(&self, points: &[SpherePoint], out: &mut [f64]) {
        let d = self.dim();
        match &self.backend {
            Backend::Fourier(e) => {
                let mut buf = Vec::with_capacity(d);
                for (p, row) in points.iter().zip(out.chunks_exact_mut(d)) {
                    buf.clear();
                    e.embed_into(p, &mut buf);
                    row.copy_from_slice(&buf);
                }
            }
            Backend::Harmonics(b) => {
                for (p, row) in points.iter().zip(out.chunks_exact_mut(d)) {
                    b.embed_into(p, row);
                }
            }
        }
    }

    /// Embeds every point into one row of the result, splitting the work
    /// over [`worker_threads`] threads.
    pub fn embed_batch(&self, points: &[SpherePoint]) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(points.len(), d);
        let threads = worker_threads().min(points.len().div_ceil(256)).max(1);
        if threads == 1 {
            self.embed_rows(points, out.data_mut());
            return out;
        }
        let per = points.len().div_ceil(threads);
        std::thread::scope(|scope| {
            for (pts, rows) in points.chunks(per).zip(out.data_mut().chunks_mut(per * d)) {
                scope.spawn(move || self.embed_rows(pts, rows));
            }
        });
        out
    }
}

impl FromStr for PositionalEncoder {
    type Err = crate::error::GeoError;

    fn from_str(s: &str) -> Result<Self> {
        PositionalEncoder::new(&s.parse()?)
    }
}

/// Thread budget for evaluation: `GEOHARM_THREADS` if set to a positive
/// integer, else the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("GEOHARM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::uniform_sphere_sample;

    #[test]
    fn batch_rows_match_single_embeddings() {
        let pts = uniform_sphere_sample(700, 3).unwrap();
        for spec in ["sh:L=7", "spherem+:S=4,rmin=20,rmax=180", "direct"] {
            let enc: PositionalEncoder = spec.parse().unwrap();
            let m = enc.embed_batch(&pts);
            assert_eq!((m.rows(), m.cols()), (700, enc.dim()));
            for (i, p) in pts.iter().enumerate() {
                assert_eq!(m.row(i), enc.embed(p).as_slice());
            }
        }
    }
}
