#pragma once

#include <string>
#include <vector>

#include "blindsr/rng.hpp"

namespace blindsr {

// Gaussian blur kernels and the PCA code space the kernel estimator works in.

enum class KernelFamily { Isotropic, Anisotropic };

struct KernelMeta {
  KernelFamily family = KernelFamily::Isotropic;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  double theta = 0.0;      // radians
  double noise_amp = 0.0;  // multiplicative uniform noise amplitude
};

struct BlurKernel {
  int size = 0;                  // odd
  std::vector<double> weights;   // size*size, row-major, sums to 1
  KernelMeta meta{};

  double at(int i, int j) const { return weights[static_cast<size_t>(i * size + j)]; }
  double sum() const;
};

// Centered Gaussian evaluated at integer offsets, normalized to sum 1.
BlurKernel make_isotropic(int size, double sigma);

// Covariance R(theta) diag(sx^2, sy^2) R(theta)^T; each weight multiplied by
// Uniform(1-a, 1+a), then renormalized.
BlurKernel make_anisotropic(int size, double sigma_x, double sigma_y,
                            double theta, double noise_amp, Rng& rng);

// Eight isotropic 21x21 test kernels, widths 1.8..3.2 in steps of 0.2.
std::vector<BlurKernel> sample_gaussian8();

// Training distributions: isotropic width U[0.2,4.0]; anisotropic axes
// U[0.6,5.0], angle U[-pi,pi], 25% multiplicative noise.
BlurKernel sample_training_kernel(KernelFamily family, int size, Rng& rng);

// Half isotropic / half anisotropic mix used to fit the code space.
std::vector<BlurKernel> pca_training_corpus(int count, int size, uint64_t seed);

struct KernelPCA {
  int size = 0;                 // kernel side length
  int dim = 0;                  // code dimension d
  std::vector<double> mean;     // size^2
  std::vector<double> basis;    // dim x size^2, orthonormal rows
  // per-element round-trip MSE measured on the fit corpus through the
  // clamped decode, with a 5% margin
  double recon_mse_threshold = 0.0;
};

KernelPCA fit_pca(const std::vector<BlurKernel>& kernels, int d);

std::vector<double> encode(const KernelPCA& pca, const BlurKernel& k);
// Sampling-time reconstruction: clamps negatives to zero and renormalizes
// to sum 1, so the result is always a valid kernel.
BlurKernel decode(const KernelPCA& pca, const std::vector<double>& code);
// Raw affine reconstruction mean + B^T code (the orthogonal projection);
// the subspace round-trip whose MSE equals the eigen-spectrum tail.
std::vector<double> decode_linear(const KernelPCA& pca,
                                  const std::vector<double>& code);

// File formats. BDK1: magic, size u16, f64 weights row-major, meta text
// block. BDP1: magic, d u32, size u16, mean, basis, f64 little-endian.
void save_kernel(const std::string& path, const BlurKernel& k);
BlurKernel load_kernel(const std::string& path);
void save_pca(const std::string& path, const KernelPCA& pca);
KernelPCA load_pca(const std::string& path);

// Symmetric eigendecomposition (cyclic Jacobi), eigenvalues descending.
// Exposed for the PCA fit and its tests.
void symmetric_eig(const std::vector<double>& a, int n,
                   std::vector<double>& eigenvalues,
                   std::vector<double>& eigenvectors /* n x n, rows */);

}  // namespace blindsr
